//! Trajectory prediction.
//!
//! Encodes each tracked object's recent motion (six frames at 0.4 s) into
//! one token via sinusoidal positional mapping, runs a pre-norm
//! transformer encoder in which objects attend to each other, and emits a
//! Gaussian (mean, variance) per coordinate for each of K future frames.
//! Training is full-batch gradient descent on the squared-error loss with
//! squared-residual variance matching, with gradients supplied by the
//! reverse-mode tape in [`tensor`].

mod model;
mod tensor;

pub use model::{
    read_model, write_model, EncoderConfig, ForwardGraph, ModelParameters, HISTORY_FRAMES,
};
pub use tensor::{Graph, NodeId};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};

#[derive(Debug, thiserror::Error)]
pub enum PredictError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid model file: {0}")]
    InvalidModel(String),

    #[error("training diverged (non-finite loss) at step {step}")]
    Diverged { step: usize },

    #[error("line {line}: {reason}")]
    ParseError { line: usize, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Sinusoidal encoding of one scalar: the identity followed by L
/// octave-spaced sin/cos pairs, `(c, sin(2⁰πc), cos(2⁰πc), …)`, giving
/// length 2L+1.
pub fn positional_map(c: f64, bands: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * bands + 1);
    out.push(c);
    for b in 0..bands {
        let arg = (1u64 << b) as f64 * std::f64::consts::PI * c;
        out.push(arg.sin());
        out.push(arg.cos());
    }
    out
}

/// Recent motion of one object: exactly six ordered positions (oldest
/// first) in plane meters. Objects observed for fewer than six frames are
/// zero-filled at the front and marked invalid; invalid objects take no
/// part in prediction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryHistory {
    pub id: u64,
    pub positions: [(f64, f64); HISTORY_FRAMES],
    pub valid: bool,
}

impl TrajectoryHistory {
    /// Builds a history from however many recent positions exist
    /// (oldest first), keeping the last six.
    pub fn from_recent(id: u64, positions: &[(f64, f64)]) -> Self {
        let mut buf = [(0.0, 0.0); HISTORY_FRAMES];
        let n = positions.len().min(HISTORY_FRAMES);
        let src = &positions[positions.len() - n..];
        buf[HISTORY_FRAMES - n..].copy_from_slice(src);
        TrajectoryHistory { id, positions: buf, valid: positions.len() >= HISTORY_FRAMES }
    }

    fn token(&self, config: &EncoderConfig) -> Vec<f64> {
        let mut token = Vec::with_capacity(config.token_dim());
        for &(e, n) in &self.positions {
            token.extend(positional_map(e / config.norm_radius_m, config.pos_bands));
            token.extend(positional_map(n / config.norm_radius_m, config.pos_bands));
        }
        token
    }
}

/// Per-object forecast: mean and variance per coordinate for frames
/// `1..=K` ahead, in meters and m².
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectPrediction {
    pub id: u64,
    pub means: Vec<(f64, f64)>,
    pub variances: Vec<(f64, f64)>,
}

fn token_matrix(histories: &[&TrajectoryHistory], config: &EncoderConfig) -> DMatrix<f64> {
    let rows: Vec<Vec<f64>> = histories.iter().map(|h| h.token(config)).collect();
    DMatrix::from_fn(rows.len(), config.token_dim(), |r, c| rows[r][c])
}

fn read_outputs(
    g: &Graph,
    fg: &ForwardGraph,
    ids: &[u64],
    horizon: usize,
) -> Vec<ObjectPrediction> {
    let means = g.value(fg.means);
    let vars = g.value(fg.variances);
    ids.iter()
        .enumerate()
        .map(|(row, &id)| ObjectPrediction {
            id,
            means: (0..horizon).map(|k| (means[(row, 2 * k)], means[(row, 2 * k + 1)])).collect(),
            variances: (0..horizon).map(|k| (vars[(row, 2 * k)], vars[(row, 2 * k + 1)])).collect(),
        })
        .collect()
}

/// Runs the encoder over all valid histories as one scene. Invalid
/// (short-history) objects are excluded and produce no output.
pub fn predict(
    histories: &[TrajectoryHistory],
    params: &ModelParameters,
) -> Result<Vec<ObjectPrediction>, PredictError> {
    let valid: Vec<&TrajectoryHistory> = histories.iter().filter(|h| h.valid).collect();
    if valid.is_empty() {
        return Ok(Vec::new());
    }
    let tokens = token_matrix(&valid, &params.config);
    let mut g = Graph::new();
    let fg = params.forward(&mut g, tokens, &vec![0; valid.len()])?;
    let ids: Vec<u64> = valid.iter().map(|h| h.id).collect();
    Ok(read_outputs(&g, &fg, &ids, params.config.horizon))
}

/// Loss terms, each averaged over objects and frames.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    /// Squared position error.
    pub mean_term: f64,
    /// Squared mismatch between σ² and the squared residual, east.
    pub var_term_east: f64,
    /// Same, north.
    pub var_term_north: f64,
}

/// Evaluates the training loss on finished predictions: per object and
/// frame, `(x−μx)² + (y−μy)² + ((x−μx)²−σx²)² + ((y−μy)²−σy²)²`.
pub fn loss(
    predictions: &[ObjectPrediction],
    ground_truth: &[Vec<(f64, f64)>],
) -> Result<LossBreakdown, PredictError> {
    if predictions.len() != ground_truth.len() {
        return Err(PredictError::ShapeMismatch(format!(
            "{} predictions vs {} ground-truth tracks",
            predictions.len(),
            ground_truth.len()
        )));
    }
    let mut mean_term = 0.0;
    let mut var_e = 0.0;
    let mut var_n = 0.0;
    let mut count = 0usize;
    for (p, gt) in predictions.iter().zip(ground_truth) {
        if p.means.len() != gt.len() || p.variances.len() != gt.len() {
            return Err(PredictError::ShapeMismatch(format!(
                "object {}: horizon {} vs ground truth {}",
                p.id,
                p.means.len(),
                gt.len()
            )));
        }
        for k in 0..gt.len() {
            let re = gt[k].0 - p.means[k].0;
            let rn = gt[k].1 - p.means[k].1;
            mean_term += re * re + rn * rn;
            var_e += (re * re - p.variances[k].0).powi(2);
            var_n += (rn * rn - p.variances[k].1).powi(2);
            count += 1;
        }
    }
    if count == 0 {
        return Err(PredictError::ShapeMismatch("loss over an empty set".into()));
    }
    let c = count as f64;
    Ok(LossBreakdown {
        total: (mean_term + var_e + var_n) / c,
        mean_term: mean_term / c,
        var_term_east: var_e / c,
        var_term_north: var_n / c,
    })
}

/// One supervised example: six observed frames and K future frames.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub history: [(f64, f64); HISTORY_FRAMES],
    pub future: Vec<(f64, f64)>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ExampleLine {
    history: Vec<[f64; 2]>,
    future: Vec<[f64; 2]>,
}

/// Reads the NDJSON training set, requiring six history frames and
/// `horizon` future frames per line.
pub fn read_training_set(
    reader: impl BufRead,
    horizon: usize,
) -> Result<Vec<TrainingExample>, PredictError> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: ExampleLine = serde_json::from_str(&line)
            .map_err(|e| PredictError::ParseError { line: line_no, reason: e.to_string() })?;
        if parsed.history.len() != HISTORY_FRAMES {
            return Err(PredictError::ParseError {
                line: line_no,
                reason: format!("history has {} frames, need {HISTORY_FRAMES}", parsed.history.len()),
            });
        }
        if parsed.future.len() != horizon {
            return Err(PredictError::ParseError {
                line: line_no,
                reason: format!("future has {} frames, need {horizon}", parsed.future.len()),
            });
        }
        let mut history = [(0.0, 0.0); HISTORY_FRAMES];
        for (h, src) in history.iter_mut().zip(&parsed.history) {
            *h = (src[0], src[1]);
        }
        out.push(TrainingExample {
            history,
            future: parsed.future.iter().map(|p| (p[0], p[1])).collect(),
        });
    }
    Ok(out)
}

pub fn write_training_set(
    examples: &[TrainingExample],
    mut w: impl Write,
) -> Result<(), PredictError> {
    for ex in examples {
        let line = ExampleLine {
            history: ex.history.iter().map(|&(e, n)| [e, n]).collect(),
            future: ex.future.iter().map(|&(e, n)| [e, n]).collect(),
        };
        serde_json::to_writer(&mut w, &line)
            .map_err(|e| PredictError::ParseError { line: 0, reason: e.to_string() })?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Gradient-descent settings.
#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub lr: f64,
    pub steps: usize,
    pub seed: u64,
    /// Global gradient-norm ceiling.
    pub clip_norm: f64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions { lr: 0.05, steps: 200, seed: 0, clip_norm: 5.0 }
    }
}

/// Trained parameters plus the loss after initialization and after every
/// step (so `loss_curve.len() == steps + 1`).
#[derive(Debug, Clone)]
pub struct TrainReport {
    pub params: ModelParameters,
    pub loss_curve: Vec<f64>,
}

/// Builds the full-batch loss graph for `tokens`/`gt` and returns the
/// loss node.
fn loss_graph(g: &mut Graph, fg: &ForwardGraph, gt: NodeId, per_frame_count: f64) -> NodeId {
    let res = g.sub(gt, fg.means);
    let res2 = g.square(res);
    let vres = g.sub(res2, fg.variances);
    let vres2 = g.square(vres);
    let both = g.add(res2, vres2);
    let total = g.sum_all(both);
    g.scale(total, 1.0 / per_frame_count)
}

/// Full-batch gradient descent with a guarded step: if an update would
/// raise the loss (or make it non-finite) the step is halved until it
/// improves, keeping the recorded curve non-increasing. Each example is
/// its own attention scene. Deterministic for a given seed.
pub fn train(
    dataset: &[TrainingExample],
    config: EncoderConfig,
    opts: &TrainOptions,
) -> Result<TrainReport, PredictError> {
    if dataset.is_empty() {
        return Err(PredictError::ShapeMismatch("training set is empty".into()));
    }
    for (i, ex) in dataset.iter().enumerate() {
        if ex.future.len() != config.horizon {
            return Err(PredictError::ShapeMismatch(format!(
                "example {i}: future has {} frames, horizon is {}",
                ex.future.len(),
                config.horizon
            )));
        }
    }

    let histories: Vec<TrajectoryHistory> = dataset
        .iter()
        .enumerate()
        .map(|(i, ex)| TrajectoryHistory { id: i as u64, positions: ex.history, valid: true })
        .collect();
    let refs: Vec<&TrajectoryHistory> = histories.iter().collect();
    let tokens = token_matrix(&refs, &config);
    let scene_of: Vec<usize> = (0..dataset.len()).collect();
    let n = dataset.len();
    let k = config.horizon;
    let gt_mat = DMatrix::from_fn(n, 2 * k, |r, c| {
        let (e, nn) = dataset[r].future[c / 2];
        if c % 2 == 0 {
            e
        } else {
            nn
        }
    });
    let per_frame = (n * k) as f64;

    let eval_loss = |params: &ModelParameters| -> Result<f64, PredictError> {
        let mut g = Graph::new();
        let fg = params.forward(&mut g, tokens.clone(), &scene_of)?;
        let gt = g.leaf(gt_mat.clone());
        let l = loss_graph(&mut g, &fg, gt, per_frame);
        Ok(g.value(l)[(0, 0)])
    };

    let mut params = ModelParameters::init(config, opts.seed)?;
    let mut current = eval_loss(&params)?;
    if !current.is_finite() {
        return Err(PredictError::Diverged { step: 0 });
    }
    let mut curve = vec![current];

    for step in 0..opts.steps {
        let mut g = Graph::new();
        let fg = params.forward(&mut g, tokens.clone(), &scene_of)?;
        let gt = g.leaf(gt_mat.clone());
        let l = loss_graph(&mut g, &fg, gt, per_frame);
        g.backward(l);

        let grads: Vec<DMatrix<f64>> =
            fg.param_leaves.iter().map(|&id| g.grad(id).clone()).collect();
        let norm: f64 = grads.iter().map(|gr| gr.iter().map(|&e| e * e).sum::<f64>()).sum::<f64>().sqrt();
        let clip = if norm > opts.clip_norm { opts.clip_norm / norm } else { 1.0 };

        let mut lr = opts.lr * clip;
        let mut accepted = false;
        for _ in 0..30 {
            let mut trial = params.clone();
            for (t, gr) in trial.tensors.iter_mut().zip(&grads) {
                *t -= gr * lr;
            }
            let next = eval_loss(&trial)?;
            if next.is_finite() && next <= current {
                params = trial;
                current = next;
                accepted = true;
                break;
            }
            lr /= 2.0;
        }
        if !accepted && !current.is_finite() {
            return Err(PredictError::Diverged { step });
        }
        curve.push(current);
    }

    Ok(TrainReport { params, loss_curve: curve })
}

/// Final-frame displacement split into cross-track (lateral) and
/// along-track (longitudinal) components.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdeResult {
    pub lat_m: f64,
    pub lon_m: f64,
    /// Ground truth was near-stationary at the final frame, so the errors
    /// are raw |north| / |east| instead of track-relative.
    pub degenerate_heading: bool,
}

/// Speed below which the ground-truth heading is unusable.
const MIN_HEADING_SPEED_MPS: f64 = 0.1;

/// Displacement between prediction and ground truth at future frame `k`
/// (1-based), decomposed against the ground-truth heading there. The
/// heading comes from the ground truth's final step (`gt[k−1] − gt[k−2]`,
/// or the last observed position when k = 1).
pub fn fde(
    pred_means: &[(f64, f64)],
    gt_future: &[(f64, f64)],
    k: usize,
    last_observed: (f64, f64),
    frame_interval_s: f64,
) -> Result<FdeResult, PredictError> {
    if k == 0 || k > pred_means.len() || k > gt_future.len() {
        return Err(PredictError::ShapeMismatch(format!(
            "frame {k} outside horizon (pred {}, gt {})",
            pred_means.len(),
            gt_future.len()
        )));
    }
    let target = gt_future[k - 1];
    let prev = if k >= 2 { gt_future[k - 2] } else { last_observed };
    let (de, dn) = (target.0 - prev.0, target.1 - prev.1);
    let err = (pred_means[k - 1].0 - target.0, pred_means[k - 1].1 - target.1);

    let step_len = de.hypot(dn);
    if step_len / frame_interval_s < MIN_HEADING_SPEED_MPS {
        return Ok(FdeResult { lat_m: err.1.abs(), lon_m: err.0.abs(), degenerate_heading: true });
    }
    let along = (de / step_len, dn / step_len);
    let cross = (-along.1, along.0);
    Ok(FdeResult {
        lat_m: (err.0 * cross.0 + err.1 * cross.1).abs(),
        lon_m: (err.0 * along.0 + err.1 * along.1).abs(),
        degenerate_heading: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn positional_map_matches_declared_layout() {
        assert_eq!(positional_map(0.7, 0), vec![0.7]);
        let z = positional_map(0.0, 2);
        assert_eq!(z, vec![0.0, 0.0, 1.0, 0.0, 1.0]);
        assert_eq!(positional_map(0.3, 4).len(), 9);
        // Octave spacing: band b uses frequency 2^b · π.
        let c = 0.23;
        let m = positional_map(c, 3);
        for b in 0..3 {
            let arg = (1 << b) as f64 * std::f64::consts::PI * c;
            assert_abs_diff_eq!(m[1 + 2 * b], arg.sin(), epsilon = 1e-15);
            assert_abs_diff_eq!(m[2 + 2 * b], arg.cos(), epsilon = 1e-15);
        }
    }

    #[test]
    fn short_histories_are_zero_filled_and_invalid() {
        let h = TrajectoryHistory::from_recent(4, &[(1.0, 2.0), (3.0, 4.0)]);
        assert!(!h.valid);
        assert_eq!(h.positions[..4], [(0.0, 0.0); 4]);
        assert_eq!(h.positions[4..], [(1.0, 2.0), (3.0, 4.0)]);

        let full: Vec<(f64, f64)> = (0..9).map(|i| (i as f64, 0.0)).collect();
        let h = TrajectoryHistory::from_recent(5, &full);
        assert!(h.valid);
        assert_eq!(h.positions[0], (3.0, 0.0));
        assert_eq!(h.positions[5], (8.0, 0.0));
    }

    #[test]
    fn loss_matches_the_worked_example() {
        let pred = [ObjectPrediction {
            id: 0,
            means: vec![(0.0, 0.0)],
            variances: vec![(1.0, 1.0)],
        }];
        let gt = vec![vec![(1.0, 2.0)]];
        let l = loss(&pred, &gt).unwrap();
        assert_abs_diff_eq!(l.mean_term, 5.0, epsilon = 1e-15);
        assert_abs_diff_eq!(l.var_term_east, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(l.var_term_north, 9.0, epsilon = 1e-15);
        assert_abs_diff_eq!(l.total, 14.0, epsilon = 1e-15);
    }

    #[test]
    fn exact_prediction_with_vanishing_variance_has_zero_loss() {
        let pred = [ObjectPrediction {
            id: 0,
            means: vec![(3.0, -4.0), (5.0, 1.0)],
            variances: vec![(0.0, 0.0), (0.0, 0.0)],
        }];
        let gt = vec![vec![(3.0, -4.0), (5.0, 1.0)]];
        assert_eq!(loss(&pred, &gt).unwrap().total, 0.0);
    }

    #[test]
    fn variance_loss_is_stationary_at_the_squared_residual() {
        let residual2 = 2.89;
        let term = |s: f64| (residual2 - s).powi(2);
        let eps = 1e-4;
        assert!(term(residual2) < term(residual2 - eps));
        assert!(term(residual2) < term(residual2 + eps));
        assert_abs_diff_eq!(
            (term(residual2 + eps) - term(residual2 - eps)) / (2.0 * eps),
            0.0,
            epsilon = 1e-9
        );
    }

    fn random_history(rng: &mut ChaCha8Rng, id: u64) -> TrajectoryHistory {
        let mut positions = [(0.0, 0.0); HISTORY_FRAMES];
        for p in &mut positions {
            *p = (rng.random_range(-30.0..30.0), rng.random_range(-30.0..30.0));
        }
        TrajectoryHistory { id, positions, valid: true }
    }

    #[test]
    fn every_parameter_gradient_matches_finite_differences() {
        let config = EncoderConfig::toy();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let histories = [random_history(&mut rng, 0), random_history(&mut rng, 1)];
        let refs: Vec<&TrajectoryHistory> = histories.iter().collect();
        let tokens = token_matrix(&refs, &config);
        let gt = DMatrix::from_fn(2, 2 * config.horizon, |_, _| rng.random_range(-5.0..5.0));
        let scene = vec![0, 0];

        let params = ModelParameters::init(config.clone(), 3).unwrap();
        let eval = |p: &ModelParameters| -> f64 {
            let mut g = Graph::new();
            let fg = p.forward(&mut g, tokens.clone(), &scene).unwrap();
            let gtn = g.leaf(gt.clone());
            let l = loss_graph(&mut g, &fg, gtn, (2 * config.horizon) as f64 / 2.0);
            g.value(l)[(0, 0)]
        };

        let mut g = Graph::new();
        let fg = params.forward(&mut g, tokens.clone(), &scene).unwrap();
        let gtn = g.leaf(gt.clone());
        let l = loss_graph(&mut g, &fg, gtn, (2 * config.horizon) as f64 / 2.0);
        g.backward(l);

        let h = 1e-4;
        let mut checked = 0usize;
        for (ti, leaf) in fg.param_leaves.iter().enumerate() {
            let shape = params.tensors[ti].shape();
            for r in 0..shape.0 {
                for c in 0..shape.1 {
                    let mut plus = params.clone();
                    plus.tensors[ti][(r, c)] += h;
                    let mut minus = params.clone();
                    minus.tensors[ti][(r, c)] -= h;
                    let fd = (eval(&plus) - eval(&minus)) / (2.0 * h);
                    let ad = g.grad(*leaf)[(r, c)];
                    let denom = fd.abs().max(ad.abs()).max(1.0);
                    assert!(
                        (fd - ad).abs() / denom < 1e-4,
                        "tensor {ti} ({},{}) entry ({r},{c}): fd {fd} vs ad {ad}",
                        shape.0,
                        shape.1
                    );
                    checked += 1;
                }
            }
        }
        assert!(checked > 3000, "checked only {checked} parameters");
    }

    #[test]
    fn object_order_permutes_outputs_without_changing_them() {
        let config = EncoderConfig::toy();
        let params = ModelParameters::init(config, 7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let a = random_history(&mut rng, 10);
        let b = random_history(&mut rng, 11);
        let c = random_history(&mut rng, 12);

        let fwd = predict(&[a, b, c], &params).unwrap();
        let rev = predict(&[c, a, b], &params).unwrap();
        let by_id = |v: &[ObjectPrediction], id: u64| -> ObjectPrediction {
            v.iter().find(|p| p.id == id).unwrap().clone()
        };
        for id in [10, 11, 12] {
            let x = by_id(&fwd, id);
            let y = by_id(&rev, id);
            for (m1, m2) in x.means.iter().zip(&y.means) {
                assert_abs_diff_eq!(m1.0, m2.0, epsilon = 1e-9);
                assert_abs_diff_eq!(m1.1, m2.1, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn zero_weight_mean_head_emits_its_bias_everywhere() {
        let config = EncoderConfig::toy();
        let mut params = ModelParameters::init(config.clone(), 7).unwrap();
        params.tensor_mut("w_mean").unwrap().fill(0.0);
        let bias: Vec<f64> = (0..2 * config.horizon).map(|i| 0.5 + i as f64).collect();
        {
            let b = params.tensor_mut("b_mean").unwrap();
            for (i, v) in bias.iter().enumerate() {
                b[(0, i)] = *v;
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let out = predict(&[random_history(&mut rng, 1), random_history(&mut rng, 2)], &params)
            .unwrap();
        for p in out {
            for (k, &(e, n)) in p.means.iter().enumerate() {
                assert_eq!(e, bias[2 * k]);
                assert_eq!(n, bias[2 * k + 1]);
            }
        }
    }

    #[test]
    fn invalid_objects_do_not_perturb_valid_ones() {
        let config = EncoderConfig::toy();
        let params = ModelParameters::init(config, 7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let valid = random_history(&mut rng, 1);
        let masked = TrajectoryHistory::from_recent(2, &[(5.0, 5.0)]);
        assert!(!masked.valid);

        let alone = predict(&[valid], &params).unwrap();
        let with_masked = predict(&[valid, masked], &params).unwrap();
        assert_eq!(alone, with_masked);
        assert_eq!(with_masked.len(), 1);
    }

    /// Constant-velocity examples with observation noise: the model sees
    /// noisy histories, ground truth futures stay clean.
    fn cv_dataset(
        rng: &mut ChaCha8Rng,
        count: usize,
        horizon: usize,
        noise_sigma: f64,
    ) -> Vec<TrainingExample> {
        let gauss = Normal::new(0.0, noise_sigma.max(f64::MIN_POSITIVE)).unwrap();
        (0..count)
            .map(|_| {
                let speed = rng.random_range(2.0..12.0);
                let heading = rng.random_range(0.0..std::f64::consts::TAU);
                let (ve, vn) = (
                    speed * crate::FRAME_INTERVAL_S * heading.cos(),
                    speed * crate::FRAME_INTERVAL_S * heading.sin(),
                );
                let start = (rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0));
                let pos = |k: i64| (start.0 + ve * k as f64, start.1 + vn * k as f64);
                let mut history = [(0.0, 0.0); HISTORY_FRAMES];
                for (i, h) in history.iter_mut().enumerate() {
                    let (e, n) = pos(i as i64 - 5);
                    *h = (e + gauss.sample(rng), n + gauss.sample(rng));
                }
                let future = (1..=horizon as i64).map(pos).collect();
                TrainingExample { history, future }
            })
            .collect()
    }

    fn fde_at_horizon(pred: &[(f64, f64)], ex: &TrainingExample) -> f64 {
        let k = ex.future.len();
        let r = fde(pred, &ex.future, k, ex.history[HISTORY_FRAMES - 1], crate::FRAME_INTERVAL_S)
            .unwrap();
        r.lat_m.hypot(r.lon_m)
    }

    #[test]
    fn training_beats_baselines_on_constant_velocity_traffic() {
        let config = EncoderConfig::toy();
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        let train_set = cv_dataset(&mut rng, 192, config.horizon, 0.3);
        let eval_set = cv_dataset(&mut rng, 64, config.horizon, 0.3);

        let opts = TrainOptions { lr: 0.05, steps: 350, seed: 1, clip_norm: 5.0 };
        let report = train(&train_set, config.clone(), &opts).unwrap();
        let curve = &report.loss_curve;
        assert!(curve.last().unwrap() < &curve[0], "loss did not improve: {curve:?}");
        for w in curve.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "loss increased within a step: {} -> {}", w[0], w[1]);
        }

        let mut model_sum = 0.0;
        let mut const_pos_sum = 0.0;
        let mut const_vel_sum = 0.0;
        for ex in &eval_set {
            let hist = TrajectoryHistory { id: 0, positions: ex.history, valid: true };
            let out = predict(&[hist], &report.params).unwrap();
            model_sum += fde_at_horizon(&out[0].means, ex);

            let last = ex.history[HISTORY_FRAMES - 1];
            let const_pos: Vec<(f64, f64)> = vec![last; config.horizon];
            const_pos_sum += fde_at_horizon(&const_pos, ex);

            let prev = ex.history[HISTORY_FRAMES - 2];
            let v = (last.0 - prev.0, last.1 - prev.1);
            let const_vel: Vec<(f64, f64)> = (1..=config.horizon as i64)
                .map(|k| (last.0 + v.0 * k as f64, last.1 + v.1 * k as f64))
                .collect();
            const_vel_sum += fde_at_horizon(&const_vel, ex);
        }
        let n = eval_set.len() as f64;
        let (model_fde, const_pos_fde, const_vel_fde) =
            (model_sum / n, const_pos_sum / n, const_vel_sum / n);
        assert!(
            model_fde <= 0.5 * const_pos_fde,
            "model {model_fde:.3} m vs constant-position {const_pos_fde:.3} m"
        );
        assert!(
            model_fde <= 2.0 * const_vel_fde,
            "model {model_fde:.3} m vs constant-velocity {const_vel_fde:.3} m"
        );
    }

    #[test]
    fn training_is_deterministic_per_seed() {
        let config = EncoderConfig::toy();
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        let data = cv_dataset(&mut rng, 24, config.horizon, 0.2);
        let opts = TrainOptions { lr: 0.05, steps: 25, seed: 9, clip_norm: 5.0 };
        let a = train(&data, config.clone(), &opts).unwrap();
        let b = train(&data, config.clone(), &opts).unwrap();
        assert_eq!(a.loss_curve.last().unwrap().to_bits(), b.loss_curve.last().unwrap().to_bits());
        assert_eq!(a.params, b.params);

        let c = train(&data, config, &TrainOptions { seed: 10, ..opts }).unwrap();
        assert_ne!(a.loss_curve.last().unwrap().to_bits(), c.loss_curve.last().unwrap().to_bits());
    }

    #[test]
    fn fde_decomposes_against_the_final_heading() {
        // Exact prediction.
        let gt = vec![(1.0, 0.0), (2.0, 0.0)];
        let r = fde(&gt.clone(), &gt, 2, (0.0, 0.0), 0.4).unwrap();
        assert_eq!((r.lat_m, r.lon_m, r.degenerate_heading), (0.0, 0.0, false));

        // Heading due east; offset 0.5 east, 1.0 north.
        let pred = vec![(1.0, 0.0), (2.5, 1.0)];
        let r = fde(&pred, &gt, 2, (0.0, 0.0), 0.4).unwrap();
        assert_abs_diff_eq!(r.lat_m, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.lon_m, 0.5, epsilon = 1e-12);

        // Rotation preserves the norm for arbitrary headings.
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..200 {
            let gt = vec![
                (rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)),
                (rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)),
            ];
            let pred = vec![
                (0.0, 0.0),
                (gt[1].0 + rng.random_range(-2.0..2.0), gt[1].1 + rng.random_range(-2.0..2.0)),
            ];
            let r = fde(&pred, &gt, 2, (0.0, 0.0), 0.4).unwrap();
            let euclid = (pred[1].0 - gt[1].0).hypot(pred[1].1 - gt[1].1);
            if !r.degenerate_heading {
                assert_abs_diff_eq!(r.lat_m.hypot(r.lon_m), euclid, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn stationary_ground_truth_flags_degenerate_heading() {
        let gt = vec![(3.0, 3.0), (3.0, 3.0 + 0.01)];
        let pred = vec![(3.0, 3.0), (3.4, 2.8)];
        let r = fde(&pred, &gt, 2, (3.0, 3.0), 0.4).unwrap();
        assert!(r.degenerate_heading);
        assert_abs_diff_eq!(r.lon_m, 0.4, epsilon = 1e-12);
        assert_abs_diff_eq!(r.lat_m, 0.21, epsilon = 1e-12);
    }

    #[test]
    fn out_of_horizon_frame_is_rejected() {
        let gt = vec![(1.0, 0.0)];
        let pred = vec![(1.0, 0.0)];
        assert!(matches!(
            fde(&pred, &gt, 2, (0.0, 0.0), 0.4),
            Err(PredictError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn training_set_round_trips_and_validates() {
        let mut rng = ChaCha8Rng::seed_from_u64(60);
        let data = cv_dataset(&mut rng, 5, 3, 0.1);
        let mut buf = Vec::new();
        write_training_set(&data, &mut buf).unwrap();
        let back = read_training_set(buf.as_slice(), 3).unwrap();
        assert_eq!(back, data);

        let err = read_training_set(buf.as_slice(), 2).unwrap_err();
        assert!(matches!(err, PredictError::ParseError { line: 1, .. }));

        let bad = r#"{"history":[[0,0]],"future":[[1,1],[2,2],[3,3]]}"#;
        let err = read_training_set(bad.as_bytes(), 3).unwrap_err();
        assert!(matches!(err, PredictError::ParseError { line: 1, .. }));
    }
}
