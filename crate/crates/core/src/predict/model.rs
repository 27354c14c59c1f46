//! Trajectory encoder: parameter layout, forward graph, and model file.

use super::tensor::{Graph, NodeId};
use super::PredictError;
use nalgebra::DMatrix;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::io::{Read, Write};

/// Frames of history each object token encodes.
pub const HISTORY_FRAMES: usize = 6;

/// Architecture and horizon of the trajectory encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub model_dim: usize,
    pub layers: usize,
    pub heads: usize,
    /// L, the number of sin/cos frequency bands per coordinate scalar
    /// (each scalar encodes to 2L+1 values).
    pub pos_bands: usize,
    /// K, how many future frames each prediction covers.
    pub horizon: usize,
    /// Seconds between consecutive frames.
    pub frame_interval_s: f64,
    /// Radius used to normalize coordinates to roughly [−1, 1].
    pub norm_radius_m: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            model_dim: 256,
            layers: 4,
            heads: 8,
            pos_bands: 4,
            horizon: 3,
            frame_interval_s: crate::FRAME_INTERVAL_S,
            norm_radius_m: crate::ROI_RADIUS_M,
        }
    }
}

impl EncoderConfig {
    /// Small configuration for gradient checks and fast tests.
    pub fn toy() -> Self {
        EncoderConfig {
            model_dim: 16,
            layers: 1,
            heads: 2,
            pos_bands: 1,
            horizon: 2,
            ..EncoderConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), PredictError> {
        if self.model_dim == 0 || self.heads == 0 || self.model_dim % self.heads != 0 {
            return Err(PredictError::ShapeMismatch(format!(
                "model_dim {} must be a positive multiple of heads {}",
                self.model_dim, self.heads
            )));
        }
        if self.horizon == 0 {
            return Err(PredictError::ShapeMismatch("horizon must be ≥ 1".into()));
        }
        if !(self.frame_interval_s > 0.0) || !(self.norm_radius_m > 0.0) {
            return Err(PredictError::ShapeMismatch(
                "frame interval and normalization radius must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Encoded length of one coordinate scalar.
    pub fn scalar_len(&self) -> usize {
        2 * self.pos_bands + 1
    }

    /// Width of one object token: 6 frames × 2 coordinates, each encoded.
    pub fn token_dim(&self) -> usize {
        HISTORY_FRAMES * 2 * self.scalar_len()
    }

    fn mlp_dim(&self) -> usize {
        4 * self.model_dim
    }

    /// Tensor names and shapes in serialization order.
    pub fn tensor_shapes(&self) -> Vec<(String, usize, usize)> {
        let d = self.model_dim;
        let m = self.mlp_dim();
        let out = 2 * self.horizon;
        let mut shapes = vec![
            ("w_in".to_string(), self.token_dim(), d),
            ("b_in".to_string(), 1, d),
        ];
        for l in 0..self.layers {
            for (name, rows, cols) in [
                ("ln1_gamma", 1, d),
                ("ln1_beta", 1, d),
                ("w_q", d, d),
                ("b_q", 1, d),
                ("w_k", d, d),
                ("b_k", 1, d),
                ("w_v", d, d),
                ("b_v", 1, d),
                ("w_o", d, d),
                ("b_o", 1, d),
                ("ln2_gamma", 1, d),
                ("ln2_beta", 1, d),
                ("w_mlp1", d, m),
                ("b_mlp1", 1, m),
                ("w_mlp2", m, d),
                ("b_mlp2", 1, d),
            ] {
                shapes.push((format!("layer{l}.{name}"), rows, cols));
            }
        }
        shapes.push(("ln_f_gamma".to_string(), 1, d));
        shapes.push(("ln_f_beta".to_string(), 1, d));
        shapes.push(("w_mean".to_string(), d, out));
        shapes.push(("b_mean".to_string(), 1, out));
        shapes.push(("w_var".to_string(), d, out));
        shapes.push(("b_var".to_string(), 1, out));
        shapes
    }
}

/// All learnable tensors, stored in the order declared by
/// [`EncoderConfig::tensor_shapes`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParameters {
    pub config: EncoderConfig,
    pub tensors: Vec<DMatrix<f64>>,
}

/// Indices of the leaf nodes for each parameter tensor plus the outputs
/// of one recorded forward pass.
pub struct ForwardGraph {
    pub param_leaves: Vec<NodeId>,
    pub means: NodeId,
    pub variances: NodeId,
}

impl ModelParameters {
    /// Seeded initialization: uniform Xavier weights, zero biases, unit
    /// norm scales.
    pub fn init(config: EncoderConfig, seed: u64) -> Result<Self, PredictError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = config
            .tensor_shapes()
            .iter()
            .map(|(name, rows, cols)| {
                if name.ends_with("gamma") {
                    DMatrix::from_element(*rows, *cols, 1.0)
                } else if name.contains(".b_") || name.starts_with("b_") || name.ends_with("beta") {
                    DMatrix::zeros(*rows, *cols)
                } else {
                    let bound = (6.0 / (*rows + *cols) as f64).sqrt();
                    DMatrix::from_fn(*rows, *cols, |_, _| rng.random_range(-bound..bound))
                }
            })
            .collect();
        Ok(ModelParameters { config, tensors })
    }

    pub fn tensor(&self, name: &str) -> Option<&DMatrix<f64>> {
        let shapes = self.config.tensor_shapes();
        let idx = shapes.iter().position(|(n, _, _)| n == name)?;
        self.tensors.get(idx)
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut DMatrix<f64>> {
        let shapes = self.config.tensor_shapes();
        let idx = shapes.iter().position(|(n, _, _)| n == name)?;
        self.tensors.get_mut(idx)
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    /// Records a forward pass over `tokens` (one row per object) into `g`.
    ///
    /// `scene_of[i]` labels the scene of token i; attention is confined to
    /// tokens sharing a scene. Returns the parameter leaves (for gradient
    /// reads) and the mean/variance output nodes, both N×2K with columns
    /// interleaved (east, north) per future frame.
    pub fn forward(
        &self,
        g: &mut Graph,
        tokens: DMatrix<f64>,
        scene_of: &[usize],
    ) -> Result<ForwardGraph, PredictError> {
        let n = tokens.nrows();
        if n == 0 {
            return Err(PredictError::ShapeMismatch("forward needs at least one object".into()));
        }
        if tokens.ncols() != self.config.token_dim() {
            return Err(PredictError::ShapeMismatch(format!(
                "token width {} does not match configured {}",
                tokens.ncols(),
                self.config.token_dim()
            )));
        }
        if scene_of.len() != n {
            return Err(PredictError::ShapeMismatch("scene labels must cover every token".into()));
        }

        let param_leaves: Vec<NodeId> =
            self.tensors.iter().map(|t| g.leaf(t.clone())).collect();
        let mut leaf_iter = param_leaves.iter().copied();
        let mut next = || leaf_iter.next().expect("tensor order matches declared shapes");

        let d = self.config.model_dim;
        let heads = self.config.heads;
        let head_dim = d / heads;

        // Attention mask: 0 within a scene, −1e30 across scenes.
        let mask_needed = scene_of.iter().any(|&s| s != scene_of[0]);
        let mask = if mask_needed {
            let m = DMatrix::from_fn(n, n, |i, j| {
                if scene_of[i] == scene_of[j] {
                    0.0
                } else {
                    -1e30
                }
            });
            Some(g.leaf(m))
        } else {
            None
        };

        let x = g.leaf(tokens);
        let (w_in, b_in) = (next(), next());
        let proj = g.matmul(x, w_in);
        let mut h = g.add_row(proj, b_in);

        for _ in 0..self.config.layers {
            let (ln1_g, ln1_b) = (next(), next());
            let (w_q, b_q, w_k, b_k, w_v, b_v, w_o, b_o) =
                (next(), next(), next(), next(), next(), next(), next(), next());
            let (ln2_g, ln2_b) = (next(), next());
            let (w_mlp1, b_mlp1, w_mlp2, b_mlp2) = (next(), next(), next(), next());

            let a = g.layer_norm(h, ln1_g, ln1_b);
            let q_full = g.matmul(a, w_q);
            let q_full = g.add_row(q_full, b_q);
            let k_full = g.matmul(a, w_k);
            let k_full = g.add_row(k_full, b_k);
            let v_full = g.matmul(a, w_v);
            let v_full = g.add_row(v_full, b_v);

            let mut head_outputs = Vec::with_capacity(heads);
            for hi in 0..heads {
                let q = g.slice_cols(q_full, hi * head_dim, head_dim);
                let k = g.slice_cols(k_full, hi * head_dim, head_dim);
                let v = g.slice_cols(v_full, hi * head_dim, head_dim);
                let scores = g.matmul_nt(q, k);
                let mut scores = g.scale(scores, 1.0 / (head_dim as f64).sqrt());
                if let Some(m) = mask {
                    scores = g.add(scores, m);
                }
                let attn = g.softmax_rows(scores);
                head_outputs.push(g.matmul(attn, v));
            }
            let merged = g.concat_cols(&head_outputs);
            let o = g.matmul(merged, w_o);
            let o = g.add_row(o, b_o);
            h = g.add(h, o);

            let m_in = g.layer_norm(h, ln2_g, ln2_b);
            let m1 = g.matmul(m_in, w_mlp1);
            let m1 = g.add_row(m1, b_mlp1);
            let act = g.gelu(m1);
            let m2 = g.matmul(act, w_mlp2);
            let m2 = g.add_row(m2, b_mlp2);
            h = g.add(h, m2);
        }

        let (ln_f_g, ln_f_b) = (next(), next());
        let f = g.layer_norm(h, ln_f_g, ln_f_b);

        let (w_mean, b_mean) = (next(), next());
        let means = g.matmul(f, w_mean);
        let means = g.add_row(means, b_mean);

        let (w_var, b_var) = (next(), next());
        let vars_raw = g.matmul(f, w_var);
        let vars_raw = g.add_row(vars_raw, b_var);
        let variances = g.softplus(vars_raw);

        debug_assert!(leaf_iter.next().is_none(), "all tensors consumed");
        Ok(ForwardGraph { param_leaves, means, variances })
    }
}

const MODEL_MAGIC: &[u8; 4] = b"MSPT";
const MODEL_VERSION: u32 = 1;

/// Serializes parameters: magic, version, config fields, then every
/// tensor's entries row-major as little-endian f64 in declared order.
pub fn write_model(params: &ModelParameters, mut w: impl Write) -> Result<(), PredictError> {
    w.write_all(MODEL_MAGIC)?;
    w.write_all(&MODEL_VERSION.to_le_bytes())?;
    let c = &params.config;
    for field in [c.model_dim, c.layers, c.heads, c.pos_bands, c.horizon] {
        w.write_all(&(field as u32).to_le_bytes())?;
    }
    w.write_all(&c.frame_interval_s.to_le_bytes())?;
    w.write_all(&c.norm_radius_m.to_le_bytes())?;
    w.write_all(&(params.parameter_count() as u64).to_le_bytes())?;
    for t in &params.tensors {
        for r in 0..t.nrows() {
            for col in 0..t.ncols() {
                w.write_all(&t[(r, col)].to_le_bytes())?;
            }
        }
    }
    Ok(())
}

/// Reads a model file, validating magic, version, and blob size against
/// the declared shapes.
pub fn read_model(mut r: impl Read) -> Result<ModelParameters, PredictError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MODEL_MAGIC {
        return Err(PredictError::InvalidModel(format!("bad magic {magic:02x?}")));
    }
    let version = read_u32(&mut r)?;
    if version != MODEL_VERSION {
        return Err(PredictError::InvalidModel(format!(
            "unsupported model version {version} (expected {MODEL_VERSION})"
        )));
    }
    let model_dim = read_u32(&mut r)? as usize;
    let layers = read_u32(&mut r)? as usize;
    let heads = read_u32(&mut r)? as usize;
    let pos_bands = read_u32(&mut r)? as usize;
    let horizon = read_u32(&mut r)? as usize;
    let frame_interval_s = read_f64(&mut r)?;
    let norm_radius_m = read_f64(&mut r)?;
    let config = EncoderConfig {
        model_dim,
        layers,
        heads,
        pos_bands,
        horizon,
        frame_interval_s,
        norm_radius_m,
    };
    config.validate()?;

    let declared = read_u64(&mut r)? as usize;
    let expected: usize = config.tensor_shapes().iter().map(|(_, r, c)| r * c).sum();
    if declared != expected {
        return Err(PredictError::InvalidModel(format!(
            "parameter blob holds {declared} values, config needs {expected}"
        )));
    }
    let mut tensors = Vec::new();
    for (_, rows, cols) in config.tensor_shapes() {
        let mut t = DMatrix::zeros(rows, cols);
        for ri in 0..rows {
            for ci in 0..cols {
                t[(ri, ci)] = read_f64(&mut r)?;
            }
        }
        tensors.push(t);
    }
    Ok(ModelParameters { config, tensors })
}

fn read_u32(r: &mut impl Read) -> Result<u32, PredictError> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64(r: &mut impl Read) -> Result<u64, PredictError> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn read_f64(r: &mut impl Read) -> Result<f64, PredictError> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(f64::from_le_bytes(buf))
}
