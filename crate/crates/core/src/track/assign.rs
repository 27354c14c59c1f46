//! Detection↔track association: plane-space IoU cost and minimum-cost
//! maximal bipartite matching.

/// Axis-aligned box in tangent-plane coordinates, parametrized by center,
/// area `s`, and aspect `r` (so width = √(s·r), height = √(s/r)).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaneBox {
    pub east: f64,
    pub north: f64,
    pub s: f64,
    pub r: f64,
}

impl PlaneBox {
    pub fn width(&self) -> f64 {
        (self.s * self.r).sqrt()
    }

    pub fn height(&self) -> f64 {
        (self.s / self.r).sqrt()
    }
}

/// Intersection-over-union of two plane boxes.
pub fn iou(a: &PlaneBox, b: &PlaneBox) -> f64 {
    let (aw, ah) = (a.width(), a.height());
    let (bw, bh) = (b.width(), b.height());
    let ix = overlap(a.east, aw, b.east, bw);
    let iy = overlap(a.north, ah, b.north, bh);
    let inter = ix * iy;
    let union = aw * ah + bw * bh - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

fn overlap(c0: f64, w0: f64, c1: f64, w1: f64) -> f64 {
    let lo = (c0 - w0 / 2.0).max(c1 - w1 / 2.0);
    let hi = (c0 + w0 / 2.0).min(c1 + w1 / 2.0);
    (hi - lo).max(0.0)
}

/// Result of bipartite matching between tracks (rows) and detections
/// (columns).
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Assignment {
    pub matches: Vec<(usize, usize)>,
    pub unmatched_tracks: Vec<usize>,
    pub unmatched_detections: Vec<usize>,
}

/// Cost of leaving a row or column unmatched; any allowed pairing is
/// cheaper, so match count is maximized before total cost is minimized.
const UNMATCHED_COST: f64 = 1e6;
/// Cost of a forbidden pairing; worse than staying unmatched.
const FORBIDDEN_COST: f64 = 1e9;

/// Minimum-total-cost maximal matching. `cost[i][j]` of `None` marks a
/// forbidden pair. All allowed costs must be far below [`UNMATCHED_COST`]
/// (association costs are `1 − IoU ∈ [0, 1]`).
pub fn hungarian(cost: &[Vec<Option<f64>>]) -> Assignment {
    let rows = cost.len();
    let cols = cost.first().map_or(0, |r| r.len());
    if rows == 0 || cols == 0 {
        return Assignment {
            matches: vec![],
            unmatched_tracks: (0..rows).collect(),
            unmatched_detections: (0..cols).collect(),
        };
    }

    // Square augmented matrix: every real row/column gets a personal dummy
    // partner priced at UNMATCHED_COST, and dummy-dummy pairs are free.
    // Minimizing total cost then maximizes real-match cardinality first.
    let n = rows + cols;
    let mut a = vec![vec![0.0_f64; n]; n];
    for (i, row) in a.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            *cell = match (i < rows, j < cols) {
                (true, true) => cost[i][j].unwrap_or(FORBIDDEN_COST),
                (true, false) => {
                    if j - cols == i {
                        UNMATCHED_COST
                    } else {
                        FORBIDDEN_COST
                    }
                }
                (false, true) => {
                    if i - rows == j {
                        UNMATCHED_COST
                    } else {
                        FORBIDDEN_COST
                    }
                }
                (false, false) => 0.0,
            };
        }
    }

    let col_of_row = solve_square(&a);

    let mut result = Assignment::default();
    for (i, &j) in col_of_row.iter().enumerate().take(rows) {
        if j < cols && cost[i][j].is_some() {
            result.matches.push((i, j));
        } else {
            result.unmatched_tracks.push(i);
        }
    }
    let matched_cols: Vec<usize> = result.matches.iter().map(|&(_, j)| j).collect();
    result.unmatched_detections = (0..cols).filter(|j| !matched_cols.contains(j)).collect();
    result
}

/// Exact minimum-cost perfect matching on a square matrix via shortest
/// augmenting paths with row/column potentials (O(n³)).
fn solve_square(a: &[Vec<f64>]) -> Vec<usize> {
    let n = a.len();
    // 1-based internal arrays; p[j] = row matched to column j.
    let mut u = vec![0.0_f64; n + 1];
    let mut v = vec![0.0_f64; n + 1];
    let mut p = vec![0_usize; n + 1];
    let mut way = vec![0_usize; n + 1];

    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0_usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0_usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = a[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut col_of_row = vec![usize::MAX; n];
    for j in 1..=n {
        if p[j] != 0 {
            col_of_row[p[j] - 1] = j - 1;
        }
    }
    col_of_row
}

/// Builds the `1 − IoU` cost matrix (pairs below `iou_min` forbidden) and
/// matches tracks to detections.
pub fn assign_by_iou(tracks: &[PlaneBox], detections: &[PlaneBox], iou_min: f64) -> Assignment {
    if tracks.is_empty() {
        // A zero-row cost matrix carries no column count, so report the
        // unmatched detections here.
        return Assignment {
            matches: vec![],
            unmatched_tracks: vec![],
            unmatched_detections: (0..detections.len()).collect(),
        };
    }
    let cost: Vec<Vec<Option<f64>>> = tracks
        .iter()
        .map(|t| {
            detections
                .iter()
                .map(|d| {
                    let overlap = iou(t, d);
                    if overlap < iou_min {
                        None
                    } else {
                        Some(1.0 - overlap)
                    }
                })
                .collect()
        })
        .collect();
    hungarian(&cost)
}
