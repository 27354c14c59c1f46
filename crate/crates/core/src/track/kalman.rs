//! Constant-velocity Kalman filter over the box state
//! `[x_c, y_c, s, r, v_x, v_y, v_s, v_r]`.
//!
//! Positions are tangent-plane meters, `s` the box plane area, `r` its
//! aspect; the velocity half of the state is per frame (one frame =
//! 0.4 s). Measurements observe the first four components.

use nalgebra::{SMatrix, SVector};

pub type StateVector = SVector<f64, 8>;
pub type StateMatrix = SMatrix<f64, 8, 8>;
pub type Measurement = SVector<f64, 4>;
pub type MeasurementMatrix = SMatrix<f64, 4, 4>;

/// Seconds per tracker frame at the 2.5 Hz camera cadence.
pub const FRAME_PERIOD_S: f64 = 0.4;

/// Smallest value `s` and `r` are clamped to after an update.
const POSITIVE_FLOOR: f64 = 1e-6;

#[derive(Debug, thiserror::Error)]
pub enum TrackError {
    #[error("covariance lost positive definiteness ({context})")]
    CovarianceNotSpd { context: &'static str },
}

/// Process/measurement noise, exposed for tuning.
#[derive(Debug, Clone)]
pub struct KalmanParams {
    pub q_diag: [f64; 8],
    pub r_diag: [f64; 4],
}

impl Default for KalmanParams {
    fn default() -> Self {
        KalmanParams {
            q_diag: [0.01, 0.01, 0.04, 1e-4, 0.25, 0.25, 0.01, 1e-6],
            r_diag: [0.25, 0.25, 0.09, 1e-4],
        }
    }
}

impl KalmanParams {
    fn q(&self) -> StateMatrix {
        StateMatrix::from_diagonal(&StateVector::from_row_slice(&self.q_diag))
    }

    fn r(&self) -> MeasurementMatrix {
        MeasurementMatrix::from_diagonal(&Measurement::from_row_slice(&self.r_diag))
    }
}

/// Transition matrix: identity plus unit coupling of each of the four
/// tracked quantities to its per-frame derivative.
pub fn transition_matrix() -> StateMatrix {
    let mut f = StateMatrix::identity();
    for i in 0..4 {
        f[(i, i + 4)] = 1.0;
    }
    f
}

fn measurement_matrix() -> SMatrix<f64, 4, 8> {
    let mut h = SMatrix::<f64, 4, 8>::zeros();
    for i in 0..4 {
        h[(i, i)] = 1.0;
    }
    h
}

/// Filter state of one track.
#[derive(Debug, Clone)]
pub struct KalmanState {
    pub x: StateVector,
    pub p: StateMatrix,
}

impl KalmanState {
    /// Initializes from a first measurement with zero velocities. The
    /// velocity block starts at 10× the position uncertainty since it is
    /// entirely unobserved.
    pub fn new(z: &Measurement, params: &KalmanParams) -> Self {
        let mut x = StateVector::zeros();
        for i in 0..4 {
            x[i] = z[i];
        }
        let mut p = StateMatrix::zeros();
        for i in 0..4 {
            p[(i, i)] = params.r_diag[i];
            p[(i + 4, i + 4)] = 10.0 * params.r_diag[i];
        }
        KalmanState { x, p }
    }

    /// Advances mean and covariance by one frame.
    pub fn predict(&mut self, params: &KalmanParams) -> Result<(), TrackError> {
        let f = transition_matrix();
        self.x = f * self.x;
        self.p = f * self.p * f.transpose() + params.q();
        self.check_spd("predict")
    }

    /// Conditions on a measurement of `[x_c, y_c, s, r]` (Joseph-form
    /// covariance update, which preserves symmetry under roundoff).
    pub fn update(&mut self, z: &Measurement, params: &KalmanParams) -> Result<(), TrackError> {
        let h = measurement_matrix();
        let r = params.r();
        let innovation = z - h * self.x;
        let s_mat = h * self.p * h.transpose() + r;
        let s_inv = s_mat
            .cholesky()
            .ok_or(TrackError::CovarianceNotSpd { context: "innovation covariance" })?
            .inverse();
        let gain = self.p * h.transpose() * s_inv;
        self.x += gain * innovation;
        let i_kh = StateMatrix::identity() - gain * h;
        self.p = i_kh * self.p * i_kh.transpose() + gain * r * gain.transpose();
        self.x[2] = self.x[2].max(POSITIVE_FLOOR);
        self.x[3] = self.x[3].max(POSITIVE_FLOOR);
        self.check_spd("update")
    }

    fn check_spd(&self, context: &'static str) -> Result<(), TrackError> {
        if cfg!(debug_assertions) && self.p.cholesky().is_none() {
            return Err(TrackError::CovarianceNotSpd { context });
        }
        Ok(())
    }
}
