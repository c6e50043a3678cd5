//! Constant-velocity Kalman filter over box center, area and aspect ratio.
//!
//! State `(cx, cy, area, aspect, vcx, vcy, varea)` in pixels; the aspect ratio
//! (width / height) is modelled as constant. Default noise settings follow the
//! ones commonly used for SORT.

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::PixelBox;

pub type StateVec = SVector<f64, 7>;
pub type StateCov = SMatrix<f64, 7, 7>;
type MeasVec = SVector<f64, 4>;
type MeasMat = SMatrix<f64, 4, 7>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KalmanParams {
    /// Initial covariance diagonal.
    pub initial_var: [f64; 7],
    /// Process noise diagonal.
    pub process_var: [f64; 7],
    /// Measurement noise diagonal for `(cx, cy, area, aspect)`.
    pub measurement_var: [f64; 4],
}

impl Default for KalmanParams {
    fn default() -> Self {
        Self {
            initial_var: [10.0, 10.0, 10.0, 10.0, 1e4, 1e4, 1e4],
            process_var: [1.0, 1.0, 1.0, 1.0, 1e-2, 1e-2, 1e-4],
            measurement_var: [1.0, 1.0, 10.0, 10.0],
        }
    }
}

impl KalmanParams {
    pub fn noiseless() -> Self {
        Self { process_var: [0.0; 7], measurement_var: [0.0; 4], ..Self::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KalmanState {
    pub mean: StateVec,
    pub covariance: StateCov,
}

fn transition() -> StateCov {
    let mut f = StateCov::identity();
    f[(0, 4)] = 1.0;
    f[(1, 5)] = 1.0;
    f[(2, 6)] = 1.0;
    f
}

fn observation() -> MeasMat {
    let mut h = MeasMat::zeros();
    for i in 0..4 {
        h[(i, i)] = 1.0;
    }
    h
}

fn measure(b: &PixelBox) -> MeasVec {
    let (cx, cy) = b.center();
    MeasVec::new(cx, cy, b.area(), b.width() / b.height())
}

fn symmetrize(p: &StateCov) -> StateCov {
    (p + p.transpose()) * 0.5
}

impl KalmanState {
    pub fn from_box(b: &PixelBox, params: &KalmanParams) -> Self {
        let z = measure(b);
        let mut mean = StateVec::zeros();
        mean.fixed_rows_mut::<4>(0).copy_from(&z);
        Self { mean, covariance: StateCov::from_diagonal(&StateVec::from(params.initial_var)) }
    }

    pub fn to_box(&self) -> PixelBox {
        PixelBox::from_center_area_aspect(self.mean[0], self.mean[1], self.mean[2], self.mean[3])
    }

    /// Advances one frame under constant velocity.
    pub fn predict(&self, params: &KalmanParams) -> Self {
        let mut mean = self.mean;
        if mean[2] + mean[6] <= 0.0 {
            mean[6] = 0.0;
        }
        let f = transition();
        let q = StateCov::from_diagonal(&StateVec::from(params.process_var));
        Self { mean: f * mean, covariance: symmetrize(&(f * self.covariance * f.transpose() + q)) }
    }

    /// Linear measurement correction with a box observation (Joseph form).
    pub fn update(&self, observed: &PixelBox, params: &KalmanParams) -> Result<Self> {
        observed.validate()?;
        let h = observation();
        let r = SMatrix::<f64, 4, 4>::from_diagonal(&MeasVec::from(params.measurement_var));
        let innovation = measure(observed) - h * self.mean;
        let s = h * self.covariance * h.transpose() + r;
        let s_inv = s.try_inverse().ok_or_else(|| Error::Numerical("singular innovation covariance".into()))?;
        let gain = self.covariance * h.transpose() * s_inv;
        let mean = self.mean + gain * innovation;
        let i_kh = StateCov::identity() - gain * h;
        let cov = i_kh * self.covariance * i_kh.transpose() + gain * r * gain.transpose();
        let mut covariance = symmetrize(&cov);
        for i in 0..7 {
            if covariance[(i, i)] < 0.0 {
                covariance[(i, i)] = 0.0;
            }
        }
        if !mean.iter().all(|v| v.is_finite()) || !covariance.iter().all(|v| v.is_finite()) {
            return Err(Error::Numerical("Kalman update produced non-finite state".into()));
        }
        Ok(Self { mean, covariance })
    }
}
