//! Constant-velocity Kalman filter over `(cx, cy, aspect, height)`.
//!
//! Noise standard deviations scale with the box height; the two weights come
//! from [`KalmanConfig`].

use crate::mot_data::BBox;
use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};

pub type StateVector = SVector<f64, 8>;
pub type StateCovariance = SMatrix<f64, 8, 8>;
type MeasurementVector = SVector<f64, 4>;
type Projection = SMatrix<f64, 4, 8>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum KalmanError {
    #[error("kalman state is not finite")]
    NonFinite,
    #[error("innovation covariance is singular")]
    Singular,
    #[error("invalid measurement box {0:?}")]
    InvalidMeasurement(BBox),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KalmanConfig {
    pub std_weight_position: f64,
    pub std_weight_velocity: f64,
}

impl Default for KalmanConfig {
    fn default() -> Self {
        Self {
            std_weight_position: 1.0 / 20.0,
            std_weight_velocity: 1.0 / 160.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KalmanState {
    pub mean: StateVector,
    pub covariance: StateCovariance,
}

impl KalmanState {
    pub fn is_finite(&self) -> bool {
        self.mean.iter().all(|v| v.is_finite()) && self.covariance.iter().all(|v| v.is_finite())
    }

    pub fn max_asymmetry(&self) -> f64 {
        (self.covariance - self.covariance.transpose()).abs().max()
    }

    /// Position part as a box; width is `aspect * height`.
    pub fn bbox(&self) -> BBox {
        let (cx, cy, a, h) = (self.mean[0], self.mean[1], self.mean[2], self.mean[3]);
        BBox::from_center(cx, cy, a * h, h)
    }
}

fn measurement(b: &BBox) -> MeasurementVector {
    let (cx, cy) = b.center();
    MeasurementVector::new(cx, cy, b.w / b.h, b.h)
}

fn transition() -> StateCovariance {
    let mut f = StateCovariance::identity();
    for i in 0..4 {
        f[(i, i + 4)] = 1.0;
    }
    f
}

fn projection() -> Projection {
    Projection::identity()
}

fn symmetrize(p: &mut StateCovariance) {
    *p = (*p + p.transpose()) * 0.5;
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct KalmanFilter {
    pub config: KalmanConfig,
}

impl KalmanFilter {
    pub fn new(config: KalmanConfig) -> Self {
        Self { config }
    }

    pub fn init(&self, bbox: &BBox) -> KalmanState {
        let z = measurement(bbox);
        let mut mean = StateVector::zeros();
        mean.fixed_rows_mut::<4>(0).copy_from(&z);
        let h = z[3];
        let wp = self.config.std_weight_position;
        let wv = self.config.std_weight_velocity;
        let std = [
            2.0 * wp * h,
            2.0 * wp * h,
            1e-2,
            2.0 * wp * h,
            10.0 * wv * h,
            10.0 * wv * h,
            1e-5,
            10.0 * wv * h,
        ];
        let covariance = StateCovariance::from_diagonal(&StateVector::from_iterator(
            std.iter().map(|s| s * s),
        ));
        KalmanState { mean, covariance }
    }

    fn process_noise(&self, height: f64) -> StateCovariance {
        let wp = self.config.std_weight_position * height;
        let wv = self.config.std_weight_velocity * height;
        let std = [wp, wp, 1e-2, wp, wv, wv, 1e-5, wv];
        StateCovariance::from_diagonal(&StateVector::from_iterator(std.iter().map(|s| s * s)))
    }

    fn measurement_noise(&self, height: f64) -> SMatrix<f64, 4, 4> {
        let wp = self.config.std_weight_position * height;
        let std = [wp, wp, 1e-1, wp];
        SMatrix::<f64, 4, 4>::from_diagonal(&MeasurementVector::from_iterator(
            std.iter().map(|s| s * s),
        ))
    }

    /// One frame of constant-velocity motion.
    pub fn predict(&self, state: &KalmanState) -> Result<KalmanState, KalmanError> {
        if !state.is_finite() {
            return Err(KalmanError::NonFinite);
        }
        let f = transition();
        let mean = f * state.mean;
        let mut covariance = f * state.covariance * f.transpose() + self.process_noise(state.mean[3]);
        symmetrize(&mut covariance);
        let out = KalmanState { mean, covariance };
        if !out.is_finite() {
            return Err(KalmanError::NonFinite);
        }
        Ok(out)
    }

    /// Correct `state` with a measured box.
    pub fn update(&self, state: &KalmanState, bbox: &BBox) -> Result<KalmanState, KalmanError> {
        if !state.is_finite() {
            return Err(KalmanError::NonFinite);
        }
        if !bbox.is_valid() {
            return Err(KalmanError::InvalidMeasurement(*bbox));
        }
        let h = projection();
        let projected_cov = h * state.covariance * h.transpose() + self.measurement_noise(state.mean[3]);
        let chol = projected_cov.cholesky().ok_or(KalmanError::Singular)?;
        // K = P Hᵀ S⁻¹, solved as S Kᵀ = H P
        let gain = chol.solve(&(h * state.covariance)).transpose();
        let innovation = measurement(bbox) - h * state.mean;
        let mean = state.mean + gain * innovation;
        let mut covariance = state.covariance - gain * projected_cov * gain.transpose();
        symmetrize(&mut covariance);
        let out = KalmanState { mean, covariance };
        if !out.is_finite() {
            return Err(KalmanError::NonFinite);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn kf() -> KalmanFilter {
        KalmanFilter::default()
    }

    #[test]
    fn init_centers_box() {
        let s = kf().init(&BBox::new(0.0, 0.0, 10.0, 20.0));
        assert_eq!(s.mean.as_slice(), &[5.0, 10.0, 0.5, 20.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(s.max_asymmetry(), 0.0);
        assert!(s.covariance.diagonal().iter().all(|v| *v > 0.0));
        assert!(s.covariance.symmetric_eigenvalues().iter().all(|v| *v > 0.0));
        let s = kf().init(&BBox::new(10.0, 10.0, 10.0, 10.0));
        assert_eq!(s.mean[2], 1.0);
    }

    #[test]
    fn predict_adds_velocity() {
        let mut s = kf().init(&BBox::new(0.0, 0.0, 10.0, 20.0));
        s.mean = StateVector::from_column_slice(&[5.0, 10.0, 0.5, 20.0, 1.0, 2.0, 0.0, 0.0]);
        let p = kf().predict(&s).unwrap();
        assert_eq!(&p.mean.as_slice()[..4], &[6.0, 12.0, 0.5, 20.0]);
        assert!(p.covariance.trace() > s.covariance.trace());
    }

    #[test]
    fn predict_zero_velocity_keeps_position() {
        let s = kf().init(&BBox::new(3.0, 4.0, 10.0, 20.0));
        let p = kf().predict(&s).unwrap();
        assert_eq!(&p.mean.as_slice()[..4], &s.mean.as_slice()[..4]);
    }

    #[test]
    fn predict_rejects_non_finite() {
        let mut s = kf().init(&BBox::new(3.0, 4.0, 10.0, 20.0));
        s.mean[0] = f64::NAN;
        assert_eq!(kf().predict(&s), Err(KalmanError::NonFinite));
    }

    #[test]
    fn update_at_prediction_is_noop_on_mean() {
        let b = BBox::new(3.0, 4.0, 10.0, 20.0);
        let s = kf().predict(&kf().init(&b)).unwrap();
        let u = kf().update(&s, &b).unwrap();
        for i in 0..8 {
            assert!((u.mean[i] - s.mean[i]).abs() < 1e-9);
        }
        let measured = |c: &StateCovariance| (0..4).map(|i| c[(i, i)]).sum::<f64>();
        assert!(measured(&u.covariance) < measured(&s.covariance));
    }

    #[test]
    fn repeated_updates_converge_monotonically() {
        let filter = kf();
        let target = BBox::new(100.0, 50.0, 30.0, 60.0);
        let z = measurement(&target);
        let mut s = filter.init(&BBox::new(0.0, 0.0, 20.0, 40.0));
        let dist = |s: &KalmanState| (s.mean.fixed_rows::<4>(0) - z).norm();
        let initial = dist(&s);
        let mut prev = initial;
        for _ in 0..50 {
            s = filter.update(&s, &target).unwrap();
            let d = dist(&s);
            assert!(d < prev, "{d} !< {prev}");
            prev = d;
        }
        assert!(prev < 0.05 * initial);
    }

    #[test]
    fn update_between_prior_and_measurement_for_diagonal_prior() {
        let filter = kf();
        let s = filter.init(&BBox::new(0.0, 0.0, 20.0, 40.0));
        let target = BBox::new(10.0, -6.0, 24.0, 30.0);
        let z = measurement(&target);
        let u = filter.update(&s, &target).unwrap();
        for i in 0..4 {
            let (lo, hi) = if s.mean[i] < z[i] { (s.mean[i], z[i]) } else { (z[i], s.mean[i]) };
            assert!(u.mean[i] >= lo && u.mean[i] <= hi, "dim {i}");
        }
    }

    proptest! {
        #[test]
        fn covariance_stays_symmetric(
            ops in proptest::collection::vec(
                (any::<bool>(), -50.0..50.0f64, -50.0..50.0f64, 5.0..80.0f64, 10.0..160.0f64),
                1..60,
            )
        ) {
            let filter = kf();
            let mut s = filter.init(&BBox::new(0.0, 0.0, 30.0, 60.0));
            for (is_update, x, y, w, h) in ops {
                s = if is_update {
                    filter.update(&s, &BBox::new(x, y, w, h)).unwrap()
                } else {
                    filter.predict(&s).unwrap()
                };
                prop_assert!(s.max_asymmetry() < 1e-9);
                prop_assert!(s.covariance.diagonal().iter().all(|v| *v >= 0.0));
            }
        }
    }
}
