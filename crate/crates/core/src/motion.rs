//! Constant-velocity Kalman filter over `(cx, cy, a, h)` box measurements.
//!
//! State is `(cx, cy, a, h, vcx, vcy, va, vh)` with `a = w / h`. Process and measurement
//! noise scale with the current box height.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::BBox;

pub const STATE_DIM: usize = 8;
pub const MEAS_DIM: usize = 4;

/// 0.95 quantiles of the chi-square distribution, indexed by degrees of freedom − 1.
pub const CHI2_INV_95: [f64; 9] = [
    3.8415, 5.9915, 7.8147, 9.4877, 11.070, 12.592, 14.067, 15.507, 16.919,
];

type Mat<T, const R: usize, const C: usize> = [[T; C]; R];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KalmanState<T> {
    pub mean: [T; STATE_DIM],
    pub covariance: Mat<T, STATE_DIM, STATE_DIM>,
}

impl<T: Scalar> KalmanState<T> {
    /// Box described by the position part of the mean.
    pub fn bbox(&self) -> BBox<T> {
        let [cx, cy, a, h, ..] = self.mean;
        BBox::from_center(cx, cy, a * h, h)
    }

    pub fn trace(&self) -> T {
        (0..STATE_DIM).map(|i| self.covariance[i][i]).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KalmanFilter<T> {
    pub std_weight_position: T,
    pub std_weight_velocity: T,
}

impl<T: Scalar> Default for KalmanFilter<T> {
    fn default() -> Self {
        Self {
            std_weight_position: T::lit(1.0 / 20.0),
            std_weight_velocity: T::lit(1.0 / 160.0),
        }
    }
}

/// `(cx, cy, w/h, h)` of a box.
pub fn measurement_of<T: Scalar>(bbox: &BBox<T>) -> Result<[T; MEAS_DIM]> {
    let h = bbox.height();
    if !(h > T::zero()) {
        return Err(Error::invalid(format!(
            "box height must be positive, got {h}"
        )));
    }
    let (cx, cy) = bbox.center();
    Ok([cx, cy, bbox.width() / h, h])
}

impl<T: Scalar> KalmanFilter<T> {
    pub fn initiate(&self, bbox: &BBox<T>) -> Result<KalmanState<T>> {
        let z = measurement_of(bbox)?;
        let mut mean = [T::zero(); STATE_DIM];
        mean[..MEAS_DIM].copy_from_slice(&z);
        let h = z[3];
        let (p, v) = (self.std_weight_position, self.std_weight_velocity);
        let two = T::lit(2.0);
        let ten = T::lit(10.0);
        let std = [
            two * p * h,
            two * p * h,
            T::lit(1e-2),
            two * p * h,
            ten * v * h,
            ten * v * h,
            T::lit(1e-5),
            ten * v * h,
        ];
        Ok(KalmanState {
            mean,
            covariance: diag_sq(&std),
        })
    }

    /// Advances one frame.
    pub fn predict(&self, s: &KalmanState<T>) -> KalmanState<T> {
        let h = s.mean[3];
        let (p, v) = (self.std_weight_position, self.std_weight_velocity);
        let q = diag_sq(&[
            p * h,
            p * h,
            T::lit(1e-2),
            p * h,
            v * h,
            v * h,
            T::lit(1e-5),
            v * h,
        ]);

        let mut mean = s.mean;
        for i in 0..MEAS_DIM {
            mean[i] += s.mean[i + MEAS_DIM];
        }
        // F P Fᵀ with F = [[I, I], [0, I]]
        let mut fp = s.covariance;
        for i in 0..MEAS_DIM {
            for j in 0..STATE_DIM {
                fp[i][j] += s.covariance[i + MEAS_DIM][j];
            }
        }
        let mut cov = fp;
        for i in 0..STATE_DIM {
            for j in 0..MEAS_DIM {
                cov[i][j] += fp[i][j + MEAS_DIM];
            }
        }
        for i in 0..STATE_DIM {
            for j in 0..STATE_DIM {
                cov[i][j] += q[i][j];
            }
        }
        KalmanState {
            mean,
            covariance: symmetrize(cov),
        }
    }

    /// Measurement-space mean and innovation covariance.
    pub fn project(&self, s: &KalmanState<T>) -> ([T; MEAS_DIM], Mat<T, MEAS_DIM, MEAS_DIM>) {
        let h = s.mean[3];
        let p = self.std_weight_position;
        let r = [p * h, p * h, T::lit(1e-1), p * h];
        let mut cov = [[T::zero(); MEAS_DIM]; MEAS_DIM];
        for i in 0..MEAS_DIM {
            for j in 0..MEAS_DIM {
                cov[i][j] = s.covariance[i][j];
            }
            cov[i][i] += r[i] * r[i];
        }
        let mut mean = [T::zero(); MEAS_DIM];
        mean.copy_from_slice(&s.mean[..MEAS_DIM]);
        (mean, cov)
    }

    pub fn update(&self, s: &KalmanState<T>, bbox: &BBox<T>) -> Result<KalmanState<T>> {
        let z = measurement_of(bbox)?;
        let (proj_mean, proj_cov) = self.project(s);
        let chol = cholesky(&proj_cov)?;

        // gain Kᵀ = S⁻¹ (P Hᵀ)ᵀ, one state column at a time
        let mut gain = [[T::zero(); MEAS_DIM]; STATE_DIM];
        for i in 0..STATE_DIM {
            let mut row = [T::zero(); MEAS_DIM];
            row.copy_from_slice(&s.covariance[i][..MEAS_DIM]);
            gain[i] = cholesky_solve(&chol, &row);
        }
        let mut innovation = [T::zero(); MEAS_DIM];
        for k in 0..MEAS_DIM {
            innovation[k] = z[k] - proj_mean[k];
        }
        let mut mean = s.mean;
        for i in 0..STATE_DIM {
            for k in 0..MEAS_DIM {
                mean[i] += gain[i][k] * innovation[k];
            }
        }
        // P − K S Kᵀ, and K S = P Hᵀ
        let mut cov = s.covariance;
        for i in 0..STATE_DIM {
            for j in 0..STATE_DIM {
                let mut acc = T::zero();
                for k in 0..MEAS_DIM {
                    acc += gain[i][k] * s.covariance[j][k];
                }
                cov[i][j] -= acc;
            }
        }
        Ok(KalmanState {
            mean,
            covariance: symmetrize(cov),
        })
    }

    /// Squared Mahalanobis distance of each box's `(cx, cy, a, h)` under the projected
    /// distribution of `s`. Boxes with non-positive height get `+∞`.
    pub fn gating_distance(&self, s: &KalmanState<T>, boxes: &[BBox<T>]) -> Result<Vec<T>> {
        let (mean, cov) = self.project(s);
        let chol = cholesky(&cov)?;
        Ok(boxes
            .iter()
            .map(|b| match measurement_of(b) {
                Ok(z) => {
                    let mut d = [T::zero(); MEAS_DIM];
                    for k in 0..MEAS_DIM {
                        d[k] = z[k] - mean[k];
                    }
                    forward_substitute(&chol, &d).iter().map(|&v| v * v).sum()
                }
                Err(_) => T::infinity(),
            })
            .collect())
    }
}

fn diag_sq<T: Scalar, const N: usize>(std: &[T; N]) -> Mat<T, N, N> {
    let mut m = [[T::zero(); N]; N];
    for i in 0..N {
        m[i][i] = std[i] * std[i];
    }
    m
}

fn symmetrize<T: Scalar, const N: usize>(mut m: Mat<T, N, N>) -> Mat<T, N, N> {
    let half = T::lit(0.5);
    for i in 0..N {
        for j in (i + 1)..N {
            let v = (m[i][j] + m[j][i]) * half;
            m[i][j] = v;
            m[j][i] = v;
        }
    }
    m
}

/// Lower-triangular factor of a symmetric positive-definite matrix.
fn cholesky<T: Scalar, const N: usize>(a: &Mat<T, N, N>) -> Result<Mat<T, N, N>> {
    let mut l = [[T::zero(); N]; N];
    for i in 0..N {
        for j in 0..=i {
            let mut sum = a[i][j];
            for k in 0..j {
                sum -= l[i][k] * l[j][k];
            }
            if i == j {
                if !(sum > T::zero()) {
                    return Err(Error::Numerical(format!(
                        "innovation covariance not positive definite (pivot {i} = {sum})"
                    )));
                }
                l[i][i] = sum.sqrt();
            } else {
                l[i][j] = sum / l[j][j];
            }
        }
    }
    Ok(l)
}

fn forward_substitute<T: Scalar, const N: usize>(l: &Mat<T, N, N>, b: &[T; N]) -> [T; N] {
    let mut y = [T::zero(); N];
    for i in 0..N {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i][k] * y[k];
        }
        y[i] = s / l[i][i];
    }
    y
}

fn cholesky_solve<T: Scalar, const N: usize>(l: &Mat<T, N, N>, b: &[T; N]) -> [T; N] {
    let y = forward_substitute(l, b);
    let mut x = [T::zero(); N];
    for i in (0..N).rev() {
        let mut s = y[i];
        for k in (i + 1)..N {
            s -= l[k][i] * x[k];
        }
        x[i] = s / l[i][i];
    }
    x
}
