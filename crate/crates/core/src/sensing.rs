//! Gaussian measurement operators and magnitude-only observations.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::numerics::{gaussian_matrix, DenseMatrix, RngStream};

/// Measurement operator `A ∈ R^{m×n}`.
#[derive(Clone, Debug, PartialEq)]
pub struct SensingModel {
    matrix: DenseMatrix,
}

impl SensingModel {
    pub fn from_matrix(matrix: DenseMatrix) -> Self {
        Self { matrix }
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.matrix
    }

    /// Number of measurements.
    pub fn m(&self) -> usize {
        self.matrix.rows()
    }

    /// Signal dimension.
    pub fn n(&self) -> usize {
        self.matrix.cols()
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.matrix.matvec(x)
    }

    pub fn adjoint(&self, u: &[f64]) -> Result<Vec<f64>> {
        self.matrix.matvec_transpose(u)
    }
}

/// Draws `A` with i.i.d. `N(0, 1/m)` entries.
pub fn make_sensing(m: usize, n: usize, rng: &mut RngStream) -> Result<SensingModel> {
    if m == 0 || n == 0 {
        return Err(Error::Dimension(format!(
            "sensing needs m, n >= 1, got m={m}, n={n}"
        )));
    }
    let a = gaussian_matrix(m, n, (1.0 / m as f64).sqrt(), rng)?;
    Ok(SensingModel::from_matrix(a))
}

/// Magnitude measurements `y = |A x*| + e`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub y: Vec<f64>,
    /// Additive noise that was applied; all zeros for noiseless observations.
    pub noise: Vec<f64>,
}

impl Observation {
    pub fn m(&self) -> usize {
        self.y.len()
    }
}

/// Noiseless magnitude observation.
pub fn observe(sensing: &SensingModel, x_star: &[f64]) -> Result<Observation> {
    check_len("observed signal", x_star.len(), sensing.n())?;
    let y: Vec<f64> = sensing.apply(x_star)?.into_iter().map(f64::abs).collect();
    let noise = vec![0.0; y.len()];
    Ok(Observation { y, noise })
}

/// Observation with additive `N(0, noise_std²)` noise. With `noise_std = 0`
/// this equals [`observe`].
pub fn observe_noisy(
    sensing: &SensingModel,
    x_star: &[f64],
    noise_std: f64,
    rng: &mut RngStream,
) -> Result<Observation> {
    if !noise_std.is_finite() || noise_std < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "noise_std must be finite and non-negative, got {noise_std}"
        )));
    }
    let mut obs = observe(sensing, x_star)?;
    if noise_std > 0.0 {
        obs.noise = rng.normal_vec(obs.m(), noise_std);
        for (y, e) in obs.y.iter_mut().zip(&obs.noise) {
            *y += e;
        }
    }
    Ok(obs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{norm_sq, scale_in_place};

    #[test]
    fn single_entry_is_standard_normal_draw() {
        let s = make_sensing(1, 1, &mut RngStream::new(5)).unwrap();
        let want = RngStream::new(5).standard_normal();
        assert_eq!(s.matrix().get(0, 0), want);
    }

    #[test]
    fn zero_dims_rejected() {
        assert!(make_sensing(0, 3, &mut RngStream::new(0)).is_err());
        assert!(make_sensing(3, 0, &mut RngStream::new(0)).is_err());
    }

    #[test]
    fn same_seed_same_operator() {
        let a = make_sensing(6, 4, &mut RngStream::new(8)).unwrap();
        let b = make_sensing(6, 4, &mut RngStream::new(8)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn isotropy_over_seeds() {
        // Rows have covariance I/m, so E‖Ax‖² = ‖x‖² for a fixed unit x.
        let mut x = vec![0.0; 50];
        x.iter_mut().enumerate().for_each(|(i, v)| *v = (i as f64 + 1.0).sin());
        let nx = norm_sq(&x).sqrt();
        scale_in_place(&mut x, 1.0 / nx);
        let mean = (0..100u64)
            .map(|seed| {
                let s = make_sensing(200, 50, &mut RngStream::new(seed)).unwrap();
                norm_sq(&s.apply(&x).unwrap())
            })
            .sum::<f64>()
            / 100.0;
        assert!((mean - 1.0).abs() < 0.2, "mean {mean}");
    }

    #[test]
    fn hand_example() {
        let s = SensingModel::from_matrix(DenseMatrix::from_rows(&[vec![1.0, -1.0]]).unwrap());
        let obs = observe(&s, &[2.0, 5.0]).unwrap();
        assert_eq!(obs.y, vec![3.0]);
        assert_eq!(obs.noise, vec![0.0]);
        assert!(observe(&s, &[1.0]).is_err());
    }

    #[test]
    fn matches_dot_product_loop() {
        let mut rng = RngStream::new(12);
        let s = make_sensing(9, 13, &mut rng).unwrap();
        let x = rng.normal_vec(13, 1.0);
        let obs = observe(&s, &x).unwrap();
        for i in 0..9 {
            let mut acc = 0.0;
            for j in 0..13 {
                acc += s.matrix().get(i, j) * x[j];
            }
            assert!((obs.y[i] - acc.abs()).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_noise_equals_noiseless() {
        let mut rng = RngStream::new(3);
        let s = make_sensing(5, 4, &mut rng).unwrap();
        let x = rng.normal_vec(4, 1.0);
        assert_eq!(
            observe_noisy(&s, &x, 0.0, &mut rng).unwrap(),
            observe(&s, &x).unwrap()
        );
        let noisy = observe_noisy(&s, &x, 0.1, &mut rng).unwrap();
        assert!(noisy.noise.iter().any(|&e| e != 0.0));
    }
}
