//! Seeded random streams and the distributions the sampler draws from.
//!
//! Every stream is a ChaCha8 generator keyed by a 64-bit seed and selected
//! by a 64-bit stream id, so chains and replications never share state and
//! the same `(seed, stream)` pair reproduces the same draws everywhere.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg;

#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { seed, stream, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    /// Uniform on [0, 1).
    pub fn uniform(&mut self) -> f64 {
        // 53 random mantissa bits
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn bernoulli(&mut self, prob: f64) -> bool {
        self.uniform() < prob
    }

    /// Uniform integer in `0..n` (n > 0).
    pub fn index(&mut self, n: usize) -> usize {
        ((self.uniform() * n as f64) as usize).min(n - 1)
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

/// Mixes a base seed with an index into an independent-looking seed (splitmix64).
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn draw_normal(mean: f64, variance: f64, rng: &mut RngStream) -> Result<f64> {
    if !(variance >= 0.0) || !mean.is_finite() {
        return Err(Error::arg(format!("normal needs finite mean and variance >= 0, got ({mean}, {variance})")));
    }
    if variance == 0.0 {
        return Ok(mean);
    }
    Ok(mean + variance.sqrt() * rng.standard_normal())
}

/// Multivariate normal via the symmetric eigendecomposition of the
/// covariance, so positive semidefinite inputs are accepted and degenerate
/// directions contribute no noise.
pub fn draw_mvn(mean: &DVector<f64>, cov: &DMatrix<f64>, rng: &mut RngStream) -> Result<DVector<f64>> {
    let n = mean.len();
    if cov.nrows() != n || cov.ncols() != n {
        return Err(Error::dim(format!("covariance is {}x{}, mean has {n} entries", cov.nrows(), cov.ncols())));
    }
    linalg::check_symmetric(cov, "covariance")?;
    let eig = SymmetricEigen::new(cov.clone());
    let max = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let tol = linalg::SPD_RELATIVE_TOL * max.max(f64::MIN_POSITIVE);
    if eig.eigenvalues.iter().any(|&l| l < -tol) {
        return Err(Error::NotPositiveDefinite("covariance is indefinite".into()));
    }
    let mut out = mean.clone();
    for (idx, &lambda) in eig.eigenvalues.iter().enumerate() {
        let z = rng.standard_normal();
        if lambda > tol {
            out.axpy(lambda.sqrt() * z, &eig.eigenvectors.column(idx), 1.0);
        }
    }
    Ok(out)
}

/// Draw of `N(mean, P⁻¹)` given the lower Cholesky factor `L` of the
/// precision `P = L Lᵀ`: `mean + L⁻ᵀ z`.
pub(crate) fn draw_mvn_from_precision_factor(
    mean: &DVector<f64>,
    precision_lower: &DMatrix<f64>,
    scale: f64,
    rng: &mut RngStream,
) -> DVector<f64> {
    let z = DVector::from_fn(mean.len(), |_, _| rng.standard_normal());
    mean + linalg::solve_upper_transposed(precision_lower, &z) * scale
}

fn draw_gamma(shape: f64, scale: f64, rng: &mut RngStream) -> f64 {
    Gamma::new(shape, scale).expect("validated gamma parameters").sample(rng)
}

/// `1/G` with `G ~ Gamma(shape, rate)`; mean `rate / (shape - 1)` for shape > 1.
pub fn draw_inverse_gamma(shape: f64, rate: f64, rng: &mut RngStream) -> Result<f64> {
    if !(shape > 0.0 && shape.is_finite()) || !(rate > 0.0 && rate.is_finite()) {
        return Err(Error::arg(format!("inverse gamma needs positive shape and rate, got ({shape}, {rate})")));
    }
    loop {
        let g = draw_gamma(shape, 1.0 / rate, rng);
        // a zero gamma draw would give an infinite variance
        if g > 0.0 {
            return Ok(1.0 / g);
        }
    }
}

/// Inverse-Wishart with `dof` degrees of freedom and scale `Ψ`
/// (mean `Ψ / (dof - p - 1)`), drawn as the inverse of a Bartlett-factored
/// Wishart(dof, Ψ⁻¹).
pub fn draw_inverse_wishart(dof: f64, scale: &DMatrix<f64>, rng: &mut RngStream) -> Result<DMatrix<f64>> {
    let p = scale.nrows();
    if !(dof > p as f64 - 1.0) {
        return Err(Error::arg(format!("inverse Wishart needs dof > p - 1 = {}, got {dof}", p as f64 - 1.0)));
    }
    linalg::require_spd(scale, "inverse-Wishart scale")?;
    let scale_inv = linalg::spd_inverse(scale, "inverse-Wishart scale")?;
    let l = linalg::cholesky_lower(&scale_inv, 1e-15)
        .map_err(|_| Error::NotPositiveDefinite("inverse-Wishart scale".into()))?;
    let mut a = DMatrix::<f64>::zeros(p, p);
    for i in 0..p {
        a[(i, i)] = draw_gamma((dof - i as f64) / 2.0, 2.0, rng).sqrt();
        for j in 0..i {
            a[(i, j)] = rng.standard_normal();
        }
    }
    // W = M Mᵀ with M = L A lower triangular; T = W⁻¹ = M⁻ᵀ M⁻¹.
    let m = l * a;
    let m_inv = lower_triangular_inverse(&m);
    let mut t = m_inv.transpose() * m_inv;
    linalg::symmetrize(&mut t);
    Ok(t)
}

fn lower_triangular_inverse(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let mut inv = DMatrix::<f64>::zeros(n, n);
    for c in 0..n {
        let mut e = DVector::<f64>::zeros(n);
        e[c] = 1.0;
        inv.set_column(c, &linalg::solve_lower(m, &e));
    }
    inv
}
