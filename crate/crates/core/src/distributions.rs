//! Samplers and log-densities used by the models and their hyper-priors.
//!
//! Samplers that feed the objective come in tape form so gradients flow
//! through the reparameterization; the plain `f64` densities are used by
//! evaluation code and as building blocks for tests.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use statrs::function::gamma::ln_gamma;

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::linalg;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Deterministic random stream. Identical seeds give bit-identical draws.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        RngStream { seed, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    /// An independent stream derived from this stream's seed.
    pub fn derive(&self, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream.wrapping_add(1));
        RngStream { seed: self.seed, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    /// Index drawn from unnormalized nonnegative weights.
    pub fn categorical(&mut self, weights: &[f64]) -> usize {
        let total: f64 = weights.iter().sum();
        let mut u = self.uniform() * total;
        for (i, &w) in weights.iter().enumerate() {
            if u < w {
                return i;
            }
            u -= w;
        }
        weights.len() - 1
    }

    /// Poisson draw with positive rate `lambda`.
    pub fn poisson(&mut self, lambda: f64) -> f64 {
        Poisson::new(lambda).expect("positive Poisson rate").sample(&mut self.rng)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.rng);
    }

    pub fn normal_tensor(&mut self, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::from_parts(shape.to_vec(), (0..n).map(|_| self.normal()).collect())
    }
}

/// Gumbel(0, 1) draws `−log(−log U)` with `U` clamped to `[1e-12, 1 − 1e-12]`.
pub fn sample_gumbel(shape: &[usize], rng: &mut RngStream) -> Tensor {
    let n = shape.iter().product();
    let values = (0..n)
        .map(|_| {
            let u = rng.uniform().clamp(1e-12, 1.0 - 1e-12);
            -(-u.ln()).ln()
        })
        .collect();
    Tensor::from_parts(shape.to_vec(), values)
}

/// Relaxed categorical sample `softmax((g + log π)/τ)` over the trailing
/// axis of `logits` with fresh Gumbel noise.
pub fn gumbel_softmax(tape: &mut Tape, logits: Var, tau: f64, rng: &mut RngStream) -> Result<Var> {
    let noise = sample_gumbel(tape.shape(logits), rng);
    gumbel_softmax_with_noise(tape, logits, tau, noise)
}

/// [`gumbel_softmax`] with caller-supplied noise, for frozen-noise checks.
pub fn gumbel_softmax_with_noise(tape: &mut Tape, logits: Var, tau: f64, noise: Tensor) -> Result<Var> {
    if !(tau > 0.0) {
        return Err(Error::domain("gumbel_softmax", format!("temperature {tau}")));
    }
    if noise.shape() != tape.shape(logits) {
        return Err(Error::dim("gumbel_softmax", "noise shape differs from logits"));
    }
    if !tape.value(logits).all_finite() {
        return Err(Error::domain("gumbel_softmax", "non-finite logits"));
    }
    let g = tape.constant(noise);
    let perturbed = tape.add(logits, g)?;
    let scaled = tape.scale(perturbed, 1.0 / tau);
    Ok(tape.softmax(scaled))
}

/// Logistic-normal draw `softmax(μ + σ ⊙ ε)` over the trailing axis.
pub fn logistic_normal_sample(tape: &mut Tape, mu: Var, sigma: Var, rng: &mut RngStream) -> Result<Var> {
    let noise = rng.normal_tensor(tape.shape(mu));
    logistic_normal_with_noise(tape, mu, sigma, noise)
}

pub fn logistic_normal_with_noise(tape: &mut Tape, mu: Var, sigma: Var, noise: Tensor) -> Result<Var> {
    if tape.value(sigma).values().iter().any(|&s| !(s > 0.0)) {
        return Err(Error::domain("logistic_normal", "non-positive scale"));
    }
    let eps = tape.constant(noise);
    let spread = tape.mul(sigma, eps)?;
    let pre = tape.add(mu, spread)?;
    Ok(tape.softmax(pre))
}

pub fn gaussian_logpdf(x: f64, mu: f64, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::domain("gaussian_logpdf", format!("sigma {sigma}")));
    }
    let z = (x - mu) / sigma;
    Ok(-0.5 * LN_2PI - sigma.ln() - 0.5 * z * z)
}

/// Elementwise Gaussian log-density on the tape; `mu` and `sigma` broadcast
/// against `x`. Returns the summed log-density.
pub fn gaussian_logpdf_tape(tape: &mut Tape, x: Var, mu: Var, sigma: Var) -> Result<Var> {
    let d = tape.sub(x, mu)?;
    let z = tape.div(d, sigma)?;
    let z2 = tape.square(z)?;
    let lsig = tape.log(sigma)?;
    let quad = tape.scale(z2, -0.5);
    let per = tape.sub(quad, lsig)?;
    let per = tape.add_scalar(per, -0.5 * LN_2PI);
    Ok(tape.sum_all(per))
}

/// Summed Gaussian log-density of a parameter tensor under fixed `N(mean, sd)`.
pub fn gaussian_prior_tape(tape: &mut Tape, x: Var, mean: f64, sd: f64) -> Result<Var> {
    if !(sd > 0.0) {
        return Err(Error::domain("gaussian_prior", format!("sd {sd}")));
    }
    let n = tape.value(x).len() as f64;
    let c = tape.add_scalar(x, -mean);
    let sq = tape.square(c)?;
    let s = tape.sum_all(sq);
    let s = tape.scale(s, -0.5 / (sd * sd));
    Ok(tape.add_scalar(s, -n * (0.5 * LN_2PI + sd.ln())))
}

/// Multivariate normal log-density with covariance `C Cᵀ + I` (`c` is
/// `d×r`), via the Cholesky factor.
pub fn mvn_logpdf(x: &[f64], mu: &[f64], c: &[f64], r: usize) -> Result<f64> {
    let d = x.len();
    if mu.len() != d || c.len() != d * r {
        return Err(Error::dim("mvn_logpdf", format!("x {d}, mu {}, factor {}", mu.len(), c.len())));
    }
    let sigma = linalg::factor_covariance(c, d, r);
    let l = linalg::cholesky(&sigma, d)?;
    let mut w: Vec<f64> = x.iter().zip(mu).map(|(a, b)| a - b).collect();
    linalg::forward_solve(&l, d, &mut w);
    let quad: f64 = w.iter().map(|e| e * e).sum();
    Ok(-0.5 * (d as f64 * LN_2PI + linalg::chol_logdet(&l, d) + quad))
}

/// Gamma log-density in shape–rate form: `κ log η − log Γ(κ) + (κ−1) log s − η s`.
pub fn gamma_logpdf(s: f64, shape: f64, rate: f64) -> Result<f64> {
    if !(s > 0.0 && shape > 0.0 && rate > 0.0) {
        return Err(Error::domain("gamma_logpdf", format!("s={s}, shape={shape}, rate={rate}")));
    }
    Ok(shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * s.ln() - rate * s)
}

/// Summed shape–rate Gamma log-density over a positive tensor on the tape.
pub fn gamma_prior_tape(tape: &mut Tape, s: Var, shape: f64, rate: f64) -> Result<Var> {
    if !(shape > 0.0 && rate > 0.0) {
        return Err(Error::domain("gamma_prior", format!("shape={shape}, rate={rate}")));
    }
    let n = tape.value(s).len() as f64;
    let ls = tape.log(s)?;
    let a = tape.sum_all(ls);
    let a = tape.scale(a, shape - 1.0);
    let b = tape.sum_all(s);
    let b = tape.scale(b, -rate);
    let total = tape.add(a, b)?;
    Ok(tape.add_scalar(total, n * (shape * rate.ln() - ln_gamma(shape))))
}

/// `log Γ_d(a)`, the multivariate gamma function.
pub fn ln_multigamma(a: f64, d: usize) -> f64 {
    let df = d as f64;
    df * (df - 1.0) / 4.0 * std::f64::consts::PI.ln()
        + (1..=d).map(|j| ln_gamma(a + (1.0 - j as f64) / 2.0)).sum::<f64>()
}

/// Inverse-Wishart log-density of `sigma` (`d×d`) with `nu` degrees of
/// freedom and scale `psi`.
pub fn inverse_wishart_logpdf(sigma: &[f64], d: usize, nu: f64, psi: &[f64]) -> Result<f64> {
    inverse_wishart_logpdf_with_grad(sigma, d, nu, psi).map(|(v, _)| v)
}

/// Log-density and its gradient with respect to `sigma` (symmetric form).
pub(crate) fn inverse_wishart_logpdf_with_grad(
    sigma: &[f64],
    d: usize,
    nu: f64,
    psi: &[f64],
) -> Result<(f64, Vec<f64>)> {
    if sigma.len() != d * d || psi.len() != d * d {
        return Err(Error::dim("inverse_wishart_logpdf", format!("expected {d}x{d} matrices")));
    }
    if !(nu > d as f64 - 1.0) {
        return Err(Error::domain("inverse_wishart_logpdf", format!("nu={nu} for dimension {d}")));
    }
    let ls = linalg::cholesky(sigma, d)?;
    let lp = linalg::cholesky(psi, d)
        .map_err(|_| Error::domain("inverse_wishart_logpdf", "scale matrix not positive definite"))?;
    let mut identity = vec![0.0; d * d];
    (0..d).for_each(|i| identity[i * d + i] = 1.0);
    let sigma_inv = linalg::chol_solve_matrix(&ls, d, &identity, d);
    // Σ⁻¹Ψ; its trace is tr(ΨΣ⁻¹).
    let sinv_psi = linalg::chol_solve_matrix(&ls, d, psi, d);
    let trace: f64 = (0..d).map(|i| sinv_psi[i * d + i]).sum();
    let df = d as f64;
    let value = 0.5 * nu * linalg::chol_logdet(&lp, d)
        - 0.5 * nu * df * std::f64::consts::LN_2
        - ln_multigamma(0.5 * nu, d)
        - 0.5 * (nu + df + 1.0) * linalg::chol_logdet(&ls, d)
        - 0.5 * trace;
    // ∂/∂Σ = −(ν+d+1)/2 Σ⁻¹ + ½ Σ⁻¹ Ψ Σ⁻¹
    let mut grad = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            let quad: f64 = (0..d).map(|k| sinv_psi[i * d + k] * sigma_inv[k * d + j]).sum();
            grad[i * d + j] = -0.5 * (nu + df + 1.0) * sigma_inv[i * d + j] + 0.5 * quad;
        }
    }
    // Symmetrize against round-off.
    for i in 0..d {
        for j in 0..i {
            let v = 0.5 * (grad[i * d + j] + grad[j * d + i]);
            grad[i * d + j] = v;
            grad[j * d + i] = v;
        }
    }
    Ok((value, grad))
}

pub fn uniform_categorical_logpmf(k: usize) -> Result<f64> {
    if k < 2 {
        return Err(Error::domain("uniform_categorical_logpmf", format!("K={k}")));
    }
    Ok(-(k as f64).ln())
}

/// Dirichlet-multinomial posterior predictive `(N_zs + α) / (N_s + Kα)`.
pub fn smoothed_group_prob(n_zs: f64, n_s: f64, alpha: f64, k: usize) -> f64 {
    (n_zs + alpha) / (n_s + k as f64 * alpha)
}
