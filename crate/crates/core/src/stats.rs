//! Sampling distributions, detection nonlinearities, their moments, and the
//! special functions used by thresholds and operating characteristics.

use std::f64::consts::{PI, SQRT_2};

use rand::Rng;
use rand_distr::StandardNormal;
use statrs::function::erf::erfc_inv;
use thiserror::Error;

use crate::quadrature::{integrate_real_line_scaled, QuadratureError};

/// Default relative tolerance for moment quadrature.
pub const QUAD_TOL: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("probability {0} outside (0, 1)")]
    Probability(f64),
    #[error("variance must be positive, got {0}")]
    Variance(f64),
    #[error("mixture weight {0} outside (0, 1)")]
    MixtureWeight(f64),
    #[error("argument {name} = {value} outside its domain")]
    Domain { name: &'static str, value: f64 },
    #[error("derivative of the mean at theta0 vanishes")]
    ZeroDerivative,
    #[error("quadrature failed: {0}")]
    Quadrature(#[from] QuadratureError),
}

/// Right tail of the standard Gaussian.
pub fn q_function(x: f64) -> f64 {
    0.5 * libm::erfc(x / SQRT_2)
}

/// Standard Gaussian density.
pub fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Inverse of [`q_function`].
pub fn q_inverse(p: f64) -> Result<f64, StatsError> {
    if !(p > 0.0 && p < 1.0) {
        return Err(StatsError::Probability(p));
    }
    let mut x = SQRT_2 * erfc_inv(2.0 * p);
    for _ in 0..2 {
        let pdf = std_normal_pdf(x);
        if pdf <= 0.0 {
            break;
        }
        let dx = (q_function(x) - p) / pdf;
        if !dx.is_finite() {
            break;
        }
        x += dx;
    }
    Ok(x)
}

/// `ln Q(u)`, accurate far into the right tail.
pub fn log_q(u: f64) -> f64 {
    if u <= 8.0 {
        return q_function(u).ln();
    }
    let u2 = u * u;
    let mut series = 1.0;
    let mut term = 1.0;
    let mut k = 1.0;
    loop {
        let next = -term * (2.0 * k - 1.0) / u2;
        if next.abs() >= term.abs() || next.abs() < 1e-17 {
            break;
        }
        series += next;
        term = next;
        k += 1.0;
    }
    -0.5 * u2 - u.ln() - 0.5 * (2.0 * PI).ln() + series.ln()
}

/// Binary Kullback-Leibler divergence in nats.
pub fn kl_binary(p: f64, q: f64) -> Result<f64, StatsError> {
    for v in [p, q] {
        if !(v > 0.0 && v < 1.0) {
            return Err(StatsError::Probability(v));
        }
    }
    Ok(p * (p / q).ln() + (1.0 - p) * ((1.0 - p) / (1.0 - q)).ln())
}

/// CDF of the unit-mean Wald (inverse Gaussian) law with shape `z`:
/// `Φ((x-1)√(z/x)) + e^{2z} Q((x+1)√(z/x))`.
pub fn wald_cdf(x: f64, z: f64) -> Result<f64, StatsError> {
    if !(z > 0.0) || !z.is_finite() {
        return Err(StatsError::Domain { name: "z", value: z });
    }
    if x.is_nan() {
        return Err(StatsError::Domain { name: "x", value: x });
    }
    Ok(wald_cdf_unchecked(x, z))
}

pub(crate) fn wald_cdf_unchecked(x: f64, z: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x.is_infinite() {
        return 1.0;
    }
    let r = (z / x).sqrt();
    let first = q_function(-(x - 1.0) * r);
    let second = (2.0 * z + log_q((x + 1.0) * r)).exp();
    (first + second).clamp(0.0, 1.0)
}

/// Complementary Wald CDF `1 - F_W(x; z)`, computed without cancellation
/// in the right tail.
pub(crate) fn wald_sf_unchecked(x: f64, z: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x.is_infinite() {
        return 0.0;
    }
    let r = (z / x).sqrt();
    let tail = q_function((x - 1.0) * r);
    let second = (2.0 * z + log_q((x + 1.0) * r)).exp();
    (tail - second).clamp(0.0, 1.0)
}

/// Quantile of the unit-mean Wald law by bracketed bisection.
pub fn wald_cdf_inverse(y: f64, z: f64) -> Result<f64, StatsError> {
    if !(y > 0.0 && y < 1.0) {
        return Err(StatsError::Probability(y));
    }
    wald_cdf(1.0, z)?;
    let f = |x: f64| wald_cdf_unchecked(x, z);
    let mut lo = 1e-8;
    let mut hi = 1.0;
    while f(lo) > y {
        hi = lo;
        lo *= 0.5;
        if lo < 1e-300 {
            return Ok(lo);
        }
    }
    while f(hi) < y {
        lo = hi;
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(StatsError::Domain { name: "y", value: y });
        }
    }
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if (fm - y).abs() < 1e-10 && hi - lo < 1e-12 * hi.max(1.0) {
            return Ok(mid);
        }
        if fm < y {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Sampling distribution of a single observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Density {
    Gaussian { mean: f64, variance: f64 },
    /// `p N(mean, var1) + (1-p) N(mean, var2)`.
    GaussianMixture { p: f64, mean: f64, var1: f64, var2: f64 },
    /// Zero-mean Gaussian used for variance-change problems.
    GaussianVarChange { variance: f64 },
}

impl Density {
    pub fn validate(&self) -> Result<(), StatsError> {
        let check = |v: f64| if v > 0.0 && v.is_finite() { Ok(()) } else { Err(StatsError::Variance(v)) };
        match *self {
            Density::Gaussian { variance, .. } | Density::GaussianVarChange { variance } => check(variance),
            Density::GaussianMixture { p, var1, var2, .. } => {
                if !(p > 0.0 && p < 1.0) {
                    return Err(StatsError::MixtureWeight(p));
                }
                check(var1)?;
                check(var2)
            }
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            Density::Gaussian { mean, .. } | Density::GaussianMixture { mean, .. } => mean,
            Density::GaussianVarChange { .. } => 0.0,
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            Density::Gaussian { variance, .. } | Density::GaussianVarChange { variance } => variance,
            Density::GaussianMixture { p, var1, var2, .. } => p * var1 + (1.0 - p) * var2,
        }
    }

    /// The same shape moved by `delta`.
    pub fn shifted(&self, delta: f64) -> Density {
        match *self {
            Density::Gaussian { mean, variance } => Density::Gaussian { mean: mean + delta, variance },
            Density::GaussianMixture { p, mean, var1, var2 } => {
                Density::GaussianMixture { p, mean: mean + delta, var1, var2 }
            }
            Density::GaussianVarChange { variance } => Density::Gaussian { mean: delta, variance },
        }
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        let ln_norm = |d: f64, v: f64| -0.5 * (d * d / v + (2.0 * PI * v).ln());
        match *self {
            Density::Gaussian { mean, variance } => ln_norm(x - mean, variance),
            Density::GaussianVarChange { variance } => ln_norm(x, variance),
            Density::GaussianMixture { p, mean, var1, var2 } => {
                let a = p.ln() + ln_norm(x - mean, var1);
                let b = (1.0 - p).ln() + ln_norm(x - mean, var2);
                log_add(a, b)
            }
        }
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.ln_pdf(x).exp()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        match *self {
            Density::Gaussian { mean, variance } => mean + variance.sqrt() * z,
            Density::GaussianVarChange { variance } => variance.sqrt() * z,
            Density::GaussianMixture { p, mean, var1, var2 } => {
                let v = if rng.random::<f64>() < p { var1 } else { var2 };
                mean + v.sqrt() * z
            }
        }
    }

    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        for x in out.iter_mut() {
            *x = self.sample(rng);
        }
    }

    /// Centre and scale suited to the whole-line quadrature map.
    fn quad_frame(&self) -> (f64, f64) {
        let sd = match *self {
            Density::GaussianMixture { var1, var2, .. } => var1.max(var2).sqrt(),
            _ => self.variance().sqrt(),
        };
        (self.mean(), sd)
    }

    /// `E[g(x)]` under this density.
    pub fn expect<G: Fn(f64) -> f64>(&self, g: G, rel_tol: f64) -> Result<f64, StatsError> {
        let (c, s) = self.quad_frame();
        let r = integrate_real_line_scaled(|x| g(x) * self.pdf(x), c, s, rel_tol)?;
        Ok(r.value)
    }
}

fn log_add(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Pair of hypotheses for a location-type family `f_θ`.
///
/// `density_at(θ)` moves `null_dist` by `θ - theta0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HypothesisModel {
    pub null_dist: Density,
    pub alt_dist: Density,
    pub theta0: f64,
    pub theta: f64,
}

impl HypothesisModel {
    pub fn new(null_dist: Density, alt_dist: Density, theta0: f64, theta: f64) -> Result<Self, StatsError> {
        null_dist.validate()?;
        alt_dist.validate()?;
        Ok(HypothesisModel { null_dist, alt_dist, theta0, theta })
    }

    /// Gaussian shift in mean: `N(θ0, σ²)` against `N(θ, σ²)`.
    pub fn gaussian_shift(variance: f64, theta0: f64, theta: f64) -> Result<Self, StatsError> {
        let null = Density::Gaussian { mean: theta0, variance };
        Self::new(null, null.shifted(theta - theta0), theta0, theta)
    }

    pub fn density_at(&self, theta: f64) -> Density {
        self.null_dist.shifted(theta - self.theta0)
    }
}

/// Per-sample transformation `t(x)` applied before the data enter the
/// consensus recursion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Nonlinearity {
    Identity,
    /// `l(x) = ln f_alt(x) - ln f_null(x)`.
    LogLikelihoodRatio { null: Density, alt: Density },
    /// Location score `∂/∂θ ln f(x - θ)` at `θ = 0` of the given density.
    Score(Density),
}

impl Nonlinearity {
    pub fn llr(model: &HypothesisModel) -> Self {
        Nonlinearity::LogLikelihoodRatio { null: model.null_dist, alt: model.alt_dist }
    }

    pub fn score(model: &HypothesisModel) -> Self {
        Nonlinearity::Score(model.null_dist)
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Nonlinearity::Identity => x,
            Nonlinearity::LogLikelihoodRatio { null, alt } => llr_value(null, alt, x),
            Nonlinearity::Score(d) => score_value(d, x),
        }
    }

    pub fn apply(&self, xs: &[f64], out: &mut [f64]) {
        for (o, &x) in out.iter_mut().zip(xs) {
            *o = self.eval(x);
        }
    }
}

fn llr_value(null: &Density, alt: &Density, x: f64) -> f64 {
    match (null, alt) {
        (Density::GaussianVarChange { variance: v0 }, Density::GaussianVarChange { variance: v1 }) => {
            0.5 * x * x * (1.0 / v0 - 1.0 / v1) + 0.5 * (v0 / v1).ln()
        }
        _ => alt.ln_pdf(x) - null.ln_pdf(x),
    }
}

fn score_value(d: &Density, x: f64) -> f64 {
    match *d {
        Density::Gaussian { mean, variance } => (x - mean) / variance,
        Density::GaussianVarChange { variance } => x / variance,
        Density::GaussianMixture { p, mean, var1, var2 } => {
            let dx = x - mean;
            let a = p.ln() - 0.5 * var1.ln() - 0.5 * dx * dx / var1;
            let b = (1.0 - p).ln() - 0.5 * var2.ln() - 0.5 * dx * dx / var2;
            let m = a.max(b);
            let (wa, wb) = ((a - m).exp(), (b - m).exp());
            dx * (wa / var1 + wb / var2) / (wa + wb)
        }
    }
}

/// Moments of `t(x)` under `f_θ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentSet {
    pub mu: f64,
    pub sigma2: f64,
    /// `E‖t(x) - μ1‖³` over a vector of `M` iid samples.
    pub xi3: f64,
    /// Standard error of `xi3`; zero when it came from quadrature.
    pub xi3_std_err: f64,
    pub mu_prime_at_theta0: f64,
}

impl MomentSet {
    pub fn sigma(&self) -> f64 {
        self.sigma2.sqrt()
    }
}

/// Controls the Monte Carlo estimate of `ξ³` when `M > 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentOptions {
    pub rel_tol: f64,
    pub xi3_samples: usize,
    pub seed: u64,
}

impl Default for MomentOptions {
    fn default() -> Self {
        MomentOptions { rel_tol: QUAD_TOL, xi3_samples: 1_000_000, seed: 0x5eed }
    }
}

/// Mean and variance of `t(x)` for `x` drawn from `density`.
pub fn mean_variance(density: &Density, t: &Nonlinearity, rel_tol: f64) -> Result<(f64, f64), StatsError> {
    if let (Nonlinearity::Identity, Density::Gaussian { .. } | Density::GaussianVarChange { .. }) = (t, density) {
        return Ok((density.mean(), density.variance()));
    }
    let mu = density.expect(|x| t.eval(x), rel_tol)?;
    let var = density.expect(|x| (t.eval(x) - mu).powi(2), rel_tol)?;
    Ok((mu, var))
}

fn mu_prime(model: &HypothesisModel, t: &Nonlinearity, rel_tol: f64) -> Result<f64, StatsError> {
    match (t, model.null_dist) {
        (Nonlinearity::Identity, _) => return Ok(1.0),
        (Nonlinearity::Score(Density::Gaussian { variance, .. }), Density::Gaussian { .. }) => {
            return Ok(1.0 / variance)
        }
        _ => {}
    }
    let h = 1e-5 * model.theta0.abs().max(1.0);
    let up = mean_variance(&model.density_at(model.theta0 + h), t, rel_tol)?.0;
    let dn = mean_variance(&model.density_at(model.theta0 - h), t, rel_tol)?.0;
    Ok((up - dn) / (2.0 * h))
}

/// `μ(θ)`, `σ²(θ)`, `ξ³(θ)` for `M` sensors and `μ'(θ0)`.
pub fn moments(model: &HypothesisModel, t: &Nonlinearity, theta: f64, m: usize) -> Result<MomentSet, StatsError> {
    moments_with(model, t, theta, m, &MomentOptions::default())
}

pub fn moments_with(
    model: &HypothesisModel,
    t: &Nonlinearity,
    theta: f64,
    m: usize,
    opts: &MomentOptions,
) -> Result<MomentSet, StatsError> {
    let density = model.density_at(theta);
    let (mu, sigma2) = mean_variance(&density, t, opts.rel_tol)?;
    if !(sigma2 > 0.0) {
        return Err(StatsError::Variance(sigma2));
    }
    let (xi3, xi3_std_err) = if m <= 1 {
        (density.expect(|x| (t.eval(x) - mu).abs().powi(3), opts.rel_tol)?, 0.0)
    } else {
        xi3_monte_carlo(&density, t, mu, m, opts.xi3_samples, opts.seed)
    };
    let mu_prime_at_theta0 = mu_prime(model, t, opts.rel_tol)?;
    Ok(MomentSet { mu, sigma2, xi3, xi3_std_err, mu_prime_at_theta0 })
}

/// Monte Carlo estimate of `E‖t(x) - μ1‖³` for `M`-vectors, with its standard
/// error.
pub fn xi3_monte_carlo(
    density: &Density,
    t: &Nonlinearity,
    mu: f64,
    m: usize,
    samples: usize,
    seed: u64,
) -> (f64, f64) {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let (mut s1, mut s2) = (0.0, 0.0);
    for _ in 0..samples {
        let mut norm2 = 0.0;
        for _ in 0..m {
            let d = t.eval(density.sample(&mut rng)) - mu;
            norm2 += d * d;
        }
        let v = norm2 * norm2.sqrt();
        s1 += v;
        s2 += v * v;
    }
    let n = samples as f64;
    let mean = s1 / n;
    let var = (s2 / n - mean * mean).max(0.0) * n / (n - 1.0).max(1.0);
    (mean, (var / n).sqrt())
}

/// `√M μ'(θ0) / σ(θ0)`; `moments` must be evaluated at `θ0`.
pub fn efficacy(moments: &MomentSet, m: usize) -> Result<f64, StatsError> {
    if moments.mu_prime_at_theta0 == 0.0 {
        return Err(StatsError::ZeroDerivative);
    }
    if !(moments.sigma2 > 0.0) {
        return Err(StatsError::Variance(moments.sigma2));
    }
    Ok((m as f64).sqrt() * moments.mu_prime_at_theta0 / moments.sigma())
}

/// `KL(a ‖ b)` in nats.
pub fn kl_divergence(a: &Density, b: &Density) -> Result<f64, StatsError> {
    a.validate()?;
    b.validate()?;
    let gauss = |d: &Density| match *d {
        Density::Gaussian { mean, variance } => Some((mean, variance)),
        Density::GaussianVarChange { variance } => Some((0.0, variance)),
        Density::GaussianMixture { .. } => None,
    };
    if let (Some((ma, va)), Some((mb, vb))) = (gauss(a), gauss(b)) {
        return Ok(0.5 * (va / vb - 1.0 + (ma - mb).powi(2) / vb + (vb / va).ln()));
    }
    Ok(a.expect(|x| a.ln_pdf(x) - b.ln_pdf(x), QUAD_TOL)?.max(0.0))
}
