//! Closed-form predictions: consensus bounds, moment-bound constants,
//! fixed-sample and sequential asymptotics, Page operating characteristics,
//! the bank delay integral and the relative efficiencies.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::output::{Cell, Table};
use crate::quadrature::{integrate_to_cutoff, QuadratureError};
use crate::row;
use crate::stats::{
    kl_binary, kl_divergence, mean_variance, q_function, q_inverse, wald_cdf_inverse, wald_sf_unchecked, Density,
    Nonlinearity, StatsError, QUAD_TOL,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("lambda_U = {0} must lie in [0, 1)")]
    Lambda(f64),
    #[error("lambda_L = {lower} exceeds lambda_U = {upper}")]
    LambdaOrder { lower: f64, upper: f64 },
    #[error("covariance diagonal entry {0} is not positive")]
    ZeroDiagonal(usize),
    #[error("covariance matrix must be square {0}x{0}")]
    Shape(usize),
    #[error("parameter {name} = {value} is invalid")]
    Parameter { name: &'static str, value: f64 },
    #[error("false alarm rate {0} too large: log(delta01 / R) must be positive")]
    RateTooLarge(f64),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("bank delay integral: {0}")]
    Quadrature(#[from] QuadratureError),
}

/// Per-node performance coefficients and pairwise consensus coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusMetrics {
    pub gamma: Vec<f64>,
    pub rho: DMatrix<f64>,
}

impl ConsensusMetrics {
    /// Average of `gamma` over nodes.
    pub fn mean_gamma(&self) -> f64 {
        self.gamma.iter().sum::<f64>() / self.gamma.len() as f64
    }

    /// Average of `rho_ij` over unordered pairs `i < j`.
    pub fn mean_rho(&self) -> f64 {
        let m = self.gamma.len();
        let (mut s, mut k) = (0.0, 0usize);
        for i in 0..m {
            for j in i + 1..m {
                s += self.rho[(i, j)];
                k += 1;
            }
        }
        if k == 0 {
            1.0
        } else {
            s / k as f64
        }
    }
}

/// `γ_{n,i} = C_ii / σ²_n` with `σ²_n = σ²/(nM)`, and
/// `ρ_{n,ij} = 2 C_ij / (C_ii + C_jj)`.
pub fn consensus_metrics_from_covariance(
    c: &DMatrix<f64>,
    sigma2: f64,
    n: u64,
    m: usize,
) -> Result<ConsensusMetrics, AnalysisError> {
    if c.nrows() != m || c.ncols() != m {
        return Err(AnalysisError::Shape(m));
    }
    for i in 0..m {
        if !(c[(i, i)] > 0.0) {
            return Err(AnalysisError::ZeroDiagonal(i));
        }
    }
    let sigma2_n = sigma2 / (n as f64 * m as f64);
    let gamma = (0..m).map(|i| c[(i, i)] / sigma2_n).collect();
    let rho = DMatrix::from_fn(m, m, |i, j| 2.0 * c[(i, j)] / (c[(i, i)] + c[(j, j)]));
    Ok(ConsensusMetrics { gamma, rho })
}

/// The two factors of `ρ_ij`: the correlation coefficient and the ratio of
/// geometric to arithmetic mean of the two variances.
pub fn consensus_factors(c: &DMatrix<f64>, i: usize, j: usize) -> (f64, f64) {
    let (a, b) = (c[(i, i)], c[(j, j)]);
    let geo = (a * b).sqrt();
    (c[(i, j)] / geo, 2.0 * geo / (a + b))
}

/// Which update the bounds refer to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundVariant {
    /// `s_n = W(α s + β t)`: fresh samples are mixed in the same slot.
    ExchangeIncludesSample,
    /// `s_n = α W s + β t`: fresh samples are added after the exchange.
    SampleAfterExchange,
}

/// `ψ_n(λ)`.
pub fn psi(lambda: f64, n: u64, variant: BoundVariant) -> f64 {
    let nf = n as f64;
    let geo = if lambda == 1.0 { nf } else { (1.0 - lambda.powf(nf)) / (1.0 - lambda) };
    match variant {
        BoundVariant::ExchangeIncludesSample => lambda * geo / nf,
        BoundVariant::SampleAfterExchange => geo / nf,
    }
}

/// Bounds on `γ_{n,i} - 1` and `1 - ρ_{n,ij}` for `n = 1..=n_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundSet {
    pub n: Vec<u64>,
    pub psi_upper: Vec<f64>,
    pub psi_lower: Vec<f64>,
    pub gamma_lower: Vec<f64>,
    pub gamma_upper: Vec<f64>,
    pub rho_lower: Vec<f64>,
    pub rho_upper: Vec<f64>,
    pub approx_upper: Vec<f64>,
    pub approx_lower: Vec<f64>,
    /// `lim n ε_n` from the upper bound.
    pub rate: f64,
}

pub fn theorem_bounds(
    lambda_u: f64,
    lambda_l: f64,
    m: usize,
    n_max: u64,
    variant: BoundVariant,
) -> Result<BoundSet, AnalysisError> {
    if !(0.0..1.0).contains(&lambda_u) {
        return Err(AnalysisError::Lambda(lambda_u));
    }
    if !(0.0..=lambda_u).contains(&lambda_l) {
        return Err(AnalysisError::LambdaOrder { lower: lambda_l, upper: lambda_u });
    }
    let mf = m as f64;
    let approx = |lambda: f64, n: f64| match variant {
        BoundVariant::SampleAfterExchange => mf / n / (1.0 - lambda),
        BoundVariant::ExchangeIncludesSample => mf / n * lambda / (1.0 - lambda),
    };
    let mut b = BoundSet {
        n: Vec::new(),
        psi_upper: Vec::new(),
        psi_lower: Vec::new(),
        gamma_lower: Vec::new(),
        gamma_upper: Vec::new(),
        rho_lower: Vec::new(),
        rho_upper: Vec::new(),
        approx_upper: Vec::new(),
        approx_lower: Vec::new(),
        rate: match variant {
            BoundVariant::SampleAfterExchange => mf / (1.0 - lambda_u),
            BoundVariant::ExchangeIncludesSample => mf * lambda_u / (1.0 - lambda_u),
        },
    };
    for n in 1..=n_max {
        let pu = psi(lambda_u, n, variant);
        let pl = psi(lambda_l, n, variant);
        b.n.push(n);
        b.psi_upper.push(pu);
        b.psi_lower.push(pl);
        b.gamma_lower.push((mf - 1.0) * pl);
        b.gamma_upper.push((mf - 1.0) * pu);
        b.rho_lower.push(mf * pl / (1.0 + (mf - 1.0) * pu));
        b.rho_upper.push(mf * pu / (1.0 + (mf - 1.0) * pl));
        b.approx_upper.push(approx(lambda_u, n as f64));
        b.approx_lower.push(approx(lambda_l, n as f64));
    }
    Ok(b)
}

impl BoundSet {
    pub fn to_table(&self) -> Table {
        let mut t = Table::new(&[
            "n",
            "psi_U",
            "psi_L",
            "gamma_minus_1_lower",
            "gamma_minus_1_upper",
            "one_minus_rho_lower",
            "one_minus_rho_upper",
            "approx_B_L",
            "approx_B_U",
        ]);
        for k in 0..self.n.len() {
            t.push(row![
                self.n[k],
                self.psi_upper[k],
                self.psi_lower[k],
                self.gamma_lower[k],
                self.gamma_upper[k],
                self.rho_lower[k],
                self.rho_upper[k],
                self.approx_lower[k],
                self.approx_upper[k],
            ]);
        }
        t
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentBoundConstants {
    pub c1: f64,
    pub c2: f64,
}

impl MomentBoundConstants {
    /// Bound on `E[e²]` for variance `sigma2`.
    pub fn second(&self, sigma2: f64) -> f64 {
        self.c1 * sigma2
    }

    /// Bound on `E|e|³` from `ξ³` and `σ³`.
    pub fn third(&self, xi3: f64, sigma: f64) -> f64 {
        self.c1 * xi3 + self.c2 * sigma.powi(3)
    }
}

/// `C1 = M³λ/(1-λ)` and `C2 = M^{9/2}/(1-√λ) · (λ/(1-√λ) + 1/(1-λ))`.
pub fn moment_bound_constants(m: usize, lambda_u: f64) -> Result<MomentBoundConstants, AnalysisError> {
    if !(0.0..1.0).contains(&lambda_u) {
        return Err(AnalysisError::Lambda(lambda_u));
    }
    let mf = m as f64;
    let sl = lambda_u.sqrt();
    Ok(MomentBoundConstants {
        c1: mf.powi(3) * lambda_u / (1.0 - lambda_u),
        c2: mf.powf(4.5) / (1.0 - sl) * (lambda_u / (1.0 - sl) + 1.0 / (1.0 - lambda_u)),
    })
}

/// `Q(Q⁻¹(p_f) - γ d)`.
pub fn fss_asymptotic_pd(p_f: f64, gamma: f64, d: f64) -> Result<f64, AnalysisError> {
    Ok(q_function(q_inverse(p_f)? - gamma * d))
}

/// `(2 D_b(p_f, p_d)/d², 2 D_b(p_d, p_f)/d²)`: limits of `E[N_r]/r` under
/// the two hypotheses.
pub fn sequential_asymptotics(p_f: f64, p_d: f64, d: f64) -> Result<(f64, f64), AnalysisError> {
    if !(p_f < p_d) {
        return Err(AnalysisError::Parameter { name: "p_f", value: p_f });
    }
    if !(d > 0.0) {
        return Err(AnalysisError::Parameter { name: "d", value: d });
    }
    let d2 = d * d;
    Ok((2.0 * kl_binary(p_f, p_d)? / d2, 2.0 * kl_binary(p_d, p_f)? / d2))
}

/// Divergences describing a change from `f0` to `f1` observed by `M`
/// sensors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChangeModel {
    pub m: usize,
    pub delta01: f64,
    pub delta10: f64,
    /// `VAR_1[l(x)]`.
    pub var1_llr: f64,
}

impl ChangeModel {
    pub fn from_densities(pre: &Density, post: &Density, m: usize) -> Result<Self, AnalysisError> {
        let l = Nonlinearity::LogLikelihoodRatio { null: *pre, alt: *post };
        let (_, var1_llr) = mean_variance(post, &l, QUAD_TOL)?;
        Ok(ChangeModel {
            m,
            delta01: kl_divergence(pre, post)?,
            delta10: kl_divergence(post, pre)?,
            var1_llr,
        })
    }

    pub fn with_nodes(&self, m: usize) -> Self {
        ChangeModel { m, ..*self }
    }

    /// `δ = Δ10 / VAR_1[l]`.
    pub fn delta(&self) -> f64 {
        self.delta10 / self.var1_llr
    }

    /// `R_c(γ) = MΔ01 / (e^γ - γ - 1)`.
    pub fn rate(&self, gamma: f64) -> f64 {
        self.m as f64 * self.delta01 / (gamma.exp_m1() - gamma)
    }

    /// `MΔ01 e^{-γ}`.
    pub fn rate_large_gamma(&self, gamma: f64) -> f64 {
        self.m as f64 * self.delta01 * (-gamma).exp()
    }

    /// `D_c(γ) = (γ + e^{-γ} - 1) / (MΔ10)`.
    pub fn delay(&self, gamma: f64) -> f64 {
        (gamma + (-gamma).exp_m1()) / (self.m as f64 * self.delta10)
    }

    /// `γ / (MΔ10)`.
    pub fn delay_large_gamma(&self, gamma: f64) -> f64 {
        gamma / (self.m as f64 * self.delta10)
    }

    /// Inverts [`rate`](Self::rate).
    pub fn threshold_for_rate(&self, r: f64) -> Result<f64, AnalysisError> {
        if !(r > 0.0) {
            return Err(AnalysisError::Parameter { name: "R", value: r });
        }
        let k = self.m as f64 * self.delta01 / r;
        let h = |g: f64| g.exp_m1() - g - k;
        let (mut lo, mut hi) = (0.0, 1.0);
        while h(hi) < 0.0 {
            lo = hi;
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if h(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-14 * hi {
                break;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    /// `log(MΔ01/R)`.
    pub fn threshold_for_rate_large_gamma(&self, r: f64) -> f64 {
        (self.m as f64 * self.delta01 / r).ln()
    }

    /// `D_c(R)` through the accurate threshold inversion.
    pub fn operating_delay(&self, r: f64) -> Result<f64, AnalysisError> {
        Ok(self.delay(self.threshold_for_rate(r)?))
    }

    /// `log(MΔ01/R)/(MΔ10)`.
    pub fn operating_delay_large_gamma(&self, r: f64) -> f64 {
        self.threshold_for_rate_large_gamma(r) / (self.m as f64 * self.delta10)
    }
}

/// Detector families of the change-detection study.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Centralized,
    RunningConsensus,
    SingleSensor,
    Bank,
}

impl Family {
    pub fn label(self) -> &'static str {
        match self {
            Family::Centralized => "centralized",
            Family::RunningConsensus => "running_consensus",
            Family::SingleSensor => "single",
            Family::Bank => "bank",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperatingPoint {
    pub family: Family,
    pub gamma: f64,
    pub r_accurate: f64,
    pub r_large_gamma: f64,
    pub d_accurate: f64,
    pub d_large_gamma: f64,
}

/// Accurate and large-`γ` predictions of `R` and `D` for every family.
pub fn page_operating_characteristics(
    gamma_grid: &[f64],
    model: &ChangeModel,
) -> Result<Vec<OperatingPoint>, AnalysisError> {
    let single = model.with_nodes(1);
    let mut out = Vec::new();
    for &g in gamma_grid {
        if !(g > 0.0) {
            return Err(AnalysisError::Parameter { name: "gamma", value: g });
        }
        let c = OperatingPoint {
            family: Family::Centralized,
            gamma: g,
            r_accurate: model.rate(g),
            r_large_gamma: model.rate_large_gamma(g),
            d_accurate: model.delay(g),
            d_large_gamma: model.delay_large_gamma(g),
        };
        out.push(c);
        out.push(OperatingPoint { family: Family::RunningConsensus, ..c });
        out.push(OperatingPoint {
            family: Family::SingleSensor,
            gamma: g,
            r_accurate: single.rate(g),
            r_large_gamma: single.rate_large_gamma(g),
            d_accurate: single.delay(g),
            d_large_gamma: single.delay_large_gamma(g),
        });
        let bank = bank_delay(g, model)?;
        out.push(OperatingPoint {
            family: Family::Bank,
            gamma: g,
            r_accurate: model.rate(g),
            r_large_gamma: model.rate_large_gamma(g),
            d_accurate: bank.integral,
            d_large_gamma: g / model.delta10 * bank.factor,
        });
    }
    Ok(out)
}

pub fn operating_table(points: &[OperatingPoint]) -> Table {
    let mut t = Table::new(&["family", "gamma", "R_accurate", "R_largegamma", "D_accurate", "D_largegamma"]);
    for p in points {
        t.push(row![p.family.label(), p.gamma, p.r_accurate, p.r_large_gamma, p.d_accurate, p.d_large_gamma]);
    }
    t
}

/// Bank delay predictions at one threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BankDelay {
    /// `∫_0^∞ [1 - F_W(ξ; γδ)]^M dξ`.
    pub factor: f64,
    /// Single-sensor delay times `factor`.
    pub integral: f64,
    /// `(γ/Δ10) F_W⁻¹(1/(M+1); γδ)`.
    pub castillo: f64,
}

/// `∫_0^∞ [1 - F_W(ξ; z)]^M dξ`, evaluated in the log domain.
pub fn wald_min_factor(z: f64, m: usize) -> Result<f64, AnalysisError> {
    if !(z > 0.0) || !z.is_finite() {
        return Err(AnalysisError::Parameter { name: "z", value: z });
    }
    let mf = m as f64;
    let f = |xi: f64| {
        let sf = wald_sf_unchecked(xi, z);
        if sf <= 0.0 {
            0.0
        } else {
            (mf * sf.ln()).exp()
        }
    };
    Ok(integrate_to_cutoff(f, 0.0, 2.0, 1e-14, 1e-10)?.value)
}

pub fn bank_delay(gamma: f64, model: &ChangeModel) -> Result<BankDelay, AnalysisError> {
    if !(gamma > 0.0) {
        return Err(AnalysisError::Parameter { name: "gamma", value: gamma });
    }
    let z = gamma * model.delta();
    let factor = wald_min_factor(z, model.m)?;
    let single = model.with_nodes(1).delay(gamma);
    let castillo = gamma / model.delta10 * wald_cdf_inverse(1.0 / (model.m as f64 + 1.0), z)?;
    Ok(BankDelay { factor, integral: single * factor, castillo })
}

/// `g(M, R)` with `1/g = ∫[1 - F_W(ξ; δ log(MΔ01/R))]^M dξ`.
pub fn g_factor(model: &ChangeModel, r: f64) -> Result<f64, AnalysisError> {
    let gamma = model.threshold_for_rate_large_gamma(r);
    if !(gamma > 0.0) {
        return Err(AnalysisError::RateTooLarge(r));
    }
    Ok(1.0 / wald_min_factor(gamma * model.delta(), model.m)?)
}

/// Relative efficiencies at one false alarm rate. The plain fields use the
/// large-`γ` forms and are NaN where those are undefined (`R ≥ Δ01`);
/// `*_accurate` combine the accurate threshold inversions with the accurate
/// delays and the bank integral.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Efficiencies {
    pub m: usize,
    pub r: f64,
    pub eta_cr: f64,
    pub eta_sr: f64,
    pub eta_br: f64,
    pub eta_bs: f64,
    pub eta_sr_accurate: f64,
    pub eta_br_accurate: f64,
    pub eta_bs_accurate: f64,
}

pub fn relative_efficiencies(r_grid: &[f64], model: &ChangeModel) -> Result<Vec<Efficiencies>, AnalysisError> {
    let single = model.with_nodes(1);
    r_grid
        .iter()
        .map(|&r| {
            if !(r > 0.0) {
                return Err(AnalysisError::Parameter { name: "R", value: r });
            }
            let gamma_c = model.threshold_for_rate(r)?;
            let gamma_s = single.threshold_for_rate(r)?;
            let d_r = model.delay(gamma_c);
            let d_s = single.delay(gamma_s);
            let d_b = bank_delay(gamma_c, model)?.integral;
            let (eta_sr, eta_br, eta_bs) = match large_gamma_efficiencies(model, r) {
                Ok(v) => v,
                Err(AnalysisError::RateTooLarge(_)) => (f64::NAN, f64::NAN, f64::NAN),
                Err(e) => return Err(e),
            };
            Ok(Efficiencies {
                m: model.m,
                r,
                eta_cr: 1.0,
                eta_sr,
                eta_br,
                eta_bs,
                eta_sr_accurate: d_r / d_s,
                eta_br_accurate: d_r / d_b,
                eta_bs_accurate: d_s / d_b,
            })
        })
        .collect()
}

/// `(η_sr, η_br, η_bs)` from the large-`γ` forms; fails with
/// [`AnalysisError::RateTooLarge`] when `log(Δ01/R) ≤ 0`.
pub fn large_gamma_efficiencies(model: &ChangeModel, r: f64) -> Result<(f64, f64, f64), AnalysisError> {
    let mf = model.m as f64;
    let log_ratio = (model.delta01 / r).ln();
    if !(log_ratio > 0.0) {
        return Err(AnalysisError::RateTooLarge(r));
    }
    let ratio = 1.0 + mf.ln() / log_ratio;
    let g = g_factor(model, r)?;
    Ok((ratio / mf, g / mf, g / ratio))
}

pub fn efficiency_table(rows: &[Efficiencies]) -> Table {
    let mut t = Table::new(&[
        "M",
        "R",
        "eta_cr",
        "eta_sr",
        "eta_br",
        "eta_bs",
        "eta_sr_accurate",
        "eta_br_accurate",
        "eta_bs_accurate",
    ]);
    for e in rows {
        t.push(vec![
            Cell::from(e.m),
            e.r.into(),
            e.eta_cr.into(),
            e.eta_sr.into(),
            e.eta_br.into(),
            e.eta_bs.into(),
            e.eta_sr_accurate.into(),
            e.eta_br_accurate.into(),
            e.eta_bs_accurate.into(),
        ]);
    }
    t
}
