//! Executes a validated [`ScenarioFile`] and returns the tables it produces.
//!
//! Monte Carlo tables use the layout of [`results_table`]; closed-form
//! predictions go to a companion table with suffix `_theory`.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;

use thiserror::Error;

use crate::analysis::{
    efficiency_table, fss_asymptotic_pd, operating_table, page_operating_characteristics, relative_efficiencies,
    sequential_asymptotics, theorem_bounds, AnalysisError, BoundVariant, ChangeModel, Family,
};
use crate::consensus::TrajectoryWriter;
use crate::detectors::{fss_threshold, sequential_design, ChangeScenario, DetectorError, PageModes, SequentialDetector};
use crate::montecarlo::{
    estimate_covariance, estimate_error_probabilities, estimate_page, estimate_stopping, push_result, results_table,
    CovarianceExperiment, Engine, Estimate, FssExperiment, MonteCarloError, SequentialExperiment, StoppingSummary,
};
use crate::network::NetworkError;
use crate::output::{Cell, Table};
use crate::row;
use crate::scenario::{ExperimentKind, FamilyName, Measure, ScenarioError, ScenarioFile, StatisticName};
use crate::stats::{
    efficacy, kl_binary, kl_divergence, mean_variance, moments_with, q_function, q_inverse, Density, HypothesisModel,
    MomentOptions, MomentSet, Nonlinearity, StatsError, QUAD_TOL,
};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("{0}")]
    Unsupported(String),
    #[error(transparent)]
    MonteCarlo(#[from] MonteCarloError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Detector(#[from] DetectorError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error("trajectory output: {0}")]
    Io(#[from] io::Error),
}

impl RunError {
    /// Whether the failure is a problem with the input rather than the run.
    pub fn is_validation(&self) -> bool {
        matches!(self, RunError::Scenario(_) | RunError::Unsupported(_))
    }
}

/// Command-line overrides of the scenario's Monte Carlo block.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub trials: Option<usize>,
    pub threads: Option<usize>,
    /// Where to write the node trajectory of trial 0.
    pub trajectory: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct Output {
    /// Appended to the scenario stem to form the file name.
    pub suffix: &'static str,
    pub table: Table,
    /// Extra line printed after the file name; may be empty.
    pub summary: String,
}

fn output(suffix: &'static str, table: Table, summary: impl Into<String>) -> Output {
    Output { suffix, table, summary: summary.into() }
}

/// Seed of grid point `k`.
pub fn point_seed(seed: u64, k: u64) -> u64 {
    seed.wrapping_add(k.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

struct Ctx<'a> {
    sc: &'a ScenarioFile,
    name: String,
    engine: Engine,
    opts: &'a RunOptions,
}

impl Ctx<'_> {
    fn engine_at(&self, k: u64) -> Engine {
        Engine { seed: point_seed(self.engine.seed, k), ..self.engine }
    }

    fn trajectory_writer(&self) -> Result<Option<TrajectoryWriter<BufWriter<File>>>, RunError> {
        match &self.opts.trajectory {
            None => Ok(None),
            Some(p) => {
                if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                    std::fs::create_dir_all(dir)?;
                }
                Ok(Some(TrajectoryWriter::new(BufWriter::new(File::create(p)?))?))
            }
        }
    }
}

/// Runs the scenario. Validation problems surface as errors for which
/// [`RunError::is_validation`] holds.
pub fn run(sc: &ScenarioFile, opts: &RunOptions) -> Result<Vec<Output>, RunError> {
    sc.validate()?;
    let mc = sc.montecarlo.as_ref();
    let engine = Engine {
        seed: opts.seed.or(mc.map(|m| m.seed)).unwrap_or(1),
        trials: opts.trials.or(mc.map(|m| m.trials)).unwrap_or(0),
        threads: opts.threads,
    };
    if opts.trajectory.is_some()
        && !matches!(sc.experiment.kind, ExperimentKind::Bounds | ExperimentKind::Fss | ExperimentKind::Sequential)
    {
        return Err(RunError::Unsupported(format!(
            "trajectory dumps are not available for {} experiments",
            sc.experiment.kind.label()
        )));
    }
    let ctx = Ctx { sc, name: sc.experiment.name.clone().unwrap_or_else(|| sc.stem()), engine, opts };
    match sc.experiment.kind {
        ExperimentKind::Spectral => spectral(&ctx),
        ExperimentKind::Bounds => bounds(&ctx),
        ExperimentKind::Fss => fss(&ctx),
        ExperimentKind::Sequential => sequential(&ctx),
        ExperimentKind::Change => change(&ctx),
        ExperimentKind::Efficiency => efficiency(&ctx),
    }
}

fn spectral(ctx: &Ctx) -> Result<Vec<Output>, RunError> {
    let tb = ctx.sc.topology()?;
    let topo = tb.build()?;
    let s = topo.expected_gossip_matrix()?;
    let mut t = Table::new(&["topology", "M", "pairs", "v", "lambda_U", "lambda_L", "lambda_U_slot", "lambda_L_slot"]);
    for &v in &tb.exchanges {
        let (u, l) = s.per_slot(v);
        t.push(row![topo.kind().label(), topo.nodes(), topo.pairs().len(), v, s.lambda_upper, s.lambda_lower, u, l]);
    }
    let summary = format!(
        "{} M={}: lambda_U = {:.6}, lambda_L = {:.6}",
        topo.kind().label(),
        topo.nodes(),
        s.lambda_upper,
        s.lambda_lower
    );
    Ok(vec![output("", t, summary)])
}

fn bounds(ctx: &Ctx) -> Result<Vec<Output>, RunError> {
    let tb = ctx.sc.topology()?;
    let model = ctx.sc.model()?;
    let topo = tb.build()?;
    let m = topo.nodes();
    let s = topo.expected_gossip_matrix()?;
    let variant = model.bound_variant();
    let n_max = model.n_max.unwrap_or(1);
    let sigma2 = model.variance.unwrap_or(1.0);
    let mut theory = Table::new(&[
        "v",
        "n",
        "psi_U",
        "psi_L",
        "gamma_minus_1_lower",
        "gamma_minus_1_upper",
        "one_minus_rho_lower",
        "one_minus_rho_upper",
        "approx_B_L",
        "approx_B_U",
        "rate",
    ]);
    let mut res = results_table(&["metric", "v", "n"]);
    for (k, &v) in tb.exchanges.iter().enumerate() {
        let (lu, ll) = s.per_slot(v);
        let b = theorem_bounds(lu, ll, m, n_max, variant)?;
        for i in 0..b.n.len() {
            theory.push(row![
                v,
                b.n[i],
                b.psi_upper[i],
                b.psi_lower[i],
                b.gamma_lower[i],
                b.gamma_upper[i],
                b.rho_lower[i],
                b.rho_upper[i],
                b.approx_lower[i],
                b.approx_upper[i],
                b.rate
            ]);
        }
        let exp = CovarianceExperiment {
            topology: topo.clone(),
            exchanges: v,
            mode: model.weight_mode(),
            exchange_new_sample: variant == BoundVariant::ExchangeIncludesSample,
            sigma2,
            n_max,
        };
        let engine = ctx.engine_at(k as u64);
        if k == 0 {
            if let Some(mut w) = ctx.trajectory_writer()? {
                let mut io_err = None;
                exp.trace(engine.seed, 0, |_, run| {
                    if io_err.is_none() {
                        io_err = w.record(run).err();
                    }
                })?;
                if let Some(e) = io_err {
                    return Err(e.into());
                }
                w.into_inner().flush()?;
            }
        }
        for slot in estimate_covariance(&exp, &engine)? {
            push_result(&mut res, &ctx.name, row!["gamma", v, slot.n], &slot.gamma);
            push_result(&mut res, &ctx.name, row!["rho", v, slot.n], &slot.rho);
        }
    }
    let summary = format!("lambda_U = {:.6}, lambda_L = {:.6}", s.lambda_upper, s.lambda_lower);
    Ok(vec![output("", res, summary), output("_theory", theory, "")])
}

fn gaussian_moments(sigma2: f64) -> MomentSet {
    MomentSet { mu: 0.0, sigma2, xi3: f64::NAN, xi3_std_err: 0.0, mu_prime_at_theta0: 1.0 }
}

fn fss(ctx: &Ctx) -> Result<Vec<Output>, RunError> {
    let tb = ctx.sc.topology()?;
    let det = ctx.sc.detector()?;
    let topo = tb.build()?;
    let m = topo.nodes();
    let sigma2 = ctx.sc.model()?.variance.unwrap_or(1.0);
    let p_f = det.p_f.unwrap_or(0.05);
    let scale = det.theta_scale.unwrap_or(1.0);
    let node = det.node.unwrap_or(0);
    let grid = det.n.clone().unwrap_or_default();
    let m0 = gaussian_moments(sigma2);
    let d = (m as f64).sqrt() / sigma2.sqrt();
    let q = q_inverse(p_f)?;
    let mut theory = Table::new(&["n", "theta", "p_f", "p_d_centralized", "p_d_asymptotic"]);
    for &n in &grid {
        let theta = scale / (n as f64).sqrt();
        let pd = q_function(q - ((n * m as u64) as f64).sqrt() * theta / sigma2.sqrt());
        theory.push(row![n, theta, p_f, pd, fss_asymptotic_pd(p_f, scale, d)?]);
    }
    let mut res = results_table(&["detector", "metric", "v", "n"]);
    let mut k = 0u64;
    for &v in &tb.exchanges {
        for &n in &grid {
            let exp = FssExperiment {
                topology: topo.clone(),
                exchanges: v,
                sigma2,
                n,
                theta: scale / (n as f64).sqrt(),
                threshold: fss_threshold(p_f, n, &m0, m)?,
                node,
            };
            let engine = ctx.engine_at(k);
            if k == 0 {
                if let Some(mut w) = ctx.trajectory_writer()? {
                    let mut io_err = None;
                    exp.trace(engine.seed, 0, true, |run| {
                        if io_err.is_none() {
                            io_err = w.record(run).err();
                        }
                    })?;
                    if let Some(e) = io_err {
                        return Err(e.into());
                    }
                    w.into_inner().flush()?;
                }
            }
            let e = estimate_error_probabilities(&exp, &engine)?;
            push_result(&mut res, &ctx.name, row!["centralized", "p_f", v, n], &e.p_f_centralized);
            push_result(&mut res, &ctx.name, row!["centralized", "p_d", v, n], &e.p_d_centralized);
            push_result(&mut res, &ctx.name, row!["consensus", "p_f", v, n], &e.p_f_node);
            push_result(&mut res, &ctx.name, row!["consensus", "p_d", v, n], &e.p_d_node);
            k += 1;
        }
    }
    Ok(vec![output("", res, ""), output("_theory", theory, "")])
}

/// One grid point of a sequential sweep.
pub struct SequentialPoint {
    pub snr: f64,
    pub theta: f64,
    pub r: f64,
    pub detector: SequentialDetector,
    pub nonlinearity: Nonlinearity,
    pub model: HypothesisModel,
    /// Predicted `(E_0[N] + E_1[N]) / 2`.
    pub asymptote_en: f64,
    pub max_n: u64,
}

/// Designs the detector for SNR `snr_db` (dB, relative to the null variance)
/// and nominal `p_e`. `truncation` scales the horizon relative to the
/// predicted run length.
pub fn sequential_point(
    null: Density,
    statistic: StatisticName,
    m: usize,
    p_e: f64,
    snr_db: f64,
    truncation: f64,
) -> Result<SequentialPoint, RunError> {
    let snr = 10f64.powf(snr_db / 10.0);
    let theta = (snr * null.variance()).sqrt();
    let r = 1.0 / (theta * theta);
    let model = HypothesisModel::new(null, null.shifted(theta), 0.0, theta)?;
    let nonlinearity = match statistic {
        StatisticName::Identity => Nonlinearity::Identity,
        StatisticName::Llr => Nonlinearity::llr(&model),
        StatisticName::Score => Nonlinearity::score(&model),
    };
    let m0 = moments_with(&model, &nonlinearity, 0.0, 1, &MomentOptions::default())?;
    let mu_r = mean_variance(&model.density_at(theta), &nonlinearity, QUAD_TOL)?.0;
    let detector = sequential_design(p_e, 1.0 - p_e, r, &m0, mu_r, m)?;
    let (e0, e1) = sequential_asymptotics(p_e, 1.0 - p_e, efficacy(&m0, m)?)?;
    let asymptote_en = r * 0.5 * (e0 + e1);
    let max_n = (truncation * r * e0.max(e1)).ceil().max(100.0) as u64;
    Ok(SequentialPoint { snr, theta, r, detector, nonlinearity, model, asymptote_en, max_n })
}

/// Wald's approximation of the centralized SPRT sample number at error
/// probabilities `(p_f, p_d)`.
pub fn wald_sprt_asn(model: &HypothesisModel, m: usize, p_f: f64, p_d: f64) -> Result<f64, RunError> {
    let k01 = m as f64 * kl_divergence(&model.null_dist, &model.alt_dist)?;
    let k10 = m as f64 * kl_divergence(&model.alt_dist, &model.null_dist)?;
    Ok(0.5 * (kl_binary(p_f, p_d)? / k01 + kl_binary(p_d, p_f)? / k10))
}

fn push_stopping(res: &mut Table, name: &str, label: &str, params: &[Cell], s: &StoppingSummary, snr: f64) {
    let mut with = |metric: &str, e: &Estimate| {
        let mut p = row![label, metric];
        p.extend_from_slice(params);
        push_result(res, name, p, e);
    };
    with("en", &s.en);
    with("en_snr", &Estimate { value: s.en.value * snr, std_err: s.en.std_err * snr, ..s.en });
    with("p_e", &s.p_e);
    with("p_f", &s.p_f);
    with("p_d", &s.p_d);
}

fn sequential(ctx: &Ctx) -> Result<Vec<Output>, RunError> {
    let tb = ctx.sc.topology()?;
    let model = ctx.sc.model()?;
    let det = ctx.sc.detector()?;
    let topo = tb.build()?;
    let m = topo.nodes();
    let null = model.null_density()?;
    let statistic = det.statistic.unwrap_or(match null {
        Density::Gaussian { .. } => StatisticName::Identity,
        _ => StatisticName::Score,
    });
    let truncation = det.truncation.unwrap_or(100.0);
    let mut theory =
        Table::new(&["v", "p_e", "snr_db", "theta", "r", "eta", "a", "b", "asymptote_en", "asymptote_en_snr", "max_n"]);
    let mut res = results_table(&["detector", "metric", "v", "p_e", "snr_db"]);
    let mut extra = Vec::new();
    let mut k = 0u64;
    for &v in &tb.exchanges {
        for &p_e in det.p_e.as_deref().unwrap_or_default() {
            for &db in det.snr_db.as_deref().unwrap_or_default() {
                let pt = sequential_point(null, statistic, m, p_e, db, truncation)?;
                let d = &pt.detector;
                theory.push(row![
                    v,
                    p_e,
                    db,
                    pt.theta,
                    pt.r,
                    d.eta,
                    d.a,
                    d.b,
                    pt.asymptote_en,
                    pt.asymptote_en * pt.snr,
                    pt.max_n
                ]);
                let exp = SequentialExperiment {
                    topology: topo.clone(),
                    exchanges: v,
                    null_dist: null,
                    theta0: 0.0,
                    theta_alt: pt.theta,
                    nonlinearity: pt.nonlinearity,
                    detector: pt.detector,
                    max_n: pt.max_n,
                };
                let engine = ctx.engine_at(k);
                if k == 0 {
                    write_sequential_trace(ctx, &exp, &engine, &mut extra)?;
                }
                let est = estimate_stopping(&exp, &engine)?;
                let params = row![v, p_e, db];
                push_stopping(&mut res, &ctx.name, "centralized", &params, &est.centralized, pt.snr);
                push_stopping(&mut res, &ctx.name, "consensus", &params, &est.consensus, pt.snr);
                let c = &est.consensus;
                let are = wald_sprt_asn(&pt.model, m, c.p_f.value, c.p_d.value)
                    .map(|w| w / c.en.value)
                    .unwrap_or(f64::NAN);
                let mut p = row!["consensus", "are_wald"];
                p.extend_from_slice(&params);
                push_result(&mut res, &ctx.name, p, &Estimate { value: are, std_err: are * c.en.std_err / c.en.value, ..c.en });
                let mut p = row!["consensus", "relative_spread"];
                p.extend_from_slice(&params);
                let spread = est.median_relative_spread();
                push_result(&mut res, &ctx.name, p, &Estimate { value: spread, std_err: f64::NAN, ..c.en });
                if det.sprt.unwrap_or(false) {
                    let sprt = SequentialExperiment {
                        nonlinearity: Nonlinearity::llr(&pt.model),
                        detector: SequentialDetector {
                            r: 1.0,
                            eta: 0.0,
                            a: (p_e / (1.0 - p_e)).ln(),
                            b: ((1.0 - p_e) / p_e).ln(),
                            nodes: m,
                        },
                        ..exp
                    };
                    let e = estimate_stopping(&sprt, &engine)?;
                    push_stopping(&mut res, &ctx.name, "sprt", &params, &e.centralized, pt.snr);
                }
                k += 1;
            }
        }
    }
    let mut out = vec![output("", res, ""), output("_theory", theory, "")];
    out.extend(extra);
    Ok(out)
}

fn write_sequential_trace(
    ctx: &Ctx,
    exp: &SequentialExperiment,
    engine: &Engine,
    extra: &mut Vec<Output>,
) -> Result<(), RunError> {
    if let Some(mut w) = ctx.trajectory_writer()? {
        let mut io_err = None;
        exp.trace(engine.seed, 0, true, |run| {
            if io_err.is_none() {
                io_err = w.record(run).err();
            }
        })?;
        if let Some(e) = io_err {
            return Err(e.into());
        }
        w.into_inner().flush()?;
    }
    if ctx.sc.detector()?.realization.unwrap_or(false) {
        let d = exp.detector;
        let m = exp.topology.nodes();
        let mut t = Table::new(&["n", "node", "statistic", "centralized", "lower", "upper"]);
        let (central, nodes) = exp.trace(engine.seed, 0, true, |run| {
            let n = run.slot();
            let shift = n as f64 * m as f64 * d.eta;
            for (j, s) in run.state().iter().enumerate() {
                t.push(row![n, j, s - shift, run.sample_sum() - shift, d.a, d.b]);
            }
        })?;
        let mut stops = Table::new(&["detector", "stopping_time"]);
        let fmt = |s: Option<u64>| s.map_or(Cell::Text("truncated".into()), Cell::from);
        stops.push(vec!["centralized".into(), fmt(central)]);
        for (j, s) in nodes.iter().enumerate() {
            stops.push(vec![format!("node{j}").into(), fmt(*s)]);
        }
        extra.push(output("_realization", t, ""));
        extra.push(output("_stops", stops, ""));
    }
    Ok(())
}

fn families(names: &[FamilyName]) -> PageModes {
    PageModes {
        centralized: names.contains(&FamilyName::Centralized),
        consensus: names.contains(&FamilyName::Consensus),
        single: names.contains(&FamilyName::Single),
        bank: names.contains(&FamilyName::Bank),
    }
}

fn change(ctx: &Ctx) -> Result<Vec<Output>, RunError> {
    let tb = ctx.sc.topology()?;
    let det = ctx.sc.detector()?;
    let topo = tb.build()?;
    let m = topo.nodes();
    let (pre, post) = ctx.sc.model()?.change_densities()?;
    let model = ChangeModel::from_densities(&pre, &post, m)?;
    let gammas = det.gamma.clone().unwrap_or_default();
    let all = [FamilyName::Centralized, FamilyName::Consensus, FamilyName::Single, FamilyName::Bank];
    let modes = families(det.families.as_deref().unwrap_or(&all));
    let measures = det.measure.clone().unwrap_or_else(|| vec![Measure::FalseAlarm, Measure::Delay]);
    let truncation = det.truncation.unwrap_or(100.0);
    let points = page_operating_characteristics(&gammas, &model)?;
    let mut res = results_table(&["family", "metric", "v", "gamma"]);
    let mut k = 0u64;
    for &v in &tb.exchanges {
        for &g in &gammas {
            let pts: Vec<_> = points.iter().filter(|p| p.gamma == g).collect();
            let enabled = |f: Family| match f {
                Family::Centralized => modes.centralized,
                Family::RunningConsensus => modes.consensus,
                Family::SingleSensor => modes.single,
                Family::Bank => modes.bank,
            };
            for &meas in &measures {
                let longest = pts
                    .iter()
                    .filter(|p| enabled(p.family))
                    .map(|p| match meas {
                        Measure::FalseAlarm => 1.0 / p.r_accurate,
                        Measure::Delay => p.d_accurate,
                    })
                    .fold(0.0, f64::max);
                let sc = ChangeScenario {
                    topology: topo.clone(),
                    exchanges: v,
                    pre,
                    post,
                    change_time: match meas {
                        Measure::FalseAlarm => None,
                        Measure::Delay => Some(1),
                    },
                    gamma: g,
                    consensus_offset: det.consensus_offset.unwrap_or(0.0),
                    gamma_single: g,
                    node: det.node.unwrap_or(0),
                    max_n: (truncation * longest).ceil().max(1000.0) as u64,
                    modes,
                };
                let e = estimate_page(&sc, &ctx.engine_at(k))?;
                k += 1;
                for (family, est) in [
                    (Family::Centralized, e.centralized),
                    (Family::RunningConsensus, e.consensus),
                    (Family::SingleSensor, e.single),
                    (Family::Bank, e.bank),
                ] {
                    if !enabled(family) {
                        continue;
                    }
                    let (metric, est) = match meas {
                        Measure::FalseAlarm => ("rate", est.reciprocal()),
                        Measure::Delay => ("delay", est),
                    };
                    push_result(&mut res, &ctx.name, row![family.label(), metric, v, g], &est);
                }
            }
        }
    }
    let summary = format!(
        "Delta01 = {:.6e}, Delta10 = {:.6e}, delta = {:.6}",
        model.delta01,
        model.delta10,
        model.delta()
    );
    Ok(vec![output("", res, summary), output("_theory", operating_table(&points), "")])
}

fn efficiency(ctx: &Ctx) -> Result<Vec<Output>, RunError> {
    let det = ctx.sc.detector()?;
    let (pre, post) = ctx.sc.model()?.change_densities()?;
    let rates = det.rate.clone().unwrap_or_default();
    let mut rows = Vec::new();
    for &m in det.m.as_deref().unwrap_or_default() {
        let model = ChangeModel::from_densities(&pre, &post, m)?;
        rows.extend(relative_efficiencies(&rates, &model)?);
    }
    Ok(vec![output("", efficiency_table(&rows), "")])
}
