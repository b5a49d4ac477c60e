//! Seeded, parallel Monte Carlo engine and the experiment drivers built on
//! it.
//!
//! Trial `t` of an experiment with seed `s` draws from ChaCha8 streams
//! derived from `(s, t)` alone, and per-trial results are collected in trial
//! order before any aggregation, so results do not depend on the number of
//! worker threads.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::consensus::{ConsensusError, ConsensusRun, WeightMode};
use crate::detectors::{
    fss_decide, run_change_detection, ChangeOutcome, ChangeScenario, Decision, DetectorError, SeqDecision,
    SequentialDetector,
};
use crate::network::{NetworkError, NetworkTopology, PairSequence};
use crate::output::{Cell, Table};
use crate::row;
use crate::stats::{Density, Nonlinearity};

#[derive(Debug, Error)]
pub enum MonteCarloError {
    #[error("need at least {min} trials, got {got}")]
    TooFewTrials { min: usize, got: usize },
    #[error("thread pool: {0}")]
    ThreadPool(#[from] rayon::ThreadPoolBuildError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Consensus(#[from] ConsensusError),
    #[error(transparent)]
    Detector(#[from] DetectorError),
    #[error("parameter {name} = {value} is invalid")]
    Parameter { name: &'static str, value: f64 },
}

/// Number of independent streams reserved per trial.
pub const STREAMS_PER_TRIAL: u64 = 8;
pub const DATA_STREAM: u64 = 0;
pub const GOSSIP_STREAM: u64 = 1;
/// Offset of the streams used for the alternative-hypothesis run.
pub const ALT_OFFSET: u64 = 2;

/// Deterministic random stream `k` of trial `trial`.
pub fn trial_rng(seed: u64, trial: u64, k: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial * STREAMS_PER_TRIAL + k);
    rng
}

/// Seed, trial count and worker cap.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Engine {
    pub seed: u64,
    pub trials: usize,
    pub threads: Option<usize>,
}

impl Engine {
    pub fn new(seed: u64, trials: usize) -> Self {
        Engine { seed, trials, threads: None }
    }

    pub fn with_threads(self, threads: Option<usize>) -> Self {
        Engine { threads, ..self }
    }

    /// Runs `f(trial)` for every trial, in parallel, returning results in
    /// trial order.
    pub fn run<T, F>(&self, f: F) -> Result<Vec<T>, MonteCarloError>
    where
        T: Send,
        F: Fn(u64) -> T + Sync + Send,
    {
        let work = || (0..self.trials as u64).into_par_iter().map(&f).collect();
        match self.threads {
            Some(n) => Ok(rayon::ThreadPoolBuilder::new().num_threads(n).build()?.install(work)),
            None => Ok(work()),
        }
    }

    /// Like [`run`](Self::run) for fallible trials; the first error in trial
    /// order is returned.
    pub fn try_run<T, F>(&self, f: F) -> Result<Vec<T>, MonteCarloError>
    where
        T: Send,
        F: Fn(u64) -> Result<T, MonteCarloError> + Sync + Send,
    {
        self.run(f)?.into_iter().collect()
    }
}

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub std_err: f64,
    /// Trials that contributed to `value`.
    pub count: usize,
    /// Trials excluded because they hit the horizon.
    pub truncated: usize,
}

impl Estimate {
    pub fn from_values(values: &[f64], truncated: usize) -> Self {
        let n = values.len();
        if n == 0 {
            return Estimate { value: f64::NAN, std_err: f64::NAN, count: 0, truncated };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0)
        } else {
            0.0
        };
        Estimate { value: mean, std_err: (var / n as f64).sqrt(), count: n, truncated }
    }

    /// Frequency of `successes` in `count` Bernoulli trials.
    pub fn from_bernoulli(successes: usize, count: usize) -> Self {
        if count == 0 {
            return Estimate { value: f64::NAN, std_err: f64::NAN, count: 0, truncated: 0 };
        }
        let p = successes as f64 / count as f64;
        Estimate { value: p, std_err: (p * (1.0 - p) / count as f64).sqrt(), count, truncated: 0 }
    }

    /// Average of two independent estimates built from the same trials;
    /// a trial counts as truncated when either side was.
    pub fn average(a: &Estimate, b: &Estimate) -> Self {
        let total = (a.count + a.truncated).max(b.count + b.truncated);
        let count = a.count.min(b.count);
        Estimate {
            value: 0.5 * (a.value + b.value),
            std_err: 0.5 * (a.std_err.powi(2) + b.std_err.powi(2)).sqrt(),
            count,
            truncated: total - count,
        }
    }

    /// `1/value` with a first-order standard error.
    pub fn reciprocal(&self) -> Self {
        Estimate { value: 1.0 / self.value, std_err: self.std_err / self.value.powi(2), ..*self }
    }
}

/// Table with the result layout
/// `scenario, <params>, estimate, std_err, n_trials, n_truncated`.
pub fn results_table(params: &[&str]) -> Table {
    let mut h = vec!["scenario"];
    h.extend_from_slice(params);
    h.extend_from_slice(&["estimate", "std_err", "n_trials", "n_truncated"]);
    Table::new(&h)
}

/// Appends a row to a table built by [`results_table`].
pub fn push_result(table: &mut Table, scenario: &str, params: Vec<Cell>, est: &Estimate) {
    let mut r = row![scenario];
    r.extend(params);
    r.extend(row![est.value, est.std_err, est.count + est.truncated, est.truncated]);
    table.push(r);
}

/// Running-consensus trajectories with zero-mean Gaussian `t(x)`.
#[derive(Debug, Clone)]
pub struct CovarianceExperiment {
    pub topology: NetworkTopology,
    pub exchanges: usize,
    pub mode: WeightMode,
    pub exchange_new_sample: bool,
    pub sigma2: f64,
    pub n_max: u64,
}

impl CovarianceExperiment {
    /// Replays trial `trial`, calling `visit` after every slot.
    pub fn trace<F: FnMut(u64, &ConsensusRun)>(&self, seed: u64, trial: u64, mut visit: F) -> Result<(), MonteCarloError> {
        let m = self.topology.nodes();
        let dist = Density::Gaussian { mean: 0.0, variance: self.sigma2 };
        let mut data = trial_rng(seed, trial, DATA_STREAM);
        let mut gossip = trial_rng(seed, trial, GOSSIP_STREAM);
        let mut run = ConsensusRun::new(m, self.mode, self.exchange_new_sample)?;
        let mut pairs = PairSequence::empty(m);
        let mut x = vec![0.0; m];
        for n in 1..=self.n_max {
            dist.sample_into(&mut data, &mut x);
            self.topology.sample_pairs_into(self.exchanges, &mut gossip, &mut pairs)?;
            run.step(&pairs, &x)?;
            visit(n, &run);
        }
        Ok(())
    }
}

/// Covariance of the node states at one slot with the averaged metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceSlot {
    pub n: u64,
    pub covariance: DMatrix<f64>,
    /// `γ_n`: node average of `γ_{n,i}`.
    pub gamma: Estimate,
    /// `ρ_n`: pair average of `ρ_{n,ij}`.
    pub rho: Estimate,
}

/// Sample covariance of `s_n` about the known zero mean for every slot, and
/// the averaged performance and consensus coefficients. `γ_n` is normalised
/// by the centralized variance `χ_n² nM σ²`.
pub fn estimate_covariance(exp: &CovarianceExperiment, engine: &Engine) -> Result<Vec<CovarianceSlot>, MonteCarloError> {
    if engine.trials < 2 {
        return Err(MonteCarloError::TooFewTrials { min: 2, got: engine.trials });
    }
    let m = exp.topology.nodes();
    let n_max = exp.n_max as usize;
    let traj: Vec<Vec<f64>> = engine.try_run(|trial| {
        let mut out = Vec::with_capacity(n_max * m);
        exp.trace(engine.seed, trial, |_, run| out.extend_from_slice(run.state()))?;
        Ok(out)
    })?;
    let t = traj.len() as f64;
    let mut slots = Vec::with_capacity(n_max);
    for k in 0..n_max {
        let n = k as u64 + 1;
        let (_, _, chi) = exp.mode.weights(n, m);
        let var_c = chi * chi * n as f64 * m as f64 * exp.sigma2;
        let mut cov = DMatrix::<f64>::zeros(m, m);
        for tr in &traj {
            let s = &tr[k * m..(k + 1) * m];
            for i in 0..m {
                for j in i..m {
                    cov[(i, j)] += s[i] * s[j];
                }
            }
        }
        for i in 0..m {
            for j in i..m {
                cov[(i, j)] /= t;
                cov[(j, i)] = cov[(i, j)];
            }
        }
        let gamma_vals: Vec<f64> = traj
            .iter()
            .map(|tr| tr[k * m..(k + 1) * m].iter().map(|s| s * s).sum::<f64>() / (m as f64 * var_c))
            .collect();
        let gamma = Estimate::from_values(&gamma_vals, 0);
        let rho = if m > 1 {
            let pairs: Vec<(usize, usize)> = (0..m).flat_map(|i| (i + 1..m).map(move |j| (i, j))).collect();
            let rho_ij: Vec<f64> =
                pairs.iter().map(|&(i, j)| 2.0 * cov[(i, j)] / (cov[(i, i)] + cov[(j, j)])).collect();
            let value = rho_ij.iter().sum::<f64>() / pairs.len() as f64;
            // delta-method influence of each trial on the pair-averaged ratio
            let infl: Vec<f64> = traj
                .iter()
                .map(|tr| {
                    let s = &tr[k * m..(k + 1) * m];
                    pairs
                        .iter()
                        .zip(&rho_ij)
                        .map(|(&(i, j), &r)| {
                            let b = cov[(i, i)] + cov[(j, j)];
                            (2.0 * s[i] * s[j] - r * (s[i] * s[i] + s[j] * s[j])) / b
                        })
                        .sum::<f64>()
                        / pairs.len() as f64
                })
                .collect();
            let se = Estimate::from_values(&infl, 0).std_err;
            Estimate { value, std_err: se, count: traj.len(), truncated: 0 }
        } else {
            Estimate { value: 1.0, std_err: 0.0, count: traj.len(), truncated: 0 }
        };
        slots.push(CovarianceSlot { n, covariance: cov, gamma, rho });
    }
    Ok(slots)
}

/// Second and third absolute moments of the consensus error per node.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorMoments {
    pub n: u64,
    /// `E[e_{n,j}]` per node.
    pub mean: Vec<Estimate>,
    pub second: Vec<Estimate>,
    pub third: Vec<Estimate>,
}

/// Moments of `e_{n,j}` at the requested slots.
pub fn estimate_error_moments(
    exp: &CovarianceExperiment,
    slots: &[u64],
    engine: &Engine,
) -> Result<Vec<ErrorMoments>, MonteCarloError> {
    let m = exp.topology.nodes();
    let mut sorted = slots.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let sub = CovarianceExperiment { n_max: sorted.last().copied().unwrap_or(0), ..exp.clone() };
    let errs: Vec<Vec<f64>> = engine.try_run(|trial| {
        let mut out = Vec::with_capacity(sorted.len() * m);
        let mut next = 0;
        sub.trace(engine.seed, trial, |n, run| {
            if next < sorted.len() && sorted[next] == n {
                out.extend(run.error_vector().expect("slot processed"));
                next += 1;
            }
        })?;
        Ok(out)
    })?;
    Ok(sorted
        .iter()
        .enumerate()
        .map(|(k, &n)| {
            let col = |j: usize, p: fn(f64) -> f64| -> Estimate {
                let v: Vec<f64> = errs.iter().map(|e| p(e[k * m + j])).collect();
                Estimate::from_values(&v, 0)
            };
            ErrorMoments {
                n,
                mean: (0..m).map(|j| col(j, |e| e)).collect(),
                second: (0..m).map(|j| col(j, |e| e * e)).collect(),
                third: (0..m).map(|j| col(j, |e| e.abs().powi(3))).collect(),
            }
        })
        .collect())
}

/// Fixed-sample-size test on Gaussian data under both hypotheses.
#[derive(Debug, Clone)]
pub struct FssExperiment {
    pub topology: NetworkTopology,
    pub exchanges: usize,
    pub sigma2: f64,
    pub n: u64,
    /// Mean under the alternative; the null mean is zero.
    pub theta: f64,
    pub threshold: f64,
    pub node: usize,
}

impl FssExperiment {
    /// Replays one trial under the null or the alternative, returning the
    /// centralized and node decisions (`true` for H1).
    pub fn trace<F: FnMut(&ConsensusRun)>(
        &self,
        seed: u64,
        trial: u64,
        alternative: bool,
        mut visit: F,
    ) -> Result<(bool, bool), MonteCarloError> {
        let m = self.topology.nodes();
        let (mean, offset) = if alternative { (self.theta, ALT_OFFSET) } else { (0.0, 0) };
        let dist = Density::Gaussian { mean, variance: self.sigma2 };
        let mut data = trial_rng(seed, trial, DATA_STREAM + offset);
        let mut gossip = trial_rng(seed, trial, GOSSIP_STREAM + offset);
        let mut run = ConsensusRun::new(m, WeightMode::Accumulating, true)?;
        let mut pairs = PairSequence::empty(m);
        let mut x = vec![0.0; m];
        for _ in 0..self.n {
            dist.sample_into(&mut data, &mut x);
            self.topology.sample_pairs_into(self.exchanges, &mut gossip, &mut pairs)?;
            run.step(&pairs, &x)?;
            visit(&run);
        }
        Ok((
            fss_decide(run.sample_sum(), self.threshold) == Decision::H1,
            fss_decide(run.state()[self.node], self.threshold) == Decision::H1,
        ))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FssEstimates {
    pub p_f_centralized: Estimate,
    pub p_d_centralized: Estimate,
    pub p_f_node: Estimate,
    pub p_d_node: Estimate,
}

/// Empirical error probabilities of the centralized and node statistics,
/// which share the samples of each trial.
pub fn estimate_error_probabilities(exp: &FssExperiment, engine: &Engine) -> Result<FssEstimates, MonteCarloError> {
    let m = exp.topology.nodes();
    if exp.node >= m {
        return Err(NetworkError::InvalidNode { index: exp.node, nodes: m }.into());
    }
    let res: Vec<[(bool, bool); 2]> = engine.try_run(|trial| {
        Ok([exp.trace(engine.seed, trial, false, |_| ())?, exp.trace(engine.seed, trial, true, |_| ())?])
    })?;
    let count = |h: usize, node: bool| res.iter().filter(|r| if node { r[h].1 } else { r[h].0 }).count();
    let t = res.len();
    Ok(FssEstimates {
        p_f_centralized: Estimate::from_bernoulli(count(0, false), t),
        p_d_centralized: Estimate::from_bernoulli(count(1, false), t),
        p_f_node: Estimate::from_bernoulli(count(0, true), t),
        p_d_node: Estimate::from_bernoulli(count(1, true), t),
    })
}

/// Sequential test on `t(x)` for data drawn at `theta0` and at `theta_alt`.
#[derive(Debug, Clone)]
pub struct SequentialExperiment {
    pub topology: NetworkTopology,
    pub exchanges: usize,
    /// Data law under the null.
    pub null_dist: Density,
    pub theta0: f64,
    pub theta_alt: f64,
    pub nonlinearity: Nonlinearity,
    pub detector: SequentialDetector,
    pub max_n: u64,
}

/// Stopping behaviour of one detector family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StoppingSummary {
    pub en_h0: Estimate,
    pub en_h1: Estimate,
    pub p_f: Estimate,
    pub p_d: Estimate,
    /// `(E_0[N] + E_1[N]) / 2`.
    pub en: Estimate,
    /// `(p_f + 1 - p_d) / 2`.
    pub p_e: Estimate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequentialEstimates {
    pub centralized: StoppingSummary,
    /// Node-averaged running-consensus detector.
    pub consensus: StoppingSummary,
    /// Per-trial `(max_j N_j - min_j N_j)` under both hypotheses.
    pub spread: Vec<f64>,
}

impl SequentialEstimates {
    /// Median node spread divided by the mean node stopping time.
    pub fn median_relative_spread(&self) -> f64 {
        let mut v = self.spread.clone();
        v.sort_by(f64::total_cmp);
        let med = if v.is_empty() { f64::NAN } else { v[v.len() / 2] };
        med / self.consensus.en.value
    }
}

struct SeqOutcome {
    central: (SeqDecision, u64),
    /// Fraction of nodes deciding H1 and their mean stopping time, or None
    /// when some node was truncated.
    nodes: Option<(f64, f64)>,
    spread: f64,
    node_times: Vec<Option<u64>>,
}

impl SequentialExperiment {
    /// Replays one trial under the null or the alternative, calling `visit`
    /// after every slot until every detector has stopped. Returns the
    /// centralized stopping time and the per-node stopping times.
    pub fn trace<F: FnMut(&ConsensusRun)>(
        &self,
        seed: u64,
        trial: u64,
        alternative: bool,
        visit: F,
    ) -> Result<(Option<u64>, Vec<Option<u64>>), MonteCarloError> {
        let (theta, offset) = if alternative { (self.theta_alt, ALT_OFFSET) } else { (self.theta0, 0) };
        let o = self.run_one(seed, trial, theta, offset, visit)?;
        let central = (o.central.0 != SeqDecision::Truncated).then_some(o.central.1);
        Ok((central, o.node_times))
    }

    fn run_one<F: FnMut(&ConsensusRun)>(
        &self,
        seed: u64,
        trial: u64,
        theta: f64,
        offset: u64,
        mut visit: F,
    ) -> Result<SeqOutcome, MonteCarloError> {
        let m = self.topology.nodes();
        let dist = self.null_dist.shifted(theta - self.theta0);
        let mut data = trial_rng(seed, trial, DATA_STREAM + offset);
        let mut gossip = trial_rng(seed, trial, GOSSIP_STREAM + offset);
        let mut run = ConsensusRun::new(m, WeightMode::Accumulating, true)?;
        let mut pairs = PairSequence::empty(m);
        let mut x = vec![0.0; m];
        let mut t = vec![0.0; m];
        let mut central = None;
        let mut node_stop: Vec<Option<(SeqDecision, u64)>> = vec![None; m];
        let mut pending = m;
        let mut n = 0;
        while n < self.max_n && (central.is_none() || pending > 0) {
            n += 1;
            dist.sample_into(&mut data, &mut x);
            self.nonlinearity.apply(&x, &mut t);
            self.topology.sample_pairs_into(self.exchanges, &mut gossip, &mut pairs)?;
            run.step(&pairs, &t)?;
            visit(&run);
            if central.is_none() {
                if let Some(d) = self.detector.check(n, run.sample_sum()) {
                    central = Some((d, n));
                }
            }
            for (j, slot) in node_stop.iter_mut().enumerate() {
                if slot.is_none() {
                    if let Some(d) = self.detector.check(n, run.state()[j]) {
                        *slot = Some((d, n));
                        pending -= 1;
                    }
                }
            }
        }
        let nodes = if pending == 0 {
            let h1 = node_stop.iter().flatten().filter(|(d, _)| *d == SeqDecision::H1).count();
            let mean_n = node_stop.iter().flatten().map(|(_, k)| *k as f64).sum::<f64>() / m as f64;
            Some((h1 as f64 / m as f64, mean_n))
        } else {
            None
        };
        let times: Vec<u64> = node_stop.iter().map(|s| s.map_or(self.max_n, |(_, k)| k)).collect();
        let spread = (times.iter().max().unwrap_or(&0) - times.iter().min().unwrap_or(&0)) as f64;
        Ok(SeqOutcome {
            central: central.unwrap_or((SeqDecision::Truncated, self.max_n)),
            nodes,
            spread,
            node_times: node_stop.iter().map(|s| s.map(|(_, k)| k)).collect(),
        })
    }
}

fn summarize(h0: (&[f64], &[f64], usize), h1: (&[f64], &[f64], usize)) -> StoppingSummary {
    let en_h0 = Estimate::from_values(h0.0, h0.2);
    let en_h1 = Estimate::from_values(h1.0, h1.2);
    let p_f = Estimate { truncated: h0.2, ..Estimate::from_values(h0.1, 0) };
    let p_d = Estimate { truncated: h1.2, ..Estimate::from_values(h1.1, 0) };
    let miss = Estimate { value: 1.0 - p_d.value, ..p_d };
    StoppingSummary { en_h0, en_h1, p_f, p_d, en: Estimate::average(&en_h0, &en_h1), p_e: Estimate::average(&p_f, &miss) }
}

/// Expected stopping times and error probabilities of the centralized and
/// running-consensus sequential detectors on shared data.
pub fn estimate_stopping(exp: &SequentialExperiment, engine: &Engine) -> Result<SequentialEstimates, MonteCarloError> {
    let res: Vec<[SeqOutcome; 2]> = engine.try_run(|trial| {
        Ok([
            exp.run_one(engine.seed, trial, exp.theta0, 0, |_| ())?,
            exp.run_one(engine.seed, trial, exp.theta_alt, ALT_OFFSET, |_| ())?,
        ])
    })?;
    let collect = |h: usize, node: bool| {
        let (mut ns, mut ds, mut trunc) = (Vec::new(), Vec::new(), 0);
        for r in &res {
            let o = &r[h];
            if node {
                match o.nodes {
                    Some((frac, mean_n)) => {
                        ns.push(mean_n);
                        ds.push(frac);
                    }
                    None => trunc += 1,
                }
            } else {
                match o.central.0 {
                    SeqDecision::Truncated => trunc += 1,
                    d => {
                        ns.push(o.central.1 as f64);
                        ds.push(if d == SeqDecision::H1 { 1.0 } else { 0.0 });
                    }
                }
            }
        }
        (ns, ds, trunc)
    };
    let (c0, c1) = (collect(0, false), collect(1, false));
    let (n0, n1) = (collect(0, true), collect(1, true));
    let spread = res.iter().flat_map(|r| [r[0].spread, r[1].spread]).collect();
    Ok(SequentialEstimates {
        centralized: summarize((&c0.0, &c0.1, c0.2), (&c1.0, &c1.1, c1.2)),
        consensus: summarize((&n0.0, &n0.1, n0.2), (&n1.0, &n1.1, n1.2)),
        spread,
    })
}

/// Mean alarm times of the enabled Page detectors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PageEstimates {
    pub centralized: Estimate,
    pub consensus: Estimate,
    pub single: Estimate,
    pub bank: Estimate,
}

/// Mean of `alarm - n0 + 1` per mode (`n0 = 1` when there is no change),
/// with truncated trials excluded and counted.
pub fn estimate_page(sc: &ChangeScenario, engine: &Engine) -> Result<PageEstimates, MonteCarloError> {
    let res: Vec<ChangeOutcome> = engine.try_run(|trial| {
        let mut data = trial_rng(engine.seed, trial, DATA_STREAM);
        let mut gossip = trial_rng(engine.seed, trial, GOSSIP_STREAM);
        Ok(run_change_detection(sc, &mut data, &mut gossip)?)
    })?;
    let origin = sc.change_time.unwrap_or(1) as f64;
    let est = |enabled: bool, pick: fn(&ChangeOutcome) -> Option<u64>| {
        if !enabled {
            return Estimate { value: f64::NAN, std_err: f64::NAN, count: 0, truncated: 0 };
        }
        let vals: Vec<f64> = res.iter().filter_map(pick).map(|a| a as f64 - origin + 1.0).collect();
        let trunc = res.len() - vals.len();
        Estimate::from_values(&vals, trunc)
    };
    Ok(PageEstimates {
        centralized: est(sc.modes.centralized, |o| o.centralized),
        consensus: est(sc.modes.consensus, |o| o.consensus),
        single: est(sc.modes.single, |o| o.single),
        bank: est(sc.modes.bank, |o| o.bank),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::TopologyKind;
    use rand::Rng;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: Vec<u64> = (0..4).map(|_| trial_rng(7, 3, 0).random()).collect();
        let b: Vec<u64> = (0..4).map(|_| trial_rng(7, 3, 0).random()).collect();
        assert_eq!(a, b);
        let mut x = trial_rng(7, 3, 0);
        let mut y = trial_rng(7, 3, 1);
        let mut z = trial_rng(7, 4, 0);
        let (vx, vy, vz): (u64, u64, u64) = (x.random(), y.random(), z.random());
        assert!(vx != vy && vx != vz && vy != vz);
    }

    #[test]
    fn estimates() {
        let e = Estimate::from_values(&[1.0, 2.0, 3.0], 1);
        assert_eq!(e.value, 2.0);
        assert!((e.std_err - (1.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(e.truncated, 1);
        let b = Estimate::from_bernoulli(25, 100);
        assert!((b.std_err - (0.25 * 0.75 / 100.0f64).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let topo = NetworkTopology::build(TopologyKind::FullRing, 4).unwrap();
        let exp = CovarianceExperiment {
            topology: topo,
            exchanges: 2,
            mode: WeightMode::Averaging,
            exchange_new_sample: false,
            sigma2: 1.0,
            n_max: 10,
        };
        let a = estimate_covariance(&exp, &Engine::new(5, 64).with_threads(Some(1))).unwrap();
        let b = estimate_covariance(&exp, &Engine::new(5, 64).with_threads(Some(3))).unwrap();
        assert_eq!(a, b);
        let c = estimate_covariance(&exp, &Engine::new(6, 64)).unwrap();
        assert_ne!(a, c);
        assert!(estimate_covariance(&exp, &Engine::new(5, 1)).is_err());
    }

    #[test]
    fn two_node_first_slot_is_exact() {
        // with one admissible pair and v = 1 both nodes hold the sample mean
        let topo = NetworkTopology::build(TopologyKind::FullRing, 2).unwrap();
        let exp = CovarianceExperiment {
            topology: topo,
            exchanges: 1,
            mode: WeightMode::Averaging,
            exchange_new_sample: true,
            sigma2: 1.0,
            n_max: 1,
        };
        let s = estimate_covariance(&exp, &Engine::new(1, 20_000)).unwrap();
        let c = &s[0].covariance;
        for v in c.iter() {
            assert!((v - 0.5).abs() < 3.0 * (2.0 * 0.25f64 / 20_000.0).sqrt());
        }
        assert!((s[0].rho.value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fss_infinite_threshold_always_declares() {
        let exp = FssExperiment {
            topology: NetworkTopology::build(TopologyKind::FullRing, 3).unwrap(),
            exchanges: 1,
            sigma2: 1.0,
            n: 5,
            theta: 0.1,
            threshold: f64::NEG_INFINITY,
            node: 0,
        };
        let r = estimate_error_probabilities(&exp, &Engine::new(1, 50)).unwrap();
        assert_eq!(r.p_f_centralized.value, 1.0);
        assert_eq!(r.p_d_node.value, 1.0);
    }

    #[test]
    fn degenerate_sequential_thresholds_stop_at_once() {
        let det = SequentialDetector { r: 1.0, eta: 0.0, a: 0.0, b: 0.0, nodes: 3 };
        let exp = SequentialExperiment {
            topology: NetworkTopology::build(TopologyKind::FullRing, 3).unwrap(),
            exchanges: 1,
            null_dist: Density::Gaussian { mean: 0.0, variance: 1.0 },
            theta0: 0.0,
            theta_alt: 0.5,
            nonlinearity: Nonlinearity::Identity,
            detector: det,
            max_n: 10,
        };
        let r = estimate_stopping(&exp, &Engine::new(2, 40)).unwrap();
        assert_eq!(r.centralized.en.value, 1.0);
        assert_eq!(r.consensus.en.value, 1.0);
        assert!(r.spread.iter().all(|&s| s == 0.0));
    }
}
