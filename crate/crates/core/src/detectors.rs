//! Decision procedures built on the centralized statistic or on the state
//! of a running-consensus node: fixed sample size, sequential, and Page's
//! CUSUM in centralized, running-consensus, single-sensor and bank form.

use rand::Rng;
use thiserror::Error;

use crate::network::{Gossip, NetworkError, NetworkTopology, PairSequence};
use crate::stats::{q_inverse, Density, MomentSet, Nonlinearity, StatsError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DetectorError {
    #[error("need p_f < p_d, got p_f = {p_f}, p_d = {p_d}")]
    ErrorTargets { p_f: f64, p_d: f64 },
    #[error("sample size must be at least 1")]
    ZeroSampleSize,
    #[error("parameter {name} = {value} is invalid")]
    Parameter { name: &'static str, value: f64 },
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Network(#[from] NetworkError),
}

/// Binary decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    H0,
    H1,
}

/// Which statistic a detector reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StatisticSource {
    Centralized,
    Node(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FssDetector {
    pub n: u64,
    pub threshold: f64,
    pub source: StatisticSource,
}

/// `δ_n = nMμ(θ0) + √(nM) σ(θ0) Q⁻¹(p_f)`; `moments` taken at `θ0`.
pub fn fss_threshold(p_f: f64, n: u64, moments: &MomentSet, m: usize) -> Result<f64, DetectorError> {
    if n == 0 {
        return Err(DetectorError::ZeroSampleSize);
    }
    let nm = n as f64 * m as f64;
    Ok(nm * moments.mu + nm.sqrt() * moments.sigma() * q_inverse(p_f)?)
}

/// `H1` iff the statistic reaches the threshold.
pub fn fss_decide(statistic: f64, threshold: f64) -> Decision {
    if statistic >= threshold {
        Decision::H1
    } else {
        Decision::H0
    }
}

/// Two-threshold test on `T_n - nMη`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SequentialDetector {
    pub r: f64,
    pub eta: f64,
    pub a: f64,
    pub b: f64,
    pub nodes: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeqDecision {
    H0,
    H1,
    Truncated,
}

impl SequentialDetector {
    /// Decision after slot `n` for statistic `t`, or `None` to continue.
    pub fn check(&self, n: u64, t: f64) -> Option<SeqDecision> {
        let centered = t - n as f64 * self.nodes as f64 * self.eta;
        if centered >= self.b {
            Some(SeqDecision::H1)
        } else if centered <= self.a {
            Some(SeqDecision::H0)
        } else {
            None
        }
    }
}

/// Thresholds for target `(p_f, p_d)` at scale `r`, with `moments0` taken at
/// `θ0` and `mu_r = μ(θ_r)`, `θ_r = θ0 + 1/√r`.
pub fn sequential_design(
    p_f: f64,
    p_d: f64,
    r: f64,
    moments0: &MomentSet,
    mu_r: f64,
    m: usize,
) -> Result<SequentialDetector, DetectorError> {
    if !(p_f > 0.0 && p_d < 1.0 && p_f < p_d) {
        return Err(DetectorError::ErrorTargets { p_f, p_d });
    }
    if !(r > 0.0) {
        return Err(DetectorError::Parameter { name: "r", value: r });
    }
    if moments0.mu_prime_at_theta0 == 0.0 {
        return Err(StatsError::ZeroDerivative.into());
    }
    let scale = r.sqrt() * moments0.sigma2 / moments0.mu_prime_at_theta0;
    Ok(SequentialDetector {
        r,
        eta: 0.5 * (mu_r + moments0.mu),
        a: scale * ((1.0 - p_d) / (1.0 - p_f)).ln(),
        b: scale * (p_d / p_f).ln(),
        nodes: m,
    })
}

/// Runs the sequential test on a statistic stream `stat(n)`, `n = 1, 2, ...`.
pub fn sequential_run<F: FnMut(u64) -> f64>(
    mut stat: F,
    det: &SequentialDetector,
    max_n: u64,
) -> (SeqDecision, u64) {
    for n in 1..=max_n {
        if let Some(d) = det.check(n, stat(n)) {
            return (d, n);
        }
    }
    (SeqDecision::Truncated, max_n)
}

/// Scalar CUSUM `L_n = max(0, L_{n-1} + l_n)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PageDetector {
    pub gamma: f64,
    pub cusum: f64,
}

impl PageDetector {
    pub fn new(gamma: f64) -> Self {
        PageDetector { gamma, cusum: 0.0 }
    }

    /// Adds one increment; returns true when the threshold is reached.
    pub fn step(&mut self, increment: f64) -> bool {
        self.cusum = (self.cusum + increment).max(0.0);
        self.cusum >= self.gamma
    }
}

/// Page recursion run by every node of a running-consensus network:
/// `L_{n,j} = max(0, [W (L_{n-1} + M l_n)]_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusPage {
    pub gamma: f64,
    pub cusum: Vec<f64>,
}

impl ConsensusPage {
    pub fn new(gamma: f64, nodes: usize) -> Self {
        ConsensusPage { gamma, cusum: vec![0.0; nodes] }
    }

    pub fn step<G: Gossip + ?Sized>(&mut self, gossip: &G, llr: &[f64]) {
        let m = self.cusum.len() as f64;
        for (c, l) in self.cusum.iter_mut().zip(llr) {
            *c += m * l;
        }
        gossip.apply(&mut self.cusum);
        for c in self.cusum.iter_mut() {
            *c = c.max(0.0);
        }
    }

    pub fn crossed(&self, node: usize) -> bool {
        self.cusum[node] >= self.gamma
    }
}

/// `M` single-sensor CUSUMs; the bank alarms when any of them does.
#[derive(Debug, Clone, PartialEq)]
pub struct PageBank {
    pub detectors: Vec<PageDetector>,
}

impl PageBank {
    pub fn new(gamma: f64, nodes: usize) -> Self {
        PageBank { detectors: vec![PageDetector::new(gamma); nodes] }
    }

    /// Feeds one increment per sensor; true if at least one filter crossed.
    pub fn step(&mut self, llr: &[f64]) -> bool {
        let mut any = false;
        for (d, &l) in self.detectors.iter_mut().zip(llr) {
            any |= d.step(l);
        }
        any
    }
}

/// Page configurations that can share one sample stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PageModes {
    pub centralized: bool,
    pub consensus: bool,
    pub single: bool,
    pub bank: bool,
}

impl PageModes {
    pub fn all() -> Self {
        PageModes { centralized: true, consensus: true, single: true, bank: true }
    }
}

/// Change-detection experiment.
#[derive(Debug, Clone)]
pub struct ChangeScenario {
    pub topology: NetworkTopology,
    pub exchanges: usize,
    pub pre: Density,
    pub post: Density,
    /// First slot drawn from `post`; `None` never changes.
    pub change_time: Option<u64>,
    pub gamma: f64,
    /// Added to `gamma` for the running-consensus detector only.
    pub consensus_offset: f64,
    /// Threshold of the single-sensor and bank filters.
    pub gamma_single: f64,
    /// Node whose running-consensus statistic is monitored.
    pub node: usize,
    pub max_n: u64,
    pub modes: PageModes,
}

/// First alarm slot per mode; `None` if not enabled or truncated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ChangeOutcome {
    pub centralized: Option<u64>,
    pub consensus: Option<u64>,
    pub single: Option<u64>,
    pub bank: Option<u64>,
}

impl ChangeOutcome {
    /// True when an alarm came before the change.
    pub fn is_false_alarm(alarm: Option<u64>, change_time: Option<u64>) -> bool {
        match (alarm, change_time) {
            (Some(a), Some(c)) => a < c,
            (Some(_), None) => true,
            _ => false,
        }
    }
}

/// Simulates every enabled mode on one shared stream of samples. `data`
/// drives the observations and `gossip` the pair selection, so enabling or
/// disabling a mode never changes the samples seen by the others.
pub fn run_change_detection<R1: Rng + ?Sized, R2: Rng + ?Sized>(
    sc: &ChangeScenario,
    data: &mut R1,
    gossip: &mut R2,
) -> Result<ChangeOutcome, DetectorError> {
    let m = sc.topology.nodes();
    if sc.node >= m {
        return Err(NetworkError::InvalidNode { index: sc.node, nodes: m }.into());
    }
    let llr = Nonlinearity::LogLikelihoodRatio { null: sc.pre, alt: sc.post };
    let mut out = ChangeOutcome::default();
    let mut central = PageDetector::new(sc.gamma);
    let mut cons = ConsensusPage::new(sc.gamma + sc.consensus_offset, m);
    let mut single = PageDetector::new(sc.gamma_single);
    let mut bank = PageBank::new(sc.gamma_single, m);
    let mut pairs = PairSequence::empty(m);
    let mut x = vec![0.0; m];
    let mut l = vec![0.0; m];
    let modes = sc.modes;
    let pending = |o: &ChangeOutcome| {
        (modes.centralized && o.centralized.is_none())
            || (modes.consensus && o.consensus.is_none())
            || (modes.single && o.single.is_none())
            || (modes.bank && o.bank.is_none())
    };
    let mut n = 0u64;
    while n < sc.max_n && pending(&out) {
        n += 1;
        let dist = match sc.change_time {
            Some(c) if n >= c => &sc.post,
            _ => &sc.pre,
        };
        dist.sample_into(data, &mut x);
        llr.apply(&x, &mut l);
        if modes.centralized && out.centralized.is_none() && central.step(l.iter().sum()) {
            out.centralized = Some(n);
        }
        if modes.consensus && out.consensus.is_none() {
            sc.topology.sample_pairs_into(sc.exchanges, gossip, &mut pairs)?;
            cons.step(&pairs, &l);
            if cons.crossed(sc.node) {
                out.consensus = Some(n);
            }
        }
        if modes.single && out.single.is_none() && single.step(l[0]) {
            out.single = Some(n);
        }
        if modes.bank && out.bank.is_none() && bank.step(&l) {
            out.bank = Some(n);
        }
    }
    Ok(out)
}
