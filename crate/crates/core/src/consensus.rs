//! Running-consensus state recursion and the ideal centralized statistic it
//! tracks.
//!
//! Each slot the run receives one gossip operator and the vector `t(x_n)` of
//! the nodes' fresh transformed samples. Depending on the flag set at
//! construction, the fresh samples are either mixed in the same slot,
//! `s_n = W (α_n s_{n-1} + β_n t)`, or added after the exchange,
//! `s_n = α_n W s_{n-1} + β_n t`.

use std::io::Write;

use thiserror::Error;

use crate::network::Gossip;
use crate::output::fmt_float;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConsensusError {
    #[error("consensus run needs at least one node")]
    NoNodes,
    #[error("expected length {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("no slot has been processed yet")]
    NoSlots,
}

/// Weight schedule of the recursion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightMode {
    /// `α_n = (n-1)/n`, `β_n = 1/n`; states track the running sample mean.
    Averaging,
    /// `α_n = 1`, `β_n = M`; states track the running sum over all sensors.
    Accumulating,
}

impl WeightMode {
    /// `(α_n, β_n, χ_n)` for slot `n ≥ 1` and `nodes` sensors.
    pub fn weights(self, n: u64, nodes: usize) -> (f64, f64, f64) {
        let nf = n as f64;
        let m = nodes as f64;
        match self {
            WeightMode::Averaging => ((nf - 1.0) / nf, 1.0 / nf, 1.0 / (nf * m)),
            WeightMode::Accumulating => (1.0, m, 1.0),
        }
    }
}

/// State of one running-consensus trajectory.
#[derive(Debug, Clone)]
pub struct ConsensusRun {
    mode: WeightMode,
    exchange_new_sample: bool,
    n: u64,
    state: Vec<f64>,
    sample_sum: f64,
}

impl ConsensusRun {
    pub fn new(nodes: usize, mode: WeightMode, exchange_new_sample: bool) -> Result<Self, ConsensusError> {
        if nodes == 0 {
            return Err(ConsensusError::NoNodes);
        }
        Ok(ConsensusRun { mode, exchange_new_sample, n: 0, state: vec![0.0; nodes], sample_sum: 0.0 })
    }

    pub fn nodes(&self) -> usize {
        self.state.len()
    }

    pub fn mode(&self) -> WeightMode {
        self.mode
    }

    pub fn exchanges_new_sample(&self) -> bool {
        self.exchange_new_sample
    }

    /// Number of processed slots.
    pub fn slot(&self) -> u64 {
        self.n
    }

    pub fn state(&self) -> &[f64] {
        &self.state
    }

    /// Running total `Σ_i 1ᵀ t(x_i)`.
    pub fn sample_sum(&self) -> f64 {
        self.sample_sum
    }

    /// Advances the run by one slot.
    pub fn step<G: Gossip + ?Sized>(&mut self, gossip: &G, t: &[f64]) -> Result<(), ConsensusError> {
        let m = self.state.len();
        if t.len() != m {
            return Err(ConsensusError::Dimension { expected: m, got: t.len() });
        }
        if gossip.nodes() != m {
            return Err(ConsensusError::Dimension { expected: m, got: gossip.nodes() });
        }
        self.n += 1;
        let (alpha, beta, _) = self.mode.weights(self.n, m);
        if self.exchange_new_sample {
            for (s, &x) in self.state.iter_mut().zip(t) {
                *s = alpha * *s + beta * x;
            }
            gossip.apply(&mut self.state);
        } else {
            gossip.apply(&mut self.state);
            for (s, &x) in self.state.iter_mut().zip(t) {
                *s = alpha * *s + beta * x;
            }
        }
        self.sample_sum += t.iter().sum::<f64>();
        Ok(())
    }

    /// `s_n^(c) = χ_n Σ_i 1ᵀ t(x_i)`.
    pub fn centralized_state(&self) -> Result<f64, ConsensusError> {
        if self.n == 0 {
            return Err(ConsensusError::NoSlots);
        }
        let (_, _, chi) = self.mode.weights(self.n, self.state.len());
        Ok(chi * self.sample_sum)
    }

    /// `e_n = s_n - s_n^(c) 1`.
    pub fn error_vector(&self) -> Result<Vec<f64>, ConsensusError> {
        let c = self.centralized_state()?;
        Ok(self.state.iter().map(|s| s - c).collect())
    }
}

/// Streams a trajectory as CSV rows `n,node,state,centralized,error`.
pub struct TrajectoryWriter<W: Write> {
    out: W,
}

impl<W: Write> TrajectoryWriter<W> {
    pub fn new(mut out: W) -> std::io::Result<Self> {
        writeln!(out, "n,node,state,centralized,error")?;
        Ok(TrajectoryWriter { out })
    }

    /// Writes one row per node for the current slot of `run`.
    pub fn record(&mut self, run: &ConsensusRun) -> std::io::Result<()> {
        let c = match run.centralized_state() {
            Ok(c) => c,
            Err(_) => return Ok(()),
        };
        for (j, s) in run.state().iter().enumerate() {
            writeln!(
                self.out,
                "{},{},{},{},{}",
                run.slot(),
                j,
                fmt_float(*s),
                fmt_float(c),
                fmt_float(s - c)
            )?;
        }
        Ok(())
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}
