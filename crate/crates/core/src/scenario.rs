//! Scenario files: TOML documents with `[experiment]`, `[topology]`,
//! `[model]`, `[detector]`, `[montecarlo]` and `[output]` sections.
//!
//! ```toml
//! [experiment]
//! kind = "spectral"
//! name = "ring15"
//!
//! [topology]
//! kind = "full_ring"
//! nodes = 15
//! ```
//!
//! Unknown keys are rejected and parse errors carry line numbers. Every
//! field has a normalized serialization, so parse, serialize and parse again
//! yields the same value.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::BoundVariant;
use crate::consensus::WeightMode;
use crate::network::{NetworkError, NetworkTopology, TopologyKind};
use crate::stats::Density;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("{0}")]
    Parse(String),
    #[error("missing [{0}] block")]
    MissingBlock(&'static str),
    #[error("[{block}] is missing key `{key}`")]
    MissingKey { block: &'static str, key: &'static str },
    #[error("[{block}] {key}: {reason}")]
    Invalid { block: &'static str, key: &'static str, reason: String },
    #[error("override `{0}`: expected section.key=value")]
    Override(String),
    #[error("topology: {0}")]
    Topology(#[from] NetworkError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Spectral,
    Bounds,
    Fss,
    Sequential,
    Change,
    Efficiency,
}

impl ExperimentKind {
    pub fn label(self) -> &'static str {
        match self {
            ExperimentKind::Spectral => "spectral",
            ExperimentKind::Bounds => "bounds",
            ExperimentKind::Fss => "fss",
            ExperimentKind::Sequential => "sequential",
            ExperimentKind::Change => "change",
            ExperimentKind::Efficiency => "efficiency",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentBlock {
    pub kind: ExperimentKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologyName {
    FullRing,
    KNeighborRing,
    Explicit,
}

fn one() -> Vec<usize> {
    vec![1]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyBlock {
    pub kind: TopologyName,
    pub nodes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edges: Option<Vec<[usize; 2]>>,
    /// Pairwise exchanges per slot; experiments run once per entry.
    #[serde(default = "one")]
    pub exchanges: Vec<usize>,
}

impl TopologyBlock {
    pub fn kind(&self) -> Result<TopologyKind, ScenarioError> {
        Ok(match self.kind {
            TopologyName::FullRing => TopologyKind::FullRing,
            TopologyName::KNeighborRing => {
                TopologyKind::KNeighborRing(self.k.ok_or(ScenarioError::MissingKey { block: "topology", key: "k" })?)
            }
            TopologyName::Explicit => TopologyKind::ExplicitEdges(
                self.edges
                    .as_ref()
                    .ok_or(ScenarioError::MissingKey { block: "topology", key: "edges" })?
                    .iter()
                    .map(|e| (e[0], e[1]))
                    .collect(),
            ),
        })
    }

    pub fn build(&self) -> Result<NetworkTopology, ScenarioError> {
        Ok(NetworkTopology::build(self.kind()?, self.nodes)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DensityName {
    Gaussian,
    Mixture,
    VarianceChange,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightName {
    Averaging,
    Accumulating,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantName {
    SampleAfterExchange,
    ExchangeIncludesSample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBlock {
    pub density: DensityName,
    /// Variance of the Gaussian noise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variance: Option<f64>,
    /// Weight of the first mixture component.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mixture_p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mixture_sigma1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mixture_sigma2: Option<f64>,
    /// Standard deviation after a variance change (it is 1 before).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub post_sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<WeightName>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant: Option<VariantName>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_max: Option<u64>,
}

impl ModelBlock {
    /// Null-hypothesis density of a detection model.
    pub fn null_density(&self) -> Result<Density, ScenarioError> {
        let d = match self.density {
            DensityName::Gaussian => Density::Gaussian { mean: 0.0, variance: self.variance.unwrap_or(1.0) },
            DensityName::Mixture => Density::GaussianMixture {
                p: self.mixture_p.ok_or(ScenarioError::MissingKey { block: "model", key: "mixture_p" })?,
                mean: 0.0,
                var1: self.mixture_sigma1.ok_or(ScenarioError::MissingKey { block: "model", key: "mixture_sigma1" })?.powi(2),
                var2: self.mixture_sigma2.ok_or(ScenarioError::MissingKey { block: "model", key: "mixture_sigma2" })?.powi(2),
            },
            DensityName::VarianceChange => Density::GaussianVarChange { variance: 1.0 },
        };
        d.validate().map_err(|e| invalid("model", "density", e))?;
        Ok(d)
    }

    /// Pre- and post-change densities.
    pub fn change_densities(&self) -> Result<(Density, Density), ScenarioError> {
        if self.density != DensityName::VarianceChange {
            return Err(invalid("model", "density", "change experiments need density = \"variance_change\""));
        }
        let s = self.post_sigma.ok_or(ScenarioError::MissingKey { block: "model", key: "post_sigma" })?;
        let post = Density::GaussianVarChange { variance: s * s };
        post.validate().map_err(|e| invalid("model", "post_sigma", e))?;
        Ok((Density::GaussianVarChange { variance: 1.0 }, post))
    }

    pub fn weight_mode(&self) -> WeightMode {
        match self.weights.unwrap_or(WeightName::Averaging) {
            WeightName::Averaging => WeightMode::Averaging,
            WeightName::Accumulating => WeightMode::Accumulating,
        }
    }

    pub fn bound_variant(&self) -> BoundVariant {
        match self.variant.unwrap_or(VariantName::SampleAfterExchange) {
            VariantName::SampleAfterExchange => BoundVariant::SampleAfterExchange,
            VariantName::ExchangeIncludesSample => BoundVariant::ExchangeIncludesSample,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatisticName {
    Identity,
    Llr,
    Score,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyName {
    Centralized,
    Consensus,
    Single,
    Bank,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Measure {
    FalseAlarm,
    Delay,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorBlock {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_f: Option<f64>,
    /// Sample sizes of the fixed-sample-size test.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<Vec<u64>>,
    /// `γ` in `θ_n = γ/√n`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_scale: Option<f64>,
    /// Nominal error probabilities, `p_f = p_e`, `p_d = 1 - p_e`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_e: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snr_db: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub statistic: Option<StatisticName>,
    /// Also run the centralized likelihood-ratio SPRT.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sprt: Option<bool>,
    /// Write the node statistics of one alternative-hypothesis trial.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub realization: Option<bool>,
    /// Horizon as a multiple of the predicted mean run length.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truncation: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub families: Option<Vec<FamilyName>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measure: Option<Vec<Measure>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub consensus_offset: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node: Option<usize>,
    /// Network sizes of the efficiency sweep.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<Vec<usize>>,
    /// False-alarm rates of the efficiency sweep.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonteCarloBlock {
    pub trials: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    /// File stem of the written tables.
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub experiment: ExperimentBlock,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topology: Option<TopologyBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detector: Option<DetectorBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub montecarlo: Option<MonteCarloBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<OutputBlock>,
}

fn invalid(block: &'static str, key: &'static str, reason: impl ToString) -> ScenarioError {
    ScenarioError::Invalid { block, key, reason: reason.to_string() }
}

fn require<'a, T>(v: &'a Option<T>, block: &'static str, key: &'static str) -> Result<&'a T, ScenarioError> {
    v.as_ref().ok_or(ScenarioError::MissingKey { block, key })
}

fn nonempty<T>(v: &Option<Vec<T>>, block: &'static str, key: &'static str) -> Result<(), ScenarioError> {
    if require(v, block, key)?.is_empty() {
        return Err(invalid(block, key, "must not be empty"));
    }
    Ok(())
}

fn probability(p: f64, block: &'static str, key: &'static str) -> Result<(), ScenarioError> {
    if !(p > 0.0 && p < 1.0) {
        return Err(invalid(block, key, format!("{p} is not in (0, 1)")));
    }
    Ok(())
}

impl ScenarioFile {
    /// Parses and validates a scenario document.
    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        let sc: ScenarioFile = toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        sc.validate()?;
        Ok(sc)
    }

    /// An otherwise empty scenario of the given kind, for building entirely
    /// from overrides.
    pub fn empty(kind: ExperimentKind) -> Self {
        ScenarioFile {
            experiment: ExperimentBlock { kind, name: None },
            topology: None,
            model: None,
            detector: None,
            montecarlo: None,
            output: None,
        }
    }

    /// Normalized TOML form.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario values are always representable")
    }

    /// Applies `section.key=value` overrides. Values are read as TOML
    /// (`3`, `1e-4`, `[1, 2]`, `"text"`); anything else is taken as a bare
    /// string. The result is validated.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self, ScenarioError> {
        let mut doc = toml::Table::try_from(self).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        for o in overrides {
            let o = o.as_ref();
            let (path, raw) = o.split_once('=').ok_or_else(|| ScenarioError::Override(o.to_string()))?;
            let (section, key) =
                path.trim().split_once('.').ok_or_else(|| ScenarioError::Override(o.to_string()))?;
            let raw = raw.trim();
            let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
                .ok()
                .and_then(|mut t| t.remove("v"))
                .unwrap_or_else(|| toml::Value::String(raw.to_string()));
            let entry = doc.entry(section.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
            match entry {
                toml::Value::Table(t) => {
                    t.insert(key.to_string(), value);
                }
                _ => return Err(ScenarioError::Override(o.to_string())),
            }
        }
        let sc: ScenarioFile = toml::Value::Table(doc)
            .try_into()
            .map_err(|e: toml::de::Error| ScenarioError::Parse(format!("after overrides: {e}")))?;
        sc.validate()?;
        Ok(sc)
    }

    /// Name used for output files: `[output] file`, else the experiment
    /// name, else the kind.
    pub fn stem(&self) -> String {
        let raw = match (&self.output, &self.experiment.name) {
            (Some(o), _) => o.file.clone(),
            (None, Some(n)) => n.clone(),
            (None, None) => self.experiment.kind.label().to_string(),
        };
        raw.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
    }

    pub fn topology(&self) -> Result<&TopologyBlock, ScenarioError> {
        self.topology.as_ref().ok_or(ScenarioError::MissingBlock("topology"))
    }

    pub fn model(&self) -> Result<&ModelBlock, ScenarioError> {
        self.model.as_ref().ok_or(ScenarioError::MissingBlock("model"))
    }

    pub fn detector(&self) -> Result<&DetectorBlock, ScenarioError> {
        self.detector.as_ref().ok_or(ScenarioError::MissingBlock("detector"))
    }

    pub fn montecarlo(&self) -> Result<&MonteCarloBlock, ScenarioError> {
        self.montecarlo.as_ref().ok_or(ScenarioError::MissingBlock("montecarlo"))
    }

    /// Checks that the blocks needed by the experiment kind exist and hold
    /// sensible values.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        use ExperimentKind::*;
        let kind = self.experiment.kind;
        if kind != Efficiency {
            let t = self.topology()?;
            if t.exchanges.is_empty() || t.exchanges.contains(&0) {
                return Err(invalid("topology", "exchanges", "entries must be positive"));
            }
            t.build()?;
        }
        if matches!(kind, Bounds | Fss | Sequential | Change) {
            let mc = self.montecarlo()?;
            if mc.trials < 2 {
                return Err(invalid("montecarlo", "trials", "need at least 2"));
            }
        }
        match kind {
            Spectral => {}
            Bounds => {
                let m = self.model()?;
                if m.density != DensityName::Gaussian {
                    return Err(invalid("model", "density", "bounds use gaussian samples"));
                }
                m.null_density()?;
                if *require(&m.n_max, "model", "n_max")? == 0 {
                    return Err(invalid("model", "n_max", "must be positive"));
                }
            }
            Fss => {
                let m = self.model()?;
                if m.density != DensityName::Gaussian {
                    return Err(invalid("model", "density", "fss experiments use gaussian samples"));
                }
                m.null_density()?;
                let d = self.detector()?;
                probability(*require(&d.p_f, "detector", "p_f")?, "detector", "p_f")?;
                nonempty(&d.n, "detector", "n")?;
                if d.n.as_ref().is_some_and(|n| n.contains(&0)) {
                    return Err(invalid("detector", "n", "sample sizes must be positive"));
                }
            }
            Sequential => {
                let m = self.model()?;
                if m.density == DensityName::VarianceChange {
                    return Err(invalid("model", "density", "sequential tests use shift-in-mean models"));
                }
                m.null_density()?;
                let d = self.detector()?;
                nonempty(&d.p_e, "detector", "p_e")?;
                nonempty(&d.snr_db, "detector", "snr_db")?;
                for &p in d.p_e.as_deref().unwrap_or_default() {
                    if !(p > 0.0 && p < 0.5) {
                        return Err(invalid("detector", "p_e", format!("{p} is not in (0, 0.5)")));
                    }
                }
            }
            Change => {
                self.model()?.change_densities()?;
                let d = self.detector()?;
                nonempty(&d.gamma, "detector", "gamma")?;
                if d.gamma.as_deref().unwrap_or_default().iter().any(|g| !(*g > 0.0)) {
                    return Err(invalid("detector", "gamma", "thresholds must be positive"));
                }
                if let Some(node) = d.node {
                    if node >= self.topology()?.nodes {
                        return Err(invalid("detector", "node", "outside the network"));
                    }
                }
            }
            Efficiency => {
                self.model()?.change_densities()?;
                let d = self.detector()?;
                nonempty(&d.m, "detector", "m")?;
                nonempty(&d.rate, "detector", "rate")?;
                if d.m.as_deref().unwrap_or_default().contains(&0) {
                    return Err(invalid("detector", "m", "network sizes must be positive"));
                }
            }
        }
        if let Some(d) = &self.detector {
            if let Some(t) = d.truncation {
                if !(t > 1.0) {
                    return Err(invalid("detector", "truncation", "must exceed 1"));
                }
            }
        }
        Ok(())
    }
}

/// Bundled scenarios by figure tag.
pub const BUNDLED: &[(&str, &str)] = &[
    ("fig:bound1", include_str!("../scenarios/bound1.toml")),
    ("fig:bound2", include_str!("../scenarios/bound2.toml")),
    ("fig:FSS3", include_str!("../scenarios/fss_gauss.toml")),
    ("fig:NmedGauss", include_str!("../scenarios/sequential_gauss.toml")),
    ("fig:PerrGauss", include_str!("../scenarios/sequential_gauss.toml")),
    ("fig:AREGauss", include_str!("../scenarios/sequential_gauss.toml")),
    ("fig:NmedMixt", include_str!("../scenarios/sequential_mixture.toml")),
    ("fig:PerrMixt", include_str!("../scenarios/sequential_mixture.toml")),
    ("fig:stopping", include_str!("../scenarios/stopping.toml")),
    ("fig:sim2", include_str!("../scenarios/change_page.toml")),
    ("fig:sim1", include_str!("../scenarios/change_page.toml")),
    ("fig:RE1", include_str!("../scenarios/efficiency.toml")),
    ("fig:RE2", include_str!("../scenarios/efficiency.toml")),
];

/// The bundled scenario for `tag`, named after the tag.
pub fn bundled(tag: &str) -> Option<Result<ScenarioFile, ScenarioError>> {
    let (_, text) = BUNDLED.iter().find(|(t, _)| *t == tag)?;
    Some(ScenarioFile::parse(text).map(|mut sc| {
        sc.experiment.name = Some(tag.to_string());
        sc
    }))
}
