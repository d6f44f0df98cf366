//! Experiment configuration: a TOML file whose every field can be overridden
//! from the command line. Unknown keys are rejected.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use gradorder_core::balancing::BalanceConfig;
use gradorder_core::fl::{FlOrdererKind, OpInit};
use gradorder_core::objectives::EnsembleParams;
use gradorder_core::strategies::OrdererKind;
use gradorder_core::Permutation;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Sgd,
    Fl,
    VerifyLemmas,
    NpBuild,
}

impl Mode {
    pub fn is_comparison(self) -> bool {
        matches!(self, Mode::Sgd | Mode::Fl)
    }
}

/// A fixed step size, or one of the rules derived from the ensemble.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StepSize {
    Fixed(f64),
    /// The smallest theoretical ceiling over the compared orderers.
    Cap,
    /// `min{cap, (F0/(c·N·Q))^{1/3}}` with `c = L²·D` from each orderer's
    /// recursion constants, minimised over orderers.
    Tuned,
}

impl fmt::Display for StepSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StepSize::Fixed(v) => write!(f, "{v}"),
            StepSize::Cap => f.write_str("cap"),
            StepSize::Tuned => f.write_str("tuned"),
        }
    }
}

impl FromStr for StepSize {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "cap" => Ok(StepSize::Cap),
            "tuned" => Ok(StepSize::Tuned),
            v => v
                .parse::<f64>()
                .map(StepSize::Fixed)
                .map_err(|_| CliError::Config(format!("step size must be a number, \"cap\" or \"tuned\", got '{s}'"))),
        }
    }
}

impl Serialize for StepSize {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            StepSize::Fixed(v) => s.serialize_f64(*v),
            other => s.serialize_str(&other.to_string()),
        }
    }
}

impl<'de> Deserialize<'de> for StepSize {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(StepSize::Fixed(v)),
            Raw::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Starting point: one value for every coordinate or an explicit vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StartPoint {
    Fill(f64),
    Vector(Vec<f64>),
}

impl StartPoint {
    pub fn resolve(&self, d: usize) -> CliResult<Vec<f64>> {
        match self {
            StartPoint::Fill(v) => Ok(vec![*v; d]),
            StartPoint::Vector(v) if v.len() == d => Ok(v.clone()),
            StartPoint::Vector(v) => Err(CliError::Config(format!("x0 has {} coordinates, the ensemble has d = {d}", v.len()))),
        }
    }
}

impl FromStr for StartPoint {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        let parts: Result<Vec<f64>, _> = s.split(',').map(|p| p.trim().parse::<f64>()).collect();
        match parts {
            Ok(v) if v.len() == 1 => Ok(StartPoint::Fill(v[0])),
            Ok(v) => Ok(StartPoint::Vector(v)),
            Err(_) => Err(CliError::Config(format!("x0 must be a number or a comma-separated vector, got '{s}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleSection {
    pub n: usize,
    pub d: usize,
    pub a_mean: f64,
    pub a_std: f64,
    pub b_std: f64,
    pub seed: u64,
}

impl Default for EnsembleSection {
    fn default() -> Self {
        let p = EnsembleParams::default();
        Self { n: p.n, d: p.d, a_mean: p.a_mean, a_std: p.a_std, b_std: p.b_std, seed: 0 }
    }
}

impl EnsembleSection {
    pub fn params(&self) -> EnsembleParams {
        EnsembleParams { n: self.n, d: self.d, a_mean: self.a_mean, a_std: self.a_std, b_std: self.b_std }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineSection {
    pub gamma: StepSize,
    pub epochs: usize,
    pub x0: StartPoint,
    /// Global step size (FL).
    pub eta: f64,
    /// Local steps per client (FL).
    pub local_steps: usize,
    /// Clients per round (FL).
    pub clients_per_round: usize,
    pub record_inner: bool,
}

impl Default for EngineSection {
    fn default() -> Self {
        Self {
            gamma: StepSize::Fixed(1e-3),
            epochs: 50,
            x0: StartPoint::Fill(10.0),
            eta: 1.0,
            local_steps: 5,
            clients_per_round: 2,
            record_inner: false,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OrderingSection {
    pub np_rounds: Option<usize>,
    /// JSON file holding the AP schedule as an array of permutations.
    pub ap_schedule: Option<PathBuf>,
    /// Shared `π_0` for every run (a JSON integer array).
    pub initial_permutation: Option<Permutation>,
    /// How FL-OP chooses its permutation.
    pub fl_op_init: OpInit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChecksSection {
    /// Recursion specs checked on every run; empty means the orderer's own
    /// spec plus the always-valid AP spec.
    pub specs: Vec<String>,
    pub slack: f64,
}

impl Default for ChecksSection {
    fn default() -> Self {
        Self { specs: Vec::new(), slack: 0.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LemmaSection {
    pub trials: usize,
    pub n_max: usize,
    pub d_max: usize,
    pub seed: u64,
}

impl Default for LemmaSection {
    fn default() -> Self {
        Self { trials: 1000, n_max: 64, d_max: 8, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub orderers: Vec<String>,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
    pub plot: bool,
    /// Draw a fresh ensemble for every seed instead of sharing one.
    pub resample_ensemble: bool,
    pub ensemble: EnsembleSection,
    pub engine: EngineSection,
    pub balance: BalanceConfig,
    pub ordering: OrderingSection,
    pub checks: ChecksSection,
    pub lemmas: LemmaSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Sgd,
            orderers: vec!["rr".into(), "so".into(), "grab".into(), "pairgrab".into()],
            seeds: (0..10).collect(),
            out: PathBuf::from("gradorder-out"),
            plot: true,
            resample_ensemble: false,
            ensemble: EnsembleSection::default(),
            engine: EngineSection::default(),
            balance: BalanceConfig::default(),
            ordering: OrderingSection::default(),
            checks: ChecksSection::default(),
            lemmas: LemmaSection::default(),
        }
    }
}

/// Orderers of one comparison, already parsed for the mode.
#[derive(Clone, Debug, PartialEq)]
pub enum OrdererList {
    Sgd(Vec<OrdererKind>),
    Fl(Vec<FlOrdererKind>),
}

impl OrdererList {
    pub fn names(&self) -> Vec<&'static str> {
        match self {
            OrdererList::Sgd(v) => v.iter().map(|k| k.name()).collect(),
            OrdererList::Fl(v) => v.iter().map(|k| k.name()).collect(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> CliResult<Self> {
        toml::from_str(s).map_err(|e| CliError::Config(format!("invalid config: {e}")))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> CliResult<String> {
        toml::to_string_pretty(self).map_err(|e| CliError::Config(format!("cannot serialise config: {e}")))
    }

    pub fn orderer_list(&self) -> CliResult<OrdererList> {
        let parse_err = |e: gradorder_core::Error| CliError::Config(e.to_string());
        match self.mode {
            Mode::Fl => self
                .orderers
                .iter()
                .map(|s| s.parse::<FlOrdererKind>().map_err(parse_err))
                .collect::<CliResult<_>>()
                .map(OrdererList::Fl),
            _ => self
                .orderers
                .iter()
                .map(|s| s.parse::<OrdererKind>().map_err(parse_err))
                .collect::<CliResult<_>>()
                .map(OrdererList::Sgd),
        }
    }

    /// Checks everything that can be checked before a run starts.
    pub fn validate(&self) -> CliResult<()> {
        let cfg_err = |m: String| Err(CliError::Config(m));
        if self.ensemble.n == 0 || self.ensemble.d == 0 {
            return cfg_err("ensemble needs n ≥ 1 and d ≥ 1".into());
        }
        self.balance.validate().map_err(|e| CliError::Config(e.to_string()))?;
        if !self.mode.is_comparison() {
            return Ok(());
        }
        if self.seeds.is_empty() {
            return cfg_err("at least one seed is required".into());
        }
        if self.orderers.is_empty() {
            return cfg_err("at least one orderer is required".into());
        }
        if self.engine.epochs == 0 {
            return cfg_err("epochs must be at least 1".into());
        }
        if let StepSize::Fixed(g) = self.engine.gamma {
            if !(g >= 0.0 && g.is_finite()) {
                return cfg_err(format!("step size must be finite and non-negative, got {g}"));
            }
        }
        self.engine.x0.resolve(self.ensemble.d)?;
        let n = self.ensemble.n;
        if let Some(p) = &self.ordering.initial_permutation {
            if p.len() != n {
                return cfg_err(format!("initial permutation has length {}, N = {n}", p.len()));
            }
        }
        match self.orderer_list()? {
            OrdererList::Sgd(kinds) => {
                for k in &kinds {
                    if k.needs_even() && !n.is_multiple_of(2) {
                        return cfg_err(format!("{k} needs an even N, got {n}"));
                    }
                    if *k == OrdererKind::Ap && self.ordering.ap_schedule.is_none() {
                        return cfg_err("ap needs a schedule file (--ap-schedule)".into());
                    }
                }
            }
            OrdererList::Fl(kinds) => {
                let (s, k) = (self.engine.clients_per_round, self.engine.local_steps);
                if s == 0 || k == 0 {
                    return cfg_err("clients per round and local steps must be at least 1".into());
                }
                if !n.is_multiple_of(s) {
                    return cfg_err(format!("clients per round S = {s} must divide N = {n}"));
                }
                if !(self.engine.eta > 0.0 && self.engine.eta.is_finite()) {
                    return cfg_err(format!("eta must be positive, got {}", self.engine.eta));
                }
                for kind in &kinds {
                    if *kind == FlOrdererKind::FlGrab && (s % 2 != 0 || !n.is_multiple_of(2)) {
                        return cfg_err(format!("fl-grab needs even S and N, got S = {s}, N = {n}"));
                    }
                    if *kind == FlOrdererKind::FlOp && self.ordering.fl_op_init == OpInit::Nice && !n.is_multiple_of(2) {
                        return cfg_err(format!("a nice FL-OP start needs an even N, got {n}"));
                    }
                    if *kind == FlOrdererKind::FlAp && self.ordering.ap_schedule.is_none() {
                        return cfg_err("fl-ap needs a schedule file (--ap-schedule)".into());
                    }
                }
            }
        }
        Ok(())
    }

    pub fn load_ap_schedule(&self) -> CliResult<Option<Vec<Permutation>>> {
        let Some(path) = &self.ordering.ap_schedule else { return Ok(None) };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read AP schedule {}: {e}", path.display())))?;
        let list: Vec<Permutation> = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("AP schedule {} is not a list of permutations: {e}", path.display())))?;
        if list.is_empty() {
            return Err(CliError::Config("AP schedule is empty".into()));
        }
        if let Some(p) = list.iter().find(|p| p.len() != self.ensemble.n) {
            return Err(CliError::Config(format!("AP schedule entry has length {}, N = {}", p.len(), self.ensemble.n)));
        }
        Ok(Some(list))
    }
}

/// Parses `--seeds`: comma-separated values and half-open ranges `a..b`.
pub fn parse_seeds(s: &str) -> CliResult<Vec<u64>> {
    let bad = || CliError::Config(format!("seeds must look like '0,3,7' or '0..10', got '{s}'"));
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if let Some((a, b)) = part.split_once("..") {
            let a: u64 = a.trim().parse().map_err(|_| bad())?;
            let b: u64 = b.trim().parse().map_err(|_| bad())?;
            out.extend(a..b);
        } else {
            out.push(part.parse().map_err(|_| bad())?);
        }
    }
    if out.is_empty() {
        return Err(bad());
    }
    Ok(out)
}

/// Parses a permutation given inline as a JSON array or as a path to one.
pub fn parse_permutation(s: &str) -> CliResult<Permutation> {
    let text = if s.trim_start().starts_with('[') {
        s.to_string()
    } else {
        std::fs::read_to_string(s).map_err(|e| CliError::Config(format!("cannot read permutation {s}: {e}")))?
    };
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("invalid permutation: {e}")))
}
