//! Hyperparameter search: sampling under constraints, shrinking the space
//! around the best trials, freezing converged dimensions, and staged
//! learning-rate/epoch schedules.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ModelConfig, RunConfig};
use crate::error::{Error, Result};
use crate::ingest::VideoStream;
use crate::nn::{parameter_count, Padding};
use crate::pipeline::{run_prepared, PreparedData};
use crate::preprocess::{Imputation, Normalization};
use crate::skeleton::Reduction;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Bool(bool),
    Int(i64),
    Real(f64),
    Str(String),
}

impl Value {
    pub fn as_i64(&self) -> Option<i64> {
        match *self {
            Value::Int(v) => Some(v),
            Value::Real(v) if v.fract() == 0.0 => Some(v as i64),
            _ => None,
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match *self {
            Value::Int(v) => Some(v as f64),
            Value::Real(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match *self {
            Value::Bool(b) => Some(b),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Value::Str(s) => Some(s),
            _ => None,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Bool(v) => write!(f, "{v}"),
            Value::Int(v) => write!(f, "{v}"),
            Value::Real(v) => write!(f, "{v}"),
            Value::Str(v) => f.write_str(v),
        }
    }
}

impl From<bool> for Value {
    fn from(v: bool) -> Self {
        Value::Bool(v)
    }
}

impl From<i64> for Value {
    fn from(v: i64) -> Self {
        Value::Int(v)
    }
}

impl From<f64> for Value {
    fn from(v: f64) -> Self {
        Value::Real(v)
    }
}

impl From<&str> for Value {
    fn from(v: &str) -> Self {
        Value::Str(v.to_string())
    }
}

/// A full parameter assignment. Dimensions inactive under the assignment
/// (for example LSTM widths when the family is TDDense) are absent.
pub type Config = BTreeMap<String, Value>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Domain {
    Categorical { options: Vec<Value> },
    IntRange { lo: i64, hi: i64 },
    LogUniform { lo: f64, hi: f64 },
    Fixed { value: Value },
}

impl Domain {
    pub fn contains(&self, v: &Value) -> bool {
        match self {
            Domain::Categorical { options } => options.contains(v),
            Domain::IntRange { lo, hi } => v.as_i64().is_some_and(|x| (*lo..=*hi).contains(&x)),
            Domain::LogUniform { lo, hi } => v.as_f64().is_some_and(|x| x >= *lo && x <= *hi),
            Domain::Fixed { value } => value == v,
        }
    }

    /// Whether every value of `self` lies in `other`.
    pub fn is_subset_of(&self, other: &Domain) -> bool {
        match self {
            Domain::Categorical { options } => options.iter().all(|v| other.contains(v)),
            Domain::Fixed { value } => other.contains(value),
            Domain::IntRange { lo, hi } => match other {
                Domain::IntRange { lo: l, hi: h } => lo >= l && hi <= h,
                Domain::LogUniform { lo: l, hi: h } => *lo as f64 >= *l && *hi as f64 <= *h,
                Domain::Categorical { .. } | Domain::Fixed { .. } => (*lo..=*hi).all(|x| other.contains(&Value::Int(x))),
            },
            Domain::LogUniform { lo, hi } => match other {
                Domain::LogUniform { lo: l, hi: h } => lo >= l && hi <= h,
                _ => lo == hi && other.contains(&Value::Real(*lo)),
            },
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> Value {
        match self {
            Domain::Categorical { options } => options[rng.random_range(0..options.len())].clone(),
            Domain::IntRange { lo, hi } => Value::Int(rng.random_range(*lo..=*hi)),
            Domain::LogUniform { lo, hi } if lo == hi => Value::Real(*lo),
            Domain::LogUniform { lo, hi } => Value::Real(rng.random_range(lo.ln()..hi.ln()).exp().clamp(*lo, *hi)),
            Domain::Fixed { value } => value.clone(),
        }
    }

    fn validate(&self, name: &str) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("dimension {name}: {m}")));
        match self {
            Domain::Categorical { options } if options.is_empty() => bad("options must be non-empty"),
            Domain::IntRange { lo, hi } if lo > hi => bad("lo must not exceed hi"),
            Domain::LogUniform { lo, hi } if !(*lo > 0.0 && lo <= hi && hi.is_finite()) => {
                bad("log-uniform bounds need 0 < lo <= hi")
            }
            _ => Ok(()),
        }
    }
}

/// Activation condition: the dimension exists only when `param` takes one
/// of `any_of`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Condition {
    pub param: String,
    pub any_of: Vec<Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dimension {
    pub name: String,
    #[serde(flatten)]
    pub domain: Domain,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub active_when: Option<Condition>,
}

impl Dimension {
    pub fn new(name: &str, domain: Domain) -> Self {
        Dimension { name: name.to_string(), domain, active_when: None }
    }

    pub fn when(mut self, param: &str, any_of: &[Value]) -> Self {
        self.active_when = Some(Condition { param: param.to_string(), any_of: any_of.to_vec() });
        self
    }

    pub fn is_active(&self, config: &Config) -> bool {
        self.active_when.as_ref().is_none_or(|c| config.get(&c.param).is_some_and(|v| c.any_of.contains(v)))
    }
}

fn cat<V: Into<Value> + Clone>(options: &[V]) -> Domain {
    Domain::Categorical { options: options.iter().cloned().map(Into::into).collect() }
}

fn int(lo: i64, hi: i64) -> Domain {
    Domain::IntRange { lo, hi }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpace {
    #[serde(rename = "dimension")]
    pub dims: Vec<Dimension>,
}

impl ParamSpace {
    /// The 26 pipeline hyperparameters.
    pub fn pipeline() -> Self {
        let lstm = [Value::from("lstm")];
        let td = [Value::from("td_dense")];
        let conv = [Value::from("conv1d")];
        ParamSpace {
            dims: vec![
                Dimension::new("fps", cat(&[5i64, 10, 15, 30])),
                Dimension::new("window_len", int(5, 120)),
                Dimension::new("hop", cat(&[1i64, 2, 4])),
                Dimension::new("swap", cat(&[true, false])),
                Dimension::new("impute_constant", cat(&[-1.0, 0.0, 2.0])),
                Dimension::new("reduce", cat(&["full", "center_of_gravity", "five_points"])),
                Dimension::new("normalize", cat(&["image_absolute", "on_most_recent", "per_skeleton"])),
                Dimension::new("family", cat(&["lstm", "td_dense", "conv1d"])),
                Dimension::new("lstm_layers", int(1, 3)).when("family", &lstm),
                Dimension::new("lstm_units", int(8, 256)).when("family", &lstm),
                Dimension::new("td_layers", int(1, 12)).when("family", &td),
                Dimension::new("td_units", int(8, 256)).when("family", &td),
                Dimension::new("dense_layers", int(1, 3)).when("family", &td),
                Dimension::new("dense_units", int(8, 512)).when("family", &td),
                Dimension::new("conv_layers", int(1, 4)).when("family", &conv),
                Dimension::new("conv_filters", int(4, 128)).when("family", &conv),
                Dimension::new("conv_kernel", int(2, 7)).when("family", &conv),
                Dimension::new("conv_stride", int(1, 3)).when("family", &conv),
                Dimension::new("conv_padding", cat(&["causal", "same"])).when("family", &conv),
                Dimension::new("conv_double", cat(&[false, true])).when("family", &conv),
                Dimension::new("conv_pool", cat(&[false, true])).when("family", &conv),
                Dimension::new("conv_pool_sections", int(2, 8)).when("conv_pool", &[Value::Bool(true)]),
                Dimension::new("learning_rate", Domain::LogUniform { lo: 1e-5, hi: 1e-2 }),
                Dimension::new("batch_size", cat(&[16i64, 32, 64, 128])),
                Dimension::new("epochs", int(5, 40)),
                Dimension::new("plateau_patience", int(2, 10)),
            ],
        }
    }

    pub fn get(&self, name: &str) -> Option<&Dimension> {
        self.dims.iter().find(|d| d.name == name)
    }

    fn get_mut(&mut self, name: &str) -> Option<&mut Dimension> {
        self.dims.iter_mut().find(|d| d.name == name)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.is_empty() {
            return Err(Error::InvalidConfig("parameter space has no dimensions".into()));
        }
        let mut seen = BTreeSet::new();
        for d in &self.dims {
            d.domain.validate(&d.name)?;
            if let Some(c) = &d.active_when {
                if !seen.contains(c.param.as_str()) {
                    return Err(Error::InvalidConfig(format!(
                        "dimension {} depends on {}, which must be declared before it",
                        d.name, c.param
                    )));
                }
            }
            if !seen.insert(d.name.as_str()) {
                return Err(Error::InvalidConfig(format!("duplicate dimension {}", d.name)));
            }
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let space: ParamSpace = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string().trim_end().to_string()))?;
        space.validate()?;
        Ok(space)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    /// Whether `config` assigns exactly the active dimensions, each inside
    /// its domain.
    pub fn contains(&self, config: &Config) -> bool {
        let mut active = 0;
        for d in &self.dims {
            if d.is_active(config) {
                active += 1;
                if !config.get(&d.name).is_some_and(|v| d.domain.contains(v)) {
                    return false;
                }
            }
        }
        active == config.len()
    }

    /// Dimension-wise inclusion, ignoring the dimensions named in `skip`.
    pub fn is_subset_of(&self, other: &ParamSpace, skip: &[&str]) -> bool {
        self.dims.iter().filter(|d| !skip.contains(&d.name.as_str())).all(|d| {
            other.get(&d.name).is_some_and(|o| d.domain.is_subset_of(&o.domain))
        })
    }

    pub fn frozen(&self) -> Vec<&str> {
        self.dims.iter().filter(|d| matches!(d.domain, Domain::Fixed { .. })).map(|d| d.name.as_str()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Constraints {
    /// Longest window history in seconds (`window_len / fps`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_history_s: Option<f64>,
    /// Forces per-skeleton normalization.
    #[serde(default)]
    pub generalization_only: bool,
}

impl Default for Constraints {
    fn default() -> Self {
        Constraints { max_history_s: Some(3.5), generalization_only: false }
    }
}

impl Constraints {
    pub fn check(&self, config: &Config) -> std::result::Result<(), String> {
        if let (Some(max), Some(len), Some(fps)) = (
            self.max_history_s,
            config.get("window_len").and_then(Value::as_f64),
            config.get("fps").and_then(Value::as_f64),
        ) {
            if len / fps > max + 1e-9 {
                return Err(format!("history {:.3} s exceeds {max} s", len / fps));
            }
        }
        if self.generalization_only && config.get("normalize").is_some_and(|v| v.as_str() != Some("per_skeleton")) {
            return Err("generalization_only requires per_skeleton normalization".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Random,
    SurrogateGuided,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchConfig {
    pub budget: usize,
    pub strategy: Strategy,
    #[serde(default = "default_quantile")]
    pub top_quantile: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub constraints: Constraints,
    /// Number of stages; the budget is split evenly between them.
    #[serde(default = "one")]
    pub stages: usize,
    /// Share of SurrogateGuided proposals drawn from the whole space.
    #[serde(default = "default_exploration")]
    pub exploration: f64,
    /// Trials proposed together and evaluated concurrently. Proposals only
    /// depend on trials of earlier batches, so results do not depend on the
    /// number of worker threads.
    #[serde(default = "default_batch")]
    pub batch: usize,
    /// Multiplier applied to the largest learning rate between stages.
    #[serde(default = "default_lr_decay")]
    pub lr_decay: f64,
    /// Added to the largest epoch count between stages.
    #[serde(default = "default_epoch_increase")]
    pub epoch_increase: i64,
    #[serde(default = "default_attempts")]
    pub max_attempts: usize,
}

fn default_quantile() -> f64 {
    0.2
}
fn one() -> usize {
    1
}
fn default_exploration() -> f64 {
    0.3
}
fn default_batch() -> usize {
    5
}
fn default_lr_decay() -> f64 {
    0.5
}
fn default_epoch_increase() -> i64 {
    8
}
fn default_attempts() -> usize {
    1000
}

impl SearchConfig {
    pub fn new(budget: usize, strategy: Strategy, seed: u64) -> Self {
        SearchConfig {
            budget,
            strategy,
            top_quantile: default_quantile(),
            seed,
            constraints: Constraints::default(),
            stages: 1,
            exploration: default_exploration(),
            batch: default_batch(),
            lr_decay: default_lr_decay(),
            epoch_increase: default_epoch_increase(),
            max_attempts: default_attempts(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.budget == 0 {
            return bad("budget must be at least 1");
        }
        if !(self.top_quantile > 0.0 && self.top_quantile < 1.0) {
            return bad("top_quantile must lie in (0, 1)");
        }
        if self.stages == 0 || self.batch == 0 || self.max_attempts == 0 {
            return bad("stages, batch and max_attempts must be positive");
        }
        if !(0.0..=1.0).contains(&self.exploration) {
            return bad("exploration must lie in [0, 1]");
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) || self.epoch_increase < 0 {
            return bad("lr_decay must lie in (0, 1] and epoch_increase must be non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub index: usize,
    pub stage: usize,
    pub config: Config,
    pub val_accuracy: f64,
    pub val_loss: f64,
    pub param_count: usize,
    pub wall_time_s: f64,
    pub seed: u64,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub finished_unix_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialOutcome {
    pub val_accuracy: f64,
    pub val_loss: f64,
    pub param_count: usize,
}

/// What a trial measures. `check` rejects incoherent configurations at
/// sampling time; `evaluate` failures become failed trial records.
pub trait Objective: Sync {
    fn check(&self, _config: &Config) -> Result<()> {
        Ok(())
    }

    fn evaluate(&self, config: &Config, seed: u64) -> Result<TrialOutcome>;
}

pub fn trial_seed(search_seed: u64, index: usize) -> u64 {
    search_seed ^ (index as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

pub fn run_trial(objective: &dyn Objective, config: &Config, seed: u64, index: usize, stage: usize) -> TrialRecord {
    let started = Instant::now();
    let result = objective.evaluate(config, seed);
    let wall_time_s = started.elapsed().as_secs_f64();
    let finished_unix_s = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64());
    let mut record = TrialRecord {
        index,
        stage,
        config: config.clone(),
        val_accuracy: 0.0,
        val_loss: 0.0,
        param_count: 0,
        wall_time_s,
        seed,
        ok: false,
        error: None,
        finished_unix_s,
    };
    match result {
        Ok(o) if (0.0..=1.0).contains(&o.val_accuracy) && o.val_loss.is_finite() => {
            record.val_accuracy = o.val_accuracy;
            record.val_loss = o.val_loss;
            record.param_count = o.param_count;
            record.ok = true;
        }
        Ok(o) => {
            record.error = Some(Error::TrialFailed(format!("invalid metrics {o:?}")).to_string());
        }
        Err(e) => {
            log::warn!("trial {index} failed: {e}");
            record.error = Some(Error::TrialFailed(e.to_string()).to_string());
        }
    }
    record
}

/// Successful trials, best first: higher accuracy, then lower loss, then
/// earlier index.
pub fn ranked(trials: &[TrialRecord]) -> Vec<&TrialRecord> {
    let mut ok: Vec<&TrialRecord> = trials.iter().filter(|t| t.ok).collect();
    ok.sort_by(|a, b| {
        b.val_accuracy
            .total_cmp(&a.val_accuracy)
            .then(a.val_loss.total_cmp(&b.val_loss))
            .then(a.index.cmp(&b.index))
    });
    ok
}

fn top(trials: &[TrialRecord], quantile: f64, min: usize) -> Vec<&TrialRecord> {
    let ok = ranked(trials);
    let n = ((quantile * ok.len() as f64).ceil() as usize).max(min).min(ok.len());
    ok.into_iter().take(n).collect()
}

/// Narrows every dimension to the values used by the top-quantile trials:
/// the numeric hull for ranges and the value set for categories. Frozen
/// dimensions, and dimensions no top trial used, are left unchanged.
pub fn shrink(space: &ParamSpace, trials: &[TrialRecord], top_quantile: f64) -> Result<ParamSpace> {
    let best = top(trials, top_quantile, 1);
    if best.is_empty() {
        return Err(Error::NoSuccessfulTrials);
    }
    let mut out = space.clone();
    for d in out.dims.iter_mut() {
        let values: Vec<&Value> = best.iter().filter_map(|t| t.config.get(&d.name)).collect();
        if values.is_empty() {
            continue;
        }
        d.domain = match &d.domain {
            Domain::Categorical { options } => {
                let kept: Vec<Value> = options.iter().filter(|o| values.contains(o)).cloned().collect();
                if kept.is_empty() {
                    continue;
                }
                Domain::Categorical { options: kept }
            }
            &Domain::IntRange { lo, hi } => {
                let ints: Vec<i64> = values.iter().filter_map(|v| v.as_i64()).collect();
                match (ints.iter().min(), ints.iter().max()) {
                    (Some(&a), Some(&b)) if a.max(lo) <= b.min(hi) => Domain::IntRange { lo: a.max(lo), hi: b.min(hi) },
                    _ => continue,
                }
            }
            &Domain::LogUniform { lo, hi } => {
                let reals: Vec<f64> = values.iter().filter_map(|v| v.as_f64()).collect();
                let a = reals.iter().copied().fold(f64::INFINITY, f64::min).max(lo);
                let b = reals.iter().copied().fold(f64::NEG_INFINITY, f64::max).min(hi);
                if a > b {
                    continue;
                }
                Domain::LogUniform { lo: a, hi: b }
            }
            Domain::Fixed { .. } => continue,
        };
    }
    Ok(out)
}

/// Freezes every dimension on which all top-quantile trials (at least two)
/// agree. With fewer than two successful trials the space is unchanged.
pub fn freeze(space: &ParamSpace, trials: &[TrialRecord], top_quantile: f64) -> ParamSpace {
    let best = top(trials, top_quantile, 2);
    let mut out = space.clone();
    if best.len() < 2 {
        return out;
    }
    for d in out.dims.iter_mut() {
        if matches!(d.domain, Domain::Fixed { .. }) {
            continue;
        }
        let values: Vec<Option<&Value>> = best.iter().map(|t| t.config.get(&d.name)).collect();
        if let Some(Some(first)) = values.first() {
            if values.iter().all(|v| *v == Some(*first)) && d.domain.contains(first) {
                d.domain = Domain::Fixed { value: (*first).clone() };
            }
        }
    }
    out
}

/// Lowers the learning-rate ceiling and raises the epoch ceiling.
pub fn restage(space: &ParamSpace, lr_decay: f64, epoch_increase: i64) -> ParamSpace {
    let mut out = space.clone();
    if let Some(d) = out.get_mut("learning_rate") {
        d.domain = match &d.domain {
            &Domain::LogUniform { lo, hi } => Domain::LogUniform { lo, hi: lo.max(hi * lr_decay) },
            Domain::Categorical { options } if options.len() > 1 => {
                let max = options.iter().filter_map(Value::as_f64).fold(f64::NEG_INFINITY, f64::max);
                Domain::Categorical { options: options.iter().filter(|v| v.as_f64() != Some(max)).cloned().collect() }
            }
            Domain::Fixed { value } => match value.as_f64() {
                Some(v) => Domain::Fixed { value: Value::Real(v * lr_decay) },
                None => d.domain.clone(),
            },
            other => other.clone(),
        };
    }
    if let Some(d) = out.get_mut("epochs") {
        d.domain = match &d.domain {
            &Domain::IntRange { lo, hi } => Domain::IntRange { lo, hi: hi + epoch_increase },
            Domain::Fixed { value } => match value.as_i64() {
                Some(v) => Domain::Fixed { value: Value::Int(v + epoch_increase) },
                None => d.domain.clone(),
            },
            other => other.clone(),
        };
    }
    out
}

fn assign(space: &ParamSpace, rng: &mut ChaCha8Rng, mut pick: impl FnMut(&Dimension, &mut ChaCha8Rng) -> Value) -> Config {
    let mut config = Config::new();
    for d in &space.dims {
        if d.is_active(&config) {
            let v = pick(d, rng);
            config.insert(d.name.clone(), v);
        }
    }
    config
}

fn admissible(config: &Config, constraints: &Constraints, objective: &dyn Objective) -> bool {
    constraints.check(config).is_ok() && objective.check(config).is_ok()
}

fn force(config: &mut Config, constraints: &Constraints) {
    if constraints.generalization_only && config.contains_key("normalize") {
        config.insert("normalize".into(), Value::from("per_skeleton"));
    }
}

/// Draws a configuration uniformly from `space`, resampling until it
/// satisfies the constraints and the objective's coherence check.
pub fn sample(
    space: &ParamSpace,
    constraints: &Constraints,
    objective: &dyn Objective,
    rng: &mut ChaCha8Rng,
    max_attempts: usize,
) -> Result<Config> {
    for _ in 0..max_attempts {
        let mut config = assign(space, rng, |d, rng| d.domain.sample(rng));
        force(&mut config, constraints);
        if space.contains(&config) && admissible(&config, constraints, objective) {
            return Ok(config);
        }
    }
    Err(Error::UnsatisfiableConstraints(format!("no admissible configuration in {max_attempts} attempts")))
}

/// Smallest top set the surrogate resamples from.
const SURROGATE_MIN_TOP: usize = 4;

/// Quantile-resampling surrogate: each dimension takes the value of a
/// random top trial, numeric values are occasionally nudged to a neighbour.
fn sample_guided(
    space: &ParamSpace,
    best: &[&TrialRecord],
    constraints: &Constraints,
    objective: &dyn Objective,
    rng: &mut ChaCha8Rng,
    max_attempts: usize,
) -> Option<Config> {
    let jitter = Normal::new(0.0, 0.25).expect("valid sigma");
    for _ in 0..max_attempts {
        let mut config = assign(space, rng, |d, rng| {
            let seen: Vec<&Value> =
                best.iter().filter_map(|t| t.config.get(&d.name)).filter(|v| d.domain.contains(v)).collect();
            if seen.is_empty() {
                return d.domain.sample(rng);
            }
            let v = seen[rng.random_range(0..seen.len())].clone();
            match (&d.domain, &v) {
                (&Domain::IntRange { lo, hi }, Value::Int(x)) if rng.random_bool(0.5) => {
                    let step = if rng.random_bool(0.5) { 1 } else { -1 };
                    Value::Int((x + step).clamp(lo, hi))
                }
                (&Domain::LogUniform { lo, hi }, Value::Real(x)) => {
                    Value::Real((x.ln() + jitter.sample(rng)).exp().clamp(lo, hi))
                }
                _ => v,
            }
        });
        force(&mut config, constraints);
        if space.contains(&config) && admissible(&config, constraints, objective) {
            return Some(config);
        }
    }
    None
}

pub struct SearchResult {
    pub best: Option<TrialRecord>,
    pub trials: Vec<TrialRecord>,
    /// The space each stage sampled from.
    pub stage_spaces: Vec<ParamSpace>,
}

/// Runs exactly `cfg.budget` trials over `cfg.stages` stages, writing one
/// JSON line per trial to `log` in trial order. Between stages the space is
/// shrunk and frozen around the stage's top trials, the learning-rate
/// ceiling is lowered and the epoch ceiling raised.
pub fn search(
    space: &ParamSpace,
    objective: &dyn Objective,
    cfg: &SearchConfig,
    jobs: usize,
    mut log: Option<&mut dyn Write>,
) -> Result<SearchResult> {
    cfg.validate()?;
    space.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut trials: Vec<TrialRecord> = Vec::with_capacity(cfg.budget);
    let mut stage_spaces = Vec::new();
    let mut current = space.clone();
    for stage in 0..cfg.stages {
        let stage_budget = cfg.budget / cfg.stages + usize::from(stage < cfg.budget % cfg.stages);
        if stage > 0 {
            let previous: Vec<TrialRecord> = trials.iter().filter(|t| t.stage == stage - 1).cloned().collect();
            match shrink(&current, &previous, cfg.top_quantile) {
                Ok(s) => current = freeze(&s, &previous, cfg.top_quantile),
                Err(e) => log::warn!("stage {stage}: space kept ({e})"),
            }
            current = restage(&current, cfg.lr_decay, cfg.epoch_increase);
        }
        stage_spaces.push(current.clone());
        let n_init = cfg.batch.max(stage_budget / 5);
        let stage_start = trials.len();
        while trials.len() < stage_start + stage_budget {
            let n = cfg.batch.min(stage_start + stage_budget - trials.len());
            let proposals = propose(&current, objective, cfg, &trials, n, n_init, &mut rng)?;
            let base = trials.len();
            let batch: Vec<TrialRecord> = pool.install(|| {
                proposals
                    .par_iter()
                    .enumerate()
                    .map(|(k, c)| run_trial(objective, c, trial_seed(cfg.seed, base + k), base + k, stage))
                    .collect()
            });
            if let Some(sink) = log.as_deref_mut() {
                for t in &batch {
                    serde_json::to_writer(&mut *sink, t)?;
                    sink.write_all(b"\n")?;
                }
                sink.flush()?;
            }
            trials.extend(batch);
        }
    }
    let best = ranked(&trials).first().map(|t| (*t).clone());
    Ok(SearchResult { best, trials, stage_spaces })
}

fn propose(
    space: &ParamSpace,
    objective: &dyn Objective,
    cfg: &SearchConfig,
    trials: &[TrialRecord],
    n: usize,
    n_init: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Config>> {
    let in_space: Vec<TrialRecord> = trials.iter().filter(|t| t.ok && space.contains(&t.config)).cloned().collect();
    let best = top(&in_space, cfg.top_quantile, SURROGATE_MIN_TOP);
    let mut seen: BTreeSet<String> =
        trials.iter().map(|t| serde_json::to_string(&t.config).expect("config serializes")).collect();
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let guided = cfg.strategy == Strategy::SurrogateGuided && in_space.len() >= n_init && !rng.random_bool(cfg.exploration);
        let mut chosen = None;
        // Prefer unseen configurations but accept a repeat rather than fail.
        for _ in 0..32 {
            let candidate = if guided {
                sample_guided(space, &best, &cfg.constraints, objective, rng, cfg.max_attempts)
                    .map_or_else(|| sample(space, &cfg.constraints, objective, rng, cfg.max_attempts), Ok)?
            } else {
                sample(space, &cfg.constraints, objective, rng, cfg.max_attempts)?
            };
            let key = serde_json::to_string(&candidate)?;
            let fresh = seen.insert(key);
            chosen = Some(candidate);
            if fresh {
                break;
            }
        }
        out.push(chosen.expect("at least one attempt"));
    }
    Ok(out)
}

fn parse_enum<T: serde::de::DeserializeOwned>(name: &str, v: &Value) -> Result<T> {
    serde_json::from_value(serde_json::to_value(v)?).map_err(|_| Error::InvalidConfig(format!("bad value {v} for {name}")))
}

/// Family-specific dimensions and the family they belong to.
const MODEL_DIMS: [(&str, &str); 14] = [
    ("lstm", "lstm_layers"),
    ("lstm", "lstm_units"),
    ("td_dense", "td_layers"),
    ("td_dense", "td_units"),
    ("td_dense", "dense_layers"),
    ("td_dense", "dense_units"),
    ("conv1d", "conv_layers"),
    ("conv1d", "conv_filters"),
    ("conv1d", "conv_kernel"),
    ("conv1d", "conv_stride"),
    ("conv1d", "conv_padding"),
    ("conv1d", "conv_double"),
    ("conv1d", "conv_pool"),
    ("conv1d_pool", "conv_pool_sections"),
];

/// Applies a search assignment on top of a base run configuration.
pub fn apply(base: &RunConfig, config: &Config) -> Result<RunConfig> {
    let mut run = base.clone();
    let bad = |name: &str, v: &Value| Error::InvalidConfig(format!("bad value {v} for {name}"));
    let get_usize = |name: &str| -> Result<Option<usize>> {
        config.get(name).map(|v| v.as_i64().filter(|x| *x > 0).map(|x| x as usize).ok_or_else(|| bad(name, v))).transpose()
    };
    for (name, v) in config {
        match name.as_str() {
            "fps" => run.window.fps = get_usize(name)?.unwrap_or(0) as u32,
            "window_len" => run.window.length = get_usize(name)?.unwrap_or(0),
            "hop" => run.window.train_hop = get_usize(name)?.unwrap_or(0),
            "swap" => run.preprocess.swap_enabled = v.as_bool().ok_or_else(|| bad(name, v))?,
            "impute_constant" => run.preprocess.impute = Imputation::Constant(v.as_f64().ok_or_else(|| bad(name, v))? as f32),
            "reduce" => run.preprocess.reduce = parse_enum::<Reduction>(name, v)?,
            "normalize" => run.preprocess.normalize = parse_enum::<Normalization>(name, v)?,
            "learning_rate" => run.train.learning_rate = v.as_f64().ok_or_else(|| bad(name, v))?,
            "batch_size" => run.train.batch_size = get_usize(name)?.unwrap_or(0),
            "epochs" => run.train.epochs = get_usize(name)?.unwrap_or(0),
            "plateau_patience" => run.train.plateau.patience = get_usize(name)?.unwrap_or(0),
            "family" | "lstm_layers" | "lstm_units" | "td_layers" | "td_units" | "dense_layers" | "dense_units"
            | "conv_layers" | "conv_filters" | "conv_kernel" | "conv_stride" | "conv_padding" | "conv_double"
            | "conv_pool" | "conv_pool_sections" => {}
            _ => return Err(Error::InvalidConfig(format!("unknown search dimension {name}"))),
        }
    }
    let touches_model = config.keys().any(|k| k == "family" || MODEL_DIMS.iter().any(|(_, d)| d == k));
    if touches_model {
        let family = match config.get("family") {
            Some(v) => v.as_str().ok_or_else(|| bad("family", v))?.to_string(),
            None => base.model.family().as_str().to_string(),
        };
        for (owner, dim) in MODEL_DIMS {
            if config.contains_key(dim) && owner != family && !(owner == "conv1d_pool" && family == "conv1d") {
                return Err(Error::InvalidConfig(format!("{dim} does not apply to family {family}")));
            }
        }
        // Unassigned dimensions keep the base model's values when the base
        // has the same family.
        let stack = |prior: &[usize], layers: &str, width: &str| -> Result<Vec<usize>> {
            let n = get_usize(layers)?.unwrap_or(prior.len());
            match get_usize(width)? {
                Some(w) => Ok(vec![w; n]),
                None if n == prior.len() && n > 0 => Ok(prior.to_vec()),
                None => prior
                    .first()
                    .map(|&w| vec![w; n])
                    .ok_or_else(|| Error::InvalidConfig(format!("{width} is required"))),
            }
        };
        run.model = match (family.as_str(), &base.model) {
            ("lstm", prior) => {
                let units = match prior {
                    ModelConfig::Lstm { units } => units.as_slice(),
                    _ => &[],
                };
                ModelConfig::Lstm { units: stack(units, "lstm_layers", "lstm_units")? }
            }
            ("td_dense", prior) => {
                let (td, dense) = match prior {
                    ModelConfig::TdDense { td_units, dense_units } => (td_units.as_slice(), dense_units.as_slice()),
                    _ => (&[][..], &[][..]),
                };
                ModelConfig::TdDense {
                    td_units: stack(td, "td_layers", "td_units")?,
                    dense_units: stack(dense, "dense_layers", "dense_units")?,
                }
            }
            ("conv1d", prior) => {
                let (layers, filters, kernel, stride, padding, double, pool) = match *prior {
                    ModelConfig::Conv1d { layers, filters, kernel_size, stride, padding, double_filters, pool_sections } => {
                        (Some(layers), Some(filters), Some(kernel_size), Some(stride), padding, double_filters, pool_sections)
                    }
                    _ => (None, None, None, None, Padding::Causal, false, None),
                };
                let pick = |n: &str, prior: Option<usize>| {
                    get_usize(n)?.or(prior).ok_or_else(|| Error::InvalidConfig(format!("{n} is required")))
                };
                let flag = |n: &str, default: bool| config.get(n).and_then(Value::as_bool).unwrap_or(default);
                ModelConfig::Conv1d {
                    layers: pick("conv_layers", layers)?,
                    filters: pick("conv_filters", filters)?,
                    kernel_size: pick("conv_kernel", kernel)?,
                    stride: pick("conv_stride", stride)?,
                    padding: match config.get("conv_padding") {
                        Some(v) => parse_enum::<Padding>("conv_padding", v)?,
                        None => padding,
                    },
                    double_filters: flag("conv_double", double),
                    pool_sections: if flag("conv_pool", pool.is_some()) {
                        Some(pick("conv_pool_sections", pool)?)
                    } else {
                        None
                    },
                }
            }
            (other, _) => return Err(Error::InvalidConfig(format!("unknown family {other}"))),
        };
    }
    run.validate()?;
    Ok(run)
}

/// Trains and validates the full pipeline for each configuration.
pub struct PipelineObjective<'a> {
    pub base: RunConfig,
    pub videos: &'a [VideoStream],
}

impl Objective for PipelineObjective<'_> {
    fn check(&self, config: &Config) -> Result<()> {
        apply(&self.base, config).map(|_| ())
    }

    fn evaluate(&self, config: &Config, seed: u64) -> Result<TrialOutcome> {
        let mut run = apply(&self.base, config)?;
        run.seed = seed;
        let data = PreparedData::new(self.videos, &run)?;
        let outcome = run_prepared(&data, &run)?;
        let val = outcome
            .val
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig("no validation windows for this configuration".into()))?;
        Ok(TrialOutcome { val_accuracy: val.accuracy, val_loss: val.loss, param_count: parameter_count(&outcome.spec)? })
    }
}
