//! Merged run configuration: one flat `key = value` namespace over every
//! component config.

use std::path::PathBuf;

use tmrl_core::agent::{AgentConfig, SampleMode};
use tmrl_core::config;
use tmrl_core::datasets::SynthConfig;
use tmrl_core::features::FeatureConfig;
use tmrl_core::matching::MatchWeights;
use tmrl_core::pipeline::{TrackerConfig, TrainConfig};
use tmrl_core::proposals::DetectorScript;
use tmrl_core::{Error, Result};

/// Prefix for environment overrides of config keys.
pub const ENV_PREFIX: &str = "TM_";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    /// `sequences` independent generator runs.
    Synthetic,
    /// The identity-swap drift benchmark.
    Drift,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyKind {
    Agent,
    Update,
    Keep,
    Oracle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProposalKind {
    /// Scripted detector over the stored scene, `detector.txt` when present.
    Scripted,
    /// `proposals/props_%05d.txt` inside each sequence directory.
    Files,
}

fn parse_enum<T: Copy>(key: &str, value: &str, table: &[(&str, T)]) -> Result<T> {
    table.iter().find(|(n, _)| *n == value).map(|(_, v)| *v).ok_or_else(|| {
        let names: Vec<&str> = table.iter().map(|(n, _)| *n).collect();
        Error::invalid(key, format!("`{value}` is not one of {}", names.join("|")))
    })
}

fn enum_name<T: Copy + PartialEq>(v: T, table: &[(&'static str, T)]) -> &'static str {
    table
        .iter()
        .find(|(_, x)| *x == v)
        .map(|(n, _)| *n)
        .expect("every variant named")
}

const DATASETS: &[(&str, DatasetKind)] = &[("synthetic", DatasetKind::Synthetic), ("drift", DatasetKind::Drift)];
const POLICIES: &[(&str, PolicyKind)] = &[
    ("agent", PolicyKind::Agent),
    ("update", PolicyKind::Update),
    ("keep", PolicyKind::Keep),
    ("oracle", PolicyKind::Oracle),
];
const SAMPLES: &[(&str, SampleMode)] = &[("greedy", SampleMode::Greedy), ("stochastic", SampleMode::Stochastic)];
const PROPOSALS: &[(&str, ProposalKind)] = &[("scripted", ProposalKind::Scripted), ("files", ProposalKind::Files)];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub dataset: DatasetKind,
    pub sequences: usize,
    pub policy: PolicyKind,
    pub sample: SampleMode,
    pub proposals: ProposalKind,
    /// Training budget in transitions.
    pub iterations: u64,
    pub data: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub tracker: TrackerConfig,
    pub train: TrainConfig,
    pub agent: AgentConfig,
    pub detector: DetectorScript,
    pub synth: SynthConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            dataset: DatasetKind::Synthetic,
            sequences: 1,
            policy: PolicyKind::Agent,
            sample: SampleMode::Greedy,
            proposals: ProposalKind::Scripted,
            iterations: 50_000,
            data: None,
            checkpoint: None,
            out: None,
            tracker: TrackerConfig::default(),
            train: TrainConfig::default(),
            agent: AgentConfig::default(),
            detector: DetectorScript::default(),
            synth: SynthConfig::default(),
        }
    }
}

fn opt_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

fn path_text(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if let Some(k) = key.strip_prefix("detector.") {
            return self.detector.set(k, value).map_err(|e| prefix_error(e, "detector."));
        }
        if let Some(k) = key.strip_prefix("synth.") {
            return self.synth.set(k, value).map_err(|e| prefix_error(e, "synth."));
        }
        let t = &mut self.tracker;
        match key {
            "seed" => self.seed = config::value(key, value)?,
            "dataset" => self.dataset = parse_enum(key, value, DATASETS)?,
            "sequences" => self.sequences = config::value(key, value)?,
            "policy" => self.policy = parse_enum(key, value, POLICIES)?,
            "sample" => self.sample = parse_enum(key, value, SAMPLES)?,
            "proposals" => self.proposals = parse_enum(key, value, PROPOSALS)?,
            "iterations" => self.iterations = config::value(key, value)?,
            "data" => self.data = opt_path(value),
            "checkpoint" => self.checkpoint = opt_path(value),
            "out" => self.out = opt_path(value),
            "tracker.first_alpha" => {
                let a: f64 = config::value(key, value)?;
                t.first_weights = MatchWeights::new(a, 1.0 - a)?;
            }
            "tracker.alpha" => {
                let a: f64 = config::value(key, value)?;
                t.weights = MatchWeights::new(a, 1.0 - a)?;
            }
            "tracker.keep_limit" => t.keep_limit = config::value(key, value)?,
            "tracker.ratio_big" => t.ratio_big = config::value(key, value)?,
            "tracker.ratio_mid" => t.ratio_mid = config::value(key, value)?,
            "tracker.ratio_small" => t.ratio_small = config::value(key, value)?,
            "tracker.displacement" => t.displacement = config::value(key, value)?,
            "tracker.proposal_cap" => t.proposal_cap = config::value(key, value)?,
            "tracker.confidence_decay" => t.confidence_decay = config::value(key, value)?,
            "tracker.grid" => {
                t.features = FeatureConfig {
                    grid: config::value(key, value)?,
                }
            }
            "train.gamma" => self.train.gamma = config::value(key, value)?,
            "train.clip_len" => self.train.clip_len = config::value(key, value)?,
            "train.batch" => self.train.batch = config::value(key, value)?,
            "agent.hidden" => self.agent.hidden = config::value(key, value)?,
            "agent.lr_actor" => self.agent.lr_actor = config::value(key, value)?,
            "agent.lr_critic" => self.agent.lr_critic = config::value(key, value)?,
            "agent.decay_factor" => self.agent.decay_factor = config::value(key, value)?,
            "agent.decay_every" => self.agent.decay_every = config::value(key, value)?,
            _ => return Err(config::unknown(key)),
        }
        Ok(())
    }

    /// Every key with its current value; repeated keys are list entries.
    pub fn entries(&self) -> Vec<(String, String)> {
        let t = &self.tracker;
        let mut out: Vec<(String, String)> = vec![
            ("seed", self.seed.to_string()),
            ("dataset", enum_name(self.dataset, DATASETS).to_string()),
            ("sequences", self.sequences.to_string()),
            ("policy", enum_name(self.policy, POLICIES).to_string()),
            ("sample", enum_name(self.sample, SAMPLES).to_string()),
            ("proposals", enum_name(self.proposals, PROPOSALS).to_string()),
            ("iterations", self.iterations.to_string()),
            ("data", path_text(&self.data)),
            ("checkpoint", path_text(&self.checkpoint)),
            ("out", path_text(&self.out)),
            ("tracker.first_alpha", t.first_weights.alpha().to_string()),
            ("tracker.alpha", t.weights.alpha().to_string()),
            ("tracker.keep_limit", t.keep_limit.to_string()),
            ("tracker.ratio_big", t.ratio_big.to_string()),
            ("tracker.ratio_mid", t.ratio_mid.to_string()),
            ("tracker.ratio_small", t.ratio_small.to_string()),
            ("tracker.displacement", t.displacement.to_string()),
            ("tracker.proposal_cap", t.proposal_cap.to_string()),
            ("tracker.confidence_decay", t.confidence_decay.to_string()),
            ("tracker.grid", t.features.grid.to_string()),
            ("train.gamma", self.train.gamma.to_string()),
            ("train.clip_len", self.train.clip_len.to_string()),
            ("train.batch", self.train.batch.to_string()),
            ("agent.hidden", self.agent.hidden.to_string()),
            ("agent.lr_actor", self.agent.lr_actor.to_string()),
            ("agent.lr_critic", self.agent.lr_critic.to_string()),
            ("agent.decay_factor", self.agent.decay_factor.to_string()),
            ("agent.decay_every", self.agent.decay_every.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        out.extend(
            self.detector
                .entries()
                .into_iter()
                .map(|(k, v)| (format!("detector.{k}"), v)),
        );
        out.extend(self.synth.entries().into_iter().map(|(k, v)| (format!("synth.{k}"), v)));
        out
    }

    pub fn to_text(&self) -> String {
        self.entries().iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Applies every entry of `text` on top of the current values.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for e in config::parse(text)? {
            self.set(&e.key, &e.value)
                .map_err(|err| Error::Config(format!("line {}: {err}", e.line)))?;
        }
        Ok(())
    }

    /// Applies `TM_<KEY>` variables, where `__` in the name stands for `.`.
    /// Names in `skip` belong to command-line flags.
    pub fn apply_env(&mut self, vars: impl IntoIterator<Item = (String, String)>, skip: &[&str]) -> Result<()> {
        let mut found: Vec<(String, String)> = vars
            .into_iter()
            .filter(|(k, _)| k.starts_with(ENV_PREFIX) && !skip.contains(&k.as_str()))
            .collect();
        found.sort();
        for (name, value) in found {
            let key = name[ENV_PREFIX.len()..].to_ascii_lowercase().replace("__", ".");
            self.set(&key, &value)
                .map_err(|err| Error::Config(format!("environment {name}: {err}")))?;
        }
        Ok(())
    }

    /// Agent shape follows the feature grid.
    pub fn agent_config(&self) -> AgentConfig {
        AgentConfig {
            feature_dim: self.tracker.features.dim(),
            ..self.agent
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.tracker.validate()?;
        self.train.validate()?;
        self.detector.validate()?;
        self.synth.validate()?;
        if self.sequences == 0 {
            return Err(Error::invalid("sequences", "must be >= 1"));
        }
        let a = &self.agent;
        if a.hidden == 0 {
            return Err(Error::invalid("agent.hidden", "must be >= 1"));
        }
        for (k, v) in [("agent.lr_actor", a.lr_actor), ("agent.lr_critic", a.lr_critic)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(k, "must be finite and >= 0"));
            }
        }
        if !(a.decay_factor > 0.0 && a.decay_factor <= 1.0) {
            return Err(Error::invalid("agent.decay_factor", "must be in (0,1]"));
        }
        Ok(())
    }
}

fn prefix_error(e: Error, prefix: &str) -> Error {
    match e {
        Error::InvalidValue { field, reason } if !field.starts_with(prefix) => Error::InvalidValue {
            field: format!("{prefix}{field}"),
            reason,
        },
        Error::Config(msg) => Error::Config(msg.replacen("key `", &format!("key `{prefix}"), 1)),
        other => other,
    }
}
