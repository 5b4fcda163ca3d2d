//! Run configuration: a flat `section.key = value` file, overridable key by key.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dp::{PrivacySpec, SensitivityReduce};
use crate::encoder::{EncoderConfig, FeatureNoise};
use crate::error::{Error, Result};
use crate::graph::DEFAULT_SPLIT_RATIOS;
use crate::vgae::{LossSign, VgaeConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    #[default]
    Lp,
    Nc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackMode {
    /// Match on (type, degree, 4-cycle count).
    #[default]
    Signature,
    /// Match on (type, degree) only.
    Degree,
}

/// How the attacker turns a trained model into a target graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reconstruction {
    /// Keep auxiliary edges the model ranks above the source's median destination.
    #[default]
    AboveMedian,
    /// Keep each source's auxiliary-degree best destinations among all nodes.
    TopDegree,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacySettings {
    pub enabled: bool,
    /// Global budget; infinite disables both mechanisms.
    pub epsilon: f64,
    /// Share of `epsilon` given to the features when no explicit split is set.
    pub feature_fraction: f64,
    pub epsilon_f: Option<f64>,
    pub epsilon_s: Option<f64>,
    pub delta: f64,
    pub lambda: f64,
    pub c2: f64,
    pub allow_large_epsilon: bool,
    pub feature_noise: bool,
    pub topology_noise: bool,
}

impl Default for PrivacySettings {
    fn default() -> Self {
        Self {
            enabled: true,
            epsilon: 1.0,
            feature_fraction: 0.5,
            epsilon_f: None,
            epsilon_s: None,
            delta: PrivacySpec::DEFAULT_DELTA,
            lambda: PrivacySpec::DEFAULT_LAMBDA,
            c2: PrivacySpec::DEFAULT_C2,
            allow_large_epsilon: false,
            feature_noise: true,
            topology_noise: true,
        }
    }
}

impl PrivacySettings {
    /// Whether any mechanism runs.
    pub fn active(&self) -> bool {
        self.enabled && self.epsilon.is_finite() && (self.feature_noise || self.topology_noise)
    }

    /// The budget split, or `None` when privacy is off.
    pub fn spec(&self) -> Result<Option<PrivacySpec>> {
        if !self.active() {
            return Ok(None);
        }
        let mut spec = match (self.epsilon_f, self.epsilon_s) {
            (Some(f), Some(s)) => {
                let spec = PrivacySpec::new(f, s, self.delta)?;
                if spec.epsilon != self.epsilon {
                    return Err(Error::Privacy(format!(
                        "epsilon_f + epsilon_s = {} does not equal epsilon = {}",
                        spec.epsilon, self.epsilon
                    )));
                }
                spec
            }
            (None, None) => PrivacySpec::from_total(self.epsilon, self.feature_fraction, self.delta)?,
            _ => return Err(Error::Privacy("set both epsilon_f and epsilon_s, or neither".into())),
        };
        spec.lambda = self.lambda;
        spec.c2 = self.c2;
        spec.allow_large_epsilon = self.allow_large_epsilon;
        spec.validate()?;
        Ok(Some(spec))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Dataset directory; `None` generates the synthetic graph in memory.
    pub data_path: Option<PathBuf>,
    pub target_relation: Option<String>,
    pub split: (f64, f64, f64),
    pub data_seed: u64,
    pub seed: u64,
    pub task: Task,
    pub label_type: Option<String>,
    pub out: Option<PathBuf>,
    pub encoder: EncoderConfig,
    pub features: FeatureNoise,
    pub vgae: VgaeConfig,
    pub privacy: PrivacySettings,
    pub sweep_epsilons: Vec<f64>,
    pub sweep_seeds: Vec<u64>,
    pub allocator_grid: Vec<f64>,
    pub allocator_seeds: Vec<u64>,
    pub allocator_refine: usize,
    pub attack_mode: AttackMode,
    pub reconstruction: Reconstruction,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data_path: None,
            target_relation: None,
            split: DEFAULT_SPLIT_RATIOS,
            data_seed: 0,
            seed: 0,
            task: Task::Lp,
            label_type: None,
            out: None,
            encoder: EncoderConfig::default(),
            features: FeatureNoise::default(),
            vgae: VgaeConfig::default(),
            privacy: PrivacySettings::default(),
            sweep_epsilons: vec![0.01, 0.1, 1.0, f64::INFINITY],
            sweep_seeds: (0..5).collect(),
            allocator_grid: vec![0.1, 0.25, 0.5, 0.75, 0.9],
            allocator_seeds: (0..3).collect(),
            allocator_refine: 4,
            attack_mode: AttackMode::Signature,
            reconstruction: Reconstruction::AboveMedian,
        }
    }
}

fn bad(key: &str, value: &str, what: &str) -> Error {
    Error::Config(format!("`{key} = {value}`: expected {what}"))
}

fn num<T: std::str::FromStr>(key: &str, value: &str, what: &str) -> Result<T> {
    value.parse().map_err(|_| bad(key, value, what))
}

pub fn parse_f64(key: &str, value: &str) -> Result<f64> {
    match value.to_ascii_lowercase().as_str() {
        "inf" | "infinity" | "∞" => Ok(f64::INFINITY),
        _ => num(key, value, "a number"),
    }
}

fn flag(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "on" | "true" | "yes" | "1" => Ok(true),
        "off" | "false" | "no" | "0" => Ok(false),
        _ => Err(bad(key, value, "on or off")),
    }
}

fn list<T>(key: &str, value: &str, item: impl Fn(&str, &str) -> Result<T>) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| item(key, s))
        .collect()
}

/// `N` alone means seeds `0..N`; a comma list is taken literally.
fn seeds(key: &str, value: &str) -> Result<Vec<u64>> {
    if !value.contains(',') {
        let n: u64 = num(key, value, "a seed count or a comma list")?;
        return Ok((0..n).collect());
    }
    list(key, value, |k, v| num(k, v, "an integer seed"))
}

fn fmt_f64(x: f64) -> String {
    if x.is_infinite() {
        "inf".into()
    } else {
        x.to_string()
    }
}

fn on_off(b: bool) -> &'static str {
    if b {
        "on"
    } else {
        "off"
    }
}

fn join<T>(xs: &[T], f: impl Fn(&T) -> String) -> String {
    xs.iter().map(f).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Applies one `section.key = value` setting. Relative paths resolve against `base`.
    pub fn set(&mut self, key: &str, value: &str, base: Option<&Path>) -> Result<()> {
        let v = value.trim();
        let path = |v: &str| -> PathBuf {
            let p = PathBuf::from(v);
            match base {
                Some(b) if p.is_relative() => b.join(p),
                _ => p,
            }
        };
        match key {
            "data.path" => self.data_path = Some(path(v)),
            "data.target_relation" => self.target_relation = Some(v.to_string()),
            "data.split" => {
                let r = list(key, v, parse_f64)?;
                if r.len() != 3 {
                    return Err(bad(key, v, "three comma-separated fractions"));
                }
                self.split = (r[0], r[1], r[2]);
            }
            "data.seed" => self.data_seed = num(key, v, "an integer")?,
            "data.label_type" => self.label_type = Some(v.to_string()),
            "run.seed" => self.seed = num(key, v, "an integer")?,
            "run.task" => {
                self.task = match v {
                    "lp" => Task::Lp,
                    "nc" => Task::Nc,
                    _ => return Err(bad(key, v, "lp or nc")),
                }
            }
            "run.out" => self.out = Some(path(v)),
            "encoder.hidden" => self.encoder.hidden = num(key, v, "an integer")?,
            "encoder.heads" => self.encoder.heads = num(key, v, "an integer")?,
            "encoder.layers" => self.encoder.layers = num(key, v, "an integer")?,
            "encoder.dropout" => self.encoder.dropout = parse_f64(key, v)?,
            "encoder.lr" => self.encoder.lr = parse_f64(key, v)?,
            "encoder.weight_decay" => self.encoder.weight_decay = parse_f64(key, v)?,
            "encoder.epochs" => self.encoder.epochs = num(key, v, "an integer")?,
            "encoder.pairs_per_epoch" => self.encoder.pairs_per_epoch = num(key, v, "an integer")?,
            "features.embedding_bound" => self.features.embedding_bound = parse_f64(key, v)?,
            "features.normalize" => self.features.normalize = flag(key, v)?,
            "features.reduce" => {
                self.features.reduce = match v {
                    "sum" => SensitivityReduce::Sum,
                    "max" => SensitivityReduce::Max,
                    _ => return Err(bad(key, v, "sum or max")),
                }
            }
            "vgae.hidden" => self.vgae.hidden = num(key, v, "an integer")?,
            "vgae.latent" => self.vgae.latent = num(key, v, "an integer")?,
            "vgae.self_loops" => self.vgae.self_loops = flag(key, v)?,
            "vgae.negatives" => self.vgae.negatives = num(key, v, "an integer")?,
            "vgae.batch_size" => self.vgae.batch_size = num(key, v, "an integer")?,
            "vgae.lr" => self.vgae.lr = parse_f64(key, v)?,
            "vgae.epochs" => self.vgae.epochs = num(key, v, "an integer")?,
            "vgae.kl_weight" => self.vgae.kl_weight = parse_f64(key, v)?,
            "vgae.loss_sign" => {
                self.vgae.loss_sign = match v {
                    "standard" => LossSign::Standard,
                    "flipped" => LossSign::Flipped,
                    _ => return Err(bad(key, v, "standard or flipped")),
                }
            }
            "vgae.clip_bound" => self.vgae.clip_bound = parse_f64(key, v)?,
            "vgae.noise_multiplier" => {
                self.vgae.noise_multiplier = if v == "auto" { None } else { Some(parse_f64(key, v)?) }
            }
            "privacy.enabled" => self.privacy.enabled = flag(key, v)?,
            "privacy.epsilon" => self.privacy.epsilon = parse_f64(key, v)?,
            "privacy.feature_fraction" => self.privacy.feature_fraction = parse_f64(key, v)?,
            "privacy.epsilon_f" => self.privacy.epsilon_f = Some(parse_f64(key, v)?),
            "privacy.epsilon_s" => self.privacy.epsilon_s = Some(parse_f64(key, v)?),
            "privacy.delta" => self.privacy.delta = parse_f64(key, v)?,
            "privacy.lambda" => self.privacy.lambda = parse_f64(key, v)?,
            "privacy.c2" => self.privacy.c2 = parse_f64(key, v)?,
            "privacy.allow_large_epsilon" => self.privacy.allow_large_epsilon = flag(key, v)?,
            "privacy.feature_noise" => self.privacy.feature_noise = flag(key, v)?,
            "privacy.topology_noise" => self.privacy.topology_noise = flag(key, v)?,
            "sweep.epsilons" => self.sweep_epsilons = list(key, v, parse_f64)?,
            "sweep.seeds" => self.sweep_seeds = seeds(key, v)?,
            "allocator.grid" => self.allocator_grid = list(key, v, parse_f64)?,
            "allocator.seeds" => self.allocator_seeds = seeds(key, v)?,
            "allocator.refine" => self.allocator_refine = num(key, v, "an integer")?,
            "attack.mode" => {
                self.attack_mode = match v {
                    "signature" => AttackMode::Signature,
                    "degree" => AttackMode::Degree,
                    _ => return Err(bad(key, v, "signature or degree")),
                }
            }
            "attack.reconstruction" => {
                self.reconstruction = match v {
                    "above_median" => Reconstruction::AboveMedian,
                    "top_degree" => Reconstruction::TopDegree,
                    _ => return Err(bad(key, v, "above_median or top_degree")),
                }
            }
            _ => return Err(Error::Config(format!("unknown configuration key `{key}`"))),
        }
        Ok(())
    }

    pub fn parse(text: &str, base: Option<&Path>) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `section.key = value`, got `{raw}`", n + 1)))?;
            cfg.set(k.trim(), v, base)
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path.parent())
    }

    /// Every setting as `section.key = value` lines; parsing the echo gives back this config.
    pub fn echo(&self) -> String {
        let e = &self.encoder;
        let v = &self.vgae;
        let p = &self.privacy;
        let mut lines: Vec<(String, String)> = Vec::new();
        let mut put = |k: &str, v: String| lines.push((k.to_string(), v));
        if let Some(d) = &self.data_path {
            put("data.path", d.display().to_string());
        }
        if let Some(t) = &self.target_relation {
            put("data.target_relation", t.clone());
        }
        put("data.split", format!("{},{},{}", self.split.0, self.split.1, self.split.2));
        put("data.seed", self.data_seed.to_string());
        if let Some(t) = &self.label_type {
            put("data.label_type", t.clone());
        }
        put("run.seed", self.seed.to_string());
        put("run.task", match self.task { Task::Lp => "lp", Task::Nc => "nc" }.into());
        if let Some(o) = &self.out {
            put("run.out", o.display().to_string());
        }
        put("encoder.hidden", e.hidden.to_string());
        put("encoder.heads", e.heads.to_string());
        put("encoder.layers", e.layers.to_string());
        put("encoder.dropout", e.dropout.to_string());
        put("encoder.lr", e.lr.to_string());
        put("encoder.weight_decay", e.weight_decay.to_string());
        put("encoder.epochs", e.epochs.to_string());
        put("encoder.pairs_per_epoch", e.pairs_per_epoch.to_string());
        put("features.embedding_bound", self.features.embedding_bound.to_string());
        put("features.normalize", on_off(self.features.normalize).into());
        put("features.reduce", match self.features.reduce { SensitivityReduce::Sum => "sum", SensitivityReduce::Max => "max" }.into());
        put("vgae.hidden", v.hidden.to_string());
        put("vgae.latent", v.latent.to_string());
        put("vgae.self_loops", on_off(v.self_loops).into());
        put("vgae.negatives", v.negatives.to_string());
        put("vgae.batch_size", v.batch_size.to_string());
        put("vgae.lr", v.lr.to_string());
        put("vgae.epochs", v.epochs.to_string());
        put("vgae.kl_weight", v.kl_weight.to_string());
        put("vgae.loss_sign", match v.loss_sign { LossSign::Standard => "standard", LossSign::Flipped => "flipped" }.into());
        put("vgae.clip_bound", fmt_f64(v.clip_bound));
        put("vgae.noise_multiplier", v.noise_multiplier.map_or("auto".into(), fmt_f64));
        put("privacy.enabled", on_off(p.enabled).into());
        put("privacy.epsilon", fmt_f64(p.epsilon));
        put("privacy.feature_fraction", p.feature_fraction.to_string());
        if let Some(f) = p.epsilon_f {
            put("privacy.epsilon_f", fmt_f64(f));
        }
        if let Some(s) = p.epsilon_s {
            put("privacy.epsilon_s", fmt_f64(s));
        }
        put("privacy.delta", p.delta.to_string());
        put("privacy.lambda", p.lambda.to_string());
        put("privacy.c2", p.c2.to_string());
        put("privacy.allow_large_epsilon", on_off(p.allow_large_epsilon).into());
        put("privacy.feature_noise", on_off(p.feature_noise).into());
        put("privacy.topology_noise", on_off(p.topology_noise).into());
        put("sweep.epsilons", join(&self.sweep_epsilons, |x| fmt_f64(*x)));
        put("sweep.seeds", join(&self.sweep_seeds, |x| x.to_string()) + ",");
        put("allocator.grid", join(&self.allocator_grid, |x| fmt_f64(*x)));
        put("allocator.seeds", join(&self.allocator_seeds, |x| x.to_string()) + ",");
        put("allocator.refine", self.allocator_refine.to_string());
        put("attack.mode", match self.attack_mode { AttackMode::Signature => "signature", AttackMode::Degree => "degree" }.into());
        put(
            "attack.reconstruction",
            match self.reconstruction {
                Reconstruction::AboveMedian => "above_median",
                Reconstruction::TopDegree => "top_degree",
            }
            .into(),
        );
        lines.into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn echo_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.set("privacy.epsilon", "0.1", None).unwrap();
        cfg.set("vgae.noise_multiplier", "3.5", None).unwrap();
        cfg.set("sweep.seeds", "3", None).unwrap();
        cfg.set("data.path", "/tmp/x", None).unwrap();
        let back = RunConfig::parse(&cfg.echo(), None).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(RunConfig::parse(&RunConfig::default().echo(), None).unwrap(), RunConfig::default());
    }

    #[test]
    fn errors_name_the_line() {
        let err = RunConfig::parse("run.seed = 1\nvgae.lr = fast\n", None).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        assert!(RunConfig::parse("nonsense", None).is_err());
        assert!(RunConfig::parse("foo.bar = 1", None).is_err());
    }

    #[test]
    fn privacy_split_is_exact() {
        let mut p = PrivacySettings { epsilon: 0.1, feature_fraction: 0.3, ..PrivacySettings::default() };
        let s = p.spec().unwrap().unwrap();
        assert_eq!(s.epsilon_f + s.epsilon_s, 0.1);
        p.epsilon_f = Some(0.05);
        assert!(p.spec().is_err());
        p.epsilon_s = Some(0.06);
        assert!(matches!(p.spec(), Err(Error::Privacy(_))));
        p.epsilon = f64::INFINITY;
        assert_eq!(p.spec().unwrap(), None);
    }
}
