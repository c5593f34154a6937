//! Experiment configuration, presets and override merging.
//!
//! A run's configuration is built in three layers: a named preset, an optional
//! TOML file merged on top of it key by key, and command-line flags. The
//! result is validated with unknown keys rejected at every level.

use std::path::{Path, PathBuf};

use degp_core::bandit::{AgentConfig, AgentKind, WheelConfig};
use degp_core::priorkern::PriorConfig;
use degp_core::trainer::{LikelihoodConfig, MeasurementPolicy, OptimizerConfig, Schedule, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Regress1d,
    Uci,
    ClassifySynth,
    Bandit,
    KernelCheck,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Regress1d => "regress1d",
            ExperimentKind::Uci => "uci",
            ExperimentKind::ClassifySynth => "classify-synth",
            ExperimentKind::Bandit => "bandit",
            ExperimentKind::KernelCheck => "kernel-check",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Degp,
    De,
    Rde,
    Rms,
    Nngp,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Degp => "degp",
            Method::De => "de",
            Method::Rde => "rde",
            Method::Rms => "rms",
            Method::Nngp => "nngp",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Method::Degp, Method::De, Method::Rde, Method::Rms, Method::Nngp].into_iter().find(|m| m.name() == s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    pub members: usize,
    /// Number of shared hidden layers; 0 trains independent members.
    pub trunk_depth: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { hidden: vec![50], members: 10, trunk_depth: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineConfig {
    /// L2 coefficient for rDE.
    pub weight_decay: f64,
    /// Pull toward the anchors for RMS; defaults to `weight_decay`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub anchor_gamma: Option<f64>,
    pub anchor_gain: f64,
    pub anchor_bias_var: f64,
}

impl BaselineConfig {
    pub fn gamma(&self) -> f64 {
        self.anchor_gamma.unwrap_or(self.weight_decay)
    }
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self { weight_decay: 0.1, anchor_gamma: None, anchor_gain: 2.0, anchor_bias_var: 0.01 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Function samples for the DE-GP predictive.
    pub predictive_samples: usize,
    /// Thresholds in the error-vs-uncertainty curves.
    pub curve_points: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { predictive_samples: 1000, curve_points: 21 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Regress1dConfig {
    pub points: usize,
    pub low: f64,
    pub high: f64,
    pub noise_std: f64,
    /// Added to the target of the rightmost point.
    pub perturb: f64,
    pub grid_points: usize,
    pub grid_low: f64,
    pub grid_high: f64,
}

impl Default for Regress1dConfig {
    fn default() -> Self {
        Self {
            points: 8,
            low: -1.5,
            high: 1.5,
            noise_std: 0.1f64.sqrt(),
            perturb: -1.2,
            grid_points: 201,
            grid_low: -2.0,
            grid_high: 2.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UciDataset {
    pub name: String,
    /// CSV with a header row; relative paths resolve against the data root.
    pub path: String,
    /// Target column index; defaults to the last column.
    #[serde(default)]
    pub target_column: Option<usize>,
    /// Observation noise variance in normalized target units.
    #[serde(default = "default_uci_noise")]
    pub noise_var: f64,
}

fn default_uci_noise() -> f64 {
    0.05
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UciConfig {
    pub datasets: Vec<UciDataset>,
    pub folds: usize,
    /// Extra measurement points per step, drawn from the training fold's box.
    pub measurement_points: usize,
    /// Candidate KL weights; with more than one, each fold holds out a
    /// validation fifth of its training part to choose among them.
    pub alpha_grid: Vec<f64>,
}

impl Default for UciConfig {
    fn default() -> Self {
        Self {
            datasets: vec![
                UciDataset { name: "wine-red".into(), path: "winequality-red.csv".into(), target_column: None, noise_var: 0.5 },
                UciDataset { name: "diabetes".into(), path: "diabetes.csv".into(), target_column: None, noise_var: 0.5 },
            ],
            folds: 5,
            measurement_points: 32,
            alpha_grid: vec![1.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifyConfig {
    pub classes: usize,
    pub train_points: usize,
    pub test_points: usize,
    pub ood_points: usize,
    /// Class centers sit on a circle of this radius.
    pub radius: f64,
    pub cluster_std: f64,
    /// OOD points are uniform on the annulus `[ood_inner, ood_outer]`.
    pub ood_inner: f64,
    pub ood_outer: f64,
}

impl Default for ClassifyConfig {
    fn default() -> Self {
        Self {
            classes: 4,
            train_points: 400,
            test_points: 400,
            ood_points: 200,
            radius: 3.0,
            cluster_std: 1.0,
            ood_inner: 7.0,
            ood_outer: 9.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BanditEnvKind {
    Wheel,
    Mushroom,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BanditConfig {
    pub env: BanditEnvKind,
    pub rounds: usize,
    pub wheel: WheelConfig,
    /// Mushroom CSV; relative paths resolve against the data root.
    pub mushroom_path: String,
    pub agent: AgentConfig,
    pub agents: Vec<AgentKind>,
}

impl Default for BanditConfig {
    fn default() -> Self {
        Self {
            env: BanditEnvKind::Wheel,
            rounds: 2000,
            wheel: WheelConfig::default(),
            mushroom_path: "mushroom.csv".into(),
            agent: AgentConfig::default(),
            agents: vec![AgentKind::Degp, AgentKind::De, AgentKind::Uniform],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelCheckConfig {
    pub kl_instances: usize,
    pub max_points: usize,
    pub max_outputs: usize,
    pub max_members: usize,
    pub kl_tolerance: f64,
    pub logdet_instances: usize,
    pub logdet_tolerance: f64,
    pub timing_dim: usize,
    pub timing_members: usize,
    pub min_speedup: f64,
    pub mc_samples: usize,
    pub mc_pairs: usize,
    pub mc_tolerance: f64,
}

impl Default for KernelCheckConfig {
    fn default() -> Self {
        Self {
            kl_instances: 200,
            max_points: 12,
            max_outputs: 4,
            max_members: 8,
            kl_tolerance: 1e-8,
            logdet_instances: 100,
            logdet_tolerance: 1e-9,
            timing_dim: 2560,
            timing_members: 10,
            min_speedup: 10.0,
            mc_samples: 2000,
            mc_pairs: 50,
            mc_tolerance: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub preset: String,
    pub seeds: Vec<u64>,
    pub methods: Vec<Method>,
    /// Output directory name under the output root.
    pub output_dir: String,
    /// Directory that relative dataset paths resolve against.
    pub data_root: String,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub prior: PriorConfig,
    pub baselines: BaselineConfig,
    pub eval: EvalConfig,
    pub regress1d: Regress1dConfig,
    pub uci: UciConfig,
    pub classify: ClassifyConfig,
    pub bandit: BanditConfig,
    pub kernel_check: KernelCheckConfig,
}

/// Directory holding the vendored datasets.
pub fn default_data_root() -> String {
    concat!(env!("CARGO_MANIFEST_DIR"), "/data").to_string()
}

fn base(kind: ExperimentKind, preset: &str) -> ExperimentConfig {
    let mut train = TrainConfig::new(LikelihoodConfig::Gaussian { noise_var: 0.1 }, OptimizerConfig::adam(0.01), 100);
    train.measurement = MeasurementPolicy::default();
    ExperimentConfig {
        experiment: kind,
        preset: preset.to_string(),
        seeds: vec![0],
        methods: vec![Method::Degp, Method::De],
        output_dir: preset.to_string(),
        data_root: default_data_root(),
        model: ModelConfig::default(),
        train,
        prior: PriorConfig::default(),
        baselines: BaselineConfig::default(),
        eval: EvalConfig::default(),
        regress1d: Regress1dConfig::default(),
        uci: UciConfig::default(),
        classify: ClassifyConfig::default(),
        bandit: BanditConfig::default(),
        kernel_check: KernelCheckConfig::default(),
    }
}

fn regress1d(preset: &str, hidden: &[usize]) -> ExperimentConfig {
    let mut c = base(ExperimentKind::Regress1d, preset);
    c.methods = vec![Method::Degp, Method::De, Method::Rde, Method::Rms, Method::Nngp];
    c.model = ModelConfig { hidden: hidden.to_vec(), members: 50, trunk_depth: 0 };
    let mut t = TrainConfig::new(LikelihoodConfig::Gaussian { noise_var: 0.1 }, OptimizerConfig::sgd(1e-3, 0.9), 1000);
    t.schedule = Schedule::Cosine;
    t.lambda_fraction = 1e-4;
    t.measurement = MeasurementPolicy::uniform_box(8, vec![-2.0], vec![2.0]);
    c.train = t;
    c
}

/// Names accepted by `--preset`.
pub const PRESETS: &[(&str, &str)] = &[
    ("fig1-linear", "1-D regression, members without hidden layers"),
    ("fig1", "1-D regression, one hidden layer of 50 units"),
    ("fig1-deep", "1-D regression, two hidden layers of 50 units"),
    ("fig2", "1-D regression, one hidden layer of 64 units, 3 seeds"),
    ("uci", "UCI recipe: Adam 0.01 decayed 0.99 every 5 epochs, batch 256, 1000 epochs"),
    ("uci-desk", "UCI recipe shortened to 60 epochs"),
    ("classify-synth", "Gaussian-blob classification with learned temperature and OOD ring"),
    ("bandit", "wheel bandit with 2x256 networks and batch 512"),
    ("bandit-desk", "wheel bandit with 1x50 networks, 5 seeds"),
    ("kernel-check", "numerical oracle suite"),
];

pub fn preset(name: &str) -> CliResult<ExperimentConfig> {
    let c = match name {
        "fig1-linear" => regress1d(name, &[]),
        "fig1" => regress1d(name, &[50]),
        "fig1-deep" => regress1d(name, &[50, 50]),
        "fig2" => {
            let mut c = regress1d(name, &[64]);
            c.seeds = vec![0, 1, 2];
            c
        }
        "uci" | "uci-desk" => {
            let mut c = base(ExperimentKind::Uci, name);
            c.seeds = vec![0];
            c.methods = vec![Method::Degp, Method::De];
            c.model = ModelConfig { hidden: vec![50], members: 10, trunk_depth: 0 };
            let epochs = if name == "uci" { 1000 } else { 60 };
            let mut t = TrainConfig::new(LikelihoodConfig::Gaussian { noise_var: 0.05 }, OptimizerConfig::adam(0.01), epochs);
            t.schedule = Schedule::Step { every_epochs: 5, gamma: 0.99 };
            t.batch_size = 256;
            t.samples = 64;
            c.train = t;
            c
        }
        "classify-synth" => {
            let mut c = base(ExperimentKind::ClassifySynth, name);
            c.methods = vec![Method::Degp, Method::De, Method::Rde, Method::Rms];
            c.model = ModelConfig { hidden: vec![50], members: 10, trunk_depth: 0 };
            let lik = LikelihoodConfig::Categorical { temperature: 1.0, learn_temperature: true };
            let mut t = TrainConfig::new(lik, OptimizerConfig::sgd(0.1, 0.9), 24);
            t.schedule = Schedule::Cosine;
            t.batch_size = 64;
            t.samples = 64;
            t.lambda_fraction = 0.05;
            c.train = t;
            c
        }
        "bandit" | "bandit-desk" => {
            let mut c = base(ExperimentKind::Bandit, name);
            c.methods = vec![];
            if name == "bandit" {
                c.bandit.agent.hidden = vec![256, 256];
                c.bandit.agent.batch_size = 512;
            } else {
                c.seeds = vec![100, 101, 102, 103, 104];
            }
            c
        }
        "kernel-check" => {
            let mut c = base(ExperimentKind::KernelCheck, name);
            c.methods = vec![];
            c
        }
        _ => {
            let known: Vec<&str> = PRESETS.iter().map(|p| p.0).collect();
            return Err(CliError::Config(format!("unknown preset {name:?}; known presets: {}", known.join(", "))));
        }
    };
    Ok(c)
}

/// Default preset for each subcommand.
pub fn default_preset(kind: ExperimentKind) -> &'static str {
    match kind {
        ExperimentKind::Regress1d => "fig1",
        ExperimentKind::Uci => "uci-desk",
        ExperimentKind::ClassifySynth => "classify-synth",
        ExperimentKind::Bandit => "bandit-desk",
        ExperimentKind::KernelCheck => "kernel-check",
    }
}

fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot @ toml::Value::Table(_)) if v.is_table() && !is_tagged(&v) => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

/// Tables carrying a `kind` tag select an enum variant and replace the
/// preset's table wholesale.
fn is_tagged(v: &toml::Value) -> bool {
    v.as_table().is_some_and(|t| t.contains_key("kind"))
}

/// Command-line overrides applied after the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub method: Option<String>,
}

/// Preset, then file, then flags.
pub fn resolve(kind: ExperimentKind, preset_name: Option<&str>, file: Option<&Path>, ov: &Overrides) -> CliResult<ExperimentConfig> {
    let name = preset_name.unwrap_or(default_preset(kind));
    let p = preset(name)?;
    if p.experiment != kind {
        return Err(CliError::Config(format!("preset {name:?} is for {}, not {}", p.experiment.name(), kind.name())));
    }
    let mut value = toml::Value::try_from(&p).map_err(|e| CliError::Config(e.to_string()))?;
    if let Some(path) = file {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(path.to_path_buf(), e))?;
        let over: toml::Value = toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        merge(&mut value, over);
    }
    let mut cfg: ExperimentConfig = value.try_into().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
    if cfg.experiment != kind {
        return Err(CliError::Config(format!("config is for {}, not {}", cfg.experiment.name(), kind.name())));
    }
    apply_overrides(&mut cfg, ov)?;
    validate(&cfg)?;
    Ok(cfg)
}

pub fn apply_overrides(cfg: &mut ExperimentConfig, ov: &Overrides) -> CliResult<()> {
    if let Some(s) = ov.seed {
        cfg.seeds = vec![s];
    }
    if let Some(m) = &ov.method {
        if cfg.experiment == ExperimentKind::Bandit {
            let keep: Vec<AgentKind> = cfg.bandit.agents.iter().filter(|a| a.name() == m).cloned().collect();
            if keep.is_empty() {
                return Err(CliError::Config(format!("no bandit agent named {m:?} in this config")));
            }
            cfg.bandit.agents = keep;
        } else {
            let method = Method::parse(m).ok_or_else(|| CliError::Config(format!("unknown method {m:?}")))?;
            cfg.methods = vec![method];
        }
    }
    Ok(())
}

pub fn validate(cfg: &ExperimentConfig) -> CliResult<()> {
    let bad = |msg: String| Err(CliError::Config(msg));
    if cfg.seeds.is_empty() {
        return bad("at least one seed is required".into());
    }
    cfg.train.validate().map_err(|e| CliError::Config(e.to_string()))?;
    cfg.prior.validate().map_err(|e| CliError::Config(e.to_string()))?;
    if cfg.model.members == 0 {
        return bad("model.members must be positive".into());
    }
    if cfg.model.trunk_depth > cfg.model.hidden.len() {
        return bad("model.trunk_depth exceeds the number of hidden layers".into());
    }
    match cfg.experiment {
        ExperimentKind::Regress1d => {
            let r = &cfg.regress1d;
            if r.points < 1 || r.grid_points < 2 || !(r.low < r.high) || !(r.grid_low < r.grid_high) {
                return bad("regress1d needs points >= 1, grid_points >= 2 and ordered ranges".into());
            }
            if cfg.methods.is_empty() {
                return bad("no methods selected".into());
            }
        }
        ExperimentKind::Uci => {
            if cfg.uci.folds < 2 || cfg.uci.datasets.is_empty() || cfg.uci.alpha_grid.is_empty() {
                return bad("uci needs at least 2 folds, one dataset and one alpha".into());
            }
            if cfg.methods.contains(&Method::Nngp) {
                return bad("nngp is only available for regress1d".into());
            }
        }
        ExperimentKind::ClassifySynth => {
            let c = &cfg.classify;
            if c.classes < 2 || c.train_points == 0 || c.test_points == 0 {
                return bad("classify needs at least 2 classes and nonempty splits".into());
            }
            if cfg.methods.contains(&Method::Nngp) {
                return bad("nngp is only available for regress1d".into());
            }
        }
        ExperimentKind::Bandit => {
            cfg.bandit.agent.validate().map_err(|e| CliError::Config(e.to_string()))?;
            if cfg.bandit.agents.is_empty() || cfg.bandit.rounds == 0 {
                return bad("bandit needs agents and a positive round count".into());
            }
        }
        ExperimentKind::KernelCheck => {}
    }
    Ok(())
}

/// Resolves `path` against `root` unless it is absolute.
pub fn data_path(root: &str, path: &str) -> PathBuf {
    let p = Path::new(path);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        Path::new(root).join(p)
    }
}

pub fn to_toml(cfg: &ExperimentConfig) -> CliResult<String> {
    toml::to_string(cfg).map_err(|e| CliError::Config(e.to_string()))
}
