//! Resolved training configuration and its flat `key = value` file form.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use popcast::demography::{Domain, InitialProfile, PolicyScenario, Problem, Quadrature};
use popcast::networks::{default_architecture, Architecture, ModelKind};
use popcast::training::{LossWeights, SamplerConfig, TrainConfig};

use crate::CliError;

/// Every knob of a training run. Built from defaults, then a config file,
/// then command-line flags, each layer applied through [`RunConfig::set`].
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelKind,
    pub scenario: Option<PolicyScenario>,
    pub seed: u64,
    pub epochs: usize,
    pub lr: f64,
    pub n_interior: usize,
    pub m_initial: usize,
    pub k_boundary: usize,
    pub quadrature_nodes: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub epsilon0: f64,
    pub threshold: Option<f64>,
    pub dropout: f64,
    pub widths: Vec<usize>,
    pub lstm_layers: usize,
    pub lstm_hidden: usize,
    pub physical_aging: bool,
    pub profile: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

pub const KEYS: [&str; 21] = [
    "model",
    "scenario",
    "seed",
    "epochs",
    "lr",
    "n_interior",
    "m_initial",
    "k_boundary",
    "quadrature_nodes",
    "lambda1",
    "lambda2",
    "lambda3",
    "epsilon0",
    "threshold",
    "dropout",
    "widths",
    "lstm_layers",
    "lstm_hidden",
    "physical_aging",
    "profile",
    "out",
];

impl Default for RunConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        let Architecture::Mlp { widths } = default_architecture(ModelKind::Mlp) else {
            unreachable!()
        };
        let Architecture::Lstm { layers, hidden } = default_architecture(ModelKind::Lstm) else {
            unreachable!()
        };
        Self {
            model: ModelKind::Mlp,
            scenario: None,
            seed: train.sampler.seed,
            epochs: train.epochs,
            lr: train.lr,
            n_interior: train.sampler.n_interior,
            m_initial: train.sampler.m_initial,
            k_boundary: train.sampler.k_boundary,
            quadrature_nodes: Quadrature::default().len(),
            lambda1: train.weights.lambda1,
            lambda2: train.weights.lambda2,
            lambda3: train.weights.lambda3,
            epsilon0: train.weights.epsilon0,
            threshold: train.threshold,
            dropout: train.dropout,
            widths,
            lstm_layers: layers,
            lstm_hidden: hidden,
            physical_aging: false,
            profile: None,
            out: None,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value
        .parse()
        .map_err(|_| CliError::Usage(format!("invalid value '{value}' for {key}")))
}

fn model_name(kind: ModelKind) -> &'static str {
    match kind {
        ModelKind::Mlp => "pinn",
        ModelKind::Lstm => "lstm-pinn",
    }
}

impl RunConfig {
    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let value = value.trim();
        match key {
            "model" => self.model = value.parse().map_err(|e: popcast::Error| CliError::Usage(e.to_string()))?,
            "scenario" => {
                self.scenario = Some(value.parse().map_err(|e: popcast::Error| CliError::Usage(e.to_string()))?)
            }
            "seed" => self.seed = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "n_interior" => self.n_interior = parse(key, value)?,
            "m_initial" => self.m_initial = parse(key, value)?,
            "k_boundary" => self.k_boundary = parse(key, value)?,
            "quadrature_nodes" => self.quadrature_nodes = parse(key, value)?,
            "lambda1" => self.lambda1 = parse(key, value)?,
            "lambda2" => self.lambda2 = parse(key, value)?,
            "lambda3" => self.lambda3 = parse(key, value)?,
            "epsilon0" => self.epsilon0 = parse(key, value)?,
            "threshold" => {
                self.threshold = if value == "none" { None } else { Some(parse(key, value)?) }
            }
            "dropout" => self.dropout = parse(key, value)?,
            "widths" => {
                self.widths = value
                    .split(',')
                    .map(|w| parse(key, w.trim()))
                    .collect::<Result<_, _>>()?
            }
            "lstm_layers" => self.lstm_layers = parse(key, value)?,
            "lstm_hidden" => self.lstm_hidden = parse(key, value)?,
            "physical_aging" => self.physical_aging = parse(key, value)?,
            "profile" => self.profile = if value == "default" { None } else { Some(value.into()) },
            "out" => self.out = Some(value.into()),
            other => return Err(CliError::Usage(format!("unknown configuration key '{other}'"))),
        }
        Ok(())
    }

    /// Applies a config file: `key = value` lines, `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<(), CliError> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("config line {}: expected key = value", n + 1)))?;
            self.set(key.trim(), value)
                .map_err(|e| CliError::Usage(format!("config line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text = std::fs::read_to_string(path).map_err(popcast::Error::Io)?;
        self.apply_text(&text)
    }

    /// The manifest form: every key, in a fixed order.
    pub fn to_text(&self) -> String {
        let mut s = String::from("# popcast run manifest\n");
        for key in KEYS {
            let value = match key {
                "model" => model_name(self.model).to_string(),
                "scenario" => self.scenario.map(|s| s.name().to_string()).unwrap_or_default(),
                "seed" => self.seed.to_string(),
                "epochs" => self.epochs.to_string(),
                "lr" => self.lr.to_string(),
                "n_interior" => self.n_interior.to_string(),
                "m_initial" => self.m_initial.to_string(),
                "k_boundary" => self.k_boundary.to_string(),
                "quadrature_nodes" => self.quadrature_nodes.to_string(),
                "lambda1" => self.lambda1.to_string(),
                "lambda2" => self.lambda2.to_string(),
                "lambda3" => self.lambda3.to_string(),
                "epsilon0" => self.epsilon0.to_string(),
                "threshold" => self.threshold.map_or("none".into(), |t| t.to_string()),
                "dropout" => self.dropout.to_string(),
                "widths" => self.widths.iter().map(|w| w.to_string()).collect::<Vec<_>>().join(","),
                "lstm_layers" => self.lstm_layers.to_string(),
                "lstm_hidden" => self.lstm_hidden.to_string(),
                "physical_aging" => self.physical_aging.to_string(),
                "profile" => self
                    .profile
                    .as_ref()
                    .map_or("default".into(), |p| p.display().to_string()),
                "out" => self.out.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
                _ => unreachable!(),
            };
            let _ = writeln!(s, "{key} = {value}");
        }
        s
    }

    pub fn scenario(&self) -> Result<PolicyScenario, CliError> {
        self.scenario
            .ok_or_else(|| CliError::Usage("missing scenario (use --scenario or a config file)".into()))
    }

    pub fn architecture(&self) -> Architecture {
        match self.model {
            ModelKind::Mlp => Architecture::Mlp {
                widths: self.widths.clone(),
            },
            ModelKind::Lstm => Architecture::Lstm {
                layers: self.lstm_layers,
                hidden: self.lstm_hidden,
            },
        }
    }

    pub fn train_config(&self, threads: usize) -> TrainConfig {
        TrainConfig {
            sampler: SamplerConfig {
                n_interior: self.n_interior,
                m_initial: self.m_initial,
                k_boundary: self.k_boundary,
                seed: self.seed,
            },
            weights: LossWeights {
                lambda1: self.lambda1,
                lambda2: self.lambda2,
                lambda3: self.lambda3,
                epsilon0: self.epsilon0,
            },
            lr: self.lr,
            epochs: self.epochs,
            threshold: self.threshold,
            dropout: self.dropout,
            threads,
        }
    }

    pub fn problem(&self) -> Result<Problem, CliError> {
        let mut p = Problem::new(self.scenario()?);
        if self.physical_aging {
            p.domain = Domain::default().with_physical_aging();
        }
        if let Some(path) = &self.profile {
            p.profile = InitialProfile::from_csv(path)?;
        }
        p.quadrature = Quadrature::fertile(self.quadrature_nodes).map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(p)
    }
}
