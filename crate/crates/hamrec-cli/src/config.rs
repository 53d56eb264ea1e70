//! Run configuration: defaults, `key = value` config file, command-line
//! overrides (flags win), full validation before any work.

use std::fmt::Write as _;
use std::path::Path;

use hamrec::graph::{SplitPolicy, UserSampling};
use hamrec::model::{ModelConfig, Readout};
use hamrec::trainer::TrainConfig;

use crate::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub split: SplitPolicy,
    pub seed: u64,
    pub workers: Option<usize>,
    /// Band count for the retrieval index; none = scan only.
    pub bands: Option<u32>,
    /// Probe radius when banding is enabled.
    pub radius: u32,
    /// k values evaluated by `eval`.
    pub ks: Vec<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            split: SplitPolicy::LeaveLastOne,
            seed: 42,
            workers: None,
            bands: None,
            radius: 0,
            ks: vec![10, 20],
        }
    }
}

impl RunConfig {
    /// Applies a config file; unknown keys are rejected.
    pub fn apply_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::Validation(format!("cannot read config {}: {e}", path.display()))
        })?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::Validation(format!(
                    "{}:{}: expected key = value",
                    path.display(),
                    lineno + 1
                ))
            })?;
            self.set(key.trim(), value.trim()).map_err(|e| {
                CliError::Validation(format!("{}:{}: {e}", path.display(), lineno + 1))
            })?;
        }
        Ok(())
    }

    /// Sets one key from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, String>
        where
            T::Err: std::fmt::Display,
        {
            value
                .parse::<T>()
                .map_err(|e| format!("bad value for {key}: {e}"))
        }

        match key {
            "bits" => self.model.bits = parse(key, value)?,
            "layers" => self.model.layers = parse(key, value)?,
            "self_weight" => self.model.self_weight = parse(key, value)?,
            "normalize_neighbors" => self.model.normalize_neighbors = parse(key, value)?,
            "readout" => self.model.readout = parse_readout(value)?,
            "beta0" => self.model.beta0 = parse(key, value)?,
            "beta_growth" => self.model.beta_growth = parse(key, value)?,
            "beta_period" => self.model.beta_period = parse(key, value)?,
            "beta_max" => self.model.beta_max = parse(key, value)?,
            "epochs" => self.train.epochs = parse(key, value)?,
            "triples_per_epoch" => {
                self.train.triples_per_epoch = if value == "auto" {
                    None
                } else {
                    Some(parse(key, value)?)
                }
            }
            "batch_size" => self.train.batch_size = parse(key, value)?,
            "learning_rate" => self.train.learning_rate = parse(key, value)?,
            "lambda" => self.train.lambda = parse(key, value)?,
            "eval_every" => self.train.eval_every = parse(key, value)?,
            "patience" => self.train.patience = parse(key, value)?,
            "user_sampling" => self.train.user_sampling = parse_sampling(value)?,
            "split" => self.split = parse_split(value)?,
            "seed" => self.seed = parse(key, value)?,
            "workers" => self.workers = Some(parse(key, value)?),
            "bands" => {
                self.bands = if value == "none" {
                    None
                } else {
                    Some(parse(key, value)?)
                }
            }
            "radius" => self.radius = parse(key, value)?,
            "ks" => {
                self.ks = value
                    .split(',')
                    .map(|v| parse::<usize>("ks", v.trim()))
                    .collect::<Result<_, _>>()?
            }
            other => return Err(format!("unknown config key {other:?}")),
        }
        Ok(())
    }

    /// Seed shared by every component stream.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.train.seed = seed;
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.model
            .validate()
            .map_err(|e| CliError::Validation(e.to_string()))?;
        self.train
            .validate()
            .map_err(|e| CliError::Validation(e.to_string()))?;
        if let SplitPolicy::Ratio(p) = self.split {
            if !(0.0..1.0).contains(&p) {
                return Err(CliError::Validation(format!(
                    "split ratio must be in [0, 1), got {p}"
                )));
            }
        }
        if let SplitPolicy::LeaveRandomK(k) = self.split {
            if k == 0 {
                return Err(CliError::Validation(
                    "leave-random-k needs k >= 1".to_owned(),
                ));
            }
        }
        if self.ks.is_empty() || self.ks.contains(&0) {
            return Err(CliError::Validation(
                "ks must be a non-empty list of positive values".to_owned(),
            ));
        }
        if let Some(0) = self.workers {
            return Err(CliError::Validation("workers must be at least 1".to_owned()));
        }
        Ok(())
    }

    /// Full key = value rendering in stable order.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "bands = {}", opt(self.bands));
        let _ = writeln!(s, "batch_size = {}", self.train.batch_size);
        let _ = writeln!(s, "beta0 = {}", self.model.beta0);
        let _ = writeln!(s, "beta_growth = {}", self.model.beta_growth);
        let _ = writeln!(s, "beta_max = {}", self.model.beta_max);
        let _ = writeln!(s, "beta_period = {}", self.model.beta_period);
        let _ = writeln!(s, "bits = {}", self.model.bits);
        let _ = writeln!(s, "epochs = {}", self.train.epochs);
        let _ = writeln!(s, "eval_every = {}", self.train.eval_every);
        let _ = writeln!(
            s,
            "ks = {}",
            self.ks
                .iter()
                .map(|k| k.to_string())
                .collect::<Vec<_>>()
                .join(",")
        );
        let _ = writeln!(s, "lambda = {}", self.train.lambda);
        let _ = writeln!(s, "layers = {}", self.model.layers);
        let _ = writeln!(s, "learning_rate = {}", self.train.learning_rate);
        let _ = writeln!(
            s,
            "normalize_neighbors = {}",
            self.model.normalize_neighbors
        );
        let _ = writeln!(s, "patience = {}", self.train.patience);
        let _ = writeln!(s, "radius = {}", self.radius);
        let _ = writeln!(
            s,
            "readout = {}",
            match self.model.readout {
                Readout::LastLayer => "last-layer",
                Readout::MeanThenSign => "mean-then-sign",
            }
        );
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "self_weight = {}", self.model.self_weight);
        let _ = writeln!(s, "split = {}", render_split(self.split));
        let _ = writeln!(
            s,
            "triples_per_epoch = {}",
            self.train
                .triples_per_epoch
                .map(|v| v.to_string())
                .unwrap_or_else(|| "auto".to_owned())
        );
        let _ = writeln!(
            s,
            "user_sampling = {}",
            match self.train.user_sampling {
                UserSampling::EdgeProportional => "edge-proportional",
                UserSampling::UniformUser => "uniform-user",
            }
        );
        let _ = writeln!(s, "workers = {}", opt(self.workers));
        s
    }

    pub fn print_resolved(&self) {
        println!("resolved config:");
        for line in self.render().lines() {
            println!("  {line}");
        }
    }
}

fn opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_else(|| "none".to_owned())
}

pub fn parse_split(value: &str) -> Result<SplitPolicy, String> {
    if value == "leave-last-one" {
        return Ok(SplitPolicy::LeaveLastOne);
    }
    if let Some(rest) = value.strip_prefix("leave-random-k:") {
        return rest
            .parse()
            .map(SplitPolicy::LeaveRandomK)
            .map_err(|e| format!("bad leave-random-k value: {e}"));
    }
    if let Some(rest) = value.strip_prefix("ratio:") {
        return rest
            .parse()
            .map(SplitPolicy::Ratio)
            .map_err(|e| format!("bad ratio value: {e}"));
    }
    Err(format!(
        "unknown split {value:?} (expected leave-last-one, leave-random-k:<k> or ratio:<p>)"
    ))
}

pub fn render_split(p: SplitPolicy) -> String {
    match p {
        SplitPolicy::LeaveLastOne => "leave-last-one".to_owned(),
        SplitPolicy::LeaveRandomK(k) => format!("leave-random-k:{k}"),
        SplitPolicy::Ratio(r) => format!("ratio:{r}"),
    }
}

pub fn parse_readout(value: &str) -> Result<Readout, String> {
    match value {
        "last-layer" => Ok(Readout::LastLayer),
        "mean-then-sign" => Ok(Readout::MeanThenSign),
        other => Err(format!(
            "unknown readout {other:?} (expected last-layer or mean-then-sign)"
        )),
    }
}

pub fn parse_sampling(value: &str) -> Result<UserSampling, String> {
    match value {
        "edge-proportional" => Ok(UserSampling::EdgeProportional),
        "uniform-user" => Ok(UserSampling::UniformUser),
        other => Err(format!(
            "unknown user_sampling {other:?} (expected edge-proportional or uniform-user)"
        )),
    }
}
