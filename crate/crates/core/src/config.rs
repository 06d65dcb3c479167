//! Experiment configuration: flat `key = value` text with dotted keys.
//!
//! One format serves both the user-facing config file and the per-run
//! manifest: a manifest is just a fully resolved config with the `run.*`
//! keys pinned, so re-running a manifest reproduces the run. Parse errors
//! carry the offending line number.

use std::collections::BTreeMap;

use crate::data::Scenario;
use crate::error::{Error, Result};
use crate::masks::AggKind;
use crate::nn::Activation;
use crate::unlearn::{AddOnKind, MethodName, VarianceProvider};

/// Which synthetic dataset generator to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    Blobs,
    Rings,
}

impl std::fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DatasetKind::Blobs => write!(f, "blobs"),
            DatasetKind::Rings => write!(f, "rings"),
        }
    }
}

impl std::str::FromStr for DatasetKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "blobs" => Ok(DatasetKind::Blobs),
            "rings" => Ok(DatasetKind::Rings),
            other => Err(Error::InvalidArgument(format!(
                "unknown dataset kind `{other}` (expected blobs|rings)"
            ))),
        }
    }
}

/// Fully resolved experiment configuration.
///
/// Defaults are the pilot-tuned desk-scale working point: 4-class Gaussian
/// blobs in 16 dimensions, 500 train / 200 test examples per class, a
/// 16-64-32-4 relu net trained for 200 epochs at lr 0.1 (enough to memorize
/// the training set, so forgetting is measurable), 10 unlearning epochs at
/// lr 1.0, batch size 32, linear aggregation with alpha = 0.05 /
/// beta = 0.95, certainty p = 0.3, gamma = 1.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub model_input_dim: usize,
    pub model_hidden: Vec<usize>,
    pub model_num_classes: usize,
    pub model_activation: Activation,

    pub dataset_kind: DatasetKind,
    pub dataset_train_per_class: usize,
    pub dataset_test_per_class: usize,
    pub dataset_dim: usize,
    pub dataset_separation: f64,
    pub dataset_noise: f64,
    pub dataset_seed: u64,

    pub scenario_kind: Scenario,
    pub scenario_fraction: f64,
    pub scenario_target_class: usize,
    pub scenario_seed: u64,

    pub train_epochs: usize,
    pub train_lr: f64,
    pub unlearn_epochs: usize,
    pub unlearn_lr: f64,
    pub unlearn_eps: f64,
    pub batch_size: usize,

    pub addon_alpha: f64,
    pub addon_beta: f64,
    pub addon_p: f64,
    pub addon_gamma: f64,
    pub addon_agg: AggKind,
    pub addon_variance_provider: VarianceProvider,

    pub sweep_methods: Vec<MethodName>,
    pub sweep_addons: Vec<AddOnKind>,
    pub sweep_seeds: Vec<u64>,
    pub sweep_workers: usize,

    pub output_dir: String,

    /// Pin to a single (method, addon, seed) run; set in per-run manifests.
    pub run_method: Option<MethodName>,
    pub run_addon: Option<AddOnKind>,
    pub run_seed: Option<u64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            model_input_dim: 16,
            model_hidden: vec![64, 32],
            model_num_classes: 4,
            model_activation: Activation::Relu,

            dataset_kind: DatasetKind::Blobs,
            dataset_train_per_class: 500,
            dataset_test_per_class: 200,
            dataset_dim: 16,
            dataset_separation: 2.0,
            dataset_noise: 0.15,
            dataset_seed: 100,

            scenario_kind: Scenario::RandomFraction,
            scenario_fraction: 0.10,
            scenario_target_class: 0,
            scenario_seed: 200,

            train_epochs: 200,
            train_lr: 0.1,
            unlearn_epochs: 10,
            unlearn_lr: 1.0,
            unlearn_eps: 1e-8,
            batch_size: 32,

            addon_alpha: 0.05,
            addon_beta: 0.95,
            addon_p: 0.3,
            addon_gamma: 1.0,
            addon_agg: AggKind::Linear,
            addon_variance_provider: VarianceProvider::Adam,

            sweep_methods: vec![MethodName::Srl],
            sweep_addons: vec![AddOnKind::None, AddOnKind::Focus],
            sweep_seeds: vec![0, 1, 2, 3, 4],
            sweep_workers: 0,

            output_dir: "runs".into(),

            run_method: None,
            run_addon: None,
            run_seed: None,
        }
    }
}

fn config_err(line: usize, message: impl Into<String>) -> Error {
    Error::Config {
        line,
        message: message.into(),
    }
}

impl ExperimentConfig {
    /// Parse a config file body, applying keys over the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| config_err(line_no, format!("expected `key = value`, got `{line}`")))?;
            let key = key.trim();
            let value = value.trim();
            cfg.apply(key, value)
                .map_err(|e| config_err(line_no, e.to_string()))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(value: &str, what: &str) -> Result<T> {
            value.parse().map_err(|_| {
                Error::InvalidArgument(format!("bad {what} value `{value}`"))
            })
        }
        fn list<T: std::str::FromStr>(value: &str, what: &str) -> Result<Vec<T>> {
            if value.is_empty() {
                return Ok(Vec::new());
            }
            value
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse()
                        .map_err(|_| Error::InvalidArgument(format!("bad {what} entry `{s}`")))
                })
                .collect()
        }
        match key {
            "model.input_dim" => self.model_input_dim = num(value, "model.input_dim")?,
            "model.hidden" => self.model_hidden = list(value, "model.hidden")?,
            "model.num_classes" => self.model_num_classes = num(value, "model.num_classes")?,
            "model.activation" => self.model_activation = value.parse()?,
            "dataset.kind" => self.dataset_kind = value.parse()?,
            "dataset.train_per_class" => {
                self.dataset_train_per_class = num(value, "dataset.train_per_class")?
            }
            "dataset.test_per_class" => {
                self.dataset_test_per_class = num(value, "dataset.test_per_class")?
            }
            "dataset.dim" => self.dataset_dim = num(value, "dataset.dim")?,
            "dataset.separation" => self.dataset_separation = num(value, "dataset.separation")?,
            "dataset.noise" => self.dataset_noise = num(value, "dataset.noise")?,
            "dataset.seed" => self.dataset_seed = num(value, "dataset.seed")?,
            "scenario.kind" => self.scenario_kind = value.parse()?,
            "scenario.fraction" => self.scenario_fraction = num(value, "scenario.fraction")?,
            "scenario.target_class" => {
                self.scenario_target_class = num(value, "scenario.target_class")?
            }
            "scenario.seed" => self.scenario_seed = num(value, "scenario.seed")?,
            "train.epochs" => self.train_epochs = num(value, "train.epochs")?,
            "train.lr" => self.train_lr = num(value, "train.lr")?,
            "unlearn.epochs" => self.unlearn_epochs = num(value, "unlearn.epochs")?,
            "unlearn.lr" => self.unlearn_lr = num(value, "unlearn.lr")?,
            "unlearn.eps" => self.unlearn_eps = num(value, "unlearn.eps")?,
            "batch_size" => self.batch_size = num(value, "batch_size")?,
            "addon.alpha" => self.addon_alpha = num(value, "addon.alpha")?,
            "addon.beta" => self.addon_beta = num(value, "addon.beta")?,
            "addon.p" => self.addon_p = num(value, "addon.p")?,
            "addon.gamma" => self.addon_gamma = num(value, "addon.gamma")?,
            "addon.agg" => {
                self.addon_agg = match value {
                    "linear" => AggKind::Linear,
                    "abs_min" => AggKind::AbsMin,
                    other => {
                        return Err(Error::InvalidArgument(format!(
                            "unknown aggregation `{other}` (expected linear|abs_min)"
                        )))
                    }
                }
            }
            "addon.variance_provider" => self.addon_variance_provider = value.parse()?,
            "sweep.methods" => self.sweep_methods = list(value, "sweep.methods")?,
            "sweep.addons" => self.sweep_addons = list(value, "sweep.addons")?,
            "sweep.seeds" => self.sweep_seeds = list(value, "sweep.seeds")?,
            "sweep.workers" => self.sweep_workers = num(value, "sweep.workers")?,
            "output.dir" => self.output_dir = value.to_string(),
            "run.method" => self.run_method = Some(value.parse()?),
            "run.addon" => self.run_addon = Some(value.parse()?),
            "run.seed" => self.run_seed = Some(num(value, "run.seed")?),
            other => {
                return Err(Error::InvalidArgument(format!("unknown key `{other}`")));
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.sweep_seeds.is_empty() {
            return Err(Error::InvalidArgument("sweep.seeds must not be empty".into()));
        }
        if self.sweep_methods.is_empty() {
            return Err(Error::InvalidArgument(
                "sweep.methods must not be empty".into(),
            ));
        }
        if self.sweep_addons.is_empty() {
            return Err(Error::InvalidArgument(
                "sweep.addons must not be empty".into(),
            ));
        }
        if !(self.scenario_fraction > 0.0 && self.scenario_fraction < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "scenario.fraction must lie in (0, 1), got {}",
                self.scenario_fraction
            )));
        }
        if self.train_lr <= 0.0 || self.unlearn_lr <= 0.0 {
            return Err(Error::InvalidArgument("learning rates must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be at least 1".into()));
        }
        if self.unlearn_epochs == 0 {
            return Err(Error::InvalidArgument(
                "unlearn.epochs must be at least 1".into(),
            ));
        }
        if !(self.addon_p > 0.0 && self.addon_p < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "addon.p must lie in (0, 1), got {}",
                self.addon_p
            )));
        }
        Ok(())
    }

    /// Serialize every key, sorted, as a loadable config/manifest body.
    pub fn to_manifest_string(&self) -> String {
        let mut map: BTreeMap<&str, String> = BTreeMap::new();
        map.insert("model.input_dim", self.model_input_dim.to_string());
        map.insert("model.hidden", join(&self.model_hidden));
        map.insert("model.num_classes", self.model_num_classes.to_string());
        map.insert("model.activation", self.model_activation.to_string());
        map.insert("dataset.kind", self.dataset_kind.to_string());
        map.insert(
            "dataset.train_per_class",
            self.dataset_train_per_class.to_string(),
        );
        map.insert(
            "dataset.test_per_class",
            self.dataset_test_per_class.to_string(),
        );
        map.insert("dataset.dim", self.dataset_dim.to_string());
        map.insert("dataset.separation", self.dataset_separation.to_string());
        map.insert("dataset.noise", self.dataset_noise.to_string());
        map.insert("dataset.seed", self.dataset_seed.to_string());
        map.insert("scenario.kind", self.scenario_kind.to_string());
        map.insert("scenario.fraction", self.scenario_fraction.to_string());
        map.insert(
            "scenario.target_class",
            self.scenario_target_class.to_string(),
        );
        map.insert("scenario.seed", self.scenario_seed.to_string());
        map.insert("train.epochs", self.train_epochs.to_string());
        map.insert("train.lr", self.train_lr.to_string());
        map.insert("unlearn.epochs", self.unlearn_epochs.to_string());
        map.insert("unlearn.lr", self.unlearn_lr.to_string());
        map.insert("unlearn.eps", self.unlearn_eps.to_string());
        map.insert("batch_size", self.batch_size.to_string());
        map.insert("addon.alpha", self.addon_alpha.to_string());
        map.insert("addon.beta", self.addon_beta.to_string());
        map.insert("addon.p", self.addon_p.to_string());
        map.insert("addon.gamma", self.addon_gamma.to_string());
        map.insert(
            "addon.agg",
            match self.addon_agg {
                AggKind::Linear => "linear".into(),
                AggKind::AbsMin => "abs_min".into(),
            },
        );
        map.insert(
            "addon.variance_provider",
            self.addon_variance_provider.to_string(),
        );
        map.insert("sweep.methods", join(&self.sweep_methods));
        map.insert("sweep.addons", join(&self.sweep_addons));
        map.insert("sweep.seeds", join(&self.sweep_seeds));
        map.insert("sweep.workers", self.sweep_workers.to_string());
        map.insert("output.dir", self.output_dir.clone());
        if let Some(m) = self.run_method {
            map.insert("run.method", m.to_string());
        }
        if let Some(a) = self.run_addon {
            map.insert("run.addon", a.to_string());
        }
        if let Some(s) = self.run_seed {
            map.insert("run.seed", s.to_string());
        }
        let mut out = String::new();
        for (k, v) in map {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }

    /// The (method, addon, seed) triples this config asks for: the pinned
    /// `run.*` triple when present, else the full sweep cross product.
    pub fn effective_runs(&self) -> Vec<(MethodName, AddOnKind, u64)> {
        if let (Some(m), Some(a), Some(s)) = (self.run_method, self.run_addon, self.run_seed) {
            return vec![(m, a, s)];
        }
        let mut runs = Vec::new();
        for &m in &self.sweep_methods {
            for &a in &self.sweep_addons {
                for &s in &self.sweep_seeds {
                    runs.push((m, a, s));
                }
            }
        }
        runs
    }
}

fn join<T: std::fmt::Display>(items: &[T]) -> String {
    items
        .iter()
        .map(|i| i.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_roundtrip_through_manifest() {
        let cfg = ExperimentConfig::default();
        let text = cfg.to_manifest_string();
        let back = ExperimentConfig::parse(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn parse_overrides_and_comments() {
        let text = "\
# comment line
unlearn.lr = 0.005   # trailing comment
sweep.methods = SRL,NGPlus
model.hidden = 64,32
";
        let cfg = ExperimentConfig::parse(text).unwrap();
        assert_eq!(cfg.unlearn_lr, 0.005);
        assert_eq!(cfg.sweep_methods, vec![MethodName::Srl, MethodName::NgPlus]);
        assert_eq!(cfg.model_hidden, vec![64, 32]);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let text = "train.lr = 0.05\nbogus.key = 3\n";
        match ExperimentConfig::parse(text) {
            Err(Error::Config { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected config error, got {other:?}"),
        }
        let text2 = "train.lr = not_a_number\n";
        match ExperimentConfig::parse(text2) {
            Err(Error::Config { line, .. }) => assert_eq!(line, 1),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn run_pin_narrows_effective_runs() {
        let mut cfg = ExperimentConfig::default();
        assert_eq!(cfg.effective_runs().len(), 10); // 1 method x 2 addons x 5 seeds
        cfg.run_method = Some(MethodName::Srl);
        cfg.run_addon = Some(AddOnKind::Focus);
        cfg.run_seed = Some(3);
        assert_eq!(
            cfg.effective_runs(),
            vec![(MethodName::Srl, AddOnKind::Focus, 3)]
        );
    }

    #[test]
    fn validation_rejects_bad_fraction() {
        let text = "scenario.fraction = 1.5\n";
        assert!(ExperimentConfig::parse(text).is_err());
    }
}
