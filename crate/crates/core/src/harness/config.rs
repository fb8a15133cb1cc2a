//! Run configuration, read from TOML.
//!
//! ```toml
//! seed = 0
//! epochs = 100
//! batch_size = 128
//! alpha = 0.2
//! out_dir = "runs/iris"
//!
//! [data]
//! kind = "csv"              # csv | synthetic_images | image_file
//! path = "../data/iris.csv"
//! label_column = "species"  # header name, 0-based index, or "last"
//! train_fraction = 0.7
//!
//! [model]
//! hidden = [128, 128]
//!
//! [optimizer]
//! kind = "adam"             # adam | sgd
//! lr = 0.001
//! schedule = "constant"     # constant | step | cosine
//!
//! [strategy]
//! kind = "mwh"              # baseline | mixup | first_half | second_half
//!                           # | refine | mwh | combo
//! p = 0.6
//! q = 0.9
//!
//! [augment]
//! mixer = "mixup"           # mixup | cutmix
//! label_mixing = true
//! ```
//!
//! Relative paths are resolved against the directory of the config file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{CsvOptions, LabelColumn, SplitSpec, SyntheticImages};
use crate::error::{Error, Result};
use crate::optim::{Adam, LrSchedule, Optimizer, Sgd};
use crate::schedule::{Policy, StrategySpec, DEFAULT_P, DEFAULT_Q};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "defaults::epochs")]
    pub epochs: usize,
    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
    #[serde(default = "defaults::alpha")]
    pub alpha: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    pub data: DataConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub strategy: StrategyConfig,
    #[serde(default)]
    pub augment: AugmentConfig,
}

mod defaults {
    pub fn epochs() -> usize {
        100
    }
    pub fn batch_size() -> usize {
        crate::data::DEFAULT_BATCH_SIZE
    }
    pub fn alpha() -> f64 {
        1.0
    }
    pub fn yes() -> bool {
        true
    }
    pub fn train_fraction() -> f64 {
        0.75
    }
    pub fn hidden() -> Vec<usize> {
        vec![128, 128]
    }
    pub fn lr() -> f64 {
        0.001
    }
    pub fn momentum() -> f64 {
        0.9
    }
    pub fn factor() -> f64 {
        0.1
    }
    pub fn p() -> f64 {
        crate::schedule::DEFAULT_P
    }
    pub fn q() -> f64 {
        crate::schedule::DEFAULT_Q
    }
    pub fn refine_epochs() -> usize {
        25
    }
    pub fn mwh() -> String {
        "mwh".into()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataKind {
    Csv,
    SyntheticImages,
    ImageFile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub kind: DataKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default = "default_label_column")]
    pub label_column: String,
    #[serde(default = "defaults::yes")]
    pub header: bool,
    #[serde(default = "defaults::train_fraction")]
    pub train_fraction: f64,
    #[serde(default = "defaults::yes")]
    pub stratified: bool,
    /// Min-max scaling fitted on the training split. Defaults to on for CSV
    /// data and off for images, whose pixels are already in `[0, 1]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticConfig>,
}

fn default_label_column() -> String {
    "last".into()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub n: usize,
    #[serde(default = "one")]
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    #[serde(default = "two")]
    pub classes: usize,
    #[serde(default)]
    pub generator_seed: u64,
}

fn one() -> usize {
    1
}

fn two() -> usize {
    2
}

impl From<SyntheticConfig> for SyntheticImages {
    fn from(c: SyntheticConfig) -> Self {
        SyntheticImages {
            n: c.n,
            channels: c.channels,
            height: c.height,
            width: c.width,
            classes: c.classes,
            seed: c.generator_seed,
        }
    }
}

impl DataConfig {
    pub fn csv(path: impl Into<PathBuf>) -> Self {
        Self {
            kind: DataKind::Csv,
            path: Some(path.into()),
            label_column: default_label_column(),
            header: true,
            train_fraction: defaults::train_fraction(),
            stratified: true,
            scale: None,
            synthetic: None,
        }
    }

    pub fn synthetic(spec: SyntheticImages) -> Self {
        Self {
            kind: DataKind::SyntheticImages,
            path: None,
            label_column: default_label_column(),
            header: true,
            train_fraction: defaults::train_fraction(),
            stratified: true,
            scale: None,
            synthetic: Some(SyntheticConfig {
                n: spec.n,
                channels: spec.channels,
                height: spec.height,
                width: spec.width,
                classes: spec.classes,
                generator_seed: spec.seed,
            }),
        }
    }

    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec {
            train_fraction: self.train_fraction,
            stratified: self.stratified,
        }
    }

    pub fn csv_options(&self) -> CsvOptions {
        CsvOptions {
            has_header: self.header,
            label_column: LabelColumn::parse(&self.label_column),
        }
    }

    pub fn scales(&self) -> bool {
        self.scale.unwrap_or(self.kind == DataKind::Csv)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default = "defaults::hidden")]
    pub hidden: Vec<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: defaults::hidden(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Constant,
    Step,
    Cosine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    #[serde(default = "adam")]
    pub kind: OptimizerKind,
    #[serde(default = "defaults::lr")]
    pub lr: f64,
    #[serde(default = "defaults::momentum")]
    pub momentum: f64,
    #[serde(default = "constant")]
    pub schedule: ScheduleKind,
    /// Epochs after which the rate is multiplied by `factor`.
    #[serde(default)]
    pub milestones: Vec<usize>,
    #[serde(default = "defaults::factor")]
    pub factor: f64,
}

fn adam() -> OptimizerKind {
    OptimizerKind::Adam
}

fn constant() -> ScheduleKind {
    ScheduleKind::Constant
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Adam,
            lr: defaults::lr(),
            momentum: defaults::momentum(),
            schedule: ScheduleKind::Constant,
            milestones: Vec::new(),
            factor: defaults::factor(),
        }
    }
}

impl OptimizerConfig {
    pub fn build(&self) -> Optimizer {
        match self.kind {
            OptimizerKind::Adam => Optimizer::Adam(Adam::new(self.lr)),
            OptimizerKind::Sgd => Optimizer::Sgd(Sgd::new(self.lr, self.momentum)),
        }
    }

    /// Schedule over the main run of `epochs` epochs.
    pub fn lr_schedule(&self, epochs: usize) -> LrSchedule {
        match self.schedule {
            ScheduleKind::Constant => LrSchedule::Constant,
            ScheduleKind::Step => LrSchedule::StepDecay {
                milestones: self.milestones.clone(),
                factor: self.factor,
            },
            ScheduleKind::Cosine => LrSchedule::Cosine {
                total_epochs: epochs,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategyConfig {
    #[serde(default = "defaults::mwh")]
    pub kind: String,
    #[serde(default = "defaults::p")]
    pub p: f64,
    #[serde(default = "defaults::q")]
    pub q: f64,
    #[serde(default = "defaults::refine_epochs")]
    pub refine_epochs: usize,
    #[serde(default = "defaults::mwh")]
    pub stage2: String,
    #[serde(default = "defaults::mwh")]
    pub stage3: String,
}

impl Default for StrategyConfig {
    fn default() -> Self {
        Self::from_spec(&StrategySpec::default())
    }
}

impl StrategyConfig {
    pub fn spec(&self) -> Result<StrategySpec> {
        let spec = match self.kind.trim().to_ascii_lowercase().as_str() {
            "baseline" => StrategySpec::Baseline,
            "mixup" | "mixup_always" => StrategySpec::MixupAlways,
            "first_half" | "first_half_mixup" => StrategySpec::FirstHalfMixup,
            "second_half" | "second_half_mixup" => StrategySpec::SecondHalfMixup,
            "refine" | "refinement" => StrategySpec::MixupWithRefinement {
                refine_epochs: self.refine_epochs,
            },
            "mwh" => StrategySpec::Mwh {
                p: self.p,
                q: self.q,
            },
            "combo" | "stage_combo" => StrategySpec::StageCombo {
                p: self.p,
                q: self.q,
                stage2: self.stage2.parse::<Policy>()?,
                stage3: self.stage3.parse::<Policy>()?,
            },
            other => return Err(Error::config(format!("unknown strategy kind {other:?}"))),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_spec(spec: &StrategySpec) -> Self {
        let mut c = Self {
            kind: String::new(),
            p: DEFAULT_P,
            q: DEFAULT_Q,
            refine_epochs: defaults::refine_epochs(),
            stage2: defaults::mwh(),
            stage3: defaults::mwh(),
        };
        c.kind = match *spec {
            StrategySpec::Baseline => "baseline",
            StrategySpec::MixupAlways => "mixup",
            StrategySpec::FirstHalfMixup => "first_half",
            StrategySpec::SecondHalfMixup => "second_half",
            StrategySpec::MixupWithRefinement { refine_epochs } => {
                c.refine_epochs = refine_epochs;
                "refine"
            }
            StrategySpec::Mwh { p, q } => {
                c.p = p;
                c.q = q;
                "mwh"
            }
            StrategySpec::StageCombo {
                p,
                q,
                stage2,
                stage3,
            } => {
                c.p = p;
                c.q = q;
                c.stage2 = stage2.to_string();
                c.stage3 = stage3.to_string();
                "combo"
            }
        }
        .to_string();
        c
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mixer {
    Mixup,
    Cutmix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentConfig {
    #[serde(default = "mixup")]
    pub mixer: Mixer,
    /// When false, CutMix keeps the label of the image contributing more area.
    #[serde(default = "defaults::yes")]
    pub label_mixing: bool,
    /// Flip and pad-crop on image batches before any mixing.
    #[serde(default = "defaults::yes")]
    pub basic: bool,
}

fn mixup() -> Mixer {
    Mixer::Mixup
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            mixer: Mixer::Mixup,
            label_mixing: true,
            basic: true,
        }
    }
}

impl TrainConfig {
    /// Defaults everywhere except the data source.
    pub fn new(data: DataConfig) -> Self {
        Self {
            seed: 0,
            epochs: defaults::epochs(),
            batch_size: defaults::batch_size(),
            alpha: defaults::alpha(),
            out_dir: None,
            data,
            model: ModelConfig::default(),
            optimizer: OptimizerConfig::default(),
            strategy: StrategyConfig::default(),
            augment: AugmentConfig::default(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: TrainConfig =
            toml::from_str(text).map_err(|e| Error::config(format!("invalid config: {e}")))?;
        Ok(cfg)
    }

    /// Parses `path` and resolves relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text)?;
        let base = path.parent().unwrap_or_else(|| Path::new(""));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = self.data.path.as_mut() {
            fix(p);
        }
        if let Some(p) = self.out_dir.as_mut() {
            fix(p);
        }
    }

    pub fn strategy_spec(&self) -> Result<StrategySpec> {
        self.strategy.spec()
    }

    pub fn set_strategy(&mut self, spec: &StrategySpec) {
        self.strategy = StrategyConfig::from_spec(spec);
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::config(format!(
                "alpha must be positive, got {}",
                self.alpha
            )));
        }
        if !(self.optimizer.lr > 0.0 && self.optimizer.lr.is_finite()) {
            return Err(Error::config("learning rate must be positive"));
        }
        if self.model.hidden.contains(&0) {
            return Err(Error::config("hidden layer widths must be positive"));
        }
        self.optimizer.lr_schedule(self.epochs).validate()?;
        self.strategy_spec()?;
        self.data.split_spec().validate()?;
        match self.data.kind {
            DataKind::Csv | DataKind::ImageFile => {
                let path = self
                    .data
                    .path
                    .as_ref()
                    .ok_or_else(|| Error::config("data.path is required for file data"))?;
                if !path.is_file() {
                    return Err(Error::config(format!(
                        "data file {} does not exist",
                        path.display()
                    )));
                }
            }
            DataKind::SyntheticImages => {
                if self.data.synthetic.is_none() {
                    return Err(Error::config(
                        "data.synthetic is required for synthetic_images",
                    ));
                }
            }
        }
        if self.augment.mixer == Mixer::Cutmix && self.data.kind == DataKind::Csv {
            return Err(Error::config("cutmix needs image data"));
        }
        Ok(())
    }
}
