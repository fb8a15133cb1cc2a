//! The training loop: schedule decision, augmentation, forward/backward and
//! optimizer step for every mini-batch, then a clean evaluation per epoch.

use std::fs;
use std::path::{Path, PathBuf};

use log::{debug, info};
use serde::Serialize;

use crate::augment::{
    basic_augment, cutmix_batch, identity_augment, mixup_batch, Batch, BatchInputs,
};
use crate::data::{
    load_csv, load_images, split, BatchIterator, Dataset, MinMaxScaler, SyntheticImages,
};
use crate::error::{Error, Result};
use crate::harness::checkpoint::Checkpoint;
use crate::harness::config::{DataKind, Mixer, TrainConfig};
use crate::harness::metrics::{write_metrics, MetricsRecord};
use crate::model::{accuracy, loss_ce_soft, MlpSpec, MlpState};
use crate::rng::RngStream;
use crate::schedule::{strategy_decide, AugDecision, ScheduleParams, Stage, StrategySpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
}

/// Loss and accuracy of `state` on `data` with hard labels, no augmentation.
pub fn evaluate(state: &MlpState, data: &Dataset) -> Result<Evaluation> {
    let probs = state.predict(&data.features)?;
    Ok(Evaluation {
        loss: loss_ce_soft(&probs, &data.targets())?,
        accuracy: accuracy(&probs, &data.labels)?,
    })
}

/// Reads the configured data source without splitting or scaling.
pub fn load_dataset(config: &TrainConfig) -> Result<Dataset> {
    let data = &config.data;
    let path = || {
        data.path
            .as_deref()
            .ok_or_else(|| Error::config("data.path is required for file data"))
    };
    match data.kind {
        DataKind::Csv => load_csv(path()?, &data.csv_options()),
        DataKind::ImageFile => load_images(path()?),
        DataKind::SyntheticImages => {
            let spec: SyntheticImages = data
                .synthetic
                .ok_or_else(|| Error::config("data.synthetic is required"))?
                .into();
            spec.generate()
        }
    }
}

/// Everything a finished run produced.
#[derive(Debug, Clone)]
pub struct TrainedRun {
    pub records: Vec<MetricsRecord>,
    pub state: MlpState,
    pub scaler: Option<MinMaxScaler>,
    pub train: Dataset,
    pub test: Dataset,
    pub strategy: StrategySpec,
    pub batches_per_epoch: usize,
    /// Main-run mini-batch count `epochs * batches_per_epoch` (the `m` the
    /// schedule sees); refinement batches come on top.
    pub total_batches: usize,
    /// One decision per executed mini-batch, in order.
    pub decisions: Vec<AugDecision>,
}

impl TrainedRun {
    pub fn final_record(&self) -> &MetricsRecord {
        self.records.last().expect("at least one epoch")
    }

    pub fn checkpoint(&self, config: &TrainConfig) -> Checkpoint {
        Checkpoint {
            state: self.state.clone(),
            class_names: self.train.class_names.clone(),
            csv: config.data.csv_options(),
            image_shape: self.train.image_shape,
            scaler: self.scaler.clone(),
        }
    }

    pub fn schedule_params(&self) -> Option<ScheduleParams> {
        match self.strategy {
            StrategySpec::Mwh { p, q } | StrategySpec::StageCombo { p, q, .. } => {
                ScheduleParams::new(p, q, self.total_batches).ok()
            }
            _ => None,
        }
    }
}

#[derive(Default)]
struct EpochTally {
    loss_sum: f64,
    batches: usize,
    mixed: usize,
    stages: [(usize, usize); 3],
}

impl EpochTally {
    fn add(&mut self, decision: &AugDecision, loss: f64) {
        self.loss_sum += loss;
        self.batches += 1;
        self.mixed += decision.mix as usize;
        if let Some(stage) = decision.stage {
            let slot = &mut self.stages[stage.number() as usize - 1];
            slot.0 += 1;
            slot.1 += decision.mix as usize;
        }
    }
}

fn augment(
    batch: Batch,
    decision: &AugDecision,
    config: &TrainConfig,
    rng: &mut RngStream,
) -> Result<Batch> {
    let batch = match (&batch.inputs, config.augment.basic) {
        (BatchInputs::Images(images), true) => Batch {
            inputs: BatchInputs::Images(basic_augment(images, rng)),
            ..batch
        },
        _ => batch,
    };
    if !decision.mix {
        return Ok(identity_augment(batch));
    }
    match (config.augment.mixer, &batch.inputs) {
        (Mixer::Mixup, _) => mixup_batch(&batch, config.alpha, rng),
        (Mixer::Cutmix, BatchInputs::Images(images)) => cutmix_batch(
            images,
            &batch.targets,
            config.alpha,
            rng,
            config.augment.label_mixing,
        ),
        (Mixer::Cutmix, BatchInputs::Features(_)) => Err(Error::config("cutmix needs image data")),
    }
}

/// Trains in memory; see [`run_training`] for the variant that also writes
/// the run directory.
pub fn train(config: &TrainConfig) -> Result<TrainedRun> {
    config.validate()?;
    let strategy = config.strategy_spec()?;
    let dataset = load_dataset(config)?;
    let mut rng = RngStream::new(config.seed);

    let (mut train, mut test) = split(&dataset, &config.data.split_spec(), &mut rng)?;
    if train.is_empty() {
        return Err(Error::config("training split is empty"));
    }
    let scaler = if config.data.scales() {
        let s = MinMaxScaler::fit(&train.features);
        train.features = s.transform(&train.features)?;
        test.features = s.transform(&test.features)?;
        Some(s)
    } else {
        None
    };

    let spec = MlpSpec::with_hidden(train.feature_dim(), &config.model.hidden, train.num_classes)?;
    let mut state = MlpState::init(&spec, &mut rng);
    let mut optimizer = config.optimizer.build();
    let schedule = config.optimizer.lr_schedule(config.epochs);

    let mut batches = BatchIterator::new(&train, config.batch_size)?;
    let per_epoch = batches.batches_per_epoch();
    let m = config.epochs * per_epoch;
    let total_epochs = config.epochs + strategy.refine_epochs();
    info!(
        "training {} on {} samples ({} test), {per_epoch} batches/epoch, m = {m}",
        strategy,
        train.len(),
        test.len()
    );

    let mut records = Vec::with_capacity(total_epochs);
    let mut decisions = Vec::with_capacity(total_epochs * per_epoch);
    let mut i = 0usize;
    for epoch in 0..total_epochs {
        // Refinement epochs keep the final main-phase rate.
        let lr = schedule.lr_at(config.optimizer.lr, epoch.min(config.epochs - 1));
        optimizer.set_lr(lr);
        batches.start_epoch(&mut rng);
        let mut tally = EpochTally::default();
        while let Some(batch) = batches.next_batch() {
            i += 1;
            let decision = strategy_decide(i, &strategy, m, &mut rng)?;
            let batch = augment(batch?, &decision, config, &mut rng)?;
            let cache = state.forward(&batch.inputs.to_matrix())?;
            let loss = loss_ce_soft(cache.probs(), &batch.targets)?;
            if !loss.is_finite() || !cache.probs().all_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch: epoch + 1,
                    batch: i,
                    lr,
                });
            }
            let grads = state.backward(&cache, &batch.targets)?;
            optimizer.step(&mut state.tensors_mut(), &grads.tensors())?;
            tally.add(&decision, loss);
            decisions.push(decision);
        }
        let eval = evaluate(&state, &test)?;
        let record = MetricsRecord {
            epoch: epoch + 1,
            lr,
            train_loss: tally.loss_sum / tally.batches as f64,
            test_loss: eval.loss,
            test_accuracy: eval.accuracy,
            batches: tally.batches,
            mixed_batches: tally.mixed,
            mixed_fraction: tally.mixed as f64 / tally.batches as f64,
            stage1_batches: tally.stages[0].0,
            stage1_mixed: tally.stages[0].1,
            stage2_batches: tally.stages[1].0,
            stage2_mixed: tally.stages[1].1,
            stage3_batches: tally.stages[2].0,
            stage3_mixed: tally.stages[2].1,
        };
        debug!(
            "epoch {:>4} lr {lr:.2e} train {:.4} test {:.4} acc {:.4} mixed {:.2}",
            record.epoch,
            record.train_loss,
            record.test_loss,
            record.test_accuracy,
            record.mixed_fraction
        );
        records.push(record);
    }

    Ok(TrainedRun {
        records,
        state,
        scaler,
        train,
        test,
        strategy,
        batches_per_epoch: per_epoch,
        total_batches: m,
        decisions,
    })
}

#[derive(Serialize)]
struct Manifest<'a> {
    config: &'a TrainConfig,
    strategy: String,
    train_samples: usize,
    test_samples: usize,
    batches_per_epoch: usize,
    total_batches: usize,
    stage1_end: Option<usize>,
    stage2_end: Option<usize>,
    final_record: &'a MetricsRecord,
}

/// Files written into the run directory.
#[derive(Debug, Clone)]
pub struct RunFiles {
    pub metrics: PathBuf,
    pub manifest: PathBuf,
    pub model: PathBuf,
}

pub fn write_run(dir: &Path, config: &TrainConfig, run: &TrainedRun) -> Result<RunFiles> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files = RunFiles {
        metrics: dir.join("metrics.csv"),
        manifest: dir.join("manifest.json"),
        model: dir.join("model.txt"),
    };
    write_metrics(&files.metrics, &run.records)?;
    let sp = run.schedule_params();
    let manifest = Manifest {
        config,
        strategy: run.strategy.label(),
        train_samples: run.train.len(),
        test_samples: run.test.len(),
        batches_per_epoch: run.batches_per_epoch,
        total_batches: run.total_batches,
        stage1_end: sp.map(|s| s.stage1_end()),
        stage2_end: sp.map(|s| s.stage2_end()),
        final_record: run.final_record(),
    };
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Runtime(format!("cannot encode manifest: {e}")))?;
    fs::write(&files.manifest, json + "\n").map_err(|e| Error::io(&files.manifest, e))?;
    run.checkpoint(config).save(&files.model)?;
    Ok(files)
}

/// Trains and, when `out_dir` is set, writes `metrics.csv`, `manifest.json`
/// and `model.txt` there. Returns the last epoch's record.
pub fn run_training(config: &TrainConfig) -> Result<MetricsRecord> {
    let run = train(config)?;
    if let Some(dir) = &config.out_dir {
        write_run(dir, config, &run)?;
    }
    Ok(run.final_record().clone())
}

/// Applies a saved model to a data file using the preprocessing stored with
/// it. Labels are matched to the model's classes by name.
pub fn evaluate_checkpoint(ckpt: &Checkpoint, data_path: &Path) -> Result<Evaluation> {
    let mut data = match ckpt.image_shape {
        Some(shape) => {
            let d = load_images(data_path)?;
            if d.image_shape != Some(shape) {
                return Err(Error::config(format!(
                    "model expects images of shape {shape:?}, file has {:?}",
                    d.image_shape
                )));
            }
            d
        }
        None => load_csv(data_path, &ckpt.csv)?,
    };
    let remap: Vec<usize> = data
        .class_names
        .iter()
        .map(|name| {
            ckpt.class_names
                .iter()
                .position(|c| c == name)
                .ok_or_else(|| {
                    Error::config(format!("label {name:?} is not a class of this model"))
                })
        })
        .collect::<Result<_>>()?;
    data.labels = data.labels.iter().map(|&l| remap[l]).collect();
    data.num_classes = ckpt.class_names.len();
    data.class_names = ckpt.class_names.clone();
    if let Some(s) = &ckpt.scaler {
        data.features = s.transform(&data.features)?;
    }
    evaluate(&ckpt.state, &data)
}

/// Stage a batch index falls in, for strategies that have stages.
pub fn stage_of_batch(run: &TrainedRun, i: usize) -> Option<Stage> {
    run.schedule_params().and_then(|sp| sp.stage_of(i).ok())
}
