//! Training driver: datasets, checkpoints and progress records.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context};
use cartooner_core::data::{Batch, BatchSampler};
use cartooner_core::nn::{init_params, Extractor};
use cartooner_core::train::{Stage, StepReport, Trainer};
use cartooner_core::Error as CoreError;
use log::{info, warn};
use serde_json::json;

use crate::checkpoint::{Archive, ArchiveKind, Manifest, ModelCheckpoint, TrainingCheckpoint};
use crate::config::TrainFile;
use crate::dataset::load_dataset;

/// File name of the checkpoint a stage produces.
pub fn final_checkpoint_name(stage: Stage) -> &'static str {
    match stage {
        Stage::Joint | Stage::Abstraction => "preserve.ckpt",
        Stage::ColorTarget => "target.ckpt",
    }
}

pub fn mode_for(stage: Stage) -> &'static str {
    match stage {
        Stage::Joint | Stage::Abstraction => "preserve",
        Stage::ColorTarget => "target",
    }
}

/// One progress record as a JSON object.
pub fn progress_record(stage: Stage, report: &StepReport, wall_time_s: f64) -> serde_json::Value {
    let mut rec = json!({ "stage": stage.name(), "step": report.step, "level": report.level });
    for (k, v) in report.components() {
        rec[k] = json!(v);
    }
    rec["wall_time_s"] = json!(wall_time_s);
    rec
}

pub fn load_extractor_or_test(path: Option<&Path>) -> anyhow::Result<Extractor> {
    match path {
        Some(p) => crate::checkpoint::load_extractor(p).with_context(|| format!("loading extractor {}", p.display())),
        None => {
            warn!("no extractor checkpoint configured; using the seeded test-mode extractor");
            Ok(Extractor::test_mode(0))
        }
    }
}

/// Builds the trainer, from scratch for the joint stage or from `resume`.
pub fn build_trainer(file: &TrainFile, resume: Option<&Path>, extractor: Extractor) -> anyhow::Result<Trainer> {
    let stage = file.train.stage;
    let (net, params, state) = match resume {
        Some(path) => {
            let ck = ModelCheckpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
            if ck.config != file.net {
                warn!("checkpoint architecture ({}) overrides the configured preset ({})", ck.config.preset, file.net.preset);
            }
            let state = ck.training.filter(|t| t.stage == stage);
            (ck.config, ck.params, state)
        }
        None if stage == Stage::Joint => (file.net.clone(), init_params(&file.net, file.init_seed)?, None),
        None => bail!("the {} stage needs --resume with a trained checkpoint", stage),
    };
    let mut trainer = Trainer::new(net, params, extractor, file.train.clone())?;
    if let Some(TrainingCheckpoint { step, adam, .. }) = state {
        info!("resuming {} at step {}", stage, step);
        trainer.step = step;
        trainer.adam.state = adam.state;
    }
    Ok(trainer)
}

pub fn trainer_checkpoint(t: &Trainer, name: Option<&str>) -> ModelCheckpoint {
    ModelCheckpoint {
        config: t.net.clone(),
        params: t.params.clone(),
        training: Some(TrainingCheckpoint { stage: t.config.stage, step: t.step, adam: t.adam.clone() }),
        mode: Some(mode_for(t.config.stage).to_string()),
        name: name.map(str::to_string),
    }
}

fn dump_batch(batch: &Batch, path: &Path, note: String) -> anyhow::Result<()> {
    let mut m = Manifest::new(ArchiveKind::BatchDump);
    m.note = Some(note);
    let mut a = Archive::new(m);
    for (k, t) in [
        ("photo_lab", &batch.photo_lab),
        ("photo_ab", &batch.photo_ab),
        ("cue", &batch.cue),
        ("aug_photo_ab", &batch.aug_photo_ab),
        ("aug_cue", &batch.aug_cue),
        ("cartoon_l", &batch.cartoon_l),
        ("cartoon_ab", &batch.cartoon_ab),
    ] {
        a.insert(k, t.clone(), true);
    }
    a.save(path)?;
    Ok(())
}

/// Runs the configured stage to completion, writing one JSON progress record
/// per step to `progress`. Returns the path of the final checkpoint.
pub fn run(file: &TrainFile, resume: Option<&Path>, progress: &mut dyn Write) -> anyhow::Result<PathBuf> {
    let extractor = load_extractor_or_test(file.extractor.as_deref())?;
    let mut trainer = build_trainer(file, resume, extractor)?;
    let data = load_dataset(&file.photo_dir, file.photo_manifest.as_deref(), &file.cartoon_dir, file.cartoon_manifest.as_deref())?;
    let sampler = BatchSampler::new(data, trainer.net.clone(), file.train.batch_size, file.train.seed)?;
    let stage = file.train.stage;
    std::fs::create_dir_all(&file.out_dir).with_context(|| format!("creating {}", file.out_dir.display()))?;
    let start = Instant::now();
    while trainer.step < file.train.steps {
        let batch = trainer.next_batch(&sampler)?;
        let report = match trainer.train_step(&batch) {
            Ok(r) => r,
            Err(e @ CoreError::NonFinite(_)) => {
                let dump = file.out_dir.join(format!("nan-batch-step{:06}.ckpt", trainer.step));
                dump_batch(&batch, &dump, e.to_string())?;
                bail!("{}; offending batch written to {}", e, dump.display());
            }
            Err(e) => return Err(e.into()),
        };
        writeln!(progress, "{}", progress_record(stage, &report, start.elapsed().as_secs_f64()))?;
        let every = file.train.checkpoint_every;
        if every > 0 && trainer.step % every == 0 && trainer.step < file.train.steps {
            let path = file.out_dir.join(format!("{}-step{:06}.ckpt", stage.name(), trainer.step));
            trainer_checkpoint(&trainer, file.style_name.as_deref()).save(&path)?;
        }
    }
    let path = file.out_dir.join(final_checkpoint_name(stage));
    trainer_checkpoint(&trainer, file.style_name.as_deref()).save(&path)?;
    info!("wrote {}", path.display());
    Ok(path)
}
