use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use srseg_autograd::Adam;

use super::checkpoint::{
    checkpoint_path, ensure_generator_spec, latest_checkpoint, load_checkpoint, save_checkpoint,
};
use super::checkpoint::{RunInfo, TrainState};
use super::config::RunConfig;
use super::plan::StagePlan;
use super::schedule::lr_for;
use super::step::{train_step_discriminator, train_step_generator, Batch, ObjectiveEnv};
use crate::data::{derive_seed, make_train_sample, CropConfig, LabeledImage};
use crate::eval::plot_loss_curves;
use crate::losses::{LossBreakdown, LossTerm};
use crate::model::{build_discriminator, build_extractor, build_generator, BN_EPS, BN_MOMENTUM};
use crate::{Error, Result};

pub const CSV_HEADER: &str = "step,epoch,stage,lr,mse,vgg,adv,seg_masked,total,d_loss";

/// One logged generator step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: u64,
    pub epoch: usize,
    pub stage: String,
    pub lr: f64,
    pub mse: f64,
    pub vgg: f64,
    pub adv: f64,
    pub seg_masked: f64,
    pub total: f64,
    pub d_loss: Option<f64>,
}

impl LogRow {
    fn csv(&self) -> String {
        let d = self.d_loss.map(|v| v.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.step,
            self.epoch,
            self.stage,
            self.lr,
            self.mse,
            self.vgg,
            self.adv,
            self.seg_masked,
            self.total,
            d
        )
    }
}

#[derive(Clone, Debug)]
pub struct RunOptions {
    /// Continue from the newest checkpoint in `out_dir/checkpoints`.
    pub resume: bool,
    /// Stop after this many epochs in this invocation (interruptions in tests).
    pub max_epochs: Option<usize>,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            resume: true,
            max_epochs: None,
        }
    }
}

pub struct RunOutcome {
    pub state: TrainState,
    /// Completed epochs restored from a checkpoint.
    pub resumed_from: Option<usize>,
    /// The whole log, including rows from earlier invocations.
    pub rows: Vec<LogRow>,
}

/// Files a run writes under `out_dir`.
#[derive(Clone, Debug)]
pub struct RunPaths {
    pub checkpoints: PathBuf,
    pub csv: PathBuf,
    pub jsonl: PathBuf,
    pub plot: PathBuf,
    pub config: PathBuf,
}

impl RunPaths {
    pub fn new(out_dir: &Path) -> Self {
        RunPaths {
            checkpoints: out_dir.join("checkpoints"),
            csv: out_dir.join("losses.csv"),
            jsonl: out_dir.join("losses.jsonl"),
            plot: out_dir.join("loss_curves.png"),
            config: out_dir.join("run_config.json"),
        }
    }
}

pub fn read_log(path: &Path) -> Result<Vec<LogRow>> {
    let Ok(text) = fs::read_to_string(path) else {
        return Ok(Vec::new());
    };
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            serde_json::from_str(l).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
        })
        .collect()
}

fn rewrite_logs(paths: &RunPaths, rows: &[LogRow]) -> Result<()> {
    let mut csv = String::from(CSV_HEADER);
    csv.push('\n');
    let mut jsonl = String::new();
    for r in rows {
        csv.push_str(&r.csv());
        csv.push('\n');
        jsonl.push_str(&serde_json::to_string(r).expect("row serializes"));
        jsonl.push('\n');
    }
    fs::write(&paths.csv, csv).map_err(|e| Error::io(&paths.csv, e))?;
    fs::write(&paths.jsonl, jsonl).map_err(|e| Error::io(&paths.jsonl, e))
}

fn append_line(path: &Path, line: &str) -> Result<()> {
    let mut f = OpenOptions::new()
        .append(true)
        .create(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    writeln!(f, "{line}").map_err(|e| Error::io(path, e))
}

#[derive(Serialize)]
struct NanDump<'a> {
    step: u64,
    epoch: usize,
    stage: &'a str,
    lr: f64,
    image_names: Vec<&'a str>,
    breakdown: Option<LossBreakdown>,
    phase: &'a str,
}

fn write_dump(out_dir: &Path, dump: &NanDump) -> PathBuf {
    let path = out_dir.join(format!("nonfinite_step{:08}.json", dump.step));
    // the dump is best effort: the abort itself must not be masked
    let _ = fs::write(&path, serde_json::to_vec_pretty(dump).unwrap_or_default());
    path
}

fn fresh_state(cfg: &RunConfig, info: RunInfo) -> Result<TrainState> {
    Ok(TrainState {
        generator: build_generator(&cfg.generator, true, cfg.seed)?,
        g_opt: Adam::new(cfg.optimizer.adam()),
        discriminator: None,
        epoch: 0,
        global_step: 0,
        stage_index: 0,
        seed: cfg.seed,
        info,
    })
}

/// Epoch-ordered minibatches of freshly cropped samples.
fn epoch_batches(
    cfg: &RunConfig,
    data: &[LabeledImage],
    epoch: usize,
) -> Result<Vec<(Vec<usize>, Batch)>> {
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(
        cfg.seed,
        &[epoch as u64, 0],
    )));
    let mut out = Vec::new();
    for chunk in order.chunks(cfg.batch_size) {
        let samples = chunk
            .iter()
            .map(|&i| {
                let crop = CropConfig {
                    hr_crop_size: cfg.data.hr_crop,
                    seed: derive_seed(cfg.seed, &[epoch as u64, 1, i as u64]),
                };
                make_train_sample(
                    &data[i].hr,
                    &data[i].label,
                    &crop,
                    cfg.generator.scale,
                    cfg.d1,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        out.push((chunk.to_vec(), Batch::from_samples(&samples)?));
    }
    Ok(out)
}

/// Runs (or resumes) the staged schedule, checkpointing after every epoch.
pub fn run_training(
    cfg: &RunConfig,
    data: &[LabeledImage],
    remap_digest: &str,
    opts: &RunOptions,
) -> Result<RunOutcome> {
    let plan: StagePlan = cfg.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidSpec("training set is empty".into()));
    }
    let paths = RunPaths::new(&cfg.out_dir);
    fs::create_dir_all(&paths.checkpoints).map_err(|e| Error::io(&paths.checkpoints, e))?;
    let recorded = serde_json::json!({
        "config": cfg,
        "batch_norm": { "eps": BN_EPS, "momentum": BN_MOMENTUM },
        "remap_table_digest": remap_digest,
    });
    fs::write(
        &paths.config,
        serde_json::to_vec_pretty(&recorded).expect("config serializes"),
    )
    .map_err(|e| Error::io(&paths.config, e))?;

    let info = RunInfo {
        loss_weights: cfg.loss.weights(),
        remap_table_digest: remap_digest.to_string(),
    };
    let latest = if opts.resume {
        latest_checkpoint(&paths.checkpoints)
    } else {
        None
    };
    let (mut state, resumed_from, mut rows) = match latest {
        Some((epoch, path)) => {
            let state = load_checkpoint(&path)?;
            ensure_generator_spec(&state, &cfg.generator)?;
            if state.seed != cfg.seed || state.info != info {
                return Err(Error::SpecMismatch(format!(
                    "{} was written with a different seed, loss weights or remap table",
                    path.display()
                )));
            }
            log::info!("resuming from epoch {epoch} ({})", path.display());
            let rows: Vec<LogRow> = read_log(&paths.jsonl)?
                .into_iter()
                .filter(|r| r.step <= state.global_step)
                .collect();
            (state, Some(epoch), rows)
        }
        None => (fresh_state(cfg, info)?, None, Vec::new()),
    };
    rewrite_logs(&paths, &rows)?;

    let extractor = if plan.uses(LossTerm::Vgg) {
        Some(build_extractor(&cfg.extractor)?)
    } else {
        None
    };
    let weights = cfg.loss.weights();
    let end = match opts.max_epochs {
        Some(n) => (state.epoch + n).min(plan.total_epochs()),
        None => plan.total_epochs(),
    };

    for epoch in state.epoch..end {
        let stage_index = plan.stage_index_at(epoch).expect("epoch inside plan");
        let stage = &plan.stages[stage_index];
        state.stage_index = stage_index;
        let lr = lr_for(&cfg.optimizer, epoch, plan.stage_start(stage_index));
        let adversarial = stage.terms.contains(&LossTerm::Adv);
        if adversarial && state.discriminator.is_none() {
            let d = build_discriminator(&cfg.discriminator, derive_seed(cfg.seed, &[2]))?;
            state.discriminator = Some((d, Adam::new(cfg.optimizer.adam())));
        }

        for (indices, batch) in epoch_batches(cfg, data, epoch)? {
            let step = state.global_step + 1;
            let names: Vec<&str> = indices.iter().map(|&i| data[i].name.as_str()).collect();
            let abort = |phase: &str, breakdown: Option<LossBreakdown>| {
                let dump = write_dump(
                    &cfg.out_dir,
                    &NanDump {
                        step,
                        epoch,
                        stage: &stage.name,
                        lr,
                        image_names: names.clone(),
                        breakdown,
                        phase,
                    },
                );
                Error::NonFiniteLoss { step, dump }
            };

            let env = ObjectiveEnv {
                discriminator: state.discriminator.as_ref().map(|(d, _)| d),
                extractor: extractor.as_ref(),
                weights,
                reduction: cfg.loss.vgg_reduction,
            };
            let g = match train_step_generator(
                &mut state.generator,
                &mut state.g_opt,
                &batch,
                &stage.terms,
                &env,
                lr,
            ) {
                Err(Error::NonFiniteLoss { .. }) => return Err(abort("generator", None)),
                other => other?,
            };
            if !g.breakdown.total.is_finite() {
                return Err(abort("generator", Some(g.breakdown)));
            }
            let d_loss = match state.discriminator.as_mut().filter(|_| adversarial) {
                Some((d, opt)) => match train_step_discriminator(d, opt, &batch.hr, &g.sr, lr) {
                    Err(Error::NonFiniteLoss { .. }) => {
                        return Err(abort("discriminator", Some(g.breakdown)))
                    }
                    other => Some(other?),
                },
                None => None,
            };
            state.global_step = step;

            if step % cfg.log_every as u64 == 0 {
                let b = g.breakdown;
                let row = LogRow {
                    step,
                    epoch,
                    stage: stage.name.clone(),
                    lr,
                    mse: b.mse,
                    vgg: b.vgg,
                    adv: b.adv,
                    seg_masked: b.seg_masked,
                    total: b.total,
                    d_loss,
                };
                append_line(&paths.csv, &row.csv())?;
                append_line(
                    &paths.jsonl,
                    &serde_json::to_string(&row).expect("row serializes"),
                )?;
                rows.push(row);
            }
        }
        state.epoch = epoch + 1;
        save_checkpoint(&state, &checkpoint_path(&paths.checkpoints, state.epoch))?;
        log::info!(
            "epoch {} / {} done (stage {})",
            state.epoch,
            plan.total_epochs(),
            stage.name
        );
    }

    plot_loss_curves(&rows, &paths.plot)?;
    Ok(RunOutcome {
        state,
        resumed_from,
        rows,
    })
}

/// The minibatches epoch `epoch` trains on, in order.
pub fn batch_for_epoch(cfg: &RunConfig, data: &[LabeledImage], epoch: usize) -> Result<Vec<Batch>> {
    Ok(epoch_batches(cfg, data, epoch)?
        .into_iter()
        .map(|(_, b)| b)
        .collect())
}
