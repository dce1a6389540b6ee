//! The optimization loop.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::checkpoint::save_checkpoint;
use super::config::TrainConfig;
use super::data::{make_batch, tiles, Frame, Split, Tile};
use super::eval::{argmax_channels, evaluate};
use crate::autodiff::{derive_seed, AdamState, Graph};
use crate::error::{Error, Result};
use crate::metrics::ConfusionCounts;
use crate::model::Model;
use crate::tensor::Element;

pub const METRICS_HEADER: &str = "step,epoch,split,loss,pixel_acc,miou,wall_ms";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "model.evck";
pub const LAST_GOOD_FILE: &str = "last_good.evck";

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub step: usize,
    pub epoch: usize,
    pub split: &'static str,
    pub loss: f64,
    pub pixel_acc: f64,
    pub miou: f64,
    pub wall_ms: u128,
}

impl LogRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{:.8},{:.6},{:.6},{}",
            self.step, self.epoch, self.split, self.loss, self.pixel_acc, self.miou, self.wall_ms
        )
    }
}

pub struct TrainRun<T> {
    pub model: Model<T>,
    pub log: Vec<LogRow>,
    pub steps: usize,
}

impl<T> TrainRun<T> {
    pub fn train_losses(&self) -> Vec<f64> {
        self.log.iter().filter(|r| r.split == "train").map(|r| r.loss).collect()
    }
}

struct MetricsSink {
    file: Option<BufWriter<fs::File>>,
}

impl MetricsSink {
    fn open(dir: Option<&Path>) -> Result<Self> {
        let file = match dir {
            Some(d) => {
                let mut f = BufWriter::new(fs::File::create(d.join(METRICS_FILE))?);
                writeln!(f, "{METRICS_HEADER}")?;
                Some(f)
            }
            None => None,
        };
        Ok(Self { file })
    }

    fn write(&mut self, row: &LogRow) -> Result<()> {
        if let Some(f) = self.file.as_mut() {
            writeln!(f, "{}", row.csv_line())?;
        }
        Ok(())
    }

    fn flush(&mut self) -> Result<()> {
        if let Some(f) = self.file.as_mut() {
            f.flush()?;
        }
        Ok(())
    }
}

/// Rejects datasets whose labels the model cannot represent.
pub fn check_labels(frames: &[Frame], num_classes: usize) -> Result<()> {
    if let Some(f) = frames.iter().find(|f| f.max_label() as usize >= num_classes) {
        return Err(Error::Dataset(format!(
            "scene {} has label {} but the model has {num_classes} classes",
            f.scene,
            f.max_label()
        )));
    }
    Ok(())
}

/// Mean cross-entropy over tiles with dropout off.
pub fn mean_loss<T: Element>(model: &Model<T>, tiles: &[Tile], batch: usize) -> Result<f64> {
    let size = model.config.input_height;
    let mut total = 0.0;
    for chunk in tiles.chunks(batch.max(1)) {
        let refs: Vec<&Tile> = chunk.iter().collect();
        let b = make_batch::<T>(&refs, size)?;
        total += model.loss(&b.rgb, Some(&b.event), &b.targets, false, 0)? * chunk.len() as f64;
    }
    Ok(total / tiles.len().max(1) as f64)
}

/// Trains `cfg.kind` on the training scenes of `split`. When `out_dir` is
/// given, the metrics log, the config and checkpoints are written there.
pub fn train<T: Element>(
    cfg: &TrainConfig,
    frames: &[Frame],
    split: &Split,
    out_dir: Option<&Path>,
) -> Result<TrainRun<T>> {
    cfg.validate()?;
    check_labels(frames, cfg.model.num_classes)?;
    let size = cfg.model.input_height;
    if cfg.model.input_width != size {
        return Err(Error::InvalidArgument("training needs a square model input".into()));
    }
    let train_frames = Split::select(frames, &split.train);
    if train_frames.is_empty() {
        return Err(Error::Dataset("no training frames".into()));
    }
    let train_tiles = tiles(&train_frames, size)?;
    let val_frames = Split::select(frames, &split.val);
    let val_tiles = tiles(&val_frames, size)?;

    if let Some(d) = out_dir {
        fs::create_dir_all(d)?;
        fs::write(d.join("config.txt"), cfg.to_text())?;
    }
    let mut sink = MetricsSink::open(out_dir)?;
    let started = Instant::now();
    let wall = |cfg: &TrainConfig| if cfg.log_wall_time { started.elapsed().as_millis() } else { 0 };

    let mut model = Model::<T>::new(cfg.kind, cfg.model.clone(), derive_seed(cfg.seed, 1))?;
    let mut adam = AdamState::new(cfg.lr);
    let mut log = Vec::new();
    let mut step = 0usize;
    let classes = cfg.model.num_classes;
    let plane = size * size;
    let mut order: Vec<usize> = (0..train_tiles.len()).collect();

    'epochs: for epoch in 0..cfg.epochs {
        order.sort_unstable();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 2 + epoch as u64)));
        for chunk in order.chunks(cfg.batch_size) {
            let refs: Vec<&Tile> = chunk.iter().map(|&i| &train_tiles[i]).collect();
            let batch = make_batch::<T>(&refs, size)?;
            let mut g = Graph::new();
            let rgb = g.constant(batch.rgb);
            let event = cfg.kind.uses_events().then(|| g.constant(batch.event));
            let pass_seed = derive_seed(cfg.seed ^ 0xD50F_0000, step as u64);
            let out = model.forward(&mut g, rgb, event, true, pass_seed)?;
            let loss = g.cross_entropy(out.logits, &batch.targets)?;
            let loss_value = g.value(loss).data()[0].as_f64();
            if !loss_value.is_finite() {
                if let Some(d) = out_dir {
                    save_checkpoint(&d.join(LAST_GOOD_FILE), &model)?;
                }
                sink.flush()?;
                return Err(Error::NonFiniteLoss {
                    step,
                    loss: loss_value,
                });
            }
            let mut counts = ConfusionCounts::new(classes);
            let logits = g.value(out.logits).data();
            for (i, _) in chunk.iter().enumerate() {
                let pred = argmax_channels(&logits[i * classes * plane..(i + 1) * classes * plane], classes, plane);
                counts.add_grids(&pred, &batch.targets[i * plane..(i + 1) * plane])?;
            }
            g.backward(loss)?;
            model.params.collect_grads(&g, &out.params);
            drop(g);
            adam.step(&mut model.params)?;
            step += 1;
            let row = LogRow {
                step,
                epoch,
                split: "train",
                loss: loss_value,
                pixel_acc: counts.pixel_accuracy(),
                miou: counts.miou(true),
                wall_ms: wall(cfg),
            };
            log::debug!("{}", row.csv_line());
            sink.write(&row)?;
            log.push(row);
            if cfg.max_steps > 0 && step >= cfg.max_steps {
                finish_epoch(cfg, &model, epoch, step, &val_frames, &val_tiles, &mut log, &mut sink, &wall, out_dir, true)?;
                break 'epochs;
            }
        }
        let last = epoch + 1 == cfg.epochs;
        finish_epoch(cfg, &model, epoch, step, &val_frames, &val_tiles, &mut log, &mut sink, &wall, out_dir, last)?;
    }
    if let Some(d) = out_dir {
        save_checkpoint(&d.join(CHECKPOINT_FILE), &model)?;
    }
    sink.flush()?;
    Ok(TrainRun { model, log, steps: step })
}

#[allow(clippy::too_many_arguments)]
fn finish_epoch<T: Element>(
    cfg: &TrainConfig,
    model: &Model<T>,
    epoch: usize,
    step: usize,
    val_frames: &[&Frame],
    val_tiles: &[Tile],
    log: &mut Vec<LogRow>,
    sink: &mut MetricsSink,
    wall: &dyn Fn(&TrainConfig) -> u128,
    out_dir: Option<&Path>,
    last: bool,
) -> Result<()> {
    let due = |interval: usize| interval > 0 && ((epoch + 1) % interval == 0 || last);
    if due(cfg.val_interval) && !val_frames.is_empty() {
        let report = evaluate(model, val_frames, None)?;
        let agg = report.aggregate.expect("non-empty validation set");
        let row = LogRow {
            step,
            epoch,
            split: "val",
            loss: mean_loss(model, val_tiles, cfg.batch_size)?,
            pixel_acc: agg.pixel_accuracy(),
            miou: agg.miou(),
            wall_ms: wall(cfg),
        };
        log::info!(
            "epoch {epoch} step {step}: val loss {:.4} pixel acc {:.4} miou {:.4}",
            row.loss,
            row.pixel_acc,
            row.miou
        );
        sink.write(&row)?;
        log.push(row);
    }
    if let Some(d) = out_dir {
        if due(cfg.checkpoint_interval) {
            save_checkpoint(&d.join(CHECKPOINT_FILE), model)?;
        }
    }
    sink.flush()
}
