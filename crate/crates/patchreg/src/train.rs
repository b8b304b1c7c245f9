//! Epoch loop with validation, best-checkpoint tracking and early stopping.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use patchreg_core::training::{apply_gradients, augment_pair, pair_gradients, pair_loss_value, Adam, Precision};
use patchreg_core::{Image, Model, Real};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::manifest::{load_manifest, load_pair, LoadedPair, Split};
use crate::thread_pool;

pub const LOG_HEADER: &str = "epoch,train_loss,val_loss,seconds";

/// File names written into the output directory.
pub mod artifacts {
    pub const CHECKPOINT: &str = "checkpoint.prck";
    pub const BEST: &str = "best.prck";
    pub const LOG: &str = "train_log.csv";
    pub const CONFIG: &str = "config.json";
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    /// True when patience ran out before `max_epochs`.
    pub stopped_early: bool,
    pub out_dir: PathBuf,
}

/// Best-so-far tracking. Training stops once more than `patience`
/// consecutive epochs fail to improve, so patience 0 stops after the first
/// non-improving epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct EarlyStop {
    pub patience: usize,
    pub best_epoch: usize,
    pub best: f64,
    since_best: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    Improved,
    Continue,
    Stop,
}

impl EarlyStop {
    pub fn new(patience: usize) -> Self {
        EarlyStop {
            patience,
            best_epoch: 0,
            best: f64::INFINITY,
            since_best: 0,
        }
    }

    pub fn update(&mut self, epoch: usize, val_loss: f64) -> Verdict {
        if val_loss < self.best {
            self.best = val_loss;
            self.best_epoch = epoch;
            self.since_best = 0;
            Verdict::Improved
        } else {
            self.since_best += 1;
            if self.since_best > self.patience {
                Verdict::Stop
            } else {
                Verdict::Continue
            }
        }
    }
}

struct Pair<T> {
    id: String,
    fix: Image<T>,
    mov: Image<T>,
}

fn cast_pairs<T: Real>(pairs: &[LoadedPair]) -> Vec<Pair<T>> {
    pairs
        .iter()
        .map(|p| Pair {
            id: p.pair_id.clone(),
            fix: p.fix.cast(),
            mov: p.mov.cast(),
        })
        .collect()
}

/// Loads the manifest named by `cfg` and trains. Validation falls back to the
/// training pairs (unaugmented) when the manifest has no `val` rows.
pub fn train(cfg: &RunConfig, out: &Path) -> Result<TrainOutcome> {
    cfg.validate()?;
    let manifest = cfg
        .manifest
        .as_deref()
        .ok_or_else(|| CliError::Usage("config names no manifest".into()))?;
    let records = load_manifest(manifest)?;
    let size = cfg.model.image_size;
    let load = |split: Split| -> Result<Vec<LoadedPair>> {
        records
            .iter()
            .filter(|r| r.split == split)
            .map(|r| load_pair(r, size))
            .collect()
    };
    let train_pairs = load(Split::Train)?;
    if train_pairs.is_empty() {
        return Err(CliError::Usage(format!(
            "manifest {} has no train pairs",
            manifest.display()
        )));
    }
    let mut val_pairs = load(Split::Val)?;
    if val_pairs.is_empty() {
        eprintln!("no val pairs; validating on the training pairs without augmentation");
        val_pairs = train_pairs.clone();
    }
    train_pairs_to(cfg, &train_pairs, &val_pairs, out)
}

/// Trains on already loaded pairs and writes all artifacts into `out`.
pub fn train_pairs_to(cfg: &RunConfig, train: &[LoadedPair], val: &[LoadedPair], out: &Path) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(CliError::Usage("training needs non-empty train and val sets".into()));
    }
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let resolved = cfg.to_json();
    eprintln!("resolved config:\n{resolved}");
    let cfg_path = out.join(artifacts::CONFIG);
    fs::write(&cfg_path, &resolved).map_err(|e| CliError::io(&cfg_path, e))?;
    match cfg.train.precision {
        Precision::F32 => run::<f32>(cfg, &cast_pairs(train), &cast_pairs(val), out),
        Precision::F64 => run::<f64>(cfg, &cast_pairs(train), &cast_pairs(val), out),
    }
}

fn run<T: Real>(cfg: &RunConfig, train: &[Pair<T>], val: &[Pair<T>], out: &Path) -> Result<TrainOutcome> {
    let tc = &cfg.train;
    let pool = thread_pool()?;
    let mut model = Model::<T>::new(&cfg.model)?;
    let mut opt = Adam::from_config(tc);
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    let augment = tc.augmentation.any_enabled();

    let log_path = out.join(artifacts::LOG);
    let mut log = fs::File::create(&log_path).map_err(|e| CliError::io(&log_path, e))?;
    let mut log_line = |line: &str| -> Result<()> {
        writeln!(log, "{line}")
            .and_then(|_| log.flush())
            .map_err(|e| CliError::io(&log_path, e))
    };
    log_line(LOG_HEADER)?;

    let mut epochs = Vec::new();
    let mut stop = EarlyStop::new(tc.patience);
    let mut stopped_early = false;
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=tc.max_epochs {
        let start = Instant::now();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(tc.batch_size) {
            // Augmentation draws stay on this thread so the random stream is
            // independent of the worker count.
            let inputs: Vec<(Image<T>, Image<T>)> = batch
                .iter()
                .map(|&k| {
                    let p = &train[k];
                    if augment {
                        augment_pair(&p.fix, &p.mov, &tc.augmentation, &mut rng).map_err(CliError::from)
                    } else {
                        Ok((p.fix.clone(), p.mov.clone()))
                    }
                })
                .collect::<Result<_>>()?;
            let per_pair = pool.install(|| {
                inputs
                    .par_iter()
                    .map(|(f, m)| pair_gradients(&model.net, &model.params, f, m, tc))
                    .collect::<patchreg_core::Result<Vec<_>>>()
            })?;
            if let Some(k) = per_pair.iter().position(|(t, _)| !t.total.is_finite()) {
                return Err(CliError::Diverged {
                    epoch,
                    pair_id: train[batch[k]].id.clone(),
                    loss: per_pair[k].0.total,
                });
            }
            let terms = apply_gradients(&mut model, &mut opt, &per_pair)?;
            loss_sum += terms.total * batch.len() as f64;
        }
        let train_loss = loss_sum / train.len() as f64;

        let val_losses = pool.install(|| {
            val.par_iter()
                .map(|p| pair_loss_value(&model.net, &model.params, &p.fix, &p.mov, tc).map(|t| t.total))
                .collect::<patchreg_core::Result<Vec<_>>>()
        })?;
        if let Some(k) = val_losses.iter().position(|l| !l.is_finite()) {
            return Err(CliError::Diverged {
                epoch,
                pair_id: val[k].id.clone(),
                loss: val_losses[k],
            });
        }
        let val_loss = val_losses.iter().sum::<f64>() / val.len() as f64;
        let seconds = start.elapsed().as_secs_f64();
        log_line(&format!("{epoch},{train_loss},{val_loss},{seconds:.3}"))?;
        eprintln!("epoch {epoch}: train {train_loss:.6} val {val_loss:.6} ({seconds:.1}s)");
        epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            seconds,
        });

        match stop.update(epoch, val_loss) {
            Verdict::Improved => Checkpoint::from_model(&model).save(&out.join(artifacts::BEST))?,
            Verdict::Continue => {}
            Verdict::Stop => {
                stopped_early = epoch < tc.max_epochs;
                break;
            }
        }
    }
    Checkpoint::from_model(&model).save(&out.join(artifacts::CHECKPOINT))?;
    if epochs.is_empty() {
        // max_epochs = 0: the untrained model is also the best one.
        Checkpoint::from_model(&model).save(&out.join(artifacts::BEST))?;
    }
    Ok(TrainOutcome {
        epochs,
        best_epoch: stop.best_epoch,
        best_val_loss: stop.best,
        stopped_early,
        out_dir: out.to_path_buf(),
    })
}

/// Parses a training log back into records.
pub fn read_log(path: &Path) -> Result<Vec<EpochRecord>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| CliError::integrity(path, e.to_string()))?;
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| CliError::integrity(path, e.to_string()))?;
        let num = |i: usize| -> Result<f64> {
            row.get(i)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| CliError::integrity(path, format!("bad log row {row:?}")))
        };
        out.push(EpochRecord {
            epoch: num(0)? as usize,
            train_loss: num(1)?,
            val_loss: num(2)?,
            seconds: num(3)?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_patience_stops_on_first_miss() {
        let mut s = EarlyStop::new(0);
        assert_eq!(s.update(1, 1.0), Verdict::Improved);
        assert_eq!(s.update(2, 0.5), Verdict::Improved);
        assert_eq!(s.update(3, 0.5), Verdict::Stop);
        assert_eq!((s.best_epoch, s.best), (2, 0.5));
    }

    #[test]
    fn patience_counts_consecutive_misses() {
        let mut s = EarlyStop::new(2);
        let v: Vec<_> = [3.0, 4.0, 4.0, 2.0, 5.0, 5.0, 5.0]
            .iter()
            .enumerate()
            .map(|(k, &l)| s.update(k + 1, l))
            .collect();
        use Verdict::*;
        assert_eq!(v, [Improved, Continue, Continue, Improved, Continue, Continue, Stop]);
        assert_eq!(s.best_epoch, 4);
    }
}
