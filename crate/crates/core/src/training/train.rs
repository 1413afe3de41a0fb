use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{kappa_loss_and_grad_with, kappa_loss_with, AdamState, GradientSet, LossAndGrad};
use crate::cnn::{save_checkpoint, CnnParams};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::fmt17;
use crate::poisson::PoissonSample;

/// Stream offset separating the shuffle RNG from parameter initialisation.
const SHUFFLE_STREAM: u64 = 0x5348_5546;

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    /// Samples whose gradients are averaged into one update.
    pub batch: usize,
    pub exec: Execution,
    /// Where `history.csv`, `epoch_<k>.ckpt` and `best.ckpt` go, if anywhere.
    pub out_dir: Option<PathBuf>,
    /// Starting point; `CnnParams::init(seed)` when absent.
    pub initial: Option<CnnParams>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 64,
            lr: 1e-3,
            seed: 0,
            batch: 1,
            exec: Execution::default(),
            out_dir: None,
            initial: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// `NaN` without a validation set.
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn train_losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.train_loss).collect()
    }

    pub fn val_losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.val_loss).collect()
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the epoch with the lowest validation loss (training loss
    /// without a validation set).
    pub best: CnnParams,
    pub best_epoch: usize,
    pub last: CnnParams,
    pub history: TrainHistory,
}

pub fn write_history_csv<W: Write>(history: &TrainHistory, mut out: W) -> std::io::Result<()> {
    writeln!(out, "epoch,train_loss,val_loss")?;
    for e in &history.epochs {
        writeln!(
            out,
            "{},{},{}",
            e.epoch,
            fmt17(e.train_loss),
            fmt17(e.val_loss)
        )?;
    }
    Ok(())
}

pub fn save_history_csv(history: &TrainHistory, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_history_csv(history, &mut w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_history_csv<R: BufRead>(input: R) -> Result<TrainHistory> {
    let mut epochs = Vec::new();
    for (k, line) in input.lines().enumerate() {
        let no = k + 1;
        let line = line.map_err(|e| Error::parse(no, e.to_string()))?;
        if no == 1 {
            if line.trim() != "epoch,train_loss,val_loss" {
                return Err(Error::parse(no, format!("bad header {line:?}")));
            }
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 3 {
            return Err(Error::parse(no, "expected 3 fields"));
        }
        let bad = |_| Error::parse(no, format!("bad record {line:?}"));
        epochs.push(EpochRecord {
            epoch: f[0].parse().map_err(|_| Error::parse(no, "bad epoch"))?,
            train_loss: f[1].parse().map_err(bad)?,
            val_loss: f[2].parse().map_err(bad)?,
        });
    }
    Ok(TrainHistory { epochs })
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Outer/inner execution: fan out across samples when there are several,
/// otherwise inside the sample.
fn split_exec(exec: Execution, items: usize) -> (Execution, Execution) {
    if items > 1 {
        (exec, Execution::Sequential)
    } else {
        (Execution::Sequential, exec)
    }
}

fn mean_loss(samples: &[PoissonSample], params: &CnnParams, exec: Execution) -> Result<f64> {
    let (outer, inner) = split_exec(exec, samples.len());
    let losses = outer
        .map(samples, |s| {
            kappa_loss_with(&s.matrix, params, inner).map_err(|e| e.in_sample(s.id))
        })
        .into_iter()
        .collect::<Result<Vec<f64>>>()?;
    Ok(mean(&losses))
}

/// Minimises the mean κ loss over `train_set` with Adam.
///
/// Each epoch visits the training samples in a seeded random order, in
/// consecutive batches of `config.batch`; gradients within a batch are
/// averaged in sample order, so a fixed seed reproduces the history exactly.
pub fn train(
    train_set: &[PoissonSample],
    val_set: &[PoissonSample],
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    if train_set.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    if config.batch == 0 || config.epochs == 0 {
        return Err(Error::InvalidArgument(
            "epochs and batch must be positive".into(),
        ));
    }
    if let Some(dir) = &config.out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut params = config
        .initial
        .clone()
        .unwrap_or_else(|| CnnParams::init(config.seed));
    let mut adam = AdamState::new(&params, config.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = TrainHistory::default();
    let mut best = (f64::INFINITY, params.clone(), 0usize);

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut losses = Vec::with_capacity(train_set.len());
        let mut skipped = 0usize;
        for chunk in order.chunks(config.batch) {
            let (outer, inner) = split_exec(config.exec, chunk.len());
            let results: Vec<Result<LossAndGrad>> = outer.map(chunk, |&k| {
                let s = &train_set[k];
                kappa_loss_and_grad_with(&s.matrix, &params, inner).map_err(|e| e.in_sample(s.id))
            });
            let mut sum = GradientSet::zeros_like(&params);
            let mut used = 0usize;
            for r in results {
                let r = r?;
                assert!(r.loss >= 1.0, "condition number below 1: {}", r.loss);
                losses.push(r.loss);
                if r.degenerate {
                    skipped += 1;
                } else {
                    sum.add_assign(&r.grads);
                    used += 1;
                }
            }
            if used > 0 {
                sum.scale(1.0 / used as f64);
                adam.step(&mut params, &sum)?;
            }
        }
        let train_loss = mean(&losses);
        let val_loss = if val_set.is_empty() {
            f64::NAN
        } else {
            mean_loss(val_set, &params, config.exec)?
        };
        history.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
        });
        log::info!("epoch {epoch}: train {train_loss:.6e} val {val_loss:.6e} (skipped {skipped})");

        let score = if val_set.is_empty() {
            train_loss
        } else {
            val_loss
        };
        let improved = score < best.0;
        if improved {
            best = (score, params.clone(), epoch);
        }
        if let Some(dir) = &config.out_dir {
            save_checkpoint(&params, dir.join(format!("epoch_{epoch}.ckpt")))?;
            if improved {
                save_checkpoint(&params, dir.join("best.ckpt"))?;
            }
            save_history_csv(&history, dir.join("history.csv"))?;
        }
    }
    Ok(TrainOutcome {
        best: best.1,
        best_epoch: best.2,
        last: params,
        history,
    })
}

pub fn load_history_csv(path: impl AsRef<Path>) -> Result<TrainHistory> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_history_csv(BufReader::new(file))
}
