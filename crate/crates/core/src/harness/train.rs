//! Mini-batch training with early stopping on validation macro-F1.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rayon::prelude::*;

use crate::data::Dataset;
use crate::error::{invalid, Error, Result};
use crate::harness::metrics::{compute_metrics, MetricsReport};
use crate::harness::optim::{cosine_lr, Adam, AdamConfig, EarlyStopper, StopDecision};
use crate::model::{Diagnostics, MedMamba};
use crate::params::Rng;
use crate::tensor::{Real, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub seeds: Vec<u64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 5e-4,
            weight_decay: 1e-5,
            max_epochs: 100,
            patience: 10,
            batch_size: 32,
            seeds: vec![0, 1, 2, 3, 4],
        }
    }
}

impl TrainConfig {
    pub const KEYS: [&'static str; 6] = ["lr", "weight_decay", "max_epochs", "patience", "batch_size", "seeds"];

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight_decay must be non-negative");
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be at least 1");
        }
        if self.patience == 0 || self.patience > self.max_epochs {
            return bad("patience must be between 1 and max_epochs");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required");
        }
        Ok(())
    }

    pub fn is_key(key: &str) -> bool {
        Self::KEYS.contains(&key)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.trim().parse().map_err(|_| Error::Config(format!("invalid value '{v}' for {key}")))
        }
        match key {
            "lr" => self.lr = num(key, value)?,
            "weight_decay" => self.weight_decay = num(key, value)?,
            "max_epochs" => self.max_epochs = num(key, value)?,
            "patience" => self.patience = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "seeds" => self.seeds = parse_seeds(value)?,
            _ => return Err(Error::Config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        vec![
            ("lr".into(), self.lr.to_string()),
            ("weight_decay".into(), self.weight_decay.to_string()),
            ("max_epochs".into(), self.max_epochs.to_string()),
            ("patience".into(), self.patience.to_string()),
            ("batch_size".into(), self.batch_size.to_string()),
            ("seeds".into(), seeds.join(",")),
        ]
    }
}

/// `"3"`, `"0,1,2"` or an inclusive range `"0..4"`.
pub fn parse_seeds(value: &str) -> Result<Vec<u64>> {
    let err = || Error::Config(format!("invalid seed list '{value}'"));
    let value = value.trim();
    if let Some((a, b)) = value.split_once("..") {
        let (a, b): (u64, u64) = (a.trim().parse().map_err(|_| err())?, b.trim().parse().map_err(|_| err())?);
        if a > b {
            return Err(err());
        }
        return Ok((a..=b).collect());
    }
    let seeds = value
        .split(',')
        .map(|s| s.trim().parse().map_err(|_| err()))
        .collect::<Result<Vec<u64>>>()?;
    if seeds.is_empty() {
        return Err(err());
    }
    Ok(seeds)
}

/// Deterministic stream derived from a seed and two counters.
pub fn derive_rng(seed: u64, a: u64, b: u64) -> Rng {
    let mut z = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    Rng::seed_from_u64(z ^ (z >> 31))
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_f1: f64,
    pub val_accuracy: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_f1: f64,
    pub stopped_early: bool,
}

/// Validation summary consumed by the early stopper.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ValScore {
    pub f1: f64,
    pub loss: f64,
    pub accuracy: f64,
}

/// Inputs cast to the model precision.
pub fn inputs<F: Real>(ds: &Dataset) -> Vec<Tensor<F>> {
    ds.samples().iter().map(|s| s.x.cast()).collect()
}

/// Predictions of a model over a dataset.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub probs: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    /// Mean cross-entropy.
    pub loss: f64,
    pub metrics: MetricsReport,
    /// Per layer, the adjacency averaged over samples.
    pub mean_adjacency: Vec<Option<Tensor<f64>>>,
    /// Per layer, the view weights averaged over samples.
    pub mean_alpha: Vec<Tensor<f64>>,
}

fn log_softmax_f64(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    logits.iter().map(|v| v - lse).collect()
}

/// Runs the model on every sample (in parallel) and scores the predictions.
pub fn evaluate_dataset<F: Real>(model: &MedMamba<F>, ds: &Dataset) -> Result<Evaluation> {
    let xs = inputs::<F>(ds);
    evaluate_inputs(model, &xs, &ds.labels())
}

pub fn evaluate_inputs<F: Real>(model: &MedMamba<F>, xs: &[Tensor<F>], labels: &[usize]) -> Result<Evaluation> {
    if xs.is_empty() {
        return Err(invalid("cannot evaluate an empty dataset"));
    }
    let outs: Vec<(Vec<f64>, Diagnostics<F>)> = xs
        .par_iter()
        .map(|x| {
            let (logits, diag) = model.evaluate(x)?;
            let logits: Vec<f64> = logits.data().iter().map(|v| v.as_f64()).collect();
            if logits.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("logits"));
            }
            Ok((logits, diag))
        })
        .collect::<Result<_>>()?;
    let n = outs.len() as f64;
    let mut loss = 0.0;
    let mut probs = Vec::with_capacity(outs.len());
    for ((logits, _), &label) in outs.iter().zip(labels) {
        let lp = log_softmax_f64(logits);
        loss -= lp[label];
        probs.push(lp.iter().map(|v| v.exp()).collect::<Vec<f64>>());
    }
    let layers = outs[0].1.alphas.len();
    let mean_of = |get: &dyn Fn(&Diagnostics<F>) -> Option<Tensor<F>>| -> Option<Tensor<f64>> {
        let mut acc: Option<Tensor<f64>> = None;
        for (_, d) in &outs {
            let t: Tensor<f64> = get(d)?.cast();
            acc = Some(match acc {
                Some(mut a) => {
                    a.data_mut().iter_mut().zip(t.data()).for_each(|(x, y)| *x += y);
                    a
                }
                None => t,
            });
        }
        acc.map(|a| a.map(|v| v / n))
    };
    let mean_adjacency = (0..layers).map(|l| mean_of(&|d| d.adjacency[l].clone())).collect();
    let mean_alpha = (0..layers)
        .map(|l| mean_of(&|d| Some(d.alphas[l].clone())).expect("alphas present"))
        .collect();
    Ok(Evaluation {
        metrics: compute_metrics(&probs, labels)?,
        probs,
        labels: labels.to_vec(),
        loss: loss / n,
        mean_adjacency,
        mean_alpha,
    })
}

/// Trains with validation on `val`, restoring the best parameters at the end.
pub fn train<F: Real>(model: &mut MedMamba<F>, train_set: &Dataset, val: &Dataset, cfg: &TrainConfig, seed: u64) -> Result<TrainOutcome> {
    let xs = inputs::<F>(val);
    let labels = val.labels();
    train_with(model, train_set, cfg, seed, |m| {
        let e = evaluate_inputs(m, &xs, &labels)?;
        Ok(ValScore {
            f1: e.metrics.f1,
            loss: e.loss,
            accuracy: e.metrics.accuracy,
        })
    })
}

/// Training loop with a caller-supplied validation score.
pub fn train_with<F, V>(model: &mut MedMamba<F>, train_set: &Dataset, cfg: &TrainConfig, seed: u64, mut validate: V) -> Result<TrainOutcome>
where
    F: Real,
    V: FnMut(&MedMamba<F>) -> Result<ValScore>,
{
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(invalid("training set is empty"));
    }
    let xs = inputs::<F>(train_set);
    let labels = train_set.labels();
    let mut adam = Adam::new(&model.store, AdamConfig::default());
    let mut stopper = EarlyStopper::new(cfg.patience);
    let mut best = model.store.clone();
    let mut epochs = Vec::new();
    let mut stopped_early = false;
    let mut order: Vec<usize> = (0..xs.len()).collect();
    for epoch in 0..cfg.max_epochs {
        let start = Instant::now();
        let lr = cosine_lr(epoch, cfg.max_epochs, cfg.lr);
        order.sort_unstable();
        order.shuffle(&mut derive_rng(seed, epoch as u64, u64::MAX));
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let m: &MedMamba<F> = model;
            let results: Vec<(f64, Vec<Tensor<F>>)> = batch
                .par_iter()
                .map(|&i| {
                    let mut rng = derive_rng(seed, epoch as u64, i as u64);
                    m.loss_and_gradients(&xs[i], labels[i], Some(&mut rng))
                })
                .collect::<Result<_>>()?;
            let scale = 1.0 / batch.len() as f64;
            let mut grads: Vec<Vec<f64>> = model.store.ids().map(|id| vec![0.0; model.store.get(id).numel()]).collect();
            for (loss, g) in &results {
                if !loss.is_finite() {
                    return Err(Error::NonFinite("training loss"));
                }
                total += loss;
                for (acc, t) in grads.iter_mut().zip(g) {
                    for (a, v) in acc.iter_mut().zip(t.data()) {
                        *a += v.as_f64() * scale;
                    }
                }
            }
            if grads.iter().flatten().any(|g| !g.is_finite()) {
                return Err(Error::NonFinite("gradients"));
            }
            adam.step(&mut model.store, &grads, lr, cfg.weight_decay);
        }
        if !model.store.all_finite() {
            return Err(Error::NonFinite("parameters"));
        }
        let score = validate(model)?;
        let decision = stopper.update(epoch, score.f1);
        if decision == StopDecision::Improved {
            best = model.store.clone();
        }
        epochs.push(EpochRecord {
            epoch,
            lr,
            train_loss: total / xs.len() as f64,
            val_loss: score.loss,
            val_f1: score.f1,
            val_accuracy: score.accuracy,
            seconds: start.elapsed().as_secs_f64(),
        });
        if decision == StopDecision::Stop {
            stopped_early = true;
            break;
        }
    }
    model.store = best;
    Ok(TrainOutcome {
        epochs,
        best_epoch: stopper.best_epoch(),
        best_val_f1: stopper.best().unwrap_or(0.0),
        stopped_early,
    })
}
