//! Training loop, dice history, detection F1 and count accuracy.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::annotation::{PatchPair, Point};
use crate::error::{Error, Result};
use crate::net::NablaNet;
use crate::nn::{adam_step, check_finite, dice_counts, dice_from_counts, mix_seed};
use crate::tensor::Tensor;

pub const DEFAULT_MATCH_RADIUS: f64 = 20.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub dilation_k: usize,
    /// Stop after this many optimiser steps.
    pub max_steps: Option<usize>,
    /// Stop once an epoch's running train dice reaches this value.
    pub stop_at_train_dice: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 500,
            batch_size: 32,
            learning_rate: 3e-4,
            seed: 0,
            dilation_k: 13,
            max_steps: None,
            stop_at_train_dice: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument(format!(
                "epochs and batch size must be positive, got {} and {}",
                self.epochs, self.batch_size
            )));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.max_steps == Some(0) {
            return Err(Error::InvalidArgument("max_steps must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Optimiser steps completed at the end of the epoch.
    pub steps: usize,
    pub mean_loss: f64,
    /// Dice of the epoch's batch predictions, accumulated over all pixels.
    pub train_dice: f64,
    pub val_dice: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Weights at the best validation dice (train dice when there is no validation set).
    pub best: NablaNet,
    pub best_epoch: usize,
    pub last: NablaNet,
    pub history: Vec<EpochRecord>,
    /// Loss of the very first batch.
    pub first_loss: f64,
    pub steps: usize,
}

fn batch_of(pairs: &[&PatchPair]) -> Result<(Tensor, Tensor)> {
    let inputs: Vec<Tensor> = pairs.iter().map(|p| p.input_tensor()).collect();
    let targets: Vec<Tensor> = pairs.iter().map(|p| p.target_tensor()).collect();
    Ok((Tensor::stack(&inputs)?, Tensor::stack(&targets)?))
}

fn bools(t: &Tensor) -> Vec<bool> {
    t.data().iter().map(|&v| v > 0.5).collect()
}

/// Dice of `net` over `pairs`, counted over all pixels jointly.
pub fn dataset_dice(net: &NablaNet, pairs: &[PatchPair], batch_size: usize) -> Result<f64> {
    let (mut inter, mut na, mut nb) = (0, 0, 0);
    for chunk in pairs.chunks(batch_size.max(1)) {
        let refs: Vec<&PatchPair> = chunk.iter().collect();
        let (x, t) = batch_of(&refs)?;
        let (i, a, b) = dice_counts(&bools(&net.forward(&x)?), &bools(&t));
        inter += i;
        na += a;
        nb += b;
    }
    Ok(dice_from_counts(inter, na, nb))
}

/// Seeded per-epoch shuffle, Adam on mean BCE, dice recorded each epoch.
pub fn train(
    initial: NablaNet,
    train_set: &[PatchPair],
    val_set: &[PatchPair],
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::InsufficientData("training set is empty".into()));
    }
    let mut net = initial;
    let mut history = Vec::new();
    let mut best: Option<(f64, usize, NablaNet)> = None;
    let mut first_loss = None;
    let mut steps = 0usize;
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    'epochs: for epoch in 1..=config.epochs {
        order.sort_unstable();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(config.seed, epoch as u64)));
        let (mut inter, mut na, mut nb) = (0, 0, 0);
        let (mut loss_sum, mut batches) = (0.0, 0usize);
        let mut hit_step_cap = false;
        for chunk in order.chunks(config.batch_size) {
            let refs: Vec<&PatchPair> = chunk.iter().map(|&i| &train_set[i]).collect();
            let (x, t) = batch_of(&refs)?;
            let bp = net.backprop(&x, &t)?;
            check_finite(bp.loss, steps)?;
            first_loss.get_or_insert(bp.loss);
            adam_step(&mut net.params, &bp.grads, config.learning_rate)?;
            steps += 1;
            loss_sum += bp.loss;
            batches += 1;
            let (i, a, b) = dice_counts(&bools(&bp.pred), &bools(&t));
            inter += i;
            na += a;
            nb += b;
            if config.max_steps.is_some_and(|m| steps >= m) {
                hit_step_cap = true;
                break;
            }
        }
        let train_dice = dice_from_counts(inter, na, nb);
        let val_dice = if val_set.is_empty() {
            None
        } else {
            Some(dataset_dice(&net, val_set, config.batch_size)?)
        };
        let record = EpochRecord {
            epoch,
            steps,
            mean_loss: loss_sum / batches as f64,
            train_dice,
            val_dice,
        };
        log::info!(
            "epoch {epoch} steps {steps} loss {:.5} train dice {:.4} val dice {}",
            record.mean_loss,
            train_dice,
            val_dice.map_or("-".to_string(), |v| format!("{v:.4}"))
        );
        history.push(record);
        let score = val_dice.unwrap_or(train_dice);
        if best.as_ref().is_none_or(|(s, _, _)| score > *s) {
            best = Some((score, epoch, net.clone()));
        }
        if hit_step_cap || config.stop_at_train_dice.is_some_and(|d| train_dice >= d) {
            break 'epochs;
        }
    }

    let (_, best_epoch, best) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        best,
        best_epoch,
        last: net,
        history,
        first_loss: first_loss.expect("at least one batch ran"),
        steps,
    })
}

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,train_dice,val_dice\n");
    for r in history {
        let val = r.val_dice.map_or(String::new(), |v| format!("{v:.6}"));
        s.push_str(&format!("{},{:.6},{val}\n", r.epoch, r.train_dice));
    }
    s
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionScore {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl DetectionScore {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |num: usize, den: usize, other_empty: bool| {
            if den == 0 {
                if other_empty {
                    1.0
                } else {
                    0.0
                }
            } else {
                num as f64 / den as f64
            }
        };
        let precision = ratio(tp, tp + fp, fn_ == 0);
        let recall = ratio(tp, tp + fn_, fp == 0);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        DetectionScore {
            true_positives: tp,
            false_positives: fp,
            false_negatives: fn_,
            precision,
            recall,
            f1,
        }
    }

    /// Pools counts across images.
    pub fn combine(scores: &[DetectionScore]) -> Self {
        let sum = |f: fn(&DetectionScore) -> usize| scores.iter().map(f).sum();
        Self::from_counts(
            sum(|s| s.true_positives),
            sum(|s| s.false_positives),
            sum(|s| s.false_negatives),
        )
    }
}

/// Greedy one-to-one matching by ascending distance; a pair matches when
/// its distance is at most `radius`. `predicted` holds one entry per
/// counted cell, so a multi-cell region appears several times.
pub fn detection_f1(predicted: &[(f64, f64)], manual: &[Point], radius: f64) -> DetectionScore {
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (i, &(px, py)) in predicted.iter().enumerate() {
        for (j, m) in manual.iter().enumerate() {
            let d = ((px - m.x as f64).powi(2) + (py - m.y as f64).powi(2)).sqrt();
            if d <= radius {
                pairs.push((d, i, j));
            }
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut used_p = vec![false; predicted.len()];
    let mut used_m = vec![false; manual.len()];
    let mut tp = 0;
    for (_, i, j) in pairs {
        if !used_p[i] && !used_m[j] {
            used_p[i] = true;
            used_m[j] = true;
            tp += 1;
        }
    }
    DetectionScore::from_counts(tp, predicted.len() - tp, manual.len() - tp)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountRecord {
    pub image_id: String,
    pub manual: u64,
    pub predicted: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CountAccuracy {
    /// `1 − |pred − manual| / manual`; `None` where manual is zero.
    pub per_image: Vec<(String, Option<f64>)>,
    pub mean_per_image: Option<f64>,
    /// `1 − |Σpred − Σmanual| / Σmanual`.
    pub aggregate: Option<f64>,
    pub excluded: Vec<String>,
}

pub fn count_accuracy(records: &[CountRecord]) -> Result<CountAccuracy> {
    if records.is_empty() {
        return Err(Error::InsufficientData("count accuracy needs at least one record".into()));
    }
    let rel = |p: u64, m: u64| 1.0 - (p as f64 - m as f64).abs() / m as f64;
    let mut excluded = Vec::new();
    let per_image: Vec<(String, Option<f64>)> = records
        .iter()
        .map(|r| {
            if r.manual == 0 {
                log::warn!("{}: manual count is zero, excluded from per-image accuracy", r.image_id);
                excluded.push(r.image_id.clone());
                (r.image_id.clone(), None)
            } else {
                (r.image_id.clone(), Some(rel(r.predicted, r.manual)))
            }
        })
        .collect();
    let scored: Vec<f64> = per_image.iter().filter_map(|(_, a)| *a).collect();
    let mean_per_image = (!scored.is_empty()).then(|| scored.iter().sum::<f64>() / scored.len() as f64);
    let (sp, sm) = records
        .iter()
        .fold((0, 0), |(p, m), r| (p + r.predicted, m + r.manual));
    Ok(CountAccuracy {
        per_image,
        mean_per_image,
        aggregate: (sm > 0).then(|| rel(sp, sm)),
        excluded,
    })
}

/// Everything an evaluation run reports, serialised as one JSON document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub counts: Vec<CountRecord>,
    pub accuracy: CountAccuracy,
    pub detection_per_image: Vec<(String, DetectionScore)>,
    pub detection: DetectionScore,
    pub match_radius: f64,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_detection() {
        let manual = [Point::new(10, 10), Point::new(50, 50)];
        let pred = [(10.0, 10.0), (50.0, 51.0)];
        assert_eq!(detection_f1(&pred, &manual, 20.0).f1, 1.0);
    }

    #[test]
    fn no_predictions() {
        let s = detection_f1(&[], &[Point::new(1, 1)], 20.0);
        assert_eq!((s.recall, s.f1), (0.0, 0.0));
        assert_eq!(detection_f1(&[], &[], 20.0).f1, 1.0);
    }

    #[test]
    fn radius_is_inclusive_boundary() {
        let manual = [Point::new(0, 0)];
        assert_eq!(detection_f1(&[(25.0, 0.0)], &manual, 20.0).f1, 0.0);
        assert_eq!(detection_f1(&[(20.0, 0.0)], &manual, 20.0).f1, 1.0);
    }

    #[test]
    fn greedy_takes_nearest_first() {
        let manual = [Point::new(0, 0), Point::new(30, 0)];
        let pred = [(16.0, 0.0), (2.0, 0.0)];
        let s = detection_f1(&pred, &manual, 20.0);
        assert_eq!(s.true_positives, 2);
    }

    #[test]
    fn published_rows() {
        let acc = count_accuracy(&[CountRecord {
            image_id: "h3".into(),
            manual: 43,
            predicted: 41,
        }])
        .unwrap();
        assert!((acc.per_image[0].1.unwrap() - 0.9535).abs() < 5e-5);
        let acc = count_accuracy(&[CountRecord {
            image_id: "n1".into(),
            manual: 104,
            predicted: 104,
        }])
        .unwrap();
        assert_eq!(acc.aggregate, Some(1.0));
    }

    #[test]
    fn zero_manual_excluded_but_summed() {
        let acc = count_accuracy(&[
            CountRecord {
                image_id: "a".into(),
                manual: 0,
                predicted: 2,
            },
            CountRecord {
                image_id: "b".into(),
                manual: 10,
                predicted: 10,
            },
        ])
        .unwrap();
        assert_eq!(acc.excluded, vec!["a".to_string()]);
        assert_eq!(acc.mean_per_image, Some(1.0));
        assert!((acc.aggregate.unwrap() - 0.8).abs() < 1e-12);
        assert!(count_accuracy(&[]).is_err());
    }

    #[test]
    fn csv_layout() {
        let h = vec![EpochRecord {
            epoch: 1,
            steps: 3,
            mean_loss: 0.5,
            train_dice: 0.25,
            val_dice: None,
        }];
        assert_eq!(history_csv(&h), "epoch,train_dice,val_dice\n1,0.250000,\n");
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
