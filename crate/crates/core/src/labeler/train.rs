use std::io::Write;

use rand::seq::SliceRandom;
use serde::Serialize;

use super::{argmax_rows, Head, LabelScheme, Model, ModelConfig, EVENT};
use crate::autodiff::{softmax_slice, Adam, AdamConfig, Graph, Mode, Rng};
use crate::error::{Error, Result};
use crate::evalkit::{eval_bin_level, eval_binary_event, Aggregation};
use crate::ingest::{StreamExample, Vocab};

pub const CURVE_HEADER: &str = "epoch,train_loss,dev_f1";

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_f1: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Model holding the parameters of the best development epoch.
    pub model: Model,
    pub curve: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_dev_f1: f64,
}

/// Trains with one Adam update per stream, visiting streams in a seeded
/// shuffled order each epoch.
///
/// After every epoch the development streams are scored (bin-level micro F1
/// for the BIO head, binary event-level micro F1 for the binary head) and the
/// parameters of the best epoch so far are kept. An epoch improves on the
/// best when its F1 is higher, or equal with a lower development
/// cross-entropy; the latter keeps the early all-`O` plateau, where F1 is
/// stuck at zero, from exhausting the patience. Training stops once
/// `patience` consecutive epochs fail to improve, or after `epochs`. With no
/// development streams the training streams are scored instead.
pub fn train(
    config: ModelConfig,
    scheme: LabelScheme,
    vocab: Vocab,
    train: &[StreamExample],
    dev: &[StreamExample],
) -> Result<TrainOutcome> {
    train_with_progress(config, scheme, vocab, train, dev, |_| {})
}

/// [`train`], calling `on_epoch` after each epoch is scored.
pub fn train_with_progress(
    config: ModelConfig,
    scheme: LabelScheme,
    vocab: Vocab,
    train: &[StreamExample],
    dev: &[StreamExample],
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    if train.is_empty() {
        return Err(Error::config("training set is empty"));
    }
    let mut model = Model::new(config, scheme, vocab, train)?;
    let config = model.config.clone();
    let rng = Rng::new(config.seed);
    let mut shuffle_rng = rng.substream("shuffle");
    let mut dropout_rng = rng.substream("dropout");
    let mut adam = Adam::new(
        AdamConfig {
            lr: config.lr,
            ..AdamConfig::default()
        },
        &model.params,
    );
    let class_weights = config
        .class_weighting
        .then(|| inverse_frequency(train.iter().map(|s| model.targets(s)), model.num_classes()));
    let dev = if dev.is_empty() { train } else { dev };

    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut curve = Vec::new();
    let mut best = (0, f64::NEG_INFINITY, f64::INFINITY, model.params.clone());
    let mut stale = 0;
    for epoch in 1..=config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        for &i in &order {
            let stream = &train[i];
            let mut g = Graph::new();
            let loss = model.loss(
                &mut g,
                &model.params,
                stream,
                Mode::Train,
                &mut dropout_rng,
                class_weights.as_deref(),
            )?;
            let value = g.value(loss).item();
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss {
                    stream: stream.stream_id.clone(),
                });
            }
            total += value;
            g.backward(loss)?;
            adam.step(&mut model.params, &g.param_grads());
        }
        let (dev_f1, dev_loss) = dev_score(&model, dev)?;
        let record = EpochRecord {
            epoch,
            train_loss: total / train.len() as f64,
            dev_f1,
        };
        on_epoch(&record);
        curve.push(record);
        if dev_f1 > best.1 || (dev_f1 == best.1 && dev_loss < best.2) {
            best = (epoch, dev_f1, dev_loss, model.params.clone());
            stale = 0;
        } else {
            stale += 1;
        }
        if stale >= config.patience {
            break;
        }
    }
    let (best_epoch, best_dev_f1, _, params) = best;
    model.params = params;
    Ok(TrainOutcome {
        model,
        curve,
        best_epoch,
        best_dev_f1,
    })
}

/// Model-selection F1 on `streams` and the mean per-bin cross-entropy.
pub(crate) fn dev_score(model: &Model, streams: &[StreamExample]) -> Result<(f64, f64)> {
    let mut classes = Vec::with_capacity(streams.len());
    let (mut nll, mut bins) = (0.0, 0usize);
    for s in streams {
        let logits = model.logits(s)?;
        let c = model.num_classes();
        for (row, &gold) in logits.data().chunks(c).zip(&model.targets(s)) {
            nll -= softmax_slice(row)[gold].ln();
        }
        bins += s.bins.len();
        classes.push(argmax_rows(&logits));
    }
    let report = match model.config.head {
        Head::Bio => {
            let gold: Vec<Vec<usize>> = streams.iter().map(|s| s.gold_labels.clone()).collect();
            eval_bin_level(&gold, &classes, Aggregation::Micro)?
        }
        Head::Binary => {
            let gold: Vec<_> = streams.iter().map(|s| s.gold_spans.clone()).collect();
            let pred: Vec<Vec<bool>> = classes
                .iter()
                .map(|c| c.iter().map(|&k| k == EVENT).collect())
                .collect();
            eval_binary_event(&gold, &pred, Aggregation::Micro)?
        }
    };
    Ok((report.f1, nll / bins.max(1) as f64))
}

/// `total / (classes * count)` per class; unseen classes get weight 1.
fn inverse_frequency(targets: impl Iterator<Item = Vec<usize>>, classes: usize) -> Vec<f64> {
    let mut counts = vec![0usize; classes];
    for t in targets {
        for c in t {
            counts[c] += 1;
        }
    }
    let total: usize = counts.iter().sum();
    counts
        .iter()
        .map(|&n| {
            if n == 0 {
                1.0
            } else {
                total as f64 / (classes * n) as f64
            }
        })
        .collect()
}

pub fn write_learning_curve(mut w: impl Write, curve: &[EpochRecord]) -> Result<()> {
    writeln!(w, "{CURVE_HEADER}")?;
    for r in curve {
        writeln!(w, "{},{},{}", r.epoch, r.train_loss, r.dev_f1)?;
    }
    Ok(())
}
