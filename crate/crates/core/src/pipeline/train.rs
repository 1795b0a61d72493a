use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::{Model, PreparedCloud, TrainConfig};
use crate::error::{invalid, Error, Result};
use crate::mae::make_mask;

/// One row of the metrics CSV (`epoch,split,loss,accuracy`).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
    pub accuracy: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct PretrainReport {
    pub model: Model,
    /// Mean batch loss per optimizer step.
    pub loss_trace: Vec<f64>,
    pub metrics: Vec<EpochMetrics>,
}

#[derive(Clone, Debug)]
pub struct ClassifierReport {
    pub model: Model,
    pub metrics: Vec<EpochMetrics>,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
}

fn mix(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Sums per-sample gradients in sample order, scales by `1 / batch`, clips
/// the global norm and takes one SGD step. Returns the mean batch loss.
fn sgd_step(model: &mut Model, results: Vec<(f64, Model)>, config: &TrainConfig) -> Result<f64> {
    let n = results.len() as f64;
    let mut iter = results.into_iter();
    let (mut loss, mut grad) = iter.next().ok_or_else(|| invalid("empty batch"))?;
    for (l, g) in iter {
        loss += l;
        grad.add_scaled(1.0, &g);
    }
    let mut scale = 1.0 / n;
    if let Some(clip) = config.grad_clip {
        let norm = grad.norm() * scale;
        if norm > clip {
            scale *= clip / norm;
        }
    }
    model.add_scaled(-config.learning_rate * scale, &grad);
    if !model.is_finite() {
        return Err(Error::Diverged("non-finite parameters after an SGD step".into()));
    }
    Ok(loss / n)
}

fn check_model(model: &Model, config: &TrainConfig, n_classes: usize) -> Result<()> {
    let want = config.model_config(n_classes);
    if model.config.n_classes != n_classes {
        return Err(invalid(format!(
            "model has {} classes, dataset has {n_classes}",
            model.config.n_classes
        )));
    }
    if model.config != want {
        return Err(invalid("initial model does not match the training configuration"));
    }
    Ok(())
}

fn batches(n: usize, config: &TrainConfig, epoch: usize) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(config.seed, 0x5EED, epoch as u64)));
    idx.chunks(config.batch_size).map(<[usize]>::to_vec).collect()
}

/// Masked-autoencoder pretraining with the configured ordering and
/// token placement. Mask and within-segment shuffles are drawn per step
/// from the seed, so the loss trace is a pure function of the inputs.
pub fn pretrain_mae(
    data: &[PreparedCloud],
    config: &TrainConfig,
    n_classes: usize,
    init: Option<Model>,
) -> Result<PretrainReport> {
    config.validate()?;
    if data.is_empty() {
        return Err(invalid("pretrain: empty dataset"));
    }
    let mut model = match init {
        Some(m) => m,
        None => Model::new(&config.model_config(n_classes), config.seed)?,
    };
    check_model(&model, config, n_classes)?;
    let mut loss_trace = Vec::new();
    let mut metrics = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut epoch_loss = 0.0;
        let mut count = 0usize;
        for batch in batches(data.len(), config, epoch) {
            let results = batch
                .par_iter()
                .map(|&i| {
                    let sample = &data[i];
                    let step_seed = mix(config.seed, epoch as u64 + 1, i as u64);
                    let plan = make_mask(sample.n_centers(), config.mask_ratio, step_seed)?;
                    let orders = sample.orders(Some(step_seed))?;
                    let mut g = model.zeros_like();
                    let l = model.mae_loss(sample, &orders, &plan, config.tar_mode, Some(&mut g))?;
                    Ok((l, g))
                })
                .collect::<Result<Vec<_>>>()?;
            let k = results.len();
            let l = sgd_step(&mut model, results, config)?;
            loss_trace.push(l);
            epoch_loss += l * k as f64;
            count += k;
        }
        metrics.push(EpochMetrics {
            epoch: epoch + 1,
            split: "pretrain".into(),
            loss: epoch_loss / count as f64,
            accuracy: None,
        });
    }
    Ok(PretrainReport {
        model,
        loss_trace,
        metrics,
    })
}

/// Mean cross-entropy and accuracy with deterministic orders.
pub fn evaluate(model: &Model, data: &[PreparedCloud]) -> Result<(f64, f64)> {
    if data.is_empty() {
        return Ok((0.0, 0.0));
    }
    let rows = data
        .par_iter()
        .map(|s| {
            let (l, logits) = model.classifier_loss(s, &s.orders(None)?, None)?;
            Ok((l, argmax(&logits) == s.label))
        })
        .collect::<Result<Vec<_>>>()?;
    let n = rows.len() as f64;
    let loss = rows.iter().map(|r| r.0).sum::<f64>() / n;
    let acc = rows.iter().filter(|r| r.1).count() as f64 / n;
    Ok((loss, acc))
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Supervised training of the classification head and encoder. With `init`,
/// training starts from the given (e.g. pretrained) parameters.
pub fn train_classifier(
    train: &[PreparedCloud],
    test: &[PreparedCloud],
    n_classes: usize,
    config: &TrainConfig,
    init: Option<Model>,
) -> Result<ClassifierReport> {
    config.validate()?;
    if train.is_empty() {
        return Err(invalid("train: empty training set"));
    }
    if let Some(s) = train.iter().chain(test).find(|s| s.label >= n_classes) {
        return Err(invalid(format!("train: label {} with {n_classes} classes", s.label)));
    }
    let mut model = match init {
        Some(m) => m,
        None => Model::new(&config.model_config(n_classes), config.seed)?,
    };
    check_model(&model, config, n_classes)?;
    let mut metrics = Vec::with_capacity(2 * config.epochs);
    for epoch in 0..config.epochs {
        let mut epoch_loss = 0.0;
        let mut correct = 0usize;
        for batch in batches(train.len(), config, epoch) {
            let results = batch
                .par_iter()
                .map(|&i| {
                    let sample = &train[i];
                    let orders = sample.orders(Some(mix(config.seed, epoch as u64 + 1, i as u64)))?;
                    let mut g = model.zeros_like();
                    let (l, logits) = model.classifier_loss(sample, &orders, Some(&mut g))?;
                    Ok((l, g, argmax(&logits) == sample.label))
                })
                .collect::<Result<Vec<_>>>()?;
            correct += results.iter().filter(|r| r.2).count();
            let k = results.len() as f64;
            let l = sgd_step(&mut model, results.into_iter().map(|r| (r.0, r.1)).collect(), config)?;
            epoch_loss += l * k;
        }
        metrics.push(EpochMetrics {
            epoch: epoch + 1,
            split: "train".into(),
            loss: epoch_loss / train.len() as f64,
            accuracy: Some(correct as f64 / train.len() as f64),
        });
        if !test.is_empty() {
            let (loss, acc) = evaluate(&model, test)?;
            metrics.push(EpochMetrics {
                epoch: epoch + 1,
                split: "test".into(),
                loss,
                accuracy: Some(acc),
            });
        }
    }
    let train_accuracy = evaluate(&model, train)?.1;
    let test_accuracy = evaluate(&model, test)?.1;
    Ok(ClassifierReport {
        model,
        metrics,
        train_accuracy,
        test_accuracy,
    })
}
