//! Deterministic toy trainer.
//!
//! Momentum SGD on per-pixel cross-entropy at stage-2 resolution against
//! center-sampled nearest-neighbor downsampled labels. The stub encoder is
//! fixed; only decoder parameters train. Everything is a pure function of
//! the seed: batch order is a deterministic cycle and evaluation runs on a
//! held-out tail of the dataset.
//!
//! Held-out mIoU is measured at the decoder's native stage-2 output
//! resolution against the same center-sampled labels the loss uses. A
//! perfect predictor scores 1.0 there, so the number reflects what the
//! decoder learned rather than the fixed ~1px boundary bias that bilinear
//! logit upsampling adds at 8x (which caps full-resolution mIoU near 0.85
//! on this dataset no matter how good the model is).

use crate::autograd::Tape;
use crate::data::{derive_seed, stack_images, stack_labels, SyntheticSample};
use crate::decoder::{
    predict, stack_features, stage_dims, DecoderConfig, DecoderModel, StageFeatures, StubEncoder,
};
use crate::error::{Error, Result};
use crate::metrics::miou;
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy)]
pub struct TrainOptions {
    pub steps: usize,
    pub lr: f64,
    pub seed: u64,
    pub batch_size: usize,
    /// Evaluate held-out mIoU every this many steps (and at the last step).
    pub eval_every: usize,
    pub momentum: f64,
    /// Number of samples held out from the end of the dataset.
    pub holdout: usize,
}

impl TrainOptions {
    pub fn new(steps: usize, lr: f64, seed: u64) -> Self {
        TrainOptions {
            steps,
            lr,
            seed,
            batch_size: 4,
            eval_every: 100,
            momentum: 0.9,
            holdout: 8,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TrainRecord {
    pub step: usize,
    pub loss: f64,
    pub miou: Option<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct TrainLog {
    pub records: Vec<TrainRecord>,
}

impl TrainLog {
    pub fn best_miou(&self) -> Option<f64> {
        self.records
            .iter()
            .filter_map(|r| r.miou)
            .fold(None, |acc, v| Some(acc.map_or(v, |a: f64| a.max(v))))
    }

    pub fn final_miou(&self) -> Option<f64> {
        self.records.iter().rev().find_map(|r| r.miou)
    }

    pub fn mean_loss(&self, range: std::ops::Range<usize>) -> f64 {
        let slice: Vec<f64> = self
            .records
            .iter()
            .filter(|r| range.contains(&r.step))
            .map(|r| r.loss)
            .collect();
        slice.iter().sum::<f64>() / slice.len() as f64
    }

    /// Comma-separated trace: `step,loss,miou` with miou blank between evals.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,loss,miou\n");
        for r in &self.records {
            match r.miou {
                Some(m) => out.push_str(&format!("{},{:.6},{:.6}\n", r.step, r.loss, m)),
                None => out.push_str(&format!("{},{:.6},\n", r.step, r.loss)),
            }
        }
        out
    }
}

pub struct TrainedModel {
    pub encoder: StubEncoder<f32>,
    pub model: DecoderModel<f32>,
    pub log: TrainLog,
}

/// v = momentum * v + g; p -= lr * v, elementwise over every parameter.
fn sgd_momentum_step(
    params: &mut crate::autograd::ParamSet<f32>,
    velocity: &mut [Tensor<f32>],
    lr: f32,
    momentum: f32,
) {
    let ids: Vec<_> = params.ids().collect();
    for (slot, id) in ids.iter().enumerate() {
        {
            let grad = params.grad(*id).data().to_vec();
            let v = velocity[slot].data_mut();
            for (vi, gi) in v.iter_mut().zip(grad) {
                *vi = momentum * *vi + gi;
            }
        }
        let v = velocity[slot].data().to_vec();
        let value = params.value_data_mut(*id);
        for (pv, vi) in value.iter_mut().zip(v) {
            *pv -= lr * vi;
        }
    }
}

/// Center-sample labels down to the stage-2 grid.
fn downsample_labels(labels: &[u32], b: usize, h: usize, w: usize, h2: usize, w2: usize) -> Vec<u32> {
    let stride_h = h / h2;
    let stride_w = w / w2;
    let mut out = Vec::with_capacity(b * h2 * w2);
    for bi in 0..b {
        let base = bi * h * w;
        for i in 0..h2 {
            let y = i * stride_h + stride_h / 2;
            for j in 0..w2 {
                let x = j * stride_w + stride_w / 2;
                out.push(labels[base + y * w + x]);
            }
        }
    }
    out
}

fn encode_all(
    encoder: &StubEncoder<f32>,
    samples: &[SyntheticSample],
) -> Result<Vec<StageFeatures<f32>>> {
    samples
        .iter()
        .map(|s| {
            let img = stack_images(&[s])?;
            encoder.encode(&img)
        })
        .collect()
}

fn eval_miou(
    model: &DecoderModel<f32>,
    features: &[StageFeatures<f32>],
    samples: &[&SyntheticSample],
    num_classes: usize,
) -> Result<f64> {
    let parts: Vec<&StageFeatures<f32>> = features.iter().collect();
    let batch = stack_features(&parts)?;
    let mut tape = Tape::new();
    let logits = model.forward_logits(&mut tape, &batch)?;
    let (h, w) = (samples[0].height, samples[0].width);
    let (h2, w2) = stage_dims(2, h, w);
    let pred = predict(tape.value(logits), h2, w2)?;
    let gt_full = stack_labels(samples);
    let gt = downsample_labels(&gt_full, samples.len(), h, w, h2, w2);
    miou(&pred.data, &gt, num_classes)
}

/// Train a decoder on synthetic samples and return the model plus the full
/// metric trace. Deterministic given identical inputs and options.
pub fn train_toy(
    cfg: &DecoderConfig,
    dataset: &[SyntheticSample],
    opts: &TrainOptions,
) -> Result<TrainedModel> {
    if opts.steps == 0 {
        return Err(Error::Argument("steps must be >= 1".into()));
    }
    if dataset.is_empty() {
        return Err(Error::Argument("dataset is empty".into()));
    }
    if opts.holdout >= dataset.len() {
        return Err(Error::Argument(format!(
            "holdout {} must leave at least one training sample of {}",
            opts.holdout,
            dataset.len()
        )));
    }
    let (h, w) = (dataset[0].height, dataset[0].width);
    let num_classes = cfg.num_classes;
    let train_n = dataset.len() - opts.holdout;
    let batch_size = opts.batch_size.min(train_n).max(1);

    let encoder: StubEncoder<f32> =
        StubEncoder::new(cfg.stage_channels, derive_seed(opts.seed, 0));
    let mut model: DecoderModel<f32> =
        DecoderModel::build(*cfg, h, w, derive_seed(opts.seed, 1))?;

    // the encoder is fixed, so features are computed once per sample
    let features = encode_all(&encoder, dataset)?;
    let (train_feats, holdout_feats) = features.split_at(train_n);
    let holdout_samples: Vec<&SyntheticSample> = dataset[train_n..].iter().collect();

    let (h2, w2) = stage_dims(2, h, w);
    let mut velocity: Vec<Tensor<f32>> = model
        .params()
        .iter()
        .map(|(_, p)| Tensor::zeros(p.value.shape().to_vec()).expect("velocity shape"))
        .collect();

    let lr = opts.lr as f32;
    let momentum = opts.momentum as f32;
    let mut log = TrainLog::default();

    for step in 0..opts.steps {
        let start = (step * batch_size) % train_n;
        let idx: Vec<usize> = (0..batch_size).map(|j| (start + j) % train_n).collect();
        let parts: Vec<&StageFeatures<f32>> = idx.iter().map(|&i| &train_feats[i]).collect();
        let batch = stack_features(&parts)?;
        let gt: Vec<u32> = idx
            .iter()
            .flat_map(|&i| dataset[i].labels.iter().copied())
            .collect();
        let targets = downsample_labels(&gt, batch_size, h, w, h2, w2);

        let mut tape = Tape::new();
        let logits = model.forward_logits(&mut tape, &batch)?;
        let loss_id = tape.cross_entropy(logits, targets)?;
        let loss = tape.value(loss_id).item()?.to_f64();
        if !loss.is_finite() {
            return Err(Error::Training {
                step,
                message: format!("loss diverged to {loss}"),
            });
        }

        model.params_mut().zero_grads();
        tape.backward(loss_id)?;
        tape.accumulate_param_grads(model.params_mut());

        sgd_momentum_step(model.params_mut(), &mut velocity, lr, momentum);

        let evaluate =
            opts.holdout > 0 && ((step + 1) % opts.eval_every == 0 || step + 1 == opts.steps);
        let miou_value = if evaluate {
            Some(eval_miou(
                &model,
                holdout_feats,
                &holdout_samples,
                num_classes,
            )?)
        } else {
            None
        };
        log.records.push(TrainRecord {
            step,
            loss,
            miou: miou_value,
        });
    }

    Ok(TrainedModel {
        encoder,
        model,
        log,
    })
}
