use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{loss_graph, lr_at, Adam, LossConfig, LossParts, OptimConfig};
use crate::annotations::AnnotationTrack;
use crate::error::{Error, Result};
use crate::eval::{metrics, ConfusionMatrix};
use crate::features::FeatureSequence;
use crate::model::{Model, Prediction};
use crate::numerics::{Graph, Real};
use crate::parallel::{self, Execution};
use crate::spi::SpiTrack;

/// Samples reduced sequentially inside one work item; fixed so the summation
/// order does not depend on the worker count.
const CHUNK: usize = 4;

/// Features with per-second labels and optional SPI targets.
#[derive(Clone, Debug)]
pub struct LabeledVideo {
    pub features: FeatureSequence,
    pub labels: Vec<usize>,
    pub spi: Option<Vec<f64>>,
}

impl LabeledVideo {
    pub fn new(
        features: FeatureSequence,
        track: &AnnotationTrack,
        spi: Option<&SpiTrack>,
    ) -> Result<Self> {
        let mismatch = |m: String| Error::Track {
            video_id: track.video_id().to_string(),
            message: m,
        };
        if features.video_id() != track.video_id() {
            return Err(mismatch(format!(
                "features belong to {}",
                features.video_id()
            )));
        }
        if features.len() != track.len() {
            return Err(mismatch(format!(
                "{} feature frames for {} labels",
                features.len(),
                track.len()
            )));
        }
        if let Some(s) = spi {
            if s.values.len() != track.len() {
                return Err(mismatch(format!(
                    "{} SPI targets for {} labels",
                    s.values.len(),
                    track.len()
                )));
            }
        }
        Ok(LabeledVideo {
            features,
            labels: track.labels().to_vec(),
            spi: spi.map(|s| s.values.clone()),
        })
    }

    pub fn video_id(&self) -> &str {
        self.features.video_id()
    }
}

/// One training window: frame `t` of video `video`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Sample {
    pub video: usize,
    pub t: usize,
}

/// Batch-mean loss and gradient.
#[derive(Clone, Debug)]
pub struct BatchGradient {
    pub loss: LossParts,
    pub grads: Vec<f32>,
}

/// Loss of the window at `t` and its gradient with respect to `params`
/// (laid out as `model.params()`).
pub fn loss_and_gradient<T: Real>(
    model: &Model,
    params: &[T],
    video: &LabeledVideo,
    t: usize,
    loss: &LossConfig,
) -> Result<(LossParts, Vec<T>)> {
    let mut grads = vec![T::zero(); params.len()];
    let parts = accumulate(model, params, video, t, loss, &mut grads, true)?;
    Ok((parts, grads))
}

/// Loss of the window at `t` evaluated in precision `T`.
pub fn sample_loss<T: Real>(
    model: &Model,
    params: &[T],
    video: &LabeledVideo,
    t: usize,
    loss: &LossConfig,
) -> Result<LossParts> {
    accumulate(model, params, video, t, loss, &mut [], false)
}

fn accumulate<T: Real>(
    model: &Model,
    params: &[T],
    video: &LabeledVideo,
    t: usize,
    loss: &LossConfig,
    grads: &mut [T],
    backward: bool,
) -> Result<LossParts> {
    let layout = model.layout();
    let mut g = Graph::<T>::new();
    let vars = layout.bind(&mut g, params, backward);
    let heads = model.heads_at(&mut g, &vars, &video.features, t)?;
    let target = video.spi.as_ref().map(|s| s[t]);
    let lv = loss_graph(&mut g, heads, video.labels[t], target, loss)?;
    let parts = LossParts {
        total: g.value(lv.total).item().as_f64(),
        ce: g.value(lv.ce).item().as_f64(),
        mae: lv.mae.map_or(0.0, |m| g.value(m).item().as_f64()),
    };
    if backward {
        let gr = g.backward(lv.total)?;
        for (entry, &v) in layout.entries().iter().zip(&vars) {
            if let Some(src) = gr.slice(v) {
                for (dst, &s) in grads[entry.range()].iter_mut().zip(src) {
                    *dst += s;
                }
            }
        }
    } else if !parts.total.is_finite() {
        return Err(Error::NonFinite(format!("loss at t={t}")));
    }
    Ok(parts)
}

/// Mean loss and gradient over `samples`, reduced in sample order.
pub fn batch_gradient(
    model: &Model,
    videos: &[LabeledVideo],
    samples: &[Sample],
    loss: &LossConfig,
    exec: Execution,
) -> Result<BatchGradient> {
    if samples.is_empty() {
        return Err(Error::Empty("empty batch".into()));
    }
    let chunks: Vec<&[Sample]> = samples.chunks(CHUNK).collect();
    let n = model.param_count();
    let partial = parallel::map(
        &chunks,
        exec,
        |chunk| -> Result<(Vec<LossParts>, Vec<f32>)> {
            let mut grads = vec![0.0f32; n];
            let mut parts = Vec::with_capacity(chunk.len());
            for s in chunk.iter() {
                let v = videos
                    .get(s.video)
                    .ok_or_else(|| Error::OutOfRange(format!("video {}", s.video)))?;
                parts.push(accumulate(
                    model,
                    model.params(),
                    v,
                    s.t,
                    loss,
                    &mut grads,
                    true,
                )?);
            }
            Ok((parts, grads))
        },
    );
    let mut grads = vec![0.0f32; n];
    let mut parts = Vec::with_capacity(samples.len());
    for r in partial {
        let (p, g) = r?;
        parts.extend(p);
        for (a, b) in grads.iter_mut().zip(&g) {
            *a += b;
        }
    }
    let scale = 1.0 / samples.len() as f32;
    grads.iter_mut().for_each(|g| *g *= scale);
    Ok(BatchGradient {
        loss: LossParts::mean(&parts),
        grads,
    })
}

/// Metrics of one pass over evaluation videos.
#[derive(Clone, Debug)]
pub struct EvalSummary {
    pub predictions: Vec<Vec<Prediction>>,
    pub accuracy: f64,
    pub macro_jaccard: f64,
    pub spi_error: Option<f64>,
}

pub fn evaluate(model: &Model, videos: &[LabeledVideo], exec: Execution) -> Result<EvalSummary> {
    if videos.is_empty() {
        return Err(Error::Empty("no evaluation videos".into()));
    }
    let predictions = parallel::map(videos, exec, |v| model.predict_video(&v.features))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let mut cm = ConfusionMatrix::new(model.config().phases);
    let (mut abs_sum, mut count, mut have_spi) = (0.0f64, 0usize, true);
    for (v, preds) in videos.iter().zip(&predictions) {
        for (p, &y) in preds.iter().zip(&v.labels) {
            cm.record(y, p.phase())?;
        }
        match &v.spi {
            Some(target) => {
                for (p, &s) in preds.iter().zip(target) {
                    match p.spi_hat {
                        Some(e) => abs_sum += (e as f64 - s).abs(),
                        None => have_spi = false,
                    }
                    count += 1;
                }
            }
            None => have_spi = false,
        }
    }
    let m = metrics(&cm)?;
    Ok(EvalSummary {
        predictions,
        accuracy: m.accuracy,
        macro_jaccard: m.macro_jaccard,
        spi_error: (have_spi && count > 0).then(|| 100.0 * abs_sum / count as f64),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub eval_acc: f64,
    pub eval_jaccard: f64,
    pub spi_err: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct FitOptions {
    pub loss: LossConfig,
    pub optim: OptimConfig,
    pub seed: u64,
    pub exec: Execution,
}

#[derive(Clone, Debug)]
pub struct FitResult {
    /// Parameters after the last epoch.
    pub model: Model,
    /// Parameters after the epoch with the highest evaluation accuracy
    /// (earliest on ties).
    pub best: Model,
    pub best_epoch: usize,
    pub log: Vec<EpochLog>,
}

/// Trains `model` on every frame of `train`, evaluating on `eval` after each
/// epoch. Window order is reshuffled per epoch from `seed`.
pub fn fit(
    mut model: Model,
    train: &[LabeledVideo],
    eval: &[LabeledVideo],
    opts: &FitOptions,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<FitResult> {
    opts.loss.validate()?;
    opts.optim.validate()?;
    if train.is_empty() || eval.is_empty() {
        return Err(Error::Split(
            "training and evaluation sets must be non-empty".into(),
        ));
    }
    if opts.loss.spi_enabled {
        if !model.config().spi_head {
            return Err(Error::Config(
                "SPI loss enabled but the model has no SPI head".into(),
            ));
        }
        if let Some(v) = train.iter().find(|v| v.spi.is_none()) {
            return Err(Error::Config(format!(
                "no SPI targets for {}",
                v.video_id()
            )));
        }
    }
    let mut samples: Vec<Sample> = train
        .iter()
        .enumerate()
        .flat_map(|(video, v)| (0..v.labels.len()).map(move |t| Sample { video, t }))
        .collect();
    let mut adam = Adam::new(model.param_count(), &opts.optim);
    let mut log = Vec::with_capacity(opts.optim.epochs);
    let mut best: Option<(f64, usize, Model)> = None;
    for epoch in 0..opts.optim.epochs {
        let lr = lr_at(epoch, &opts.optim);
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        rng.set_stream(epoch as u64 + 1);
        samples.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in samples.chunks(opts.optim.batch_size) {
            let bg = batch_gradient(&model, train, batch, &opts.loss, opts.exec)?;
            adam.step(model.params_mut(), &bg.grads, lr)?;
            loss_sum += bg.loss.total * batch.len() as f64;
        }
        let summary = evaluate(&model, eval, opts.exec)?;
        let entry = EpochLog {
            epoch,
            lr,
            train_loss: loss_sum / samples.len() as f64,
            eval_acc: summary.accuracy,
            eval_jaccard: summary.macro_jaccard,
            spi_err: if opts.loss.spi_enabled {
                summary.spi_error
            } else {
                None
            },
        };
        if !entry.train_loss.is_finite() {
            return Err(Error::NonFinite(format!("training loss in epoch {epoch}")));
        }
        if best
            .as_ref()
            .is_none_or(|(acc, _, _)| entry.eval_acc > *acc)
        {
            best = Some((entry.eval_acc, epoch, model.clone()));
        }
        on_epoch(&entry);
        log.push(entry);
    }
    let (_, best_epoch, best) = best.expect("at least one epoch");
    Ok(FitResult {
        model,
        best,
        best_epoch,
        log,
    })
}

pub fn log_to_csv(log: &[EpochLog]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "epoch",
        "lr",
        "train_loss",
        "eval_acc",
        "eval_jaccard",
        "spi_err",
    ])
    .expect("in-memory write");
    for e in log {
        w.write_record([
            e.epoch.to_string(),
            e.lr.to_string(),
            e.train_loss.to_string(),
            e.eval_acc.to_string(),
            e.eval_jaccard.to_string(),
            e.spi_err.map_or_else(String::new, |v| v.to_string()),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
}

pub fn write_log_csv(path: impl AsRef<Path>, log: &[EpochLog]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, log_to_csv(log)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotations::{synth_generate, SynthSpec};
    use crate::model::{ModelConfig, PhaseTaxonomy};
    use crate::spi::{build_spi_targets, transition_table, SpiMode};

    fn corpus(videos: usize) -> Vec<LabeledVideo> {
        let spec = SynthSpec {
            taxonomy: PhaseTaxonomy::new(["a", "b", "c"]).unwrap(),
            mean_durations: vec![4.0, 5.0, 3.0],
            duration_jitter: 0.2,
            missing_probs: vec![0.0; 3],
            videos,
            feature_dim: 6,
            separation: 3.0,
            noise: 0.5,
            drift: 1.0,
            ambiguous_pair: None,
            seed: 1,
        };
        let data = synth_generate(&spec).unwrap();
        let tracks: Vec<_> = data.iter().map(|v| v.track.clone()).collect();
        let table = transition_table(&tracks, &spec.taxonomy).unwrap();
        data.into_iter()
            .map(|v| {
                let s = build_spi_targets(&v.track, &table, SpiMode::Scaled).unwrap();
                LabeledVideo::new(v.features, &v.track, Some(&s)).unwrap()
            })
            .collect()
    }

    fn model() -> Model {
        let cfg = ModelConfig {
            input_dim: 6,
            d_model: 8,
            heads: 2,
            branch_lengths: vec![4],
            phases: 3,
            ..ModelConfig::default()
        };
        Model::build(cfg, 3).unwrap()
    }

    fn opts(epochs: usize) -> FitOptions {
        FitOptions {
            loss: LossConfig::default(),
            optim: OptimConfig {
                lr0: 1e-2,
                epochs,
                batch_size: 5,
                ..OptimConfig::default()
            },
            seed: 9,
            exec: Execution::Parallel,
        }
    }

    #[test]
    fn smoke_two_epochs() {
        let data = corpus(2);
        let mut seen = 0;
        let r = fit(model(), &data[..1], &data[1..], &opts(2), |_| seen += 1).unwrap();
        assert_eq!(r.log.len(), 2);
        assert_eq!(seen, 2);
        assert!(r.log.iter().all(|e| e.spi_err.is_some()));
        let csv = log_to_csv(&r.log);
        assert!(csv.starts_with("epoch,lr,train_loss,eval_acc,eval_jaccard,spi_err\n"));
        assert_eq!(csv.lines().count(), 3);
    }

    #[test]
    fn seeded_runs_repeat() {
        let data = corpus(3);
        let a = fit(model(), &data[..2], &data[2..], &opts(2), |_| {}).unwrap();
        let b = fit(model(), &data[..2], &data[2..], &opts(2), |_| {}).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(a.model.params(), b.model.params());
    }

    #[test]
    fn sequential_and_parallel_gradients_match() {
        let data = corpus(2);
        let m = model();
        let samples: Vec<Sample> = (0..9).map(|t| Sample { video: t % 2, t }).collect();
        let a = batch_gradient(
            &m,
            &data,
            &samples,
            &LossConfig::default(),
            Execution::Sequential,
        )
        .unwrap();
        let b = batch_gradient(
            &m,
            &data,
            &samples,
            &LossConfig::default(),
            Execution::Parallel,
        )
        .unwrap();
        assert_eq!(a.grads, b.grads);
        assert_eq!(a.loss, b.loss);
    }

    #[test]
    fn loss_decreases_with_training() {
        let data = corpus(3);
        let r = fit(model(), &data[..2], &data[2..], &opts(6), |_| {}).unwrap();
        assert!(r.log[5].train_loss < r.log[0].train_loss);
    }

    #[test]
    fn disabling_spi_keeps_classifier_gradient() {
        let data = corpus(1);
        let m = model();
        let off = LossConfig {
            lambda: 0.5,
            spi_enabled: false,
        };
        let ce_only = LossConfig {
            lambda: 1.0,
            spi_enabled: true,
        };
        let (_, a) = loss_and_gradient(&m, m.params(), &data[0], 5, &off).unwrap();
        let (_, b) = loss_and_gradient(&m, m.params(), &data[0], 5, &ce_only).unwrap();
        let head = m.layout().entry("phase_head.weight").unwrap().range();
        assert_eq!(&a[head.clone()], &b[head]);
        let spi = m.layout().entry("spi_head.weight").unwrap().range();
        assert!(a[spi].iter().all(|g| *g == 0.0));
    }

    #[test]
    fn empty_split_is_rejected() {
        let data = corpus(1);
        assert!(matches!(
            fit(model(), &data, &[], &opts(1), |_| {}),
            Err(Error::Split(_))
        ));
    }
}
