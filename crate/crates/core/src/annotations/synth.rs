//! Seeded synthetic corpora with known phase structure.
//!
//! Each frame is `mean[phase] + drift · (t / T) · u + noise · N(0, I)`, with
//! one random unit direction per phase (two phases may share one to form an
//! ambiguous pair) and a corpus-wide drift direction `u`.
//!
//! Missing phases come off the ends of the workflow. Around a pivot phase
//! `m` (the least droppable one) a leading chain drops phases `0..=i` and a
//! trailing chain drops `i..P`; the chain thresholds are running minima of
//! the per-phase probabilities so each phase's marginal drop rate equals its
//! requested probability whenever the probabilities decrease toward `m`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::AnnotationTrack;
use crate::error::{Error, Result};
use crate::features::FeatureSequence;
use crate::model::PhaseTaxonomy;
use crate::numerics::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub taxonomy: PhaseTaxonomy,
    /// Mean length of each phase in seconds.
    pub mean_durations: Vec<f64>,
    /// Relative half-width of the uniform duration jitter.
    #[serde(default = "default_jitter")]
    pub duration_jitter: f64,
    /// Probability that each phase is absent from a video.
    pub missing_probs: Vec<f64>,
    pub videos: usize,
    pub feature_dim: usize,
    /// Norm of each phase mean.
    pub separation: f64,
    /// Standard deviation of per-frame noise.
    pub noise: f64,
    /// Norm of the drift reached at the end of a video.
    #[serde(default)]
    pub drift: f64,
    /// Two phases that share one mean.
    #[serde(default)]
    pub ambiguous_pair: Option<[usize; 2]>,
    #[serde(default)]
    pub seed: u64,
}

fn default_jitter() -> f64 {
    0.2
}

impl SynthSpec {
    /// Five-phase ACL workflow: mean durations 160/500/614/514/205 s and drop
    /// rates 8/27, 2/27, 1/27, 2/27, 11/27.
    pub fn acl27(videos: usize, seed: u64) -> Self {
        SynthSpec {
            taxonomy: PhaseTaxonomy::acl27(),
            mean_durations: vec![160.0, 500.0, 614.0, 514.0, 205.0],
            duration_jitter: 0.2,
            missing_probs: [8.0, 2.0, 1.0, 2.0, 11.0]
                .iter()
                .map(|v| v / 27.0)
                .collect(),
            videos,
            feature_dim: 32,
            separation: 4.0,
            noise: 1.0,
            drift: 2.0,
            ambiguous_pair: None,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.taxonomy.len();
        let fail = |m: String| Err(Error::Config(format!("synthetic corpus: {m}")));
        if self.mean_durations.len() != p || self.missing_probs.len() != p {
            return fail(format!("need {p} durations and missing probabilities"));
        }
        if self
            .mean_durations
            .iter()
            .any(|&d| !(d >= 1.0 && d.is_finite()))
        {
            return fail("mean durations must be at least 1 s".into());
        }
        if !(0.0..1.0).contains(&self.duration_jitter) {
            return fail("duration_jitter must lie in [0, 1)".into());
        }
        if self.missing_probs.iter().any(|q| !(0.0..=1.0).contains(q)) {
            return fail("missing probabilities must lie in [0, 1]".into());
        }
        if self.missing_probs.iter().all(|&q| q >= 1.0) {
            return fail("every phase is always dropped".into());
        }
        if self.videos == 0 || self.feature_dim == 0 {
            return fail("videos and feature_dim must be positive".into());
        }
        for v in [self.separation, self.noise, self.drift] {
            if !(v >= 0.0 && v.is_finite()) {
                return fail("separation, noise and drift must be finite and non-negative".into());
            }
        }
        if let Some([a, b]) = self.ambiguous_pair {
            if a == b || a >= p || b >= p {
                return fail(format!("invalid ambiguous pair [{a}, {b}]"));
            }
        }
        Ok(())
    }

    /// Least droppable phase, ties broken toward the middle of the workflow.
    fn pivot(&self) -> usize {
        let q = &self.missing_probs;
        let lo = q.iter().cloned().fold(f64::INFINITY, f64::min);
        let centre = (q.len() - 1) as f64 / 2.0;
        (0..q.len())
            .filter(|&i| q[i] == lo)
            .min_by(|&a, &b| {
                let (da, db) = ((a as f64 - centre).abs(), (b as f64 - centre).abs());
                da.partial_cmp(&db).expect("finite")
            })
            .expect("non-empty")
    }

    /// Which phases a video keeps, from two uniform draws.
    fn present(&self, u: f64, v: f64) -> Vec<bool> {
        let q = &self.missing_probs;
        let p = q.len();
        let m = self.pivot();
        let mut keep = vec![true; p];
        let mut running = f64::INFINITY;
        for i in 0..m {
            running = running.min(q[i]);
            if u < running {
                keep[i] = false;
            }
        }
        let mut running = f64::INFINITY;
        for i in (m + 1..p).rev() {
            running = running.min(q[i]);
            if v < running {
                keep[i] = false;
            }
        }
        if u < q[m] / 2.0 || v < q[m] / 2.0 {
            keep[m] = false;
        }
        // A dropped pivot takes its whole chain with it.
        if u < q[m] / 2.0 {
            keep[..m].iter_mut().for_each(|k| *k = false);
        }
        if v < q[m] / 2.0 {
            keep[m + 1..].iter_mut().for_each(|k| *k = false);
        }
        keep
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthVideo {
    pub features: FeatureSequence,
    pub track: AnnotationTrack,
}

fn unit_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-9 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Generates `spec.videos` videos named `vid001`, `vid002`, ...
pub fn synth_generate(spec: &SynthSpec) -> Result<Vec<SynthVideo>> {
    spec.validate()?;
    let p = spec.taxonomy.len();
    let d = spec.feature_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut means: Vec<Vec<f64>> = (0..p)
        .map(|_| {
            unit_vector(&mut rng, d)
                .into_iter()
                .map(|x| x * spec.separation)
                .collect()
        })
        .collect();
    if let Some([a, b]) = spec.ambiguous_pair {
        means[b] = means[a].clone();
    }
    let drift_dir = unit_vector(&mut rng, d);

    let width = spec.videos.to_string().len().max(3);
    let mut out = Vec::with_capacity(spec.videos);
    for k in 0..spec.videos {
        let keep = loop {
            let keep = spec.present(rng.gen(), rng.gen());
            if keep.iter().any(|&x| x) {
                break keep;
            }
        };
        let mut blocks = Vec::new();
        for (i, &kept) in keep.iter().enumerate() {
            if kept {
                let scale = 1.0 + spec.duration_jitter * rng.gen_range(-1.0..=1.0);
                let len = (spec.mean_durations[i] * scale).round().max(1.0) as usize;
                blocks.push((i, len));
            }
        }
        let id = format!("vid{:0width$}", k + 1);
        let track = AnnotationTrack::from_blocks(&id, &blocks, p)?;
        let t_len = track.len();
        let mut data = Vec::with_capacity(t_len * d);
        for (t, &phase) in track.labels().iter().enumerate() {
            let progress = t as f64 / t_len as f64;
            for j in 0..d {
                let e: f64 = StandardNormal.sample(&mut rng);
                let v = means[phase][j] + spec.drift * progress * drift_dir[j] + spec.noise * e;
                data.push(v as f32);
            }
        }
        let features = FeatureSequence::new(&id, Tensor::matrix(t_len, d, data))?;
        out.push(SynthVideo { features, track });
    }
    Ok(out)
}
