//! The phase/progress predictor: refiner, transformer branches over sliding
//! windows, concatenation fuse, and phase and SPI heads.

mod checkpoint;
pub(crate) mod layers;
pub(crate) mod params;
mod taxonomy;

pub use checkpoint::{
    fnv1a64, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use params::{ParamEntry, ParamLayout};
pub use taxonomy::PhaseTaxonomy;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{
    window, window_indices, FeatureSequence, Refiner, RefinerConfig, TemporalEncoder,
};
use crate::numerics::{Graph, Real, Tensor, Var};
use layers::linear;
use params::Linear;

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Per-frame feature dimension.
    pub input_dim: usize,
    pub d_model: usize,
    /// Attention heads in each branch layer.
    pub heads: usize,
    /// Encoder layers per branch.
    pub layers: usize,
    /// Window length of each branch, in frames.
    pub branch_lengths: Vec<usize>,
    /// Number of phases.
    pub phases: usize,
    pub spi_head: bool,
    pub refiner_enabled: bool,
    pub refiner: RefinerConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_dim: 2048,
            d_model: 128,
            heads: 4,
            layers: 1,
            branch_lengths: vec![80],
            phases: 5,
            spi_head: true,
            refiner_enabled: true,
            refiner: RefinerConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.input_dim == 0 || self.d_model == 0 {
            return fail("input_dim and d_model must be positive".into());
        }
        if self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
            return fail(format!(
                "d_model {} not divisible by heads {}",
                self.d_model, self.heads
            ));
        }
        if self.refiner.heads == 0 || !self.d_model.is_multiple_of(self.refiner.heads) {
            return fail(format!(
                "d_model {} not divisible by refiner heads {}",
                self.d_model, self.refiner.heads
            ));
        }
        if self.layers == 0 {
            return fail("layers must be at least 1".into());
        }
        if self.branch_lengths.is_empty() || self.branch_lengths.contains(&0) {
            return fail(format!("invalid branch lengths {:?}", self.branch_lengths));
        }
        let mut sorted = self.branch_lengths.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.branch_lengths.len() {
            return fail(format!(
                "branch lengths must differ, got {:?}",
                self.branch_lengths
            ));
        }
        if self.phases < 2 {
            return fail(format!("need at least 2 phases, got {}", self.phases));
        }
        if self.refiner.context == Some(0) {
            return fail("refiner context must be at least 1".into());
        }
        Ok(())
    }

    /// Longest branch window.
    pub fn max_window(&self) -> usize {
        self.branch_lengths.iter().copied().max().unwrap_or(1)
    }

    /// Frames the refiner attends over.
    pub fn refiner_context(&self) -> usize {
        self.refiner.context.unwrap_or_else(|| self.max_window())
    }
}

/// `PE[pos, 2j] = sin(pos / 10000^(2j/d))`, `PE[pos, 2j+1] = cos(same)`.
pub fn positional_encoding(n: usize, d: usize) -> Tensor<f32> {
    let mut data = Vec::with_capacity(n * d);
    for pos in 0..n {
        for i in 0..d {
            let freq = 10000f64.powf((i - i % 2) as f64 / d as f64);
            let angle = pos as f64 / freq;
            data.push(if i % 2 == 0 { angle.sin() } else { angle.cos() } as f32);
        }
    }
    Tensor::matrix(n, d, data)
}

/// Online output for one second of a recording.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub video_id: String,
    pub t: usize,
    pub probs: Vec<f32>,
    pub spi_hat: Option<f32>,
}

impl Prediction {
    /// Most probable phase; ties go to the lower index.
    pub fn phase(&self) -> usize {
        argmax(&self.probs)
    }
}

pub(crate) fn argmax(v: &[f32]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug)]
struct Network {
    refiner: Refiner,
    branches: Vec<TemporalEncoder>,
    fuse: Linear,
    phase: Linear,
    spi: Option<Linear>,
}

/// Graph outputs for one window.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Heads {
    /// 1 × P probabilities.
    pub probs: Var,
    /// 1 × 1 progress estimate.
    pub spi: Option<Var>,
}

/// Parameters together with the layout that interprets them.
#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    layout: ParamLayout,
    net: Network,
    params: Vec<f32>,
}

impl Model {
    fn skeleton(config: &ModelConfig) -> Result<(ParamLayout, Network)> {
        config.validate()?;
        let mut layout = ParamLayout::default();
        let d = config.d_model;
        let refiner = Refiner::register(
            &mut layout,
            config.input_dim,
            d,
            config.refiner.heads,
            config.refiner_enabled.then(|| config.refiner_context()),
        );
        let branches = config
            .branch_lengths
            .iter()
            .enumerate()
            .map(|(b, &n)| {
                TemporalEncoder::register(
                    &mut layout,
                    &format!("branch{b}"),
                    n,
                    d,
                    config.heads,
                    config.layers,
                )
            })
            .collect::<Vec<_>>();
        let fuse = layout.linear("fuse", d * branches.len(), d);
        let phase = layout.linear("phase_head", d, config.phases);
        let spi = config.spi_head.then(|| layout.linear("spi_head", d, 1));
        Ok((
            layout,
            Network {
                refiner,
                branches,
                fuse,
                phase,
                spi,
            },
        ))
    }

    /// Fresh model with parameters drawn from `seed`.
    pub fn build(config: ModelConfig, seed: u64) -> Result<Model> {
        let (layout, net) = Self::skeleton(&config)?;
        let params = layout.initialize(seed);
        Ok(Model {
            config,
            layout,
            net,
            params,
        })
    }

    /// Model with explicit parameters, e.g. from a checkpoint.
    pub fn from_parts(config: ModelConfig, params: Vec<f32>) -> Result<Model> {
        let (layout, net) = Self::skeleton(&config)?;
        if params.len() != layout.len() {
            return Err(Error::Length(format!(
                "config needs {} parameters, got {}",
                layout.len(),
                params.len()
            )));
        }
        Ok(Model {
            config,
            layout,
            net,
            params,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn params(&self) -> &[f32] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f32] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// First raw frame that influences the prediction at `t`.
    pub fn receptive_start(&self, t: usize) -> usize {
        (t + 1).saturating_sub(self.config.max_window() + self.net.refiner.halo())
    }

    fn check_input(&self, seq: &FeatureSequence) -> Result<()> {
        if seq.dim() != self.config.input_dim {
            return Err(Error::shape(
                "features",
                format!(
                    "{} has dim {}, model expects {}",
                    seq.video_id(),
                    seq.dim(),
                    self.config.input_dim
                ),
            ));
        }
        Ok(())
    }

    /// Builds the graph for the online prediction at frame `t`, reading only
    /// frames `receptive_start(t) ..= t`.
    pub(crate) fn heads_at<T: Real>(
        &self,
        g: &mut Graph<T>,
        vars: &[Var],
        seq: &FeatureSequence,
        t: usize,
    ) -> Result<Heads> {
        self.check_input(seq)?;
        if t >= seq.len() {
            return Err(Error::OutOfRange(format!("frame {t} of {}", seq.len())));
        }
        let n = self.config.max_window();
        let lo = (t + 1).saturating_sub(n);
        let first = lo.saturating_sub(self.net.refiner.halo());
        let d = seq.dim();
        let raw = Tensor::matrix(
            t + 1 - first,
            d,
            seq.frames().data()[first * d..(t + 1) * d].to_vec(),
        );
        let raw = g.constant(raw.cast());
        let refined = self.net.refiner.forward(g, vars, raw, lo - first)?;
        let idx = window_indices(t, n).into_iter().map(|i| i - lo).collect();
        let block = g.gather_rows(refined, idx)?;
        let blocks = self
            .net
            .branches
            .iter()
            .map(|b| {
                if b.length() == n {
                    Ok(block)
                } else {
                    g.gather_rows(block, (n - b.length()..n).collect())
                }
            })
            .collect::<Result<Vec<_>>>()?;
        self.heads_from_blocks(g, vars, &blocks)
    }

    fn heads_from_blocks<T: Real>(
        &self,
        g: &mut Graph<T>,
        vars: &[Var],
        blocks: &[Var],
    ) -> Result<Heads> {
        let encoded = self
            .net
            .branches
            .iter()
            .zip(blocks)
            .map(|(b, &x)| b.forward(g, vars, x))
            .collect::<Result<Vec<_>>>()?;
        let joined = if encoded.len() == 1 {
            encoded[0]
        } else {
            g.concat_cols(&encoded)?
        };
        let fused = linear(g, vars, self.net.fuse, joined)?;
        let logits = linear(g, vars, self.net.phase, fused)?;
        let probs = g.softmax_rows(logits, None)?;
        let spi = match self.net.spi {
            Some(head) => {
                let s = linear(g, vars, head, fused)?;
                Some(g.sigmoid(s))
            }
            None => None,
        };
        Ok(Heads { probs, spi })
    }

    /// Refined features for every frame of `seq` (T × d_model).
    pub fn refine(&self, seq: &FeatureSequence) -> Result<Tensor<f32>> {
        const CHUNK: usize = 64;
        self.check_input(seq)?;
        let (t_len, d_in) = (seq.len(), seq.dim());
        let halo = self.net.refiner.halo();
        let mut out = Vec::with_capacity(t_len * self.config.d_model);
        for start in (0..t_len).step_by(CHUNK) {
            let end = (start + CHUNK).min(t_len);
            let first = start.saturating_sub(halo);
            let mut g = Graph::<f32>::new();
            let vars = self.layout.bind(&mut g, &self.params, false);
            let raw = Tensor::matrix(
                end - first,
                d_in,
                seq.frames().data()[first * d_in..end * d_in].to_vec(),
            );
            let raw = g.constant(raw);
            let r = self
                .net
                .refiner
                .forward(&mut g, &vars, raw, start - first)?;
            out.extend_from_slice(g.value(r).data());
        }
        Ok(Tensor::matrix(t_len, self.config.d_model, out))
    }

    /// Spatio-temporal summary (length d_model) of a refined window for
    /// branch `branch`.
    pub fn encode(&self, branch: usize, block: &Tensor<f32>) -> Result<Vec<f32>> {
        let enc = self
            .net
            .branches
            .get(branch)
            .ok_or_else(|| Error::OutOfRange(format!("branch {branch}")))?;
        let mut g = Graph::<f32>::new();
        let vars = self.layout.bind(&mut g, &self.params, false);
        let x = g.constant(block.clone());
        let y = enc.forward(&mut g, &vars, x)?;
        Ok(g.value(y).data().to_vec())
    }

    /// Phase probabilities and progress for one refined window per branch.
    pub fn forward(&self, windows: &[Tensor<f32>]) -> Result<(Vec<f32>, Option<f32>)> {
        if windows.len() != self.net.branches.len() {
            return Err(Error::shape(
                "forward",
                format!(
                    "{} windows for {} branches",
                    windows.len(),
                    self.net.branches.len()
                ),
            ));
        }
        let mut g = Graph::<f32>::new();
        let vars = self.layout.bind(&mut g, &self.params, false);
        let blocks: Vec<Var> = windows.iter().map(|w| g.constant(w.clone())).collect();
        let heads = self.heads_from_blocks(&mut g, &vars, &blocks)?;
        let probs = g.value(heads.probs).data().to_vec();
        let spi = heads.spi.map(|s| g.value(s).item());
        if probs.iter().any(|p| !p.is_finite()) || spi.is_some_and(|s| !s.is_finite()) {
            return Err(Error::NonFinite("model output".into()));
        }
        Ok((probs, spi))
    }

    /// One causal prediction per second of `seq`.
    pub fn predict_video(&self, seq: &FeatureSequence) -> Result<Vec<Prediction>> {
        let refined = self.refine(seq)?;
        (0..seq.len())
            .map(|t| {
                let windows = self
                    .config
                    .branch_lengths
                    .iter()
                    .map(|&n| window(&refined, t, n))
                    .collect::<Result<Vec<_>>>()?;
                let (probs, spi_hat) = self.forward(&windows)?;
                Ok(Prediction {
                    video_id: seq.video_id().to_string(),
                    t,
                    probs,
                    spi_hat,
                })
            })
            .collect()
    }

    /// Prediction at a single frame through the same graph used in training.
    pub fn predict_at(&self, seq: &FeatureSequence, t: usize) -> Result<Prediction> {
        let mut g = Graph::<f32>::new();
        let vars = self.layout.bind(&mut g, &self.params, false);
        let heads = self.heads_at(&mut g, &vars, seq, t)?;
        Ok(Prediction {
            video_id: seq.video_id().to_string(),
            t,
            probs: g.value(heads.probs).data().to_vec(),
            spi_hat: heads.spi.map(|s| g.value(s).item()),
        })
    }
}
