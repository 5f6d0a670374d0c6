//! Composite loss, Adam with step decay, and the epoch loop.

mod adam;
mod fit;

pub use adam::Adam;
pub use fit::{
    batch_gradient, evaluate, fit, log_to_csv, loss_and_gradient, sample_loss, write_log_csv,
    BatchGradient, EpochLog, EvalSummary, FitOptions, FitResult, LabeledVideo, Sample,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Heads;
use crate::numerics::{Graph, Real, Tensor, Var};

/// Floor applied to the true-class probability before the logarithm.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    /// Weight of cross-entropy; SPI absolute error gets `1 − lambda`.
    pub lambda: f64,
    pub spi_enabled: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda: 0.5,
            spi_enabled: true,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!(
                "lambda {} outside [0, 1]",
                self.lambda
            )));
        }
        Ok(())
    }

    /// Weights of the (classification, progress) terms.
    pub fn weights(&self) -> (f64, f64) {
        if self.spi_enabled {
            (self.lambda, 1.0 - self.lambda)
        } else {
            (1.0, 0.0)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimConfig {
    pub lr0: f64,
    /// Multiplier applied every `decay_every` epochs.
    pub decay: f64,
    pub decay_every: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            lr0: 5e-6,
            decay: 0.1,
            decay_every: 10,
            epochs: 30,
            batch_size: 32,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.lr0, self.decay, self.eps]
            .iter()
            .all(|v| *v > 0.0 && v.is_finite());
        let betas = (0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2);
        if !positive || !betas || self.decay_every == 0 || self.epochs == 0 || self.batch_size == 0
        {
            return Err(Error::Config(format!(
                "invalid optimizer settings {self:?}"
            )));
        }
        Ok(())
    }
}

/// `lr0 · decay^⌊epoch / decay_every⌋`.
pub fn lr_at(epoch: usize, cfg: &OptimConfig) -> f64 {
    cfg.lr0 * cfg.decay.powi((epoch / cfg.decay_every) as i32)
}

/// Loss value with its two terms before weighting.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossParts {
    pub total: f64,
    pub ce: f64,
    pub mae: f64,
}

impl LossParts {
    pub fn mean(parts: &[LossParts]) -> LossParts {
        let n = parts.len().max(1) as f64;
        let sum = parts.iter().fold(LossParts::default(), |a, p| LossParts {
            total: a.total + p.total,
            ce: a.ce + p.ce,
            mae: a.mae + p.mae,
        });
        LossParts {
            total: sum.total / n,
            ce: sum.ce / n,
            mae: sum.mae / n,
        }
    }
}

/// `λ·(−log max(p_y, 1e-12)) + (1 − λ)·|spi_hat − spi_target|` for one
/// sample; cross-entropy alone when SPI is disabled.
pub fn composite_loss(
    probs: &[f64],
    truth: usize,
    spi_hat: Option<f64>,
    spi_target: Option<f64>,
    cfg: &LossConfig,
) -> Result<LossParts> {
    cfg.validate()?;
    let sum: f64 = probs.iter().sum();
    if truth >= probs.len()
        || probs.iter().any(|p| !(0.0..=1.0).contains(p))
        || (sum - 1.0).abs() > 1e-4
    {
        return Err(Error::OutOfRange(format!(
            "invalid distribution {probs:?} for class {truth}"
        )));
    }
    let ce = -probs[truth].max(LOG_FLOOR).ln();
    let (wc, ws) = cfg.weights();
    let mae = if cfg.spi_enabled {
        match (spi_hat, spi_target) {
            (Some(a), Some(b)) if (0.0..=1.0).contains(&a) && (0.0..=1.0).contains(&b) => {
                (a - b).abs()
            }
            _ => {
                return Err(Error::OutOfRange(
                    "SPI values must be given and lie in [0, 1]".into(),
                ))
            }
        }
    } else {
        0.0
    };
    Ok(LossParts {
        total: wc * ce + ws * mae,
        ce,
        mae,
    })
}

/// Graph form of [`composite_loss`].
pub(crate) struct LossVars {
    pub total: Var,
    pub ce: Var,
    pub mae: Option<Var>,
}

pub(crate) fn loss_graph<T: Real>(
    g: &mut Graph<T>,
    heads: Heads,
    truth: usize,
    spi_target: Option<f64>,
    cfg: &LossConfig,
) -> Result<LossVars> {
    let py = g.select(heads.probs, truth)?;
    let log = g.log_clamp(py, T::of(LOG_FLOOR));
    let ce = g.scale(log, T::of(-1.0));
    let (wc, ws) = cfg.weights();
    let weighted_ce = g.scale(ce, T::of(wc));
    if !cfg.spi_enabled {
        return Ok(LossVars {
            total: weighted_ce,
            ce,
            mae: None,
        });
    }
    let spi = heads
        .spi
        .ok_or_else(|| Error::Config("SPI loss enabled but the model has no SPI head".into()))?;
    let target =
        spi_target.ok_or_else(|| Error::Config("SPI loss enabled but no SPI target".into()))?;
    let est = g.select(spi, 0)?;
    let t = g.constant(Tensor::scalar(T::of(target)));
    let diff = g.sub(est, t)?;
    let mae = g.abs(diff);
    let weighted = g.scale(mae, T::of(ws));
    let total = g.add(weighted_ce, weighted)?;
    Ok(LossVars {
        total,
        ce,
        mae: Some(mae),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_prediction_costs_nothing() {
        let l = composite_loss(
            &[0.0, 1.0, 0.0],
            1,
            Some(0.3),
            Some(0.3),
            &LossConfig::default(),
        )
        .unwrap();
        assert_eq!(l.total, 0.0);
    }

    #[test]
    fn uniform_five_phases() {
        let l = composite_loss(&[0.2; 5], 3, Some(0.5), Some(0.4), &LossConfig::default()).unwrap();
        assert!((l.total - 0.85472).abs() < 1e-4, "{}", l.total);
        assert!((l.total - (l.ce + l.mae) / 2.0).abs() < 1e-9);
    }

    #[test]
    fn lambda_boundaries() {
        let probs = [0.1, 0.6, 0.3];
        let only_ce = LossConfig {
            lambda: 1.0,
            spi_enabled: true,
        };
        let only_mae = LossConfig {
            lambda: 0.0,
            spi_enabled: true,
        };
        let a = composite_loss(&probs, 0, Some(0.9), Some(0.2), &only_ce).unwrap();
        assert_eq!(a.total, -(0.1f64.ln()));
        let b = composite_loss(&probs, 0, Some(0.9), Some(0.2), &only_mae).unwrap();
        assert_eq!(b.total, (0.9f64 - 0.2).abs());
        let off = LossConfig {
            lambda: 0.5,
            spi_enabled: false,
        };
        assert_eq!(
            composite_loss(&probs, 0, None, None, &off).unwrap().total,
            a.total
        );
    }

    #[test]
    fn saturated_probability_is_clamped() {
        let l = composite_loss(
            &[1.0, 0.0],
            1,
            None,
            None,
            &LossConfig {
                lambda: 1.0,
                spi_enabled: false,
            },
        )
        .unwrap();
        assert!((l.total - 27.631021115928547).abs() < 1e-9);
        assert!(composite_loss(&[0.5, 0.6], 0, None, None, &LossConfig::default()).is_err());
    }

    #[test]
    fn schedule() {
        let cfg = OptimConfig::default();
        assert_eq!(lr_at(0, &cfg), 5e-6);
        assert!((lr_at(10, &cfg) - 5e-7).abs() < 1e-20);
        assert!((lr_at(29, &cfg) - 5e-8).abs() < 1e-20);
        assert_eq!(lr_at(9, &cfg), 5e-6);
    }
}
