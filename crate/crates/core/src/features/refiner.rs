use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::layers::{linear, norm, Attention};
use crate::model::params::{Linear, Norm, ParamLayout};
use crate::numerics::{Graph, Real, Var};

/// Settings of the causal attention layer applied to projected frames.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RefinerConfig {
    pub heads: usize,
    /// Frames each position attends over, itself included. `None` uses the
    /// longest branch window.
    pub context: Option<usize>,
}

impl Default for RefinerConfig {
    fn default() -> Self {
        RefinerConfig {
            heads: 2,
            context: None,
        }
    }
}

/// Input projection followed, when enabled, by `p + attn(ln(p))` with a
/// banded causal mask.
#[derive(Clone, Debug)]
pub(crate) struct Refiner {
    proj: Linear,
    block: Option<(Norm, Attention)>,
    context: usize,
}

impl Refiner {
    pub fn register(
        layout: &mut ParamLayout,
        input_dim: usize,
        width: usize,
        heads: usize,
        context: Option<usize>,
    ) -> Self {
        let proj = layout.linear("refiner.proj", input_dim, width);
        let block = context.map(|_| {
            (
                layout.norm("refiner.norm", width),
                Attention::register(layout, "refiner.attn", width, heads),
            )
        });
        Refiner {
            proj,
            block,
            context: context.unwrap_or(1),
        }
    }

    /// Extra past frames needed to refine a frame.
    pub fn halo(&self) -> usize {
        self.context - 1
    }

    #[cfg(test)]
    pub fn attention(&self) -> Option<&Attention> {
        self.block.as_ref().map(|(_, a)| a)
    }

    /// Refines rows `skip..m` of `frames` (m × D_in). Row `i` attends to rows
    /// `max(0, i−context+1) ..= i`; callers supply at least [`Self::halo`]
    /// preceding rows unless the block starts at frame 0.
    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        vars: &[Var],
        frames: Var,
        skip: usize,
    ) -> Result<Var> {
        let m = g.value(frames).rows();
        let p = linear(g, vars, self.proj, frames)?;
        let tail = |g: &mut Graph<T>, v: Var| {
            if skip == 0 {
                Ok(v)
            } else {
                g.gather_rows(v, (skip..m).collect())
            }
        };
        let Some((ln, attn)) = &self.block else {
            return tail(g, p);
        };
        let z = norm(g, vars, *ln, p)?;
        let queries = tail(g, z)?;
        let residual = tail(g, p)?;
        let mask: Arc<[bool]> = (skip..m)
            .flat_map(|i| (0..m).map(move |j| j <= i && i - j < self.context))
            .collect();
        let a = attn.forward(g, vars, queries, z, Some(mask))?;
        g.add(residual, a)
    }
}
