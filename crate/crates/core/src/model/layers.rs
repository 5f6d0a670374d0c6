//! Transformer sublayers expressed over a [`Graph`].
//!
//! Parameters are referenced by their index in a [`ParamLayout`]; `vars` is
//! the slice returned by `ParamLayout::bind` for the current graph.

use std::sync::Arc;

use super::params::{Linear, Norm, ParamLayout};
use crate::error::Result;
use crate::numerics::{Graph, Real, Var};

pub(crate) fn linear<T: Real>(g: &mut Graph<T>, vars: &[Var], l: Linear, x: Var) -> Result<Var> {
    let y = g.matmul(x, vars[l.w])?;
    match l.b {
        Some(b) => g.add_row(y, vars[b]),
        None => Ok(y),
    }
}

pub(crate) fn norm<T: Real>(g: &mut Graph<T>, vars: &[Var], n: Norm, x: Var) -> Result<Var> {
    g.layer_norm(x, vars[n.gain], vars[n.bias])
}

/// Multi-head scaled dot-product attention (scale 1/√d_head).
#[derive(Clone, Copy, Debug)]
pub(crate) struct Attention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
    pub width: usize,
}

impl Attention {
    pub fn register(layout: &mut ParamLayout, name: &str, width: usize, heads: usize) -> Self {
        Attention {
            q: layout.linear(&format!("{name}.query"), width, width),
            // A key bias shifts every score in a row equally, which softmax
            // ignores.
            k: layout.linear_no_bias(&format!("{name}.key"), width, width),
            v: layout.linear(&format!("{name}.value"), width, width),
            o: layout.linear(&format!("{name}.output"), width, width),
            heads,
            width,
        }
    }

    /// `queries` (u × width) attend over `keys` (m × width). `mask` is u × m,
    /// row-major, `true` = visible.
    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        vars: &[Var],
        queries: Var,
        keys: Var,
        mask: Option<Arc<[bool]>>,
    ) -> Result<Var> {
        let head_dim = self.width / self.heads;
        let q = linear(g, vars, self.q, queries)?;
        let q = g.scale(q, T::of(1.0 / (head_dim as f64).sqrt()));
        let k = linear(g, vars, self.k, keys)?;
        let v = linear(g, vars, self.v, keys)?;
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (qh, kh, vh) = if self.heads == 1 {
                (q, k, v)
            } else {
                let start = h * head_dim;
                (
                    g.slice_cols(q, start, head_dim)?,
                    g.slice_cols(k, start, head_dim)?,
                    g.slice_cols(v, start, head_dim)?,
                )
            };
            let scores = g.matmul_nt(qh, kh)?;
            let weights = g.softmax_rows(scores, mask.clone())?;
            outs.push(g.matmul(weights, vh)?);
        }
        let merged = if outs.len() == 1 {
            outs[0]
        } else {
            g.concat_cols(&outs)?
        };
        linear(g, vars, self.o, merged)
    }
}

/// Position-wise `down(relu(up(x)))`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

impl FeedForward {
    pub fn register(layout: &mut ParamLayout, name: &str, width: usize, hidden: usize) -> Self {
        FeedForward {
            up: layout.linear(&format!("{name}.up"), width, hidden),
            down: layout.linear(&format!("{name}.down"), hidden, width),
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, vars: &[Var], x: Var) -> Result<Var> {
        let h = linear(g, vars, self.up, x)?;
        let h = g.relu(h);
        linear(g, vars, self.down, h)
    }
}

/// Pre-norm encoder layer: `x + attn(ln(x))`, then `h + ffn(ln(h))`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct EncoderLayer {
    pub attn_norm: Norm,
    pub attn: Attention,
    pub ffn_norm: Norm,
    pub ffn: FeedForward,
}

impl EncoderLayer {
    pub fn register(
        layout: &mut ParamLayout,
        name: &str,
        width: usize,
        heads: usize,
        hidden: usize,
    ) -> Self {
        EncoderLayer {
            attn_norm: layout.norm(&format!("{name}.attn_norm"), width),
            attn: Attention::register(layout, &format!("{name}.attn"), width, heads),
            ffn_norm: layout.norm(&format!("{name}.ffn_norm"), width),
            ffn: FeedForward::register(layout, &format!("{name}.ffn"), width, hidden),
        }
    }

    /// Full self-attention over the block. With `last_only`, only the final
    /// row is computed as a query and the output is 1 × width.
    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        vars: &[Var],
        x: Var,
        last_only: bool,
    ) -> Result<Var> {
        let n = g.value(x).rows();
        let z = norm(g, vars, self.attn_norm, x)?;
        let (residual, queries) = if last_only && n > 1 {
            (
                g.gather_rows(x, vec![n - 1])?,
                g.gather_rows(z, vec![n - 1])?,
            )
        } else {
            (x, z)
        };
        let a = self.attn.forward(g, vars, queries, z, None)?;
        let h = g.add(residual, a)?;
        let z2 = norm(g, vars, self.ffn_norm, h)?;
        let f = self.ffn.forward(g, vars, z2)?;
        g.add(h, f)
    }
}
