use crate::error::{Error, Result};
use crate::model::layers::EncoderLayer;
use crate::model::params::ParamLayout;
use crate::model::positional_encoding;
use crate::numerics::{Graph, Real, Tensor, Var};

/// One transformer branch: sinusoidal positions plus a stack of encoder
/// layers, summarized by the final position.
#[derive(Clone, Debug)]
pub(crate) struct TemporalEncoder {
    length: usize,
    layers: Vec<EncoderLayer>,
    pe: Tensor<f32>,
}

impl TemporalEncoder {
    pub fn register(
        layout: &mut ParamLayout,
        name: &str,
        length: usize,
        width: usize,
        heads: usize,
        depth: usize,
    ) -> Self {
        let layers = (0..depth)
            .map(|l| {
                EncoderLayer::register(layout, &format!("{name}.layer{l}"), width, heads, 2 * width)
            })
            .collect();
        TemporalEncoder {
            length,
            layers,
            pe: positional_encoding(length, width),
        }
    }

    pub fn length(&self) -> usize {
        self.length
    }

    #[cfg(test)]
    pub fn layers(&self) -> &[EncoderLayer] {
        &self.layers
    }

    /// `block` is `length × width`; returns `1 × width`.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, vars: &[Var], block: Var) -> Result<Var> {
        let shape = g.value(block).shape();
        if shape != [self.length, self.pe.cols()] {
            return Err(Error::shape(
                "encode",
                format!("expected {}x{}, got {shape:?}", self.length, self.pe.cols()),
            ));
        }
        let pe = g.constant(self.pe.cast());
        let mut x = g.add(block, pe)?;
        let depth = self.layers.len();
        for (l, layer) in self.layers.iter().enumerate() {
            x = layer.forward(g, vars, x, l + 1 == depth)?;
        }
        if depth == 0 {
            x = g.gather_rows(x, vec![self.length - 1])?;
        }
        Ok(x)
    }
}
