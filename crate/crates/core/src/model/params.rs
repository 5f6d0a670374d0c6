//! Flat parameter storage with a named layout.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::numerics::{Graph, Real, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq)]
enum Init {
    /// Uniform in ±1/√fan_in.
    Uniform {
        fan_in: usize,
    },
    Ones,
    Zeros,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    init: Init,
}

impl ParamEntry {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.numel()
    }
}

/// Ordered list of named tensors packed into one flat vector.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamLayout {
    entries: Vec<ParamEntry>,
    total: usize,
}

/// Indices of a dense layer `y = x·W (+ b)` (W is fan_in × fan_out).
#[derive(Clone, Copy, Debug)]
pub(crate) struct Linear {
    pub w: usize,
    pub b: Option<usize>,
}

/// Layer-norm gain and bias.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Norm {
    pub gain: usize,
    pub bias: usize,
}

impl ParamLayout {
    fn push(&mut self, name: String, shape: Vec<usize>, init: Init) -> usize {
        let entry = ParamEntry {
            name,
            offset: self.total,
            shape,
            init,
        };
        self.total += entry.numel();
        self.entries.push(entry);
        self.entries.len() - 1
    }

    pub(crate) fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Linear {
        let init = Init::Uniform { fan_in };
        Linear {
            w: self.push(format!("{name}.weight"), vec![fan_in, fan_out], init),
            b: Some(self.push(format!("{name}.bias"), vec![fan_out], init)),
        }
    }

    pub(crate) fn linear_no_bias(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Linear {
        Linear {
            w: self.push(
                format!("{name}.weight"),
                vec![fan_in, fan_out],
                Init::Uniform { fan_in },
            ),
            b: None,
        }
    }

    pub(crate) fn norm(&mut self, name: &str, width: usize) -> Norm {
        Norm {
            gain: self.push(format!("{name}.gain"), vec![width], Init::Ones),
            bias: self.push(format!("{name}.bias"), vec![width], Init::Zeros),
        }
    }

    /// Total number of scalars.
    pub fn len(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn entry(&self, name: &str) -> Option<&ParamEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    /// Deterministic initialization; entries are drawn in layout order.
    pub fn initialize(&self, seed: u64) -> Vec<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(self.total);
        for e in &self.entries {
            match e.init {
                Init::Uniform { fan_in } => {
                    let bound = 1.0 / (fan_in as f64).sqrt();
                    out.extend((0..e.numel()).map(|_| rng.gen_range(-bound..bound) as f32));
                }
                Init::Ones => out.extend(std::iter::repeat_n(1.0f32, e.numel())),
                Init::Zeros => out.extend(std::iter::repeat_n(0.0f32, e.numel())),
            }
        }
        out
    }

    /// Registers every entry as a graph leaf. `trainable` selects
    /// [`Graph::param`] over [`Graph::constant`].
    pub(crate) fn bind<T: Real>(
        &self,
        g: &mut Graph<T>,
        params: &[T],
        trainable: bool,
    ) -> Vec<Var> {
        debug_assert_eq!(params.len(), self.total);
        self.entries
            .iter()
            .map(|e| {
                let t =
                    Tensor::new(e.shape.clone(), params[e.range()].to_vec()).expect("layout shape");
                if trainable {
                    g.param(t)
                } else {
                    g.constant(t)
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn offsets_are_contiguous() {
        let mut l = ParamLayout::default();
        let lin = l.linear("a", 3, 2);
        let n = l.norm("n", 2);
        assert_eq!(l.len(), 3 * 2 + 2 + 2 + 2);
        assert_eq!(l.entries()[lin.b.unwrap()].offset, 6);
        assert_eq!(l.entries()[n.gain].offset, 8);
        let p = l.initialize(1);
        assert_eq!(&p[8..10], &[1.0, 1.0]);
        assert_eq!(&p[10..12], &[0.0, 0.0]);
        assert!(p[..6].iter().all(|v| v.abs() <= 1.0 / 3f32.sqrt()));
    }
}
