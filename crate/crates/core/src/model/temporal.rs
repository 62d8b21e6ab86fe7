//! Multi-scale temporal representation: stacked kernel-3, stride-1,
//! length-preserving 1-D convolutions with ReLU between layers.

use rand::Rng;

use super::layers::{uniform_fan_in, Linear};
use crate::tape::{Graph, ParamStore, Var};

/// Convolution stack. Layer `i` (1-based) has a receptive field of `2i + 1` frames.
#[derive(Debug, Clone)]
pub struct TemporalConv {
    /// Each layer is an affine map over the unfolded `[x(t-1) | x(t) | x(t+1)]` rows.
    pub layers: Vec<Linear>,
    pub dim: usize,
}

impl TemporalConv {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, depth: usize, rng: &mut impl Rng) -> Self {
        let layers = (1..=depth)
            .map(|i| {
                let prefix = format!("{name}.{i}");
                let weight = store.insert(
                    format!("{prefix}.weight"),
                    uniform_fan_in(3 * dim, dim, 3 * dim, rng),
                );
                let bias = store.insert(format!("{prefix}.bias"), uniform_fan_in(1, dim, 3 * dim, rng));
                Linear {
                    weight,
                    bias: Some(bias),
                    in_dim: 3 * dim,
                    out_dim: dim,
                }
            })
            .collect();
        Self { layers, dim }
    }

    /// Returns the post-activation output of every layer. Rows flagged false in
    /// `frames` are padding and are re-zeroed after each layer, so they act
    /// exactly like the convolution's own zero padding.
    pub fn forward(&self, g: &mut Graph, x: Var, frames: &[bool]) -> Vec<Var> {
        let mut h = x;
        let mut outs = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let unfolded = g.unfold3(h);
            let y = layer.forward(g, unfolded);
            let y = g.relu(y);
            h = g.row_mask(y, frames);
            outs.push(h);
        }
        outs
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::Matrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn run(conv: &TemporalConv, store: &ParamStore, x: &Matrix) -> Vec<Matrix> {
        let mut g = Graph::new(store);
        let xv = g.input(x.clone());
        let keep = vec![true; x.nrows()];
        conv.forward(&mut g, xv, &keep)
            .into_iter()
            .map(|v| g.value(v).clone())
            .collect()
    }

    #[test]
    fn shapes_are_preserved() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let conv = TemporalConv::new(&mut store, "conv", 8, 4, &mut rng);
        for len in [1, 2, 12] {
            let outs = run(&conv, &store, &Matrix::ones((len, 8)));
            assert_eq!(outs.len(), 4);
            assert!(outs.iter().all(|o| o.dim() == (len, 8)));
        }
    }

    #[test]
    fn perturbation_stays_inside_receptive_field() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let conv = TemporalConv::new(&mut store, "conv", 6, 4, &mut rng);
        let x = Matrix::from_shape_fn((20, 6), |(t, j)| ((t * 6 + j) as f64 * 0.17).cos());
        let base = run(&conv, &store, &x);
        let t0 = 9;
        let mut moved = x.clone();
        moved.row_mut(t0).mapv_inplace(|v| v + 0.5);
        let pert = run(&conv, &store, &moved);
        for (i, (b, p)) in base.iter().zip(&pert).enumerate() {
            let reach = i + 1;
            for t in 0..20 {
                let d = (&b.row(t) - &p.row(t)).mapv(f64::abs).sum();
                if t + reach < t0 || t > t0 + reach {
                    assert_eq!(d, 0.0, "layer {} frame {t} changed", i + 1);
                }
            }
        }
    }
}
