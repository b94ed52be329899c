//! Merge two compatible networks into one whose output is their pointwise
//! discrepancy `n1(x) - n2(x)`.
//!
//! Construction: a duplication layer `[I; I]` feeds the same input to both
//! halves, every fully connected layer becomes the block diagonal
//! `diag{W1, W2}` with stacked biases, ReLU layers widen to the summed width,
//! and a final comparison layer `[I  -I]` with zero bias subtracts the two
//! halves. The merged object is a plain [`Network`], so the one reachability
//! engine handles it with no special cases.

use ndarray::{s, Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{Layer, Network};

/// Which coordinate ranges of each merged layer belong to which source
/// network. Ranges are `(start, len)` over that layer's outputs.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MergedLayerRole {
    /// The prepended `[I; I]` duplication layer.
    Duplicate { first: (usize, usize), second: (usize, usize) },
    /// A merged hidden layer (block-diagonal fully connected or widened ReLU).
    Hidden { first: (usize, usize), second: (usize, usize) },
    /// The final `[I  -I]` comparison layer.
    Comparison { output_dim: usize },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitMap {
    pub layers: Vec<MergedLayerRole>,
}

/// A merged network retaining its two sources for oracle checks.
#[derive(Clone, Debug)]
pub struct MergedNetwork {
    net: Network,
    split_map: SplitMap,
    first: Network,
    second: Network,
}

/// Check the merge preconditions: equal input dims (i), equal output dims
/// (ii), equal depth (iii) and identical per-layer kinds (iv). On failure the
/// error names the first violated clause.
pub fn check_compatible(n1: &Network, n2: &Network) -> Result<()> {
    if n1.input_dim() != n2.input_dim() {
        return Err(Error::Incompatible(format!(
            "(i) input dims differ: {} vs {}",
            n1.input_dim(),
            n2.input_dim()
        )));
    }
    if n1.output_dim() != n2.output_dim() {
        return Err(Error::Incompatible(format!(
            "(ii) output dims differ: {} vs {}",
            n1.output_dim(),
            n2.output_dim()
        )));
    }
    if n1.depth() != n2.depth() {
        return Err(Error::Incompatible(format!(
            "(iii) depths differ: {} vs {}",
            n1.depth(),
            n2.depth()
        )));
    }
    for (l, (a, b)) in n1.kinds().iter().zip(n2.kinds()).enumerate() {
        if *a != b {
            return Err(Error::Incompatible(format!(
                "(iv) layer {l} kinds differ: {a:?} vs {b:?}"
            )));
        }
    }
    Ok(())
}

fn block_diag(w1: &Array2<f64>, w2: &Array2<f64>) -> Array2<f64> {
    let (r1, c1) = w1.dim();
    let (r2, c2) = w2.dim();
    let mut out = Array2::zeros((r1 + r2, c1 + c2));
    out.slice_mut(s![0..r1, 0..c1]).assign(w1);
    out.slice_mut(s![r1.., c1..]).assign(w2);
    out
}

/// Build the merged network computing `n1(x) - n2(x)`.
pub fn merge(n1: &Network, n2: &Network) -> Result<MergedNetwork> {
    check_compatible(n1, n2)?;
    let n_in = n1.input_dim();
    let n_out = n1.output_dim();

    let mut layers = Vec::with_capacity(n1.depth() + 2);
    let mut roles = Vec::with_capacity(n1.depth() + 2);

    // Duplication layer [I; I].
    let mut dup = Array2::zeros((2 * n_in, n_in));
    for j in 0..n_in {
        dup[(j, j)] = 1.0;
        dup[(n_in + j, j)] = 1.0;
    }
    layers.push(Layer::FullyConnected {
        weight: dup,
        bias: Array1::zeros(2 * n_in),
    });
    roles.push(MergedLayerRole::Duplicate {
        first: (0, n_in),
        second: (n_in, n_in),
    });

    for (l1, l2) in n1.layers().iter().zip(n2.layers()) {
        match (l1, l2) {
            (
                Layer::FullyConnected { weight: w1, bias: b1 },
                Layer::FullyConnected { weight: w2, bias: b2 },
            ) => {
                let mut bias = Array1::zeros(b1.len() + b2.len());
                bias.slice_mut(s![0..b1.len()]).assign(b1);
                bias.slice_mut(s![b1.len()..]).assign(b2);
                layers.push(Layer::FullyConnected {
                    weight: block_diag(w1, w2),
                    bias,
                });
                roles.push(MergedLayerRole::Hidden {
                    first: (0, w1.nrows()),
                    second: (w1.nrows(), w2.nrows()),
                });
            }
            (Layer::Relu { width: k1 }, Layer::Relu { width: k2 }) => {
                layers.push(Layer::Relu { width: k1 + k2 });
                roles.push(MergedLayerRole::Hidden {
                    first: (0, *k1),
                    second: (*k1, *k2),
                });
            }
            _ => unreachable!("check_compatible guarantees matching kinds"),
        }
    }

    // Comparison layer [I  -I].
    let mut cmp = Array2::zeros((n_out, 2 * n_out));
    for j in 0..n_out {
        cmp[(j, j)] = 1.0;
        cmp[(j, n_out + j)] = -1.0;
    }
    layers.push(Layer::FullyConnected {
        weight: cmp,
        bias: Array1::zeros(n_out),
    });
    roles.push(MergedLayerRole::Comparison { output_dim: n_out });

    Ok(MergedNetwork {
        net: Network::new(layers)?,
        split_map: SplitMap { layers: roles },
        first: n1.clone(),
        second: n2.clone(),
    })
}

impl MergedNetwork {
    pub fn net(&self) -> &Network {
        &self.net
    }

    pub fn into_network(self) -> Network {
        self.net
    }

    pub fn split_map(&self) -> &SplitMap {
        &self.split_map
    }

    pub fn first(&self) -> &Network {
        &self.first
    }

    pub fn second(&self) -> &Network {
        &self.second
    }

    /// Evaluate the discrepancy `n1(x) - n2(x)` through the merged network.
    pub fn forward(&self, x: &Array1<f64>) -> Result<Array1<f64>> {
        self.net.forward(x)
    }

    /// Recover one of the source networks from the merged weights.
    pub fn extract(&self, second: bool) -> Result<Network> {
        let mut layers = Vec::new();
        // Input ranges of each block layer mirror the output ranges of the
        // layer before it, starting from the duplication layer.
        let mut prev = match self.split_map.layers.first() {
            Some(MergedLayerRole::Duplicate { first, second }) => (*first, *second),
            _ => {
                return Err(Error::Internal(
                    "merged network must start with a duplication layer".into(),
                ))
            }
        };
        for (layer, role) in self.net.layers().iter().zip(&self.split_map.layers).skip(1) {
            let MergedLayerRole::Hidden { first: f, second: s } = role else {
                break; // comparison layer: the sources end here
            };
            let (row_start, rows) = if second { *s } else { *f };
            let (col_start, cols) = if second { prev.1 } else { prev.0 };
            match layer {
                Layer::FullyConnected { weight, bias } => {
                    let w = weight
                        .slice(s![row_start..row_start + rows, col_start..col_start + cols])
                        .to_owned();
                    let b = bias.slice(s![row_start..row_start + rows]).to_owned();
                    layers.push(Layer::FullyConnected { weight: w, bias: b });
                }
                Layer::Relu { .. } => {
                    layers.push(Layer::Relu { width: rows });
                }
            }
            prev = (*f, *s);
        }
        Network::new(layers)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr1;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    use crate::training::init_mlp;

    #[test]
    fn self_pair_is_compatible() {
        let net = init_mlp(&[3, 4, 2], 0).unwrap();
        check_compatible(&net, &net).unwrap();
    }

    #[test]
    fn depth_mismatch_names_clause_iii() {
        let a = init_mlp(&[3, 4, 2], 0).unwrap();
        let b = init_mlp(&[3, 4, 4, 2], 0).unwrap();
        let err = check_compatible(&a, &b).unwrap_err();
        assert!(err.to_string().contains("(iii)"), "{err}");
    }

    #[test]
    fn kind_mismatch_names_clause_iv() {
        use crate::network::Layer;
        // fc,relu,fc vs fc,fc,fc at equal depth.
        let a = init_mlp(&[2, 3, 2], 0).unwrap();
        let b = Network::new(vec![
            Layer::identity(2),
            Layer::fully_connected(Array2::from_shape_fn((3, 2), |_| 0.1), Array1::zeros(3))
                .unwrap(),
            Layer::fully_connected(Array2::from_shape_fn((2, 3), |_| 0.1), Array1::zeros(2))
                .unwrap(),
        ])
        .unwrap();
        let err = check_compatible(&a, &b).unwrap_err();
        assert!(err.to_string().contains("(iv)"), "{err}");
    }

    #[test]
    fn merged_self_pair_outputs_zero() {
        let net = init_mlp(&[3, 5, 2], 1).unwrap();
        let merged = merge(&net, &net).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let x = arr1(&[
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ]);
            let y = merged.forward(&x).unwrap();
            assert!(y.iter().all(|&v| v == 0.0), "nonzero discrepancy {y}");
        }
    }

    #[test]
    fn merged_equals_difference_of_forwards() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for seed in 0..5 {
            let a = init_mlp(&[4, 6, 3], seed).unwrap();
            let b = init_mlp(&[4, 6, 3], seed + 100).unwrap();
            let merged = merge(&a, &b).unwrap();
            for _ in 0..200 {
                let x = Array1::from_iter((0..4).map(|_| rng.random_range(-2.0..2.0)));
                let want = a.forward(&x).unwrap() - b.forward(&x).unwrap();
                let got = merged.forward(&x).unwrap();
                for (g, w) in got.iter().zip(want.iter()) {
                    assert!((g - w).abs() <= 1e-9, "{g} vs {w}");
                }
            }
        }
    }

    #[test]
    fn bias_shift_shows_up_negated() {
        // n2 = n1 with last-layer bias coordinate k shifted by +c: the merged
        // output is -c at k and 0 elsewhere, for any input.
        let n1 = init_mlp(&[3, 4, 3], 7).unwrap();
        let c = 0.75;
        let k = 1;
        let mut layers = n1.layers().to_vec();
        let last = layers.len() - 1;
        if let Layer::FullyConnected { bias, .. } = &mut layers[last] {
            bias[k] += c;
        }
        let n2 = Network::new(layers).unwrap();
        let merged = merge(&n1, &n2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let x = Array1::from_iter((0..3).map(|_| rng.random_range(-1.0..1.0)));
            let y = merged.forward(&x).unwrap();
            for (j, &v) in y.iter().enumerate() {
                if j == k {
                    assert!((v + c).abs() < 1e-12, "coordinate {j} = {v}");
                } else {
                    assert_eq!(v, 0.0);
                }
            }
        }
    }

    #[test]
    fn extract_recovers_sources_exactly() {
        let a = init_mlp(&[4, 5, 3], 10).unwrap();
        let b = init_mlp(&[4, 5, 3], 11).unwrap();
        let merged = merge(&a, &b).unwrap();
        assert_eq!(merged.extract(false).unwrap(), a);
        assert_eq!(merged.extract(true).unwrap(), b);
    }

    #[test]
    fn split_map_serializes() {
        let a = init_mlp(&[2, 3, 2], 0).unwrap();
        let merged = merge(&a, &a).unwrap();
        let text = serde_json::to_string(merged.split_map()).unwrap();
        let back: SplitMap = serde_json::from_str(&text).unwrap();
        assert_eq!(&back, merged.split_map());
    }
}
