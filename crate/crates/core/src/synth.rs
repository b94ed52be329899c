//! Deterministic synthetic image-classification fixtures.
//!
//! Desk-scale stand-in for an MNIST-like corpus when the real files are not
//! on disk: each class is a smooth prototype built from a few Gaussian blobs
//! on the pixel grid, and samples are intensity-jittered, noisy copies of the
//! prototype. Classes come in confusable pairs (shared blobs) so a trained
//! classifier is good but not perfect, which is what the compression and
//! repair experiments need.

use ndarray::Array1;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::error::Result;

#[derive(Clone, Debug)]
pub struct SynthSpec {
    pub train: usize,
    pub test: usize,
    /// Uniform pixel noise amplitude.
    pub noise: f64,
    /// Fraction of samples blended with the partner class prototype; these
    /// sit near decision boundaries and make the classifier fragile there.
    pub blend_frac: f64,
    pub seed: u64,
    /// Images are `side x side`.
    pub side: usize,
    pub classes: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            train: 8000,
            test: 2000,
            noise: 0.28,
            blend_frac: 0.15,
            seed: 7,
            side: 28,
            classes: 10,
        }
    }
}

struct Blob {
    row: f64,
    col: f64,
    sigma: f64,
    amp: f64,
}

fn render(blobs: &[Blob], side: usize) -> Array1<f64> {
    let mut img = Array1::<f64>::zeros(side * side);
    for blob in blobs {
        for r in 0..side {
            for c in 0..side {
                let dr = r as f64 - blob.row;
                let dc = c as f64 - blob.col;
                let v = blob.amp * (-(dr * dr + dc * dc) / (2.0 * blob.sigma * blob.sigma)).exp();
                img[r * side + c] += v;
            }
        }
    }
    img.mapv_inplace(|v| v.clamp(0.0, 1.0));
    img
}

fn prototypes(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Vec<Array1<f64>> {
    let side = spec.side as f64;
    let mut all_blobs: Vec<Vec<Blob>> = Vec::with_capacity(spec.classes);
    for class in 0..spec.classes {
        let mut blobs = Vec::new();
        // Confusable pairs: the second half of the classes starts from its
        // partner's blobs and only shifts one of them.
        let partner = class.checked_sub(spec.classes / 2);
        if let Some(p) = partner {
            let base = &all_blobs[p];
            for (i, b) in base.iter().enumerate() {
                let (dr, dc) = if i == 0 {
                    (
                        rng.random_range(-2.5..2.5),
                        rng.random_range(-2.5..2.5),
                    )
                } else {
                    (0.0, 0.0)
                };
                blobs.push(Blob {
                    row: (b.row + dr).clamp(4.0, side - 5.0),
                    col: (b.col + dc).clamp(4.0, side - 5.0),
                    sigma: b.sigma,
                    amp: b.amp,
                });
            }
        } else {
            for _ in 0..4 {
                blobs.push(Blob {
                    row: rng.random_range(4.0..side - 4.0),
                    col: rng.random_range(4.0..side - 4.0),
                    sigma: rng.random_range(1.8..3.6),
                    amp: rng.random_range(0.6..1.0),
                });
            }
        }
        all_blobs.push(blobs);
    }
    all_blobs.iter().map(|b| render(b, spec.side)).collect()
}

fn sample(
    proto: &Array1<f64>,
    partner: &Array1<f64>,
    spec: &SynthSpec,
    rng: &mut ChaCha8Rng,
) -> Array1<f64> {
    let lambda = if rng.random_range(0.0..1.0) < spec.blend_frac {
        rng.random_range(0.62..0.85)
    } else {
        1.0
    };
    let intensity = rng.random_range(0.7..1.0);
    let mut out = proto.clone();
    for (o, &p) in out.iter_mut().zip(partner.iter()) {
        let mixed = lambda * *o + (1.0 - lambda) * p;
        let noisy = intensity * mixed + rng.random_range(-spec.noise..spec.noise);
        *o = noisy.clamp(0.0, 1.0);
    }
    out
}

/// Generate a `(train, test)` dataset pair. Labels cycle through the classes
/// so both splits are balanced; everything is a pure function of the inputs.
pub fn generate(spec: &SynthSpec) -> Result<(Dataset, Dataset)> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let protos = prototypes(spec, &mut rng);
    let make = |count: usize, rng: &mut ChaCha8Rng| -> Result<Dataset> {
        let mut inputs = Vec::with_capacity(count);
        let mut labels = Vec::with_capacity(count);
        for i in 0..count {
            let class = i % spec.classes;
            let partner = (class + spec.classes / 2) % spec.classes;
            inputs.push(sample(&protos[class], &protos[partner], spec, rng));
            labels.push(class);
        }
        Dataset::with_labels(inputs, labels)
    };
    let train = make(spec.train, &mut rng)?;
    let test = make(spec.test, &mut rng)?;
    Ok((train, test))
}
