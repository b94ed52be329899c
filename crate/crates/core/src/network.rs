//! Feedforward ReLU network data model: construction, validation, forward
//! evaluation and JSON serialization.
//!
//! A network is an ordered list of layers, each either fully connected
//! (`y = Wx + b`) or ReLU (`y_i = max(0, x_i)`). Adjacent layer widths must
//! chain. Networks are immutable after construction and safe to share across
//! threads; `forward` is pure.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Layer discriminant, used for compatibility checks and padding.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    #[serde(rename = "fc")]
    FullyConnected,
    Relu,
}

/// One layer of a feedforward network.
#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    FullyConnected { weight: Array2<f64>, bias: Array1<f64> },
    Relu { width: usize },
}

impl Layer {
    /// Fully connected layer from a dense row-major weight matrix.
    pub fn fully_connected(weight: Array2<f64>, bias: Array1<f64>) -> Result<Self> {
        if bias.len() != weight.nrows() {
            return Err(Error::Validation(format!(
                "bias length {} does not equal weight row count {}",
                bias.len(),
                weight.nrows()
            )));
        }
        if weight.nrows() == 0 || weight.ncols() == 0 {
            return Err(Error::Validation("weight matrix must be non-empty".into()));
        }
        if weight.iter().any(|v| !v.is_finite()) || bias.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("non-finite weight or bias".into()));
        }
        Ok(Layer::FullyConnected { weight, bias })
    }

    pub fn relu(width: usize) -> Result<Self> {
        if width == 0 {
            return Err(Error::Validation("relu width must be positive".into()));
        }
        Ok(Layer::Relu { width })
    }

    /// Identity fully connected layer (identity weight, zero bias).
    pub fn identity(width: usize) -> Self {
        Layer::FullyConnected {
            weight: Array2::eye(width),
            bias: Array1::zeros(width),
        }
    }

    pub fn kind(&self) -> LayerKind {
        match self {
            Layer::FullyConnected { .. } => LayerKind::FullyConnected,
            Layer::Relu { .. } => LayerKind::Relu,
        }
    }

    pub fn input_width(&self) -> usize {
        match self {
            Layer::FullyConnected { weight, .. } => weight.ncols(),
            Layer::Relu { width } => *width,
        }
    }

    pub fn output_width(&self) -> usize {
        match self {
            Layer::FullyConnected { weight, .. } => weight.nrows(),
            Layer::Relu { width } => *width,
        }
    }

    /// Apply the layer map. Caller guarantees the input width matches.
    ///
    /// The fully connected case accumulates strictly in column order. That
    /// keeps the two halves of a merged self-pair bit-identical (zero columns
    /// are exact no-ops), so the comparison layer subtracts to exactly zero;
    /// a SIMD kernel would regroup the sums and leave 1-ulp residue.
    pub fn apply(&self, x: &Array1<f64>) -> Array1<f64> {
        match self {
            Layer::FullyConnected { weight, bias } => {
                let mut out = Array1::zeros(weight.nrows());
                for (i, row) in weight.rows().into_iter().enumerate() {
                    let mut acc = bias[i];
                    for (w, v) in row.iter().zip(x.iter()) {
                        acc += w * v;
                    }
                    out[i] = acc;
                }
                out
            }
            Layer::Relu { .. } => x.mapv(|v| v.max(0.0)),
        }
    }

    /// Apply the layer to a batch with one sample per row.
    pub fn apply_batch(&self, x: &Array2<f64>) -> Array2<f64> {
        match self {
            Layer::FullyConnected { weight, bias } => x.dot(&weight.t()) + bias,
            Layer::Relu { .. } => x.mapv(|v| v.max(0.0)),
        }
    }

    pub fn parameter_count(&self) -> usize {
        match self {
            Layer::FullyConnected { weight, bias } => weight.len() + bias.len(),
            Layer::Relu { .. } => 0,
        }
    }
}

/// A validated feedforward ReLU network.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    layers: Vec<Layer>,
    input_dim: usize,
    output_dim: usize,
}

impl Network {
    /// Build a network, checking that adjacent layer widths chain.
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Validation("network must have at least one layer".into()));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            let (prev, next) = (&pair[0], &pair[1]);
            if prev.output_width() != next.input_width() {
                return Err(Error::Validation(format!(
                    "layer {} outputs width {} but layer {} expects width {}",
                    i,
                    prev.output_width(),
                    i + 1,
                    next.input_width()
                )));
            }
        }
        let input_dim = layers[0].input_width();
        let output_dim = layers[layers.len() - 1].output_width();
        Ok(Network {
            layers,
            input_dim,
            output_dim,
        })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn into_layers(self) -> Vec<Layer> {
        self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn kinds(&self) -> Vec<LayerKind> {
        self.layers.iter().map(Layer::kind).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(Layer::parameter_count).sum()
    }

    fn check_input(&self, len: usize) -> Result<()> {
        if len != self.input_dim {
            return Err(Error::Dimension {
                layer: 0,
                expected: self.input_dim,
                got: len,
            });
        }
        Ok(())
    }

    /// Evaluate the network on a single input vector.
    pub fn forward(&self, x: &Array1<f64>) -> Result<Array1<f64>> {
        self.check_input(x.len())?;
        let mut y = self.layers[0].apply(x);
        for layer in &self.layers[1..] {
            y = layer.apply(&y);
        }
        Ok(y)
    }

    /// Evaluate the network, returning every per-layer output `y^1..y^L`.
    pub fn forward_all_layers(&self, x: &Array1<f64>) -> Result<Vec<Array1<f64>>> {
        self.check_input(x.len())?;
        let mut outs = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        for layer in &self.layers {
            cur = layer.apply(&cur);
            outs.push(cur.clone());
        }
        Ok(outs)
    }

    /// Evaluate a batch with one sample per row.
    pub fn forward_batch(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_input(x.ncols())?;
        let mut y = self.layers[0].apply_batch(x);
        for layer in &self.layers[1..] {
            y = layer.apply_batch(&y);
        }
        Ok(y)
    }

    /// Serialize to the network JSON format.
    pub fn to_json(&self) -> String {
        let file = NetworkFile {
            layers: self.layers.iter().map(LayerFile::from).collect(),
        };
        // f64 values survive the round trip exactly: serde_json emits the
        // shortest decimal that parses back to the same bits.
        serde_json::to_string_pretty(&file).expect("network JSON serialization cannot fail")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Self::from_json_named(s, "<string>")
    }

    fn from_json_named(s: &str, origin: &str) -> Result<Self> {
        let file: NetworkFile =
            serde_json::from_str(s).map_err(|e| Error::parse(origin, e.to_string()))?;
        let layers = file
            .layers
            .into_iter()
            .map(Layer::try_from)
            .collect::<Result<Vec<_>>>()?;
        Network::new(layers)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text =
            fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::from_json_named(&text, &path.display().to_string())
    }
}

#[derive(Serialize, Deserialize)]
struct NetworkFile {
    layers: Vec<LayerFile>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum LayerFile {
    Fc { weight: Vec<Vec<f64>>, bias: Vec<f64> },
    Relu { width: usize },
}

impl From<&Layer> for LayerFile {
    fn from(layer: &Layer) -> Self {
        match layer {
            Layer::FullyConnected { weight, bias } => LayerFile::Fc {
                weight: weight.rows().into_iter().map(|r| r.to_vec()).collect(),
                bias: bias.to_vec(),
            },
            Layer::Relu { width } => LayerFile::Relu { width: *width },
        }
    }
}

impl TryFrom<LayerFile> for Layer {
    type Error = Error;

    fn try_from(file: LayerFile) -> Result<Self> {
        match file {
            LayerFile::Fc { weight, bias } => {
                let rows = weight.len();
                let cols = weight.first().map(Vec::len).unwrap_or(0);
                if weight.iter().any(|r| r.len() != cols) {
                    return Err(Error::Validation("ragged weight matrix".into()));
                }
                let flat: Vec<f64> = weight.into_iter().flatten().collect();
                let weight = Array2::from_shape_vec((rows, cols), flat)
                    .map_err(|e| Error::Validation(e.to_string()))?;
                Layer::fully_connected(weight, Array1::from_vec(bias))
            }
            LayerFile::Relu { width } => Layer::relu(width),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr1, arr2};

    fn fc(w: Array2<f64>, b: Array1<f64>) -> Layer {
        Layer::fully_connected(w, b).unwrap()
    }

    #[test]
    fn forward_identity_fc() {
        let net = Network::new(vec![fc(arr2(&[[1.0, 0.0], [0.0, 1.0]]), arr1(&[0.0, 0.0]))]).unwrap();
        let y = net.forward(&arr1(&[3.0, -2.0])).unwrap();
        assert_eq!(y, arr1(&[3.0, -2.0]));
    }

    #[test]
    fn forward_relu_kills_negative() {
        let net = Network::new(vec![
            fc(arr2(&[[1.0], [-1.0]]), arr1(&[0.0, 0.0])),
            Layer::relu(2).unwrap(),
        ])
        .unwrap();
        let y = net.forward(&arr1(&[2.0])).unwrap();
        assert_eq!(y, arr1(&[2.0, 0.0]));
    }

    #[test]
    fn forward_all_layers_matches_forward() {
        let net = Network::new(vec![
            fc(arr2(&[[1.0], [-1.0]]), arr1(&[0.0, 0.0])),
            Layer::relu(2).unwrap(),
        ])
        .unwrap();
        let outs = net.forward_all_layers(&arr1(&[2.0])).unwrap();
        assert_eq!(outs.len(), 2);
        assert_eq!(outs[0], arr1(&[2.0, -2.0]));
        assert_eq!(outs[1], arr1(&[2.0, 0.0]));
        assert_eq!(outs[1], net.forward(&arr1(&[2.0])).unwrap());

        let ident = Network::new(vec![fc(arr2(&[[1.0, 0.0], [0.0, 1.0]]), arr1(&[0.0, 0.0]))]).unwrap();
        let outs = ident.forward_all_layers(&arr1(&[1.0, 2.0])).unwrap();
        assert_eq!(outs, vec![arr1(&[1.0, 2.0])]);
    }

    #[test]
    fn dimension_mismatch_names_layer() {
        let net = Network::new(vec![fc(arr2(&[[1.0, 0.0]]), arr1(&[0.0]))]).unwrap();
        let err = net.forward(&arr1(&[1.0])).unwrap_err();
        match err {
            Error::Dimension { layer: 0, expected: 2, got: 1 } => {}
            other => panic!("unexpected error: {other:?}"),
        }
    }

    #[test]
    fn chain_violation_rejected() {
        let err = Network::new(vec![
            fc(arr2(&[[1.0], [2.0]]), arr1(&[0.0, 0.0])),
            Layer::relu(3).unwrap(),
        ])
        .unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn bias_length_mismatch_rejected() {
        let err = Layer::fully_connected(arr2(&[[1.0], [2.0]]), arr1(&[0.0])).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn json_round_trip_is_exact() {
        let net = Network::new(vec![
            fc(
                arr2(&[[0.1, -0.2, 3.0e-17], [f64::MIN_POSITIVE, 1.0 / 3.0, -7.25]]),
                arr1(&[0.5000000000000001, -1.0]),
            ),
            Layer::relu(2).unwrap(),
            fc(arr2(&[[1.0, -1.0]]), arr1(&[0.25])),
        ])
        .unwrap();
        let text = net.to_json();
        let back = Network::from_json(&text).unwrap();
        assert_eq!(net, back);
    }

    #[test]
    fn json_schema_shape() {
        let net = Network::new(vec![
            fc(arr2(&[[1.0, 0.0], [0.0, 1.0]]), arr1(&[0.0, 0.0])),
            Layer::relu(2).unwrap(),
        ])
        .unwrap();
        let v: serde_json::Value = serde_json::from_str(&net.to_json()).unwrap();
        assert_eq!(v["layers"][0]["kind"], "fc");
        assert_eq!(v["layers"][0]["weight"][0][0], 1.0);
        assert_eq!(v["layers"][1]["kind"], "relu");
        assert_eq!(v["layers"][1]["width"], 2);
    }

    #[test]
    fn load_rejects_bad_bias_and_truncated_file() {
        let dir = tempfile::tempdir().unwrap();
        let bad = dir.path().join("bad.json");
        std::fs::write(
            &bad,
            r#"{"layers":[{"kind":"fc","weight":[[1.0],[2.0]],"bias":[0.0]}]}"#,
        )
        .unwrap();
        assert!(matches!(Network::load(&bad), Err(Error::Validation(_))));

        let trunc = dir.path().join("trunc.json");
        std::fs::write(&trunc, r#"{"layers":[{"kind":"fc","wei"#).unwrap();
        assert!(matches!(Network::load(&trunc), Err(Error::Parse { .. })));
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.json");
        let net = Network::new(vec![fc(arr2(&[[1.0, 0.0], [0.0, 1.0]]), arr1(&[0.0, 0.0]))]).unwrap();
        net.save(&path).unwrap();
        assert_eq!(Network::load(&path).unwrap(), net);
    }
}
