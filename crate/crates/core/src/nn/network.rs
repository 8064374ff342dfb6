use std::fmt;
use std::str::FromStr;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::DataKind;
use crate::error::{Error, Result};
use crate::kernels::ConvGeometry;
use crate::rng::{stream_rng, Stream};
use crate::tensor::Tensor;
use crate::wta::FvMode;

/// The three reference networks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NetName {
    Mlp3,
    LeNet4,
    ConvNet5,
}

impl NetName {
    /// `[H, W, C]` the network consumes. ConvNet-5 takes 24x24 center crops
    /// so that two 2x2 pools leave the 6x6x64 = 2304 inputs of its first fc layer.
    pub fn input_shape(self) -> [usize; 3] {
        match self {
            NetName::Mlp3 | NetName::LeNet4 => [28, 28, 1],
            NetName::ConvNet5 => [24, 24, 3],
        }
    }

    pub fn data_kind(self) -> DataKind {
        match self {
            NetName::Mlp3 | NetName::LeNet4 => DataKind::Mnist,
            NetName::ConvNet5 => DataKind::Cifar10,
        }
    }
}

impl fmt::Display for NetName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NetName::Mlp3 => "mlp3",
            NetName::LeNet4 => "lenet4",
            NetName::ConvNet5 => "convnet5",
        })
    }
}

impl FromStr for NetName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "mlp3" => Ok(NetName::Mlp3),
            "lenet4" => Ok(NetName::LeNet4),
            "convnet5" => Ok(NetName::ConvNet5),
            _ => Err(Error::Argument(format!(
                "unknown network {s:?}; expected mlp3, lenet4 or convnet5"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKindTag {
    Conv,
    Fc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv {
        kernel: usize,
        in_channels: usize,
        out_channels: usize,
        stride: usize,
        pad: usize,
    },
    Fc {
        inputs: usize,
        outputs: usize,
    },
}

impl LayerKind {
    pub fn tag(&self) -> LayerKindTag {
        match self {
            LayerKind::Conv { .. } => LayerKindTag::Conv,
            LayerKind::Fc { .. } => LayerKindTag::Fc,
        }
    }

    pub fn is_conv(&self) -> bool {
        matches!(self, LayerKind::Conv { .. })
    }

    pub fn conv_geometry(&self) -> Option<ConvGeometry> {
        match *self {
            LayerKind::Conv {
                kernel, stride, pad, ..
            } => Some(ConvGeometry::new(kernel, stride, pad)),
            LayerKind::Fc { .. } => None,
        }
    }

    fn fan_in(&self) -> usize {
        match *self {
            LayerKind::Conv {
                kernel, in_channels, ..
            } => kernel * kernel * in_channels,
            LayerKind::Fc { inputs, .. } => inputs,
        }
    }

    /// Conv filters are `out x (in * F^2)` with columns ordered like im2col
    /// rows; fc weights are input-major `inputs x outputs`, so dropping an
    /// input drops one contiguous weight row.
    fn weight_shape(&self) -> Vec<usize> {
        match *self {
            LayerKind::Conv {
                kernel,
                in_channels,
                out_channels,
                ..
            } => vec![out_channels, in_channels * kernel * kernel],
            LayerKind::Fc { inputs, outputs } => vec![inputs, outputs],
        }
    }

    fn outputs(&self) -> usize {
        match *self {
            LayerKind::Conv { out_channels, .. } => out_channels,
            LayerKind::Fc { outputs, .. } => outputs,
        }
    }
}

/// One layer: geometry, activation, optional 2x2 max-pool (conv only) and
/// optional WTA winner rate on its output.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    pub relu: bool,
    pub pool: bool,
    pub wta: Option<f64>,
}

impl LayerSpec {
    pub fn conv(name: &str, kernel: usize, in_channels: usize, out_channels: usize, pad: usize) -> Self {
        Self {
            name: name.into(),
            kind: LayerKind::Conv {
                kernel,
                in_channels,
                out_channels,
                stride: 1,
                pad,
            },
            relu: true,
            pool: true,
            wta: None,
        }
    }

    pub fn fc(name: &str, inputs: usize, outputs: usize, relu: bool) -> Self {
        Self {
            name: name.into(),
            kind: LayerKind::Fc { inputs, outputs },
            relu,
            pool: false,
            wta: None,
        }
    }
}

/// Activation shapes around one layer, all `[H, W, C]` (fc layers use `[1, 1, N]`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerShape {
    pub input: [usize; 3],
    /// Output before pooling; the shape WTA masks act on.
    pub activation: [usize; 3],
    /// What the next layer receives.
    pub output: [usize; 3],
}

impl LayerShape {
    pub fn input_len(&self) -> usize {
        self.input.iter().product()
    }

    pub fn activation_len(&self) -> usize {
        self.activation.iter().product()
    }

    pub fn output_len(&self) -> usize {
        self.output.iter().product()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weights: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TrainingMeta {
    pub seed: u64,
    pub epochs_completed: u32,
}

/// An ordered stack of layers with their parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    name: String,
    input_shape: [usize; 3],
    layers: Vec<LayerSpec>,
    shapes: Vec<LayerShape>,
    params: Vec<LayerParams>,
    weight_masks: Vec<Option<Vec<bool>>>,
    fv_mode: FvMode,
    pub meta: TrainingMeta,
}

fn infer_shapes(input_shape: [usize; 3], layers: &[LayerSpec]) -> Result<Vec<LayerShape>> {
    if layers.is_empty() {
        return Err(Error::Argument("a network needs at least one layer".into()));
    }
    let mut current = input_shape;
    let mut shapes = Vec::with_capacity(layers.len());
    for (i, layer) in layers.iter().enumerate() {
        let (activation, output) = match layer.kind {
            LayerKind::Conv {
                in_channels,
                out_channels,
                ..
            } => {
                if current[2] != in_channels {
                    return Err(Error::Shape(format!(
                        "layer {} expects {in_channels} input channels, receives {}",
                        layer.name, current[2]
                    )));
                }
                let geom = layer.kind.conv_geometry().unwrap();
                let (h, w) = geom.output_dims(current[0], current[1])?;
                let act = [h, w, out_channels];
                let out = if layer.pool {
                    if h < 2 || w < 2 {
                        return Err(Error::Shape(format!("layer {} output too small to pool", layer.name)));
                    }
                    [h / 2, w / 2, out_channels]
                } else {
                    act
                };
                (act, out)
            }
            LayerKind::Fc { inputs, outputs } => {
                let flat: usize = current.iter().product();
                if flat != inputs {
                    return Err(Error::Shape(format!(
                        "layer {} expects {inputs} inputs, receives {flat}",
                        layer.name
                    )));
                }
                if layer.pool {
                    return Err(Error::Argument(format!("fc layer {} cannot pool", layer.name)));
                }
                ([1, 1, outputs], [1, 1, outputs])
            }
        };
        if let Some(p) = layer.wta {
            if i + 1 == layers.len() {
                return Err(Error::Argument("the output layer cannot carry a WTA mask".into()));
            }
            if !(p > 0.0 && p <= 1.0) {
                return Err(Error::Argument(format!("winner rate {p} of {} outside (0, 1]", layer.name)));
            }
        }
        shapes.push(LayerShape {
            input: current,
            activation,
            output,
        });
        current = output;
    }
    Ok(shapes)
}

impl Network {
    /// Builds a network with He-normal weights (std = sqrt(2 / fan_in)) drawn
    /// from the `Init` stream of `seed`, and zero biases.
    pub fn new(name: &str, input_shape: [usize; 3], layers: Vec<LayerSpec>, seed: u64) -> Result<Self> {
        let shapes = infer_shapes(input_shape, &layers)?;
        let mut rng = stream_rng(seed, Stream::Init);
        let params = layers
            .iter()
            .map(|l| {
                let shape = l.kind.weight_shape();
                let std = (2.0 / l.kind.fan_in() as f64).sqrt() as f32;
                let normal = Normal::new(0.0f32, std).expect("positive std");
                let len = shape.iter().product();
                let weights: Vec<f32> = (0..len).map(|_| normal.sample(&mut rng)).collect();
                Ok(LayerParams {
                    weights: Tensor::new(shape, weights)?,
                    bias: Tensor::zeros(vec![l.kind.outputs()])?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let n = layers.len();
        Ok(Self {
            name: name.into(),
            input_shape,
            layers,
            shapes,
            params,
            weight_masks: vec![None; n],
            fv_mode: FvMode::Max,
            meta: TrainingMeta { seed, epochs_completed: 0 },
        })
    }

    /// Assembles a network from existing parameters (checkpoint loading).
    pub fn from_parts(
        name: &str,
        input_shape: [usize; 3],
        layers: Vec<LayerSpec>,
        params: Vec<LayerParams>,
        fv_mode: FvMode,
        meta: TrainingMeta,
    ) -> Result<Self> {
        let shapes = infer_shapes(input_shape, &layers)?;
        if params.len() != layers.len() {
            return Err(Error::Shape(format!("{} layers but {} parameter sets", layers.len(), params.len())));
        }
        for (l, p) in layers.iter().zip(&params) {
            if p.weights.shape() != l.kind.weight_shape().as_slice() || p.bias.len() != l.kind.outputs() {
                return Err(Error::Shape(format!(
                    "parameters of {} have shape {:?}/{}, expected {:?}/{}",
                    l.name,
                    p.weights.shape(),
                    p.bias.len(),
                    l.kind.weight_shape(),
                    l.kind.outputs()
                )));
            }
            if !p.weights.all_finite() || !p.bias.all_finite() {
                return Err(Error::Numeric(format!("non-finite parameters in {}", l.name)));
            }
        }
        let n = layers.len();
        Ok(Self {
            name: name.into(),
            input_shape,
            layers,
            shapes,
            params,
            weight_masks: vec![None; n],
            fv_mode,
            meta,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.input_shape
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    pub fn output_len(&self) -> usize {
        self.shapes.last().unwrap().output_len()
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn layer(&self, i: usize) -> &LayerSpec {
        &self.layers[i]
    }

    pub fn shapes(&self) -> &[LayerShape] {
        &self.shapes
    }

    pub fn params(&self) -> &[LayerParams] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [LayerParams] {
        &mut self.params
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn is_output_layer(&self, i: usize) -> bool {
        i + 1 == self.layers.len()
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.weights.len() + p.bias.len()).sum()
    }

    pub fn fv_mode(&self) -> FvMode {
        self.fv_mode
    }

    pub fn set_fv_mode(&mut self, mode: FvMode) {
        self.fv_mode = mode;
    }

    pub fn is_trained(&self) -> bool {
        self.meta.epochs_completed > 0
    }

    /// Per-layer winner rates (`None` = unmasked).
    pub fn winner_rates(&self) -> Vec<Option<f64>> {
        self.layers.iter().map(|l| l.wta).collect()
    }

    pub fn set_winner_rates(&mut self, rates: &[Option<f64>]) -> Result<()> {
        if rates.len() != self.layers.len() {
            return Err(Error::Shape(format!(
                "{} winner rates for {} layers",
                rates.len(),
                self.layers.len()
            )));
        }
        let mut layers = self.layers.clone();
        for (l, &r) in layers.iter_mut().zip(rates) {
            l.wta = r;
        }
        infer_shapes(self.input_shape, &layers)?;
        self.layers = layers;
        Ok(())
    }

    pub fn clear_winner_rates(&mut self) {
        for l in &mut self.layers {
            l.wta = None;
        }
    }

    /// Layers that may carry a WTA mask: every hidden layer with a ReLU output.
    pub fn maskable_layers(&self) -> Vec<usize> {
        (0..self.layers.len())
            .filter(|&i| !self.is_output_layer(i) && self.layers[i].relu)
            .collect()
    }

    pub fn weight_mask(&self, layer: usize) -> Option<&[bool]> {
        self.weight_masks[layer].as_deref()
    }

    /// Pins the listed weights: entries with `false` are zeroed now and kept
    /// at zero by every later SGD step.
    pub fn set_weight_mask(&mut self, layer: usize, keep: Vec<bool>) -> Result<()> {
        let w = &mut self.params[layer].weights;
        if keep.len() != w.len() {
            return Err(Error::Shape(format!("weight mask of {} for {} weights", keep.len(), w.len())));
        }
        for (v, &k) in w.data_mut().iter_mut().zip(&keep) {
            if !k {
                *v = 0.0;
            }
        }
        self.weight_masks[layer] = Some(keep);
        Ok(())
    }

    pub fn has_weight_masks(&self) -> bool {
        self.weight_masks.iter().any(Option::is_some)
    }
}

/// One of the reference architectures, freshly initialized from `seed`.
pub fn build_network(name: NetName, seed: u64) -> Network {
    let layers = match name {
        NetName::Mlp3 => vec![
            LayerSpec::fc("fc1", 784, 300, true),
            LayerSpec::fc("fc2", 300, 100, true),
            LayerSpec::fc("fc3", 100, 10, false),
        ],
        NetName::LeNet4 => vec![
            LayerSpec::conv("conv1", 5, 1, 32, 2),
            LayerSpec::conv("conv2", 5, 32, 64, 2),
            LayerSpec::fc("fc1", 3136, 1024, true),
            LayerSpec::fc("fc2", 1024, 10, false),
        ],
        NetName::ConvNet5 => vec![
            LayerSpec::conv("conv1", 5, 3, 64, 2),
            LayerSpec::conv("conv2", 5, 64, 64, 2),
            LayerSpec::fc("fc1", 2304, 384, true),
            LayerSpec::fc("fc2", 384, 192, true),
            LayerSpec::fc("fc3", 192, 10, false),
        ],
    };
    Network::new(&name.to_string(), name.input_shape(), layers, seed)
        .expect("reference architectures are well-formed")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mlp3_parameter_count() {
        let net = build_network(NetName::Mlp3, 0);
        assert_eq!(net.parameter_count(), 784 * 300 + 300 + 300 * 100 + 100 + 100 * 10 + 10);
        assert_eq!(net.parameter_count(), 266_610);
    }

    #[test]
    fn reference_fc_inputs_follow_from_pooling() {
        let lenet = build_network(NetName::LeNet4, 0);
        assert_eq!(lenet.shapes()[1].output, [7, 7, 64]);
        assert_eq!(lenet.shapes()[2].input_len(), 3136);
        let convnet = build_network(NetName::ConvNet5, 0);
        assert_eq!(convnet.shapes()[2].input_len(), 2304);
        assert_eq!(convnet.shapes()[1].activation, [12, 12, 64]);
        assert_eq!(convnet.output_len(), 10);
    }

    #[test]
    fn names_parse() {
        assert_eq!("MLP-3".parse::<NetName>().unwrap(), NetName::Mlp3);
        assert_eq!("lenet4".parse::<NetName>().unwrap(), NetName::LeNet4);
        assert_eq!("ConvNet_5".parse::<NetName>().unwrap(), NetName::ConvNet5);
        assert!("alexnet".parse::<NetName>().is_err());
    }

    #[test]
    fn initialization_is_seeded() {
        let a = build_network(NetName::Mlp3, 5);
        let b = build_network(NetName::Mlp3, 5);
        let c = build_network(NetName::Mlp3, 6);
        assert_eq!(a, b);
        assert_ne!(a.params()[0], c.params()[0]);
        assert!(a.params().iter().all(|p| p.bias.data().iter().all(|&v| v == 0.0)));
        let w = a.params()[0].weights.data();
        let var = w.iter().map(|&v| (v as f64).powi(2)).sum::<f64>() / w.len() as f64;
        assert!((var - 2.0 / 784.0).abs() < 0.1 * 2.0 / 784.0, "variance {var}");
    }

    #[test]
    fn output_layer_rejects_masks() {
        let mut net = build_network(NetName::Mlp3, 0);
        assert!(net.set_winner_rates(&[Some(0.5), Some(0.5), Some(0.5)]).is_err());
        assert!(net.set_winner_rates(&[Some(0.5), Some(1.5), None]).is_err());
        net.set_winner_rates(&[Some(0.5), Some(0.2), None]).unwrap();
        assert_eq!(net.winner_rates(), vec![Some(0.5), Some(0.2), None]);
        assert_eq!(net.maskable_layers(), vec![0, 1]);
    }

    #[test]
    fn mismatched_layers_are_rejected() {
        let layers = vec![LayerSpec::fc("a", 10, 5, true), LayerSpec::fc("b", 6, 2, false)];
        assert!(Network::new("x", [1, 1, 10], layers, 0).is_err());
    }
}
