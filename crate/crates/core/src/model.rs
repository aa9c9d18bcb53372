//! Sequential layer graphs with named parameters, plus the forward and
//! backward passes that drive training.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{self, ConvSpec, DropoutMask};
use crate::tensor::Tensor;
use crate::zoo::Architecture;

/// Parameter tensors keyed by stable name: `"conv1"`, `"conv1.bias"`, `"fc1"`, ...
pub type Params = BTreeMap<String, Tensor>;

pub fn bias_name(layer: &str) -> String {
    format!("{layer}.bias")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Layer {
    Conv { name: String, spec: ConvSpec },
    Relu,
    MaxPool { window: usize, stride: usize },
    Dropout { keep_prob: f32 },
    Flatten,
    Dense { name: String, inputs: usize, outputs: usize },
    /// Parallel branches fed the same input; outputs are concatenated along channels.
    Towers { towers: Vec<Vec<Layer>> },
}

/// A parameterised layer's name, fan-in, weight shape and bias length.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSlot {
    pub name: String,
    pub fan_in: usize,
    pub weight_shape: Vec<usize>,
    pub bias_len: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelGraph {
    pub arch: Architecture,
    /// Per-sample input shape `[C, H, W]`.
    pub input_shape: Vec<usize>,
    pub layers: Vec<Layer>,
    pub params: Params,
}

#[derive(Debug)]
enum Cache {
    Conv { input: Tensor },
    Relu { input: Tensor },
    Pool { argmax: Vec<usize>, input_shape: Vec<usize> },
    Dropout { mask: Option<DropoutMask> },
    Flatten { shape: Vec<usize> },
    Dense { input: Tensor },
    Towers { tapes: Vec<Vec<Cache>>, channels: Vec<usize> },
}

/// Activations recorded by a training-mode forward pass.
#[derive(Debug)]
pub struct Tape {
    caches: Vec<Cache>,
}

impl ModelGraph {
    /// Builds a graph with zero-filled parameters and validates that its
    /// layers compose on `input_shape`.
    pub fn new(arch: Architecture, input_shape: Vec<usize>, layers: Vec<Layer>) -> Result<Self> {
        let mut graph = Self {
            arch,
            input_shape,
            layers,
            params: Params::new(),
        };
        graph.output_shape()?;
        for slot in graph.param_slots() {
            if graph.params.contains_key(&slot.name) {
                return Err(Error::Structure(format!("duplicate parameter name {}", slot.name)));
            }
            graph.params.insert(slot.name.clone(), Tensor::zeros(slot.weight_shape.clone()));
            graph.params.insert(bias_name(&slot.name), Tensor::zeros([slot.bias_len]));
        }
        Ok(graph)
    }

    /// Parameterised layers in execution order.
    pub fn param_slots(&self) -> Vec<ParamSlot> {
        fn walk(layers: &[Layer], out: &mut Vec<ParamSlot>) {
            for layer in layers {
                match layer {
                    Layer::Conv { name, spec } => out.push(ParamSlot {
                        name: name.clone(),
                        fan_in: spec.fan_in(),
                        weight_shape: spec.weight_shape().to_vec(),
                        bias_len: spec.out_channels,
                    }),
                    Layer::Dense { name, inputs, outputs } => out.push(ParamSlot {
                        name: name.clone(),
                        fan_in: *inputs,
                        weight_shape: vec![*inputs, *outputs],
                        bias_len: *outputs,
                    }),
                    Layer::Towers { towers } => towers.iter().for_each(|t| walk(t, out)),
                    _ => {}
                }
            }
        }
        let mut out = Vec::new();
        walk(&self.layers, &mut out);
        out
    }

    pub fn conv_spec(&self, name: &str) -> Option<ConvSpec> {
        fn find(layers: &[Layer], name: &str) -> Option<ConvSpec> {
            layers.iter().find_map(|layer| match layer {
                Layer::Conv { name: n, spec } if n == name => Some(*spec),
                Layer::Towers { towers } => towers.iter().find_map(|t| find(t, name)),
                _ => None,
            })
        }
        find(&self.layers, name)
    }

    /// Per-sample output shape, or a configuration error naming the first
    /// layer that does not compose.
    pub fn output_shape(&self) -> Result<Vec<usize>> {
        compose(&self.layers, self.input_shape.clone())
    }

    pub fn count_layers(&self, pred: impl Fn(&Layer) -> bool + Copy) -> usize {
        fn walk(layers: &[Layer], pred: impl Fn(&Layer) -> bool + Copy) -> usize {
            layers
                .iter()
                .map(|l| match l {
                    Layer::Towers { towers } => towers.iter().map(|t| walk(t, pred)).sum(),
                    other => usize::from(pred(other)),
                })
                .sum()
        }
        walk(&self.layers, pred)
    }

    /// Returns a copy whose dropout layers follow the given keep
    /// probabilities: after every ReLU fed by a convolution and after every
    /// ReLU fed by a fully connected layer. A keep probability of 1 omits
    /// the layer.
    pub fn with_dropout(&self, conv_keep: f32, fc_keep: f32) -> Result<Self> {
        for p in [conv_keep, fc_keep] {
            if !(p > 0.0 && p <= 1.0) {
                return Err(Error::config(format!(
                    "dropout keep probability must lie in (0, 1], got {p}"
                )));
            }
        }
        fn rebuild(layers: &[Layer], conv_keep: f32, fc_keep: f32) -> Vec<Layer> {
            let mut out = Vec::with_capacity(layers.len());
            let mut last_param: Option<bool> = None; // Some(true) = conv, Some(false) = dense
            for layer in layers {
                match layer {
                    Layer::Dropout { .. } => continue,
                    Layer::Conv { .. } => last_param = Some(true),
                    Layer::Dense { .. } => last_param = Some(false),
                    _ => {}
                }
                if let Layer::Towers { towers } = layer {
                    out.push(Layer::Towers {
                        towers: towers.iter().map(|t| rebuild(t, conv_keep, fc_keep)).collect(),
                    });
                    continue;
                }
                out.push(layer.clone());
                if matches!(layer, Layer::Relu) {
                    let keep = match last_param {
                        Some(true) => conv_keep,
                        Some(false) => fc_keep,
                        None => 1.0,
                    };
                    if keep < 1.0 {
                        out.push(Layer::Dropout { keep_prob: keep });
                    }
                }
            }
            out
        }
        Ok(Self {
            layers: rebuild(&self.layers, conv_keep, fc_keep),
            ..self.clone()
        })
    }

    /// Replaces parameters from `params`, which must contain exactly the
    /// graph's names with matching shapes.
    pub fn load_params(&mut self, params: Params) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::Structure(format!(
                "expected {} parameter tensors, got {}",
                self.params.len(),
                params.len()
            )));
        }
        for (name, t) in &params {
            let current = self
                .params
                .get(name)
                .ok_or_else(|| Error::Structure(format!("unexpected parameter {name}")))?;
            if current.shape() != t.shape() {
                return Err(Error::Structure(format!(
                    "parameter {name} has shape {:?}, model expects {:?}",
                    t.shape(),
                    current.shape()
                )));
            }
        }
        self.params = params;
        Ok(())
    }

    fn check_input(&self, input: &Tensor) -> Result<()> {
        if input.rank() != self.input_shape.len() + 1 || input.shape()[1..] != self.input_shape[..] {
            return Err(Error::config(format!(
                "model expects inputs [N, {:?}], got {:?}",
                self.input_shape,
                input.shape()
            )));
        }
        Ok(())
    }

    /// Inference pass: dropout disabled, no activations retained.
    pub fn predict(&self, input: &Tensor) -> Result<Tensor> {
        self.check_input(input)?;
        let (out, _) = run(&self.layers, &self.params, input.clone(), None::<&mut rand_chacha::ChaCha8Rng>, false)?;
        Ok(out)
    }

    /// Training pass: dropout active, activations recorded for [`Self::backward`].
    pub fn forward_train(&self, input: &Tensor, rng: &mut impl Rng) -> Result<(Tensor, Tape)> {
        self.check_input(input)?;
        let (out, caches) = run(&self.layers, &self.params, input.clone(), Some(rng), true)?;
        Ok((out, Tape { caches }))
    }

    /// Forward pass recording activations but with dropout disabled.
    pub fn forward_record(&self, input: &Tensor) -> Result<(Tensor, Tape)> {
        self.check_input(input)?;
        let (out, caches) = run(&self.layers, &self.params, input.clone(), None::<&mut rand_chacha::ChaCha8Rng>, true)?;
        Ok((out, Tape { caches }))
    }

    /// Gradients of every parameter, and of the input, given the gradient
    /// of the loss with respect to the model output.
    pub fn backward(&self, tape: &Tape, grad_output: &Tensor) -> Result<(Params, Tensor)> {
        let mut grads = Params::new();
        let grad_input = back(&self.layers, &self.params, &tape.caches, grad_output.clone(), &mut grads)?;
        Ok((grads, grad_input))
    }
}

fn compose(layers: &[Layer], mut shape: Vec<usize>) -> Result<Vec<usize>> {
    for (i, layer) in layers.iter().enumerate() {
        let fail = |msg: String| Error::config(format!("layer {i} ({}) {msg}", layer_kind(layer)));
        shape = match layer {
            Layer::Conv { spec, .. } => {
                let [c, h, w] = shape[..] else {
                    return Err(fail(format!("needs a [C, H, W] input, got {shape:?}")));
                };
                if c != spec.in_channels {
                    return Err(fail(format!("expects {} channels, got {c}", spec.in_channels)));
                }
                let (oh, ow) = spec.output_hw(h, w).map_err(|e| fail(e.to_string()))?;
                vec![spec.out_channels, oh, ow]
            }
            Layer::MaxPool { window, stride } => {
                let [c, h, w] = shape[..] else {
                    return Err(fail(format!("needs a [C, H, W] input, got {shape:?}")));
                };
                if h < *window || w < *window || *stride == 0 {
                    return Err(fail(format!("window {window} does not fit {h}x{w}")));
                }
                vec![c, (h - window) / stride + 1, (w - window) / stride + 1]
            }
            Layer::Relu | Layer::Dropout { .. } => shape,
            Layer::Flatten => vec![shape.iter().product()],
            Layer::Dense { inputs, outputs, .. } => {
                if shape != [*inputs] {
                    return Err(fail(format!("expects [{inputs}], got {shape:?}")));
                }
                vec![*outputs]
            }
            Layer::Towers { towers } => {
                let mut channels = 0;
                let mut spatial: Option<Vec<usize>> = None;
                for t in towers {
                    let out = compose(t, shape.clone())?;
                    if out.len() != 3 {
                        return Err(fail(format!("tower output {out:?} is not [C, H, W]")));
                    }
                    if spatial.as_ref().is_some_and(|s| s[..] != out[1..]) {
                        return Err(fail("towers disagree on spatial size".into()));
                    }
                    channels += out[0];
                    spatial = Some(out[1..].to_vec());
                }
                let spatial = spatial.ok_or_else(|| fail("has no towers".into()))?;
                vec![channels, spatial[0], spatial[1]]
            }
        };
    }
    Ok(shape)
}

fn layer_kind(layer: &Layer) -> &'static str {
    match layer {
        Layer::Conv { .. } => "conv",
        Layer::Relu => "relu",
        Layer::MaxPool { .. } => "maxpool",
        Layer::Dropout { .. } => "dropout",
        Layer::Flatten => "flatten",
        Layer::Dense { .. } => "dense",
        Layer::Towers { .. } => "towers",
    }
}

fn param<'a>(params: &'a Params, name: &str) -> Result<&'a Tensor> {
    params
        .get(name)
        .ok_or_else(|| Error::Structure(format!("missing parameter {name}")))
}

fn run<R: Rng>(
    layers: &[Layer],
    params: &Params,
    mut x: Tensor,
    mut rng: Option<&mut R>,
    record: bool,
) -> Result<(Tensor, Vec<Cache>)> {
    let mut caches = Vec::with_capacity(if record { layers.len() } else { 0 });
    for layer in layers {
        let (y, cache) = match layer {
            Layer::Conv { name, spec } => {
                let y = kernels::conv2d_forward(&x, param(params, name)?, param(params, &bias_name(name))?, spec)?;
                (y, record.then_some(Cache::Conv { input: x }))
            }
            Layer::Relu => {
                let y = kernels::relu(&x);
                (y, record.then_some(Cache::Relu { input: x }))
            }
            Layer::MaxPool { window, stride } => {
                let pooled = kernels::maxpool2d(&x, *window, *stride)?;
                let cache = record.then(|| Cache::Pool {
                    argmax: pooled.argmax,
                    input_shape: x.shape().to_vec(),
                });
                (pooled.output, cache)
            }
            Layer::Dropout { keep_prob } => {
                let (y, mask) = match rng.as_deref_mut() {
                    Some(r) => kernels::dropout(&x, *keep_prob, r, true)?,
                    None => (x, None),
                };
                (y, record.then_some(Cache::Dropout { mask }))
            }
            Layer::Flatten => {
                let shape = x.shape().to_vec();
                let n = shape[0];
                let y = x.reshape([n, shape[1..].iter().product()])?;
                (y, record.then_some(Cache::Flatten { shape }))
            }
            Layer::Dense { name, .. } => {
                let y = kernels::fully_connected(&x, param(params, name)?, param(params, &bias_name(name))?)?;
                (y, record.then_some(Cache::Dense { input: x }))
            }
            Layer::Towers { towers } => {
                let mut outs = Vec::with_capacity(towers.len());
                let mut tapes = Vec::with_capacity(towers.len());
                for t in towers {
                    let (o, c) = run(t, params, x.clone(), rng.as_deref_mut(), record)?;
                    outs.push(o);
                    tapes.push(c);
                }
                let channels = outs.iter().map(|o| o.dim(1)).collect();
                let y = concat_channels(&outs)?;
                (y, record.then_some(Cache::Towers { tapes, channels }))
            }
        };
        if let Some(c) = cache {
            caches.push(c);
        }
        x = y;
    }
    Ok((x, caches))
}

fn back(layers: &[Layer], params: &Params, caches: &[Cache], mut g: Tensor, grads: &mut Params) -> Result<Tensor> {
    if caches.len() != layers.len() {
        return Err(Error::Structure("tape does not match the layer list".into()));
    }
    for (layer, cache) in layers.iter().zip(caches).rev() {
        g = match (layer, cache) {
            (Layer::Conv { name, spec }, Cache::Conv { input }) => {
                let cg = kernels::conv2d_backward(&g, input, param(params, name)?, spec)?;
                grads.insert(name.clone(), cg.weights);
                grads.insert(bias_name(name), cg.bias);
                cg.input
            }
            (Layer::Relu, Cache::Relu { input }) => kernels::relu_backward(&g, input)?,
            (Layer::MaxPool { .. }, Cache::Pool { argmax, input_shape }) => {
                kernels::maxpool2d_backward(&g, argmax, input_shape)?
            }
            (Layer::Dropout { .. }, Cache::Dropout { mask }) => match mask {
                Some(m) => m.backward(&g)?,
                None => g,
            },
            (Layer::Flatten, Cache::Flatten { shape }) => g.reshape(shape.clone())?,
            (Layer::Dense { name, .. }, Cache::Dense { input }) => {
                let lg = kernels::fully_connected_backward(&g, input, param(params, name)?)?;
                grads.insert(name.clone(), lg.weights);
                grads.insert(bias_name(name), lg.bias);
                lg.input
            }
            (Layer::Towers { towers }, Cache::Towers { tapes, channels }) => {
                let parts = split_channels(&g, channels)?;
                let mut total: Option<Tensor> = None;
                for ((t, tape), part) in towers.iter().zip(tapes).zip(parts) {
                    let gi = back(t, params, tape, part, grads)?;
                    total = Some(match total {
                        None => gi,
                        Some(mut acc) => {
                            acc.data_mut().iter_mut().zip(gi.data()).for_each(|(a, b)| *a += b);
                            acc
                        }
                    });
                }
                total.ok_or_else(|| Error::Structure("towers layer without towers".into()))?
            }
            _ => return Err(Error::Structure("tape entry does not match its layer".into())),
        };
    }
    Ok(g)
}

fn concat_channels(parts: &[Tensor]) -> Result<Tensor> {
    let first = parts.first().ok_or_else(|| Error::config("nothing to concatenate"))?;
    let (n, h, w) = (first.dim(0), first.dim(2), first.dim(3));
    let total_c: usize = parts.iter().map(|p| p.dim(1)).sum();
    let mut data = Vec::with_capacity(n * total_c * h * w);
    for i in 0..n {
        for p in parts {
            let block = p.dim(1) * h * w;
            data.extend_from_slice(&p.data()[i * block..(i + 1) * block]);
        }
    }
    Tensor::new([n, total_c, h, w], data)
}

fn split_channels(g: &Tensor, channels: &[usize]) -> Result<Vec<Tensor>> {
    let (n, c, h, w) = (g.dim(0), g.dim(1), g.dim(2), g.dim(3));
    if channels.iter().sum::<usize>() != c {
        return Err(Error::Structure("channel split does not cover the gradient".into()));
    }
    let hw = h * w;
    let mut out = Vec::with_capacity(channels.len());
    let mut offset = 0;
    for &ch in channels {
        let mut data = Vec::with_capacity(n * ch * hw);
        for i in 0..n {
            let start = (i * c + offset) * hw;
            data.extend_from_slice(&g.data()[start..start + ch * hw]);
        }
        out.push(Tensor::new([n, ch, h, w], data)?);
        offset += ch;
    }
    Ok(out)
}
