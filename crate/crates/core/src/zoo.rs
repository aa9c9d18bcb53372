//! Architecture builders: the shallow and cloud CIFAR-10 networks, the
//! split-tower shallow network and the two-tower first layer it feeds.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::kernels::ConvSpec;
use crate::model::{bias_name, Layer, ModelGraph};
use crate::tensor::Tensor;

pub const CIFAR_INPUT: [usize; 3] = [3, 32, 32];
pub const CIFAR_CLASSES: usize = 10;
pub const CLOUD_CONV_FILTERS: [usize; 6] = [32, 32, 64, 64, 128, 128];
pub const CLOUD_FC_WIDTH: usize = 512;
pub const SHALLOW_SECOND_CONV_FILTERS: usize = 32;

pub const TOWER_INPUT: [usize; 3] = [3, 227, 227];
pub const TOWER_CLASSES: usize = 1000;
pub const TOWER_SECOND_CONV_FILTERS: usize = 32;
pub const ALEXNET_TOWER_FILTERS: usize = 48;
pub const ALEXNET_FILTER_SIZE: usize = 11;
pub const ALEXNET_STRIDE: usize = 4;

/// Identifies how a [`ModelGraph`] was built, so a checkpoint can rebuild it.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Architecture {
    ShallowCifar { first_layer_filters: usize },
    CloudCifar,
    ShallowTower { filter_size: usize, first_layer_filters: usize },
    AlexNetStem,
    /// Hand-assembled graphs; not rebuildable from a tag.
    Custom(String),
}

impl Architecture {
    pub fn build(&self) -> Result<ModelGraph> {
        match self {
            Architecture::ShallowCifar { first_layer_filters } => build_shallow_cifar(*first_layer_filters),
            Architecture::CloudCifar => build_cloud_cifar(),
            Architecture::ShallowTower { filter_size, first_layer_filters } => {
                build_shallow_tower(*filter_size, *first_layer_filters)
            }
            Architecture::AlexNetStem => build_alexnet_stem(),
            Architecture::Custom(name) => Err(Error::Structure(format!(
                "custom architecture {name} cannot be rebuilt from its tag"
            ))),
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Architecture::ShallowCifar { first_layer_filters } => write!(f, "shallow-cifar:{first_layer_filters}"),
            Architecture::CloudCifar => write!(f, "cloud-cifar"),
            Architecture::ShallowTower { filter_size, first_layer_filters } => {
                write!(f, "shallow-tower:{filter_size}:{first_layer_filters}")
            }
            Architecture::AlexNetStem => write!(f, "alexnet-stem"),
            Architecture::Custom(name) => write!(f, "custom:{name}"),
        }
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::config(format!("unknown architecture tag {s:?}"));
        let num = |p: &str| p.parse::<usize>().map_err(|_| bad());
        let parts: Vec<&str> = s.split(':').collect();
        match parts.as_slice() {
            ["shallow-cifar", n] => Ok(Architecture::ShallowCifar { first_layer_filters: num(n)? }),
            ["cloud-cifar"] => Ok(Architecture::CloudCifar),
            ["shallow-tower", fs, n] => Ok(Architecture::ShallowTower {
                filter_size: num(fs)?,
                first_layer_filters: num(n)?,
            }),
            ["alexnet-stem"] => Ok(Architecture::AlexNetStem),
            ["custom", name] => Ok(Architecture::Custom((*name).to_string())),
            _ => Err(bad()),
        }
    }
}

/// Two 3×3 convolutions, one 2×2 pool, one linear classifier.
pub fn build_shallow_cifar(first_layer_filters: usize) -> Result<ModelGraph> {
    if first_layer_filters == 0 {
        return Err(Error::config("first_layer_filters must be at least 1"));
    }
    let [c, h, w] = CIFAR_INPUT;
    let layers = vec![
        Layer::Conv { name: "conv1".into(), spec: ConvSpec::same(3, c, first_layer_filters) },
        Layer::Relu,
        Layer::Conv {
            name: "conv2".into(),
            spec: ConvSpec::same(3, first_layer_filters, SHALLOW_SECOND_CONV_FILTERS),
        },
        Layer::Relu,
        Layer::MaxPool { window: 2, stride: 2 },
        Layer::Flatten,
        Layer::Dense {
            name: "fc1".into(),
            inputs: SHALLOW_SECOND_CONV_FILTERS * (h / 2) * (w / 2),
            outputs: CIFAR_CLASSES,
        },
    ];
    ModelGraph::new(
        Architecture::ShallowCifar { first_layer_filters },
        CIFAR_INPUT.to_vec(),
        layers,
    )
}

/// `[[conv → relu] × 2 → pool] × 3 → fc(512) → relu → fc(10)`.
pub fn build_cloud_cifar() -> Result<ModelGraph> {
    let [mut c, mut h, mut w] = CIFAR_INPUT;
    let mut layers = Vec::new();
    for (i, &filters) in CLOUD_CONV_FILTERS.iter().enumerate() {
        layers.push(Layer::Conv {
            name: format!("conv{}", i + 1),
            spec: ConvSpec::same(3, c, filters),
        });
        layers.push(Layer::Relu);
        c = filters;
        if i % 2 == 1 {
            layers.push(Layer::MaxPool { window: 2, stride: 2 });
            h /= 2;
            w /= 2;
        }
    }
    layers.extend([
        Layer::Flatten,
        Layer::Dense { name: "fc1".into(), inputs: c * h * w, outputs: CLOUD_FC_WIDTH },
        Layer::Relu,
        Layer::Dense { name: "fc2".into(), inputs: CLOUD_FC_WIDTH, outputs: CIFAR_CLASSES },
    ]);
    ModelGraph::new(Architecture::CloudCifar, CIFAR_INPUT.to_vec(), layers)
}

pub fn tower_first_layer_name(tower: usize) -> String {
    format!("tower{}.conv1", tower + 1)
}

fn tower_first_conv(filter_size: usize, filters: usize) -> ConvSpec {
    ConvSpec {
        filter_h: filter_size,
        filter_w: filter_size,
        in_channels: TOWER_INPUT[0],
        out_channels: filters,
        stride: ALEXNET_STRIDE,
        padding: 0,
    }
}

/// Shallow network with two parallel towers, each opening with a large
/// strided convolution, joined by a single classifier over 1000 classes.
pub fn build_shallow_tower(filter_size: usize, first_layer_filters: usize) -> Result<ModelGraph> {
    if first_layer_filters == 0 || filter_size == 0 {
        return Err(Error::config("tower filter size and count must be at least 1"));
    }
    let towers = (0..2)
        .map(|t| {
            vec![
                Layer::Conv {
                    name: tower_first_layer_name(t),
                    spec: tower_first_conv(filter_size, first_layer_filters),
                },
                Layer::Relu,
                Layer::MaxPool { window: 3, stride: 2 },
                Layer::Conv {
                    name: format!("tower{}.conv2", t + 1),
                    spec: ConvSpec::same(5, first_layer_filters, TOWER_SECOND_CONV_FILTERS),
                },
                Layer::Relu,
                Layer::MaxPool { window: 3, stride: 2 },
            ]
        })
        .collect();
    let arch = Architecture::ShallowTower { filter_size, first_layer_filters };
    let probe = ModelGraph::new(arch.clone(), TOWER_INPUT.to_vec(), vec![Layer::Towers { towers }])?;
    let flat: usize = probe.output_shape()?.iter().product();
    let mut layers = probe.layers;
    layers.extend([
        Layer::Flatten,
        Layer::Dense { name: "fc1".into(), inputs: flat, outputs: TOWER_CLASSES },
    ]);
    ModelGraph::new(arch, TOWER_INPUT.to_vec(), layers)
}

/// The split first layer of an AlexNet-style network: two towers of
/// 48 filters of 11×11, stride 4. Only the geometry needed for injection.
pub fn build_alexnet_stem() -> Result<ModelGraph> {
    let towers = (0..2)
        .map(|t| {
            vec![
                Layer::Conv {
                    name: tower_first_layer_name(t),
                    spec: tower_first_conv(ALEXNET_FILTER_SIZE, ALEXNET_TOWER_FILTERS),
                },
                Layer::Relu,
            ]
        })
        .collect();
    ModelGraph::new(Architecture::AlexNetStem, TOWER_INPUT.to_vec(), vec![Layer::Towers { towers }])
}

/// Draws every weight from a zero-mean Gaussian with variance `2 / fan_in`
/// and zeroes every bias. Layers are visited in execution order, so a given
/// RNG state always yields the same parameters.
pub fn init_random(mut model: ModelGraph, rng: &mut impl Rng) -> ModelGraph {
    for slot in model.param_slots() {
        let std = (2.0 / slot.fan_in as f32).sqrt();
        let normal = Normal::new(0.0f32, std).expect("positive standard deviation");
        let weights = Tensor::from_fn(slot.weight_shape.clone(), |_| normal.sample(rng));
        model.params.insert(slot.name.clone(), weights);
        model.params.insert(bias_name(&slot.name), Tensor::zeros([slot.bias_len]));
    }
    model
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn shallow_first_layer_follows_filter_count() {
        let g = build_shallow_cifar(8).unwrap();
        assert_eq!(g.params["conv1"].shape(), &[8, 3, 3, 3]);
        assert_eq!(g.params["conv2"].shape(), &[32, 8, 3, 3]);
        assert_eq!(g.output_shape().unwrap(), vec![10]);
        let g = build_shallow_cifar(2).unwrap();
        assert_eq!(g.params["conv1"].shape(), &[2, 3, 3, 3]);
        assert!(build_shallow_cifar(0).is_err());
    }

    #[test]
    fn cloud_layout() {
        let g = build_cloud_cifar().unwrap();
        assert_eq!(g.params["conv1"].shape(), &[32, 3, 3, 3]);
        assert_eq!(g.count_layers(|l| matches!(l, Layer::Conv { .. })), 6);
        assert_eq!(g.count_layers(|l| matches!(l, Layer::MaxPool { .. })), 3);
        assert_eq!(g.count_layers(|l| matches!(l, Layer::Dense { .. })), 2);
        assert_eq!(g.params["fc1"].shape(), &[128 * 4 * 4, 512]);
        assert_eq!(g.params["fc2"].shape(), &[512, 10]);
        let filters: Vec<_> = (1..=6).map(|i| g.params[&format!("conv{i}")].dim(0)).collect();
        assert_eq!(filters, CLOUD_CONV_FILTERS);
    }

    #[test]
    fn tower_geometry() {
        let g = build_shallow_tower(11, 12).unwrap();
        assert_eq!(g.params["tower1.conv1"].shape(), &[12, 3, 11, 11]);
        assert_eq!(g.params["tower2.conv1"].shape(), &[12, 3, 11, 11]);
        assert_eq!(g.output_shape().unwrap(), vec![TOWER_CLASSES]);
        let stem = build_alexnet_stem().unwrap();
        assert_eq!(stem.params["tower1.conv1"].shape(), &[48, 3, 11, 11]);
        assert_eq!(stem.output_shape().unwrap(), vec![96, 55, 55]);
        assert_eq!(ALEXNET_TOWER_FILTERS / 12, 4);
    }

    #[test]
    fn architecture_tags_round_trip() {
        for arch in [
            Architecture::ShallowCifar { first_layer_filters: 4 },
            Architecture::CloudCifar,
            Architecture::ShallowTower { filter_size: 11, first_layer_filters: 12 },
            Architecture::AlexNetStem,
            Architecture::Custom("x".into()),
        ] {
            assert_eq!(arch.to_string().parse::<Architecture>().unwrap(), arch);
        }
        assert!("cloud".parse::<Architecture>().is_err());
    }

    #[test]
    fn rebuilding_is_stable() {
        for arch in [Architecture::ShallowCifar { first_layer_filters: 8 }, Architecture::CloudCifar] {
            let a = arch.build().unwrap();
            let b = arch.build().unwrap();
            assert_eq!(a.layers, b.layers);
            assert_eq!(a.params, b.params);
        }
    }

    #[test]
    fn init_is_seeded_and_zeroes_biases() {
        let a = init_random(build_cloud_cifar().unwrap(), &mut ChaCha8Rng::seed_from_u64(3));
        let b = init_random(build_cloud_cifar().unwrap(), &mut ChaCha8Rng::seed_from_u64(3));
        assert!(a.params.iter().zip(&b.params).all(|((_, x), (_, y))| x.bitwise_eq(y)));
        for (name, t) in &a.params {
            if name.ends_with(".bias") {
                assert!(t.data().iter().all(|&v| v == 0.0), "{name}");
            }
        }
    }

    #[test]
    fn init_variance_matches_fan_in() {
        let g = init_random(build_cloud_cifar().unwrap(), &mut ChaCha8Rng::seed_from_u64(11));
        for (name, fan_in) in [("conv3", 32.0 * 9.0), ("conv4", 64.0 * 9.0), ("fc1", 2048.0)] {
            let w = g.params[name].data();
            assert!(w.len() >= 10_000);
            let n = w.len() as f64;
            let mean = w.iter().map(|&v| v as f64).sum::<f64>() / n;
            let var = w.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
            let target = 2.0 / fan_in;
            assert!((var / target - 1.0).abs() < 0.2, "{name}: {var} vs {target}");
        }
    }
}
