//! Dense layers shared by the encoder, heads, policy and domain classifier.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{ops, ParamGroup, Parameter, Value};
use crate::error::Result;

/// Independent RNG streams derived from one run seed, so that e.g. the
/// policy's sampling never perturbs parameter initialisation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    EncoderInit = 1,
    HeadInit = 2,
    PolicyInit = 3,
    DomainInit = 4,
    Shuffle = 5,
    Selection = 6,
    Synth = 7,
    Split = 8,
    Sweep = 9,
    Probe = 10,
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialisation.
pub fn uniform_init(rows: usize, cols: usize, fan_in: usize, rng: &mut impl Rng) -> Array2<f64> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-bound..bound))
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Parameter,
    pub bias: Parameter,
}

impl Linear {
    pub fn new(name: &str, group: ParamGroup, fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        let weight = uniform_init(fan_in, fan_out, fan_in, rng);
        let bias = uniform_init(1, fan_out, fan_in, rng);
        Linear {
            weight: Parameter::new(format!("{name}.weight"), group, weight),
            bias: Parameter::new(format!("{name}.bias"), group, bias),
        }
    }

    pub fn forward(&self, x: &Value) -> Result<Value> {
        ops::add_bias(&ops::matmul(x, &self.weight.value)?, &self.bias.value)
    }

    pub fn in_dim(&self) -> usize {
        self.weight.value.shape().0
    }

    pub fn out_dim(&self) -> usize {
        self.weight.value.shape().1
    }
}

/// Feed-forward stack with ReLU between layers and a linear output.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    pub fn new(name: &str, group: ParamGroup, sizes: &[usize], rng: &mut impl Rng) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs at least input and output sizes");
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(&format!("{name}.{i}"), group, w[0], w[1], rng))
            .collect();
        Mlp { layers }
    }

    pub fn forward(&self, x: &Value) -> Result<Value> {
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(&h)?;
            if i + 1 < self.layers.len() {
                h = ops::relu(&h)?;
            }
        }
        Ok(h)
    }

    pub fn parameters(&self) -> Vec<Parameter> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.clone(), l.bias.clone()])
            .collect()
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim()
    }
}
