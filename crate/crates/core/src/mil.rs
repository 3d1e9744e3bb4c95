//! The multiple-instance prediction branch: encoder, pooling and classifier.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::autodiff::{ops, Axis, ParamGroup, Parameter, Value};
use crate::error::{Error, Result};
use crate::nn::{uniform_init, Mlp};

/// Row-wise MLP applied to every instance embedding before pooling. ReLU
/// between layers, linear output.
#[derive(Debug, Clone)]
pub struct EncoderNet {
    pub mlp: Mlp,
}

impl EncoderNet {
    pub fn new(sizes: &[usize], rng: &mut impl Rng) -> Result<Self> {
        if sizes.len() < 2 || sizes[0] != *sizes.last().unwrap() {
            return Err(Error::Config(format!(
                "encoder sizes must start and end at the embedding width, got {sizes:?}"
            )));
        }
        Ok(EncoderNet {
            mlp: Mlp::new("encoder", ParamGroup::Encoder, sizes, rng),
        })
    }

    pub fn dim(&self) -> usize {
        self.mlp.in_dim()
    }

    /// Encodes `n × d` instances into `n × d` features.
    pub fn encode(&self, x: &Value) -> Result<Value> {
        let (n, d) = x.shape();
        if d != self.dim() {
            return Err(Error::shape("encode", (n, d), (n, self.dim())));
        }
        self.mlp.forward(x)
    }

    pub fn parameters(&self) -> Vec<Parameter> {
        self.mlp.parameters()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PoolKind {
    Mean,
    Max,
    Attention,
}

impl fmt::Display for PoolKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PoolKind::Mean => "mean",
            PoolKind::Max => "max",
            PoolKind::Attention => "attention",
        })
    }
}

impl FromStr for PoolKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mean" | "meanmlp" => Ok(PoolKind::Mean),
            "max" | "maxmlp" => Ok(PoolKind::Max),
            "attention" | "attentionmlp" => Ok(PoolKind::Attention),
            other => Err(Error::Config(format!("unknown pooling `{other}` (mean|max|attention)"))),
        }
    }
}

/// Tanh-gated attention scorer: `e_j = w^T tanh(V h_j)`.
#[derive(Debug, Clone)]
pub struct AttentionScorer {
    /// `d × a`
    pub v: Parameter,
    /// `a × 1`
    pub w: Parameter,
}

impl AttentionScorer {
    pub fn new(dim: usize, attention_dim: usize, rng: &mut impl Rng) -> Self {
        AttentionScorer {
            v: Parameter::new("head.attention.v", ParamGroup::Task, uniform_init(dim, attention_dim, dim, rng)),
            w: Parameter::new(
                "head.attention.w",
                ParamGroup::Task,
                uniform_init(attention_dim, 1, attention_dim, rng),
            ),
        }
    }

    /// Attention weights over the rows of `h` as a `k × 1` column.
    pub fn weights(&self, h: &Value) -> Result<Value> {
        let scores = ops::matmul(&ops::tanh(&ops::matmul(h, &self.v.value)?), &self.w.value)?;
        ops::softmax(&scores, Axis::Col)
    }
}

/// Pooling followed by the `d → hdim → C` classification MLP.
#[derive(Debug, Clone)]
pub struct PoolingHead {
    pub kind: PoolKind,
    pub attention: Option<AttentionScorer>,
    pub classifier: Mlp,
}

impl PoolingHead {
    pub fn new(
        kind: PoolKind,
        dim: usize,
        hdim: usize,
        num_classes: usize,
        attention_dim: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let attention = (kind == PoolKind::Attention).then(|| AttentionScorer::new(dim, attention_dim, rng));
        PoolingHead {
            kind,
            attention,
            classifier: Mlp::new("head.classifier", ParamGroup::Task, &[dim, hdim, num_classes], rng),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.classifier.out_dim()
    }

    /// Attention weights over the unmasked rows (in row order), `k × 1`.
    pub fn attention_weights(&self, h: &Value, mask: &[bool]) -> Result<Value> {
        let scorer = self
            .attention
            .as_ref()
            .ok_or_else(|| Error::Config("attention weights requested from a non-attention head".into()))?;
        let rows = active_rows(h, mask)?;
        scorer.weights(&ops::select_rows(h, &rows)?)
    }

    /// Aggregates the unmasked rows of `h` (`n × d`) into a `1 × d` bag vector.
    pub fn pool(&self, h: &Value, mask: &[bool]) -> Result<Value> {
        match self.kind {
            PoolKind::Mean => ops::masked_mean(h, mask),
            PoolKind::Max => ops::masked_max(h, mask),
            PoolKind::Attention => {
                let rows = active_rows(h, mask)?;
                let hs = ops::select_rows(h, &rows)?;
                let a = self.attention.as_ref().expect("attention head has a scorer").weights(&hs)?;
                ops::matmul(&ops::transpose(&a), &hs)
            }
        }
    }

    /// Class logits (`1 × C`) for a pooled bag vector.
    pub fn classify(&self, z: &Value) -> Result<Value> {
        self.classifier.forward(z)
    }

    pub fn forward(&self, h: &Value, mask: &[bool]) -> Result<Value> {
        self.classify(&self.pool(h, mask)?)
    }

    pub fn parameters(&self) -> Vec<Parameter> {
        let mut params = Vec::new();
        if let Some(a) = &self.attention {
            params.push(a.v.clone());
            params.push(a.w.clone());
        }
        params.extend(self.classifier.parameters());
        params
    }
}

fn active_rows(h: &Value, mask: &[bool]) -> Result<Vec<usize>> {
    let (n, d) = h.shape();
    if mask.len() != n {
        return Err(Error::shape("pool mask", (n, d), (mask.len(), 1)));
    }
    let rows: Vec<usize> = (0..n).filter(|&i| mask[i]).collect();
    if rows.is_empty() {
        return Err(Error::EmptyBag("pool: no unmasked instances".into()));
    }
    Ok(rows)
}

/// Index of the largest logit; the first index wins ties.
pub fn argmax(logits: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate() {
        if v > logits[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{stream_rng, Stream};
    use ndarray::{array, Array2};

    fn rng() -> rand_chacha::ChaCha8Rng {
        stream_rng(5, Stream::HeadInit)
    }

    fn zero_all(params: &[Parameter]) {
        for p in params {
            let shape = p.value.shape();
            p.value.set_data(Array2::zeros(shape)).unwrap();
        }
    }

    #[test]
    fn zero_encoder_outputs_zero() {
        let enc = EncoderNet::new(&[3, 4, 3], &mut rng()).unwrap();
        zero_all(&enc.parameters());
        let out = enc.encode(&Value::constant(array![[1.0, -2.0, 3.0], [0.5, 0.5, 0.5]])).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_encoder_passes_positive_input_through() {
        let enc = EncoderNet::new(&[2, 2, 2], &mut rng()).unwrap();
        for layer in &enc.mlp.layers {
            layer.weight.value.set_data(Array2::eye(2)).unwrap();
            layer.bias.value.set_data(Array2::zeros((1, 2))).unwrap();
        }
        let x = array![[1.0, 2.0], [3.0, 0.5]];
        let out = enc.encode(&Value::constant(x.clone())).unwrap();
        assert_eq!(*out.data(), x);
    }

    #[test]
    fn encoder_width_mismatch() {
        let enc = EncoderNet::new(&[3, 4, 3], &mut rng()).unwrap();
        let err = enc.encode(&Value::constant(Array2::zeros((2, 4)))).unwrap_err();
        assert!(matches!(err, Error::Shape { .. }));
        assert!(EncoderNet::new(&[3, 4, 2], &mut rng()).is_err());
    }

    #[test]
    fn zero_scorer_attention_equals_mean() {
        let head = PoolingHead::new(PoolKind::Attention, 2, 4, 2, 3, &mut rng());
        let a = head.attention.as_ref().unwrap();
        a.w.value.set_data(Array2::zeros((3, 1))).unwrap();
        let h = Value::constant(array![[1.0, 3.0], [3.0, 5.0], [100.0, 100.0]]);
        let mask = [true, true, false];
        let att = head.pool(&h, &mask).unwrap();
        let mean = ops::masked_mean(&h, &mask).unwrap();
        assert_eq!(*att.data(), *mean.data());
    }

    #[test]
    fn zero_classifier_predicts_class_zero() {
        let head = PoolingHead::new(PoolKind::Mean, 2, 4, 3, 3, &mut rng());
        zero_all(&head.parameters());
        let logits = head.forward(&Value::constant(array![[1.0, 2.0]]), &[true]).unwrap();
        let l: Vec<f64> = logits.data().iter().copied().collect();
        assert_eq!(l, vec![0.0; 3]);
        assert_eq!(argmax(&l), 0);
    }

    #[test]
    fn antisymmetric_binary_classifier() {
        // Linear layers with zero bias: logits = relu(z W1) W2 with W2 columns w, -w.
        let head = PoolingHead::new(PoolKind::Mean, 2, 2, 2, 3, &mut rng());
        let l0 = &head.classifier.layers[0];
        let l1 = &head.classifier.layers[1];
        l0.weight.value.set_data(array![[1.0, -1.0], [0.5, -0.5]]).unwrap();
        l0.bias.value.set_data(Array2::zeros((1, 2))).unwrap();
        l1.weight.value.set_data(array![[0.7, -0.7], [-0.7, 0.7]]).unwrap();
        l1.bias.value.set_data(Array2::zeros((1, 2))).unwrap();
        let z = array![[0.3, 1.1]];
        let a = head.classify(&Value::constant(z.clone())).unwrap();
        let b = head.classify(&Value::constant(-z)).unwrap();
        assert_eq!(*a.data(), -&*b.data());
    }

    #[test]
    fn empty_bag_is_rejected() {
        for kind in [PoolKind::Mean, PoolKind::Max, PoolKind::Attention] {
            let head = PoolingHead::new(kind, 2, 4, 2, 3, &mut rng());
            let h = Value::constant(array![[1.0, 3.0]]);
            assert!(matches!(head.pool(&h, &[false]), Err(Error::EmptyBag(_))), "{kind}");
        }
    }
}
