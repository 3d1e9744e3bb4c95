//! Synthetic multilingual bag datasets with planted class signal and
//! per-language offsets.
//!
//! Every instance is `noise * N(0, I) + lang_offset[l] + (signal * class_dir[c]
//! if informative)`. Language offsets (norm `lang_offset`) and class directions
//! (unit norm) are mutually orthogonal whenever they fit in `dim`. Each speaker writes in a single language drawn uniformly,
//! and its class is assigned round-robin so classes stay balanced. The class
//! label is written to both label slots of the bag.

use std::collections::BTreeMap;

use ndarray::Array1;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::bags::SpeakerBag;
use super::split::{stratified_split, SplitRatios};
use super::{DatasetMeta, DatasetSplit, LabelKind};
use crate::error::{Error, Result};
use crate::nn::{stream_rng, Stream};

/// How informative instances are planted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InformativeMode {
    /// Each instance independently with probability `rho` (at least one per bag).
    Bernoulli(f64),
    /// Exactly one instance per bag, at a uniformly random position.
    ExactlyOne,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub n_languages: usize,
    pub n_speakers: usize,
    pub dim: usize,
    pub bag_min: usize,
    pub bag_max: usize,
    pub n_classes: usize,
    pub signal: f64,
    pub lang_offset: f64,
    pub informative: InformativeMode,
    pub noise: f64,
    pub whole_bag_size: usize,
    pub ratios: SplitRatios,
    pub pool_size: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_languages: 2,
            n_speakers: 200,
            dim: 16,
            bag_min: 8,
            bag_max: 16,
            n_classes: 2,
            signal: 2.0,
            lang_offset: 3.0,
            informative: InformativeMode::Bernoulli(0.5),
            noise: 1.0,
            whole_bag_size: 100,
            ratios: SplitRatios::DEFAULT,
            pool_size: 10,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(format!("synth spec: {msg}")));
        if let InformativeMode::Bernoulli(rho) = self.informative {
            if !(rho > 0.0 && rho <= 1.0) {
                return bad(&format!("informative fraction must be in (0, 1], got {rho} (no learnable signal)"));
            }
        }
        if self.n_languages == 0 || self.n_classes == 0 || self.dim == 0 || self.n_speakers == 0 {
            return bad("languages, classes, dim and speakers must be >= 1");
        }
        if self.bag_min == 0 || self.bag_min > self.bag_max {
            return bad("need 1 <= bag_min <= bag_max");
        }
        if !(self.noise >= 0.0 && self.signal >= 0.0 && self.lang_offset >= 0.0) {
            return bad("noise, signal and lang_offset must be >= 0");
        }
        if self.n_languages > i16::MAX as usize || self.n_classes > u16::MAX as usize {
            return bad("too many languages or classes");
        }
        Ok(())
    }
}

/// A synthetic split plus the ground-truth informative flags per speaker
/// (indexed like the bag's real rows).
#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub split: DatasetSplit,
    pub informative: BTreeMap<String, Vec<bool>>,
}

fn random_direction(dim: usize, norm: f64, rng: &mut impl Rng) -> Array1<f64> {
    loop {
        let v: Array1<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let n = v.dot(&v).sqrt();
        if n > 1e-12 {
            return v * (norm / n);
        }
    }
}

/// Modified Gram-Schmidt; the caller guarantees at most `dim` vectors.
fn orthonormalize(vs: &mut [Array1<f64>]) {
    for i in 0..vs.len() {
        let (done, rest) = vs.split_at_mut(i);
        let v = &mut rest[0];
        for u in done.iter() {
            let proj = u.dot(v);
            v.scaled_add(-proj, u);
        }
        let n = v.dot(v).sqrt();
        *v /= n;
    }
}

pub fn synth_dataset(spec: &SynthSpec, seed: u64) -> Result<SynthOutput> {
    spec.validate()?;
    let mut rng = stream_rng(seed, Stream::Synth);
    let mut basis: Vec<Array1<f64>> = (0..spec.n_languages + spec.n_classes)
        .map(|_| random_direction(spec.dim, 1.0, &mut rng))
        .collect();
    if basis.len() <= spec.dim {
        orthonormalize(&mut basis);
    }
    let directions = basis.split_off(spec.n_languages);
    let offsets: Vec<Array1<f64>> = basis.into_iter().map(|v| v * spec.lang_offset).collect();

    let width = (spec.n_speakers.max(1) - 1).to_string().len();
    let mut bags = Vec::with_capacity(spec.n_speakers);
    let mut informative = BTreeMap::new();
    for i in 0..spec.n_speakers {
        let speaker = format!("spk{i:0width$}");
        let class = i % spec.n_classes;
        let lang = rng.random_range(0..spec.n_languages);
        let len = rng.random_range(spec.bag_min..=spec.bag_max);
        let mut flags: Vec<bool> = match spec.informative {
            InformativeMode::Bernoulli(rho) => (0..len).map(|_| rng.random::<f64>() < rho).collect(),
            InformativeMode::ExactlyOne => {
                let pos = rng.random_range(0..len);
                (0..len).map(|j| j == pos).collect()
            }
        };
        if !flags.iter().any(|&f| f) {
            let pos = rng.random_range(0..len);
            flags[pos] = true;
        }
        let rows: Vec<(Vec<f32>, usize)> = flags
            .iter()
            .map(|&informative| {
                let mut x = offsets[lang].clone();
                for v in x.iter_mut() {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *v += spec.noise * z;
                }
                if informative {
                    x.scaled_add(spec.signal, &directions[class]);
                }
                (x.iter().map(|&v| v as f32).collect(), lang)
            })
            .collect();
        flags.truncate(spec.whole_bag_size);
        informative.insert(speaker.clone(), flags);
        bags.push(SpeakerBag::assemble(speaker, &rows, spec.whole_bag_size, spec.dim, class as u16, class as u16)?);
    }

    let vocab: Vec<String> = (0..spec.n_classes).map(|c| format!("class_{c}")).collect();
    let meta = DatasetMeta {
        dim: spec.dim,
        whole_bag_size: spec.whole_bag_size,
        num_languages: spec.n_languages,
        age_vocab: vocab.clone(),
        gender_vocab: vocab,
    };
    let [train, validation, test] =
        stratified_split(bags, spec.ratios, LabelKind::Age, spec.n_classes, spec.pool_size, seed)?;
    Ok(SynthOutput {
        split: DatasetSplit {
            meta,
            train,
            validation,
            test,
        },
        informative,
    })
}
