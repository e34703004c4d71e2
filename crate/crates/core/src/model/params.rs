use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::numeric::Array;

use super::{ModelConfig, ModelError};

/// Named parameter arrays of one model.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Parameters {
    arrays: BTreeMap<String, Array>,
}

/// Initialization rule of a parameter array.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Init {
    /// `N(0, 1/fan_in)` with `fan_in` the first dimension.
    Linear,
    Zeros,
    Ones,
    /// `N(0, 1)`.
    Embedding,
    /// Logits of a uniform grid over `[0.1, 0.9]^2`, one point per row.
    ReferenceGrid,
}

fn linear(out: &mut Vec<(String, Vec<usize>, Init)>, name: &str, fan_in: usize, fan_out: usize) {
    out.push((format!("{name}.weight"), vec![fan_in, fan_out], Init::Linear));
    out.push((format!("{name}.bias"), vec![fan_out], Init::Zeros));
}

fn layer_norm(out: &mut Vec<(String, Vec<usize>, Init)>, name: &str, d: usize) {
    out.push((format!("{name}.gamma"), vec![d], Init::Ones));
    out.push((format!("{name}.beta"), vec![d], Init::Zeros));
}

fn attention(out: &mut Vec<(String, Vec<usize>, Init)>, name: &str, d: usize) {
    for w in ["q", "k", "v", "o"] {
        linear(out, &format!("{name}.{w}"), d, d);
    }
}

fn ffn(out: &mut Vec<(String, Vec<usize>, Init)>, name: &str, d: usize, hidden: usize) {
    linear(out, &format!("{name}.fc1"), d, hidden);
    linear(out, &format!("{name}.fc2"), hidden, d);
}

fn layout(config: &ModelConfig) -> Vec<(String, Vec<usize>, Init)> {
    let d = config.d;
    let mut out = Vec::new();
    linear(&mut out, "patch", config.patch_px * config.patch_px * 3, d);
    for l in 0..config.enc_layers {
        let p = format!("enc.{l}");
        attention(&mut out, &format!("{p}.self_attn"), d);
        layer_norm(&mut out, &format!("{p}.norm1"), d);
        ffn(&mut out, &format!("{p}.ffn"), d, config.ffn_dim);
        layer_norm(&mut out, &format!("{p}.norm2"), d);
    }
    for l in 0..config.dec_layers {
        let p = format!("dec.{l}");
        attention(&mut out, &format!("{p}.self_attn"), d);
        layer_norm(&mut out, &format!("{p}.norm1"), d);
        attention(&mut out, &format!("{p}.cross_attn"), d);
        layer_norm(&mut out, &format!("{p}.norm2"), d);
        ffn(&mut out, &format!("{p}.ffn"), d, config.ffn_dim);
        layer_norm(&mut out, &format!("{p}.norm3"), d);
    }
    out.push(("query.one2one".into(), vec![config.m * config.n, d], Init::Embedding));
    out.push(("query.one2many".into(), vec![config.t * config.n, d], Init::Embedding));
    out.push(("ref.one2one".into(), vec![config.m * config.n, 2], Init::ReferenceGrid));
    out.push(("ref.one2many".into(), vec![config.t * config.n, 2], Init::ReferenceGrid));
    linear(&mut out, "cls", d, config.num_classes);
    linear(&mut out, "kpt.fc1", d, d);
    linear(&mut out, "kpt.fc2", d, d);
    linear(&mut out, "kpt.fc3", d, 2);
    out
}

/// Name and shape of every parameter array, in initialization order.
pub fn param_shapes(config: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    layout(config).into_iter().map(|(n, s, _)| (n, s)).collect()
}

/// Total number of scalar parameters.
pub fn parameter_count(config: &ModelConfig) -> usize {
    param_shapes(config).iter().map(|(_, s)| s.iter().product::<usize>()).sum()
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Logits of `count` points laid out row-major on a `side x side` grid over
/// `[0.1, 0.9]^2`, `side = ceil(sqrt(count))`.
pub fn reference_grid(count: usize) -> Array {
    let side = (count as f64).sqrt().ceil().max(1.0) as usize;
    let coord = |i: usize| {
        if side == 1 {
            0.5
        } else {
            0.1 + 0.8 * i as f64 / (side - 1) as f64
        }
    };
    let data = (0..count).flat_map(|q| [logit(coord(q % side)), logit(coord(q / side))]).collect();
    Array::new(vec![count, 2], data).expect("grid shape")
}

/// Deterministic initialization from `seed`.
pub fn init_params(config: &ModelConfig, seed: u64) -> Result<Parameters, ModelError> {
    config.validate().map_err(ModelError::Config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut arrays = BTreeMap::new();
    for (name, shape, init) in layout(config) {
        let len: usize = shape.iter().product();
        let array = match init {
            Init::Zeros => Array::zeros(&shape),
            Init::Ones => Array::filled(&shape, 1.0),
            Init::ReferenceGrid => reference_grid(shape[0]),
            Init::Linear | Init::Embedding => {
                let std = match init {
                    Init::Linear => 1.0 / (shape[0] as f64).sqrt(),
                    _ => 1.0,
                };
                let normal = Normal::new(0.0, std).expect("positive std");
                let data = (0..len).map(|_| normal.sample(&mut rng)).collect();
                Array::new(shape, data)?
            }
        };
        arrays.insert(name, array);
    }
    Ok(Parameters { arrays })
}

impl Parameters {
    pub fn from_map(arrays: BTreeMap<String, Array>) -> Self {
        Self { arrays }
    }

    /// Checks that every array expected by `config` is present with the
    /// right shape and that there are no extras.
    pub fn check(&self, config: &ModelConfig) -> Result<(), ModelError> {
        let expected = param_shapes(config);
        for (name, shape) in &expected {
            match self.arrays.get(name) {
                None => return Err(ModelError::MissingParam(name.clone())),
                Some(a) if a.shape() != shape.as_slice() => {
                    return Err(ModelError::Shape(format!(
                        "parameter {name} has shape {:?}, expected {shape:?}",
                        a.shape()
                    )))
                }
                Some(_) => {}
            }
        }
        if self.arrays.len() != expected.len() {
            let extra = self
                .arrays
                .keys()
                .find(|k| !expected.iter().any(|(n, _)| n == *k))
                .cloned()
                .unwrap_or_default();
            return Err(ModelError::Shape(format!("unexpected parameter {extra}")));
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Array, ModelError> {
        self.arrays.get(name).ok_or_else(|| ModelError::MissingParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Array> {
        self.arrays.get_mut(name)
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Array) {
        self.arrays.insert(name.into(), value);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Array)> {
        self.arrays.iter()
    }

    pub fn map(&self) -> &BTreeMap<String, Array> {
        &self.arrays
    }

    pub fn into_map(self) -> BTreeMap<String, Array> {
        self.arrays
    }

    pub fn len(&self) -> usize {
        self.arrays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arrays.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.arrays.values().map(Array::len).sum()
    }
}
