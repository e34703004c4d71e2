use std::collections::BTreeMap;
use std::rc::Rc;

use crate::chartgen::Raster;
use crate::numeric::{Array, Tape, Var};

use super::{ModelConfig, ModelError, Parameters, PredictionSet};

/// Outputs of one decoder branch on a tape.
#[derive(Debug, Clone, Copy)]
pub struct BranchVars {
    /// `[groups, classes]` probabilities.
    pub probs: Var,
    /// `[groups, 2N]` keypoints, `x0, y0, x1, y1, ...` per row.
    pub keypoints: Var,
}

impl BranchVars {
    pub fn predictions(&self, tape: &Tape) -> PredictionSet {
        PredictionSet::from_arrays(tape.value(self.probs), tape.value(self.keypoints))
    }
}

/// Which decoder branches to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branches {
    Both,
    OneToOneOnly,
}

#[derive(Debug, Clone, Copy)]
pub struct ForwardVars {
    /// Encoder memory, `[patches, D]`.
    pub features: Var,
    /// Decoder output rows of the one-to-one queries, `[M*N, D]`.
    pub embed_one2one: Var,
    pub one2one: BranchVars,
    /// Present when both branches were evaluated.
    pub embed_one2many: Option<Var>,
    pub one2many: Option<BranchVars>,
}

/// Parameters registered on a tape.
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    /// Registers every array of `params` as a differentiable leaf.
    pub fn new(tape: &mut Tape, params: &Parameters) -> Self {
        let vars = params.iter().map(|(n, a)| (n.clone(), tape.param(n, a.clone()))).collect();
        Self { vars }
    }

    pub fn get(&self, name: &str) -> Result<Var, ModelError> {
        self.vars.get(name).copied().ok_or_else(|| ModelError::MissingParam(name.to_string()))
    }
}

fn linear(tape: &mut Tape, p: &Bound, name: &str, x: Var) -> Result<Var, ModelError> {
    let y = tape.matmul(x, p.get(&format!("{name}.weight"))?)?;
    Ok(tape.add_row(y, p.get(&format!("{name}.bias"))?)?)
}

fn norm(tape: &mut Tape, p: &Bound, name: &str, x: Var) -> Result<Var, ModelError> {
    let y = tape.layer_norm(x)?;
    let y = tape.mul_row(y, p.get(&format!("{name}.gamma"))?)?;
    Ok(tape.add_row(y, p.get(&format!("{name}.beta"))?)?)
}

fn ffn(tape: &mut Tape, p: &Bound, name: &str, x: Var) -> Result<Var, ModelError> {
    let h = linear(tape, p, &format!("{name}.fc1"), x)?;
    let h = tape.relu(h)?;
    linear(tape, p, &format!("{name}.fc2"), h)
}

/// Multi-head scaled dot-product attention of `queries` over `memory`.
/// `mask[i * keys + j]` forbids query `i` from attending to key `j`.
fn attention(
    tape: &mut Tape,
    p: &Bound,
    name: &str,
    heads: usize,
    queries: Var,
    memory: Var,
    mask: Option<&Rc<[bool]>>,
) -> Result<Var, ModelError> {
    let q = linear(tape, p, &format!("{name}.q"), queries)?;
    let k = linear(tape, p, &format!("{name}.k"), memory)?;
    let v = linear(tape, p, &format!("{name}.v"), memory)?;
    let d = tape.value(q).last_dim();
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = tape.slice(q, 1, h * dh, (h + 1) * dh)?;
        let kh = tape.slice(k, 1, h * dh, (h + 1) * dh)?;
        let vh = tape.slice(v, 1, h * dh, (h + 1) * dh)?;
        let kt = tape.transpose(kh)?;
        let scores = tape.matmul(qh, kt)?;
        let mut scores = tape.scale(scores, scale)?;
        if let Some(m) = mask {
            scores = tape.masked_fill(scores, Rc::clone(m))?;
        }
        let weights = tape.softmax(scores)?;
        outs.push(tape.matmul(weights, vh)?);
    }
    let cat = if heads == 1 { outs[0] } else { tape.concat(&outs, 1)? };
    linear(tape, p, &format!("{name}.o"), cat)
}

/// Fixed 2-D sinusoidal encoding of a `rows x cols` patch grid: the first
/// half of the channels encodes the row, the second half the column, each
/// as interleaved `sin, cos` pairs of geometrically spaced frequencies.
pub fn positional_encoding(rows: usize, cols: usize, d: usize) -> Array {
    let half = d / 2;
    let pairs = half / 2;
    let mut data = vec![0.0; rows * cols * d];
    let two_pi = 2.0 * std::f64::consts::PI;
    for r in 0..rows {
        for c in 0..cols {
            let base = (r * cols + c) * d;
            for (offset, pos) in [(0, (r as f64 + 0.5) / rows as f64), (half, (c as f64 + 0.5) / cols as f64)] {
                for i in 0..pairs {
                    let freq = 10000f64.powf(-(i as f64) / pairs.max(1) as f64);
                    let angle = two_pi * pos * freq;
                    data[base + offset + 2 * i] = angle.sin();
                    data[base + offset + 2 * i + 1] = angle.cos();
                }
            }
        }
    }
    Array::new(vec![rows * cols, d], data).expect("encoding shape")
}

/// Splits a raster into row-major non-overlapping `patch x patch` tiles,
/// each flattened as `(y, x, channel)` with values scaled to `[0, 1]`.
pub fn patchify(raster: &Raster, patch: usize) -> Result<(Array, usize, usize), ModelError> {
    let (w, h) = (raster.width() as usize, raster.height() as usize);
    if patch == 0 || w % patch != 0 || h % patch != 0 || w == 0 || h == 0 {
        return Err(ModelError::Shape(format!(
            "image {w}x{h} is not divisible into {patch}x{patch} patches"
        )));
    }
    let (rows, cols) = (h / patch, w / patch);
    let bytes = raster.bytes();
    let mut data = Vec::with_capacity(w * h * 3);
    for pr in 0..rows {
        for pc in 0..cols {
            for y in pr * patch..(pr + 1) * patch {
                let start = (y * w + pc * patch) * 3;
                data.extend(bytes[start..start + patch * 3].iter().map(|&b| f64::from(b) / 255.0));
            }
        }
    }
    Ok((Array::new(vec![rows * cols, patch * patch * 3], data)?, rows, cols))
}

/// Encoder over a patch matrix; `positions` is added after the projection.
pub(crate) fn encode_on_tape(
    tape: &mut Tape,
    p: &Bound,
    config: &ModelConfig,
    patches: Array,
    positions: Option<Array>,
) -> Result<Var, ModelError> {
    let x = tape.constant(patches);
    let mut x = linear(tape, p, "patch", x)?;
    if let Some(pos) = positions {
        let pos = tape.constant(pos);
        x = tape.add(x, pos)?;
    }
    for l in 0..config.enc_layers {
        let name = format!("enc.{l}");
        let a = attention(tape, p, &format!("{name}.self_attn"), config.heads, x, x, None)?;
        let r = tape.add(x, a)?;
        x = norm(tape, p, &format!("{name}.norm1"), r)?;
        let f = ffn(tape, p, &format!("{name}.ffn"), x)?;
        let r = tape.add(x, f)?;
        x = norm(tape, p, &format!("{name}.norm2"), r)?;
    }
    Ok(x)
}

/// Self-attention mask over `one2one + one2many` stacked queries: true
/// where the query and key come from different branches.
pub fn branch_mask(one2one: usize, one2many: usize) -> Rc<[bool]> {
    let total = one2one + one2many;
    (0..total * total)
        .map(|i| (i / total < one2one) != (i % total < one2one))
        .collect()
}

/// Decoder over the stacked query blocks. Returns the output rows of the
/// one-to-one block and, if requested, of the one-to-many block.
pub(crate) fn decode_on_tape(
    tape: &mut Tape,
    p: &Bound,
    config: &ModelConfig,
    features: Var,
    branches: Branches,
) -> Result<(Var, Option<Var>), ModelError> {
    let q1 = p.get("query.one2one")?;
    let n1 = config.m * config.n;
    let (mut x, mask) = match branches {
        Branches::OneToOneOnly => (q1, None),
        Branches::Both => {
            let q2 = p.get("query.one2many")?;
            let n2 = config.t * config.n;
            (tape.concat(&[q1, q2], 0)?, Some(branch_mask(n1, n2)))
        }
    };
    for l in 0..config.dec_layers {
        let name = format!("dec.{l}");
        let a = attention(tape, p, &format!("{name}.self_attn"), config.heads, x, x, mask.as_ref())?;
        let r = tape.add(x, a)?;
        x = norm(tape, p, &format!("{name}.norm1"), r)?;
        let c = attention(tape, p, &format!("{name}.cross_attn"), config.heads, x, features, None)?;
        let r = tape.add(x, c)?;
        x = norm(tape, p, &format!("{name}.norm2"), r)?;
        let f = ffn(tape, p, &format!("{name}.ffn"), x)?;
        let r = tape.add(x, f)?;
        x = norm(tape, p, &format!("{name}.norm3"), r)?;
    }
    match branches {
        Branches::OneToOneOnly => Ok((x, None)),
        Branches::Both => {
            let total = tape.value(x).outer_len();
            let e1 = tape.slice(x, 0, 0, n1)?;
            let e2 = tape.slice(x, 0, n1, total)?;
            Ok((e1, Some(e2)))
        }
    }
}

/// Class probabilities from each group's first embedding and keypoints as
/// `sigmoid(reference logit + MLP offset)` for every query.
pub(crate) fn header_on_tape(
    tape: &mut Tape,
    p: &Bound,
    config: &ModelConfig,
    embed: Var,
    reference: Var,
) -> Result<BranchVars, ModelError> {
    let rows = tape.value(embed).outer_len();
    let n = config.n;
    let groups = rows / n;
    let pivots: Vec<usize> = (0..groups).map(|g| g * n).collect();
    let pivot = tape.gather_rows(embed, &pivots)?;
    let logits = linear(tape, p, "cls", pivot)?;
    let probs = tape.sigmoid(logits)?;
    let h = linear(tape, p, "kpt.fc1", embed)?;
    let h = tape.relu(h)?;
    let h = linear(tape, p, "kpt.fc2", h)?;
    let h = tape.relu(h)?;
    let offset = linear(tape, p, "kpt.fc3", h)?;
    let z = tape.add(offset, reference)?;
    let kp = tape.sigmoid(z)?;
    let keypoints = tape.reshape(kp, vec![groups, 2 * n])?;
    Ok(BranchVars { probs, keypoints })
}

/// Full forward pass on `tape` with parameters already bound.
pub fn forward_on_tape(
    tape: &mut Tape,
    p: &Bound,
    config: &ModelConfig,
    raster: &Raster,
    branches: Branches,
) -> Result<ForwardVars, ModelError> {
    let (patches, rows, cols) = patchify(raster, config.patch_px)?;
    let pos = positional_encoding(rows, cols, config.d);
    let features = encode_on_tape(tape, p, config, patches, Some(pos))?;
    let (e1, e2) = decode_on_tape(tape, p, config, features, branches)?;
    let one2one = header_on_tape(tape, p, config, e1, p.get("ref.one2one")?)?;
    let one2many = match e2 {
        Some(e2) => Some(header_on_tape(tape, p, config, e2, p.get("ref.one2many")?)?),
        None => None,
    };
    Ok(ForwardVars {
        features,
        embed_one2one: e1,
        one2one,
        embed_one2many: e2,
        one2many,
    })
}

fn bound(config: &ModelConfig, params: &Parameters) -> Result<(Tape, Bound), ModelError> {
    config.validate().map_err(ModelError::Config)?;
    params.check(config)?;
    let mut tape = Tape::new();
    let b = Bound::new(&mut tape, params);
    Ok((tape, b))
}

/// Feature memory `F`, shape `[HW / patch^2, D]`.
pub fn encode(params: &Parameters, config: &ModelConfig, raster: &Raster) -> Result<Array, ModelError> {
    let (mut tape, b) = bound(config, params)?;
    let (patches, rows, cols) = patchify(raster, config.patch_px)?;
    let pos = positional_encoding(rows, cols, config.d);
    let f = encode_on_tape(&mut tape, &b, config, patches, Some(pos))?;
    Ok(tape.value(f).clone())
}

/// Encoder applied to a ready patch matrix, optionally without positions.
pub fn encode_patches(
    params: &Parameters,
    config: &ModelConfig,
    patches: Array,
    positions: Option<Array>,
) -> Result<Array, ModelError> {
    let (mut tape, b) = bound(config, params)?;
    let f = encode_on_tape(&mut tape, &b, config, patches, positions)?;
    Ok(tape.value(f).clone())
}

/// Grouped decoder embeddings: `[M, N, D]` and `[T, N, D]`.
pub fn decode_with_groups(params: &Parameters, config: &ModelConfig, features: &Array) -> Result<(Array, Array), ModelError> {
    let (mut tape, b) = bound(config, params)?;
    let f = tape.constant(features.clone());
    let (e1, e2) = decode_on_tape(&mut tape, &b, config, f, Branches::Both)?;
    let e2 = e2.expect("both branches decoded");
    let (n, d) = (config.n, config.d);
    let e1 = tape.value(e1).clone().reshaped(vec![config.m, n, d])?;
    let e2 = tape.value(e2).clone().reshaped(vec![config.t, n, d])?;
    Ok((e1, e2))
}

/// Shape predictions for grouped embeddings `[G, N, D]` with one reference
/// logit pair per query (`[G*N, 2]`).
pub fn shape_header(
    params: &Parameters,
    config: &ModelConfig,
    embed: &Array,
    reference: &Array,
) -> Result<PredictionSet, ModelError> {
    let (mut tape, b) = bound(config, params)?;
    let rows = embed.len() / config.d.max(1);
    let e = tape.constant(embed.clone().reshaped(vec![rows, config.d])?);
    let r = tape.constant(reference.clone());
    let out = header_on_tape(&mut tape, &b, config, e, r)?;
    Ok(out.predictions(&tape))
}

/// Both branches: `(one2one, one2many)`.
pub fn forward(params: &Parameters, config: &ModelConfig, raster: &Raster) -> Result<(PredictionSet, PredictionSet), ModelError> {
    let (mut tape, b) = bound(config, params)?;
    let out = forward_on_tape(&mut tape, &b, config, raster, Branches::Both)?;
    let o2m = out.one2many.expect("both branches decoded");
    Ok((out.one2one.predictions(&tape), o2m.predictions(&tape)))
}

/// Inference: only the one-to-one branch, which the branch mask makes
/// independent of the one-to-many queries.
pub fn infer(params: &Parameters, config: &ModelConfig, raster: &Raster) -> Result<PredictionSet, ModelError> {
    let (mut tape, b) = bound(config, params)?;
    let out = forward_on_tape(&mut tape, &b, config, raster, Branches::OneToOneOnly)?;
    Ok(out.one2one.predictions(&tape))
}
