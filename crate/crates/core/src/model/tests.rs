use super::*;
use crate::chartgen::{generate, GenSpec, Raster, WHITE};
use crate::geometry::ShapeKind;
use crate::numeric::{Array, Tape, LAYER_NORM_EPS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn micro() -> ModelConfig {
    let mut cfg = ModelConfig::preset(ShapeKind::Bar);
    cfg.d = 8;
    cfg.heads = 2;
    cfg.enc_layers = 1;
    cfg.dec_layers = 1;
    cfg.m = 2;
    cfg.n = 3;
    cfg.t = 6;
    cfg.ffn_dim = 16;
    cfg
}

fn noise_raster(rng: &mut ChaCha8Rng, w: u32, h: u32) -> Raster {
    let bytes = (0..w * h * 3).map(|_| rng.random::<u8>()).collect();
    Raster::from_bytes(w, h, bytes).unwrap()
}

#[test]
fn parameter_count_closed_form() {
    let cfg = micro();
    let (d, f, p, c) = (8, 16, 8 * 8 * 3, 3);
    let (m, n, t) = (2, 3, 6);
    let linear = |i: usize, o: usize| i * o + o;
    let attn = 4 * linear(d, d);
    let ln = 2 * d;
    let ffn = linear(d, f) + linear(f, d);
    let enc = attn + ln + ffn + ln;
    let dec = attn + ln + attn + ln + ffn + ln;
    let queries = (m + t) * n * d;
    let refs = (m + t) * n * 2;
    let heads = linear(d, c) + linear(d, d) + linear(d, d) + linear(d, 2);
    let expected = linear(p, d) + enc + dec + queries + refs + heads;
    assert_eq!(expected, 3477);
    assert_eq!(parameter_count(&cfg), expected);
    assert_eq!(init_params(&cfg, 0).unwrap().scalar_count(), expected);
}

#[test]
fn init_is_deterministic_per_seed() {
    let cfg = micro();
    let a = init_params(&cfg, 7).unwrap();
    assert_eq!(a, init_params(&cfg, 7).unwrap());
    let b = init_params(&cfg, 8).unwrap();
    assert!(a.iter().zip(b.iter()).any(|(x, y)| x.1 != y.1));
    a.check(&cfg).unwrap();
}

#[test]
fn reference_grid_spans_the_inner_square() {
    let g = reference_grid(9);
    let pts: Vec<(f64, f64)> = (0..9)
        .map(|i| {
            let r = g.row(i);
            (1.0 / (1.0 + (-r[0]).exp()), 1.0 / (1.0 + (-r[1]).exp()))
        })
        .collect();
    assert!((pts[0].0 - 0.1).abs() < 1e-12 && (pts[0].1 - 0.1).abs() < 1e-12);
    assert!((pts[8].0 - 0.9).abs() < 1e-12 && (pts[8].1 - 0.9).abs() < 1e-12);
    assert!((pts[4].0 - 0.5).abs() < 1e-12);
    let single = reference_grid(1);
    assert!(single.data().iter().all(|v| v.abs() < 1e-12));
}

#[test]
fn check_rejects_wrong_layouts() {
    let cfg = micro();
    let mut p = init_params(&cfg, 0).unwrap();
    p.insert("extra", Array::zeros(&[1]));
    assert!(p.check(&cfg).is_err());
    let mut p = init_params(&cfg, 0).unwrap();
    p.insert("cls.bias", Array::zeros(&[4]));
    assert!(p.check(&cfg).is_err());
    let mut bad = cfg.clone();
    bad.heads = 3;
    assert!(matches!(init_params(&bad, 0), Err(ModelError::Config(_))));
}

#[test]
fn encode_shapes_and_inputs() {
    let mut cfg = ModelConfig::preset(ShapeKind::Bar);
    cfg.d = 16;
    let params = init_params(&cfg, 1).unwrap();
    let white = Raster::new(64, 64, WHITE);
    let black = Raster::new(64, 64, [0, 0, 0]);
    let fw = encode(&params, &cfg, &white).unwrap();
    assert_eq!(fw.shape(), &[64, 16]);
    assert_ne!(fw, encode(&params, &cfg, &black).unwrap());
    assert!(encode(&params, &cfg, &Raster::new(60, 64, WHITE)).is_err());
}

#[test]
fn encoder_is_patch_equivariant_without_positions() {
    let cfg = micro();
    let params = init_params(&cfg, 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (patches, rows, cols) = patchify(&noise_raster(&mut rng, 16, 16), 8).unwrap();
    let swapped = {
        let mut data = patches.data().to_vec();
        let w = patches.last_dim();
        for k in 0..w {
            data.swap(k, 3 * w + k);
        }
        Array::new(patches.shape().to_vec(), data).unwrap()
    };
    let f = encode_patches(&params, &cfg, patches.clone(), None).unwrap();
    let g = encode_patches(&params, &cfg, swapped.clone(), None).unwrap();
    let perm = [3, 1, 2, 0];
    for (i, &j) in perm.iter().enumerate() {
        for (a, b) in f.row(j).iter().zip(g.row(i)) {
            assert!((a - b).abs() < 1e-12);
        }
    }
    let pos = positional_encoding(rows, cols, cfg.d);
    let f = encode_patches(&params, &cfg, patches, Some(pos.clone())).unwrap();
    let g = encode_patches(&params, &cfg, swapped, Some(pos)).unwrap();
    assert!(f.row(3).iter().zip(g.row(0)).any(|(a, b)| (a - b).abs() > 1e-6));
}

#[test]
fn positional_encoding_distinguishes_patches() {
    let pe = positional_encoding(8, 8, 32);
    assert_eq!(pe.shape(), &[64, 32]);
    for i in 0..64 {
        for j in 0..i {
            let d: f64 = pe.row(i).iter().zip(pe.row(j)).map(|(a, b)| (a - b).abs()).sum();
            assert!(d > 1e-3, "rows {i} and {j} coincide");
        }
    }
}

#[test]
fn decoder_output_shapes_with_line_defaults() {
    let cfg = ModelConfig::preset(ShapeKind::Line);
    assert_eq!((cfg.m, cfg.n, cfg.t, cfg.d), (4, 14, 12, 32));
    let params = init_params(&cfg, 3).unwrap();
    let (raster, _) = generate(&GenSpec::preset(ShapeKind::Line, 3), 0).unwrap();
    let f = encode(&params, &cfg, &raster).unwrap();
    let (e1, e2) = decode_with_groups(&params, &cfg, &f).unwrap();
    assert_eq!(e1.shape(), &[4, 14, 32]);
    assert_eq!(e2.shape(), &[12, 14, 32]);
    let (o2o, o2m) = forward(&params, &cfg, &raster).unwrap();
    assert_eq!((o2o.len(), o2m.len()), (4, 12));
}

#[test]
fn branch_mask_blocks_only_cross_branch_pairs() {
    let m = branch_mask(2, 3);
    let at = |i: usize, j: usize| m[i * 5 + j];
    assert!(!at(0, 1) && !at(1, 0) && !at(2, 4) && !at(4, 3));
    assert!(at(0, 2) && at(1, 4) && at(3, 0) && at(4, 1));
}

#[test]
fn one_to_one_outputs_ignore_one_to_many_queries() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for trial in 0..10 {
        let mut cfg = micro();
        cfg.dec_layers = 1 + trial % 2;
        let params = init_params(&cfg, trial as u64).unwrap();
        let raster = noise_raster(&mut rng, 16, 16);
        let (base, _) = forward(&params, &cfg, &raster).unwrap();
        let shape = params.get("query.one2many").unwrap().shape().to_vec();
        let len = shape.iter().product();
        for replacement in [
            Array::zeros(&shape),
            Array::new(shape.clone(), (0..len).map(|_| rng.random_range(-3.0..3.0)).collect()).unwrap(),
        ] {
            let mut p = params.clone();
            p.insert("query.one2many", replacement);
            let (o2o, _) = forward(&p, &cfg, &raster).unwrap();
            let bits = |s: &PredictionSet| {
                let (a, b) = s.to_arrays();
                a.data().iter().chain(b.data()).map(|v| v.to_bits()).collect::<Vec<_>>()
            };
            assert_eq!(bits(&o2o), bits(&base));
        }
        assert_eq!(infer(&params, &cfg, &raster).unwrap(), base);
    }
}

fn plain_layer_norm(x: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    x.iter().map(|v| (v - mean) / (var + LAYER_NORM_EPS).sqrt()).collect()
}

#[test]
fn decoder_layer_with_silent_attention_is_norm_and_ffn() {
    let mut cfg = micro();
    cfg.m = 1;
    cfg.n = 2;
    cfg.t = 1;
    let mut params = init_params(&cfg, 5).unwrap();
    for attn in ["self_attn", "cross_attn"] {
        for suffix in ["o.weight", "o.bias"] {
            let name = format!("dec.0.{attn}.{suffix}");
            let shape = params.get(&name).unwrap().shape().to_vec();
            params.insert(name, Array::zeros(&shape));
        }
    }
    let features = Array::new(vec![4, 8], (0..32).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
    let (e1, e2) = decode_with_groups(&params, &cfg, &features).unwrap();
    let q1 = params.get("query.one2one").unwrap();
    let q2 = params.get("query.one2many").unwrap();
    let w1 = params.get("dec.0.ffn.fc1.weight").unwrap();
    let w2 = params.get("dec.0.ffn.fc2.weight").unwrap();
    let out = |q: &[f64]| -> Vec<f64> {
        let x = plain_layer_norm(&plain_layer_norm(q));
        let hidden: Vec<f64> = (0..16)
            .map(|j| (0..8).map(|i| x[i] * w1.data()[i * 16 + j]).sum::<f64>().max(0.0))
            .collect();
        let y: Vec<f64> = (0..8)
            .map(|j| x[j] + (0..16).map(|i| hidden[i] * w2.data()[i * 8 + j]).sum::<f64>())
            .collect();
        plain_layer_norm(&y)
    };
    for (e, q) in [(&e1, q1), (&e2, q2)] {
        for r in 0..2 {
            let expected = out(q.row(r));
            for (a, b) in e.data()[r * 8..(r + 1) * 8].iter().zip(&expected) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }
}

#[test]
fn header_zero_weights() {
    let cfg = micro();
    let mut params = init_params(&cfg, 6).unwrap();
    for name in ["cls.weight", "cls.bias", "kpt.fc3.weight", "kpt.fc3.bias"] {
        let shape = params.get(name).unwrap().shape().to_vec();
        params.insert(name, Array::zeros(&shape));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let embed = Array::new(vec![2, 3, 8], (0..48).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let reference = params.get("ref.one2one").unwrap().clone();
    let set = shape_header(&params, &cfg, &embed, &reference).unwrap();
    let (probs, kps) = set.to_arrays();
    assert_eq!(probs.shape(), &[2, 3]);
    assert_eq!(kps.shape(), &[2, 6]);
    assert!(probs.data().iter().all(|&p| p == 0.5));
    let grid = reference_grid(6);
    for (k, z) in kps.data().iter().zip(grid.data()) {
        assert!((k - 1.0 / (1.0 + (-z).exp())).abs() < 1e-15);
    }
}

#[test]
fn outputs_stay_in_unit_range() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for seed in 0..5 {
        let cfg = micro();
        let mut params = init_params(&cfg, seed).unwrap();
        // exaggerate weights to push activations toward saturation
        for name in ["cls.weight", "kpt.fc3.weight"] {
            let a = params.get_mut(name).unwrap();
            a.data_mut().iter_mut().for_each(|v| *v *= 50.0);
        }
        let (a, b) = forward(&params, &cfg, &noise_raster(&mut rng, 16, 16)).unwrap();
        for set in [a, b] {
            let (p, k) = set.to_arrays();
            assert!(p.data().iter().chain(k.data()).all(|v| (0.0..=1.0).contains(v)));
        }
    }
}

#[test]
fn forward_is_deterministic() {
    let cfg = micro();
    let params = init_params(&cfg, 8).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let raster = noise_raster(&mut rng, 16, 16);
    assert_eq!(forward(&params, &cfg, &raster).unwrap(), forward(&params, &cfg, &raster).unwrap());
}

#[test]
fn bound_parameters_cover_the_layout() {
    let cfg = micro();
    let params = init_params(&cfg, 9).unwrap();
    let mut tape = Tape::new();
    let b = Bound::new(&mut tape, &params);
    for (name, _) in param_shapes(&cfg) {
        b.get(&name).unwrap();
    }
    assert!(b.get("nope").is_err());
}

#[test]
fn preset_parameter_counts() {
    for (kind, count) in [(ShapeKind::Bar, 43_749), (ShapeKind::Line, 50_277), (ShapeKind::Pie, 45_925)] {
        let cfg = ModelConfig::preset(kind);
        assert_eq!(parameter_count(&cfg), count, "{kind:?}");
        assert_eq!(init_params(&cfg, 0).unwrap().scalar_count(), count);
    }
}
