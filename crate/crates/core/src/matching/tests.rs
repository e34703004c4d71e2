use super::*;
use crate::numeric::{finite_diff_check, Array, Evaluation, ParamMap};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const ALPHA: f64 = 0.25;
const GAMMA: f64 = 2.0;

fn kp(points: &[(f64, f64)]) -> Vec<Keypoint> {
    points.iter().copied().map(Keypoint::from).collect()
}

fn bar(x0: f64, y0: f64, x1: f64, y1: f64) -> Shape {
    Shape {
        kind: ShapeKind::Bar,
        keypoints: kp(&[(x0, y0), (x1, y1)]),
    }
}

fn bar_config(m: usize, t: usize, k: usize) -> ModelConfig {
    let mut cfg = ModelConfig::preset(ShapeKind::Bar);
    cfg.m = m;
    cfg.t = t;
    cfg.k = k;
    cfg
}

fn random_set(rng: &mut ChaCha8Rng, groups: usize, n: usize) -> PredictionSet {
    PredictionSet {
        groups: (0..groups)
            .map(|_| PredictedShape {
                class_probs: (0..3).map(|_| rng.random_range(0.02..0.98)).collect(),
                keypoints: (0..n)
                    .map(|_| Keypoint::new(rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)))
                    .collect(),
            })
            .collect(),
    }
}

fn random_bars(rng: &mut ChaCha8Rng, count: usize) -> Vec<Shape> {
    (0..count)
        .map(|_| {
            let x0 = rng.random_range(0.0..0.5);
            let y0 = rng.random_range(0.0..0.5);
            bar(x0, y0, x0 + rng.random_range(0.05..0.5), y0 + rng.random_range(0.05..0.5))
        })
        .collect()
}

#[test]
fn focal_examples() {
    assert!(focal_loss(&[1.0, 0.0, 0.0], ShapeKind::Bar, ALPHA, GAMMA) <= 1e-10);
    let single = focal_loss(&[0.9], ShapeKind::Bar, ALPHA, GAMMA);
    assert!((single - 2.634012891445658e-4).abs() < 1e-15);
    // p = 0.5 everywhere: 0.25*0.25*ln2 for the positive, 0.75*0.25*ln2 for each negative
    let half = focal_loss(&[0.5; 3], ShapeKind::Line, ALPHA, GAMMA);
    let ln2 = std::f64::consts::LN_2;
    assert!((half - (0.0625 + 2.0 * 0.1875) * ln2).abs() < 1e-15);
    // no-object target: every class is a negative
    let none = focal_loss(&[0.5; 3], ShapeKind::NoObject, ALPHA, GAMMA);
    assert!((none - 3.0 * 0.1875 * ln2).abs() < 1e-15);
}

#[test]
fn shape_loss_examples() {
    let p = kp(&[(0.2, 0.2)]);
    let q = kp(&[(0.1, 0.4)]);
    assert!((shape_loss(&p, &q).unwrap() - 0.15).abs() < 1e-15);
    assert_eq!(shape_loss(&q, &q).unwrap(), 0.0);
    assert!(shape_loss(&p, &kp(&[(0.0, 0.0), (1.0, 1.0)])).is_err());

    let a = kp(&[(0.5, 0.1), (0.6, 0.9), (0.7, 0.3)]);
    let t = kp(&[(0.1, 0.2), (0.2, 0.4), (0.3, 0.8)]);
    let delta = 0.05;
    let moved: Vec<Keypoint> = a.iter().map(|p| Keypoint::new(p.x + delta, p.y)).collect();
    let diff = shape_loss(&moved, &t).unwrap() - shape_loss(&a, &t).unwrap();
    assert!((diff - delta / 2.0).abs() < 1e-12);
}

#[test]
fn match_cost_examples() {
    let cfg = ModelConfig::preset(ShapeKind::Bar);
    let target = bar(0.1, 0.2, 0.5, 0.9);
    let perfect = PredictedShape {
        class_probs: vec![1.0, 0.0, 0.0],
        keypoints: target.keypoints.clone(),
    };
    assert!(match_cost(&perfect, &target, &cfg).unwrap().abs() <= 1e-10);

    // p = 0.9 on the correct class, keypoint error 0.15
    let toy = PredictedShape {
        class_probs: vec![0.9, 0.0, 0.0],
        keypoints: kp(&[(0.1, 0.2), (0.5 + 0.6, 0.9)]),
    };
    let c = match_cost(&toy, &target, &cfg).unwrap();
    assert!((c - (-2.634012891445658e-4 + 0.15)).abs() < 1e-12, "{c}");
    assert!((c - 0.14974).abs() < 1e-5);

    // equal class probabilities: ordering follows the keypoint error
    let near = PredictedShape {
        class_probs: vec![0.3, 0.2, 0.1],
        keypoints: kp(&[(0.1, 0.25), (0.5, 0.9)]),
    };
    let far = PredictedShape {
        keypoints: kp(&[(0.3, 0.25), (0.5, 0.9)]),
        ..near.clone()
    };
    assert!(match_cost(&near, &target, &cfg).unwrap() < match_cost(&far, &target, &cfg).unwrap());

    let mut conventional = cfg.clone();
    conventional.match_cost = MatchCostKind::NegProb;
    let c = match_cost(&toy, &target, &conventional).unwrap();
    assert!((c - (-0.9 + 0.15)).abs() < 1e-12);
}

#[test]
fn match_cost_stretches_short_targets() {
    let cfg = ModelConfig::preset(ShapeKind::Line);
    let line = Shape {
        kind: ShapeKind::Line,
        keypoints: kp(&[(0.1, 0.5), (0.9, 0.5)]),
    };
    let pred = PredictedShape {
        class_probs: vec![0.0, 1.0, 0.0],
        keypoints: pad_target(&line, 14).unwrap(),
    };
    assert!(match_cost(&pred, &line, &cfg).unwrap().abs() <= 1e-10);
}

#[test]
fn hungarian_loss_with_no_targets_is_pure_no_object() {
    let cfg = bar_config(3, 9, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let preds = random_set(&mut rng, 3, 2);
    let (cls, shape) = hungarian_loss(&preds, &[], &Assignment::empty(), &cfg).unwrap();
    let expected: f64 = preds
        .groups
        .iter()
        .map(|g| focal_loss(&g.class_probs, ShapeKind::NoObject, ALPHA, GAMMA))
        .sum();
    assert_eq!(shape, 0.0);
    assert!((cls - expected).abs() < 1e-15);
}

#[test]
fn hungarian_loss_perfect_predictions_vanish() {
    let cfg = bar_config(3, 9, 3);
    let targets = vec![bar(0.1, 0.2, 0.3, 0.9), bar(0.5, 0.4, 0.7, 0.9)];
    let preds = PredictionSet {
        groups: vec![
            PredictedShape {
                class_probs: vec![0.0; 3],
                keypoints: kp(&[(0.0, 0.0), (0.0, 0.0)]),
            },
            PredictedShape {
                class_probs: vec![1.0, 0.0, 0.0],
                keypoints: targets[1].keypoints.clone(),
            },
            PredictedShape {
                class_probs: vec![1.0, 0.0, 0.0],
                keypoints: targets[0].keypoints.clone(),
            },
        ],
    };
    let sigma = Assignment {
        target_to_row: vec![2, 1],
        total_cost: 0.0,
    };
    let (cls, shape) = hungarian_loss(&preds, &targets, &sigma, &cfg).unwrap();
    assert!(cls + shape <= 1e-9);
}

#[test]
fn hungarian_loss_hand_example() {
    // one target, two groups; group 1 is matched
    let cfg = bar_config(2, 6, 3);
    let target = bar(0.2, 0.3, 0.4, 0.9);
    let preds = PredictionSet {
        groups: vec![
            PredictedShape {
                class_probs: vec![0.2, 0.1, 0.3],
                keypoints: kp(&[(0.9, 0.9), (0.9, 0.9)]),
            },
            PredictedShape {
                class_probs: vec![0.8, 0.1, 0.1],
                keypoints: kp(&[(0.25, 0.3), (0.4, 0.7)]),
            },
        ],
    };
    let sigma = Assignment {
        target_to_row: vec![1],
        total_cost: 0.0,
    };
    let (cls, shape) = hungarian_loss(&preds, &[target], &sigma, &cfg).unwrap();
    let neg = |p: f64| -0.75 * p * p * (1.0 - p).ln();
    let pos = |p: f64| -0.25 * (1.0 - p) * (1.0 - p) * p.ln();
    let expected_cls = neg(0.2) + neg(0.1) + neg(0.3) + pos(0.8) + neg(0.1) + neg(0.1);
    assert!((cls - expected_cls).abs() < 1e-15);
    assert!((shape - (0.05 + 0.2) / 4.0).abs() < 1e-15);
}

#[test]
fn one_to_many_targets_repeat_copy_major() {
    let g = vec![bar(0.1, 0.1, 0.2, 0.2), bar(0.3, 0.3, 0.4, 0.4)];
    assert_eq!(one_to_many_targets(&g, 1, 4).unwrap(), g);
    let rep = one_to_many_targets(&g, 3, 6).unwrap();
    assert_eq!(rep.len(), 6);
    for (i, s) in rep.iter().enumerate() {
        assert_eq!(s, &g[i % 2]);
    }
    let err = one_to_many_targets(&g, 3, 5).unwrap_err();
    assert_eq!(err, MatchError::OneToManyCapacity { k: 3, targets: 2, t: 5 });
    let msg = err.to_string();
    assert!(msg.contains("raise T or lower K") && msg.contains("T = 5"), "{msg}");
    assert_eq!(ModelConfig::preset(ShapeKind::Bar).k, 3);
}

#[test]
fn total_loss_empty_chart() {
    let cfg = bar_config(4, 12, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let a = random_set(&mut rng, 4, 2);
    let b = random_set(&mut rng, 12, 2);
    let (lb, _) = total_loss(&a, &b, &[], &cfg).unwrap();
    let none = |s: &PredictionSet| -> f64 {
        s.groups
            .iter()
            .map(|g| focal_loss(&g.class_probs, ShapeKind::NoObject, ALPHA, GAMMA))
            .sum()
    };
    assert!((lb.one2one_loss - none(&a)).abs() < 1e-12);
    assert!((lb.one2many_loss - none(&b)).abs() < 1e-12);
    assert_eq!(lb.shape_loss, 0.0);
    assert_eq!(lb.total, lb.one2one_loss + lb.one2many_loss);
}

#[test]
fn identical_branches_with_k1_agree_exactly() {
    let cfg = bar_config(4, 4, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let a = random_set(&mut rng, 4, 2);
    let targets = random_bars(&mut rng, 3);
    let (lb, s) = total_loss(&a, &a, &targets, &cfg).unwrap();
    assert_eq!(lb.one2one_loss, lb.one2many_loss);
    assert_eq!(Some(s.one2one), s.one2many);
}

#[test]
fn k_zero_drops_the_one_to_many_branch() {
    let cfg = bar_config(4, 1, 0);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let a = random_set(&mut rng, 4, 2);
    let b = random_set(&mut rng, 1, 2);
    let targets = random_bars(&mut rng, 3);
    let (lb, s) = total_loss(&a, &b, &targets, &cfg).unwrap();
    assert_eq!(lb.one2many_loss, 0.0);
    assert_eq!(lb.total, lb.one2one_loss);
    assert!(s.one2many.is_none());
}

#[test]
fn capacity_violations_are_errors() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let targets = random_bars(&mut rng, 3);
    let a = random_set(&mut rng, 2, 2);
    let b = random_set(&mut rng, 9, 2);
    let err = total_loss(&a, &b, &targets, &bar_config(2, 9, 3)).unwrap_err();
    assert_eq!(err, MatchError::Capacity { rows: 2, cols: 3 });
    let a = random_set(&mut rng, 4, 2);
    let err = total_loss(&a, &b, &targets, &bar_config(4, 8, 3)).unwrap_err();
    assert!(matches!(err, MatchError::OneToManyCapacity { k: 3, targets: 3, t: 8 }));
}

#[test]
fn tape_loss_matches_value_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for cost in [MatchCostKind::NegFocal, MatchCostKind::NegProb] {
        let mut cfg = bar_config(4, 12, 3);
        cfg.match_cost = cost;
        let a = random_set(&mut rng, 4, 2);
        let b = random_set(&mut rng, 12, 2);
        let targets = random_bars(&mut rng, 3);
        let (lb, s) = total_loss(&a, &b, &targets, &cfg).unwrap();
        let mut tape = Tape::new();
        let vars = |tape: &mut Tape, set: &PredictionSet| {
            let (p, k) = set.to_arrays();
            BranchVars {
                probs: tape.constant(p),
                keypoints: tape.constant(k),
            }
        };
        let (va, vb) = (vars(&mut tape, &a), vars(&mut tape, &b));
        let out = total_loss_on_tape(&mut tape, va, Some(vb), &targets, &cfg, None).unwrap();
        assert_eq!(out.assignments, s);
        for (x, y) in [
            (out.breakdown.total, lb.total),
            (out.breakdown.cls_loss, lb.cls_loss),
            (out.breakdown.shape_loss, lb.shape_loss),
            (out.breakdown.one2one_loss, lb.one2one_loss),
            (out.breakdown.one2many_loss, lb.one2many_loss),
        ] {
            assert!((x - y).abs() < 1e-12, "{x} vs {y}");
        }
        assert_eq!(tape.value(out.total).data()[0], out.breakdown.total);
        assert_eq!(out.breakdown.total, out.breakdown.one2one_loss + out.breakdown.one2many_loss);
    }
}

#[test]
fn loss_gradient_matches_finite_differences_with_fixed_assignment() {
    let cfg = bar_config(4, 12, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let a = random_set(&mut rng, 4, 2);
    let b = random_set(&mut rng, 12, 2);
    let targets = random_bars(&mut rng, 3);
    let (_, fixed) = total_loss(&a, &b, &targets, &cfg).unwrap();
    let mut params = ParamMap::new();
    let (pa, ka) = a.to_arrays();
    let (pb, kb) = b.to_arrays();
    params.insert("a.probs".into(), pa);
    params.insert("a.kpts".into(), ka);
    params.insert("b.probs".into(), pb);
    params.insert("b.kpts".into(), kb);
    let eval = |p: &ParamMap| -> Result<Evaluation, MatchError> {
        let mut tape = Tape::new();
        let va = BranchVars {
            probs: tape.param("a.probs", p["a.probs"].clone()),
            keypoints: tape.param("a.kpts", p["a.kpts"].clone()),
        };
        let vb = BranchVars {
            probs: tape.param("b.probs", p["b.probs"].clone()),
            keypoints: tape.param("b.kpts", p["b.kpts"].clone()),
        };
        let out = total_loss_on_tape(&mut tape, va, Some(vb), &targets, &cfg, Some(&fixed))?;
        Ok(Evaluation {
            value: out.breakdown.total,
            gradients: tape.backward(out.total)?.params(&tape),
            regime: tape.regime_signature(),
        })
    };
    let report = finite_diff_check(eval, &params, 1e-6).unwrap();
    assert!(report.max_rel_error <= 1e-5, "{report:?}");
    assert!(report.checked > 50);
}

/// Whether the best assignment beats every other one by more than 1e-9.
fn optimum_is_unique(cost: &CostMatrix) -> bool {
    fn walk(cost: &CostMatrix, t: usize, used: &mut Vec<bool>, acc: f64, out: &mut Vec<f64>) {
        if t == cost.cols() {
            out.push(acc);
            return;
        }
        for r in 0..cost.rows() {
            if !used[r] {
                used[r] = true;
                walk(cost, t + 1, used, acc + cost.get(r, t), out);
                used[r] = false;
            }
        }
    }
    let mut totals = Vec::new();
    walk(cost, 0, &mut vec![false; cost.rows()], 0.0, &mut totals);
    totals.sort_by(f64::total_cmp);
    totals.len() < 2 || totals[1] - totals[0] > 1e-9
}

fn permute(targets: &[Shape], perm: &[usize]) -> Vec<Shape> {
    perm.iter().map(|&i| targets[i].clone()).collect()
}

proptest! {
    #[test]
    fn permuting_targets_permutes_assignment(seed in any::<u64>(), count in 1usize..=4) {
        let cfg = bar_config(4, 12, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_set(&mut rng, 4, 2);
        let b = random_set(&mut rng, 12, 2);
        let targets = random_bars(&mut rng, count);
        let mut perm: Vec<usize> = (0..count).collect();
        for i in (1..count).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let (l0, s0) = total_loss(&a, &b, &targets, &cfg).unwrap();
        let permuted = permute(&targets, &perm);
        let (l1, s1) = total_loss(&a, &b, &permuted, &cfg).unwrap();
        // exact ties (common with l1 costs) may be broken differently
        let cost = cost_matrix(&a, &permuted, &cfg).unwrap();
        if optimum_is_unique(&cost) {
            for (i, &p) in perm.iter().enumerate() {
                prop_assert_eq!(s1.one2one.target_to_row[i], s0.one2one.target_to_row[p]);
            }
        }
        for (x, y) in [
            (l0.total, l1.total),
            (l0.cls_loss, l1.cls_loss),
            (l0.shape_loss, l1.shape_loss),
            (l0.one2one_loss, l1.one2one_loss),
            (l0.one2many_loss, l1.one2many_loss),
        ] {
            prop_assert!((x - y).abs() <= 1e-12, "{} vs {}", x, y);
        }
    }

    #[test]
    fn shrinking_matched_error_never_increases_loss(seed in any::<u64>(), t in 0.0f64..1.0) {
        let cfg = bar_config(4, 12, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_set(&mut rng, 4, 2);
        let b = random_set(&mut rng, 12, 2);
        let targets = random_bars(&mut rng, 2);
        let (l0, s) = total_loss(&a, &b, &targets, &cfg).unwrap();
        // move the group matched to target 0 toward it
        let row = s.one2one.target_to_row[0];
        let mut closer = a.clone();
        for (p, q) in closer.groups[row].keypoints.iter_mut().zip(&targets[0].keypoints) {
            p.x += t * (q.x - p.x);
            p.y += t * (q.y - p.y);
        }
        let (l1, _) = total_loss(&closer, &b, &targets, &cfg).unwrap();
        prop_assert!(l1.total <= l0.total + 1e-12, "{} > {}", l1.total, l0.total);
    }

    #[test]
    fn hungarian_matches_oracle(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cols = rng.random_range(0..=6);
        let rows = rng.random_range(cols.max(1)..=12);
        let cost = CostMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0)).unwrap();
        let h = hungarian_assign(&cost).unwrap();
        let b = brute_force_assign(&cost).unwrap();
        prop_assert!((h.total_cost - b.total_cost).abs() <= 1e-9);
        prop_assert_eq!(h.target_to_row, b.target_to_row);
    }
}

#[test]
fn array_helpers_stay_consistent() {
    let p = Array::new(vec![1, 3], vec![0.1, 0.2, 0.3]).unwrap();
    let k = Array::new(vec![1, 4], vec![0.1, 0.2, 0.3, 0.4]).unwrap();
    let set = PredictionSet::from_arrays(&p, &k);
    assert_eq!(set.groups[0].keypoints, kp(&[(0.1, 0.2), (0.3, 0.4)]));
}

