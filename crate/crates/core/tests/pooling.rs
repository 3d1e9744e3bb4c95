//! Permutation invariance, masked-row independence and attention sanity over
//! 1000 seeded bags per property.

use ndarray::{Array2, Axis as NdAxis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use rlmildat::autodiff::{backward, ops, Tensor, Value};
use rlmildat::mil::{PoolKind, PoolingHead};

const CASES: u64 = 1000;
const KINDS: [PoolKind; 3] = [PoolKind::Mean, PoolKind::Max, PoolKind::Attention];

struct Case {
    head: PoolingHead,
    x: Tensor,
    mask: Vec<bool>,
}

fn case(seed: u64, kind: PoolKind) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..12);
    let d = rng.random_range(1..6);
    let head = PoolingHead::new(kind, d, 4, 3, 3, &mut rng);
    let x = Array2::from_shape_fn((n, d), |_| rng.sample::<f64, _>(StandardNormal) * 3.0);
    let mut mask: Vec<bool> = (0..n).map(|_| rng.random_bool(0.7)).collect();
    let keep = rng.random_range(0..n);
    mask[keep] = true;
    Case { head, x, mask }
}

fn pooled(head: &PoolingHead, x: &Tensor, mask: &[bool]) -> Tensor {
    head.pool(&Value::constant(x.clone()), mask).unwrap().data().clone()
}

fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn pooling_is_permutation_invariant() {
    for kind in KINDS {
        for seed in 0..CASES {
            let c = case(seed, kind);
            let n = c.x.nrows();
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed + 7919));
            let xp = c.x.select(NdAxis(0), &perm);
            let mp: Vec<bool> = perm.iter().map(|&i| c.mask[i]).collect();
            let a = pooled(&c.head, &c.x, &c.mask);
            let b = pooled(&c.head, &xp, &mp);
            if kind == PoolKind::Max {
                // max involves no arithmetic, so it is exact
                assert_eq!(a, b, "{kind} seed {seed}");
            } else {
                assert!(max_abs_diff(&a, &b) <= 1e-12, "{kind} seed {seed}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn masked_rows_do_not_matter() {
    for kind in KINDS {
        for seed in 0..CASES {
            let c = case(seed, kind);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xdead_beef);
            let mut noisy = c.x.clone();
            for (i, mut row) in noisy.rows_mut().into_iter().enumerate() {
                if !c.mask[i] {
                    row.mapv_inplace(|_| rng.sample::<f64, _>(StandardNormal) * 1e3);
                }
            }
            let run = |x: &Tensor| {
                let xv = Value::variable(x.clone());
                let logits = c.head.forward(&xv, &c.mask).unwrap();
                backward(&ops::sum(&logits)).unwrap();
                let out = logits.data().clone();
                let grad = xv.grad().clone();
                for p in c.head.parameters() {
                    p.value.zero_grad();
                }
                (out, grad)
            };
            let (out_a, grad_a) = run(&c.x);
            let (out_b, grad_b) = run(&noisy);
            assert_eq!(out_a, out_b, "{kind} seed {seed}");
            for (i, &m) in c.mask.iter().enumerate() {
                if m {
                    assert_eq!(grad_a.row(i), grad_b.row(i), "{kind} seed {seed} row {i}");
                } else {
                    assert!(grad_b.row(i).iter().all(|&g| g == 0.0), "{kind} seed {seed} row {i}");
                }
            }
        }
    }
}

#[test]
fn attention_weights_are_a_distribution() {
    for seed in 0..CASES {
        let c = case(seed, PoolKind::Attention);
        let a = c.head.attention_weights(&Value::constant(c.x.clone()), &c.mask).unwrap();
        let a = a.data();
        assert_eq!(a.nrows(), c.mask.iter().filter(|&&m| m).count());
        assert!(a.iter().all(|&w| (0.0..=1.0).contains(&w)));
        assert!((a.sum() - 1.0).abs() <= 1e-9, "seed {seed}: {}", a.sum());
    }
}

#[test]
fn zero_scorer_attention_equals_mean_pooling() {
    for seed in 0..CASES {
        let c = case(seed, PoolKind::Attention);
        let scorer = c.head.attention.as_ref().unwrap();
        let shape = scorer.w.value.shape();
        scorer.w.value.set_data(Array2::zeros(shape)).unwrap();
        let att = pooled(&c.head, &c.x, &c.mask);
        let mean = ops::masked_mean(&Value::constant(c.x.clone()), &c.mask).unwrap().data().clone();
        assert!(max_abs_diff(&att, &mean) <= 1e-12, "seed {seed}");
    }
}

#[test]
fn all_masked_bag_is_rejected() {
    for kind in KINDS {
        let c = case(3, kind);
        let mask = vec![false; c.x.nrows()];
        assert!(matches!(
            c.head.pool(&Value::constant(c.x.clone()), &mask),
            Err(rlmildat::Error::EmptyBag(_))
        ));
    }
}
