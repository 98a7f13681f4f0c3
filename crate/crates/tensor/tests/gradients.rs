//! Central-difference checks for every differentiable tape op.

use pathe_tensor::{grad_check, ParamId, ParamStore, Result, Tape, Tensor, Var};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-5;
const TOL: f64 = 1e-5;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    // Keep values away from the relu kink so finite differences stay on one side.
    let data = (0..n)
        .map(|_| {
            let v: f64 = rng.gen_range(0.05..1.0);
            if rng.gen_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Reduces `out` to a scalar through a fixed random projection so every
/// output element carries a distinct upstream gradient.
fn project(tape: &mut Tape<f64>, out: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let w = tape.constant(random(tape.shape(out), &mut rng));
    let prod = tape.mul(out, w)?;
    Ok(tape.sum(prod))
}

fn check<F>(shapes: &[&[usize]], seed: u64, mut f: F) -> f64
where
    F: FnMut(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let ids: Vec<ParamId> = shapes
        .iter()
        .enumerate()
        .map(|(i, s)| store.add(format!("p{i}"), random(s, &mut rng)))
        .collect();
    let report = grad_check(&mut store, &[], EPS, |tape, store| {
        let vars: Vec<Var> = ids.iter().map(|&id| tape.param(store, id)).collect();
        let out = f(tape, &vars)?;
        project(tape, out, seed)
    })
    .unwrap();
    report.max_rel_error
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn matmul_and_broadcast_add(b in 1usize..4, m in 1usize..4, k in 1usize..5, n in 1usize..5, seed in any::<u64>()) {
        let err = check(&[&[b, m, k], &[k, n], &[n]], seed, |t, v| {
            let y = t.matmul(v[0], v[1])?;
            t.add_broadcast(y, v[2])
        });
        prop_assert!(err < TOL, "{err}");
    }

    #[test]
    fn elementwise_ops(m in 1usize..5, n in 1usize..5, seed in any::<u64>()) {
        let err = check(&[&[m, n], &[m, n]], seed, |t, v| {
            let s = t.add(v[0], v[1])?;
            let p = t.mul(s, v[1])?;
            let r = t.relu(p);
            Ok(t.scale(r, 1.7))
        });
        prop_assert!(err < TOL, "{err}");
    }

    #[test]
    fn concat_reshape_mean(a in 1usize..4, b in 1usize..4, c in 1usize..4, axis in 0usize..3, seed in any::<u64>()) {
        let mut second = [a, b, c];
        second[axis] += 1;
        let err = check(&[&[a, b, c], &second], seed, |t, v| {
            let cat = t.concat(&[v[0], v[1]], axis)?;
            let m = t.mean(cat, axis)?;
            let n: usize = t.shape(m).iter().product();
            t.reshape(m, &[n])
        });
        prop_assert!(err < TOL, "{err}");
    }

    #[test]
    fn lookup_with_repeats(rows in 2usize..6, d in 1usize..4, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ids: Vec<usize> = (0..6).map(|_| rng.gen_range(0..rows)).collect();
        let err = check(&[&[rows, d]], seed, |t, v| t.embedding_lookup(v[0], &ids, &[2, 3]));
        prop_assert!(err < TOL, "{err}");
    }

    #[test]
    fn layer_norm(rows in 1usize..4, d in 2usize..6, seed in any::<u64>()) {
        let err = check(&[&[rows, d], &[d], &[d]], seed, |t, v| t.layer_norm(v[0], v[1], v[2]));
        prop_assert!(err < TOL, "{err}");
    }

    #[test]
    fn softmax_family(a in 1usize..4, b in 1usize..5, axis in 0usize..2, seed in any::<u64>()) {
        let err = check(&[&[a, b]], seed, |t, v| {
            let s = t.softmax(v[0], axis)?;
            let l = t.log_softmax(v[0], axis)?;
            t.add(s, l)
        });
        prop_assert!(err < TOL, "{err}");
    }

    #[test]
    fn dropout_with_fixed_mask(n in 1usize..20, seed in any::<u64>()) {
        // Every evaluation uses a fresh tape with the same seed, so the mask is fixed.
        let err = check(&[&[n]], seed, |t, v| t.dropout(v[0], 0.3, true));
        prop_assert!(err < TOL, "{err}");
    }

    #[test]
    fn masked_attention(b in 1usize..3, l in 1usize..5, heads in 1usize..3, hd in 1usize..3, seed in any::<u64>()) {
        let d = heads * hd;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // At least one attended key per row.
        let mask: Vec<bool> = (0..b * l).map(|i| i % l == 0 || rng.gen_bool(0.6)).collect();
        let err = check(&[&[b, l, d], &[b, l, d], &[b, l, d]], seed, |t, v| {
            t.multi_head_attention(v[0], v[1], v[2], Some(&mask), heads)
        });
        prop_assert!(err < TOL, "{err}");
    }

    #[test]
    fn cross_entropy_smoothed_weighted(n in 1usize..5, c in 2usize..6, smooth in 0.0f64..0.3, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let targets: Vec<usize> = (0..n).map(|_| rng.gen_range(0..c)).collect();
        let weights: Vec<f64> = (0..c).map(|_| rng.gen_range(0.5..2.0)).collect();
        let err = check(&[&[n, c]], seed, |t, v| t.cross_entropy(v[0], &targets, smooth, Some(&weights)));
        prop_assert!(err < TOL, "{err}");
    }

    #[test]
    fn bce_weighted(n in 1usize..8, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let targets: Vec<f64> = (0..n).map(|_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 }).collect();
        let weights: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..2.0)).collect();
        let err = check(&[&[n]], seed, |t, v| t.bce_with_logits(v[0], &targets, &weights));
        prop_assert!(err < TOL, "{err}");
    }
}

#[test]
fn attention_block_with_projections() {
    let (b, l, d, heads) = (2, 4, 6, 2);
    let mask = vec![true, true, true, false, true, true, false, false];
    let err = check(
        &[
            &[b, l, d],
            &[d, d],
            &[d, d],
            &[d, d],
            &[d, d],
            &[d],
            &[d],
            &[d],
        ],
        7,
        |t, v| {
            let q = t.matmul(v[0], v[1])?;
            let k = t.matmul(v[0], v[2])?;
            let val = t.matmul(v[0], v[3])?;
            let a = t.multi_head_attention(q, k, val, Some(&mask), heads)?;
            let o = t.matmul(a, v[4])?;
            let r = t.add(o, v[0])?;
            let n = t.layer_norm(r, v[5], v[6])?;
            t.add_broadcast(n, v[7])
        },
    );
    assert!(err < 1e-5, "{err}");
}

#[test]
fn masked_keys_do_not_influence_output() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let q = random(&[1, 3, 4], &mut rng);
    let k = random(&[1, 3, 4], &mut rng);
    let v = random(&[1, 3, 4], &mut rng);
    let mask = [true, true, false];
    let run = |k: Tensor<f64>, v: Tensor<f64>| {
        let mut t = Tape::<f64>::new(0);
        let (q, k, v) = (t.constant(q.clone()), t.constant(k), t.constant(v));
        let out = t.multi_head_attention(q, k, v, Some(&mask), 2).unwrap();
        t.value(out).clone()
    };
    let base = run(k.clone(), v.clone());
    let (mut k2, mut v2) = (k, v);
    for j in 8..12 {
        k2.data_mut()[j] = 100.0;
        v2.data_mut()[j] = -100.0;
    }
    assert_eq!(base, run(k2, v2));
}

#[test]
fn softmax_rows_normalise_and_log_softmax_agrees() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = random(&[5, 7], &mut rng);
    let mut t = Tape::<f64>::new(0);
    let xv = t.constant(x);
    let s = t.softmax(xv, 1).unwrap();
    let l = t.log_softmax(xv, 1).unwrap();
    for row in t.value(s).data().chunks(7) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }
    for (p, lp) in t.value(s).data().iter().zip(t.value(l).data()) {
        assert!((p.ln() - lp).abs() < 1e-6);
    }
}

#[test]
fn dropout_zero_rate_is_identity() {
    let mut t = Tape::<f32>::new(1);
    let x = t.constant(Tensor::from_f64(&[3], &[1.0, -2.0, 3.0]).unwrap());
    let y = t.dropout(x, 0.0, true).unwrap();
    assert_eq!(t.value(x), t.value(y));
}

#[test]
fn zero_grad_resets_after_backward() {
    let mut store = ParamStore::<f64>::new();
    let id = store.add("w", Tensor::from_f64(&[2], &[1.0, 2.0]).unwrap());
    let mut t = Tape::new(0);
    let w = t.param(&store, id);
    let sq = t.mul(w, w).unwrap();
    let loss = t.sum(sq);
    t.backward(loss, &mut store).unwrap();
    assert_eq!(store.grad(id).data(), &[2.0, 4.0]);
    store.zero_grad();
    assert!(store.grad(id).data().iter().all(|&g| g == 0.0));
}
