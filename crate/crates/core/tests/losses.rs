use localdif::losses::{
    consistency_loss, geometric_loss, logsumexp, semantic_loss, softmax, stable_logsoftmax, total_loss, weighted_log_mean,
    LossTarget, LossWeights,
};
use localdif::rng::substream;
use localdif::sampling::TargetKind;
use ndarray::Array2;
use proptest::prelude::*;
use rand::Rng;

const ORACLE_TOL: f64 = 1e-10;

fn naive_softmax(z: &[f64]) -> Vec<f64> {
    let e: Vec<f64> = z.iter().map(|v| v.exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

fn naive_mean(logits: &[Vec<f64>], w: &[f64]) -> Vec<f64> {
    let k = logits[0].len();
    let mut f = vec![0.0; k];
    for (z, &wa) in logits.iter().zip(w) {
        for (fi, p) in f.iter_mut().zip(naive_softmax(z)) {
            *fi += wa * p;
        }
    }
    f
}

fn naive_semantic(logits: &[Vec<f64>], w: &[f64], class: usize) -> f64 {
    -naive_mean(logits, w)[class - 1].ln()
}

fn naive_geometric(logits: &[Vec<f64>], w: &[f64], occupied: bool) -> f64 {
    let f = naive_mean(logits, w);
    let free = f[f.len() - 1];
    if occupied {
        -f[..f.len() - 1].iter().sum::<f64>().ln()
    } else {
        -free.ln()
    }
}

fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&v| v > 0.0).map(|v| v * v.ln()).sum::<f64>()
}

fn naive_jsd(logits: &[Vec<f64>]) -> f64 {
    let m = logits.len() as f64;
    let ps: Vec<Vec<f64>> = logits.iter().map(|z| naive_softmax(z)).collect();
    let k = ps[0].len();
    let mean: Vec<f64> = (0..k).map(|i| ps.iter().map(|p| p[i]).sum::<f64>() / m).collect();
    entropy(&mean) - ps.iter().map(|p| entropy(p)).sum::<f64>() / m
}

struct Case {
    logits: Vec<Vec<f64>>,
    weights: Vec<f64>,
    class: usize,
}

fn random_case(rng: &mut impl Rng, range: f64) -> Case {
    let m = rng.random_range(1..=4);
    let k = rng.random_range(2..=20);
    let logits = (0..m).map(|_| (0..k).map(|_| rng.random_range(-range..=range)).collect()).collect();
    let mut weights: Vec<f64> = (0..m).map(|_| rng.random_range(0.05..1.0)).collect();
    let s: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= s);
    Case { logits, weights, class: rng.random_range(1..k) }
}

fn views(l: &[Vec<f64>]) -> Vec<&[f64]> {
    l.iter().map(|v| &v[..]).collect()
}

#[test]
fn stable_losses_match_naive_oracles() {
    let mut rng = substream(11, "loss-oracle", 0);
    for i in 0..10_000 {
        let c = random_case(&mut rng, 20.0);
        let v = views(&c.logits);
        let (s, _) = semantic_loss(&v, &c.weights, c.class as u16).unwrap();
        let n = naive_semantic(&c.logits, &c.weights, c.class);
        assert!((s - n).abs() <= ORACLE_TOL, "case {i}: semantic {s} vs {n}");
        for occ in [true, false] {
            let (g, _) = geometric_loss(&v, &c.weights, occ).unwrap();
            let n = naive_geometric(&c.logits, &c.weights, occ);
            assert!((g - n).abs() <= ORACLE_TOL, "case {i}: geometric({occ}) {g} vs {n}");
        }
        if c.logits.len() >= 2 {
            let (j, _) = consistency_loss(&v).unwrap();
            let n = naive_jsd(&c.logits);
            assert!((j - n).abs() <= ORACLE_TOL, "case {i}: jsd {j} vs {n}");
        }
    }
}

#[test]
fn extreme_logits_stay_finite() {
    let mut rng = substream(12, "loss-extreme", 0);
    for _ in 0..2000 {
        let mut c = random_case(&mut rng, 20.0);
        for z in &mut c.logits {
            for v in z.iter_mut() {
                *v = if rng.random_bool(0.5) { 1e4 } else { -1e4 } + *v;
            }
        }
        let v = views(&c.logits);
        let mut outs = vec![semantic_loss(&v, &c.weights, c.class as u16).unwrap()];
        outs.push(geometric_loss(&v, &c.weights, true).unwrap());
        outs.push(geometric_loss(&v, &c.weights, false).unwrap());
        if v.len() >= 2 {
            outs.push(consistency_loss(&v).unwrap());
        }
        for (l, g) in outs {
            assert!(l.is_finite() && l >= -1e-9, "loss {l}");
            assert!(g.iter().flatten().all(|x| x.is_finite()));
        }
    }
}

#[test]
fn occupied_free_softmax_identity() {
    let mut rng = substream(13, "identity", 0);
    for _ in 0..10_000 {
        let k = rng.random_range(2..=20);
        let z: Vec<f64> = (0..k).map(|_| rng.random_range(-20.0..20.0)).collect();
        let f = softmax(&z);
        let pair = softmax(&[logsumexp(&z[..k - 1]), z[k - 1]]);
        let occ: f64 = f[..k - 1].iter().sum();
        assert!((pair[0] - occ).abs() <= 1e-12 && (pair[1] - f[k - 1]).abs() <= 1e-12);
    }
}

fn fd_check(f: impl Fn(&[Vec<f64>]) -> f64, logits: &[Vec<f64>], grads: &[Vec<f64>], what: &str) {
    let h = 1e-5;
    for a in 0..logits.len() {
        for i in 0..logits[a].len() {
            let mut p = logits.to_vec();
            p[a][i] += h;
            let fp = f(&p);
            p[a][i] -= 2.0 * h;
            let fm = f(&p);
            let num = (fp - fm) / (2.0 * h);
            let scale = num.abs().max(grads[a][i].abs()).max(1e-2);
            assert!((num - grads[a][i]).abs() <= 1e-4 * scale, "{what} [{a}][{i}]: {} vs {num}", grads[a][i]);
        }
    }
}

#[test]
fn loss_gradients_match_finite_differences() {
    for seed in 0..10 {
        let mut rng = substream(seed, "loss-fd", 0);
        for _ in 0..20 {
            let c = random_case(&mut rng, 6.0);
            let v = views(&c.logits);
            let (_, g) = semantic_loss(&v, &c.weights, c.class as u16).unwrap();
            fd_check(|l| semantic_loss(&views(l), &c.weights, c.class as u16).unwrap().0, &c.logits, &g, "semantic");
            for occ in [true, false] {
                let (_, g) = geometric_loss(&v, &c.weights, occ).unwrap();
                fd_check(|l| geometric_loss(&views(l), &c.weights, occ).unwrap().0, &c.logits, &g, "geometric");
            }
            if v.len() >= 2 {
                let (_, g) = consistency_loss(&v).unwrap();
                fd_check(|l| consistency_loss(&views(l)).unwrap().0, &c.logits, &g, "consistency");
            }
        }
    }
}

fn batch(seed: u64) -> (Array2<f64>, Vec<LossTarget<f64>>) {
    let mut rng = substream(seed, "total-fd", 0);
    let k = 5;
    let rows = 24;
    let z = Array2::from_shape_simple_fn((rows, k), || rng.random_range(-4.0..4.0));
    let mut targets = Vec::new();
    let mut r = 0;
    for kind in [TargetKind::Semantic(2), TargetKind::Semantic(4), TargetKind::Free, TargetKind::OccupiedUnlabeled, TargetKind::Consistency, TargetKind::Free] {
        let n = if kind == TargetKind::Consistency { 4 } else { rng.random_range(2..=4) };
        let mut w: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
        let s: f64 = w.iter().sum();
        w.iter_mut().for_each(|x| *x /= s);
        targets.push(LossTarget { kind, rows: (r..r + n).collect(), weights: w });
        r += n;
    }
    (z.slice(ndarray::s![..r, ..]).to_owned(), targets)
}

#[test]
fn total_loss_gradient_matches_finite_differences() {
    let lambda = LossWeights::default();
    for seed in 0..10 {
        let (z, targets) = batch(seed);
        let (_, dz) = total_loss(z.view(), &targets, &lambda).unwrap();
        let h = 1e-5;
        for idx in ndarray::indices(z.dim()) {
            let mut zp = z.clone();
            zp[idx] += h;
            let fp = total_loss(zp.view(), &targets, &lambda).unwrap().0.total;
            zp[idx] -= 2.0 * h;
            let fm = total_loss(zp.view(), &targets, &lambda).unwrap().0.total;
            let num = (fp - fm) / (2.0 * h);
            let scale = num.abs().max(dz[idx].abs()).max(1e-2);
            assert!((num - dz[idx]).abs() <= 1e-4 * scale, "seed {seed} {idx:?}: {} vs {num}", dz[idx]);
        }
    }
}

#[test]
fn total_loss_is_lambda_weighted_mean_of_terms() {
    let (z, targets) = batch(3);
    let lambda = LossWeights { lambda_s: 2.0, lambda_g: 0.5, lambda_c: 3.0 };
    let (rep, _) = total_loss(z.view(), &targets, &lambda).unwrap();
    let expect = 2.0 * rep.semantic + 0.5 * rep.geometric + 3.0 * rep.consistency;
    assert!((rep.total - expect).abs() < 1e-12);
    assert_eq!((rep.n_semantic, rep.n_free, rep.n_occupied_unlabeled, rep.n_consistency), (2, 2, 1, 1));
    assert!((rep.semantic * 2.0 - rep.semantic_sum).abs() < 1e-12);
}

#[test]
fn zero_lambda_removes_a_term_from_the_gradient() {
    let (z, targets) = batch(4);
    let only_c = LossWeights { lambda_s: 0.0, lambda_g: 0.0, lambda_c: 1.0 };
    let (_, dz) = total_loss(z.view(), &targets[4..5], &only_c).unwrap();
    let (_, dz_none) = total_loss(z.view(), &targets[4..5], &LossWeights { lambda_c: 0.0, ..only_c }).unwrap();
    assert!(dz.iter().any(|v| v.abs() > 1e-6));
    assert!(dz_none.iter().all(|&v| v == 0.0));
}

fn logits_strategy() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (2usize..=4, 2usize..=8).prop_flat_map(|(m, k)| prop::collection::vec(prop::collection::vec(-30.0f64..30.0, k), m))
}

proptest! {
    #[test]
    fn jsd_is_bounded(logits in logits_strategy()) {
        let (j, _) = consistency_loss(&views(&logits)).unwrap();
        let m = logits.len() as f64;
        let k = logits[0].len() as f64;
        prop_assert!(j >= -1e-12);
        prop_assert!(j <= m.ln().min(k.ln()) + 1e-12);
    }

    #[test]
    fn losses_are_shift_invariant(logits in logits_strategy(), shift in -50.0f64..50.0) {
        let m = logits.len();
        let w = vec![1.0 / m as f64; m];
        let shifted: Vec<Vec<f64>> = logits.iter().map(|z| z.iter().map(|v| v + shift).collect()).collect();
        let (a, _) = semantic_loss(&views(&logits), &w, 1).unwrap();
        let (b, _) = semantic_loss(&views(&shifted), &w, 1).unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
        let (a, _) = consistency_loss(&views(&logits)).unwrap();
        let (b, _) = consistency_loss(&views(&shifted)).unwrap();
        prop_assert!((a - b).abs() <= 1e-9);
    }

    #[test]
    fn per_support_gradients_sum_to_zero(logits in logits_strategy()) {
        let m = logits.len();
        let w = vec![1.0 / m as f64; m];
        let v = views(&logits);
        for (_, g) in [semantic_loss(&v, &w, 1).unwrap(), geometric_loss(&v, &w, true).unwrap(), consistency_loss(&v).unwrap()] {
            for ga in g {
                prop_assert!(ga.iter().sum::<f64>().abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn weighted_log_mean_matches_direct_mixture(logits in logits_strategy()) {
        let m = logits.len();
        let w: Vec<f64> = (0..m).map(|a| (a + 1) as f64).collect();
        let s: f64 = w.iter().sum();
        let w: Vec<f64> = w.iter().map(|x| x / s).collect();
        let lm = weighted_log_mean(&views(&logits), &w);
        let direct = naive_mean(&logits, &w);
        for (a, b) in lm.iter().zip(direct) {
            prop_assert!((a.exp() - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn logsoftmax_normalizes(z in prop::collection::vec(-1e4f64..1e4, 2..10)) {
        let l = stable_logsoftmax(&z);
        prop_assert!(l.iter().all(|v| v.is_finite() && *v <= 0.0));
        let total: f64 = l.iter().map(|v| v.exp()).sum();
        prop_assert!((total - 1.0).abs() <= 1e-12);
    }
}
