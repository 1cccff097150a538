//! Independent reference computations checked against the library.

use ndarray::{array, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use relanchor::eval::pca_project;
use relanchor::normalize_rows;
use relanchor::optimizer::{loss_and_gradient, AnchorEstimate};
use relanchor::transport::{marginal_error, sinkhorn_plan, SinkhornConfig};

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample(StandardNormal))
}

fn loss_at(raw: &Array2<f64>, seed_count: usize, r: &Array2<f64>, t: &Array2<f64>) -> f64 {
    let est = AnchorEstimate::from_raw(raw.clone(), seed_count, false).unwrap();
    loss_and_gradient(r.view(), t.view(), &est).unwrap().0
}

#[test]
fn gradient_matches_central_differences() {
    let h = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..20 {
        let m = 2 + case % 7; // anchors
        let d = 2 + case % 4;
        let p = 3 + case % 5;
        let raw = gaussian(&mut rng, m, d);
        let t = normalize_rows(gaussian(&mut rng, p, d).view()).unwrap();
        let r = gaussian(&mut rng, p, m) * 0.5;
        let est = AnchorEstimate::from_raw(raw.clone(), 1, false).unwrap();
        let (_, grad) = loss_and_gradient(r.view(), t.view(), &est).unwrap();
        let mut worst = 0.0_f64;
        for i in 0..m {
            for j in 0..d {
                let mut plus = raw.clone();
                plus[[i, j]] += h;
                let mut minus = raw.clone();
                minus[[i, j]] -= h;
                let fd = (loss_at(&plus, 1, &r, &t) - loss_at(&minus, 1, &r, &t)) / (2.0 * h);
                let g = grad[[i, j]];
                let rel = (g - fd).abs() / g.abs().max(fd.abs()).max(1e-6);
                worst = worst.max(rel);
            }
        }
        assert!(worst < 1e-4, "case {case}: max relative error {worst}");
    }
}

/// Cyclic Jacobi eigen-decomposition of a symmetric matrix.
fn jacobi_eigen(mut a: Array2<f64>) -> (Vec<f64>, Array2<f64>) {
    let n = a.nrows();
    let mut v = Array2::<f64>::eye(n);
    for _ in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[[i, j]] * a[[i, j]])
            .sum();
        if off < 1e-24 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[[p, q]].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[[q, q]] - a[[p, p]]) / (2.0 * a[[p, q]]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[[k, p]];
                    let akq = a[[k, q]];
                    a[[k, p]] = c * akp - s * akq;
                    a[[k, q]] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[[p, k]];
                    let aqk = a[[q, k]];
                    a[[p, k]] = c * apk - s * aqk;
                    a[[q, k]] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }
    ((0..n).map(|i| a[[i, i]]).collect(), v)
}

#[test]
fn pca_matches_jacobi_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for case in 0..10 {
        let m = 3 + case % 4;
        let n = 30;
        let scale = Array2::from_shape_fn((1, m), |(_, j)| (m - j) as f64);
        let x = gaussian(&mut rng, n, m) * &scale;
        let out = pca_project(x.view(), 2).unwrap();

        let mean = x.mean_axis(ndarray::Axis(0)).unwrap();
        let c = &x - &mean;
        let cov = c.t().dot(&c) / n as f64;
        let (vals, vecs) = jacobi_eigen(cov);
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| vals[b].total_cmp(&vals[a]));
        for (col, &e) in order.iter().take(2).enumerate() {
            let mut v = vecs.column(e).to_owned();
            let lead = v.iter().copied().fold(0.0_f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
            if lead < 0.0 {
                v.mapv_inplace(|x| -x);
            }
            let expected = c.dot(&v);
            for (a, b) in out.column(col).iter().zip(expected.iter()) {
                assert!((a - b).abs() < 1e-8, "case {case} col {col}: {a} vs {b}");
            }
        }
    }
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

#[test]
fn converged_sinkhorn_matches_brute_force_lp() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let cfg = SinkhornConfig {
        eps: 1e-3,
        max_steps: 1_000_000,
        stop_error: 1e-5,
    };
    let mut checked = 0;
    while checked < 50 {
        let n = 2 + checked % 2;
        let cost = Array2::from_shape_simple_fn((n, n), || rng.random::<f64>());
        // the LP optimum over uniform couplings is a vertex: a permutation / n
        let mut costs: Vec<(f64, Vec<usize>)> = permutations(n)
            .into_iter()
            .map(|p| ((0..n).map(|i| cost[[i, p[i]]]).sum(), p))
            .collect();
        costs.sort_by(|a, b| a.0.total_cmp(&b.0));
        // near-ties: the entropic optimum itself is then e^(-gap/2eps) away
        // from the vertex, so only well-separated instances are comparable
        if costs[1].0 - costs[0].0 < 0.03 {
            continue;
        }
        let best = &costs[0].1;
        let plan = sinkhorn_plan(cost.view(), &cfg).unwrap();
        let mut tv = 0.0;
        for i in 0..n {
            for j in 0..n {
                let lp = if best[i] == j { 1.0 / n as f64 } else { 0.0 };
                tv += (plan.plan[[i, j]] - lp).abs();
            }
        }
        tv *= 0.5;
        assert!(tv < 1e-3, "TV {tv} for cost {cost:?}");
        assert!(marginal_error(plan.plan.view()) <= 1e-5, "marg {} iters {} cost {cost:?}", marginal_error(plan.plan.view()), plan.iterations_run);
        checked += 1;
    }
}

#[test]
fn sinkhorn_closed_form_two_by_two() {
    let cost = array![[0.0, 1.0], [1.0, 0.0]];
    let cfg = SinkhornConfig {
        eps: 1.0,
        max_steps: 500,
        stop_error: 1e-12,
    };
    let plan = sinkhorn_plan(cost.view(), &cfg).unwrap();
    let e = (1.0_f64).exp();
    let diag = 0.5 * e / (1.0 + e);
    assert!((plan.plan[[0, 0]] - diag).abs() < 1e-10);
    assert!((plan.plan[[0, 1]] - (0.5 - diag)).abs() < 1e-10);
}
