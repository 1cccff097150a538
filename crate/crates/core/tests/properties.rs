use ndarray::{Array2, Axis};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use relanchor::eval::retrieval_eval;
use relanchor::stitch::mae;
use relanchor::synth::{random_orthogonal, random_space};
use relanchor::transport::{cost_matrix, hard_correspondence, sinkhorn_plan, SinkhornConfig};
use relanchor::{normalize_rows, relative_projection, AnchorSet, EmbeddingSpace, RelativeRepresentation};

fn gaussian(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_simple_fn((rows, cols), || rng.sample(StandardNormal))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn relative_projection_is_rotation_invariant(seed in any::<u64>(), n in 2usize..40, d in 2usize..12, m in 1usize..10) {
        let x = normalize_rows(gaussian(n, d, seed).view()).unwrap();
        let a = normalize_rows(gaussian(m, d, seed ^ 1).view()).unwrap();
        let q = random_orthogonal(d, seed ^ 2);
        let r = relative_projection(x.view(), a.view()).unwrap();
        let rq = relative_projection(x.dot(&q).view(), a.dot(&q).view()).unwrap();
        for (u, v) in r.values.iter().zip(rq.values.iter()) {
            prop_assert!((u - v).abs() < 1e-10);
        }
    }

    #[test]
    fn anchors_against_themselves_have_unit_diagonal(seed in any::<u64>(), m in 1usize..20, d in 2usize..10) {
        let a = normalize_rows(gaussian(m, d, seed).view()).unwrap();
        let r = relative_projection(a.view(), a.view()).unwrap();
        for i in 0..m {
            prop_assert!((r.values[[i, i]] - 1.0).abs() < 1e-12);
        }
        prop_assert!(r.values.iter().all(|v| v.abs() <= 1.0 + 1e-12));
    }

    #[test]
    fn sinkhorn_ignores_constant_cost_shift(seed in any::<u64>(), p in 2usize..8, shift in -5.0f64..5.0) {
        let cost = gaussian(p, p, seed).mapv(f64::abs);
        let cfg = SinkhornConfig { eps: 0.1, max_steps: 50, stop_error: 1e-9 };
        let a = sinkhorn_plan(cost.view(), &cfg).unwrap();
        let b = sinkhorn_plan((&cost + shift).view(), &cfg).unwrap();
        for (u, v) in a.plan.iter().zip(b.plan.iter()) {
            prop_assert!((u - v).abs() < 1e-9);
        }
    }

    #[test]
    fn sinkhorn_recovers_a_permutation(seed in any::<u64>(), n in 2usize..30) {
        // rows of a permuted copy of a well-separated set
        let x = normalize_rows(gaussian(n, 16, seed).view()).unwrap();
        let a = normalize_rows(gaussian(12, 16, seed ^ 9).view()).unwrap();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 3);
        rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut rng);
        let rx = relative_projection(x.view(), a.view()).unwrap();
        let ry = RelativeRepresentation { values: rx.values.select(Axis(0), &perm) };
        // rows of the cost are target (y) samples
        let cost = cost_matrix(&rx, &ry).unwrap();
        let cfg = SinkhornConfig { eps: 1e-3, max_steps: 200, stop_error: 1e-9 };
        let plan = sinkhorn_plan(cost.view(), &cfg).unwrap();
        prop_assert_eq!(hard_correspondence(&plan), perm);
    }

    #[test]
    fn mae_is_symmetric(pairs in prop::collection::vec((0usize..10, 0usize..10), 1..50)) {
        let (p, l): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
        prop_assert_eq!(mae(&p, &l).unwrap(), mae(&l, &p).unwrap());
    }
}

fn shuffled(indices: &[usize], seed: u64) -> Vec<usize> {
    let mut v = indices.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rand::seq::SliceRandom::shuffle(v.as_mut_slice(), &mut rng);
    v
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn retrieval_ignores_anchor_order(seed in any::<u64>()) {
        let x = random_space("x", 120, 8, seed).unwrap();
        let noisy = &x.vectors() + &(gaussian(120, 8, seed ^ 5) * 0.2);
        let y = EmbeddingSpace::new("y", x.keys().to_vec(), noisy).unwrap();
        let idx: Vec<usize> = (0..20).map(|i| i * 5).collect();
        let order = shuffled(&(0..20).collect::<Vec<_>>(), seed ^ 7);
        let idx2: Vec<usize> = order.iter().map(|&i| idx[i]).collect();
        let keys = x.keys().to_vec();
        let s1 = retrieval_eval(
            &x, &y,
            &AnchorSet::new(&x, idx.clone()).unwrap(),
            &AnchorSet::new(&y, idx.clone()).unwrap(),
            &keys, 10,
        ).unwrap();
        let s2 = retrieval_eval(
            &x, &y,
            &AnchorSet::new(&x, idx2.clone()).unwrap(),
            &AnchorSet::new(&y, idx2).unwrap(),
            &keys, 10,
        ).unwrap();
        prop_assert!((s1.jaccard - s2.jaccard).abs() < 1e-9);
        prop_assert!((s1.mrr - s2.mrr).abs() < 1e-9);
        prop_assert!((s1.cosine - s2.cosine).abs() < 1e-9);
    }
}
