use proptest::prelude::*;

use dualcse::encoder::{DualEmbedding, View};
use dualcse::objective::{dual_loss, dual_loss_with_grad, BatchEmbeddings, LossVariant, Role, Slot, Temperature};

fn vector(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(-1.0f64..1.0, dim).prop_filter("nonzero", |v| v.iter().map(|x| x * x).sum::<f64>() > 1e-4)
}

fn batch(n: usize, dim: usize) -> impl Strategy<Value = BatchEmbeddings> {
    proptest::collection::vec(vector(dim), 8 * n).prop_map(move |vs| {
        let mut it = vs.into_iter();
        let mut family = || {
            (0..n)
                .map(|_| DualEmbedding::new(it.next().unwrap(), it.next().unwrap()).unwrap())
                .collect::<Vec<_>>()
        };
        let (p, e, i, c) = (family(), family(), family(), family());
        BatchEmbeddings::new(p, e, i, c).unwrap()
    })
}

fn loss(b: &BatchEmbeddings, v: LossVariant) -> f64 {
    dual_loss(b, Temperature::DEFAULT, v).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn loss_ignores_instance_order(b in batch(3, 5), rot in 0usize..3) {
        let perm: Vec<usize> = (0..3).map(|k| (k + rot) % 3).collect();
        for v in LossVariant::ALL {
            let (a, p) = (loss(&b, v), loss(&b.permuted(&perm), v));
            prop_assert!((a - p).abs() < 1e-9 * a.abs().max(1.0));
        }
    }

    #[test]
    fn loss_ignores_vector_scale(b in batch(2, 4), scale in 0.01f64..100.0) {
        let mut scaled = b.clone();
        for slot in Role::ALL.into_iter().flat_map(|r| View::BOTH.map(|v| Slot::new(r, v))) {
            for i in 0..2 {
                scaled.get_mut(slot, i).iter_mut().for_each(|x| *x *= scale);
            }
        }
        for v in LossVariant::ALL {
            let (a, s) = (loss(&b, v), loss(&scaled, v));
            prop_assert!((a - s).abs() < 1e-9 * a.abs().max(1.0));
        }
    }

    #[test]
    fn ablations_never_exceed_the_full_loss(b in batch(2, 6)) {
        let full = loss(&b, LossVariant::Full);
        let no_con = loss(&b, LossVariant::NoContradiction);
        let no_intra = loss(&b, LossVariant::NoIntra);
        let neither = loss(&b, LossVariant::Neither);
        prop_assert!(neither >= 0.0);
        prop_assert!(full + 1e-12 >= no_con && full + 1e-12 >= no_intra);
        prop_assert!(no_con + 1e-12 >= neither && no_intra + 1e-12 >= neither);
    }

    #[test]
    fn gradients_are_orthogonal_to_their_vectors(b in batch(2, 5)) {
        // cosine is scale-invariant, so each gradient has no radial part
        let (_, g) = dual_loss_with_grad(&b, Temperature::DEFAULT, LossVariant::Full).unwrap();
        for slot in Role::ALL.into_iter().flat_map(|r| View::BOTH.map(|v| Slot::new(r, v))) {
            for i in 0..2 {
                let radial: f64 = g.get(slot, i).iter().zip(b.get(slot, i)).map(|(x, y)| x * y).sum();
                prop_assert!(radial.abs() < 1e-9);
            }
        }
    }
}

#[test]
fn moving_positive_toward_anchor_lowers_the_loss() {
    let e = |k: usize| {
        let mut v = vec![0.05; 6];
        v[k] = 1.0;
        v
    };
    let dual = |a, b| DualEmbedding::new(e(a), e(b)).unwrap();
    let base = BatchEmbeddings::new(vec![dual(0, 1)], vec![dual(2, 2)], vec![dual(3, 3)], vec![dual(4, 4)]).unwrap();
    let mut closer = base.clone();
    // tilt r⁺ toward r
    closer.get_mut(Slot::new(Role::ExplicitEntailment, View::Explicit), 0)[0] = 0.5;
    let mut pushed = base.clone();
    // tilt the contradiction toward the premise
    pushed.get_mut(Slot::new(Role::Contradiction, View::Explicit), 0)[0] = 0.5;
    for v in [LossVariant::Full, LossVariant::NoContradiction, LossVariant::NoIntra] {
        assert!(loss(&closer, v) < loss(&base, v), "{v}");
    }
    // a single instance with no extra denominators has nothing to contrast
    assert_eq!(loss(&closer, LossVariant::Neither), 0.0);
    assert!(loss(&pushed, LossVariant::Full) > loss(&base, LossVariant::Full));
    assert!(loss(&pushed, LossVariant::NoIntra) > loss(&base, LossVariant::NoIntra));
    for v in [LossVariant::NoContradiction, LossVariant::Neither] {
        assert!((loss(&pushed, v) - loss(&base, v)).abs() < 1e-12, "{v}");
    }
}

#[test]
fn gradient_step_separates_identical_premise_views() {
    let r = vec![1.0, 0.2, -0.3, 0.4];
    let other = |k: usize| {
        let mut v = vec![0.1; 4];
        v[k] = -1.0;
        v
    };
    let p = DualEmbedding::new(r.clone(), r.clone()).unwrap();
    let h = |k| DualEmbedding::new(other(k), other(k)).unwrap();
    let b = BatchEmbeddings::new(vec![p], vec![h(0)], vec![h(1)], vec![h(2)]).unwrap();
    let (_, g) = dual_loss_with_grad(&b, Temperature::DEFAULT, LossVariant::Full).unwrap();
    let step = |slot: Slot| -> Vec<f64> {
        b.get(slot, 0).iter().zip(g.get(slot, 0)).map(|(x, d)| x - 1e-3 * d).collect()
    };
    let r1 = step(Slot::new(Role::Premise, View::Explicit));
    let u1 = step(Slot::new(Role::Premise, View::Implicit));
    assert!(dualcse::objective::cosine(&r1, &u1).unwrap() < 1.0 - 1e-9);
}
