use proptest::prelude::*;

use adversarial_debias::fairness::{
    confusion_by_group, demographic_parity_gap, empirical_entropy, two_proportion_ztest,
};
use adversarial_debias::grad_engine::{
    compose_debias_direction, AdamConfig, AdamState, DebiasGradients, ParamVector, ScheduleSpec,
};
use adversarial_debias::models::{AnalogyPredictor, OddsAdversary, ParityAdversary};
use adversarial_debias::numerics::{dot, logit, project, sigmoid, DenseVector};

fn vec_of(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0f64..10.0, len)
}

fn pair_of_vecs() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (1usize..12).prop_flat_map(|n| (vec_of(n), vec_of(n)))
}

fn binary(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop::bool::ANY.prop_map(|b| if b { 1.0 } else { 0.0 }), len)
}

proptest! {
    #[test]
    fn direction_pushes_adversary_by_exactly_alpha((gp, ga) in pair_of_vecs(), alpha in 0.0f64..50.0) {
        let n2: f64 = ga.iter().map(|x| x * x).sum();
        prop_assume!(n2 > 1e-6);
        let g = DebiasGradients {
            grad_p: DenseVector::from_slice(&gp),
            grad_a_w: DenseVector::from_slice(&ga),
            grad_a_u: DenseVector::default(),
        };
        let d = compose_debias_direction(&g, alpha).unwrap();
        let lhs = dot(&d, &ga).unwrap();
        let scale = alpha * n2 + gp.iter().map(|x| x.abs()).sum::<f64>() * n2.sqrt();
        prop_assert!((lhs + alpha * n2).abs() <= 1e-10 * scale.max(1.0), "{lhs} vs {}", -alpha * n2);
    }

    #[test]
    fn projection_residual_is_orthogonal((x, v) in pair_of_vecs()) {
        let nv: f64 = v.iter().map(|a| a * a).sum();
        prop_assume!(nv > 1e-6);
        let p = project(&x, &v).unwrap();
        let residual: Vec<f64> = x.iter().zip(p.iter()).map(|(a, b)| a - b).collect();
        let nx: f64 = x.iter().map(|a| a * a).sum::<f64>().sqrt();
        prop_assert!(dot(&residual, &v).unwrap().abs() <= 1e-10 * (nx * nv.sqrt()).max(1.0));
    }

    #[test]
    fn first_adam_step_moves_by_lr_against_gradient(g in -100.0f64..100.0, lr in 1e-4f64..1.0) {
        prop_assume!(g.abs() > 1e-3);
        let mut params = ParamVector::new(vec![("x".into(), vec![0.0])]).unwrap();
        let mut adam = AdamState::new(1, AdamConfig::with_lr(lr)).unwrap();
        adam.step(&mut params, &[g], 1.0).unwrap();
        // m̂ = g and v̂ = g² at t = 1.
        let expected = -lr * g / (g.abs() + 1e-8);
        prop_assert!((params.values()[0] - expected).abs() <= 1e-12);
    }

    #[test]
    fn adam_is_bitwise_deterministic(grads in prop::collection::vec(vec_of(3), 1..20)) {
        let run = || {
            let mut p = ParamVector::new(vec![("w".into(), vec![0.5, -0.5, 1.0])]).unwrap();
            let mut adam = AdamState::new(3, AdamConfig::with_lr(0.05)).unwrap();
            for g in &grads {
                adam.step(&mut p, g, 0.7).unwrap();
            }
            p.values().iter().map(|x| x.to_bits()).collect::<Vec<u64>>()
        };
        prop_assert_eq!(run(), run());
    }

    #[test]
    fn alpha_eta_nonincreasing_after_t0(alpha0 in 0.0f64..5.0, t0 in 1u64..2000, t in 1u64..100_000) {
        let s = ScheduleSpec::inverse_t(alpha0, t0);
        let t = t.max(t0);
        let (a1, e1) = s.values(t);
        let (a2, e2) = s.values(t + 1);
        prop_assert!(a2 * e2 <= a1 * e1 * (1.0 + 1e-12));
        // αη = alpha0·t0/√t → 0.
        prop_assert!((a1 * e1 - alpha0 * t0 as f64 / (t as f64).sqrt()).abs() <= 1e-9 * (1.0 + a1 * e1));
    }

    #[test]
    fn sigmoid_logit_round_trip(p in 1e-6f64..(1.0 - 1e-6)) {
        prop_assert!((sigmoid(logit(p)) - p).abs() < 1e-12);
    }

    #[test]
    fn odds_adversary_sharpening_is_monotone(c in -3.0f64..3.0, a in 0.01f64..0.99, b in 0.01f64..0.99) {
        prop_assume!((a - b).abs() > 1e-6);
        let adv = OddsAdversary { c, b: 0.0, w2: [1.0, 1.0, 1.0] };
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assert!(adv.sharpened(lo).unwrap() < adv.sharpened(hi).unwrap());
        let plain = OddsAdversary { c: 0.0, ..adv };
        prop_assert!((plain.sharpened(a).unwrap() - a).abs() < 1e-12);
    }

    #[test]
    fn unit_transform_removes_its_direction(w in vec_of(5), x1 in vec_of(5), x2 in vec_of(5), x3 in vec_of(5)) {
        let w = DenseVector::from_slice(&w);
        prop_assume!(w.norm() > 1e-3);
        let unit = w.normalized().unwrap();
        let y = AnalogyPredictor::new(unit.clone()).forward(&x1, &x2, &x3).unwrap();
        let scale = 1.0 + x1.iter().chain(&x2).chain(&x3).map(|v| v.abs()).sum::<f64>();
        prop_assert!(unit.dot(&y).unwrap().abs() <= 1e-9 * scale);
    }

    #[test]
    fn base_rate_adversary_scores_the_entropy(z in binary(200)) {
        let ones = z.iter().filter(|&&v| v == 1.0).count();
        prop_assume!(ones > 0 && ones < z.len());
        let rate = ones as f64 / z.len() as f64;
        let adv = ParityAdversary { u: 0.0, c0: logit(rate) };
        let mean: f64 = z.iter().map(|&zi| adv.loss_grad(0.3, zi).loss).sum::<f64>() / z.len() as f64;
        let h = empirical_entropy(&z, None).unwrap().h_z;
        prop_assert!((mean - h).abs() < 1e-6);
    }

    #[test]
    fn conditional_entropy_never_exceeds_marginal(z in binary(120), y in binary(120)) {
        prop_assume!(z.contains(&1.0) && z.contains(&0.0));
        let e = empirical_entropy(&z, Some(&y)).unwrap();
        prop_assert!(e.h_z_given_y.unwrap() <= e.h_z + 1e-12);
        prop_assert!(e.h_z <= std::f64::consts::LN_2 + 1e-12);
    }

    #[test]
    fn ztest_is_symmetric_and_a_probability(n1 in 1u64..5000, n2 in 1u64..5000, f1 in 0.0f64..1.0, f2 in 0.0f64..1.0) {
        let (k1, k2) = ((f1 * n1 as f64) as u64, (f2 * n2 as f64) as u64);
        let p = two_proportion_ztest(k1, n1, k2, n2).unwrap();
        prop_assert!((0.0..=1.0).contains(&p));
        prop_assert_eq!(p, two_proportion_ztest(k2, n2, k1, n1).unwrap());
    }

    #[test]
    fn confusion_partitions_every_example(
        (scores, y, z) in (2usize..80).prop_flat_map(|n| (prop::collection::vec(0.0f64..1.0, n), binary(n), binary(n)))
    ) {
        let c = confusion_by_group(&scores, &y, &z, 0.5).unwrap();
        let total: u64 = c.groups.iter().map(|g| g.total()).sum();
        prop_assert_eq!(total as usize, scores.len());
        if z.contains(&0.0) && z.contains(&1.0) {
            let gap = demographic_parity_gap(&scores, &z, 0.5).unwrap();
            prop_assert!((0.0..=1.0).contains(&gap));
        }
    }
}
