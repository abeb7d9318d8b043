use icode_lab::contraction::{
    contraction_scan, metric_transformed_max_eig, model_jacobian, symmetric_eigenvalues, symmetric_max_eig,
    ConstantMetric, Verdict,
};
use icode_lab::fields::{IcodeModel, VectorFieldModel};
use icode_lab::integrate::{rollout, TimeGrid};
use icode_lab::nn::Mlp;
use icode_lab::signal::InputSignal;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_matrix(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0))
}

fn scaled(net: Mlp, factor: f64) -> Mlp {
    let mut net = net;
    for s in net.param_slices_mut() {
        for p in s {
            *p *= factor;
        }
    }
    net
}

/// `ẋ = −a x + small(x) + u k(x)`, contracting on moderate boxes.
fn damped_model(rng: &mut ChaCha8Rng, n: usize, a: f64) -> IcodeModel {
    let diag = Mlp::affine(&(DMatrix::identity(n, n) * -a), None).unwrap();
    let wiggle = scaled(Mlp::random(&[n, 8, n], true, rng).unwrap(), 0.4);
    let k = scaled(Mlp::random(&[n, 6, n], true, rng).unwrap(), 0.4);
    IcodeModel::new(vec![diag, wiggle], vec![k]).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn jacobi_recovers_spectrum(seed in 0u64..100_000, n in 1usize..7) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = random_matrix(&mut rng, n).qr().q();
        let mut d: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let a = &q * DMatrix::from_diagonal(&nalgebra::DVector::from_vec(d.clone())) * q.transpose();
        let eig = symmetric_eigenvalues(&a).unwrap();
        d.sort_by(f64::total_cmp);
        for (x, y) in eig.iter().zip(&d) {
            prop_assert!((x - y).abs() < 1e-10, "{:?} vs {:?}", eig, d);
        }
    }

    #[test]
    fn symmetric_part_ignores_transpose(seed in 0u64..100_000, n in 1usize..7) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_matrix(&mut rng, n);
        let x = symmetric_max_eig(&a).unwrap();
        let y = symmetric_max_eig(&a.transpose()).unwrap();
        prop_assert!((x - y).abs() < 1e-12);
        // bounded by the spectral norm
        prop_assert!(x <= a.norm() + 1e-12);
    }

    #[test]
    fn similarity_invariance_for_symmetric_jacobians(seed in 0u64..100_000, n in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = random_matrix(&mut rng, n);
        let j = (&b + b.transpose()) * 0.5;
        let q = random_matrix(&mut rng, n).qr().q();
        let metric = ConstantMetric::new(q).unwrap();
        let direct = symmetric_max_eig(&j).unwrap();
        prop_assert!((metric.transformed_max_eig(&j).unwrap() - direct).abs() < 1e-10);
        prop_assert!((metric.condition_number() - 1.0).abs() < 1e-10);
    }

    /// Paired rollouts of a certified model stay inside the envelope
    /// `‖δx(t)‖ ≤ e^{−ct} e^{0.1ct} ‖δx(0)‖`.
    #[test]
    fn certified_models_contract(seed in 0u64..10_000, n in 1usize..4, level in -1.0f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = damped_model(&mut rng, n, 1.5);
        let state_box = vec![(-3.0, 3.0); n];
        let input_box = [(-1.0, 1.0)];
        let report = contraction_scan(&model, None, &state_box, &input_box, 4096, 0.0, seed).unwrap();
        prop_assume!(report.verdict == Verdict::CertifiedOnSamples && report.margin > 0.05);
        let c = report.margin;

        let u = InputSignal::piecewise(vec![0.7], vec![vec![level], vec![-level]], 0.0).unwrap();
        let grid = TimeGrid::new(0.0, 2.0, 200).unwrap();
        let x0: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y0: Vec<f64> = x0.iter().map(|v| v + rng.random_range(-0.2..0.2)).collect();
        let field = VectorFieldModel::Icode(model.clone());
        let a = rollout(&field, &x0, &u, &grid).unwrap();
        let b = rollout(&field, &y0, &u, &grid).unwrap();
        let dist = |k: usize| -> f64 {
            a.states[k].iter().zip(&b.states[k]).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt()
        };
        let d0 = dist(0);
        for k in 0..grid.len() {
            for s in [&a.states[k], &b.states[k]] {
                prop_assert!(s.iter().all(|v| v.abs() <= 3.0), "left the certified box");
            }
            let t = grid.time(k);
            let envelope = (-c * t).exp() * (0.1 * c * t).exp() * d0;
            prop_assert!(dist(k) <= envelope * (1.0 + 1e-9) + 1e-15, "t={} {} > {}", t, dist(k), envelope);
        }
    }
}

#[test]
fn linear_toy_scan() {
    let model = IcodeModel::new(vec![Mlp::affine(&DMatrix::from_element(1, 1, -1.0), None).unwrap()], vec![]).unwrap();
    let r = contraction_scan(&model, None, &[(-5.0, 5.0)], &[], 512, 0.5, 1).unwrap();
    assert!((r.worst_lambda + 1.0).abs() < 1e-9);
    assert_eq!(r.verdict, Verdict::CertifiedOnSamples);
    let r = contraction_scan(&model, None, &[(-5.0, 5.0)], &[], 512, 1.5, 1).unwrap();
    assert_eq!(r.verdict, Verdict::Violated);
}

#[test]
fn metric_toy_with_random_factors() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for n in 1..5 {
        let a = DMatrix::identity(n, n) * -1.0;
        let model = IcodeModel::new(vec![Mlp::affine(&a, None).unwrap()], vec![]).unwrap();
        for _ in 0..10 {
            let l = random_matrix(&mut rng, n) + DMatrix::identity(n, n) * 2.0;
            let metric = ConstantMetric::new(l).unwrap();
            let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let lam = metric_transformed_max_eig(&model, &metric, &x, &[]).unwrap();
            assert!((lam + 1.0).abs() < 1e-6, "{lam}");
        }
    }
}

#[test]
fn jacobian_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let model = damped_model(&mut rng, 3, 1.0);
    let (x, u) = ([0.2, -0.4, 0.9], [0.6]);
    let j = model_jacobian(&model, &x, &u).unwrap();
    let h = 1e-6;
    for c in 0..3 {
        let mut xp = x;
        let mut xm = x;
        xp[c] += h;
        xm[c] -= h;
        let fp = model.rhs(&xp, &u).unwrap();
        let fm = model.rhs(&xm, &u).unwrap();
        for r in 0..3 {
            assert!(((fp[r] - fm[r]) / (2.0 * h) - j[(r, c)]).abs() < 1e-7);
        }
    }
}

#[test]
fn scan_is_deterministic_and_reports_witness() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let model = damped_model(&mut rng, 2, 0.2);
    let b = [(-2.0, 2.0), (-2.0, 2.0)];
    let r1 = contraction_scan(&model, None, &b, &[(-1.0, 1.0)], 300, 0.1, 4).unwrap();
    let r2 = contraction_scan(&model, None, &b, &[(-1.0, 1.0)], 300, 0.1, 4).unwrap();
    assert_eq!(r1, r2);
    let j = model_jacobian(&model, &r1.witness_x, &r1.witness_u).unwrap();
    assert_eq!(symmetric_max_eig(&j).unwrap(), r1.worst_lambda);
    assert!(r1.witness_x.iter().all(|v| v.abs() <= 2.0));
}
