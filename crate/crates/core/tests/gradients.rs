mod common;

use common::{params, rel_err, set_params};
use icode_lab::fields::{Architecture, IcodeModel, ModelKind, VectorFieldModel};
use icode_lab::integrate::{rollout, rollout_loss_grad, InputSampler, NoInput, TimeGrid, Trajectory};
use icode_lab::nn::{Mlp, ParamGradient};
use icode_lab::signal::InputSignal;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn loss_of(model: &VectorFieldModel, x0: &[f64], u: &dyn InputSampler, grid: &TimeGrid, target: &Trajectory) -> f64 {
    rollout_loss_grad(model, x0, u, grid, target).unwrap().loss
}

#[test]
fn mlp_vjp_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..100 {
        let depth = rng.random_range(1..4);
        let mut dims = vec![rng.random_range(1..5)];
        for _ in 0..depth {
            dims.push(rng.random_range(1..7));
        }
        dims.push(rng.random_range(1..5));
        let bias = case % 3 != 0;
        let mut net = Mlp::random(&dims, bias, &mut rng).unwrap();
        let x: Vec<f64> = (0..dims[0]).map(|_| rng.random_range(-2.0..2.0)).collect();
        let cot: Vec<f64> = (0..*dims.last().unwrap()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let dot = |net: &Mlp, x: &[f64]| -> f64 { net.forward(x).unwrap().iter().zip(&cot).map(|(a, b)| a * b).sum() };
        let (grad, dx) = net.vjp(&x, &cot).unwrap();

        let h = 1e-6;
        for i in 0..x.len() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            let fd = (dot(&net, &xp) - dot(&net, &xm)) / (2.0 * h);
            assert!((fd - dx[i]).abs() < 1e-6 * (1.0 + fd.abs()), "case {case} input {i}: {fd} vs {}", dx[i]);
        }
        let flat = grad.to_flat();
        let mut k = 0;
        let slices = net.param_slices().map(|s| s.len()).collect::<Vec<_>>();
        for (si, len) in slices.into_iter().enumerate() {
            for j in 0..len {
                let orig = net.param_slices().nth(si).unwrap()[j];
                net.param_slices_mut().nth(si).unwrap()[j] = orig + h;
                let lp = dot(&net, &x);
                net.param_slices_mut().nth(si).unwrap()[j] = orig - h;
                let lm = dot(&net, &x);
                net.param_slices_mut().nth(si).unwrap()[j] = orig;
                let fd = (lp - lm) / (2.0 * h);
                assert!((fd - flat[k]).abs() < 1e-6 * (1.0 + fd.abs()), "case {case} param {k}");
                k += 1;
            }
        }
        assert_eq!(k, flat.len());
    }
}

#[test]
fn jacobian_rows_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let net = Mlp::random(&[3, 6, 6, 2], true, &mut rng).unwrap();
    let x = [0.3, -0.7, 1.1];
    let j = net.input_jacobian(&x).unwrap();
    let h = 1e-6;
    for c in 0..3 {
        let mut xp = x;
        let mut xm = x;
        xp[c] += h;
        xm[c] -= h;
        let (fp, fm) = (net.forward(&xp).unwrap(), net.forward(&xm).unwrap());
        for r in 0..2 {
            let fd = (fp[r] - fm[r]) / (2.0 * h);
            assert!((fd - j[(r, c)]).abs() < 1e-7);
        }
    }
}

/// One RK4 step of `ẋ = (a + c u) x + (b + d u)` and its loss, by hand.
#[test]
fn one_step_chain_rule_by_hand() {
    let (a, b, c, d) = (-0.7, 0.2, 0.4, -0.3);
    let f = Mlp::affine(&DMatrix::from_element(1, 1, a), Some(vec![b])).unwrap();
    let k = Mlp::affine(&DMatrix::from_element(1, 1, c), Some(vec![d])).unwrap();
    let model = VectorFieldModel::Icode(IcodeModel::new(vec![f], vec![k]).unwrap());
    let u = 0.5;
    let signal = InputSignal::constant(vec![u]);
    let h = 0.1;
    let grid = TimeGrid::new(0.0, h, 1).unwrap();
    let (x0, y0, y1) = (0.8, 0.75, 0.9);
    let target = Trajectory::new(grid, vec![vec![y0], vec![y1]], vec![vec![u], vec![u]]).unwrap();

    let alpha = a + c * u;
    let beta = b + d * u;
    let z = alpha * h;
    let p = 1.0 + z / 2.0 + z * z / 6.0 + z * z * z / 24.0;
    let x1 = x0 + (alpha * x0 + beta) * h * p;
    let loss = ((x0 - y0).powi(2) + (x1 - y1).powi(2)) / 2.0;
    let r = x1 - y1;
    // ∂x1/∂α = x0 h p + (α x0 + β) h ∂p/∂α
    let dp = h * (0.5 + z / 3.0 + z * z / 8.0);
    let dx1_dalpha = x0 * h * p + (alpha * x0 + beta) * h * dp;
    let dx1_dbeta = h * p;
    let expected = [r * dx1_dalpha, r * dx1_dbeta, r * dx1_dalpha * u, r * dx1_dbeta * u];

    let out = rollout_loss_grad(&model, &[x0], &signal, &grid, &target).unwrap();
    assert!((out.loss - loss).abs() < 1e-15);
    let g = out.gradient.to_flat();
    for (got, want) in g.iter().zip(expected) {
        assert!((got - want).abs() < 1e-14, "{got} vs {want}");
    }
}

fn arch(rng: &mut ChaCha8Rng) -> Architecture {
    Architecture {
        width: rng.random_range(3..7),
        hidden_layers: rng.random_range(1..3),
        bias: true,
        subnets: rng.random_range(1..3),
        augment_dim: rng.random_range(1..3),
    }
}

fn random_signal(rng: &mut ChaCha8Rng, m: usize) -> InputSignal {
    InputSignal::Sine {
        amplitude: (0..m).map(|_| rng.random_range(0.2..1.0)).collect(),
        offset: (0..m).map(|_| rng.random_range(-0.5..0.5)).collect(),
        frequency: rng.random_range(0.2..1.5),
        phase: rng.random_range(0.0..3.0),
    }
}

#[test]
fn zero_loss_on_own_rollout() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for kind in ModelKind::ALL {
        let model = VectorFieldModel::build(kind, 2, 1, &arch(&mut rng), &mut rng).unwrap();
        let signal = random_signal(&mut rng, 1);
        let u: &dyn InputSampler = if model.uses_input() { &signal } else { &NoInput };
        let grid = TimeGrid::new(0.0, 0.5, 6).unwrap();
        let x0 = [0.4, -0.2];
        let h0 = icode_lab::integrate::Differentiable::lift(&model, &x0).unwrap();
        let target = rollout(&model, &h0, u, &grid).unwrap().project(2);
        let out = rollout_loss_grad(&model, &x0, u, &grid, &target).unwrap();
        assert_eq!(out.loss, 0.0, "{kind}");
        assert!(out.gradient.to_flat().iter().all(|g| *g == 0.0), "{kind}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn rollout_gradient_matches_central_differences(seed in 0u64..10_000, kind_ix in 0usize..4, n in 1usize..4, m in 1usize..3, steps in 2usize..11) {
        let kind = ModelKind::ALL[kind_ix];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut model = VectorFieldModel::build(kind, n, m, &arch(&mut rng), &mut rng).unwrap();
        let signal = random_signal(&mut rng, m);
        let u: &dyn InputSampler = if model.uses_input() { &signal } else { &NoInput };
        let grid = TimeGrid::new(0.0, 0.05 * steps as f64, steps).unwrap();
        let states = (0..grid.len()).map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let target = Trajectory::new(grid, states, vec![vec![]; grid.len()]).unwrap();
        let x0: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();

        let out = rollout_loss_grad(&model, &x0, u, &grid, &target).unwrap();
        let grad = out.gradient.to_flat();
        let theta = params(&model);
        prop_assert_eq!(grad.len(), theta.len());
        let dir: Vec<f64> = (0..theta.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let eps = 1e-5;
        let shifted = |s: f64| -> Vec<f64> { theta.iter().zip(&dir).map(|(t, d)| t + s * d).collect() };
        set_params(&mut model, &shifted(eps));
        let lp = loss_of(&model, &x0, u, &grid, &target);
        set_params(&mut model, &shifted(-eps));
        let lm = loss_of(&model, &x0, u, &grid, &target);
        let fd = (lp - lm) / (2.0 * eps);
        let an: f64 = grad.iter().zip(&dir).map(|(g, d)| g * d).sum();
        prop_assert!(rel_err(fd, an) < 1e-3, "{} n={} m={}: fd {} vs {}", kind, n, m, fd, an);
    }

    #[test]
    fn param_gradient_accumulation_is_linear(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = Mlp::random(&[2, 4, 3], true, &mut rng).unwrap();
        let x = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let c1 = [1.0, -0.5, 0.25];
        let c2 = [0.3, 0.2, -1.0];
        let (g1, _) = net.vjp(&x, &c1).unwrap();
        let (g2, _) = net.vjp(&x, &c2).unwrap();
        let sum: Vec<f64> = c1.iter().zip(&c2).map(|(a, b)| a + b).collect();
        let (g12, _) = net.vjp(&x, &sum).unwrap();
        let mut acc = ParamGradient::zeros_like(&net);
        acc.add_assign(&g1);
        acc.add_assign(&g2);
        for (a, b) in acc.to_flat().iter().zip(g12.to_flat()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
