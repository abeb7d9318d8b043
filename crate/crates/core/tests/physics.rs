//! Invariants of the ground-truth systems along RK4 rollouts on the preset
//! grids.

use icode_lab::config::preset_config;
use icode_lab::integrate::{rollout, TimeGrid, Trajectory};
use icode_lab::rng::{stream, Purpose};
use icode_lab::signal::{heat_boundary, InputSignal};
use icode_lab::systems::{DcDcParams, SingleLinkParams, SystemSpec};
use proptest::prelude::*;

fn max_rel_drift(traj: &Trajectory, h: impl Fn(&[f64]) -> f64) -> f64 {
    let h0 = h(&traj.states[0]);
    traj.states.iter().map(|x| (h(x) - h0).abs() / h0.abs()).fold(0.0, f64::max)
}

fn dcdc_energy(p: &DcDcParams) -> impl Fn(&[f64]) -> f64 + '_ {
    move |x| 0.5 * (p.c1 * x[0] * x[0] + p.c2 * x[1] * x[1] + p.inductance * x[2] * x[2])
}

fn robot_energy(p: &SingleLinkParams) -> impl Fn(&[f64]) -> f64 + '_ {
    move |x| 0.5 * p.inertia * x[1] * x[1] + 0.5 * p.mass * p.gravity * p.length * (1.0 - x[0].cos())
}

#[test]
fn dcdc_energy_constant_inputs() {
    let p = DcDcParams::default();
    let sys = SystemSpec::DcDc { params: p.clone() };
    let grid = TimeGrid::new(0.0, 1.0, 74).unwrap();
    for (k, u) in [0.0, 0.3, 1.0].into_iter().enumerate() {
        let x0 = sys.sample_initial(&mut stream(k as u64, Purpose::InitialState, 0));
        let traj = rollout(&sys, &x0, &InputSignal::constant(vec![u]), &grid).unwrap();
        let d = max_rel_drift(&traj, dcdc_energy(&p));
        assert!(d < 1e-6, "u={u}: {d:e}");
    }
}

/// A switch inside an RK4 step is seen by some stages only, which breaks
/// the energy identity on that step; every other step must conserve it.
#[test]
fn dcdc_energy_under_preset_switching() {
    let p = DcDcParams::default();
    let h = dcdc_energy(&p);
    for (preset, switches) in [("dcdc_i", vec![0.4]), ("dcdc_ii", vec![0.1, 0.5, 0.8])] {
        let cfg = preset_config(preset).unwrap();
        let grid = cfg.grid().unwrap();
        let signal = cfg.signal.realize(1, &mut stream(0, Purpose::Signal, 0)).unwrap();
        for i in 0..10 {
            let x0 = cfg.system.sample_initial(&mut stream(0, Purpose::InitialState, i));
            let traj = rollout(&cfg.system, &x0, &signal, &grid).unwrap();
            let h0 = h(&traj.states[0]);
            let mut smooth = 0.0;
            let mut at_jumps = 0.0;
            for k in 0..grid.steps() {
                let change = (h(&traj.states[k + 1]) - h(&traj.states[k])).abs() / h0;
                let (a, b) = (grid.time(k), grid.time(k + 1));
                if switches.iter().any(|&s| s > a && s <= b) {
                    at_jumps += change;
                } else {
                    smooth += change;
                }
            }
            assert!(smooth < 1e-6, "{preset} trajectory {i}: {smooth:e}");
            assert!(at_jumps.is_finite());
        }
    }
}

#[test]
fn rigid_body_norm_and_energy() {
    let inertia = [1.0, 2.0, 3.0];
    let sys = SystemSpec::RigidBody { inertia };
    let grid = TimeGrid::new(0.0, 1.0, 100).unwrap();
    let zero = InputSignal::constant(vec![0.0; 3]);
    for i in 0..10 {
        let x0 = sys.sample_initial(&mut stream(3, Purpose::InitialState, i));
        let traj = rollout(&sys, &x0, &zero, &grid).unwrap();
        let norm = max_rel_drift(&traj, |x| x.iter().map(|v| v * v).sum());
        let energy = max_rel_drift(&traj, |x| (0..3).map(|k| x[k] * x[k] / inertia[k]).sum::<f64>() / 2.0);
        assert!(norm < 1e-6 && energy < 1e-6, "{norm:e} {energy:e}");
    }
}

#[test]
fn robot_energy_without_input() {
    let p = SingleLinkParams::default();
    let sys = SystemSpec::SingleLink { params: p.clone() };
    let grid = TimeGrid::new(0.0, 1.0, 100).unwrap();
    for i in 0..10 {
        let x0 = sys.sample_initial(&mut stream(4, Purpose::InitialState, i));
        let traj = rollout(&sys, &x0, &InputSignal::constant(vec![0.0]), &grid).unwrap();
        let d = max_rel_drift(&traj, robot_energy(&p));
        assert!(d < 1e-6, "trajectory {i}: {d:e}");
    }
}

#[test]
fn heat1d_maximum_principle() {
    let cfg = preset_config("heat1d").unwrap();
    let grid = cfg.grid().unwrap();
    let signal = InputSignal::HeatBoundary { channels: 2 };
    let boundary: Vec<f64> = grid.times().iter().map(|&t| heat_boundary(t)).collect();
    for i in 0..5 {
        let x0 = cfg.system.sample_initial(&mut stream(5, Purpose::InitialState, i));
        let traj = rollout(&cfg.system, &x0, &signal, &grid).unwrap();
        let hi = x0.iter().chain(&boundary).copied().fold(f64::MIN, f64::max);
        let lo = x0.iter().chain(&boundary).copied().fold(f64::MAX, f64::min);
        for (k, s) in traj.states.iter().enumerate() {
            assert!(s.iter().all(|&v| v <= hi + 1e-12 && v >= lo - 1e-12), "step {k}");
            // boundary nodes track the signal at grid points
            assert!((s[0] - boundary[k]).abs() < 1e-12);
        }
    }
}

#[test]
fn heat2d_maximum_principle_without_source() {
    let cfg = preset_config("heat2d").unwrap();
    let grid = cfg.grid().unwrap();
    let x0 = cfg.system.sample_initial(&mut stream(6, Purpose::InitialState, 0));
    let traj = rollout(&cfg.system, &x0, &InputSignal::constant(vec![0.0]), &grid).unwrap();
    let hi = x0.iter().copied().fold(f64::MIN, f64::max);
    let lo = x0.iter().copied().fold(f64::MAX, f64::min);
    for s in &traj.states {
        assert!(s.iter().all(|&v| v <= hi + 1e-12 && v >= lo - 1e-12));
    }
}

#[test]
fn glycolytic_all_ones() {
    let p = Default::default();
    let f = icode_lab::systems::glyco_rhs(&[1.0; 10], &[0.1, 0.2, 0.3], &p).unwrap();
    let want = [-0.984823936, 0.584218946, -1.058015014, 0.1, 0.2, 0.3, 0.0, 0.0, 0.0, 0.0];
    for (a, b) in f.iter().zip(want) {
        assert!((a - b).abs() < 1e-9);
    }
}

#[test]
fn swing_damping_dissipates_energy() {
    let cfg = preset_config("swing").unwrap();
    let sys = cfg.system.resolve(&mut stream(0, Purpose::SystemParams, 0)).unwrap();
    let SystemSpec::Swing { params } = &sys else { unreachable!() };
    let m = params.inertia.clone().unwrap();
    let grid = cfg.grid().unwrap();
    let x0 = sys.sample_initial(&mut stream(7, Purpose::InitialState, 0));
    let traj = rollout(&sys, &x0, &InputSignal::constant(vec![0.0; 10]), &grid).unwrap();
    let energy = |x: &[f64]| -> f64 {
        let kinetic: f64 = (0..10).map(|i| 0.5 * m[i] * x[10 + i] * x[10 + i]).sum();
        let potential: f64 = params.edges.iter().map(|&(i, j)| params.coupling * (1.0 - (x[i] - x[j]).cos())).sum();
        kinetic + potential
    };
    for w in traj.states.windows(2) {
        assert!(energy(&w[1]) <= energy(&w[0]) + 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn dcdc_energy_smooth_inputs(seed in 0u64..1000, amp in 0.0f64..0.5, freq in 0.1f64..2.0) {
        let p = DcDcParams::default();
        let sys = SystemSpec::DcDc { params: p.clone() };
        let grid = TimeGrid::new(0.0, 1.0, 74).unwrap();
        let x0 = sys.sample_initial(&mut stream(seed, Purpose::InitialState, 0));
        let u = InputSignal::Sine { amplitude: vec![amp], offset: vec![0.5], frequency: freq, phase: 0.0 };
        let traj = rollout(&sys, &x0, &u, &grid).unwrap();
        let d = max_rel_drift(&traj, dcdc_energy(&p));
        prop_assert!(d < 1e-6, "{:e}", d);
    }
}
