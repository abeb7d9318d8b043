//! Fixed-step classical RK4 under a time-varying input, and the exact
//! reverse-mode derivative of the discrete recursion.
//!
//! Inputs are sampled at the stage times `t`, `t + dt/2` and `t + dt` of each
//! step, never outside `[t, t + dt]`. The input rate handed to the vector
//! field is the slope of the linear interpolant between the step's endpoint
//! samples, constant over the step.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// An input as seen by one RK4 stage.
#[derive(Debug, Clone, Copy)]
pub struct StageInput<'a> {
    pub u: &'a [f64],
    pub du: &'a [f64],
}

/// A right-hand side `ẋ = F(t, x, input)`.
pub trait Dynamics: Sync {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn eval(&self, t: f64, x: &[f64], input: StageInput<'_>) -> Result<Vec<f64>>;
}

/// A right-hand side with parameters that can be differentiated.
///
/// The integrated state may be larger than the observed one (augmented
/// models); `lift` maps an observed initial state into the integrated space.
pub trait Differentiable: Dynamics {
    type Gradient: Send;

    fn zero_gradient(&self) -> Self::Gradient;

    /// Adds `∂⟨cot, F⟩/∂θ` into `grad` and returns `∂⟨cot, F⟩/∂x`.
    fn vjp(&self, t: f64, x: &[f64], input: StageInput<'_>, cot: &[f64], grad: &mut Self::Gradient) -> Vec<f64>;

    fn observed_dim(&self) -> usize {
        self.state_dim()
    }

    fn lift(&self, x0: &[f64]) -> Result<Vec<f64>> {
        Ok(x0.to_vec())
    }

    /// Propagates the cotangent of the lifted state back to the parameters
    /// of `lift`.
    fn lift_vjp(&self, _x0: &[f64], _cot: &[f64], _grad: &mut Self::Gradient) {}
}

/// Source of input values at arbitrary times.
pub trait InputSampler: Sync {
    fn input_dim(&self) -> usize;
    fn sample(&self, t: f64) -> Vec<f64>;
}

/// The empty input, for models without an input channel.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoInput;

impl InputSampler for NoInput {
    fn input_dim(&self) -> usize {
        0
    }
    fn sample(&self, _t: f64) -> Vec<f64> {
        Vec::new()
    }
}

/// Uniform time grid `t_k = t0 + k (t1 - t0) / steps`.
///
/// A grid can be a window onto a parent grid; window times are computed from
/// the parent so the same instants compare equal bit for bit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    base_t0: f64,
    base_t1: f64,
    base_steps: usize,
    offset: usize,
    steps: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, t1: f64, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::invalid("time grid", "steps must be > 0"));
        }
        if !(t0.is_finite() && t1.is_finite() && t1 > t0) {
            return Err(Error::invalid("time grid", format!("need t1 > t0, got [{t0}, {t1}]")));
        }
        Ok(Self {
            base_t0: t0,
            base_t1: t1,
            base_steps: steps,
            offset: 0,
            steps,
        })
    }

    /// Sub-grid starting at point `start` of this grid and spanning `steps`.
    pub fn window(&self, start: usize, steps: usize) -> Result<Self> {
        if steps == 0 || start + steps > self.steps {
            return Err(Error::invalid(
                "time grid window",
                format!("[{start}, {}] outside {} steps", start + steps, self.steps),
            ));
        }
        Ok(Self {
            offset: self.offset + start,
            steps,
            ..*self
        })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Number of grid points, `steps + 1`.
    pub fn len(&self) -> usize {
        self.steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dt(&self) -> f64 {
        (self.base_t1 - self.base_t0) / self.base_steps as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        let i = self.offset + k;
        if i == self.base_steps {
            self.base_t1
        } else {
            self.base_t0 + (self.base_t1 - self.base_t0) * i as f64 / self.base_steps as f64
        }
    }

    pub fn t0(&self) -> f64 {
        self.time(0)
    }

    pub fn t1(&self) -> f64 {
        self.time(self.steps)
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.steps).map(|k| self.time(k)).collect()
    }
}

impl Serialize for TimeGrid {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Doc {
            t0: f64,
            t1: f64,
            steps: usize,
        }
        Doc {
            t0: self.t0(),
            t1: self.t1(),
            steps: self.steps,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for TimeGrid {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Doc {
            t0: f64,
            t1: f64,
            steps: usize,
        }
        let doc = Doc::deserialize(d)?;
        TimeGrid::new(doc.t0, doc.t1, doc.steps).map_err(serde::de::Error::custom)
    }
}

/// States and input samples on a time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub grid: TimeGrid,
    pub states: Vec<Vec<f64>>,
    pub inputs: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn new(grid: TimeGrid, states: Vec<Vec<f64>>, inputs: Vec<Vec<f64>>) -> Result<Self> {
        check_dim("trajectory states", grid.len(), states.len())?;
        check_dim("trajectory inputs", grid.len(), inputs.len())?;
        let n = states[0].len();
        let m = inputs[0].len();
        for (s, u) in states.iter().zip(&inputs) {
            check_dim("trajectory state", n, s.len())?;
            check_dim("trajectory input", m, u.len())?;
        }
        Ok(Self { grid, states, inputs })
    }

    pub fn state_dim(&self) -> usize {
        self.states[0].len()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs[0].len()
    }

    /// Points `start..=start + steps` as a trajectory on the matching window.
    pub fn window(&self, start: usize, steps: usize) -> Result<Self> {
        let grid = self.grid.window(start, steps)?;
        Ok(Self {
            grid,
            states: self.states[start..=start + steps].to_vec(),
            inputs: self.inputs[start..=start + steps].to_vec(),
        })
    }

    /// Keeps the first `n` state coordinates.
    pub fn project(&self, n: usize) -> Self {
        Self {
            grid: self.grid,
            states: self.states.iter().map(|s| s[..n].to_vec()).collect(),
            inputs: self.inputs.clone(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.states.iter().chain(&self.inputs).flatten().all(|v| v.is_finite())
    }

    /// CSV with header `t,x1..xn,u1..um`, floats in shortest round-trip form.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let header: Vec<String> = std::iter::once("t".to_string())
            .chain((1..=self.state_dim()).map(|i| format!("x{i}")))
            .chain((1..=self.input_dim()).map(|j| format!("u{j}")))
            .collect();
        w.write_record(&header)?;
        for (k, (x, u)) in self.states.iter().zip(&self.inputs).enumerate() {
            let row: Vec<String> = std::iter::once(self.grid.time(k))
                .chain(x.iter().copied())
                .chain(u.iter().copied())
                .map(format_f64)
                .collect();
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }

    /// Parses the layout written by [`Trajectory::write_csv`]. The grid is
    /// rebuilt from the first and last time stamps.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let header = r.headers()?.clone();
        if header.get(0) != Some("t") {
            return Err(Error::invalid("trajectory csv", "first column must be t"));
        }
        let n = header.iter().filter(|h| h.starts_with('x')).count();
        let m = header.iter().filter(|h| h.starts_with('u')).count();
        check_dim("trajectory csv columns", 1 + n + m, header.len())?;
        let mut times = Vec::new();
        let mut states = Vec::new();
        let mut inputs = Vec::new();
        for record in r.records() {
            let record = record?;
            let values = record
                .iter()
                .map(|f| {
                    f.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::invalid("trajectory csv", format!("{f:?}: {e}")))
                })
                .collect::<Result<Vec<_>>>()?;
            check_dim("trajectory csv row", 1 + n + m, values.len())?;
            times.push(values[0]);
            states.push(values[1..=n].to_vec());
            inputs.push(values[1 + n..].to_vec());
        }
        if times.len() < 2 {
            return Err(Error::invalid("trajectory csv", "need at least two rows"));
        }
        let grid = TimeGrid::new(times[0], times[times.len() - 1], times.len() - 1)?;
        let dt = grid.dt();
        for (k, &t) in times.iter().enumerate() {
            if (t - grid.time(k)).abs() > 1e-9 * dt.max(1.0) {
                return Err(Error::invalid("trajectory csv", format!("row {k}: non-uniform time {t}")));
            }
        }
        Trajectory::new(grid, states, inputs)
    }
}

pub(crate) fn format_f64(v: f64) -> String {
    format!("{v:?}")
}

fn axpy_into(x: &[f64], alpha: f64, k: &[f64]) -> Vec<f64> {
    x.iter().zip(k).map(|(a, b)| a + alpha * b).collect()
}

fn check_finite(v: &[f64], step: usize) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Diverged { step })
    }
}

/// Inputs of one RK4 step: samples at `t`, `t + dt/2`, `t + dt` and the
/// interpolant slope.
struct StepInputs {
    start: Vec<f64>,
    mid: Vec<f64>,
    end: Vec<f64>,
    rate: Vec<f64>,
}

impl StepInputs {
    fn sample(signal: &dyn InputSampler, t: f64, t_next: f64) -> Self {
        let dt = t_next - t;
        let start = signal.sample(t);
        let mid = signal.sample(t + 0.5 * dt);
        let end = signal.sample(t_next);
        let rate = start.iter().zip(&end).map(|(a, b)| (b - a) / dt).collect();
        Self { start, mid, end, rate }
    }

    fn at_start(&self) -> StageInput<'_> {
        StageInput {
            u: &self.start,
            du: &self.rate,
        }
    }

    fn at_mid(&self) -> StageInput<'_> {
        StageInput {
            u: &self.mid,
            du: &self.rate,
        }
    }

    fn at_end(&self) -> StageInput<'_> {
        StageInput {
            u: &self.end,
            du: &self.rate,
        }
    }
}

/// Stage points of one step, kept for the backward sweep.
struct StepRecord {
    t: f64,
    t_next: f64,
    inputs: StepInputs,
    points: [Vec<f64>; 4],
}

fn rk4_step_recorded<D: Dynamics + ?Sized>(
    rhs: &D,
    t: f64,
    t_next: f64,
    x: &[f64],
    signal: &dyn InputSampler,
    step: usize,
) -> Result<(Vec<f64>, StepRecord)> {
    let dt = t_next - t;
    let t_mid = t + 0.5 * dt;
    let inputs = StepInputs::sample(signal, t, t_next);
    let k1 = rhs.eval(t, x, inputs.at_start())?;
    check_finite(&k1, step)?;
    let p2 = axpy_into(x, 0.5 * dt, &k1);
    let k2 = rhs.eval(t_mid, &p2, inputs.at_mid())?;
    check_finite(&k2, step)?;
    let p3 = axpy_into(x, 0.5 * dt, &k2);
    let k3 = rhs.eval(t_mid, &p3, inputs.at_mid())?;
    check_finite(&k3, step)?;
    let p4 = axpy_into(x, dt, &k3);
    let k4 = rhs.eval(t_next, &p4, inputs.at_end())?;
    check_finite(&k4, step)?;
    let next: Vec<f64> = (0..x.len())
        .map(|i| x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect();
    check_finite(&next, step)?;
    let record = StepRecord {
        t,
        t_next,
        inputs,
        points: [x.to_vec(), p2, p3, p4],
    };
    Ok((next, record))
}

/// One classical RK4 step of size `dt` from `(t, x)`.
pub fn rk4_step<D: Dynamics + ?Sized>(
    rhs: &D,
    t: f64,
    x: &[f64],
    dt: f64,
    signal: &dyn InputSampler,
) -> Result<Vec<f64>> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::invalid("step size", format!("dt must be > 0, got {dt}")));
    }
    check_dim("rk4 state", rhs.state_dim(), x.len())?;
    check_dim("rk4 input", rhs.input_dim(), signal.input_dim())?;
    Ok(rk4_step_recorded(rhs, t, t + dt, x, signal, 0)?.0)
}

/// Iterated RK4 over `grid` from `x0`; records the states and the input
/// sampled at every grid point.
pub fn rollout<D: Dynamics + ?Sized>(
    rhs: &D,
    x0: &[f64],
    signal: &dyn InputSampler,
    grid: &TimeGrid,
) -> Result<Trajectory> {
    check_dim("rollout initial state", rhs.state_dim(), x0.len())?;
    check_dim("rollout input", rhs.input_dim(), signal.input_dim())?;
    let mut states = Vec::with_capacity(grid.len());
    let mut x = x0.to_vec();
    check_finite(&x, 0)?;
    for k in 0..grid.steps() {
        let (next, _) = rk4_step_recorded(rhs, grid.time(k), grid.time(k + 1), &x, signal, k)?;
        states.push(std::mem::replace(&mut x, next));
    }
    states.push(x);
    let inputs = grid.times().into_iter().map(|t| signal.sample(t)).collect();
    Trajectory::new(*grid, states, inputs)
}

/// Loss value and parameter gradient of one rollout.
#[derive(Debug, Clone)]
pub struct LossGradient<G> {
    pub loss: f64,
    pub gradient: G,
}

/// Mean squared error between the rollout of `model` from `x0` and the
/// states of `target`, averaged over every grid point (including the first)
/// and every observed coordinate, together with its exact gradient through
/// the discrete RK4 recursion.
pub fn rollout_loss_grad<D: Differentiable + ?Sized>(
    model: &D,
    x0: &[f64],
    signal: &dyn InputSampler,
    grid: &TimeGrid,
    target: &Trajectory,
) -> Result<LossGradient<D::Gradient>> {
    let n = model.observed_dim();
    check_dim("loss initial state", n, x0.len())?;
    check_dim("loss target state", n, target.state_dim())?;
    check_dim("loss input", model.input_dim(), signal.input_dim())?;
    if target.grid.steps() != grid.steps()
        || (target.grid.t0() - grid.t0()).abs() > 1e-12 * grid.dt()
        || (target.grid.t1() - grid.t1()).abs() > 1e-12 * grid.dt()
    {
        return Err(Error::invalid("loss target", "target lies on a different time grid"));
    }

    let h0 = model.lift(x0)?;
    let mut h = h0.clone();
    check_finite(&h, 0)?;
    let mut states = Vec::with_capacity(grid.len());
    let mut records = Vec::with_capacity(grid.steps());
    for k in 0..grid.steps() {
        let (next, rec) = rk4_step_recorded(model, grid.time(k), grid.time(k + 1), &h, signal, k)?;
        states.push(std::mem::replace(&mut h, next));
        records.push(rec);
    }
    states.push(h);

    let scale = 1.0 / (grid.len() * n) as f64;
    let mut loss = 0.0;
    let residual_grad = |k: usize| -> Vec<f64> {
        let mut g = vec![0.0; states[k].len()];
        for i in 0..n {
            g[i] = 2.0 * scale * (states[k][i] - target.states[k][i]);
        }
        g
    };
    for (s, y) in states.iter().zip(&target.states) {
        loss += s[..n].iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    }
    loss *= scale;

    let mut grad = model.zero_gradient();
    let mut lambda = residual_grad(grid.steps());
    for (k, rec) in records.iter().enumerate().rev() {
        let dt = rec.t_next - rec.t;
        let t_mid = rec.t + 0.5 * dt;
        let [p1, p2, p3, p4] = &rec.points;

        let g4: Vec<f64> = lambda.iter().map(|l| dt / 6.0 * l).collect();
        let x4 = model.vjp(rec.t_next, p4, rec.inputs.at_end(), &g4, &mut grad);
        let g3: Vec<f64> = lambda.iter().zip(&x4).map(|(l, x)| dt / 3.0 * l + dt * x).collect();
        let x3 = model.vjp(t_mid, p3, rec.inputs.at_mid(), &g3, &mut grad);
        let g2: Vec<f64> = lambda
            .iter()
            .zip(&x3)
            .map(|(l, x)| dt / 3.0 * l + 0.5 * dt * x)
            .collect();
        let x2 = model.vjp(t_mid, p2, rec.inputs.at_mid(), &g2, &mut grad);
        let g1: Vec<f64> = lambda
            .iter()
            .zip(&x2)
            .map(|(l, x)| dt / 6.0 * l + 0.5 * dt * x)
            .collect();
        let x1 = model.vjp(rec.t, p1, rec.inputs.at_start(), &g1, &mut grad);

        let direct = residual_grad(k);
        for i in 0..lambda.len() {
            lambda[i] += x1[i] + x2[i] + x3[i] + x4[i] + direct[i];
        }
        check_finite(&lambda, k)?;
    }
    model.lift_vjp(x0, &lambda, &mut grad);
    if !loss.is_finite() {
        return Err(Error::Diverged { step: grid.steps() });
    }
    Ok(LossGradient { loss, gradient: grad })
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Linear(f64);
    impl Dynamics for Linear {
        fn state_dim(&self) -> usize {
            1
        }
        fn input_dim(&self) -> usize {
            0
        }
        fn eval(&self, _t: f64, x: &[f64], _input: StageInput<'_>) -> Result<Vec<f64>> {
            Ok(vec![self.0 * x[0]])
        }
    }

    struct Constant(Vec<f64>);
    impl Dynamics for Constant {
        fn state_dim(&self) -> usize {
            self.0.len()
        }
        fn input_dim(&self) -> usize {
            0
        }
        fn eval(&self, _t: f64, _x: &[f64], _input: StageInput<'_>) -> Result<Vec<f64>> {
            Ok(self.0.clone())
        }
    }

    #[test]
    fn rk4_step_values() {
        let x = rk4_step(&Constant(vec![0.0, 0.0]), 0.0, &[1.0, -2.0], 0.1, &NoInput).unwrap();
        assert_eq!(x, vec![1.0, -2.0]);
        let x = rk4_step(&Constant(vec![1.0, 1.0]), 0.0, &[1.0, -2.0], 0.1, &NoInput).unwrap();
        assert!((x[0] - 1.1).abs() < 1e-15 && (x[1] + 1.9).abs() < 1e-15);
        let x = rk4_step(&Linear(-1.0), 0.0, &[1.0], 0.1, &NoInput).unwrap();
        assert!((x[0] - 0.904_837_5).abs() < 1e-9);
        assert!((x[0] - (-0.1f64).exp()).abs() < 1e-7);
    }

    #[test]
    fn rk4_step_rejects_bad_step() {
        assert!(rk4_step(&Linear(-1.0), 0.0, &[1.0], 0.0, &NoInput).is_err());
        assert!(rk4_step(&Linear(-1.0), 0.0, &[1.0], -0.1, &NoInput).is_err());
    }

    #[test]
    fn divergence_reports_step() {
        let grid = TimeGrid::new(0.0, 50.0, 100).unwrap();
        match rollout(&Linear(400.0), &[1.0], &NoInput, &grid) {
            Err(Error::Diverged { step }) => assert!(step > 10 && step < 100, "{step}"),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn rollout_values() {
        assert!(TimeGrid::new(0.0, 1.0, 0).is_err());
        assert!(TimeGrid::new(1.0, 1.0, 5).is_err());
        let grid = TimeGrid::new(0.0, 1.0, 100).unwrap();
        let traj = rollout(&Constant(vec![1.0]), &[2.0], &NoInput, &grid).unwrap();
        assert_eq!(traj.states.len(), 101);
        assert!((traj.states[100][0] - 3.0).abs() < 1e-12);
        let traj = rollout(&Linear(-1.0), &[1.0], &NoInput, &grid).unwrap();
        assert!((traj.states[100][0] - (-1.0f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn window_times_match_parent() {
        let grid = TimeGrid::new(0.0, 1.0, 100).unwrap();
        let w = grid.window(75, 25).unwrap();
        for k in 0..=25 {
            assert_eq!(w.time(k).to_bits(), grid.time(75 + k).to_bits());
        }
        assert_eq!(w.t1(), 1.0);
        assert!(grid.window(90, 20).is_err());
    }

    #[test]
    fn csv_layout_and_parse() {
        let grid = TimeGrid::new(0.0, 0.2, 2).unwrap();
        let traj = Trajectory::new(
            grid,
            vec![vec![1.0, 0.1], vec![0.5, 1.0 / 3.0], vec![-2.0, 1e-7]],
            vec![vec![0.0], vec![0.5], vec![0.5]],
        )
        .unwrap();
        let text = traj.to_csv_string().unwrap();
        assert_eq!(
            text,
            "t,x1,x2,u1\n0.0,1.0,0.1,0.0\n0.1,0.5,0.3333333333333333,0.5\n0.2,-2.0,1e-7,0.5\n"
        );
        assert_eq!(Trajectory::read_csv(text.as_bytes()).unwrap(), traj);
    }
}
