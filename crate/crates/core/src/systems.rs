//! Ground-truth benchmark systems.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::integrate::{Dynamics, StageInput};

/// Single-link robot arm: `ẋ1 = x2`, `ẋ2 = u/M − mgL sin(x1) / 2M`.
pub fn single_link_rhs(x: &[f64], u: f64, p: &SingleLinkParams) -> [f64; 2] {
    [x[1], u / p.inertia - 0.5 * p.mass * p.gravity * p.length * x[0].sin() / p.inertia]
}

/// Idealised DC-to-DC converter with state `(v1, v2, i3)` and duty `u`.
pub fn dcdc_rhs(x: &[f64], u: f64, p: &DcDcParams) -> [f64; 3] {
    let (v1, v2, i3) = (x[0], x[1], x[2]);
    [
        (1.0 - u) * i3 / p.c1,
        u * i3 / p.c2,
        (-(1.0 - u) * v1 - u * v2) / p.inductance,
    ]
}

/// Fully actuated rigid body in principal axes: `ẋ = x × ω + u` with
/// `ω = (x1/I1, x2/I2, x3/I3)`, written as `S(x) ω`.
pub fn rigid_body_rhs(x: &[f64], u: &[f64], inertia: &[f64; 3]) -> [f64; 3] {
    let w = [x[0] / inertia[0], x[1] / inertia[1], x[2] / inertia[2]];
    [
        -x[2] * w[1] + x[1] * w[2] + u[0],
        x[2] * w[0] - x[0] * w[2] + u[1],
        -x[1] * w[0] + x[0] * w[1] + u[2],
    ]
}

/// Rabinovich–Fabrikant system with the drifting parameter `γ` as input.
pub fn rf_rhs(x: &[f64], gamma: f64, alpha: f64) -> [f64; 3] {
    let (a, b, c) = (x[0], x[1], x[2]);
    [
        b * (c - 1.0 + a * a) + gamma * a,
        a * (3.0 * c + 1.0 - a * a) + gamma * b,
        -2.0 * c * (alpha + a * b),
    ]
}

/// S-system rate constants and kinetic orders of the glycolytic pathway.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlycoParams {
    pub alpha1: f64,
    pub theta14: f64,
    pub theta16: f64,
    pub beta1: f64,
    pub mu11: f64,
    pub mu12: f64,
    pub mu17: f64,
    pub alpha2: f64,
    pub theta21: f64,
    pub theta22: f64,
    pub theta25: f64,
    pub theta27: f64,
    pub theta210: f64,
    pub beta2: f64,
    pub mu22: f64,
    pub mu23: f64,
    pub mu28: f64,
    pub alpha3: f64,
    pub theta32: f64,
    pub theta33: f64,
    pub theta38: f64,
    pub beta3: f64,
    pub mu33: f64,
    pub mu39: f64,
}

impl Default for GlycoParams {
    fn default() -> Self {
        Self {
            alpha1: 0.077884314,
            theta14: 0.66,
            theta16: 1.0,
            beta1: 1.06270825,
            mu11: 1.53,
            mu12: -0.59,
            mu17: 1.0,
            alpha2: 0.585012402,
            theta21: 0.95,
            theta22: -0.41,
            theta25: 0.32,
            theta27: 0.62,
            theta210: 0.38,
            beta2: 0.0007934561,
            mu22: 3.97,
            mu23: -3.06,
            mu28: 1.0,
            alpha3: 0.0007934561,
            theta32: 3.97,
            theta33: -3.06,
            theta38: 1.0,
            beta3: 1.05880847,
            mu33: 0.3,
            mu39: 1.0,
        }
    }
}

/// Glycolytic-glycogenolytic S-system on 10 metabolite levels. `x4..x6`
/// integrate the inputs and the enzymes `x7..x10` stay constant.
pub fn glyco_rhs(x: &[f64], u: &[f64], p: &GlycoParams) -> Result<[f64; 10]> {
    if let Some(i) = x.iter().position(|&v| !(v > 0.0)) {
        return Err(Error::Domain(format!("glycolytic level x{} = {} must be positive", i + 1, x[i])));
    }
    let x1 = p.alpha1 * x[3].powf(p.theta14) * x[5].powf(p.theta16)
        - p.beta1 * x[0].powf(p.mu11) * x[1].powf(p.mu12) * x[6].powf(p.mu17);
    let x2 = p.alpha2
        * x[0].powf(p.theta21)
        * x[1].powf(p.theta22)
        * x[4].powf(p.theta25)
        * x[6].powf(p.theta27)
        * x[9].powf(p.theta210)
        - p.beta2 * x[1].powf(p.mu22) * x[2].powf(p.mu23) * x[7].powf(p.mu28);
    let x3 = p.alpha3 * x[1].powf(p.theta32) * x[2].powf(p.theta33) * x[7].powf(p.theta38)
        - p.beta3 * x[2].powf(p.mu33) * x[8].powf(p.mu39);
    Ok([x1, x2, x3, u[0], u[1], u[2], 0.0, 0.0, 0.0, 0.0])
}

/// Network of swing equations. State is `(θ_1..θ_N, ω_1..ω_N)`.
pub fn swing_rhs(state: &[f64], power: &[f64], p: &SwingParams) -> Result<Vec<f64>> {
    let n = p.nodes;
    let (inertia, damping) = p.resolved()?;
    let (theta, omega) = state.split_at(n);
    let mut coupling = vec![0.0; n];
    for &(i, j) in &p.edges {
        let flow = p.coupling * (theta[i] - theta[j]).sin();
        coupling[i] += flow;
        coupling[j] -= flow;
    }
    let mut out = omega.to_vec();
    out.extend((0..n).map(|i| (power[i] - coupling[i] - damping[i] * omega[i]) / inertia[i]));
    Ok(out)
}

/// Method-of-lines heat equation on `nodes` equispaced points. The two
/// boundary nodes follow the inputs: their derivative is the input rate.
pub fn heat1d_rhs(temp: &[f64], du: &[f64], p: &Heat1dParams) -> Vec<f64> {
    let n = temp.len();
    let h = p.length / (n - 1) as f64;
    let c = p.conductivity / (h * h);
    let mut out = vec![0.0; n];
    for i in 1..n - 1 {
        out[i] = c * (temp[i - 1] - 2.0 * temp[i] + temp[i + 1]);
    }
    out[0] = du[0];
    out[n - 1] = du[1];
    out
}

/// 2-D heat equation on an `nx × ny` row-major grid with a uniform source
/// `q` on interior nodes. Boundary nodes are held fixed.
pub fn heat2d_rhs(temp: &[f64], q: f64, p: &Heat2dParams) -> Vec<f64> {
    let (nx, ny) = (p.nx, p.ny);
    let h = p.length / (nx - 1) as f64;
    let c = p.conductivity / (h * h);
    let mut out = vec![0.0; nx * ny];
    for r in 1..ny - 1 {
        for col in 1..nx - 1 {
            let k = r * nx + col;
            let lap = temp[k - 1] + temp[k + 1] + temp[k - nx] + temp[k + nx] - 4.0 * temp[k];
            out[k] = c * lap + q;
        }
    }
    out
}

fn d_inertia() -> f64 {
    1.0
}
fn d_mass() -> f64 {
    2.0
}
fn d_length() -> f64 {
    0.5
}
fn d_gravity() -> f64 {
    9.8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingleLinkParams {
    #[serde(default = "d_inertia")]
    pub inertia: f64,
    #[serde(default = "d_mass")]
    pub mass: f64,
    #[serde(default = "d_length")]
    pub length: f64,
    #[serde(default = "d_gravity")]
    pub gravity: f64,
}

impl Default for SingleLinkParams {
    fn default() -> Self {
        Self {
            inertia: 1.0,
            mass: 2.0,
            length: 0.5,
            gravity: 9.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DcDcParams {
    pub c1: f64,
    pub c2: f64,
    pub inductance: f64,
}

impl Default for DcDcParams {
    fn default() -> Self {
        Self {
            c1: 0.1,
            c2: 0.2,
            inductance: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SwingParams {
    pub nodes: usize,
    pub edges: Vec<(usize, usize)>,
    pub coupling: f64,
    /// Per-node `M_i`; drawn from `inertia_range` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inertia: Option<Vec<f64>>,
    /// Per-node `D_i`; drawn from `damping_range` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub damping: Option<Vec<f64>>,
    pub inertia_range: (f64, f64),
    pub damping_range: (f64, f64),
}

impl Default for SwingParams {
    fn default() -> Self {
        let nodes = 10;
        let mut edges: Vec<(usize, usize)> = (0..nodes).map(|i| (i, (i + 1) % nodes)).collect();
        edges.extend([(0, 5), (2, 7)]);
        Self {
            nodes,
            edges,
            coupling: 1.0,
            inertia: None,
            damping: None,
            inertia_range: (0.3, 0.9),
            damping_range: (0.7, 1.3),
        }
    }
}

impl SwingParams {
    fn resolved(&self) -> Result<(&[f64], &[f64])> {
        match (&self.inertia, &self.damping) {
            (Some(m), Some(d)) => Ok((m, d)),
            _ => Err(Error::invalid("swing parameters", "inertia and damping must be resolved first")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Heat1dParams {
    pub nodes: usize,
    pub length: f64,
    pub conductivity: f64,
}

impl Default for Heat1dParams {
    fn default() -> Self {
        Self {
            nodes: 50,
            length: 10.0,
            conductivity: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Heat2dParams {
    pub nx: usize,
    pub ny: usize,
    pub length: f64,
    pub conductivity: f64,
}

impl Default for Heat2dParams {
    fn default() -> Self {
        Self {
            nx: 16,
            ny: 16,
            length: 10.0,
            conductivity: 1.0,
        }
    }
}

fn d_inertia3() -> [f64; 3] {
    [1.0, 2.0, 3.0]
}
fn d_alpha() -> f64 {
    1.1
}
fn d_enzyme() -> f64 {
    1.0
}

/// One of the benchmark systems with its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "id", rename_all = "snake_case")]
pub enum SystemSpec {
    SingleLink {
        #[serde(flatten)]
        params: SingleLinkParams,
    },
    DcDc {
        #[serde(flatten)]
        params: DcDcParams,
    },
    RigidBody {
        #[serde(default = "d_inertia3")]
        inertia: [f64; 3],
    },
    RabinovichFabrikant {
        #[serde(default = "d_alpha")]
        alpha: f64,
    },
    Glycolytic {
        #[serde(default)]
        params: GlycoParams,
        /// Constant level of the enzymes `x7..x10`.
        #[serde(default = "d_enzyme")]
        enzyme_level: f64,
    },
    Swing {
        #[serde(flatten)]
        params: SwingParams,
    },
    Heat1d {
        #[serde(flatten)]
        params: Heat1dParams,
    },
    Heat2d {
        #[serde(flatten)]
        params: Heat2dParams,
    },
}

impl SystemSpec {
    pub const IDS: [&'static str; 8] = [
        "single_link",
        "dc_dc",
        "rigid_body",
        "rabinovich_fabrikant",
        "glycolytic",
        "swing",
        "heat1d",
        "heat2d",
    ];

    /// System with default parameters for `id`.
    pub fn by_id(id: &str) -> Result<Self> {
        Ok(match id {
            "single_link" => SystemSpec::SingleLink {
                params: SingleLinkParams::default(),
            },
            "dc_dc" => SystemSpec::DcDc {
                params: DcDcParams::default(),
            },
            "rigid_body" => SystemSpec::RigidBody { inertia: d_inertia3() },
            "rabinovich_fabrikant" => SystemSpec::RabinovichFabrikant { alpha: d_alpha() },
            "glycolytic" => SystemSpec::Glycolytic {
                params: GlycoParams::default(),
                enzyme_level: d_enzyme(),
            },
            "swing" => SystemSpec::Swing {
                params: SwingParams::default(),
            },
            "heat1d" => SystemSpec::Heat1d {
                params: Heat1dParams::default(),
            },
            "heat2d" => SystemSpec::Heat2d {
                params: Heat2dParams::default(),
            },
            other => return Err(Error::invalid("system id", other.to_string())),
        })
    }

    pub fn id(&self) -> &'static str {
        match self {
            SystemSpec::SingleLink { .. } => "single_link",
            SystemSpec::DcDc { .. } => "dc_dc",
            SystemSpec::RigidBody { .. } => "rigid_body",
            SystemSpec::RabinovichFabrikant { .. } => "rabinovich_fabrikant",
            SystemSpec::Glycolytic { .. } => "glycolytic",
            SystemSpec::Swing { .. } => "swing",
            SystemSpec::Heat1d { .. } => "heat1d",
            SystemSpec::Heat2d { .. } => "heat2d",
        }
    }

    pub fn n(&self) -> usize {
        match self {
            SystemSpec::SingleLink { .. } => 2,
            SystemSpec::DcDc { .. } | SystemSpec::RigidBody { .. } | SystemSpec::RabinovichFabrikant { .. } => 3,
            SystemSpec::Glycolytic { .. } => 10,
            SystemSpec::Swing { params } => 2 * params.nodes,
            SystemSpec::Heat1d { params } => params.nodes,
            SystemSpec::Heat2d { params } => params.nx * params.ny,
        }
    }

    pub fn m(&self) -> usize {
        match self {
            SystemSpec::SingleLink { .. } | SystemSpec::DcDc { .. } | SystemSpec::RabinovichFabrikant { .. } => 1,
            SystemSpec::RigidBody { .. } | SystemSpec::Glycolytic { .. } => 3,
            SystemSpec::Swing { params } => params.nodes,
            SystemSpec::Heat1d { .. } => 2,
            SystemSpec::Heat2d { .. } => 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |what: &'static str, v: &[f64]| {
            if v.iter().all(|x| x.is_finite() && *x > 0.0) {
                Ok(())
            } else {
                Err(Error::invalid(what, "parameters must be finite and positive"))
            }
        };
        match self {
            SystemSpec::SingleLink { params: p } => {
                positive("single link", &[p.inertia])?;
                if [p.mass, p.length, p.gravity].iter().all(|v| v.is_finite()) {
                    Ok(())
                } else {
                    Err(Error::invalid("single link", "parameters must be finite"))
                }
            }
            SystemSpec::DcDc { params: p } => positive("converter", &[p.c1, p.c2, p.inductance]),
            SystemSpec::RigidBody { inertia } => positive("rigid body", inertia),
            SystemSpec::RabinovichFabrikant { alpha } if alpha.is_finite() => Ok(()),
            SystemSpec::RabinovichFabrikant { .. } => Err(Error::invalid("rabinovich-fabrikant", "alpha must be finite")),
            SystemSpec::Glycolytic { enzyme_level, .. } => positive("glycolytic enzymes", &[*enzyme_level]),
            SystemSpec::Swing { params: p } => {
                if p.nodes == 0 || p.edges.iter().any(|&(i, j)| i >= p.nodes || j >= p.nodes || i == j) {
                    return Err(Error::invalid("swing", "edges must join distinct existing nodes"));
                }
                let (lo, hi) = p.inertia_range;
                let (dlo, dhi) = p.damping_range;
                if !(lo > 0.0 && lo <= hi && dlo >= 0.0 && dlo <= dhi) {
                    return Err(Error::invalid("swing", "need 0 < inertia range, ordered ranges"));
                }
                if let Some(m) = &p.inertia {
                    check_dim("swing inertia", p.nodes, m.len())?;
                    positive("swing inertia", m)?;
                }
                if let Some(d) = &p.damping {
                    check_dim("swing damping", p.nodes, d.len())?;
                }
                Ok(())
            }
            SystemSpec::Heat1d { params: p } => {
                if p.nodes < 3 {
                    return Err(Error::invalid("heat1d", "need at least 3 nodes"));
                }
                positive("heat1d", &[p.length, p.conductivity])
            }
            SystemSpec::Heat2d { params: p } => {
                if p.nx < 3 || p.ny < 3 {
                    return Err(Error::invalid("heat2d", "need a grid of at least 3 x 3"));
                }
                positive("heat2d", &[p.length, p.conductivity])
            }
        }
    }

    /// Fills in randomly drawn parameters (swing `M_i`, `D_i`).
    pub fn resolve<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<SystemSpec> {
        self.validate()?;
        let mut out = self.clone();
        if let SystemSpec::Swing { params } = &mut out {
            let draw = |rng: &mut R, (lo, hi): (f64, f64), n: usize| -> Vec<f64> {
                (0..n).map(|_| if lo == hi { lo } else { rng.random_range(lo..hi) }).collect()
            };
            if params.inertia.is_none() {
                params.inertia = Some(draw(rng, params.inertia_range, params.nodes));
            }
            if params.damping.is_none() {
                params.damping = Some(draw(rng, params.damping_range, params.nodes));
            }
        }
        Ok(out)
    }

    /// Initial state drawn from the system's sampling distribution.
    pub fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut uniform = |lo: f64, hi: f64, k: usize| -> Vec<f64> { (0..k).map(|_| rng.random_range(lo..hi)).collect() };
        match self {
            SystemSpec::SingleLink { .. } | SystemSpec::DcDc { .. } => uniform(-1.0, 1.0, self.n()),
            SystemSpec::RigidBody { .. } => {
                let phi = uniform(0.5, 1.5, 1)[0];
                vec![phi.cos(), 0.0, phi.sin()]
            }
            SystemSpec::RabinovichFabrikant { .. } => uniform(-1.0, 1.0, 3),
            SystemSpec::Glycolytic { enzyme_level, .. } => {
                let mut x = uniform(0.5, 1.5, 6);
                x.extend([*enzyme_level; 4]);
                x
            }
            SystemSpec::Swing { params } => uniform(-1.0, 1.0, 2 * params.nodes),
            SystemSpec::Heat1d { params } => {
                let mut t = uniform(-1.0, 1.0, params.nodes);
                let b = crate::signal::heat_boundary(0.0);
                t[0] = b;
                t[params.nodes - 1] = b;
                t
            }
            SystemSpec::Heat2d { params } => {
                let (nx, ny) = (params.nx, params.ny);
                let v = uniform(-1.0, 1.0, nx * ny);
                (0..nx * ny)
                    .map(|k| {
                        let (r, c) = (k / nx, k % nx);
                        if r == 0 || c == 0 || r == ny - 1 || c == nx - 1 {
                            0.0
                        } else {
                            v[k]
                        }
                    })
                    .collect()
            }
        }
    }
}

impl Dynamics for SystemSpec {
    fn state_dim(&self) -> usize {
        self.n()
    }

    fn input_dim(&self) -> usize {
        self.m()
    }

    fn eval(&self, _t: f64, x: &[f64], input: StageInput<'_>) -> Result<Vec<f64>> {
        check_dim("system state", self.n(), x.len())?;
        check_dim("system input", self.m(), input.u.len())?;
        let u = input.u;
        Ok(match self {
            SystemSpec::SingleLink { params } => single_link_rhs(x, u[0], params).to_vec(),
            SystemSpec::DcDc { params } => dcdc_rhs(x, u[0], params).to_vec(),
            SystemSpec::RigidBody { inertia } => rigid_body_rhs(x, u, inertia).to_vec(),
            SystemSpec::RabinovichFabrikant { alpha } => rf_rhs(x, u[0], *alpha).to_vec(),
            SystemSpec::Glycolytic { params, .. } => glyco_rhs(x, u, params)?.to_vec(),
            SystemSpec::Swing { params } => swing_rhs(x, u, params)?,
            SystemSpec::Heat1d { params } => {
                check_dim("heat boundary rate", 2, input.du.len())?;
                heat1d_rhs(x, input.du, params)
            }
            SystemSpec::Heat2d { params } => heat2d_rhs(x, u[0], params),
        })
    }
}
