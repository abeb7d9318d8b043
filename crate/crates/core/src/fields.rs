//! Learnable continuous-time models built from [`Mlp`]s.
//!
//! * ICODE: `ẋ = Σᵢ fᵢ(x) + Σⱼ kⱼ(x) uⱼ`, affine in the input.
//! * NODE: `ẋ = f(t, x)`, time appended as the first network input.
//! * ANODE: a NODE on `[x; a]` with `a(0)` produced by a one-hidden-layer
//!   network of `x(0)`.
//! * CDE: `ẋ = f₁(x) + f₂(x) u̇`, driven by the input rate. `f₁` is the
//!   column of the time control channel, whose rate is identically one.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::integrate::{Differentiable, Dynamics, StageInput};
use crate::nn::{Mlp, ParamGradient};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Icode,
    Node,
    Anode,
    Cde,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [ModelKind::Icode, ModelKind::Cde, ModelKind::Node, ModelKind::Anode];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Icode => "icode",
            ModelKind::Node => "node",
            ModelKind::Anode => "anode",
            ModelKind::Cde => "cde",
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "icode" => Ok(ModelKind::Icode),
            "node" => Ok(ModelKind::Node),
            "anode" => Ok(ModelKind::Anode),
            "cde" => Ok(ModelKind::Cde),
            other => Err(Error::invalid("model kind", other.to_string())),
        }
    }
}

/// Network sizes shared by every model family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub width: usize,
    pub hidden_layers: usize,
    pub bias: bool,
    /// Number of `fᵢ` subnetworks in an ICODE.
    pub subnets: usize,
    /// Augmented dimension of an ANODE.
    pub augment_dim: usize,
}

impl Architecture {
    fn dims(&self, input: usize, output: usize) -> Vec<usize> {
        std::iter::once(input)
            .chain(std::iter::repeat_n(self.width, self.hidden_layers))
            .chain(std::iter::once(output))
            .collect()
    }

    /// Parameters of one network `input → output` under this architecture.
    pub fn net_param_count(&self, input: usize, output: usize) -> usize {
        self.dims(input, output)
            .windows(2)
            .map(|w| w[0] * w[1] + if self.bias { w[1] } else { 0 })
            .sum()
    }

    /// Total parameters of a model of `kind` with state dimension `n` and
    /// input dimension `m`.
    pub fn param_count(&self, kind: ModelKind, n: usize, m: usize) -> usize {
        match kind {
            ModelKind::Icode => (self.subnets + m) * self.net_param_count(n, n),
            ModelKind::Node => self.net_param_count(n + 1, n),
            ModelKind::Anode => {
                let d = n + self.augment_dim;
                let init = if self.augment_dim == 0 {
                    0
                } else {
                    let one = Architecture {
                        hidden_layers: 1,
                        ..*self
                    };
                    one.net_param_count(n, self.augment_dim)
                };
                self.net_param_count(d + 1, d) + init
            }
            ModelKind::Cde => self.net_param_count(n, n) + self.net_param_count(n, n * m),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IcodeModel {
    f_nets: Vec<Mlp>,
    k_nets: Vec<Mlp>,
}

impl IcodeModel {
    pub fn new(f_nets: Vec<Mlp>, k_nets: Vec<Mlp>) -> Result<Self> {
        let Some(first) = f_nets.first() else {
            return Err(Error::invalid("icode model", "at least one f network is required"));
        };
        let n = first.input_dim();
        for net in f_nets.iter().chain(&k_nets) {
            check_dim("icode network input", n, net.input_dim())?;
            check_dim("icode network output", n, net.output_dim())?;
        }
        Ok(Self { f_nets, k_nets })
    }

    pub fn f_nets(&self) -> &[Mlp] {
        &self.f_nets
    }

    pub fn k_nets(&self) -> &[Mlp] {
        &self.k_nets
    }

    pub fn state_dim(&self) -> usize {
        self.f_nets[0].input_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.k_nets.len()
    }

    /// `Σᵢ fᵢ(x) + Σⱼ kⱼ(x) uⱼ`.
    pub fn rhs(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        check_dim("icode state", self.state_dim(), x.len())?;
        check_dim("icode input", self.input_dim(), u.len())?;
        Ok(self.rhs_unchecked(x, u))
    }

    fn rhs_unchecked(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        for f in &self.f_nets {
            add(&mut out, 1.0, &f.forward_unchecked(x));
        }
        for (k, &uj) in self.k_nets.iter().zip(u) {
            if uj != 0.0 {
                add(&mut out, uj, &k.forward_unchecked(x));
            }
        }
        out
    }

    fn vjp(&self, x: &[f64], u: &[f64], cot: &[f64], grads: &mut [ParamGradient]) -> Vec<f64> {
        let (gf, gk) = grads.split_at_mut(self.f_nets.len());
        let mut dx = vec![0.0; x.len()];
        for (f, g) in self.f_nets.iter().zip(gf) {
            add(&mut dx, 1.0, &f.vjp_accumulate(x, cot, g));
        }
        for ((k, g), &uj) in self.k_nets.iter().zip(gk).zip(u) {
            if uj != 0.0 {
                let scaled: Vec<f64> = cot.iter().map(|c| c * uj).collect();
                add(&mut dx, 1.0, &k.vjp_accumulate(x, &scaled, g));
            }
        }
        dx
    }
}

fn add(acc: &mut [f64], alpha: f64, v: &[f64]) {
    acc.iter_mut().zip(v).for_each(|(a, b)| *a += alpha * b);
}

fn with_time(t: f64, x: &[f64]) -> Vec<f64> {
    let mut z = Vec::with_capacity(x.len() + 1);
    z.push(t);
    z.extend_from_slice(x);
    z
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeModel {
    net: Mlp,
}

impl NodeModel {
    pub fn new(net: Mlp) -> Result<Self> {
        check_dim("node network input", net.output_dim() + 1, net.input_dim())?;
        Ok(Self { net })
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn state_dim(&self) -> usize {
        self.net.output_dim()
    }

    /// `f(t, x)` on `[t; x]`.
    pub fn rhs(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        check_dim("node state", self.state_dim(), x.len())?;
        Ok(self.net.forward_unchecked(&with_time(t, x)))
    }

    fn vjp(&self, t: f64, x: &[f64], cot: &[f64], grad: &mut ParamGradient) -> Vec<f64> {
        let dz = self.net.vjp_accumulate(&with_time(t, x), cot, grad);
        dz[1..].to_vec()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnodeModel {
    net: Mlp,
    init_net: Option<Mlp>,
    n: usize,
}

impl AnodeModel {
    /// `init_net` must be present exactly when the augmented dimension is
    /// positive.
    pub fn new(net: Mlp, init_net: Option<Mlp>, n: usize) -> Result<Self> {
        let d = net.output_dim();
        check_dim("anode network input", d + 1, net.input_dim())?;
        if n == 0 || n > d {
            return Err(Error::invalid("anode model", format!("state dim {n} vs augmented {d}")));
        }
        match &init_net {
            Some(init) => {
                check_dim("anode init input", n, init.input_dim())?;
                check_dim("anode init output", d - n, init.output_dim())?;
            }
            None if d > n => {
                return Err(Error::invalid("anode model", "augmented model needs an init network"));
            }
            None => {}
        }
        Ok(Self { net, init_net, n })
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn init_net(&self) -> Option<&Mlp> {
        self.init_net.as_ref()
    }

    pub fn observed_dim(&self) -> usize {
        self.n
    }

    pub fn augment_dim(&self) -> usize {
        self.net.output_dim() - self.n
    }

    /// `[x0; init(x0)]`.
    pub fn init(&self, x0: &[f64]) -> Result<Vec<f64>> {
        check_dim("anode initial state", self.n, x0.len())?;
        let mut h = x0.to_vec();
        if let Some(init) = &self.init_net {
            h.extend(init.forward_unchecked(x0));
        }
        Ok(h)
    }

    /// `f̃(t, h)` on `[t; h]`.
    pub fn rhs(&self, t: f64, h: &[f64]) -> Result<Vec<f64>> {
        check_dim("anode state", self.net.output_dim(), h.len())?;
        Ok(self.net.forward_unchecked(&with_time(t, h)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CdeModel {
    drift: Mlp,
    control: Mlp,
    m: usize,
}

impl CdeModel {
    pub fn new(drift: Mlp, control: Mlp, m: usize) -> Result<Self> {
        let n = drift.input_dim();
        check_dim("cde drift output", n, drift.output_dim())?;
        check_dim("cde control input", n, control.input_dim())?;
        check_dim("cde control output", n * m, control.output_dim())?;
        Ok(Self { drift, control, m })
    }

    pub fn drift(&self) -> &Mlp {
        &self.drift
    }

    pub fn control(&self) -> &Mlp {
        &self.control
    }

    pub fn state_dim(&self) -> usize {
        self.drift.input_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.m
    }

    /// `f₁(x) + F₂(x) u̇` with `F₂` the control output reshaped row-major to
    /// `n × m`.
    pub fn rhs(&self, x: &[f64], du_dt: &[f64]) -> Result<Vec<f64>> {
        check_dim("cde state", self.state_dim(), x.len())?;
        check_dim("cde input rate", self.m, du_dt.len())?;
        Ok(self.rhs_unchecked(x, du_dt))
    }

    fn rhs_unchecked(&self, x: &[f64], du_dt: &[f64]) -> Vec<f64> {
        let mut out = self.drift.forward_unchecked(x);
        if self.m > 0 && du_dt.iter().any(|&v| v != 0.0) {
            let g = self.control.forward_unchecked(x);
            for (o, row) in out.iter_mut().zip(g.chunks_exact(self.m)) {
                *o += row.iter().zip(du_dt).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        out
    }

    fn vjp(&self, x: &[f64], du_dt: &[f64], cot: &[f64], grads: &mut [ParamGradient]) -> Vec<f64> {
        let (gd, gc) = grads.split_at_mut(1);
        let mut dx = self.drift.vjp_accumulate(x, cot, &mut gd[0]);
        if self.m > 0 && du_dt.iter().any(|&v| v != 0.0) {
            let outer: Vec<f64> = cot
                .iter()
                .flat_map(|&c| du_dt.iter().map(move |&d| c * d))
                .collect();
            add(&mut dx, 1.0, &self.control.vjp_accumulate(x, &outer, &mut gc[0]));
        }
        dx
    }
}

/// Any of the four model families.
#[derive(Debug, Clone, PartialEq)]
pub enum VectorFieldModel {
    Icode(IcodeModel),
    Node(NodeModel),
    Anode(AnodeModel),
    Cde(CdeModel),
}

/// Per-network gradients, ordered as [`VectorFieldModel::nets`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGradient(pub Vec<ParamGradient>);

impl ModelGradient {
    pub fn add_assign(&mut self, other: &ModelGradient) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.0.iter_mut().for_each(|g| g.scale(factor));
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.0.iter().flat_map(ParamGradient::to_flat).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(ParamGradient::is_finite)
    }
}

impl VectorFieldModel {
    /// Randomly initialised model for an `n`-state, `m`-input system.
    pub fn build<R: Rng + ?Sized>(kind: ModelKind, n: usize, m: usize, arch: &Architecture, rng: &mut R) -> Result<Self> {
        if arch.width == 0 {
            return Err(Error::invalid("architecture", "width must be >= 1"));
        }
        let bias = arch.bias;
        Ok(match kind {
            ModelKind::Icode => {
                if arch.subnets == 0 {
                    return Err(Error::invalid("architecture", "need at least one f subnetwork"));
                }
                let f = (0..arch.subnets)
                    .map(|_| Mlp::random(&arch.dims(n, n), bias, rng))
                    .collect::<Result<_>>()?;
                let k = (0..m)
                    .map(|_| Mlp::random(&arch.dims(n, n), bias, rng))
                    .collect::<Result<_>>()?;
                VectorFieldModel::Icode(IcodeModel::new(f, k)?)
            }
            ModelKind::Node => {
                VectorFieldModel::Node(NodeModel::new(Mlp::random(&arch.dims(n + 1, n), bias, rng)?)?)
            }
            ModelKind::Anode => {
                let d = n + arch.augment_dim;
                let net = Mlp::random(&arch.dims(d + 1, d), bias, rng)?;
                let init = if arch.augment_dim > 0 {
                    Some(Mlp::random(&[n, arch.width, arch.augment_dim], bias, rng)?)
                } else {
                    None
                };
                VectorFieldModel::Anode(AnodeModel::new(net, init, n)?)
            }
            ModelKind::Cde => {
                if m == 0 {
                    return Err(Error::invalid("cde model", "needs at least one input channel"));
                }
                let drift = Mlp::random(&arch.dims(n, n), bias, rng)?;
                let control = Mlp::random(&arch.dims(n, n * m), bias, rng)?;
                VectorFieldModel::Cde(CdeModel::new(drift, control, m)?)
            }
        })
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            VectorFieldModel::Icode(_) => ModelKind::Icode,
            VectorFieldModel::Node(_) => ModelKind::Node,
            VectorFieldModel::Anode(_) => ModelKind::Anode,
            VectorFieldModel::Cde(_) => ModelKind::Cde,
        }
    }

    /// Observed state dimension `n`.
    pub fn n(&self) -> usize {
        match self {
            VectorFieldModel::Icode(m) => m.state_dim(),
            VectorFieldModel::Node(m) => m.state_dim(),
            VectorFieldModel::Anode(m) => m.observed_dim(),
            VectorFieldModel::Cde(m) => m.state_dim(),
        }
    }

    /// Input dimension `m`. NODE/ANODE carry no input channel, but report the
    /// width of the input they are rolled out against (zero).
    pub fn m(&self) -> usize {
        match self {
            VectorFieldModel::Icode(m) => m.input_dim(),
            VectorFieldModel::Cde(m) => m.input_dim(),
            VectorFieldModel::Node(_) | VectorFieldModel::Anode(_) => 0,
        }
    }

    pub fn augment_dim(&self) -> usize {
        match self {
            VectorFieldModel::Anode(m) => m.augment_dim(),
            _ => 0,
        }
    }

    pub fn nets(&self) -> Vec<&Mlp> {
        match self {
            VectorFieldModel::Icode(m) => m.f_nets.iter().chain(&m.k_nets).collect(),
            VectorFieldModel::Node(m) => vec![&m.net],
            VectorFieldModel::Anode(m) => std::iter::once(&m.net).chain(m.init_net.as_ref()).collect(),
            VectorFieldModel::Cde(m) => vec![&m.drift, &m.control],
        }
    }

    pub fn nets_mut(&mut self) -> Vec<&mut Mlp> {
        match self {
            VectorFieldModel::Icode(m) => m.f_nets.iter_mut().chain(m.k_nets.iter_mut()).collect(),
            VectorFieldModel::Node(m) => vec![&mut m.net],
            VectorFieldModel::Anode(m) => std::iter::once(&mut m.net).chain(m.init_net.as_mut()).collect(),
            VectorFieldModel::Cde(m) => vec![&mut m.drift, &mut m.control],
        }
    }

    pub fn param_count(&self) -> usize {
        self.nets().iter().map(|n| n.param_count()).sum()
    }

    pub fn as_icode(&self) -> Option<&IcodeModel> {
        match self {
            VectorFieldModel::Icode(m) => Some(m),
            _ => None,
        }
    }

    /// The width of the input this model is rolled out against.
    pub fn uses_input(&self) -> bool {
        matches!(self, VectorFieldModel::Icode(_) | VectorFieldModel::Cde(_))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

impl Dynamics for VectorFieldModel {
    fn state_dim(&self) -> usize {
        match self {
            VectorFieldModel::Anode(m) => m.net.output_dim(),
            _ => self.n(),
        }
    }

    fn input_dim(&self) -> usize {
        self.m()
    }

    fn eval(&self, t: f64, x: &[f64], input: StageInput<'_>) -> Result<Vec<f64>> {
        check_dim("model state", self.state_dim(), x.len())?;
        match self {
            VectorFieldModel::Icode(m) => {
                check_dim("icode input", m.input_dim(), input.u.len())?;
                Ok(m.rhs_unchecked(x, input.u))
            }
            VectorFieldModel::Node(m) => m.rhs(t, x),
            VectorFieldModel::Anode(m) => m.rhs(t, x),
            VectorFieldModel::Cde(m) => {
                check_dim("cde input rate", m.input_dim(), input.du.len())?;
                Ok(m.rhs_unchecked(x, input.du))
            }
        }
    }
}

impl Differentiable for VectorFieldModel {
    type Gradient = ModelGradient;

    fn zero_gradient(&self) -> ModelGradient {
        ModelGradient(self.nets().into_iter().map(ParamGradient::zeros_like).collect())
    }

    fn vjp(&self, t: f64, x: &[f64], input: StageInput<'_>, cot: &[f64], grad: &mut ModelGradient) -> Vec<f64> {
        match self {
            VectorFieldModel::Icode(m) => m.vjp(x, input.u, cot, &mut grad.0),
            VectorFieldModel::Node(m) => m.vjp(t, x, cot, &mut grad.0[0]),
            VectorFieldModel::Anode(m) => {
                let dz = m.net.vjp_accumulate(&with_time(t, x), cot, &mut grad.0[0]);
                dz[1..].to_vec()
            }
            VectorFieldModel::Cde(m) => m.vjp(x, input.du, cot, &mut grad.0),
        }
    }

    fn observed_dim(&self) -> usize {
        self.n()
    }

    fn lift(&self, x0: &[f64]) -> Result<Vec<f64>> {
        match self {
            VectorFieldModel::Anode(m) => m.init(x0),
            _ => Ok(x0.to_vec()),
        }
    }

    fn lift_vjp(&self, x0: &[f64], cot: &[f64], grad: &mut ModelGradient) {
        if let VectorFieldModel::Anode(m) = self {
            if let Some(init) = &m.init_net {
                init.vjp_accumulate(x0, &cot[m.n..], &mut grad.0[1]);
            }
        }
    }
}

#[derive(Serialize, Deserialize)]
struct BundleDoc {
    kind: ModelKind,
    n: usize,
    m: usize,
    d_a: usize,
    nets: NetsDoc,
}

#[derive(Default, Serialize, Deserialize)]
struct NetsDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    f: Option<Vec<Mlp>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    k: Option<Vec<Mlp>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    net: Option<Mlp>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    init: Option<Mlp>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    drift: Option<Mlp>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    control: Option<Mlp>,
}

impl Serialize for VectorFieldModel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let nets = match self {
            VectorFieldModel::Icode(m) => NetsDoc {
                f: Some(m.f_nets.clone()),
                k: Some(m.k_nets.clone()),
                ..Default::default()
            },
            VectorFieldModel::Node(m) => NetsDoc {
                net: Some(m.net.clone()),
                ..Default::default()
            },
            VectorFieldModel::Anode(m) => NetsDoc {
                net: Some(m.net.clone()),
                init: m.init_net.clone(),
                ..Default::default()
            },
            VectorFieldModel::Cde(m) => NetsDoc {
                drift: Some(m.drift.clone()),
                control: Some(m.control.clone()),
                ..Default::default()
            },
        };
        BundleDoc {
            kind: self.kind(),
            n: self.n(),
            m: self.m(),
            d_a: self.augment_dim(),
            nets,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for VectorFieldModel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let doc = BundleDoc::deserialize(d)?;
        let missing = |name: &str| D::Error::custom(format!("{} bundle is missing nets.{name}", doc.kind));
        let model = match doc.kind {
            ModelKind::Icode => IcodeModel::new(
                doc.nets.f.ok_or_else(|| missing("f"))?,
                doc.nets.k.unwrap_or_default(),
            )
            .map(VectorFieldModel::Icode),
            ModelKind::Node => NodeModel::new(doc.nets.net.ok_or_else(|| missing("net"))?).map(VectorFieldModel::Node),
            ModelKind::Anode => AnodeModel::new(doc.nets.net.ok_or_else(|| missing("net"))?, doc.nets.init, doc.n)
                .map(VectorFieldModel::Anode),
            ModelKind::Cde => CdeModel::new(
                doc.nets.drift.ok_or_else(|| missing("drift"))?,
                doc.nets.control.ok_or_else(|| missing("control"))?,
                doc.m,
            )
            .map(VectorFieldModel::Cde),
        }
        .map_err(D::Error::custom)?;
        if model.n() != doc.n || model.m() != doc.m || model.augment_dim() != doc.d_a {
            return Err(D::Error::custom(format!(
                "bundle header (n={}, m={}, d_a={}) disagrees with its networks",
                doc.n, doc.m, doc.d_a
            )));
        }
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn arch() -> Architecture {
        Architecture {
            width: 6,
            hidden_layers: 2,
            bias: true,
            subnets: 2,
            augment_dim: 3,
        }
    }

    #[test]
    fn icode_zero_input_drops_k_terms() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let VectorFieldModel::Icode(m) = VectorFieldModel::build(ModelKind::Icode, 3, 2, &arch(), &mut rng).unwrap() else {
            unreachable!()
        };
        let x = [0.2, -0.5, 1.0];
        let mut expected = m.f_nets[0].forward(&x).unwrap();
        add(&mut expected, 1.0, &m.f_nets[1].forward(&x).unwrap());
        assert_eq!(m.rhs(&x, &[0.0, 0.0]).unwrap(), expected);
    }

    #[test]
    fn icode_zero_k_output_ignores_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = Mlp::random(&[2, 5, 2], true, &mut rng).unwrap();
        let k = Mlp::with_zero_output(&[2, 5, 2], true, &mut rng).unwrap();
        let m = IcodeModel::new(vec![f], vec![k]).unwrap();
        let x = [0.3, 0.7];
        assert_eq!(m.rhs(&x, &[0.0]).unwrap(), m.rhs(&x, &[5.0]).unwrap());
    }

    #[test]
    fn icode_affine_hand_value() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let b = DMatrix::from_row_slice(2, 2, &[0.5, 0.0, -1.0, 2.0]);
        let m = IcodeModel::new(vec![Mlp::affine(&a, None).unwrap()], vec![Mlp::affine(&b, None).unwrap()]).unwrap();
        // A(1,0) = (1,3); B(1,0) = (0.5,-1); times u = 2 -> (1,-2)
        assert_eq!(m.rhs(&[1.0, 0.0], &[2.0]).unwrap(), vec![2.0, 1.0]);
        assert!(m.rhs(&[1.0], &[2.0]).is_err());
        assert!(m.rhs(&[1.0, 0.0], &[]).is_err());
    }

    #[test]
    fn icode_is_affine_in_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let VectorFieldModel::Icode(m) = VectorFieldModel::build(ModelKind::Icode, 3, 2, &arch(), &mut rng).unwrap() else {
            unreachable!()
        };
        let x = [0.1, 0.4, -0.3];
        let v = [0.75, -1.5];
        let r0 = m.rhs(&x, &[0.0, 0.0]).unwrap();
        let r1 = m.rhs(&x, &v).unwrap();
        let r2 = m.rhs(&x, &[2.0 * v[0], 2.0 * v[1]]).unwrap();
        for i in 0..3 {
            let second = (r2[i] - r1[i]) - (r1[i] - r0[i]);
            assert!(second.abs() < 1e-14 * (1.0 + r2[i].abs()), "{second}");
        }
    }

    #[test]
    fn node_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = NodeModel::new(Mlp::with_zero_output(&[3, 4, 2], true, &mut rng).unwrap()).unwrap();
        assert_eq!(m.rhs(1.5, &[3.0, -1.0]).unwrap(), vec![0.0, 0.0]);

        // affine: [t, x1, x2] -> W [t; x] + b; zero time column makes it autonomous
        let w = DMatrix::from_row_slice(2, 3, &[0.0, 1.0, 2.0, 0.0, -1.0, 0.5]);
        let m = NodeModel::new(Mlp::affine(&w, Some(vec![1.0, 0.0])).unwrap()).unwrap();
        let a = m.rhs(0.0, &[2.0, 4.0]).unwrap();
        assert_eq!(a, m.rhs(7.0, &[2.0, 4.0]).unwrap());
        assert_eq!(a, vec![11.0, 0.0]);

        let w = DMatrix::from_row_slice(1, 2, &[3.0, -1.0]);
        let m = NodeModel::new(Mlp::affine(&w, None).unwrap()).unwrap();
        assert_eq!(m.rhs(2.0, &[1.0]).unwrap(), vec![5.0]);
        assert!(m.rhs(2.0, &[1.0, 2.0]).is_err());
    }

    #[test]
    fn anode_init_and_rhs() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = Mlp::random(&[4, 5, 3], true, &mut rng).unwrap();
        let init = Mlp::with_zero_output(&[2, 5, 1], true, &mut rng).unwrap();
        let m = AnodeModel::new(net.clone(), Some(init), 2).unwrap();
        assert_eq!(m.init(&[0.5, -0.5]).unwrap(), vec![0.5, -0.5, 0.0]);

        let init = Mlp::random(&[2, 5, 1], true, &mut rng).unwrap();
        let m = AnodeModel::new(net, Some(init.clone()), 2).unwrap();
        let h = m.init(&[0.5, -0.5]).unwrap();
        assert_eq!(h[2], init.forward(&[0.5, -0.5]).unwrap()[0]);

        let plain = AnodeModel::new(Mlp::random(&[3, 4, 2], true, &mut rng).unwrap(), None, 2).unwrap();
        assert_eq!(plain.init(&[1.0, 2.0]).unwrap(), vec![1.0, 2.0]);
        assert_eq!(plain.augment_dim(), 0);

        let zero = AnodeModel::new(Mlp::with_zero_output(&[4, 4, 3], true, &mut rng).unwrap(), Some(init.clone()), 2).unwrap();
        assert_eq!(zero.rhs(9.0, &[1.0, 1.0, 1.0]).unwrap(), vec![0.0; 3]);

        let w = DMatrix::from_row_slice(2, 3, &[1.0, 1.0, 0.0, 0.0, 0.0, 2.0]);
        let lin = AnodeModel::new(Mlp::affine(&w, None).unwrap(), Some(Mlp::random(&[1, 2, 1], false, &mut rng).unwrap()), 1).unwrap();
        assert_eq!(lin.rhs(0.5, &[2.0, 3.0]).unwrap(), vec![2.5, 6.0]);
        assert!(AnodeModel::new(Mlp::random(&[4, 5, 3], true, &mut rng).unwrap(), None, 2).is_err());
    }

    #[test]
    fn cde_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let drift = Mlp::random(&[2, 4, 2], true, &mut rng).unwrap();
        let control = Mlp::random(&[2, 4, 4], true, &mut rng).unwrap();
        let m = CdeModel::new(drift.clone(), control, 2).unwrap();
        let x = [0.3, -0.2];
        assert_eq!(m.rhs(&x, &[0.0, 0.0]).unwrap(), drift.forward(&x).unwrap());

        let v = [1.25, -0.5];
        let r0 = m.rhs(&x, &[0.0, 0.0]).unwrap();
        let r1 = m.rhs(&x, &v).unwrap();
        let r2 = m.rhs(&x, &[2.0 * v[0], 2.0 * v[1]]).unwrap();
        for i in 0..2 {
            assert!(((r2[i] - r1[i]) - (r1[i] - r0[i])).abs() < 1e-14);
        }

        // zero drift; control emits the flattened identity for any x
        let zero_drift = Mlp::affine(&DMatrix::zeros(2, 2), None).unwrap();
        let ident = Mlp::affine(&DMatrix::zeros(4, 2), Some(vec![1.0, 0.0, 0.0, 1.0])).unwrap();
        let m = CdeModel::new(zero_drift, ident, 2).unwrap();
        assert_eq!(m.rhs(&[4.0, 5.0], &[0.3, -0.7]).unwrap(), vec![0.3, -0.7]);
        assert!(m.rhs(&[4.0, 5.0], &[0.3]).is_err());
    }

    #[test]
    fn param_count_matches_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = arch();
        for kind in ModelKind::ALL {
            let model = VectorFieldModel::build(kind, 3, 2, &a, &mut rng).unwrap();
            assert_eq!(model.param_count(), a.param_count(kind, 3, 2), "{kind}");
        }
        // hand count: icode, M=2, m=2, nets 3->6->6->3 with bias
        let per_net = 3 * 6 + 6 + 6 * 6 + 6 + 6 * 3 + 3;
        assert_eq!(a.param_count(ModelKind::Icode, 3, 2), 4 * per_net);
    }

    #[test]
    fn bundle_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for kind in ModelKind::ALL {
            let model = VectorFieldModel::build(kind, 2, 1, &arch(), &mut rng).unwrap();
            let text = model.to_json().unwrap();
            let v: serde_json::Value = serde_json::from_str(&text).unwrap();
            assert_eq!(v["kind"], kind.name());
            assert_eq!(v["n"], 2);
            assert_eq!(VectorFieldModel::from_json(&text).unwrap(), model);
        }
        let bad = r#"{"kind":"node","n":3,"m":0,"d_a":0,"nets":{"net":{"layers":[{"w":[[1.0,2.0]]}],"activation":"softplus"}}}"#;
        assert!(VectorFieldModel::from_json(bad).is_err());
    }
}
