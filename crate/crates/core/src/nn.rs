//! Dense Softplus networks with exact reverse-mode derivatives, and Adam.
//!
//! Weights are stored row-major with shape `(out_dim, in_dim)`. Every layer
//! except the last is followed by Softplus; the last layer is affine so the
//! network can emit any real vector.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// `log(1 + exp(x))`, evaluated without overflow for large `|x|`.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Derivative of [`softplus`].
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    rows: usize,
    cols: usize,
    weights: Vec<f64>,
    bias: Option<Vec<f64>>,
}

impl Dense {
    pub fn new(rows: usize, cols: usize, weights: Vec<f64>, bias: Option<Vec<f64>>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::invalid("layer", "dimensions must be positive"));
        }
        check_dim("layer weights", rows * cols, weights.len())?;
        if let Some(b) = &bias {
            check_dim("layer bias", rows, b.len())?;
        }
        let finite = weights.iter().chain(bias.iter().flatten()).all(|v| v.is_finite());
        if !finite {
            return Err(Error::invalid("layer", "non-finite parameter"));
        }
        Ok(Self {
            rows,
            cols,
            weights,
            bias,
        })
    }

    /// Layer with every weight and bias set to zero.
    pub fn zeros(rows: usize, cols: usize, bias: bool) -> Self {
        Self {
            rows,
            cols,
            weights: vec![0.0; rows * cols],
            bias: bias.then(|| vec![0.0; rows]),
        }
    }

    /// Uniform init in `[-a, a]`, `a = sqrt(1 / fan_in)`.
    pub fn random<R: Rng + ?Sized>(rows: usize, cols: usize, bias: bool, rng: &mut R) -> Self {
        let a = (1.0 / cols as f64).sqrt();
        let mut draw = || rng.random_range(-a..=a);
        let weights = (0..rows * cols).map(|_| draw()).collect();
        let bias = bias.then(|| (0..rows).map(|_| draw()).collect());
        Self {
            rows,
            cols,
            weights,
            bias,
        }
    }

    pub fn from_matrix(m: &DMatrix<f64>, bias: Option<Vec<f64>>) -> Result<Self> {
        let weights = (0..m.nrows())
            .flat_map(|r| (0..m.ncols()).map(move |c| (r, c)))
            .map(|(r, c)| m[(r, c)])
            .collect();
        Self::new(m.nrows(), m.ncols(), weights, bias)
    }

    pub fn out_dim(&self) -> usize {
        self.rows
    }

    pub fn in_dim(&self) -> usize {
        self.cols
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn bias(&self) -> Option<&[f64]> {
        self.bias.as_deref()
    }

    pub fn bias_mut(&mut self) -> Option<&mut [f64]> {
        self.bias.as_deref_mut()
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.as_ref().map_or(0, Vec::len)
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = match &self.bias {
            Some(b) => b.clone(),
            None => vec![0.0; self.rows],
        };
        for (o, row) in out.iter_mut().zip(self.weights.chunks_exact(self.cols)) {
            *o += dot(row, x);
        }
        out
    }

    /// `Wᵀ δ`.
    fn apply_transpose(&self, delta: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for (&d, row) in delta.iter().zip(self.weights.chunks_exact(self.cols)) {
            if d != 0.0 {
                axpy(d, row, &mut out);
            }
        }
        out
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Dense>,
}

impl Mlp {
    pub fn new(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("network", "at least one layer is required"));
        }
        for pair in layers.windows(2) {
            check_dim("layer chaining", pair[0].out_dim(), pair[1].in_dim())?;
        }
        Ok(Self { layers })
    }

    /// Randomly initialised network through the widths in `dims`
    /// (`dims[0]` is the input dimension, the last entry the output).
    pub fn random<R: Rng + ?Sized>(dims: &[usize], bias: bool, rng: &mut R) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::invalid("network", format!("bad layer widths {dims:?}")));
        }
        let layers = dims
            .windows(2)
            .map(|w| Dense::random(w[1], w[0], bias, rng))
            .collect();
        Self::new(layers)
    }

    /// `dims` as for [`Mlp::random`], but the final layer is zeroed so the
    /// network starts out emitting the zero vector.
    pub fn with_zero_output<R: Rng + ?Sized>(dims: &[usize], bias: bool, rng: &mut R) -> Result<Self> {
        let mut net = Self::random(dims, bias, rng)?;
        let last = net.layers.last_mut().expect("non-empty");
        *last = Dense::zeros(last.rows, last.cols, bias);
        Ok(net)
    }

    /// Single affine layer `x ↦ A x (+ b)`.
    pub fn affine(a: &DMatrix<f64>, bias: Option<Vec<f64>>) -> Result<Self> {
        Self::new(vec![Dense::from_matrix(a, bias)?])
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Dense::param_count).sum()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim("network input", self.input_dim(), x.len())?;
        Ok(self.forward_unchecked(x))
    }

    pub(crate) fn forward_unchecked(&self, x: &[f64]) -> Vec<f64> {
        let last = self.layers.len() - 1;
        let mut a = self.layers[0].apply(x);
        for layer in &self.layers[1..] {
            a.iter_mut().for_each(|v| *v = softplus(*v));
            a = layer.apply(&a);
        }
        debug_assert_eq!(self.layers[last].out_dim(), a.len());
        a
    }

    /// Reverse-mode product: gradients of `⟨cotangent, f(x)⟩` with respect
    /// to the parameters and to `x`.
    pub fn vjp(&self, x: &[f64], cotangent: &[f64]) -> Result<(ParamGradient, Vec<f64>)> {
        check_dim("network input", self.input_dim(), x.len())?;
        check_dim("network cotangent", self.output_dim(), cotangent.len())?;
        let mut grad = ParamGradient::zeros_like(self);
        let dx = self.vjp_accumulate(x, cotangent, &mut grad);
        Ok((grad, dx))
    }

    /// As [`Mlp::vjp`], adding the parameter gradient into `grad`.
    pub(crate) fn vjp_accumulate(&self, x: &[f64], cotangent: &[f64], grad: &mut ParamGradient) -> Vec<f64> {
        // inputs[l] is the input of layer l; pre[l] its pre-activation.
        let mut inputs: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        let mut pre: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        let mut a = x.to_vec();
        for (l, layer) in self.layers.iter().enumerate() {
            let z = layer.apply(&a);
            inputs.push(a);
            if l + 1 < self.layers.len() {
                a = z.iter().map(|&v| softplus(v)).collect();
            } else {
                a = Vec::new();
            }
            pre.push(z);
        }

        let mut delta = cotangent.to_vec();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let g = &mut grad.layers[l];
            let input = &inputs[l];
            for (&d, grow) in delta.iter().zip(g.weights.chunks_exact_mut(layer.cols)) {
                if d != 0.0 {
                    axpy(d, input, grow);
                }
            }
            if let Some(gb) = g.bias.as_mut() {
                gb.iter_mut().zip(&delta).for_each(|(b, d)| *b += d);
            }
            let mut back = layer.apply_transpose(&delta);
            if l > 0 {
                back.iter_mut()
                    .zip(&pre[l - 1])
                    .for_each(|(b, &z)| *b *= sigmoid(z));
            }
            delta = back;
        }
        delta
    }

    /// Jacobian of the output with respect to the input; row `i` is the VJP
    /// with the `i`-th basis cotangent.
    pub fn input_jacobian(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        check_dim("network input", self.input_dim(), x.len())?;
        let (n_out, n_in) = (self.output_dim(), self.input_dim());
        let mut jac = DMatrix::zeros(n_out, n_in);
        let mut scratch = ParamGradient::zeros_like(self);
        let mut basis = vec![0.0; n_out];
        for i in 0..n_out {
            basis[i] = 1.0;
            let row = self.vjp_accumulate(x, &basis, &mut scratch);
            basis[i] = 0.0;
            for (j, v) in row.into_iter().enumerate() {
                jac[(i, j)] = v;
            }
        }
        Ok(jac)
    }

    /// Every parameter slice (weights then bias, layer by layer).
    pub fn param_slices_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.layers.iter_mut().flat_map(|l| {
            std::iter::once(l.weights.as_mut_slice()).chain(l.bias.as_deref_mut())
        })
    }

    pub fn param_slices(&self) -> impl Iterator<Item = &[f64]> {
        self.layers
            .iter()
            .flat_map(|l| std::iter::once(l.weights.as_slice()).chain(l.bias.as_deref()))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Partial derivatives of a scalar with respect to the parameters of an
/// [`Mlp`], laid out layer by layer like the network.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGradient {
    layers: Vec<LayerGradient>,
}

#[derive(Debug, Clone, PartialEq)]
struct LayerGradient {
    weights: Vec<f64>,
    bias: Option<Vec<f64>>,
}

impl ParamGradient {
    pub fn zeros_like(net: &Mlp) -> Self {
        let layers = net
            .layers
            .iter()
            .map(|l| LayerGradient {
                weights: vec![0.0; l.weights.len()],
                bias: l.bias.as_ref().map(|b| vec![0.0; b.len()]),
            })
            .collect();
        Self { layers }
    }

    pub fn is_congruent(&self, net: &Mlp) -> bool {
        self.layers.len() == net.layers.len()
            && self.layers.iter().zip(&net.layers).all(|(g, l)| {
                g.weights.len() == l.weights.len()
                    && g.bias.as_ref().map(Vec::len) == l.bias.as_ref().map(Vec::len)
            })
    }

    pub fn slices(&self) -> impl Iterator<Item = &[f64]> {
        self.layers
            .iter()
            .flat_map(|l| std::iter::once(l.weights.as_slice()).chain(l.bias.as_deref()))
    }

    pub fn slices_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.layers.iter_mut().flat_map(|l| {
            std::iter::once(l.weights.as_mut_slice()).chain(l.bias.as_deref_mut())
        })
    }

    /// Flattened copy in [`Mlp::param_slices`] order.
    pub fn to_flat(&self) -> Vec<f64> {
        self.slices().flatten().copied().collect()
    }

    pub fn add_assign(&mut self, other: &ParamGradient) {
        for (a, b) in self.slices_mut().zip(other.slices()) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for s in self.slices_mut() {
            s.iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.slices().flatten().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamConfig {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    first: ParamGradient,
    second: ParamGradient,
}

impl AdamState {
    pub fn new(config: AdamConfig, net: &Mlp) -> Self {
        Self {
            config,
            step: 0,
            first: ParamGradient::zeros_like(net),
            second: ParamGradient::zeros_like(net),
        }
    }

    /// Bias-corrected Adam update applied in place.
    pub fn update(&mut self, params: &mut Mlp, grads: &ParamGradient) -> Result<()> {
        if !grads.is_congruent(params) || !self.first.is_congruent(params) {
            return Err(Error::invalid("adam update", "gradient shape does not match network"));
        }
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        let slices = params
            .param_slices_mut()
            .zip(grads.slices())
            .zip(self.first.slices_mut().zip(self.second.slices_mut()));
        for ((p, g), (m, v)) in slices {
            for i in 0..p.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}

/// Pure form of [`AdamState::update`].
pub fn adam_step(state: &AdamState, params: &Mlp, grads: &ParamGradient) -> Result<(AdamState, Mlp)> {
    let mut state = state.clone();
    let mut params = params.clone();
    state.update(&mut params, grads)?;
    Ok((state, params))
}

#[derive(Serialize, Deserialize)]
struct MlpDoc {
    layers: Vec<LayerDoc>,
    activation: String,
}

#[derive(Serialize, Deserialize)]
struct LayerDoc {
    w: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    b: Option<Vec<f64>>,
}

impl Serialize for Mlp {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let layers = self
            .layers
            .iter()
            .map(|l| LayerDoc {
                w: l.weights.chunks_exact(l.cols).map(<[f64]>::to_vec).collect(),
                b: l.bias.clone(),
            })
            .collect();
        MlpDoc {
            layers,
            activation: "softplus".into(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Mlp {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let doc = MlpDoc::deserialize(d)?;
        if doc.activation != "softplus" {
            return Err(D::Error::custom(format!("unsupported activation {:?}", doc.activation)));
        }
        let layers = doc
            .layers
            .into_iter()
            .map(|l| {
                let rows = l.w.len();
                let cols = l.w.first().map_or(0, Vec::len);
                if l.w.iter().any(|r| r.len() != cols) {
                    return Err(Error::invalid("layer", "ragged weight matrix"));
                }
                Dense::new(rows, cols, l.w.concat(), l.b)
            })
            .collect::<Result<Vec<_>>>()
            .map_err(D::Error::custom)?;
        Mlp::new(layers).map_err(D::Error::custom)
    }
}
