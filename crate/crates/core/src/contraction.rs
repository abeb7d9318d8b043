//! Sample-based contraction checks for ICODE models.
//!
//! An ICODE `ẋ = Σ fᵢ(x) + Σ kⱼ(x) uⱼ` is contracting with rate `c` when
//! `λ_max((J + Jᵀ)/2) ≤ −c` for all `(x, u)`, with
//! `J = Σ ∂fᵢ/∂x + Σ uⱼ ∂kⱼ/∂x`. Under a constant metric `M = LᵀL` the
//! condition applies to `R = L J L⁻¹` instead.

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::fields::IcodeModel;
use crate::rng::{stream, Purpose};

/// `Σᵢ ∂fᵢ/∂x + Σⱼ uⱼ ∂kⱼ/∂x` at `(x, u)`.
pub fn model_jacobian(model: &IcodeModel, x: &[f64], u: &[f64]) -> Result<DMatrix<f64>> {
    check_dim("jacobian state", model.state_dim(), x.len())?;
    check_dim("jacobian input", model.input_dim(), u.len())?;
    let n = x.len();
    let mut j = DMatrix::zeros(n, n);
    for f in model.f_nets() {
        j += f.input_jacobian(x)?;
    }
    for (k, &uj) in model.k_nets().iter().zip(u) {
        if uj != 0.0 {
            j += k.input_jacobian(x)? * uj;
        }
    }
    Ok(j)
}

/// Eigenvalues of `(A + Aᵀ)/2` in ascending order, by cyclic Jacobi
/// rotations until the off-diagonal norm is below `1e-12 · max(1, ‖A‖)`.
pub fn symmetric_eigenvalues(a: &DMatrix<f64>) -> Result<Vec<f64>> {
    if !a.is_square() {
        return Err(Error::invalid("matrix", format!("need a square matrix, got {}x{}", a.nrows(), a.ncols())));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("matrix", "entries must be finite"));
    }
    let n = a.nrows();
    let mut s = (a + a.transpose()) * 0.5;
    let tol = 1e-12 * s.norm().max(1.0);
    let off = |s: &DMatrix<f64>| -> f64 {
        let mut acc = 0.0;
        for p in 0..n {
            for q in 0..n {
                if p != q {
                    acc += s[(p, q)] * s[(p, q)];
                }
            }
        }
        acc.sqrt()
    };
    let mut sweeps = 0;
    while off(&s) >= tol {
        sweeps += 1;
        if sweeps > 100 {
            return Err(Error::invalid("jacobi eigen-solver", "no convergence after 100 sweeps"));
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = s[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (s[(q, q)] - s[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * c;
                for k in 0..n {
                    let skp = s[(k, p)];
                    let skq = s[(k, q)];
                    s[(k, p)] = c * skp - sn * skq;
                    s[(k, q)] = sn * skp + c * skq;
                }
                for k in 0..n {
                    let spk = s[(p, k)];
                    let sqk = s[(q, k)];
                    s[(p, k)] = c * spk - sn * sqk;
                    s[(q, k)] = sn * spk + c * sqk;
                }
            }
        }
    }
    let mut eig: Vec<f64> = (0..n).map(|i| s[(i, i)]).collect();
    eig.sort_by(f64::total_cmp);
    Ok(eig)
}

/// Largest eigenvalue of the symmetric part of `a`.
pub fn symmetric_max_eig(a: &DMatrix<f64>) -> Result<f64> {
    let eig = symmetric_eigenvalues(a)?;
    eig.last()
        .copied()
        .ok_or_else(|| Error::invalid("matrix", "empty matrix has no eigenvalues"))
}

/// Constant transformation `L` of the metric `M = LᵀL`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantMetric {
    l: DMatrix<f64>,
    l_inv: DMatrix<f64>,
    condition: f64,
}

impl ConstantMetric {
    pub fn new(l: DMatrix<f64>) -> Result<Self> {
        if !l.is_square() || l.nrows() == 0 {
            return Err(Error::invalid("metric transformation", "L must be square and non-empty"));
        }
        let sv = l.clone().singular_values();
        let (smax, smin) = (sv.max(), sv.min());
        let condition = smax / smin;
        if !(condition.is_finite() && smin > 0.0) {
            return Err(Error::invalid("metric transformation", "L is singular"));
        }
        let l_inv = l
            .clone()
            .lu()
            .try_inverse()
            .ok_or_else(|| Error::invalid("metric transformation", "L is singular"))?;
        Ok(Self { l, l_inv, condition })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            l: DMatrix::identity(n, n),
            l_inv: DMatrix::identity(n, n),
            condition: 1.0,
        }
    }

    pub fn l(&self) -> &DMatrix<f64> {
        &self.l
    }

    pub fn l_inverse(&self) -> &DMatrix<f64> {
        &self.l_inv
    }

    /// `M = LᵀL`.
    pub fn metric(&self) -> DMatrix<f64> {
        self.l.transpose() * &self.l
    }

    pub fn condition_number(&self) -> f64 {
        self.condition
    }

    /// `λ_max((R + Rᵀ)/2)` with `R = L J L⁻¹`.
    pub fn transformed_max_eig(&self, jacobian: &DMatrix<f64>) -> Result<f64> {
        check_dim("metric dimension", self.l.nrows(), jacobian.nrows())?;
        symmetric_max_eig(&(&self.l * jacobian * &self.l_inv))
    }
}

/// `λ_max` of the symmetric part of `L J(x, u) L⁻¹`.
pub fn metric_transformed_max_eig(model: &IcodeModel, metric: &ConstantMetric, x: &[f64], u: &[f64]) -> Result<f64> {
    metric.transformed_max_eig(&model_jacobian(model, x, u)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    CertifiedOnSamples,
    Violated,
}

/// Outcome of a contraction scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionReport {
    pub samples: usize,
    pub c_required: f64,
    pub worst_lambda: f64,
    /// `−worst_lambda`.
    pub margin: f64,
    pub witness_x: Vec<f64>,
    pub witness_u: Vec<f64>,
    pub verdict: Verdict,
    pub note: String,
}

const PRIMES: [u32; 64] = [
    2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89, 97, 101, 103, 107,
    109, 113, 127, 131, 137, 139, 149, 151, 157, 163, 167, 173, 179, 181, 191, 193, 197, 199, 211, 223, 227, 229,
    233, 239, 241, 251, 257, 263, 269, 271, 277, 281, 283, 293, 307, 311,
];

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while i > 0 {
        r += f * (i % base) as f64;
        i /= base;
        f *= inv;
    }
    r
}

fn nth_prime(k: usize) -> u64 {
    if let Some(&p) = PRIMES.get(k) {
        return p as u64;
    }
    let mut count = PRIMES.len();
    let mut c = *PRIMES.last().unwrap() as u64;
    loop {
        c += 2;
        if (2..).take_while(|d| d * d <= c).all(|d| c % d != 0) {
            if count == k {
                return c;
            }
            count += 1;
        }
    }
}

/// Points of a Halton sequence in `[0,1)^dim`, rotated by a seeded
/// Cranley–Patterson shift.
pub fn halton_points(dim: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = stream(seed, Purpose::Sampling, 0);
    let shift: Vec<f64> = (0..dim).map(|_| rng.random::<f64>()).collect();
    let bases: Vec<u64> = (0..dim).map(nth_prime).collect();
    (0..count)
        .map(|i| {
            bases
                .iter()
                .zip(&shift)
                .map(|(&b, &s)| {
                    let v = radical_inverse(i as u64 + 1, b) + s;
                    v - v.floor()
                })
                .collect()
        })
        .collect()
}

fn check_box(what: &'static str, b: &[(f64, f64)]) -> Result<()> {
    if b.iter().all(|&(lo, hi)| lo.is_finite() && hi.is_finite() && lo <= hi) {
        Ok(())
    } else {
        Err(Error::invalid(what, "every interval needs finite lo <= hi"))
    }
}

/// Evaluates the symmetric-part spectrum on `samples` low-discrepancy points
/// of `state_box × input_box` and reports the worst case. Ties go to the
/// smallest sample index.
pub fn contraction_scan(
    model: &IcodeModel,
    metric: Option<&ConstantMetric>,
    state_box: &[(f64, f64)],
    input_box: &[(f64, f64)],
    samples: usize,
    c_required: f64,
    seed: u64,
) -> Result<ContractionReport> {
    check_dim("state box", model.state_dim(), state_box.len())?;
    check_dim("input box", model.input_dim(), input_box.len())?;
    check_box("state box", state_box)?;
    check_box("input box", input_box)?;
    if samples == 0 {
        return Err(Error::invalid("contraction scan", "samples must be > 0"));
    }
    if !c_required.is_finite() {
        return Err(Error::invalid("contraction scan", "c_required must be finite"));
    }
    let n = state_box.len();
    let points = halton_points(n + input_box.len(), samples, seed);
    let scale = |unit: &[f64], b: &[(f64, f64)]| -> Vec<f64> {
        unit.iter().zip(b).map(|(s, &(lo, hi))| lo + s * (hi - lo)).collect()
    };
    let lambdas: Vec<Result<f64>> = points
        .par_iter()
        .map(|p| {
            let x = scale(&p[..n], state_box);
            let u = scale(&p[n..], input_box);
            let j = model_jacobian(model, &x, &u)?;
            match metric {
                Some(m) => m.transformed_max_eig(&j),
                None => symmetric_max_eig(&j),
            }
        })
        .collect();
    let mut worst = (0usize, f64::NEG_INFINITY);
    for (i, l) in lambdas.into_iter().enumerate() {
        let l = l?;
        if l > worst.1 {
            worst = (i, l);
        }
    }
    let (idx, worst_lambda) = worst;
    let verdict = if worst_lambda > -c_required {
        Verdict::Violated
    } else {
        Verdict::CertifiedOnSamples
    };
    Ok(ContractionReport {
        samples,
        c_required,
        worst_lambda,
        margin: -worst_lambda,
        witness_x: scale(&points[idx][..n], state_box),
        witness_u: scale(&points[idx][n..], input_box),
        verdict,
        note: format!(
            "sample-based check over {samples} Halton points of the given boxes; a falsifier and estimate, not a proof for all (x, u)"
        ),
    })
}
