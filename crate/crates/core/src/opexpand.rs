//! The rescaled operator around a base point and its model-operator expansion.
//!
//! In transverse gauge around `x0`, with `Z` the rescaled coordinate,
//! `𝓗_h = −Σ_j (∂_j − i A_j(hZ))² + V(x0 + hZ)`. Since `A_j(hZ) = Σ_r h^r A_{j,r}(Z)`,
//! expanding the square gives the model operators
//!
//! ```text
//! H⁽⁰⁾ = −Δ + V(x0)
//! H⁽ʳ⁾ = Σ_j [2i A_{j,r} ∂_j + i ∂_j A_{j,r} + Σ_{l=1}^{r−1} A_{j,l} A_{j,r−l}] + Σ_{|α|=r} ∂^αV(x0) Z^α/α!
//! ```
//!
//! All operators act on Gaussian-times-polynomial inputs whose derivatives
//! are exact.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gauge::{fock_schwinger_divergence, fock_schwinger_potential, loglog_slope, taylor_vector_potential};
use crate::linalg::C64;
use crate::model::{MagneticField, ScalarField};
use crate::poly::{multi_factorial, multi_indices, Poly};

const I: C64 = C64::new(0.0, 1.0);
const ONE: C64 = C64::new(1.0, 0.0);

/// `Σ_β c_β(Z) ∂^β` with polynomial coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyDiffOp {
    pub d: usize,
    pub terms: BTreeMap<Vec<u32>, Poly>,
}

impl PolyDiffOp {
    pub fn zero(d: usize) -> Self {
        Self { d, terms: BTreeMap::new() }
    }

    pub fn add_term(&mut self, beta: Vec<u32>, coeff: Poly) {
        let entry = self.terms.entry(beta).or_insert_with(|| Poly::zero(self.d));
        *entry = entry.add(&coeff);
        self.terms.retain(|_, p| !p.is_zero());
    }

    /// `-Σ ∂_j²`.
    pub fn neg_laplacian(d: usize) -> Self {
        let mut op = Self::zero(d);
        for j in 0..d {
            let mut beta = vec![0; d];
            beta[j] = 2;
            op.add_term(beta, Poly::constant(d, -ONE));
        }
        op
    }

    /// Highest `deg(c_β) + |β|` over the terms; 0 for the zero operator.
    pub fn weight(&self) -> u32 {
        self.terms
            .iter()
            .map(|(b, p)| b.iter().sum::<u32>() + p.degree().unwrap_or(0))
            .max()
            .unwrap_or(0)
    }

    pub fn order(&self) -> u32 {
        self.terms.keys().map(|b| b.iter().sum()).max().unwrap_or(0)
    }

    /// Coefficient of `∂^β`, zero if absent.
    pub fn coefficient(&self, beta: &[u32]) -> Poly {
        self.terms.get(beta).cloned().unwrap_or_else(|| Poly::zero(self.d))
    }
}

/// `u(Z) = P(Z) exp(−|Z|²/2)` with exact derivatives up to `max_order`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianInput {
    pub poly: Poly,
    pub max_order: u32,
}

impl GaussianInput {
    pub fn new(poly: Poly, max_order: u32) -> Self {
        Self { poly, max_order }
    }

    /// `Z^m exp(−|Z|²/2)`.
    pub fn monomial(m: Vec<u32>) -> Self {
        Self::new(Poly::monomial(m, ONE), 2)
    }

    pub fn gaussian(d: usize) -> Self {
        Self::monomial(vec![0; d])
    }

    fn envelope(z: &[f64]) -> f64 {
        (-0.5 * z.iter().map(|x| x * x).sum::<f64>()).exp()
    }

    /// Polynomial part of `∂^β u`, from `∂_j(P g) = (∂_j P − Z_j P) g`.
    fn derivative_poly(&self, beta: &[u32]) -> Poly {
        let d = self.poly.d;
        let mut p = self.poly.clone();
        for (j, &bj) in beta.iter().enumerate() {
            for _ in 0..bj {
                p = p.partial(j).add(&Poly::coord(d, j).mul(&p).scale(-ONE));
            }
        }
        p
    }

    pub fn derivative(&self, beta: &[u32], z: &[f64]) -> Result<C64> {
        let order: u32 = beta.iter().sum();
        if order > self.max_order {
            return Err(Error::DerivativeOrder { order: order as usize, max: self.max_order as usize });
        }
        Ok(self.derivative_poly(beta).eval(z) * Self::envelope(z))
    }

    pub fn eval(&self, z: &[f64]) -> C64 {
        self.poly.eval(z) * Self::envelope(z)
    }

    pub fn combine(&self, a: C64, other: &GaussianInput, b: C64) -> GaussianInput {
        GaussianInput::new(self.poly.scale(a).add(&other.poly.scale(b)), self.max_order.min(other.max_order))
    }
}

pub fn apply_polydiffop(op: &PolyDiffOp, u: &GaussianInput, z: &[f64]) -> Result<C64> {
    let mut total = C64::new(0.0, 0.0);
    for (beta, coeff) in &op.terms {
        total += coeff.eval(z) * u.derivative(beta, z)?;
    }
    Ok(total)
}

pub const MAX_MODEL_ORDER: u32 = 2;

/// `H⁽ʳ⁾` at `x0` for `r ∈ {0, 1, 2}`.
pub fn model_operator(r: u32, x0: &[f64], b: &MagneticField, v: &ScalarField) -> Result<PolyDiffOp> {
    if r > MAX_MODEL_ORDER {
        return Err(Error::UnsupportedOrder { order: r as usize, what: "model operator".into() });
    }
    model_operator_unchecked(r, x0, b, v)
}

fn model_operator_unchecked(r: u32, x0: &[f64], b: &MagneticField, v: &ScalarField) -> Result<PolyDiffOp> {
    let d = b.d;
    if r == 0 {
        let mut op = PolyDiffOp::neg_laplacian(d);
        op.add_term(vec![0; d], Poly::constant(d, C64::new(v.eval(x0), 0.0)));
        return Ok(op);
    }
    let terms: Vec<_> = (1..=r).map(|k| taylor_vector_potential(b, x0, k)).collect::<Result<_>>()?;
    let a = |j: usize, k: u32| &terms[(k - 1) as usize].comps[j];
    let mut op = PolyDiffOp::zero(d);
    let zero = vec![0; d];
    for j in 0..d {
        let mut beta = vec![0; d];
        beta[j] = 1;
        op.add_term(beta, a(j, r).scale(2.0 * I));
        op.add_term(zero.clone(), a(j, r).partial(j).scale(I));
        for l in 1..r {
            op.add_term(zero.clone(), a(j, l).mul(a(j, r - l)));
        }
    }
    for alpha in multi_indices(d, r) {
        let au: Vec<usize> = alpha.iter().map(|&x| x as usize).collect();
        let c = v.derivative(&au).eval(x0) / multi_factorial(&alpha);
        if c != 0.0 {
            op.add_term(zero.clone(), Poly::monomial(alpha, C64::new(c, 0.0)));
        }
    }
    Ok(op)
}

/// `(𝓗_h u)(Z)` with the transverse potential evaluated by quadrature.
pub fn rescaled_apply(b: &MagneticField, v: &ScalarField, x0: &[f64], h: f64, u: &GaussianInput, z: &[f64]) -> Result<C64> {
    let d = b.d;
    let hz: Vec<f64> = z.iter().map(|x| h * x).collect();
    let a = fock_schwinger_potential(b, x0, &hz);
    let div = h * fock_schwinger_divergence(b, x0, &hz);
    let x: Vec<f64> = x0.iter().zip(&hz).map(|(p, q)| p + q).collect();
    let u0 = u.eval(z);
    let mut total = u0 * (v.eval(&x) + a.iter().map(|t| t * t).sum::<f64>()) + I * div * u0;
    for j in 0..d {
        let mut beta = vec![0; d];
        beta[j] = 2;
        total -= u.derivative(&beta, z)?;
        beta[j] = 1;
        total += 2.0 * I * a[j] * u.derivative(&beta, z)?;
    }
    Ok(total)
}

/// The operator `𝓗_h` around `x0`, bundled for repeated application.
#[derive(Debug, Clone)]
pub struct RescaledOperator {
    pub x0: Vec<f64>,
    pub h: f64,
    pub field: MagneticField,
    pub potential: ScalarField,
}

impl RescaledOperator {
    pub fn new(b: &MagneticField, v: &ScalarField, x0: &[f64], h: f64) -> Result<Self> {
        if !(h > 0.0 && h <= 1.0) {
            return Err(Error::config("h", format!("h = {h} must lie in (0, 1]")));
        }
        Ok(Self { x0: x0.to_vec(), h, field: b.clone(), potential: v.clone() })
    }

    pub fn apply(&self, u: &GaussianInput, z: &[f64]) -> Result<C64> {
        rescaled_apply(&self.field, &self.potential, &self.x0, self.h, u, z)
    }
}

/// Outcome of one remainder-slope measurement.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OrderCheck {
    /// number of model operators subtracted beyond H⁽⁰⁾
    pub m: u32,
    pub h: Vec<f64>,
    pub remainder: Vec<f64>,
    pub slope: f64,
    /// remainder fell below 1e-13, so the slope is not resolved
    pub saturated: bool,
}

/// Slope of `sup_Z |𝓗_h u − Σ_{r≤m} h^r H⁽ʳ⁾ u|` against `h`.
pub fn expansion_order_check(
    b: &MagneticField,
    v: &ScalarField,
    x0: &[f64],
    u: &GaussianInput,
    h_ladder: &[f64],
    m: u32,
    samples: &[Vec<f64>],
) -> Result<OrderCheck> {
    if h_ladder.len() < 5 {
        return Err(Error::config("h_ladder", "need at least 5 values of h"));
    }
    let ops: Vec<PolyDiffOp> = (0..=m).map(|r| model_operator(r, x0, b, v)).collect::<Result<_>>()?;
    let mut remainder = Vec::with_capacity(h_ladder.len());
    for &h in h_ladder {
        let mut worst: f64 = 0.0;
        for z in samples {
            let mut value = rescaled_apply(b, v, x0, h, u, z)?;
            for (r, op) in ops.iter().enumerate() {
                value -= h.powi(r as i32) * apply_polydiffop(op, u, z)?;
            }
            worst = worst.max(value.norm());
        }
        remainder.push(worst);
    }
    let saturated = remainder.iter().any(|&r| r < 1e-13);
    let slope = if saturated { f64::NAN } else { loglog_slope(h_ladder, &remainder) };
    Ok(OrderCheck { m, h: h_ladder.to_vec(), remainder, slope, saturated })
}

/// The dyadic ladder `2^{-2} … 2^{-7}`.
pub fn dyadic_ladder() -> Vec<f64> {
    (2..=7).map(|k| 2f64.powi(-k)).collect()
}
