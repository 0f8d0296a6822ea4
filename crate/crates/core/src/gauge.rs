//! Transverse (Fock–Schwinger) gauge around a base point.
//!
//! For a base point `x0` the potential
//! `A_j(Z) = Σ_k (∫₀¹ B_{kj}(x0 + τZ) τ dτ) Z_k` vanishes at `Z = 0` and is
//! orthogonal to the radial direction. It differs from any periodic `A` with
//! `dA = B` by the gradient of the phase `Φ(Z) = −Σ_j ∫₀¹ A_j(x0 + τZ) Z_j dτ`.
//! Its Taylor components are read off from derivatives of `B` at `x0`.

use std::sync::OnceLock;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::C64;
use crate::model::{MagneticField, VectorPotential};
use crate::poly::{multi_factorial, multi_indices, Poly};
use crate::quad::GaussLegendre;

/// Fixed 16-point rule on `[0, 1]` for all τ-integrals.
fn tau_rule() -> &'static [(f64, f64)] {
    static RULE: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
    RULE.get_or_init(|| GaussLegendre::new(16).on(0.0, 1.0))
}

fn shifted(x0: &[f64], tau: f64, z: &[f64]) -> Vec<f64> {
    x0.iter().zip(z).map(|(a, b)| a + tau * b).collect()
}

/// `A^{(x0)}(Z)`.
pub fn fock_schwinger_potential(b: &MagneticField, x0: &[f64], z: &[f64]) -> Vec<f64> {
    let d = b.d;
    let mut moments = vec![vec![0.0; d]; d];
    for &(tau, w) in tau_rule() {
        let x = shifted(x0, tau, z);
        for (k, row) in moments.iter_mut().enumerate() {
            for (j, m) in row.iter_mut().enumerate() {
                if j != k {
                    *m += w * tau * b.eval(k, j, &x);
                }
            }
        }
    }
    (0..d).map(|j| (0..d).map(|k| moments[k][j] * z[k]).sum()).collect()
}

/// `Σ_j ∂A_j^{(x0)}/∂Z_j` at `Z`, equal to `Σ_{jk} ∫₀¹ τ² ∂_j B_{kj}(x0 + τZ) dτ Z_k`.
pub fn fock_schwinger_divergence(b: &MagneticField, x0: &[f64], z: &[f64]) -> f64 {
    let d = b.d;
    let mut total = 0.0;
    for j in 0..d {
        for k in 0..d {
            if j == k || z[k] == 0.0 {
                continue;
            }
            let f = b.component(k, j).partial(j);
            let s: f64 = tau_rule().iter().map(|&(tau, w)| w * tau * tau * f.eval(&shifted(x0, tau, z))).sum();
            total += s * z[k];
        }
    }
    total
}

/// `Φ^{(x0)}(Z)`.
pub fn gauge_phase(a: &VectorPotential, x0: &[f64], z: &[f64]) -> f64 {
    let mut phi = 0.0;
    for &(tau, w) in tau_rule() {
        let x = shifted(x0, tau, z);
        phi -= w * a.comps.iter().zip(z).map(|(aj, zj)| aj.eval(&x) * zj).sum::<f64>();
    }
    phi
}

/// The transverse potential around a fixed base point.
#[derive(Debug, Clone)]
pub struct TransversePotential {
    pub x0: Vec<f64>,
    pub field: MagneticField,
}

impl TransversePotential {
    pub fn new(field: &MagneticField, x0: &[f64]) -> Self {
        Self { x0: x0.to_vec(), field: field.clone() }
    }

    pub fn eval(&self, z: &[f64]) -> Vec<f64> {
        fock_schwinger_potential(&self.field, &self.x0, z)
    }

    pub fn divergence(&self, z: &[f64]) -> f64 {
        fock_schwinger_divergence(&self.field, &self.x0, z)
    }
}

/// Homogeneous degree-`order` part of `Z ↦ A^{(x0)}(Z)`.
#[derive(Debug, Clone)]
pub struct HomogeneousTaylorTerm {
    pub order: u32,
    pub x0: Vec<f64>,
    pub comps: Vec<Poly>,
}

impl HomogeneousTaylorTerm {
    pub fn eval(&self, z: &[f64]) -> Vec<f64> {
        self.comps.iter().map(|p| p.eval(z).re).collect()
    }
}

pub const MAX_TAYLOR_ORDER: u32 = 4;

/// `A_{j,r}(Z) = (1/(r+1)) Σ_{|α|=r−1} Σ_k ∂^α B_{kj}(x0) Z_k Z^α / α!`.
pub fn taylor_vector_potential(b: &MagneticField, x0: &[f64], r: u32) -> Result<HomogeneousTaylorTerm> {
    if !(1..=MAX_TAYLOR_ORDER).contains(&r) {
        return Err(Error::UnsupportedOrder { order: r as usize, what: "Taylor term of the transverse potential".into() });
    }
    let d = b.d;
    let mut comps = vec![Poly::zero(d); d];
    for alpha in multi_indices(d, r - 1) {
        let alpha_us: Vec<usize> = alpha.iter().map(|&a| a as usize).collect();
        let weight = 1.0 / ((r + 1) as f64 * multi_factorial(&alpha));
        for (j, comp) in comps.iter_mut().enumerate() {
            for k in 0..d {
                if k == j {
                    continue;
                }
                let c = b.component(k, j).derivative(&alpha_us).eval(x0) * weight;
                if c == 0.0 {
                    continue;
                }
                let mut e = alpha.clone();
                e[k] += 1;
                comp.add_term(e, C64::new(c, 0.0));
            }
        }
    }
    Ok(HomogeneousTaylorTerm { order: r, x0: x0.to_vec(), comps })
}

/// Summary of the gauge invariants at random samples.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GaugeInvariants {
    pub samples: usize,
    /// max |Σ Z_j A_j| / (|Z| |A|)
    pub transversality: f64,
    /// max |A(x0+Z) + ∇Φ(Z) − A^{(x0)}(Z)|, gradient by finite differences
    pub gauge_consistency: f64,
    /// per order r = 1..=3, max relative error of the Taylor term against a small-Z fit
    pub taylor_fit_error: Vec<f64>,
    /// per m = 1..=3, observed truncation order of Σ_{r≤m} A_r
    pub truncation_order: Vec<f64>,
    /// max relative homogeneity defect |A_r(λZ) − λ^r A_r(Z)|
    pub homogeneity: f64,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn random_unit<R: Rng>(rng: &mut R, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let n = norm(&v);
        if n > 0.1 && n <= 1.0 {
            return v.iter().map(|x| x / n).collect();
        }
    }
}

fn random_point<R: Rng>(rng: &mut R, periods: &[f64]) -> Vec<f64> {
    periods.iter().map(|&l| rng.gen_range(0.0..l)).collect()
}

/// Transversality ratio at one sample.
pub fn transversality_ratio(b: &MagneticField, x0: &[f64], z: &[f64]) -> f64 {
    let a = fock_schwinger_potential(b, x0, z);
    let dotp: f64 = a.iter().zip(z).map(|(x, y)| x * y).sum();
    let scale = norm(z) * norm(&a);
    if scale == 0.0 {
        dotp.abs()
    } else {
        dotp.abs() / scale
    }
}

/// `max_j |A_j(x0+Z) + ∂_jΦ(Z) − A^{(x0)}_j(Z)|` with a fourth-order central difference.
pub fn gauge_consistency_defect(b: &MagneticField, a: &VectorPotential, x0: &[f64], z: &[f64]) -> f64 {
    let d = b.d;
    let h = 1e-3;
    let at = a.eval(&shifted(x0, 1.0, z));
    let afs = fock_schwinger_potential(b, x0, z);
    let mut worst: f64 = 0.0;
    for j in 0..d {
        let phase_at = |s: f64| {
            let mut zz = z.to_vec();
            zz[j] += s;
            gauge_phase(a, x0, &zz)
        };
        let grad = (8.0 * (phase_at(h) - phase_at(-h)) - (phase_at(2.0 * h) - phase_at(-2.0 * h))) / (12.0 * h);
        worst = worst.max((at[j] + grad - afs[j]).abs());
    }
    worst
}

/// Fit `s ↦ A^{(x0)}(s u)` on `s ∈ ±{2^{-3}, …, 2^{-8}}` by an exact interpolating
/// polynomial and return its coefficients of `s^1..=s^max_order` per component.
pub fn small_z_fit(b: &MagneticField, x0: &[f64], u: &[f64], max_order: usize) -> Vec<Vec<f64>> {
    let d = b.d;
    let s0 = 0.125;
    let mut nodes = Vec::new();
    for k in 3..=8 {
        let s = 2f64.powi(-k);
        nodes.push(s);
        nodes.push(-s);
    }
    let m = nodes.len();
    // Vandermonde in the scaled variable t = s / s0 for conditioning.
    let mut out = vec![vec![0.0; d]; max_order];
    let vals: Vec<Vec<f64>> = nodes
        .iter()
        .map(|&s| fock_schwinger_potential(b, x0, &u.iter().map(|x| x * s).collect::<Vec<_>>()))
        .collect();
    for j in 0..d {
        let mut a = vec![vec![0.0; m + 1]; m];
        for (i, &s) in nodes.iter().enumerate() {
            let t = s / s0;
            for (p, cell) in a[i].iter_mut().take(m).enumerate() {
                *cell = t.powi(p as i32);
            }
            a[i][m] = vals[i][j];
        }
        let coef = gauss_solve(a);
        for r in 1..=max_order {
            out[r - 1][j] = coef[r] / s0.powi(r as i32);
        }
    }
    out
}

/// Dense real solve by Gaussian elimination with partial pivoting on an augmented matrix.
fn gauss_solve(mut a: Vec<Vec<f64>>) -> Vec<f64> {
    let n = a.len();
    for k in 0..n {
        let p = (k..n).max_by(|&x, &y| a[x][k].abs().total_cmp(&a[y][k].abs())).expect("rows");
        a.swap(k, p);
        for i in k + 1..n {
            let f = a[i][k] / a[k][k];
            if f != 0.0 {
                for j in k..=n {
                    a[i][j] -= f * a[k][j];
                }
            }
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|j| a[i][j] * x[j]).sum();
        x[i] = (a[i][n] - s) / a[i][i];
    }
    x
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// Evaluate every gauge invariant at `samples` random base points and directions.
pub fn gauge_invariants<R: Rng>(b: &MagneticField, samples: usize, rng: &mut R) -> Result<GaugeInvariants> {
    let a = b.vector_potential();
    let periods = b.periods().to_vec();
    let d = b.d;
    let mut out = GaugeInvariants {
        samples,
        transversality: 0.0,
        gauge_consistency: 0.0,
        taylor_fit_error: vec![0.0; 3],
        truncation_order: vec![f64::INFINITY; 3],
        homogeneity: 0.0,
    };
    for i in 0..samples {
        let x0 = random_point(rng, &periods);
        let u = random_unit(rng, d);
        let radius = rng.gen_range(0.05..1.0);
        let z: Vec<f64> = u.iter().map(|x| x * radius).collect();
        out.transversality = out.transversality.max(transversality_ratio(b, &x0, &z));
        // The costlier checks run on a subset of the samples.
        if i % 5 != 0 {
            continue;
        }
        out.gauge_consistency = out.gauge_consistency.max(gauge_consistency_defect(b, &a, &x0, &z));
        let terms: Vec<HomogeneousTaylorTerm> =
            (1..=3).map(|r| taylor_vector_potential(b, &x0, r)).collect::<Result<_>>()?;
        let fit = small_z_fit(b, &x0, &u, 3);
        for (r, term) in terms.iter().enumerate() {
            let exact = term.eval(&u);
            let scale = norm(&exact).max(1e-12);
            let err = norm(&exact.iter().zip(&fit[r]).map(|(x, y)| x - y).collect::<Vec<_>>()) / scale;
            out.taylor_fit_error[r] = out.taylor_fit_error[r].max(err);
            let lam = 0.7;
            let scaled = term.eval(&u.iter().map(|x| x * lam).collect::<Vec<_>>());
            let hom: f64 = exact
                .iter()
                .zip(&scaled)
                .map(|(e, s)| (s - lam.powi(term.order as i32) * e).abs())
                .fold(0.0, f64::max);
            out.homogeneity = out.homogeneity.max(hom / scale);
        }
        // Remainders are taken as a sup over several directions so that an
        // accidental cancellation along one ray cannot fake a low order.
        let dirs: Vec<Vec<f64>> = (0..6).map(|_| random_unit(rng, d)).collect();
        for m in 1..=3 {
            let radii: Vec<f64> = (4..=9).map(|k| 2f64.powi(-k)).collect();
            let rems: Vec<f64> = radii
                .iter()
                .map(|&s| {
                    dirs.iter()
                        .map(|dir| {
                            let zz: Vec<f64> = dir.iter().map(|x| x * s).collect();
                            let full = fock_schwinger_potential(b, &x0, &zz);
                            let mut partial = vec![0.0; d];
                            for t in &terms[..m] {
                                for (p, v) in partial.iter_mut().zip(t.eval(&zz)) {
                                    *p += v;
                                }
                            }
                            norm(&full.iter().zip(&partial).map(|(x, y)| x - y).collect::<Vec<_>>())
                        })
                        .fold(0.0, f64::max)
                })
                .collect();
            if rems.iter().all(|&r| r > 1e-14) {
                let slope = loglog_slope(&radii, &rems);
                out.truncation_order[m - 1] = out.truncation_order[m - 1].min(slope);
            }
        }
    }
    Ok(out)
}
