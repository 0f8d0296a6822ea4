//! Helffer–Sjöstrand functional calculus for Hermitian matrices.
//!
//! `φ(H) = −(1/π) ∫_ℂ ∂̄φ̃(λ) (λ − H)^{−1} dμ dν` with the truncated-Taylor
//! extension `φ̃(x+iy) = χ(y/δ) Σ_{k≤N} φ^{(k)}(x) (iy)^k / k!`. Since φ is
//! real, `φ̃(λ̄) = conj φ̃(λ)`, so the lower half-plane contributes the
//! adjoint of the upper one and only `y > 0` is sampled for matrices.

use rayon::prelude::*;

use crate::eig::{tridiagonalize, Tridiagonal};
use crate::error::{Error, Result};
use crate::linalg::{CMatrix, C64};
use crate::model::{TestFunction, MAX_DERIVATIVE};
use crate::quad::GaussLegendre;

/// Highest extension order; `∂̄φ̃` needs `φ^{(N+1)}`.
pub const MAX_EXTENSION_ORDER: usize = MAX_DERIVATIVE - 1;

/// Smooth cutoff, 1 on `[−½, ½]`, 0 outside `(−1, 1)`, and its derivative.
pub fn cutoff(s: f64) -> (f64, f64) {
    let a = s.abs();
    if a <= 0.5 {
        return (1.0, 0.0);
    }
    if a >= 1.0 {
        return (0.0, 0.0);
    }
    let (u, v) = (1.0 - a, a - 0.5);
    // χ = 1 / (1 + e^t), t = 1/u − 1/v
    let t = 1.0 / u - 1.0 / v;
    if t > 700.0 {
        return (0.0, 0.0);
    }
    if t < -700.0 {
        return (1.0, 0.0);
    }
    let e = t.exp();
    let val = 1.0 / (1.0 + e);
    let dval = -(1.0 / (1.0 / e + 2.0 + e)) * (1.0 / (u * u) + 1.0 / (v * v));
    (val, dval * s.signum())
}

#[derive(Debug, Clone)]
pub struct AlmostAnalyticExtension {
    pub phi: TestFunction,
    pub order: usize,
    pub delta: f64,
}

pub fn build_extension(phi: &TestFunction, order: usize, delta: f64) -> Result<AlmostAnalyticExtension> {
    if order > MAX_EXTENSION_ORDER {
        return Err(Error::DerivativeOrder { order: order + 1, max: MAX_DERIVATIVE });
    }
    if !(delta.is_finite() && delta > 0.0) {
        return Err(Error::config("hs.delta", format!("strip half-width {delta} must be positive")));
    }
    Ok(AlmostAnalyticExtension { phi: phi.clone(), order, delta })
}

impl AlmostAnalyticExtension {
    fn derivs(&self, x: f64) -> Vec<f64> {
        (0..=self.order + 1).map(|k| self.phi.deriv(x, k).expect("order checked at build")).collect()
    }

    fn taylor(&self, ders: &[f64], y: f64) -> C64 {
        let mut term = C64::new(1.0, 0.0);
        let mut sum = C64::new(0.0, 0.0);
        for (k, d) in ders.iter().take(self.order + 1).enumerate() {
            if k > 0 {
                term *= C64::new(0.0, y) / k as f64;
            }
            sum += term * d;
        }
        sum
    }

    pub fn eval(&self, x: f64, y: f64) -> C64 {
        let (chi, _) = cutoff(y / self.delta);
        if chi == 0.0 {
            return C64::new(0.0, 0.0);
        }
        self.taylor(&self.derivs(x), y) * chi
    }

    /// `∂̄φ̃ = ½[χ φ^{(N+1)} (iy)^N / N! + i χ′(y/δ)/δ · Σ_{k≤N} φ^{(k)} (iy)^k / k!]`.
    pub fn dbar(&self, x: f64, y: f64) -> C64 {
        let (chi, dchi) = cutoff(y / self.delta);
        if chi == 0.0 && dchi == 0.0 {
            return C64::new(0.0, 0.0);
        }
        let ders = self.derivs(x);
        let n = self.order;
        let iy_n = C64::new(0.0, y).powu(n as u32) / crate::poly::factorial(n as u32);
        let taylor_term = iy_n * ders[n + 1] * chi;
        let cut_term = C64::new(0.0, dchi / self.delta) * self.taylor(&ders, y);
        0.5 * (taylor_term + cut_term)
    }
}

/// Tensor Gauss–Legendre rule on `supp φ × (0, δ]`.
///
/// The x-range is cut into `x_panels` equal panels and the y-range into
/// `[δ/2, δ]` (where the cutoff varies) plus `y_levels` dyadic panels
/// `[2^{−j−1}, 2^{−j}]·δ/2` and a last panel down to 0; every panel gets
/// `quad_n` nodes. With `x_panels = 1, y_levels = 0` this is a plain
/// product rule with `quad_n` nodes in x and `2·quad_n` in y.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HsQuadrature {
    pub quad_n: usize,
    pub x_panels: usize,
    pub y_levels: usize,
}

impl Default for HsQuadrature {
    fn default() -> Self {
        Self { quad_n: 60, x_panels: 8, y_levels: 0 }
    }
}

impl HsQuadrature {
    pub fn plain(quad_n: usize) -> Self {
        Self { quad_n, x_panels: 1, y_levels: 0 }
    }

    /// Same panels with twice the nodes per panel.
    pub fn refined(self) -> Self {
        Self { quad_n: 2 * self.quad_n, ..self }
    }
}

/// One upper half-plane node: `λ = x + iy`, weight, and `∂̄φ̃(λ)`.
#[derive(Debug, Clone, Copy)]
pub struct HsNode {
    pub lambda: C64,
    pub weight: f64,
    pub dbar: C64,
}

/// Nodes grouped by x-panel so parallel partial sums have a fixed shape.
pub fn hs_nodes(ext: &AlmostAnalyticExtension, quad: HsQuadrature) -> Vec<Vec<HsNode>> {
    let (a, b) = ext.phi.support();
    let gl = GaussLegendre::new(quad.quad_n.max(1));
    let half = 0.5 * ext.delta;
    let mut y_edges = vec![ext.delta, half];
    for j in 0..quad.y_levels {
        y_edges.push(half * 0.5f64.powi(j as i32 + 1));
    }
    y_edges.push(0.0);
    let ys: Vec<(f64, f64)> = y_edges.windows(2).flat_map(|w| gl.on(w[1], w[0])).collect();
    let px = quad.x_panels.max(1);
    let hx = (b - a) / px as f64;
    (0..px)
        .map(|i| {
            let lo = a + hx * i as f64;
            let mut nodes = Vec::new();
            for (x, wx) in gl.on(lo, lo + hx) {
                for &(y, wy) in &ys {
                    let dbar = ext.dbar(x, y);
                    if dbar != C64::new(0.0, 0.0) {
                        nodes.push(HsNode { lambda: C64::new(x, y), weight: wx * wy, dbar });
                    }
                }
            }
            nodes
        })
        .collect()
}

fn check_hermitian(h: &CMatrix) -> Result<()> {
    if !h.is_square() {
        return Err(Error::ShapeMismatch { expected: h.rows, got: h.cols });
    }
    let defect = h.hermitian_defect();
    if defect > 1e-10 * h.max_abs().max(1.0) {
        return Err(Error::NotHermitian(defect));
    }
    Ok(())
}

/// `LU` factors of `z − T` for real symmetric tridiagonal `T`: inverse
/// pivots `1/r_k` and `b_k / r_k`. With `Im z > 0` every pivot has imaginary
/// part at least `Im z`.
fn shifted_factors(diag: &[f64], offdiag: &[f64], z: C64) -> (Vec<C64>, Vec<C64>) {
    let mut inv = Vec::with_capacity(diag.len());
    let mut mult = Vec::with_capacity(offdiag.len());
    for (k, &a) in diag.iter().enumerate() {
        let prev = if k == 0 { C64::new(0.0, 0.0) } else { offdiag[k - 1] * mult[k - 1] };
        let r_inv = C64::new(1.0, 0.0) / (z - a - prev);
        inv.push(r_inv);
        if k < offdiag.len() {
            mult.push(offdiag[k] * r_inv);
        }
    }
    (inv, mult)
}

/// `x ← (z − T)^{−1} x` from `shifted_factors`.
fn shifted_solve(offdiag: &[f64], inv: &[C64], mult: &[C64], x: &mut [C64]) {
    let n = x.len();
    for i in 1..n {
        let prev = x[i - 1];
        x[i] += mult[i - 1] * prev;
    }
    x[n - 1] *= inv[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = (x[i] + offdiag[i] * x[i + 1]) * inv[i];
    }
}

/// `Σ w ∂̄φ̃(λ) (λ − H)^{−k−1}` over the upper half-plane nodes.
///
/// `H = Q T Q*` is reduced once; each node then costs `k + 1` tridiagonal
/// solves per column of `(λ − T)^{−k−1}`, and `Q` is applied to the sum.
/// Panels are summed in parallel and combined in fixed order.
fn upper_integral(ext: &AlmostAnalyticExtension, h: &CMatrix, k: usize, quad: HsQuadrature) -> Result<CMatrix> {
    check_hermitian(h)?;
    let n = h.rows;
    if n == 0 {
        return Ok(CMatrix::zeros(0, 0));
    }
    let tri = tridiagonalize(h.clone());
    let panels = hs_nodes(ext, quad);
    // Column-major accumulators: `acc[j * n + i]` is entry `(i, j)`.
    let partials: Vec<Vec<C64>> = panels
        .par_iter()
        .map(|nodes| {
            let mut acc = vec![C64::new(0.0, 0.0); n * n];
            let mut col = vec![C64::new(0.0, 0.0); n];
            for node in nodes {
                let (inv, mult) = shifted_factors(&tri.diag, &tri.offdiag, node.lambda);
                let s = node.dbar * node.weight;
                for j in 0..n {
                    col.iter_mut().for_each(|z| *z = C64::new(0.0, 0.0));
                    col[j] = C64::new(1.0, 0.0);
                    for _ in 0..=k {
                        shifted_solve(&tri.offdiag, &inv, &mult, &mut col);
                    }
                    for (a, c) in acc[j * n..(j + 1) * n].iter_mut().zip(&col) {
                        *a += s * c;
                    }
                }
            }
            acc
        })
        .collect();
    let mut m = vec![C64::new(0.0, 0.0); n * n];
    for part in partials {
        m.iter_mut().zip(part).for_each(|(a, b)| *a += b);
    }
    // X = Q M column by column, then (X Q*)* = Q X* column by column.
    m.chunks_mut(n).for_each(|c| tri.apply_q(c));
    let mut out = CMatrix::zeros(n, n);
    let mut row = vec![C64::new(0.0, 0.0); n];
    for i in 0..n {
        for (j, r) in row.iter_mut().enumerate() {
            *r = m[j * n + i].conj();
        }
        tri.apply_q(&mut row);
        for (j, r) in row.iter().enumerate() {
            out[(i, j)] = r.conj();
        }
    }
    Ok(out)
}

/// `φ(H)` by the Helffer–Sjöstrand formula.
pub fn hs_apply(ext: &AlmostAnalyticExtension, h: &CMatrix, quad: HsQuadrature) -> Result<CMatrix> {
    hs_derivative(ext, h, 0, quad)
}

/// `φ^{(k)}(H) = −(k!/π) ∫ ∂̄φ̃(λ) (λ − H)^{−k−1}`.
pub fn hs_derivative(ext: &AlmostAnalyticExtension, h: &CMatrix, k: usize, quad: HsQuadrature) -> Result<CMatrix> {
    if k > 3 {
        return Err(Error::DerivativeOrder { order: k, max: 3 });
    }
    let upper = upper_integral(ext, h, k, quad)?;
    let mut out = upper.clone();
    out.add_assign_scaled(C64::new(1.0, 0.0), &upper.adjoint());
    let s = -crate::poly::factorial(k as u32) / std::f64::consts::PI;
    out.data.iter_mut().for_each(|z| *z *= s);
    Ok(out)
}

/// `tr (z − T)^{−1}` for a real symmetric tridiagonal `T`, in O(n).
///
/// With the pivots `r_k = (z − a_k) − b_{k−1}² / r_{k−1}` of `z − T`,
/// `log det(z − T) = Σ log r_k`, and the trace is its z-derivative
/// `Σ r_k′ / r_k` with `r_k′ = 1 + b_{k−1}² r_{k−1}′ / r_{k−1}²`.
pub fn resolvent_trace(diag: &[f64], offdiag: &[f64], z: C64) -> C64 {
    let mut sum = C64::new(0.0, 0.0);
    let mut r_prev = C64::new(1.0, 0.0);
    let mut dr_prev = C64::new(0.0, 0.0);
    for (k, &a) in diag.iter().enumerate() {
        let (r, dr) = if k == 0 {
            (z - a, C64::new(1.0, 0.0))
        } else {
            let b2 = offdiag[k - 1] * offdiag[k - 1];
            let inv = C64::new(1.0, 0.0) / r_prev;
            (z - a - b2 * inv, 1.0 + b2 * dr_prev * inv * inv)
        };
        sum += dr / r;
        r_prev = r;
        dr_prev = dr;
    }
    sum
}

/// Trace of `φ(H)` for `H = Q T Q*`, sampling both half-planes independently.
/// Returns the complex result; its imaginary part is a rounding diagnostic.
pub fn hs_trace_tridiagonal(ext: &AlmostAnalyticExtension, tri: &Tridiagonal, quad: HsQuadrature) -> C64 {
    let panels = hs_nodes(ext, quad);
    let partials: Vec<C64> = panels
        .par_iter()
        .map(|nodes| {
            nodes
                .iter()
                .map(|nd| {
                    let up = resolvent_trace(&tri.diag, &tri.offdiag, nd.lambda);
                    let down = resolvent_trace(&tri.diag, &tri.offdiag, nd.lambda.conj());
                    nd.weight * (nd.dbar * up + nd.dbar.conj() * down)
                })
                .sum()
        })
        .collect();
    let total: C64 = partials.into_iter().sum();
    total * (-1.0 / std::f64::consts::PI)
}

/// `tr φ(H_p)` on the dense matrix of a spectral operator.
pub fn hs_trace(ext: &AlmostAnalyticExtension, h: &CMatrix, quad: HsQuadrature) -> Result<C64> {
    check_hermitian(h)?;
    let tri = tridiagonalize(h.clone());
    Ok(hs_trace_tridiagonal(ext, &tri, quad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eig::dense_hermitian_eig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_hermitian_in(n: usize, lo: f64, hi: f64, seed: u64) -> (CMatrix, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = CMatrix::from_fn(n, n, |_, _| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
        let mut h = g.clone();
        h.add_assign_scaled(C64::new(1.0, 0.0), &g.adjoint());
        // Rescale the spectrum affinely into [lo, hi].
        let e = dense_hermitian_eig(&h, false).unwrap().values;
        let (emin, emax) = (e[0], e[n - 1]);
        let s = (hi - lo) / (emax - emin);
        let mut out = h.clone();
        out.data.iter_mut().for_each(|z| *z *= s);
        for i in 0..n {
            out[(i, i)] += lo - emin * s;
        }
        let spec = dense_hermitian_eig(&out, false).unwrap().values;
        (out, spec)
    }

    fn spectral_function(h: &CMatrix, f: impl Fn(f64) -> f64) -> CMatrix {
        let e = dense_hermitian_eig(h, true).unwrap();
        let v = e.vectors.unwrap();
        let n = h.rows;
        CMatrix::from_fn(n, n, |i, j| (0..n).map(|k| v[(i, k)] * v[(j, k)].conj() * f(e.values[k])).sum())
    }

    #[test]
    fn cutoff_profile() {
        assert_eq!(cutoff(0.3), (1.0, 0.0));
        assert_eq!(cutoff(-1.2), (0.0, 0.0));
        let (c, _) = cutoff(0.75);
        assert!((c - 0.5).abs() < 1e-15);
        let h = 1e-6;
        for s in [0.55, 0.7, 0.9, -0.8] {
            let fd = (cutoff(s + h).0 - cutoff(s - h).0) / (2.0 * h);
            assert!((fd - cutoff(s).1).abs() < 1e-6, "{s}");
        }
    }

    #[test]
    fn extension_on_axis_and_off_support() {
        let phi = TestFunction::bump_on(-1.0, 2.0).unwrap();
        let ext = build_extension(&phi, 4, 1.0).unwrap();
        for x in [-0.5, 0.3, 1.7] {
            assert_eq!(ext.eval(x, 0.0).re, phi.eval(x));
            assert_eq!(ext.dbar(x, 0.0), C64::new(0.0, 0.0));
        }
        assert_eq!(ext.eval(2.5, 0.2), C64::new(0.0, 0.0));
        assert!(matches!(build_extension(&phi, 5, 1.0), Err(Error::DerivativeOrder { .. })));
    }

    #[test]
    fn dbar_matches_finite_differences() {
        let phi = TestFunction::bump_on(-1.0, 2.0).unwrap();
        let ext = build_extension(&phi, 3, 0.8).unwrap();
        let h = 1e-5;
        for (x, y) in [(0.2, 0.3), (1.1, 0.55), (-0.4, 0.7)] {
            let dx = (ext.eval(x + h, y) - ext.eval(x - h, y)) / (2.0 * h);
            let dy = (ext.eval(x, y + h) - ext.eval(x, y - h)) / (2.0 * h);
            let fd = 0.5 * (dx + C64::new(0.0, 1.0) * dy);
            assert!((fd - ext.dbar(x, y)).norm() < 1e-6, "({x},{y})");
        }
    }

    #[test]
    fn dbar_vanishes_to_order_n() {
        let phi = TestFunction::bump_on(-1.0, 2.0).unwrap();
        for n in 1..=4 {
            let ext = build_extension(&phi, n, 1.0).unwrap();
            let ys: Vec<f64> = (4..=10).map(|j| 0.5f64.powi(j)).collect();
            let lv: Vec<f64> = ys.iter().map(|&y| ext.dbar(0.4, y).norm().ln()).collect();
            let slope = (lv[0] - lv[6]) / (ys[0].ln() - ys[6].ln());
            assert!(slope >= n as f64 - 0.2, "N={n}: slope {slope}");
        }
    }

    #[test]
    fn non_hermitian_input_is_rejected() {
        let (mut h, _) = random_hermitian_in(6, -1.0, 1.0, 4);
        h[(0, 2)] += C64::new(0.0, 1e-3);
        let ext = build_extension(&TestFunction::bump_on(-2.0, 2.0).unwrap(), 4, 1.0).unwrap();
        assert!(matches!(hs_apply(&ext, &h, HsQuadrature::plain(8)), Err(Error::NotHermitian(_))));
        assert!(matches!(hs_trace(&ext, &CMatrix::zeros(2, 3), HsQuadrature::plain(8)), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn scalar_and_diagonal_cases() {
        let phi = TestFunction::bump_on(-1.0, 1.5).unwrap();
        let ext = build_extension(&phi, 4, 1.0).unwrap();
        let quad = HsQuadrature::default();
        let z = hs_apply(&ext, &CMatrix::zeros(1, 1), quad).unwrap();
        assert!((z[(0, 0)].re - phi.eval(0.0)).abs() < 1e-8);
        let d = CMatrix::from_real_diag(&[0.2, -0.6]);
        let f = hs_apply(&ext, &d, quad).unwrap();
        assert!((f[(0, 0)].re - phi.eval(0.2)).abs() < 1e-8);
        assert!((f[(1, 1)].re - phi.eval(-0.6)).abs() < 1e-8);
        assert!(f[(0, 1)].norm() < 1e-12);
        let f1 = hs_derivative(&ext, &d, 1, quad).unwrap();
        assert!((f1[(0, 0)].re - phi.deriv(0.2, 1).unwrap()).abs() < 1e-6);
        let f0 = hs_derivative(&ext, &d, 0, quad).unwrap();
        assert_eq!(f0, f);
    }

    #[test]
    fn random_matrix_against_eigendecomposition() {
        let phi = TestFunction::bump_on(-2.0, 2.0).unwrap();
        let ext = build_extension(&phi, 4, 1.0).unwrap();
        let (h, _) = random_hermitian_in(20, -1.5, 1.5, 9);
        let quad = HsQuadrature::default();
        let f = hs_apply(&ext, &h, quad).unwrap();
        let want = spectral_function(&h, |t| phi.eval(t));
        let err = f.sub(&want).norm2();
        assert!(err <= 1e-7, "{err:e}");
        let f2 = hs_derivative(&ext, &h, 2, quad).unwrap();
        let want2 = spectral_function(&h, |t| phi.deriv(t, 2).unwrap());
        assert!(f2.sub(&want2).norm2() <= 1e-5);
    }

    #[test]
    fn resolvent_trace_matches_eigenvalues() {
        let (h, spec) = random_hermitian_in(30, -2.0, 3.0, 5);
        let tri = crate::eig::tridiagonalize(h);
        for z in [C64::new(0.3, 0.01), C64::new(-1.0, 2.0), C64::new(5.0, -0.5)] {
            let want: C64 = spec.iter().map(|&l| C64::new(1.0, 0.0) / (z - l)).sum();
            assert!((resolvent_trace(&tri.diag, &tri.offdiag, z) - want).norm() < 1e-10 * want.norm().max(1.0));
        }
    }

    #[test]
    fn trace_below_spectrum_is_zero() {
        let phi = TestFunction::bump_on(-5.0, -3.0).unwrap();
        let ext = build_extension(&phi, 4, 1.0).unwrap();
        let (h, _) = random_hermitian_in(30, 0.0, 2.0, 2);
        let t = hs_trace(&ext, &h, HsQuadrature { x_panels: 16, ..Default::default() }).unwrap();
        assert!(t.norm() < 1e-9, "{t}");
    }
}
