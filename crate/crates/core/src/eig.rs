//! Eigenvalue engines: dense Hermitian eigendecomposition (Householder
//! reduction to real tridiagonal form, then implicit-shift QL) and a
//! matrix-free Lanczos solver with full reorthogonalization and locking
//! restarts for spectral windows at the bottom of the spectrum.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::discretize::{GridFunction, SpectralOperator};
use crate::error::{Error, Result};
use crate::linalg::{dot, norm, CMatrix, C64};

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

/// Unitary reduction `A = Q T Q*` with `T` real symmetric tridiagonal and
/// `Q = H_0 H_1 ⋯ H_{n−2}`, `H_k = I − τ_k v_k v_k*` acting on indices `> k`.
#[derive(Debug, Clone)]
pub struct Tridiagonal {
    pub diag: Vec<f64>,
    pub offdiag: Vec<f64>,
    reflectors: Vec<(C64, Vec<C64>)>,
}

/// Householder vector for `x`: returns `(τ, β)` and overwrites `x` with `v`
/// (`v_0 = 1`) so that `(I − τ v v*)* x = β e_0` with `β` real.
fn reflector(x: &mut [C64]) -> (C64, f64) {
    let alpha = x[0];
    let tail: f64 = x[1..].iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if tail == 0.0 && alpha.im == 0.0 {
        x[0] = C64::new(1.0, 0.0);
        x[1..].iter_mut().for_each(|z| *z = ZERO);
        return (ZERO, alpha.re);
    }
    let beta = -alpha.re.signum() * alpha.norm().hypot(tail);
    let tau = C64::new((beta - alpha.re) / beta, -alpha.im / beta);
    let s = C64::new(1.0, 0.0) / (alpha - beta);
    x[0] = C64::new(1.0, 0.0);
    x[1..].iter_mut().for_each(|z| *z *= s);
    (tau, beta)
}

/// Householder tridiagonalization of a Hermitian matrix (consumed).
///
/// Each step makes one pass over the trailing block: the rank-2 update of a
/// row is fused with that row's contribution to the next step's `A v`.
pub fn tridiagonalize(mut m: CMatrix) -> Tridiagonal {
    let n = m.rows;
    let a = &mut m.data;
    let mut diag = vec![0.0; n];
    let mut offdiag = vec![0.0; n.saturating_sub(1)];
    let mut reflectors = Vec::with_capacity(n.saturating_sub(1));
    if n == 0 {
        return Tridiagonal { diag, offdiag, reflectors };
    }
    // Reflector for step k from row k (column k is its conjugate).
    let next_reflector = |a: &[C64], k: usize| -> (C64, f64, Vec<C64>) {
        let mut v: Vec<C64> = a[k * n + k + 1..(k + 1) * n].iter().map(|z| z.conj()).collect();
        let (tau, beta) = reflector(&mut v);
        (tau, beta, v)
    };
    let mut cur = if n > 1 { Some(next_reflector(a, 0)) } else { None };
    let mut p: Vec<C64> = match &cur {
        Some((tau, _, v)) => (1..n)
            .map(|r| {
                let row = &a[r * n + 1..(r + 1) * n];
                *tau * row.iter().zip(v).map(|(x, y)| x * y).sum::<C64>()
            })
            .collect(),
        None => Vec::new(),
    };
    for k in 0..n.saturating_sub(1) {
        diag[k] = a[k * n + k].re;
        let (tau, beta, v) = cur.take().expect("reflector prepared");
        offdiag[k] = beta;
        let mm = n - k - 1;
        // w = p + α v, α = −½ τ̄ (v* p)
        let alpha = -0.5 * tau.conj() * dot(&v, &p);
        let w: Vec<C64> = p.iter().zip(&v).map(|(pi, vi)| pi + alpha * vi).collect();
        let cw: Vec<C64> = w.iter().map(|z| z.conj()).collect();
        let cv: Vec<C64> = v.iter().map(|z| z.conj()).collect();
        let base = k + 1;
        let update_row = |row: &mut [C64], i: usize| {
            let (vi, wi) = (v[i], w[i]);
            for ((x, a), b) in row.iter_mut().zip(&cw).zip(&cv) {
                *x -= vi * a + wi * b;
            }
        };
        // First trailing row fixes the next reflector.
        update_row(&mut a[base * n + base..(base + 1) * n], 0);
        if mm == 1 {
            reflectors.push((tau, v));
            break;
        }
        let (tau2, beta2, v2) = next_reflector(a, base);
        let mut p2 = vec![ZERO; mm - 1];
        for i in 1..mm {
            let r = base + i;
            let row = &mut a[r * n + base..(r + 1) * n];
            let (vi, wi) = (v[i], w[i]);
            let mut acc = ZERO;
            let (first, rest) = row.split_at_mut(1);
            first[0] -= vi * cw[0] + wi * cv[0];
            for (((x, a), b), y) in rest.iter_mut().zip(&cw[1..]).zip(&cv[1..]).zip(&v2) {
                *x -= vi * a + wi * b;
                acc += *x * y;
            }
            p2[i - 1] = tau2 * acc;
        }
        reflectors.push((tau, v));
        cur = Some((tau2, beta2, v2));
        p = p2;
    }
    diag[n - 1] = a[(n - 1) * n + n - 1].re;
    Tridiagonal { diag, offdiag, reflectors }
}

impl Tridiagonal {
    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    /// `Q y` in place.
    pub fn apply_q(&self, y: &mut [C64]) {
        for (k, (tau, v)) in self.reflectors.iter().enumerate().rev() {
            let tail = &mut y[k + 1..];
            let s = *tau * dot(v, tail);
            tail.iter_mut().zip(v).for_each(|(t, vi)| *t -= s * vi);
        }
    }

    /// `Q* y` in place.
    pub fn apply_q_adjoint(&self, y: &mut [C64]) {
        for (k, (tau, v)) in self.reflectors.iter().enumerate() {
            let tail = &mut y[k + 1..];
            let s = tau.conj() * dot(v, tail);
            tail.iter_mut().zip(v).for_each(|(t, vi)| *t -= s * vi);
        }
    }

    /// Row `x` of `Q`, i.e. `conj(Q* e_x)`.
    pub fn q_row(&self, x: usize) -> Vec<C64> {
        let mut e = vec![ZERO; self.len()];
        e[x] = C64::new(1.0, 0.0);
        self.apply_q_adjoint(&mut e);
        e.iter_mut().for_each(|z| *z = z.conj());
        e
    }
}

/// Eigenvalues of the symmetric tridiagonal `(d, e)` by implicit-shift QL.
///
/// `rows` holds `m` row vectors of length `n` (row-major, `m·n` entries);
/// every rotation is applied to them, so on return `rows` has been
/// multiplied on the right by the eigenvector matrix. Pass the identity to
/// get eigenvectors as columns. Results come back unsorted.
pub fn tridiagonal_ql(d: &mut [f64], e_in: &[f64], rows: &mut [C64]) -> Result<()> {
    let n = d.len();
    if n == 0 {
        return Ok(());
    }
    let m_rows = rows.len() / n;
    let mut e = vec![0.0; n];
    e[..n - 1].copy_from_slice(e_in);
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > 60 {
                return Err(Error::NoConvergence(format!("QL stalled at index {l} of {n}")));
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut i = m;
            let mut underflow = false;
            while i > l {
                i -= 1;
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    underflow = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
                for row in 0..m_rows {
                    let z = &mut rows[row * n..(row + 1) * n];
                    let f = z[i + 1];
                    z[i + 1] = z[i] * s + f * c;
                    z[i] = z[i] * c - f * s;
                }
            }
            if underflow {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    Ok(())
}

/// Eigenvalues ascending with optional orthonormal eigenvectors (columns).
#[derive(Debug, Clone)]
pub struct DenseEig {
    pub values: Vec<f64>,
    pub vectors: Option<CMatrix>,
}

fn check_hermitian(m: &CMatrix) -> Result<()> {
    if !m.is_square() {
        return Err(Error::ShapeMismatch { expected: m.rows, got: m.cols });
    }
    let defect = m.hermitian_defect();
    if defect > 1e-10 * m.max_abs().max(1.0) {
        return Err(Error::NotHermitian(defect));
    }
    Ok(())
}

/// Sort eigenvalues ascending, permuting the matching columns of `rows`.
fn sort_with_columns(values: &mut Vec<f64>, rows: Option<&mut [C64]>) {
    let n = values.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    *values = idx.iter().map(|&i| values[i]).collect();
    if let Some(rows) = rows {
        for row in rows.chunks_mut(n) {
            let old = row.to_vec();
            for (dst, &src) in row.iter_mut().zip(&idx) {
                *dst = old[src];
            }
        }
    }
}

pub fn dense_hermitian_eig(m: &CMatrix, with_vectors: bool) -> Result<DenseEig> {
    check_hermitian(m)?;
    let n = m.rows;
    let tri = tridiagonalize(m.clone());
    let mut values = tri.diag.clone();
    if !with_vectors {
        tridiagonal_ql(&mut values, &tri.offdiag, &mut [])?;
        values.sort_by(f64::total_cmp);
        return Ok(DenseEig { values, vectors: None });
    }
    let mut z = CMatrix::identity(n);
    tridiagonal_ql(&mut values, &tri.offdiag, &mut z.data)?;
    sort_with_columns(&mut values, Some(&mut z.data));
    // Columns of z are tridiagonal eigenvectors; map them through Q.
    let zt = z.adjoint();
    let mut out = CMatrix::zeros(n, n);
    for j in 0..n {
        let mut col: Vec<C64> = zt.row(j).iter().map(|c| c.conj()).collect();
        tri.apply_q(&mut col);
        for (i, c) in col.into_iter().enumerate() {
            out[(i, j)] = c;
        }
    }
    Ok(DenseEig { values, vectors: Some(out) })
}

/// Eigenvalues of an operator inside `[lo, hi]`, ascending, with optional
/// eigenfunctions normalized so that `Σ|u_m|²·(cell volume) = 1`.
#[derive(Debug, Clone)]
pub struct EigenWindow {
    pub window: (f64, f64),
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: Option<Vec<GridFunction>>,
    /// `‖Hu − λu‖` for unit-norm `u`, when vectors were computed.
    pub residuals: Vec<Option<f64>>,
    pub cell_volume: f64,
}

/// Dense route: assemble, diagonalize, keep what falls inside the window.
pub fn dense_window(op: &SpectralOperator, window: (f64, f64), cap: usize, with_vectors: bool) -> Result<EigenWindow> {
    let m = op.assemble_dense(cap)?;
    let eig = dense_hermitian_eig(&m, with_vectors)?;
    let cell = op.domain.cell_volume();
    let keep: Vec<usize> = (0..eig.values.len())
        .filter(|&i| eig.values[i] >= window.0 && eig.values[i] <= window.1)
        .collect();
    let eigenvalues = keep.iter().map(|&i| eig.values[i]).collect();
    let (eigenvectors, residuals) = match &eig.vectors {
        Some(v) => {
            let mut vecs = Vec::with_capacity(keep.len());
            let mut res = Vec::with_capacity(keep.len());
            for &i in &keep {
                let u: Vec<C64> = (0..v.rows).map(|r| v[(r, i)]).collect();
                let hu = m.matvec(&u);
                let r = hu.iter().zip(&u).map(|(a, b)| (a - b * eig.values[i]).norm_sqr()).sum::<f64>().sqrt();
                res.push(Some(r));
                let s = 1.0 / cell.sqrt();
                vecs.push(u.into_iter().map(|z| z * s).collect());
            }
            (Some(vecs), res)
        }
        None => (None, vec![None; keep.len()]),
    };
    Ok(EigenWindow { window, eigenvalues, eigenvectors, residuals, cell_volume: cell })
}

/// Settings for [`lanczos_window`].
#[derive(Debug, Clone, Copy)]
pub struct LanczosOptions {
    /// Cap on the Krylov dimension of each restart.
    pub max_iter: usize,
    /// Residual tolerance relative to the spectral-norm estimate.
    pub tol: f64,
    pub seed: u64,
    /// Restarts after the first one that found nothing new in the window.
    pub confirm_restarts: usize,
}

impl Default for LanczosOptions {
    fn default() -> Self {
        Self { max_iter: 600, tol: 1e-10, seed: 0x5eed, confirm_restarts: 1 }
    }
}

/// Orthogonalize `w` against every set in `sets`, twice (classical
/// Gram–Schmidt, CGS2). Both passes cover all sets: cleaning against one set
/// after the other would let the second reintroduce components of the first.
fn reorthogonalize(w: &mut [C64], sets: &[&[Vec<C64>]]) {
    for _ in 0..2 {
        for basis in sets {
            let coeffs: Vec<C64> = basis.iter().map(|q| dot(q, w)).collect();
            for (q, c) in basis.iter().zip(coeffs) {
                w.iter_mut().zip(q).for_each(|(wi, qi)| *wi -= c * qi);
            }
        }
    }
}

/// Every eigenpair with eigenvalue in `[lo, hi]` of a Hermitian operator
/// given by `apply`, by Lanczos with full reorthogonalization. Converged
/// pairs below `hi` are locked and the iteration restarts in their
/// orthogonal complement, which recovers repeated eigenvalues; the search
/// stops once a restart finds no new pair below `hi`.
pub fn lanczos_with<F>(apply: F, dim: usize, window: (f64, f64), opts: LanczosOptions) -> Result<(Vec<f64>, Vec<Vec<C64>>, Vec<f64>)>
where
    F: Fn(&[C64]) -> Result<Vec<C64>>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut locked: Vec<Vec<C64>> = Vec::new();
    let mut locked_vals: Vec<f64> = Vec::new();
    let mut locked_res: Vec<f64> = Vec::new();
    let mut quiet = 0;
    let mut norm_est: f64 = 0.0;
    while locked.len() < dim {
        let mut q: Vec<C64> = (0..dim).map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
        reorthogonalize(&mut q, &[&locked]);
        let nq = norm(&q);
        q.iter_mut().for_each(|z| *z /= nq);
        let mut basis: Vec<Vec<C64>> = vec![q];
        let mut alphas: Vec<f64> = Vec::new();
        let mut betas: Vec<f64> = Vec::new();
        let room = dim - locked.len();
        let cap = opts.max_iter.min(room);
        let mut found: Option<Vec<(f64, Vec<f64>)>> = None;
        for step in 0..cap {
            let mut w = apply(&basis[step])?;
            let a = dot(&basis[step], &w).re;
            alphas.push(a);
            let raw = norm(&w);
            reorthogonalize(&mut w, &[&locked, &basis]);
            norm_est = norm_est.max(raw);
            // An invariant subspace was found: what is left of `w` is
            // rounding noise and must not become the next basis vector.
            let breakdown = norm(&w) <= 1e-10 * raw.max(f64::MIN_POSITIVE);
            let b = if breakdown { 0.0 } else { norm(&w) };
            let full = step + 1 == cap;
            if (step + 1) % 10 == 0 || full {
                // Ritz pairs of the current tridiagonal.
                let k = alphas.len();
                let mut d = alphas.clone();
                let mut z = CMatrix::identity(k);
                tridiagonal_ql(&mut d, &betas, &mut z.data)?;
                sort_with_columns(&mut d, Some(&mut z.data));
                let tol = opts.tol * norm_est.max(1.0);
                let est = |j: usize| (b * z[(k - 1, j)].re).abs();
                let below: Vec<usize> = (0..k).filter(|&j| d[j] <= window.1).collect();
                let all_below_converged = below.iter().all(|&j| est(j) <= tol);
                // The lowest Ritz value must settle before "nothing below" counts.
                let lowest_settled = est(0) <= tol || d[0] > window.1 + est(0);
                if full || (all_below_converged && lowest_settled && step >= 20) {
                    if !all_below_converged {
                        return Err(Error::NoConvergence(format!(
                            "Lanczos reached {k} steps with unconverged Ritz values below {}",
                            window.1
                        )));
                    }
                    found = Some(below.iter().map(|&j| (d[j], (0..k).map(|i| z[(i, j)].re).collect())).collect());
                    break;
                }
            }
            if breakdown {
                let mut q: Vec<C64> =
                    (0..dim).map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
                reorthogonalize(&mut q, &[&locked, &basis]);
                let nq = norm(&q);
                q.iter_mut().for_each(|z| *z /= nq);
                betas.push(0.0);
                basis.push(q);
            } else {
                betas.push(b);
                w.iter_mut().for_each(|z| *z /= b);
                basis.push(w);
            }
        }
        let found = found.unwrap_or_default();
        if found.is_empty() {
            quiet += 1;
            if quiet > opts.confirm_restarts {
                break;
            }
            continue;
        }
        for (theta, y) in found {
            let mut u = vec![ZERO; dim];
            for (yi, qi) in y.iter().zip(&basis) {
                u.iter_mut().zip(qi).for_each(|(ui, q)| *ui += *yi * q);
            }
            reorthogonalize(&mut u, &[&locked]);
            let nu = norm(&u);
            u.iter_mut().for_each(|z| *z /= nu);
            let hu = apply(&u)?;
            let lam = dot(&u, &hu).re;
            let r = hu.iter().zip(&u).map(|(a, b)| (a - b * lam).norm_sqr()).sum::<f64>().sqrt();
            if r > 1e3 * opts.tol * norm_est.max(1.0) {
                return Err(Error::NoConvergence(format!("locked pair at {theta} has residual {r:e}")));
            }
            locked.push(u);
            locked_vals.push(lam);
            locked_res.push(r);
        }
    }
    let mut idx: Vec<usize> = (0..locked.len()).filter(|&i| locked_vals[i] >= window.0 && locked_vals[i] <= window.1).collect();
    idx.sort_by(|&a, &b| locked_vals[a].total_cmp(&locked_vals[b]));
    let vals = idx.iter().map(|&i| locked_vals[i]).collect();
    let res = idx.iter().map(|&i| locked_res[i]).collect();
    let vecs = idx.into_iter().map(|i| std::mem::take(&mut locked[i])).collect();
    Ok((vals, vecs, res))
}

/// Matrix-free window eigensolver on a spectral operator.
pub fn lanczos_window(op: &SpectralOperator, window: (f64, f64), opts: LanczosOptions) -> Result<EigenWindow> {
    let (vals, vecs, res) = lanczos_with(|u| op.apply(u), op.dim(), window, opts)?;
    let cell = op.domain.cell_volume();
    let s = 1.0 / cell.sqrt();
    Ok(EigenWindow {
        window,
        eigenvalues: vals,
        eigenvectors: Some(vecs.into_iter().map(|u| u.into_iter().map(|z| z * s).collect()).collect()),
        residuals: res.into_iter().map(Some).collect(),
        cell_volume: cell,
    })
}

impl EigenWindow {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    /// Sizes of clusters of eigenvalues closer than `rel · spread`.
    pub fn multiplicities(&self, rel: f64) -> Vec<usize> {
        cluster_sizes(&self.eigenvalues, rel)
    }

    /// `index,eigenvalue,residual`; the residual is empty when not computed.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let io = |e| Error::Io { path: path.to_path_buf(), source: e };
        let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
        writeln!(f, "index,eigenvalue,residual").map_err(io)?;
        for (i, (l, r)) in self.eigenvalues.iter().zip(&self.residuals).enumerate() {
            match r {
                Some(r) => writeln!(f, "{i},{l:.17e},{r:.3e}"),
                None => writeln!(f, "{i},{l:.17e},"),
            }
            .map_err(io)?;
        }
        f.flush().map_err(io)
    }
}

pub fn cluster_sizes(sorted: &[f64], rel: f64) -> Vec<usize> {
    let Some((first, last)) = sorted.first().zip(sorted.last()) else {
        return Vec::new();
    };
    let gap = rel * (last - first).abs().max(1.0);
    let mut out = vec![1];
    for w in sorted.windows(2) {
        if w[1] - w[0] <= gap {
            *out.last_mut().expect("nonempty") += 1;
        } else {
            out.push(1);
        }
    }
    out
}

/// `|ψ_k(x)|²` for every eigenfunction in the window at grid point `x`.
pub fn eigenfunction_values(window: &EigenWindow, x: usize) -> Result<Vec<f64>> {
    let vecs = window.eigenvectors.as_ref().ok_or(Error::NoEigenvectors)?;
    vecs.iter()
        .map(|u| u.get(x).map(|z| z.norm_sqr()).ok_or(Error::ShapeMismatch { expected: u.len(), got: x }))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretize::{build_from_field, build_operator, free_spectrum};
    use crate::model::{MagneticField, Mode, ScalarField, TorusDomain, VectorPotential};

    fn random_hermitian(n: usize, seed: u64) -> CMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = CMatrix::from_fn(n, n, |_, _| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
        let mut h = g.clone();
        h.add_assign_scaled(C64::new(1.0, 0.0), &g.adjoint());
        h
    }

    #[test]
    fn diagonal_and_two_by_two() {
        let m = CMatrix::from_real_diag(&[3.0, -1.0, 2.0]);
        assert_eq!(dense_hermitian_eig(&m, false).unwrap().values, vec![-1.0, 2.0, 3.0]);
        let swap = CMatrix::from_fn(2, 2, |i, j| C64::new(if i != j { 1.0 } else { 0.0 }, 0.0));
        let e = dense_hermitian_eig(&swap, true).unwrap();
        assert!((e.values[0] + 1.0).abs() < 1e-15 && (e.values[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn random_hermitian_residuals_and_trace() {
        let n = 64;
        let m = random_hermitian(n, 1);
        let e = dense_hermitian_eig(&m, true).unwrap();
        let v = e.vectors.unwrap();
        let scale = m.norm2();
        for j in 0..n {
            let u: Vec<C64> = (0..n).map(|i| v[(i, j)]).collect();
            let mu = m.matvec(&u);
            let r = mu.iter().zip(&u).map(|(a, b)| (a - b * e.values[j]).norm_sqr()).sum::<f64>().sqrt();
            assert!(r <= 1e-10 * scale, "residual {r:e}");
        }
        let gram = v.adjoint().matmul(&v);
        assert!(gram.sub(&CMatrix::identity(n)).max_abs() <= 1e-10);
        let tr: f64 = e.values.iter().sum();
        assert!((tr - m.trace().re).abs() <= 1e-10 * scale);
        assert!(e.values.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn tridiagonal_reduction_is_unitary_similarity() {
        let n = 20;
        let m = random_hermitian(n, 4);
        let tri = tridiagonalize(m.clone());
        // Q* M Q must equal T.
        let mut qm = CMatrix::zeros(n, n);
        for j in 0..n {
            let mut col: Vec<C64> = (0..n).map(|i| m[(i, j)]).collect();
            tri.apply_q_adjoint(&mut col);
            for i in 0..n {
                qm[(i, j)] = col[i];
            }
        }
        let mut t = qm.adjoint();
        for j in 0..n {
            let mut col: Vec<C64> = (0..n).map(|i| t[(i, j)]).collect();
            tri.apply_q_adjoint(&mut col);
            for i in 0..n {
                t[(i, j)] = col[i];
            }
        }
        let t = t.adjoint();
        for i in 0..n {
            for j in 0..n {
                let want = if i == j {
                    tri.diag[i]
                } else if i + 1 == j {
                    tri.offdiag[i]
                } else if j + 1 == i {
                    tri.offdiag[j]
                } else {
                    0.0
                };
                assert!((t[(i, j)] - want).norm() < 1e-12, "({i},{j})");
            }
        }
        let row = tri.q_row(3);
        let mut col0 = vec![ZERO; n];
        col0[5] = C64::new(1.0, 0.0);
        tri.apply_q(&mut col0);
        assert!((row[5] - col0[3]).norm() < 1e-14);
    }

    #[test]
    fn non_hermitian_is_rejected() {
        let mut m = random_hermitian(5, 2);
        m[(0, 1)] += C64::new(1e-3, 0.0);
        assert!(matches!(dense_hermitian_eig(&m, false), Err(Error::NotHermitian(_))));
    }

    fn free_op(n: usize) -> SpectralOperator {
        let periods = [1.0, 1.0];
        build_operator(
            &TorusDomain::cubic(2, 1.0, n).unwrap(),
            &VectorPotential::zero(&periods),
            &ScalarField::zero(&periods),
            1.0,
        )
        .unwrap()
    }

    fn generic_op(n: usize) -> SpectralOperator {
        let l = 3.0;
        let periods = [l, l];
        let b = ScalarField::new(&periods, 0.0, vec![Mode::new(vec![1, 0], 1.0, 0.0), Mode::new(vec![1, 1], 0.6, 1.0)]).unwrap();
        let v = ScalarField::new(&periods, 0.3, vec![Mode::new(vec![1, 0], 0.15, 0.0), Mode::new(vec![0, 1], 0.1, 0.5)]).unwrap();
        build_from_field(&TorusDomain::cubic(2, l, n).unwrap(), &MagneticField::planar(b).unwrap(), &v, 4.0).unwrap()
    }

    #[test]
    fn free_window_matches_lattice_with_multiplicity() {
        let op = free_op(12);
        let top = 5.0 * (2.0 * std::f64::consts::PI).powi(2) + 1e-6;
        let exact: Vec<f64> = free_spectrum(&op.domain, 1.0).into_iter().filter(|&e| e <= top).collect();
        let lw = lanczos_window(&op, (-1.0, top), LanczosOptions::default()).unwrap();
        assert_eq!(lw.len(), exact.len());
        for (a, b) in lw.eigenvalues.iter().zip(&exact) {
            assert!((a - b).abs() < 1e-9 * top, "{a} vs {b}");
        }
        assert_eq!(lw.multiplicities(1e-9), cluster_sizes(&exact, 1e-9));
        let dw = dense_window(&op, (-1.0, top), 4096, false).unwrap();
        assert_eq!(dw.eigenvalues.len(), exact.len());
    }

    #[test]
    fn lanczos_agrees_with_dense_on_1024() {
        let op = generic_op(32);
        let window = (0.0, 0.8);
        let dw = dense_window(&op, window, 4096, true).unwrap();
        let lw = lanczos_window(&op, window, LanczosOptions::default()).unwrap();
        assert_eq!(dw.len(), lw.len());
        let gap = dw.eigenvalues.iter().zip(&lw.eigenvalues).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(gap <= 1e-9, "{gap:e}");
        assert!(dw.residuals.iter().all(|r| r.unwrap() < 1e-10 * 1e3));
    }

    #[test]
    fn empty_window_below_spectrum() {
        let op = generic_op(16);
        let lw = lanczos_window(&op, (-10.0, -5.0), LanczosOptions::default()).unwrap();
        assert!(lw.is_empty());
        let dw = dense_window(&op, (-10.0, -5.0), 4096, true).unwrap();
        assert!(dw.is_empty());
    }

    #[test]
    fn eigenfunction_normalization_and_projectors() {
        let op = free_op(8);
        let e1 = (2.0 * std::f64::consts::PI).powi(2);
        let w = dense_window(&op, (-1.0, e1 * 1.0001), 4096, true).unwrap();
        assert_eq!(w.len(), 5);
        let zero = eigenfunction_values(&w, 17).unwrap()[0];
        assert!((zero - 1.0).abs() < 1e-10);
        for x in [0, 9, 33, 63] {
            let vals = eigenfunction_values(&w, x).unwrap();
            let pair: f64 = vals[1..].iter().sum();
            assert!((pair - 4.0).abs() < 1e-8, "{pair}");
        }
        for u in w.eigenvectors.as_ref().unwrap() {
            let mean: f64 = u.iter().map(|z| z.norm_sqr()).sum::<f64>() * w.cell_volume;
            assert!((mean - 1.0).abs() < 1e-10);
        }
        let none = dense_window(&op, (-1.0, 1.0), 4096, false).unwrap();
        assert!(matches!(eigenfunction_values(&none, 0), Err(Error::NoEigenvectors)));
    }

    #[test]
    fn csv_has_header_and_rows() {
        let op = free_op(8);
        let w = dense_window(&op, (-1.0, 50.0), 4096, true).unwrap();
        let path = std::env::temp_dir().join(format!("semitrace-eig-{}.csv", std::process::id()));
        w.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("index,eigenvalue,residual\n"));
        assert_eq!(text.lines().count(), w.len() + 1);
        std::fs::remove_file(&path).ok();
    }
}
