//! Fourier-spectral discretization of `H_p = Σ_j (D_j − A_j)*(D_j − A_j) + V`
//! on a flat torus, `D_j = (h/i)∂_j`, `h = 1/p`.
//!
//! `D_j` is an exact Fourier multiplier with symbol `h·2πk_j/L_j` for signed
//! `k ∈ [−n/2, n/2)`; `A_j` and `V` act pointwise on the grid. Because the
//! operator is applied in factorized form, it is Hermitian at round-off for
//! any grid, aliased or not.

use std::f64::consts::PI;
use std::path::Path;
use std::sync::Arc;

use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{CMatrix, C64};
use crate::model::{MagneticField, ScalarField, TorusDomain, VectorPotential};

/// Complex values on the tensor grid, row-major with the last axis fastest.
pub type GridFunction = Vec<C64>;

/// Default ceiling on `grid_n^d` for dense assembly.
pub const DEFAULT_DENSE_CAP: usize = 4096;

#[derive(Clone)]
pub struct SpectralOperator {
    pub p: f64,
    pub domain: TorusDomain,
    pub potential: VectorPotential,
    pub scalar: ScalarField,
    /// `A_j` sampled on the grid, one vector per axis.
    pub a_grid: Vec<Vec<f64>>,
    pub v_grid: Vec<f64>,
    /// Symbol of `D_j` indexed by the FFT bin along axis `j`.
    pub symbols: Vec<Vec<f64>>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for SpectralOperator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpectralOperator")
            .field("p", &self.p)
            .field("domain", &self.domain)
            .field("fft_len", &self.domain.grid_n)
            .finish_non_exhaustive()
    }
}

/// Signed wave number of FFT bin `m` on an `n`-point axis; Nyquist maps to `−n/2`.
pub fn signed_wavenumber(m: usize, n: usize) -> i64 {
    if m < n / 2 {
        m as i64
    } else {
        m as i64 - n as i64
    }
}

/// Build `H_p` from a periodic potential. The field `dA` is checked for zero
/// flux and closedness, and every mode must be representable on the grid.
pub fn build_operator(
    domain: &TorusDomain,
    potential: &VectorPotential,
    scalar: &ScalarField,
    p: f64,
) -> Result<SpectralOperator> {
    domain.validate()?;
    if !(p.is_finite() && p > 0.0) {
        return Err(Error::InvalidDomain(format!("semiclassical index p = {p} must be positive")));
    }
    if potential.dim() != domain.d {
        return Err(Error::ShapeMismatch { expected: domain.d, got: potential.dim() });
    }
    potential.curl().validate()?;
    let a_grid = potential.comps.iter().map(|a| a.sample(domain)).collect::<Result<Vec<_>>>()?;
    let v_grid = scalar.sample(domain)?;
    let n = domain.grid_n;
    let h = 1.0 / p;
    let symbols = domain
        .periods
        .iter()
        .map(|&l| (0..n).map(|m| h * 2.0 * PI * signed_wavenumber(m, n) as f64 / l).collect())
        .collect();
    let mut planner = FftPlanner::new();
    Ok(SpectralOperator {
        p,
        domain: domain.clone(),
        potential: potential.clone(),
        scalar: scalar.clone(),
        a_grid,
        v_grid,
        symbols,
        forward: planner.plan_fft_forward(n),
        inverse: planner.plan_fft_inverse(n),
    })
}

/// Same as [`build_operator`] with `A` taken in the Coulomb gauge of `field`.
pub fn build_from_field(
    domain: &TorusDomain,
    field: &MagneticField,
    scalar: &ScalarField,
    p: f64,
) -> Result<SpectralOperator> {
    field.validate()?;
    build_operator(domain, &field.vector_potential(), scalar, p)
}

impl SpectralOperator {
    pub fn dim(&self) -> usize {
        self.domain.len()
    }

    pub fn h(&self) -> f64 {
        1.0 / self.p
    }

    /// In-place d-dimensional FFT, one axis at a time.
    fn fft(&self, data: &mut [C64], inverse: bool) {
        let plan = if inverse { &self.inverse } else { &self.forward };
        let n = self.domain.grid_n;
        let d = self.domain.d;
        let total = data.len();
        let mut scratch = vec![C64::new(0.0, 0.0); plan.get_inplace_scratch_len()];
        plan.process_with_scratch(data, &mut scratch);
        let mut line = vec![C64::new(0.0, 0.0); n];
        for axis in 0..d - 1 {
            let stride = n.pow((d - 1 - axis) as u32);
            let block = stride * n;
            for base in (0..total).step_by(block) {
                for off in 0..stride {
                    for (m, z) in line.iter_mut().enumerate() {
                        *z = data[base + off + m * stride];
                    }
                    plan.process_with_scratch(&mut line, &mut scratch);
                    for (m, z) in line.iter().enumerate() {
                        data[base + off + m * stride] = *z;
                    }
                }
            }
        }
        if inverse {
            let s = 1.0 / total as f64;
            data.iter_mut().for_each(|z| *z *= s);
        }
    }

    /// Multiply a spectrum in place by the symbol of `D_axis`.
    fn multiply_symbol(&self, spec: &mut [C64], axis: usize) {
        let n = self.domain.grid_n;
        let stride = n.pow((self.domain.d - 1 - axis) as u32);
        let sym = &self.symbols[axis];
        for (i, z) in spec.iter_mut().enumerate() {
            *z *= sym[(i / stride) % n];
        }
    }

    /// `H_p u`, using `2d + 2` FFTs.
    pub fn apply(&self, u: &[C64]) -> Result<GridFunction> {
        let len = self.dim();
        if u.len() != len {
            return Err(Error::ShapeMismatch { expected: len, got: u.len() });
        }
        let mut u_hat = u.to_vec();
        self.fft(&mut u_hat, false);
        let mut acc_hat = vec![C64::new(0.0, 0.0); len];
        let mut out: Vec<C64> = u.iter().zip(&self.v_grid).map(|(z, v)| z * v).collect();
        for j in 0..self.domain.d {
            // w = (D_j − A_j) u
            let mut w = u_hat.clone();
            self.multiply_symbol(&mut w, j);
            self.fft(&mut w, true);
            let a = &self.a_grid[j];
            for (wi, (ui, ai)) in w.iter_mut().zip(u.iter().zip(a)) {
                *wi -= ui * ai;
            }
            // (D_j − A_j)* w = D_j w − A_j w
            for (oi, (wi, ai)) in out.iter_mut().zip(w.iter().zip(a)) {
                *oi -= wi * ai;
            }
            self.fft(&mut w, false);
            self.multiply_symbol(&mut w, j);
            for (acc, wi) in acc_hat.iter_mut().zip(&w) {
                *acc += wi;
            }
        }
        self.fft(&mut acc_hat, true);
        for (oi, a) in out.iter_mut().zip(&acc_hat) {
            *oi += a;
        }
        Ok(out)
    }

    /// Matrix of `D_axis` restricted to one grid line: `c[m]` is the entry
    /// coupling points whose index along the axis differs by `m (mod n)`.
    fn line_kernel(&self, axis: usize, power: i32) -> Vec<C64> {
        let n = self.domain.grid_n;
        let sym = &self.symbols[axis];
        (0..n)
            .map(|m| {
                (0..n)
                    .map(|k| {
                        let ang = 2.0 * PI * (k * m % n) as f64 / n as f64;
                        C64::from_polar(sym[k].powi(power), ang)
                    })
                    .sum::<C64>()
                    / n as f64
            })
            .collect()
    }

    /// Dense matrix of `H_p` in the grid-point basis, assembled from the
    /// line kernels of `D_j` and `D_j²`. Column `j` equals `apply(e_j)`.
    pub fn assemble_dense(&self, cap: usize) -> Result<CMatrix> {
        let dim = self.dim();
        if dim > cap {
            return Err(Error::DenseCap { dim, cap });
        }
        let n = self.domain.grid_n;
        let d = self.domain.d;
        let mut m = CMatrix::zeros(dim, dim);
        for (i, v) in self.v_grid.iter().enumerate() {
            m[(i, i)] += C64::new(*v, 0.0);
        }
        for j in 0..d {
            let c1 = self.line_kernel(j, 1);
            let c2 = self.line_kernel(j, 2);
            let a = &self.a_grid[j];
            let stride = n.pow((d - 1 - j) as u32);
            for row in 0..dim {
                let mi = (row / stride) % n;
                let base = row - mi * stride;
                m[(row, row)] += C64::new(a[row] * a[row], 0.0);
                for mj in 0..n {
                    let col = base + mj * stride;
                    let diff = (mi + n - mj) % n;
                    m[(row, col)] += c2[diff] - c1[diff] * (a[row] + a[col]);
                }
            }
        }
        Ok(m)
    }

    /// Write the dense matrix to `path` in the flat binary layout of
    /// [`CMatrix::write_binary`].
    pub fn export_dense(&self, path: &Path, cap: usize) -> Result<()> {
        self.assemble_dense(cap)?.write_binary(path)
    }

    /// Discrete inner product `Σ conj(u) v · cell volume`.
    pub fn inner(&self, u: &[C64], v: &[C64]) -> C64 {
        crate::linalg::dot(u, v) * self.domain.cell_volume()
    }
}

/// Every eigenvalue of the free operator on this grid, ascending.
pub fn free_spectrum(domain: &TorusDomain, p: f64) -> Vec<f64> {
    let n = domain.grid_n;
    let mut out: Vec<f64> = (0..domain.len())
        .map(|flat| {
            domain
                .multi_index(flat)
                .iter()
                .zip(&domain.periods)
                .map(|(&m, &l)| (2.0 * PI * signed_wavenumber(m, n) as f64 / (p * l)).powi(2))
                .sum()
        })
        .collect();
    out.sort_by(f64::total_cmp);
    out
}

/// Parameters of the grid-sizing rule, see [`grid_size`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridRule {
    /// Multiplier on the classical frequency bound.
    pub c: f64,
    /// Extra points per axis covering the evanescent tail of eigenfunctions.
    pub guard: usize,
}

impl Default for GridRule {
    fn default() -> Self {
        Self { c: 1.0, guard: 8 }
    }
}

/// Smallest even `n ≥ 8` with `n ≥ 4·kmax` and
/// `n ≥ c·p·L·ξ/π + guard`, where `ξ = √(b − min V) + sup|A|` bounds the
/// momentum `|ξ|` of classical states with energy at most `b`.
pub fn grid_size(
    p: f64,
    periods: &[f64],
    b: f64,
    v_min: f64,
    a_sup: f64,
    kmax: i64,
    rule: GridRule,
) -> usize {
    let l = periods.iter().cloned().fold(0.0, f64::max);
    let xi = (b - v_min).max(0.0).sqrt() + a_sup;
    let classical = (rule.c * p * l * xi / PI).ceil() as usize + rule.guard;
    let n = classical.max(4 * kmax.max(0) as usize).max(8);
    n + n % 2
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Mode;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_vec(len: usize, rng: &mut ChaCha8Rng) -> Vec<C64> {
        (0..len).map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect()
    }

    fn generic_operator(n: usize, p: f64) -> SpectralOperator {
        let l = 3.0;
        let periods = [l, l];
        let b = ScalarField::new(
            &periods,
            0.0,
            vec![Mode::new(vec![1, 0], 1.0, 0.0), Mode::new(vec![1, 1], 0.6, 1.0)],
        )
        .unwrap();
        let v = ScalarField::new(&periods, 0.3, vec![Mode::new(vec![0, 1], 0.1, 0.5)]).unwrap();
        let field = MagneticField::planar(b).unwrap();
        build_from_field(&TorusDomain::cubic(2, l, n).unwrap(), &field, &v, p).unwrap()
    }

    fn free_operator(d: usize, l: f64, n: usize, p: f64) -> SpectralOperator {
        let periods = vec![l; d];
        build_operator(
            &TorusDomain::cubic(d, l, n).unwrap(),
            &VectorPotential::zero(&periods),
            &ScalarField::zero(&periods),
            p,
        )
        .unwrap()
    }

    #[test]
    fn constants_are_in_the_free_kernel() {
        let op = free_operator(2, 2.0, 8, 3.0);
        let out = op.apply(&vec![C64::new(1.0, 0.0); 64]).unwrap();
        assert!(out.iter().all(|z| z.norm() < 1e-13));
    }

    #[test]
    fn fourier_modes_are_free_eigenfunctions() {
        let (l, n, p) = (2.5, 12, 2.0);
        let dom = TorusDomain::cubic(3, l, n).unwrap();
        let op = free_operator(3, l, n, p);
        for k in [[1i64, 0, 0], [2, -3, 1], [-6, 5, -6]] {
            let u: Vec<C64> = (0..dom.len())
                .map(|i| {
                    let x = dom.point(i);
                    let ang: f64 = (0..3).map(|j| 2.0 * PI * k[j] as f64 * x[j] / l).sum();
                    C64::from_polar(1.0, ang)
                })
                .collect();
            let lam: f64 = k.iter().map(|&kj| (2.0 * PI * kj as f64 / (p * l)).powi(2)).sum();
            let hu = op.apply(&u).unwrap();
            let err = hu.iter().zip(&u).map(|(a, b)| (a - b * lam).norm()).fold(0.0, f64::max);
            assert!(err < 1e-13 * lam.max(1.0), "k = {k:?}: {err:e}");
        }
    }

    #[test]
    fn apply_is_hermitian() {
        let op = generic_operator(16, 4.0);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..5 {
            let u = random_vec(op.dim(), &mut rng);
            let v = random_vec(op.dim(), &mut rng);
            let lhs = crate::linalg::dot(&op.apply(&u).unwrap(), &v);
            let rhs = crate::linalg::dot(&u, &op.apply(&v).unwrap());
            let scale = crate::linalg::norm(&u) * crate::linalg::norm(&v);
            assert!((lhs - rhs).norm() <= 1e-12 * scale, "{:e}", (lhs - rhs).norm() / scale);
        }
    }

    #[test]
    fn dense_matches_apply() {
        let op = generic_operator(12, 2.5);
        let m = op.assemble_dense(DEFAULT_DENSE_CAP).unwrap();
        assert!(m.hermitian_defect() <= 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let u = random_vec(op.dim(), &mut rng);
            let a = m.matvec(&u);
            let b = op.apply(&u).unwrap();
            let err = a.iter().zip(&b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max);
            assert!(err < 1e-12 * crate::linalg::norm(&u), "{err:e}");
        }
    }

    #[test]
    fn dense_columns_are_unit_responses() {
        let op = generic_operator(8, 1.5);
        let m = op.assemble_dense(64).unwrap();
        for col in [0, 9, 37, 63] {
            let mut e = vec![C64::new(0.0, 0.0); 64];
            e[col] = C64::new(1.0, 0.0);
            let r = op.apply(&e).unwrap();
            for (row, z) in r.iter().enumerate() {
                assert!((m[(row, col)] - z).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn free_dense_is_diagonal_in_fourier_basis() {
        let (l, n, p) = (1.7, 8, 1.0);
        let dom = TorusDomain::cubic(2, l, n).unwrap();
        let op = free_operator(2, l, n, p);
        let m = op.assemble_dense(64).unwrap();
        let modes: Vec<Vec<C64>> = (0..64)
            .map(|kf| {
                let k = dom.multi_index(kf);
                (0..64)
                    .map(|i| {
                        let x = dom.multi_index(i);
                        let ang = 2.0 * PI * (k[0] * x[0] + k[1] * x[1]) as f64 / n as f64;
                        C64::from_polar(1.0 / 8.0, ang)
                    })
                    .collect()
            })
            .collect();
        for a in 0..64 {
            let ma = m.matvec(&modes[a]);
            for b in 0..64 {
                let z = crate::linalg::dot(&modes[b], &ma);
                if a != b {
                    assert!(z.norm() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn constant_potential_shifts_by_c() {
        let op = free_operator(2, 2.0, 8, 2.0);
        let periods = [2.0, 2.0];
        let shifted = build_operator(
            &op.domain,
            &VectorPotential::zero(&periods),
            &ScalarField::constant(&periods, 0.75),
            2.0,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u = random_vec(64, &mut rng);
        let a = op.apply(&u).unwrap();
        let b = shifted.apply(&u).unwrap();
        for ((x, y), z) in a.iter().zip(&b).zip(&u) {
            assert!((y - x - z * 0.75).norm() < 1e-13);
        }
    }

    #[test]
    fn aliasing_and_shape_errors() {
        let periods = [1.0, 1.0];
        let v = ScalarField::new(&periods, 0.0, vec![Mode::new(vec![4, 0], 1.0, 0.0)]).unwrap();
        let dom = TorusDomain::cubic(2, 1.0, 8).unwrap();
        let err = build_operator(&dom, &VectorPotential::zero(&periods), &v, 1.0).unwrap_err();
        assert!(matches!(err, Error::Aliasing { .. }));
        let op = free_operator(2, 1.0, 8, 1.0);
        assert!(matches!(op.apply(&[C64::new(0.0, 0.0); 3]), Err(Error::ShapeMismatch { .. })));
        assert!(matches!(op.assemble_dense(32), Err(Error::DenseCap { .. })));
    }

    #[test]
    fn binary_export_round_trips() {
        let op = generic_operator(8, 2.0);
        let dir = std::env::temp_dir().join(format!("semitrace-export-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("h.bin");
        op.export_dense(&path, 64).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(bytes.len(), 16 + 16 * 64 * 64);
        assert_eq!(u64::from_le_bytes(bytes[0..8].try_into().unwrap()), 64);
        let back = CMatrix::read_binary(&path).unwrap();
        assert_eq!(back, op.assemble_dense(64).unwrap());
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn free_spectrum_counts_lattice_points() {
        let dom = TorusDomain::cubic(2, 1.0, 8).unwrap();
        let spec = free_spectrum(&dom, 1.0);
        assert_eq!(spec[0], 0.0);
        let unit = (2.0 * PI).powi(2);
        assert_eq!(spec.iter().filter(|&&e| e <= unit * 1.0001).count(), 5);
    }

    #[test]
    fn grid_rule_is_even_and_covers_waves() {
        let n = grid_size(40.0, &[2.7, 2.7], 1.0, 0.06, 0.64, 1, GridRule::default());
        assert_eq!(n % 2, 0);
        assert!(n as f64 >= 40.0 * 2.7 * (0.94f64.sqrt() + 0.64) / PI);
        assert_eq!(grid_size(0.1, &[1.0], 1.0, 0.0, 0.0, 5, GridRule::default()), 20);
    }
}
