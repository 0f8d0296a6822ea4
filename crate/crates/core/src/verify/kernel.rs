//! Diagonal kernel `K_{φ(H_p)}(x, x)` and its pointwise expansion.

use serde::{Deserialize, Serialize};

use crate::coeffs::{f0_pointwise, f2_pointwise};
use crate::config::Problem;
use crate::discretize::{build_operator, SpectralOperator};
use crate::eig::{tridiagonal_ql, tridiagonalize};
use crate::error::{Error, Result};
use crate::gauge::loglog_slope;
use crate::model::TestFunction;

use super::ladder::{kernel_from_rows, kernel_rows, phi_sum, TraceLadder};

/// `K(x, x)` at physical points `x` and the trace from the same eigenvalues.
pub fn diagonal_kernel(op: &SpectralOperator, phi: &TestFunction, points: &[Vec<f64>], cap: usize) -> Result<(Vec<f64>, f64)> {
    let tri = tridiagonalize(op.assemble_dense(cap)?);
    let mut rows = kernel_rows(&tri, &op.domain, points);
    let mut values = tri.diag.clone();
    tridiagonal_ql(&mut values, &tri.offdiag, &mut rows)?;
    let kernel = kernel_from_rows(&values, &rows, phi, op.domain.cell_volume());
    values.sort_by(f64::total_cmp);
    Ok((kernel, phi_sum(phi, &values)))
}

/// Residual `|p^{−d} K(x,x) − f₀(x) − p^{−2} f₂(x)|` along the ladder.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KernelStudy {
    pub points: Vec<Vec<f64>>,
    pub ps: Vec<f64>,
    /// `kernel[i][j]` at `ps[i]`, `points[j]`
    pub kernel: Vec<Vec<f64>>,
    pub f0: Vec<f64>,
    pub f2: Vec<f64>,
    pub residual: Vec<Vec<f64>>,
    /// Observed decay order per point, `−d log R / d log p`.
    pub orders: Vec<f64>,
    pub min_order: f64,
}

pub fn kernel_study(ladder: &TraceLadder, problem: &Problem, points: &[Vec<f64>]) -> Result<KernelStudy> {
    let rungs: Vec<_> = ladder.entries.iter().filter(|e| e.kernel.is_some()).collect();
    if rungs.len() < 3 {
        return Err(Error::config("kernel.max_p", format!("{} rungs carry kernel samples; need at least 3", rungs.len())));
    }
    let d = ladder.d as i32;
    let f0 = points.iter().map(|x| f0_pointwise(&problem.scalar, x, &problem.phi)).collect::<Result<Vec<_>>>()?;
    let f2 = points
        .iter()
        .map(|x| f2_pointwise(&problem.field, &problem.scalar, x, &problem.phi))
        .collect::<Result<Vec<_>>>()?;
    let ps: Vec<f64> = rungs.iter().map(|e| e.p).collect();
    let kernel: Vec<Vec<f64>> = rungs.iter().map(|e| e.kernel.clone().expect("filtered")).collect();
    let residual: Vec<Vec<f64>> = ps
        .iter()
        .zip(&kernel)
        .map(|(&p, k)| (0..points.len()).map(|j| (k[j] * p.powi(-d) - f0[j] - f2[j] / (p * p)).abs()).collect())
        .collect();
    let orders: Vec<f64> = (0..points.len())
        .map(|j| -loglog_slope(&ps, &residual.iter().map(|r| r[j]).collect::<Vec<_>>()))
        .collect();
    let min_order = orders.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(KernelStudy { points: points.to_vec(), ps, kernel, f0, f2, residual, orders, min_order })
}

/// Grid integral of the diagonal kernel against the trace at one `p`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KernelConsistency {
    pub p: f64,
    pub grid_n: usize,
    pub trace: f64,
    pub kernel_integral: f64,
    pub rel_defect: f64,
}

pub fn kernel_consistency(problem: &Problem, p: f64, grid_n: usize, cap: usize) -> Result<KernelConsistency> {
    let dom = problem.domain.with_grid(grid_n)?;
    let op = build_operator(&dom, &problem.potential, &problem.scalar, p)?;
    let points: Vec<Vec<f64>> = (0..dom.len()).map(|i| dom.point(i)).collect();
    let (kernel, trace) = diagonal_kernel(&op, &problem.phi, &points, cap)?;
    let kernel_integral = kernel.iter().sum::<f64>() * dom.cell_volume();
    Ok(KernelConsistency {
        p,
        grid_n,
        trace,
        kernel_integral,
        rel_defect: (kernel_integral - trace).abs() / trace.abs().max(f64::MIN_POSITIVE),
    })
}
