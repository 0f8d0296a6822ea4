//! Traces `tr φ(H_p)` over a ladder of `p`, each with a resolution certificate.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{LadderConfig, Problem, RunConfig};
use crate::discretize::{build_operator, grid_size, SpectralOperator};
use crate::eig::{dense_hermitian_eig, lanczos_window, tridiagonal_ql, tridiagonalize, EigenWindow, LanczosOptions, Tridiagonal};
use crate::error::{Error, Result};
use crate::hsfc::{build_extension, hs_trace_tridiagonal, AlmostAnalyticExtension, HsQuadrature};
use crate::linalg::C64;
use crate::model::{TestFunction, TorusDomain};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraceMethod {
    Eig,
    Hsfc,
}

impl TraceMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            TraceMethod::Eig => "eig",
            TraceMethod::Hsfc => "hsfc",
        }
    }
}

/// Solver settings shared by every trace evaluation.
#[derive(Debug, Clone)]
pub struct TraceSettings {
    pub dense_cap: usize,
    pub cert_cap: usize,
    pub lanczos: LanczosOptions,
    /// Compute the Helffer–Sjöstrand trace next to the eigenvalue trace.
    pub hsfc: bool,
    pub hs_order: usize,
    pub hs_delta: Option<f64>,
    pub hs_quad: HsQuadrature,
}

impl TraceSettings {
    pub fn from_config(cfg: &RunConfig) -> Self {
        Self {
            dense_cap: cfg.eig.dense_cap,
            cert_cap: cfg.eig.cert_cap,
            lanczos: LanczosOptions {
                max_iter: cfg.eig.lanczos_max_iter,
                tol: cfg.eig.lanczos_tol,
                seed: cfg.seed,
                ..LanczosOptions::default()
            },
            hsfc: cfg.hsfc.enabled,
            hs_order: cfg.hsfc.order,
            hs_delta: cfg.hsfc.delta,
            hs_quad: HsQuadrature { quad_n: cfg.hsfc.quad_n, x_panels: cfg.hsfc.x_panels, y_levels: cfg.hsfc.y_levels },
        }
    }

    pub fn extension(&self, phi: &TestFunction) -> Result<AlmostAnalyticExtension> {
        build_extension(phi, self.hs_order, self.hs_delta.unwrap_or(0.5 * phi.width))
    }
}

/// `Σ φ(λ)` over ascending eigenvalues, so the summation order is fixed.
pub fn phi_sum(phi: &TestFunction, sorted: &[f64]) -> f64 {
    sorted.iter().map(|&l| phi.eval(l)).sum()
}

/// `tr φ(H_p)` by one route. The eigenvalue route falls back to Lanczos on
/// the support of `φ` when the operator is too large to assemble.
pub fn trace_of_phi(op: &SpectralOperator, phi: &TestFunction, method: TraceMethod, settings: &TraceSettings) -> Result<f64> {
    match method {
        TraceMethod::Eig if op.dim() > settings.dense_cap => {
            let win = lanczos_window(op, phi.support(), settings.lanczos)?;
            Ok(phi_sum(phi, &win.eigenvalues))
        }
        TraceMethod::Eig => {
            let eig = dense_hermitian_eig(&op.assemble_dense(settings.dense_cap)?, false)?;
            Ok(phi_sum(phi, &eig.values))
        }
        TraceMethod::Hsfc => {
            let tri = tridiagonalize(op.assemble_dense(settings.dense_cap)?);
            Ok(hs_trace_tridiagonal(&settings.extension(phi)?, &tri, settings.hs_quad).re)
        }
    }
}

/// Weights `w` with `u(x) = Σ_j w_j u_j` for the trigonometric interpolant
/// of grid values, using the same wave numbers as the operator.
pub fn interpolation_row(domain: &TorusDomain, x: &[f64]) -> Vec<C64> {
    let n = domain.grid_n;
    let axes: Vec<Vec<C64>> = x
        .iter()
        .zip(&domain.periods)
        .map(|(&xa, &l)| {
            (0..n)
                .map(|j| {
                    let t = 2.0 * std::f64::consts::PI * (xa - j as f64 * l / n as f64) / l;
                    let s: C64 = (0..n).map(|m| C64::from_polar(1.0, crate::discretize::signed_wavenumber(m, n) as f64 * t)).sum();
                    s / n as f64
                })
                .collect()
        })
        .collect();
    (0..domain.len())
        .map(|flat| domain.multi_index(flat).iter().enumerate().map(|(a, &m)| axes[a][m]).product())
        .collect()
}

/// Bounds that enter the grid rule, taken from samples of the fields.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProblemScale {
    pub v_min: f64,
    pub a_sup: f64,
    pub kmax: i64,
}

pub fn problem_scale(problem: &Problem, sample_n: usize) -> Result<ProblemScale> {
    let dom = problem.domain.with_grid(sample_n)?;
    let v = problem.scalar.sample(&dom)?;
    let a: Vec<Vec<f64>> = problem.potential.comps.iter().map(|c| c.sample(&dom)).collect::<Result<_>>()?;
    let a_sup = (0..dom.len()).map(|i| a.iter().map(|c| c[i] * c[i]).sum::<f64>().sqrt()).fold(0.0, f64::max);
    Ok(ProblemScale {
        v_min: v.iter().cloned().fold(f64::INFINITY, f64::min),
        a_sup,
        kmax: problem.potential.max_wavenumber().max(problem.scalar.max_wavenumber()),
    })
}

/// Grid for one rung: what the rule asks for and what the dense cap allows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RungPlan {
    pub rule_grid_n: usize,
    pub grid_n: usize,
}

fn largest_grid(d: usize, cap: usize) -> usize {
    let mut n = 8;
    while (n + 2usize).pow(d as u32) <= cap {
        n += 2;
    }
    n
}

pub fn plan_rung(problem: &Problem, scale: &ProblemScale, p: f64, ladder: &LadderConfig, cap: usize) -> RungPlan {
    let (_, b) = problem.phi.support();
    let rule = ladder.grid_n.unwrap_or_else(|| {
        grid_size(p, &problem.domain.periods, b, scale.v_min, scale.a_sup, scale.kmax, ladder.grid_rule)
    });
    RungPlan { rule_grid_n: rule, grid_n: rule.min(largest_grid(problem.domain.d, cap)) }
}

/// Window eigenvalues on the grid `n + cert_step` against those on `n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub grid_n: usize,
    /// Eigenvalues compared, counted from the bottom up to `sup supp φ`.
    pub compared: usize,
    pub defect: f64,
    pub tol: f64,
    pub passed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

fn certify(
    problem: &Problem,
    p: f64,
    coarse: &[f64],
    plan: RungPlan,
    ladder: &LadderConfig,
    settings: &TraceSettings,
) -> Result<Certificate> {
    let (_, b) = problem.phi.support();
    let n2 = plan.grid_n + ladder.cert_step;
    let mut cert = Certificate { grid_n: n2, compared: 0, defect: f64::INFINITY, tol: ladder.cert_tol, passed: false, note: None };
    if n2.pow(problem.domain.d as u32) > settings.cert_cap {
        cert.note = Some(format!("certificate grid {n2} exceeds the certificate cap {}", settings.cert_cap));
        return Ok(cert);
    }
    let dom = problem.domain.with_grid(n2)?;
    let op = build_operator(&dom, &problem.potential, &problem.scalar, p)?;
    let fine = dense_hermitian_eig(&op.assemble_dense(settings.cert_cap)?, false)?.values;
    let count = |v: &[f64]| v.iter().take_while(|&&l| l <= b).count();
    // An eigenvalue close to `b` may sit on either side on the two grids, so
    // the larger count is compared.
    let k = count(coarse).max(count(&fine));
    if k >= coarse.len() {
        cert.note = Some("every eigenvalue of the coarse grid lies below the window top".into());
        return Ok(cert);
    }
    cert.compared = k;
    cert.defect = coarse[..k].iter().zip(&fine[..k]).map(|(a, f)| (a - f).abs()).fold(0.0, f64::max);
    cert.passed = cert.defect <= cert.tol;
    Ok(cert)
}

/// Rows `w(x)^T Q` for each point; QL then turns them into `w(x)^T Q Z`,
/// the eigenvectors sampled at `x`.
pub(super) fn kernel_rows(tri: &Tridiagonal, dom: &TorusDomain, points: &[Vec<f64>]) -> Vec<C64> {
    let mut rows = Vec::with_capacity(points.len() * dom.len());
    for x in points {
        let mut y: Vec<C64> = interpolation_row(dom, x).iter().map(|z| z.conj()).collect();
        tri.apply_q_adjoint(&mut y);
        rows.extend(y.into_iter().map(|z| z.conj()));
    }
    rows
}

/// `Σ_k φ(λ_k) |ψ_k(x)|²` from the rotated rows, with `ψ_k` normalized in L².
pub(super) fn kernel_from_rows(values: &[f64], rows: &[C64], phi: &TestFunction, cell: f64) -> Vec<f64> {
    let weights: Vec<f64> = values.iter().map(|&l| phi.eval(l)).collect();
    rows.chunks(values.len())
        .map(|r| r.iter().zip(&weights).map(|(z, w)| w * z.norm_sqr()).sum::<f64>() / cell)
        .collect()
}

/// One rung of the ladder.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LadderEntry {
    pub p: f64,
    pub trace: f64,
    pub method: TraceMethod,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace_hsfc: Option<f64>,
    /// Imaginary part of the Helffer–Sjöstrand trace (rounding diagnostic).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hsfc_imag: Option<f64>,
    pub grid_n: usize,
    pub rule_grid_n: usize,
    pub dim: usize,
    /// Eigenvalues inside `supp φ`.
    pub window_count: usize,
    pub certificate: Certificate,
    /// Diagonal kernel `K(x, x)` at the sample points, if requested.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kernel: Option<Vec<f64>>,
    /// Eigenvalues up to `sup supp φ`.
    #[serde(skip)]
    pub eigenvalues: Vec<f64>,
}

impl LadderEntry {
    /// `|T_eig − T_hsfc| / |T_eig|`.
    pub fn dual_route_defect(&self) -> Option<f64> {
        self.trace_hsfc.map(|h| (self.trace - h).abs() / self.trace.abs().max(f64::MIN_POSITIVE))
    }

    pub fn window(&self, phi: &TestFunction) -> EigenWindow {
        let (a, b) = phi.support();
        let eigenvalues: Vec<f64> = self.eigenvalues.iter().cloned().filter(|&l| l > a).collect();
        EigenWindow { window: (a, b), residuals: vec![None; eigenvalues.len()], eigenvalues, eigenvectors: None, cell_volume: 0.0 }
    }
}

/// Trace (both routes), optional diagonal kernel at `points` (physical
/// coordinates) and certificate for one `p`. Dense only.
pub fn compute_rung(
    problem: &Problem,
    p: f64,
    plan: RungPlan,
    ladder: &LadderConfig,
    settings: &TraceSettings,
    points: &[Vec<f64>],
) -> Result<LadderEntry> {
    let started = std::time::Instant::now();
    let phi = &problem.phi;
    let (a, b) = phi.support();
    let dom = problem.domain.with_grid(plan.grid_n)?;
    let op = build_operator(&dom, &problem.potential, &problem.scalar, p)?;
    let dim = op.dim();
    let tri = tridiagonalize(op.assemble_dense(settings.dense_cap)?);
    drop(op);
    let mut rows = kernel_rows(&tri, &dom, points);
    let mut values = tri.diag.clone();
    tridiagonal_ql(&mut values, &tri.offdiag, &mut rows)?;
    let kernel = (!points.is_empty()).then(|| kernel_from_rows(&values, &rows, phi, dom.cell_volume()));
    let (trace_hsfc, hsfc_imag) = if settings.hsfc {
        let t = hs_trace_tridiagonal(&settings.extension(phi)?, &tri, settings.hs_quad);
        (Some(t.re), Some(t.im))
    } else {
        (None, None)
    };
    drop(tri);
    values.sort_by(f64::total_cmp);
    let trace = phi_sum(phi, &values);
    let window_count = values.iter().filter(|&&l| l > a && l < b).count();
    let certificate = certify(problem, p, &values, plan, ladder, settings)?;
    values.retain(|&l| l <= b);
    log::info!(
        "p = {p}: n = {} (rule {}), {window_count} eigenvalues in window, trace {trace:.12e}, certificate {:.2e}, {:.1?}",
        plan.grid_n,
        plan.rule_grid_n,
        certificate.defect,
        started.elapsed()
    );
    Ok(LadderEntry {
        p,
        trace,
        method: TraceMethod::Eig,
        trace_hsfc,
        hsfc_imag,
        grid_n: plan.grid_n,
        rule_grid_n: plan.rule_grid_n,
        dim,
        window_count,
        certificate,
        kernel,
        eigenvalues: values,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceLadder {
    pub d: usize,
    pub entries: Vec<LadderEntry>,
}

impl TraceLadder {
    pub fn ps(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.p).collect()
    }

    /// `T(p) p^{−d}` per rung.
    pub fn scaled(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.trace * e.p.powi(-(self.d as i32))).collect()
    }

    pub fn certified(&self) -> bool {
        self.entries.iter().all(|e| e.certificate.passed)
    }

    /// Largest relative eig/hsfc disagreement over rungs where both ran.
    pub fn dual_route_defect(&self) -> Option<f64> {
        self.entries.iter().filter_map(|e| e.dual_route_defect()).reduce(f64::max)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let io = |e| Error::io(path, e);
        let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
        writeln!(f, "p,T,method,grid_n").map_err(io)?;
        for e in &self.entries {
            writeln!(f, "{},{:.17e},{},{}", e.p, e.trace, e.method.as_str(), e.grid_n).map_err(io)?;
            if let Some(h) = e.trace_hsfc {
                writeln!(f, "{},{:.17e},{},{}", e.p, h, TraceMethod::Hsfc.as_str(), e.grid_n).map_err(io)?;
            }
        }
        f.flush().map_err(io)
    }
}

/// Every rung of `cfg.ladder`, in parallel. Kernel samples are taken on
/// rungs with `p ≤ kernel.max_p`.
pub fn compute_ladder(problem: &Problem, cfg: &RunConfig) -> Result<TraceLadder> {
    let settings = TraceSettings::from_config(cfg);
    let scale = problem_scale(problem, cfg.checks.coeff_grid_n)?;
    let points = kernel_points(problem, cfg);
    let entries = cfg
        .ladder
        .ps
        .par_iter()
        .map(|&p| {
            let plan = plan_rung(problem, &scale, p, &cfg.ladder, settings.dense_cap);
            let pts: &[Vec<f64>] = if cfg.kernel.enabled && p <= cfg.kernel.max_p { &points } else { &[] };
            compute_rung(problem, p, plan, &cfg.ladder, &settings, pts).map_err(|e| e.at_stage(&format!("trace at p = {p}")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TraceLadder { d: problem.domain.d, entries })
}

/// Kernel sample points in physical coordinates.
pub fn kernel_points(problem: &Problem, cfg: &RunConfig) -> Vec<Vec<f64>> {
    cfg.kernel
        .points
        .iter()
        .map(|f| f.iter().zip(&problem.domain.periods).map(|(t, l)| t * l).collect())
        .collect()
}
