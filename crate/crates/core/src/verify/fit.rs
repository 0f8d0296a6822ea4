//! Least-squares fit of `T(p) p^{−d} ≈ Σ_r c_r p^{−r}`.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::ladder::TraceLadder;

/// Smallest ladder the main fit accepts.
pub const MIN_FIT_POINTS: usize = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitCoefficient {
    pub r: usize,
    pub value: f64,
    pub stderr: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub analytic: Option<f64>,
    /// `|c_r − f_r| / |f_r|`, or relative to `|f₀|` when `f_r` vanishes.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rel_err: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpansionFit {
    pub orders: Vec<usize>,
    pub ps: Vec<f64>,
    pub coefficients: Vec<FitCoefficient>,
    pub residual_norm: f64,
    pub condition_number: f64,
}

/// Uniform-weight least squares of `ys` against `p^{−r}`, `r ∈ orders`.
/// Standard errors use the residual variance with `m − k` degrees of freedom.
pub fn least_squares_fit(ps: &[f64], ys: &[f64], orders: &[usize]) -> Result<ExpansionFit> {
    let (m, k) = (ps.len(), orders.len());
    if ys.len() != m {
        return Err(Error::ShapeMismatch { expected: m, got: ys.len() });
    }
    if k == 0 || m < k + 2 {
        return Err(Error::RankDeficient(format!("{m} points for {k} coefficients; need at least {}", k + 2)));
    }
    let x = DMatrix::from_fn(m, k, |i, j| ps[i].powi(-(orders[j] as i32)));
    let y = DVector::from_column_slice(ys);
    let svd = x.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > 1e-13 * smax) {
        return Err(Error::RankDeficient(format!("design matrix singular values {smax:e} .. {smin:e}")));
    }
    let c = svd.solve(&y, 0.0).map_err(|e| Error::RankDeficient(e.to_string()))?;
    let resid = &y - &x * &c;
    let rss = resid.norm_squared();
    let sigma2 = rss / (m - k) as f64;
    let v_t = svd.v_t.as_ref().expect("requested");
    let coefficients = (0..k)
        .map(|j| {
            let var: f64 = (0..k).map(|s| (v_t[(s, j)] / svd.singular_values[s]).powi(2)).sum::<f64>() * sigma2;
            FitCoefficient { r: orders[j], value: c[j], stderr: var.sqrt(), analytic: None, rel_err: None }
        })
        .collect();
    Ok(ExpansionFit {
        orders: orders.to_vec(),
        ps: ps.to_vec(),
        coefficients,
        residual_norm: rss.sqrt(),
        condition_number: smax / smin,
    })
}

fn require_certified(ladder: &TraceLadder) -> Result<()> {
    if let Some(e) = ladder.entries.iter().find(|e| !e.certificate.passed) {
        return Err(Error::Resolution(format!(
            "resolution certificate failed at p = {} (grid {}, defect {:e})",
            e.p, e.grid_n, e.certificate.defect
        )));
    }
    Ok(())
}

/// Fit over the whole ladder. Needs at least six certified rungs.
pub fn expansion_fit(ladder: &TraceLadder, orders: &[usize]) -> Result<ExpansionFit> {
    require_certified(ladder)?;
    if ladder.entries.len() < MIN_FIT_POINTS {
        return Err(Error::RankDeficient(format!(
            "{} ladder points; the fit needs at least {MIN_FIT_POINTS}",
            ladder.entries.len()
        )));
    }
    least_squares_fit(&ladder.ps(), &ladder.scaled(), orders)
}

/// Fit over the upper half of the ladder (largest `p`).
pub fn upper_half_fit(ladder: &TraceLadder, orders: &[usize]) -> Result<ExpansionFit> {
    require_certified(ladder)?;
    let start = ladder.entries.len() / 2;
    least_squares_fit(&ladder.ps()[start..], &ladder.scaled()[start..], orders)
}

/// Worst shift of `c₀` over refits on every subset that keeps at least 80%
/// of the rungs, in units of the full fit's standard error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetStability {
    pub subset_size: usize,
    pub subsets: usize,
    pub max_shift_stderr: f64,
}

pub fn subset_stability(ladder: &TraceLadder, orders: &[usize]) -> Result<SubsetStability> {
    let full = expansion_fit(ladder, orders)?;
    let c0 = full.coefficient(0).ok_or_else(|| Error::config("fit.orders", "order 0 is required"))?;
    let ps = ladder.ps();
    let ys = ladder.scaled();
    let m = ps.len();
    if m > 24 {
        return Err(Error::config("ladder.ps", "subset refits support at most 24 rungs"));
    }
    let drop = (m / 5).max(1);
    let mut worst: f64 = 0.0;
    let mut subsets = 0;
    for mask in 0u32..1 << m {
        if mask.count_ones() as usize != drop {
            continue;
        }
        let keep: Vec<usize> = (0..m).filter(|i| mask & (1 << i) == 0).collect();
        let sub_p: Vec<f64> = keep.iter().map(|&i| ps[i]).collect();
        let sub_y: Vec<f64> = keep.iter().map(|&i| ys[i]).collect();
        let fit = least_squares_fit(&sub_p, &sub_y, orders)?;
        let shift = (fit.coefficient(0).expect("same orders").value - c0.value).abs() / c0.stderr.max(f64::MIN_POSITIVE);
        worst = worst.max(shift);
        subsets += 1;
    }
    Ok(SubsetStability { subset_size: m - drop, subsets, max_shift_stderr: worst })
}

impl ExpansionFit {
    /// `Σ c_r p^{−r}`.
    pub fn eval(&self, p: f64) -> f64 {
        self.coefficients.iter().map(|c| c.value * p.powi(-(c.r as i32))).sum()
    }

    pub fn coefficient(&self, r: usize) -> Option<&FitCoefficient> {
        self.coefficients.iter().find(|c| c.r == r)
    }

    /// Attach analytic targets `f_r` (index = r) and relative errors.
    pub fn attach_targets(&mut self, targets: &[Option<f64>]) {
        let scale = targets.first().copied().flatten().map(f64::abs);
        for c in &mut self.coefficients {
            let Some(Some(f)) = targets.get(c.r).copied() else {
                continue;
            };
            c.analytic = Some(f);
            let denom = match scale {
                Some(s) if f.abs() <= 1e-12 * s => s,
                _ => f.abs(),
            };
            c.rel_err = Some((c.value - f).abs() / denom);
        }
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let io = |e| Error::io(path, e);
        let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
        writeln!(f, "r,c_r,stderr,analytic,rel_err").map_err(io)?;
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.12e}")).unwrap_or_default();
        for c in &self.coefficients {
            writeln!(f, "{},{:.12e},{:.6e},{},{}", c.r, c.value, c.stderr, opt(c.analytic), opt(c.rel_err)).map_err(io)?;
        }
        f.flush().map_err(io)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::verify::ladder::{Certificate, LadderEntry, TraceMethod};
    use proptest::prelude::*;

    const PS: [f64; 8] = [8.0, 10.0, 12.0, 16.0, 20.0, 24.0, 32.0, 40.0];

    fn ladder_from(ps: &[f64], scaled: impl Fn(f64) -> f64) -> TraceLadder {
        let entries = ps
            .iter()
            .map(|&p| LadderEntry {
                p,
                trace: scaled(p) * p * p,
                method: TraceMethod::Eig,
                trace_hsfc: None,
                hsfc_imag: None,
                grid_n: 16,
                rule_grid_n: 16,
                dim: 256,
                window_count: 1,
                certificate: Certificate { grid_n: 20, compared: 1, defect: 0.0, tol: 1e-8, passed: true, note: None },
                kernel: None,
                eigenvalues: Vec::new(),
            })
            .collect();
        TraceLadder { d: 2, entries }
    }

    #[test]
    fn exact_model_is_recovered() {
        let ladder = ladder_from(&PS, |p| 1.0 + 0.5 / (p * p));
        let fit = expansion_fit(&ladder, &[0, 1, 2, 3]).unwrap();
        let want = [1.0, 0.0, 0.5, 0.0];
        for (c, w) in fit.coefficients.iter().zip(want) {
            assert!((c.value - w).abs() < 1e-10, "{c:?}");
        }
        assert!(fit.residual_norm < 1e-13);
        assert!(fit.condition_number > 1.0);
    }

    #[test]
    fn fourth_order_term_biases_c2_less_than_upper_half_shows() {
        let ladder = ladder_from(&PS, |p| 1.0 + 0.5 / (p * p) + 1.0 / p.powi(4));
        let full = expansion_fit(&ladder, &[0, 1, 2, 3]).unwrap();
        let c2 = full.coefficient(2).unwrap().value;
        // Bias of order (max p)^{-2} times the p^{-4} coefficient, with a modest constant.
        assert!((c2 - 0.5).abs() <= 10.0 / (8.0 * 8.0), "{c2}");
        let upper = upper_half_fit(&ladder, &[0, 2]).unwrap();
        let c2u = upper.coefficient(2).unwrap().value;
        assert!((c2u - 0.5).abs() < 2.0 / (20.0 * 20.0));
    }

    #[test]
    fn too_few_points_or_uncertified_rungs_are_refused() {
        let short = ladder_from(&PS[..5], |_| 1.0);
        assert!(matches!(expansion_fit(&short, &[0, 1, 2, 3]), Err(Error::RankDeficient(_))));
        let mut bad = ladder_from(&PS, |_| 1.0);
        bad.entries[3].certificate.passed = false;
        assert!(matches!(expansion_fit(&bad, &[0, 2]), Err(Error::Resolution(_))));
        assert!(matches!(least_squares_fit(&[2.0, 2.0, 2.0], &[1.0, 1.0, 1.0], &[0]), Ok(_)));
        assert!(matches!(least_squares_fit(&[2.0; 4], &[1.0; 4], &[0, 1]), Err(Error::RankDeficient(_))));
    }

    #[test]
    fn stderr_matches_textbook_line_fit() {
        // y = a + b x with x = 1/p for order set {0, 1}.
        let ps = [1.0, 2.0, 4.0, 5.0, 10.0];
        let ys = [1.2, 0.9, 1.1, 0.8, 1.0];
        let fit = least_squares_fit(&ps, &ys, &[0, 1]).unwrap();
        let xs: Vec<f64> = ps.iter().map(|p| 1.0 / p).collect();
        let n = xs.len() as f64;
        let mx = xs.iter().sum::<f64>() / n;
        let my = ys.iter().sum::<f64>() / n;
        let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
        let b = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / sxx;
        let a = my - b * mx;
        let rss: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - a - b * x).powi(2)).sum();
        let s2 = rss / (n - 2.0);
        let se_b = (s2 / sxx).sqrt();
        let se_a = (s2 * (1.0 / n + mx * mx / sxx)).sqrt();
        let c = &fit.coefficients;
        assert!((c[0].value - a).abs() < 1e-12 && (c[1].value - b).abs() < 1e-12);
        assert!((c[0].stderr - se_a).abs() < 1e-12 && (c[1].stderr - se_b).abs() < 1e-12);
    }

    #[test]
    fn targets_and_csv() {
        let ladder = ladder_from(&PS, |p| 2.0 - 1.0 / (p * p));
        let mut fit = expansion_fit(&ladder, &[0, 1, 2, 3]).unwrap();
        fit.attach_targets(&[Some(2.0), Some(0.0), Some(-1.1)]);
        let c = &fit.coefficients;
        assert!(c[0].rel_err.unwrap() < 1e-10);
        assert!(c[1].rel_err.unwrap() < 1e-8);
        assert!((c[2].rel_err.unwrap() - 0.1 / 1.1).abs() < 1e-8);
        assert!(c[3].analytic.is_none());
        let path = std::env::temp_dir().join(format!("fit-{}.csv", std::process::id()));
        fit.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        std::fs::remove_file(&path).ok();
        assert_eq!(text.lines().count(), 5);
        assert!(text.lines().nth(4).unwrap().ends_with(",,"));
    }

    proptest! {
        #[test]
        fn fit_is_linear_in_the_data(s in -5.0f64..5.0, c0 in 0.1f64..3.0, c2 in -2.0f64..2.0) {
            let base = ladder_from(&PS, |p| c0 + c2 / (p * p) + 0.3 / p.powi(4));
            let scaled = ladder_from(&PS, |p| s * (c0 + c2 / (p * p) + 0.3 / p.powi(4)));
            let a = expansion_fit(&base, &[0, 1, 2, 3]).unwrap();
            let b = expansion_fit(&scaled, &[0, 1, 2, 3]).unwrap();
            for (x, y) in a.coefficients.iter().zip(&b.coefficients) {
                prop_assert!((s * x.value - y.value).abs() <= 1e-9 * (1.0 + x.value.abs()));
            }
        }

        #[test]
        fn subset_refits_cover_every_single_drop(noise in proptest::collection::vec(-1.0f64..1.0, 8)) {
            let ladder = ladder_from(&PS, |p| {
                let i = PS.iter().position(|&q| q == p).unwrap();
                1.0 - 0.3 / (p * p) + 1e-7 * noise[i]
            });
            let st = subset_stability(&ladder, &[0, 1, 2, 3]).unwrap();
            prop_assert_eq!((st.subset_size, st.subsets), (7, 8));
            prop_assert!(st.max_shift_stderr.is_finite());
        }
    }
}
