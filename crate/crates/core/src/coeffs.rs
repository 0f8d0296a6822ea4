//! Leading coefficients of the semiclassical trace expansion.
//!
//! `tr φ(H_p) ≈ p^d (f₀(φ) + f₁(φ)/p + f₂(φ)/p² + …)` with `f_r(φ) = ∫ f_r(x) dx`.
//! The pointwise densities are ξ-integrals of derivatives of `φ` shifted by
//! `V(x)`; they are reduced to one radial integral each.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{MagneticField, ScalarField, TestFunction, TorusDomain};
use crate::quad;

const ABS_TOL: f64 = 1e-14;
const REL_TOL: f64 = 1e-13;

fn half_gamma(d: usize) -> f64 {
    // Γ(d/2) from Γ(1) = 1 and Γ(1/2) = √π.
    let (mut g, mut a) = if d % 2 == 0 { (1.0, 1.0) } else { (PI.sqrt(), 0.5) };
    while a + 0.5 < d as f64 / 2.0 {
        g *= a;
        a += 1.0;
    }
    g
}

/// `∫_{ℝ^d} g(|ξ|²) dξ = π^{d/2}/Γ(d/2) ∫₀^∞ g(t) t^{d/2−1} dt`.
///
/// `support` bounds the set where `g` may be nonzero. For odd `d` the
/// square-root weight is removed by `t = s²`.
pub fn radial_xi_integral<G: Fn(f64) -> f64>(g: G, support: (f64, f64), d: usize) -> Result<f64> {
    let (lo, hi) = support;
    if !(lo.is_finite() && hi.is_finite()) {
        return Err(Error::UnboundedSupport);
    }
    if d == 0 {
        return Err(Error::UnsupportedOrder { order: d, what: "radial integral dimension".into() });
    }
    let lo = lo.max(0.0);
    if hi <= lo {
        return Ok(0.0);
    }
    let pref = PI.powf(d as f64 / 2.0) / half_gamma(d);
    let value = if d % 2 == 0 {
        let m = (d / 2 - 1) as i32;
        quad::adaptive(|t| g(t) * t.powi(m), lo, hi, ABS_TOL, REL_TOL).0
    } else {
        let m = (d - 1) as i32;
        quad::adaptive(|s| 2.0 * g(s * s) * s.powi(m), lo.sqrt(), hi.sqrt(), ABS_TOL, REL_TOL).0
    };
    Ok(pref * value)
}

/// `(2π)^{−d} ∫ φ^{(k)}(|ξ|² + v) dξ`.
pub fn xi_moment(phi: &TestFunction, k: usize, v: f64, d: usize) -> Result<f64> {
    phi.deriv(0.0, k)?;
    let (a, b) = phi.support();
    let g = |t: f64| phi.deriv(t + v, k).expect("order checked");
    Ok(radial_xi_integral(g, (a - v, b - v), d)? / (2.0 * PI).powi(d as i32))
}

pub fn f0_pointwise(v: &ScalarField, x0: &[f64], phi: &TestFunction) -> Result<f64> {
    xi_moment(phi, 0, v.eval(x0), v.dim())
}

/// Always zero: there is no first-order correction on a flat torus.
pub fn f1_pointwise(_x0: &[f64]) -> f64 {
    0.0
}

/// `½ Σ_{jk} B_{kj}²` at a point.
fn field_energy(b: &MagneticField, x0: &[f64]) -> f64 {
    0.5 * b.matrix(x0).iter().flatten().map(|v| v * v).sum::<f64>()
}

fn f2_from_jet(phi: &TestFunction, d: usize, v: f64, grad_sq: f64, lap: f64, energy: f64) -> Result<f64> {
    let mut out = 0.0;
    if grad_sq != 0.0 {
        out -= grad_sq / 12.0 * xi_moment(phi, 3, v, d)?;
    }
    if energy + lap != 0.0 {
        out -= (energy + lap) / 6.0 * xi_moment(phi, 2, v, d)?;
    }
    Ok(out)
}

pub fn f2_pointwise(b: &MagneticField, v: &ScalarField, x0: &[f64], phi: &TestFunction) -> Result<f64> {
    let grad_sq: f64 = v.gradient(x0).iter().map(|g| g * g).sum();
    let lap = v.laplacian().eval(x0);
    f2_from_jet(phi, v.dim(), v.eval(x0), grad_sq, lap, field_energy(b, x0))
}

/// Pointwise coefficient `f_r` sampled on the domain grid.
#[derive(Debug, Clone, Serialize)]
pub struct CoefficientField {
    pub order: usize,
    pub domain: TorusDomain,
    pub values: Vec<f64>,
    pub phi: TestFunction,
}

impl CoefficientField {
    /// Trapezoid rule on the periodic grid.
    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64 * self.domain.volume()
    }
}

pub fn coefficient_field(
    r: usize,
    b: &MagneticField,
    v: &ScalarField,
    phi: &TestFunction,
    domain: &TorusDomain,
) -> Result<CoefficientField> {
    if v.dim() != domain.d || b.periods().len() != domain.d {
        return Err(Error::InvalidDomain("field dimension does not match the domain".into()));
    }
    let values = match r {
        0 => (0..domain.len())
            .into_par_iter()
            .map(|i| f0_pointwise(v, &domain.point(i), phi))
            .collect::<Result<Vec<_>>>()?,
        1 => vec![0.0; domain.len()],
        2 => {
            let lap = v.laplacian();
            (0..domain.len())
                .into_par_iter()
                .map(|i| {
                    let x = domain.point(i);
                    let grad_sq: f64 = v.gradient(&x).iter().map(|g| g * g).sum();
                    f2_from_jet(phi, domain.d, v.eval(&x), grad_sq, lap.eval(&x), field_energy(b, &x))
                })
                .collect::<Result<Vec<_>>>()?
        }
        _ => return Err(Error::UnsupportedOrder { order: r, what: "expansion coefficient".into() }),
    };
    Ok(CoefficientField { order: r, domain: domain.clone(), values, phi: phi.clone() })
}

/// `f_r(φ) = ∫ f_r(x) dx` over the torus.
pub fn trace_coefficient(
    r: usize,
    b: &MagneticField,
    v: &ScalarField,
    phi: &TestFunction,
    domain: &TorusDomain,
) -> Result<f64> {
    Ok(coefficient_field(r, b, v, phi, domain)?.integral())
}

/// Rows `index, x_1..x_d, f0, f1, f2` for fields of orders 0, 1, 2 on a shared grid.
pub fn write_coefficient_csv(fields: &[CoefficientField; 3], path: &Path) -> Result<()> {
    let dom = &fields[0].domain;
    if fields.iter().enumerate().any(|(r, f)| f.order != r || f.domain != *dom) {
        return Err(Error::InvalidDomain("coefficient fields must share a grid and have orders 0, 1, 2".into()));
    }
    let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    let mut header = String::from("index");
    for j in 0..dom.d {
        header.push_str(&format!(",x{}", j + 1));
    }
    header.push_str(",f0,f1,f2");
    writeln!(out, "{header}").map_err(|e| Error::io(path, e))?;
    for i in 0..dom.len() {
        let coords: Vec<String> = dom.point(i).iter().map(|x| format!("{x:.12e}")).collect();
        writeln!(
            out,
            "{i},{},{:.15e},{:.15e},{:.15e}",
            coords.join(","),
            fields[0].values[i],
            fields[1].values[i],
            fields[2].values[i]
        )
        .map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Mode;
    use crate::quad::GaussLegendre;
    use proptest::prelude::*;

    // Uniform field. Pointwise coefficients are local, so the flux condition
    // needed for a periodic potential does not matter here.
    fn planar(b0: f64, l: f64) -> MagneticField {
        MagneticField { d: 2, upper: vec![ScalarField::constant(&[l, l], b0)] }
    }

    fn wavy_v(l: f64) -> ScalarField {
        ScalarField::new(
            &[l, l],
            0.3,
            vec![Mode::new(vec![1, 0], 0.15, 0.0), Mode::new(vec![0, 1], 0.05, -0.08), Mode::new(vec![1, -1], 0.04, 0.02)],
        )
        .unwrap()
    }

    // Composite Gauss-Legendre over the square [-r, r]^2.
    fn tensor_2d<G: Fn(f64) -> f64>(g: G, r: f64, panels: usize) -> f64 {
        let gl = GaussLegendre::new(20);
        let h = 2.0 * r / panels as f64;
        let mut nodes = Vec::new();
        for p in 0..panels {
            let a = -r + h * p as f64;
            for (x, w) in gl.nodes.iter().zip(&gl.weights) {
                nodes.push((a + 0.5 * h * (x + 1.0), 0.5 * h * w));
            }
        }
        let mut s = 0.0;
        for &(x, wx) in &nodes {
            for &(y, wy) in &nodes {
                s += wx * wy * g(x * x + y * y);
            }
        }
        s
    }

    #[test]
    fn gamma_prefactors() {
        assert!((half_gamma(2) - 1.0).abs() < 1e-15);
        assert!((half_gamma(3) - 0.5 * PI.sqrt()).abs() < 1e-15);
        assert!((half_gamma(4) - 1.0).abs() < 1e-15);
        assert!((half_gamma(5) - 0.75 * PI.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn zero_integrand_gives_zero() {
        assert_eq!(radial_xi_integral(|_| 0.0, (0.0, 3.0), 2).unwrap(), 0.0);
        assert_eq!(radial_xi_integral(|_| 1.0, (-3.0, -1.0), 3).unwrap(), 0.0);
    }

    #[test]
    fn unbounded_support_is_rejected() {
        let r = radial_xi_integral(|t| (-t).exp(), (0.0, f64::INFINITY), 2);
        assert!(matches!(r, Err(Error::UnboundedSupport)));
    }

    #[test]
    fn planar_radial_integral_is_pi_times_line_integral() {
        let phi = TestFunction::bump(1.0, 0.7).unwrap();
        let line = quad::adaptive(|t| phi.eval(t), 0.3, 1.7, 1e-15, 1e-14).0;
        let v = radial_xi_integral(|t| phi.eval(t), phi.support(), 2).unwrap();
        assert!((v - PI * line).abs() < 1e-12);
    }

    #[test]
    fn radial_matches_tensor_quadrature_in_the_plane() {
        let phi = TestFunction::bump(1.2, 0.9).unwrap();
        let radial = radial_xi_integral(|t| phi.eval(t), phi.support(), 2).unwrap();
        let tensor = tensor_2d(|t| phi.eval(t), 1.5, 60);
        assert!(((radial - tensor) / radial).abs() < 1e-8, "{radial} vs {tensor}");
    }

    #[test]
    fn spatial_beta_integral() {
        // ∫_{|ξ|<1} (1 − |ξ|²)² dξ in ℝ³ = 2π B(3/2, 3) = 2π / 6.5625.
        let v = radial_xi_integral(|t| (1.0 - t).powi(2), (0.0, 1.0), 3).unwrap();
        assert!((v - 2.0 * PI / 6.5625).abs() < 1e-12);
    }

    #[test]
    fn f0_vanishes_when_potential_is_above_support() {
        let phi = TestFunction::bump_on(-1.0, 0.5).unwrap();
        let v = ScalarField::constant(&[1.0, 1.0], 0.5);
        assert_eq!(f0_pointwise(&v, &[0.2, 0.3], &phi).unwrap(), 0.0);
    }

    #[test]
    fn f0_without_potential_is_line_integral_over_four_pi() {
        let phi = TestFunction::bump_on(-0.5, 2.0).unwrap();
        let v = ScalarField::zero(&[2.0, 2.0]);
        let line = quad::adaptive(|t| phi.eval(t), 0.0, 2.0, 1e-15, 1e-14).0;
        let f0 = f0_pointwise(&v, &[0.0, 0.0], &phi).unwrap();
        assert!((f0 - line / (4.0 * PI)).abs() < 1e-13);
        let dom = TorusDomain::cubic(2, 2.0, 8).unwrap();
        let total = trace_coefficient(0, &planar(0.4, 2.0), &v, &phi, &dom).unwrap();
        assert!((total - 4.0 * line / (4.0 * PI)).abs() < 1e-12);
    }

    #[test]
    fn f2_vanishes_for_flat_data() {
        let phi = TestFunction::bump_on(-1.0, 2.0).unwrap();
        let v = ScalarField::constant(&[1.0, 1.0], 0.4);
        let b = MagneticField::zero(&[1.0, 1.0]);
        assert_eq!(f2_pointwise(&b, &v, &[0.3, 0.1], &phi).unwrap(), 0.0);
    }

    #[test]
    fn f2_matches_planar_closed_form() {
        let l = 3.0;
        let phi = TestFunction::bump_on(-2.0, 1.5).unwrap();
        let v = wavy_v(l);
        let b = planar(0.8, l);
        let lap = v.laplacian();
        for x in [[0.0, 0.0], [0.4, 1.3], [2.1, 2.9]] {
            let vx = v.eval(&x);
            let g2: f64 = v.gradient(&x).iter().map(|g| g * g).sum();
            let closed = g2 * phi.deriv(vx, 2).unwrap() / (48.0 * PI)
                + (0.64 + lap.eval(&x)) * phi.deriv(vx, 1).unwrap() / (24.0 * PI);
            let f2 = f2_pointwise(&b, &v, &x, &phi).unwrap();
            assert!((f2 - closed).abs() < 1e-9 * closed.abs().max(1e-3), "{f2} vs {closed}");
        }
    }

    #[test]
    fn f2_matches_tensor_quadrature() {
        let l = 2.0;
        let phi = TestFunction::bump_on(-1.0, 1.2).unwrap();
        let v = wavy_v(l);
        let b = planar(-0.6, l);
        let x = [0.7, 0.2];
        let vx = v.eval(&x);
        let g2: f64 = v.gradient(&x).iter().map(|g| g * g).sum();
        let lap = v.laplacian().eval(&x);
        let j3 = tensor_2d(|t| phi.deriv(t + vx, 3).unwrap(), 1.2, 60) / (4.0 * PI * PI);
        let j2 = tensor_2d(|t| phi.deriv(t + vx, 2).unwrap(), 1.2, 60) / (4.0 * PI * PI);
        let direct = -g2 / 12.0 * j3 - (0.36 + lap) / 6.0 * j2;
        let f2 = f2_pointwise(&b, &v, &x, &phi).unwrap();
        assert!((f2 - direct).abs() < 1e-8 * direct.abs(), "{f2} vs {direct}");
    }

    #[test]
    fn f2_is_even_in_the_field() {
        let phi = TestFunction::bump_on(-1.0, 1.0).unwrap();
        let v = ScalarField::zero(&[1.0, 1.0]);
        let x = [0.5, 0.5];
        let up = f2_pointwise(&planar(0.7, 1.0), &v, &x, &phi).unwrap();
        let down = f2_pointwise(&planar(-0.7, 1.0), &v, &x, &phi).unwrap();
        let half = f2_pointwise(&planar(0.35, 1.0), &v, &x, &phi).unwrap();
        assert_eq!(up, down);
        assert!((up - 4.0 * half).abs() < 1e-14);
        assert!((up - 0.49 * phi.deriv(0.0, 1).unwrap() / (24.0 * PI)).abs() < 1e-13);
    }

    #[test]
    fn first_order_coefficient_is_zero() {
        let phi = TestFunction::bump_on(-1.0, 1.0).unwrap();
        let dom = TorusDomain::cubic(2, 3.0, 16).unwrap();
        assert_eq!(f1_pointwise(&[0.1, 0.2]), 0.0);
        assert_eq!(trace_coefficient(1, &planar(1.0, 3.0), &wavy_v(3.0), &phi, &dom).unwrap(), 0.0);
        assert!(matches!(
            trace_coefficient(3, &planar(1.0, 3.0), &wavy_v(3.0), &phi, &dom),
            Err(Error::UnsupportedOrder { .. })
        ));
    }

    #[test]
    fn grid_doubling_is_converged() {
        let l = 3.0;
        let phi = TestFunction::bump_on(-9.0, 1.0).unwrap();
        let b = MagneticField::planar(
            ScalarField::new(&[l, l], 0.0, vec![Mode::new(vec![1, 0], 0.9, 0.0), Mode::new(vec![1, 1], 0.3, -0.45)])
                .unwrap(),
        )
        .unwrap();
        let v = wavy_v(l);
        for r in [0, 2] {
            let coarse = trace_coefficient(r, &b, &v, &phi, &TorusDomain::cubic(2, l, 32).unwrap()).unwrap();
            let fine = trace_coefficient(r, &b, &v, &phi, &TorusDomain::cubic(2, l, 64).unwrap()).unwrap();
            assert!((coarse - fine).abs() < 1e-10, "r = {r}: {coarse} vs {fine}");
        }
    }

    #[test]
    fn csv_has_one_row_per_point() {
        let l = 1.0;
        let phi = TestFunction::bump_on(-1.0, 1.0).unwrap();
        let dom = TorusDomain::cubic(2, l, 8).unwrap();
        let b = planar(0.5, l);
        let v = wavy_v(l);
        let fields = [0, 1, 2].map(|r| coefficient_field(r, &b, &v, &phi, &dom).unwrap());
        let path = std::env::temp_dir().join(format!("coeffs-{}.csv", std::process::id()));
        write_coefficient_csv(&fields, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        std::fs::remove_file(&path).ok();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "index,x1,x2,f0,f1,f2");
        assert_eq!(lines.len(), 65);
        assert_eq!(lines[1].split(',').count(), 6);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn radial_reduction_agrees_with_tensor(center in 0.2f64..1.5, width in 0.3f64..1.0) {
            let phi = TestFunction::bump(center, width).unwrap();
            let radial = radial_xi_integral(|t| phi.eval(t), phi.support(), 2).unwrap();
            let r = (center + width).sqrt() + 0.01;
            let tensor = tensor_2d(|t| phi.eval(t), r, 100);
            prop_assert!(((radial - tensor) / radial).abs() < 1e-8);
        }

        #[test]
        fn potential_shift_moves_the_test_function(c in -1.0f64..1.0, v0 in -0.5f64..0.5) {
            let phi = TestFunction::bump(0.3, 1.1).unwrap();
            let shifted = TestFunction::bump(0.3 - c, 1.1).unwrap();
            let v = ScalarField::constant(&[1.0, 1.0], v0);
            let v_c = ScalarField::constant(&[1.0, 1.0], v0 + c);
            let x = [0.0, 0.0];
            let a = f0_pointwise(&v_c, &x, &phi).unwrap();
            let b = f0_pointwise(&v, &x, &shifted).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn f0_is_monotone_in_phi(v0 in -1.0f64..1.5, q in 0.0f64..2.0) {
            let small = TestFunction::bump(0.5, 1.0).unwrap();
            let large = TestFunction::poly_bump(0.5, 1.0, vec![1.0, 0.0, q]).unwrap();
            let v = ScalarField::constant(&[1.0, 1.0], v0);
            let a = f0_pointwise(&v, &[0.0, 0.0], &small).unwrap();
            let b = f0_pointwise(&v, &[0.0, 0.0], &large).unwrap();
            prop_assert!(a >= 0.0 && a <= b + 1e-15);
        }

        #[test]
        fn f0_ignores_the_field(b0 in -3.0f64..3.0) {
            let phi = TestFunction::bump_on(-1.0, 1.0).unwrap();
            let v = wavy_v(2.0);
            let dom = TorusDomain::cubic(2, 2.0, 8).unwrap();
            let zero = trace_coefficient(0, &MagneticField::zero(&[2.0, 2.0]), &v, &phi, &dom).unwrap();
            let with = trace_coefficient(0, &planar(b0, 2.0), &v, &phi, &dom).unwrap();
            prop_assert_eq!(zero, with);
        }
    }
}
