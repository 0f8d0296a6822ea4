//! Run configuration: problem data plus solver, ladder and check settings.
//!
//! Fields are given without periods; the domain supplies them. Every
//! section has defaults so a config only needs the problem block.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::discretize::{GridRule, DEFAULT_DENSE_CAP};
use crate::error::{Error, Result};
use crate::model::{MagneticField, Mode, ScalarField, TestFunction, TorusDomain, VectorPotential};

/// Trigonometric polynomial without periods.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldSpec {
    #[serde(default)]
    pub constant: f64,
    #[serde(default)]
    pub modes: Vec<Mode>,
}

impl FieldSpec {
    pub fn on(&self, periods: &[f64]) -> Result<ScalarField> {
        ScalarField::new(periods, self.constant, self.modes.clone())
    }
}

/// Mode given as `amplitude · cos(q·x + phase)`.
pub fn phased_mode(k: Vec<i64>, amplitude: f64, phase: f64) -> Mode {
    Mode::new(k, amplitude * phase.cos(), -amplitude * phase.sin())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub domain: TorusDomain,
    /// Upper-triangle components `B_{jk}`, `j < k`; empty means no field.
    #[serde(default)]
    pub field: Vec<FieldSpec>,
    #[serde(default)]
    pub potential: FieldSpec,
    pub phi: TestFunction,
}

/// Resolved problem data.
#[derive(Debug, Clone)]
pub struct Problem {
    pub domain: TorusDomain,
    pub field: MagneticField,
    pub potential: VectorPotential,
    pub scalar: ScalarField,
    pub phi: TestFunction,
}

impl ProblemConfig {
    pub fn resolve(&self) -> Result<Problem> {
        let domain = self.domain.clone();
        domain.validate().map_err(|e| Error::config("problem.domain", e.to_string()))?;
        let periods = domain.periods.clone();
        let field = if self.field.is_empty() {
            MagneticField::zero(&periods)
        } else {
            let upper = self
                .field
                .iter()
                .enumerate()
                .map(|(i, f)| f.on(&periods).map_err(|e| Error::config(format!("problem.field[{i}]"), e.to_string())))
                .collect::<Result<Vec<_>>>()?;
            MagneticField::new(domain.d, upper).map_err(|e| Error::config("problem.field", e.to_string()))?
        };
        let scalar = self.potential.on(&periods).map_err(|e| Error::config("problem.potential", e.to_string()))?;
        let kmax = field.max_wavenumber().max(scalar.max_wavenumber());
        if 2 * kmax >= domain.grid_n as i64 {
            return Err(Error::config(
                "problem.domain.grid_n",
                format!("wave number {kmax} is not representable on a grid of {}", domain.grid_n),
            ));
        }
        Ok(Problem { potential: field.vector_potential(), domain, field, scalar, phi: self.phi.clone() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LadderConfig {
    pub ps: Vec<f64>,
    pub grid_rule: GridRule,
    /// Fixed grid for every rung instead of the rule.
    pub grid_n: Option<usize>,
    /// The certificate grid has `cert_step` more points per axis.
    pub cert_step: usize,
    pub cert_tol: f64,
}

impl Default for LadderConfig {
    fn default() -> Self {
        Self {
            ps: vec![8.0, 10.0, 12.0, 16.0, 20.0, 24.0, 32.0, 40.0],
            grid_rule: GridRule::default(),
            grid_n: None,
            cert_step: 4,
            cert_tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EigConfig {
    pub dense_cap: usize,
    /// Dense size allowed for the certificate grid.
    pub cert_cap: usize,
    pub lanczos_tol: f64,
    pub lanczos_max_iter: usize,
}

impl Default for EigConfig {
    fn default() -> Self {
        Self { dense_cap: DEFAULT_DENSE_CAP, cert_cap: 2 * DEFAULT_DENSE_CAP + 1024, lanczos_tol: 1e-10, lanczos_max_iter: 600 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HsfcConfig {
    pub enabled: bool,
    pub order: usize,
    /// Extension height; `None` means a quarter of the support width.
    pub delta: Option<f64>,
    pub quad_n: usize,
    pub x_panels: usize,
    pub y_levels: usize,
}

impl Default for HsfcConfig {
    fn default() -> Self {
        Self { enabled: true, order: 4, delta: None, quad_n: 60, x_panels: 16, y_levels: 0 }
    }
}

impl HsfcConfig {
    pub fn delta_for(&self, phi: &TestFunction) -> f64 {
        self.delta.unwrap_or(0.5 * phi.width)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub orders: Vec<usize>,
    pub upper_orders: Vec<usize>,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self { orders: vec![0, 1, 2, 3], upper_orders: vec![0, 2] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelConfig {
    pub enabled: bool,
    /// Rungs of the main ladder at which the diagonal kernel is sampled.
    pub max_p: f64,
    /// Sample points as fractions of the periods.
    pub points: Vec<Vec<f64>>,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            max_p: 32.0,
            points: vec![
                vec![0.1, 0.23],
                vec![0.37, 0.71],
                vec![0.52, 0.08],
                vec![0.83, 0.46],
                vec![0.64, 0.9],
            ],
        }
    }
}

/// Settings for the self-contained checks that do not use the problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChecksConfig {
    pub gauge_samples: usize,
    /// Grid for the gauge-spectrum comparison (`n^d` dense dimension).
    pub gauge_grid_n: usize,
    pub gauge_window: usize,
    pub hs_matrix_n: usize,
    pub coeff_grid_n: usize,
    /// Rung for the trace–kernel consistency check.
    pub consistency_p: f64,
}

impl Default for ChecksConfig {
    fn default() -> Self {
        Self {
            gauge_samples: 100,
            gauge_grid_n: 32,
            gauge_window: 24,
            hs_matrix_n: 50,
            coeff_grid_n: 64,
            consistency_p: 8.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemConfig,
    #[serde(default)]
    pub ladder: LadderConfig,
    #[serde(default)]
    pub eig: EigConfig,
    #[serde(default)]
    pub hsfc: HsfcConfig,
    #[serde(default)]
    pub fit: FitConfig,
    #[serde(default)]
    pub kernel: KernelConfig,
    #[serde(default)]
    pub checks: ChecksConfig,
    #[serde(default)]
    pub seed: u64,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::config(format!("line {}", e.line()), e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.problem.resolve()?;
        let ps = &self.ladder.ps;
        if ps.is_empty() || ps.iter().any(|p| !(p.is_finite() && *p > 0.0)) {
            return Err(Error::config("ladder.ps", "values must be positive"));
        }
        if ps.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::config("ladder.ps", "values must be strictly increasing"));
        }
        if let Some(n) = self.ladder.grid_n {
            self.problem.domain.with_grid(n).map_err(|e| Error::config("ladder.grid_n", e.to_string()))?;
        }
        if self.ladder.cert_step == 0 || self.ladder.cert_step % 2 != 0 {
            return Err(Error::config("ladder.cert_step", "must be even and positive"));
        }
        if self.hsfc.order == 0 || self.hsfc.order > crate::hsfc::MAX_EXTENSION_ORDER {
            return Err(Error::config("hsfc.order", format!("must lie in 1..={}", crate::hsfc::MAX_EXTENSION_ORDER)));
        }
        if let Some(d) = self.hsfc.delta {
            if !(d.is_finite() && d > 0.0) {
                return Err(Error::config("hsfc.delta", "must be positive"));
            }
        }
        if self.fit.orders.iter().chain(&self.fit.upper_orders).any(|&r| r > 6) {
            return Err(Error::config("fit.orders", "orders above 6 are not supported"));
        }
        let d = self.problem.domain.d;
        for (i, x) in self.kernel.points.iter().enumerate() {
            if x.len() != d || x.iter().any(|t| !(0.0..1.0).contains(t)) {
                return Err(Error::config(format!("kernel.points[{i}]"), "need d fractions in [0, 1)"));
            }
        }
        Ok(())
    }

    /// Free particle on the `2π`-periodic square torus. The wide bump keeps
    /// the lattice-sum error small and fast-decaying on a cheap ladder.
    pub fn free() -> Self {
        let domain = TorusDomain::cubic(2, 2.0 * PI, 32).expect("valid domain");
        RunConfig {
            problem: ProblemConfig {
                domain,
                field: Vec::new(),
                potential: FieldSpec::default(),
                phi: TestFunction::bump_on(-6.0, 3.0).expect("valid bump"),
            },
            ladder: LadderConfig { ps: vec![4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0, 12.0], ..LadderConfig::default() },
            eig: EigConfig::default(),
            hsfc: HsfcConfig::default(),
            fit: FitConfig::default(),
            kernel: KernelConfig { max_p: 12.0, ..KernelConfig::default() },
            checks: ChecksConfig::default(),
            seed: 0,
        }
    }

    /// Two-mode zero-flux field and three-mode potential on a square torus of side 3.
    pub fn generic() -> Self {
        let l = 3.0;
        let domain = TorusDomain::cubic(2, l, 32).expect("valid domain");
        RunConfig {
            problem: ProblemConfig {
                domain,
                field: vec![FieldSpec {
                    constant: 0.0,
                    modes: vec![phased_mode(vec![1, 0], 0.9, 0.0), phased_mode(vec![1, 1], 0.54, 1.0)],
                }],
                potential: FieldSpec {
                    constant: 0.3,
                    modes: vec![
                        phased_mode(vec![1, 0], 0.15, 0.0),
                        phased_mode(vec![0, 1], 0.1, 0.5),
                        phased_mode(vec![1, -1], 0.08, 0.3),
                    ],
                },
                phi: TestFunction::bump_on(-9.0, 1.0).expect("valid bump"),
            },
            ladder: LadderConfig::default(),
            eig: EigConfig::default(),
            hsfc: HsfcConfig::default(),
            fit: FitConfig::default(),
            kernel: KernelConfig::default(),
            checks: ChecksConfig::default(),
            seed: 0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let text = r#"{"problem": {"domain": {"d": 2, "periods": [1.0, 1.0], "grid_n": 16},
                        "phi": {"kind": "bump", "center": 1.0, "width": 0.5}}}"#;
        let cfg = RunConfig::from_json(text).unwrap();
        assert_eq!(cfg.ladder, LadderConfig::default());
        assert_eq!(cfg.seed, 0);
        let p = cfg.problem.resolve().unwrap();
        assert_eq!(p.field, MagneticField::zero(&[1.0, 1.0]));
    }

    #[test]
    fn round_trip_is_stable() {
        for cfg in [RunConfig::free(), RunConfig::generic()] {
            let text = cfg.to_json();
            let back = RunConfig::from_json(&text).unwrap();
            assert_eq!(back, cfg);
            assert_eq!(back.to_json(), text);
        }
    }

    #[test]
    fn flux_is_rejected() {
        let mut cfg = RunConfig::generic();
        cfg.problem.field[0].constant = 0.2;
        let msg = cfg.validate().unwrap_err().to_string();
        assert!(msg.contains("flux"), "{msg}");
    }

    #[test]
    fn unknown_fields_and_bad_modes_are_reported() {
        let text = r#"{"problem": {"domain": {"d": 2, "periods": [1.0, 1.0], "grid_n": 16},
                        "phi": {"kind": "bump", "center": 1.0, "width": 0.5}}, "ladder": {"pz": []}}"#;
        assert!(matches!(RunConfig::from_json(text), Err(Error::Config { .. })));
        let mut cfg = RunConfig::generic();
        cfg.problem.potential.modes.push(Mode::new(vec![20, 0], 0.1, 0.0));
        let msg = cfg.validate().unwrap_err().to_string();
        assert!(msg.contains("grid_n"), "{msg}");
    }

    #[test]
    fn phased_mode_matches_cosine_form() {
        let m = phased_mode(vec![1, 1], 0.54, 1.0);
        let f = ScalarField::new(&[3.0, 3.0], 0.0, vec![m]).unwrap();
        let x = [0.4, 1.1];
        let q = 2.0 * PI / 3.0 * (x[0] + x[1]);
        assert!((f.eval(&x) - 0.54 * (q + 1.0).cos()).abs() < 1e-14);
    }
}
