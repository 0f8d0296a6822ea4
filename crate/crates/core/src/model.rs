//! Problem data: the torus, trigonometric-polynomial fields on it, and the
//! compactly supported test function.
//!
//! Every field is a finite real trigonometric polynomial
//! `c + Σ (a cos(q·x) + s sin(q·x))` with `q_j = 2π k_j / L_j`, so values and
//! derivatives of any order are available in closed form. A zero-mean
//! magnetic field yields a periodic vector potential by dividing Fourier
//! coefficients by wave numbers (Coulomb gauge).

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Flat torus `Π [0, L_j)` with a uniform tensor grid of `grid_n` points per axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TorusDomain {
    pub d: usize,
    pub periods: Vec<f64>,
    pub grid_n: usize,
}

impl TorusDomain {
    pub fn new(d: usize, periods: Vec<f64>, grid_n: usize) -> Result<Self> {
        let dom = Self { d, periods, grid_n };
        dom.validate()?;
        Ok(dom)
    }

    /// Square torus with all periods equal to `l`.
    pub fn cubic(d: usize, l: f64, grid_n: usize) -> Result<Self> {
        Self::new(d, vec![l; d], grid_n)
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=3).contains(&self.d) {
            return Err(Error::InvalidDomain(format!("dimension {} not in {{2, 3}}", self.d)));
        }
        if self.periods.len() != self.d {
            return Err(Error::InvalidDomain(format!(
                "{} periods given for dimension {}",
                self.periods.len(),
                self.d
            )));
        }
        if let Some(l) = self.periods.iter().find(|l| !(l.is_finite() && **l > 0.0)) {
            return Err(Error::InvalidDomain(format!("period {l} is not positive")));
        }
        if self.grid_n < 8 || self.grid_n % 2 != 0 {
            return Err(Error::InvalidDomain(format!("grid_n = {} must be even and >= 8", self.grid_n)));
        }
        Ok(())
    }

    pub fn with_grid(&self, grid_n: usize) -> Result<Self> {
        Self::new(self.d, self.periods.clone(), grid_n)
    }

    /// Number of grid points, `grid_n^d`.
    pub fn len(&self) -> usize {
        self.grid_n.pow(self.d as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn volume(&self) -> f64 {
        self.periods.iter().product()
    }

    pub fn cell_volume(&self) -> f64 {
        self.volume() / self.len() as f64
    }

    /// Multi-index of a flat row-major grid index (last axis fastest).
    pub fn multi_index(&self, mut flat: usize) -> Vec<usize> {
        let mut m = vec![0; self.d];
        for j in (0..self.d).rev() {
            m[j] = flat % self.grid_n;
            flat /= self.grid_n;
        }
        m
    }

    pub fn flat_index(&self, m: &[usize]) -> usize {
        m.iter().fold(0, |acc, &mj| acc * self.grid_n + mj)
    }

    /// Coordinates of grid point `flat`: `x_j = m_j L_j / N`.
    pub fn point(&self, flat: usize) -> Vec<f64> {
        self.multi_index(flat)
            .iter()
            .zip(&self.periods)
            .map(|(&m, &l)| m as f64 * l / self.grid_n as f64)
            .collect()
    }
}

/// One Fourier mode `a cos(q·x) + s sin(q·x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mode {
    pub k: Vec<i64>,
    #[serde(default)]
    pub cos: f64,
    #[serde(default)]
    pub sin: f64,
}

impl Mode {
    pub fn new(k: Vec<i64>, cos: f64, sin: f64) -> Self {
        Self { k, cos, sin }
    }
}

/// Real trigonometric polynomial on a torus with the given periods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarField {
    pub periods: Vec<f64>,
    #[serde(default)]
    pub constant: f64,
    #[serde(default)]
    pub modes: Vec<Mode>,
}

impl ScalarField {
    pub fn zero(periods: &[f64]) -> Self {
        Self { periods: periods.to_vec(), constant: 0.0, modes: Vec::new() }
    }

    pub fn constant(periods: &[f64], c: f64) -> Self {
        Self { periods: periods.to_vec(), constant: c, modes: Vec::new() }
    }

    pub fn new(periods: &[f64], constant: f64, modes: Vec<Mode>) -> Result<Self> {
        for m in &modes {
            if m.k.len() != periods.len() {
                return Err(Error::IncompatibleWave {
                    k: m.k.clone(),
                    reason: format!("expected {} components", periods.len()),
                });
            }
        }
        Ok(Self { periods: periods.to_vec(), constant, modes })
    }

    pub fn dim(&self) -> usize {
        self.periods.len()
    }

    pub fn wavevector(&self, k: &[i64]) -> Vec<f64> {
        k.iter().zip(&self.periods).map(|(&kj, &l)| 2.0 * PI * kj as f64 / l).collect()
    }

    fn phase(&self, k: &[i64], x: &[f64]) -> f64 {
        k.iter()
            .zip(&self.periods)
            .zip(x)
            .map(|((&kj, &l), &xj)| 2.0 * PI * kj as f64 / l * xj)
            .sum()
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.modes.iter().fold(self.constant, |acc, m| {
            let (s, c) = self.phase(&m.k, x).sin_cos();
            acc + m.cos * c + m.sin * s
        })
    }

    /// Exact partial derivative `∂^α` as a new trigonometric polynomial.
    pub fn derivative(&self, alpha: &[usize]) -> ScalarField {
        let order: usize = alpha.iter().sum();
        if order == 0 {
            return self.clone();
        }
        let modes = self
            .modes
            .iter()
            .map(|m| {
                let q = self.wavevector(&m.k);
                let factor: f64 = q.iter().zip(alpha).map(|(qj, &aj)| qj.powi(aj as i32)).product();
                // Each derivative maps (a, s) -> (s, -a).
                let (mut a, mut s) = (m.cos, m.sin);
                for _ in 0..order % 4 {
                    (a, s) = (s, -a);
                }
                Mode::new(m.k.clone(), factor * a, factor * s)
            })
            .collect();
        ScalarField { periods: self.periods.clone(), constant: 0.0, modes }
    }

    pub fn partial(&self, j: usize) -> ScalarField {
        let mut alpha = vec![0; self.dim()];
        alpha[j] = 1;
        self.derivative(&alpha)
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        (0..self.dim()).map(|j| self.partial(j).eval(x)).collect()
    }

    pub fn laplacian(&self) -> ScalarField {
        let mut out = ScalarField::zero(&self.periods);
        for j in 0..self.dim() {
            let mut alpha = vec![0; self.dim()];
            alpha[j] = 2;
            out = out.add(&self.derivative(&alpha));
        }
        out.canonical()
    }

    pub fn add(&self, other: &ScalarField) -> ScalarField {
        let mut modes = self.modes.clone();
        modes.extend(other.modes.iter().cloned());
        ScalarField { periods: self.periods.clone(), constant: self.constant + other.constant, modes }
    }

    pub fn scale(&self, s: f64) -> ScalarField {
        ScalarField {
            periods: self.periods.clone(),
            constant: self.constant * s,
            modes: self.modes.iter().map(|m| Mode::new(m.k.clone(), s * m.cos, s * m.sin)).collect(),
        }
    }

    /// Merge duplicate wave vectors (identifying `k` with `-k`), fold the
    /// zero mode into the constant, and drop vanishing modes.
    pub fn canonical(&self) -> ScalarField {
        let mut out: Vec<Mode> = Vec::new();
        let mut constant = self.constant;
        for m in &self.modes {
            let first = m.k.iter().find(|&&kj| kj != 0).copied();
            let (k, sgn) = match first {
                None => {
                    constant += m.cos;
                    continue;
                }
                Some(f) if f < 0 => (m.k.iter().map(|kj| -kj).collect::<Vec<_>>(), -1.0),
                Some(_) => (m.k.clone(), 1.0),
            };
            match out.iter_mut().find(|o| o.k == k) {
                Some(o) => {
                    o.cos += m.cos;
                    o.sin += sgn * m.sin;
                }
                None => out.push(Mode::new(k, m.cos, sgn * m.sin)),
            }
        }
        out.retain(|m| m.cos != 0.0 || m.sin != 0.0);
        out.sort_by(|a, b| a.k.cmp(&b.k));
        ScalarField { periods: self.periods.clone(), constant, modes: out }
    }

    /// Torus mean, which only the constant and any zero wave vector contribute to.
    pub fn mean(&self) -> f64 {
        self.canonical().constant
    }

    /// Largest |k_j| over all modes and axes.
    pub fn max_wavenumber(&self) -> i64 {
        self.modes.iter().flat_map(|m| m.k.iter().map(|k| k.abs())).max().unwrap_or(0)
    }

    /// `|c| + Σ sqrt(a² + s²)`, an upper bound for `sup |f|`.
    pub fn sup_bound(&self) -> f64 {
        self.modes.iter().fold(self.constant.abs(), |acc, m| acc + m.cos.hypot(m.sin))
    }

    /// Largest coefficient magnitude, used for closedness and equality checks.
    pub fn coefficient_norm(&self) -> f64 {
        let c = self.canonical();
        c.modes.iter().fold(c.constant.abs(), |acc, m| acc.max(m.cos.abs()).max(m.sin.abs()))
    }

    fn check_domain(&self, domain: &TorusDomain) -> Result<()> {
        if self.dim() != domain.d {
            return Err(Error::IncompatibleWave {
                k: vec![],
                reason: format!("field dimension {} vs domain dimension {}", self.dim(), domain.d),
            });
        }
        for (l, ld) in self.periods.iter().zip(&domain.periods) {
            if (l - ld).abs() > 1e-12 * ld.abs() {
                return Err(Error::IncompatibleWave {
                    k: vec![],
                    reason: format!("field period {l} differs from domain period {ld}"),
                });
            }
        }
        let half = (domain.grid_n / 2) as i64;
        for m in &self.modes {
            if let Some(&k) = m.k.iter().find(|k| k.abs() >= half) {
                return Err(Error::Aliasing { n: domain.grid_n, k });
            }
        }
        Ok(())
    }

    /// Exact values on the uniform grid, row-major.
    pub fn sample(&self, domain: &TorusDomain) -> Result<Vec<f64>> {
        self.check_domain(domain)?;
        Ok((0..domain.len()).map(|i| self.eval(&domain.point(i))).collect())
    }
}

pub fn sample_field(field: &ScalarField, domain: &TorusDomain) -> Result<Vec<f64>> {
    field.sample(domain)
}

/// Antisymmetric field strength `B_{jk}`, stored for `j < k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MagneticField {
    pub d: usize,
    /// Upper-triangle components in the order (0,1), (0,2), (1,2).
    pub upper: Vec<ScalarField>,
}

fn pair_index(d: usize, j: usize, k: usize) -> usize {
    debug_assert!(j < k && k < d);
    let mut idx = 0;
    for a in 0..d {
        for b in a + 1..d {
            if (a, b) == (j, k) {
                return idx;
            }
            idx += 1;
        }
    }
    unreachable!()
}

impl MagneticField {
    pub fn zero(periods: &[f64]) -> Self {
        let d = periods.len();
        Self { d, upper: vec![ScalarField::zero(periods); d * (d - 1) / 2] }
    }

    /// Planar field with the single component `b = B_{12}`.
    pub fn planar(b: ScalarField) -> Result<Self> {
        let f = Self { d: 2, upper: vec![b] };
        f.validate()?;
        Ok(f)
    }

    pub fn new(d: usize, upper: Vec<ScalarField>) -> Result<Self> {
        let f = Self { d, upper };
        f.validate()?;
        Ok(f)
    }

    pub fn periods(&self) -> &[f64] {
        &self.upper[0].periods
    }

    /// `B_{jk}` as a field; antisymmetry is structural.
    pub fn component(&self, j: usize, k: usize) -> ScalarField {
        use std::cmp::Ordering::*;
        match j.cmp(&k) {
            Equal => ScalarField::zero(self.periods()),
            Less => self.upper[pair_index(self.d, j, k)].clone(),
            Greater => self.upper[pair_index(self.d, k, j)].scale(-1.0),
        }
    }

    pub fn eval(&self, j: usize, k: usize, x: &[f64]) -> f64 {
        use std::cmp::Ordering::*;
        match j.cmp(&k) {
            Equal => 0.0,
            Less => self.upper[pair_index(self.d, j, k)].eval(x),
            Greater => -self.upper[pair_index(self.d, k, j)].eval(x),
        }
    }

    /// Full `d × d` matrix at `x`.
    pub fn matrix(&self, x: &[f64]) -> Vec<Vec<f64>> {
        (0..self.d).map(|j| (0..self.d).map(|k| self.eval(j, k, x)).collect()).collect()
    }

    pub fn max_wavenumber(&self) -> i64 {
        self.upper.iter().map(|f| f.max_wavenumber()).max().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=3).contains(&self.d) || self.upper.len() != self.d * (self.d - 1) / 2 {
            return Err(Error::InvalidDomain(format!(
                "magnetic field with {} components in dimension {}",
                self.upper.len(),
                self.d
            )));
        }
        for j in 0..self.d {
            for k in j + 1..self.d {
                let mean = self.component(j, k).mean();
                if mean.abs() > 1e-14 {
                    return Err(Error::NonzeroFlux { j, k, mean });
                }
            }
        }
        let defect = self.closedness_defect();
        let scale = self.upper.iter().map(|f| f.coefficient_norm()).fold(1.0, f64::max);
        if defect > 1e-12 * scale {
            return Err(Error::NotClosed(defect));
        }
        Ok(())
    }

    /// Largest coefficient of `∂_j B_{km} + ∂_k B_{mj} + ∂_m B_{jk}` over all triples.
    pub fn closedness_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for j in 0..self.d {
            for k in j + 1..self.d {
                for m in k + 1..self.d {
                    let s = self
                        .component(k, m)
                        .partial(j)
                        .add(&self.component(m, j).partial(k))
                        .add(&self.component(j, k).partial(m));
                    worst = worst.max(s.coefficient_norm());
                }
            }
        }
        worst
    }

    /// Periodic potential with `dA = B` and `div A = 0`.
    pub fn vector_potential(&self) -> VectorPotential {
        let periods = self.periods().to_vec();
        let mut comps = vec![ScalarField::zero(&periods); self.d];
        for (k, comp) in comps.iter_mut().enumerate() {
            for j in 0..self.d {
                if j == k {
                    continue;
                }
                let b = self.component(j, k);
                for m in &b.modes {
                    let q = b.wavevector(&m.k);
                    let qq: f64 = q.iter().map(|v| v * v).sum();
                    if qq == 0.0 {
                        continue;
                    }
                    let f = q[j] / qq;
                    comp.modes.push(Mode::new(m.k.clone(), -f * m.sin, f * m.cos));
                }
            }
            *comp = comp.canonical();
        }
        VectorPotential { comps }
    }
}

/// Periodic vector potential `A = Σ A_j dx_j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorPotential {
    pub comps: Vec<ScalarField>,
}

impl VectorPotential {
    pub fn zero(periods: &[f64]) -> Self {
        Self { comps: vec![ScalarField::zero(periods); periods.len()] }
    }

    pub fn dim(&self) -> usize {
        self.comps.len()
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        self.comps.iter().map(|c| c.eval(x)).collect()
    }

    /// `(dA)_{jk} = ∂_j A_k − ∂_k A_j`, by exact differentiation.
    pub fn curl(&self) -> MagneticField {
        let d = self.dim();
        let mut upper = Vec::new();
        for j in 0..d {
            for k in j + 1..d {
                upper.push(self.comps[k].partial(j).add(&self.comps[j].partial(k).scale(-1.0)).canonical());
            }
        }
        MagneticField { d, upper }
    }

    /// `A + dχ`.
    pub fn gauge_shift(&self, chi: &ScalarField) -> VectorPotential {
        VectorPotential {
            comps: self.comps.iter().enumerate().map(|(j, a)| a.add(&chi.partial(j)).canonical()).collect(),
        }
    }

    pub fn max_wavenumber(&self) -> i64 {
        self.comps.iter().map(|f| f.max_wavenumber()).max().unwrap_or(0)
    }

    /// Upper bound on `sup |A(x)|`.
    pub fn sup_bound(&self) -> f64 {
        self.comps.iter().map(|c| c.sup_bound().powi(2)).sum::<f64>().sqrt()
    }
}

/// Highest derivative order the test function exposes.
pub const MAX_DERIVATIVE: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestFunctionKind {
    Bump,
    PolyBump,
}

/// `φ(t) = P((t−c)/w) · exp(−w² / (w² − (t−c)²))` on `(c − w, c + w)`, zero elsewhere.
///
/// For the plain bump `P ≡ 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TestFunctionSpec", into = "TestFunctionSpec")]
pub struct TestFunction {
    pub kind: TestFunctionKind,
    pub center: f64,
    pub width: f64,
    /// Coefficients of `P(u)`, lowest degree first.
    pub poly: Vec<f64>,
    q: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TestFunctionSpec {
    kind: TestFunctionKind,
    center: f64,
    width: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    poly: Option<Vec<f64>>,
}

impl TryFrom<TestFunctionSpec> for TestFunction {
    type Error = Error;
    fn try_from(s: TestFunctionSpec) -> Result<Self> {
        match s.kind {
            TestFunctionKind::Bump => TestFunction::bump(s.center, s.width),
            TestFunctionKind::PolyBump => TestFunction::poly_bump(s.center, s.width, s.poly.unwrap_or_else(|| vec![1.0])),
        }
    }
}

impl From<TestFunction> for TestFunctionSpec {
    fn from(f: TestFunction) -> Self {
        let poly = (f.kind == TestFunctionKind::PolyBump).then_some(f.poly);
        TestFunctionSpec { kind: f.kind, center: f.center, width: f.width, poly }
    }
}

fn poly_eval(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &ci| acc * x + ci)
}

fn poly_deriv(c: &[f64]) -> Vec<f64> {
    c.iter().enumerate().skip(1).map(|(i, &ci)| i as f64 * ci).collect()
}

fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, &ai) in a.iter().enumerate() {
        for (j, &bj) in b.iter().enumerate() {
            out[i + j] += ai * bj;
        }
    }
    out
}

fn poly_add(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len().max(b.len())];
    for (i, v) in a.iter().enumerate() {
        out[i] += v;
    }
    for (i, v) in b.iter().enumerate() {
        out[i] += v;
    }
    out
}

impl TestFunction {
    pub fn bump(center: f64, width: f64) -> Result<Self> {
        Self::build(TestFunctionKind::Bump, center, width, vec![1.0])
    }

    /// Bump on the interval `[a, b]`.
    pub fn bump_on(a: f64, b: f64) -> Result<Self> {
        Self::bump(0.5 * (a + b), 0.5 * (b - a))
    }

    pub fn poly_bump(center: f64, width: f64, poly: Vec<f64>) -> Result<Self> {
        Self::build(TestFunctionKind::PolyBump, center, width, poly)
    }

    fn build(kind: TestFunctionKind, center: f64, width: f64, poly: Vec<f64>) -> Result<Self> {
        if !(width.is_finite() && width > 0.0 && center.is_finite()) {
            return Err(Error::config("phi", format!("invalid center {center} / width {width}")));
        }
        if poly.is_empty() || poly.iter().any(|c| !c.is_finite()) {
            return Err(Error::config("phi.poly", "polynomial factor must be finite and nonempty"));
        }
        // Q_{k+1} = Q_k' u² + 4k s Q_k u − 2w² s Q_k with u = w² − s².
        let w2 = width * width;
        let u = [w2, 0.0, -1.0];
        let u2 = poly_mul(&u, &u);
        let mut q = vec![vec![1.0]];
        for k in 0..MAX_DERIVATIVE {
            let qk = &q[k];
            let t1 = poly_mul(&poly_deriv(qk), &u2);
            let t2 = poly_mul(&poly_mul(&[0.0, 4.0 * k as f64], qk), &u);
            let t3 = poly_mul(&[0.0, -2.0 * w2], qk);
            q.push(poly_add(&poly_add(&t1, &t2), &t3));
        }
        Ok(Self { kind, center, width, poly, q })
    }

    pub fn support(&self) -> (f64, f64) {
        (self.center - self.width, self.center + self.width)
    }

    /// Same shape times a constant.
    pub fn scaled(&self, s: f64) -> Self {
        let poly = self.poly.iter().map(|c| c * s).collect();
        Self::build(TestFunctionKind::PolyBump, self.center, self.width, poly).expect("valid scaled function")
    }

    /// The plain bump factor's k-th derivative.
    fn bump_deriv(&self, s: f64, k: usize) -> f64 {
        let w2 = self.width * self.width;
        let u = w2 - s * s;
        if u <= 0.0 {
            return 0.0;
        }
        let g = -w2 / u;
        poly_eval(&self.q[k], s) * (g - 2.0 * k as f64 * u.ln()).exp()
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.deriv(t, 0).expect("order 0 is supported")
    }

    /// `φ^{(k)}(t)` for `k ≤ 5`; exactly zero off the open support.
    pub fn deriv(&self, t: f64, k: usize) -> Result<f64> {
        if k > MAX_DERIVATIVE {
            return Err(Error::DerivativeOrder { order: k, max: MAX_DERIVATIVE });
        }
        let s = t - self.center;
        if s.abs() >= self.width {
            return Ok(0.0);
        }
        if self.kind == TestFunctionKind::Bump {
            return Ok(self.bump_deriv(s, k));
        }
        // Leibniz: Σ C(k,m) P^{(m)} φ_b^{(k−m)}, with P^{(m)}(t) = w^{−m} P_u^{(m)}(s/w).
        let uu = s / self.width;
        let mut p = self.poly.clone();
        let mut binom = 1.0;
        let mut total = 0.0;
        for m in 0..=k {
            let pm = poly_eval(&p, uu) / self.width.powi(m as i32);
            total += binom * pm * self.bump_deriv(s, k - m);
            binom = binom * (k - m) as f64 / (m + 1) as f64;
            p = poly_deriv(&p);
            if p.is_empty() {
                break;
            }
        }
        Ok(total)
    }
}

pub fn test_function_eval(phi: &TestFunction, t: f64, k: usize) -> Result<f64> {
    phi.deriv(t, k)
}
