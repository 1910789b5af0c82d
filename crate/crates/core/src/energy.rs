//! Internal-energy densities `H`, the associated particle function
//! `h(x) = x H(1/x)` and its derived quantities, plus sampled validation of
//! the structural hypotheses the convergence theory relies on.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};

/// Smallest density at which `H` and its derivatives are evaluated.
pub const U_MIN: f64 = 1e-300;
/// Default relative tolerance of the sampled hypothesis checks.
pub const VALIDATION_TOL: f64 = 1e-10;

/// Exponents of the transport geometry and of the power-law family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FlowParams {
    pub p: f64,
    pub q: f64,
    pub gamma: Option<f64>,
}

impl FlowParams {
    /// Parameters of the Leibenson family `∂_t u = Δ_q u^γ`.
    pub fn new(p: f64, gamma: f64) -> Result<Self> {
        let params = Self::geometry(p)?;
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(Error::InvalidParams(format!("gamma must be positive, got {gamma}")));
        }
        if !(gamma + 1.0 - p > 0.0) {
            return Err(Error::InvalidParams(format!(
                "gamma + 1 - p must be positive (gamma = {gamma}, p = {p})"
            )));
        }
        Ok(Self { gamma: Some(gamma), ..params })
    }

    /// Exponents only, for custom energies.
    pub fn geometry(p: f64) -> Result<Self> {
        if !(p > 1.0) || !p.is_finite() {
            return Err(Error::InvalidParams(format!("p must be > 1, got {p}")));
        }
        let q = p / (p - 1.0);
        debug_assert!((1.0 / p + 1.0 / q - 1.0).abs() < 1e-14);
        Ok(Self { p, q, gamma: None })
    }
}

/// An internal-energy density. Implementors supply `H` and its first two
/// derivatives on `(0, ∞)`; everything on the particle side is derived.
///
/// The optional hooks return closed forms when they exist. `None` means the
/// quantity is unknown and validation only samples the inequality.
pub trait EnergyDensity: Send + Sync + fmt::Debug {
    fn name(&self) -> String;
    fn big_h(&self, u: f64) -> f64;
    fn big_h_prime(&self, u: f64) -> f64;
    fn big_h_second(&self, u: f64) -> f64;

    fn h(&self, x: f64) -> f64 {
        x * self.big_h(1.0 / x)
    }
    /// `h'(x) = H(1/x) - H'(1/x)/x = -L_H(1/x)`.
    fn h_prime(&self, x: f64) -> f64 {
        let u = 1.0 / x;
        self.big_h(u) - u * self.big_h_prime(u)
    }
    /// `h''(x) = H''(1/x) / x^3`.
    fn h_second(&self, x: f64) -> f64 {
        self.big_h_second(1.0 / x) / (x * x * x)
    }
    fn psi_inverse_closed(&self, _y: f64) -> Option<f64> {
        None
    }
    fn doubling_constant(&self) -> Option<f64> {
        None
    }
    /// Minorant `f(α)` with `H''(αx) ≥ f(α) H''(x)`.
    fn hessian_minorant(&self, _alpha: f64) -> Option<f64> {
        None
    }
    /// Majorants `(f1(α), f2(α))` with `H(αx) ≤ f1(α) H(x) + f2(α) x`.
    fn scaling_majorants(&self, _alpha: f64) -> Option<(f64, f64)> {
        None
    }
}

/// `H(u) = c u^m` with `m = γ + 2 - p` and `c = γ / ((γ+1-p)(γ+2-p))`.
#[derive(Debug, Clone, Copy)]
pub struct PowerLaw {
    pub c: f64,
    pub m: f64,
}

impl PowerLaw {
    pub fn from_params(params: &FlowParams) -> Result<Self> {
        let gamma = params
            .gamma
            .ok_or_else(|| Error::InvalidParams("power law needs gamma".into()))?;
        let m = gamma + 2.0 - params.p;
        if !(m - 1.0 > 0.0) {
            return Err(Error::InvalidParams(format!(
                "gamma + 1 - p must be positive (gamma = {gamma}, p = {})",
                params.p
            )));
        }
        Ok(Self {
            c: gamma / ((m - 1.0) * m),
            m,
        })
    }
}

impl EnergyDensity for PowerLaw {
    fn name(&self) -> String {
        format!("power_law(c={}, m={})", self.c, self.m)
    }
    fn big_h(&self, u: f64) -> f64 {
        self.c * u.powf(self.m)
    }
    fn big_h_prime(&self, u: f64) -> f64 {
        self.c * self.m * u.powf(self.m - 1.0)
    }
    fn big_h_second(&self, u: f64) -> f64 {
        self.c * self.m * (self.m - 1.0) * u.powf(self.m - 2.0)
    }
    fn h(&self, x: f64) -> f64 {
        self.c * x.powf(1.0 - self.m)
    }
    fn h_prime(&self, x: f64) -> f64 {
        -self.c * (self.m - 1.0) * x.powf(-self.m)
    }
    fn h_second(&self, x: f64) -> f64 {
        self.c * self.m * (self.m - 1.0) * x.powf(-self.m - 1.0)
    }
    fn psi_inverse_closed(&self, y: f64) -> Option<f64> {
        Some((self.c * (self.m - 1.0) / y).powf(1.0 / self.m))
    }
    fn doubling_constant(&self) -> Option<f64> {
        // (x+y)^m ≤ 2^{m-1}(x^m + y^m) for m ≥ 1.
        Some(2f64.powf(self.m - 1.0).max(1.0))
    }
    fn hessian_minorant(&self, alpha: f64) -> Option<f64> {
        Some(alpha.powf(self.m - 2.0))
    }
    fn scaling_majorants(&self, alpha: f64) -> Option<(f64, f64)> {
        Some((alpha.powf(self.m), 0.0))
    }
}

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// A user-registered density given by closures for `H`, `H'` and `H''`.
#[derive(Clone)]
pub struct ClosureEnergy {
    pub label: String,
    pub big_h: ScalarFn,
    pub big_h_prime: ScalarFn,
    pub big_h_second: ScalarFn,
}

impl fmt::Debug for ClosureEnergy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ClosureEnergy").field("label", &self.label).finish()
    }
}

impl ClosureEnergy {
    pub fn new(
        label: impl Into<String>,
        big_h: impl Fn(f64) -> f64 + Send + Sync + 'static,
        big_h_prime: impl Fn(f64) -> f64 + Send + Sync + 'static,
        big_h_second: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            label: label.into(),
            big_h: Arc::new(big_h),
            big_h_prime: Arc::new(big_h_prime),
            big_h_second: Arc::new(big_h_second),
        }
    }
}

impl EnergyDensity for ClosureEnergy {
    fn name(&self) -> String {
        self.label.clone()
    }
    fn big_h(&self, u: f64) -> f64 {
        (self.big_h)(u)
    }
    fn big_h_prime(&self, u: f64) -> f64 {
        (self.big_h_prime)(u)
    }
    fn big_h_second(&self, u: f64) -> f64 {
        (self.big_h_second)(u)
    }
}

/// An energy density together with the flow exponents. Immutable and cheap
/// to clone; share freely across threads.
#[derive(Debug, Clone)]
pub struct EnergyModel {
    pub params: FlowParams,
    density: Arc<dyn EnergyDensity>,
}

/// `H(u) = c u^m` for the Leibenson exponents in `params`.
pub fn power_law_model(params: FlowParams) -> Result<EnergyModel> {
    let law = PowerLaw::from_params(&params)?;
    Ok(EnergyModel {
        params,
        density: Arc::new(law),
    })
}

impl EnergyModel {
    pub fn custom(params: FlowParams, density: impl EnergyDensity + 'static) -> Self {
        Self {
            params,
            density: Arc::new(density),
        }
    }

    pub fn name(&self) -> String {
        self.density.name()
    }

    pub fn big_h(&self, u: f64) -> f64 {
        if u <= 0.0 {
            return 0.0;
        }
        self.density.big_h(u.max(U_MIN))
    }
    pub fn big_h_prime(&self, u: f64) -> f64 {
        self.density.big_h_prime(u.max(U_MIN))
    }
    pub fn big_h_second(&self, u: f64) -> f64 {
        self.density.big_h_second(u.max(U_MIN))
    }
    /// `L_H(u) = u H'(u) - H(u)`.
    pub fn l_h(&self, u: f64) -> f64 {
        u * self.big_h_prime(u) - self.big_h(u)
    }

    /// `h(x) = x H(1/x)`; `h(∞) = 0`.
    pub fn h(&self, x: f64) -> f64 {
        if x == f64::INFINITY {
            return 0.0;
        }
        self.density.h(x)
    }
    pub fn h_prime(&self, x: f64) -> f64 {
        if x == f64::INFINITY {
            return 0.0;
        }
        self.density.h_prime(x)
    }
    pub fn h_second(&self, x: f64) -> f64 {
        if x == f64::INFINITY {
            return 0.0;
        }
        self.density.h_second(x)
    }
    /// `ψ(x) = -h'(x)`, non-negative and strictly decreasing.
    pub fn psi(&self, x: f64) -> f64 {
        -self.h_prime(x)
    }
    pub fn psi_prime(&self, x: f64) -> f64 {
        -self.h_second(x)
    }

    /// Inverse of `ψ`, closed form when the density provides one.
    pub fn psi_inverse(&self, y: f64) -> Result<f64> {
        if !(y > 0.0) || !y.is_finite() {
            return Err(Error::OutOfRange {
                value: y,
                range: "(0, ψ(0+))".into(),
            });
        }
        match self.density.psi_inverse_closed(y) {
            Some(x) if x.is_finite() && x > 0.0 => Ok(x),
            _ => psi_inverse_numeric(self, y),
        }
    }

    pub fn doubling_constant(&self) -> Option<f64> {
        self.density.doubling_constant()
    }
    pub fn hessian_minorant(&self, alpha: f64) -> Option<f64> {
        self.density.hessian_minorant(alpha)
    }
    pub fn scaling_majorants(&self, alpha: f64) -> Option<(f64, f64)> {
        self.density.scaling_majorants(alpha)
    }
}

const X_LO: f64 = 1e-150;
const X_HI: f64 = 1e150;

/// Invert `ψ` by monotone bracketing and safeguarded Newton/bisection,
/// ignoring any closed form.
pub fn psi_inverse_numeric(model: &EnergyModel, y: f64) -> Result<f64> {
    let out = || Error::OutOfRange {
        value: y,
        range: format!("({:e}, {:e})", model.psi(X_HI), model.psi(X_LO)),
    };
    if !(y > 0.0) || !y.is_finite() {
        return Err(out());
    }
    let tol = 1e-12 * y.abs().max(1.0);
    // ψ decreasing: find lo < hi with ψ(lo) ≥ y ≥ ψ(hi).
    let (mut lo, mut hi) = (1.0, 1.0);
    while model.psi(lo) < y {
        lo *= 0.5;
        if lo < X_LO {
            return Err(out());
        }
    }
    while model.psi(hi) > y {
        hi *= 2.0;
        if hi > X_HI {
            return Err(out());
        }
    }
    let mut x = (lo * hi).sqrt();
    for _ in 0..400 {
        let fx = model.psi(x) - y;
        if fx.abs() <= tol && (hi - lo) <= 4.0 * f64::EPSILON * x {
            return Ok(x);
        }
        if fx > 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let d = model.psi_prime(x);
        let newton = x - fx / d;
        x = if d < 0.0 && newton > lo && newton < hi {
            newton
        } else if hi / lo > 4.0 {
            (lo * hi).sqrt()
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo <= 2.0 * f64::EPSILON * hi {
            break;
        }
    }
    let fx = model.psi(x) - y;
    if fx.abs() <= tol || hi - lo <= 4.0 * f64::EPSILON * hi {
        Ok(x)
    } else {
        Err(out())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ClauseStatus {
    Pass,
    Fail,
    Unverified,
}

#[derive(Debug, Clone, Serialize)]
pub struct ClauseResult {
    pub clause: &'static str,
    pub status: ClauseStatus,
    /// Largest sampled violation, relative to the scale of the inequality.
    pub worst_violation: f64,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub model: String,
    pub clauses: Vec<ClauseResult>,
}

impl ValidationReport {
    pub fn all_pass(&self) -> bool {
        self.clauses.iter().all(|c| c.status == ClauseStatus::Pass)
    }
    pub fn clause(&self, name: &str) -> Option<&ClauseResult> {
        self.clauses.iter().find(|c| c.clause == name)
    }
}

fn clause(name: &'static str, worst: f64, tol: f64, detail: String) -> ClauseResult {
    ClauseResult {
        clause: name,
        status: if worst <= tol { ClauseStatus::Pass } else { ClauseStatus::Fail },
        worst_violation: worst.max(0.0),
        detail,
    }
}

/// Relative violation of `lhs ≤ rhs`.
fn excess(lhs: f64, rhs: f64) -> f64 {
    if !lhs.is_finite() || !rhs.is_finite() {
        return if lhs <= rhs { 0.0 } else { f64::INFINITY };
    }
    (lhs - rhs) / lhs.abs().max(rhs.abs()).max(1.0)
}

/// Sample the structural hypotheses on `grid` (finite, positive, sorted).
pub fn validate_hypotheses(model: &EnergyModel, grid: &[f64]) -> Result<ValidationReport> {
    if grid.is_empty() {
        return Err(Error::InvalidInput("empty sample grid".into()));
    }
    if let Some(bad) = grid.iter().find(|&&x| !(x > 0.0) || !x.is_finite()) {
        return Err(Error::InvalidInput(format!("non-positive grid entry {bad}")));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidInput("sample grid must be strictly increasing".into()));
    }
    let tol = VALIDATION_TOL;
    let mut out = Vec::new();

    // H(0) = 0 and H ≥ 0.
    let mut worst = model.big_h(0.0).abs();
    for &u in grid {
        worst = worst.max(excess(0.0, model.big_h(u)));
    }
    out.push(clause("H_nonnegative_zero_at_origin", worst, tol, "H(0) = 0, H(u) ≥ 0".into()));

    // Convexity of H via divided second differences, including the origin.
    let mut pts = vec![0.0];
    pts.extend_from_slice(grid);
    let mut worst = 0.0f64;
    for w in pts.windows(3) {
        let (a, b, c) = (w[0], w[1], w[2]);
        let (fa, fb, fc) = (model.big_h(a), model.big_h(b), model.big_h(c));
        let d2 = ((fc - fb) / (c - b) - (fb - fa) / (b - a)) / (c - a);
        let scale = fa.abs().max(fb.abs()).max(fc.abs()).max(1.0) / ((c - a) * (c - a));
        worst = worst.max(-d2 / scale);
    }
    out.push(clause("H_convex", worst, tol, "second divided differences of H ≥ 0".into()));

    // Superlinear growth: H(u)/u increasing and unbounded past the grid.
    let top = *grid.last().unwrap();
    let ratios: Vec<f64> = (0..=40).map(|k| {
        let u = top * 2f64.powi(k);
        model.big_h(u) / u
    }).collect();
    let monotone = ratios.windows(2).all(|w| w[1] >= w[0] * (1.0 - tol));
    let grows = ratios.last().unwrap() > &(ratios[0] * (1.0 + 1e-6) + 1e-6);
    out.push(ClauseResult {
        clause: "H_superlinear",
        status: if monotone && grows { ClauseStatus::Pass } else { ClauseStatus::Fail },
        worst_violation: if monotone && grows { 0.0 } else { 1.0 },
        detail: format!(
            "H(u)/u from {:e} to {:e} over u ∈ [{top:e}, {:e}]",
            ratios[0],
            ratios.last().unwrap(),
            top * 2f64.powi(40)
        ),
    });

    // h strictly convex and non-increasing.
    let mut worst_decr = 0.0f64;
    let mut worst_conv = 0.0f64;
    for &x in grid {
        let d1 = model.h_prime(x);
        let d2 = model.h_second(x);
        worst_decr = worst_decr.max(d1 / model.h(x).abs().max(1.0));
        if !(d2 > 0.0) {
            worst_conv = worst_conv.max(1.0);
        }
    }
    for w in grid.windows(3) {
        let (a, b, c) = (w[0], w[1], w[2]);
        let (fa, fb, fc) = (model.h(a), model.h(b), model.h(c));
        let d2 = ((fc - fb) / (c - b) - (fb - fa) / (b - a)) / (c - a);
        if !(d2 > 0.0) {
            worst_conv = worst_conv.max(1.0);
        }
    }
    out.push(clause("h_nonincreasing", worst_decr, tol, "h'(x) ≤ 0".into()));
    out.push(clause("h_strictly_convex", worst_conv, tol, "h''(x) > 0 and strict second differences".into()));

    // ψ strictly decreasing, which makes it invertible.
    let strict = grid.windows(2).all(|w| model.psi(w[0]) > model.psi(w[1]));
    out.push(ClauseResult {
        clause: "psi_strictly_decreasing",
        status: if strict { ClauseStatus::Pass } else { ClauseStatus::Fail },
        worst_violation: if strict { 0.0 } else { 1.0 },
        detail: "ψ(x1) > ψ(x2) for sampled x1 < x2".into(),
    });

    // Doubling: H(x+y) ≤ A (1 + H(x) + H(y)).
    let mut sup_ratio = 0.0f64;
    for &x in grid {
        for &y in grid {
            let r = model.big_h(x + y) / (1.0 + model.big_h(x) + model.big_h(y));
            sup_ratio = sup_ratio.max(r);
        }
    }
    out.push(match model.doubling_constant() {
        Some(a) => {
            let mut worst = 0.0f64;
            for &x in grid {
                for &y in grid {
                    worst = worst.max(excess(
                        model.big_h(x + y),
                        a * (1.0 + model.big_h(x) + model.big_h(y)),
                    ));
                }
            }
            clause("doubling", worst, tol, format!("A = {a}, sampled sup ratio {sup_ratio:e}"))
        }
        None => ClauseResult {
            clause: "doubling",
            status: ClauseStatus::Unverified,
            worst_violation: 0.0,
            detail: format!("no closed-form A; sampled sup ratio {sup_ratio:e}"),
        },
    });

    // H'' > 0 and H''(αx) ≥ f(α) H''(x).
    let positive = grid.iter().all(|&u| model.big_h_second(u) > 0.0);
    out.push(match model.hessian_minorant(1.0) {
        Some(f1) => {
            let mut worst = (f1 - 1.0).abs();
            if !positive {
                worst = worst.max(1.0);
            }
            for &x in grid {
                for &alpha in grid {
                    let f = model.hessian_minorant(alpha).unwrap_or(f64::NAN);
                    worst = worst.max(excess(f * model.big_h_second(x), model.big_h_second(alpha * x)));
                }
            }
            clause("hessian_scaling", worst, tol, format!("f(1) = {f1}"))
        }
        None => ClauseResult {
            clause: "hessian_scaling",
            status: if positive { ClauseStatus::Unverified } else { ClauseStatus::Fail },
            worst_violation: if positive { 0.0 } else { 1.0 },
            detail: "no closed-form f".into(),
        },
    });

    // H(αx) ≤ f1(α) H(x) + f2(α) x.
    out.push(match model.scaling_majorants(1.0) {
        Some((f1, f2)) => {
            let mut worst = (f1 - 1.0).abs().max(f2.abs());
            for &x in grid {
                for &alpha in grid {
                    let (g1, g2) = model.scaling_majorants(alpha).unwrap();
                    worst = worst.max(excess(model.big_h(alpha * x), g1 * model.big_h(x) + g2 * x));
                }
            }
            clause("energy_scaling", worst, tol, format!("f1(1) = {f1}, f2(1) = {f2}"))
        }
        None => ClauseResult {
            clause: "energy_scaling",
            status: ClauseStatus::Unverified,
            worst_violation: 0.0,
            detail: "no closed-form f1, f2".into(),
        },
    });

    Ok(ValidationReport {
        model: model.name(),
        clauses: out,
    })
}

/// Logarithmically spaced grid, handy for validation.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    assert!(n >= 2 && lo > 0.0 && hi > lo);
    let (a, b) = (lo.ln(), hi.ln());
    (0..n).map(|k| (a + (b - a) * k as f64 / (n - 1) as f64).exp()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pme() -> EnergyModel {
        power_law_model(FlowParams::new(2.0, 2.0).unwrap()).unwrap()
    }

    #[test]
    fn porous_medium_closed_forms() {
        let m = pme();
        for &x in &[0.3, 1.0, 2.5, 7.0] {
            assert!((m.big_h(x) - x * x).abs() < 1e-14 * x * x);
            assert!((m.h(x) - 1.0 / x).abs() < 1e-15);
            assert!((m.psi(x) - x.powi(-2)).abs() < 1e-14);
            let y = m.psi(x);
            assert!((m.psi_inverse(y).unwrap() - y.powf(-0.5)).abs() < 1e-14);
        }
    }

    #[test]
    fn pme_coefficient_reproduces_laplacian_of_square() {
        // c m (m-1) = γ makes ρ|∇H'(ρ)|^{q-2}∇H'(ρ) = |∇ρ^γ|^{q-2}∇ρ^γ.
        for &(p, gamma) in &[(2.0, 2.0), (1.5, 1.0), (3.0, 2.5), (2.0, 1.3)] {
            let law = PowerLaw::from_params(&FlowParams::new(p, gamma).unwrap()).unwrap();
            assert!((law.c * law.m * (law.m - 1.0) - gamma).abs() < 1e-14);
        }
    }

    #[test]
    fn q_heat_closed_forms() {
        let m = power_law_model(FlowParams::new(1.5, 1.0).unwrap()).unwrap();
        let law = PowerLaw::from_params(&m.params).unwrap();
        assert!((law.m - 1.5).abs() < 1e-15);
        assert!((law.c - 4.0 / 3.0).abs() < 1e-15);
        for &x in &[0.2, 1.0, 3.0] {
            assert!((m.psi(x) - (2.0 / 3.0) * x.powf(-1.5)).abs() < 1e-14);
        }
    }

    #[test]
    fn rejects_non_admissible_gamma() {
        assert!(FlowParams::new(2.0, 0.5).is_err());
        assert!(FlowParams::new(2.0, 1.0).is_err());
        assert!(FlowParams::new(1.0, 3.0).is_err());
        let params = FlowParams { p: 2.0, q: 2.0, gamma: Some(1.0) };
        assert!(power_law_model(params).is_err());
    }

    #[test]
    fn psi_inverse_examples() {
        let m = pme();
        assert!((m.psi_inverse(4.0).unwrap() - 0.5).abs() < 1e-15);
        assert!((psi_inverse_numeric(&m, 4.0).unwrap() - 0.5).abs() < 1e-12);
        assert!((psi_inverse_numeric(&m, m.psi(1.0)).unwrap() - 1.0).abs() < 1e-12);
        let y = 1e-30;
        let x = m.psi_inverse(y).unwrap();
        assert!((x - 1e15).abs() < 1e3);
        let xn = psi_inverse_numeric(&m, y).unwrap();
        assert!(((xn - x) / x).abs() < 1e-10);
        assert!(m.psi_inverse(0.0).is_err());
        assert!(m.psi_inverse(-1.0).is_err());
    }

    #[test]
    fn validation_passes_for_porous_medium() {
        let grid: Vec<f64> = (1..=100).map(|k| 0.1 * k as f64).collect();
        let report = validate_hypotheses(&pme(), &grid).unwrap();
        assert!(report.all_pass(), "{report:#?}");
    }

    #[test]
    fn linear_energy_fails_superlinearity() {
        let params = FlowParams::geometry(2.0).unwrap();
        let lin = EnergyModel::custom(params, ClosureEnergy::new("linear", |u| u, |_| 1.0, |_| 0.0));
        let grid = log_grid(0.1, 10.0, 30);
        let report = validate_hypotheses(&lin, &grid).unwrap();
        assert_eq!(report.clause("H_superlinear").unwrap().status, ClauseStatus::Fail);
        assert!(!report.all_pass());
    }

    #[test]
    fn grid_errors() {
        assert!(validate_hypotheses(&pme(), &[]).is_err());
        assert!(validate_hypotheses(&pme(), &[0.0, 1.0]).is_err());
        assert!(validate_hypotheses(&pme(), &[2.0, 1.0]).is_err());
    }

    #[test]
    fn h_derivatives_are_sign_correct_on_grid() {
        let m = pme();
        for x in log_grid(0.1, 10.0, 50) {
            assert!(m.h_second(x) > 0.0);
            assert!(m.h_prime(x) < 0.0);
        }
    }
}
