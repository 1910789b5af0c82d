//! Continuum side: densities, quantiles, 1D Wasserstein distances, the
//! continuum energy and generalized Fisher information.

mod interpolant;
mod recovery;

pub use interpolant::Interpolant;
pub use recovery::{block_density, certify_smooth_set, recovery_sequence, RecoverySequence, SmoothSetCertificate};

use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::energy::EnergyModel;
use crate::error::{Error, Result};
use crate::particles::ParticleConfig;
use crate::quad::{integrate, kronrod15, QuadOptions};

pub type DensityFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
enum Repr {
    /// Piecewise linear through `(nodes, values)`.
    Linear(Vec<f64>),
    /// Constant on each cell between consecutive breakpoints.
    Cells(Vec<f64>),
    Analytic {
        f: DensityFn,
        df: Option<DensityFn>,
        scale: f64,
    },
}

/// A probability density on a bounded interval with CDF and quantile access.
///
/// `breaks` partitions the support; the CDF is tabulated at the breaks and
/// completed within a cell exactly (linear, cells) or by a 15-point Kronrod
/// rule (analytic; breaks are refined so each cell is small).
#[derive(Clone)]
pub struct DensityProfile {
    repr: Repr,
    breaks: Vec<f64>,
    cum: Vec<f64>,
}

impl fmt::Debug for DensityProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.repr {
            Repr::Linear(_) => "linear",
            Repr::Cells(_) => "cells",
            Repr::Analytic { .. } => "analytic",
        };
        f.debug_struct("DensityProfile")
            .field("kind", &kind)
            .field("support", &self.support())
            .field("cells", &(self.breaks.len() - 1))
            .finish()
    }
}

fn check_breaks(breaks: &[f64]) -> Result<()> {
    if breaks.len() < 2 {
        return Err(Error::InvalidInput("density needs at least two nodes".into()));
    }
    if breaks.iter().any(|x| !x.is_finite()) || breaks.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidInput("density nodes must be finite and strictly increasing".into()));
    }
    Ok(())
}

fn check_values(values: &[f64]) -> Result<()> {
    if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::InvalidInput("density values must be finite and non-negative".into()));
    }
    Ok(())
}

impl DensityProfile {
    /// Piecewise-linear density through the given nodes, normalised to mass 1.
    pub fn linear(nodes: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        check_breaks(&nodes)?;
        check_values(&values)?;
        if nodes.len() != values.len() {
            return Err(Error::InvalidInput("nodes and values differ in length".into()));
        }
        let mass: f64 = nodes
            .windows(2)
            .zip(values.windows(2))
            .map(|(x, v)| 0.5 * (x[1] - x[0]) * (v[0] + v[1]))
            .sum();
        if !(mass > 0.0) {
            return Err(Error::InvalidInput("density has zero mass".into()));
        }
        let values = values.into_iter().map(|v| v / mass).collect();
        Ok(Self::finish(Repr::Linear(values), nodes))
    }

    /// Piecewise-constant density with `heights[k]` on `[edges[k], edges[k+1]]`.
    pub fn cells(edges: Vec<f64>, heights: Vec<f64>) -> Result<Self> {
        check_breaks(&edges)?;
        check_values(&heights)?;
        if edges.len() != heights.len() + 1 {
            return Err(Error::InvalidInput("need one height per cell".into()));
        }
        let mass: f64 = edges.windows(2).zip(&heights).map(|(x, h)| (x[1] - x[0]) * h).sum();
        if !(mass > 0.0) {
            return Err(Error::InvalidInput("density has zero mass".into()));
        }
        let heights = heights.into_iter().map(|h| h / mass).collect();
        Ok(Self::finish(Repr::Cells(heights), edges))
    }

    /// Cell averages on `M` equal cells of `[-l, l]`.
    pub fn uniform_cells(l: f64, values: &[f64]) -> Result<Self> {
        let m = values.len();
        let edges = (0..=m).map(|j| -l + 2.0 * l * j as f64 / m as f64).collect();
        Self::cells(edges, values.to_vec())
    }

    pub fn uniform(a: f64, b: f64) -> Result<Self> {
        Self::linear(vec![a, b], vec![1.0, 1.0])
    }

    /// Closed-form density on `[a, b]` (with optional derivative), normalised
    /// by quadrature. `kinks` are extra points where `f` may be non-smooth.
    pub fn analytic(f: DensityFn, df: Option<DensityFn>, a: f64, b: f64, kinks: &[f64]) -> Result<Self> {
        let mut coarse: Vec<f64> = vec![a, b];
        coarse.extend(kinks.iter().copied().filter(|k| *k > a && *k < b));
        coarse.sort_by(f64::total_cmp);
        coarse.dedup();
        check_breaks(&coarse)?;
        // Refine so each cell is at most (b - a)/1024 wide.
        let h = (b - a) / 1024.0;
        let mut breaks = vec![a];
        for w in coarse.windows(2) {
            let k = ((w[1] - w[0]) / h).ceil().max(1.0) as usize;
            for j in 1..=k {
                breaks.push(if j == k { w[1] } else { w[0] + (w[1] - w[0]) * j as f64 / k as f64 });
            }
        }
        let opts = QuadOptions::default();
        let mass = integrate(|x| f(x), &breaks, opts)?;
        if !(mass > 0.0) || !mass.is_finite() {
            return Err(Error::InvalidInput(format!("density mass {mass} is not positive")));
        }
        if let Some(x) = breaks.iter().find(|x| !(f(**x) >= 0.0)) {
            return Err(Error::InvalidInput(format!("density negative or undefined at {x}")));
        }
        Ok(Self::finish(
            Repr::Analytic {
                f,
                df,
                scale: 1.0 / mass,
            },
            breaks,
        ))
    }

    fn finish(repr: Repr, breaks: Vec<f64>) -> Self {
        let mut out = Self {
            repr,
            cum: vec![0.0; breaks.len()],
            breaks,
        };
        for k in 1..out.breaks.len() {
            out.cum[k] = out.cum[k - 1] + out.cell_mass(k - 1, out.breaks[k]);
        }
        // Absorb rounding so the CDF ends exactly at 1.
        let total = *out.cum.last().unwrap();
        if let Repr::Analytic { scale, .. } = &mut out.repr {
            *scale /= total;
        } else if let Repr::Linear(v) | Repr::Cells(v) = &mut out.repr {
            for x in v.iter_mut() {
                *x /= total;
            }
        }
        for c in out.cum.iter_mut() {
            *c /= total;
        }
        *out.cum.last_mut().unwrap() = 1.0;
        out
    }

    pub fn support(&self) -> (f64, f64) {
        (self.breaks[0], *self.breaks.last().unwrap())
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breaks
    }

    pub fn mass(&self) -> f64 {
        let (a, b) = self.support();
        integrate(|x| self.density(x), &self.breaks, QuadOptions::default()).unwrap_or_else(|_| self.cdf(b) - self.cdf(a))
    }

    pub fn has_closed_form_derivative(&self) -> bool {
        matches!(self.repr, Repr::Analytic { df: Some(_), .. })
    }

    pub fn is_piecewise_constant(&self) -> bool {
        matches!(self.repr, Repr::Cells(_))
    }

    fn cell_of(&self, x: f64) -> usize {
        let k = self.breaks.partition_point(|b| *b <= x);
        k.saturating_sub(1).min(self.breaks.len() - 2)
    }

    /// Density on cell `k` at `x` (no support check).
    fn cell_density(&self, k: usize, x: f64) -> f64 {
        match &self.repr {
            Repr::Linear(v) => {
                let (x0, x1) = (self.breaks[k], self.breaks[k + 1]);
                let t = (x - x0) / (x1 - x0);
                v[k] + t * (v[k + 1] - v[k])
            }
            Repr::Cells(h) => h[k],
            Repr::Analytic { f, scale, .. } => scale * f(x),
        }
    }

    /// `∫_{breaks[k]}^{x} ρ`.
    fn cell_mass(&self, k: usize, x: f64) -> f64 {
        let x0 = self.breaks[k];
        if x <= x0 {
            return 0.0;
        }
        match &self.repr {
            Repr::Linear(_) | Repr::Cells(_) => 0.5 * (x - x0) * (self.cell_density(k, x0) + self.cell_density(k, x)),
            Repr::Analytic { f, scale, .. } => scale * kronrod15(|y| f(y), x0, x),
        }
    }

    pub fn density(&self, x: f64) -> f64 {
        let (a, b) = self.support();
        if x < a || x > b {
            return 0.0;
        }
        self.cell_density(self.cell_of(x), x)
    }

    /// `ρ'(x)` where defined: the cell slope for linear profiles, the closed
    /// form for analytic ones; `None` for piecewise-constant profiles.
    pub fn derivative(&self, x: f64) -> Option<f64> {
        let (a, b) = self.support();
        if x < a || x > b {
            return Some(0.0);
        }
        match &self.repr {
            Repr::Linear(v) => {
                let k = self.cell_of(x);
                Some((v[k + 1] - v[k]) / (self.breaks[k + 1] - self.breaks[k]))
            }
            Repr::Cells(_) => None,
            Repr::Analytic { df, scale, .. } => df.as_ref().map(|d| scale * d(x)),
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let (a, b) = self.support();
        if x <= a {
            return 0.0;
        }
        if x >= b {
            return 1.0;
        }
        let k = self.cell_of(x);
        (self.cum[k] + self.cell_mass(k, x)).clamp(0.0, 1.0)
    }

    /// Generalised inverse `Q(s) = inf{x : F(x) ≥ s}`.
    pub fn quantile(&self, s: f64) -> f64 {
        let (a, b) = self.support();
        if s <= 0.0 {
            return a;
        }
        if s >= 1.0 {
            return b;
        }
        // Cell with cum[k] < s ≤ cum[k+1].
        let k = (self.cum.partition_point(|c| *c < s)).clamp(1, self.breaks.len() - 1) - 1;
        let (x0, x1) = (self.breaks[k], self.breaks[k + 1]);
        let r = s - self.cum[k];
        match &self.repr {
            Repr::Linear(_) | Repr::Cells(_) => {
                let v0 = self.cell_density(k, x0);
                let slope = (self.cell_density(k, x1) - v0) / (x1 - x0);
                let disc = (v0 * v0 + 2.0 * slope * r).max(0.0);
                let denom = v0 + disc.sqrt();
                let t = if denom > 0.0 { 2.0 * r / denom } else { 0.0 };
                (x0 + t).clamp(x0, x1)
            }
            Repr::Analytic { .. } => {
                let (mut lo, mut hi) = (x0, x1);
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if mid <= lo || mid >= hi {
                        break;
                    }
                    if self.cum[k] + self.cell_mass(k, mid) < s {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                    if hi - lo <= 1e-9 * (x1 - x0) {
                        break;
                    }
                }
                // Newton polish inside the bracket.
                let mut x = 0.5 * (lo + hi);
                for _ in 0..4 {
                    let d = self.cell_density(k, x);
                    if !(d > 0.0) {
                        break;
                    }
                    let nx = x - (self.cum[k] + self.cell_mass(k, x) - s) / d;
                    if !(nx >= lo && nx <= hi) {
                        break;
                    }
                    x = nx;
                }
                x
            }
        }
    }

    /// Values of the CDF at the breakpoints (the kinks of the quantile).
    fn quantile_breaks(&self) -> Vec<f64> {
        self.cum.clone()
    }

    /// Sample `(x, ρ(x))` on `n` equispaced points of the support.
    pub fn sample(&self, n: usize) -> Vec<(f64, f64)> {
        let (a, b) = self.support();
        (0..n)
            .map(|j| {
                let x = a + (b - a) * j as f64 / (n - 1).max(1) as f64;
                (x, self.density(x))
            })
            .collect()
    }
}

/// A probability measure on the line as seen by the transport routines.
#[derive(Debug, Clone, Copy)]
pub enum Measure<'a> {
    Particles(&'a ParticleConfig),
    /// Equal-mass atoms, in any order.
    Atoms(&'a [f64]),
    Density(&'a DensityProfile),
}

enum Quantile<'a> {
    Atoms(Vec<f64>),
    Density(&'a DensityProfile),
}

impl<'a> Quantile<'a> {
    fn of(m: Measure<'a>) -> Self {
        match m {
            Measure::Particles(c) => Quantile::Atoms(c.positions().to_vec()),
            Measure::Atoms(x) => {
                let mut v = x.to_vec();
                v.sort_by(f64::total_cmp);
                Quantile::Atoms(v)
            }
            Measure::Density(d) => Quantile::Density(d),
        }
    }

    fn eval(&self, s: f64) -> f64 {
        match self {
            Quantile::Atoms(x) => {
                let n = x.len();
                let k = ((s * n as f64).ceil() as usize).clamp(1, n) - 1;
                x[k]
            }
            Quantile::Density(d) => d.quantile(s),
        }
    }

    fn breaks(&self) -> Vec<f64> {
        match self {
            Quantile::Atoms(x) => {
                let n = x.len();
                (0..=n).map(|k| k as f64 / n as f64).collect()
            }
            Quantile::Density(d) => d.quantile_breaks(),
        }
    }
}

/// `W_p(μ, ν) = (∫_0^1 |Q_μ - Q_ν|^p ds)^{1/p}`.
///
/// Exact for two atomic measures; otherwise by adaptive quadrature in `s`
/// with breakpoints at the kinks of both quantile functions.
pub fn wasserstein_p(mu: Measure<'_>, nu: Measure<'_>, p: f64) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(Error::InvalidParams(format!("p = {p} must be at least 1")));
    }
    let (qa, qb) = (Quantile::of(mu), Quantile::of(nu));
    let mut breaks: Vec<f64> = qa.breaks();
    breaks.extend(qb.breaks());
    breaks.push(0.0);
    breaks.push(1.0);
    breaks.sort_by(f64::total_cmp);
    breaks.dedup_by(|a, b| (*a - *b).abs() <= 1e-15);
    let integrand = |s: f64| (qa.eval(s) - qb.eval(s)).abs().powf(p);
    let value = match (&qa, &qb) {
        (Quantile::Atoms(_), Quantile::Atoms(_)) => breaks
            .windows(2)
            .map(|w| (w[1] - w[0]) * integrand(0.5 * (w[0] + w[1])))
            .sum(),
        _ => integrate(
            integrand,
            &breaks,
            QuadOptions {
                abs_tol: 1e-15,
                rel_tol: 1e-11,
                max_segments: 50_000,
            },
        )?,
    };
    Ok(value.max(0.0).powf(1.0 / p))
}

/// `E(ρ) = ∫ H(ρ(x)) dx`.
pub fn continuum_energy(rho: &DensityProfile, model: &EnergyModel) -> Result<f64> {
    integrate(|x| model.big_h(rho.density(x)), rho.breakpoints(), QuadOptions::default())
}

/// Density below which the Fisher integrand is cut off.
pub const VACUUM: f64 = 1e-12;

#[derive(Debug, Clone, Copy, Serialize)]
pub struct FisherInformation {
    /// `I_p(ρ) = ∫ |H''(ρ) ρ'|^p ρ dx`.
    pub value: f64,
    /// `g(ρ) = I_p^{1/p}`.
    pub slope: f64,
    /// The region with `ρ < VACUUM` would have contributed more than 1e-6
    /// relative had it not been cut.
    pub truncated: bool,
    /// The integral diverged.
    pub infinite: bool,
}

pub fn fisher_information(rho: &DensityProfile, model: &EnergyModel) -> Result<FisherInformation> {
    let p = model.params.p;
    if rho.is_piecewise_constant() {
        return Err(Error::InvalidInput(
            "piecewise-constant profile has no derivative; interpolate it first".into(),
        ));
    }
    if rho.derivative(rho.support().0).is_none() {
        return Err(Error::InvalidInput("analytic profile lacks a derivative".into()));
    }
    let term = |r: f64, x: f64| -> f64 {
        let d = rho.derivative(x).unwrap_or(0.0);
        (model.big_h_second(r) * d).abs().powf(p) * r
    };
    let opts = QuadOptions {
        abs_tol: 1e-13,
        rel_tol: 1e-10,
        max_segments: 20_000,
    };
    let kept = integrate(
        |x| {
            let r = rho.density(x);
            if r < VACUUM {
                0.0
            } else {
                term(r, x)
            }
        },
        rho.breakpoints(),
        opts,
    );
    let value = match kept {
        Ok(v) => v,
        Err(_) => {
            return Ok(FisherInformation {
                value: f64::INFINITY,
                slope: f64::INFINITY,
                truncated: false,
                infinite: true,
            })
        }
    };
    let cut = integrate(
        |x| {
            let r = rho.density(x);
            if r < VACUUM {
                term(VACUUM, x)
            } else {
                0.0
            }
        },
        rho.breakpoints(),
        opts,
    )
    .unwrap_or(f64::INFINITY);
    Ok(FisherInformation {
        value,
        slope: value.powf(1.0 / p),
        truncated: cut > 1e-6 * value.max(1e-300),
        infinite: false,
    })
}

/// Piecewise-linear profile through cell centres of a cell-average profile,
/// extended flat to the ends of the support.
pub fn interpolate_cells(rho: &DensityProfile) -> Result<DensityProfile> {
    let Repr::Cells(h) = &rho.repr else {
        return Ok(rho.clone());
    };
    let e = &rho.breaks;
    let mut nodes = vec![e[0]];
    let mut values = vec![h[0]];
    for k in 0..h.len() {
        nodes.push(0.5 * (e[k] + e[k + 1]));
        values.push(h[k]);
    }
    nodes.push(*e.last().unwrap());
    values.push(*h.last().unwrap());
    DensityProfile::linear(nodes, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::{power_law_model, FlowParams};
    use crate::particles::DomainSpec;

    fn pme() -> EnergyModel {
        power_law_model(FlowParams::new(2.0, 2.0).unwrap()).unwrap()
    }

    fn parabola() -> DensityProfile {
        DensityProfile::analytic(
            Arc::new(|x: f64| 0.75 * (1.0 - x * x)),
            Some(Arc::new(|x: f64| -1.5 * x)),
            -1.0,
            1.0,
            &[],
        )
        .unwrap()
    }

    #[test]
    fn energies_of_reference_densities() {
        let m = pme();
        let e = continuum_energy(&DensityProfile::uniform(0.0, 1.0).unwrap(), &m).unwrap();
        assert!((e - 1.0).abs() < 1e-12);
        let l = 0.7;
        let e = continuum_energy(&DensityProfile::uniform(-l, l).unwrap(), &m).unwrap();
        assert!((e - m.h(2.0 * l)).abs() < 1e-12);
        let e = continuum_energy(&parabola(), &m).unwrap();
        assert!((e - 0.6).abs() < 1e-10);
    }

    #[test]
    fn fisher_of_reference_densities() {
        let m = pme();
        let f = fisher_information(&DensityProfile::uniform(-1.0, 1.0).unwrap(), &m).unwrap();
        assert_eq!(f.value, 0.0);
        let f = fisher_information(&parabola(), &m).unwrap();
        assert!((f.value - 1.8).abs() < 1e-9, "{}", f.value);
        assert!(!f.truncated && !f.infinite);
    }

    #[test]
    fn quantile_round_trip() {
        let profiles = [
            parabola(),
            DensityProfile::linear(vec![-1.0, 0.0, 0.5, 2.0], vec![0.2, 1.0, 0.0, 0.7]).unwrap(),
            DensityProfile::cells(vec![0.0, 1.0, 2.0, 4.0], vec![1.0, 0.0, 2.0]).unwrap(),
        ];
        for d in &profiles {
            let (a, b) = d.support();
            for j in 1..200 {
                let x = a + (b - a) * j as f64 / 200.0;
                if d.density(x) > 1e-6 && d.density(x - 1e-9) > 1e-6 {
                    assert!((d.quantile(d.cdf(x)) - x).abs() < 1e-8, "{d:?} at {x}");
                }
            }
            assert!((d.cdf(b) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn wasserstein_basics() {
        assert!((wasserstein_p(Measure::Atoms(&[0.3]), Measure::Atoms(&[-1.2]), 2.0).unwrap() - 1.5).abs() < 1e-15);
        let x = ParticleConfig::new(vec![0.0, 1.0, 3.0], DomainSpec::WholeLine).unwrap();
        let y = ParticleConfig::new(vec![0.5, 0.7, 2.0], DomainSpec::WholeLine).unwrap();
        let w = wasserstein_p(Measure::Particles(&x), Measure::Particles(&y), 3.0).unwrap();
        let want = crate::particles::weighted_norm(&[-0.5, 0.3, 1.0], 3.0);
        assert!((w - want).abs() < 1e-14);
        let d = parabola();
        assert!(wasserstein_p(Measure::Density(&d), Measure::Density(&d), 2.0).unwrap() < 1e-12);
        // Uniform on [0,1] against the atom at 0: W_1 = 1/2.
        let u = DensityProfile::uniform(0.0, 1.0).unwrap();
        let w = wasserstein_p(Measure::Density(&u), Measure::Atoms(&[0.0]), 1.0).unwrap();
        assert!((w - 0.5).abs() < 1e-12);
    }

    #[test]
    fn interpolated_cells_keep_mass() {
        let d = DensityProfile::uniform_cells(1.0, &[1.0, 2.0, 3.0, 2.0]).unwrap();
        let g = interpolate_cells(&d).unwrap();
        assert!((g.mass() - 1.0).abs() < 1e-14);
        assert!(g.derivative(0.1).is_some());
    }
}
