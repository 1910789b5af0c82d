//! Particle configurations, the discrete energy and the weighted norms.
//!
//! Positions are stored sorted and strictly increasing. Gaps are indexed
//! `0..=N`: gap `k` (for `1 ≤ k ≤ N-1`) separates particles `k-1` and `k`,
//! while gaps `0` and `N` come from the boundary rule of the domain.

mod subdiff;

pub use subdiff::*;

use serde::Serialize;

use crate::energy::EnergyModel;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum DomainSpec {
    /// `Ω = ℝ`: no neighbour beyond the extreme particles.
    WholeLine,
    /// `Ω = [-l, l]`. Without pinning the boundary gaps come from mirror
    /// particles `x_0 = -2l - x_1`, `x_{N+1} = 2l - x_N`; with pinning the
    /// extreme particles sit at `∓l`, never move, and see the reflection of
    /// their inner neighbour.
    Interval { l: f64, pinned: bool },
}

impl DomainSpec {
    pub fn half_width(&self) -> Option<f64> {
        match *self {
            DomainSpec::WholeLine => None,
            DomainSpec::Interval { l, .. } => Some(l),
        }
    }
    pub fn is_pinned(&self) -> bool {
        matches!(self, DomainSpec::Interval { pinned: true, .. })
    }
    fn is_mirror(&self) -> bool {
        matches!(self, DomainSpec::Interval { pinned: false, .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleConfig {
    positions: Vec<f64>,
    domain: DomainSpec,
}

/// Tolerance (relative to `l`) within which pinned end particles are snapped
/// onto the walls.
const PIN_TOL: f64 = 1e-12;

impl ParticleConfig {
    pub fn new(positions: Vec<f64>, domain: DomainSpec) -> Result<Self> {
        let n = positions.len();
        if n < 2 {
            return Err(Error::InvalidInput(format!("need at least 2 particles, got {n}")));
        }
        if let Some(x) = positions.iter().find(|x| !x.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite position {x}")));
        }
        if let Some(k) = positions.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(Error::Degenerate(format!(
                "positions must be strictly increasing (x[{k}] = {}, x[{}] = {})",
                positions[k],
                k + 1,
                positions[k + 1]
            )));
        }
        let mut positions = positions;
        if let DomainSpec::Interval { l, pinned } = domain {
            if !(l > 0.0) || !l.is_finite() {
                return Err(Error::InvalidInput(format!("half-width must be positive, got {l}")));
            }
            let tol = PIN_TOL * l;
            if positions[0] < -l - tol || positions[n - 1] > l + tol {
                return Err(Error::InvalidInput(format!(
                    "particles [{}, {}] leave [-{l}, {l}]",
                    positions[0],
                    positions[n - 1]
                )));
            }
            if pinned {
                if (positions[0] + l).abs() > tol || (positions[n - 1] - l).abs() > tol {
                    return Err(Error::InvalidInput(format!(
                        "pinned configuration needs x_1 = -{l} and x_N = {l}"
                    )));
                }
                positions[0] = -l;
                positions[n - 1] = l;
                if n < 3 {
                    return Err(Error::InvalidInput("pinned configuration needs N ≥ 3".into()));
                }
            } else if positions[0] <= -l || positions[n - 1] >= l {
                return Err(Error::Degenerate(
                    "mirror boundary: a particle on the wall has a zero boundary gap".into(),
                ));
            }
        }
        Ok(Self { positions, domain })
    }

    /// Sort first; the discrete energy only depends on the empirical measure.
    pub fn from_unsorted(mut positions: Vec<f64>, domain: DomainSpec) -> Result<Self> {
        positions.sort_by(f64::total_cmp);
        Self::new(positions, domain)
    }

    pub fn with_positions(&self, positions: Vec<f64>) -> Result<Self> {
        Self::new(positions, self.domain)
    }

    pub fn n(&self) -> usize {
        self.positions.len()
    }
    pub fn positions(&self) -> &[f64] {
        &self.positions
    }
    pub fn domain(&self) -> DomainSpec {
        self.domain
    }
    pub fn into_positions(self) -> Vec<f64> {
        self.positions
    }

    /// Gaps `0..=N`; boundary gaps per the domain rule (`+∞` on the line).
    pub fn gaps(&self) -> Vec<f64> {
        let x = &self.positions;
        let n = x.len();
        let mut g = Vec::with_capacity(n + 1);
        g.push(0.0);
        g.extend(x.windows(2).map(|w| w[1] - w[0]));
        g.push(0.0);
        match self.domain {
            DomainSpec::WholeLine => {
                g[0] = f64::INFINITY;
                g[n] = f64::INFINITY;
            }
            DomainSpec::Interval { l, pinned: false } => {
                g[0] = 2.0 * (x[0] + l);
                g[n] = 2.0 * (l - x[n - 1]);
            }
            DomainSpec::Interval { pinned: true, .. } => {
                g[0] = g[1];
                g[n] = g[n - 1];
            }
        }
        g
    }

    /// Derivative of a boundary gap with respect to its own particle: the
    /// mirror particle moves with the real one, doubling the rate.
    pub(crate) fn boundary_gap_rate(&self) -> f64 {
        if self.domain.is_mirror() {
            2.0
        } else {
            1.0
        }
    }

    /// `|B_i| = min(Δx_i, Δx_{i+1})`, the 1D ball diameter.
    pub fn ball_sizes(&self) -> Vec<f64> {
        let g = self.gaps();
        g.windows(2).map(|w| w[0].min(w[1])).collect()
    }

    pub fn min_gap(&self) -> f64 {
        self.positions
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::INFINITY, f64::min)
    }

    pub fn max_gap(&self) -> f64 {
        self.positions.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
    }

    /// `M_p = (1/N) Σ |x_i|^p`.
    pub fn moment(&self, p: f64) -> f64 {
        self.positions.iter().map(|x| x.abs().powf(p)).sum::<f64>() / self.n() as f64
    }

    /// `max_{2≤i≤N-1} |Δx_{i+1}/Δx_i - 1|` over interior gaps.
    pub fn mesh_ratio(&self) -> f64 {
        let x = &self.positions;
        x.windows(3)
            .map(|w| ((w[2] - w[1]) / (w[1] - w[0]) - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

/// `Ẽ_N(x) = (1/N) Σ_i h(N r_i)`, cross-checked against the ball form
/// `Σ_i |B_i| H(1/(N|B_i|))`.
pub fn discrete_energy(cfg: &ParticleConfig, model: &EnergyModel) -> Result<f64> {
    let n = cfg.n() as f64;
    let balls = cfg.ball_sizes();
    if let Some(r) = balls.iter().find(|r| !(**r > 0.0)) {
        return Err(Error::Degenerate(format!("ball of size {r}")));
    }
    let e: f64 = balls.iter().map(|&r| model.h(n * r)).sum::<f64>() / n;
    debug_assert!({
        let ball = discrete_energy_ball_form(cfg, model);
        (ball - e).abs() <= 1e-12 * e.abs().max(1e-300) || !e.is_finite()
    });
    Ok(e)
}

/// `Σ_i |B_i| H(1/(N|B_i|))`, the block-density form of the discrete energy.
pub fn discrete_energy_ball_form(cfg: &ParticleConfig, model: &EnergyModel) -> f64 {
    let n = cfg.n() as f64;
    cfg.ball_sizes()
        .iter()
        .map(|&r| r * model.big_h(1.0 / (n * r)))
        .sum()
}

/// `‖v‖_{w,s} = ((1/N) Σ |v_i|^s)^{1/s}`.
pub fn weighted_norm(v: &[f64], exponent: f64) -> f64 {
    assert!(exponent >= 1.0, "weighted norm exponent must be ≥ 1");
    if v.is_empty() {
        return 0.0;
    }
    let n = v.len() as f64;
    let s: f64 = if exponent == 2.0 {
        v.iter().map(|x| x * x).sum()
    } else {
        v.iter().map(|x| x.abs().powf(exponent)).sum()
    };
    (s / n).powf(1.0 / exponent)
}

/// `(x, y)_w = (1/N) Σ x_i y_i`.
pub fn weighted_pairing(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len(), "dimension mismatch");
    x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / x.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::{power_law_model, FlowParams};

    fn pme() -> EnergyModel {
        power_law_model(FlowParams::new(2.0, 2.0).unwrap()).unwrap()
    }

    fn line(x: &[f64]) -> ParticleConfig {
        ParticleConfig::new(x.to_vec(), DomainSpec::WholeLine).unwrap()
    }

    #[test]
    fn energy_examples() {
        let m = pme();
        let e = discrete_energy(&line(&[0.0, 1.0, 2.0]), &m).unwrap();
        assert!((e - 1.0 / 3.0).abs() < 1e-15);
        let e = discrete_energy(&line(&[0.0, 1.0, 3.0]), &m).unwrap();
        assert!((e - 5.0 / 18.0).abs() < 1e-15);
        let a = 0.37;
        let e = discrete_energy(&line(&[-a, a]), &m).unwrap();
        assert!((e - m.h(4.0 * a)).abs() < 1e-15);
    }

    #[test]
    fn ball_sizes_use_nearest_neighbour() {
        assert_eq!(line(&[0.0, 1.0, 3.0]).ball_sizes(), vec![1.0, 1.0, 2.0]);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(ParticleConfig::new(vec![0.0], DomainSpec::WholeLine).is_err());
        assert!(ParticleConfig::new(vec![0.0, 0.0, 1.0], DomainSpec::WholeLine).is_err());
        assert!(ParticleConfig::new(vec![1.0, 0.0], DomainSpec::WholeLine).is_err());
        let mirror = DomainSpec::Interval { l: 1.0, pinned: false };
        assert!(ParticleConfig::new(vec![-1.0, 0.0, 0.5], mirror).is_err());
        assert!(ParticleConfig::new(vec![-2.0, 0.0, 0.5], mirror).is_err());
        let pinned = DomainSpec::Interval { l: 1.0, pinned: true };
        assert!(ParticleConfig::new(vec![-0.9, 0.0, 1.0], pinned).is_err());
        assert!(ParticleConfig::new(vec![-1.0, 0.0, 1.0], pinned).is_ok());
    }

    #[test]
    fn boundary_gap_rules() {
        let mirror = ParticleConfig::new(vec![-0.5, 0.0, 0.75], DomainSpec::Interval { l: 1.0, pinned: false }).unwrap();
        assert_eq!(mirror.gaps(), vec![1.0, 0.5, 0.75, 0.5]);
        let pinned = ParticleConfig::new(vec![-1.0, -0.2, 0.3, 1.0], DomainSpec::Interval { l: 1.0, pinned: true }).unwrap();
        let g = pinned.gaps();
        assert_eq!(g[0], g[1]);
        assert_eq!(g[4], g[3]);
    }

    #[test]
    fn weighted_norm_examples() {
        for s in [1.0, 1.5, 2.0, 3.0] {
            assert!((weighted_norm(&[1.0, 1.0, 1.0], s) - 1.0).abs() < 1e-15);
        }
        assert!((weighted_norm(&[3.0, 0.0, 0.0], 2.0) - 3f64.sqrt()).abs() < 1e-15);
        assert!((weighted_pairing(&[1.0, 2.0], &[3.0, 4.0]) - 5.5).abs() < 1e-15);
    }

    #[test]
    fn mesh_ratio_of_uniform_is_zero() {
        assert_eq!(line(&[0.0, 0.5, 1.0, 1.5]).mesh_ratio(), 0.0);
        assert!((line(&[0.0, 1.0, 3.0]).mesh_ratio() - 1.0).abs() < 1e-15);
    }
}
