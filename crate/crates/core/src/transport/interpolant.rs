use std::sync::Arc;

use super::DensityProfile;
use crate::energy::EnergyModel;
use crate::error::{Error, Result};
use crate::particles::{psi_vector, ParticleConfig};
use crate::quad::{integrate, QuadOptions};

/// Continuous density `ρ̃_N = ν / m_N` built from a particle configuration.
///
/// On the cell `[x_j, x_{j+1}]`, `p_j` interpolates linearly between
/// `ψ(NΔx_j)` and `ψ(NΔx_{j+1})`, i.e. the `ψ`-values of the gaps left and
/// right of particle `j`, and `ν = 1/ψ⁻¹(p_j)`. Outside `[x_1, x_N]` the
/// density is zero.
#[derive(Debug, Clone)]
pub struct Interpolant {
    x: Vec<f64>,
    /// `ψ_k / N = ψ(N Δx_k)` for gaps `k = 0..=N`.
    p_nodes: Vec<f64>,
    gaps: Vec<f64>,
    model: EnergyModel,
    m_n: f64,
}

impl Interpolant {
    pub fn new(cfg: &ParticleConfig, model: &EnergyModel) -> Result<Self> {
        let n = cfg.n() as f64;
        let p_nodes: Vec<f64> = psi_vector(cfg, model)?.into_iter().map(|v| v / n).collect();
        if let Some(v) = p_nodes.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(Error::OutOfRange {
                value: *v,
                range: "[0, ∞)".into(),
            });
        }
        let mut out = Self {
            x: cfg.positions().to_vec(),
            p_nodes,
            gaps: cfg.gaps(),
            model: model.clone(),
            m_n: 1.0,
        };
        out.m_n = integrate(|y| out.nu(y), &out.x, QuadOptions::default())?;
        Ok(out)
    }

    pub fn m_n(&self) -> f64 {
        self.m_n
    }

    pub fn positions(&self) -> &[f64] {
        &self.x
    }

    fn cell(&self, y: f64) -> Option<usize> {
        let n = self.x.len();
        if y < self.x[0] || y > self.x[n - 1] {
            return None;
        }
        Some(self.x.partition_point(|v| *v <= y).clamp(1, n - 1) - 1)
    }

    /// `p_j(y)` and its slope on cell `j`.
    fn p(&self, j: usize, y: f64) -> (f64, f64) {
        let (x0, x1) = (self.x[j], self.x[j + 1]);
        let slope = (self.p_nodes[j + 1] - self.p_nodes[j]) / (x1 - x0);
        (self.p_nodes[j] + slope * (y - x0), slope)
    }

    /// `ψ⁻¹(p_j(y))`; `+∞` where `p_j` vanishes.
    pub fn inverse_at(&self, j: usize, y: f64) -> Result<f64> {
        let (p, _) = self.p(j, y);
        if p <= 0.0 {
            return Ok(f64::INFINITY);
        }
        self.model.psi_inverse(p)
    }

    /// `N·min(Δx_j, Δx_{j+1})` and `N·max(Δx_j, Δx_{j+1})` for cell `j`.
    pub fn bracket(&self, j: usize) -> (f64, f64) {
        let n = self.x.len() as f64;
        let (a, b) = (self.gaps[j], self.gaps[j + 1]);
        (n * a.min(b), n * a.max(b))
    }

    pub fn cells(&self) -> usize {
        self.x.len() - 1
    }

    /// Unnormalised `ν = m_N ρ̃_N`.
    pub fn nu(&self, y: f64) -> f64 {
        match self.cell(y) {
            Some(j) => match self.inverse_at(j, y) {
                Ok(v) if v.is_finite() => 1.0 / v,
                _ => 0.0,
            },
            None => 0.0,
        }
    }

    /// `ν'(y) = p_j' / (h''(ψ⁻¹(p)) ψ⁻¹(p)²)`.
    pub fn nu_prime(&self, y: f64) -> f64 {
        let Some(j) = self.cell(y) else { return 0.0 };
        let (_, slope) = self.p(j, y);
        match self.inverse_at(j, y) {
            Ok(v) if v.is_finite() => slope / (self.model.h_second(v) * v * v),
            _ => 0.0,
        }
    }

    pub fn rho(&self, y: f64) -> f64 {
        self.nu(y) / self.m_n
    }

    /// `g(ν)^p = ∫ |H''(ν) ν'|^p ν`, integrated directly on each cell.
    pub fn fisher_p(&self) -> Result<f64> {
        let p = self.model.params.p;
        integrate(
            |y| {
                let v = self.nu(y);
                if v <= 0.0 {
                    return 0.0;
                }
                (self.model.big_h_second(v) * self.nu_prime(y)).abs().powf(p) * v
            },
            &self.x,
            QuadOptions {
                abs_tol: 1e-14,
                rel_tol: 1e-11,
                max_segments: 20_000,
            },
        )
    }

    /// `(1/N) Σ_j |ψ_{j+1} - ψ_j|^p` over cells.
    pub fn chain_sum(&self) -> f64 {
        let n = self.x.len() as f64;
        let p = self.model.params.p;
        (0..self.cells())
            .map(|j| (n * (self.p_nodes[j + 1] - self.p_nodes[j])).abs().powf(p))
            .sum::<f64>()
            / n
    }

    /// `ε = max_j max(1, Δx_j/Δx_{j+1})^{p-1} - 1`, the mesh excess in the
    /// cell-wise bound `∫ ν^{1-p} ≤ Δx_{j+1} (N max(Δx_j, Δx_{j+1}))^{p-1}`.
    pub fn epsilon(&self) -> f64 {
        let p = self.model.params.p;
        (0..self.cells())
            .map(|j| (self.gaps[j] / self.gaps[j + 1]).max(1.0).powf(p - 1.0) - 1.0)
            .fold(0.0, f64::max)
    }

    /// `ρ̃_N` as a density profile.
    pub fn to_profile(&self) -> Result<DensityProfile> {
        let me = Arc::new(self.clone());
        let (f, df) = (me.clone(), me.clone());
        let n = self.x.len();
        DensityProfile::analytic(
            Arc::new(move |y| f.rho(y)),
            Some(Arc::new(move |y| df.nu_prime(y) / df.m_n)),
            self.x[0],
            self.x[n - 1],
            &self.x[1..n - 1],
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::{power_law_model, FlowParams};
    use crate::particles::DomainSpec;

    #[test]
    fn uniform_gaps_give_constant_density() {
        let m = power_law_model(FlowParams::new(2.0, 2.0).unwrap()).unwrap();
        let n = 9;
        let d = 0.25;
        let x: Vec<f64> = (0..n).map(|i| -1.0 + d * i as f64).collect();
        let cfg = ParticleConfig::new(x, DomainSpec::Interval { l: 1.0, pinned: true }).unwrap();
        let it = Interpolant::new(&cfg, &m).unwrap();
        assert!((it.m_n() - (n as f64 - 1.0) / n as f64).abs() < 1e-12);
        let want = 1.0 / (it.m_n() * n as f64 * d);
        for y in [-1.0, -0.3, 0.6, 1.0] {
            assert!((it.rho(y) - want).abs() < 1e-12);
        }
        assert_eq!(it.rho(1.2), 0.0);
        assert!(it.fisher_p().unwrap() < 1e-20);
    }
}
