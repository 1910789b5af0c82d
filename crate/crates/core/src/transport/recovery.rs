use serde::Serialize;

use super::DensityProfile;
use crate::error::{Error, Result};
use crate::particles::{DomainSpec, ParticleConfig};

/// Evidence that a density lies in the smooth set: support `[-r, r]` and a
/// positive lower bound on it.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SmoothSetCertificate {
    pub r: f64,
    pub min_density: f64,
    /// A continuous derivative is available (closed-form profiles).
    pub c1_flag: bool,
}

pub fn certify_smooth_set(rho: &DensityProfile) -> Result<SmoothSetCertificate> {
    let (a, b) = rho.support();
    if (a + b).abs() > 1e-12 * b.abs().max(a.abs()) {
        return Err(Error::NotSmoothSet(format!("support [{a}, {b}] is not symmetric")));
    }
    let breaks = rho.breakpoints();
    let mut min_density = f64::INFINITY;
    for w in breaks.windows(2) {
        for t in [0.0, 0.25, 0.5, 0.75, 1.0] {
            let x = w[0] + t * (w[1] - w[0]);
            min_density = min_density.min(rho.density(x));
        }
    }
    if !(min_density > 1e-12) {
        return Err(Error::NotSmoothSet(format!("density drops to {min_density:e} on its support")));
    }
    let c1_flag = rho.has_closed_form_derivative();
    Ok(SmoothSetCertificate {
        r: b,
        min_density,
        c1_flag,
    })
}

#[derive(Debug, Clone)]
pub struct RecoverySequence {
    pub config: ParticleConfig,
    /// `a₁ = N · min Δx_i`, `a₂ = N · max Δx_i` over interior gaps.
    pub a1: f64,
    pub a2: f64,
}

/// Well-prepared particles for `rho`: midpoint quantiles `Q((2i-1)/(2N))`
/// with the extreme particles moved onto `∓r`. The result lives on the
/// pinned interval `[-r, r]`.
pub fn recovery_sequence(rho: &DensityProfile, cert: &SmoothSetCertificate, n: usize) -> Result<RecoverySequence> {
    if n < 3 {
        return Err(Error::InvalidInput(format!("recovery sequences need N ≥ 3, got {n}")));
    }
    let nf = n as f64;
    let mut x: Vec<f64> = (1..=n).map(|i| rho.quantile((2 * i - 1) as f64 / (2.0 * nf))).collect();
    x[0] = -cert.r;
    x[n - 1] = cert.r;
    let config = ParticleConfig::new(x, DomainSpec::Interval { l: cert.r, pinned: true })?;
    Ok(RecoverySequence {
        a1: nf * config.min_gap(),
        a2: nf * config.max_gap(),
        config,
    })
}

/// `ρ_N = (1/N) Σ χ_{B_i} / |B_i|` with `B_i` centred at `x_i`, diameter `|B_i|`.
pub fn block_density(cfg: &ParticleConfig) -> Result<DensityProfile> {
    let n = cfg.n() as f64;
    let balls = cfg.ball_sizes();
    if let Some(r) = balls.iter().find(|r| !(**r > 0.0)) {
        return Err(Error::Degenerate(format!("ball of size {r}")));
    }
    let mut edges = Vec::with_capacity(2 * cfg.n());
    let mut heights = Vec::with_capacity(2 * cfg.n());
    for (&x, &b) in cfg.positions().iter().zip(&balls) {
        let (lo, hi) = (x - 0.5 * b, x + 0.5 * b);
        if let Some(&last) = edges.last() {
            if lo > last {
                heights.push(0.0);
                edges.push(lo);
            }
        } else {
            edges.push(lo);
        }
        heights.push(1.0 / (n * b));
        edges.push(hi);
    }
    DensityProfile::cells(edges, heights)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_recovery_example() {
        let rho = DensityProfile::uniform(-1.0, 1.0).unwrap();
        let cert = certify_smooth_set(&rho).unwrap();
        let rs = recovery_sequence(&rho, &cert, 4).unwrap();
        let want = [-1.0, -0.25, 0.25, 1.0];
        for (a, b) in rs.config.positions().iter().zip(want) {
            assert!((a - b).abs() < 1e-14);
        }
        assert!((rs.a1 - 2.0).abs() < 1e-12);
        assert!((rs.a2 - 3.0).abs() < 1e-12);
    }

    #[test]
    fn vanishing_density_is_not_certified() {
        let rho = DensityProfile::linear(vec![-1.0, 0.0, 1.0], vec![0.0, 1.0, 0.0]).unwrap();
        assert!(matches!(certify_smooth_set(&rho), Err(Error::NotSmoothSet(_))));
        let shifted = DensityProfile::uniform(0.0, 1.0).unwrap();
        assert!(certify_smooth_set(&shifted).is_err());
    }

    #[test]
    fn block_density_examples() {
        let cfg = ParticleConfig::new(vec![0.0, 1.0, 3.0], DomainSpec::WholeLine).unwrap();
        let b = block_density(&cfg).unwrap();
        // Balls: [-0.5, 0.5], [0.5, 1.5], [2, 4].
        assert!((b.density(1.0) - 1.0 / 3.0).abs() < 1e-15);
        assert!((b.density(3.0) - 1.0 / 6.0).abs() < 1e-15);
        assert_eq!(b.density(1.75), 0.0);
        assert!((b.cdf(4.0) - 1.0).abs() < 1e-15);
        assert!((b.cdf(1.5) - 2.0 / 3.0).abs() < 1e-15);
    }
}
