//! Subdifferential of the discrete energy and its minimal-norm selection.
//!
//! Particle `i` owns the energy term `h(N min(Δ_left, Δ_right))/N`. Where its
//! two gaps are tied the term has a kink, and a weight `λ_i ∈ [0, 1]` on the
//! right-hand branch selects an element of the subdifferential. The vector
//! `z = N ∇Ẽ_N` is affine in `λ`:
//!
//! `z_i = (λ_i - λ_{i+1} + 1) ψ_{i+1} - (λ_{i-1} - λ_i + 1) ψ_i`
//!
//! with `ψ_k = -N h'(N Δx_k)`, `λ_{-1} = 0` and `λ_N = 1` at the ends.

use std::sync::OnceLock;

use serde::Serialize;

use super::{discrete_energy, weighted_norm, ParticleConfig};
use crate::energy::EnergyModel;
use crate::error::{Error, Result};

pub const DEFAULT_TIE_TOL: f64 = 1e-9;

/// `ψ_k = N ψ(N Δx_k)` for every gap `k = 0..=N`; infinite gaps give 0.
pub fn psi_vector(cfg: &ParticleConfig, model: &EnergyModel) -> Result<Vec<f64>> {
    let n = cfg.n() as f64;
    cfg.gaps()
        .into_iter()
        .enumerate()
        .map(|(k, g)| {
            if g == f64::INFINITY {
                Ok(0.0)
            } else if !(g > 0.0) {
                Err(Error::Degenerate(format!("gap {k} is {g}")))
            } else {
                Ok(n * model.psi(n * g))
            }
        })
        .collect()
}

/// `ψ` with the boundary entries scaled by the rate at which the boundary
/// gap moves with its particle (2 for mirror walls, 1 otherwise).
pub fn psi_effective(cfg: &ParticleConfig, psi: &[f64]) -> Vec<f64> {
    let mut out = psi.to_vec();
    let rate = cfg.boundary_gap_rate();
    let n = cfg.n();
    out[0] *= rate;
    out[n] *= rate;
    out
}

/// Right gap compared with left gap, for one particle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum GapOrder {
    /// `Δx_{i+1} > Δx_i`: the left gap is the ball, `λ_i = 0`.
    Greater,
    /// Within tolerance: `λ_i` is free in `[0, 1]`.
    Tied,
    /// `Δx_{i+1} < Δx_i`: the right gap is the ball, `λ_i = 1`.
    Less,
}

impl GapOrder {
    pub fn fixed_lambda(self) -> Option<f64> {
        match self {
            GapOrder::Greater => Some(0.0),
            GapOrder::Tied => None,
            GapOrder::Less => Some(1.0),
        }
    }
    pub fn label(self) -> &'static str {
        match self {
            GapOrder::Greater => "greater",
            GapOrder::Tied => "tied",
            GapOrder::Less => "less",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LambdaStructure {
    pub classes: Vec<GapOrder>,
    /// Maximal runs of consecutive tied particles.
    pub clusters: Vec<Vec<usize>>,
}

impl LambdaStructure {
    pub fn free(&self) -> Vec<usize> {
        self.clusters.iter().flatten().copied().collect()
    }
    pub fn free_count(&self) -> usize {
        self.clusters.iter().map(Vec::len).sum()
    }
}

pub fn lambda_structure(cfg: &ParticleConfig, tie_tol: f64) -> LambdaStructure {
    lambda_structure_with(cfg, tie_tol, &[])
}

/// As [`lambda_structure`], additionally treating the particles in
/// `forced_ties` as tied whenever both their gaps are finite.
pub fn lambda_structure_with(cfg: &ParticleConfig, tie_tol: f64, forced_ties: &[usize]) -> LambdaStructure {
    let g = cfg.gaps();
    let n = cfg.n();
    let pinned = cfg.domain().is_pinned();
    let mut classes = Vec::with_capacity(n);
    for i in 0..n {
        let (left, right) = (g[i], g[i + 1]);
        let class = if pinned && i == 0 {
            GapOrder::Less
        } else if pinned && i == n - 1 {
            GapOrder::Greater
        } else if left == f64::INFINITY || right == f64::INFINITY {
            if right >= left {
                GapOrder::Greater
            } else {
                GapOrder::Less
            }
        } else if (right - left).abs() <= tie_tol * left.max(right) || forced_ties.contains(&i) {
            GapOrder::Tied
        } else if right > left {
            GapOrder::Greater
        } else {
            GapOrder::Less
        };
        classes.push(class);
    }
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    for (i, c) in classes.iter().enumerate() {
        if *c != GapOrder::Tied {
            continue;
        }
        match clusters.last_mut() {
            Some(run) if *run.last().unwrap() + 1 == i => run.push(i),
            _ => clusters.push(vec![i]),
        }
    }
    LambdaStructure { classes, clusters }
}

/// Which neighbour gap multiplies which λ-coefficient when assembling `z`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum IndexPlacement {
    /// `z_i = (λ_i - λ_i^+ + 1) ψ_{i+1} - (λ_i^- - λ_i + 1) ψ_i`.
    Direct,
    /// Same coefficients with `ψ_i` and `ψ_{i+1}` exchanged.
    Swapped,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct PlacementResolution {
    pub placement: IndexPlacement,
    /// Max relative deviation from the finite-difference gradient on the probe.
    pub direct_error: f64,
    pub swapped_error: f64,
}

/// Resolve the index placement once per process by comparing both candidate
/// assemblies with `N · ∂Ẽ_N/∂x_i` from central differences at a tie-free
/// probe configuration.
pub fn index_placement() -> &'static PlacementResolution {
    static CELL: OnceLock<PlacementResolution> = OnceLock::new();
    CELL.get_or_init(|| {
        let params = crate::energy::FlowParams::new(2.0, 2.0).expect("valid probe params");
        let model = crate::energy::power_law_model(params).expect("valid probe model");
        let cfg = ParticleConfig::new(vec![0.0, 0.7, 1.9, 2.4, 4.0], super::DomainSpec::WholeLine)
            .expect("valid probe configuration");
        let fd = finite_difference_gradient(&cfg, &model, 1e-6).expect("probe energy finite");
        let err = |placement| {
            let z = assemble_fixed(&cfg, &model, placement).expect("probe has no ties");
            z.iter()
                .zip(&fd)
                .map(|(a, b)| (a - b).abs() / b.abs().max(1e-12))
                .fold(0.0, f64::max)
        };
        let direct_error = err(IndexPlacement::Direct);
        let swapped_error = err(IndexPlacement::Swapped);
        let placement = if direct_error <= 1e-6 {
            IndexPlacement::Direct
        } else if swapped_error <= 1e-6 {
            IndexPlacement::Swapped
        } else {
            panic!("neither index placement matches the finite-difference gradient ({direct_error:e}, {swapped_error:e})");
        };
        PlacementResolution {
            placement,
            direct_error,
            swapped_error,
        }
    })
}

/// `N · ∂Ẽ_N/∂x_i` by central differences with step `eps`.
pub fn finite_difference_gradient(cfg: &ParticleConfig, model: &EnergyModel, eps: f64) -> Result<Vec<f64>> {
    let n = cfg.n();
    let mut out = Vec::with_capacity(n);
    let pinned = cfg.domain().is_pinned();
    for i in 0..n {
        if pinned && (i == 0 || i == n - 1) {
            out.push(0.0);
            continue;
        }
        let mut plus = cfg.positions().to_vec();
        let mut minus = plus.clone();
        plus[i] += eps;
        minus[i] -= eps;
        let ep = discrete_energy(&ParticleConfig::new(plus, cfg.domain())?, model)?;
        let em = discrete_energy(&ParticleConfig::new(minus, cfg.domain())?, model)?;
        out.push(n as f64 * (ep - em) / (2.0 * eps));
    }
    Ok(out)
}

/// Row coefficients of the affine map `λ ↦ z`:
/// `z_i = alpha_i + lo_i λ_{i-1} + mid_i λ_i + hi_i λ_{i+1}`.
#[derive(Debug, Clone)]
struct AffineRows {
    alpha: Vec<f64>,
    lo: Vec<f64>,
    mid: Vec<f64>,
    hi: Vec<f64>,
    /// Rows of pinned particles are held at zero.
    active: Vec<bool>,
}

impl AffineRows {
    fn new(cfg: &ParticleConfig, psi_eff: &[f64], placement: IndexPlacement) -> Self {
        let n = cfg.n();
        let mut rows = AffineRows {
            alpha: vec![0.0; n],
            lo: vec![0.0; n],
            mid: vec![0.0; n],
            hi: vec![0.0; n],
            active: vec![true; n],
        };
        for i in 0..n {
            let (a, b) = match placement {
                IndexPlacement::Direct => (psi_eff[i + 1], psi_eff[i]),
                IndexPlacement::Swapped => (psi_eff[i], psi_eff[i + 1]),
            };
            // z_i = (λ_i - λ_{i+1} + 1) a - (λ_{i-1} - λ_i + 1) b
            rows.alpha[i] = a - b;
            rows.lo[i] = -b;
            rows.mid[i] = a + b;
            rows.hi[i] = -a;
        }
        if cfg.domain().is_pinned() {
            rows.active[0] = false;
            rows.active[n - 1] = false;
        }
        rows
    }

    fn n(&self) -> usize {
        self.alpha.len()
    }

    fn lambda_at(lam: &[f64], k: isize) -> f64 {
        if k < 0 {
            0.0
        } else if k as usize >= lam.len() {
            1.0
        } else {
            lam[k as usize]
        }
    }

    fn row(&self, lam: &[f64], i: usize) -> f64 {
        if !self.active[i] {
            return 0.0;
        }
        let k = i as isize;
        self.alpha[i]
            + self.lo[i] * Self::lambda_at(lam, k - 1)
            + self.mid[i] * lam[i]
            + self.hi[i] * Self::lambda_at(lam, k + 1)
    }

    fn z(&self, lam: &[f64]) -> Vec<f64> {
        (0..self.n()).map(|i| self.row(lam, i)).collect()
    }

    /// Coefficient of `λ_k` in row `i`.
    fn coef(&self, i: usize, k: usize) -> f64 {
        if !self.active[i] {
            0.0
        } else if k + 1 == i {
            self.lo[i]
        } else if k == i {
            self.mid[i]
        } else if k == i + 1 {
            self.hi[i]
        } else {
            0.0
        }
    }

    /// Rows touched by `λ_k`.
    fn rows_of(&self, k: usize) -> impl Iterator<Item = usize> + '_ {
        let n = self.n();
        (k.saturating_sub(1)..=(k + 1).min(n - 1)).filter(move |&i| self.active[i])
    }
}

fn initial_lambdas(structure: &LambdaStructure, default_free: f64) -> Vec<f64> {
    structure
        .classes
        .iter()
        .map(|c| c.fixed_lambda().unwrap_or(default_free))
        .collect()
}

fn assemble_fixed(cfg: &ParticleConfig, model: &EnergyModel, placement: IndexPlacement) -> Result<Vec<f64>> {
    let structure = lambda_structure(cfg, DEFAULT_TIE_TOL);
    if structure.free_count() > 0 {
        return Err(Error::InvalidInput("configuration has ties".into()));
    }
    let psi = psi_vector(cfg, model)?;
    let rows = AffineRows::new(cfg, &psi_effective(cfg, &psi), placement);
    Ok(rows.z(&initial_lambdas(&structure, 0.0)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SelectionStatus {
    /// No free λ: the subdifferential is a singleton.
    Unique,
    Converged,
    GridFallback,
    /// The solver stopped without meeting its tolerance.
    Unconverged,
}

/// An element of the weighted subdifferential with its λ provenance.
#[derive(Debug, Clone, Serialize)]
pub struct Subgradient {
    pub z: Vec<f64>,
    pub psi: Vec<f64>,
    /// `λ_i` for every particle, fixed or chosen.
    pub lambdas: Vec<f64>,
    pub classes: Vec<GapOrder>,
    pub clusters: Vec<Vec<usize>>,
    pub is_minimal_selection: bool,
    pub status: SelectionStatus,
    pub placement: IndexPlacement,
}

impl Subgradient {
    pub fn dual_norm(&self, q: f64) -> f64 {
        weighted_norm(&self.z, q)
    }
}

/// Assemble the subdifferential element for the given λ on the tied
/// particles. `lambdas` must name every tied particle exactly once.
pub fn subgradient_element(
    cfg: &ParticleConfig,
    model: &EnergyModel,
    lambdas: &[(usize, f64)],
) -> Result<Subgradient> {
    subgradient_element_with(cfg, model, lambdas, DEFAULT_TIE_TOL, &[])
}

pub fn subgradient_element_with(
    cfg: &ParticleConfig,
    model: &EnergyModel,
    lambdas: &[(usize, f64)],
    tie_tol: f64,
    forced_ties: &[usize],
) -> Result<Subgradient> {
    let structure = lambda_structure_with(cfg, tie_tol, forced_ties);
    let mut lam = initial_lambdas(&structure, f64::NAN);
    for &(i, v) in lambdas {
        if i >= lam.len() || structure.classes[i] != GapOrder::Tied {
            return Err(Error::NotTied(i));
        }
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::LambdaOutOfBounds { index: i, value: v });
        }
        lam[i] = v;
    }
    if let Some(i) = lam.iter().position(|v| v.is_nan()) {
        return Err(Error::MissingLambda(i));
    }
    let placement = index_placement().placement;
    let psi = psi_vector(cfg, model)?;
    let rows = AffineRows::new(cfg, &psi_effective(cfg, &psi), placement);
    Ok(Subgradient {
        z: rows.z(&lam),
        psi,
        lambdas: lam,
        classes: structure.classes,
        clusters: structure.clusters,
        is_minimal_selection: false,
        status: SelectionStatus::Unique,
        placement,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SelectionSolver {
    /// Projected Newton on the banded λ-Hessian, polished by coordinate sweeps.
    ProjectedNewton,
    /// Cyclic exact coordinate minimisation only.
    CoordinateDescent,
}

#[derive(Debug, Clone)]
pub struct SelectionOptions {
    pub tie_tol: f64,
    pub forced_ties: Vec<usize>,
    pub solver: SelectionSolver,
    /// Largest free-λ count per coupled group for the brute-force fallback.
    pub grid_fallback_max: usize,
}

impl Default for SelectionOptions {
    fn default() -> Self {
        Self {
            tie_tol: DEFAULT_TIE_TOL,
            forced_ties: Vec::new(),
            solver: SelectionSolver::ProjectedNewton,
            grid_fallback_max: 4,
        }
    }
}

/// Element of minimal `‖·‖_{w,q}` norm in the subdifferential.
pub fn minimal_selection(cfg: &ParticleConfig, model: &EnergyModel) -> Result<Subgradient> {
    minimal_selection_with(cfg, model, &SelectionOptions::default())
}

pub fn minimal_selection_with(
    cfg: &ParticleConfig,
    model: &EnergyModel,
    opts: &SelectionOptions,
) -> Result<Subgradient> {
    let structure = lambda_structure_with(cfg, opts.tie_tol, &opts.forced_ties);
    let placement = index_placement().placement;
    let psi = psi_vector(cfg, model)?;
    let rows = AffineRows::new(cfg, &psi_effective(cfg, &psi), placement);
    let q = model.params.q;
    let free = structure.free();
    let mut lam = initial_lambdas(&structure, 0.5);
    let status = if free.is_empty() {
        SelectionStatus::Unique
    } else {
        let mut problem = NormProblem::new(&rows, &free, q);
        let converged = match opts.solver {
            SelectionSolver::ProjectedNewton => {
                let ok = problem.projected_newton(&mut lam, 200);
                problem.coordinate_descent(&mut lam, 50) || ok
            }
            SelectionSolver::CoordinateDescent => problem.coordinate_descent(&mut lam, 200_000),
        };
        if converged {
            SelectionStatus::Converged
        } else if problem.grid_fallback(&mut lam, opts.grid_fallback_max) {
            SelectionStatus::GridFallback
        } else {
            SelectionStatus::Unconverged
        }
    };
    Ok(Subgradient {
        z: rows.z(&lam),
        psi,
        lambdas: lam,
        classes: structure.classes,
        clusters: structure.clusters,
        is_minimal_selection: true,
        status,
        placement,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SlopeConvention {
    /// `‖z*‖_{w,q}`: the dual norm, for which `g^q = |μ'|^p` along the flow.
    DualQ,
    /// `‖z*‖_{w,p}`, the literal primal-norm formula.
    PrimalP,
}

/// Discrete local slope `g_N` from the minimal selection.
pub fn discrete_slope(cfg: &ParticleConfig, model: &EnergyModel, convention: SlopeConvention) -> Result<f64> {
    let z = minimal_selection(cfg, model)?;
    Ok(slope_of(&z.z, model, convention))
}

/// `min_i (|z_i| - |ψ_i - ψ_{i+1}|)` over the particles that can move; a
/// minimal selection makes this non-negative.
pub fn psi_jump_margin(cfg: &ParticleConfig, model: &EnergyModel, z: &[f64]) -> Result<f64> {
    let psi = psi_effective(cfg, &psi_vector(cfg, model)?);
    let n = cfg.n();
    let pinned = cfg.domain().is_pinned();
    Ok((0..n)
        .filter(|&i| !(pinned && (i == 0 || i == n - 1)))
        .map(|i| z[i].abs() - (psi[i] - psi[i + 1]).abs())
        .fold(f64::INFINITY, f64::min))
}

pub fn slope_of(z: &[f64], model: &EnergyModel, convention: SlopeConvention) -> f64 {
    match convention {
        SlopeConvention::DualQ => weighted_norm(z, model.params.q),
        SlopeConvention::PrimalP => weighted_norm(z, model.params.p),
    }
}

/// `Σ_i |z_i|^q` over the free λ, with the banded structure exposed for
/// Newton steps.
struct NormProblem<'a> {
    rows: &'a AffineRows,
    free: &'a [usize],
    q: f64,
    zfloor: f64,
}

fn powq(z: f64, q: f64) -> f64 {
    if q == 2.0 {
        z * z
    } else {
        z.abs().powf(q)
    }
}

/// `d/dz |z|^q = q |z|^{q-2} z`.
fn dpowq(z: f64, q: f64) -> f64 {
    if q == 2.0 {
        2.0 * z
    } else if z == 0.0 {
        0.0
    } else {
        q * z.abs().powf(q - 1.0) * z.signum()
    }
}

impl<'a> NormProblem<'a> {
    fn new(rows: &'a AffineRows, free: &'a [usize], q: f64) -> Self {
        let scale = rows
            .mid
            .iter()
            .chain(rows.alpha.iter())
            .fold(0.0f64, |m, v| m.max(v.abs()));
        Self {
            rows,
            free,
            q,
            zfloor: 1e-10 * scale.max(1e-300),
        }
    }

    fn objective(&self, lam: &[f64]) -> f64 {
        (0..self.rows.n()).map(|i| powq(self.rows.row(lam, i), self.q)).sum()
    }

    fn gradient(&self, lam: &[f64]) -> Vec<f64> {
        self.free
            .iter()
            .map(|&k| {
                self.rows
                    .rows_of(k)
                    .map(|i| dpowq(self.rows.row(lam, i), self.q) * self.rows.coef(i, k))
                    .sum()
            })
            .collect()
    }

    fn projected_gradient_norm(&self, lam: &[f64], grad: &[f64]) -> f64 {
        self.free
            .iter()
            .zip(grad)
            .map(|(&k, g)| (lam[k] - (lam[k] - g).clamp(0.0, 1.0)).abs())
            .fold(0.0, f64::max)
    }

    /// Bertsekas' projected Newton method. Returns whether it converged.
    fn projected_newton(&mut self, lam: &mut [f64], max_iter: usize) -> bool {
        let m = self.free.len();
        let q = self.q;
        let mut f = self.objective(lam);
        let g0 = self.gradient(lam);
        let pg_tol = 1e-14 * (1.0 + g0.iter().fold(0.0f64, |a, v| a.max(v.abs())));
        let mut stalls = 0;
        for _ in 0..max_iter {
            let grad = self.gradient(lam);
            let pg = self.projected_gradient_norm(lam, &grad);
            if pg <= pg_tol {
                return true;
            }
            let eps = pg.min(1e-6);
            let binding: Vec<bool> = self
                .free
                .iter()
                .zip(&grad)
                .map(|(&k, &g)| (lam[k] <= eps && g > 0.0) || (lam[k] >= 1.0 - eps && g < 0.0))
                .collect();

            // Banded Hessian (bandwidth 2 in free-list order).
            let mut band = vec![[0.0f64; 3]; m]; // [a][0]=H(a,a-2), [1]=H(a,a-1), [2]=H(a,a)
            let pos = |k: usize| self.free.binary_search(&k).ok();
            for i in 0..self.rows.n() {
                if !self.rows.active[i] {
                    continue;
                }
                let z = self.rows.row(lam, i);
                let w = if q == 2.0 {
                    2.0
                } else {
                    q * (q - 1.0) * z.abs().max(self.zfloor).powf(q - 2.0)
                };
                let lo = i.saturating_sub(1);
                let hi = (i + 1).min(self.rows.n() - 1);
                let touched: Vec<(usize, f64)> = (lo..=hi)
                    .filter_map(|k| pos(k).map(|a| (a, self.rows.coef(i, k))))
                    .collect();
                for &(a, ca) in &touched {
                    for &(b, cb) in &touched {
                        if b <= a && a - b <= 2 {
                            band[a][2 - (a - b)] += w * ca * cb;
                        }
                    }
                }
            }
            for a in 0..m {
                if binding[a] {
                    band[a][0] = 0.0;
                    band[a][1] = 0.0;
                    if a + 1 < m {
                        band[a + 1][1] = 0.0;
                    }
                    if a + 2 < m {
                        band[a + 2][0] = 0.0;
                    }
                }
            }
            let max_diag = band.iter().fold(0.0f64, |acc, r| acc.max(r[2]));
            let rhs: Vec<f64> = grad.iter().map(|g| -g).collect();
            let mut mu = 1e-12 * max_diag.max(1e-300);
            let dir = loop {
                let mut reg = band.clone();
                for r in reg.iter_mut() {
                    r[2] += mu;
                }
                if let Some(d) = band_cholesky_solve(&reg, &rhs) {
                    break d;
                }
                mu *= 100.0;
                if mu > 1e300 {
                    return false;
                }
            };

            // Armijo search along the projection arc.
            let mut alpha = 1.0;
            let mut accepted = None;
            for _ in 0..60 {
                let mut trial = lam.to_vec();
                let mut decrease = 0.0;
                for (a, &k) in self.free.iter().enumerate() {
                    trial[k] = (lam[k] + alpha * dir[a]).clamp(0.0, 1.0);
                    decrease += grad[a] * (trial[k] - lam[k]);
                }
                let ft = self.objective(&trial);
                if ft <= f + 1e-4 * decrease {
                    accepted = Some((trial, ft));
                    break;
                }
                alpha *= 0.5;
            }
            match accepted {
                Some((trial, ft)) => {
                    let rel = (f - ft) / f.max(1e-300);
                    lam.copy_from_slice(&trial);
                    f = ft;
                    if rel <= 1e-15 {
                        stalls += 1;
                        if stalls >= 3 {
                            return true;
                        }
                    } else {
                        stalls = 0;
                    }
                }
                None => {
                    // No decrease possible in floating point along this arc.
                    let grad = self.gradient(lam);
                    return self.projected_gradient_norm(lam, &grad) <= 1e-9 * (1.0 + pg_tol / 1e-14);
                }
            }
        }
        false
    }

    /// Exact minimisation over one coordinate.
    fn minimise_coordinate(&self, lam: &mut [f64], k: usize) {
        let q = self.q;
        let old = lam[k];
        let touched: Vec<(f64, f64)> = self
            .rows
            .rows_of(k)
            .map(|i| {
                let c = self.rows.coef(i, k);
                (self.rows.row(lam, i) - c * old, c)
            })
            .collect();
        if touched.is_empty() {
            return;
        }
        let deriv = |t: f64| touched.iter().map(|&(r, c)| c * dpowq(r + c * t, q)).sum::<f64>();
        let t = if q == 2.0 {
            let num: f64 = touched.iter().map(|&(r, c)| c * r).sum();
            let den: f64 = touched.iter().map(|&(_, c)| c * c).sum();
            if den > 0.0 {
                (-num / den).clamp(0.0, 1.0)
            } else {
                old
            }
        } else if deriv(0.0) >= 0.0 {
            0.0
        } else if deriv(1.0) <= 0.0 {
            1.0
        } else {
            let (mut lo, mut hi) = (0.0f64, 1.0f64);
            for _ in 0..100 {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                if deriv(mid) > 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            0.5 * (lo + hi)
        };
        lam[k] = t;
    }

    /// Cyclic coordinate descent. Returns whether it converged.
    fn coordinate_descent(&mut self, lam: &mut [f64], max_sweeps: usize) -> bool {
        let mut f = self.objective(lam);
        for _ in 0..max_sweeps {
            let before: Vec<f64> = self.free.iter().map(|&k| lam[k]).collect();
            for &k in self.free {
                self.minimise_coordinate(lam, k);
            }
            let moved = self
                .free
                .iter()
                .zip(&before)
                .map(|(&k, b)| (lam[k] - b).abs())
                .fold(0.0, f64::max);
            let fn_ = self.objective(lam);
            let rel = (f - fn_).abs() / f.max(1e-300);
            f = fn_;
            if moved <= 1e-13 || (rel <= 1e-16 && moved <= 1e-9) {
                return true;
            }
        }
        false
    }

    /// Brute force over a λ grid of step 0.01, refined around the incumbent,
    /// for coupled groups of at most `max_free` free coordinates.
    fn grid_fallback(&mut self, lam: &mut [f64], max_free: usize) -> bool {
        let groups = coupled_groups(self.free);
        if groups.iter().any(|g| g.len() > max_free) {
            return false;
        }
        for group in groups {
            let mut step = 0.01;
            let mut lo: Vec<f64> = vec![0.0; group.len()];
            let mut counts: Vec<usize> = vec![101; group.len()];
            while step > 1e-9 {
                let total: usize = counts.iter().product();
                let mut best = (f64::INFINITY, Vec::new());
                for idx in 0..total {
                    let mut rem = idx;
                    let mut pt = Vec::with_capacity(group.len());
                    for (d, &c) in counts.iter().enumerate() {
                        pt.push((lo[d] + step * (rem % c) as f64).clamp(0.0, 1.0));
                        rem /= c;
                    }
                    for (d, &k) in group.iter().enumerate() {
                        lam[k] = pt[d];
                    }
                    let f = self.objective(lam);
                    if f < best.0 {
                        best = (f, pt);
                    }
                }
                for (d, &k) in group.iter().enumerate() {
                    lam[k] = best.1[d];
                    lo[d] = (best.1[d] - step).max(0.0);
                }
                counts = vec![21; group.len()];
                step /= 10.0;
            }
        }
        true
    }
}

/// Split free coordinates into groups whose rows do not overlap
/// (indices further than 2 apart never share a row).
pub(crate) fn coupled_groups(free: &[usize]) -> Vec<Vec<usize>> {
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for &k in free {
        match groups.last_mut() {
            Some(g) if k - *g.last().unwrap() <= 2 => g.push(k),
            _ => groups.push(vec![k]),
        }
    }
    groups
}

/// Cholesky solve for a symmetric positive-definite matrix with bandwidth 2,
/// stored row-wise as `[H(a,a-2), H(a,a-1), H(a,a)]`.
fn band_cholesky_solve(band: &[[f64; 3]], rhs: &[f64]) -> Option<Vec<f64>> {
    let m = band.len();
    let mut l = vec![[0.0f64; 3]; m];
    let get = |l: &[[f64; 3]], a: usize, b: usize| -> f64 {
        if b > a || a - b > 2 {
            0.0
        } else {
            l[a][2 - (a - b)]
        }
    };
    for a in 0..m {
        for b in a.saturating_sub(2)..=a {
            let mut s = band[a][2 - (a - b)];
            for c in a.saturating_sub(2)..b {
                s -= get(&l, a, c) * get(&l, b, c);
            }
            if a == b {
                if !(s > 0.0) || !s.is_finite() {
                    return None;
                }
                l[a][2] = s.sqrt();
            } else {
                l[a][2 - (a - b)] = s / l[b][2];
            }
        }
    }
    let mut y = vec![0.0; m];
    for a in 0..m {
        let mut s = rhs[a];
        for c in a.saturating_sub(2)..a {
            s -= get(&l, a, c) * y[c];
        }
        y[a] = s / l[a][2];
    }
    let mut x = vec![0.0; m];
    for a in (0..m).rev() {
        let mut s = y[a];
        for c in (a + 1)..(a + 3).min(m) {
            s -= get(&l, c, a) * x[c];
        }
        x[a] = s / l[a][2];
    }
    Some(x)
}
