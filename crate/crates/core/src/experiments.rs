//! Convergence studies over particle counts: Γ-limsup/liminf, the three
//! limiting conditions against the finite-volume reference, mesh ratio,
//! particle-to-PDE distance and the energy-dissipation residual.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::energy::{EnergyModel, FlowParams};
use crate::error::{Error, Result};
use crate::flow::{run, IntegratorSpec, StepControl, Trajectory};
use crate::io::Table;
use crate::par::Execution;
use crate::particles::discrete_energy;
use crate::pde::{fv_solve, FvSolution};
use crate::transport::{
    certify_smooth_set, continuum_energy, fisher_information, interpolate_cells, recovery_sequence, wasserstein_p,
    Interpolant, Measure, RecoverySequence,
};
use crate::transport::DensityProfile;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyKind {
    GammaLimsup,
    C2Energy,
    C3Slope,
    MeshRatio,
    PdeConvergence,
    EdiResidual,
}

impl StudyKind {
    pub const ALL: [StudyKind; 6] = [
        StudyKind::GammaLimsup,
        StudyKind::C2Energy,
        StudyKind::C3Slope,
        StudyKind::MeshRatio,
        StudyKind::PdeConvergence,
        StudyKind::EdiResidual,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StudyKind::GammaLimsup => "gamma_limsup",
            StudyKind::C2Energy => "c2_energy",
            StudyKind::C3Slope => "c3_slope",
            StudyKind::MeshRatio => "mesh_ratio",
            StudyKind::PdeConvergence => "pde_convergence",
            StudyKind::EdiResidual => "edi_residual",
        }
    }
}

impl fmt::Display for StudyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StudyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| {
            let names: Vec<&str> = Self::ALL.iter().map(|k| k.name()).collect();
            Error::InvalidInput(format!("unknown study {s:?}; valid studies: {}", names.join(", ")))
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct StudySpec {
    pub study: StudyKind,
    pub n_list: Vec<usize>,
    pub params: FlowParams,
    pub t_end: f64,
    /// Times at which particle and reference states are compared.
    pub t_samples: Vec<f64>,
    /// Template for every particle run; `t_end` and checkpoints are overridden.
    pub integrator: IntegratorSpec,
    pub pde_m: usize,
    pub pde_safety: f64,
    /// Relative noise allowed on monotone trends.
    pub trend_noise: f64,
    /// Absolute tolerance on limit inequalities.
    pub tol: f64,
    /// Number of step sizes in the dissipation study, each half the previous.
    pub edi_levels: usize,
    pub seed: u64,
}

impl StudySpec {
    pub fn new(study: StudyKind, n_list: Vec<usize>, params: FlowParams) -> Self {
        let mut integrator = IntegratorSpec::explicit(1e-3, 0.1);
        integrator.adapt = StepControl::Adaptive;
        integrator.record_every = usize::MAX;
        Self {
            study,
            n_list,
            params,
            t_end: 0.1,
            t_samples: vec![0.01, 0.05, 0.1],
            integrator,
            pde_m: 1024,
            pde_safety: 0.4,
            trend_noise: 0.1,
            tol: 0.02,
            edi_levels: 2,
            seed: 20240917,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_list.is_empty() {
            return Err(Error::InvalidParams("the N list is empty".into()));
        }
        if self.n_list.windows(2).any(|w| w[1] <= w[0]) || self.n_list[0] < 2 {
            return Err(Error::InvalidParams(format!(
                "N list {:?} must increase strictly and start at 2 or more",
                self.n_list
            )));
        }
        if !(self.t_end > 0.0) {
            return Err(Error::InvalidParams(format!("t_end = {} must be positive", self.t_end)));
        }
        if self.t_samples.windows(2).any(|w| w[1] <= w[0]) || self.t_samples.iter().any(|t| !(*t > 0.0 && *t <= self.t_end))
        {
            return Err(Error::InvalidParams("sample times must increase strictly inside (0, t_end]".into()));
        }
        if self.edi_levels < 2 {
            return Err(Error::InvalidParams("the dissipation study needs at least two step sizes".into()));
        }
        Ok(())
    }

    /// The integrator settings every particle run of this study uses.
    pub fn particle_spec(&self) -> IntegratorSpec {
        let mut s = self.integrator.clone();
        s.t_end = self.t_end;
        s.dt = s.dt.min(self.t_end);
        s.checkpoints = self.t_samples.iter().copied().filter(|t| *t < self.t_end).collect();
        s
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Assertion {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Assertion {
    pub fn new(name: &str, passed: bool, detail: String) -> Self {
        Self {
            name: name.into(),
            passed,
            detail,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct StudyReport {
    pub study: StudyKind,
    #[serde(skip)]
    pub tables: Vec<Table>,
    pub assertions: Vec<Assertion>,
    pub notes: Vec<String>,
}

impl StudyReport {
    pub fn passed(&self) -> bool {
        self.assertions.iter().all(|a| a.passed)
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }

    pub fn assertion(&self, name: &str) -> Option<&Assertion> {
        self.assertions.iter().find(|a| a.name == name)
    }
}

/// `ρ₀(x) = (1 + cos(πx)/2)/2` on `[-1, 1]`.
pub fn smooth_bump() -> DensityProfile {
    use std::f64::consts::PI;
    DensityProfile::analytic(
        Arc::new(|x: f64| 0.5 * (1.0 + 0.5 * (PI * x).cos())),
        Some(Arc::new(|x: f64| -0.25 * PI * (PI * x).sin())),
        -1.0,
        1.0,
        &[],
    )
    .expect("the bump is a valid density")
}

/// Recovery particles for `rho` and the flow started from them. Every study
/// gets its particle trajectories from here, so equal specs give identical
/// recordings.
pub fn well_prepared_trajectory(
    rho: &DensityProfile,
    model: &EnergyModel,
    n: usize,
    spec: &IntegratorSpec,
) -> Result<(RecoverySequence, Trajectory)> {
    let cert = certify_smooth_set(rho)?;
    let rs = recovery_sequence(rho, &cert, n)?;
    let traj = run(&rs.config, model, spec)?;
    Ok((rs, traj))
}

/// `b ≤ (1 + noise)·a` for each consecutive pair.
fn non_increasing_with_noise(v: &[f64], noise: f64) -> bool {
    v.windows(2).all(|w| w[1] <= (1.0 + noise) * w[0])
}

fn strictly_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] < w[0])
}

fn fmt_list(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.4e}")).collect();
    format!("[{}]", parts.join(", "))
}

pub fn run_study(spec: &StudySpec, rho: &DensityProfile, model: &EnergyModel, exec: Execution) -> Result<StudyReport> {
    spec.validate()?;
    match spec.study {
        StudyKind::GammaLimsup => gamma_limsup_study(rho, model, spec, exec),
        StudyKind::C2Energy | StudyKind::C3Slope => c_conditions_study(rho, model, spec, exec),
        StudyKind::MeshRatio => mesh_ratio_study(rho, model, spec, exec),
        StudyKind::PdeConvergence => pde_convergence_study(rho, model, spec, exec),
        StudyKind::EdiResidual => edi_residual_study(rho, model, spec),
    }
}

/// Energies of recovery sequences against `E(ρ)`, plus randomly perturbed
/// recovery particles for the lower bound.
pub fn gamma_limsup_study(rho: &DensityProfile, model: &EnergyModel, spec: &StudySpec, exec: Execution) -> Result<StudyReport> {
    let cert = certify_smooth_set(rho)?;
    let e_rho = continuum_energy(rho, model)?;
    let p = model.params.p;
    let rows = exec.map(&spec.n_list, |&n| -> Result<Vec<f64>> {
        let rs = recovery_sequence(rho, &cert, n)?;
        let e_n = discrete_energy(&rs.config, model)?;
        let w = wasserstein_p(Measure::Particles(&rs.config), Measure::Density(rho), p)?;
        // Each interior particle moves by at most a quarter of its smallest gap.
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ n as u64);
        let delta = 0.25 * rs.config.min_gap();
        let mut x = rs.config.positions().to_vec();
        for xi in &mut x[1..n - 1] {
            *xi += delta * rng.gen_range(-1.0..=1.0);
        }
        let pert = rs.config.with_positions(x)?;
        let e_pert = discrete_energy(&pert, model)?;
        let w_pert = wasserstein_p(Measure::Particles(&pert), Measure::Density(rho), p)?;
        Ok(vec![n as f64, e_n, e_rho, (e_n - e_rho).abs(), w, e_pert, w_pert])
    });
    let mut table = Table::new(
        "gamma_limsup",
        &["N", "E_N", "E_rho", "gap", "W_p", "E_N_perturbed", "W_p_perturbed"],
    );
    for r in rows {
        table.push(r?);
    }
    let gap = table.column("gap").unwrap_or_default();
    let e_n = table.column("E_N").unwrap_or_default();
    let e_pert = table.column("E_N_perturbed").unwrap_or_default();
    let w_pert = table.column("W_p_perturbed").unwrap_or_default();
    let last = e_n.len() - 1;
    let assertions = vec![
        Assertion::new(
            "gap_decreasing",
            non_increasing_with_noise(&gap, spec.trend_noise),
            format!("|E_N - E| = {}", fmt_list(&gap)),
        ),
        Assertion::new(
            "limsup_bound",
            e_n[last] <= e_rho + spec.tol,
            format!("E_N = {:.6e} at the largest N, E = {e_rho:.6e}", e_n[last]),
        ),
        Assertion::new(
            "liminf_bound",
            e_pert[last] >= e_rho - spec.tol,
            format!("perturbed E_N = {:.6e} at the largest N, E = {e_rho:.6e}", e_pert[last]),
        ),
        Assertion::new(
            "perturbed_distance_decreasing",
            non_increasing_with_noise(&w_pert, spec.trend_noise),
            format!("W_p = {}", fmt_list(&w_pert)),
        ),
    ];
    Ok(StudyReport {
        study: spec.study,
        tables: vec![table],
        assertions,
        notes: vec![],
    })
}

/// The finite-volume reference on the support of `rho` at `times` (sorted).
pub fn reference_solution(rho: &DensityProfile, model: &EnergyModel, spec: &StudySpec, times: &[f64]) -> Result<FvSolution> {
    let (a, b) = rho.support();
    let l = a.abs().max(b.abs());
    fv_solve(rho, model, l, spec.pde_m, times, spec.pde_safety)
}

/// Slope `g(u) = I_p(u)^{1/p}` of a finite-volume state.
pub fn reference_slope(sol: &FvSolution, k: usize, model: &EnergyModel) -> Result<f64> {
    let smooth = interpolate_cells(&sol.grids[k].profile()?)?;
    Ok(fisher_information(&smooth, model)?.slope)
}

/// Energies, slopes and actions of particle flows against the reference
/// solution at each sample time.
pub fn c_conditions_study(rho: &DensityProfile, model: &EnergyModel, spec: &StudySpec, exec: Execution) -> Result<StudyReport> {
    let p = model.params.p;
    let q = model.params.q;
    // A fine time grid for the reference action `∫ g^q`.
    let fine = 40;
    let mut times: Vec<f64> = (0..=fine).map(|k| spec.t_end * k as f64 / fine as f64).collect();
    times.extend(&spec.t_samples);
    times.sort_by(f64::total_cmp);
    times.dedup_by(|a, b| (*a - *b).abs() <= 1e-12);
    let sol = reference_solution(rho, model, spec, &times)?;
    let slopes: Vec<f64> = exec
        .map_range(times.len(), |k| reference_slope(&sol, k, model))
        .into_iter()
        .collect::<Result<_>>()?;
    let mut action_ref = vec![0.0];
    for k in 1..times.len() {
        let a = action_ref[k - 1] + 0.5 * (times[k] - times[k - 1]) * (slopes[k].powf(q) + slopes[k - 1].powf(q));
        action_ref.push(a);
    }
    let pspec = spec.particle_spec();
    let cells = exec.map(&spec.n_list, |&n| -> Result<Vec<Vec<f64>>> {
        let (_, traj) = well_prepared_trajectory(rho, model, n, &pspec)?;
        let mut rows = Vec::new();
        for &t in &spec.t_samples {
            let k = traj
                .index_of(t)
                .ok_or_else(|| Error::InvalidInput(format!("time {t} was not recorded")))?;
            let r = sol.times.iter().position(|s| (s - t).abs() <= 1e-12).expect("sample time in reference grid");
            let state = &traj.states[k];
            let it = Interpolant::new(state, model)?;
            let fisher_nu = it.fisher_p()?;
            let eps = it.epsilon();
            let g_primal = traj.slopes_primal[k];
            let chain_ok = fisher_nu <= (1.0 + eps) * g_primal.powf(p) + 1e-10 * (1.0 + g_primal.powf(p));
            let profile = sol.grids[r].profile()?;
            let w = wasserstein_p(Measure::Particles(state), Measure::Density(&profile), p)?;
            rows.push(vec![
                n as f64,
                t,
                traj.energies[k],
                sol.energies[r],
                (traj.energies[k] - sol.energies[r]).abs(),
                traj.slopes_dual[k],
                g_primal,
                fisher_nu.powf(1.0 / p),
                slopes[r],
                eps,
                if chain_ok { 1.0 } else { 0.0 },
                state.mesh_ratio(),
                w,
                traj.action[k],
                action_ref[r],
            ]);
        }
        Ok(rows)
    });
    let mut table = Table::new(
        "c_conditions",
        &[
            "N",
            "t",
            "E_N",
            "E_ref",
            "energy_gap",
            "g_N_dual_q",
            "g_N_primal_p",
            "g_interpolant",
            "g_ref",
            "epsilon",
            "chain_ok",
            "mesh_ratio",
            "W_p_to_ref",
            "action_N",
            "action_ref",
        ],
    );
    for c in cells {
        for r in c? {
            table.push(r);
        }
    }
    let mut assertions = Vec::new();
    let col = |name: &str| table.column(name).unwrap_or_default();
    let (ns, ts) = (col("N"), col("t"));
    let pick = |name: &str, t: f64| -> Vec<f64> {
        let v = col(name);
        (0..v.len()).filter(|&i| ts[i] == t).map(|i| v[i]).collect()
    };
    let largest = *spec.n_list.last().unwrap_or(&0) as f64;
    for &t in &spec.t_samples {
        let gap = pick("energy_gap", t);
        assertions.push(Assertion::new(
            &format!("c2_energy_gap_decreasing_t{t}"),
            non_increasing_with_noise(&gap, spec.trend_noise),
            format!("|E_N - E_ref| = {}", fmt_list(&gap)),
        ));
        let mesh = pick("mesh_ratio", t);
        assertions.push(Assertion::new(
            &format!("mesh_ratio_decreasing_t{t}"),
            non_increasing_with_noise(&mesh, spec.trend_noise),
            format!("mesh ratio = {}", fmt_list(&mesh)),
        ));
    }
    let chain: Vec<f64> = col("chain_ok");
    assertions.push(Assertion::new(
        "c3_chain",
        chain.iter().all(|c| *c == 1.0),
        format!("{} of {} rows satisfy g(nu)^p <= (1 + eps) g_N^p", chain.iter().filter(|c| **c == 1.0).count(), chain.len()),
    ));
    let (g_dual, g_ref, act, act_ref) = (col("g_N_dual_q"), col("g_ref"), col("action_N"), col("action_ref"));
    let top: Vec<usize> = (0..ns.len()).filter(|&i| ns[i] == largest).collect();
    assertions.push(Assertion::new(
        "c3_slope_lower_bound",
        top.iter().all(|&i| g_dual[i] >= (1.0 - spec.trend_noise) * g_ref[i]),
        format!(
            "at N = {largest}: g_N = {}, g_ref = {}",
            fmt_list(&top.iter().map(|&i| g_dual[i]).collect::<Vec<_>>()),
            fmt_list(&top.iter().map(|&i| g_ref[i]).collect::<Vec<_>>())
        ),
    ));
    assertions.push(Assertion::new(
        "c1_action_lower_bound",
        top.iter().all(|&i| act[i] >= (1.0 - spec.trend_noise) * act_ref[i]),
        format!(
            "at N = {largest}: action_N = {}, action_ref = {}",
            fmt_list(&top.iter().map(|&i| act[i]).collect::<Vec<_>>()),
            fmt_list(&top.iter().map(|&i| act_ref[i]).collect::<Vec<_>>())
        ),
    ));
    Ok(StudyReport {
        study: spec.study,
        tables: vec![table],
        assertions,
        notes: vec![format!(
            "reference: finite volumes with M = {} cells, {} steps",
            spec.pde_m, sol.steps
        )],
    })
}

/// Mesh ratio at `t_end` and the scaled gap bounds `a₁/N ≤ Δx_i ≤ a₂/N`
/// (slack 2) along each trajectory.
pub fn mesh_ratio_study(rho: &DensityProfile, model: &EnergyModel, spec: &StudySpec, exec: Execution) -> Result<StudyReport> {
    let mut pspec = spec.particle_spec();
    pspec.record_every = pspec.record_every.min(10);
    let rows = exec.map(&spec.n_list, |&n| -> Result<Vec<f64>> {
        let (rs, traj) = well_prepared_trajectory(rho, model, n, &pspec)?;
        let nf = n as f64;
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for s in &traj.states {
            lo = lo.min(nf * s.min_gap());
            hi = hi.max(nf * s.max_gap());
        }
        let ok = lo >= 0.5 * rs.a1 && hi <= 2.0 * rs.a2;
        Ok(vec![nf, traj.final_state().mesh_ratio(), rs.a1, rs.a2, lo, hi, if ok { 1.0 } else { 0.0 }])
    });
    let mut table = Table::new(
        "mesh_ratio",
        &["N", "mesh_ratio", "a1", "a2", "min_scaled_gap", "max_scaled_gap", "gap_bounds_ok"],
    );
    for r in rows {
        table.push(r?);
    }
    let mesh = table.column("mesh_ratio").unwrap_or_default();
    let ok = table.column("gap_bounds_ok").unwrap_or_default();
    Ok(StudyReport {
        study: spec.study,
        assertions: vec![
            Assertion::new(
                "mesh_ratio_decreasing",
                strictly_decreasing(&mesh),
                format!("mesh ratio at t = {}: {}", spec.t_end, fmt_list(&mesh)),
            ),
            Assertion::new(
                "gap_bounds",
                ok.iter().all(|v| *v == 1.0),
                "a1/(2N) <= dx_i <= 2 a2/N at every recorded time".into(),
            ),
        ],
        tables: vec![table],
        notes: vec![],
    })
}

/// `W_p(μ_N(T), u(T))` against the reference solution.
pub fn pde_convergence_study(
    rho: &DensityProfile,
    model: &EnergyModel,
    spec: &StudySpec,
    exec: Execution,
) -> Result<StudyReport> {
    let p = model.params.p;
    let sol = reference_solution(rho, model, spec, &[spec.t_end])?;
    let reference = sol.grids[0].profile()?;
    let pspec = spec.particle_spec();
    let rows = exec.map(&spec.n_list, |&n| -> Result<Vec<f64>> {
        let (_, traj) = well_prepared_trajectory(rho, model, n, &pspec)?;
        let w = wasserstein_p(Measure::Particles(traj.final_state()), Measure::Density(&reference), p)?;
        Ok(vec![n as f64, w])
    });
    let mut table = Table::new("pde_convergence", &["N", "W_p"]);
    for r in rows {
        table.push(r?);
    }
    let w = table.column("W_p").unwrap_or_default();
    let ratio = w[w.len() - 1] / w[0];
    Ok(StudyReport {
        study: spec.study,
        assertions: vec![
            Assertion::new("distance_decreasing", strictly_decreasing(&w), format!("W_p = {}", fmt_list(&w))),
            Assertion::new(
                "end_to_start_ratio",
                ratio <= 0.5,
                format!("W_p(largest N)/W_p(smallest N) = {ratio:.4}"),
            ),
        ],
        tables: vec![table],
        notes: vec![format!("reference: M = {} cells, {} steps", spec.pde_m, sol.steps)],
    })
}

/// `R(t) = E_N(0) - E_N(t) - ∫_0^t (|x'|^p/p + g^q/q)` under both slope
/// conventions.
pub fn edi_residual_series(traj: &Trajectory) -> (Vec<f64>, Vec<f64>) {
    let e0 = traj.energies[0];
    let r = |d: &[f64]| traj.energies.iter().zip(d).map(|(e, d)| e0 - e - d).collect();
    (r(&traj.dissipation_dual), r(&traj.dissipation_primal))
}

/// Residual at `t_end` for fixed steps `dt, dt/2, …` with `N = n_list[0]`.
pub fn edi_residual_study(rho: &DensityProfile, model: &EnergyModel, spec: &StudySpec) -> Result<StudyReport> {
    let n = spec.n_list[0];
    let mut summary = Table::new(
        "edi_residual",
        &["dt", "R_dual_q", "R_primal_p", "max_abs_R_dual_q", "energy_monotone"],
    );
    let mut series = Table::new("edi_series", &["dt", "t", "R_dual_q", "R_primal_p"]);
    let mut dt = spec.integrator.dt;
    for _ in 0..spec.edi_levels {
        let mut s = spec.particle_spec();
        s.dt = dt;
        s.adapt = StepControl::Fixed;
        s.record_every = 10;
        let (_, traj) = well_prepared_trajectory(rho, model, n, &s)?;
        let e0 = traj.energies[0];
        let monotone = traj
            .energies
            .windows(2)
            .all(|w| w[1] <= w[0] + 1e-12 * (1.0 + e0.abs()));
        let (rd, rp) = edi_residual_series(&traj);
        for k in 0..traj.times.len() {
            series.push(vec![dt, traj.times[k], rd[k], rp[k]]);
        }
        let max_abs = rd.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        summary.push(vec![
            dt,
            *rd.last().unwrap_or(&0.0),
            *rp.last().unwrap_or(&0.0),
            max_abs,
            if monotone { 1.0 } else { 0.0 },
        ]);
        dt *= 0.5;
    }
    let rd = summary.column("R_dual_q").unwrap_or_default();
    let rp = summary.column("R_primal_p").unwrap_or_default();
    let ratios: Vec<f64> = rd.windows(2).map(|w| w[0].abs() / w[1].abs()).collect();
    let mut notes = Vec::new();
    if model.params.p != 2.0 {
        let primal_ratios: Vec<f64> = rp.windows(2).map(|w| w[0].abs() / w[1].abs()).collect();
        notes.push(format!(
            "with the (w,p) slope the residual at T is {} for the step sizes above (halving ratios {}); it does not vanish with dt",
            fmt_list(&rp),
            fmt_list(&primal_ratios)
        ));
    }
    Ok(StudyReport {
        study: spec.study,
        assertions: vec![
            Assertion::new(
                "energy_monotone",
                summary.column("energy_monotone").unwrap_or_default().iter().all(|v| *v == 1.0),
                "E_N non-increasing at every recorded time".into(),
            ),
            Assertion::new(
                "residual_halves",
                ratios.iter().all(|r| *r >= 1.8),
                format!("R(T) = {}, ratios {}", fmt_list(&rd), fmt_list(&ratios)),
            ),
        ],
        tables: vec![summary, series],
        notes,
    })
}
