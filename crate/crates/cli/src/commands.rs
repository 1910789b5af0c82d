use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use lpflow::energy::{log_grid, validate_hypotheses, ClauseStatus};
use lpflow::experiments::{run_study, Assertion};
use lpflow::flow::run as integrate;
use lpflow::io::{self, Table};
use lpflow::particles::{
    index_placement, minimal_selection_with, psi_jump_margin, ParticleConfig, SelectionOptions,
};
use lpflow::pde::{fv_solve, FvGrid};
use lpflow::transport::{certify_smooth_set, recovery_sequence, wasserstein_p, Measure};

use crate::config::{DensityConfig, DomainKind, RunConfig};
use crate::error::CliError;
use crate::output::{create, run_dir, write_json};

/// Where the artifacts went and whether every check passed.
pub struct Outcome {
    pub dir: PathBuf,
    pub passed: bool,
}

#[derive(Serialize)]
struct Summary<'a> {
    command: &'a str,
    passed: bool,
    assertions: &'a [Assertion],
    notes: &'a [String],
}

fn finish(dir: PathBuf, command: &str, assertions: Vec<Assertion>, notes: Vec<String>) -> Result<Outcome, CliError> {
    let passed = assertions.iter().all(|a| a.passed);
    write_json(
        &dir,
        "summary.json",
        &Summary {
            command,
            passed,
            assertions: &assertions,
            notes: &notes,
        },
    )?;
    for a in &assertions {
        println!("{} {}: {}", if a.passed { "PASS" } else { "FAIL" }, a.name, a.detail);
    }
    for n in &notes {
        println!("note: {n}");
    }
    Ok(Outcome { dir, passed })
}

fn save_config(dir: &Path, cfg: &RunConfig) -> Result<(), CliError> {
    let text = toml::to_string(cfg).map_err(|e| CliError::Config(format!("cannot serialise config: {e}")))?;
    std::fs::write(dir.join("config.toml"), text)?;
    Ok(())
}

fn write_table(dir: &Path, t: &Table) -> Result<(), CliError> {
    t.write_csv(create(dir, &format!("{}.csv", t.name))?)?;
    Ok(())
}

pub fn validate(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let model = cfg.model()?;
    let v = &cfg.validate;
    if !(v.grid_min > 0.0 && v.grid_max > v.grid_min && v.grid_points >= 2) {
        return Err(CliError::Config(format!(
            "validate grid [{}, {}] with {} points is not a positive increasing grid",
            v.grid_min, v.grid_max, v.grid_points
        )));
    }
    let grid = log_grid(v.grid_min, v.grid_max, v.grid_points);
    let report = validate_hypotheses(&model, &grid)?;
    let placement = index_placement();
    let dir = run_dir(&cfg.output.dir, "validate")?;
    save_config(&dir, cfg)?;

    #[derive(Serialize)]
    struct Full<'a> {
        report: &'a lpflow::energy::ValidationReport,
        placement: &'a lpflow::particles::PlacementResolution,
    }
    write_json(&dir, "report.json", &Full { report: &report, placement })?;

    let mut text = format!("model: {}\n", report.model);
    for c in &report.clauses {
        let status = match c.status {
            ClauseStatus::Pass => "pass",
            ClauseStatus::Fail => "FAIL",
            ClauseStatus::Unverified => "unverified",
        };
        let _ = writeln!(text, "{status:>10}  {:<24} worst {:.3e}  {}", c.clause, c.worst_violation, c.detail);
    }
    let _ = writeln!(
        text,
        "index placement: {:?} (direct error {:.2e}, swapped error {:.2e})",
        placement.placement, placement.direct_error, placement.swapped_error
    );
    std::fs::write(dir.join("report.txt"), &text)?;
    print!("{text}");
    let assertions = report
        .clauses
        .iter()
        .map(|c| Assertion::new(c.clause, c.status == ClauseStatus::Pass, c.detail.clone()))
        .collect();
    finish(dir, "validate", assertions, vec![])
}

/// Recovery particles for a configured density, or the configured particles.
fn initial_particles(cfg: &RunConfig, notes: &mut Vec<String>) -> Result<(ParticleConfig, bool), CliError> {
    if let Some(x) = &cfg.initial.particles {
        let (l, kind) = (cfg.domain.l, cfg.domain.kind);
        let mut sorted = x.clone();
        sorted.sort_by(f64::total_cmp);
        let on_walls = kind == DomainKind::Interval
            && sorted.first().is_some_and(|a| (*a + l).abs() <= 1e-12 * l)
            && sorted.last().is_some_and(|b| (*b - l).abs() <= 1e-12 * l);
        let pinned = cfg.integrator.pinned && on_walls;
        if cfg.integrator.pinned && !on_walls && kind == DomainKind::Interval {
            notes.push("extreme particles are not on the walls; running with mirror boundaries".into());
        }
        let c = ParticleConfig::from_unsorted(sorted, cfg.domain_spec(pinned))?;
        return Ok((c, pinned));
    }
    let rho = cfg
        .density()?
        .ok_or_else(|| CliError::Config("missing key `initial.density` (or `initial.particles`)".into()))?;
    let cert = certify_smooth_set(&rho)?;
    let rs = recovery_sequence(&rho, &cert, cfg.initial.n)?;
    let c = match cfg.domain.kind {
        DomainKind::Interval => rs.config,
        DomainKind::WholeLine => ParticleConfig::new(rs.config.into_positions(), cfg.domain_spec(false))?,
    };
    let pinned = cfg.integrator.pinned && cfg.domain.kind == DomainKind::Interval;
    Ok((c, pinned))
}

pub fn run(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let model = cfg.model()?;
    let (p, q) = (model.params.p, model.params.q);
    let mut notes = Vec::new();
    let (cfg0, pinned) = initial_particles(cfg, &mut notes)?;
    let mut spec = cfg.integrator.spec();
    spec.pinned = pinned;
    let traj = integrate(&cfg0, &model, &spec)?;
    let dir = run_dir(&cfg.output.dir, "run")?;
    save_config(&dir, cfg)?;
    io::write_trajectory(create(&dir, "trajectory.csv")?, &traj)?;
    io::write_particles(create(&dir, "particles.csv")?, &traj)?;
    if let Some(rho) = cfg.density()?.filter(|_| cfg.initial.particles.is_none()) {
        io::write_density(create(&dir, "density.csv")?, &rho, 401)?;
        io::write_quantile(create(&dir, "quantile.csv")?, &rho, 400)?;
    }

    let first = &traj.states[0];
    let nf = first.n() as f64;
    let (a1, a2) = (nf * first.min_gap(), nf * first.max_gap());
    let e0 = traj.energies[0];
    let m0 = traj.moments[0];
    let t_end = spec.t_end;
    let moment_bound = 2f64.powf(p - 1.0) * q.powf(p) * e0 * t_end.powf(p / q) + 2f64.powf(p - 1.0) * m0;
    let opts = SelectionOptions {
        tie_tol: spec.tie_tol,
        ..SelectionOptions::default()
    };
    let mut diag = Table::new(
        "diagnostics",
        &[
            "t",
            "tightness_margin",
            "moment_margin",
            "psi_jump_margin",
            "gap_lower_margin",
            "gap_upper_margin",
        ],
    );
    let mut last_sel = None;
    for (k, (&t, state)) in traj.times.iter().zip(&traj.states).enumerate() {
        let w = wasserstein_p(Measure::Particles(state), Measure::Particles(first), p)?;
        let tight = q * e0.powf(1.0 / p) * t.powf(1.0 / q) - w;
        let sel = minimal_selection_with(state, &model, &opts)?;
        let jump = psi_jump_margin(state, &model, &sel.z)?;
        diag.push(vec![
            t,
            tight,
            moment_bound - traj.moments[k],
            jump,
            nf * state.min_gap() - 0.5 * a1,
            2.0 * a2 - nf * state.max_gap(),
        ]);
        last_sel = Some(sel);
    }
    write_table(&dir, &diag)?;
    if let Some(sel) = &last_sel {
        io::write_subgradient(create(&dir, "subgradient.csv")?, traj.final_state(), &model, sel)?;
    }

    let col = |n: &str| diag.column(n).unwrap_or_default();
    let monotone = traj.energies.windows(2).all(|w| w[1] <= w[0] + 1e-12 * (1.0 + e0.abs()));
    let min = |v: Vec<f64>| v.into_iter().fold(f64::INFINITY, f64::min);
    let (tight, moment, jump) = (min(col("tightness_margin")), min(col("moment_margin")), min(col("psi_jump_margin")));
    let (lower, upper) = (min(col("gap_lower_margin")), min(col("gap_upper_margin")));
    if lower < 0.0 || upper < 0.0 {
        notes.push(format!(
            "scaled gaps left [a1/2, 2 a2] = [{:.4e}, {:.4e}] (margins {lower:.3e}, {upper:.3e})",
            0.5 * a1,
            2.0 * a2
        ));
    }
    notes.push(format!("{} steps, {} halvings, {} records", traj.steps, traj.rejections, traj.times.len()));
    let assertions = vec![
        Assertion::new("energy_non_increasing", monotone, format!("E_N from {e0:.6e} to {:.6e}", traj.energies.last().unwrap_or(&e0))),
        Assertion::new("tightness_bound", tight >= 0.0, format!("smallest margin {tight:.3e}")),
        Assertion::new("moment_bound", moment >= 0.0, format!("smallest margin {moment:.3e}")),
        Assertion::new("psi_jump_bound", jump >= -1e-9, format!("smallest margin {jump:.3e}")),
    ];
    finish(dir, "run", assertions, notes)
}

pub fn study(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let model = cfg.model()?;
    let spec = cfg.study_spec()?;
    let rho = cfg
        .density()?
        .ok_or_else(|| CliError::Config("missing key `initial.density`".into()))?;
    let report = run_study(&spec, &rho, &model, cfg.execution())?;
    let dir = run_dir(&cfg.output.dir, &format!("study-{}", spec.study))?;
    save_config(&dir, cfg)?;
    for t in &report.tables {
        write_table(&dir, t)?;
    }
    finish(dir, spec.study.name(), report.assertions, report.notes)
}

pub fn pde(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let model = cfg.model()?;
    let rho = cfg
        .density()?
        .ok_or_else(|| CliError::Config("missing key `initial.density`".into()))?;
    let l = cfg.domain.l;
    let mut times = cfg.pde.t_samples.clone();
    times.sort_by(f64::total_cmp);
    let m0 = FvGrid::from_density(&rho, l, cfg.pde.m)?.mass();
    let sol = fv_solve(&rho, &model, l, cfg.pde.m, &times, cfg.pde.safety)?;
    let dir = run_dir(&cfg.output.dir, "pde")?;
    save_config(&dir, cfg)?;
    io::write_pde(create(&dir, "pde.csv")?, &sol)?;

    let t0 = match cfg.initial.density {
        Some(DensityConfig::Barenblatt { t0 }) => Some(t0),
        _ => None,
    };
    let mut cols = vec!["t", "energy", "mass"];
    if t0.is_some() {
        cols.push("l1_to_self_similar");
    }
    let mut table = Table::new("pde_energy", &cols);
    for (t, g) in sol.times.iter().zip(&sol.grids) {
        let mut row = vec![*t, g.energy(&model), g.mass()];
        if let Some(t0) = t0 {
            row.push(l1_to_barenblatt(g, t0 + t));
        }
        table.push(row);
    }
    write_table(&dir, &table)?;
    let mass_drift = sol.grids.iter().map(|g| (g.mass() - m0).abs()).fold(0.0, f64::max);
    let monotone = sol.energies.windows(2).all(|w| w[1] <= w[0] + 1e-12 * (1.0 + w[0].abs()));
    let mut assertions = vec![
        Assertion::new("mass_conserved", mass_drift <= 1e-12, format!("largest drift {mass_drift:.3e}")),
        Assertion::new("energy_non_increasing", monotone, format!("{} samples", sol.times.len())),
    ];
    if t0.is_some() && model.params.p == 2.0 && model.params.gamma == Some(2.0) {
        let worst = table.column("l1_to_self_similar").unwrap_or_default().into_iter().fold(0.0, f64::max);
        assertions.push(Assertion::new(
            "self_similar_l1",
            worst <= 1e-2,
            format!("largest L1 distance {worst:.3e}"),
        ));
    }
    finish(dir, "pde", assertions, vec![format!("{} steps", sol.steps)])
}

/// `Σ_j |u_j - B(x_j, t)| Δx` with `B` averaged over each cell by
/// five-point Gauss–Legendre.
pub fn l1_to_barenblatt(g: &FvGrid, t: f64) -> f64 {
    const NODES: [(f64, f64); 5] = [
        (0.0, 0.568_888_888_888_888_9),
        (-0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
        (0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
        (-0.906_179_845_938_664, 0.236_926_885_056_189_1),
        (0.906_179_845_938_664, 0.236_926_885_056_189_1),
    ];
    let dx = g.dx();
    g.centers()
        .iter()
        .zip(&g.u)
        .map(|(&x, &u)| {
            let avg: f64 = NODES
                .iter()
                .map(|(s, w)| 0.5 * w * lpflow::pde::barenblatt_pme2(x + 0.5 * dx * s, t))
                .sum();
            (u - avg).abs() * dx
        })
        .sum()
}
