use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BASE: &str = r#"
[energy]
p = 2.0
gamma = 2.0
"#;

fn lpflow(dir: &Path, config: &str, args: &[&str]) -> Output {
    let path = dir.join("config.toml");
    fs::write(&path, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_lpflow"))
        .args(args)
        .arg("--config")
        .arg(&path)
        .arg("--set")
        .arg(format!("output.dir=\"{}\"", dir.join("out").display()))
        .output()
        .unwrap()
}

fn out_dir(o: &Output) -> PathBuf {
    let text = String::from_utf8_lossy(&o.stdout);
    let line = text.lines().find_map(|l| l.strip_prefix("output: ")).expect("output line");
    PathBuf::from(line)
}

fn column(path: &Path, name: &str) -> Vec<f64> {
    let mut rdr = csv::Reader::from_path(path).unwrap();
    let k = rdr.headers().unwrap().iter().position(|h| h == name).unwrap();
    rdr.records().map(|r| r.unwrap()[k].parse().unwrap()).collect()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn validate_passes_for_the_quadratic_energy() {
    let tmp = tempfile::tempdir().unwrap();
    let o = lpflow(tmp.path(), BASE, &["validate"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let dir = out_dir(&o);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["placement"]["placement"], "Direct");
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["passed"], true);
}

#[test]
fn inadmissible_gamma_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = lpflow(tmp.path(), "[energy]\np = 2.0\ngamma = 0.5\n", &["validate"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("gamma + 1 - p"));
    assert!(!tmp.path().join("out").exists());
}

#[test]
fn missing_key_is_named() {
    let tmp = tempfile::tempdir().unwrap();
    let o = lpflow(tmp.path(), "[energy]\ngamma = 2.0\n", &["validate"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("`energy.p`"), "{}", stderr(&o));
}

#[test]
fn syntax_errors_report_the_line() {
    let tmp = tempfile::tempdir().unwrap();
    let o = lpflow(tmp.path(), "[energy]\np = 2.0\ngamma = \n", &["validate"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
}

#[test]
fn unknown_keys_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let o = lpflow(tmp.path(), &format!("{BASE}\n[integrator]\nstep = 0.1\n"), &["run"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("step"), "{}", stderr(&o));
}

#[test]
fn run_is_monotone_tight_and_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = format!("{BASE}\n[initial]\nn = 50\ndensity = {{ kind = \"uniform\" }}\n[integrator]\nt_end = 0.1\n");
    let a = lpflow(tmp.path(), &cfg, &["run"]);
    assert_eq!(a.status.code(), Some(0), "{}", stderr(&a));
    let b = lpflow(tmp.path(), &cfg, &["run"]);
    assert_eq!(b.status.code(), Some(0));
    let (da, db) = (out_dir(&a), out_dir(&b));
    assert_ne!(da, db);

    let e = column(&da.join("trajectory.csv"), "E_N");
    assert!(e.len() > 2);
    assert!(e.windows(2).all(|w| w[1] <= w[0]));
    let t = column(&da.join("trajectory.csv"), "t");
    assert_eq!(*t.last().unwrap(), 0.1);
    assert!(column(&da.join("diagnostics.csv"), "tightness_margin").iter().all(|m| *m >= 0.0));
    assert!(column(&da.join("diagnostics.csv"), "moment_margin").iter().all(|m| *m >= 0.0));

    for f in ["trajectory.csv", "particles.csv", "diagnostics.csv", "subgradient.csv", "density.csv", "quantile.csv"] {
        assert_eq!(fs::read(da.join(f)).unwrap(), fs::read(db.join(f)).unwrap(), "{f} differs");
    }
}

#[test]
fn run_with_explicit_particles_on_the_line() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = format!(
        "{BASE}\n[domain]\nkind = \"whole_line\"\n[initial]\nparticles = [3.0, 0.0, 1.0]\n[integrator]\ndt = 1e-3\nt_end = 0.05\n"
    );
    let o = lpflow(tmp.path(), &cfg, &["run"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let sub = fs::read_to_string(out_dir(&o).join("subgradient.csv")).unwrap();
    assert!(sub.starts_with("i,psi_i,z_i,lambda_class"));
    assert_eq!(sub.lines().count(), 5);
}

#[test]
fn gamma_limsup_study_has_a_decreasing_gap() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = format!(
        "{BASE}\n[initial]\ndensity = {{ kind = \"uniform\" }}\n[study]\nname = \"gamma_limsup\"\nn_list = [8, 16, 32, 64, 128, 256, 512]\n"
    );
    let o = lpflow(tmp.path(), &cfg, &["study"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let gap = column(&out_dir(&o).join("gamma_limsup.csv"), "gap");
    assert_eq!(gap.len(), 7);
    assert!(gap.windows(2).all(|w| w[1] < w[0]));
}

#[test]
fn pde_convergence_study_has_a_decreasing_distance() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = format!(
        "{BASE}\n[initial]\ndensity = {{ kind = \"bump\" }}\n[pde]\nM = 512\n[study]\nname = \"pde_convergence\"\nn_list = [25, 50, 100, 200]\n"
    );
    let o = lpflow(tmp.path(), &cfg, &["study"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let w = column(&out_dir(&o).join("pde_convergence.csv"), "W_p");
    assert!(w.windows(2).all(|w| w[1] < w[0]));
}

#[test]
fn failed_study_assertion_exits_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = format!(
        "{BASE}\n[initial]\ndensity = {{ kind = \"uniform\" }}\n[study]\nname = \"gamma_limsup\"\nn_list = [8, 16]\ntol = -1.0\n"
    );
    let o = lpflow(tmp.path(), &cfg, &["study"]);
    assert_eq!(o.status.code(), Some(1));
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir(&o).join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["passed"], false);
}

#[test]
fn unknown_study_lists_valid_names() {
    let tmp = tempfile::tempdir().unwrap();
    let o = lpflow(tmp.path(), BASE, &["study", "--set", "study.name=\"nope\""]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    for name in ["gamma_limsup", "c2_energy", "c3_slope", "mesh_ratio", "pde_convergence", "edi_residual"] {
        assert!(err.contains(name), "{err}");
    }
}

#[test]
fn pde_conserves_mass() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = format!("{BASE}\n[initial]\ndensity = {{ kind = \"bump\" }}\n[pde]\nM = 128\nt_samples = [0.0, 0.02, 0.05]\n");
    let o = lpflow(tmp.path(), &cfg, &["pde"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let dir = out_dir(&o);
    let mass = column(&dir.join("pde_energy.csv"), "mass");
    assert!(mass.iter().all(|m| (m - mass[0]).abs() <= 1e-12));
    assert_eq!(column(&dir.join("pde.csv"), "u").len(), 3 * 128);
}
