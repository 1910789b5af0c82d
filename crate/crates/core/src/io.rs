//! CSV input and output. Floats are written with 17 significant digits so
//! every value reads back bit-for-bit.

use std::io::{Read, Write};

use serde::Serialize;

use crate::energy::EnergyModel;
use crate::error::{Error, Result};
use crate::flow::Trajectory;
use crate::particles::{psi_vector, ParticleConfig, Subgradient};
use crate::pde::FvSolution;
use crate::transport::DensityProfile;

pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// A named table of numeric columns.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Self {
            name: name.into(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        assert_eq!(row.len(), self.columns.len(), "row width does not match the header of {}", self.name);
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[k]).collect())
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(&self.columns)?;
        for row in &self.rows {
            out.write_record(row.iter().map(|v| fmt_f64(*v)))?;
        }
        out.flush()?;
        Ok(())
    }

    /// Read a table written by [`Table::write_csv`]. Empty fields read as NaN.
    pub fn read_csv<R: Read>(name: &str, r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let columns = rdr.headers()?.iter().map(String::from).collect();
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let row = rec
                .iter()
                .map(|f| {
                    if f.is_empty() {
                        Ok(f64::NAN)
                    } else {
                        f.trim()
                            .parse::<f64>()
                            .map_err(|e| Error::InvalidInput(format!("bad number {f:?} in {name}: {e}")))
                    }
                })
                .collect::<Result<Vec<f64>>>()?;
            rows.push(row);
        }
        Ok(Self {
            name: name.into(),
            columns,
            rows,
        })
    }
}

/// `t, i, x_i` for every recorded state, particles numbered from 1.
pub fn write_particles<W: Write>(w: W, traj: &Trajectory) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["t", "i", "x_i"])?;
    for (t, cfg) in traj.times.iter().zip(&traj.states) {
        for (i, x) in cfg.positions().iter().enumerate() {
            out.write_record([fmt_f64(*t), (i + 1).to_string(), fmt_f64(*x)])?;
        }
    }
    out.flush()?;
    Ok(())
}

/// `i, psi_i, z_i, lambda_class` over the `N + 1` gaps; the last row has no
/// particle and leaves `z_i` and the class empty.
pub fn write_subgradient<W: Write>(w: W, cfg: &ParticleConfig, model: &EnergyModel, sub: &Subgradient) -> Result<()> {
    let psi = psi_vector(cfg, model)?;
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["i", "psi_i", "z_i", "lambda_class"])?;
    for (i, ps) in psi.iter().enumerate() {
        let (z, class) = match sub.z.get(i) {
            Some(z) => (fmt_f64(*z), sub.classes[i].label().to_string()),
            None => (String::new(), String::new()),
        };
        out.write_record([(i + 1).to_string(), fmt_f64(*ps), z, class])?;
    }
    out.flush()?;
    Ok(())
}

/// `t, E_N, g_N_dual_q, g_N_paper_p, speed_wp, moment_p`; the speed is that
/// of the interval ending at `t` and is empty on the first row.
pub fn write_trajectory<W: Write>(w: W, traj: &Trajectory) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["t", "E_N", "g_N_dual_q", "g_N_paper_p", "speed_wp", "moment_p"])?;
    for k in 0..traj.times.len() {
        let speed = if k == 0 { String::new() } else { fmt_f64(traj.metric_speed[k - 1]) };
        out.write_record([
            fmt_f64(traj.times[k]),
            fmt_f64(traj.energies[k]),
            fmt_f64(traj.slopes_dual[k]),
            fmt_f64(traj.slopes_primal[k]),
            speed,
            fmt_f64(traj.moments[k]),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// `x, rho` at `n` evenly spaced points across the support.
pub fn write_density<W: Write>(w: W, rho: &DensityProfile, n: usize) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["x", "rho"])?;
    for (x, r) in rho.sample(n) {
        out.write_record([fmt_f64(x), fmt_f64(r)])?;
    }
    out.flush()?;
    Ok(())
}

/// `s, Q` at the midpoints `s = (k + 1/2)/n`.
pub fn write_quantile<W: Write>(w: W, rho: &DensityProfile, n: usize) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["s", "Q"])?;
    for k in 0..n {
        let s = (k as f64 + 0.5) / n as f64;
        out.write_record([fmt_f64(s), fmt_f64(rho.quantile(s))])?;
    }
    out.flush()?;
    Ok(())
}

/// `t, x_center, u` for every sample and cell.
pub fn write_pde<W: Write>(w: W, sol: &FvSolution) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["t", "x_center", "u"])?;
    for (t, g) in sol.times.iter().zip(&sol.grids) {
        for (x, u) in g.centers().iter().zip(&g.u) {
            out.write_record([fmt_f64(*t), fmt_f64(*x), fmt_f64(*u)])?;
        }
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_round_trips_exactly() {
        let mut t = Table::new("demo", &["a", "b"]);
        t.push(vec![0.1, 1.0 / 3.0]);
        t.push(vec![-2.5e-300, f64::MAX]);
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let back = Table::read_csv("demo", buf.as_slice()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn seventeen_digits() {
        assert_eq!(fmt_f64(0.1), "1.0000000000000001e-1");
        assert_eq!(fmt_f64(0.1).parse::<f64>().unwrap(), 0.1);
    }
}
