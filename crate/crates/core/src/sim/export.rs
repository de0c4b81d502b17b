//! CSV and JSON persistence. Floats are written with 17 significant
//! digits so that reading a file back reproduces every value exactly.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DVector;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::certificate::{BoundReport, RegretCertificate};
use crate::cost::{PathMetrics, SetpointSchedule};
use crate::error::{Error, Result};

use super::experiment::SweepRow;
use super::RunRecord;

fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn indexed(prefix: &str, k: usize) -> impl Iterator<Item = String> + '_ {
    (1..=k).map(move |i| format!("{prefix}_{i}"))
}

fn to_bytes(write: impl FnOnce(&mut csv::Writer<&mut Vec<u8>>) -> csv::Result<()>) -> String {
    let mut buf = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        write(&mut w).expect("writing to memory");
        w.flush().expect("writing to memory");
    }
    String::from_utf8(buf).expect("csv output is ascii")
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Header, then rows of floats (the leading `t`/`run` column included).
fn read_numeric_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::format(path, e))?;
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::format(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::format(path, e))?;
        let row = rec
            .iter()
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::format(path, format!("row {}: {e}", line + 1)))?;
        rows.push(row);
    }
    Ok((header, rows))
}

fn count_prefix(header: &[String], prefix: &str) -> usize {
    header
        .iter()
        .filter(|h| h.strip_prefix(prefix).is_some_and(|rest| rest.parse::<usize>().is_ok()))
        .count()
}

/// Per-step trajectory as written to and read from CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryTable {
    pub x: Vec<DVector<f64>>,
    pub u: Vec<DVector<f64>>,
    pub theta: Vec<DVector<f64>>,
    pub eta: Vec<DVector<f64>>,
    pub cost_x: Vec<f64>,
    pub cost_u: Vec<f64>,
}

impl TrajectoryTable {
    pub fn from_record(rec: &RunRecord) -> Self {
        TrajectoryTable {
            x: rec.trace.x.clone(),
            u: rec.trace.u.clone(),
            theta: rec.theta.clone(),
            eta: rec.eta.clone(),
            cost_x: rec.cost_x.clone(),
            cost_u: rec.cost_u.clone(),
        }
    }

    pub fn horizon(&self) -> usize {
        self.x.len()
    }

    pub fn total_cost(&self) -> f64 {
        self.cost_x.iter().zip(&self.cost_u).map(|(a, b)| a + b).sum()
    }

    pub fn header(n: usize, m: usize) -> Vec<String> {
        std::iter::once("t".to_string())
            .chain(indexed("x", n))
            .chain(indexed("u", m))
            .chain(indexed("theta", n))
            .chain(indexed("eta", m))
            .chain(["cost_x".to_string(), "cost_u".to_string()])
            .collect()
    }
}

/// Columns `t,x_1..x_n,u_1..u_m,theta_1..theta_n,eta_1..eta_m,cost_x,cost_u`.
pub fn trajectory_csv_string(table: &TrajectoryTable) -> String {
    let n = table.x.first().map_or(0, |x| x.len());
    let m = table.u.first().map_or(0, |u| u.len());
    to_bytes(|w| {
        w.write_record(TrajectoryTable::header(n, m))?;
        for t in 0..table.horizon() {
            let row: Vec<String> = std::iter::once((t + 1).to_string())
                .chain(table.x[t].iter().map(|v| fmt_f64(*v)))
                .chain(table.u[t].iter().map(|v| fmt_f64(*v)))
                .chain(table.theta[t].iter().map(|v| fmt_f64(*v)))
                .chain(table.eta[t].iter().map(|v| fmt_f64(*v)))
                .chain([fmt_f64(table.cost_x[t]), fmt_f64(table.cost_u[t])])
                .collect();
            w.write_record(row)?;
        }
        Ok(())
    })
}

pub fn write_trajectory_csv(rec: &RunRecord, path: impl AsRef<Path>) -> Result<()> {
    write_text(path.as_ref(), &trajectory_csv_string(&TrajectoryTable::from_record(rec)))
}

pub fn read_trajectory_csv(path: impl AsRef<Path>) -> Result<TrajectoryTable> {
    let path = path.as_ref();
    let (header, rows) = read_numeric_csv(path)?;
    let n = count_prefix(&header, "x_");
    let m = count_prefix(&header, "u_");
    if header != TrajectoryTable::header(n, m) {
        return Err(Error::format(path, "unexpected trajectory header"));
    }
    let mut table = TrajectoryTable {
        x: Vec::new(),
        u: Vec::new(),
        theta: Vec::new(),
        eta: Vec::new(),
        cost_x: Vec::new(),
        cost_u: Vec::new(),
    };
    for row in rows {
        let mut at = 1;
        let mut take = |k: usize| {
            let v = DVector::from_column_slice(&row[at..at + k]);
            at += k;
            v
        };
        table.x.push(take(n));
        table.u.push(take(m));
        table.theta.push(take(n));
        table.eta.push(take(m));
        table.cost_x.push(row[at]);
        table.cost_u.push(row[at + 1]);
    }
    Ok(table)
}

const SWEEP_HEADER: [&str; 10] = [
    "run",
    "change_prob",
    "path_length",
    "Theta_T",
    "H_T",
    "total_cost",
    "regret",
    "comparator_regret",
    "bound",
    "bound_ok",
];

pub fn sweep_csv_string(rows: &[SweepRow]) -> String {
    to_bytes(|w| {
        w.write_record(SWEEP_HEADER)?;
        for r in rows {
            let mut rec = vec![r.run.to_string()];
            rec.extend(
                [
                    r.change_prob,
                    r.path_length,
                    r.theta_sq,
                    r.eta_sq,
                    r.total_cost,
                    r.regret,
                    r.comparator_regret,
                    r.bound,
                ]
                .map(fmt_f64),
            );
            rec.push(r.bound_ok.to_string());
            w.write_record(rec)?;
        }
        Ok(())
    })
}

pub fn write_sweep_csv(rows: &[SweepRow], path: impl AsRef<Path>) -> Result<()> {
    write_text(path.as_ref(), &sweep_csv_string(rows))
}

pub fn read_sweep_csv(path: impl AsRef<Path>) -> Result<Vec<SweepRow>> {
    let path = path.as_ref();
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::format(path, e))?;
    let header = rdr.headers().map_err(|e| Error::format(path, e))?;
    if header.iter().ne(SWEEP_HEADER) {
        return Err(Error::format(path, "unexpected sweep header"));
    }
    rdr.deserialize()
        .collect::<csv::Result<Vec<SweepRow>>>()
        .map_err(|e| Error::format(path, e))
}

/// Columns `t,theta_1..theta_n,eta_1..eta_m`.
pub fn write_schedule_csv(schedule: &SetpointSchedule, path: impl AsRef<Path>) -> Result<()> {
    let (n, m) = (schedule.n(), schedule.m());
    let text = to_bytes(|w| {
        let header: Vec<String> = std::iter::once("t".to_string())
            .chain(indexed("theta", n))
            .chain(indexed("eta", m))
            .collect();
        w.write_record(header)?;
        for (t, (th, et)) in schedule.theta.iter().zip(&schedule.eta).enumerate() {
            let row: Vec<String> = std::iter::once((t + 1).to_string())
                .chain(th.iter().chain(et.iter()).map(|v| fmt_f64(*v)))
                .collect();
            w.write_record(row)?;
        }
        Ok(())
    });
    write_text(path.as_ref(), &text)
}

pub fn read_schedule_csv(path: impl AsRef<Path>) -> Result<SetpointSchedule> {
    let path = path.as_ref();
    let (header, rows) = read_numeric_csv(path)?;
    let n = count_prefix(&header, "theta_");
    let m = count_prefix(&header, "eta_");
    if header.len() != 1 + n + m || header[0] != "t" || n == 0 || m == 0 {
        return Err(Error::format(path, "expected columns t,theta_1..theta_n,eta_1..eta_m"));
    }
    let (theta, eta) = rows
        .iter()
        .map(|r| {
            (
                DVector::from_column_slice(&r[1..1 + n]),
                DVector::from_column_slice(&r[1 + n..]),
            )
        })
        .unzip();
    SetpointSchedule::new(theta, eta).map_err(|e| Error::format(path, e))
}

/// Aggregates of one run, as written next to its trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub horizon: usize,
    pub mu: usize,
    pub total_cost: f64,
    pub optimal_cost: f64,
    pub regret: f64,
    pub comparator_regret: f64,
    pub path: PathMetrics,
    pub assumptions_ok: bool,
    pub certificate: Option<RegretCertificate>,
    pub bound: Option<BoundReport>,
}

impl RunSummary {
    pub fn from_record(rec: &RunRecord) -> Self {
        RunSummary {
            horizon: rec.horizon(),
            mu: rec.mu,
            total_cost: rec.total_cost,
            optimal_cost: rec.optimal_cost,
            regret: rec.regret,
            comparator_regret: rec.comparator_regret,
            path: rec.path,
            assumptions_ok: rec.assumptions.passed(),
            certificate: rec.certificate.clone(),
            bound: rec.bound.clone(),
        }
    }
}

pub fn write_json<T: Serialize>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::format(path, e))?;
    text.push('\n');
    write_text(path, &text)
}

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{experiment_pathlength, experiment_tracking};

    #[test]
    fn seventeen_digit_floats_round_trip() {
        for x in [0.1, -1.0 / 3.0, 1e-300, 6.02214076e23, f64::MIN_POSITIVE, 0.0] {
            assert_eq!(fmt_f64(x).parse::<f64>().unwrap().to_bits(), x.to_bits());
        }
    }

    #[test]
    fn trajectory_header_for_reference_sizes() {
        let rec = experiment_tracking(1).unwrap();
        let text = trajectory_csv_string(&TrajectoryTable::from_record(&rec));
        let first = text.lines().next().unwrap();
        assert_eq!(first, "t,x_1,x_2,x_3,u_1,theta_1,theta_2,theta_3,eta_1,cost_x,cost_u");
        assert_eq!(text.lines().count(), 31);
    }

    #[test]
    fn trajectory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested").join("traj.csv");
        let rec = experiment_tracking(4).unwrap();
        write_trajectory_csv(&rec, &path).unwrap();
        let back = read_trajectory_csv(&path).unwrap();
        assert_eq!(back, TrajectoryTable::from_record(&rec));
        assert_eq!(back.total_cost().to_bits(), rec.total_cost.to_bits());
    }

    #[test]
    fn sweep_and_summary_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let sweep = experiment_pathlength(3, 25, 2).unwrap();
        let p = dir.path().join("sweep.csv");
        write_sweep_csv(&sweep.rows, &p).unwrap();
        let back = read_sweep_csv(&p).unwrap();
        assert!(back.iter().zip(&sweep.rows).all(|(a, b)| a.bit_eq(b)));

        let rec = experiment_tracking(4).unwrap();
        let summary = RunSummary::from_record(&rec);
        let p = dir.path().join("summary.json");
        write_json(&summary, &p).unwrap();
        let again: RunSummary = read_json(&p).unwrap();
        assert_eq!(again, summary);
    }

    #[test]
    fn schedule_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let rec = experiment_tracking(8).unwrap();
        let schedule = SetpointSchedule::new(rec.theta.clone(), rec.eta.clone()).unwrap();
        let p = dir.path().join("schedule.csv");
        write_schedule_csv(&schedule, &p).unwrap();
        assert_eq!(read_schedule_csv(&p).unwrap(), schedule);
    }

    #[test]
    fn missing_file_names_path() {
        let err = read_trajectory_csv("/nonexistent/traj.csv").unwrap_err();
        assert!(err.to_string().contains("/nonexistent/traj.csv"));
    }
}
