//! File formats: trajectory CSV, generic tables, checkpoints.

use std::fs;
use std::path::{Path, PathBuf};

use odelearn::bioreactor::STATE_NAMES;
use odelearn::nn::{Checkpoint, MlpModel};
use odelearn::ode::Trajectory;

use crate::error::{CliError, CliResult};

pub const TRAJECTORY_HEADER: [&str; 4] = ["t", "X", "S", "V"];

/// 17 significant digits: round-trips every f64.
pub fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

fn writer(path: &Path) -> CliResult<csv::Writer<fs::File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let file = fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    Ok(csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(file))
}

fn csv_err(path: &Path, e: csv::Error) -> CliError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => CliError::io(path, io),
        other => CliError::parse(path, format!("{other:?}")),
    }
}

pub fn write_table<S: AsRef<str>>(path: &Path, header: &[&str], rows: &[Vec<S>]) -> CliResult<()> {
    let mut w = writer(path)?;
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for row in rows {
        w.write_record(row.iter().map(|s| s.as_ref()))
            .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn write_trajectory(path: &Path, traj: &Trajectory) -> CliResult<()> {
    let rows: Vec<Vec<String>> = traj
        .times()
        .iter()
        .zip(traj.states())
        .map(|(t, y)| std::iter::once(*t).chain(y.iter().copied()).map(fmt).collect())
        .collect();
    write_table(path, &TRAJECTORY_HEADER, &rows)
}

pub fn read_trajectory(path: &Path) -> CliResult<Trajectory> {
    let file = fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut r = csv::Reader::from_reader(file);
    let header = r.headers().map_err(|e| csv_err(path, e))?.clone();
    if header.iter().collect::<Vec<_>>() != TRAJECTORY_HEADER {
        return Err(CliError::parse(
            path,
            format!("expected header t,{}", STATE_NAMES.join(",")),
        ));
    }
    let mut times = Vec::new();
    let mut states = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let vals = rec
            .iter()
            .map(|f| f.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| CliError::parse(path, format!("row {}: {e}", line + 2)))?;
        times.push(vals[0]);
        states.push(vals[1..].to_vec());
    }
    Trajectory::new(times, states).map_err(|e| CliError::parse(path, e))
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> CliResult<Checkpoint> {
    Checkpoint::from_json(&read_text(path)?).map_err(|e| CliError::parse(path, e))
}

pub fn read_model(path: &Path) -> CliResult<(MlpModel, Checkpoint)> {
    let ck = read_checkpoint(path)?;
    let model = ck.to_model().map_err(|e| CliError::parse(path, e))?;
    Ok((model, ck))
}

/// `dir/name.csv` -> `dir/name.csv.<suffix>`.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".");
    s.push(suffix);
    PathBuf::from(s)
}
