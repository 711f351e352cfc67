//! Trajectory CSV files, model files and bin-averaged lagged differencing.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{CopulaHmm, Trajectory};

/// A trajectory read from CSV together with its optional `t` column.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryTable {
    pub trajectory: Trajectory,
    pub times: Option<Vec<f64>>,
    /// Names of the observation columns in file order.
    pub columns: Vec<String>,
}

/// Parse a trajectory table. Columns named `t` and `state` are special; every
/// other column is an observation dimension. States are 1-based in the file.
pub fn read_trajectory<R: Read>(reader: R) -> Result<TrajectoryTable> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers()?.clone();
    let mut t_col = None;
    let mut s_col = None;
    let mut obs_cols = Vec::new();
    let mut columns = Vec::new();
    for (i, name) in header.iter().enumerate() {
        match name {
            "t" if t_col.is_none() => t_col = Some(i),
            "state" if s_col.is_none() => s_col = Some(i),
            "t" | "state" => return Err(Error::Parse { line: 1, message: format!("duplicate column `{name}`") }),
            _ => {
                obs_cols.push(i);
                columns.push(name.to_string());
            }
        }
    }
    if obs_cols.is_empty() {
        return Err(Error::Parse { line: 1, message: "no observation columns".into() });
    }
    let mut obs = Vec::new();
    let mut times = t_col.map(|_| Vec::new());
    let mut labels = s_col.map(|_| Vec::new());
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            Error::Parse { line, message: e.to_string() }
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let num = |i: usize| -> Result<f64> {
            let field = &rec[i];
            let v: f64 = field
                .parse()
                .map_err(|_| Error::Parse { line, message: format!("`{field}` in column `{}` is not a number", &header[i]) })?;
            if !v.is_finite() {
                return Err(Error::Parse { line, message: format!("non-finite value in column `{}`", &header[i]) });
            }
            Ok(v)
        };
        for &i in &obs_cols {
            obs.push(num(i)?);
        }
        if let (Some(i), Some(ts)) = (t_col, times.as_mut()) {
            ts.push(num(i)?);
        }
        if let (Some(i), Some(ls)) = (s_col, labels.as_mut()) {
            let field = &rec[i];
            let s: usize = field
                .parse()
                .ok()
                .filter(|&s| s >= 1)
                .ok_or_else(|| Error::Parse { line, message: format!("state `{field}` is not a positive integer") })?;
            ls.push(s - 1);
        }
    }
    if obs.is_empty() {
        return Err(Error::Parse { line: 2, message: "no data rows".into() });
    }
    let trajectory = Trajectory::from_flat(obs, obs_cols.len(), labels)?;
    Ok(TrajectoryTable { trajectory, times, columns })
}

pub fn read_trajectory_csv(path: impl AsRef<Path>) -> Result<TrajectoryTable> {
    read_trajectory(fs::File::open(path)?)
}

/// Write `t,y1,...,yd[,state]`; `t` is 1-based unless `times` is given.
pub fn write_trajectory<W: Write>(writer: W, traj: &Trajectory, times: Option<&[f64]>) -> Result<()> {
    if let Some(ts) = times {
        if ts.len() != traj.len() {
            return Err(Error::LengthMismatch { left: ts.len(), right: traj.len() });
        }
    }
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["t".to_string()];
    header.extend((1..=traj.dim()).map(|h| format!("y{h}")));
    if traj.labels().is_some() {
        header.push("state".into());
    }
    w.write_record(&header)?;
    let mut rec = Vec::with_capacity(header.len());
    for (t, row) in traj.rows().enumerate() {
        rec.clear();
        rec.push(match times {
            Some(ts) => format!("{:?}", ts[t]),
            None => (t + 1).to_string(),
        });
        // Debug formatting is the shortest string that parses back exactly
        rec.extend(row.iter().map(|v| format!("{v:?}")));
        if let Some(l) = traj.labels() {
            rec.push((l[t] + 1).to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_trajectory_csv(path: impl AsRef<Path>, traj: &Trajectory, times: Option<&[f64]>) -> Result<()> {
    write_trajectory(fs::File::create(path)?, traj, times)
}

pub fn model_to_toml(model: &CopulaHmm) -> Result<String> {
    Ok(toml::to_string(model)?)
}

pub fn model_from_toml(text: &str) -> Result<CopulaHmm> {
    Ok(toml::from_str(text)?)
}

pub fn read_model(path: impl AsRef<Path>) -> Result<CopulaHmm> {
    model_from_toml(&fs::read_to_string(path)?)
}

pub fn write_model(path: impl AsRef<Path>, model: &CopulaHmm) -> Result<()> {
    fs::write(path, model_to_toml(model)?)?;
    Ok(())
}

/// Result of bin averaging and differencing.
#[derive(Debug, Clone, PartialEq)]
pub struct LaggedDifferences {
    pub trajectory: Trajectory,
    /// Bin means, one row per bin.
    pub bin_means: Vec<Vec<f64>>,
    /// Bins that held no samples and were forward-filled from the previous bin.
    pub filled_bins: Vec<usize>,
}

/// Average over left-closed bins `[t₀ + iw, t₀ + (i+1)w)` and take first
/// differences. Difference row `i` carries the majority label of bin `i + 1`
/// (ties to the smaller label).
pub fn preprocess_lagged_differences(traj: &Trajectory, window_minutes: f64, timestamps: &[f64]) -> Result<LaggedDifferences> {
    if !(window_minutes > 0.0 && window_minutes.is_finite()) {
        return Err(Error::InvalidParameter(format!("window must be positive, got {window_minutes}")));
    }
    if timestamps.len() != traj.len() {
        return Err(Error::LengthMismatch { left: timestamps.len(), right: traj.len() });
    }
    if timestamps.iter().any(|t| !t.is_finite()) {
        return Err(Error::InvalidTrajectory("non-finite timestamp".into()));
    }
    if let Some(i) = timestamps.windows(2).position(|w| w[1] < w[0]) {
        return Err(Error::InvalidTrajectory(format!("timestamps decrease at row {}", i + 2)));
    }
    let t0 = timestamps[0];
    let bin_of = |t: f64| ((t - t0) / window_minutes).floor() as usize;
    let n_bins = bin_of(timestamps[timestamps.len() - 1]) + 1;
    if n_bins < 2 {
        return Err(Error::InsufficientData("all samples fall in one bin".into()));
    }
    let d = traj.dim();
    let n_labels = traj.labels().map_or(0, |l| l.iter().max().map_or(0, |m| m + 1));
    let mut sums = vec![vec![0.0; d]; n_bins];
    let mut counts = vec![0usize; n_bins];
    let mut votes = vec![vec![0usize; n_labels]; n_bins];
    for (t, row) in traj.rows().enumerate() {
        let b = bin_of(timestamps[t]);
        counts[b] += 1;
        for h in 0..d {
            sums[b][h] += row[h];
        }
        if let Some(l) = traj.labels() {
            votes[b][l[t]] += 1;
        }
    }
    let mut filled_bins = Vec::new();
    let mut bin_means: Vec<Vec<f64>> = Vec::with_capacity(n_bins);
    let mut bin_labels: Vec<usize> = Vec::with_capacity(n_bins);
    for b in 0..n_bins {
        if counts[b] == 0 {
            // bin 0 always holds the first sample
            filled_bins.push(b);
            bin_means.push(bin_means[b - 1].clone());
            bin_labels.push(bin_labels[b - 1]);
        } else {
            bin_means.push(sums[b].iter().map(|s| s / counts[b] as f64).collect());
            let mut best = 0;
            for (l, &v) in votes[b].iter().enumerate() {
                if v > votes[b][best] {
                    best = l;
                }
            }
            bin_labels.push(best);
        }
    }
    let rows: Vec<Vec<f64>> = bin_means
        .windows(2)
        .map(|w| w[1].iter().zip(&w[0]).map(|(a, b)| a - b).collect())
        .collect();
    let labels = traj.labels().map(|_| bin_labels[1..].to_vec());
    Ok(LaggedDifferences { trajectory: Trajectory::new(rows, labels)?, bin_means, filled_bins })
}
