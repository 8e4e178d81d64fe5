//! Gradient-norm stability statistics, run manifests and tidy CSV exports.

use std::path::PathBuf;
use std::time::{SystemTime, UNIX_EPOCH};

use log::warn;
use serde::{Deserialize, Serialize};

use crate::testbed::TrainingLog;
use crate::{Error, Result};

/// A step counts as a spike when it exceeds the trailing mean by this many
/// standard deviations.
pub const SPIKE_SIGMAS: f64 = 3.0;

/// Population mean and variance, two-pass on values shifted by the first
/// sample so that a constant series has exactly zero variance.
pub fn mean_variance(xs: &[f64]) -> (f64, f64) {
    let Some(&shift) = xs.first() else {
        return (f64::NAN, f64::NAN);
    };
    let n = xs.len() as f64;
    let offset = xs.iter().map(|x| x - shift).sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - shift - offset).powi(2)).sum::<f64>() / n;
    (shift + offset, var)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowStats {
    pub index: usize,
    /// First step index covered (inclusive).
    pub start: usize,
    /// One past the last step index covered.
    pub end: usize,
    pub mean: f64,
    pub variance: f64,
    pub spikes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityStats {
    pub window: usize,
    pub steps: usize,
    pub windows: Vec<WindowStats>,
    /// Step indices flagged by the trailing 3σ rule.
    pub spike_steps: Vec<usize>,
    pub mean: f64,
    pub variance: f64,
    /// The requested window exceeded the series and one window was used.
    pub single_window_fallback: bool,
}

impl StabilityStats {
    pub fn spike_count(&self) -> usize {
        self.spike_steps.len()
    }

    /// Columns `window,start,end,mean,variance,spikes`.
    pub fn windows_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["window", "start", "end", "mean", "variance", "spikes"])?;
        for win in &self.windows {
            w.serialize((win.index, win.start, win.end, win.mean, win.variance, win.spikes))?;
        }
        finish_csv(w)
    }
}

/// Tiled-window statistics of a gradient-norm series.
///
/// Step `i` is a spike when `x_i > μ + 3σ` of the (at most `window`) steps
/// preceding it; at least two preceding steps are required.
pub fn stability_stats(grad_norms: &[f64], window: usize) -> Result<StabilityStats> {
    if grad_norms.is_empty() {
        return Err(Error::domain("stability statistics need a nonempty log"));
    }
    if window == 0 {
        return Err(Error::domain("window must be positive"));
    }
    let fallback = window > grad_norms.len();
    let window = if fallback {
        warn!(
            "window {window} exceeds the {} logged steps; using a single window",
            grad_norms.len()
        );
        grad_norms.len()
    } else {
        window
    };

    let spike_steps: Vec<usize> = (2..grad_norms.len())
        .filter(|&i| {
            let (mean, var) = mean_variance(&grad_norms[i.saturating_sub(window)..i]);
            grad_norms[i] > mean + SPIKE_SIGMAS * var.sqrt()
        })
        .collect();

    let windows = grad_norms
        .chunks(window)
        .enumerate()
        .map(|(index, chunk)| {
            let start = index * window;
            let end = start + chunk.len();
            let (mean, variance) = mean_variance(chunk);
            let spikes = spike_steps.iter().filter(|&&s| (start..end).contains(&s)).count();
            WindowStats {
                index,
                start,
                end,
                mean,
                variance,
                spikes,
            }
        })
        .collect();

    let (mean, variance) = mean_variance(grad_norms);
    Ok(StabilityStats {
        window,
        steps: grad_norms.len(),
        windows,
        spike_steps,
        mean,
        variance,
        single_window_fallback: fallback,
    })
}

pub fn stability_stats_for_log(log: &TrainingLog, window: usize) -> Result<StabilityStats> {
    stability_stats(&log.grad_norms(), window)
}

/// Columns `step,interval,loss,grad_norm,retained,effective_tokens`.
pub fn steps_csv(log: &TrainingLog) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["step", "interval", "loss", "grad_norm", "retained", "effective_tokens"])?;
    for s in &log.steps {
        w.serialize((s.step, s.interval, s.loss, s.grad_norm, s.retained, s.effective_tokens))?;
    }
    finish_csv(w)
}

/// Serializes rows with a header derived from the row type's field names.
pub fn rows_csv<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row)?;
    }
    finish_csv(w)
}

fn finish_csv(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Seconds since the Unix epoch.
pub fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64())
}

/// Provenance record written next to every command's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    /// Full configuration; together with `seed` it reproduces the run.
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub started_at: f64,
    pub finished_at: Option<f64>,
    pub artifacts: Vec<PathBuf>,
}

impl RunManifest {
    pub fn start(command: impl Into<String>, config: serde_json::Value, seed: Option<u64>) -> Self {
        Self {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").to_owned(),
            config,
            seed,
            started_at: unix_now(),
            finished_at: None,
            artifacts: Vec::new(),
        }
    }

    pub fn record(&mut self, path: impl Into<PathBuf>) {
        self.artifacts.push(path.into());
    }

    pub fn finish(&mut self) {
        self.finished_at = Some(unix_now());
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
