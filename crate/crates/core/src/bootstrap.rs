//! Resampling diagnostics for pixel-level model error under village
//! aggregation.
//!
//! All randomness comes from ChaCha8 streams. Replicate `r` of a run with
//! seed `s` draws from a stream seeded with `s ^ r`, so results do not depend
//! on thread count or scheduling.

use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BootstrapSummary {
    pub n: usize,
    pub replicates: usize,
    /// Average absolute replicate mean.
    pub mean_abs_error: f64,
    /// 2.5th percentile of the absolute replicate means.
    pub lo: f64,
    /// 97.5th percentile of the absolute replicate means.
    pub hi: f64,
    pub replicate_mean: f64,
    /// Dispersion of the replicate means.
    pub replicate_sd: f64,
}

fn replicate_rng(seed: u64, replicate: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ replicate)
}

/// Draws `n` residuals with replacement per replicate and summarizes the
/// replicate means.
pub fn bootstrap_aggregate_error(
    residuals: &[f64],
    n: usize,
    replicates: usize,
    seed: u64,
) -> Result<BootstrapSummary> {
    if residuals.is_empty() {
        return Err(Error::validation("bootstrap", "residuals are empty"));
    }
    if n == 0 || replicates == 0 {
        return Err(Error::validation(
            "bootstrap",
            "draw size and replicates must be at least 1",
        ));
    }
    if let Some(bad) = residuals.iter().find(|r| !r.is_finite()) {
        return Err(Error::validation("bootstrap", format!("non-finite residual {bad}")));
    }
    let means: Vec<f64> = (0..replicates as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = replicate_rng(seed, r);
            let mut sum = 0.0;
            for _ in 0..n {
                sum += residuals[rng.random_range(0..residuals.len())];
            }
            sum / n as f64
        })
        .collect();
    let mut abs: Vec<f64> = means.iter().map(|m| m.abs()).collect();
    let mean_abs_error = stats::mean(&abs).expect("replicates > 0");
    abs.sort_unstable_by(f64::total_cmp);
    Ok(BootstrapSummary {
        n,
        replicates,
        mean_abs_error,
        lo: stats::percentile_sorted(&abs, 0.025).expect("replicates > 0"),
        hi: stats::percentile_sorted(&abs, 0.975).expect("replicates > 0"),
        replicate_mean: stats::mean(&means).expect("replicates > 0"),
        replicate_sd: if replicates > 1 {
            stats::sample_sd(&means).expect("replicates > 1")
        } else {
            0.0
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceCurve {
    /// `(n, running mean)` for n = 1..=max_n.
    pub points: Vec<(usize, f64)>,
    /// First n from which every later running mean stays within tolerance
    /// of the final mean.
    pub n_star: usize,
    pub converged: bool,
    pub tolerance: f64,
}

impl ConvergenceCurve {
    pub fn final_mean(&self) -> f64 {
        self.points.last().map_or(0.0, |p| p.1)
    }

    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["n", "running_mean"])
            .map_err(|e| Error::csv("curve", e))?;
        for (n, m) in &self.points {
            w.write_record([n.to_string(), m.to_string()])
                .map_err(|e| Error::csv("curve", e))?;
        }
        w.flush().map_err(|e| Error::io("curve", e))?;
        Ok(())
    }
}

/// Running means over one seeded shuffle of the residuals.
pub fn convergence_curve(residuals: &[f64], max_n: usize, tolerance: f64, seed: u64) -> Result<ConvergenceCurve> {
    if !(tolerance.is_finite() && tolerance > 0.0) {
        return Err(Error::validation("convergence", "tolerance must be positive"));
    }
    if residuals.is_empty() {
        return Err(Error::validation("convergence", "residuals are empty"));
    }
    if max_n == 0 || max_n > residuals.len() {
        return Err(Error::validation(
            "convergence",
            format!("max_n must be in 1..={}, got {max_n}", residuals.len()),
        ));
    }
    let mut order = residuals.to_vec();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order.truncate(max_n);

    let mut points = Vec::with_capacity(max_n);
    let mut sum = 0.0;
    for (i, r) in order.iter().enumerate() {
        sum += r;
        points.push((i + 1, sum / (i + 1) as f64));
    }
    let last = points[max_n - 1].1;
    let n_star = points
        .iter()
        .rposition(|&(_, m)| (m - last).abs() > tolerance)
        .map_or(1, |i| i + 2);
    Ok(ConvergenceCurve {
        points,
        n_star,
        converged: n_star < max_n || max_n == 1,
        tolerance,
    })
}

/// Gaussian(0, sigma) residuals for demonstration runs.
pub fn synth_residuals(sigma: f64, count: usize, seed: u64) -> Result<Vec<f64>> {
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::Config(format!("residual sigma: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..count).map(|_| rng.sample(normal)).collect())
}

#[derive(Deserialize)]
struct ResidualRow {
    residual_kg_ha: f64,
}

pub fn read_residuals(input: impl Read) -> Result<Vec<f64>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    rdr.deserialize::<ResidualRow>()
        .map(|row| row.map(|r| r.residual_kg_ha).map_err(|e| Error::csv("residuals", e)))
        .collect()
}

pub fn write_residuals(residuals: &[f64], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["residual_kg_ha"])
        .map_err(|e| Error::csv("residuals", e))?;
    for r in residuals {
        w.write_record([r.to_string()])
            .map_err(|e| Error::csv("residuals", e))?;
    }
    w.flush().map_err(|e| Error::io("residuals", e))?;
    Ok(())
}
