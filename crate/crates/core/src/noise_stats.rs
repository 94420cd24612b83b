//! Bootstrap statistics of the discrepancy between a map and its
//! sample-and-reconstruct realizations.
//!
//! The practical estimate resamples the measured map itself; the ideal
//! estimate resamples the ground truth and is only usable on synthetic data,
//! where it serves to validate the practical one.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::SaliencyGrid;
use crate::metrics::{eval_discrepancy, Discrepancy};
use crate::reconstruct::{resample_with_fixations, sample_fixations, sr_reconstruct};
use crate::rng::{stream, Purpose};
use crate::scalar::Real;

/// Bootstrap realizations per frame used when nothing else is configured.
pub const DEFAULT_REALIZATIONS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseStats<T> {
    pub mean: T,
    pub variance: T,
    pub realizations: usize,
    pub observer_count: usize,
    pub discrepancy: Discrepancy,
}

impl<T: Real> NoiseStats<T> {
    pub fn std_dev(&self) -> T {
        self.variance.sqrt()
    }
}

/// Sample mean and unbiased sample variance.
pub fn mean_and_variance<T: Real>(xs: &[T]) -> (T, T) {
    let n = T::from_usize_lossy(xs.len());
    let mean = xs.iter().copied().sum::<T>() / n;
    if xs.len() < 2 {
        return (mean, T::zero());
    }
    let ss: T = xs.iter().map(|&x| (x - mean) * (x - mean)).sum();
    (mean, ss / (n - T::one()))
}

/// Draws `m` SR realizations from `source` and records
/// `d(source, realization)`, with the realization's own fixations as the
/// fixation argument.
pub fn discrepancy_samples<T: Real, R: Rng + ?Sized>(
    source: &SaliencyGrid<T>,
    n: usize,
    sigma: T,
    d: &Discrepancy,
    m: usize,
    rng: &mut R,
) -> Result<Vec<T>> {
    (0..m)
        .map(|_| {
            let (realization, fixations) = resample_with_fixations(source, n, sigma, rng)?;
            eval_discrepancy(d, source, &realization, Some(&fixations.points))
        })
        .collect()
}

fn summarize<T: Real>(samples: &[T], n: usize, d: &Discrepancy) -> NoiseStats<T> {
    let (mean, variance) = mean_and_variance(samples);
    NoiseStats {
        mean,
        variance: variance.max(T::zero()),
        realizations: samples.len(),
        observer_count: n,
        discrepancy: *d,
    }
}

/// Practical statistics: resample the measured map `m` times with `n`
/// points each.
pub fn estimate_noise_stats<T: Real, R: Rng + ?Sized>(
    measured: &SaliencyGrid<T>,
    n: usize,
    sigma: T,
    d: &Discrepancy,
    m: usize,
    rng: &mut R,
) -> Result<NoiseStats<T>> {
    if m < 2 {
        return Err(Error::TooFewRealizations(m));
    }
    if n == 0 {
        return Err(Error::ZeroCount);
    }
    let samples = discrepancy_samples(measured, n, sigma, d, m, rng)?;
    Ok(summarize(&samples, n, d))
}

/// Ideal statistics: the same estimate drawn from the ground truth. For
/// validation only.
pub fn estimate_ideal_stats<T: Real, R: Rng + ?Sized>(
    truth: &SaliencyGrid<T>,
    n: usize,
    sigma: T,
    d: &Discrepancy,
    m: usize,
    rng: &mut R,
) -> Result<NoiseStats<T>> {
    estimate_noise_stats(truth, n, sigma, d, m, rng)
}

/// Estimates stats for many frames in parallel. Frame `k` uses the bootstrap
/// stream derived from `(seed, frame_id)`, so results do not depend on the
/// thread count.
pub fn estimate_many<T: Real>(
    frames: &[(u64, &SaliencyGrid<T>, usize)],
    sigma: T,
    d: &Discrepancy,
    m: usize,
    seed: u64,
) -> Result<Vec<NoiseStats<T>>> {
    frames
        .par_iter()
        .map(|&(frame_id, measured, n)| {
            let mut rng = stream(seed, Purpose::Bootstrap, frame_id);
            estimate_noise_stats(measured, n, sigma, d, m, &mut rng)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapeRow {
    pub n: usize,
    pub mape_mean: f64,
    pub mape_variance: f64,
}

fn ape(approx: f64, ideal: f64) -> f64 {
    if approx == ideal {
        0.0
    } else {
        (approx - ideal).abs() / ideal.abs()
    }
}

/// How well the bootstrap approximates the ideal statistics.
///
/// For each truth and each `n`: ideal stats from the truth, then one measured
/// map drawn from the truth and its bootstrap stats. Reports the absolute
/// percentage error of mean and variance (as fractions), averaged over truths.
pub fn approximation_error_study<T: Real>(
    truths: &[SaliencyGrid<T>],
    n_values: &[usize],
    sigma: T,
    d: &Discrepancy,
    m: usize,
    seed: u64,
) -> Result<Vec<MapeRow>> {
    if truths.is_empty() {
        return Err(Error::BadParameter("approximation study needs truths".into()));
    }
    n_values
        .iter()
        .enumerate()
        .map(|(ni, &n)| {
            let errors: Vec<(f64, f64)> = truths
                .par_iter()
                .enumerate()
                .map(|(k, truth)| {
                    let index = ((ni as u64) << 32) | k as u64;
                    let mut rng = stream(seed, Purpose::Study, index);
                    let ideal = estimate_ideal_stats(truth, n, sigma, d, m, &mut rng)?;
                    let measured_fix = sample_fixations(truth, n, &mut rng)?;
                    let measured = sr_reconstruct(&measured_fix.points, sigma, truth.shape())?;
                    let approx = estimate_noise_stats(&measured, n, sigma, d, m, &mut rng)?;
                    Ok((
                        ape(approx.mean.as_f64(), ideal.mean.as_f64()),
                        ape(approx.variance.as_f64(), ideal.variance.as_f64()),
                    ))
                })
                .collect::<Result<_>>()?;
            let count = errors.len() as f64;
            Ok(MapeRow {
                n,
                mape_mean: errors.iter().map(|e| e.0).sum::<f64>() / count,
                mape_variance: errors.iter().map(|e| e.1).sum::<f64>() / count,
            })
        })
        .collect()
}

pub const NSTATS_HEADER: [&str; 6] = ["frame_id", "n", "discrepancy", "mean", "variance", "m"];

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StatsRecord {
    frame_id: u64,
    n: usize,
    discrepancy: Discrepancy,
    mean: f64,
    variance: f64,
    m: usize,
}

pub fn write_nstats<'a, T: Real + 'a, W: Write>(
    out: W,
    rows: impl IntoIterator<Item = (u64, &'a NoiseStats<T>)>,
) -> Result<()> {
    let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    writer.write_record(NSTATS_HEADER)?;
    for (frame_id, s) in rows {
        writer.serialize(StatsRecord {
            frame_id,
            n: s.observer_count,
            discrepancy: s.discrepancy,
            mean: s.mean.as_f64(),
            variance: s.variance.as_f64(),
            m: s.realizations,
        })?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_nstats<T: Real, R: Read>(input: R) -> Result<BTreeMap<u64, NoiseStats<T>>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let header = reader.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != NSTATS_HEADER {
        return Err(Error::Parse(format!(
            "NSTATS header must be '{}'",
            NSTATS_HEADER.join(",")
        )));
    }
    let mut out = BTreeMap::new();
    for (line, rec) in reader.deserialize::<StatsRecord>().enumerate() {
        let rec = rec.map_err(|e| Error::Parse(format!("NSTATS row {}: {e}", line + 2)))?;
        if !(rec.variance >= 0.0) || !rec.mean.is_finite() || rec.m < 2 {
            return Err(Error::Parse(format!(
                "NSTATS row {}: invalid statistics for frame {}",
                line + 2,
                rec.frame_id
            )));
        }
        let stats = NoiseStats {
            mean: T::lit(rec.mean),
            variance: T::lit(rec.variance),
            realizations: rec.m,
            observer_count: rec.n,
            discrepancy: rec.discrepancy,
        };
        if out.insert(rec.frame_id, stats).is_some() {
            return Err(Error::IdMismatch(format!(
                "frame {} appears twice in NSTATS",
                rec.frame_id
            )));
        }
    }
    Ok(out)
}
