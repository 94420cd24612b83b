//! Traditional and noise-aware objectives with analytic gradients.
//!
//! A predicted map is a softmax over per-cell logits, so every candidate is a
//! valid pdf. Gradients are taken with respect to the logits: first the
//! discrepancy's gradient with respect to the map, then the softmax chain
//! rule `dz_k = p_k (g_k - sum_j p_j g_j)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridPoint, SaliencyGrid, Shape};
use crate::metrics::{eval_discrepancy, moments, negligible_spread, Discrepancy, KLD_EPS};
use crate::noise_stats::NoiseStats;
use crate::scalar::Real;

/// Offset added to every variance in the NAT objective.
pub const VARIANCE_OFFSET: f64 = 5e-5;

/// Saliency prediction parameterized by unconstrained per-cell logits.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictedMap<T> {
    shape: Shape,
    logits: Vec<T>,
}

impl<T: Real> PredictedMap<T> {
    pub fn new(shape: Shape, logits: Vec<T>) -> Result<Self> {
        if logits.len() != shape.cells() {
            return Err(Error::LengthMismatch(logits.len(), shape.cells()));
        }
        if logits.iter().any(|z| !z.is_finite()) {
            return Err(Error::BadParameter("non-finite logit".into()));
        }
        Ok(Self { shape, logits })
    }

    /// All-zero logits, i.e. the uniform map.
    pub fn uniform(shape: Shape) -> Self {
        Self {
            shape,
            logits: vec![T::zero(); shape.cells()],
        }
    }

    /// Logits `ln(max(p, floor))` reproducing `map` up to the floor.
    pub fn from_map(map: &SaliencyGrid<T>, floor: T) -> Self {
        Self {
            shape: map.shape(),
            logits: map.values().iter().map(|&p| p.max(floor).ln()).collect(),
        }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn logits(&self) -> &[T] {
        &self.logits
    }

    pub fn map(&self) -> SaliencyGrid<T> {
        SaliencyGrid::from_normalized(self.shape, softmax(&self.logits))
    }
}

pub fn softmax<T: Real>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), |a, b| a.max(b));
    let mut out: Vec<T> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: T = out.iter().copied().sum();
    for v in &mut out {
        *v /= total;
    }
    out
}

/// Traditional per-frame objective `d(predicted, measured)`.
pub fn tt_loss<T: Real>(
    predicted: &PredictedMap<T>,
    measured: &SaliencyGrid<T>,
    fixations: Option<&[GridPoint]>,
    d: &Discrepancy,
) -> Result<T> {
    eval_discrepancy(d, &predicted.map(), measured, fixations)
}

/// `(d - mean)^2 / (variance + 5e-5)`
pub fn nat_frame_loss<T: Real>(d_value: T, stats: &NoiseStats<T>) -> T {
    let gap = d_value - stats.mean;
    gap * gap / (stats.variance + T::lit(VARIANCE_OFFSET))
}

/// Full Gaussian negative log-likelihood of `d_value`, with the variance
/// offset folded into the standard deviation.
pub fn full_nll<T: Real>(d_value: T, stats: &NoiseStats<T>) -> T {
    let var = stats.variance + T::lit(VARIANCE_OFFSET);
    let sd = var.sqrt();
    let gap = d_value - stats.mean;
    (T::lit((2.0 * std::f64::consts::PI).sqrt()) * sd).ln() + gap * gap / (T::lit(2.0) * var)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameLoss {
    pub frame_id: u64,
    pub d_value: f64,
    pub mean: f64,
    pub variance: f64,
    pub contribution: f64,
}

/// Per-frame breakdown of a dataset objective. Serializes as
/// `{total, frames: [...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub total: f64,
    #[serde(rename = "frames")]
    pub per_frame: Vec<FrameLoss>,
}

/// Everything the NAT objective needs for one frame.
#[derive(Debug, Clone, Copy)]
pub struct NatFrame<'a, T> {
    pub frame_id: u64,
    pub predicted: &'a PredictedMap<T>,
    pub measured: &'a SaliencyGrid<T>,
    pub fixations: Option<&'a [GridPoint]>,
    pub stats: &'a NoiseStats<T>,
}

pub(crate) fn check_stats<T>(frame_id: u64, stats: &NoiseStats<T>, d: &Discrepancy) -> Result<()> {
    if stats.discrepancy != *d {
        return Err(Error::StatsDiscrepancyMismatch {
            frame_id,
            cached: stats.discrepancy.to_string(),
            expected: d.to_string(),
        });
    }
    Ok(())
}

/// Dataset NAT objective, summed over frames in the given order.
pub fn nat_loss<T: Real>(frames: &[NatFrame<'_, T>], d: &Discrepancy) -> Result<LossReport> {
    let mut per_frame = Vec::with_capacity(frames.len());
    let mut total = 0.0;
    for f in frames {
        check_stats(f.frame_id, f.stats, d)?;
        let d_value = tt_loss(f.predicted, f.measured, f.fixations, d)?;
        let contribution = nat_frame_loss(d_value, f.stats).as_f64();
        total += contribution;
        per_frame.push(FrameLoss {
            frame_id: f.frame_id,
            d_value: d_value.as_f64(),
            mean: f.stats.mean.as_f64(),
            variance: f.stats.variance.as_f64(),
            contribution,
        });
    }
    Ok(LossReport { total, per_frame })
}

/// Value of `d(p, reference)` and its gradient with respect to `p`.
pub fn discrepancy_and_map_gradient<T: Real>(
    d: &Discrepancy,
    p: &[T],
    reference: &SaliencyGrid<T>,
    fixations: Option<&[GridPoint]>,
) -> Result<(T, Vec<T>)> {
    let r = reference.values();
    if p.len() != r.len() {
        return Err(Error::LengthMismatch(p.len(), r.len()));
    }
    let n = p.len();
    let n_t = T::from_usize_lossy(n);
    let (wk, wc, wn) = d.weights();
    let mut value = T::zero();
    let mut grad = vec![T::zero(); n];

    if wk != 0.0 {
        let w = T::lit(wk);
        let eps = T::lit(KLD_EPS);
        for j in 0..n {
            if r[j] > T::zero() {
                value += w * r[j] * (r[j] / (p[j] + eps)).ln();
                grad[j] -= w * r[j] / (p[j] + eps);
            }
        }
    }

    if wc != 0.0 || wn != 0.0 {
        let (mp, saa) = moments(p);
        if negligible_spread(p, saa) {
            return Err(Error::ZeroVariance);
        }
        if wc != 0.0 {
            let (mr, sbb) = moments(r);
            if negligible_spread(r, sbb) {
                return Err(Error::ZeroVariance);
            }
            let sab: T = p.iter().zip(r).map(|(&x, &y)| (x - mp) * (y - mr)).sum();
            let denom = (saa * sbb).sqrt();
            let cc = sab / denom;
            let w = T::lit(wc);
            value -= w * cc;
            for j in 0..n {
                let dcc = (r[j] - mr) / denom - cc * (p[j] - mp) / saa;
                grad[j] -= w * dcc;
            }
        }
        if wn != 0.0 {
            let fix = fixations.ok_or_else(|| Error::MissingFixations(d.to_string()))?;
            if fix.is_empty() {
                return Err(Error::EmptyFixations);
            }
            let shape = reference.shape();
            let share = T::one() / T::from_usize_lossy(fix.len());
            let mut weight = vec![T::zero(); n];
            for &f in fix {
                shape.check(f)?;
                weight[shape.index(f)] += share;
            }
            let var = saa / n_t;
            let sd = var.sqrt();
            let nss: T = (0..n).map(|j| weight[j] * (p[j] - mp)).sum::<T>() / sd;
            let w = T::lit(wn);
            value -= w * nss;
            let inv_n = T::one() / n_t;
            for j in 0..n {
                let dnss = (weight[j] - inv_n) / sd - nss * (p[j] - mp) / (n_t * var);
                grad[j] -= w * dnss;
            }
        }
    }
    Ok((value, grad))
}

/// Pulls a map-space gradient back through the softmax.
pub fn softmax_backward<T: Real>(p: &[T], grad_p: &[T]) -> Vec<T> {
    let inner: T = p.iter().zip(grad_p).map(|(&a, &b)| a * b).sum();
    p.iter().zip(grad_p).map(|(&pk, &gk)| pk * (gk - inner)).collect()
}

/// Loss value, discrepancy value and logit gradient for one frame. With
/// `stats` the objective is the NAT frame loss, otherwise the raw
/// discrepancy.
#[derive(Debug, Clone)]
pub struct FrameObjective<T> {
    pub loss: T,
    pub d_value: T,
    pub gradient: Vec<T>,
}

pub fn frame_objective<T: Real>(
    logits: &[T],
    measured: &SaliencyGrid<T>,
    fixations: Option<&[GridPoint]>,
    stats: Option<&NoiseStats<T>>,
    d: &Discrepancy,
) -> Result<FrameObjective<T>> {
    let p = softmax(logits);
    let (d_value, grad_p) = discrepancy_and_map_gradient(d, &p, measured, fixations)?;
    let mut gradient = softmax_backward(&p, &grad_p);
    let loss = match stats {
        None => d_value,
        Some(s) => {
            let outer = T::lit(2.0) * (d_value - s.mean) / (s.variance + T::lit(VARIANCE_OFFSET));
            for g in &mut gradient {
                *g *= outer;
            }
            nat_frame_loss(d_value, s)
        }
    };
    Ok(FrameObjective {
        loss,
        d_value,
        gradient,
    })
}

/// Gradient of the TT loss (`stats == None`) or the NAT frame loss with
/// respect to the logits.
pub fn loss_gradient<T: Real>(
    predicted: &PredictedMap<T>,
    measured: &SaliencyGrid<T>,
    fixations: Option<&[GridPoint]>,
    stats: Option<&NoiseStats<T>>,
    d: &Discrepancy,
) -> Result<Vec<T>> {
    predicted
        .shape()
        .eq(&measured.shape())
        .then_some(())
        .ok_or_else(|| Error::ShapeMismatch {
            left: predicted.shape().to_string(),
            right: measured.shape().to_string(),
        })?;
    if let Some(s) = stats {
        check_stats(0, s, d)?;
    }
    frame_objective(predicted.logits(), measured, fixations, stats, d).map(|o| o.gradient)
}
