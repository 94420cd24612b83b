//! Saliency metrics, each usable as a training discrepancy or an evaluation
//! score.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridPoint, SaliencyGrid};
use crate::scalar::Real;

/// Offset inside the KLD logarithm's denominator.
pub const KLD_EPS: f64 = 1e-12;

/// Discrepancy `d(predicted, reference)`. Every kind is oriented so lower is
/// better.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Discrepancy {
    Kld,
    NegCc,
    NegNss,
    /// `kld * KLD - cc * CC - nss * NSS`
    Mix {
        kld: f64,
        cc: f64,
        nss: f64,
    },
}

impl Discrepancy {
    /// The mixed discrepancy popular in video-saliency work.
    pub const KLD_CC_NSS: Discrepancy = Discrepancy::Mix {
        kld: 1.0,
        cc: 0.1,
        nss: 0.1,
    };

    pub fn lower_is_better(&self) -> bool {
        true
    }

    pub fn needs_fixations(&self) -> bool {
        match *self {
            Discrepancy::NegNss => true,
            Discrepancy::Mix { nss, .. } => nss != 0.0,
            _ => false,
        }
    }

    /// Weights `(kld, cc, nss)` with the sign convention of [`Discrepancy::Mix`].
    pub fn weights(&self) -> (f64, f64, f64) {
        match *self {
            Discrepancy::Kld => (1.0, 0.0, 0.0),
            Discrepancy::NegCc => (0.0, 1.0, 0.0),
            Discrepancy::NegNss => (0.0, 0.0, 1.0),
            Discrepancy::Mix { kld, cc, nss } => (kld, cc, nss),
        }
    }
}

impl fmt::Display for Discrepancy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Discrepancy::Kld => f.write_str("kld"),
            Discrepancy::NegCc => f.write_str("neg_cc"),
            Discrepancy::NegNss => f.write_str("neg_nss"),
            Discrepancy::Mix { kld, cc, nss } => write!(f, "mix:{kld},{cc},{nss}"),
        }
    }
}

impl FromStr for Discrepancy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().to_ascii_lowercase();
        match t.as_str() {
            "kld" => return Ok(Discrepancy::Kld),
            "neg_cc" | "-cc" => return Ok(Discrepancy::NegCc),
            "neg_nss" | "-nss" => return Ok(Discrepancy::NegNss),
            "auc" | "neg_auc" | "-auc" => return Err(Error::NonDifferentiable(t)),
            _ => {}
        }
        let weights = t
            .strip_prefix("mix:")
            .ok_or_else(|| Error::UnknownDiscrepancy(s.to_string()))?;
        let w: Vec<f64> = weights
            .split(',')
            .map(|x| x.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::UnknownDiscrepancy(s.to_string()))?;
        match w[..] {
            [kld, cc, nss] if w.iter().all(|x| x.is_finite()) => Ok(Discrepancy::Mix { kld, cc, nss }),
            _ => Err(Error::UnknownDiscrepancy(s.to_string())),
        }
    }
}

impl TryFrom<String> for Discrepancy {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Discrepancy> for String {
    fn from(d: Discrepancy) -> String {
        d.to_string()
    }
}

/// `sum_j ref_j * ln(ref_j / (pred_j + 1e-12))`, zero-reference terms dropped.
pub fn kld<T: Real>(reference: &SaliencyGrid<T>, predicted: &SaliencyGrid<T>) -> Result<T> {
    reference.ensure_same_shape(predicted)?;
    let eps = T::lit(KLD_EPS);
    Ok(reference
        .values()
        .iter()
        .zip(predicted.values())
        .filter(|(&r, _)| r > T::zero())
        .map(|(&r, &p)| r * (r / (p + eps)).ln())
        .sum())
}

/// Mean and centred sum of squares.
pub(crate) fn moments<T: Real>(values: &[T]) -> (T, T) {
    let n = T::from_usize_lossy(values.len());
    let mean = values.iter().copied().sum::<T>() / n;
    let ss = values.iter().map(|&v| (v - mean) * (v - mean)).sum();
    (mean, ss)
}

/// True when the spread is indistinguishable from rounding noise.
pub(crate) fn negligible_spread<T: Real>(values: &[T], ss: T) -> bool {
    let scale: T = values.iter().map(|&v| v * v).sum();
    ss <= T::epsilon() * T::epsilon() * scale
}

/// Pearson correlation of the two value arrays.
pub fn cc<T: Real>(a: &SaliencyGrid<T>, b: &SaliencyGrid<T>) -> Result<T> {
    a.ensure_same_shape(b)?;
    let (ma, saa) = moments(a.values());
    let (mb, sbb) = moments(b.values());
    if negligible_spread(a.values(), saa) || negligible_spread(b.values(), sbb) {
        return Err(Error::ZeroVariance);
    }
    let sab: T = a
        .values()
        .iter()
        .zip(b.values())
        .map(|(&x, &y)| (x - ma) * (y - mb))
        .sum();
    let r = sab / (saa * sbb).sqrt();
    Ok(r.max(-T::one()).min(T::one()))
}

/// Histogram intersection.
pub fn sim<T: Real>(a: &SaliencyGrid<T>, b: &SaliencyGrid<T>) -> Result<T> {
    a.ensure_same_shape(b)?;
    Ok(a.values().iter().zip(b.values()).map(|(&x, &y)| x.min(y)).sum())
}

fn check_fixations<T: Real>(map: &SaliencyGrid<T>, fixations: &[GridPoint]) -> Result<()> {
    if fixations.is_empty() {
        return Err(Error::EmptyFixations);
    }
    fixations.iter().try_for_each(|&p| map.shape().check(p))
}

/// Mean z-score (population standard deviation) of `predicted` at the
/// fixated cells. Repeated fixations on a cell each count.
pub fn nss<T: Real>(predicted: &SaliencyGrid<T>, fixations: &[GridPoint]) -> Result<T> {
    check_fixations(predicted, fixations)?;
    let (mean, ss) = moments(predicted.values());
    if negligible_spread(predicted.values(), ss) {
        return Err(Error::ZeroVariance);
    }
    let sd = (ss / T::from_usize_lossy(predicted.len())).sqrt();
    let total: T = fixations.iter().map(|&p| (predicted.get(p) - mean) / sd).sum();
    Ok(total / T::from_usize_lossy(fixations.len()))
}

/// Area under the ROC curve separating fixated cells (each counted once)
/// from all other cells.
///
/// Thresholds run over the distinct saliency values found at fixated cells,
/// from `+inf` down. At each threshold the curve first moves across cells
/// strictly above it, then along the diagonal through the tied block, so tied
/// negatives contribute half their area. The result equals the probability
/// that a fixated cell outranks a non-fixated one, ties counted one half.
pub fn auc_judd<T: Real>(predicted: &SaliencyGrid<T>, fixations: &[GridPoint]) -> Result<T> {
    check_fixations(predicted, fixations)?;
    let shape = predicted.shape();
    let positive: BTreeSet<usize> = fixations.iter().map(|&p| shape.index(p)).collect();
    let n_pos = positive.len() as u128;
    let n_neg = (predicted.len() - positive.len()) as u128;
    if n_neg == 0 {
        return Err(Error::NoNegatives);
    }

    let desc = |a: &T, b: &T| b.partial_cmp(a).expect("finite saliency");
    let mut pos: Vec<T> = positive.iter().map(|&i| predicted.values()[i]).collect();
    let mut neg: Vec<T> = predicted
        .values()
        .iter()
        .enumerate()
        .filter(|(i, _)| !positive.contains(i))
        .map(|(_, &v)| v)
        .collect();
    pos.sort_by(desc);
    neg.sort_by(desc);

    // Twice the area in units of one positive times one negative.
    let mut area2: u128 = 0;
    let (mut x, mut y) = (0u128, 0u128);
    let (mut ip, mut ineg) = (0usize, 0usize);
    while ip < pos.len() {
        let t = pos[ip];
        while ineg < neg.len() && neg[ineg] > t {
            ineg += 1;
        }
        // Strictly above t: the y count is unchanged since all larger
        // positive values were consumed at earlier thresholds.
        let x_gt = ineg as u128;
        area2 += (x_gt - x) * (2 * y);
        x = x_gt;
        while ineg < neg.len() && neg[ineg] == t {
            ineg += 1;
        }
        let mut y_ge = y;
        while ip < pos.len() && pos[ip] == t {
            ip += 1;
            y_ge += 1;
        }
        let x_ge = ineg as u128;
        area2 += (x_ge - x) * (y + y_ge);
        x = x_ge;
        y = y_ge;
    }
    area2 += (n_neg - x) * (y + n_pos);

    Ok(T::lit(area2 as f64) / T::lit((2 * n_pos * n_neg) as f64))
}

/// Evaluates `d(predicted, reference)`; `fixations` belong to the reference.
pub fn eval_discrepancy<T: Real>(
    d: &Discrepancy,
    predicted: &SaliencyGrid<T>,
    reference: &SaliencyGrid<T>,
    fixations: Option<&[GridPoint]>,
) -> Result<T> {
    predicted.ensure_same_shape(reference)?;
    let (wk, wc, wn) = d.weights();
    let mut total = T::zero();
    if wk != 0.0 {
        total += T::lit(wk) * kld(reference, predicted)?;
    }
    if wc != 0.0 {
        total -= T::lit(wc) * cc(predicted, reference)?;
    }
    if wn != 0.0 {
        let fix = fixations.ok_or_else(|| Error::MissingFixations(d.to_string()))?;
        total -= T::lit(wn) * nss(predicted, fix)?;
    }
    Ok(total)
}

/// The five evaluation scores of a prediction against a reference map and
/// reference fixations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub kld: f64,
    pub cc: f64,
    pub sim: f64,
    pub nss: f64,
    pub auc: f64,
}

impl MetricSet {
    pub fn evaluate<T: Real>(
        predicted: &SaliencyGrid<T>,
        reference: &SaliencyGrid<T>,
        fixations: &[GridPoint],
    ) -> Result<Self> {
        Ok(Self {
            kld: kld(reference, predicted)?.as_f64(),
            cc: cc(predicted, reference)?.as_f64(),
            sim: sim(predicted, reference)?.as_f64(),
            nss: nss(predicted, fixations)?.as_f64(),
            auc: auc_judd(predicted, fixations)?.as_f64(),
        })
    }

    pub fn mean(sets: &[MetricSet]) -> MetricSet {
        let n = sets.len().max(1) as f64;
        let sum = |f: fn(&MetricSet) -> f64| sets.iter().map(f).sum::<f64>() / n;
        MetricSet {
            kld: sum(|m| m.kld),
            cc: sum(|m| m.cc),
            sim: sum(|m| m.sim),
            nss: sum(|m| m.nss),
            auc: sum(|m| m.auc),
        }
    }
}
