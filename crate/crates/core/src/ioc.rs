//! Inter-observer consistency: how well a map built from `n` observers
//! predicts the fixations of one more.

use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frames::Frame;
use crate::grid::{GridPoint, Shape};
use crate::metrics::nss;
use crate::reconstruct::sr_reconstruct;
use crate::rng::{stream, Purpose};
use crate::scalar::Real;

/// Realizations per curve point used when nothing else is configured.
pub const DEFAULT_IOC_REALIZATIONS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IocCurve {
    pub n: Vec<usize>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub realizations: usize,
    /// Scores behind each point, after skips and pooling.
    pub samples: Vec<usize>,
    /// Realizations dropped because the subset map was constant.
    pub skipped: usize,
}

impl IocCurve {
    pub fn len(&self) -> usize {
        self.n.len()
    }

    pub fn is_empty(&self) -> bool {
        self.n.is_empty()
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["n", "mean_nss", "std_nss", "realizations"])?;
        for i in 0..self.len() {
            w.write_record([
                self.n[i].to_string(),
                self.mean[i].to_string(),
                self.std[i].to_string(),
                self.realizations.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Raw NSS scores per subset size, plus the number of skipped realizations.
struct IocScores {
    per_n: Vec<Vec<f64>>,
    skipped: usize,
}

fn ioc_scores<T: Real, R: Rng + ?Sized>(
    observers: &[Vec<GridPoint>],
    shape: Shape,
    sigma: T,
    realizations: usize,
    rng: &mut R,
) -> Result<IocScores> {
    let count = observers.len();
    if count < 3 {
        return Err(Error::TooFewObservers {
            needed: 3,
            got: count,
        });
    }
    if realizations == 0 {
        return Err(Error::ZeroCount);
    }
    let mut per_n = Vec::with_capacity(count - 1);
    let mut skipped = 0;
    let mut subset = Vec::new();
    for n in 1..count {
        let mut scores = Vec::with_capacity(realizations);
        for _ in 0..realizations {
            let chosen = sample(rng, count, n + 1);
            subset.clear();
            for i in chosen.iter().take(n) {
                subset.extend_from_slice(&observers[i]);
            }
            let held_out = &observers[chosen.index(n)];
            let map = sr_reconstruct(&subset, sigma, shape)?;
            match nss(&map, held_out) {
                Ok(s) => scores.push(s.as_f64()),
                Err(Error::ZeroVariance) => skipped += 1,
                Err(e) => return Err(e),
            }
        }
        per_n.push(scores);
    }
    Ok(IocScores { per_n, skipped })
}

fn summarize(per_n: &[Vec<f64>], realizations: usize, skipped: usize) -> IocCurve {
    let mut curve = IocCurve {
        n: Vec::with_capacity(per_n.len()),
        mean: Vec::with_capacity(per_n.len()),
        std: Vec::with_capacity(per_n.len()),
        realizations,
        samples: Vec::with_capacity(per_n.len()),
        skipped,
    };
    for (i, scores) in per_n.iter().enumerate() {
        let (mean, var) = if scores.is_empty() {
            (f64::NAN, f64::NAN)
        } else if scores.len() == 1 {
            (scores[0], 0.0)
        } else {
            crate::noise_stats::mean_and_variance(scores)
        };
        curve.n.push(i + 1);
        curve.mean.push(mean);
        curve.std.push(var.sqrt());
        curve.samples.push(scores.len());
    }
    curve
}

/// IOC curve of one frame. `observers` holds each observer's fixations;
/// callers wanting relabeling invariance pass them sorted by observer id.
pub fn ioc_curve<T: Real, R: Rng + ?Sized>(
    observers: &[Vec<GridPoint>],
    shape: Shape,
    sigma: T,
    realizations: usize,
    rng: &mut R,
) -> Result<IocCurve> {
    let s = ioc_scores(observers, shape, sigma, realizations, rng)?;
    Ok(summarize(&s.per_n, realizations, s.skipped))
}

/// Absolute slope of the last segment of the mean curve.
pub fn ioc_convergence_gradient(curve: &IocCurve) -> Result<f64> {
    let k = curve.len();
    if k < 2 {
        return Err(Error::TooShort);
    }
    let dn = (curve.n[k - 1] - curve.n[k - 2]) as f64;
    Ok(((curve.mean[k - 1] - curve.mean[k - 2]) / dn).abs())
}

/// Adjacent pairs whose mean drops by more than `z` standard errors of the
/// difference, i.e. decreases not explained by Monte-Carlo noise.
pub fn monotone_violations(curve: &IocCurve, z: f64) -> usize {
    let se2 = |i: usize| curve.std[i].powi(2) / curve.samples[i].max(1) as f64;
    (1..curve.len())
        .filter(|&i| curve.mean[i - 1] - curve.mean[i] > z * (se2(i - 1) + se2(i)).sqrt())
        .count()
}

/// Curve over every `stride`-th frame, pooling all realizations per `n`
/// across frames. Only subset sizes available in every sampled frame are
/// kept. Frame `k` draws from the IOC stream of `(seed, frame_id)`.
pub fn dataset_ioc<T: Real>(
    frames: &[Frame<T>],
    stride: usize,
    sigma: T,
    realizations: usize,
    seed: u64,
) -> Result<IocCurve> {
    if stride == 0 {
        return Err(Error::BadParameter("sampling stride must be at least 1".into()));
    }
    let sampled: Vec<&Frame<T>> = frames.iter().step_by(stride).collect();
    if sampled.is_empty() {
        return Err(Error::ZeroCount);
    }
    let per_frame: Vec<Result<IocScores>> = sampled
        .par_iter()
        .map(|f| {
            let observers: Vec<Vec<GridPoint>> = f
                .fixations
                .by_observer()
                .into_iter()
                .map(|(_, pts)| pts)
                .collect();
            let mut rng = stream(seed, Purpose::Ioc, f.frame_id);
            ioc_scores(&observers, f.measured.shape(), sigma, realizations, &mut rng).map_err(|e| match e {
                Error::TooFewObservers { .. } => Error::InvariantViolation {
                    frame_id: f.frame_id,
                    reason: e.to_string(),
                },
                e => e,
            })
        })
        .collect();
    let per_frame = per_frame.into_iter().collect::<Result<Vec<_>>>()?;
    let len = per_frame.iter().map(|s| s.per_n.len()).min().unwrap_or(0);
    let mut pooled = vec![Vec::new(); len];
    let mut skipped = 0;
    for s in &per_frame {
        skipped += s.skipped;
        for (dst, src) in pooled.iter_mut().zip(&s.per_n) {
            dst.extend_from_slice(src);
        }
    }
    Ok(summarize(&pooled, realizations, skipped))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reconstruct::{sample_fixations, FixationSet};
    use crate::synth::{gmm_truth, GmmComponent, GmmSpec};

    fn shape() -> Shape {
        Shape::new(32, 32).unwrap()
    }

    fn synthetic_observers(count: usize, per_observer: usize, seed: u64) -> Vec<Vec<GridPoint>> {
        let spec = GmmSpec::new(vec![
            GmmComponent::new([10.0, 10.0], 3.0, 1.0),
            GmmComponent::new([22.0, 20.0], 4.0, 1.0),
        ])
        .unwrap();
        let truth = gmm_truth::<f64>(&spec, shape()).unwrap();
        let mut rng = stream(seed, Purpose::Fixations, 0);
        (0..count)
            .map(|_| sample_fixations(&truth, per_observer, &mut rng).unwrap().points)
            .collect()
    }

    #[test]
    fn identical_observers_give_flat_curve() {
        let obs = vec![vec![GridPoint::new(5, 5), GridPoint::new(20, 9)]; 6];
        let mut rng = stream(1, Purpose::Ioc, 0);
        let c = ioc_curve(&obs, shape(), 2.0, 10, &mut rng).unwrap();
        assert_eq!(c.n, vec![1, 2, 3, 4, 5]);
        for m in &c.mean {
            assert!((m - c.mean[0]).abs() < 1e-9);
        }
        assert!(c.std.iter().all(|s| s.abs() < 1e-9));
        assert!(ioc_convergence_gradient(&c).unwrap() < 1e-9);
    }

    #[test]
    fn too_few_observers() {
        let obs = vec![vec![GridPoint::new(1, 1)]; 2];
        let mut rng = stream(1, Purpose::Ioc, 0);
        assert!(matches!(
            ioc_curve(&obs, shape(), 2.0, 5, &mut rng),
            Err(Error::TooFewObservers { needed: 3, got: 2 })
        ));
    }

    #[test]
    fn gradient_of_linear_curve() {
        let c = IocCurve {
            n: vec![1, 2, 3],
            mean: vec![0.0, 0.5, 1.0],
            std: vec![0.0; 3],
            realizations: 20,
            samples: vec![20; 3],
            skipped: 0,
        };
        assert!((ioc_convergence_gradient(&c).unwrap() - 0.5).abs() < 1e-12);
        let short = IocCurve {
            n: vec![1],
            mean: vec![1.0],
            std: vec![0.0],
            realizations: 20,
            samples: vec![20],
            skipped: 0,
        };
        assert!(matches!(ioc_convergence_gradient(&short), Err(Error::TooShort)));
    }

    #[test]
    fn curve_rises_and_flattens() {
        let obs = synthetic_observers(30, 5, 3);
        let mut rng = stream(3, Purpose::Ioc, 0);
        let c = ioc_curve(&obs, shape(), 2.0, 200, &mut rng).unwrap();
        assert!(c.samples.iter().all(|&k| k == 200));
        let violations = monotone_violations(&c, 2.0);
        assert!(violations * 10 < c.len() - 1, "violations {violations}");
        assert!(c.mean[c.len() - 1] > c.mean[0]);
        let first = (c.mean[1] - c.mean[0]).abs();
        assert!(ioc_convergence_gradient(&c).unwrap() < first);
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let obs = synthetic_observers(8, 3, 4);
        let a = ioc_curve(&obs, shape(), 2.0, 20, &mut stream(9, Purpose::Ioc, 0)).unwrap();
        let b = ioc_curve(&obs, shape(), 2.0, 20, &mut stream(9, Purpose::Ioc, 0)).unwrap();
        assert_eq!(a, b);
    }

    fn frame(id: u64, observers: usize) -> Frame<f64> {
        let obs = synthetic_observers(observers, 2, id);
        let mut points = Vec::new();
        let mut ids = Vec::new();
        for (o, pts) in obs.into_iter().enumerate() {
            ids.extend(std::iter::repeat_n(o as u64, pts.len()));
            points.extend(pts);
        }
        let fix = FixationSet::with_observers(points, ids).unwrap();
        Frame::new(id, 0, None, fix, 2.0, shape()).unwrap()
    }

    #[test]
    fn dataset_curve_of_one_frame_is_its_own() {
        let f = frame(5, 6);
        let observers: Vec<Vec<GridPoint>> = f.fixations.by_observer().into_iter().map(|(_, p)| p).collect();
        let own = ioc_curve(&observers, shape(), 2.0, 20, &mut stream(11, Purpose::Ioc, 5)).unwrap();
        let pooled = dataset_ioc(&[f], 1, 2.0, 20, 11).unwrap();
        assert_eq!(own, pooled);
    }

    #[test]
    fn dataset_curve_length_is_min_over_frames() {
        let frames = vec![frame(0, 5), frame(1, 9), frame(2, 4)];
        let c = dataset_ioc(&frames, 1, 2.0, 5, 1).unwrap();
        assert_eq!(c.n, vec![1, 2, 3]);
        let c = dataset_ioc(&frames, 2, 2.0, 5, 1).unwrap();
        assert_eq!(c.n, vec![1, 2, 3]);
        let c = dataset_ioc(&frames[..2], 1, 2.0, 5, 1).unwrap();
        assert_eq!(c.len(), 4);
    }

    #[test]
    fn csv_layout() {
        let c = IocCurve {
            n: vec![1, 2],
            mean: vec![0.5, 0.75],
            std: vec![0.1, 0.2],
            realizations: 20,
            samples: vec![20; 2],
            skipped: 0,
        };
        let mut buf = Vec::new();
        c.write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "n,mean_nss,std_nss,realizations\n1,0.5,0.1,20\n2,0.75,0.2,20\n"
        );
    }
}
