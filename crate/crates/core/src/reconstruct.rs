//! Sampling fixations from a pdf and rebuilding a pdf from fixations.
//!
//! `sr_reconstruct` is the measured-map construction used everywhere: one
//! delta per fixation, Gaussian blur, normalization. The KDE gold standard
//! adds a uniform floor and fits bandwidth and floor weight per frame by
//! leave-one-observer-out likelihood.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{blur_raw, mix_uniform, GridPoint, SaliencyGrid, Shape};
use crate::scalar::Real;

/// Fixations recorded (or simulated) on one frame.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FixationSet {
    pub points: Vec<GridPoint>,
    pub observer_ids: Option<Vec<u64>>,
}

impl FixationSet {
    pub fn new(points: Vec<GridPoint>) -> Self {
        Self {
            points,
            observer_ids: None,
        }
    }

    pub fn with_observers(points: Vec<GridPoint>, observer_ids: Vec<u64>) -> Result<Self> {
        if points.len() != observer_ids.len() {
            return Err(Error::LengthMismatch(points.len(), observer_ids.len()));
        }
        Ok(Self {
            points,
            observer_ids: Some(observer_ids),
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn check_within(&self, shape: Shape) -> Result<()> {
        self.points.iter().try_for_each(|&p| shape.check(p))
    }

    /// Points grouped per observer, ordered by observer id. Without observer
    /// ids every point counts as its own observer.
    pub fn by_observer(&self) -> Vec<(u64, Vec<GridPoint>)> {
        match &self.observer_ids {
            Some(ids) => {
                let mut groups: BTreeMap<u64, Vec<GridPoint>> = BTreeMap::new();
                for (&id, &p) in ids.iter().zip(&self.points) {
                    groups.entry(id).or_default().push(p);
                }
                groups.into_iter().collect()
            }
            None => self
                .points
                .iter()
                .enumerate()
                .map(|(i, &p)| (i as u64, vec![p]))
                .collect(),
        }
    }

    /// Number of distinct observers (points, when ids are absent).
    pub fn observer_count(&self) -> usize {
        match &self.observer_ids {
            Some(_) => self.by_observer().len(),
            None => self.points.len(),
        }
    }
}

/// Inverse-CDF sampler over the flattened cells of a pdf.
#[derive(Debug, Clone)]
pub struct CategoricalSampler {
    shape: Shape,
    cdf: Vec<f64>,
}

impl CategoricalSampler {
    pub fn new<T: Real>(pdf: &SaliencyGrid<T>) -> Self {
        let mut acc = 0.0;
        let cdf = pdf
            .values()
            .iter()
            .map(|v| {
                acc += v.as_f64();
                acc
            })
            .collect();
        Self {
            shape: pdf.shape(),
            cdf,
        }
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> GridPoint {
        let total = *self.cdf.last().expect("grid has at least one cell");
        let u = rng.random::<f64>() * total;
        // First cell whose cumulative mass exceeds u; zero-mass cells are
        // never selected because they do not raise the cumulative sum.
        let mut index = self.cdf.partition_point(|&c| c <= u);
        if index >= self.cdf.len() {
            index = self.cdf.len() - 1;
            while index > 0 && self.cdf[index - 1] >= self.cdf[index] {
                index -= 1;
            }
        }
        self.shape.point(index)
    }

    pub fn draw_n<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<GridPoint> {
        (0..n).map(|_| self.draw(rng)).collect()
    }
}

/// `n` independent draws from the categorical distribution given by `pdf`.
pub fn sample_fixations<T: Real, R: Rng + ?Sized>(
    pdf: &SaliencyGrid<T>,
    n: usize,
    rng: &mut R,
) -> Result<FixationSet> {
    if n == 0 {
        return Err(Error::ZeroCount);
    }
    Ok(FixationSet::new(CategoricalSampler::new(pdf).draw_n(n, rng)))
}

/// Fixation histogram, blurred and normalized: an equal-variance Gaussian
/// mixture centred on the fixated cells.
pub fn sr_reconstruct<T: Real>(fixations: &[GridPoint], sigma: T, shape: Shape) -> Result<SaliencyGrid<T>> {
    if fixations.is_empty() {
        return Err(Error::EmptyFixations);
    }
    if !(sigma >= T::zero()) || !sigma.is_finite() {
        return Err(Error::BadParameter(format!("blur sigma {sigma} must be >= 0")));
    }
    let mut hist = vec![T::zero(); shape.cells()];
    for &p in fixations {
        shape.check(p)?;
        hist[shape.index(p)] += T::one();
    }
    let raw = if sigma > T::zero() {
        blur_raw(shape, &hist, sigma)
    } else {
        hist
    };
    SaliencyGrid::from_raw(shape, raw)
}

/// One bootstrap resample: `n` fixations drawn from `measured`, rebuilt with
/// the same blur. Returns the map together with the fixations it came from.
pub fn resample_with_fixations<T: Real, R: Rng + ?Sized>(
    measured: &SaliencyGrid<T>,
    n: usize,
    sigma: T,
    rng: &mut R,
) -> Result<(SaliencyGrid<T>, FixationSet)> {
    let fixations = sample_fixations(measured, n, rng)?;
    let map = sr_reconstruct(&fixations.points, sigma, measured.shape())?;
    Ok((map, fixations))
}

pub fn resample_once<T: Real, R: Rng + ?Sized>(
    measured: &SaliencyGrid<T>,
    n: usize,
    sigma: T,
    rng: &mut R,
) -> Result<SaliencyGrid<T>> {
    resample_with_fixations(measured, n, sigma, rng).map(|(map, _)| map)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GoldStandardParams<T> {
    pub bandwidth: T,
    pub mix_eps: T,
}

impl<T: Real> GoldStandardParams<T> {
    pub fn new(bandwidth: T, mix_eps: T) -> Result<Self> {
        if !(bandwidth > T::zero()) || !bandwidth.is_finite() {
            return Err(Error::BadParameter(format!(
                "KDE bandwidth {bandwidth} must be > 0"
            )));
        }
        if !(mix_eps >= T::zero() && mix_eps <= T::one()) {
            return Err(Error::BadCoefficient(mix_eps.as_f64()));
        }
        Ok(Self { bandwidth, mix_eps })
    }
}

pub const DEFAULT_BANDWIDTHS: [f64; 5] = [1.0, 2.0, 4.0, 8.0, 16.0];
pub const DEFAULT_MIX_EPS: [f64; 5] = [0.0, 0.01, 0.05, 0.1, 0.2];

/// Density floor used when a held-out fixation lands on a zero-density cell.
pub const LOG_PROB_FLOOR: f64 = 1e-12;

pub fn kde_reconstruct<T: Real>(
    fixations: &[GridPoint],
    params: GoldStandardParams<T>,
    shape: Shape,
) -> Result<SaliencyGrid<T>> {
    let blurred = sr_reconstruct(fixations, params.bandwidth, shape)?;
    mix_uniform(&blurred, params.mix_eps)
}

/// Summed leave-one-observer-out log-probability for every candidate pair,
/// bandwidth-major.
pub fn gold_standard_scores<T: Real>(
    observers: &[Vec<GridPoint>],
    shape: Shape,
    bandwidths: &[T],
    mix_eps: &[T],
) -> Result<Vec<(GoldStandardParams<T>, T)>> {
    if observers.len() < 2 {
        return Err(Error::TooFewObservers {
            needed: 2,
            got: observers.len(),
        });
    }
    if observers.iter().any(|o| o.is_empty()) {
        return Err(Error::EmptyFixations);
    }
    if bandwidths.is_empty() || mix_eps.is_empty() {
        return Err(Error::BadParameter("empty candidate list".into()));
    }
    for o in observers {
        for &p in o {
            shape.check(p)?;
        }
    }
    let floor = T::lit(LOG_PROB_FLOOR);
    let inv_cells = T::one() / T::from_usize_lossy(shape.cells());

    let mut scores = Vec::with_capacity(bandwidths.len() * mix_eps.len());
    for &bw in bandwidths {
        GoldStandardParams::new(bw, T::zero())?;
        let mut totals = vec![T::zero(); mix_eps.len()];
        for held_out in 0..observers.len() {
            let rest: Vec<GridPoint> = observers
                .iter()
                .enumerate()
                .filter(|&(i, _)| i != held_out)
                .flat_map(|(_, o)| o.iter().copied())
                .collect();
            let map = sr_reconstruct(&rest, bw, shape)?;
            for (total, &eps) in totals.iter_mut().zip(mix_eps) {
                for &p in &observers[held_out] {
                    let density = (T::one() - eps) * map.get(p) + eps * inv_cells;
                    *total += density.max(floor).ln();
                }
            }
        }
        for (&eps, total) in mix_eps.iter().zip(totals) {
            scores.push((GoldStandardParams::new(bw, eps)?, total));
        }
    }
    Ok(scores)
}

/// Grid search for the KDE bandwidth and uniform weight that best predict
/// each observer from the others. Ties go to the earlier candidate pair.
pub fn fit_gold_standard<T: Real>(
    observers: &[Vec<GridPoint>],
    shape: Shape,
    bandwidths: &[T],
    mix_eps: &[T],
) -> Result<GoldStandardParams<T>> {
    let scores = gold_standard_scores(observers, shape, bandwidths, mix_eps)?;
    let mut best = scores[0];
    for &(params, score) in &scores[1..] {
        if score > best.1 {
            best = (params, score);
        }
    }
    Ok(best.0)
}

pub const FIXCSV_HEADER: [&str; 4] = ["frame_id", "observer_id", "col", "row"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixationRecord {
    pub frame_id: u64,
    pub observer_id: u64,
    pub col: usize,
    pub row: usize,
}

/// Reads FIXCSV v1 into per-frame fixation sets, validating coordinates
/// against `shape`.
pub fn read_fixcsv<R: Read>(input: R, shape: Shape) -> Result<BTreeMap<u64, FixationSet>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let header = reader.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != FIXCSV_HEADER {
        return Err(Error::Parse(format!(
            "FIXCSV header must be '{}', found '{}'",
            FIXCSV_HEADER.join(","),
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut frames: BTreeMap<u64, FixationSet> = BTreeMap::new();
    for (line, record) in reader.deserialize::<FixationRecord>().enumerate() {
        let rec = record.map_err(|e| Error::Parse(format!("FIXCSV row {}: {e}", line + 2)))?;
        let p = GridPoint::new(rec.col, rec.row);
        shape.check(p)?;
        let set = frames.entry(rec.frame_id).or_insert_with(|| FixationSet {
            points: Vec::new(),
            observer_ids: Some(Vec::new()),
        });
        set.points.push(p);
        if let Some(ids) = set.observer_ids.as_mut() {
            ids.push(rec.observer_id);
        }
    }
    Ok(frames)
}

pub fn write_fixcsv<'a, W: Write>(
    out: W,
    frames: impl IntoIterator<Item = (u64, &'a FixationSet)>,
) -> Result<()> {
    let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    writer.write_record(FIXCSV_HEADER)?;
    for (frame_id, set) in frames {
        for (i, p) in set.points.iter().enumerate() {
            let observer_id = set.observer_ids.as_ref().map_or(i as u64, |ids| ids[i]);
            writer.serialize(FixationRecord {
                frame_id,
                observer_id,
                col: p.col,
                row: p.row,
            })?;
        }
    }
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::gaussian_blur;
    use crate::metrics::kld;
    use crate::rng::{stream, Purpose};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    fn shape(w: usize, h: usize) -> Shape {
        Shape::new(w, h).unwrap()
    }

    #[test]
    fn delta_pdf_samples_the_delta() {
        let pdf = SaliencyGrid::<f64>::delta(shape(5, 4), GridPoint::new(3, 2)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = sample_fixations(&pdf, 5, &mut rng).unwrap();
        assert_eq!(f.points, vec![GridPoint::new(3, 2); 5]);
        assert!(matches!(
            sample_fixations(&pdf, 0, &mut rng),
            Err(Error::ZeroCount)
        ));
    }

    #[test]
    fn zero_mass_cells_never_drawn() {
        let pdf = SaliencyGrid::<f64>::from_raw(shape(6, 1), vec![0.0, 1.0, 0.0, 0.0, 1.0, 0.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let f = sample_fixations(&pdf, 2000, &mut rng).unwrap();
        assert!(f.points.iter().all(|p| p.col == 1 || p.col == 4));
    }

    #[test]
    fn uniform_sampling_passes_chi_square() {
        let pdf = SaliencyGrid::<f64>::uniform(shape(2, 2));
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let n = 100_000;
        let f = sample_fixations(&pdf, n, &mut rng).unwrap();
        let mut counts = [0usize; 4];
        for p in &f.points {
            counts[p.row * 2 + p.col] += 1;
        }
        let expected = n as f64 / 4.0;
        let stat: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        let critical = ChiSquared::new(3.0).unwrap().inverse_cdf(0.999);
        assert!(stat < critical, "chi2 {stat} >= {critical}");
    }

    #[test]
    fn sampling_is_deterministic() {
        let pdf = SaliencyGrid::<f64>::from_raw(shape(3, 3), (1..=9).map(f64::from).collect()).unwrap();
        let a = sample_fixations(&pdf, 50, &mut stream(3, Purpose::Fixations, 0)).unwrap();
        let b = sample_fixations(&pdf, 50, &mut stream(3, Purpose::Fixations, 0)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn single_fixation_matches_blurred_delta() {
        let s = shape(11, 11);
        let c = GridPoint::new(5, 5);
        let m = sr_reconstruct(&[c], 1.0, s).unwrap();
        let d = gaussian_blur(&SaliencyGrid::delta(s, c).unwrap(), 1.0).unwrap();
        let close = |a: &SaliencyGrid<f64>, b: &SaliencyGrid<f64>| {
            a.values()
                .iter()
                .zip(b.values())
                .all(|(x, y)| (x - y).abs() < 1e-15)
        };
        assert!(close(&m, &d));
        assert!(close(&sr_reconstruct(&[c; 10], 1.0, s).unwrap(), &m));
    }

    #[test]
    fn opposite_corners_split_mass_evenly() {
        let s = shape(16, 16);
        let pts = [GridPoint::new(0, 0), GridPoint::new(15, 15)];
        let m = sr_reconstruct(&pts, 1.0f64, s).unwrap();

        // Oracle: evaluate each truncated Gaussian component directly,
        // normalize the mixture, then sum each half.
        let mut mix = vec![0.0f64; 256];
        for p in pts {
            for r in 0..16i64 {
                for c in 0..16i64 {
                    let (dx, dy) = (c - p.col as i64, r - p.row as i64);
                    if dx.abs() <= 3 && dy.abs() <= 3 {
                        mix[(r * 16 + c) as usize] += (-((dx * dx + dy * dy) as f64) / 2.0).exp();
                    }
                }
            }
        }
        let total: f64 = mix.iter().sum();
        let left_oracle: f64 = (0..256).filter(|i| i % 16 < 8).map(|i| mix[i] / total).sum();
        let left: f64 = (0..256).filter(|i| i % 16 < 8).map(|i| m.values()[i]).sum();
        assert!((left - 0.5).abs() < 1e-6);
        assert!((left - left_oracle).abs() < 1e-12);
        for (v, w) in m.values().iter().zip(&mix) {
            assert!((v - w / total).abs() < 1e-12);
        }
    }

    #[test]
    fn reconstruct_errors() {
        assert!(matches!(
            sr_reconstruct::<f64>(&[], 1.0, shape(3, 3)),
            Err(Error::EmptyFixations)
        ));
        assert!(matches!(
            sr_reconstruct::<f64>(&[GridPoint::new(3, 0)], 1.0, shape(3, 3)),
            Err(Error::OutOfBounds { .. })
        ));
    }

    #[test]
    fn resample_of_sharp_map_is_fixed_point() {
        let s = shape(7, 5);
        let measured = sr_reconstruct::<f64>(&[GridPoint::new(2, 3); 4], 0.0, s).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..5 {
            assert_eq!(resample_once(&measured, 4, 0.0, &mut rng).unwrap(), measured);
        }
    }

    #[test]
    fn more_resample_points_track_measured_map_better() {
        let s = shape(32, 32);
        let measured = gaussian_blur(
            &SaliencyGrid::<f64>::delta(s, GridPoint::new(16, 16)).unwrap(),
            4.0,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (mut many, mut few) = (0.0, 0.0);
        for _ in 0..100 {
            many += kld(&measured, &resample_once(&measured, 1000, 2.0, &mut rng).unwrap()).unwrap();
            few += kld(&measured, &resample_once(&measured, 3, 2.0, &mut rng).unwrap()).unwrap();
        }
        assert!(many < few, "{many} vs {few}");
    }

    #[test]
    fn kde_limits_and_arithmetic() {
        let s = shape(8, 8);
        let f = [GridPoint::new(2, 5), GridPoint::new(6, 1)];
        let plain = sr_reconstruct(&f, 2.0f64, s).unwrap();
        let p0 = GoldStandardParams::new(2.0, 0.0).unwrap();
        assert_eq!(kde_reconstruct(&f, p0, s).unwrap(), plain);
        let p1 = GoldStandardParams::new(2.0, 1.0).unwrap();
        assert!(kde_reconstruct(&f, p1, s)
            .unwrap()
            .values()
            .iter()
            .all(|&v: &f64| (v - 1.0 / 64.0).abs() < 1e-15));

        let one = [GridPoint::new(3, 4)];
        let blurred = gaussian_blur(&SaliencyGrid::delta(s, one[0]).unwrap(), 2.0).unwrap();
        let k = kde_reconstruct(&one, GoldStandardParams::new(2.0f64, 0.1).unwrap(), s).unwrap();
        for (a, b) in k.values().iter().zip(blurred.values()) {
            assert!((a - (0.9 * b + 0.1 / 64.0)).abs() < 1e-15);
        }
        assert!(GoldStandardParams::new(0.0, 0.1).is_err());
        assert!(GoldStandardParams::new(1.0, 1.1).is_err());
    }

    #[test]
    fn gold_standard_prefers_peaked_model_for_identical_fixations() {
        let s = shape(16, 16);
        let observers = vec![vec![GridPoint::new(7, 9)]; 6];
        let bws: Vec<f64> = DEFAULT_BANDWIDTHS.to_vec();
        let eps: Vec<f64> = DEFAULT_MIX_EPS.to_vec();
        let p = fit_gold_standard(&observers, s, &bws, &eps).unwrap();
        assert_eq!((p.bandwidth, p.mix_eps), (1.0, 0.0));
    }

    #[test]
    fn gold_standard_tie_goes_to_earlier_pair() {
        // Each observer's fixation lies beyond the other's kernel support, so
        // every eps = 0 candidate scores exactly the floor.
        let s = shape(64, 64);
        let observers = vec![vec![GridPoint::new(0, 0)], vec![GridPoint::new(63, 63)]];
        let p = fit_gold_standard(&observers, s, &[2.0f64, 1.0], &[0.0]).unwrap();
        assert_eq!(p.bandwidth, 2.0);
        let p = fit_gold_standard(&observers, s, &[1.0f64, 2.0], &[0.0]).unwrap();
        assert_eq!(p.bandwidth, 1.0);
        let scores = gold_standard_scores(&observers, s, &[1.0f64, 2.0], &[0.0]).unwrap();
        assert_eq!(scores[0].1, 2.0 * LOG_PROB_FLOOR.ln());
        assert_eq!(scores[0].1, scores[1].1);
    }

    #[test]
    fn gold_standard_needs_two_observers() {
        let s = shape(8, 8);
        assert!(matches!(
            fit_gold_standard(&[vec![GridPoint::new(1, 1)]], s, &[1.0f64], &[0.0]),
            Err(Error::TooFewObservers { .. })
        ));
    }

    #[test]
    fn fixcsv_round_trip() {
        let s = shape(10, 10);
        let a = FixationSet::with_observers(vec![GridPoint::new(1, 2), GridPoint::new(3, 4)], vec![0, 1])
            .unwrap();
        let b = FixationSet::with_observers(vec![GridPoint::new(9, 9)], vec![5]).unwrap();
        let mut buf = Vec::new();
        write_fixcsv(&mut buf, [(3, &a), (7, &b)]).unwrap();
        assert!(buf.starts_with(b"frame_id,observer_id,col,row\n"));
        let back = read_fixcsv(&buf[..], s).unwrap();
        assert_eq!(back[&3], a);
        assert_eq!(back[&7], b);

        assert!(read_fixcsv(&b"frame_id,observer_id,col,row\n0,0,10,0\n"[..], s).is_err());
        assert!(read_fixcsv(&b"frame,observer,x,y\n0,0,1,0\n"[..], s).is_err());
        assert!(read_fixcsv(&b"frame_id,observer_id,col,row\n0,0,1.5,0\n"[..], s).is_err());
    }

    #[test]
    fn observers_grouped_by_id() {
        let f = FixationSet::with_observers(
            vec![GridPoint::new(0, 0), GridPoint::new(1, 0), GridPoint::new(2, 0)],
            vec![4, 2, 4],
        )
        .unwrap();
        let g = f.by_observer();
        assert_eq!(g[0], (2, vec![GridPoint::new(1, 0)]));
        assert_eq!(g[1], (4, vec![GridPoint::new(0, 0), GridPoint::new(2, 0)]));
        assert_eq!(f.observer_count(), 2);
    }
}
