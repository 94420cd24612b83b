//! Per-frame dataset records and their on-disk layout.
//!
//! A dataset directory holds:
//!
//! * `fixations.csv` (FIXCSV v1), the ground facts;
//! * `groups.csv` (`frame_id,group_id`), optional;
//! * `truth/frame_<id>.sgrid`, optional synthetic ground truth;
//! * `stats.csv` (NSTATS v1), optional cached noise statistics;
//! * `dataset.json`, the grid shape and blur used for measured maps.
//!
//! Measured maps are never stored; they are rebuilt from fixations on load.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{load_sgrid, save_sgrid, SaliencyGrid, Shape};
use crate::metrics::Discrepancy;
use crate::noise_stats::{estimate_many, read_nstats, write_nstats, NoiseStats};
use crate::reconstruct::{read_fixcsv, sample_fixations, sr_reconstruct, write_fixcsv, FixationSet};
use crate::rng::{stream, Purpose};
use crate::scalar::Real;
use crate::synth::{gmm_truth, random_gmm_suite, GmmSpec, SuiteParams};

/// Per-cell tolerance when checking a supplied measured map.
pub const MEASURED_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct Frame<T> {
    pub frame_id: u64,
    /// Emulated video the frame belongs to.
    pub group_id: u64,
    pub truth: Option<SaliencyGrid<T>>,
    pub fixations: FixationSet,
    pub measured: SaliencyGrid<T>,
    pub stats: Option<NoiseStats<T>>,
}

impl<T: Real> Frame<T> {
    pub fn new(
        frame_id: u64,
        group_id: u64,
        truth: Option<SaliencyGrid<T>>,
        fixations: FixationSet,
        sigma: T,
        shape: Shape,
    ) -> Result<Self> {
        let measured = sr_reconstruct(&fixations.points, sigma, shape)?;
        if let Some(t) = &truth {
            t.ensure_same_shape(&measured)?;
        }
        Ok(Self {
            frame_id,
            group_id,
            truth,
            fixations,
            measured,
            stats: None,
        })
    }

    /// Number of points a bootstrap resample draws for this frame.
    pub fn sample_size(&self) -> usize {
        self.fixations.len()
    }
}

/// Shape and blur shared by every frame of a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub shape: Shape,
    pub sigma: f64,
}

/// Inputs to [`assemble`], each keyed by frame id.
#[derive(Debug, Clone, Default)]
pub struct DatasetParts<T> {
    pub fixations: BTreeMap<u64, FixationSet>,
    pub truths: Option<BTreeMap<u64, SaliencyGrid<T>>>,
    pub groups: Option<BTreeMap<u64, u64>>,
    pub stats: Option<BTreeMap<u64, NoiseStats<T>>>,
    /// Previously computed measured maps to verify against re-derivation.
    pub measured: Option<BTreeMap<u64, SaliencyGrid<T>>>,
}

fn unknown_ids<V>(kind: &str, map: &BTreeMap<u64, V>, known: &BTreeMap<u64, FixationSet>) -> Result<()> {
    if let Some(id) = map.keys().find(|id| !known.contains_key(id)) {
        return Err(Error::IdMismatch(format!(
            "{kind} references frame {id}, which has no fixations"
        )));
    }
    Ok(())
}

/// Binds fixations, truths, groups and cached stats into frames sorted by id.
pub fn assemble<T: Real>(parts: DatasetParts<T>, sigma: T, shape: Shape) -> Result<Vec<Frame<T>>> {
    let DatasetParts {
        fixations,
        mut truths,
        groups,
        mut stats,
        measured,
    } = parts;
    if let Some(t) = &truths {
        unknown_ids("truth", t, &fixations)?;
    }
    if let Some(g) = &groups {
        unknown_ids("groups", g, &fixations)?;
    }
    if let Some(s) = &stats {
        unknown_ids("stats", s, &fixations)?;
    }
    if let Some(m) = &measured {
        unknown_ids("measured", m, &fixations)?;
    }

    let mut frames = Vec::with_capacity(fixations.len());
    for (frame_id, fix) in fixations {
        if fix.is_empty() {
            return Err(Error::InvariantViolation {
                frame_id,
                reason: "frame has no fixations".into(),
            });
        }
        let truth = truths.as_mut().and_then(|t| t.remove(&frame_id));
        let group_id = groups
            .as_ref()
            .and_then(|g| g.get(&frame_id).copied())
            .unwrap_or(frame_id);
        let mut frame = Frame::new(frame_id, group_id, truth, fix, sigma, shape)?;

        if let Some(cached) = measured.as_ref().and_then(|m| m.get(&frame_id)) {
            let tol = T::lit(MEASURED_TOLERANCE);
            let same_shape = cached.shape() == frame.measured.shape();
            let close = same_shape
                && cached
                    .values()
                    .iter()
                    .zip(frame.measured.values())
                    .all(|(a, b)| (*a - *b).abs() <= tol);
            if !close {
                return Err(Error::InvariantViolation {
                    frame_id,
                    reason: "cached measured map differs from re-derivation".into(),
                });
            }
        }
        if let Some(st) = stats.as_mut().and_then(|s| s.remove(&frame_id)) {
            if st.observer_count != frame.sample_size() {
                return Err(Error::InvariantViolation {
                    frame_id,
                    reason: format!(
                        "stats computed for n = {}, frame has {} fixations",
                        st.observer_count,
                        frame.sample_size()
                    ),
                });
            }
            frame.stats = Some(st);
        }
        frames.push(frame);
    }
    Ok(frames)
}

/// Computes and attaches bootstrap statistics to every frame.
pub fn attach_stats<T: Real>(
    frames: &mut [Frame<T>],
    sigma: T,
    d: &Discrepancy,
    realizations: usize,
    seed: u64,
) -> Result<()> {
    let inputs: Vec<(u64, &SaliencyGrid<T>, usize)> = frames
        .iter()
        .map(|f| (f.frame_id, &f.measured, f.sample_size()))
        .collect();
    let stats = estimate_many(&inputs, sigma, d, realizations, seed)?;
    for (f, s) in frames.iter_mut().zip(stats) {
        f.stats = Some(s);
    }
    Ok(())
}

/// Parameters for generating a synthetic dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub frames: usize,
    pub videos: usize,
    pub observers: usize,
    pub shape: Shape,
    pub sigma: f64,
    pub suite: SuiteParams,
    /// Standard deviation of the per-frame shift of mixture centres.
    pub perturb_sd: f64,
}

/// Frames with truths drawn from `specs`: frame `i` belongs to group
/// `i * videos / frames` and uses `specs[group % specs.len()]` with its
/// centres jittered per frame.
pub fn frames_from_specs<T: Real>(
    specs: &[GmmSpec],
    params: &SynthParams,
    seed: u64,
) -> Result<Vec<Frame<T>>> {
    if specs.is_empty() {
        return Err(Error::EmptySpec);
    }
    if params.videos == 0 || params.observers == 0 {
        return Err(Error::ZeroCount);
    }
    (0..params.frames)
        .map(|i| {
            let frame_id = i as u64;
            let group = (i * params.videos / params.frames.max(1)) as u64;
            let base = &specs[group as usize % specs.len()];
            let spec = base.perturbed(
                params.perturb_sd,
                params.shape,
                &mut stream(seed, Purpose::Truth, frame_id + 1),
            );
            let truth: SaliencyGrid<T> = gmm_truth(&spec, params.shape)?;
            let mut rng = stream(seed, Purpose::Fixations, frame_id);
            let points = sample_fixations(&truth, params.observers, &mut rng)?.points;
            let ids = (0..params.observers as u64).collect();
            let fix = FixationSet::with_observers(points, ids)?;
            Frame::new(
                frame_id,
                group,
                Some(truth),
                fix,
                T::lit(params.sigma),
                params.shape,
            )
        })
        .collect()
}

/// A fresh synthetic dataset: one random mixture per video.
pub fn synthesize<T: Real>(params: &SynthParams, seed: u64) -> Result<Vec<Frame<T>>> {
    let specs = random_gmm_suite(
        params.videos,
        &params.suite,
        params.shape,
        &mut stream(seed, Purpose::Truth, 0),
    )?;
    frames_from_specs(&specs, params, seed)
}

pub const FIXATIONS_FILE: &str = "fixations.csv";
pub const GROUPS_FILE: &str = "groups.csv";
pub const STATS_FILE: &str = "stats.csv";
pub const META_FILE: &str = "dataset.json";
pub const TRUTH_DIR: &str = "truth";

pub fn truth_file_name(frame_id: u64) -> String {
    format!("frame_{frame_id}.sgrid")
}

/// Writes frames in the dataset layout. Returns the paths written.
pub fn save_dataset<T: Real>(
    dir: &Path,
    frames: &[Frame<T>],
    meta: &DatasetMeta,
) -> Result<Vec<std::path::PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();

    let path = dir.join(FIXATIONS_FILE);
    write_fixcsv(
        fs::File::create(&path)?,
        frames.iter().map(|f| (f.frame_id, &f.fixations)),
    )?;
    written.push(path);

    let path = dir.join(GROUPS_FILE);
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["frame_id", "group_id"])?;
    for f in frames {
        w.write_record([f.frame_id.to_string(), f.group_id.to_string()])?;
    }
    w.flush()?;
    written.push(path);

    if frames.iter().any(|f| f.truth.is_some()) {
        fs::create_dir_all(dir.join(TRUTH_DIR))?;
        for f in frames {
            if let Some(t) = &f.truth {
                let path = dir.join(TRUTH_DIR).join(truth_file_name(f.frame_id));
                save_sgrid(t, &path)?;
                written.push(path);
            }
        }
    }

    if frames.iter().any(|f| f.stats.is_some()) {
        let path = dir.join(STATS_FILE);
        write_nstats(
            fs::File::create(&path)?,
            frames
                .iter()
                .filter_map(|f| f.stats.as_ref().map(|s| (f.frame_id, s))),
        )?;
        written.push(path);
    }

    let path = dir.join(META_FILE);
    fs::write(
        &path,
        serde_json::to_string_pretty(meta).expect("meta serializes") + "\n",
    )?;
    written.push(path);
    Ok(written)
}

pub fn read_groups(path: &Path) -> Result<BTreeMap<u64, u64>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let mut out = BTreeMap::new();
    for rec in reader.deserialize::<(u64, u64)>() {
        let (frame, group) = rec.map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        out.insert(frame, group);
    }
    Ok(out)
}

pub fn read_meta(dir: &Path) -> Result<Option<DatasetMeta>> {
    let path = dir.join(META_FILE);
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&path)?;
    serde_json::from_str(&text)
        .map(Some)
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

/// Loads a dataset directory written by [`save_dataset`]. `meta` overrides
/// the stored `dataset.json` when given.
pub fn load_dataset<T: Real>(dir: &Path, meta: Option<DatasetMeta>) -> Result<(Vec<Frame<T>>, DatasetMeta)> {
    let meta = match meta {
        Some(m) => m,
        None => read_meta(dir)?.ok_or_else(|| {
            Error::Parse(format!(
                "{} has no {META_FILE}; grid shape unknown",
                dir.display()
            ))
        })?,
    };
    let fixations = read_fixcsv(fs::File::open(dir.join(FIXATIONS_FILE))?, meta.shape)?;
    let groups = dir
        .join(GROUPS_FILE)
        .exists()
        .then(|| read_groups(&dir.join(GROUPS_FILE)))
        .transpose()?;
    let truth_dir = dir.join(TRUTH_DIR);
    let truths = if truth_dir.is_dir() {
        let mut map = BTreeMap::new();
        for &id in fixations.keys() {
            let path = truth_dir.join(truth_file_name(id));
            if path.exists() {
                map.insert(id, load_sgrid(&path)?);
            }
        }
        Some(map)
    } else {
        None
    };
    let stats = dir
        .join(STATS_FILE)
        .exists()
        .then(|| read_nstats(fs::File::open(dir.join(STATS_FILE))?))
        .transpose()?;
    let parts = DatasetParts {
        fixations,
        truths,
        groups,
        stats,
        measured: None,
    };
    Ok((assemble(parts, T::lit(meta.sigma), meta.shape)?, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridPoint;

    fn fixations(ids: &[u64]) -> BTreeMap<u64, FixationSet> {
        ids.iter()
            .map(|&id| {
                let pts = vec![GridPoint::new(id as usize % 8, 1), GridPoint::new(3, 4)];
                (id, FixationSet::with_observers(pts, vec![0, 1]).unwrap())
            })
            .collect()
    }

    fn shape() -> Shape {
        Shape::new(8, 8).unwrap()
    }

    #[test]
    fn assemble_without_truth_or_stats() {
        let parts = DatasetParts::<f64> {
            fixations: fixations(&[5, 1, 3]),
            ..Default::default()
        };
        let frames = assemble(parts, 1.0, shape()).unwrap();
        assert_eq!(
            frames.iter().map(|f| f.frame_id).collect::<Vec<_>>(),
            vec![1, 3, 5]
        );
        assert!(frames.iter().all(|f| f.truth.is_none() && f.stats.is_none()));
        assert_eq!(
            frames[0].measured,
            sr_reconstruct(&frames[0].fixations.points, 1.0, shape()).unwrap()
        );
    }

    #[test]
    fn stats_for_unknown_frame_is_rejected() {
        let st = NoiseStats {
            mean: 0.1,
            variance: 0.01,
            realizations: 10,
            observer_count: 2,
            discrepancy: Discrepancy::Kld,
        };
        let parts = DatasetParts::<f64> {
            fixations: fixations(&[0, 1]),
            stats: Some([(9, st)].into_iter().collect()),
            ..Default::default()
        };
        assert!(matches!(assemble(parts, 1.0, shape()), Err(Error::IdMismatch(_))));
    }

    #[test]
    fn stale_measured_cache_is_rejected() {
        let fix = fixations(&[0]);
        let wrong = sr_reconstruct::<f64>(&fix[&0].points, 2.0, shape()).unwrap();
        let parts = DatasetParts::<f64> {
            fixations: fix.clone(),
            measured: Some([(0, wrong)].into_iter().collect()),
            ..Default::default()
        };
        assert!(matches!(
            assemble(parts, 1.0, shape()),
            Err(Error::InvariantViolation { frame_id: 0, .. })
        ));
        let right = sr_reconstruct::<f64>(&fix[&0].points, 1.0, shape()).unwrap();
        let parts = DatasetParts::<f64> {
            fixations: fix,
            measured: Some([(0, right)].into_iter().collect()),
            ..Default::default()
        };
        assert!(assemble(parts, 1.0, shape()).is_ok());
    }

    #[test]
    fn stats_sample_size_must_match() {
        let st = NoiseStats {
            mean: 0.1,
            variance: 0.01,
            realizations: 10,
            observer_count: 3,
            discrepancy: Discrepancy::Kld,
        };
        let parts = DatasetParts::<f64> {
            fixations: fixations(&[0]),
            stats: Some([(0, st)].into_iter().collect()),
            ..Default::default()
        };
        assert!(matches!(
            assemble(parts, 1.0, shape()),
            Err(Error::InvariantViolation { .. })
        ));
    }

    #[test]
    fn dataset_round_trip() {
        let params = SynthParams {
            frames: 6,
            videos: 2,
            observers: 4,
            shape: Shape::new(16, 12).unwrap(),
            sigma: 1.5,
            suite: SuiteParams::default(),
            perturb_sd: 1.0,
        };
        let mut frames: Vec<Frame<f64>> = synthesize(&params, 42).unwrap();
        attach_stats(&mut frames, 1.5, &Discrepancy::Kld, 10, 42).unwrap();
        assert_eq!(
            frames.iter().map(|f| f.group_id).collect::<Vec<_>>(),
            vec![0, 0, 0, 1, 1, 1]
        );

        let dir = tempfile::tempdir().unwrap();
        let meta = DatasetMeta {
            shape: params.shape,
            sigma: params.sigma,
        };
        save_dataset(dir.path(), &frames, &meta).unwrap();
        let (back, back_meta) = load_dataset::<f64>(dir.path(), None).unwrap();
        assert_eq!(back_meta, meta);
        assert_eq!(back, frames);

        let again = tempfile::tempdir().unwrap();
        save_dataset(again.path(), &back, &meta).unwrap();
        let (twice, _) = load_dataset::<f64>(again.path(), None).unwrap();
        assert_eq!(twice, back);
    }

    #[test]
    fn synthesis_is_deterministic() {
        let params = SynthParams {
            frames: 4,
            videos: 4,
            observers: 3,
            shape: Shape::new(20, 20).unwrap(),
            sigma: 2.0,
            suite: SuiteParams::default(),
            perturb_sd: 0.5,
        };
        let a: Vec<Frame<f64>> = synthesize(&params, 1).unwrap();
        let b: Vec<Frame<f64>> = synthesize(&params, 1).unwrap();
        let c: Vec<Frame<f64>> = synthesize(&params, 2).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
