use std::fs::File;
use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context, Result};
use nat_core::frames::{
    assemble, attach_stats, load_dataset, read_meta, save_dataset, synthesize, DatasetMeta, DatasetParts,
    SynthParams,
};
use nat_core::grid::{load_sgrid, save_sgrid};
use nat_core::ioc::{dataset_ioc, ioc_convergence_gradient};
use nat_core::metrics::{auc_judd, cc, kld, nss, sim};
use nat_core::noise_stats::write_nstats;
use nat_core::reconstruct::{fit_gold_standard, kde_reconstruct, read_fixcsv};
use nat_core::rng::{stream, Purpose};
use nat_core::synth::{random_gmm_suite, toy_study};
use nat_core::trainer::{overfit_report, run_comparison, train, TrainRun};
use nat_core::{DataFrame, ExperimentConfig, Grid, LossMode, Shape};
use serde::Serialize;

use crate::config::{
    self, CompareConfig, InputConfig, IocConfig, MetricsConfig, ReconstructConfig, StatsConfig, SynthConfig,
    ToyConfig, TrainConfig,
};
use crate::output::OutDir;
use crate::{usage, Command, Common, ExperimentArgs, InputArgs};

const DEFAULT_SIGMA: f64 = 2.0;

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth {
            common,
            frames,
            videos,
            observers,
            grid,
            sigma,
        } => {
            let mut cfg: SynthConfig = base(&common)?;
            set(&mut cfg.frames, frames.map(|v| v as usize));
            if let Some(v) = videos {
                cfg.videos = Some(v as usize);
            }
            set(&mut cfg.observers, observers.map(|v| v as usize));
            set(&mut cfg.grid, grid);
            set(&mut cfg.sigma, sigma);
            set(&mut cfg.seed, common.seed);
            synth(&common.out, &cfg)
        }
        Command::Reconstruct {
            common,
            input,
            gold_standard,
        } => {
            let mut cfg: ReconstructConfig = base(&common)?;
            merge_input(&mut cfg.data, input);
            cfg.gold_standard |= gold_standard;
            reconstruct(&common.out, &cfg)
        }
        Command::Stats {
            common,
            input,
            discrepancy,
            realizations,
        } => {
            let mut cfg: StatsConfig = base(&common)?;
            merge_input(&mut cfg.data, input);
            set(&mut cfg.discrepancy, discrepancy);
            set(&mut cfg.realizations, realizations.map(|v| v as usize));
            set(&mut cfg.seed, common.seed);
            stats(&common.out, &cfg)
        }
        Command::Train {
            common,
            input,
            experiment,
        } => {
            let mut cfg: TrainConfig = base(&common)?;
            if input.is_some() {
                cfg.input = input;
            }
            if let Some(m) = experiment.mode {
                cfg.modes = m;
            }
            let grid_flag = experiment.grid;
            let sigma_flag = experiment.sigma;
            merge_experiment(&mut cfg.experiment, experiment, &common);
            train_cmd(&common.out, cfg, grid_flag, sigma_flag)
        }
        Command::Compare {
            common,
            n_values,
            v_values,
            experiment,
        } => {
            let mut cfg: CompareConfig = base(&common)?;
            if !n_values.is_empty() {
                cfg.n_values = n_values.into_iter().map(|v| v as usize).collect();
            }
            if !v_values.is_empty() {
                cfg.v_values = v_values.into_iter().map(|v| v as usize).collect();
            }
            if let Some(m) = experiment.mode {
                cfg.modes = m;
            }
            merge_experiment(&mut cfg.experiment, experiment, &common);
            compare(&common.out, &cfg)
        }
        Command::Toy {
            common,
            n_values,
            realizations,
        } => {
            let mut cfg: ToyConfig = base(&common)?;
            if !n_values.is_empty() {
                cfg.n_values = n_values.into_iter().map(|v| v as usize).collect();
            }
            set(&mut cfg.realizations, realizations.map(|v| v as usize));
            set(&mut cfg.seed, common.seed);
            toy(&common.out, &cfg)
        }
        Command::Ioc {
            common,
            input,
            realizations,
            stride,
        } => {
            let mut cfg: IocConfig = base(&common)?;
            merge_input(&mut cfg.data, input);
            set(&mut cfg.realizations, realizations.map(|v| v as usize));
            set(&mut cfg.stride, stride.map(|v| v as usize));
            set(&mut cfg.seed, common.seed);
            ioc(&common.out, &cfg)
        }
        Command::Metrics {
            common,
            predicted,
            reference,
            fixations,
            frame,
        } => {
            let mut cfg: MetricsConfig = base(&common)?;
            if predicted.is_some() {
                cfg.predicted = predicted;
            }
            if reference.is_some() {
                cfg.reference = reference;
            }
            if fixations.is_some() {
                cfg.fixations = fixations;
            }
            if frame.is_some() {
                cfg.frame = frame;
            }
            metrics(&common.out, &cfg)
        }
    }
}

fn base<C: Default + serde::de::DeserializeOwned>(common: &Common) -> Result<C> {
    match &common.config {
        Some(path) => config::load(path).map_err(|e| usage(format!("--config: {e:#}"))),
        None => Ok(C::default()),
    }
}

fn set<V>(slot: &mut V, flag: Option<V>) {
    if let Some(v) = flag {
        *slot = v;
    }
}

fn merge_input(cfg: &mut InputConfig, args: InputArgs) {
    if args.input.is_some() {
        cfg.input = args.input;
    }
    if args.grid.is_some() {
        cfg.grid = args.grid;
    }
    if args.sigma.is_some() {
        cfg.sigma = args.sigma;
    }
}

fn merge_experiment(cfg: &mut ExperimentConfig, args: ExperimentArgs, common: &Common) {
    set(&mut cfg.frames, args.frames.map(|v| v as usize));
    set(&mut cfg.videos, args.videos.map(|v| v as usize));
    set(&mut cfg.observers, args.observers.map(|v| v as usize));
    set(&mut cfg.shape, args.grid);
    set(&mut cfg.sigma, args.sigma);
    set(&mut cfg.discrepancy, args.discrepancy);
    set(&mut cfg.realizations, args.realizations.map(|v| v as usize));
    set(&mut cfg.iterations, args.iterations.map(|v| v as usize));
    set(&mut cfg.optimizer.learning_rate, args.learning_rate);
    set(&mut cfg.record_every, args.record_every.map(|v| v as usize));
    set(&mut cfg.seed, common.seed);
}

fn check_sigma(sigma: f64) -> Result<()> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(usage(format!(
            "--sigma must be a non-negative number, got {sigma}"
        )));
    }
    Ok(())
}

/// Frames from a dataset directory or a bare FIXCSV file.
fn load_frames(data: &InputConfig) -> Result<(Vec<DataFrame>, DatasetMeta)> {
    let path = data
        .input
        .as_deref()
        .ok_or_else(|| usage("--input is required"))?;
    if let Some(s) = data.sigma {
        check_sigma(s)?;
    }
    if path.is_dir() {
        let stored = read_meta(path)?;
        let shape = data
            .grid
            .or(stored.map(|m| m.shape))
            .ok_or_else(|| usage(format!("{} has no dataset.json; pass --grid", path.display())))?;
        let sigma = data.sigma.or(stored.map(|m| m.sigma)).unwrap_or(DEFAULT_SIGMA);
        let (frames, meta) = load_dataset(path, Some(DatasetMeta { shape, sigma }))
            .with_context(|| format!("loading dataset {}", path.display()))?;
        if frames.is_empty() {
            bail!("{} holds no fixations", path.display());
        }
        return Ok((frames, meta));
    }
    let sibling = match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => read_meta(dir)?,
        _ => None,
    };
    let shape = data
        .grid
        .or(sibling.map(|m| m.shape))
        .ok_or_else(|| usage("--grid is required for a fixation file without dataset.json"))?;
    let sigma = data.sigma.or(sibling.map(|m| m.sigma)).unwrap_or(DEFAULT_SIGMA);
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let fixations = read_fixcsv(file, shape).with_context(|| format!("reading {}", path.display()))?;
    if fixations.is_empty() {
        bail!("{} holds no fixations", path.display());
    }
    let parts = DatasetParts {
        fixations,
        ..Default::default()
    };
    let frames = assemble(parts, sigma, shape)?;
    Ok((frames, DatasetMeta { shape, sigma }))
}

fn synth(out: &Path, cfg: &SynthConfig) -> Result<()> {
    check_sigma(cfg.sigma)?;
    if cfg.frames == 0 {
        return Err(usage("--frames must be at least 1"));
    }
    if cfg.observers == 0 {
        return Err(usage("--observers must be at least 1"));
    }
    let videos = cfg.videos.unwrap_or(cfg.frames);
    if videos == 0 {
        return Err(usage("--videos must be at least 1"));
    }
    let params = SynthParams {
        frames: cfg.frames,
        videos,
        observers: cfg.observers,
        shape: cfg.grid,
        sigma: cfg.sigma,
        suite: cfg.suite,
        perturb_sd: cfg.perturb_sd,
    };
    let frames: Vec<DataFrame> = synthesize(&params, cfg.seed)?;
    let mut dir = OutDir::create(out)?;
    let meta = DatasetMeta {
        shape: cfg.grid,
        sigma: cfg.sigma,
    };
    for path in save_dataset(dir.root(), &frames, &meta)? {
        dir.record(&path);
    }
    dir.finish("synth", cfg.seed, cfg)?;
    Ok(())
}

#[derive(Serialize)]
struct GoldRow {
    frame_id: u64,
    bandwidth: f64,
    mix_eps: f64,
}

fn reconstruct(out: &Path, cfg: &ReconstructConfig) -> Result<()> {
    let (frames, meta) = load_frames(&cfg.data)?;
    let mut dir = OutDir::create(out)?;
    for f in &frames {
        let path = dir.path(&format!("measured/frame_{}.sgrid", f.frame_id))?;
        save_sgrid(&f.measured, &path)?;
    }
    if cfg.gold_standard {
        let mut rows = Vec::new();
        for f in &frames {
            let observers: Vec<_> = f.fixations.by_observer().into_iter().map(|(_, p)| p).collect();
            let params = fit_gold_standard(&observers, meta.shape, &cfg.bandwidths, &cfg.mix_eps)
                .with_context(|| format!("frame {}: gold-standard fit", f.frame_id))?;
            let map = kde_reconstruct(&f.fixations.points, params, meta.shape)?;
            save_sgrid(&map, dir.path(&format!("gold/frame_{}.sgrid", f.frame_id))?)?;
            rows.push(GoldRow {
                frame_id: f.frame_id,
                bandwidth: params.bandwidth,
                mix_eps: params.mix_eps,
            });
        }
        dir.write_with("gold_params.csv", |w| {
            let mut csv = csv::Writer::from_writer(w);
            for r in &rows {
                csv.serialize(r)?;
            }
            csv.flush()?;
            Ok(())
        })?;
    }
    let seed = 0;
    dir.finish("reconstruct", seed, cfg)?;
    Ok(())
}

fn stats(out: &Path, cfg: &StatsConfig) -> Result<()> {
    let (mut frames, meta) = load_frames(&cfg.data)?;
    attach_stats(
        &mut frames,
        meta.sigma,
        &cfg.discrepancy,
        cfg.realizations,
        cfg.seed,
    )?;
    let mut dir = OutDir::create(out)?;
    dir.write_with("stats.csv", |w| {
        write_nstats(
            w,
            frames
                .iter()
                .filter_map(|f| f.stats.as_ref().map(|s| (f.frame_id, s))),
        )?;
        Ok(())
    })?;
    dir.finish("stats", cfg.seed, cfg)?;
    Ok(())
}

#[derive(Serialize)]
struct HistoryRow {
    iteration: usize,
    mode: LossMode,
    train_loss: f64,
    truth_kld: Option<f64>,
    measured_kld: f64,
}

fn train_cmd(
    out: &Path,
    mut cfg: TrainConfig,
    grid_flag: Option<Shape>,
    sigma_flag: Option<f64>,
) -> Result<()> {
    let exp = &mut cfg.experiment;
    let mut frames: Vec<DataFrame> = match &cfg.input {
        Some(path) => {
            let (frames, meta) = load_frames(&InputConfig {
                input: Some(path.clone()),
                grid: grid_flag,
                sigma: sigma_flag,
            })?;
            exp.shape = meta.shape;
            exp.sigma = meta.sigma;
            exp.frames = frames.len();
            frames
        }
        None => {
            exp.validate().map_err(|e| usage(e.to_string()))?;
            synthesize(&exp.synth_params(), exp.seed)?
        }
    };
    exp.validate().map_err(|e| usage(e.to_string()))?;
    let stale = frames
        .iter()
        .any(|f| f.stats.as_ref().is_none_or(|s| s.discrepancy != exp.discrepancy));
    if stale {
        attach_stats(
            &mut frames,
            exp.sigma,
            &exp.discrepancy,
            exp.realizations,
            exp.seed,
        )?;
    }

    let modes = cfg.modes.modes();
    let mut runs: Vec<(LossMode, TrainRun<f64>)> = Vec::new();
    for &mode in &modes {
        let run = train(&frames, &ExperimentConfig { mode, ..exp.clone() })
            .with_context(|| format!("{mode} training"))?;
        runs.push((mode, run));
    }

    let mut dir = OutDir::create(out)?;
    dir.write_with("history.csv", |w| {
        let mut csv = csv::Writer::from_writer(w);
        for (mode, run) in &runs {
            for h in &run.history {
                csv.serialize(HistoryRow {
                    iteration: h.iteration,
                    mode: *mode,
                    train_loss: h.train_loss,
                    truth_kld: h.truth_kld,
                    measured_kld: h.measured_kld,
                })?;
            }
        }
        csv.flush()?;
        Ok(())
    })?;
    for (mode, run) in &runs {
        for (f, p) in frames.iter().zip(&run.predictors) {
            let path = dir.path(&format!("predictions/{mode}/frame_{}.sgrid", f.frame_id))?;
            save_sgrid(&p.map(), &path)?;
        }
    }
    let has_truth = frames.iter().all(|f| f.truth.is_some());
    if let ([(LossMode::Tt, tt), (LossMode::Nat, nat)], true) = (runs.as_slice(), has_truth) {
        let report = overfit_report(tt, nat)?;
        dir.write_with("curves.csv", |w| Ok(report.write_csv(w)?))?;
        dir.json(
            "overfitting.json",
            &serde_json::json!({
                "tt": report.tt,
                "nat": report.nat,
                "tt_overfits": report.tt_overfits,
                "nat_stable": report.nat_stable,
            }),
        )?;
    }
    let seed = cfg.experiment.seed;
    dir.finish("train", seed, &cfg)?;
    Ok(())
}

fn compare(out: &Path, cfg: &CompareConfig) -> Result<()> {
    let exp = &cfg.experiment;
    exp.validate().map_err(|e| usage(e.to_string()))?;
    if cfg.n_values.contains(&0) || cfg.v_values.contains(&0) {
        return Err(usage("--n and --v values must be at least 1"));
    }
    let max_v = cfg.v_values.iter().copied().max().unwrap_or(1);
    let suite = random_gmm_suite(
        max_v,
        &exp.suite,
        exp.shape,
        &mut stream(exp.seed, Purpose::Truth, 0),
    )?;
    let report = run_comparison::<f64>(&suite, &cfg.n_values, &cfg.v_values, exp, &cfg.modes.modes())?;
    let mut dir = OutDir::create(out)?;
    dir.write_with("comparison.csv", |w| Ok(report.write_csv(w)?))?;
    dir.json("comparison.json", &report)?;
    dir.finish("compare", exp.seed, cfg)?;
    Ok(())
}

fn toy(out: &Path, cfg: &ToyConfig) -> Result<()> {
    if cfg.n_values.contains(&0) {
        return Err(usage("--n values must be at least 1"));
    }
    if cfg.realizations < 2 {
        return Err(usage("--realizations must be at least 2"));
    }
    let report = toy_study(&cfg.n_values, cfg.realizations, cfg.seed)?;
    let mut dir = OutDir::create(out)?;
    dir.write_with("toy.csv", |w| {
        let mut csv = csv::Writer::from_writer(w);
        for r in &report.rows {
            csv.serialize(r)?;
        }
        csv.flush()?;
        Ok(())
    })?;
    dir.write_with("toy_profiles.csv", |w| {
        writeln!(w, "truth,n,cell,mean,std")?;
        for p in &report.profiles {
            for (cell, (m, s)) in p.mean.values().iter().zip(&p.std).enumerate() {
                writeln!(w, "{},{},{cell},{m},{s}", p.truth, p.n)?;
            }
        }
        Ok(())
    })?;
    dir.finish("toy", cfg.seed, cfg)?;
    Ok(())
}

fn ioc(out: &Path, cfg: &IocConfig) -> Result<()> {
    if cfg.realizations == 0 {
        return Err(usage("--realizations must be at least 1"));
    }
    if cfg.stride == 0 {
        return Err(usage("--stride must be at least 1"));
    }
    let (frames, meta) = load_frames(&cfg.data)?;
    let curve = dataset_ioc(&frames, cfg.stride, meta.sigma, cfg.realizations, cfg.seed)?;
    let mut dir = OutDir::create(out)?;
    dir.write_with("ioc.csv", |w| Ok(curve.write_csv(w)?))?;
    dir.json(
        "ioc_summary.json",
        &serde_json::json!({
            "frames": frames.len().div_ceil(cfg.stride),
            "realizations": curve.realizations,
            "skipped": curve.skipped,
            "convergence_gradient": ioc_convergence_gradient(&curve).ok(),
        }),
    )?;
    dir.finish("ioc", cfg.seed, cfg)?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct PairScores {
    kld: f64,
    cc: Option<f64>,
    sim: f64,
    nss: Option<f64>,
    auc: Option<f64>,
}

fn metrics(out: &Path, cfg: &MetricsConfig) -> Result<()> {
    let pred_path = cfg
        .predicted
        .as_deref()
        .ok_or_else(|| usage("--predicted is required"))?;
    let ref_path = cfg
        .reference
        .as_deref()
        .ok_or_else(|| usage("--reference is required"))?;
    let predicted: Grid =
        load_sgrid(pred_path).with_context(|| format!("reading {}", pred_path.display()))?;
    let reference: Grid = load_sgrid(ref_path).with_context(|| format!("reading {}", ref_path.display()))?;
    let fixations = match &cfg.fixations {
        Some(path) => {
            let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
            let sets = read_fixcsv(file, predicted.shape())
                .with_context(|| format!("reading {}", path.display()))?;
            let set = match cfg.frame {
                Some(id) => sets
                    .get(&id)
                    .with_context(|| format!("frame {id} not in {}", path.display()))?,
                None if sets.len() == 1 => sets.values().next().unwrap(),
                None => {
                    return Err(usage(format!(
                        "{} holds several frames; pass --frame",
                        path.display()
                    )))
                }
            };
            Some(set.points.clone())
        }
        None => None,
    };
    let scores = PairScores {
        kld: kld(&reference, &predicted)?,
        cc: cc(&predicted, &reference).ok(),
        sim: sim(&predicted, &reference)?,
        nss: fixations.as_deref().map(|f| nss(&predicted, f)).transpose()?,
        auc: fixations
            .as_deref()
            .map(|f| auc_judd(&predicted, f))
            .transpose()?,
    };
    let mut dir = OutDir::create(out)?;
    dir.json("metrics.json", &scores)?;
    println!("{}", serde_json::to_string(&scores)?);
    dir.finish("metrics", 0, cfg)?;
    Ok(())
}
