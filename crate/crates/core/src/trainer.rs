//! Desk-scale training harness: RMSprop over per-frame logits and the
//! TT-versus-NAT experiments built on it.

use std::fmt;
use std::str::FromStr;

use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frames::{attach_stats, frames_from_specs, Frame, SynthParams};
use crate::grid::{SaliencyGrid, Shape};
use crate::metrics::{kld, Discrepancy, MetricSet};
use crate::nat::{frame_objective, softmax, PredictedMap};
use crate::noise_stats::DEFAULT_REALIZATIONS;
use crate::reconstruct::sample_fixations;
use crate::rng::{stream, Purpose};
use crate::scalar::Real;
use crate::synth::{GmmSpec, SuiteParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RmsPropParams {
    pub learning_rate: f64,
    pub decay_rho: f64,
    pub epsilon: f64,
}

impl Default for RmsPropParams {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            decay_rho: 0.9,
            epsilon: 1e-8,
        }
    }
}

impl RmsPropParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::BadParameter(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        if !(self.decay_rho > 0.0 && self.decay_rho < 1.0) {
            return Err(Error::BadParameter(format!(
                "decay rho {} must lie in (0, 1)",
                self.decay_rho
            )));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::BadParameter(format!(
                "epsilon {} must be positive",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// RMSprop with its per-parameter running mean square.
#[derive(Debug, Clone, PartialEq)]
pub struct RmsProp<T> {
    params: RmsPropParams,
    accumulator: Vec<T>,
}

impl<T: Real> RmsProp<T> {
    pub fn new(params: RmsPropParams, len: usize) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            params,
            accumulator: vec![T::zero(); len],
        })
    }

    pub fn params(&self) -> &RmsPropParams {
        &self.params
    }

    pub fn accumulator(&self) -> &[T] {
        &self.accumulator
    }

    /// `acc = rho acc + (1 - rho) g^2; theta -= lr g / (sqrt(acc) + eps)`.
    pub fn step(&mut self, theta: &mut [T], grads: &[T]) -> Result<()> {
        if theta.len() != grads.len() {
            return Err(Error::LengthMismatch(theta.len(), grads.len()));
        }
        if theta.len() != self.accumulator.len() {
            return Err(Error::LengthMismatch(theta.len(), self.accumulator.len()));
        }
        let rho = T::lit(self.params.decay_rho);
        let keep = T::one() - rho;
        let lr = T::lit(self.params.learning_rate);
        let eps = T::lit(self.params.epsilon);
        for ((t, &g), acc) in theta.iter_mut().zip(grads).zip(&mut self.accumulator) {
            *acc = rho * *acc + keep * g * g;
            *t -= lr * g / (acc.sqrt() + eps);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossMode {
    Tt,
    Nat,
}

impl fmt::Display for LossMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossMode::Tt => "tt",
            LossMode::Nat => "nat",
        })
    }
}

impl FromStr for LossMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "tt" => Ok(LossMode::Tt),
            "nat" => Ok(LossMode::Nat),
            other => Err(Error::Parse(format!("unknown loss mode '{other}'"))),
        }
    }
}

/// Everything that determines a training experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub frames: usize,
    /// Number of emulated videos (frame groups).
    pub videos: usize,
    /// Fixations per frame.
    pub observers: usize,
    pub shape: Shape,
    pub sigma: f64,
    pub discrepancy: Discrepancy,
    pub mode: LossMode,
    pub realizations: usize,
    pub optimizer: RmsPropParams,
    pub iterations: usize,
    pub record_every: usize,
    /// Truth-sampled fixations per frame for NSS and AUC evaluation.
    pub eval_fixations: usize,
    pub perturb_sd: f64,
    pub suite: SuiteParams,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            frames: 20,
            videos: 5,
            observers: 3,
            shape: Shape {
                width: 64,
                height: 64,
            },
            sigma: 2.0,
            discrepancy: Discrepancy::Kld,
            mode: LossMode::Nat,
            realizations: DEFAULT_REALIZATIONS,
            optimizer: RmsPropParams::default(),
            iterations: 10_000,
            record_every: 50,
            eval_fixations: 500,
            perturb_sd: 1.0,
            suite: SuiteParams::default(),
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.observers < 1 {
            return Err(Error::BadParameter("observers must be at least 1".into()));
        }
        if self.videos < 1 {
            return Err(Error::BadParameter("videos must be at least 1".into()));
        }
        if self.frames < 1 {
            return Err(Error::BadParameter("frames must be at least 1".into()));
        }
        if self.realizations < 2 {
            return Err(Error::TooFewRealizations(self.realizations));
        }
        if self.record_every < 1 {
            return Err(Error::BadParameter("record interval must be at least 1".into()));
        }
        if !(self.sigma >= 0.0) {
            return Err(Error::BadParameter(format!(
                "blur sigma {} is negative",
                self.sigma
            )));
        }
        self.optimizer.validate()
    }

    pub fn synth_params(&self) -> SynthParams {
        SynthParams {
            frames: self.frames,
            videos: self.videos,
            observers: self.observers,
            shape: self.shape,
            sigma: self.sigma,
            suite: self.suite,
            perturb_sd: self.perturb_sd,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoryPoint {
    pub iteration: usize,
    pub train_loss: f64,
    /// Mean `KLD(truth || prediction)`; absent without synthetic truth.
    pub truth_kld: Option<f64>,
    /// Mean `KLD(measured || prediction)`.
    pub measured_kld: f64,
}

#[derive(Debug, Clone)]
pub struct TrainRun<T> {
    pub config: ExperimentConfig,
    pub history: Vec<HistoryPoint>,
    pub predictors: Vec<PredictedMap<T>>,
}

impl<T: Real> TrainRun<T> {
    pub fn final_point(&self) -> &HistoryPoint {
        self.history.last().expect("history always holds iteration 0")
    }
}

/// Starting logits for one frame: zeros, plus a tiny seeded jitter when the
/// discrepancy involves CC or NSS, which are undefined on a constant map.
pub fn initial_logits<T: Real>(shape: Shape, d: &Discrepancy, frame_id: u64, seed: u64) -> Vec<T> {
    let (_, cc_w, nss_w) = d.weights();
    if cc_w == 0.0 && nss_w == 0.0 {
        return vec![T::zero(); shape.cells()];
    }
    let jitter = Normal::new(0.0, 1e-3).expect("valid normal");
    let mut rng = stream(seed, Purpose::Init, frame_id);
    (0..shape.cells())
        .map(|_| T::lit(jitter.sample(&mut rng)))
        .collect()
}

fn check_frames<T: Real>(frames: &[Frame<T>], config: &ExperimentConfig) -> Result<Shape> {
    let first = frames.first().ok_or(Error::ZeroCount)?;
    let shape = first.measured.shape();
    for f in frames {
        if f.measured.shape() != shape {
            return Err(Error::ShapeMismatch {
                left: shape.to_string(),
                right: f.measured.shape().to_string(),
            });
        }
        if config.mode == LossMode::Nat {
            let st = f.stats.as_ref().ok_or(Error::MissingStats(f.frame_id))?;
            crate::nat::check_stats(f.frame_id, st, &config.discrepancy)?;
        }
        if config.discrepancy.needs_fixations() && f.fixations.is_empty() {
            return Err(Error::MissingFixations(config.discrepancy.to_string()));
        }
    }
    Ok(shape)
}

/// Loss at the given logits, plus mean measured-side and truth-side KLD
/// when `record` is set. Fills `grad` with the full-batch gradient.
fn evaluate<T: Real>(
    frames: &[Frame<T>],
    config: &ExperimentConfig,
    theta: &[T],
    grad: &mut [T],
    cells: usize,
    record: bool,
) -> Result<(f64, f64, Option<f64>)> {
    let per_frame: Vec<Result<(T, T, Option<T>)>> = grad
        .par_chunks_mut(cells)
        .zip(theta.par_chunks(cells))
        .zip(frames.par_iter())
        .map(|((g, z), f)| {
            let stats = match config.mode {
                LossMode::Tt => None,
                LossMode::Nat => f.stats.as_ref(),
            };
            let obj = frame_objective(
                z,
                &f.measured,
                Some(&f.fixations.points),
                stats,
                &config.discrepancy,
            )?;
            g.copy_from_slice(&obj.gradient);
            if !record {
                return Ok((obj.loss, T::zero(), None));
            }
            let p = SaliencyGrid::from_normalized(f.measured.shape(), softmax(z));
            let measured_kld = kld(&f.measured, &p)?;
            let truth_kld = f.truth.as_ref().map(|t| kld(t, &p)).transpose()?;
            Ok((obj.loss, measured_kld, truth_kld))
        })
        .collect();

    let mut loss = 0.0;
    let mut measured = 0.0;
    let mut truth = 0.0;
    let mut truth_frames = 0usize;
    for r in per_frame {
        let (l, m, t) = r?;
        loss += l.as_f64();
        measured += m.as_f64();
        if let Some(t) = t {
            truth += t.as_f64();
            truth_frames += 1;
        }
    }
    let n = frames.len() as f64;
    let truth = (truth_frames > 0).then(|| truth / truth_frames as f64);
    Ok((loss, measured / n, truth))
}

/// Optimizes every frame's logits jointly on the summed frame loss.
///
/// History is recorded at iteration 0, every `record_every` steps and after
/// the last step; each point describes the parameters before that step.
pub fn train<T: Real>(frames: &[Frame<T>], config: &ExperimentConfig) -> Result<TrainRun<T>> {
    config.validate()?;
    let shape = check_frames(frames, config)?;
    let cells = shape.cells();
    let mut theta: Vec<T> = frames
        .iter()
        .flat_map(|f| initial_logits::<T>(shape, &config.discrepancy, f.frame_id, config.seed))
        .collect();
    let mut grad = vec![T::zero(); theta.len()];
    let mut opt = RmsProp::new(config.optimizer, theta.len())?;
    let mut history = Vec::with_capacity(config.iterations / config.record_every + 2);

    for it in 0..=config.iterations {
        let record = it % config.record_every == 0 || it == config.iterations;
        let (loss, measured_kld, truth_kld) = evaluate(frames, config, &theta, &mut grad, cells, record)?;
        if record {
            history.push(HistoryPoint {
                iteration: it,
                train_loss: loss,
                truth_kld,
                measured_kld,
            });
        }
        if it == config.iterations {
            break;
        }
        opt.step(&mut theta, &grad)?;
    }

    let predictors = theta
        .chunks(cells)
        .map(|z| PredictedMap::new(shape, z.to_vec()))
        .collect::<Result<Vec<_>>>()?;
    Ok(TrainRun {
        config: config.clone(),
        history,
        predictors,
    })
}

/// Final scores of one frame under one loss mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeOutcome {
    pub mode: LossMode,
    /// Truth-side scores: KLD, CC, SIM against the truth map; NSS, AUC
    /// against truth-sampled fixations.
    pub metrics: MetricSet,
    /// Discrepancy between the prediction and the measured map.
    pub measured_d: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameOutcome {
    pub frame_id: u64,
    pub group_id: u64,
    pub stats_mean: f64,
    pub stats_std: f64,
    pub modes: Vec<ModeOutcome>,
}

impl FrameOutcome {
    pub fn mode(&self, mode: LossMode) -> Option<&ModeOutcome> {
        self.modes.iter().find(|m| m.mode == mode)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub v: usize,
    pub n: usize,
    pub mode: LossMode,
    pub kld: f64,
    pub cc: f64,
    pub sim: f64,
    pub nss: f64,
    pub auc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonCase {
    pub v: usize,
    pub n: usize,
    pub frames: Vec<FrameOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub rows: Vec<ComparisonRow>,
    pub cases: Vec<ComparisonCase>,
}

impl ComparisonReport {
    pub fn case(&self, v: usize, n: usize) -> Option<&ComparisonCase> {
        self.cases.iter().find(|c| c.v == v && c.n == n)
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Truth-sampled evaluation fixations for one frame.
fn eval_points<T: Real>(frame: &Frame<T>, count: usize, seed: u64) -> Result<Vec<crate::grid::GridPoint>> {
    let truth = frame.truth.as_ref().ok_or(Error::MissingTruth(frame.frame_id))?;
    let mut rng = stream(seed, Purpose::Evaluation, frame.frame_id);
    Ok(sample_fixations(truth, count, &mut rng)?.points)
}

/// Synthetic frames for one `(V, N)` cell of a comparison, with stats.
pub fn comparison_frames<T: Real>(suite: &[GmmSpec], config: &ExperimentConfig) -> Result<Vec<Frame<T>>> {
    config.validate()?;
    let mut frames = frames_from_specs(suite, &config.synth_params(), config.seed)?;
    attach_stats(
        &mut frames,
        T::lit(config.sigma),
        &config.discrepancy,
        config.realizations,
        config.seed,
    )?;
    Ok(frames)
}

/// Trains each requested mode on the same frames and scores the final
/// predictions against the truth.
pub fn compare_modes<T: Real>(
    frames: &[Frame<T>],
    template: &ExperimentConfig,
    modes: &[LossMode],
) -> Result<Vec<FrameOutcome>> {
    let evals = frames
        .iter()
        .map(|f| eval_points(f, template.eval_fixations, template.seed))
        .collect::<Result<Vec<_>>>()?;
    let mut outcomes: Vec<FrameOutcome> = frames
        .iter()
        .map(|f| {
            let st = f.stats.as_ref();
            FrameOutcome {
                frame_id: f.frame_id,
                group_id: f.group_id,
                stats_mean: st.map_or(f64::NAN, |s| s.mean.as_f64()),
                stats_std: st.map_or(f64::NAN, |s| s.std_dev().as_f64()),
                modes: Vec::with_capacity(modes.len()),
            }
        })
        .collect();

    for &mode in modes {
        let config = ExperimentConfig {
            mode,
            ..template.clone()
        };
        let run = train(frames, &config)?;
        let scored: Vec<Result<ModeOutcome>> = frames
            .par_iter()
            .zip(run.predictors.par_iter())
            .zip(evals.par_iter())
            .map(|((f, pred), eval)| {
                let p = pred.map();
                let truth = f.truth.as_ref().ok_or(Error::MissingTruth(f.frame_id))?;
                let measured_d = crate::metrics::eval_discrepancy(
                    &template.discrepancy,
                    &p,
                    &f.measured,
                    Some(&f.fixations.points),
                )?;
                Ok(ModeOutcome {
                    mode,
                    metrics: MetricSet::evaluate(&p, truth, eval)?,
                    measured_d: measured_d.as_f64(),
                })
            })
            .collect();
        for (out, s) in outcomes.iter_mut().zip(scored) {
            out.modes.push(s?);
        }
    }
    Ok(outcomes)
}

/// For every `(V, N)` pair: generate frames from `suite`, estimate stats,
/// train each mode from identical initialization and report truth-side
/// metrics averaged over frames.
pub fn run_comparison<T: Real>(
    suite: &[GmmSpec],
    n_values: &[usize],
    v_values: &[usize],
    template: &ExperimentConfig,
    modes: &[LossMode],
) -> Result<ComparisonReport> {
    if modes.is_empty() || n_values.is_empty() || v_values.is_empty() {
        return Err(Error::ZeroCount);
    }
    let mut rows = Vec::new();
    let mut cases = Vec::new();
    for &v in v_values {
        for &n in n_values {
            let config = ExperimentConfig {
                videos: v,
                observers: n,
                ..template.clone()
            };
            let frames = comparison_frames::<T>(suite, &config)?;
            let outcomes = compare_modes(&frames, &config, modes)?;
            for &mode in modes {
                let sets: Vec<MetricSet> = outcomes
                    .iter()
                    .filter_map(|o| o.mode(mode).map(|m| m.metrics))
                    .collect();
                let mean = MetricSet::mean(&sets);
                rows.push(ComparisonRow {
                    v,
                    n,
                    mode,
                    kld: mean.kld,
                    cc: mean.cc,
                    sim: mean.sim,
                    nss: mean.nss,
                    auc: mean.auc,
                });
            }
            cases.push(ComparisonCase {
                v,
                n,
                frames: outcomes,
            });
        }
    }
    Ok(ComparisonReport { rows, cases })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub iteration: usize,
    pub mode: LossMode,
    pub train_loss: f64,
    pub truth_kld: f64,
}

/// Summary of one mode's truth-side curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveSummary {
    pub min_iteration: usize,
    pub min_value: f64,
    pub final_value: f64,
}

impl CurveSummary {
    fn from_rows(rows: &[CurveRow]) -> Option<Self> {
        let last = rows.last()?;
        let best = rows
            .iter()
            .fold(rows[0], |b, r| if r.truth_kld < b.truth_kld { *r } else { b });
        Some(Self {
            min_iteration: best.iteration,
            min_value: best.truth_kld,
            final_value: last.truth_kld,
        })
    }

    /// Final value within 5% of the minimum.
    pub fn is_stable(&self) -> bool {
        self.final_value <= 1.05 * self.min_value
    }

    /// Minimum reached before 80% of `iterations` and the final value at
    /// least 5% above it.
    pub fn is_overfitting(&self, iterations: usize) -> bool {
        (self.min_iteration as f64) < 0.8 * iterations as f64 && self.final_value >= 1.05 * self.min_value
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverfitReport {
    pub curves: Vec<CurveRow>,
    pub tt: CurveSummary,
    pub nat: CurveSummary,
    pub tt_overfits: bool,
    pub nat_stable: bool,
}

impl OverfitReport {
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.curves {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Flags TT overfitting and NAT stability from the truth-side KLD curves of
/// two finished runs.
pub fn overfit_report<T: Real>(tt: &TrainRun<T>, nat: &TrainRun<T>) -> Result<OverfitReport> {
    let mut curves = Vec::new();
    let mut summaries = Vec::new();
    for (mode, run) in [(LossMode::Tt, tt), (LossMode::Nat, nat)] {
        let rows = run
            .history
            .iter()
            .map(|h| {
                Ok(CurveRow {
                    iteration: h.iteration,
                    mode,
                    train_loss: h.train_loss,
                    truth_kld: h.truth_kld.ok_or_else(|| {
                        Error::BadParameter("overfitting curves need synthetic truth".into())
                    })?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        summaries.push(CurveSummary::from_rows(&rows).ok_or(Error::TooShort)?);
        curves.extend(rows);
    }
    let (tt_sum, nat_sum) = (summaries[0], summaries[1]);
    Ok(OverfitReport {
        curves,
        tt: tt_sum,
        nat: nat_sum,
        tt_overfits: tt_sum.is_overfitting(tt.config.iterations),
        nat_stable: nat_sum.is_stable(),
    })
}

/// Runs TT and NAT on the same frames and flags TT overfitting and NAT
/// stability from their truth-side KLD curves.
pub fn overfitting_study<T: Real>(frames: &[Frame<T>], config: &ExperimentConfig) -> Result<OverfitReport> {
    if let Some(f) = frames.iter().find(|f| f.truth.is_none()) {
        return Err(Error::MissingTruth(f.frame_id));
    }
    let run = |mode| {
        train(
            frames,
            &ExperimentConfig {
                mode,
                ..config.clone()
            },
        )
    };
    overfit_report(&run(LossMode::Tt)?, &run(LossMode::Nat)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridPoint;
    use crate::noise_stats::NoiseStats;
    use crate::reconstruct::FixationSet;

    #[test]
    fn zero_gradient_only_decays_accumulator() {
        let mut opt = RmsProp::<f64>::new(RmsPropParams::default(), 2).unwrap();
        opt.accumulator = vec![1.0, 4.0];
        let mut theta = vec![0.5, -2.0];
        opt.step(&mut theta, &[0.0, 0.0]).unwrap();
        assert_eq!(theta, vec![0.5, -2.0]);
        assert_eq!(opt.accumulator(), &[0.9, 3.6]);
    }

    #[test]
    fn first_step_arithmetic() {
        let p = RmsPropParams::default();
        let mut opt = RmsProp::<f64>::new(p, 3).unwrap();
        let g = [2.0, -0.5, 1e4];
        let mut theta = vec![0.0; 3];
        opt.step(&mut theta, &g).unwrap();
        for (t, g) in theta.iter().zip(g) {
            let expected = -p.learning_rate * g / ((0.1 * g * g).sqrt() + p.epsilon);
            assert!((t - expected).abs() < 1e-15);
        }
        let asymptote = p.learning_rate / 0.1f64.sqrt();
        assert!((theta[2] + asymptote).abs() < 1e-9);
    }

    #[test]
    fn converges_on_a_quadratic() {
        let mut opt = RmsProp::<f64>::new(RmsPropParams::default(), 1).unwrap();
        let mut theta = vec![0.0];
        for _ in 0..5000 {
            let g = [2.0 * (theta[0] - 3.0)];
            opt.step(&mut theta, &g).unwrap();
        }
        assert!((theta[0] - 3.0).abs() < 0.01, "theta = {}", theta[0]);
    }

    #[test]
    fn step_rejects_length_mismatch() {
        let mut opt = RmsProp::<f64>::new(RmsPropParams::default(), 2).unwrap();
        let mut theta = vec![0.0; 2];
        assert!(matches!(
            opt.step(&mut theta, &[1.0]),
            Err(Error::LengthMismatch(2, 1))
        ));
    }

    #[test]
    fn bad_optimizer_params() {
        for p in [
            RmsPropParams {
                learning_rate: 0.0,
                ..Default::default()
            },
            RmsPropParams {
                decay_rho: 1.0,
                ..Default::default()
            },
            RmsPropParams {
                epsilon: -1.0,
                ..Default::default()
            },
        ] {
            assert!(RmsProp::<f64>::new(p, 1).is_err());
        }
    }

    fn small_frame(id: u64, stats: Option<NoiseStats<f64>>) -> Frame<f64> {
        let shape = Shape::new(12, 12).unwrap();
        let fix = FixationSet::new(vec![
            GridPoint::new(3, 4),
            GridPoint::new(8, 8),
            GridPoint::new(4, 4),
        ]);
        let truth = crate::synth::gmm_truth(
            &GmmSpec::new(vec![crate::synth::GmmComponent::new([4.0, 4.0], 2.5, 1.0)]).unwrap(),
            shape,
        )
        .unwrap();
        let mut f = Frame::new(id, 0, Some(truth), fix, 1.5, shape).unwrap();
        f.stats = stats;
        f
    }

    fn config(mode: LossMode, iterations: usize) -> ExperimentConfig {
        ExperimentConfig {
            mode,
            iterations,
            shape: Shape::new(12, 12).unwrap(),
            ..Default::default()
        }
    }

    #[test]
    fn nat_requires_stats() {
        let frames = vec![small_frame(7, None)];
        let err = train(&frames, &config(LossMode::Nat, 10)).unwrap_err();
        assert!(matches!(err, Error::MissingStats(7)));
    }

    #[test]
    fn history_schedule() {
        let frames = vec![small_frame(0, None)];
        let run = train(&frames, &config(LossMode::Tt, 120)).unwrap();
        let its: Vec<usize> = run.history.iter().map(|h| h.iteration).collect();
        assert_eq!(its, vec![0, 50, 100, 120]);
        assert!(run.history.iter().all(|h| h.truth_kld.is_some()));
        let uniform = (144f64).ln();
        assert!((run.history[0].measured_kld - run.history[0].train_loss).abs() < 1e-12);
        assert!(run.history[0].train_loss < uniform);
    }

    #[test]
    fn tt_single_frame_fits_measured_map() {
        let frames = vec![small_frame(0, None)];
        let run = train(&frames, &config(LossMode::Tt, 10_000)).unwrap();
        assert!(run.final_point().measured_kld < 1e-3, "{:?}", run.final_point());
        for w in run.history.windows(2) {
            assert!(w[1].train_loss <= w[0].train_loss + 1e-6);
        }
    }

    #[test]
    fn nat_single_frame_stops_at_noise_floor() {
        let stats = NoiseStats {
            mean: 0.2,
            variance: 0.0025,
            realizations: 10,
            observer_count: 3,
            discrepancy: Discrepancy::Kld,
        };
        let frames = vec![small_frame(0, Some(stats))];
        let run = train(&frames, &config(LossMode::Nat, 10_000)).unwrap();
        let d = run.final_point().measured_kld;
        assert!((d - 0.2).abs() < 2.0 * 0.05, "d = {d}");
    }

    #[test]
    fn training_is_deterministic() {
        let frames = vec![small_frame(0, None), small_frame(1, None)];
        let cfg = ExperimentConfig {
            discrepancy: Discrepancy::KLD_CC_NSS,
            ..config(LossMode::Tt, 60)
        };
        let a = train(&frames, &cfg).unwrap();
        let b = train(&frames, &cfg).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.predictors, b.predictors);
    }

    #[test]
    fn cc_init_is_jittered_and_kld_init_is_zero() {
        let shape = Shape::new(4, 4).unwrap();
        let z: Vec<f64> = initial_logits(shape, &Discrepancy::Kld, 0, 1);
        assert!(z.iter().all(|&v| v == 0.0));
        let z: Vec<f64> = initial_logits(shape, &Discrepancy::NegCc, 0, 1);
        assert!(z.iter().any(|&v| v != 0.0));
        assert!(z.iter().all(|v| v.abs() < 0.01));
    }

    #[test]
    fn curve_flags() {
        let rows = |vals: &[f64]| -> Vec<CurveRow> {
            vals.iter()
                .enumerate()
                .map(|(i, &v)| CurveRow {
                    iteration: i * 50,
                    mode: LossMode::Tt,
                    train_loss: 0.0,
                    truth_kld: v,
                })
                .collect()
        };
        let s = CurveSummary::from_rows(&rows(&[1.0, 0.5, 0.6, 0.7, 0.8])).unwrap();
        assert!(s.is_overfitting(200));
        assert!(!s.is_stable());
        let s = CurveSummary::from_rows(&rows(&[1.0, 0.6, 0.55, 0.5, 0.51])).unwrap();
        assert!(!s.is_overfitting(200));
        assert!(s.is_stable());
    }

    #[test]
    fn loss_mode_parsing() {
        assert_eq!("TT".parse::<LossMode>().unwrap(), LossMode::Tt);
        assert_eq!("nat".parse::<LossMode>().unwrap(), LossMode::Nat);
        assert!("both".parse::<LossMode>().is_err());
    }

    #[test]
    fn config_json_round_trip() {
        let cfg = ExperimentConfig {
            discrepancy: Discrepancy::KLD_CC_NSS,
            seed: 99,
            ..Default::default()
        };
        let text = serde_json::to_string(&cfg).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        let partial: ExperimentConfig = serde_json::from_str(r#"{"observers": 30}"#).unwrap();
        assert_eq!(partial.observers, 30);
        assert_eq!(partial.iterations, 10_000);
    }
}
