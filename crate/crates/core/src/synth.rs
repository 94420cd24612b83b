//! Synthetic ground-truth saliency fields.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{SaliencyGrid, Shape};
use crate::metrics::Discrepancy;
use crate::noise_stats::{discrepancy_samples, mean_and_variance};
use crate::reconstruct::{sample_fixations, sr_reconstruct};
use crate::rng::{stream, Purpose};
use crate::scalar::Real;

/// One isotropic Gaussian component. `center` is `[col, row]` in cell units;
/// the row is ignored on 1D grids.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GmmComponent {
    pub center: [f64; 2],
    pub sigma: f64,
    pub weight: f64,
}

impl GmmComponent {
    pub fn new(center: [f64; 2], sigma: f64, weight: f64) -> Self {
        Self {
            center,
            sigma,
            weight,
        }
    }
}

/// Gaussian mixture with weights normalized to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmSpec {
    components: Vec<GmmComponent>,
}

impl GmmSpec {
    pub fn new(mut components: Vec<GmmComponent>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::EmptySpec);
        }
        for c in &components {
            if !(c.sigma > 0.0) || !(c.weight > 0.0) || !c.sigma.is_finite() || !c.weight.is_finite() {
                return Err(Error::BadParameter(format!(
                    "mixture component needs sigma > 0 and weight > 0, got {c:?}"
                )));
            }
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        for c in &mut components {
            c.weight /= total;
        }
        Ok(Self { components })
    }

    pub fn components(&self) -> &[GmmComponent] {
        &self.components
    }

    /// Copy with every center shifted by independent normal noise of
    /// standard deviation `sd`, clamped to the grid.
    pub fn perturbed<R: Rng + ?Sized>(&self, sd: f64, shape: Shape, rng: &mut R) -> Self {
        if sd <= 0.0 {
            return self.clone();
        }
        let noise = Normal::new(0.0, sd).expect("positive perturbation sd");
        let components = self
            .components
            .iter()
            .map(|c| {
                let col = (c.center[0] + noise.sample(rng)).clamp(0.0, (shape.width - 1) as f64);
                let row = if shape.height > 1 {
                    (c.center[1] + noise.sample(rng)).clamp(0.0, (shape.height - 1) as f64)
                } else {
                    c.center[1]
                };
                GmmComponent {
                    center: [col, row],
                    ..*c
                }
            })
            .collect();
        Self { components }
    }
}

/// Mixture density evaluated at cell centres, normalized over the grid.
pub fn gmm_truth<T: Real>(spec: &GmmSpec, shape: Shape) -> Result<SaliencyGrid<T>> {
    if spec.components.is_empty() {
        return Err(Error::EmptySpec);
    }
    let one_d = shape.height == 1;
    for c in &spec.components {
        let col_ok = c.center[0] >= 0.0 && c.center[0] <= (shape.width - 1) as f64;
        let row_ok = one_d || (c.center[1] >= 0.0 && c.center[1] <= (shape.height - 1) as f64);
        if !col_ok || !row_ok {
            return Err(Error::BadParameter(format!(
                "component center {:?} outside {shape} grid",
                c.center
            )));
        }
    }
    let two_pi = T::lit(2.0 * std::f64::consts::PI);
    let mut values = vec![T::zero(); shape.cells()];
    for (i, v) in values.iter_mut().enumerate() {
        let p = shape.point(i);
        let (x, y) = (T::from_usize_lossy(p.col), T::from_usize_lossy(p.row));
        for c in &spec.components {
            let sigma = T::lit(c.sigma);
            let var = sigma * sigma;
            let dx = x - T::lit(c.center[0]);
            let (d2, norm) = if one_d {
                (dx * dx, two_pi.sqrt() * sigma)
            } else {
                let dy = y - T::lit(c.center[1]);
                (dx * dx + dy * dy, two_pi * var)
            };
            *v += T::lit(c.weight) * (-d2 / (T::lit(2.0) * var)).exp() / norm;
        }
    }
    SaliencyGrid::from_raw(shape, values)
}

/// Ranges for random truth suites.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuiteParams {
    pub min_components: usize,
    pub max_components: usize,
    pub min_sigma: f64,
    pub max_sigma: f64,
}

impl Default for SuiteParams {
    fn default() -> Self {
        Self {
            min_components: 1,
            max_components: 3,
            min_sigma: 3.0,
            max_sigma: 6.0,
        }
    }
}

const PLACEMENT_ATTEMPTS: usize = 100;

/// Random mixtures with centres kept at least `4 sigma` apart when a
/// placement within 100 attempts allows it.
pub fn random_gmm_suite<R: Rng + ?Sized>(
    count: usize,
    params: &SuiteParams,
    shape: Shape,
    rng: &mut R,
) -> Result<Vec<GmmSpec>> {
    let SuiteParams {
        min_components,
        max_components,
        min_sigma,
        max_sigma,
    } = *params;
    if min_components < 1 || max_components > 8 || min_components > max_components {
        return Err(Error::BadParameter(format!(
            "component range {min_components}..={max_components} must lie in 1..=8"
        )));
    }
    if !(min_sigma > 0.0) || min_sigma > max_sigma {
        return Err(Error::BadParameter(format!(
            "sigma range {min_sigma}..={max_sigma} invalid"
        )));
    }
    let one_d = shape.height == 1;
    let mut suite = Vec::with_capacity(count);
    for _ in 0..count {
        let k = rng.random_range(min_components..=max_components);
        let mut comps: Vec<GmmComponent> = Vec::with_capacity(k);
        for _ in 0..k {
            let sigma = if max_sigma > min_sigma {
                rng.random_range(min_sigma..=max_sigma)
            } else {
                min_sigma
            };
            let place = |rng: &mut R| {
                let axis = |len: usize, rng: &mut R| {
                    let hi = (len - 1) as f64;
                    let margin = sigma.min(hi / 2.0);
                    if hi - margin > margin {
                        rng.random_range(margin..=hi - margin)
                    } else {
                        hi / 2.0
                    }
                };
                let col = axis(shape.width, rng);
                let row = if one_d { 0.0 } else { axis(shape.height, rng) };
                [col, row]
            };
            let mut center = place(rng);
            for _ in 1..PLACEMENT_ATTEMPTS {
                let clear = comps.iter().all(|c| {
                    let (dx, dy) = (c.center[0] - center[0], c.center[1] - center[1]);
                    (dx * dx + dy * dy).sqrt() >= 4.0 * c.sigma.max(sigma)
                });
                if clear {
                    break;
                }
                center = place(rng);
            }
            comps.push(GmmComponent::new(center, sigma, rng.random_range(0.5..=1.5)));
        }
        suite.push(GmmSpec::new(comps)?);
    }
    Ok(suite)
}

/// The two 1D truths of the toy study on a 100-cell line: a Gaussian at 50
/// and a 0.3/0.7 mixture at 25 and 75, all with sigma 5.
pub fn toy_truths() -> [(&'static str, GmmSpec); 2] {
    let uni = GmmSpec::new(vec![GmmComponent::new([50.0, 0.0], 5.0, 1.0)]).expect("valid");
    let bi = GmmSpec::new(vec![
        GmmComponent::new([25.0, 0.0], 5.0, 0.3),
        GmmComponent::new([75.0, 0.0], 5.0, 0.7),
    ])
    .expect("valid");
    [("unimodal", uni), ("bimodal", bi)]
}

pub const TOY_CELLS: usize = 100;
pub const TOY_BLUR_SIGMA: f64 = 5.0;
pub const TOY_REALIZATIONS: usize = 1000;
pub const TOY_OBSERVERS: [usize; 2] = [3, 30];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyRow {
    pub truth: String,
    pub n: usize,
    pub e_kld: f64,
    pub std_kld: f64,
}

/// Pointwise mean and standard deviation of the measured maps for one
/// (truth, n) case.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyProfile {
    pub truth: String,
    pub n: usize,
    pub mean: SaliencyGrid<f64>,
    pub std: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyReport {
    pub rows: Vec<ToyRow>,
    pub profiles: Vec<ToyProfile>,
}

impl ToyReport {
    pub fn row(&self, truth: &str, n: usize) -> Option<&ToyRow> {
        self.rows.iter().find(|r| r.truth == truth && r.n == n)
    }
}

/// Measured maps drawn repeatedly from each toy truth: discrepancy
/// statistics and pointwise spread per observer count.
pub fn toy_study(n_values: &[usize], realizations: usize, seed: u64) -> Result<ToyReport> {
    if realizations < 2 {
        return Err(Error::TooFewRealizations(realizations));
    }
    let shape = Shape::line(TOY_CELLS)?;
    let mut rows = Vec::new();
    let mut profiles = Vec::new();
    for (ti, (name, spec)) in toy_truths().iter().enumerate() {
        let truth: SaliencyGrid<f64> = gmm_truth(spec, shape)?;
        for (ni, &n) in n_values.iter().enumerate() {
            let index = (ti as u64) << 32 | ni as u64;
            let mut rng = stream(seed, Purpose::Toy, index);
            let samples = discrepancy_samples(
                &truth,
                n,
                TOY_BLUR_SIGMA,
                &Discrepancy::Kld,
                realizations,
                &mut rng,
            )?;
            let (e, var) = mean_and_variance(&samples);
            rows.push(ToyRow {
                truth: name.to_string(),
                n,
                e_kld: e,
                std_kld: var.sqrt(),
            });

            let mut rng = stream(seed, Purpose::Toy, index | 1 << 16);
            let mut sum = vec![0.0; shape.cells()];
            let mut sum_sq = vec![0.0; shape.cells()];
            for _ in 0..realizations {
                let fix = sample_fixations(&truth, n, &mut rng)?;
                let m: SaliencyGrid<f64> = sr_reconstruct(&fix.points, TOY_BLUR_SIGMA, shape)?;
                for (j, &v) in m.values().iter().enumerate() {
                    sum[j] += v;
                    sum_sq[j] += v * v;
                }
            }
            let r = realizations as f64;
            let mean: Vec<f64> = sum.iter().map(|s| s / r).collect();
            let std = sum_sq
                .iter()
                .zip(&mean)
                .map(|(sq, m)| ((sq - r * m * m) / (r - 1.0)).max(0.0).sqrt())
                .collect();
            profiles.push(ToyProfile {
                truth: name.to_string(),
                n,
                mean: SaliencyGrid::from_raw(shape, mean)?,
                std,
            });
        }
    }
    Ok(ToyReport { rows, profiles })
}
