//! Synthetic scenarios, strength/knob sweeps with shared noise, and reports.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::editor::{run_edit, EditConfig, EditResult, Variant};
use crate::error::{Error, Result};
use crate::field::{AnalyticField, Condition, VelocityField};
use crate::geometry::{angle_series, AngleSeries};
use crate::gmm::{Component, Covariance, GaussianMixtureModel};
use crate::metrics::{
    directional_similarity, edit_effect, euclidean, monotonicity, preservation_distances,
    smoothness, FeatureMap,
};
use crate::rng::{gaussian_noise, Seed};
use crate::vector::State;
use crate::fmt_f64;

pub const SRC: &str = "src";
pub const TAR: &str = "tar";

/// How the target mixture is derived from the source mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Transform {
    Identity,
    MeanShift { offset: Vec<f64> },
    /// Scales coordinate `axis` by `factor` (means and covariances).
    AnisotropicStretch { axis: usize, factor: f64 },
    /// Rotates about the origin in the plane of the first two coordinates.
    Rotation { degrees: f64 },
    /// Replaces the component weights (renormalized).
    ComponentSwap { weights: Vec<f64> },
    /// Scales every covariance by `factor`.
    Contraction { factor: f64 },
}

impl Transform {
    pub fn family(&self) -> Family {
        match self {
            Transform::Identity => Family::Identity,
            Transform::MeanShift { .. } => Family::MeanShift,
            Transform::AnisotropicStretch { .. } => Family::AnisotropicStretch,
            Transform::Rotation { .. } => Family::Rotation,
            Transform::ComponentSwap { .. } => Family::ComponentSwap,
            Transform::Contraction { .. } => Family::Contraction,
        }
    }

    pub fn apply(&self, gm: &GaussianMixtureModel) -> Result<GaussianMixtureModel> {
        let d = gm.dim();
        match self {
            Transform::Identity => Ok(gm.clone()),
            Transform::MeanShift { offset } => gm.translated(offset),
            Transform::AnisotropicStretch { axis, factor } => {
                if *axis >= d {
                    return Err(Error::invalid(format!("stretch axis {axis} >= dimension {d}")));
                }
                if !(factor.is_finite() && *factor > 0.0) {
                    return Err(Error::invalid("stretch factor must be > 0"));
                }
                let mut m = DMatrix::identity(d, d);
                m[(*axis, *axis)] = *factor;
                gm.linear_map(&m)
            }
            Transform::Rotation { degrees } => {
                if d < 2 {
                    return Err(Error::invalid("rotation needs dimension >= 2"));
                }
                let (s, c) = degrees.to_radians().sin_cos();
                let mut m = DMatrix::identity(d, d);
                m[(0, 0)] = c;
                m[(0, 1)] = -s;
                m[(1, 0)] = s;
                m[(1, 1)] = c;
                gm.linear_map(&m)
            }
            Transform::ComponentSwap { weights } => {
                if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
                    return Err(Error::invalid("swapped weights must be > 0"));
                }
                gm.with_weights(weights)
            }
            Transform::Contraction { factor } => {
                if !(factor.is_finite() && *factor > 0.0) {
                    return Err(Error::invalid("contraction factor must be > 0"));
                }
                gm.with_scaled_covariances(*factor)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Identity,
    MeanShift,
    AnisotropicStretch,
    Rotation,
    ComponentSwap,
    Contraction,
}

impl Family {
    pub fn as_str(self) -> &'static str {
        match self {
            Family::Identity => "identity",
            Family::MeanShift => "mean_shift",
            Family::AnisotropicStretch => "anisotropic_stretch",
            Family::Rotation => "rotation",
            Family::ComponentSwap => "component_swap",
            Family::Contraction => "contraction",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub name: String,
    pub category: String,
    pub base: GaussianMixtureModel,
    pub transform: Transform,
    pub samples: usize,
}

/// A source/target condition pair with source samples to edit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub category: String,
    pub family: Family,
    pub gm_src: GaussianMixtureModel,
    pub gm_tar: GaussianMixtureModel,
    pub samples: Vec<State>,
    pub seed: Seed,
}

const SAMPLE_STREAM: u64 = 1;
const NOISE_STREAM: u64 = 2;

pub fn make_scenario(spec: &ScenarioSpec, seed: Seed) -> Result<Scenario> {
    let gm_tar = spec.transform.apply(&spec.base)?;
    let samples = spec.base.samples(seed.derive(SAMPLE_STREAM), spec.samples)?;
    Ok(Scenario {
        name: spec.name.clone(),
        category: spec.category.clone(),
        family: spec.transform.family(),
        gm_src: spec.base.clone(),
        gm_tar,
        samples,
        seed,
    })
}

impl Scenario {
    pub fn dim(&self) -> usize {
        self.gm_src.dim()
    }

    pub fn conditions(&self) -> (Condition, Condition) {
        (Condition::id(SRC), Condition::id(TAR))
    }

    /// Analytic field with `src` and `tar` registered and the default null mixture.
    pub fn field(&self) -> Result<AnalyticField> {
        AnalyticField::pair((SRC, self.gm_src.clone()), (TAR, self.gm_tar.clone()))
    }

    /// Seed of the noise shared by every edit of one sample.
    pub fn noise_seed(&self, sample: usize) -> Seed {
        self.seed.derive(NOISE_STREAM).derive(sample as u64)
    }

    pub fn noise(&self, sample: usize) -> Result<State> {
        gaussian_noise(self.noise_seed(sample), self.dim())
    }
}

/// `N((-3, 0), I) -> N((3, 0), I)` in two dimensions.
pub fn two_gaussian_scenario(samples: usize, seed: Seed) -> Result<Scenario> {
    let spec = ScenarioSpec {
        name: "two_gaussian".into(),
        category: "two_gaussian".into(),
        base: GaussianMixtureModel::gaussian(State::new(vec![-3.0, 0.0])?, Covariance::identity(2))?,
        transform: Transform::MeanShift {
            offset: vec![6.0, 0.0],
        },
        samples,
    };
    make_scenario(&spec, seed)
}

/// Source and target identical.
pub fn identity_scenario(samples: usize, seed: Seed) -> Result<Scenario> {
    let spec = ScenarioSpec {
        name: "identity".into(),
        category: "identity".into(),
        base: GaussianMixtureModel::gaussian(State::new(vec![-3.0, 0.0])?, Covariance::identity(2))?,
        transform: Transform::Identity,
        samples,
    };
    make_scenario(&spec, seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilySpec {
    pub family: Family,
    pub category: String,
    pub count: usize,
    /// Magnitude range for the family parameter: shift length, stretch factor,
    /// rotation angle in degrees, or contraction factor. Unused by swaps.
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteConfig {
    pub seed: Seed,
    pub dim: usize,
    pub samples_per_scenario: usize,
    pub max_components: usize,
    pub families: Vec<FamilySpec>,
}

impl Default for SuiteConfig {
    /// Five families, 250 scenarios, eight samples each, `d = 2`.
    fn default() -> Self {
        let fam = |family, category: &str, count, min, max| FamilySpec {
            family,
            category: category.into(),
            count,
            min,
            max,
        };
        Self {
            seed: Seed(2024),
            dim: 2,
            samples_per_scenario: 8,
            max_components: 3,
            families: vec![
                fam(Family::MeanShift, "scene_weather_time", 105, 3.0, 6.0),
                fam(Family::AnisotropicStretch, "style", 44, 1.5, 3.0),
                fam(Family::Rotation, "degradation", 38, 60.0, 120.0),
                fam(Family::ComponentSwap, "color", 18, 0.0, 0.0),
                fam(Family::Contraction, "portrait_attributes", 45, 0.2, 0.5),
            ],
        }
    }
}

impl SuiteConfig {
    pub fn total(&self) -> usize {
        self.families.iter().map(|f| f.count).sum()
    }
}

/// Random `k`-component mixture in `d` dimensions: means in `[-4, 4]^d`, variances in
/// `[0.3, 1.5]`, weights drawn in `[0.5, 1.5]` and normalized. With `full`, covariances
/// are `A A^T + 0.3 I` for `A` with entries in `[-0.8, 0.8]`.
pub fn random_mixture<R: Rng + ?Sized>(rng: &mut R, d: usize, k: usize, full: bool) -> Result<GaussianMixtureModel> {
    if d == 0 || k == 0 {
        return Err(Error::invalid("random mixture needs d >= 1 and k >= 1"));
    }
    let components = (0..k)
        .map(|_| {
            let mean = (0..d).map(|_| rng.random_range(-4.0..4.0)).collect();
            let covariance = if full {
                let a = DMatrix::from_fn(d, d, |_, _| rng.random_range(-0.8..0.8));
                Covariance::Full(&a * a.transpose() + DMatrix::identity(d, d) * 0.3)
            } else {
                Covariance::Diagonal((0..d).map(|_| rng.random_range(0.3..1.5)).collect())
            };
            Ok(Component::new(rng.random_range(0.5..1.5), State::new(mean)?, covariance))
        })
        .collect::<Result<_>>()?;
    GaussianMixtureModel::normalized(components)
}

fn random_transform<R: Rng>(rng: &mut R, spec: &FamilySpec, base: &GaussianMixtureModel) -> Transform {
    let d = base.dim();
    let mag = if spec.max > spec.min {
        rng.random_range(spec.min..spec.max)
    } else {
        spec.min
    };
    match spec.family {
        Family::Identity => Transform::Identity,
        Family::MeanShift => {
            let dir: Vec<f64> = crate::rng::standard_normals(rng, d);
            let n = crate::vector::norm(&dir).max(1e-12);
            Transform::MeanShift {
                offset: dir.iter().map(|x| mag * x / n).collect(),
            }
        }
        Family::AnisotropicStretch => Transform::AnisotropicStretch {
            axis: rng.random_range(0..d),
            factor: mag,
        },
        Family::Rotation => Transform::Rotation {
            degrees: if rng.random::<bool>() { mag } else { -mag },
        },
        Family::ComponentSwap => {
            let mut w: Vec<f64> = base.components().iter().map(|c| c.weight).collect();
            w.reverse();
            Transform::ComponentSwap { weights: w }
        }
        Family::Contraction => Transform::Contraction { factor: mag },
    }
}

/// Deterministic scenario suite for `config`.
pub fn build_suite(config: &SuiteConfig) -> Result<Vec<Scenario>> {
    if config.dim == 0 || config.max_components == 0 {
        return Err(Error::invalid("suite needs dim >= 1 and max_components >= 1"));
    }
    let mut out = Vec::with_capacity(config.total());
    let mut index = 0u64;
    for spec in &config.families {
        for j in 0..spec.count {
            let seed = config.seed.derive(index);
            index += 1;
            let mut rng = seed.rng();
            let min_k = if spec.family == Family::ComponentSwap { 2 } else { 1 };
            let k = rng.random_range(min_k..=config.max_components.max(min_k));
            let base = random_mixture(&mut rng, config.dim, k, false)?;
            let transform = random_transform(&mut rng, spec, &base);
            let scenario_spec = ScenarioSpec {
                name: format!("{}_{:03}", spec.family, j),
                category: spec.category.clone(),
                base,
                transform,
                samples: config.samples_per_scenario,
            };
            out.push(make_scenario(&scenario_spec, seed)?);
        }
    }
    Ok(out)
}

/// Which knob a sweep arm varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    /// Slider strength of a variant.
    Strength(Variant),
    /// FlowEdit with the target guidance scale on the strength axis.
    CfgSweep,
    /// FlowEdit with the edit-start index on the strength axis.
    NmaxSweep,
}

impl Arm {
    pub fn label(&self) -> &'static str {
        match self {
            Arm::Strength(v) => v.as_str(),
            Arm::CfgSweep => "cfg_sweep",
            Arm::NmaxSweep => "nmax_sweep",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub strengths: Vec<f64>,
    pub variants: Vec<Variant>,
    pub omega_tar_sweep: Vec<f64>,
    pub n_max_sweep: Vec<usize>,
    pub base: EditConfig,
    /// Keep full edit trajectories in the report.
    #[serde(default)]
    pub keep_results: bool,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            strengths: vec![1.0, 2.0, 3.0, 4.0, 5.0],
            variants: vec![Variant::FlowSlider],
            omega_tar_sweep: vec![1.5, 3.5, 5.5, 7.5, 9.5],
            n_max_sweep: vec![20, 22, 24, 26, 28],
            base: EditConfig::new(Variant::FlowSlider, 1.0),
            keep_results: false,
        }
    }
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        let increasing = |xs: &[f64]| xs.windows(2).all(|w| w[0] < w[1]);
        if self.strengths.is_empty() || !increasing(&self.strengths) {
            return Err(Error::invalid("strengths must be non-empty and strictly increasing"));
        }
        if !increasing(&self.omega_tar_sweep) {
            return Err(Error::invalid("guidance sweep must be strictly increasing"));
        }
        if self.n_max_sweep.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("n_max sweep must be strictly increasing"));
        }
        let steps = self.base.grid.steps();
        if let Some(n) = self.n_max_sweep.iter().find(|&&n| n == 0 || n > steps) {
            return Err(Error::invalid(format!("n_max {n} outside 1..={steps}")));
        }
        self.base.clone().validated()?;
        Ok(())
    }

    /// Every `(arm, axis value, config)` this spec requests, axis values ascending.
    pub fn arms(&self) -> Vec<(Arm, f64, EditConfig)> {
        let mut out = Vec::new();
        for &v in &self.variants {
            for &s in &self.strengths {
                let mut c = self.base.clone();
                c.variant = v;
                c.strength = s;
                out.push((Arm::Strength(v), s, c));
            }
        }
        for &w in &self.omega_tar_sweep {
            let mut c = self.base.clone();
            c.variant = Variant::FlowEdit;
            c.guidance.omega_tar = w;
            out.push((Arm::CfgSweep, w, c));
        }
        for &n in &self.n_max_sweep {
            let mut c = self.base.clone();
            c.variant = Variant::FlowEdit;
            c.n_max = n;
            out.push((Arm::NmaxSweep, n as f64, c));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub scenario: String,
    pub category: String,
    pub sample: usize,
    pub variant: String,
    pub s: f64,
    pub edit_effect: f64,
    /// Absent when the edit leaves the features unchanged or the condition features coincide.
    pub dir_similarity: Option<f64>,
    pub dist_euclid: f64,
    pub dist_cosfeat: f64,
    pub dist_mahal: f64,
    pub logdens_gap: f64,
    pub x_edit: State,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepCell {
    pub scenario: String,
    pub sample: usize,
    pub arm: Arm,
    pub s: f64,
    pub outcome: std::result::Result<MetricRow, String>,
    /// Largest `|v_fid + v_steer - v_delta|` over steps and coordinates.
    pub decomposition_residual: Option<f64>,
    pub angles: Option<AngleSeries>,
    #[serde(skip)]
    pub result: Option<EditResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub scenario: String,
    pub category: String,
    pub variant: String,
    pub mono: Option<f64>,
    pub smooth: Option<f64>,
    pub mean_edit_effect: f64,
    pub mean_dist_euclid: f64,
    pub mean_dist_cosfeat: f64,
    pub mean_dist_mahal: f64,
    pub mean_logdens_gap: f64,
    /// Samples contributing to `mono` and `smooth`.
    pub mono_samples: usize,
    pub smooth_samples: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepReport {
    pub cells: Vec<SweepCell>,
    /// Shared noise per `(scenario, sample)`.
    pub noises: BTreeMap<String, Vec<State>>,
    pub summary: Vec<SummaryRow>,
    pub complete: bool,
}

/// Per-sample slider statistics of one arm, from its metric rows.
fn sample_stats(rows: &[&MetricRow]) -> (Option<f64>, Option<f64>) {
    let mut rows: Vec<&MetricRow> = rows.to_vec();
    rows.sort_by(|a, b| a.s.total_cmp(&b.s));
    let e: Vec<f64> = rows.iter().map(|r| r.edit_effect).collect();
    let d: Vec<f64> = rows.iter().map(|r| r.dist_euclid).collect();
    let mono = monotonicity(&e, &d).ok();
    let states: Vec<&State> = rows.iter().map(|r| &r.x_edit).collect();
    let smooth = smoothness(&states, |a, b| euclidean(a, b)).ok();
    (mono, smooth)
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

fn mean_opt(xs: &[Option<f64>]) -> (Option<f64>, usize) {
    let vals: Vec<f64> = xs.iter().flatten().copied().collect();
    if vals.is_empty() {
        (None, 0)
    } else {
        (Some(mean(vals.iter().copied())), vals.len())
    }
}

/// Summary rows recomputed from detail rows, one per `(scenario, variant)`.
pub fn summarize(cells: &[SweepCell], scenarios: &[&Scenario]) -> Vec<SummaryRow> {
    let mut out = Vec::new();
    for sc in scenarios {
        let mine: Vec<&MetricRow> = cells
            .iter()
            .filter(|c| c.scenario == sc.name)
            .filter_map(|c| c.outcome.as_ref().ok())
            .collect();
        let mut labels: Vec<&str> = Vec::new();
        for c in cells.iter().filter(|c| c.scenario == sc.name) {
            if !labels.contains(&c.arm.label()) {
                labels.push(c.arm.label());
            }
        }
        for label in labels {
            let rows: Vec<&MetricRow> = mine.iter().copied().filter(|r| r.variant == label).collect();
            let mut monos = Vec::new();
            let mut smooths = Vec::new();
            for sample in 0..sc.samples.len() {
                let per: Vec<&MetricRow> = rows.iter().copied().filter(|r| r.sample == sample).collect();
                let (m, s) = sample_stats(&per);
                monos.push(m);
                smooths.push(s);
            }
            let (mono, mono_samples) = mean_opt(&monos);
            let (smooth, smooth_samples) = mean_opt(&smooths);
            out.push(SummaryRow {
                scenario: sc.name.clone(),
                category: sc.category.clone(),
                variant: label.to_string(),
                mono,
                smooth,
                mean_edit_effect: mean(rows.iter().map(|r| r.edit_effect)),
                mean_dist_euclid: mean(rows.iter().map(|r| r.dist_euclid)),
                mean_dist_cosfeat: mean(rows.iter().map(|r| r.dist_cosfeat)),
                mean_dist_mahal: mean(rows.iter().map(|r| r.dist_mahal)),
                mean_logdens_gap: mean(rows.iter().map(|r| r.logdens_gap)),
                mono_samples,
                smooth_samples,
            });
        }
    }
    out
}

fn metric_row(
    scenario: &Scenario,
    sample: usize,
    arm: Arm,
    s: f64,
    result: &EditResult,
    features: &FeatureMap,
) -> Result<MetricRow> {
    let x_src = &scenario.samples[sample];
    let f_src = features.image(x_src)?;
    let f_edit = features.image(&result.x_edit)?;
    let g_src = features.text(&scenario.gm_src)?;
    let g_tar = features.text(&scenario.gm_tar)?;
    let p = preservation_distances(x_src, &result.x_edit, &scenario.gm_src, features)?;
    Ok(MetricRow {
        scenario: scenario.name.clone(),
        category: scenario.category.clone(),
        sample,
        variant: arm.label().to_string(),
        s,
        edit_effect: edit_effect(&f_edit, &g_tar)?,
        dir_similarity: directional_similarity(&f_src, &f_edit, &g_src, &g_tar).ok(),
        dist_euclid: p.euclid,
        dist_cosfeat: p.cosfeat,
        dist_mahal: p.mahal,
        logdens_gap: p.logdens_gap,
        x_edit: result.x_edit.clone(),
    })
}

fn decomposition_residual(result: &EditResult) -> Option<f64> {
    result
        .steps
        .iter()
        .map(|r| match (&r.v_fid, &r.v_steer) {
            (Some(f), Some(s)) => Some(f.add(s).max_abs_diff(&r.v_delta)),
            _ => None,
        })
        .try_fold(0.0f64, |acc, x| x.map(|x| acc.max(x)))
}

fn run_cell<F: VelocityField + ?Sized>(
    field: &F,
    scenario: &Scenario,
    sample: usize,
    arm: Arm,
    s: f64,
    config: &EditConfig,
    features: &FeatureMap,
    keep: bool,
) -> SweepCell {
    let (c_src, c_tar) = scenario.conditions();
    let mut cfg = config.clone();
    cfg.seed = scenario.noise_seed(sample);
    let edit = run_edit(field, &scenario.samples[sample], &c_src, &c_tar, &cfg);
    let (outcome, residual, angles, result) = match edit {
        Ok(result) => {
            let row = metric_row(scenario, sample, arm, s, &result, features).map_err(|e| e.to_string());
            let angles = result.config.record_decomposition.then(|| {
                angle_series(&result, format!("{}/{}/{}/{}", scenario.name, sample, arm.label(), fmt_f64(s)))
            });
            (row, decomposition_residual(&result), angles, keep.then_some(result))
        }
        Err(e) => (Err(e.to_string()), None, None, None),
    };
    SweepCell {
        scenario: scenario.name.clone(),
        sample,
        arm,
        s,
        outcome,
        decomposition_residual: residual,
        angles,
        result,
    }
}

/// Runs every requested arm on every sample of `scenario` against `field`.
pub fn run_sweep<F: VelocityField + ?Sized>(
    scenario: &Scenario,
    spec: &SweepSpec,
    field: &F,
    features: &FeatureMap,
) -> Result<SweepReport> {
    spec.validate()?;
    let arms = spec.arms();
    let jobs: Vec<(usize, &(Arm, f64, EditConfig))> = (0..scenario.samples.len())
        .flat_map(|i| arms.iter().map(move |a| (i, a)))
        .collect();
    let cells: Vec<SweepCell> = jobs
        .par_iter()
        .map(|(i, (arm, s, cfg))| run_cell(field, scenario, *i, *arm, *s, cfg, features, spec.keep_results))
        .collect();
    finish(vec![scenario], cells)
}

/// Runs [`run_sweep`] over many scenarios, each against its own analytic field.
pub fn run_suite(scenarios: &[Scenario], spec: &SweepSpec, features: &FeatureMap) -> Result<SweepReport> {
    spec.validate()?;
    let arms = spec.arms();
    let arms = &arms;
    let fields = scenarios.iter().map(Scenario::field).collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(usize, usize, &(Arm, f64, EditConfig))> = scenarios
        .iter()
        .enumerate()
        .flat_map(|(k, sc)| (0..sc.samples.len()).flat_map(move |i| arms.iter().map(move |a| (k, i, a))))
        .collect();
    let cells: Vec<SweepCell> = jobs
        .par_iter()
        .map(|(k, i, (arm, s, cfg))| {
            run_cell(&fields[*k], &scenarios[*k], *i, *arm, *s, cfg, features, spec.keep_results)
        })
        .collect();
    finish(scenarios.iter().collect(), cells)
}

fn finish(scenarios: Vec<&Scenario>, cells: Vec<SweepCell>) -> Result<SweepReport> {
    let mut noises = BTreeMap::new();
    for sc in &scenarios {
        let n = (0..sc.samples.len()).map(|i| sc.noise(i)).collect::<Result<Vec<_>>>()?;
        noises.insert(sc.name.clone(), n);
    }
    let complete = cells.iter().all(|c| c.outcome.is_ok());
    for c in cells.iter().filter(|c| c.outcome.is_err()) {
        log::warn!("{} sample {} {} s={}: {:?}", c.scenario, c.sample, c.arm.label(), c.s, c.outcome.as_ref().err());
    }
    let summary = summarize(&cells, &scenarios);
    Ok(SweepReport {
        cells,
        noises,
        summary,
        complete,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategorySummary {
    pub category: String,
    pub variant: String,
    pub mono: Option<f64>,
    pub smooth: Option<f64>,
    pub mean_edit_effect: f64,
    pub mean_dist_euclid: f64,
    pub scenarios: usize,
}

impl SweepReport {
    pub fn rows(&self) -> impl Iterator<Item = &MetricRow> {
        self.cells.iter().filter_map(|c| c.outcome.as_ref().ok())
    }

    /// Scenario summaries averaged per category, plus a pooled `all` category.
    pub fn category_summary(&self) -> Vec<CategorySummary> {
        let mut groups: BTreeMap<(String, String), Vec<&SummaryRow>> = BTreeMap::new();
        for r in &self.summary {
            groups
                .entry((r.category.clone(), r.variant.clone()))
                .or_default()
                .push(r);
            groups
                .entry(("all".to_string(), r.variant.clone()))
                .or_default()
                .push(r);
        }
        groups
            .into_iter()
            .map(|((category, variant), rows)| CategorySummary {
                category,
                variant,
                mono: mean_opt(&rows.iter().map(|r| r.mono).collect::<Vec<_>>()).0,
                smooth: mean_opt(&rows.iter().map(|r| r.smooth).collect::<Vec<_>>()).0,
                mean_edit_effect: mean(rows.iter().map(|r| r.mean_edit_effect)),
                mean_dist_euclid: mean(rows.iter().map(|r| r.mean_dist_euclid)),
                scenarios: rows.len(),
            })
            .collect()
    }

    pub fn detail_csv(&self) -> String {
        let mut out = String::from(DETAIL_CSV_HEADER);
        out.push('\n');
        for r in self.rows() {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                r.scenario,
                r.variant,
                fmt_f64(r.s),
                fmt_f64(r.edit_effect),
                r.dir_similarity.map(fmt_f64).unwrap_or_default(),
                fmt_f64(r.dist_euclid),
                fmt_f64(r.dist_cosfeat),
                fmt_f64(r.dist_mahal),
                fmt_f64(r.logdens_gap),
            ));
        }
        out
    }

    pub fn summary_csv(&self) -> String {
        let mut out = String::from(SUMMARY_CSV_HEADER);
        out.push('\n');
        for r in &self.summary {
            out.push_str(&format!(
                "{},{},{},{}\n",
                r.scenario,
                r.variant,
                r.mono.map(fmt_f64).unwrap_or_default(),
                r.smooth.map(fmt_f64).unwrap_or_default()
            ));
        }
        out
    }

    pub fn category_csv(&self) -> String {
        let mut out = String::from("category,variant,mono,smooth,edit_effect,dist_euclid,scenarios\n");
        for r in self.category_summary() {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.category,
                r.variant,
                r.mono.map(fmt_f64).unwrap_or_default(),
                r.smooth.map(fmt_f64).unwrap_or_default(),
                fmt_f64(r.mean_edit_effect),
                fmt_f64(r.mean_dist_euclid),
                r.scenarios
            ));
        }
        out
    }

    /// Edited endpoints for 2-D trajectory plots: `series,step,x,y` with one series
    /// per `(scenario, sample, variant)` and the strength index as the step.
    pub fn endpoints_csv(&self) -> String {
        let mut out = String::from(TRAJECTORY_CSV_HEADER);
        out.push('\n');
        let mut groups: BTreeMap<(String, usize, String), Vec<&MetricRow>> = BTreeMap::new();
        for r in self.rows() {
            groups
                .entry((r.scenario.clone(), r.sample, r.variant.clone()))
                .or_default()
                .push(r);
        }
        for ((scenario, sample, variant), mut rows) in groups {
            rows.sort_by(|a, b| a.s.total_cmp(&b.s));
            for (k, r) in rows.iter().enumerate() {
                let x = r.x_edit.as_slice();
                out.push_str(&format!(
                    "{scenario}/{sample}/{variant},{k},{},{}\n",
                    fmt_f64(x[0]),
                    fmt_f64(*x.get(1).unwrap_or(&0.0))
                ));
            }
        }
        out
    }

    pub fn angle_series(&self) -> Vec<&AngleSeries> {
        self.cells.iter().filter_map(|c| c.angles.as_ref()).collect()
    }

    /// Raw angle entries of every cell: `step,t,theta_deg,norm_fid,norm_steer`.
    pub fn angles_csv(&self) -> String {
        let mut out = String::from(crate::geometry::ANGLE_CSV_HEADER);
        out.push('\n');
        for s in self.angle_series() {
            let csv = s.to_csv();
            out.extend(csv.lines().skip(1).map(|l| format!("{l}\n")));
        }
        out
    }
}

pub const DETAIL_CSV_HEADER: &str =
    "scenario,variant,s,edit_effect,dir_similarity,dist_euclid,dist_cosfeat,dist_mahal,logdens_gap";
pub const SUMMARY_CSV_HEADER: &str = "scenario,variant,mono,smooth";
pub const TRAJECTORY_CSV_HEADER: &str = "series,step,x,y";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepAngleStats {
    pub step: usize,
    pub t: f64,
    pub count: usize,
    pub mean: f64,
    /// Population standard deviation.
    pub sd: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AngleReport {
    pub per_step: Vec<StepAngleStats>,
    /// Counts over equal-width bins spanning `[0, 180]` degrees.
    pub histogram: Vec<usize>,
    pub skipped: usize,
}

pub const DEFAULT_ANGLE_BINS: usize = 36;

/// Index of the histogram bin holding `theta` degrees; 180 lands in the last bin.
pub fn angle_bin(theta: f64, bins: usize) -> usize {
    (((theta / 180.0) * bins as f64).floor().max(0.0) as usize).min(bins - 1)
}

pub fn angle_report_from_series(series: &[&AngleSeries], bins: usize) -> AngleReport {
    let bins = bins.max(1);
    let mut by_step: BTreeMap<usize, (f64, Vec<f64>)> = BTreeMap::new();
    let mut histogram = vec![0usize; bins];
    let mut skipped = 0;
    for s in series {
        skipped += s.skipped;
        for e in &s.entries {
            by_step.entry(e.step).or_insert((e.t, Vec::new())).1.push(e.theta_deg);
            histogram[angle_bin(e.theta_deg, bins)] += 1;
        }
    }
    let per_step = by_step
        .into_iter()
        .rev()
        .map(|(step, (t, thetas))| {
            let n = thetas.len() as f64;
            let m = thetas.iter().sum::<f64>() / n;
            let var = thetas.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
            StepAngleStats {
                step,
                t,
                count: thetas.len(),
                mean: m,
                sd: var.sqrt(),
                min: thetas.iter().copied().fold(f64::INFINITY, f64::min),
                max: thetas.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            }
        })
        .collect();
    AngleReport {
        per_step,
        histogram,
        skipped,
    }
}

/// Per-step angle statistics over a set of edit runs.
pub fn angle_report(results: &[EditResult]) -> AngleReport {
    let series: Vec<AngleSeries> = results
        .iter()
        .enumerate()
        .map(|(k, r)| angle_series(r, k.to_string()))
        .collect();
    angle_report_from_series(&series.iter().collect::<Vec<_>>(), DEFAULT_ANGLE_BINS)
}

impl AngleReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,t,count,mean_deg,sd_deg,min_deg,max_deg\n");
        for s in &self.per_step {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                s.step,
                fmt_f64(s.t),
                s.count,
                fmt_f64(s.mean),
                fmt_f64(s.sd),
                fmt_f64(s.min),
                fmt_f64(s.max)
            ));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReverseRow {
    pub sample: usize,
    pub s: f64,
    /// Signed projection of `x_edit(s) - x_edit(0)` on the source-to-target mean axis.
    pub projection: f64,
}

/// Signed displacement along the mean axis for symmetric strengths around zero.
pub fn reverse_study(scenario: &Scenario, strengths: &[f64], config: &EditConfig) -> Result<Vec<ReverseRow>> {
    if !strengths.contains(&0.0) {
        return Err(Error::invalid("reverse study needs s = 0 as its reference"));
    }
    let axis = scenario.gm_tar.mean().sub(&scenario.gm_src.mean());
    let len = axis.norm();
    if len < 1e-12 {
        return Err(Error::UndefinedDirection("mixture mean axis"));
    }
    let axis = axis.scale(1.0 / len);
    let field = scenario.field()?;
    let (c_src, c_tar) = scenario.conditions();
    let mut rows = Vec::new();
    for sample in 0..scenario.samples.len() {
        let edit = |s: f64| -> Result<State> {
            let mut cfg = config.clone();
            cfg.variant = Variant::FlowSlider;
            cfg.strength = s;
            cfg.seed = scenario.noise_seed(sample);
            Ok(run_edit(&field, &scenario.samples[sample], &c_src, &c_tar, &cfg)?.x_edit)
        };
        let reference = edit(0.0)?;
        for &s in strengths {
            let x = edit(s)?;
            rows.push(ReverseRow {
                sample,
                s,
                projection: x.sub(&reference).dot(&axis),
            });
        }
    }
    Ok(rows)
}

pub fn reverse_csv(rows: &[ReverseRow]) -> String {
    let mut out = String::from("sample,s,projection\n");
    for r in rows {
        out.push_str(&format!("{},{},{}\n", r.sample, fmt_f64(r.s), fmt_f64(r.projection)));
    }
    out
}
