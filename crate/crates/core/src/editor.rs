//! Prompt-pair editing on a Rectified-Flow field.
//!
//! The edit path `z_edit` is integrated over the window `t_{n_max} -> 0` with
//! a velocity built from three guided evaluations per step:
//!
//! ```text
//! z_src = (1 - t) x_src + t eps
//! z_tar = z_edit + z_src - x_src
//! V_tar   = V(z_tar, t, c_tar)
//! V_cross = V(z_tar, t, c_src)
//! V_src   = V(z_src, t, c_src)
//! v_steer = V_tar - V_cross      (same state, different condition)
//! v_fid   = V_cross - V_src      (same condition, different state)
//! v_delta = V_tar - V_src        (= v_fid + v_steer)
//! ```
//!
//! The variants differ only in the velocity applied to `z_edit`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{cfg_velocity, Condition, VelocityField};
use crate::geometry::{self, NORM_EPS};
use crate::grid::TimeGrid;
use crate::rng::{gaussian_noise, Seed};
use crate::sampler::euler_step;
use crate::vector::{check_dims, State, Velocity};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// `v_delta`; strength is ignored.
    #[serde(rename = "flowedit")]
    FlowEdit,
    /// `v_fid + s v_steer`.
    #[serde(rename = "flowslider")]
    FlowSlider,
    /// `s v_delta`.
    NaiveScaling,
    /// `(1 - s) V_src + s V_tar`.
    LinearInterp,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::FlowEdit,
        Variant::FlowSlider,
        Variant::NaiveScaling,
        Variant::LinearInterp,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::FlowEdit => "flowedit",
            Variant::FlowSlider => "flowslider",
            Variant::NaiveScaling => "naive_scaling",
            Variant::LinearInterp => "linear_interp",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown variant `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    /// `z_edit` starts at the noisy source state `z_src(t_{n_max})`.
    NoisySource,
    /// `z_edit` starts at the clean source `x_src`.
    CleanSource,
}

impl InitMode {
    pub fn as_str(self) -> &'static str {
        match self {
            InitMode::NoisySource => "noisy_source",
            InitMode::CleanSource => "clean_source",
        }
    }
}

impl fmt::Display for InitMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for InitMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "noisy_source" => Ok(InitMode::NoisySource),
            "clean_source" => Ok(InitMode::CleanSource),
            _ => Err(Error::invalid(format!("unknown init mode `{s}`"))),
        }
    }
}

/// Guidance scales for the source and target branches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Guidance {
    pub omega_src: f64,
    pub omega_tar: f64,
}

impl Default for Guidance {
    fn default() -> Self {
        Self {
            omega_src: 3.5,
            omega_tar: 3.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditConfig {
    pub variant: Variant,
    pub strength: f64,
    pub grid: TimeGrid,
    pub n_max: usize,
    pub guidance: Guidance,
    pub init_mode: InitMode,
    pub seed: Seed,
    /// Evaluate and record the fidelity/steering split even when the variant does not need it.
    #[serde(default = "default_true")]
    pub record_decomposition: bool,
}

fn default_true() -> bool {
    true
}

impl EditConfig {
    /// `T = 28`, `n_max = 20`, guidance 3.5 on both branches, noisy-source init.
    pub fn new(variant: Variant, strength: f64) -> Self {
        Self {
            variant,
            strength,
            grid: TimeGrid::uniform(28).expect("28 > 0"),
            n_max: 20,
            guidance: Guidance::default(),
            init_mode: InitMode::NoisySource,
            seed: Seed(0),
            record_decomposition: true,
        }
    }

    /// Checks invariants and pins the strength to 1 for FlowEdit.
    pub fn validated(mut self) -> Result<Self> {
        let steps = self.grid.steps();
        if self.n_max == 0 || self.n_max > steps {
            return Err(Error::invalid(format!(
                "n_max = {} outside 1..={steps}",
                self.n_max
            )));
        }
        if !self.strength.is_finite() {
            return Err(Error::invalid("strength must be finite"));
        }
        if !(self.guidance.omega_src.is_finite() && self.guidance.omega_tar.is_finite()) {
            return Err(Error::invalid("guidance scales must be finite"));
        }
        if self.variant == Variant::FlowEdit {
            self.strength = 1.0;
        }
        if self.variant == Variant::FlowSlider {
            self.record_decomposition = true;
        }
        Ok(self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditStepRecord {
    pub i: usize,
    pub t: f64,
    pub z_src: State,
    pub z_tar: State,
    /// Edit state at `t_i`, before the update.
    pub z_edit: State,
    pub v_tar: Velocity,
    pub v_src: Velocity,
    pub v_delta: Velocity,
    pub v_fid: Option<Velocity>,
    pub v_steer: Option<Velocity>,
    pub v_applied: Velocity,
    /// Angle between `v_fid` and `v_steer` in radians; absent when either is near zero.
    pub theta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditResult {
    pub config: EditConfig,
    pub c_src: Condition,
    pub c_tar: Condition,
    pub x_src: State,
    pub noise: State,
    /// Ordered `i = n_max` down to `1`.
    pub steps: Vec<EditStepRecord>,
    pub x_edit: State,
}

impl EditResult {
    /// Checks the stored trajectory against its own Euler recurrence, bit for bit.
    pub fn replays(&self) -> bool {
        let grid = &self.config.grid;
        for (k, rec) in self.steps.iter().enumerate() {
            let Ok(next) = euler_step(&rec.z_edit, rec.t, grid.time(rec.i - 1), &rec.v_applied) else {
                return false;
            };
            let expected = self.steps.get(k + 1).map_or(&self.x_edit, |r| &r.z_edit);
            if &next != expected {
                return false;
            }
        }
        true
    }
}

/// Noisy source state `(1 - t) x_src + t eps`.
pub fn src_state(x_src: &State, noise: &State, t: f64) -> Result<State> {
    check_dims("source state", x_src.dim(), noise.dim())?;
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::invalid(format!("time {t} outside [0, 1]")));
    }
    Ok(State::from_raw(
        x_src
            .as_slice()
            .iter()
            .zip(noise.as_slice())
            .map(|(x, e)| (1.0 - t) * x + t * e)
            .collect(),
    ))
}

/// Anchored target `z_edit + z_src - x_src`, evaluated as `(z_edit - x_src) + z_src`
/// so that `z_edit == x_src` yields `z_src` exactly.
pub fn anchored_target(z_edit: &State, z_src: &State, x_src: &State) -> Result<State> {
    check_dims("anchored target", z_src.dim(), z_edit.dim())?;
    check_dims("anchored target", z_src.dim(), x_src.dim())?;
    Ok(z_edit.sub(x_src).add(z_src))
}

fn guided<F: VelocityField + ?Sized>(
    field: &F,
    z: &State,
    t: f64,
    c: &Condition,
    omega: f64,
) -> Result<Velocity> {
    cfg_velocity(field, z, t, c, omega, &Condition::Null)
}

/// `V(z_tar, t, c_tar) - V(z_src, t, c_src)` with guidance `omega_tar` and `omega_src`.
pub fn velocity_delta<F: VelocityField + ?Sized>(
    field: &F,
    z_tar: &State,
    z_src: &State,
    c_src: &Condition,
    c_tar: &Condition,
    t: f64,
    guidance: Guidance,
) -> Result<Velocity> {
    let v_tar = guided(field, z_tar, t, c_tar, guidance.omega_tar)?;
    let v_src = guided(field, z_src, t, c_src, guidance.omega_src)?;
    Ok(v_tar.sub(&v_src))
}

/// The three guided evaluations of one step and the split built from them.
#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    pub v_fid: Velocity,
    pub v_steer: Velocity,
    /// `V(z_tar, t, c_tar)`
    pub v_tar: Velocity,
    /// `V(z_tar, t, c_src)`
    pub v_cross: Velocity,
    /// `V(z_src, t, c_src)`
    pub v_src: Velocity,
}

impl Decomposition {
    pub fn v_delta(&self) -> Velocity {
        self.v_tar.sub(&self.v_src)
    }
}

pub fn decompose<F: VelocityField + ?Sized>(
    field: &F,
    z_tar: &State,
    z_src: &State,
    c_src: &Condition,
    c_tar: &Condition,
    t: f64,
    guidance: Guidance,
) -> Result<Decomposition> {
    let v_tar = guided(field, z_tar, t, c_tar, guidance.omega_tar)?;
    let v_cross = guided(field, z_tar, t, c_src, guidance.omega_src)?;
    let v_src = guided(field, z_src, t, c_src, guidance.omega_src)?;
    Ok(Decomposition {
        v_fid: v_cross.sub(&v_src),
        v_steer: v_tar.sub(&v_cross),
        v_tar,
        v_cross,
        v_src,
    })
}

fn check_strength(s: f64) -> Result<()> {
    if !s.is_finite() {
        return Err(Error::invalid("strength must be finite"));
    }
    Ok(())
}

/// `v_fid + s v_steer`.
pub fn modulated_delta(v_fid: &Velocity, v_steer: &Velocity, s: f64) -> Result<Velocity> {
    check_strength(s)?;
    check_dims("modulated delta", v_fid.dim(), v_steer.dim())?;
    Ok(v_fid.axpy(s, v_steer))
}

/// `s v_delta`.
pub fn naive_delta(v_delta: &Velocity, s: f64) -> Result<Velocity> {
    check_strength(s)?;
    Ok(v_delta.scale(s))
}

/// `(1 - s) v_src + s v_tar`.
pub fn interp_delta(v_src: &Velocity, v_tar: &Velocity, s: f64) -> Result<Velocity> {
    check_strength(s)?;
    check_dims("interpolated delta", v_src.dim(), v_tar.dim())?;
    Ok(v_src.scale(1.0 - s).add(&v_tar.scale(s)))
}

/// Slider update as applied inside [`run_edit`]: `v_delta + (s - 1) v_steer`.
///
/// Equal to `v_fid + s v_steer` because `v_delta = v_fid + v_steer`; this form
/// returns `v_delta` bit for bit at `s = 1`.
pub fn slider_update(v_delta: &Velocity, v_steer: &Velocity, s: f64) -> Result<Velocity> {
    check_strength(s)?;
    check_dims("slider update", v_delta.dim(), v_steer.dim())?;
    Ok(v_delta.axpy(s - 1.0, v_steer))
}

/// Runs an edit with noise drawn from `config.seed`.
pub fn run_edit<F: VelocityField + ?Sized>(
    field: &F,
    x_src: &State,
    c_src: &Condition,
    c_tar: &Condition,
    config: &EditConfig,
) -> Result<EditResult> {
    let noise = gaussian_noise(config.seed, x_src.dim())?;
    run_edit_with_noise(field, x_src, &noise, c_src, c_tar, config)
}

/// Runs an edit with caller-supplied noise, so several strengths can share one draw.
pub fn run_edit_with_noise<F: VelocityField + ?Sized>(
    field: &F,
    x_src: &State,
    noise: &State,
    c_src: &Condition,
    c_tar: &Condition,
    config: &EditConfig,
) -> Result<EditResult> {
    let config = config.clone().validated()?;
    check_dims("edit source", field.dim(), x_src.dim())?;
    check_dims("edit noise", field.dim(), noise.dim())?;
    for c in [c_src, c_tar] {
        if !field.has_condition(c) {
            return Err(Error::UnknownCondition(c.to_string()));
        }
    }
    let grid = &config.grid;
    let s = config.strength;
    let g = config.guidance;
    let mut z_edit = match config.init_mode {
        InitMode::NoisySource => src_state(x_src, noise, grid.time(config.n_max))?,
        InitMode::CleanSource => x_src.clone(),
    };
    let mut steps: Vec<EditStepRecord> = Vec::with_capacity(config.n_max);
    for i in (1..=config.n_max).rev() {
        let t = grid.time(i);
        let step = (|| -> Result<(EditStepRecord, State)> {
            let z_src = src_state(x_src, noise, t)?;
            let z_tar = anchored_target(&z_edit, &z_src, x_src)?;
            let v_tar = guided(field, &z_tar, t, c_tar, g.omega_tar)?;
            let v_src = guided(field, &z_src, t, c_src, g.omega_src)?;
            let v_delta = v_tar.sub(&v_src);
            let (v_fid, v_steer) = if config.record_decomposition {
                let v_cross = guided(field, &z_tar, t, c_src, g.omega_src)?;
                (Some(v_cross.sub(&v_src)), Some(v_tar.sub(&v_cross)))
            } else {
                (None, None)
            };
            let v_applied = match config.variant {
                Variant::FlowEdit => v_delta.clone(),
                Variant::FlowSlider => {
                    let steer = v_steer.as_ref().ok_or_else(|| Error::Internal("missing steering term".into()))?;
                    slider_update(&v_delta, steer, s)?
                }
                Variant::NaiveScaling => naive_delta(&v_delta, s)?,
                Variant::LinearInterp => interp_delta(&v_src, &v_tar, s)?,
            };
            let theta = match (&v_fid, &v_steer) {
                (Some(f), Some(st)) if f.norm() >= NORM_EPS && st.norm() >= NORM_EPS => {
                    Some(geometry::angle(f, st)?.to_radians())
                }
                _ => None,
            };
            let next = euler_step(&z_edit, t, grid.time(i - 1), &v_applied)?;
            Ok((
                EditStepRecord {
                    i,
                    t,
                    z_src,
                    z_tar,
                    z_edit: z_edit.clone(),
                    v_tar,
                    v_src,
                    v_delta,
                    v_fid,
                    v_steer,
                    v_applied,
                    theta,
                },
                next,
            ))
        })();
        match step {
            Ok((record, next)) => {
                steps.push(record);
                z_edit = next;
            }
            Err(e) => {
                return Err(Error::AbortedRun {
                    step: i,
                    partial: steps,
                    source: Box::new(e),
                })
            }
        }
    }
    Ok(EditResult {
        config,
        c_src: c_src.clone(),
        c_tar: c_tar.clone(),
        x_src: x_src.clone(),
        noise: noise.clone(),
        steps,
        x_edit: z_edit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::AnalyticField;
    use crate::gmm::{Covariance, GaussianMixtureModel};
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Mutex;

    fn st(v: &[f64]) -> State {
        State::new(v.to_vec()).unwrap()
    }

    fn vel(v: &[f64]) -> Velocity {
        Velocity::new(v.to_vec()).unwrap()
    }

    fn two_gaussians() -> AnalyticField {
        AnalyticField::pair(
            ("src", GaussianMixtureModel::gaussian(st(&[-3.0, 0.0]), Covariance::identity(2)).unwrap()),
            ("tar", GaussianMixtureModel::gaussian(st(&[3.0, 0.0]), Covariance::identity(2)).unwrap()),
        )
        .unwrap()
    }

    fn conds() -> (Condition, Condition) {
        (Condition::id("src"), Condition::id("tar"))
    }

    #[test]
    fn source_state_and_anchor() {
        let x = st(&[2.0, 0.0]);
        let e = st(&[0.0, 2.0]);
        assert_eq!(src_state(&x, &e, 0.0).unwrap(), x);
        assert_eq!(src_state(&x, &e, 1.0).unwrap(), e);
        assert_eq!(src_state(&x, &e, 0.5).unwrap().as_slice(), &[1.0, 1.0]);
        assert!(src_state(&x, &st(&[1.0]), 0.5).is_err());

        let z_src = st(&[0.3, -1.7]);
        assert_eq!(anchored_target(&x, &z_src, &x).unwrap(), z_src);
        let z_edit = st(&[1.0, 1.0]);
        assert_eq!(
            anchored_target(&z_edit, &st(&[2.0, 0.0]), &st(&[1.0, 0.0])).unwrap().as_slice(),
            &[2.0, 1.0]
        );
        let near = anchored_target(&z_edit, &x, &x).unwrap();
        assert!(near.max_abs_diff(&z_edit) < 1e-15);
        assert!(anchored_target(&z_edit, &st(&[1.0]), &x).is_err());
    }

    #[test]
    fn update_rules() {
        let f = vel(&[1.0, 0.0]);
        let s = vel(&[0.0, 2.0]);
        assert_eq!(modulated_delta(&f, &s, 3.0).unwrap().as_slice(), &[1.0, 6.0]);
        assert_eq!(modulated_delta(&f, &s, 0.0).unwrap(), f);
        assert_eq!(modulated_delta(&f, &s, 1.0).unwrap(), f.add(&s));
        assert_eq!(modulated_delta(&f, &s, -1.0).unwrap(), f.sub(&s));
        assert!(modulated_delta(&f, &s, f64::NAN).is_err());

        let d = vel(&[1.0, -1.0]);
        assert_eq!(naive_delta(&d, 1.0).unwrap(), d);
        assert_eq!(naive_delta(&d, 2.0).unwrap().as_slice(), &[2.0, -2.0]);
        assert!(naive_delta(&d, f64::INFINITY).is_err());

        let (a, b) = (vel(&[1.0, 0.0]), vel(&[0.0, 1.0]));
        assert_eq!(interp_delta(&a, &b, 0.0).unwrap(), a);
        assert_eq!(interp_delta(&a, &b, 1.0).unwrap(), b);
        assert_eq!(interp_delta(&a, &b, 2.0).unwrap().as_slice(), &[-1.0, 2.0]);
    }

    #[test]
    fn naive_distributes_over_split() {
        let f = vel(&[0.3, -1.2]);
        let s = vel(&[2.5, 0.7]);
        for k in [-2.0, 0.5, 3.0] {
            let lhs = naive_delta(&f.add(&s), k).unwrap();
            let rhs = f.scale(k).add(&s.scale(k));
            assert!(lhs.max_abs_diff(&rhs) < 1e-14);
        }
    }

    #[test]
    fn decomposition_cancellations() {
        let field = two_gaussians();
        let (c_src, c_tar) = conds();
        let g = Guidance::default();
        let z1 = st(&[0.5, 1.0]);
        let z2 = st(&[-1.0, 0.2]);
        let same = decompose(&field, &z1, &z2, &c_src, &c_src, 0.6, g).unwrap();
        assert_eq!(same.v_steer, Velocity::zeros(2));
        let same_state = decompose(&field, &z1, &z1, &c_src, &c_tar, 0.6, g).unwrap();
        assert_eq!(same_state.v_fid, Velocity::zeros(2));
        let zero = velocity_delta(&field, &z1, &z1, &c_src, &c_src, 0.6, g).unwrap();
        assert_eq!(zero, Velocity::zeros(2));
    }

    /// Records the distinct `(z, t, c)` queries it sees.
    struct Counting<'a> {
        inner: &'a AnalyticField,
        calls: AtomicUsize,
        seen: Mutex<Vec<(Vec<u64>, Condition)>>,
    }

    impl VelocityField for Counting<'_> {
        fn dim(&self) -> usize {
            self.inner.dim()
        }
        fn velocity(&self, z: &State, t: f64, c: &Condition) -> Result<Velocity> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            let key = (z.as_slice().iter().map(|x| x.to_bits()).collect(), c.clone());
            let mut seen = self.seen.lock().unwrap();
            if !seen.contains(&key) {
                seen.push(key);
            }
            self.inner.velocity(z, t, c)
        }
        fn has_condition(&self, c: &Condition) -> bool {
            self.inner.has_condition(c)
        }
    }

    #[test]
    fn decompose_uses_three_guided_evaluations() {
        let field = two_gaussians();
        let counting = Counting {
            inner: &field,
            calls: AtomicUsize::new(0),
            seen: Mutex::new(Vec::new()),
        };
        let (c_src, c_tar) = conds();
        decompose(&counting, &st(&[0.5, 1.0]), &st(&[-1.0, 0.2]), &c_src, &c_tar, 0.6, Guidance::default())
            .unwrap();
        // each guided evaluation is one conditional plus one null query
        assert_eq!(counting.calls.load(Ordering::SeqCst), 6);
        let seen = counting.seen.lock().unwrap();
        let conditional: Vec<_> = seen.iter().filter(|(_, c)| !c.is_null()).collect();
        assert_eq!(conditional.len(), 3);
    }

    #[test]
    fn slider_update_matches_modulated_delta() {
        let field = two_gaussians();
        let (c_src, c_tar) = conds();
        let d = decompose(&field, &st(&[0.5, 1.0]), &st(&[-1.0, 0.2]), &c_src, &c_tar, 0.6, Guidance::default())
            .unwrap();
        for s in [-3.0, 0.0, 1.0, 2.5, 5.0] {
            let a = slider_update(&d.v_delta(), &d.v_steer, s).unwrap();
            let b = modulated_delta(&d.v_fid, &d.v_steer, s).unwrap();
            assert!(a.max_abs_diff(&b) <= 1e-12);
        }
        assert_eq!(slider_update(&d.v_delta(), &d.v_steer, 1.0).unwrap(), d.v_delta());
    }

    #[test]
    fn config_validation() {
        let mut c = EditConfig::new(Variant::FlowSlider, 2.0);
        c.n_max = 0;
        assert!(c.clone().validated().is_err());
        c.n_max = 29;
        assert!(c.clone().validated().is_err());
        c.n_max = 28;
        assert!(c.clone().validated().is_ok());
        let fe = EditConfig::new(Variant::FlowEdit, 4.0).validated().unwrap();
        assert_eq!(fe.strength, 1.0);
        assert!(EditConfig::new(Variant::FlowSlider, f64::NAN).validated().is_err());
        assert_eq!("naive_scaling".parse::<Variant>().unwrap(), Variant::NaiveScaling);
        assert!("bogus".parse::<Variant>().is_err());
    }

    #[test]
    fn flowslider_at_one_is_flowedit() {
        let field = two_gaussians();
        let (c_src, c_tar) = conds();
        let x = st(&[-3.2, 0.4]);
        for init in [InitMode::NoisySource, InitMode::CleanSource] {
            let mut a = EditConfig::new(Variant::FlowSlider, 1.0);
            a.init_mode = init;
            a.seed = Seed(9);
            let mut b = a.clone();
            b.variant = Variant::FlowEdit;
            let ra = run_edit(&field, &x, &c_src, &c_tar, &a).unwrap();
            let rb = run_edit(&field, &x, &c_src, &c_tar, &b).unwrap();
            assert!(ra.x_edit.max_abs_diff(&rb.x_edit) <= 1e-12);
            assert_eq!(ra.steps.len(), 20);
            assert!(ra.replays() && rb.replays());
        }
    }

    #[test]
    fn identity_edit_is_exact_for_difference_variants() {
        let field = two_gaussians();
        let c = Condition::id("src");
        let x = st(&[-2.5, 0.8]);
        for variant in [Variant::FlowEdit, Variant::FlowSlider, Variant::NaiveScaling] {
            for s in [-3.0, 0.0, 2.0, 5.0] {
                let mut cfg = EditConfig::new(variant, s);
                cfg.init_mode = InitMode::CleanSource;
                let r = run_edit(&field, &x, &c, &c, &cfg).unwrap();
                assert_eq!(r.x_edit, x, "{variant} s={s}");
                assert!(r.steps.iter().all(|st| st.v_applied == Velocity::zeros(2)));
            }
        }
    }

    #[test]
    fn n_max_equal_to_t_starts_from_noise() {
        let field = two_gaussians();
        let (c_src, c_tar) = conds();
        let mut cfg = EditConfig::new(Variant::FlowSlider, 2.0);
        cfg.n_max = 28;
        let r = run_edit(&field, &st(&[-3.0, 0.0]), &c_src, &c_tar, &cfg).unwrap();
        assert_eq!(r.steps.len(), 28);
        assert_eq!(r.steps[0].z_edit, r.noise);
        assert_eq!(r.steps[0].z_src, r.noise);
    }

    #[test]
    fn fast_mode_skips_decomposition() {
        let field = two_gaussians();
        let (c_src, c_tar) = conds();
        let mut cfg = EditConfig::new(Variant::NaiveScaling, 2.0);
        cfg.record_decomposition = false;
        let fast = run_edit(&field, &st(&[-3.0, 0.0]), &c_src, &c_tar, &cfg).unwrap();
        assert!(fast.steps.iter().all(|s| s.v_fid.is_none() && s.theta.is_none()));
        cfg.record_decomposition = true;
        let full = run_edit(&field, &st(&[-3.0, 0.0]), &c_src, &c_tar, &cfg).unwrap();
        assert_eq!(fast.x_edit, full.x_edit);
    }

    #[test]
    fn unknown_condition_rejected() {
        let field = two_gaussians();
        let cfg = EditConfig::new(Variant::FlowSlider, 2.0);
        let err = run_edit(&field, &st(&[0.0, 0.0]), &Condition::id("src"), &Condition::id("nope"), &cfg);
        assert!(matches!(err, Err(Error::UnknownCondition(_))));
    }

    struct BreaksBelow(AnalyticField, f64);

    impl VelocityField for BreaksBelow {
        fn dim(&self) -> usize {
            2
        }
        fn velocity(&self, z: &State, t: f64, c: &Condition) -> Result<Velocity> {
            if t < self.1 {
                return Err(Error::OutOfDomain(format!("t = {t}")));
            }
            self.0.velocity(z, t, c)
        }
        fn has_condition(&self, c: &Condition) -> bool {
            self.0.has_condition(c)
        }
    }

    #[test]
    fn aborted_run_keeps_partial_trajectory() {
        let field = BreaksBelow(two_gaussians(), 0.5);
        let (c_src, c_tar) = conds();
        let cfg = EditConfig::new(Variant::FlowSlider, 2.0);
        match run_edit(&field, &st(&[-3.0, 0.0]), &c_src, &c_tar, &cfg) {
            Err(Error::AbortedRun { step, partial, .. }) => {
                // t_i = i/28 >= 0.5 for i >= 14
                assert_eq!(step, 13);
                assert_eq!(partial.len(), 20 - 13);
                assert_eq!(partial.last().unwrap().i, 14);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn json_roundtrip() {
        let field = two_gaussians();
        let (c_src, c_tar) = conds();
        let r = run_edit(&field, &st(&[-3.0, 0.5]), &c_src, &c_tar, &EditConfig::new(Variant::FlowSlider, 3.0))
            .unwrap();
        let text = serde_json::to_string(&r).unwrap();
        let back: EditResult = serde_json::from_str(&text).unwrap();
        assert_eq!(r, back);
    }
}
