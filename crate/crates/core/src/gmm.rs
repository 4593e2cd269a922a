//! Gaussian mixtures as data distributions, and the exact Rectified-Flow
//! velocity they induce along the path `z_t = (1 - t) z_1 + t z_0`,
//! with `z_0 ~ N(0, I)` independent of `z_1`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{standard_normals, Seed};
use crate::vector::{check_dims, State, Velocity};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

fn check_time(t: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::invalid(format!("time {t} outside [0, 1]")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CovarianceRepr", into = "CovarianceRepr")]
pub enum Covariance {
    /// Per-coordinate variances.
    Diagonal(Vec<f64>),
    Full(DMatrix<f64>),
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum CovarianceRepr {
    Diagonal(Vec<f64>),
    Full(Vec<Vec<f64>>),
}

impl TryFrom<CovarianceRepr> for Covariance {
    type Error = Error;

    fn try_from(repr: CovarianceRepr) -> Result<Self> {
        let cov = match repr {
            CovarianceRepr::Diagonal(v) => Covariance::Diagonal(v),
            CovarianceRepr::Full(rows) => {
                let d = rows.len();
                if rows.iter().any(|r| r.len() != d) {
                    return Err(Error::invalid("covariance matrix must be square"));
                }
                Covariance::Full(DMatrix::from_fn(d, d, |i, j| rows[i][j]))
            }
        };
        cov.validate()?;
        Ok(cov)
    }
}

impl From<Covariance> for CovarianceRepr {
    fn from(c: Covariance) -> Self {
        match c {
            Covariance::Diagonal(v) => CovarianceRepr::Diagonal(v),
            Covariance::Full(m) => CovarianceRepr::Full(
                (0..m.nrows())
                    .map(|i| m.row(i).iter().copied().collect())
                    .collect(),
            ),
        }
    }
}

/// Factorization of an SPD matrix: solves, log-determinant, and square-root products.
pub(crate) enum Factor {
    Diagonal(Vec<f64>),
    Cholesky(Cholesky<f64, Dyn>),
}

impl Factor {
    pub(crate) fn solve(&self, r: &[f64]) -> Vec<f64> {
        match self {
            Factor::Diagonal(var) => r.iter().zip(var).map(|(x, v)| x / v).collect(),
            Factor::Cholesky(ch) => ch.solve(&DVector::from_column_slice(r)).as_slice().to_vec(),
        }
    }

    pub(crate) fn log_det(&self) -> f64 {
        match self {
            Factor::Diagonal(var) => var.iter().map(|v| v.ln()).sum(),
            Factor::Cholesky(ch) => 2.0 * ch.l_dirty().diagonal().iter().map(|x| x.ln()).sum::<f64>(),
        }
    }

    /// `L xi` where `L L^T` is the factored matrix.
    pub(crate) fn mul_sqrt(&self, xi: &[f64]) -> Vec<f64> {
        match self {
            Factor::Diagonal(var) => xi.iter().zip(var).map(|(x, v)| x * v.sqrt()).collect(),
            Factor::Cholesky(ch) => (ch.l() * DVector::from_column_slice(xi)).as_slice().to_vec(),
        }
    }
}

impl Covariance {
    pub fn identity(d: usize) -> Self {
        Covariance::Diagonal(vec![1.0; d])
    }

    pub fn isotropic(d: usize, variance: f64) -> Self {
        Covariance::Diagonal(vec![variance; d])
    }

    pub fn dim(&self) -> usize {
        match self {
            Covariance::Diagonal(v) => v.len(),
            Covariance::Full(m) => m.nrows(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Covariance::Diagonal(v) => {
                if v.is_empty() || v.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
                    return Err(Error::invalid("diagonal covariance entries must be finite and > 0"));
                }
            }
            Covariance::Full(m) => {
                if m.nrows() == 0 || m.nrows() != m.ncols() {
                    return Err(Error::invalid("covariance matrix must be square and non-empty"));
                }
                if m.iter().any(|x| !x.is_finite()) {
                    return Err(Error::invalid("covariance matrix has non-finite entries"));
                }
                let scale = m.amax().max(1.0);
                if (m - m.transpose()).amax() > 1e-12 * scale {
                    return Err(Error::invalid("covariance matrix is not symmetric"));
                }
                if Cholesky::new(m.clone()).is_none() {
                    return Err(Error::invalid("covariance matrix is not positive definite"));
                }
            }
        }
        Ok(())
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        match self {
            Covariance::Diagonal(v) => DMatrix::from_diagonal(&DVector::from_column_slice(v)),
            Covariance::Full(m) => m.clone(),
        }
    }

    pub(crate) fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Covariance::Diagonal(v) => x.iter().zip(v).map(|(a, b)| a * b).collect(),
            Covariance::Full(m) => (m * DVector::from_column_slice(x)).as_slice().to_vec(),
        }
    }

    /// Covariance of `(1 - t) z_1 + t z_0` for `z_1 ~ N(., self)`: `(1-t)^2 S + t^2 I`.
    pub fn marginal(&self, t: f64) -> Covariance {
        let a = (1.0 - t) * (1.0 - t);
        let b = t * t;
        match self {
            Covariance::Diagonal(v) => Covariance::Diagonal(v.iter().map(|x| a * x + b).collect()),
            Covariance::Full(m) => {
                let d = m.nrows();
                Covariance::Full(m * a + DMatrix::identity(d, d) * b)
            }
        }
    }

    pub(crate) fn factor(&self) -> Result<Factor> {
        match self {
            Covariance::Diagonal(v) => {
                if v.iter().any(|x| !(*x > 0.0)) {
                    return Err(Error::Internal("singular diagonal covariance".into()));
                }
                Ok(Factor::Diagonal(v.clone()))
            }
            Covariance::Full(m) => Cholesky::new(m.clone())
                .map(Factor::Cholesky)
                .ok_or_else(|| Error::Internal("Cholesky factorization failed".into())),
        }
    }

    /// `M S M^T`. Stays diagonal when both `M` and `S` are diagonal.
    pub fn congruence(&self, m: &DMatrix<f64>) -> Covariance {
        let m_is_diag = m.is_square()
            && (0..m.nrows()).all(|i| (0..m.ncols()).all(|j| i == j || m[(i, j)] == 0.0));
        match self {
            Covariance::Diagonal(v) if m_is_diag => Covariance::Diagonal(
                v.iter().enumerate().map(|(i, x)| m[(i, i)] * m[(i, i)] * x).collect(),
            ),
            _ => {
                let full = m * self.to_matrix() * m.transpose();
                // re-symmetrize rounding noise
                let sym = (&full + full.transpose()) * 0.5;
                Covariance::Full(sym)
            }
        }
    }

    pub fn scaled(&self, k: f64) -> Covariance {
        match self {
            Covariance::Diagonal(v) => Covariance::Diagonal(v.iter().map(|x| k * x).collect()),
            Covariance::Full(m) => Covariance::Full(m * k),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub weight: f64,
    pub mean: State,
    pub covariance: Covariance,
}

impl Component {
    pub fn new(weight: f64, mean: State, covariance: Covariance) -> Self {
        Self {
            weight,
            mean,
            covariance,
        }
    }
}

/// Weighted sum of Gaussians sharing one dimension. Weights are positive and sum to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Component>", into = "Vec<Component>")]
pub struct GaussianMixtureModel {
    components: Vec<Component>,
}

impl TryFrom<Vec<Component>> for GaussianMixtureModel {
    type Error = Error;

    fn try_from(c: Vec<Component>) -> Result<Self> {
        Self::new(c)
    }
}

impl From<GaussianMixtureModel> for Vec<Component> {
    fn from(g: GaussianMixtureModel) -> Self {
        g.components
    }
}

/// Mean and covariance of `z_t` given one mixture component.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalParams {
    pub mean: State,
    pub covariance: Covariance,
}

/// Per-component quantities at `(z, t)` shared by the posterior and the velocity.
struct ComponentTerm {
    log_joint: f64,
    solved: Vec<f64>,
}

impl GaussianMixtureModel {
    pub fn new(components: Vec<Component>) -> Result<Self> {
        let first = components
            .first()
            .ok_or_else(|| Error::invalid("mixture needs at least one component"))?;
        let d = first.mean.dim();
        let mut total = 0.0;
        for (k, c) in components.iter().enumerate() {
            if !(c.weight.is_finite() && c.weight > 0.0) {
                return Err(Error::invalid(format!("component {k}: weight must be > 0")));
            }
            check_dims("component mean", d, c.mean.dim())?;
            check_dims("component covariance", d, c.covariance.dim())?;
            c.covariance.validate()?;
            total += c.weight;
        }
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!("mixture weights sum to {total}, not 1")));
        }
        Ok(Self { components })
    }

    /// Like [`new`](Self::new), but rescales the weights to sum to one first.
    pub fn normalized(mut components: Vec<Component>) -> Result<Self> {
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if !(total.is_finite() && total > 0.0) {
            return Err(Error::invalid("mixture weights must have a positive sum"));
        }
        for c in &mut components {
            c.weight /= total;
        }
        Self::new(components)
    }

    pub fn gaussian(mean: State, covariance: Covariance) -> Result<Self> {
        Self::new(vec![Component::new(1.0, mean, covariance)])
    }

    pub fn standard_normal(d: usize) -> Self {
        Self {
            components: vec![Component::new(1.0, State::zeros(d), Covariance::identity(d))],
        }
    }

    /// Equal-weight union of several mixtures.
    pub fn union(parts: &[&GaussianMixtureModel]) -> Result<Self> {
        if parts.is_empty() {
            return Err(Error::invalid("union of zero mixtures"));
        }
        let share = 1.0 / parts.len() as f64;
        let components = parts
            .iter()
            .flat_map(|g| {
                g.components.iter().map(move |c| Component {
                    weight: c.weight * share,
                    ..c.clone()
                })
            })
            .collect();
        Self::normalized(components)
    }

    pub fn dim(&self) -> usize {
        self.components[0].mean.dim()
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn mean(&self) -> State {
        let mut m = vec![0.0; self.dim()];
        for c in &self.components {
            for (acc, x) in m.iter_mut().zip(c.mean.as_slice()) {
                *acc += c.weight * x;
            }
        }
        State::from_raw(m)
    }

    /// Mixture covariance `sum w_k (S_k + mu_k mu_k^T) - mu mu^T`.
    pub fn covariance(&self) -> DMatrix<f64> {
        let d = self.dim();
        let mut second = DMatrix::zeros(d, d);
        for c in &self.components {
            let mu = DVector::from_column_slice(c.mean.as_slice());
            second += (c.covariance.to_matrix() + &mu * mu.transpose()) * c.weight;
        }
        let m = DVector::from_column_slice(self.mean().as_slice());
        second - &m * m.transpose()
    }

    pub fn marginal_params(&self, t: f64) -> Result<Vec<MarginalParams>> {
        check_time(t)?;
        Ok(self
            .components
            .iter()
            .map(|c| MarginalParams {
                mean: c.mean.scale(1.0 - t),
                covariance: c.covariance.marginal(t),
            })
            .collect())
    }

    fn terms(&self, z: &State, t: f64) -> Result<Vec<ComponentTerm>> {
        check_time(t)?;
        check_dims("state vs mixture", self.dim(), z.dim())?;
        let d = self.dim() as f64;
        self.components
            .iter()
            .map(|c| {
                let factor = c.covariance.marginal(t).factor()?;
                let resid: Vec<f64> = z
                    .as_slice()
                    .iter()
                    .zip(c.mean.as_slice())
                    .map(|(x, m)| x - (1.0 - t) * m)
                    .collect();
                let solved = factor.solve(&resid);
                let quad: f64 = resid.iter().zip(&solved).map(|(a, b)| a * b).sum();
                let log_joint = c.weight.ln() - 0.5 * (d * LN_2PI + factor.log_det() + quad);
                Ok(ComponentTerm { log_joint, solved })
            })
            .collect()
    }

    fn responsibilities(terms: &[ComponentTerm]) -> Vec<f64> {
        let max = terms
            .iter()
            .map(|t| t.log_joint)
            .fold(f64::NEG_INFINITY, f64::max);
        let mut r: Vec<f64> = terms.iter().map(|t| (t.log_joint - max).exp()).collect();
        let total: f64 = r.iter().sum();
        for x in &mut r {
            *x /= total;
        }
        r
    }

    /// Posterior component probabilities given `z_t = z` (log-sum-exp normalized).
    pub fn component_posterior(&self, z: &State, t: f64) -> Result<Vec<f64>> {
        Ok(Self::responsibilities(&self.terms(z, t)?))
    }

    /// Log density of `z_t` at `z`.
    pub fn log_density_at(&self, z: &State, t: f64) -> Result<f64> {
        let terms = self.terms(z, t)?;
        let max = terms
            .iter()
            .map(|t| t.log_joint)
            .fold(f64::NEG_INFINITY, f64::max);
        Ok(max + terms.iter().map(|t| (t.log_joint - max).exp()).sum::<f64>().ln())
    }

    /// Log density of the data distribution itself.
    pub fn log_density(&self, x: &State) -> Result<f64> {
        self.log_density_at(x, 0.0)
    }

    /// Exact `E[z_0 - z_1 | z_t = z]`.
    ///
    /// Per component with `A = (1-t)^2 S + t^2 I` and `r = z - (1-t) mu`:
    /// `E[z_0 | z, k] = t A^-1 r` and `E[z_1 | z, k] = mu + (1-t) S A^-1 r`,
    /// mixed by the posterior responsibilities.
    pub fn velocity(&self, z: &State, t: f64) -> Result<Velocity> {
        let terms = self.terms(z, t)?;
        let resp = Self::responsibilities(&terms);
        let mut v = vec![0.0; self.dim()];
        for ((c, term), r) in self.components.iter().zip(&terms).zip(&resp) {
            let s_u = c.covariance.mul_vec(&term.solved);
            for j in 0..v.len() {
                let e0 = t * term.solved[j];
                let e1 = c.mean[j] + (1.0 - t) * s_u[j];
                v[j] += r * (e0 - e1);
            }
        }
        Velocity::new(v)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<State> {
        let k = self.pick_component(rng.random::<f64>());
        let c = &self.components[k];
        let xi = standard_normals(rng, self.dim());
        let offset = c.covariance.factor()?.mul_sqrt(&xi);
        Ok(State::from_raw(
            c.mean.as_slice().iter().zip(&offset).map(|(m, o)| m + o).collect(),
        ))
    }

    pub fn samples(&self, seed: Seed, n: usize) -> Result<Vec<State>> {
        let mut rng = seed.rng();
        (0..n).map(|_| self.sample(&mut rng)).collect()
    }

    fn pick_component(&self, u: f64) -> usize {
        let mut acc = 0.0;
        for (k, c) in self.components.iter().enumerate() {
            acc += c.weight;
            if u < acc {
                return k;
            }
        }
        self.components.len() - 1
    }

    /// Index of the component with the largest posterior weight for a data point.
    pub fn nearest_component(&self, x: &State) -> Result<usize> {
        let terms = self.terms(x, 0.0)?;
        Ok(terms
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.log_joint.total_cmp(&b.1.log_joint))
            .map(|(k, _)| k)
            .unwrap_or(0))
    }

    /// Mahalanobis length of `a - b` under component `k`'s covariance.
    pub fn mahalanobis(&self, k: usize, a: &State, b: &State) -> Result<f64> {
        check_dims("mahalanobis", self.dim(), a.dim())?;
        check_dims("mahalanobis", self.dim(), b.dim())?;
        let c = self
            .components
            .get(k)
            .ok_or_else(|| Error::invalid(format!("no component {k}")))?;
        let r = a.sub(b);
        let solved = c.covariance.factor()?.solve(r.as_slice());
        Ok(r.as_slice().iter().zip(&solved).map(|(x, y)| x * y).sum::<f64>().max(0.0).sqrt())
    }

    pub fn translated(&self, offset: &[f64]) -> Result<Self> {
        check_dims("translation", self.dim(), offset.len())?;
        let components = self
            .components
            .iter()
            .map(|c| {
                Ok(Component {
                    mean: State::new(c.mean.as_slice().iter().zip(offset).map(|(m, o)| m + o).collect())?,
                    ..c.clone()
                })
            })
            .collect::<Result<_>>()?;
        Self::new(components)
    }

    /// Pushes the distribution through `x -> M x`.
    pub fn linear_map(&self, m: &DMatrix<f64>) -> Result<Self> {
        if m.nrows() != self.dim() || m.ncols() != self.dim() {
            return Err(Error::invalid("linear map must be d x d"));
        }
        let components = self
            .components
            .iter()
            .map(|c| {
                let mu = m * DVector::from_column_slice(c.mean.as_slice());
                Ok(Component {
                    weight: c.weight,
                    mean: State::new(mu.as_slice().to_vec())?,
                    covariance: c.covariance.congruence(m),
                })
            })
            .collect::<Result<_>>()?;
        Self::new(components)
    }

    pub fn with_weights(&self, weights: &[f64]) -> Result<Self> {
        check_dims("weights", self.components.len(), weights.len())?;
        let components = self
            .components
            .iter()
            .zip(weights)
            .map(|(c, w)| Component {
                weight: *w,
                ..c.clone()
            })
            .collect();
        Self::normalized(components)
    }

    pub fn with_scaled_covariances(&self, k: f64) -> Result<Self> {
        if !(k.is_finite() && k > 0.0) {
            return Err(Error::invalid("covariance scale must be finite and > 0"));
        }
        let components = self
            .components
            .iter()
            .map(|c| Component {
                covariance: c.covariance.scaled(k),
                ..c.clone()
            })
            .collect();
        Self::new(components)
    }
}

/// Brute-force estimate of the velocity with per-coordinate standard errors.
#[derive(Debug, Clone)]
pub struct McEstimate {
    pub velocity: Velocity,
    pub std_error: Vec<f64>,
    pub effective_sample_size: f64,
}

/// Minimum effective sample size the oracle accepts.
pub const MIN_EFFECTIVE_SAMPLES: f64 = 50.0;

/// Default kernel bandwidth, as a fraction of the marginal standard deviation.
pub const DEFAULT_BANDWIDTH: f64 = 0.1;

/// Self-normalized kernel estimate of `E[z_0 - z_1 | z_t ~= z]`.
///
/// Draws `n` pairs `(z_1, z_0)`, forms `z_t` on the straight path, and weights each
/// pair by a Gaussian kernel in `z_t - z` whose per-coordinate width is `bandwidth`
/// times the marginal standard deviation of `z_t`. Independent of the closed form in
/// [`GaussianMixtureModel::velocity`].
pub fn mc_velocity_oracle(
    gm: &GaussianMixtureModel,
    z: &State,
    t: f64,
    n: usize,
    seed: Seed,
    bandwidth: f64,
) -> Result<McEstimate> {
    if !(t > 0.0 && t < 1.0) {
        return Err(Error::invalid("oracle needs 0 < t < 1"));
    }
    if !(bandwidth.is_finite() && bandwidth > 0.0) {
        return Err(Error::invalid("bandwidth must be > 0"));
    }
    if n == 0 {
        return Err(Error::invalid("oracle needs at least one sample"));
    }
    let d = gm.dim();
    check_dims("oracle state", d, z.dim())?;

    // per-coordinate marginal variance of z_t
    let cov = gm.covariance();
    let width: Vec<f64> = (0..d)
        .map(|j| bandwidth * ((1.0 - t).powi(2) * cov[(j, j)] + t * t).sqrt())
        .collect();
    let inv_two_h2: Vec<f64> = width.iter().map(|h| 0.5 / (h * h)).collect();

    let sqrt_factors = gm
        .components()
        .iter()
        .map(|c| c.covariance.factor())
        .collect::<Result<Vec<_>>>()?;

    let mut rng = seed.rng();
    let mut sw = 0.0;
    let mut sw2 = 0.0;
    let mut swx = vec![0.0; d];
    let mut sw2x = vec![0.0; d];
    let mut sw2xx = vec![0.0; d];
    let mut diff = vec![0.0; d];
    for _ in 0..n {
        let k = gm.pick_component(rng.random::<f64>());
        let comp = &gm.components()[k];
        let xi = standard_normals(&mut rng, d);
        let offset = sqrt_factors[k].mul_sqrt(&xi);
        let noise = standard_normals(&mut rng, d);
        let mut log_w = 0.0;
        for j in 0..d {
            let z1 = comp.mean[j] + offset[j];
            let zt = (1.0 - t) * z1 + t * noise[j];
            let r = zt - z[j];
            log_w -= r * r * inv_two_h2[j];
            diff[j] = noise[j] - z1;
        }
        let w = log_w.exp();
        if w == 0.0 {
            continue;
        }
        sw += w;
        sw2 += w * w;
        for j in 0..d {
            swx[j] += w * diff[j];
            sw2x[j] += w * w * diff[j];
            sw2xx[j] += w * w * diff[j] * diff[j];
        }
    }
    let ess = if sw2 > 0.0 { sw * sw / sw2 } else { 0.0 };
    if ess < MIN_EFFECTIVE_SAMPLES {
        return Err(Error::InsufficientSamples {
            ess,
            required: MIN_EFFECTIVE_SAMPLES,
        });
    }
    let est: Vec<f64> = swx.iter().map(|x| x / sw).collect();
    let std_error = (0..d)
        .map(|j| {
            let m = est[j];
            let num = sw2xx[j] - 2.0 * m * sw2x[j] + m * m * sw2;
            (num.max(0.0)).sqrt() / sw
        })
        .collect();
    Ok(McEstimate {
        velocity: Velocity::new(est)?,
        std_error,
        effective_sample_size: ess,
    })
}

/// Effective sample size the undersmoothed oracle aims for.
pub const TARGET_EFFECTIVE_SAMPLES: f64 = 4000.0;

/// [`mc_velocity_oracle`] with the bandwidth shrunk until the effective sample size is
/// near `target_ess`.
///
/// Kernel smoothing biases the estimate by O(h^2) while the standard error falls as
/// `1/sqrt(ess)`. With many samples near `z` the bias dominates, so the bandwidth is
/// reduced by `(target_ess / ess)^(1/d)` and the estimate redrawn from the same seed.
pub fn mc_velocity_oracle_undersmoothed(
    gm: &GaussianMixtureModel,
    z: &State,
    t: f64,
    n: usize,
    seed: Seed,
    target_ess: f64,
) -> Result<McEstimate> {
    let first = mc_velocity_oracle(gm, z, t, n, seed, DEFAULT_BANDWIDTH)?;
    if first.effective_sample_size <= target_ess {
        return Ok(first);
    }
    let shrink = (target_ess / first.effective_sample_size).powf(1.0 / gm.dim() as f64);
    mc_velocity_oracle(gm, z, t, n, seed, DEFAULT_BANDWIDTH * shrink)
}
