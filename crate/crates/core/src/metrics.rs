//! Edit-quality and slider-behavior metrics over pluggable feature maps.
//!
//! Image-side features come from a [`FeatureMap`] applied to states; the
//! condition-side feature of a condition is the same map applied to the mean
//! of its mixture. All features are unit length.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmm::GaussianMixtureModel;
use crate::rng::{standard_normals, Seed};
use crate::vector::{check_dims, dot, norm, State};

const UNIT_TOL: f64 = 1e-9;
const DIR_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub enum FeatureMap {
    /// `z / |z|`
    IdentityNormalize,
    /// `P z / |P z|` for a fixed Gaussian matrix `P` of shape `m x d`.
    RandomProjection(DMatrix<f64>),
}

impl FeatureMap {
    pub fn random_projection(d: usize, m: usize, seed: Seed) -> Result<Self> {
        if d == 0 || m == 0 {
            return Err(Error::invalid("projection dimensions must be >= 1"));
        }
        let mut rng = seed.rng();
        let entries = standard_normals(&mut rng, d * m);
        Ok(FeatureMap::RandomProjection(DMatrix::from_row_slice(m, d, &entries)))
    }

    pub fn image(&self, z: &State) -> Result<Vec<f64>> {
        let raw = match self {
            FeatureMap::IdentityNormalize => z.as_slice().to_vec(),
            FeatureMap::RandomProjection(p) => {
                check_dims("feature projection", p.ncols(), z.dim())?;
                (p * nalgebra::DVector::from_column_slice(z.as_slice())).as_slice().to_vec()
            }
        };
        let n = norm(&raw);
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::invalid("feature of a zero vector is undefined"));
        }
        Ok(raw.into_iter().map(|x| x / n).collect())
    }

    pub fn text(&self, gm: &GaussianMixtureModel) -> Result<Vec<f64>> {
        self.image(&gm.mean())
    }
}

fn check_unit(what: &str, v: &[f64]) -> Result<()> {
    let n = norm(v);
    if (n - 1.0).abs() > UNIT_TOL {
        return Err(Error::invalid(format!("{what} is not unit length (norm {n})")));
    }
    Ok(())
}

/// Cosine between the image-feature change and the condition-feature change.
pub fn directional_similarity(f_src: &[f64], f_edit: &[f64], g_src: &[f64], g_tar: &[f64]) -> Result<f64> {
    check_dims("directional similarity", f_src.len(), f_edit.len())?;
    check_dims("directional similarity", g_src.len(), g_tar.len())?;
    check_dims("directional similarity", f_src.len(), g_src.len())?;
    let d_img: Vec<f64> = f_edit.iter().zip(f_src).map(|(a, b)| a - b).collect();
    let d_txt: Vec<f64> = g_tar.iter().zip(g_src).map(|(a, b)| a - b).collect();
    let (ni, nt) = (norm(&d_img), norm(&d_txt));
    if ni < DIR_EPS {
        return Err(Error::UndefinedDirection("image"));
    }
    if nt < DIR_EPS {
        return Err(Error::UndefinedDirection("condition"));
    }
    Ok((dot(&d_img, &d_txt) / (ni * nt)).clamp(-1.0, 1.0))
}

/// `1 - cos(a, b)` on unit features, in `[0, 2]`.
pub fn feature_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    check_dims("feature distance", a.len(), b.len())?;
    check_unit("feature", a)?;
    check_unit("feature", b)?;
    if a == b {
        return Ok(0.0);
    }
    Ok((1.0 - dot(a, b)).clamp(0.0, 2.0))
}

/// Alignment `<f(x_edit), g(c_tar)>` of an edited state with the target condition.
pub fn edit_effect(f_edit: &[f64], g_tar: &[f64]) -> Result<f64> {
    check_dims("edit effect", f_edit.len(), g_tar.len())?;
    check_unit("image feature", f_edit)?;
    check_unit("condition feature", g_tar)?;
    Ok(dot(f_edit, g_tar).clamp(-1.0, 1.0))
}

/// Fraction of consecutive strength pairs where both the edit effect and the
/// source distance are non-decreasing (ties count as non-decreasing).
pub fn monotonicity(effects: &[f64], distances: &[f64]) -> Result<f64> {
    if effects.len() != distances.len() {
        return Err(Error::invalid(format!(
            "series lengths differ ({} vs {})",
            effects.len(),
            distances.len()
        )));
    }
    if effects.len() < 2 {
        return Err(Error::invalid("monotonicity needs at least two strengths"));
    }
    let ok = effects
        .windows(2)
        .zip(distances.windows(2))
        .filter(|(e, d)| e[1] >= e[0] && d[1] >= d[0])
        .count();
    Ok(ok as f64 / (effects.len() - 1) as f64)
}

/// Normalized triangle deficit of every consecutive triplet.
pub fn triangle_deficits<T, D>(points: &[T], dist: D) -> Result<Vec<f64>>
where
    D: Fn(&T, &T) -> f64,
{
    if points.len() < 3 {
        return Err(Error::invalid("smoothness needs at least three points"));
    }
    points
        .windows(3)
        .enumerate()
        .map(|(k, w)| {
            let span = dist(&w[0], &w[2]);
            if !(span > DIR_EPS) {
                return Err(Error::DegenerateTriplet {
                    index: k,
                    distance: span,
                });
            }
            Ok((dist(&w[0], &w[1]) + dist(&w[1], &w[2]) - span) / span)
        })
        .collect()
}

/// Worst-case normalized triangle deficit; 0 for a geodesic trajectory.
pub fn smoothness<T, D>(points: &[T], dist: D) -> Result<f64>
where
    D: Fn(&T, &T) -> f64,
{
    Ok(triangle_deficits(points, dist)?
        .into_iter()
        .fold(f64::NEG_INFINITY, f64::max))
}

pub fn euclidean(a: &State, b: &State) -> f64 {
    a.sub(b).norm()
}

/// Stand-ins for perceptual preservation distances between a source and an edit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreservationDistances {
    pub euclid: f64,
    pub cosfeat: f64,
    /// Under the covariance of the reference component nearest to `x_src`.
    pub mahal: f64,
    /// `log p(x_src) - log p(x_edit)` under the reference mixture (signed).
    pub logdens_gap: f64,
}

pub fn preservation_distances(
    x_src: &State,
    x_edit: &State,
    reference: &GaussianMixtureModel,
    features: &FeatureMap,
) -> Result<PreservationDistances> {
    check_dims("preservation", x_src.dim(), x_edit.dim())?;
    let k = reference.nearest_component(x_src)?;
    Ok(PreservationDistances {
        euclid: euclidean(x_src, x_edit),
        cosfeat: feature_distance(&features.image(x_src)?, &features.image(x_edit)?)?,
        mahal: reference.mahalanobis(k, x_edit, x_src)?,
        logdens_gap: reference.log_density(x_src)? - reference.log_density(x_edit)?,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrengthPoint {
    pub s: f64,
    pub x_edit: State,
    pub edit_effect: f64,
    /// Preservation distance from the source used for monotonicity.
    pub distance: f64,
    pub features: Vec<f64>,
}

/// Edits of one source at strictly increasing strengths.
#[derive(Debug, Clone, PartialEq)]
pub struct StrengthSeries {
    x_src: State,
    points: Vec<StrengthPoint>,
}

impl StrengthSeries {
    pub fn new(x_src: State, points: Vec<StrengthPoint>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::invalid("strength series needs at least two strengths"));
        }
        if points.windows(2).any(|w| !(w[0].s < w[1].s)) {
            return Err(Error::invalid("strengths must be strictly increasing"));
        }
        Ok(Self { x_src, points })
    }

    /// Builds the series from edited states, computing effect and Euclidean distance.
    pub fn from_edits(
        x_src: &State,
        edits: &[(f64, State)],
        features: &FeatureMap,
        g_tar: &[f64],
    ) -> Result<Self> {
        let points = edits
            .iter()
            .map(|(s, x)| {
                let f = features.image(x)?;
                Ok(StrengthPoint {
                    s: *s,
                    x_edit: x.clone(),
                    edit_effect: edit_effect(&f, g_tar)?,
                    distance: euclidean(x_src, x),
                    features: f,
                })
            })
            .collect::<Result<_>>()?;
        Self::new(x_src.clone(), points)
    }

    pub fn x_src(&self) -> &State {
        &self.x_src
    }

    pub fn points(&self) -> &[StrengthPoint] {
        &self.points
    }

    pub fn monotonicity(&self) -> Result<f64> {
        let e: Vec<f64> = self.points.iter().map(|p| p.edit_effect).collect();
        let d: Vec<f64> = self.points.iter().map(|p| p.distance).collect();
        monotonicity(&e, &d)
    }

    /// Smoothness of the edited states under Euclidean distance.
    pub fn smoothness(&self) -> Result<f64> {
        smoothness(&self.points, |a, b| euclidean(&a.x_edit, &b.x_edit))
    }
}

pub type DistanceFn<'a> = &'a dyn Fn(&State, &State) -> Result<f64>;

#[derive(Debug, Clone, PartialEq)]
pub struct TradeoffTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

/// One row per strength: `s`, edit effect, then each named distance from the source.
pub fn tradeoff_table(series: &StrengthSeries, distances: &[(&str, DistanceFn<'_>)]) -> Result<TradeoffTable> {
    let mut columns = vec!["s".to_string(), "edit_effect".to_string()];
    columns.extend(distances.iter().map(|(n, _)| n.to_string()));
    let rows = series
        .points
        .iter()
        .map(|p| {
            let mut row = vec![p.s, p.edit_effect];
            for (_, d) in distances {
                row.push(d(&series.x_src, &p.x_edit)?);
            }
            Ok(row)
        })
        .collect::<Result<_>>()?;
    Ok(TradeoffTable { columns, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gmm::{Component, Covariance};
    use proptest::prelude::*;

    fn st(v: &[f64]) -> State {
        State::new(v.to_vec()).unwrap()
    }

    #[test]
    fn directional_cases() {
        let f_src = [1.0, 0.0];
        let g_src = [0.0, 1.0];
        let g_tar = [1.0, 0.0];
        // d_txt = (1, -1)
        let par = directional_similarity(&f_src, &[2.0, -1.0], &g_src, &g_tar).unwrap();
        assert!((par - 1.0).abs() < 1e-15);
        let orth = directional_similarity(&f_src, &[2.0, 1.0], &g_src, &g_tar).unwrap();
        assert!(orth.abs() < 1e-15);
        let anti = directional_similarity(&f_src, &[0.0, 1.0], &g_src, &g_tar).unwrap();
        assert!((anti + 1.0).abs() < 1e-15);
        assert!(matches!(
            directional_similarity(&f_src, &f_src, &g_src, &g_tar),
            Err(Error::UndefinedDirection("image"))
        ));
        assert!(matches!(
            directional_similarity(&f_src, &g_src, &g_src, &g_src),
            Err(Error::UndefinedDirection("condition"))
        ));
    }

    #[test]
    fn distance_and_effect_cases() {
        let a = [1.0, 0.0];
        let b = [0.0, 1.0];
        let c = [-1.0, 0.0];
        assert_eq!(feature_distance(&a, &a).unwrap(), 0.0);
        assert_eq!(feature_distance(&a, &b).unwrap(), 1.0);
        assert_eq!(feature_distance(&a, &c).unwrap(), 2.0);
        assert!(feature_distance(&a, &[2.0, 0.0]).is_err());
        assert_eq!(edit_effect(&a, &a).unwrap(), 1.0);
        assert_eq!(edit_effect(&a, &b).unwrap(), 0.0);
        assert_eq!(edit_effect(&a, &c).unwrap(), -1.0);
        assert!(edit_effect(&[0.5, 0.5], &a).is_err());
    }

    #[test]
    fn monotonicity_cases() {
        assert_eq!(monotonicity(&[0.1, 0.2, 0.3], &[0.0, 0.1, 0.2]).unwrap(), 1.0);
        assert_eq!(monotonicity(&[0.1, 0.3, 0.2], &[0.0, 0.1, 0.2]).unwrap(), 0.5);
        assert_eq!(monotonicity(&[0.4; 5], &[0.2; 5]).unwrap(), 1.0);
        assert_eq!(monotonicity(&[0.5, 0.4, 0.3], &[0.0, 0.1, 0.2]).unwrap(), 0.0);
        assert!(monotonicity(&[0.1], &[0.1]).is_err());
        assert!(monotonicity(&[0.1, 0.2], &[0.1]).is_err());
    }

    #[test]
    fn smoothness_cases() {
        let line: Vec<State> = (0..5).map(|k| st(&[k as f64, 2.0 * k as f64])).collect();
        assert_eq!(smoothness(&line, euclidean).unwrap(), 0.0);

        let pts = [0usize, 1, 2];
        assert_eq!(smoothness(&pts, |_, _| 1.0).unwrap(), 1.0);

        // five points, unit legs; span of triplet k set to 2 / (1 + deficit_k)
        let deficits = [0.1, 0.7, 0.1];
        let idx: Vec<usize> = (0..5).collect();
        let dist = |a: &usize, b: &usize| -> f64 {
            let (a, b) = ((*a).min(*b), (*a).max(*b));
            match b - a {
                0 => 0.0,
                1 => 1.0,
                2 => 2.0 / (1.0 + deficits[a]),
                _ => 3.0,
            }
        };
        let d = triangle_deficits(&idx, dist).unwrap();
        for (got, want) in d.iter().zip(deficits) {
            assert!((got - want).abs() < 1e-14);
        }
        assert!((smoothness(&idx, dist).unwrap() - 0.7).abs() < 1e-14);

        let same = [st(&[1.0]), st(&[1.0]), st(&[1.0])];
        assert!(matches!(
            smoothness(&same, euclidean),
            Err(Error::DegenerateTriplet { index: 0, .. })
        ));
        assert!(smoothness(&same[..2], euclidean).is_err());
    }

    #[test]
    fn smoothness_max_over_explicit_deficits() {
        // collinear points with one detour: only triplets touching the detour are non-zero
        let pts = [st(&[0.0, 0.0]), st(&[1.0, 0.0]), st(&[2.0, 0.0]), st(&[3.0, 1.0]), st(&[4.0, 0.0])];
        let d = triangle_deficits(&pts, euclidean).unwrap();
        assert_eq!(d[0], 0.0);
        let expected = (1.0 + 2f64.sqrt() - 5f64.sqrt()) / 5f64.sqrt();
        assert!((d[1] - expected).abs() < 1e-15);
        let worst = smoothness(&pts, euclidean).unwrap();
        assert_eq!(worst, d.iter().cloned().fold(f64::MIN, f64::max));
    }

    #[test]
    fn preservation_cases() {
        let reference = GaussianMixtureModel::new(vec![
            Component::new(0.5, st(&[-3.0, 0.0]), Covariance::Diagonal(vec![1.0, 4.0])),
            Component::new(0.5, st(&[3.0, 0.0]), Covariance::identity(2)),
        ])
        .unwrap();
        let fm = FeatureMap::IdentityNormalize;
        let x = st(&[-2.5, 0.3]);
        let same = preservation_distances(&x, &x, &reference, &fm).unwrap();
        assert_eq!((same.euclid, same.cosfeat, same.mahal, same.logdens_gap), (0.0, 0.0, 0.0, 0.0));
        let step = preservation_distances(&x, &st(&[-1.5, 0.3]), &reference, &fm).unwrap();
        assert!((step.mahal - 1.0).abs() < 1e-15);
        let step_y = preservation_distances(&x, &st(&[-2.5, 2.3]), &reference, &fm).unwrap();
        assert!((step_y.mahal - 1.0).abs() < 1e-15);
    }

    #[test]
    fn feature_maps_are_unit_and_deterministic() {
        let p1 = FeatureMap::random_projection(3, 8, Seed(4)).unwrap();
        let p2 = FeatureMap::random_projection(3, 8, Seed(4)).unwrap();
        assert_eq!(p1, p2);
        let f = p1.image(&st(&[0.2, -1.0, 3.0])).unwrap();
        assert_eq!(f.len(), 8);
        assert!((norm(&f) - 1.0).abs() < 1e-12);
        assert!(FeatureMap::IdentityNormalize.image(&State::zeros(3)).is_err());
    }

    #[test]
    fn tradeoff_shape_and_identity() {
        let x = st(&[-3.0, 0.5]);
        let fm = FeatureMap::IdentityNormalize;
        let g_tar = vec![1.0, 0.0];
        let series = StrengthSeries::from_edits(&x, &[(1.0, x.clone()), (2.0, st(&[0.0, 1.0]))], &fm, &g_tar).unwrap();
        let eu = |a: &State, b: &State| Ok(euclidean(a, b));
        let table = tradeoff_table(&series, &[("dist_euclid", &eu)]).unwrap();
        assert_eq!(table.columns, vec!["s", "edit_effect", "dist_euclid"]);
        assert_eq!(table.rows.len(), 2);
        assert!(table.rows.iter().all(|r| r.len() == 3));
        assert_eq!(table.rows[0][2], 0.0);
        assert!(StrengthSeries::new(x.clone(), vec![series.points()[1].clone(), series.points()[0].clone()]).is_err());
    }

    fn unit(n: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-1.0..1.0f64, n)
            .prop_filter("non-zero", |v| norm(v) > 1e-3)
            .prop_map(|v| {
                let n = norm(&v);
                v.into_iter().map(|x| x / n).collect()
            })
    }

    proptest! {
        #[test]
        fn directional_similarity_scale_invariant(
            a in unit(3), b in unit(3), c in unit(3), d in unit(3), k in 0.1..10.0f64
        ) {
            prop_assume!(norm(&a.iter().zip(&b).map(|(x, y)| x - y).collect::<Vec<_>>()) > 1e-3);
            prop_assume!(norm(&c.iter().zip(&d).map(|(x, y)| x - y).collect::<Vec<_>>()) > 1e-3);
            let base = directional_similarity(&a, &b, &c, &d).unwrap();
            // rescale the image difference about f_src
            let b2: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + k * (y - x)).collect();
            let scaled = directional_similarity(&a, &b2, &c, &d).unwrap();
            prop_assert!((base - scaled).abs() <= 1e-12);
        }

        #[test]
        fn feature_distance_properties(a in unit(4), b in unit(4)) {
            let ab = feature_distance(&a, &b).unwrap();
            prop_assert!(feature_distance(&a, &a).unwrap().abs() <= 1e-15);
            prop_assert_eq!(ab, feature_distance(&b, &a).unwrap());
            prop_assert!((0.0..=2.0).contains(&ab));
        }

        #[test]
        fn sorted_series_are_monotone(mut e in prop::collection::vec(-1.0..1.0f64, 2..10), seed in 0u64..1000) {
            e.sort_by(f64::total_cmp);
            let mut d: Vec<f64> = e.iter().map(|x| x * 3.0 + seed as f64).collect();
            d.sort_by(f64::total_cmp);
            prop_assert_eq!(monotonicity(&e, &d).unwrap(), 1.0);
            let mut dec = e.clone();
            dec.dedup();
            prop_assume!(dec.len() >= 2);
            dec.reverse();
            let dd = vec![0.0; dec.len()];
            prop_assert_eq!(monotonicity(&dec, &dd).unwrap(), 0.0);
        }

        #[test]
        fn smoothness_nonnegative_for_metric(pts in prop::collection::vec(prop::collection::vec(-5.0..5.0f64, 2), 3..8)) {
            let states: Vec<State> = pts.into_iter().map(State::from_raw).collect();
            if let Ok(s) = smoothness(&states, euclidean) {
                prop_assert!(s >= -1e-12);
            }
        }
    }
}
