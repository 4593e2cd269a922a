//! Angles and projections between the fidelity and steering components.

use serde::{Deserialize, Serialize};

use crate::editor::EditResult;
use crate::error::{Error, Result};
use crate::vector::{check_dims, Velocity};

/// Norms below this are treated as directionless.
pub const NORM_EPS: f64 = 1e-12;

/// Angle between two vectors in degrees, from the cosine clamped to `[-1, 1]`.
pub fn angle(a: &Velocity, b: &Velocity) -> Result<f64> {
    check_dims("angle", a.dim(), b.dim())?;
    let (na, nb) = (a.norm(), b.norm());
    if na < NORM_EPS || nb < NORM_EPS {
        return Err(Error::UndefinedAngle { threshold: NORM_EPS });
    }
    let cos = a.dot(b) / (na * nb);
    if cos.abs() > 1.0 + 1e-9 {
        log::warn!("cosine {cos} outside [-1, 1] before clamping");
    }
    Ok(cos.clamp(-1.0, 1.0).acos().to_degrees())
}

/// `|V_fid + s V_steer|^2` expanded in norms and the angle between them.
pub fn combined_norm_sq(norm_fid: f64, norm_steer: f64, s: f64, theta_deg: f64) -> f64 {
    norm_fid * norm_fid
        + s * s * norm_steer * norm_steer
        + 2.0 * s * norm_fid * norm_steer * theta_deg.to_radians().cos()
}

/// Scalar projection of `v_fid + s v_steer` onto the unit fidelity direction.
pub fn fidelity_projection(v_fid: &Velocity, v_steer: &Velocity, s: f64) -> Result<f64> {
    check_dims("fidelity projection", v_fid.dim(), v_steer.dim())?;
    let n = v_fid.norm();
    if n < NORM_EPS {
        return Err(Error::UndefinedProjection("fidelity"));
    }
    Ok(v_fid.axpy(s, v_steer).dot(v_fid) / n)
}

/// Scalar projection of `v_fid + s v_steer` onto the unit steering direction.
pub fn steering_projection(v_fid: &Velocity, v_steer: &Velocity, s: f64) -> Result<f64> {
    check_dims("steering projection", v_fid.dim(), v_steer.dim())?;
    let n = v_steer.norm();
    if n < NORM_EPS {
        return Err(Error::UndefinedProjection("steering"));
    }
    Ok(v_fid.axpy(s, v_steer).dot(v_steer) / n)
}

/// Closed form of the fidelity projection: `|v_fid| + s |v_steer| cos(theta)`.
pub fn fidelity_projection_closed_form(v_fid: &Velocity, v_steer: &Velocity, s: f64) -> Result<f64> {
    let theta = angle(v_fid, v_steer)?;
    Ok(v_fid.norm() + s * v_steer.norm() * theta.to_radians().cos())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AngleEntry {
    pub step: usize,
    pub t: f64,
    pub theta_deg: f64,
    pub norm_fid: f64,
    pub norm_steer: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AngleSeries {
    pub run: String,
    pub entries: Vec<AngleEntry>,
    /// Steps without a defined angle (near-zero component or no decomposition recorded).
    pub skipped: usize,
}

pub const ANGLE_CSV_HEADER: &str = "step,t,theta_deg,norm_fid,norm_steer";

impl AngleSeries {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(ANGLE_CSV_HEADER);
        out.push('\n');
        for e in &self.entries {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                e.step,
                crate::fmt_f64(e.t),
                crate::fmt_f64(e.theta_deg),
                crate::fmt_f64(e.norm_fid),
                crate::fmt_f64(e.norm_steer)
            ));
        }
        out
    }
}

/// One entry per recorded step with a defined angle.
pub fn angle_series(result: &EditResult, run: impl Into<String>) -> AngleSeries {
    let mut entries = Vec::new();
    let mut skipped = 0;
    for rec in &result.steps {
        let (Some(f), Some(s)) = (&rec.v_fid, &rec.v_steer) else {
            skipped += 1;
            continue;
        };
        match angle(f, s) {
            Ok(theta_deg) => entries.push(AngleEntry {
                step: rec.i,
                t: rec.t,
                theta_deg,
                norm_fid: f.norm(),
                norm_steer: s.norm(),
            }),
            Err(_) => skipped += 1,
        }
    }
    AngleSeries {
        run: run.into(),
        entries,
        skipped,
    }
}
