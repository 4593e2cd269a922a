use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Integration grid `0 = t_0 < t_1 < ... < t_T = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct TimeGrid {
    times: Vec<f64>,
}

impl TimeGrid {
    /// Uniform grid `t_i = i / steps`.
    pub fn uniform(steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::invalid("time grid needs at least one step"));
        }
        let n = steps as f64;
        let times = (0..=steps).map(|i| i as f64 / n).collect();
        Ok(Self { times })
    }

    /// Explicit grid values, e.g. a shifted schedule computed elsewhere.
    pub fn from_times(times: Vec<f64>) -> Result<Self> {
        if times.len() < 2 {
            return Err(Error::invalid("time grid needs at least two nodes"));
        }
        if times[0] != 0.0 || times[times.len() - 1] != 1.0 {
            return Err(Error::invalid("time grid must start at 0 and end at 1"));
        }
        if let Some(w) = times.windows(2).position(|w| !(w[0] < w[1])) {
            return Err(Error::invalid(format!(
                "time grid not strictly increasing at index {}",
                w + 1
            )));
        }
        Ok(Self { times })
    }

    /// Number of steps `T` (one less than the node count).
    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn time(&self, i: usize) -> f64 {
        self.times[i]
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }
}

impl TryFrom<Vec<f64>> for TimeGrid {
    type Error = Error;

    fn try_from(times: Vec<f64>) -> Result<Self> {
        Self::from_times(times)
    }
}

impl From<TimeGrid> for Vec<f64> {
    fn from(g: TimeGrid) -> Vec<f64> {
        g.times
    }
}
