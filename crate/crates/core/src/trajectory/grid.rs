use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A discretization `0 = t_0 < t_1 < ... < t_T = 1` of the unit interval.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    times: Vec<f64>,
}

impl TimeGrid {
    /// `t_i = i / T`. The endpoints are exactly 0 and 1.
    pub fn uniform(steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::invalid("time grid needs at least one step"));
        }
        let n = steps as f64;
        Ok(TimeGrid {
            times: (0..=steps).map(|i| i as f64 / n).collect(),
        })
    }

    pub fn from_times(times: Vec<f64>) -> Result<Self> {
        if times.len() < 2 {
            return Err(Error::invalid("time grid needs at least two points"));
        }
        if times[0] != 0.0 || *times.last().unwrap() != 1.0 {
            return Err(Error::invalid("time grid must start at 0 and end at 1"));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("time grid must be strictly increasing"));
        }
        Ok(TimeGrid { times })
    }

    /// Number of integration steps `T`.
    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// `(t_i, dt_i)` for `i = 0..T`, with `dt_i = t_{i+1} - t_i`.
    pub fn intervals(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.times.windows(2).map(|w| (w[0], w[1] - w[0]))
    }
}
