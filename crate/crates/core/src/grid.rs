use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// An evenly spaced, inclusive range of evaluation points.
///
/// Points are computed as `start + i * step` rather than by accumulation, so
/// a grid always reproduces the same values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    start: f64,
    stop: f64,
    step: f64,
}

impl Grid {
    pub fn new(start: f64, stop: f64, step: f64) -> Result<Self> {
        if !(start.is_finite() && stop.is_finite() && step.is_finite()) {
            return Err(Error::input("grid bounds and step must be finite"));
        }
        if step <= 0.0 {
            return Err(Error::input(format!(
                "grid step must be positive, got {step}"
            )));
        }
        if stop < start {
            return Err(Error::input(format!(
                "empty grid: stop {stop} < start {start}"
            )));
        }
        Ok(Grid { start, stop, step })
    }

    pub fn start(&self) -> f64 {
        self.start
    }

    pub fn stop(&self) -> f64 {
        self.stop
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn len(&self) -> usize {
        // Tolerate the last point landing a hair past `stop` from rounding.
        let span = (self.stop - self.start) / self.step;
        (span + 1e-9).floor() as usize + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.len())
            .map(|i| self.start + i as f64 * self.step)
            .collect()
    }
}

impl fmt::Display for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.start, self.stop, self.step)
    }
}

/// Parses `start:stop:step`.
impl FromStr for Grid {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 3 {
            return Err(Error::input(format!(
                "grid must be start:stop:step, got {s:?}"
            )));
        }
        let mut vals = [0.0; 3];
        for (v, p) in vals.iter_mut().zip(&parts) {
            *v = p
                .trim()
                .parse()
                .map_err(|_| Error::input(format!("bad number {p:?} in grid {s:?}")))?;
        }
        Grid::new(vals[0], vals[1], vals[2])
    }
}
