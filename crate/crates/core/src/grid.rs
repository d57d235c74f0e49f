//! Rectangular evaluation grids in the `(x_1, y_1)` plane.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::PhasePoint;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisSpec {
    pub min: f64,
    pub max: f64,
    pub points: usize,
}

impl AxisSpec {
    pub fn validate(&self, name: &'static str) -> Result<()> {
        if !self.min.is_finite() || !self.max.is_finite() {
            return Err(Error::invalid(name, "bounds must be finite"));
        }
        if self.points == 0 {
            return Err(Error::invalid(name, "needs at least one point"));
        }
        if self.points > 1 && !(self.max > self.min) {
            return Err(Error::invalid(
                name,
                format!("max ({}) must exceed min ({})", self.max, self.min),
            ));
        }
        Ok(())
    }

    /// Equispaced values including both ends; a single point sits at the midpoint.
    pub fn values(&self) -> Vec<f64> {
        if self.points == 1 {
            return vec![0.5 * (self.min + self.max)];
        }
        let h = self.step();
        (0..self.points).map(|i| self.min + i as f64 * h).collect()
    }

    pub fn step(&self) -> f64 {
        if self.points <= 1 {
            return 0.0;
        }
        (self.max - self.min) / (self.points - 1) as f64
    }
}

/// Grid over `(x_1, y_1)`; the remaining coordinates (when `d > 1`) are taken
/// from `anchor`, or zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub x: AxisSpec,
    pub y: AxisSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchor: Option<PhasePoint>,
}

impl GridSpec {
    pub fn new(x: AxisSpec, y: AxisSpec) -> Self {
        GridSpec { x, y, anchor: None }
    }

    /// Rectangle of `±k` standard deviations around the noise-free image of
    /// `from` for unit diffusion: `x ± k√t`, `y + xt ± k√(t³/3)`.
    pub fn around_mean(from: &PhasePoint, t: f64, k: f64, points: usize) -> Self {
        let (x0, y0) = (from.x()[0], from.y()[0]);
        let (sx, sy) = (t.sqrt(), (t * t * t / 3.0).sqrt());
        let my = y0 + x0 * t;
        GridSpec {
            x: AxisSpec {
                min: x0 - k * sx,
                max: x0 + k * sx,
                points,
            },
            y: AxisSpec {
                min: my - k * sy,
                max: my + k * sy,
                points,
            },
            anchor: if from.dim() > 1 { Some(from.clone()) } else { None },
        }
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        self.x.validate("grid.x")?;
        self.y.validate("grid.y")?;
        if let Some(a) = &self.anchor {
            if a.dim() != d {
                return Err(Error::invalid(
                    "grid.anchor",
                    format!("dimension {} does not match {d}", a.dim()),
                ));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.x.points * self.y.points
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell_area(&self) -> f64 {
        self.x.step() * self.y.step()
    }

    /// Grid points, `x` outer and `y` inner.
    pub fn points(&self, d: usize) -> Result<Vec<PhasePoint>> {
        self.validate(d)?;
        let base = self.anchor.clone().unwrap_or_else(|| PhasePoint::origin(d));
        let mut out = Vec::with_capacity(self.len());
        for &x in &self.x.values() {
            for &y in &self.y.values() {
                let mut xs = base.x().to_vec();
                let mut ys = base.y().to_vec();
                xs[0] = x;
                ys[0] = y;
                out.push(PhasePoint::new(xs, ys)?);
            }
        }
        Ok(out)
    }
}
