use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::units;

/// Catheter injection: a single rectangular pulse of contrast.
///
/// `c0` in mg/ml, `rate` in mm³/s, times in s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InjectionProtocol {
    pub c0: f64,
    pub start: f64,
    pub duration: f64,
    pub rate: f64,
}

impl InjectionProtocol {
    pub const CONTRAST_MG_PER_ML: f64 = 400.0;

    /// Resting hand injection: 833 mm³/s for 2.4 s.
    pub fn rest(start: f64) -> Self {
        Self {
            c0: Self::CONTRAST_MG_PER_ML,
            start,
            duration: 2.4,
            rate: 833.0,
        }
    }

    /// Hyperemic injection: 1667 mm³/s for 1.2 s.
    pub fn hyperemia(start: f64) -> Self {
        Self {
            c0: Self::CONTRAST_MG_PER_ML,
            start,
            duration: 1.2,
            rate: 1667.0,
        }
    }

    pub fn none() -> Self {
        Self {
            c0: Self::CONTRAST_MG_PER_ML,
            start: 0.0,
            duration: 0.0,
            rate: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c0 > 0.0 && self.c0.is_finite()) {
            return Err(Error::InvalidInput(format!("c0 must be positive, got {}", self.c0)));
        }
        if !(self.rate >= 0.0 && self.duration >= 0.0 && self.start.is_finite()) {
            return Err(Error::InvalidInput(
                "injection rate and duration must be non-negative".into(),
            ));
        }
        Ok(())
    }

    pub fn end(&self) -> f64 {
        self.start + self.duration
    }

    /// Catheter flow at time `t`, mm³/s.
    pub fn catheter_flow(&self, t: f64) -> f64 {
        if t >= self.start && t < self.end() {
            self.rate
        } else {
            0.0
        }
    }

    /// Injected volume, ml.
    pub fn total_volume(&self) -> f64 {
        units::mm3_to_ml(self.rate * self.duration)
    }

    pub fn is_empty(&self) -> bool {
        self.rate == 0.0 || self.duration == 0.0
    }
}

/// Concentration entering the ostium when catheter and blood flow mix.
///
/// `c0·Q_cath/(Q_cath + max(Q_ostium, 0))`, capped at `c0`; zero when
/// nothing is injected.
pub fn inlet_concentration(q_cath: f64, q_ostium: f64, c0: f64) -> f64 {
    if q_cath <= 0.0 {
        return 0.0;
    }
    (c0 * q_cath / (q_cath + q_ostium.max(0.0))).min(c0)
}
