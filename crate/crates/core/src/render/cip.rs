use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::frame::{threshold_count, AngiogramFrame};
use crate::error::{Error, Result};

/// Contrast intensity profile: segmented pixel count over time, normalised
/// by its maximum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cip {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    /// Set when every count was zero and normalisation was skipped.
    pub all_zero: bool,
}

impl Cip {
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.len() != values.len() {
            return Err(Error::InvalidInput("CIP times and values differ in length".into()));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidInput("CIP times must be strictly increasing".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("CIP values must be finite".into()));
        }
        let all_zero = values.iter().all(|&v| v == 0.0);
        Ok(Self {
            times,
            values,
            all_zero,
        })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Shift so that the first sample at or above `fraction` of the maximum
    /// sits at time zero.
    pub fn aligned_at_onset(&self, fraction: f64) -> Self {
        let peak = self.values.iter().copied().fold(0.0, f64::max);
        let t0 = self
            .values
            .iter()
            .position(|&v| peak > 0.0 && v >= fraction * peak)
            .map_or(0.0, |i| self.times[i]);
        self.shifted(-t0)
    }

    pub fn shifted(&self, dt: f64) -> Self {
        Self {
            times: self.times.iter().map(|t| t + dt).collect(),
            ..self.clone()
        }
    }

    /// Linear interpolation; `None` outside the sampled range.
    pub fn value_at(&self, t: f64) -> Option<f64> {
        let (first, last) = (*self.times.first()?, *self.times.last()?);
        if t < first - 1e-12 || t > last + 1e-12 {
            return None;
        }
        let i = self.times.partition_point(|&x| x <= t);
        if i == 0 {
            return Some(self.values[0]);
        }
        if i >= self.len() {
            return Some(self.values[self.len() - 1]);
        }
        let (t0, t1) = (self.times[i - 1], self.times[i]);
        let w = (t - t0) / (t1 - t0);
        Some(self.values[i - 1] + w * (self.values[i] - self.values[i - 1]))
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["time_s", "value"])?;
        for (t, v) in self.times.iter().zip(&self.values) {
            w.write_record([format!("{t:.6}"), format!("{v:.6}")])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Two-column CSV (time in s, normalised value). A non-numeric first
    /// row is treated as a header.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut times = Vec::new();
        let mut values = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            if rec.len() < 2 {
                return Err(Error::Parse(format!("CIP row {} needs two columns", i + 1)));
            }
            match (rec[0].parse::<f64>(), rec[1].parse::<f64>()) {
                (Ok(t), Ok(v)) => {
                    times.push(t);
                    values.push(v);
                }
                _ if i == 0 => continue,
                _ => return Err(Error::Parse(format!("CIP row {} is not numeric", i + 1))),
            }
        }
        Self::new(times, values)
    }
}

/// Normalise per-frame pixel counts by their maximum.
pub fn cip_from_counts(times: Vec<f64>, counts: &[usize]) -> Result<Cip> {
    if counts.len() < 2 {
        return Err(Error::InvalidInput("a CIP needs at least two frames".into()));
    }
    let max = counts.iter().copied().max().unwrap_or(0);
    let values = if max == 0 {
        vec![0.0; counts.len()]
    } else {
        counts.iter().map(|&c| c as f64 / max as f64).collect()
    };
    Cip::new(times, values)
}

pub fn compute_cip(frames: &[AngiogramFrame], i_thr: u8) -> Result<Cip> {
    let counts: Vec<usize> = frames.iter().map(|f| threshold_count(f, i_thr)).collect();
    cip_from_counts(frames.iter().map(|f| f.time).collect(), &counts)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CipFeatures {
    /// 1/s
    pub rising_slope: f64,
    /// 1/s; zero when the profile never falls back below 0.9.
    pub falling_slope: f64,
    /// s
    pub plateau_duration: f64,
    /// s
    pub auc: f64,
}

impl CipFeatures {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["feature", "value"])?;
        for (k, v) in [
            ("rising_slope_per_s", self.rising_slope),
            ("falling_slope_per_s", self.falling_slope),
            ("plateau_duration_s", self.plateau_duration),
            ("auc_s", self.auc),
        ] {
            w.write_record([k.to_string(), format!("{v:.6}")])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub const LOW_LEVEL: f64 = 0.1;
pub const HIGH_LEVEL: f64 = 0.9;

fn crossing_time(t: &[f64], v: &[f64], i: usize, level: f64) -> f64 {
    // Crossing between samples i-1 and i.
    let (v0, v1) = (v[i - 1], v[i]);
    if v1 == v0 {
        return t[i];
    }
    t[i - 1] + (level - v0) / (v1 - v0) * (t[i] - t[i - 1])
}

fn least_squares_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let mv = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - mv)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    if sxx > 0.0 {
        sxy / sxx
    } else {
        0.0
    }
}

pub fn trapezoid(t: &[f64], v: &[f64]) -> f64 {
    t.windows(2)
        .zip(v.windows(2))
        .map(|(t, v)| 0.5 * (v[0] + v[1]) * (t[1] - t[0]))
        .sum()
}

/// Time spent at or above `level`, treating the profile as piecewise linear.
fn time_above(t: &[f64], v: &[f64], level: f64) -> f64 {
    let mut total = 0.0;
    for i in 1..t.len() {
        let (a, b) = (v[i - 1] - level, v[i] - level);
        let dt = t[i] - t[i - 1];
        total += match (a >= 0.0, b >= 0.0) {
            (true, true) => dt,
            (false, false) => 0.0,
            (true, false) => dt * a / (a - b),
            (false, true) => dt * b / (b - a),
        };
    }
    total
}

/// Filling and washout slopes over the 10 to 90 % band, plateau time above
/// 90 % and area under the curve. `None` when the profile never reaches 0.9.
pub fn extract_features(cip: &Cip) -> Option<CipFeatures> {
    let (t, v) = (&cip.times, &cip.values);
    if t.len() < 2 {
        return None;
    }
    let reach_high = v.iter().position(|&x| x >= HIGH_LEVEL)?;

    // Rising: first upward crossing of 0.1 to the first of 0.9.
    let reach_low = v.iter().position(|&x| x >= LOW_LEVEL)?;
    let mut pts = Vec::new();
    if reach_low > 0 {
        pts.push((crossing_time(t, v, reach_low, LOW_LEVEL), LOW_LEVEL));
    }
    for i in reach_low..reach_high {
        pts.push((t[i], v[i]));
    }
    if reach_high > 0 {
        pts.push((crossing_time(t, v, reach_high, HIGH_LEVEL), HIGH_LEVEL));
    } else {
        pts.push((t[0], v[0]));
    }
    let rising_slope = least_squares_slope(&pts).max(0.0);

    // Falling: last downward crossing of 0.9, then the first 0.1 crossing
    // after it, or the end of the record.
    let fall_hi = (1..v.len())
        .rev()
        .find(|&i| v[i - 1] >= HIGH_LEVEL && v[i] < HIGH_LEVEL);
    let falling_slope = match fall_hi {
        None => 0.0,
        Some(i) => {
            let mut pts = vec![(crossing_time(t, v, i, HIGH_LEVEL), HIGH_LEVEL)];
            let mut j = i;
            while j < v.len() && v[j] >= LOW_LEVEL {
                pts.push((t[j], v[j]));
                j += 1;
            }
            if j < v.len() {
                pts.push((crossing_time(t, v, j, LOW_LEVEL), LOW_LEVEL));
            }
            least_squares_slope(&pts).min(0.0)
        }
    };

    Some(CipFeatures {
        rising_slope,
        falling_slope,
        plateau_duration: time_above(t, v, HIGH_LEVEL),
        auc: trapezoid(t, v),
    })
}

/// Root-mean-square difference after resampling `a` onto the samples of
/// `b` that fall inside `a`'s time range.
pub fn cip_l2(a: &Cip, b: &Cip) -> Result<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (&t, &vb) in b.times.iter().zip(&b.values) {
        if let Some(va) = a.value_at(t) {
            sum += (va - vb).powi(2);
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::InvalidInput("CIPs do not overlap in time".into()));
    }
    Ok((sum / n as f64).sqrt())
}
