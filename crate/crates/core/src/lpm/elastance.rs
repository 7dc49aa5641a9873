use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Time-varying elastance. Elastances in Pa/mm³, times in s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElastanceParams {
    #[serde(rename = "E_max")]
    pub e_max: f64,
    #[serde(rename = "E_min")]
    pub e_min: f64,
    pub t_max: f64,
    pub t_r: f64,
    #[serde(rename = "T")]
    pub period: f64,
}

impl ElastanceParams {
    pub fn validate(&self) -> Result<()> {
        let ok = 0.0 < self.e_min
            && self.e_min <= self.e_max
            && 0.0 < self.t_max
            && self.t_max < self.t_r
            && self.t_r < self.period
            && [self.e_max, self.e_min, self.t_max, self.t_r, self.period]
                .iter()
                .all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!(
                "elastance requires 0 < E_min <= E_max and 0 < t_max < t_r < T: {self:?}"
            )))
        }
    }
}

/// Elastance and its time derivative at time `t` (reduced modulo the period).
///
/// Half-cosine rise on `[0, t_max]`, half-cosine relaxation on
/// `(t_max, t_r]`, flat at `E_min` for the rest of the cycle.
pub fn elastance_at(t: f64, p: &ElastanceParams) -> (f64, f64) {
    let tc = t.rem_euclid(p.period);
    let de = p.e_max - p.e_min;
    if tc <= p.t_max {
        let w = PI / p.t_max;
        let e = p.e_min + de * (1.0 - (w * tc).cos()) / 2.0;
        let de_dt = de * w * (w * tc).sin() / 2.0;
        (e, de_dt)
    } else if tc <= p.t_r {
        let w = PI / (p.t_r - p.t_max);
        let s = tc - p.t_max;
        let e = p.e_min + de * (1.0 + (w * s).cos()) / 2.0;
        let de_dt = -de * w * (w * s).sin() / 2.0;
        (e, de_dt)
    } else {
        (p.e_min, 0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rest() -> ElastanceParams {
        ElastanceParams {
            e_max: 0.190,
            e_min: 0.015,
            t_max: 0.390,
            t_r: 0.490,
            period: 1.0,
        }
    }

    #[test]
    fn landmarks() {
        let p = rest();
        assert_eq!(elastance_at(0.0, &p).0, p.e_min);
        assert!((elastance_at(p.t_max, &p).0 - p.e_max).abs() < 1e-15);
        let mid = elastance_at(p.t_max / 2.0, &p).0;
        assert!((mid - (p.e_min + 0.5 * (p.e_max - p.e_min))).abs() < 1e-15);
        assert_eq!(elastance_at(0.8, &p), (p.e_min, 0.0));
    }

    #[test]
    fn continuous_at_breakpoints() {
        let p = rest();
        for b in [p.t_max, p.t_r] {
            let l = elastance_at(b - 1e-12, &p).0;
            let r = elastance_at(b + 1e-12, &p).0;
            assert!((l - r).abs() < 1e-9);
        }
    }

    #[test]
    fn validation() {
        assert!(rest().validate().is_ok());
        let mut p = rest();
        p.t_r = 0.3;
        assert!(p.validate().is_err());
        let mut p = rest();
        p.e_min = 0.3;
        assert!(p.validate().is_err());
    }

    proptest! {
        #[test]
        fn bounded_and_periodic(t in -5.0f64..5.0) {
            let p = rest();
            let (e, _) = elastance_at(t, &p);
            prop_assert!(e >= p.e_min - 1e-15 && e <= p.e_max + 1e-15);
            let (e2, _) = elastance_at(t + p.period, &p);
            prop_assert!((e - e2).abs() <= 1e-12);
        }

        #[test]
        fn derivative_matches_central_difference(t in 0.0f64..1.0) {
            let p = rest();
            let h = 1e-6;
            let away = [0.0, p.t_max, p.t_r, p.period]
                .iter()
                .all(|b| (t - b).abs() > 10.0 * h);
            prop_assume!(away);
            let fd = (elastance_at(t + h, &p).0 - elastance_at(t - h, &p).0) / (2.0 * h);
            let (_, an) = elastance_at(t, &p);
            let scale = an.abs().max(p.e_max - p.e_min);
            prop_assert!((fd - an).abs() <= 1e-6 * scale, "fd {} analytic {}", fd, an);
        }
    }
}
