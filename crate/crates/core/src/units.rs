//! Conversions between the internal unit system (mm, s, Pa) and the
//! clinical units used in reports (L/min, mmHg, ml).

pub const PA_PER_MMHG: f64 = 133.322;

/// mm³/s per L/min.
pub const MM3S_PER_LMIN: f64 = 1.0e6 / 60.0;

pub fn pa_to_mmhg(p: f64) -> f64 {
    p / PA_PER_MMHG
}

pub fn mmhg_to_pa(p: f64) -> f64 {
    p * PA_PER_MMHG
}

pub fn mm3s_to_lmin(q: f64) -> f64 {
    q / MM3S_PER_LMIN
}

pub fn lmin_to_mm3s(q: f64) -> f64 {
    q * MM3S_PER_LMIN
}

pub fn mm3_to_ml(v: f64) -> f64 {
    v / 1000.0
}

pub fn ml_to_mm3(v: f64) -> f64 {
    v * 1000.0
}
