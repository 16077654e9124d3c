//! Chebyshev Type-I low-pass design via the bilinear transform.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::dsp::{Biquad, Sos};
use crate::error::{Error, Result};

/// Digital Chebyshev Type-I low-pass of the given order.
///
/// `cutoff` is the passband edge normalized to Nyquist (`1.0` = `pi`
/// rad/sample); the magnitude at the edge equals `-ripple_db`. Even orders
/// have a DC gain of `-ripple_db` and touch 0 dB inside the passband.
pub fn cheby1_lowpass(order: usize, ripple_db: f64, cutoff: f64) -> Result<Sos> {
    if order == 0 {
        return Err(Error::InvalidParameter("filter order must be at least 1".into()));
    }
    if !(ripple_db > 0.0) {
        return Err(Error::InvalidParameter("passband ripple must be positive".into()));
    }
    if !(cutoff > 0.0 && cutoff < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "normalized cutoff {cutoff} must lie in (0, 1)"
        )));
    }
    let eps = (10f64.powf(ripple_db / 10.0) - 1.0).sqrt();
    let mu = (1.0 / eps).asinh() / order as f64;
    // Prewarped analog edge for s = 2 (z - 1) / (z + 1).
    let edge = 2.0 * (PI * cutoff / 2.0).tan();
    let to_z = |p: Complex64| (2.0 + p) / (2.0 - p);

    let mut sections = Vec::with_capacity(order.div_ceil(2));
    for k in 1..=order / 2 {
        let theta = PI * (2 * k - 1) as f64 / (2 * order) as f64;
        let p = Complex64::new(-mu.sinh() * theta.sin(), mu.cosh() * theta.cos()) * edge;
        let z = to_z(p);
        sections.push(unit_dc(Biquad {
            b: [1.0, 2.0, 1.0],
            a: [-2.0 * z.re, z.norm_sqr()],
        }));
    }
    if order % 2 == 1 {
        let z = to_z(Complex64::new(-mu.sinh() * edge, 0.0)).re;
        sections.push(unit_dc(Biquad {
            b: [1.0, 1.0, 0.0],
            a: [-z, 0.0],
        }));
    }
    if order.is_multiple_of(2) {
        let dc = 1.0 / (1.0 + eps * eps).sqrt();
        for b in sections[0].b.iter_mut() {
            *b *= dc;
        }
    }
    Ok(Sos { sections })
}

fn unit_dc(mut s: Biquad) -> Biquad {
    let g = s.dc_gain();
    for b in s.b.iter_mut() {
        *b /= g;
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chebyshev_poly(n: usize, x: f64) -> f64 {
        if x.abs() <= 1.0 {
            (n as f64 * x.acos()).cos()
        } else {
            (n as f64 * x.acosh()).cosh() * if x < 0.0 && n % 2 == 1 { -1.0 } else { 1.0 }
        }
    }

    /// Closed-form squared magnitude of the bilinear-mapped prototype.
    fn expected_mag(order: usize, ripple_db: f64, cutoff: f64, omega: f64) -> f64 {
        let eps2 = 10f64.powf(ripple_db / 10.0) - 1.0;
        let x = (omega / 2.0).tan() / (PI * cutoff / 2.0).tan();
        let t = chebyshev_poly(order, x);
        (1.0 / (1.0 + eps2 * t * t)).sqrt()
    }

    #[test]
    fn response_matches_closed_form() {
        for &(order, cutoff) in &[(8usize, 0.4), (8, 0.1), (8, 0.2), (5, 0.3), (1, 0.5)] {
            let sos = cheby1_lowpass(order, 0.05, cutoff).unwrap();
            for i in 1..200 {
                let omega = PI * i as f64 / 200.0;
                let got = sos.response(omega).norm();
                let want = expected_mag(order, 0.05, cutoff, omega);
                assert!(
                    (got - want).abs() < 1e-9 * want.max(1e-6),
                    "order {order} cutoff {cutoff} omega {omega}: {got} vs {want}"
                );
            }
        }
    }

    #[test]
    fn edge_gain_equals_ripple() {
        let sos = cheby1_lowpass(8, 0.05, 0.2).unwrap();
        let db = 20.0 * sos.response(PI * 0.2).norm().log10();
        assert!((db + 0.05).abs() < 1e-9);
        assert_eq!(sos.sections.len(), 4);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(cheby1_lowpass(0, 0.05, 0.4).is_err());
        assert!(cheby1_lowpass(8, 0.05, 1.0).is_err());
        assert!(cheby1_lowpass(8, 0.0, 0.4).is_err());
    }
}
