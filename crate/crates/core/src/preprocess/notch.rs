use std::f64::consts::PI;

use crate::dsp::Biquad;
use crate::error::{Error, Result};

/// Second-order notch: zeros on the unit circle at `±f0`, poles at radius
/// `1 - pi*bandwidth/fs` on the same angle, scaled to unit gain at DC.
pub fn design_notch(fs: f64, f0: f64, bandwidth: f64) -> Result<Biquad> {
    if !(f0 > 0.0 && f0 < fs / 2.0) {
        return Err(Error::InvalidParameter(format!(
            "notch frequency {f0} Hz must lie in (0, fs/2 = {} Hz)",
            fs / 2.0
        )));
    }
    let radius = 1.0 - PI * bandwidth / fs;
    if !(bandwidth > 0.0 && radius > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "notch bandwidth {bandwidth} Hz is out of range for fs = {fs} Hz"
        )));
    }
    let c = (2.0 * PI * f0 / fs).cos();
    let a = [-2.0 * radius * c, radius * radius];
    let g = (1.0 + a[0] + a[1]) / (2.0 - 2.0 * c);
    Ok(Biquad {
        b: [g, -2.0 * c * g, g],
        a,
    })
}
