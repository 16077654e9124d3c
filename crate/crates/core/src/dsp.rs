//! Numerical building blocks shared by the preprocessing and template code:
//! direct linear convolution, DFT wrappers with a fixed normalization
//! convention, and second-order-section IIR filtering.

use std::cell::RefCell;

use num_complex::Complex64;
use rustfft::FftPlanner;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// Full linear convolution, output length `a.len() + b.len() - 1`.
///
/// Returns an empty vector when either input is empty.
pub fn convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, &x) in a.iter().enumerate() {
        if x == 0.0 {
            continue;
        }
        for (o, &y) in out[i..].iter_mut().zip(b) {
            *o += x * y;
        }
    }
    out
}

/// Forward DFT, unnormalized: `X[k] = sum_n x[n] e^{-2 pi i k n / L}`.
pub fn fft_real(input: &[f64]) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = input.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    fft_in_place(&mut buf);
    buf
}

pub fn fft_in_place(buf: &mut [Complex64]) {
    if buf.is_empty() {
        return;
    }
    let plan = PLANNER.with(|p| p.borrow_mut().plan_fft_forward(buf.len()));
    plan.process(buf);
}

/// Inverse DFT carrying the `1/L` factor, so `ifft(fft(x)) == x`.
pub fn ifft_in_place(buf: &mut [Complex64]) {
    if buf.is_empty() {
        return;
    }
    let plan = PLANNER.with(|p| p.borrow_mut().plan_fft_inverse(buf.len()));
    plan.process(buf);
    let scale = 1.0 / buf.len() as f64;
    for v in buf.iter_mut() {
        *v *= scale;
    }
}

/// One biquad `b0 + b1 z^-1 + b2 z^-2 over 1 + a1 z^-1 + a2 z^-2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    /// Denominator with the leading 1 dropped: `[a1, a2]`.
    pub a: [f64; 2],
}

impl Biquad {
    pub fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[0] + self.a[1])
    }

    /// Complex response at normalized angular frequency `omega` (rad/sample).
    pub fn response(&self, omega: f64) -> Complex64 {
        let z1 = Complex64::from_polar(1.0, -omega);
        let z2 = z1 * z1;
        let num = self.b[0] + z1 * self.b[1] + z2 * self.b[2];
        let den = 1.0 + z1 * self.a[0] + z2 * self.a[1];
        num / den
    }

    /// Transposed direct-form II state that holds a constant input `x` at
    /// steady state.
    fn steady_state(&self, x: f64) -> [f64; 2] {
        let y = self.dc_gain() * x;
        [y - self.b[0] * x, self.b[2] * x - self.a[1] * y]
    }
}

/// Cascade of second-order sections.
#[derive(Debug, Clone, PartialEq)]
pub struct Sos {
    pub sections: Vec<Biquad>,
}

impl Sos {
    pub fn response(&self, omega: f64) -> Complex64 {
        self.sections
            .iter()
            .fold(Complex64::new(1.0, 0.0), |acc, s| acc * s.response(omega))
    }

    /// Causal filtering from a zero initial state.
    pub fn filter(&self, input: &[f64]) -> Vec<f64> {
        let mut out = input.to_vec();
        for section in &self.sections {
            run_section(section, &mut out, [0.0, 0.0]);
        }
        out
    }

    /// Causal filtering with every section started at the steady state for a
    /// constant input equal to `x0`.
    fn filter_from_steady(&self, data: &mut [f64], x0: f64) {
        let mut level = x0;
        for section in &self.sections {
            let state = section.steady_state(level);
            run_section(section, data, state);
            level *= section.dc_gain();
        }
    }

    /// Zero-phase forward-backward filtering with odd-extension padding at
    /// both ends and steady-state initial conditions. Output length equals
    /// input length.
    pub fn filtfilt(&self, input: &[f64]) -> Vec<f64> {
        let n = input.len();
        if n == 0 {
            return Vec::new();
        }
        let padlen = (3 * (2 * self.sections.len() + 1)).min(n - 1);
        let mut ext = Vec::with_capacity(n + 2 * padlen);
        let first = input[0];
        let last = input[n - 1];
        ext.extend((1..=padlen).rev().map(|i| 2.0 * first - input[i]));
        ext.extend_from_slice(input);
        ext.extend((1..=padlen).map(|i| 2.0 * last - input[n - 1 - i]));

        let x0 = ext[0];
        self.filter_from_steady(&mut ext, x0);
        ext.reverse();
        let y0 = ext[0];
        self.filter_from_steady(&mut ext, y0);
        ext.reverse();
        ext.drain(..padlen);
        ext.truncate(n);
        ext
    }
}

fn run_section(s: &Biquad, data: &mut [f64], state: [f64; 2]) {
    let [b0, b1, b2] = s.b;
    let [a1, a2] = s.a;
    let [mut z1, mut z2] = state;
    for v in data.iter_mut() {
        let x = *v;
        let y = b0 * x + z1;
        z1 = b1 * x - a1 * y + z2;
        z2 = b2 * x - a2 * y;
        *v = y;
    }
}
