//! Butterworth band-pass design (bilinear transform with prewarping) and
//! zero-phase second-order-section filtering.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;

use crate::error::{Result, SignalError};
use crate::recording::EegRecording;

/// Prototype order; the band-pass has twice as many poles.
pub const DEFAULT_ORDER: usize = 4;

/// One biquad, `b0 b1 b2 / 1 a1 a2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sos {
    pub sections: Vec<Biquad>,
}

impl Sos {
    /// Complex response at `freq_hz`.
    pub fn response(&self, freq_hz: f64, sample_rate_hz: f64) -> Complex64 {
        let w = 2.0 * PI * freq_hz / sample_rate_hz;
        let z1 = Complex64::from_polar(1.0, -w);
        let z2 = z1 * z1;
        self.sections
            .iter()
            .fold(Complex64::new(1.0, 0.0), |acc, s| {
                let num = s.b[0] + z1 * s.b[1] + z2 * s.b[2];
                let den = s.a[0] + z1 * s.a[1] + z2 * s.a[2];
                acc * num / den
            })
    }

    /// Edge padding used by [`Sos::filtfilt`].
    pub fn padlen(&self) -> usize {
        let mut taps = 2 * self.sections.len() + 1;
        let zb = self.sections.iter().filter(|s| s.b[2] == 0.0).count();
        let za = self.sections.iter().filter(|s| s.a[2] == 0.0).count();
        taps -= zb.min(za);
        3 * taps
    }

    /// Direct-form-II-transposed filtering with per-section state `zi`.
    pub fn filter(&self, x: &[f64], zi: &mut [[f64; 2]]) -> Vec<f64> {
        let mut y = x.to_vec();
        for (s, z) in self.sections.iter().zip(zi.iter_mut()) {
            for v in y.iter_mut() {
                let xin = *v;
                let out = s.b[0] * xin + z[0];
                z[0] = s.b[1] * xin - s.a[1] * out + z[1];
                z[1] = s.b[2] * xin - s.a[2] * out;
                *v = out;
            }
        }
        y
    }

    /// Steady-state initial conditions for a unit step input.
    pub fn step_zi(&self) -> Vec<[f64; 2]> {
        let mut scale = 1.0;
        self.sections
            .iter()
            .map(|s| {
                let b0 = s.b[0];
                let (a1, a2) = (s.a[1], s.a[2]);
                let c0 = s.b[1] - a1 * b0;
                let c1 = s.b[2] - a2 * b0;
                let z0 = (c0 + c1) / (1.0 + a1 + a2);
                let z1 = c1 - a2 * z0;
                let zi = [scale * z0, scale * z1];
                scale *= (s.b[0] + s.b[1] + s.b[2]) / (s.a[0] + s.a[1] + s.a[2]);
                zi
            })
            .collect()
    }

    /// Forward-backward filtering with odd-extension edge padding.
    pub fn filtfilt(&self, x: &[f64]) -> Result<Vec<f64>> {
        let pad = self.padlen();
        let n = x.len();
        if n <= pad {
            return Err(SignalError::TooShort {
                len: n,
                needed: pad,
            });
        }
        let mut ext = Vec::with_capacity(n + 2 * pad);
        ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
        ext.extend_from_slice(x);
        ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));

        let zi = self.step_zi();
        let scaled = |v: f64| zi.iter().map(|z| [z[0] * v, z[1] * v]).collect::<Vec<_>>();
        let mut y = self.filter(&ext, &mut scaled(ext[0]));
        y.reverse();
        let mut y = self.filter(&y, &mut scaled(y[0]));
        y.reverse();
        Ok(y[pad..pad + n].to_vec())
    }
}

/// Digital Butterworth band-pass of prototype order `order` (even).
pub fn design_bandpass(
    order: usize,
    low_hz: f64,
    high_hz: f64,
    sample_rate_hz: f64,
) -> Result<Sos> {
    let bad = |reason| {
        Err(SignalError::InvalidBand {
            low_hz,
            high_hz,
            sample_rate_hz,
            reason,
        })
    };
    if !(low_hz > 0.0) {
        return bad("low edge must be positive");
    }
    if !(low_hz < high_hz) {
        return bad("low edge must be below high edge");
    }
    if !(high_hz < sample_rate_hz / 2.0) {
        return bad("high edge must be below Nyquist");
    }
    if order == 0 || order % 2 == 1 {
        return bad("prototype order must be even and positive");
    }
    let fs2 = 2.0 * sample_rate_hz;
    let w1 = fs2 * (PI * low_hz / sample_rate_hz).tan();
    let w2 = fs2 * (PI * high_hz / sample_rate_hz).tan();
    let bw = w2 - w1;
    let w0sq = w1 * w2;

    // Analog prototype poles on the left unit semicircle, gain 1.
    let proto: Vec<Complex64> = (0..order)
        .map(|k| Complex64::from_polar(1.0, PI * (2 * k + order + 1) as f64 / (2 * order) as f64))
        .collect();
    // Low-pass to band-pass: every pole splits in two; `order` zeros at 0.
    let mut poles = Vec::with_capacity(2 * order);
    for p in &proto {
        let pl = p * (bw / 2.0);
        let r = (pl * pl - w0sq).sqrt();
        poles.push(pl + r);
        poles.push(pl - r);
    }
    let mut gain = bw.powi(order as i32);
    // Bilinear map. Zeros at s=0 land on z=1; the `order` zeros at
    // infinity land on z=-1.
    let mut den = Complex64::new(1.0, 0.0);
    let mut zpoles = Vec::with_capacity(poles.len());
    for p in &poles {
        den *= fs2 - p;
        zpoles.push((fs2 + p) / (fs2 - p));
    }
    gain *= (Complex64::new(fs2.powi(order as i32), 0.0) / den).re;

    let upper: Vec<Complex64> = zpoles.into_iter().filter(|p| p.im > 0.0).collect();
    if upper.len() != order {
        return Err(SignalError::InvalidBand {
            low_hz,
            high_hz,
            sample_rate_hz,
            reason: "pole pairing failed; band too narrow for this sample rate",
        });
    }
    let mut sections: Vec<Biquad> = upper
        .iter()
        .map(|p| Biquad {
            b: [1.0, 0.0, -1.0],
            a: [1.0, -2.0 * p.re, p.norm_sqr()],
        })
        .collect();
    for v in sections[0].b.iter_mut() {
        *v *= gain;
    }
    Ok(Sos { sections })
}

/// Zero-phase band-pass of every channel with the default order.
pub fn bandpass_filter(rec: &EegRecording, low_hz: f64, high_hz: f64) -> Result<EegRecording> {
    let sos = design_bandpass(DEFAULT_ORDER, low_hz, high_hz, rec.sample_rate_hz)?;
    let rows = rec
        .samples
        .iter()
        .map(|row| sos.filtfilt(row))
        .collect::<Result<Vec<_>>>()?;
    Ok(rec.with_samples(rec.sample_rate_hz, rows))
}
