//! Radix-2 FFT, spectra, and waveform measurements.

use super::AnalysisError;
use crate::netlist::fmt_value;
use num_complex::Complex64;
use std::io::{self, Write};

/// Analysis window applied before the transform. Hann is the measurement
/// default for simulated (non-bin-centered) records; `None` keeps synthetic
/// bin-centered checks exact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Window {
    #[default]
    Hann,
    None,
}

impl std::fmt::Display for Window {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Window::Hann => write!(f, "hann"),
            Window::None => write!(f, "none"),
        }
    }
}

/// In-place radix-2 decimation-in-time FFT (forward, unscaled).
///
/// The length must be a power of two.
pub fn fft_in_place(data: &mut [Complex64]) {
    let n = data.len();
    assert!(n.is_power_of_two(), "fft length must be a power of two, got {n}");
    if n <= 1 {
        return;
    }
    // Bit-reversal permutation.
    let mut j = 0usize;
    for i in 1..n {
        let mut bit = n >> 1;
        while j & bit != 0 {
            j ^= bit;
            bit >>= 1;
        }
        j |= bit;
        if i < j {
            data.swap(i, j);
        }
    }
    // Butterflies, twiddles computed fresh per stage.
    let mut len = 2;
    let mut twiddles: Vec<Complex64> = Vec::with_capacity(n / 2);
    while len <= n {
        let half = len / 2;
        twiddles.clear();
        for k in 0..half {
            let angle = -2.0 * std::f64::consts::PI * k as f64 / len as f64;
            twiddles.push(Complex64::new(angle.cos(), angle.sin()));
        }
        let mut start = 0;
        while start < n {
            for k in 0..half {
                let u = data[start + k];
                let t = twiddles[k] * data[start + k + half];
                data[start + k] = u + t;
                data[start + k + half] = u - t;
            }
            start += len;
        }
        len <<= 1;
    }
}

/// Single-sided amplitude spectrum of a uniformly sampled channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    /// Bin frequencies, 0 through Nyquist [Hz]; spacing `1/(N dt)`.
    pub freq: Vec<f64>,
    /// Linear amplitude per bin, normalized so a unit-amplitude bin-centered
    /// sine peaks at 1.0 (window gain compensated).
    pub magnitude: Vec<f64>,
    /// Phase per bin in `(-pi, pi]`.
    pub phase: Vec<f64>,
    pub window: Window,
    /// Transform length (power of two).
    pub n: usize,
    pub dt: f64,
}

impl Spectrum {
    /// Compute the spectrum of the leading `2^k` samples (the largest power
    /// of two that fits).
    pub fn compute(samples: &[f64], dt: f64, window: Window) -> Result<Spectrum, AnalysisError> {
        if samples.len() < 2 || !(dt > 0.0) {
            return Err(AnalysisError::EmptyChannel);
        }
        let n = largest_power_of_two(samples.len());
        let mut buf: Vec<Complex64> = (0..n)
            .map(|i| {
                let w = match window {
                    Window::None => 1.0,
                    Window::Hann => {
                        0.5 * (1.0
                            - (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
                    }
                };
                Complex64::new(samples[i] * w, 0.0)
            })
            .collect();
        fft_in_place(&mut buf);

        // Hann halves the coherent amplitude; compensate by 2.
        let win_gain = match window {
            Window::None => 1.0,
            Window::Hann => 2.0,
        };
        let bins = n / 2 + 1;
        let mut freq = Vec::with_capacity(bins);
        let mut magnitude = Vec::with_capacity(bins);
        let mut phase = Vec::with_capacity(bins);
        for k in 0..bins {
            freq.push(k as f64 / (n as f64 * dt));
            let sided = if k == 0 || k == n / 2 { 1.0 } else { 2.0 };
            magnitude.push(win_gain * sided * buf[k].norm() / n as f64);
            let mut ph = buf[k].im.atan2(buf[k].re);
            if ph == -std::f64::consts::PI {
                ph = std::f64::consts::PI;
            }
            phase.push(ph);
        }
        Ok(Spectrum { freq, magnitude, phase, window, n, dt })
    }

    /// Bin index nearest a frequency, clamped to the valid range.
    pub fn bin_of(&self, f: f64) -> usize {
        let k = (f * self.n as f64 * self.dt).round();
        (k.max(0.0) as usize).min(self.n / 2)
    }

    /// CSV with columns `freq_hz,magnitude,phase_rad`.
    pub fn to_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "freq_hz,magnitude,phase_rad")?;
        for k in 0..self.freq.len() {
            writeln!(
                w,
                "{},{},{}",
                fmt_value(self.freq[k]),
                fmt_value(self.magnitude[k]),
                fmt_value(self.phase[k])
            )?;
        }
        Ok(())
    }
}

fn largest_power_of_two(len: usize) -> usize {
    let mut n = 1;
    while n * 2 <= len {
        n *= 2;
    }
    n
}

/// Frequency of the strongest bin, refined by parabolic interpolation over
/// the peak's three bins when the peak is interior.
///
/// `ignore_dc` skips the DC mainlobe: bin 0 for the rectangular window, bins
/// 0 and 1 for Hann (whose mainlobe smears DC into the first bin).
pub fn dominant_frequency(spectrum: &Spectrum, ignore_dc: bool) -> Result<f64, AnalysisError> {
    let start = match (ignore_dc, spectrum.window) {
        (false, _) => 0,
        (true, Window::None) => 1,
        (true, Window::Hann) => 2,
    };
    if spectrum.magnitude.len() <= start {
        return Err(AnalysisError::EmptyChannel);
    }
    let mut peak = start;
    for k in start..spectrum.magnitude.len() {
        if spectrum.magnitude[k] > spectrum.magnitude[peak] {
            peak = k;
        }
    }
    // A constant record leaves only rounding residue outside bin 0.
    let overall = spectrum.magnitude.iter().fold(0.0f64, |m, v| m.max(*v));
    if spectrum.magnitude[peak] <= 1e-12 * overall {
        return Err(AnalysisError::WeakSignal);
    }
    let df = 1.0 / (spectrum.n as f64 * spectrum.dt);
    let mut k_refined = peak as f64;
    if peak > start && peak + 1 < spectrum.magnitude.len() {
        let (a, b, c) = (
            spectrum.magnitude[peak - 1],
            spectrum.magnitude[peak],
            spectrum.magnitude[peak + 1],
        );
        let denom = a - 2.0 * b + c;
        if denom != 0.0 && a <= b && c <= b {
            k_refined += 0.5 * (a - c) / denom;
        }
    }
    Ok(k_refined * df)
}

/// Phase of channel `b` minus channel `a` at the bin nearest `f0`, in
/// degrees wrapped to `(-180, 180]`. Measured on the steady-state tail
/// (last half) of both channels with a Hann window.
pub fn phase_shift_deg(a: &[f64], b: &[f64], dt: f64, f0: f64) -> Result<f64, AnalysisError> {
    let tail_a = &a[a.len() / 2..];
    let tail_b = &b[b.len() / 2..];
    let n = largest_power_of_two(tail_a.len().min(tail_b.len()));
    if n < 8 {
        return Err(AnalysisError::TooShort("need at least 8 tail samples".to_string()));
    }
    let spec_a = Spectrum::compute(&tail_a[..n], dt, Window::Hann)?;
    let spec_b = Spectrum::compute(&tail_b[..n], dt, Window::Hann)?;
    let bin = spec_a.bin_of(f0).max(1);

    for spec in [&spec_a, &spec_b] {
        let peak = spec.magnitude[1..]
            .iter()
            .fold(0.0f64, |m, v| m.max(*v));
        if spec.magnitude[bin] < 1e-6 * peak || peak == 0.0 {
            return Err(AnalysisError::WeakSignal);
        }
    }
    let delta = (spec_b.phase[bin] - spec_a.phase[bin]).to_degrees();
    Ok(wrap_deg(delta))
}

/// Wrap an angle in degrees to `(-180, 180]`.
pub fn wrap_deg(x: f64) -> f64 {
    let r = x.rem_euclid(360.0);
    if r > 180.0 {
        r - 360.0
    } else {
        r
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Trend {
    Growing,
    Decaying,
    Sustained,
}

impl std::fmt::Display for Trend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Trend::Growing => write!(f, "growing"),
            Trend::Decaying => write!(f, "decaying"),
            Trend::Sustained => write!(f, "sustained"),
        }
    }
}

/// Verdict of [`sustained_oscillation`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OscillationSummary {
    pub trend: Trend,
    /// Sine-amplitude estimate of the final window (sqrt(2) * AC RMS).
    pub amplitude: f64,
    /// Dominant frequency of the tail [Hz].
    pub frequency: f64,
}

/// Classify a record as growing, decaying, or sustained.
///
/// The dominant tail frequency sets the cycle length; the record must hold
/// at least 20 cycles. The last 16 cycles split into two 8-cycle windows
/// whose mean-removed RMS values are compared: within 5 percent is
/// sustained.
pub fn sustained_oscillation(samples: &[f64], dt: f64) -> Result<OscillationSummary, AnalysisError> {
    if samples.len() < 4 {
        return Err(AnalysisError::TooShort("record is nearly empty".to_string()));
    }
    let tail = &samples[samples.len() / 2..];
    let spec = Spectrum::compute(tail, dt, Window::Hann)?;
    let f0 = dominant_frequency(&spec, true)?;
    if f0 <= 0.0 {
        return Err(AnalysisError::WeakSignal);
    }
    let total_cycles = samples.len() as f64 * dt * f0;
    if total_cycles < 20.0 {
        return Err(AnalysisError::TooShort(format!(
            "need >= 20 cycles of {f0:.3} Hz, have {total_cycles:.1}"
        )));
    }
    let win = (8.0 / (f0 * dt)).ceil() as usize;
    if 2 * win > samples.len() {
        return Err(AnalysisError::TooShort("two 8-cycle windows do not fit".to_string()));
    }
    let w2 = &samples[samples.len() - win..];
    let w1 = &samples[samples.len() - 2 * win..samples.len() - win];
    let rms1 = ac_rms(w1);
    let rms2 = ac_rms(w2);
    let trend = if rms1 == 0.0 {
        if rms2 == 0.0 {
            Trend::Sustained
        } else {
            Trend::Growing
        }
    } else {
        let ratio = rms2 / rms1 - 1.0;
        if ratio > 0.05 {
            Trend::Growing
        } else if ratio < -0.05 {
            Trend::Decaying
        } else {
            Trend::Sustained
        }
    };
    Ok(OscillationSummary { trend, amplitude: rms2 * 2.0f64.sqrt(), frequency: f0 })
}

/// RMS about the window mean.
fn ac_rms(w: &[f64]) -> f64 {
    let mean = w.iter().sum::<f64>() / w.len() as f64;
    (w.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / w.len() as f64).sqrt()
}

/// Trapezoidal integral of `y(t)` over `[t0, t1]` on a uniform time axis.
pub fn integrate_time_window(t: &[f64], y: &[f64], t0: f64, t1: f64) -> f64 {
    let mut acc = 0.0;
    for k in 1..t.len() {
        if t[k] <= t0 || t[k - 1] >= t1 {
            continue;
        }
        acc += 0.5 * (y[k] + y[k - 1]) * (t[k] - t[k - 1]);
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

    fn approx(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "expected {b}, got {a} (tol {tol})");
    }

    #[test]
    fn dc_lands_in_bin_zero() {
        let samples = vec![1.0; 1024];
        let spec = Spectrum::compute(&samples, 1e-3, Window::None).unwrap();
        approx(spec.magnitude[0], 1.0, 1e-12);
        for k in 1..spec.magnitude.len() {
            assert!(spec.magnitude[k] < 1e-9);
        }
    }

    #[test]
    fn bin_centered_sine_peaks_at_one() {
        let n = 4096;
        let dt = 1.0 / (n as f64 * 1000.0) * 173.0; // 1 kHz lands on bin 173
        let samples: Vec<f64> =
            (0..n).map(|i| (TWO_PI * 1000.0 * i as f64 * dt).sin()).collect();
        let spec = Spectrum::compute(&samples, dt, Window::None).unwrap();
        approx(spec.magnitude[173], 1.0, 1e-9);
        approx(spec.freq[173], 1000.0, 1e-6);
        // Hann with its gain correction also recovers the amplitude.
        let spec = Spectrum::compute(&samples, dt, Window::Hann).unwrap();
        approx(spec.magnitude[173], 1.0, 1e-9);
    }

    #[test]
    fn parseval_relation() {
        let n = 2048;
        let mut seed = 42u64;
        let mut rnd = move || {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((seed >> 11) as f64) / ((1u64 << 53) as f64) * 2.0 - 1.0
        };
        let samples: Vec<f64> = (0..n).map(|_| rnd()).collect();
        let time_energy: f64 = samples.iter().map(|v| v * v).sum();
        let mut buf: Vec<Complex64> = samples.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        fft_in_place(&mut buf);
        let freq_energy: f64 = buf.iter().map(|z| z.norm_sqr()).sum::<f64>() / n as f64;
        assert!(
            ((time_energy - freq_energy) / time_energy).abs() <= 1e-9,
            "Parseval violated: {time_energy} vs {freq_energy}"
        );
    }

    #[test]
    fn fft_linearity() {
        let n = 1024;
        let mut seed = 7u64;
        let mut rnd = move || {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((seed >> 11) as f64) / ((1u64 << 53) as f64) * 2.0 - 1.0
        };
        let x: Vec<f64> = (0..n).map(|_| rnd()).collect();
        let y: Vec<f64> = (0..n).map(|_| rnd()).collect();
        let (a, b) = (1.7, -0.4);

        let fft_of = |v: &[f64]| {
            let mut buf: Vec<Complex64> = v.iter().map(|&s| Complex64::new(s, 0.0)).collect();
            fft_in_place(&mut buf);
            buf
        };
        let combined: Vec<f64> = x.iter().zip(&y).map(|(xi, yi)| a * xi + b * yi).collect();
        let lhs = fft_of(&combined);
        let fx = fft_of(&x);
        let fy = fft_of(&y);
        for k in 0..n {
            let rhs = a * fx[k] + b * fy[k];
            let scale = 1.0 + rhs.norm();
            assert!(
                (lhs[k] - rhs).norm() <= 1e-12 * scale,
                "linearity violated at bin {k}"
            );
        }
    }

    #[test]
    fn square_wave_harmonics() {
        // Period 512 samples inside N = 4096: fundamental at bin 8.
        let n = 4096;
        let samples: Vec<f64> =
            (0..n).map(|i| if i % 512 < 256 { 1.0 } else { -1.0 }).collect();
        let spec = Spectrum::compute(&samples, 1e-5, Window::None).unwrap();
        let ratio = spec.magnitude[24] / spec.magnitude[8];
        assert!(
            (ratio / (1.0 / 3.0) - 1.0).abs() <= 0.01,
            "square |H3|/|H1| = {ratio}, want 1/3 within 1%"
        );
    }

    #[test]
    fn dominant_frequency_bin_centered_and_offset() {
        let n = 4096;
        let dt = 1e-4;
        let df = 1.0 / (n as f64 * dt);

        let f_exact = 400.0 * df;
        let samples: Vec<f64> = (0..n).map(|i| (TWO_PI * f_exact * i as f64 * dt).sin()).collect();
        let spec = Spectrum::compute(&samples, dt, Window::None).unwrap();
        approx(dominant_frequency(&spec, true).unwrap(), f_exact, 1e-9 * f_exact);

        let f_mid = 1000.5 * df;
        let samples: Vec<f64> = (0..n).map(|i| (TWO_PI * f_mid * i as f64 * dt).sin()).collect();
        let spec = Spectrum::compute(&samples, dt, Window::Hann).unwrap();
        let est = dominant_frequency(&spec, true).unwrap();
        assert!(
            ((est - f_mid) / f_mid).abs() <= 0.003,
            "off-bin tone estimate {est} vs true {f_mid}"
        );
    }

    #[test]
    fn dominant_frequency_degenerate_input() {
        let samples = vec![0.0; 256];
        let spec = Spectrum::compute(&samples, 1e-3, Window::None).unwrap();
        assert!(matches!(
            dominant_frequency(&spec, true),
            Err(AnalysisError::WeakSignal)
        ));
    }

    #[test]
    fn phase_shift_identity_and_quadrature() {
        let n = 4096;
        let dt = 1e-4;
        let f0 = 100.0 / (n as f64 * dt); // bin-centered in the tail half too
        let sin: Vec<f64> = (0..n).map(|i| (TWO_PI * f0 * i as f64 * dt).sin()).collect();
        let cos: Vec<f64> = (0..n).map(|i| (TWO_PI * f0 * i as f64 * dt).cos()).collect();
        approx(phase_shift_deg(&sin, &sin, dt, f0).unwrap(), 0.0, 1e-9);
        approx(phase_shift_deg(&sin, &cos, dt, f0).unwrap(), 90.0, 1e-6);
        approx(phase_shift_deg(&cos, &sin, dt, f0).unwrap(), -90.0, 1e-6);
        // Antisymmetry.
        let ab = phase_shift_deg(&sin, &cos, dt, f0).unwrap();
        let ba = phase_shift_deg(&cos, &sin, dt, f0).unwrap();
        approx(wrap_deg(ab + ba), 0.0, 1e-9);
    }

    #[test]
    fn phase_shift_weak_signal_rejected() {
        let n = 2048;
        let dt = 1e-4;
        let f0 = 100.0 / (n as f64 * dt);
        let sin: Vec<f64> = (0..n).map(|i| (TWO_PI * f0 * i as f64 * dt).sin()).collect();
        // Probe far from the tone where both channels are empty.
        let err = phase_shift_deg(&sin, &sin, dt, 40.0 * f0).unwrap_err();
        assert!(matches!(err, AnalysisError::WeakSignal));
    }

    /// Ladder phasors at the equal-M operating point, derived analytically
    /// from node equations with R = C = 1 and omega = 1/sqrt(6):
    /// V0 = -29, V1 = -5 - j 3 sqrt(6), V2 = 1 - j sqrt(6), V3 = 1.
    #[test]
    fn ladder_arm_phases_sum_to_180() {
        let s6 = 6.0f64.sqrt();
        let phasors = [
            Complex64::new(-29.0, 0.0),
            Complex64::new(-5.0, -3.0 * s6),
            Complex64::new(1.0, -s6),
            Complex64::new(1.0, 0.0),
        ];
        let omega = 1.0 / s6; // rad/s with R = C = 1
        let f0 = omega / TWO_PI;
        let dt = 0.1;
        let n = 8192;
        let wave = |ph: Complex64| -> Vec<f64> {
            (0..n)
                .map(|i| {
                    let t = i as f64 * dt;
                    (ph * Complex64::new(0.0, omega * t).exp()).re
                })
                .collect()
        };
        let chans: Vec<Vec<f64>> = phasors.iter().map(|&p| wave(p)).collect();

        let mut total = 0.0;
        for arm in 0..3 {
            let shift = phase_shift_deg(&chans[arm], &chans[arm + 1], dt, f0).unwrap();
            let analytic =
                wrap_deg((phasors[arm + 1].arg() - phasors[arm].arg()).to_degrees());
            approx(shift, analytic, 1.0);
            total += shift;
        }
        assert!((total - 180.0).abs() <= 5.0, "arm shifts sum to {total}");
    }

    #[test]
    fn oscillation_classification() {
        let dt = 1e-4;
        let n = 40_000;
        let f0 = 200.0;
        let len = n as f64 * dt; // 4 s, 800 cycles

        let make = |env: &dyn Fn(f64) -> f64| -> Vec<f64> {
            (0..n)
                .map(|i| {
                    let t = i as f64 * dt;
                    env(t) * (TWO_PI * f0 * t).sin()
                })
                .collect()
        };

        let steady = make(&|_| 1.0);
        let s = sustained_oscillation(&steady, dt).unwrap();
        assert_eq!(s.trend, Trend::Sustained);
        approx(s.frequency, f0, 0.5);
        approx(s.amplitude, 1.0, 0.01);

        let tau = len / 20.0;
        let decaying = make(&move |t| (-t / tau).exp());
        assert_eq!(sustained_oscillation(&decaying, dt).unwrap().trend, Trend::Decaying);

        let growing = make(&move |t| (t / tau).exp());
        assert_eq!(sustained_oscillation(&growing, dt).unwrap().trend, Trend::Growing);
    }

    #[test]
    fn too_short_record_rejected() {
        let dt = 1e-4;
        let n = 500; // 0.05 s of 200 Hz = 10 cycles
        let samples: Vec<f64> =
            (0..n).map(|i| (TWO_PI * 200.0 * i as f64 * dt).sin()).collect();
        assert!(matches!(
            sustained_oscillation(&samples, dt),
            Err(AnalysisError::TooShort(_))
        ));
    }

    #[test]
    fn integrate_window_of_constant() {
        let t: Vec<f64> = (0..101).map(|k| k as f64 * 0.01).collect();
        let y = vec![2.0; 101];
        approx(integrate_time_window(&t, &y, 0.25, 0.75), 1.0, 1e-9);
    }

    #[test]
    fn spectrum_csv_header() {
        let samples = vec![0.0, 1.0, 0.0, -1.0, 0.0, 1.0, 0.0, -1.0];
        let spec = Spectrum::compute(&samples, 0.25, Window::None).unwrap();
        let mut buf = Vec::new();
        spec.to_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("freq_hz,magnitude,phase_rad\n"));
        assert_eq!(text.lines().count(), 1 + 8 / 2 + 1);
    }
}
