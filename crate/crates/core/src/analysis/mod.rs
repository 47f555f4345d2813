//! Closed-form oscillator design math and waveform analysis.
//!
//! The design half builds the characteristic cubic of the three-arm
//! memristor-capacitor phase-shift loop, solves it in closed form, derives
//! the oscillation frequency and ratio gain, and assembles the printed 3x3
//! state matrix. The critical loop gain is located numerically by bisection
//! on the root locus rather than assumed; the cubic's critical value and the
//! classical ratio gain disagree (35 vs 29) and both are reported wherever
//! they appear.
//!
//! The signal half ([`spectral`]) provides the radix-2 FFT, spectra,
//! dominant-frequency and phase measurement, and oscillation classification.

mod spectral;

pub use spectral::*;

use num_complex::Complex64;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("leading cubic coefficient is zero")]
    DegenerateLeadingCoefficient,
    #[error("channel is empty or too short for a spectrum")]
    EmptyChannel,
    #[error("signal too weak to measure at the requested frequency")]
    WeakSignal,
    #[error("record too short: {0}")]
    TooShort(String),
    #[error("invalid design: {0}")]
    InvalidDesign(String),
}

/// Analytic design inputs for the phase-shift loop. Memristances are
/// treated as fixed resistances; `k` is the amplifier gain magnitude and
/// `r4` the amplifier-side resistance defining the normalized memristance
/// `m = r4 / m1`.
///
/// The characteristic cubic and the frequency formulas use the common `c`;
/// the per-arm overrides only enter the state matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OscillatorDesign {
    pub m1: f64,
    pub m2: f64,
    pub m3: f64,
    pub c: f64,
    pub k: f64,
    pub r4: f64,
    pub c1: Option<f64>,
    pub c2: Option<f64>,
    pub c3: Option<f64>,
}

impl OscillatorDesign {
    pub fn new(m1: f64, m2: f64, m3: f64, c: f64, k: f64, r4: f64) -> Result<Self, AnalysisError> {
        let d = OscillatorDesign { m1, m2, m3, c, k, r4, c1: None, c2: None, c3: None };
        d.validate()?;
        Ok(d)
    }

    pub fn equal_m(m: f64, c: f64, k: f64, r4: f64) -> Result<Self, AnalysisError> {
        Self::new(m, m, m, c, k, r4)
    }

    fn validate(&self) -> Result<(), AnalysisError> {
        for (name, v) in [
            ("m1", self.m1),
            ("m2", self.m2),
            ("m3", self.m3),
            ("c", self.c),
            ("k", self.k),
            ("r4", self.r4),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(AnalysisError::InvalidDesign(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    pub fn c1(&self) -> f64 {
        self.c1.unwrap_or(self.c)
    }
    pub fn c2(&self) -> f64 {
        self.c2.unwrap_or(self.c)
    }
    pub fn c3(&self) -> f64 {
        self.c3.unwrap_or(self.c)
    }

    /// Normalized memristance `m = r4 / m1`.
    pub fn normalized_memristance(&self) -> f64 {
        self.r4 / self.m1
    }
}

/// Coefficients of `a s^3 + b s^2 + c s + d`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CubicCoeffs {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl CubicCoeffs {
    pub fn eval(&self, s: Complex64) -> Complex64 {
        ((Complex64::new(self.a, 0.0) * s + self.b) * s + self.c) * s + self.d
    }

    fn eval_real(&self, x: f64) -> f64 {
        ((self.a * x + self.b) * x + self.c) * x + self.d
    }

    fn deriv_real(&self, x: f64) -> f64 {
        (3.0 * self.a * x + 2.0 * self.b) * x + self.c
    }
}

/// Characteristic cubic of the third-order loop:
/// `a = M1 M2 M3 C^3 (1+K)`, `b = 3 M1 M2 C^2 + 2 M1 M3 C^2 + M2 M3 C^2`,
/// `c = 2 M1 C + 2 M2 C + 2 M3 C`, `d = 1`.
pub fn char_poly_coeffs(design: &OscillatorDesign) -> CubicCoeffs {
    let (m1, m2, m3, c, k) = (design.m1, design.m2, design.m3, design.c, design.k);
    CubicCoeffs {
        a: m1 * m2 * m3 * c * c * c * (1.0 + k),
        b: 3.0 * m1 * m2 * c * c + 2.0 * m1 * m3 * c * c + m2 * m3 * c * c,
        c: 2.0 * m1 * c + 2.0 * m2 * c + 2.0 * m3 * c,
        d: 1.0,
    }
}

/// Oscillation frequency in Hz:
/// `f = 1 / (2 pi C sqrt(3 M1 M2 + 2 M1 M3 + M2 M3))`, which reduces to
/// `1 / (2 pi M C sqrt(6))` for equal memristances.
pub fn osc_frequency(design: &OscillatorDesign) -> f64 {
    let (m1, m2, m3, c) = (design.m1, design.m2, design.m3, design.c);
    1.0 / (2.0 * std::f64::consts::PI * c * (3.0 * m1 * m2 + 2.0 * m1 * m3 + m2 * m3).sqrt())
}

/// Ratio gain for sustained oscillation:
/// `alpha = 8 + 6 M2/M3 + 6 M1/M3 + 4 M1/M2 + 2 M2/M1 + 2 M3/M2 + M3/M1`.
/// Equal memristances give exactly 29.
pub fn gain_alpha(m1: f64, m2: f64, m3: f64) -> f64 {
    8.0 + 6.0 * m2 / m3 + 6.0 * m1 / m3 + 4.0 * m1 / m2 + 2.0 * m2 / m1 + 2.0 * m3 / m2
        + m3 / m1
}

/// The printed 3x3 state matrix over the capacitor voltages
/// (V_C1, V_C2, V_C3), including its asymmetric `m` entries and the third
/// row's three identical `1/(M1 C3)` entries, scaled by `-1/(m+1)`.
///
/// Its eigenvalues are *compared* against the characteristic cubic but
/// intentionally never asserted equal; the two formulations disagree and the
/// report shows both.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateMatrix {
    pub m: [[f64; 3]; 3],
}

pub fn state_matrix(design: &OscillatorDesign) -> StateMatrix {
    let (m1, m2, m3) = (design.m1, design.m2, design.m3);
    let (c1, c2, c3) = (design.c1(), design.c2(), design.c3());
    let m = design.normalized_memristance();
    let pre = -1.0 / (m + 1.0);
    StateMatrix {
        m: [
            [
                pre / c1 * (1.0 / m1 + 1.0 / m2 + 1.0 / m3),
                pre / c1 * (1.0 / m1 + 1.0 / m2 - m / m3),
                pre / c1 * (1.0 / m1 - m / m2 - m / m3),
            ],
            [
                pre / c2 * (1.0 / m1 + 1.0 / m2),
                pre / c2 * (1.0 / m1 + 1.0 / m2),
                pre / c2 * (1.0 / m1 - m / m2),
            ],
            [pre / (m1 * c3), pre / (m1 * c3), pre / (m1 * c3)],
        ],
    }
}

/// Eigenvalues via the matrix's characteristic cubic fed to [`cubic_roots`].
pub fn eigenvalues_3x3(matrix: &StateMatrix) -> [Complex64; 3] {
    let a = &matrix.m;
    let trace = a[0][0] + a[1][1] + a[2][2];
    let minors = a[0][0] * a[1][1] - a[0][1] * a[1][0]
        + a[0][0] * a[2][2]
        - a[0][2] * a[2][0]
        + a[1][1] * a[2][2]
        - a[1][2] * a[2][1];
    let det = a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1])
        - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
        + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0]);
    // det(A - lambda I) = 0 <=> lambda^3 - tr lambda^2 + m2 lambda - det = 0
    cubic_roots(&CubicCoeffs { a: 1.0, b: -trace, c: minors, d: -det })
        .expect("leading coefficient is 1")
}

/// Roots of the cubic in deterministic order.
///
/// With one real root and a conjugate pair the order is real root first,
/// then the pair with positive imaginary part before its conjugate. With
/// three real roots they come back in ascending order. Each root is
/// Newton-polished against the original coefficients.
pub fn cubic_roots(coeffs: &CubicCoeffs) -> Result<[Complex64; 3], AnalysisError> {
    if coeffs.a == 0.0 {
        return Err(AnalysisError::DegenerateLeadingCoefficient);
    }
    let b = coeffs.b / coeffs.a;
    let c = coeffs.c / coeffs.a;
    let d = coeffs.d / coeffs.a;

    // Depressed form: s = t - b/3, t^3 + p t + q = 0.
    let shift = b / 3.0;
    let p = c - b * b / 3.0;
    let q = 2.0 * b * b * b / 27.0 - b * c / 3.0 + d;

    let roots: [Complex64; 3];
    if p == 0.0 && q == 0.0 {
        let r = Complex64::new(-shift, 0.0);
        roots = [r, r, r];
    } else {
        let disc = (q / 2.0) * (q / 2.0) + (p / 3.0) * (p / 3.0) * (p / 3.0);
        if disc > 0.0 {
            // One real root; pick the large Cardano branch to avoid
            // cancellation, recover the other factor from u v = -p/3.
            let sq = disc.sqrt();
            let big_arg = if (-q / 2.0 + sq).abs() >= (-q / 2.0 - sq).abs() {
                -q / 2.0 + sq
            } else {
                -q / 2.0 - sq
            };
            let u = big_arg.cbrt();
            let v = if u != 0.0 { -p / (3.0 * u) } else { 0.0 };
            let t_real = u + v;
            let re = -t_real / 2.0 - shift;
            let im = (3.0f64.sqrt() / 2.0) * (u - v).abs();
            roots = [
                Complex64::new(t_real - shift, 0.0),
                Complex64::new(re, im),
                Complex64::new(re, -im),
            ];
        } else if disc < 0.0 {
            // Three distinct real roots (trigonometric branch).
            let m = 2.0 * (-p / 3.0).sqrt();
            let arg = (3.0 * q / (p * m)).clamp(-1.0, 1.0);
            let theta = arg.acos();
            let mut t = [
                m * (theta / 3.0).cos(),
                m * ((theta - 2.0 * std::f64::consts::PI) / 3.0).cos(),
                m * ((theta - 4.0 * std::f64::consts::PI) / 3.0).cos(),
            ];
            t.sort_by(|x, y| x.partial_cmp(y).unwrap());
            roots = [
                Complex64::new(t[0] - shift, 0.0),
                Complex64::new(t[1] - shift, 0.0),
                Complex64::new(t[2] - shift, 0.0),
            ];
        } else {
            // Repeated root: t = 3q/p simple, t = -3q/(2p) double.
            let simple = 3.0 * q / p;
            let double = -3.0 * q / (2.0 * p);
            let mut t = [simple, double, double];
            t.sort_by(|x, y| x.partial_cmp(y).unwrap());
            roots = [
                Complex64::new(t[0] - shift, 0.0),
                Complex64::new(t[1] - shift, 0.0),
                Complex64::new(t[2] - shift, 0.0),
            ];
        }
    }

    // Newton polish on the original cubic; conjugate symmetry is preserved
    // by polishing one member of the pair and mirroring it.
    let mut out = roots;
    if out[1].im != 0.0 {
        out[0] = Complex64::new(polish_real(coeffs, out[0].re), 0.0);
        let polished = polish_complex(coeffs, out[1]);
        out[1] = polished;
        out[2] = polished.conj();
    } else {
        for r in out.iter_mut() {
            *r = Complex64::new(polish_real(coeffs, r.re), 0.0);
        }
        out.sort_by(|x, y| x.re.partial_cmp(&y.re).unwrap());
    }
    Ok(out)
}

fn polish_real(coeffs: &CubicCoeffs, mut x: f64) -> f64 {
    for _ in 0..3 {
        let f = coeffs.eval_real(x);
        let df = coeffs.deriv_real(x);
        if df == 0.0 || !f.is_finite() {
            break;
        }
        let next = x - f / df;
        if !next.is_finite() || coeffs.eval_real(next).abs() > f.abs() {
            break;
        }
        x = next;
    }
    x
}

fn polish_complex(coeffs: &CubicCoeffs, mut z: Complex64) -> Complex64 {
    for _ in 0..3 {
        let f = coeffs.eval(z);
        let df = (Complex64::new(3.0 * coeffs.a, 0.0) * z + 2.0 * coeffs.b) * z + coeffs.c;
        if df.norm_sqr() == 0.0 || !f.is_finite() {
            break;
        }
        let next = z - f / df;
        if !next.is_finite() || coeffs.eval(next).norm() > f.norm() {
            break;
        }
        z = next;
    }
    z
}

/// Critical gain located by bisection on the real part of the conjugate
/// root pair of the characteristic cubic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriticalGain {
    /// Gain K at which the pair crosses the imaginary axis.
    pub k: f64,
    /// Oscillation frequency at the crossing [rad/s].
    pub omega: f64,
}

/// Bisect K over the sign of the conjugate pair's real part. When the cubic
/// has three real roots (small K, passive-like) the locus is treated as
/// stable.
pub fn critical_gain(design: &OscillatorDesign) -> Result<CriticalGain, AnalysisError> {
    design.validate()?;
    let pair_re = |k: f64| -> Result<f64, AnalysisError> {
        let d = OscillatorDesign { k, ..*design };
        let roots = cubic_roots(&char_poly_coeffs(&d))?;
        if roots[1].im != 0.0 {
            Ok(roots[1].re)
        } else {
            Ok(roots[2].re.min(-f64::MIN_POSITIVE))
        }
    };

    let mut lo = 0.0;
    if pair_re(lo)? > 0.0 {
        return Err(AnalysisError::InvalidDesign(
            "loop is already unstable at zero gain".to_string(),
        ));
    }
    let mut hi = 1.0;
    let mut tries = 0;
    while pair_re(hi)? <= 0.0 {
        lo = hi;
        hi *= 2.0;
        tries += 1;
        if tries > 200 {
            return Err(AnalysisError::InvalidDesign(
                "no critical gain below 2^200".to_string(),
            ));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if pair_re(mid)? > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo < 1e-10 * hi.max(1.0) {
            break;
        }
    }
    let k = 0.5 * (lo + hi);
    let d = OscillatorDesign { k, ..*design };
    let roots = cubic_roots(&char_poly_coeffs(&d))?;
    Ok(CriticalGain { k, omega: roots[1].im.abs() })
}
