//! Memristor constitutive model.
//!
//! The device is the HP-style dopant-drift memristor: a normalized dopant
//! position `x = w/D` in `[0, 1]` sets the instantaneous resistance
//! (memristance), and current through the device moves `x`. Boundary motion
//! is suppressed by the Biolek window, which switches form with the sign of
//! the current so that the window vanishes only at the boundary the state is
//! actually approaching.

use std::fmt;

/// Which window multiplies the state derivative.
///
/// `Biolek` is the standard semantics: the step term is `stp(-i)` with
/// `stp(u) = 1` for `u >= 0`, i.e. the term is 0 for `i > 0` and 1 for
/// `i <= 0`, so the window vanishes at `x = 1` under positive current and at
/// `x = 0` under negative current.
///
/// `PrintedStep` is a compatibility variant that keeps the step at 1 for
/// `i >= 0` and 0 for `i < 0`. It vanishes at the *opposite* boundary and
/// blocks motion away from `x = 0`; it exists so the two conventions can be
/// compared, not because it is useful.
///
/// `None` disables the window entirely (`f = 1`), giving the linear-drift
/// model that `linear_drift_state_of_charge` solves in closed form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WindowKind {
    #[default]
    Biolek,
    PrintedStep,
    None,
}

impl fmt::Display for WindowKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WindowKind::Biolek => write!(f, "BIOLEK"),
            WindowKind::PrintedStep => write!(f, "PRINTED"),
            WindowKind::None => write!(f, "NONE"),
        }
    }
}

/// Device constants for one memristor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MemristorParams {
    /// Fully-doped (low) resistance [ohm].
    pub r_on: f64,
    /// Undoped (high) resistance [ohm].
    pub r_off: f64,
    /// Device thickness D [m].
    pub d: f64,
    /// Dopant mobility [m^2 V^-1 s^-1].
    pub mu_v: f64,
    /// Polarity, +1 or -1.
    pub eta: i32,
    /// Window exponent, a positive integer.
    pub p: u32,
    /// Initial normalized dopant position.
    pub x0: f64,
    /// Window variant used by the state equation.
    pub window: WindowKind,
}

impl Default for MemristorParams {
    /// Canonical HP-model values: 100 ohm / 16 kohm, D = 10 nm,
    /// mu_v = 1e-14 m^2/(V s), eta = +1, p = 1, x0 = 0.5.
    fn default() -> Self {
        MemristorParams {
            r_on: 100.0,
            r_off: 16e3,
            d: 10e-9,
            mu_v: 1e-14,
            eta: 1,
            p: 1,
            x0: 0.5,
            window: WindowKind::Biolek,
        }
    }
}

impl MemristorParams {
    /// `mu_v * r_on / D^2`, the drift factor in 1/coulomb. The dopant-drift
    /// law is usually written for the raw width `w` with a single factor of
    /// `D`; dividing once more normalizes the state to `x = w/D`, which is
    /// where the `D^2` comes from.
    pub fn drift_factor(&self) -> f64 {
        self.mu_v * self.r_on / (self.d * self.d)
    }

    /// Validate the parameter invariants. `r_on == r_off` is tolerated as
    /// the degenerate resistor-like device.
    pub fn validate(&self) -> Result<(), String> {
        if !(self.r_on > 0.0) || !(self.r_off >= self.r_on) {
            return Err(format!(
                "memristor requires 0 < RON <= ROFF, got RON={} ROFF={}",
                self.r_on, self.r_off
            ));
        }
        if !(self.d > 0.0) {
            return Err(format!("memristor thickness D must be positive, got {}", self.d));
        }
        if !(self.mu_v > 0.0) {
            return Err(format!("memristor mobility MU must be positive, got {}", self.mu_v));
        }
        if self.eta != 1 && self.eta != -1 {
            return Err(format!("memristor polarity ETA must be +1 or -1, got {}", self.eta));
        }
        if self.p < 1 {
            return Err("memristor window exponent P must be >= 1".to_string());
        }
        if !(0.0..=1.0).contains(&self.x0) {
            return Err(format!("memristor initial state X0 must lie in [0,1], got {}", self.x0));
        }
        Ok(())
    }
}

/// Normalized dopant position; the engine clamps it to `[0, 1]` after every
/// integration step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MemristorState {
    pub x: f64,
}

impl MemristorState {
    pub fn new(x: f64) -> Self {
        MemristorState { x: x.clamp(0.0, 1.0) }
    }
}

/// Biolek window `f(x, i) = 1 - (x - stp(-i))^(2p)` with the standard step
/// semantics (`stp(-i)` is 0 for `i > 0` and 1 for `i <= 0`).
///
/// Total on `0 <= x <= 1`, `p >= 1`; the result lies in `[0, 1]`.
pub fn biolek_window(x: f64, i: f64, p: u32) -> f64 {
    window_value(WindowKind::Biolek, x, i, p)
}

/// Window value for an explicit [`WindowKind`].
pub fn window_value(kind: WindowKind, x: f64, i: f64, p: u32) -> f64 {
    let step = match kind {
        WindowKind::Biolek => {
            if i > 0.0 {
                0.0
            } else {
                1.0
            }
        }
        WindowKind::PrintedStep => {
            if i >= 0.0 {
                1.0
            } else {
                0.0
            }
        }
        WindowKind::None => return 1.0,
    };
    1.0 - (x - step).powi(2 * p as i32)
}

/// Memristance `M(x) = r_on * x + r_off * (1 - x)`.
pub fn memristance(params: &MemristorParams, x: f64) -> f64 {
    params.r_on * x + params.r_off * (1.0 - x)
}

/// State derivative `dx/dt = eta * (mu_v * r_on / D^2) * i * f(x, i)`
/// in 1/s, using the window selected in `params`.
pub fn state_derivative(params: &MemristorParams, x: f64, i: f64) -> f64 {
    params.eta as f64 * params.drift_factor() * i * window_value(params.window, x, i, params.p)
}

/// Closed-form state of the windowless (linear-drift) model after a net
/// charge `q` has passed: `x(q) = clamp(x0 + eta * drift_factor * q, 0, 1)`.
///
/// Returns the state and whether it saturated at a boundary. This is the
/// independent oracle for the transient engine's state integration.
pub fn linear_drift_state_of_charge(params: &MemristorParams, q: f64) -> (f64, bool) {
    let raw = params.x0 + params.eta as f64 * params.drift_factor() * q;
    let clamped = raw.clamp(0.0, 1.0);
    (clamped, raw != clamped)
}
