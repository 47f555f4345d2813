//! Python bindings: netlist parsing, transient runs, spectra, and the
//! oscillator design math, kept as plain functions over plain values.

use memsim::analysis::{self, OscillatorDesign, Spectrum, StateMatrix, Window};
use memsim::circuits::{
    build_differentiator, build_integrator, build_phase_shift_oscillator, DifferentiatorSpec,
    IntegratorSpec, PhaseShiftSpec,
};
use memsim::device::{self, MemristorParams};
use memsim::engine::{transient_run, Method, SimConfig};
use memsim::netlist;
use num_complex::Complex64;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn window_from(name: &str) -> PyResult<Window> {
    match name.to_ascii_lowercase().as_str() {
        "hann" => Ok(Window::Hann),
        "none" => Ok(Window::None),
        other => Err(PyValueError::new_err(format!("unknown window '{other}'"))),
    }
}

/// Parse and validate netlist text, returning its canonical serialized form.
#[pyfunction]
fn parse_netlist(text: &str) -> PyResult<String> {
    let n = netlist::parse(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(netlist::serialize(&n))
}

/// Run a transient simulation. Returns `(t, channels)` where `channels` is
/// a list of `(name, samples)` pairs in probe order.
#[pyfunction]
#[pyo3(signature = (text, tstep=None, tstop=None, method="trap"))]
fn simulate(
    text: &str,
    tstep: Option<f64>,
    tstop: Option<f64>,
    method: &str,
) -> PyResult<(Vec<f64>, Vec<(String, Vec<f64>)>)> {
    let n = netlist::parse(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let tran = n.tran();
    let dt = tstep
        .or(tran.map(|(step, _)| step))
        .ok_or_else(|| PyValueError::new_err("no .tran directive and no tstep argument"))?;
    let stop = tstop
        .or(tran.map(|(_, stop)| stop))
        .ok_or_else(|| PyValueError::new_err("no .tran directive and no tstop argument"))?;
    let mut config = SimConfig::new(dt, stop);
    config.method = match method.to_ascii_lowercase().as_str() {
        "trap" | "trapezoidal" => Method::Trapezoidal,
        "be" | "backward-euler" => Method::BackwardEuler,
        other => return Err(PyValueError::new_err(format!("unknown method '{other}'"))),
    };
    let wave = transient_run(&n, &config).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok((wave.t, wave.channels))
}

/// Single-sided amplitude spectrum: `(freq_hz, magnitude, phase_rad)`.
#[pyfunction]
#[pyo3(signature = (samples, dt, window="hann"))]
fn spectrum(
    samples: Vec<f64>,
    dt: f64,
    window: &str,
) -> PyResult<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let spec = Spectrum::compute(&samples, dt, window_from(window)?)
        .map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok((spec.freq, spec.magnitude, spec.phase))
}

/// Dominant frequency of a channel in Hz (DC excluded).
#[pyfunction]
#[pyo3(signature = (samples, dt, window="hann"))]
fn dominant_frequency(samples: Vec<f64>, dt: f64, window: &str) -> PyResult<f64> {
    let spec = Spectrum::compute(&samples, dt, window_from(window)?)
        .map_err(|e| PyValueError::new_err(e.to_string()))?;
    analysis::dominant_frequency(&spec, true).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// Phase of `b` minus phase of `a` at `f0`, in degrees.
#[pyfunction]
fn phase_shift_deg(a: Vec<f64>, b: Vec<f64>, dt: f64, f0: f64) -> PyResult<f64> {
    analysis::phase_shift_deg(&a, &b, dt, f0).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// Classify a record: returns `(trend, amplitude, frequency)` with trend one
/// of "growing", "decaying", "sustained".
#[pyfunction]
fn sustained_oscillation(samples: Vec<f64>, dt: f64) -> PyResult<(String, f64, f64)> {
    let s = analysis::sustained_oscillation(&samples, dt)
        .map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok((s.trend.to_string(), s.amplitude, s.frequency))
}

#[pyfunction]
fn gain_alpha(m1: f64, m2: f64, m3: f64) -> f64 {
    analysis::gain_alpha(m1, m2, m3)
}

#[pyfunction]
fn osc_frequency(m1: f64, m2: f64, m3: f64, c: f64) -> PyResult<f64> {
    let d = OscillatorDesign::new(m1, m2, m3, c, 1.0, 10.0)
        .map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(analysis::osc_frequency(&d))
}

/// Critical gain K of the characteristic cubic, found by root-locus
/// bisection. Returns `(k, omega_rad_s)`.
#[pyfunction]
fn critical_gain(m1: f64, m2: f64, m3: f64, c: f64) -> PyResult<(f64, f64)> {
    let d = OscillatorDesign::new(m1, m2, m3, c, 1.0, 10.0)
        .map_err(|e| PyValueError::new_err(e.to_string()))?;
    let crit = analysis::critical_gain(&d).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok((crit.k, crit.omega))
}

/// Coefficients `(a, b, c, d)` of the characteristic cubic at gain `k`.
/// Total in `k`, so degenerate gains like -1 can be probed.
#[pyfunction]
fn char_poly(m1: f64, m2: f64, m3: f64, c: f64, k: f64) -> PyResult<(f64, f64, f64, f64)> {
    let d = OscillatorDesign::new(m1, m2, m3, c, 1.0, 10.0)
        .map_err(|e| PyValueError::new_err(e.to_string()))?;
    let cc = analysis::char_poly_coeffs(&OscillatorDesign { k, ..d });
    Ok((cc.a, cc.b, cc.c, cc.d))
}

/// Roots of `a s^3 + b s^2 + c s + d` (real root first when a conjugate
/// pair exists).
#[pyfunction]
fn cubic_roots(a: f64, b: f64, c: f64, d: f64) -> PyResult<Vec<Complex64>> {
    let roots = analysis::cubic_roots(&analysis::CubicCoeffs { a, b, c, d })
        .map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(roots.to_vec())
}

/// The printed 3x3 state matrix over the capacitor voltages.
#[pyfunction]
fn state_matrix(m1: f64, m2: f64, m3: f64, c: f64, r4: f64) -> PyResult<Vec<Vec<f64>>> {
    let d = OscillatorDesign::new(m1, m2, m3, c, 1.0, r4)
        .map_err(|e| PyValueError::new_err(e.to_string()))?;
    let sm = analysis::state_matrix(&d);
    Ok(sm.m.iter().map(|row| row.to_vec()).collect())
}

#[pyfunction]
fn eigenvalues_3x3(matrix: Vec<Vec<f64>>) -> PyResult<Vec<Complex64>> {
    if matrix.len() != 3 || matrix.iter().any(|r| r.len() != 3) {
        return Err(PyValueError::new_err("expected a 3x3 matrix"));
    }
    let mut m = [[0.0; 3]; 3];
    for (i, row) in matrix.iter().enumerate() {
        m[i].copy_from_slice(row);
    }
    Ok(analysis::eigenvalues_3x3(&StateMatrix { m }).to_vec())
}

/// Memristance at state `x` for the default device with `r_on`/`r_off`.
#[pyfunction]
fn memristance(x: f64, r_on: f64, r_off: f64) -> f64 {
    let p = MemristorParams { r_on, r_off, ..MemristorParams::default() };
    device::memristance(&p, x)
}

#[pyfunction]
fn biolek_window(x: f64, i: f64, p: u32) -> f64 {
    device::biolek_window(x, i, p)
}

/// Netlist text of the default phase-shift oscillator demo.
#[pyfunction]
fn phase_shift_netlist() -> String {
    netlist::serialize(&build_phase_shift_oscillator(&PhaseShiftSpec::default()))
}

/// Netlist text of the default integrator demo.
#[pyfunction]
fn integrator_netlist() -> String {
    netlist::serialize(&build_integrator(&IntegratorSpec::default()))
}

/// Netlist text of the default differentiator demo.
#[pyfunction]
fn differentiator_netlist() -> String {
    netlist::serialize(&build_differentiator(&DifferentiatorSpec::default()))
}

#[pymodule]
fn memsim_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(parse_netlist, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(spectrum, m)?)?;
    m.add_function(wrap_pyfunction!(dominant_frequency, m)?)?;
    m.add_function(wrap_pyfunction!(phase_shift_deg, m)?)?;
    m.add_function(wrap_pyfunction!(sustained_oscillation, m)?)?;
    m.add_function(wrap_pyfunction!(gain_alpha, m)?)?;
    m.add_function(wrap_pyfunction!(osc_frequency, m)?)?;
    m.add_function(wrap_pyfunction!(critical_gain, m)?)?;
    m.add_function(wrap_pyfunction!(char_poly, m)?)?;
    m.add_function(wrap_pyfunction!(cubic_roots, m)?)?;
    m.add_function(wrap_pyfunction!(state_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(eigenvalues_3x3, m)?)?;
    m.add_function(wrap_pyfunction!(memristance, m)?)?;
    m.add_function(wrap_pyfunction!(biolek_window, m)?)?;
    m.add_function(wrap_pyfunction!(phase_shift_netlist, m)?)?;
    m.add_function(wrap_pyfunction!(integrator_netlist, m)?)?;
    m.add_function(wrap_pyfunction!(differentiator_netlist, m)?)?;
    Ok(())
}
