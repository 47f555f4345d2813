//! MNA-based fixed-step transient simulator.
//!
//! Each step stamps the linear elements and companion models into a dense
//! system, solves it by LU with partial pivoting, then refines the
//! memristor states (trapezoidal rule over the state equation) and any
//! nonlinear gain-stage linearization in an inner fixed-point loop until
//! both the states and the node voltages settle.
//!
//! State at `t = 0` comes from a consistent initial solve in which every
//! capacitor is held at its initial voltage by a temporary source branch;
//! this also yields the capacitor currents the trapezoidal companion needs
//! for a clean second-order start.

use crate::device::{memristance, state_derivative, MemristorParams, MemristorState};
use crate::netlist::{Component, ComponentKind, Netlist, Probe, SourceSpec};
use crate::waveform::Waveform;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("singular matrix: {0}")]
    SingularMatrix(String),
    #[error("inner iteration did not converge at step {step} (t = {t:e} s)")]
    NonConvergence { step: usize, t: f64 },
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("netlist error: {0}")]
    BadNetlist(String),
}

/// Integration rule for capacitors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Method {
    #[default]
    Trapezoidal,
    BackwardEuler,
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    /// Fixed timestep [s].
    pub dt: f64,
    /// End time [s].
    pub t_stop: f64,
    /// Inner-loop voltage tolerance [V].
    pub newton_tol: f64,
    /// Inner-loop iteration cap per timestep.
    pub max_inner_iters: usize,
    pub method: Method,
    /// Record-time clamp of op-amp output node voltages to +/- this value.
    /// Cosmetic only; it does not feed back into the solution.
    pub opamp_clip: Option<f64>,
}

impl SimConfig {
    pub fn new(dt: f64, t_stop: f64) -> Self {
        SimConfig {
            dt,
            t_stop,
            newton_tol: 1e-9,
            max_inner_iters: 50,
            method: Method::Trapezoidal,
            opamp_clip: None,
        }
    }

    /// Build from the netlist's first `.tran` directive.
    pub fn from_netlist(netlist: &Netlist) -> Option<Self> {
        netlist.tran().map(|(step, stop)| SimConfig::new(step, stop))
    }

    fn validate(&self) -> Result<(), EngineError> {
        if !(self.dt > 0.0) || !(self.t_stop > self.dt) || !(self.newton_tol > 0.0) {
            return Err(EngineError::InvalidConfig(format!(
                "need 0 < dt < t_stop and newton_tol > 0 (dt={}, t_stop={}, tol={})",
                self.dt, self.t_stop, self.newton_tol
            )));
        }
        Ok(())
    }
}

/// Inner-loop state tolerance on the normalized dopant position.
const STATE_TOL: f64 = 1e-9;
/// Relative pivot threshold below which the matrix is declared singular.
const PIVOT_REL_TOL: f64 = 1e-13;

// ---------------------------------------------------------------------------
// Dense linear system
// ---------------------------------------------------------------------------

/// A stamped MNA system `A x = b` (row-major dense storage).
#[derive(Debug, Clone)]
pub struct MnaSystem {
    pub order: usize,
    pub matrix: Vec<f64>,
    pub rhs: Vec<f64>,
}

impl MnaSystem {
    pub fn new(order: usize) -> Self {
        MnaSystem { order, matrix: vec![0.0; order * order], rhs: vec![0.0; order] }
    }

    #[inline]
    fn add(&mut self, row: usize, col: usize, value: f64) {
        self.matrix[row * self.order + col] += value;
    }

    /// Solve by LU decomposition with partial pivoting. The system is left
    /// untouched; singularity is flagged when the best available pivot falls
    /// below `1e-13` of the largest matrix entry.
    pub fn solve(&self) -> Result<Vec<f64>, EngineError> {
        let n = self.order;
        if n == 0 {
            return Ok(Vec::new());
        }
        let mut a = self.matrix.clone();
        let mut x = self.rhs.clone();
        let max_abs = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if max_abs == 0.0 {
            return Err(EngineError::SingularMatrix("all-zero matrix".to_string()));
        }
        let threshold = PIVOT_REL_TOL * max_abs;

        for col in 0..n {
            let mut pivot_row = col;
            let mut pivot_val = a[col * n + col].abs();
            for row in col + 1..n {
                let v = a[row * n + col].abs();
                if v > pivot_val {
                    pivot_val = v;
                    pivot_row = row;
                }
            }
            if pivot_val < threshold {
                return Err(EngineError::SingularMatrix(format!(
                    "pivot {pivot_val:e} below threshold at column {col}"
                )));
            }
            if pivot_row != col {
                for k in 0..n {
                    a.swap(col * n + k, pivot_row * n + k);
                }
                x.swap(col, pivot_row);
            }
            let pivot = a[col * n + col];
            for row in col + 1..n {
                let factor = a[row * n + col] / pivot;
                if factor == 0.0 {
                    continue;
                }
                a[row * n + col] = 0.0;
                for k in col + 1..n {
                    a[row * n + k] -= factor * a[col * n + k];
                }
                x[row] -= factor * x[col];
            }
        }
        for row in (0..n).rev() {
            let mut sum = x[row];
            for k in row + 1..n {
                sum -= a[row * n + k] * x[k];
            }
            x[row] = sum / a[row * n + row];
        }
        Ok(x)
    }

    /// Infinity norm of `A x - b` over the first `rows` equations.
    pub fn residual_inf(&self, x: &[f64], rows: usize) -> f64 {
        let n = self.order;
        let mut worst = 0.0f64;
        for row in 0..rows.min(n) {
            let mut acc = -self.rhs[row];
            for col in 0..n {
                acc += self.matrix[row * n + col] * x[col];
            }
            worst = worst.max(acc.abs());
        }
        worst
    }
}

// ---------------------------------------------------------------------------
// Compiled circuit
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
enum Elem {
    Resistor { a: Option<usize>, b: Option<usize>, ohms: f64 },
    Capacitor { a: Option<usize>, b: Option<usize>, farads: f64, cap_idx: usize },
    Memristor { a: Option<usize>, b: Option<usize>, params: MemristorParams, mem_idx: usize },
    Source { a: Option<usize>, b: Option<usize>, spec: SourceSpec, branch: usize },
    Vcvs {
        op: Option<usize>,
        om: Option<usize>,
        cp: Option<usize>,
        cm: Option<usize>,
        gain: f64,
        clip: Option<f64>,
        branch: usize,
    },
    OpAmp { out: Option<usize>, ip: Option<usize>, im: Option<usize>, branch: usize },
}

#[derive(Debug, Clone)]
enum Channel {
    NodeVoltage { name: String, node: Option<usize>, opamp_out: bool },
    DiffVoltage { name: String, a: Option<usize>, b: Option<usize> },
    ElementCurrent { name: String, elem: usize },
    MemristorState { name: String, mem_idx: usize },
}

impl Channel {
    fn name(&self) -> &str {
        match self {
            Channel::NodeVoltage { name, .. }
            | Channel::DiffVoltage { name, .. }
            | Channel::ElementCurrent { name, .. }
            | Channel::MemristorState { name, .. } => name,
        }
    }
}

/// A netlist compiled to node/branch indices, ready for stamping.
pub struct CircuitModel {
    node_names: Vec<String>,
    elems: Vec<Elem>,
    elem_names: Vec<String>,
    n_branches: usize,
    n_caps: usize,
    mem_params: Vec<MemristorParams>,
    channels: Vec<Channel>,
}

/// Per-capacitor companion history.
#[derive(Debug, Clone, Copy, Default)]
struct CapState {
    v: f64,
    i: f64,
}

/// Per-memristor dynamic state.
#[derive(Debug, Clone, Copy)]
struct MemDynamic {
    state: MemristorState,
    i: f64,
}

impl CircuitModel {
    pub fn compile(netlist: &Netlist) -> Result<Self, EngineError> {
        let mut node_names: Vec<String> = Vec::new();
        let index_of = |label: &str, node_names: &mut Vec<String>| -> Option<usize> {
            if label == "0" {
                return None;
            }
            if let Some(pos) = node_names.iter().position(|n| n == label) {
                return Some(pos);
            }
            node_names.push(label.to_string());
            Some(node_names.len() - 1)
        };

        let mut elems = Vec::new();
        let mut elem_names = Vec::new();
        let mut n_branches = 0;
        let mut n_caps = 0;
        let mut mem_params = Vec::new();

        for Component { name, nodes, kind } in &netlist.components {
            let e = match kind {
                ComponentKind::Resistor { ohms } => Elem::Resistor {
                    a: index_of(&nodes[0], &mut node_names),
                    b: index_of(&nodes[1], &mut node_names),
                    ohms: *ohms,
                },
                ComponentKind::Capacitor { farads } => {
                    let e = Elem::Capacitor {
                        a: index_of(&nodes[0], &mut node_names),
                        b: index_of(&nodes[1], &mut node_names),
                        farads: *farads,
                        cap_idx: n_caps,
                    };
                    n_caps += 1;
                    e
                }
                ComponentKind::Memristor { params } => {
                    let e = Elem::Memristor {
                        a: index_of(&nodes[0], &mut node_names),
                        b: index_of(&nodes[1], &mut node_names),
                        params: *params,
                        mem_idx: mem_params.len(),
                    };
                    mem_params.push(*params);
                    e
                }
                ComponentKind::VSource { spec } => {
                    let e = Elem::Source {
                        a: index_of(&nodes[0], &mut node_names),
                        b: index_of(&nodes[1], &mut node_names),
                        spec: spec.clone(),
                        branch: n_branches,
                    };
                    n_branches += 1;
                    e
                }
                ComponentKind::Vcvs { gain, clip } => {
                    let e = Elem::Vcvs {
                        op: index_of(&nodes[0], &mut node_names),
                        om: index_of(&nodes[1], &mut node_names),
                        cp: index_of(&nodes[2], &mut node_names),
                        cm: index_of(&nodes[3], &mut node_names),
                        gain: *gain,
                        clip: *clip,
                        branch: n_branches,
                    };
                    n_branches += 1;
                    e
                }
                ComponentKind::OpAmp => {
                    let e = Elem::OpAmp {
                        out: index_of(&nodes[0], &mut node_names),
                        ip: index_of(&nodes[1], &mut node_names),
                        im: index_of(&nodes[2], &mut node_names),
                        branch: n_branches,
                    };
                    n_branches += 1;
                    e
                }
            };
            elems.push(e);
            elem_names.push(name.to_ascii_lowercase());
        }

        let opamp_outs: Vec<Option<usize>> = elems
            .iter()
            .filter_map(|e| match e {
                Elem::OpAmp { out, .. } => Some(*out),
                _ => None,
            })
            .collect();

        // Probe resolution; default to every node voltage when no .probe
        // directive is present.
        let mut probes = netlist.probes();
        if probes.is_empty() {
            probes = node_names.iter().map(|n| Probe::NodeVoltage(n.clone())).collect();
        }
        let node_idx = |label: &str| -> Result<Option<usize>, EngineError> {
            if label == "0" {
                return Ok(None);
            }
            node_names
                .iter()
                .position(|n| n == label)
                .map(Some)
                .ok_or_else(|| EngineError::BadNetlist(format!("probe references unknown node '{label}'")))
        };
        let mut channels = Vec::new();
        for p in &probes {
            let chan = match p {
                Probe::NodeVoltage(n) => {
                    let node = node_idx(n)?;
                    Channel::NodeVoltage {
                        name: format!("v({n})"),
                        node,
                        opamp_out: opamp_outs.contains(&node),
                    }
                }
                Probe::DiffVoltage(a, b) => Channel::DiffVoltage {
                    name: format!("v({a},{b})"),
                    a: node_idx(a)?,
                    b: node_idx(b)?,
                },
                Probe::ElementCurrent(e) => {
                    let idx = elem_names
                        .iter()
                        .position(|n| n == e)
                        .ok_or_else(|| EngineError::BadNetlist(format!("probe references unknown element '{e}'")))?;
                    Channel::ElementCurrent { name: format!("i({e})"), elem: idx }
                }
                Probe::MemristorState(e) => {
                    let idx = elem_names
                        .iter()
                        .position(|n| n == e)
                        .ok_or_else(|| EngineError::BadNetlist(format!("probe references unknown element '{e}'")))?;
                    match elems[idx] {
                        Elem::Memristor { mem_idx, .. } => {
                            Channel::MemristorState { name: format!("x({e})"), mem_idx }
                        }
                        _ => {
                            return Err(EngineError::BadNetlist(format!(
                                "probe x({e}) does not name a memristor"
                            )))
                        }
                    }
                }
            };
            channels.push(chan);
        }

        Ok(CircuitModel {
            node_names,
            elems,
            elem_names,
            n_branches,
            n_caps,
            mem_params,
            channels,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.node_names.len()
    }

    /// Non-ground node labels in row order; row `i` of a stamped system is
    /// the KCL equation of `node_names()[i]`, and branch rows follow.
    pub fn node_names(&self) -> &[String] {
        &self.node_names
    }

    fn order(&self) -> usize {
        self.node_names.len() + self.n_branches
    }

    fn has_nonlinearity(&self) -> bool {
        !self.mem_params.is_empty()
            || self.elems.iter().any(|e| matches!(e, Elem::Vcvs { clip: Some(_), .. }))
    }

    /// Stamp the system for one transient step.
    ///
    /// `mem_x` holds the frozen memristor states, `caps` the companion
    /// history, and `lin_point` the previous solution used to linearize a
    /// clipped gain stage.
    fn assemble(
        &self,
        mem_x: &[f64],
        caps: &[CapState],
        lin_point: &[f64],
        dt: f64,
        t: f64,
        method: Method,
    ) -> MnaSystem {
        let n = self.node_names.len();
        let mut sys = MnaSystem::new(self.order());

        let stamp_conductance = |sys: &mut MnaSystem, a: Option<usize>, b: Option<usize>, g: f64| {
            if let Some(i) = a {
                sys.add(i, i, g);
            }
            if let Some(j) = b {
                sys.add(j, j, g);
            }
            if let (Some(i), Some(j)) = (a, b) {
                sys.add(i, j, -g);
                sys.add(j, i, -g);
            }
        };

        for elem in &self.elems {
            match elem {
                Elem::Resistor { a, b, ohms } => {
                    stamp_conductance(&mut sys, *a, *b, 1.0 / ohms);
                }
                Elem::Memristor { a, b, params, mem_idx } => {
                    let m = memristance(params, mem_x[*mem_idx]);
                    stamp_conductance(&mut sys, *a, *b, 1.0 / m);
                }
                Elem::Capacitor { a, b, farads, cap_idx } => {
                    let st = caps[*cap_idx];
                    let (g, j) = companion(*farads, dt, st, method);
                    stamp_conductance(&mut sys, *a, *b, g);
                    if let Some(i) = *a {
                        sys.rhs[i] += j;
                    }
                    if let Some(jn) = *b {
                        sys.rhs[jn] -= j;
                    }
                }
                Elem::Source { a, b, spec, branch } => {
                    let row = n + branch;
                    if let Some(i) = *a {
                        sys.add(i, row, 1.0);
                        sys.add(row, i, 1.0);
                    }
                    if let Some(j) = *b {
                        sys.add(j, row, -1.0);
                        sys.add(row, j, -1.0);
                    }
                    sys.rhs[row] = spec.value_at(t);
                }
                Elem::Vcvs { op, om, cp, cm, gain, clip, branch } => {
                    let row = n + branch;
                    if let Some(i) = *op {
                        sys.add(i, row, 1.0);
                        sys.add(row, i, 1.0);
                    }
                    if let Some(j) = *om {
                        sys.add(j, row, -1.0);
                        sys.add(row, j, -1.0);
                    }
                    // v_out = f(v_ctrl); for the clipped stage use the
                    // first-order expansion around the previous iterate.
                    let (g_eff, rhs) = match clip {
                        None => (*gain, 0.0),
                        Some(knee) => {
                            let vc0 = voltage_at(lin_point, *cp) - voltage_at(lin_point, *cm);
                            let u = gain * vc0 / knee;
                            let f0 = knee * u.tanh();
                            let df = gain * (1.0 - u.tanh() * u.tanh());
                            (df, f0 - df * vc0)
                        }
                    };
                    if let Some(i) = cp {
                        sys.add(row, *i, -g_eff);
                    }
                    if let Some(j) = cm {
                        sys.add(row, *j, g_eff);
                    }
                    sys.rhs[row] = rhs;
                }
                Elem::OpAmp { out, ip, im, branch } => {
                    let row = n + branch;
                    if let Some(o) = out {
                        sys.add(*o, row, 1.0);
                    }
                    if let Some(i) = ip {
                        sys.add(row, *i, 1.0);
                    }
                    if let Some(j) = im {
                        sys.add(row, *j, -1.0);
                    }
                }
            }
        }
        sys
    }

    /// Initial solve at `t = 0`: capacitors are pinned to 0 V by temporary
    /// source branches so node voltages and capacitor currents start
    /// consistent.
    fn assemble_initial(&self, mem_x: &[f64], t: f64) -> MnaSystem {
        let n = self.node_names.len();
        let base = self.order();
        let mut sys = MnaSystem::new(base + self.n_caps);

        let stamp_conductance = |sys: &mut MnaSystem, a: Option<usize>, b: Option<usize>, g: f64| {
            if let Some(i) = a {
                sys.add(i, i, g);
            }
            if let Some(j) = b {
                sys.add(j, j, g);
            }
            if let (Some(i), Some(j)) = (a, b) {
                sys.add(i, j, -g);
                sys.add(j, i, -g);
            }
        };

        for elem in &self.elems {
            match elem {
                Elem::Resistor { a, b, ohms } => stamp_conductance(&mut sys, *a, *b, 1.0 / ohms),
                Elem::Memristor { a, b, params, mem_idx } => {
                    let m = memristance(params, mem_x[*mem_idx]);
                    stamp_conductance(&mut sys, *a, *b, 1.0 / m);
                }
                Elem::Capacitor { a, b, cap_idx, .. } => {
                    let row = base + cap_idx;
                    if let Some(i) = a {
                        sys.add(*i, row, 1.0);
                        sys.add(row, *i, 1.0);
                    }
                    if let Some(j) = b {
                        sys.add(*j, row, -1.0);
                        sys.add(row, *j, -1.0);
                    }
                    // rhs stays 0: v_cap(0) = 0.
                }
                Elem::Source { a, b, spec, branch } => {
                    let row = n + branch;
                    if let Some(i) = a {
                        sys.add(*i, row, 1.0);
                        sys.add(row, *i, 1.0);
                    }
                    if let Some(j) = b {
                        sys.add(*j, row, -1.0);
                        sys.add(row, *j, -1.0);
                    }
                    sys.rhs[row] = spec.value_at(t);
                }
                Elem::Vcvs { op, om, cp, cm, gain, clip, branch } => {
                    let row = n + branch;
                    if let Some(i) = op {
                        sys.add(*i, row, 1.0);
                        sys.add(row, *i, 1.0);
                    }
                    if let Some(j) = om {
                        sys.add(*j, row, -1.0);
                        sys.add(row, *j, -1.0);
                    }
                    // At the all-zero initial point tanh linearizes to its
                    // small-signal gain.
                    let g_eff = match clip {
                        None => *gain,
                        Some(_) => *gain,
                    };
                    if let Some(i) = cp {
                        sys.add(row, *i, -g_eff);
                    }
                    if let Some(j) = cm {
                        sys.add(row, *j, g_eff);
                    }
                }
                Elem::OpAmp { out, ip, im, branch } => {
                    let row = n + branch;
                    if let Some(o) = out {
                        sys.add(*o, row, 1.0);
                    }
                    if let Some(i) = ip {
                        sys.add(row, *i, 1.0);
                    }
                    if let Some(j) = im {
                        sys.add(row, *j, -1.0);
                    }
                }
            }
        }
        sys
    }

    /// Current entering `elem` at its first listed node.
    fn element_current(
        &self,
        elem: usize,
        solution: &[f64],
        mem_x: &[f64],
        caps: &[CapState],
        dt: f64,
        method: Method,
    ) -> f64 {
        let n = self.node_names.len();
        match &self.elems[elem] {
            Elem::Resistor { a, b, ohms } => {
                (voltage_at(solution, *a) - voltage_at(solution, *b)) / ohms
            }
            Elem::Memristor { a, b, params, mem_idx } => {
                let m = memristance(params, mem_x[*mem_idx]);
                (voltage_at(solution, *a) - voltage_at(solution, *b)) / m
            }
            Elem::Capacitor { a, b, farads, cap_idx } => {
                let st = caps[*cap_idx];
                let (g, j) = companion(*farads, dt, st, method);
                g * (voltage_at(solution, *a) - voltage_at(solution, *b)) - j
            }
            Elem::Source { branch, .. } | Elem::Vcvs { branch, .. } | Elem::OpAmp { branch, .. } => {
                solution[n + branch]
            }
        }
    }
}

#[inline]
fn voltage_at(solution: &[f64], node: Option<usize>) -> f64 {
    node.map(|i| solution[i]).unwrap_or(0.0)
}

/// Norton companion (conductance, source current) for a capacitor.
#[inline]
fn companion(farads: f64, dt: f64, st: CapState, method: Method) -> (f64, f64) {
    match method {
        Method::Trapezoidal => {
            let g = 2.0 * farads / dt;
            (g, g * st.v + st.i)
        }
        Method::BackwardEuler => {
            let g = farads / dt;
            (g, g * st.v)
        }
    }
}

// ---------------------------------------------------------------------------
// Operating point
// ---------------------------------------------------------------------------

/// Solution of the consistent initial solve: node voltages plus element
/// currents, by name.
#[derive(Debug, Clone)]
pub struct OperatingPoint {
    pub node_voltages: Vec<(String, f64)>,
    pub element_currents: Vec<(String, f64)>,
}

impl OperatingPoint {
    pub fn voltage(&self, node: &str) -> Option<f64> {
        self.node_voltages
            .iter()
            .find(|(n, _)| n.eq_ignore_ascii_case(node))
            .map(|(_, v)| *v)
    }

    pub fn current(&self, elem: &str) -> Option<f64> {
        self.element_currents
            .iter()
            .find(|(n, _)| n.eq_ignore_ascii_case(elem))
            .map(|(_, v)| *v)
    }
}

/// Assemble and solve the circuit at `t = 0` with capacitors held at their
/// (zero) initial voltages and memristors at their card states.
pub fn operating_point(netlist: &Netlist) -> Result<OperatingPoint, EngineError> {
    let model = CircuitModel::compile(netlist)?;
    let mem_x: Vec<f64> = model.mem_params.iter().map(|p| p.x0).collect();
    let sys = model.assemble_initial(&mem_x, 0.0);
    let solution = sys.solve()?;

    let node_voltages = model
        .node_names
        .iter()
        .enumerate()
        .map(|(i, n)| (n.clone(), solution[i]))
        .collect();
    let caps = vec![CapState::default(); model.n_caps];
    let base = model.order();
    let element_currents = model
        .elems
        .iter()
        .enumerate()
        .map(|(idx, elem)| {
            let i = match elem {
                // In the initial solve the capacitor current comes from its
                // temporary pinning branch.
                Elem::Capacitor { cap_idx, .. } => solution[base + cap_idx],
                _ => model.element_current(idx, &solution, &mem_x, &caps, 1.0, Method::Trapezoidal),
            };
            (model.elem_names[idx].clone(), i)
        })
        .collect();

    Ok(OperatingPoint { node_voltages, element_currents })
}

// ---------------------------------------------------------------------------
// Transient
// ---------------------------------------------------------------------------

/// Run a fixed-step transient and record the probed channels.
pub fn transient_run(netlist: &Netlist, config: &SimConfig) -> Result<Waveform, EngineError> {
    config.validate()?;
    let model = CircuitModel::compile(netlist)?;
    let dt = config.dt;
    let steps = (config.t_stop / dt).round() as usize;
    if steps < 1 {
        return Err(EngineError::InvalidConfig("t_stop shorter than one step".to_string()));
    }

    let mut mem: Vec<MemDynamic> = model
        .mem_params
        .iter()
        .map(|p| MemDynamic { state: MemristorState::new(p.x0), i: 0.0 })
        .collect();
    let mut caps = vec![CapState::default(); model.n_caps];
    let mut max_residual = 0.0f64;

    let mut channels: Vec<(String, Vec<f64>)> = model
        .channels
        .iter()
        .map(|c| (c.name().to_string(), Vec::with_capacity(steps + 1)))
        .collect();

    // Consistent initial solve at t = 0.
    let mem_x: Vec<f64> = mem.iter().map(|m| m.state.x).collect();
    let init = model.assemble_initial(&mem_x, 0.0);
    let init_solution = init.solve()?;
    max_residual = max_residual.max(init.residual_inf(&init_solution, model.n_nodes()));
    let base = model.order();
    for (cap_idx, st) in caps.iter_mut().enumerate() {
        st.v = 0.0;
        st.i = init_solution[base + cap_idx];
    }
    for (idx, elem) in model.elems.iter().enumerate() {
        if let Elem::Memristor { mem_idx, .. } = elem {
            mem[*mem_idx].i =
                model.element_current(idx, &init_solution, &mem_x, &caps, dt, config.method);
        }
    }
    // Capacitor currents at t = 0 come from the pinning branches, not the
    // (not yet meaningful) companion model.
    let init_cap_currents: Vec<f64> =
        (0..model.n_caps).map(|k| init_solution[base + k]).collect();
    record(
        &model,
        &mut channels,
        &init_solution,
        &mem_x,
        &caps,
        Some(&init_cap_currents),
        dt,
        config,
    );

    let nonlinear = model.has_nonlinearity();
    let mut prev_solution = init_solution[..base].to_vec();

    for step in 1..=steps {
        let t = step as f64 * dt;

        // Derivative at the step start, reused by every trapezoidal update.
        let dxdt_prev: Vec<f64> = mem
            .iter()
            .enumerate()
            .map(|(k, m)| state_derivative(&model.mem_params[k], m.state.x, m.i))
            .collect();

        let mut x_iter: Vec<f64> = mem.iter().map(|m| m.state.x).collect();
        let mut v_iter = prev_solution.clone();
        let mut i_new: Vec<f64> = mem.iter().map(|m| m.i).collect();
        let mut converged = !nonlinear;

        let iters = if nonlinear { config.max_inner_iters } else { 1 };
        for _ in 0..iters {
            let sys = model.assemble(&x_iter, &caps, &v_iter, dt, t, config.method);
            let solution = sys.solve()?;
            max_residual = max_residual.max(sys.residual_inf(&solution, model.n_nodes()));

            let mut dx_max = 0.0f64;
            for (idx, elem) in model.elems.iter().enumerate() {
                if let Elem::Memristor { mem_idx, .. } = elem {
                    let k = *mem_idx;
                    let i = model.element_current(idx, &solution, &x_iter, &caps, dt, config.method);
                    let dxdt_new = state_derivative(&model.mem_params[k], x_iter[k], i);
                    let x_next = (mem[k].state.x + 0.5 * dt * (dxdt_prev[k] + dxdt_new))
                        .clamp(0.0, 1.0);
                    dx_max = dx_max.max((x_next - x_iter[k]).abs());
                    x_iter[k] = x_next;
                    i_new[k] = i;
                }
            }
            let mut dv_max = 0.0f64;
            for node in 0..model.n_nodes() {
                dv_max = dv_max.max((solution[node] - v_iter[node]).abs());
            }
            v_iter = solution;
            if !nonlinear || (dx_max < STATE_TOL && dv_max < config.newton_tol) {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(EngineError::NonConvergence { step, t });
        }

        // Record against the pre-update companion history (element_current
        // needs the step's own source term), then commit.
        record(&model, &mut channels, &v_iter, &x_iter, &caps, None, dt, config);
        for (k, m) in mem.iter_mut().enumerate() {
            m.state = MemristorState::new(x_iter[k]);
            m.i = i_new[k];
        }
        for (idx, elem) in model.elems.iter().enumerate() {
            if let Elem::Capacitor { a, b, cap_idx, .. } = elem {
                let i = model.element_current(idx, &v_iter, &x_iter, &caps, dt, config.method);
                let v = voltage_at(&v_iter, *a) - voltage_at(&v_iter, *b);
                caps[*cap_idx] = CapState { v, i };
            }
        }
        prev_solution = v_iter;
    }

    let t: Vec<f64> = (0..=steps).map(|k| k as f64 * dt).collect();
    Ok(Waveform { dt, t, channels, max_kcl_residual: max_residual })
}

#[allow(clippy::too_many_arguments)]
fn record(
    model: &CircuitModel,
    channels: &mut [(String, Vec<f64>)],
    solution: &[f64],
    mem_x: &[f64],
    caps: &[CapState],
    cap_current_override: Option<&[f64]>,
    dt: f64,
    config: &SimConfig,
) {
    for (chan, (_, data)) in model.channels.iter().zip(channels.iter_mut()) {
        let value = match chan {
            Channel::NodeVoltage { node, opamp_out, .. } => {
                let v = voltage_at(solution, *node);
                match (config.opamp_clip, opamp_out) {
                    (Some(sat), true) => v.clamp(-sat, sat),
                    _ => v,
                }
            }
            Channel::DiffVoltage { a, b, .. } => {
                voltage_at(solution, *a) - voltage_at(solution, *b)
            }
            Channel::ElementCurrent { elem, .. } => {
                match (cap_current_override, &model.elems[*elem]) {
                    (Some(ic), Elem::Capacitor { cap_idx, .. }) => ic[*cap_idx],
                    _ => model.element_current(*elem, solution, mem_x, caps, dt, config.method),
                }
            }
            Channel::MemristorState { mem_idx, .. } => mem_x[*mem_idx],
        };
        data.push(value);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netlist::parse;

    fn approx(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "expected {b}, got {a} (tol {tol})");
    }

    // --- linear solver ------------------------------------------------

    #[test]
    fn solve_identity() {
        let mut sys = MnaSystem::new(3);
        for i in 0..3 {
            sys.add(i, i, 1.0);
        }
        sys.rhs = vec![3.0, -1.0, 7.5];
        assert_eq!(sys.solve().unwrap(), vec![3.0, -1.0, 7.5]);
    }

    #[test]
    fn solve_two_by_two() {
        let mut sys = MnaSystem::new(2);
        sys.matrix = vec![2.0, 1.0, 1.0, 3.0];
        sys.rhs = vec![3.0, 5.0];
        let x = sys.solve().unwrap();
        approx(x[0], 0.8, 1e-12);
        approx(x[1], 1.4, 1e-12);
    }

    /// Exact rational Gaussian elimination, used as the oracle for the
    /// Hilbert system.
    mod rational {
        #[derive(Clone, Copy)]
        pub struct Frac {
            n: i128,
            d: i128,
        }

        fn gcd(a: i128, b: i128) -> i128 {
            if b == 0 {
                a.abs()
            } else {
                gcd(b, a % b)
            }
        }

        impl Frac {
            pub fn new(n: i128, d: i128) -> Self {
                let g = gcd(n, d).max(1);
                let sign = if d < 0 { -1 } else { 1 };
                Frac { n: sign * n / g, d: sign * d / g }
            }
            pub fn sub(self, o: Frac) -> Frac {
                Frac::new(self.n * o.d - o.n * self.d, self.d * o.d)
            }
            pub fn mul(self, o: Frac) -> Frac {
                Frac::new(self.n * o.n, self.d * o.d)
            }
            pub fn div(self, o: Frac) -> Frac {
                Frac::new(self.n * o.d, self.d * o.n)
            }
            pub fn to_f64(self) -> f64 {
                self.n as f64 / self.d as f64
            }
        }

        pub fn solve4(a: [[Frac; 4]; 4], b: [Frac; 4]) -> [f64; 4] {
            let mut a = a;
            let mut b = b;
            for col in 0..4 {
                for row in col + 1..4 {
                    let f = a[row][col].div(a[col][col]);
                    for k in col..4 {
                        a[row][k] = a[row][k].sub(f.mul(a[col][k]));
                    }
                    b[row] = b[row].sub(f.mul(b[col]));
                }
            }
            let mut x = [Frac::new(0, 1); 4];
            for row in (0..4).rev() {
                let mut acc = b[row];
                for k in row + 1..4 {
                    acc = acc.sub(a[row][k].mul(x[k]));
                }
                x[row] = acc.div(a[row][row]);
            }
            [x[0].to_f64(), x[1].to_f64(), x[2].to_f64(), x[3].to_f64()]
        }
    }

    #[test]
    fn solve_hilbert_vs_rational_oracle() {
        use rational::Frac;
        let h = |i: i128, j: i128| Frac::new(1, i + j + 1);
        let a = [
            [h(0, 0), h(0, 1), h(0, 2), h(0, 3)],
            [h(1, 0), h(1, 1), h(1, 2), h(1, 3)],
            [h(2, 0), h(2, 1), h(2, 2), h(2, 3)],
            [h(3, 0), h(3, 1), h(3, 2), h(3, 3)],
        ];
        let b = [Frac::new(1, 1); 4];
        let exact = rational::solve4(a, b);
        assert_eq!(exact, [-4.0, 60.0, -180.0, 140.0]);

        let mut sys = MnaSystem::new(4);
        for i in 0..4 {
            for j in 0..4 {
                sys.add(i, j, 1.0 / ((i + j + 1) as f64));
            }
            sys.rhs[i] = 1.0;
        }
        let x = sys.solve().unwrap();
        for (got, want) in x.iter().zip(exact.iter()) {
            approx(*got, *want, 1e-8);
        }
    }

    #[test]
    fn solve_residual_small() {
        let mut sys = MnaSystem::new(3);
        sys.matrix = vec![4.0, -1.0, 0.5, -1.0, 3.0, -0.2, 0.5, -0.2, 5.0];
        sys.rhs = vec![1.0, -2.0, 0.25];
        let x = sys.solve().unwrap();
        let b_norm = sys.rhs.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(sys.residual_inf(&x, 3) <= 1e-10 * b_norm);
    }

    #[test]
    fn singular_matrix_rejected() {
        let mut sys = MnaSystem::new(2);
        sys.matrix = vec![1.0, 2.0, 2.0, 4.0];
        sys.rhs = vec![1.0, 2.0];
        assert!(matches!(sys.solve(), Err(EngineError::SingularMatrix(_))));
    }

    // --- operating point ----------------------------------------------

    #[test]
    fn divider_solves_to_half() {
        let n = parse("V1 in 0 DC 1\nR1 in mid 5k\nR2 mid 0 5k").unwrap();
        let op = operating_point(&n).unwrap();
        approx(op.voltage("mid").unwrap(), 0.5, 1e-12);
    }

    #[test]
    fn source_branch_current_is_ohms_law() {
        let n = parse("V1 1 0 DC 5\nR1 1 0 1k").unwrap();
        let op = operating_point(&n).unwrap();
        // Current enters the source at its first node: the source delivers
        // 5 mA, so the branch current is -5/R.
        approx(op.current("v1").unwrap(), -5.0 / 1e3, 1e-12);
        approx(op.current("r1").unwrap(), 5.0 / 1e3, 1e-12);
    }

    #[test]
    fn floating_control_node_is_singular() {
        // Node 3 only appears as a VCVS control pin: graph-connected but no
        // KCL entries, hence a structurally singular system.
        let n = parse("V1 1 0 DC 1\nE1 2 0 3 0 2\nR1 2 0 1k").unwrap();
        assert!(matches!(operating_point(&n), Err(EngineError::SingularMatrix(_))));
    }

    #[test]
    fn contradictory_opamp_is_singular() {
        let n = parse("V1 in 0 DC 1\nO1 out 0 in\nR1 out 0 1k").unwrap();
        assert!(matches!(operating_point(&n), Err(EngineError::SingularMatrix(_))));
    }

    // --- transient ----------------------------------------------------

    #[test]
    fn rc_step_response_matches_exponential() {
        let n = parse("V1 in 0 DC 1\nR1 in out 1k\nC1 out 0 1u\n.probe v(out)").unwrap();
        let tau = 1e-3;
        let config = SimConfig::new(1e-6, 5e-3);
        let wave = transient_run(&n, &config).unwrap();
        let v = wave.channel("v(out)").unwrap();
        let mut max_err = 0.0f64;
        for (k, t) in wave.t.iter().enumerate() {
            let analytic = 1.0 - (-t / tau).exp();
            max_err = max_err.max((v[k] - analytic).abs());
        }
        assert!(max_err <= 1e-3, "RC max error {max_err:e}");
        // v(1 ms) specifically.
        let idx = (1e-3 / config.dt).round() as usize;
        approx(v[idx], 1.0 - (-1.0f64).exp(), 1e-3);
        assert!(wave.max_kcl_residual <= 1e-9);
    }

    #[test]
    fn method_order_ratios() {
        let run = |dt: f64, method: Method| -> f64 {
            let n = parse("V1 in 0 DC 1\nR1 in out 1k\nC1 out 0 1u\n.probe v(out)").unwrap();
            let mut config = SimConfig::new(dt, 5e-3);
            config.method = method;
            let wave = transient_run(&n, &config).unwrap();
            let v = wave.channel("v(out)").unwrap();
            wave.t
                .iter()
                .enumerate()
                .map(|(k, t)| (v[k] - (1.0 - (-t / 1e-3).exp())).abs())
                .fold(0.0f64, f64::max)
        };
        let trap_ratio = run(1e-5, Method::Trapezoidal) / run(5e-6, Method::Trapezoidal);
        assert!(
            (3.0..=5.0).contains(&trap_ratio),
            "trapezoidal halving ratio {trap_ratio}"
        );
        let be_ratio = run(1e-5, Method::BackwardEuler) / run(5e-6, Method::BackwardEuler);
        assert!(
            (1.7..=2.5).contains(&be_ratio),
            "backward-Euler halving ratio {be_ratio}"
        );
    }

    #[test]
    fn memristor_degenerates_to_resistor_bit_exactly() {
        let drive = "V1 1 0 SIN(0 1 1K 0)\nR0 1 2 1k\n";
        let tail = ".tran 1u 2m\n.probe v(2)\n";
        let with_res = parse(&format!("{drive}R2 2 0 5k\n{tail}")).unwrap();
        let with_mem =
            parse(&format!("{drive}M2 2 0 RON=5K ROFF=5K\n{tail}")).unwrap();
        let config = SimConfig::new(1e-6, 2e-3);
        let a = transient_run(&with_res, &config).unwrap();
        let b = transient_run(&with_mem, &config).unwrap();
        let va = a.channel("v(2)").unwrap();
        let vb = b.channel("v(2)").unwrap();
        for (x, y) in va.iter().zip(vb.iter()) {
            let scale = x.abs().max(1e-30);
            assert!(
                ((x - y) / scale).abs() <= 1e-12,
                "degenerate memristor diverged: {x} vs {y}"
            );
        }
    }

    #[test]
    fn transient_is_deterministic() {
        let n = parse(
            "V1 1 0 SIN(0 1 1K 0)\nM1 1 0\n.tran 1u 1m\n.probe v(1) i(m1) x(m1)",
        )
        .unwrap();
        let config = SimConfig::from_netlist(&n).unwrap();
        let a = transient_run(&n, &config).unwrap();
        let b = transient_run(&n, &config).unwrap();
        assert_eq!(a.channels, b.channels);
        assert_eq!(a.t, b.t);
    }

    #[test]
    fn nonconvergence_reports_step() {
        let n = parse("V1 1 0 SIN(0 1 1K 0)\nM1 1 0\n.probe v(1)").unwrap();
        let mut config = SimConfig::new(1e-6, 1e-3);
        config.max_inner_iters = 1;
        match transient_run(&n, &config) {
            Err(EngineError::NonConvergence { step, .. }) => assert!(step >= 1),
            other => panic!("expected NonConvergence, got {other:?}"),
        }
    }

    #[test]
    fn capacitor_current_probe_matches_analytic() {
        // RC charging current i(t) = e^(-t/tau) / R, including t = 0.
        let n = parse("V1 in 0 DC 1\nR1 in out 1k\nC1 out 0 1u\n.probe i(c1)").unwrap();
        let wave = transient_run(&n, &SimConfig::new(1e-6, 3e-3)).unwrap();
        let i = wave.channel("i(c1)").unwrap();
        approx(i[0], 1e-3, 1e-9);
        for (k, t) in wave.t.iter().enumerate() {
            let analytic = 1e-3 * (-t / 1e-3).exp();
            approx(i[k], analytic, 1e-6);
        }
    }

    #[test]
    fn memristor_resistor_like_at_high_frequency() {
        // Drive far above the state-change timescale: v and i stay in phase.
        use crate::analysis::phase_shift_deg;
        let n = parse("V1 1 0 SIN(0 1 100K 0)\nM1 1 0\n.tran 1e-8 3e-4\n.probe v(1) i(m1)")
            .unwrap();
        let wave = transient_run(&n, &SimConfig::from_netlist(&n).unwrap()).unwrap();
        let v = wave.channel("v(1)").unwrap();
        let i = wave.channel("i(m1)").unwrap();
        let shift = phase_shift_deg(v, i, wave.dt, 1e5).unwrap();
        assert!(shift.abs() <= 2.0, "v-i phase at 100 kHz is {shift} deg");
    }

    #[test]
    fn uniform_sampling_invariant() {
        let n = parse("V1 1 0 DC 1\nR1 1 0 1k\n.probe v(1)").unwrap();
        let config = SimConfig::new(1e-6, 1e-4);
        let wave = transient_run(&n, &config).unwrap();
        for w in wave.t.windows(2) {
            assert!(((w[1] - w[0]) - wave.dt).abs() < 1e-12 * wave.dt);
        }
        let v = wave.channel("v(1)").unwrap();
        assert!(v.iter().all(|&x| (x - 1.0).abs() < 1e-12));
    }
}
