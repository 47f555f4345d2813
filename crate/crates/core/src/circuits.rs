//! Parameterized builders for the three demo circuits: the three-arm
//! memristor-capacitor phase-shift oscillator, the inverting integrator, and
//! the inverting differentiator. Every builder returns a validated
//! [`Netlist`] that round-trips through the parser.

use crate::analysis::{critical_gain, OscillatorDesign};
use crate::device::{memristance, MemristorParams};
use crate::netlist::{Component, ComponentKind, Directive, Netlist, Probe, SourceSpec};

/// Phase-shift oscillator: a ladder of three series-C / shunt-M arms closed
/// through an inverting gain stage.
///
/// The gain stage is a VCVS of gain `-k` with a tanh soft clip at
/// `clip` volts; without some limiting an ideal linear loop above critical
/// gain grows forever. `r4` sits between the stage output and the ladder.
/// A standing `startup_kick` offset in series with M3 breaks the all-zero
/// equilibrium so oscillation can start.
#[derive(Debug, Clone)]
pub struct PhaseShiftSpec {
    /// Per-arm memristor parameters (M1, M2, M3).
    pub mem: [MemristorParams; 3],
    /// Arm capacitance [F].
    pub c: f64,
    /// Amplifier gain magnitude.
    pub k: f64,
    /// Amplifier-side resistance [ohm]; kept small so the analytic
    /// zero-output-impedance formulas stay honest.
    pub r4: f64,
    /// Optional stability snubber from the amplifier output to ground.
    pub r3: Option<f64>,
    pub c4: Option<f64>,
    /// Standing symmetry-breaking offset [V].
    pub startup_kick: f64,
    /// Soft-clip knee of the gain stage [V]; `None` leaves the stage linear.
    pub clip: Option<f64>,
    /// Transient defaults for the emitted `.tran` card.
    pub dt: f64,
    pub t_stop: f64,
}

impl Default for PhaseShiftSpec {
    /// Memristor defaults give an effective 8.05 kohm at x0 = 0.5; with
    /// C = 10 nF the equal-M formula predicts roughly 807 Hz. The gain is
    /// set 10 percent above the numerically located critical K of the
    /// characteristic cubic.
    fn default() -> Self {
        let mem = MemristorParams::default();
        let c = 10e-9;
        let m_eff = memristance(&mem, mem.x0);
        let design = OscillatorDesign::equal_m(m_eff, c, 1.0, 10.0).expect("valid defaults");
        let k = 1.1 * critical_gain(&design).expect("critical gain exists").k;
        PhaseShiftSpec {
            mem: [mem; 3],
            c,
            k,
            r4: 10.0,
            r3: None,
            c4: None,
            startup_kick: 1e-3,
            clip: Some(5.0),
            dt: 1e-6,
            t_stop: 50e-3,
        }
    }
}

impl PhaseShiftSpec {
    /// The analytic design this circuit realizes, with memristances frozen
    /// at their initial states.
    pub fn design(&self) -> OscillatorDesign {
        let m = |p: &MemristorParams| memristance(p, p.x0);
        OscillatorDesign {
            m1: m(&self.mem[0]),
            m2: m(&self.mem[1]),
            m3: m(&self.mem[2]),
            c: self.c,
            k: self.k,
            r4: self.r4,
            c1: None,
            c2: None,
            c3: None,
        }
    }

    /// Recompute `k` as 1.1 times the critical gain of the current design.
    pub fn auto_gain(&mut self) {
        let mut design = self.design();
        design.k = 1.0;
        if let Ok(crit) = critical_gain(&design) {
            self.k = 1.1 * crit.k;
        }
    }
}

/// Node map: amp --R4-- in --C1-- n1(M1) --C2-- n2(M2) --C3-- n3(M3--ks),
/// with the VCVS sensing n3 and the kick source under M3 at ks.
pub fn build_phase_shift_oscillator(spec: &PhaseShiftSpec) -> Netlist {
    let mut n = Netlist { title: "memristor phase-shift oscillator".to_string(), ..Default::default() };

    n.components.push(Component {
        name: "E1".into(),
        nodes: vec!["amp".into(), "0".into(), "n3".into(), "0".into()],
        kind: ComponentKind::Vcvs { gain: -spec.k, clip: spec.clip },
    });
    n.components.push(Component {
        name: "R4".into(),
        nodes: vec!["amp".into(), "in".into()],
        kind: ComponentKind::Resistor { ohms: spec.r4 },
    });
    if let (Some(r3), Some(c4)) = (spec.r3, spec.c4) {
        n.components.push(Component {
            name: "R3".into(),
            nodes: vec!["amp".into(), "sb".into()],
            kind: ComponentKind::Resistor { ohms: r3 },
        });
        n.components.push(Component {
            name: "C4".into(),
            nodes: vec!["sb".into(), "0".into()],
            kind: ComponentKind::Capacitor { farads: c4 },
        });
    }

    let arm_nodes = [("in", "n1", "0"), ("n1", "n2", "0"), ("n2", "n3", "ks")];
    for (idx, (from, mid, bottom)) in arm_nodes.iter().enumerate() {
        n.components.push(Component {
            name: format!("C{}", idx + 1),
            nodes: vec![from.to_string(), mid.to_string()],
            kind: ComponentKind::Capacitor { farads: spec.c },
        });
        n.components.push(Component {
            name: format!("M{}", idx + 1),
            nodes: vec![mid.to_string(), bottom.to_string()],
            kind: ComponentKind::Memristor { params: spec.mem[idx] },
        });
    }

    // Symmetry-breaking offset: a step that switches on at t = 0 and stays
    // on for the whole run.
    n.components.push(Component {
        name: "VK".into(),
        nodes: vec!["ks".into(), "0".into()],
        kind: ComponentKind::VSource {
            spec: SourceSpec::Pulse {
                v1: 0.0,
                v2: spec.startup_kick,
                delay: 0.0,
                rise: 1e-7,
                fall: 1e-7,
                width: 1e3,
                period: 2e3,
            },
        },
    });

    n.directives.push(Directive::Tran { step: spec.dt, stop: spec.t_stop });
    n.directives.push(Directive::Probe {
        probes: vec![
            Probe::NodeVoltage("amp".into()),
            Probe::NodeVoltage("in".into()),
            Probe::NodeVoltage("n1".into()),
            Probe::NodeVoltage("n2".into()),
            Probe::NodeVoltage("n3".into()),
            Probe::DiffVoltage("in".into(), "n1".into()),
            Probe::DiffVoltage("n1".into(), "n2".into()),
            Probe::DiffVoltage("n2".into(), "n3".into()),
            Probe::DiffVoltage("n3".into(), "ks".into()),
            Probe::ElementCurrent("m1".into()),
            Probe::ElementCurrent("m2".into()),
            Probe::ElementCurrent("m3".into()),
        ],
    });
    n
}

/// Square-wave default drive shared by the integrator and differentiator:
/// +/- `amplitude` at `freq`, 1 us edges.
pub fn square_source(amplitude: f64, freq: f64) -> SourceSpec {
    let period = 1.0 / freq;
    let rise = 1e-6;
    SourceSpec::Pulse {
        v1: -amplitude,
        v2: amplitude,
        delay: 0.0,
        rise,
        fall: rise,
        width: period / 2.0 - rise,
        period,
    }
}

/// Inverting integrator: memristor in the input path, capacitor in
/// feedback, ideal op-amp. Output follows `-1/(MC) * integral of V_IN`.
#[derive(Debug, Clone)]
pub struct IntegratorSpec {
    pub mem: MemristorParams,
    /// Feedback capacitance [F].
    pub c: f64,
    pub source: SourceSpec,
    pub dt: f64,
    pub t_stop: f64,
}

impl Default for IntegratorSpec {
    /// x0 trimmed so the effective memristance is 10 kohm, making
    /// M*C = 1e-4 s with the 10 nF feedback capacitor; 1 V / 1 kHz square
    /// drive. The step divides the drive period by 2048 so spectra of the
    /// output are exactly bin-centered.
    fn default() -> Self {
        let base = MemristorParams::default();
        let x0 = (base.r_off - 10e3) / (base.r_off - base.r_on);
        let period = 1e-3;
        IntegratorSpec {
            mem: MemristorParams { x0, ..base },
            c: 10e-9,
            source: square_source(1.0, 1.0 / period),
            dt: period / 2048.0,
            t_stop: 8.0 * period,
        }
    }
}

pub fn build_integrator(spec: &IntegratorSpec) -> Netlist {
    let mut n = Netlist { title: "memristor integrator".to_string(), ..Default::default() };
    n.components.push(Component {
        name: "V1".into(),
        nodes: vec!["in".into(), "0".into()],
        kind: ComponentKind::VSource { spec: spec.source.clone() },
    });
    n.components.push(Component {
        name: "M1".into(),
        nodes: vec!["in".into(), "sum".into()],
        kind: ComponentKind::Memristor { params: spec.mem },
    });
    n.components.push(Component {
        name: "C1".into(),
        nodes: vec!["sum".into(), "out".into()],
        kind: ComponentKind::Capacitor { farads: spec.c },
    });
    n.components.push(Component {
        name: "O1".into(),
        nodes: vec!["out".into(), "0".into(), "sum".into()],
        kind: ComponentKind::OpAmp,
    });
    n.directives.push(Directive::Tran { step: spec.dt, stop: spec.t_stop });
    n.directives.push(Directive::Probe {
        probes: vec![Probe::NodeVoltage("in".into()), Probe::NodeVoltage("out".into())],
    });
    n
}

/// Inverting differentiator: capacitor in the input path, memristor in
/// feedback, ideal op-amp. Output follows `-MC * dV_IN/dt`.
///
/// `r1` (10 ohm default) sits in series with the input capacitor as the
/// usual high-frequency limit of a practical differentiator; it keeps the
/// edge spikes finite without touching the `-MC dV/dt` spike area.
#[derive(Debug, Clone)]
pub struct DifferentiatorSpec {
    pub mem: MemristorParams,
    /// Input capacitance [F].
    pub c: f64,
    /// Series input resistance [ohm].
    pub r1: f64,
    pub source: SourceSpec,
    pub dt: f64,
    pub t_stop: f64,
}

impl Default for DifferentiatorSpec {
    /// Same M*C = 1e-4 s point as the integrator. The step divides the
    /// drive period by 65536: the spike decay constant r1*C = 0.1 us then
    /// spans several samples and spectra stay bin-centered.
    fn default() -> Self {
        let base = MemristorParams::default();
        let x0 = (base.r_off - 10e3) / (base.r_off - base.r_on);
        let period = 1e-3;
        DifferentiatorSpec {
            mem: MemristorParams { x0, ..base },
            c: 10e-9,
            r1: 10.0,
            source: square_source(1.0, 1.0 / period),
            dt: period / 65536.0,
            t_stop: 4.0 * period,
        }
    }
}

pub fn build_differentiator(spec: &DifferentiatorSpec) -> Netlist {
    let mut n = Netlist { title: "memristor differentiator".to_string(), ..Default::default() };
    n.components.push(Component {
        name: "V1".into(),
        nodes: vec!["in".into(), "0".into()],
        kind: ComponentKind::VSource { spec: spec.source.clone() },
    });
    n.components.push(Component {
        name: "R1".into(),
        nodes: vec!["in".into(), "mid".into()],
        kind: ComponentKind::Resistor { ohms: spec.r1 },
    });
    n.components.push(Component {
        name: "C1".into(),
        nodes: vec!["mid".into(), "sum".into()],
        kind: ComponentKind::Capacitor { farads: spec.c },
    });
    n.components.push(Component {
        name: "M1".into(),
        nodes: vec!["sum".into(), "out".into()],
        kind: ComponentKind::Memristor { params: spec.mem },
    });
    n.components.push(Component {
        name: "O1".into(),
        nodes: vec!["out".into(), "0".into(), "sum".into()],
        kind: ComponentKind::OpAmp,
    });
    n.directives.push(Directive::Tran { step: spec.dt, stop: spec.t_stop });
    n.directives.push(Directive::Probe {
        probes: vec![Probe::NodeVoltage("in".into()), Probe::NodeVoltage("out".into())],
    });
    n
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netlist::{parse, serialize};

    #[test]
    fn phase_shift_round_trips() {
        let spec = PhaseShiftSpec::default();
        let n = build_phase_shift_oscillator(&spec);
        let again = parse(&serialize(&n)).unwrap();
        assert_eq!(n, again);
        assert!(spec.k > 29.0, "default gain {} should exceed the classical 29", spec.k);
        assert!((spec.k - 38.5).abs() < 0.01, "default gain should be 1.1 * 35");
    }

    #[test]
    fn integrator_and_differentiator_round_trip() {
        let ni = build_integrator(&IntegratorSpec::default());
        assert_eq!(parse(&serialize(&ni)).unwrap(), ni);
        let nd = build_differentiator(&DifferentiatorSpec::default());
        assert_eq!(parse(&serialize(&nd)).unwrap(), nd);
    }

    #[test]
    fn default_mc_product() {
        let spec = IntegratorSpec::default();
        let m = memristance(&spec.mem, spec.mem.x0);
        assert!((m * spec.c - 1e-4).abs() < 1e-9, "MC = {}", m * spec.c);
    }

    #[test]
    fn snubber_components_emitted_when_requested() {
        let spec = PhaseShiftSpec {
            r3: Some(2.2e3),
            c4: Some(100e-12),
            ..PhaseShiftSpec::default()
        };
        let n = build_phase_shift_oscillator(&spec);
        assert!(n.component("r3").is_some());
        assert!(n.component("c4").is_some());
        assert_eq!(parse(&serialize(&n)).unwrap(), n);
    }

    #[test]
    fn square_source_is_zero_mean() {
        let s = square_source(1.0, 1e3);
        let n = 100_000;
        let mean: f64 =
            (0..n).map(|k| s.value_at(k as f64 * 1e-3 / n as f64)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 1e-3);
    }

    #[test]
    fn half_critical_gain_decays() {
        use crate::analysis::{sustained_oscillation, Trend};
        use crate::engine::{transient_run, SimConfig};
        let mut spec = PhaseShiftSpec::default();
        spec.k = 0.5 * (spec.k / 1.1); // half the critical gain
        spec.t_stop = 30e-3;
        let netlist = build_phase_shift_oscillator(&spec);
        let wave = transient_run(&netlist, &SimConfig::from_netlist(&netlist).unwrap()).unwrap();
        let v3 = wave.channel("v(n3)").unwrap();
        let verdict = sustained_oscillation(v3, wave.dt).unwrap();
        assert_eq!(verdict.trend, Trend::Decaying);
    }

    #[test]
    fn integrator_ramps_on_dc_input() {
        use crate::engine::{transient_run, SimConfig};
        use crate::netlist::SourceSpec;
        let mut spec = IntegratorSpec::default();
        spec.source = SourceSpec::Dc { level: 1.0 };
        spec.dt = 1e-6;
        spec.t_stop = 1e-3;
        let netlist = build_integrator(&spec);
        let wave = transient_run(&netlist, &SimConfig::from_netlist(&netlist).unwrap()).unwrap();
        let vout = wave.channel("v(out)").unwrap();
        // Slope -A/(MC) = -1e4 V/s, so -10 V after 1 ms.
        let end = *vout.last().unwrap();
        assert!((end + 10.0).abs() < 0.1, "ramp reached {end} V, expected -10 V");
        // Linearity halfway through.
        let mid = vout[vout.len() / 2];
        assert!((mid + 5.0).abs() < 0.05, "midpoint {mid} V, expected -5 V");
    }

    #[test]
    fn differentiator_settles_on_dc_input() {
        use crate::engine::{transient_run, SimConfig};
        use crate::netlist::SourceSpec;
        let mut spec = DifferentiatorSpec::default();
        spec.source = SourceSpec::Dc { level: 1.0 };
        spec.t_stop = 2e-4;
        let netlist = build_differentiator(&spec);
        let wave = transient_run(&netlist, &SimConfig::from_netlist(&netlist).unwrap()).unwrap();
        let vout = wave.channel("v(out)").unwrap();
        assert!(vout.last().unwrap().abs() < 1e-6, "output did not settle to zero");
    }
}
