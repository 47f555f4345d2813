//! SPICE-flavored netlist dialect: parsing, validation, serialization.
//!
//! The dialect is deliberately tiny. Supported cards (first letter selects
//! the kind, case-insensitive):
//!
//! ```text
//! * comment
//! .title <text>
//! Rname a b <ohms>
//! Cname a b <farads>
//! Mname a b [RON=.. ROFF=.. D=.. MU=.. ETA=.. P=.. X0=.. WINDOW=BIOLEK|PRINTED|NONE]
//! Vname a b DC <volts> | SIN(off ampl freq_hz phase_deg) | PULSE(v1 v2 delay rise fall width period)
//! Ename out+ out- ctrl+ ctrl- <gain> [CLIP=<volts>]     (VCVS)
//! Oname out in+ in-                                      (ideal op-amp)
//! .tran <step> <stop>
//! .param <name> <value>
//! .probe v(node) v(a,b) i(elem) x(mem) ...
//! .end
//! ```
//!
//! Numbers accept the engineering suffixes f, p, n, u, m, k, meg, g
//! (case-insensitive). Node labels and names are case-insensitive; node
//! labels are stored lowercased, node `0` is ground. Parsing is total: any
//! byte sequence yields either a validated [`Netlist`] or a [`ParseError`]
//! with a line and column.

use crate::device::{MemristorParams, WindowKind};
use std::fmt;
use thiserror::Error;

/// What went wrong, attached to a 1-based line and column.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParseErrorKind {
    UnknownCard,
    BadArity,
    DuplicateName,
    BadNumber,
    MissingGround,
    DisconnectedNode,
}

#[derive(Debug, Clone, Error, PartialEq)]
#[error("line {line}, col {col}: {message}")]
pub struct ParseError {
    pub kind: ParseErrorKind,
    pub line: usize,
    pub col: usize,
    pub message: String,
}

impl ParseError {
    fn new(kind: ParseErrorKind, line: usize, col: usize, message: impl Into<String>) -> Self {
        ParseError { kind, line, col, message: message.into() }
    }
}

/// Independent source waveform.
#[derive(Debug, Clone, PartialEq)]
pub enum SourceSpec {
    Dc { level: f64 },
    Sin { offset: f64, amplitude: f64, freq: f64, phase_deg: f64 },
    Pulse { v1: f64, v2: f64, delay: f64, rise: f64, fall: f64, width: f64, period: f64 },
}

impl SourceSpec {
    /// Source value at time `t` [V].
    pub fn value_at(&self, t: f64) -> f64 {
        match *self {
            SourceSpec::Dc { level } => level,
            SourceSpec::Sin { offset, amplitude, freq, phase_deg } => {
                offset
                    + amplitude
                        * (2.0 * std::f64::consts::PI * freq * t + phase_deg.to_radians()).sin()
            }
            SourceSpec::Pulse { v1, v2, delay, rise, fall, width, period } => {
                if t < delay {
                    return v1;
                }
                let tau = (t - delay) % period;
                if tau < rise {
                    if rise == 0.0 {
                        v2
                    } else {
                        v1 + (v2 - v1) * tau / rise
                    }
                } else if tau < rise + width {
                    v2
                } else if tau < rise + width + fall {
                    if fall == 0.0 {
                        v1
                    } else {
                        v2 + (v1 - v2) * (tau - rise - width) / fall
                    }
                } else {
                    v1
                }
            }
        }
    }
}

/// One parsed card.
#[derive(Debug, Clone, PartialEq)]
pub enum ComponentKind {
    Resistor { ohms: f64 },
    Capacitor { farads: f64 },
    Memristor { params: MemristorParams },
    VSource { spec: SourceSpec },
    /// Voltage-controlled voltage source; nodes are out+, out-, ctrl+, ctrl-.
    /// With `clip` set the output is `clip * tanh(gain * v_ctrl / clip)`.
    Vcvs { gain: f64, clip: Option<f64> },
    /// Ideal op-amp; nodes are out, in+, in-. Enforces in+ = in- with a free
    /// output branch current.
    OpAmp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    /// Name as written; uniqueness is checked case-insensitively.
    pub name: String,
    /// Node labels, lowercased. "0" is ground.
    pub nodes: Vec<String>,
    pub kind: ComponentKind,
}

/// Probe request from a `.probe` directive.
#[derive(Debug, Clone, PartialEq)]
pub enum Probe {
    /// Node voltage `v(node)`.
    NodeVoltage(String),
    /// Differential voltage `v(a,b)`.
    DiffVoltage(String, String),
    /// Element current `i(name)`; the current enters the element at its
    /// first listed node.
    ElementCurrent(String),
    /// Memristor state `x(name)`.
    MemristorState(String),
}

impl fmt::Display for Probe {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Probe::NodeVoltage(n) => write!(f, "v({n})"),
            Probe::DiffVoltage(a, b) => write!(f, "v({a},{b})"),
            Probe::ElementCurrent(e) => write!(f, "i({e})"),
            Probe::MemristorState(m) => write!(f, "x({m})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Directive {
    Tran { step: f64, stop: f64 },
    Param { name: String, value: f64 },
    Probe { probes: Vec<Probe> },
}

/// A validated circuit description.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Netlist {
    pub title: String,
    pub components: Vec<Component>,
    pub directives: Vec<Directive>,
}

impl Netlist {
    /// First `.tran` directive, if any.
    pub fn tran(&self) -> Option<(f64, f64)> {
        self.directives.iter().find_map(|d| match d {
            Directive::Tran { step, stop } => Some((*step, *stop)),
            _ => None,
        })
    }

    /// All probes in directive order.
    pub fn probes(&self) -> Vec<Probe> {
        let mut out = Vec::new();
        for d in &self.directives {
            if let Directive::Probe { probes } = d {
                out.extend(probes.iter().cloned());
            }
        }
        out
    }

    pub fn component(&self, name: &str) -> Option<&Component> {
        self.components.iter().find(|c| c.name.eq_ignore_ascii_case(name))
    }

    /// Distinct node labels in first-appearance order (ground included).
    pub fn node_names(&self) -> Vec<String> {
        let mut seen = Vec::new();
        for c in &self.components {
            for n in &c.nodes {
                if !seen.iter().any(|s| s == n) {
                    seen.push(n.clone());
                }
            }
        }
        seen
    }
}

// ---------------------------------------------------------------------------
// Number parsing
// ---------------------------------------------------------------------------

const SUFFIXES: [(&str, &str); 8] = [
    ("meg", "e6"),
    ("f", "e-15"),
    ("p", "e-12"),
    ("n", "e-9"),
    ("u", "e-6"),
    ("m", "e-3"),
    ("k", "e3"),
    ("g", "e9"),
];

/// Parse a number token with an optional engineering suffix.
///
/// The suffix is applied textually where possible ("10n" parses as "10e-9"),
/// which keeps suffixed literals bit-identical to their plain scientific
/// forms.
pub fn parse_number(token: &str) -> Option<f64> {
    let lower = token.to_ascii_lowercase();
    let finite = |v: f64| if v.is_finite() { Some(v) } else { None };
    // "meg" first so it is not shadowed by "m".
    for (suffix, exp) in SUFFIXES {
        if let Some(prefix) = lower.strip_suffix(suffix) {
            if prefix.is_empty() {
                continue;
            }
            if prefix.contains(['e', 'E']) {
                let mult: f64 = format!("1{exp}").parse().unwrap();
                return parse_plain(prefix).and_then(|v| finite(v * mult));
            }
            return parse_plain(&format!("{prefix}{exp}")).and_then(finite);
        }
    }
    parse_plain(&lower).and_then(finite)
}

fn parse_plain(s: &str) -> Option<f64> {
    // f64::from_str accepts "inf"/"nan"; those are not numbers here.
    if s.chars().any(|c| c.is_ascii_alphabetic() && !matches!(c, 'e' | 'E')) {
        return None;
    }
    s.parse().ok()
}

// ---------------------------------------------------------------------------
// Parser
// ---------------------------------------------------------------------------

struct Token<'a> {
    text: &'a str,
    col: usize,
}

fn tokenize(line: &str) -> Vec<Token<'_>> {
    let mut out = Vec::new();
    let mut col = 0;
    let mut start = None;
    for (idx, ch) in line.char_indices() {
        col += 1;
        if ch.is_whitespace() {
            if let Some((s, c)) = start.take() {
                out.push(Token { text: &line[s..idx], col: c });
            }
        } else if start.is_none() {
            start = Some((idx, col));
        }
    }
    if let Some((s, c)) = start {
        out.push(Token { text: &line[s..], col: c });
    }
    out
}

fn valid_label(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Parse netlist text into a validated [`Netlist`].
pub fn parse(text: &str) -> Result<Netlist, ParseError> {
    let mut netlist = Netlist::default();
    // (lowercased name, line) for duplicate checking.
    let mut names: Vec<(String, usize)> = Vec::new();
    // first line that declared each node, for diagnostics.
    let mut node_lines: Vec<(String, usize)> = Vec::new();

    for (idx, raw_line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw_line.trim_end();
        let trimmed = line.trim_start();
        if trimmed.is_empty() || trimmed.starts_with('*') {
            continue;
        }
        let tokens = tokenize(line);
        let head = &tokens[0];
        let first = head.text.chars().next().unwrap();

        if first == '.' {
            let keyword = head.text.to_ascii_lowercase();
            match keyword.as_str() {
                ".end" => break,
                ".title" => {
                    let rest_start = head.col - 1 + head.text.len();
                    netlist.title = line
                        .get(rest_start..)
                        .map(str::trim)
                        .unwrap_or("")
                        .to_string();
                }
                ".tran" => {
                    let d = parse_tran(&tokens, lineno)?;
                    netlist.directives.push(d);
                }
                ".param" => {
                    let d = parse_param(&tokens, lineno)?;
                    netlist.directives.push(d);
                }
                ".probe" => {
                    let d = parse_probe(&tokens, lineno)?;
                    netlist.directives.push(d);
                }
                _ => {
                    return Err(ParseError::new(
                        ParseErrorKind::UnknownCard,
                        lineno,
                        head.col,
                        format!("unknown directive '{}'", head.text),
                    ));
                }
            }
            continue;
        }

        let component = match first.to_ascii_uppercase() {
            'R' => parse_two_node_value(&tokens, lineno, "resistor", |v| ComponentKind::Resistor {
                ohms: v,
            })?,
            'C' => parse_two_node_value(&tokens, lineno, "capacitor", |v| {
                ComponentKind::Capacitor { farads: v }
            })?,
            'M' => parse_memristor(&tokens, lineno)?,
            'V' => parse_vsource(&tokens, line, lineno)?,
            'E' => parse_vcvs(&tokens, lineno)?,
            'O' => parse_opamp(&tokens, lineno)?,
            other => {
                return Err(ParseError::new(
                    ParseErrorKind::UnknownCard,
                    lineno,
                    head.col,
                    format!("unknown card kind '{other}' in '{}'", head.text),
                ));
            }
        };

        let lower = component.name.to_ascii_lowercase();
        if let Some((_, prev)) = names.iter().find(|(n, _)| *n == lower) {
            return Err(ParseError::new(
                ParseErrorKind::DuplicateName,
                lineno,
                head.col,
                format!("duplicate component name '{}' (first declared on line {prev})", component.name),
            ));
        }
        names.push((lower, lineno));
        for n in &component.nodes {
            if !node_lines.iter().any(|(label, _)| label == n) {
                node_lines.push((n.clone(), lineno));
            }
        }
        netlist.components.push(component);
    }

    validate(&netlist, &node_lines)?;
    Ok(netlist)
}

fn expect_label(tok: &Token, lineno: usize, what: &str) -> Result<String, ParseError> {
    if valid_label(tok.text) {
        Ok(tok.text.to_ascii_lowercase())
    } else {
        Err(ParseError::new(
            ParseErrorKind::BadArity,
            lineno,
            tok.col,
            format!("invalid {what} '{}'", tok.text),
        ))
    }
}

fn expect_number(tok: &Token, lineno: usize, what: &str) -> Result<f64, ParseError> {
    parse_number(tok.text).ok_or_else(|| {
        ParseError::new(
            ParseErrorKind::BadNumber,
            lineno,
            tok.col,
            format!("invalid {what} '{}'", tok.text),
        )
    })
}

fn check_name(tok: &Token, lineno: usize) -> Result<String, ParseError> {
    if valid_label(tok.text) {
        Ok(tok.text.to_string())
    } else {
        Err(ParseError::new(
            ParseErrorKind::BadArity,
            lineno,
            tok.col,
            format!("invalid component name '{}'", tok.text),
        ))
    }
}

fn arity_error(lineno: usize, tokens: &[Token], expected: &str) -> ParseError {
    let col = tokens.last().map(|t| t.col + t.text.len()).unwrap_or(1);
    ParseError::new(
        ParseErrorKind::BadArity,
        lineno,
        col,
        format!("expected {expected}"),
    )
}

fn parse_two_node_value(
    tokens: &[Token],
    lineno: usize,
    what: &str,
    build: impl Fn(f64) -> ComponentKind,
) -> Result<Component, ParseError> {
    if tokens.len() != 4 {
        return Err(arity_error(lineno, tokens, &format!("'{what}: name a b value'")));
    }
    let name = check_name(&tokens[0], lineno)?;
    let a = expect_label(&tokens[1], lineno, "node label")?;
    let b = expect_label(&tokens[2], lineno, "node label")?;
    let value = expect_number(&tokens[3], lineno, &format!("{what} value"))?;
    if !(value > 0.0) {
        return Err(ParseError::new(
            ParseErrorKind::BadNumber,
            lineno,
            tokens[3].col,
            format!("{what} value must be positive, got '{}'", tokens[3].text),
        ));
    }
    Ok(Component { name, nodes: vec![a, b], kind: build(value) })
}

fn parse_memristor(tokens: &[Token], lineno: usize) -> Result<Component, ParseError> {
    if tokens.len() < 3 {
        return Err(arity_error(lineno, tokens, "'Mname a b [KEY=value ...]'"));
    }
    let name = check_name(&tokens[0], lineno)?;
    let a = expect_label(&tokens[1], lineno, "node label")?;
    let b = expect_label(&tokens[2], lineno, "node label")?;
    let mut params = MemristorParams::default();
    for tok in &tokens[3..] {
        let Some((key, value)) = tok.text.split_once('=') else {
            return Err(ParseError::new(
                ParseErrorKind::BadArity,
                lineno,
                tok.col,
                format!("expected KEY=value memristor parameter, got '{}'", tok.text),
            ));
        };
        let num = |what: &str| -> Result<f64, ParseError> {
            parse_number(value).ok_or_else(|| {
                ParseError::new(
                    ParseErrorKind::BadNumber,
                    lineno,
                    tok.col,
                    format!("invalid {what} '{value}'"),
                )
            })
        };
        match key.to_ascii_uppercase().as_str() {
            "RON" => params.r_on = num("RON")?,
            "ROFF" => params.r_off = num("ROFF")?,
            "D" => params.d = num("D")?,
            "MU" => params.mu_v = num("MU")?,
            "ETA" => params.eta = num("ETA")? as i32,
            "P" => params.p = num("P")? as u32,
            "X0" => params.x0 = num("X0")?,
            "WINDOW" => {
                params.window = match value.to_ascii_uppercase().as_str() {
                    "BIOLEK" => WindowKind::Biolek,
                    "PRINTED" => WindowKind::PrintedStep,
                    "NONE" => WindowKind::None,
                    other => {
                        return Err(ParseError::new(
                            ParseErrorKind::BadNumber,
                            lineno,
                            tok.col,
                            format!("unknown WINDOW '{other}' (expected BIOLEK, PRINTED, or NONE)"),
                        ));
                    }
                }
            }
            other => {
                return Err(ParseError::new(
                    ParseErrorKind::BadArity,
                    lineno,
                    tok.col,
                    format!("unknown memristor parameter '{other}'"),
                ));
            }
        }
    }
    if let Err(msg) = params.validate() {
        return Err(ParseError::new(ParseErrorKind::BadNumber, lineno, tokens[0].col, msg));
    }
    Ok(Component { name, nodes: vec![a, b], kind: ComponentKind::Memristor { params } })
}

fn parse_vsource(tokens: &[Token], line: &str, lineno: usize) -> Result<Component, ParseError> {
    if tokens.len() < 4 {
        return Err(arity_error(lineno, tokens, "'Vname a b DC level | SIN(...) | PULSE(...)'"));
    }
    let name = check_name(&tokens[0], lineno)?;
    let a = expect_label(&tokens[1], lineno, "node label")?;
    let b = expect_label(&tokens[2], lineno, "node label")?;

    let spec_tok = &tokens[3];
    let upper = spec_tok.text.to_ascii_uppercase();
    let spec = if upper == "DC" {
        if tokens.len() != 5 {
            return Err(arity_error(lineno, tokens, "'DC <level>'"));
        }
        SourceSpec::Dc { level: expect_number(&tokens[4], lineno, "DC level")? }
    } else if upper.starts_with("SIN") || upper.starts_with("PULSE") {
        let kind = if upper.starts_with("SIN") { "SIN" } else { "PULSE" };
        let start = spec_tok.col - 1;
        let rest = &line[start..];
        let vals = parse_paren_args(rest, kind, lineno, spec_tok.col)?;
        match kind {
            "SIN" => {
                if vals.len() != 4 {
                    return Err(ParseError::new(
                        ParseErrorKind::BadArity,
                        lineno,
                        spec_tok.col,
                        format!("SIN takes 4 arguments (offset ampl freq phase), got {}", vals.len()),
                    ));
                }
                let spec = SourceSpec::Sin {
                    offset: vals[0],
                    amplitude: vals[1],
                    freq: vals[2],
                    phase_deg: vals[3],
                };
                if vals[2] <= 0.0 {
                    return Err(ParseError::new(
                        ParseErrorKind::BadNumber,
                        lineno,
                        spec_tok.col,
                        "SIN frequency must be positive",
                    ));
                }
                spec
            }
            _ => {
                if vals.len() != 7 {
                    return Err(ParseError::new(
                        ParseErrorKind::BadArity,
                        lineno,
                        spec_tok.col,
                        format!(
                            "PULSE takes 7 arguments (v1 v2 delay rise fall width period), got {}",
                            vals.len()
                        ),
                    ));
                }
                let (rise, fall, width, period) = (vals[3], vals[4], vals[5], vals[6]);
                if rise < 0.0 || fall < 0.0 || width < 0.0 || period <= 0.0 {
                    return Err(ParseError::new(
                        ParseErrorKind::BadNumber,
                        lineno,
                        spec_tok.col,
                        "PULSE timing values must be non-negative with a positive period",
                    ));
                }
                if period < rise + width + fall {
                    return Err(ParseError::new(
                        ParseErrorKind::BadNumber,
                        lineno,
                        spec_tok.col,
                        "PULSE period must cover rise + width + fall",
                    ));
                }
                SourceSpec::Pulse {
                    v1: vals[0],
                    v2: vals[1],
                    delay: vals[2],
                    rise,
                    fall,
                    width,
                    period,
                }
            }
        }
    } else {
        return Err(ParseError::new(
            ParseErrorKind::BadArity,
            lineno,
            spec_tok.col,
            format!("expected DC, SIN(...), or PULSE(...), got '{}'", spec_tok.text),
        ));
    };

    Ok(Component { name, nodes: vec![a, b], kind: ComponentKind::VSource { spec } })
}

/// Parse "KIND(a b c ...)" possibly containing spaces, starting at `rest`.
fn parse_paren_args(
    rest: &str,
    kind: &str,
    lineno: usize,
    col: usize,
) -> Result<Vec<f64>, ParseError> {
    let open = rest.find('(').ok_or_else(|| {
        ParseError::new(ParseErrorKind::BadArity, lineno, col, format!("expected '(' after {kind}"))
    })?;
    let close = rest.find(')').ok_or_else(|| {
        ParseError::new(ParseErrorKind::BadArity, lineno, col, format!("unterminated {kind}(...)"))
    })?;
    if close < open {
        return Err(ParseError::new(ParseErrorKind::BadArity, lineno, col, "mismatched parentheses"));
    }
    let head = rest[..open].to_ascii_uppercase();
    if head != kind {
        return Err(ParseError::new(
            ParseErrorKind::BadArity,
            lineno,
            col,
            format!("unexpected text '{}' before '('", &rest[..open]),
        ));
    }
    if rest[close + 1..].trim() != "" {
        return Err(ParseError::new(
            ParseErrorKind::BadArity,
            lineno,
            col,
            format!("unexpected text after {kind}(...)"),
        ));
    }
    let mut vals = Vec::new();
    for piece in rest[open + 1..close].split_whitespace() {
        let v = parse_number(piece).ok_or_else(|| {
            ParseError::new(
                ParseErrorKind::BadNumber,
                lineno,
                col,
                format!("invalid number '{piece}' in {kind}(...)"),
            )
        })?;
        vals.push(v);
    }
    Ok(vals)
}

fn parse_vcvs(tokens: &[Token], lineno: usize) -> Result<Component, ParseError> {
    if tokens.len() != 6 && tokens.len() != 7 {
        return Err(arity_error(lineno, tokens, "'Ename out+ out- ctrl+ ctrl- gain [CLIP=v]'"));
    }
    let name = check_name(&tokens[0], lineno)?;
    let mut nodes = Vec::with_capacity(4);
    for tok in &tokens[1..5] {
        nodes.push(expect_label(tok, lineno, "node label")?);
    }
    let gain = expect_number(&tokens[5], lineno, "VCVS gain")?;
    let clip = if tokens.len() == 7 {
        let tok = &tokens[6];
        let Some((key, value)) = tok.text.split_once('=') else {
            return Err(ParseError::new(
                ParseErrorKind::BadArity,
                lineno,
                tok.col,
                format!("expected CLIP=value, got '{}'", tok.text),
            ));
        };
        if !key.eq_ignore_ascii_case("clip") {
            return Err(ParseError::new(
                ParseErrorKind::BadArity,
                lineno,
                tok.col,
                format!("unknown VCVS parameter '{key}'"),
            ));
        }
        let v = parse_number(value).ok_or_else(|| {
            ParseError::new(
                ParseErrorKind::BadNumber,
                lineno,
                tok.col,
                format!("invalid CLIP value '{value}'"),
            )
        })?;
        if !(v > 0.0) {
            return Err(ParseError::new(
                ParseErrorKind::BadNumber,
                lineno,
                tok.col,
                "CLIP must be positive",
            ));
        }
        Some(v)
    } else {
        None
    };
    Ok(Component { name, nodes, kind: ComponentKind::Vcvs { gain, clip } })
}

fn parse_opamp(tokens: &[Token], lineno: usize) -> Result<Component, ParseError> {
    if tokens.len() != 4 {
        return Err(arity_error(lineno, tokens, "'Oname out in+ in-'"));
    }
    let name = check_name(&tokens[0], lineno)?;
    let mut nodes = Vec::with_capacity(3);
    for tok in &tokens[1..4] {
        nodes.push(expect_label(tok, lineno, "node label")?);
    }
    Ok(Component { name, nodes, kind: ComponentKind::OpAmp })
}

fn parse_tran(tokens: &[Token], lineno: usize) -> Result<Directive, ParseError> {
    if tokens.len() != 3 {
        return Err(arity_error(lineno, tokens, "'.tran <step> <stop>'"));
    }
    let step = expect_number(&tokens[1], lineno, "tran step")?;
    let stop = expect_number(&tokens[2], lineno, "tran stop")?;
    if !(step > 0.0 && stop > step) {
        return Err(ParseError::new(
            ParseErrorKind::BadNumber,
            lineno,
            tokens[1].col,
            ".tran requires 0 < step < stop",
        ));
    }
    Ok(Directive::Tran { step, stop })
}

fn parse_param(tokens: &[Token], lineno: usize) -> Result<Directive, ParseError> {
    if tokens.len() != 3 {
        return Err(arity_error(lineno, tokens, "'.param <name> <value>'"));
    }
    let name = expect_label(&tokens[1], lineno, "parameter name")?;
    let value = expect_number(&tokens[2], lineno, "parameter value")?;
    Ok(Directive::Param { name, value })
}

fn parse_probe(tokens: &[Token], lineno: usize) -> Result<Directive, ParseError> {
    if tokens.len() < 2 {
        return Err(arity_error(lineno, tokens, "'.probe v(node) | v(a,b) | i(elem) | x(mem) ...'"));
    }
    let mut probes = Vec::new();
    for tok in &tokens[1..] {
        let text = tok.text.to_ascii_lowercase();
        let bad = |msg: String| ParseError::new(ParseErrorKind::BadArity, lineno, tok.col, msg);
        let (kind, rest) = text
            .split_once('(')
            .ok_or_else(|| bad(format!("malformed probe '{}'", tok.text)))?;
        let inner = rest
            .strip_suffix(')')
            .ok_or_else(|| bad(format!("malformed probe '{}'", tok.text)))?;
        let probe = match kind {
            "v" => {
                if let Some((a, b)) = inner.split_once(',') {
                    if !valid_label(a) || !valid_label(b) {
                        return Err(bad(format!("invalid probe nodes '{inner}'")));
                    }
                    Probe::DiffVoltage(a.to_string(), b.to_string())
                } else {
                    if !valid_label(inner) {
                        return Err(bad(format!("invalid probe node '{inner}'")));
                    }
                    Probe::NodeVoltage(inner.to_string())
                }
            }
            "i" => {
                if !valid_label(inner) {
                    return Err(bad(format!("invalid probe element '{inner}'")));
                }
                Probe::ElementCurrent(inner.to_string())
            }
            "x" => {
                if !valid_label(inner) {
                    return Err(bad(format!("invalid probe element '{inner}'")));
                }
                Probe::MemristorState(inner.to_string())
            }
            other => return Err(bad(format!("unknown probe kind '{other}'"))),
        };
        probes.push(probe);
    }
    Ok(Directive::Probe { probes })
}

// ---------------------------------------------------------------------------
// Semantic validation
// ---------------------------------------------------------------------------

fn validate(netlist: &Netlist, node_lines: &[(String, usize)]) -> Result<(), ParseError> {
    if netlist.components.is_empty() {
        return Ok(());
    }
    let line_of = |node: &str| {
        node_lines
            .iter()
            .find(|(n, _)| n == node)
            .map(|(_, l)| *l)
            .unwrap_or(1)
    };

    let nodes = netlist.node_names();
    if !nodes.iter().any(|n| n == "0") {
        return Err(ParseError::new(
            ParseErrorKind::MissingGround,
            line_of(&nodes[0]),
            1,
            "netlist has no ground node '0'",
        ));
    }

    // Reachability from ground treating each component's node set as
    // mutually connected. Finer-grained floating-node cases surface as
    // SingularMatrix at assembly time.
    let index_of = |name: &str| nodes.iter().position(|n| n == name).unwrap();
    let mut reachable = vec![false; nodes.len()];
    reachable[index_of("0")] = true;
    loop {
        let mut changed = false;
        for c in &netlist.components {
            let any = c.nodes.iter().any(|n| reachable[index_of(n)]);
            if any {
                for n in &c.nodes {
                    let i = index_of(n);
                    if !reachable[i] {
                        reachable[i] = true;
                        changed = true;
                    }
                }
            }
        }
        if !changed {
            break;
        }
    }
    if let Some(pos) = reachable.iter().position(|r| !r) {
        let node = &nodes[pos];
        return Err(ParseError::new(
            ParseErrorKind::DisconnectedNode,
            line_of(node),
            1,
            format!("node '{node}' is not connected to ground"),
        ));
    }

    // Probe references must resolve.
    for d in &netlist.directives {
        let Directive::Probe { probes } = d else { continue };
        for p in probes {
            match p {
                Probe::NodeVoltage(n) => {
                    if n != "0" && !nodes.iter().any(|x| x == n) {
                        return Err(ParseError::new(
                            ParseErrorKind::UnknownCard,
                            line_of(n),
                            1,
                            format!("probe references undeclared node '{n}'"),
                        ));
                    }
                }
                Probe::DiffVoltage(a, b) => {
                    for n in [a, b] {
                        if n != "0" && !nodes.iter().any(|x| x == n) {
                            return Err(ParseError::new(
                                ParseErrorKind::UnknownCard,
                                1,
                                1,
                                format!("probe references undeclared node '{n}'"),
                            ));
                        }
                    }
                }
                Probe::ElementCurrent(e) => {
                    if netlist.component(e).is_none() {
                        return Err(ParseError::new(
                            ParseErrorKind::UnknownCard,
                            1,
                            1,
                            format!("probe references unknown element '{e}'"),
                        ));
                    }
                }
                Probe::MemristorState(e) => {
                    let ok = netlist
                        .component(e)
                        .map(|c| matches!(c.kind, ComponentKind::Memristor { .. }))
                        .unwrap_or(false);
                    if !ok {
                        return Err(ParseError::new(
                            ParseErrorKind::UnknownCard,
                            1,
                            1,
                            format!("probe x({e}) does not name a memristor"),
                        ));
                    }
                }
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

/// Format a value compactly but losslessly (shortest round-trip digits,
/// switching to scientific notation away from unity scale).
pub fn fmt_value(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    let a = x.abs();
    if !(1e-4..1e16).contains(&a) {
        format!("{x:e}")
    } else {
        format!("{x}")
    }
}

/// Canonical text form; `parse(serialize(n))` is structurally equal to `n`.
pub fn serialize(netlist: &Netlist) -> String {
    let mut out = String::new();
    if !netlist.title.is_empty() {
        out.push_str(&format!(".title {}\n", netlist.title));
    }
    for c in &netlist.components {
        match &c.kind {
            ComponentKind::Resistor { ohms } => {
                out.push_str(&format!("{} {} {} {}\n", c.name, c.nodes[0], c.nodes[1], fmt_value(*ohms)));
            }
            ComponentKind::Capacitor { farads } => {
                out.push_str(&format!("{} {} {} {}\n", c.name, c.nodes[0], c.nodes[1], fmt_value(*farads)));
            }
            ComponentKind::Memristor { params } => {
                out.push_str(&format!(
                    "{} {} {} RON={} ROFF={} D={} MU={} ETA={} P={} X0={} WINDOW={}\n",
                    c.name,
                    c.nodes[0],
                    c.nodes[1],
                    fmt_value(params.r_on),
                    fmt_value(params.r_off),
                    fmt_value(params.d),
                    fmt_value(params.mu_v),
                    params.eta,
                    params.p,
                    fmt_value(params.x0),
                    params.window,
                ));
            }
            ComponentKind::VSource { spec } => {
                let body = match spec {
                    SourceSpec::Dc { level } => format!("DC {}", fmt_value(*level)),
                    SourceSpec::Sin { offset, amplitude, freq, phase_deg } => format!(
                        "SIN({} {} {} {})",
                        fmt_value(*offset),
                        fmt_value(*amplitude),
                        fmt_value(*freq),
                        fmt_value(*phase_deg)
                    ),
                    SourceSpec::Pulse { v1, v2, delay, rise, fall, width, period } => format!(
                        "PULSE({} {} {} {} {} {} {})",
                        fmt_value(*v1),
                        fmt_value(*v2),
                        fmt_value(*delay),
                        fmt_value(*rise),
                        fmt_value(*fall),
                        fmt_value(*width),
                        fmt_value(*period)
                    ),
                };
                out.push_str(&format!("{} {} {} {}\n", c.name, c.nodes[0], c.nodes[1], body));
            }
            ComponentKind::Vcvs { gain, clip } => {
                let clip_txt = clip.map(|v| format!(" CLIP={}", fmt_value(v))).unwrap_or_default();
                out.push_str(&format!(
                    "{} {} {} {} {} {}{}\n",
                    c.name, c.nodes[0], c.nodes[1], c.nodes[2], c.nodes[3], fmt_value(*gain), clip_txt,
                ));
            }
            ComponentKind::OpAmp => {
                out.push_str(&format!("{} {} {} {}\n", c.name, c.nodes[0], c.nodes[1], c.nodes[2]));
            }
        }
    }
    for d in &netlist.directives {
        match d {
            Directive::Tran { step, stop } => {
                out.push_str(&format!(".tran {} {}\n", fmt_value(*step), fmt_value(*stop)));
            }
            Directive::Param { name, value } => {
                out.push_str(&format!(".param {} {}\n", name, fmt_value(*value)));
            }
            Directive::Probe { probes } => {
                let items: Vec<String> = probes.iter().map(|p| p.to_string()).collect();
                out.push_str(&format!(".probe {}\n", items.join(" ")));
            }
        }
    }
    out.push_str(".end\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_resistor() {
        let n = parse("R1 1 0 10k").unwrap();
        assert_eq!(n.components.len(), 1);
        let c = &n.components[0];
        assert_eq!(c.name, "R1");
        assert_eq!(c.nodes, vec!["1", "0"]);
        assert_eq!(c.kind, ComponentKind::Resistor { ohms: 10_000.0 });
    }

    #[test]
    fn parses_memristor_card() {
        let n = parse("M1 2 0 RON=100 ROFF=16K D=10N MU=1E-14 P=1 X0=0.5").unwrap();
        let c = &n.components[0];
        match &c.kind {
            ComponentKind::Memristor { params } => {
                assert_eq!(params.r_on, 100.0);
                assert_eq!(params.r_off, 16_000.0);
                assert_eq!(params.d, 1e-8);
                assert_eq!(params.mu_v, 1e-14);
                assert_eq!(params.p, 1);
                assert_eq!(params.x0, 0.5);
                assert_eq!(params.window, WindowKind::Biolek);
            }
            other => panic!("expected memristor, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_name_case_insensitive() {
        let err = parse("R1 1 0 10k\nr1 2 0 5k").unwrap_err();
        assert_eq!(err.kind, ParseErrorKind::DuplicateName);
        assert_eq!(err.line, 2);
    }

    #[test]
    fn suffix_table_exact() {
        let cases = [
            ("1f", 1e-15),
            ("1p", 1e-12),
            ("1n", 1e-9),
            ("10n", 1.0e-8),
            ("1u", 1e-6),
            ("1m", 1e-3),
            ("1k", 1e3),
            ("1meg", 1e6),
            ("1g", 1e9),
            ("4.7u", 4.7e-6),
            ("2.2MEG", 2.2e6),
            ("-5m", -5e-3),
            ("1e3", 1e3),
            ("0.5", 0.5),
        ];
        for (text, expected) in cases {
            let got = parse_number(text);
            assert_eq!(got, Some(expected), "suffix mismatch for '{text}'");
        }
    }

    #[test]
    fn bad_numbers_rejected() {
        for text in ["abc", "1x", "3k3", "1e", "nan", "inf", "--3", ""] {
            assert_eq!(parse_number(text), None, "'{text}' should not parse");
        }
    }

    #[test]
    fn missing_ground_detected() {
        let err = parse("R1 1 2 1k").unwrap_err();
        assert_eq!(err.kind, ParseErrorKind::MissingGround);
    }

    #[test]
    fn disconnected_island_detected() {
        let err = parse("V1 1 0 DC 1\nR1 2 3 1k").unwrap_err();
        assert_eq!(err.kind, ParseErrorKind::DisconnectedNode);
        assert_eq!(err.line, 2);
    }

    #[test]
    fn unknown_card_reports_location() {
        let err = parse("R1 1 0 1k\nQ1 1 0 2 model").unwrap_err();
        assert_eq!(err.kind, ParseErrorKind::UnknownCard);
        assert_eq!(err.line, 2);
    }

    #[test]
    fn sin_source_and_directives() {
        let text = "\
.title quick check
V1 1 0 SIN(0 1 1K 0)
R1 1 0 10k
.tran 1u 5m
.probe v(1) i(R1)
.end
ignored garbage after end";
        let n = parse(text).unwrap();
        assert_eq!(n.title, "quick check");
        assert_eq!(n.tran(), Some((1e-6, 5e-3)));
        assert_eq!(
            n.probes(),
            vec![Probe::NodeVoltage("1".into()), Probe::ElementCurrent("r1".into())]
        );
        match &n.components[0].kind {
            ComponentKind::VSource { spec: SourceSpec::Sin { amplitude, freq, .. } } => {
                assert_eq!(*amplitude, 1.0);
                assert_eq!(*freq, 1000.0);
            }
            other => panic!("expected SIN source, got {other:?}"),
        }
    }

    #[test]
    fn pulse_invariant_enforced() {
        let err = parse("V1 1 0 PULSE(0 1 0 1m 1m 1m 2m)\nR1 1 0 1k").unwrap_err();
        assert_eq!(err.kind, ParseErrorKind::BadNumber);
        assert!(parse("V1 1 0 PULSE(0 1 0 1m 1m 1m 3m)\nR1 1 0 1k").is_ok());
    }

    #[test]
    fn tran_invariant_enforced() {
        let err = parse("R1 1 0 1k\nV1 1 0 DC 1\n.tran 2m 1m").unwrap_err();
        assert_eq!(err.kind, ParseErrorKind::BadNumber);
    }

    #[test]
    fn empty_netlist_with_title_round_trips() {
        let n = Netlist { title: "nothing here".into(), ..Default::default() };
        let text = serialize(&n);
        assert_eq!(text, ".title nothing here\n.end\n");
        assert_eq!(parse(&text).unwrap(), n);
    }

    #[test]
    fn opamp_and_vcvs_round_trip() {
        let text = "\
V1 in 0 DC 1
E1 amp 0 in 0 -29 CLIP=5
O1 out 0 amp
R1 amp out 1k
R2 out 0 1k
.end";
        let n = parse(text).unwrap();
        let again = parse(&serialize(&n)).unwrap();
        assert_eq!(n, again);
    }

    #[test]
    fn pulse_value_waveform() {
        let s = SourceSpec::Pulse {
            v1: -1.0,
            v2: 1.0,
            delay: 0.0,
            rise: 1e-6,
            fall: 1e-6,
            width: 499e-6,
            period: 1e-3,
        };
        assert_eq!(s.value_at(0.0), -1.0);
        assert!((s.value_at(0.5e-6) - 0.0).abs() < 1e-12);
        assert_eq!(s.value_at(100e-6), 1.0);
        assert_eq!(s.value_at(700e-6), -1.0);
        assert_eq!(s.value_at(1.1e-3), 1.0); // periodic repeat
    }

    fn arbitrary_component() -> impl Strategy<Value = (ComponentKind, char)> {
        prop_oneof![
            (1e-3f64..1e6).prop_map(|v| (ComponentKind::Resistor { ohms: v }, 'R')),
            (1e-12f64..1e-3).prop_map(|v| (ComponentKind::Capacitor { farads: v }, 'C')),
            ((1e-2f64..1e3), (0.0f64..=1.0), 1u32..5).prop_map(|(r, x0, p)| {
                let params = MemristorParams {
                    r_on: r,
                    r_off: r * 3.5,
                    x0,
                    p,
                    ..MemristorParams::default()
                };
                (ComponentKind::Memristor { params }, 'M')
            }),
            (-10.0f64..10.0).prop_map(|v| (ComponentKind::VSource { spec: SourceSpec::Dc { level: v } }, 'V')),
            ((-10.0f64..10.0), (1.0f64..1e5)).prop_map(|(off, f)| (
                ComponentKind::VSource {
                    spec: SourceSpec::Sin { offset: off, amplitude: 1.25, freq: f, phase_deg: 45.0 }
                },
                'V'
            )),
        ]
    }

    proptest! {
        // Chain topologies: node k to node k+1, grounded at 0, always valid.
        #[test]
        fn round_trip_structural_equality(
            comps in proptest::collection::vec(arbitrary_component(), 1..8),
            title in "[a-z ]{0,12}",
        ) {
            let mut netlist = Netlist { title: title.trim().to_string(), ..Default::default() };
            for (idx, (kind, prefix)) in comps.into_iter().enumerate() {
                let a = if idx == 0 { "0".to_string() } else { format!("n{idx}") };
                let b = format!("n{}", idx + 1);
                netlist.components.push(Component {
                    name: format!("{prefix}{idx}"),
                    nodes: vec![a, b],
                    kind,
                });
            }
            // Tie the far end back to ground so everything is connected.
            let last = netlist.components.len();
            netlist.components.push(Component {
                name: format!("Rterm{last}"),
                nodes: vec![format!("n{last}"), "0".to_string()],
                kind: ComponentKind::Resistor { ohms: 50.0 },
            });
            netlist.directives.push(Directive::Tran { step: 1e-6, stop: 1e-3 });
            netlist.directives.push(Directive::Probe {
                probes: vec![Probe::NodeVoltage("n1".into())],
            });

            let text = serialize(&netlist);
            let parsed = parse(&text).unwrap();
            prop_assert_eq!(parsed, netlist);
        }

        #[test]
        fn parser_is_total(input in proptest::collection::vec(proptest::num::u8::ANY, 0..200)) {
            let text = String::from_utf8_lossy(&input);
            let _ = parse(&text); // must not panic
        }
    }
}
