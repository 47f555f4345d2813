//! Uniformly sampled multi-channel time series and its CSV form.
//!
//! The CSV contract: first column `t` in seconds, one column per probe,
//! header row with channel names, values formatted losslessly.

use crate::netlist::fmt_value;
use std::io::{self, BufRead, Write};

#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    /// Uniform step [s].
    pub dt: f64,
    /// Sample times, `t[k] = k * dt`.
    pub t: Vec<f64>,
    /// Named channels, all the same length as `t`. Voltages in volts,
    /// currents in amperes, memristor states dimensionless.
    pub channels: Vec<(String, Vec<f64>)>,
    /// Largest KCL residual seen across all solves of the run [A].
    pub max_kcl_residual: f64,
}

impl Waveform {
    pub fn channel(&self, name: &str) -> Option<&[f64]> {
        self.channels
            .iter()
            .find(|(n, _)| n.eq_ignore_ascii_case(name))
            .map(|(_, data)| data.as_slice())
    }

    pub fn channel_names(&self) -> Vec<&str> {
        self.channels.iter().map(|(n, _)| n.as_str()).collect()
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn to_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let mut header = vec!["t".to_string()];
        header.extend(self.channels.iter().map(|(n, _)| csv_field(n)));
        writeln!(w, "{}", header.join(","))?;
        for k in 0..self.t.len() {
            let mut row = String::with_capacity(32 * (1 + self.channels.len()));
            row.push_str(&fmt_value(self.t[k]));
            for (_, data) in &self.channels {
                row.push(',');
                row.push_str(&fmt_value(data[k]));
            }
            writeln!(w, "{row}")?;
        }
        Ok(())
    }

    /// Read a waveform back from CSV produced by [`Waveform::to_csv`].
    pub fn from_csv<R: BufRead>(r: R) -> Result<Waveform, CsvError> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| CsvError::Malformed("empty file".into()))?
            .map_err(CsvError::Io)?;
        let names = split_csv_row(&header);
        if names.first().map(String::as_str) != Some("t") {
            return Err(CsvError::Malformed("first column must be 't'".into()));
        }
        let mut t = Vec::new();
        let mut channels: Vec<(String, Vec<f64>)> =
            names[1..].iter().map(|n| (n.clone(), Vec::new())).collect();
        for (idx, line) in lines.enumerate() {
            let line = line.map_err(CsvError::Io)?;
            if line.trim().is_empty() {
                continue;
            }
            let fields = split_csv_row(&line);
            if fields.len() != names.len() {
                return Err(CsvError::Malformed(format!(
                    "row {} has {} fields, expected {}",
                    idx + 2,
                    fields.len(),
                    names.len()
                )));
            }
            let parse = |s: &str| -> Result<f64, CsvError> {
                s.parse()
                    .map_err(|_| CsvError::Malformed(format!("bad number '{s}' on row {}", idx + 2)))
            };
            t.push(parse(&fields[0])?);
            for (col, (_, data)) in channels.iter_mut().enumerate() {
                data.push(parse(&fields[col + 1])?);
            }
        }
        if t.len() < 2 {
            return Err(CsvError::Malformed("need at least two samples".into()));
        }
        let dt = t[1] - t[0];
        for w in t.windows(2) {
            if ((w[1] - w[0]) - dt).abs() > 1e-9 * dt.abs().max(1e-300) {
                return Err(CsvError::Malformed("time axis is not uniform".into()));
            }
        }
        Ok(Waveform { dt, t, channels, max_kcl_residual: 0.0 })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CsvError {
    #[error("malformed waveform CSV: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Quote a header field when it contains a comma (differential probes like
/// `v(a,b)`).
fn csv_field(s: &str) -> String {
    if s.contains(',') {
        format!("\"{s}\"")
    } else {
        s.to_string()
    }
}

fn split_csv_row(line: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut field = String::new();
    let mut in_quotes = false;
    for ch in line.chars() {
        match ch {
            '"' => in_quotes = !in_quotes,
            ',' if !in_quotes => out.push(std::mem::take(&mut field)),
            _ => field.push(ch),
        }
    }
    out.push(field);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_wave() -> Waveform {
        let dt = 1e-6;
        let t: Vec<f64> = (0..5).map(|k| k as f64 * dt).collect();
        Waveform {
            dt,
            t,
            channels: vec![
                ("v(1)".to_string(), vec![0.0, 0.125, 0.25, 0.5, 1.0]),
                ("v(a,b)".to_string(), vec![1e-9, -2.5e-7, 3.0, -4.0, 5.5]),
            ],
            max_kcl_residual: 0.0,
        }
    }

    #[test]
    fn csv_round_trip_exact() {
        let wave = sample_wave();
        let mut buf = Vec::new();
        wave.to_csv(&mut buf).unwrap();
        let back = Waveform::from_csv(buf.as_slice()).unwrap();
        assert_eq!(back.t, wave.t);
        assert_eq!(back.channels, wave.channels);
    }

    #[test]
    fn quoted_header_survives() {
        let wave = sample_wave();
        let mut buf = Vec::new();
        wave.to_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,v(1),\"v(a,b)\"\n"));
    }

    #[test]
    fn nonuniform_axis_rejected() {
        let text = "t,v(1)\n0,0\n1e-6,1\n3e-6,2\n";
        assert!(matches!(Waveform::from_csv(text.as_bytes()), Err(CsvError::Malformed(_))));
    }
}
