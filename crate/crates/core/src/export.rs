//! Plain CSV tables for experiment outputs.
//!
//! Floats are written with Rust's shortest round-trip formatting, so equal
//! values always produce equal bytes.

use std::io::Write;

use crate::averaging::{BoundCheck, RateEstimate};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(headers: impl IntoIterator<Item = S>) -> Self {
        Self { headers: headers.into_iter().map(Into::into).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.headers.len());
        self.rows.push(row);
    }

    pub fn push_f64(&mut self, row: &[f64]) {
        self.push(row.iter().map(|v| v.to_string()).collect());
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{}", self.headers.join(","))?;
        for row in &self.rows {
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write(&mut buf).expect("writing to memory cannot fail");
        String::from_utf8(buf).expect("csv is utf-8")
    }
}

/// ε, error, stderr and, when brackets are supplied, bound and error/bound.
pub fn rate_table(estimate: &RateEstimate, brackets: Option<&[f64]>) -> Table {
    let mut t = Table::new(["eps", "error", "stderr", "bound", "ratio"]);
    for i in 0..estimate.epsilons.len() {
        let (bound, ratio) = match brackets {
            Some(b) => (b[i].to_string(), (estimate.errors[i] / b[i]).to_string()),
            None => (String::new(), String::new()),
        };
        t.push(vec![estimate.epsilons[i].to_string(), estimate.errors[i].to_string(), estimate.stderrs[i].to_string(), bound, ratio]);
    }
    t
}

pub fn bound_table(check: &BoundCheck) -> Table {
    let mut t = Table::new(["eps", "error", "stderr", "bound", "ratio", "ok"]);
    for r in &check.rows {
        t.push(vec![r.eps.to_string(), r.error.to_string(), r.stderr.to_string(), r.bracket.to_string(), r.ratio.to_string(), r.ok.to_string()]);
    }
    t
}

/// Error curves of every ε stacked: eps, time, error, stderr.
pub fn curve_table(estimate: &RateEstimate) -> Table {
    let mut t = Table::new(["eps", "time", "error", "stderr"]);
    for c in &estimate.curves {
        for k in 0..c.times.len() {
            t.push_f64(&[c.eps, c.times[k], c.error[k], c.stderr[k]]);
        }
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip() {
        let mut t = Table::new(["a", "b"]);
        t.push_f64(&[0.1 + 0.2, 1e-300]);
        let csv = t.to_csv();
        let row: Vec<f64> = csv.lines().nth(1).unwrap().split(',').map(|v| v.parse().unwrap()).collect();
        assert_eq!(row, vec![0.1 + 0.2, 1e-300]);
    }
}
