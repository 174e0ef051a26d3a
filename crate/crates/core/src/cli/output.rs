//! CSV emission. Reals are written in Rust's shortest round-trip form, so
//! parsing a cell gives back the exact value.

use std::io::Write;
use std::path::Path;

use crate::concentration::{ConcentrationReport, ReductionReport};
use crate::flows::{LipschitzCertificate, Trajectory};
use crate::wep::WepReport;

pub const CONCENTRATION_COLUMNS: [&str; 5] = ["rho", "empirical_tail", "dkw_margin", "bound_log", "fitted_exponent"];
pub const WEP_COLUMNS: [&str; 6] = ["tau", "system", "mu", "x_mean", "x_stderr", "m_ref"];
pub const REDUCTION_COLUMNS: [&str; 8] = [
    "dispersion_before",
    "dispersion_after",
    "contraction_ratio",
    "ratio_stderr",
    "predicted_ratio",
    "window_start",
    "window_end",
    "verdict",
];
pub const LIPSCHITZ_COLUMNS: [&str; 3] = ["estimate", "pairs_tested", "passed"];

pub fn real(x: f64) -> String {
    format!("{x:?}")
}

fn opt_real(x: Option<f64>) -> String {
    x.map(real).unwrap_or_default()
}

/// A report that can be written as one CSV table.
pub trait CsvTable {
    fn header(&self) -> Vec<String>;
    fn rows(&self) -> Vec<Vec<String>>;
}

fn owned(cols: &[&str]) -> Vec<String> {
    cols.iter().map(|s| s.to_string()).collect()
}

impl CsvTable for ConcentrationReport {
    fn header(&self) -> Vec<String> {
        owned(&CONCENTRATION_COLUMNS)
    }

    fn rows(&self) -> Vec<Vec<String>> {
        (0..self.rho_grid.len())
            .map(|i| {
                vec![
                    real(self.rho_grid[i]),
                    real(self.empirical_tail[i]),
                    real(self.dkw_margin[i]),
                    real(self.bound_log[i]),
                    opt_real(self.fitted_exponent),
                ]
            })
            .collect()
    }
}

impl CsvTable for WepReport {
    fn header(&self) -> Vec<String> {
        owned(&WEP_COLUMNS)
    }

    fn rows(&self) -> Vec<Vec<String>> {
        self.x_by_system
            .iter()
            .map(|p| {
                vec![real(p.tau), p.system.as_str().to_string(), p.mu.to_string(), real(p.x_mean), real(p.x_stderr), real(p.m_ref)]
            })
            .collect()
    }
}

impl CsvTable for ReductionReport {
    fn header(&self) -> Vec<String> {
        owned(&REDUCTION_COLUMNS)
    }

    fn rows(&self) -> Vec<Vec<String>> {
        vec![vec![
            real(self.dispersion_before),
            real(self.dispersion_after),
            real(self.contraction_ratio),
            real(self.ratio_stderr),
            real(self.predicted_ratio),
            real(self.window_start),
            real(self.window_end),
            self.verdict.to_string(),
        ]]
    }
}

impl CsvTable for LipschitzCertificate {
    fn header(&self) -> Vec<String> {
        owned(&LIPSCHITZ_COLUMNS)
    }

    fn rows(&self) -> Vec<Vec<String>> {
        vec![vec![real(self.estimate), self.pairs_tested.to_string(), self.passed.to_string()]]
    }
}

impl CsvTable for Trajectory {
    fn header(&self) -> Vec<String> {
        let dim = self.samples.first().map_or(0, |(_, s)| s.u.len());
        let mut h = vec!["tau".to_string()];
        h.extend((0..dim).map(|i| format!("u_{i}")));
        h.extend((0..dim).map(|i| format!("p_{i}")));
        h
    }

    fn rows(&self) -> Vec<Vec<String>> {
        self.samples
            .iter()
            .map(|(tau, s)| std::iter::once(*tau).chain(s.u.iter().copied()).chain(s.p.iter().copied()).map(real).collect())
            .collect()
    }
}

/// RFC 4180 bytes (CRLF line endings, minimal quoting).
pub fn csv_bytes(table: &dyn CsvTable) -> std::io::Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::CRLF).from_writer(Vec::new());
    w.write_record(table.header())?;
    for row in table.rows() {
        w.write_record(row)?;
    }
    w.into_inner().map_err(|e| e.into_error())
}

pub fn emit_csv(table: &dyn CsvTable, path: &Path) -> std::io::Result<()> {
    let bytes = csv_bytes(table)?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    f.sync_all()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(n: usize) -> ConcentrationReport {
        ConcentrationReport {
            rho_grid: (1..=n).map(|i| 0.1 * i as f64).collect(),
            empirical_tail: (1..=n).map(|i| 1.0 / (i as f64 + 2.0)).collect(),
            dkw_margin: vec![0.0042946908; n],
            bound_log: (1..=n).map(|i| -(i as f64).powi(2) / 3.0).collect(),
            fitted_exponent: Some(0.589),
            fit_r_squared: Some(0.99),
            sigma_f: 0.25,
            m_f: 0.0,
            count: 100_000,
            n_factors: 16,
            scaled_bound_log: -8192.69,
            complexity_bound_log: -128.69,
            verdict: true,
            violations: 0,
        }
    }

    #[test]
    fn empty_report_is_header_only() {
        let bytes = csv_bytes(&report(0)).unwrap();
        assert_eq!(String::from_utf8(bytes).unwrap(), "rho,empirical_tail,dkw_margin,bound_log,fitted_exponent\r\n");
    }

    #[test]
    fn reals_round_trip() {
        let r = report(3);
        let bytes = csv_bytes(&r).unwrap();
        let mut rd = csv::Reader::from_reader(bytes.as_slice());
        for (i, rec) in rd.records().enumerate() {
            let rec = rec.unwrap();
            let vals: Vec<f64> = rec.iter().map(|c| c.parse().unwrap()).collect();
            assert_eq!(vals, vec![r.rho_grid[i], r.empirical_tail[i], r.dkw_margin[i], r.bound_log[i], 0.589]);
        }
        for x in [1e-300, -2.5e17, f64::MIN_POSITIVE, 0.1 + 0.2, 1.0 / 3.0, -0.0] {
            assert_eq!(real(x).parse::<f64>().unwrap().to_bits(), x.to_bits());
        }
    }

    #[test]
    fn missing_fit_is_blank() {
        let r = ConcentrationReport { fitted_exponent: None, ..report(1) };
        let s = String::from_utf8(csv_bytes(&r).unwrap()).unwrap();
        assert!(s.ends_with(",\r\n"), "{s}");
    }
}
