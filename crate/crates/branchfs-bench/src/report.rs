//! Report types: raw samples, per-point medians, shape assertions, and the
//! CSV / markdown renderings.

use std::fmt::Write as _;
use std::fs;

/// One raw measurement. CSV columns are exactly these fields:
/// `scenario,param,trial,value` where value is microseconds for latency
/// scenarios and MB/s for throughput.
#[derive(Debug, Clone)]
pub struct Sample {
    pub scenario: String,
    pub param: String,
    pub trial: usize,
    pub value: f64,
}

#[derive(Debug, Clone)]
pub struct Point {
    pub param: String,
    pub median: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone)]
pub struct Assertion {
    pub name: String,
    pub pass: bool,
    /// Informational assertions are reported but never fail the run
    /// (hardware-dependent ratios).
    pub informational: bool,
}

#[derive(Debug, Clone)]
pub struct BenchReport {
    pub scenario: String,
    pub unit: &'static str,
    pub points: Vec<Point>,
    pub samples: Vec<Sample>,
    pub assertions: Vec<Assertion>,
    pub fingerprint: String,
}

impl BenchReport {
    /// True when every non-informational shape assertion holds.
    pub fn passed(&self) -> bool {
        self.assertions.iter().all(|a| a.pass || a.informational)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("scenario,param,trial,value\n");
        for s in &self.samples {
            let _ = writeln!(out, "{},{},{},{}", s.scenario, s.param, s.trial, s.value);
        }
        out
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "## {}\n", self.scenario);
        let _ = writeln!(out, "| param | median ({0}) | min ({0}) | max ({0}) |", self.unit);
        let _ = writeln!(out, "|---|---|---|---|");
        for p in &self.points {
            let _ = writeln!(
                out,
                "| {} | {:.1} | {:.1} | {:.1} |",
                p.param, p.median, p.min, p.max
            );
        }
        if !self.assertions.is_empty() {
            let _ = writeln!(out, "\n| assertion | result |");
            let _ = writeln!(out, "|---|---|");
            for a in &self.assertions {
                let verdict = match (a.pass, a.informational) {
                    (true, _) => "pass",
                    (false, true) => "miss (informational)",
                    (false, false) => "FAIL",
                };
                let _ = writeln!(out, "| {} | {} |", a.name, verdict);
            }
        }
        let _ = writeln!(out, "\nEnvironment: {}", self.fingerprint);
        out
    }

    pub fn write_out(&self, path: &std::path::Path) -> std::io::Result<()> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => fs::write(path, self.to_csv()),
            _ => fs::write(path, self.to_markdown()),
        }
    }
}

/// Median of the samples (averaging the middle pair for even counts).
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// CPU model, kernel version, and the page-cache strategy in effect.
pub fn environment_fingerprint() -> String {
    let cpu = fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("model name"))
                .map(|l| l.split(':').nth(1).unwrap_or("").trim().to_string())
        })
        .unwrap_or_else(|| "unknown cpu".to_string());
    let kernel = fs::read_to_string("/proc/version")
        .map(|s| s.split_whitespace().take(3).collect::<Vec<_>>().join(" "))
        .unwrap_or_else(|_| "unknown kernel".to_string());
    format!("{cpu}; {kernel}; page cache warm (no drop between write and read)")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_handles_odd_and_even() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn csv_is_recomputable() {
        let report = BenchReport {
            scenario: "creation".into(),
            unit: "us",
            points: vec![],
            samples: vec![Sample {
                scenario: "creation".into(),
                param: "100".into(),
                trial: 0,
                value: 292.0,
            }],
            assertions: vec![],
            fingerprint: String::new(),
        };
        let csv = report.to_csv();
        assert_eq!(csv.lines().next(), Some("scenario,param,trial,value"));
        assert!(csv.contains("creation,100,0,292"));
    }
}
