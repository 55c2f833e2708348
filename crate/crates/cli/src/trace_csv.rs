//! Trace files: a `# key = value` header block, then one CSV row per outer
//! iteration. Reals are written with 17 significant digits so they survive a
//! round trip through text.

use std::path::Path;

use bilevel_core::drivers::RunTrace;
use bilevel_core::schedule::SchedulePlan;

use crate::error::{CliError, CliResult};

pub const COLUMNS: [&str; 8] = [
    "t",
    "hypergrad_norm_est",
    "hypergrad_norm_analytic",
    "phi_analytic",
    "K_t",
    "delta_t",
    "oracle_calls",
    "wall_ms",
];

pub fn real(v: f64) -> String {
    format!("{v:.16e}")
}

fn opt(v: Option<f64>) -> String {
    v.map(real).unwrap_or_default()
}

pub fn reals(v: &[f64]) -> String {
    v.iter().map(|&x| real(x)).collect::<Vec<_>>().join(",")
}

/// Renders the file. `wall_ms` stays empty unless `timing` is set.
pub fn render(header: &[(String, String)], trace: &RunTrace, timing: bool) -> CliResult<Vec<u8>> {
    let mut buf = Vec::new();
    for (k, v) in header.iter().chain(trace.plan.to_pairs().iter()) {
        buf.extend_from_slice(format!("# {k} = {v}\n").as_bytes());
    }
    let mut w = csv::Writer::from_writer(buf);
    let csv_err = |e: csv::Error| CliError::Config(format!("csv encoding failed: {e}"));
    w.write_record(COLUMNS).map_err(csv_err)?;
    for r in &trace.rows {
        w.write_record([
            r.t.to_string(),
            real(r.est_norm),
            opt(r.analytic_norm),
            opt(r.phi_analytic),
            r.k_t.to_string(),
            opt(r.delta_t),
            r.oracle_calls.to_string(),
            if timing { real(r.wall_ms) } else { String::new() },
        ])
        .map_err(csv_err)?;
    }
    w.into_inner()
        .map_err(|e| CliError::Config(format!("csv flush failed: {e}")))
}

pub fn write(path: &Path, header: &[(String, String)], trace: &RunTrace, timing: bool) -> CliResult<()> {
    let bytes = render(header, trace, timing)?;
    std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

/// A trace file read back.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceFile {
    pub header: Vec<(String, String)>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl TraceFile {
    pub fn read(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let bad = |detail: String| CliError::Trace {
            path: path.to_path_buf(),
            detail,
        };
        let mut header = Vec::new();
        let mut body = String::new();
        for line in text.lines() {
            match line.strip_prefix("# ") {
                Some(kv) if body.is_empty() => {
                    let (k, v) = kv
                        .split_once(" = ")
                        .ok_or_else(|| bad(format!("header line {line:?} is not `# key = value`")))?;
                    header.push((k.to_string(), v.to_string()));
                }
                _ => {
                    body.push_str(line);
                    body.push('\n');
                }
            }
        }
        let mut rdr = csv::Reader::from_reader(body.as_bytes());
        let columns = rdr
            .headers()
            .map_err(|e| bad(e.to_string()))?
            .iter()
            .map(str::to_string)
            .collect();
        let rows = rdr
            .records()
            .map(|r| r.map(|rec| rec.iter().map(str::to_string).collect()))
            .collect::<Result<Vec<Vec<String>>, _>>()
            .map_err(|e| bad(e.to_string()))?;
        Ok(TraceFile { header, columns, rows })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.header.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    /// The plan the run used, rebuilt from the header.
    pub fn plan(&self) -> CliResult<SchedulePlan> {
        Ok(SchedulePlan::from_pairs(&self.header)?)
    }

    pub fn column(&self, name: &str) -> Option<Vec<&str>> {
        let i = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[i].as_str()).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use bilevel_core::drivers::{plan_for, run_f2ba};
    use bilevel_core::problems;
    use bilevel_core::schedule::ScheduleOverrides;

    #[test]
    fn values_round_trip_at_full_precision() {
        for v in [
            0.1,
            1.0 / 3.0,
            f64::MIN_POSITIVE,
            6.02214076e23,
            -2.5e-300,
            std::f64::consts::PI,
        ] {
            assert_eq!(real(v).parse::<f64>().unwrap().to_bits(), v.to_bits());
        }
    }

    #[test]
    fn trace_and_plan_survive_a_round_trip() {
        let s = problems::make_kernel_pl();
        let ov = ScheduleOverrides {
            t_outer: Some(5),
            ..Default::default()
        };
        let plan = plan_for(s.problem.as_ref(), &s.x0, &s.y0, 1e-2, &ov).unwrap();
        let tr = run_f2ba(s.problem.as_ref(), &plan, &s.x0, &s.y0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        write(&path, &[("problem".into(), "kernel_pl".into())], &tr, false).unwrap();
        let back = TraceFile::read(&path).unwrap();
        assert_eq!(back.get("problem"), Some("kernel_pl"));
        assert_eq!(back.columns, COLUMNS);
        assert_eq!(back.plan().unwrap(), plan);
        let est: Vec<f64> = back
            .column("hypergrad_norm_est")
            .unwrap()
            .iter()
            .map(|v| v.parse().unwrap())
            .collect();
        assert_eq!(est, tr.rows.iter().map(|r| r.est_norm).collect::<Vec<_>>());
        assert!(back.column("wall_ms").unwrap().iter().all(|v| v.is_empty()));
        assert!(back.column("delta_t").unwrap().iter().all(|v| v.is_empty()));
    }
}
