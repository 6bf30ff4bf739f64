use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::spec::SweepSpec;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single value.
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Summary {
        if values.is_empty() {
            return Summary::default();
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = if values.len() > 1 {
            values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Summary {
            mean,
            std: var.sqrt(),
            min: values.iter().cloned().fold(f64::INFINITY, f64::min),
            max: values.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let lx: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let cov: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let var: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    cov / var
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub cpu_model: String,
    pub threads: usize,
    pub parallel_feature: bool,
    pub debug_assertions: bool,
    pub os: String,
    pub arch: String,
    pub version: String,
}

impl Environment {
    pub fn capture() -> Self {
        let cpu_model = std::fs::read_to_string("/proc/cpuinfo")
            .ok()
            .and_then(|s| {
                s.lines()
                    .find(|l| l.starts_with("model name"))
                    .and_then(|l| l.split(':').nth(1))
                    .map(|m| m.trim().to_string())
            })
            .unwrap_or_else(|| "unknown".into());
        Self {
            cpu_model,
            threads: std::thread::available_parallelism().map_or(1, |n| n.get()),
            parallel_feature: cfg!(feature = "parallel"),
            debug_assertions: cfg!(debug_assertions),
            os: std::env::consts::OS.into(),
            arch: std::env::consts::ARCH.into(),
            version: env!("CARGO_PKG_VERSION").into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyRow {
    pub method: String,
    pub vocab: usize,
    pub constraints: usize,
    pub sid_length: usize,
    pub dense_depth: usize,
    pub beam: usize,
    pub batch: usize,
    pub trials: usize,
    /// `ok`, `oom`, or an error message.
    pub status: String,
    /// Per-step mask construction time, milliseconds.
    pub mask_ms: Summary,
    /// Per-step `(decode - unconstrained decode)`, milliseconds.
    pub overhead_ms: Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchRow {
    pub vocab: usize,
    pub branch_factor: u32,
    pub constraints: usize,
    pub rows: usize,
    pub trials: usize,
    /// One kernel call, milliseconds.
    pub vntk_ms: Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryRow {
    pub vocab: usize,
    pub constraints: usize,
    pub sid_length: usize,
    pub dense_depth: usize,
    pub mode: String,
    pub states: usize,
    pub edges: usize,
    /// Bytes held by the index arrays.
    pub raw_bytes: u128,
    /// Capacity model at (K1, K2) = (12, 4) on the index's real counts.
    pub model_bytes: u128,
    /// Closed-form bound at (12, 4).
    pub bound_bytes: u128,
    /// Closed-form bound at this layout's per-entry costs.
    pub layout_bound_bytes: u128,
    pub model_ratio: f64,
    pub raw_ratio: f64,
    pub mb_per_million: f64,
}

impl MemoryRow {
    pub fn within_bounds(&self) -> bool {
        self.model_bytes <= self.bound_bytes && self.raw_bytes <= self.layout_bound_bytes
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplianceRow {
    pub method: String,
    pub vocab: usize,
    pub sid_length: usize,
    pub dense_depth: usize,
    pub constraints: usize,
    pub beam: usize,
    pub decodes: usize,
    pub emitted: usize,
    pub violations: usize,
    pub violation_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct OracleSummary {
    pub instances: usize,
    pub skipped: usize,
    pub states_checked: usize,
    pub bits_checked: usize,
    pub topk_instances: usize,
    pub approx_misses: usize,
    pub hash_false_positives: usize,
    pub hash_negatives: usize,
    pub failures: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub environment: Environment,
    pub spec: Option<SweepSpec>,
    pub latency: Vec<LatencyRow>,
    pub branch: Vec<BranchRow>,
    pub memory: Vec<MemoryRow>,
    pub compliance: Vec<ComplianceRow>,
    pub oracle: Option<OracleSummary>,
}

impl BenchReport {
    pub fn new(spec: Option<SweepSpec>) -> Self {
        Self {
            environment: Environment::capture(),
            spec,
            latency: Vec::new(),
            branch: Vec::new(),
            memory: Vec::new(),
            compliance: Vec::new(),
            oracle: None,
        }
    }

    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string_pretty(self)
    }

    /// One CSV table per non-empty section, each with its own header,
    /// separated by a blank line.
    pub fn write_csv<W: Write>(&self, mut out: W) -> anyhow::Result<()> {
        let mut first = true;
        let mut section = |out: &mut W, header: &[&str], rows: Vec<Vec<String>>| -> anyhow::Result<()> {
            if rows.is_empty() {
                return Ok(());
            }
            if !first {
                writeln!(out)?;
            }
            first = false;
            let mut w = csv::Writer::from_writer(&mut *out);
            w.write_record(header)?;
            for r in rows {
                w.write_record(&r)?;
            }
            w.flush()?;
            Ok(())
        };
        let s = |x: &dyn ToString| x.to_string();
        section(
            &mut out,
            &[
                "method", "vocab", "constraints", "sid_length", "dense_depth", "beam", "batch", "trials", "status",
                "mask_mean_ms", "mask_std_ms", "mask_min_ms", "mask_max_ms", "overhead_mean_ms", "overhead_std_ms",
            ],
            self.latency
                .iter()
                .map(|r| {
                    vec![
                        r.method.clone(), s(&r.vocab), s(&r.constraints), s(&r.sid_length), s(&r.dense_depth),
                        s(&r.beam), s(&r.batch), s(&r.trials), r.status.clone(), s(&r.mask_ms.mean),
                        s(&r.mask_ms.std), s(&r.mask_ms.min), s(&r.mask_ms.max), s(&r.overhead_ms.mean),
                        s(&r.overhead_ms.std),
                    ]
                })
                .collect(),
        )?;
        section(
            &mut out,
            &["vocab", "branch_factor", "constraints", "rows", "trials", "vntk_mean_ms", "vntk_std_ms", "vntk_min_ms", "vntk_max_ms"],
            self.branch
                .iter()
                .map(|r| {
                    vec![
                        s(&r.vocab), s(&r.branch_factor), s(&r.constraints), s(&r.rows), s(&r.trials),
                        s(&r.vntk_ms.mean), s(&r.vntk_ms.std), s(&r.vntk_ms.min), s(&r.vntk_ms.max),
                    ]
                })
                .collect(),
        )?;
        section(
            &mut out,
            &[
                "vocab", "constraints", "sid_length", "dense_depth", "mode", "states", "edges", "raw_bytes",
                "model_bytes", "bound_bytes", "layout_bound_bytes", "model_ratio", "raw_ratio", "mb_per_million",
            ],
            self.memory
                .iter()
                .map(|r| {
                    vec![
                        s(&r.vocab), s(&r.constraints), s(&r.sid_length), s(&r.dense_depth), r.mode.clone(),
                        s(&r.states), s(&r.edges), s(&r.raw_bytes), s(&r.model_bytes), s(&r.bound_bytes),
                        s(&r.layout_bound_bytes), s(&r.model_ratio), s(&r.raw_ratio), s(&r.mb_per_million),
                    ]
                })
                .collect(),
        )?;
        section(
            &mut out,
            &["method", "vocab", "sid_length", "dense_depth", "constraints", "beam", "decodes", "emitted", "violations", "violation_rate"],
            self.compliance
                .iter()
                .map(|r| {
                    vec![
                        r.method.clone(), s(&r.vocab), s(&r.sid_length), s(&r.dense_depth), s(&r.constraints),
                        s(&r.beam), s(&r.decodes), s(&r.emitted), s(&r.violations), s(&r.violation_rate),
                    ]
                })
                .collect(),
        )?;
        if let Some(o) = &self.oracle {
            section(
                &mut out,
                &["instances", "skipped", "states_checked", "bits_checked", "topk_instances", "approx_misses", "hash_false_positives", "hash_negatives", "failures"],
                vec![vec![
                    s(&o.instances), s(&o.skipped), s(&o.states_checked), s(&o.bits_checked), s(&o.topk_instances),
                    s(&o.approx_misses), s(&o.hash_false_positives), s(&o.hash_negatives), s(&o.failures.len()),
                ]],
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_statistics() {
        let s = Summary::of(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(s.mean, 2.5);
        assert!((s.std - (5.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert_eq!((s.min, s.max), (1.0, 4.0));
        assert_eq!(Summary::of(&[7.0]).std, 0.0);
    }

    #[test]
    fn slope_of_power_law() {
        let pts: Vec<(f64, f64)> = (1..6).map(|i| (2f64.powi(i), 3.0 * 2f64.powi(i).powf(1.5))).collect();
        assert!((log_log_slope(&pts) - 1.5).abs() < 1e-12);
    }

    #[test]
    fn csv_has_one_header_per_section() {
        let mut r = BenchReport::new(None);
        r.compliance.push(ComplianceRow {
            method: "static".into(),
            vocab: 4,
            sid_length: 2,
            dense_depth: 0,
            constraints: 3,
            beam: 2,
            decodes: 1,
            emitted: 2,
            violations: 0,
            violation_rate: 0.0,
        });
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(text.starts_with("method,vocab"));
    }
}
