use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use sidmask::index::{deserialize, serialize};
use sidmask::workload::gen_constraints_mode;
use sidmask::TransitionIndex;
use sidmask_bench::report::BenchReport;
use sidmask_bench::spec::{Method, SweepSpec, WorkloadMode};
use sidmask_bench::suites::{self, cell_seed, OracleGrid};

#[derive(Parser)]
#[command(name = "sidmask", version, about = "Constrained semantic-id decoding benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a constraint set and write its transition index.
    BuildIndex(Common),
    /// Per-step masking overhead for each method.
    BenchLatency(Common),
    /// Sparse kernel timing with |V| = B at a single level.
    BenchBranch(Common),
    /// Decode repeatedly and count emitted ids outside the set.
    CheckCompliance(Common),
    /// Built footprint against the closed-form bound.
    CheckMemory(Common),
    /// Exhaustive small-grid equivalence against the brute-force oracle.
    VerifyOracle(Common),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Args)]
struct Common {
    #[arg(long, value_delimiter = ',', default_value = "2048")]
    vocab: Vec<usize>,
    #[arg(long, default_value_t = 8)]
    sid_len: usize,
    #[arg(long, default_value_t = 2)]
    dense_depth: usize,
    #[arg(long, value_delimiter = ',', default_value = "100000")]
    constraints: Vec<usize>,
    #[arg(long, default_value_t = 70)]
    beam: usize,
    #[arg(long, default_value_t = 2)]
    batch: usize,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, default_value_t = 3)]
    warmup: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_delimiter = ',', default_value = "static,cpu_trie,ppv_exact,ppv_approx,hash_bitmap")]
    methods: Vec<Method>,
    #[arg(long, default_value = "uniform")]
    mode: WorkloadMode,
    /// Report destination; stdout if omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    /// Index file: written by build-index, read by check-memory.
    #[arg(long)]
    index: Option<PathBuf>,
}

impl Common {
    fn spec(&self) -> SweepSpec {
        SweepSpec {
            methods: self.methods.clone(),
            vocab: self.vocab.clone(),
            constraints: self.constraints.clone(),
            sid_length: self.sid_len,
            dense_depth: self.dense_depth,
            beam: self.beam,
            batch: self.batch,
            trials: self.trials,
            warmup: self.warmup,
            seed: self.seed,
            mode: self.mode,
            ..SweepSpec::default()
        }
    }

    fn emit(&self, report: &BenchReport) -> Result<()> {
        let sink: Box<dyn Write> = match &self.out {
            Some(p) => Box::new(File::create(p).with_context(|| format!("creating {}", p.display()))?),
            None => Box::new(io::stdout().lock()),
        };
        let mut sink = BufWriter::new(sink);
        match self.format {
            Format::Csv => report.write_csv(&mut sink)?,
            Format::Json => writeln!(sink, "{}", report.to_json()?)?,
        }
        sink.flush()?;
        Ok(())
    }
}

enum Outcome {
    Ok,
    Violation(String),
}

fn run(command: Command) -> Result<Outcome> {
    match command {
        Command::BuildIndex(c) => {
            let spec = c.spec();
            let (&v, &n) = (spec.vocab.first().unwrap(), spec.constraints.first().unwrap());
            let config = spec.config(v);
            let set = gen_constraints_mode(cell_seed(spec.seed, v, n), n, &config, spec.mode.into())?;
            let index = TransitionIndex::build(&set, &config)?;
            let path = c.index.clone().context("build-index needs --index <path>")?;
            std::fs::write(&path, serialize(&index)).with_context(|| format!("writing {}", path.display()))?;
            let mut report = BenchReport::new(Some(spec));
            report.memory.push(suites::memory_row(&index, set.len(), mode_name(c.mode))?);
            c.emit(&report)?;
            Ok(Outcome::Ok)
        }
        Command::BenchLatency(c) => {
            c.emit(&suites::run_latency_suite(&c.spec())?)?;
            Ok(Outcome::Ok)
        }
        Command::BenchBranch(c) => {
            c.emit(&suites::run_branch_suite(&c.spec())?)?;
            Ok(Outcome::Ok)
        }
        Command::CheckCompliance(c) => {
            let report = suites::run_compliance_suite(&c.spec())?;
            c.emit(&report)?;
            let bad: Vec<String> = report
                .compliance
                .iter()
                .filter(|r| r.violations > 0 && r.method.parse::<Method>().is_ok_and(Method::is_exact))
                .map(|r| format!("{} emitted {} ids outside the set", r.method, r.violations))
                .collect();
            Ok(if bad.is_empty() { Outcome::Ok } else { Outcome::Violation(bad.join("; ")) })
        }
        Command::CheckMemory(c) => {
            let report = match &c.index {
                Some(path) => {
                    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
                    let index = deserialize(&bytes)?;
                    // The generating set is not stored; the leaf count stands in for |C|.
                    let leaves = *index.level_counts().last().unwrap() as usize;
                    let mut r = BenchReport::new(None);
                    r.memory.push(suites::memory_row(&index, leaves, "file")?);
                    r
                }
                None => suites::run_memory_suite(&c.spec())?,
            };
            c.emit(&report)?;
            let bad: Vec<String> = report
                .memory
                .iter()
                .filter(|r| !r.within_bounds())
                .map(|r| format!("|V|={} |C|={} exceeds its bound", r.vocab, r.constraints))
                .collect();
            Ok(if bad.is_empty() { Outcome::Ok } else { Outcome::Violation(bad.join("; ")) })
        }
        Command::VerifyOracle(c) => {
            let grid = OracleGrid { seeds: c.trials.min(OracleGrid::default().seeds as usize) as u64, ..OracleGrid::default() };
            let summary = suites::run_oracle_suite(&grid);
            let failures = summary.failures.clone();
            let mut report = BenchReport::new(None);
            report.oracle = Some(summary);
            c.emit(&report)?;
            Ok(if failures.is_empty() { Outcome::Ok } else { Outcome::Violation(failures.join("\n")) })
        }
    }
}

fn mode_name(m: WorkloadMode) -> &'static str {
    match m {
        WorkloadMode::Uniform => "uniform",
        WorkloadMode::Clustered => "clustered",
    }
}

fn is_config_error(e: &anyhow::Error) -> bool {
    e.chain().any(|c| {
        c.downcast_ref::<sidmask_bench::spec::SpecError>().is_some()
            || matches!(
                c.downcast_ref::<sidmask::Error>(),
                Some(sidmask::Error::Config(_) | sidmask::Error::TooManyConstraints { .. })
            )
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let spec_check = match &cli.command {
        Command::VerifyOracle(_) | Command::CheckMemory(Common { index: Some(_), .. }) => Ok(()),
        // The branch sweep picks its own id length per B.
        Command::BenchBranch(c) if c.trials == 0 => Err(sidmask_bench::spec::SpecError::Trials),
        Command::BenchBranch(_) => Ok(()),
        Command::BuildIndex(c)
        | Command::BenchLatency(c)
        | Command::CheckCompliance(c)
        | Command::CheckMemory(c) => c.spec().validate(),
    };
    if let Err(e) = spec_check {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    match run(cli.command) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::Violation(msg)) => {
            eprintln!("invariant failure: {msg}");
            ExitCode::from(1)
        }
        Err(e) if is_config_error(&e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
