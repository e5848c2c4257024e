use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use ssamp::harness::{
    emit, make_instance, run_convergence_with, run_phase_grid_with, run_runtime_with, solve_instance, write_table,
    ExperimentConfig, Format, SolverKind,
};
use ssamp::operators::{write_dense, OperatorKind};
use ssamp::signals::{nmse_db, write_signal};
use ssamp::tvamp::LambdaScaling;
use ssamp::{Error, Result};

#[derive(Parser)]
#[command(name = "ssamp-harness", version, about = "AMP recovery of piecewise-constant signals: experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a single instance and write the estimate next to the truth.
    Solve {
        #[command(flatten)]
        common: Common,
        /// Also write the ground-truth signal, one value per line.
        #[arg(long)]
        dump_signal: Option<PathBuf>,
        /// Also write the dense sensing matrix.
        #[arg(long)]
        dump_matrix: Option<PathBuf>,
    },
    /// Phase-transition grid.
    Pt(Common),
    /// Per-iteration NMSE traces without early stopping.
    Convergence(Common),
    /// Wall-clock time to reach the success NMSE.
    Bench(Common),
}

#[derive(Clone, Copy, ValueEnum)]
enum SolverArg {
    SsampOracle,
    SsampEm,
    Tvamp,
}

#[derive(Clone, Copy, ValueEnum)]
enum MatrixArg {
    IidGaussian,
    SubsampledDct,
    SubsampledWht,
    QuasiToeplitz,
    SparseBernoulli,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

#[derive(Args)]
struct Common {
    /// JSON experiment config; missing fields take their defaults.
    config: PathBuf,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    solver: Option<SolverArg>,
    #[arg(long, value_enum)]
    matrix: Option<MatrixArg>,
    /// Prior jump probability given to the solver.
    #[arg(long)]
    q: Option<f64>,
    #[arg(long)]
    sigma0: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    /// TVAMP regularization weight; disables any lambda grid.
    #[arg(long)]
    lambda: Option<f64>,
    /// Scale the TVAMP weight by the residual noise level each iteration.
    #[arg(long)]
    noise_scaled_lambda: bool,
    /// Damping factor in (0, 1].
    #[arg(long)]
    beta: Option<f64>,
    /// Shorthand for `--solver ssamp-em`.
    #[arg(long)]
    em: bool,
    /// Record wall-clock time in the phase table.
    #[arg(long)]
    timing: bool,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    format: FormatArg,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut c = ExperimentConfig::from_json_file(&self.config)?;
        if let Some(n) = self.n {
            c.n = n;
        }
        if let Some(s) = self.seed {
            c.seed_base = s;
        }
        if let Some(s) = self.solver {
            c.solver = match s {
                SolverArg::SsampOracle => SolverKind::SsampOracle,
                SolverArg::SsampEm => SolverKind::SsampEm,
                SolverArg::Tvamp => SolverKind::Tvamp,
            };
        }
        if self.em {
            c.solver = SolverKind::SsampEm;
        }
        if let Some(m) = self.matrix {
            c.matrix.kind = match m {
                MatrixArg::IidGaussian => OperatorKind::IidGaussian,
                MatrixArg::SubsampledDct => OperatorKind::SubsampledDct,
                MatrixArg::SubsampledWht => OperatorKind::SubsampledWht,
                MatrixArg::QuasiToeplitz => OperatorKind::QuasiToeplitz,
                MatrixArg::SparseBernoulli => OperatorKind::SparseBernoulli,
            };
        }
        if self.q.is_some() {
            c.prior_q = self.q;
        }
        if let Some(s) = self.sigma0 {
            c.sigma0 = s;
        }
        if let Some(d) = self.delta {
            c.delta = d;
        }
        if let Some(l) = self.lambda {
            c.lambda = l;
            c.lambda_grid.clear();
        }
        if self.noise_scaled_lambda {
            c.lambda_scaling = LambdaScaling::NoiseScaled;
        }
        if self.beta.is_some() {
            c.solver_config.damping_beta = self.beta;
        }
        if self.timing {
            c.record_timing = true;
        }
        c.validate()?;
        Ok(c)
    }

    fn format(&self) -> Format {
        match self.format {
            FormatArg::Csv => Format::Csv,
            FormatArg::Json => Format::Json,
        }
    }

    fn out_path(&self, stem: &str) -> PathBuf {
        let ext = match self.format {
            FormatArg::Csv => "csv",
            FormatArg::Json => "json",
        };
        self.out.clone().unwrap_or_else(|| PathBuf::from(format!("{stem}.{ext}")))
    }
}

fn progress(label: &'static str) -> impl Fn(usize, usize) + Sync {
    move |done, total| {
        if done == total || done % 50 == 0 {
            eprintln!("[{label}] {done}/{total} trials");
        }
    }
}

/// `out.csv` -> `out_3.csv` for the i-th of several cases.
fn numbered(path: &Path, i: usize) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    let name = match path.extension().and_then(|e| e.to_str()) {
        Some(ext) => format!("{stem}_{i}.{ext}"),
        None => format!("{stem}_{i}"),
    };
    path.with_file_name(name)
}

#[derive(serde::Serialize)]
struct SolveRow {
    index: usize,
    truth: f64,
    estimate: f64,
}

impl ssamp::harness::Tabular for SolveRow {
    const HEADER: &'static [&'static str] = &["index", "truth", "estimate"];
    fn record(&self) -> Vec<String> {
        vec![self.index.to_string(), ssamp::harness::fmt_real(self.truth), ssamp::harness::fmt_real(self.estimate)]
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Solve { common, dump_signal, dump_matrix } => {
            let c = common.load()?;
            let (mn, km) = match (c.m_over_n.first(), c.k_over_m.first()) {
                (Some(&a), Some(&b)) => (a, b),
                _ => return Err(Error::Config("solve needs one m_over_n and one k_over_m value".into())),
            };
            let (m, k) = c
                .cell_dims(mn, km)
                .ok_or_else(|| Error::Config(format!("infeasible case m/n={mn}, k/m={km}")))?;
            let inst = make_instance(&c, m, k, c.trial_seed(mn, km, 0))?;
            let report = solve_instance(&c, &inst, c.lambda, None, false)?;
            eprintln!(
                "[solve] N={} M={m} K={} iters={} converged={} nmse_db={:.3}",
                c.n,
                inst.k,
                report.iters_run,
                report.converged,
                nmse_db(&inst.x, &report.estimate)?
            );
            let rows: Vec<SolveRow> = inst
                .x
                .iter()
                .zip(&report.estimate)
                .enumerate()
                .map(|(index, (&truth, &estimate))| SolveRow { index, truth, estimate })
                .collect();
            emit(&rows, common.format(), &common.out_path("solve"))?;
            if let Some(p) = dump_signal {
                let mut w = BufWriter::new(File::create(p)?);
                write_signal(&inst.x, &mut w)?;
                w.flush()?;
            }
            if let Some(p) = dump_matrix {
                let mut w = BufWriter::new(File::create(p)?);
                write_dense(inst.op.as_ref(), &mut w)?;
                w.flush()?;
            }
        }
        Command::Pt(common) => {
            let c = common.load()?;
            let table = run_phase_grid_with(&c, &progress("pt"))?;
            emit(&table, common.format(), &common.out_path("pt"))?;
        }
        Command::Convergence(common) => {
            let c = common.load()?;
            let tables = run_convergence_with(&c, &progress("convergence"))?;
            let out = common.out_path("convergence");
            for (i, t) in tables.iter().enumerate() {
                let path = if tables.len() == 1 { out.clone() } else { numbered(&out, i) };
                emit(&t.rows, common.format(), &path)?;
                match t.mean_iters_to_target() {
                    Some(it) => eprintln!("[convergence] m/n={} k/m={}: mean iterations to target {it:.2}", t.m_over_n, t.k_over_m),
                    None => eprintln!("[convergence] m/n={} k/m={}: target not reached in every trial", t.m_over_n, t.k_over_m),
                }
            }
        }
        Command::Bench(common) => {
            let c = common.load()?;
            let rows = run_runtime_with(&c, &progress("bench"))?;
            emit(&rows, common.format(), &common.out_path("bench"))?;
            write_table(&rows, Format::Csv, std::io::stderr())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
