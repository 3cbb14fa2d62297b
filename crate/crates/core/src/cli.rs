//! The `kingman` command line.
//!
//! Tables go out as CSV (LF line endings, a header row, numbers in decimal
//! with 12 significant digits); nested summaries go out as JSON. Every
//! random subcommand requires `--seed`.

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::coupling::{coupled_length_gap, run_coupled_region, RegionConfig};
use crate::error::{invalid, Error, Result};
use crate::harness::{self, ExperimentConfig, Mode};
use crate::moments::{asymptotic_mean_w, mean_w, second_moment_w, to_f64};
use crate::numeric::SampleMoments;
use crate::rng::{run_replicates, stream, SimRng};
use crate::sfs::{self, MutationConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_UNSUPPORTED: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "kingman", version, about = "Order-r branch lengths of the Kingman coalescent")]
pub struct Cli {
    /// Worker threads for replicate loops.
    #[arg(long, global = true, env = "COALESCENT_WORKERS")]
    pub workers: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Raw and smoothed order lengths, one row per replicate.
    Simulate(SimulateArgs),
    /// Scatter data of the order-1 and order-2 lengths.
    Figure2(Figure2Args),
    /// One trajectory of branch counts by level, with their expectations.
    Figure3(Figure3Args),
    /// Exact moments of W_k(r).
    Moments(MomentsArgs),
    /// Per-level diagnostics of the internal/external coupling.
    Couple(CoupleArgs),
    /// Site frequency spectrum counts, one row per replicate.
    Sfs(SfsArgs),
    /// Normal-limit summary of the rescaled order lengths (JSON).
    Clt(CltArgs),
    /// Simulated against exact means of W_k(r).
    Regress(RegressArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GeneratorMode {
    Tree,
    Chain,
}

impl From<GeneratorMode> for Mode {
    fn from(m: GeneratorMode) -> Self {
        match m {
            GeneratorMode::Tree => Mode::Tree,
            GeneratorMode::Chain => Mode::Chain,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Args)]
pub struct Output {
    /// Output file; standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 2)]
    pub s: usize,
    #[arg(long, default_value_t = 1)]
    pub reps: u64,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = GeneratorMode::Tree)]
    pub mode: GeneratorMode,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Debug, Args)]
pub struct Figure2Args {
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    #[arg(long, default_value_t = 1000)]
    pub reps: u64,
    #[arg(long)]
    pub seed: u64,
    /// Where to write the JSON summary of the sample means; standard error
    /// when omitted.
    #[arg(long)]
    pub summary: Option<PathBuf>,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Debug, Args)]
pub struct Figure3Args {
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    /// Orders to track, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "1,2")]
    pub orders: Vec<usize>,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = GeneratorMode::Tree)]
    pub mode: GeneratorMode,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Debug, Args)]
pub struct MomentsArgs {
    #[arg(long)]
    pub n: usize,
    /// Level; every level from n down to 1 when omitted.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub r: usize,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Debug, Args)]
pub struct CoupleArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 2)]
    pub s: usize,
    #[arg(long, default_value_t = 1000)]
    pub reps: u64,
    #[arg(long)]
    pub seed: u64,
    /// Upper level of the coupled region (default ⌊n/ln² n⌋).
    #[arg(long)]
    pub a: Option<usize>,
    /// Lower level of the coupled region (default ⌈√n⌉).
    #[arg(long)]
    pub b: Option<usize>,
    /// Also run the full-depth length-gap experiment and write it here as JSON.
    #[arg(long)]
    pub gap_out: Option<PathBuf>,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Debug, Args)]
pub struct SfsArgs {
    /// Mutation rate ν per unit branch length (θ = 2ν).
    #[arg(long)]
    pub rate: f64,
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 3)]
    pub s: usize,
    #[arg(long, default_value_t = 1)]
    pub reps: u64,
    #[arg(long)]
    pub seed: u64,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Debug, Args)]
pub struct CltArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 3)]
    pub s: usize,
    #[arg(long)]
    pub reps: u64,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = GeneratorMode::Tree)]
    pub mode: GeneratorMode,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Debug, Args)]
pub struct RegressArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 3)]
    pub s: usize,
    #[arg(long)]
    pub reps: u64,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = GeneratorMode::Chain)]
    pub mode: GeneratorMode,
    #[command(flatten)]
    pub output: Output,
}

/// Decimal with 12 significant digits, trailing zeros removed.
pub fn fmt_num(x: f64) -> String {
    if !x.is_finite() {
        return if x.is_nan() { "NaN".into() } else if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let magnitude = x.abs().log10().floor() as i32;
    let decimals = (11 - magnitude).max(0) as usize;
    let mut s = if magnitude >= 12 {
        let p = 10f64.powi(magnitude - 11);
        format!("{:.0}", (x / p).round() * p)
    } else {
        format!("{x:.decimals$}")
    };
    if s.contains('.') {
        s.truncate(s.trim_end_matches('0').trim_end_matches('.').len());
    }
    if s == "-0" {
        s = "0".into();
    }
    s
}

fn open<'a>(out: &Option<PathBuf>, stdout: &'a mut dyn Write) -> Result<Box<dyn Write + 'a>> {
    Ok(match out {
        Some(path) => Box::new(BufWriter::new(File::create(path)?)),
        None => Box::new(stdout),
    })
}

fn csv_writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w)
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(e) => Error::Io(e),
        other => Error::Io(io::Error::other(format!("{other:?}"))),
    }
}

fn write_rows(w: &mut dyn Write, header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut csv = csv_writer(w);
    csv.write_record(header).map_err(csv_err)?;
    for row in rows {
        csv.write_record(&row).map_err(csv_err)?;
    }
    csv.flush()?;
    Ok(())
}

fn write_json<T: Serialize>(w: &mut dyn Write, value: &T) -> Result<()> {
    serde_json::to_writer_pretty(&mut *w, value).map_err(|e| Error::Io(io::Error::other(e)))?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn numbered(prefix: &str, s: usize) -> impl Iterator<Item = String> + '_ {
    (1..=s).map(move |r| format!("{prefix}{r}"))
}

/// Parses `args` (including the program name) and runs the subcommand.
/// Returns the process exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() { stderr.write_all(text.as_bytes()) } else { stdout.write_all(text.as_bytes()) };
            return code;
        }
    };
    match dispatch(cli, stdout, stderr) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidArgument(_) => EXIT_USAGE,
        Error::UnsupportedRegime(_) => EXIT_UNSUPPORTED,
        Error::ResourceLimit(_) | Error::Io(_) => EXIT_IO,
    }
}

fn dispatch(cli: Cli, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<i32> {
    let workers = cli.workers;
    if workers == Some(0) {
        return Err(invalid!("--workers must be at least 1"));
    }
    match cli.command {
        Command::Simulate(a) => simulate(a, workers, stdout),
        Command::Figure2(a) => figure2(a, workers, stdout, stderr),
        Command::Figure3(a) => figure3(a, stdout),
        Command::Moments(a) => moments(a, stdout, stderr),
        Command::Couple(a) => couple(a, workers, stdout),
        Command::Sfs(a) => sfs_cmd(a, workers, stdout, stderr),
        Command::Clt(a) => clt(a, workers, stdout),
        Command::Regress(a) => regress(a, workers, stdout),
    }
}

#[derive(Serialize)]
struct SimulatedRow {
    replicate_id: u64,
    raw: Vec<f64>,
    smoothed: Vec<f64>,
}

fn simulate(a: SimulateArgs, workers: Option<usize>, stdout: &mut dyn Write) -> Result<i32> {
    let config = ExperimentConfig::new(a.n, a.s, a.reps, a.seed)?;
    let mode: Mode = a.mode.into();
    let rows = run_replicates(config.replicates, config.master_seed, workers, |_, rng: &mut SimRng| {
        harness::sample_lengths(mode, a.n, a.s, rng)
    })?;
    let mut w = open(&a.output.out, stdout)?;
    match a.format {
        Format::Csv => {
            let header: Vec<String> = std::iter::once("replicate_id".to_string())
                .chain(numbered("L_", a.s))
                .chain(numbered("Lsm_", a.s))
                .collect();
            write_rows(
                &mut w,
                &header,
                rows.iter().enumerate().map(|(i, l)| {
                    std::iter::once(i.to_string())
                        .chain(l.raw.iter().map(|&x| fmt_num(x)))
                        .chain(l.smoothed.iter().map(|&x| fmt_num(x)))
                        .collect()
                }),
            )?;
        }
        Format::Json => {
            let rows: Vec<SimulatedRow> = rows
                .into_iter()
                .enumerate()
                .map(|(i, l)| SimulatedRow { replicate_id: i as u64, raw: l.raw, smoothed: l.smoothed })
                .collect();
            write_json(&mut w, &rows)?;
        }
    }
    Ok(EXIT_OK)
}

/// Sample means of the figure-2 scatter with their standard errors.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Figure2Summary {
    pub n: usize,
    pub replicates: u64,
    pub mean: [f64; 2],
    pub se: [f64; 2],
    pub target: [f64; 2],
    pub correlation: Option<f64>,
}

fn figure2(a: Figure2Args, workers: Option<usize>, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<i32> {
    ExperimentConfig::new(a.n, 2, a.reps, a.seed)?;
    let rows = run_replicates(a.reps, a.seed, workers, |_, rng: &mut SimRng| {
        Ok(harness::sample_lengths(Mode::Tree, a.n, 2, rng)?.raw)
    })?;
    let mut w = open(&a.output.out, stdout)?;
    write_rows(
        &mut w,
        &["replicate_id".into(), "L1".into(), "L2".into()],
        rows.iter().enumerate().map(|(i, l)| vec![i.to_string(), fmt_num(l[0]), fmt_num(l[1])]),
    )?;
    drop(w);
    let m = SampleMoments::from_rows(&rows);
    let summary = Figure2Summary {
        n: a.n,
        replicates: a.reps,
        mean: [m.mean[0], m.mean[1]],
        se: [m.se_mean(0).unwrap_or(f64::NAN), m.se_mean(1).unwrap_or(f64::NAN)],
        target: [2.0, 1.0],
        correlation: m.correlation(0, 1),
    };
    match &a.summary {
        Some(path) => write_json(&mut File::create(path)?, &summary)?,
        None => write_json(stderr, &summary)?,
    }
    Ok(EXIT_OK)
}

fn figure3(a: Figure3Args, stdout: &mut dyn Write) -> Result<i32> {
    if a.orders.is_empty() || a.orders.contains(&0) {
        return Err(invalid!("--orders needs positive orders"));
    }
    let s = *a.orders.iter().max().expect("non-empty");
    if a.n < 2 || s >= a.n {
        return Err(invalid!("orders must be below n = {}", a.n));
    }
    let path = harness::sample_counts(a.mode.into(), a.n, s, &mut stream(a.seed, 0))?;
    let header: Vec<String> = std::iter::once("k".to_string())
        .chain(a.orders.iter().map(|r| format!("W{r}")))
        .chain(a.orders.iter().map(|r| format!("EW{r}")))
        .collect();
    let mut rows = Vec::with_capacity(a.n);
    for (k, w) in path.levels() {
        let mut row = vec![k.to_string()];
        row.extend(a.orders.iter().map(|&r| w[r - 1].to_string()));
        for &r in &a.orders {
            row.push(fmt_num(to_f64(&mean_w(a.n, k, r)?)));
        }
        rows.push(row);
    }
    let mut w = open(&a.output.out, stdout)?;
    write_rows(&mut w, &header, rows)?;
    Ok(EXIT_OK)
}

fn ratio_cells(x: &num_rational::BigRational) -> [String; 3] {
    [x.numer().to_string(), x.denom().to_string(), fmt_num(to_f64(x))]
}

fn moments(a: MomentsArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<i32> {
    let levels: Vec<usize> = match a.k {
        Some(k) => vec![k],
        None => (1..=a.n).rev().collect(),
    };
    let header: Vec<String> = [
        "n", "k", "r", "mean_num", "mean_den", "mean", "second_moment_num", "second_moment_den", "second_moment",
        "variance_num", "variance_den", "variance", "asymptotic_mean",
    ]
    .map(String::from)
    .to_vec();
    let mut rows = Vec::with_capacity(levels.len());
    let mut unsupported = None;
    for k in levels {
        let mean = mean_w(a.n, k, a.r)?;
        let mut row = vec![a.n.to_string(), k.to_string(), a.r.to_string()];
        row.extend(ratio_cells(&mean));
        match second_moment_w(a.n, k, a.r) {
            Ok(m2) => {
                let var = &m2 - &mean * &mean;
                row.extend(ratio_cells(&m2));
                row.extend(ratio_cells(&var));
            }
            Err(Error::UnsupportedRegime(msg)) => {
                row.extend(std::iter::repeat_n(String::new(), 6));
                unsupported = Some(msg);
            }
            Err(e) => return Err(e),
        }
        row.push(asymptotic_mean_w(a.n, k, a.r).map(fmt_num).unwrap_or_default());
        rows.push(row);
    }
    let mut w = open(&a.output.out, stdout)?;
    write_rows(&mut w, &header, rows)?;
    if let Some(msg) = unsupported {
        writeln!(stderr, "unsupported regime: {msg}; second moment and variance left empty")?;
        return Ok(EXIT_UNSUPPORTED);
    }
    Ok(EXIT_OK)
}

fn couple(a: CoupleArgs, workers: Option<usize>, stdout: &mut dyn Write) -> Result<i32> {
    let (da, db) = RegionConfig::default_bounds(a.n);
    let region = RegionConfig::new(a.n, a.a.unwrap_or(da), a.b.unwrap_or(db)).map_err(|e| match (e, a.a, a.b) {
        (Error::InvalidArgument(msg), None, _) | (Error::InvalidArgument(msg), _, None) => {
            invalid!("{msg}; pass --a and --b explicitly for this n")
        }
        (e, ..) => e,
    })?;
    let summary = run_coupled_region(a.n, region, a.s, a.reps, a.seed, workers)?;
    let header = ["k", "r", "mismatch_rate", "mean_abs_diff", "var_diff", "lemma2_bound_shape", "lemma3_bound_shape"]
        .map(String::from)
        .to_vec();
    let rows = summary.diagnostics.rows().into_iter().map(|row| {
        vec![
            row.k.to_string(),
            row.r.to_string(),
            fmt_num(row.mismatch_rate),
            fmt_num(row.mean_abs_diff),
            fmt_num(row.var_diff),
            fmt_num(row.mismatch_shape),
            fmt_num(row.variance_shape),
        ]
    });
    let mut w = open(&a.output.out, stdout)?;
    write_rows(&mut w, &header, rows)?;
    if let Some(path) = &a.gap_out {
        let report = coupled_length_gap(a.n, a.s, a.reps, a.seed, workers)?;
        write_json(&mut BufWriter::new(File::create(path)?), &report)?;
    }
    Ok(EXIT_OK)
}

fn sfs_cmd(a: SfsArgs, workers: Option<usize>, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<i32> {
    let config = MutationConfig::new(a.rate)?;
    let counts = sfs::sample_sfs_replicates(a.n, a.s, config, a.reps, a.seed, workers)?;
    writeln!(
        stderr,
        "mutation rate nu = {} per unit length (theta = 2 nu = {}); Poisson limit means nu*2/r",
        fmt_num(config.rate()),
        fmt_num(config.theta())
    )?;
    let header: Vec<String> = std::iter::once("replicate_id".to_string())
        .chain(numbered("M_", a.s))
        .chain(std::iter::once("S_n".to_string()))
        .collect();
    let mut w = open(&a.output.out, stdout)?;
    write_rows(
        &mut w,
        &header,
        counts.iter().enumerate().map(|(i, c)| {
            std::iter::once(i.to_string())
                .chain(c.m.iter().map(u64::to_string))
                .chain(std::iter::once(c.segregating_sites.to_string()))
                .collect()
        }),
    )?;
    Ok(EXIT_OK)
}

fn clt(a: CltArgs, workers: Option<usize>, stdout: &mut dyn Write) -> Result<i32> {
    let config = ExperimentConfig::new(a.n, a.s, a.reps, a.seed)?.with_mode(a.mode.into()).with_workers(workers);
    let summary = harness::run_clt_experiment(&config)?;
    let mut w = open(&a.output.out, stdout)?;
    write_json(&mut w, &summary)?;
    Ok(EXIT_OK)
}

fn regress(a: RegressArgs, workers: Option<usize>, stdout: &mut dyn Write) -> Result<i32> {
    let config = ExperimentConfig::new(a.n, a.s, a.reps, a.seed)?.with_mode(a.mode.into()).with_workers(workers);
    let reg = harness::moment_regression(&config)?;
    let header = ["k", "r", "empirical_mean", "exact_mean", "empirical_variance", "exact_variance", "z"]
        .map(String::from)
        .to_vec();
    let rows = reg.rows.iter().map(|row| {
        vec![
            row.k.to_string(),
            row.r.to_string(),
            fmt_num(row.empirical_mean),
            fmt_num(row.exact_mean),
            fmt_num(row.empirical_variance),
            row.exact_variance.map(fmt_num).unwrap_or_default(),
            fmt_num(row.z),
        ]
    });
    let mut w = open(&a.output.out, stdout)?;
    write_rows(&mut w, &header, rows)?;
    Ok(EXIT_OK)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn number_formatting() {
        assert_eq!(fmt_num(2.0), "2");
        assert_eq!(fmt_num(0.1 + 0.2), "0.3");
        assert_eq!(fmt_num(2.0 / 3.0), "0.666666666667");
        assert_eq!(fmt_num(-1234.5678901234567), "-1234.56789012");
        assert_eq!(fmt_num(1.5e-7), "0.00000015");
        assert_eq!(fmt_num(123456789012345.0), "123456789012000");
        assert_eq!(fmt_num(0.0), "0");
        assert_eq!(fmt_num(f64::NAN), "NaN");
    }
}
