//! The `margins` command line: `fit`, `margins`, `summarize`, `synth`.
//!
//! Exit codes: 0 when every requested output was written, 2 for usage
//! errors (bad flags, unparsable formulas or grids), 1 for everything else.

pub mod plot;
pub mod table;

use std::ffi::OsString;
use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use margins_core::dataset::{infer_schema, load_csv, Dataset, Kind};
use margins_core::formula::{build_design, parse_formula, DesignOptions, ModelSpec, Term, TermMap};
use margins_core::logit::{fit_design, fit_stats};
use margins_core::margins::{self as mg, BootstrapOptions, Grid, MarginKind};
use margins_core::model_file::ModelFile;
use margins_core::synth::{self, Coefficients, SynthConfig};
use margins_core::{Fit, FitOptions, MarginRequest, MarginRow};

use crate::plot::PlotSpec;

#[derive(Debug, Parser)]
#[command(name = "margins", version, about = "Logistic regression with adjusted predictions and marginal effects")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a logistic regression and write the model as JSON.
    Fit(FitArgs),
    /// Adjusted predictions and marginal effects from a fitted model.
    Margins(MarginsArgs),
    /// Descriptive statistics of a CSV file.
    Summarize(SummarizeArgs),
    /// Generate a synthetic publication corpus.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Formula, e.g. `top10 ~ C(univ) + jif + jif^2`.
    #[arg(long)]
    pub model: String,
    #[arg(long, default_value = "model.json")]
    pub out: PathBuf,
    /// Reference level of a factor, `VAR=LEVEL`; repeatable.
    #[arg(long = "ref", value_name = "VAR=LEVEL")]
    pub references: Vec<String>,
    /// Drop rows at a factor level, `VAR=LEVEL`; repeatable.
    #[arg(long, value_name = "VAR=LEVEL")]
    pub exclude: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Vce {
    Delta,
    Bootstrap,
}

#[derive(Debug, Args)]
pub struct MarginsArgs {
    /// Model JSON written by `fit`.
    #[arg(long, default_value = "model.json")]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Average adjusted predictions of a variable. For a factor the
    /// contrasts against its reference level follow.
    #[arg(long, value_name = "VAR")]
    pub aap: Option<String>,
    /// Average marginal effects, `VAR` or `FACTOR,BASE`.
    #[arg(long, value_name = "VAR[,BASE]")]
    pub ame: Option<String>,
    /// Grid for a continuous variable: `VAR=lo:hi:step` or `VAR=v1,v2,...`.
    #[arg(long, value_name = "VAR=GRID")]
    pub at: Option<String>,
    /// Curves per level of a factor over the `--at` grid, `FACTOR[,BASE]`.
    #[arg(long, value_name = "FACTOR[,BASE]")]
    pub over: Option<String>,
    /// Evaluate at the sample means instead of averaging over rows.
    #[arg(long)]
    pub atmeans: bool,
    /// With `--over`: contrasts between levels instead of predictions.
    #[arg(long)]
    pub dydx: bool,
    #[arg(long, value_enum, default_value_t = Vce::Delta)]
    pub vce: Vce,
    #[arg(long, default_value_t = 500)]
    pub reps: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.95)]
    pub ci: f64,
    /// SVG figure; the plotted numbers also go to `<file>.csv`.
    #[arg(long)]
    pub plot: Option<PathBuf>,
    /// Margin rows as TSV with 17 significant digits.
    #[arg(long)]
    pub table: Option<PathBuf>,
    #[arg(long, value_name = "VAR=LEVEL")]
    pub exclude: Vec<String>,
}

#[derive(Debug, Args)]
pub struct SummarizeArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_name = "VAR=LEVEL")]
    pub exclude: Vec<String>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Coefficient JSON (`formula` plus `coefficients` by column name).
    /// The bundled Model 3 coefficients are used when omitted, or when the
    /// name `table2_model3.json` does not exist on disk.
    #[arg(long)]
    pub coeffs: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Make the JIF mean depend on the university.
    #[arg(long)]
    pub jif_shift: bool,
}

/// A mistake in how the program was invoked, reported with exit code 2.
#[derive(Debug)]
pub struct Usage(pub String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

/// Runs the program with real stdout/stderr and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let stdout = io::stdout();
    let stderr = io::stderr();
    run_with(args, &mut stdout.lock(), &mut stderr.lock())
}

pub fn run_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            // --help and --version arrive here too
            if e.use_stderr() {
                let _ = write!(err, "{}", e.render());
                return 2;
            }
            let _ = write!(out, "{}", e.render());
            return 0;
        }
    };
    if let Err(e) = init_threads() {
        let _ = writeln!(err, "error: {e}");
        return 2;
    }
    match dispatch(cli.command, out, err) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e:#}");
            if e.is::<Usage>() {
                2
            } else {
                1
            }
        }
    }
}

/// Caps the global rayon pool at `MARGINS_THREADS` when set.
fn init_threads() -> Result<()> {
    let Ok(v) = std::env::var("MARGINS_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| usage(format!("MARGINS_THREADS must be a positive integer, got `{v}`")))?;
    // a pool built earlier in the same process keeps its size
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

fn dispatch(cmd: Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    match cmd {
        Command::Fit(a) => cmd_fit(&a, out, err),
        Command::Margins(a) => cmd_margins(&a, out, err),
        Command::Summarize(a) => cmd_summarize(&a, out),
        Command::Synth(a) => cmd_synth(&a, out),
    }
}

fn split_pair(s: &str, flag: &str) -> Result<(String, String)> {
    match s.split_once('=') {
        Some((a, b)) if !a.trim().is_empty() && !b.trim().is_empty() => {
            Ok((bare(a.trim()).to_string(), b.trim().to_string()))
        }
        _ => Err(usage(format!("{flag} expects VAR=VALUE, got `{s}`"))),
    }
}

/// `C(univ)` → `univ`.
fn bare(v: &str) -> &str {
    let v = v.trim();
    v.strip_prefix("C(")
        .and_then(|r| r.strip_suffix(')'))
        .map(str::trim)
        .unwrap_or(v)
}

/// Reads the CSV columns in `vars`, factors as categorical, with listwise
/// deletion on those columns and the requested level exclusions.
fn load_for(path: &Path, vars: &[String], factors: &[String], exclude: &[String], err: &mut dyn Write) -> Result<Dataset> {
    let excl: Vec<(String, String)> = exclude.iter().map(|e| split_pair(e, "--exclude")).collect::<Result<_>>()?;
    let schema = infer_schema(path)?;
    let mut wanted: Vec<String> = vars.to_vec();
    for (v, _) in &excl {
        if !wanted.contains(v) {
            wanted.push(v.clone());
        }
    }
    let mut fields = Vec::new();
    for v in &wanted {
        let mut f = schema
            .iter()
            .find(|f| &f.name == v)
            .cloned()
            .ok_or_else(|| anyhow!("column `{v}` not found in {}", path.display()))?;
        if factors.contains(v) || excl.iter().any(|(e, _)| e == v) {
            f.kind = Kind::Categorical(None);
        }
        fields.push(f);
    }
    let loaded = load_csv(path, &fields)?;
    if loaded.dropped > 0 {
        writeln!(err, "note: dropped {} rows with missing values", loaded.dropped)?;
    }
    let mut ds = loaded.dataset;
    for (v, l) in &excl {
        ds = ds.exclude_level(v, l)?;
    }
    Ok(ds)
}

fn spec_columns(spec: &ModelSpec) -> (Vec<String>, Vec<String>) {
    let mut vars = vec![spec.response.clone()];
    vars.extend(spec.variables().into_iter().map(String::from));
    let factors = spec
        .terms
        .iter()
        .filter_map(|t| match t {
            Term::Factor(v) => Some(v.clone()),
            _ => None,
        })
        .collect();
    (vars, factors)
}

fn parse_model(text: &str) -> Result<ModelSpec> {
    parse_formula(text).map_err(|e| match e.caret(text) {
        Some(c) => usage(format!("invalid formula\n{c}")),
        None => usage(format!("invalid formula: {e}")),
    })
}

fn cmd_fit(a: &FitArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let spec = parse_model(&a.model)?;
    let (vars, factors) = spec_columns(&spec);
    let ds = load_for(&a.data, &vars, &factors, &a.exclude, err)?;
    let mut opts = DesignOptions::default();
    for r in &a.references {
        let (v, l) = split_pair(r, "--ref")?;
        if !factors.contains(&v) {
            return Err(usage(format!("--ref {r}: `{v}` is not a C() factor in the formula")));
        }
        opts = opts.with_reference(v, l);
    }
    let (design, map) = build_design::<f64>(&ds, &spec, &opts)?;
    let fr = fit_design(&design, &map, &FitOptions::default())?;
    let st = fit_stats(&fr)?;
    let file = ModelFile::from_fit(&spec.to_string(), &fr);
    fs::write(&a.out, file.to_string()).with_context(|| format!("writing {}", a.out.display()))?;
    let title = format!("Logistic regression of {} (converged in {} iterations)", spec.response, fr.iterations);
    write!(out, "{}", table::coefficient_table(&title, &st, fr.n))?;
    writeln!(out, "model written to {}", a.out.display())?;
    Ok(())
}

/// `lo:hi:step` (both ends included when the step divides the span) or a
/// comma-separated list.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let num = |t: &str| -> Result<f64> {
        let v: f64 = t.trim().parse().map_err(|_| usage(format!("`{t}` is not a number in grid `{spec}`")))?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(usage(format!("grid `{spec}` has a non-finite value")))
        }
    };
    let parts: Vec<&str> = spec.split(':').collect();
    let values = match parts.as_slice() {
        [lo, hi, step] => {
            let (lo, hi, step) = (num(lo)?, num(hi)?, num(step)?);
            if step <= 0.0 || hi < lo {
                return Err(usage(format!("grid `{spec}` needs lo <= hi and a positive step")));
            }
            let count = ((hi - lo) / step + 1e-9).floor() as usize + 1;
            if count > 100_000 {
                return Err(usage(format!("grid `{spec}` has more than 100000 points")));
            }
            (0..count).map(|i| lo + i as f64 * step).collect()
        }
        [list] => list.split(',').map(num).collect::<Result<Vec<_>>>()?,
        _ => return Err(usage(format!("grid `{spec}` must be lo:hi:step or a comma list"))),
    };
    if values.windows(2).any(|w| w[1] <= w[0]) {
        return Err(usage(format!("grid `{spec}` must be strictly ascending")));
    }
    Ok(values)
}

/// One block of output: a request and what to call it.
struct Job {
    req: MarginRequest,
    title: String,
}

fn describe(kind: MarginKind) -> &'static str {
    match kind {
        MarginKind::Aap => "Average Adjusted Predictions",
        MarginKind::Ame => "Average Marginal Effects",
        MarginKind::Apm => "Adjusted Predictions at Means",
        MarginKind::Mem => "Marginal Effects at Means",
        MarginKind::Aprv => "Adjusted Predictions at Representative Values",
        MarginKind::Merv => "Marginal Effects at Representative Values",
    }
}

fn ci_pct(level: f64) -> String {
    let p = level * 100.0;
    if (p - p.round()).abs() < 1e-9 {
        format!("{}%", p.round())
    } else {
        format!("{p}%")
    }
}

fn title_for(kind: MarginKind, var: &str, at: Option<&str>, level: f64) -> String {
    match at {
        Some(a) if a != var => format!("{} & {} Confidence Intervals for {var} and {a}", describe(kind), ci_pct(level)),
        _ => format!("{} & {} Confidence Intervals for {var}", describe(kind), ci_pct(level)),
    }
}

fn plan_jobs(a: &MarginsArgs, map: &TermMap) -> Result<Vec<Job>> {
    let at = match &a.at {
        Some(s) => {
            let (v, g) = split_pair(s, "--at")?;
            Some((v, parse_grid(&g)?))
        }
        None => None,
    };
    let picked = [a.aap.is_some(), a.ame.is_some(), a.over.is_some()].iter().filter(|b| **b).count();
    if picked == 0 {
        return Err(usage("nothing requested: give one of --aap, --ame or --over"));
    }
    if picked > 1 {
        return Err(usage("--aap, --ame and --over are mutually exclusive"));
    }
    if a.dydx && a.over.is_none() {
        return Err(usage("--dydx applies to --over; use --ame for marginal effects"));
    }
    if a.atmeans && a.over.is_some() {
        return Err(usage("--atmeans cannot be combined with --over"));
    }
    if !(a.ci > 0.0 && a.ci < 1.0) {
        return Err(usage(format!("--ci must lie in (0, 1), got {}", a.ci)));
    }
    let with_at = |mut req: MarginRequest| {
        if let Some((v, g)) = &at {
            req = req.at(v.clone(), Grid::Values(g.clone()));
        }
        req.ci_level(a.ci)
    };
    let at_name = at.as_ref().map(|(v, _)| v.as_str());
    let (pred, eff) = if a.atmeans {
        (MarginKind::Apm, MarginKind::Mem)
    } else {
        (MarginKind::Aap, MarginKind::Ame)
    };
    let mut jobs = Vec::new();
    if let Some(o) = &a.over {
        let (f, base) = match o.split_once(',') {
            Some((f, b)) => (bare(f).to_string(), Some(b.trim().to_string())),
            None => (bare(o).to_string(), None),
        };
        if !map.is_factor(&f) {
            return Err(usage(format!("--over {o}: `{f}` is not a factor in the model")));
        }
        let Some((v, _)) = &at else {
            return Err(usage("--over needs a grid, e.g. --at jif=0:13:0.5"));
        };
        if !map.is_continuous(v) {
            return Err(usage(format!("--at {v}: not a continuous variable in the model")));
        }
        let kind = if a.dydx { MarginKind::Merv } else { MarginKind::Aprv };
        if base.is_some() && !a.dydx {
            return Err(usage("a base level in --over only applies with --dydx"));
        }
        let mut req = with_at(MarginRequest::new(kind, f.clone()));
        if let Some(b) = base {
            req = req.base(b);
        }
        jobs.push(Job {
            title: title_for(kind, &f, at_name, a.ci),
            req,
        });
    } else if let Some(v) = &a.aap {
        let v = bare(v).to_string();
        jobs.push(Job {
            title: title_for(pred, &v, at_name, a.ci),
            req: with_at(MarginRequest::new(pred, v.clone())),
        });
        if map.is_factor(&v) {
            jobs.push(Job {
                title: title_for(eff, &v, at_name, a.ci),
                req: with_at(MarginRequest::new(eff, v.clone())),
            });
        }
    } else if let Some(s) = &a.ame {
        let (v, base) = match s.split_once(',') {
            Some((v, b)) => (bare(v).to_string(), Some(b.trim().to_string())),
            None => (bare(s).to_string(), None),
        };
        let mut req = with_at(MarginRequest::new(eff, v.clone()));
        if let Some(b) = base {
            if !map.is_factor(&v) {
                return Err(usage(format!("--ame {s}: a base level needs a factor")));
            }
            req = req.base(b);
        }
        jobs.push(Job {
            title: title_for(eff, &v, at_name, a.ci),
            req,
        });
    }
    Ok(jobs)
}

fn load_model(path: &Path) -> Result<Fit> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mf = ModelFile::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    Ok(mf.into_fit()?)
}

fn cmd_margins(a: &MarginsArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    if a.vce == Vce::Bootstrap && a.reps < 100 {
        return Err(usage(format!("--reps must be at least 100 for bootstrap, got {}", a.reps)));
    }
    let fr = load_model(&a.model)?;
    let map = fr.term_map.clone();
    let jobs = plan_jobs(a, &map)?;

    let mut vars = vec![map.response.clone()];
    let factors: Vec<String> = map.factors.iter().map(|f| f.variable.clone()).collect();
    for c in &map.columns {
        if let Some(s) = &c.source {
            if !vars.contains(s) {
                vars.push(s.clone());
            }
        }
    }
    let ds = load_for(&a.data, &vars, &factors, &a.exclude, err)?;
    let design = map.encode::<f64>(&ds)?;
    let zc = mg::z_critical(a.ci)?;

    let mut blocks: Vec<(String, Vec<MarginRow>)> = Vec::new();
    for job in &jobs {
        let mut rows = mg::compute(&fr, &design.x, &job.req)?;
        let mut title = job.title.clone();
        if a.vce == Vce::Bootstrap {
            let b = mg::bootstrap_se(
                &design,
                &map,
                &job.req,
                &BootstrapOptions {
                    reps: a.reps,
                    seed: a.seed,
                    fit: FitOptions::default(),
                },
            )?;
            rows = rows.iter().zip(&b.se).map(|(r, se)| r.with_se(*se, zc)).collect();
            title.push_str(&format!(" (bootstrap SEs, {} replicates, {} failed)", b.reps, b.failures));
        }
        blocks.push((title, rows));
    }

    let extrapolated: Vec<f64> = blocks
        .iter()
        .flat_map(|(_, r)| r.iter())
        .filter(|r| r.extrapolated)
        .filter_map(|r| r.at_value)
        .fold(Vec::new(), |mut acc, v| {
            if !acc.contains(&v) {
                acc.push(v);
            }
            acc
        });
    if let Some(first) = extrapolated.first() {
        let var = jobs[0].req.at.as_ref().map(|(v, _)| v.as_str()).unwrap_or("the grid variable");
        writeln!(
            err,
            "warning: {} grid value(s) of {var} lie outside the observed range (first: {first}); those estimates are extrapolations",
            extrapolated.len()
        )?;
    }

    let pct = ci_pct(a.ci);
    for (i, (title, rows)) in blocks.iter().enumerate() {
        if i > 0 {
            writeln!(out)?;
        }
        write!(out, "{}", table::margin_table(title, rows, &pct))?;
    }

    if let Some(path) = &a.table {
        let all: Vec<MarginRow> = blocks.iter().flat_map(|(_, r)| r.iter().cloned()).collect();
        let mut buf = Vec::new();
        mg::write_tsv(&all, &mut buf)?;
        fs::write(path, buf).with_context(|| format!("writing {}", path.display()))?;
    }
    if let Some(path) = &a.plot {
        let job = &jobs[0];
        let (title, rows) = &blocks[0];
        let title = title.split(" (bootstrap").next().unwrap_or(title);
        let x_label = job
            .req
            .at
            .as_ref()
            .map(|(v, _)| v.clone())
            .ok_or_else(|| usage("--plot needs a grid (--at)"))?;
        let y_label = if matches!(job.req.kind, MarginKind::Aap | MarginKind::Apm | MarginKind::Aprv) {
            format!("Pr({})", map.response)
        } else {
            format!("Effects on Pr({})", map.response)
        };
        let mut spec = PlotSpec::from_rows(rows, title, &x_label, &y_label)?;
        if y_label.starts_with("Pr(") {
            spec.y_range = Some((0.0, 1.0));
        }
        fs::write(path, spec.render_svg()).with_context(|| format!("writing {}", path.display()))?;
        let mut csv_path = path.as_os_str().to_owned();
        csv_path.push(".csv");
        let csv_path = PathBuf::from(csv_path);
        fs::write(&csv_path, spec.companion_csv()).with_context(|| format!("writing {}", csv_path.display()))?;
    }
    Ok(())
}

fn cmd_summarize(a: &SummarizeArgs, out: &mut dyn Write) -> Result<()> {
    let schema = infer_schema(&a.data)?;
    let vars: Vec<String> = schema.iter().map(|f| f.name.clone()).collect();
    let ds = load_for(&a.data, &vars, &[], &a.exclude, &mut io::sink())?;
    write!(out, "{}", ds.summarize()?)?;
    Ok(())
}

const BUNDLED: &str = "table2_model3.json";

fn cmd_synth(a: &SynthArgs, out: &mut dyn Write) -> Result<()> {
    let mut cfg = SynthConfig::table1_model3(a.n, a.seed);
    if let Some(path) = &a.coeffs {
        let coefs = match fs::read_to_string(path) {
            Ok(text) => Coefficients::from_json(&text)?,
            Err(e) if e.kind() == io::ErrorKind::NotFound && path.file_name().is_some_and(|n| n == BUNDLED) => {
                Coefficients::table2_model3()
            }
            Err(e) => return Err(anyhow!(e).context(format!("reading {}", path.display()))),
        };
        cfg = cfg.with_coefficients(coefs);
    }
    if a.jif_shift {
        cfg = cfg.with_jif_shift();
    }
    let ds = synth::generate(&cfg)?;
    let mut buf = Vec::new();
    ds.write_csv(&mut buf)?;
    fs::write(&a.out, buf).with_context(|| format!("writing {}", a.out.display()))?;
    writeln!(out, "wrote {} rows to {}", ds.n_rows(), a.out.display())?;
    Ok(())
}
