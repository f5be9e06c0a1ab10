//! Batch command line: simulate, fit, cv, diagnose, decode and score.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::cv::{make_plan, select_lambda, DEFAULT_CALIBRATION_FRACTION, DEFAULT_PARTITIONS};
use crate::diagnostics::{decode_volatility, jarque_bera, ks_normal_test, oos_score, pseudo_residuals, qq_points};
use crate::error::{Result, SvError};
use crate::estimation::{fit, natural_values, FitConfig, FitResult};
use crate::models::{ModelKind, ModelParams};
use crate::series::{ingest_prices, split_series, Boundary, ReturnSeries};
use crate::simulation::{simulate, SimModel, SimSpec, RNG_ALGORITHM};

pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "svsp", version, about = "Semiparametric stochastic volatility models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// JSON run configuration; flags take precedence over it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Output directory (created if absent).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// Raise log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a return series (series.csv).
    Simulate(SimulateArgs),
    /// Fit a model (fit.json, density.csv).
    Fit(FitArgs),
    /// Choose lambda by cross-validation (cv.json, cv_scores.csv).
    Cv(CvArgs),
    /// Forecast pseudo-residuals and normality tests (residuals.csv, qq.csv, diagnostics.json).
    Diagnose(FittedArgs),
    /// Viterbi-decoded volatility (decoded.csv).
    Decode(FittedArgs),
    /// Out-of-sample log-likelihood scores (scores.json).
    Score(ScoreArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Simulation design 1 or 2.
    #[arg(long)]
    pub design: Option<u8>,
    /// Series length.
    #[arg(long = "t")]
    pub length: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub burn_in: Option<usize>,
    #[arg(long)]
    pub stream: Option<u64>,
}

#[derive(Debug, Args, Default)]
pub struct ModelArgs {
    /// sv0, svt or svsp.
    #[arg(long)]
    pub model: Option<String>,
    /// Smoothing parameter.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// K; the spline basis has 2K + 1 densities.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub degree: Option<usize>,
    #[arg(long)]
    pub penalty_order: Option<usize>,
    #[arg(long)]
    pub knot_scale: Option<f64>,
    /// Number of grid cells.
    #[arg(long)]
    pub m: Option<usize>,
    /// Grid range: lower upper.
    #[arg(long, num_args = 2, value_names = ["LOWER", "UPPER"], allow_negative_numbers = true)]
    pub range: Option<Vec<f64>>,
    /// Number of optimizer starts.
    #[arg(long)]
    pub starts: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// CSV with a price or return column.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Fit on observations before this index or ISO date only.
    #[arg(long)]
    pub split: Option<String>,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Args)]
pub struct CvArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub split: Option<String>,
    #[arg(long)]
    pub partitions: Option<usize>,
    #[arg(long)]
    pub calib_frac: Option<f64>,
    /// `a..bxr` (geometric, ratio r) or a comma list.
    #[arg(long)]
    pub lambda_grid: Option<String>,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Args)]
pub struct FittedArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// fit.json written by `fit`; defaults to `<out>/fit.json`.
    #[arg(long)]
    pub fit: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// One or more fit.json files; defaults to `<out>/fit.json`.
    #[arg(long, num_args = 1..)]
    pub fit: Vec<PathBuf>,
    /// First out-of-sample index or ISO date.
    #[arg(long)]
    pub split: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvSettings {
    pub partitions: usize,
    pub calibration_fraction: f64,
    pub lambda_grid: Vec<f64>,
}

impl Default for CvSettings {
    fn default() -> Self {
        Self {
            partitions: DEFAULT_PARTITIONS,
            calibration_fraction: DEFAULT_CALIBRATION_FRACTION,
            lambda_grid: crate::cv::lambda_powers(8, 13),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSettings {
    pub model: SimModel,
    pub length: usize,
    pub burn_in: usize,
    pub stream: u64,
}

impl Default for SimSettings {
    fn default() -> Self {
        Self {
            model: SimModel::Design1,
            length: 4000,
            burn_in: 0,
            stream: 0,
        }
    }
}

/// Everything a run needs; read from `--config` and then overridden by flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelKind,
    pub data: Option<PathBuf>,
    pub fit_files: Vec<PathBuf>,
    pub split: Option<String>,
    pub seed: u64,
    pub fit: FitConfig,
    pub cv: CvSettings,
    pub simulate: SimSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::SvSp,
            data: None,
            fit_files: Vec::new(),
            split: None,
            seed: 0,
            fit: FitConfig::default(),
            cv: CvSettings::default(),
            simulate: SimSettings::default(),
        }
    }
}

fn usage(msg: impl Into<String>) -> SvError {
    SvError::Usage(msg.into())
}

/// `256..8192x2` or `1,10,100`.
pub fn parse_lambda_grid(s: &str) -> Result<Vec<f64>> {
    let bad = || usage(format!("cannot read lambda grid '{s}'; use a..bxr or a comma list"));
    let num = |t: &str| t.trim().parse::<f64>().map_err(|_| bad());
    let grid = if let Some((a, rest)) = s.split_once("..") {
        let (b, r) = rest.split_once('x').ok_or_else(bad)?;
        let (a, b, r) = (num(a)?, num(b)?, num(r)?);
        if !(a > 0.0 && b >= a && r > 1.0 && b.is_finite()) {
            return Err(bad());
        }
        let mut v = vec![a];
        while let Some(&last) = v.last() {
            let next = last * r;
            if next > b * (1.0 + 1e-12) {
                break;
            }
            v.push(next);
        }
        v
    } else {
        s.split(',').map(num).collect::<Result<Vec<_>>>()?
    };
    if grid.is_empty() || grid.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
        return Err(bad());
    }
    Ok(grid)
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        None => Ok(RunConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| usage(format!("cannot read config {}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| usage(format!("config {}: {e}", p.display())))
        }
    }
}

fn apply_model_args(cfg: &mut RunConfig, a: &ModelArgs) -> Result<()> {
    if let Some(m) = &a.model {
        cfg.model = m.parse()?;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if cfg.model != ModelKind::SvSp {
        let spline_flags = [
            a.lambda.map(|_| "--lambda"),
            a.k.map(|_| "--k"),
            a.degree.map(|_| "--degree"),
            a.penalty_order.map(|_| "--penalty-order"),
            a.knot_scale.map(|_| "--knot-scale"),
        ];
        if let Some(flag) = spline_flags.iter().flatten().next() {
            return Err(usage(format!("{flag} only applies to --model svsp, not {}", cfg.model)));
        }
    }
    let f = &mut cfg.fit;
    if let Some(l) = a.lambda {
        f.penalty.lambda = l;
    }
    if let Some(o) = a.penalty_order {
        f.penalty.order = o;
    }
    if let Some(k) = a.k {
        f.basis.half_count = k;
    }
    if let Some(d) = a.degree {
        f.basis.degree = d;
    }
    if a.knot_scale.is_some() {
        f.basis.scale = a.knot_scale;
    }
    if let Some(m) = a.m {
        f.grid.m = m;
    }
    if let Some(r) = &a.range {
        f.grid.lower = r[0];
        f.grid.upper = r[1];
    }
    if let Some(n) = a.starts {
        f.starts = crate::estimation::Starts::Count(n);
    }
    Ok(())
}

fn finish_config(cfg: &mut RunConfig) -> Result<()> {
    cfg.fit.seed = cfg.seed;
    cfg.fit.validate(cfg.model).map_err(|e| usage(e.to_string()))?;
    cfg.fit.grid.build().map_err(|e| usage(e.to_string()))?;
    Ok(())
}

fn load_series(cfg: &RunConfig) -> Result<ReturnSeries> {
    let path = cfg.data.as_ref().ok_or_else(|| usage("--data is required"))?;
    let ingested = ingest_prices(path)?;
    if !ingested.malformed_lines.is_empty() {
        eprintln!(
            "warning: {} unparseable value(s) treated as missing",
            ingested.malformed_lines.len()
        );
    }
    Ok(ingested.series)
}

fn boundary(cfg: &RunConfig) -> Result<Option<Boundary>> {
    cfg.split.as_deref().map(str::parse).transpose()
}

fn in_sample(series: &ReturnSeries, cfg: &RunConfig) -> Result<Vec<Option<f64>>> {
    Ok(match boundary(cfg)? {
        Some(b) => split_series(series, b)?.0.values.to_vec(),
        None => series.values.clone(),
    })
}

fn read_fit(path: &Path) -> Result<FitResult> {
    let text = fs::read_to_string(path).map_err(|e| SvError::Data(format!("cannot read {}: {e}", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn write_rows<const N: usize>(path: &Path, header: [&str; N], rows: impl IntoIterator<Item = [String; N]>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush()?;
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Six significant digits, for the terminal summary.
pub fn sig6(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return x.to_string();
    }
    let exp = x.abs().log10().floor() as i32;
    if (-4..6).contains(&exp) {
        format!("{:.*}", (5 - exp).max(0) as usize, x)
    } else {
        format!("{x:.5e}")
    }
}

fn density_rows(params: &ModelParams) -> Vec<[String; 2]> {
    let (lo, hi) = match params {
        ModelParams::SvSp { density, .. } => density.basis().support(),
        ModelParams::Sv0 { beta, .. } => (-8.0 * beta, 8.0 * beta),
        ModelParams::SvT { beta, nu, .. } => {
            let w = 8.0 * beta * (nu / (nu - 2.0)).sqrt();
            (-w, w)
        }
    };
    let n = 501;
    (0..n)
        .map(|i| {
            let x = lo + (hi - lo) * i as f64 / (n - 1) as f64;
            [x.to_string(), params.conditional_density(x, 0.0).to_string()]
        })
        .collect()
}

struct Run {
    out: PathBuf,
    outputs: Vec<String>,
}

impl Run {
    fn path(&mut self, name: &str) -> PathBuf {
        self.outputs.push(name.to_string());
        self.out.join(name)
    }
}

fn cmd_simulate(cfg: &RunConfig, run: &mut Run) -> Result<()> {
    let s = &cfg.simulate;
    let sim = simulate(&SimSpec {
        model: s.model.clone(),
        length: s.length,
        burn_in: s.burn_in,
        seed: cfg.seed,
        stream: s.stream,
    })?;
    let rows = sim
        .returns
        .iter()
        .zip(&sim.log_vol)
        .enumerate()
        .map(|(t, (y, g))| [(t + 1).to_string(), y.to_string(), g.to_string()]);
    write_rows(&run.path("series.csv"), ["t", "return", "log_vol"], rows)?;
    let sd = {
        let n = sim.returns.len() as f64;
        let mean = sim.returns.iter().sum::<f64>() / n;
        (sim.returns.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n).sqrt()
    };
    println!("simulated {} returns (seed {}, stream {}), sd {}", sim.returns.len(), cfg.seed, s.stream, sig6(sd));
    Ok(())
}

fn cmd_fit(cfg: &RunConfig, run: &mut Run) -> Result<()> {
    let series = load_series(cfg)?;
    let obs = in_sample(&series, cfg)?;
    let result = fit(&obs, cfg.model, &cfg.fit)?;
    write_json(&run.path("fit.json"), &result)?;
    write_rows(&run.path("density.csv"), ["x", "f_eps_hat"], density_rows(&result.params))?;
    println!(
        "{} fit on {} observations: log-lik {}, penalized {}, converged {}",
        result.model,
        result.n_observed,
        sig6(result.log_lik),
        sig6(result.penalized_log_lik),
        result.converged
    );
    for (name, v) in natural_values(&result.params) {
        let se = result
            .standard_errors
            .as_ref()
            .and_then(|m| m.get(name))
            .map(|s| format!(" (se {})", sig6(*s)))
            .unwrap_or_default();
        println!("  {name:<6} {}{se}", sig6(v));
    }
    if result.sigma_at_floor {
        println!("  note: sigma sits at the grid resolution floor");
    }
    Ok(())
}

fn cmd_cv(cfg: &RunConfig, run: &mut Run) -> Result<()> {
    if cfg.model != ModelKind::SvSp {
        return Err(usage(format!("cross-validation selects lambda and needs --model svsp, not {}", cfg.model)));
    }
    let series = load_series(cfg)?;
    let obs = in_sample(&series, cfg)?;
    let plan = make_plan(obs.len(), cfg.cv.partitions, cfg.cv.calibration_fraction, &cfg.cv.lambda_grid, cfg.seed)?;
    let report = select_lambda(&obs, cfg.model, &plan, &cfg.fit)?;
    write_json(&run.path("cv.json"), &json!({ "report": report, "plan": plan }))?;
    report.write_csv(fs::File::create(run.path("cv_scores.csv"))?)?;
    println!("lambda   mean score   excluded");
    for ((l, m), e) in report.lambda_grid.iter().zip(&report.mean_scores).zip(&report.excluded) {
        println!("{:<8} {:<12} {e}", sig6(*l), m.map_or("-".into(), sig6));
    }
    println!("selected lambda {}", sig6(report.selected_lambda));
    Ok(())
}

fn fitted_inputs(cfg: &RunConfig, run: &Run) -> Result<(ReturnSeries, Vec<FitResult>)> {
    let series = load_series(cfg)?;
    let files = if cfg.fit_files.is_empty() {
        vec![run.out.join("fit.json")]
    } else {
        cfg.fit_files.clone()
    };
    let fits = files.iter().map(|p| read_fit(p)).collect::<Result<Vec<_>>>()?;
    Ok((series, fits))
}

fn cmd_diagnose(cfg: &RunConfig, run: &mut Run) -> Result<()> {
    let (series, fits) = fitted_inputs(cfg, run)?;
    let f = &fits[0];
    let res = pseudo_residuals(&f.discrete_model()?, &f.params, &series.values)?;
    let rows = res
        .predictive_cdf
        .iter()
        .zip(&res.values)
        .enumerate()
        .map(|(t, (u, r))| [(t + 1).to_string(), opt(*u), opt(*r)]);
    write_rows(&run.path("residuals.csv"), ["t", "cdf", "residual"], rows)?;
    let observed = res.observed();
    let qq = qq_points(&observed).into_iter().map(|(a, b)| [a.to_string(), b.to_string()]);
    write_rows(&run.path("qq.csv"), ["theoretical", "sample"], qq)?;
    let jb = jarque_bera(&observed).ok();
    let ks = ks_normal_test(&observed).ok();
    write_json(
        &run.path("diagnostics.json"),
        &json!({
            "model": f.model,
            "n_residuals": observed.len(),
            "clamped": res.clamped.iter().map(|t| t + 1).collect::<Vec<_>>(),
            "jarque_bera": jb,
            "kolmogorov_smirnov": ks,
        }),
    )?;
    println!("{} residuals: {}", f.model, observed.len());
    if let Some(jb) = jb {
        println!("  Jarque-Bera {} (p {})", sig6(jb.statistic), sig6(jb.p_value));
    }
    if let Some(ks) = ks {
        println!("  KS {} (p {})", sig6(ks.statistic), sig6(ks.p_value));
    }
    Ok(())
}

fn cmd_decode(cfg: &RunConfig, run: &mut Run) -> Result<()> {
    let (series, fits) = fitted_inputs(cfg, run)?;
    let f = &fits[0];
    let d = decode_volatility(&f.discrete_model()?, &f.params, &series.values)?;
    let rows = (0..d.states.len()).map(|t| {
        [
            (t + 1).to_string(),
            (d.states[t] + 1).to_string(),
            d.log_vol[t].to_string(),
            d.volatility[t].to_string(),
        ]
    });
    write_rows(&run.path("decoded.csv"), ["t", "state", "g_hat", "vol_hat"], rows)?;
    let mean = d.volatility.iter().sum::<f64>() / d.volatility.len() as f64;
    println!("decoded {} steps, mean exp(g/2) {}", d.states.len(), sig6(mean));
    Ok(())
}

fn cmd_score(cfg: &RunConfig, run: &mut Run) -> Result<()> {
    let (series, fits) = fitted_inputs(cfg, run)?;
    let b = boundary(cfg)?.ok_or_else(|| usage("score needs --split"))?;
    let (head, _) = split_series(&series, b)?;
    let at = head.len();
    let reports = fits
        .iter()
        .map(|f| oos_score(&f.discrete_model()?, &f.params, &series.values, at))
        .collect::<Result<Vec<_>>>()?;
    write_json(&run.path("scores.json"), &reports)?;
    println!("model  out-of-sample log-lik  n");
    for r in &reports {
        println!("{:<6} {:<22} {}", r.model, sig6(r.out_of_sample_log_lik), r.out_of_sample_observed);
    }
    Ok(())
}

fn resolve(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = load_config(cli.config.as_deref())?;
    match &cli.command {
        Command::Simulate(a) => {
            if let Some(d) = a.design {
                cfg.simulate.model = match d {
                    1 => SimModel::Design1,
                    2 => SimModel::Design2,
                    _ => return Err(usage(format!("--design must be 1 or 2, got {d}"))),
                };
            }
            if let Some(t) = a.length {
                cfg.simulate.length = t;
            }
            if let Some(b) = a.burn_in {
                cfg.simulate.burn_in = b;
            }
            if let Some(s) = a.stream {
                cfg.simulate.stream = s;
            }
            if let Some(s) = a.seed {
                cfg.seed = s;
            }
            if cfg.simulate.length == 0 {
                return Err(usage("--t must be positive"));
            }
            return Ok(cfg);
        }
        Command::Fit(a) => {
            cfg.data = a.data.clone().or(cfg.data);
            cfg.split = a.split.clone().or(cfg.split);
            apply_model_args(&mut cfg, &a.model)?;
        }
        Command::Cv(a) => {
            cfg.data = a.data.clone().or(cfg.data);
            cfg.split = a.split.clone().or(cfg.split);
            apply_model_args(&mut cfg, &a.model)?;
            if let Some(p) = a.partitions {
                cfg.cv.partitions = p;
            }
            if let Some(f) = a.calib_frac {
                cfg.cv.calibration_fraction = f;
            }
            if let Some(g) = &a.lambda_grid {
                cfg.cv.lambda_grid = parse_lambda_grid(g)?;
            }
            if cfg.cv.partitions == 0 || !(cfg.cv.calibration_fraction > 0.0 && cfg.cv.calibration_fraction < 1.0) {
                return Err(usage("need --partitions >= 1 and 0 < --calib-frac < 1"));
            }
        }
        Command::Diagnose(a) | Command::Decode(a) => {
            cfg.data = a.data.clone().or(cfg.data);
            if let Some(f) = &a.fit {
                cfg.fit_files = vec![f.clone()];
            }
            return Ok(cfg);
        }
        Command::Score(a) => {
            cfg.data = a.data.clone().or(cfg.data);
            cfg.split = a.split.clone().or(cfg.split);
            if !a.fit.is_empty() {
                cfg.fit_files = a.fit.clone();
            }
            boundary(&cfg)?;
            return Ok(cfg);
        }
    }
    boundary(&cfg)?;
    finish_config(&mut cfg)?;
    Ok(cfg)
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Simulate(_) => "simulate",
        Command::Fit(_) => "fit",
        Command::Cv(_) => "cv",
        Command::Diagnose(_) => "diagnose",
        Command::Decode(_) => "decode",
        Command::Score(_) => "score",
    }
}

/// Records each command's resolved configuration under its name in `manifest.json`,
/// keeping entries left by other commands in the same directory.
fn write_manifest(out: &Path, name: &str, argv: &[String], cfg: &RunConfig, outputs: &[String]) -> Result<()> {
    let path = out.join("manifest.json");
    let mut root: Value = fs::read_to_string(&path)
        .ok()
        .and_then(|t| serde_json::from_str(&t).ok())
        .filter(Value::is_object)
        .unwrap_or_else(|| json!({}));
    let entry = json!({
        "argv": argv,
        "config": cfg,
        "seed": cfg.seed,
        "rng_algorithm": RNG_ALGORITHM,
        "version": env!("CARGO_PKG_VERSION"),
        "outputs": outputs,
    });
    root["runs"] = root.get("runs").cloned().filter(Value::is_object).unwrap_or_else(|| json!({}));
    root["runs"][name] = entry;
    write_json(&path, &root)
}

fn execute(cli: &Cli, argv: &[String]) -> Result<()> {
    let cfg = resolve(cli)?;
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&out)?;
    let mut run = Run { out, outputs: Vec::new() };
    match &cli.command {
        Command::Simulate(_) => cmd_simulate(&cfg, &mut run)?,
        Command::Fit(_) => cmd_fit(&cfg, &mut run)?,
        Command::Cv(_) => cmd_cv(&cfg, &mut run)?,
        Command::Diagnose(_) => cmd_diagnose(&cfg, &mut run)?,
        Command::Decode(_) => cmd_decode(&cfg, &mut run)?,
        Command::Score(_) => cmd_score(&cfg, &mut run)?,
    }
    write_manifest(&run.out, command_name(&cli.command), argv, &cfg, &run.outputs)
}

fn report_error(kind: &str, message: &str) {
    eprintln!("{}", json!({ "error": { "kind": kind, "message": message } }));
}

/// Parses `argv` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            report_error("usage", e.to_string().trim());
            return EXIT_USAGE;
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    let text: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    match execute(&cli, &text) {
        Ok(()) => 0,
        Err(e) => {
            report_error(e.kind(), &e.to_string());
            if matches!(e, SvError::Usage(_)) {
                EXIT_USAGE
            } else {
                EXIT_RUNTIME
            }
        }
    }
}
