use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use mesm::baselines::{fit_qlr, fit_qsk, fit_sk};
use mesm::brownresnick::BrownResnickModel;
use mesm::data::{BlockMatrix, DesignMatrix};
use mesm::dependence::{self, BootstrapOptions, DEFAULT_BINS, DEFAULT_THRESHOLDS};
use mesm::error::ErrorKind;
use mesm::gev::BlockMaximaConfig;
use mesm::io;
use mesm::likelihood::{qg_sweep, summarize_sweep, TauFitOptions};
use mesm::metrics::{evaluate_models, EvalOptions, MetricReport, Predictor, TestSet};
use mesm::pipeline::{fit_mesm, grid_scan_points, FitOptions, FittedMesm};
use mesm::rng::derive_seed;
use mesm::space::{CriticalPointSpace, Metric};
use mesm::synth::{gen_simulation_study, gen_synthetic_fuselage, FuselageConfig, SimStudyConfig};
use mesm::MesmError;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

#[derive(Parser, Debug)]
#[command(name = "mesm", version, about = "Multi-output extreme spatial modeling")]
struct Cli {
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Root seed for every random stream.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset.
    #[command(subcommand)]
    Synth(SynthCommand),
    /// Fit the full model and write a model file.
    Fit(FitArgs),
    /// Draw joint block maxima at a control input.
    Sample(SampleArgs),
    /// χ and F-madogram diagnostics from data or a model.
    Dependence(DependenceArgs),
    /// Maximum return level over the critical points at many control inputs.
    ReturnLevel(ReturnLevelArgs),
    /// Sweep q_G over replications of the simulation study.
    Simstudy(SimstudyArgs),
    /// Compare the model with baselines on a test dataset.
    Evaluate(EvaluateArgs),
}

#[derive(Subcommand, Debug)]
enum SynthCommand {
    /// Brown-Resnick draws at uniform points in the unit square.
    Simstudy {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 20)]
        points: usize,
        #[arg(long, default_value_t = 20)]
        blocks: usize,
        #[arg(long, default_value = "0.5,0.02")]
        tau: String,
    },
    /// Replicated outputs on a circle of critical points with a known generating law.
    Fuselage {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 30)]
        designs: usize,
        #[arg(long, default_value_t = 500)]
        replicates: usize,
        #[arg(long, default_value_t = 128)]
        points: usize,
        #[arg(long, default_value_t = 20)]
        dim: usize,
        #[arg(long, default_value_t = -200.0, allow_hyphen_values = true)]
        lower: f64,
        #[arg(long, default_value_t = 200.0, allow_hyphen_values = true)]
        upper: f64,
        #[arg(long, default_value_t = 25)]
        block_size: usize,
        #[arg(long, default_value = "6,9")]
        tau: String,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MetricArg {
    Euclidean,
    CircleArc,
}

#[derive(Args, Debug)]
struct DataArgs {
    #[arg(long)]
    designs: PathBuf,
    #[arg(long)]
    observations: PathBuf,
    /// Lower bound of every design coordinate (default: data minimum).
    #[arg(long, allow_hyphen_values = true, requires = "upper")]
    lower: Option<f64>,
    /// Upper bound of every design coordinate (default: data maximum).
    #[arg(long, allow_hyphen_values = true, requires = "lower")]
    upper: Option<f64>,
}

#[derive(Args, Debug)]
struct SpaceArgs {
    /// `point_id,x,y` coordinates.
    #[arg(long)]
    points: Option<PathBuf>,
    /// Square distance matrix; coordinates from --points are attached if given.
    #[arg(long)]
    distance_matrix: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = MetricArg::Euclidean)]
    metric: MetricArg,
}

#[derive(Args, Debug)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    space: SpaceArgs,
    #[arg(long, default_value_t = 25)]
    block_size: usize,
    #[arg(long, default_value_t = 2)]
    order: usize,
    #[arg(long = "qg", default_value_t = 0.02)]
    q_g: f64,
    /// Starting τ for the first restart.
    #[arg(long, default_value = "1,1")]
    tau0: String,
    #[arg(long, default_value_t = 3)]
    restarts: usize,
    /// Design ids held out of the dependence fit.
    #[arg(long, value_delimiter = ',')]
    holdout: Vec<String>,
    #[arg(long, default_value_t = 200)]
    diagnostic_resamples: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SampleArgs {
    #[arg(long)]
    model: PathBuf,
    /// Control input as a comma-separated list.
    #[arg(long, allow_hyphen_values = true)]
    at: String,
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct DependenceArgs {
    /// Wide table of block maxima (`label,<point ids>`).
    #[arg(long, conflicts_with = "model", requires = "points")]
    data: Option<PathBuf>,
    /// Coordinates of the points in --data.
    #[arg(long)]
    points: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = MetricArg::Euclidean)]
    metric: MetricArg,
    /// Model file; diagnostics are computed from model draws at --at.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, allow_hyphen_values = true)]
    at: Option<String>,
    /// Model draws used with --model.
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long)]
    thresholds: Option<String>,
    #[arg(long, default_value_t = DEFAULT_BINS)]
    bins: usize,
    #[arg(long, default_value_t = 500)]
    resamples: usize,
    /// Output directory for madogram.csv and chi.csv.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ScanArg {
    Grid,
    Points,
}

#[derive(Args, Debug)]
struct ReturnLevelArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long = "R", default_value_t = 100)]
    r: u64,
    #[arg(long, value_enum, default_value_t = ScanArg::Points)]
    scan: ScanArg,
    /// Designs file to scan with `--scan points` (default: the training designs).
    #[arg(long)]
    designs: Option<PathBuf>,
    #[arg(long, default_value_t = 21)]
    grid_size: usize,
    /// Two 1-based design coordinates spanned by `--scan grid`.
    #[arg(long, default_value = "1,2")]
    grid_dims: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SimstudyArgs {
    #[arg(long, default_value = "0.2,0.4,0.6,0.8,1.0")]
    qg_list: String,
    #[arg(long, default_value_t = 20)]
    reps: usize,
    #[arg(long, default_value_t = 20)]
    points: usize,
    #[arg(long, default_value_t = 20)]
    blocks: usize,
    #[arg(long, default_value = "0.5,0.02")]
    tau: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    model: PathBuf,
    /// Training data used to fit the baselines.
    #[command(flatten)]
    data: DataArgs,
    /// Directory holding the test designs.csv and observations.csv.
    #[arg(long)]
    test_data: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "qlr,sk,qsk")]
    baselines: Vec<String>,
    #[arg(long, default_value = "0.95")]
    quantiles: String,
    #[arg(long, default_value_t = 50)]
    resamples: usize,
    #[arg(long, default_value_t = 200)]
    bootstrap: usize,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}

/// The error chain joined by `: `, skipping causes already quoted by their parent.
fn describe(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if !out.contains(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
    }
    out
}

/// A model fit that gets past input validation and then fails exits with 2.
fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if let Some(err) = cause.downcast_ref::<MesmError>() {
            if err.stage().is_some_and(|s| s != "validate") {
                return 2;
            }
            return match err.kind() {
                ErrorKind::Numerical => 2,
                ErrorKind::Validation | ErrorKind::Io => 3,
            };
        }
        if cause.is::<std::io::Error>() || cause.is::<serde_json::Error>() {
            return 3;
        }
    }
    1
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            bail!("--threads must be positive");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let seed = cli.seed;
    match cli.command {
        Command::Synth(SynthCommand::Simstudy { out, points, blocks, tau }) => {
            synth_simstudy(&out, points, blocks, list(&tau)?, seed)
        }
        Command::Synth(SynthCommand::Fuselage {
            out,
            designs,
            replicates,
            points,
            dim,
            lower,
            upper,
            block_size,
            tau,
        }) => {
            let cfg = FuselageConfig {
                designs,
                replicates,
                points,
                dim,
                lower,
                upper,
                block_size,
                tau: list(&tau)?,
                seed,
                ..Default::default()
            };
            synth_fuselage(&out, &cfg)
        }
        Command::Fit(a) => fit(a, seed),
        Command::Sample(a) => sample(a, seed),
        Command::Dependence(a) => dependence_cmd(a, seed),
        Command::ReturnLevel(a) => return_level(a),
        Command::Simstudy(a) => simstudy(a, seed),
        Command::Evaluate(a) => evaluate(a, seed),
    }
}

fn list(s: &str) -> Result<Vec<f64>> {
    Ok(io::parse_list(s)?)
}

fn numbered(prefix: &str, n: usize) -> Vec<String> {
    let width = n.saturating_sub(1).to_string().len();
    (0..n).map(|i| format!("{prefix}{i:0width$}")).collect()
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn synth_simstudy(out: &Path, points: usize, blocks: usize, tau: Vec<f64>, seed: u64) -> Result<()> {
    create_dir(out)?;
    let cfg = SimStudyConfig { points, blocks, tau: tau.clone(), seed };
    let (space, maxima) = gen_simulation_study(&cfg)?;
    io::write_points(&out.join("points.csv"), &space)?;
    io::write_samples(&out.join("maxima.csv"), space.ids(), &maxima)?;
    let truth = serde_json::json!({ "tau": tau, "points": points, "blocks": blocks, "seed": seed });
    io::write_json(&out.join("truth.json"), &truth)?;
    Ok(())
}

fn synth_fuselage(out: &Path, cfg: &FuselageConfig) -> Result<()> {
    create_dir(out)?;
    let started = Instant::now();
    let data = gen_synthetic_fuselage(cfg)?;
    eprintln!("generated in {:.2} s", started.elapsed().as_secs_f64());
    let design_ids = numbered("d", data.designs.len());
    io::write_designs(&out.join("designs.csv"), &design_ids, &data.designs)?;
    io::write_observations(&out.join("observations.csv"), &design_ids, data.space.ids(), &data.observations)?;
    io::write_points(&out.join("points.csv"), &data.space)?;
    io::write_json(&out.join("truth.json"), &data.truth)?;
    Ok(())
}

fn metric(m: MetricArg) -> Metric {
    match m {
        MetricArg::Euclidean => Metric::Euclidean,
        MetricArg::CircleArc => Metric::CircleArc,
    }
}

fn load_space(a: &SpaceArgs) -> Result<CriticalPointSpace> {
    Ok(match (&a.distance_matrix, &a.points) {
        (Some(m), coords) => {
            io::read_distance_matrix(m, coords.as_deref()).with_context(|| format!("reading {}", m.display()))?
        }
        (None, Some(p)) => io::read_points(p, metric(a.metric)).with_context(|| format!("reading {}", p.display()))?,
        (None, None) => return Err(MesmError::invalid("either --points or --distance-matrix is required").into()),
    })
}

fn load_data(a: &DataArgs, point_ids: &[String]) -> Result<(io::DesignTable, mesm::data::RawObservations)> {
    let bounds = a.lower.zip(a.upper);
    let table = io::read_designs(&a.designs, bounds).with_context(|| format!("reading {}", a.designs.display()))?;
    let raw = io::read_observations(&a.observations, &table.ids, point_ids)
        .with_context(|| format!("reading {}", a.observations.display()))?;
    Ok((table, raw))
}

fn load_model(path: &Path) -> Result<FittedMesm> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(FittedMesm::from_json(&text)?)
}

fn fit(a: FitArgs, seed: u64) -> Result<()> {
    let space = load_space(&a.space)?;
    let (table, raw) = load_data(&a.data, space.ids())?;
    let holdout = a
        .holdout
        .iter()
        .map(|id| {
            table
                .ids
                .iter()
                .position(|t| t == id)
                .ok_or_else(|| anyhow!(MesmError::invalid(format!("unknown holdout design `{id}`"))))
        })
        .collect::<Result<Vec<_>>>()?;
    let opts = FitOptions {
        block_size: a.block_size,
        order: a.order,
        q_g: a.q_g,
        tau: TauFitOptions {
            tau0: list(&a.tau0)?,
            restarts: a.restarts,
            seed: derive_seed(seed, "fit-tau", 0),
            ..Default::default()
        },
        holdout,
        diagnostic_resamples: a.diagnostic_resamples,
        seed,
    };
    let model = match fit_mesm(&table.designs, &raw, &space, &opts) {
        Ok(m) => m,
        Err(e) => {
            let stage = e.stage().unwrap_or("input");
            return Err(anyhow::Error::new(e).context(format!("fit failed at stage `{stage}`")));
        }
    };
    for t in &model.diagnostics().timings {
        eprintln!("stage {:<20} {:>10.3} s", t.stage, t.seconds);
    }
    let d = model.diagnostics();
    println!("tau = {:?}", model.dependence().tau());
    println!("composite loglik = {}", d.composite_loglik);
    println!(
        "cliques = {} of {} (H = {}, q_G = {})",
        model.graph().cliques.len(),
        model.graph().total,
        model.graph().order,
        model.graph().q_g
    );
    println!(
        "tau fit converged = {}, at bound = {:?}, term evaluations = {}, clamped terms = {}",
        d.tau.converged, d.tau.at_bound, d.tau.term_evaluations, d.tau.clamped_terms
    );
    println!("surfaces converged = {}", d.surfaces_converged);
    if let Some(h) = d.holdout_loglik_per_block {
        println!("holdout loglik per block = {h}");
    }
    fs::write(&a.out, model.to_json()?).with_context(|| format!("writing {}", a.out.display()))?;
    Ok(())
}

fn sample(a: SampleArgs, seed: u64) -> Result<()> {
    let model = load_model(&a.model)?;
    let s = list(&a.at)?;
    let draws = model.sample_extremes(&s, a.n, derive_seed(seed, "cli-sample", 0))?;
    io::write_samples(&a.out, model.space().ids(), &draws)?;
    Ok(())
}

fn dependence_cmd(a: DependenceArgs, seed: u64) -> Result<()> {
    let (space, samples): (CriticalPointSpace, BlockMatrix) = match (&a.data, &a.model) {
        (Some(data), None) => {
            let points = a.points.as_ref().expect("clap enforces --points with --data");
            let space = io::read_points(points, metric(a.metric))?;
            let (ids, samples) = io::read_wide_matrix(data)?;
            if ids != space.ids() {
                return Err(MesmError::invalid("data columns must match the point ids in order").into());
            }
            (space, samples)
        }
        (None, Some(model)) => {
            let model = load_model(model)?;
            let at = a
                .at
                .as_deref()
                .ok_or_else(|| anyhow!(MesmError::invalid("--model needs --at")))?;
            let draws = model.sample_extremes(&list(at)?, a.n, derive_seed(seed, "cli-dependence", 0))?;
            (model.space().clone(), draws)
        }
        _ => return Err(MesmError::invalid("exactly one of --data or --model is required").into()),
    };
    let thresholds = match &a.thresholds {
        Some(t) => list(t)?,
        None => DEFAULT_THRESHOLDS.to_vec(),
    };
    let boot = |tag: &str| BootstrapOptions {
        resamples: a.resamples,
        seed: derive_seed(seed, tag, 0),
        ..Default::default()
    };
    create_dir(&a.out)?;
    let edges = dependence::equal_count_bin_edges(&space, a.bins)?;
    let mado = dependence::f_madogram(&samples, &space, &edges, &boot("cli-madogram"))?;
    io::write_madogram(&a.out.join("madogram.csv"), &mado)?;

    let mut rows = Vec::new();
    for (i, k) in nearest_pairs(&space) {
        let (zi, zk) = (samples.column(i), samples.column(k));
        for &t in &thresholds {
            let e = dependence::chi_empirical(&zi, &zk, t, &boot("cli-chi"))?;
            rows.push((space.ids()[i].clone(), space.ids()[k].clone(), e));
        }
    }
    io::write_chi(&a.out.join("chi.csv"), &rows)?;
    Ok(())
}

/// Each point with its nearest neighbor (ties to the lower index), as unique unordered pairs.
fn nearest_pairs(space: &CriticalPointSpace) -> Vec<(usize, usize)> {
    let mut pairs: Vec<(usize, usize)> = (0..space.len())
        .filter_map(|i| {
            (0..space.len())
                .filter(|&k| k != i)
                .min_by(|&x, &y| space.distance(i, x).total_cmp(&space.distance(i, y)))
                .map(|k| (i.min(k), i.max(k)))
        })
        .collect();
    pairs.sort_unstable();
    pairs.dedup();
    pairs
}

fn return_level(a: ReturnLevelArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let designs = model.marginal().designs();
    let points = match a.scan {
        ScanArg::Points => match &a.designs {
            Some(p) => io::read_designs(p, None)?.designs.rows().to_vec(),
            None => designs.rows().to_vec(),
        },
        ScanArg::Grid => {
            let dims = list(&a.grid_dims)?;
            if dims.len() != 2 || dims.iter().any(|d| *d < 1.0 || d.fract() != 0.0) {
                return Err(MesmError::invalid("--grid-dims needs two 1-based coordinate indices").into());
            }
            grid_scan_points(designs, a.grid_size, (dims[0] as usize - 1, dims[1] as usize - 1))?
        }
    };
    let rows = model.return_level_scan(&points, a.r)?;
    io::write_scan(&a.out, &points, model.space().ids(), &rows)?;
    Ok(())
}

fn simstudy(a: SimstudyArgs, seed: u64) -> Result<()> {
    let tau = list(&a.tau)?;
    let q_list = list(&a.qg_list)?;
    let replications = (0..a.reps)
        .map(|r| {
            gen_simulation_study(&SimStudyConfig {
                points: a.points,
                blocks: a.blocks,
                tau: tau.clone(),
                seed: derive_seed(seed, "simstudy", r as u64),
            })
        })
        .collect::<mesm::Result<Vec<_>>>()?;
    let opts = TauFitOptions {
        seed: derive_seed(seed, "simstudy-fit", 0),
        ..Default::default()
    };
    let truth = BrownResnickModel::new(tau)?;
    let rows = qg_sweep(&replications, &truth, &q_list, &opts)?;
    io::write_sweep(&a.out, &rows)?;
    for s in summarize_sweep(&rows) {
        println!(
            "q_G = {:<5} best = {:.6} median = {:.6} mean = {:.6} term evaluations = {:.1}",
            s.q_g, s.best_score, s.median_score, s.mean_score, s.mean_term_evaluations
        );
        eprintln!("q_G = {:<5} mean seconds = {:.6}", s.q_g, s.mean_seconds);
    }
    Ok(())
}

fn evaluate(a: EvaluateArgs, seed: u64) -> Result<()> {
    let model = load_model(&a.model)?;
    let ids = model.space().ids().to_vec();
    let (train, raw) = load_data(&a.data, &ids)?;
    let bounded = |d: &DesignMatrix| -> mesm::Result<DesignMatrix> {
        let m = model.marginal().designs();
        DesignMatrix::new(d.rows().to_vec(), m.lower().to_vec(), m.upper().to_vec())
    };
    let train_designs = bounded(&train.designs)?;
    let test_table = io::read_designs(&a.test_data.join("designs.csv"), None)?;
    let test_raw = io::read_observations(&a.test_data.join("observations.csv"), &test_table.ids, &ids)?;
    let test_designs = bounded(&test_table.designs)?;
    let extremes = test_raw.block_maxima(BlockMaximaConfig::new(model.block_size())?)?;
    let test = TestSet::new(&test_designs, &extremes)?;

    let quantiles = list(&a.quantiles)?;
    let mut models: Vec<(Box<dyn Predictor>, f64)> = Vec::new();
    for name in &a.baselines {
        let timed = |f: &dyn Fn() -> mesm::Result<Box<dyn Predictor>>| -> Result<(Box<dyn Predictor>, f64)> {
            let started = Instant::now();
            let m = f()?;
            Ok((m, started.elapsed().as_secs_f64()))
        };
        match name.as_str() {
            "sk" => models.push(timed(&|| Ok(Box::new(fit_sk(&train_designs, &raw)?)))?),
            "qsk" => {
                for &q in &quantiles {
                    models.push(timed(&|| Ok(Box::new(fit_qsk(&train_designs, &raw, q)?)))?);
                }
            }
            "qlr" => {
                for &q in &quantiles {
                    models.push(timed(&|| Ok(Box::new(fit_qlr(&train_designs, &raw, q)?)))?);
                }
            }
            other => return Err(MesmError::invalid(format!("unknown baseline `{other}` (expected qlr, sk, qsk)")).into()),
        }
    }
    let mut predictors: Vec<&dyn Predictor> = vec![&model];
    predictors.extend(models.iter().map(|(m, _)| m.as_ref()));
    let opts = EvalOptions {
        resamples: a.resamples,
        bootstrap: a.bootstrap,
        seed: derive_seed(seed, "cli-evaluate", 0),
    };
    let mut reports: Vec<MetricReport> = evaluate_models(&predictors, &test, &opts)?;
    for (r, (_, secs)) in reports.iter_mut().skip(1).zip(&models) {
        r.train_seconds = *secs;
    }
    for r in &reports {
        let wd = r.wd.as_ref().map(|w| format!("{:.4} ({:.4})", w.mean, w.sd)).unwrap_or_else(|| "-".into());
        println!("{:<5} {:<14} WD {:<20} PMD {:.4} ({:.4})", r.model, r.parameter, wd, r.pmd.mean, r.pmd.sd);
    }
    io::write_report(&a.out, &reports)?;
    Ok(())
}
