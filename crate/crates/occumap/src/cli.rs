//! Command-line surface tying the modules into reproducible experiments.
//!
//! Every command reads an optional TOML config (`--config`), writes its
//! artifacts under `--out` together with a `manifest.txt` (config hash,
//! seeds, version, wall time), and exits 0 on success, 2 on validation
//! errors, 3 on runtime errors. Partial outputs are removed on failure.
//! All CSV outputs are byte-deterministic for a fixed config and seed.

use std::cell::RefCell;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};

use crate::baselines::{baseline_decide, interpolate, InterpolationMethod, InterpolatorConfig};
use crate::config::ExperimentConfig;
use crate::dataset::{
    generate_dataset, load_dataset, regenerate_pair, test_split_seed,
    DatasetHeader,
};
use crate::error::{Error, Result};
use crate::grid::OccupancyMap;
use crate::metrics::{pooled_counts, roc_sweep, EvalReport};
use crate::nn::{
    decide, load_checkpoint, meta_for, save_checkpoint, train,
};
use crate::plot::{line_plot, Series};
use crate::sweeps::{sweep_experiment, SweepContext, SweepKind};
use crate::terrain::save_terrain;

#[derive(Parser, Debug)]
#[command(
    name = "occumap",
    version,
    about = "Multi-emitter spectrum occupancy mapping experiments"
)]
struct Cli {
    /// Experiment config (TOML); defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory for artifacts and the manifest.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Override the dataset and training seeds.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Synthesize (or load) terrain and save it as an ASCII grid.
    Terrain,
    /// Generate train and test datasets from the config.
    Dataset,
    /// Train the decision network on a dataset file.
    Train {
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Evaluate a checkpoint on a dataset at the configured theta.
    Eval {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        model: PathBuf,
    },
    /// ROC sweep over detection thresholds.
    Roc {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        model: PathBuf,
    },
    /// Robustness sweep (kind and values from the config).
    Sweep,
    /// Classical interpolation baselines on a dataset.
    Baseline {
        #[arg(long)]
        dataset: PathBuf,
        /// Comma-separated subset of idw,knn,rbf,kriging.
        #[arg(long, default_value = "idw,knn,rbf,kriging")]
        methods: String,
    },
    /// Render a CSV as an SVG line plot.
    Plot {
        #[arg(long)]
        input: PathBuf,
        /// X column name.
        #[arg(long)]
        x: String,
        /// Comma-separated Y column names.
        #[arg(long)]
        y: String,
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long, default_value = "")]
        title: String,
    },
}

/// Tracks files created by a command so they can be removed on failure.
struct OutDir {
    dir: PathBuf,
    created: RefCell<Vec<PathBuf>>,
}

impl OutDir {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(OutDir { dir: dir.to_path_buf(), created: RefCell::new(Vec::new()) })
    }

    fn file(&self, name: &str) -> PathBuf {
        let p = self.dir.join(name);
        self.created.borrow_mut().push(p.clone());
        p
    }

    fn cleanup(&self) {
        for p in self.created.borrow().iter() {
            let _ = fs::remove_file(p);
        }
    }
}

/// Run the CLI with explicit arguments; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // clap handles --help/--version as "errors" with exit code 0.
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    if let Some(jobs) = cli.jobs {
        // First initialization wins; later calls in the same process keep
        // the existing pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global();
    }
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                2
            } else {
                3
            }
        }
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.dataset.seed = seed;
        cfg.train.seed = seed;
    }
    Ok(cfg)
}

fn execute(cli: &Cli) -> Result<()> {
    let started = Instant::now();
    let cfg = load_config(cli)?;
    let out = OutDir::new(&cli.out)?;
    let result = dispatch(cli, &cfg, &out);
    match result {
        Ok(extra_manifest) => {
            let mut manifest = String::new();
            writeln!(manifest, "command={}", command_name(&cli.command)).unwrap();
            writeln!(manifest, "version={}", env!("CARGO_PKG_VERSION")).unwrap();
            writeln!(manifest, "config_hash={}", cfg.hash()?).unwrap();
            writeln!(manifest, "dataset_seed={}", cfg.dataset.seed).unwrap();
            writeln!(manifest, "train_seed={}", cfg.train.seed).unwrap();
            writeln!(manifest, "terrain_seed={}", cfg.terrain.seed).unwrap();
            manifest.push_str(&extra_manifest);
            writeln!(manifest, "wall_ms={}", started.elapsed().as_millis()).unwrap();
            fs::write(out.dir.join("manifest.txt"), manifest)?;
            Ok(())
        }
        Err(e) => {
            out.cleanup();
            Err(e)
        }
    }
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Terrain => "terrain",
        Command::Dataset => "dataset",
        Command::Train { .. } => "train",
        Command::Eval { .. } => "eval",
        Command::Roc { .. } => "roc",
        Command::Sweep => "sweep",
        Command::Baseline { .. } => "baseline",
        Command::Plot { .. } => "plot",
    }
}

fn dispatch(cli: &Cli, cfg: &ExperimentConfig, out: &OutDir) -> Result<String> {
    match &cli.command {
        Command::Terrain => cmd_terrain(cfg, out),
        Command::Dataset => cmd_dataset(cfg, out),
        Command::Train { dataset } => cmd_train(cfg, out, dataset),
        Command::Eval { dataset, model } => cmd_eval(cfg, out, dataset, model),
        Command::Roc { dataset, model } => cmd_roc(cfg, out, dataset, model),
        Command::Sweep => cmd_sweep(cfg, out),
        Command::Baseline { dataset, methods } => cmd_baseline(cfg, out, dataset, methods),
        Command::Plot { input, x, y, output, title } => {
            cmd_plot(out, input, x, y, output.as_deref(), title)
        }
    }
}

fn cmd_terrain(cfg: &ExperimentConfig, out: &OutDir) -> Result<String> {
    let terrain = cfg.terrain.source().resolve()?;
    save_terrain(&terrain, &out.file("terrain.asc"))?;
    println!(
        "terrain {}x{} cells, {} m/cell, relief {:.1} m",
        terrain.width,
        terrain.height,
        terrain.cell_size_m,
        terrain.relief_m()
    );
    Ok(format!("terrain_relief_m={}\n", terrain.relief_m()))
}

fn cmd_dataset(cfg: &ExperimentConfig, out: &OutDir) -> Result<String> {
    let header = DatasetHeader {
        terrain: cfg.terrain.source(),
        propagation: cfg.propagation.clone(),
        dataset: cfg.dataset.clone(),
    };
    let train_stats = generate_dataset(&header, &out.file("train.sdst"))?;

    let mut test_header = header.clone();
    test_header.dataset.seed = test_split_seed(cfg.dataset.seed);
    test_header.dataset.maps_per_count = cfg.effective_test_maps();
    let test_stats = generate_dataset(&test_header, &out.file("test.sdst"))?;

    let mut csv = String::from("split,n_emitters,maps,mean_occupied_fraction\n");
    for (split, stats) in [("train", &train_stats), ("test", &test_stats)] {
        for (&count, &maps) in &stats.per_count {
            writeln!(csv, "{split},{count},{maps},{}", stats.occupancy_by_count[&count]).unwrap();
        }
    }
    fs::write(out.file("dataset_stats.csv"), csv)?;
    println!("train: {} pairs; test: {} pairs", train_stats.total, test_stats.total);
    Ok(format!(
        "train_pairs={}\ntest_pairs={}\ntest_seed={}\n",
        train_stats.total, test_stats.total, test_header.dataset.seed
    ))
}

fn cmd_train(cfg: &ExperimentConfig, out: &OutDir, dataset: &Path) -> Result<String> {
    let (_, pairs) = load_dataset(dataset)?;
    let training: Vec<_> = pairs.iter().map(|p| (p.image.clone(), p.truth.clone())).collect();
    let (net, log) = train::<f32>(&training, &cfg.train)?;
    let config_toml = toml::to_string(&cfg.train)
        .map_err(|e| Error::Config(format!("train config serialize: {e}")))?;
    let meta = meta_for(&net, cfg.train.seed, config_toml);
    save_checkpoint(&net, None, &meta, &out.file("model.snet"))?;

    let mut csv = String::from("epoch,loss,learning_rate\n");
    for (i, (loss, lr)) in log.epoch_losses.iter().zip(&log.learning_rates).enumerate() {
        writeln!(csv, "{},{},{}", i + 1, loss, lr).unwrap();
    }
    fs::write(out.file("train_log.csv"), csv)?;
    let first = log.epoch_losses.first().unwrap();
    let last = log.epoch_losses.last().unwrap();
    println!(
        "trained {} epochs on {} pairs: loss {first:.4} -> {last:.4} ({} params)",
        cfg.train.epochs,
        training.len(),
        net.total_params
    );
    Ok(format!(
        "epochs={}\nfirst_epoch_loss={first}\nfinal_epoch_loss={last}\ntotal_params={}\n",
        cfg.train.epochs, net.total_params
    ))
}

fn eval_report(
    cfg: &ExperimentConfig,
    dataset: &Path,
    model: &Path,
) -> Result<(EvalReport, DatasetHeader)> {
    let (header, pairs) = load_dataset(dataset)?;
    let (mut net, _, _) = load_checkpoint(model)?;
    let eval_pairs: Vec<_> = pairs.iter().map(|p| (p.image.clone(), p.truth.clone())).collect();
    let logits = crate::metrics::batch_logits(&mut net, &eval_pairs, 32)?;
    let preds = decide(&logits, cfg.train.theta)?;
    let truths: Vec<OccupancyMap> = eval_pairs.iter().map(|p| p.1.clone()).collect();
    let counts = pooled_counts(&truths, &preds)?;
    let noise_w = header.dataset.noise.map_or(0.0, |n| n.noise_power_w);
    Ok((
        EvalReport::from_counts(counts, cfg.train.theta, header.dataset.tau_dbm, noise_w),
        header,
    ))
}

fn opt_cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn cmd_eval(cfg: &ExperimentConfig, out: &OutDir, dataset: &Path, model: &Path) -> Result<String> {
    let (report, _) = eval_report(cfg, dataset, model)?;
    let mut csv = String::from("kappa,p_d,p_f,theta,tau_dbm,tnr_db,tp,fp,tn,fn\n");
    writeln!(
        csv,
        "{},{},{},{},{},{},{},{},{},{}",
        report.kappa,
        opt_cell(report.p_d),
        opt_cell(report.p_f),
        report.theta,
        report.tau_dbm,
        report.tnr_db,
        report.counts.tp,
        report.counts.fp,
        report.counts.tn,
        report.counts.fn_
    )
    .unwrap();
    fs::write(out.file("eval.csv"), csv)?;
    println!(
        "kappa = {} (p_d = {}, p_f = {}) at theta = {}",
        report.kappa,
        opt_cell(report.p_d),
        opt_cell(report.p_f),
        report.theta
    );
    Ok(format!("kappa={}\n", report.kappa))
}

fn cmd_roc(cfg: &ExperimentConfig, out: &OutDir, dataset: &Path, model: &Path) -> Result<String> {
    let (_, pairs) = load_dataset(dataset)?;
    let (mut net, _, _) = load_checkpoint(model)?;
    let eval_pairs: Vec<_> = pairs.iter().map(|p| (p.image.clone(), p.truth.clone())).collect();
    let points = roc_sweep(&mut net, &eval_pairs, &cfg.roc.thetas)?;
    let mut csv = String::from("theta,p_f,p_d,kappa\n");
    for p in &points {
        writeln!(csv, "{},{},{},{}", p.theta, opt_cell(p.p_f), opt_cell(p.p_d), p.kappa).unwrap();
    }
    fs::write(out.file("roc.csv"), csv)?;
    println!("roc: {} points over theta in [{}, {}]", points.len(), points[0].theta, points.last().unwrap().theta);
    Ok(format!("roc_points={}\n", points.len()))
}

fn cmd_sweep(cfg: &ExperimentConfig, out: &OutDir) -> Result<String> {
    let kind = SweepKind::parse(&cfg.sweep.kind)?;
    let terrain = cfg.terrain.source().resolve()?;
    let ctx = SweepContext {
        terrain,
        propagation: cfg.propagation.clone(),
        train_spec: cfg.dataset.clone(),
        test_maps_per_count: cfg.effective_test_maps(),
        train_config: cfg.train.clone(),
        eval_seeds: cfg.sweep.eval_seeds.clone(),
    };
    let rows = sweep_experiment(kind, &cfg.sweep.values, &ctx)?;
    let (vcol, c1, c2) = kind.columns();
    let mut csv = format!("{vcol},{c1},{c2},{c1}_std,{c2}_std\n");
    for r in &rows {
        writeln!(
            csv,
            "{},{},{},{},{}",
            r.value, r.matched_kappa, r.mismatched_kappa, r.matched_std, r.mismatched_std
        )
        .unwrap();
    }
    let name = format!("sweep_{}.csv", kind.name());
    fs::write(out.file(&name), csv)?;
    println!("sweep {}: {} rows -> {name}", kind.name(), rows.len());
    Ok(format!("sweep_kind={}\nsweep_rows={}\n", kind.name(), rows.len()))
}

fn parse_methods(methods: &str) -> Result<Vec<InterpolationMethod>> {
    methods
        .split(',')
        .map(|m| match m.trim() {
            "idw" => Ok(InterpolationMethod::Idw),
            "knn" => Ok(InterpolationMethod::Knn),
            "rbf" => Ok(InterpolationMethod::Rbf),
            "kriging" => Ok(InterpolationMethod::Kriging),
            other => Err(Error::Parameter(format!("unknown baseline method `{other}`"))),
        })
        .collect()
}

fn cmd_baseline(
    cfg: &ExperimentConfig,
    out: &OutDir,
    dataset: &Path,
    methods: &str,
) -> Result<String> {
    let methods = parse_methods(methods)?;
    let (header, pairs) = load_dataset(dataset)?;
    let terrain = header.terrain.resolve()?;
    let tau = header.dataset.tau_dbm;
    let n_side = header.dataset.n_side;

    // Readings are regenerated from provenance; the stored pairs carry only
    // the aggregated images.
    use rayon::prelude::*;
    let regenerated: Result<Vec<_>> = pairs
        .par_iter()
        .map(|p| {
            regenerate_pair(&terrain, &header.propagation, &header.dataset, &p.provenance)
                .map(|(pair, readings)| (pair.truth, readings))
        })
        .collect();
    let regenerated = regenerated?;
    let grid = header.dataset.grid(&terrain)?;

    let mut csv = String::from("method,kappa,p_d,p_f\n");
    let mut summary = String::new();
    for method in methods {
        let icfg = InterpolatorConfig { method, ..cfg.baseline.clone() };
        let decided: Result<Vec<_>> = regenerated
            .par_iter()
            .map(|(_, readings)| {
                let pred = interpolate(readings, &grid, &icfg)?;
                Ok(baseline_decide(&pred, n_side, tau))
            })
            .collect();
        let decided = decided?;
        let truths: Vec<OccupancyMap> = regenerated.iter().map(|(t, _)| t.clone()).collect();
        let counts = pooled_counts(&truths, &decided)?;
        let name = format!("{method:?}").to_lowercase();
        writeln!(
            csv,
            "{name},{},{},{}",
            counts.kappa(),
            opt_cell(counts.p_d()),
            opt_cell(counts.p_f())
        )
        .unwrap();
        println!("baseline {name}: kappa = {}", counts.kappa());
        writeln!(summary, "baseline_{name}_kappa={}", counts.kappa()).unwrap();
    }
    fs::write(out.file("baseline.csv"), csv)?;
    Ok(summary)
}

fn cmd_plot(
    out: &OutDir,
    input: &Path,
    x: &str,
    y: &str,
    output: Option<&Path>,
    title: &str,
) -> Result<String> {
    let text = fs::read_to_string(input)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Format("empty CSV".into()))?;
    let cols: Vec<&str> = header.split(',').collect();
    let x_idx = cols
        .iter()
        .position(|c| *c == x)
        .ok_or_else(|| Error::Parameter(format!("no column `{x}` in {cols:?}")))?;
    let mut series = Vec::new();
    for y_name in y.split(',') {
        let y_name = y_name.trim();
        let y_idx = cols
            .iter()
            .position(|c| *c == y_name)
            .ok_or_else(|| Error::Parameter(format!("no column `{y_name}` in {cols:?}")))?;
        let mut points = Vec::new();
        for line in text.lines().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            let xv: f64 = fields
                .get(x_idx)
                .and_then(|f| f.parse().ok())
                .unwrap_or(f64::NAN);
            let yv: f64 = fields
                .get(y_idx)
                .and_then(|f| f.parse().ok())
                .unwrap_or(f64::NAN);
            if xv.is_finite() && yv.is_finite() {
                points.push((xv, yv));
            }
        }
        series.push(Series { label: y_name.to_string(), points });
    }
    let svg = line_plot(title, x, y, &series);
    let default_path;
    let path = match output {
        Some(p) => p,
        None => {
            default_path = out.file("plot.svg");
            &default_path
        }
    };
    fs::write(path, svg)?;
    println!("plot -> {}", path.display());
    Ok(format!("plot={}\n", path.display()))
}
