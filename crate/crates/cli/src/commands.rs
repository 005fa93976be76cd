use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use geotransolver::context::{GeometrySample, LocalStream};
use geotransolver::data::{
    load_csv_pointcloud, load_dataset, pad_cols, save_dataset, Case, Normalizer, Split,
};
use geotransolver::geometry::{ball_query, PointSet, QueryMode, SpatialIndex};
use geotransolver::metrics::{fmt_opt, MetricReport};
use geotransolver::model::{Checkpoint, Model, Sample};
use geotransolver::training::{evaluate, fit, tiny_gradcheck, Precision};
use geotransolver::{Error, ParamStore32};

use crate::config::{echo_config, parse_config, RunConfig};

/// Environment variable bounding worker threads for `ablate`.
pub const THREADS_ENV: &str = "GEOTRANSOLVER_THREADS";

/// Gradient checks fail above this maximum relative error.
pub const GRADCHECK_TOL: f64 = 1e-4;

#[derive(Parser, Debug)]
#[command(
    name = "geotransolver",
    version,
    about = "Train and evaluate geometry-aware transformer surrogates"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct ConfigArgs {
    /// TOML run configuration; omitted means all defaults.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Dotted-key override, e.g. `model.L=6`. May be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory, overriding `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl ConfigArgs {
    fn load(&self) -> anyhow::Result<RunConfig> {
        let mut cfg = parse_config(self.config.as_deref(), &self.overrides)?;
        if let Some(o) = &self.out {
            cfg.output.dir = o.clone();
        }
        Ok(cfg)
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model, then report test metrics.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Dataset directory written by `generate-data`; generated from
        /// `[data]` when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Score a checkpoint on one split.
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Finite-difference check of the tiny model.
    Gradcheck {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train once per point of the cross product of the given axes.
    Ablate {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// `key=v1,v2,...`; `schedule` is short for `model.schedule`.
        #[arg(long = "axis", required = true)]
        axes: Vec<String>,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Indexed versus brute-force ball query throughput.
    BenchNeighbors {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, default_value_t = 1000)]
        points: usize,
        #[arg(long, default_value_t = 100)]
        queries: usize,
        #[arg(long, value_delimiter = ',', default_value = "0.1,0.25,0.5")]
        radii: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "1,8,32")]
        caps: Vec<usize>,
        #[arg(long, default_value_t = 3)]
        reps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write a generated dataset.
    GenerateData {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Per-point predictions for point clouds given as CSV files.
    Predict {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// `stream=path.csv`, one per configured stream.
        #[arg(long = "input", required = true)]
        inputs: Vec<String>,
        /// Raw global parameters, comma separated.
        #[arg(
            long,
            value_delimiter = ',',
            allow_hyphen_values = true,
            required = true
        )]
        global: Vec<f64>,
    },
}

/// Worker threads from [`THREADS_ENV`], defaulting to 1.
pub fn threads() -> anyhow::Result<usize> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => bail!("{THREADS_ENV} must be a positive integer, got `{v}`"),
        },
        Err(_) => Ok(1),
    }
}

fn prepare_out(cfg: &RunConfig) -> anyhow::Result<PathBuf> {
    let dir = cfg.output.dir.clone();
    echo_config(cfg, &dir)?;
    Ok(dir)
}

fn dataset(cfg: &RunConfig, dir: Option<&Path>) -> anyhow::Result<Vec<Case>> {
    match dir {
        Some(d) => {
            let names: Vec<&str> = cfg.model.streams.iter().map(|s| s.name.as_str()).collect();
            let mut cases = load_dataset(d, &names)?;
            if !names.contains(&cfg.model.geometry_stream.as_str()) {
                let extra = load_dataset(d, &[cfg.model.geometry_stream.as_str()])?;
                for (c, e) in cases.iter_mut().zip(extra) {
                    c.streams.extend(e.streams);
                }
            }
            Ok(cases)
        }
        None => Ok(cfg.data.generate()?),
    }
}

fn split_of(cases: &[Case], split: Split) -> Vec<Case> {
    cases.iter().filter(|c| c.split == split).cloned().collect()
}

fn write_report(report: &MetricReport, dir: &Path) -> anyhow::Result<()> {
    report.write_csv(&dir.join("metrics.csv"))?;
    report.trend.write_csv(&dir.join("trend.csv"))?;
    Ok(())
}

/// Summary of one training run.
#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub params: usize,
    pub steps: usize,
    pub final_train_loss: f64,
    pub seconds: f64,
    pub report: Option<MetricReport>,
}

/// Fits on the train split, saves checkpoints and log into `dir`, and
/// scores the best parameters on the test split when it is non-empty.
pub fn train_run(
    cfg: &RunConfig,
    cases: &[Case],
    dir: &Path,
    verbose: bool,
) -> anyhow::Result<TrainSummary> {
    let train = split_of(cases, Split::Train);
    let val = split_of(cases, Split::Val);
    let test = split_of(cases, Split::Test);
    let refs: Vec<&Case> = train.iter().collect();
    if refs.is_empty() {
        return Err(Error::Data("training split is empty".into()).into());
    }
    let norm = Normalizer::fit(&refs, &cfg.model.streams)?;
    let model = Model::new(cfg.model.clone())?;
    let started = Instant::now();
    fs::write(
        dir.join("run_info.txt"),
        format!(
            "version = {}\nparams = {}\noptimizer = {:?}\nprecision = {:?}\ntrain_cases = {}\nval_cases = {}\ntest_cases = {}\n",
            geotransolver::VERSION,
            model.num_params(),
            cfg.train.optimizer,
            cfg.train.precision,
            train.len(),
            val.len(),
            test.len()
        ),
    )
    .with_context(|| format!("writing run info into {}", dir.display()))?;
    let progress = |r: &geotransolver::training::LogRow| {
        if verbose {
            eprintln!(
                "epoch {:>4} step {:>6} train_loss {:.5} val_loss {}",
                r.epoch,
                r.step,
                r.train_loss,
                fmt_opt(r.val_loss)
            );
        }
    };
    macro_rules! run {
        ($t:ty) => {{
            let mut store = model.init_params::<$t>()?;
            let out = fit(
                &model,
                &mut store,
                &train,
                &val,
                &norm,
                &cfg.train,
                Some(dir),
                progress,
            )?;
            let report = if test.is_empty() {
                None
            } else {
                Some(evaluate(
                    &model,
                    &out.best_params,
                    &test,
                    &norm,
                    cfg.train.seed,
                )?)
            };
            (
                out.steps,
                out.log.last().map_or(f64::NAN, |r| r.train_loss),
                report,
            )
        }};
    }
    let (steps, final_train_loss, report) = match cfg.train.precision {
        Precision::F32 => run!(f32),
        Precision::F64 => run!(f64),
    };
    if let Some(r) = &report {
        write_report(r, dir)?;
    }
    Ok(TrainSummary {
        params: model.num_params(),
        steps,
        final_train_loss,
        seconds: started.elapsed().as_secs_f64(),
        report,
    })
}

fn cmd_train(cfg: &RunConfig, data: Option<&Path>) -> anyhow::Result<()> {
    let dir = prepare_out(cfg)?;
    let cases = dataset(cfg, data)?;
    let s = train_run(cfg, &cases, &dir, true)?;
    println!(
        "trained {} parameters for {} steps in {:.1}s",
        s.params, s.steps, s.seconds
    );
    if let Some(r) = &s.report {
        print_report(r);
    }
    Ok(())
}

fn print_report(r: &MetricReport) {
    for f in &r.fields {
        println!(
            "{:<20} rel_l1 {:<12} mae {:.6}",
            f.name,
            fmt_opt(f.relative_l1),
            f.mae
        );
    }
    for (n, v) in &r.r2 {
        println!("r2 {:<17} {}", n, fmt_opt(*v));
    }
    println!("kendall tau          {}", fmt_opt(r.trend.tau));
}

fn cmd_eval(cfg: &RunConfig, ckpt: &Path, data: Option<&Path>, split: &str) -> anyhow::Result<()> {
    let dir = prepare_out(cfg)?;
    let checkpoint = Checkpoint::load(ckpt)?;
    let model = Model::new(cfg.model.clone())?;
    model.check_params(&checkpoint.params).with_context(|| {
        format!(
            "checkpoint {} does not fit the configured model",
            ckpt.display()
        )
    })?;
    let cases = dataset(cfg, data)?;
    let chosen: Vec<Case> = if split == "all" {
        cases
    } else {
        split_of(&cases, split.parse()?)
    };
    if chosen.is_empty() {
        bail!("split `{split}` has no cases");
    }
    let report = evaluate(
        &model,
        &checkpoint.params,
        &chosen,
        &checkpoint.normalizer,
        cfg.train.seed,
    )?;
    write_report(&report, &dir)?;
    print_report(&report);
    Ok(())
}

fn cmd_gradcheck(cfg: &RunConfig, seed: u64) -> anyhow::Result<bool> {
    let dir = prepare_out(cfg)?;
    let started = Instant::now();
    let r = tiny_gradcheck(seed)?;
    let secs = started.elapsed().as_secs_f64();
    let line = format!(
        "max relative error {:.3e} at {}[{}] over {} scalars in {:.1}s",
        r.max_relative_error, r.worst_param, r.worst_index, r.scalars_checked, secs
    );
    println!("{line}");
    fs::write(dir.join("gradcheck.txt"), format!("{line}\n"))?;
    Ok(r.max_relative_error < GRADCHECK_TOL)
}

/// One `--axis` argument.
#[derive(Clone, Debug, PartialEq)]
pub struct Axis {
    pub key: String,
    pub values: Vec<String>,
}

pub fn parse_axis(arg: &str) -> anyhow::Result<Axis> {
    let (key, values) = arg
        .split_once('=')
        .ok_or_else(|| anyhow!("axis `{arg}` is not of the form key=v1,v2"))?;
    let key = match key.trim() {
        "schedule" => "model.schedule".to_string(),
        k => k.to_string(),
    };
    let values: Vec<String> = values.split(',').map(|v| v.trim().to_string()).collect();
    if values.iter().any(String::is_empty) {
        bail!("axis `{arg}` has an empty value");
    }
    Ok(Axis { key, values })
}

/// Every combination of axis values, first axis slowest.
pub fn cross_product(axes: &[Axis]) -> Vec<Vec<(String, String)>> {
    let mut out: Vec<Vec<(String, String)>> = vec![Vec::new()];
    for a in axes {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                a.values.iter().map(move |v| {
                    let mut p = prefix.clone();
                    p.push((a.key.clone(), v.clone()));
                    p
                })
            })
            .collect();
    }
    out
}

fn par_map<T: Sync, R: Send>(items: &[T], threads: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    if threads <= 1 || items.len() <= 1 {
        return items.iter().map(f).collect();
    }
    let next = std::sync::atomic::AtomicUsize::new(0);
    let results: Vec<std::sync::Mutex<Option<R>>> =
        items.iter().map(|_| std::sync::Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for _ in 0..threads.min(items.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                *results[i].lock().expect("unpoisoned") = Some(r);
            });
        }
    });
    results
        .into_iter()
        .map(|m| m.into_inner().expect("unpoisoned").expect("every item ran"))
        .collect()
}

fn cmd_ablate(args: &ConfigArgs, axes: &[String], data: Option<&Path>) -> anyhow::Result<()> {
    let base = args.load()?;
    let dir = prepare_out(&base)?;
    let axes = axes
        .iter()
        .map(|a| parse_axis(a))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let combos = cross_product(&axes);
    let mut runs = Vec::with_capacity(combos.len());
    for (i, combo) in combos.iter().enumerate() {
        let mut overrides = args.overrides.clone();
        overrides.extend(combo.iter().map(|(k, v)| format!("{k}={v}")));
        let mut cfg = parse_config(args.config.as_deref(), &overrides)?;
        cfg.output.dir = dir.join(format!("run{i:02}"));
        // Every run sees the base dataset.
        cfg.data = base.data.clone();
        runs.push((combo.clone(), cfg));
    }
    let cases = dataset(&base, data)?;
    let results = par_map(
        &runs,
        threads()?,
        |(_, cfg)| -> anyhow::Result<TrainSummary> {
            echo_config(cfg, &cfg.output.dir)?;
            train_run(cfg, &cases, &cfg.output.dir, false)
        },
    );

    let path = dir.join("ablation_summary.csv");
    let mut w =
        csv::Writer::from_path(&path).with_context(|| format!("creating {}", path.display()))?;
    let mut header: Vec<String> = axes.iter().map(|a| a.key.clone()).collect();
    header.extend(
        [
            "params",
            "steps",
            "final_train_loss",
            "surface_cp_rel_l1",
            "volume_velocity_rel_l1",
            "r2_J",
            "seconds",
        ]
        .map(String::from),
    );
    w.write_record(&header)?;
    for ((combo, _), r) in runs.iter().zip(results) {
        let s = r?;
        let field = |n: &str| {
            s.report
                .as_ref()
                .and_then(|r| r.field(n))
                .and_then(|f| f.relative_l1)
        };
        let mut row: Vec<String> = combo.iter().map(|(_, v)| v.clone()).collect();
        row.push(s.params.to_string());
        row.push(s.steps.to_string());
        row.push(s.final_train_loss.to_string());
        row.push(fmt_opt(field("surface.cp")));
        row.push(fmt_opt(field("volume.velocity")));
        row.push(fmt_opt(s.report.as_ref().and_then(|r| r.r2("J"))));
        row.push(format!("{:.3}", s.seconds));
        println!("{}", row.join(","));
        w.write_record(&row)?;
    }
    w.flush()?;
    println!("wrote {}", path.display());
    Ok(())
}

/// Throughput of one benchmark configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub radius: f64,
    pub cap: usize,
    pub indexed_qps: f64,
    pub brute_qps: f64,
    pub matches: bool,
}

/// Times indexed and brute-force queries on seeded uniform points in the
/// unit cube and checks that they agree exactly.
pub fn bench_neighbors(
    points: usize,
    queries: usize,
    radii: &[f64],
    caps: &[usize],
    reps: usize,
    seed: u64,
) -> anyhow::Result<Vec<BenchRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cloud =
        |n: usize| PointSet::new((0..n).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect());
    let targets = cloud(points)?;
    let qs = cloud(queries)?;
    let mut rows = Vec::new();
    for &r in radii {
        let index = SpatialIndex::build(&targets, r)?;
        for &cap in caps {
            let mut best = [f64::INFINITY; 2];
            let mut lists = Vec::new();
            for (k, mode) in [QueryMode::Indexed, QueryMode::Brute]
                .into_iter()
                .enumerate()
            {
                for _ in 0..reps.max(1) {
                    let t = Instant::now();
                    let l = ball_query(&index, &qs, r, cap, mode)?;
                    best[k] = best[k].min(t.elapsed().as_secs_f64());
                    if lists.len() == k {
                        lists.push(l);
                    }
                }
            }
            let qps = |s: f64| queries as f64 / s.max(1e-9);
            rows.push(BenchRow {
                radius: r,
                cap,
                indexed_qps: qps(best[0]),
                brute_qps: qps(best[1]),
                matches: lists[0] == lists[1],
            });
        }
    }
    Ok(rows)
}

fn cmd_bench(
    cfg: &RunConfig,
    a: (usize, usize, &[f64], &[usize], usize, u64),
) -> anyhow::Result<bool> {
    let dir = prepare_out(cfg)?;
    let rows = bench_neighbors(a.0, a.1, a.2, a.3, a.4, a.5)?;
    let path = dir.join("bench_neighbors.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["radius", "cap", "indexed_qps", "brute_qps", "matches"])?;
    for r in &rows {
        println!(
            "r={:<6} cap={:<4} indexed {:>12.0} q/s  brute {:>12.0} q/s  match {}",
            r.radius, r.cap, r.indexed_qps, r.brute_qps, r.matches
        );
        w.write_record([
            r.radius.to_string(),
            r.cap.to_string(),
            r.indexed_qps.to_string(),
            r.brute_qps.to_string(),
            r.matches.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(rows.iter().all(|r| r.matches))
}

fn cmd_generate(cfg: &RunConfig) -> anyhow::Result<()> {
    let dir = prepare_out(cfg)?;
    let cases = cfg.data.generate()?;
    save_dataset(&dir, &cases)?;
    println!("wrote {} cases to {}", cases.len(), dir.display());
    Ok(())
}

fn cmd_predict(
    cfg: &RunConfig,
    ckpt: &Path,
    inputs: &[String],
    global: &[f64],
) -> anyhow::Result<()> {
    let dir = prepare_out(cfg)?;
    let checkpoint = Checkpoint::load(ckpt)?;
    let mcfg = checkpoint.config.clone();
    let model = Model::new(mcfg.clone())?;
    model.check_params(&checkpoint.params)?;
    let norm = &checkpoint.normalizer;
    let mut files = std::collections::BTreeMap::new();
    for i in inputs {
        let (name, path) = i
            .split_once('=')
            .ok_or_else(|| anyhow!("input `{i}` is not of the form stream=path"))?;
        files.insert(name.to_string(), PathBuf::from(path));
    }
    let geom_path = files.get(&mcfg.geometry_stream).ok_or_else(|| {
        anyhow!(
            "no input given for geometry stream `{}`",
            mcfg.geometry_stream
        )
    })?;
    let gfeat: Vec<&str> = mcfg.geometry_features.iter().map(String::as_str).collect();
    let gtable = load_csv_pointcloud(geom_path, &gfeat)?;
    let geometry = GeometrySample::new(
        gtable.positions()?,
        gtable.select(&mcfg.geometry_features)?,
        norm.global.apply_vec(global)?,
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    let idx =
        geotransolver::model::subsample_indices(geometry.len(), mcfg.geom_token_cap, &mut rng);
    let geometry = geometry.select(&idx);
    let mut streams = Vec::new();
    let mut tables = Vec::new();
    for s in &mcfg.streams {
        let path = files
            .get(&s.name)
            .ok_or_else(|| anyhow!("no input given for stream `{}`", s.name))?;
        let feats: Vec<&str> = s.features.iter().map(String::as_str).collect();
        let table = load_csv_pointcloud(path, &feats)?;
        let f = norm
            .stream(&s.name)?
            .features
            .apply(&table.select(&s.features)?)?;
        streams.push(LocalStream::new(
            &s.name,
            table.positions()?,
            pad_cols(&f, mcfg.d_x),
        )?);
        tables.push(table);
    }
    let sample = Sample { streams, geometry };
    let params: &ParamStore32 = &checkpoint.params;
    let raw = model.predict_chunked(params, &sample, mcfg.query_token_cap)?;
    for ((s, table), y) in mcfg.streams.iter().zip(&tables).zip(raw) {
        let y = norm.stream(&s.name)?.targets.invert(&y.cast())?;
        let path = dir.join(format!("{}_pred.csv", s.name));
        let mut w = csv::Writer::from_path(&path)?;
        let mut header = vec!["x".to_string(), "y".into(), "z".into()];
        header.extend(s.outputs.iter().cloned());
        w.write_record(&header)?;
        let pos = table.positions()?;
        for r in 0..y.rows() {
            let p = pos.get(r);
            let mut row: Vec<String> = p.iter().map(|v| v.to_string()).collect();
            row.extend(y.row(r).iter().map(|v| v.to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

/// Parses `argv` (program name first) and runs the command, returning the
/// process exit status: 0 on success, 1 on failure, 2 on usage errors.
pub fn run_command<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

fn dispatch(cmd: Command) -> anyhow::Result<bool> {
    match cmd {
        Command::Train { cfg, data } => cmd_train(&cfg.load()?, data.as_deref()).map(|_| true),
        Command::Eval {
            cfg,
            checkpoint,
            data,
            split,
        } => cmd_eval(&cfg.load()?, &checkpoint, data.as_deref(), &split).map(|_| true),
        Command::Gradcheck { cfg, seed } => cmd_gradcheck(&cfg.load()?, seed),
        Command::Ablate { cfg, axes, data } => {
            cmd_ablate(&cfg, &axes, data.as_deref()).map(|_| true)
        }
        Command::BenchNeighbors {
            cfg,
            points,
            queries,
            radii,
            caps,
            reps,
            seed,
        } => cmd_bench(&cfg.load()?, (points, queries, &radii, &caps, reps, seed)),
        Command::GenerateData { cfg } => cmd_generate(&cfg.load()?).map(|_| true),
        Command::Predict {
            cfg,
            checkpoint,
            inputs,
            global,
        } => cmd_predict(&cfg.load()?, &checkpoint, &inputs, &global).map(|_| true),
    }
}
