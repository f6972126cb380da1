//! Command-line front end. Every subcommand writes its outputs plus a
//! `manifest.json` into `--out`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};

use crate::baselines::{grid_search_cv, Booster, Candidate, Grid, RandomForest};
use crate::config::{ClassWeighting, RunConfig};
use crate::data::{
    encode, fit_stats, impute_default, load_dataset, stratified_split, CrashType, Dataset, EncodedMatrix,
    FeatureSchema, NormalizationStats, SplitIndices, NUM_CLASSES,
};
use crate::error::{FgttError, Result};
use crate::hpo::{self, Point, SearchSpace, Trial, TrialStatus};
use crate::model::{aggregate_attention, partition_columns, Checkpoint, FgttConfig, FgttModel};
use crate::report::{emit_heatmap, permutation_importance, RunManifest};
use crate::synth::{generate, marginal_report, write_marginal_report};
use crate::train::{
    compute_metrics, train_with_progress, FocalLossParams, Labeled, Metrics, OptimizerKind, TrainConfig,
};

#[derive(Debug, Parser)]
#[command(
    name = "fgtt",
    version,
    about = "Feature group tabular transformer for crash-type classification"
)]
struct Cli {
    /// Seed for every random component; overrides the config's seeds.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Part {
    Train,
    Validation,
    Test,
    All,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Family {
    Forest,
    Booster,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic crash dataset with a planted label mechanism.
    Generate {
        #[arg(long)]
        rows: Option<usize>,
        /// Strength of the planted signal (0 gives labels independent of features).
        #[arg(long)]
        signal: Option<f64>,
    },
    /// Impute missing values, then standardize and one-hot encode.
    Preprocess {
        #[arg(long)]
        data: PathBuf,
        /// Split index file; computed from the config ratios when absent.
        #[arg(long)]
        split: Option<PathBuf>,
    },
    /// Stratified train/validation/test split indices.
    Split {
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated train,validation,test fractions.
        #[arg(long)]
        ratios: Option<String>,
    },
    /// Train the transformer with early stopping and save a checkpoint.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        split: Option<PathBuf>,
        #[arg(long)]
        max_epochs: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long)]
        optimizer: Option<String>,
    },
    /// Bayesian optimization of the transformer's hyperparameters.
    Tune {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        split: Option<PathBuf>,
        #[arg(long)]
        budget: Option<usize>,
        #[arg(long)]
        n_init: Option<usize>,
        /// Epoch cap per trial.
        #[arg(long)]
        max_epochs: Option<usize>,
        /// Continue from trials.csv in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Train and score a random forest or gradient booster.
    Baseline {
        #[arg(long, value_enum)]
        family: Family,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        split: Option<PathBuf>,
        /// Pick parameters by stratified k-fold grid search on the training rows.
        #[arg(long)]
        cv: bool,
    },
    /// Score a checkpoint on labeled data.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        split: Option<PathBuf>,
        /// Rows to score; `test` when a split is given, otherwise `all`.
        #[arg(long, value_enum)]
        part: Option<Part>,
    },
    /// Attention heatmaps and permutation importance for a checkpoint.
    Explain {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        split: Option<PathBuf>,
        #[arg(long, value_enum)]
        part: Option<Part>,
        #[arg(long, default_value_t = 5)]
        repeats: usize,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Generate { .. } => "generate",
            Command::Preprocess { .. } => "preprocess",
            Command::Split { .. } => "split",
            Command::Train { .. } => "train",
            Command::Tune { .. } => "tune",
            Command::Baseline { .. } => "baseline",
            Command::Evaluate { .. } => "evaluate",
            Command::Explain { .. } => "explain",
        }
    }
}

/// Parses `argv` (program name first), runs the subcommand and returns
/// the process exit code: 0 success, 1 usage, 2 data or contract error,
/// 3 training or optimization failure.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let args: Vec<std::ffi::OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let shown: Vec<String> = args.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    match execute(cli, &shown) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

struct Ctx {
    cfg: RunConfig,
    out: PathBuf,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

impl Ctx {
    fn input(&mut self, p: &Path) {
        self.inputs.push(p.to_path_buf());
    }

    fn write_with<F>(&mut self, name: &str, f: F) -> Result<PathBuf>
    where
        F: FnOnce(&mut BufWriter<File>) -> Result<()>,
    {
        let p = self.out.join(name);
        let file = File::create(&p).map_err(|e| FgttError::io(&p, e))?;
        let mut w = BufWriter::new(file);
        f(&mut w)?;
        w.flush().map_err(|e| FgttError::io(&p, e))?;
        self.outputs.push(p.clone());
        Ok(p)
    }

    fn write_text(&mut self, name: &str, text: &str) -> Result<PathBuf> {
        self.write_with(name, |w| {
            w.write_all(text.as_bytes()).map_err(|e| FgttError::io(name, e))
        })
    }

    fn write_json<T: serde::Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf> {
        let text = serde_json::to_string_pretty(value)? + "\n";
        self.write_text(name, &text)
    }
}

fn execute(cli: Cli, args: &[String]) -> Result<()> {
    let start = Instant::now();
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.set_seed(s);
    }
    std::fs::create_dir_all(&cli.out).map_err(|e| FgttError::io(&cli.out, e))?;
    let mut ctx = Ctx {
        cfg,
        out: cli.out.clone(),
        inputs: Vec::new(),
        outputs: Vec::new(),
    };
    if let Some(p) = &cli.config {
        ctx.input(p);
    }
    let name = cli.command.name();
    match cli.command {
        Command::Generate { rows, signal } => cmd_generate(&mut ctx, rows, signal)?,
        Command::Preprocess { data, split } => cmd_preprocess(&mut ctx, &data, split.as_deref())?,
        Command::Split { data, ratios } => cmd_split(&mut ctx, &data, ratios.as_deref())?,
        Command::Train {
            data,
            split,
            max_epochs,
            learning_rate,
            optimizer,
        } => {
            if let Some(e) = max_epochs {
                ctx.cfg.training.max_epochs = e;
            }
            if let Some(lr) = learning_rate {
                ctx.cfg.training.learning_rate = lr;
            }
            if let Some(o) = optimizer {
                ctx.cfg.training.optimizer = OptimizerKind::parse(&o)?;
            }
            ctx.cfg.validate()?;
            cmd_train(&mut ctx, &data, split.as_deref())?
        }
        Command::Tune {
            data,
            split,
            budget,
            n_init,
            max_epochs,
            resume,
        } => {
            if let Some(b) = budget {
                ctx.cfg.search.budget = b;
            }
            if let Some(n) = n_init {
                ctx.cfg.search.n_init = n;
            }
            if let Some(e) = max_epochs {
                ctx.cfg.search.max_epochs = e;
            }
            ctx.cfg.validate()?;
            cmd_tune(&mut ctx, &data, split.as_deref(), resume)?
        }
        Command::Baseline {
            family,
            data,
            split,
            cv,
        } => cmd_baseline(&mut ctx, family, &data, split.as_deref(), cv)?,
        Command::Evaluate {
            checkpoint,
            data,
            split,
            part,
        } => cmd_evaluate(&mut ctx, &checkpoint, &data, split.as_deref(), part)?,
        Command::Explain {
            checkpoint,
            data,
            split,
            part,
            repeats,
        } => cmd_explain(&mut ctx, &checkpoint, &data, split.as_deref(), part, repeats)?,
    }
    let seed = ctx.cfg.seed();
    let manifest = RunManifest::build(
        name,
        args,
        cli.config.as_deref(),
        seed,
        &ctx.inputs,
        &ctx.outputs,
        start.elapsed().as_secs_f64(),
    )?;
    manifest.write(&ctx.out)?;
    Ok(())
}

/// Loads a dataset and fills missing cells with the group-mean rules.
fn load_clean(ctx: &mut Ctx, path: &Path, schema: &FeatureSchema) -> Result<Dataset> {
    ctx.input(path);
    let data = load_dataset(path, schema)?;
    if data.missing_count() > 0 {
        impute_default(&data)
    } else {
        Ok(data)
    }
}

fn load_split(ctx: &mut Ctx, path: Option<&Path>, data: &Dataset) -> Result<SplitIndices> {
    let s = match path {
        Some(p) => {
            ctx.input(p);
            let f = File::open(p).map_err(|e| FgttError::io(p, e))?;
            SplitIndices::read_csv(std::io::BufReader::new(f))?
        }
        None => {
            let r = ctx.cfg.split.ratios;
            stratified_split(data.labels(), (r[0], r[1], r[2]), ctx.cfg.seed())?
        }
    };
    let n = data.n_rows();
    if let Some(bad) = s.train.iter().chain(&s.validation).chain(&s.test).find(|&&i| i >= n) {
        return Err(FgttError::Contract(format!(
            "split index {bad} out of range for {n} rows"
        )));
    }
    Ok(s)
}

struct Prepared {
    data: Dataset,
    split: SplitIndices,
    stats: NormalizationStats,
    encoded: EncodedMatrix,
}

impl Prepared {
    fn part(&self, rows: &[usize]) -> (EncodedMatrix, Vec<usize>) {
        let y = rows.iter().map(|&i| self.data.labels()[i]).collect();
        (self.encoded.select_rows(rows), y)
    }
}

fn prepare(ctx: &mut Ctx, data: &Path, split: Option<&Path>) -> Result<(FeatureSchema, Prepared)> {
    let schema = ctx.cfg.schema()?;
    let data = load_clean(ctx, data, &schema)?;
    let split = load_split(ctx, split, &data)?;
    let stats = fit_stats(&data, &split.train)?;
    let encoded = encode(&data, &stats)?;
    Ok((
        schema,
        Prepared {
            data,
            split,
            stats,
            encoded,
        },
    ))
}

fn loss_params(cfg: &RunConfig, y_train: &[usize]) -> Result<FocalLossParams> {
    let mut p = match cfg.loss.weighting {
        ClassWeighting::InverseFrequency => FocalLossParams::inverse_frequency(y_train, NUM_CLASSES)?,
        ClassWeighting::Uniform => FocalLossParams::cross_entropy(NUM_CLASSES),
    };
    if let Some(g) = cfg.loss.gamma {
        p.gamma = g;
    }
    Ok(p)
}

fn file_class_name(c: usize) -> String {
    CrashType::from_id(c)
        .map(|t| t.name().to_lowercase().replace('-', "_"))
        .unwrap_or_else(|| format!("class_{c}"))
}

fn write_metrics(ctx: &mut Ctx, stem: &str, m: &Metrics) -> Result<()> {
    ctx.write_text(&format!("{stem}.csv"), &m.to_report_csv())?;
    ctx.write_json(&format!("{stem}.json"), m)?;
    eprintln!("{stem}: accuracy {:.4}, weighted F1 {:.4}", m.accuracy, m.weighted_f1);
    Ok(())
}

fn cmd_generate(ctx: &mut Ctx, rows: Option<usize>, signal: Option<f64>) -> Result<()> {
    let mut g = ctx.cfg.generator.clone();
    if let Some(n) = rows {
        g.n_rows = n;
    }
    if let Some(s) = signal {
        g.signal_strength = s;
    }
    let schema = ctx.cfg.schema()?;
    let (data, manifest) = generate(&g, &schema)?;
    ctx.write_with("dataset.csv", |w| data.write_csv(w))?;
    ctx.write_with("generator.json", |w| manifest.write_json(w))?;
    let marginals = marginal_report(&data)?;
    ctx.write_with("marginals.csv", |w| write_marginal_report(&marginals, w))?;
    eprintln!(
        "{} synthetic rows; Bayes ceiling accuracy {:.4}, weighted F1 {:.4}",
        data.n_rows(),
        manifest.bayes_ceiling.accuracy,
        manifest.bayes_ceiling.weighted_f1
    );
    Ok(())
}

fn cmd_preprocess(ctx: &mut Ctx, data: &Path, split: Option<&Path>) -> Result<()> {
    let (_, p) = prepare(ctx, data, split)?;
    ctx.write_with("imputed.csv", |w| p.data.write_csv(w))?;
    ctx.write_with("split.csv", |w| p.split.write_csv(w))?;
    ctx.write_json("normalization.json", &p.stats)?;
    ctx.write_with("encoded.csv", |w| p.encoded.write_csv(w))?;
    Ok(())
}

fn parse_ratios(s: &str) -> Result<[f64; 3]> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| FgttError::Param(format!("bad ratios {s:?}")))?;
    <[f64; 3]>::try_from(v).map_err(|_| FgttError::Param(format!("expected three ratios, got {s:?}")))
}

fn cmd_split(ctx: &mut Ctx, data: &Path, ratios: Option<&str>) -> Result<()> {
    if let Some(r) = ratios {
        ctx.cfg.split.ratios = parse_ratios(r)?;
        ctx.cfg.validate()?;
    }
    let schema = ctx.cfg.schema()?;
    ctx.input(data);
    let d = load_dataset(data, &schema)?;
    let s = load_split(ctx, None, &d)?;
    ctx.write_with("split.csv", |w| s.write_csv(w))?;
    let (a, b, c) = s.sizes();
    eprintln!("train {a}, validation {b}, test {c}");
    Ok(())
}

fn cmd_train(ctx: &mut Ctx, data: &Path, split: Option<&Path>) -> Result<()> {
    let (schema, p) = prepare(ctx, data, split)?;
    let (xt, yt) = p.part(&p.split.train);
    let (xv, yv) = p.part(&p.split.validation);
    let partition = partition_columns(&p.encoded.column_meta, &schema)?;
    let mut model = FgttModel::new(ctx.cfg.model.clone(), partition)?;
    let loss = loss_params(&ctx.cfg, &yt)?;
    let report = train_with_progress(
        &mut model,
        Labeled::new(&xt.values, &yt)?,
        Labeled::new(&xv.values, &yv)?,
        &loss,
        &ctx.cfg.training,
        |r| {
            eprintln!(
                "epoch {:>3}  train loss {:.5}  val loss {:.5}  val weighted F1 {:.4}",
                r.epoch, r.train_loss, r.val_loss, r.val_weighted_f1
            )
        },
    )?;
    eprintln!(
        "best epoch {} (val weighted F1 {:.4})",
        report.best_epoch, report.best_val_weighted_f1
    );
    let ckpt = Checkpoint::new(&model, &schema, &p.stats);
    let text = ckpt.to_json()?;
    ctx.write_text("checkpoint.json", &text)?;
    ctx.write_with("history.csv", |w| report.write_history_csv(w))?;
    if !p.split.test.is_empty() {
        let (xs, ys) = p.part(&p.split.test);
        let m = compute_metrics(&model.predict(&xs.values)?, &ys)?;
        write_metrics(ctx, "metrics_test", &m)?;
    }
    Ok(())
}

/// Model and training settings for one tuning trial. Dimensions missing
/// from the space keep their configured values.
fn trial_configs(cfg: &RunConfig, space: &SearchSpace, point: &Point) -> Result<(FgttConfig, TrainConfig)> {
    let mut m = cfg.model.clone();
    let mut t = cfg.training.clone();
    let int = |name: &str| space.numeric(point, name).map(|v| v as usize);
    if let Some(v) = int("hidden_dim") {
        m.hidden_dim = v;
        m.projector_hidden = v;
    }
    if let Some(v) = int("ffn_dim") {
        m.ffn_dim = v;
    }
    if let Some(v) = int("n_heads") {
        m.n_heads = v;
    }
    if let Some(v) = int("n_layers") {
        m.n_layers = v;
    }
    if let Some(v) = space.numeric(point, "dropout_rate") {
        m.dropout_rate = v;
    }
    if let Some(v) = space.numeric(point, "learning_rate") {
        t.learning_rate = v;
    }
    if let Some(o) = space.label(point, "optimizer") {
        t.optimizer = OptimizerKind::parse(o)?;
    }
    t.max_epochs = cfg.search.max_epochs;
    t.patience = cfg.search.patience;
    m.validate()?;
    t.validate()?;
    Ok((m, t))
}

fn cmd_tune(ctx: &mut Ctx, data: &Path, split: Option<&Path>, resume: bool) -> Result<()> {
    let (schema, p) = prepare(ctx, data, split)?;
    let (xt, yt) = p.part(&p.split.train);
    let (xv, yv) = p.part(&p.split.validation);
    let partition = partition_columns(&p.encoded.column_meta, &schema)?;
    let loss = loss_params(&ctx.cfg, &yt)?;
    let train_set = Labeled::new(&xt.values, &yt)?;
    let val_set = Labeled::new(&xv.values, &yv)?;
    let space = ctx.cfg.search.space.clone();
    let cfg = ctx.cfg.clone();

    let history_path = ctx.out.join("trials.csv");
    let prior = if resume && history_path.exists() {
        let f = File::open(&history_path).map_err(|e| FgttError::io(&history_path, e))?;
        hpo::read_history_csv(&space, std::io::BufReader::new(f))?
    } else {
        Vec::new()
    };
    eprintln!("{} prior trials", prior.len());
    {
        let f = File::create(&history_path).map_err(|e| FgttError::io(&history_path, e))?;
        hpo::write_history_csv(&space, &prior, BufWriter::new(f))?;
    }
    let objective = |point: &Point| -> f64 {
        let run = || -> Result<f64> {
            let (m, t) = trial_configs(&cfg, &space, point)?;
            let mut model = FgttModel::new(m, partition.clone())?;
            let r = train_with_progress(&mut model, train_set, val_set, &loss, &t, |_| {})?;
            Ok(r.best_val_weighted_f1)
        };
        run().unwrap_or_else(|e| {
            eprintln!("trial failed: {e}");
            f64::NAN
        })
    };
    let on_trial = |t: &Trial| -> Result<()> {
        eprintln!(
            "trial {:>3}  {}  objective {:.4}",
            t.id,
            space.format_point(&t.point).join(" "),
            t.objective
        );
        let f = std::fs::OpenOptions::new()
            .append(true)
            .open(&history_path)
            .map_err(|e| FgttError::io(&history_path, e))?;
        hpo::optimize::write_history_row(&space, t, f)
    };
    let result = hpo::resume(
        objective,
        &space,
        cfg.search.budget,
        cfg.search.n_init,
        cfg.seed(),
        prior,
        on_trial,
    )?;
    ctx.outputs.push(history_path);
    let best = result
        .best()
        .ok_or_else(|| FgttError::Training {
            epoch: 0,
            reason: "every tuning trial failed".into(),
        })?
        .clone();
    let params: BTreeMap<String, String> = space
        .dims
        .iter()
        .zip(space.format_point(&best.point))
        .map(|(d, v)| (d.name.clone(), v))
        .collect();
    ctx.write_json(
        "best.json",
        &serde_json::json!({
            "trial": best.id,
            "objective": best.objective,
            "status": TrialStatus::Complete,
            "params": params,
        }),
    )?;
    let (m, mut t) = trial_configs(&cfg, &space, &best.point)?;
    t.max_epochs = cfg.training.max_epochs;
    t.patience = cfg.training.patience;
    let mut best_cfg = cfg.clone();
    best_cfg.model = m;
    best_cfg.training = t;
    let text = best_cfg.to_toml()?;
    ctx.write_text("best_config.toml", &text)?;
    Ok(())
}

fn cmd_baseline(ctx: &mut Ctx, family: Family, data: &Path, split: Option<&Path>, cv: bool) -> Result<()> {
    let (_, p) = prepare(ctx, data, split)?;
    let (xt, yt) = p.part(&p.split.train);
    let cand = if cv {
        let grid = match family {
            Family::Forest => Grid::Forest {
                base: ctx.cfg.forest.clone(),
                grid: ctx.cfg.cv.forest_grid.clone(),
            },
            Family::Booster => Grid::Booster {
                base: ctx.cfg.booster.clone(),
                grid: ctx.cfg.cv.booster_grid.clone(),
            },
        };
        let r = grid_search_cv(&grid, &xt.values, &yt, ctx.cfg.cv.folds, ctx.cfg.seed())?;
        ctx.write_with("cv_table.csv", |w| r.write_csv(w))?;
        r.best_candidate().clone()
    } else {
        match family {
            Family::Forest => Candidate::Forest(ctx.cfg.forest.clone()),
            Family::Booster => Candidate::Booster(ctx.cfg.booster.clone()),
        }
    };
    eprintln!(
        "{} with {}",
        cand.family(),
        cand.params()
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(", ")
    );
    ctx.write_json("baseline.json", &cand)?;
    let predict: Box<dyn Fn(&crate::autodiff::Tensor) -> Result<Vec<usize>>> = match &cand {
        Candidate::Forest(c) => {
            let f = RandomForest::fit(&xt.values, &yt, c)?;
            Box::new(move |x| f.predict(x))
        }
        Candidate::Booster(c) => {
            let b = Booster::fit(&xt.values, &yt, c)?;
            Box::new(move |x| b.predict(x))
        }
    };
    for (stem, rows) in [
        ("metrics_validation", &p.split.validation),
        ("metrics_test", &p.split.test),
    ] {
        if rows.is_empty() {
            continue;
        }
        let (x, y) = p.part(rows);
        let m = compute_metrics(&predict(&x.values)?, &y)?;
        write_metrics(ctx, stem, &m)?;
    }
    Ok(())
}

/// Checkpoint, its model, and the selected rows encoded with the
/// checkpoint's own normalization.
fn load_for_scoring(
    ctx: &mut Ctx,
    checkpoint: &Path,
    data: &Path,
    split: Option<&Path>,
    part: Option<Part>,
) -> Result<(Checkpoint, FgttModel, EncodedMatrix, Vec<usize>)> {
    ctx.input(checkpoint);
    let expected = match &ctx.cfg.schema.path {
        Some(_) => Some(ctx.cfg.schema()?),
        None => None,
    };
    let ckpt = Checkpoint::load(checkpoint, expected.as_ref())?;
    let model = ckpt.model()?;
    let d = load_clean(ctx, data, &ckpt.schema)?;
    let part = part.unwrap_or(if split.is_some() { Part::Test } else { Part::All });
    let rows: Vec<usize> = match part {
        Part::All => (0..d.n_rows()).collect(),
        _ => {
            let s = load_split(ctx, split, &d)?;
            match part {
                Part::Train => s.train,
                Part::Validation => s.validation,
                _ => s.test,
            }
        }
    };
    if rows.is_empty() {
        return Err(FgttError::Contract("no rows selected".into()));
    }
    let enc = encode(&d.subset(&rows), &ckpt.normalization)?;
    let y = rows.iter().map(|&i| d.labels()[i]).collect();
    Ok((ckpt, model, enc, y))
}

fn cmd_evaluate(ctx: &mut Ctx, checkpoint: &Path, data: &Path, split: Option<&Path>, part: Option<Part>) -> Result<()> {
    let (_, model, enc, y) = load_for_scoring(ctx, checkpoint, data, split, part)?;
    let m = compute_metrics(&model.predict(&enc.values)?, &y)?;
    write_metrics(ctx, "metrics", &m)
}

fn cmd_explain(
    ctx: &mut Ctx,
    checkpoint: &Path,
    data: &Path,
    split: Option<&Path>,
    part: Option<Part>,
    repeats: usize,
) -> Result<()> {
    let (_, model, enc, y) = load_for_scoring(ctx, checkpoint, data, split, part)?;
    let (_, record) = model.predict_with_attention(&enc.values)?;
    let mut labels = vec!["CLS".to_string()];
    labels.extend(model.partition().names().iter().map(|s| s.to_string()));
    match record {
        Some(record) => {
            for c in 0..NUM_CLASSES {
                match aggregate_attention(&record, &y, c) {
                    Ok(agg) => {
                        let files = emit_heatmap(&agg, &file_class_name(c), &labels, &ctx.out)?;
                        ctx.outputs.extend(files);
                    }
                    Err(FgttError::Aggregation(msg)) => eprintln!("skipping heatmap: {msg}"),
                    Err(e) => return Err(e),
                }
            }
        }
        None => eprintln!("model has no encoder layers; no attention to report"),
    }
    let groups: Vec<(String, Vec<usize>)> = model
        .partition()
        .groups
        .iter()
        .map(|(g, cols)| (g.name().to_string(), cols.clone()))
        .collect();
    let seed = ctx.cfg.seed();
    let imp = permutation_importance(&model, &enc.values, &y, &enc.feature_blocks(), &groups, repeats, seed)?;
    ctx.write_with("importance.csv", |w| imp.write_csv(w))?;
    for s in imp.groups.iter().take(3) {
        eprintln!("{:<12} {:+.4}", s.name, s.mean_drop);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run(["fgtt", "frobnicate"]), 1);
        assert_eq!(run(["fgtt", "generate", "--bogus"]), 1);
        assert_eq!(run(["fgtt", "--help"]), 0);
    }

    #[test]
    fn ratios_parse() {
        assert_eq!(parse_ratios("0.885,0.0575,0.0575").unwrap(), [0.885, 0.0575, 0.0575]);
        assert!(parse_ratios("0.5,0.5").is_err());
        assert!(parse_ratios("a,b,c").is_err());
    }

    #[test]
    fn missing_data_file_exits_two() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().to_str().unwrap();
        assert_eq!(run(["fgtt", "split", "--data", "/nonexistent.csv", "--out", out]), 2);
    }

    #[test]
    fn trial_configs_follow_point() {
        let cfg = RunConfig::default();
        let s = SearchSpace::fgtt_default();
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(3);
        let p = s.sample(&mut rng).unwrap();
        let (m, t) = trial_configs(&cfg, &s, &p).unwrap();
        assert_eq!(m.hidden_dim as f64, s.numeric(&p, "hidden_dim").unwrap());
        assert_eq!(t.learning_rate, s.numeric(&p, "learning_rate").unwrap());
        assert_eq!(t.max_epochs, cfg.search.max_epochs);
    }
}
