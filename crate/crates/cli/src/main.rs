//! Command-line driver: one experiment per configuration file.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use switchgan::checkpoint::list_iteration_dirs;
use switchgan::classifier::{write_history, Classifier};
use switchgan::config::{DataSource, ExperimentConfig};
use switchgan::dataset::{assemble_dataset, synth_toy_corpus, Corpus, Split};
use switchgan::eval::fid;
use switchgan::experiment::{
    read_json, read_trend, run_mode, write_json, write_trend, AugmentMode, EvalRecord, FidProbe, ModeInputs, Prepared,
};
use switchgan::gan::{resample_conditions, GanTrainer};
use switchgan::report;
use switchgan::{Error, Result};
use switchgan_tensor::io::save_named;
use switchgan_tensor::Tensor;

#[derive(Parser)]
#[command(name = "switchgan", version, about = "F0-conditioned GAN augmentation experiments for code-switched language identification")]
struct Cli {
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the experiment, GAN and classifier seeds.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Replace existing outputs of the command.
    #[arg(long, global = true)]
    force: bool,
    /// Overrides the output directory.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build or load the corpus, split it, simulate imbalance, cache features.
    PrepareData,
    /// Train the conditional GAN on the minority class.
    TrainGan,
    /// Draw spectrograms from the latest GAN checkpoint.
    SampleGan {
        /// Number of samples; default brings the minority class to its balance target.
        #[arg(long)]
        count: Option<usize>,
    },
    /// Train the classifier under one augmentation mode.
    TrainClassifier {
        #[arg(long, value_parser = parse_mode)]
        mode: AugmentMode,
    },
    /// Score trained classifiers on the test split.
    Evaluate {
        /// Evaluate a single mode instead of every trained one.
        #[arg(long, value_parser = parse_mode)]
        mode: Option<AugmentMode>,
    },
    /// FID trend over GAN checkpoints and FID by sample size.
    Fid,
    /// Comparison tables and charts from the evaluation records.
    Report,
}

fn parse_mode(s: &str) -> std::result::Result<AugmentMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Output locations under the experiment root.
struct Layout {
    root: PathBuf,
}

impl Layout {
    fn data(&self) -> PathBuf {
        self.root.join("data")
    }
    fn gan(&self) -> PathBuf {
        self.root.join("gan")
    }
    fn samples(&self) -> PathBuf {
        self.root.join("samples")
    }
    fn classifier(&self, mode: AugmentMode) -> PathBuf {
        self.root.join("classifier").join(mode.name())
    }
    fn eval(&self) -> PathBuf {
        self.root.join("eval")
    }
    fn fid(&self) -> PathBuf {
        self.root.join("fid")
    }
    fn report(&self) -> PathBuf {
        self.root.join("report")
    }
}

struct Ctx {
    cfg: ExperimentConfig,
    layout: Layout,
    force: bool,
}

impl Ctx {
    /// Claims an output directory: refuses an existing non-empty one unless
    /// forced, then writes the config snapshot into it.
    fn claim(&self, dir: &Path) -> Result<()> {
        let occupied = dir.is_dir() && fs::read_dir(dir).map_err(|e| io(dir, e))?.next().is_some();
        if occupied {
            if !self.force {
                return Err(Error::Exists(dir.to_path_buf()));
            }
            fs::remove_dir_all(dir).map_err(|e| io(dir, e))?;
        }
        fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
        let snapshot = dir.join("config.toml");
        fs::write(&snapshot, self.cfg.to_toml()?).map_err(|e| io(&snapshot, e))
    }

    fn prepared(&self) -> Result<Prepared> {
        let dir = self.layout.data();
        if !dir.join("manifest.jsonl").exists() {
            return Err(Error::Prerequisite(format!("no prepared data in {}; run prepare-data first", dir.display())));
        }
        Prepared::load(&dir)
    }

    fn latest_gan(&self) -> Result<GanTrainer> {
        let dirs = self.gan_checkpoints()?;
        let (_, dir) = dirs.last().expect("non-empty checkpoint list");
        GanTrainer::load(dir)
    }

    fn gan_checkpoints(&self) -> Result<Vec<(u64, PathBuf)>> {
        let root = self.layout.gan();
        let dirs = if root.is_dir() { list_iteration_dirs(&root)? } else { Vec::new() };
        if dirs.is_empty() {
            return Err(Error::Prerequisite(format!("no GAN checkpoint in {}; run train-gan first", root.display())));
        }
        Ok(dirs)
    }

    fn classifier(&self, mode: AugmentMode) -> Result<Classifier> {
        let dir = self.layout.classifier(mode).join("checkpoint");
        if !dir.join("meta.json").exists() {
            return Err(Error::Prerequisite(format!(
                "no {mode} classifier in {}; run train-classifier --mode {mode} first",
                dir.display()
            )));
        }
        Classifier::load(&dir)
    }
}

fn io(path: &Path, e: std::io::Error) -> Error {
    Error::Io { path: path.to_path_buf(), source: e }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| io(path, e))
}

fn prepare_data(ctx: &Ctx) -> Result<()> {
    let dir = ctx.layout.data();
    ctx.claim(&dir)?;
    let d = &ctx.cfg.dataset;
    let corpus: Corpus = match d.source {
        DataSource::Toy => synth_toy_corpus(&d.toy, ctx.cfg.seed)?,
        DataSource::Files => assemble_dataset(&d.sources, &d.assemble, ctx.cfg.seed)?,
    };
    let (mut prepared, mut kept) = Prepared::from_corpus(&corpus, &ctx.cfg)?;
    kept.write_audio(&dir, "audio")?;
    prepared.manifest = kept.manifest;
    prepared.save(&dir)?;
    for class in &prepared.manifest.class_names {
        let [train, val, test] = [Split::Train, Split::Val, Split::Test].map(|s| prepared.indices(s, Some(class)).len());
        println!("{class}: train {train}, val {val}, test {test}");
    }
    println!("prepared data written to {}", dir.display());
    Ok(())
}

fn train_gan(ctx: &Ctx) -> Result<()> {
    let prepared = ctx.prepared()?;
    let dir = ctx.layout.gan();
    ctx.claim(&dir)?;
    let data = prepared.gan_data(&ctx.cfg.dataset.minority_class)?;
    let mut trainer = GanTrainer::new(ctx.cfg.gan.clone())?;
    trainer.norm_stats = Some(prepared.stats.spec.clone());
    trainer.cond_stats = Some(prepared.stats.semitone.clone());
    trainer.train_until(&data, ctx.cfg.gan.total_iterations, Some(&dir))?;
    println!("trained {} GAN iterations on {} examples; checkpoints in {}", trainer.iteration, data.len(), dir.display());
    Ok(())
}

fn sample_gan(ctx: &Ctx, count: Option<usize>) -> Result<()> {
    let prepared = ctx.prepared()?;
    let trainer = ctx.latest_gan()?;
    let dir = ctx.layout.samples();
    ctx.claim(&dir)?;
    let class = &ctx.cfg.dataset.minority_class;
    let current = prepared.indices(Split::Train, Some(class)).len();
    let n = count.unwrap_or_else(|| prepared.balance_target(&ctx.cfg).saturating_sub(current));
    let pool = prepared.conditions(Split::Train, class)?;
    let conds = resample_conditions(&pool, n, ctx.cfg.dataset.condition_jitter, ctx.cfg.seed)?;
    let specs = trainer.sample(&conds, ctx.cfg.seed)?;
    let flat_specs = specs.iter().flat_map(|s| s.values().iter().copied()).collect();
    let flat_conds = conds.iter().flat_map(|c| c.values().iter().copied()).collect();
    let items = [
        ("spectrograms".to_string(), Tensor::new(vec![n, 128, 128], flat_specs)),
        ("conditions".to_string(), Tensor::new(vec![n, 128], flat_conds)),
    ]
    .into_iter()
    .collect();
    save_named(&dir, &items)?;
    println!("{n} samples (norm_pm1) from iteration {} written to {}", trainer.iteration, dir.display());
    Ok(())
}

#[derive(serde::Serialize, serde::Deserialize)]
struct TrainRecord {
    mode: AugmentMode,
    best_epoch: usize,
    epochs_run: usize,
    synthetic: usize,
}

fn train_classifier(ctx: &Ctx, mode: AugmentMode) -> Result<()> {
    let prepared = ctx.prepared()?;
    let gan = if mode == AugmentMode::Gan { Some(ctx.latest_gan()?) } else { None };
    let audio = match mode {
        AugmentMode::Stretch | AugmentMode::Pitch => Some(Corpus::load(prepared.manifest.clone(), &ctx.layout.data())?.clips),
        _ => None,
    };
    let dir = ctx.layout.classifier(mode);
    ctx.claim(&dir)?;
    let inputs = ModeInputs { audio: audio.as_deref(), gan: gan.as_ref() };
    let outcome = run_mode(&prepared, &ctx.cfg, mode, &inputs)?;
    outcome.trained.to_checkpoint(&ctx.cfg.classifier).save(&dir.join("checkpoint"))?;
    write_history(&dir.join("history.csv"), &outcome.trained.history)?;
    let record = TrainRecord {
        mode,
        best_epoch: outcome.trained.best_epoch,
        epochs_run: outcome.trained.history.len(),
        synthetic: outcome.synthetic,
    };
    write_json(&dir.join("train.json"), &record)?;
    println!(
        "{mode}: best epoch {} of {}, {} synthetic examples; test UAR {:.4}",
        record.best_epoch, record.epochs_run, record.synthetic, outcome.test.uar
    );
    Ok(())
}

fn evaluate(ctx: &Ctx, only: Option<AugmentMode>) -> Result<()> {
    let prepared = ctx.prepared()?;
    let modes: Vec<AugmentMode> = match only {
        Some(m) => vec![m],
        None => AugmentMode::ALL
            .into_iter()
            .filter(|m| ctx.layout.classifier(*m).join("checkpoint").join("meta.json").exists())
            .collect(),
    };
    if modes.is_empty() {
        return Err(Error::Prerequisite("no trained classifiers; run train-classifier first".into()));
    }
    let models = modes.iter().map(|&m| ctx.classifier(m)).collect::<Result<Vec<_>>>()?;
    let dir = ctx.layout.eval();
    if only.is_none() {
        ctx.claim(&dir)?;
    } else {
        let target = dir.join(format!("{}.json", modes[0].name()));
        if target.exists() && !ctx.force {
            return Err(Error::Exists(target));
        }
        fs::create_dir_all(&dir).map_err(|e| io(&dir, e))?;
    }
    let test = prepared.labeled(Split::Test)?;
    for (mode, model) in modes.into_iter().zip(models) {
        let train: TrainRecord = read_json(&ctx.layout.classifier(mode).join("train.json"))?;
        let record = EvalRecord {
            mode,
            test_hash: prepared.test_hash(),
            n_test: test.len(),
            synthetic: train.synthetic,
            metrics: model.evaluate(&test)?,
        };
        record.save(&dir.join(format!("{}.json", mode.name())))?;
        println!("{mode}: accuracy {:.4}, UAR {:.4}", record.metrics.accuracy, record.metrics.uar);
    }
    Ok(())
}

fn fid_command(ctx: &Ctx) -> Result<()> {
    let prepared = ctx.prepared()?;
    let checkpoints = ctx.gan_checkpoints()?;
    let extractor = ctx.classifier(AugmentMode::None)?;
    let dir = ctx.layout.fid();
    ctx.claim(&dir)?;
    let class = &ctx.cfg.dataset.minority_class;
    let real = prepared.class_inputs(class)?;
    let pool = prepared.conditions(Split::Train, class)?;
    let probe = FidProbe::new(&extractor, &real, &pool, &prepared.stats, ctx.cfg.dataset.condition_jitter, ctx.cfg.seed)?;

    let trend = probe.trend(&checkpoints, ctx.cfg.evaluation.fid_trend_samples)?;
    write_trend(&dir.join("trend.csv"), &trend)?;

    let (_, last_dir) = checkpoints.last().expect("non-empty checkpoint list");
    let trainer = GanTrainer::load(last_dir)?;
    let table = ctx
        .cfg
        .evaluation
        .fid_sample_sizes
        .iter()
        .map(|&n| Ok((n, probe.fid(&trainer, n)?)))
        .collect::<Result<Vec<_>>>()?;
    write_text(&dir.join("table.csv"), &report::fid_table_csv(&table))?;

    let feats = extractor.extract_features(&real)?;
    let half = feats.len() / 2;
    let real_split = fid(&feats[..half], &feats[half..])?;
    write_json(&dir.join("reference.json"), &serde_json::json!({ "real_split_fid": real_split, "real_examples": feats.len() }))?;

    print!("{}", report::fid_table(&table));
    println!("real-vs-real split FID {real_split:.4}; trend over {} checkpoints in {}", trend.len(), dir.display());
    Ok(())
}

fn report_command(ctx: &Ctx) -> Result<()> {
    let records: Vec<EvalRecord> = AugmentMode::ALL
        .into_iter()
        .map(|m| ctx.layout.eval().join(format!("{}.json", m.name())))
        .filter(|p| p.exists())
        .map(|p| EvalRecord::load(&p))
        .collect::<Result<_>>()?;
    if records.is_empty() {
        return Err(Error::Prerequisite("no evaluation records; run evaluate first".into()));
    }
    let dir = ctx.layout.report();
    ctx.claim(&dir)?;
    let class = &ctx.cfg.dataset.minority_class;
    let mut md = String::from("# Augmentation comparison\n\n## Test accuracy\n\n");
    md.push_str(&report::accuracy_table(&records));
    md.push_str(&format!("\n## Minority class ({class})\n\n"));
    md.push_str(&report::class_table(&records, class));
    if records.windows(2).any(|w| w[0].test_hash != w[1].test_hash) {
        md.push_str("\nWarning: the modes were evaluated on different test sets.\n");
    }
    let fid_dir = ctx.layout.fid();
    if fid_dir.join("table.csv").exists() {
        let table = read_fid_table(&fid_dir.join("table.csv"))?;
        md.push_str("\n## FID by number of generated samples\n\n");
        md.push_str(&report::fid_table(&table));
        let trend = read_trend(&fid_dir.join("trend.csv"))?;
        md.push_str("\n## FID over training\n\n| Iteration | FID |\n|---|---|\n");
        for (it, f) in trend {
            md.push_str(&format!("| {it} | {f:.4} |\n"));
        }
    }
    write_text(&dir.join("report.md"), &md)?;
    write_text(&dir.join("uar.svg"), &report::uar_chart(&records))?;
    write_text(&dir.join("precision.svg"), &report::classwise_chart(&records, false))?;
    write_text(&dir.join("recall.svg"), &report::classwise_chart(&records, true))?;
    print!("{md}");
    Ok(())
}

fn read_fid_table(path: &Path) -> Result<Vec<(usize, f64)>> {
    let text = fs::read_to_string(path).map_err(|e| io(path, e))?;
    let bad = |line: usize| Error::Parse { path: path.to_path_buf(), line, detail: "expected `n,fid`".into() };
    text.lines()
        .enumerate()
        .skip(1)
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let (a, b) = l.split_once(',').ok_or_else(|| bad(i + 1))?;
            Ok((a.trim().parse().map_err(|_| bad(i + 1))?, b.trim().parse().map_err(|_| bad(i + 1))?))
        })
        .collect()
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let path = cli.config.as_ref().ok_or_else(|| Error::Config("--config PATH is required".into()))?;
    let mut cfg = ExperimentConfig::load(path).map_err(|e| match e {
        Error::Config(_) => e,
        other => Error::Config(other.to_string()),
    })?;
    if let Some(seed) = cli.seed {
        cfg.override_seed(seed);
    }
    if let Some(out) = &cli.output {
        cfg.output = out.clone();
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    let ctx = Ctx { layout: Layout { root: cfg.output.clone() }, cfg, force: cli.force };
    match &cli.command {
        Command::PrepareData => prepare_data(&ctx),
        Command::TrainGan => train_gan(&ctx),
        Command::SampleGan { count } => sample_gan(&ctx, *count),
        Command::TrainClassifier { mode } => train_classifier(&ctx, *mode),
        Command::Evaluate { mode } => evaluate(&ctx, *mode),
        Command::Fid => fid_command(&ctx),
        Command::Report => report_command(&ctx),
    }
}

/// 2: configuration or usage, 3: missing prerequisite, 4: numerical failure.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Exists(_) => 2,
        Error::Prerequisite(_) | Error::MissingFile(_) => 3,
        Error::Numerical(_) | Error::DegenerateRange { .. } => 4,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
