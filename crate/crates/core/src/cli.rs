//! Command-line surface: `synth`, `optimize`, `eval-retrieval`,
//! `eval-stitch` and `report`.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::eval::{retrieval_eval, write_reports_csv, RetrievalReport, RetrievalScores};
use crate::io::{
    intersect_and_subsample, load_labeled_embeddings, load_run, load_word_embeddings, save_labeled_embeddings,
    save_run, save_word_embeddings, select_seed_and_candidates, EmbeddingFormat, RunArtifact, RUN_FORMAT,
    RUN_VERSION,
};
use crate::optimizer::{discretize_anchors, optimize_anchors, OptimizerConfig};
use crate::space::{AnchorSet, EmbeddingSpace, ParallelSeed};
use crate::stitch::{
    score, stitch_predict, train_classifier, write_stitch_csv, LabeledRelDataset, StitchReport, StitchScores,
    TrainConfig,
};
use crate::synth::{make_benchmark_pair, make_labeled_pair, SynthSpec};
use crate::transport::SinkhornConfig;

#[derive(Debug, Parser)]
#[command(name = "relanchor", version, about = "Discover parallel anchors between embedding spaces")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic source/target pair related by a random rotation.
    Synth(SynthArgs),
    /// Optimize target anchors from a small seed and save a run directory.
    Optimize(OptimizeArgs),
    /// Retrieval metrics for the anchors of one or more runs.
    EvalRetrieval(EvalRetrievalArgs),
    /// Train a linear head on one space, evaluate it on another.
    EvalStitch(EvalStitchArgs),
    /// GT / Seed / AO comparison over run directories.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 2000)]
    pub n: usize,
    #[arg(long, default_value_t = 64)]
    pub dim: usize,
    /// Gaussian noise added to the rotated target before normalization.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    /// Write labeled class clusters instead of isotropic points.
    #[arg(long)]
    pub classes: Option<usize>,
    /// Per-coordinate spread of class clusters.
    #[arg(long, default_value_t = 0.1)]
    pub spread: f64,
    /// Binary embedding files instead of text.
    #[arg(long)]
    pub binary: bool,
    #[arg(long, default_value_t = 0)]
    pub rng_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Profile {
    Retrieval,
    Stitching,
}

#[derive(Debug, Args)]
pub struct OptimizeArgs {
    #[arg(long)]
    pub src: PathBuf,
    #[arg(long)]
    pub tgt: PathBuf,
    /// File of seed pairs, one `src_key [tgt_key]` per line. Drawn at random
    /// from the shared vocabulary when omitted.
    #[arg(long)]
    pub seed_pairs: Option<PathBuf>,
    #[arg(long, default_value_t = 300)]
    pub n_anchors: usize,
    #[arg(long, default_value_t = 15)]
    pub n_seed: usize,
    /// Shared-vocabulary sample size.
    #[arg(long, default_value_t = 20000)]
    pub n_words: usize,
    #[arg(long, value_enum, default_value_t = Profile::Retrieval)]
    pub profile: Profile,
    /// Defaults to 250 (retrieval) or 125 (stitching).
    #[arg(long)]
    pub steps: Option<usize>,
    /// Defaults to 0.02 (retrieval) or 0.05 (stitching).
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, default_value_t = 1e-4)]
    pub sinkhorn_eps: f64,
    #[arg(long, default_value_t = 1)]
    pub sinkhorn_steps: usize,
    #[arg(long, default_value_t = 1e-5)]
    pub sinkhorn_stop: f64,
    #[arg(long, default_value_t = 0)]
    pub rng_seed: u64,
    /// Keep the seed rows fixed during optimization.
    #[arg(long)]
    pub freeze_seed: bool,
    /// Rows sampled per side each step; 0 means all.
    #[arg(long, default_value_t = 2000)]
    pub subsample: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Gt,
    Seed,
    Ao,
}

impl Method {
    fn label(self) -> &'static str {
        match self {
            Method::Gt => "GT",
            Method::Seed => "Seed",
            Method::Ao => "AO",
        }
    }
}

#[derive(Debug, Args)]
pub struct EvalRetrievalArgs {
    /// Run directories; scores are averaged over them.
    #[arg(long = "run", required = true)]
    pub runs: Vec<PathBuf>,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    #[arg(long, value_enum, default_value_t = Method::Ao)]
    pub method: Method,
    /// CSV destination; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalStitchArgs {
    /// Labeled embeddings the classifier is trained on.
    #[arg(long)]
    pub train_space: PathBuf,
    /// Labeled embeddings the classifier is evaluated on.
    #[arg(long)]
    pub test_space: PathBuf,
    /// Anchors from this run (source keys on the train side, discovered
    /// target keys on the test side).
    #[arg(long, conflicts_with = "anchors")]
    pub run: Option<PathBuf>,
    /// Anchor pairs file, one `train_key [test_key]` per line.
    #[arg(long)]
    pub anchors: Option<PathBuf>,
    /// With `--run`: which anchors of the run to use.
    #[arg(long, value_enum, default_value_t = Method::Ao)]
    pub method: Method,
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.05)]
    pub lr: f64,
    /// Fraction of shared keys held out for testing.
    #[arg(long, default_value_t = 0.2)]
    pub test_fraction: f64,
    /// Classifier/split seeds, e.g. `0..4` or `0,3,7`.
    #[arg(long, default_value = "0..4")]
    pub seeds: String,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(required = true)]
    pub runs: Vec<PathBuf>,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => cmd_synth(&a),
        Command::Optimize(a) => cmd_optimize(&a).map(|_| ()),
        Command::EvalRetrieval(a) => cmd_eval_retrieval(&a).map(|_| ()),
        Command::EvalStitch(a) => cmd_eval_stitch(&a).map(|_| ()),
        Command::Report(a) => cmd_report(&a).map(|_| ()),
    }
}

/// `a..b` (inclusive) or a comma list.
pub fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    let bad = || Error::InvalidConfig(format!("bad seed list {s:?}"));
    let seeds: Vec<u64> = if let Some((a, b)) = s.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| bad())?;
        let b: u64 = b.trim().parse().map_err(|_| bad())?;
        (a..=b).collect()
    } else {
        s.split(',')
            .map(|t| t.trim().parse().map_err(|_| bad()))
            .collect::<Result<_>>()?
    };
    if seeds.is_empty() {
        return Err(bad());
    }
    Ok(seeds)
}

fn write_or_print(out: Option<&Path>, f: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    match out {
        Some(p) => {
            let mut file = fs::File::create(p)?;
            f(&mut file)
        }
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            f(&mut lock)
        }
    }
}

#[derive(Serialize)]
struct SynthManifest {
    n: usize,
    dim: usize,
    noise_sigma: f64,
    classes: Option<usize>,
    spread: Option<f64>,
    rng_seed: u64,
    source: String,
    target: String,
    /// Shared keys are the ground-truth correspondence.
    correspondence: &'static str,
}

pub fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let spec = SynthSpec {
        n_samples: a.n,
        dim: a.dim,
        noise_sigma: a.noise,
        rng_seed: a.rng_seed,
        n_classes: a.classes,
    };
    let pair = match a.classes {
        Some(_) => make_labeled_pair(&spec, a.spread)?,
        None => make_benchmark_pair(&spec)?,
    };
    fs::create_dir_all(&a.out)?;
    let ext = if a.binary { "bin" } else { "txt" };
    let xp = a.out.join(format!("x.{ext}"));
    let yp = a.out.join(format!("y.{ext}"));
    match (&pair.labels_x, &pair.labels_y) {
        (Some(lx), Some(ly)) => {
            save_labeled_embeddings(&xp, &pair.x, lx)?;
            save_labeled_embeddings(&yp, &pair.y, ly)?;
        }
        _ => {
            let fmt = EmbeddingFormat::from_path(&xp);
            save_word_embeddings(&xp, &pair.x, fmt)?;
            save_word_embeddings(&yp, &pair.y, fmt)?;
        }
    }
    let manifest = SynthManifest {
        n: a.n,
        dim: a.dim,
        noise_sigma: a.noise,
        classes: a.classes,
        spread: a.classes.map(|_| a.spread),
        rng_seed: a.rng_seed,
        source: xp.display().to_string(),
        target: yp.display().to_string(),
        correspondence: "shared keys",
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    fs::write(a.out.join("manifest.json"), json + "\n")?;
    log::info!("wrote {} and {}", xp.display(), yp.display());
    Ok(())
}

/// Loads a space in either embedding format, ignoring labels if present.
fn load_any(path: &Path) -> Result<EmbeddingSpace> {
    let fmt = EmbeddingFormat::from_path(path);
    match load_word_embeddings(path, fmt) {
        Ok(s) => Ok(s),
        Err(e @ (Error::ParseError { .. } | Error::DimInconsistent { .. })) if fmt == EmbeddingFormat::Text => {
            load_labeled_embeddings(path).map(|(s, _)| s).map_err(|_| e)
        }
        Err(e) => Err(e),
    }
}

fn space_id(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn with_id(space: EmbeddingSpace, id: &str) -> Result<EmbeddingSpace> {
    space.subset(id, &(0..space.len()).collect::<Vec<_>>())
}

/// Lines of `a [b]`; a single key means the same key on both sides.
fn read_key_pairs(path: &Path) -> Result<Vec<(String, String)>> {
    let text = fs::read_to_string(path)?;
    let mut pairs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let mut it = line.split_whitespace();
        let Some(a) = it.next() else { continue };
        let b = it.next().unwrap_or(a);
        if it.next().is_some() {
            return Err(Error::ParseError {
                line: i + 1,
                msg: "expected one or two keys".into(),
            });
        }
        pairs.push((a.to_string(), b.to_string()));
    }
    Ok(pairs)
}

fn lookup(space: &EmbeddingSpace, keys: &[String]) -> Result<Vec<usize>> {
    keys.iter()
        .map(|k| space.index_of(k).ok_or_else(|| Error::MissingKey(k.clone())))
        .collect()
}

struct Prepared {
    keys: Vec<String>,
    x: EmbeddingSpace,
    y: EmbeddingSpace,
    seed: ParallelSeed,
    anchors_x: AnchorSet,
}

fn prepare(a: &OptimizeArgs) -> Result<Prepared> {
    let src = with_id(load_any(&a.src)?, &space_id(&a.src))?;
    let tgt = with_id(load_any(&a.tgt)?, &space_id(&a.tgt))?;
    let (keys, x, y) = intersect_and_subsample(&src, &tgt, a.n_words, a.rng_seed)?;
    let Some(path) = &a.seed_pairs else {
        let draw = select_seed_and_candidates(&keys, &x, &y, a.n_seed, a.n_anchors, a.rng_seed)?;
        return Ok(Prepared {
            keys,
            x,
            y,
            seed: draw.seed,
            anchors_x: draw.anchors_x,
        });
    };
    let pairs = read_key_pairs(path)?;
    if pairs.len() != a.n_seed {
        return Err(Error::InvalidConfig(format!(
            "seed file has {} pairs, --n-seed is {}",
            pairs.len(),
            a.n_seed
        )));
    }
    if a.n_seed > a.n_anchors {
        return Err(Error::SeedExceedsTotal {
            seed: a.n_seed,
            total: a.n_anchors,
        });
    }
    let (kx, ky): (Vec<String>, Vec<String>) = pairs.into_iter().unzip();
    let seed = ParallelSeed::new(AnchorSet::new(&x, lookup(&x, &kx)?)?, AnchorSet::new(&y, lookup(&y, &ky)?)?)?;
    let taken: HashSet<&String> = kx.iter().collect();
    let pool: Vec<&String> = keys.iter().filter(|k| !taken.contains(k)).collect();
    let extra = a.n_anchors - a.n_seed;
    if extra > pool.len() {
        return Err(Error::NotEnoughKeys {
            needed: a.n_anchors,
            available: pool.len() + a.n_seed,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(a.rng_seed);
    let mut idx = seed.x.indices.clone();
    for i in sample(&mut rng, pool.len(), extra) {
        idx.push(x.index_of(pool[i]).expect("pool drawn from x keys"));
    }
    let anchors_x = AnchorSet::new(&x, idx)?;
    Ok(Prepared {
        keys,
        x,
        y,
        seed,
        anchors_x,
    })
}

pub fn optimizer_config(a: &OptimizeArgs) -> OptimizerConfig {
    let mut cfg = match a.profile {
        Profile::Retrieval => OptimizerConfig::retrieval(),
        Profile::Stitching => OptimizerConfig::stitching(),
    };
    cfg.total_anchors = a.n_anchors;
    cfg.seed_anchors = a.n_seed;
    if let Some(s) = a.steps {
        cfg.steps = s;
    }
    if let Some(lr) = a.lr {
        cfg.learning_rate = lr;
    }
    cfg.sinkhorn = SinkhornConfig {
        eps: a.sinkhorn_eps,
        max_steps: a.sinkhorn_steps,
        stop_error: a.sinkhorn_stop,
    };
    cfg.rng_seed = a.rng_seed;
    cfg.frozen_seed = a.freeze_seed;
    cfg.subsample_per_step = (a.subsample > 0).then_some(a.subsample);
    cfg
}

pub fn cmd_optimize(a: &OptimizeArgs) -> Result<RunArtifact> {
    let cfg = optimizer_config(a);
    cfg.validate()?;
    let p = prepare(a)?;
    log::info!(
        "optimizing {} anchors from {} seed pairs over {} shared words",
        cfg.total_anchors,
        cfg.seed_anchors,
        p.keys.len()
    );
    let result = optimize_anchors(&p.x, &p.anchors_x, &p.y, &p.seed, &cfg)?;
    let (anchors_y, collisions) = discretize_anchors(&result.estimate, &p.y)?;
    if collisions > 0 {
        log::warn!("{collisions} discretized anchors collide");
    }
    let keys_of = |s: &EmbeddingSpace, idx: &[usize]| idx.iter().map(|&i| s.keys()[i].clone()).collect::<Vec<_>>();
    let run = RunArtifact {
        format: RUN_FORMAT.to_string(),
        version: RUN_VERSION.to_string(),
        method: "AO".to_string(),
        source_path: a.src.display().to_string(),
        target_path: a.tgt.display().to_string(),
        source_id: p.x.id().to_string(),
        target_id: p.y.id().to_string(),
        n_words: a.n_words,
        config: cfg,
        seed_x: p.seed.x.indices.clone(),
        seed_y: p.seed.y.indices.clone(),
        anchors_x: result.anchors_x.indices.clone(),
        anchors_y: anchors_y.indices.clone(),
        anchor_keys_x: keys_of(&p.x, &result.anchors_x.indices),
        anchor_keys_y: keys_of(&p.y, &anchors_y.indices),
        collisions,
        seed_count: p.seed.len(),
        raw: Some(result.estimate.raw().to_owned()),
        trace: result.trace,
        reports: Vec::new(),
    };
    save_run(&a.out, &run)?;
    if let (Some(l0), Some(l1)) = (run.trace.initial_loss(), run.trace.final_loss()) {
        log::info!("mse {l0:.4e} -> {l1:.4e}; saved {}", a.out.display());
    }
    Ok(run)
}

/// Reloads the aligned spaces a run worked on.
pub fn run_spaces(run: &RunArtifact) -> Result<(Vec<String>, EmbeddingSpace, EmbeddingSpace)> {
    let src = with_id(load_any(Path::new(&run.source_path))?, &run.source_id)?;
    let tgt = with_id(load_any(Path::new(&run.target_path))?, &run.target_id)?;
    intersect_and_subsample(&src, &tgt, run.n_words, run.config.rng_seed)
}

/// Anchor sets of a run for one method.
pub fn run_anchors(
    run: &RunArtifact,
    method: Method,
    x: &EmbeddingSpace,
    y: &EmbeddingSpace,
) -> Result<(AnchorSet, AnchorSet)> {
    match method {
        Method::Ao => run.anchors(x, y),
        Method::Seed => Ok((
            AnchorSet::new(x, run.seed_x.clone())?,
            AnchorSet::new(y, run.seed_y.clone())?,
        )),
        Method::Gt => {
            let idx = lookup(y, &run.anchor_keys_x)?;
            Ok((AnchorSet::new(x, run.anchors_x.clone())?, AnchorSet::new(y, idx)?))
        }
    }
}

pub fn evaluate_run(run: &RunArtifact, method: Method, k: usize) -> Result<RetrievalScores> {
    let (keys, x, y) = run_spaces(run)?;
    let (ax, ay) = run_anchors(run, method, &x, &y)?;
    retrieval_eval(&x, &y, &ax, &ay, &keys, k)
}

pub fn cmd_eval_retrieval(a: &EvalRetrievalArgs) -> Result<Vec<RetrievalReport>> {
    let mut groups: BTreeMap<(String, String), Vec<RetrievalScores>> = BTreeMap::new();
    for dir in &a.runs {
        let run = load_run(dir)?;
        let scores = evaluate_run(&run, a.method, a.k)?;
        groups
            .entry((run.source_id.clone(), run.target_id.clone()))
            .or_default()
            .push(scores);
    }
    let reports = groups
        .iter()
        .map(|((s, t), runs)| RetrievalReport::aggregate(s, t, a.method.label(), runs))
        .collect::<Result<Vec<_>>>()?;
    write_or_print(a.out.as_deref(), |w| write_reports_csv(w, &reports))?;
    Ok(reports)
}

pub fn cmd_report(a: &ReportArgs) -> Result<Vec<RetrievalReport>> {
    let mut groups: BTreeMap<(String, String), Vec<RunArtifact>> = BTreeMap::new();
    for dir in &a.runs {
        let run = load_run(dir)?;
        groups
            .entry((run.source_id.clone(), run.target_id.clone()))
            .or_default()
            .push(run);
    }
    let mut reports = Vec::new();
    for ((s, t), runs) in &groups {
        let mut per_method: Vec<Vec<RetrievalScores>> = vec![Vec::new(); 3];
        for run in runs {
            let (keys, x, y) = run_spaces(run)?;
            for (slot, m) in [Method::Gt, Method::Seed, Method::Ao].into_iter().enumerate() {
                let (ax, ay) = run_anchors(run, m, &x, &y)?;
                per_method[slot].push(retrieval_eval(&x, &y, &ax, &ay, &keys, a.k)?);
            }
        }
        for (slot, m) in [Method::Gt, Method::Seed, Method::Ao].into_iter().enumerate() {
            reports.push(RetrievalReport::aggregate(s, t, m.label(), &per_method[slot])?);
        }
    }
    for r in &reports {
        println!("{r}");
    }
    if let Some(p) = &a.out {
        write_reports_csv(fs::File::create(p)?, &reports)?;
    }
    Ok(reports)
}

/// Seeded train/test split of `keys` (sorted first).
fn split_keys(keys: &[String], test_fraction: f64, seed: u64) -> (Vec<String>, Vec<String>) {
    let mut sorted = keys.to_vec();
    sorted.sort();
    let n_test = ((sorted.len() as f64) * test_fraction).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut test_idx = sample(&mut rng, sorted.len(), n_test).into_vec();
    test_idx.sort_unstable();
    let test_set: HashSet<usize> = test_idx.iter().copied().collect();
    let test = test_idx.iter().map(|&i| sorted[i].clone()).collect();
    let train = (0..sorted.len())
        .filter(|i| !test_set.contains(i))
        .map(|i| sorted[i].clone())
        .collect();
    (train, test)
}

/// Relative dataset for the rows of `keys` against anchors `anchor_keys`.
fn dataset(
    space: &EmbeddingSpace,
    labels: &[usize],
    keys: &[String],
    anchor_keys: &[String],
) -> Result<LabeledRelDataset> {
    let rows = lookup(space, keys)?;
    let anchors = AnchorSet::new(space, lookup(space, anchor_keys)?)?;
    let values = anchors.project(space)?.values.select(ndarray::Axis(0), &rows);
    LabeledRelDataset::new(
        crate::space::RelativeRepresentation { values },
        rows.iter().map(|&i| labels[i]).collect(),
    )
}

/// Stitching scores for one split seed: `(in_domain, stitched)`.
#[allow(clippy::too_many_arguments)]
pub fn stitch_once(
    train_space: &EmbeddingSpace,
    train_labels: &[usize],
    test_space: &EmbeddingSpace,
    test_labels: &[usize],
    anchor_keys_train: &[String],
    anchor_keys_test: &[String],
    cfg: &TrainConfig,
    test_fraction: f64,
) -> Result<(StitchScores, StitchScores)> {
    if !(0.0..1.0).contains(&test_fraction) || test_fraction == 0.0 {
        return Err(Error::InvalidConfig("test fraction must be in (0, 1)".into()));
    }
    let shared: Vec<String> = train_space
        .keys()
        .iter()
        .filter(|k| test_space.index_of(k).is_some())
        .cloned()
        .collect();
    if shared.is_empty() {
        return Err(Error::EmptyIntersection);
    }
    let (train_keys, test_keys) = split_keys(&shared, test_fraction, cfg.rng_seed);
    let train = dataset(train_space, train_labels, &train_keys, anchor_keys_train)?;
    let clf = train_classifier(&train, cfg, train_space.id())?;
    let own = dataset(train_space, train_labels, &test_keys, anchor_keys_train)?;
    let other = dataset(test_space, test_labels, &test_keys, anchor_keys_test)?;
    let in_domain = score(&stitch_predict(&clf, &own.rel)?, &own.labels)?;
    let stitched = score(&stitch_predict(&clf, &other.rel)?, &other.labels)?;
    Ok((in_domain, stitched))
}

pub fn cmd_eval_stitch(a: &EvalStitchArgs) -> Result<Vec<StitchReport>> {
    let (train_space, train_labels) = load_labeled_embeddings(&a.train_space)?;
    let train_space = with_id(train_space, &space_id(&a.train_space))?;
    let (test_space, test_labels) = load_labeled_embeddings(&a.test_space)?;
    let test_space = with_id(test_space, &space_id(&a.test_space))?;
    let (method, ka, kb) = match (&a.run, &a.anchors) {
        (Some(dir), _) => {
            let run = load_run(dir)?;
            let (ka, kb) = match a.method {
                Method::Ao => (run.anchor_keys_x.clone(), run.anchor_keys_y.clone()),
                Method::Gt => (run.anchor_keys_x.clone(), run.anchor_keys_x.clone()),
                Method::Seed => seed_keys(&run)?,
            };
            (a.method.label().to_string(), ka, kb)
        }
        (None, Some(path)) => {
            let (kx, ky) = read_key_pairs(path)?.into_iter().unzip();
            ("custom".to_string(), kx, ky)
        }
        (None, None) => return Err(Error::InvalidConfig("one of --run or --anchors is required".into())),
    };
    stitch_reports(a, &train_space, &train_labels, &test_space, &test_labels, &method, &ka, &kb)
}

fn seed_keys(run: &RunArtifact) -> Result<(Vec<String>, Vec<String>)> {
    let (_, x, y) = run_spaces(run)?;
    let kx = run.seed_x.iter().map(|&i| x.keys()[i].clone()).collect();
    let ky = run.seed_y.iter().map(|&i| y.keys()[i].clone()).collect();
    Ok((kx, ky))
}

#[allow(clippy::too_many_arguments)]
fn stitch_reports(
    a: &EvalStitchArgs,
    train_space: &EmbeddingSpace,
    train_labels: &[usize],
    test_space: &EmbeddingSpace,
    test_labels: &[usize],
    method: &str,
    ka: &[String],
    kb: &[String],
) -> Result<Vec<StitchReport>> {
    let mut own = Vec::new();
    let mut cross = Vec::new();
    for seed in parse_seeds(&a.seeds)? {
        let cfg = TrainConfig {
            epochs: a.epochs,
            learning_rate: a.lr,
            rng_seed: seed,
        };
        let (i, s) = stitch_once(train_space, train_labels, test_space, test_labels, ka, kb, &cfg, a.test_fraction)?;
        own.push(i);
        cross.push(s);
    }
    let reports = vec![
        StitchReport::aggregate(train_space.id(), train_space.id(), method, &own)?,
        StitchReport::aggregate(train_space.id(), test_space.id(), method, &cross)?,
    ];
    write_or_print(a.out.as_deref(), |w| write_stitch_csv(w, &reports))?;
    Ok(reports)
}
