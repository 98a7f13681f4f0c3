use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use log::{info, warn};
use pathe_core::config::RunConfig;
use pathe_core::eval::{EvalMode, Evaluator, Negatives};
use pathe_core::kg::{KnowledgeGraph, Vocab};
use pathe_core::model::{PathE, Task, POSITIONAL_TABLE};
use pathe_core::paths::{mine_all, PathCorpus};
use pathe_core::pca::{positional_pca, to_csv};
use pathe_core::stats::structural_report;
use pathe_core::train::{log_csv, train as run_training};
use pathe_tensor::{checkpoint, ParamStore, Tensor};
use rand::SeedableRng;

use crate::{
    EvalArgs, MineArgs, ModeArg, PositionalsArgs, SplitPaths, StatsArgs, TaskArg, TrainArgs,
};

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const CONFIG_FILE: &str = "config.cfg";
pub const RELATIONS_FILE: &str = "relations.txt";
pub const LOG_FILE: &str = "train_log.csv";

/// Bad flags or flag combinations; exits with the usage code.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

impl TaskArg {
    fn task(self) -> Task {
        match self {
            TaskArg::Rp => Task::RelationPrediction,
            TaskArg::Lp => Task::LinkPrediction,
        }
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("cannot write {}", path.display()))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
}

fn split_paths(cfg: &RunConfig) -> Result<[PathBuf; 3]> {
    let need = |p: &Option<PathBuf>, key: &str| {
        p.clone()
            .ok_or_else(|| usage(format!("no `{key}` split given")))
    };
    Ok([
        need(&cfg.train, "train")?,
        need(&cfg.valid, "valid")?,
        need(&cfg.test, "test")?,
    ])
}

fn load_graph(cfg: &RunConfig) -> Result<KnowledgeGraph> {
    let [train, valid, test] = split_paths(cfg)?;
    Ok(KnowledgeGraph::load_tsv(&train, &valid, &test)?)
}

fn override_splits(cfg: &mut RunConfig, splits: SplitPaths) {
    cfg.train = splits.train.or(cfg.train.take());
    cfg.valid = splits.valid.or(cfg.valid.take());
    cfg.test = splits.test.or(cfg.test.take());
}

/// The configured corpus file, or an in-memory mine when none is configured.
fn corpus_for(cfg: &RunConfig, kg: &KnowledgeGraph) -> Result<PathCorpus> {
    let Some(path) = &cfg.corpus else {
        info!("no corpus file configured; mining paths in memory");
        return Ok(mine_all(kg, cfg.mining_params()));
    };
    if !path.exists() {
        bail!(
            "corpus file {} does not exist (run `pathe mine` first)",
            path.display()
        );
    }
    let corpus = PathCorpus::load(path)?;
    if corpus.params.max_len != cfg.model.max_len {
        warn!(
            "corpus was mined with max_len {} but the model uses {}; longer positions are clamped",
            corpus.params.max_len, cfg.model.max_len
        );
    }
    Ok(corpus)
}

fn non_isolated(kg: &KnowledgeGraph) -> usize {
    (0..kg.num_entities())
        .filter(|&e| !kg.out_edges(e).is_empty() || !kg.in_edges(e).is_empty())
        .count()
}

pub fn stats(a: StatsArgs) -> Result<()> {
    let mut cfg = RunConfig::default();
    override_splits(&mut cfg, a.splits);
    let kg = load_graph(&cfg)?;
    let report = structural_report(&kg);
    print!("{}", report.to_text());
    if let Some(csv) = a.csv {
        write(&csv, report.to_csv())?;
    }
    Ok(())
}

pub fn mine(a: MineArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    override_splits(&mut cfg, a.splits);
    if let Some(n) = a.num_paths {
        cfg.num_paths = n as usize;
    }
    if let Some(l) = a.max_len {
        cfg.model.max_len = l;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let out = a
        .out
        .or(cfg.corpus.clone())
        .ok_or_else(|| usage("no output file: pass --out or set `corpus`"))?;
    let kg = load_graph(&cfg)?;
    let corpus = mine_all(&kg, cfg.mining_params());
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    corpus.save(&out)?;
    let (covered, reachable) = (corpus.covered(kg.num_entities()), non_isolated(&kg));
    println!(
        "{} paths for {covered}/{reachable} non-isolated entities ({:.4}) written to {}",
        corpus.total_paths(),
        covered as f64 / reachable.max(1) as f64,
        out.display()
    );
    Ok(())
}

fn save_relations(path: &Path, relations: &Vocab) -> Result<()> {
    let mut text = relations.names().join("\n");
    text.push('\n');
    write(path, text)
}

fn load_relations(path: &Path) -> Result<Vocab> {
    let text =
        fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let mut vocab = Vocab::new();
    for name in text.lines() {
        vocab.intern(name);
    }
    Ok(vocab)
}

pub fn train(a: TrainArgs) -> Result<()> {
    let mut cfg = RunConfig::load(&a.config)?;
    if let Some(t) = a.task {
        cfg.training.task = t.task();
    }
    for pair in &a.overrides {
        cfg.set_pair(pair)
            .map_err(|e| usage(format!("--set {pair}: {e}")))?;
    }
    if let Some(out) = a.out {
        cfg.out_dir = Some(out);
    }
    cfg.validate()?;
    let out = cfg
        .out_dir
        .clone()
        .ok_or_else(|| usage("no output directory: pass --out or set `out_dir`"))?;
    let kg = load_graph(&cfg)?;
    let corpus = corpus_for(&cfg, &kg)?;
    eprint!("effective configuration:\n{}", cfg.to_text());
    create_dir(&out)?;
    write(&out.join(CONFIG_FILE), cfg.to_text())?;
    save_relations(&out.join(RELATIONS_FILE), kg.relations())?;

    let log_path = out.join(LOG_FILE);
    let mut epochs = Vec::new();
    let outcome = run_training(
        &kg,
        &corpus,
        &cfg.model_config(),
        &cfg.train_config(),
        |e| {
            epochs.push(e.clone());
            // keep the log current so an interrupted run still leaves its curve
            let _ = fs::write(&log_path, log_csv(&epochs));
        },
    )?;
    write(&log_path, log_csv(&outcome.log))?;
    let ckpt = out.join(CHECKPOINT_FILE);
    checkpoint::save(&outcome.store, &ckpt)
        .with_context(|| format!("cannot write {}", ckpt.display()))?;
    println!(
        "{} epochs{}, best epoch {}, {} parameters; checkpoint {}",
        outcome.log.len(),
        if outcome.stopped_early {
            " (early stop)"
        } else {
            ""
        },
        outcome.best_epoch,
        outcome.store.num_elements(),
        ckpt.display()
    );
    Ok(())
}

fn parse_negatives(arg: Option<&str>, mode: ModeArg) -> Result<Negatives> {
    match arg {
        None if mode == ModeArg::Inductive => Ok(Negatives::Sampled(50)),
        None | Some("full") => Ok(Negatives::Full),
        Some(n) => match n.parse::<usize>() {
            Ok(k) if k > 0 => Ok(Negatives::Sampled(k)),
            _ => Err(usage(format!(
                "--negatives expects `full` or a positive count, got `{n}`"
            ))),
        },
    }
}

/// Model and weights from a checkpoint and the config saved beside it.
pub fn load_model(ckpt: &Path) -> Result<(RunConfig, Vocab, PathE, ParamStore<f32>)> {
    let dir = ckpt.parent().unwrap_or(Path::new("."));
    let cfg_path = dir.join(CONFIG_FILE);
    let cfg = RunConfig::load(&cfg_path)
        .with_context(|| format!("no usable {CONFIG_FILE} next to the checkpoint"))?;
    let relations = load_relations(&dir.join(RELATIONS_FILE))?;
    let mut store = ParamStore::new();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let model = PathE::new(
        cfg.model_config(),
        cfg.task(),
        relations.len(),
        &mut store,
        &mut rng,
    )?;
    checkpoint::load_into(&mut store, ckpt)
        .with_context(|| format!("{} does not match {}", ckpt.display(), cfg_path.display()))?;
    Ok((cfg, relations, model, store))
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let negatives = parse_negatives(a.negatives.as_deref(), a.mode)?;
    match (a.mode, &a.inference_dir) {
        (ModeArg::Inductive, None) => {
            return Err(usage("inductive evaluation needs --inference-dir"))
        }
        (ModeArg::Transductive, Some(_)) => {
            return Err(usage("--inference-dir is only used in inductive mode"))
        }
        _ => {}
    }
    let (cfg, relations, model, store) = load_model(&a.ckpt)?;
    if let Some(t) = a.task {
        if t.task() != cfg.task() {
            bail!(
                "checkpoint was trained for {}, not {}",
                cfg.task().as_str(),
                t.task().as_str()
            );
        }
    }
    let (kg, corpus, mode) = match &a.inference_dir {
        None => {
            let [train, valid, test] = split_paths(&cfg)?;
            let kg = KnowledgeGraph::load_tsv_with_relations(&train, &valid, &test, &relations)?;
            let corpus = corpus_for(&cfg, &kg)?;
            (kg, corpus, EvalMode::Transductive)
        }
        Some(dir) => {
            let file = |n: &str| dir.join(n);
            let kg = KnowledgeGraph::load_tsv_with_relations(
                &file("train.txt"),
                &file("valid.txt"),
                &file("test.txt"),
                &relations,
            )?;
            let corpus = mine_all(&kg, cfg.mining_params());
            (kg, corpus, EvalMode::Inductive)
        }
    };
    if kg.test().is_empty() {
        bail!("the test split is empty");
    }
    let evaluator = Evaluator::new(&model, &store, &kg, &corpus, cfg.seed)?;
    let report = evaluator.evaluate(kg.test(), mode, negatives)?;
    print!("{}", report.to_text());
    let ckpt_dir = a.ckpt.parent().unwrap_or(Path::new(".")).to_path_buf();
    let out = a.out.unwrap_or_else(|| ckpt_dir.clone());
    create_dir(&out)?;
    let stem = match mode {
        EvalMode::Transductive => "report",
        EvalMode::Inductive => "report_inductive",
    };
    write(&out.join(format!("{stem}.json")), report.to_json())?;
    write(&out.join(format!("{stem}.txt")), report.to_text())?;
    if out != ckpt_dir {
        write(&out.join(CONFIG_FILE), cfg.to_text())?;
    }
    Ok(())
}

pub fn positionals(a: PositionalsArgs) -> Result<()> {
    let bytes = fs::read(&a.ckpt).with_context(|| format!("cannot read {}", a.ckpt.display()))?;
    let entries = checkpoint::decode(&bytes)
        .with_context(|| format!("cannot decode {}", a.ckpt.display()))?;
    let entry = entries
        .into_iter()
        .find(|e| e.name == POSITIONAL_TABLE)
        .ok_or_else(|| anyhow!("{} has no {POSITIONAL_TABLE} table", a.ckpt.display()))?;
    if entry.shape.len() != 2 || entry.shape[0] < 3 {
        bail!(
            "{POSITIONAL_TABLE} has shape {:?}; need at least two positions",
            entry.shape
        );
    }
    let table = Tensor::new(entry.shape, entry.values)?;
    let rows = positional_pca(&table);
    write(&a.out, to_csv(&rows))?;
    println!("{} positions written to {}", rows.len(), a.out.display());
    Ok(())
}
