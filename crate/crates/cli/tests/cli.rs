use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pathe_core::config::RunConfig;
use pathe_core::eval::{EvalMode, Evaluator, Negatives};
use pathe_core::kg::{KnowledgeGraph, Triple, Vocab};
use pathe_core::model::{PathE, Task};
use pathe_core::paths::PathCorpus;
use pathe_core::synthetic::class_graph;
use pathe_tensor::{checkpoint, ParamStore};
use rand::SeedableRng;
use tempfile::TempDir;

fn pathe(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pathe"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write_split(path: &Path, triples: &[Triple]) {
    let text: String = triples
        .iter()
        .map(|t| format!("e{}\tr{}\te{}\n", t.head, t.rel, t.tail))
        .collect();
    fs::write(path, text).unwrap();
}

/// Class-structured toy graph as TSV files plus a small config, in a temp dir.
fn toy_run(task: &str) -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    let kg = class_graph(4, 15, (3, 5), 1);
    write_split(&dir.path().join("train.txt"), kg.train());
    write_split(&dir.path().join("valid.txt"), kg.valid());
    write_split(&dir.path().join("test.txt"), kg.test());
    let cfg = format!(
        "train = train.txt\nvalid = valid.txt\ntest = test.txt\ncorpus = run/corpus.txt\nout_dir = run\n\
         task = {task}\nnum_paths = 6\nmax_len = 3\ndim = 16\nppe = 2\nff_dim = 32\nheads = 2\n\
         negatives = 4\nvalid_negatives = 8\nbatch_size = 64\naccumulate = 1\nlr = 5e-3\nmax_epochs = 4\n"
    );
    fs::write(dir.path().join("toy.cfg"), cfg).unwrap();
    dir
}

fn mine_and_train(dir: &Path, extra: &[&str]) -> Output {
    let mined = pathe(dir, &["mine", "--config", "toy.cfg"]);
    assert_eq!(code(&mined), 0, "{}", stderr(&mined));
    let mut args = vec!["train", "--config", "toy.cfg"];
    args.extend_from_slice(extra);
    let out = pathe(dir, &args);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    out
}

#[test]
fn stats_on_single_triple() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("train.txt"), "a\tlikes\tb\n").unwrap();
    fs::write(dir.path().join("valid.txt"), "").unwrap();
    fs::write(dir.path().join("test.txt"), "").unwrap();
    let out = pathe(
        dir.path(),
        &[
            "stats",
            "--train",
            "train.txt",
            "--valid",
            "valid.txt",
            "--test",
            "test.txt",
            "--csv",
            "rel.csv",
        ],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("#Ent 2") && text.contains("#Rel 1"), "{text}");
    let csv = fs::read_to_string(dir.path().join("rel.csv")).unwrap();
    assert_eq!(csv, "relation_id,count,percent\n0,1,100.000000\n");
}

#[test]
fn stats_missing_file_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = pathe(
        dir.path(),
        &[
            "stats", "--train", "nope.txt", "--valid", "nope.txt", "--test", "nope.txt",
        ],
    );
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("nope.txt"));
}

#[test]
fn mining_is_reproducible_and_rejects_zero_paths() {
    let run = toy_run("rp");
    let dir = run.path();
    let args = [
        "mine",
        "--train",
        "train.txt",
        "--valid",
        "valid.txt",
        "--test",
        "test.txt",
        "--num-paths",
        "4",
        "--max-len",
        "5",
        "--seed",
        "9",
    ];
    let a = pathe(dir, &[&args[..], &["--out", "a.txt"]].concat());
    let b = pathe(dir, &[&args[..], &["--out", "b.txt"]].concat());
    assert_eq!((code(&a), code(&b)), (0, 0));
    assert!(stdout(&a).contains("60/60"), "{}", stdout(&a));
    assert_eq!(
        fs::read(dir.join("a.txt")).unwrap(),
        fs::read(dir.join("b.txt")).unwrap()
    );
    let zero = pathe(dir, &["mine", "--config", "toy.cfg", "--num-paths", "0"]);
    assert_eq!(code(&zero), 1);
}

#[test]
fn train_writes_artifacts_and_eval_matches_library() {
    let run = toy_run("lp");
    let dir = run.path();
    mine_and_train(dir, &[]);
    for f in ["model.ckpt", "config.cfg", "relations.txt", "train_log.csv"] {
        assert!(dir.join("run").join(f).exists(), "{f} missing");
    }
    let log = fs::read_to_string(dir.join("run/train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 5);
    let out = pathe(
        dir,
        &["eval", "--ckpt", "run/model.ckpt", "--negatives", "full"],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stdout(&out).contains("MRR") && stdout(&out).contains("Effi"));
    let cli_report = fs::read_to_string(dir.join("run/report.json")).unwrap();

    // the same evaluation through the library
    let cfg = RunConfig::parse(&fs::read_to_string(dir.join("run/config.cfg")).unwrap()).unwrap();
    let mut relations = Vocab::new();
    for r in fs::read_to_string(dir.join("run/relations.txt"))
        .unwrap()
        .lines()
    {
        relations.intern(r);
    }
    let kg = KnowledgeGraph::load_tsv_with_relations(
        &dir.join("train.txt"),
        &dir.join("valid.txt"),
        &dir.join("test.txt"),
        &relations,
    )
    .unwrap();
    let corpus = PathCorpus::load(&dir.join("run/corpus.txt")).unwrap();
    let mut store = ParamStore::<f32>::new();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let model = PathE::new(
        cfg.model_config(),
        Task::LinkPrediction,
        relations.len(),
        &mut store,
        &mut rng,
    )
    .unwrap();
    checkpoint::load_into(&mut store, &dir.join("run/model.ckpt")).unwrap();
    let evaluator = Evaluator::new(&model, &store, &kg, &corpus, cfg.seed).unwrap();
    let report = evaluator
        .evaluate(kg.test(), EvalMode::Transductive, Negatives::Full)
        .unwrap();
    assert_eq!(cli_report, report.to_json());
}

#[test]
fn eval_argument_and_task_errors() {
    let run = toy_run("rp");
    let dir = run.path();
    mine_and_train(dir, &[]);
    let inductive = pathe(
        dir,
        &["eval", "--ckpt", "run/model.ckpt", "--mode", "inductive"],
    );
    assert_eq!(code(&inductive), 1);
    let mismatch = pathe(dir, &["eval", "--ckpt", "run/model.ckpt", "--task", "lp"]);
    assert_eq!(code(&mismatch), 2);
    assert!(stderr(&mismatch).contains("trained for rp"));
    let bad = pathe(
        dir,
        &["eval", "--ckpt", "run/model.ckpt", "--negatives", "lots"],
    );
    assert_eq!(code(&bad), 1);
}

#[test]
fn inductive_eval_on_an_inference_graph() {
    let run = toy_run("lp");
    let dir = run.path();
    mine_and_train(dir, &[]);
    let inf = dir.join("inference");
    fs::create_dir(&inf).unwrap();
    // a disjoint copy of the graph: same relations, renamed entities
    for split in ["train", "valid", "test"] {
        let text = fs::read_to_string(dir.join(format!("{split}.txt"))).unwrap();
        fs::write(inf.join(format!("{split}.txt")), text.replace('e', "x")).unwrap();
    }
    let out = pathe(
        dir,
        &[
            "eval",
            "--ckpt",
            "run/model.ckpt",
            "--mode",
            "inductive",
            "--inference-dir",
            "inference",
        ],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("run/report_inductive.json")).unwrap())
            .unwrap();
    assert_eq!(report["mode"], "inductive");
    assert_eq!(report["negatives"], "sampled(50)");
}

#[test]
fn single_path_ablation_is_echoed() {
    let run = toy_run("rp");
    let dir = run.path();
    mine_and_train(dir, &["--task", "lp", "--set", "no_multiple_paths=true"]);
    let echo = RunConfig::load(&dir.join("run/config.cfg")).unwrap();
    assert_eq!(echo.task(), Task::LinkPrediction);
    assert_eq!(echo.model_config().ppe, 1);
}

#[test]
fn train_config_errors() {
    let run = toy_run("rp");
    let dir = run.path();
    let missing = pathe(dir, &["train", "--config", "toy.cfg"]);
    assert_eq!(code(&missing), 2);
    assert!(
        stderr(&missing).contains("run/corpus.txt"),
        "{}",
        stderr(&missing)
    );
    let typo = pathe(dir, &["train", "--config", "toy.cfg", "--set", "dimm=3"]);
    assert_eq!(code(&typo), 1);
    fs::write(dir.join("bad.cfg"), "dim = 16\nembedding_dim = 3\n").unwrap();
    let bad = pathe(dir, &["train", "--config", "bad.cfg"]);
    assert_eq!(code(&bad), 2);
    assert!(stderr(&bad).contains("line 2"));
}

#[test]
fn diverging_training_is_a_numeric_failure() {
    let run = toy_run("rp");
    let dir = run.path();
    let pathe_mine = pathe(dir, &["mine", "--config", "toy.cfg"]);
    assert_eq!(code(&pathe_mine), 0);
    let out = pathe(dir, &["train", "--config", "toy.cfg", "--set", "lr=1e30"]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
}

#[test]
fn positionals_one_row_per_position_and_deterministic() {
    let run = toy_run("rp");
    let dir = run.path();
    mine_and_train(dir, &[]);
    let a = pathe(
        dir,
        &["positionals", "--ckpt", "run/model.ckpt", "--out", "a.csv"],
    );
    let b = pathe(
        dir,
        &["positionals", "--ckpt", "run/model.ckpt", "--out", "b.csv"],
    );
    assert_eq!((code(&a), code(&b)), (0, 0));
    let csv = fs::read_to_string(dir.join("a.csv")).unwrap();
    assert_eq!(csv, fs::read_to_string(dir.join("b.csv")).unwrap());
    let positions: Vec<usize> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap().parse().unwrap())
        .collect();
    // max_len 3: ids 1..=2*3+1
    assert_eq!(positions, (1..=7).collect::<Vec<_>>());
    let missing = pathe(
        dir,
        &["positionals", "--ckpt", "nope.ckpt", "--out", "c.csv"],
    );
    assert_eq!(code(&missing), 2);
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

#[test]
fn shipped_configs_parse_and_validate() {
    let mut names: Vec<String> = fs::read_dir(configs())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    assert_eq!(
        names,
        [
            "codexl_lp.cfg",
            "fb15k237_lp.cfg",
            "fb15k237_rp.cfg",
            "wn18rr_lp.cfg",
            "wn18rr_rp.cfg",
            "yago310_lp.cfg"
        ]
    );
    for name in &names {
        let cfg = RunConfig::load(&configs().join(name)).unwrap();
        cfg.validate().unwrap();
        assert_eq!(
            cfg.task().as_str(),
            &name[name.len() - 6..name.len() - 4],
            "{name}"
        );
    }
    let wn = RunConfig::load(&configs().join("wn18rr_rp.cfg")).unwrap();
    let m = wn.model_config();
    assert_eq!(
        (
            m.dim,
            m.ppe,
            m.ff_dim,
            m.heads,
            m.layers,
            m.aggregator_layers
        ),
        (32, 2, 128, 4, 2, 1)
    );
    assert_eq!(
        RunConfig::load(&configs().join("fb15k237_lp.cfg"))
            .unwrap()
            .to_text(),
        {
            let mut d = RunConfig::default();
            for (k, v) in [
                ("train", "data/FB15k-237/train.txt"),
                ("valid", "data/FB15k-237/valid.txt"),
                ("test", "data/FB15k-237/test.txt"),
                ("corpus", "runs/fb15k237_lp/corpus.txt"),
                ("out_dir", "runs/fb15k237_lp"),
            ] {
                d.set(k, v).unwrap();
            }
            d.to_text()
        }
    );
}
