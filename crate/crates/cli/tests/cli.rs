//! Exit codes and edge behavior of the `hml` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn hml(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hml"))
        .env_remove("HML_LOG")
        .args(args)
        .output()
        .unwrap()
}

fn code(out: &Output) -> Option<i32> {
    out.status.code()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// Small world, graph and trained model shared by several tests.
struct Fixture {
    _tmp: tempfile::TempDir,
    dir: PathBuf,
    cfg: PathBuf,
}

impl Fixture {
    fn new(config: &str) -> Self {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().to_path_buf();
        let cfg = dir.join("config.json");
        std::fs::write(&cfg, config).unwrap();
        Fixture {
            _tmp: tmp,
            dir,
            cfg,
        }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }

    fn run(&self, cmd: &str, rest: &[&str]) -> Output {
        let mut args = vec![cmd, "--config", p(&self.cfg)];
        args.extend_from_slice(rest);
        hml(&args)
    }

    fn simulate(&self) -> PathBuf {
        let out = self.run("simulate", &["--out", p(&self.path("world"))]);
        assert!(out.status.success(), "{}", stderr(&out));
        self.path("world/corpus.jsonl")
    }

    fn infer(&self, corpus: &Path) -> PathBuf {
        let out = self.run(
            "infer-graph",
            &["--corpus", p(corpus), "--out", p(&self.path("graph"))],
        );
        assert!(out.status.success(), "{}", stderr(&out));
        self.path("graph/graph.tsv")
    }

    fn train(&self, corpus: &Path, graph: &Path) -> PathBuf {
        let out = self.run(
            "train",
            &[
                "--corpus",
                p(corpus),
                "--graph",
                p(graph),
                "--out",
                p(&self.path("model")),
            ],
        );
        assert!(out.status.success(), "{}", stderr(&out));
        self.path("model/model.ckpt.json")
    }
}

const SMALL: &str = r#"{"seed": 5, "world": {"n_news": 40, "n_events": 4}, "ssl": {"epochs": 2}, "encoder": {"epochs": 3}}"#;

#[test]
fn simulate_without_config_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = hml(&["simulate", "--out", p(tmp.path())]);
    assert_eq!(code(&out), Some(2), "{}", stderr(&out));
    assert!(stderr(&out).contains("--config"));
}

#[test]
fn malformed_config_is_a_config_error() {
    let f = Fixture::new(r#"{"world": {"n_news": 40}, "unexpected": 1}"#);
    let out = f.run("simulate", &["--out", p(&f.path("world"))]);
    assert_eq!(code(&out), Some(2), "{}", stderr(&out));
}

#[test]
fn same_seed_simulations_share_a_manifest_hash() {
    let f = Fixture::new(SMALL);
    let a = f.run("simulate", &["--out", p(&f.path("a"))]);
    let b = f.run("simulate", &["--out", p(&f.path("b"))]);
    assert!(a.status.success() && b.status.success());
    let ha = read_json(&f.path("a/manifest.json"))["manifest_hash"].clone();
    let hb = read_json(&f.path("b/manifest.json"))["manifest_hash"].clone();
    assert!(ha.is_string());
    assert_eq!(ha, hb);
    assert_eq!(read_json(&f.path("a/truth.json"))["manifest_hash"], ha);
    assert_eq!(
        std::fs::read(f.path("a/corpus.jsonl")).unwrap(),
        std::fs::read(f.path("b/corpus.jsonl")).unwrap()
    );

    // a different seed changes both the data and the hash
    let c = hml(&[
        "simulate",
        "--config",
        p(&f.cfg),
        "--seed",
        "6",
        "--out",
        p(&f.path("c")),
    ]);
    assert!(c.status.success());
    assert_ne!(read_json(&f.path("c/manifest.json"))["manifest_hash"], ha);
}

#[test]
fn invalid_edge_spec_is_a_config_error() {
    let f = Fixture::new(SMALL);
    let corpus = f.simulate();
    let spec = f.path("spec.json");
    // no event-influence layer in first position
    std::fs::write(
        &spec,
        r#"[{"name":"pub","kind":"categorical_match","attribute":"publisher"}]"#,
    )
    .unwrap();
    let out = f.run(
        "infer-graph",
        &[
            "--corpus",
            p(&corpus),
            "--edge-spec",
            p(&spec),
            "--out",
            p(&f.path("graph")),
        ],
    );
    assert_eq!(code(&out), Some(2), "{}", stderr(&out));
    assert!(!f.path("graph/graph.tsv").exists());
}

#[test]
fn non_converged_fit_exits_3_unless_allowed() {
    let f = Fixture::new(
        r#"{"seed": 5, "world": {"n_news": 40, "n_events": 4}, "infer": {"fit": {"max_iterations": 2}}}"#,
    );
    let corpus = f.simulate();
    let out = f.run(
        "infer-graph",
        &["--corpus", p(&corpus), "--out", p(&f.path("strict"))],
    );
    assert_eq!(code(&out), Some(3), "{}", stderr(&out));
    assert_eq!(
        read_json(&f.path("strict/report.json"))["converged"],
        Value::Bool(false)
    );
    assert!(!f.path("strict/graph.tsv").exists());

    let out = f.run(
        "infer-graph",
        &[
            "--corpus",
            p(&corpus),
            "--allow-nonconverged",
            "--out",
            p(&f.path("lenient")),
        ],
    );
    assert_eq!(code(&out), Some(0), "{}", stderr(&out));
    assert!(f.path("lenient/graph.tsv").exists());
}

#[test]
fn single_item_events_leave_the_event_layer_empty() {
    let f = Fixture::new(r#"{"seed": 5, "world": {"n_news": 6, "n_events": 6}}"#);
    let corpus = f.simulate();
    let out = f.run(
        "infer-graph",
        &["--corpus", p(&corpus), "--out", p(&f.path("graph"))],
    );
    assert_eq!(code(&out), Some(0), "{}", stderr(&out));
    assert!(
        stderr(&out).to_lowercase().contains("warn"),
        "{}",
        stderr(&out)
    );
    let report = read_json(&f.path("graph/report.json"));
    assert!(!report["warnings"].as_array().unwrap().is_empty());

    let file = std::fs::File::open(f.path("graph/graph.tsv")).unwrap();
    let (graph, _) = hml_core::hetgraph::read_graph(std::io::BufReader::new(file)).unwrap();
    assert_eq!(graph.layers[0].edge_count(graph.n), 0);
}

#[test]
fn checkpoint_problems_exit_4() {
    let f = Fixture::new(SMALL);
    let corpus = f.simulate();
    let graph = f.infer(&corpus);
    let ckpt = f.train(&corpus, &graph);

    // stale format tag
    let mut old = read_json(&ckpt);
    old["format"] = Value::String("hml-ckpt-v0".into());
    let stale = f.path("stale.ckpt.json");
    std::fs::write(&stale, serde_json::to_string(&old).unwrap()).unwrap();
    let out = f.run(
        "evaluate",
        &[
            "--corpus",
            p(&corpus),
            "--graph",
            p(&graph),
            "--checkpoint",
            p(&stale),
            "--out",
            p(&f.path("e1")),
        ],
    );
    assert_eq!(code(&out), Some(4), "{}", stderr(&out));

    // a pretraining checkpoint where a classifier is expected
    let pre = f.run(
        "pretrain",
        &["--corpus", p(&corpus), "--out", p(&f.path("pre"))],
    );
    assert!(pre.status.success(), "{}", stderr(&pre));
    let ssl = f.path("pre/ssl.ckpt.json");
    let out = f.run(
        "evaluate",
        &[
            "--corpus",
            p(&corpus),
            "--graph",
            p(&graph),
            "--checkpoint",
            p(&ssl),
            "--out",
            p(&f.path("e2")),
        ],
    );
    assert_eq!(code(&out), Some(4), "{}", stderr(&out));

    // unreadable checkpoint
    let junk = f.path("junk.ckpt.json");
    std::fs::write(&junk, "not json").unwrap();
    let out = f.run(
        "export",
        &[
            "--corpus",
            p(&corpus),
            "--graph",
            p(&graph),
            "--checkpoint",
            p(&junk),
            "--out",
            p(&f.path("e3")),
        ],
    );
    assert_eq!(code(&out), Some(4), "{}", stderr(&out));
}

#[test]
fn ablations_must_match_the_stage() {
    let f = Fixture::new(SMALL);
    let corpus = f.simulate();
    let out = f.run(
        "pretrain",
        &[
            "--corpus",
            p(&corpus),
            "--ablate",
            "no-latent-graph",
            "--out",
            p(&f.path("pre")),
        ],
    );
    assert_eq!(code(&out), Some(2), "{}", stderr(&out));

    let graph = f.infer(&corpus);
    let out = f.run(
        "train",
        &[
            "--corpus",
            p(&corpus),
            "--graph",
            p(&graph),
            "--ablate",
            "no-uni-aug",
            "--out",
            p(&f.path("m")),
        ],
    );
    assert_eq!(code(&out), Some(2), "{}", stderr(&out));

    let out = f.run(
        "train",
        &[
            "--corpus",
            p(&corpus),
            "--graph",
            p(&graph),
            "--ablate",
            "no-such-thing",
            "--out",
            p(&f.path("m")),
        ],
    );
    assert_eq!(code(&out), Some(2), "{}", stderr(&out));
}

#[test]
fn untrained_model_evaluates_near_chance() {
    let f = Fixture::new(
        r#"{"seed": 5, "world": {"n_news": 200, "n_events": 10}, "encoder": {"epochs": 0}}"#,
    );
    let corpus = f.simulate();
    let graph = f.infer(&corpus);
    let ckpt = f.train(&corpus, &graph);
    let out = f.run(
        "evaluate",
        &[
            "--corpus",
            p(&corpus),
            "--graph",
            p(&graph),
            "--checkpoint",
            p(&ckpt),
            "--out",
            p(&f.path("eval")),
        ],
    );
    assert_eq!(code(&out), Some(0), "{}", stderr(&out));
    let csv = std::fs::read_to_string(f.path("eval/metrics.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(lines[0], "epoch,split,accuracy,precision,recall,f1");
    let all = lines
        .iter()
        .find(|l| l.split(',').nth(1) == Some("all"))
        .unwrap();
    let accuracy: f64 = all.split(',').nth(2).unwrap().parse().unwrap();
    // balanced classes: an untrained head cannot do much better than a coin
    assert!((0.2..=0.8).contains(&accuracy), "{accuracy}");
}

#[test]
fn export_writes_one_row_per_item() {
    let f = Fixture::new(SMALL);
    let corpus = f.simulate();
    let graph = f.infer(&corpus);
    let ckpt = f.train(&corpus, &graph);
    let out = f.run(
        "export",
        &[
            "--corpus",
            p(&corpus),
            "--graph",
            p(&graph),
            "--checkpoint",
            p(&ckpt),
            "--out",
            p(&f.path("x")),
        ],
    );
    assert_eq!(code(&out), Some(0), "{}", stderr(&out));
    let tsv = std::fs::read_to_string(f.path("x/embeddings.tsv")).unwrap();
    let rows: Vec<&str> = tsv.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows.len(), 40);
    let width = rows[0].split('\t').count();
    assert!(width > 1);
    assert!(rows.iter().all(|r| r.split('\t').count() == width));
}
