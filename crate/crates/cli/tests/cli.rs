use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use cpg_cli::commands::{self, CONFIG_NOTE};
use cpg_cli::config::ExperimentConfig;
use cpg_core::generator::LanguageEmbeddingTable;
use cpg_core::inference::{EvalReport, EvalRow};
use cpg_core::training::Checkpoint;
use cpg_core::Tensor;
use tempfile::TempDir;

fn cpg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cpg"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(o: Output) -> String {
    assert!(o.status.success(), "exit {:?}: {}", o.status.code(), stderr(&o));
    stdout(&o)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL: &str = r#"
seed = 5
[model]
word_dim = 8
hidden_dim = 12
attention_dim = 8
lang_dim = 4
[training]
batch_size = 8
max_steps = 20
validation_interval = 10
[decode]
beam_size = 3
[paths]
manifest = "data/manifest.toml"
output_dir = "out"
"#;

/// Toy corpus with a↔b in `dir/data` plus a small config at `dir/small.toml`.
fn workspace(pairs: &str) -> (TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(cpg(&[
        "generate-toy",
        "--output",
        s(&data),
        "--pairs",
        pairs,
        "--train",
        "40",
        "--dev",
        "6",
        "--test",
        "6",
    ]));
    let config = dir.path().join("small.toml");
    fs::write(&config, SMALL).unwrap();
    (dir, config)
}

#[test]
fn count_params_formula() {
    let out = ok(cpg(&["count-params"]));
    assert_eq!(out.trim(), "pairwise=1080 cpg=1064 audited=1064");
}

#[test]
fn help_exits_zero_and_bad_flags_exit_one() {
    assert!(cpg(&["--help"]).status.success());
    let o = cpg(&["train", "--bogus"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(stderr(&o).trim().lines().count(), 1, "{}", stderr(&o));
}

#[test]
fn mismatched_corpus_exits_two_naming_both_files() {
    let dir = tempfile::tempdir().unwrap();
    let lines = |n: usize| (0..n).map(|i| format!("x{i}\n")).collect::<String>();
    fs::write(dir.path().join("c.en"), lines(100)).unwrap();
    fs::write(dir.path().join("c.de"), lines(99)).unwrap();
    let manifest = dir.path().join("m.toml");
    fs::write(
        &manifest,
        "[[parallel]]\nsrc = \"en\"\ntgt = \"de\"\nsrc_file = \"c.en\"\ntgt_file = \"c.de\"\nsplit = \"train\"\n",
    )
    .unwrap();
    let o = cpg(&["preprocess", "--manifest", s(&manifest)]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("c.en") && err.contains("c.de"), "{err}");
}

#[test]
fn invalid_config_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.toml");
    fs::write(&config, "[training]\nbatch_size = 0\n").unwrap();
    let o = cpg(&["count-params", "--config", s(&config)]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}

#[test]
fn end_to_end_pipeline() {
    let (dir, config) = workspace("a-b,b-a,a-c,c-a");
    let root = dir.path();
    ok(cpg(&["preprocess", "--config", s(&config)]));
    assert!(root.join("out/vocab/a.txt").exists());

    let trained = ok(cpg(&["train", "--config", s(&config)]));
    assert!(trained.contains("best_step="), "{trained}");
    let ckpt = root.join("out/model.cpgc");
    let metrics = fs::read_to_string(root.join("out/metrics.tsv")).unwrap();
    assert_eq!(metrics.lines().count(), 21, "{metrics}");
    assert!(metrics.lines().last().unwrap().starts_with("20\t"), "{metrics}");

    let input = root.join("in.txt");
    let src_lines = fs::read_to_string(root.join("data/test.a-b.a")).unwrap();
    fs::write(&input, &src_lines).unwrap();
    let translated = ok(cpg(&[
        "translate",
        "--checkpoint",
        s(&ckpt),
        "--src",
        "a",
        "--tgt",
        "b",
        "--input",
        s(&input),
    ]));
    assert_eq!(translated.lines().count(), src_lines.lines().count());

    let pivoted = ok(cpg(&[
        "translate",
        "--checkpoint",
        s(&ckpt),
        "--src",
        "b",
        "--tgt",
        "c",
        "--pivot",
        "a",
        "--input",
        s(&input),
    ]));
    assert_eq!(pivoted.lines().count(), src_lines.lines().count());

    let report = root.join("report.tsv");
    let distances = root.join("dist.tsv");
    ok(cpg(&[
        "evaluate",
        "--checkpoint",
        s(&ckpt),
        "--manifest",
        s(&root.join("data/manifest.toml")),
        "--output",
        s(&report),
        "--distances",
        s(&distances),
    ]));
    let text = fs::read_to_string(&report).unwrap();
    assert!(text.contains("#beam_size=3"), "{text}");
    for pair in ["a-b", "b-a", "a-c", "c-a"] {
        assert!(text.contains(&format!("{pair}\tbleu\t")), "{text}");
    }
    assert!(text.contains("Mean\tbleu\t") && text.contains("Mean\ttoken_accuracy\t"));
    assert_eq!(fs::read_to_string(&distances).unwrap().lines().count(), 4);

    let analyzed = ok(cpg(&["analyze-embeddings", "--checkpoint", s(&ckpt)]));
    assert_eq!(analyzed, fs::read_to_string(&distances).unwrap());

    // The experiment config travels with the checkpoint.
    let c = Checkpoint::<f32>::load(&ckpt).unwrap();
    let echoed = ExperimentConfig::parse(&c.notes[CONFIG_NOTE]).unwrap();
    let loaded = ExperimentConfig::load(&config).unwrap();
    assert_eq!(echoed.model, loaded.model);
    assert_eq!(echoed.training, loaded.training);
    assert_eq!(echoed.seed, 5);
}

#[test]
fn training_is_reproducible_and_unknown_languages_fail_cleanly() {
    let (dir, config) = workspace("a-b,b-a");
    let root = dir.path();
    ok(cpg(&["preprocess", "--config", s(&config)]));
    let first = root.join("first.cpgc");
    let second = root.join("second.cpgc");
    ok(cpg(&["train", "--config", s(&config), "--checkpoint", s(&first)]));
    let metrics_first = fs::read(root.join("out/metrics.tsv")).unwrap();
    ok(cpg(&["train", "--config", s(&config), "--checkpoint", s(&second)]));
    assert_eq!(fs::read(&first).unwrap(), fs::read(&second).unwrap());
    assert_eq!(metrics_first, fs::read(root.join("out/metrics.tsv")).unwrap());

    let o = Command::new(env!("CARGO_BIN_EXE_cpg"))
        .args(["translate", "--checkpoint", s(&first), "--src", "a", "--tgt", "zz"])
        .stdin(Stdio::null())
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert_eq!(err.trim().lines().count(), 1, "{err}");
    assert!(err.contains("zz"), "{err}");
}

#[test]
fn adapt_trains_only_the_new_language() {
    let (dir, config) = workspace("a-b,b-a,a-c,c-a");
    let root = dir.path();
    // Base model knows only a and b.
    let base_manifest = root.join("data/base.toml");
    let full = fs::read_to_string(root.join("data/manifest.toml")).unwrap();
    let base: String = full
        .split("\n\n")
        .filter(|block| !block.contains("\"c\""))
        .map(|block| format!("{block}\n\n"))
        .collect();
    fs::write(&base_manifest, base).unwrap();
    ok(cpg(&["preprocess", "--config", s(&config)]));
    let base_ckpt = root.join("base.cpgc");
    ok(cpg(&[
        "train",
        "--config",
        s(&config),
        "--manifest",
        s(&base_manifest),
        "--checkpoint",
        s(&base_ckpt),
    ]));
    let adapted = root.join("adapted.cpgc");
    let out = ok(cpg(&[
        "adapt",
        "--config",
        s(&config),
        "--checkpoint",
        s(&base_ckpt),
        "--lang",
        "c",
        "--output",
        s(&adapted),
        "--max-steps",
        "10",
    ]));
    assert!(out.contains("lang.c."), "{out}");

    let before = Checkpoint::<f32>::load(&base_ckpt).unwrap().model;
    let after = Checkpoint::<f32>::load(&adapted).unwrap().model;
    for (name, t) in before.params().iter() {
        assert_eq!(after.params().get(name).unwrap(), t, "{name} changed");
    }
    let new: Vec<&String> = after
        .params()
        .names()
        .filter(|k| !before.params().contains(k))
        .collect();
    assert!(
        !new.is_empty() && new.iter().all(|k| k.starts_with("lang.c.")),
        "{new:?}"
    );
}

fn five_language_table() -> LanguageEmbeddingTable {
    let langs: Vec<String> = ["de", "en", "fr", "it", "ro"].iter().map(|l| l.to_string()).collect();
    let v: Vec<f64> = (0..20).map(|k| ((k * 7 + 3) % 5) as f64 - 1.5).collect();
    LanguageEmbeddingTable::new(langs, Tensor::new(vec![5, 4], v).unwrap()).unwrap()
}

#[test]
fn reports_are_deterministic_with_mean_row_and_symmetric_distances() {
    let dir = tempfile::tempdir().unwrap();
    let row = |pair: &str, value: f64| EvalRow {
        pair: pair.into(),
        metric: "bleu".into(),
        value,
        sentences: 5,
    };
    let report = EvalReport {
        rows: vec![row("de-en", 0.2), row("fr-en", 0.4)],
        settings: BTreeMap::from([("beam_size".to_string(), "10".to_string())]),
    };
    let table = five_language_table();
    let (r1, d1) = (dir.path().join("r1.tsv"), dir.path().join("d1.tsv"));
    let (r2, d2) = (dir.path().join("r2.tsv"), dir.path().join("d2.tsv"));
    commands::emit_report(&report, &r1, Some((&table, &d1))).unwrap();
    commands::emit_report(&report, &r2, Some((&table, &d2))).unwrap();
    assert_eq!(fs::read(&r1).unwrap(), fs::read(&r2).unwrap());
    assert_eq!(fs::read(&d1).unwrap(), fs::read(&d2).unwrap());
    let text = fs::read_to_string(&r1).unwrap();
    assert!(text.lines().any(|l| l == "Mean\tbleu\t0.300000\t10"), "{text}");

    let dist = fs::read_to_string(&d1).unwrap();
    let lines: Vec<Vec<&str>> = dist.lines().map(|l| l.split('\t').collect()).collect();
    assert_eq!(lines.len(), 6);
    let m: Vec<Vec<f64>> = lines[1..]
        .iter()
        .map(|r| r[1..].iter().map(|x| x.parse().unwrap()).collect())
        .collect();
    for i in 0..5 {
        assert_eq!(m[i][i], 0.0);
        for j in 0..5 {
            assert_eq!(m[i][j], m[j][i]);
        }
    }

    let empty = EvalReport::default();
    assert!(commands::emit_report(&empty, &dir.path().join("e.tsv"), None).is_err());
}
