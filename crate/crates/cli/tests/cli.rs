use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use retune::curriculum::QaPositives;
use retune::io::read_jsonl;
use retune::retriever::EmbeddingIndex;
use retune::workspace::{synthetic_config, POSITIVES};

fn retune(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_retune"))
        .args(args)
        .output()
        .expect("spawn retune")
}

fn synthetic(out: &Path) {
    let o = retune(&["synthetic-e2e", "--seed", "42", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn build_kg_before_ingest_names_missing_file_and_producer() {
    let dir = tempfile::tempdir().unwrap();
    let o = retune(&["--output-dir", dir.path().to_str().unwrap(), "build-kg"]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("chunks.jsonl missing"), "{err}");
    assert!(err.contains("run `ingest`"), "{err}");
}

#[test]
fn usage_and_config_errors_exit_1() {
    assert_eq!(retune(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(retune(&["curriculum", "--stage", "4"]).status.code(), Some(1));
    assert_eq!(retune(&["align", "--weights", "1,2"]).status.code(), Some(1));

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "seed = 1\nbogus = 2\n").unwrap();
    let o = retune(&["-c", cfg.to_str().unwrap(), "ingest"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bogus"));

    fs::write(&cfg, "[kg]\ntau = 2.0\n[ppr]\nalpha = 1.5\n").unwrap();
    let o = retune(&["-c", cfg.to_str().unwrap(), "ingest"]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("kg.tau") && err.contains("ppr.alpha"), "{err}");
}

#[test]
fn synthetic_e2e_twice_gives_identical_metrics() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    synthetic(a.path());
    synthetic(b.path());
    let ma = fs::read(a.path().join("metrics.json")).unwrap();
    assert_eq!(ma, fs::read(b.path().join("metrics.json")).unwrap());
    let adapter = "checkpoints/stage3.adapter";
    assert_eq!(
        fs::read(a.path().join(adapter)).unwrap(),
        fs::read(b.path().join(adapter)).unwrap()
    );

    let metrics: serde_json::Value = serde_json::from_slice(&ma).unwrap();
    assert_eq!(metrics["chain_valid"], true);
    assert_eq!(metrics["disjointness_violations"], 0);
}

#[test]
fn steps_rerun_as_verified_noops() {
    let dir = tempfile::tempdir().unwrap();
    synthetic(dir.path());
    let cfg = dir.path().join("config.toml");
    let cfg = cfg.to_str().unwrap();
    for step in [
        &["ingest"][..],
        &["build-kg"],
        &["index"],
        &["subgraph"],
        &["augment"],
        &["align"],
        &["train", "--stage", "3"],
    ] {
        let mut args = vec!["-c", cfg];
        args.extend_from_slice(step);
        let o = retune(&args);
        assert!(o.status.success(), "{step:?}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(String::from_utf8_lossy(&o.stdout).contains("up to date"), "{step:?}");
    }

    let o = retune(&["-c", cfg, "retrieve", "--base", "-k", "3", "what is the capital"]);
    assert!(o.status.success());
    assert_eq!(String::from_utf8_lossy(&o.stdout).lines().count(), 3);

    let o = retune(&["-c", cfg, "eval"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("eval/report.json").exists());
    assert!(dir.path().join("eval/summary.txt").exists());
}

#[test]
fn vector_only_weights_select_base_cosine_top_m() {
    let dir = tempfile::tempdir().unwrap();
    synthetic(dir.path());
    let cfg_path = dir.path().join("config.toml");
    let o = retune(&["-c", cfg_path.to_str().unwrap(), "align", "--weights", "0,0,1"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let cfg = synthetic_config(42, dir.path());
    let m = cfg.alignment.positives;
    let embedder = cfg.backends.build().unwrap().embedder;
    let index = EmbeddingIndex::load(&dir.path().join("index")).unwrap();
    let searcher = index.searcher(None).unwrap();
    let positives: Vec<QaPositives> = read_jsonl(&dir.path().join(POSITIVES)).unwrap();
    assert_eq!(positives.len(), 40);
    for p in positives {
        let q = embedder.embed_one(&p.question).unwrap();
        let prefix = format!("{}#", p.doc_id);
        let expected: Vec<String> = searcher
            .search_filtered(q.as_slice(), m, |id| id.starts_with(&prefix))
            .unwrap()
            .into_iter()
            .map(|h| h.chunk_id)
            .collect();
        assert_eq!(p.positives, expected, "{}", p.qa_id);
    }
}
