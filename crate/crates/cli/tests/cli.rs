use assert_cmd::Command;

fn bin() -> Command {
    Command::cargo_bin("dermafuse").unwrap()
}

fn stdout(cmd: &mut Command) -> String {
    let out = cmd.assert().success().get_output().stdout.clone();
    String::from_utf8(out).unwrap()
}

#[test]
fn synth_then_forge_and_text_commands() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    stdout(bin().args(["synth", "--images-per-class", "10", "--size", "24", "--narratives-per-class", "10", "--out"]).arg(root));

    let manifest = root.join("manifest.json");
    let stats = stdout(bin().args(["forge", "stats", "--manifest"]).arg(&manifest));
    assert!(stats.contains("images: 40"), "{stats}");

    let dedup = stdout(bin().args(["forge", "dedup", "--manifest"]).arg(&manifest));
    assert!(dedup.starts_with("removed 0;"), "{dedup}");

    let split = stdout(bin().args(["forge", "split", "--seed", "3", "--manifest"]).arg(&manifest));
    assert_eq!(split.trim(), "train 32, val 8");

    let weights = stdout(bin().args(["forge", "weights", "--manifest"]).arg(&manifest));
    let w: serde_json::Value = serde_json::from_str(&weights).unwrap();
    assert_eq!(w["per_class_weight"]["0"], 0.125);

    let corpus = root.join("corpus.json");
    stdout(bin().args(["corpus", "validate", "--per-class", "10", "--corpus"]).arg(&corpus));
    bin().args(["corpus", "validate", "--per-class", "11", "--corpus"])
        .arg(&corpus)
        .assert()
        .failure();

    let text = root.join("text");
    let examples = root.join("examples.jsonl");
    stdout(
        bin().args(["train-text", "--mode", "chain", "--epochs", "2", "--per-narrative", "2", "--corpus"])
            .arg(&corpus)
            .arg("--out")
            .arg(&text)
            .arg("--examples-out")
            .arg(&examples),
    );
    let lines = std::fs::read_to_string(&examples).unwrap();
    assert_eq!(lines.lines().count(), 40 * 2);
    let first: serde_json::Value = serde_json::from_str(lines.lines().next().unwrap()).unwrap();
    for key in ["input_text", "gold_class", "provenance", "seed"] {
        assert!(first.get(key).is_some(), "missing {key}");
    }

    let trace = stdout(
        bin().args(["chain-run", "--k", "1", "--narrative", "tiny pustules", "--predictions", "2,Amber Crust", "--checkpoint"])
            .arg(&text),
    );
    assert!(trace.contains("\"eliminated\""), "{trace}");
    assert!(trace.trim_end().lines().last().unwrap().starts_with("final: "));
}

#[test]
fn generation_prompt_and_errors() {
    let p = stdout(bin().args(["corpus", "prompt", "Rash", "Fever"]));
    assert!(p.trim_end().ends_with("\"Rash, Fever\""), "{p}");

    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    let out = bin().args(["forge", "stats", "--manifest"]).arg(&missing).assert().failure();
    let err = String::from_utf8(out.get_output().stderr.clone()).unwrap();
    assert!(err.contains("error:"), "{err}");

    bin().args(["eval-fusion", "--chain-k", "sideways"]).assert().failure();
}
