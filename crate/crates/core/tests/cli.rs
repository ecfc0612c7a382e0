use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_crowdcall"));
    c.env_remove("CROWDCALL_SEED");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn lexicons() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../lexicons")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn small_synth(dir: &Path) -> PathBuf {
    let cfg = dir.join("synth.conf");
    fs::write(&cfg, "n_questions = 12\nlife_min = 6\nlife_max = 9\nforecasts_per_day = 2\nseed = 5\n").unwrap();
    let out = dir.join("synth");
    let o = run(&["synth", "--config", s(&cfg), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out
}

#[test]
fn synth_then_evaluate_weighted_active() {
    let tmp = tempfile::tempdir().unwrap();
    let synth = small_synth(tmp.path());
    assert!(synth.join("manifest.jsonl").exists());
    assert!(synth.join("config.txt").exists());
    let out = tmp.path().join("eval");
    let data = synth.join("data.jsonl");
    let o = run(&["evaluate", "--baseline", "weighted", "--mode", "active", "--data", s(&data), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = fs::read_to_string(out.join("table.txt")).unwrap();
    let header: Vec<&str> = table.lines().next().unwrap().split_whitespace().collect();
    assert_eq!(&header[..6], ["System", "All", "Q1", "Q2", "Q3", "Q4"]);
    assert!(table.lines().nth(1).unwrap().starts_with("weighted"));
    let report: serde_json::Value = serde_json::from_slice(&fs::read(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report[0]["system"], "weighted");
    assert!(report[0]["overall_macro"].as_f64().unwrap() > 0.0);
    assert!(out.join("records_weighted.jsonl").exists());
    let echo = fs::read_to_string(out.join("config.txt")).unwrap();
    assert!(echo.contains("mode = active"));
    assert!(echo.contains("baseline = weighted"));
}

#[test]
fn config_echo_reruns_to_the_same_output() {
    let tmp = tempfile::tempdir().unwrap();
    let synth = small_synth(tmp.path());
    let echo = synth.join("config.txt");
    let again = tmp.path().join("again");
    let text = fs::read_to_string(&echo).unwrap().replace(s(&synth), s(&again));
    let cfg = tmp.path().join("rerun.conf");
    fs::write(&cfg, text).unwrap();
    let o = run(&["synth", "--config", s(&cfg)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read(synth.join("data.jsonl")).unwrap(), fs::read(again.join("data.jsonl")).unwrap());
}

#[test]
fn validate_reports_bad_prediction() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("bad.jsonl");
    fs::write(
        &data,
        concat!(
            r#"{"type":"question","id":"q1","text":"Will it?","open":"2020-01-01","close":"2020-01-05","answer":"yes"}"#,
            "\n",
            r#"{"type":"forecast","question_id":"q1","forecaster_id":"a","date":"2020-01-02","prediction":1.5,"justification":"x"}"#,
            "\n"
        ),
    )
    .unwrap();
    let o = run(&["validate", "--data", s(&data)]);
    assert_eq!(o.status.code(), Some(2));
    let text = format!("{}{}", stdout(&o), String::from_utf8_lossy(&o.stderr));
    assert!(text.contains("1.5"), "{text}");
}

#[test]
fn validate_accepts_clean_data() {
    let tmp = tempfile::tempdir().unwrap();
    let synth = small_synth(tmp.path());
    let o = run(&["validate", "--data", s(&synth.join("data.jsonl"))]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("0 violations"));
}

fn write_records(path: &Path, outcomes: &[(bool, bool)], pick_a: bool) {
    let mut text = String::new();
    for (i, (a, b)) in outcomes.iter().enumerate() {
        let ok = if pick_a { *a } else { *b };
        text.push_str(&format!(
            "{{\"question_id\":\"q\",\"day\":{i},\"life\":{},\"answer\":\"yes\",\"score\":0.9,\"correct\":{ok}}}\n",
            outcomes.len()
        ));
    }
    fs::write(path, text).unwrap();
}

#[test]
fn compare_prints_mcnemar_line() {
    let tmp = tempfile::tempdir().unwrap();
    let mut outcomes = vec![(true, false); 10];
    outcomes.extend(vec![(false, true); 2]);
    outcomes.extend(vec![(true, true); 5]);
    let (a, b) = (tmp.path().join("a.jsonl"), tmp.path().join("b.jsonl"));
    write_records(&a, &outcomes, true);
    write_records(&b, &outcomes, false);
    let o = run(&["compare", "--a", s(&a), "--b", s(&b)]);
    assert!(o.status.success());
    let line = stdout(&o);
    assert!(line.contains("b=10") && line.contains("c=2"), "{line}");
    assert!(line.contains("chi2=4.0833") && line.contains("p=0.0433"), "{line}");
    assert!(line.contains("\tsignificant"), "{line}");
    let o = run(&["compare", "--a", s(&a), "--b", s(&b), "--uncorrected"]);
    assert!(stdout(&o).contains("chi2=5.3333"));
}

#[test]
fn usage_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let synth = small_synth(tmp.path());
    let data = synth.join("data.jsonl");
    let out = tmp.path().join("e");
    let o = run(&["evaluate", "--data", s(&data), "--out", s(&out), "--mode", "daily", "--active-span", "3"]);
    assert_eq!(o.status.code(), Some(1));
    let cfg = tmp.path().join("bad.conf");
    fs::write(&cfg, "colour = blue\n").unwrap();
    let o = run(&["evaluate", "--data", s(&data), "--out", s(&out), "--config", s(&cfg)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("colour"));
    assert_eq!(run(&["nonsense"]).status.code(), Some(1));
    assert_eq!(run(&["split", "--out", s(&out)]).status.code(), Some(1));
}

#[test]
fn missing_input_is_a_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["validate", "--data", s(&tmp.path().join("nope.jsonl"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn seed_comes_from_environment_when_not_given() {
    let tmp = tempfile::tempdir().unwrap();
    let synth = small_synth(tmp.path());
    let data = synth.join("data.jsonl");
    let split = |dir: &str, env: Option<&str>, flag: Option<&str>| {
        let out = tmp.path().join(dir);
        let mut c = bin();
        c.args(["split", "--data", s(&data), "--out", s(&out)]);
        if let Some(v) = env {
            c.env("CROWDCALL_SEED", v);
        }
        if let Some(v) = flag {
            c.args(["--seed", v]);
        }
        assert!(c.output().unwrap().status.success());
        fs::read(out.join("split.json")).unwrap()
    };
    let env9 = split("a", Some("9"), None);
    let flag9 = split("b", None, Some("9"));
    let flag_wins = split("c", Some("3"), Some("9"));
    assert_eq!(env9, flag9);
    assert_eq!(flag9, flag_wins);
    assert!(fs::read_to_string(tmp.path().join("a/config.txt")).unwrap().contains("seed = 9"));
}

#[test]
fn analyze_and_report() {
    let tmp = tempfile::tempdir().unwrap();
    let synth = small_synth(tmp.path());
    let data = synth.join("data.jsonl");
    let out = tmp.path().join("an");
    let o = run(&["analyze", "--data", s(&data), "--lexicons", s(&lexicons()), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = fs::read_to_string(out.join("justifications.jsonl")).unwrap();
    let first: serde_json::Value = serde_json::from_str(rows.lines().next().unwrap()).unwrap();
    assert!(first["signals"]["is_short"].as_bool().unwrap());

    let out = tmp.path().join("rep");
    let o = run(&["report", "--data", s(&data), "--lexicons", s(&lexicons()), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let curve = fs::read_to_string(out.join("forecasts_per_day.tsv")).unwrap();
    for line in curve.lines().skip(1) {
        let submitted: f64 = line.split('\t').nth(2).unwrap().parse().unwrap();
        assert_eq!(submitted, 2.0);
    }
    let report: serde_json::Value = serde_json::from_slice(&fs::read(out.join("corpus_report.json")).unwrap()).unwrap();
    assert_eq!(report["questions"], 12);
}

#[test]
fn train_call_and_evaluate_model() {
    let tmp = tempfile::tempdir().unwrap();
    let synth = small_synth(tmp.path());
    let data = synth.join("data.jsonl");
    let split_dir = tmp.path().join("split");
    assert!(run(&["split", "--data", s(&data), "--out", s(&split_dir), "--seed", "2"]).status.success());
    let split = split_dir.join("split.json");
    let model_dir = tmp.path().join("model");
    let o = run(&[
        "train", "--data", s(&data), "--split", s(&split), "--out", s(&model_dir), "--hidden", "8", "--proj-dim", "8",
        "--hash-dim", "64", "--max-epochs", "2", "--ablation", "pj", "--mode", "daily",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["model.bin", "model.manifest.json", "train_log.json", "config.txt"] {
        assert!(model_dir.join(f).exists(), "{f}");
    }
    let model = model_dir.join("model.bin");
    let call_dir = tmp.path().join("call");
    let o = run(&["call", "--model", s(&model), "--data", s(&data), "--split", s(&split), "--out", s(&call_dir)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(!fs::read_to_string(call_dir.join("records.jsonl")).unwrap().is_empty());

    let eval_dir = tmp.path().join("eval");
    let o = run(&[
        "evaluate", "--data", s(&data), "--model", s(&model), "--split", s(&split), "--mode", "daily", "--out", s(&eval_dir), "--jobs", "2",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = fs::read_to_string(eval_dir.join("table.txt")).unwrap();
    assert!(table.contains("model-pj") && table.contains("majority"));
    let sig = fs::read_to_string(eval_dir.join("significance.tsv")).unwrap();
    assert_eq!(sig.lines().count(), 3);
}
