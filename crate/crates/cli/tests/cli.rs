use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_ltl-synth"));
    c.env_remove("LTL_SYNTH_SEED");
    c
}

fn run(c: &mut Command) -> Output {
    c.output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const VQ_RUN: &str = r#"
name = "cli-vq"
map = "builtin:coprates"
automaton = "builtin:coprates"
algorithm = "vq"
seed = 3
th = 200

[eval]
trials = 20
"#;

fn write_config(dir: &Path, text: &str) -> std::path::PathBuf {
    let p = dir.join("run.toml");
    fs::write(&p, text).unwrap();
    p
}

#[test]
fn train_evaluate_and_export() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), VQ_RUN);
    let pol = dir.path().join("policy");
    let o = run(bin()
        .args(["train", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&pol)
        .args(["--set", "vq.delta=1.5"]));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(summary["algorithm"], "vq");
    assert!(summary["samples"].as_u64().unwrap() > 0);
    assert!(pol.join("policy.json").exists());
    assert!(pol.join("quantizer.json").exists());

    let o = run(bin()
        .args(["evaluate", "--config"])
        .arg(&cfg)
        .arg("--policy")
        .arg(&pol)
        .args(["--trials", "10"]));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let eval: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(eval["trials"], 10);
    let rate = eval["success_rate"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&rate));

    let csv = dir.path().join("path.csv");
    let o = run(bin()
        .args(["export-path", "--config"])
        .arg(&cfg)
        .arg("--policy")
        .arg(&pol)
        .arg("--out")
        .arg(&csv));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("step,x,y,q,action,reward\n"));
    assert!(text.lines().count() >= 2);
}

#[test]
fn seed_from_environment_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), VQ_RUN);
    let mut outs = Vec::new();
    for i in 0..2 {
        let pol = dir.path().join(format!("p{i}"));
        let o = run(bin()
            .env("LTL_SYNTH_SEED", "11")
            .args(["train", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(&pol));
        assert!(o.status.success());
        outs.push(fs::read_to_string(pol.join("quantizer.json")).unwrap());
    }
    assert_eq!(outs[0], outs[1]);
}

#[test]
fn bench_writes_report_and_table() {
    let dir = tempfile::tempdir().unwrap();
    let bench = dir.path().join("bench.toml");
    fs::write(
        &bench,
        r#"
[[run]]
name = "a"
map = "builtin:coprates"
automaton = "builtin:coprates"
algorithm = "vq"
th = 200
eval = { trials = 10 }

[[run]]
name = "b"
map = "builtin:coprates"
automaton = "builtin:coprates"
algorithm = "fvi"
fvi = { k = 25, z = 5 }
eval = { trials = 10 }
"#,
    )
    .unwrap();
    let report = dir.path().join("report.json");
    let table = dir.path().join("table.txt");
    let o = run(bin()
        .args(["bench", "--config"])
        .arg(&bench)
        .arg("--out")
        .arg(&report)
        .arg("--table")
        .arg(&table));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(r["rows"].as_array().unwrap().len(), 2);
    let t = fs::read_to_string(&table).unwrap();
    assert!(t.contains('a') && t.contains('b'));
}

#[test]
fn bad_config_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "name = \"x\"\nmap = \"missing.map\"\nautomaton = \"builtin:melas\"\nalgorithm = \"vq\"\n",
    );
    let o = run(bin()
        .args(["train", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("p")));
    assert_eq!(o.status.code(), Some(2));

    let o = run(bin()
        .args(["train", "--config"])
        .arg(dir.path().join("nope.toml"))
        .arg("--out")
        .arg(dir.path().join("p")));
    assert_eq!(o.status.code(), Some(2));

    let cfg = write_config(dir.path(), VQ_RUN);
    let o = run(bin()
        .args(["train", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("p"))
        .args(["--set", "nonsense"]));
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn validate_assets_checks_builtins_and_files() {
    let o = run(bin().arg("validate-assets"));
    assert!(o.status.success());
    let s = stdout(&o);
    assert!(s.contains("map builtin:melas: ok"));
    assert!(s.contains("automaton builtin:coprates: ok"));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.map");
    fs::write(&bad, "width = -1\nheight = 5\n").unwrap();
    let o = run(bin().arg("validate-assets").arg("--map").arg(&bad));
    assert_eq!(o.status.code(), Some(2));

    let busy = dir.path().join("busy.map");
    fs::write(
        &busy,
        "width = 10\nheight = 10\nlanding = [5.0, 5.0]\n\n[[regions]]\nshape = \"rect\"\nmin = [0.0, 0.0]\nmax = [10.0, 10.0]\nlabel = [\"u\"]\n",
    )
    .unwrap();
    let o = run(bin().arg("validate-assets").arg("--map").arg(&busy));
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("not neutral"));
}
