//! End-to-end runs of the `rddl-transfer` binary.

use std::path::Path;
use std::process::{Command, Output};

use rddl_transfer::io::{load_checkpoint, parse_instance};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rddl-transfer"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn gen_file(dir: &Path, name: &str, args: &[&str]) -> String {
    let path = dir.join(name);
    let p = path.to_str().unwrap().to_string();
    let mut all = vec!["gen"];
    all.extend_from_slice(args);
    all.extend_from_slice(&["--out", &p]);
    let o = run(&all);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    p
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(String::from).collect())
        .collect()
}

#[test]
fn gen_is_deterministic_and_parses() {
    let args = ["gen", "--domain", "sysadmin", "--size", "7", "--seed", "3"];
    let (a, b) = (run(&args), run(&args));
    assert_eq!(code(&a), 0);
    assert_eq!(a.stdout, b.stdout);
    let inst = parse_instance(&stdout(&a)).unwrap();
    assert_eq!(inst.object_count(), 7);
    let other = run(&["gen", "--domain", "sysadmin", "--size", "7", "--seed", "4"]);
    assert_ne!(a.stdout, other.stdout);

    let grid = run(&["gen", "--domain", "game_of_life", "--size", "9"]);
    assert_eq!(parse_instance(&stdout(&grid)).unwrap().object_count(), 9);
}

#[test]
fn gen_rejects_bad_topology_as_usage_error() {
    let o = run(&["gen", "--domain", "game_of_life", "--size", "7", "--rows", "2", "--cols", "3"]);
    assert_eq!(code(&o), 1);
    assert_eq!(code(&run(&["gen", "--domain", "chess", "--size", "3"])), 1);
    assert_eq!(code(&run(&["gen", "--domain", "sysadmin"])), 1);
    assert_eq!(code(&run(&["gen", "--domain", "sysadmin", "--size", "3", "--edge-prob", "1.5"])), 1);
}

fn write_manifest(dir: &Path, body: &str) -> String {
    let p = dir.join("exp.toml");
    std::fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn train_writes_checkpoints_log_and_eval() {
    let dir = tempfile::tempdir().unwrap();
    gen_file(dir.path(), "small.inst", &["--domain", "sysadmin", "--size", "4", "--seed", "1"]);
    gen_file(dir.path(), "test.inst", &["--domain", "sysadmin", "--size", "9", "--seed", "2"]);
    let manifest = write_manifest(
        dir.path(),
        r#"
domain = "sysadmin"
output_dir = "out"
test_instances = ["test.inst"]

[[train]]
file = "small.inst"

[[train]]
size = 5
seed = 7

[trainer]
budget_seconds = 60
max_steps = 6
checkpoint_every_steps = 2
log_every_steps = 1
"#,
    );
    let o = run(&["train", "--manifest", &manifest]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));

    let ckpts = dir.path().join("out/checkpoints");
    let mut names: Vec<String> = std::fs::read_dir(&ckpts)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(names, ["ckpt_0000000000.bin", "ckpt_0000000002.bin", "ckpt_0000000004.bin", "ckpt_0000000006.bin"]);
    let last = load_checkpoint(&std::fs::read(ckpts.join(&names[3])).unwrap()).unwrap();
    assert_eq!(last.meta.gradient_steps, 6);

    let log = csv_rows(&dir.path().join("out/train_log.csv"));
    assert_eq!(log[0][..2], ["wall_seconds", "step"]);
    assert_eq!(log[0].len(), 2 + 2 + 4);
    assert!(log.len() > 1);

    let eval = csv_rows(&dir.path().join("out/eval.csv"));
    assert_eq!(eval[0], ["instance", "policy_id", "runs", "mean", "stderr", "horizon"]);
    assert_eq!(eval.len(), 2);
    assert_eq!(eval[1][2], "100");

    // resuming continues the step count up to the absolute max_steps
    let text = std::fs::read_to_string(&manifest).unwrap().replace("max_steps = 6", "max_steps = 8");
    std::fs::write(&manifest, text).unwrap();
    let o = run(&["train", "--manifest", &manifest, "--resume", ckpts.join(&names[3]).to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let resumed = load_checkpoint(&std::fs::read(ckpts.join("ckpt_0000000008.bin")).unwrap()).unwrap();
    assert_eq!(resumed.meta.gradient_steps, 8);
}

#[test]
fn train_reports_missing_files_and_bad_manifests() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_manifest(
        dir.path(),
        "domain = \"sysadmin\"\noutput_dir = \"out\"\n[[train]]\nfile = \"nope.inst\"\n",
    );
    let o = run(&["train", "--manifest", &manifest]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("nope.inst"));
    assert!(!dir.path().join("out").exists());

    assert_eq!(code(&run(&["train", "--manifest", "/nonexistent/exp.toml"])), 2);
    let manifest = write_manifest(dir.path(), "domain = \"sysadmin\"\noutput_dir = \"out\"\n[[train]]\nsize = 3\n[trainer]\nbogus = 1\n");
    assert_eq!(code(&run(&["train", "--manifest", &manifest])), 2);
    let manifest = write_manifest(dir.path(), "domain = \"sysadmin\"\noutput_dir = \"out\"\n[[train]]\nsize = 3\n[trainer]\nnstep = 0\n");
    assert_eq!(code(&run(&["train", "--manifest", &manifest])), 1);
}

fn zero_step_checkpoint(dir: &Path, domain: &str, size: &str) -> String {
    let inst = gen_file(dir, &format!("{domain}_train.inst"), &["--domain", domain, "--size", size]);
    let body = format!(
        "domain = \"{domain}\"\noutput_dir = \"{domain}_out\"\n[[train]]\nfile = \"{}\"\n[trainer]\nbudget_seconds = 0\n",
        Path::new(&inst).file_name().unwrap().to_str().unwrap()
    );
    let p = dir.join(format!("{domain}.toml"));
    std::fs::write(&p, body).unwrap();
    let o = run(&["train", "--manifest", p.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    dir.join(format!("{domain}_out/checkpoints/ckpt_0000000000.bin")).to_str().unwrap().to_string()
}

#[test]
fn eval_defaults_and_domain_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = zero_step_checkpoint(dir.path(), "sysadmin", "3");
    let inst = gen_file(dir.path(), "target.inst", &["--domain", "sysadmin", "--size", "12"]);
    let o = run(&["eval", "--checkpoint", &ckpt, "--instance", &inst, "--baselines", "random,noop,greedy"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows[0], "instance,policy_id,runs,mean,stderr,horizon");
    assert_eq!(rows.len(), 1 + 2 + 3);
    assert!(rows[1..].iter().all(|r| r.split(',').nth(2) == Some("100")));

    let gol = gen_file(dir.path(), "gol.inst", &["--domain", "game_of_life", "--size", "9"]);
    assert_eq!(code(&run(&["eval", "--checkpoint", &ckpt, "--instance", &gol])), 3);
    assert_eq!(code(&run(&["eval", "--instance", &gol, "--baselines", "sysadmin_greedy"])), 1);
    assert_eq!(code(&run(&["eval", "--instance", &gol])), 1);
    assert_eq!(code(&run(&["eval", "--instance", "/nonexistent.inst", "--baselines", "noop"])), 2);
}

#[test]
fn transfer_with_zero_budget_is_the_zero_shot_point() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = zero_step_checkpoint(dir.path(), "game_of_life", "4");
    let inst = gen_file(dir.path(), "big.inst", &["--domain", "game_of_life", "--size", "16"]);
    let out = dir.path().join("curve.csv");
    let anchors = dir.path().join("anchors.csv");
    let o = run(&[
        "transfer",
        "--checkpoint",
        &ckpt,
        "--instance",
        &inst,
        "--runs",
        "10",
        "--out",
        out.to_str().unwrap(),
        "--anchors",
        anchors.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rows = csv_rows(&out);
    assert_eq!(rows[0], ["t", "step", "value", "alpha", "stderr", "policy_id"]);
    assert!(rows[1..].iter().all(|r| r[0] == "0.0" || r[0] == "0"));
    let policies: Vec<&str> = rows[1..].iter().map(|r| r[5].as_str()).collect();
    assert_eq!(policies.len(), 2, "one zero-shot row per action mode: {policies:?}");
    for r in &rows[1..] {
        let alpha: f64 = r[3].parse().unwrap();
        assert!((0.0..=1.0).contains(&alpha));
    }
    assert_eq!(csv_rows(&anchors).len(), 1 + 3);

    let merged = run(&["plotdata", "--curves", out.to_str().unwrap(), out.to_str().unwrap()]);
    assert_eq!(code(&merged), 0);
    let text = stdout(&merged);
    assert_eq!(text.lines().next().unwrap(), "curve,t,step,value,alpha,stderr,policy_id");
    assert_eq!(text.lines().count(), 1 + 2 * 2);
    assert!(text.lines().skip(1).all(|l| l.starts_with("curve,")));
}

#[test]
fn plotdata_handles_empty_and_malformed_input() {
    let o = run(&["plotdata"]);
    assert_eq!(code(&o), 0);
    assert_eq!(stdout(&o), "curve,t,step,value,alpha,stderr,policy_id\n");

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "t,step,value,alpha,stderr,policy_id\n0,0,1.0,0.5,0.1,x\n1,zz,1.0,0.5,0.1,x\n").unwrap();
    let o = run(&["plotdata", "--curves", bad.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 3"));

    std::fs::write(&bad, "x,y\n1,2\n").unwrap();
    assert_eq!(code(&run(&["plotdata", "--curves", bad.to_str().unwrap()])), 2);
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&run(&[])), 1);
    assert_eq!(code(&run(&["frobnicate"])), 1);
    assert_eq!(code(&run(&["--help"])), 0);
}
