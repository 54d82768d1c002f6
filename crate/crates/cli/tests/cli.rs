use std::path::Path;
use std::process::{Command, Output};

fn futurevis(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_futurevis")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const TINY: &str = r#"
env = "Empty-6x6"
agent = "opac-cv"
seeds = [3, 4]
iterations = 4
hidden = 8
layers = 1
max_steps = 20
batch_size = 8
buffer_size = 100
visitation_steps = 2
critic_steps = 2
eval_every = 2
eval_rollouts = 3
bootstrap_resamples = 50
"#;

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("config.toml");
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn oracle_passes() {
    let o = futurevis(&["oracle", "--seed", "1"]);
    assert!(o.status.success(), "{}", stdout(&o));
    let out = stdout(&o);
    assert_eq!(out.lines().filter(|l| l.starts_with("PASS")).count(), 4, "{out}");
}

#[test]
fn train_writes_reproducible_csvs_and_eval_reads_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = futurevis(&["train", "--config", &cfg, "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        out
    };
    let (a, b) = (run("a"), run("b"));
    for f in ["seed_3.csv", "seed_4.csv", "aggregate.csv", "seed_3.ckpt.json", "config.toml"] {
        assert!(a.join(f).exists(), "missing {f}");
    }
    let csv = std::fs::read_to_string(a.join("seed_3.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3, "header plus two evaluation rows:\n{csv}");
    assert!(csv.starts_with("seed,iteration,return_estimate,entropy_estimate"));
    for f in ["seed_3.csv", "seed_4.csv"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap());
    }

    let ckpt = a.join("seed_3.ckpt.json");
    let metrics = dir.path().join("eval.csv");
    let o = futurevis(&["eval", ckpt.to_str().unwrap(), "--rollouts", "4", "--out", metrics.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("iteration 4"));
    assert_eq!(std::fs::read_to_string(metrics).unwrap().lines().count(), 2);
}

#[test]
fn flags_override_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let out = dir.path().join("run");
    let o = futurevis(&["train", "--config", &cfg, "--seed", "9", "--agent", "sac", "--env", "FourRooms", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("seed_9.csv").exists());
    assert!(!out.join("seed_3.csv").exists());
    let written = std::fs::read_to_string(out.join("config.toml")).unwrap();
    assert!(written.contains("agent = \"sac\"") && written.contains("env = \"FourRooms\""), "{written}");
}

#[test]
fn invalid_config_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "gamma = 1.5\n");
    let o = futurevis(&["train", "--config", &cfg, "--out", dir.path().join("x").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("gamma"));

    let o = futurevis(&["train", "--agent", "ppo", "--out", dir.path().join("y").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("agent"));
}

#[test]
fn missing_checkpoint_is_an_error() {
    let o = futurevis(&["eval", "/nonexistent/seed_0.ckpt.json"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn quick_verify_passes() {
    let o = futurevis(&["verify", "--quick"]);
    assert!(o.status.success(), "{}", stdout(&o));
    assert!(stdout(&o).contains("8 passed, 0 failed"));
}
