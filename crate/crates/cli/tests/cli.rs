use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const CONFIG: &str = r#"
seeds = [0]
rates = [0.05, 0.125]
deterministic = true

[dataset]
n_train = 120
n_val = 80
n_test = 80

[classifier.net]
widths = [4, 8]

[classifier.train]
epochs = 1

[ppo]
total_steps = 128
n_envs = 16
minibatch = 32
epochs = 1

[ppo.policy.trunk]
widths = [4, 8]

[baselines]
greedy_steps = 4
emrt_k = 3
subset_per_class = 8
"#;

fn kspace(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kspace")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = kspace(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn common<'a>(config: &'a str, out: &'a str) -> Vec<&'a str> {
    vec!["--config", config, "--out", out, "--deterministic"]
}

#[test]
fn single_step_commands_chain() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("tiny.toml");
    fs::write(&config, CONFIG).unwrap();
    let out = tmp.path().join("out");
    let (c, o) = (config.to_str().unwrap(), out.to_str().unwrap());
    let with = |cmd: &[&'static str]| -> Vec<&str> {
        let mut v: Vec<&str> = cmd.to_vec();
        v.extend(common(c, o));
        v
    };

    let first = ok(&with(&["gen-data"]));
    let again = ok(&with(&["gen-data"]));
    assert_eq!(first, again);
    assert_eq!(first.split_whitespace().next().unwrap().len(), 64);

    assert!(ok(&with(&["train-classifier"])).contains("checksum"));
    ok(&with(&["train-classifier", "--image"]));
    ok(&with(&["train-policy", "--mode", "strict", "--env-sampling", "balanced"]));
    for f in ["classifier.knet", "classifier.report.json", "image.knet", "policy.kpol", "policy.log"] {
        assert!(out.join(f).exists(), "{f}");
    }

    ok(&with(&["evaluate"]));
    for b in ["vds", "greedy", "emrt", "image"] {
        ok(&with(&["baseline", b]));
    }
    for m in ["adaptive", "vds", "greedy", "emrt", "image"] {
        let csv = fs::read_to_string(out.join(format!("metrics_{m}.csv"))).unwrap();
        assert!(csv.starts_with("method,rate,seed,auroc,bal_acc,sens,spec,npv\n"), "{m}");
        assert!(csv.lines().skip(1).all(|l| l.starts_with(&format!("{m},"))));
    }
    assert!(out.join("masks").join("adaptive_0.05_test.tsv").exists());
    assert_eq!(fs::read_to_string(out.join("greedy.seq")).unwrap().lines().count(), 4);

    let report = ok(&["report", "--out", o]);
    for m in ["adaptive", "vds", "greedy", "emrt", "image"] {
        assert!(report.contains(m), "{m}");
    }
}

#[test]
fn run_command_and_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("tiny.toml");
    fs::write(&config, CONFIG).unwrap();
    let out = tmp.path().join("run");
    let (c, o) = (config.to_str().unwrap(), out.to_str().unwrap());

    let mut args = vec!["run", "--quiet"];
    args.extend(common(c, o));
    let printed = ok(&args);
    assert_eq!(Path::new(printed.trim()), out);
    let csv = fs::read(out.join("metrics.csv")).unwrap();

    assert!(!kspace(&args).status.success());
    args.push("--resume");
    ok(&args);
    assert_eq!(fs::read(out.join("metrics.csv")).unwrap(), csv);
    let report = ok(&["report", "--out", o]);
    assert!(report.contains("emrt"));

    let mut bad = vec!["run", "--rates", "0.1,0.05"];
    bad.extend(common(c, o));
    assert!(!kspace(&bad).status.success());
    let missing = tmp.path().join("empty");
    assert!(!kspace(&["evaluate", "--out", missing.to_str().unwrap()]).status.success());
    assert!(!kspace(&["report", "--out", missing.to_str().unwrap()]).status.success());
    assert!(!kspace(&["baseline", "lasso"]).status.success());
}
