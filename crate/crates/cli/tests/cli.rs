use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn tiltlab(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_tiltlab"));
    cmd.args(args)
        .env_remove("TILTLAB_SEED")
        .env_remove("TILTLAB_OUT");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("suite.cfg");
    fs::write(&path, text).unwrap();
    path.display().to_string()
}

fn data_rows(csv: &Path) -> Vec<String> {
    fs::read_to_string(csv)
        .unwrap()
        .lines()
        .skip(1)
        .map(str::to_owned)
        .collect()
}

#[test]
fn zero_trials_write_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "kind = mech-bench\ntrials = 0\n");
    let out = dir.path().join("out");
    let o = tiltlab(
        &["run", "--config", &cfg, "--out", out.to_str().unwrap()],
        &[],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(out.join("mech-bench.csv")).unwrap();
    assert_eq!(text.lines().count(), 1);
    assert!(text.starts_with("trial,trial_seed,bench,"));
    assert!(out.join("manifest.txt").exists());
}

#[test]
fn default_divergence_check_is_one_tight_row() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "kind = divergence-check\n");
    let out = dir.path().join("out");
    let o = tiltlab(
        &["run", "--config", &cfg, "--out", out.to_str().unwrap()],
        &[],
    );
    assert!(o.status.success());
    let rows = data_rows(&out.join("divergence-check.csv"));
    assert_eq!(rows.len(), 1);
    let cells: Vec<&str> = rows[0].split(',').collect();
    let abs_err: f64 = cells[7].parse().unwrap();
    assert!(abs_err <= 1e-6);
    assert_eq!(cells[8], "true");
}

#[test]
fn reruns_and_worker_counts_agree() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "kind = attack-hypercube\nd = 16\nn = 4\ntrials = 12\nfresh = 100\n",
    );
    let mut runs = Vec::new();
    for (i, workers) in ["1", "3", "3"].iter().enumerate() {
        let out = dir.path().join(format!("out{i}"));
        let o = tiltlab(
            &[
                "run",
                "--config",
                &cfg,
                "--seed",
                "77",
                "--workers",
                workers,
                "--out",
                out.to_str().unwrap(),
            ],
            &[],
        );
        assert!(o.status.success());
        runs.push(data_rows(&out.join("attack-hypercube.csv")));
    }
    assert_eq!(runs[0].len(), 12);
    assert_eq!(runs[0], runs[1]);
    assert_eq!(runs[1], runs[2]);
}

#[test]
fn replay_reproduces_a_row() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "kind = ada-run\nm = 2\nk = 4\nd = 8\nn = 60\nalpha = 0.25\npool = 500\ngap_draws = 500\ntrials = 4\n",
    );
    let out = dir.path().join("out");
    assert!(tiltlab(
        &["run", "--config", &cfg, "--out", out.to_str().unwrap()],
        &[]
    )
    .status
    .success());
    let csv = out.join("ada-run.csv");
    let o = tiltlab(
        &["replay", "--csv", csv.to_str().unwrap(), "--row", "2"],
        &[],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    assert!(String::from_utf8_lossy(&o.stdout)
        .trim_end()
        .ends_with("identical"));
    let o = tiltlab(
        &["replay", "--csv", csv.to_str().unwrap(), "--row", "9"],
        &[],
    );
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn malformed_config_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "kind = attack-hypercube\nd = abc\n");
    let o = tiltlab(&["run", "--config", &cfg], &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));
}

#[test]
fn environment_overrides_seed_and_out() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "kind = mech-bench\ntrials = 3\nseed = 1\n");
    let out = dir.path().join("env-out");
    let o = tiltlab(
        &["run", "--config", &cfg],
        &[
            ("TILTLAB_SEED", "42"),
            ("TILTLAB_OUT", out.to_str().unwrap()),
        ],
    );
    assert!(o.status.success());
    let manifest = fs::read_to_string(out.join("manifest.txt")).unwrap();
    assert!(manifest.lines().any(|l| l == "seed = 42"), "{manifest}");
    assert!(manifest.contains("# version = "));
    // The flag beats the environment.
    let flagged = dir.path().join("flag-out");
    let o = tiltlab(
        &[
            "run",
            "--config",
            &cfg,
            "--seed",
            "5",
            "--out",
            flagged.to_str().unwrap(),
        ],
        &[
            ("TILTLAB_SEED", "42"),
            ("TILTLAB_OUT", out.to_str().unwrap()),
        ],
    );
    assert!(o.status.success());
    let manifest = fs::read_to_string(flagged.join("manifest.txt")).unwrap();
    assert!(manifest.lines().any(|l| l == "seed = 5"));
}

#[test]
fn module_error_flushes_error_row() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "kind = ada-run\nm = 2\nk = 4\nd = 8\nn = 40\nalpha = 0.25\npool = 100\ngap_draws = 100\ntrials = 3\nanalyst = constant:1.5\n",
    );
    let out = dir.path().join("out");
    let o = tiltlab(
        &["run", "--config", &cfg, "--out", out.to_str().unwrap()],
        &[],
    );
    assert!(!o.status.success());
    let rows = data_rows(&out.join("ada-run.csv"));
    assert_eq!(rows.len(), 1);
    assert!(rows[0].contains("false"));
    assert!(rows[0].contains("outside"));
}
