use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn btc_kur(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_btc-kur"))
        .args(args)
        .env_remove("BTC_KUR_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

const SMALL_SWEEP: [&str; 7] = [
    "--set",
    "n_spins=6",
    "--set",
    "omegas=[0.5, 1.5]",
    "--set",
    "tau=1.0",
    "--n-traj=60",
];

#[test]
fn meanfield_writes_unit_norm_csv() {
    let out = btc_kur(&[
        "meanfield",
        "--omega",
        "1.5",
        "--tau",
        "2",
        "--dt",
        "0.01",
        "--m0",
        "0,1,0",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("t,mx,my,mz"));
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 201);
    for r in rows {
        let norm = (r[1] * r[1] + r[2] * r[2] + r[3] * r[3]).sqrt();
        assert!((norm - 1.0).abs() < 1e-9);
    }
}

#[test]
fn meanfield_rejects_unnormalized_start() {
    let out = btc_kur(&["meanfield", "--omega", "1", "--tau", "1", "--m0", "0,2,0"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn trajectories_summary_has_one_row_per_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("t.csv");
    let out = btc_kur(&[
        "trajectories",
        "--N",
        "4",
        "--omega",
        "1",
        "--tau",
        "0.5",
        "--spacing",
        "0.1",
        "--n-traj",
        "40",
        "--seed",
        "3",
        "-o",
        file.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(fs::read_to_string(file).unwrap().lines().count(), 6);
}

#[test]
fn exact_bounds_refuse_large_systems() {
    let out = btc_kur(&[
        "bounds", "--N", "300", "--omega", "1", "--tau", "1", "--only", "j0",
    ]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("too large"), "{}", stderr(&out));

    let out = btc_kur(&[
        "bounds",
        "--N",
        "300",
        "--omega",
        "1",
        "--tau",
        "1",
        "--only",
        "bmb,bmb-ub",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
}

#[test]
fn bounds_writes_metadata() {
    let dir = tempfile::tempdir().unwrap();
    let meta = dir.path().join("m.json");
    let out = btc_kur(&[
        "bounds",
        "--N",
        "4",
        "--omega",
        "0.5",
        "--tau",
        "0.5",
        "--exact-dt",
        "5e-3",
        "--exact-stride",
        "10",
        "--metadata",
        meta.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let csv = String::from_utf8(out.stdout).unwrap();
    assert_eq!(csv.lines().count(), 12);
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(meta).unwrap()).unwrap();
    assert_eq!(m["n_spins"], 4);
}

#[test]
fn dry_run_echoes_resolved_config() {
    let out = btc_kur(&[
        "kur",
        "size-sweep",
        "--preset",
        "fig3",
        "--seed",
        "11",
        "--dry-run",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("\"master_seed\": 11"));
    assert!(text.contains("\"kind\": \"size_sweep\""));
}

#[test]
fn bad_configs_exit_with_input_error() {
    for args in [
        vec!["kur", "time-sweep", "--preset", "nope", "--dry-run"],
        vec!["kur", "time-sweep", "--preset", "fig3", "--dry-run"],
        vec![
            "kur",
            "time-sweep",
            "--preset",
            "fig2",
            "--set",
            "kappa=-1",
            "--dry-run",
        ],
        vec![
            "kur",
            "time-sweep",
            "--preset",
            "fig2",
            "--set",
            "bogus=1",
            "--dry-run",
        ],
        vec!["kur", "time-sweep"],
    ] {
        assert_eq!(code(&btc_kur(&args)), 2, "{args:?}");
    }
}

fn sweep_into(dir: &Path, threads: &str) -> Output {
    let mut args = vec![
        "--threads",
        threads,
        "kur",
        "time-sweep",
        "--preset",
        "fig2",
        "--no-check",
    ];
    args.extend_from_slice(&SMALL_SWEEP);
    Command::new(env!("CARGO_BIN_EXE_btc-kur"))
        .args(&args)
        .env("BTC_KUR_OUT_DIR", dir)
        .output()
        .unwrap()
}

#[test]
fn time_sweep_output_is_reproducible_and_hashed() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let out = sweep_into(a.path(), "1");
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(code(&sweep_into(b.path(), "2")), 0);

    let manifest: serde_json::Value =
        serde_json::from_slice(&fs::read(a.path().join("manifest.json")).unwrap()).unwrap();
    let files = manifest["files"].as_array().unwrap();
    assert_eq!(files.len(), 7);
    assert_eq!(manifest["config"]["n_traj"], 60);
    assert_eq!(manifest["seeds"].as_array().unwrap().len(), 2);
    for f in files {
        let name = f["name"].as_str().unwrap();
        let left = fs::read(a.path().join(name)).unwrap();
        let right = fs::read(b.path().join(name)).unwrap();
        assert!(left == right, "{name} differs between thread counts");
        assert_eq!(f["bytes"].as_u64().unwrap() as usize, left.len());
    }
}

#[test]
fn failed_ordering_check_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let base = [
        "kur",
        "verify",
        "--preset",
        "figS1",
        "--set",
        "n_spins=6",
        "--set",
        "omegas=[1.5]",
        "--set",
        "tau=1.0",
        "--set",
        "deviation_at=[0.5]",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ];
    let out = btc_kur(&base);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
    assert!(dir.path().join("deviation.csv").exists());

    let mut args = base.to_vec();
    args.push("--no-check");
    assert_eq!(code(&btc_kur(&args)), 0);
}
