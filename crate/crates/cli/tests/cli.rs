use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn biosynth(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_biosynth"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn generate(dir: &Path, name: &str, threads: &str) {
    let o = biosynth(
        dir,
        &["--threads", threads, "generate", "--subjects", "60", "--band1", "3", "--band4", "6", "--seed", "42", "--out", name],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn generate_is_deterministic_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    generate(dir.path(), "a.csv", "1");
    generate(dir.path(), "b.csv", "4");
    let read = |f: &str| fs::read(dir.path().join(f)).unwrap();
    assert_eq!(read("a.csv"), read("b.csv"));
    assert_eq!(read("a.meta.json"), read("b.meta.json"));
    let header = String::from_utf8(read("a.csv")).unwrap();
    assert!(header.starts_with("subject_id,session,f0001,"));
}

#[test]
fn tampered_sidecar_fails_verification() {
    let dir = tempfile::tempdir().unwrap();
    generate(dir.path(), "db.csv", "1");
    assert_eq!(code(&biosynth(dir.path(), &["verify", "db.csv"])), 0);

    let side = dir.path().join("db.meta.json");
    let mut meta: serde_json::Value = serde_json::from_slice(&fs::read(&side).unwrap()).unwrap();
    let icc = &mut meta["features"][4]["achieved_icc"];
    *icc = serde_json::json!(icc.as_f64().unwrap() - 0.05);
    fs::write(&side, serde_json::to_string(&meta).unwrap()).unwrap();

    let o = biosynth(dir.path(), &["verify", "db.csv"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("f0005"));
}

#[test]
fn icc_evaluate_and_intercorr_outputs() {
    let dir = tempfile::tempdir().unwrap();
    generate(dir.path(), "db.csv", "1");

    let o = biosynth(dir.path(), &["icc", "db.csv"]);
    assert_eq!(code(&o), 0);
    let table = String::from_utf8(o.stdout).unwrap();
    assert_eq!(table.lines().count(), 1 + 9);
    assert!(table.starts_with("feature,icc,raw_icc,label,mult"));

    let o = biosynth(dir.path(), &["evaluate", "db.csv", "--features", "f0004,5,f0006", "--out", "eval.csv"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let json: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(json["n_genuine"], 60);
    assert_eq!(json["n_impostor"], 60 * 59);
    let eer = json["eer"].as_f64().unwrap();
    assert!((0.0..=0.5).contains(&eer));
    assert!(dir.path().join("eval.csv").exists() && dir.path().join("eval.json").exists());

    let o = biosynth(dir.path(), &["intercorr", "db.csv", "--policy", "pooled", "--out", "r.csv"]);
    assert_eq!(code(&o), 0);
    let hist = fs::read_to_string(dir.path().join("r.csv")).unwrap();
    assert_eq!(hist.lines().count(), 1 + 100);
}

#[test]
fn experiment_from_config_writes_table_and_provenance() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("sweep.toml"),
        "protocol = \"feature_sweep\"\nseed = 5\nn_subjects = 40\npool_features = 10\nfeature_counts = [2, 3]\nreplicates = 3\nbands = [\"band3\", \"band4\"]\n",
    )
    .unwrap();
    let o = biosynth(dir.path(), &["experiment", "sweep.toml", "--out", "sweep.csv"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let table = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    let header = table.lines().next().unwrap();
    assert!(header.starts_with("band,n_subjects,feature_count,median_eer"), "{header}");
    assert_eq!(table.lines().count(), 1 + 4);
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("sweep.json")).unwrap()).unwrap();
    assert_eq!(json["provenance"]["seed"], 5);
    assert_eq!(json["provenance"]["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&biosynth(dir.path(), &["--help"])), 0);
    assert_eq!(code(&biosynth(dir.path(), &["--version"])), 0);
    let o = biosynth(dir.path(), &["generate", "--bogus"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
    assert_eq!(code(&biosynth(dir.path(), &["experiment", "--out", "x.csv"])), 1);
    assert_eq!(code(&biosynth(dir.path(), &["experiment", "--preset", "fig5", "--out", "x.csv"])), 1);
    assert_eq!(code(&biosynth(dir.path(), &["verify", "missing.csv"])), 2);

    fs::write(dir.path().join("bad.csv"), "subject_id,f0001\n1,0\n").unwrap();
    let o = biosynth(dir.path(), &["icc", "bad.csv"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 1"));

    fs::write(dir.path().join("bad.toml"), "protocol = \"feature_sweep\"\nseed = 1\ntypo = 2\n").unwrap();
    assert_eq!(code(&biosynth(dir.path(), &["experiment", "bad.toml", "--out", "x.csv"])), 2);
}
