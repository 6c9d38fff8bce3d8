use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn scratch(name: &str) -> PathBuf {
    let d = Path::new(env!("CARGO_TARGET_TMPDIR")).join("cli").join(name);
    let _ = fs::remove_dir_all(&d);
    fs::create_dir_all(&d).unwrap();
    d
}

fn iwave(config: &Path, out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_iwave"))
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .arg("--quiet")
        .args(args)
        .output()
        .unwrap()
}

fn quickstart() -> String {
    fs::read_to_string(configs().join("flat_quickstart.toml")).unwrap()
}

fn error_of(o: &Output) -> serde_json::Value {
    serde_json::from_slice(&o.stderr).unwrap()
}

#[test]
fn schema_errors_name_the_field() {
    let d = scratch("schema");
    let cfg = d.join("bad.toml");
    fs::write(&cfg, quickstart().replace("[forcing]", "[forcing]\nbogus = 1")).unwrap();
    let o = iwave(&cfg, &d, &["solve"]);
    assert_eq!(o.status.code(), Some(2));
    let e = error_of(&o);
    assert_eq!(e["error"]["kind"], "schema");
    assert!(e["error"]["message"].as_str().unwrap().contains("bogus"));
    assert!(d.join("error.json").exists());

    fs::write(&cfg, quickstart().replace("topography = { kind = \"flat\" }\n", "")).unwrap();
    let o = iwave(&cfg, &d, &["solve"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(error_of(&o)["error"]["message"].as_str().unwrap().contains("topography"));
}

#[test]
fn supercritical_frequency_is_refused() {
    let d = scratch("supercritical");
    let cfg = d.join("steep.toml");
    let text = quickstart()
        .replace("topography = { kind = \"flat\" }", "topography = { kind = \"gaussian\", amplitude = 1.0, width = 10.0 }")
        .replace("lambda = 0.7", "lambda = 0.99");
    fs::write(&cfg, text).unwrap();
    let o = iwave(&cfg, &d, &["dynamics"]);
    assert_eq!(o.status.code(), Some(1));
    let e = error_of(&o);
    assert_eq!(e["error"]["kind"], "not_subcritical");
    assert!(e["error"]["message"].as_str().unwrap().contains("margin"));
}

#[test]
fn flat_quickstart_evolution() {
    let d = scratch("evolve");
    let o = iwave(&configs().join("flat_quickstart.toml"), &d, &["evolve"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let mut rd = csv::Reader::from_path(d.join("eigenvalues.csv")).unwrap();
    let h = rd.headers().unwrap().clone();
    let col = |n: &str| h.iter().position(|c| c == n).unwrap();
    let (iz, ic) = (col("z"), col("closed_form"));
    let mut rows = 0;
    for r in rd.records() {
        let r = r.unwrap();
        let z: f64 = r[iz].parse().unwrap();
        let c: f64 = r[ic].parse().unwrap();
        assert!((z - c).abs() < 1e-8);
        rows += 1;
    }
    assert_eq!(rows, 320);
    let mut rd = csv::Reader::from_path(d.join("timeseries.csv")).unwrap();
    let fl = rd.headers().unwrap().iter().position(|c| c == "flagged").unwrap();
    let flags: Vec<bool> = rd.records().map(|r| r.unwrap()[fl].parse().unwrap()).collect();
    assert_eq!(flags.len(), 81);
    // once the ends are contaminated, every later row stays flagged
    let first = flags.iter().position(|&f| f).expect("some rows flagged");
    assert!(flags[first..].iter().all(|&f| f));
    let doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("evolve.json")).unwrap()).unwrap();
    assert_eq!(doc["command"], "evolve");
    assert!(doc["schema_version"].is_string());
}

#[test]
fn singleton_sweep_is_degenerate() {
    let d = scratch("sweep");
    let cfg = d.join("one.toml");
    fs::write(&cfg, quickstart().replace("n1 = 64\nn2 = 24", "n1 = 32\nn2 = 12") + "\n[sweep]\nepsilons = [-1e-3]\n").unwrap();
    let o = iwave(&cfg, &d, &["sweep", "--over", "epsilon"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("sweep.json")).unwrap()).unwrap();
    assert_eq!(doc["result"]["degenerate"], true, "{doc}");
}

#[test]
fn runs_are_reproducible() {
    let cfg = scratch("repro").join("small.toml");
    fs::write(&cfg, quickstart().replace("n1 = 64\nn2 = 24", "n1 = 40\nn2 = 16")).unwrap();
    let a = scratch("repro_a");
    let b = scratch("repro_b");
    for d in [&a, &b] {
        let o = iwave(&cfg, d, &["--threads", "1", "solve"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["report.json", "field.csv", "field.png"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}
