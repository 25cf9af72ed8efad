use std::path::Path;
use std::process::{Command, Output};

fn slcsim(args: &[&str], out_dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_slcsim")).args(args).env("SLCSIM_OUT_DIR", out_dir).output().unwrap()
}

fn tmp(name: &str) -> std::path::PathBuf {
    let d = std::env::temp_dir().join(format!("slcsim-cli-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&d);
    std::fs::create_dir_all(&d).unwrap();
    d
}

fn summary(o: &Output) -> serde_json::Value {
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8(o.stdout.clone()).unwrap();
    let json = stdout.lines().find(|l| l.ends_with(".json")).unwrap();
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(json).unwrap()).unwrap();
    v["summary"].clone()
}

#[test]
fn same_config_gives_byte_identical_artifacts() {
    let (a, b) = (tmp("det-a"), tmp("det-b"));
    let args = ["run", "--experiment", "capacity-curves", "--scale", "16", "--seed", "5"];
    assert!(slcsim(&args, &a).status.success());
    assert!(slcsim(&[&args[..], &["--jobs", "2"]].concat(), &b).status.success());
    let names = |d: &Path| {
        let mut v: Vec<_> = std::fs::read_dir(d).unwrap().map(|e| e.unwrap().file_name()).collect();
        v.sort();
        v
    };
    assert_eq!(names(&a), names(&b));
    assert_eq!(names(&a).len(), 2);
    for n in names(&a) {
        assert_eq!(std::fs::read(a.join(&n)).unwrap(), std::fs::read(b.join(&n)).unwrap(), "{n:?}");
    }
}

#[test]
fn inclusiveness_reports_the_configured_policy() {
    let d = tmp("incl");
    let s = summary(&slcsim(&["run", "--experiment", "inclusiveness", "--policy", "exclusive"], &d));
    assert_eq!(s["decision"], "exclusive");
}

#[test]
fn barcode_with_fixed_digits_decodes_them() {
    let d = tmp("bar");
    let s = summary(&slcsim(&["run", "--experiment", "snoop-barcode", "--digits", "34"], &d));
    assert_eq!(s["top1"], "34");
}

#[test]
fn bad_config_exits_with_two() {
    let d = tmp("bad");
    let f = d.join("bad.toml");
    std::fs::write(&f, "experiment = \"benchmark\"\nscale = 3\n").unwrap();
    let o = slcsim(&["validate-config", f.to_str().unwrap()], &d);
    assert_eq!(o.status.code(), Some(2));
    let e: serde_json::Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(e["error"], "ConfigError");
    std::fs::write(&f, "experiment = \"benchmark\"\nwat = 1\n").unwrap();
    assert_eq!(slcsim(&["run", "--config", f.to_str().unwrap()], &d).status.code(), Some(2));
    assert_eq!(slcsim(&["run", "--experiment", "nope"], &d).status.code(), Some(2));
}

#[test]
fn valid_config_file_runs_and_flags_win() {
    let d = tmp("cfg");
    let f = d.join("lat.toml");
    std::fs::write(&f, "experiment = \"latency\"\ntrials = 50\nseed = 3\n").unwrap();
    assert_eq!(slcsim(&["validate-config", f.to_str().unwrap()], &d).status.code(), Some(0));
    let s = summary(&slcsim(&["run", "--config", f.to_str().unwrap(), "--trials", "20"], &d));
    assert_eq!(s["rows"][0]["samples"], 20);
}

#[test]
fn plotdata_has_one_series_per_curve() {
    let d = tmp("plot");
    let o = slcsim(&["run", "--experiment", "capacity-curves", "--scale", "16"], &d);
    assert!(o.status.success());
    let csv = String::from_utf8(o.stdout).unwrap().lines().find(|l| l.ends_with(".csv")).unwrap().to_string();
    let out = d.join("plot.csv");
    assert!(slcsim(&["emit-plotdata", &csv, "--out", out.to_str().unwrap()], &d).status.success());
    let text = std::fs::read_to_string(out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("series,x,y"));
    let series: std::collections::BTreeSet<&str> = lines.map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(series.into_iter().collect::<Vec<_>>(), ["l2_hits", "slc_hits"]);
}

#[test]
fn list_names_every_experiment() {
    let d = tmp("list");
    let o = slcsim(&["list-experiments"], &d);
    let text = String::from_utf8(o.stdout).unwrap();
    for e in ["latency", "fingerprint", "mitigation-grid", "snoop-digits"] {
        assert!(text.lines().any(|l| l.starts_with(e)), "{e}");
    }
}
