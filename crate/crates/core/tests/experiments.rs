use slcsim::experiment::{emit_plotdata, run, ExperimentConfig, ExperimentError, EXPERIMENTS};

fn out_dir(name: &str) -> std::path::PathBuf {
    let d = std::env::temp_dir().join(format!("slcsim-exp-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&d);
    d
}

#[test]
fn written_artifacts_round_trip_into_plot_data() {
    let mut c = ExperimentConfig::named("stride-scan");
    c.scale = Some(64);
    c.sizes = Some(vec![0.5, 1.0, 1.5]);
    let a = run(&c, 1).unwrap();
    let dir = out_dir("rt");
    let (csv, js) = a.write(&dir).unwrap();
    assert!(csv.file_name().unwrap().to_str().unwrap().starts_with(&format!("stride-scan-{}", &a.config_hash[..12])));
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(js).unwrap()).unwrap();
    assert_eq!(v["config_hash"], a.config_hash.as_str());
    assert_eq!(v["summary"]["plateaus"].as_array().unwrap().len(), 8);
    let plot = emit_plotdata(&std::fs::read_to_string(csv).unwrap()).unwrap();
    let series: std::collections::BTreeSet<&str> = plot.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(series.len(), 8);
    assert_eq!(plot.lines().count(), 1 + 8 * 3);
}

#[test]
fn changing_the_seed_changes_hash_and_output() {
    let mut c = ExperimentConfig::named("benchmark");
    c.duration_ms = Some(1000.0);
    let a = run(&c, 1).unwrap();
    c.seed = Some(2);
    let b = run(&c, 1).unwrap();
    assert_ne!(a.config_hash, b.config_hash);
    assert_ne!(a.csv_bytes(), b.csv_bytes());
}

#[test]
fn fixed_digits_are_recognized() {
    let mut c = ExperimentConfig::named("snoop-digits");
    c.digits = Some("5".into());
    let a = run(&c, 1).unwrap();
    assert_eq!(a.summary["guess"], "5");
}

#[test]
fn every_experiment_has_a_plot_spec_matching_its_header() {
    // Header-only artifacts exercise the column lookups without running.
    let headers = [
        ("latency", "scenario,samples,mean,std"),
        ("capacity-curves", "lines,l2_hits,slc_hits"),
        ("inclusiveness", "seed,size,seq_slc_hits,alt_slc_hits,gap"),
        ("stride-scan", "stride,lines,l2_hits,slc_hits"),
        ("replacement-probe", "fraction,l2_buffer_lines,slc_buffer_lines,buf1_l2,buf2_l2,buf1_slc,buf2_slc"),
        ("channel-scope", "placement,lines,mean_time"),
        ("benchmark", "seed,sample,bit,time"),
        ("collect-trace", "sample,time,misses,saturated"),
        ("fingerprint", "true_site,predicted_site,count"),
        ("pixel-steal", "pixel,truth,guess,correct"),
        ("frame-monitor", "epoch,truth,value,position"),
        ("snoop-barcode", "narrow_height,trial,code,decoded,correct"),
        ("snoop-digits", "trial,digits,class,guess,rank"),
        ("mitigation-grid", "scheme,size_bytes,channel,t,overhead"),
    ];
    assert_eq!(headers.len(), EXPERIMENTS.len());
    for (name, header) in headers {
        let text = format!("# experiment={name} config_hash=00\n{header}\n");
        assert_eq!(emit_plotdata(&text).unwrap(), "series,x,y\n", "{name}");
    }
}

#[test]
fn invalid_mask_is_a_config_error() {
    let c = ExperimentConfig::from_toml(
        "experiment = \"benchmark\"\nmask = { kind = \"slc_mask\", buffer_size = 1048576, stride = 128 }\n",
    )
    .unwrap();
    assert!(matches!(run(&c, 1), Err(ExperimentError::Config(_))));
}
