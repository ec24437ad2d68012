use std::process::{Command, Output};

fn uvlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_uvlab"))
        .args(args)
        .output()
        .expect("uvlab runs")
}

fn stdout_ok(args: &[&str]) -> String {
    let out = uvlab(args);
    assert!(
        out.status.success(),
        "uvlab {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn encode_and_decode_msr() {
    let json: serde_json::Value =
        serde_json::from_str(&stdout_ok(&["encode-msr", "--offset-mv", "-100", "--json"])).unwrap();
    assert_eq!(json["msr"], "0x80000011f3800000");
    assert_eq!(json["domain"], "cores");
    assert_eq!(json["command"], "write_voltage");
    assert_eq!(json["mode"], "offset");
    assert_eq!(json["offset_mv"], -100);

    let back: serde_json::Value =
        serde_json::from_str(&stdout_ok(&["decode-msr", "0x80000011F3800000", "--json"])).unwrap();
    assert_eq!(back, json);

    let text = stdout_ok(&["decode-msr", "80000011F3800000"]);
    assert!(text.starts_with("0x80000011f3800000\n"));
    assert!(text.contains("-100 mV"));

    let st: serde_json::Value =
        serde_json::from_str(&stdout_ok(&["encode-msr", "--static-units", "1024", "--json"])).unwrap();
    assert_eq!(st["mode"], "static");
    assert_eq!(st["static_units"], 1024);
    assert!(st.get("offset_mv").is_none());
}

#[test]
fn bad_msr_words_are_rejected() {
    assert!(!uvlab(&["decode-msr", "0x00000011F3800000"]).status.success());
    assert!(!uvlab(&["decode-msr", "zz"]).status.success());
    assert!(!uvlab(&["encode-msr", "--offset-mv", "-2000"]).status.success());
}

#[test]
fn scan_file_and_bundled() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.s");
    std::fs::write(
        &path,
        "vpaddq %xmm1, %xmm2, %xmm3\nnop_free: vmovdqu %xmm3, 0x20\nhalt\n",
    )
    .unwrap();
    let hits: serde_json::Value = serde_json::from_str(&stdout_ok(&["scan", path.to_str().unwrap()])).unwrap();
    assert_eq!(hits.as_array().unwrap().len(), 1);
    assert_eq!(hits[0]["kind"], "VP2");

    let hits: serde_json::Value = serde_json::from_str(&stdout_ok(&["scan", "listing3"])).unwrap();
    assert_eq!(
        hits,
        serde_json::json!([{"kind": "VP1", "op_index": 0, "store_index": 1, "gap": 0}])
    );
    assert!(!uvlab(&["scan", "/nonexistent/prog.s"]).status.success());
}

#[test]
fn campaign_json_is_identical_across_thread_counts() {
    let args = |threads: &'static str| {
        vec![
            "--threads",
            threads,
            "campaign",
            "--profile",
            "i7-7700K",
            "--victim",
            "hmac32",
            "--core",
            "1",
            "--stressor",
            "listing2",
            "--seed",
            "42",
            "--runs",
            "3",
            "--tries-per-run",
            "2000",
        ]
    };
    let one = stdout_ok(&args("1"));
    let again = stdout_ok(&args("1"));
    let four = stdout_ok(&args("4"));
    assert_eq!(one, again);
    assert_eq!(one, four);
    let v: serde_json::Value = serde_json::from_str(&one).unwrap();
    assert_eq!(v["tries"], 6000);
    assert_eq!(v["seed"], 42);
    assert_eq!(v["per_run"].as_array().unwrap().len(), 3);
}

#[test]
fn campaign_writes_csv_and_mce_log() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("t.csv");
    let log = dir.path().join("mce.jsonl");
    let out = stdout_ok(&[
        "campaign",
        "--profile",
        "i7-7700K",
        "--victim",
        "poc",
        "--core",
        "2",
        "--seed",
        "7",
        "--runs",
        "2",
        "--tries-per-run",
        "300",
        "--csv",
        csv.to_str().unwrap(),
        "--mce-log",
        log.to_str().unwrap(),
    ]);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["scenario"], "poc");
    let table = std::fs::read_to_string(&csv).unwrap();
    let mut lines = table.lines();
    assert!(lines
        .next()
        .unwrap()
        .starts_with("processor,core,start_temperature_c,voltage_v,offset_mv,payload"));
    assert!(lines.next().unwrap().starts_with("i7-7700K,2,"));
    for line in std::fs::read_to_string(&log).unwrap().lines() {
        let rec: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(rec.get("timestamp").is_some());
    }
}

#[test]
fn zero_offset_campaign_has_no_successes() {
    let out = stdout_ok(&[
        "campaign",
        "--profile",
        "i7-7700K",
        "--victim",
        "hmac32",
        "--core",
        "1",
        "--offset-mv",
        "0",
        "--runs",
        "1",
        "--tries-per-run",
        "500",
    ]);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["successes"], 0);
    assert!(!uvlab(&[
        "campaign",
        "--profile",
        "i7-7700K",
        "--victim",
        "poc",
        "--core",
        "1",
        "--offset-mv",
        "-7"
    ])
    .status
    .success());
}

#[test]
fn window_probe_and_reports() {
    let plan: serde_json::Value =
        serde_json::from_str(&stdout_ok(&["window", "--profile", "i7-7700K", "--pstate", "0x10"])).unwrap();
    assert_eq!(plan["cores"][2]["window_top"], 580_000);

    let probe: serde_json::Value = serde_json::from_str(&stdout_ok(&[
        "probe",
        "--profile",
        "i7-8700K",
        "--pstate",
        "1b",
        "--tries",
        "3000",
    ]))
    .unwrap();
    assert_eq!(probe["report"]["most_fault_prone"], 0);

    let heat = stdout_ok(&["report", "heatmap", "--profile", "i7-8700K", "--faults", "200"]);
    let lines: Vec<_> = heat.lines().collect();
    assert_eq!(lines.len(), 7);
    assert!(lines.iter().all(|l| l.split(',').count() == 18));

    let mult = stdout_ok(&["report", "multiplicity", "--profile", "i7-7700", "--faults", "100"]);
    assert_eq!(mult.lines().count(), 5);
    assert!(!uvlab(&["report", "heatmap", "--profile", "i9-none"]).status.success());
}
