use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_interpolab"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn json(o: &Output) -> serde_json::Value {
    serde_json::from_slice(&o.stdout).expect("stdout is JSON")
}

#[test]
fn catalog_lists_measures() {
    let o = run(&["catalog"]);
    assert_eq!(code(&o), 0);
    let v = json(&o);
    let keys: Vec<&str> = v["payload"]["measures"].as_array().unwrap().iter().map(|k| k.as_str().unwrap()).collect();
    assert!(keys.contains(&"sym_exp"));
    assert!(v["payload"]["suites"].as_array().unwrap().iter().any(|k| k == "selftest-fail"));
}

#[test]
fn repeated_runs_are_byte_identical() {
    for args in [
        &["verify", "lemma", "--id", "rho-metric", "--trials", "2000", "--seed", "7"][..],
        &["constant", "two-point", "--alpha", "0.3", "--p", "1.5", "--oracle"],
        &["ia-ratio", "--measure", "gauss:sigma=1", "--f", "1+0.5*sin(x)", "--p", "1,1.5"],
        &["tail", "mc", "--r", "1.5", "--samples", "20000", "--t", "0.5:2:0.5", "--seed", "3"],
        &["transport", "check", "--r", "1.3", "--xmax", "5", "--step", "0.5", "--samples", "10000"],
    ] {
        let a = run(args);
        let b = run(args);
        assert_eq!(code(&a), 0, "{args:?}: {}", String::from_utf8_lossy(&a.stderr));
        assert_eq!(a.stdout, b.stdout, "{args:?}");
    }
}

#[test]
fn seed_changes_randomised_output() {
    let a = run(&["verify", "lemma", "--id", "lemma8", "--trials", "200", "--seed", "1"]);
    let b = run(&["verify", "lemma", "--id", "lemma8", "--trials", "200", "--seed", "2"]);
    assert_ne!(json(&a)["payload"], json(&b)["payload"]);
    assert_ne!(json(&a)["config_digest"], json(&b)["config_digest"]);
}

#[test]
fn timing_is_opt_in() {
    let o = run(&["catalog"]);
    assert!(json(&o).get("wall_time_seconds").is_none());
    let o = run(&["catalog", "--timing"]);
    assert!(json(&o)["wall_time_seconds"].as_f64().unwrap() >= 0.0);
}

#[test]
fn exit_codes() {
    assert_eq!(code(&run(&["verify", "lemma", "--id", "selftest-fail", "--trials", "10"])), 1);
    assert_eq!(code(&run(&["verify", "lemma", "--id", "rho-metric", "--trials", "100"])), 0);
    assert_eq!(code(&run(&["ia-ratio", "--measure", "gauss:sigma=1", "--f", "1+sin(x"])), 2);
    assert_eq!(code(&run(&["ia-ratio", "--measure", "gauss:sigma=1", "--f", "x2"])), 2);
    assert_eq!(code(&run(&["verify", "lemma", "--id", "no-such-suite"])), 2);
    assert_eq!(code(&run(&["frobnicate"])), 2);
    assert_eq!(code(&run(&["constant", "two-point", "--alpha", "1.5", "--p", "1.5"])), 2);
    // a false claim is a violation
    let o = run(&["ia-ratio", "--measure", "gauss:sigma=1", "--f", "1+0.5*sin(x)", "--p", "1", "--claim", "0.5"]);
    assert_eq!(code(&o), 1);
    assert_eq!(json(&o)["passed"], false);
    // constants witness nothing
    let o = run(&["ia-ratio", "--measure", "two_point:alpha=0.3", "--f", "3", "--p", "1.5"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(json(&o)["payload"]["max_ratio"].as_f64(), Some(0.0));
    // no points in the fitting window: the fit is omitted
    let o = run(&["tail", "mc", "--r", "2", "--samples", "10000", "--t", "0.5,1"]);
    assert_eq!(code(&o), 0);
    assert!(json(&o)["payload"]["sharpness"].is_null());
}

#[test]
fn two_point_oracle_fields() {
    let o = run(&["constant", "two-point", "--alpha", "0.3", "--p", "1.5", "--oracle"]);
    assert_eq!(code(&o), 0);
    let p = &json(&o)["payload"];
    let gap = p["gap"].as_f64().unwrap();
    assert!(gap <= 1e-6);
    let closed = p["closed_form"].as_f64().unwrap();
    let bf = p["bruteforce"]["constant"].as_f64().unwrap();
    assert!(((closed - bf).abs() - gap).abs() < 1e-15);
}

#[test]
fn csv_by_flag_and_by_extension() {
    let o = run(&["mgf", "verify", "--measure", "gauss:sigma=1", "--lambda", "0,1", "--p", "1.5", "--format", "csv"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("p,lambda,mgf,bound,margin"));
    assert_eq!(lines.count(), 2);

    let dir = std::env::temp_dir().join(format!("interpolab-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("bound.csv");
    let o = run(&["tail", "bound", "--a", "1", "--t", "0:2:0.5", "--out", path.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    assert!(o.stdout.is_empty());
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("t,bound,reference,p,lambda\n"));
    assert_eq!(text.lines().count(), 6);
    let path = dir.join("bound.json");
    run(&["tail", "bound", "--a", "1", "--t", "0:2:0.5", "--out", path.to_str().unwrap()]);
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(v["payload"]["rows"].as_array().unwrap().len(), 5);
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn transport_dump_columns() {
    let o = run(&["transport", "build", "--r", "1.5", "--dump", "csv"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("x,z,dz,jacobian_sq,bound_lo,bound_hi"));
    let mut n = 0;
    for line in lines {
        let v: Vec<f64> = line.split(',').map(|c| c.parse().unwrap()).collect();
        if v[3].is_finite() {
            assert!(v[4] <= v[3] && v[3] <= v[5], "{line}");
        }
        n += 1;
    }
    assert_eq!(n, 4096);
}

#[test]
fn floats_have_seventeen_digits() {
    let o = run(&["constant", "two-point", "--alpha", "0.3", "--p", "1.5"]);
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("\"alpha\":2.9999999999999999e-1"), "{text}");
    assert!(text.ends_with('\n'));
}
