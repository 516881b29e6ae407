use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn prefagg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_prefagg"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn binary_scenario(p: f64, ra: f64, rb: f64, beta: f64, group_size: &str) -> String {
    format!(
        r#"{{"contexts": [{{"id": "q", "weight": 1, "outputs": [
            {{"id": "a", "ref_prob": {p}, "reward": {{"kind": "deterministic", "value": {ra}}}}},
            {{"id": "b", "ref_prob": {}, "reward": {{"kind": "deterministic", "value": {rb}}}}}]}}],
          "hyper": {{"beta": {beta}, "group_size": {group_size}, "penalty": "kl0", "normalisation": "shift_scale"}}}}"#,
        1.0 - p
    )
}

fn write(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let p = dir.path().join(name);
    fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Parses CSV output into a header and rows, skipping `#` lines.
fn parse(text: &str) -> (Vec<String>, Vec<Vec<String>>) {
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    (header, rows)
}

fn col(header: &[String], name: &str) -> usize {
    header.iter().position(|h| h == name).unwrap()
}

#[test]
fn closed_form_pair_prints_one_half() {
    let o = prefagg(&["closed-form", "--pi-ref", "0.25", "--beta", "1", "--gamma", "1", "--case", "g2"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o), "0.5\n");
}

#[test]
fn closed_form_negative_margin_swaps_answers() {
    let up = prefagg(&["closed-form", "--pi-ref", "0.7", "--beta", "0.5", "--case", "g2"]);
    let down = prefagg(&["closed-form", "--pi-ref", "0.3", "--beta", "0.5", "--gamma", "-1", "--case", "g2"]);
    let a: f64 = stdout(&up).trim().parse().unwrap();
    let b: f64 = stdout(&down).trim().parse().unwrap();
    assert!((a - (1.0 - b)).abs() < 1e-15);
}

#[test]
fn closed_form_lists_direct_kl_candidates() {
    let o = prefagg(&["closed-form", "--pi-ref", "0.5", "--beta", "10", "--case", "limit-direct-kl"]);
    assert_eq!(o.status.code(), Some(0));
    let (h, rows) = parse(&stdout(&o));
    assert_eq!(rows.len(), 3);
    let kind = col(&h, "kind");
    assert_eq!(rows.iter().filter(|r| r[kind] == "interior_root").count(), 2);
    assert_eq!(rows[2][kind], "boundary");
    let selected = col(&h, "selected");
    assert_eq!(rows.iter().filter(|r| r[selected] == "true").count(), 1);
}

#[test]
fn pair_sweep_over_reference_grid() {
    let dir = TempDir::new().unwrap();
    let grid: Vec<String> = (0..=100).map(|i| format!("{}", i as f64 / 100.0)).collect();
    let spec = format!(
        r#"{{"axis": "pi_ref_a", "grid": [{}],
            "curves": [{{"beta": 0.1, "gamma": 1.0}}, {{"beta": 0.5, "gamma": 1.0}}, {{"beta": 1, "gamma": 1.0}}, {{"beta": 2, "gamma": 1.0}}],
            "variant": {{"penalty": "kl0", "normalisation": "shift_scale", "group_size": 2}}}}"#,
        grid.join(", ")
    );
    let spec = write(&dir, "pairs.json", &spec);
    let csv = dir.path().join("pairs.csv");
    let o = prefagg(&["sweep", s(&spec), "-o", s(&csv)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(&csv).unwrap();
    let (h, rows) = parse(&text);
    assert_eq!(rows.len(), 404);
    for name in ["pi_ref_a", "beta", "gamma", "pi_a", "variant"] {
        col(&h, name);
    }
    let (curve, pi) = (col(&h, "curve"), col(&h, "pi_a"));
    for c in 0..4 {
        let v: Vec<f64> = rows
            .iter()
            .filter(|r| r[curve] == c.to_string())
            .map(|r| r[pi].parse().unwrap())
            .collect();
        assert_eq!(v.len(), 101);
        assert!(v.windows(2).all(|w| w[1] >= w[0]));
    }
    // 17 significant digits
    assert!(rows[1][pi].contains('e') && rows[1][pi].split('e').next().unwrap().len() == 18);
    // deterministic output
    let again = dir.path().join("again.csv");
    prefagg(&["sweep", s(&spec), "-o", s(&again)]);
    assert_eq!(fs::read(&csv).unwrap(), fs::read(&again).unwrap());
}

#[test]
fn tie_scenario_returns_reference() {
    let dir = TempDir::new().unwrap();
    let f = write(&dir, "tie.json", &binary_scenario(0.3, 1.0, 1.0, 0.04, "2"));
    let o = prefagg(&["solve", s(&f)]);
    assert_eq!(o.status.code(), Some(0));
    let (h, rows) = parse(&stdout(&o));
    let (r, p) = (col(&h, "pi_ref"), col(&h, "pi"));
    for row in rows {
        assert_eq!(row[r], row[p]);
    }
}

#[test]
fn solve_agrees_with_closed_form() {
    let dir = TempDir::new().unwrap();
    for (p, beta, g, case) in [
        (0.3, 0.5, "2", "g2"),
        (0.05, 0.04, "2", "g2"),
        (0.6, 2.0, "2", "g2"),
        (0.3, 0.5, "\"limit\"", "limit"),
        (0.01, 1.5, "\"limit\"", "limit"),
    ] {
        let f = write(&dir, "b.json", &binary_scenario(p, 1.0, 0.0, beta, g));
        let o = prefagg(&["solve", s(&f)]);
        assert_eq!(o.status.code(), Some(0));
        let (h, rows) = parse(&stdout(&o));
        let solved: f64 = rows[0][col(&h, "pi")].parse().unwrap();
        let c = prefagg(&["closed-form", "--pi-ref", &p.to_string(), "--beta", &beta.to_string(), "--case", case]);
        let closed: f64 = stdout(&c).trim().parse().unwrap();
        assert!((solved - closed).abs() <= 1e-8, "{case} {p} {beta}: {solved} vs {closed}");
    }
}

#[test]
fn multistart_lists_stationary_points() {
    let dir = TempDir::new().unwrap();
    let f = write(&dir, "b.json", &binary_scenario(0.3, 1.0, 0.0, 0.5, "2"));
    let o = prefagg(&["solve", s(&f), "--multistart"]);
    assert_eq!(o.status.code(), Some(0));
    let (h, rows) = parse(&stdout(&o));
    assert!(!rows.is_empty());
    col(&h, "objective");
}

#[test]
fn exit_codes() {
    let dir = TempDir::new().unwrap();
    assert_eq!(prefagg(&["--help"]).status.code(), Some(0));
    assert_eq!(prefagg(&["--version"]).status.code(), Some(0));
    assert_eq!(prefagg(&["solve"]).status.code(), Some(1));
    assert_eq!(prefagg(&["closed-form", "--pi-ref", "0.2", "--beta", "1", "--case", "g3"]).status.code(), Some(1));
    assert_eq!(prefagg(&["solve", s(&dir.path().join("missing.json"))]).status.code(), Some(1));

    let bad_sum = binary_scenario(0.3, 1.0, 0.0, 0.5, "2").replace("0.7", "0.8");
    let f = write(&dir, "bad.json", &bad_sum);
    let o = prefagg(&["solve", s(&f)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("sum to"));
    let f = write(&dir, "g1.json", &binary_scenario(0.3, 1.0, 0.0, 0.5, "1"));
    assert_eq!(prefagg(&["solve", s(&f)]).status.code(), Some(2));
    let f = write(&dir, "junk.json", "{\"contexts\": [");
    assert_eq!(prefagg(&["solve", s(&f)]).status.code(), Some(2));
    assert_eq!(
        prefagg(&["closed-form", "--pi-ref", "0.2", "--beta", "-1", "--case", "g2"]).status.code(),
        Some(2)
    );

    let f = write(&dir, "slow.json", &binary_scenario(0.3, 1.0, 0.0, 0.5, "3"));
    assert_eq!(prefagg(&["solve", s(&f), "--max-iter", "2"]).status.code(), Some(3));
}

#[test]
fn oracle_verify_reports_agreement() {
    let dir = TempDir::new().unwrap();
    let f = write(&dir, "b.json", &binary_scenario(0.3, 1.0, 0.0, 0.5, "3"));
    let o = prefagg(&["oracle-verify", s(&f), "--cases", "4", "--seed", "3"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let (h, rows) = parse(&stdout(&o));
    assert_eq!(rows.len(), 5);
    let d = col(&h, "discrepancy");
    assert!(rows.iter().all(|r| r[d].parse::<f64>().unwrap() <= 1e-4));
    assert!(String::from_utf8_lossy(&o.stderr).contains("max discrepancy"));
}

#[test]
fn train_writes_trace() {
    let dir = TempDir::new().unwrap();
    let f = write(&dir, "b.json", &binary_scenario(0.3, 1.0, 0.0, 0.5, "2"));
    let cfg = write(&dir, "cfg.json", r#"{"steps": 400, "checkpoint_every": 100, "seed": 5}"#);
    let out = dir.path().join("trace.csv");
    let o = prefagg(&["train", s(&f), "--config", s(&cfg), "-o", s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(&out).unwrap();
    assert!(text.starts_with("# seed=5 steps=400"));
    let (h, rows) = parse(&text);
    assert_eq!(h, ["step", "context_id", "output_id", "probability"]);
    assert_eq!(rows.len(), 5 * 2);
    let again = dir.path().join("again.csv");
    prefagg(&["train", s(&f), "--config", s(&cfg), "-o", s(&again)]);
    assert_eq!(text, fs::read_to_string(&again).unwrap());

    let bad = write(&dir, "bad.json", r#"{"stepz": 4}"#);
    assert_eq!(prefagg(&["train", s(&f), "--config", s(&bad)]).status.code(), Some(2));
}

#[test]
fn estimate_matches_exact_value() {
    let dir = TempDir::new().unwrap();
    let f = write(&dir, "b.json", &binary_scenario(0.3, 1.0, 0.0, 0.5, "4"));
    let o = prefagg(&["estimate", s(&f), "--output", "a", "--context", "q", "--samples", "20000", "--seed", "1"]);
    assert_eq!(o.status.code(), Some(0));
    let (h, rows) = parse(&stdout(&o));
    let (v, se) = (col(&h, "value"), col(&h, "standard_error"));
    let mc: f64 = rows[0][v].parse().unwrap();
    let sd: f64 = rows[0][se].parse().unwrap();
    let exact: f64 = rows[1][v].parse().unwrap();
    assert!((mc - exact).abs() <= 5.0 * sd);
    assert_eq!(
        prefagg(&["estimate", s(&f), "--output", "z", "--context", "q", "--samples", "10", "--seed", "1"]).status.code(),
        Some(2)
    );
}

#[test]
fn baselines_side_by_side() {
    let dir = TempDir::new().unwrap();
    let f = write(&dir, "b.json", &binary_scenario(0.3, 1.0, 0.0, 0.04, "2"));
    let o = prefagg(&["baselines", s(&f), "--beta", "0.5"]);
    assert_eq!(o.status.code(), Some(0));
    let (h, rows) = parse(&stdout(&o));
    let get = |name: &str| rows[0][col(&h, name)].parse::<f64>().unwrap();
    let e = 2f64.exp();
    assert!((get("rlhf") - 0.3 * e / (0.3 * e + 0.7)).abs() < 1e-12);
    let grpo = (0.5 + 0.85f64.sqrt()) / 2.0;
    assert!((get("grpo") - grpo).abs() < 1e-8);
    let nlhf = get("nlhf");
    assert!(nlhf > 0.3 && nlhf < 1.0);
}
