use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use bqp::cli::{read_problem_dir, read_vector, write_vector, CSV_HEADER};
use serde_json::Value;

fn bqp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bqp")).args(args).env("BQP_THREADS", "2").output().expect("binary runs")
}

fn generate(dir: &Path, args: &[&str]) {
    let mut all = vec!["generate", "--out", dir.to_str().unwrap()];
    all.extend_from_slice(args);
    let out = bqp(&all);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
}

fn solve_json(dir: &Path, args: &[&str]) -> (i32, Value) {
    let mut all = vec!["solve", dir.to_str().unwrap()];
    all.extend_from_slice(args);
    let out = bqp(&all);
    let code = out.status.code().unwrap();
    let json = serde_json::from_slice(&out.stdout).unwrap_or(Value::Null);
    (code, json)
}

fn manifest_checksum(dir: &Path) -> String {
    let m: Value = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
    m["checksum"].as_str().unwrap().to_string()
}

#[test]
fn generate_writes_a_complete_reproducible_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    generate(&a, &["--kind", "nnls", "--n", "30", "--density", "0.5", "--seed", "4"]);
    generate(&b, &["--kind", "nnls", "--n", "30", "--density", "0.5", "--seed", "4"]);
    for file in ["Q.mtx", "r.txt", "l.txt", "u.txt", "manifest.json"] {
        assert!(a.join(file).is_file(), "{file}");
    }
    assert_eq!(manifest_checksum(&a), manifest_checksum(&b));
    let (p, manifest) = read_problem_dir(&a).unwrap();
    assert_eq!(p.dim(), 30);
    assert_eq!(manifest.unwrap().checksum, bqp::problems::checksum(&p));
    let c = tmp.path().join("c");
    generate(&c, &["--kind", "nnls", "--n", "30", "--density", "0.5", "--seed", "5"]);
    assert_ne!(manifest_checksum(&a), manifest_checksum(&c));
}

#[test]
fn grid_problem_size_follows_the_grid() {
    let tmp = tempfile::tempdir().unwrap();
    generate(tmp.path(), &["--kind", "obstacle-a", "--nx", "32", "--ny", "32"]);
    let (p, _) = read_problem_dir(tmp.path()).unwrap();
    assert_eq!(p.dim(), 1024);
    let (code, json) = solve_json(tmp.path(), &["--algo", "apg-pas"]);
    assert_eq!(code, 0);
    assert_eq!(json["status"], "ok");
    assert!(json["report"]["kkt"]["g_inf"].as_f64().unwrap() <= 1e-9);
}

#[test]
fn proximal_solve_from_a_given_start_reaches_the_interior_point() {
    let tmp = tempfile::tempdir().unwrap();
    generate(tmp.path(), &["--kind", "saddle"]);
    let x0 = tmp.path().join("x0.txt");
    write_vector(&x0, &[0.0, 0.5]).unwrap();
    let sol = tmp.path().join("x.txt");
    let (code, json) = solve_json(
        tmp.path(),
        &[
            "--algo",
            "ppa",
            "--gamma",
            "1.001",
            "--no-early-exit",
            "--x0",
            x0.to_str().unwrap(),
            "--solution",
            sol.to_str().unwrap(),
        ],
    );
    assert_eq!(code, 0);
    assert_eq!(json["algorithm"], "ppa");
    let x = read_vector(&sol).unwrap();
    assert!((x[0] - 0.5).abs() <= 1e-8 && (x[1] - 0.5).abs() <= 1e-8, "{x:?}");
}

#[test]
fn first_stage_only_reports_its_stop_reason() {
    let tmp = tempfile::tempdir().unwrap();
    generate(tmp.path(), &["--kind", "nnls", "--n", "20", "--seed", "1"]);
    let (code, json) = solve_json(tmp.path(), &["--algo", "apg-only", "--max-iter", "3"]);
    assert_eq!(code, 0);
    assert_eq!(json["apg_stop_reason"], "iter_cap");
    assert_eq!(json["report"]["inner_apg_iters"], 3);
    let (code, json) = solve_json(tmp.path(), &["--algo", "pas-only"]);
    assert_eq!(code, 0);
    assert!(json["report"]["pas_steps"].as_u64().unwrap() > 0);
    assert!(json.get("apg_stop_reason").is_none());
}

#[test]
fn exit_codes_separate_input_and_solver_failures() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(bqp(&["solve", tmp.path().join("missing").to_str().unwrap()]).status.code(), Some(3));
    assert_eq!(bqp(&["generate", "--kind", "nnls", "--out", tmp.path().to_str().unwrap()]).status.code(), Some(3));
    assert_eq!(bqp(&["frobnicate"]).status.code(), Some(3));
    let dir = tmp.path().join("p");
    generate(&dir, &["--kind", "ncbqp-d", "--n", "20", "--seed", "2"]);
    assert_eq!(solve_json(&dir, &["--algo", "apg-pas", "--gamma", "1"]).0, 3);
    assert_eq!(solve_json(&dir, &["--algo", "ppa", "--switch-eps", "0.1"]).0, 3);
    let (code, _) = solve_json(&dir, &["--algo", "ppa", "--max-outer", "1"]);
    assert_eq!(code, 2);
    let (code, json) = solve_json(&dir, &["--algo", "appa"]);
    assert_eq!(code, 0);
    assert_eq!(json["status"], "ok");
    assert_eq!(solve_json(&dir, &["--algo", "ppa", "--kkt-tol=-1"]).0, 3);
    // a loose outer tolerance stops after one proximal step, short of a KKT point
    let (code, json) = solve_json(&dir, &["--algo", "ppa", "--tol", "1e3"]);
    assert_eq!(code, 2);
    assert_eq!(json["status"], "kkt_failed");
}

#[test]
fn bench_writes_one_row_per_cell_reproducibly() {
    let tmp = tempfile::tempdir().unwrap();
    generate(&tmp.path().join("nn"), &["--kind", "nnls", "--n", "25", "--seed", "3"]);
    let suite = r#"{
        "problems": [
            {"name": "nn", "dir": "nn"},
            {"name": "box", "generate": {"kind": "ncbqp-d", "n": 15, "lambda": 20.0, "seed": 7}},
            {"name": "saddle", "generate": {"kind": "saddle"}}
        ],
        "algorithms": ["apg-pas", "ppa"]
    }"#;
    let suite_path = tmp.path().join("suite.json");
    fs::write(&suite_path, suite).unwrap();
    let run = |name: &str| {
        let out = tmp.path().join(name);
        let res = bqp(&["bench", suite_path.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
        fs::read_to_string(out).unwrap()
    };
    let (first, second) = (run("a.csv"), run("b.csv"));
    let lines: Vec<&str> = first.lines().collect();
    assert_eq!(lines[0], CSV_HEADER);
    assert_eq!(lines.len(), 7);
    let time_col = CSV_HEADER.split(',').position(|c| c == "time_s").unwrap();
    let strip = |s: &str| -> Vec<Vec<String>> {
        s.lines()
            .map(|l| l.split(',').enumerate().filter(|(i, _)| *i != time_col).map(|(_, c)| c.to_string()).collect())
            .collect()
    };
    assert_eq!(strip(&first), strip(&second));
    let names: Vec<(&str, &str)> = lines[1..]
        .iter()
        .map(|l| {
            let mut it = l.split(',');
            (it.next().unwrap(), it.next().unwrap())
        })
        .collect();
    assert_eq!(names[0], ("nn", "apg-pas"));
    assert_eq!(names[5], ("saddle", "ppa"));
}

#[test]
fn sorted_working_sets_never_cost_more_on_grids() {
    let tmp = tempfile::tempdir().unwrap();
    let suite = r#"{
        "problems": [
            {"name": "oa", "generate": {"kind": "obstacle-a", "nx": 14, "ny": 14, "c": 0.00111}},
            {"name": "ob", "generate": {"kind": "obstacle-b", "nx": 14, "ny": 14, "c": 0.00556}},
            {"name": "to", "generate": {"kind": "torsion", "nx": 14, "ny": 14, "c": 0.0111}},
            {"name": "jb", "generate": {"kind": "journal", "nx": 14, "ny": 14}}
        ],
        "algorithms": ["apg-pas"],
        "compare_sort": true
    }"#;
    let suite_path = tmp.path().join("suite.json");
    fs::write(&suite_path, suite).unwrap();
    let out = tmp.path().join("out.csv");
    let res = bqp(&["bench", suite_path.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(0));
    let text = fs::read_to_string(out).unwrap();
    let header: Vec<&str> = CSV_HEADER.split(',').collect();
    let sorted = header.iter().position(|c| *c == "chol_flops").unwrap();
    let unsorted = header.len() - 1;
    let mut strict = false;
    for line in text.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        assert_eq!(cols[3], "ok", "{line}");
        let (s, u): (u64, u64) = (cols[sorted].parse().unwrap(), cols[unsorted].parse().unwrap());
        assert!(s <= u, "{line}");
        strict |= s < u;
    }
    assert!(strict, "no row exercised the working-set updates");
}
