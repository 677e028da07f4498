use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const LINEAR: &str = r#"
[model]
kind = "linear"
beta0 = 1.0
beta = [1.0, 1.0, 1.0]

[distribution]
kind = "gaussian"
names = ["a", "b", "c"]
mean = [0.0, 0.0, 0.0]
std = [1.0, 1.0, 2.0]
correlation = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.5], [0.0, 0.5, 1.0]]

[estimator]
method = "exact"
no = 200
nv = 2000
seed = 7
"#;

fn shapvar(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_shapvar")).current_dir(dir).args(args).output().expect("binary runs")
}

fn setup(config: &str) -> (TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.toml");
    fs::write(&path, config).unwrap();
    (dir, path)
}

fn ok(out: &Output) {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r.records().map(|rec| rec.unwrap().iter().map(String::from).collect()).collect();
    (header, rows)
}

fn column(header: &[String], name: &str) -> usize {
    header.iter().position(|h| h == name).unwrap_or_else(|| panic!("no column {name}"))
}

#[test]
fn analyze_writes_indices_that_sum_to_one() {
    let (dir, cfg) = setup(LINEAR);
    let out = shapvar(dir.path(), &["analyze", "--config", cfg.to_str().unwrap(), "--out", "res/lin"]);
    ok(&out);
    let csv = dir.path().join("res/lin_indices.csv");
    let (header, rows) = read_csv(&csv);
    assert_eq!(
        header,
        [
            "input",
            "name",
            "shapley",
            "shapley_ci",
            "first_order_full",
            "first_order_full_ci",
            "total_independent",
            "total_independent_ci"
        ]
    );
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[1][1], "b");
    let sh = column(&header, "shapley");
    let sum: f64 = rows.iter().map(|r| r[sh].parse::<f64>().unwrap()).sum();
    assert!((sum - 1.0).abs() < 1e-9, "sum {sum}");

    let bytes = fs::read(&csv).unwrap();
    assert!(bytes.ends_with(b"\n") && !bytes.contains(&b'\r'));
    assert!(dir.path().join("res/lin_manifest.toml").exists());
}

#[test]
fn manifest_reproduces_the_run_byte_for_byte() {
    let (dir, cfg) = setup(LINEAR);
    ok(&shapvar(dir.path(), &["analyze", "--config", cfg.to_str().unwrap(), "--out", "first", "--seed", "11"]));
    let manifest = fs::read_to_string(dir.path().join("first_manifest.toml")).unwrap();
    assert!(manifest.contains("[run]") && manifest.contains("seed = 11"), "{manifest}");
    ok(&shapvar(dir.path(), &["analyze", "--config", "first_manifest.toml", "--out", "second", "--threads", "2"]));
    assert_eq!(fs::read(dir.path().join("first_indices.csv")).unwrap(), fs::read(dir.path().join("second_indices.csv")).unwrap());
}

#[test]
fn bad_configuration_exits_with_code_two() {
    let (dir, cfg) = setup(&LINEAR.replace("seed = 7", "seed = 7\nsede = 3"));
    let out = shapvar(dir.path(), &["analyze", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("sede"));

    let (dir, cfg) = setup(&LINEAR.replace("no = 200", "no = 0"));
    let out = shapvar(dir.path(), &["analyze", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("estimator"));

    let out = shapvar(dir.path(), &["analyze"]);
    assert_eq!(out.status.code(), Some(2));
    let out = shapvar(dir.path(), &["analyze", "--config", "missing.toml"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn crashing_external_model_exits_with_code_three() {
    let config = LINEAR.replace(
        "kind = \"linear\"\nbeta0 = 1.0\nbeta = [1.0, 1.0, 1.0]",
        "kind = \"external\"\ncommand = \"cat > /dev/null; echo 'mesh failure' >&2; exit 4\"",
    );
    let (dir, cfg) = setup(&config);
    let out = shapvar(dir.path(), &["analyze", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("mesh failure"));
}

#[test]
fn rho_sweep_has_one_row_per_input_and_value() {
    let values: Vec<String> = (0..21).map(|k| format!("{:.2}", -0.9 + 0.09 * k as f64)).collect();
    let config = format!(
        "{LINEAR}\n[sweep]\nparameter = \"rho\"\nvalues = [{}]\nrho_pair = [2, 3]\n",
        values.join(", ")
    )
    .replace("no = 200", "no = 20")
    .replace("nv = 2000", "nv = 500");
    let (dir, cfg) = setup(&config);
    ok(&shapvar(dir.path(), &["converge", "--config", cfg.to_str().unwrap(), "--out", "sw"]));
    let (header, rows) = read_csv(&dir.path().join("sw_sweep.csv"));
    assert_eq!(rows.len(), 63);
    let input = column(&header, "input");
    for i in 1..=3 {
        assert_eq!(rows.iter().filter(|r| r[input] == i.to_string()).count(), 21);
    }
    let exact = column(&header, "exact_shapley");
    assert!(rows.iter().all(|r| r[exact].parse::<f64>().is_ok()));

    ok(&shapvar(dir.path(), &["analytic", "--config", cfg.to_str().unwrap(), "--out", "an"]));
    let (_, rows) = read_csv(&dir.path().join("an_analytic.csv"));
    assert_eq!(rows.len(), 63);
}

#[test]
fn analytic_matches_closed_form_without_sweep() {
    let (dir, cfg) = setup(LINEAR);
    ok(&shapvar(dir.path(), &["analytic", "--config", cfg.to_str().unwrap(), "--out", "an"]));
    let (header, rows) = read_csv(&dir.path().join("an_analytic.csv"));
    let sh = column(&header, "shapley");
    // Input a is independent of the rest: Sh = 1 / Var(Y) with Var(Y) = 1 + 1 + 4 + 2.
    assert!((rows[0][sh].parse::<f64>().unwrap() - 1.0 / 8.0).abs() < 1e-12);

    let (dir, cfg) = setup(&LINEAR.replace("kind = \"linear\"\nbeta0 = 1.0\nbeta = [1.0, 1.0, 1.0]", "kind = \"ishigami\""));
    let out = shapvar(dir.path(), &["analytic", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn fix_check_requires_inputs_and_sees_no_change_for_unused_ones() {
    let projection = LINEAR.replace("kind = \"linear\"\nbeta0 = 1.0\nbeta = [1.0, 1.0, 1.0]", "kind = \"projection\"\nindex = 1");
    let (dir, cfg) = setup(&format!("{projection}\n[fix]\ninputs = []\nsamples = 1000\n"));
    let out = shapvar(dir.path(), &["fix-check", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));

    let (dir, cfg) = setup(&format!("{projection}\n[fix]\ninputs = [2, 3]\nsamples = 20000\n"));
    ok(&shapvar(dir.path(), &["fix-check", "--config", cfg.to_str().unwrap(), "--out", "fx"]));
    let (header, rows) = read_csv(&dir.path().join("fx_fixcheck.csv"));
    assert_eq!(rows[0][column(&header, "fixed_inputs")], "b;c");
    let decrease: f64 = rows[0][column(&header, "relative_decrease")].parse().unwrap();
    assert!(decrease.abs() < 0.05, "decrease {decrease}");
}

#[test]
fn surrogate_fit_saves_a_loadable_model() {
    let config = format!("{LINEAR}\n[surrogate]\ndesign_size = 40\nrestarts = 2\ntest_size = 200\n");
    let (dir, cfg) = setup(&config);
    let out = shapvar(dir.path(), &["fit-surrogate", "--config", cfg.to_str().unwrap(), "--out", "sg"]);
    ok(&out);
    assert!(String::from_utf8_lossy(&out.stdout).contains("Q2"));
    let saved = dir.path().join("sg_surrogate.txt");
    assert!(saved.exists());

    let reuse = LINEAR.replace(
        "kind = \"linear\"\nbeta0 = 1.0\nbeta = [1.0, 1.0, 1.0]",
        &format!("kind = \"surrogate\"\npath = {:?}", saved.to_str().unwrap()),
    );
    let (dir2, cfg2) = setup(&reuse);
    ok(&shapvar(dir2.path(), &["analyze", "--config", cfg2.to_str().unwrap(), "--out", "re"]));
    let (header, rows) = read_csv(&dir2.path().join("re_indices.csv"));
    let sh = column(&header, "shapley");
    // A linear function is reproduced by the linear trend, so the effects match the closed form.
    assert!((rows[0][sh].parse::<f64>().unwrap() - 0.125).abs() < 0.05);
}

#[test]
fn zero_threads_is_a_configuration_error() {
    let (dir, cfg) = setup(LINEAR);
    let out = shapvar(dir.path(), &["analyze", "--config", cfg.to_str().unwrap(), "--threads", "0"]);
    assert_eq!(out.status.code(), Some(2));
}

fn sweep_rows(dir: &Path, config: &str, prefix: &str) -> (Vec<String>, Vec<Vec<String>>) {
    let path = dir.join(format!("{prefix}.toml"));
    fs::write(&path, config).unwrap();
    ok(&shapvar(dir, &["converge", "--config", path.to_str().unwrap(), "--out", prefix]));
    read_csv(&dir.join(format!("{prefix}_sweep.csv")))
}

fn as_f64(row: &[String], col: usize) -> f64 {
    row[col].parse().unwrap()
}

#[test]
fn no_sweep_converges_to_the_exact_values() {
    let dir = tempfile::tempdir().unwrap();
    let config = format!(
        "{}\n[sweep]\nparameter = \"no\"\nvalues = [10, 100, 1000, 5000]\n",
        LINEAR.replace("0.5], [0.0, 0.5", "0.9], [0.0, 0.9").replace("nv = 2000", "nv = 100000")
    );
    let (header, rows) = sweep_rows(dir.path(), &config, "no");
    assert_eq!(rows.len(), 12);
    let (value, sh, exact) = (column(&header, "value"), column(&header, "shapley"), column(&header, "exact_shapley"));
    let last: Vec<&Vec<String>> = rows.iter().filter(|r| as_f64(r, value) == 5000.0).collect();
    assert_eq!(last.len(), 3);
    for r in last {
        let err = (as_f64(r, sh) - as_f64(r, exact)).abs();
        assert!(err <= 0.02, "error {err}");
    }
}

#[test]
fn m_sweep_half_widths_shrink_like_inverse_root_m() {
    let dir = tempfile::tempdir().unwrap();
    let config = format!(
        "{}\n[sweep]\nparameter = \"m\"\nvalues = [100, 1000, 10000, 30000]\n",
        LINEAR.replace("method = \"exact\"", "method = \"random\"").replace("no = 200", "no = 1\nm = 100").replace("nv = 2000", "nv = 10000")
    );
    let (header, rows) = sweep_rows(dir.path(), &config, "m");
    let (value, input, ci) = (column(&header, "value"), column(&header, "input"), column(&header, "shapley_ci"));
    for i in ["1", "2", "3"] {
        let by_m: Vec<(f64, f64)> = rows.iter().filter(|r| r[input] == i).map(|r| (as_f64(r, value), as_f64(r, ci))).collect();
        let (m0, c0) = by_m[0];
        for &(m, c) in &by_m[1..] {
            let ratio = c / (c0 * (m0 / m).sqrt());
            assert!((0.5..=2.0).contains(&ratio), "input {i}, m {m}: ratio {ratio}");
        }
    }
}

#[test]
fn single_point_sweep_matches_analyze() {
    let dir = tempfile::tempdir().unwrap();
    let (header, rows) = sweep_rows(dir.path(), &format!("{LINEAR}\n[sweep]\nparameter = \"no\"\nvalues = [200]\n"), "one");
    let path = dir.path().join("plain.toml");
    fs::write(&path, LINEAR).unwrap();
    ok(&shapvar(dir.path(), &["analyze", "--config", path.to_str().unwrap(), "--out", "plain"]));
    let (plain_header, plain) = read_csv(&dir.path().join("plain_indices.csv"));
    for (r, p) in rows.iter().zip(&plain) {
        for (k, name) in plain_header.iter().enumerate() {
            assert_eq!(r[column(&header, name)], p[k], "column {name}");
        }
        assert!(r[column(&header, "exact_shapley")].parse::<f64>().is_ok());
    }
}
