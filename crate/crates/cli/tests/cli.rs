use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use propchaos::stats::ols;
use propchaos_cli::plotdata::{parse_report, parse_table};

fn propchaos(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_propchaos")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("exp.cfg");
    fs::write(&p, text).unwrap();
    p.display().to_string()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}

const KURAMOTO: &str = "# small Kuramoto run\ncommand = simulate\nmodel = kuramoto\nn = 16\nreps = 2\nt = 0.2\ndt = 0.01\nseed = 7\n";

#[test]
fn minimal_simulate_writes_trajectories_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), KURAMOTO);
    let out = dir.path().join("out");
    let o = propchaos(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("trajectories.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("replica,t,particle,x0"));
    // 2 replicas × 3 recorded times × 16 particles
    assert_eq!(lines.count(), 2 * 3 * 16);
    let manifest = fs::read_to_string(out.join("manifest.cfg")).unwrap();
    assert!(manifest.starts_with("# propchaos-cli "));
    assert!(manifest.contains("seed = 7\n"));
    assert!(manifest.contains("# outputs: trajectories.csv\n"));
}

#[test]
fn reruns_are_byte_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), KURAMOTO);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(propchaos(&["run", "--config", &cfg, "--threads", "1", "--out", a.to_str().unwrap()]).status.success());
    assert!(propchaos(&["run", "--config", &cfg, "--threads", "3", "--out", b.to_str().unwrap()]).status.success());
    assert_eq!(files(&a), files(&b));
}

#[test]
fn manifest_alone_reproduces_every_output() {
    for text in [
        KURAMOTO.to_string(),
        "command = simulate\nmodel = kac\nn = 10\nreps = 3\nt = 0.5\n".to_string(),
        "command = simulate\nmodel = choose-leader\nn = 12\nreps = 2\n".to_string(),
        "command = oracle\nmodel = kac-like\nn = 3\n".to_string(),
        "command = graph-stats\nns = 50,100\nreps = 50\n".to_string(),
        "command = couple\nns = 8,16\nreps = 4\nt = 0.1\n".to_string(),
    ] {
        let dir = tempfile::tempdir().unwrap();
        let cfg = write_config(dir.path(), &text);
        let a = dir.path().join("a");
        let b = dir.path().join("b");
        let o = propchaos(&["run", "--config", &cfg, "--out", a.to_str().unwrap()]);
        assert!(o.status.success(), "{text}: {}", stderr(&o));
        let manifest = a.join("manifest.cfg");
        let o = propchaos(&["run", "--config", manifest.to_str().unwrap(), "--out", b.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
        assert_eq!(files(&a), files(&b), "{text}");
    }
}

#[test]
fn sweep_gives_two_rows_per_estimator() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "command = sweep\nmodel = kuramoto\nmetric = coupling\nns = 64, 128\nreps = 4\nt = 0.2\nreference_size = 256\n",
    );
    let out = dir.path().join("out");
    let o = propchaos(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report = fs::read_to_string(out.join("report.csv")).unwrap();
    let rows: Vec<&str> = report.lines().skip(1).collect();
    for est in ["eps_pathwise", "eps_pointwise", "beta"] {
        let count = rows.iter().filter(|r| r.split(',').nth(6) == Some(est)).count();
        assert_eq!(count, 2, "{est}");
    }
    assert_eq!(rows.len(), 6);
}

#[test]
fn unknown_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "command = simulate\nwidth = 3\n");
    let o = propchaos(&["run", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert_eq!(err.lines().count(), 1);
    assert!(err.starts_with("error code=2 kind=unknown-key"), "{err}");
}

#[test]
fn malformed_values_and_lines_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    for text in ["command = simulate\nn = many\n", "command = simulate\njust words\n", "command = fly\n", "n = 3\n"] {
        let cfg = write_config(dir.path(), text);
        let o = propchaos(&["run", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(2), "{text}");
    }
}

#[test]
fn precondition_failure_exits_3_with_module_text() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "command = simulate\nmodel = kuramoto\nsigma = -1\n");
    let o = propchaos(&["run", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("kind=precondition"));

    let cfg = write_config(dir.path(), "command = sweep\nmetric = entropy\n");
    let o = propchaos(&["run", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("unknown metric tag"), "{}", stderr(&o));
}

#[test]
fn io_failures_exit_4() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.cfg");
    let o = propchaos(&["run", "--config", missing.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4));
    assert!(stderr(&o).starts_with("error code=4 kind=io"));

    let blocker = dir.path().join("file");
    fs::write(&blocker, "").unwrap();
    let cfg = write_config(dir.path(), "command = oracle\n");
    let o = propchaos(&["run", "--config", &cfg, "--out", blocker.join("sub").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn set_flags_override_file_values() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), KURAMOTO);
    let out = dir.path().join("out");
    let o = propchaos(&["run", "--config", &cfg, "--set", "seed=11", "--set", "n=5", "--set", "n = 4", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let manifest = fs::read_to_string(out.join("manifest.cfg")).unwrap();
    assert!(manifest.contains("seed = 11\n"));
    assert!(manifest.contains("n = 4\n"));
    let csv = fs::read_to_string(out.join("trajectories.csv")).unwrap();
    assert_eq!(csv.lines().count() - 1, 2 * 3 * 4);
}

#[test]
fn oracle_marginal_is_a_distribution() {
    let dir = tempfile::tempdir().unwrap();
    let o = propchaos(&["run", "--set", "command=oracle", "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let law = fs::read_to_string(dir.path().join("distribution.csv")).unwrap();
    assert_eq!(law.lines().count(), 1 + 27);
    let marginal = fs::read_to_string(dir.path().join("marginal.csv")).unwrap();
    let total: f64 = marginal.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse::<f64>().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-12);
}

const REPORT: &str = "model,N,T,dt,reps,metric,estimator,value,ci_lo,ci_hi,slope,slope_ci_lo,slope_ci_hi,seed\n\
kuramoto,64,1,0.01,8,coupling,eps_pathwise,0.02,0.01,0.03,-1,-1.2,-0.8,0\n\
kuramoto,128,1,0.01,8,coupling,eps_pathwise,0.011,0.005,0.02,-1,-1.2,-0.8,0\n";

#[test]
fn two_row_report_gives_two_data_lines_and_one_fit() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("report.csv");
    fs::write(&report, REPORT).unwrap();
    let out = dir.path().join("plots");
    let o = propchaos(&["plotdata", report.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let data_lines = |t: &str| t.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty()).count();
    assert_eq!(data_lines(&fs::read_to_string(out.join("plot.dat")).unwrap()), 2);
    assert_eq!(data_lines(&fs::read_to_string(out.join("fit.dat")).unwrap()), 1);
    assert!(fs::read_to_string(out.join("plotdata.manifest")).unwrap().contains("dropped = 0\n"));
}

#[test]
fn zero_estimates_are_dropped_and_counted() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("report.csv");
    let text = format!("{REPORT}kuramoto,256,1,0.01,8,coupling,eps_pathwise,0,0,0,-1,-1.2,-0.8,0\n");
    fs::write(&report, text).unwrap();
    let o = propchaos(&["plotdata", report.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success());
    assert!(stderr(&o).contains("dropped=1"));
    assert!(fs::read_to_string(dir.path().join("plotdata.manifest")).unwrap().contains("dropped = 1\n"));
    let table = fs::read_to_string(dir.path().join("plot.dat")).unwrap();
    assert_eq!(table.lines().filter(|l| !l.starts_with('#') && !l.is_empty()).count(), 2);
}

#[test]
fn malformed_report_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("report.csv");
    for text in ["N,value\n64,0.1\n", "N,estimator,value\n64,a,abc\n", "N,estimator,value\n64,a\n"] {
        fs::write(&report, text).unwrap();
        let o = propchaos(&["plotdata", report.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(2), "{text}");
        assert!(stderr(&o).contains("kind=malformed-report"));
    }
}

#[test]
fn emitted_table_recovers_the_slope() {
    let mut text = String::from("N,estimator,value\n");
    for (i, n) in [32.0f64, 64.0, 128.0, 256.0, 512.0].iter().enumerate() {
        let wobble = 1.0 + 0.05 * (i as f64).sin();
        text.push_str(&format!("{n},a,{}\n", 3.0 * n.powf(-0.8) * wobble));
        text.push_str(&format!("{n},b,{}\n", 0.5 * n.powf(-0.5) / wobble));
    }
    let data = parse_report(text.as_bytes()).unwrap();
    let parsed = parse_table(&data.table()).unwrap();
    assert_eq!(parsed.len(), 2);
    for ((name, x, y), s) in parsed.iter().zip(&data.series) {
        assert_eq!(name, &s.estimator);
        let (slope, intercept) = ols(x, y).unwrap();
        assert!((slope - s.fit.0).abs() < 1e-12);
        assert!((intercept - s.fit.1).abs() < 1e-12);
    }
    let coeffs: Vec<f64> = data.coefficients().lines().nth(1).unwrap().split_whitespace().skip(1).map(|c| c.parse().unwrap()).collect();
    assert!((coeffs[0] - data.series[0].fit.0).abs() < 1e-12);
}
