use std::path::PathBuf;
use std::process::{Command, Output};

use eshmem_core::bench::default_copy_sizes;
use eshmem_core::{bench_barrier, bench_copy, bench_dotprod, Machine, MachineConfig, Mode};

fn eshmem(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_eshmem")).args(args).output().expect("spawn eshmem")
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn config_path(name: &str) -> String {
    let p: PathBuf = [env!("CARGO_MANIFEST_DIR"), "..", "..", "configs", name].iter().collect();
    p.to_string_lossy().into_owned()
}

fn parse(csv_text: &str) -> (Vec<String>, Vec<Vec<String>>) {
    let mut rd = csv::Reader::from_reader(csv_text.as_bytes());
    let header = rd.headers().unwrap().iter().map(String::from).collect();
    let rows = rd.records().map(|r| r.unwrap().iter().map(String::from).collect()).collect();
    (header, rows)
}

fn col(header: &[String], name: &str) -> usize {
    header.iter().position(|h| h == name).unwrap_or_else(|| panic!("no column {name}"))
}

fn f(s: &str) -> f64 {
    s.parse().unwrap()
}

#[test]
fn barrier_csv() {
    let (h, rows) = parse(&stdout(&eshmem(&["bench", "barrier"])));
    assert_eq!(&h[..2], ["benchmark", "machine"]);
    assert_eq!(rows.len(), 3);
    let names: Vec<&str> = rows.iter().map(|r| r[col(&h, "name")].as_str()).collect();
    assert_eq!(names, ["barrier_all", "dissemination", "linear"]);
    let cycles: Vec<u64> = rows.iter().map(|r| r[col(&h, "cycles")].parse().unwrap()).collect();
    assert_eq!(cycles, [60, 360, 1200]);
    for r in &rows {
        assert_eq!(r[0], "barrier");
        assert_eq!(r[col(&h, "k")], "16");
        let c = f(&r[col(&h, "cycles")]);
        assert!((f(&r[col(&h, "seconds")]) - c / 6e8).abs() < 1e-15);
        assert!((f(&r[col(&h, "speedup_vs_linear")]) - 1200.0 / c).abs() < 1e-12);
    }
}

#[test]
fn copy_csv_with_sizes() {
    let (h, rows) = parse(&stdout(&eshmem(&["bench", "copy", "--sizes", "8,64,4096"])));
    assert_eq!(rows.len(), 3);
    let bytes: Vec<&str> = rows.iter().map(|r| r[col(&h, "bytes")].as_str()).collect();
    assert_eq!(bytes, ["8", "64", "4096"]);
    for r in &rows {
        let cpu = f(&r[col(&h, "cpu_cycles")]);
        let dma = f(&r[col(&h, "dma_cycles")]);
        assert!((f(&r[col(&h, "speedup")]) - dma / cpu).abs() < 1e-12);
        assert!((f(&r[col(&h, "cpu_seconds")]) - cpu / 6e8).abs() < 1e-18);
        let bw = f(&r[col(&h, "bytes")]) / (cpu / 6e8);
        assert!((f(&r[col(&h, "cpu_bandwidth")]) - bw).abs() / bw < 1e-12);
    }
}

#[test]
fn dotprod_csv_columns() {
    let (h, rows) = parse(&stdout(&eshmem(&["bench", "dotprod", "--n-per-pe", "1024"])));
    assert_eq!(rows.len(), 1);
    let r = &rows[0];
    assert_eq!(r[col(&h, "flops")], (2 * 1024 * 16).to_string());
    let gflops = f(&r[col(&h, "gflops")]);
    let secs = f(&r[col(&h, "cycles")]) / 6e8;
    assert!((gflops - f(&r[col(&h, "flops")]) / secs / 1e9).abs() < 1e-9);
    assert!((f(&r[col(&h, "data_rate")]) - 4.0 * gflops).abs() < 1e-9);
    assert!((f(&r[col(&h, "efficiency")]) - gflops / 19.2).abs() < 1e-9);
}

#[test]
fn csv_file_output_and_rerun() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for p in [&a, &b] {
        let o = eshmem(&["--seed", "5", "bench", "dotprod", "--n-per-pe", "256", "--csv", p.to_str().unwrap()]);
        assert!(o.status.success());
        assert!(o.stdout.is_empty());
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn run_programs() {
    let out = stdout(&eshmem(&["run", "dotprod", "--mode", "functional"]));
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 1);
    let v: f32 = lines[0].parse().unwrap();
    assert!(v > 7000.0 && v < 9500.0);

    let timed = stdout(&eshmem(&["run", "dotprod"]));
    assert_eq!(timed.lines().next(), Some(lines[0]));
    assert!(timed.lines().nth(1).unwrap().starts_with("cycles "));

    let ranks = stdout(&eshmem(&["--mode", "functional", "run", "ranks"]));
    let got: Vec<String> = ranks.lines().map(String::from).collect();
    let want: Vec<String> = (0..16).map(|pe| format!("{pe} {}", (pe + 15) % 16)).collect();
    assert_eq!(got, want);

    let locks = stdout(&eshmem(&["--mode", "functional", "run", "locks", "--iters", "10"]));
    assert!(locks.lines().all(|l| l.split(' ').nth(1) == Some("160")));

    let reduce = stdout(&eshmem(&["run", "reduce"]));
    assert!(reduce.lines().all(|l| l.split(' ').nth(1) == Some("120")));
    assert_eq!(reduce.lines().next().unwrap().split(' ').count(), 3);
}

#[test]
fn config_files() {
    let (h, rows) = parse(&stdout(&eshmem(&["--config", &config_path("disabled_core.cfg"), "bench", "barrier"])));
    assert!(rows.iter().all(|r| r[col(&h, "k")] == "15"));
    assert_eq!(rows[0][col(&h, "cycles")], "360");

    let out = stdout(&eshmem(&["--config", &config_path("workgroup_2x4.cfg"), "run", "ranks"]));
    assert_eq!(out.lines().count(), 8);

    let (_, rows) = parse(&stdout(&eshmem(&["--config", &config_path("default.cfg"), "bench", "barrier"])));
    assert_eq!(rows[0][3], "16");
}

#[test]
fn bad_invocations_fail() {
    let cases: &[&[&str]] = &[
        &["--bogus"],
        &["bench"],
        &["bench", "copy", "--sizes", "0"],
        &["bench", "copy", "--sizes", "x"],
        &["--mode", "sideways", "bench", "copy"],
        &["--mode", "functional", "bench", "barrier"],
        &["--mode", "functional", "bench", "dotprod"],
        &["bench", "dotprod", "--n-per-pe", "4096"],
        &["run", "nosuch"],
        &["--config", "/nonexistent.cfg", "run", "ranks"],
    ];
    for args in cases {
        let o = eshmem(args);
        assert!(!o.status.success(), "{args:?} succeeded");
        assert!(!o.stderr.is_empty(), "{args:?} printed no error");
    }

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.cfg");
    std::fs::write(&bad, "rows = 4\nflux = 3\n").unwrap();
    let o = eshmem(&["--config", bad.to_str().unwrap(), "bench", "barrier"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));
}

#[test]
fn library_reports_match_cli() {
    let mut m = Machine::new(MachineConfig { mode: Mode::Timed, ..Default::default() }).unwrap();
    assert_eq!(bench_barrier(&mut m).unwrap().to_csv(), stdout(&eshmem(&["bench", "barrier"])));
    assert_eq!(bench_copy(&m, &default_copy_sizes()).unwrap().to_csv(), stdout(&eshmem(&["bench", "copy"])));
    assert_eq!(
        bench_dotprod(&mut m, 2048).unwrap().to_csv(),
        stdout(&eshmem(&["bench", "dotprod"]))
    );
}

#[test]
fn props_subcommand() {
    let out = stdout(&eshmem(&["props", "--cases", "2"]));
    assert_eq!(out.lines().count(), 8);
    assert!(out.lines().all(|l| l.starts_with("ok ")));
}

#[test]
fn config_text_round_trip() {
    let cfg = MachineConfig::from_file(config_path("workgroup_2x4.cfg")).unwrap();
    assert_eq!(cfg.mode, Mode::Functional);
    assert_eq!(cfg.seed, 7);
    assert_eq!(MachineConfig::parse(&cfg.to_text()).unwrap(), cfg);
    let m = Machine::new(cfg).unwrap();
    assert_eq!(m.n_pes(), 8);
}
