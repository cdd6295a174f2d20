use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = "\
# short desk run
grid.L = 10
grid.h = 0.1
grid.dt = 0.04
grid.t_max = 7
diag.orders = 1
diag.s_list = 3
diag.t_list = 5
diag.energy_every = 4
diag.fit_lo = 4
diag.fit_hi = 7
diag.band_lo = 3
diag.band_hi = 7
";

fn hyperwave(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hyperwave"))
        .current_dir(dir)
        .env("HYPERWAVE_THREADS", "1")
        .args(args)
        .output()
        .unwrap()
}

#[test]
fn defaults_parse_back() {
    let dir = tempfile::tempdir().unwrap();
    let out = hyperwave(dir.path(), &["defaults"]);
    assert!(out.status.success());
    fs::write(dir.path().join("d.cfg"), &out.stdout).unwrap();
    let again = hyperwave(dir.path(), &["--config", "d.cfg", "defaults"]);
    assert_eq!(out.stdout, again.stdout);
}

#[test]
fn run_writes_csv_and_fit_reads_it() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("s.cfg"), SMALL).unwrap();
    let run = hyperwave(dir.path(), &["--config", "s.cfg", "--out", "o", "run"]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let csv = dir.path().join("o/default.csv");
    let text = fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("kind,param,label,value,extra"));
    assert!(dir.path().join("o/default.config").exists());

    let fit = hyperwave(dir.path(), &["--config", "s.cfg", "--out", "o", "fit", "o/default.csv"]);
    assert!(fit.status.success());
    assert!(String::from_utf8_lossy(&fit.stdout).contains("exponent"));

    let plot = hyperwave(dir.path(), &["--out", "o", "plot", "o/default.csv"]);
    assert!(plot.status.success());
    assert!(dir.path().join("o/plot/manifest.tsv").exists());
}

#[test]
fn config_errors_name_the_line_and_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.cfg"), "grid.h = 0.1\ngrid.bogus = 3\n").unwrap();
    let out = hyperwave(dir.path(), &["--config", "bad.cfg", "run"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
}

#[test]
fn bad_thread_cap_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_hyperwave"))
        .current_dir(dir.path())
        .env("HYPERWAVE_THREADS", "zero")
        .arg("run")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}
