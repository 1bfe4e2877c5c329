//! End-to-end checks of the command-line contract: exit codes, fail-closed
//! parsing, crosscheck report output.

use std::path::PathBuf;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_lflab"))
}

fn tmpdir(tag: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("lflab-cli-{}-{tag}", std::process::id()));
    std::fs::create_dir_all(&d).unwrap();
    d
}

#[test]
fn usage_errors_exit_1() {
    let out = bin().args(["frobnicate"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));

    let out = bin().args(["run", "--nope", "x"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--nope"));

    // missing required keys
    let out = bin().args(["run", "--grid", "16x16"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));

    // unknown config key fails closed and names the key
    let d = tmpdir("badkey");
    let conf = d.join("c.conf");
    std::fs::write(&conf, "scenario = coupled\ngrid = 16x16\nt_end = 0.001\ncflx = 0.1\n")
        .unwrap();
    let out = bin()
        .args(["run", "--config", conf.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("cflx"));
    std::fs::remove_dir_all(&d).ok();
}

#[test]
fn help_exits_0() {
    let out = bin().args(["--help"]).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("crosscheck"));
}

#[test]
fn passing_run_exits_0_and_flags_override_config() {
    let d = tmpdir("run0");
    let conf = d.join("c.conf");
    let out_csv = d.join("r.csv");
    std::fs::write(
        &conf,
        format!(
            "scenario = fixed_point\ngrid = 16x16\nt_end = 0.01\ncfl = 0.3\nout = {}\n",
            out_csv.display()
        ),
    )
    .unwrap();
    // override cfl from the flag side; exit must be 0 with all checks green
    let out = bin()
        .args(["run", "--config", conf.to_str().unwrap(), "--cfl", "0.1"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&out_csv).unwrap();
    assert!(text.starts_with(lflab::cli::CSV_HEADER));
    // cfl 0.1 on a 16^2 grid: dt = 0.1 * (1/256) / 4
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert!(rows.len() >= 2);
    // fixed point: every numeric column except t is 0, every flag is 1
    for row in &rows {
        let cols: Vec<&str> = row.split(',').collect();
        for c in &cols[1..11] {
            assert_eq!(*c, "0", "row {row}");
        }
        for c in &cols[11..15] {
            assert_eq!(*c, "1", "row {row}");
        }
    }
    std::fs::remove_dir_all(&d).ok();
}

#[test]
fn degenerate_run_exits_3() {
    let d = tmpdir("degen");
    let out_csv = d.join("r.csv");
    // lambda_min above the conformal metric's smallest eigenvalue: the
    // first step reports degeneration
    let conf = d.join("c.conf");
    std::fs::write(
        &conf,
        format!(
            "scenario = conformal_bump\ngrid = 16x16\nt_end = 0.01\nlambda_min = 0.9\nout = {}\n",
            out_csv.display()
        ),
    )
    .unwrap();
    let out = bin()
        .args(["run", "--config", conf.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    std::fs::remove_dir_all(&d).ok();
}

#[test]
fn crosscheck_writes_report_and_exits_0() {
    let d = tmpdir("cc");
    let report = d.join("cc.json");
    let out = bin()
        .args([
            "crosscheck",
            "--scenario",
            "conformal_bump",
            "--out",
            report.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&report).unwrap();
    assert!(text.contains("\"passed\": true"), "{text}");
    assert!(text.contains("\"rungs\""));

    // deterministic across reruns
    let again = d.join("cc2.json");
    bin()
        .args([
            "crosscheck",
            "--scenario",
            "conformal_bump",
            "--out",
            again.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(
        std::fs::read(&report).unwrap(),
        std::fs::read(&again).unwrap()
    );
    std::fs::remove_dir_all(&d).ok();
}

#[test]
fn resume_rejects_mismatched_checkpoint() {
    let d = tmpdir("mismatch");
    let csv = d.join("r.csv");
    let ckpt = d.join("s.lfc");
    let conf = d.join("c.conf");
    std::fs::write(
        &conf,
        format!(
            "scenario = flat_bump_u\ngrid = 16x16\nt_end = 0.02\nrecord_every = 50\n\
             checkpoint_every = 50\ncheckpoint = {}\nout = {}\n",
            ckpt.display(),
            csv.display()
        ),
    )
    .unwrap();
    let out = bin()
        .args(["run", "--config", conf.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));

    // a config with a different grid must refuse the checkpoint
    let conf2 = d.join("c2.conf");
    std::fs::write(
        &conf2,
        format!(
            "scenario = flat_bump_u\ngrid = 32x32\nt_end = 0.02\nrecord_every = 50\n\
             out = {}\n",
            csv.display()
        ),
    )
    .unwrap();
    let out = bin()
        .args([
            "resume",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--config",
            conf2.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    std::fs::remove_dir_all(&d).ok();
}
