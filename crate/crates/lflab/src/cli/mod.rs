//! Command-line front end: `run`, `crosscheck`, `resume`.
//!
//! Exit codes: 0 all enabled checks passed, 1 usage error, 2 check failure,
//! 3 metric degeneration.

pub mod checkpoint;
pub mod config;
pub mod csv;
pub mod report;

pub use checkpoint::{read_checkpoint, write_checkpoint};
pub use config::{KeyValues, RunManifest};
pub use csv::{emit_records, parse_records, CSV_HEADER};
pub use report::{cross_check_ladder, LadderReport};

use crate::diagnostics::{
    check_f_monotone, check_monotone_quantity, check_gradient_decay, check_type_iii,
    DiagnosticsRecord, DiagState, FMonotonicity,
};
use crate::error::{Error, Result};
use crate::flow::{self, Continuation, RunStatus};
use crate::grid::PeriodicGrid;
use crate::scenarios::{self, Scenario};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_CHECK_FAILED: i32 = 2;
pub const EXIT_DEGENERATED: i32 = 3;

const USAGE: &str = "\
usage:
  lflab run [--config <file>] [--scenario S --grid NxN[xK] --t0 T --t-end T
            --cfl C --order {2,4} --integrator {euler,rk2,rk4}
            --deturck {on,off} --mu {auto,<real>} --out <csv>
            --checkpoint-every <k> --checkpoint <path>]
  lflab crosscheck --scenario S --out <path>
  lflab resume --checkpoint <path> --config <file>

Config files are flat `key = value` lines (# comments); flags override
file values. Every run needs scenario, grid and t_end.";

/// Entry point used by the binary; returns the process exit code.
pub fn cli_main(args: &[String]) -> i32 {
    match dispatch(args) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Degenerate { .. } => EXIT_DEGENERATED,
                _ => EXIT_USAGE,
            }
        }
    }
}

fn dispatch(args: &[String]) -> Result<i32> {
    match args.first().map(String::as_str) {
        Some("run") => cmd_run(&args[1..]),
        Some("crosscheck") => cmd_crosscheck(&args[1..]),
        Some("resume") => cmd_resume(&args[1..]),
        Some("--help") | Some("-h") | Some("help") => {
            println!("{USAGE}");
            Ok(EXIT_OK)
        }
        Some(other) => Err(Error::Usage(format!(
            "unknown command `{other}`\n{USAGE}"
        ))),
        None => Err(Error::Usage(USAGE.into())),
    }
}

/// Flags are `--name value` pairs; returns them in order.
fn parse_flag_pairs(args: &[String], allowed: &[&str]) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    let mut it = args.iter();
    while let Some(flag) = it.next() {
        let name = flag
            .strip_prefix("--")
            .ok_or_else(|| Error::Usage(format!("expected a --flag, got `{flag}`")))?;
        if !allowed.contains(&name) {
            return Err(Error::Usage(format!("unknown flag `--{name}`")));
        }
        if out.iter().any(|(n, _)| n == name) {
            return Err(Error::Usage(format!("flag `--{name}` given twice")));
        }
        let value = it
            .next()
            .ok_or_else(|| Error::Usage(format!("flag `--{name}` needs a value")))?;
        out.push((name.to_string(), value.clone()));
    }
    Ok(out)
}

const RUN_FLAGS: &[&str] = &[
    "config",
    "scenario",
    "grid",
    "t0",
    "t-end",
    "cfl",
    "order",
    "integrator",
    "deturck",
    "mu",
    "out",
    "checkpoint-every",
    "checkpoint",
];

/// Map a flag name to its config key.
fn flag_key(name: &str) -> String {
    name.replace('-', "_")
}

fn manifest_from_args(args: &[String]) -> Result<RunManifest> {
    let flags = parse_flag_pairs(args, RUN_FLAGS)?;
    let mut kv = match flags.iter().find(|(n, _)| n == "config") {
        Some((_, path)) => KeyValues::parse(&std::fs::read_to_string(path)?)?,
        None => KeyValues::default(),
    };
    for (name, value) in &flags {
        if name == "config" {
            continue;
        }
        kv.set(&flag_key(name), value);
    }
    RunManifest::from_keys(kv)
}

fn build_initial(manifest: &RunManifest) -> Result<(PeriodicGrid, flow::FlowState)> {
    let grid = PeriodicGrid::new(&manifest.sizes, &manifest.periods)?;
    let state = scenarios::instantiate(manifest.scenario, &grid, manifest.flow.t0)?;
    Ok((grid, state))
}

/// Post-run verdict over the full record sequence.
pub(crate) struct CheckSummary {
    pub(crate) all_passed: bool,
    lines: Vec<String>,
}

pub(crate) fn summarize_checks(records: &[DiagnosticsRecord], manifest: &RunManifest) -> CheckSummary {
    let checks = &manifest.flow.checks;
    let mut lines = Vec::new();
    let mut all = true;

    let m0 = records.first().map_or(0.0, |r| r.sup_grad_u_sq);
    let t0 = records.first().map_or(0.0, |r| r.t);
    let decay = match check_gradient_decay(records, m0, t0, checks.decay_tol) {
        Ok(flags) => flags.iter().all(|&b| b),
        Err(_) => records.iter().all(|r| r.sup_grad_u_sq == 0.0),
    };
    all &= decay;
    lines.push(format!(
        "check gradient_decay: {}",
        if decay { "pass" } else { "FAIL" }
    ));

    let mono = check_monotone_quantity(records, checks.mono_tol);
    all &= mono;
    lines.push(format!(
        "check monotone_quantity: {}",
        if mono { "pass" } else { "FAIL" }
    ));

    match check_f_monotone(records, manifest.flow.mu, checks) {
        FMonotonicity::Passed => lines.push("check f_monotone: pass".into()),
        FMonotonicity::Inconclusive { required_mu } => lines.push(format!(
            "check f_monotone: inconclusive (needs mu >= {required_mu})"
        )),
        FMonotonicity::FailedAt(k) => {
            all = false;
            lines.push(format!("check f_monotone: FAIL at record {k}"));
        }
    }

    let hess = records.iter().all(|r| r.hess_ineq_ok);
    all &= hess;
    lines.push(format!(
        "check hessian_inequality: {}",
        if hess { "pass" } else { "FAIL" }
    ));

    if manifest.flow.t0 > 0.0 {
        match check_type_iii(records, manifest.flow.t0) {
            Ok(s) => lines.push(format!(
                "long_time_monitor: max={:.6e} slope={:.4} bounded={}",
                s.max_monitor, s.slope, s.bounded
            )),
            Err(e) => lines.push(format!("long_time_monitor: skipped ({e})")),
        }
    }

    CheckSummary {
        all_passed: all,
        lines,
    }
}

fn drive_run(
    manifest: &RunManifest,
    initial: flow::FlowState,
    continuation: Option<Continuation>,
    writer: &mut csv::CsvWriter,
    prior_records: Vec<DiagnosticsRecord>,
) -> Result<i32> {
    let ckpt_every = manifest.checkpoint_every;
    let ckpt_path = manifest.checkpoint.clone();
    let mut write_err = None;
    let out = flow::run_observed(initial, &manifest.flow, continuation, |step, state, rec| {
        if write_err.is_some() {
            return;
        }
        if let Some(r) = rec {
            if let Err(e) = writer.write_record(r) {
                write_err = Some(e);
                return;
            }
        }
        if ckpt_every > 0 && step > 0 && step % ckpt_every == 0 {
            if let Some(path) = &ckpt_path {
                if let Err(e) = write_checkpoint(state, path) {
                    write_err = Some(e);
                }
            }
        }
    })?;
    if let Some(e) = write_err {
        return Err(e);
    }

    let mut records = prior_records;
    records.extend(out.records.iter().cloned());

    println!(
        "run: scenario={} grid={} t=[{}, {}] steps={} records={} status={}",
        manifest.scenario.name(),
        manifest
            .sizes
            .iter()
            .map(|s| s.to_string())
            .collect::<Vec<_>>()
            .join("x"),
        records.first().map_or(manifest.flow.t0, |r| r.t),
        out.final_state.t,
        out.steps,
        records.len(),
        match out.status {
            RunStatus::Completed => "completed".to_string(),
            RunStatus::Degenerated { node, eigenvalue, t } =>
                format!("degenerated(node={node}, eigenvalue={eigenvalue:e}, t={t})"),
        }
    );
    let summary = summarize_checks(&records, manifest);
    for line in &summary.lines {
        println!("{line}");
    }

    match out.status {
        RunStatus::Degenerated { node, eigenvalue, t } => {
            eprintln!(
                "degeneration: metric lost positive definiteness at node {node} \
                 (eigenvalue {eigenvalue:e}) at t = {t}; partial records written"
            );
            Ok(EXIT_DEGENERATED)
        }
        RunStatus::Completed if summary.all_passed => Ok(EXIT_OK),
        RunStatus::Completed => Ok(EXIT_CHECK_FAILED),
    }
}

fn cmd_run(args: &[String]) -> Result<i32> {
    let manifest = manifest_from_args(args)?;
    let (_, initial) = build_initial(&manifest)?;
    let mut writer = csv::CsvWriter::create(&manifest.out)?;
    drive_run(&manifest, initial, None, &mut writer, Vec::new())
}

fn cmd_resume(args: &[String]) -> Result<i32> {
    let flags = parse_flag_pairs(args, &["checkpoint", "config"])?;
    let ckpt_path = flags
        .iter()
        .find(|(n, _)| n == "checkpoint")
        .map(|(_, v)| v.clone())
        .ok_or_else(|| Error::Usage("resume needs --checkpoint <path>".into()))?;
    let config_path = flags
        .iter()
        .find(|(n, _)| n == "config")
        .map(|(_, v)| v.clone())
        .ok_or_else(|| Error::Usage("resume needs --config <file>".into()))?;
    let kv = KeyValues::parse(&std::fs::read_to_string(&config_path)?)?;
    let manifest = RunManifest::from_keys(kv)?;

    let state = read_checkpoint(std::path::Path::new(&ckpt_path))?;
    if state.h.grid().sizes() != manifest.sizes.as_slice()
        || state.h.grid().periods() != manifest.periods.as_slice()
    {
        return Err(Error::Invalid(format!(
            "checkpoint grid {:?} does not match config grid {:?}",
            state.h.grid().sizes(),
            manifest.sizes
        )));
    }

    let prior = parse_records(&manifest.out)?;
    if prior.is_empty() {
        return Err(Error::CsvFormat(format!(
            "{} has no records to resume from",
            manifest.out.display()
        )));
    }
    let last_t = prior.last().unwrap().t;
    if last_t != state.t {
        return Err(Error::Invalid(format!(
            "checkpoint time {} does not match last record time {last_t}",
            state.t
        )));
    }
    if state.t >= manifest.flow.t_end {
        // nothing left to integrate; evaluate checks over what exists
        let summary = summarize_checks(&prior, &manifest);
        for line in &summary.lines {
            println!("{line}");
        }
        return Ok(if summary.all_passed {
            EXIT_OK
        } else {
            EXIT_CHECK_FAILED
        });
    }

    let diag = DiagState::rebuild(&prior, manifest.flow.mu, manifest.flow.checks.c_est);
    let start_step = (prior.len() - 1) * manifest.flow.record_every;
    let mut writer = csv::CsvWriter::append(&manifest.out)?;
    drive_run(
        &manifest,
        state,
        Some(Continuation { start_step, diag }),
        &mut writer,
        prior,
    )
}

fn cmd_crosscheck(args: &[String]) -> Result<i32> {
    let flags = parse_flag_pairs(args, &["scenario", "out"])?;
    let scenario = flags
        .iter()
        .find(|(n, _)| n == "scenario")
        .map(|(_, v)| Scenario::parse(v))
        .transpose()?
        .ok_or_else(|| Error::Usage("crosscheck needs --scenario <name>".into()))?;
    let out = flags
        .iter()
        .find(|(n, _)| n == "out")
        .map(|(_, v)| std::path::PathBuf::from(v))
        .ok_or_else(|| Error::Usage("crosscheck needs --out <path>".into()))?;

    let ladder = report::default_ladder(scenario);
    let rep = cross_check_ladder(scenario, &ladder, crate::grid::StencilOrder::Two)?;
    rep.write(&out)?;
    println!(
        "crosscheck: scenario={} rate_base={} rate_fiber={} mixed_max={:e} passed={}",
        scenario.name(),
        rep.rate_base.map_or("null".into(), |r| format!("{r:.3}")),
        rep.rate_fiber.map_or("null".into(), |r| format!("{r:.3}")),
        rep.mixed_max,
        rep.passed
    );
    Ok(if rep.passed { EXIT_OK } else { EXIT_CHECK_FAILED })
}
