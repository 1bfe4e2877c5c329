//! Warped-product cross-check over a refinement ladder, reported as JSON.

use crate::error::Result;
use crate::geometry;
use crate::grid::{PeriodicGrid, StencilOrder};
use crate::scenarios::{self, Scenario};
use crate::warped::{self, CrossCheckReport, DEFAULT_FIBER_PERIOD, DEFAULT_FIBER_SIZE};
use std::path::Path;

/// Block errors below this are treated as structural zeros and excluded
/// from rate fitting.
const ERR_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct LadderRung {
    pub base_size: usize,
    pub dx_max: f64,
    pub report: CrossCheckReport,
}

#[derive(Debug, Clone)]
pub struct LadderReport {
    pub scenario: Scenario,
    pub order: StencilOrder,
    pub fiber_size: usize,
    pub fiber_period: f64,
    pub rungs: Vec<LadderRung>,
    /// least-squares slopes of log2(err) vs log2(1/dx); `None` when the
    /// block sits at the structural-zero floor everywhere
    pub rate_base: Option<f64>,
    pub rate_fiber: Option<f64>,
    pub rate_threshold: f64,
    pub mixed_max: f64,
    pub passed: bool,
}

fn fit_rate(points: &[(f64, f64)]) -> f64 {
    // slope of y against x
    let n = points.len() as f64;
    let sx: f64 = points.iter().map(|p| p.0).sum();
    let sy: f64 = points.iter().map(|p| p.1).sum();
    let sxx: f64 = points.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = points.iter().map(|p| p.0 * p.1).sum();
    (n * sxy - sx * sy) / (n * sxx - sx * sx)
}

fn block_rate(rungs: &[LadderRung], err_of: impl Fn(&CrossCheckReport) -> f64) -> Option<f64> {
    if rungs.iter().all(|r| err_of(&r.report) <= ERR_FLOOR) {
        return None;
    }
    let pts: Vec<(f64, f64)> = rungs
        .iter()
        .filter(|r| err_of(&r.report) > ERR_FLOOR)
        .map(|r| ((1.0 / r.dx_max).log2(), err_of(&r.report).log2()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    // error ~ dx^p means slope of log2(err) vs log2(1/dx) is -p
    Some(-fit_rate(&pts))
}

/// Default ladders: 32/64/128 base nodes in dimension 2; reduced in
/// dimension 3 where the product grid reaches dimension 4.
pub fn default_ladder(scenario: Scenario) -> Vec<usize> {
    match scenario.dim() {
        2 => vec![32, 64, 128],
        _ => vec![8, 16, 32],
    }
}

/// Instantiate `scenario` at each base resolution, assemble the warped
/// metric and cross-check the generic Ricci against the closed form.
pub fn cross_check_ladder(
    scenario: Scenario,
    ladder: &[usize],
    order: StencilOrder,
) -> Result<LadderReport> {
    let mut rungs = Vec::new();
    for &n in ladder {
        let grid = match scenario.dim() {
            2 => PeriodicGrid::new(&[n, n], &[1.0, 1.0])?,
            // the preset fields are z-independent; the circle stays at 8
            _ => PeriodicGrid::new(&[n, n, 8], &[1.0, 1.0, 1.0])?,
        };
        let state = scenarios::instantiate(scenario, &grid, 0.0)?;
        let cache =
            geometry::build_cache(&state.h, &state.u, order, geometry::DEFAULT_LAMBDA_MIN)?;
        let wm = warped::assemble_warped(&state.h, &state.u, DEFAULT_FIBER_SIZE, DEFAULT_FIBER_PERIOD)?;
        let report = warped::cross_check(&wm, &cache, order)?;
        let dx_max = grid
            .spacings()
            .iter()
            .fold(0.0f64, |m, &s| m.max(s));
        rungs.push(LadderRung {
            base_size: n,
            dx_max,
            report,
        });
    }
    let rate_threshold = order.as_u32() as f64 - 0.4;
    let rate_base = block_rate(&rungs, |r| r.base_block_max_err);
    let rate_fiber = block_rate(&rungs, |r| r.fiber_block_max_err);
    let mixed_max = rungs
        .iter()
        .fold(0.0f64, |m, r| m.max(r.report.mixed_block_max_err));
    let rate_ok = |rate: Option<f64>| rate.is_none_or(|p| p >= rate_threshold);
    let passed = rate_ok(rate_base) && rate_ok(rate_fiber) && mixed_max <= ERR_FLOOR;
    Ok(LadderReport {
        scenario,
        order,
        fiber_size: DEFAULT_FIBER_SIZE,
        fiber_period: DEFAULT_FIBER_PERIOD,
        rungs,
        rate_base,
        rate_fiber,
        rate_threshold,
        mixed_max,
        passed,
    })
}

fn json_f64(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    if (1e-4..1e9).contains(&a) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

fn json_opt(v: Option<f64>) -> String {
    match v {
        Some(x) => json_f64(x),
        None => "null".into(),
    }
}

impl LadderReport {
    /// Deterministic JSON (fixed key order, fixed float formatting).
    pub fn to_json(&self) -> String {
        let mut s = String::new();
        s.push_str("{\n");
        s.push_str(&format!("  \"scenario\": \"{}\",\n", self.scenario.name()));
        s.push_str(&format!("  \"stencil_order\": {},\n", self.order.as_u32()));
        s.push_str(&format!("  \"fiber_size\": {},\n", self.fiber_size));
        s.push_str(&format!(
            "  \"fiber_period\": {},\n",
            json_f64(self.fiber_period)
        ));
        s.push_str("  \"rungs\": [\n");
        for (i, r) in self.rungs.iter().enumerate() {
            s.push_str(&format!(
                "    {{\"base_size\": {}, \"dx_max\": {}, \"base_block_max_err\": {}, \"fiber_block_max_err\": {}, \"mixed_block_max_err\": {}, \"trace_max_err\": {}, \"fiber_variation_max\": {}}}{}\n",
                r.base_size,
                json_f64(r.dx_max),
                json_f64(r.report.base_block_max_err),
                json_f64(r.report.fiber_block_max_err),
                json_f64(r.report.mixed_block_max_err),
                json_f64(r.report.trace_max_err),
                json_f64(r.report.fiber_variation_max),
                if i + 1 == self.rungs.len() { "" } else { "," }
            ));
        }
        s.push_str("  ],\n");
        s.push_str(&format!("  \"rate_base\": {},\n", json_opt(self.rate_base)));
        s.push_str(&format!(
            "  \"rate_fiber\": {},\n",
            json_opt(self.rate_fiber)
        ));
        s.push_str(&format!(
            "  \"rate_threshold\": {},\n",
            json_f64(self.rate_threshold)
        ));
        s.push_str(&format!("  \"mixed_max\": {},\n", json_f64(self.mixed_max)));
        s.push_str(&format!("  \"passed\": {}\n", self.passed));
        s.push_str("}\n");
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }
}
