//! Time integration of the coupled metric/scalar system
//! `dh/dt = -2 Ric(h) + 2 grad u (x) grad u`, `du/dt = Lap_h u`,
//! by explicit method of lines with CFL step control.
//!
//! The system is only weakly parabolic in the bare form; by default the
//! right side is gauge-corrected with the DeTurck vector against the flat
//! reference metric (plus the matching advection of `u`), so the computed
//! solution is the pullback of the plain flow by a family of
//! diffeomorphisms. All sup-norm scalar monitors are invariant under that
//! pullback.

use crate::diagnostics::{self, BoundCheckConfig, DiagState, DiagnosticsRecord};
use crate::error::{Error, Result};
use crate::exec;
use crate::geometry::{self, GeometryCache};
use crate::grid::{
    diff_axis_into, ChristoffelField, ScalarField, StencilOrder, SymTensorField, VectorField,
};

/// Complete dynamical state of the flow.
#[derive(Debug, Clone)]
pub struct FlowState {
    pub t: f64,
    pub h: SymTensorField,
    pub u: ScalarField,
}

impl FlowState {
    pub fn new(t: f64, h: SymTensorField, u: ScalarField) -> Result<Self> {
        if h.grid() != u.grid() {
            return Err(Error::GridMismatch("h and u on different grids".into()));
        }
        if !t.is_finite() {
            return Err(Error::Invalid(format!("non-finite start time {t}")));
        }
        Ok(FlowState { t, h, u })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Integrator {
    Euler,
    Rk2,
    Rk4,
}

impl Integrator {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "euler" => Ok(Integrator::Euler),
            "rk2" => Ok(Integrator::Rk2),
            "rk4" => Ok(Integrator::Rk4),
            _ => Err(Error::Invalid(format!(
                "unknown integrator `{name}` (expected euler, rk2 or rk4)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Integrator::Euler => "euler",
            Integrator::Rk2 => "rk2",
            Integrator::Rk4 => "rk4",
        }
    }
}

/// Monitor weight `mu` in `F = |D2u|^2 + mu |grad u|^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MuSetting {
    /// resolved along the run as twice the running max of
    /// `C_est (sup|Rm| + sup|grad u|^2)`
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone)]
pub struct FlowConfig {
    pub t0: f64,
    pub t_end: f64,
    /// CFL fraction in (0, 1]
    pub cfl: f64,
    pub integrator: Integrator,
    pub order: StencilOrder,
    /// DeTurck gauge on the metric equation plus advection on u
    pub deturck: bool,
    pub mu: MuSetting,
    /// SPD floor; a node below it aborts the run with a degeneration report
    pub lambda_min: f64,
    /// steps between diagnostic records
    pub record_every: usize,
    pub max_steps: usize,
    /// test/diagnostic knobs, not part of the config-file surface:
    /// freeze the metric (pure heat flow of u)
    pub freeze_metric: bool,
    /// drop the `2 grad u (x) grad u` coupling from the metric equation
    pub u_coupling: bool,
    /// override the CFL step with a fixed dt (temporal-order studies)
    pub fixed_dt: Option<f64>,
    /// tolerances for the bound checkers baked into records
    pub checks: BoundCheckConfig,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            t0: 0.0,
            t_end: 1.0,
            cfl: 0.2,
            integrator: Integrator::Rk4,
            order: StencilOrder::Two,
            deturck: true,
            mu: MuSetting::Auto,
            lambda_min: geometry::DEFAULT_LAMBDA_MIN,
            record_every: 100,
            max_steps: 50_000_000,
            freeze_metric: false,
            u_coupling: true,
            fixed_dt: None,
            checks: BoundCheckConfig::default(),
        }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_end > self.t0) && self.t_end != self.t0 {
            return Err(Error::Invalid(format!(
                "t_end {} must be >= t0 {}",
                self.t_end, self.t0
            )));
        }
        if !(self.cfl > 0.0 && self.cfl <= 1.0) {
            return Err(Error::Invalid(format!("cfl {} outside (0, 1]", self.cfl)));
        }
        if self.record_every == 0 {
            return Err(Error::Invalid("record_every must be positive".into()));
        }
        Ok(())
    }
}

/// The geometric quantities the right side needs; a strict subset of
/// [`GeometryCache`] so inner steps skip the monitor-only fields.
pub struct RhsGeometry {
    pub h_inv: SymTensorField,
    pub christoffel: ChristoffelField,
    pub ricci: SymTensorField,
    pub du: VectorField,
    pub lap_u: ScalarField,
}

pub fn rhs_geometry(state: &FlowState, order: StencilOrder, lambda_min: f64) -> Result<RhsGeometry> {
    let mut geo = RhsGeometry::alloc(state.h.grid());
    rhs_geometry_into(state, order, lambda_min, &mut geo)?;
    Ok(geo)
}

pub(crate) fn rhs_geometry_into(
    state: &FlowState,
    order: StencilOrder,
    lambda_min: f64,
    geo: &mut RhsGeometry,
) -> Result<()> {
    geometry::inverse_metric_into(&state.h, lambda_min, &mut geo.h_inv)?;
    geometry::christoffel_into(&state.h, &geo.h_inv, order, &mut geo.christoffel)?;
    geometry::ricci_tensor_into(&geo.h_inv, &geo.christoffel, order, &mut geo.ricci, None)?;
    geometry::scalar_rhs_into(
        &state.u,
        &geo.h_inv,
        &geo.christoffel,
        order,
        &mut geo.du,
        &mut geo.lap_u,
    )?;
    Ok(())
}

/// Borrowed view of the fields the right side reads, so both the light
/// [`RhsGeometry`] and the full [`GeometryCache`] can drive it.
#[derive(Clone, Copy)]
pub struct RhsView<'a> {
    pub h_inv: &'a SymTensorField,
    pub christoffel: &'a ChristoffelField,
    pub ricci: &'a SymTensorField,
    pub du: &'a VectorField,
    pub lap_u: &'a ScalarField,
}

impl RhsGeometry {
    /// Zero-filled buffers of the right shapes, ready to be filled in
    /// place by the stepping pipeline.
    pub fn alloc(grid: &crate::grid::PeriodicGrid) -> Self {
        RhsGeometry {
            h_inv: SymTensorField::zeros(grid),
            christoffel: ChristoffelField::zeros(grid),
            ricci: SymTensorField::zeros(grid),
            du: VectorField::zeros(grid),
            lap_u: ScalarField::zeros(grid),
        }
    }

    pub fn view(&self) -> RhsView<'_> {
        RhsView {
            h_inv: &self.h_inv,
            christoffel: &self.christoffel,
            ricci: &self.ricci,
            du: &self.du,
            lap_u: &self.lap_u,
        }
    }
}

impl GeometryCache {
    pub fn rhs_view(&self) -> RhsView<'_> {
        RhsView {
            h_inv: &self.h_inv,
            christoffel: &self.christoffel,
            ricci: &self.ricci,
            du: &self.du,
            lap_u: &self.lap_u,
        }
    }
}

fn bare_rhs_impl<const DIM: usize, const NSYM: usize>(
    ricci: &[f64],
    du: &[f64],
    out: &mut [f64],
) {
    exec::fill_nodes(out, NSYM, |node0, block| {
        for (off, onode) in block.chunks_exact_mut(NSYM).enumerate() {
            let node = node0 + off;
            let dn = &du[node * DIM..(node + 1) * DIM];
            let mut s = 0;
            for i in 0..DIM {
                for j in i..DIM {
                    onode[s] = -2.0 * ricci[node * NSYM + s] + 2.0 * dn[i] * dn[j];
                    s += 1;
                }
            }
        }
    });
}

/// Bare system right side:
/// `dh_ij = -2 R_ij + 2 d_i u d_j u`, `du = Lap_h u`.
pub fn list_flow_rhs(state: &FlowState, geo: RhsView<'_>) -> (SymTensorField, ScalarField) {
    let grid = state.h.grid();
    let dim = grid.dim();
    let mut dh = SymTensorField::zeros(grid);
    geometry::dispatch_dim!(
        dim,
        bare_rhs_impl(geo.ricci.values(), geo.du.values(), dh.values_mut())
    );
    (dh, geo.lap_u.clone())
}

fn deturck_impl<const DIM: usize, const NSYM: usize>(
    h_inv: &[f64],
    gamma: &[f64],
    out: &mut [f64],
) {
    let gcomps = DIM * NSYM;
    exec::fill_nodes(out, DIM, |node0, block| {
        for (off, wnode) in block.chunks_exact_mut(DIM).enumerate() {
            let node = node0 + off;
            let hin = &h_inv[node * NSYM..(node + 1) * NSYM];
            let gn = &gamma[node * gcomps..(node + 1) * gcomps];
            for (k, o) in wnode.iter_mut().enumerate() {
                let mut acc = 0.0;
                for s in 0..NSYM {
                    acc += hin[s] * gn[k * NSYM + s] * sym_weight::<DIM>(s);
                }
                *o = acc;
            }
        }
    });
}

/// 1 for diagonal packed entries, 2 for off-diagonal (contraction weight).
#[inline(always)]
fn sym_weight<const DIM: usize>(s: usize) -> f64 {
    let mut idx = 0;
    for i in 0..DIM {
        for j in i..DIM {
            if idx == s {
                return if i == j { 1.0 } else { 2.0 };
            }
            idx += 1;
        }
    }
    unreachable!()
}

/// DeTurck vector against the flat reference metric on the same grid:
/// `W^k = h^ij Gamma^k_ij` (the reference symbols vanish).
pub fn deturck_vector(geo: RhsView<'_>) -> VectorField {
    let grid = geo.h_inv.grid();
    let dim = grid.dim();
    let mut w = VectorField::zeros(grid);
    geometry::dispatch_dim!(
        dim,
        deturck_impl(geo.h_inv.values(), geo.christoffel.values(), w.values_mut())
    );
    w
}

/// Gauge-corrected right side. With `deturck` off this is exactly
/// [`list_flow_rhs`]; with it on, the metric equation gains the Lie
/// derivative `L_W h` and the scalar equation the advection `<W, grad u>`.
pub fn gauged_rhs(
    state: &FlowState,
    geo: RhsView<'_>,
    deturck: bool,
    order: StencilOrder,
) -> (SymTensorField, ScalarField) {
    let (mut dh, mut du_rhs) = list_flow_rhs(state, geo);
    if deturck {
        add_gauge_terms(state, geo, order, &mut dh, &mut du_rhs);
    }
    (dh, du_rhs)
}

/// Adds `L_W h` to `dh` and `<W, grad u>` to `du_rhs`.
fn add_gauge_terms(
    state: &FlowState,
    geo: RhsView<'_>,
    order: StencilOrder,
    dh: &mut SymTensorField,
    du_rhs: &mut ScalarField,
) {
    let grid = state.h.grid().clone();
    let dim = grid.dim();
    let nn = grid.node_count();

    let mut w = exec::take_buf(nn * dim);
    geometry::dispatch_dim!(
        dim,
        deturck_impl(geo.h_inv.values(), geo.christoffel.values(), &mut w)
    );
    let mut w_low = exec::take_buf(nn * dim);
    geometry::dispatch_dim!(dim, lower_impl(state.h.values(), &w, &mut w_low));
    let dw: Vec<Vec<f64>> = (0..dim)
        .map(|i| {
            let mut d = exec::take_buf(nn * dim);
            diff_axis_into(&w_low, dim, &grid, i, order, false, &mut d);
            d
        })
        .collect();

    geometry::dispatch_dim!(
        dim,
        lie_derivative_impl(geo.christoffel.values(), &w_low, &dw, dh.values_mut())
    );
    {
        let wv: &[f64] = &w;
        let duv = geo.du.values();
        exec::fill_nodes(du_rhs.values_mut(), 1, |node0, block| {
            for (off, o) in block.iter_mut().enumerate() {
                let node = node0 + off;
                let mut adv = 0.0;
                for k in 0..dim {
                    adv += wv[node * dim + k] * duv[node * dim + k];
                }
                *o += adv;
            }
        });
    }
    exec::put_buf(w);
    exec::put_buf(w_low);
    for d in dw {
        exec::put_buf(d);
    }
}

fn lower_impl<const DIM: usize, const NSYM: usize>(h: &[f64], w: &[f64], out: &mut [f64]) {
    exec::fill_nodes(out, DIM, |node0, block| {
        for (off, onode) in block.chunks_exact_mut(DIM).enumerate() {
            let node = node0 + off;
            let hn = &h[node * NSYM..(node + 1) * NSYM];
            let wn = &w[node * DIM..(node + 1) * DIM];
            for (j, o) in onode.iter_mut().enumerate() {
                let mut acc = 0.0;
                for (k, wk) in wn.iter().enumerate() {
                    let (a, b) = if j <= k { (j, k) } else { (k, j) };
                    acc += hn[a * DIM - a * (a + 1) / 2 + b] * wk;
                }
                *o = acc;
            }
        }
    });
}

/// Adds `(L_W h)_ij = d_i W_j + d_j W_i - 2 Gamma^k_ij W_k` into `out`.
fn lie_derivative_impl<const DIM: usize, const NSYM: usize>(
    gamma: &[f64],
    w_low: &[f64],
    dw_planes: &[Vec<f64>],
    out: &mut [f64],
) {
    let dw: [&[f64]; DIM] = std::array::from_fn(|a| dw_planes[a].as_slice());
    let gcomps = DIM * NSYM;
    exec::fill_nodes(out, NSYM, |node0, block| {
        for (off, onode) in block.chunks_exact_mut(NSYM).enumerate() {
            let node = node0 + off;
            let gn = &gamma[node * gcomps..(node + 1) * gcomps];
            let wl = &w_low[node * DIM..(node + 1) * DIM];
            let mut s = 0;
            for i in 0..DIM {
                for j in i..DIM {
                    let mut lie = dw[i][node * DIM + j] + dw[j][node * DIM + i];
                    for (k, wk) in wl.iter().enumerate() {
                        lie -= 2.0 * gn[k * NSYM + s] * wk;
                    }
                    onode[s] += lie;
                    s += 1;
                }
            }
        }
    });
}

/// CFL-stable explicit step:
/// `dt = cfl * min_a(dx_a^2) / (2 dim Lambda)` with `Lambda` the largest
/// eigenvalue of `h^-1` over all nodes, clamped to the remaining time.
pub fn stable_dt(state: &FlowState, h_inv: &SymTensorField, config: &FlowConfig) -> Result<f64> {
    let lambda = geometry::max_inverse_eigenvalue(h_inv);
    if !lambda.is_finite() {
        return Err(Error::Invalid(format!(
            "non-finite inverse-metric eigenvalue bound {lambda}"
        )));
    }
    let dx = state.h.grid().min_spacing();
    let dim = state.h.grid().dim() as f64;
    let dt = config.cfl * dx * dx / (2.0 * dim * lambda);
    Ok(dt.min(config.t_end - state.t))
}

type Rhs = (SymTensorField, ScalarField);

/// Reused buffers for one stepping pipeline: the stage geometry, the stage
/// evaluation point and the four slope fields. Reusing them across stages
/// and steps keeps the inner loop free of large allocations.
pub(crate) struct StepWorkspace {
    geo: RhsGeometry,
    stage: FlowState,
    k1: Rhs,
    k2: Rhs,
    k3: Rhs,
    k4: Rhs,
}

impl StepWorkspace {
    pub(crate) fn alloc(grid: &crate::grid::PeriodicGrid) -> Self {
        let rhs = || (SymTensorField::zeros(grid), ScalarField::zeros(grid));
        StepWorkspace {
            geo: RhsGeometry::alloc(grid),
            stage: FlowState {
                t: 0.0,
                h: SymTensorField::zeros(grid),
                u: ScalarField::zeros(grid),
            },
            k1: rhs(),
            k2: rhs(),
            k3: rhs(),
            k4: rhs(),
        }
    }
}

/// `stage = base + coef * k` written in place.
fn stage_into(base: &FlowState, k: &Rhs, coef: f64, t: f64, stage: &mut FlowState) {
    stage.t = t;
    let hs = stage.h.values_mut();
    hs.copy_from_slice(base.h.values());
    for (o, d) in hs.iter_mut().zip(k.0.values()) {
        *o += coef * d;
    }
    let us = stage.u.values_mut();
    us.copy_from_slice(base.u.values());
    for (o, d) in us.iter_mut().zip(k.1.values()) {
        *o += coef * d;
    }
}

/// Weighted combination `base + sum_i coef_i * k_i` (fresh state).
fn combine_state(base: &FlowState, stages: &[(&Rhs, f64)], t: f64) -> FlowState {
    let mut h = base.h.clone();
    let mut u = base.u.clone();
    for (k, coef) in stages {
        for (o, d) in h.values_mut().iter_mut().zip(k.0.values()) {
            *o += coef * d;
        }
        for (o, d) in u.values_mut().iter_mut().zip(k.1.values()) {
            *o += coef * d;
        }
    }
    FlowState { t, h, u }
}

/// Full right side honoring config: gauge, optional coupling removal,
/// optional frozen metric. Writes into `k`.
fn rhs_into(state: &FlowState, geo: &RhsGeometry, config: &FlowConfig, k: &mut Rhs) {
    let dim = state.h.grid().dim();
    geometry::dispatch_dim!(
        dim,
        bare_rhs_impl(geo.ricci.values(), geo.du.values(), k.0.values_mut())
    );
    k.1.values_mut().copy_from_slice(geo.lap_u.values());
    if config.deturck {
        add_gauge_terms(state, geo.view(), config.order, &mut k.0, &mut k.1);
    }
    if !config.u_coupling {
        strip_coupling(&mut k.0, &geo.du);
    }
    if config.freeze_metric {
        for v in k.0.values_mut() {
            *v = 0.0;
        }
    }
}

fn degenerate_at(e: Error, t: f64) -> Error {
    match e {
        Error::NotSpd {
            node, eigenvalue, ..
        } => Error::Degenerate {
            node,
            eigenvalue,
            t,
        },
        other => other,
    }
}

/// Advance one explicit step with dt chosen by [`stable_dt`] (or the
/// `fixed_dt` override). The output metric is re-validated against the SPD
/// floor; a violation reports node, eigenvalue and time.
pub fn step(state: &FlowState, config: &FlowConfig) -> Result<FlowState> {
    let mut ws = StepWorkspace::alloc(state.h.grid());
    rhs_geometry_into(state, config.order, config.lambda_min, &mut ws.geo)
        .map_err(|e| degenerate_at(e, state.t))?;
    let dt = match config.fixed_dt {
        Some(dt) => dt.min(config.t_end - state.t),
        None => stable_dt(state, &ws.geo.h_inv, config)?,
    };
    step_with_ws(state, config, &mut ws, dt)
}

/// One step given a workspace whose `geo` is already built for `state`.
fn step_with_ws(
    state: &FlowState,
    config: &FlowConfig,
    ws: &mut StepWorkspace,
    dt: f64,
) -> Result<FlowState> {
    // t_end is hit exactly when the clamp engages
    let t_next = if dt >= config.t_end - state.t {
        config.t_end
    } else {
        state.t + dt
    };

    rhs_into(state, &ws.geo, config, &mut ws.k1);

    let next = match config.integrator {
        Integrator::Euler => combine_state(state, &[(&ws.k1, dt)], t_next),
        Integrator::Rk2 => {
            stage_into(state, &ws.k1, 0.5 * dt, state.t + 0.5 * dt, &mut ws.stage);
            rhs_geometry_into(&ws.stage, config.order, config.lambda_min, &mut ws.geo)
                .map_err(|e| degenerate_at(e, ws.stage.t))?;
            rhs_into(&ws.stage, &ws.geo, config, &mut ws.k2);
            combine_state(state, &[(&ws.k2, dt)], t_next)
        }
        Integrator::Rk4 => {
            stage_into(state, &ws.k1, 0.5 * dt, state.t + 0.5 * dt, &mut ws.stage);
            rhs_geometry_into(&ws.stage, config.order, config.lambda_min, &mut ws.geo)
                .map_err(|e| degenerate_at(e, ws.stage.t))?;
            rhs_into(&ws.stage, &ws.geo, config, &mut ws.k2);

            stage_into(state, &ws.k2, 0.5 * dt, state.t + 0.5 * dt, &mut ws.stage);
            rhs_geometry_into(&ws.stage, config.order, config.lambda_min, &mut ws.geo)
                .map_err(|e| degenerate_at(e, ws.stage.t))?;
            rhs_into(&ws.stage, &ws.geo, config, &mut ws.k3);

            stage_into(state, &ws.k3, dt, state.t + dt, &mut ws.stage);
            rhs_geometry_into(&ws.stage, config.order, config.lambda_min, &mut ws.geo)
                .map_err(|e| degenerate_at(e, ws.stage.t))?;
            rhs_into(&ws.stage, &ws.geo, config, &mut ws.k4);

            let c = dt / 6.0;
            combine_state(
                state,
                &[
                    (&ws.k1, c),
                    (&ws.k2, 2.0 * c),
                    (&ws.k3, 2.0 * c),
                    (&ws.k4, c),
                ],
                t_next,
            )
        }
    };

    if let Some((node, eigenvalue)) = geometry::spd_violation(&next.h, config.lambda_min) {
        return Err(Error::Degenerate {
            node,
            eigenvalue,
            t: next.t,
        });
    }
    next.u.validate_finite()?;
    Ok(next)
}

/// Why a run stopped.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RunStatus {
    Completed,
    Degenerated { node: usize, eigenvalue: f64, t: f64 },
}

#[derive(Debug)]
pub struct RunOutput {
    pub records: Vec<DiagnosticsRecord>,
    pub status: RunStatus,
    pub final_state: FlowState,
    pub steps: usize,
}

/// Running state carried across a checkpoint/resume boundary.
pub struct Continuation {
    /// absolute index of the step the restored state was written at
    pub start_step: usize,
    pub diag: DiagState,
}

/// Integrate from `initial` to `t_end`, emitting a record every
/// `record_every` steps and at the final step. Degeneration terminates the
/// run with partial records and an explicit status. Evaluation order is
/// fixed, so identical inputs produce bit-identical records.
pub fn run(initial: FlowState, config: &FlowConfig) -> Result<RunOutput> {
    run_observed(initial, config, None, |_, _, _| {})
}

/// [`run`] with a continuation (for resume) and a per-step observer
/// `obs(step_index, state, record_just_emitted)`.
pub fn run_observed(
    initial: FlowState,
    config: &FlowConfig,
    continuation: Option<Continuation>,
    mut obs: impl FnMut(usize, &FlowState, Option<&DiagnosticsRecord>),
) -> Result<RunOutput> {
    config.validate()?;
    let checks = config.checks;
    let mut records = Vec::new();
    let (start_step, mut diag) = match continuation {
        Some(c) => (c.start_step, c.diag),
        None => (0, DiagState::new()),
    };
    let mut step_idx = start_step;

    if step_idx == 0 {
        match geometry::build_cache(&initial.h, &initial.u, config.order, config.lambda_min) {
            Ok(cache) => {
                initial.u.validate_finite()?;
                let rec =
                    diagnostics::make_record(&initial, &cache, config, &checks, &mut diag, None)?;
                obs(0, &initial, Some(&rec));
                records.push(rec);
            }
            // a start state below the SPD floor is already degenerate
            Err(e) => match degenerate_at(e, initial.t) {
                Error::Degenerate { node, eigenvalue, t } => {
                    return Ok(RunOutput {
                        records,
                        status: RunStatus::Degenerated { node, eigenvalue, t },
                        final_state: initial,
                        steps: 0,
                    });
                }
                other => return Err(other),
            },
        }
    }

    let mut state = initial;
    let mut status = RunStatus::Completed;
    let mut ws = StepWorkspace::alloc(state.h.grid());
    loop {
        if state.t >= config.t_end {
            break;
        }
        if step_idx - start_step >= config.max_steps {
            return Err(Error::StepLimit(config.max_steps));
        }
        match rhs_geometry_into(&state, config.order, config.lambda_min, &mut ws.geo) {
            Ok(()) => {}
            Err(e) => match degenerate_at(e, state.t) {
                Error::Degenerate { node, eigenvalue, t } => {
                    status = RunStatus::Degenerated { node, eigenvalue, t };
                    break;
                }
                other => return Err(other),
            },
        }
        let dt = match config.fixed_dt {
            Some(fixed) => fixed.min(config.t_end - state.t),
            None => stable_dt(&state, &ws.geo.h_inv, config)?,
        };
        match step_with_ws(&state, config, &mut ws, dt) {
            Ok(next) => {
                step_idx += 1;
                let record_due =
                    step_idx % config.record_every == 0 || next.t == config.t_end;
                let prev_state = std::mem::replace(&mut state, next);
                if record_due {
                    let prev_cache = geometry::build_cache(
                        &prev_state.h,
                        &prev_state.u,
                        config.order,
                        config.lambda_min,
                    )?;
                    let cache = geometry::build_cache(
                        &state.h,
                        &state.u,
                        config.order,
                        config.lambda_min,
                    )?;
                    let rec = diagnostics::make_record(
                        &state,
                        &cache,
                        config,
                        &checks,
                        &mut diag,
                        Some(diagnostics::StepPair {
                            prev_state: &prev_state,
                            prev_cache: &prev_cache,
                            dt,
                        }),
                    )?;
                    obs(step_idx, &state, Some(&rec));
                    records.push(rec);
                } else {
                    obs(step_idx, &state, None);
                }
            }
            Err(Error::Degenerate { node, eigenvalue, t }) => {
                status = RunStatus::Degenerated { node, eigenvalue, t };
                break;
            }
            Err(other) => return Err(other),
        }
    }

    Ok(RunOutput {
        records,
        status,
        final_state: state,
        steps: step_idx - start_step,
    })
}

fn strip_impl<const DIM: usize, const NSYM: usize>(du: &[f64], out: &mut [f64]) {
    exec::fill_nodes(out, NSYM, |node0, block| {
        for (off, onode) in block.chunks_exact_mut(NSYM).enumerate() {
            let node = node0 + off;
            let dn = &du[node * DIM..(node + 1) * DIM];
            let mut s = 0;
            for i in 0..DIM {
                for j in i..DIM {
                    onode[s] -= 2.0 * dn[i] * dn[j];
                    s += 1;
                }
            }
        }
    });
}

fn strip_coupling(dh: &mut SymTensorField, du: &VectorField) {
    let dim = du.grid().dim();
    geometry::dispatch_dim!(dim, strip_impl(du.values(), dh.values_mut()));
}
