//! Finite-difference Riemannian tensor calculus on sampled metrics.
//!
//! From a metric `h` and a scalar `u` this module produces every derived
//! quantity the flow and its monitors need: inverse metric, Christoffel
//! symbols, Ricci/scalar/Riemann-norm curvature, covariant derivatives of
//! `u`, and the combined [`GeometryCache`].
//!
//! Curvature is evaluated pointwise from Christoffel symbols with a shared
//! stencil order; tensors are stored packed-symmetric, so the symmetries
//! `R_ij = R_ji`, `(D2u)_ij = (D2u)_ji`, `Gamma^k_ij = Gamma^k_ji` hold by
//! construction.
//!
//! The node kernels are monomorphized over the dimension (2, 3 or 4): the
//! short tensor loops unroll completely, which is what makes the explicit
//! time stepper usable.

use crate::error::{Error, Result};
use crate::exec;
use crate::grid::{
    diff_axis_into, sym_index, sym_len, ChristoffelField, PeriodicGrid, ScalarField,
    StencilOrder, SymTensorField, VectorField,
};
use crate::smat;

pub const DEFAULT_LAMBDA_MIN: f64 = 1e-8;

/// Packed symmetric index with a const dimension; unrolled callers resolve
/// this at compile time.
#[inline(always)]
fn sym<const DIM: usize>(i: usize, j: usize) -> usize {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    i * DIM - i * (i + 1) / 2 + j
}

macro_rules! dispatch_dim {
    ($dim:expr, $func:ident($($arg:expr),* $(,)?)) => {
        match $dim {
            2 => $func::<2, 3>($($arg),*),
            3 => $func::<3, 6>($($arg),*),
            4 => $func::<4, 10>($($arg),*),
            d => unreachable!("unsupported dimension {d}"),
        }
    };
}
pub(crate) use dispatch_dim;

fn same_grid(a: &PeriodicGrid, b: &PeriodicGrid) -> Result<()> {
    if a != b {
        return Err(Error::GridMismatch(
            "operands live on different grids".into(),
        ));
    }
    Ok(())
}

/// First failing node of the SPD floor test, if any.
///
/// The comparison is written so a NaN eigenvalue also fails.
pub fn spd_violation(h: &SymTensorField, floor: f64) -> Option<(usize, f64)> {
    let dim = h.grid().dim();
    let nsym = sym_len(dim);
    let hv = h.values();
    for node in 0..h.grid().node_count() {
        let (lo, _) = smat::sym_eig_range(dim, &hv[node * nsym..(node + 1) * nsym]);
        if !(lo >= floor) {
            return Some((node, lo));
        }
    }
    None
}

fn invert_impl<const DIM: usize, const NSYM: usize>(h: &[f64], out: &mut [f64]) {
    exec::fill_nodes(out, NSYM, |node0, block| {
        for (off, inv) in block.chunks_exact_mut(NSYM).enumerate() {
            let node = node0 + off;
            smat::invert(DIM, &h[node * NSYM..(node + 1) * NSYM], inv);
        }
    });
}

/// Per-node inverse of an SPD metric. Fails with the node index and
/// smallest eigenvalue when the SPD floor is violated, which is how metric
/// degeneration surfaces during the flow.
pub fn inverse_metric(h: &SymTensorField, lambda_min: f64) -> Result<SymTensorField> {
    let mut out = SymTensorField::zeros(h.grid());
    inverse_metric_into(h, lambda_min, &mut out)?;
    Ok(out)
}

pub(crate) fn inverse_metric_into(
    h: &SymTensorField,
    lambda_min: f64,
    out: &mut SymTensorField,
) -> Result<()> {
    if let Some((node, eigenvalue)) = spd_violation(h, lambda_min) {
        return Err(Error::NotSpd {
            node,
            eigenvalue,
            floor: lambda_min,
        });
    }
    let dim = h.grid().dim();
    dispatch_dim!(dim, invert_impl(h.values(), out.values_mut()));
    Ok(())
}

/// Largest eigenvalue of `h^-1` over all nodes (the parabolic stiffness
/// scale used by the CFL bound).
pub fn max_inverse_eigenvalue(h_inv: &SymTensorField) -> f64 {
    let dim = h_inv.grid().dim();
    let nsym = sym_len(dim);
    let hv = h_inv.values();
    let mut m = f64::NEG_INFINITY;
    for node in 0..h_inv.grid().node_count() {
        let (_, hi) = smat::sym_eig_range(dim, &hv[node * nsym..(node + 1) * nsym]);
        m = m.max(hi);
    }
    m
}

/// Partial derivatives of every metric component:
/// `dh[l]` holds `d h_ij / d x_l` packed like the metric itself.
/// Buffers come from the scratch pool; return them with [`exec::put_buf`].
fn metric_partials(h: &SymTensorField, order: StencilOrder) -> Vec<Vec<f64>> {
    let dim = h.grid().dim();
    let comps = sym_len(dim);
    (0..dim)
        .map(|l| {
            let mut d = exec::take_buf(h.values().len());
            diff_axis_into(h.values(), comps, h.grid(), l, order, false, &mut d);
            d
        })
        .collect()
}

fn christoffel_impl<const DIM: usize, const NSYM: usize>(
    h_inv: &[f64],
    dh_planes: &[Vec<f64>],
    out: &mut [f64],
) {
    let dh: [&[f64]; DIM] = std::array::from_fn(|a| dh_planes[a].as_slice());
    let gcomps = DIM * NSYM;
    exec::fill_nodes(out, gcomps, |node0, block| {
        for (off, gnode) in block.chunks_exact_mut(gcomps).enumerate() {
            let node = node0 + off;
            let hin = &h_inv[node * NSYM..(node + 1) * NSYM];
            for i in 0..DIM {
                for j in i..DIM {
                    let s = sym::<DIM>(i, j);
                    let mut t = [0.0; DIM];
                    for (l, tl) in t.iter_mut().enumerate() {
                        *tl = dh[i][node * NSYM + sym::<DIM>(j, l)]
                            + dh[j][node * NSYM + sym::<DIM>(i, l)]
                            - dh[l][node * NSYM + s];
                    }
                    for k in 0..DIM {
                        let mut acc = 0.0;
                        for (l, tl) in t.iter().enumerate() {
                            acc += hin[sym::<DIM>(k, l)] * tl;
                        }
                        gnode[k * NSYM + s] = 0.5 * acc;
                    }
                }
            }
        }
    });
}

/// Christoffel symbols of the metric:
/// `Gamma^k_ij = 1/2 h^kl (d_i h_jl + d_j h_il - d_l h_ij)`.
pub fn christoffel(
    h: &SymTensorField,
    h_inv: &SymTensorField,
    order: StencilOrder,
) -> Result<ChristoffelField> {
    let mut gamma = ChristoffelField::zeros(h.grid());
    christoffel_into(h, h_inv, order, &mut gamma)?;
    Ok(gamma)
}

pub(crate) fn christoffel_into(
    h: &SymTensorField,
    h_inv: &SymTensorField,
    order: StencilOrder,
    gamma: &mut ChristoffelField,
) -> Result<()> {
    same_grid(h.grid(), h_inv.grid())?;
    let dim = h.grid().dim();
    let dh = metric_partials(h, order);
    dispatch_dim!(
        dim,
        christoffel_impl(h_inv.values(), &dh, gamma.values_mut())
    );
    for d in dh {
        exec::put_buf(d);
    }
    Ok(())
}

fn extract_gamma_block<const DIM: usize, const NSYM: usize>(
    gamma: &[f64],
    k: usize,
    out: &mut [f64],
) {
    let gcomps = DIM * NSYM;
    exec::fill_nodes(out, NSYM, |node0, block| {
        for (off, gnode) in block.chunks_exact_mut(NSYM).enumerate() {
            let node = node0 + off;
            let src = node * gcomps + k * NSYM;
            gnode.copy_from_slice(&gamma[src..src + NSYM]);
        }
    });
}

fn contracted_impl<const DIM: usize, const NSYM: usize>(gamma: &[f64], out: &mut [f64]) {
    let gcomps = DIM * NSYM;
    exec::fill_nodes(out, DIM, |node0, block| {
        for (off, tnode) in block.chunks_exact_mut(DIM).enumerate() {
            let node = node0 + off;
            let gnode = &gamma[node * gcomps..(node + 1) * gcomps];
            for (j, t) in tnode.iter_mut().enumerate() {
                let mut acc = 0.0;
                for k in 0..DIM {
                    acc += gnode[k * NSYM + sym::<DIM>(k, j)];
                }
                *t = acc;
            }
        }
    });
}

fn ricci_fill_impl<const DIM: usize, const NSYM: usize>(
    gamma: &[f64],
    div_gamma: &[f64],
    contracted: &[f64],
    dcontracted_planes: &[Vec<f64>],
    out: &mut [f64],
) {
    let dct: [&[f64]; DIM] = std::array::from_fn(|a| dcontracted_planes[a].as_slice());
    let gcomps = DIM * NSYM;
    exec::fill_nodes(out, NSYM, |node0, block| {
        for (off, rnode) in block.chunks_exact_mut(NSYM).enumerate() {
            let node = node0 + off;
            let gnode = &gamma[node * gcomps..(node + 1) * gcomps];
            let tnode = &contracted[node * DIM..(node + 1) * DIM];
            for i in 0..DIM {
                for j in i..DIM {
                    let s = sym::<DIM>(i, j);
                    // the d_i T_j term is symmetrized: discretely d_i T_j and
                    // d_j T_i differ at truncation order, and the average
                    // keeps the assembled tensor equivariant under grid
                    // relabelings
                    let dt = 0.5 * (dct[i][node * DIM + j] + dct[j][node * DIM + i]);
                    let mut acc = div_gamma[node * NSYM + s] - dt;
                    for l in 0..DIM {
                        acc += tnode[l] * gnode[l * NSYM + s];
                        for k in 0..DIM {
                            acc -= gnode[k * NSYM + sym::<DIM>(i, l)]
                                * gnode[l * NSYM + sym::<DIM>(k, j)];
                        }
                    }
                    rnode[s] = acc;
                }
            }
        }
    });
}

fn trace_impl<const DIM: usize, const NSYM: usize>(
    h_inv: &[f64],
    tensor: &[f64],
    out: &mut [f64],
) {
    exec::fill_nodes(out, 1, |node0, block| {
        for (off, sv) in block.iter_mut().enumerate() {
            let node = node0 + off;
            let hin = &h_inv[node * NSYM..(node + 1) * NSYM];
            let tn = &tensor[node * NSYM..(node + 1) * NSYM];
            let mut acc = 0.0;
            for i in 0..DIM {
                acc += hin[sym::<DIM>(i, i)] * tn[sym::<DIM>(i, i)];
                for j in (i + 1)..DIM {
                    acc += 2.0 * hin[sym::<DIM>(i, j)] * tn[sym::<DIM>(i, j)];
                }
            }
            *sv = acc;
        }
    });
}

/// Ricci tensor and scalar curvature from the coordinate formula
/// `R_ij = d_k Gamma^k_ij - d_i Gamma^k_kj + Gamma^k_kl Gamma^l_ij
///         - Gamma^k_il Gamma^l_kj`.
/// Valid for any grid dimension up to 4 (the warped cross-check runs it on
/// product metrics).
pub fn ricci_tensor(
    h_inv: &SymTensorField,
    gamma: &ChristoffelField,
    order: StencilOrder,
) -> Result<(SymTensorField, ScalarField)> {
    let mut ric = SymTensorField::zeros(h_inv.grid());
    let mut scal = ScalarField::zeros(h_inv.grid());
    ricci_tensor_into(h_inv, gamma, order, &mut ric, Some(&mut scal))?;
    Ok((ric, scal))
}

pub(crate) fn ricci_tensor_into(
    h_inv: &SymTensorField,
    gamma: &ChristoffelField,
    order: StencilOrder,
    ric: &mut SymTensorField,
    scal: Option<&mut ScalarField>,
) -> Result<()> {
    same_grid(h_inv.grid(), gamma.grid())?;
    let grid = h_inv.grid().clone();
    let dim = grid.dim();
    let nsym = sym_len(dim);
    let nn = grid.node_count();

    // div_gamma_ij = sum_k d_k Gamma^k_ij
    let mut div_gamma = exec::take_buf(nn * nsym);
    {
        let mut gk = exec::take_buf(nn * nsym);
        let mut plane = exec::take_buf(nn * nsym);
        for k in 0..dim {
            dispatch_dim!(dim, extract_gamma_block(gamma.values(), k, &mut gk));
            if k == 0 {
                diff_axis_into(&gk, nsym, &grid, k, order, false, &mut div_gamma);
            } else {
                diff_axis_into(&gk, nsym, &grid, k, order, false, &mut plane);
                for (d, p) in div_gamma.iter_mut().zip(plane.iter()) {
                    *d += p;
                }
            }
        }
        exec::put_buf(gk);
        exec::put_buf(plane);
    }

    // contracted symbols T_j = Gamma^k_kj and their partials d_i T_j
    let mut contracted = exec::take_buf(nn * dim);
    dispatch_dim!(dim, contracted_impl(gamma.values(), &mut contracted));
    let dcontracted: Vec<Vec<f64>> = (0..dim)
        .map(|i| {
            let mut d = exec::take_buf(nn * dim);
            diff_axis_into(&contracted, dim, &grid, i, order, false, &mut d);
            d
        })
        .collect();

    dispatch_dim!(
        dim,
        ricci_fill_impl(
            gamma.values(),
            &div_gamma,
            &contracted,
            &dcontracted,
            ric.values_mut(),
        )
    );

    if let Some(scal) = scal {
        dispatch_dim!(
            dim,
            trace_impl(h_inv.values(), ric.values(), scal.values_mut())
        );
    }
    exec::put_buf(div_gamma);
    exec::put_buf(contracted);
    for d in dcontracted {
        exec::put_buf(d);
    }
    Ok(())
}

/// `|Rm|^2` for flow dimensions.
///
/// Dim 2: the single curvature component forces `|Rm|^2 = R^2`. Dim 3:
/// Riemann is reconstructed from Ricci by the dimension-3 decomposition and
/// contracted with four inverse metrics.
pub fn riemann_norm_sq(
    h: &SymTensorField,
    h_inv: &SymTensorField,
    ric: &SymTensorField,
    scal: &ScalarField,
) -> Result<ScalarField> {
    let grid = h.grid().clone();
    let dim = grid.dim();
    let mut out = ScalarField::zeros(&grid);
    match dim {
        2 => {
            let sv = scal.values();
            exec::fill_nodes(out.values_mut(), 1, |node0, block| {
                for (off, v) in block.iter_mut().enumerate() {
                    let r = sv[node0 + off];
                    *v = r * r;
                }
            });
        }
        3 => {
            let hv = h.values();
            let hiv = h_inv.values();
            let rv = ric.values();
            let sv = scal.values();
            let nsym = sym_len(3);
            exec::fill_nodes(out.values_mut(), 1, |node0, block| {
                for (off, v) in block.iter_mut().enumerate() {
                    let node = node0 + off;
                    let hm = smat::unpack(3, &hv[node * nsym..(node + 1) * nsym]);
                    let him = smat::unpack(3, &hiv[node * nsym..(node + 1) * nsym]);
                    let rm = smat::unpack(3, &rv[node * nsym..(node + 1) * nsym]);
                    let half_s = 0.5 * sv[node];
                    // R_ijkl = R_ik h_jl + R_jl h_ik - R_il h_jk - R_jk h_il
                    //          - S/2 (h_ik h_jl - h_il h_jk)
                    let lower = |i: usize, j: usize, k: usize, l: usize| -> f64 {
                        rm[i][k] * hm[j][l] + rm[j][l] * hm[i][k]
                            - rm[i][l] * hm[j][k]
                            - rm[j][k] * hm[i][l]
                            - half_s * (hm[i][k] * hm[j][l] - hm[i][l] * hm[j][k])
                    };
                    // raise all four indices step by step
                    let mut r1 = [[[[0.0f64; 3]; 3]; 3]; 3];
                    for m in 0..3 {
                        for j in 0..3 {
                            for k in 0..3 {
                                for l in 0..3 {
                                    let mut acc = 0.0;
                                    for i in 0..3 {
                                        acc += him[m][i] * lower(i, j, k, l);
                                    }
                                    r1[m][j][k][l] = acc;
                                }
                            }
                        }
                    }
                    let raise = |t: &[[[[f64; 3]; 3]; 3]; 3], slot: usize| {
                        let mut o = [[[[0.0f64; 3]; 3]; 3]; 3];
                        for a in 0..3 {
                            for b in 0..3 {
                                for c in 0..3 {
                                    for d in 0..3 {
                                        let mut acc = 0.0;
                                        for e in 0..3 {
                                            let v = match slot {
                                                1 => t[a][e][c][d],
                                                2 => t[a][b][e][d],
                                                _ => t[a][b][c][e],
                                            };
                                            let w = match slot {
                                                1 => him[b][e],
                                                2 => him[c][e],
                                                _ => him[d][e],
                                            };
                                            acc += w * v;
                                        }
                                        o[a][b][c][d] = acc;
                                    }
                                }
                            }
                        }
                        o
                    };
                    let r2 = raise(&r1, 1);
                    let r3 = raise(&r2, 2);
                    let r4 = raise(&r3, 3);
                    let mut acc = 0.0;
                    for i in 0..3 {
                        for j in 0..3 {
                            for k in 0..3 {
                                for l in 0..3 {
                                    acc += r4[i][j][k][l] * lower(i, j, k, l);
                                }
                            }
                        }
                    }
                    *v = acc;
                }
            });
        }
        _ => {
            return Err(Error::Invalid(format!(
                "|Rm|^2 only implemented for flow dimensions 2 and 3, got {dim}"
            )))
        }
    }
    Ok(out)
}

/// Full curvature of a metric: `(R_ij, R, |Rm|^2)` for dims 2 and 3.
pub fn ricci(
    h: &SymTensorField,
    h_inv: &SymTensorField,
    gamma: &ChristoffelField,
    order: StencilOrder,
) -> Result<(SymTensorField, ScalarField, ScalarField)> {
    let (ric, scal) = ricci_tensor(h_inv, gamma, order)?;
    let rm2 = riemann_norm_sq(h, h_inv, &ric, &scal)?;
    Ok((ric, scal, rm2))
}

/// Raw partials of a scalar, interleaved comps-fastest.
fn scalar_partials_into(u: &ScalarField, order: StencilOrder, du: &mut VectorField) {
    let grid = u.grid().clone();
    let dim = grid.dim();
    let nn = grid.node_count();
    let mut plane = exec::take_buf(nn);
    for a in 0..dim {
        diff_axis_into(u.values(), 1, &grid, a, order, false, &mut plane);
        let dv = du.values_mut();
        for (node, &p) in plane.iter().enumerate() {
            dv[node * dim + a] = p;
        }
    }
    exec::put_buf(plane);
}

fn scalar_partials(u: &ScalarField, order: StencilOrder) -> VectorField {
    let mut du = VectorField::zeros(u.grid());
    scalar_partials_into(u, order, &mut du);
    du
}

/// Second partials packed like a symmetric tensor: direct stencil on the
/// diagonal, canonical composition off it (bit-exact symmetric).
fn scalar_second_partials(u: &ScalarField, order: StencilOrder) -> Vec<f64> {
    let grid = u.grid().clone();
    let dim = grid.dim();
    let nsym = sym_len(dim);
    let nn = grid.node_count();
    let mut d2u = exec::take_buf(nn * nsym);
    let mut plane = exec::take_buf(nn);
    let mut first = exec::take_buf(nn);
    for i in 0..dim {
        for j in i..dim {
            if i == j {
                diff_axis_into(u.values(), 1, &grid, i, order, true, &mut plane);
            } else {
                diff_axis_into(u.values(), 1, &grid, j, order, false, &mut first);
                diff_axis_into(&first, 1, &grid, i, order, false, &mut plane);
            }
            let s = sym_index(dim, i, j);
            for (node, &p) in plane.iter().enumerate() {
                d2u[node * nsym + s] = p;
            }
        }
    }
    exec::put_buf(plane);
    exec::put_buf(first);
    d2u
}

fn lap_impl<const DIM: usize, const NSYM: usize>(
    h_inv: &[f64],
    gamma: &[f64],
    du: &[f64],
    d2u: &[f64],
    out: &mut [f64],
) {
    let gcomps = DIM * NSYM;
    exec::fill_nodes(out, 1, |node0, block| {
        for (off, v) in block.iter_mut().enumerate() {
            let node = node0 + off;
            let hin = &h_inv[node * NSYM..(node + 1) * NSYM];
            let gnode = &gamma[node * gcomps..(node + 1) * gcomps];
            let dnode = &du[node * DIM..(node + 1) * DIM];
            let mut acc = 0.0;
            for i in 0..DIM {
                for j in i..DIM {
                    let s = sym::<DIM>(i, j);
                    let mut hess = d2u[node * NSYM + s];
                    for (k, dk) in dnode.iter().enumerate() {
                        hess -= gnode[k * NSYM + s] * dk;
                    }
                    let w = if i == j { 1.0 } else { 2.0 };
                    acc += w * hin[s] * hess;
                }
            }
            *v = acc;
        }
    });
}

/// Lean bundle for the flow right side: raw partials and the
/// Laplace-Beltrami of `u` only.
pub fn scalar_rhs(
    u: &ScalarField,
    h_inv: &SymTensorField,
    gamma: &ChristoffelField,
    order: StencilOrder,
) -> Result<(VectorField, ScalarField)> {
    let mut du = VectorField::zeros(u.grid());
    let mut lap = ScalarField::zeros(u.grid());
    scalar_rhs_into(u, h_inv, gamma, order, &mut du, &mut lap)?;
    Ok((du, lap))
}

pub(crate) fn scalar_rhs_into(
    u: &ScalarField,
    h_inv: &SymTensorField,
    gamma: &ChristoffelField,
    order: StencilOrder,
    du: &mut VectorField,
    lap: &mut ScalarField,
) -> Result<()> {
    same_grid(u.grid(), h_inv.grid())?;
    same_grid(u.grid(), gamma.grid())?;
    let dim = u.grid().dim();
    scalar_partials_into(u, order, du);
    let d2u = scalar_second_partials(u, order);
    dispatch_dim!(
        dim,
        lap_impl(
            h_inv.values(),
            gamma.values(),
            du.values(),
            &d2u,
            lap.values_mut(),
        )
    );
    exec::put_buf(d2u);
    Ok(())
}

/// Covariant derivative bundle of a scalar.
pub struct ScalarOps {
    /// gradient with the index raised, `(grad u)^i = h^ij d_j u`
    pub grad_u: VectorField,
    /// lowered gradient, the raw partials `d_i u`
    pub du: VectorField,
    /// `|grad u|^2 = h^ij d_i u d_j u`
    pub grad_u_norm_sq: ScalarField,
    /// Hessian `(D2 u)_ij = d_i d_j u - Gamma^k_ij d_k u`
    pub hess_u: SymTensorField,
    /// `|D2 u|^2 = h^ik h^jl (D2u)_ij (D2u)_kl`
    pub hess_u_norm_sq: ScalarField,
    /// `Lap_h u = h^ij (D2 u)_ij` (trace identity holds exactly)
    pub lap_u: ScalarField,
}

#[allow(clippy::too_many_arguments)]
fn scalar_full_impl<const DIM: usize, const NSYM: usize>(
    h_inv: &[f64],
    gamma: &[f64],
    du: &[f64],
    d2u: &[f64],
    hess: &mut [f64],
    grad: &mut [f64],
    gsq: &mut [f64],
    hsq: &mut [f64],
    lap: &mut [f64],
) {
    let gcomps = DIM * NSYM;
    exec::fill_nodes(hess, NSYM, |node0, block| {
        for (off, hnode) in block.chunks_exact_mut(NSYM).enumerate() {
            let node = node0 + off;
            let gnode = &gamma[node * gcomps..(node + 1) * gcomps];
            let dnode = &du[node * DIM..(node + 1) * DIM];
            for (s, hval) in hnode.iter_mut().enumerate() {
                let mut acc = d2u[node * NSYM + s];
                for (k, dk) in dnode.iter().enumerate() {
                    acc -= gnode[k * NSYM + s] * dk;
                }
                *hval = acc;
            }
        }
    });
    exec::fill_nodes(grad, DIM, |node0, block| {
        for (off, gnode) in block.chunks_exact_mut(DIM).enumerate() {
            let node = node0 + off;
            let hin = &h_inv[node * NSYM..(node + 1) * NSYM];
            let dnode = &du[node * DIM..(node + 1) * DIM];
            for (i, g) in gnode.iter_mut().enumerate() {
                let mut acc = 0.0;
                for (j, dj) in dnode.iter().enumerate() {
                    acc += hin[sym::<DIM>(i, j)] * dj;
                }
                *g = acc;
            }
        }
    });
    let grad_ro: &[f64] = grad;
    exec::fill_nodes(gsq, 1, |node0, block| {
        for (off, v) in block.iter_mut().enumerate() {
            let node = node0 + off;
            let mut acc = 0.0;
            for i in 0..DIM {
                acc += grad_ro[node * DIM + i] * du[node * DIM + i];
            }
            *v = acc;
        }
    });
    let hess_ro: &[f64] = hess;
    exec::fill_nodes(lap, 1, |node0, block| {
        for (off, v) in block.iter_mut().enumerate() {
            let node = node0 + off;
            let hin = &h_inv[node * NSYM..(node + 1) * NSYM];
            let hs = &hess_ro[node * NSYM..(node + 1) * NSYM];
            let mut acc = 0.0;
            for i in 0..DIM {
                acc += hin[sym::<DIM>(i, i)] * hs[sym::<DIM>(i, i)];
                for j in (i + 1)..DIM {
                    acc += 2.0 * hin[sym::<DIM>(i, j)] * hs[sym::<DIM>(i, j)];
                }
            }
            *v = acc;
        }
    });
    exec::fill_nodes(hsq, 1, |node0, block| {
        for (off, v) in block.iter_mut().enumerate() {
            let node = node0 + off;
            let hin = &h_inv[node * NSYM..(node + 1) * NSYM];
            let hs = &hess_ro[node * NSYM..(node + 1) * NSYM];
            // raise one slot then contract against the lowered Hessian
            let mut acc = 0.0;
            for i in 0..DIM {
                for j in 0..DIM {
                    let mut raised = 0.0;
                    for k in 0..DIM {
                        for l in 0..DIM {
                            raised += hin[sym::<DIM>(i, k)]
                                * hin[sym::<DIM>(j, l)]
                                * hs[sym::<DIM>(k, l)];
                        }
                    }
                    acc += raised * hs[sym::<DIM>(i, j)];
                }
            }
            *v = acc;
        }
    });
}

pub fn scalar_ops(
    u: &ScalarField,
    h_inv: &SymTensorField,
    gamma: &ChristoffelField,
    order: StencilOrder,
) -> Result<ScalarOps> {
    same_grid(u.grid(), h_inv.grid())?;
    same_grid(u.grid(), gamma.grid())?;
    let grid = u.grid().clone();
    let dim = grid.dim();
    let du = scalar_partials(u, order);
    let d2u = scalar_second_partials(u, order);

    let mut hess_u = SymTensorField::zeros(&grid);
    let mut grad_u = VectorField::zeros(&grid);
    let mut grad_u_norm_sq = ScalarField::zeros(&grid);
    let mut hess_u_norm_sq = ScalarField::zeros(&grid);
    let mut lap_u = ScalarField::zeros(&grid);
    dispatch_dim!(
        dim,
        scalar_full_impl(
            h_inv.values(),
            gamma.values(),
            du.values(),
            &d2u,
            hess_u.values_mut(),
            grad_u.values_mut(),
            grad_u_norm_sq.values_mut(),
            hess_u_norm_sq.values_mut(),
            lap_u.values_mut(),
        )
    );

    Ok(ScalarOps {
        grad_u,
        du,
        grad_u_norm_sq,
        hess_u,
        hess_u_norm_sq,
        lap_u,
    })
}

/// `Lap_h f = h^ij (d_i d_j f - Gamma^k_ij d_k f)` for an arbitrary scalar.
pub fn laplace_beltrami(
    f: &ScalarField,
    h_inv: &SymTensorField,
    gamma: &ChristoffelField,
    order: StencilOrder,
) -> Result<ScalarField> {
    let (_, lap) = scalar_rhs(f, h_inv, gamma, order)?;
    Ok(lap)
}

/// Every derived geometric quantity of one `(h, u)` state.
pub struct GeometryCache {
    pub h_inv: SymTensorField,
    pub christoffel: ChristoffelField,
    pub ricci: SymTensorField,
    pub scalar_curv: ScalarField,
    pub riemann_norm_sq: ScalarField,
    pub grad_u: VectorField,
    pub du: VectorField,
    pub grad_u_norm_sq: ScalarField,
    pub hess_u: SymTensorField,
    pub hess_u_norm_sq: ScalarField,
    pub lap_u: ScalarField,
    pub s_tensor: SymTensorField,
    pub s_scalar: ScalarField,
}

fn s_tensor_impl<const DIM: usize, const NSYM: usize>(
    ric: &[f64],
    du: &[f64],
    out: &mut [f64],
) {
    exec::fill_nodes(out, NSYM, |node0, block| {
        for (off, snode) in block.chunks_exact_mut(NSYM).enumerate() {
            let node = node0 + off;
            let dnode = &du[node * DIM..(node + 1) * DIM];
            for i in 0..DIM {
                for j in i..DIM {
                    let s = sym::<DIM>(i, j);
                    snode[s] = ric[node * NSYM + s] - dnode[i] * dnode[j];
                }
            }
        }
    });
}

/// Build the full cache. The SPD floor is validated on entry; the first
/// failing sub-operation aborts with context.
pub fn build_cache(
    h: &SymTensorField,
    u: &ScalarField,
    order: StencilOrder,
    lambda_min: f64,
) -> Result<GeometryCache> {
    same_grid(h.grid(), u.grid())?;
    let dim = h.grid().dim();
    let h_inv = inverse_metric(h, lambda_min)?;
    let gamma = christoffel(h, &h_inv, order)?;
    let (ric, scal, rm2) = ricci(h, &h_inv, &gamma, order)?;
    let ops = scalar_ops(u, &h_inv, &gamma, order)?;

    let mut s_tensor = SymTensorField::zeros(h.grid());
    dispatch_dim!(
        dim,
        s_tensor_impl(ric.values(), ops.du.values(), s_tensor.values_mut())
    );
    let mut s_scalar = ScalarField::zeros(h.grid());
    {
        let sv = scal.values();
        let gv = ops.grad_u_norm_sq.values();
        exec::fill_nodes(s_scalar.values_mut(), 1, |node0, block| {
            for (off, v) in block.iter_mut().enumerate() {
                let node = node0 + off;
                *v = sv[node] - gv[node];
            }
        });
    }

    Ok(GeometryCache {
        h_inv,
        christoffel: gamma,
        ricci: ric,
        scalar_curv: scal,
        riemann_norm_sq: rm2,
        grad_u: ops.grad_u,
        du: ops.du,
        grad_u_norm_sq: ops.grad_u_norm_sq,
        hess_u: ops.hess_u,
        hess_u_norm_sq: ops.hess_u_norm_sq,
        lap_u: ops.lap_u,
        s_tensor,
        s_scalar,
    })
}

impl GeometryCache {
    /// Check the cache's internal identities; used by tests and the
    /// fixed-point acceptance run.
    pub fn validate(&self, h: &SymTensorField) -> Result<()> {
        let grid = h.grid();
        let dim = grid.dim();
        let nsym = sym_len(dim);
        for node in 0..grid.node_count() {
            let hm = smat::unpack(dim, h.node(node));
            let him = smat::unpack(dim, self.h_inv.node(node));
            for i in 0..dim {
                for j in 0..dim {
                    let mut acc = 0.0;
                    for k in 0..dim {
                        acc += hm[i][k] * him[k][j];
                    }
                    let want = if i == j { 1.0 } else { 0.0 };
                    if (acc - want).abs() > 1e-10 {
                        return Err(Error::Invalid(format!(
                            "h * h_inv deviates from identity at node {node}: ({i},{j}) = {acc}"
                        )));
                    }
                }
            }
            // trace of the Hessian is the Laplacian
            let mut tr = 0.0;
            for i in 0..dim {
                for j in 0..dim {
                    tr += him[i][j] * self.hess_u.node(node)[sym_index(dim, i, j)];
                }
            }
            let lap = self.lap_u.at(node);
            if (tr - lap).abs() > 1e-10 * (1.0 + lap.abs()) {
                return Err(Error::Invalid(format!(
                    "tr(D2u) != lap u at node {node}: {tr} vs {lap}"
                )));
            }
            // S decompositions are exact compositions
            for s in 0..nsym {
                let (i, j) = unflatten(dim, s);
                let want = self.ricci.node(node)[s]
                    - self.du.comp(node, i) * self.du.comp(node, j);
                if self.s_tensor.node(node)[s] != want {
                    return Err(Error::Invalid(format!("s_tensor not composed at {node}")));
                }
            }
            let want = self.scalar_curv.at(node) - self.grad_u_norm_sq.at(node);
            if self.s_scalar.at(node) != want {
                return Err(Error::Invalid(format!("s_scalar not composed at {node}")));
            }
            if dim == 2 {
                let r2 = self.scalar_curv.at(node).powi(2);
                if (self.riemann_norm_sq.at(node) - r2).abs() > 1e-8 * (1.0 + r2) {
                    return Err(Error::Invalid(format!(
                        "|Rm|^2 != R^2 in dim 2 at node {node}"
                    )));
                }
            }
        }
        Ok(())
    }
}

fn unflatten(dim: usize, s: usize) -> (usize, usize) {
    for i in 0..dim {
        for j in i..dim {
            if sym_index(dim, i, j) == s {
                return (i, j);
            }
        }
    }
    unreachable!()
}
