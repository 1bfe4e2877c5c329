//! Uniform periodic grids (flat tori) and finite-difference stencils.
//!
//! The flow lives on tori of dimension 2 or 3; a dimension-4 grid exists
//! only as the product of a base grid with a fiber circle (see
//! [`PeriodicGrid::product`]), which the warped-metric cross-check needs.
//!
//! Storage convention for all sampled fields: one `f64` block per node in
//! row-major node order (last axis fastest), components fastest-varying
//! within a node. This is also the checkpoint wire order.

use crate::error::{Error, Result};
use crate::exec;

pub const MAX_DIM: usize = 4;

/// Discrete flat torus: per-axis node counts and physical periods.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodicGrid {
    dim: usize,
    sizes: [usize; MAX_DIM],
    periods: [f64; MAX_DIM],
    spacings: [f64; MAX_DIM],
    strides: [usize; MAX_DIM],
    node_count: usize,
}

impl PeriodicGrid {
    /// Grid for the flow base manifold; dimension 2 or 3, sizes >= 8.
    pub fn new(sizes: &[usize], periods: &[f64]) -> Result<Self> {
        if !(2..=3).contains(&sizes.len()) {
            return Err(Error::InvalidGrid(format!(
                "dimension must be 2 or 3, got {}",
                sizes.len()
            )));
        }
        Self::build(sizes, periods)
    }

    /// Product of a base grid with a fiber circle; may reach dimension 4.
    pub fn product(base: &PeriodicGrid, fiber_size: usize, fiber_period: f64) -> Result<Self> {
        if base.dim + 1 > MAX_DIM {
            return Err(Error::InvalidGrid(format!(
                "product grid dimension {} exceeds {}",
                base.dim + 1,
                MAX_DIM
            )));
        }
        let mut sizes = base.sizes_vec();
        sizes.push(fiber_size);
        let mut periods = base.periods_vec();
        periods.push(fiber_period);
        Self::build(&sizes, &periods)
    }

    fn build(sizes: &[usize], periods: &[f64]) -> Result<Self> {
        let dim = sizes.len();
        if periods.len() != dim {
            return Err(Error::InvalidGrid(format!(
                "{} sizes but {} periods",
                dim,
                periods.len()
            )));
        }
        let mut g = PeriodicGrid {
            dim,
            sizes: [1; MAX_DIM],
            periods: [1.0; MAX_DIM],
            spacings: [1.0; MAX_DIM],
            strides: [0; MAX_DIM],
            node_count: 1,
        };
        for a in 0..dim {
            if sizes[a] < 8 {
                return Err(Error::InvalidGrid(format!(
                    "axis {} has {} nodes, need at least 8",
                    a, sizes[a]
                )));
            }
            if !(periods[a] > 0.0 && periods[a].is_finite()) {
                return Err(Error::InvalidGrid(format!(
                    "axis {} period {} must be positive and finite",
                    a, periods[a]
                )));
            }
            g.sizes[a] = sizes[a];
            g.periods[a] = periods[a];
            g.spacings[a] = periods[a] / sizes[a] as f64;
            g.node_count *= sizes[a];
        }
        let mut stride = 1;
        for a in (0..dim).rev() {
            g.strides[a] = stride;
            stride *= g.sizes[a];
        }
        Ok(g)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes[..self.dim]
    }

    pub fn periods(&self) -> &[f64] {
        &self.periods[..self.dim]
    }

    pub fn spacings(&self) -> &[f64] {
        &self.spacings[..self.dim]
    }

    pub fn strides(&self) -> &[usize] {
        &self.strides[..self.dim]
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn min_spacing(&self) -> f64 {
        self.spacings[..self.dim]
            .iter()
            .fold(f64::INFINITY, |m, &s| m.min(s))
    }

    fn sizes_vec(&self) -> Vec<usize> {
        self.sizes().to_vec()
    }

    fn periods_vec(&self) -> Vec<f64> {
        self.periods().to_vec()
    }

    /// Flat node index of integer coordinates (assumed in range).
    pub fn node_index(&self, coords: &[usize]) -> usize {
        let mut idx = 0;
        for a in 0..self.dim {
            debug_assert!(coords[a] < self.sizes[a]);
            idx += coords[a] * self.strides[a];
        }
        idx
    }

    /// Integer coordinates of a flat node index.
    pub fn coords(&self, mut idx: usize) -> [usize; MAX_DIM] {
        let mut c = [0; MAX_DIM];
        for a in 0..self.dim {
            c[a] = idx / self.strides[a];
            idx %= self.strides[a];
        }
        c
    }

    /// Physical position of a node, `x_a = c_a * spacing_a`.
    pub fn position(&self, coords: &[usize]) -> [f64; MAX_DIM] {
        let mut x = [0.0; MAX_DIM];
        for a in 0..self.dim {
            x[a] = coords[a] as f64 * self.spacings[a];
        }
        x
    }

    fn check_axis(&self, axis: usize) -> Result<()> {
        if axis >= self.dim {
            Err(Error::AxisOutOfRange {
                axis,
                dim: self.dim,
            })
        } else {
            Ok(())
        }
    }
}

pub(crate) fn sym_len(dim: usize) -> usize {
    dim * (dim + 1) / 2
}

/// Packed index of the (i, j) component of a symmetric tensor
/// (upper triangle, row-major).
pub fn sym_index(dim: usize, i: usize, j: usize) -> usize {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    debug_assert!(j < dim);
    i * dim - i * (i + 1) / 2 + j
}

fn check_finite(values: &[f64], what: &'static str, comps: usize) -> Result<()> {
    for (k, v) in values.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::NonFinite {
                what,
                node: k / comps,
            });
        }
    }
    Ok(())
}

macro_rules! field_common {
    ($t:ident, $what:expr) => {
        impl $t {
            pub fn grid(&self) -> &PeriodicGrid {
                &self.grid
            }

            pub fn values(&self) -> &[f64] {
                &self.values
            }

            pub fn values_mut(&mut self) -> &mut [f64] {
                &mut self.values
            }

            pub fn comps(&self) -> usize {
                self.comps
            }

            /// Component slice of one node.
            pub fn node(&self, node: usize) -> &[f64] {
                &self.values[node * self.comps..(node + 1) * self.comps]
            }

            pub fn validate_finite(&self) -> Result<()> {
                check_finite(&self.values, $what, self.comps)
            }
        }
    };
}

/// One real value per node.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: PeriodicGrid,
    comps: usize,
    values: Vec<f64>,
}

field_common!(ScalarField, "scalar field");

impl ScalarField {
    pub fn zeros(grid: &PeriodicGrid) -> Self {
        ScalarField {
            grid: grid.clone(),
            comps: 1,
            values: vec![0.0; grid.node_count()],
        }
    }

    pub fn constant(grid: &PeriodicGrid, c: f64) -> Self {
        ScalarField {
            grid: grid.clone(),
            comps: 1,
            values: vec![c; grid.node_count()],
        }
    }

    pub fn from_values(grid: &PeriodicGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.node_count() {
            return Err(Error::GridMismatch(format!(
                "{} values for {} nodes",
                values.len(),
                grid.node_count()
            )));
        }
        check_finite(&values, "scalar field", 1)?;
        Ok(ScalarField {
            grid: grid.clone(),
            comps: 1,
            values,
        })
    }

    /// Sample a closed-form function of position.
    pub fn from_fn(grid: &PeriodicGrid, f: impl Fn(&[f64]) -> f64 + Sync) -> Self {
        let mut out = ScalarField::zeros(grid);
        let g = grid.clone();
        exec::fill_nodes(&mut out.values, 1, |node0, block| {
            for (off, v) in block.iter_mut().enumerate() {
                let c = g.coords(node0 + off);
                *v = f(&g.position(&c[..g.dim()])[..g.dim()]);
            }
        });
        out
    }

    pub fn at(&self, node: usize) -> f64 {
        self.values[node]
    }
}

/// `dim` coordinate components per node (index up unless stated).
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    grid: PeriodicGrid,
    comps: usize,
    values: Vec<f64>,
}

field_common!(VectorField, "vector field");

impl VectorField {
    pub fn zeros(grid: &PeriodicGrid) -> Self {
        VectorField {
            grid: grid.clone(),
            comps: grid.dim(),
            values: vec![0.0; grid.node_count() * grid.dim()],
        }
    }

    pub fn comp(&self, node: usize, k: usize) -> f64 {
        self.values[node * self.comps + k]
    }
}

/// `dim (dim+1) / 2` packed components per node; symmetric by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct SymTensorField {
    grid: PeriodicGrid,
    comps: usize,
    values: Vec<f64>,
}

field_common!(SymTensorField, "symmetric tensor field");

impl SymTensorField {
    pub fn zeros(grid: &PeriodicGrid) -> Self {
        let comps = sym_len(grid.dim());
        SymTensorField {
            grid: grid.clone(),
            comps,
            values: vec![0.0; grid.node_count() * comps],
        }
    }

    /// Identity metric (Kronecker delta at every node).
    pub fn identity(grid: &PeriodicGrid) -> Self {
        let mut f = Self::zeros(grid);
        let dim = grid.dim();
        for node in 0..grid.node_count() {
            for i in 0..dim {
                f.values[node * f.comps + sym_index(dim, i, i)] = 1.0;
            }
        }
        f
    }

    pub fn from_values(grid: &PeriodicGrid, values: Vec<f64>) -> Result<Self> {
        let comps = sym_len(grid.dim());
        if values.len() != grid.node_count() * comps {
            return Err(Error::GridMismatch(format!(
                "{} values for {} nodes x {} components",
                values.len(),
                grid.node_count(),
                comps
            )));
        }
        check_finite(&values, "symmetric tensor field", comps)?;
        Ok(SymTensorField {
            grid: grid.clone(),
            comps,
            values,
        })
    }

    /// Sample a closed-form symmetric tensor; `f(position, out)` fills the
    /// packed upper triangle.
    pub fn from_fn(grid: &PeriodicGrid, f: impl Fn(&[f64], &mut [f64]) + Sync) -> Self {
        let mut out = Self::zeros(grid);
        let comps = out.comps;
        let g = grid.clone();
        exec::fill_nodes(&mut out.values, comps, |node0, block| {
            for (off, comp_out) in block.chunks_exact_mut(comps).enumerate() {
                let c = g.coords(node0 + off);
                f(&g.position(&c[..g.dim()])[..g.dim()], comp_out);
            }
        });
        out
    }

    pub fn comp(&self, node: usize, i: usize, j: usize) -> f64 {
        self.values[node * self.comps + sym_index(self.grid.dim(), i, j)]
    }
}

/// Connection coefficients: `dim * sym_len(dim)` components per node,
/// packed as `k * sym_len + sym_index(i, j)` for the symbol with upper
/// index `k` and symmetric lower pair `(i, j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChristoffelField {
    grid: PeriodicGrid,
    comps: usize,
    values: Vec<f64>,
}

field_common!(ChristoffelField, "christoffel field");

impl ChristoffelField {
    pub fn zeros(grid: &PeriodicGrid) -> Self {
        let comps = grid.dim() * sym_len(grid.dim());
        ChristoffelField {
            grid: grid.clone(),
            comps,
            values: vec![0.0; grid.node_count() * comps],
        }
    }

    pub fn comp(&self, node: usize, k: usize, i: usize, j: usize) -> f64 {
        let dim = self.grid.dim();
        self.values[node * self.comps + k * sym_len(dim) + sym_index(dim, i, j)]
    }
}

/// Central-difference stencil order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StencilOrder {
    Two,
    Four,
}

impl StencilOrder {
    pub fn as_u32(self) -> u32 {
        match self {
            StencilOrder::Two => 2,
            StencilOrder::Four => 4,
        }
    }

    pub fn from_u32(v: u32) -> Result<Self> {
        match v {
            2 => Ok(StencilOrder::Two),
            4 => Ok(StencilOrder::Four),
            _ => Err(Error::Invalid(format!("stencil order must be 2 or 4, got {v}"))),
        }
    }
}

/// Difference-form stencil kernels. Differences are taken before scaling,
/// so constant input yields an exact zero (first derivative) and exact
/// cancellation (second).
trait RowKernel: Copy + Sync {
    const RADIUS: usize;
    /// value at flat offset `x` of a cyclic block, taps at `x +- k*stride`
    /// guaranteed in range (interior points)
    fn flat(self, f: &[f64], x: usize, stride: usize) -> f64;
    /// wrapped-row form: `taps[k]` is the base offset of the row at axis
    /// offset `k - RADIUS`
    fn row(self, f: &[f64], taps: &[usize; 5], q: usize) -> f64;
}

#[derive(Clone, Copy)]
struct First2(f64);
#[derive(Clone, Copy)]
struct First4(f64);
#[derive(Clone, Copy)]
struct Second2(f64);
#[derive(Clone, Copy)]
struct Second4(f64);

impl RowKernel for First2 {
    const RADIUS: usize = 1;
    #[inline(always)]
    fn flat(self, f: &[f64], x: usize, stride: usize) -> f64 {
        self.0 * (f[x + stride] - f[x - stride])
    }
    #[inline(always)]
    fn row(self, f: &[f64], taps: &[usize; 5], q: usize) -> f64 {
        self.0 * (f[taps[2] + q] - f[taps[0] + q])
    }
}

impl RowKernel for First4 {
    const RADIUS: usize = 2;
    #[inline(always)]
    fn flat(self, f: &[f64], x: usize, stride: usize) -> f64 {
        self.0
            * (8.0 * (f[x + stride] - f[x - stride]) - (f[x + 2 * stride] - f[x - 2 * stride]))
    }
    #[inline(always)]
    fn row(self, f: &[f64], taps: &[usize; 5], q: usize) -> f64 {
        self.0 * (8.0 * (f[taps[3] + q] - f[taps[1] + q]) - (f[taps[4] + q] - f[taps[0] + q]))
    }
}

impl RowKernel for Second2 {
    const RADIUS: usize = 1;
    #[inline(always)]
    fn flat(self, f: &[f64], x: usize, stride: usize) -> f64 {
        let f0 = f[x];
        self.0 * ((f[x + stride] - f0) + (f[x - stride] - f0))
    }
    #[inline(always)]
    fn row(self, f: &[f64], taps: &[usize; 5], q: usize) -> f64 {
        let f0 = f[taps[1] + q];
        self.0 * ((f[taps[2] + q] - f0) + (f[taps[0] + q] - f0))
    }
}

impl RowKernel for Second4 {
    const RADIUS: usize = 2;
    #[inline(always)]
    fn flat(self, f: &[f64], x: usize, stride: usize) -> f64 {
        let f0 = f[x];
        self.0
            * (16.0 * ((f[x + stride] - f0) + (f[x - stride] - f0))
                - ((f[x + 2 * stride] - f0) + (f[x - 2 * stride] - f0)))
    }
    #[inline(always)]
    fn row(self, f: &[f64], taps: &[usize; 5], q: usize) -> f64 {
        let f0 = f[taps[2] + q];
        self.0
            * (16.0 * ((f[taps[3] + q] - f0) + (f[taps[1] + q] - f0))
                - ((f[taps[4] + q] - f0) + (f[taps[0] + q] - f0)))
    }
}

fn wrapped_taps(c: usize, n: usize, r: usize, stride: usize) -> [usize; 5] {
    let mut taps = [0usize; 5];
    for (s, tap) in taps.iter_mut().enumerate().take(2 * r + 1) {
        let off = s as isize - r as isize;
        let mut cc = c as isize + off;
        if cc < 0 {
            cc += n as isize;
        } else if cc >= n as isize {
            cc -= n as isize;
        }
        *tap = cc as usize * stride;
    }
    taps
}

/// One cyclic block: flat vectorizable loop over the interior, wrapped row
/// handling only at the `2 r` boundary rows.
#[inline]
fn apply_block<K: RowKernel>(k: K, f: &[f64], n: usize, stride: usize, out: &mut [f64]) {
    let r = K::RADIUS;
    let (lo, hi) = (r * stride, (n - r) * stride);
    for (x, o) in out[lo..hi].iter_mut().enumerate() {
        *o = k.flat(f, lo + x, stride);
    }
    for c in (0..r).chain(n - r..n) {
        let taps = wrapped_taps(c, n, r, stride);
        for (q, o) in out[c * stride..(c + 1) * stride].iter_mut().enumerate() {
            *o = k.row(f, &taps, q);
        }
    }
}

fn diff_axis_generic<K: RowKernel>(
    k: K,
    values: &[f64],
    n: usize,
    stride: usize,
    out: &mut [f64],
) {
    let r = K::RADIUS;
    let block = n * stride;
    if block == out.len() {
        // single cycle (axis 0): parallelize over interior slabs, then the
        // wrapped boundary rows
        let (lo, hi) = (r * stride, (n - r) * stride);
        exec::chunks_apply(&mut out[lo..hi], 1 << 12, exec::DIFF_PAR_MIN, |ci, piece| {
            let x0 = lo + ci * (1 << 12);
            for (x, o) in piece.iter_mut().enumerate() {
                *o = k.flat(values, x0 + x, stride);
            }
        });
        for c in (0..r).chain(n - r..n) {
            let taps = wrapped_taps(c, n, r, stride);
            for (q, o) in out[c * stride..(c + 1) * stride].iter_mut().enumerate() {
                *o = k.row(values, &taps, q);
            }
        }
        return;
    }
    exec::chunks_apply(out, block, exec::DIFF_PAR_MIN, |bi, ob| {
        let fb = &values[bi * block..(bi + 1) * block];
        apply_block(k, fb, n, stride, ob);
    });
}

/// Apply a periodic central-difference stencil along `axis` to a
/// multi-component field stored comps-fastest. Writes into `out`.
///
/// The grid is traversed in axis-aligned cyclic blocks: the interior is a
/// contiguous stream with taps at `+- stride`, only the `2 r` boundary rows
/// wrap.
pub(crate) fn diff_axis_into(
    values: &[f64],
    comps: usize,
    grid: &PeriodicGrid,
    axis: usize,
    order: StencilOrder,
    second: bool,
    out: &mut [f64],
) {
    debug_assert_eq!(values.len(), grid.node_count() * comps);
    debug_assert_eq!(out.len(), values.len());
    let n = grid.sizes()[axis];
    let stride = grid.strides()[axis] * comps;
    let h = grid.spacings()[axis];
    match (order, second) {
        (StencilOrder::Two, false) => {
            diff_axis_generic(First2(1.0 / (2.0 * h)), values, n, stride, out)
        }
        (StencilOrder::Four, false) => {
            diff_axis_generic(First4(1.0 / (12.0 * h)), values, n, stride, out)
        }
        (StencilOrder::Two, true) => {
            diff_axis_generic(Second2(1.0 / (h * h)), values, n, stride, out)
        }
        (StencilOrder::Four, true) => {
            diff_axis_generic(Second4(1.0 / (12.0 * h * h)), values, n, stride, out)
        }
    }
}

/// d f / d x_axis by periodic central differences.
pub fn partial_derivative(
    f: &ScalarField,
    axis: usize,
    order: StencilOrder,
) -> Result<ScalarField> {
    f.grid.check_axis(axis)?;
    let mut out = ScalarField::zeros(&f.grid);
    diff_axis_into(&f.values, 1, &f.grid, axis, order, false, &mut out.values);
    Ok(out)
}

/// Mixed/repeated second partial. Equal axes use the direct second-derivative
/// stencil; distinct axes compose first derivatives in a canonical order, so
/// the result is bit-exactly symmetric in `(axis_a, axis_b)`.
pub fn second_partial(
    f: &ScalarField,
    axis_a: usize,
    axis_b: usize,
    order: StencilOrder,
) -> Result<ScalarField> {
    f.grid.check_axis(axis_a)?;
    f.grid.check_axis(axis_b)?;
    let mut out = ScalarField::zeros(&f.grid);
    if axis_a == axis_b {
        diff_axis_into(&f.values, 1, &f.grid, axis_a, order, true, &mut out.values);
    } else {
        let (lo, hi) = if axis_a < axis_b {
            (axis_a, axis_b)
        } else {
            (axis_b, axis_a)
        };
        let mut tmp = vec![0.0; f.values.len()];
        diff_axis_into(&f.values, 1, &f.grid, hi, order, false, &mut tmp);
        diff_axis_into(&tmp, 1, &f.grid, lo, order, false, &mut out.values);
    }
    Ok(out)
}

/// Max of |values| over nodes. Sequential scan: reductions stay off the
/// parallel path so results do not depend on chunking.
pub fn sup_norm(f: &ScalarField) -> f64 {
    f.values.iter().fold(0.0f64, |m, &v| m.max(v.abs()))
}

/// max - min over nodes.
pub fn osc(f: &ScalarField) -> f64 {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &v in &f.values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    hi - lo
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::TAU;

    fn grid2(n: usize) -> PeriodicGrid {
        PeriodicGrid::new(&[n, n], &[1.0, 1.0]).unwrap()
    }

    #[test]
    fn grid_invariants() {
        let g = PeriodicGrid::new(&[32, 16], &[1.0, 2.0]).unwrap();
        assert_eq!(g.dim(), 2);
        assert_eq!(g.node_count(), 512);
        assert_eq!(g.spacings(), &[1.0 / 32.0, 2.0 / 16.0]);
        assert_eq!(g.strides(), &[16, 1]);
        let c = g.coords(g.node_index(&[5, 7]));
        assert_eq!(&c[..2], &[5, 7]);

        assert!(PeriodicGrid::new(&[32], &[1.0]).is_err());
        assert!(PeriodicGrid::new(&[32, 32, 32, 32], &[1.0; 4]).is_err());
        assert!(PeriodicGrid::new(&[7, 32], &[1.0, 1.0]).is_err());
        assert!(PeriodicGrid::new(&[8, 8], &[0.0, 1.0]).is_err());

        let g3 = PeriodicGrid::new(&[8, 8, 8], &[1.0; 3]).unwrap();
        let g4 = PeriodicGrid::product(&g3, 8, 1.0).unwrap();
        assert_eq!(g4.dim(), 4);
        assert!(PeriodicGrid::product(&g4, 8, 1.0).is_err());
    }

    #[test]
    fn sym_index_layout() {
        assert_eq!(sym_index(2, 0, 0), 0);
        assert_eq!(sym_index(2, 0, 1), 1);
        assert_eq!(sym_index(2, 1, 0), 1);
        assert_eq!(sym_index(2, 1, 1), 2);
        assert_eq!(sym_index(3, 2, 2), 5);
        assert_eq!(sym_index(4, 3, 3), 9);
        // bijective over the upper triangle
        for dim in 2..=4 {
            let mut seen = vec![false; sym_len(dim)];
            for i in 0..dim {
                for j in i..dim {
                    let s = sym_index(dim, i, j);
                    assert!(!seen[s]);
                    seen[s] = true;
                }
            }
            assert!(seen.iter().all(|&b| b));
        }
    }

    #[test]
    fn derivative_of_constant_is_zero() {
        let g = grid2(16);
        let f = ScalarField::constant(&g, 5.0);
        for axis in 0..2 {
            for order in [StencilOrder::Two, StencilOrder::Four] {
                let d = partial_derivative(&f, axis, order).unwrap();
                assert!(d.values().iter().all(|&v| v == 0.0));
                let d2 = second_partial(&f, axis, axis, order).unwrap();
                assert!(d2.values().iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn derivative_along_independent_axis_is_zero() {
        let g = grid2(32);
        let f = ScalarField::from_fn(&g, |x| (TAU * x[0]).sin());
        let d = partial_derivative(&f, 1, StencilOrder::Two).unwrap();
        assert!(sup_norm(&d) < 1e-14);
    }

    #[test]
    fn axis_out_of_range() {
        let g = grid2(8);
        let f = ScalarField::zeros(&g);
        assert!(matches!(
            partial_derivative(&f, 2, StencilOrder::Two),
            Err(Error::AxisOutOfRange { axis: 2, dim: 2 })
        ));
    }

    /// Richardson refinement of d/dx sin(2 pi x / L): second-order stencils
    /// shrink the error by ~4 per grid doubling, fourth-order by ~16.
    #[test]
    fn stencil_convergence_rates() {
        let err_at = |n: usize, order: StencilOrder| -> f64 {
            let g = grid2(n);
            let f = ScalarField::from_fn(&g, |x| (TAU * x[0]).sin());
            let d = partial_derivative(&f, 0, order).unwrap();
            let exact = ScalarField::from_fn(&g, |x| TAU * (TAU * x[0]).cos());
            d.values()
                .iter()
                .zip(exact.values())
                .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
        };
        for order in [StencilOrder::Two, StencilOrder::Four] {
            let errs: Vec<f64> = [32, 64, 128].iter().map(|&n| err_at(n, order)).collect();
            for w in errs.windows(2) {
                let ratio = w[0] / w[1];
                let expect = match order {
                    StencilOrder::Two => 4.0,
                    StencilOrder::Four => 16.0,
                };
                assert!(
                    ratio > 0.9 * expect && ratio < 1.1 * expect,
                    "order {:?}: ratio {} vs expected {}",
                    order,
                    ratio,
                    expect
                );
            }
            // the order-2 refinement ratio must sit in [3.6, 4.4]
            if order == StencilOrder::Two {
                for w in errs.windows(2) {
                    let ratio = w[0] / w[1];
                    assert!((3.6..=4.4).contains(&ratio), "ratio {ratio}");
                }
            }
        }
    }

    #[test]
    fn second_partial_matches_eigenfunction() {
        let g = grid2(64);
        let f = ScalarField::from_fn(&g, |x| (TAU * x[0]).sin());
        let d2 = second_partial(&f, 0, 0, StencilOrder::Two).unwrap();
        let mut max_err = 0.0f64;
        for (a, b) in d2.values().iter().zip(f.values()) {
            max_err = max_err.max((a - (-TAU * TAU * b)).abs());
        }
        // relative truncation ~ (2 pi / 64)^2 / 12
        assert!(max_err / (TAU * TAU) < 1e-3, "err {max_err}");
    }

    fn band_limited(g: &PeriodicGrid, seed: u64) -> ScalarField {
        // few fixed Fourier modes, deterministic pseudo-random amplitudes
        let mut s = seed;
        let mut rnd = move || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 33) as f64 / (1u64 << 31) as f64) - 1.0
        };
        let modes: Vec<(f64, f64, f64, f64)> = (0..4)
            .map(|_| (rnd(), rnd(), (2.0 * rnd()).round(), (2.0 * rnd()).round()))
            .collect();
        ScalarField::from_fn(g, move |x| {
            modes
                .iter()
                .map(|&(a, p, kx, ky)| a * (TAU * (kx * x[0] + ky * x[1]) + p).sin())
                .sum()
        })
    }

    #[test]
    fn mixed_partials_commute_bit_exactly() {
        let g = grid2(32);
        let f = band_limited(&g, 7);
        for order in [StencilOrder::Two, StencilOrder::Four] {
            let ab = second_partial(&f, 0, 1, order).unwrap();
            let ba = second_partial(&f, 1, 0, order).unwrap();
            assert_eq!(ab.values(), ba.values());
        }
    }

    #[test]
    fn shift_equivariance() {
        // rotating the data by whole nodes commutes with differentiation
        let g = grid2(16);
        let f = band_limited(&g, 3);
        let shift = |fld: &ScalarField, sx: usize, sy: usize| -> ScalarField {
            let mut out = ScalarField::zeros(&g);
            for i in 0..16 {
                for j in 0..16 {
                    let src = g.node_index(&[i, j]);
                    let dst = g.node_index(&[(i + sx) % 16, (j + sy) % 16]);
                    out.values_mut()[dst] = fld.values()[src];
                }
            }
            out
        };
        for order in [StencilOrder::Two, StencilOrder::Four] {
            let d_then_shift = shift(&partial_derivative(&f, 0, order).unwrap(), 5, 11);
            let shift_then_d = partial_derivative(&shift(&f, 5, 11), 0, order).unwrap();
            assert_eq!(d_then_shift.values(), shift_then_d.values());
        }
    }

    #[test]
    fn sup_and_osc() {
        let g = grid2(16); // divisible by 4, hits extrema of sin
        let c = ScalarField::constant(&g, -3.5);
        assert_eq!(sup_norm(&c), 3.5);
        assert_eq!(osc(&c), 0.0);

        let f = ScalarField::from_fn(&g, |x| (TAU * x[0]).sin());
        assert_eq!(sup_norm(&f), 1.0);
        assert_eq!(osc(&f), 2.0);

        // independent full-scan oracle on an arbitrary field
        let r = band_limited(&g, 11);
        let mut m = 0.0f64;
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for &v in r.values() {
            m = m.max(v.abs());
            lo = lo.min(v);
            hi = hi.max(v);
        }
        assert_eq!(sup_norm(&r), m);
        assert_eq!(osc(&r), hi - lo);
    }

    #[test]
    fn from_values_rejects_non_finite() {
        let g = grid2(8);
        let mut v = vec![0.0; g.node_count()];
        v[5] = f64::NAN;
        assert!(matches!(
            ScalarField::from_values(&g, v),
            Err(Error::NonFinite { node: 5, .. })
        ));
    }

    #[test]
    fn multi_component_diff_matches_scalar_diff() {
        let g = PeriodicGrid::new(&[16, 8, 8], &[1.0, 1.0, 2.0]).unwrap();
        let f0 = band3(&g, 1);
        let f1 = band3(&g, 2);
        // pack two scalars into one 2-comp field
        let mut packed = vec![0.0; g.node_count() * 2];
        for n in 0..g.node_count() {
            packed[2 * n] = f0.values()[n];
            packed[2 * n + 1] = f1.values()[n];
        }
        for axis in 0..3 {
            let mut out = vec![0.0; packed.len()];
            diff_axis_into(&packed, 2, &g, axis, StencilOrder::Four, false, &mut out);
            let d0 = partial_derivative(&f0, axis, StencilOrder::Four).unwrap();
            let d1 = partial_derivative(&f1, axis, StencilOrder::Four).unwrap();
            for n in 0..g.node_count() {
                assert_eq!(out[2 * n], d0.values()[n]);
                assert_eq!(out[2 * n + 1], d1.values()[n]);
            }
        }
    }

    fn band3(g: &PeriodicGrid, seed: u64) -> ScalarField {
        let mut s = seed;
        let mut rnd = move || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 33) as f64 / (1u64 << 31) as f64) - 1.0
        };
        let m: Vec<f64> = (0..6).map(|_| rnd()).collect();
        ScalarField::from_fn(g, move |x| {
            m[0] * (TAU * (x[0] + 2.0 * x[1])).sin()
                + m[1] * (TAU * (x[1] - x[2] / 2.0)).cos()
                + m[2] * (TAU * (x[0] - x[2] / 2.0) + m[3]).sin()
                + m[4] * (TAU * 2.0 * x[0] + m[5]).cos()
        })
    }
}
