//! Per-node linear algebra on small symmetric matrices (dims 2..=4),
//! packed upper-triangle as in [`crate::grid::sym_index`].
//!
//! Everything here is branch-deterministic closed-form arithmetic (plus a
//! fixed-sweep Jacobi for the 4x4 eigenvalue case), so node loops stay
//! bit-reproducible.

use crate::grid::sym_index;

/// Unpack to a full row-major `dim x dim` matrix (dim <= 4).
pub fn unpack(dim: usize, packed: &[f64]) -> [[f64; 4]; 4] {
    let mut m = [[0.0; 4]; 4];
    for i in 0..dim {
        for j in 0..dim {
            m[i][j] = packed[sym_index(dim, i, j)];
        }
    }
    m
}

/// Determinant of a packed symmetric matrix.
pub fn det(dim: usize, p: &[f64]) -> f64 {
    match dim {
        2 => p[0] * p[2] - p[1] * p[1],
        3 => {
            let (a, b, c, d, e, f) = (p[0], p[1], p[2], p[3], p[4], p[5]);
            a * (d * f - e * e) - b * (b * f - c * e) + c * (b * e - c * d)
        }
        4 => {
            let m = unpack(4, p);
            det4(&m)
        }
        _ => unreachable!("unsupported dimension {dim}"),
    }
}

fn det3_full(m: &[[f64; 4]; 4]) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

fn det4(m: &[[f64; 4]; 4]) -> f64 {
    let mut acc = 0.0;
    let mut sign = 1.0;
    for col in 0..4 {
        let mut sub = [[0.0; 4]; 4];
        for (ri, row) in m.iter().enumerate().skip(1) {
            let mut cj = 0;
            for (ci, &v) in row.iter().enumerate().take(4) {
                if ci != col {
                    sub[ri - 1][cj] = v;
                    cj += 1;
                }
            }
        }
        acc += sign * m[0][col] * det3_full(&sub);
        sign = -sign;
    }
    acc
}

/// Inverse of a packed symmetric matrix, packed output.
/// Caller guarantees invertibility (the SPD gate runs first).
pub fn invert(dim: usize, p: &[f64], out: &mut [f64]) {
    match dim {
        2 => {
            let d = p[0] * p[2] - p[1] * p[1];
            out[0] = p[2] / d;
            out[1] = -p[1] / d;
            out[2] = p[0] / d;
        }
        3 => {
            let (a, b, c, dd, e, f) = (p[0], p[1], p[2], p[3], p[4], p[5]);
            let det = a * (dd * f - e * e) - b * (b * f - c * e) + c * (b * e - c * dd);
            out[0] = (dd * f - e * e) / det;
            out[1] = (c * e - b * f) / det;
            out[2] = (b * e - c * dd) / det;
            out[3] = (a * f - c * c) / det;
            out[4] = (b * c - a * e) / det;
            out[5] = (a * dd - b * b) / det;
        }
        4 => {
            let m = unpack(4, p);
            let d = det4(&m);
            // adjugate via 3x3 cofactors; only the upper triangle is stored
            for i in 0..4 {
                for j in i..4 {
                    let mut sub = [[0.0; 4]; 4];
                    let mut ri = 0;
                    for r in 0..4 {
                        if r == j {
                            continue;
                        }
                        let mut ci = 0;
                        for c in 0..4 {
                            if c == i {
                                continue;
                            }
                            sub[ri][ci] = m[r][c];
                            ci += 1;
                        }
                        ri += 1;
                    }
                    let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
                    out[sym_index(4, i, j)] = sign * det3_full(&sub) / d;
                }
            }
        }
        _ => unreachable!("unsupported dimension {dim}"),
    }
}

/// (min, max) eigenvalues of a packed symmetric matrix.
pub fn sym_eig_range(dim: usize, p: &[f64]) -> (f64, f64) {
    match dim {
        2 => {
            let tr = p[0] + p[2];
            let det = p[0] * p[2] - p[1] * p[1];
            let disc = (tr * tr - 4.0 * det).max(0.0).sqrt();
            ((tr - disc) * 0.5, (tr + disc) * 0.5)
        }
        3 => {
            let roots = cubic_roots_sym3(p);
            (
                roots[0].min(roots[1]).min(roots[2]),
                roots[0].max(roots[1]).max(roots[2]),
            )
        }
        4 => {
            let evs = jacobi4(&unpack(4, p));
            (
                evs.iter().copied().fold(f64::INFINITY, f64::min),
                evs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            )
        }
        _ => unreachable!("unsupported dimension {dim}"),
    }
}

/// Eigenvalues of a symmetric 3x3 via the trigonometric closed form.
fn cubic_roots_sym3(p: &[f64]) -> [f64; 3] {
    let (a00, a01, a02, a11, a12, a22) = (p[0], p[1], p[2], p[3], p[4], p[5]);
    let p1 = a01 * a01 + a02 * a02 + a12 * a12;
    if p1 == 0.0 {
        return [a00, a11, a22];
    }
    let q = (a00 + a11 + a22) / 3.0;
    let p2 = (a00 - q).powi(2) + (a11 - q).powi(2) + (a22 - q).powi(2) + 2.0 * p1;
    let pp = (p2 / 6.0).sqrt();
    let inv = 1.0 / pp;
    let b = [
        [(a00 - q) * inv, a01 * inv, a02 * inv],
        [a01 * inv, (a11 - q) * inv, a12 * inv],
        [a02 * inv, a12 * inv, (a22 - q) * inv],
    ];
    let detb = b[0][0] * (b[1][1] * b[2][2] - b[1][2] * b[2][1])
        - b[0][1] * (b[1][0] * b[2][2] - b[1][2] * b[2][0])
        + b[0][2] * (b[1][0] * b[2][1] - b[1][1] * b[2][0]);
    let r = (detb / 2.0).clamp(-1.0, 1.0);
    let phi = r.acos() / 3.0;
    let e1 = q + 2.0 * pp * phi.cos();
    let e3 = q + 2.0 * pp * (phi + 2.0 * std::f64::consts::FRAC_PI_3).cos();
    let e2 = 3.0 * q - e1 - e3;
    [e1, e2, e3]
}

/// Cyclic Jacobi with a fixed sweep count for symmetric 4x4.
fn jacobi4(m: &[[f64; 4]; 4]) -> [f64; 4] {
    let mut a = *m;
    for _ in 0..12 {
        for p in 0..3 {
            for q in (p + 1)..4 {
                let apq = a[p][q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..4 {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..4 {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    [a[0][0], a[1][1], a[2][2], a[3][3]]
}

/// Largest |eigenvalue| of `h_inv * s` (both packed symmetric, `h_inv` from
/// an SPD metric so the product has real spectrum). This is the node-wise
/// operator norm of `s` with respect to the metric.
pub fn mixed_op_norm(dim: usize, h_inv: &[f64], s: &[f64]) -> f64 {
    let hi = unpack(dim, h_inv);
    let sm = unpack(dim, s);
    let mut b = [[0.0; 4]; 4];
    for i in 0..dim {
        for j in 0..dim {
            let mut acc = 0.0;
            for k in 0..dim {
                acc += hi[i][k] * sm[k][j];
            }
            b[i][j] = acc;
        }
    }
    match dim {
        2 => {
            let tr = b[0][0] + b[1][1];
            let det = b[0][0] * b[1][1] - b[0][1] * b[1][0];
            let disc = (tr * tr - 4.0 * det).max(0.0).sqrt();
            let l1 = (tr - disc) * 0.5;
            let l2 = (tr + disc) * 0.5;
            l1.abs().max(l2.abs())
        }
        3 => {
            // char poly x^3 - c2 x^2 + c1 x - c0
            let c2 = b[0][0] + b[1][1] + b[2][2];
            let mut tr_b2 = 0.0;
            for i in 0..3 {
                for j in 0..3 {
                    tr_b2 += b[i][j] * b[j][i];
                }
            }
            let c1 = 0.5 * (c2 * c2 - tr_b2);
            let c0 = b[0][0] * (b[1][1] * b[2][2] - b[1][2] * b[2][1])
                - b[0][1] * (b[1][0] * b[2][2] - b[1][2] * b[2][0])
                + b[0][2] * (b[1][0] * b[2][1] - b[1][1] * b[2][0]);
            let roots = real_cubic_roots(c2, c1, c0);
            roots.iter().fold(0.0f64, |m, r| m.max(r.abs()))
        }
        _ => unreachable!("operator norm only needed for flow dimensions"),
    }
}

/// Real roots of x^3 - c2 x^2 + c1 x - c0 (spectrum known real).
fn real_cubic_roots(c2: f64, c1: f64, c0: f64) -> [f64; 3] {
    let q = c2 / 3.0;
    // depressed cubic t^3 + pt + r with x = t + q
    let p = c1 - c2 * c2 / 3.0;
    let r = -c0 + c1 * q - 2.0 * q * q * q;
    let neg_half_r = -r / 2.0;
    let m = (-p / 3.0).max(0.0);
    let sqrt_m = m.sqrt();
    if sqrt_m == 0.0 {
        // triple root
        return [q, q, q];
    }
    let arg = (neg_half_r / (m * sqrt_m)).clamp(-1.0, 1.0);
    let phi = arg.acos() / 3.0;
    let two_pi_3 = 2.0 * std::f64::consts::FRAC_PI_3;
    [
        q + 2.0 * sqrt_m * phi.cos(),
        q + 2.0 * sqrt_m * (phi - two_pi_3).cos(),
        q + 2.0 * sqrt_m * (phi + two_pi_3).cos(),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::sym_len;

    fn lcg(seed: &mut u64) -> f64 {
        *seed = seed
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        ((*seed >> 33) as f64 / (1u64 << 31) as f64) - 1.0
    }

    /// random SPD matrix via L L^T + eps I
    fn random_spd(dim: usize, seed: &mut u64) -> Vec<f64> {
        let mut l = [[0.0; 4]; 4];
        for i in 0..dim {
            for j in 0..=i {
                l[i][j] = lcg(seed);
            }
            l[i][i] += 2.0;
        }
        let mut p = vec![0.0; sym_len(dim)];
        for i in 0..dim {
            for j in i..dim {
                let mut acc = 0.0;
                for k in 0..dim {
                    acc += l[i][k] * l[j][k];
                }
                p[sym_index(dim, i, j)] = acc + if i == j { 0.01 } else { 0.0 };
            }
        }
        p
    }

    fn mat_mul(dim: usize, a: &[f64], b: &[f64]) -> [[f64; 4]; 4] {
        let (ma, mb) = (unpack(dim, a), unpack(dim, b));
        let mut out = [[0.0; 4]; 4];
        for i in 0..dim {
            for j in 0..dim {
                for k in 0..dim {
                    out[i][j] += ma[i][k] * mb[k][j];
                }
            }
        }
        out
    }

    #[test]
    fn invert_random_spd() {
        let mut seed = 42;
        for dim in 2..=4 {
            for _ in 0..50 {
                let p = random_spd(dim, &mut seed);
                let mut inv = vec![0.0; sym_len(dim)];
                invert(dim, &p, &mut inv);
                let prod = mat_mul(dim, &p, &inv);
                for i in 0..dim {
                    for j in 0..dim {
                        let want = if i == j { 1.0 } else { 0.0 };
                        assert!(
                            (prod[i][j] - want).abs() < 1e-12,
                            "dim {dim}: ({i},{j}) = {}",
                            prod[i][j]
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn eig_range_diagonal() {
        assert_eq!(sym_eig_range(2, &[4.0, 0.0, 1.0]), (1.0, 4.0));
        let (lo, hi) = sym_eig_range(3, &[3.0, 0.0, 0.0, -1.0, 0.0, 2.0]);
        assert!((lo - -1.0).abs() < 1e-12 && (hi - 3.0).abs() < 1e-12);
        let mut p4 = vec![0.0; 10];
        for (i, v) in [5.0, 0.5, 2.0, -3.0].iter().enumerate() {
            p4[sym_index(4, i, i)] = *v;
        }
        let (lo, hi) = sym_eig_range(4, &p4);
        assert!((lo - -3.0).abs() < 1e-10 && (hi - 5.0).abs() < 1e-10);
    }

    #[test]
    fn eig_range_brackets_rayleigh_quotients() {
        let mut seed = 7;
        for dim in 2..=4 {
            for _ in 0..50 {
                let p = random_spd(dim, &mut seed);
                let (lo, hi) = sym_eig_range(dim, &p);
                assert!(lo > 0.0, "SPD matrix must have positive spectrum");
                let m = unpack(dim, &p);
                // Rayleigh quotients of a few vectors lie inside [lo, hi]
                for probe in 0..8u64 {
                    let mut s2 = probe * 123 + 1;
                    let v: Vec<f64> = (0..dim).map(|_| lcg(&mut s2)).collect();
                    let vv: f64 = v.iter().map(|x| x * x).sum();
                    if vv == 0.0 {
                        continue;
                    }
                    let mut q = 0.0;
                    for i in 0..dim {
                        for j in 0..dim {
                            q += v[i] * m[i][j] * v[j];
                        }
                    }
                    q /= vv;
                    assert!(q >= lo - 1e-9 && q <= hi + 1e-9);
                }
                // trace and determinant consistency for dim 2
                if dim == 2 {
                    assert!((lo + hi - (p[0] + p[2])).abs() < 1e-12);
                    assert!((lo * hi - det(2, &p)).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn mixed_op_norm_identity_metric() {
        // with h = id the operator norm is the plain spectral radius
        let s2 = [2.0, 1.0, -1.0];
        let id2 = [1.0, 0.0, 1.0];
        let (lo, hi) = sym_eig_range(2, &s2);
        let want = lo.abs().max(hi.abs());
        assert!((mixed_op_norm(2, &id2, &s2) - want).abs() < 1e-12);

        let s3 = [1.0, 0.2, -0.3, 2.0, 0.1, -4.0];
        let id3 = [1.0, 0.0, 0.0, 1.0, 0.0, 1.0];
        let (lo, hi) = sym_eig_range(3, &s3);
        let want = lo.abs().max(hi.abs());
        assert!((mixed_op_norm(3, &id3, &s3) - want).abs() < 1e-9);
    }

    #[test]
    fn mixed_op_norm_against_cholesky_oracle() {
        // eig(h^-1 s) equals eig(L^-1 s L^-T) with h = L L^T
        let mut seed = 99;
        for dim in 2..=3 {
            for _ in 0..30 {
                let h = random_spd(dim, &mut seed);
                let mut s = vec![0.0; sym_len(dim)];
                for v in s.iter_mut() {
                    *v = lcg(&mut seed);
                }
                let mut h_inv = vec![0.0; sym_len(dim)];
                invert(dim, &h, &mut h_inv);
                let got = mixed_op_norm(dim, &h_inv, &s);

                // Cholesky of h
                let hm = unpack(dim, &h);
                let mut l = [[0.0; 4]; 4];
                for i in 0..dim {
                    for j in 0..=i {
                        let mut acc = hm[i][j];
                        for k in 0..j {
                            acc -= l[i][k] * l[j][k];
                        }
                        if i == j {
                            l[i][i] = acc.sqrt();
                        } else {
                            l[i][j] = acc / l[j][j];
                        }
                    }
                }
                // forward-substitute: w = L^-1 s, then c = w L^-T
                let sm = unpack(dim, &s);
                let mut wmat = [[0.0; 4]; 4];
                for col in 0..dim {
                    for i in 0..dim {
                        let mut acc = sm[i][col];
                        for k in 0..i {
                            acc -= l[i][k] * wmat[k][col];
                        }
                        wmat[i][col] = acc / l[i][i];
                    }
                }
                let mut c = vec![0.0; sym_len(dim)];
                for i in 0..dim {
                    for jj in i..dim {
                        // row i of (w L^-T): solve L c^T = w^T
                        let mut acc = wmat[i][jj];
                        for k in 0..jj {
                            acc -= c_full(&c, dim, i, k) * l[jj][k];
                        }
                        c[sym_index(dim, i, jj)] = acc / l[jj][jj];
                    }
                }
                let (lo, hi) = sym_eig_range(dim, &c);
                let want = lo.abs().max(hi.abs());
                assert!(
                    (got - want).abs() < 1e-8 * (1.0 + want),
                    "dim {dim}: {got} vs {want}"
                );
            }
        }
    }

    fn c_full(c: &[f64], dim: usize, i: usize, j: usize) -> f64 {
        c[sym_index(dim, i, j)]
    }
}
