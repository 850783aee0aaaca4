//! Compressed sparse rows with Jacobi-preconditioned Krylov solvers.
//!
//! Reductions are split into fixed-size chunks whose partial sums are added
//! in order, so results do not depend on the thread count.

use rayon::prelude::*;

use crate::error::{Error, Result};

const CHUNK: usize = 4096;

#[derive(Debug, Clone, Default)]
pub struct Csr {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<u32>,
    pub vals: Vec<f64>,
}

impl Csr {
    /// Build from per-row `(column, value)` lists; duplicate columns in a row
    /// are summed.
    pub fn from_rows(rows: Vec<Vec<(u32, f64)>>) -> Self {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for mut row in rows {
            row.sort_by_key(|e| e.0);
            let mut last = u32::MAX;
            for (c, v) in row {
                if c == last {
                    *vals.last_mut().unwrap() += v;
                } else {
                    cols.push(c);
                    vals.push(v);
                    last = c;
                }
            }
            row_ptr.push(cols.len());
        }
        Csr {
            n,
            row_ptr,
            cols,
            vals,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                (self.row_ptr[i]..self.row_ptr[i + 1])
                    .find(|&k| self.cols[k] as usize == i)
                    .map_or(0.0, |k| self.vals[k])
            })
            .collect()
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        y.par_chunks_mut(CHUNK).enumerate().for_each(|(c, ys)| {
            let base = c * CHUNK;
            for (o, yi) in ys.iter_mut().enumerate() {
                let i = base + o;
                let mut s = 0.0;
                for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                    s += self.vals[k] * x[self.cols[k] as usize];
                }
                *yi = s;
            }
        });
    }

    /// Largest `|a_ij − a_ji|`, for tests.
    pub fn asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.cols[k] as usize;
                let back = (self.row_ptr[j]..self.row_ptr[j + 1])
                    .find(|&m| self.cols[m] as usize == i)
                    .map_or(0.0, |m| self.vals[m]);
                worst = worst.max((self.vals[k] - back).abs());
            }
        }
        worst
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let partial: Vec<f64> = a
        .par_chunks(CHUNK)
        .zip(b.par_chunks(CHUNK))
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p * q).sum())
        .collect();
    partial.iter().sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    y.par_iter_mut().zip(x.par_iter()).for_each(|(y, x)| *y += alpha * x);
}

#[derive(Debug, Clone, Copy)]
pub struct KrylovParams {
    pub rel_tol: f64,
    pub max_iter: usize,
}

impl Default for KrylovParams {
    fn default() -> Self {
        KrylovParams {
            rel_tol: 1e-10,
            max_iter: 5000,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct KrylovStats {
    pub iterations: usize,
    pub rel_residual: f64,
}

/// Conjugate gradients with Jacobi preconditioning for SPD matrices.
///
/// Each iteration makes three passes over the data: the matrix product
/// fused with `⟨d, q⟩`, the updates of `x`, `r`, `z` fused with `⟨r, z⟩`
/// and `⟨r, r⟩`, and the direction update.
pub fn pcg(a: &Csr, b: &[f64], x: &mut [f64], p: KrylovParams) -> Result<KrylovStats> {
    let inv_d: Vec<f64> = a.diagonal().iter().map(|d| 1.0 / d).collect();
    let bn = norm(b);
    if bn == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(KrylovStats {
            iterations: 0,
            rel_residual: 0.0,
        });
    }
    let n = a.n;
    let mut r = vec![0.0; n];
    a.matvec(x, &mut r);
    r.par_iter_mut().zip(b.par_iter()).for_each(|(r, b)| *r = b - *r);
    let mut z: Vec<f64> = r.iter().zip(&inv_d).map(|(r, d)| r * d).collect();
    let mut dir = z.clone();
    let mut rz = dot(&r, &z);
    let mut q = vec![0.0; n];
    let mut res = norm(&r) / bn;
    for it in 0..p.max_iter {
        if res <= p.rel_tol {
            return Ok(KrylovStats {
                iterations: it,
                rel_residual: res,
            });
        }
        let dq = {
            let parts: Vec<f64> = q
                .par_chunks_mut(CHUNK)
                .enumerate()
                .map(|(c, qs)| {
                    let base = c * CHUNK;
                    let mut acc = 0.0;
                    for (o, qi) in qs.iter_mut().enumerate() {
                        let i = base + o;
                        let mut s = 0.0;
                        for k in a.row_ptr[i]..a.row_ptr[i + 1] {
                            s += a.vals[k] * dir[a.cols[k] as usize];
                        }
                        *qi = s;
                        acc += s * dir[i];
                    }
                    acc
                })
                .collect();
            parts.iter().sum::<f64>()
        };
        let alpha = rz / dq;
        let sums: Vec<(f64, f64)> = x
            .par_chunks_mut(CHUNK)
            .zip(r.par_chunks_mut(CHUNK))
            .zip(z.par_chunks_mut(CHUNK))
            .enumerate()
            .map(|(c, ((xs, rs), zs))| {
                let base = c * CHUNK;
                let (mut rz_part, mut rr_part) = (0.0, 0.0);
                for o in 0..xs.len() {
                    let i = base + o;
                    xs[o] += alpha * dir[i];
                    rs[o] -= alpha * q[i];
                    zs[o] = rs[o] * inv_d[i];
                    rz_part += rs[o] * zs[o];
                    rr_part += rs[o] * rs[o];
                }
                (rz_part, rr_part)
            })
            .collect();
        let rz_new: f64 = sums.iter().map(|s| s.0).sum();
        let rr: f64 = sums.iter().map(|s| s.1).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        dir.par_iter_mut().zip(z.par_iter()).for_each(|(d, z)| *d = z + beta * *d);
        res = rr.sqrt() / bn;
    }
    if res <= p.rel_tol {
        return Ok(KrylovStats {
            iterations: p.max_iter,
            rel_residual: res,
        });
    }
    Err(Error::LinearSolver {
        iterations: p.max_iter,
        residual: res,
    })
}

/// BiCGSTAB with right Jacobi preconditioning for general matrices.
pub fn bicgstab(a: &Csr, b: &[f64], x: &mut [f64], p: KrylovParams) -> Result<KrylovStats> {
    let inv_d: Vec<f64> = a.diagonal().iter().map(|d| 1.0 / d).collect();
    let n = a.n;
    let bn = norm(b);
    if bn == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(KrylovStats {
            iterations: 0,
            rel_residual: 0.0,
        });
    }
    let precond = |v: &[f64], out: &mut [f64]| {
        out.par_iter_mut()
            .zip(v.par_iter().zip(inv_d.par_iter()))
            .for_each(|(o, (v, d))| *o = v * d);
    };
    let mut r = vec![0.0; n];
    a.matvec(x, &mut r);
    r.par_iter_mut().zip(b.par_iter()).for_each(|(r, b)| *r = b - *r);
    let r_hat = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut pv = vec![0.0; n];
    let mut y = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut zs = vec![0.0; n];
    let mut t = vec![0.0; n];
    let mut res = norm(&r) / bn;
    for it in 0..p.max_iter {
        if res <= p.rel_tol {
            return Ok(KrylovStats {
                iterations: it,
                rel_residual: res,
            });
        }
        let rho_new = dot(&r_hat, &r);
        if rho_new == 0.0 || omega == 0.0 {
            break;
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        pv.par_iter_mut()
            .zip(r.par_iter().zip(v.par_iter()))
            .for_each(|(p, (r, v))| *p = r + beta * (*p - omega * v));
        precond(&pv, &mut y);
        a.matvec(&y, &mut v);
        alpha = rho / dot(&r_hat, &v);
        s.par_iter_mut()
            .zip(r.par_iter().zip(v.par_iter()))
            .for_each(|(s, (r, v))| *s = r - alpha * v);
        if norm(&s) / bn <= p.rel_tol {
            axpy(alpha, &y, x);
            return Ok(KrylovStats {
                iterations: it + 1,
                rel_residual: norm(&s) / bn,
            });
        }
        precond(&s, &mut zs);
        a.matvec(&zs, &mut t);
        omega = dot(&t, &s) / dot(&t, &t);
        axpy(alpha, &y, x);
        axpy(omega, &zs, x);
        r.par_iter_mut()
            .zip(s.par_iter().zip(t.par_iter()))
            .for_each(|(r, (s, t))| *r = s - omega * t);
        res = norm(&r) / bn;
    }
    if res <= p.rel_tol {
        return Ok(KrylovStats {
            iterations: p.max_iter,
            rel_residual: res,
        });
    }
    Err(Error::LinearSolver {
        iterations: p.max_iter,
        residual: res,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Dirichlet Laplacian on an m×m square, negated so it is SPD, plus `shift`.
    fn poisson(m: usize, shift: f64) -> Csr {
        let idx = |i: usize, j: usize| (i * m + j) as u32;
        let mut rows = Vec::new();
        for i in 0..m {
            for j in 0..m {
                let mut row = vec![(idx(i, j), 4.0 + shift)];
                if i > 0 {
                    row.push((idx(i - 1, j), -1.0));
                }
                if i + 1 < m {
                    row.push((idx(i + 1, j), -1.0));
                }
                if j > 0 {
                    row.push((idx(i, j - 1), -1.0));
                }
                if j + 1 < m {
                    row.push((idx(i, j + 1), -1.0));
                }
                rows.push(row);
            }
        }
        Csr::from_rows(rows)
    }

    fn residual(a: &Csr, x: &[f64], b: &[f64]) -> f64 {
        let mut y = vec![0.0; a.n];
        a.matvec(x, &mut y);
        y.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt() / norm(b)
    }

    #[test]
    fn pcg_solves_poisson() {
        let a = poisson(40, 0.01);
        assert_eq!(a.asymmetry(), 0.0);
        let b: Vec<f64> = (0..a.n).map(|i| ((i * 7) % 13) as f64 - 6.0).collect();
        let mut x = vec![0.0; a.n];
        let st = pcg(&a, &b, &mut x, KrylovParams::default()).unwrap();
        assert!(st.rel_residual <= 1e-10);
        assert!(residual(&a, &x, &b) < 1e-9);
    }

    #[test]
    fn bicgstab_solves_nonsymmetric() {
        let base = poisson(30, 0.5);
        // Add a skew convection term.
        let mut rows: Vec<Vec<(u32, f64)>> = (0..base.n)
            .map(|i| (base.row_ptr[i]..base.row_ptr[i + 1]).map(|k| (base.cols[k], base.vals[k])).collect())
            .collect();
        for (i, row) in rows.iter_mut().enumerate() {
            if i + 1 < base.n {
                row.push(((i + 1) as u32, 0.3));
            }
            if i > 0 {
                row.push(((i - 1) as u32, -0.3));
            }
        }
        let a = Csr::from_rows(rows);
        assert!(a.asymmetry() > 0.1);
        let b: Vec<f64> = (0..a.n).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut x = vec![0.0; a.n];
        bicgstab(&a, &b, &mut x, KrylovParams::default()).unwrap();
        assert!(residual(&a, &x, &b) < 1e-9);
    }

    #[test]
    fn duplicate_entries_are_summed() {
        let a = Csr::from_rows(vec![vec![(0, 1.0), (0, 2.0), (1, -1.0)], vec![(1, 5.0)]]);
        assert_eq!(a.diagonal(), vec![3.0, 5.0]);
        assert_eq!(a.vals.len(), 3);
    }

    #[test]
    fn zero_rhs_gives_zero() {
        let a = poisson(5, 0.0);
        let mut x = vec![1.0; a.n];
        pcg(&a, &vec![0.0; a.n], &mut x, KrylovParams::default()).unwrap();
        assert!(x.iter().all(|&v| v == 0.0));
    }
}
