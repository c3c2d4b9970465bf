//! Symbolic linear algebra over the field of expressions, with pivots
//! certified nonzero by the oracle.

#![allow(clippy::needless_range_loop)]

use super::expr::Expr;
use super::oracle::Oracle;
use crate::error::{Error, Result};

pub type SymMatrix = Vec<Vec<Expr>>;

pub fn identity(n: usize) -> SymMatrix {
    (0..n).map(|i| (0..n).map(|j| if i == j { Expr::one() } else { Expr::zero() }).collect()).collect()
}

/// Replaces entries the oracle judges identically zero by the zero constant.
pub fn flush_zeros(m: &mut SymMatrix, oracle: &Oracle) -> Result<()> {
    for row in m.iter_mut() {
        for e in row.iter_mut() {
            if !e.is_zero() && oracle.is_zero(*e)? {
                *e = Expr::zero();
            }
        }
    }
    Ok(())
}

fn minor(m: &SymMatrix, skip_r: usize, skip_c: usize) -> SymMatrix {
    m.iter()
        .enumerate()
        .filter(|(i, _)| *i != skip_r)
        .map(|(_, row)| row.iter().enumerate().filter(|(j, _)| *j != skip_c).map(|(_, e)| *e).collect())
        .collect()
}

/// Cofactor-expansion determinant, for small matrices.
pub fn det(m: &SymMatrix) -> Expr {
    match m.len() {
        0 => Expr::one(),
        1 => m[0][0],
        2 => m[0][0] * m[1][1] - m[0][1] * m[1][0],
        n => {
            let mut acc = Expr::zero();
            for j in 0..n {
                if m[0][j].is_zero() {
                    continue;
                }
                let term = m[0][j] * det(&minor(m, 0, j));
                acc = if j % 2 == 0 { acc + term } else { acc - term };
            }
            acc
        }
    }
}

/// Inverse by adjugate for n ≤ 3, Gauss-Jordan elimination otherwise.
pub fn inverse(m: &SymMatrix, oracle: &Oracle) -> Result<SymMatrix> {
    let n = m.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut inv = if n <= 3 {
        let d = det(m);
        if oracle.is_zero(d)? {
            return Err(Error::RankDeficient(format!("singular {n}x{n} matrix")));
        }
        if n == 1 {
            vec![vec![Expr::one() / d]]
        } else {
            (0..n)
                .map(|i| {
                    (0..n)
                        .map(|j| {
                            let c = det(&minor(m, j, i));
                            let c = if (i + j) % 2 == 0 { c } else { -c };
                            c / d
                        })
                        .collect()
                })
                .collect()
        }
    } else {
        solve(m, &identity(n), oracle)?
    };
    flush_zeros(&mut inv, oracle)?;
    Ok(inv)
}

/// Solves `A X = B` for square nonsingular `A`.
pub fn solve(a: &SymMatrix, b: &SymMatrix, oracle: &Oracle) -> Result<SymMatrix> {
    let n = a.len();
    let mut a = a.clone();
    let mut b = b.clone();
    for c in 0..n {
        // smallest nonzero candidate keeps the eliminated entries compact
        let mut best: Option<(usize, usize)> = None;
        for r in c..n {
            let e = a[r][c];
            if e.is_zero() || oracle.is_zero(e)? {
                continue;
            }
            let size = e.dag_size(10_000);
            if best.is_none_or(|(_, s)| size < s) {
                best = Some((r, size));
            }
        }
        let Some((p, _)) = best else {
            return Err(Error::RankDeficient(format!("no pivot in column {c}")));
        };
        a.swap(c, p);
        b.swap(c, p);
        let piv = a[c][c];
        for j in 0..n {
            a[c][j] = if j == c { Expr::one() } else { a[c][j] / piv };
        }
        for x in b[c].iter_mut() {
            *x = *x / piv;
        }
        for r in 0..n {
            if r == c {
                continue;
            }
            let f = a[r][c];
            if f.is_zero() {
                continue;
            }
            for j in 0..n {
                a[r][j] = if j == c { Expr::zero() } else { a[r][j] - f * a[c][j] };
            }
            let (head, tail) = b.split_at_mut(r.max(c));
            let (br, bc) = if r < c { (&mut head[r], &tail[0]) } else { (&mut tail[0], &head[c]) };
            for (x, y) in br.iter_mut().zip(bc.iter()) {
                *x = *x - f * *y;
            }
            for j in 0..n {
                if !a[r][j].is_zero() && oracle.is_zero(a[r][j])? {
                    a[r][j] = Expr::zero();
                }
            }
        }
    }
    Ok(b)
}

pub fn mat_mul(a: &SymMatrix, b: &SymMatrix) -> SymMatrix {
    let k = b.len();
    let cols = b.first().map_or(0, Vec::len);
    a.iter()
        .map(|row| {
            (0..cols)
                .map(|j| (0..k).fold(Expr::zero(), |acc, l| acc + row[l] * b[l][j]))
                .collect()
        })
        .collect()
}

/// Numerical pivot structure at one generic sample: independent rows and
/// pivot columns chosen left to right.
fn pivot_structure(vals: &[f64], nr: usize, nc: usize, tol: f64) -> (Vec<usize>, Vec<usize>) {
    let mut m: Vec<Vec<f64>> = (0..nr).map(|i| vals[i * nc..(i + 1) * nc].to_vec()).collect();
    for row in m.iter_mut() {
        let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            row.iter_mut().for_each(|x| *x /= norm);
        }
    }
    let mut row_ids: Vec<usize> = (0..nr).collect();
    let mut pivots_r = Vec::new();
    let mut pivots_c = Vec::new();
    let mut top = 0;
    for c in 0..nc {
        if top == nr {
            break;
        }
        let (p, best) = (top..nr)
            .map(|r| (r, m[r][c].abs()))
            .fold((top, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
        if best <= tol {
            continue;
        }
        m.swap(top, p);
        row_ids.swap(top, p);
        for r in top + 1..nr {
            let f = m[r][c] / m[top][c];
            if f != 0.0 {
                for j in c..nc {
                    m[r][j] -= f * m[top][j];
                }
            }
        }
        pivots_r.push(row_ids[top]);
        pivots_c.push(c);
        top += 1;
    }
    (pivots_r, pivots_c)
}

/// Basis of the right kernel `{v : M v = 0}` of a symbolic matrix.
///
/// Pivot columns are picked left to right, so free coordinates come last
/// where possible. Each basis vector has a 1 in its own free coordinate and
/// 0 in the others.
pub fn kernel(rows: &SymMatrix, ncols: usize, oracle: &Oracle) -> Result<SymMatrix> {
    if rows.is_empty() {
        return Ok(identity(ncols));
    }
    let nr = rows.len();
    let flat: Vec<Expr> = rows.iter().flatten().copied().collect();
    let samples = oracle.values(&flat)?;
    let tol = 1e-8;
    let (prow, pcol) = samples
        .iter()
        .map(|v| pivot_structure(v, nr, ncols, tol))
        .max_by_key(|(r, _)| r.len())
        .unwrap_or_default();
    let rank = pcol.len();
    let free: Vec<usize> = (0..ncols).filter(|c| !pcol.contains(c)).collect();
    if free.is_empty() {
        return Ok(Vec::new());
    }
    let a: SymMatrix = prow.iter().map(|&r| pcol.iter().map(|&c| rows[r][c]).collect()).collect();
    let rhs: SymMatrix =
        prow.iter().map(|&r| free.iter().map(|&f| -rows[r][f]).collect()).collect();
    let sol = if rank == 0 {
        Vec::new()
    } else if rank <= 3 {
        mat_mul(&inverse(&a, oracle)?, &rhs)
    } else {
        solve(&a, &rhs, oracle)?
    };
    let mut basis = Vec::with_capacity(free.len());
    for (k, &f) in free.iter().enumerate() {
        let mut v = vec![Expr::zero(); ncols];
        v[f] = Expr::one();
        for (i, &c) in pcol.iter().enumerate() {
            v[c] = sol[i][k];
        }
        basis.push(v);
    }
    flush_zeros(&mut basis, oracle)?;
    Ok(basis)
}
