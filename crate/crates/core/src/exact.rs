//! Exact rational and integer linear algebra used by the polyhedral layer.
//!
//! Everything here works over `BigRational` / `BigInt` so that vertex
//! enumeration, chamber volumes, and weight tables carry no floating-point
//! error. Sizes are desk scale (dimensions <= 3, a dozen constraints), so
//! simple Gaussian elimination and column-style Hermite reduction suffice.

use num::bigint::BigInt;
use num::rational::BigRational;
use num::{One, Signed, Zero};
use std::str::FromStr;

pub type Rat = BigRational;

/// Rational from an integer pair.
pub fn rat(p: i64, q: i64) -> Rat {
    Rat::new(BigInt::from(p), BigInt::from(q))
}

/// Rational from an integer.
pub fn rat_int(p: i64) -> Rat {
    Rat::from(BigInt::from(p))
}

/// Parses "p/q" or "p" with optional sign.
pub fn parse_rat(s: &str) -> Result<Rat, String> {
    let t = s.trim();
    let (num, den) = match t.split_once('/') {
        Some((a, b)) => (a.trim(), b.trim()),
        None => (t, "1"),
    };
    let p = BigInt::from_str(num).map_err(|_| format!("invalid rational `{s}`"))?;
    let q = BigInt::from_str(den).map_err(|_| format!("invalid rational `{s}`"))?;
    if q.is_zero() {
        return Err(format!("zero denominator in `{s}`"));
    }
    Ok(Rat::new(p, q))
}

/// Nearest f64 (numerator / denominator in floating point).
pub fn to_f64(r: &Rat) -> f64 {
    num::ToPrimitive::to_f64(r).expect("rational out of f64 range")
}

pub fn to_f64_vec(v: &[Rat]) -> Vec<f64> {
    v.iter().map(to_f64).collect()
}

/// Canonical "p/q" (or "p") rendering.
pub fn rat_string(r: &Rat) -> String {
    if r.denom().is_one() {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

/// Row-reduces `rows` in place and returns the rank. Pure Gaussian
/// elimination with exact pivots; row order is not preserved.
pub fn row_reduce(rows: &mut Vec<Vec<Rat>>) -> usize {
    if rows.is_empty() {
        return 0;
    }
    let ncols = rows[0].len();
    let mut rank = 0;
    for col in 0..ncols {
        let Some(p) = (rank..rows.len()).find(|&r| !rows[r][col].is_zero()) else {
            continue;
        };
        rows.swap(rank, p);
        let pivot = rows[rank][col].clone();
        for c in col..ncols {
            rows[rank][c] = &rows[rank][c] / &pivot;
        }
        for r in 0..rows.len() {
            if r != rank && !rows[r][col].is_zero() {
                let factor = rows[r][col].clone();
                for c in col..ncols {
                    let sub = &factor * &rows[rank][c];
                    rows[r][c] = &rows[r][c] - sub;
                }
            }
        }
        rank += 1;
        if rank == rows.len() {
            break;
        }
    }
    rank
}

pub fn rank(rows: &[Vec<Rat>]) -> usize {
    let mut work = rows.to_vec();
    row_reduce(&mut work)
}

/// Solves the square system `a x = b`. Returns `None` when `a` is singular.
pub fn solve_square(a: &[Vec<Rat>], b: &[Rat]) -> Option<Vec<Rat>> {
    let n = a.len();
    let mut aug: Vec<Vec<Rat>> = a
        .iter()
        .zip(b)
        .map(|(row, rhs)| {
            let mut r = row.clone();
            r.push(rhs.clone());
            r
        })
        .collect();
    if row_reduce(&mut aug) != n {
        return None;
    }
    // After full reduction the rows are an identity (in some row order).
    let mut x = vec![Rat::zero(); n];
    for row in &aug {
        let col = (0..n).find(|&c| row[c].is_one())?;
        x[col] = row[n].clone();
    }
    Some(x)
}

/// Solves the (possibly overdetermined) consistent system
/// `sum_j cols[j] * x_j = b`. Returns `None` if inconsistent or the columns
/// are linearly dependent.
pub fn solve_columns(cols: &[Vec<Rat>], b: &[Rat]) -> Option<Vec<Rat>> {
    let ncols = cols.len();
    let nrows = b.len();
    let mut aug: Vec<Vec<Rat>> = (0..nrows)
        .map(|i| {
            let mut row: Vec<Rat> = cols.iter().map(|c| c[i].clone()).collect();
            row.push(b[i].clone());
            row
        })
        .collect();
    let rank = row_reduce(&mut aug);
    if rank != ncols {
        return None;
    }
    let mut x = vec![Rat::zero(); ncols];
    for row in &aug {
        if let Some(col) = (0..ncols).find(|&c| !row[c].is_zero()) {
            if !row[col].is_one() {
                return None;
            }
            x[col] = row[ncols].clone();
        } else if !row[ncols].is_zero() {
            return None; // 0 = nonzero: inconsistent
        }
    }
    Some(x)
}

/// Determinant by elimination.
pub fn det(a: &[Vec<Rat>]) -> Rat {
    let n = a.len();
    let mut m = a.to_vec();
    let mut d = Rat::one();
    for col in 0..n {
        let Some(p) = (col..n).find(|&r| !m[r][col].is_zero()) else {
            return Rat::zero();
        };
        if p != col {
            m.swap(col, p);
            d = -d;
        }
        let pivot = m[col][col].clone();
        d *= pivot.clone();
        for r in col + 1..n {
            if !m[r][col].is_zero() {
                let factor = &m[r][col] / &pivot;
                for c in col..n {
                    let sub = &factor * &m[col][c];
                    m[r][c] = &m[r][c] - sub;
                }
            }
        }
    }
    d
}

/// Basis of the integer kernel `{ u in Z^n : rows * u = 0 }`, computed by
/// column Hermite reduction with a unimodular transform. Because the
/// transform is unimodular, the returned vectors generate the full kernel
/// lattice (it is automatically saturated).
pub fn int_kernel_basis(rows: &[Vec<BigInt>], ncols: usize) -> Vec<Vec<BigInt>> {
    let mut a: Vec<Vec<BigInt>> = rows.to_vec();
    let mut u: Vec<Vec<BigInt>> = (0..ncols)
        .map(|i| {
            (0..ncols)
                .map(|j| if i == j { BigInt::one() } else { BigInt::zero() })
                .collect()
        })
        .collect();
    // u is stored column-major: u[c] is the c-th column of the transform.
    let nrows = a.len();
    let mut lead = 0usize;
    for row in 0..nrows {
        if lead >= ncols {
            break;
        }
        // Zero out entries a[row][lead+1..] against a[row][lead] by gcd steps.
        loop {
            let mut nonzero: Vec<usize> = (lead..ncols).filter(|&c| !a[row][c].is_zero()).collect();
            if nonzero.is_empty() {
                break;
            }
            if nonzero.len() == 1 {
                let c = nonzero[0];
                a.iter_mut().for_each(|r| r.swap(lead, c));
                u.swap(lead, c);
                lead += 1;
                break;
            }
            // Pick the column with the smallest nonzero |entry| as pivot.
            nonzero.sort_by_key(|&c| a[row][c].abs());
            let p = nonzero[0];
            for &c in &nonzero[1..] {
                let q = &a[row][c] / &a[row][p]; // truncated division
                if !q.is_zero() {
                    for r in 0..nrows {
                        let sub = &q * &a[r][p];
                        a[r][c] = &a[r][c] - sub;
                    }
                    for i in 0..ncols {
                        let sub = &q * &u[p][i];
                        u[c][i] = &u[c][i] - sub;
                    }
                }
            }
        }
    }
    // Columns past `lead` now vanish on all rows: they span the kernel.
    (lead..ncols).map(|c| u[c].clone()).collect()
}

/// Floor of a rational as BigInt.
pub fn rat_floor(r: &Rat) -> BigInt {
    r.floor().to_integer()
}

/// Ceiling of a rational as BigInt.
pub fn rat_ceil(r: &Rat) -> BigInt {
    r.ceil().to_integer()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(p: i64, q: i64) -> Rat {
        rat(p, q)
    }

    #[test]
    fn parse_roundtrip() {
        assert_eq!(parse_rat("3/4").unwrap(), r(3, 4));
        assert_eq!(parse_rat("-2").unwrap(), r(-2, 1));
        assert_eq!(parse_rat(" 7 / -2 ").unwrap(), r(-7, 2));
        assert!(parse_rat("1/0").is_err());
        assert!(parse_rat("x").is_err());
        assert_eq!(rat_string(&r(-7, 2)), "-7/2");
        assert_eq!(rat_string(&r(4, 2)), "2");
    }

    #[test]
    fn solve_and_det() {
        let a = vec![vec![r(2, 1), r(1, 1)], vec![r(1, 1), r(3, 1)]];
        let b = vec![r(5, 1), r(10, 1)];
        let x = solve_square(&a, &b).unwrap();
        assert_eq!(x, vec![r(1, 1), r(3, 1)]);
        assert_eq!(det(&a), r(5, 1));
        let singular = vec![vec![r(1, 1), r(2, 1)], vec![r(2, 1), r(4, 1)]];
        assert!(solve_square(&singular, &b).is_none());
        assert_eq!(det(&singular), r(0, 1));
    }

    #[test]
    fn overdetermined_consistent() {
        // col * x = b with col = (1,2,3), b = (2,4,6) -> x = 2
        let cols = vec![vec![r(1, 1), r(2, 1), r(3, 1)]];
        let b = vec![r(2, 1), r(4, 1), r(6, 1)];
        assert_eq!(solve_columns(&cols, &b).unwrap(), vec![r(2, 1)]);
        let bad = vec![r(2, 1), r(4, 1), r(7, 1)];
        assert!(solve_columns(&cols, &bad).is_none());
    }

    #[test]
    fn kernel_basis_is_saturated() {
        // Kernel of (2, 4) in Z^2 is generated by (2, -1), not (4, -2).
        let rows = vec![vec![BigInt::from(2), BigInt::from(4)]];
        let basis = int_kernel_basis(&rows, 2);
        assert_eq!(basis.len(), 1);
        let g = &basis[0];
        let dot: BigInt = &g[0] * 2 + &g[1] * 4;
        assert!(dot.is_zero());
        let content = num::integer::gcd(g[0].clone(), g[1].clone());
        assert_eq!(content, BigInt::one());
    }

    #[test]
    fn kernel_of_full_rank_is_empty() {
        let rows = vec![
            vec![BigInt::from(1), BigInt::from(0)],
            vec![BigInt::from(3), BigInt::from(1)],
        ];
        assert!(int_kernel_basis(&rows, 2).is_empty());
    }
}
