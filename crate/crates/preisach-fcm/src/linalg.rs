//! Banded LU with partial pivoting for the sparse KKT systems of the spline fits.

use crate::error::{Error, Result};

/// Square matrix with `kl` sub- and `ku` super-diagonals. Storage leaves room
/// for the `kl` extra super-diagonals that row pivoting can create.
#[derive(Clone, Debug)]
pub struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let width = 2 * kl + ku + 1;
        BandMatrix {
            n,
            kl,
            ku,
            width,
            data: vec![0.0; n * width],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    fn slot(&self, i: usize, j: usize) -> usize {
        debug_assert!(j + self.kl >= i && j <= i + self.kl + self.ku, "({i},{j}) outside band");
        i * self.width + (j + self.kl - i)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if j + self.kl < i || j > i + self.kl + self.ku {
            0.0
        } else {
            self.data[self.slot(i, j)]
        }
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        assert!(j + self.kl >= i && j <= i + self.ku, "entry ({i},{j}) outside declared band");
        let s = self.slot(i, j);
        self.data[s] += v;
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                let lo = i.saturating_sub(self.kl);
                let hi = (i + self.ku).min(self.n - 1);
                (lo..=hi).map(|j| self.get(i, j) * x[j]).sum()
            })
            .collect()
    }

    /// Factorise in place. `tol` is relative to the largest |entry|.
    pub fn factor(mut self, tol: f64) -> Result<BandLu> {
        let n = self.n;
        let scale = self.data.iter().map(|x| x.abs()).fold(0.0, f64::max);
        let mut piv = vec![0usize; n];
        let mut min_pivot = f64::INFINITY;
        let mut max_pivot: f64 = 0.0;
        let reach = self.kl + self.ku;
        for k in 0..n {
            let last = (k + self.kl).min(n - 1);
            let mut p = k;
            let mut best = self.get(k, k).abs();
            for i in k + 1..=last {
                let v = self.get(i, k).abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if !(best > tol * scale) {
                return Err(Error::RankDeficient {
                    detail: format!(
                        "pivot {best:.3e} at row {k} of {n} below {:.3e} (relative tolerance {tol:.1e})",
                        tol * scale
                    ),
                });
            }
            min_pivot = min_pivot.min(best);
            max_pivot = max_pivot.max(best);
            piv[k] = p;
            let jmax = (k + reach).min(n - 1);
            if p != k {
                for j in k..=jmax {
                    let a = self.slot(k, j);
                    let b = self.slot(p, j);
                    self.data.swap(a, b);
                }
            }
            let d = self.data[self.slot(k, k)];
            for i in k + 1..=last {
                let sik = self.slot(i, k);
                let l = self.data[sik] / d;
                self.data[sik] = l;
                if l != 0.0 {
                    for j in k + 1..=jmax {
                        let skj = self.slot(k, j);
                        let sij = self.slot(i, j);
                        self.data[sij] -= l * self.data[skj];
                    }
                }
            }
        }
        Ok(BandLu {
            m: self,
            piv,
            pivot_ratio: max_pivot / min_pivot,
        })
    }
}

#[derive(Clone, Debug)]
pub struct BandLu {
    m: BandMatrix,
    piv: Vec<usize>,
    /// Largest over smallest pivot magnitude; a cheap conditioning indicator.
    pub pivot_ratio: f64,
}

impl BandLu {
    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let n = self.m.n;
        let kl = self.m.kl;
        let reach = self.m.kl + self.m.ku;
        let mut x = rhs.to_vec();
        for k in 0..n {
            let p = self.piv[k];
            if p != k {
                x.swap(k, p);
            }
            let last = (k + kl).min(n - 1);
            for i in k + 1..=last {
                x[i] -= self.m.get(i, k) * x[k];
            }
        }
        for k in (0..n).rev() {
            let jmax = (k + reach).min(n - 1);
            let mut s = x[k];
            for j in k + 1..=jmax {
                s -= self.m.get(k, j) * x[j];
            }
            x[k] = s / self.m.get(k, k);
        }
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};

    #[test]
    fn matches_dense_solve_with_zero_diagonal() {
        // KKT-like: zero diagonal entries force pivoting
        let n = 9;
        let (kl, ku) = (2, 2);
        let mut b = BandMatrix::zeros(n, kl, ku);
        let mut d = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            for j in i.saturating_sub(kl)..=(i + ku).min(n - 1) {
                let v = if i == j && i % 3 == 2 {
                    0.0
                } else {
                    ((i * 7 + j * 3) % 5) as f64 - 1.5 + if i == j { 0.3 } else { 0.0 }
                };
                b.add(i, j, v);
                d[(i, j)] = v;
            }
        }
        let rhs: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let x = b.clone().factor(1e-14).unwrap().solve(&rhs);
        let xd = d.lu().solve(&DVector::from_vec(rhs.clone())).unwrap();
        for i in 0..n {
            assert!((x[i] - xd[i]).abs() < 1e-10, "{i}: {} {}", x[i], xd[i]);
        }
        let r = b.mul_vec(&x);
        for i in 0..n {
            assert!((r[i] - rhs[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn singular_rejected() {
        let mut b = BandMatrix::zeros(3, 1, 1);
        b.add(0, 0, 1.0);
        b.add(1, 1, 0.0);
        b.add(2, 2, 1.0);
        assert!(matches!(b.factor(1e-12), Err(Error::RankDeficient { .. })));
    }
}
