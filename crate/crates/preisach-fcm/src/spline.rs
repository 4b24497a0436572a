//! Piecewise-cubic curves and bicubic surfaces in local Taylor form.
//!
//! A [`Spline1D`] cell k holds `Σ_g A[g]·(x − x_k)^g`; a [`Surface2D`] cell
//! (k, l) holds `Σ_{g,h} A[g][h]·(ζ − ζ_k)^g·(γ − γ_l)^h`. Evaluation is
//! generic over [`Scalar`] so analytic partials come out of the same code.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jet::Scalar;

/// Index of the cell containing `x` (clamped to the end cells).
pub(crate) fn locate(knots: &[f64], x: f64) -> usize {
    let cells = knots.len() - 1;
    if x <= knots[0] {
        return 0;
    }
    if x >= knots[cells] {
        return cells - 1;
    }
    // knots are sorted; partition_point gives the first knot > x
    let p = knots.partition_point(|&k| k <= x);
    (p - 1).min(cells - 1)
}

fn check_knots(knots: &[f64], what: &str) -> Result<()> {
    if knots.len() < 2 {
        return Err(Error::Invalid(format!("{what}: need at least two knots")));
    }
    if knots.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Invalid(format!("{what}: knots must be strictly increasing")));
    }
    Ok(())
}

/// `n` uniform cells on [a, b] with exact endpoints.
pub fn uniform_knots(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..=n)
        .map(|k| {
            if k == n {
                b
            } else {
                a + (b - a) * k as f64 / n as f64
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Spline1D {
    pub knots: Vec<f64>,
    pub coeffs: Vec<[f64; 4]>,
}

impl Spline1D {
    pub fn new(knots: Vec<f64>, coeffs: Vec<[f64; 4]>) -> Result<Self> {
        check_knots(&knots, "spline")?;
        if coeffs.len() + 1 != knots.len() {
            return Err(Error::Dimension {
                expected: knots.len() - 1,
                got: coeffs.len(),
            });
        }
        Ok(Spline1D { knots, coeffs })
    }

    pub fn zero(knots: Vec<f64>) -> Self {
        let n = knots.len() - 1;
        Spline1D {
            knots,
            coeffs: vec![[0.0; 4]; n],
        }
    }

    pub fn cells(&self) -> usize {
        self.coeffs.len()
    }

    pub fn eval_cell<S: Scalar>(&self, k: usize, x: S) -> S {
        let a = &self.coeffs[k];
        let d = x - self.knots[k];
        ((d * a[3] + a[2]) * d + a[1]) * d + a[0]
    }

    pub fn eval<S: Scalar>(&self, x: S) -> S {
        self.eval_cell(locate(&self.knots, x.re()), x)
    }

    /// Value, first and second derivative inside cell `k` at `x`.
    pub fn derivs_cell(&self, k: usize, x: f64) -> [f64; 3] {
        let a = &self.coeffs[k];
        let d = x - self.knots[k];
        [
            ((a[3] * d + a[2]) * d + a[1]) * d + a[0],
            (3.0 * a[3] * d + 2.0 * a[2]) * d + a[1],
            6.0 * a[3] * d + 2.0 * a[2],
        ]
    }

    /// Largest jump of value, slope or curvature across interior knots.
    pub fn continuity_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for k in 1..self.cells() {
            let l = self.derivs_cell(k - 1, self.knots[k]);
            let r = self.derivs_cell(k, self.knots[k]);
            for q in 0..3 {
                worst = worst.max((l[q] - r[q]).abs());
            }
        }
        worst
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Surface2D {
    pub zeta_knots: Vec<f64>,
    pub gamma_knots: Vec<f64>,
    /// Cell (k, l) at index `l·(zeta cells) + k`; `coeffs[..][g][h]`.
    pub coeffs: Vec<[[f64; 4]; 4]>,
}

impl Surface2D {
    pub fn new(zeta_knots: Vec<f64>, gamma_knots: Vec<f64>, coeffs: Vec<[[f64; 4]; 4]>) -> Result<Self> {
        check_knots(&zeta_knots, "surface zeta grid")?;
        check_knots(&gamma_knots, "surface gamma grid")?;
        let cells = (zeta_knots.len() - 1) * (gamma_knots.len() - 1);
        if coeffs.len() != cells {
            return Err(Error::Dimension {
                expected: cells,
                got: coeffs.len(),
            });
        }
        Ok(Surface2D {
            zeta_knots,
            gamma_knots,
            coeffs,
        })
    }

    pub fn zeros(zeta_knots: Vec<f64>, gamma_knots: Vec<f64>) -> Self {
        let cells = (zeta_knots.len() - 1) * (gamma_knots.len() - 1);
        Surface2D {
            zeta_knots,
            gamma_knots,
            coeffs: vec![[[0.0; 4]; 4]; cells],
        }
    }

    /// Expand a global bicubic `Σ p[g][h] ζ^g γ^h` into the cell-local form.
    pub fn from_polynomial(zeta_knots: Vec<f64>, gamma_knots: Vec<f64>, p: [[f64; 4]; 4]) -> Result<Self> {
        let mut s = Surface2D::zeros(zeta_knots, gamma_knots);
        let binom = [[1.0, 0.0, 0.0, 0.0], [1.0, 1.0, 0.0, 0.0], [1.0, 2.0, 1.0, 0.0], [1.0, 3.0, 3.0, 1.0]];
        let nk = s.zeta_cells();
        for l in 0..s.gamma_cells() {
            for k in 0..nk {
                let (z0, g0) = (s.zeta_knots[k], s.gamma_knots[l]);
                let mut a = [[0.0; 4]; 4];
                // ζ^G = Σ_g C(G,g) z0^{G−g} (ζ−z0)^g
                for (gg, row) in p.iter().enumerate() {
                    for (hh, &c) in row.iter().enumerate() {
                        for g in 0..=gg {
                            for h in 0..=hh {
                                a[g][h] += c
                                    * binom[gg][g]
                                    * z0.powi((gg - g) as i32)
                                    * binom[hh][h]
                                    * g0.powi((hh - h) as i32);
                            }
                        }
                    }
                }
                s.coeffs[l * nk + k] = a;
            }
        }
        Ok(s)
    }

    pub fn zeta_cells(&self) -> usize {
        self.zeta_knots.len() - 1
    }

    pub fn gamma_cells(&self) -> usize {
        self.gamma_knots.len() - 1
    }

    pub fn gamma_max(&self) -> f64 {
        *self.gamma_knots.last().unwrap()
    }

    pub fn same_grid(&self, other: &Surface2D) -> bool {
        self.zeta_knots == other.zeta_knots && self.gamma_knots == other.gamma_knots
    }

    pub fn cell(&self, k: usize, l: usize) -> &[[f64; 4]; 4] {
        &self.coeffs[l * self.zeta_cells() + k]
    }

    pub fn locate(&self, zeta: f64, gamma: f64) -> (usize, usize) {
        (locate(&self.zeta_knots, zeta), locate(&self.gamma_knots, gamma))
    }

    pub fn eval_cell<S: Scalar>(&self, k: usize, l: usize, zeta: S, gamma: S) -> S {
        let a = self.cell(k, l);
        let dz = zeta - self.zeta_knots[k];
        let dg = gamma - self.gamma_knots[l];
        let row = |g: usize| ((dg * a[g][3] + a[g][2]) * dg + a[g][1]) * dg + a[g][0];
        ((dz * row(3) + row(2)) * dz + row(1)) * dz + row(0)
    }

    /// Surface in its native (ζ, γ) coordinates.
    pub fn eval_native<S: Scalar>(&self, zeta: S, gamma: S) -> S {
        let (k, l) = self.locate(zeta.re(), gamma.re());
        self.eval_cell(k, l, zeta, gamma)
    }

    /// Surface as a function of current and peak current, F(i, γ) = S(i/γ, γ).
    /// Vanishes at γ = 0, where the surface is pinned to zero.
    pub fn eval_current<S: Scalar>(&self, i: S, gamma: S) -> S {
        if gamma.re() <= 1e-300 {
            return S::cst(0.0);
        }
        self.eval_native(i / gamma, gamma)
    }

    /// Native partial derivatives of order (p, q) in (ζ, γ) inside one cell.
    pub fn partial_cell(&self, k: usize, l: usize, zeta: f64, gamma: f64, p: usize, q: usize) -> f64 {
        let a = self.cell(k, l);
        let dz = zeta - self.zeta_knots[k];
        let dg = gamma - self.gamma_knots[l];
        let fall = |n: usize, d: usize| -> f64 { (0..d).map(|r| (n - r) as f64).product() };
        let mut acc = 0.0;
        for g in p..4 {
            for h in q..4 {
                acc += a[g][h] * fall(g, p) * fall(h, q) * dz.powi((g - p) as i32) * dg.powi((h - q) as i32);
            }
        }
        acc
    }

    /// Largest one-sided mismatch of value and all partials up to second order across knot lines,
    /// probed at `probes` points per line.
    pub fn continuity_defect(&self, probes: usize) -> f64 {
        let orders = [(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)];
        let mut worst: f64 = 0.0;
        let nk = self.zeta_cells();
        let nl = self.gamma_cells();
        for l in 0..nl {
            for k in 1..nk {
                let z = self.zeta_knots[k];
                for p in 0..probes {
                    let g = self.gamma_knots[l]
                        + (self.gamma_knots[l + 1] - self.gamma_knots[l]) * (p as f64 + 0.5) / probes as f64;
                    for &(a, b) in &orders {
                        let d = self.partial_cell(k - 1, l, z, g, a, b) - self.partial_cell(k, l, z, g, a, b);
                        worst = worst.max(d.abs());
                    }
                }
            }
        }
        for l in 1..nl {
            let g = self.gamma_knots[l];
            for k in 0..nk {
                for p in 0..probes {
                    let z = self.zeta_knots[k]
                        + (self.zeta_knots[k + 1] - self.zeta_knots[k]) * (p as f64 + 0.5) / probes as f64;
                    for &(a, b) in &orders {
                        let d = self.partial_cell(k, l - 1, z, g, a, b) - self.partial_cell(k, l, z, g, a, b);
                        worst = worst.max(d.abs());
                    }
                }
            }
        }
        worst
    }

    /// Coefficient-wise affine combination `a·self + b·other`.
    pub fn combine(&self, a: f64, other: &Surface2D, b: f64) -> Result<Surface2D> {
        if !self.same_grid(other) {
            return Err(Error::Invalid("surfaces are defined on different grids".into()));
        }
        let coeffs = self
            .coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(x, y)| {
                let mut c = [[0.0; 4]; 4];
                for g in 0..4 {
                    for h in 0..4 {
                        c[g][h] = a * x[g][h] + b * y[g][h];
                    }
                }
                c
            })
            .collect();
        Ok(Surface2D {
            zeta_knots: self.zeta_knots.clone(),
            gamma_knots: self.gamma_knots.clone(),
            coeffs,
        })
    }

    /// The 1-D slice at fixed γ, as a spline in ζ.
    pub fn slice_at_gamma(&self, gamma: f64) -> Spline1D {
        let l = locate(&self.gamma_knots, gamma);
        let dg = gamma - self.gamma_knots[l];
        let coeffs = (0..self.zeta_cells())
            .map(|k| {
                let a = self.cell(k, l);
                let mut c = [0.0; 4];
                for g in 0..4 {
                    c[g] = ((a[g][3] * dg + a[g][2]) * dg + a[g][1]) * dg + a[g][0];
                }
                c
            })
            .collect();
        Spline1D {
            knots: self.zeta_knots.clone(),
            coeffs,
        }
    }
}
