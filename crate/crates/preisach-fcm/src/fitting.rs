//! Model identification from symmetric major-loop tests.
//!
//! Pipeline: clean each recording to one averaged period, symmetrise the
//! current, split into rising/dropping branches, fit each branch with a
//! C² cubic spline in ζ = i/γₘ, assemble the per-test splines into bicubic
//! surfaces over (ζ, γₘ), split differential/common modes, pick the
//! splitting function from the approximate measures and build h and c.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hps::PeriodicSignal;
use crate::jet::{Jet, Scalar};
use crate::linalg::BandMatrix;
use crate::preisach::{global_extrema, HysteresisModel};
use crate::spline::{locate, uniform_knots, Spline1D, Surface2D};

/// Denominator floor for the ratio measures.
pub const MEASURE_EPS: f64 = 1e-12;
/// Candidate ladder for the splitting parameter.
pub const A_LADDER: [f64; 7] = [1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0];
pub const MODEL_SCHEMA_VERSION: u32 = 1;

// ---------------------------------------------------------------------------
// data cleaning

#[derive(Clone, Debug)]
pub struct CleanedWaveforms {
    pub current: PeriodicSignal,
    pub flux: PeriodicSignal,
    /// Raw sample index the averaged period starts at (first current minimum).
    pub start_index: usize,
    pub cycles_averaged: usize,
    /// Removed linear drift per second for (current, flux).
    pub drift: (f64, f64),
}

/// Mean per-period increment of `x`, as a slope per sample.
fn drift_per_sample(x: &[f64], p: usize) -> f64 {
    let n = x.len() - p;
    (0..n).map(|k| x[k + p] - x[k]).sum::<f64>() / (n as f64 * p as f64)
}

pub fn clean_waveforms(v_raw: &[f64], i_raw: &[f64], sample_interval: f64, period: f64) -> Result<CleanedWaveforms> {
    if v_raw.len() != i_raw.len() {
        return Err(Error::Dimension {
            expected: v_raw.len(),
            got: i_raw.len(),
        });
    }
    if !(sample_interval > 0.0 && period > 0.0) {
        return Err(Error::Invalid("sample interval and period must be positive".into()));
    }
    let pf = period / sample_interval;
    let p = pf.round() as usize;
    if p < 4 || (pf - p as f64).abs() > 1e-6 * pf {
        return Err(Error::Invalid(format!(
            "period {period} s is not an integer number of {sample_interval} s samples"
        )));
    }
    let n = v_raw.len();
    if n < 2 * p {
        return Err(Error::Invalid(format!(
            "recording holds {:.2} cycles; at least 2 are required",
            n as f64 / p as f64
        )));
    }
    let mut flux = vec![0.0; n];
    for k in 1..n {
        flux[k] = flux[k - 1] + 0.5 * sample_interval * (v_raw[k - 1] + v_raw[k]);
    }
    let mut cur = i_raw.to_vec();
    let df = drift_per_sample(&flux, p);
    let di = drift_per_sample(&cur, p);
    for k in 0..n {
        flux[k] -= df * k as f64;
        cur[k] -= di * k as f64;
    }
    let start = (0..p)
        .min_by(|&a, &b| cur[a].partial_cmp(&cur[b]).unwrap())
        .unwrap_or(0);
    let cycles = (n - start) / p;
    let mut ia = vec![0.0; p];
    let mut la = vec![0.0; p];
    for c in 0..cycles {
        for j in 0..p {
            ia[j] += cur[start + c * p + j];
            la[j] += flux[start + c * p + j];
        }
    }
    for j in 0..p {
        ia[j] /= cycles as f64;
        la[j] /= cycles as f64;
    }
    let mean = la.iter().sum::<f64>() / p as f64;
    la.iter_mut().for_each(|x| *x -= mean);
    Ok(CleanedWaveforms {
        current: PeriodicSignal::new(ia, period)?,
        flux: PeriodicSignal::new(la, period)?,
        start_index: start,
        cycles_averaged: cycles,
        drift: (di / sample_interval, df / sample_interval),
    })
}

#[derive(Clone, Debug)]
pub struct Symmetrized {
    pub current: PeriodicSignal,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    /// Set when the quadratic map was unusable and a pure offset was applied.
    pub fallback: Option<String>,
}

/// f(i) = a i² + b i + c with f(min) = −f(max), zero DC and preserved peak-to-peak.
pub fn symmetrize_current(i: &PeriodicSignal) -> Result<Symmetrized> {
    let s = i.samples();
    let lo = s.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return Err(Error::Invalid("constant current cannot be symmetrised".into()));
    }
    let m1 = i.mean();
    let m2 = i.mean_square();
    let sys = DMatrix::from_row_slice(3, 3, &[lo * lo + hi * hi, lo + hi, 2.0, m2, m1, 1.0, lo + hi, 1.0, 0.0]);
    let rhs = DVector::from_vec(vec![0.0, 0.0, 1.0]);
    let quad = sys.clone().lu().solve(&rhs).filter(|x| {
        let monotone = 2.0 * x[0] * lo + x[1] > 0.0 && 2.0 * x[0] * hi + x[1] > 0.0;
        let scale = (hi - lo).max(lo.abs().max(hi.abs()));
        monotone && x.iter().all(|v| v.is_finite()) && (&sys * x - &rhs).amax() < 1e-9 * scale.max(1.0)
    });
    let (a, b, c, fallback) = match quad {
        Some(x) => (x[0], x[1], x[2], None),
        None => (
            0.0,
            1.0,
            -(lo + hi) / 2.0,
            Some("quadratic correction degenerate; offset-only symmetrisation, DC not zeroed".to_string()),
        ),
    };
    Ok(Symmetrized {
        current: i.map(|x| (a * x + b) * x + c),
        a,
        b,
        c,
        fallback,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct LoopBranchData {
    pub test_index: usize,
    pub gamma_m: f64,
    /// (i, λ) from the minimum to the maximum.
    pub rising: Vec<(f64, f64)>,
    /// (i, λ) from the maximum back to the minimum.
    pub dropping: Vec<(f64, f64)>,
    /// |λ_r − λ_d| at the shared end points.
    pub closure_residual: f64,
    /// Samples that break strict monotonicity of the branch currents.
    pub monotonicity_violations: usize,
}

pub fn split_major_loop(test_index: usize, i: &PeriodicSignal, lambda: &PeriodicSignal) -> Result<LoopBranchData> {
    if i.len() != lambda.len() {
        return Err(Error::Dimension {
            expected: i.len(),
            got: lambda.len(),
        });
    }
    let s = i.samples();
    let l = lambda.samples();
    let n = s.len();
    let e = global_extrema(s);
    if e.min_tied || e.max_tied {
        let dup = |v: f64| s.iter().enumerate().filter(|(_, &x)| x == v).map(|(k, _)| k).collect::<Vec<_>>();
        return Err(Error::Invalid(format!(
            "test {test_index}: repeated extrema (minimum at samples {:?}, maximum at samples {:?})",
            dup(s[e.min_index]),
            dup(s[e.max_index])
        )));
    }
    let walk = |from: usize, to: usize| -> Vec<(f64, f64)> {
        let len = (to + n - from) % n;
        (0..=len).map(|j| (from + j) % n).map(|k| (s[k], l[k])).collect()
    };
    let rising = walk(e.min_index, e.max_index);
    let dropping = walk(e.max_index, e.min_index);
    let violations = rising.windows(2).filter(|w| !(w[1].0 > w[0].0)).count()
        + dropping.windows(2).filter(|w| !(w[1].0 < w[0].0)).count();
    let closure = (rising.last().unwrap().1 - dropping[0].1)
        .abs()
        .max((rising[0].1 - dropping.last().unwrap().1).abs());
    Ok(LoopBranchData {
        test_index,
        gamma_m: 0.5 * (s[e.max_index] - s[e.min_index]),
        rising,
        dropping,
        closure_residual: closure,
        monotonicity_violations: violations,
    })
}

// ---------------------------------------------------------------------------
// constrained least-squares splines

#[derive(Clone, Debug)]
pub struct BranchFit {
    pub spline: Spline1D,
    pub residual_sum_squares: f64,
    pub rms_residual: f64,
    /// ‖K z − b‖∞ / max(‖b‖∞, 1) of the stationarity system.
    pub kkt_residual: f64,
    pub pivot_ratio: f64,
    /// Average samples per knot interval below the recommended 4.
    pub sparse: bool,
}

const KKT_BAND: usize = 7;

/// Least-squares C² cubic spline through (ζ, λ) samples, interpolating the end values.
pub fn fit_branch_spline(samples: &[(f64, f64)], zeta_knots: &[f64], endpoints: (f64, f64)) -> Result<BranchFit> {
    let kc = zeta_knots.len().checked_sub(1).filter(|&k| k >= 1).ok_or_else(|| Error::Invalid("need at least one cell".into()))?;
    let widths: Vec<f64> = zeta_knots.windows(2).map(|w| w[1] - w[0]).collect();
    if widths.iter().any(|&h| !(h > 0.0)) {
        return Err(Error::Invalid("zeta knots must be strictly increasing".into()));
    }
    let mut gram = vec![[[0.0; 4]; 4]; kc];
    let mut proj = vec![[0.0; 4]; kc];
    for &(z, y) in samples {
        let k = locate(zeta_knots, z);
        let t = (z - zeta_knots[k]) / widths[k];
        let phi = [1.0, t, t * t, t * t * t];
        for a in 0..4 {
            proj[k][a] += phi[a] * y;
            for b in 0..4 {
                gram[k][a][b] += phi[a] * phi[b];
            }
        }
    }
    let n = 7 * kc - 1;
    let x = |k: usize| 1 + 7 * k;
    let mut m = BandMatrix::zeros(n, KKT_BAND, KKT_BAND);
    let mut rhs = vec![0.0; n];
    for k in 0..kc {
        for a in 0..4 {
            rhs[x(k) + a] = proj[k][a];
            for b in 0..4 {
                m.add(x(k) + a, x(k) + b, gram[k][a][b]);
            }
        }
    }
    let constraint = |m: &mut BandMatrix, row: usize, col: usize, v: f64| {
        m.add(row, col, v);
        m.add(col, row, v);
    };
    constraint(&mut m, 0, x(0), 1.0);
    rhs[0] = endpoints.0;
    let last = n - 1;
    for g in 0..4 {
        constraint(&mut m, last, x(kc - 1) + g, 1.0);
    }
    rhs[last] = endpoints.1;
    for k in 1..kc {
        let r = widths[k - 1] / widths[k];
        let nu = 7 * k - 2;
        for g in 0..4 {
            let gf = g as f64;
            constraint(&mut m, nu, x(k - 1) + g, 1.0);
            if g >= 1 {
                constraint(&mut m, nu + 1, x(k - 1) + g, gf);
            }
            if g >= 2 {
                constraint(&mut m, nu + 2, x(k - 1) + g, gf * (gf - 1.0));
            }
        }
        constraint(&mut m, nu, x(k), -1.0);
        constraint(&mut m, nu + 1, x(k) + 1, -r);
        constraint(&mut m, nu + 2, x(k) + 2, -2.0 * r * r);
    }
    let check = m.clone();
    let lu = m.factor(1e-13).map_err(|e| match e {
        Error::RankDeficient { detail } => Error::RankDeficient {
            detail: format!("branch spline KKT system ({} samples, {kc} cells): {detail}", samples.len()),
        },
        other => other,
    })?;
    let z = lu.solve(&rhs);
    let res = check.mul_vec(&z);
    let bnorm = rhs.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1.0);
    let kkt_residual = res.iter().zip(&rhs).fold(0.0f64, |a, (p, q)| a.max((p - q).abs())) / bnorm;
    let coeffs: Vec<[f64; 4]> = (0..kc)
        .map(|k| {
            let h = widths[k];
            let mut c = [0.0; 4];
            for g in 0..4 {
                c[g] = z[x(k) + g] / h.powi(g as i32);
            }
            c
        })
        .collect();
    let spline = Spline1D::new(zeta_knots.to_vec(), coeffs)?;
    let rss: f64 = samples.iter().map(|&(z, y)| (spline.eval(z) - y).powi(2)).sum();
    Ok(BranchFit {
        rms_residual: (rss / samples.len().max(1) as f64).sqrt(),
        residual_sum_squares: rss,
        kkt_residual,
        pivot_ratio: lu.pivot_ratio,
        sparse: (samples.len() as f64) < 4.0 * kc as f64,
        spline,
    })
}

#[derive(Clone, Debug)]
pub struct SurfaceFit {
    pub surface: Surface2D,
    /// ∬ (surface − linear interpolation in γ)² dζ dγ.
    pub objective: f64,
    pub kkt_residual: f64,
    pub condition: f64,
}

/// Blend per-test splines `splines[l]` at `gamma_knots[l]` into a surface C² in γ.
pub fn assemble_surface(splines: &[Spline1D], gamma_knots: &[f64]) -> Result<SurfaceFit> {
    if splines.len() != gamma_knots.len() || splines.len() < 2 {
        return Err(Error::Dimension {
            expected: gamma_knots.len().max(2),
            got: splines.len(),
        });
    }
    let zk = &splines[0].knots;
    if splines.iter().any(|s| &s.knots != zk) {
        return Err(Error::Invalid("per-test splines use different zeta knot grids".into()));
    }
    if gamma_knots.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Invalid("gamma knots must be strictly increasing".into()));
    }
    let nl = gamma_knots.len() - 1;
    let hs: Vec<f64> = gamma_knots.windows(2).map(|w| w[1] - w[0]).collect();
    // unknowns: (c1, c2, c3) per interval in scaled s = (γ − γ_l)/H_l
    let nv = 3 * nl;
    let nc = nl + 2 * (nl - 1);
    let n = nv + nc;
    let mut kkt = DMatrix::<f64>::zeros(n, n);
    for l in 0..nl {
        for a in 0..3 {
            for b in 0..3 {
                kkt[(3 * l + a, 3 * l + b)] = hs[l] / (a + b + 3) as f64;
            }
        }
    }
    let mut put = |r: usize, c: usize, v: f64| {
        kkt[(nv + r, c)] = v;
        kkt[(c, nv + r)] = v;
    };
    for l in 0..nl {
        for a in 0..3 {
            put(l, 3 * l + a, 1.0);
        }
    }
    for l in 0..nl - 1 {
        let r = hs[l] / hs[l + 1];
        let c1 = nl + 2 * l;
        for (a, w) in [1.0, 2.0, 3.0].into_iter().enumerate() {
            put(c1, 3 * l + a, w);
        }
        put(c1, 3 * (l + 1), -r);
        put(c1 + 1, 3 * l + 1, 2.0);
        put(c1 + 1, 3 * l + 2, 6.0);
        put(c1 + 1, 3 * (l + 1) + 1, -2.0 * r * r);
    }
    let condition = crate::hps::condition_number(&kkt);
    let lu = kkt.clone().lu();
    // solution for unit increment Δ_l = A₀(l+1) − A₀(l) on interval l
    let mut unit = Vec::with_capacity(nl);
    let mut kkt_residual: f64 = 0.0;
    for l in 0..nl {
        let mut b = DVector::zeros(n);
        for a in 0..3 {
            b[3 * l + a] = hs[l] / (a + 3) as f64;
        }
        b[nv + l] = 1.0;
        let z = lu.solve(&b).ok_or_else(|| Error::RankDeficient {
            detail: "gamma assembly KKT system is singular".into(),
        })?;
        kkt_residual = kkt_residual.max((&kkt * &z - &b).amax());
        unit.push(z);
    }
    if kkt_residual > 1e-9 {
        return Err(Error::Singular {
            condition,
            context: format!("gamma assembly KKT residual {kkt_residual:.2e}"),
        });
    }
    let nk = zk.len() - 1;
    let mut coeffs = vec![[[0.0; 4]; 4]; nk * nl];
    let mut objective = 0.0;
    let zw: Vec<f64> = zk.windows(2).map(|w| w[1] - w[0]).collect();
    for k in 0..nk {
        // scaled h-coefficients c[l][g][h-1]
        let mut c = vec![[[0.0; 3]; 4]; nl];
        for g in 0..4 {
            let delta: Vec<f64> = (0..nl).map(|l| splines[l + 1].coeffs[k][g] - splines[l].coeffs[k][g]).collect();
            for (j, d) in delta.iter().enumerate() {
                if *d == 0.0 {
                    continue;
                }
                for l in 0..nl {
                    for a in 0..3 {
                        c[l][g][a] += d * unit[j][3 * l + a];
                    }
                }
            }
            for l in 0..nl {
                let cell = &mut coeffs[l * nk + k];
                cell[g][0] = splines[l].coeffs[k][g];
                for a in 0..3 {
                    cell[g][a + 1] = c[l][g][a] / hs[l].powi(a as i32 + 1);
                }
            }
        }
        for l in 0..nl {
            // deviation e[g][h] s^h, h = 1..3, with the linear part removed
            let mut e = [[0.0; 3]; 4];
            for g in 0..4 {
                e[g] = c[l][g];
                e[g][0] -= splines[l + 1].coeffs[k][g] - splines[l].coeffs[k][g];
            }
            let mut acc = 0.0;
            for g in 0..4 {
                for g2 in 0..4 {
                    let zint = zw[k].powi((g + g2 + 1) as i32) / (g + g2 + 1) as f64;
                    for a in 0..3 {
                        for b in 0..3 {
                            acc += e[g][a] * e[g2][b] * zint / (a + b + 3) as f64;
                        }
                    }
                }
            }
            objective += acc * hs[l];
        }
    }
    Ok(SurfaceFit {
        surface: Surface2D::new(zk.clone(), gamma_knots.to_vec(), coeffs)?,
        objective,
        kkt_residual,
        condition,
    })
}

/// λ_s = (λ_d − λ_r)/2 and λ_c = (λ_d + λ_r)/2.
pub fn diff_common_split(rising: &Surface2D, dropping: &Surface2D) -> Result<(Surface2D, Surface2D)> {
    Ok((dropping.combine(0.5, rising, -0.5)?, dropping.combine(0.5, rising, 0.5)?))
}

/// λ_s(i, βₘ, αₘ) implied by a shape function.
pub fn lambda_s_from_shape<M: HysteresisModel + ?Sized>(model: &M, i: f64, beta_m: f64, alpha_m: f64) -> f64 {
    model.shape(beta_m, i) + model.shape(i, alpha_m) - model.shape(beta_m, alpha_m)
}

/// Congruency defect for ordered quadruples γ₁ ≤ γ₂ ≤ γ₃ ≤ γ₄ of a differential-mode function λ_s(i, βₘ, αₘ).
pub fn condition3_residual(lambda_s: impl Fn(f64, f64, f64) -> f64, quadruples: &[[f64; 4]]) -> Vec<f64> {
    quadruples
        .iter()
        .map(|&[g1, g2, g3, g4]| lambda_s(g2, g1, g3) - lambda_s(g2, g1, g4) + lambda_s(g3, g1, g4) - lambda_s(g3, g2, g4))
        .collect()
}

// ---------------------------------------------------------------------------
// measures

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MeasureCurve {
    pub abscissa: Vec<f64>,
    pub values: Vec<f64>,
    /// Abscissa indices where at least one sample was excluded (non-positive denominator).
    pub flagged: Vec<usize>,
}

impl MeasureCurve {
    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }
    pub fn min(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

/// ∫₀ʰ |c₀ + c₁t + c₂t²| dt, splitting at real roots.
fn abs_quadratic_integral(c: [f64; 3], h: f64) -> f64 {
    let prim = |t: f64| ((c[2] / 3.0 * t + c[1] / 2.0) * t + c[0]) * t;
    let mut cuts = vec![0.0, h];
    if c[2].abs() > 0.0 {
        let disc = c[1] * c[1] - 4.0 * c[2] * c[0];
        if disc > 0.0 {
            let sq = disc.sqrt();
            // numerically stable pair
            let q = -0.5 * (c[1] + c[1].signum() * sq);
            for r in [q / c[2], if q != 0.0 { c[0] / q } else { f64::NAN }] {
                if r > 0.0 && r < h {
                    cuts.push(r);
                }
            }
        }
    } else if c[1] != 0.0 {
        let r = -c[0] / c[1];
        if r > 0.0 && r < h {
            cuts.push(r);
        }
    }
    cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    cuts.windows(2).map(|w| (prim(w[1]) - prim(w[0])).abs()).sum()
}

/// ∂²F/∂i∂γ at (ζγ, γ) inside surface cell (k, l), F(i, γ) = S(i/γ, γ).
fn mixed_current_partial(s: &Surface2D, k: usize, l: usize, zeta: f64, gamma: f64) -> f64 {
    let i = Jet::var1(zeta * gamma);
    let g = Jet::var2(gamma);
    s.eval_cell(k, l, i / g, g).e12
}

/// m₀(γ) = −½∫|∂²λ_s/∂i∂γ|(β, γ) dβ − ∂λ_se/∂i(γ, γ), exact per cell.
pub fn m0_measure(lambda_s: &Surface2D, gammas: &[f64]) -> MeasureCurve {
    let zk = &lambda_s.zeta_knots;
    let values = gammas
        .iter()
        .map(|&g| {
            if g <= 1e-300 {
                return 0.0;
            }
            let l = locate(&lambda_s.gamma_knots, g);
            let mut integral = 0.0;
            for k in 0..lambda_s.zeta_cells() {
                let h = zk[k + 1] - zk[k];
                let q0 = mixed_current_partial(lambda_s, k, l, zk[k], g);
                let qm = mixed_current_partial(lambda_s, k, l, zk[k] + 0.5 * h, g);
                let q1 = mixed_current_partial(lambda_s, k, l, zk[k + 1], g);
                // exact quadratic through three points in t = ζ − ζ_k
                let c2 = 2.0 * (q1 - 2.0 * qm + q0) / (h * h);
                let c1 = (q1 - q0) / h - c2 * h;
                integral += abs_quadratic_integral([q0, c1, c2], h);
            }
            let slope = |i: f64| lambda_s.eval_current(Jet::var1(i), Jet::cst(g)).e1;
            let dse = 0.5 * (slope(g) - slope(-g));
            -0.5 * g * integral - dse
        })
        .collect();
    MeasureCurve {
        abscissa: gammas.to_vec(),
        values,
        flagged: vec![],
    }
}

/// Even/odd parts of λ_s at (ζγ, γ) plus λ_SE.
fn even_odd(lambda_s: &Surface2D, zeta: f64, gamma: f64) -> (f64, f64, f64) {
    let se = |i: f64, g: f64| 0.5 * (lambda_s.eval_current(i, g) + lambda_s.eval_current(-i, g));
    let i = zeta * gamma;
    let lse = se(i, gamma);
    let lso = 0.5 * (lambda_s.eval_current(i, gamma) - lambda_s.eval_current(-i, gamma));
    let lbig = lse + se(0.0, i) - se(0.0, gamma);
    (lse, lso, lbig)
}

/// m₁, m₂, m₃ over `zetas` (in [0, 1]) maximised over `gammas`.
pub fn approximate_measures(lambda_s: &Surface2D, zetas: &[f64], gammas: &[f64]) -> [MeasureCurve; 3] {
    let mut out: [MeasureCurve; 3] = Default::default();
    for c in out.iter_mut() {
        c.abscissa = zetas.to_vec();
    }
    for (zi, &z) in zetas.iter().enumerate() {
        let mut best = [0.0f64; 3];
        let mut skipped = [false; 3];
        for &g in gammas {
            let (lse, lso, lbig) = even_odd(lambda_s, z, g);
            let terms = [(lso.abs(), lse), ((lbig - lso).abs(), lse - lso), ((lbig + lso).abs(), lse + lso)];
            for (j, (num, den)) in terms.into_iter().enumerate() {
                if den <= MEASURE_EPS {
                    skipped[j] = true;
                } else {
                    best[j] = best[j].max(num / den);
                }
            }
        }
        for j in 0..3 {
            out[j].values.push(best[j]);
            if skipped[j] {
                out[j].flagged.push(zi);
            }
        }
    }
    out
}

/// m̂(ζ; a) = (1 − aζe^{−a} − e^{−aζ}) / (1 − ae^{−a} − e^{−a}).
pub fn m_hat<S: Scalar>(zeta: S, a: f64) -> S {
    let ea = (-a).exp();
    let den = 1.0 - a * ea - ea;
    (S::cst(1.0) - zeta * (a * ea) - (zeta * -a).exp()) / den
}

/// Odd splitting function m(ζ) = sgn(ζ)·m̂(|ζ|).
pub fn splitting<S: Scalar>(zeta: S, a: f64) -> S {
    if zeta.re() < 0.0 {
        -m_hat(-zeta, a)
    } else {
        m_hat(zeta, a)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplittingChoice {
    pub a: f64,
    pub zetas: Vec<f64>,
    /// max(m₁, m₂, m₃) per ζ.
    pub required: Vec<f64>,
    pub m_hat: Vec<f64>,
    /// Smallest m̂ − required over ζ.
    pub margin: f64,
}

pub fn select_splitting(measures: &[MeasureCurve; 3], candidates: &[f64]) -> Result<SplittingChoice> {
    let zetas = measures[0].abscissa.clone();
    if measures.iter().any(|m| m.values.len() != zetas.len()) {
        return Err(Error::Invalid("measure curves sampled on different zeta grids".into()));
    }
    let required: Vec<f64> = (0..zetas.len())
        .map(|k| measures.iter().map(|m| m.values[k]).fold(0.0, f64::max))
        .collect();
    let worst = required.iter().cloned().fold(0.0, f64::max);
    if worst > 1.0 + 1e-12 {
        return Err(Error::Infeasible {
            detail: format!("approximate measures exceed 1 (max {worst:.6}); no splitting function can satisfy them"),
        });
    }
    let mut sorted = candidates.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut best_violation = f64::NEG_INFINITY;
    for &a in &sorted {
        if !(a > 0.0) {
            continue;
        }
        let mh: Vec<f64> = zetas.iter().map(|&z| m_hat(z, a)).collect();
        let margin = mh.iter().zip(&required).map(|(m, r)| m - r).fold(f64::INFINITY, f64::min);
        if margin >= -1e-12 {
            return Ok(SplittingChoice {
                a,
                zetas,
                required,
                m_hat: mh,
                margin,
            });
        }
        best_violation = best_violation.max(margin);
    }
    Err(Error::Infeasible {
        detail: format!("no candidate a satisfies m̂ ≥ max(m₁, m₂, m₃); best margin {best_violation:.3e}"),
    })
}

// ---------------------------------------------------------------------------
// fitted model

/// Identified time-periodic Preisach model.
///
/// `lambda_s` and `lambda_c` are native surfaces S(ζ, γ); the centre line is
/// the odd part of the λ_c slice at the largest tested peak current.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub schema_version: u32,
    pub lambda_s: Surface2D,
    pub lambda_c: Surface2D,
    pub centre_slice: Spline1D,
    pub gamma_max: f64,
    pub a: f64,
}

impl FittedModel {
    pub fn lambda_s_at<S: Scalar>(&self, i: S, gamma: S) -> S {
        self.lambda_s.eval_current(i, gamma)
    }

    fn h<S: Scalar>(&self, beta: S, alpha: S) -> S {
        let (b, a) = (beta.re(), alpha.re());
        if a + b >= 0.0 {
            if a <= 0.0 {
                return S::cst(0.0);
            }
            (splitting(beta / alpha, self.a) + 1.0) * self.lambda_s_at(beta, alpha) * 0.5
        } else {
            let g = -beta;
            (S::cst(1.0) - splitting(alpha / g, self.a)) * self.lambda_s_at(alpha, g) * 0.5
        }
    }

    fn cl<S: Scalar>(&self, i: S) -> S {
        let z = i / self.gamma_max;
        (self.centre_slice.eval(z) - self.centre_slice.eval(-z)) * 0.5
    }

    /// λ_Δc(i, γ) = λ_c(i, γ) − λ_cl(i).
    pub fn delta_common<S: Scalar>(&self, i: S, gamma: S) -> S {
        self.lambda_c.eval_current(i, gamma) - self.cl(i)
    }

    fn c<S: Scalar>(&self, i: S, beta_m: S, alpha_m: S) -> S {
        let shift = (beta_m + alpha_m) * 0.5;
        let half = (alpha_m - beta_m) * 0.5;
        self.cl(i) + self.delta_common(i - shift, half) + self.h(beta_m, i) - self.h(i, alpha_m)
    }
}

impl HysteresisModel for FittedModel {
    fn current_limit(&self) -> f64 {
        self.gamma_max
    }
    fn shape(&self, beta: f64, alpha: f64) -> f64 {
        self.h(beta, alpha)
    }
    fn shape_jet(&self, beta: Jet, alpha: Jet) -> Jet {
        self.h(beta, alpha)
    }
    fn common(&self, i: f64, beta_m: f64, alpha_m: f64) -> f64 {
        self.c(i, beta_m, alpha_m)
    }
    fn common_jet(&self, i: Jet, beta_m: Jet, alpha_m: Jet) -> Jet {
        self.c(i, beta_m, alpha_m)
    }
    fn centre_line(&self, i: f64) -> f64 {
        self.cl(i)
    }
    fn centre_line_jet(&self, i: Jet) -> Jet {
        self.cl(i)
    }
}

/// Shape function from λ_s and the splitting parameter; the common mode is left at zero.
pub fn build_shape_function(lambda_s: &Surface2D, a: f64) -> FittedModel {
    let zeros = Surface2D::zeros(lambda_s.zeta_knots.clone(), lambda_s.gamma_knots.clone());
    FittedModel {
        schema_version: MODEL_SCHEMA_VERSION,
        lambda_s: lambda_s.clone(),
        centre_slice: zeros.slice_at_gamma(zeros.gamma_max()),
        lambda_c: zeros,
        gamma_max: lambda_s.gamma_max(),
        a,
    }
}

/// Complete a shape-only model with the common mode from λ_c.
pub fn build_common_mode(lambda_c: &Surface2D, shape: FittedModel, gamma_max: f64) -> Result<FittedModel> {
    if !lambda_c.same_grid(&shape.lambda_s) {
        return Err(Error::Invalid("common-mode surface grid differs from the shape surface".into()));
    }
    Ok(FittedModel {
        centre_slice: lambda_c.slice_at_gamma(gamma_max),
        lambda_c: lambda_c.clone(),
        gamma_max,
        ..shape
    })
}

// ---------------------------------------------------------------------------
// pipeline

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub zeta_cells: usize,
    /// γ samples for the max in m₁..m₃ and for m₀.
    pub gamma_samples: usize,
    /// ζ samples on [0, 1] for m₁..m₃.
    pub zeta_samples: usize,
    pub a_candidates: Vec<f64>,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            zeta_cells: 300,
            gamma_samples: 200,
            zeta_samples: 201,
            a_candidates: A_LADDER.to_vec(),
        }
    }
}

/// One recorded open-circuit test.
#[derive(Clone, Debug)]
pub struct TestRecord {
    pub voltage: Vec<f64>,
    pub current: Vec<f64>,
    pub sample_interval: f64,
    pub period: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TestFitReport {
    pub test_index: usize,
    pub gamma_m: f64,
    pub samples_rising: usize,
    pub samples_dropping: usize,
    pub rms_rising: f64,
    pub rms_dropping: f64,
    pub kkt_residual: f64,
    pub pivot_ratio: f64,
    pub closure_residual: f64,
    pub monotonicity_violations: usize,
    pub symmetrize: Option<[f64; 3]>,
    pub diagnostics: Vec<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FitReport {
    pub tests: Vec<TestFitReport>,
    pub surface_objective_rising: f64,
    pub surface_objective_dropping: f64,
    pub surface_condition: f64,
    pub continuity_defect: f64,
    pub min_lambda_s: f64,
    pub m0: MeasureCurve,
    pub measures: [MeasureCurve; 3],
    pub splitting: SplittingChoice,
}

#[derive(Clone, Debug)]
pub struct FitOutcome {
    pub model: FittedModel,
    pub report: FitReport,
    pub rising: Surface2D,
    pub dropping: Surface2D,
}

fn fit_one(data: &LoopBranchData, zk: &[f64]) -> Result<(Spline1D, Spline1D, TestFitReport)> {
    let g = data.gamma_m;
    if !(g > 0.0) {
        return Err(Error::Invalid(format!("test {}: zero peak current", data.test_index)));
    }
    let to_zeta = |b: &[(f64, f64)]| b.iter().map(|&(i, l)| (i / g, l)).collect::<Vec<_>>();
    let lo = data.rising[0].1;
    let hi = data.rising.last().unwrap().1;
    let r = fit_branch_spline(&to_zeta(&data.rising), zk, (lo, hi)).map_err(|e| e.at("rising branch fit"))?;
    let d = fit_branch_spline(&to_zeta(&data.dropping), zk, (lo, hi)).map_err(|e| e.at("dropping branch fit"))?;
    let mut diagnostics = vec![];
    if r.sparse || d.sparse {
        diagnostics.push("fewer than 4 samples per knot interval on average".to_string());
    }
    if r.kkt_residual.max(d.kkt_residual) > 1e-9 {
        diagnostics.push(format!("KKT residual {:.2e} above 1e-9", r.kkt_residual.max(d.kkt_residual)));
    }
    let report = TestFitReport {
        test_index: data.test_index,
        gamma_m: g,
        samples_rising: data.rising.len(),
        samples_dropping: data.dropping.len(),
        rms_rising: r.rms_residual,
        rms_dropping: d.rms_residual,
        kkt_residual: r.kkt_residual.max(d.kkt_residual),
        pivot_ratio: r.pivot_ratio.max(d.pivot_ratio),
        closure_residual: data.closure_residual,
        monotonicity_violations: data.monotonicity_violations,
        symmetrize: None,
        diagnostics,
    };
    Ok((r.spline, d.spline, report))
}

/// Fit a model from already split symmetric major loops.
pub fn fit_from_branches(branches: &[LoopBranchData], cfg: &FitConfig) -> Result<FitOutcome> {
    if branches.is_empty() {
        return Err(Error::Invalid("no tests supplied".into()));
    }
    if cfg.zeta_cells < 1 || cfg.gamma_samples < 1 || cfg.zeta_samples < 2 {
        return Err(Error::Invalid("fit grid sizes must be positive".into()));
    }
    let mut order: Vec<&LoopBranchData> = branches.iter().collect();
    order.sort_by(|a, b| a.gamma_m.partial_cmp(&b.gamma_m).unwrap());
    if order.windows(2).any(|w| !(w[1].gamma_m > w[0].gamma_m)) {
        return Err(Error::Invalid("tests must have distinct peak currents".into()));
    }
    let zk = uniform_knots(-1.0, 1.0, cfg.zeta_cells);
    let fits: Vec<_> = order
        .par_iter()
        .map(|d| fit_one(d, &zk))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| e.at("branch fitting"))?;
    let mut gk = vec![0.0];
    let mut rs = vec![Spline1D::zero(zk.clone())];
    let mut ds = vec![Spline1D::zero(zk.clone())];
    let mut tests = vec![];
    for (r, d, rep) in fits {
        gk.push(rep.gamma_m);
        rs.push(r);
        ds.push(d);
        tests.push(rep);
    }
    let sr = assemble_surface(&rs, &gk).map_err(|e| e.at("rising surface"))?;
    let sd = assemble_surface(&ds, &gk).map_err(|e| e.at("dropping surface"))?;
    let (ls, lc) = diff_common_split(&sr.surface, &sd.surface)?;
    let gamma_max = *gk.last().unwrap();
    let gammas: Vec<f64> = (1..=cfg.gamma_samples)
        .map(|k| gamma_max * k as f64 / cfg.gamma_samples as f64)
        .collect();
    let zetas = uniform_knots(0.0, 1.0, cfg.zeta_samples - 1);
    let m0 = m0_measure(&ls, &gammas);
    let measures = approximate_measures(&ls, &zetas, &gammas);
    let splitting = select_splitting(&measures, &cfg.a_candidates).map_err(|e| e.at("splitting selection"))?;
    let shape = build_shape_function(&ls, splitting.a);
    let model = build_common_mode(&lc, shape, gamma_max)?;
    let min_lambda_s = gammas
        .iter()
        .flat_map(|&g| zetas.iter().flat_map(move |&z| [z * g, -z * g].map(|i| (i, g))))
        .map(|(i, g)| ls.eval_current(i, g))
        .fold(f64::INFINITY, f64::min);
    let report = FitReport {
        tests,
        surface_objective_rising: sr.objective,
        surface_objective_dropping: sd.objective,
        surface_condition: sr.condition,
        continuity_defect: sr.surface.continuity_defect(3).max(sd.surface.continuity_defect(3)),
        min_lambda_s,
        m0,
        measures,
        splitting,
    };
    Ok(FitOutcome {
        model,
        report,
        rising: sr.surface,
        dropping: sd.surface,
    })
}

/// Full pipeline from raw recordings.
pub fn fit_model(records: &[TestRecord], cfg: &FitConfig) -> Result<FitOutcome> {
    let prepared: Vec<(LoopBranchData, [f64; 3], Option<String>)> = records
        .par_iter()
        .enumerate()
        .map(|(k, r)| {
            let cleaned = clean_waveforms(&r.voltage, &r.current, r.sample_interval, r.period).map_err(|e| e.at("cleaning"))?;
            let sym = symmetrize_current(&cleaned.current).map_err(|e| e.at("symmetrisation"))?;
            let split = split_major_loop(k, &sym.current, &cleaned.flux).map_err(|e| e.at("loop splitting"))?;
            Ok((split, [sym.a, sym.b, sym.c], sym.fallback))
        })
        .collect::<Result<Vec<_>>>()?;
    let branches: Vec<LoopBranchData> = prepared.iter().map(|p| p.0.clone()).collect();
    let mut out = fit_from_branches(&branches, cfg)?;
    for t in out.report.tests.iter_mut() {
        let p = &prepared[t.test_index];
        t.symmetrize = Some(p.1);
        if let Some(msg) = &p.2 {
            t.diagnostics.push(msg.clone());
        }
    }
    Ok(out)
}

/// Symmetric major-loop branches of a model driven by `γ·shape(t)` for each γ.
/// `shape` must be a single-hump waveform on one period with values in [−1, 1].
pub fn synthetic_branches<M: HysteresisModel + ?Sized>(
    model: &M,
    gammas: &[f64],
    samples_per_period: usize,
    shape: impl Fn(f64) -> f64,
) -> Result<Vec<LoopBranchData>> {
    gammas
        .iter()
        .enumerate()
        .map(|(k, &g)| {
            let i = PeriodicSignal::from_fn(samples_per_period, 1.0, |t| g * shape(t))?;
            let lam = crate::preisach::simulate(model, &i)?;
            split_major_loop(k, &i, &lam)
        })
        .collect()
}
