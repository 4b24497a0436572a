//! Empirical coupling matrices from phase-swept voltage perturbations.
//!
//! A device maps one period of voltage to its periodic steady-state current.
//! Each sweep point adds `m·Δv·√2·cos(mωt + 2πφ/N_φ)` to the base drive; the
//! apparent admittances `(Iₙ − I_B,ₙ)/ΔVₘ` of one (n, m) entry lie on a circle
//! centred at Y⁽¹⁾ₙₘ with radius |Y⁽²⁾ₙₘ|, traced twice as φ goes round.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hps::{hps_forward, hps_inverse, max_order, HarmonicVector, PeriodicSignal};
use crate::linearize::DcPolicy;
use crate::preisach::{brent, evaluate, global_extrema, invert_branch, CentreLine, HysteresisModel, StaircaseMemory};

/// Voltage-driven time-domain model.
pub trait VoltageDevice: Send + Sync {
    /// Periodic steady-state current for one period of applied voltage.
    fn steady_current(&self, v: &PeriodicSignal) -> Result<PeriodicSignal>;
}

/// Flux linkage with zero mean, integrated in the frequency domain.
pub fn integrate_voltage(v: &PeriodicSignal) -> Result<PeriodicSignal> {
    let order = max_order(v.len());
    let h = hps_forward(v, order)?;
    let scale = h.coeffs().iter().map(|c| c.norm()).fold(0.0, f64::max);
    if h.get(0).norm() > 1e-9 * scale.max(1e-300) {
        return Err(Error::Invalid(format!(
            "applied voltage has a DC component of {:.3e} V; no periodic flux exists",
            h.get(0).re
        )));
    }
    let omega = v.omega();
    let lam = (0..=order)
        .map(|n| {
            if n == 0 {
                Complex64::new(0.0, 0.0)
            } else {
                h.get(n) / Complex64::new(0.0, n as f64 * omega)
            }
        })
        .collect();
    hps_inverse(&HarmonicVector::new(lam, omega), v.len())
}

/// How the free DC flux level of a voltage-driven device is fixed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FluxAnchor {
    /// Mean flux zero (symmetric currents under half-wave symmetry).
    #[default]
    FluxMean,
    /// Flux offset chosen so the current has zero mean.
    CurrentMean,
}

impl From<DcPolicy> for FluxAnchor {
    fn from(p: DcPolicy) -> Self {
        match p {
            DcPolicy::Excluded => FluxAnchor::FluxMean,
            DcPolicy::FreeFlux => FluxAnchor::CurrentMean,
        }
    }
}

/// Preisach model driven by voltage: flux from v, then branch inversion sample by sample.
pub struct PreisachDevice<M> {
    pub model: M,
    pub anchor: FluxAnchor,
}

impl<M: HysteresisModel> PreisachDevice<M> {
    pub fn new(model: M, anchor: FluxAnchor) -> Self {
        PreisachDevice { model, anchor }
    }

    fn tips(&self, beta: f64, alpha: f64) -> Result<(f64, f64)> {
        let lo = StaircaseMemory::at_minimum(beta, alpha)?;
        let hi = StaircaseMemory::at_maximum(beta, alpha)?;
        Ok((evaluate(&self.model, &lo), evaluate(&self.model, &hi)))
    }

    fn centre_inverse(&self, lam: f64) -> Result<f64> {
        let lim = self.model.current_limit();
        let f = |i: f64| self.model.centre_line(i) - lam;
        let (fa, fb) = (f(-lim), f(lim));
        if fa.signum() == fb.signum() {
            return Err(Error::Saturation {
                target: lam,
                lower: fa + lam,
                upper: fb + lam,
            });
        }
        Ok(brent(f, -lim, lim, fa, fb, 1e-15 * lim, 0.0))
    }

    /// Major-loop extremes (βₘ, αₘ) whose tips carry flux `lam_min`, `lam_max`.
    pub fn loop_for_flux(&self, lam_min: f64, lam_max: f64) -> Result<(f64, f64)> {
        let lim = self.model.current_limit();
        let span = lam_max - lam_min;
        let mut x = [self.centre_inverse(lam_min)?, self.centre_inverse(lam_max)?];
        let tol = 1e-13 * (lam_max.abs() + lam_min.abs()).max(1e-300);
        let resid = |x: &[f64; 2]| -> Result<[f64; 2]> {
            let (a, b) = self.tips(x[0], x[1])?;
            Ok([a - lam_min, b - lam_max])
        };
        let mut r = resid(&x)?;
        let mut history = vec![r[0].abs().max(r[1].abs())];
        for _ in 0..60 {
            let norm = r[0].abs().max(r[1].abs());
            if norm <= tol {
                return Ok((x[0], x[1]));
            }
            let hstep = 1e-7 * (x[1] - x[0]).abs().max(1e-12);
            let mut jac = [[0.0; 2]; 2];
            for c in 0..2 {
                let mut xp = x;
                let mut xm = x;
                xp[c] += hstep;
                xm[c] -= hstep;
                let (rp, rm) = (resid(&xp)?, resid(&xm)?);
                for row in 0..2 {
                    jac[row][c] = (rp[row] - rm[row]) / (2.0 * hstep);
                }
            }
            let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
            if !(det.abs() > 0.0) {
                return Err(Error::Singular {
                    condition: f64::INFINITY,
                    context: "major-loop tip solve".into(),
                });
            }
            let dx = [
                -(jac[1][1] * r[0] - jac[0][1] * r[1]) / det,
                -(-jac[1][0] * r[0] + jac[0][0] * r[1]) / det,
            ];
            let mut t = 1.0;
            let mut moved = false;
            for _ in 0..40 {
                let xn = [x[0] + t * dx[0], x[1] + t * dx[1]];
                if xn[0] < xn[1] && xn[0] >= -lim && xn[1] <= lim {
                    let rn = resid(&xn)?;
                    if rn[0].abs().max(rn[1].abs()) < norm {
                        x = xn;
                        r = rn;
                        moved = true;
                        break;
                    }
                }
                t *= 0.5;
            }
            history.push(r[0].abs().max(r[1].abs()));
            if !moved {
                if x[0] <= -lim * (1.0 - 1e-12) || x[1] >= lim * (1.0 - 1e-12) {
                    return Err(Error::Saturation {
                        target: if r[0].abs() > r[1].abs() { lam_min } else { lam_max },
                        lower: lam_min - span,
                        upper: lam_max + span,
                    });
                }
                break;
            }
        }
        Err(Error::NoConvergence {
            iterations: history.len(),
            history,
        })
    }

    /// Current for a given flux waveform (no offset adjustment).
    pub fn current_for_flux(&self, lam: &PeriodicSignal) -> Result<PeriodicSignal> {
        let s = lam.samples();
        // tied extremes are physical for a device (a repeated return to the tip)
        let e = global_extrema(s);
        let (beta, alpha) = self.loop_for_flux(s[e.min_index], s[e.max_index])?;
        let n = s.len();
        let mut out = vec![0.0; n];
        let mut mem = StaircaseMemory::at_minimum_stamped(beta, e.min_index, alpha, e.max_index)?;
        out[e.min_index] = beta;
        for step in 1..n {
            let k = (e.min_index + step) % n;
            let i = if k == e.max_index {
                alpha
            } else {
                invert_branch(&self.model, &mem, s[k])?
            };
            mem.advance(i, k)?;
            out[k] = i;
        }
        lam.with_samples(out)
    }
}

impl<M: HysteresisModel> VoltageDevice for PreisachDevice<M> {
    fn steady_current(&self, v: &PeriodicSignal) -> Result<PeriodicSignal> {
        let lam = integrate_voltage(v)?;
        match self.anchor {
            FluxAnchor::FluxMean => self.current_for_flux(&lam),
            FluxAnchor::CurrentMean => {
                let span = lam.samples().iter().cloned().fold(f64::MIN, f64::max)
                    - lam.samples().iter().cloned().fold(f64::MAX, f64::min);
                let mean_for = |d: f64| -> Result<f64> { Ok(self.current_for_flux(&lam.map(|x| x + d))?.mean()) };
                let g0 = mean_for(0.0)?;
                if g0 == 0.0 {
                    return self.current_for_flux(&lam);
                }
                // the current mean increases with the flux offset
                let mut w = 1e-3 * span;
                let mut bracket = None;
                for _ in 0..40 {
                    let d = if g0 > 0.0 { -w } else { w };
                    let g = mean_for(d)?;
                    if g.signum() != g0.signum() {
                        bracket = Some((d, g));
                        break;
                    }
                    w *= 2.0;
                }
                let (d1, g1) = bracket.ok_or_else(|| {
                    Error::Invalid("no flux offset gives a zero-mean current".into())
                })?;
                let f = |d: f64| mean_for(d).unwrap_or(f64::NAN);
                let d = brent(f, 0.0, d1, g0, g1, 1e-15 * span, 0.0);
                self.current_for_flux(&lam.map(|x| x + d))
            }
        }
    }
}

/// λ = L·i.
#[derive(Clone, Copy, Debug)]
pub struct LinearInductor {
    pub inductance: f64,
}

impl VoltageDevice for LinearInductor {
    fn steady_current(&self, v: &PeriodicSignal) -> Result<PeriodicSignal> {
        Ok(integrate_voltage(v)?.map(|l| l / self.inductance))
    }
}

/// Series resistance with a memoryless saturating inductance,
/// `v = R·i + dλ/dt`, `λ = λ_cl(i)`, time-stepped until periodic.
#[derive(Clone, Debug)]
pub struct RlDevice {
    pub resistance: f64,
    pub centre: CentreLine,
    pub settle_periods: usize,
    pub max_periods: usize,
    pub drift_tol: f64,
}

impl RlDevice {
    pub fn new(resistance: f64, centre: CentreLine) -> Self {
        RlDevice {
            resistance,
            centre,
            settle_periods: 5,
            max_periods: 500,
            drift_tol: 1e-9,
        }
    }

    fn step(&self, lam_target: f64, guess: f64, half_dt_r: f64) -> f64 {
        // solve λ_cl(i) + (dt/2)·R·i = lam_target
        let mut i = guess;
        for _ in 0..50 {
            let v = self.centre.eval(crate::jet::Jet::var1(i));
            let f = v.re + half_dt_r * i - lam_target;
            let d = v.e1 + half_dt_r;
            let di = f / d;
            i -= di;
            if di.abs() <= 1e-15 * i.abs().max(1e-300) {
                break;
            }
        }
        i
    }
}

impl VoltageDevice for RlDevice {
    fn steady_current(&self, v: &PeriodicSignal) -> Result<PeriodicSignal> {
        let n = v.len();
        let dt = v.sample_interval();
        let s = v.samples();
        let h = 0.5 * dt * self.resistance;
        let mut i = 0.0;
        let mut lam = self.centre.eval(i);
        let mut prev: Option<Vec<f64>> = None;
        let mut history = vec![];
        for period in 0..self.max_periods {
            let mut cur = Vec::with_capacity(n);
            for k in 0..n {
                cur.push(i);
                let v0 = s[k];
                let v1 = s[(k + 1) % n];
                // λₖ₊₁ + h·iₖ₊₁ = λₖ − h·iₖ + (dt/2)(vₖ + vₖ₊₁)
                let rhs = lam - h * i + 0.5 * dt * (v0 + v1);
                i = self.step(rhs, i, h);
                lam = self.centre.eval(i);
            }
            if let Some(p) = &prev {
                let scale = cur.iter().map(|x| x.abs()).fold(0.0, f64::max).max(1e-300);
                let drift = cur.iter().zip(p).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / scale;
                history.push(drift);
                if period + 1 >= self.settle_periods && drift < self.drift_tol {
                    return v.with_samples(cur);
                }
            }
            prev = Some(cur);
        }
        Err(Error::NoConvergence {
            iterations: self.max_periods,
            history,
        })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PerturbationRecord {
    pub harmonic: usize,
    pub phase_index: usize,
    /// Peak amplitude m·Δv·√2 (V).
    pub magnitude: f64,
    /// Measured current harmonics.
    pub current: Vec<Complex64>,
}

impl PerturbationRecord {
    /// Applied voltage phasor ΔVₘ.
    pub fn applied(&self, nphi: usize) -> Complex64 {
        Complex64::from_polar(self.magnitude, 2.0 * PI * self.phase_index as f64 / nphi as f64)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepFailure {
    pub harmonic: usize,
    pub phase_index: usize,
    pub error: String,
}

#[derive(Clone, Debug)]
pub struct SweepSettings {
    pub dv: f64,
    pub harmonics: Vec<usize>,
    pub nphi: usize,
    pub order: usize,
}

impl Default for SweepSettings {
    fn default() -> Self {
        SweepSettings {
            dv: 2.0,
            harmonics: (1..=11).collect(),
            nphi: 12,
            order: 11,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Sweep {
    pub settings: SweepSettings,
    pub omega: f64,
    pub base_current: HarmonicVector,
    pub base_current_samples: PeriodicSignal,
    pub records: Vec<PerturbationRecord>,
    pub failures: Vec<SweepFailure>,
}

/// Apply every (m, φ) perturbation to `v_base` and record the current harmonics.
pub fn perturb_sweep<D: VoltageDevice + ?Sized>(device: &D, v_base: &PeriodicSignal, settings: &SweepSettings) -> Result<Sweep> {
    if settings.nphi < 3 {
        return Err(Error::Invalid(format!("at least 3 phase steps are needed, got {}", settings.nphi)));
    }
    let order = settings.order;
    if let Some(&m) = settings.harmonics.iter().find(|&&m| m == 0 || m > order) {
        return Err(Error::Invalid(format!("perturbation harmonic {m} outside 1..={order}")));
    }
    let base = device.steady_current(v_base).map_err(|e| e.at("base drive"))?;
    let base_h = hps_forward(&base, order)?;
    let points: Vec<(usize, usize)> = settings
        .harmonics
        .iter()
        .flat_map(|&m| (0..settings.nphi).map(move |p| (m, p)))
        .collect();
    let n = v_base.len();
    let outcomes: Vec<std::result::Result<PerturbationRecord, SweepFailure>> = points
        .par_iter()
        .map(|&(m, p)| {
            let magnitude = m as f64 * settings.dv * 2f64.sqrt();
            let phase = 2.0 * PI * p as f64 / settings.nphi as f64;
            let v: Vec<f64> = (0..n)
                .map(|k| {
                    let th = 2.0 * PI * ((m * k) % n) as f64 / n as f64;
                    v_base.samples()[k] + magnitude * (th + phase).cos()
                })
                .collect();
            let run = || -> Result<PerturbationRecord> {
                let i = device.steady_current(&v_base.with_samples(v)?)?;
                Ok(PerturbationRecord {
                    harmonic: m,
                    phase_index: p,
                    magnitude,
                    current: hps_forward(&i, order)?.coeffs().to_vec(),
                })
            };
            run().map_err(|e| SweepFailure {
                harmonic: m,
                phase_index: p,
                error: e.to_string(),
            })
        })
        .collect();
    let mut records = vec![];
    let mut failures = vec![];
    for o in outcomes {
        match o {
            Ok(r) => records.push(r),
            Err(f) => failures.push(f),
        }
    }
    Ok(Sweep {
        settings: settings.clone(),
        omega: v_base.omega(),
        base_current: base_h,
        base_current_samples: base,
        records,
        failures,
    })
}

/// Circle-fit estimate of a coupling-matrix pair.
#[derive(Clone, Debug)]
pub struct FcmEstimate {
    pub y1: DMatrix<Complex64>,
    pub y2: DMatrix<Complex64>,
    /// Circularity metric; `None` where |Y⁽²⁾| is below the noise floor or unmeasured.
    pub m_metric: Vec<Vec<Option<f64>>>,
    /// The phase of Y⁽²⁾ is meaningful.
    pub phase_defined: Vec<Vec<bool>>,
    /// Columns with a complete phase sweep.
    pub measured: Vec<bool>,
}

impl FcmEstimate {
    pub fn order(&self) -> usize {
        self.y1.nrows() - 1
    }
}

/// Relative (to the column's largest apparent admittance) radius below which ∠Y⁽²⁾ is undefined.
pub const PHASE_NOISE_FLOOR: f64 = 1e-9;

/// Apparent admittances `Y_φ = (I_{n,m,φ} − I_B,ₙ)/ΔVₘ` of one column, indexed [φ][n].
fn apparent(records: &[&PerturbationRecord], base: &[Complex64], nphi: usize, dim: usize) -> Vec<Vec<Complex64>> {
    let mut out = vec![vec![Complex64::new(0.0, 0.0); dim]; nphi];
    for r in records {
        let dv = r.applied(nphi);
        for n in 0..dim {
            out[r.phase_index][n] = (r.current[n] - base[n]) / dv;
        }
    }
    out
}

pub fn circle_fit(records: &[PerturbationRecord], base: &HarmonicVector, nphi: usize) -> Result<FcmEstimate> {
    if nphi < 3 {
        return Err(Error::Invalid(format!("at least 3 phase steps are needed, got {nphi}")));
    }
    let dim = base.len();
    let zero = Complex64::new(0.0, 0.0);
    let mut y1 = DMatrix::from_element(dim, dim, zero);
    let mut y2 = DMatrix::from_element(dim, dim, zero);
    let mut phase_defined = vec![vec![false; dim]; dim];
    let mut m_metric = vec![vec![None; dim]; dim];
    let mut measured = vec![false; dim];
    for m in 0..dim {
        let col: Vec<&PerturbationRecord> = records.iter().filter(|r| r.harmonic == m).collect();
        let mut seen = vec![false; nphi];
        for r in &col {
            if r.current.len() != dim {
                return Err(Error::Dimension {
                    expected: dim,
                    got: r.current.len(),
                });
            }
            if r.phase_index >= nphi {
                return Err(Error::Invalid(format!("phase index {} outside 0..{nphi}", r.phase_index)));
            }
            seen[r.phase_index] = true;
        }
        if !seen.iter().all(|&s| s) {
            continue;
        }
        measured[m] = true;
        let yp = apparent(&col, base.coeffs(), nphi, dim);
        let scale = yp.iter().flatten().map(|c| c.norm()).fold(0.0, f64::max);
        for n in 0..dim {
            let centre = yp.iter().map(|row| row[n]).sum::<Complex64>() / nphi as f64;
            let radius = yp.iter().map(|row| (row[n] - centre).norm()).sum::<f64>() / nphi as f64;
            y1[(n, m)] = centre;
            if radius <= PHASE_NOISE_FLOOR * scale || radius == 0.0 {
                y2[(n, m)] = Complex64::new(radius, 0.0);
                continue;
            }
            let phasor: Complex64 = yp
                .iter()
                .enumerate()
                .map(|(p, row)| {
                    let d = row[n] - centre;
                    Complex64::from_polar(1.0, d.arg() + 4.0 * PI * p as f64 / nphi as f64)
                })
                .sum();
            let y2nm = Complex64::from_polar(radius, phasor.arg());
            y2[(n, m)] = y2nm;
            phase_defined[n][m] = true;
            m_metric[n][m] = Some(circularity(&yp, n, centre, y2nm, nphi));
        }
    }
    Ok(FcmEstimate {
        y1,
        y2,
        m_metric,
        phase_defined,
        measured,
    })
}

fn circularity(yp: &[Vec<Complex64>], n: usize, y1: Complex64, y2: Complex64, nphi: usize) -> f64 {
    let dev: f64 = yp
        .iter()
        .enumerate()
        .map(|(p, row)| {
            let ideal = y1 + y2 * Complex64::from_polar(1.0, -4.0 * PI * p as f64 / nphi as f64);
            (row[n] - ideal).norm()
        })
        .sum();
    dev / (nphi as f64 * y2.norm())
}

/// Mean deviation from the ideal circle, normalised by N_φ·|Y⁽²⁾|.
pub fn m_metric(records: &[PerturbationRecord], base: &HarmonicVector, estimate: &FcmEstimate, nphi: usize) -> Vec<Vec<Option<f64>>> {
    let dim = base.len();
    let mut out = vec![vec![None; dim]; dim];
    for m in 0..dim {
        if !estimate.measured.get(m).copied().unwrap_or(false) {
            continue;
        }
        let col: Vec<&PerturbationRecord> = records.iter().filter(|r| r.harmonic == m).collect();
        let yp = apparent(&col, base.coeffs(), nphi, dim);
        for n in 0..dim {
            if estimate.phase_defined[n][m] {
                out[n][m] = Some(circularity(&yp, n, estimate.y1[(n, m)], estimate.y2[(n, m)], nphi));
            }
        }
    }
    out
}

/// Sweep and circle fit in one call.
pub fn estimate_fcm<D: VoltageDevice + ?Sized>(device: &D, v_base: &PeriodicSignal, settings: &SweepSettings) -> Result<(Sweep, FcmEstimate)> {
    let sweep = perturb_sweep(device, v_base, settings)?;
    let est = circle_fit(&sweep.records, &sweep.base_current, settings.nphi)?;
    Ok((sweep, est))
}
