//! Harmonic-domain linearisation of the time-periodic Preisach operator.
//!
//! For a perturbation i_B + ψ·w the derivative of the sampled operator at
//! ψ = 0 is linear in the samples of w: every term is a partial of c or h
//! times w evaluated at the live sample or at the sample a staircase corner
//! was created. [`Sensitivity`] stores those (sample, coefficient) pairs once
//! per base point, so each of the 2(N+1) directional derivatives is a sparse
//! dot product followed by an HPS transform.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hps::{
    hps_forward, hps_inverse, invert_fcm, max_order, pack_real_imag, split_real_imag, CouplingMatrixPair, DifferentialOperator,
    HarmonicVector, PeriodicSignal,
};
use crate::preisach::{evaluate, global_extrema, walk_period, HysteresisModel, StaircaseMemory};

/// How the unbounded DC entry of the integral operator is resolved.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DcPolicy {
    /// ΔΛ₀ = 0; the DC-voltage column is reported unbounded.
    #[default]
    #[serde(rename = "dc-excluded")]
    Excluded,
    /// ΔI₀ = 0; ΔΛ₀ is left free and the DC row and column are dropped.
    #[serde(rename = "dc-free-flux")]
    FreeFlux,
}

impl fmt::Display for DcPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DcPolicy::Excluded => "dc-excluded",
            DcPolicy::FreeFlux => "dc-free-flux",
        })
    }
}

impl FromStr for DcPolicy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dc-excluded" => Ok(DcPolicy::Excluded),
            "dc-free-flux" => Ok(DcPolicy::FreeFlux),
            other => Err(Error::Invalid(format!(
                "unknown dc policy `{other}` (expected dc-excluded or dc-free-flux)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Extremum {
    pub index: usize,
    pub value: f64,
    pub is_max: bool,
}

/// Validated operating point.
#[derive(Clone, Debug)]
pub struct BasePoint {
    pub current: PeriodicSignal,
    /// Local extrema of the period in sample order.
    pub extrema: Vec<Extremum>,
    pub global_min: usize,
    pub global_max: usize,
    /// Samples at which historical extrema are wiped out.
    pub wipe_samples: Vec<usize>,
}

impl BasePoint {
    pub fn minima(&self) -> usize {
        self.extrema.iter().filter(|e| !e.is_max).count()
    }
    pub fn maxima(&self) -> usize {
        self.extrema.iter().filter(|e| e.is_max).count()
    }
}

fn invalid_base(condition: char, detail: String) -> Error {
    Error::InvalidBase { condition, detail }
}

/// Check the operating-point conditions and enumerate extrema and wipe events.
pub fn validate_base(i_b: &PeriodicSignal) -> Result<BasePoint> {
    let s = i_b.samples();
    let n = s.len();
    if n < 3 || s.iter().all(|&x| x == s[0]) {
        return Err(Error::Invalid("base current must be a non-constant periodic signal".into()));
    }
    let e = global_extrema(s);
    if e.min_tied || e.max_tied {
        return Err(invalid_base(
            'd',
            format!(
                "global {} value occurs at more than one sample",
                if e.min_tied { "minimum" } else { "maximum" }
            ),
        ));
    }
    // runs of equal samples, starting at the global minimum so no run wraps
    let mut runs: Vec<(usize, usize, f64)> = vec![];
    for step in 0..n {
        let k = (e.min_index + step) % n;
        match runs.last_mut() {
            Some(r) if r.2 == s[k] => r.1 += 1,
            _ => runs.push((k, 1, s[k])),
        }
    }
    let nr = runs.len();
    let mut extrema = vec![];
    for r in 0..nr {
        let prev = runs[(r + nr - 1) % nr].2;
        let next = runs[(r + 1) % nr].2;
        let (start, len, v) = runs[r];
        let is_max = v > prev && v > next;
        let is_min = v < prev && v < next;
        if (is_max || is_min) && len > 1 {
            return Err(invalid_base(
                'b',
                format!("extremum {v} at sample {start} is a plateau of {len} samples"),
            ));
        }
        if is_max || is_min {
            extrema.push(Extremum {
                index: start,
                value: v,
                is_max,
            });
        }
    }
    extrema.sort_by_key(|x| x.index);
    let mut mem = StaircaseMemory::at_minimum_stamped(s[e.min_index], e.min_index, s[e.max_index], e.max_index)?;
    let mut wipes = vec![];
    for step in 1..n {
        let k = (e.min_index + step) % n;
        if mem.advance(s[k], k)?.wiped > 0 {
            wipes.push(k);
        }
    }
    wipes.sort_unstable();
    Ok(BasePoint {
        current: i_b.clone(),
        extrema,
        global_min: e.min_index,
        global_max: e.max_index,
        wipe_samples: wipes,
    })
}

/// Exact derivative of the sampled operator: dλ[k]/dψ = Σ coeff·w[stamp].
#[derive(Clone, Debug)]
pub struct Sensitivity {
    offsets: Vec<usize>,
    stamps: Vec<usize>,
    coeffs: Vec<f64>,
    /// Base flux λ_B.
    pub flux: PeriodicSignal,
}

impl Sensitivity {
    pub fn apply(&self, w: &[f64]) -> Vec<f64> {
        (0..self.offsets.len() - 1)
            .map(|k| {
                (self.offsets[k]..self.offsets[k + 1])
                    .map(|e| self.coeffs[e] * w[self.stamps[e]])
                    .sum()
            })
            .collect()
    }

    /// Terms (stamp, coefficient) of sample `k`.
    pub fn terms(&self, k: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.offsets[k]..self.offsets[k + 1]).map(move |e| (self.stamps[e], self.coeffs[e]))
    }
}

pub fn sensitivity<M: HysteresisModel + ?Sized>(model: &M, base: &BasePoint) -> Result<Sensitivity> {
    let n = base.current.len();
    let mut per: Vec<Vec<(usize, f64)>> = vec![vec![]; n];
    let mut flux = vec![0.0; n];
    let (smin, smax) = (base.global_min, base.global_max);
    walk_period(model, base.current.samples(), |k, mem, _| {
        let i = mem.current();
        let (c, ci, cb, ca) = model.common_partials(i, mem.beta_m(), mem.alpha_m());
        let mut lam = c;
        let terms = &mut per[k];
        terms.push((k, ci));
        terms.push((smin, cb));
        terms.push((smax, ca));
        for (j, v) in mem.vertices().iter().enumerate() {
            let w = if j == 0 { 1.0 } else { 2.0 } * v.orientation;
            let (h, hb, ha) = model.shape_partials(v.beta, v.alpha);
            lam += w * h;
            terms.push((v.beta_stamp, w * hb));
            terms.push((v.alpha_stamp, w * ha));
        }
        flux[k] = lam;
        Ok(())
    })?;
    let mut offsets = Vec::with_capacity(n + 1);
    let mut stamps = vec![];
    let mut coeffs = vec![];
    offsets.push(0);
    for t in per {
        for (s, c) in t {
            if c != 0.0 {
                stamps.push(s);
                coeffs.push(c);
            }
        }
        offsets.push(stamps.len());
    }
    Ok(Sensitivity {
        offsets,
        stamps,
        coeffs,
        flux: base.current.with_samples(flux)?,
    })
}

/// ∂H_t{i_B + ψw}/∂ψ at ψ = 0 on the base sample grid.
pub fn directional_derivative<M: HysteresisModel + ?Sized>(
    model: &M,
    base: &BasePoint,
    w: &PeriodicSignal,
) -> Result<PeriodicSignal> {
    if w.len() != base.current.len() {
        return Err(Error::Dimension {
            expected: base.current.len(),
            got: w.len(),
        });
    }
    let s = sensitivity(model, base)?;
    base.current.with_samples(s.apply(w.samples()))
}

/// cos(2πmk/M) and −sin(2πmk/M) on the sample grid.
fn harmonic_directions(m: usize, samples: usize) -> (Vec<f64>, Vec<f64>) {
    (0..samples)
        .map(|k| {
            let th = 2.0 * PI * ((m * k) % samples) as f64 / samples as f64;
            (th.cos(), -th.sin())
        })
        .unzip()
}

/// (P⁽¹⁾, P⁽²⁾) with ΔΛ = P⁽¹⁾ΔI + P⁽²⁾conj(ΔI).
pub fn linearize_preisach<M: HysteresisModel + ?Sized>(model: &M, base: &BasePoint, order: usize) -> Result<CouplingMatrixPair> {
    let sens = sensitivity(model, base)?;
    linearize_with(&sens, base, order)
}

pub fn linearize_with(sens: &Sensitivity, base: &BasePoint, order: usize) -> Result<CouplingMatrixPair> {
    let m_samples = base.current.len();
    crate::hps::nyquist_check(order, m_samples)?;
    let half = Complex64::new(0.5, 0.0);
    let hj = Complex64::new(0.0, 0.5);
    let cols: Vec<(Vec<Complex64>, Vec<Complex64>)> = (0..=order)
        .into_par_iter()
        .map(|m| {
            let (wc, ws) = harmonic_directions(m, m_samples);
            let dr = hps_forward(&base.current.with_samples(sens.apply(&wc))?, order)?;
            let di = hps_forward(&base.current.with_samples(sens.apply(&ws))?, order)?;
            let p1 = (0..=order).map(|n| half * dr.get(n) - hj * di.get(n)).collect();
            let p2 = (0..=order).map(|n| half * dr.get(n) + hj * di.get(n)).collect();
            Ok((p1, p2))
        })
        .collect::<Result<Vec<_>>>()?;
    let d = order + 1;
    let y1 = DMatrix::from_fn(d, d, |n, m| cols[m].0[n]);
    let y2 = DMatrix::from_fn(d, d, |n, m| cols[m].1[n]);
    let mut pair = CouplingMatrixPair::new(y1, y2)?;
    pair.base_input = Some(hps_forward(&base.current, order)?);
    pair.base_output = Some(hps_forward(&sens.flux, order)?);
    Ok(pair)
}

/// Inverse of a flux pair; with `drop_dc` the DC row and column are removed first.
pub fn invert_flux_pair(p: &CouplingMatrixPair, drop_dc: bool) -> Result<CouplingMatrixPair> {
    if !drop_dc {
        return invert_fcm(p);
    }
    let d = p.dim();
    let k = split_real_imag(p);
    let keep: Vec<usize> = (0..2 * d).filter(|&i| i != 0 && i != d).collect();
    let r = DMatrix::from_fn(keep.len(), keep.len(), |a, b| k[(keep[a], keep[b])]);
    let ri = crate::hps::invert_real(&r, "flux coupling inversion without DC")?;
    let mut full = DMatrix::zeros(2 * d, 2 * d);
    for (a, &i) in keep.iter().enumerate() {
        for (b, &j) in keep.iter().enumerate() {
            full[(i, j)] = ri[(a, b)];
        }
    }
    pack_real_imag(&full)
}

#[derive(Clone, Debug)]
pub struct FcmResult {
    /// (Y⁽¹⁾, Y⁽²⁾) in siemens.
    pub pair: CouplingMatrixPair,
    /// Current-from-flux inverse (F⁽¹⁾, F⁽²⁾).
    pub inverse: CouplingMatrixPair,
    pub policy: DcPolicy,
    /// The DC-voltage column is unbounded and reported as zero.
    pub dc_column_unbounded: bool,
}

/// Norton admittance pair from the flux pair: Y⁽¹⁾ = F⁽¹⁾D⁻¹, Y⁽²⁾ = F⁽²⁾conj(D⁻¹).
pub fn fcm_from_preisach(p: &CouplingMatrixPair, omega: f64, policy: DcPolicy) -> Result<FcmResult> {
    let f = invert_flux_pair(p, policy == DcPolicy::FreeFlux)?;
    let dop = DifferentialOperator::new(p.order(), omega)?;
    let d = p.dim();
    let zero = Complex64::new(0.0, 0.0);
    let y1 = DMatrix::from_fn(d, d, |n, m| dop.d_inv(m).map_or(zero, |di| f.y1[(n, m)] * di));
    let y2 = DMatrix::from_fn(d, d, |n, m| dop.d_inv(m).map_or(zero, |di| f.y2[(n, m)] * di.conj()));
    let mut pair = CouplingMatrixPair::new(y1, y2)?;
    pair.base_input = p.base_output.as_ref().map(|lam| {
        HarmonicVector::raw(
            (0..d).map(|n| dop.d(n) * lam.get(n)).collect(),
            omega,
        )
    });
    pair.base_output = p.base_input.clone();
    Ok(FcmResult {
        pair,
        inverse: f,
        policy,
        dc_column_unbounded: dop.dc_unbounded(),
    })
}

/// Keep the leading `order` harmonics of a pair.
pub fn truncate_pair(p: &CouplingMatrixPair, order: usize) -> CouplingMatrixPair {
    let d = (order + 1).min(p.dim());
    CouplingMatrixPair {
        y1: p.y1.view((0, 0), (d, d)).into_owned(),
        y2: p.y2.view((0, 0), (d, d)).into_owned(),
        base_input: p.base_input.as_ref().map(|v| v.resized(d - 1)),
        base_output: p.base_output.as_ref().map(|v| v.resized(d - 1)),
    }
}

#[derive(Clone, Debug)]
pub struct BaseSolution {
    pub base: BasePoint,
    pub current_harmonics: HarmonicVector,
    pub iterations: usize,
    pub history: Vec<f64>,
}

#[derive(Clone, Copy, Debug)]
pub struct NewtonOptions {
    pub samples: usize,
    pub max_iter: usize,
    pub tol: f64,
    pub policy: DcPolicy,
}

fn flux_residual<M: HysteresisModel + ?Sized>(
    model: &M,
    current: &HarmonicVector,
    target: &[Complex64],
    samples: usize,
    policy: DcPolicy,
) -> Result<(Vec<Complex64>, f64, PeriodicSignal)> {
    let i = hps_inverse(current, samples)?;
    let lam = crate::preisach::simulate(model, &i)?;
    let got = hps_forward(&lam, current.order())?;
    let r: Vec<Complex64> = (0..current.len())
        .map(|n| {
            if n == 0 && policy == DcPolicy::FreeFlux {
                Complex64::new(0.0, 0.0)
            } else {
                target[n] - got.get(n)
            }
        })
        .collect();
    let norm = r.iter().map(|c| c.norm()).fold(0.0, f64::max);
    Ok((r, norm, i))
}

/// Harmonic-space Newton solve for the base current that produces voltage `v`.
pub fn solve_base_from_voltage<M: HysteresisModel + ?Sized>(
    model: &M,
    v: &HarmonicVector,
    opts: NewtonOptions,
) -> Result<BaseSolution> {
    let order = v.order();
    let omega = v.omega();
    let dop = DifferentialOperator::new(order, omega)?;
    let target: Vec<Complex64> = (0..=order)
        .map(|n| dop.d_inv(n).map_or(Complex64::new(0.0, 0.0), |di| di * v.get(n)))
        .collect();
    // DC left by transform roundoff of an AC drive is ignored
    let v_scale = v.coeffs().iter().map(|c| c.norm()).fold(0.0, f64::max);
    if v.get(0).norm() > 1e-9 * v_scale {
        return Err(Error::Invalid("a DC voltage has no periodic flux solution".into()));
    }
    let slope = model.centre_line_slope(0.0);
    if !(slope > 0.0) {
        return Err(Error::Invalid("model centre line must have positive slope at zero current".into()));
    }
    let mut cur = HarmonicVector::new(target.iter().map(|t| t / slope).collect(), omega);
    let (mut r, mut norm, mut i_t) = flux_residual(model, &cur, &target, opts.samples, opts.policy)?;
    let mut history = vec![norm];
    for it in 0..opts.max_iter {
        if norm < opts.tol {
            return Ok(BaseSolution {
                base: validate_base(&i_t)?,
                current_harmonics: cur,
                iterations: it,
                history,
            });
        }
        let base = validate_base(&i_t)?;
        let p = linearize_preisach(model, &base, order)?;
        let f = invert_flux_pair(&p, opts.policy == DcPolicy::FreeFlux)?;
        let mut step = f.act(&r)?;
        step[0].im = 0.0;
        let mut t = 1.0;
        let mut accepted = None;
        let mut last_err = None;
        for _ in 0..30 {
            let trial = HarmonicVector::new(
                cur.coeffs().iter().zip(&step).map(|(c, s)| c + s * t).collect(),
                omega,
            );
            match flux_residual(model, &trial, &target, opts.samples, opts.policy) {
                Ok((r2, n2, i2)) if n2 < norm || n2 < opts.tol => {
                    accepted = Some((trial, r2, n2, i2));
                    break;
                }
                Ok(_) => {}
                Err(e) => last_err = Some(e),
            }
            t *= 0.5;
        }
        match accepted {
            Some((c2, r2, n2, i2)) => {
                cur = c2;
                r = r2;
                norm = n2;
                i_t = i2;
                history.push(norm);
            }
            None => {
                return Err(last_err.unwrap_or(Error::NoConvergence {
                    iterations: it + 1,
                    history,
                }))
            }
        }
    }
    if norm < opts.tol {
        return Ok(BaseSolution {
            base: validate_base(&i_t)?,
            current_harmonics: cur,
            iterations: opts.max_iter,
            history,
        });
    }
    Err(Error::NoConvergence {
        iterations: opts.max_iter,
        history,
    })
}

/// Flux of the model along a validated base, for reporting.
pub fn base_flux<M: HysteresisModel + ?Sized>(model: &M, base: &BasePoint) -> Result<PeriodicSignal> {
    let mut out = vec![0.0; base.current.len()];
    walk_period(model, base.current.samples(), |k, mem, _| {
        out[k] = evaluate(model, mem);
        Ok(())
    })?;
    base.current.with_samples(out)
}

/// Internal inversion order used when none is given: the flux pair is built
/// and inverted at up to 16·N harmonics (bounded by the sample grid) before
/// truncation to N. Current waveforms of hysteretic models have slope jumps
/// at reversals, so inverting a pair truncated at N itself leaves an O(1/N)
/// error in the low-order admittances.
pub fn default_inversion_order(order: usize, samples: usize) -> usize {
    (16 * order).min(max_order(samples)).max(order)
}

#[derive(Clone, Copy, Debug)]
pub struct LinearizeOptions {
    pub order: usize,
    /// Harmonics kept while inverting; `None` selects [`default_inversion_order`].
    pub inversion_order: Option<usize>,
    pub policy: DcPolicy,
}

#[derive(Clone, Debug)]
pub struct AnalyticFcm {
    /// Flux pair truncated to the report order.
    pub flux: CouplingMatrixPair,
    /// Admittance pair, inverse and policy flags, truncated to the report order.
    pub fcm: FcmResult,
    pub inversion_order: usize,
}

/// Linearise about `base` and form the Norton admittance pair.
pub fn analytic_fcm<M: HysteresisModel + ?Sized>(model: &M, base: &BasePoint, opts: &LinearizeOptions) -> Result<AnalyticFcm> {
    let samples = base.current.len();
    crate::hps::nyquist_check(opts.order, samples)?;
    let inv = opts
        .inversion_order
        .unwrap_or_else(|| default_inversion_order(opts.order, samples))
        .max(opts.order);
    let p = linearize_preisach(model, base, inv).map_err(|e| e.at("linearize"))?;
    let full = fcm_from_preisach(&p, base.current.omega(), opts.policy).map_err(|e| e.at("invert"))?;
    Ok(AnalyticFcm {
        flux: truncate_pair(&p, opts.order),
        fcm: FcmResult {
            pair: truncate_pair(&full.pair, opts.order),
            inverse: truncate_pair(&full.inverse, opts.order),
            policy: full.policy,
            dc_column_unbounded: full.dc_column_unbounded,
        },
        inversion_order: inv,
    })
}
