//! Time-periodic Preisach operator in shape-function form.
//!
//! The output is
//! `λ = c(i, βₘ, αₘ) + ε₀·h(βₘ, αₘ) + 2·Σ_{j≥1} εⱼ·h(βⱼ, αⱼ)`
//! over the vertices of the staircase memory, the last vertex being formed
//! with the live input value. The memory is stored as the time-ordered list
//! of surviving turning points; vertex j pairs turning points j and j+1.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hps::PeriodicSignal;
use crate::jet::{Jet, Scalar};

/// Shape function h(β, α) and common mode c(i, βₘ, αₘ) of a time-periodic Preisach operator.
pub trait HysteresisModel: Send + Sync {
    /// Largest |current| the model is defined for.
    fn current_limit(&self) -> f64;
    fn shape(&self, beta: f64, alpha: f64) -> f64;
    fn shape_jet(&self, beta: Jet, alpha: Jet) -> Jet;
    fn common(&self, i: f64, beta_m: f64, alpha_m: f64) -> f64;
    fn common_jet(&self, i: Jet, beta_m: Jet, alpha_m: Jet) -> Jet;
    /// Odd saturation curve used by the centre-line-only reduction.
    fn centre_line(&self, i: f64) -> f64;
    fn centre_line_jet(&self, i: Jet) -> Jet;

    /// (h, ∂h/∂β, ∂h/∂α)
    fn shape_partials(&self, beta: f64, alpha: f64) -> (f64, f64, f64) {
        let j = self.shape_jet(Jet::var1(beta), Jet::var2(alpha));
        (j.re, j.e1, j.e2)
    }

    /// μ = ∂²h/∂β∂α
    fn shape_mixed(&self, beta: f64, alpha: f64) -> f64 {
        self.shape_jet(Jet::var1(beta), Jet::var2(alpha)).e12
    }

    /// (c, ∂c/∂i, ∂c/∂βₘ, ∂c/∂αₘ)
    fn common_partials(&self, i: f64, beta_m: f64, alpha_m: f64) -> (f64, f64, f64, f64) {
        let a = self.common_jet(Jet::var1(i), Jet::var2(beta_m), Jet::cst(alpha_m));
        let b = self.common_jet(Jet::cst(i), Jet::cst(beta_m), Jet::var1(alpha_m));
        (a.re, a.e1, a.e2, b.e1)
    }

    fn centre_line_slope(&self, i: f64) -> f64 {
        self.centre_line_jet(Jet::var1(i)).e1
    }
}

/// Shape function from a polynomial Preisach density.
///
/// `μ(β, α) = Σ w[p][q]·(β + shift)^p·(α + shift)^q` and
/// `h(β, α) = −∬_{β ≤ b ≤ a ≤ α} μ(b, a) + slope·(α − β)`, so h(γ, γ) = 0,
/// ∂²h/∂β∂α = μ and the diagonal line density is η = −slope.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolynomialShape {
    pub weights: Vec<Vec<f64>>,
    pub shift: f64,
    pub diag_slope: f64,
}

impl PolynomialShape {
    pub fn zero() -> Self {
        PolynomialShape {
            weights: vec![],
            shift: 0.0,
            diag_slope: 0.0,
        }
    }

    /// h = k(α − β)(2L − (α − β)): constant μ = 2k, η = −2kL.
    pub fn quadratic(k: f64, l: f64) -> Self {
        PolynomialShape {
            weights: vec![vec![2.0 * k]],
            shift: 0.0,
            diag_slope: 2.0 * k * l,
        }
    }

    pub fn eval<S: Scalar>(&self, beta: S, alpha: S) -> S {
        let u = beta + self.shift;
        let v = alpha + self.shift;
        let mut tri = S::cst(0.0);
        for (p, row) in self.weights.iter().enumerate() {
            for (q, &w) in row.iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                let (p1, q1, pq2) = (p as i32 + 1, q as i32 + 1, (p + q) as i32 + 2);
                let first = v.powi(q1) * (v.powi(p1) - u.powi(p1)) / p1 as f64;
                let second = (v.powi(pq2) - u.powi(pq2)) / pq2 as f64;
                tri = tri + (first - second) * (w / q1 as f64);
            }
        }
        (alpha - beta) * self.diag_slope - tri
    }

    pub fn mu(&self, beta: f64, alpha: f64) -> f64 {
        let u = beta + self.shift;
        let v = alpha + self.shift;
        self.weights
            .iter()
            .enumerate()
            .flat_map(|(p, row)| row.iter().enumerate().map(move |(q, &w)| w * u.powi(p as i32) * v.powi(q as i32)))
            .sum()
    }

    pub fn eta(&self) -> f64 {
        -self.diag_slope
    }
}

/// Odd, increasing flux-current curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CentreLine {
    /// λ = L·i
    Linear { inductance: f64 },
    /// λ = L·i + Λ·tanh(i/i₀)
    Saturating { air: f64, saturation: f64, knee: f64 },
}

impl CentreLine {
    pub fn eval<S: Scalar>(&self, i: S) -> S {
        match *self {
            CentreLine::Linear { inductance } => i * inductance,
            CentreLine::Saturating { air, saturation, knee } => i * air + (i / knee).tanh() * saturation,
        }
    }
}

/// Analytic model: polynomial shape, centre line, and a common mode that
/// depends on the loop span through `c = λ_cl(i) + spread·(αₘ − βₘ)·i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticModel {
    pub shape: PolynomialShape,
    pub centre: CentreLine,
    #[serde(default)]
    pub spread: f64,
    pub current_limit: f64,
}

impl SyntheticModel {
    pub fn linear_inductor(inductance: f64, current_limit: f64) -> Self {
        SyntheticModel {
            shape: PolynomialShape::zero(),
            centre: CentreLine::Linear { inductance },
            spread: 0.0,
            current_limit,
        }
    }

    fn common_generic<S: Scalar>(&self, i: S, beta_m: S, alpha_m: S) -> S {
        self.centre.eval(i) + (alpha_m - beta_m) * i * self.spread
    }
}

impl HysteresisModel for SyntheticModel {
    fn current_limit(&self) -> f64 {
        self.current_limit
    }
    fn shape(&self, beta: f64, alpha: f64) -> f64 {
        self.shape.eval(beta, alpha)
    }
    fn shape_jet(&self, beta: Jet, alpha: Jet) -> Jet {
        self.shape.eval(beta, alpha)
    }
    fn common(&self, i: f64, beta_m: f64, alpha_m: f64) -> f64 {
        self.common_generic(i, beta_m, alpha_m)
    }
    fn common_jet(&self, i: Jet, beta_m: Jet, alpha_m: Jet) -> Jet {
        self.common_generic(i, beta_m, alpha_m)
    }
    fn centre_line(&self, i: f64) -> f64 {
        self.centre.eval(i)
    }
    fn centre_line_jet(&self, i: Jet) -> Jet {
        self.centre.eval(i)
    }
}

/// A model with its hysteresis and loop-span dependence removed: λ = λ_cl(i).
pub struct CentreLineOnly<'a, M: ?Sized>(pub &'a M);

impl<M: HysteresisModel + ?Sized> HysteresisModel for CentreLineOnly<'_, M> {
    fn current_limit(&self) -> f64 {
        self.0.current_limit()
    }
    fn shape(&self, _: f64, _: f64) -> f64 {
        0.0
    }
    fn shape_jet(&self, _: Jet, _: Jet) -> Jet {
        Jet::cst(0.0)
    }
    fn common(&self, i: f64, _: f64, _: f64) -> f64 {
        self.0.centre_line(i)
    }
    fn common_jet(&self, i: Jet, _: Jet, _: Jet) -> Jet {
        self.0.centre_line_jet(i)
    }
    fn centre_line(&self, i: f64) -> f64 {
        self.0.centre_line(i)
    }
    fn centre_line_jet(&self, i: Jet) -> Jet {
        self.0.centre_line_jet(i)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Rising,
    Dropping,
}

/// A surviving historical extremum and the sample index it occurred at.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TurningPoint {
    pub value: f64,
    pub stamp: usize,
}

/// Staircase vertex (β, α) with orientation ε and the stamps of its two corners.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Vertex {
    pub beta: f64,
    pub alpha: f64,
    pub orientation: f64,
    pub beta_stamp: usize,
    pub alpha_stamp: usize,
}

/// What a memory update did.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct UpdateEvent {
    pub reversed: bool,
    pub wiped: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StaircaseMemory {
    points: Vec<TurningPoint>,
    current: f64,
    current_stamp: usize,
    direction: Direction,
}

impl StaircaseMemory {
    /// Memory at the global minimum, about to rise: vertices {(βₘ, αₘ), (βₘ, βₘ)}.
    pub fn at_minimum(beta_m: f64, alpha_m: f64) -> Result<Self> {
        Self::at_minimum_stamped(beta_m, 0, alpha_m, 0)
    }

    pub fn at_minimum_stamped(beta_m: f64, beta_stamp: usize, alpha_m: f64, alpha_stamp: usize) -> Result<Self> {
        if !(beta_m <= alpha_m) {
            return Err(Error::Invalid(format!("global minimum {beta_m} above maximum {alpha_m}")));
        }
        Ok(StaircaseMemory {
            points: vec![
                TurningPoint {
                    value: alpha_m,
                    stamp: alpha_stamp,
                },
                TurningPoint {
                    value: beta_m,
                    stamp: beta_stamp,
                },
            ],
            current: beta_m,
            current_stamp: beta_stamp,
            direction: Direction::Rising,
        })
    }

    /// Memory at the global maximum, about to drop.
    pub fn at_maximum(beta_m: f64, alpha_m: f64) -> Result<Self> {
        let mut m = Self::at_minimum(beta_m, alpha_m)?;
        m.points.swap(0, 1);
        m.current = alpha_m;
        m.direction = Direction::Dropping;
        Ok(m)
    }

    pub fn beta_m(&self) -> f64 {
        self.points[0].value.min(self.points[1].value)
    }

    pub fn alpha_m(&self) -> f64 {
        self.points[0].value.max(self.points[1].value)
    }

    pub fn current(&self) -> f64 {
        self.current
    }

    pub fn current_stamp(&self) -> usize {
        self.current_stamp
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    pub fn turning_points(&self) -> &[TurningPoint] {
        &self.points
    }

    /// Move the input to `next`, recording `stamp` as its sample index.
    pub fn advance(&mut self, next: f64, stamp: usize) -> Result<UpdateEvent> {
        let (lo, hi) = (self.beta_m(), self.alpha_m());
        if !(next >= lo && next <= hi) {
            return Err(Error::OutOfRange {
                value: next,
                lower: lo,
                upper: hi,
            });
        }
        let mut ev = UpdateEvent::default();
        if next == self.current {
            self.current_stamp = stamp;
            return Ok(ev);
        }
        let rising = next > self.current;
        let was_rising = self.direction == Direction::Rising;
        if rising != was_rising {
            self.points.push(TurningPoint {
                value: self.current,
                stamp: self.current_stamp,
            });
            self.direction = if rising { Direction::Rising } else { Direction::Dropping };
            ev.reversed = true;
        }
        // `passed(v)`: the input has reached or crossed turning point value v
        let passed = |v: f64| if rising { next >= v } else { next <= v };
        let before = self.points.len();
        while self.points.len() >= 4 && passed(self.points[self.points.len() - 2].value) {
            self.points.truncate(self.points.len() - 2);
        }
        let n = self.points.len();
        if n == 3 && passed(self.points[1].value) {
            // back at the global extremum of this direction
            self.points.truncate(2);
            self.points[1].stamp = stamp;
            self.direction = if rising { Direction::Dropping } else { Direction::Rising };
        } else if n == 2 && passed(self.points[0].value) {
            let first = self.points[1];
            self.points[0] = first;
            self.points[1] = TurningPoint { value: next, stamp };
            self.direction = if rising { Direction::Dropping } else { Direction::Rising };
        }
        ev.wiped = before.saturating_sub(self.points.len());
        self.current = next;
        self.current_stamp = stamp;
        Ok(ev)
    }

    /// Functional update with a stamp one past the current one.
    pub fn updated(&self, next: f64) -> Result<Self> {
        let mut m = self.clone();
        m.advance(next, self.current_stamp + 1)?;
        Ok(m)
    }

    /// ρ₀..ρ_K; the last vertex carries the live value.
    pub fn vertices(&self) -> Vec<Vertex> {
        let n = self.points.len();
        let mut out = Vec::with_capacity(n);
        for j in 0..n {
            let a = self.points[j];
            let b = if j + 1 < n {
                self.points[j + 1]
            } else {
                TurningPoint {
                    value: self.current,
                    stamp: self.current_stamp,
                }
            };
            // the earlier point decides the orientation: a maximum first gives +1
            let first_is_max = if j + 1 < n {
                a.value > b.value
            } else {
                self.direction == Direction::Dropping
            };
            let (lo, hi) = if first_is_max { (b, a) } else { (a, b) };
            out.push(Vertex {
                beta: lo.value,
                alpha: hi.value,
                orientation: if first_is_max { 1.0 } else { -1.0 },
                beta_stamp: lo.stamp,
                alpha_stamp: hi.stamp,
            });
        }
        out
    }

    /// State of the relay (β, α): the newest extremum that switched it wins.
    pub fn relay_state(&self, beta: f64, alpha: f64) -> f64 {
        if self.current >= alpha {
            return 1.0;
        }
        if self.current <= beta {
            return -1.0;
        }
        for p in self.points.iter().rev() {
            if p.value >= alpha {
                return 1.0;
            }
            if p.value <= beta {
                return -1.0;
            }
        }
        -1.0
    }
}

/// Operator output for the given memory state.
pub fn evaluate<M: HysteresisModel + ?Sized>(model: &M, mem: &StaircaseMemory) -> f64 {
    let mut lambda = model.common(mem.current, mem.beta_m(), mem.alpha_m());
    for (j, v) in mem.vertices().iter().enumerate() {
        let w = if j == 0 { 1.0 } else { 2.0 };
        lambda += w * v.orientation * model.shape(v.beta, v.alpha);
    }
    lambda
}

/// Single functional update step (pure).
pub fn memory_update(mem: &StaircaseMemory, next_i: f64) -> Result<StaircaseMemory> {
    mem.updated(next_i)
}

/// Sample indices of the global minimum and maximum (earliest on ties) and whether ties occurred.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GlobalExtrema {
    pub min_index: usize,
    pub max_index: usize,
    pub min_tied: bool,
    pub max_tied: bool,
}

pub fn global_extrema(samples: &[f64]) -> GlobalExtrema {
    let mut e = GlobalExtrema {
        min_index: 0,
        max_index: 0,
        min_tied: false,
        max_tied: false,
    };
    for (k, &x) in samples.iter().enumerate().skip(1) {
        let lo = samples[e.min_index];
        if x < lo {
            e.min_index = k;
            e.min_tied = false;
        } else if x == lo {
            e.min_tied = true;
        }
        let hi = samples[e.max_index];
        if x > hi {
            e.max_index = k;
            e.max_tied = false;
        } else if x == hi {
            e.max_tied = true;
        }
    }
    e
}

fn check_range<M: HysteresisModel + ?Sized>(model: &M, lo: f64, hi: f64) -> Result<()> {
    let lim = model.current_limit();
    for v in [lo, hi] {
        if !(v.abs() <= lim * (1.0 + 1e-12)) {
            return Err(Error::OutOfRange {
                value: v,
                lower: -lim,
                upper: lim,
            });
        }
    }
    Ok(())
}

/// Walk one period starting at the global minimum, calling `visit(sample, memory)`
/// in walk order (sample index of the global minimum first).
pub fn walk_period<M: HysteresisModel + ?Sized>(
    model: &M,
    current: &[f64],
    mut visit: impl FnMut(usize, &StaircaseMemory, UpdateEvent) -> Result<()>,
) -> Result<GlobalExtrema> {
    let e = global_extrema(current);
    let n = current.len();
    let (lo, hi) = (current[e.min_index], current[e.max_index]);
    check_range(model, lo, hi)?;
    let mut mem = StaircaseMemory::at_minimum_stamped(lo, e.min_index, hi, e.max_index)?;
    visit(e.min_index, &mem, UpdateEvent::default())?;
    for step in 1..n {
        let k = (e.min_index + step) % n;
        let ev = mem.advance(current[k], k)?;
        visit(k, &mem, ev)?;
    }
    Ok(e)
}

/// Flux linkage for one period of the current, aligned with the input time base.
pub fn simulate<M: HysteresisModel + ?Sized>(model: &M, current: &PeriodicSignal) -> Result<PeriodicSignal> {
    let mut out = vec![0.0; current.len()];
    walk_period(model, current.samples(), |k, mem, _| {
        out[k] = evaluate(model, mem);
        Ok(())
    })?;
    current.with_samples(out)
}

/// Brent's method on a bracketing interval.
pub fn brent(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, mut fa: f64, mut fb: f64, xtol: f64, ftol: f64) -> f64 {
    if fa.abs() < fb.abs() {
        std::mem::swap(&mut a, &mut b);
        std::mem::swap(&mut fa, &mut fb);
    }
    let mut c = a;
    let mut fc = fa;
    let mut d = b - a;
    let mut bisected = true;
    for _ in 0..200 {
        if fb.abs() <= ftol || (b - a).abs() <= xtol {
            return b;
        }
        let mut s = if fa != fc && fb != fc {
            a * fb * fc / ((fa - fb) * (fa - fc)) + b * fa * fc / ((fb - fa) * (fb - fc)) + c * fa * fb / ((fc - fa) * (fc - fb))
        } else {
            b - fb * (b - a) / (fb - fa)
        };
        let q = (3.0 * a + b) / 4.0;
        let outside = !((s > q.min(b) && s < q.max(b)) || (s > b.min(q) && s < b.max(q)));
        if outside
            || (bisected && (s - b).abs() >= (b - c).abs() / 2.0)
            || (!bisected && (s - b).abs() >= (c - d).abs() / 2.0)
            || (bisected && (b - c).abs() < xtol)
            || (!bisected && (c - d).abs() < xtol)
        {
            s = (a + b) / 2.0;
            bisected = true;
        } else {
            bisected = false;
        }
        let fs = f(s);
        d = c;
        c = b;
        fc = fb;
        if fa * fs < 0.0 {
            b = s;
            fb = fs;
        } else {
            a = s;
            fa = fs;
        }
        if fa.abs() < fb.abs() {
            std::mem::swap(&mut a, &mut b);
            std::mem::swap(&mut fa, &mut fb);
        }
    }
    b
}

/// Current at which the operator, continued from `mem`, reaches `target_lambda`.
pub fn invert_branch<M: HysteresisModel + ?Sized>(model: &M, mem: &StaircaseMemory, target_lambda: f64) -> Result<f64> {
    let f = |i: f64| -> f64 {
        match mem.updated(i) {
            Ok(m) => evaluate(model, &m) - target_lambda,
            Err(_) => f64::NAN,
        }
    };
    let (lo, hi) = (mem.beta_m(), mem.alpha_m());
    let f_now = evaluate(model, mem) - target_lambda;
    if f_now == 0.0 {
        return Ok(mem.current());
    }
    let (a, b) = if f_now < 0.0 { (mem.current(), hi) } else { (lo, mem.current()) };
    let (fa, fb) = (f(a), f(b));
    let scale = (hi - lo).abs().max(1e-300);
    let lam_scale = f(hi).abs().max(f(lo).abs()) + target_lambda.abs();
    // rounding at the loop tips: a target a few ulps past saturation maps to the tip
    let slack = 1e-12 * lam_scale.max(1e-300);
    if fa.signum() == fb.signum() && fa != 0.0 && fb != 0.0 {
        let tip = if f_now < 0.0 { (b, fb) } else { (a, fa) };
        if tip.1.abs() <= slack {
            return Ok(tip.0);
        }
        return Err(Error::Saturation {
            target: target_lambda,
            lower: f(lo) + target_lambda,
            upper: f(hi) + target_lambda,
        });
    }
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    Ok(brent(f, a, b, fa, fb, 1e-15 * scale, 1e-14 * lam_scale.max(1e-300)))
}

/// Sampled μ over a (β, α) grid and η along the diagonal.
#[derive(Clone, Debug)]
pub struct MuEtaGrid {
    pub betas: Vec<f64>,
    pub alphas: Vec<f64>,
    /// `mu[a][b]` at (betas[a], alphas[b]); `None` below the diagonal.
    pub mu: Vec<Vec<Option<f64>>>,
    /// η at (alphas[b], alphas[b]).
    pub eta: Vec<f64>,
}

impl MuEtaGrid {
    pub fn min_mu(&self) -> f64 {
        self.mu.iter().flatten().flatten().cloned().fold(f64::INFINITY, f64::min)
    }
}

pub fn mu_eta_from_shape<M: HysteresisModel + ?Sized>(model: &M, betas: &[f64], alphas: &[f64]) -> Result<MuEtaGrid> {
    let lim = model.current_limit();
    for &x in betas.iter().chain(alphas) {
        if !(x.abs() <= lim) {
            return Err(Error::OutOfRange {
                value: x,
                lower: -lim,
                upper: lim,
            });
        }
    }
    let mu = betas
        .iter()
        .map(|&b| {
            alphas
                .iter()
                .map(|&a| if b <= a { Some(model.shape_mixed(b, a)) } else { None })
                .collect()
        })
        .collect();
    let eta = alphas.iter().map(|&a| model.shape_partials(a, a).1).collect();
    Ok(MuEtaGrid {
        betas: betas.to_vec(),
        alphas: alphas.to_vec(),
        mu,
        eta,
    })
}

#[allow(clippy::excessive_precision)]
const GAUSS8: [(f64, f64); 8] = [
    (-0.960_289_856_497_536_3, 0.101_228_536_290_376_26),
    (-0.796_666_477_413_626_7, 0.222_381_034_453_374_47),
    (-0.525_532_409_916_329_0, 0.313_706_645_877_887_3),
    (-0.183_434_642_495_649_8, 0.362_683_783_378_362_0),
    (0.183_434_642_495_649_8, 0.362_683_783_378_362_0),
    (0.525_532_409_916_329_0, 0.313_706_645_877_887_3),
    (0.796_666_477_413_626_7, 0.222_381_034_453_374_47),
    (0.960_289_856_497_536_3, 0.101_228_536_290_376_26),
];

/// ∫ₐᵇ f by 8-point Gauss–Legendre split into `pieces` panels.
pub(crate) fn gauss(f: impl Fn(f64) -> f64, a: f64, b: f64, pieces: usize) -> f64 {
    let h = (b - a) / pieces as f64;
    let mut acc = 0.0;
    for p in 0..pieces {
        let lo = a + p as f64 * h;
        for &(x, w) in &GAUSS8 {
            acc += w * f(lo + 0.5 * h * (x + 1.0));
        }
    }
    acc * 0.5 * h
}

/// Brute-force relay-plane integral: ∬ μ·r over the limiting triangle plus the
/// diagonal line integral of η. Equals `evaluate − c` for a consistent model.
pub fn integral_oracle(mu: impl Fn(f64, f64) -> f64, eta: impl Fn(f64) -> f64, mem: &StaircaseMemory) -> f64 {
    let mut cuts: Vec<f64> = mem.turning_points().iter().map(|p| p.value).collect();
    cuts.push(mem.current());
    cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    cuts.dedup();
    let mut total = 0.0;
    for a in 0..cuts.len().saturating_sub(1) {
        let (b0, b1) = (cuts[a], cuts[a + 1]);
        for b in a..cuts.len() - 1 {
            let (a0, a1) = (cuts[b], cuts[b + 1]);
            let (mb, ma) = (0.5 * (b0 + b1), 0.5 * (a0 + a1));
            if a == b {
                // triangle β ≤ α inside the square; state probed at an interior point
                let r = mem.relay_state(b0 + 0.25 * (b1 - b0), b0 + 0.75 * (b1 - b0));
                if r == 0.0 {
                    continue;
                }
                let inner = |beta: f64| gauss(|alpha| mu(beta, alpha), beta, b1, 1);
                total += r * gauss(inner, b0, b1, 1);
            } else {
                let r = mem.relay_state(mb, ma);
                let inner = |beta: f64| gauss(|alpha| mu(beta, alpha), a0, a1, 1);
                total += r * gauss(inner, b0, b1, 1);
            }
        }
    }
    let live = mem.current();
    let (lo, hi) = (mem.beta_m(), mem.alpha_m());
    let mut line = 0.0;
    if live > lo {
        line += gauss(&eta, lo, live, 4);
    }
    if hi > live {
        line -= gauss(&eta, live, hi, 4);
    }
    total + line
}
