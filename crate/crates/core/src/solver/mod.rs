//! Leapfrog evolution of `−□w + P^{γαβ}∂_γw ∂_α∂_βw = f` on a truncated grid.
//!
//! The quasilinear term is split as `Q = A·∂_tt w + R` with
//! `A = Σ_γ P^{γ00}∂_γ w`; each step solves `(1 + A)∂_tt w = Δw − R + f`
//! pointwise. First derivatives use centred space differences and the
//! two-level difference `(w_curr − w_prev)/dt` in time; `∂_t∂_a w` is the
//! centred space difference of that two-level quotient. The latter is only
//! first order locally and is the dominant truncation error of the coupling.
//!
//! Updates are restricted to the disk `|x| ≤ 1 + |t − t0| + 2h`, outside of
//! which the exact solution from unit-ball data vanishes; everything beyond it
//! is held at exactly zero.

mod exact;
mod grid;
mod history;

use std::fs;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;

pub use exact::{bump, bump_sq, BumpShape, ClosedForm, ManufacturedBump, Polynomial, SpatialBump, ZeroField};
pub use grid::{GridSpec, MAX_CFL, RING};
pub use history::{
    read_snapshot, run, write_snapshot, Observer, Simulation, Snapshot, SolutionHistory,
};

use crate::error::{Error, Result};
use crate::nulltensor::CubicTensor;

/// Runs are aborted when `min |1 + A|` drops below this.
pub const DEGENERACY_THRESHOLD: f64 = 0.5;

/// Radial profile of the initial data, before scaling by `ε`.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum Profile {
    #[default]
    Zero,
    /// `χ(|x|)`
    Bump,
    /// Two off-centre bumps of opposite-ish weight: `χ(|x − c₊|/0.55) + ½χ(|x − c₋|/0.55)`
    /// with `c± = (±0.4, 0)`.
    TwoBumps,
    /// Piecewise linear radial table `(r, value)`, zero beyond the last entry.
    Table(Vec<(f64, f64)>),
}

const TWO_BUMPS: [(f64, SpatialBump); 2] = [
    (
        1.0,
        SpatialBump {
            center: [0.4, 0.0],
            radius: 0.55,
            shape: BumpShape::Smooth,
        },
    ),
    (
        0.5,
        SpatialBump {
            center: [-0.4, 0.0],
            radius: 0.55,
            shape: BumpShape::Smooth,
        },
    ),
];

impl Profile {
    /// `zero`, `bump`, `two_bumps` or `table:<path>`.
    pub fn parse(text: &str) -> Result<Self> {
        let text = text.trim();
        match text {
            "zero" | "0" => Ok(Profile::Zero),
            "bump" => Ok(Profile::Bump),
            "two_bumps" => Ok(Profile::TwoBumps),
            _ => match text.strip_prefix("table:") {
                Some(path) => Profile::from_table_file(Path::new(path.trim())),
                None => Err(Error::InvalidProfile(format!("unknown profile `{text}`"))),
            },
        }
    }

    /// Lines of `r value`; blank lines and `#` comments are skipped.
    pub fn from_table_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut rows = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let nums: Vec<f64> = line
                .split_whitespace()
                .map(|tok| tok.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::InvalidProfile(format!("table line {}: bad number", n + 1)))?;
            if nums.len() != 2 {
                return Err(Error::InvalidProfile(format!(
                    "table line {}: expected `r value`",
                    n + 1
                )));
            }
            rows.push((nums[0], nums[1]));
        }
        Profile::table(rows)
    }

    pub fn table(rows: Vec<(f64, f64)>) -> Result<Self> {
        let p = Profile::Table(rows);
        p.validate()?;
        Ok(p)
    }

    /// Support must lie in the closed unit ball.
    pub fn validate(&self) -> Result<()> {
        if let Profile::Table(rows) = self {
            if rows.is_empty() {
                return Err(Error::InvalidProfile("empty table".into()));
            }
            for w in rows.windows(2) {
                if !(w[1].0 > w[0].0) {
                    return Err(Error::InvalidProfile("table radii must increase".into()));
                }
            }
            if rows.iter().any(|(r, v)| !r.is_finite() || !v.is_finite() || *r < 0.0) {
                return Err(Error::InvalidProfile("table entries must be finite, r ≥ 0".into()));
            }
            for (i, (r, v)) in rows.iter().enumerate() {
                let reaches_out = *r > 1.0 || rows.get(i + 1).is_some_and(|next| next.0 > 1.0);
                if reaches_out && *v != 0.0 {
                    return Err(Error::InvalidProfile(format!(
                        "support exceeds the unit ball (value {v} at r = {r})"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn value(&self, x: [f64; 2]) -> f64 {
        match self {
            Profile::Zero => 0.0,
            Profile::Bump => bump_sq(x[0] * x[0] + x[1] * x[1])[0],
            Profile::TwoBumps => TWO_BUMPS.iter().map(|(c, b)| c * b.value(x)).sum(),
            Profile::Table(rows) => {
                let r = x[0].hypot(x[1]);
                match rows.iter().position(|(ri, _)| *ri > r) {
                    Some(0) => rows[0].1,
                    Some(i) => {
                        let (r0, v0) = rows[i - 1];
                        let (r1, v1) = rows[i];
                        v0 + (v1 - v0) * (r - r0) / (r1 - r0)
                    }
                    None => {
                        let (rl, vl) = rows[rows.len() - 1];
                        if r == rl {
                            vl
                        } else {
                            0.0
                        }
                    }
                }
            }
        }
    }
}

/// Source term added to the right side of the update.
pub trait Forcing: Sync + Send {
    fn at(&self, t: f64, x: [f64; 2]) -> f64;
}

/// How the two starting levels are produced.
#[derive(Clone)]
pub enum InitialData {
    /// `(w, ∂_t w)(t0) = (ε·w0, ε·w1)`.
    Profiles {
        w0: Profile,
        w1: Profile,
        epsilon: f64,
    },
    /// Data read off a closed-form field, used with manufactured forcing.
    Exact(Arc<dyn ClosedForm + Send>),
}

impl InitialData {
    pub fn bump(epsilon: f64) -> Self {
        InitialData::Profiles {
            w0: Profile::Bump,
            w1: Profile::Zero,
            epsilon,
        }
    }

    pub fn epsilon(&self) -> f64 {
        match self {
            InitialData::Profiles { epsilon, .. } => *epsilon,
            InitialData::Exact(_) => f64::NAN,
        }
    }
}

impl std::fmt::Debug for InitialData {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            InitialData::Profiles { w0, w1, epsilon } => f
                .debug_struct("Profiles")
                .field("w0", w0)
                .field("w1", w1)
                .field("epsilon", epsilon)
                .finish(),
            InitialData::Exact(_) => f.write_str("Exact(..)"),
        }
    }
}

/// Two consecutive time levels. Step indices are kept as integers so that time
/// never accumulates rounding; swapping the levels reverses time.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldState {
    pub w_prev: Vec<f64>,
    pub w_curr: Vec<f64>,
    pub k_prev: i64,
    pub k_curr: i64,
    pub t_curr: f64,
}

impl FieldState {
    pub fn zero(spec: &GridSpec) -> Self {
        FieldState {
            w_prev: vec![0.0; spec.len()],
            w_curr: vec![0.0; spec.len()],
            k_prev: -1,
            k_curr: 0,
            t_curr: spec.t0,
        }
    }

    /// The same levels with the roles of past and present exchanged.
    pub fn reversed(self, spec: &GridSpec) -> Self {
        FieldState {
            t_curr: spec.step_time(self.k_prev),
            w_prev: self.w_curr,
            w_curr: self.w_prev,
            k_prev: self.k_curr,
            k_curr: self.k_prev,
        }
    }

    fn signed_dt(&self, spec: &GridSpec) -> f64 {
        (self.k_curr - self.k_prev) as f64 * spec.dt
    }
}

/// The quasilinear term regrouped by derivative:
/// `Q = Σ_γ ∂_γw (tt_γ ∂_tt + Σ_a ta_γa ∂_t∂_a + 11_γ ∂₁₁ + 22_γ ∂₂₂ + 12_γ ∂₁₂) w`.
/// Off-diagonal pairs are summed so that asymmetric input acts through its
/// symmetric part.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuasiCoefficients {
    pub tt: [f64; 3],
    pub ta: [[f64; 2]; 3],
    pub aa: [[f64; 2]; 3],
    pub x12: [f64; 3],
    pub linear: bool,
}

impl QuasiCoefficients {
    pub fn new(p: &CubicTensor) -> Self {
        let mut c = QuasiCoefficients {
            tt: [0.0; 3],
            ta: [[0.0; 2]; 3],
            aa: [[0.0; 2]; 3],
            x12: [0.0; 3],
            linear: p.is_zero(),
        };
        for g in 0..3 {
            c.tt[g] = p.get(g, 0, 0);
            for a in 0..2 {
                c.ta[g][a] = p.get(g, 0, a + 1) + p.get(g, a + 1, 0);
                c.aa[g][a] = p.get(g, a + 1, a + 1);
            }
            c.x12[g] = p.get(g, 1, 2) + p.get(g, 2, 1);
        }
        c
    }

    /// `(A, R)` from the gradient and the second-derivative stencils
    /// `[∂_t∂₁, ∂_t∂₂, ∂₁₁, ∂₂₂, ∂₁₂]`.
    #[inline]
    pub fn split(&self, grad: [f64; 3], second: [f64; 5]) -> (f64, f64) {
        let mut a = 0.0;
        let mut r = 0.0;
        for g in 0..3 {
            a += self.tt[g] * grad[g];
            let inner = self.ta[g][0] * second[0]
                + self.ta[g][1] * second[1]
                + self.aa[g][0] * second[2]
                + self.aa[g][1] * second[3]
                + self.x12[g] * second[4];
            r += grad[g] * inner;
        }
        (a, r)
    }
}

/// Largest radius at which step `k` may carry nonzero values.
fn level_radius(spec: &GridSpec, k: i64) -> f64 {
    spec.support_radius(spec.step_time(k))
}

struct RowOutcome {
    min_coefficient: f64,
    finite: bool,
}

/// One leapfrog update of row `i` into `out`. `wp` is `None` for the Taylor
/// start, in which case `w1` holds `∂_t w` and `half` is set.
#[allow(clippy::too_many_arguments)]
fn update_row(
    spec: &GridSpec,
    coeffs: &QuasiCoefficients,
    forcing: Option<&dyn Forcing>,
    i: usize,
    wc: &[f64],
    past: Past<'_>,
    dt_s: f64,
    t_c: f64,
    radius: f64,
    out: &mut [f64],
) -> RowOutcome {
    out.fill(0.0);
    let mut outcome = RowOutcome {
        min_coefficient: f64::INFINITY,
        finite: true,
    };
    let (lo, hi) = spec.disk_columns(i, radius);
    if lo >= hi {
        return outcome;
    }
    let n = spec.n();
    let h = spec.h;
    let inv_h2 = 1.0 / (h * h);
    let inv_2h = 0.5 / h;
    let inv_4h2 = 0.25 * inv_h2;
    let x2 = spec.coord(i);
    let r2 = radius * radius;
    let row = i * n;
    let (up, dn) = (row + n, row - n);
    for j in lo..hi {
        let x1 = spec.coord(j);
        if x1 * x1 + x2 * x2 > r2 {
            continue;
        }
        let c = row + j;
        let w = wc[c];
        let (e, wst, nn, s) = (wc[c + 1], wc[c - 1], wc[up + j], wc[dn + j]);
        let lap = (e + wst + nn + s - 4.0 * w) * inv_h2;
        let f = forcing.map_or(0.0, |f| f.at(t_c, [x1, x2]));
        let (wt, dtd1, dtd2) = match past {
            Past::Level(wp) => (
                (w - wp[c]) / dt_s,
                ((e - wp[c + 1]) - (wst - wp[c - 1])) * inv_2h / dt_s,
                ((nn - wp[up + j]) - (s - wp[dn + j])) * inv_2h / dt_s,
            ),
            Past::Velocity(w1) => (
                w1[c],
                (w1[c + 1] - w1[c - 1]) * inv_2h,
                (w1[up + j] - w1[dn + j]) * inv_2h,
            ),
        };
        let accel = if coeffs.linear {
            lap + f
        } else {
            let grad = [wt, (e - wst) * inv_2h, (nn - s) * inv_2h];
            let second = [
                dtd1,
                dtd2,
                (e - 2.0 * w + wst) * inv_h2,
                (nn - 2.0 * w + s) * inv_h2,
                (wc[up + j + 1] - wc[up + j - 1] - wc[dn + j + 1] + wc[dn + j - 1]) * inv_4h2,
            ];
            let (a, r) = coeffs.split(grad, second);
            let k = 1.0 + a;
            outcome.min_coefficient = outcome.min_coefficient.min(k.abs());
            (lap - r + f) / k
        };
        let next = match past {
            Past::Level(wp) => 2.0 * w - wp[c] + dt_s * dt_s * accel,
            Past::Velocity(w1) => w + dt_s * w1[c] + 0.5 * dt_s * dt_s * accel,
        };
        outcome.finite &= next.is_finite();
        out[j] = next;
    }
    outcome
}

#[derive(Clone, Copy)]
enum Past<'a> {
    Level(&'a [f64]),
    Velocity(&'a [f64]),
}

fn advance(
    spec: &GridSpec,
    coeffs: &QuasiCoefficients,
    forcing: Option<&dyn Forcing>,
    wc: &[f64],
    past: Past<'_>,
    dt_s: f64,
    t_c: f64,
    k_next: i64,
    out: &mut [f64],
) -> Result<()> {
    let n = spec.n();
    let radius = level_radius(spec, k_next);
    let t_next = spec.step_time(k_next);
    let outcomes: Vec<RowOutcome> = out
        .par_chunks_mut(n)
        .enumerate()
        .map(|(i, row)| update_row(spec, coeffs, forcing, i, wc, past, dt_s, t_c, radius, row))
        .collect();
    let min_coefficient = outcomes
        .iter()
        .fold(f64::INFINITY, |m, o| m.min(o.min_coefficient));
    if min_coefficient < DEGENERACY_THRESHOLD {
        return Err(Error::DegenerateCoefficient {
            t: t_next,
            min_coefficient,
        });
    }
    if !outcomes.iter().all(|o| o.finite) {
        return Err(Error::NonFinite { t: t_next });
    }
    Ok(())
}

/// Sample `ε·w0`, `ε·w1` (or the exact field) and take the Taylor step
/// `w(t0+dt) = w0 + dt·w1 + (dt²/2)·(Δw0 − R + f)/(1 + A)`.
pub fn initial_data(
    data: &InitialData,
    spec: &GridSpec,
    tensor: &CubicTensor,
    forcing: Option<&dyn Forcing>,
) -> Result<FieldState> {
    spec.validate()?;
    let n = spec.n();
    let mut w0 = vec![0.0; spec.len()];
    let mut w1 = vec![0.0; spec.len()];
    let radius = level_radius(spec, 0);
    let fill = |out: &mut [f64], f: &(dyn Fn([f64; 2]) -> f64 + Sync)| {
        out.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
            let (lo, hi) = spec.disk_columns(i, radius);
            for (j, v) in row.iter_mut().enumerate().take(hi).skip(lo) {
                *v = f(spec.node(i, j));
            }
        });
    };
    match data {
        InitialData::Profiles { w0: p0, w1: p1, epsilon } => {
            if !(*epsilon >= 0.0) {
                return Err(Error::InvalidProfile(format!("ε = {epsilon} must be ≥ 0")));
            }
            p0.validate()?;
            p1.validate()?;
            let e = *epsilon;
            fill(&mut w0, &|x| e * p0.value(x));
            fill(&mut w1, &|x| e * p1.value(x));
        }
        InitialData::Exact(field) => {
            let t0 = spec.t0;
            fill(&mut w0, &|x| field.value(t0, x));
            fill(&mut w1, &|x| field.gradient(t0, x)[0]);
        }
    }
    // nothing may sit outside the unit ball
    for (idx, (a, b)) in w0.iter().zip(&w1).enumerate() {
        let [x1, x2] = spec.node(idx / n, idx % n);
        if (*a != 0.0 || *b != 0.0) && x1 * x1 + x2 * x2 >= 1.0 {
            return Err(Error::InvalidProfile(format!(
                "nonzero data at |x| = {} ≥ 1",
                x1.hypot(x2)
            )));
        }
    }
    let coeffs = QuasiCoefficients::new(tensor);
    let mut next = vec![0.0; spec.len()];
    advance(
        spec,
        &coeffs,
        forcing,
        &w0,
        Past::Velocity(&w1),
        spec.dt,
        spec.t0,
        1,
        &mut next,
    )?;
    Ok(FieldState {
        w_prev: w0,
        w_curr: next,
        k_prev: 0,
        k_curr: 1,
        t_curr: spec.step_time(1),
    })
}

/// Leapfrog step in the direction `k_curr − k_prev`, writing into `scratch`
/// and rotating the levels.
pub fn step_in_place(
    state: &mut FieldState,
    coeffs: &QuasiCoefficients,
    spec: &GridSpec,
    forcing: Option<&dyn Forcing>,
    scratch: &mut Vec<f64>,
) -> Result<()> {
    let dt_s = state.signed_dt(spec);
    let k_next = 2 * state.k_curr - state.k_prev;
    scratch.resize(spec.len(), 0.0);
    advance(
        spec,
        coeffs,
        forcing,
        &state.w_curr,
        Past::Level(&state.w_prev),
        dt_s,
        state.t_curr,
        k_next,
        scratch,
    )?;
    std::mem::swap(&mut state.w_prev, &mut state.w_curr);
    std::mem::swap(&mut state.w_curr, scratch);
    state.k_prev = state.k_curr;
    state.k_curr = k_next;
    state.t_curr = spec.step_time(k_next);
    Ok(())
}

/// One leapfrog step.
pub fn step(
    state: &FieldState,
    tensor: &CubicTensor,
    spec: &GridSpec,
    forcing: Option<&dyn Forcing>,
) -> Result<FieldState> {
    let mut next = state.clone();
    let mut scratch = Vec::new();
    step_in_place(&mut next, &QuasiCoefficients::new(tensor), spec, forcing, &mut scratch)?;
    Ok(next)
}

/// `f = ∂_tt w* − Δw* + P^{γαβ}∂_γw*∂_α∂_βw*` from exact derivatives.
pub struct ManufacturedForcing<F: ClosedForm> {
    pub field: F,
    pub tensor: CubicTensor,
}

pub fn manufactured_forcing<F: ClosedForm>(field: F, tensor: &CubicTensor) -> ManufacturedForcing<F> {
    ManufacturedForcing {
        field,
        tensor: *tensor,
    }
}

impl<F: ClosedForm + Send> Forcing for ManufacturedForcing<F> {
    fn at(&self, t: f64, x: [f64; 2]) -> f64 {
        let hess = self.field.hessian(t, x);
        let mut f = hess[0][0] - hess[1][1] - hess[2][2];
        if !self.tensor.is_zero() {
            let grad = self.field.gradient(t, x);
            for g in 0..3 {
                for a in 0..3 {
                    for b in 0..3 {
                        f += self.tensor.get(g, a, b) * grad[g] * hess[a][b];
                    }
                }
            }
        }
        f
    }
}

/// Space-time max-norm error of a forced `P = 0` run against `field` over
/// `[t0, t_max]`, with `dt = 0.4h`.
pub fn manufactured_error<F: ClosedForm + Copy + Send + 'static>(field: F, h: f64, t_max: f64) -> f64 {
    let spec = GridSpec::fitted(h, 0.4 * h, 2.0, t_max, 1);
    let zero = CubicTensor::zero();
    let forcing = manufactured_forcing(field, &zero);
    let data = InitialData::Exact(Arc::new(field));
    let mut state = initial_data(&data, &spec, &zero, Some(&forcing)).expect("valid manufactured setup");
    let coeffs = QuasiCoefficients::new(&zero);
    let mut scratch = Vec::new();
    let steps = ((spec.t_max - spec.t0) / spec.dt).round() as i64;
    let mut worst = max_error(&state, &spec, &field);
    while state.k_curr < steps {
        step_in_place(&mut state, &coeffs, &spec, Some(&forcing), &mut scratch).expect("linear step");
        worst = worst.max(max_error(&state, &spec, &field));
    }
    worst
}

/// `max |w − w*|` over the grid at the state's current time.
pub fn max_error<F: ClosedForm>(state: &FieldState, spec: &GridSpec, field: &F) -> f64 {
    let n = spec.n();
    let t = state.t_curr;
    state
        .w_curr
        .par_chunks(n)
        .enumerate()
        .map(|(i, row)| {
            row.iter()
                .enumerate()
                .map(|(j, v)| (v - field.value(t, spec.node(i, j))).abs())
                .fold(0.0, f64::max)
        })
        .reduce(|| 0.0, f64::max)
}
