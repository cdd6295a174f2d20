//! Run-level diagnostics: energies on constant-time slices, sup norms and
//! ghost-weight integrals streamed during a run, decay fits, the pointwise
//! null-form estimates, the hyperboloidal energy inequalities and the
//! bootstrap monitors.

use std::collections::BTreeMap;
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hyperboloid::{
    conformal_energy, fill_jobs, l0_norm_bound_check, natural_energy, weighted_l2, Channel, HyperboloidSlice,
    SliceGeometry, SliceJob,
};
use crate::nulltensor::CubicTensor;
use crate::solver::{GridSpec, Observer, SolutionHistory};
use crate::summation::{sum_rows, NeumaierSum};
use crate::vectorfields::{
    in_cone, max_ratio, null_form, null_form_majorant, regularizer, scale, Derivatives, FieldBlock, FieldId,
    MultiIndex,
};

/// Samples `(parameter, value)` with strictly increasing parameters.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DiagnosticSeries {
    pub label: String,
    pub samples: Vec<(f64, f64)>,
    /// Digest of the configuration that produced the series.
    pub digest: Option<String>,
}

impl DiagnosticSeries {
    pub fn new(label: impl Into<String>) -> Self {
        DiagnosticSeries {
            label: label.into(),
            ..Default::default()
        }
    }

    pub fn push(&mut self, param: f64, value: f64) -> Result<()> {
        if !value.is_finite() || !param.is_finite() {
            return Err(Error::NonFinite { t: param });
        }
        if self.samples.last().is_some_and(|&(p, _)| param <= p) {
            return Err(Error::NonMonotoneSeries {
                label: self.label.clone(),
                param,
            });
        }
        self.samples.push((param, value));
        Ok(())
    }

    pub fn from_samples(label: impl Into<String>, samples: &[(f64, f64)]) -> Result<Self> {
        let mut s = Self::new(label);
        for &(p, v) in samples {
            s.push(p, v)?;
        }
        Ok(s)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Samples with `lo ≤ param ≤ hi`.
    pub fn window(&self, lo: f64, hi: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.samples.iter().copied().filter(move |&(p, _)| p >= lo && p <= hi)
    }

    /// `max/min` of the values in the window (`∞` if the minimum is 0).
    pub fn max_over_min(&self, lo: f64, hi: f64) -> f64 {
        let (mn, mx) = self
            .window(lo, hi)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), (_, v)| (a.min(v), b.max(v)));
        if mx == 0.0 {
            1.0
        } else {
            mx / mn
        }
    }

    /// Value at the last parameter `≤ param`.
    pub fn at(&self, param: f64) -> Option<f64> {
        self.samples.iter().rev().find(|&&(p, _)| p <= param).map(|&(_, v)| v)
    }

    pub fn last(&self) -> Option<(f64, f64)> {
        self.samples.last().copied()
    }
}

/// `h² Σ_α Σ_nodes (∂_α u)²` at level `k` of a block covering `k ± 1`.
fn gradient_energy(block: &FieldBlock, k: i64) -> f64 {
    let spec = *block.spec();
    let total = sum_rows(0..spec.n(), |i| {
        let mut row = Vec::new();
        block.row_gradient(k, i, &mut row);
        let mut acc = NeumaierSum::new();
        for (_, d) in &row {
            acc.add(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
        }
        acc
    });
    total * spec.h * spec.h
}

/// `‖∂Γ^I w(t)‖_{L²(R²)}` by grid quadrature.
pub fn constant_time_energy(hist: &SolutionHistory, index: &MultiIndex, t: f64) -> Result<f64> {
    Ok(constant_time_energies(hist, std::slice::from_ref(index), t)?[0])
}

/// [`constant_time_energy`] for several indices at once; indices sharing
/// their innermost field reuse it.
pub fn constant_time_energies(hist: &SolutionHistory, indices: &[MultiIndex], t: f64) -> Result<Vec<f64>> {
    let k = hist.snapshot_index(t)?;
    let m = indices.iter().map(MultiIndex::time_margin).max().unwrap_or(0) as i64 + 1;
    hist.require(k - m, k + m, t)?;
    let base = FieldBlock::from_history(hist, k - m, k + m)?;
    let mut groups: BTreeMap<Option<FieldId>, Vec<usize>> = BTreeMap::new();
    for (q, index) in indices.iter().enumerate() {
        groups.entry(index.fields().last().copied()).or_default().push(q);
    }
    let mut out = vec![0.0; indices.len()];
    for (inner, members) in groups {
        let (block, strip) = match inner {
            None => (base.clone(), 0),
            Some(f) => {
                let mi = f.uses_time() as i64;
                (base.apply_range(f, k - m + mi, k + m - mi), 1)
            }
        };
        for q in members {
            let fields = indices[q].fields();
            let outer = MultiIndex::new(&fields[..fields.len() - strip]);
            let levels = block.apply_multi_range(&outer, k - 1, k + 1);
            out[q] = gradient_energy(&levels, k).sqrt();
        }
    }
    Ok(out)
}

/// Result of a least-squares power-law fit `value ≈ amplitude·param^exponent`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayFit {
    pub exponent: f64,
    pub amplitude: f64,
    pub r_squared: f64,
    pub samples: usize,
}

/// Minimum samples in the fit window.
pub const MIN_FIT_SAMPLES: usize = 5;

/// Fit `log(value)` against `log(param)` over the window.
pub fn decay_fit(series: &DiagnosticSeries, window: (f64, f64)) -> Result<DecayFit> {
    let pts: Vec<(f64, f64)> = series.window(window.0, window.1).collect();
    if pts.len() < MIN_FIT_SAMPLES {
        return Err(Error::InsufficientSamples {
            needed: MIN_FIT_SAMPLES,
            found: pts.len(),
        });
    }
    if let Some(&(param, value)) = pts.iter().find(|(p, v)| !(*v > 0.0) || !(*p > 0.0)) {
        return Err(Error::NonPositiveValue { param, value });
    }
    let xy: Vec<(f64, f64)> = pts.iter().map(|(p, v)| (p.ln(), v.ln())).collect();
    let n = xy.len() as f64;
    let mx = xy.iter().map(|p| p.0).sum::<f64>() / n;
    let my = xy.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = xy.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = xy.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = xy.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = xy.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let r_squared = if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 };
    Ok(DecayFit {
        exponent: slope,
        amplitude: intercept.exp(),
        r_squared,
        samples: xy.len(),
    })
}

/// `⟨y⟩ = (1 + y²)^{1/2}`.
#[inline]
pub fn japanese(y: f64) -> f64 {
    (1.0 + y * y).sqrt()
}

/// `G_au = (x_a/|x|)∂_tu + ∂_au`, with `G_au(0) = ∂_au`.
#[inline]
pub fn good_derivatives(x: [f64; 2], du: [f64; 3]) -> [f64; 2] {
    let r = x[0].hypot(x[1]);
    if r == 0.0 {
        [du[1], du[2]]
    } else {
        [x[0] / r * du[0] + du[1], x[1] / r * du[0] + du[2]]
    }
}

/// Running `∫∫ |G_au|² ⟨t − |x|⟩^{−1−δ} dx dt` per `a`.
#[derive(Debug, Clone, PartialEq)]
pub struct GhostWeightAccumulator {
    pub delta: f64,
    pub integrals: [f64; 2],
    pub last_t: Option<f64>,
}

impl GhostWeightAccumulator {
    pub fn new(delta: f64) -> Result<Self> {
        if !(delta > 0.0) {
            return Err(Error::NonPositiveValue {
                param: 0.0,
                value: delta,
            });
        }
        Ok(GhostWeightAccumulator {
            delta,
            integrals: [0.0; 2],
            last_t: None,
        })
    }

    pub fn total(&self) -> f64 {
        self.integrals[0] + self.integrals[1]
    }
}

/// `(|G₁u|², |G₂u|²)·⟨t − |x|⟩^{−1−δ}` at one node.
#[inline]
fn ghost_terms(t: f64, x: [f64; 2], du: [f64; 3], delta: f64) -> [f64; 2] {
    if du == [0.0; 3] {
        return [0.0; 2];
    }
    let w = japanese(t - x[0].hypot(x[1])).powf(-1.0 - delta);
    let g = good_derivatives(x, du);
    [g[0] * g[0] * w, g[1] * g[1] * w]
}

/// `Σ_nodes |G_au|²⟨t − |x|⟩^{−1−δ} h²` per `a` from the gradient at time `t`.
pub fn ghost_increment(spec: &GridSpec, t: f64, grad: [&[f64]; 3], delta: f64) -> [f64; 2] {
    let n = spec.n();
    let [a, b] = crate::summation::sum_rows_n::<2, _>(0..n, |i| {
        let mut acc = [NeumaierSum::new(); 2];
        for j in 0..n {
            let idx = i * n + j;
            let du = [grad[0][idx], grad[1][idx], grad[2][idx]];
            if du == [0.0; 3] {
                continue;
            }
            let g = ghost_terms(t, spec.node(i, j), du, delta);
            acc[0].add(g[0]);
            acc[1].add(g[1]);
        }
        acc
    });
    let cell = spec.h * spec.h;
    [a * cell, b * cell]
}

/// Row sweep shared by the monitor: `(sup|u|, sup Σ|∂u|, ghost sums)`.
fn snapshot_sweep(block: &FieldBlock, k: i64, delta: f64) -> (f64, f64, [f64; 2]) {
    let spec = *block.spec();
    let n = spec.n();
    let t = spec.snapshot_time(k);
    let u = block.level(k);
    let rows: Vec<(f64, f64, [NeumaierSum; 2])> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut row = Vec::new();
            block.row_gradient(k, i, &mut row);
            let sup_u = u[i * n..(i + 1) * n].iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            let mut sup_du = 0.0_f64;
            let mut acc = [NeumaierSum::new(); 2];
            for &(j, d) in &row {
                sup_du = sup_du.max(d[0].abs() + d[1].abs() + d[2].abs());
                if d == [0.0; 3] {
                    continue;
                }
                let g = ghost_terms(t, spec.node(i, j), d, delta);
                acc[0].add(g[0]);
                acc[1].add(g[1]);
            }
            (sup_u, sup_du, acc)
        })
        .collect();
    let mut sup = (0.0_f64, 0.0_f64);
    let mut ghost = [NeumaierSum::new(); 2];
    for (a, b, acc) in &rows {
        sup = (sup.0.max(*a), sup.1.max(*b));
        ghost[0].merge(&acc[0]);
        ghost[1].merge(&acc[1]);
    }
    let cell = spec.h * spec.h;
    (sup.0, sup.1, [ghost[0].value() * cell, ghost[1].value() * cell])
}

/// Add `dt·Σ|G_a Γ^I w|²⟨t − |x|⟩^{−1−δ}h²` at the snapshot time `t`.
pub fn ghost_weight_update(
    acc: &mut GhostWeightAccumulator,
    hist: &SolutionHistory,
    index: &MultiIndex,
    t: f64,
    dt: f64,
) -> Result<()> {
    let k = hist.snapshot_index(t)?;
    let m = index.time_margin() as i64 + 1;
    hist.require(k - m, k + m, t)?;
    let block = FieldBlock::from_history(hist, k - m, k + m)?.apply_multi_range(index, k - 1, k + 1);
    let grad = block.gradient(k);
    let inc = ghost_increment(hist.spec(), t, [&grad[0], &grad[1], &grad[2]], acc.delta);
    acc.integrals[0] += dt * inc[0];
    acc.integrals[1] += dt * inc[1];
    acc.last_t = Some(t);
    Ok(())
}

/// Series gathered while a run streams snapshots.
#[derive(Debug, Clone)]
pub struct RunMonitor {
    /// Indices for constant-time energies.
    pub indices: Vec<MultiIndex>,
    /// Energies every this many snapshots.
    pub energy_every: usize,
    /// One `‖∂Γ^Iw‖` series per index.
    pub energy: Vec<DiagnosticSeries>,
    pub sup_w: DiagnosticSeries,
    pub sup_dw: DiagnosticSeries,
    /// Ghost-weight integral for `u = w`, updated at every snapshot.
    pub ghost: GhostWeightAccumulator,
    pub ghost_series: DiagnosticSeries,
}

impl RunMonitor {
    pub fn new(indices: Vec<MultiIndex>, energy_every: usize, delta: f64) -> Result<Self> {
        let energy = indices.iter().map(|i| DiagnosticSeries::new(format!("energy_t:{i}"))).collect();
        Ok(RunMonitor {
            indices,
            energy_every: energy_every.max(1),
            energy,
            sup_w: DiagnosticSeries::new("sup:w"),
            sup_dw: DiagnosticSeries::new("sup:dw"),
            ghost: GhostWeightAccumulator::new(delta)?,
            ghost_series: DiagnosticSeries::new("ghost:w"),
        })
    }

    pub fn energy_of(&self, index: &MultiIndex) -> Option<&DiagnosticSeries> {
        self.indices.iter().position(|i| i == index).map(|p| &self.energy[p])
    }
}

impl Observer for RunMonitor {
    fn margin(&self) -> usize {
        self.indices.iter().map(MultiIndex::time_margin).max().unwrap_or(0) + 1
    }

    fn observe(&mut self, hist: &SolutionHistory, k: i64) -> Result<()> {
        let spec = *hist.spec();
        let t = spec.snapshot_time(k);
        let block = FieldBlock::from_history(hist, k - 1, k + 1)?;
        let (sup_w, sup_dw, inc) = snapshot_sweep(&block, k, self.ghost.delta);
        self.sup_w.push(t, sup_w)?;
        self.sup_dw.push(t, sup_dw)?;
        let dt = spec.snapshot_dt();
        // trapezoid weights: half at the first snapshot
        let wq = if k == 0 { 0.5 * dt } else { dt };
        self.ghost.integrals[0] += wq * inc[0];
        self.ghost.integrals[1] += wq * inc[1];
        self.ghost.last_t = Some(t);
        self.ghost_series.push(t, self.ghost.total())?;
        if !self.indices.is_empty() && (k as usize).is_multiple_of(self.energy_every) {
            let values = constant_time_energies(hist, &self.indices, t)?;
            for (series, v) in self.energy.iter_mut().zip(values) {
                series.push(t, v)?;
            }
        }
        Ok(())
    }
}

/// `|P^{γαβ}∂_γu∂_αu∂_βu|` majorant:
/// `(s/t)²|∂_tu|³ + Σ_a |∂̲_au||∂_tu|²` for each of the three slots.
pub fn trilinear_majorant(t: f64, x: [f64; 2], du: [f64; 3]) -> f64 {
    let st2 = 1.0 - (x[0] * x[0] + x[1] * x[1]) / (t * t);
    let dt = du[0].abs();
    let mut total = st2 * dt * dt * dt;
    for a in 1..=2 {
        let good = (x[a - 1] / t * du[0] + du[a]).abs();
        total += 3.0 * good * dt * dt;
    }
    total
}

/// Grid maxima over the cone of `LHS/(RHS + η)` for both null-form estimates
/// with `u = v = w`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NullFormReport {
    pub t: f64,
    pub bilinear: f64,
    pub trilinear: f64,
    pub max_lhs: f64,
}

pub fn null_form_estimate_check(hist: &SolutionHistory, p: &CubicTensor, t: f64) -> Result<NullFormReport> {
    let spec = *hist.spec();
    let k = hist.snapshot_index(t)?;
    hist.require(k - 2, k + 2, t)?;
    let block = FieldBlock::from_history(hist, k - 2, k + 2)?;
    let d = Derivatives::of(&block, k);
    let n = spec.n();
    let node = |idx: usize| spec.node(idx / n, idx % n);
    let c = p.coeffs();
    let bilinear_lhs: Vec<f64> = (0..spec.len())
        .map(|idx| null_form(p, d.grad_at(idx), &d.hess_at(idx)).abs())
        .collect();
    let bilinear_rhs: Vec<f64> = (0..spec.len())
        .map(|idx| {
            let g = d.grad_at(idx);
            null_form_majorant(t, node(idx), g, g, &d.hess_at(idx))
        })
        .collect();
    let tri = |idx: usize| {
        let g = d.grad_at(idx);
        let mut v = 0.0;
        for a in 0..3 {
            for b in 0..3 {
                for e in 0..3 {
                    v += c[a][b][e] * g[a] * g[b] * g[e];
                }
            }
        }
        (v.abs(), trilinear_majorant(t, node(idx), g))
    };
    let tri_vals: Vec<(f64, f64)> = (0..spec.len()).map(tri).collect();
    let tri_rhs: Vec<f64> = tri_vals.iter().map(|v| v.1).collect();
    let eta_b = regularizer(scale(&bilinear_rhs));
    let eta_t = regularizer(scale(&tri_rhs));
    let max_lhs = (0..spec.len())
        .filter(|&idx| in_cone(t, node(idx)))
        .map(|idx| bilinear_lhs[idx])
        .fold(0.0, f64::max);
    Ok(NullFormReport {
        t,
        bilinear: max_ratio(&spec, t, eta_b, |idx| (bilinear_lhs[idx], bilinear_rhs[idx])),
        trilinear: max_ratio(&spec, t, eta_t, |idx| tri_vals[idx]),
        max_lhs,
    })
}

/// The hyperboloidal energy inequalities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Inequality {
    /// `E(s)^{1/2} ≤ E(s₀)^{1/2} + ∫‖h‖`
    StandardEnergy,
    /// `E_con(s)^{1/2} ≤ E_con(s₀)^{1/2} + ∫τ‖h‖`
    ConformalEnergy,
    /// `‖(s/t)u‖(s) ≤ ‖u‖(s₀) + ∫E_con^{1/2}/τ`
    L2Norm,
    /// `‖(s/t)L₀u‖ + Σ‖(s/t)L_au‖ + ‖(s/t)Ω₁₂u‖ ≲ ‖(s/t)u‖ + E_con^{1/2}`
    ScalingNorm,
    /// The quasilinear energy estimate with implicit constant 1.
    Quasilinear,
}

impl Inequality {
    pub const ALL: [Inequality; 5] = [
        Inequality::StandardEnergy,
        Inequality::ConformalEnergy,
        Inequality::L2Norm,
        Inequality::ScalingNorm,
        Inequality::Quasilinear,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Inequality::StandardEnergy => "E-E1",
            Inequality::ConformalEnergy => "E-E2",
            Inequality::L2Norm => "E-E3",
            Inequality::ScalingNorm => "E-E4",
            Inequality::Quasilinear => "quasi-EE",
        }
    }

    /// Slice channels the check reads for `u = Γ^I w`.
    pub fn channels(self, index: &MultiIndex) -> Result<Vec<Channel>> {
        let mut ch = Channel::with_gradient(index).to_vec();
        let first = index.fields().first().copied();
        match self {
            Inequality::StandardEnergy | Inequality::ConformalEnergy => {
                index.check_order(1)?;
                ch.push(Channel::WaveSource(first));
            }
            Inequality::L2Norm => {}
            Inequality::ScalingNorm => {
                for f in [FieldId::L0, FieldId::L1, FieldId::L2, FieldId::O12] {
                    ch.push(Channel::Field(index.prepend(f)));
                }
            }
            Inequality::Quasilinear => {
                index.check_order(1)?;
                ch.push(Channel::Source(first));
                for a in 0..3 {
                    for b in a..3 {
                        ch.push(Channel::Field(MultiIndex::new(&[FieldId::partial(a), FieldId::partial(b)])));
                    }
                }
            }
        }
        Ok(ch)
    }
}

/// Both sides of an inequality at one `s`; `margin = rhs − lhs`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarginSample {
    pub s: f64,
    pub lhs: f64,
    pub rhs: f64,
}

impl MarginSample {
    pub fn margin(&self) -> f64 {
        self.rhs - self.lhs
    }

    pub fn ratio(&self) -> f64 {
        if self.lhs == 0.0 {
            0.0
        } else {
            self.lhs / self.rhs
        }
    }
}

/// Evaluate an inequality over slices in ascending `s`, with `s`-integrals by
/// trapezoid.
pub fn energy_inequality_check(
    p: &CubicTensor,
    slices: &[HyperboloidSlice],
    which: Inequality,
    index: &MultiIndex,
) -> Result<Vec<MarginSample>> {
    let missing = || Error::UnknownField(format!("{index} (with gradient) on slice"));
    let first = index.fields().first().copied();
    // per-slice (quantity at s, integrand at s)
    let mut rows = Vec::with_capacity(slices.len());
    for slice in slices {
        let g = &*slice.geometry;
        let u = slice.field(index).ok_or_else(missing)?;
        let row = match which {
            Inequality::StandardEnergy | Inequality::ConformalEnergy => {
                let h = slice.channel(&Channel::WaveSource(first)).ok_or_else(missing)?;
                let hn = crate::hyperboloid::lp_norm(g, h, crate::hyperboloid::Lp::Two);
                if which == Inequality::StandardEnergy {
                    (natural_energy(&u).v1.sqrt(), hn)
                } else {
                    (conformal_energy(&u).sqrt(), g.s * hn)
                }
            }
            Inequality::L2Norm => (weighted_l2(g, u.u), conformal_energy(&u).sqrt() / g.s),
            Inequality::ScalingNorm => {
                let r = l0_norm_bound_check(slice, index)?;
                (r.lhs, r.rhs)
            }
            Inequality::Quasilinear => {
                let h = slice.channel(&Channel::Source(first)).ok_or_else(missing)?;
                let hess = |a: usize, b: usize| {
                    let (a, b) = (a.min(b), a.max(b));
                    slice
                        .values_of(&MultiIndex::new(&[FieldId::partial(a), FieldId::partial(b)]))
                        .ok_or_else(missing)
                };
                let mut hw = Vec::with_capacity(9);
                for a in 0..3 {
                    for b in 0..3 {
                        hw.push(hess(a, b)?);
                    }
                }
                let c = p.coeffs();
                let integrand = g.integrate(|n| {
                    let st = g.s / g.nodes[n].t;
                    let du = u.grad_at(n);
                    let mut v = 0.0;
                    for ga in 0..3 {
                        for al in 0..3 {
                            for be in 0..3 {
                                let pc = c[ga][al][be];
                                if pc != 0.0 {
                                    v += 2.0 * pc * hw[3 * ga + al][n] * du[be] * du[0];
                                    v -= pc * hw[ga][n] * du[al] * du[be];
                                }
                            }
                        }
                    }
                    st * (v + 2.0 * h[n] * du[0])
                });
                (natural_energy(&u).v1, integrand)
            }
        };
        rows.push((g.s, row));
    }
    let Some(&(s0, (q0, _))) = rows.first() else {
        return Ok(Vec::new());
    };
    let mut integral = NeumaierSum::new();
    let mut out = Vec::with_capacity(rows.len());
    for (q, &(s, (val, integrand))) in rows.iter().enumerate() {
        if q > 0 {
            let (sp, (_, ip)) = rows[q - 1];
            integral.add(0.5 * (s - sp) * (ip + integrand));
        }
        let sample = match which {
            Inequality::ScalingNorm => MarginSample {
                s,
                lhs: val,
                rhs: integrand,
            },
            Inequality::L2Norm => {
                // the right side starts from the unweighted norm at s₀
                let u0 = slices[0].values_of(index).ok_or_else(missing)?;
                let norm0 = crate::hyperboloid::lp_norm(&slices[0].geometry, u0, crate::hyperboloid::Lp::Two);
                MarginSample {
                    s,
                    lhs: val,
                    rhs: norm0 + integral.value(),
                }
            }
            Inequality::Quasilinear => MarginSample {
                s,
                lhs: val,
                rhs: q0 + integral.value().abs(),
            },
            _ => MarginSample {
                s,
                lhs: val,
                rhs: q0 + integral.value(),
            },
        };
        out.push(sample);
    }
    debug_assert!(out.first().is_none_or(|m| m.s == s0));
    Ok(out)
}

/// Sample the slices an inequality needs from a history holding them and
/// evaluate it.
pub fn energy_inequality_run(
    hist: &SolutionHistory,
    which: Inequality,
    index: &MultiIndex,
    s_values: &[f64],
) -> Result<Vec<MarginSample>> {
    let channels = which.channels(index)?;
    let mut jobs = s_values
        .iter()
        .map(|&s| Ok(SliceJob::new(Arc::new(SliceGeometry::new(hist.spec(), s)?), channels.clone())))
        .collect::<Result<Vec<_>>>()?;
    fill_jobs(hist, &mut jobs)?;
    let slices: Vec<HyperboloidSlice> = jobs.into_iter().map(SliceJob::into_slice).collect();
    energy_inequality_check(hist.tensor(), &slices, which, index)
}

/// The monitored bootstrap bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Bound {
    /// `E^{1/2} ≤ C₁ε`, `|I| ≤ N`
    Energy,
    /// `E_con^{1/2} ≤ C₁εs^δ`, `|I| ≤ N − 1`
    ConformalDelta,
    /// `E_con^{1/2} ≤ C₁εs^{2δ}`, `|I| ≤ N`
    Conformal2Delta,
    /// `sup|∂Γ^Iw| ≤ C₁εs^{−1}`, `|I| ≤ N − 2`
    Gradient,
    /// `sup t·Σ_a|∂̄_aΓ^Iw| ≤ C₁εs^{−1+δ}`, `|I| ≤ N − 3`
    GoodDelta,
    /// `sup t·Σ_a|∂̄_aΓ^Iw| ≤ C₁εs^{−1+2δ}`, `|I| ≤ N − 2`
    Good2Delta,
}

impl Bound {
    pub const ALL: [Bound; 6] = [
        Bound::Energy,
        Bound::ConformalDelta,
        Bound::Conformal2Delta,
        Bound::Gradient,
        Bound::GoodDelta,
        Bound::Good2Delta,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Bound::Energy => "energy",
            Bound::ConformalDelta => "econ_delta",
            Bound::Conformal2Delta => "econ_2delta",
            Bound::Gradient => "decay_grad",
            Bound::GoodDelta => "decay_good_delta",
            Bound::Good2Delta => "decay_good_2delta",
        }
    }

    /// Largest `|I|` the bound covers with `N = n_max`, if any.
    pub fn max_order(self, n_max: usize) -> Option<usize> {
        let drop = match self {
            Bound::Energy | Bound::Conformal2Delta => 0,
            Bound::ConformalDelta => 1,
            Bound::Gradient | Bound::Good2Delta => 2,
            Bound::GoodDelta => 3,
        };
        n_max.checked_sub(drop)
    }

    /// `s`-dependence of the threshold.
    pub fn rate(self, s: f64, delta: f64) -> f64 {
        match self {
            Bound::Energy => 1.0,
            Bound::ConformalDelta => s.powf(delta),
            Bound::Conformal2Delta => s.powf(2.0 * delta),
            Bound::Gradient => 1.0 / s,
            Bound::GoodDelta => s.powf(-1.0 + delta),
            Bound::Good2Delta => s.powf(-1.0 + 2.0 * delta),
        }
    }
}

/// Monitored quantities of one `Γ^I w` on one slice.
#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapSample {
    pub s: f64,
    pub index: MultiIndex,
    pub energy_half: f64,
    pub conformal_half: f64,
    /// `sup Σ_α|∂_αΓ^Iw|`
    pub sup_gradient: f64,
    /// `sup t·Σ_a|∂̄_aΓ^Iw|`
    pub sup_good: f64,
}

impl BootstrapSample {
    pub fn from_slice(slice: &HyperboloidSlice, index: &MultiIndex) -> Result<Self> {
        let u = slice
            .field(index)
            .ok_or_else(|| Error::UnknownField(format!("{index} (with gradient) on slice")))?;
        let g = &*slice.geometry;
        Ok(BootstrapSample {
            s: g.s,
            index: index.clone(),
            energy_half: natural_energy(&u).v1.max(0.0).sqrt(),
            conformal_half: conformal_energy(&u).sqrt(),
            sup_gradient: g.sup(|n| u.grad_at(n).iter().map(|v| v.abs()).sum()),
            sup_good: g.sup(|n| {
                let hyp = u.hyperboloidal_at(n);
                g.nodes[n].t * (hyp[1].abs() + hyp[2].abs())
            }),
        })
    }

    pub fn value(&self, bound: Bound) -> f64 {
        match bound {
            Bound::Energy => self.energy_half,
            Bound::ConformalDelta | Bound::Conformal2Delta => self.conformal_half,
            Bound::Gradient => self.sup_gradient,
            Bound::GoodDelta | Bound::Good2Delta => self.sup_good,
        }
    }
}

/// One comparison of the monitor.
#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapCheck {
    pub s: f64,
    pub index: MultiIndex,
    pub bound: Bound,
    pub value: f64,
    pub threshold: f64,
}

impl BootstrapCheck {
    pub fn pass(&self) -> bool {
        self.value <= self.threshold
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapLedger {
    pub checks: Vec<BootstrapCheck>,
    /// Bounds each order was assigned to.
    pub tiers: Vec<(usize, Vec<Bound>)>,
}

impl BootstrapLedger {
    pub fn first_violation(&self) -> Option<&BootstrapCheck> {
        self.checks.iter().find(|c| !c.pass())
    }

    pub fn all_pass(&self) -> bool {
        self.first_violation().is_none()
    }
}

/// Check the samples (in ascending `s`) against `C₁ε` times each bound's rate.
pub fn bootstrap_monitor(samples: &[BootstrapSample], c1: f64, eps: f64, delta: f64, n_max: usize) -> BootstrapLedger {
    let tiers = (0..=n_max)
        .map(|order| {
            let bounds = Bound::ALL
                .iter()
                .copied()
                .filter(|b| b.max_order(n_max).is_some_and(|m| order <= m))
                .collect();
            (order, bounds)
        })
        .collect::<Vec<(usize, Vec<Bound>)>>();
    let mut checks = Vec::new();
    for sample in samples {
        let order = sample.index.order();
        let Some((_, bounds)) = tiers.iter().find(|(o, _)| *o == order) else {
            continue;
        };
        for &bound in bounds {
            checks.push(BootstrapCheck {
                s: sample.s,
                index: sample.index.clone(),
                bound,
                value: sample.value(bound),
                threshold: c1 * eps * bound.rate(sample.s, delta),
            });
        }
    }
    BootstrapLedger { checks, tiers }
}

/// Smallest `C₁` meeting every bound at the first sampled `s`, times `factor`.
pub fn calibrate_c1(samples: &[BootstrapSample], eps: f64, delta: f64, n_max: usize, factor: f64) -> f64 {
    let Some(s0) = samples.first().map(|s| s.s) else {
        return factor;
    };
    let probe = bootstrap_monitor(samples, 1.0, eps, delta, n_max);
    let c = probe
        .checks
        .iter()
        .filter(|c| c.s == s0)
        .map(|c| c.value / c.threshold)
        .fold(0.0, f64::max);
    factor * c
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hyperboloid::SliceGeometry;
    use crate::nulltensor::{make_cm_tensor, SpacetimeVector};
    use crate::solver::{run, InitialData, ManufacturedBump, Polynomial, Simulation, ZeroField};
    use proptest::prelude::*;

    fn small() -> GridSpec {
        GridSpec {
            half_width: 4.0,
            h: 0.1,
            dt: 0.04,
            t0: 2.0,
            t_max: 4.0,
            snapshot_stride: 2,
        }
    }

    #[test]
    fn series_rules() {
        let mut s = DiagnosticSeries::new("x");
        s.push(1.0, 2.0).unwrap();
        assert!(matches!(s.push(1.0, 3.0), Err(Error::NonMonotoneSeries { .. })));
        assert!(matches!(s.push(2.0, f64::NAN), Err(Error::NonFinite { .. })));
        s.push(2.0, 4.0).unwrap();
        assert_eq!(s.max_over_min(0.0, 5.0), 2.0);
        assert_eq!(s.at(1.5), Some(2.0));
    }

    #[test]
    fn power_law_fits() {
        let pts: Vec<(f64, f64)> = [10.0, 20.0, 40.0, 80.0, 160.0].iter().map(|&t: &f64| (t, t.powf(-0.5))).collect();
        let f = decay_fit(&DiagnosticSeries::from_samples("p", &pts).unwrap(), (0.0, 1e9)).unwrap();
        assert!((f.exponent + 0.5).abs() < 1e-12);
        assert!((f.r_squared - 1.0).abs() < 1e-12);
        assert!((f.amplitude - 1.0).abs() < 1e-12);
        let flat: Vec<(f64, f64)> = (1..=6).map(|t| (t as f64, 3.0)).collect();
        let f = decay_fit(&DiagnosticSeries::from_samples("c", &flat).unwrap(), (0.0, 10.0)).unwrap();
        assert_eq!(f.exponent, 0.0);
        assert!(matches!(
            decay_fit(&DiagnosticSeries::from_samples("c", &flat).unwrap(), (0.0, 3.0)),
            Err(Error::InsufficientSamples { needed: 5, found: 3 })
        ));
        let mut bad = flat.clone();
        bad[2].1 = 0.0;
        assert!(matches!(
            decay_fit(&DiagnosticSeries::from_samples("b", &bad).unwrap(), (0.0, 10.0)),
            Err(Error::NonPositiveValue { .. })
        ));
    }

    #[test]
    fn ghost_weight_of_unit_time_derivative() {
        let spec = small();
        let ones = vec![1.0; spec.len()];
        let zeros = vec![0.0; spec.len()];
        let t = 3.0;
        let inc = ghost_increment(&spec, t, [&ones, &zeros, &zeros], 0.1);
        let mut expect = 0.0;
        for i in 0..spec.n() {
            for j in 0..spec.n() {
                let x = spec.node(i, j);
                if x != [0.0, 0.0] {
                    expect += japanese(t - x[0].hypot(x[1])).powf(-1.1);
                }
            }
        }
        expect *= spec.h * spec.h;
        assert!((inc[0] + inc[1] - expect).abs() < 1e-12 * expect);

        // a zero field leaves the accumulator unchanged
        let hist = SolutionHistory::from_closed_form(spec, &ZeroField, 0, 10);
        let mut acc = GhostWeightAccumulator::new(0.1).unwrap();
        ghost_weight_update(&mut acc, &hist, &MultiIndex::empty(), spec.snapshot_time(5), 0.08).unwrap();
        assert_eq!(acc.integrals, [0.0, 0.0]);
        assert!(GhostWeightAccumulator::new(0.0).is_err());
    }

    #[test]
    fn constant_time_energy_of_closed_forms() {
        let spec = small();
        let tx = Polynomial::new(&[(1.0, [1, 1, 0])]);
        let hist = SolutionHistory::from_closed_form(spec, &tx, 0, 20);
        let k = 6;
        let t = spec.snapshot_time(k);
        let e = constant_time_energy(&hist, &MultiIndex::empty(), t).unwrap();
        let mut expect = NeumaierSum::new();
        for i in 0..spec.n() {
            for j in 0..spec.n() {
                let x = spec.node(i, j);
                // centred differences see zeros past the last column
                let d1 = if j == 0 || j == spec.n() - 1 { t * 0.5 } else { t };
                let d1 = if j == 0 { (t * spec.node(i, 1)[0] - 0.0) / (2.0 * spec.h) } else if j == spec.n() - 1 { (0.0 - t * spec.node(i, j - 1)[0]) / (2.0 * spec.h) } else { d1 };
                // and rows past the edge read as zero for ∂₂
                let d2 = if i == 0 || i == spec.n() - 1 { t * x[0] / (2.0 * spec.h) } else { 0.0 };
                expect.add(x[0] * x[0] + d1 * d1 + d2 * d2);
            }
        }
        let expect = (expect.value() * spec.h * spec.h).sqrt();
        assert!((e - expect).abs() < 1e-12 * expect, "{e} {expect}");
        // grouped evaluation agrees with one index at a time
        let indices = MultiIndex::all_up_to(2, &FieldId::ALL);
        let all = constant_time_energies(&hist, &indices, t).unwrap();
        for (i, v) in indices.iter().zip(&all).step_by(5) {
            assert_eq!(*v, constant_time_energy(&hist, i, t).unwrap());
        }

        // translating the data by whole cells moves nothing
        let bump = ManufacturedBump::new(1.0, 0.8);
        let mut shifted = ManufacturedBump::new(1.0, 0.8);
        shifted.bump.center = [0.3, -0.5];
        let a = SolutionHistory::from_closed_form(spec, &bump, 0, 20);
        let b = SolutionHistory::from_closed_form(spec, &shifted, 0, 20);
        let (ea, eb) = (
            constant_time_energy(&a, &"d1".parse().unwrap(), t).unwrap(),
            constant_time_energy(&b, &"d1".parse().unwrap(), t).unwrap(),
        );
        assert!((ea - eb).abs() < 1e-12 * ea);
    }

    #[test]
    fn null_form_checks_vanish_trivially() {
        let spec = GridSpec::fitted(0.1, 0.04, 2.0, 3.0, 2);
        let p = make_cm_tensor(SpacetimeVector::new(1.0, 0.0, 0.0));
        let zero = SolutionHistory::from_closed_form(spec, &ZeroField, 0, 10);
        let r = null_form_estimate_check(&zero, &p, spec.snapshot_time(5)).unwrap();
        assert_eq!((r.bilinear, r.trilinear), (0.0, 0.0));
        let mut sim = Simulation::new(spec, p, InitialData::bump(0.05));
        sim.margin = 3;
        let hist = run(&sim, &mut []).unwrap();
        let r = null_form_estimate_check(&hist, &CubicTensor::zero(), spec.snapshot_time(5)).unwrap();
        assert_eq!((r.bilinear, r.max_lhs), (0.0, 0.0));
        let r = null_form_estimate_check(&hist, &p, spec.snapshot_time(5)).unwrap();
        assert!(r.bilinear.is_finite() && r.bilinear > 0.0 && r.trilinear.is_finite());
    }

    #[test]
    fn inequalities_on_zero_field() {
        let spec = GridSpec::fitted(0.2, 0.08, 2.0, 6.0, 1);
        let hist = SolutionHistory::from_closed_form(spec, &ZeroField, -8, 60);
        for which in Inequality::ALL {
            let m = energy_inequality_run(&hist, which, &MultiIndex::empty(), &[2.0, 2.5, 3.0]).unwrap();
            assert_eq!(m.len(), 3);
            assert!(m.iter().all(|q| q.margin() == 0.0), "{which:?}");
        }
        assert!(matches!(
            Inequality::Quasilinear.channels(&"L1,L0".parse().unwrap()),
            Err(Error::OrderTooHigh { .. })
        ));
    }

    #[test]
    fn bootstrap_thresholds() {
        let spec = GridSpec::fitted(0.2, 0.08, 2.0, 6.0, 1);
        let geometry = Arc::new(SliceGeometry::new(&spec, 3.0).unwrap());
        let zero = HyperboloidSlice::from_closed_form(geometry, &ZeroField);
        let sample = BootstrapSample::from_slice(&zero, &MultiIndex::empty()).unwrap();
        assert!(bootstrap_monitor(&[sample], 1.0, 1e-3, 0.1, 2).all_pass());

        let (c1, eps) = (5.0, 0.01);
        let inject = |s: f64| BootstrapSample {
            s,
            index: MultiIndex::empty(),
            energy_half: 2.0 * c1 * eps,
            conformal_half: 0.0,
            sup_gradient: 0.0,
            sup_good: 0.0,
        };
        let ledger = bootstrap_monitor(&[inject(2.0), inject(3.0)], c1, eps, 0.1, 2);
        let v = ledger.first_violation().unwrap();
        assert_eq!((v.s, v.bound), (2.0, Bound::Energy));
        // N = 2: order 0 gets every bound except the |I| ≤ N − 3 one
        assert_eq!(ledger.tiers[0].1.len(), 5);
        assert_eq!(ledger.tiers[2].1, vec![Bound::Energy, Bound::Conformal2Delta]);
        assert!(calibrate_c1(&[inject(2.0)], eps, 0.1, 2, 4.0) > 0.0);
    }

    proptest! {
        #[test]
        fn ghost_increments_are_nonnegative(vals in prop::collection::vec(-3.0f64..3.0, 3), t in 2.0f64..20.0) {
            let spec = GridSpec { half_width: 1.0, ..small() };
            let g: Vec<Vec<f64>> = vals.iter().map(|&v| vec![v; spec.len()]).collect();
            let inc = ghost_increment(&spec, t, [&g[0], &g[1], &g[2]], 0.1);
            prop_assert!(inc[0] >= 0.0 && inc[1] >= 0.0);
        }

        #[test]
        fn good_derivatives_kill_outgoing_waves(theta in 0.0..std::f64::consts::TAU, r in 0.1f64..10.0, a in -2.0f64..2.0) {
            // u = F(r − t): ∂_tu = −F', ∂_au = (x_a/r)F'
            let x = [r * theta.cos(), r * theta.sin()];
            let g = good_derivatives(x, [-a, x[0] / r * a, x[1] / r * a]);
            prop_assert!(g[0].abs() < 1e-14 && g[1].abs() < 1e-14);
        }
    }
}
