//! Fields sampled on hyperboloids `H_s = {t² = s² + |x|²}`, the weighted norms
//! and energies on them, and the quasilinear conformal identity.
//!
//! A slice lives on the spatial grid: node `x` carries the value at
//! `t(x) = √(s² + |x|²)`, obtained by 4-point Lagrange interpolation in `t`
//! across the snapshots around `t(x)`. Snapshot values at neighbouring times
//! come from [`PointStencil`], so any `Γ^I w` can be sampled without
//! materializing whole grids. Slices are filled while the solver streams
//! snapshots (see [`SliceSampler`]).
//!
//! Along a slice `∂̄_a` is plain differentiation in `x_a` at fixed `s`, so
//! derivatives of slice quantities are centred differences over slice nodes.

use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::frames::{partial_psi0, FramePoint, S0};
use crate::nulltensor::{CubicTensor, MINKOWSKI};
use crate::solver::{ClosedForm, GridSpec, Observer, SolutionHistory};
use crate::summation::NeumaierSum;
use crate::vectorfields::{null_form, FieldBlock, FieldId, MultiIndex};
use std::collections::HashMap;

/// Default offset for `∂_s` of slice quantities.
pub const DEFAULT_DS: f64 = 0.05;

/// Radius of the cone `t ≥ |x| + 1` on `H_s`.
pub fn cone_radius(s: f64) -> f64 {
    0.5 * (s * s - 1.0)
}

/// One grid node of a slice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SliceNode {
    pub i: usize,
    pub j: usize,
    pub x: [f64; 2],
    pub t: f64,
    /// Quadrature weight: 1 inside, ½ on the band of half-cell width either
    /// side of the cone circle, 0 on the halo.
    pub weight: f64,
}

/// Row `i` of a slice holds nodes `offset..offset + (hi − lo)` for columns
/// `lo..hi`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Row {
    i: usize,
    lo: usize,
    hi: usize,
    offset: usize,
}

/// The nodes of a slice, the quadrature weights and a one-and-a-half cell
/// halo used by differences along the slice.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceGeometry {
    pub s: f64,
    pub spec: GridSpec,
    pub mask_radius: f64,
    pub nodes: Vec<SliceNode>,
    rows: Vec<Row>,
}

impl SliceGeometry {
    /// Nodes of `H_s` inside the cone.
    pub fn new(spec: &GridSpec, s: f64) -> Result<Self> {
        if !(s >= S0 - 1e-12) {
            return Err(Error::SliceTooEarly(s));
        }
        Ok(Self::with_radius(spec, s, cone_radius(s)))
    }

    /// Nodes of `H_s` within `radius` (synthetic masks).
    pub fn with_radius(spec: &GridSpec, s: f64, radius: f64) -> Self {
        let h = spec.h;
        let halo = radius + 2.0 * h;
        let mut nodes = Vec::new();
        let mut rows = Vec::new();
        let n = spec.n();
        for i in 0..n {
            let x2 = spec.coord(i);
            if x2.abs() > halo {
                continue;
            }
            let mut lo = usize::MAX;
            let offset = nodes.len();
            for j in 0..n {
                let x = spec.node(i, j);
                let r = x[0].hypot(x[1]);
                if r > halo {
                    continue;
                }
                let weight = if r <= radius - 0.5 * h {
                    1.0
                } else if r <= radius + 0.5 * h {
                    0.5
                } else {
                    0.0
                };
                lo = lo.min(j);
                nodes.push(SliceNode {
                    i,
                    j,
                    x,
                    t: s.hypot(r),
                    weight,
                });
            }
            if lo != usize::MAX {
                rows.push(Row {
                    i,
                    lo,
                    hi: lo + nodes.len() - offset,
                    offset,
                });
            }
        }
        SliceGeometry {
            s,
            spec: *spec,
            mask_radius: radius,
            nodes,
            rows,
        }
    }

    /// The same nodes lifted to `H_{s'}`.
    pub fn companion(&self, s: f64) -> SliceGeometry {
        let mut g = self.clone();
        g.s = s;
        for node in &mut g.nodes {
            node.t = s.hypot(node.x[0].hypot(node.x[1]));
        }
        g
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Cell area `h²`.
    pub fn cell(&self) -> f64 {
        self.spec.h * self.spec.h
    }

    /// `[min t, max t]` over the nodes.
    pub fn time_range(&self) -> (f64, f64) {
        self.nodes
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), n| (lo.min(n.t), hi.max(n.t)))
    }

    pub fn frame_point(&self, n: usize) -> FramePoint {
        FramePoint::on_hyperboloid(self.s, self.nodes[n].x).expect("positive s")
    }

    /// Position of grid node `(i, j)` among the slice nodes.
    pub fn position(&self, i: usize, j: usize) -> Option<usize> {
        let first = self.rows.first()?.i;
        let row = self.rows.get(i.checked_sub(first)?)?;
        debug_assert_eq!(row.i, i);
        (row.lo..row.hi).contains(&j).then(|| row.offset + j - row.lo)
    }

    /// Centred `∂̄_a` of a slice array at node `n`; neighbours outside the
    /// node set read as zero.
    pub fn dbar(&self, values: &[f64], n: usize, a: usize) -> f64 {
        let node = &self.nodes[n];
        let (i, j) = (node.i, node.j);
        let get = |i: usize, j: usize| self.position(i, j).map_or(0.0, |p| values[p]);
        let (plus, minus) = match a {
            1 => (get(i, j + 1), if j > 0 { get(i, j - 1) } else { 0.0 }),
            2 => (get(i + 1, j), if i > 0 { get(i - 1, j) } else { 0.0 }),
            _ => panic!("spatial index {a}"),
        };
        (plus - minus) / (2.0 * self.spec.h)
    }

    /// `Σ weight·f(n)·h²`, in node order.
    pub fn integrate<F: Fn(usize) -> f64>(&self, f: F) -> f64 {
        let mut acc = NeumaierSum::new();
        for (n, node) in self.nodes.iter().enumerate() {
            if node.weight > 0.0 {
                acc.add(node.weight * f(n));
            }
        }
        acc.value() * self.cell()
    }

    /// Max of `f` over nodes with positive weight.
    pub fn sup<F: Fn(usize) -> f64>(&self, f: F) -> f64 {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, node)| node.weight > 0.0)
            .map(|(n, _)| f(n))
            .fold(0.0, f64::max)
    }
}

/// A quantity sampled on a slice.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Channel {
    /// `Γ^I w`.
    Field(MultiIndex),
    /// The right side `h` of `g^{αβ}∂_α∂_β(Γw) = h`:
    /// `N(w, Γw) − Γ[N(w, w)] − c_Γ N(w, w)` with `N` built from the run's
    /// tensor. `None` stands for `u = w`, where `h = 0`.
    Source(Option<FieldId>),
    /// `N(w, w) = P^{γαβ}∂_γw∂_α∂_βw`.
    NullForm,
    /// The right side of `−□(Γw) = −Γ[N(w, w)] − c_Γ N(w, w)`; `None` gives
    /// `−N(w, w)` for `u = w`.
    WaveSource(Option<FieldId>),
}

impl Channel {
    pub fn field(index: &MultiIndex) -> Channel {
        Channel::Field(index.clone())
    }

    /// The channels `u, ∂_t u, ∂₁u, ∂₂u` for `u = Γ^I w`.
    pub fn with_gradient(index: &MultiIndex) -> [Channel; 4] {
        [
            Channel::Field(index.clone()),
            Channel::Field(index.prepend(FieldId::Dt)),
            Channel::Field(index.prepend(FieldId::D1)),
            Channel::Field(index.prepend(FieldId::D2)),
        ]
    }

    /// Snapshots needed on each side beyond the interpolation stencil.
    pub fn time_margin(&self) -> usize {
        match self {
            Channel::Field(i) => i.time_margin(),
            Channel::Source(None) => 0,
            Channel::Source(Some(f)) => 2 + f.uses_time() as usize,
            Channel::NullForm => 2,
            Channel::WaveSource(None) => 2,
            Channel::WaveSource(Some(f)) => 2 + f.uses_time() as usize,
        }
    }
}

/// A field at hyperbolic time `s`, one array per channel, aligned with the
/// geometry's nodes.
#[derive(Debug, Clone)]
pub struct HyperboloidSlice {
    pub geometry: Arc<SliceGeometry>,
    pub channels: Vec<Channel>,
    pub values: Vec<Vec<f64>>,
}

/// `u` and its Cartesian gradient on a slice.
#[derive(Debug, Clone, Copy)]
pub struct SliceField<'a> {
    pub geometry: &'a SliceGeometry,
    pub u: &'a [f64],
    pub grad: [&'a [f64]; 3],
}

impl SliceField<'_> {
    #[inline]
    pub fn grad_at(&self, n: usize) -> [f64; 3] {
        [self.grad[0][n], self.grad[1][n], self.grad[2][n]]
    }

    /// `(∂_s u, ∂̄₁u, ∂̄₂u)` at node `n`.
    #[inline]
    pub fn hyperboloidal_at(&self, n: usize) -> [f64; 3] {
        let node = &self.geometry.nodes[n];
        let [ut, u1, u2] = self.grad_at(n);
        let inv_t = 1.0 / node.t;
        [
            self.geometry.s * inv_t * ut,
            node.x[0] * inv_t * ut + u1,
            node.x[1] * inv_t * ut + u2,
        ]
    }
}

impl HyperboloidSlice {
    pub fn s(&self) -> f64 {
        self.geometry.s
    }

    pub fn channel(&self, ch: &Channel) -> Option<&[f64]> {
        self.channels.iter().position(|c| c == ch).map(|p| self.values[p].as_slice())
    }

    pub fn values_of(&self, index: &MultiIndex) -> Option<&[f64]> {
        self.channel(&Channel::Field(index.clone()))
    }

    /// `Γ^I w` with its gradient, when all four channels were sampled.
    pub fn field(&self, index: &MultiIndex) -> Option<SliceField<'_>> {
        let [u, d0, d1, d2] = Channel::with_gradient(index);
        Some(SliceField {
            geometry: &self.geometry,
            u: self.channel(&u)?,
            grad: [self.channel(&d0)?, self.channel(&d1)?, self.channel(&d2)?],
        })
    }

    /// A slice filled from a function of the node, e.g. closed forms.
    pub fn from_fn<F>(geometry: Arc<SliceGeometry>, channels: Vec<Channel>, f: F) -> Self
    where
        F: Fn(&SliceNode, &Channel) -> f64 + Sync,
    {
        let values = channels
            .iter()
            .map(|ch| geometry.nodes.par_iter().map(|node| f(node, ch)).collect())
            .collect();
        HyperboloidSlice {
            geometry,
            channels,
            values,
        }
    }

    /// A closed-form field `u` with exact gradient on the given geometry,
    /// stored under the index `I = ∅`.
    pub fn from_closed_form<F: ClosedForm + ?Sized>(geometry: Arc<SliceGeometry>, field: &F) -> Self {
        let channels = Channel::with_gradient(&MultiIndex::empty()).to_vec();
        Self::from_fn(geometry, channels, |node, ch| match ch {
            Channel::Field(i) if i.order() == 0 => field.value(node.t, node.x),
            Channel::Field(i) => field.gradient(node.t, node.x)[match i.fields()[0] {
                FieldId::Dt => 0,
                FieldId::D1 => 1,
                _ => 2,
            }],
            _ => 0.0,
        })
    }

    /// Plain-text export: `s=<value>`, then `x1 x2 u dtu d1u d2u` for every
    /// node of positive weight.
    pub fn export<W: Write>(&self, index: &MultiIndex, out: &mut W) -> Result<()> {
        let field = self
            .field(index)
            .ok_or_else(|| Error::UnknownField(format!("{index} (with gradient) on slice")))?;
        let io = |e| Error::io("<slice export>", e);
        writeln!(out, "s={}", self.s()).map_err(io)?;
        for (n, node) in self.geometry.nodes.iter().enumerate() {
            if node.weight > 0.0 {
                let g = field.grad_at(n);
                writeln!(
                    out,
                    "{} {} {} {} {} {}",
                    node.x[0], node.x[1], field.u[n], g[0], g[1], g[2]
                )
                .map_err(io)?;
            }
        }
        Ok(())
    }
}

/// Weights of the cubic Lagrange interpolant through nodes `−1, 0, 1, 2` at
/// `θ ∈ [0, 1)`. At `θ = 0` they are exactly `(0, 1, 0, 0)`.
#[inline]
pub fn lagrange4(theta: f64) -> [f64; 4] {
    let (a, b, c, d) = (theta + 1.0, theta, theta - 1.0, theta - 2.0);
    [
        -(b * c * d) / 6.0,
        a * c * d / 2.0,
        -(a * b * d) / 2.0,
        a * b * c / 6.0,
    ]
}

/// Snapshot `k` with `t_k ≤ t < t_{k+1}` and the fraction `θ`.
fn bucket(spec: &GridSpec, t: f64) -> (i64, f64) {
    let d = spec.snapshot_dt();
    let mut k = ((t - spec.t0) / d).floor() as i64;
    if spec.snapshot_time(k) > t {
        k -= 1;
    }
    if spec.snapshot_time(k + 1) <= t {
        k += 1;
    }
    (k, (t - spec.snapshot_time(k)) / d)
}

/// Base field of an [`Expr`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Base {
    W,
    /// `N(w, w)`
    NullForm,
    /// `N(w, Γw) − Γ[N(w, w)] − c_Γ N(w, w)`
    Source(FieldId),
    /// `−Γ[N(w, w)] − c_Γ N(w, w)`
    WaveSource(FieldId),
}

/// `Γ^I` applied to a base field.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct Expr {
    fields: Vec<FieldId>,
    base: Base,
}

impl Expr {
    fn w(fields: &[FieldId]) -> Expr {
        Expr {
            fields: fields.to_vec(),
            base: Base::W,
        }
    }

    fn base(base: Base) -> Expr {
        Expr {
            fields: Vec::new(),
            base,
        }
    }

    fn depth(&self) -> usize {
        self.fields.len()
            + match self.base {
                Base::W => 0,
                Base::NullForm => 2,
                Base::Source(_) | Base::WaveSource(_) => 3,
            }
    }
}

type Level = Arc<Vec<f64>>;

/// Whole-grid levels of the quantities behind slice channels, computed once
/// per snapshot and shared by every slice and channel that needs them. The
/// arithmetic is that of [`FieldBlock`], node for node.
#[derive(Debug, Clone, Default)]
pub struct LevelCache {
    levels: HashMap<(Expr, i64), Level>,
}

impl LevelCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of arrays held.
    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    /// Drop levels below `k`.
    pub fn evict_below(&mut self, k: i64) {
        self.levels.retain(|(_, level), _| *level >= k);
    }

    /// `∂w` and the Hessian of `Γ^inner w` at level `k`, as `(∂_a, ∂_b, …)`
    /// for `a ≤ b`.
    fn derivatives(&mut self, hist: &SolutionHistory, inner: &[FieldId], k: i64) -> ([Level; 3], [[Level; 3]; 3]) {
        let grad = [0, 1, 2].map(|g| self.get(hist, &Expr::w(&[FieldId::partial(g)]), k));
        let mut hess: [[Option<Level>; 3]; 3] = Default::default();
        for a in 0..3 {
            for b in a..3 {
                let mut fields = vec![FieldId::partial(a), FieldId::partial(b)];
                fields.extend_from_slice(inner);
                let v = self.get(hist, &Expr::w(&fields), k);
                hess[a][b] = Some(v.clone());
                hess[b][a] = Some(v);
            }
        }
        (grad, hess.map(|row| row.map(|v| v.expect("filled"))))
    }

    fn get(&mut self, hist: &SolutionHistory, e: &Expr, k: i64) -> Level {
        if e.fields.is_empty() && e.base == Base::W {
            return hist.get(k).unwrap_or_else(|| panic!("snapshot {k} not held")).data.clone();
        }
        if let Some(v) = self.levels.get(&(e.clone(), k)) {
            return v.clone();
        }
        let spec = *hist.spec();
        let p = *hist.tensor();
        let value = match (e.fields.split_first(), e.base) {
            (None, Base::NullForm) => {
                let (grad, hess) = self.derivatives(hist, &[], k);
                Arc::new(null_form_levels(&p, &grad, &hess, |_, v| v))
            }
            (None, Base::Source(f)) => {
                let (grad, hess) = self.derivatives(hist, &[f], k);
                let n0 = self.get(hist, &Expr::base(Base::NullForm), k);
                let gamma_n = self.get(
                    hist,
                    &Expr {
                        fields: vec![f],
                        base: Base::NullForm,
                    },
                    k,
                );
                let c = f.commutator_constant();
                Arc::new(null_form_levels(&p, &grad, &hess, |idx, v| {
                    let lead = if c != 0.0 { c * n0[idx] } else { 0.0 };
                    v - gamma_n[idx] - lead
                }))
            }
            (Some((&field, rest)), base) => {
                let inner = Expr {
                    fields: rest.to_vec(),
                    base,
                };
                let m = field.uses_time() as i64;
                let levels = (k - m..=k + m).map(|q| self.get(hist, &inner, q)).collect();
                FieldBlock::from_shared(spec, hist.compact_support(), k - m, inner.depth(), levels)
                    .apply_range(field, k, k)
                    .shared_level(k)
            }
            (None, Base::WaveSource(f)) => {
                let n0 = self.get(hist, &Expr::base(Base::NullForm), k);
                let gamma_n = self.get(
                    hist,
                    &Expr {
                        fields: vec![f],
                        base: Base::NullForm,
                    },
                    k,
                );
                let c = f.commutator_constant();
                Arc::new(
                    (0..spec.len())
                        .into_par_iter()
                        .map(|idx| if c != 0.0 { -gamma_n[idx] - c * n0[idx] } else { -gamma_n[idx] })
                        .collect(),
                )
            }
            (None, Base::W) => unreachable!("raw snapshots are not cached"),
        };
        self.levels.insert((e.clone(), k), value.clone());
        value
    }

    /// Level `k` of a channel.
    pub fn channel(&mut self, hist: &SolutionHistory, ch: &Channel, k: i64) -> Level {
        match ch {
            Channel::Field(index) => self.get(hist, &Expr::w(index.fields()), k),
            Channel::NullForm => self.get(hist, &Expr::base(Base::NullForm), k),
            Channel::Source(None) => Arc::new(vec![0.0; hist.spec().len()]),
            Channel::Source(Some(f)) => self.get(hist, &Expr::base(Base::Source(*f)), k),
            Channel::WaveSource(None) => {
                let n0 = self.get(hist, &Expr::base(Base::NullForm), k);
                Arc::new(n0.par_iter().map(|v| -v).collect())
            }
            Channel::WaveSource(Some(f)) => self.get(hist, &Expr::base(Base::WaveSource(*f)), k),
        }
    }
}

/// `post(idx, N(v, u))` at every node from `∂v` and the Hessian of `u`.
fn null_form_levels<F>(p: &CubicTensor, grad: &[Level; 3], hess: &[[Level; 3]; 3], post: F) -> Vec<f64>
where
    F: Fn(usize, f64) -> f64 + Sync,
{
    (0..grad[0].len())
        .into_par_iter()
        .map(|idx| {
            let dv = [grad[0][idx], grad[1][idx], grad[2][idx]];
            let mut ddu = [[0.0; 3]; 3];
            for (a, row) in ddu.iter_mut().enumerate() {
                for (b, v) in row.iter_mut().enumerate() {
                    *v = hess[a][b][idx];
                }
            }
            post(idx, null_form(p, dv, &ddu))
        })
        .collect()
}

/// A slice being filled as snapshots arrive.
#[derive(Debug, Clone)]
pub struct SliceJob {
    slice: HyperboloidSlice,
    /// Node positions sorted by interpolation bucket, with the bucket.
    order: Vec<(i64, u32)>,
    cursor: usize,
}

impl SliceJob {
    pub fn new(geometry: Arc<SliceGeometry>, channels: Vec<Channel>) -> Self {
        let spec = geometry.spec;
        let mut order: Vec<(i64, u32)> = geometry
            .nodes
            .iter()
            .enumerate()
            .map(|(n, node)| (bucket(&spec, node.t).0, n as u32))
            .collect();
        order.sort_unstable();
        let len = geometry.len();
        let values = vec![vec![0.0; len]; channels.len()];
        SliceJob {
            slice: HyperboloidSlice {
                geometry,
                channels,
                values,
            },
            order,
            cursor: 0,
        }
    }

    pub fn margin(&self) -> usize {
        2 + self.slice.channels.iter().map(Channel::time_margin).max().unwrap_or(0)
    }

    /// Snapshot buckets spanned by the nodes.
    pub fn buckets(&self) -> Option<(i64, i64)> {
        Some((self.order.first()?.0, self.order.last()?.0))
    }

    pub fn is_complete(&self) -> bool {
        self.cursor == self.order.len()
    }

    /// Interpolate every node whose bucket is `≤ k`.
    pub fn fill_through(&mut self, hist: &SolutionHistory, cache: &mut LevelCache, k: i64) -> Result<()> {
        let end = self.cursor + self.order[self.cursor..].partition_point(|(b, _)| *b <= k);
        if end == self.cursor {
            return Ok(());
        }
        let geometry = self.slice.geometry.clone();
        let spec = geometry.spec;
        let m = self.margin() as i64 - 2;
        let lo = self.order[self.cursor].0;
        if let Err(e) = hist.require(lo - 1 - m, k + 2 + m, spec.snapshot_time(k)) {
            let (t_lo, t_hi) = geometry.time_range();
            let (a, b) = hist.range().unwrap_or((0, -1));
            return Err(match e {
                Error::StencilOutOfRange { .. } => Error::Coverage {
                    s: geometry.s,
                    t_lo,
                    t_hi,
                    available_lo: spec.snapshot_time(a),
                    available_hi: spec.snapshot_time(b),
                },
                e => e,
            });
        }
        let channels = &self.slice.channels;
        let levels: Vec<Vec<Level>> = channels
            .iter()
            .map(|ch| (lo - 1..=k + 2).map(|q| cache.channel(hist, ch, q)).collect())
            .collect();
        let filled: Vec<(u32, Vec<f64>)> = self.order[self.cursor..end]
            .par_iter()
            .map(|&(b, n)| {
                let node = &geometry.nodes[n as usize];
                let (kb, theta) = bucket(&spec, node.t);
                debug_assert_eq!(kb, b);
                let w = lagrange4(theta);
                let idx = spec.index(node.i, node.j);
                let first = (kb - 1 - (lo - 1)) as usize;
                let vals = levels
                    .iter()
                    .map(|lv| {
                        let mut acc = 0.0;
                        for (q, wq) in w.iter().enumerate() {
                            acc += wq * lv[first + q][idx];
                        }
                        acc
                    })
                    .collect();
                (n, vals)
            })
            .collect();
        for (n, vals) in filled {
            for (c, v) in vals.into_iter().enumerate() {
                self.slice.values[c][n as usize] = v;
            }
        }
        self.cursor = end;
        Ok(())
    }

    pub fn into_slice(self) -> HyperboloidSlice {
        self.slice
    }
}

/// Streams snapshots into a set of slices.
#[derive(Debug, Clone, Default)]
pub struct SliceSampler {
    pub jobs: Vec<SliceJob>,
    cache: LevelCache,
}

impl SliceSampler {
    /// Check that the run will cover every job: buckets from `−1` (the
    /// pre-history) through the last snapshot.
    pub fn new(spec: &GridSpec, jobs: Vec<SliceJob>) -> Result<Self> {
        let last = spec.last_snapshot();
        for job in &jobs {
            if let Some((lo, hi)) = job.buckets() {
                if lo < -1 || hi > last {
                    let (t_lo, t_hi) = job.slice.geometry.time_range();
                    return Err(Error::Coverage {
                        s: job.slice.geometry.s,
                        t_lo,
                        t_hi,
                        available_lo: spec.snapshot_time(-1),
                        available_hi: spec.snapshot_time(last + 1),
                    });
                }
            }
        }
        Ok(SliceSampler {
            jobs,
            cache: LevelCache::new(),
        })
    }

    pub fn into_slices(self) -> Vec<HyperboloidSlice> {
        self.jobs.into_iter().map(SliceJob::into_slice).collect()
    }
}

impl Observer for SliceSampler {
    fn margin(&self) -> usize {
        self.jobs.iter().map(SliceJob::margin).max().unwrap_or(0)
    }

    fn observe(&mut self, history: &SolutionHistory, k: i64) -> Result<()> {
        for job in &mut self.jobs {
            job.fill_through(history, &mut self.cache, k)?;
        }
        self.cache.evict_below(k - self.margin() as i64);
        Ok(())
    }
}

/// Sample a slice from a history holding every snapshot it needs.
pub fn sample_slice(hist: &SolutionHistory, s: f64, channels: Vec<Channel>) -> Result<HyperboloidSlice> {
    let geometry = Arc::new(SliceGeometry::new(hist.spec(), s)?);
    sample_on(hist, geometry, channels)
}

/// [`sample_slice`] on a given geometry.
pub fn sample_on(
    hist: &SolutionHistory,
    geometry: Arc<SliceGeometry>,
    channels: Vec<Channel>,
) -> Result<HyperboloidSlice> {
    let mut jobs = [SliceJob::new(geometry, channels)];
    fill_jobs(hist, &mut jobs)?;
    let [job] = jobs;
    Ok(job.into_slice())
}

/// Fill jobs from a history holding every snapshot they need, sweeping the
/// snapshots once in order.
pub fn fill_jobs(hist: &SolutionHistory, jobs: &mut [SliceJob]) -> Result<()> {
    let Some((lo, hi)) = jobs
        .iter()
        .filter_map(SliceJob::buckets)
        .reduce(|a, b| (a.0.min(b.0), a.1.max(b.1)))
    else {
        return Ok(());
    };
    let margin = jobs.iter().map(SliceJob::margin).max().unwrap_or(0) as i64;
    let mut cache = LevelCache::new();
    for k in lo..=hi {
        for job in jobs.iter_mut() {
            job.fill_through(hist, &mut cache, k)?;
        }
        cache.evict_below(k - margin);
    }
    Ok(())
}

/// Exponent of an `L^p` norm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Lp {
    One,
    Two,
    Inf,
}

/// `(Σ |u|^p h²)^{1/p}` over the mask, or the max for `p = ∞`.
pub fn lp_norm(geometry: &SliceGeometry, u: &[f64], p: Lp) -> f64 {
    match p {
        Lp::One => geometry.integrate(|n| u[n].abs()),
        Lp::Two => geometry.integrate(|n| u[n] * u[n]).sqrt(),
        Lp::Inf => geometry.sup(|n| u[n].abs()),
    }
}

/// `‖(s/t)·u‖_{L²}` over the mask.
pub fn weighted_l2(geometry: &SliceGeometry, u: &[f64]) -> f64 {
    let s = geometry.s;
    geometry
        .integrate(|n| {
            let v = s / geometry.nodes[n].t * u[n];
            v * v
        })
        .sqrt()
}

/// The natural energy by its three integrands.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NaturalEnergy {
    /// `(∂_tu)² + Σ(∂_au)² + 2(x^a/t)∂_tu∂_au`
    pub v1: f64,
    /// `((s/t)∂_tu)² + Σ(∂̄_au)²`
    pub v2: f64,
    /// `(∂̄_⊥u)² + Σ((s/t)∂_au)² + (t⁻¹Ω₁₂u)²`
    pub v3: f64,
    /// Max over nodes of the disagreement between the integrands relative to
    /// `(∂_tu)² + Σ(∂_au)²`.
    pub max_pointwise_defect: f64,
}

/// The three integrands at one point; equal since `s² + |x|² = t²`.
pub fn energy_integrands(s: f64, t: f64, x: [f64; 2], d: [f64; 3]) -> [f64; 3] {
    let [ut, u1, u2] = d;
    let inv_t = 1.0 / t;
    let st = s * inv_t;
    let (y1, y2) = (x[0] * inv_t, x[1] * inv_t);
    let v1 = ut * ut + u1 * u1 + u2 * u2 + 2.0 * (y1 * ut * u1 + y2 * ut * u2);
    let (b1, b2) = (y1 * ut + u1, y2 * ut + u2);
    let v2 = (st * ut).powi(2) + b1 * b1 + b2 * b2;
    let perp = ut + y1 * u1 + y2 * u2;
    let rot = (x[0] * u2 - x[1] * u1) * inv_t;
    let v3 = perp * perp + (st * u1).powi(2) + (st * u2).powi(2) + rot * rot;
    [v1, v2, v3]
}

pub fn natural_energy(field: &SliceField) -> NaturalEnergy {
    let g = field.geometry;
    let forms: Vec<[f64; 3]> = (0..g.len())
        .into_par_iter()
        .map(|n| {
            let node = &g.nodes[n];
            energy_integrands(g.s, node.t, node.x, field.grad_at(n))
        })
        .collect();
    let defect = (0..g.len())
        .filter(|&n| g.nodes[n].weight > 0.0)
        .map(|n| {
            let [ut, u1, u2] = field.grad_at(n);
            let size = ut * ut + u1 * u1 + u2 * u2;
            let [a, b, c] = forms[n];
            if size > 0.0 {
                ((a - b).abs().max((a - c).abs())) / size
            } else {
                0.0
            }
        })
        .fold(0.0, f64::max);
    NaturalEnergy {
        v1: g.integrate(|n| forms[n][0]),
        v2: g.integrate(|n| forms[n][1]),
        v3: g.integrate(|n| forms[n][2]),
        max_pointwise_defect: defect,
    }
}

/// `Σ(s∂̄_au)² + (Ku + u)²` with `Ku = s∂_su + 2x^a∂̄_au`.
#[inline]
pub fn conformal_integrand(s: f64, x: [f64; 2], u: f64, hyp: [f64; 3]) -> f64 {
    let [ds, b1, b2] = hyp;
    let ku = s * ds + 2.0 * (x[0] * b1 + x[1] * b2);
    (s * b1).powi(2) + (s * b2).powi(2) + (ku + u).powi(2)
}

pub fn conformal_energy(field: &SliceField) -> f64 {
    let g = field.geometry;
    g.integrate(|n| conformal_integrand(g.s, g.nodes[n].x, field.u[n], field.hyperboloidal_at(n)))
}

/// Sides of `‖(s/t)L₀u‖ + Σ‖(s/t)L_au‖ + ‖(s/t)Ω₁₂u‖ ≲ ‖(s/t)u‖ + E_con^{1/2}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatioReport {
    pub lhs: f64,
    pub rhs: f64,
}

impl RatioReport {
    pub fn ratio(&self) -> f64 {
        if self.lhs == 0.0 {
            0.0
        } else {
            self.lhs / self.rhs
        }
    }
}

/// Needs `u` with gradient and the channels `L₀u, L₁u, L₂u, Ω₁₂u` for
/// `u = Γ^I w`.
pub fn l0_norm_bound_check(slice: &HyperboloidSlice, index: &MultiIndex) -> Result<RatioReport> {
    let field = slice
        .field(index)
        .ok_or_else(|| Error::UnknownField(format!("{index} with gradient")))?;
    let g = &*slice.geometry;
    let mut lhs = 0.0;
    for f in [FieldId::L0, FieldId::L1, FieldId::L2, FieldId::O12] {
        let v = slice
            .values_of(&index.prepend(f))
            .ok_or_else(|| Error::UnknownField(format!("{}", index.prepend(f))))?;
        lhs += weighted_l2(g, v);
    }
    let rhs = weighted_l2(g, field.u) + conformal_energy(&field).sqrt();
    debug_assert!(!rhs.is_finite() || lhs.is_finite());
    Ok(RatioReport { lhs, rhs })
}

/// The boosts `L^J` with `|J| ≤ 2`.
pub fn boost_indices() -> Vec<MultiIndex> {
    MultiIndex::all_up_to(2, &FieldId::BOOSTS)
}

/// Constants of `sup|t·u| ≲ Σ_{|J|≤2}‖L^J u‖` and
/// `sup|s·u| ≲ Σ_{|J|≤2}‖(s/t)L^J u‖` on one slice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SobolevReport {
    pub s: f64,
    pub plain: RatioReport,
    pub weighted: RatioReport,
}

/// Needs the channels `L^J Γ^I w` for [`boost_indices`] composed on `index`.
pub fn sobolev_check(slice: &HyperboloidSlice, index: &MultiIndex) -> Result<SobolevReport> {
    let g = &*slice.geometry;
    let u = slice
        .values_of(index)
        .ok_or_else(|| Error::UnknownField(index.to_string()))?;
    let mut plain = 0.0;
    let mut weighted = 0.0;
    for j in boost_indices() {
        let mut full = j.clone();
        full.0.extend_from_slice(index.fields());
        let v = slice
            .values_of(&full)
            .ok_or_else(|| Error::UnknownField(full.to_string()))?;
        plain += lp_norm(g, v, Lp::Two);
        weighted += weighted_l2(g, v);
    }
    let sup_t = g.sup(|n| (g.nodes[n].t * u[n]).abs());
    let sup_s = g.sup(|n| (g.s * u[n]).abs());
    Ok(SobolevReport {
        s: g.s,
        plain: RatioReport {
            lhs: sup_t,
            rhs: plain,
        },
        weighted: RatioReport {
            lhs: sup_s,
            rhs: weighted,
        },
    })
}

/// The metric contractions at one point, from `g^{αβ} = −m^{αβ} + P^{γαβ}∂_γw`
/// (symmetrized in `αβ`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Contractions {
    /// `g^{αβ}Ψ⁰_αΨ⁰_β`
    pub g00: f64,
    /// `g^{αβ}Ψ⁰_αΨ^a_β = g^{αa}Ψ⁰_α`
    pub g0a: [f64; 2],
    /// `g^{αβ}Ψ^γ_α ∂̄_γΨ⁰_β = g^{αβ}∂_αΨ⁰_β`
    pub gc: f64,
    /// spatial block `g^{ab}`
    pub gab: [[f64; 2]; 2],
}

pub fn metric(p: &CubicTensor, dw: [f64; 3]) -> [[f64; 3]; 3] {
    let pg = p.contract_first(&dw);
    let mut g = [[0.0; 3]; 3];
    for a in 0..3 {
        for b in 0..3 {
            let minus_m = if a == b { -MINKOWSKI[a] } else { 0.0 };
            g[a][b] = minus_m + 0.5 * (pg[a][b] + pg[b][a]);
        }
    }
    g
}

pub fn contractions(p: &CubicTensor, point: &FramePoint, dw: [f64; 3]) -> Contractions {
    let g = metric(p, dw);
    let inv_s = 1.0 / point.s;
    let psi0 = [point.t * inv_s, -point.x[0] * inv_s, -point.x[1] * inv_s];
    let dpsi = partial_psi0(point);
    let mut g00 = 0.0;
    let mut gc = 0.0;
    let mut g0a = [0.0; 2];
    for a in 0..3 {
        for b in 0..3 {
            g00 += g[a][b] * psi0[a] * psi0[b];
            gc += g[a][b] * dpsi[a][b];
        }
        g0a[0] += g[a][1] * psi0[a];
        g0a[1] += g[a][2] * psi0[a];
    }
    Contractions {
        g00,
        g0a,
        gc,
        gab: [[g[1][1], g[1][2]], [g[2][1], g[2][2]]],
    }
}

/// The conformal quantities of one slice.
#[derive(Debug, Clone, PartialEq)]
pub struct QuasiConformal {
    pub s: f64,
    /// `∫ Z² + 2M₂`: twice `∫ ½Z² + M₂`, normalized so that it equals `E_con`
    /// for the flat metric.
    pub e_tilde: f64,
    /// `2∫ sZh − sZM₁ − M₄` (same normalization).
    pub source: f64,
    /// `2∫ M₃`, which vanishes in the continuum.
    pub m3: f64,
    /// `∫ Σ(s∂̄_au)² + (Ku + u)²` from the same samples.
    pub e_con: f64,
    pub z: Vec<f64>,
    pub m1: Vec<f64>,
    pub m2: Vec<f64>,
    pub m4: Vec<f64>,
}

/// Inputs of [`quasilinear_conformal`]: `u` with gradient and source on the
/// slice, and `∂w` on the slice and on its companions at `s ± ds` (same
/// nodes). Below `s − ds < 2` a one-sided rule on `s, s + ds, s + 2ds` may be
/// passed instead.
pub struct ConformalInputs<'a> {
    pub u: SliceField<'a>,
    pub h: &'a [f64],
    pub dw: [&'a [f64]; 3],
    pub ds: f64,
    pub companions: Companions<'a>,
}

pub enum Companions<'a> {
    /// `∂w` on `H_{s−ds}` and `H_{s+ds}`.
    Centred([[&'a [f64]; 3]; 2]),
    /// `∂w` on `H_{s+ds}` and `H_{s+2ds}`.
    Forward([[&'a [f64]; 3]; 2]),
}

impl Companions<'_> {
    fn offsets(&self) -> [f64; 2] {
        match self {
            Companions::Centred(_) => [-1.0, 1.0],
            Companions::Forward(_) => [1.0, 2.0],
        }
    }

    fn fields(&self) -> &[[&[f64]; 3]; 2] {
        match self {
            Companions::Centred(f) | Companions::Forward(f) => f,
        }
    }
}

/// The contraction quantities whose `∂_s` enters `M₁` and `M₄`:
/// `G00, G0a (2), Gc, s²G00 g^{ab} (4)`.
fn ds_targets(p: &CubicTensor, s: f64, x: [f64; 2], dw: [f64; 3]) -> [f64; 8] {
    let point = FramePoint::on_hyperboloid(s, x).expect("positive s");
    let c = contractions(p, &point, dw);
    let k = s * s * c.g00;
    [
        c.g00,
        c.g0a[0],
        c.g0a[1],
        c.gc,
        k * c.gab[0][0],
        k * c.gab[0][1],
        k * c.gab[1][0],
        k * c.gab[1][1],
    ]
}

/// `Z, M₁, M₂, M₄` node by node and `Ẽ_con`, evaluated from their displayed
/// expressions; `∂_s` of contractions by differences across companion slices,
/// `∂̄_a` by differences along the slice.
pub fn quasilinear_conformal(p: &CubicTensor, inputs: &ConformalInputs) -> QuasiConformal {
    let field = &inputs.u;
    let g = field.geometry;
    let s = g.s;
    let len = g.len();
    let grad_w = |src: &[&[f64]; 3], n: usize| [src[0][n], src[1][n], src[2][n]];

    let con: Vec<Contractions> = (0..len)
        .into_par_iter()
        .map(|n| contractions(p, &g.frame_point(n), grad_w(&inputs.dw, n)))
        .collect();
    let [o1, o2] = inputs.companions.offsets();
    let comps = inputs.companions.fields();
    let dsc: Vec<[f64; 8]> = (0..len)
        .into_par_iter()
        .map(|n| {
            let x = g.nodes[n].x;
            let a = ds_targets(p, s + o1 * inputs.ds, x, grad_w(&comps[0], n));
            let b = ds_targets(p, s + o2 * inputs.ds, x, grad_w(&comps[1], n));
            let mut out = [0.0; 8];
            match inputs.companions {
                Companions::Centred(_) => {
                    for q in 0..8 {
                        out[q] = (b[q] - a[q]) / (2.0 * inputs.ds);
                    }
                }
                Companions::Forward(_) => {
                    let here = ds_targets(p, s, x, grad_w(&inputs.dw, n));
                    for q in 0..8 {
                        out[q] = (-3.0 * here[q] + 4.0 * a[q] - b[q]) / (2.0 * inputs.ds);
                    }
                }
            }
            out
        })
        .collect();

    // products differentiated along the slice
    let s2 = s * s;
    let f1: Vec<[[f64; 2]; 2]> = con.iter().map(|c| c.gab.map(|r| r.map(|v| c.g00 * v))).collect();
    let f2: Vec<[[[f64; 2]; 2]; 2]> = con
        .iter()
        .map(|c| [0, 1].map(|a| c.gab.map(|r| r.map(|v| s2 * c.g0a[a] * v))))
        .collect();
    let f3: Vec<[[f64; 2]; 2]> = con.iter().map(|c| c.gab.map(|r| r.map(|v| s2 * c.gc * v))).collect();
    let f4: Vec<[[f64; 2]; 2]> = con.iter().map(|c| c.gab.map(|r| r.map(|v| s * c.g00 * v))).collect();
    let dbar_of = |arr: &Vec<[[f64; 2]; 2]>, a: usize, b: usize, c: usize, n: usize| {
        dbar_component(g, n, c, |m| arr[m][a][b])
    };
    let dbar_of3 = |a: usize, a2: usize, b2: usize, c: usize, n: usize| dbar_component(g, n, c, |m| f2[m][a][a2][b2]);

    struct Node {
        z: f64,
        m1: f64,
        m2: f64,
        m4: f64,
        flux: [f64; 2],
        econ: f64,
    }
    let nodes: Vec<Node> = (0..len)
        .into_par_iter()
        .map(|n| {
            let node = &g.nodes[n];
            let c = &con[n];
            let d = &dsc[n];
            let u = field.u[n];
            let [ds_u, b1, b2] = field.hyperboloidal_at(n);
            let db = [b1, b2];
            let z = c.g00 * s * ds_u + 2.0 * (c.g0a[0] * s * b1 + c.g0a[1] * s * b2) + c.gc * s * u
                - c.g00 * u;
            let m1 = d[0] * u / s - d[0] * ds_u - 2.0 / s * (c.g0a[0] * b1 + c.g0a[1] * b2)
                - 2.0 * (d[1] * b1 + d[2] * b2)
                - c.gc * u / s
                - d[3] * u;
            let quad = |m: &[[f64; 2]; 2]| {
                let mut q = 0.0;
                for a in 0..2 {
                    for b in 0..2 {
                        q += m[a][b] * db[a] * db[b];
                    }
                }
                q
            };
            let gq = quad(&c.gab);
            let m2 = -0.5 * s2 * c.g00 * gq;

            let mut m4 = 0.5 * quad(&[[d[4], d[5]], [d[6], d[7]]]);
            for a in 0..2 {
                for b in 0..2 {
                    m4 -= s2 * dbar_of(&f1, a, b, a + 1, n) * ds_u * db[b];
                    m4 -= dbar_of(&f3, a, b, a + 1, n) * u * db[b];
                    m4 += dbar_of(&f4, a, b, a + 1, n) * u * db[b];
                }
            }
            for a in 0..2 {
                for a2 in 0..2 {
                    for b2 in 0..2 {
                        m4 -= 2.0 * dbar_of3(a, a2, b2, a2 + 1, n) * db[a] * db[b2];
                        m4 += dbar_of3(a, a2, b2, a + 1, n) * db[a2] * db[b2];
                    }
                }
            }
            m4 += -s2 * c.gc * gq + s * c.g00 * gq;

            let mut flux = [0.0; 2];
            for a in 0..2 {
                let gb: f64 = (0..2).map(|b| c.gab[a][b] * db[b]).sum();
                flux[a] += s2 * c.g00 * ds_u * gb;
                flux[a] += (s2 * c.gc - s * c.g00) * u * gb;
                flux[a] -= s2 * c.g0a[a] * gq;
                // ∂̄_{a'}(2s²G0a g^{a'b'} ∂̄_au ∂̄_{b'}u), component a'
                for a1 in 0..2 {
                    flux[a] += 2.0 * s2 * c.g0a[a1] * db[a1] * gb;
                }
            }
            Node {
                z,
                m1,
                m2,
                m4,
                flux,
                econ: conformal_integrand(s, node.x, u, [ds_u, b1, b2]),
            }
        })
        .collect();
    let z: Vec<f64> = nodes.iter().map(|q| q.z).collect();
    let m1: Vec<f64> = nodes.iter().map(|q| q.m1).collect();
    let m2: Vec<f64> = nodes.iter().map(|q| q.m2).collect();
    let m4: Vec<f64> = nodes.iter().map(|q| q.m4).collect();
    let flux: [Vec<f64>; 2] = [0, 1].map(|a| nodes.iter().map(|q| q.flux[a]).collect());
    let e_tilde = 2.0 * g.integrate(|n| 0.5 * z[n] * z[n] + m2[n]);
    let source = 2.0 * g.integrate(|n| s * z[n] * inputs.h[n] - s * z[n] * m1[n] - m4[n]);
    let m3 = 2.0 * g.integrate(|n| g.dbar(&flux[0], n, 1) + g.dbar(&flux[1], n, 2));
    let e_con = g.integrate(|n| nodes[n].econ);
    QuasiConformal {
        s,
        e_tilde,
        source,
        m3,
        e_con,
        z,
        m1,
        m2,
        m4,
    }
}

/// Centred `∂̄_a` of `f(node)` at node `n`, neighbours outside the node set
/// reading as zero.
fn dbar_component<F: Fn(usize) -> f64>(g: &SliceGeometry, n: usize, a: usize, f: F) -> f64 {
    let node = &g.nodes[n];
    let get = |i: usize, j: usize| g.position(i, j).map_or(0.0, &f);
    let (plus, minus) = match a {
        1 => (get(node.i, node.j + 1), node.j.checked_sub(1).map_or(0.0, |j| get(node.i, j))),
        _ => (get(node.i + 1, node.j), node.i.checked_sub(1).map_or(0.0, |i| get(i, node.j))),
    };
    (plus - minus) / (2.0 * g.spec.h)
}

/// Both sides of the integrated identity on `[s₀, s]`, normalized as in
/// [`QuasiConformal`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdentityResidual {
    pub s0: f64,
    pub s: f64,
    pub lhs: f64,
    pub rhs: f64,
    /// `|lhs − rhs| / max(Ẽ_con(s), Ẽ_con(s₀))`
    pub relative: f64,
    /// Largest `|∫M₃|` over the slices, relative to the same scale.
    pub m3_relative: f64,
}

/// `Ẽ_con(s) = Ẽ_con(s₀) + ∫ source` with the `s`-integral by composite
/// trapezoid over the given slices (ascending, uniformly spaced).
pub fn identity_residual(series: &[QuasiConformal]) -> IdentityResidual {
    assert!(series.len() >= 2, "identity needs at least two slices");
    let first = &series[0];
    let last = &series[series.len() - 1];
    let mut integral = NeumaierSum::new();
    for w in series.windows(2) {
        integral.add(0.5 * (w[1].s - w[0].s) * (w[0].source + w[1].source));
    }
    let lhs = last.e_tilde;
    let rhs = first.e_tilde + integral.value();
    let scale = first.e_tilde.abs().max(last.e_tilde.abs());
    let rel = |v: f64| if scale > 0.0 { v / scale } else { 0.0 };
    IdentityResidual {
        s0: first.s,
        s: last.s,
        lhs,
        rhs,
        relative: rel((lhs - rhs).abs()),
        m3_relative: rel(series.iter().map(|q| q.m3.abs()).fold(0.0, f64::max)),
    }
}

/// Slice jobs for the identity on `n_intervals` uniform steps of `[s0, s1]`,
/// for each `u = Γ^I w` with `|I| ≤ 1` in `indices`.
#[derive(Debug, Clone)]
pub struct IdentityPlan {
    pub tensor: CubicTensor,
    pub indices: Vec<MultiIndex>,
    pub s_values: Vec<f64>,
    pub ds: f64,
}

impl IdentityPlan {
    pub fn new(tensor: CubicTensor, indices: Vec<MultiIndex>, s0: f64, s1: f64, n_intervals: usize, ds: f64) -> Result<Self> {
        for i in &indices {
            i.check_order(1)?;
        }
        let s_values = (0..=n_intervals)
            .map(|q| s0 + (s1 - s0) * q as f64 / n_intervals as f64)
            .collect();
        Ok(IdentityPlan {
            tensor,
            indices,
            s_values,
            ds,
        })
    }

    fn main_channels(&self) -> Vec<Channel> {
        let mut ch: Vec<Channel> = Channel::with_gradient(&MultiIndex::empty()).to_vec();
        for i in &self.indices {
            for c in Channel::with_gradient(i) {
                if !ch.contains(&c) {
                    ch.push(c);
                }
            }
            let src = Channel::Source(i.fields().first().copied());
            if !ch.contains(&src) {
                ch.push(src);
            }
        }
        ch
    }

    fn grad_channels() -> Vec<Channel> {
        Channel::with_gradient(&MultiIndex::empty())[1..].to_vec()
    }

    /// Offsets (in units of `ds`) of the companion slices at `s`.
    fn offsets(&self, s: f64) -> [f64; 2] {
        if s - self.ds < S0 - 1e-12 {
            [1.0, 2.0]
        } else {
            [-1.0, 1.0]
        }
    }

    /// Jobs in the order expected by [`IdentityPlan::evaluate`]: for every
    /// `s`, the main slice then its two companions.
    pub fn jobs(&self, spec: &GridSpec) -> Result<Vec<SliceJob>> {
        let mut jobs = Vec::new();
        for &s in &self.s_values {
            let geometry = Arc::new(SliceGeometry::new(spec, s)?);
            for o in self.offsets(s) {
                let comp = Arc::new(geometry.companion(s + o * self.ds));
                jobs.push(SliceJob::new(comp, Self::grad_channels()));
            }
            jobs.insert(jobs.len() - 2, SliceJob::new(geometry, self.main_channels()));
        }
        Ok(jobs)
    }

    /// Per-index series of conformal quantities from the filled slices.
    pub fn evaluate(&self, slices: &[HyperboloidSlice]) -> Vec<(MultiIndex, Vec<QuasiConformal>)> {
        let empty = MultiIndex::empty();
        self.indices
            .iter()
            .map(|index| {
                let series = self
                    .s_values
                    .iter()
                    .enumerate()
                    .map(|(q, &s)| {
                        let main = &slices[3 * q];
                        let lo = &slices[3 * q + 1];
                        let hi = &slices[3 * q + 2];
                        let w = main.field(&empty).expect("sampled");
                        let u = main.field(index).expect("sampled");
                        let h = main
                            .channel(&Channel::Source(index.fields().first().copied()))
                            .expect("sampled");
                        let comps = [
                            lo.field_gradient(&empty).expect("sampled"),
                            hi.field_gradient(&empty).expect("sampled"),
                        ];
                        let companions = if self.offsets(s)[0] < 0.0 {
                            Companions::Centred(comps)
                        } else {
                            Companions::Forward(comps)
                        };
                        quasilinear_conformal(
                            &self.tensor,
                            &ConformalInputs {
                                u,
                                h,
                                dw: w.grad,
                                ds: self.ds,
                                companions,
                            },
                        )
                    })
                    .collect();
                (index.clone(), series)
            })
            .collect()
    }
}

impl HyperboloidSlice {
    /// `∂Γ^I w` channels only.
    pub fn field_gradient(&self, index: &MultiIndex) -> Option<[&[f64]; 3]> {
        let [_, d0, d1, d2] = Channel::with_gradient(index);
        Some([self.channel(&d0)?, self.channel(&d1)?, self.channel(&d2)?])
    }
}

/// [`IdentityPlan`] over a history holding all required snapshots.
pub fn conformal_identity_residual(
    hist: &SolutionHistory,
    index: &MultiIndex,
    s0: f64,
    s: f64,
    n_intervals: usize,
) -> Result<IdentityResidual> {
    let plan = IdentityPlan::new(*hist.tensor(), vec![index.clone()], s0, s, n_intervals, DEFAULT_DS)?;
    let mut jobs = plan.jobs(hist.spec())?;
    fill_jobs(hist, &mut jobs)?;
    let slices: Vec<HyperboloidSlice> = jobs.into_iter().map(SliceJob::into_slice).collect();
    let (_, series) = plan.evaluate(&slices).remove(0);
    Ok(identity_residual(&series))
}
