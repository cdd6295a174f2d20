//! The admissible vector fields `∂_α`, `L_a = x_a∂_t + t∂_a`,
//! `Ω₁₂ = x₁∂₂ − x₂∂₁`, `L₀ = t∂_t + x^a∂_a` on gridded data, their
//! compositions `Γ^I`, and the commutator and Leibniz checks.
//!
//! Every field is one *stage*: centred differences in `t` (across adjacent
//! snapshots, spacing `Δ = stride·dt`) and in `x` (spacing `h`), combined with
//! the node's coordinates by [`FieldId::combine`]. Two evaluation paths share
//! that arithmetic exactly:
//!
//! * [`FieldBlock`] materializes whole time blocks, one array per level, for
//!   grid-wide diagnostics;
//! * [`PointStencil`] evaluates a composition recursively at a single node,
//!   for sampling along hyperboloids where only scattered nodes are needed.
//!
//! Neighbours outside the grid read as zero in both paths.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::nulltensor::CubicTensor;
use crate::solver::{GridSpec, SolutionHistory};
use crate::summation::max_rows;

/// Default maximal order of a [`MultiIndex`].
pub const DEFAULT_MAX_ORDER: usize = 2;

/// Relative size of the regularizer added to ratio denominators.
pub const RATIO_REGULARIZER: f64 = 1e-14;

/// One admissible vector field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FieldId {
    Dt,
    D1,
    D2,
    L1,
    L2,
    O12,
    L0,
}

impl FieldId {
    pub const ALL: [FieldId; 7] = [
        FieldId::Dt,
        FieldId::D1,
        FieldId::D2,
        FieldId::L1,
        FieldId::L2,
        FieldId::O12,
        FieldId::L0,
    ];

    pub const BOOSTS: [FieldId; 2] = [FieldId::L1, FieldId::L2];

    /// `∂_α` for `α ∈ {0, 1, 2}`.
    pub fn partial(alpha: usize) -> FieldId {
        [FieldId::Dt, FieldId::D1, FieldId::D2][alpha]
    }

    /// `L_a` for `a ∈ {1, 2}`.
    pub fn boost(a: usize) -> FieldId {
        [FieldId::L1, FieldId::L2][a - 1]
    }

    pub fn id(self) -> &'static str {
        match self {
            FieldId::Dt => "dt",
            FieldId::D1 => "d1",
            FieldId::D2 => "d2",
            FieldId::L1 => "L1",
            FieldId::L2 => "L2",
            FieldId::O12 => "O12",
            FieldId::L0 => "L0",
        }
    }

    /// Which of `(∂_t, ∂₁, ∂₂)` the field reads.
    pub fn needs(self) -> [bool; 3] {
        match self {
            FieldId::Dt => [true, false, false],
            FieldId::D1 => [false, true, false],
            FieldId::D2 => [false, false, true],
            FieldId::L1 => [true, true, false],
            FieldId::L2 => [true, false, true],
            FieldId::O12 => [false, true, true],
            FieldId::L0 => [true, true, true],
        }
    }

    /// Whether the stage needs neighbouring snapshots.
    pub fn uses_time(self) -> bool {
        self.needs()[0]
    }

    /// `c` in `□Γ = Γ□ + c□`: 2 for the scaling field, 0 otherwise.
    pub fn commutator_constant(self) -> f64 {
        if self == FieldId::L0 {
            2.0
        } else {
            0.0
        }
    }

    /// The field applied to a function with partials `d = (∂_t, ∂₁, ∂₂)` at
    /// `(t, x)`. Entries not in [`FieldId::needs`] are ignored.
    #[inline]
    pub fn combine(self, t: f64, x: [f64; 2], d: [f64; 3]) -> f64 {
        match self {
            FieldId::Dt => d[0],
            FieldId::D1 => d[1],
            FieldId::D2 => d[2],
            FieldId::L1 => x[0] * d[0] + t * d[1],
            FieldId::L2 => x[1] * d[0] + t * d[2],
            FieldId::O12 => x[0] * d[2] - x[1] * d[1],
            FieldId::L0 => t * d[0] + x[0] * d[1] + x[1] * d[2],
        }
    }
}

impl fmt::Display for FieldId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for FieldId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FieldId::ALL
            .into_iter()
            .find(|f| f.id() == s.trim())
            .ok_or_else(|| Error::UnknownField(s.trim().to_string()))
    }
}

/// A composition `Γ^I = Γ_{i₁} Γ_{i₂} ⋯`, written outermost first: `(d1, L1)`
/// is `∂₁(L₁ u)`, so the rightmost field is applied first.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct MultiIndex(pub Vec<FieldId>);

impl MultiIndex {
    pub fn empty() -> Self {
        MultiIndex(Vec::new())
    }

    pub fn new(fields: &[FieldId]) -> Self {
        MultiIndex(fields.to_vec())
    }

    pub fn order(&self) -> usize {
        self.0.len()
    }

    pub fn fields(&self) -> &[FieldId] {
        &self.0
    }

    /// Snapshots needed on each side of the evaluation time.
    pub fn time_margin(&self) -> usize {
        self.0.iter().filter(|f| f.uses_time()).count()
    }

    /// `Γ I`, i.e. `field` applied after this index.
    pub fn prepend(&self, field: FieldId) -> Self {
        let mut v = Vec::with_capacity(self.0.len() + 1);
        v.push(field);
        v.extend_from_slice(&self.0);
        MultiIndex(v)
    }

    /// All indices of order `≤ max_order` over `fields`, shortest first.
    pub fn all_up_to(max_order: usize, fields: &[FieldId]) -> Vec<MultiIndex> {
        let mut out = vec![MultiIndex::empty()];
        let mut layer = vec![MultiIndex::empty()];
        for _ in 0..max_order {
            let mut next = Vec::new();
            for idx in &layer {
                for &f in fields {
                    next.push(idx.prepend(f));
                }
            }
            out.extend(next.iter().cloned());
            layer = next;
        }
        out
    }

    pub fn check_order(&self, max_order: usize) -> Result<()> {
        if self.order() > max_order {
            return Err(Error::OrderTooHigh {
                order: self.order(),
                max: max_order,
            });
        }
        Ok(())
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return f.write_str("none");
        }
        let ids: Vec<&str> = self.0.iter().map(|g| g.id()).collect();
        f.write_str(&ids.join(","))
    }
}

impl FromStr for MultiIndex {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.is_empty() || s == "none" {
            return Ok(MultiIndex::empty());
        }
        s.split(',')
            .map(str::parse)
            .collect::<Result<Vec<_>>>()
            .map(MultiIndex)
    }
}

#[inline]
fn read(data: &[f64], n: usize, i: isize, j: isize) -> f64 {
    if i < 0 || j < 0 || i as usize >= n || j as usize >= n {
        0.0
    } else {
        data[i as usize * n + j as usize]
    }
}

/// Consecutive time levels of one gridded field.
#[derive(Debug, Clone)]
pub struct FieldBlock {
    spec: GridSpec,
    compact: bool,
    k_lo: i64,
    depth: usize,
    levels: Vec<Arc<Vec<f64>>>,
}

impl FieldBlock {
    /// Snapshots `k_lo..=k_hi` of the history, shared without copying.
    pub fn from_history(hist: &SolutionHistory, k_lo: i64, k_hi: i64) -> Result<Self> {
        hist.require(k_lo, k_hi, hist.time((k_lo + k_hi) / 2))?;
        Ok(FieldBlock {
            spec: *hist.spec(),
            compact: hist.compact_support(),
            k_lo,
            depth: 0,
            levels: (k_lo..=k_hi)
                .map(|k| hist.get(k).expect("required").data.clone())
                .collect(),
        })
    }

    /// A block built from computed levels. `depth` counts the stencil stages
    /// already applied to compactly supported data (it widens the region that
    /// may be nonzero).
    pub fn from_levels(
        spec: GridSpec,
        compact: bool,
        k_lo: i64,
        depth: usize,
        levels: Vec<Vec<f64>>,
    ) -> Self {
        FieldBlock {
            spec,
            compact,
            k_lo,
            depth,
            levels: levels.into_iter().map(Arc::new).collect(),
        }
    }

    /// [`FieldBlock::from_levels`] over shared levels.
    pub fn from_shared(
        spec: GridSpec,
        compact: bool,
        k_lo: i64,
        depth: usize,
        levels: Vec<Arc<Vec<f64>>>,
    ) -> Self {
        FieldBlock {
            spec,
            compact,
            k_lo,
            depth,
            levels,
        }
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    /// Level `k` without copying.
    pub fn shared_level(&self, k: i64) -> Arc<Vec<f64>> {
        self.levels[(k - self.k_lo) as usize].clone()
    }

    pub fn k_lo(&self) -> i64 {
        self.k_lo
    }

    pub fn k_hi(&self) -> i64 {
        self.k_lo + self.levels.len() as i64 - 1
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn level(&self, k: i64) -> &[f64] {
        let i = usize::try_from(k - self.k_lo)
            .ok()
            .filter(|&i| i < self.levels.len())
            .unwrap_or_else(|| panic!("level {k} outside block {}..={}", self.k_lo, self.k_hi()));
        &self.levels[i]
    }

    /// Radius beyond which level `k` is known to vanish, when the source data
    /// is compactly supported. Each stage spreads support by at most one
    /// snapshot interval in time and one cell in space.
    fn radius(&self, k: i64, depth: usize) -> Option<f64> {
        self.compact.then(|| {
            let spec = &self.spec;
            spec.support_radius(spec.snapshot_time(k))
                + depth as f64 * (spec.snapshot_dt() + spec.h)
                + spec.h
        })
    }

    /// Fill one level node by node, restricted to the possibly nonzero disk.
    fn fill<F>(&self, k: i64, depth: usize, node: F) -> Vec<f64>
    where
        F: Fn(usize, usize) -> f64 + Sync,
    {
        let spec = &self.spec;
        let n = spec.n();
        let mut out = vec![0.0; spec.len()];
        let radius = self.radius(k, depth);
        out.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
            let (lo, hi) = match radius {
                Some(r) => spec.disk_columns(i, r),
                None => (0, n),
            };
            for j in lo..hi {
                row[j] = node(i, j);
            }
        });
        out
    }

    /// Apply `field` on levels `lo..=hi` (which must leave room for the time
    /// stencil when the field uses it).
    pub fn apply_range(&self, field: FieldId, lo: i64, hi: i64) -> FieldBlock {
        let m = field.uses_time() as i64;
        assert!(
            lo - m >= self.k_lo && hi + m <= self.k_hi() && lo <= hi,
            "stage {field} on {lo}..={hi} needs levels outside {}..={}",
            self.k_lo,
            self.k_hi()
        );
        let spec = self.spec;
        let n = spec.n();
        let inv2d = 1.0 / (2.0 * spec.snapshot_dt());
        let inv2h = 1.0 / (2.0 * spec.h);
        let [nt, n1, n2] = field.needs();
        let levels = (lo..=hi)
            .map(|k| {
                let t = spec.snapshot_time(k);
                let curr = self.level(k);
                let (prev, next) = if nt {
                    (self.level(k - 1), self.level(k + 1))
                } else {
                    (curr, curr)
                };
                Arc::new(self.fill(k, self.depth + 1, |i, j| {
                    let (ii, jj) = (i as isize, j as isize);
                    let idx = i * n + j;
                    let mut d = [0.0; 3];
                    if nt {
                        d[0] = (next[idx] - prev[idx]) * inv2d;
                    }
                    if n1 {
                        d[1] = (read(curr, n, ii, jj + 1) - read(curr, n, ii, jj - 1)) * inv2h;
                    }
                    if n2 {
                        d[2] = (read(curr, n, ii + 1, jj) - read(curr, n, ii - 1, jj)) * inv2h;
                    }
                    field.combine(t, spec.node(i, j), d)
                }))
            })
            .collect();
        FieldBlock {
            spec,
            compact: self.compact,
            k_lo: lo,
            depth: self.depth + 1,
            levels,
        }
    }

    /// Apply `field` on every level where its stencil fits.
    pub fn apply(&self, field: FieldId) -> FieldBlock {
        let m = field.uses_time() as i64;
        self.apply_range(field, self.k_lo + m, self.k_hi() - m)
    }

    /// Apply a composition on levels `lo..=hi`.
    pub fn apply_multi_range(&self, index: &MultiIndex, lo: i64, hi: i64) -> FieldBlock {
        let mut block = self.clone();
        let mut remaining = index.time_margin() as i64;
        for &field in index.fields().iter().rev() {
            if field.uses_time() {
                remaining -= 1;
            }
            block = block.apply_range(field, lo - remaining, hi + remaining);
        }
        if index.order() == 0 {
            block = block.sub(lo, hi);
        }
        block
    }

    /// The levels `lo..=hi` of this block.
    pub fn sub(&self, lo: i64, hi: i64) -> FieldBlock {
        let a = (lo - self.k_lo) as usize;
        let b = (hi - self.k_lo) as usize;
        FieldBlock {
            levels: self.levels[a..=b].to_vec(),
            k_lo: lo,
            ..self.clone()
        }
    }

    /// Pointwise map `(t, x, value) → value` over every level. The map must
    /// send 0 to 0 for compactly supported blocks.
    pub fn map_nodes<F>(&self, f: F) -> FieldBlock
    where
        F: Fn(f64, [f64; 2], f64) -> f64 + Sync,
    {
        let spec = self.spec;
        let n = spec.n();
        let levels = (self.k_lo..=self.k_hi())
            .map(|k| {
                let t = spec.snapshot_time(k);
                let src = self.level(k);
                Arc::new(self.fill(k, self.depth, |i, j| f(t, spec.node(i, j), src[i * n + j])))
            })
            .collect();
        FieldBlock {
            levels,
            ..self.clone()
        }
    }

    /// `(∂_t, ∂₁, ∂₂)` of this field at level `k`.
    pub fn gradient(&self, k: i64) -> [Vec<f64>; 3] {
        [FieldId::Dt, FieldId::D1, FieldId::D2].map(|f| {
            let level = self.apply_range(f, k, k).shared_level(k);
            Arc::try_unwrap(level).unwrap_or_else(|shared| (*shared).clone())
        })
    }

    /// The nonzero part of row `i` of [`FieldBlock::gradient`] as
    /// `(j, [∂_t, ∂₁, ∂₂])` pairs, without materialising whole levels.
    pub fn row_gradient(&self, k: i64, i: usize, out: &mut Vec<(usize, [f64; 3])>) {
        out.clear();
        let spec = &self.spec;
        let n = spec.n();
        let (lo, hi) = match self.radius(k, self.depth + 1) {
            Some(r) => spec.disk_columns(i, r),
            None => (0, n),
        };
        let inv2d = 1.0 / (2.0 * spec.snapshot_dt());
        let inv2h = 1.0 / (2.0 * spec.h);
        let (prev, curr, next) = (self.level(k - 1), self.level(k), self.level(k + 1));
        let ii = i as isize;
        for j in lo..hi {
            let idx = i * n + j;
            let jj = j as isize;
            out.push((
                j,
                [
                    (next[idx] - prev[idx]) * inv2d,
                    (read(curr, n, ii, jj + 1) - read(curr, n, ii, jj - 1)) * inv2h,
                    (read(curr, n, ii + 1, jj) - read(curr, n, ii - 1, jj)) * inv2h,
                ],
            ));
        }
    }
}

/// `Γ^I w` on levels `lo..=hi` straight from the history.
pub fn apply_block(hist: &SolutionHistory, index: &MultiIndex, lo: i64, hi: i64) -> Result<FieldBlock> {
    let m = index.time_margin() as i64;
    hist.require(lo - m, hi + m, hist.time(lo))?;
    Ok(FieldBlock::from_history(hist, lo - m, hi + m)?.apply_multi_range(index, lo, hi))
}

/// `Γ^I w` at the snapshot time `t`.
pub fn apply_multi(
    hist: &SolutionHistory,
    index: &MultiIndex,
    t: f64,
    max_order: usize,
) -> Result<Vec<f64>> {
    index.check_order(max_order)?;
    let k = hist.snapshot_index(t)?;
    let m = index.time_margin() as i64;
    hist.require(k - m, k + m, t)?;
    Ok(apply_block(hist, index, k, k)?.level(k).to_vec())
}

/// `Γ w` at the snapshot time `t`.
pub fn apply_field(hist: &SolutionHistory, field: FieldId, t: f64) -> Result<Vec<f64>> {
    apply_multi(hist, &MultiIndex::new(&[field]), t, 1)
}

/// Recursive single-node evaluation of compositions, using the same stage
/// arithmetic as [`FieldBlock`].
#[derive(Debug, Clone, Copy)]
pub struct PointStencil {
    spec: GridSpec,
    n: isize,
    inv2d: f64,
    inv2h: f64,
}

impl PointStencil {
    pub fn new(spec: &GridSpec) -> Self {
        PointStencil {
            spec: *spec,
            n: spec.n() as isize,
            inv2d: 1.0 / (2.0 * spec.snapshot_dt()),
            inv2h: 1.0 / (2.0 * spec.h),
        }
    }

    /// `Γ^I f` at snapshot `k`, node `(i, j)`, where `leaf(k, index)` reads the
    /// base field at an in-grid node.
    pub fn eval<L>(&self, fields: &[FieldId], k: i64, i: isize, j: isize, leaf: &L) -> f64
    where
        L: Fn(i64, usize) -> f64 + ?Sized,
    {
        if i < 0 || j < 0 || i >= self.n || j >= self.n {
            return 0.0;
        }
        let Some((&field, rest)) = fields.split_first() else {
            return leaf(k, (i * self.n + j) as usize);
        };
        let [nt, n1, n2] = field.needs();
        let mut d = [0.0; 3];
        if nt {
            d[0] = (self.eval(rest, k + 1, i, j, leaf) - self.eval(rest, k - 1, i, j, leaf)) * self.inv2d;
        }
        if n1 {
            d[1] = (self.eval(rest, k, i, j + 1, leaf) - self.eval(rest, k, i, j - 1, leaf)) * self.inv2h;
        }
        if n2 {
            d[2] = (self.eval(rest, k, i + 1, j, leaf) - self.eval(rest, k, i - 1, j, leaf)) * self.inv2h;
        }
        let t = self.spec.snapshot_time(k);
        let x = [
            (j as f64 - self.spec.half_cells() as f64) * self.spec.h,
            (i as f64 - self.spec.half_cells() as f64) * self.spec.h,
        ];
        field.combine(t, x, d)
    }

    /// `Γ^I w` at a node, reading the history's snapshots.
    pub fn eval_history(&self, hist: &SolutionHistory, fields: &[FieldId], k: i64, i: usize, j: usize) -> f64 {
        self.eval(fields, k, i as isize, j as isize, &|k, idx| hist.values(k)[idx])
    }
}

/// `N(v, u) = P^{γαβ} ∂_γv ∂_α∂_βu` from the gradient of `v` and the Hessian of `u`.
#[inline]
pub fn null_form(p: &CubicTensor, dv: [f64; 3], ddu: &[[f64; 3]; 3]) -> f64 {
    let c = p.coeffs();
    let mut total = 0.0;
    for (g, dvg) in dv.iter().enumerate() {
        for a in 0..3 {
            for b in 0..3 {
                total += c[g][a][b] * dvg * ddu[a][b];
            }
        }
    }
    total
}

/// Gradient and Hessian of a field at one level, by composed centred
/// differences (`∂_α∂_β = (∂_α, ∂_β)`).
pub struct Derivatives {
    pub grad: [Vec<f64>; 3],
    pub hess: [[Arc<Vec<f64>>; 3]; 3],
}

impl Derivatives {
    /// Needs `block` to cover `k ± 2`.
    pub fn of(block: &FieldBlock, k: i64) -> Derivatives {
        let first: Vec<FieldBlock> = (0..3)
            .map(|b| block.apply_range(FieldId::partial(b), k - 1, k + 1))
            .collect();
        let grad = [0, 1, 2].map(|b| first[b].level(k).to_vec());
        let mut hess: [[Option<Arc<Vec<f64>>>; 3]; 3] = Default::default();
        for a in 0..3 {
            for b in a..3 {
                let level = Arc::new(first[b].apply_range(FieldId::partial(a), k, k).level(k).to_vec());
                hess[a][b] = Some(level.clone());
                hess[b][a] = Some(level);
            }
        }
        Derivatives {
            grad,
            hess: hess.map(|row| row.map(|e| e.expect("filled"))),
        }
    }

    #[inline]
    pub fn grad_at(&self, idx: usize) -> [f64; 3] {
        [self.grad[0][idx], self.grad[1][idx], self.grad[2][idx]]
    }

    #[inline]
    pub fn hess_at(&self, idx: usize) -> [[f64; 3]; 3] {
        let mut h = [[0.0; 3]; 3];
        for (a, row) in h.iter_mut().enumerate() {
            for (b, v) in row.iter_mut().enumerate() {
                *v = self.hess[a][b][idx];
            }
        }
        h
    }
}

/// `N(w, w)` on levels `lo..=hi` of `block` (which must cover `lo − 2..=hi + 2`).
pub fn null_form_block(block: &FieldBlock, p: &CubicTensor, lo: i64, hi: i64) -> FieldBlock {
    let spec = *block.spec();
    let levels = (lo..=hi)
        .map(|k| {
            let d = Derivatives::of(block, k);
            (0..spec.len())
                .into_par_iter()
                .map(|idx| null_form(p, d.grad_at(idx), &d.hess_at(idx)))
                .collect()
        })
        .collect();
    FieldBlock::from_levels(spec, block.compact, lo, block.depth() + 2, levels)
}

/// Nodes where the checks apply: inside the cone `t ≥ |x| + 1`.
pub(crate) fn in_cone(t: f64, x: [f64; 2]) -> bool {
    t >= (x[0] * x[0] + x[1] * x[1]).sqrt() + 1.0
}

/// Grid maximum of `lhs/(rhs + η)` over cone nodes.
pub(crate) fn max_ratio<F>(spec: &GridSpec, t: f64, eta: f64, f: F) -> f64
where
    F: Fn(usize) -> (f64, f64) + Sync + Send,
{
    let n = spec.n();
    max_rows(0..n, |i| {
        let mut m = 0.0_f64;
        for j in 0..n {
            if !in_cone(t, spec.node(i, j)) {
                continue;
            }
            let (lhs, rhs) = f(i * n + j);
            m = m.max(lhs / (rhs + eta));
        }
        m
    })
}

pub(crate) fn scale(values: &[f64]) -> f64 {
    values.par_iter().map(|v| v.abs()).reduce(|| 0.0, f64::max)
}

pub(crate) fn regularizer(scale: f64) -> f64 {
    RATIO_REGULARIZER * scale.max(f64::MIN_POSITIVE)
}

/// One empirical constant of a pointwise inequality `|LHS| ≲ RHS`.
#[derive(Debug, Clone, PartialEq)]
pub struct RatioEntry {
    pub inequality: &'static str,
    pub indices: String,
    pub ratio: f64,
}

/// Ratios for the six commutator inequalities at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct CommutatorReport {
    pub t: f64,
    pub entries: Vec<RatioEntry>,
}

impl CommutatorReport {
    /// Labels of the six inequalities, in order.
    pub const INEQUALITIES: [&'static str; 6] = ["dL", "LL", "L0L", "d_st", "L_st", "LL_st"];

    /// Largest ratio per inequality.
    pub fn maxima(&self) -> Vec<(&'static str, f64)> {
        Self::INEQUALITIES
            .iter()
            .map(|&name| {
                let m = self
                    .entries
                    .iter()
                    .filter(|e| e.inequality == name)
                    .map(|e| e.ratio)
                    .fold(0.0, f64::max);
                (name, m)
            })
            .collect()
    }

    pub fn get(&self, inequality: &str, indices: &str) -> Option<f64> {
        self.entries
            .iter()
            .find(|e| e.inequality == inequality && e.indices == indices)
            .map(|e| e.ratio)
    }
}

/// Empirical constants of
///
/// * `|∂_α L_a u| ≲ |L_a ∂_α u| + Σ_β |∂_β u|` (`dL`),
/// * `|L_a L_b u| ≲ |L_b L_a u| + Σ_c |L_c u|` (`LL`),
/// * `|L₀ L_a u| ≲ |L_a L₀ u|` (`L0L`),
/// * `|∂_α(u s/t)| ≲ |(s/t)∂_α u| + s⁻¹|u|` (`d_st`),
/// * `|L_α(u s/t)| ≲ |(s/t)L_α u| + |(s/t)u|` for `L_α ∈ {L₀, L₁, L₂}` (`L_st`),
/// * `|L_bL_a(u s/t)| ≲ |(s/t)L_bL_a u| + |(s/t)u| + Σ_c |(s/t)L_c u|` (`LL_st`),
///
/// for `u = w`, as grid maxima over the cone at the snapshot time `t`.
pub fn commutator_check(hist: &SolutionHistory, t: f64) -> Result<CommutatorReport> {
    let spec = *hist.spec();
    let k = hist.snapshot_index(t)?;
    hist.require(k - 2, k + 2, t)?;
    let raw = FieldBlock::from_history(hist, k - 2, k + 2)?;
    let eta = regularizer(scale(raw.level(k)));
    let at = |b: &FieldBlock| b.level(k).to_vec();
    let apply = |idx: &[FieldId]| at(&raw.apply_multi_range(&MultiIndex::new(idx), k, k));
    let mut entries = Vec::new();

    let partials: Vec<Vec<f64>> = (0..3).map(|b| apply(&[FieldId::partial(b)])).collect();
    let boosts: Vec<Vec<f64>> = (1..=2).map(|a| apply(&[FieldId::boost(a)])).collect();
    let sum_partials = |idx: usize| partials.iter().map(|p| p[idx].abs()).sum::<f64>();
    let sum_boosts = |idx: usize| boosts.iter().map(|p| p[idx].abs()).sum::<f64>();

    for alpha in 0..3 {
        for a in 1..=2 {
            let (d, l) = (FieldId::partial(alpha), FieldId::boost(a));
            let lhs = apply(&[d, l]);
            let rhs = apply(&[l, d]);
            let ratio = max_ratio(&spec, t, eta, |i| (lhs[i].abs(), rhs[i].abs() + sum_partials(i)));
            entries.push(RatioEntry {
                inequality: "dL",
                indices: format!("{d},{l}"),
                ratio,
            });
        }
    }
    for a in 1..=2 {
        for b in 1..=2 {
            let (la, lb) = (FieldId::boost(a), FieldId::boost(b));
            let lhs = apply(&[la, lb]);
            let rhs = apply(&[lb, la]);
            let ratio = max_ratio(&spec, t, eta, |i| (lhs[i].abs(), rhs[i].abs() + sum_boosts(i)));
            entries.push(RatioEntry {
                inequality: "LL",
                indices: format!("{la},{lb}"),
                ratio,
            });
        }
    }
    for a in 1..=2 {
        let la = FieldId::boost(a);
        let lhs = apply(&[FieldId::L0, la]);
        let rhs = apply(&[la, FieldId::L0]);
        let ratio = max_ratio(&spec, t, eta, |i| (lhs[i].abs(), rhs[i].abs()));
        entries.push(RatioEntry {
            inequality: "L0L",
            indices: format!("L0,{la}"),
            ratio,
        });
    }

    // weighted variants, with v = u·s/t inside the light cone
    let weight = |t: f64, x: [f64; 2]| {
        let s2 = t * t - x[0] * x[0] - x[1] * x[1];
        if s2 > 0.0 {
            s2.sqrt() / t
        } else {
            0.0
        }
    };
    let weighted = raw.map_nodes(|t, x, v| v * weight(t, x));
    let vapply = |idx: &[FieldId]| at(&weighted.apply_multi_range(&MultiIndex::new(idx), k, k));
    let n = spec.n();
    let node = |idx: usize| spec.node(idx / n, idx % n);
    let u = raw.level(k);
    let st = |idx: usize| weight(t, node(idx));

    for alpha in 0..3 {
        let d = FieldId::partial(alpha);
        let lhs = vapply(&[d]);
        let ratio = max_ratio(&spec, t, eta, |i| {
            let s = st(i) * t;
            (lhs[i].abs(), (st(i) * partials[alpha][i]).abs() + u[i].abs() / s)
        });
        entries.push(RatioEntry {
            inequality: "d_st",
            indices: d.to_string(),
            ratio,
        });
    }
    for l in [FieldId::L0, FieldId::L1, FieldId::L2] {
        let lhs = vapply(&[l]);
        let lu = apply(&[l]);
        let ratio = max_ratio(&spec, t, eta, |i| {
            (lhs[i].abs(), (st(i) * lu[i]).abs() + (st(i) * u[i]).abs())
        });
        entries.push(RatioEntry {
            inequality: "L_st",
            indices: l.to_string(),
            ratio,
        });
    }
    for b in 1..=2 {
        for a in 1..=2 {
            let (lb, la) = (FieldId::boost(b), FieldId::boost(a));
            let lhs = vapply(&[lb, la]);
            let llu = apply(&[lb, la]);
            let ratio = max_ratio(&spec, t, eta, |i| {
                let w = st(i);
                (
                    lhs[i].abs(),
                    (w * llu[i]).abs() + (w * u[i]).abs() + w * sum_boosts(i),
                )
            });
            entries.push(RatioEntry {
                inequality: "LL_st",
                indices: format!("{lb},{la}"),
                ratio,
            });
        }
    }
    Ok(CommutatorReport { t, entries })
}

/// `(s/t)²|∂_tv ∂_t∂_tu| + Σ_a|∂̲_av ∂∂u| + Σ_a|∂v ∂̲_a∂u| + t⁻¹|∂v ∂u|`, with
/// `∂̲_a = (x_a/t)∂_t + ∂_a`, `|∂v| = Σ_α|∂_αv|` and `|∂∂u| = Σ_{αβ}|∂_α∂_βu|`.
pub fn null_form_majorant(t: f64, x: [f64; 2], dv: [f64; 3], du: [f64; 3], ddu: &[[f64; 3]; 3]) -> f64 {
    let st2 = 1.0 - (x[0] * x[0] + x[1] * x[1]) / (t * t);
    let abs_dv: f64 = dv.iter().map(|v| v.abs()).sum();
    let abs_du: f64 = du.iter().map(|v| v.abs()).sum();
    let abs_ddu: f64 = ddu.iter().flatten().map(|v| v.abs()).sum();
    let mut total = st2 * (dv[0] * ddu[0][0]).abs() + abs_dv * abs_du / t;
    for a in 1..=2 {
        let xa = x[a - 1] / t;
        let good_v = xa * dv[0] + dv[a];
        let good_ddu: f64 = (0..3).map(|b| (xa * ddu[0][b] + ddu[a][b]).abs()).sum();
        total += (good_v * abs_ddu).abs() + abs_dv * good_ddu;
    }
    total
}

/// The residual of the product rule for a first-order `Γ` at one time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeibnizReport {
    pub field: FieldId,
    pub t: f64,
    /// max |Γ[N(w,w)] − N(Γw,w) − N(w,Γw)| over the cone.
    pub max_residual: f64,
    /// max |Γ[N(w,w)]|, the size of the individual terms.
    pub term_scale: f64,
    /// max |residual| / (null-form majorant of `(w, w)` + η).
    pub majorant_ratio: f64,
}

impl LeibnizReport {
    pub fn relative_residual(&self) -> f64 {
        if self.term_scale > 0.0 {
            self.max_residual / self.term_scale
        } else {
            0.0
        }
    }
}

/// `D = Γ[N(w,w)] − N(Γw, w) − N(w, Γw)` with `N` built from the history's
/// tensor. For `Γ = ∂_α` the continuum residual vanishes; for the other fields
/// `D` is again a null form of `(w, w)` and is compared with its majorant.
pub fn leibniz_null_check(hist: &SolutionHistory, field: FieldId, t: f64) -> Result<LeibnizReport> {
    let spec = *hist.spec();
    let p = *hist.tensor();
    let k = hist.snapshot_index(t)?;
    hist.require(k - 3, k + 3, t)?;
    let raw = FieldBlock::from_history(hist, k - 3, k + 3)?;
    let m = field.uses_time() as i64;

    let lhs = null_form_block(&raw, &p, k - m, k + m).apply_range(field, k, k);
    let lhs = lhs.level(k);
    let gw = raw.apply_range(field, k - 2, k + 2);
    let dw = Derivatives::of(&raw, k);
    let dgw = Derivatives::of(&gw, k);

    let n = spec.n();
    let residual: Vec<f64> = (0..spec.len())
        .into_par_iter()
        .map(|idx| {
            let a = null_form(&p, dgw.grad_at(idx), &dw.hess_at(idx));
            let b = null_form(&p, dw.grad_at(idx), &dgw.hess_at(idx));
            lhs[idx] - a - b
        })
        .collect();
    let cone_max = |f: &(dyn Fn(usize) -> f64 + Sync)| {
        max_rows(0..n, |i| {
            let mut m = 0.0_f64;
            for j in 0..n {
                if in_cone(t, spec.node(i, j)) {
                    m = m.max(f(i * n + j));
                }
            }
            m
        })
    };
    let max_residual = cone_max(&|i| residual[i].abs());
    let term_scale = cone_max(&|i| lhs[i].abs());
    let eta = regularizer(term_scale);
    let majorant_ratio = max_ratio(&spec, t, eta, |idx| {
        let x = spec.node(idx / n, idx % n);
        let g = dw.grad_at(idx);
        let maj = null_form_majorant(t, x, g, g, &dw.hess_at(idx));
        (residual[idx].abs(), maj.max(0.0) * p.max_abs().max(f64::MIN_POSITIVE))
    });
    Ok(LeibnizReport {
        field,
        t,
        max_residual,
        term_scale,
        majorant_ratio,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nulltensor::{make_cm_tensor, SpacetimeVector};
    use crate::solver::{run, InitialData, Polynomial, Simulation};
    use proptest::prelude::*;

    fn small_spec() -> GridSpec {
        GridSpec {
            half_width: 2.0,
            h: 0.1,
            dt: 0.05,
            t0: 2.0,
            t_max: 4.0,
            snapshot_stride: 2,
        }
    }

    fn fill(terms: &[(f64, [u32; 3])]) -> SolutionHistory {
        SolutionHistory::from_closed_form(small_spec(), &Polynomial::new(terms), -3, 12)
    }

    /// Compare on nodes away from the grid edge, where neighbours exist. Each
    /// difference quotient amplifies rounding of the differenced values by
    /// `1/h`, hence the tolerance in ulps of `size / h`.
    fn assert_interior(spec: &GridSpec, got: &[f64], expect: impl Fn(f64, [f64; 2]) -> f64, t: f64, ulps: f64) {
        let n = spec.n();
        for i in 4..n - 4 {
            for j in 4..n - 4 {
                let x = spec.node(i, j);
                let e = expect(t, x);
                let g = got[i * n + j];
                let tol = ulps * f64::EPSILON * (1.0 + e.abs() + t * t + x[0].abs() + x[1].abs()) / spec.h;
                assert!((g - e).abs() <= tol, "at {x:?}: {g} vs {e}");
            }
        }
    }

    #[test]
    fn parses_identifiers() {
        for f in FieldId::ALL {
            assert_eq!(f.id().parse::<FieldId>().unwrap(), f);
        }
        assert!("L3".parse::<FieldId>().is_err());
        let i: MultiIndex = "d1,L1".parse().unwrap();
        assert_eq!(i.fields(), &[FieldId::D1, FieldId::L1]);
        assert_eq!(i.to_string(), "d1,L1");
        assert_eq!("".parse::<MultiIndex>().unwrap(), MultiIndex::empty());
        assert_eq!(MultiIndex::all_up_to(2, &FieldId::ALL).len(), 57);
    }

    #[test]
    fn fields_on_linear_fills() {
        let h = fill(&[(1.0, [1, 0, 0])]);
        let spec = *h.spec();
        let t = spec.snapshot_time(4);
        let l0 = apply_field(&h, FieldId::L0, t).unwrap();
        assert_interior(&spec, &l0, |t, _| t, t, 10.0);
        let l1 = apply_field(&h, FieldId::L1, t).unwrap();
        assert_interior(&spec, &l1, |_, x| x[0], t, 10.0);
        let o = apply_field(&h, FieldId::O12, t).unwrap();
        assert_interior(&spec, &o, |_, _| 0.0, t, 10.0);

        let h = fill(&[(1.0, [0, 1, 0])]);
        let l1 = apply_field(&h, FieldId::L1, t).unwrap();
        assert_interior(&spec, &l1, |t, _| t, t, 10.0);
        let l0 = apply_field(&h, FieldId::L0, t).unwrap();
        assert_interior(&spec, &l0, |_, x| x[0], t, 10.0);
        let d2 = apply_field(&h, FieldId::D2, t).unwrap();
        assert_interior(&spec, &d2, |_, _| 0.0, t, 10.0);
    }

    #[test]
    fn compositions_on_t_x1() {
        let h = fill(&[(1.0, [1, 1, 0])]);
        let spec = *h.spec();
        let t = spec.snapshot_time(5);
        let empty = apply_multi(&h, &MultiIndex::empty(), t, 2).unwrap();
        assert_eq!(empty, h.values(5));
        let l1 = apply_multi(&h, &"L1".parse().unwrap(), t, 2).unwrap();
        assert_interior(&spec, &l1, |t, x| x[0] * x[0] + t * t, t, 10.0);
        let dl = apply_multi(&h, &"d1,L1".parse().unwrap(), t, 2).unwrap();
        assert_interior(&spec, &dl, |_, x| 2.0 * x[0], t, 10.0);
    }

    #[test]
    fn cubic_fill_matches_closed_form() {
        // centred differences of a cubic leave a known O(Δ²) term: for
        // f = t³, ∂_t f = 3t² + Δ²
        let h = fill(&[(1.0, [3, 0, 0]), (0.5, [0, 2, 1])]);
        let spec = *h.spec();
        let t = spec.snapshot_time(4);
        let d = spec.snapshot_dt();
        let dt = apply_field(&h, FieldId::Dt, t).unwrap();
        assert_interior(&spec, &dt, |t, _| 3.0 * t * t + d * d, t, 40.0);
        let d2 = apply_field(&h, FieldId::D2, t).unwrap();
        assert_interior(&spec, &d2, |_, x| 0.5 * x[0] * x[0], t, 40.0);
    }

    #[test]
    fn order_and_range_errors() {
        let h = fill(&[(1.0, [1, 0, 0])]);
        let t = h.spec().snapshot_time(4);
        let i: MultiIndex = "L1,L1,L1".parse().unwrap();
        assert!(matches!(apply_multi(&h, &i, t, 2), Err(Error::OrderTooHigh { order: 3, max: 2 })));
        let edge = h.spec().snapshot_time(12);
        assert!(matches!(
            apply_field(&h, FieldId::Dt, edge),
            Err(Error::StencilOutOfRange { .. })
        ));
        assert!(apply_field(&h, FieldId::D1, edge).is_ok());
        assert!(matches!(
            apply_field(&h, FieldId::Dt, t + 0.01),
            Err(Error::NotASnapshotTime { .. })
        ));
    }

    #[test]
    fn rotation_from_boosts() {
        let h = fill(&[(1.0, [1, 1, 1]), (-0.3, [0, 2, 1]), (0.2, [2, 0, 1])]);
        let spec = *h.spec();
        let t = spec.snapshot_time(6);
        let o = apply_field(&h, FieldId::O12, t).unwrap();
        let l1 = apply_field(&h, FieldId::L1, t).unwrap();
        let l2 = apply_field(&h, FieldId::L2, t).unwrap();
        let n = spec.n();
        for i in 1..n - 1 {
            for j in 1..n - 1 {
                let [x1, x2] = spec.node(i, j);
                let idx = i * n + j;
                let via = (x1 * l2[idx] - x2 * l1[idx]) / t;
                let size = (x1 * l2[idx]).abs() + (x2 * l1[idx]).abs();
                assert!((via - o[idx]).abs() <= 4.0 * f64::EPSILON * size / t + 1e-300);
            }
        }
    }

    #[test]
    fn partials_commute() {
        let h = fill(&[(1.0, [1, 2, 2]), (0.7, [0, 3, 1])]);
        let t = h.spec().snapshot_time(4);
        let a = apply_multi(&h, &"d1,d2".parse().unwrap(), t, 2).unwrap();
        let b = apply_multi(&h, &"d2,d1".parse().unwrap(), t, 2).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-12 * (1.0 + x.abs()));
        }
    }

    #[test]
    fn pointwise_path_matches_blocks() {
        let h = fill(&[(1.0, [2, 1, 1]), (-0.4, [1, 0, 3])]);
        let spec = *h.spec();
        let k = 5;
        let st = PointStencil::new(&spec);
        for idx in ["L1,L0", "O12,dt", "d2,L2", "L0"] {
            let i: MultiIndex = idx.parse().unwrap();
            let grid = apply_multi(&h, &i, spec.snapshot_time(k), 2).unwrap();
            for (a, b) in [(0, 0), (3, 7), (20, 20), (40, 39)] {
                let v = st.eval_history(&h, i.fields(), k, a, b);
                assert_eq!(v.to_bits(), grid[a * spec.n() + b].to_bits(), "{idx} at ({a},{b})");
            }
        }
    }

    fn null_run() -> SolutionHistory {
        let spec = GridSpec::fitted(0.1, 0.04, 2.0, 5.0, 2);
        let p = make_cm_tensor(SpacetimeVector::new(1.0, 0.0, 0.0));
        let mut sim = Simulation::new(spec, p, InitialData::bump(0.05));
        sim.margin = 4;
        run(&sim, &mut []).unwrap()
    }

    #[test]
    fn time_derivative_matches_raw_snapshots() {
        let h = null_run();
        let spec = *h.spec();
        let k = 10;
        let dt = apply_field(&h, FieldId::Dt, spec.snapshot_time(k)).unwrap();
        let d = spec.snapshot_dt();
        let (a, b) = (h.values(k + 1), h.values(k - 1));
        for i in 0..spec.len() {
            assert_eq!(dt[i], (a[i] - b[i]) * (1.0 / (2.0 * d)));
        }
        // the support bound used to skip the exterior loses nothing
        let mut full = h.clone();
        full.set_compact_support(false);
        let i: MultiIndex = "L1,L0".parse().unwrap();
        let t = spec.snapshot_time(k);
        assert_eq!(apply_multi(&h, &i, t, 2).unwrap(), apply_multi(&full, &i, t, 2).unwrap());
    }

    #[test]
    fn commutator_equality_case() {
        let h = fill(&[(1.0, [1, 1, 0])]);
        let spec = *h.spec();
        let t = spec.snapshot_time(6);
        let r = commutator_check(&h, t).unwrap();
        // ∂₁L₁(t x₁) = 2x₁ against |L₁∂₁u| + Σ_β|∂_βu| = |x₁| + |x₁| + |t|,
        // largest at the cone edge |x₁| = t − 1
        let xmax = ((t - 1.0) / spec.h + 1e-9).floor() * spec.h;
        let expect = 2.0 * xmax / (2.0 * xmax + t);
        let got = r.get("dL", "d1,L1").unwrap();
        assert!((got - expect).abs() < 1e-9, "{got} vs {expect}");
        // L₀ and L_a commute exactly on this fill
        assert!((r.get("L0L", "L0,L1").unwrap() - 1.0).abs() < 1e-9);
        assert_eq!(r.maxima().len(), 6);

        let c = fill(&[(3.0, [0, 0, 0])]);
        let r = commutator_check(&c, t).unwrap();
        for (name, m) in r.maxima() {
            if name.ends_with("_st") {
                // s/t itself is not constant
                assert!(m.is_finite());
            } else {
                assert_eq!(m, 0.0, "{name}");
            }
        }
    }

    #[test]
    fn leibniz_on_runs() {
        let h = null_run();
        let t = h.spec().snapshot_time(20);
        let zero = SolutionHistory::from_closed_form(*h.spec(), &crate::solver::ZeroField, 15, 25);
        let r = leibniz_null_check(&zero, FieldId::L1, t).unwrap();
        assert_eq!(r.max_residual, 0.0);
        assert_eq!(r.majorant_ratio, 0.0);

        for f in FieldId::ALL {
            let r = leibniz_null_check(&h, f, t).unwrap();
            assert!(r.majorant_ratio.is_finite() && r.relative_residual() < 1.0, "{r:?}");
        }
    }

    #[test]
    fn leibniz_exact_on_quadratics() {
        // every difference quotient is exact on quadratics, so the ∂_α residual
        // is rounding only
        let h = fill(&[(0.3, [2, 0, 0]), (-0.2, [1, 1, 0]), (0.5, [0, 1, 1]), (0.1, [0, 0, 1])]);
        let coeffs: Vec<f64> = (0..27).map(|i| ((i * 7) % 5) as f64 - 2.0).collect();
        let p = CubicTensor::from_row_major(&coeffs).unwrap();
        let t = h.spec().snapshot_time(5);
        let mut with_p = SolutionHistory::new(*h.spec(), p, 1.0, None);
        for snap in h.iter() {
            with_p.push(snap.clone()).unwrap();
        }
        for f in [FieldId::Dt, FieldId::D1, FieldId::D2] {
            let r = leibniz_null_check(&with_p, f, t).unwrap();
            assert!(r.relative_residual() < 1e-10, "{r:?}");
        }
    }

    proptest! {
        #[test]
        fn quadratic_fills_are_exact(c in prop::collection::vec(-2.0f64..2.0, 6), k in 2i64..8) {
            let terms = [
                (c[0], [0, 0, 0]), (c[1], [1, 0, 0]), (c[2], [0, 1, 1]),
                (c[3], [2, 0, 0]), (c[4], [1, 1, 0]), (c[5], [0, 0, 2]),
            ];
            let poly = Polynomial::new(&terms);
            let h = SolutionHistory::from_closed_form(small_spec(), &poly, -3, 12);
            let spec = *h.spec();
            let t = spec.snapshot_time(k);
            for field in FieldId::ALL {
                let got = apply_field(&h, field, t).unwrap();
                let n = spec.n();
                for i in 2..n - 2 {
                    for j in 2..n - 2 {
                        let x = spec.node(i, j);
                        let g = crate::solver::ClosedForm::gradient(&poly, t, x);
                        let e = field.combine(t, x, g);
                        let size = 1.0 + t * t + x[0] * x[0] + x[1] * x[1];
                        prop_assert!((got[i * n + j] - e).abs() <= 1e3 * f64::EPSILON * size * 8.0);
                    }
                }
            }
        }
    }
}
