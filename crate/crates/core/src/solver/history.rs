use std::collections::VecDeque;
use std::io::{BufRead, Write};
use std::sync::Arc;

use rayon::prelude::*;

use super::{initial_data, step_in_place, ClosedForm, FieldState, Forcing, GridSpec, InitialData};
use super::QuasiCoefficients;
use crate::error::{Error, Result};
use crate::nulltensor::CubicTensor;

/// One stored time level. `k` counts snapshots from `t0`, negative before it.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub k: i64,
    pub t: f64,
    pub data: Arc<Vec<f64>>,
}

/// Uniformly spaced snapshots, optionally held in a bounded ring.
#[derive(Debug, Clone)]
pub struct SolutionHistory {
    spec: GridSpec,
    tensor: CubicTensor,
    epsilon: f64,
    snapshots: VecDeque<Snapshot>,
    capacity: Option<usize>,
    compact: bool,
}

impl SolutionHistory {
    pub fn new(spec: GridSpec, tensor: CubicTensor, epsilon: f64, capacity: Option<usize>) -> Self {
        SolutionHistory {
            spec,
            tensor,
            epsilon,
            snapshots: VecDeque::new(),
            capacity,
            compact: false,
        }
    }

    /// Snapshots `k_lo..=k_hi` of a closed-form field, for exact tests.
    pub fn from_closed_form<F: ClosedForm + ?Sized>(
        spec: GridSpec,
        field: &F,
        k_lo: i64,
        k_hi: i64,
    ) -> Self {
        let mut hist = SolutionHistory::new(spec, CubicTensor::zero(), f64::NAN, None);
        let n = spec.n();
        for k in k_lo..=k_hi {
            let t = spec.snapshot_time(k);
            let mut data = vec![0.0; spec.len()];
            data.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
                for (j, v) in row.iter_mut().enumerate() {
                    *v = field.value(t, spec.node(i, j));
                }
            });
            hist.push(Snapshot {
                k,
                t,
                data: Arc::new(data),
            })
            .expect("consecutive snapshots");
        }
        hist
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn tensor(&self) -> &CubicTensor {
        &self.tensor
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// Whether every snapshot vanishes outside `spec().support_radius(t)`,
    /// as for solver output. Closed-form fills are not compactly supported.
    pub fn compact_support(&self) -> bool {
        self.compact
    }

    pub fn set_compact_support(&mut self, compact: bool) {
        self.compact = compact;
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    /// Append the next snapshot, evicting the oldest when the ring is full.
    pub fn push(&mut self, snap: Snapshot) -> Result<()> {
        if let Some(last) = self.snapshots.back() {
            if snap.k != last.k + 1 {
                return Err(Error::InvalidGrid(format!(
                    "snapshot {} does not follow {}",
                    snap.k, last.k
                )));
            }
        }
        if snap.data.len() != self.spec.len() {
            return Err(Error::InvalidGrid("snapshot size does not match grid".into()));
        }
        if let Some(cap) = self.capacity {
            while self.snapshots.len() >= cap.max(1) {
                self.snapshots.pop_front();
            }
        }
        self.snapshots.push_back(snap);
        Ok(())
    }

    /// Inclusive index range currently held.
    pub fn range(&self) -> Option<(i64, i64)> {
        Some((self.snapshots.front()?.k, self.snapshots.back()?.k))
    }

    pub fn get(&self, k: i64) -> Option<&Snapshot> {
        let first = self.snapshots.front()?.k;
        usize::try_from(k - first).ok().and_then(|i| self.snapshots.get(i))
    }

    pub fn iter(&self) -> impl Iterator<Item = &Snapshot> {
        self.snapshots.iter()
    }

    pub fn time(&self, k: i64) -> f64 {
        self.spec.snapshot_time(k)
    }

    /// Index of the snapshot at time `t`, whether or not it is still held.
    pub fn snapshot_index(&self, t: f64) -> Result<i64> {
        let d = self.spec.snapshot_dt();
        let k = ((t - self.spec.t0) / d).round();
        if !k.is_finite() || (self.spec.snapshot_time(k as i64) - t).abs() > 1e-9 * d {
            return Err(Error::NotASnapshotTime { t });
        }
        Ok(k as i64)
    }

    /// Ensure `lo..=hi` are held.
    pub fn require(&self, lo: i64, hi: i64, t: f64) -> Result<()> {
        let (held_lo, held_hi) = self.range().unwrap_or((0, -1));
        if lo < held_lo || hi > held_hi {
            return Err(Error::StencilOutOfRange {
                t,
                needed_lo: lo,
                needed_hi: hi,
                held_lo,
                held_hi,
            });
        }
        Ok(())
    }

    /// Values of snapshot `k`; panics when it is not held.
    pub fn values(&self, k: i64) -> &[f64] {
        &self.get(k).unwrap_or_else(|| panic!("snapshot {k} not held")).data
    }
}

/// Streaming consumer of snapshots. `observe(k)` is called once for every
/// snapshot index `0 ≤ k ≤ last_snapshot()` as soon as `k ± margin()` are
/// all held.
pub trait Observer {
    fn margin(&self) -> usize;
    fn observe(&mut self, history: &SolutionHistory, k: i64) -> Result<()>;
}

/// Everything needed to produce a [`SolutionHistory`].
#[derive(Clone)]
pub struct Simulation {
    pub spec: GridSpec,
    pub tensor: CubicTensor,
    pub data: InitialData,
    pub forcing: Option<Arc<dyn Forcing>>,
    /// Snapshots evolved before `t0` (backwards) and after `t_max`, so that
    /// centred stencils are available across the whole window.
    pub margin: usize,
    /// Ring size; `None` keeps every snapshot.
    pub capacity: Option<usize>,
}

impl Simulation {
    pub fn new(spec: GridSpec, tensor: CubicTensor, data: InitialData) -> Self {
        Simulation {
            spec,
            tensor,
            data,
            forcing: None,
            margin: 0,
            capacity: None,
        }
    }
}

fn wrap(t: f64) -> impl FnOnce(Error) -> Error {
    move |e| Error::RunFailed {
        t,
        source: Box::new(e),
    }
}

/// Evolve from the initial data through `t_max` (plus the margin), feeding
/// observers as snapshots become available. Deterministic: the evolution is a
/// single leapfrog trajectory independent of stride, ring size and thread
/// count.
pub fn run(sim: &Simulation, observers: &mut [&mut dyn Observer]) -> Result<SolutionHistory> {
    let spec = sim.spec;
    spec.validate()?;
    let margin = observers
        .iter()
        .map(|o| o.margin())
        .fold(sim.margin, usize::max) as i64;
    let capacity = sim.capacity.map(|c| c.max(2 * margin as usize + 2));
    let stride = spec.snapshot_stride as i64;
    let k_end = spec.last_snapshot();
    let forcing = sim.forcing.as_deref();
    let coeffs = QuasiCoefficients::new(&sim.tensor);
    let mut hist = SolutionHistory::new(spec, sim.tensor, sim.data.epsilon(), capacity);
    hist.compact = true;

    let start = initial_data(&sim.data, &spec, &sim.tensor, forcing).map_err(wrap(spec.t0))?;
    let snap = |k: i64, data: &Vec<f64>| Snapshot {
        k,
        t: spec.snapshot_time(k),
        data: Arc::new(data.clone()),
    };
    let mut scratch = Vec::new();

    if margin > 0 {
        let mut back = start.clone().reversed(&spec);
        let mut before = Vec::with_capacity(margin as usize);
        for n in 1..=margin * stride {
            step_in_place(&mut back, &coeffs, &spec, forcing, &mut scratch)
                .map_err(wrap(back.t_curr))?;
            if n % stride == 0 {
                before.push(snap(-n / stride, &back.w_curr));
            }
        }
        for s in before.into_iter().rev() {
            hist.push(s)?;
        }
    }

    let mut observed = vec![-1i64; observers.len()];
    let mut notify = |hist: &SolutionHistory, k_pushed: i64| -> Result<()> {
        for (o, seen) in observers.iter_mut().zip(observed.iter_mut()) {
            let centre = k_pushed - o.margin() as i64;
            while *seen < centre.min(k_end) {
                *seen += 1;
                o.observe(hist, *seen)?;
            }
        }
        Ok(())
    };

    hist.push(snap(0, &start.w_prev))?;
    notify(&hist, 0)?;
    let mut state: FieldState = start;
    let last_step = (k_end + margin) * stride;
    let mut n = 1;
    loop {
        if n % stride == 0 {
            let k = n / stride;
            hist.push(snap(k, &state.w_curr))?;
            notify(&hist, k)?;
        }
        if n >= last_step {
            break;
        }
        step_in_place(&mut state, &coeffs, &spec, forcing, &mut scratch)
            .map_err(wrap(state.t_curr))?;
        n += 1;
    }
    Ok(hist)
}

/// Text dump: a `t=<value> n=<rows>` header then `n` rows of `n` reals.
pub fn write_snapshot<W: Write>(out: &mut W, spec: &GridSpec, snap: &Snapshot) -> std::io::Result<()> {
    let n = spec.n();
    writeln!(out, "t={} n={}", snap.t, n)?;
    let mut line = String::new();
    for row in snap.data.chunks(n) {
        line.clear();
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                line.push(' ');
            }
            line.push_str(&v.to_string());
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

/// Read one dump written by [`write_snapshot`]; returns `(t, n, values)`.
pub fn read_snapshot<R: BufRead>(input: &mut R) -> Result<(f64, usize, Vec<f64>)> {
    let bad = |row: usize, m: &str| Error::Schema {
        row,
        message: m.to_string(),
    };
    let mut header = String::new();
    input
        .read_line(&mut header)
        .map_err(|e| Error::io("<snapshot>", e))?;
    let mut t = None;
    let mut n = None;
    for part in header.split_whitespace() {
        if let Some(v) = part.strip_prefix("t=") {
            t = v.parse::<f64>().ok();
        } else if let Some(v) = part.strip_prefix("n=") {
            n = v.parse::<usize>().ok();
        }
    }
    let (t, n) = match (t, n) {
        (Some(t), Some(n)) => (t, n),
        _ => return Err(bad(0, "expected header `t=<value> n=<rows>`")),
    };
    let mut values = Vec::with_capacity(n * n);
    let mut line = String::new();
    for row in 1..=n {
        line.clear();
        input
            .read_line(&mut line)
            .map_err(|e| Error::io("<snapshot>", e))?;
        let before = values.len();
        for tok in line.split_whitespace() {
            values.push(tok.parse::<f64>().map_err(|_| bad(row, "not a number"))?);
        }
        if values.len() - before != n {
            return Err(bad(row, "wrong number of columns"));
        }
    }
    Ok((t, n, values))
}
