use crate::error::{Error, Result};

/// Largest admissible `dt / h`.
pub const MAX_CFL: f64 = 0.5;

/// Width of the zero boundary ring, in cells.
pub const RING: usize = 2;

/// Square node-centred grid `x ∈ [−L, L]²` plus the time stepping parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub half_width: f64,
    pub h: f64,
    pub dt: f64,
    pub t0: f64,
    pub t_max: f64,
    pub snapshot_stride: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            half_width: 44.0,
            h: 0.05,
            dt: 0.02,
            t0: 2.0,
            t_max: 40.0,
            snapshot_stride: 4,
        }
    }
}

impl GridSpec {
    /// A half width just large enough for the evolution window, rounded up to
    /// whole cells.
    pub fn fitted(h: f64, dt: f64, t0: f64, t_max: f64, snapshot_stride: usize) -> Self {
        // room for the stencil tail evolved past t_max
        let need = 1.0 + (t_max - t0) + 4.0 * h + 6.0 * snapshot_stride as f64 * dt;
        let cells = (need / h - 1e-9).ceil();
        GridSpec {
            half_width: cells * h,
            h,
            dt,
            t0,
            t_max,
            snapshot_stride,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidGrid(m));
        let finite = [self.half_width, self.h, self.dt, self.t0, self.t_max]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return bad("non-finite parameter".into());
        }
        if !(self.h > 0.0) || !(self.dt > 0.0) {
            return bad(format!("h = {} and dt = {} must be positive", self.h, self.dt));
        }
        if self.dt > MAX_CFL * self.h * (1.0 + 1e-12) {
            return bad(format!(
                "dt = {} exceeds {MAX_CFL}·h = {}",
                self.dt,
                MAX_CFL * self.h
            ));
        }
        let cells = self.half_width / self.h;
        if (cells - cells.round()).abs() > 1e-9 * cells.max(1.0) || cells.round() < 4.0 {
            return bad(format!("L / h = {cells} must be an integer ≥ 4"));
        }
        if self.t_max < self.t0 {
            return bad(format!("t_max = {} precedes t0 = {}", self.t_max, self.t0));
        }
        if self.snapshot_stride == 0 {
            return bad("snapshot stride must be at least 1".into());
        }
        let need = 1.0 + (self.t_max - self.t0) + 2.0 * self.h;
        if self.half_width < need - 1e-9 * need {
            return bad(format!(
                "L = {} too small: the light cone reaches {need}",
                self.half_width
            ));
        }
        Ok(())
    }

    /// Cells from the centre to the edge.
    pub fn half_cells(&self) -> usize {
        (self.half_width / self.h).round() as usize
    }

    /// Nodes per side.
    pub fn n(&self) -> usize {
        2 * self.half_cells() + 1
    }

    pub fn len(&self) -> usize {
        self.n() * self.n()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn coord(&self, index: usize) -> f64 {
        (index as f64 - self.half_cells() as f64) * self.h
    }

    /// `(x₁, x₂)` of node `(i, j)`; rows run along `x₂`, columns along `x₁`.
    #[inline]
    pub fn node(&self, i: usize, j: usize) -> [f64; 2] {
        [self.coord(j), self.coord(i)]
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        i * self.n() + j
    }

    /// Time between snapshots.
    pub fn snapshot_dt(&self) -> f64 {
        self.snapshot_stride as f64 * self.dt
    }

    /// Time of step `k` (steps, not snapshots).
    #[inline]
    pub fn step_time(&self, k: i64) -> f64 {
        self.t0 + k as f64 * self.dt
    }

    /// Time of snapshot `k`.
    #[inline]
    pub fn snapshot_time(&self, k: i64) -> f64 {
        self.t0 + (k * self.snapshot_stride as i64) as f64 * self.dt
    }

    /// Last snapshot index with time ≤ `t_max`.
    pub fn last_snapshot(&self) -> i64 {
        ((self.t_max - self.t0) / self.snapshot_dt() + 1e-9).floor() as i64
    }

    /// Radius outside which the discrete solution is identically zero.
    pub fn support_radius(&self, t: f64) -> f64 {
        1.0 + (t - self.t0).abs() + 2.0 * self.h
    }

    /// Column range `[lo, hi)` of row `i` intersected with the disk of
    /// radius `radius`, clipped to the interior away from the ring.
    pub fn disk_columns(&self, i: usize, radius: f64) -> (usize, usize) {
        let n = self.n();
        let interior = (RING, n - RING);
        if i < interior.0 || i >= interior.1 {
            return (0, 0);
        }
        let x2 = self.coord(i);
        let chord2 = radius * radius - x2 * x2;
        if chord2 < 0.0 {
            return (0, 0);
        }
        let c = self.half_cells() as f64;
        let half = chord2.sqrt() / self.h;
        let lo = ((c - half).ceil().max(interior.0 as f64)) as usize;
        let hi = (((c + half).floor() + 1.0).min(interior.1 as f64)) as usize;
        if lo >= hi {
            (0, 0)
        } else {
            (lo, hi)
        }
    }

    /// Row range `[lo, hi)` meeting the disk of radius `radius`.
    pub fn disk_rows(&self, radius: f64) -> (usize, usize) {
        let n = self.n();
        let c = self.half_cells() as f64;
        let half = (radius.max(0.0) / self.h).floor();
        let lo = (c - half).max(RING as f64) as usize;
        let hi = ((c + half + 1.0).min((n - RING) as f64)) as usize;
        (lo, hi.max(lo))
    }
}
