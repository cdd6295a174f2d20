//! Hyperboloidal geometry at a spacetime point.
//!
//! With `s = √(t² − |x|²)` the hyperboloidal frame is `∂̄₀ = ∂_s = (s/t)∂_t`
//! and `∂̄_a = (x_a/t)∂_t + ∂_a`, the derivative along `H_s` at fixed `s`.
//! Cartesian derivatives are recovered through `∂_α = Ψ_α^β ∂̄_β`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nulltensor::{contract, CubicTensor, SpacetimeVector};

/// Initial hyperbolic time; every diagnostic point lies on `s ≥ S0`.
pub const S0: f64 = 2.0;

/// A point `(t, x)` together with its hyperbolic time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FramePoint {
    pub t: f64,
    pub x: [f64; 2],
    pub s: f64,
    pub r: f64,
}

impl FramePoint {
    /// Point from Cartesian coordinates; `s` is derived. Fails outside the
    /// open light cone.
    pub fn new(t: f64, x: [f64; 2]) -> Result<Self> {
        let r = x[0].hypot(x[1]);
        let s2 = (t - r) * (t + r);
        if !(s2 > 0.0) || !t.is_finite() {
            return Err(Error::DegeneratePoint { s: s2.max(0.0).sqrt() });
        }
        Ok(FramePoint { t, x, s: s2.sqrt(), r })
    }

    /// Point on `H_s` above `x`; `t` is derived.
    pub fn on_hyperboloid(s: f64, x: [f64; 2]) -> Result<Self> {
        if !(s > 0.0) || !s.is_finite() {
            return Err(Error::DegeneratePoint { s });
        }
        let r = x[0].hypot(x[1]);
        Ok(FramePoint { t: s.hypot(r), x, s, r })
    }

    /// Membership in the support cone `t ≥ |x| + 1`.
    pub fn in_cone(&self) -> bool {
        self.t >= self.r + 1.0
    }

    /// `r ≤ t`, `s ≤ t ≤ s²` and `t ≤ t + r ≤ 2t`, all valid in the cone for
    /// `s ≥ 2`.
    pub fn satisfies_cone_bounds(&self) -> bool {
        let (t, s, r) = (self.t, self.s, self.r);
        let slack = 4.0 * f64::EPSILON * t;
        r <= t + slack && s <= t + slack && t <= s * s + slack && t + r <= 2.0 * t + slack
    }
}

/// `Ψ_α^β`, stored as `entries[α][β]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionMatrix {
    pub entries: [[f64; 3]; 3],
}

impl TransitionMatrix {
    /// The column `Ψ⁰_α = (t/s, −x₁/s, −x₂/s)`.
    pub fn psi0(&self) -> [f64; 3] {
        [self.entries[0][0], self.entries[1][0], self.entries[2][0]]
    }

    /// `m^{αβ}Ψ⁰_αΨ⁰_β`, which equals −1 identically. Products are formed
    /// with fused multiply-adds so the only rounding left is that of the
    /// entries themselves.
    pub fn minkowski_norm_psi0(&self) -> f64 {
        let p = self.psi0();
        let spatial = p[1].mul_add(p[1], p[2] * p[2]);
        (-p[0]).mul_add(p[0], spatial)
    }

    /// The defect `|m(Ψ⁰, Ψ⁰) + 1|` in ulps of the largest term `(t/s)²`.
    pub fn norm_defect_ulps(&self) -> f64 {
        let lead = self.entries[0][0] * self.entries[0][0];
        (self.minkowski_norm_psi0() + 1.0).abs() / (f64::EPSILON * lead)
    }
}

pub fn psi_matrix(p: &FramePoint) -> Result<TransitionMatrix> {
    if !(p.s > 0.0) {
        return Err(Error::DegeneratePoint { s: p.s });
    }
    let inv_s = 1.0 / p.s;
    Ok(TransitionMatrix {
        entries: [
            [p.t * inv_s, 0.0, 0.0],
            [-p.x[0] * inv_s, 1.0, 0.0],
            [-p.x[1] * inv_s, 0.0, 1.0],
        ],
    })
}

/// Gradients in the two adapted frames.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameGradients {
    /// `(∂_s u, ∂̄₁u, ∂̄₂u)`
    pub hyperboloidal: [f64; 3],
    /// `(∂_t u, ∂̄₁u, ∂̄₂u)`
    pub semi: [f64; 3],
}

pub fn frame_convert(p: &FramePoint, partials: [f64; 3]) -> FrameGradients {
    let [ut, u1, u2] = partials;
    let inv_t = 1.0 / p.t;
    let b1 = p.x[0] * inv_t * ut + u1;
    let b2 = p.x[1] * inv_t * ut + u2;
    FrameGradients {
        hyperboloidal: [p.s * inv_t * ut, b1, b2],
        semi: [ut, b1, b2],
    }
}

/// Inverse of [`frame_convert`] from the semi-hyperboloidal components.
pub fn frame_unconvert(p: &FramePoint, semi: [f64; 3]) -> [f64; 3] {
    let inv_t = 1.0 / p.t;
    let ut = semi[0];
    [ut, semi[1] - p.x[0] * inv_t * ut, semi[2] - p.x[1] * inv_t * ut]
}

/// Closed form `∂_sΨ⁰_α = −Ψ⁰_α/s + δ_{0α}/t` at fixed `x`.
pub fn ds_psi0(p: &FramePoint) -> [f64; 3] {
    let inv_s = 1.0 / p.s;
    [
        -p.t * inv_s * inv_s + 1.0 / p.t,
        p.x[0] * inv_s * inv_s,
        p.x[1] * inv_s * inv_s,
    ]
}

/// Closed forms `∂̄_aΨ⁰_β`, indexed `[a-1][β]`: `∂̄_a(t/s) = x_a/(st)` and
/// `∂̄_a(−x_b/s) = −δ_ab/s`.
pub fn dbar_psi0(p: &FramePoint) -> [[f64; 3]; 2] {
    let inv_s = 1.0 / p.s;
    let k = inv_s / p.t;
    [
        [p.x[0] * k, -inv_s, 0.0],
        [p.x[1] * k, 0.0, -inv_s],
    ]
}

/// `Ψ^γ_α ∂̄_γ Ψ⁰_β`, i.e. the Cartesian derivative `∂_αΨ⁰_β`, indexed
/// `[α][β]`.
pub fn partial_psi0(p: &FramePoint) -> [[f64; 3]; 3] {
    let psi = psi_matrix(p).expect("frame point has s > 0");
    let ds = ds_psi0(p);
    let db = dbar_psi0(p);
    let mut out = [[0.0; 3]; 3];
    for (alpha, row) in out.iter_mut().enumerate() {
        for (beta, v) in row.iter_mut().enumerate() {
            let mut acc = psi.entries[alpha][0] * ds[beta];
            for a in 1..3 {
                acc += psi.entries[alpha][a] * db[a - 1][beta];
            }
            *v = acc;
        }
    }
    out
}

/// Empirical constants for the frame identities at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameResiduals {
    /// Max over α of the closed form of `∂_sΨ⁰_α` minus a centered difference.
    pub step_residual: f64,
    /// `|P(Ψ⁰, Ψ⁰, Ψ⁰)| / (t/s)`
    pub psi_ratio: f64,
    /// Max over the four sign choices of `|P(Φ, Φ, Φ)| / (s²/t²)` with
    /// `Φ = (1, ±x₁/t, ±x₂/t)`.
    pub phi_ratio: f64,
}

/// Default differencing step in `s` for the closed-form check.
pub fn default_s_step(s: f64) -> f64 {
    (1e-4 * s).min(1e-3)
}

/// `max_α |closed form − centered difference with step ds|`.
pub fn step_residual(p: &FramePoint, ds: f64) -> f64 {
    let at = |s: f64| {
        let q = FramePoint::on_hyperboloid(s, p.x).expect("positive s");
        psi_matrix(&q).expect("positive s").psi0()
    };
    let hi = at(p.s + ds);
    let lo = at(p.s - ds);
    let exact = ds_psi0(p);
    (0..3)
        .map(|a| ((hi[a] - lo[a]) / (2.0 * ds) - exact[a]).abs())
        .fold(0.0, f64::max)
}

pub fn frame_identity_residuals(p: &FramePoint, tensor: &CubicTensor) -> FrameResiduals {
    let psi0 = SpacetimeVector(psi_matrix(p).expect("frame point has s > 0").psi0());
    let psi_ratio = contract(tensor, &psi0, &psi0, &psi0).abs() / (p.t / p.s);
    let weight = (p.s / p.t).powi(2);
    let mut phi_ratio = 0.0_f64;
    for s1 in [1.0, -1.0] {
        for s2 in [1.0, -1.0] {
            let phi = SpacetimeVector([1.0, s1 * p.x[0] / p.t, s2 * p.x[1] / p.t]);
            phi_ratio = phi_ratio.max(contract(tensor, &phi, &phi, &phi).abs() / weight);
        }
    }
    FrameResiduals {
        step_residual: step_residual(p, default_s_step(p.s)),
        psi_ratio,
        phi_ratio,
    }
}

/// Uniform-ish random point in the cone with `s ∈ [S0, s_max]`.
pub fn random_cone_point<R: Rng>(rng: &mut R, s_max: f64) -> FramePoint {
    loop {
        let s = rng.gen_range(S0..s_max);
        // cone edge on H_s sits at |x| = (s² − 1)/2
        let r_max = 0.5 * (s * s - 1.0);
        let r = r_max * rng.gen::<f64>().sqrt();
        let theta = rng.gen_range(0.0..std::f64::consts::TAU);
        let p = FramePoint::on_hyperboloid(s, [r * theta.cos(), r * theta.sin()])
            .expect("positive s");
        if p.in_cone() {
            return p;
        }
    }
}

/// Running maxima of [`FrameResiduals`] over a point cloud.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FrameSweep {
    pub points: usize,
    pub max_step_residual: f64,
    pub max_psi_ratio: f64,
    pub max_phi_ratio: f64,
    /// See [`TransitionMatrix::norm_defect_ulps`].
    pub max_norm_defect_ulps: f64,
    pub bounds_hold: bool,
}

pub fn frame_sweep<R: Rng>(
    tensor: &CubicTensor,
    n_points: usize,
    s_max: f64,
    rng: &mut R,
) -> FrameSweep {
    let mut out = FrameSweep {
        bounds_hold: true,
        ..Default::default()
    };
    for _ in 0..n_points {
        let p = random_cone_point(rng, s_max);
        let res = frame_identity_residuals(&p, tensor);
        let psi = psi_matrix(&p).expect("positive s");
        out.points += 1;
        out.max_step_residual = out.max_step_residual.max(res.step_residual);
        out.max_psi_ratio = out.max_psi_ratio.max(res.psi_ratio);
        out.max_phi_ratio = out.max_phi_ratio.max(res.phi_ratio);
        out.max_norm_defect_ulps = out.max_norm_defect_ulps.max(psi.norm_defect_ulps());
        out.bounds_hold &= p.satisfies_cone_bounds();
    }
    out
}
