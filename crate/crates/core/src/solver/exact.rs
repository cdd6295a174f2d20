//! Closed-form fields with exact derivatives: manufactured solutions and
//! polynomial fills.

/// A smooth function of `(t, x₁, x₂)` with exact first and second partials.
pub trait ClosedForm: Sync {
    fn value(&self, t: f64, x: [f64; 2]) -> f64;
    /// `(∂_t, ∂₁, ∂₂)`
    fn gradient(&self, t: f64, x: [f64; 2]) -> [f64; 3];
    /// Symmetric Hessian indexed by `(α, β)` with `0 = t`.
    fn hessian(&self, t: f64, x: [f64; 2]) -> [[f64; 3]; 3];
}

/// The compactly supported bump `χ(r) = exp(1 − 1/(1 − r²))` for `r < 1`.
pub fn bump(r: f64) -> f64 {
    bump_sq(r * r)[0]
}

/// `χ` as a function of `q = r²`, with its first two `q`-derivatives.
pub fn bump_sq(q: f64) -> [f64; 3] {
    if q >= 1.0 {
        return [0.0; 3];
    }
    let d = 1.0 - q;
    let f = (1.0 - 1.0 / d).exp();
    let d2 = d * d;
    [f, -f / d2, f * (2.0 * q - 1.0) / (d2 * d2)]
}

/// Radial shape of a [`SpatialBump`] as a function of `q = |x − c|²/ρ²`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BumpShape {
    /// The `C^∞` bump `χ`.
    Smooth,
    /// `(1 − q)^m`, of finite smoothness but far gentler derivatives.
    Polynomial(u32),
}

impl BumpShape {
    fn eval(self, q: f64) -> [f64; 3] {
        match self {
            BumpShape::Smooth => bump_sq(q),
            BumpShape::Polynomial(m) => {
                if q >= 1.0 {
                    return [0.0; 3];
                }
                let d = 1.0 - q;
                let m = m as f64;
                [
                    d.powf(m),
                    -m * d.powf(m - 1.0),
                    m * (m - 1.0) * d.powf(m - 2.0),
                ]
            }
        }
    }
}

/// `χ(|x − c| / ρ)` (or a polynomial stand-in) with gradient and Hessian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpatialBump {
    pub center: [f64; 2],
    pub radius: f64,
    pub shape: BumpShape,
}

impl SpatialBump {
    pub fn unit() -> Self {
        SpatialBump {
            center: [0.0, 0.0],
            radius: 1.0,
            shape: BumpShape::Smooth,
        }
    }

    /// `(value, [∂₁, ∂₂], [[∂₁₁, ∂₁₂], [∂₂₁, ∂₂₂]])`
    pub fn eval(&self, x: [f64; 2]) -> (f64, [f64; 2], [[f64; 2]; 2]) {
        let k = 1.0 / (self.radius * self.radius);
        let y = [x[0] - self.center[0], x[1] - self.center[1]];
        let q = (y[0] * y[0] + y[1] * y[1]) * k;
        let [f, f1, f2] = self.shape.eval(q);
        let dq = [2.0 * y[0] * k, 2.0 * y[1] * k];
        let grad = [f1 * dq[0], f1 * dq[1]];
        let mut hess = [[0.0; 2]; 2];
        for a in 0..2 {
            for b in 0..2 {
                hess[a][b] = f2 * dq[a] * dq[b] + if a == b { 2.0 * k * f1 } else { 0.0 };
            }
        }
        (f, grad, hess)
    }

    pub fn value(&self, x: [f64; 2]) -> f64 {
        let k = 1.0 / (self.radius * self.radius);
        let q = ((x[0] - self.center[0]).powi(2) + (x[1] - self.center[1]).powi(2)) * k;
        self.shape.eval(q)[0]
    }
}

/// The manufactured solution `w* = ε·sin(t)·χ(|x|/ρ)`.
///
/// `χ` is so steep near the edge of its support that second-order error
/// behaviour in the max norm only sets in around `h ≈ 0.01` for `ρ = 0.8`;
/// [`ManufacturedBump::polynomial`] gives a field resolved at coarse grids.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ManufacturedBump {
    pub epsilon: f64,
    pub bump: SpatialBump,
}

impl ManufacturedBump {
    pub fn new(epsilon: f64, radius: f64) -> Self {
        ManufacturedBump {
            epsilon,
            bump: SpatialBump {
                center: [0.0, 0.0],
                radius,
                shape: BumpShape::Smooth,
            },
        }
    }

    /// `ε·sin(t)·(1 − |x|²/ρ²)^m`.
    pub fn polynomial(epsilon: f64, radius: f64, m: u32) -> Self {
        ManufacturedBump {
            epsilon,
            bump: SpatialBump {
                center: [0.0, 0.0],
                radius,
                shape: BumpShape::Polynomial(m),
            },
        }
    }
}

impl ClosedForm for ManufacturedBump {
    fn value(&self, t: f64, x: [f64; 2]) -> f64 {
        self.epsilon * t.sin() * self.bump.value(x)
    }

    fn gradient(&self, t: f64, x: [f64; 2]) -> [f64; 3] {
        let (f, g, _) = self.bump.eval(x);
        let (s, c) = t.sin_cos();
        let e = self.epsilon;
        [e * c * f, e * s * g[0], e * s * g[1]]
    }

    fn hessian(&self, t: f64, x: [f64; 2]) -> [[f64; 3]; 3] {
        let (f, g, hx) = self.bump.eval(x);
        let (s, c) = t.sin_cos();
        let e = self.epsilon;
        [
            [-e * s * f, e * c * g[0], e * c * g[1]],
            [e * c * g[0], e * s * hx[0][0], e * s * hx[0][1]],
            [e * c * g[1], e * s * hx[1][0], e * s * hx[1][1]],
        ]
    }
}

/// Polynomial `Σ c·t^a x₁^b x₂^c` given as `(coefficient, [a, b, c])` terms.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Polynomial {
    pub terms: Vec<(f64, [u32; 3])>,
}

impl Polynomial {
    pub fn new(terms: &[(f64, [u32; 3])]) -> Self {
        Polynomial {
            terms: terms.to_vec(),
        }
    }

    pub fn constant(c: f64) -> Self {
        Self::new(&[(c, [0, 0, 0])])
    }

    fn eval_with(&self, t: f64, x: [f64; 2], d: [u32; 3]) -> f64 {
        let y = [t, x[0], x[1]];
        let mut total = 0.0;
        for (c, pow) in &self.terms {
            let mut term = *c;
            for v in 0..3 {
                if pow[v] < d[v] {
                    term = 0.0;
                    break;
                }
                for m in 0..d[v] {
                    term *= (pow[v] - m) as f64;
                }
                term *= y[v].powi((pow[v] - d[v]) as i32);
            }
            total += term;
        }
        total
    }
}

impl ClosedForm for Polynomial {
    fn value(&self, t: f64, x: [f64; 2]) -> f64 {
        self.eval_with(t, x, [0, 0, 0])
    }

    fn gradient(&self, t: f64, x: [f64; 2]) -> [f64; 3] {
        [
            self.eval_with(t, x, [1, 0, 0]),
            self.eval_with(t, x, [0, 1, 0]),
            self.eval_with(t, x, [0, 0, 1]),
        ]
    }

    fn hessian(&self, t: f64, x: [f64; 2]) -> [[f64; 3]; 3] {
        let mut out = [[0.0; 3]; 3];
        for a in 0..3 {
            for b in 0..3 {
                let mut d = [0u32; 3];
                d[a] += 1;
                d[b] += 1;
                out[a][b] = self.eval_with(t, x, d);
            }
        }
        out
    }
}

/// The zero field.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroField;

impl ClosedForm for ZeroField {
    fn value(&self, _: f64, _: [f64; 2]) -> f64 {
        0.0
    }
    fn gradient(&self, _: f64, _: [f64; 2]) -> [f64; 3] {
        [0.0; 3]
    }
    fn hessian(&self, _: f64, _: [f64; 2]) -> [[f64; 3]; 3] {
        [[0.0; 3]; 3]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn check_derivatives<F: ClosedForm>(f: &F, t: f64, x: [f64; 2]) {
        let e = 1e-5;
        let g = f.gradient(t, x);
        let h = f.hessian(t, x);
        let shift = |v: usize, d: f64| -> (f64, [f64; 2]) {
            let mut y = [t, x[0], x[1]];
            y[v] += d;
            (y[0], [y[1], y[2]])
        };
        for v in 0..3 {
            let (tp, xp) = shift(v, e);
            let (tm, xm) = shift(v, -e);
            let fd = (f.value(tp, xp) - f.value(tm, xm)) / (2.0 * e);
            assert!((fd - g[v]).abs() < 1e-7 * (1.0 + g[v].abs()), "grad {v}");
            let gp = f.gradient(tp, xp);
            let gm = f.gradient(tm, xm);
            for w in 0..3 {
                let fd2 = (gp[w] - gm[w]) / (2.0 * e);
                assert!((fd2 - h[v][w]).abs() < 1e-6 * (1.0 + h[v][w].abs()), "hess {v}{w}");
            }
        }
    }

    #[test]
    fn bump_values() {
        assert_eq!(bump(0.0), 1.0);
        assert_eq!(bump(1.0), 0.0);
        assert_eq!(bump(1.5), 0.0);
        assert!((bump(0.5) - (1.0 - 1.0 / 0.75f64).exp()).abs() < 1e-16);
    }

    #[test]
    fn manufactured_derivatives_match_differences() {
        let m = ManufacturedBump::new(0.3, 0.8);
        check_derivatives(&m, 2.7, [0.21, -0.33]);
        check_derivatives(&m, 5.1, [-0.5, 0.4]);
        let p = ManufacturedBump::polynomial(0.3, 0.8, 6);
        check_derivatives(&p, 2.7, [0.21, -0.33]);
    }

    #[test]
    fn polynomial_derivatives() {
        let p = Polynomial::new(&[(2.0, [1, 1, 0]), (-0.5, [0, 2, 1]), (1.5, [3, 0, 0])]);
        check_derivatives(&p, 1.3, [0.7, -2.0]);
        let tx = Polynomial::new(&[(1.0, [1, 1, 0])]);
        assert_eq!(tx.value(3.0, [2.0, 5.0]), 6.0);
        assert_eq!(tx.gradient(3.0, [2.0, 5.0]), [2.0, 3.0, 0.0]);
        assert_eq!(tx.hessian(3.0, [2.0, 5.0])[0][1], 1.0);
    }
}
