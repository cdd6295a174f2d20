//! Cubic coefficient tensors `P^{γαβ}` and the null condition.
//!
//! The quasilinear term of the model equation is `P^{γαβ} ∂_γ w ∂_α ∂_β w`.
//! A tensor is *null* when its cubic form vanishes on the light cone,
//! `P(ξ, ξ, ξ) = 0` for every `ξ` with `ξ₀² = ξ₁² + ξ₂²`.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Minkowski metric `m = diag(-1, 1, 1)`.
pub const MINKOWSKI: [f64; 3] = [-1.0, 1.0, 1.0];

/// Default tolerance for [`verify_null`].
pub const NULL_TOLERANCE: f64 = 1e-12;

/// Default number of samples on the unit null circle.
pub const NULL_SAMPLES: usize = 64;

/// A spacetime (co)vector `(c₀, c₁, c₂)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SpacetimeVector(pub [f64; 3]);

impl SpacetimeVector {
    pub const ZERO: SpacetimeVector = SpacetimeVector([0.0; 3]);

    pub fn new(c0: f64, c1: f64, c2: f64) -> Self {
        SpacetimeVector([c0, c1, c2])
    }

    /// The null covector `(1, cos θ, sin θ)`.
    pub fn null_direction(theta: f64) -> Self {
        SpacetimeVector([1.0, theta.cos(), theta.sin()])
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|c| c.is_finite())
    }

    pub fn scaled(&self, k: f64) -> Self {
        SpacetimeVector(self.0.map(|c| c * k))
    }

    pub fn add(&self, other: &Self) -> Self {
        SpacetimeVector([
            self.0[0] + other.0[0],
            self.0[1] + other.0[1],
            self.0[2] + other.0[2],
        ])
    }
}

/// The 27 coefficients `P^{γαβ}`, indexed `coeffs[γ][α][β]`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CubicTensor {
    coeffs: [[[f64; 3]; 3]; 3],
}

impl CubicTensor {
    pub fn zero() -> Self {
        Self::default()
    }

    /// Wrap raw coefficients. Only finiteness is enforced; symmetry in the
    /// last two indices can be imposed with [`symmetrize`].
    pub fn from_coeffs(coeffs: [[[f64; 3]; 3]; 3]) -> Result<Self> {
        if coeffs.iter().flatten().flatten().any(|c| !c.is_finite()) {
            return Err(Error::InvalidTensor("non-finite coefficient".into()));
        }
        Ok(CubicTensor { coeffs })
    }

    /// Coefficients in row-major `(γ, α, β)` order.
    pub fn from_row_major(values: &[f64]) -> Result<Self> {
        if values.len() != 27 {
            return Err(Error::InvalidTensor(format!(
                "expected 27 coefficients, found {}",
                values.len()
            )));
        }
        let mut coeffs = [[[0.0; 3]; 3]; 3];
        for (n, v) in values.iter().enumerate() {
            coeffs[n / 9][(n / 3) % 3][n % 3] = *v;
        }
        Self::from_coeffs(coeffs)
    }

    /// Single-entry tensor, handy for tests and contrast runs.
    pub fn unit(gamma: usize, alpha: usize, beta: usize) -> Self {
        let mut t = Self::zero();
        t.coeffs[gamma][alpha][beta] = 1.0;
        t
    }

    #[inline]
    pub fn get(&self, gamma: usize, alpha: usize, beta: usize) -> f64 {
        self.coeffs[gamma][alpha][beta]
    }

    pub fn coeffs(&self) -> &[[[f64; 3]; 3]; 3] {
        &self.coeffs
    }

    pub fn row_major(&self) -> Vec<f64> {
        self.coeffs.iter().flatten().flatten().copied().collect()
    }

    pub fn is_symmetric(&self) -> bool {
        (0..3).all(|g| {
            (0..3).all(|a| (0..3).all(|b| self.coeffs[g][a][b] == self.coeffs[g][b][a]))
        })
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().flatten().flatten().all(|c| *c == 0.0)
    }

    /// Largest coefficient magnitude.
    pub fn max_abs(&self) -> f64 {
        self.coeffs
            .iter()
            .flatten()
            .flatten()
            .fold(0.0_f64, |m, c| m.max(c.abs()))
    }

    pub fn scaled(&self, k: f64) -> Self {
        let mut out = *self;
        out.coeffs.iter_mut().flatten().flatten().for_each(|c| *c *= k);
        out
    }

    pub fn plus(&self, other: &Self) -> Self {
        let mut out = *self;
        for g in 0..3 {
            for a in 0..3 {
                for b in 0..3 {
                    out.coeffs[g][a][b] += other.coeffs[g][a][b];
                }
            }
        }
        out
    }

    /// Contract the first index with a covector, `Σ_γ P^{γαβ} v_γ`.
    pub fn contract_first(&self, v: &[f64; 3]) -> [[f64; 3]; 3] {
        let mut out = [[0.0; 3]; 3];
        for (g, vg) in v.iter().enumerate() {
            for a in 0..3 {
                for b in 0..3 {
                    out[a][b] += self.coeffs[g][a][b] * vg;
                }
            }
        }
        out
    }
}

impl fmt::Display for CubicTensor {
    /// Row-major 27-value form accepted by [`FromStr`].
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.row_major().iter().map(|v| v.to_string()).collect();
        f.write_str(&parts.join(" "))
    }
}

impl FromStr for CubicTensor {
    type Err = Error;

    /// Either 27 reals in row-major `(γ, α, β)` order or `cm c₀ c₁ c₂`.
    fn from_str(text: &str) -> Result<Self> {
        let mut tokens = text.split_whitespace().peekable();
        if tokens.peek() == Some(&"cm") {
            tokens.next();
            let c = parse_reals(tokens)?;
            if c.len() != 3 {
                return Err(Error::InvalidTensor(format!(
                    "`cm` needs 3 components, found {}",
                    c.len()
                )));
            }
            let c = SpacetimeVector::new(c[0], c[1], c[2]);
            if !c.is_finite() {
                return Err(Error::InvalidTensor("non-finite coefficient".into()));
            }
            return Ok(make_cm_tensor(c));
        }
        CubicTensor::from_row_major(&parse_reals(tokens)?)
    }
}

fn parse_reals<'a>(tokens: impl Iterator<Item = &'a str>) -> Result<Vec<f64>> {
    tokens
        .map(|tok| {
            tok.parse::<f64>()
                .map_err(|_| Error::InvalidTensor(format!("not a number: `{tok}`")))
        })
        .collect()
}

/// `Σ_{γαβ} P^{γαβ} a_γ b_α c_β`.
pub fn contract(
    p: &CubicTensor,
    a: &SpacetimeVector,
    b: &SpacetimeVector,
    c: &SpacetimeVector,
) -> f64 {
    let mut total = 0.0;
    for g in 0..3 {
        for al in 0..3 {
            let ab = a.0[g] * b.0[al];
            for be in 0..3 {
                total += p.coeffs[g][al][be] * ab * c.0[be];
            }
        }
    }
    total
}

/// The null family `P^{γαβ} = c^γ m^{αβ}`.
pub fn make_cm_tensor(c: SpacetimeVector) -> CubicTensor {
    let mut t = CubicTensor::zero();
    for g in 0..3 {
        for a in 0..3 {
            t.coeffs[g][a][a] = c.0[g] * MINKOWSKI[a];
        }
    }
    t
}

/// Average over the last two indices.
pub fn symmetrize(p: &CubicTensor) -> CubicTensor {
    let mut out = CubicTensor::zero();
    for g in 0..3 {
        for a in 0..3 {
            for b in 0..3 {
                out.coeffs[g][a][b] = 0.5 * (p.coeffs[g][a][b] + p.coeffs[g][b][a]);
            }
        }
    }
    out
}

/// Cubic form on the null covector `(1, cos θ, sin θ)`.
pub fn null_residual(p: &CubicTensor, theta: f64) -> f64 {
    let xi = SpacetimeVector::null_direction(theta);
    contract(p, &xi, &xi, &xi)
}

/// Outcome of [`verify_null`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NullVerdict {
    pub is_null: bool,
    pub max_residual: f64,
}

/// Sample the null circle at `θ_k = 2πk/n`, refine every sampled local
/// maximum of the residual by golden-section search, and compare the largest
/// against `tol`.
///
/// The cubic form restricted to the circle is a trigonometric polynomial of
/// degree at most three, so a modest `n` brackets every maximum.
pub fn verify_null(p: &CubicTensor, n_samples: usize, tol: f64) -> NullVerdict {
    assert!(n_samples >= 8, "verify_null needs at least 8 samples");
    let step = std::f64::consts::TAU / n_samples as f64;
    let r = |theta: f64| null_residual(p, theta).abs();
    let samples: Vec<f64> = (0..n_samples).map(|k| r(step * k as f64)).collect();
    let mut max_residual = samples.iter().copied().fold(0.0_f64, f64::max);
    for k in 0..n_samples {
        let prev = samples[(k + n_samples - 1) % n_samples];
        let next = samples[(k + 1) % n_samples];
        if samples[k] > 0.0 && samples[k] >= prev && samples[k] >= next {
            let centre = step * k as f64;
            max_residual = max_residual.max(golden_max(&r, centre - step, centre + step));
        }
    }
    NullVerdict {
        is_null: max_residual <= tol,
        max_residual,
    }
}

/// Maximum of a unimodal `f` on `[a, b]`.
fn golden_max(f: &impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..80 {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    fc.max(fd)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v(a: f64, b: f64, c: f64) -> SpacetimeVector {
        SpacetimeVector::new(a, b, c)
    }

    #[test]
    fn contract_single_entry() {
        let p = CubicTensor::unit(0, 0, 0);
        assert_eq!(contract(&p, &v(1., 0., 0.), &v(2., 0., 0.), &v(3., 0., 0.)), 6.0);
    }

    #[test]
    fn contract_zero_vector() {
        let p = make_cm_tensor(v(0.3, -1.2, 2.0));
        assert_eq!(contract(&p, &SpacetimeVector::ZERO, &v(1., 2., 3.), &v(4., 5., 6.)), 0.0);
    }

    #[test]
    fn cm_vanishes_on_null_vector() {
        let p = make_cm_tensor(v(1., 0., 0.));
        let n = v(1., 1., 0.);
        assert_eq!(contract(&p, &n, &n, &n), 0.0);
    }

    #[test]
    fn cm_entries() {
        let p = make_cm_tensor(v(1., 0., 0.));
        for g in 0..3 {
            for a in 0..3 {
                for b in 0..3 {
                    let expected = match (g, a, b) {
                        (0, 0, 0) => -1.0,
                        (0, 1, 1) | (0, 2, 2) => 1.0,
                        _ => 0.0,
                    };
                    assert_eq!(p.get(g, a, b), expected, "({g},{a},{b})");
                }
            }
        }
        assert!(make_cm_tensor(SpacetimeVector::ZERO).is_zero());
        let q = make_cm_tensor(v(0., 1., 0.));
        for g in [0, 2] {
            assert!((0..3).all(|a| (0..3).all(|b| q.get(g, a, b) == 0.0)));
        }
        assert_eq!([q.get(1, 0, 0), q.get(1, 1, 1), q.get(1, 2, 2)], [-1.0, 1.0, 1.0]);
        assert_eq!(q.get(1, 0, 1), 0.0);
    }

    #[test]
    fn symmetrize_examples() {
        let mut c = [[[0.0; 3]; 3]; 3];
        c[0][0][1] = 2.0;
        let s = symmetrize(&CubicTensor::from_coeffs(c).unwrap());
        assert_eq!(s.get(0, 0, 1), 1.0);
        assert_eq!(s.get(0, 1, 0), 1.0);

        let sym = make_cm_tensor(v(1., 2., 3.));
        assert_eq!(symmetrize(&sym), sym);

        let mut c = [[[0.0; 3]; 3]; 3];
        c[1][2][0] = 4.0;
        c[1][0][2] = -4.0;
        let s = symmetrize(&CubicTensor::from_coeffs(c).unwrap());
        assert!(s.is_zero());
    }

    #[test]
    fn null_residual_examples() {
        let p = make_cm_tensor(v(1., 0., 0.));
        for k in 0..17 {
            assert!(null_residual(&p, 0.37 * k as f64).abs() < 1e-15);
        }
        assert_eq!(null_residual(&CubicTensor::unit(0, 0, 0), 0.0), 1.0);
        let q = make_cm_tensor(v(0., 1., 0.));
        assert!(null_residual(&q, std::f64::consts::FRAC_PI_2).abs() < 1e-15);
    }

    #[test]
    fn verify_null_examples() {
        let p = make_cm_tensor(v(1., 2., 3.));
        assert!(verify_null(&p, 64, 1e-12).is_null);
        let verdict = verify_null(&CubicTensor::unit(0, 0, 0), 64, 1e-12);
        assert!(!verdict.is_null);
        assert_eq!(verdict.max_residual, 1.0);
    }

    /// Brute-force θ scan, independent of `verify_null`'s sampling.
    fn fine_scan(p: &CubicTensor, n: usize) -> f64 {
        let c = p.coeffs();
        let mut best = 0.0_f64;
        for k in 0..n {
            let th = std::f64::consts::TAU * (k as f64 + 0.5) / n as f64;
            let xi = [1.0, th.cos(), th.sin()];
            let mut r = 0.0;
            for g in 0..3 {
                for a in 0..3 {
                    for b in 0..3 {
                        r += c[g][a][b] * xi[g] * xi[a] * xi[b];
                    }
                }
            }
            best = best.max(r.abs());
        }
        best
    }

    #[test]
    fn random_symmetric_tensor_against_fine_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..5 {
            let vals: Vec<f64> = (0..27).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let p = symmetrize(&CubicTensor::from_row_major(&vals).unwrap());
            let verdict = verify_null(&p, 64, 1e-12);
            assert!(!verdict.is_null);
            let oracle = fine_scan(&p, 1_000_000);
            assert!(
                (verdict.max_residual - oracle).abs() <= 1e-6 * oracle.max(1.0),
                "{} vs {}",
                verdict.max_residual,
                oracle
            );
        }
    }

    #[test]
    fn parse_forms() {
        let p: CubicTensor = "cm 1 0 0".parse().unwrap();
        assert_eq!(p, make_cm_tensor(v(1., 0., 0.)));
        let text = p.to_string();
        assert_eq!(text.parse::<CubicTensor>().unwrap(), p);
        assert!("cm 1 2".parse::<CubicTensor>().is_err());
        assert!("1 2 3".parse::<CubicTensor>().is_err());
        assert!("cm 1 x 0".parse::<CubicTensor>().is_err());
    }

    fn arb_vec() -> impl Strategy<Value = SpacetimeVector> {
        prop::array::uniform3(-3.0..3.0f64).prop_map(SpacetimeVector)
    }

    proptest! {
        #[test]
        fn constructors_are_symmetric(c in arb_vec()) {
            let p = make_cm_tensor(c);
            prop_assert_eq!(symmetrize(&p), p);
        }

        #[test]
        fn cm_family_is_null(c in arb_vec(), theta in 0.0..std::f64::consts::TAU) {
            let p = make_cm_tensor(c);
            let xi = SpacetimeVector::null_direction(theta);
            // intermediate magnitudes are bounded by 3·max|c|·|ξ|³
            let scale = 3.0 * c.0.iter().fold(0.0_f64, |m, x| m.max(x.abs())) * 8.0;
            prop_assert!(null_residual(&p, theta).abs() <= 8.0 * f64::EPSILON * scale.max(1e-300),
                "residual {} xi {:?}", null_residual(&p, theta), xi);
        }

        #[test]
        fn contract_is_trilinear(
            a in arb_vec(), a2 in arb_vec(), b in arb_vec(), c in arb_vec(),
            lam in -2.0..2.0f64, mu in -2.0..2.0f64,
            vals in prop::collection::vec(-1.0..1.0f64, 27),
        ) {
            let p = CubicTensor::from_row_major(&vals).unwrap();
            let combo = a.scaled(lam).add(&a2.scaled(mu));
            let lhs = contract(&p, &combo, &b, &c);
            let rhs = lam * contract(&p, &a, &b, &c) + mu * contract(&p, &a2, &b, &c);
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
        }

        #[test]
        fn null_tensors_form_a_linear_space(
            cs in prop::collection::vec(arb_vec(), 1..5),
            lams in prop::collection::vec(-2.0..2.0f64, 5),
        ) {
            let p = cs.iter().zip(lams.iter())
                .fold(CubicTensor::zero(), |acc, (c, l)| acc.plus(&make_cm_tensor(*c).scaled(*l)));
            prop_assert!(verify_null(&p, 64, 1e-12).is_null);
        }
    }
}
