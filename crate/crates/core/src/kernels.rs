//! Infinite-width covariance (NNGP) and neural tangent kernels.
//!
//! `Σ¹(x, x′) = x·x′/n0`, `Σ^{l+1} = E[φ(ζ)φ(ζ′)]` and
//! `Θ̄^{l+1} = Σ^{l+1} + E[φ̇(ζ)φ̇(ζ′)]·Θ̄^l` with `(ζ, ζ′) ~ N(0, Σ^l-block)`.

use std::f64::consts::PI;

use nalgebra::DMatrix;

use crate::activation::{ActivationKind, ActivationSpec, KernelMode};
use crate::error::{Error, Result};
use crate::linalg;
use crate::par;
use crate::quadrature::{normal_expectation_piecewise, QuadratureRule};

/// Ordered input vectors sharing one dimension `n0`.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSet {
    points: Vec<Vec<f64>>,
    dim: usize,
    sphere_normalised: bool,
}

impl PointSet {
    pub fn new(points: Vec<Vec<f64>>) -> Result<Self> {
        let dim = points
            .first()
            .map(Vec::len)
            .ok_or_else(|| Error::config("point set is empty"))?;
        if dim == 0 {
            return Err(Error::config("input dimension must be at least 1"));
        }
        for (i, p) in points.iter().enumerate() {
            if p.len() != dim {
                return Err(Error::config(format!(
                    "point {i} has dimension {}, expected {dim}",
                    p.len()
                )));
            }
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::config(format!(
                    "point {i} has non-finite coordinates"
                )));
            }
        }
        Ok(Self {
            points,
            dim,
            sphere_normalised: false,
        })
    }

    /// Rescales every point onto the sphere of radius √n0.
    pub fn sphere_normalised(mut self) -> Result<Self> {
        let radius = (self.dim as f64).sqrt();
        for (i, p) in self.points.iter_mut().enumerate() {
            let norm = p.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Err(Error::config(format!(
                    "point {i} is zero and cannot be normalised"
                )));
            }
            p.iter_mut().for_each(|v| *v *= radius / norm);
        }
        self.sphere_normalised = true;
        Ok(self)
    }

    /// Marks the set as sphere-normalised after checking `|‖x‖² − n0| ≤ 1e-9·n0`.
    pub fn assert_on_sphere(mut self) -> Result<Self> {
        if !self.lies_on_sphere() {
            return Err(Error::config(format!(
                "points are not normalised to ‖x‖ = √{}",
                self.dim
            )));
        }
        self.sphere_normalised = true;
        Ok(self)
    }

    pub fn lies_on_sphere(&self) -> bool {
        let n0 = self.dim as f64;
        self.points
            .iter()
            .all(|p| (p.iter().map(|v| v * v).sum::<f64>() - n0).abs() <= 1e-9 * n0)
    }

    pub fn is_sphere_normalised(&self) -> bool {
        self.sphere_normalised
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i]
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    /// `x_i · x_j / n0`
    pub fn scaled_dot(&self, i: usize, j: usize) -> f64 {
        let d: f64 = self.points[i]
            .iter()
            .zip(&self.points[j])
            .map(|(a, b)| a * b)
            .sum();
        d / self.dim as f64
    }

    /// Concatenation `self ++ other`; used to build sample + probe Grams.
    pub fn concat(&self, other: &PointSet) -> Result<PointSet> {
        Error::check_dim("point set concat", self.dim, other.dim)?;
        let mut points = self.points.clone();
        points.extend(other.points.iter().cloned());
        Ok(PointSet {
            points,
            dim: self.dim,
            sphere_normalised: self.sphere_normalised && other.sphere_normalised,
        })
    }

    pub fn permuted(&self, perm: &[usize]) -> PointSet {
        PointSet {
            points: perm.iter().map(|&i| self.points[i].clone()).collect(),
            dim: self.dim,
            sphere_normalised: self.sphere_normalised,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Normalisation {
    Raw,
    /// Entries divided by the sample size m.
    PerSample,
}

/// Symmetric PSD kernel matrix indexed by a [`PointSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    pub values: DMatrix<f64>,
    pub normalisation: Normalisation,
}

impl GramMatrix {
    pub fn raw(values: DMatrix<f64>) -> Self {
        Self {
            values,
            normalisation: Normalisation::Raw,
        }
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[(i, j)]
    }

    /// `Θ̃ = Θ̄ / m`.
    pub fn per_sample(&self) -> GramMatrix {
        match self.normalisation {
            Normalisation::PerSample => self.clone(),
            Normalisation::Raw => GramMatrix {
                values: &self.values / self.len() as f64,
                normalisation: Normalisation::PerSample,
            },
        }
    }

    /// Largest asymmetry `|G_ij − G_ji|`.
    pub fn asymmetry(&self) -> f64 {
        let n = self.len();
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in 0..i {
                worst = worst.max((self.values[(i, j)] - self.values[(j, i)]).abs());
            }
        }
        worst
    }

    /// Checks symmetry (1e-12 absolute) and PSD (λ_min ≥ −1e-8·λ_max).
    pub fn validate(&self) -> Result<()> {
        if self.values.nrows() != self.values.ncols() {
            return Err(Error::DimensionMismatch {
                context: "gram matrix",
                expected: self.values.nrows(),
                got: self.values.ncols(),
            });
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericalDomain(
                "gram matrix has non-finite entries".into(),
            ));
        }
        let asym = self.asymmetry();
        if asym > 1e-12 {
            return Err(Error::NumericalDomain(format!(
                "gram matrix asymmetric by {asym:e}"
            )));
        }
        let eig = linalg::sym_eigen(&self.values);
        let (lo, hi) = (eig.values[0], *eig.values.last().unwrap());
        if lo < -1e-8 * hi.abs().max(f64::MIN_POSITIVE) {
            return Err(Error::NumericalDomain(format!(
                "gram matrix not PSD: smallest eigenvalue {lo:e}, largest {hi:e}"
            )));
        }
        Ok(())
    }
}

/// Per-layer NNGP and NTK Grams over one point set.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelStack {
    pub depth: usize,
    /// Σ¹ … Σ^L
    pub sigma: Vec<GramMatrix>,
    /// Θ̄¹ … Θ̄^L
    pub theta: Vec<GramMatrix>,
}

impl KernelStack {
    /// Θ̄^L
    pub fn ntk(&self) -> &GramMatrix {
        self.theta.last().unwrap()
    }

    /// Σ^L
    pub fn nngp(&self) -> &GramMatrix {
        self.sigma.last().unwrap()
    }
}

/// 2×2 covariance `[[a, c], [c, b]]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cov2 {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl Cov2 {
    pub fn new(a: f64, b: f64, c: f64) -> Self {
        Self { a, b, c }
    }

    fn block(g: &DMatrix<f64>, i: usize, j: usize) -> Self {
        Self::new(g[(i, i)], g[(j, j)], g[(i, j)])
    }
}

/// A scalar function with the locations of its kinks/jumps.
#[derive(Clone, Copy)]
pub struct Integrand<'a> {
    pub f: &'a (dyn Fn(f64) -> f64 + Sync),
    pub breakpoints: &'a [f64],
}

impl<'a> Integrand<'a> {
    pub fn smooth(f: &'a (dyn Fn(f64) -> f64 + Sync)) -> Self {
        Self {
            f,
            breakpoints: &[],
        }
    }

    pub fn new(f: &'a (dyn Fn(f64) -> f64 + Sync), breakpoints: &'a [f64]) -> Self {
        Self { f, breakpoints }
    }

    #[inline]
    fn eval(&self, x: f64) -> f64 {
        (self.f)(x)
    }
}

/// `E[h(scale·z)]`, `z ~ N(0,1)`, where `h` has kinks at `breaks` (in h's argument).
fn expect_scaled(h: &Integrand<'_>, scale: f64, rule: &QuadratureRule) -> f64 {
    if h.breakpoints.is_empty() || scale == 0.0 {
        rule.expect(|z| h.eval(scale * z))
    } else {
        let zb: Vec<f64> = h.breakpoints.iter().map(|k| k / scale).collect();
        normal_expectation_piecewise(|z| h.eval(scale * z), &zb)
    }
}

const DEGENERATE_CORRELATION: f64 = 1e-10;

/// `E[f(ζ) g(ζ′)]` for `(ζ, ζ′) ~ N(0, cov)`.
///
/// Smooth integrands use a tensor-product Gauss–Hermite rule after whitening
/// the pair (Cholesky of the 2×2 block). Integrands with breakpoints use the
/// conditional form `E_ζ[f(ζ)·E[g(ζ′) | ζ]]` with composite panels split at the
/// kinks. A zero variance or a correlation within 1e-10 of ±1 collapses to a
/// univariate expectation.
pub fn bivariate_expectation(
    f: Integrand<'_>,
    g: Integrand<'_>,
    cov: Cov2,
    rule: &QuadratureRule,
) -> Result<f64> {
    let Cov2 { a, b, c } = cov;
    let bad = || Error::NonPsdCovariance {
        pair: None,
        a,
        b,
        c,
    };
    if !(a.is_finite() && b.is_finite() && c.is_finite()) || a < -1e-12 || b < -1e-12 {
        return Err(bad());
    }
    let (a, b) = (a.max(0.0), b.max(0.0));
    let bound = (a * b).sqrt();
    if c.abs() > bound + 1e-12 * bound.max(1.0) {
        return Err(bad());
    }
    let scale = a.max(b);
    if scale == 0.0 {
        return Ok(f.eval(0.0) * g.eval(0.0));
    }
    if a <= 1e-14 * scale {
        return Ok(f.eval(0.0) * expect_scaled(&g, b.sqrt(), rule));
    }
    if b <= 1e-14 * scale {
        return Ok(g.eval(0.0) * expect_scaled(&f, a.sqrt(), rule));
    }
    let (sa, sb) = (a.sqrt(), b.sqrt());
    let rho = (c / (sa * sb)).clamp(-1.0, 1.0);
    if rho.abs() >= 1.0 - DEGENERATE_CORRELATION {
        let sign = rho.signum();
        let h = |z: f64| f.eval(sa * z) * g.eval(sign * sb * z);
        let mut zb: Vec<f64> = f.breakpoints.iter().map(|k| k / sa).collect();
        zb.extend(g.breakpoints.iter().map(|k| sign * k / sb));
        return Ok(if zb.is_empty() {
            rule.expect(h)
        } else {
            normal_expectation_piecewise(h, &zb)
        });
    }
    let s = (1.0 - rho * rho).sqrt();
    let inner = |z1: f64| -> f64 {
        let mean = rho * z1;
        let h = |z2: f64| g.eval(sb * (mean + s * z2));
        if g.breakpoints.is_empty() {
            rule.expect(h)
        } else {
            let zb: Vec<f64> = g.breakpoints.iter().map(|k| (k / sb - mean) / s).collect();
            normal_expectation_piecewise(h, &zb)
        }
    };
    let outer = |z1: f64| {
        let fv = f.eval(sa * z1);
        if fv == 0.0 {
            0.0
        } else {
            fv * inner(z1)
        }
    };
    Ok(if f.breakpoints.is_empty() {
        rule.expect(outer)
    } else {
        let zb: Vec<f64> = f.breakpoints.iter().map(|k| k / sa).collect();
        normal_expectation_piecewise(outer, &zb)
    })
}

/// Closed-form `E[φ(ζ)φ(ζ′)]` for relu, erf and identity.
pub fn analytic_phi_expectation(kind: ActivationKind, cov: Cov2) -> Option<f64> {
    let Cov2 { a, b, c } = cov;
    match kind {
        ActivationKind::Identity => Some(c),
        ActivationKind::Relu => {
            let norm = (a.max(0.0) * b.max(0.0)).sqrt();
            if norm == 0.0 {
                return Some(0.0);
            }
            let theta = (c / norm).clamp(-1.0, 1.0).acos();
            Some(norm / (2.0 * PI) * (theta.sin() + (PI - theta) * theta.cos()))
        }
        ActivationKind::Erf => {
            let denom = ((1.0 + 2.0 * a) * (1.0 + 2.0 * b)).sqrt();
            Some(2.0 / PI * (2.0 * c / denom).clamp(-1.0, 1.0).asin())
        }
        _ => None,
    }
}

/// Closed-form `E[φ̇(ζ)φ̇(ζ′)]` for relu, erf and identity.
pub fn analytic_phi_dot_expectation(kind: ActivationKind, cov: Cov2) -> Option<f64> {
    let Cov2 { a, b, c } = cov;
    match kind {
        ActivationKind::Identity => Some(1.0),
        ActivationKind::Relu => {
            let norm = (a.max(0.0) * b.max(0.0)).sqrt();
            if norm == 0.0 {
                // ζ = 0 almost surely on at least one side, and step(0) = 0.
                return Some(0.0);
            }
            let theta = (c / norm).clamp(-1.0, 1.0).acos();
            Some((PI - theta) / (2.0 * PI))
        }
        ActivationKind::Erf => {
            let det = (1.0 + 2.0 * a) * (1.0 + 2.0 * b) - 4.0 * c * c;
            Some(4.0 / PI / det.max(f64::MIN_POSITIVE).sqrt())
        }
        _ => None,
    }
}

#[derive(Clone, Copy)]
enum Moment {
    Phi,
    PhiDot,
}

fn moment_entry(
    cov: Cov2,
    act: &ActivationSpec,
    moment: Moment,
    rule: &QuadratureRule,
) -> Result<f64> {
    if act.kernel_mode() == KernelMode::Analytic {
        let closed = match moment {
            Moment::Phi => analytic_phi_expectation(act.kind(), cov),
            Moment::PhiDot => analytic_phi_dot_expectation(act.kind(), cov),
        };
        if let Some(v) = closed {
            return Ok(v);
        }
    }
    let phi = |x: f64| act.phi(x);
    let phi_dot = |x: f64| act.phi_dot(x);
    let integrand = match moment {
        Moment::Phi => Integrand::new(&phi, act.breakpoints()),
        Moment::PhiDot => Integrand::new(&phi_dot, act.breakpoints()),
    };
    bivariate_expectation(integrand, integrand, cov, rule)
}

fn moment_gram(
    sigma: &GramMatrix,
    act: &ActivationSpec,
    moment: Moment,
    rule: &QuadratureRule,
) -> Result<DMatrix<f64>> {
    let n = sigma.len();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i..n).map(move |j| (i, j))).collect();
    let values = par::try_map_slice(&pairs, |&(i, j)| {
        moment_entry(Cov2::block(&sigma.values, i, j), act, moment, rule).map_err(|e| match e {
            Error::NonPsdCovariance { a, b, c, .. } => Error::NonPsdCovariance {
                pair: Some((i, j)),
                a,
                b,
                c,
            },
            other => other,
        })
    })?;
    let mut out = DMatrix::zeros(n, n);
    for (&(i, j), v) in pairs.iter().zip(values) {
        out[(i, j)] = v;
        out[(j, i)] = v;
    }
    Ok(out)
}

/// `Σ^{l+1}` from `Σ^l`.
pub fn sigma_next(
    sigma_l: &GramMatrix,
    act: &ActivationSpec,
    rule: &QuadratureRule,
) -> Result<GramMatrix> {
    Ok(GramMatrix::raw(moment_gram(
        sigma_l,
        act,
        Moment::Phi,
        rule,
    )?))
}

/// `Θ̄^{l+1} = Σ^{l+1} + E[φ̇φ̇′]∘Θ̄^l` (entrywise).
pub fn theta_next(
    sigma_l: &GramMatrix,
    sigma_next: &GramMatrix,
    theta_l: &GramMatrix,
    act: &ActivationSpec,
    rule: &QuadratureRule,
) -> Result<GramMatrix> {
    let n = sigma_l.len();
    Error::check_dim("theta_next sigma_next", n, sigma_next.len())?;
    Error::check_dim("theta_next theta_l", n, theta_l.len())?;
    let dot = moment_gram(sigma_l, act, Moment::PhiDot, rule)?;
    Ok(GramMatrix::raw(
        &sigma_next.values + dot.component_mul(&theta_l.values),
    ))
}

/// `Σ¹(x, x′) = x·x′/n0`.
pub fn input_gram(pts: &PointSet) -> GramMatrix {
    let n = pts.len();
    GramMatrix::raw(DMatrix::from_fn(n, n, |i, j| pts.scaled_dot(i, j)))
}

/// Full recursion up to depth `depth`.
pub fn kernel_stack(
    pts: &PointSet,
    depth: usize,
    act: &ActivationSpec,
    rule: &QuadratureRule,
) -> Result<KernelStack> {
    if depth < 1 {
        return Err(Error::config("depth must be at least 1"));
    }
    if pts.is_empty() {
        return Err(Error::config("point set is empty"));
    }
    let base = input_gram(pts);
    let mut sigma = vec![base.clone()];
    let mut theta = vec![base];
    for l in 1..depth {
        let s_next = sigma_next(&sigma[l - 1], act, rule)?;
        let t_next = theta_next(&sigma[l - 1], &s_next, &theta[l - 1], act, rule)?;
        sigma.push(s_next);
        theta.push(t_next);
    }
    Ok(KernelStack {
        depth,
        sigma,
        theta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::gauss_hermite_rule;

    fn rule() -> QuadratureRule {
        gauss_hermite_rule(64).unwrap()
    }

    fn relu(x: f64) -> f64 {
        x.max(0.0)
    }

    #[test]
    fn identity_expectation_is_covariance() {
        let id = |x: f64| x;
        for c in [-0.5, 0.0, 0.9] {
            let v = bivariate_expectation(
                Integrand::smooth(&id),
                Integrand::smooth(&id),
                Cov2::new(1.0, 1.0, c),
                &rule(),
            )
            .unwrap();
            assert!((v - c).abs() < 1e-13, "c={c}: {v}");
        }
    }

    #[test]
    fn relu_independent_and_perfectly_correlated() {
        let r = Integrand::new(&relu, &[0.0]);
        let indep = bivariate_expectation(r, r, Cov2::new(1.0, 1.0, 0.0), &rule()).unwrap();
        assert!((indep - 1.0 / (2.0 * PI)).abs() < 1e-12);
        let same = bivariate_expectation(r, r, Cov2::new(1.0, 1.0, 1.0), &rule()).unwrap();
        assert!((same - 0.5).abs() < 1e-12);
    }

    #[test]
    fn non_psd_block_is_rejected() {
        let id = |x: f64| x;
        let e = bivariate_expectation(
            Integrand::smooth(&id),
            Integrand::smooth(&id),
            Cov2::new(1.0, 1.0, 1.5),
            &rule(),
        );
        assert!(matches!(e, Err(Error::NonPsdCovariance { .. })));
    }

    #[test]
    fn non_psd_gram_names_the_pair() {
        let bad = GramMatrix::raw(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]));
        let err = sigma_next(&bad, &ActivationSpec::tanh(), &rule()).unwrap_err();
        assert_eq!(
            err,
            Error::NonPsdCovariance {
                pair: Some((0, 1)),
                a: 1.0,
                b: 1.0,
                c: 2.0
            }
        );
    }

    #[test]
    fn zero_variance_collapses() {
        let r = Integrand::new(&relu, &[0.0]);
        let v = bivariate_expectation(r, r, Cov2::new(0.0, 2.0, 0.0), &rule()).unwrap();
        assert_eq!(v, 0.0);
        let one = |_: f64| 1.0;
        let v = bivariate_expectation(
            Integrand::smooth(&one),
            r,
            Cov2::new(0.0, 4.0, 0.0),
            &rule(),
        )
        .unwrap();
        assert!((v - 2.0 / (2.0 * PI).sqrt()).abs() < 1e-13);
    }

    fn two_points() -> PointSet {
        PointSet::new(vec![vec![1.0, 0.0, 0.0], vec![0.6, 0.8, 0.0]])
            .unwrap()
            .sphere_normalised()
            .unwrap()
    }

    #[test]
    fn depth_one_is_input_gram() {
        let pts = two_points();
        let ks = kernel_stack(&pts, 1, &ActivationSpec::relu(), &rule()).unwrap();
        assert_eq!(ks.sigma.len(), 1);
        assert_eq!(ks.theta[0], ks.sigma[0]);
        assert!((ks.sigma[0].get(0, 1) - 0.6).abs() < 1e-15);
        assert!((ks.sigma[0].get(0, 0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn relu_second_layer_diagonal() {
        let pts = two_points();
        let act = ActivationSpec::relu()
            .with_kernel_mode(KernelMode::Quadrature)
            .unwrap();
        let ks = kernel_stack(&pts, 2, &act, &rule()).unwrap();
        assert!((ks.sigma[1].get(0, 0) - 0.5).abs() < 1e-12);
        assert!((ks.theta[1].get(0, 0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn identity_recursion_is_additive() {
        let pts = two_points();
        let ks = kernel_stack(&pts, 3, &ActivationSpec::identity(), &rule()).unwrap();
        for l in 1..3 {
            assert_eq!(ks.sigma[l], ks.sigma[l - 1]);
            let expect = &ks.sigma[l].values + &ks.theta[l - 1].values;
            assert!((&ks.theta[l].values - expect).amax() < 1e-15);
        }
    }

    #[test]
    fn relu_quadrature_matches_arc_cosine() {
        let pts = two_points();
        let q = ActivationSpec::relu()
            .with_kernel_mode(KernelMode::Quadrature)
            .unwrap();
        let a = kernel_stack(&pts, 3, &ActivationSpec::relu(), &rule()).unwrap();
        let b = kernel_stack(&pts, 3, &q, &rule()).unwrap();
        for l in 0..3 {
            assert!((&a.sigma[l].values - &b.sigma[l].values).amax() < 1e-6);
            assert!((&a.theta[l].values - &b.theta[l].values).amax() < 1e-6);
        }
    }

    #[test]
    fn gram_validation_flags_indefinite() {
        let g = GramMatrix::raw(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]));
        assert!(g.validate().is_err());
        let g = GramMatrix::raw(DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]));
        assert!(g.validate().is_ok());
    }

    #[test]
    fn point_set_validation() {
        assert!(PointSet::new(vec![]).is_err());
        assert!(PointSet::new(vec![vec![1.0], vec![1.0, 2.0]]).is_err());
        let p = PointSet::new(vec![vec![3.0, 4.0]])
            .unwrap()
            .sphere_normalised()
            .unwrap();
        assert!(p.lies_on_sphere());
        assert!(PointSet::new(vec![vec![3.0, 4.0]])
            .unwrap()
            .assert_on_sphere()
            .is_err());
    }
}
