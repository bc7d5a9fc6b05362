//! Deterministic small-dimension oracles.
//!
//! Everything here is quadrature: one-dimensional integration-by-parts
//! identities, planar adjoint-identity checks for the sphere and hyperplane
//! fields, and the finite-dimensional co-area values of the surface density
//! for weighted Gaussian measures. These are the independent side of the
//! cross-checks against the Monte Carlo estimators and share no code path
//! with them.
//!
//! Planar subtlety: at truncation dimension 2 the sphere field
//! `Psi = Rx/(2|Rx|^2)` carries a distributional point mass at the origin.
//! The paired Euclidean field `Qx/(2 x'Qx)` has flux `pi` through every
//! small circle around zero regardless of the (positive diagonal) `Q`, so
//! the adjoint identity reads
//!
//! `int <M phi, Psi> dnu = int phi * div_Psi dnu - pi * rho(0) * phi(0)`,
//!
//! with `rho(0)` the density of the product law at the origin. In dimension
//! three and above the flux vanishes and the atom disappears.

use crate::calculus::{CylFunction, OperatorContext, VectorFieldRepr};
use crate::quad::{gauss_hermite_prob, PanelRule};
use crate::special::gaussian_pdf;
use crate::surface::LevelKind;
use crate::{Error, Result};

/// Quadrature of `f` against a one-dimensional law.
pub fn line_integral<F: FnMut(f64) -> f64>(law: &crate::OneDimLaw, mut f: F) -> f64 {
    let plaw = crate::ProductLaw::new(law.m(), vec![law.mu()]).unwrap();
    let cutoff = plaw.coordinate_cutoffs(80.0)[0];
    let rule = PanelRule::new(24);
    rule.integrate(-cutoff, cutoff, 96, |xi| f(xi) * law.density(xi))
}

/// Both sides of the one-dimensional integration-by-parts identity for
/// scalar test data `(f, f')`:
///
/// `lhs = r int f'(xi) dnu`, `rhs = r int (1/mu) |xi|^(2m-2) xi f(xi) dnu`
///
/// with `r = sqrt(b_{m,1}) mu^(1/(2m))` the operator scale; this is the
/// n = 1 specialization of the whole-space identity with direction z = 1.
pub fn line_ibp_sides<F, G>(m: u32, mu: f64, f: F, df: G) -> (f64, f64)
where
    F: Fn(f64) -> f64,
    G: Fn(f64) -> f64,
{
    let law = crate::OneDimLaw::new(m, mu).unwrap();
    let r = crate::measure::moment_coefficient(m, 1.0).sqrt() * mu.powf(0.5 / m as f64);
    let lhs = r * line_integral(&law, |xi| df(xi));
    let rhs = r * line_integral(&law, |xi| crate::calculus::odd_power(xi, m) / mu * f(xi));
    (lhs, rhs)
}

/// Planar integral of `f` against a two-dimensional product law, in polar
/// coordinates: uniform (trapezoid) rule in the angle, composite
/// Gauss-Legendre in the radius. The angular rule is spectrally accurate
/// for the smooth angular profiles appearing here, and it integrates the
/// zero-mean `1/r^2` angular parts of the singular fields to machine
/// precision, which is what makes the sphere-field integrands tractable.
pub fn polar_integral<F>(
    plaw: &crate::ProductLaw,
    n_theta: usize,
    radial_panels: usize,
    f: F,
) -> f64
where
    F: Fn(&[f64]) -> f64,
{
    assert_eq!(plaw.dim(), 2);
    let cut = plaw.coordinate_cutoffs(80.0);
    let radius = (cut[0] * cut[0] + cut[1] * cut[1]).sqrt();
    let rule = PanelRule::new(16);
    let dtheta = 2.0 * std::f64::consts::PI / n_theta as f64;
    rule.integrate(0.0, radius, radial_panels, |r| {
        let mut acc = 0.0;
        for k in 0..n_theta {
            let th = (k as f64 + 0.5) * dtheta;
            let x = [r * th.cos(), r * th.sin()];
            acc += f(&x) * plaw.density(&x);
        }
        acc * dtheta * r
    })
}

/// Planar integral of `f * density` over the half-plane `<x, b> < r`, in
/// coordinates aligned with `b` so the cutoff is a clean integration limit
/// rather than a discontinuity inside the grid.
pub fn halfspace_integral_2d<F>(
    plaw: &crate::ProductLaw,
    b: &[f64],
    r: f64,
    panels: usize,
    f: F,
) -> f64
where
    F: Fn(&[f64]) -> f64,
{
    assert_eq!(plaw.dim(), 2);
    assert_eq!(b.len(), 2);
    let bnorm = (b[0] * b[0] + b[1] * b[1]).sqrt();
    let (u1, u2) = (b[0] / bnorm, b[1] / bnorm);
    let cut = plaw.coordinate_cutoffs(80.0);
    let radius = (cut[0] * cut[0] + cut[1] * cut[1]).sqrt();
    let tmax = (r / bnorm).min(radius);
    if tmax <= -radius {
        return 0.0;
    }
    let rule = PanelRule::new(12);
    let along = rule.points(-radius, tmax, panels);
    let across = rule.points(-radius, radius, panels);
    let mut acc = 0.0;
    for &(t, wt) in &along {
        for &(s, ws) in &across {
            let x = [t * u1 - s * u2, t * u2 + s * u1];
            acc += wt * ws * f(&x) * plaw.density(&x);
        }
    }
    acc
}

/// Planar integral of `f` against the product law over a Cartesian tensor
/// grid; for integrands that are smooth everywhere.
pub fn cartesian_integral_2d<F>(plaw: &crate::ProductLaw, panels: usize, f: F) -> f64
where
    F: Fn(&[f64]) -> f64,
{
    assert_eq!(plaw.dim(), 2);
    let cut = plaw.coordinate_cutoffs(80.0);
    let rule = PanelRule::new(12);
    let outer = rule.points(-cut[0], cut[0], panels);
    let inner = rule.points(-cut[1], cut[1], panels);
    let mut acc = 0.0;
    for &(x0, w0) in &outer {
        for &(x1, w1) in &inner {
            let x = [x0, x1];
            acc += w0 * w1 * f(&x) * plaw.density(&x);
        }
    }
    acc
}

/// Result of a deterministic adjoint-identity check.
#[derive(Debug, Clone, Copy)]
pub struct AdjointIdentity {
    pub lhs: f64,
    pub rhs: f64,
}

impl AdjointIdentity {
    pub fn gap(&self) -> f64 {
        self.lhs - self.rhs
    }

    pub fn relative_gap(&self) -> f64 {
        self.gap().abs() / self.lhs.abs().max(self.rhs.abs()).max(1e-3)
    }
}

/// Planar quadrature of both sides of
/// `int <M phi, F> dnu = int phi div_F dnu` for a field on a
/// two-dimensional product law. For fields singular at the origin
/// (`atom_at_origin`), the right-hand side receives the
/// `-pi rho(0) phi(0)` correction derived in the module docs.
pub fn planar_adjoint_sides(
    ctx: &OperatorContext,
    field: &VectorFieldRepr,
    phi: &CylFunction,
    atom_at_origin: bool,
) -> Result<AdjointIdentity> {
    if ctx.dim() != 2 {
        return Err(Error::DimensionMismatch { expected: 2, got: ctx.dim() });
    }
    if !field.has_divergence() {
        return Err(Error::MissingDivergence);
    }
    let plaw = ctx.plaw().clone();
    let lhs = polar_integral(&plaw, 512, 64, |x| {
        let mut g = vec![0.0; 2];
        let mut fv = vec![0.0; 2];
        ctx.apply_m_into(phi, x, &mut g);
        field.eval_into(x, &mut fv);
        g[0] * fv[0] + g[1] * fv[1]
    });
    let mut rhs =
        polar_integral(&plaw, 512, 64, |x| phi.value(x) * field.divergence_unchecked(x));
    if atom_at_origin {
        rhs -= std::f64::consts::PI * plaw.density(&[0.0, 0.0]) * phi.value(&[0.0, 0.0]);
    }
    Ok(AdjointIdentity { lhs, rhs })
}

/// The regularized inverse-gradient family `Psi_eps = Rx / (2(|Rx|^2 + eps))`
/// with its exact smooth divergence. The identity holds without any atom
/// for every positive `eps`, and the `eps -> 0` limits of both sides
/// recover the singular-field values.
pub fn sphere_field_regularized(ctx: &OperatorContext, eps: f64) -> VectorFieldRepr {
    assert!(eps > 0.0);
    let r = ctx.r_diag().to_vec();
    let q = ctx.q_diag().to_vec();
    let trace_q: f64 = q.iter().sum();
    let m = ctx.m();
    let b1 = crate::measure::moment_coefficient(m, 1.0);
    let mu_pow: Vec<f64> =
        ctx.plaw().weights().iter().map(|&mu| mu.powf(1.0 / m as f64 - 1.0)).collect();
    let q2: Vec<f64> = q.iter().map(|&v| v * v).collect();
    let qe = q.clone();
    VectorFieldRepr::new(ctx.dim(), &format!("sphere_inverse_eps({eps})"), move |x, out| {
        let s: f64 = qe.iter().zip(x).map(|(&qh, &xh)| qh * xh * xh).sum();
        let inv = 0.5 / (s + eps);
        for h in 0..x.len() {
            out[h] = r[h] * x[h] * inv;
        }
    })
    .with_divergence(move |x| {
        let s: f64 = q.iter().zip(x).map(|(&qh, &xh)| qh * xh * xh).sum::<f64>() + eps;
        let qx2: f64 = q2.iter().zip(x).map(|(&q2h, &xh)| q2h * xh * xh).sum();
        let mut tail = 0.0;
        for h in 0..x.len() {
            tail += mu_pow[h] * (x[h] * x[h]).powi(m as i32);
        }
        -0.5 * trace_q / s + qx2 / (s * s) + 0.5 * b1 * tail / s
    })
}

/// Normalizing constant `int w dgamma` of a weight against the centered
/// Gaussian with the given coordinate variances (dimension 2 or 3), by
/// tensor Gauss-Hermite quadrature.
pub fn gaussian_weight_normalizer<W>(variances: &[f64], w: W) -> f64
where
    W: Fn(&[f64]) -> f64,
{
    let n = variances.len();
    assert!(n == 2 || n == 3);
    let (t, wt) = gauss_hermite_prob(48);
    let sqrt_2pi = (2.0 * std::f64::consts::PI).sqrt();
    let mut acc = 0.0;
    let mut x = vec![0.0; n];
    if n == 2 {
        for (i, &ti) in t.iter().enumerate() {
            for (j, &tj) in t.iter().enumerate() {
                x[0] = ti * variances[0].sqrt();
                x[1] = tj * variances[1].sqrt();
                acc += wt[i] * wt[j] * w(&x);
            }
        }
        acc / sqrt_2pi.powi(2)
    } else {
        for (i, &ti) in t.iter().enumerate() {
            for (j, &tj) in t.iter().enumerate() {
                for (k, &tk) in t.iter().enumerate() {
                    x[0] = ti * variances[0].sqrt();
                    x[1] = tj * variances[1].sqrt();
                    x[2] = tk * variances[2].sqrt();
                    acc += wt[i] * wt[j] * wt[k] * w(&x);
                }
            }
        }
        acc / sqrt_2pi.powi(3)
    }
}

/// Gaussian density with diagonal covariance.
fn gaussian_density(variances: &[f64], x: &[f64]) -> f64 {
    x.iter().zip(variances).map(|(&xh, &vh)| gaussian_pdf(xh, vh)).product()
}

/// Deterministic co-area value of the surface density `q_phi(r)` for the
/// weighted Gaussian measure `w * gamma / Z` in dimension 2 or 3:
///
/// `oracle(r) = (1/Z) int_{g = r} phi w gamma / |grad g| dH^{n-1}`.
///
/// The sphere uses angular quadrature on the level circle/sphere of radius
/// `sqrt(r)`; the hyperplane uses Gauss-Hermite on the affine slice after
/// completing the square of the slice-restricted Gaussian exponent.
pub fn coarea_value<W, P>(
    kind: LevelKind,
    variances: &[f64],
    normalizer: f64,
    w: W,
    phi: P,
    b: Option<&[f64]>,
    r: f64,
) -> Result<f64>
where
    W: Fn(&[f64]) -> f64,
    P: Fn(&[f64]) -> f64,
{
    let n = variances.len();
    if !(n == 2 || n == 3) {
        return Err(Error::InvalidParameter("co-area oracle supports dimensions 2 and 3".into()));
    }
    match kind {
        LevelKind::Sphere => {
            if r <= 0.0 {
                return Ok(0.0);
            }
            let rad = r.sqrt();
            if n == 2 {
                // |grad g| = 2 sqrt(r), dH^1 = sqrt(r) dtheta
                let n_theta = 1024;
                let dtheta = 2.0 * std::f64::consts::PI / n_theta as f64;
                let mut acc = 0.0;
                for k in 0..n_theta {
                    let th = (k as f64 + 0.5) * dtheta;
                    let x = [rad * th.cos(), rad * th.sin()];
                    acc += phi(&x) * w(&x) * gaussian_density(variances, &x);
                }
                Ok(acc * dtheta * 0.5 / normalizer)
            } else {
                // |grad g| = 2 sqrt(r), dH^2 = r dOmega
                let (u, wu) = crate::quad::gauss_legendre(64);
                let n_az = 256;
                let daz = 2.0 * std::f64::consts::PI / n_az as f64;
                let mut acc = 0.0;
                for (i, &ui) in u.iter().enumerate() {
                    let sin_polar = (1.0 - ui * ui).sqrt();
                    for k in 0..n_az {
                        let az = (k as f64 + 0.5) * daz;
                        let x =
                            [rad * sin_polar * az.cos(), rad * sin_polar * az.sin(), rad * ui];
                        acc += wu[i] * daz * phi(&x) * w(&x) * gaussian_density(variances, &x);
                    }
                }
                Ok(acc * rad * 0.5 / normalizer)
            }
        }
        LevelKind::Hyperplane => {
            let b = b.ok_or(Error::DegenerateLevelFunction)?;
            if b.len() != n {
                return Err(Error::DimensionMismatch { expected: n, got: b.len() });
            }
            let bnorm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
            if bnorm == 0.0 {
                return Err(Error::DegenerateLevelFunction);
            }
            // Hyperplane through x0 = r b / |b|^2 spanned by `basis`.
            let x0: Vec<f64> = b.iter().map(|&bh| r * bh / (bnorm * bnorm)).collect();
            let basis = orthonormal_complement(b);
            let k = n - 1;
            // Slice exponent: E(t) = t'At + 2c't + E0, A = U'DU, c = U'D x0,
            // D = diag(1/var).
            let d: Vec<f64> = variances.iter().map(|&v| 1.0 / v).collect();
            let mut a = vec![vec![0.0; k]; k];
            let mut c = vec![0.0; k];
            for i in 0..k {
                for j in 0..k {
                    a[i][j] = (0..n).map(|h| basis[i][h] * d[h] * basis[j][h]).sum();
                }
                c[i] = (0..n).map(|h| basis[i][h] * d[h] * x0[h]).sum();
            }
            let e0: f64 = (0..n).map(|h| x0[h] * d[h] * x0[h]).sum();
            let (l, det_l) = cholesky_small(&a);
            // minimizer t* = -A^{-1} c, E_min = E0 - c' A^{-1} c
            let a_inv_c = solve_small(&a, &c);
            let t_star: Vec<f64> = a_inv_c.iter().map(|v| -v).collect();
            let quad_drop: f64 = c.iter().zip(&a_inv_c).map(|(&ci, &yi)| ci * yi).sum();
            let e_min = e0 - quad_drop;
            let det_cov: f64 = variances.iter().product();
            let prefactor = (2.0 * std::f64::consts::PI).powf(-(n as f64) / 2.0)
                / det_cov.sqrt()
                * (-0.5 * e_min).exp()
                / det_l
                / bnorm
                / normalizer;
            let (tq, wq) = gauss_hermite_prob(48);
            let eval_point = |s: &[f64]| -> Vec<f64> {
                // t = t* + L^{-T} s, x = x0 + sum t_i u_i
                let t = solve_upper_transpose(&l, s);
                let mut x = x0.clone();
                for i in 0..k {
                    for h in 0..n {
                        x[h] += (t_star[i] + t[i]) * basis[i][h];
                    }
                }
                x
            };
            let mut acc = 0.0;
            if k == 1 {
                for (i, &si) in tq.iter().enumerate() {
                    let x = eval_point(&[si]);
                    acc += wq[i] * phi(&x) * w(&x);
                }
            } else {
                for (i, &si) in tq.iter().enumerate() {
                    for (j, &sj) in tq.iter().enumerate() {
                        let x = eval_point(&[si, sj]);
                        acc += wq[i] * wq[j] * phi(&x) * w(&x);
                    }
                }
            }
            Ok(prefactor * acc)
        }
    }
}

/// Orthonormal basis of the orthogonal complement of `b` (n = 2 or 3).
fn orthonormal_complement(b: &[f64]) -> Vec<Vec<f64>> {
    let n = b.len();
    let bnorm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    let unit: Vec<f64> = b.iter().map(|v| v / bnorm).collect();
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for h in 0..n {
        if basis.len() == n - 1 {
            break;
        }
        let mut v = vec![0.0; n];
        v[h] = 1.0;
        let proj: f64 = v.iter().zip(&unit).map(|(a, b)| a * b).sum();
        for (vi, ui) in v.iter_mut().zip(&unit) {
            *vi -= proj * ui;
        }
        for prev in &basis {
            let p: f64 = v.iter().zip(prev.iter()).map(|(a, b)| a * b).sum();
            for (vi, pi) in v.iter_mut().zip(prev.iter()) {
                *vi -= p * pi;
            }
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-10 {
            for vi in v.iter_mut() {
                *vi /= norm;
            }
            basis.push(v);
        }
    }
    assert_eq!(basis.len(), n - 1);
    basis
}

/// Cholesky factor and its determinant for a 1x1 or 2x2 SPD matrix.
fn cholesky_small(a: &[Vec<f64>]) -> (Vec<Vec<f64>>, f64) {
    let k = a.len();
    if k == 1 {
        let l = a[0][0].sqrt();
        (vec![vec![l]], l)
    } else {
        let l11 = a[0][0].sqrt();
        let l21 = a[1][0] / l11;
        let l22 = (a[1][1] - l21 * l21).sqrt();
        (vec![vec![l11, 0.0], vec![l21, l22]], l11 * l22)
    }
}

/// Solve `A y = c` for a 1x1 or 2x2 SPD matrix.
fn solve_small(a: &[Vec<f64>], c: &[f64]) -> Vec<f64> {
    if a.len() == 1 {
        vec![c[0] / a[0][0]]
    } else {
        let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
        vec![(c[0] * a[1][1] - c[1] * a[0][1]) / det, (a[0][0] * c[1] - a[1][0] * c[0]) / det]
    }
}

/// Solve `L' t = s` for the small lower-triangular factor `L`.
fn solve_upper_transpose(l: &[Vec<f64>], s: &[f64]) -> Vec<f64> {
    if l.len() == 1 {
        vec![s[0] / l[0][0]]
    } else {
        // L' = [[l11, l21], [0, l22]]
        let t2 = s[1] / l[1][1];
        let t1 = (s[0] - l[1][0] * t2) / l[0][0];
        vec![t1, t2]
    }
}
