//! The scaled gradient operator `M = R * grad` (with `R = Q^(1/2)` diagonal)
//! acting on cylindrical functions, the logarithmic-derivative functions
//! that make integration by parts hold for the product law, candidate
//! adjoint-divergence formulas for the sphere and hyperplane fields, and the
//! Monte Carlo residual validators that certify them.
//!
//! The adjoint convention is `int <M phi, F> dnu = int phi * div_F dnu`,
//! where `div_F` denotes the adjoint image of `F` (the measure-weighted
//! negative divergence).

use crate::measure::{mc_mean, moment_coefficient, McEstimate, ProductLaw, SampleBatch};
use crate::rng::stream_rng;
use crate::{Error, Result};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// `|x|^(2m-2) * x`, the odd power entering drifts and log-derivatives.
#[inline]
pub fn odd_power(x: f64, m: u32) -> f64 {
    x * (x * x).powi(m as i32 - 1)
}

/// Shared precomputed data for operator evaluations against one product law.
#[derive(Debug, Clone)]
pub struct OperatorContext {
    plaw: ProductLaw,
    /// Diagonal of `R = Q^(1/2)`: `sqrt(b_{m,1}) * mu_h^(1/(2m))`.
    r_diag: Vec<f64>,
    /// Diagonal of `Q`: `b_{m,1} * mu_h^(1/m)`.
    q_diag: Vec<f64>,
    /// Coefficients of the white-noise sum: `sqrt(b_{m,1}) * mu_h^(1/(2m)-1)`.
    wn_coeff: Vec<f64>,
}

impl OperatorContext {
    pub fn new(plaw: ProductLaw) -> Self {
        let q_diag = plaw.covariance_diag();
        let r_diag: Vec<f64> = q_diag.iter().map(|&q| q.sqrt()).collect();
        let b1 = moment_coefficient(plaw.m(), 1.0).sqrt();
        let m = plaw.m() as f64;
        let wn_coeff = plaw.weights().iter().map(|&mu| b1 * mu.powf(0.5 / m - 1.0)).collect();
        Self { plaw, r_diag, q_diag, wn_coeff }
    }

    pub fn plaw(&self) -> &ProductLaw {
        &self.plaw
    }

    pub fn dim(&self) -> usize {
        self.plaw.dim()
    }

    pub fn m(&self) -> u32 {
        self.plaw.m()
    }

    pub fn r_diag(&self) -> &[f64] {
        &self.r_diag
    }

    pub fn q_diag(&self) -> &[f64] {
        &self.q_diag
    }

    /// `M phi (x) = (r_h * d_h phi(x))_h`.
    pub fn apply_m(&self, phi: &CylFunction, x: &[f64]) -> Result<Vec<f64>> {
        if phi.dim != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: phi.dim });
        }
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: x.len() });
        }
        let mut g = vec![0.0; self.dim()];
        phi.grad(x, &mut g);
        for (gh, &rh) in g.iter_mut().zip(&self.r_diag) {
            *gh *= rh;
        }
        Ok(g)
    }

    /// Alloc-free variant of [`Self::apply_m`]; `out` must have length `dim`.
    #[inline]
    pub fn apply_m_into(&self, phi: &CylFunction, x: &[f64], out: &mut [f64]) {
        phi.grad(x, out);
        for (gh, &rh) in out.iter_mut().zip(&self.r_diag) {
            *gh *= rh;
        }
    }

    /// The direction-`z` integration-by-parts weight
    /// `W_z(x) = sqrt(b_{m,1}) * sum_h mu_h^(1/(2m)-1) |x_h|^(2m-2) x_h z_h`.
    pub fn white_noise(&self, z: &[f64], x: &[f64]) -> f64 {
        let m = self.m();
        let mut acc = 0.0;
        for h in 0..self.dim() {
            if z[h] != 0.0 {
                acc += self.wn_coeff[h] * odd_power(x[h], m) * z[h];
            }
        }
        acc
    }

    /// Per-coordinate logarithmic derivative `(1/mu_h) |x|^(2m-2) x`;
    /// the white-noise sum is `sum_h z_h r_h log_deriv_h(x_h)`.
    #[inline]
    pub fn log_derivative(&self, h: usize, xh: f64) -> f64 {
        odd_power(xh, self.m()) / self.plaw.weights()[h]
    }

    /// Diffusion generator on cylindrical functions:
    /// `L phi = 1/2 sum d2_h phi - sum (1/(2 mu_h)) |x_h|^(2m-2) x_h d_h phi`.
    pub fn generator_apply(&self, phi: &CylFunction, x: &[f64]) -> Result<f64> {
        if phi.hess_diag.is_none() {
            return Err(Error::MissingHessian);
        }
        let dim = self.dim();
        if phi.dim != dim || x.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: phi.dim.max(x.len()) });
        }
        let mut g = vec![0.0; dim];
        let mut hd = vec![0.0; dim];
        phi.grad(x, &mut g);
        phi.hess_diag(x, &mut hd)?;
        let mut acc = 0.0;
        for h in 0..dim {
            acc += 0.5 * hd[h] - 0.5 * self.log_derivative(h, x[h]) * g[h];
        }
        Ok(acc)
    }
}

/// A cylindrical test function with analytic value and gradient maps, and an
/// optional diagonal Hessian for generator work.
#[derive(Clone)]
pub struct CylFunction {
    dim: usize,
    id: String,
    bounded: bool,
    value: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
    grad: Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>,
    hess_diag: Option<Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>>,
}

impl std::fmt::Debug for CylFunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CylFunction")
            .field("dim", &self.dim)
            .field("id", &self.id)
            .field("bounded", &self.bounded)
            .finish()
    }
}

impl CylFunction {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn bounded(&self) -> bool {
        self.bounded
    }

    #[inline]
    pub fn value(&self, x: &[f64]) -> f64 {
        (self.value)(x)
    }

    #[inline]
    pub fn grad(&self, x: &[f64], out: &mut [f64]) {
        (self.grad)(x, out)
    }

    pub fn has_hess_diag(&self) -> bool {
        self.hess_diag.is_some()
    }

    pub fn hess_diag(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        match &self.hess_diag {
            Some(h) => {
                h(x, out);
                Ok(())
            }
            None => Err(Error::MissingHessian),
        }
    }

    /// Constant function.
    pub fn constant(dim: usize, c: f64) -> Self {
        Self {
            dim,
            id: format!("const({c})"),
            bounded: true,
            value: Arc::new(move |_| c),
            grad: Arc::new(|_, out| out.fill(0.0)),
            hess_diag: Some(Arc::new(|_, out| out.fill(0.0))),
        }
    }

    /// The coordinate map `x -> x_h`.
    pub fn coordinate(dim: usize, h: usize) -> Self {
        assert!(h < dim);
        Self {
            dim,
            id: format!("x{}", h + 1),
            bounded: false,
            value: Arc::new(move |x| x[h]),
            grad: Arc::new(move |_, out| {
                out.fill(0.0);
                out[h] = 1.0;
            }),
            hess_diag: Some(Arc::new(|_, out| out.fill(0.0))),
        }
    }

    /// The linear form `x -> <a, x>`.
    pub fn linear_form(a: Vec<f64>, id: &str) -> Self {
        let dim = a.len();
        let a1 = a.clone();
        Self {
            dim,
            id: id.to_string(),
            bounded: false,
            value: Arc::new(move |x| dot(&a1, x)),
            grad: Arc::new(move |_, out| out.copy_from_slice(&a)),
            hess_diag: Some(Arc::new(|_, out| out.fill(0.0))),
        }
    }

    /// `x -> x_h^2`.
    pub fn coordinate_square(dim: usize, h: usize) -> Self {
        assert!(h < dim);
        Self {
            dim,
            id: format!("x{}^2", h + 1),
            bounded: false,
            value: Arc::new(move |x| x[h] * x[h]),
            grad: Arc::new(move |x, out| {
                out.fill(0.0);
                out[h] = 2.0 * x[h];
            }),
            hess_diag: Some(Arc::new(move |_, out| {
                out.fill(0.0);
                out[h] = 2.0;
            })),
        }
    }

    /// `x -> cos(<a, x>)`.
    pub fn cos_linear(a: Vec<f64>, id: &str) -> Self {
        let dim = a.len();
        let a1 = a.clone();
        let a2 = a.clone();
        Self {
            dim,
            id: id.to_string(),
            bounded: true,
            value: Arc::new(move |x| dot(&a1, x).cos()),
            grad: Arc::new(move |x, out| {
                let s = dot(&a2, x).sin();
                for (o, &ah) in out.iter_mut().zip(&a2) {
                    *o = -ah * s;
                }
            }),
            hess_diag: Some(Arc::new(move |x, out| {
                let c = dot(&a, x).cos();
                for (o, &ah) in out.iter_mut().zip(&a) {
                    *o = -ah * ah * c;
                }
            })),
        }
    }

    /// `x -> sin(<a, x>)`.
    pub fn sin_linear(a: Vec<f64>, id: &str) -> Self {
        let dim = a.len();
        let a1 = a.clone();
        let a2 = a.clone();
        Self {
            dim,
            id: id.to_string(),
            bounded: true,
            value: Arc::new(move |x| dot(&a1, x).sin()),
            grad: Arc::new(move |x, out| {
                let c = dot(&a2, x).cos();
                for (o, &ah) in out.iter_mut().zip(&a2) {
                    *o = ah * c;
                }
            }),
            hess_diag: Some(Arc::new(move |x, out| {
                let s = dot(&a, x).sin();
                for (o, &ah) in out.iter_mut().zip(&a) {
                    *o = -ah * ah * s;
                }
            })),
        }
    }

    /// Smooth bounded truncation of the squared norm:
    /// `x -> c^2 (1 - exp(-|x|^2 / c^2))`.
    pub fn smooth_norm_sq(dim: usize, c: f64) -> Self {
        let c2 = c * c;
        Self {
            dim,
            id: format!("smooth|x|^2(c={c})"),
            bounded: true,
            value: Arc::new(move |x| c2 * (1.0 - (-norm_sq(x) / c2).exp())),
            grad: Arc::new(move |x, out| {
                let e = (-norm_sq(x) / c2).exp();
                for (o, &xh) in out.iter_mut().zip(x) {
                    *o = 2.0 * xh * e;
                }
            }),
            hess_diag: Some(Arc::new(move |x, out| {
                let e = (-norm_sq(x) / c2).exp();
                for (o, &xh) in out.iter_mut().zip(x) {
                    *o = (2.0 - 4.0 * xh * xh / c2) * e;
                }
            })),
        }
    }

    /// Pointwise product of two functions on the same space.
    pub fn product(f: &CylFunction, g: &CylFunction) -> Self {
        assert_eq!(f.dim, g.dim);
        let dim = f.dim;
        let (fv, gv) = (f.clone(), g.clone());
        let (fg, gg) = (f.clone(), g.clone());
        let hess = match (&f.hess_diag, &g.hess_diag) {
            (Some(_), Some(_)) => {
                let (fh, gh) = (f.clone(), g.clone());
                Some(Arc::new(move |x: &[f64], out: &mut [f64]| {
                    let mut gf = vec![0.0; fh.dim];
                    let mut gg_ = vec![0.0; fh.dim];
                    let mut hf = vec![0.0; fh.dim];
                    let mut hg = vec![0.0; fh.dim];
                    fh.grad(x, &mut gf);
                    gh.grad(x, &mut gg_);
                    fh.hess_diag(x, &mut hf).unwrap();
                    gh.hess_diag(x, &mut hg).unwrap();
                    let (a, b) = (fh.value(x), gh.value(x));
                    for h in 0..fh.dim {
                        out[h] = hf[h] * b + 2.0 * gf[h] * gg_[h] + a * hg[h];
                    }
                }) as Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>)
            }
            _ => None,
        };
        Self {
            dim,
            id: format!("{}*{}", f.id, g.id),
            bounded: f.bounded && g.bounded,
            value: Arc::new(move |x| fv.value(x) * gv.value(x)),
            grad: Arc::new(move |x, out| {
                let mut tmp = vec![0.0; dim];
                fg.grad(x, out);
                gg.grad(x, &mut tmp);
                let (a, b) = (fg.value(x), gg.value(x));
                for h in 0..dim {
                    out[h] = out[h] * b + a * tmp[h];
                }
            }),
            hess_diag: hess,
        }
    }

    /// Linear combination `a*f + b*g`.
    pub fn linear_comb(a: f64, f: &CylFunction, b: f64, g: &CylFunction) -> Self {
        assert_eq!(f.dim, g.dim);
        let dim = f.dim;
        let (fv, gv) = (f.clone(), g.clone());
        let (fg, gg) = (f.clone(), g.clone());
        Self {
            dim,
            id: format!("{a}*{}+{b}*{}", f.id, g.id),
            bounded: f.bounded && g.bounded,
            value: Arc::new(move |x| a * fv.value(x) + b * gv.value(x)),
            grad: Arc::new(move |x, out| {
                let mut tmp = vec![0.0; dim];
                fg.grad(x, out);
                gg.grad(x, &mut tmp);
                for h in 0..dim {
                    out[h] = a * out[h] + b * tmp[h];
                }
            }),
            hess_diag: None,
        }
    }

    /// Composition with a scalar C^1 function given by `(h, h')`.
    pub fn compose_smooth<H, Hp>(h: H, hp: Hp, inner: &CylFunction, id: &str) -> Self
    where
        H: Fn(f64) -> f64 + Send + Sync + 'static,
        Hp: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        let dim = inner.dim;
        let (iv, ig) = (inner.clone(), inner.clone());
        let hp = Arc::new(hp);
        let hpg = hp.clone();
        Self {
            dim,
            id: id.to_string(),
            bounded: true,
            value: Arc::new(move |x| h(iv.value(x))),
            grad: Arc::new(move |x, out| {
                ig.grad(x, out);
                let d = hpg(ig.value(x));
                for o in out.iter_mut() {
                    *o *= d;
                }
            }),
            hess_diag: None,
        }
    }

    /// Composition with the ramp `r -> clamp(r - alpha, 0, beta - alpha)`
    /// (derivative is the indicator of `[alpha, beta]`, defined off kinks).
    pub fn ramp_compose(alpha: f64, beta: f64, inner: &CylFunction) -> Self {
        assert!(alpha < beta);
        let dim = inner.dim;
        let (iv, ig) = (inner.clone(), inner.clone());
        Self {
            dim,
            id: format!("ramp[{alpha},{beta}]({})", inner.id),
            bounded: true,
            value: Arc::new(move |x| (iv.value(x) - alpha).clamp(0.0, beta - alpha)),
            grad: Arc::new(move |x, out| {
                ig.grad(x, out);
                let v = ig.value(x);
                let ind = if (alpha..=beta).contains(&v) { 1.0 } else { 0.0 };
                for o in out.iter_mut() {
                    *o *= ind;
                }
            }),
            hess_diag: None,
        }
    }

    /// Positive part `phi_+` (gradient defined off the zero level set).
    pub fn positive_part(inner: &CylFunction) -> Self {
        let dim = inner.dim;
        let (iv, ig) = (inner.clone(), inner.clone());
        Self {
            dim,
            id: format!("({})+", inner.id),
            bounded: inner.bounded,
            value: Arc::new(move |x| iv.value(x).max(0.0)),
            grad: Arc::new(move |x, out| {
                ig.grad(x, out);
                let ind = if ig.value(x) > 0.0 { 1.0 } else { 0.0 };
                for o in out.iter_mut() {
                    *o *= ind;
                }
            }),
            hess_diag: None,
        }
    }

    /// Largest mixed absolute/relative deviation between the analytic
    /// gradient and centered finite differences over random probe points.
    pub fn gradient_probe_error(&self, n_probes: usize, seed: u64) -> f64 {
        let mut rng = stream_rng(seed, 0);
        let mut worst: f64 = 0.0;
        let mut x = vec![0.0; self.dim];
        let mut g = vec![0.0; self.dim];
        for _ in 0..n_probes {
            for xh in x.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *xh = 1.5 * z;
            }
            self.grad(&x, &mut g);
            for h in 0..self.dim {
                let step = 1e-5 * (1.0 + x[h].abs());
                let orig = x[h];
                x[h] = orig + step;
                let fp = self.value(&x);
                x[h] = orig - step;
                let fm = self.value(&x);
                x[h] = orig;
                let fd = (fp - fm) / (2.0 * step);
                worst = worst.max((fd - g[h]).abs() / (1.0 + g[h].abs()));
            }
        }
        worst
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn norm_sq(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

/// Which assembly of the quadratic term enters the sphere-field divergence.
///
/// The two candidate readings differ in the numerator of the second term:
/// `|Qx|^2` (the per-coordinate sum `sum_h q_h^2 x_h^2`) versus `|Q^2 x|^2`
/// (`sum_h q_h^4 x_h^2`). The adjoint oracle selects the consistent one; it
/// is [`DivVariant::QxNorm`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DivVariant {
    QxNorm,
    Q2xNorm,
}

/// A vector field together with an optional claimed adjoint-divergence
/// formula, to be certified by [`divergence_residual`].
#[derive(Clone)]
pub struct VectorFieldRepr {
    dim: usize,
    id: String,
    singular_at_origin: bool,
    eval: Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>,
    candidate_div: Option<Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>>,
}

impl std::fmt::Debug for VectorFieldRepr {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("VectorFieldRepr")
            .field("dim", &self.dim)
            .field("id", &self.id)
            .field("has_div", &self.candidate_div.is_some())
            .finish()
    }
}

impl VectorFieldRepr {
    pub fn new<E>(dim: usize, id: &str, eval: E) -> Self
    where
        E: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    {
        Self {
            dim,
            id: id.to_string(),
            singular_at_origin: false,
            eval: Arc::new(eval),
            candidate_div: None,
        }
    }

    pub fn with_divergence<D>(mut self, div: D) -> Self
    where
        D: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        self.candidate_div = Some(Arc::new(div));
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn has_divergence(&self) -> bool {
        self.candidate_div.is_some()
    }

    /// Component values at `x`, written into `out`. Sampled points are almost
    /// surely away from the singular set; use [`Self::evaluate`] to get the
    /// guarded version for hand-picked probes.
    #[inline]
    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        (self.eval)(x, out)
    }

    /// Guarded evaluation, rejecting degenerate probe points.
    pub fn evaluate(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: x.len() });
        }
        if self.singular_at_origin && norm_sq(x) < 1e-300 {
            return Err(Error::SingularPoint);
        }
        let mut out = vec![0.0; self.dim];
        self.eval_into(x, &mut out);
        Ok(out)
    }

    /// Claimed divergence at `x`.
    #[inline]
    pub fn divergence(&self, x: &[f64]) -> Result<f64> {
        match &self.candidate_div {
            Some(d) => Ok(d(x)),
            None => Err(Error::MissingDivergence),
        }
    }

    #[inline]
    pub fn divergence_unchecked(&self, x: &[f64]) -> f64 {
        self.candidate_div.as_ref().expect("divergence formula present")(x)
    }

    /// The field `-F`, carrying the negated divergence when present.
    pub fn negated(&self) -> Self {
        let eval = self.eval.clone();
        let div = self.candidate_div.clone();
        Self {
            dim: self.dim,
            id: format!("-{}", self.id),
            singular_at_origin: self.singular_at_origin,
            eval: Arc::new(move |x, out| {
                eval(x, out);
                for o in out.iter_mut() {
                    *o = -*o;
                }
            }),
            candidate_div: div.map(|d| {
                Arc::new(move |x: &[f64]| -d(x)) as Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>
            }),
        }
    }

    /// Constant field `x -> z`, whose divergence is the white-noise function.
    pub fn constant_field(ctx: &OperatorContext, z: Vec<f64>, id: &str) -> Self {
        let ctx2 = ctx.clone();
        let z2 = z.clone();
        let zc = z.clone();
        Self {
            dim: z.len(),
            id: id.to_string(),
            singular_at_origin: false,
            eval: Arc::new(move |_x, out| out.copy_from_slice(&zc)),
            candidate_div: Some(Arc::new(move |x| ctx2.white_noise(&z2, x))),
        }
    }
}

/// The inverse-gradient field of the squared norm:
/// `Psi(x) = R x / (2 |Rx|^2)`, with the divergence candidate selected by
/// `variant`:
///
/// `div(x) = (-Tr Q + 2 S(x)) / (2 |Rx|^2) ... ` — concretely
/// `0.5 * (-Tr Q / s + 2 * S / s^2) + (b_{m,1} / (2 s)) * sum_h mu_h^(1/m - 1) x_h^(2m)`
/// with `s = |Rx|^2` and `S = sum q_h^2 x_h^2` (QxNorm) or
/// `S = sum q_h^4 x_h^2` (Q2xNorm).
pub fn sphere_field(ctx: &OperatorContext, variant: DivVariant) -> VectorFieldRepr {
    let dim = ctx.dim();
    let r = ctx.r_diag.clone();
    let q = ctx.q_diag.clone();
    let trace_q: f64 = q.iter().sum();
    let m = ctx.m();
    let b1 = moment_coefficient(m, 1.0);
    // mu_h^(1/m - 1)
    let mu_pow: Vec<f64> =
        ctx.plaw.weights().iter().map(|&mu| mu.powf(1.0 / m as f64 - 1.0)).collect();
    let quad_coeff: Vec<f64> = match variant {
        DivVariant::QxNorm => q.iter().map(|&qh| qh * qh).collect(),
        DivVariant::Q2xNorm => q.iter().map(|&qh| qh.powi(4)).collect(),
    };
    let r_eval = r.clone();
    let q_eval = q.clone();
    let mut field = VectorFieldRepr::new(dim, &format!("sphere_inverse({variant:?})"), move |x, out| {
        let s = weighted_norm_sq(&q_eval, x);
        let inv = 0.5 / s;
        for h in 0..x.len() {
            out[h] = r_eval[h] * x[h] * inv;
        }
    });
    field.singular_at_origin = true;
    field.candidate_div = Some(Arc::new(move |x: &[f64]| {
        let s = weighted_norm_sq(&q, x);
        let quad = weighted_norm_sq(&quad_coeff, x);
        let mut tail = 0.0;
        for h in 0..x.len() {
            tail += mu_pow[h] * (x[h] * x[h]).powi(m as i32);
        }
        0.5 * (-trace_q / s + 2.0 * quad / (s * s)) + 0.5 * b1 * tail / s
    }));
    field
}

/// Constant field `Psi = R b / |Rb|^2` attached to the level function
/// `g(x) = <x, b>`; its divergence is `W_{Rb} / |Rb|^2`.
pub fn hyperplane_field(ctx: &OperatorContext, b: &[f64]) -> Result<VectorFieldRepr> {
    if b.len() != ctx.dim() {
        return Err(Error::DimensionMismatch { expected: ctx.dim(), got: b.len() });
    }
    let rb: Vec<f64> = b.iter().zip(&ctx.r_diag).map(|(&bh, &rh)| rh * bh).collect();
    let nsq = norm_sq(&rb);
    if nsq == 0.0 {
        return Err(Error::DegenerateLevelFunction);
    }
    let psi: Vec<f64> = rb.iter().map(|&v| v / nsq).collect();
    let ctx2 = ctx.clone();
    let psi_c = psi.clone();
    Ok(VectorFieldRepr::new(ctx.dim(), "hyperplane_inverse", move |_x, out| {
        out.copy_from_slice(&psi_c)
    })
    .with_divergence(move |x| ctx2.white_noise(&rb, x) / nsq))
}

#[inline]
fn weighted_norm_sq(w: &[f64], x: &[f64]) -> f64 {
    w.iter().zip(x).map(|(&wh, &xh)| wh * xh * xh).sum()
}

/// Monte Carlo estimate of `int <M phi, z> dnu - int W_z phi dnu`;
/// zero in expectation.
pub fn ibp_residual(
    ctx: &OperatorContext,
    phi: &CylFunction,
    z: &[f64],
    batch: &SampleBatch,
) -> Result<McEstimate> {
    check_batch(ctx, batch)?;
    if phi.dim() != ctx.dim() || z.len() != ctx.dim() {
        return Err(Error::DimensionMismatch { expected: ctx.dim(), got: phi.dim() });
    }
    let dim = ctx.dim();
    Ok(mc_mean(batch, |x| {
        let mut g = vec![0.0; dim];
        ctx.apply_m_into(phi, x, &mut g);
        dot(&g, z) - ctx.white_noise(z, x) * phi.value(x)
    }))
}

/// Monte Carlo estimate of `int <M phi, F> dnu - int phi * div_F dnu`.
pub fn divergence_residual(
    ctx: &OperatorContext,
    field: &VectorFieldRepr,
    phi: &CylFunction,
    batch: &SampleBatch,
) -> Result<McEstimate> {
    check_batch(ctx, batch)?;
    if !field.has_divergence() {
        return Err(Error::MissingDivergence);
    }
    if field.dim() != ctx.dim() || phi.dim() != ctx.dim() {
        return Err(Error::DimensionMismatch { expected: ctx.dim(), got: field.dim() });
    }
    let dim = ctx.dim();
    Ok(mc_mean(batch, |x| {
        let mut g = vec![0.0; dim];
        let mut fv = vec![0.0; dim];
        ctx.apply_m_into(phi, x, &mut g);
        field.eval_into(x, &mut fv);
        dot(&g, &fv) - phi.value(x) * field.divergence_unchecked(x)
    }))
}

/// Monte Carlo estimate of `int div_F dnu`; zero in expectation for any
/// certified field (integrable divergence).
pub fn divergence_mean(field: &VectorFieldRepr, batch: &SampleBatch) -> Result<McEstimate> {
    if !field.has_divergence() {
        return Err(Error::MissingDivergence);
    }
    Ok(mc_mean(batch, |x| field.divergence_unchecked(x)))
}

/// Monte Carlo estimate of `int L phi dnu`; zero in expectation because the
/// product law is invariant for the generator.
pub fn generator_mean(
    ctx: &OperatorContext,
    phi: &CylFunction,
    batch: &SampleBatch,
) -> Result<McEstimate> {
    check_batch(ctx, batch)?;
    if !phi.has_hess_diag() {
        return Err(Error::MissingHessian);
    }
    Ok(mc_mean(batch, |x| ctx.generator_apply(phi, x).expect("validated inputs")))
}

fn check_batch(ctx: &OperatorContext, batch: &SampleBatch) -> Result<()> {
    if batch.dim() != ctx.dim() {
        return Err(Error::DimensionMismatch { expected: ctx.dim(), got: batch.dim() });
    }
    Ok(())
}

/// The standard test-function battery: constants, coordinates, waves of
/// random linear forms, products thereof, and a smooth truncation of the
/// squared norm. Deterministic given the seed.
pub fn phi_battery(dim: usize, seed: u64) -> Vec<CylFunction> {
    let mut rng = stream_rng(seed, 0);
    let mut random_form = |scale: f64| -> Vec<f64> {
        (0..dim)
            .map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                scale * z / (dim as f64).sqrt()
            })
            .collect()
    };
    let a = random_form(1.0);
    let b = random_form(1.5);
    let c = random_form(0.8);
    let cos_a = CylFunction::cos_linear(a, "cos<a,x>");
    let sin_b = CylFunction::sin_linear(b, "sin<b,x>");
    let cos_c = CylFunction::cos_linear(c, "cos<c,x>");
    vec![
        CylFunction::constant(dim, 1.0),
        CylFunction::coordinate(dim, 0),
        cos_a.clone(),
        sin_b.clone(),
        cos_c.clone(),
        CylFunction::product(&cos_a, &sin_b),
        CylFunction::product(&cos_c, &cos_a),
        CylFunction::smooth_norm_sq(dim, 2.0),
    ]
}

/// Deterministic battery of directions z for integration-by-parts tests.
pub fn z_battery(dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = stream_rng(seed, 1);
    let mut e1 = vec![0.0; dim];
    e1[0] = 1.0;
    let mut last = vec![0.0; dim];
    last[dim - 1] = 1.0;
    let mut random_unit = || -> Vec<f64> {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let n = norm_sq(&v).sqrt();
        for vh in v.iter_mut() {
            *vh /= n;
        }
        v
    };
    vec![e1, last, random_unit(), random_unit()]
}

/// Outcome of certifying one residual identity.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResidualCheck {
    pub operation: String,
    pub phi_id: String,
    pub field_id: String,
    pub estimate: f64,
    pub std_error: f64,
    pub n_samples: usize,
    pub seed: u64,
    pub pass: bool,
}

impl ResidualCheck {
    pub fn from_estimate(
        operation: &str,
        phi_id: &str,
        field_id: &str,
        est: McEstimate,
        se_multiplier: f64,
        se_cap: f64,
    ) -> Self {
        // A residual passes only when it is both statistically zero and
        // informative: the SE itself must stay below the configured cap.
        let pass = est.value.abs() <= se_multiplier * est.std_error && est.std_error <= se_cap;
        Self {
            operation: operation.to_string(),
            phi_id: phi_id.to_string(),
            field_id: field_id.to_string(),
            estimate: est.value,
            std_error: est.std_error,
            n_samples: est.n_samples,
            seed: est.seed,
            pass,
        }
    }
}

/// Run the adjoint-identity battery against a field and report per-test
/// residuals. The field is certified when every residual passes.
pub fn validate_divergence(
    ctx: &OperatorContext,
    field: &VectorFieldRepr,
    batch: &SampleBatch,
    se_multiplier: f64,
    se_cap: f64,
) -> Result<Vec<ResidualCheck>> {
    let battery = phi_battery(ctx.dim(), 2024);
    let mut checks = Vec::with_capacity(battery.len() + 1);
    for phi in &battery {
        let est = divergence_residual(ctx, field, phi, batch)?;
        checks.push(ResidualCheck::from_estimate(
            "adjoint_residual",
            phi.id(),
            field.id(),
            est,
            se_multiplier,
            se_cap,
        ));
    }
    let mean = divergence_mean(field, batch)?;
    checks.push(ResidualCheck::from_estimate(
        "divergence_mean_zero",
        "const(1)",
        field.id(),
        mean,
        se_multiplier,
        se_cap,
    ));
    Ok(checks)
}
