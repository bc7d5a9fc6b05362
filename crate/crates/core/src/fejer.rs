//! Fejér-kernel approximation of smooth bounded functions by trigonometric
//! polynomials with uniform derivative bounds.
//!
//! The pipeline mirrors the constructive argument: periodize a function on
//! the line with a fixed smooth cutoff (norms independent of the period),
//! then take Fejér means. In coefficient space the Fejér mean is the
//! triangular multiplier `c_k -> prod_j max(0, 1 - |k_j|/(N+1)) c_k`, which
//! is exact for band-limited data and never expands the sup norm (the
//! kernel is nonnegative with unit mass).

use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::sync::Arc;

/// Fejér kernel on the period cell `[-T/2, T/2]^n`, evaluated at `y`:
/// product over variables of `(1/(T(N+1))) (sin(pi(N+1)y/T)/sin(pi y/T))^2`,
/// with the removable singularity at `y = 0 (mod T)` filled by `(N+1)/T`.
pub fn fejer_kernel(n_order: usize, period: f64, y: &[f64]) -> f64 {
    let np1 = (n_order + 1) as f64;
    let mut prod = 1.0;
    for &yj in y {
        let s = (std::f64::consts::PI * yj / period).sin();
        let factor = if s.abs() < 1e-12 {
            np1 / period
        } else {
            let t = (std::f64::consts::PI * np1 * yj / period).sin() / s;
            t * t / (np1 * period)
        };
        prod *= factor;
    }
    prod
}

/// A real trigonometric polynomial stored as a conjugate-symmetric
/// coefficient table over integer frequency multi-indices.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrigPolynomial {
    pub n_vars: usize,
    pub period: f64,
    /// Complex coefficients `(re, im)` indexed by frequency vectors.
    pub coeffs: BTreeMap<Vec<i32>, (f64, f64)>,
}

impl TrigPolynomial {
    /// Maximum per-variable degree.
    pub fn degree(&self) -> i32 {
        self.coeffs
            .keys()
            .flat_map(|k| k.iter().map(|v| v.abs()))
            .max()
            .unwrap_or(0)
    }

    pub fn coefficient(&self, k: &[i32]) -> (f64, f64) {
        self.coeffs.get(k).copied().unwrap_or((0.0, 0.0))
    }

    /// Value at `x` (real part of the coefficient sum).
    pub fn eval(&self, x: &[f64]) -> f64 {
        let omega = 2.0 * std::f64::consts::PI / self.period;
        let mut acc = 0.0;
        for (k, &(re, im)) in &self.coeffs {
            let phase: f64 =
                k.iter().zip(x).map(|(&kj, &xj)| kj as f64 * xj).sum::<f64>() * omega;
            acc += re * phase.cos() - im * phase.sin();
        }
        acc
    }

    /// Partial derivative of multi-order `alpha` at `x`.
    pub fn eval_deriv(&self, x: &[f64], alpha: &[u32]) -> f64 {
        let omega = 2.0 * std::f64::consts::PI / self.period;
        let total: u32 = alpha.iter().sum();
        let mut acc = 0.0;
        for (k, &(re, im)) in &self.coeffs {
            let mut mag = 1.0;
            for (kj, &aj) in k.iter().zip(alpha) {
                mag *= (*kj as f64 * omega).powi(aj as i32);
            }
            if mag == 0.0 {
                continue;
            }
            let phase: f64 =
                k.iter().zip(x).map(|(&kj, &xj)| kj as f64 * xj).sum::<f64>() * omega;
            // each derivative multiplies by i k omega; rotate accordingly
            let (c, s) = (phase.cos(), phase.sin());
            let (vr, vi) = match total % 4 {
                0 => (re, im),
                1 => (-im, re),
                2 => (-re, -im),
                _ => (im, -re),
            };
            acc += mag * (vr * c - vi * s);
        }
        acc
    }

    /// Sup norm over a dense uniform grid of the period cell.
    pub fn sup_norm_on_grid(&self, points_per_var: usize) -> f64 {
        assert!(self.n_vars <= 2, "dense grid scan supports 1 or 2 variables");
        let mut worst: f64 = 0.0;
        let step = self.period / points_per_var as f64;
        if self.n_vars == 1 {
            for g in 0..points_per_var {
                worst = worst.max(self.eval(&[g as f64 * step]).abs());
            }
        } else {
            for g1 in 0..points_per_var {
                for g2 in 0..points_per_var {
                    worst = worst.max(self.eval(&[g1 as f64 * step, g2 as f64 * step]).abs());
                }
            }
        }
        worst
    }
}

/// Uniform samples of a periodic function over `[0, T)^n`, row-major.
#[derive(Debug, Clone)]
pub struct GridSamples {
    pub n_vars: usize,
    pub period: f64,
    pub points_per_var: usize,
    pub values: Vec<f64>,
}

impl GridSamples {
    pub fn from_fn<F: Fn(&[f64]) -> f64>(
        n_vars: usize,
        period: f64,
        points_per_var: usize,
        f: F,
    ) -> Self {
        assert!(n_vars >= 1 && n_vars <= 2);
        let step = period / points_per_var as f64;
        let mut values = Vec::with_capacity(points_per_var.pow(n_vars as u32));
        if n_vars == 1 {
            for g in 0..points_per_var {
                values.push(f(&[g as f64 * step]));
            }
        } else {
            for g1 in 0..points_per_var {
                for g2 in 0..points_per_var {
                    values.push(f(&[g1 as f64 * step, g2 as f64 * step]));
                }
            }
        }
        Self { n_vars, period, points_per_var, values }
    }
}

/// Fejér mean of order `N` of the sampled function: discrete Fourier
/// coefficients up to `N` per variable multiplied by the triangular factor
/// `prod_j max(0, 1 - |k_j|/(N+1))`. The grid must resolve the requested
/// frequencies: at least `2N + 2` points per variable.
pub fn fejer_approximate(samples: &GridSamples, n_order: usize) -> Result<TrigPolynomial> {
    let g = samples.points_per_var;
    if g < 2 * n_order + 2 {
        return Err(Error::UnderResolved { got: g, need: 2 * n_order + 2 });
    }
    let np1 = (n_order + 1) as f64;
    let mut coeffs = BTreeMap::new();
    let gf = g as f64;
    let tri = |k: i32| (1.0 - k.abs() as f64 / np1).max(0.0);
    match samples.n_vars {
        1 => {
            for k in -(n_order as i32)..=(n_order as i32) {
                let factor = tri(k);
                if factor == 0.0 {
                    continue;
                }
                let mut re = 0.0;
                let mut im = 0.0;
                for (idx, &v) in samples.values.iter().enumerate() {
                    let phase = -2.0 * std::f64::consts::PI * k as f64 * idx as f64 / gf;
                    re += v * phase.cos();
                    im += v * phase.sin();
                }
                coeffs.insert(vec![k], (factor * re / gf, factor * im / gf));
            }
        }
        2 => {
            for k1 in -(n_order as i32)..=(n_order as i32) {
                for k2 in -(n_order as i32)..=(n_order as i32) {
                    let factor = tri(k1) * tri(k2);
                    if factor == 0.0 {
                        continue;
                    }
                    let mut re = 0.0;
                    let mut im = 0.0;
                    for g1 in 0..g {
                        for g2 in 0..g {
                            let v = samples.values[g1 * g + g2];
                            let phase = -2.0 * std::f64::consts::PI
                                * (k1 as f64 * g1 as f64 + k2 as f64 * g2 as f64)
                                / gf;
                            re += v * phase.cos();
                            im += v * phase.sin();
                        }
                    }
                    let norm = gf * gf;
                    coeffs.insert(vec![k1, k2], (factor * re / norm, factor * im / norm));
                }
            }
        }
        other => {
            return Err(Error::InvalidParameter(format!(
                "fejer approximation supports 1 or 2 variables, got {other}"
            )))
        }
    }
    Ok(TrigPolynomial { n_vars: samples.n_vars, period: samples.period, coeffs })
}

/// A scalar function on the line with analytic derivatives up to order two.
#[derive(Clone)]
pub struct Smooth1D {
    pub id: String,
    pub f: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    pub d1: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    pub d2: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl Smooth1D {
    pub fn new<F, G, H>(id: &str, f: F, d1: G, d2: H) -> Self
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
        G: Fn(f64) -> f64 + Send + Sync + 'static,
        H: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        Self { id: id.to_string(), f: Arc::new(f), d1: Arc::new(d1), d2: Arc::new(d2) }
    }

    /// Sup norms of the derivatives up to order `h` over a scan interval.
    pub fn sup_norms(&self, h: usize, half_width: f64) -> Vec<f64> {
        let mut norms = vec![0.0f64; h + 1];
        let n = 4001;
        for i in 0..n {
            let x = -half_width + 2.0 * half_width * i as f64 / (n - 1) as f64;
            norms[0] = norms[0].max((self.f)(x).abs());
            if h >= 1 {
                norms[1] = norms[1].max((self.d1)(x).abs());
            }
            if h >= 2 {
                norms[2] = norms[2].max((self.d2)(x).abs());
            }
        }
        norms
    }
}

/// Polynomial smoothstep of order `h` on `[0,1]` (degree `2h + 1`), with
/// the first `h` derivatives vanishing at both ends. Returns `(S, S', S'')`.
fn smoothstep(h: usize, u: f64) -> (f64, f64, f64) {
    match h {
        0 => (u, 1.0, 0.0),
        1 => (u * u * (3.0 - 2.0 * u), 6.0 * u * (1.0 - u), 6.0 - 12.0 * u),
        2 => (
            u * u * u * (10.0 - 15.0 * u + 6.0 * u * u),
            30.0 * u * u * (1.0 - u) * (1.0 - u),
            60.0 * u * (1.0 - u) * (1.0 - 2.0 * u),
        ),
        _ => panic!("cutoff orders above 2 are not wired in"),
    }
}

/// Sup norms of the cutoff profile derivatives (independent of the period).
pub fn cutoff_sup_norms(h: usize) -> Vec<f64> {
    // transition has width 1/2, so each derivative picks up a factor 2
    match h {
        0 => vec![1.0],
        1 => vec![1.0, 2.0 * 1.5],
        // max S' = 15/8 at u = 1/2; max |S''| = 10/sqrt(3)
        2 => vec![1.0, 2.0 * 15.0 / 8.0, 4.0 * 10.0 / 3.0f64.sqrt()],
        _ => panic!("cutoff orders above 2 are not wired in"),
    }
}

/// The `k`-periodic extension of `phi * theta_k`, equal to `phi` on the core
/// box `[-(k-1)/2, (k-1)/2]` and zero near the cell boundary; the cutoff
/// `theta_k` is a fixed polynomial spline with transition width 1/2, so its
/// derivative norms do not depend on `k`.
#[derive(Clone)]
pub struct Periodized1D {
    inner: Smooth1D,
    k: u32,
    h: usize,
}

/// Build the periodization; needs `k >= 3` so the core box is nonempty.
pub fn periodize(phi: &Smooth1D, k: u32, h: usize) -> Result<Periodized1D> {
    if k < 3 {
        return Err(Error::InvalidParameter("periodization needs k >= 3".into()));
    }
    if h > 2 {
        return Err(Error::InvalidParameter("derivative orders above 2 are not wired in".into()));
    }
    Ok(Periodized1D { inner: phi.clone(), k, h })
}

impl Periodized1D {
    pub fn period(&self) -> f64 {
        self.k as f64
    }

    /// Half-width of the core box where the periodization equals `phi`.
    pub fn core_half_width(&self) -> f64 {
        (self.k as f64 - 1.0) / 2.0
    }

    fn wrap(&self, x: f64) -> f64 {
        let t = self.period();
        x - t * (x / t).round()
    }

    /// Cutoff profile and its first two derivatives at a cell point.
    fn cutoff(&self, x: f64) -> (f64, f64, f64) {
        let half = self.period() / 2.0;
        let core = self.core_half_width();
        let a = x.abs();
        if a <= core {
            (1.0, 0.0, 0.0)
        } else if a >= half {
            (0.0, 0.0, 0.0)
        } else {
            // u runs 1 -> 0 across the transition band of width 1/2
            let u = (half - a) * 2.0;
            let (s, s1, s2) = smoothstep(self.h, u);
            let sgn = x.signum();
            (s, -2.0 * sgn * s1, 4.0 * s2)
        }
    }

    pub fn value(&self, x: f64) -> f64 {
        let xw = self.wrap(x);
        let (t, _, _) = self.cutoff(xw);
        if t == 0.0 {
            0.0
        } else {
            (self.inner.f)(xw) * t
        }
    }

    pub fn deriv1(&self, x: f64) -> f64 {
        let xw = self.wrap(x);
        let (t, t1, _) = self.cutoff(xw);
        if t == 0.0 && t1 == 0.0 {
            return 0.0;
        }
        (self.inner.d1)(xw) * t + (self.inner.f)(xw) * t1
    }

    pub fn deriv2(&self, x: f64) -> f64 {
        let xw = self.wrap(x);
        let (t, t1, t2) = self.cutoff(xw);
        if t == 0.0 && t1 == 0.0 && t2 == 0.0 {
            return 0.0;
        }
        (self.inner.d2)(xw) * t + 2.0 * (self.inner.d1)(xw) * t1 + (self.inner.f)(xw) * t2
    }
}

/// One row (one period `k`) of the approximation report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ApproxRow {
    pub k: u32,
    pub n_order: usize,
    /// Max error of the trigonometric approximant at interior probes,
    /// per derivative order `0..=h`.
    pub max_errors: Vec<f64>,
    /// Derivative bounds `|D^a phi_k| <= C_a max_{b<=a} |D^b phi|_inf`
    /// hold at every probe, with the constants below.
    pub bounds_hold: bool,
}

/// Report of the periodize-then-approximate construction across periods.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ApproxReport {
    pub h_order: usize,
    /// Leibniz constants from the frozen cutoff profile:
    /// `C_a = sum_b binom(a,b) |theta^(a-b)|_inf`.
    pub bound_constants: Vec<f64>,
    pub rows: Vec<ApproxRow>,
    /// Value errors decrease along the period list and bounds hold.
    pub pass: bool,
}

/// Concrete Leibniz constants of the construction.
pub fn derivative_bound_constants(h: usize) -> Vec<f64> {
    let theta = cutoff_sup_norms(h);
    (0..=h)
        .map(|a| {
            (0..=a).map(|b| binom(a, b) as f64 * theta[a - b]).sum()
        })
        .collect()
}

fn binom(n: usize, k: usize) -> usize {
    (1..=k).fold(1, |acc, i| acc * (n - k + i) / i)
}

/// Run the construction for each period in `k_list`, evaluating errors and
/// derivative bounds at interior probe points. The Fejér order grows like
/// `32 k^2` so that the spectral truncation error keeps shrinking as the
/// window grows.
pub fn approx_report(phi: &Smooth1D, h: usize, k_list: &[u32]) -> Result<ApproxReport> {
    let constants = derivative_bound_constants(h);
    let mut rows = Vec::with_capacity(k_list.len());
    let probes: Vec<f64> = (0..21).map(|i| -1.0 + i as f64 / 10.0).collect();
    let sup = phi.sup_norms(h, 24.0);
    let running_max: Vec<f64> = (0..=h)
        .map(|a| sup[..=a].iter().cloned().fold(0.0, f64::max))
        .collect();
    for &k in k_list {
        let per = periodize(phi, k, h)?;
        let n_order = 32 * (k as usize) * (k as usize);
        let samples =
            GridSamples::from_fn(1, per.period(), 2 * n_order + 2, |x| per.value(x[0]));
        let poly = fejer_approximate(&samples, n_order)?;
        // grid samples live on [0, T); probes are wrapped by periodicity
        let mut max_errors = vec![0.0f64; h + 1];
        let mut bounds_hold = true;
        for &p in &probes {
            let v = poly.eval(&[p]);
            max_errors[0] = max_errors[0].max((v - (phi.f)(p)).abs());
            bounds_hold &= v.abs() <= constants[0] * running_max[0] + 1e-9;
            if h >= 1 {
                let d = poly.eval_deriv(&[p], &[1]);
                max_errors[1] = max_errors[1].max((d - (phi.d1)(p)).abs());
                bounds_hold &= d.abs() <= constants[1] * running_max[1] + 1e-9;
            }
            if h >= 2 {
                let d = poly.eval_deriv(&[p], &[2]);
                max_errors[2] = max_errors[2].max((d - (phi.d2)(p)).abs());
                bounds_hold &= d.abs() <= constants[2] * running_max[2] + 1e-9;
            }
        }
        rows.push(ApproxRow { k, n_order, max_errors, bounds_hold });
    }
    let decreasing = rows.windows(2).all(|w| w[1].max_errors[0] <= w[0].max_errors[0] + 1e-12);
    let pass = decreasing && rows.iter().all(|r| r.bounds_hold);
    Ok(ApproxReport { h_order: h, bound_constants: constants, rows, pass })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad::PanelRule;
    use approx::assert_relative_eq;

    #[test]
    fn kernel_mass_is_one_by_quadrature() {
        for &(n, t) in &[(0usize, 1.0f64), (4, 1.0), (16, 2.5)] {
            let rule = PanelRule::new(12);
            let mass =
                rule.integrate(-t / 2.0, t / 2.0, 8 * (n + 2), |y| fejer_kernel(n, t, &[y]));
            assert!((mass - 1.0).abs() < 1e-10, "n={n} T={t}: {mass}");
        }
        // two variables: product structure squares the mass
        let rule = PanelRule::new(12);
        let n = 6;
        let t = 1.0;
        let inner: f64 =
            rule.integrate(-0.5, 0.5, 8 * (n + 2), |y| fejer_kernel(n, t, &[y]));
        let mut mass_2d = 0.0;
        let pts = rule.points(-0.5, 0.5, 8 * (n + 2));
        for &(y1, w1) in &pts {
            for &(y2, w2) in &pts {
                mass_2d += w1 * w2 * fejer_kernel(n, t, &[y1, y2]);
            }
        }
        assert_relative_eq!(mass_2d, inner * inner, max_relative = 1e-10);
        assert!((mass_2d - 1.0).abs() < 1e-9);
    }

    #[test]
    fn kernel_is_nonnegative_and_order_zero_is_flat() {
        let mut rng = crate::rng::stream_rng(5, 0);
        use rand::Rng;
        for _ in 0..10_000 {
            let y = [rng.gen::<f64>() - 0.5, 1.3 * (rng.gen::<f64>() - 0.5)];
            assert!(fejer_kernel(12, 1.4, &[y[0]]) >= 0.0);
            assert!(fejer_kernel(7, 1.4, &y) >= 0.0);
        }
        for &y in &[-0.4, 0.0, 0.3] {
            assert_relative_eq!(fejer_kernel(0, 2.0, &[y]), 0.5, max_relative = 1e-12);
        }
    }

    #[test]
    fn kernel_singularity_is_removable() {
        let n = 9;
        let t = 2.0;
        let at_zero = fejer_kernel(n, t, &[0.0]);
        let near_zero = fejer_kernel(n, t, &[1e-9]);
        assert_relative_eq!(at_zero, (n as f64 + 1.0) / t, max_relative = 1e-12);
        assert_relative_eq!(at_zero, near_zero, max_relative = 1e-6);
    }

    #[test]
    fn constant_is_reproduced_exactly() {
        for n in [0usize, 3, 17] {
            let samples = GridSamples::from_fn(1, 3.0, 2 * n + 4, |_| 2.5);
            let poly = fejer_approximate(&samples, n).unwrap();
            for &x in &[0.0, 0.7, -1.2] {
                assert_relative_eq!(poly.eval(&[x]), 2.5, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn cosine_picks_up_the_triangular_factor() {
        let t = 2.0;
        for n in [4usize, 32, 128] {
            let samples =
                GridSamples::from_fn(1, t, 2 * n + 2, |x| (2.0 * std::f64::consts::PI * x[0] / t).cos());
            let poly = fejer_approximate(&samples, n).unwrap();
            let expect = 1.0 - 1.0 / (n as f64 + 1.0);
            // coefficient at |k| = 1 is expect/2 on each side
            let (re, im) = poly.coefficient(&[1]);
            assert_relative_eq!(re, expect / 2.0, epsilon = 1e-12);
            assert!(im.abs() < 1e-12);
            let val = poly.eval(&[0.3]);
            let target = expect * (2.0 * std::f64::consts::PI * 0.3 / t).cos();
            assert_relative_eq!(val, target, epsilon = 1e-12);
        }
    }

    #[test]
    fn under_resolved_grid_is_rejected() {
        let samples = GridSamples::from_fn(1, 1.0, 16, |x| x[0].cos());
        assert!(matches!(
            fejer_approximate(&samples, 16),
            Err(Error::UnderResolved { .. })
        ));
    }

    #[test]
    fn fejer_mean_never_expands_sup_norm() {
        let t = 4.0;
        let funcs: Vec<Box<dyn Fn(&[f64]) -> f64>> = vec![
            Box::new(move |x: &[f64]| (2.0 * std::f64::consts::PI * x[0] / t).cos()),
            Box::new(move |x: &[f64]| {
                let w = 2.0 * std::f64::consts::PI * x[0] / t;
                0.3 * w.sin() + 0.7 * (3.0 * w).cos() - 0.2 * (5.0 * w).sin()
            }),
            Box::new(move |x: &[f64]| {
                let w = 2.0 * std::f64::consts::PI * x[0] / t;
                (w.cos() * 2.0).tanh()
            }),
        ];
        for f in funcs {
            let g = 4096;
            let samples = GridSamples::from_fn(1, t, g, &f);
            let sup_f =
                samples.values.iter().cloned().fold(0.0f64, |a, v| a.max(v.abs()));
            for n in [8usize, 32, 128] {
                let poly = fejer_approximate(&samples, n).unwrap();
                let sup_poly = poly.sup_norm_on_grid(2048);
                assert!(
                    sup_poly <= sup_f + 1e-10,
                    "N={n}: {sup_poly} vs {sup_f}"
                );
            }
        }
    }

    #[test]
    fn derivative_evaluation_matches_finite_differences() {
        let t = 5.0;
        let samples = GridSamples::from_fn(1, t, 512, |x| {
            let w = 2.0 * std::f64::consts::PI * x[0] / t;
            w.cos() + 0.5 * (2.0 * w).sin()
        });
        let poly = fejer_approximate(&samples, 20).unwrap();
        for &x in &[0.3, 1.1, -0.8] {
            let h = 1e-6;
            let fd1 = (poly.eval(&[x + h]) - poly.eval(&[x - h])) / (2.0 * h);
            assert_relative_eq!(poly.eval_deriv(&[x], &[1]), fd1, max_relative = 1e-7);
            let fd2 = (poly.eval(&[x + h]) - 2.0 * poly.eval(&[x]) + poly.eval(&[x - h]))
                / (h * h);
            assert!((poly.eval_deriv(&[x], &[2]) - fd2).abs() < 1e-3);
        }
    }

    fn battery_member() -> Smooth1D {
        // scaled so that the slow Cesaro convergence reaches the stated
        // pointwise thresholds at moderate orders
        Smooth1D::new(
            "0.08 cos(x) exp(-x^2)",
            |x| 0.08 * x.cos() * (-x * x).exp(),
            |x| 0.08 * ((-x.sin()) * (-x * x).exp() + x.cos() * (-2.0 * x) * (-x * x).exp()),
            |x| {
                let e = (-x * x).exp();
                0.08 * e * (-x.cos() + 2.0 * x * x.sin() + (4.0 * x * x - 2.0) * x.cos()
                    + 2.0 * x * x.sin())
            },
        )
    }

    #[test]
    fn periodization_core_box_identity_and_constants() {
        let phi = battery_member();
        for k in [3u32, 5, 9] {
            let per = periodize(&phi, k, 2).unwrap();
            for &x in &[-0.9, 0.0, 0.4, per.core_half_width() * 0.99] {
                assert_relative_eq!(per.value(x), (phi.f)(x), max_relative = 1e-14);
                assert_relative_eq!(per.deriv1(x), (phi.d1)(x), max_relative = 1e-14);
            }
            // outside the cell: periodic copy
            assert_relative_eq!(per.value(0.3 + per.period()), per.value(0.3), epsilon = 1e-13);
            // at the boundary: zero
            assert_eq!(per.value(per.period() / 2.0), 0.0);
        }
        let c = Smooth1D::new("const", |_| 2.0, |_| 0.0, |_| 0.0);
        let per = periodize(&c, 5, 2).unwrap();
        assert_eq!(per.value(1.0), 2.0);
        assert_eq!(per.value(2.3), 2.0 * {
            // theta profile between core and boundary
            let (t, _, _) = per.cutoff(2.3);
            t
        });
        assert!(periodize(&c, 2, 2).is_err());
    }

    #[test]
    fn periodization_derivatives_match_finite_differences() {
        let phi = battery_member();
        let per = periodize(&phi, 3, 2).unwrap();
        // probe across the transition band as well
        for &x in &[0.2, 0.9, 1.1, 1.3, 1.45] {
            let h = 1e-6;
            let fd = (per.value(x + h) - per.value(x - h)) / (2.0 * h);
            assert!((per.deriv1(x) - fd).abs() < 1e-6, "x={x}");
            let fd2 = (per.deriv1(x + h) - per.deriv1(x - h)) / (2.0 * h);
            assert!((per.deriv2(x) - fd2).abs() < 1e-5, "x={x}");
        }
    }

    #[test]
    fn derivative_bound_constants_are_the_cutoff_leibniz_sums() {
        let c = derivative_bound_constants(2);
        assert_eq!(c[0], 1.0);
        assert_relative_eq!(c[1], 1.0 + 2.0 * 15.0 / 8.0, max_relative = 1e-13);
        assert_relative_eq!(
            c[2],
            1.0 + 2.0 * (2.0 * 15.0 / 8.0) + 4.0 * 10.0 / 3.0f64.sqrt(),
            max_relative = 1e-13
        );
    }

    #[test]
    fn approx_report_converges_and_bounds_hold() {
        let phi = battery_member();
        let report = approx_report(&phi, 2, &[3, 5, 7]).unwrap();
        assert!(report.pass, "{report:#?}");
        let errs: Vec<f64> = report.rows.iter().map(|r| r.max_errors[0]).collect();
        assert!(errs.windows(2).all(|w| w[1] <= w[0]), "{errs:?}");
        // linear function: exact at interior probes away from the cutoff
        let lin = Smooth1D::new("0.05x", |x| 0.05 * x, |_| 0.05, |_| 0.0);
        let rep = approx_report(&lin, 1, &[9]).unwrap();
        assert!(rep.rows[0].max_errors[0] < 2e-3, "{rep:#?}");
    }
}
