//! Deterministic quadrature rules backing the small-dimension oracles.
//!
//! Everything here is classical: Gauss-Legendre nodes by Newton iteration on
//! the Legendre recurrence, composite panels for finite intervals, and
//! Gauss-Hermite nodes for integrals against exp(-x^2/2). The oracles are the
//! independent side of every cross-check, so no Monte Carlo machinery is
//! allowed to leak in here.

/// Gauss-Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = (n + 1) / 2;
    for i in 0..m {
        // Tricomi initial guess, then Newton on P_n.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = 1.0;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = ((2.0 * jf + 1.0) * x * p2 - jf * p3) / (jf + 1.0);
            }
            pp = n as f64 * (x * p1 - p2) / (x * x - 1.0);
            let dx = p1 / pp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * pp * pp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Fixed-order Gauss-Legendre panel rule on [a, b].
#[derive(Debug, Clone)]
pub struct PanelRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl PanelRule {
    pub fn new(order: usize) -> Self {
        let (nodes, weights) = gauss_legendre(order);
        Self { nodes, weights }
    }

    /// Integrate `f` over [a, b] split into `panels` equal panels.
    pub fn integrate<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, panels: usize, mut f: F) -> f64 {
        assert!(panels >= 1 && b >= a);
        let h = (b - a) / panels as f64;
        let mut total = 0.0;
        for p in 0..panels {
            let lo = a + p as f64 * h;
            let mid = lo + 0.5 * h;
            let mut acc = 0.0;
            for (&t, &w) in self.nodes.iter().zip(&self.weights) {
                acc += w * f(mid + 0.5 * h * t);
            }
            total += acc * 0.5 * h;
        }
        total
    }

    /// Quadrature points of the composite rule on [a, b], in ascending order.
    pub fn points(&self, a: f64, b: f64, panels: usize) -> Vec<(f64, f64)> {
        let h = (b - a) / panels as f64;
        let mut out = Vec::with_capacity(panels * self.nodes.len());
        for p in 0..panels {
            let mid = a + (p as f64 + 0.5) * h;
            for (&t, &w) in self.nodes.iter().zip(&self.weights) {
                out.push((mid + 0.5 * h * t, w * 0.5 * h));
            }
        }
        out
    }
}

/// Nodes and weights for integrals of the form `int f(x) exp(-x^2/2) dx`.
///
/// Computed from the physicists' Gauss-Hermite rule by rescaling; total
/// weight is sqrt(2*pi).
pub fn gauss_hermite_prob(n: usize) -> (Vec<f64>, Vec<f64>) {
    let (t, w) = gauss_hermite_phys(n);
    let s = std::f64::consts::SQRT_2;
    (
        t.iter().map(|&x| s * x).collect(),
        w.iter().map(|&x| s * x).collect(),
    )
}

/// Physicists' Gauss-Hermite rule (weight exp(-x^2)).
fn gauss_hermite_phys(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 2);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let pim4 = 0.751_125_544_464_942_9; // pi^(-1/4)
    let m = (n + 1) / 2;
    let nf = n as f64;
    let mut x = 0.0;
    for i in 0..m {
        // Standard initial guesses for the largest roots, then step inward.
        x = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
            1 => x - 1.14 * nf.powf(0.426) / x,
            2 => 1.86 * x - 0.86 * nodes[0],
            3 => 1.91 * x - 0.91 * nodes[1],
            _ => 2.0 * x - nodes[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..200 {
            let mut p1 = pim4;
            let mut p2 = 0.0;
            for j in 1..=n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = x * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let dx = p1 / pp;
            x -= dx;
            if dx.abs() < 1e-14 {
                break;
            }
        }
        nodes[i] = x;
        nodes[n - 1 - i] = -x;
        weights[i] = 2.0 / (pp * pp);
        weights[n - 1 - i] = weights[i];
    }
    (nodes, weights)
}
