//! Gauss–Legendre rules on intervals, segments and parallelograms.

use nalgebra::Vector2;

/// Nodes and weights of an `n`-point Gauss–Legendre rule on `[0, 1]`.
#[derive(Clone, Debug)]
pub struct GaussRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussRule {
    /// Builds the rule by Newton iteration on the Legendre polynomial roots.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "a Gauss rule needs at least one point");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let nf = n as f64;
        for i in 0..n.div_ceil(2) {
            // Tricomi initial guess for the i-th root on [-1, 1]
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre(n, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            // map [-1, 1] -> [0, 1]
            nodes[i] = 0.5 * (1.0 - x);
            nodes[n - 1 - i] = 0.5 * (1.0 + x);
            weights[i] = 0.5 * w;
            weights[n - 1 - i] = 0.5 * w;
        }
        GaussRule { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.nodes.iter().copied().zip(self.weights.iter().copied())
    }
}

/// Legendre polynomial `P_n(x)` and its derivative.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// A quadrature point on a straight segment.
#[derive(Clone, Copy, Debug)]
pub struct SegmentPoint {
    /// Parameter in `[0, 1]` along the segment.
    pub t: f64,
    pub point: Vector2<f64>,
    /// Weight including the segment length.
    pub weight: f64,
}

/// Maps a rule from `[0, 1]` onto the segment `a -> b`.
pub fn segment_points(rule: &GaussRule, a: Vector2<f64>, b: Vector2<f64>) -> Vec<SegmentPoint> {
    let len = (b - a).norm();
    rule.iter()
        .map(|(t, w)| SegmentPoint {
            t,
            point: a + (b - a) * t,
            weight: w * len,
        })
        .collect()
}

/// Tensor rule on the reference square `[0, 1]^2`, returned as `(xi, eta, weight)`.
pub fn square_points(rule: &GaussRule) -> Vec<(f64, f64, f64)> {
    let mut out = Vec::with_capacity(rule.len() * rule.len());
    for (xi, wx) in rule.iter() {
        for (eta, wy) in rule.iter() {
            out.push((xi, eta, wx * wy));
        }
    }
    out
}
