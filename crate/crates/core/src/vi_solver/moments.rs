//! The set `M = {(∫₀¹ λ(1-t) dt, ∫₀¹ λ t dt) : |λ| ≤ 1}` of endpoint moments.
//!
//! Its support function is `(a, b) ↦ ∫₀¹ |a(1-t) + bt| dt`, so a multiplier
//! constrained to `M` on each segment reproduces the friction functional
//! integrated exactly. The boundary of `M` consists of the two arcs
//! `s (2τ - τ² - ½, τ² - ½)`, `τ ∈ [0, 1]`, `s = ±1`, which are the moments of
//! the switching functions equal to `s` on `[0, τ)` and `-s` on `(τ, 1]`.

pub type Moment = [f64; 2];

fn arc(s: f64, tau: f64) -> Moment {
    [s * (2.0 * tau - tau * tau - 0.5), s * (tau * tau - 0.5)]
}

/// Lower and upper boundary ordinates of `M` above `x + y = sum`.
fn bounds(sum: f64) -> (f64, f64) {
    let lo = 0.25 * (sum + 1.0).powi(2) - 0.5;
    let hi = 0.5 - 0.25 * (1.0 - sum).powi(2);
    (lo, hi)
}

pub fn contains(m: Moment) -> bool {
    let sum = m[0] + m[1];
    if sum.abs() > 1.0 {
        return false;
    }
    let (lo, hi) = bounds(sum);
    lo <= m[1] && m[1] <= hi
}

/// Euclidean projection onto `M`.
pub fn project(z: Moment) -> Moment {
    if contains(z) {
        return z;
    }
    let dist2 = |p: Moment| (p[0] - z[0]).powi(2) + (p[1] - z[1]).powi(2);
    let mut best = arc(1.0, 0.0);
    let mut best_d = dist2(best);
    for s in [1.0, -1.0] {
        // derivative of ½|arc(τ) - z|² in τ, a cubic
        let dphi = |tau: f64| {
            let p = arc(s, tau);
            s * ((2.0 - 2.0 * tau) * (p[0] - z[0]) + 2.0 * tau * (p[1] - z[1]))
        };
        let mut candidates = vec![0.0, 1.0];
        const SAMPLES: usize = 64;
        let mut prev = dphi(0.0);
        for k in 1..=SAMPLES {
            let t1 = k as f64 / SAMPLES as f64;
            let cur = dphi(t1);
            if prev < 0.0 && cur >= 0.0 {
                let (mut lo, mut hi) = ((k - 1) as f64 / SAMPLES as f64, t1);
                for _ in 0..80 {
                    let mid = 0.5 * (lo + hi);
                    if dphi(mid) < 0.0 {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                candidates.push(0.5 * (lo + hi));
            }
            prev = cur;
        }
        for tau in candidates {
            let p = arc(s, tau);
            let d = dist2(p);
            if d < best_d {
                best = p;
                best_d = d;
            }
        }
    }
    best
}

/// A function `λ(t) = c s` on `[0, τ)` and `-c s` on `(τ, 1]` with `0 ≤ c ≤ 1`
/// whose moments equal `m ∈ M`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Switching {
    pub c: f64,
    pub s: f64,
    pub tau: f64,
}

impl Switching {
    pub fn at(&self, t: f64) -> f64 {
        if t < self.tau {
            self.c * self.s
        } else if t > self.tau {
            -self.c * self.s
        } else {
            0.0
        }
    }
}

pub fn switching(m: Moment) -> Switching {
    if m[0] == 0.0 && m[1] == 0.0 {
        return Switching { c: 0.0, s: 1.0, tau: 1.0 };
    }
    // largest stretch keeping m inside M, i.e. the reciprocal of the gauge
    let mut lo = 1.0;
    let mut hi = 1.0;
    if contains(m) {
        while contains([m[0] * hi, m[1] * hi]) {
            hi *= 2.0;
        }
    } else {
        lo = 0.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if contains([m[0] * mid, m[1] * mid]) {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-16 * hi {
            break;
        }
    }
    let stretch = lo.max(f64::MIN_POSITIVE);
    let b = [m[0] * stretch, m[1] * stretch];
    let sum = (b[0] + b[1]).clamp(-1.0, 1.0);
    let (y_lo, y_hi) = bounds(sum);
    let c = (1.0 / stretch).min(1.0);
    if (b[1] - y_lo).abs() <= (b[1] - y_hi).abs() {
        Switching { c, s: 1.0, tau: 0.5 * (sum + 1.0) }
    } else {
        Switching { c, s: -1.0, tau: 0.5 * (1.0 - sum) }
    }
}

/// Moments of point values `values` carried at nodes `nodes` with weights `weights` summing to one.
pub fn moments_of(nodes: &[f64], weights: &[f64], values: &[f64]) -> Moment {
    let mut m = [0.0; 2];
    for ((&t, &w), &v) in nodes.iter().zip(weights).zip(values) {
        m[0] += w * v * (1.0 - t);
        m[1] += w * v * t;
    }
    m
}
