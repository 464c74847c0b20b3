//! Solvers for the discrete variational inequality
//! `B_h(u, v - u) + j(v) - j(u) ≥ ⟨f_h, v - u⟩` for all `v`.
//!
//! `solve_uzawa` iterates on the endpoint moments of a multiplier on the `Γ₂`
//! segments and reports its values at the segment Gauss points. `oracle_solve` minimizes the energy of the symmetric case by
//! enumerating the signs of the `Γ₂` trace dofs and is meant for tiny systems.

use std::collections::BTreeSet;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dg_forms::{friction_j, FrictionData, GlobalSystem};
use crate::linalg::{dot, norm_inf, LinalgError, SparseLu};
pub use crate::linalg::sparse_direct_solve;

pub mod moments;
use moments::Moment;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("no convergence after {iterations} iterations (last multiplier update {residual:.3e})")]
    MaxIterations { iterations: usize, residual: f64 },
    #[error("invalid solver configuration: {0}")]
    Config(String),
    #[error("oracle requires a symmetric system (delta = 1), got delta = {0}")]
    OracleNeedsSymmetric(i32),
    #[error("oracle limited to {limit} dofs, got {n}")]
    OracleTooLarge { n: usize, limit: usize },
    #[error("oracle found no sign pattern consistent with its solution")]
    OracleNoPattern,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverConfig {
    /// Uzawa step; `None` picks it from the spectrum of the multiplier map.
    pub rho: Option<f64>,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig { rho: None, tol: 1e-10, max_iter: 20_000 }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), SolverError> {
        if let Some(rho) = self.rho {
            if !(rho > 0.0 && rho.is_finite()) {
                return Err(SolverError::Config(format!("rho must be positive, got {rho}")));
            }
        }
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(SolverError::Config(format!("tol must be positive, got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(SolverError::Config("max_iter must be at least 1".into()));
        }
        Ok(())
    }
}

/// One row of the solver trace.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    pub residual: f64,
    pub energy: f64,
    pub rho: f64,
}

#[derive(Clone, Debug)]
pub struct VISolution {
    pub u: Vec<f64>,
    /// Multiplier at the `Γ₂` carrier points, edge by edge.
    pub lambda: Vec<f64>,
    pub iterations: usize,
    /// Multiplier update norms, one per iteration.
    pub residuals: Vec<f64>,
    pub trace: Vec<TraceRow>,
    pub rho: f64,
}

pub fn write_trace_csv<W: Write>(trace: &[TraceRow], mut w: W) -> std::io::Result<()> {
    writeln!(w, "iteration,residual,energy,rho")?;
    for r in trace {
        writeln!(w, "{},{:.14e},{:.14e},{:.14e}", r.iteration, r.residual, r.energy, r.rho)?;
    }
    Ok(())
}

/// `Σ_e g|e| (m_e0 τ_e(·)(0) + m_e1 τ_e(·)(1))`: the friction functional of
/// normalized segment moments as a dof vector.
fn moment_functional(fr: &FrictionData, m: &[Moment], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for (e, mom) in fr.edges.iter().zip(m) {
        let gl = fr.g * e.length;
        for a in 0..2 {
            let basis = e.trace.basis(a);
            out[e.trace.dofs[a]] += gl * (mom[0] * basis.start + mom[1] * basis.end);
        }
    }
    out
}

/// Endpoint trace values of `u` on every `Γ₂` segment, scaled by `g|e|`.
fn scaled_traces(fr: &FrictionData, u: &[f64]) -> Vec<Moment> {
    fr.edges
        .iter()
        .map(|e| {
            let tr = e.trace.evaluate(u);
            let gl = fr.g * e.length;
            [gl * tr.start, gl * tr.end]
        })
        .collect()
}

/// Point values at the carrier nodes of multipliers given by their moments.
fn carrier_values(fr: &FrictionData, m: &[Moment]) -> Vec<f64> {
    fr.edges
        .iter()
        .zip(m)
        .flat_map(|(e, mom)| {
            let sw = moments::switching(*mom);
            e.nodes.iter().map(move |&t| sw.at(t))
        })
        .collect()
}

/// Largest modulus of `D T B⁻¹ Tᵀ D` (with `T` the endpoint trace map and
/// `D = g|e|`) by power iteration; projected ascent contracts for steps below `2 / σ`.
pub fn multiplier_spectral_radius(system: &GlobalSystem, lu: &SparseLu) -> Result<f64, SolverError> {
    let fr = &system.friction;
    let n = system.num_dofs();
    if fr.edges.is_empty() {
        return Ok(0.0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut x: Vec<Moment> = fr.edges.iter().map(|_| [rng.gen_range(0.5..1.0), rng.gen_range(0.5..1.0)]).collect();
    let mut sigma = 0.0;
    for _ in 0..60 {
        let nx = x.iter().flatten().fold(0.0_f64, |a, v| a.max(v.abs()));
        if nx == 0.0 {
            return Ok(0.0);
        }
        x.iter_mut().flatten().for_each(|v| *v /= nx);
        let u = lu.solve(&moment_functional(fr, &x, n))?;
        let y = scaled_traces(fr, &u);
        let next = y.iter().flatten().fold(0.0_f64, |a, v| a.max(v.abs()));
        let converged = (next - sigma).abs() <= 1e-6 * next;
        sigma = next;
        x = y;
        if converged {
            break;
        }
    }
    Ok(sigma)
}

pub fn solve_uzawa(system: &GlobalSystem, config: &SolverConfig) -> Result<VISolution, SolverError> {
    solve_uzawa_from(system, config, &vec![0.0; system.friction.num_points()])
}

/// Uzawa iteration from a multiplier given at the carrier points.
///
/// The iteration runs on the two normalized endpoint moments of the
/// multiplier on each segment, projected onto the set of moments of functions
/// bounded by one. This solves the inequality with the friction functional
/// integrated exactly, also on segments where the trace changes sign. The
/// returned point values come from a switching function with the final moments.
pub fn solve_uzawa_from(
    system: &GlobalSystem,
    config: &SolverConfig,
    lambda0: &[f64],
) -> Result<VISolution, SolverError> {
    config.validate()?;
    let n = system.num_dofs();
    let fr = &system.friction;
    assert_eq!(lambda0.len(), fr.num_points());
    let lu = SparseLu::new(&system.b)?;
    let mut rho = match config.rho {
        Some(r) => r,
        None => {
            let sigma = multiplier_spectral_radius(system, &lu)?;
            if sigma > 0.0 {
                1.0 / sigma
            } else {
                1.0
            }
        }
    };
    let mut m: Vec<Moment> = Vec::with_capacity(fr.edges.len());
    let mut q = 0;
    for e in &fr.edges {
        let k = e.nodes.len();
        let w: Vec<f64> = e.weights.iter().map(|w| w / e.length).collect();
        let vals: Vec<f64> = lambda0[q..q + k].iter().map(|l| l.clamp(-1.0, 1.0)).collect();
        m.push(moments::project(moments::moments_of(&e.nodes, &w, &vals)));
        q += k;
    }
    let mut residuals = Vec::new();
    let mut trace = Vec::new();
    let mut best = f64::INFINITY;
    let mut growth = 0;
    let primal = |m: &[Moment]| -> Result<Vec<f64>, SolverError> {
        let gl = moment_functional(fr, m, n);
        let rhs: Vec<f64> = system.f.iter().zip(&gl).map(|(f, g)| f - g).collect();
        Ok(lu.solve(&rhs)?)
    };
    for it in 1..=config.max_iter {
        let u = primal(&m)?;
        let traces = scaled_traces(fr, &u);
        let mut residual: f64 = 0.0;
        for (mom, t) in m.iter_mut().zip(&traces) {
            let next = moments::project([mom[0] + rho * t[0], mom[1] + rho * t[1]]);
            residual = residual.max((next[0] - mom[0]).abs()).max((next[1] - mom[1]).abs());
            *mom = next;
        }
        residuals.push(residual);
        trace.push(TraceRow { iteration: it, residual, energy: system.energy(&u), rho });
        if residual <= config.tol {
            // the primal iterate belonging to the final multiplier
            let u = primal(&m)?;
            let lambda = carrier_values(fr, &m);
            return Ok(VISolution { u, lambda, iterations: it, residuals, trace, rho });
        }
        // sustained growth of the update means the step is too long
        if residual < best {
            best = residual;
            growth = 0;
        } else if residual > 2.0 * best {
            growth += 1;
            if growth >= 5 {
                rho *= 0.5;
                growth = 0;
                best = residual;
            }
        }
    }
    Err(SolverError::MaxIterations { iterations: config.max_iter, residual: *residuals.last().unwrap_or(&f64::NAN) })
}

/// Dof count limit of the oracle.
pub const ORACLE_LIMIT: usize = 64;

/// Sign state of a trace dof in an oracle pattern.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Sign {
    Neg,
    Zero,
    Pos,
}

impl Sign {
    fn value(self) -> f64 {
        match self {
            Sign::Neg => -1.0,
            Sign::Zero => 0.0,
            Sign::Pos => 1.0,
        }
    }
}

/// Exact minimizer of `½ vᵀBv - Fᵀv + j(v)` for symmetric `B`, by enumeration
/// of the signs of the `Γ₂` trace dofs.
pub fn oracle_solve(system: &GlobalSystem, tol: f64) -> Result<VISolution, SolverError> {
    if system.delta != 1 {
        return Err(SolverError::OracleNeedsSymmetric(system.delta));
    }
    let n = system.num_dofs();
    if n > ORACLE_LIMIT {
        return Err(SolverError::OracleTooLarge { n, limit: ORACLE_LIMIT });
    }
    let fr = &system.friction;
    let trace_dofs: Vec<usize> =
        fr.edges.iter().flat_map(|e| e.trace.dofs).collect::<BTreeSet<_>>().into_iter().collect();
    let b = system.b.to_dense();
    let f = DVector::from_column_slice(&system.f);
    let patterns = 3usize.pow(trace_dofs.len() as u32);
    let mut best: Option<(f64, Vec<f64>)> = None;
    for code in 0..patterns {
        let mut signs = vec![Sign::Zero; n];
        let mut c = code;
        for &d in &trace_dofs {
            signs[d] = [Sign::Neg, Sign::Zero, Sign::Pos][c % 3];
            c /= 3;
        }
        if let Some(u) = pattern_candidate(system, &b, &f, &signs, &trace_dofs, tol) {
            let e = system.energy(&u);
            if best.as_ref().is_none_or(|(be, _)| e < *be) {
                best = Some((e, u));
            }
        }
    }
    let (_, u) = best.ok_or(SolverError::OracleNoPattern)?;
    let lambda = multiplier_from_traces(system, &u, tol);
    Ok(VISolution { u, lambda, iterations: patterns, residuals: vec![], trace: vec![], rho: 0.0 })
}

/// A feasible multiplier for a primal solution: the sign of the trace where it
/// is nonzero and zero where the trace vanishes.
fn multiplier_from_traces(system: &GlobalSystem, u: &[f64], tol: f64) -> Vec<f64> {
    let tr = system.friction.trace_values(u);
    let scale = 1.0 + norm_inf(u);
    tr.iter().map(|&t| if t.abs() > tol * scale { t.signum() } else { 0.0 }).collect()
}

/// Pieces of the friction term for a fixed sign pattern on one segment.
enum Piece {
    /// `c · (v_a, v_b)`
    Linear([f64; 2]),
    /// `gL ψ(v_a, v_b)` with opposite strict signs, `s = sign(v_a)`.
    Crossing { s: f64, scale: f64 },
}

fn pattern_candidate(
    system: &GlobalSystem,
    b: &DMatrix<f64>,
    f: &DVector<f64>,
    signs: &[Sign],
    trace_dofs: &[usize],
    tol: f64,
) -> Option<Vec<f64>> {
    let n = signs.len();
    let fr = &system.friction;
    // free dofs: everything except trace dofs pinned to zero
    let free: Vec<usize> = (0..n).filter(|&i| !(trace_dofs.contains(&i) && signs[i] == Sign::Zero)).collect();
    let pos = {
        let mut p = vec![usize::MAX; n];
        for (k, &i) in free.iter().enumerate() {
            p[i] = k;
        }
        p
    };
    let mut pieces: Vec<([usize; 2], Piece)> = Vec::new();
    for e in &fr.edges {
        let [da, db] = e.trace.dofs;
        let (sa, sb) = (signs[da].value(), signs[db].value());
        let gl = fr.g * e.length;
        // trace dofs are the edge's vertex values; segments on Γ₂ are full edges
        if sa * sb < 0.0 {
            pieces.push(([da, db], Piece::Crossing { s: sa, scale: gl }));
        } else {
            let s = if sa != 0.0 { sa } else { sb };
            pieces.push(([da, db], Piece::Linear([0.5 * gl * s, 0.5 * gl * s])));
        }
    }
    let m = free.len();
    let bf = DMatrix::from_fn(m, m, |r, c| b[(free[r], free[c])]);
    let mut rhs = DVector::from_fn(m, |r, _| f[free[r]]);
    for (dofs, piece) in &pieces {
        if let Piece::Linear(c) = piece {
            for (k, &d) in dofs.iter().enumerate() {
                if pos[d] != usize::MAX {
                    rhs[pos[d]] -= c[k];
                }
            }
        }
    }
    let has_crossing = pieces.iter().any(|(_, p)| matches!(p, Piece::Crossing { .. }));
    let chol = bf.clone().cholesky()?;
    let x = if !has_crossing {
        chol.solve(&rhs)
    } else {
        newton_on_region(&bf, &rhs, &pieces, &pos, signs, &free, tol)?
    };
    let mut u = vec![0.0; n];
    for (k, &i) in free.iter().enumerate() {
        u[i] = x[k];
    }
    // sign consistency of the assumed pattern
    let scale = 1.0 + norm_inf(&u);
    for &d in trace_dofs {
        let ok = match signs[d] {
            Sign::Zero => true,
            Sign::Pos => u[d] >= -tol * scale,
            Sign::Neg => u[d] <= tol * scale,
        };
        if !ok {
            return None;
        }
    }
    Some(u)
}

/// Damped Newton for `½xᵀBx - rᵀx + Σ gL ψ` on the open region where every
/// crossing segment keeps strictly opposite endpoint signs.
fn newton_on_region(
    b: &DMatrix<f64>,
    r: &DVector<f64>,
    pieces: &[([usize; 2], Piece)],
    pos: &[usize],
    signs: &[Sign],
    free: &[usize],
    tol: f64,
) -> Option<DVector<f64>> {
    let m = free.len();
    let crossings: Vec<([usize; 2], f64, f64)> = pieces
        .iter()
        .filter_map(|(d, p)| match p {
            Piece::Crossing { s, scale } => Some(([pos[d[0]], pos[d[1]]], *s, *scale)),
            Piece::Linear(_) => None,
        })
        .collect();
    let inside = |x: &DVector<f64>| {
        free.iter().enumerate().all(|(k, &i)| match signs[i] {
            Sign::Pos if crossings.iter().any(|(d, _, _)| d.contains(&k)) => x[k] > 0.0,
            Sign::Neg if crossings.iter().any(|(d, _, _)| d.contains(&k)) => x[k] < 0.0,
            _ => true,
        })
    };
    let phi = |x: &DVector<f64>| -> f64 {
        let mut v = 0.5 * x.dot(&(b * x)) - r.dot(x);
        for &([a, c], _, scale) in &crossings {
            let (va, vb) = (x[a], x[c]);
            v += scale * (va * va + vb * vb) / (2.0 * (va - vb).abs());
        }
        v
    };
    let mut x = DVector::zeros(m);
    for (k, &i) in free.iter().enumerate() {
        x[k] = signs[i].value();
    }
    let mut accepted = None;
    for _ in 0..200 {
        let mut grad = b * &x - r;
        let mut hess = b.clone();
        for &([a, c], s, scale) in &crossings {
            let (va, vb) = (x[a], x[c]);
            let d = va - vb;
            let nsq = va * va + vb * vb;
            grad[a] += scale * s * (va / d - nsq / (2.0 * d * d));
            grad[c] += scale * s * (vb / d + nsq / (2.0 * d * d));
            let ad3 = d.abs().powi(3);
            hess[(a, a)] += scale * 2.0 * vb * vb / ad3;
            hess[(a, c)] -= scale * 2.0 * va * vb / ad3;
            hess[(c, a)] -= scale * 2.0 * va * vb / ad3;
            hess[(c, c)] += scale * 2.0 * va * va / ad3;
        }
        let grad_scale = 1.0 + r.amax() + b.amax() * x.amax();
        if grad.amax() <= 1e-13 * grad_scale {
            return Some(x);
        }
        let step = hess.cholesky()?.solve(&(-&grad));
        let f0 = phi(&x);
        let mut t = 1.0;
        loop {
            let trial = &x + &step * t;
            if inside(&trial) && phi(&trial) <= f0 + 1e-4 * t * grad.dot(&step) {
                x = trial;
                break;
            }
            t *= 0.5;
            if t < 1e-14 {
                // either roundoff stalls the search at the minimizer, or the
                // minimizer over the closed region lies on its boundary
                return (grad.amax() <= tol * grad_scale).then_some(x);
            }
        }
        if t == 1.0 && step.amax() <= 1e-14 * (1.0 + x.amax()) {
            return Some(x);
        }
        // roundoff can stall the iterates once the gradient is small but above the strict test
        accepted = (grad.amax() <= tol * grad_scale).then(|| x.clone());
    }
    accepted
}

/// Most negative value of `B_h(u, v - u) + j(v) - j(u) - ⟨f_h, v - u⟩` over random
/// directions and `u ± s e_i` for every coordinate `i`.
pub fn verify_vi(system: &GlobalSystem, solution: &VISolution, n_directions: usize, seed: u64) -> f64 {
    let u = &solution.u;
    let n = u.len();
    let bu = system.b.matvec(u);
    let ju = friction_j(&system.friction, u);
    let scale = 1.0 + norm_inf(u);
    let violation = |v: &[f64]| -> f64 {
        let d: Vec<f64> = v.iter().zip(u).map(|(a, b)| a - b).collect();
        dot(&bu, &d) + friction_j(&system.friction, v) - ju - dot(&system.f, &d)
    };
    let mut worst: f64 = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..n_directions {
        let v: Vec<f64> = u.iter().map(|x| x + scale * rng.gen_range(-1.0..1.0)).collect();
        worst = worst.min(violation(&v));
    }
    let mut v = u.clone();
    for i in 0..n {
        for s in [scale, -scale] {
            v[i] = u[i] + s;
            worst = worst.min(violation(&v));
        }
        v[i] = u[i];
    }
    worst
}

/// Largest `|λ t - |t|| / (1 + |t|)` over the carrier points, with `t` the trace of `u`.
pub fn complementarity_residual(system: &GlobalSystem, solution: &VISolution) -> f64 {
    let tr = system.friction.trace_values(&solution.u);
    tr.iter().zip(&solution.lambda).map(|(t, l)| (l * t - t.abs()).abs() / (1.0 + t.abs())).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests;
