//! The limit functional
//! `F(v) = min_W ∫ v0(E(v) − ½ W²) − L(v)` over constant skew `W`.
//!
//! In 2D `W² = −a² I`, so the inner problem is a one-dimensional convex
//! quadratic in `s = a²/2 ≥ 0` with the closed-form minimizer
//! `s* = max(0, −c / (2 ∫v0(I)))`, `c = ∫ dv0(I) · E(v)`. The gap to the
//! linear energy is then `E(v) − F(v) = (c⁻)² / (4 ∫v0(I))`.
//!
//! In 3D the inner problem in the axis vector `w` is quartic and solved by
//! multi-start Newton on constant strains only.

use serde::{Deserialize, Serialize};

use crate::algebra::{skew_square, Density, Mat, SkewParam, SymMat};
use crate::error::{Error, Result};
use crate::fem::{mass_inner, strain, DisplacementField, LinearProblem, SolveOptions};
use crate::loads::{classify_compatibility, eval_l, Compatibility, LoadAssembly, DEFAULT_TOL};
use crate::mesh::Mesh;

/// Minimizer of the inner skew problem.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InnerMin {
    /// Canonical sign.
    pub w_star: SkewParam,
    /// `∫ v0(E − ½ W*²)`.
    pub offset_energy: f64,
    /// `a*²` with `W* = a* J` (2D only).
    pub a_star_sq: Option<f64>,
}

/// `∫ v0(E − ½ W²)` for per-element strains.
pub fn inner_objective(mesh: &Mesh, d: &Density, strains: &[SymMat], w: &SkewParam) -> f64 {
    let half_w2 = skew_square(w).scale(0.5);
    strains.iter().enumerate().map(|(e, s)| mesh.area(e) * d.v0(&(*s - half_w2))).sum()
}

/// Relative size below which `∫ dv0(I) · E` counts as zero.
///
/// At weakly compatible loads `F` is flat along `a`, and `c` computed from
/// an iterative solve carries the solver residual. Without the flush,
/// `a* = √a*²` would turn residual noise of 1e-10 into `a*` of 1e-5.
pub const DIVERGENCE_FLUSH: f64 = 1e-9;

/// `(∫ dv0(I) · E, ∫ v0(I))`, with `c` flushed to zero when it is below
/// `DIVERGENCE_FLUSH · ∫ |dv0(I)| |E|`.
fn divergence_moments(mesh: &Mesh, d: &Density, strains: &[SymMat]) -> (f64, f64) {
    let di = d.dv0(&SymMat::identity(2));
    let (mut c, mut scale) = (0.0, 0.0);
    for (e, s) in strains.iter().enumerate() {
        c += mesh.area(e) * di.dot(s);
        scale += mesh.area(e) * s.norm();
    }
    if c.abs() <= DIVERGENCE_FLUSH * di.norm() * scale {
        c = 0.0;
    }
    (c, mesh.total_area() * d.v0(&SymMat::identity(2)))
}

/// Closed-form 2D inner minimization.
pub fn inner_min_w(mesh: &Mesh, d: &Density, strains: &[SymMat]) -> Result<InnerMin> {
    if strains.len() != mesh.n_elements() {
        return Err(Error::MeshMismatch { expected: mesh.n_elements(), found: strains.len() });
    }
    let (c, vi) = divergence_moments(mesh, d, strains);
    let a_star_sq = (-c).max(0.0) / vi;
    let shift = SymMat::identity(2).scale(0.5 * a_star_sq);
    let offset_energy = strains.iter().enumerate().map(|(e, s)| mesh.area(e) * d.v0(&(*s + shift))).sum();
    Ok(InnerMin { w_star: SkewParam::Planar(a_star_sq.sqrt()), offset_energy, a_star_sq: Some(a_star_sq) })
}

/// `E(v) − F(v) = (c⁻)² / (4 ∫v0(I))`.
pub fn gap_closed_form(mesh: &Mesh, d: &Density, strains: &[SymMat]) -> f64 {
    let (c, vi) = divergence_moments(mesh, d, strains);
    let cm = (-c).max(0.0);
    cm * cm / (4.0 * vi)
}

/// `q(w) = vol · v0(E − ½(w⊗w − |w|² I))`, its gradient and Hessian.
fn q3(d: &Density, e: &SymMat, vol: f64, w: [f64; 3]) -> (f64, [f64; 3], [[f64; 3]; 3]) {
    let m = *e - skew_square(&SkewParam::Spatial(w)).scale(0.5);
    let sig = d.dv0(&m);
    let tr = sig.trace();
    let ww = w[0] * w[0] + w[1] * w[1] + w[2] * w[2];
    let c = 12.0 * d.mu() + 16.0 * d.lambda();
    let mut g = [0.0; 3];
    let mut h = [[0.0; 3]; 3];
    for i in 0..3 {
        let sw: f64 = (0..3).map(|j| sig.get(i, j) * w[j]).sum();
        g[i] = vol * (tr * w[i] - sw);
        for j in 0..3 {
            let diag = if i == j { tr + 4.0 * d.mu() * ww } else { 0.0 };
            h[i][j] = vol * (diag - sig.get(i, j) + c * w[i] * w[j]);
        }
    }
    (vol * d.v0(&m), g, h)
}

fn solve3(a: [[f64; 3]; 3], b: [f64; 3]) -> Option<[f64; 3]> {
    let m = Mat::from_rows3(a);
    let det = m.det();
    let scale = m.max_abs().powi(3);
    if !(det.abs() > 1e-14 * scale) {
        return None;
    }
    // Cramer's rule is accurate enough for 3×3 Newton steps
    let mut x = [0.0; 3];
    for k in 0..3 {
        let mut ak = a;
        for i in 0..3 {
            ak[i][k] = b[i];
        }
        x[k] = Mat::from_rows3(ak).det() / det;
    }
    Some(x)
}

fn newton3(d: &Density, e: &SymMat, vol: f64, mut w: [f64; 3], gtol: f64) -> ([f64; 3], f64, f64) {
    let norm = |g: &[f64; 3]| (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt();
    let (mut q, mut g, mut h) = q3(d, e, vol, w);
    for _ in 0..200 {
        if norm(&g) <= gtol {
            break;
        }
        let newton = solve3(h, [-g[0], -g[1], -g[2]]);
        let dir = match newton {
            Some(p) if p[0] * g[0] + p[1] * g[1] + p[2] * g[2] < 0.0 => p,
            _ => [-g[0], -g[1], -g[2]],
        };
        let slope = dir[0] * g[0] + dir[1] * g[1] + dir[2] * g[2];
        let mut t = 1.0;
        let mut moved = false;
        for _ in 0..60 {
            let trial = [w[0] + t * dir[0], w[1] + t * dir[1], w[2] + t * dir[2]];
            let (qt, gt, ht) = q3(d, e, vol, trial);
            // near the minimum q changes only at rounding level
            let flat = (qt - q).abs() <= 1e-13 * (1.0 + q.abs());
            if qt <= q + 1e-4 * t * slope || (flat && norm(&gt) < norm(&g)) {
                w = trial;
                (q, g, h) = (qt, gt, ht);
                moved = true;
                break;
            }
            t *= 0.5;
        }
        if !moved {
            break;
        }
    }
    (w, q, norm(&g))
}

/// 3D inner minimization on a constant strain over a body of volume `vol`.
/// Multi-start Newton: 26 lattice directions × 5 magnitudes plus `w = 0`.
pub fn inner_min_w_3d(d: &Density, e: &SymMat, vol: f64) -> Result<InnerMin> {
    if e.dim() != 3 {
        return Err(Error::InvalidArgument("inner_min_w_3d needs a 3×3 strain".into()));
    }
    if !(vol > 0.0) {
        return Err(Error::InvalidArgument(format!("volume must be > 0, got {vol}")));
    }
    let scale = (2.0 * e.norm()).sqrt().max(1e-3);
    let gtol = 1e-12 * vol * (1.0 + d.dv0(e).norm()) * (1.0 + scale);
    let mut starts = vec![[0.0; 3]];
    for i in -1..=1i32 {
        for j in -1..=1i32 {
            for k in -1..=1i32 {
                if (i, j, k) == (0, 0, 0) {
                    continue;
                }
                let n = ((i * i + j * j + k * k) as f64).sqrt();
                for mag in [0.25, 0.5, 1.0, 2.0, 4.0] {
                    let r = mag * scale / n;
                    starts.push([r * i as f64, r * j as f64, r * k as f64]);
                }
            }
        }
    }
    let mut best: Option<([f64; 3], f64)> = None;
    for s in starts {
        let (w, q, _) = newton3(d, e, vol, s, gtol);
        if best.is_none_or(|(_, bq)| q < bq) {
            best = Some((w, q));
        }
    }
    let (w, _) = best.expect("at least one start");
    let (w, q, gn) = newton3(d, e, vol, w, gtol);
    if gn > gtol * 1e3 {
        return Err(Error::NoConvergence { iterations: 200, residual: gn });
    }
    Ok(InnerMin { w_star: SkewParam::Spatial(w).canonical(), offset_energy: q, a_star_sq: None })
}

/// Gradient and Hessian of the 3D inner objective, exposed for checks.
pub fn inner_objective_3d(d: &Density, e: &SymMat, vol: f64, w: [f64; 3]) -> (f64, [f64; 3], [[f64; 3]; 3]) {
    q3(d, e, vol, w)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LimitReport {
    pub f_value: f64,
    pub e_value: f64,
    /// `E − F`, from the two evaluations.
    pub gap: f64,
    /// `(c⁻)² / (4 ∫v0(I))`.
    pub gap_closed_form: f64,
    pub w_star: SkewParam,
    pub a_star_sq: f64,
}

pub fn eval_f(mesh: &Mesh, d: &Density, loads: &LoadAssembly, v: &DisplacementField) -> Result<LimitReport> {
    let eps = strain(mesh, v)?;
    let l = eval_l(loads, v)?;
    let inner = inner_min_w(mesh, d, &eps)?;
    let stored: f64 = eps.iter().enumerate().map(|(e, s)| mesh.area(e) * d.v0(s)).sum();
    let f_value = inner.offset_energy - l;
    let e_value = stored - l;
    Ok(LimitReport {
        f_value,
        e_value,
        gap: e_value - f_value,
        gap_closed_form: gap_closed_form(mesh, d, &eps),
        w_star: inner.w_star,
        a_star_sq: inner.a_star_sq.unwrap_or(0.0),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LimitOptions {
    pub max_iter: usize,
    /// Stop when `|ΔF| ≤ f_tol (1 + |F|)` ...
    pub f_tol: f64,
    /// ... and `‖ΔW‖ ≤ w_tol`.
    pub w_tol: f64,
    pub classify_tol: f64,
    pub solve: SolveOptions,
}

impl Default for LimitOptions {
    fn default() -> Self {
        LimitOptions { max_iter: 200, f_tol: 1e-12, w_tol: 1e-10, classify_tol: DEFAULT_TOL, solve: SolveOptions::default() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LimitMinimum {
    pub field: DisplacementField,
    pub w0: SkewParam,
    pub min_f: f64,
    pub iterations: usize,
    /// Value after every partial step, starting from `F(0, 0) = 0`.
    pub history: Vec<f64>,
}

impl LimitMinimum {
    /// Whether every partial step was non-increasing up to rounding.
    pub fn is_monotone(&self) -> bool {
        self.history.windows(2).all(|p| p[1] <= p[0] + 1e-12 * (1.0 + p[0].abs()))
    }
}

/// Alternating minimization of `(v, W) ↦ ∫ v0(E(v) − ½W²) − L(v)`:
/// a linear solve with eigenstrain `½W²` in `v`, then the closed form in `W`.
pub fn minimize_f(problem: &LinearProblem, loads: &LoadAssembly, opts: &LimitOptions) -> Result<LimitMinimum> {
    let class = classify_compatibility(loads, opts.classify_tol);
    if let Compatibility::Incompatible { witness, witness_gap } = class.compat {
        return Err(Error::IncompatibleLoads { witness, witness_gap });
    }
    let (mesh, d) = (problem.mesh(), problem.density());
    let mut w = SkewParam::Planar(0.0);
    let mut f_prev = 0.0;
    let mut history = vec![0.0];
    for it in 1..=opts.max_iter {
        let b0 = skew_square(&w).scale(0.5);
        let sol = problem.solve(loads, Some(&b0), &opts.solve)?;
        history.push(sol.energy);
        let eps = strain(mesh, &sol.field)?;
        let inner = inner_min_w(mesh, d, &eps)?;
        let f = inner.offset_energy - eval_l(loads, &sol.field)?;
        history.push(f);
        let dw = (inner.w_star.coeffs()[0] - w.coeffs()[0]).abs() * 2f64.sqrt();
        w = inner.w_star;
        if (f - f_prev).abs() <= opts.f_tol * (1.0 + f.abs()) && dw <= opts.w_tol {
            return Ok(LimitMinimum { field: sol.field, w0: w, min_f: f, iterations: it, history });
        }
        f_prev = f;
    }
    Err(Error::NoConvergence { iterations: opts.max_iter, residual: (history[history.len() - 1] - history[history.len() - 3]).abs() })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShiftCheck {
    pub t: f64,
    /// `F(v) − min F`, expected to vanish.
    pub f_delta: f64,
    /// `E(v) − min E`, expected positive for `t > 0`.
    pub e_delta: f64,
}

/// `v = v* + t U² x` for a kernel direction `U` of weakly compatible loads
/// (so `L(U² x) = 0`). With `U = J` this is `v* − t x`.
pub fn shifted_minimizer(
    mesh: &Mesh,
    d: &Density,
    loads: &LoadAssembly,
    v_star: &DisplacementField,
    u: &SkewParam,
    t: f64,
    tol: f64,
) -> Result<(DisplacementField, ShiftCheck)> {
    if !(t >= 0.0) {
        return Err(Error::InvalidArgument(format!("shift must be >= 0, got {t}")));
    }
    if u.dim() != 2 {
        return Err(Error::InvalidArgument("shifted fields live on the 2D mesh".into()));
    }
    let class = classify_compatibility(loads, tol);
    if !matches!(class.compat, Compatibility::Weak { .. }) {
        return Err(Error::Refused(format!(
            "shifted minimizers need weakly compatible loads, got {}",
            class.compat.name()
        )));
    }
    let u2 = skew_square(u);
    let u2x = DisplacementField::from_fn(mesh, |x| {
        [u2.get(0, 0) * x[0] + u2.get(0, 1) * x[1], u2.get(1, 0) * x[0] + u2.get(1, 1) * x[1]]
    });
    let l_u = eval_l(loads, &u2x)?;
    if l_u.abs() > tol * (1.0 + class.moment.norm()) {
        return Err(Error::Refused(format!("L(U^2 x) = {l_u:.3e} does not vanish for U = {u:?}")));
    }
    let base = eval_f(mesh, d, loads, v_star)?;
    let v = v_star.axpy(t, &u2x);
    let shifted = eval_f(mesh, d, loads, &v)?;
    Ok((
        v,
        ShiftCheck { t, f_delta: shifted.f_value - base.f_value, e_delta: shifted.e_value - base.e_value },
    ))
}

/// Gauge-fixed mass-norm distance `‖u − v‖`.
pub fn mass_distance(mesh: &Mesh, u: &DisplacementField, v: &DisplacementField) -> f64 {
    let diff = u.axpy(-1.0, v);
    mass_inner(mesh, diff.values(), diff.values()).max(0.0).sqrt()
}
