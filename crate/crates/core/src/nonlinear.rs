//! Rescaled nonlinear energies
//! `F_h(v) = ∫ V_h(∇v) − L(v)`, `V_h(G) = h⁻² W(I + hG)`, on P1 fields.
//!
//! With `F = I + hG` the Green–St.Venant density gives
//! `V_h(G) = v0(Ẽ)`, `Ẽ = sym G + (h/2) GᵀG = (FᵀF − I)/(2h)`, and the
//! derivative `∂V_h/∂G = F · dv0(Ẽ)`. `∇v` is constant per element, so
//! both are exact.
//!
//! The minimizer is L-BFGS with a diagonal initial Hessian taken from the
//! linear stiffness. Only translations are gauged out; rotations are not a
//! symmetry once loads act, so near-flat rotational directions are left to
//! the curvature pairs. This makes the compressed problems ill-conditioned
//! by design.
//!
//! Sweep points are solved strictly in order: each warm-starts from the
//! previous one and must not be parallelized.

use serde::{Deserialize, Serialize};

use crate::algebra::{rodrigues, Density, Mat, SkewParam, SymMat};
use crate::error::{Error, Result};
use crate::fem::{element_gradient, element_stiffness, mass_mean, solve_linear, strain, DisplacementField};
use crate::limit::{minimize_f, LimitOptions};
use crate::loads::{classify_compatibility, Compatibility, LoadAssembly};
use crate::mesh::Mesh;
use crate::par::Exec;
use crate::LinearProblem;

/// Per-element contribution: `(area · V_h, area · ∂V_h/∂G, det F)`.
fn element_terms(mesh: &Mesh, d: &Density, h: f64, values: &[f64], e: usize, with_grad: bool) -> (f64, [[f64; 2]; 2], f64) {
    let g = element_gradient(mesh, values, e);
    let f = [[1.0 + h * g[0][0], h * g[0][1]], [h * g[1][0], 1.0 + h * g[1][1]]];
    let det = f[0][0] * f[1][1] - f[0][1] * f[1][0];
    if !(det > 0.0) {
        return (f64::INFINITY, [[0.0; 2]; 2], det);
    }
    // Ẽ = sym G + (h/2) GᵀG
    let gtg = |i: usize, j: usize| g[0][i] * g[0][j] + g[1][i] * g[1][j];
    let exx = g[0][0] + 0.5 * h * gtg(0, 0);
    let eyy = g[1][1] + 0.5 * h * gtg(1, 1);
    let exy = 0.5 * (g[0][1] + g[1][0]) + 0.5 * h * gtg(0, 1);
    let e_t = SymMat::new2(exx, eyy, exy);
    let area = mesh.area(e);
    let energy = area * d.v0(&e_t);
    let mut p = [[0.0; 2]; 2];
    if with_grad {
        let s = d.dv0(&e_t);
        for i in 0..2 {
            for j in 0..2 {
                p[i][j] = area * (f[i][0] * s.get(0, j) + f[i][1] * s.get(1, j));
            }
        }
    }
    (energy, p, det)
}

/// Energy, gradient and minimum determinant of one state.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub value: f64,
    /// Stored part `∫ V_h(∇v)`.
    pub stored: f64,
    pub gradient: Vec<f64>,
    pub min_det: f64,
}

fn check(mesh: &Mesh, loads: &LoadAssembly, v: &DisplacementField, h: f64) -> Result<()> {
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("h must be > 0, got {h}")));
    }
    if v.values().len() != mesh.n_dofs() {
        return Err(Error::MeshMismatch { expected: mesh.n_dofs(), found: v.values().len() });
    }
    if loads.n_dofs() != mesh.n_dofs() {
        return Err(Error::MeshMismatch { expected: mesh.n_dofs(), found: loads.n_dofs() });
    }
    Ok(())
}

fn evaluate_values(mesh: &Mesh, d: &Density, loads: &LoadAssembly, values: &[f64], h: f64, with_grad: bool, exec: Exec) -> Evaluation {
    let terms = exec.map_range(mesh.n_elements(), |e| element_terms(mesh, d, h, values, e, with_grad));
    let mut stored = 0.0;
    let mut min_det = f64::INFINITY;
    let mut gradient = if with_grad { loads.nodal.iter().map(|l| -l).collect() } else { Vec::new() };
    for (e, (en, p, det)) in terms.iter().enumerate() {
        stored += en;
        min_det = min_det.min(*det);
        if with_grad && en.is_finite() {
            let tri = mesh.elements()[e];
            let sg = mesh.shape_grads(e);
            for k in 0..3 {
                gradient[2 * tri[k]] += p[0][0] * sg[k][0] + p[0][1] * sg[k][1];
                gradient[2 * tri[k] + 1] += p[1][0] * sg[k][0] + p[1][1] * sg[k][1];
            }
        }
    }
    let work: f64 = loads.nodal.iter().zip(values).map(|(a, b)| a * b).sum();
    Evaluation { value: stored - work, stored, gradient, min_det }
}

/// `F_h(v)`, `+∞` when some element has `det(I + h∇v) ≤ 0`.
pub fn eval_fh(mesh: &Mesh, d: &Density, loads: &LoadAssembly, v: &DisplacementField, h: f64) -> Result<f64> {
    check(mesh, loads, v, h)?;
    Ok(evaluate_values(mesh, d, loads, v.values(), h, false, Exec::default()).value)
}

/// Value, stored part, gradient and minimum determinant.
pub fn evaluate(mesh: &Mesh, d: &Density, loads: &LoadAssembly, v: &DisplacementField, h: f64, exec: Exec) -> Result<Evaluation> {
    check(mesh, loads, v, h)?;
    Ok(evaluate_values(mesh, d, loads, v.values(), h, true, exec))
}

/// Exact nodal gradient of `F_h`; inadmissible states are an error.
pub fn grad_fh(mesh: &Mesh, d: &Density, loads: &LoadAssembly, v: &DisplacementField, h: f64) -> Result<Vec<f64>> {
    let ev = evaluate(mesh, d, loads, v, h, Exec::default())?;
    if !(ev.min_det > 0.0) {
        return Err(Error::Inadmissible { min_det: ev.min_det });
    }
    Ok(ev.gradient)
}

/// `h⁻¹ (R(θ) − I) x`: the deformation `x + hv` is the rotation `R x`.
pub fn rotation_sequence(mesh: &Mesh, h: f64, theta: f64, w: &SkewParam) -> Result<DisplacementField> {
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("h must be > 0, got {h}")));
    }
    let r = rodrigues(theta, w)?;
    if r.dim() != 2 {
        return Err(Error::InvalidArgument("rotation fields live on the 2D mesh".into()));
    }
    let m = (r - Mat::identity(2)).scale(1.0 / h);
    Ok(DisplacementField::from_fn(mesh, |x| {
        let y = m.mul_vec(&x);
        [y[0], y[1]]
    }))
}

/// `h^{−α} J x`: zero strain, unbounded gradient, `F_h → 0` for `α < ½`.
pub fn skew_blowup_sequence(mesh: &Mesh, h: f64, alpha: f64) -> Result<DisplacementField> {
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("h must be > 0, got {h}")));
    }
    let s = h.powf(-alpha);
    Ok(DisplacementField::from_fn(mesh, |x| [s * x[1], -s * x[0]]))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Status {
    Converged,
    Diverged,
    IterLimit,
}

impl Status {
    pub fn name(&self) -> &'static str {
        match self {
            Status::Converged => "Converged",
            Status::Diverged => "Diverged",
            Status::IterLimit => "IterLimit",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NonlinearOptions {
    pub memory: usize,
    pub max_iter: usize,
    /// Converged when `‖∇F_h‖ ≤ grad_tol (1 + |F_h|)`.
    pub grad_tol: f64,
    /// Line search keeps every `det(I + h∇v) ≥ det_floor`.
    pub det_floor: f64,
    pub armijo: f64,
    /// Diverged when `F_h < −threshold`; `None` means `1e6 (1 + ‖ℓ‖)`.
    pub divergence_threshold: Option<f64>,
    pub exec: Exec,
}

impl Default for NonlinearOptions {
    fn default() -> Self {
        NonlinearOptions {
            memory: 10,
            max_iter: 20_000,
            grad_tol: 1e-8,
            det_floor: 1e-8,
            armijo: 1e-4,
            divergence_threshold: None,
            exec: Exec::default(),
        }
    }
}

impl NonlinearOptions {
    pub fn threshold(&self, loads: &LoadAssembly) -> f64 {
        self.divergence_threshold.unwrap_or(1e6 * (1.0 + loads.nodal_norm()))
    }
}

/// Evidence that the energy runs below the divergence threshold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DivergenceCertificate {
    pub threshold: f64,
    /// `(v − v_init) / ‖v − v_init‖`, the direction travelled.
    pub direction: DisplacementField,
    /// Accepted `F_h` values.
    pub energy_trace: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NonlinearResult {
    pub status: Status,
    pub field: DisplacementField,
    pub fh_value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    /// Line-search halvings forced by the determinant floor.
    pub barrier_activations: usize,
    pub min_det: f64,
    /// Smallest finite `F_h` seen at any accepted or trial state.
    pub floor: f64,
    /// Set when the line search could not make progress.
    pub stalled: bool,
    /// Accepted `F_h` values, starting with the initial state.
    pub trace: Vec<f64>,
    pub certificate: Option<DivergenceCertificate>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn stiffness_diagonal(mesh: &Mesh, d: &Density) -> Vec<f64> {
    let mut diag = vec![0.0; mesh.n_dofs()];
    for (e, tri) in mesh.elements().iter().enumerate() {
        let ke = element_stiffness(mesh, d, e);
        for k in 0..3 {
            diag[2 * tri[k]] += ke[2 * k][2 * k];
            diag[2 * tri[k] + 1] += ke[2 * k + 1][2 * k + 1];
        }
    }
    diag
}

fn remove_translation(mesh: &Mesh, v: &mut [f64]) {
    let m = mass_mean(mesh, v);
    for pair in v.chunks_exact_mut(2) {
        pair[0] -= m[0];
        pair[1] -= m[1];
    }
}

/// L-BFGS minimization of `F_h` from `init`.
pub fn minimize_fh(
    mesh: &Mesh,
    d: &Density,
    loads: &LoadAssembly,
    h: f64,
    init: &DisplacementField,
    opts: &NonlinearOptions,
) -> Result<NonlinearResult> {
    check(mesh, loads, init, h)?;
    let exec = opts.exec;
    let threshold = opts.threshold(loads);
    let inv_diag: Vec<f64> = stiffness_diagonal(mesh, d).iter().map(|x| 1.0 / x).collect();

    let mut x = init.values().to_vec();
    remove_translation(mesh, &mut x);
    let x_init = x.clone();
    let mut ev = evaluate_values(mesh, d, loads, &x, h, true, exec);
    if !(ev.min_det >= opts.det_floor) {
        return Err(Error::Inadmissible { min_det: ev.min_det });
    }
    let mut floor = ev.value;
    let mut trace = vec![ev.value];
    let mut barrier_activations = 0;
    let mut pairs: std::collections::VecDeque<(Vec<f64>, Vec<f64>, f64)> = Default::default();
    let mut status = Status::IterLimit;
    let mut stalled = false;
    let mut iterations = 0;

    let direction = |g: &[f64], pairs: &std::collections::VecDeque<(Vec<f64>, Vec<f64>, f64)>| -> Vec<f64> {
        let mut q: Vec<f64> = g.to_vec();
        let mut alphas = Vec::with_capacity(pairs.len());
        for (s, y, rho) in pairs.iter().rev() {
            let a = rho * dot(s, &q);
            for (qi, yi) in q.iter_mut().zip(y) {
                *qi -= a * yi;
            }
            alphas.push(a);
        }
        let gamma = match pairs.back() {
            Some((s, y, _)) => {
                let hy: f64 = y.iter().zip(&inv_diag).map(|(a, b)| a * a * b).sum();
                dot(s, y) / hy
            }
            None => 1.0,
        };
        let mut r: Vec<f64> = q.iter().zip(&inv_diag).map(|(a, b)| gamma * a * b).collect();
        for ((s, y, rho), a) in pairs.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &r);
            for (ri, si) in r.iter_mut().zip(s) {
                *ri += (a - b) * si;
            }
        }
        r.iter_mut().for_each(|v| *v = -*v);
        r
    };

    while iterations < opts.max_iter {
        let gnorm = dot(&ev.gradient, &ev.gradient).sqrt();
        if gnorm <= opts.grad_tol * (1.0 + ev.value.abs()) {
            status = Status::Converged;
            break;
        }
        iterations += 1;
        let mut dir = direction(&ev.gradient, &pairs);
        let mut slope = dot(&dir, &ev.gradient);
        if !(slope < 0.0) {
            pairs.clear();
            dir = direction(&ev.gradient, &pairs);
            slope = dot(&dir, &ev.gradient);
        }
        let mut accepted = None;
        for attempt in 0..2 {
            let mut t = 1.0;
            for _ in 0..80 {
                let trial: Vec<f64> = x.iter().zip(&dir).map(|(a, b)| a + t * b).collect();
                let tev = evaluate_values(mesh, d, loads, &trial, h, true, exec);
                if !(tev.min_det >= opts.det_floor) {
                    barrier_activations += 1;
                    t *= 0.5;
                    continue;
                }
                floor = floor.min(tev.value);
                if tev.value <= ev.value + opts.armijo * t * slope {
                    accepted = Some((trial, tev));
                    break;
                }
                t *= 0.5;
            }
            if accepted.is_some() || attempt == 1 || pairs.is_empty() {
                break;
            }
            pairs.clear();
            dir = direction(&ev.gradient, &pairs);
            slope = dot(&dir, &ev.gradient);
        }
        let Some((mut x_new, _)) = accepted else {
            stalled = true;
            break;
        };
        remove_translation(mesh, &mut x_new);
        // translations change neither ∇v nor L for equilibrated loads, but
        // re-evaluate so the stored state is exactly the gauged one
        let ev_new = evaluate_values(mesh, d, loads, &x_new, h, true, exec);
        floor = floor.min(ev_new.value);
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = ev_new.gradient.iter().zip(&ev.gradient).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if pairs.len() == opts.memory {
                pairs.pop_front();
            }
            pairs.push_back((s, y, 1.0 / sy));
        }
        x = x_new;
        ev = ev_new;
        trace.push(ev.value);
        if ev.value < -threshold {
            status = Status::Diverged;
            break;
        }
    }

    let field = DisplacementField::from_values(mesh, x.clone())?;
    let certificate = (status == Status::Diverged).then(|| {
        let diff: Vec<f64> = x.iter().zip(&x_init).map(|(a, b)| a - b).collect();
        let n = dot(&diff, &diff).sqrt();
        DivergenceCertificate {
            threshold,
            direction: DisplacementField::from_values(mesh, diff.iter().map(|v| v / n).collect())
                .expect("finite direction"),
            energy_trace: trace.clone(),
        }
    });
    Ok(NonlinearResult {
        status,
        field,
        fh_value: ev.value,
        grad_norm: dot(&ev.gradient, &ev.gradient).sqrt(),
        iterations,
        barrier_activations,
        min_det: ev.min_det,
        floor,
        stalled,
        trace,
        certificate,
    })
}

/// `√h · |⨍ skew ∇v|` (Frobenius).
pub fn w_proxy(mesh: &Mesh, v: &DisplacementField, h: f64) -> Result<f64> {
    let mut s = 0.0;
    for e in 0..mesh.n_elements() {
        let g = element_gradient(mesh, v.values(), e);
        s += mesh.area(e) * 0.5 * (g[0][1] - g[1][0]);
    }
    if v.values().len() != mesh.n_dofs() {
        return Err(Error::MeshMismatch { expected: mesh.n_dofs(), found: v.values().len() });
    }
    // skew part [[0, a], [−a, 0]] has norm √2 |a|
    Ok(h.sqrt() * 2f64.sqrt() * (s / mesh.total_area()).abs())
}

/// Number of test tensors in [`strain_moments`].
pub const N_MOMENTS: usize = 6;

/// `∫ E(v) : T_k` for `T = e1⊗e1, e2⊗e2, e1⊗e2 + e2⊗e1, x₁ I, x₂ I,
/// (x₁ + x₂)(e1⊗e2 + e2⊗e1)`, exact by the centroid rule.
pub fn strain_moments(mesh: &Mesh, v: &DisplacementField) -> Result<[f64; N_MOMENTS]> {
    let eps = strain(mesh, v)?;
    let mut m = [0.0; N_MOMENTS];
    for (e, s) in eps.iter().enumerate() {
        let a = mesh.area(e);
        let c = mesh.centroid(e);
        let (xx, yy, xy2) = (s.get(0, 0), s.get(1, 1), 2.0 * s.get(0, 1));
        m[0] += a * xx;
        m[1] += a * yy;
        m[2] += a * xy2;
        m[3] += a * c[0] * (xx + yy);
        m[4] += a * c[1] * (xx + yy);
        m[5] += a * (c[0] + c[1]) * xy2;
    }
    Ok(m)
}

fn distance(a: &[f64; N_MOMENTS], b: &[f64; N_MOMENTS]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub h: f64,
    pub fh: f64,
    pub w_proxy: f64,
    pub moments: [f64; N_MOMENTS],
    pub moment_dist: f64,
    pub iterations: usize,
    pub status: Status,
    pub grad_norm: f64,
    pub floor: f64,
    pub barrier_activations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub records: Vec<SweepRecord>,
    pub limit_min_f: f64,
    pub limit_w0: SkewParam,
    pub linear_min_e: f64,
    pub limit_moments: [f64; N_MOMENTS],
    /// Smallest `F_h` evaluated anywhere in the sweep.
    pub floor: f64,
    /// Set when a point diverged and the sweep stopped there.
    pub aborted: Option<String>,
    /// Last minimizer, for dumps.
    pub last_field: Option<DisplacementField>,
}

/// Minimizes `F_h` along a strictly decreasing `h_list`, warm-starting each
/// point from the previous minimizer and the first from the linear one.
pub fn h_sweep(
    mesh: &Mesh,
    d: &Density,
    loads: &LoadAssembly,
    h_list: &[f64],
    opts: &NonlinearOptions,
    classify_tol: f64,
) -> Result<Sweep> {
    if h_list.is_empty() {
        return Err(Error::InvalidArgument("empty h list".into()));
    }
    if h_list.iter().any(|h| !(*h > 0.0)) || h_list.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::InvalidArgument(format!("h list must be positive and strictly decreasing, got {h_list:?}")));
    }
    let class = classify_compatibility(loads, classify_tol);
    match class.compat {
        Compatibility::Strict => {}
        Compatibility::Incompatible { witness, witness_gap } => {
            return Err(Error::IncompatibleLoads { witness, witness_gap });
        }
        Compatibility::Weak { .. } => {
            return Err(Error::Refused(
                "h-sweep needs strictly compatible loads: under weak compatibility the limit has \
                 minimizers with W0 != 0 and the sweep has no unique target"
                    .into(),
            ));
        }
    }
    let lin = solve_linear(mesh, d, loads, None)?;
    let problem = LinearProblem::new(mesh, *d);
    let limit = minimize_f(&problem, loads, &LimitOptions { classify_tol, ..Default::default() })?;
    let limit_moments = strain_moments(mesh, &limit.field)?;

    let mut init = lin.field.clone();
    let mut records = Vec::with_capacity(h_list.len());
    let mut floor = f64::INFINITY;
    let mut aborted = None;
    let mut last_field = None;
    for &h in h_list {
        let r = minimize_fh(mesh, d, loads, h, &init, opts)?;
        floor = floor.min(r.floor);
        let moments = strain_moments(mesh, &r.field)?;
        records.push(SweepRecord {
            h,
            fh: r.fh_value,
            w_proxy: w_proxy(mesh, &r.field, h)?,
            moment_dist: distance(&moments, &limit_moments),
            moments,
            iterations: r.iterations,
            status: r.status,
            grad_norm: r.grad_norm,
            floor: r.floor,
            barrier_activations: r.barrier_activations,
        });
        if r.status == Status::Diverged {
            aborted = Some(format!(
                "minimization diverged at h = {h}: F_h = {:.6e} below -{:.6e} after {} iterations",
                r.fh_value,
                opts.threshold(loads),
                r.iterations
            ));
            last_field = Some(r.field);
            break;
        }
        init = r.field.clone();
        last_field = Some(r.field);
    }
    Ok(Sweep {
        records,
        limit_min_f: limit.min_f,
        limit_w0: limit.w0,
        linear_min_e: lin.energy,
        limit_moments,
        floor,
        aborted,
        last_field,
    })
}

/// Divergence threshold certified by the witness: the rotation field
/// `h⁻¹(R − I)x` with `R = exp(θ W)` reaches `F_h = −L(z_W)/h` at `θ = π/3`.
pub fn certified_threshold(witness_gap: f64, h: f64) -> f64 {
    witness_gap / h
}

/// Small rotation along the witness, a start that breaks the symmetry of
/// `v = 0` (where the gradient has no rotational component).
pub fn witness_start(mesh: &Mesh, h: f64, witness: &SkewParam, theta0: f64) -> Result<DisplacementField> {
    rotation_sequence(mesh, h, theta0, witness)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loads::{assemble_loads, LoadSpec, Traction, DEFAULT_TOL};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit() -> Density {
        Density::new(1.0, 1.0).unwrap()
    }

    fn random_admissible(m: &Mesh, rng: &mut ChaCha8Rng, h: f64, amp: f64) -> DisplacementField {
        loop {
            let base = rng.gen_range(-1.0..1.0);
            let vals: Vec<f64> = m
                .nodes()
                .iter()
                .flat_map(|x| [base * x[0] - 0.3 * x[1], 0.5 * x[0] + base * x[1]])
                .map(|b| b + amp * rng.gen_range(-1.0..1.0))
                .collect();
            let v = DisplacementField::from_values(m, vals).unwrap();
            let loads = LoadAssembly::zero(m.n_dofs());
            if evaluate(m, &unit(), &loads, &v, h, Exec::Sequential).unwrap().min_det > 0.05 {
                return v;
            }
        }
    }

    #[test]
    fn gradient_matches_central_differences() {
        let m = Mesh::unit_square(3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        let d = Density::new(1.2, 0.6).unwrap();
        let loads = assemble_loads(&m, &LoadSpec::pressure(&m, 3.0)).unwrap();
        for _ in 0..20 {
            let h = 0.1;
            let v = random_admissible(&m, &mut rng, h, 0.3);
            let g = grad_fh(&m, &d, &loads, &v, h).unwrap();
            let norm = v.values().iter().map(|x| x * x).sum::<f64>().sqrt();
            let step = 1e-6 * (1.0 + norm);
            let mut err = 0.0;
            for i in 0..m.n_dofs() {
                let mut p = v.values().to_vec();
                let mut q = v.values().to_vec();
                p[i] += step;
                q[i] -= step;
                let fp = eval_fh(&m, &d, &loads, &DisplacementField::from_values(&m, p).unwrap(), h).unwrap();
                let fq = eval_fh(&m, &d, &loads, &DisplacementField::from_values(&m, q).unwrap(), h).unwrap();
                let fd = (fp - fq) / (2.0 * step);
                err += (fd - g[i]) * (fd - g[i]);
            }
            let gn = g.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!(err.sqrt() <= 1e-6 * gn, "fd error {} vs |g| {gn}", err.sqrt());
        }
    }

    #[test]
    fn gradient_at_rest_is_minus_load() {
        let m = Mesh::unit_square(4).unwrap();
        let zero = LoadAssembly::zero(m.n_dofs());
        let g = grad_fh(&m, &unit(), &zero, &DisplacementField::zeros(&m), 0.1).unwrap();
        assert!(g.iter().all(|x| *x == 0.0));
        let loads = assemble_loads(&m, &LoadSpec::pressure(&m, 2.0)).unwrap();
        let g = grad_fh(&m, &unit(), &loads, &DisplacementField::zeros(&m), 0.1).unwrap();
        for (a, b) in g.iter().zip(&loads.nodal) {
            assert_eq!(*a, -*b);
        }
        assert_eq!(eval_fh(&m, &unit(), &loads, &DisplacementField::zeros(&m), 0.3).unwrap(), 0.0);
    }

    #[test]
    fn inadmissible_states() {
        let m = Mesh::unit_square(2).unwrap();
        let loads = LoadAssembly::zero(m.n_dofs());
        // det(I + h∇v) = (1 − 2h)(1) < 0 for h = 1
        let v = DisplacementField::from_fn(&m, |x| [-2.0 * x[0], 0.0]);
        assert_eq!(eval_fh(&m, &unit(), &loads, &v, 1.0).unwrap(), f64::INFINITY);
        assert!(matches!(grad_fh(&m, &unit(), &loads, &v, 1.0), Err(Error::Inadmissible { .. })));
        assert!(eval_fh(&m, &unit(), &loads, &v, 0.0).is_err());
    }

    #[test]
    fn explicit_sequences() {
        let m = Mesh::unit_square(4).unwrap();
        let loads = assemble_loads(&m, &LoadSpec::pressure(&m, -1.0)).unwrap();
        for h in [0.2, 0.1, 0.05] {
            let v = rotation_sequence(&m, h, std::f64::consts::PI / 3.0, &SkewParam::J).unwrap();
            let f = eval_fh(&m, &unit(), &loads, &v, h).unwrap();
            let expected = -m.total_area() / h;
            assert!(((f - expected) / expected).abs() <= 1e-12, "h={h}: {f}");
        }
        let zero = LoadAssembly::zero(m.n_dofs());
        for h in [1e-2, 1e-3, 1e-4] {
            let v = skew_blowup_sequence(&m, h, 0.25).unwrap();
            let f = eval_fh(&m, &Density::quadratic(), &zero, &v, h).unwrap();
            assert!(((f - 2.0 * h) / (2.0 * h)).abs() <= 1e-12, "h={h}: {f}");
        }
    }

    #[test]
    fn stored_energy_is_frame_indifferent() {
        let m = Mesh::unit_square(4).unwrap();
        let d = Density::new(0.7, 1.9).unwrap();
        let zero = LoadAssembly::zero(m.n_dofs());
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..10 {
            let h = rng.gen_range(0.02..0.3);
            let v = random_admissible(&m, &mut rng, h, 0.2);
            let r = rodrigues(rng.gen_range(-3.0..3.0), &SkewParam::J).unwrap();
            // y = x + h v ↦ R y, i.e. v ↦ (R(x + h v) − x)/h
            let mut vals = Vec::with_capacity(m.n_dofs());
            for (i, x) in m.nodes().iter().enumerate() {
                let vi = v.node(i);
                let y = r.mul_vec(&[x[0] + h * vi[0], x[1] + h * vi[1]]);
                vals.push((y[0] - x[0]) / h);
                vals.push((y[1] - x[1]) / h);
            }
            let w = DisplacementField::from_values(&m, vals).unwrap();
            let a = evaluate(&m, &d, &zero, &v, h, Exec::Sequential).unwrap().stored;
            let b = evaluate(&m, &d, &zero, &w, h, Exec::Sequential).unwrap().stored;
            assert!(((a - b) / a).abs() <= 1e-10);
        }
    }

    #[test]
    fn small_h_limit_is_linear_energy() {
        let m = Mesh::unit_square(4).unwrap();
        let d = unit();
        let zero = LoadAssembly::zero(m.n_dofs());
        let v = DisplacementField::from_fn(&m, |x| [0.3 * x[0] * x[1] + 0.1 * x[1], -0.2 * x[0] * x[0] + 0.4 * x[1]]);
        let lin: f64 = strain(&m, &v).unwrap().iter().enumerate().map(|(e, s)| m.area(e) * d.v0(s)).sum();
        let err = |h: f64| (eval_fh(&m, &d, &zero, &v, h).unwrap() - lin).abs();
        let c = err(1e-4) / 1e-4;
        assert!(c > 0.0);
        for h in [1e-2, 1e-3] {
            assert!(err(h) <= 2.0 * c * h, "h={h}");
            assert!((err(h) / h - c).abs() <= 0.1 * c);
        }
    }

    #[test]
    fn parallel_evaluation_is_bit_identical() {
        let m = Mesh::unit_square(16).unwrap();
        let loads = assemble_loads(&m, &LoadSpec::pressure(&m, 1.0)).unwrap();
        let v = DisplacementField::from_fn(&m, |x| [0.2 * x[0] * x[1], 0.1 * x[0] - 0.3 * x[1] * x[1]]);
        let a = evaluate(&m, &unit(), &loads, &v, 0.1, Exec::Sequential).unwrap();
        let b = evaluate(&m, &unit(), &loads, &v, 0.1, Exec::Parallel).unwrap();
        assert_eq!(a.value, b.value);
        assert_eq!(a.gradient, b.gradient);
    }

    #[test]
    fn zero_loads_stay_at_rest() {
        let m = Mesh::unit_square(4).unwrap();
        let zero = assemble_loads(&m, &LoadSpec::zero(&m.tags())).unwrap();
        let r = minimize_fh(&m, &unit(), &zero, 0.1, &DisplacementField::zeros(&m), &NonlinearOptions::default()).unwrap();
        assert_eq!(r.status, Status::Converged);
        assert_eq!(r.fh_value, 0.0);
        assert!(r.field.values().iter().all(|x| x.abs() < 1e-12));
    }

    /// `min_γ 16(γ + hγ²/2)² − 32γ` by Newton on the cubic derivative.
    fn homogeneous_oracle(h: f64) -> f64 {
        let f = |g: f64| 16.0 * (g + 0.5 * h * g * g).powi(2) - 32.0 * g;
        let mut g = 1.0;
        for _ in 0..100 {
            let a = g + 0.5 * h * g * g;
            let d1 = 32.0 * a * (1.0 + h * g) - 32.0;
            let d2 = 32.0 * (1.0 + h * g).powi(2) + 32.0 * a * h;
            g -= d1 / d2;
        }
        f(g)
    }

    #[test]
    fn oracle_value() {
        assert!((homogeneous_oracle(0.1) + 14.655).abs() < 5e-4);
    }

    #[test]
    fn tension_reaches_the_homogeneous_oracle() {
        let m = Mesh::unit_square(8).unwrap();
        let d = unit();
        let loads = assemble_loads(&m, &LoadSpec::pressure(&m, 16.0)).unwrap();
        let init = solve_linear(&m, &d, &loads, None).unwrap().field;
        let r = minimize_fh(&m, &d, &loads, 0.1, &init, &NonlinearOptions::default()).unwrap();
        assert_eq!(r.status, Status::Converged, "{r:?}");
        assert!(r.fh_value <= homogeneous_oracle(0.1) + 1e-8);
        // the translation gauge moves L by rounding only
        assert!(r.trace.windows(2).all(|w| w[1] <= w[0] + 1e-13 * (1.0 + w[0].abs())));
        assert!(r.floor <= r.fh_value && r.floor.is_finite());
    }

    #[test]
    fn compression_diverges_along_the_witness() {
        let m = Mesh::unit_square(4).unwrap();
        let d = unit();
        let loads = assemble_loads(&m, &LoadSpec::pressure(&m, -1.0)).unwrap();
        let h = 0.1;
        let opts = NonlinearOptions { divergence_threshold: Some(certified_threshold(1.0, h)), ..Default::default() };
        let init = witness_start(&m, h, &SkewParam::J, 0.05).unwrap();
        let r = minimize_fh(&m, &d, &loads, h, &init, &opts).unwrap();
        assert_eq!(r.status, Status::Diverged, "{:?} after {}", r.fh_value, r.iterations);
        let cert = r.certificate.unwrap();
        assert!(cert.energy_trace.last().unwrap() < &-10.0);
    }

    #[test]
    fn sweep_refuses_non_strict_loads() {
        let m = Mesh::unit_square(4).unwrap();
        let d = unit();
        let comp = assemble_loads(&m, &LoadSpec::pressure(&m, -1.0)).unwrap();
        assert!(matches!(
            h_sweep(&m, &d, &comp, &[0.1], &NonlinearOptions::default(), DEFAULT_TOL),
            Err(Error::IncompatibleLoads { .. })
        ));
        let spec = LoadSpec::default()
            .with("right", Traction::Constant([0.0, 1.0]))
            .with("left", Traction::Constant([0.0, -1.0]))
            .with("top", Traction::Constant([1.0, 0.0]))
            .with("bottom", Traction::Constant([-1.0, 0.0]));
        let weak = assemble_loads(&m, &spec).unwrap();
        assert!(matches!(
            h_sweep(&m, &d, &weak, &[0.1], &NonlinearOptions::default(), DEFAULT_TOL),
            Err(Error::Refused(_))
        ));
        let tension = assemble_loads(&m, &LoadSpec::pressure(&m, 1.0)).unwrap();
        assert!(h_sweep(&m, &d, &tension, &[0.1, 0.2], &NonlinearOptions::default(), DEFAULT_TOL).is_err());
    }

    #[test]
    fn small_tension_sweep() {
        let m = Mesh::unit_square(6).unwrap();
        let d = unit();
        let loads = assemble_loads(&m, &LoadSpec::pressure(&m, 16.0)).unwrap();
        let s = h_sweep(&m, &d, &loads, &[0.2, 0.1, 0.05], &NonlinearOptions::default(), DEFAULT_TOL).unwrap();
        assert!(s.aborted.is_none());
        let gaps: Vec<f64> = s.records.iter().map(|r| (r.fh + 16.0).abs()).collect();
        assert!(gaps.windows(2).all(|w| w[1] < w[0]), "{gaps:?}");
        for r in &s.records {
            assert_eq!(r.status, Status::Converged);
            assert!(r.fh <= homogeneous_oracle(r.h) + 1e-8);
            assert!(r.w_proxy <= 1e-4);
        }
        assert!(s.records.windows(2).all(|w| w[1].moment_dist < w[0].moment_dist));
        assert!(s.floor.is_finite());
    }

    #[test]
    fn w_proxy_of_rotation() {
        let m = Mesh::unit_square(3).unwrap();
        let v = DisplacementField::from_fn(&m, |x| [0.5 * x[1], -0.5 * x[0]]);
        // skew ∇v = 0.5 J, |0.5 J| = 0.5 √2
        assert!((w_proxy(&m, &v, 0.04).unwrap() - 0.2 * 0.5 * 2f64.sqrt()).abs() < 1e-14);
        let mom = strain_moments(&m, &DisplacementField::from_fn(&m, |x| x)).unwrap();
        assert!((mom[0] - 1.0).abs() < 1e-14 && (mom[1] - 1.0).abs() < 1e-14);
        assert!(mom[2].abs() < 1e-14 && mom[3].abs() < 1e-14 && mom[4].abs() < 1e-14);
    }
}
