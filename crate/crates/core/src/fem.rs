//! P1 vector finite elements for linear elasticity under pure traction.
//!
//! The stiffness matrix is singular with the infinitesimal rigid fields as
//! its kernel. Solves run preconditioned conjugate gradients on the
//! Euclidean complement of that kernel and return the representative whose
//! rigid component vanishes in the mass inner product.

use serde::{Deserialize, Serialize};

use crate::algebra::{Density, SymMat};
use crate::error::{Error, Result};
use crate::loads::{check_equilibrated, eval_l, LoadAssembly, DEFAULT_TOL};
use crate::mesh::Mesh;
use crate::par::Exec;

/// Nodal vector field, interleaved `[vx0, vy0, vx1, vy1, ...]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DisplacementField {
    values: Vec<f64>,
}

impl DisplacementField {
    pub fn zeros(mesh: &Mesh) -> Self {
        DisplacementField { values: vec![0.0; mesh.n_dofs()] }
    }

    /// Nodal interpolant of `f`.
    pub fn from_fn(mesh: &Mesh, f: impl Fn([f64; 2]) -> [f64; 2]) -> Self {
        let mut values = Vec::with_capacity(mesh.n_dofs());
        for &x in mesh.nodes() {
            values.extend_from_slice(&f(x));
        }
        DisplacementField { values }
    }

    pub fn from_values(mesh: &Mesh, values: Vec<f64>) -> Result<Self> {
        if values.len() != mesh.n_dofs() {
            return Err(Error::MeshMismatch { expected: mesh.n_dofs(), found: values.len() });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite nodal value at dof {i}")));
        }
        Ok(DisplacementField { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn node(&self, i: usize) -> [f64; 2] {
        [self.values[2 * i], self.values[2 * i + 1]]
    }

    pub fn add(&self, other: &DisplacementField) -> Self {
        self.axpy(1.0, other)
    }

    /// `self + a · other`.
    pub fn axpy(&self, a: f64, other: &DisplacementField) -> Self {
        let values = self.values.iter().zip(&other.values).map(|(x, y)| x + a * y).collect();
        DisplacementField { values }
    }

    pub fn scaled(&self, a: f64) -> Self {
        DisplacementField { values: self.values.iter().map(|x| a * x).collect() }
    }

    fn check(&self, mesh: &Mesh) -> Result<()> {
        if self.values.len() != mesh.n_dofs() {
            return Err(Error::MeshMismatch { expected: mesh.n_dofs(), found: self.values.len() });
        }
        Ok(())
    }
}

/// `∇v` on element `e`, `g[i][j] = ∂v_i/∂x_j`.
pub(crate) fn element_gradient(mesh: &Mesh, values: &[f64], e: usize) -> [[f64; 2]; 2] {
    let tri = mesh.elements()[e];
    let sg = mesh.shape_grads(e);
    let mut g = [[0.0; 2]; 2];
    for k in 0..3 {
        let (vx, vy) = (values[2 * tri[k]], values[2 * tri[k] + 1]);
        g[0][0] += vx * sg[k][0];
        g[0][1] += vx * sg[k][1];
        g[1][0] += vy * sg[k][0];
        g[1][1] += vy * sg[k][1];
    }
    g
}

/// Per-element `∇v`.
pub fn gradients(mesh: &Mesh, v: &DisplacementField) -> Result<Vec<[[f64; 2]; 2]>> {
    v.check(mesh)?;
    Ok((0..mesh.n_elements()).map(|e| element_gradient(mesh, &v.values, e)).collect())
}

/// Per-element strain `E(v) = sym ∇v`.
pub fn strain(mesh: &Mesh, v: &DisplacementField) -> Result<Vec<SymMat>> {
    v.check(mesh)?;
    Ok((0..mesh.n_elements())
        .map(|e| {
            let g = element_gradient(mesh, &v.values, e);
            SymMat::new2(g[0][0], g[1][1], 0.5 * (g[0][1] + g[1][0]))
        })
        .collect())
}

/// `∫ u · v` with the consistent P1 mass matrix.
pub fn mass_inner(mesh: &Mesh, u: &[f64], v: &[f64]) -> f64 {
    let mut s = 0.0;
    for (e, tri) in mesh.elements().iter().enumerate() {
        let w = mesh.area(e) / 12.0;
        for a in 0..3 {
            for b in 0..3 {
                let m = if a == b { 2.0 * w } else { w };
                let (i, j) = (tri[a], tri[b]);
                s += m * (u[2 * i] * v[2 * j] + u[2 * i + 1] * v[2 * j + 1]);
            }
        }
    }
    s
}

/// `∫ v` per component.
pub fn mass_mean(mesh: &Mesh, v: &[f64]) -> [f64; 2] {
    let mut s = [0.0; 2];
    for (e, tri) in mesh.elements().iter().enumerate() {
        let w = mesh.area(e) / 3.0;
        for &i in tri {
            s[0] += w * v[2 * i];
            s[1] += w * v[2 * i + 1];
        }
    }
    let a = mesh.total_area();
    [s[0] / a, s[1] / a]
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Infinitesimal rigid fields `{e1, e2, J(x − x̄)}`.
#[derive(Clone, Debug)]
pub struct RigidBasis {
    /// Orthonormal in the mass inner product.
    mass: [Vec<f64>; 3],
    /// Orthonormal in the Euclidean inner product of nodal vectors.
    euclid: [Vec<f64>; 3],
}

fn gram_schmidt(raw: &[Vec<f64>; 3], ip: impl Fn(&[f64], &[f64]) -> f64) -> [Vec<f64>; 3] {
    let mut out: [Vec<f64>; 3] = Default::default();
    for k in 0..3 {
        let mut v = raw[k].clone();
        // two passes keep the result orthogonal to rounding level
        for _ in 0..2 {
            for q in out.iter().take(k) {
                let c = ip(&v, q);
                for (x, y) in v.iter_mut().zip(q) {
                    *x -= c * y;
                }
            }
        }
        let n = ip(&v, &v).sqrt();
        out[k] = v.into_iter().map(|x| x / n).collect();
    }
    out
}

impl RigidBasis {
    pub fn new(mesh: &Mesh) -> Self {
        let c = mesh.barycenter();
        let raw = [
            DisplacementField::from_fn(mesh, |_| [1.0, 0.0]).values,
            DisplacementField::from_fn(mesh, |_| [0.0, 1.0]).values,
            // J(x − x̄) with J = [[0, 1], [−1, 0]]
            DisplacementField::from_fn(mesh, |x| [x[1] - c[1], -(x[0] - c[0])]).values,
        ];
        RigidBasis {
            mass: gram_schmidt(&raw, |a, b| mass_inner(mesh, a, b)),
            euclid: gram_schmidt(&raw, dot),
        }
    }

    pub fn dim(&self) -> usize {
        3
    }

    /// Mass-orthonormal basis fields.
    pub fn fields(&self) -> &[Vec<f64>; 3] {
        &self.mass
    }

    /// `∫ z_a · z_b`.
    pub fn gram(&self, mesh: &Mesh) -> [[f64; 3]; 3] {
        let mut g = [[0.0; 3]; 3];
        for a in 0..3 {
            for b in 0..3 {
                g[a][b] = mass_inner(mesh, &self.mass[a], &self.mass[b]);
            }
        }
        g
    }

    /// Removes the rigid component in the mass inner product (the gauge).
    pub fn gauge(&self, mesh: &Mesh, v: &mut [f64]) {
        for q in &self.mass {
            let c = mass_inner(mesh, v, q);
            for (x, y) in v.iter_mut().zip(q) {
                *x -= c * y;
            }
        }
    }

    /// Euclidean projection onto the complement of the rigid nodal vectors.
    pub fn project(&self, v: &mut [f64]) {
        for q in &self.euclid {
            let c = dot(v, q);
            for (x, y) in v.iter_mut().zip(q) {
                *x -= c * y;
            }
        }
    }
}

pub fn rigid_basis(mesh: &Mesh) -> RigidBasis {
    RigidBasis::new(mesh)
}

/// Compressed sparse row matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Csr {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl Csr {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let row = &self.cols[self.row_ptr[i]..self.row_ptr[i + 1]];
        match row.binary_search(&j) {
            Ok(k) => self.vals[self.row_ptr[i] + k],
            Err(_) => 0.0,
        }
    }

    fn add(&mut self, i: usize, j: usize, v: f64) {
        let start = self.row_ptr[i];
        let k = self.cols[start..self.row_ptr[i + 1]]
            .binary_search(&j)
            .expect("entry outside the sparsity pattern");
        self.vals[start + k] += v;
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    /// `y = A x`, rows split across threads under the parallel policy.
    pub fn matvec(&self, x: &[f64], y: &mut [f64], exec: Exec) {
        exec.fill(y, |i| {
            let (s, e) = (self.row_ptr[i], self.row_ptr[i + 1]);
            self.cols[s..e].iter().zip(&self.vals[s..e]).map(|(&j, a)| a * x[j]).sum()
        });
    }

    /// Largest `|A_ij − A_ji|`.
    pub fn asymmetry(&self) -> f64 {
        let mut m: f64 = 0.0;
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                m = m.max((self.vals[k] - self.get(self.cols[k], i)).abs());
            }
        }
        m
    }

    pub fn max_abs(&self) -> f64 {
        self.vals.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Node-adjacency pattern expanded to two dofs per node.
    fn pattern(mesh: &Mesh) -> Csr {
        let nn = mesh.n_nodes();
        let mut adj: Vec<Vec<usize>> = (0..nn).map(|i| vec![i]).collect();
        for tri in mesh.elements() {
            for &a in tri {
                for &b in tri {
                    adj[a].push(b);
                }
            }
        }
        let n = 2 * nn;
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        row_ptr.push(0);
        for nb in adj.iter_mut() {
            nb.sort_unstable();
            nb.dedup();
            for _ in 0..2 {
                for &j in nb.iter() {
                    cols.push(2 * j);
                    cols.push(2 * j + 1);
                }
                row_ptr.push(cols.len());
            }
        }
        let vals = vec![0.0; cols.len()];
        Csr { n, row_ptr, cols, vals }
    }
}

/// `Bᵀ D B · area` for the engineering-shear Voigt form of `v0`.
pub(crate) fn element_stiffness(mesh: &Mesh, d: &Density, e: usize) -> [[f64; 6]; 6] {
    let (mu, la) = (d.mu(), d.lambda());
    let dm = [
        [8.0 * mu + 4.0 * la, 4.0 * la, 0.0],
        [4.0 * la, 8.0 * mu + 4.0 * la, 0.0],
        [0.0, 0.0, 4.0 * mu],
    ];
    let g = mesh.shape_grads(e);
    // rows εxx, εyy, γxy; columns (x0, y0, x1, y1, x2, y2)
    let mut b = [[0.0; 6]; 3];
    for k in 0..3 {
        b[0][2 * k] = g[k][0];
        b[1][2 * k + 1] = g[k][1];
        b[2][2 * k] = g[k][1];
        b[2][2 * k + 1] = g[k][0];
    }
    let mut db = [[0.0; 6]; 3];
    for r in 0..3 {
        for c in 0..6 {
            db[r][c] = (0..3).map(|s| dm[r][s] * b[s][c]).sum();
        }
    }
    let area = mesh.area(e);
    let mut ke = [[0.0; 6]; 6];
    for i in 0..6 {
        for j in i..6 {
            let v = area * (0..3).map(|r| b[r][i] * db[r][j]).sum::<f64>();
            ke[i][j] = v;
            ke[j][i] = v;
        }
    }
    ke
}

/// Sparse `K` with `½ v̂ᵀ K v̂ = ∫ v0(E(v))`.
#[derive(Clone, Debug)]
pub struct StiffnessOperator {
    pub matrix: Csr,
}

impl StiffnessOperator {
    pub fn apply(&self, x: &[f64], exec: Exec) -> Vec<f64> {
        let mut y = vec![0.0; x.len()];
        self.matrix.matvec(x, &mut y, exec);
        y
    }

    /// `v̂ᵀ K v̂`.
    pub fn quad(&self, x: &[f64], exec: Exec) -> f64 {
        dot(x, &self.apply(x, exec))
    }
}

pub fn assemble_stiffness(mesh: &Mesh, d: &Density) -> StiffnessOperator {
    assemble_stiffness_with(mesh, d, Exec::default())
}

/// Element blocks are computed under `exec` and scattered sequentially.
pub fn assemble_stiffness_with(mesh: &Mesh, d: &Density, exec: Exec) -> StiffnessOperator {
    let blocks = exec.map_range(mesh.n_elements(), |e| element_stiffness(mesh, d, e));
    let mut k = Csr::pattern(mesh);
    for (tri, ke) in mesh.elements().iter().zip(&blocks) {
        let dofs = [2 * tri[0], 2 * tri[0] + 1, 2 * tri[1], 2 * tri[1] + 1, 2 * tri[2], 2 * tri[2] + 1];
        for a in 0..6 {
            for b in 0..6 {
                k.add(dofs[a], dofs[b], ke[a][b]);
            }
        }
    }
    StiffnessOperator { matrix: k }
}

/// `∫ dv0(B) · E(φ)` for every nodal basis field `φ`, `B` constant.
pub fn eigenstrain_load(mesh: &Mesh, d: &Density, b0: &SymMat) -> Vec<f64> {
    let s = d.dv0(b0);
    let (sxx, syy, sxy) = (s.get(0, 0), s.get(1, 1), s.get(0, 1));
    let mut out = vec![0.0; mesh.n_dofs()];
    for (e, tri) in mesh.elements().iter().enumerate() {
        let a = mesh.area(e);
        let g = mesh.shape_grads(e);
        for k in 0..3 {
            out[2 * tri[k]] += a * (sxx * g[k][0] + sxy * g[k][1]);
            out[2 * tri[k] + 1] += a * (sxy * g[k][0] + syy * g[k][1]);
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    /// Stop when `‖b − K x‖ ≤ rel_tol ‖b‖`.
    pub rel_tol: f64,
    /// Defaults to `20 · #dof`.
    pub max_iter: Option<usize>,
    /// Relative tolerance of the equilibration precondition.
    pub eq_tol: f64,
    pub exec: Exec,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions { rel_tol: 1e-10, max_iter: None, eq_tol: DEFAULT_TOL, exec: Exec::default() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearSolution {
    pub field: DisplacementField,
    /// `∫ v0(E(v) − B0) − L(v)`.
    pub energy: f64,
    pub iterations: usize,
    pub rel_residual: f64,
}

/// Mesh, density and the assembled operators shared by repeated solves.
#[derive(Clone, Debug)]
pub struct LinearProblem<'m> {
    mesh: &'m Mesh,
    density: Density,
    stiffness: StiffnessOperator,
    rigid: RigidBasis,
    inv_diag: Vec<f64>,
}

impl<'m> LinearProblem<'m> {
    pub fn new(mesh: &'m Mesh, density: Density) -> Self {
        Self::with_exec(mesh, density, Exec::default())
    }

    pub fn with_exec(mesh: &'m Mesh, density: Density, exec: Exec) -> Self {
        let stiffness = assemble_stiffness_with(mesh, &density, exec);
        let inv_diag = stiffness.matrix.diag().iter().map(|d| 1.0 / d).collect();
        LinearProblem { mesh, density, stiffness, rigid: RigidBasis::new(mesh), inv_diag }
    }

    pub fn mesh(&self) -> &'m Mesh {
        self.mesh
    }

    pub fn density(&self) -> &Density {
        &self.density
    }

    pub fn stiffness(&self) -> &StiffnessOperator {
        &self.stiffness
    }

    pub fn rigid(&self) -> &RigidBasis {
        &self.rigid
    }

    /// `∫ v0(E(v) − B0) − L(v)`, summed elementwise.
    pub fn energy(&self, loads: &LoadAssembly, v: &DisplacementField, b0: Option<&SymMat>) -> Result<f64> {
        let eps = strain(self.mesh, v)?;
        let zero = SymMat::zeros(2);
        let b0 = b0.unwrap_or(&zero);
        let stored: f64 = eps
            .iter()
            .enumerate()
            .map(|(e, s)| self.mesh.area(e) * self.density.v0(&(*s - *b0)))
            .sum();
        Ok(stored - eval_l(loads, v)?)
    }

    /// Minimizes `∫ v0(E(v) − B0) − L(v)` over fields with no rigid
    /// component.
    pub fn solve(&self, loads: &LoadAssembly, b0: Option<&SymMat>, opts: &SolveOptions) -> Result<LinearSolution> {
        if loads.n_dofs() != self.mesh.n_dofs() {
            return Err(Error::MeshMismatch { expected: self.mesh.n_dofs(), found: loads.n_dofs() });
        }
        let eq = check_equilibrated(loads, opts.eq_tol);
        if !eq.equilibrated {
            return Err(Error::NotEquilibrated {
                force_residual: eq.force_residual,
                torque_residual: eq.torque_residual,
            });
        }
        let mut b = loads.nodal.clone();
        if let Some(b0) = b0 {
            for (x, y) in b.iter_mut().zip(eigenstrain_load(self.mesh, &self.density, b0)) {
                *x += y;
            }
        }
        self.rigid.project(&mut b);
        let (mut x, iterations, rel_residual) = self.pcg(&b, opts)?;
        self.rigid.gauge(self.mesh, &mut x);
        let field = DisplacementField { values: x };
        let energy = self.energy(loads, &field, b0)?;
        Ok(LinearSolution { field, energy, iterations, rel_residual })
    }

    /// Jacobi-preconditioned CG with the preconditioned residual projected
    /// back onto the range of `K`.
    fn pcg(&self, b: &[f64], opts: &SolveOptions) -> Result<(Vec<f64>, usize, f64)> {
        let n = b.len();
        let exec = opts.exec;
        let bnorm = dot(b, b).sqrt();
        let mut x = vec![0.0; n];
        if bnorm == 0.0 {
            return Ok((x, 0, 0.0));
        }
        let max_iter = opts.max_iter.unwrap_or(20 * n);
        let precond = |r: &[f64]| {
            let mut z: Vec<f64> = r.iter().zip(&self.inv_diag).map(|(a, d)| a * d).collect();
            self.rigid.project(&mut z);
            z
        };
        let mut r = b.to_vec();
        let mut z = precond(&r);
        let mut p = z.clone();
        let mut rz = dot(&r, &z);
        let mut ap = vec![0.0; n];
        let mut rel = 1.0;
        for it in 1..=max_iter {
            self.stiffness.matrix.matvec(&p, &mut ap, exec);
            let pap = dot(&p, &ap);
            if !(pap > 0.0) {
                break;
            }
            let alpha = rz / pap;
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            rel = dot(&r, &r).sqrt() / bnorm;
            if rel <= opts.rel_tol {
                // confirm with the true residual
                let mut kx = vec![0.0; n];
                self.stiffness.matrix.matvec(&x, &mut kx, exec);
                let mut res: Vec<f64> = b.iter().zip(&kx).map(|(a, c)| a - c).collect();
                self.rigid.project(&mut res);
                let true_rel = dot(&res, &res).sqrt() / bnorm;
                if true_rel <= opts.rel_tol {
                    return Ok((x, it, true_rel));
                }
                r = res;
                rel = true_rel;
            }
            z = precond(&r);
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
        }
        Err(Error::NoConvergence { iterations: max_iter, residual: rel })
    }
}

/// One-shot linear solve.
pub fn solve_linear(mesh: &Mesh, d: &Density, loads: &LoadAssembly, b0: Option<&SymMat>) -> Result<LinearSolution> {
    LinearProblem::new(mesh, *d).solve(loads, b0, &SolveOptions::default())
}
