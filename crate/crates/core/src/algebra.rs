//! Dense 2×2 / 3×3 algebra and the Green–St.Venant energy densities.
//!
//! Skew convention: in 2D the unit skew matrix is `J = e1⊗e2 − e2⊗e1`,
//! i.e. `J = [[0, 1], [-1, 0]]`, so `J e1 = −e2` and a planar parameter `λ`
//! materializes as `W = λ J` with `|W|² = 2λ²`. In 3D the axis vector `w`
//! materializes as the cross-product matrix, `W x = w × x`, with
//! `|W|² = 2|w|²`.

use serde::{Deserialize, Serialize};
use std::ops::{Add, Mul, Neg, Sub};

use crate::error::{Error, Result};

/// Dense real matrix of dimension 2 or 3.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mat {
    dim: usize,
    m: [[f64; 3]; 3],
}

impl Mat {
    pub fn zeros(dim: usize) -> Self {
        assert!(dim == 2 || dim == 3, "dimension must be 2 or 3, got {dim}");
        Mat { dim, m: [[0.0; 3]; 3] }
    }

    pub fn identity(dim: usize) -> Self {
        let mut a = Self::zeros(dim);
        for i in 0..dim {
            a.m[i][i] = 1.0;
        }
        a
    }

    pub fn from_rows2(rows: [[f64; 2]; 2]) -> Self {
        let mut a = Self::zeros(2);
        for i in 0..2 {
            for j in 0..2 {
                a.m[i][j] = rows[i][j];
            }
        }
        a
    }

    pub fn from_rows3(rows: [[f64; 3]; 3]) -> Self {
        Mat { dim: 3, m: rows }
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let mut a = Self::zeros(diag.len());
        for (i, d) in diag.iter().enumerate() {
            a.m[i][i] = *d;
        }
        a
    }

    /// `a ⊗ b`, entries `a_i b_j`.
    pub fn outer(a: &[f64], b: &[f64]) -> Self {
        assert_eq!(a.len(), b.len());
        let mut o = Self::zeros(a.len());
        for i in 0..a.len() {
            for j in 0..b.len() {
                o.m[i][j] = a[i] * b[j];
            }
        }
        o
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.m[i][j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.m[i][j] = v;
    }

    pub fn rows2(&self) -> [[f64; 2]; 2] {
        assert_eq!(self.dim, 2);
        [[self.m[0][0], self.m[0][1]], [self.m[1][0], self.m[1][1]]]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.dim).map(|i| self.m[i][..self.dim].to_vec()).collect()
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.dim);
        for i in 0..self.dim {
            for j in 0..self.dim {
                t.m[i][j] = self.m[j][i];
            }
        }
        t
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.m[i][i]).sum()
    }

    pub fn det(&self) -> f64 {
        let m = &self.m;
        match self.dim {
            2 => m[0][0] * m[1][1] - m[0][1] * m[1][0],
            _ => {
                m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
                    - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                    + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
            }
        }
    }

    /// Frobenius inner product `A·B = Σ A_ij B_ij`.
    pub fn dot(&self, other: &Mat) -> f64 {
        assert_eq!(self.dim, other.dim);
        let mut s = 0.0;
        for i in 0..self.dim {
            for j in 0..self.dim {
                s += self.m[i][j] * other.m[i][j];
            }
        }
        s
    }

    /// `|A|² = Tr(AᵀA)`.
    pub fn norm_sq(&self) -> f64 {
        self.dot(self)
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn scale(&self, s: f64) -> Self {
        let mut a = *self;
        for i in 0..self.dim {
            for j in 0..self.dim {
                a.m[i][j] *= s;
            }
        }
        a
    }

    pub fn sym(&self) -> SymMat {
        SymMat::from_mat(self)
    }

    pub fn skew(&self) -> Mat {
        (*self - self.transpose()).scale(0.5)
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.dim);
        (0..self.dim)
            .map(|i| (0..self.dim).map(|j| self.m[i][j] * x[j]).sum())
            .collect()
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        let mut s: f64 = 0.0;
        for i in 0..self.dim {
            for j in 0..self.dim {
                s = s.max(self.m[i][j].abs());
            }
        }
        s
    }
}

impl Add for Mat {
    type Output = Mat;
    fn add(self, rhs: Mat) -> Mat {
        assert_eq!(self.dim, rhs.dim);
        let mut a = self;
        for i in 0..self.dim {
            for j in 0..self.dim {
                a.m[i][j] += rhs.m[i][j];
            }
        }
        a
    }
}

impl Sub for Mat {
    type Output = Mat;
    fn sub(self, rhs: Mat) -> Mat {
        self + rhs.scale(-1.0)
    }
}

impl Neg for Mat {
    type Output = Mat;
    fn neg(self) -> Mat {
        self.scale(-1.0)
    }
}

impl Mul for Mat {
    type Output = Mat;
    fn mul(self, rhs: Mat) -> Mat {
        assert_eq!(self.dim, rhs.dim);
        let mut p = Mat::zeros(self.dim);
        for i in 0..self.dim {
            for j in 0..self.dim {
                p.m[i][j] = (0..self.dim).map(|k| self.m[i][k] * rhs.m[k][j]).sum();
            }
        }
        p
    }
}

impl Mul<f64> for Mat {
    type Output = Mat;
    fn mul(self, s: f64) -> Mat {
        self.scale(s)
    }
}

/// Symmetric matrix. Construction always symmetrizes, so `Sᵀ = S` holds exactly.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymMat(Mat);

impl SymMat {
    pub fn from_mat(a: &Mat) -> Self {
        let mut s = Mat::zeros(a.dim);
        for i in 0..a.dim {
            s.m[i][i] = a.m[i][i];
            for j in (i + 1)..a.dim {
                let v = 0.5 * (a.m[i][j] + a.m[j][i]);
                s.m[i][j] = v;
                s.m[j][i] = v;
            }
        }
        SymMat(s)
    }

    pub fn zeros(dim: usize) -> Self {
        SymMat(Mat::zeros(dim))
    }

    pub fn identity(dim: usize) -> Self {
        SymMat(Mat::identity(dim))
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        SymMat(Mat::from_diag(diag))
    }

    /// 2D symmetric matrix `[[xx, xy], [xy, yy]]`.
    pub fn new2(xx: f64, yy: f64, xy: f64) -> Self {
        SymMat(Mat::from_rows2([[xx, xy], [xy, yy]]))
    }

    #[inline]
    pub fn as_mat(&self) -> &Mat {
        &self.0
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.0.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0.m[i][j]
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    pub fn norm_sq(&self) -> f64 {
        self.0.norm_sq()
    }

    pub fn norm(&self) -> f64 {
        self.0.norm()
    }

    pub fn dot(&self, other: &SymMat) -> f64 {
        self.0.dot(&other.0)
    }

    pub fn scale(&self, s: f64) -> Self {
        SymMat(self.0.scale(s))
    }

    /// `xᵀ S x`.
    pub fn quad(&self, x: &[f64]) -> f64 {
        let sx = self.0.mul_vec(x);
        sx.iter().zip(x).map(|(a, b)| a * b).sum()
    }
}

impl Add for SymMat {
    type Output = SymMat;
    fn add(self, rhs: SymMat) -> SymMat {
        SymMat(self.0 + rhs.0)
    }
}

impl Sub for SymMat {
    type Output = SymMat;
    fn sub(self, rhs: SymMat) -> SymMat {
        SymMat(self.0 - rhs.0)
    }
}

impl Neg for SymMat {
    type Output = SymMat;
    fn neg(self) -> SymMat {
        SymMat(-self.0)
    }
}

/// Coordinates of a skew-symmetric matrix.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum SkewParam {
    /// `W = λ (e1⊗e2 − e2⊗e1)`.
    Planar(f64),
    /// `W x = w × x`.
    Spatial([f64; 3]),
}

impl SkewParam {
    /// The unit planar generator `J` (`|J|² = 2`).
    pub const J: SkewParam = SkewParam::Planar(1.0);

    pub fn dim(&self) -> usize {
        match self {
            SkewParam::Planar(_) => 2,
            SkewParam::Spatial(_) => 3,
        }
    }

    pub fn coeffs(&self) -> Vec<f64> {
        match *self {
            SkewParam::Planar(l) => vec![l],
            SkewParam::Spatial(w) => w.to_vec(),
        }
    }

    pub fn matrix(&self) -> Mat {
        match *self {
            SkewParam::Planar(l) => Mat::from_rows2([[0.0, l], [-l, 0.0]]),
            SkewParam::Spatial([a, b, c]) => {
                Mat::from_rows3([[0.0, -c, b], [c, 0.0, -a], [-b, a, 0.0]])
            }
        }
    }

    /// `|W|²`.
    pub fn norm_sq(&self) -> f64 {
        match *self {
            SkewParam::Planar(l) => 2.0 * l * l,
            SkewParam::Spatial(w) => 2.0 * (w[0] * w[0] + w[1] * w[1] + w[2] * w[2]),
        }
    }

    pub fn scaled(&self, s: f64) -> SkewParam {
        match *self {
            SkewParam::Planar(l) => SkewParam::Planar(l * s),
            SkewParam::Spatial(w) => SkewParam::Spatial([w[0] * s, w[1] * s, w[2] * s]),
        }
    }

    /// Representative of the `±W` pair: `λ ≥ 0` in 2D, first nonzero axis
    /// component positive in 3D.
    pub fn canonical(&self) -> SkewParam {
        match *self {
            SkewParam::Planar(l) => SkewParam::Planar(l.abs()),
            SkewParam::Spatial(w) => match w.iter().find(|c| **c != 0.0) {
                Some(c) if *c < 0.0 => SkewParam::Spatial([-w[0], -w[1], -w[2]]),
                _ => SkewParam::Spatial(w),
            },
        }
    }
}

/// `W²` for the materialized `W`: `−λ² I` in 2D, `w⊗w − |w|² I` in 3D.
pub fn skew_square(w: &SkewParam) -> SymMat {
    match *w {
        SkewParam::Planar(l) => SymMat::identity(2).scale(-l * l),
        SkewParam::Spatial(a) => {
            let n2 = a[0] * a[0] + a[1] * a[1] + a[2] * a[2];
            SymMat(Mat::outer(&a, &a) - Mat::identity(3).scale(n2))
        }
    }
}

/// Tolerance on the `|W|² = 2` normalization accepted by [`rodrigues`].
pub const UNIT_SKEW_TOL: f64 = 1e-12;

/// `R = I + sin θ W + (1 − cos θ) W²` for a unit skew matrix (`|W|² = 2`).
pub fn rodrigues(theta: f64, w: &SkewParam) -> Result<Mat> {
    let n2 = w.norm_sq();
    if (n2 - 2.0).abs() > UNIT_SKEW_TOL {
        return Err(Error::InvalidArgument(format!(
            "rodrigues needs |W|^2 = 2, got {n2}"
        )));
    }
    let dim = w.dim();
    Ok(Mat::identity(dim) + w.matrix().scale(theta.sin()) + skew_square(w).0.scale(1.0 - theta.cos()))
}

/// Green–St.Venant stored energy `μ|FᵀF − I|² + (λ/2)(Tr(FᵀF − I))²`,
/// `+∞` unless `det F > 0`. `lambda = 0` gives `|FᵀF − I|²` when `mu = 1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Density {
    mu: f64,
    lambda: f64,
}

impl Density {
    pub fn new(mu: f64, lambda: f64) -> Result<Self> {
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(Error::InvalidArgument(format!("mu must be > 0, got {mu}")));
        }
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "lambda must be >= 0, got {lambda}"
            )));
        }
        Ok(Density { mu, lambda })
    }

    /// The quadratic density `|FᵀF − I|²` (`μ = 1`, `λ = 0`).
    pub fn quadratic() -> Self {
        Density { mu: 1.0, lambda: 0.0 }
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// `V(E) = 4μ|E|² + 2λ(Tr E)²`; for this family `V = V_0`.
    pub fn v0(&self, b: &SymMat) -> f64 {
        let t = b.trace();
        4.0 * self.mu * b.norm_sq() + 2.0 * self.lambda * t * t
    }

    /// Gradient of [`Density::v0`]: `8μB + 4λ(Tr B) I`.
    pub fn dv0(&self, b: &SymMat) -> SymMat {
        let dim = b.dim();
        b.scale(8.0 * self.mu) + SymMat::identity(dim).scale(4.0 * self.lambda * b.trace())
    }

    /// `W(F)`, `+∞` when `det F ≤ 0`.
    pub fn stored_energy(&self, f: &Mat) -> f64 {
        if f.det() <= 0.0 {
            return f64::INFINITY;
        }
        let dim = f.dim();
        let c = f.transpose() * *f - Mat::identity(dim);
        let t = c.trace();
        self.mu * c.norm_sq() + 0.5 * self.lambda * t * t
    }

    /// `V_h(B) = h⁻² W(I + hB)`, evaluated as `V(sym B + (h/2) BᵀB)` so no
    /// cancellation occurs for small `h`.
    pub fn vh(&self, h: f64, b: &Mat) -> Result<f64> {
        if !(h > 0.0) {
            return Err(Error::InvalidArgument(format!("h must be > 0, got {h}")));
        }
        let dim = b.dim();
        let f = Mat::identity(dim) + b.scale(h);
        if f.det() <= 0.0 {
            return Ok(f64::INFINITY);
        }
        let e = b.sym() + (b.transpose() * *b).sym().scale(0.5 * h);
        Ok(self.v0(&e))
    }
}

/// Eigen-decomposition of a symmetric matrix, eigenvalues ascending.
#[derive(Clone, Debug, PartialEq)]
pub struct SymEigen {
    dim: usize,
    values: [f64; 3],
    vectors: [[f64; 3]; 3],
}

impl SymEigen {
    pub fn values(&self) -> &[f64] {
        &self.values[..self.dim]
    }

    /// Unit eigenvector belonging to `values()[i]`.
    pub fn vector(&self, i: usize) -> &[f64] {
        &self.vectors[i][..self.dim]
    }
}

pub fn sym_eigs(s: &SymMat) -> SymEigen {
    match s.dim() {
        2 => eigs2(s),
        _ => eigs3(s),
    }
}

fn eigs2(s: &SymMat) -> SymEigen {
    let (a, b, c) = (s.get(0, 0), s.get(0, 1), s.get(1, 1));
    let mean = 0.5 * (a + c);
    let rad = (0.5 * (a - c)).hypot(b);
    let theta = 0.5 * b.atan2(0.5 * (a - c));
    let (sn, cs) = theta.sin_cos();
    SymEigen {
        dim: 2,
        values: [mean - rad, mean + rad, 0.0],
        vectors: [[-sn, cs, 0.0], [cs, sn, 0.0], [0.0; 3]],
    }
}

fn cross(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn dot3(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn normalized(a: [f64; 3]) -> [f64; 3] {
    let n = dot3(&a, &a).sqrt();
    [a[0] / n, a[1] / n, a[2] / n]
}

/// Any unit vector orthogonal to the unit vector `a`.
fn orthogonal_unit(a: &[f64; 3]) -> [f64; 3] {
    if a[0].abs() > a[1].abs() {
        normalized([-a[2], 0.0, a[0]])
    } else {
        normalized([0.0, a[2], -a[1]])
    }
}

fn eigs3(s: &SymMat) -> SymEigen {
    let scale = s.as_mat().max_abs();
    let ident = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    if scale == 0.0 {
        return SymEigen { dim: 3, values: [0.0; 3], vectors: ident };
    }
    let b = s.scale(1.0 / scale);
    let bm = b.as_mat();
    let q = bm.trace() / 3.0;
    let c = *bm - Mat::identity(3).scale(q);
    let p = (c.norm_sq() / 6.0).sqrt();
    if p <= f64::EPSILON * 1e-3 {
        return SymEigen { dim: 3, values: [q * scale; 3], vectors: ident };
    }
    let r = (c.scale(1.0 / p).det() / 2.0).clamp(-1.0, 1.0);
    let phi = r.acos() / 3.0;
    let hi = q + 2.0 * p * phi.cos();
    let lo = q + 2.0 * p * (phi + 2.0 * std::f64::consts::PI / 3.0).cos();
    // The eigenvalue farther from the other two is well conditioned.
    let iso_val = if hi - q >= q - lo { hi } else { lo };
    let v = newton_char(bm, iso_val);

    // Its eigenvector from the best-conditioned row cross product.
    let m = *bm - Mat::identity(3).scale(v);
    let rows = [m.m[0], m.m[1], m.m[2]];
    let cands = [cross(&rows[0], &rows[1]), cross(&rows[0], &rows[2]), cross(&rows[1], &rows[2])];
    let best = cands
        .iter()
        .max_by(|a, b| dot3(a, a).partial_cmp(&dot3(b, b)).unwrap())
        .unwrap();
    let v_iso = if dot3(best, best) > 0.0 { normalized(*best) } else { [1.0, 0.0, 0.0] };

    // The other two solve the 2×2 problem on the orthogonal complement.
    let u = orthogonal_unit(&v_iso);
    let w = cross(&v_iso, &u);
    let quad = |a: &[f64; 3], c: &[f64; 3]| {
        let bc = bm.mul_vec(c);
        a[0] * bc[0] + a[1] * bc[1] + a[2] * bc[2]
    };
    let sub = eigs2(&SymMat::new2(quad(&u, &u), quad(&w, &w), quad(&u, &w)));
    let lift = |k: usize| {
        let x = sub.vector(k);
        normalized([
            x[0] * u[0] + x[1] * w[0],
            x[0] * u[1] + x[1] * w[1],
            x[0] * u[2] + x[1] * w[2],
        ])
    };
    let mut pairs = [
        (quad(&v_iso, &v_iso), v_iso),
        (sub.values()[0], lift(0)),
        (sub.values()[1], lift(1)),
    ];
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    SymEigen {
        dim: 3,
        values: [pairs[0].0 * scale, pairs[1].0 * scale, pairs[2].0 * scale],
        vectors: [pairs[0].1, pairs[1].1, pairs[2].1],
    }
}

/// Newton polish of a root of `det(B − λI)`, kept only while it helps.
fn newton_char(bm: &Mat, mut v: f64) -> f64 {
    let chi = |v: f64| (*bm - Mat::identity(3).scale(v)).det();
    for _ in 0..4 {
        let m = *bm - Mat::identity(3).scale(v);
        let mm = &m.m;
        let adj_trace = (mm[1][1] * mm[2][2] - mm[1][2] * mm[2][1])
            + (mm[0][0] * mm[2][2] - mm[0][2] * mm[2][0])
            + (mm[0][0] * mm[1][1] - mm[0][1] * mm[1][0]);
        if adj_trace == 0.0 {
            break;
        }
        let c = m.det();
        let next = v + c / adj_trace;
        if !(chi(next).abs() < c.abs()) {
            break;
        }
        v = next;
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn skew_square_examples() {
        assert_eq!(skew_square(&SkewParam::J), SymMat::identity(2).scale(-1.0));
        assert_eq!(skew_square(&SkewParam::Spatial([0.0, 0.0, 1.0])), SymMat::from_diag(&[-1.0, -1.0, 0.0]));
        assert_eq!(skew_square(&SkewParam::Planar(0.0)).norm(), 0.0);
    }

    #[test]
    fn skew_square_matches_matrix_product_and_is_nsd() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let w = SkewParam::Spatial([rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)]);
            let wm = w.matrix();
            assert!((wm + wm.transpose()).norm() == 0.0);
            let direct = (wm * wm).sym();
            assert!((direct - skew_square(&w)).norm() < 1e-13);
            assert!(sym_eigs(&skew_square(&w)).values().iter().all(|v| *v <= 1e-12));
        }
    }

    #[test]
    fn unit_skew_normalization() {
        assert_eq!(SkewParam::J.norm_sq(), 2.0);
        assert_eq!(SkewParam::J.matrix().norm_sq(), 2.0);
        assert_eq!(SkewParam::Spatial([0.0, 1.0, 0.0]).matrix().norm_sq(), 2.0);
    }

    #[test]
    fn rodrigues_examples() {
        let r0 = rodrigues(0.0, &SkewParam::J).unwrap();
        assert_eq!(r0, Mat::identity(2));
        // Quarter turn against the reference 2×2 rotation with J e1 = −e2:
        // W = J means a clockwise rotation, R(θ) = [[cos, sin], [−sin, cos]].
        let r = rodrigues(PI / 2.0, &SkewParam::J).unwrap();
        let expected = Mat::from_rows2([[0.0, 1.0], [-1.0, 0.0]]);
        assert!((r - expected).norm() < 1e-15);
        let r = rodrigues(PI / 3.0, &SkewParam::J).unwrap();
        let h = 3f64.sqrt() / 2.0;
        let expected = Mat::from_rows2([[0.5, h], [-h, 0.5]]);
        assert!((r - expected).norm() < 1e-15);
        let w = SkewParam::J.matrix();
        let alt = Mat::identity(2) + w.scale(h) + (w * w).scale(0.5);
        assert!((r - alt).norm() < 1e-15);
    }

    #[test]
    fn rodrigues_rejects_non_unit() {
        assert!(rodrigues(0.3, &SkewParam::Planar(2.0)).is_err());
        assert!(rodrigues(0.3, &SkewParam::Spatial([1.0, 1.0, 0.0])).is_err());
    }

    #[test]
    fn rodrigues_is_a_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for k in 0..100 {
            let theta = rng.gen_range(-PI..PI);
            let w = if k % 2 == 0 {
                SkewParam::Planar(if rng.gen_bool(0.5) { 1.0 } else { -1.0 })
            } else {
                let a: [f64; 3] = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
                let n = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
                SkewParam::Spatial([a[0] / n, a[1] / n, a[2] / n])
            };
            let r = rodrigues(theta, &w).unwrap();
            let dim = r.dim();
            assert!((r.transpose() * r - Mat::identity(dim)).norm() < 1e-12);
            assert!(close(r.det(), 1.0, 1e-12));
        }
    }

    #[test]
    fn v0_examples() {
        let d = Density::new(1.0, 1.0).unwrap();
        assert_eq!(d.v0(&SymMat::identity(2)), 16.0);
        assert_eq!(d.v0(&SymMat::zeros(2)), 0.0);
        assert_eq!(d.v0(&SymMat::new2(0.0, 0.0, 0.5)), 2.0);
    }

    #[test]
    fn dv0_examples() {
        let d = Density::new(1.0, 1.0).unwrap();
        assert_eq!(d.dv0(&SymMat::identity(2)), SymMat::identity(2).scale(16.0));
        assert_eq!(d.dv0(&SymMat::zeros(2)), SymMat::zeros(2));
        let d0 = Density::new(1.0, 0.0).unwrap();
        let b = SymMat::new2(0.0, 0.0, 0.5);
        assert_eq!(d0.dv0(&b), b.scale(8.0));
    }

    #[test]
    fn dv0_quadratic_expansion_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = Density::new(0.7, 1.3).unwrap();
        for _ in 0..50 {
            let b = SymMat::new2(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let h = SymMat::new2(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let lhs = d.v0(&(b + h)) - d.v0(&b);
            let rhs = d.dv0(&b).dot(&h) + d.v0(&h);
            assert!(close(lhs, rhs, 1e-13));
        }
    }

    #[test]
    fn density_rejects_bad_moduli() {
        assert!(Density::new(0.0, 1.0).is_err());
        assert!(Density::new(1.0, -0.1).is_err());
        assert!(Density::new(f64::NAN, 0.0).is_err());
    }

    #[test]
    fn vh_examples() {
        let d = Density::new(1.0, 1.0).unwrap();
        let v = d.vh(1e-4, &Mat::identity(2)).unwrap();
        assert!(((v - 16.0) / 16.0).abs() <= 5e-4);

        let h: f64 = 0.01;
        let b = SkewParam::J.matrix().scale(h.powf(-0.25));
        let v = Density::quadratic().vh(h, &b).unwrap();
        assert!(((v - 0.02) / 0.02).abs() < 1e-12, "{v}");

        let v = d.vh(1.0, &Mat::from_diag(&[-2.0, 0.0])).unwrap();
        assert_eq!(v, f64::INFINITY);
        assert!(d.vh(0.0, &Mat::identity(2)).is_err());
        assert!(d.vh(-1.0, &Mat::identity(2)).is_err());
    }

    #[test]
    fn vh_agrees_with_scaled_stored_energy() {
        let d = Density::new(1.5, 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let b = Mat::from_rows2([[rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)], [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]]);
            let h = 0.1;
            let direct = d.stored_energy(&(Mat::identity(2) + b.scale(h))) / (h * h);
            let v = d.vh(h, &b).unwrap();
            assert!(((direct - v) / v.max(1e-300)).abs() < 1e-10);
        }
    }

    #[test]
    fn frame_indifference_of_stored_energy() {
        let d = Density::new(1.0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut checked = 0;
        while checked < 100 {
            let dim = if checked % 2 == 0 { 2 } else { 3 };
            let mut f = Mat::identity(dim);
            for i in 0..dim {
                for j in 0..dim {
                    f.set(i, j, f.get(i, j) + rng.gen_range(-0.5..0.5));
                }
            }
            if f.det() <= 0.0 {
                continue;
            }
            let w = if dim == 2 {
                SkewParam::J
            } else {
                let a: [f64; 3] = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
                let n = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
                SkewParam::Spatial([a[0] / n, a[1] / n, a[2] / n])
            };
            let r = rodrigues(rng.gen_range(-PI..PI), &w).unwrap();
            let h = 0.05;
            let a = d.stored_energy(&f) / (h * h);
            let b = d.stored_energy(&(r * f)) / (h * h);
            assert!(((a - b) / a).abs() < 1e-10);
            checked += 1;
        }
    }

    #[test]
    fn vh_pointwise_limit_is_first_order() {
        let d = Density::new(1.0, 2.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..20 {
            let b = Mat::from_rows2([[rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)], [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]]);
            let limit = d.v0(&b.sym());
            // Constant fitted at the smallest h; err/h must settle to it.
            let c = (d.vh(1e-4, &b).unwrap() - limit).abs() / 1e-4;
            let c3 = (d.vh(1e-3, &b).unwrap() - limit).abs() / 1e-3;
            assert!((c3 - c).abs() <= 0.05 * c, "c(1e-3)={c3} c(1e-4)={c}");
            for h in [1e-2, 1e-3, 1e-4] {
                let err = (d.vh(h, &b).unwrap() - limit).abs();
                assert!(err <= 2.0 * c * h + 1e-13, "h={h} err={err} c={c}");
            }
        }
    }

    #[test]
    fn coercivity() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let d = Density::new(0.3, 2.0).unwrap();
        for _ in 0..100 {
            let b = SymMat::new2(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
            assert!(d.v0(&b) >= 4.0 * d.mu() * b.norm_sq());
        }
    }

    fn check_eigs(s: &SymMat) {
        let e = sym_eigs(s);
        let vals = e.values();
        for w in vals.windows(2) {
            assert!(w[0] <= w[1]);
        }
        let norm = s.norm().max(f64::MIN_POSITIVE);
        let mut recon = Mat::zeros(s.dim());
        for i in 0..s.dim() {
            let q = e.vector(i);
            let sq = s.as_mat().mul_vec(q);
            let res: f64 = sq.iter().zip(q).map(|(a, b)| (a - vals[i] * b).powi(2)).sum::<f64>().sqrt();
            assert!(res <= 1e-12 * norm, "residual {res} for {s:?}");
            recon = recon + Mat::outer(q, q).scale(vals[i]);
            for j in 0..s.dim() {
                let dot: f64 = q.iter().zip(e.vector(j)).map(|(a, b)| a * b).sum();
                let expected = if i == j { 1.0 } else { 0.0 };
                assert!((dot - expected).abs() < 1e-12);
            }
        }
        assert!((recon - *s.as_mat()).norm() <= 1e-12 * norm);
    }

    #[test]
    fn eig_examples() {
        assert_eq!(sym_eigs(&SymMat::identity(2)).values(), &[1.0, 1.0]);
        let e = sym_eigs(&SymMat::new2(0.0, 0.0, 1.0));
        assert!(close(e.values()[0], -1.0, 1e-15) && close(e.values()[1], 1.0, 1e-15));
        let e = sym_eigs(&SymMat::from_diag(&[1.0, 1.0, -3.0]));
        assert!(close(e.values()[0], -3.0, 1e-14));
        assert!(close(e.values()[1], 1.0, 1e-14));
        assert!(close(e.values()[2], 1.0, 1e-14));
        check_eigs(&SymMat::from_diag(&[1.0, 1.0, -3.0]));
        check_eigs(&SymMat::identity(3));
        check_eigs(&SymMat::zeros(3));
        check_eigs(&SymMat::from_diag(&[2.0, -1.0, 2.0]));
    }

    #[test]
    fn eig_random_residuals() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for k in 0..400 {
            let dim = if k % 4 == 0 { 2 } else { 3 };
            let mut a = Mat::zeros(dim);
            for i in 0..dim {
                for j in 0..dim {
                    a.set(i, j, rng.gen_range(-1.0..1.0));
                }
            }
            let mut s = a.sym();
            if k % 5 == 1 {
                // nearly repeated eigenvalues
                let q = sym_eigs(&s);
                let mut r = Mat::zeros(dim);
                for i in 0..dim {
                    let lam = if i == 0 { -1.0 } else { 1.0 + 1e-9 * i as f64 };
                    r = r + Mat::outer(q.vector(i), q.vector(i)).scale(lam);
                }
                s = r.sym();
            }
            check_eigs(&s);
        }
    }
}
