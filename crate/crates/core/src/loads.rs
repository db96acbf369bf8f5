//! Surface and body loads, the load functional `L`, equilibration and the
//! compatibility classification.
//!
//! For a field `v = M x` the load functional is `L(Mx) = M : S` with the
//! moment matrix `S = ∫_{∂Ω} f⊗x + ∫_Ω g⊗x`. Compatibility asks whether
//! `Q(W) = L(W² x) = W² : sym S` is negative for every nonzero skew `W`,
//! which reduces to an eigenvalue test on `sym S`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::algebra::{skew_square, sym_eigs, Mat, SkewParam};
use crate::error::{Error, Result};
use crate::fem::DisplacementField;
use crate::mesh::Mesh;

/// Default relative tolerance of the equilibration and compatibility tests.
pub const DEFAULT_TOL: f64 = 1e-9;

/// Traction rule on one boundary tag.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Traction {
    /// Fixed vector `c`.
    Constant([f64; 2]),
    /// `p n` with the outward normal `n`; `p > 0` pulls outward.
    Pressure(f64),
    /// `s t` with `t = n` rotated by +90°.
    Tangential(f64),
}

impl Traction {
    pub fn at(&self, normal: [f64; 2]) -> [f64; 2] {
        match *self {
            Traction::Constant(c) => c,
            Traction::Pressure(p) => [p * normal[0], p * normal[1]],
            Traction::Tangential(s) => [-s * normal[1], s * normal[0]],
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BodyForce {
    #[default]
    Zero,
    Constant([f64; 2]),
    /// `g(x) = A x`, rows of `A`.
    Linear([[f64; 2]; 2]),
}

impl BodyForce {
    pub fn at(&self, x: [f64; 2]) -> [f64; 2] {
        match *self {
            BodyForce::Zero => [0.0, 0.0],
            BodyForce::Constant(c) => c,
            BodyForce::Linear(a) => [
                a[0][0] * x[0] + a[0][1] * x[1],
                a[1][0] * x[0] + a[1][1] * x[1],
            ],
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LoadSpec {
    pub tractions: BTreeMap<String, Traction>,
    pub body: BodyForce,
}

impl LoadSpec {
    /// No loads on the given tags.
    pub fn zero<S: AsRef<str>>(tags: &[S]) -> Self {
        Self::uniform(tags, Traction::Constant([0.0, 0.0]))
    }

    /// The same traction rule on every given tag.
    pub fn uniform<S: AsRef<str>>(tags: &[S], rule: Traction) -> Self {
        LoadSpec {
            tractions: tags.iter().map(|t| (t.as_ref().to_string(), rule)).collect(),
            body: BodyForce::Zero,
        }
    }

    /// Pressure `p n` on every boundary tag of `mesh`.
    pub fn pressure(mesh: &Mesh, p: f64) -> Self {
        Self::uniform(&mesh.tags(), Traction::Pressure(p))
    }

    pub fn with(mut self, tag: &str, rule: Traction) -> Self {
        self.tractions.insert(tag.to_string(), rule);
        self
    }

    pub fn with_body(mut self, body: BodyForce) -> Self {
        self.body = body;
        self
    }

    /// Multiplies every load by `t`.
    pub fn scaled(&self, t: f64) -> Self {
        let tractions = self
            .tractions
            .iter()
            .map(|(k, r)| {
                let r = match *r {
                    Traction::Constant(c) => Traction::Constant([t * c[0], t * c[1]]),
                    Traction::Pressure(p) => Traction::Pressure(t * p),
                    Traction::Tangential(s) => Traction::Tangential(t * s),
                };
                (k.clone(), r)
            })
            .collect();
        let body = match self.body {
            BodyForce::Zero => BodyForce::Zero,
            BodyForce::Constant(c) => BodyForce::Constant([t * c[0], t * c[1]]),
            BodyForce::Linear(a) => {
                BodyForce::Linear([[t * a[0][0], t * a[0][1]], [t * a[1][0], t * a[1][1]]])
            }
        };
        LoadSpec { tractions, body }
    }
}

/// Discrete load functional and its moments.
#[derive(Clone, Debug, PartialEq)]
pub struct LoadAssembly {
    /// `ℓ` with `L(v) = ℓ · v̂`, interleaved `[x0, y0, x1, y1, ...]`.
    pub nodal: Vec<f64>,
    pub resultant: [f64; 2],
    /// `S₂₁ − S₁₂ = ∫ x × f + ∫ x × g`.
    pub torque: f64,
    pub moment: Mat,
}

impl LoadAssembly {
    pub fn n_dofs(&self) -> usize {
        self.nodal.len()
    }

    pub fn nodal_norm(&self) -> f64 {
        self.nodal.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// `L(v) = ℓ · v̂`.
    pub fn eval(&self, v: &DisplacementField) -> Result<f64> {
        eval_l(self, v)
    }

    /// Zero loads on a mesh with `n_dofs` unknowns.
    pub fn zero(n_dofs: usize) -> Self {
        LoadAssembly {
            nodal: vec![0.0; n_dofs],
            resultant: [0.0; 2],
            torque: 0.0,
            moment: Mat::zeros(2),
        }
    }
}

/// Assembles `ℓ`, the resultants and `S`. Edge integrals use the 2-point
/// Gauss rule and element integrals the edge-midpoint rule, both exact for
/// the supported load families.
pub fn assemble_loads(mesh: &Mesh, spec: &LoadSpec) -> Result<LoadAssembly> {
    for tag in mesh.tags() {
        if !spec.tractions.contains_key(&tag) {
            return Err(Error::MissingTag(tag));
        }
    }
    let mut nodal = vec![0.0; mesh.n_dofs()];
    let mut s = [[0.0; 2]; 2];
    let mut resultant = [0.0; 2];

    for edge in mesh.boundary_edges() {
        let f = spec.tractions[&edge.tag].at(edge.normal);
        for (x, phi, w) in mesh.edge_quadrature(edge) {
            for (k, &node) in edge.nodes.iter().enumerate() {
                nodal[2 * node] += w * phi[k] * f[0];
                nodal[2 * node + 1] += w * phi[k] * f[1];
            }
            for i in 0..2 {
                resultant[i] += w * f[i];
                for j in 0..2 {
                    s[i][j] += w * f[i] * x[j];
                }
            }
        }
    }
    if spec.body != BodyForce::Zero {
        for (e, tri) in mesh.elements().iter().enumerate() {
            for (x, phi, w) in mesh.element_quadrature(e) {
                let g = spec.body.at(x);
                for (k, &node) in tri.iter().enumerate() {
                    nodal[2 * node] += w * phi[k] * g[0];
                    nodal[2 * node + 1] += w * phi[k] * g[1];
                }
                for i in 0..2 {
                    resultant[i] += w * g[i];
                    for j in 0..2 {
                        s[i][j] += w * g[i] * x[j];
                    }
                }
            }
        }
    }
    Ok(LoadAssembly {
        nodal,
        resultant,
        torque: s[1][0] - s[0][1],
        moment: Mat::from_rows2(s),
    })
}

/// `L(v) = ℓ · v̂`.
pub fn eval_l(assembly: &LoadAssembly, v: &DisplacementField) -> Result<f64> {
    let vals = v.values();
    if vals.len() != assembly.nodal.len() {
        return Err(Error::MeshMismatch { expected: assembly.nodal.len(), found: vals.len() });
    }
    Ok(assembly.nodal.iter().zip(vals).map(|(a, b)| a * b).sum())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Equilibrium {
    pub equilibrated: bool,
    /// `|∫f + ∫g|`.
    pub force_residual: f64,
    /// `|skew S|` (Frobenius).
    pub torque_residual: f64,
    /// `1 + ‖ℓ‖`, the scale the residuals are compared against.
    pub scale: f64,
}

/// Zero resultant and symmetric `S`, both relative to `1 + ‖ℓ‖`.
pub fn check_equilibrated(assembly: &LoadAssembly, tol: f64) -> Equilibrium {
    let force_residual = assembly.resultant[0].hypot(assembly.resultant[1]);
    let torque_residual = assembly.moment.skew().norm();
    let scale = 1.0 + assembly.nodal_norm();
    Equilibrium {
        equilibrated: force_residual <= tol * scale && torque_residual <= tol * scale,
        force_residual,
        torque_residual,
        scale,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Compatibility {
    /// `L(W² x) < 0` for every nonzero `W`.
    Strict,
    /// `L(W² x) ≤ 0` with equality along the listed unit directions.
    Weak { kernel: Vec<SkewParam> },
    /// `L(W² x) > 0` for the unit witness; `witness_gap = L(½ W² x)`.
    Incompatible { witness: SkewParam, witness_gap: f64 },
}

impl Compatibility {
    pub fn name(&self) -> &'static str {
        match self {
            Compatibility::Strict => "Strict",
            Compatibility::Weak { .. } => "Weak",
            Compatibility::Incompatible { .. } => "Incompatible",
        }
    }

    pub fn is_incompatible(&self) -> bool {
        matches!(self, Compatibility::Incompatible { .. })
    }

    /// `sup_W L(½ W² x)`, either `0` or `+∞` by positive homogeneity.
    pub fn sup_gap(&self) -> f64 {
        if self.is_incompatible() {
            f64::INFINITY
        } else {
            0.0
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub equilibrium: Equilibrium,
    pub compat: Compatibility,
    pub sup_gap: f64,
    pub moment: Mat,
    pub tol: f64,
}

/// `L(W² x) = W² : sym S` for a linearly varying field `W² x`.
pub fn q_form(moment: &Mat, w: &SkewParam) -> f64 {
    skew_square(w).dot(&moment.sym())
}

/// Classifies a 2×2 or 3×3 moment matrix.
pub fn classify_moment(moment: &Mat, tol: f64) -> Compatibility {
    let s = moment.sym();
    let band = tol * moment.norm();
    match s.dim() {
        2 => {
            let tr = s.trace();
            if tr > band {
                Compatibility::Strict
            } else if tr >= -band {
                Compatibility::Weak { kernel: vec![SkewParam::J] }
            } else {
                Compatibility::Incompatible {
                    witness: SkewParam::J,
                    witness_gap: 0.5 * q_form(moment, &SkewParam::J),
                }
            }
        }
        _ => {
            // Q(w) = wᵀ(S − Tr S·I)w; along eigenvector q_k it equals minus
            // the sum of the two other eigenvalues.
            let eig = sym_eigs(&s);
            let l = eig.values();
            let axis = |k: usize| {
                let q = eig.vector(k);
                SkewParam::Spatial([q[0], q[1], q[2]]).canonical()
            };
            // pair sums indexed by the complementary axis
            let pair = [l[1] + l[2], l[0] + l[2], l[0] + l[1]];
            if pair[2] > band {
                Compatibility::Strict
            } else if pair[2] < -band {
                let witness = axis(2);
                Compatibility::Incompatible {
                    witness,
                    witness_gap: 0.5 * q_form(moment, &witness),
                }
            } else {
                let kernel = (0..3).filter(|k| pair[*k].abs() <= band).map(axis).collect();
                Compatibility::Weak { kernel }
            }
        }
    }
}

/// Equilibration plus compatibility.
pub fn classify_compatibility(assembly: &LoadAssembly, tol: f64) -> Classification {
    let compat = classify_moment(&assembly.moment, tol);
    Classification {
        equilibrium: check_equilibrated(assembly, tol),
        sup_gap: compat.sup_gap(),
        compat,
        moment: assembly.moment,
        tol,
    }
}
