//! Scenario files and the built-in library.
//!
//! A scenario is a TOML document with sections `[mesh]`, `[density]`,
//! `[loads.<tag>]`, `[body_force]` and `[experiment]`. Unknown keys are
//! rejected so typos surface as field diagnostics.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use traction_core::loads::DEFAULT_TOL;
use traction_core::mesh::read_mesh;
use traction_core::{BodyForce, Density, LoadSpec, Mesh, TagScheme, Traction};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub mesh: MeshConfig,
    pub density: DensityConfig,
    #[serde(default)]
    pub loads: BTreeMap<String, Traction>,
    #[serde(default)]
    pub body_force: BodyForce,
    #[serde(default)]
    pub experiment: Experiment,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshConfig {
    /// Mesh file in the text format; overrides the rectangle when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
    #[serde(default = "default_n")]
    pub nx: usize,
    #[serde(default = "default_n")]
    pub ny: usize,
    #[serde(default = "default_range")]
    pub x_range: [f64; 2],
    #[serde(default = "default_range")]
    pub y_range: [f64; 2],
}

fn default_n() -> usize {
    32
}

fn default_range() -> [f64; 2] {
    [-0.5, 0.5]
}

impl Default for MeshConfig {
    fn default() -> Self {
        MeshConfig { file: None, nx: default_n(), ny: default_n(), x_range: default_range(), y_range: default_range() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensityConfig {
    pub mu: f64,
    pub lambda: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Experiment {
    /// Strictly decreasing; empty disables the nonlinear stage.
    pub h_list: Vec<f64>,
    /// Shifts `t` for the extra-minimizer check under weak compatibility.
    pub shift_t: Vec<f64>,
    pub classify_tol: f64,
    pub cg_tol: f64,
    pub lbfgs_memory: usize,
    pub lbfgs_max_iter: usize,
    pub grad_tol: f64,
    pub det_floor: f64,
    /// Initial rotation angle along the witness for incompatible loads.
    pub witness_theta0: f64,
}

impl Default for Experiment {
    fn default() -> Self {
        Experiment {
            h_list: Vec::new(),
            shift_t: Vec::new(),
            classify_tol: DEFAULT_TOL,
            cg_tol: 1e-10,
            lbfgs_memory: 10,
            lbfgs_max_iter: 20_000,
            grad_tol: 1e-8,
            det_floor: 1e-8,
            witness_theta0: 0.05,
        }
    }
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Scenario> {
        let s: Scenario = toml::from_str(text).map_err(|e| anyhow::anyhow!("{e}"))?;
        s.validate()?;
        Ok(s)
    }

    /// A file path, or the name of a built-in scenario.
    pub fn load(arg: &str) -> Result<Scenario> {
        let path = Path::new(arg);
        if path.is_file() {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {arg}"))?;
            let mut s = Scenario::parse(&text).with_context(|| format!("parsing {arg}"))?;
            if let Some(f) = &s.mesh.file {
                if f.is_relative() {
                    let base = path.parent().unwrap_or(Path::new("."));
                    s.mesh.file = Some(base.join(f));
                }
            }
            return Ok(s);
        }
        match builtin(arg) {
            Some(text) => Scenario::parse(text).with_context(|| format!("built-in scenario {arg}")),
            None => bail!("`{arg}` is neither a scenario file nor a built-in scenario (see `traction scenarios`)"),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.mesh.nx == 0 || self.mesh.ny == 0 {
            bail!("mesh.nx and mesh.ny must be positive");
        }
        Density::new(self.density.mu, self.density.lambda).context("density")?;
        let h = &self.experiment.h_list;
        if h.iter().any(|x| !(*x > 0.0)) || h.windows(2).any(|w| !(w[1] < w[0])) {
            bail!("experiment.h_list must be positive and strictly decreasing, got {h:?}");
        }
        if self.experiment.shift_t.iter().any(|t| !(*t >= 0.0)) {
            bail!("experiment.shift_t entries must be >= 0");
        }
        if !(self.experiment.classify_tol > 0.0) {
            bail!("experiment.classify_tol must be > 0");
        }
        Ok(())
    }

    pub fn density(&self) -> Density {
        Density::new(self.density.mu, self.density.lambda).expect("validated")
    }

    pub fn build_mesh(&self) -> Result<Mesh> {
        match &self.mesh.file {
            Some(f) => {
                let text = std::fs::read_to_string(f).with_context(|| format!("reading mesh {}", f.display()))?;
                Ok(read_mesh(&text).with_context(|| format!("mesh {}", f.display()))?)
            }
            None => Ok(Mesh::rect(self.mesh.nx, self.mesh.ny, self.mesh.x_range, self.mesh.y_range, TagScheme::Sides)?),
        }
    }

    pub fn load_spec(&self) -> LoadSpec {
        LoadSpec { tractions: self.loads.clone(), body: self.body_force }
    }

    /// The effective configuration with every default filled in.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn config_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }
}

pub const BUILTINS: [(&str, &str, &str); 4] = [
    ("tension", "uniform tension f = 16 n on the unit square; strictly compatible", TENSION),
    ("compression", "uniform compression f = -n; incompatible, inf F = -inf", COMPRESSION),
    ("infmany", "shear tractions with S = e1e2 + e2e1; weakly compatible, many limit minimizers", INFMANY),
    ("bodyforce", "linear body force g = A x with free boundary; strictly compatible", BODYFORCE),
];

pub fn builtin(name: &str) -> Option<&'static str> {
    BUILTINS.iter().find(|b| b.0 == name).map(|b| b.2)
}

const TENSION: &str = r#"
name = "tension"

[mesh]
nx = 32
ny = 32

[density]
mu = 1.0
lambda = 1.0

[loads.left]
pressure = 16.0
[loads.right]
pressure = 16.0
[loads.bottom]
pressure = 16.0
[loads.top]
pressure = 16.0

[experiment]
h_list = [0.2, 0.1, 0.05, 0.025]
"#;

const COMPRESSION: &str = r#"
name = "compression"

[mesh]
nx = 32
ny = 32

[density]
mu = 1.0
lambda = 1.0

[loads.left]
pressure = -1.0
[loads.right]
pressure = -1.0
[loads.bottom]
pressure = -1.0
[loads.top]
pressure = -1.0

[experiment]
h_list = [0.1]
"#;

const INFMANY: &str = r#"
name = "infmany"

[mesh]
nx = 32
ny = 32

[density]
mu = 1.0
lambda = 1.0

[loads.left]
constant = [0.0, -1.0]
[loads.right]
constant = [0.0, 1.0]
[loads.bottom]
constant = [-1.0, 0.0]
[loads.top]
constant = [1.0, 0.0]

[experiment]
shift_t = [0.5, 1.0, 2.0]
"#;

const BODYFORCE: &str = r#"
name = "bodyforce"

[mesh]
nx = 32
ny = 32

[density]
mu = 1.0
lambda = 1.0

[loads.left]
constant = [0.0, 0.0]
[loads.right]
constant = [0.0, 0.0]
[loads.bottom]
constant = [0.0, 0.0]
[loads.top]
constant = [0.0, 0.0]

[body_force]
linear = [[2.0, 1.0], [1.0, 1.0]]
"#;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_parse_and_echo_round_trips() {
        for (name, _, text) in BUILTINS {
            let s = Scenario::parse(text).unwrap();
            assert_eq!(s.name, name);
            let again = Scenario::parse(&s.to_toml()).unwrap();
            assert_eq!(again, s);
            assert_eq!(again.config_hash(), s.config_hash());
        }
    }

    #[test]
    fn unknown_fields_and_bad_values_are_reported() {
        let e = Scenario::parse("name = 'x'\n[density]\nmu = 1.0\nlamda = 1.0\n").unwrap_err();
        assert!(format!("{e:#}").contains("lamda"), "{e:#}");
        let e = Scenario::parse("name = 'x'\n[density]\nmu = 1.0\nlambda = 1.0\n[experiment]\nh_list = [0.1, 0.2]\n")
            .unwrap_err();
        assert!(format!("{e:#}").contains("strictly decreasing"));
        let e = Scenario::parse("name = 'x'\n[density]\nmu = 'one'\nlambda = 1.0\n").unwrap_err();
        assert!(format!("{e:#}").contains("line 3"), "{e:#}");
    }

    #[test]
    fn defaults_are_applied() {
        let s = Scenario::parse("name = 'x'\n[density]\nmu = 2.0\nlambda = 0.0\n").unwrap();
        assert_eq!(s.mesh, MeshConfig::default());
        assert_eq!(s.experiment, Experiment::default());
        assert!(s.to_toml().contains("classify_tol"));
    }
}
