//! Run configuration: TOML in, validated model objects out.

use std::path::Path;

use anyhow::{bail, Context, Result};
use num_complex::Complex64 as C64;
use resonflow::atommodel::{AtomSpec, ProblemParams};
use resonflow::fockspace::{build_basis_capped, FockBasis, ModeGrid};
use resonflow::rgflow::FlowOptions;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub atom: AtomConfig,
    pub grid: GridConfig,
    pub truncation: TruncationConfig,
    pub params: ParamsConfig,
    #[serde(default)]
    pub tolerances: ToleranceConfig,
    #[serde(default)]
    pub oracle: OracleConfig,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
}

/// Dipoles are row-major lists of [re, im] pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtomConfig {
    pub energies: Vec<f64>,
    pub dipole_x: Vec<[f64; 2]>,
    pub dipole_y: Vec<[f64; 2]>,
    pub dipole_z: Vec<[f64; 2]>,
    /// Require unit operator norm per direction.
    #[serde(default = "yes")]
    pub unit_norm: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub n_r: usize,
    pub n_dir: usize,
    pub k_max: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruncationConfig {
    pub n_max: usize,
    pub e_max: f64,
    #[serde(default = "m_max")]
    pub m_max: usize,
    #[serde(default = "l_max")]
    pub l_max: usize,
    #[serde(default = "basis_cap")]
    pub basis_cap: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsConfig {
    pub lambda0: f64,
    pub vartheta: f64,
    #[serde(default)]
    pub p: [f64; 3],
    #[serde(default)]
    pub p_im: [f64; 3],
    pub p_star: [f64; 3],
    pub i0: usize,
    #[serde(default)]
    pub rho0: Option<f64>,
    #[serde(default)]
    pub eps: Option<f64>,
    #[serde(default = "one")]
    pub uv_sigma: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToleranceConfig {
    pub tol_z: f64,
    pub tail_tol: f64,
    pub j_max: usize,
    pub newton_max: usize,
}

impl Default for ToleranceConfig {
    fn default() -> Self {
        let o = FlowOptions::default();
        Self { tol_z: o.tol_z, tail_tol: o.tail_tol, j_max: o.j_max, newton_max: o.newton_max }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleConfig {
    pub thetas: Vec<f64>,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self { thetas: vec![0.25, 0.3, 0.35, std::f64::consts::PI / 8.0, 0.45, 0.5, 0.55] }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepKind {
    /// Ground-state energy E(p) at θ = 0 from the self-adjoint oracle.
    Dispersion,
    /// One flow per point.
    Flow,
    /// One dilation-oracle eigenvalue per point.
    Oracle,
}

/// Points are the product p × λ₀ × ϑ, in that nesting order; empty lists
/// fall back to the single value in [params].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub kind: SweepKind,
    #[serde(default)]
    pub p_grid: Vec<[f64; 3]>,
    #[serde(default)]
    pub lambdas: Vec<f64>,
    #[serde(default)]
    pub varthetas: Vec<f64>,
}

fn yes() -> bool {
    true
}
fn one() -> f64 {
    1.0
}
fn m_max() -> usize {
    FlowOptions::default().m_max
}
fn l_max() -> usize {
    FlowOptions::default().l_max
}
fn basis_cap() -> usize {
    200_000
}

fn cvec(v: &[[f64; 2]]) -> Vec<C64> {
    v.iter().map(|&[a, b]| C64::new(a, b)).collect()
}

/// A fully validated run.
pub struct Setup {
    pub config: RunConfig,
    pub hash: String,
    pub atom: AtomSpec,
    pub grid: ModeGrid,
    pub basis: FockBasis,
    pub params: ProblemParams,
    pub opts: FlowOptions,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    /// SHA-256 of the canonical JSON form; key order is the struct order.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        let d = Sha256::digest(&json);
        d.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn atom(&self) -> Result<AtomSpec> {
        let a = &self.atom;
        let d = [cvec(&a.dipole_x), cvec(&a.dipole_y), cvec(&a.dipole_z)];
        let atom = if a.unit_norm { AtomSpec::new(a.energies.clone(), d) } else { AtomSpec::new_unnormalized(a.energies.clone(), d) };
        Ok(atom?)
    }

    pub fn problem(&self, atom: &AtomSpec, lambda0: f64, vartheta: f64, p: [C64; 3]) -> Result<ProblemParams> {
        let c = &self.params;
        let mut prm = ProblemParams::new(atom, lambda0, vartheta, p, c.p_star, c.i0);
        if let Some(r) = c.rho0 {
            prm.rho0 = r;
        }
        if let Some(e) = c.eps {
            prm.eps = e;
        }
        prm.uv_sigma = c.uv_sigma;
        prm.validate(atom)?;
        if !(vartheta > 0.0 && vartheta < std::f64::consts::FRAC_PI_4) {
            bail!("vartheta must lie in (0, pi/4)");
        }
        if !(c.uv_sigma > 0.0) {
            bail!("uv_sigma must be positive");
        }
        Ok(prm)
    }

    pub fn p(&self) -> [C64; 3] {
        let c = &self.params;
        [0, 1, 2].map(|i| C64::new(c.p[i], c.p_im[i]))
    }

    pub fn flow_options(&self) -> FlowOptions {
        let t = &self.tolerances;
        FlowOptions { l_max: self.truncation.l_max, m_max: self.truncation.m_max, j_max: t.j_max, tol_z: t.tol_z, newton_max: t.newton_max, tail_tol: t.tail_tol, ..FlowOptions::default() }
    }

    /// Everything a command needs; any failure here is a config error.
    pub fn setup(self) -> Result<Setup> {
        let atom = self.atom()?;
        let g = &self.grid;
        let grid = ModeGrid::spherical(g.n_r, g.n_dir, g.k_max, self.params.uv_sigma)?;
        let t = &self.truncation;
        if t.m_max == 0 || t.l_max == 0 {
            bail!("m_max and l_max must be positive");
        }
        if self.tolerances.tol_z < 0.0 || !(self.tolerances.tail_tol > 0.0) {
            bail!("tolerances must be nonnegative (tail_tol positive)");
        }
        if self.oracle.thetas.len() < 3 {
            bail!("[oracle] thetas needs at least 3 angles");
        }
        let params = self.problem(&atom, self.params.lambda0, self.params.vartheta, self.p())?;
        if let Some(s) = &self.sweep {
            for &l in &s.lambdas {
                self.problem(&atom, l, self.params.vartheta, self.p())?;
            }
            for &v in &s.varthetas {
                self.problem(&atom, self.params.lambda0, v, self.p())?;
            }
            if s.p_grid.iter().any(|p| p.iter().map(|x| x * x).sum::<f64>() >= 1.0) {
                bail!("sweep momenta must satisfy |p| < 1");
            }
        }
        let basis = build_basis_capped(&grid, t.n_max, t.e_max, t.basis_cap)?;
        let opts = self.flow_options();
        let hash = self.hash();
        Ok(Setup { config: self, hash, atom, grid, basis, params, opts })
    }
}

pub fn load(path: &Path) -> Result<Setup> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    RunConfig::from_toml(&text).with_context(|| format!("parsing {}", path.display()))?.setup()
}
