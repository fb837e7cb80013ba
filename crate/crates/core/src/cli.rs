//! Experiment runner behind the `kreinext` binary.
//!
//! A run is described by a [`RunConfig`] read from TOML and overridden by
//! command line flags. Every subcommand writes a CSV table and a JSON report
//! into the output directory; both are written to a temporary file first and
//! renamed into place.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use faer::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::extensions::{
    bc_row_space_distance, build_extension, kernel_projector, krein_reduced_inverse, krein_sup_form, lagrangian_defect,
    order_check, relatively_prime_check, shift_noncommute_check, ExtensionRealization, ExtensionSpec,
};
use crate::ideals::{block_decompose, compactness_transfer_check, eigen_inequality_check, schatten_equivalence_suite, spectral_counts};
use crate::kreinformula::{
    general_krein_rhs, krein_fk_rhs, laurent_limit_check, m_derivative_check, resolvent_diff_ideal_check, reversed_krein_rhs,
    robin_reference, small_z_series,
};
use crate::models::ModelOperator;
use crate::moperator::{
    alpha_of_pair, boundary_behavior, cayley, donoghue_m, herglotz_margin, lft_transform, nplus_basis, BehaviorMode,
};
use crate::numlin::{norm, singular_values, small, GridFun, KernelOperator, SchattenP, C64, I, ONE, ZERO};

#[derive(Debug, Parser)]
#[command(name = "kreinext", version, about = "Friedrichs and Krein extensions: verification runs and tables")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub opts: Overrides,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    /// Run every check suite and report pass/fail per claim
    Verify,
    /// Eigenvalue counting functions of S_F and the reduced S_K
    Spectra,
    /// Samples of the Donoghue M-operator along contours
    Mfun,
    /// Schatten norm convergence table across grid sizes
    Schatten,
}

#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// TOML run configuration
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output directory for the CSV table and JSON report
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Random seed for sampled checks
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Grid points per model part
    #[arg(long, global = true, value_name = "N")]
    pub n: Option<usize>,
    #[arg(long, global = true, value_enum)]
    pub model: Option<ModelKind>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    #[default]
    Interval,
    Halfline,
    /// The configured interval plus `-u'' + u` on `(0, 2)`.
    Dsum,
}

/// Schatten exponent as written in the config: a number or `"inf"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PValue {
    Number(f64),
    Text(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Contour {
    /// Start point `[re, im]`.
    pub from: [f64; 2],
    pub to: [f64; 2],
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MfunConfig {
    pub contour: Vec<Contour>,
}

impl Default for MfunConfig {
    fn default() -> Self {
        MfunConfig { contour: vec![Contour { from: [-1.0, 0.1], to: [-1.0, 10.0], points: 25 }] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SchattenConfig {
    pub n: Vec<usize>,
}

impl Default for SchattenConfig {
    fn default() -> Self {
        SchattenConfig { n: vec![512, 1024, 2048] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelKind,
    /// Grid points per part; defaults depend on the model.
    pub n: Option<usize>,
    /// Interval length, or the truncation length of the half-line.
    pub length: Option<f64>,
    /// Constant potential on the interval part.
    pub potential: f64,
    pub seed: u64,
    pub out: PathBuf,
    /// `friedrichs`, `krein`, `robin` or `param:<b>` (B = b I on all of ker S*).
    pub extensions: Vec<String>,
    /// Spectral parameters `[re, im]` for the resolvent formula checks.
    pub z: Vec<[f64; 2]>,
    pub p: Option<Vec<PValue>>,
    pub jmax: Option<usize>,
    /// Overrides keyed by check id (without the `@...` suffix).
    pub tolerances: BTreeMap<String, f64>,
    pub mfun: MfunConfig,
    pub schatten: SchattenConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelKind::Interval,
            n: None,
            length: None,
            potential: 0.0,
            seed: 7,
            out: PathBuf::from("out"),
            extensions: vec!["friedrichs".into(), "krein".into(), "param:1".into()],
            z: vec![[-1.0, 0.0], [-10.0, 0.0], [1.0, 2.0]],
            p: None,
            jmax: None,
            tolerances: BTreeMap::new(),
            mfun: MfunConfig::default(),
            schatten: SchattenConfig::default(),
        }
    }
}

/// Usage or configuration problem; maps to exit code 2.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

fn usage<T>(msg: impl Into<String>) -> Result<T, UsageError> {
    Err(UsageError(msg.into()))
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, UsageError> {
        toml::from_str(text).map_err(|e| UsageError(format!("config: {e}")))
    }

    /// Reads the config file (if any) and applies command line overrides.
    pub fn load(opts: &Overrides) -> Result<Self, UsageError> {
        let mut cfg = match &opts.config {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| UsageError(format!("cannot read {}: {e}", path.display())))?;
                Self::from_toml(&text).map_err(|e| UsageError(format!("{}: {}", path.display(), e.0)))?
            }
            None => RunConfig::default(),
        };
        if let Some(m) = opts.model {
            cfg.model = m;
        }
        if let Some(n) = opts.n {
            cfg.n = Some(n);
        }
        if let Some(s) = opts.seed {
            cfg.seed = s;
        }
        if let Some(o) = &opts.out {
            cfg.out = o.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), UsageError> {
        for (id, t) in &self.tolerances {
            if !CHECKS.iter().any(|c| c.id == id) {
                return usage(format!("config: tolerances.{id}: unknown check id"));
            }
            if !(*t > 0.0 && t.is_finite()) {
                return usage(format!("config: tolerances.{id}: tolerance must be positive, got {t}"));
            }
        }
        for z in &self.z {
            if !z.iter().all(|v| v.is_finite()) {
                return usage(format!("config: z: non-finite entry {z:?}"));
            }
        }
        for c in &self.mfun.contour {
            if c.points < 2 {
                return usage("config: mfun.contour.points must be at least 2");
            }
        }
        if let Some(l) = self.length {
            if !(l > 0.0 && l.is_finite()) {
                return usage(format!("config: length must be positive, got {l}"));
            }
        }
        if !(self.potential >= 0.0 && self.potential.is_finite()) {
            return usage(format!("config: potential must be nonnegative, got {}", self.potential));
        }
        if self.jmax == Some(0) {
            return usage("config: jmax must be positive");
        }
        for s in &self.extensions {
            parse_extension_name(s)?;
        }
        self.schatten_ps()?;
        Ok(())
    }

    pub fn grid_n(&self) -> usize {
        self.n.unwrap_or(match self.model {
            ModelKind::Interval => 1024,
            ModelKind::Halfline => 2048,
            ModelKind::Dsum => 512,
        })
    }

    pub fn min_n(&self) -> usize {
        match self.model {
            ModelKind::Halfline => 512,
            _ => 64,
        }
    }

    pub fn build_model(&self, n: usize) -> crate::Result<ModelOperator> {
        match self.model {
            ModelKind::Interval => ModelOperator::interval(self.length.unwrap_or(1.0), self.potential, n),
            ModelKind::Halfline => ModelOperator::halfline_schroedinger(self.length.unwrap_or(30.0), n),
            ModelKind::Dsum => ModelOperator::direct_sum(&[
                ModelOperator::interval(self.length.unwrap_or(1.0), self.potential, n)?,
                ModelOperator::interval(2.0, 1.0, n)?,
            ]),
        }
    }

    /// `-u''` on the unit interval, where closed-form values are known.
    fn unit_interval(&self) -> bool {
        self.model == ModelKind::Interval && self.length.unwrap_or(1.0) == 1.0 && self.potential == 0.0
    }

    fn single_interval(&self) -> bool {
        self.model == ModelKind::Interval
    }

    pub fn schatten_ps(&self) -> Result<Vec<SchattenP>, UsageError> {
        let Some(list) = &self.p else {
            return Ok(vec![SchattenP::Finite(1.0), SchattenP::Finite(2.0)]);
        };
        list.iter()
            .map(|v| {
                let parsed = match v {
                    PValue::Number(x) if *x > 0.0 && x.is_finite() => Some(SchattenP::Finite(*x)),
                    PValue::Number(_) => None,
                    PValue::Text(s) => SchattenP::parse(s),
                };
                parsed.ok_or_else(|| UsageError(format!("config: p: invalid Schatten exponent {v:?}")))
            })
            .collect()
    }

    fn z_values(&self) -> Vec<C64> {
        self.z.iter().map(|z| C64::new(z[0], z[1])).collect()
    }
}

enum ExtName {
    Friedrichs,
    Krein,
    Robin,
    Param(f64),
}

fn parse_extension_name(s: &str) -> Result<ExtName, UsageError> {
    match s.trim() {
        "friedrichs" => Ok(ExtName::Friedrichs),
        "krein" => Ok(ExtName::Krein),
        "robin" => Ok(ExtName::Robin),
        t => match t.strip_prefix("param:").map(|b| b.trim().parse::<f64>()) {
            Some(Ok(b)) if b >= 0.0 && b.is_finite() => Ok(ExtName::Param(b)),
            _ => usage(format!("config: extensions: expected friedrichs, krein, robin or param:<b >= 0>, got {s:?}")),
        },
    }
}

fn extension_spec(s: &str, model: &ModelOperator) -> crate::Result<ExtensionSpec> {
    match parse_extension_name(s).map_err(|e| crate::Error::InvalidInput(e.0))? {
        ExtName::Friedrichs => Ok(ExtensionSpec::Friedrichs),
        ExtName::Krein => Ok(ExtensionSpec::Krein),
        ExtName::Robin => robin_reference(model),
        ExtName::Param(b) => Ok(ExtensionSpec::scalar_param(model.deficiency_r(), b)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Relation {
    #[serde(rename = "<=")]
    AtMost,
    #[serde(rename = ">=")]
    AtLeast,
}

#[derive(Debug, Clone, Serialize)]
pub struct Record {
    pub id: String,
    /// The statement being checked, or `plumbing`.
    pub claim: String,
    pub status: Status,
    pub measured: Option<f64>,
    pub tolerance: f64,
    pub relation: Relation,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub advisory: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Environment {
    pub version: String,
    pub model: String,
    pub grid_sizes: Vec<usize>,
    pub deficiency: Option<usize>,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub total: usize,
    pub passed: usize,
    pub failed: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub command: Command,
    pub environment: Environment,
    pub config: RunConfig,
    pub records: Vec<Record>,
    pub summary: Summary,
}

impl RunReport {
    pub fn passed(&self) -> bool {
        self.summary.failed == 0
    }
}

/// Result of a subcommand: the report and the files written.
#[derive(Debug)]
pub struct Outcome {
    pub report: RunReport,
    pub files: Vec<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Scope {
    Any,
    /// Needs closed-form values of `-u''` on `(0, 1)`.
    UnitInterval,
    /// Needs the Robin reference extension.
    SingleInterval,
    /// Composes resolvents, which is exact only without a truncated half-line:
    /// a product of compressed kernels misses the integral beyond the cut.
    Bounded,
}

struct CheckDef {
    id: &'static str,
    claim: &'static str,
    tol: f64,
    rel: Relation,
    scope: Scope,
}

const fn def(id: &'static str, claim: &'static str, tol: f64, rel: Relation, scope: Scope) -> CheckDef {
    CheckDef { id, claim, tol, rel, scope }
}

use Relation::{AtLeast, AtMost};
use Scope::{Any, Bounded, SingleInterval, UnitInterval};

const CHECKS: &[CheckDef] = &[
    def("model.dirichlet_eigenvalues", "mu_F_j = (j pi)^2 for the Dirichlet Laplacian", 1e-4, AtMost, UnitInterval),
    def("model.green_trace", "tr S_F^{-1} = 1/6", 1e-5, AtMost, UnitInterval),
    def("model.green_hs", "|S_F^{-1}|_2 = 1/sqrt(90)", 1e-5, AtMost, UnitInterval),
    def("model.kernel_residual", "ker(S*) basis solves S* u = 0", 1e-6, AtMost, Any),
    def("model.deficiency_dim", "dim ker(S*) = r", 0.5, AtMost, Any),
    def("model.friedrichs_bottom", "epsilon <= mu_F_1", 1e-4, AtMost, Any),
    def("ext.kernel_projector", "P is an orthogonal projection onto ker(S*)", 1e-10, AtMost, Any),
    def("ext.reduced_inverse_kernel", "P (I-P) S_F^{-1} (I-P) = 0", 1e-9, AtMost, Any),
    def("ext.reduced_inverse_roots", "reduced S_K^{-1} = (I-P) S_F^{-1} (I-P) on ker(S*)^perp", 1e-4, AtMost, UnitInterval),
    def("ext.param_b0_krein", "S_{0,N_0} = S_K", 1e-6, AtMost, Any),
    def("ext.param_empty_friedrichs", "S_{B,W} with W = {0} is S_F", 1e-6, AtMost, Any),
    def("ext.lagrangian", "boundary conditions of S_K are Lagrangian", 1e-8, AtMost, Any),
    def("ext.kernel_dim_b0", "dim ker S_{B,W} = dim ker B (B = 0)", 0.5, AtMost, Any),
    def("ext.kernel_dim_b_partial", "dim ker S_{B,W} = dim ker B (B = diag(0,1,...))", 0.5, AtMost, Any),
    def("ext.kernel_dim_b_identity", "dim ker S_{B,W} = dim ker B (B = I)", 0.5, AtMost, Any),
    def("ext.order_friedrichs_krein", "S_K <= S_F", 1e-8, AtMost, Any),
    def("ext.sandwich", "S_K <= S_{B,W} <= S_F", 1e-8, AtMost, Any),
    def("ext.shift_friedrichs", "(S + c)_F = S_F + c", 1e-8, AtMost, Any),
    def("ext.shift_krein_gap", "(S + c)_K != S_K + c", 1e-3, AtLeast, Any),
    def("ext.relatively_prime", "S_F and S_K are relatively prime", 0.5, AtMost, Any),
    def("ext.resolvent_identity", "first resolvent identity for S_K", 1e-8, AtMost, Bounded),
    def("ext.sup_form_kernel", "sup form vanishes on ker(S*)", 1e-10, AtMost, Any),
    def("mop.m_at_i", "M(i) = i I", 1e-10, AtMost, Any),
    def("mop.herglotz", "Im M(z) / Im z >= bound", 1e-10, AtMost, Any),
    def("mop.m_symmetry", "M(conj z) = M(z)^*", 1e-10, AtMost, Any),
    def("mop.lft_partner", "linear fractional transform gives M of the partner extension", 1e-6, AtMost, Any),
    def("mop.lft_fixed_point", "M = i I is fixed by every transform", 1e-12, AtMost, Any),
    def("mop.alpha_unitarity", "e^{-2i alpha} is unitary", 1e-8, AtMost, Any),
    def("mop.tan_alpha", "tan alpha_{F,K} = M_F(0)", 1e-6, AtMost, Any),
    def("mop.cayley_isometry", "Cayley transform is unitary", 1e-8, AtMost, Bounded),
    def("mop.behavior_friedrichs", "M_F(lambda) diverges to -infinity as lambda -> -infinity", 50.0, AtLeast, Any),
    def("mop.behavior_krein", "M_K(lambda) diverges to +infinity as lambda -> 0-", 50.0, AtLeast, Any),
    def("mop.behavior_param", "M of S_{I,N_0} stays bounded near 0", 50.0, AtMost, Any),
    def("krein.general", "Krein resolvent formula S_F -> S_K against the boundary value problem", 1e-6, AtMost, Any),
    def("krein.reversed", "Krein resolvent formula S_K -> S_F against the Dirichlet Green kernel", 1e-6, AtMost, Any),
    def("krein.fk", "R_K(z) from R_F(z) and M_F", 1e-6, AtMost, Any),
    def("krein.laurent_ratio", "z U_{K,z,i} u -> i P u linearly in |z|", 0.2, AtMost, Any),
    def("krein.laurent_principal", "z R_K(z) -> -P", 1e-4, AtMost, Any),
    def("krein.small_z_series", "Neumann series for R_K(z)(I-P) near 0", 1e-7, AtMost, Bounded),
    def("krein.m_derivative", "dM_F/dz at 0 = I + P S_F^{-2} P", 1e-5, AtMost, Any),
    def("krein.m_derivative_min", "dM_F/dz at 0 >= I", 1e-6, AtMost, Any),
    def("krein.rank_ratio", "R_K - R_F has rank r", 1e-9, AtMost, Any),
    def("krein.rank_match", "rank of R_2 - R_1 = rank of e^{2i alpha_02} - e^{2i alpha_01}", 0.5, AtMost, SingleInterval),
    def("krein.identity_tangent", "R_2(i) - R_1(i) through tan alpha", 1e-7, AtMost, SingleInterval),
    def("krein.identity_exponential", "R_2(i) - R_1(i) through e^{-2i alpha}", 1e-7, AtMost, SingleInterval),
    def("krein.identity_transport", "R_2(z) - R_1(z) = U_2 (R_2(i) - R_1(i)) U_1", 1e-7, AtMost, SingleInterval),
    def("ideals.eigen_inequality", "mu_F_j <= mu_K_j", 1e-4, AtMost, Any),
    def("ideals.square_defect", "|(I-P) S_F^{-1/2}|_{2p}^2 = |(I-P) S_F^{-1} (I-P)|_p", 1e-8, AtMost, Any),
    def("ideals.reduced_vs_compressed", "|reduced S_K^{-1}|_p = |(I-P) S_F^{-1} (I-P)|_p", 1e-12, AtMost, Any),
    def("ideals.root_symmetry", "|(I-P) S_F^{-1/2}|_{2p} = |S_F^{-1/2} (I-P)|_{2p}", 1e-10, AtMost, Any),
    def("ideals.domination", "sigma_j(reduced S_K^{-1}) <= sigma_j(S_F^{-1})", 1e-12, AtMost, Any),
    def("ideals.krein_trace_bound", "tr reduced S_K^{-1} <= 1/6", 1e-9, AtMost, UnitInterval),
    def("ideals.block_reconstruction", "block decomposition of S_F^{-1} along ker(S*)", 1e-10, AtMost, Any),
    def("ideals.block_adjoint", "off-diagonal blocks of S_F^{-1} are adjoint", 1e-10, AtMost, Any),
    def("spectra.ratio", "mu_K_j / mu_F_j >= 1", 1e-6, AtMost, Any),
    def("spectra.rank", "plumbing", 0.5, AtMost, Any),
    def("mfun.m_at_i", "M(i) = i I", 1e-10, AtMost, Any),
    def("mfun.herglotz", "Im M(z) / Im z >= bound", 1e-10, AtMost, Any),
    def("mfun.im_trace_monotone", "Im tr M(z) / Im z decreases upward along vertical contours", 0.5, AtMost, Any),
    def("schatten.square_defect", "|(I-P) S_F^{-1/2}|_{2p}^2 = |(I-P) S_F^{-1} (I-P)|_p", 1e-8, AtMost, Any),
    def("schatten.compressed_bound", "|(I-P) S_F^{-1} (I-P)|_p <= |S_F^{-1}|_p", 1e-12, AtMost, Any),
    def("schatten.friedrichs_trace", "tr S_F^{-1} = 1/6", 1e-5, AtMost, UnitInterval),
    def("schatten.compressed_trace", "tr (I-P) S_F^{-1} (I-P) = 1/6 - tr P S_F^{-1} P = 1/15", 1e-4, AtMost, UnitInterval),
    def("schatten.compressed_hs", "|(I-P) S_F^{-1} (I-P)|_2^2 = 1/90 - kernel blocks = 11/12600", 1e-4, AtMost, UnitInterval),
];

fn check_def(id: &str) -> &'static CheckDef {
    CHECKS.iter().find(|c| c.id == id).unwrap_or_else(|| panic!("unregistered check {id}"))
}

type Measured = Result<f64, String>;

fn lib<T>(r: crate::Result<T>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

/// Collects records, applying tolerance overrides and scope filtering.
struct Suite<'c> {
    cfg: &'c RunConfig,
    records: Vec<Record>,
}

impl<'c> Suite<'c> {
    fn new(cfg: &'c RunConfig) -> Self {
        Suite { cfg, records: vec![] }
    }

    fn applies(&self, id: &str) -> bool {
        match check_def(id).scope {
            Any => true,
            UnitInterval => self.cfg.unit_interval(),
            SingleInterval => self.cfg.single_interval(),
            Bounded => self.cfg.model != ModelKind::Halfline,
        }
    }

    fn tolerance(&self, id: &str) -> f64 {
        self.cfg.tolerances.get(id).copied().unwrap_or(check_def(id).tol)
    }

    fn push(&mut self, id: &str, suffix: Option<String>, measured: Measured) {
        let d = check_def(id);
        let tol = self.tolerance(id);
        let full = match suffix {
            Some(s) => format!("{id}@{s}"),
            None => id.to_string(),
        };
        let (status, value, advisory) = match measured {
            Ok(v) => {
                let ok = match d.rel {
                    AtMost => v <= tol,
                    AtLeast => v >= tol,
                };
                (if ok { Status::Pass } else { Status::Fail }, Some(v).filter(|v| v.is_finite()), None)
            }
            Err(e) => (Status::Fail, None, Some(e)),
        };
        self.records.push(Record {
            id: full,
            claim: d.claim.to_string(),
            status,
            measured: value,
            tolerance: tol,
            relation: d.rel,
            advisory,
        });
    }

    fn check(&mut self, id: &str, f: impl FnOnce() -> Measured) {
        if self.applies(id) {
            self.push(id, None, f());
        }
    }

    fn check_at(&mut self, id: &str, suffix: String, f: impl FnOnce() -> Measured) {
        if self.applies(id) {
            self.push(id, Some(suffix), f());
        }
    }

    fn report(self, command: Command, environment: Environment) -> RunReport {
        let passed = self.records.iter().filter(|r| r.status == Status::Pass).count();
        let total = self.records.len();
        RunReport {
            command,
            environment,
            config: self.cfg.clone(),
            records: self.records,
            summary: Summary { total, passed, failed: total - passed },
        }
    }
}

fn environment(cfg: &RunConfig, model: Option<&ModelOperator>, grid_sizes: Vec<usize>) -> Environment {
    Environment {
        version: env!("CARGO_PKG_VERSION").to_string(),
        model: model.map(|m| m.label().to_string()).unwrap_or_else(|| format!("{:?}", cfg.model).to_lowercase()),
        grid_sizes,
        deficiency: model.map(ModelOperator::deficiency_r),
        seed: cfg.seed,
    }
}

fn z_label(z: C64) -> String {
    format!("{}{:+}i", z.re, z.im)
}

fn p_label(p: SchattenP) -> String {
    format!("p={}", p.label())
}

fn rel_hs(m: &ModelOperator, a: &KernelOperator, b: &KernelOperator) -> f64 {
    let sp = m.space();
    a.sub(b).hs_norm(sp) / b.hs_norm(sp)
}

fn identity_times(r: usize, c: C64) -> Mat<C64> {
    Mat::from_fn(r, r, |i, j| if i == j { c } else { ZERO })
}

fn diag(v: &[f64]) -> Mat<C64> {
    Mat::from_fn(v.len(), v.len(), |i, j| if i == j { C64::new(v[i], 0.0) } else { ZERO })
}

/// Squared wavenumbers of the unit-interval Krein problem: positive roots of
/// `2 - 2 cos k - k sin k`.
fn unit_interval_krein_eigenvalues(count: usize) -> Vec<f64> {
    let f = |k: f64| 2.0 - 2.0 * k.cos() - k * k.sin();
    let mut out = vec![];
    let mut a = 0.5;
    while out.len() < count {
        let b = a + 1e-3;
        if f(a) * f(b) < 0.0 {
            let (mut lo, mut hi) = (a, b);
            for _ in 0..200 {
                let m = 0.5 * (lo + hi);
                if f(lo) * f(m) <= 0.0 {
                    hi = m;
                } else {
                    lo = m;
                }
            }
            let k = 0.5 * (lo + hi);
            out.push(k * k);
        }
        a = b;
    }
    out
}

fn max_rel_error(got: &[f64], want: &[f64]) -> f64 {
    got.iter().zip(want).map(|(g, w)| (g - w).abs() / w.abs()).fold(0.0, f64::max)
}

/// Every check, in a fixed order. Failures of individual computations become
/// failing records with the error text as advisory.
pub fn cmd_verify(cfg: &RunConfig) -> RunReport {
    let n = cfg.grid_n();
    let mut suite = Suite::new(cfg);
    let model = if n < cfg.min_n() {
        Err(format!("grid too coarse: n = {n}, the {:?} model needs n >= {}", cfg.model, cfg.min_n()).to_lowercase())
    } else {
        lib(cfg.build_model(n))
    };
    let m = match model {
        Ok(m) => m,
        Err(msg) => {
            for c in CHECKS.iter().filter(|c| is_verify_check(c.id)) {
                suite.check(c.id, || Err(msg.clone()));
            }
            return suite.report(Command::Verify, environment(cfg, None, vec![n]));
        }
    };
    verify_model(&mut suite, &m);
    verify_extensions(&mut suite, &m);
    verify_moperator(&mut suite, &m);
    verify_kreinformula(&mut suite, &m);
    verify_ideals(&mut suite, &m);
    suite.report(Command::Verify, environment(cfg, Some(&m), vec![n]))
}

fn is_verify_check(id: &str) -> bool {
    ["model.", "ext.", "mop.", "krein.", "ideals."].iter().any(|p| id.starts_with(p))
}

fn verify_model(s: &mut Suite, m: &ModelOperator) {
    let sp = m.space();
    let g0 = lib(m.friedrichs_green(ZERO));
    s.check("model.dirichlet_eigenvalues", || {
        let c = lib(spectral_counts(sp, g0.as_ref().map_err(Clone::clone)?, 5, true, "dirichlet"))?;
        let want: Vec<f64> = (1..=5).map(|j| (j as f64 * PI).powi(2)).collect();
        Ok(max_rel_error(&c.values, &want))
    });
    let plain = lib(m.friedrichs_green_plain(ZERO));
    s.check("model.green_trace", || {
        let g = plain.as_ref().map_err(Clone::clone)?;
        let tr: f64 = (0..m.n()).map(|i| g.matrix[(i, i)].re).sum();
        Ok((tr - 1.0 / 6.0).abs())
    });
    s.check("model.green_hs", || Ok((plain.as_ref().map_err(Clone::clone)?.hs_norm(sp) - 1.0 / 90f64.sqrt()).abs()));
    let n0 = lib(m.kernel_basis_n0());
    s.check("model.kernel_residual", || {
        let b = &n0.as_ref().map_err(Clone::clone)?.basis;
        let mut worst: f64 = 0.0;
        for j in 0..b.dim() {
            worst = worst.max(lib(m.residual_norm(&lib(m.adjoint_action(&b.column(j)))?))?);
        }
        Ok(worst)
    });
    s.check("model.deficiency_dim", || Ok((n0.as_ref().map_err(Clone::clone)?.basis.dim() as f64 - m.deficiency_r() as f64).abs()));
    s.check("model.friedrichs_bottom", || {
        let c = lib(spectral_counts(sp, g0.as_ref().map_err(Clone::clone)?, 1, true, "dirichlet"))?;
        let eps = m.epsilon();
        Ok(((eps - c.values[0]) / eps).max(0.0))
    });
}

fn verify_extensions(s: &mut Suite, m: &ModelOperator) {
    let sp = m.space();
    let r = m.deficiency_r();
    let f = lib(build_extension(m, ExtensionSpec::Friedrichs));
    let k = lib(build_extension(m, ExtensionSpec::Krein));
    let both = || -> Result<(&ExtensionRealization, &ExtensionRealization), String> {
        Ok((f.as_ref().map_err(Clone::clone)?, k.as_ref().map_err(Clone::clone)?))
    };
    let seed = s.cfg.seed;
    let p = lib(kernel_projector(m));
    s.check("ext.kernel_projector", || {
        let p = p.as_ref().map_err(Clone::clone)?;
        Ok(p.compose(p).sub(p).hs_norm(sp).max(p.adjoint(sp).sub(p).hs_norm(sp)))
    });
    s.check("ext.reduced_inverse_kernel", || {
        let kr = lib(krein_reduced_inverse(m))?;
        Ok(p.as_ref().map_err(Clone::clone)?.compose(&kr).op_norm(sp))
    });
    s.check("ext.reduced_inverse_roots", || {
        let kr = lib(krein_reduced_inverse(m))?;
        let c = lib(spectral_counts(sp, &kr, 5, true, "reduced krein"))?;
        Ok(max_rel_error(&c.values, &unit_interval_krein_eigenvalues(5)))
    });
    s.check("ext.param_b0_krein", || {
        let p0 = lib(build_extension(m, ExtensionSpec::scalar_param(r, 0.0)))?;
        lib(bc_row_space_distance(p0.bc(), both()?.1.bc()))
    });
    s.check("ext.param_empty_friedrichs", || {
        let e = lib(build_extension(m, ExtensionSpec::Param { b: Mat::zeros(0, 0), w: Mat::zeros(r, 0) }))?;
        lib(bc_row_space_distance(e.bc(), m.dirichlet_bc().as_ref()))
    });
    s.check("ext.lagrangian", || lib(lagrangian_defect(m, both()?.1.bc())));
    let mut partial = vec![1.0; r];
    partial[0] = 0.0;
    for (id, b, want) in [
        ("ext.kernel_dim_b0", vec![0.0; r], r),
        ("ext.kernel_dim_b_partial", partial, 1),
        ("ext.kernel_dim_b_identity", vec![1.0; r], 0),
    ] {
        s.check(id, || {
            let e = lib(build_extension(m, ExtensionSpec::Param { b: diag(&b), w: small::identity(r) }))?;
            Ok((e.kernel_dim() as f64 - want as f64).abs())
        });
    }
    s.check("ext.order_friedrichs_krein", || {
        let (f, k) = both()?;
        Ok((-lib(order_check(f, k, 1.0))?.min_eigenvalue).max(0.0))
    });
    let param = lib(build_extension(m, ExtensionSpec::scalar_param(r, 1.0)));
    for a in [0.5, 1.0, 10.0] {
        s.check_at("ext.sandwich", format!("a={a}"), || {
            let (f, k) = both()?;
            let b = param.as_ref().map_err(Clone::clone)?;
            let lo = lib(order_check(f, b, a))?.min_eigenvalue;
            let hi = lib(order_check(b, k, a))?.min_eigenvalue;
            Ok((-lo.min(hi)).max(0.0))
        });
    }
    let shift = lib(shift_noncommute_check(m, 1.0));
    s.check("ext.shift_friedrichs", || Ok(shift.as_ref().map_err(Clone::clone)?.friedrichs_residual));
    s.check("ext.shift_krein_gap", || Ok(shift.as_ref().map_err(Clone::clone)?.krein_gap));
    s.check("ext.relatively_prime", || {
        let (f, k) = both()?;
        Ok((relatively_prime_check(f, k).1 as f64 - 2.0 * r as f64).abs())
    });
    s.check("ext.resolvent_identity", || {
        let k = both()?.1;
        let (z1, z2) = (C64::new(-2.0, 1.0), C64::new(0.5, -3.0));
        let (r1, r2) = (lib(k.resolvent_at(z1))?, lib(k.resolvent_at(z2))?);
        Ok(rel_hs(m, &r1.sub(&r2), &r1.compose(&r2).scale(z1 - z2)))
    });
    s.check("ext.sup_form_kernel", || {
        let n0 = lib(m.kernel_basis_n0())?;
        Ok(lib(krein_sup_form(m, &n0.basis.column(0), 200, seed))?.span_sup)
    });
}

fn verify_moperator(s: &mut Suite, m: &ModelOperator) {
    let sp = m.space();
    let r = m.deficiency_r();
    let plus = lib(nplus_basis(m));
    let exts: Vec<(&str, Result<ExtensionRealization, String>)> = vec![
        ("friedrichs", lib(build_extension(m, ExtensionSpec::Friedrichs))),
        ("krein", lib(build_extension(m, ExtensionSpec::Krein))),
        ("param:1", lib(build_extension(m, ExtensionSpec::scalar_param(r, 1.0)))),
    ];
    let get = |i: usize| -> Result<(&ExtensionRealization, &crate::numlin::SubspaceBasis), String> {
        Ok((exts[i].1.as_ref().map_err(Clone::clone)?, plus.as_ref().map_err(Clone::clone)?))
    };
    for (i, (name, _)) in exts.iter().enumerate() {
        s.check_at("mop.m_at_i", name.to_string(), || {
            let (e, b) = get(i)?;
            let mi = lib(donoghue_m(e, b, I))?;
            Ok(small::max_abs((mi - identity_times(b.dim(), I)).as_ref()))
        });
    }
    let seed = s.cfg.seed;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples: Vec<C64> = (0..20)
        .map(|_| {
            let im: f64 = rng.gen_range(0.1..5.0);
            let sign = if rng.gen_bool(0.5) { -1.0 } else { 1.0 };
            C64::new(rng.gen_range(-20.0..20.0), sign * im)
        })
        .collect();
    for (i, name) in [(0, "friedrichs"), (1, "krein")] {
        s.check_at("mop.herglotz", name.to_string(), || {
            let (e, b) = get(i)?;
            let mut worst: f64 = 0.0;
            for &z in &samples {
                let mz = lib(donoghue_m(e, b, z))?;
                worst = worst.max(-lib(herglotz_margin(mz.as_ref(), z))?);
            }
            Ok(worst)
        });
    }
    s.check("mop.m_symmetry", || {
        let (e, b) = get(1)?;
        let mut worst: f64 = 0.0;
        for &z in samples.iter().take(5) {
            let a = lib(donoghue_m(e, b, z))?;
            let c = lib(donoghue_m(e, b, z.conj()))?;
            worst = worst.max(small::max_abs((c - a.adjoint()).as_ref()) / (1.0 + small::max_abs(a.as_ref())));
        }
        Ok(worst)
    });
    let alpha = (|| -> Result<_, String> {
        let (f, b) = get(0)?;
        lib(alpha_of_pair(f, get(1)?.0, b))
    })();
    s.check("mop.lft_partner", || {
        let a = alpha.as_ref().map_err(Clone::clone)?;
        let (f, b) = get(0)?;
        let z = C64::new(-1.0, 0.0);
        let mf = lib(donoghue_m(f, b, z))?;
        let mk = lib(donoghue_m(get(1)?.0, b, z))?;
        let pred = lib(lft_transform(mf.as_ref(), a))?;
        Ok(small::max_abs((pred - &mk).as_ref()) / small::max_abs(mk.as_ref()))
    });
    s.check("mop.lft_fixed_point", || {
        let a = alpha.as_ref().map_err(Clone::clone)?;
        let ii = identity_times(a.v.nrows(), I);
        Ok(small::max_abs((lib(lft_transform(ii.as_ref(), a))? - &ii).as_ref()))
    });
    s.check("mop.alpha_unitarity", || Ok(alpha.as_ref().map_err(Clone::clone)?.unitarity_defect));
    s.check("mop.tan_alpha", || {
        let a = alpha.as_ref().map_err(Clone::clone)?;
        let (f, b) = get(0)?;
        let mf0 = lib(donoghue_m(f, b, ZERO))?;
        Ok(small::max_abs((lib(a.tan())? - mf0).as_ref()))
    });
    s.check("mop.cayley_isometry", || {
        let k = get(1)?.0;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let mut worst: f64 = 0.0;
        for _ in 0..3 {
            let u = GridFun((0..m.n()).map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect());
            let c = lib(cayley(k, &u))?;
            worst = worst.max((norm(sp, &c) - norm(sp, &u)).abs() / norm(sp, &u));
        }
        Ok(worst)
    });
    s.check("mop.behavior_friedrichs", || {
        let (f, b) = get(0)?;
        let bb = lib(boundary_behavior(f, b, BehaviorMode::FriedrichsTest))?;
        Ok(-bb.values.iter().map(|v| *v.last().unwrap_or(&0.0)).fold(f64::NEG_INFINITY, f64::max))
    });
    s.check("mop.behavior_krein", || {
        let (k, b) = get(1)?;
        let bb = lib(boundary_behavior(k, b, BehaviorMode::KreinTest))?;
        Ok(bb.values.iter().map(|v| *v.last().unwrap_or(&0.0)).fold(f64::INFINITY, f64::min))
    });
    s.check("mop.behavior_param", || {
        let (p, b) = get(2)?;
        let bb = lib(boundary_behavior(p, b, BehaviorMode::KreinTest))?;
        Ok(bb.values.iter().flatten().map(|x| x.abs()).fold(0.0, f64::max))
    });
}

fn verify_kreinformula(s: &mut Suite, m: &ModelOperator) {
    let sp = m.space();
    let r = m.deficiency_r();
    let f = lib(build_extension(m, ExtensionSpec::Friedrichs));
    let k = lib(build_extension(m, ExtensionSpec::Krein));
    let both = || -> Result<(&ExtensionRealization, &ExtensionRealization), String> {
        Ok((f.as_ref().map_err(Clone::clone)?, k.as_ref().map_err(Clone::clone)?))
    };
    for z in s.cfg.z_values() {
        let rk = both().and_then(|(_, k)| lib(k.resolvent_at(z)));
        s.check_at("krein.general", z_label(z), || {
            let (f, k) = both()?;
            Ok(rel_hs(m, &lib(general_krein_rhs(f, k, z))?, rk.as_ref().map_err(Clone::clone)?))
        });
        s.check_at("krein.reversed", z_label(z), || {
            Ok(rel_hs(m, &lib(reversed_krein_rhs(m, z))?, &lib(m.friedrichs_green(z))?))
        });
        s.check_at("krein.fk", z_label(z), || Ok(rel_hs(m, &lib(krein_fk_rhs(m, z))?, rk.as_ref().map_err(Clone::clone)?)));
    }
    let laurent = lib(laurent_limit_check(m, &[C64::new(-1e-2, 0.0), C64::new(-1e-3, 0.0)]));
    s.check("krein.laurent_ratio", || Ok((laurent.as_ref().map_err(Clone::clone)?.ratios[0] - 1.0).abs()));
    s.check("krein.laurent_principal", || Ok(laurent.as_ref().map_err(Clone::clone)?.richardson_defect));
    s.check("krein.small_z_series", || {
        let z = C64::new(-0.5, 0.0);
        let k = both()?.1;
        let q = k.kernel_projector().scale(C64::new(-1.0, 0.0)).shift(ONE);
        let want = lib(k.resolvent_at(z))?.compose(&q);
        Ok(lib(small_z_series(m, z, 30))?.sub(&want).hs_norm(sp))
    });
    let deriv = lib(m_derivative_check(m, 1e-2));
    s.check("krein.m_derivative", || Ok(deriv.as_ref().map_err(Clone::clone)?.defect));
    s.check("krein.m_derivative_min", || Ok((1.0 - deriv.as_ref().map_err(Clone::clone)?.min_eigenvalue).max(0.0)));
    s.check("krein.rank_ratio", || {
        let (f, k) = both()?;
        let d = lib(k.resolvent_at(I))?.sub(&lib(f.resolvent_at(I))?);
        let sv = lib(singular_values(sp, &d))?;
        Ok(sv[r] / sv[0])
    });
    if s.cfg.single_interval() {
        let rep = (|| -> Result<_, String> {
            let e0 = lib(build_extension(m, lib(robin_reference(m))?))?;
            let (f, k) = both()?;
            lib(resolvent_diff_ideal_check(&e0, f, k, C64::new(-1.0, 0.0)))
        })();
        let get = || rep.as_ref().map_err(Clone::clone);
        s.check("krein.rank_match", || Ok((get()?.rank_d as f64 - get()?.rank_e as f64).abs()));
        s.check("krein.identity_tangent", || Ok(get()?.tangent_residual));
        s.check("krein.identity_exponential", || Ok(get()?.exponential_residual));
        s.check("krein.identity_transport", || Ok(get()?.transport_residual));
    }
}

fn verify_ideals(s: &mut Suite, m: &ModelOperator) {
    let jmax = s.cfg.jmax.unwrap_or(10).min(20);
    s.check("ideals.eigen_inequality", || {
        let e = lib(eigen_inequality_check(m, jmax))?;
        Ok(e.friedrichs.iter().zip(&e.krein).map(|(f, k)| ((f - k) / f).max(0.0)).fold(0.0, f64::max))
    });
    let ps = s.cfg.schatten_ps().unwrap_or_default();
    for p in ps {
        let rep = lib(schatten_equivalence_suite(m, p));
        let get = || rep.as_ref().map_err(Clone::clone);
        s.check_at("ideals.square_defect", p_label(p), || Ok(get()?.square_defect));
        s.check_at("ideals.reduced_vs_compressed", p_label(p), || {
            let r = get()?;
            Ok((r.krein_reduced - r.compressed).abs() / r.compressed)
        });
        s.check_at("ideals.root_symmetry", p_label(p), || {
            let r = get()?;
            Ok((r.left_root - r.right_root).abs() / r.left_root)
        });
    }
    let ct = lib(compactness_transfer_check(m, &[SchattenP::Finite(1.0)]));
    s.check("ideals.domination", || Ok(ct.as_ref().map_err(Clone::clone)?.worst_excess.max(0.0)));
    s.check("ideals.krein_trace_bound", || Ok((ct.as_ref().map_err(Clone::clone)?.krein_norms[0] - 1.0 / 6.0).max(0.0)));
    let blocks = lib(block_decompose(m));
    s.check("ideals.block_reconstruction", || Ok(blocks.as_ref().map_err(Clone::clone)?.reconstruction_defect));
    s.check("ideals.block_adjoint", || Ok(blocks.as_ref().map_err(Clone::clone)?.adjoint_defect));
}

/// Table of `mu_F_j`, `mu_K_j` and their ratio.
pub struct SpectraTable {
    pub rows: Vec<(usize, f64, f64)>,
    pub error: Option<String>,
}

pub fn cmd_spectra(cfg: &RunConfig, m: &ModelOperator) -> (SpectraTable, RunReport) {
    let sp = m.space();
    let jmax = cfg.jmax.unwrap_or(10 * m.parts().len());
    let mut suite = Suite::new(cfg);
    let counts = (|| -> Result<_, String> {
        let g = lib(m.friedrichs_green(ZERO))?;
        let kr = lib(krein_reduced_inverse(m))?;
        let f = lib(spectral_counts(sp, &g, jmax, true, "friedrichs"))?;
        let k = lib(spectral_counts(sp, &kr, jmax, true, "reduced krein"))?;
        Ok((f.values, k.values))
    })();
    let table = match counts {
        Ok((f, k)) => {
            let rows: Vec<(usize, f64, f64)> = f.iter().zip(&k).enumerate().map(|(j, (a, b))| (j + 1, *a, *b)).collect();
            suite.check("spectra.rank", || Ok(0.0));
            suite.check("spectra.ratio", || Ok(rows.iter().map(|(_, a, b)| (1.0 - b / a).max(0.0)).fold(0.0, f64::max)));
            SpectraTable { rows, error: None }
        }
        Err(e) => {
            suite.check("spectra.rank", || Err(e.clone()));
            SpectraTable { rows: vec![], error: Some(e) }
        }
    };
    (table, suite.report(Command::Spectra, environment(cfg, Some(m), vec![m.n()])))
}

#[derive(Debug, Clone)]
pub struct MRow {
    pub extension: String,
    pub z: C64,
    /// `None` when the point was skipped; the reason is in `note`.
    pub m: Option<Mat<C64>>,
    pub note: String,
}

fn contour_points(c: &Contour) -> Vec<C64> {
    let (a, b) = (C64::new(c.from[0], c.from[1]), C64::new(c.to[0], c.to[1]));
    (0..c.points).map(|k| a + (b - a) * (k as f64 / (c.points - 1) as f64)).collect()
}

/// Real points at or above the bottom of the spectrum of the extension.
fn on_spectrum(name: &str, m: &ModelOperator, z: C64) -> bool {
    let bottom = if name == "friedrichs" { m.epsilon() } else { 0.0 };
    z.im.abs() < 1e-12 && z.re >= bottom
}

pub fn cmd_mfun(cfg: &RunConfig, m: &ModelOperator) -> Result<(Vec<MRow>, RunReport), UsageError> {
    let mut suite = Suite::new(cfg);
    let plus = nplus_basis(m).map_err(|e| UsageError(e.to_string()))?;
    let mut rows = vec![];
    for name in &cfg.extensions {
        let spec = extension_spec(name, m).map_err(|e| UsageError(format!("extension {name}: {e}")))?;
        let ext = build_extension(m, spec).map_err(|e| UsageError(format!("extension {name}: {e}")))?;
        let mut herglotz: f64 = 0.0;
        let mut increasing = 0usize;
        for c in &cfg.mfun.contour {
            let vertical = c.from[0] == c.to[0];
            let mut last: Option<f64> = None;
            for z in contour_points(c) {
                let row = if on_spectrum(name, m, z) {
                    MRow { extension: name.clone(), z, m: None, note: "skipped: on the spectrum".into() }
                } else {
                    match donoghue_m(&ext, &plus, z) {
                        Ok(mz) => {
                            if z.im != 0.0 {
                                if let Ok(g) = herglotz_margin(mz.as_ref(), z) {
                                    herglotz = herglotz.max(-g);
                                }
                            }
                            if vertical && z.im > 0.0 && c.to[1] > c.from[1] {
                                // integral of d Omega / |lambda - z|^2, nonincreasing in Im z
                                let t: f64 = (0..mz.nrows()).map(|i| mz[(i, i)].im).sum::<f64>() / z.im;
                                if last.is_some_and(|l| t > l * (1.0 + 1e-12)) {
                                    increasing += 1;
                                }
                                last = Some(t);
                            }
                            MRow { extension: name.clone(), z, m: Some(mz), note: String::new() }
                        }
                        Err(e) => MRow { extension: name.clone(), z, m: None, note: format!("skipped: {e}") },
                    }
                };
                rows.push(row);
            }
        }
        let mi = lib(donoghue_m(&ext, &plus, I));
        suite.check_at("mfun.m_at_i", name.clone(), || {
            let mi = mi.as_ref().map_err(Clone::clone)?;
            Ok(small::max_abs((mi - identity_times(plus.dim(), I)).as_ref()))
        });
        rows.push(MRow { extension: name.clone(), z: I, m: mi.ok(), note: "reference".into() });
        suite.check_at("mfun.herglotz", name.clone(), || Ok(herglotz));
        suite.check_at("mfun.im_trace_monotone", name.clone(), || Ok(increasing as f64));
    }
    Ok((rows, suite.report(Command::Mfun, environment(cfg, Some(m), vec![m.n()]))))
}

/// One row of the Schatten convergence table.
#[derive(Debug, Clone, Serialize)]
pub struct SchattenRow {
    /// Grid size, or `None` for the extrapolated row.
    pub n: Option<usize>,
    pub p: String,
    pub values: [f64; 6],
}

/// Extrapolates a sequence on grids `n, 2n, 4n, ...`: Aitken's delta-squared
/// on the last three values when they converge monotonically, otherwise a
/// second-order Richardson step on the last two.
pub fn richardson(values: &[f64]) -> f64 {
    match values {
        [] => f64::NAN,
        [v] => *v,
        [.., a, b, c] if (c - b) * (b - a) > 0.0 && (c - b).abs() < (b - a).abs() => {
            let rho = (c - b) / (b - a);
            c + (c - b) * rho / (1.0 - rho)
        }
        [.., b, c] => c + (c - b) / 3.0,
    }
}

pub fn cmd_schatten(cfg: &RunConfig) -> Result<(Vec<SchattenRow>, RunReport), UsageError> {
    let ps = cfg.schatten_ps()?;
    if ps.is_empty() {
        return usage("config: p: the Schatten exponent list is empty");
    }
    let ns = cfg.schatten.n.clone();
    if ns.is_empty() {
        return usage("config: schatten.n: the grid list is empty");
    }
    if let Some(bad) = ns.iter().find(|n| **n < cfg.min_n()) {
        return usage(format!("config: schatten.n: grid too coarse: {bad} < {}", cfg.min_n()));
    }
    let mut suite = Suite::new(cfg);
    let mut rows = vec![];
    let mut label = None;
    for &n in &ns {
        let m = cfg.build_model(n).map_err(|e| UsageError(e.to_string()))?;
        label.get_or_insert_with(|| m.label().to_string());
        for &p in &ps {
            let tag = format!("n={n},{}", p_label(p));
            match schatten_equivalence_suite(&m, p) {
                Ok(r) => {
                    suite.check_at("schatten.square_defect", tag.clone(), || Ok(r.square_defect));
                    suite.check_at("schatten.compressed_bound", tag.clone(), || Ok((r.compressed - r.friedrichs).max(0.0) / r.friedrichs));
                    if p == SchattenP::Finite(1.0) {
                        suite.check_at("schatten.friedrichs_trace", format!("n={n}"), || Ok((r.friedrichs - 1.0 / 6.0).abs()));
                    }
                    rows.push(SchattenRow {
                        n: Some(n),
                        p: p.label(),
                        values: [r.krein_reduced, r.compressed, r.left_root, r.right_root, r.friedrichs, r.square_defect],
                    });
                }
                Err(e) => suite.check_at("schatten.square_defect", tag, || Err(e.to_string())),
            }
        }
    }
    for &p in &ps {
        let series: Vec<&SchattenRow> = rows.iter().filter(|r| r.p == p.label()).collect();
        let mut values = [0.0; 6];
        for (k, v) in values.iter_mut().enumerate() {
            *v = richardson(&series.iter().map(|r| r.values[k]).collect::<Vec<_>>());
        }
        if p == SchattenP::Finite(1.0) {
            suite.check_at("schatten.compressed_trace", "richardson".into(), || Ok((values[1] - 1.0 / 15.0).abs()));
        }
        if p == SchattenP::Finite(2.0) {
            suite.check_at("schatten.compressed_hs", "richardson".into(), || Ok((values[1] - (11.0f64 / 12600.0).sqrt()).abs()));
        }
        rows.push(SchattenRow { n: None, p: p.label(), values });
    }
    let mut env = environment(cfg, None, ns);
    if let Some(l) = label {
        env.model = l;
    }
    Ok((rows, suite.report(Command::Schatten, env)))
}

/// Writes `bytes` next to `path` and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let name = path.file_name().and_then(|s| s.to_str()).unwrap_or("out");
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)
}

fn csv_bytes(header: &[String], rows: &[Vec<String>]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(vec![]);
    w.write_record(header).expect("in-memory csv");
    for r in rows {
        w.write_record(r).expect("in-memory csv");
    }
    w.into_inner().expect("in-memory csv")
}

fn num(x: f64) -> String {
    format!("{x:e}")
}

fn records_csv(report: &RunReport) -> Vec<u8> {
    let header: Vec<String> = ["id", "claim", "status", "measured", "tolerance", "relation", "advisory"].map(String::from).to_vec();
    let rows: Vec<Vec<String>> = report
        .records
        .iter()
        .map(|r| {
            vec![
                r.id.clone(),
                r.claim.clone(),
                if r.status == Status::Pass { "pass" } else { "fail" }.into(),
                r.measured.map(num).unwrap_or_default(),
                num(r.tolerance),
                if r.relation == AtMost { "<=" } else { ">=" }.into(),
                r.advisory.clone().unwrap_or_default(),
            ]
        })
        .collect();
    csv_bytes(&header, &rows)
}

fn spectra_csv(t: &SpectraTable) -> Vec<u8> {
    let header: Vec<String> = ["j", "mu_F", "mu_K", "mu_K/mu_F"].map(String::from).to_vec();
    let mut rows: Vec<Vec<String>> = t.rows.iter().map(|(j, f, k)| vec![j.to_string(), num(*f), num(*k), num(k / f)]).collect();
    if let Some(e) = &t.error {
        rows.push(vec!["error".into(), e.clone(), String::new(), String::new()]);
    }
    csv_bytes(&header, &rows)
}

fn mfun_csv(rows: &[MRow], r: usize) -> Vec<u8> {
    let mut header: Vec<String> = ["extension", "re_z", "im_z", "status", "im_trace"].map(String::from).to_vec();
    for i in 0..r {
        for j in 0..r {
            header.push(format!("m{}{}_re", i + 1, j + 1));
            header.push(format!("m{}{}_im", i + 1, j + 1));
        }
    }
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|row| {
            let status = if row.m.is_some() { if row.note.is_empty() { "ok".to_string() } else { row.note.clone() } } else { row.note.clone() };
            let mut out = vec![row.extension.clone(), num(row.z.re), num(row.z.im), status];
            match &row.m {
                Some(mz) => {
                    out.push(num((0..r).map(|i| mz[(i, i)].im).sum()));
                    for i in 0..r {
                        for j in 0..r {
                            out.push(num(mz[(i, j)].re));
                            out.push(num(mz[(i, j)].im));
                        }
                    }
                }
                None => out.extend(std::iter::repeat_n(String::new(), 1 + 2 * r * r)),
            }
            out
        })
        .collect();
    csv_bytes(&header, &body)
}

fn schatten_csv(rows: &[SchattenRow]) -> Vec<u8> {
    let header: Vec<String> =
        ["n", "p", "krein_reduced", "compressed", "left_root", "right_root", "friedrichs", "square_defect"].map(String::from).to_vec();
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let mut out = vec![r.n.map(|n| n.to_string()).unwrap_or_else(|| "richardson".into()), r.p.clone()];
            out.extend(r.values.iter().map(|v| num(*v)));
            out
        })
        .collect();
    csv_bytes(&header, &body)
}

fn emit(cfg: &RunConfig, report: RunReport, csv_name: &str, csv: Vec<u8>, json_name: &str) -> Result<Outcome, UsageError> {
    fs::create_dir_all(&cfg.out).map_err(|e| UsageError(format!("cannot create {}: {e}", cfg.out.display())))?;
    let json = serde_json::to_string_pretty(&report).map_err(|e| UsageError(format!("report serialization: {e}")))? + "\n";
    let csv_path = cfg.out.join(csv_name);
    let json_path = cfg.out.join(json_name);
    for (p, b) in [(&csv_path, csv), (&json_path, json.into_bytes())] {
        write_atomic(p, &b).map_err(|e| UsageError(format!("cannot write {}: {e}", p.display())))?;
    }
    Ok(Outcome { report, files: vec![csv_path, json_path] })
}

fn model_for(cfg: &RunConfig) -> Result<ModelOperator, UsageError> {
    let n = cfg.grid_n();
    if n < cfg.min_n() {
        return usage(format!("grid too coarse: n = {n} < {}", cfg.min_n()));
    }
    cfg.build_model(n).map_err(|e| UsageError(e.to_string()))
}

/// Runs one subcommand with a resolved config.
pub fn execute(command: Command, cfg: &RunConfig) -> Result<Outcome, UsageError> {
    faer::set_global_parallelism(faer::Par::Seq);
    match command {
        Command::Verify => {
            let report = cmd_verify(cfg);
            let csv = records_csv(&report);
            emit(cfg, report, "records.csv", csv, "report.json")
        }
        Command::Spectra => {
            let m = model_for(cfg)?;
            let (table, report) = cmd_spectra(cfg, &m);
            emit(cfg, report, "spectra.csv", spectra_csv(&table), "spectra.json")
        }
        Command::Mfun => {
            let m = model_for(cfg)?;
            let (rows, report) = cmd_mfun(cfg, &m)?;
            emit(cfg, report, "mfun.csv", mfun_csv(&rows, m.deficiency_r()), "mfun.json")
        }
        Command::Schatten => {
            let (rows, report) = cmd_schatten(cfg)?;
            emit(cfg, report, "schatten.csv", schatten_csv(&rows), "schatten.json")
        }
    }
}

/// Parses arguments and runs; returns the exit code and the summary lines
/// meant for stdout (usage errors go to the second list, for stderr).
pub fn run_args<I, T>(args: I) -> (i32, Vec<String>, Vec<String>)
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() { (2, vec![], vec![text]) } else { (0, vec![text], vec![]) };
        }
    };
    match RunConfig::load(&cli.opts).and_then(|cfg| execute(cli.command, &cfg)) {
        Ok(o) => {
            let s = &o.report.summary;
            let name = serde_json::to_value(cli.command).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
            let mut lines = vec![format!("{name}: {}/{} checks passed", s.passed, s.total)];
            for r in o.report.records.iter().filter(|r| r.status == Status::Fail) {
                lines.push(format!("FAIL {} ({}): {}", r.id, r.claim, r.advisory.as_deref().unwrap_or("outside tolerance")));
            }
            lines.extend(o.files.iter().map(|f| format!("wrote {}", f.display())));
            (if o.report.passed() { 0 } else { 1 }, lines, vec![])
        }
        Err(e) => (2, vec![], vec![format!("error: {e}")]),
    }
}

/// [`run_args`] followed by printing; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    use std::io::Write;
    let (code, out, err) = run_args(args);
    let mut o = std::io::stdout().lock();
    for l in out {
        // a closed pipe (e.g. `| head`) is not an error of the run
        let _ = writeln!(o, "{}", l.trim_end());
    }
    let mut e = std::io::stderr().lock();
    for l in err {
        let _ = writeln!(e, "{}", l.trim_end());
    }
    code
}
