//! Eigenvalue counting, the Friedrichs/Krein eigenvalue inequality and
//! Schatten-class comparisons between `S_F^{-1}` and the reduced Krein
//! inverse.

use faer::Mat;
use serde::Serialize;

use crate::error::{invalid, Result};
use crate::extensions::compress_complement;
use crate::models::ModelOperator;
use crate::numlin::{
    hermitian_eig, hermitian_eigenvalues, hermitian_singular_values, schatten_from_singular, singular_values, GridSpace, KernelOperator,
    SchattenP, C64,
};

/// Eigenvalue counting values `mu_j`, nondecreasing.
#[derive(Clone, Debug, Serialize)]
pub struct SpectralCounts {
    pub values: Vec<f64>,
    pub source: String,
}

/// `mu_1 <= mu_2 <= ...` of a self-adjoint `k`, or of `k^{-1}` on the range
/// of a nonnegative `k` when `invert` is set.
pub fn spectral_counts(space: &GridSpace, k: &KernelOperator, jmax: usize, invert: bool, source: &str) -> Result<SpectralCounts> {
    let ev = hermitian_eigenvalues(space, k)?;
    let values: Vec<f64> = if invert {
        let top = ev.iter().cloned().fold(0.0, f64::max);
        let mut pos: Vec<f64> = ev.iter().filter(|v| **v > 1e-10 * top).map(|v| 1.0 / v).collect();
        pos.sort_by(f64::total_cmp);
        pos
    } else {
        ev
    };
    if jmax > values.len() {
        return invalid(format!("jmax = {jmax} exceeds the numerical rank {}", values.len()));
    }
    Ok(SpectralCounts { values: values[..jmax].to_vec(), source: source.into() })
}

#[derive(Clone, Debug, Serialize)]
pub struct EigenInequality {
    pub epsilon: f64,
    pub friedrichs: Vec<f64>,
    pub krein: Vec<f64>,
    /// `epsilon - tol <= mu_F_j <= mu_K_j + tol`, `tol = 1e-4 mu_F_j`, for all j.
    pub holds: bool,
    /// Smallest `mu_K_j - mu_F_j + tol` over j.
    pub margin: f64,
}

/// `epsilon <= mu_{S_F, j} <= mu_{reduced S_K, j}` for `j <= jmax`.
pub fn eigen_inequality_check(model: &ModelOperator, jmax: usize) -> Result<EigenInequality> {
    if jmax == 0 || jmax > 20 {
        return invalid("jmax must lie in 1..=20");
    }
    let space = model.space();
    let g = model.friedrichs_green(C64::new(0.0, 0.0))?;
    let f = spectral_counts(space, &g, jmax, true, "friedrichs")?.values;
    let kr = compress_complement(model, &g, &model.kernel_basis_n0()?.basis);
    let k = spectral_counts(space, &kr, jmax, true, "reduced krein")?.values;
    let eps = model.epsilon();
    let mut holds = true;
    let mut margin = f64::INFINITY;
    for j in 0..jmax {
        let tol = 1e-4 * f[j];
        holds &= f[j] >= eps - tol && f[j] <= k[j] + tol;
        margin = margin.min(k[j] - f[j] + tol);
    }
    Ok(EigenInequality { epsilon: eps, friedrichs: f, krein: k, holds, margin })
}

/// Plain Nystrom `S_F^{-1}` and its compression to `ker(S*)^perp`.
fn plain_pair(model: &ModelOperator) -> Result<(KernelOperator, KernelOperator)> {
    let g = model.friedrichs_green_plain(C64::new(0.0, 0.0))?;
    let kr = compress_complement(model, &g, &model.kernel_basis_n0()?.basis);
    Ok((g, kr))
}

/// Norms of the four operators that are simultaneously in a Schatten class
/// or not.
#[derive(Clone, Debug, Serialize)]
pub struct SchattenReport {
    pub p: String,
    pub n: usize,
    /// `|reduced S_K^{-1}|_p`
    pub krein_reduced: f64,
    /// `|(I - P) S_F^{-1} (I - P)|_p`
    pub compressed: f64,
    /// `|(I - P) S_F^{-1/2}|_{2p}`
    pub left_root: f64,
    /// `|S_F^{-1/2} (I - P)|_{2p}`
    pub right_root: f64,
    /// `|S_F^{-1}|_p`
    pub friedrichs: f64,
    /// `|left_root^2 - compressed| / compressed`
    pub square_defect: f64,
}

pub fn schatten_equivalence_suite(model: &ModelOperator, p: SchattenP) -> Result<SchattenReport> {
    if let SchattenP::Finite(q) = p {
        if !(q > 0.0) {
            return invalid(format!("Schatten exponent must be positive, got {q}"));
        }
    }
    let space = model.space();
    let (g, kr) = plain_pair(model)?;
    let phi = model.kernel_basis_n0()?.basis;
    let compressed = compress_complement(model, &g, &phi);
    let root = psd_sqrt(space, &g)?;
    let q = phi.complement_projector(space);
    let left = q.compose(&root);
    let right = root.compose(&q);
    let herm = |k: &KernelOperator| -> Result<f64> { Ok(schatten_from_singular(&hermitian_singular_values(space, k)?, p)) };
    let general = |k: &KernelOperator| -> Result<f64> { Ok(schatten_from_singular(&singular_values(space, k)?, p.doubled())) };
    let (a, b) = (herm(&kr)?, herm(&compressed)?);
    let (c, d) = (general(&left)?, general(&right)?);
    Ok(SchattenReport {
        p: p.label(),
        n: model.n(),
        krein_reduced: a,
        compressed: b,
        left_root: c,
        right_root: d,
        friedrichs: herm(&g)?,
        square_defect: (c * c - b).abs() / b,
    })
}

/// Nonnegative square root through the eigen-decomposition; tiny negative
/// eigenvalues from rounding are clamped to zero.
pub fn psd_sqrt(space: &GridSpace, k: &KernelOperator) -> Result<KernelOperator> {
    let e = hermitian_eig(space, k)?;
    let n = k.n();
    let w = space.weights();
    let v = &e.vectors;
    let scaled = Mat::from_fn(n, n, |i, j| v[(i, j)] * e.values[j].max(0.0).sqrt());
    let vw = Mat::from_fn(n, n, |i, j| v[(j, i)].conj() * w[j]);
    Ok(KernelOperator::new(scaled * vw))
}

/// `ker(S*)` blocks of `S_F^{-1}`: `[P G P, P G Q; Q G P, Q G Q]`.
#[derive(Clone, Debug)]
pub struct BlockDecomposition {
    pub blocks: [[KernelOperator; 2]; 2],
    pub reconstruction_defect: f64,
    pub adjoint_defect: f64,
    /// Schatten norms `p = 1, 2, infinity` of each block, row-major.
    pub norms: [[[f64; 3]; 2]; 2],
}

pub fn block_decompose(model: &ModelOperator) -> Result<BlockDecomposition> {
    let space = model.space();
    let g = model.friedrichs_green(C64::new(0.0, 0.0))?;
    let phi = model.kernel_basis_n0()?.basis;
    let p = phi.projector(space);
    let q = phi.complement_projector(space);
    let pg = p.compose(&g);
    let qg = q.compose(&g);
    let blocks = [
        [pg.compose(&p), pg.compose(&q)],
        [qg.compose(&p), compress_complement(model, &g, &phi)],
    ];
    let sum = blocks[0][0].add(&blocks[0][1]).add(&blocks[1][0]).add(&blocks[1][1]);
    let reconstruction_defect = sum.sub(&g).hs_norm(space) / g.hs_norm(space);
    let adjoint_defect = blocks[0][1].adjoint(space).sub(&blocks[1][0]).hs_norm(space) / g.hs_norm(space);
    let mut norms = [[[0.0; 3]; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            let sv = singular_values(space, &blocks[i][j])?;
            norms[i][j] = [
                schatten_from_singular(&sv, SchattenP::Finite(1.0)),
                schatten_from_singular(&sv, SchattenP::Finite(2.0)),
                schatten_from_singular(&sv, SchattenP::Infinity),
            ];
        }
    }
    Ok(BlockDecomposition { blocks, reconstruction_defect, adjoint_defect, norms })
}

#[derive(Clone, Debug, Serialize)]
pub struct CompactnessTransfer {
    /// `sigma_j(reduced S_K^{-1}) <= sigma_j(S_F^{-1})` for every j.
    pub dominated: bool,
    /// Largest `sigma_j(K) - sigma_j(F)` relative to `sigma_1(F)`.
    pub worst_excess: f64,
    pub ps: Vec<String>,
    pub krein_norms: Vec<f64>,
    pub friedrichs_norms: Vec<f64>,
}

pub fn compactness_transfer_check(model: &ModelOperator, ps: &[SchattenP]) -> Result<CompactnessTransfer> {
    let space = model.space();
    let (g, kr) = plain_pair(model)?;
    let sg = hermitian_singular_values(space, &g)?;
    let sk = hermitian_singular_values(space, &kr)?;
    let worst_excess = sk.iter().zip(&sg).map(|(k, f)| k - f).fold(f64::NEG_INFINITY, f64::max) / sg[0];
    Ok(CompactnessTransfer {
        dominated: worst_excess <= 1e-12,
        worst_excess,
        ps: ps.iter().map(SchattenP::label).collect(),
        krein_norms: ps.iter().map(|p| schatten_from_singular(&sk, *p)).collect(),
        friedrichs_norms: ps.iter().map(|p| schatten_from_singular(&sg, *p)).collect(),
    })
}

/// `|T|_{2p}^2` against `|T^* T|_p`, relative.
pub fn square_consistency(space: &GridSpace, t: &KernelOperator, p: SchattenP) -> Result<f64> {
    let lhs = schatten_from_singular(&singular_values(space, t)?, p.doubled()).powi(2);
    let tt = t.adjoint(space).compose(t);
    let rhs = schatten_from_singular(&singular_values(space, &tt)?, p);
    Ok(if rhs == 0.0 { lhs } else { (lhs - rhs).abs() / rhs })
}

/// `|(I - P) S_F^{-1} (I - P)|_p` for each exponent, from one eigensolve.
pub fn reduced_krein_norms(model: &ModelOperator, ps: &[SchattenP]) -> Result<Vec<f64>> {
    let (_, kr) = plain_pair(model)?;
    let sv = hermitian_singular_values(model.space(), &kr)?;
    Ok(ps.iter().map(|p| schatten_from_singular(&sv, *p)).collect())
}

/// Schatten values of one quantity across a sequence of truncations.
#[derive(Clone, Debug, Serialize)]
pub struct TruncationSweep {
    pub n: Vec<usize>,
    pub values: Vec<f64>,
    /// `|v_{k+2} - v_{k+1}| <= 4 |v_{k+1} - v_k|` for consecutive triples.
    pub settles: bool,
}

pub fn truncation_sweep(values: Vec<(usize, f64)>) -> TruncationSweep {
    let (n, values): (Vec<usize>, Vec<f64>) = values.into_iter().unzip();
    let settles = values.windows(3).all(|w| (w[2] - w[1]).abs() <= 4.0 * (w[1] - w[0]).abs() + 1e-15);
    TruncationSweep { n, values, settles }
}

/// `(|P G P|, |Q G Q|)` operator norms for each model, showing that the
/// `ker(S*)` block is not controlled by the complementary one.
pub fn block_norm_family(models: &[ModelOperator]) -> Result<Vec<(String, f64, f64)>> {
    models
        .iter()
        .map(|m| {
            let b = block_decompose(m)?;
            Ok((m.label().to_string(), b.norms[0][0][2], b.norms[1][1][2]))
        })
        .collect()
}
