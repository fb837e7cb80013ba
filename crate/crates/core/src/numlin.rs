//! Grid spaces, weighted inner products and dense kernel operators.
//!
//! Every operator on `L^2` is represented by an `n x n` matrix `K` acting on
//! node values, `(K u)_i = sum_j K_ij u_j`, with the quadrature weights already
//! folded in. Norms and spectra are taken in the weighted space, i.e. through
//! the similarity `W^{1/2} K W^{-1/2}`.

use faer::{Mat, MatRef, Side};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, Error, Result};

pub type C64 = Complex64;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Quadrature {
    /// Closed grid, endpoints included.
    Trapezoid,
    /// Cell midpoints with sixth order end corrections. No node sits on a
    /// boundary, which keeps Green kernels free of spurious null rows.
    Midpoint,
}

/// One interval of a grid. Node coordinates are local to the segment.
#[derive(Clone, Debug)]
pub struct Segment {
    pub a: f64,
    pub b: f64,
    pub offset: usize,
    pub len: usize,
    pub h: f64,
    pub rule: Quadrature,
}

impl Segment {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len
    }
}

#[derive(Clone, Debug)]
pub struct GridSpace {
    segments: Vec<Segment>,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

// Euler-Maclaurin end corrections for the midpoint rule, sixth order.
const MIDPOINT_END: [f64; 5] =
    [1.0 + 101.0 / 640.0, 1.0 - 2213.0 / 5760.0, 1.0 + 143.0 / 384.0, 1.0 - 349.0 / 1920.0, 1.0 + 103.0 / 2880.0];

/// Builds a single-segment grid on `[a, b]` with `n` nodes.
pub fn make_grid_space(a: f64, b: f64, n: usize, rule: Quadrature) -> Result<GridSpace> {
    if !(a.is_finite() && b.is_finite() && b > a) {
        return invalid(format!("bad interval [{a}, {b}]"));
    }
    let min = match rule {
        Quadrature::Trapezoid => 4,
        Quadrature::Midpoint => 16,
    };
    if n < min {
        return invalid(format!("need at least {min} nodes, got {n}"));
    }
    let (nodes, weights, h) = match rule {
        Quadrature::Trapezoid => {
            let h = (b - a) / (n - 1) as f64;
            let nodes = (0..n).map(|i| a + i as f64 * h).collect();
            let mut w = vec![h; n];
            w[0] = h / 2.0;
            w[n - 1] = h / 2.0;
            (nodes, w, h)
        }
        Quadrature::Midpoint => {
            let h = (b - a) / n as f64;
            let nodes = (0..n).map(|i| a + (i as f64 + 0.5) * h).collect();
            let mut w = vec![h; n];
            for (k, c) in MIDPOINT_END.iter().enumerate() {
                w[k] = h * c;
                w[n - 1 - k] = h * c;
            }
            (nodes, w, h)
        }
    };
    Ok(GridSpace {
        segments: vec![Segment { a, b, offset: 0, len: n, h, rule }],
        nodes,
        weights,
    })
}

impl GridSpace {
    /// Concatenates grids into one space (orthogonal direct sum).
    pub fn concat(parts: &[GridSpace]) -> GridSpace {
        let mut out = GridSpace { segments: vec![], nodes: vec![], weights: vec![] };
        for p in parts {
            let off = out.nodes.len();
            for s in &p.segments {
                let mut s = s.clone();
                s.offset += off;
                out.segments.push(s);
            }
            out.nodes.extend_from_slice(&p.nodes);
            out.weights.extend_from_slice(&p.weights);
        }
        out
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn fun(&self, f: impl Fn(f64) -> C64) -> GridFun {
        GridFun(self.nodes.iter().map(|&x| f(x)).collect())
    }

    pub fn real_fun(&self, f: impl Fn(f64) -> f64) -> GridFun {
        self.fun(|x| C64::new(f(x), 0.0))
    }

    pub fn zeros(&self) -> GridFun {
        GridFun(vec![ZERO; self.len()])
    }

    fn check(&self, len: usize) -> Result<()> {
        if len != self.len() {
            return Err(Error::Dimension { expected: self.len(), found: len });
        }
        Ok(())
    }
}

/// Node values of a function on a [`GridSpace`].
#[derive(Clone, Debug, PartialEq)]
pub struct GridFun(pub Vec<C64>);

impl GridFun {
    pub fn new(space: &GridSpace, values: Vec<C64>) -> Result<Self> {
        space.check(values.len())?;
        Ok(GridFun(values))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn axpy(&self, a: C64, other: &GridFun) -> GridFun {
        GridFun(self.0.iter().zip(&other.0).map(|(x, y)| x + a * y).collect())
    }

    pub fn sub(&self, other: &GridFun) -> GridFun {
        self.axpy(-ONE, other)
    }

    pub fn scale(&self, a: C64) -> GridFun {
        GridFun(self.0.iter().map(|x| a * x).collect())
    }

    pub fn to_col(&self) -> Mat<C64> {
        Mat::from_fn(self.len(), 1, |i, _| self.0[i])
    }

    pub fn from_col(m: MatRef<'_, C64>, j: usize) -> GridFun {
        GridFun((0..m.nrows()).map(|i| m[(i, j)]).collect())
    }
}

/// `(f, g) = sum_i w_i conj(f_i) g_i`.
pub fn inner(space: &GridSpace, f: &GridFun, g: &GridFun) -> Result<C64> {
    space.check(f.len())?;
    space.check(g.len())?;
    Ok(space.weights.iter().zip(f.0.iter().zip(&g.0)).map(|(w, (a, b))| *w * a.conj() * b).sum())
}

pub fn norm(space: &GridSpace, f: &GridFun) -> f64 {
    space.weights.iter().zip(&f.0).map(|(w, a)| w * a.norm_sqr()).sum::<f64>().sqrt()
}

/// Weighted Frobenius norm of a block of grid functions.
pub fn norm_cols(space: &GridSpace, x: MatRef<'_, C64>) -> f64 {
    let mut s = 0.0;
    for j in 0..x.ncols() {
        for i in 0..x.nrows() {
            s += space.weights[i] * x[(i, j)].norm_sqr();
        }
    }
    s.sqrt()
}

/// Grid-orthonormal columns spanning a subspace.
#[derive(Clone, Debug)]
pub struct SubspaceBasis {
    pub columns: Mat<C64>,
    /// `max |Phi^* W Phi - I|` at construction time.
    pub gram_defect: f64,
}

impl SubspaceBasis {
    pub fn dim(&self) -> usize {
        self.columns.ncols()
    }

    pub fn column(&self, j: usize) -> GridFun {
        GridFun::from_col(self.columns.as_ref(), j)
    }

    /// Coefficients `Phi^* W f`.
    pub fn coefficients(&self, space: &GridSpace, f: &GridFun) -> Vec<C64> {
        (0..self.dim())
            .map(|j| (0..f.len()).map(|i| space.weights[i] * self.columns[(i, j)].conj() * f.0[i]).sum())
            .collect()
    }

    /// `Phi^* W X` for a block of grid functions.
    pub fn coefficients_mat(&self, space: &GridSpace, x: MatRef<'_, C64>) -> Mat<C64> {
        let wphi = weighted_rows(space, self.columns.as_ref());
        wphi.adjoint() * x
    }

    /// The orthogonal projector `Phi Phi^* W` as a kernel operator.
    pub fn projector(&self, space: &GridSpace) -> KernelOperator {
        let wphi = weighted_rows(space, self.columns.as_ref());
        KernelOperator::new(&self.columns * wphi.adjoint())
    }

    pub fn complement_projector(&self, space: &GridSpace) -> KernelOperator {
        let p = self.projector(space);
        KernelOperator::identity(space.len()).sub(&p)
    }
}

/// Result of [`orthonormalize`]: `basis = input * coeffs`.
#[derive(Clone, Debug)]
pub struct Orthonormalized {
    pub basis: SubspaceBasis,
    pub coeffs: Mat<C64>,
}

/// Weighted Gram-Schmidt (two passes). Columns whose residual falls below
/// `1e-12 * sigma_max` of the weighted input are dropped.
pub fn orthonormalize(space: &GridSpace, vectors: MatRef<'_, C64>) -> Result<Orthonormalized> {
    space.check(vectors.nrows())?;
    let n = vectors.nrows();
    let k = vectors.ncols();
    let sq = |i: usize| space.weights[i].sqrt();
    let scaled = Mat::from_fn(n, k, |i, j| vectors[(i, j)] * sq(i));
    let smax = if k == 0 {
        0.0
    } else {
        scaled.singular_values().map_err(|e| Error::Numerical(format!("{e:?}")))?[0]
    };
    let tol = 1e-12 * smax;
    let mut q: Vec<Vec<C64>> = Vec::new();
    let mut c: Vec<Vec<C64>> = Vec::new();
    for j in 0..k {
        let mut v: Vec<C64> = (0..n).map(|i| scaled[(i, j)]).collect();
        let mut coef = vec![ZERO; k];
        coef[j] = ONE;
        for _ in 0..2 {
            for (qm, cm) in q.iter().zip(&c) {
                let d: C64 = qm.iter().zip(&v).map(|(a, b)| a.conj() * b).sum();
                for (vi, qi) in v.iter_mut().zip(qm) {
                    *vi -= d * qi;
                }
                for (ci, cmi) in coef.iter_mut().zip(cm) {
                    *ci -= d * cmi;
                }
            }
        }
        let nv = v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
        if nv <= tol || nv == 0.0 {
            continue;
        }
        q.push(v.iter().map(|x| x / nv).collect());
        c.push(coef.iter().map(|x| x / nv).collect());
    }
    let m = q.len();
    let columns = Mat::from_fn(n, m, |i, j| q[j][i] / sq(i));
    let coeffs = Mat::from_fn(k, m, |i, j| c[j][i]);
    let mut basis = SubspaceBasis { columns, gram_defect: 0.0 };
    basis.gram_defect = gram_defect(space, &basis);
    Ok(Orthonormalized { basis, coeffs })
}

fn gram_defect(space: &GridSpace, b: &SubspaceBasis) -> f64 {
    let g = b.coefficients_mat(space, b.columns.as_ref());
    let mut d: f64 = 0.0;
    for i in 0..g.nrows() {
        for j in 0..g.ncols() {
            let e = if i == j { ONE } else { ZERO };
            d = d.max((g[(i, j)] - e).norm());
        }
    }
    d
}

pub fn project(space: &GridSpace, f: &GridFun, basis: &SubspaceBasis) -> Result<GridFun> {
    space.check(f.len())?;
    let c = basis.coefficients(space, f);
    let mut out = space.zeros();
    for (j, cj) in c.iter().enumerate() {
        for i in 0..f.len() {
            out.0[i] += cj * basis.columns[(i, j)];
        }
    }
    Ok(out)
}

/// Rows scaled by the quadrature weights: `W X`.
pub fn weighted_rows(space: &GridSpace, x: MatRef<'_, C64>) -> Mat<C64> {
    Mat::from_fn(x.nrows(), x.ncols(), |i, j| x[(i, j)] * space.weights[i])
}

/// Dense matrix of an integral operator on node values.
#[derive(Clone, Debug)]
pub struct KernelOperator {
    pub matrix: Mat<C64>,
    /// Condition number of the small boundary system solved to build this
    /// operator, when there was one.
    pub condition: Option<f64>,
}

impl KernelOperator {
    pub fn new(matrix: Mat<C64>) -> Self {
        KernelOperator { matrix, condition: None }
    }

    pub fn identity(n: usize) -> Self {
        Self::new(Mat::from_fn(n, n, |i, j| if i == j { ONE } else { ZERO }))
    }

    pub fn zeros(n: usize) -> Self {
        Self::new(Mat::zeros(n, n))
    }

    pub fn n(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn apply(&self, f: &GridFun) -> GridFun {
        let out = &self.matrix * f.to_col();
        GridFun::from_col(out.as_ref(), 0)
    }

    pub fn apply_mat(&self, x: MatRef<'_, C64>) -> Mat<C64> {
        &self.matrix * x
    }

    pub fn compose(&self, other: &KernelOperator) -> KernelOperator {
        Self::new(&self.matrix * &other.matrix)
    }

    pub fn add(&self, other: &KernelOperator) -> KernelOperator {
        Self::new(&self.matrix + &other.matrix)
    }

    pub fn sub(&self, other: &KernelOperator) -> KernelOperator {
        Self::new(&self.matrix - &other.matrix)
    }

    pub fn scale(&self, a: C64) -> KernelOperator {
        Self::new(Mat::from_fn(self.n(), self.n(), |i, j| a * self.matrix[(i, j)]))
    }

    /// `self + a I`.
    pub fn shift(&self, a: C64) -> KernelOperator {
        let mut m = self.matrix.clone();
        for i in 0..self.n() {
            m[(i, i)] += a;
        }
        Self::new(m)
    }

    /// Adds the rank-k term `left * right` where `right` is `k x n`.
    pub fn add_low_rank(&self, left: MatRef<'_, C64>, right: MatRef<'_, C64>) -> KernelOperator {
        Self::new(&self.matrix + left * right)
    }

    /// Adjoint in the weighted space: `W^{-1} K^* W`.
    pub fn adjoint(&self, space: &GridSpace) -> KernelOperator {
        let w = space.weights();
        Self::new(Mat::from_fn(self.n(), self.n(), |i, j| self.matrix[(j, i)].conj() * w[j] / w[i]))
    }

    /// `W^{1/2} K W^{-1/2}`, the matrix of the operator in an orthonormal frame.
    pub fn symmetric_frame(&self, space: &GridSpace) -> Mat<C64> {
        let w = space.weights();
        Mat::from_fn(self.n(), self.n(), |i, j| self.matrix[(i, j)] * (w[i] / w[j]).sqrt())
    }

    pub fn hs_norm(&self, space: &GridSpace) -> f64 {
        let w = space.weights();
        let mut s = 0.0;
        for j in 0..self.n() {
            for i in 0..self.n() {
                s += self.matrix[(i, j)].norm_sqr() * w[i] / w[j];
            }
        }
        s.sqrt()
    }

    /// Operator norm by power iteration on `A^* A` in the weighted frame.
    pub fn op_norm(&self, space: &GridSpace) -> f64 {
        let a = self.symmetric_frame(space);
        op_norm_dense(a.as_ref())
    }

    pub fn max_abs_imag(&self) -> f64 {
        let mut m: f64 = 0.0;
        for j in 0..self.n() {
            for i in 0..self.n() {
                m = m.max(self.matrix[(i, j)].im.abs());
            }
        }
        m
    }
}

pub fn op_norm_dense(a: MatRef<'_, C64>) -> f64 {
    if a.ncols() == 0 || a.nrows() == 0 {
        return 0.0;
    }
    if a.ncols() <= 64 {
        return a.singular_values().map(|s| s[0]).unwrap_or(f64::NAN);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut v = Mat::from_fn(a.ncols(), 1, |_, _| C64::new(StandardNormal.sample(&mut rng), 0.0));
    let mut est = 0.0;
    for it in 0..300 {
        let nv = v.norm_l2();
        if nv == 0.0 {
            return 0.0;
        }
        v = Mat::from_fn(v.nrows(), 1, |i, _| v[(i, 0)] / nv);
        let av = a * &v;
        let new = av.norm_l2();
        v = a.adjoint() * &av;
        if it > 5 && (new - est).abs() <= 1e-13 * new {
            return new;
        }
        est = new;
    }
    est
}

fn is_real(a: MatRef<'_, C64>) -> bool {
    (0..a.ncols()).all(|j| (0..a.nrows()).all(|i| a[(i, j)].im == 0.0))
}

fn real_part(a: MatRef<'_, C64>) -> Mat<f64> {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)].re)
}

fn num_err<E: std::fmt::Debug>(e: E) -> Error {
    Error::Numerical(format!("{e:?}"))
}

/// Eigenvalues ascending with grid-orthonormal eigenfunctions.
#[derive(Clone, Debug)]
pub struct HermitianEig {
    pub values: Vec<f64>,
    pub vectors: Mat<C64>,
    /// Relative departure from self-adjointness in the weighted frame.
    pub asymmetry: f64,
}

fn hermitian_frame(space: &GridSpace, k: &KernelOperator) -> Result<(Mat<C64>, f64)> {
    space.check(k.n())?;
    let a = k.symmetric_frame(space);
    let n = a.nrows();
    let mut diff: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for j in 0..n {
        for i in 0..n {
            diff = diff.max((a[(i, j)] - a[(j, i)].conj()).norm());
            scale = scale.max(a[(i, j)].norm());
        }
    }
    let asym = if scale > 0.0 { diff / scale } else { 0.0 };
    if asym > 1e-6 {
        return Err(Error::Numerical(format!("operator is not self-adjoint (relative asymmetry {asym:.2e})")));
    }
    let h = Mat::from_fn(n, n, |i, j| (a[(i, j)] + a[(j, i)].conj()) * 0.5);
    Ok((h, asym))
}

pub fn hermitian_eig(space: &GridSpace, k: &KernelOperator) -> Result<HermitianEig> {
    let (h, asymmetry) = hermitian_frame(space, k)?;
    let n = h.nrows();
    let (values, u) = if is_real(h.as_ref()) {
        let e = real_part(h.as_ref()).self_adjoint_eigen(Side::Lower).map_err(num_err)?;
        let vals: Vec<f64> = e.S().column_vector().iter().copied().collect();
        let u = e.U();
        (vals, Mat::from_fn(n, n, |i, j| C64::new(u[(i, j)], 0.0)))
    } else {
        let e = h.self_adjoint_eigen(Side::Lower).map_err(num_err)?;
        let vals: Vec<f64> = e.S().column_vector().iter().map(|x| x.re).collect();
        (vals, e.U().to_owned())
    };
    let w = space.weights();
    let vectors = Mat::from_fn(n, n, |i, j| u[(i, j)] / w[i].sqrt());
    Ok(HermitianEig { values, vectors, asymmetry })
}

/// Eigenvalues only, ascending.
pub fn hermitian_eigenvalues(space: &GridSpace, k: &KernelOperator) -> Result<Vec<f64>> {
    let (h, _) = hermitian_frame(space, k)?;
    if is_real(h.as_ref()) {
        real_part(h.as_ref()).self_adjoint_eigenvalues(Side::Lower).map_err(num_err)
    } else {
        h.self_adjoint_eigenvalues(Side::Lower).map_err(num_err)
    }
}

/// Singular values (descending) of the operator in the weighted space.
pub fn singular_values(space: &GridSpace, k: &KernelOperator) -> Result<Vec<f64>> {
    space.check(k.n())?;
    dense_singular_values(k.symmetric_frame(space).as_ref())
}

/// Singular values (descending) of a self-adjoint operator, as absolute
/// eigenvalues; much cheaper than a full SVD.
pub fn hermitian_singular_values(space: &GridSpace, k: &KernelOperator) -> Result<Vec<f64>> {
    let mut s: Vec<f64> = hermitian_eigenvalues(space, k)?.into_iter().map(f64::abs).collect();
    s.sort_by(|a, b| b.total_cmp(a));
    Ok(s)
}

pub fn dense_singular_values(a: MatRef<'_, C64>) -> Result<Vec<f64>> {
    if is_real(a) {
        real_part(a).singular_values().map_err(num_err)
    } else {
        a.singular_values().map_err(num_err)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SchattenP {
    Finite(f64),
    Infinity,
}

impl SchattenP {
    pub fn parse(s: &str) -> Option<SchattenP> {
        match s.trim() {
            "inf" | "infinity" | "Infinity" => Some(SchattenP::Infinity),
            t => t.parse::<f64>().ok().filter(|p| *p > 0.0 && p.is_finite()).map(SchattenP::Finite),
        }
    }

    pub fn label(&self) -> String {
        match self {
            SchattenP::Finite(p) => format!("{p}"),
            SchattenP::Infinity => "inf".into(),
        }
    }

    /// The exponent `2p` used for square-root factors.
    pub fn doubled(&self) -> SchattenP {
        match self {
            SchattenP::Finite(p) => SchattenP::Finite(2.0 * p),
            SchattenP::Infinity => SchattenP::Infinity,
        }
    }
}

/// Schatten norm from singular values. Values below `1e-14 * sigma_max` are
/// treated as zero.
pub fn schatten_from_singular(sv: &[f64], p: SchattenP) -> f64 {
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    match p {
        SchattenP::Infinity => smax,
        SchattenP::Finite(p) => {
            let cut = 1e-14 * smax;
            sv.iter().filter(|s| **s > cut).map(|s| s.powf(p)).sum::<f64>().powf(1.0 / p)
        }
    }
}

pub fn schatten_norm(space: &GridSpace, k: &KernelOperator, p: SchattenP) -> Result<f64> {
    if let SchattenP::Finite(p) = p {
        if !(p > 0.0) {
            return invalid(format!("Schatten exponent must be positive, got {p}"));
        }
    }
    Ok(schatten_from_singular(&singular_values(space, k)?, p))
}

/// Nonzero eigenpairs of a self-adjoint operator known to have rank at most
/// `max_rank`, via a randomized range finder.
pub fn low_rank_hermitian_eig(
    space: &GridSpace,
    k: &KernelOperator,
    max_rank: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let n = k.n();
    let m = (max_rank + 6).min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let omega = Mat::from_fn(n, m, |_, _| C64::new(StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng)));
    let y = k.apply_mat(omega.as_ref());
    let y = k.apply_mat(y.as_ref());
    let q = orthonormalize(space, y.as_ref())?.basis;
    if q.dim() == 0 {
        return Ok(vec![]);
    }
    let kq = k.apply_mat(q.columns.as_ref());
    let small = q.coefficients_mat(space, kq.as_ref());
    let d = small.nrows();
    let herm = Mat::from_fn(d, d, |i, j| (small[(i, j)] + small[(j, i)].conj()) * 0.5);
    let vals = herm.self_adjoint_eigenvalues(Side::Lower).map_err(num_err)?;
    Ok(vals)
}

/// Small dense helpers on `r x r` blocks.
pub mod small {
    use super::*;

    pub fn identity(r: usize) -> Mat<C64> {
        Mat::from_fn(r, r, |i, j| if i == j { ONE } else { ZERO })
    }

    pub fn inverse(a: MatRef<'_, C64>, what: &str) -> Result<(Mat<C64>, f64)> {
        let r = a.nrows();
        let cond = condition(a)?;
        if !(cond < 1e12) {
            return Err(Error::Singular { what: what.into(), condition: cond });
        }
        use faer::linalg::solvers::DenseSolveCore;
        debug_assert_eq!(r, a.ncols());
        Ok((a.partial_piv_lu().inverse(), cond))
    }

    pub fn condition(a: MatRef<'_, C64>) -> Result<f64> {
        if a.nrows() == 0 {
            return Ok(1.0);
        }
        let s = a.singular_values().map_err(num_err)?;
        let last = *s.last().unwrap();
        Ok(if last == 0.0 { f64::INFINITY } else { s[0] / last })
    }

    pub fn max_abs(a: MatRef<'_, C64>) -> f64 {
        let mut m: f64 = 0.0;
        for j in 0..a.ncols() {
            for i in 0..a.nrows() {
                m = m.max(a[(i, j)].norm());
            }
        }
        m
    }

    pub fn spectral_norm(a: MatRef<'_, C64>) -> f64 {
        if a.nrows() == 0 || a.ncols() == 0 {
            return 0.0;
        }
        a.singular_values().map(|s| s[0]).unwrap_or(f64::NAN)
    }

    /// Numerical rank with relative tolerance on the largest singular value.
    pub fn rank(a: MatRef<'_, C64>, rel_tol: f64) -> usize {
        match a.singular_values() {
            Ok(s) if !s.is_empty() => {
                let cut = rel_tol * s[0];
                s.iter().filter(|x| **x > cut).count()
            }
            _ => 0,
        }
    }

    /// Eigen-decomposition of a Hermitian block: `(values ascending, vectors)`.
    pub fn herm_eig(a: MatRef<'_, C64>) -> Result<(Vec<f64>, Mat<C64>)> {
        let r = a.nrows();
        let h = Mat::from_fn(r, r, |i, j| (a[(i, j)] + a[(j, i)].conj()) * 0.5);
        let e = h.self_adjoint_eigen(Side::Lower).map_err(num_err)?;
        Ok((e.S().column_vector().iter().map(|x| x.re).collect(), e.U().to_owned()))
    }

    /// `V diag(f(lambda)) V^*` for a Hermitian block.
    pub fn herm_fn(a: MatRef<'_, C64>, f: impl Fn(f64) -> C64) -> Result<Mat<C64>> {
        let (vals, v) = herm_eig(a)?;
        let r = vals.len();
        let fv: Vec<C64> = vals.iter().map(|x| f(*x)).collect();
        Ok(Mat::from_fn(r, r, |i, j| (0..r).map(|k| v[(i, k)] * fv[k] * v[(j, k)].conj()).sum()))
    }
}
