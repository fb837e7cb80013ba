//! Nonnegative self-adjoint extensions: Friedrichs, Krein-von Neumann and the
//! `(B, W)` family between them, all realized as boundary value problems.

use faer::{Mat, MatRef};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Error, Result};
use crate::models::{ModelOperator, N0Basis, PartKind};
use crate::numlin::{
    inner, low_rank_hermitian_eig, norm, small, GridFun, KernelOperator, SubspaceBasis, C64, ONE, ZERO,
};

#[derive(Clone, Debug)]
pub enum ExtensionSpec {
    Friedrichs,
    Krein,
    /// Self-adjoint `B` on a subspace `W` of `ker(S*)`. `w` holds orthonormal
    /// coefficient columns (`r x r'`) on the orthonormal `ker(S*)` basis and
    /// `B` is `r' x r'` in that basis of `W`.
    Param { b: Mat<C64>, w: Mat<C64> },
    /// Explicit boundary conditions `bc * data(u) = 0` (`r x 2r`).
    Boundary { bc: Mat<C64> },
}

impl ExtensionSpec {
    pub fn label(&self) -> String {
        match self {
            ExtensionSpec::Friedrichs => "friedrichs".into(),
            ExtensionSpec::Krein => "krein".into(),
            ExtensionSpec::Param { w, .. } => format!("param(dim W={})", w.ncols()),
            ExtensionSpec::Boundary { .. } => "boundary".into(),
        }
    }

    /// `Param` with `W` spanned by the listed columns of the `ker(S*)` basis.
    pub fn param_on_columns(r: usize, b: Mat<C64>, cols: &[usize]) -> Result<Self> {
        let mut seen = vec![false; r];
        for &i in cols {
            if i >= r || seen[i] {
                return invalid(format!("W indices must be distinct and below {r}"));
            }
            seen[i] = true;
        }
        let w = Mat::from_fn(r, cols.len(), |i, j| if cols[j] == i { ONE } else { ZERO });
        Ok(ExtensionSpec::Param { b, w })
    }

    /// `Param` with `B = b I` on all of `ker(S*)`.
    pub fn scalar_param(r: usize, b: f64) -> Self {
        ExtensionSpec::Param {
            b: Mat::from_fn(r, r, |i, j| if i == j { C64::new(b, 0.0) } else { ZERO }),
            w: small::identity(r),
        }
    }
}

/// Orthonormal coefficients, on the `ker(S*)` basis, of the span of the given
/// grid functions. Fails if they do not lie in `ker(S*)`.
pub fn kernel_coefficients(model: &ModelOperator, funcs: MatRef<'_, C64>) -> Result<Mat<C64>> {
    let space = model.space();
    let n0 = model.kernel_basis_n0()?;
    let c = n0.basis.coefficients_mat(space, funcs);
    let back = &n0.basis.columns * &c;
    let miss = crate::numlin::norm_cols(space, (&back - funcs).as_ref());
    let size = crate::numlin::norm_cols(space, funcs).max(1e-300);
    if miss > 1e-8 * size {
        return invalid(format!("W is not inside ker(S*) (relative miss {:.2e})", miss / size));
    }
    let k = c.ncols();
    let q = c.qr();
    let rank = small::rank(c.as_ref(), 1e-10);
    if rank != k {
        return invalid("W columns are linearly dependent");
    }
    Ok(q.compute_thin_Q())
}

/// A concrete extension: its boundary conditions, kernel and resolvents.
#[derive(Clone, Debug)]
pub struct ExtensionRealization<'m> {
    model: &'m ModelOperator,
    spec: ExtensionSpec,
    bc: Mat<C64>,
    kernel: SubspaceBasis,
}

/// Values `q_F(g) + (u, B u)` of the form of a `Param` extension.
#[derive(Clone, Copy, Debug, serde::Serialize)]
pub struct FormValue {
    pub friedrichs_part: f64,
    pub b_part: f64,
    pub total: f64,
}

/// Boundary form `J` with `(S* u, v) - (u, S* v) = data(u)^* J data(v)`.
pub fn boundary_form(model: &ModelOperator) -> Mat<C64> {
    let d = model.trace_dim();
    let mut j = Mat::zeros(d, d);
    let mut o = 0;
    for p in model.parts() {
        match p.kind {
            PartKind::Interval => {
                j[(o + 3, o + 1)] = -ONE;
                j[(o + 1, o + 3)] = ONE;
                j[(o + 2, o)] = ONE;
                j[(o, o + 2)] = -ONE;
                o += 4;
            }
            PartKind::HalfLine => {
                j[(o + 1, o)] = ONE;
                j[(o, o + 1)] = -ONE;
                o += 2;
            }
        }
    }
    j
}

/// Null space of `a`; singular values below `1e-10 * max(sigma_1, scale)`
/// count as zero.
fn null_space(a: MatRef<'_, C64>, scale: f64) -> Result<Mat<C64>> {
    let svd = a.svd().map_err(|e| Error::Numerical(format!("{e:?}")))?;
    let s: Vec<f64> = svd.S().column_vector().iter().map(|x| x.re).collect();
    let smax = s.first().copied().unwrap_or(0.0);
    let rank = s.iter().filter(|x| **x > 1e-10 * smax.max(scale).max(1e-300)).count();
    let v = svd.V();
    Ok(Mat::from_fn(a.ncols(), a.ncols() - rank, |i, j| v[(i, rank + j)]))
}

/// Rows `y` with `y * t = 0`, i.e. the annihilator of `range(t)`.
fn annihilator(t: MatRef<'_, C64>) -> Result<Mat<C64>> {
    let svd = t.svd().map_err(|e| Error::Numerical(format!("{e:?}")))?;
    let k = t.ncols();
    let u = svd.U();
    Ok(Mat::from_fn(t.nrows() - k, t.nrows(), |i, j| u[(j, k + i)].conj()))
}

/// Boundary matrix of `S_{B,W}` from the analytic boundary data of the
/// `ker(S*)` basis and its `S_F^{-1}` image.
pub fn param_boundary_matrix(n0: &N0Basis, b: MatRef<'_, C64>, w: MatRef<'_, C64>) -> Result<Mat<C64>> {
    let r = n0.basis.dim();
    let k = w.ncols();
    if w.nrows() != r || k > r {
        return Err(Error::Dimension { expected: r, found: w.nrows() });
    }
    let gram = w.adjoint() * w;
    let gd = small::max_abs((gram - small::identity(k)).as_ref());
    if gd > 1e-10 {
        return invalid(format!("W coefficients are not orthonormal (defect {gd:.2e})"));
    }
    if b.nrows() != k || b.ncols() != k {
        return Err(Error::Dimension { expected: k, found: b.nrows() });
    }
    let bnorm = small::max_abs(b).max(1.0);
    let herm = (0..k)
        .flat_map(|i| (0..k).map(move |j| (i, j)))
        .map(|(i, j)| (b[(i, j)] - b[(j, i)].conj()).norm())
        .fold(0.0, f64::max);
    if herm > 1e-10 * bnorm {
        return invalid(format!("B is not self-adjoint (defect {herm:.2e})"));
    }
    if k > 0 {
        let (vals, _) = small::herm_eig(b)?;
        if vals[0] < -1e-10 * bnorm {
            return invalid(format!("B is not nonnegative (eigenvalue {:.3e})", vals[0]));
        }
    }
    // columns: w_j + S_F^{-1} (B w)_j, then S_F^{-1} eta for eta in N_0 minus W
    let bw = w * b;
    let mut t = &n0.traces * w + &n0.friedrichs_traces * &bw;
    let comp = orth_complement(w)?;
    if comp.ncols() > 0 {
        let extra = &n0.friedrichs_traces * &comp;
        t = Mat::from_fn(2 * r, r, |i, j| if j < k { t[(i, j)] } else { extra[(i, j - k)] });
    }
    annihilator(t.as_ref())
}

/// Orthonormal basis of the complement of `range(w)` in `C^r`.
fn orth_complement(w: MatRef<'_, C64>) -> Result<Mat<C64>> {
    let r = w.nrows();
    let k = w.ncols();
    if k == 0 {
        return Ok(small::identity(r));
    }
    let svd = w.svd().map_err(|e| Error::Numerical(format!("{e:?}")))?;
    let u = svd.U();
    Ok(Mat::from_fn(r, r - k, |i, j| u[(i, k + j)]))
}

/// Builds the realization of `spec` over `model`.
pub fn build_extension<'m>(model: &'m ModelOperator, spec: ExtensionSpec) -> Result<ExtensionRealization<'m>> {
    let r = model.deficiency_r();
    let n0 = model.kernel_basis_n0()?;
    let bc = match &spec {
        ExtensionSpec::Friedrichs => model.dirichlet_bc(),
        ExtensionSpec::Krein => {
            let zero = Mat::zeros(r, r);
            param_boundary_matrix(&n0, zero.as_ref(), small::identity(r).as_ref())?
        }
        ExtensionSpec::Param { b, w } => param_boundary_matrix(&n0, b.as_ref(), w.as_ref())?,
        ExtensionSpec::Boundary { bc } => {
            if bc.nrows() != r || bc.ncols() != 2 * r {
                return invalid(format!("boundary matrix must be {r} x {}", 2 * r));
            }
            if small::rank(bc.as_ref(), 1e-10) != r {
                return invalid("boundary matrix must have full row rank");
            }
            bc.clone()
        }
    };
    let lag = lagrangian_defect(model, bc.as_ref())?;
    if lag > 1e-8 {
        return invalid(format!("boundary conditions are not self-adjoint (defect {lag:.2e})"));
    }
    // ker of the extension: the elements of ker(S*) obeying the conditions
    let m = &bc * &n0.traces;
    let scale = small::spectral_norm(bc.as_ref()) * small::spectral_norm(n0.traces.as_ref());
    let ns = null_space(m.as_ref(), scale)?;
    let kernel = SubspaceBasis { columns: &n0.basis.columns * &ns, gram_defect: n0.basis.gram_defect };
    Ok(ExtensionRealization { model, spec, bc, kernel })
}

/// `|N^* J N|` for an orthonormal basis `N` of the admissible boundary data.
pub fn lagrangian_defect(model: &ModelOperator, bc: MatRef<'_, C64>) -> Result<f64> {
    let ns = null_space(bc, 0.0)?;
    let j = boundary_form(model);
    Ok(small::max_abs((ns.adjoint() * &j * &ns).as_ref()))
}

impl<'m> ExtensionRealization<'m> {
    pub fn model(&self) -> &'m ModelOperator {
        self.model
    }

    pub fn spec(&self) -> &ExtensionSpec {
        &self.spec
    }

    pub fn label(&self) -> String {
        self.spec.label()
    }

    pub fn bc(&self) -> MatRef<'_, C64> {
        self.bc.as_ref()
    }

    /// Orthonormal basis of the null space of the extension.
    pub fn kernel(&self) -> &SubspaceBasis {
        &self.kernel
    }

    pub fn kernel_dim(&self) -> usize {
        self.kernel.dim()
    }

    /// Orthogonal projector onto the null space of the extension.
    pub fn kernel_projector(&self) -> KernelOperator {
        self.kernel.projector(self.model.space())
    }

    /// `(S_ext - z)^{-1}`.
    pub fn resolvent_at(&self, z: C64) -> Result<KernelOperator> {
        match self.spec {
            ExtensionSpec::Friedrichs => self.model.friedrichs_green(z),
            _ => self.model.solve_bvp(self.bc.as_ref(), z),
        }
    }
}

/// Orthogonal projector onto `ker(S*)`.
pub fn kernel_projector(model: &ModelOperator) -> Result<KernelOperator> {
    Ok(model.kernel_basis_n0()?.basis.projector(model.space()))
}

/// `(I - P) S_F^{-1} (I - P)`, the inverse of the reduced Krein extension on
/// the orthogonal complement of `ker(S*)` (zero on `ker(S*)`).
pub fn krein_reduced_inverse(model: &ModelOperator) -> Result<KernelOperator> {
    let g = model.friedrichs_green(ZERO)?;
    let phi = model.kernel_basis_n0()?.basis;
    Ok(compress_complement(model, &g, &phi))
}

/// `(I - P) K (I - P)` using thin products only.
pub fn compress_complement(model: &ModelOperator, k: &KernelOperator, phi: &SubspaceBasis) -> KernelOperator {
    let space = model.space();
    let c = phi.columns.as_ref();
    let wphi_adj = crate::numlin::weighted_rows(space, c).adjoint().to_owned();
    let kphi = k.apply_mat(c);
    let phik = &wphi_adj * &k.matrix;
    let core = &wphi_adj * &kphi;
    let left = &kphi - c * &core;
    KernelOperator::new(&k.matrix - c * &phik - &left * &wphi_adj)
}

/// Order relation between two extensions via their resolvents at `-a`.
#[derive(Clone, Copy, Debug, serde::Serialize)]
pub struct OrderCheck {
    /// `A >= B` in the form sense.
    pub holds: bool,
    /// Smallest eigenvalue of `(B + a)^{-1} - (A + a)^{-1}`.
    pub min_eigenvalue: f64,
}

pub fn order_check(a_ext: &ExtensionRealization, b_ext: &ExtensionRealization, a: f64) -> Result<OrderCheck> {
    if !(a > 0.0) {
        return invalid("order check needs a > 0");
    }
    let model = a_ext.model;
    let z = C64::new(-a, 0.0);
    let d = b_ext.resolvent_at(z)?.sub(&a_ext.resolvent_at(z)?);
    let vals = low_rank_hermitian_eig(model.space(), &d, model.deficiency_r(), 17)?;
    let min = vals.iter().cloned().fold(0.0, f64::min);
    Ok(OrderCheck { holds: min >= -1e-8, min_eigenvalue: min })
}

/// Form `q_F(g) + (u, B u)` with the Friedrichs part summed over the lowest
/// `n/2` Dirichlet modes. `u` holds coefficients on `W`.
pub fn form_value(model: &ModelOperator, spec: &ExtensionSpec, g: &GridFun, u: &[C64]) -> Result<FormValue> {
    let space = model.space();
    let gn = norm(space, g);
    let tr = model.traces(g)?;
    let dirichlet = model.dirichlet_bc();
    for row in 0..dirichlet.nrows() {
        let v: C64 = (0..tr.len()).map(|k| dirichlet[(row, k)] * tr[k]).sum();
        if v.norm() > 1e-6 * gn.max(1.0) {
            return invalid(format!("g has nonzero Dirichlet data ({:.2e})", v.norm()));
        }
    }
    let eig = model.dirichlet_eigen()?;
    let n = model.n();
    let mut fp = 0.0;
    for k in (n - n / 2..n).rev() {
        let mu = eig.values[k];
        let c: C64 = (0..n).map(|i| space.weights()[i] * eig.vectors[(i, k)].conj() * g.0[i]).sum();
        fp += c.norm_sqr() / mu;
    }
    let bp = match spec {
        ExtensionSpec::Friedrichs => {
            if u.iter().any(|x| x.norm() > 0.0) {
                return invalid("the Friedrichs form has no kernel component");
            }
            0.0
        }
        ExtensionSpec::Krein => {
            if u.len() != model.deficiency_r() {
                return Err(Error::Dimension { expected: model.deficiency_r(), found: u.len() });
            }
            0.0
        }
        ExtensionSpec::Param { b, w } => {
            if u.len() != w.ncols() {
                return Err(Error::Dimension { expected: w.ncols(), found: u.len() });
            }
            let mut s = ZERO;
            for i in 0..u.len() {
                for j in 0..u.len() {
                    s += u[i].conj() * b[(i, j)] * u[j];
                }
            }
            s.re
        }
        ExtensionSpec::Boundary { .. } => return invalid("form values need a Friedrichs, Krein or Param spec"),
    };
    Ok(FormValue { friedrichs_part: fp, b_part: bp, total: fp + bp })
}

/// Lower bound for `||S_K^{1/2} u||^2` from random elements of `dom(S)`.
#[derive(Clone, Copy, Debug, serde::Serialize)]
pub struct SupFormEstimate {
    /// Supremum of the ratio over the span of all trials.
    pub span_sup: f64,
    /// Largest ratio attained by a single trial.
    pub best_single: f64,
    pub span_dim: usize,
    pub trials: usize,
}

/// Estimates `sup_v |(u, S v)|^2 / (v, S v)` over `v` in `dom(S)`.
///
/// Trials come from the model's domain sampler with a fixed seed. The ratio
/// is maximized over the linear span of the trials (an energy-orthonormal
/// basis is accumulated), which is still a certified lower bound.
pub fn krein_sup_form(model: &ModelOperator, u: &GridFun, trials: usize, seed: u64) -> Result<SupFormEstimate> {
    if trials < 100 {
        return invalid(format!("need at least 100 trials, got {trials}"));
    }
    let space = model.space();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut qs: Vec<(GridFun, GridFun)> = vec![];
    let mut best_single: f64 = 0.0;
    let mut sup = 0.0;
    for _ in 0..trials {
        let (mut v, mut sv) = model.domain_sample_with_image(&mut rng);
        let e0 = inner(space, &v, &sv)?.re;
        if e0 > 0.0 {
            let num = inner(space, u, &sv)?.norm_sqr();
            best_single = best_single.max(num / e0);
        } else {
            continue;
        }
        if qs.len() >= 64 {
            continue;
        }
        for _ in 0..2 {
            for (q, sq) in &qs {
                let c = inner(space, q, &sv)?;
                v = v.axpy(-c, q);
                sv = sv.axpy(-c, sq);
            }
        }
        let e = inner(space, &v, &sv)?.re;
        if e > 1e-10 * e0 {
            let s = 1.0 / e.sqrt();
            let (v, sv) = (v.scale(C64::new(s, 0.0)), sv.scale(C64::new(s, 0.0)));
            sup += inner(space, u, &sv)?.norm_sqr();
            qs.push((v, sv));
        }
    }
    Ok(SupFormEstimate { span_sup: sup, best_single, span_dim: qs.len(), trials })
}

#[derive(Clone, Copy, Debug, serde::Serialize)]
pub struct ShiftCheck {
    /// Relative gap between `((S+c)_F + a)^{-1}` and `(S_F + c + a)^{-1}`.
    pub friedrichs_residual: f64,
    /// Relative gap between `((S+c)_K + a)^{-1}` and `(S_K + c + a)^{-1}`.
    pub krein_gap: f64,
}

pub fn shift_noncommute_check(model: &ModelOperator, c: f64) -> Result<ShiftCheck> {
    if !(c >= 0.0 && c.is_finite()) {
        return invalid("shift must be a nonnegative number");
    }
    let a = 1.0;
    let space = model.space();
    let shifted = model.shifted(c);
    let lhs = shifted.friedrichs_green(C64::new(-a, 0.0))?;
    let rhs = model.friedrichs_green(C64::new(-(a + c), 0.0))?;
    let fr = lhs.sub(&rhs).hs_norm(space) / rhs.hs_norm(space);
    let ks = build_extension(&shifted, ExtensionSpec::Krein)?.resolvent_at(C64::new(-a, 0.0))?;
    let k = build_extension(model, ExtensionSpec::Krein)?.resolvent_at(C64::new(-(a + c), 0.0))?;
    let kg = ks.sub(&k).hs_norm(space) / k.hs_norm(space);
    Ok(ShiftCheck { friedrichs_residual: fr, krein_gap: kg })
}

/// Two extensions are relatively prime when their stacked boundary matrices
/// have full rank `2r`. Returns the verdict and the stacked rank.
pub fn relatively_prime_check(e1: &ExtensionRealization, e2: &ExtensionRealization) -> (bool, usize) {
    let r = e1.bc.nrows();
    let stacked = Mat::from_fn(2 * r, 2 * r, |i, j| if i < r { e1.bc[(i, j)] } else { e2.bc[(i - r, j)] });
    let rank = small::rank(stacked.as_ref(), 1e-10);
    (rank == 2 * r, rank)
}

/// Distance between the row spaces of two boundary matrices (spectral norm
/// of the difference of the orthogonal projectors).
pub fn bc_row_space_distance(a: MatRef<'_, C64>, b: MatRef<'_, C64>) -> Result<f64> {
    let proj = |m: MatRef<'_, C64>| -> Result<Mat<C64>> {
        let ns = null_space(m, 0.0)?;
        Ok(&ns * ns.adjoint())
    };
    let d = proj(a)? - proj(b)?;
    Ok(small::spectral_norm(d.as_ref()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DomainKind {
    /// `dom(S_K) = dom(S) + ker(S*)`
    Krein,
    /// `dom(S_F) = dom(S) + S_F^{-1} ker(S*)`
    Friedrichs,
    /// `dom(S*) = dom(S) + S_F^{-1} ker(S*) + ker(S*)`
    Adjoint,
}

/// Splitting of a domain element into its `dom(S)` part and kernel pieces.
#[derive(Clone, Debug)]
pub struct DomainSplit {
    pub f: GridFun,
    /// Coefficients of `eta` on the `ker(S*)` basis (the `S_F^{-1} eta` part).
    pub eta: Vec<C64>,
    /// Coefficients of `w` on the `ker(S*)` basis.
    pub w: Vec<C64>,
    /// Largest boundary value left in `f`, relative to `||u||`.
    pub trace_residual: f64,
    /// Least-squares misfit of the boundary data, relative to `||u||`.
    pub fit_residual: f64,
}

pub fn domain_split(model: &ModelOperator, u: &GridFun, kind: DomainKind) -> Result<DomainSplit> {
    let space = model.space();
    let n0 = model.kernel_basis_n0()?;
    let r = n0.basis.dim();
    let tr = model.traces(u)?;
    let (use_eta, use_w) = match kind {
        DomainKind::Krein => (false, true),
        DomainKind::Friedrichs => (true, false),
        DomainKind::Adjoint => (true, true),
    };
    let mut cols: Vec<Mat<C64>> = vec![];
    if use_eta {
        cols.push(n0.friedrichs_traces.clone());
    }
    if use_w {
        cols.push(n0.traces.clone());
    }
    let k = cols.len() * r;
    let d = 2 * r;
    let a = Mat::from_fn(d, k, |i, j| cols[j / r][(i, j % r)]);
    let rhs = Mat::from_fn(d, 1, |i, _| tr[i]);
    let ata = a.adjoint() * &a;
    let (inv, _) = small::inverse(ata.as_ref(), "domain split")?;
    let c = &inv * (a.adjoint() * &rhs);
    let fit = &a * &c - &rhs;
    let un = norm(space, u).max(1e-300);
    let mut eta = vec![ZERO; r];
    let mut w = vec![ZERO; r];
    let mut f = u.clone();
    let mut idx = 0;
    if use_eta {
        let g = model.friedrichs_green(ZERO)?;
        let img = g.apply_mat(n0.basis.columns.as_ref());
        for (j, e) in eta.iter_mut().enumerate() {
            *e = c[(idx + j, 0)];
            f = f.axpy(-*e, &GridFun::from_col(img.as_ref(), j));
        }
        idx += r;
    }
    if use_w {
        for (j, x) in w.iter_mut().enumerate() {
            *x = c[(idx + j, 0)];
            f = f.axpy(-*x, &n0.basis.column(j));
        }
    }
    let trace_residual = model.traces(&f)?.iter().map(|t| t.norm()).fold(0.0, f64::max) / un;
    let fit_residual = small::max_abs(fit.as_ref()) / un;
    Ok(DomainSplit { f, eta, w, trace_residual, fit_residual })
}
