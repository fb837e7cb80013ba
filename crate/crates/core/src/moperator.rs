//! Cayley and `U` transforms, the unitary angle between two extensions and
//! Donoghue-type Weyl-Titchmarsh operators on `N_+ = ker(S* - i)`.

use faer::{Mat, MatRef};

use crate::error::{invalid, Error, Result};
use crate::extensions::ExtensionRealization;
use crate::models::ModelOperator;
use crate::numlin::{hermitian_eig, small, weighted_rows, GridFun, GridSpace, KernelOperator, SubspaceBasis, C64, I, ONE, ZERO};

/// Orthonormal basis of `N_+`.
pub fn nplus_basis(model: &ModelOperator) -> Result<SubspaceBasis> {
    model.deficiency_basis_at(I)
}

/// `U_{z,z0} = (S - z0)(S - z)^{-1} = I + (z - z0) R(z)`.
pub fn u_transform_op(ext: &ExtensionRealization, z: C64, z0: C64) -> Result<KernelOperator> {
    Ok(ext.resolvent_at(z)?.scale(z - z0).shift(ONE))
}

pub fn u_transform(ext: &ExtensionRealization, z: C64, z0: C64, u: &GridFun) -> Result<GridFun> {
    let r = ext.resolvent_at(z)?;
    Ok(u.axpy(z - z0, &r.apply(u)))
}

/// Cayley transform `C = (S + i)(S - i)^{-1} = U_{i,-i}`.
pub fn cayley(ext: &ExtensionRealization, u: &GridFun) -> Result<GridFun> {
    u_transform(ext, I, -I, u)
}

/// `C^{-1} = (S - i)(S + i)^{-1} = U_{-i,i}`.
pub fn cayley_inverse(ext: &ExtensionRealization, u: &GridFun) -> Result<GridFun> {
    u_transform(ext, -I, I, u)
}

fn apply_u_thin(r: &KernelOperator, shift: C64, x: MatRef<'_, C64>) -> Mat<C64> {
    let rx = r.apply_mat(x);
    Mat::from_fn(x.nrows(), x.ncols(), |i, j| x[(i, j)] + shift * rx[(i, j)])
}

/// `P_12(z) = U_{1,i,z} (R_2(z) - R_1(z)) U_{1,-i,z}` as a full operator.
pub fn p12(e1: &ExtensionRealization, e2: &ExtensionRealization, z: C64) -> Result<KernelOperator> {
    let d = e2.resolvent_at(z)?.sub(&e1.resolvent_at(z)?);
    let left = u_transform_op(e1, I, z)?;
    let right = u_transform_op(e1, -I, z)?;
    Ok(left.compose(&d).compose(&right))
}

/// `P_12(z)` compressed to `N_+`: `Phi^* W P_12(z) Phi`.
pub fn p12_on_nplus(e1: &ExtensionRealization, e2: &ExtensionRealization, basis: &SubspaceBasis, z: C64) -> Result<Mat<C64>> {
    let space = e1.model().space();
    let r1z = e1.resolvent_at(z)?;
    let r2z = e2.resolvent_at(z)?;
    let x = apply_u_thin(&e1.resolvent_at(-I)?, -I - z, basis.columns.as_ref());
    let y = r2z.apply_mat(x.as_ref()) - r1z.apply_mat(x.as_ref());
    let zz = apply_u_thin(&e1.resolvent_at(I)?, I - z, y.as_ref());
    Ok(basis.coefficients_mat(space, zz.as_ref()))
}

/// The self-adjoint angle `alpha` with `e^{-2 i alpha} = -C_2 C_1^{-1}` on
/// `N_+`, eigenvalues in `(-pi/2, pi/2]`.
#[derive(Clone, Debug)]
pub struct AlphaOperator {
    pub alpha: Mat<C64>,
    /// `C_2 C_1^{-1}` restricted to `N_+`, in basis coordinates.
    pub v: Mat<C64>,
    pub phases: Vec<f64>,
    vectors: Mat<C64>,
    pub unitarity_defect: f64,
    /// Part of `C_2 C_1^{-1} N_+` that leaks out of `N_+`.
    pub leak: f64,
}

impl AlphaOperator {
    /// Wraps a given self-adjoint angle matrix.
    pub fn from_angle(alpha: MatRef<'_, C64>) -> Result<Self> {
        let r = alpha.nrows();
        if alpha.ncols() != r || small::max_abs((alpha - alpha.adjoint()).as_ref()) > 1e-12 {
            return invalid("alpha must be a square self-adjoint matrix");
        }
        let (phases, vectors) = small::herm_eig(alpha)?;
        let mut out = AlphaOperator { alpha: alpha.to_owned(), v: Mat::zeros(r, r), phases, vectors, unitarity_defect: 0.0, leak: 0.0 };
        let e = out.exp_i(-2.0);
        out.v = Mat::from_fn(r, r, |i, j| -e[(i, j)]);
        Ok(out)
    }

    fn with(&self, f: impl Fn(f64) -> C64) -> Mat<C64> {
        let r = self.phases.len();
        let q = &self.vectors;
        Mat::from_fn(r, r, |i, j| (0..r).map(|k| q[(i, k)] * f(self.phases[k]) * q[(j, k)].conj()).sum())
    }

    /// `e^{s i alpha}` for a real `s`.
    pub fn exp_i(&self, s: f64) -> Mat<C64> {
        self.with(|a| C64::new(0.0, s * a).exp())
    }

    pub fn cos(&self) -> Mat<C64> {
        self.with(|a| C64::new(a.cos(), 0.0))
    }

    pub fn sin(&self) -> Mat<C64> {
        self.with(|a| C64::new(a.sin(), 0.0))
    }

    /// `tan alpha`; fails when some phase is `pi/2` (extensions not
    /// relatively prime).
    pub fn tan(&self) -> Result<Mat<C64>> {
        if let Some(a) = self.phases.iter().find(|a| a.cos().abs() < 1e-9) {
            return Err(Error::Singular { what: format!("tan(alpha) at phase {a:.6}"), condition: f64::INFINITY });
        }
        Ok(self.with(|a| C64::new(a.tan(), 0.0)))
    }
}

/// Eigen-decomposition of a unitary matrix through a generic Hermitian
/// combination of its real and imaginary parts.
fn unitary_eig(a: MatRef<'_, C64>) -> Result<(Vec<C64>, Mat<C64>)> {
    let r = a.nrows();
    let t = 0.739_085_133_215_160_6;
    let h = Mat::from_fn(r, r, |i, j| {
        let s = (a[(i, j)] + a[(j, i)].conj()) * 0.5;
        let d = (a[(i, j)] - a[(j, i)].conj()) / C64::new(0.0, 2.0);
        s + d * t
    });
    let (_, q) = small::herm_eig(h.as_ref())?;
    let aq = a * &q;
    let lam: Vec<C64> = (0..r).map(|k| (0..r).map(|i| q[(i, k)].conj() * aq[(i, k)]).sum()).collect();
    let rebuilt = Mat::from_fn(r, r, |i, j| (0..r).map(|k| q[(i, k)] * lam[k] * q[(j, k)].conj()).sum::<C64>());
    let defect = small::max_abs((rebuilt - a).as_ref());
    if defect > 1e-8 {
        return Err(Error::Numerical(format!("unitary eigen-decomposition failed (defect {defect:.2e})")));
    }
    Ok((lam, q))
}

pub fn alpha_of_pair(e1: &ExtensionRealization, e2: &ExtensionRealization, basis: &SubspaceBasis) -> Result<AlphaOperator> {
    let space = e1.model().space();
    let phi = basis.columns.as_ref();
    let x = apply_u_thin(&e1.resolvent_at(-I)?, C64::new(0.0, -2.0), phi);
    let y = apply_u_thin(&e2.resolvent_at(I)?, C64::new(0.0, 2.0), x.as_ref());
    let v = basis.coefficients_mat(space, y.as_ref());
    let r = v.nrows();
    let inside = phi * &v;
    let leak = crate::numlin::norm_cols(space, (&y - &inside).as_ref());
    let vv = v.adjoint() * &v;
    let unitarity_defect = small::max_abs((vv - small::identity(r)).as_ref());
    if unitarity_defect > 1e-6 {
        return Err(Error::Numerical(format!("C2 C1^-1 is not unitary on N+ (defect {unitarity_defect:.2e})")));
    }
    let minus_v = Mat::from_fn(r, r, |i, j| -v[(i, j)]);
    let (lam, vectors) = unitary_eig(minus_v.as_ref())?;
    let phases: Vec<f64> = lam
        .iter()
        .map(|l| {
            let mut th = l.arg();
            if th >= std::f64::consts::PI - 1e-12 {
                th = -std::f64::consts::PI;
            }
            -th / 2.0
        })
        .collect();
    let mut out = AlphaOperator { alpha: Mat::zeros(r, r), v, phases, vectors, unitarity_defect, leak };
    out.alpha = out.with(|a| C64::new(a, 0.0));
    Ok(out)
}

/// `M(z) = z I + (1 + z^2) Phi^* W R(z) Phi`.
pub fn donoghue_m(ext: &ExtensionRealization, basis: &SubspaceBasis, z: C64) -> Result<Mat<C64>> {
    let r = ext.resolvent_at(z)?;
    Ok(donoghue_m_from(ext.model().space(), &r, basis, z))
}

/// `M(z)` from a precomputed resolvent.
pub fn donoghue_m_from(space: &GridSpace, resolvent: &KernelOperator, basis: &SubspaceBasis, z: C64) -> Mat<C64> {
    let rphi = resolvent.apply_mat(basis.columns.as_ref());
    let core = basis.coefficients_mat(space, rphi.as_ref());
    let k = core.nrows();
    Mat::from_fn(k, k, |i, j| (ONE + z * z) * core[(i, j)] + if i == j { z } else { ZERO })
}

/// `e^{-i alpha} [cos alpha + sin alpha M_1] [sin alpha - cos alpha M_1]^{-1} e^{i alpha}`.
pub fn lft_transform(m1: MatRef<'_, C64>, alpha: &AlphaOperator) -> Result<Mat<C64>> {
    let (c, s) = (alpha.cos(), alpha.sin());
    let num = &c + &s * m1;
    let den = &s - &c * m1;
    let (inv, _) = small::inverse(den.as_ref(), "LFT denominator")?;
    Ok(alpha.exp_i(-1.0) * num * inv * alpha.exp_i(1.0))
}

/// Lower bound for `Im M(z) / Im z` valid for every Donoghue operator.
pub fn herglotz_lower_bound(z: C64) -> f64 {
    let a = z.norm_sqr();
    2.0 / ((a + 1.0) + ((a - 1.0).powi(2) + 4.0 * z.re * z.re).sqrt())
}

/// Smallest eigenvalue of `Im M(z) / Im z` minus the universal lower bound.
pub fn herglotz_margin(m: MatRef<'_, C64>, z: C64) -> Result<f64> {
    if z.im == 0.0 {
        return invalid("Herglotz bound needs Im z != 0");
    }
    let r = m.nrows();
    let im = Mat::from_fn(r, r, |i, j| (m[(i, j)] - m[(j, i)].conj()) / C64::new(0.0, 2.0 * z.im));
    let (vals, _) = small::herm_eig(im.as_ref())?;
    Ok(vals[0] - herglotz_lower_bound(z))
}

/// Checks of the integral representation of `M` against the discrete
/// spectral measure of the extension.
#[derive(Clone, Debug, serde::Serialize)]
pub struct HerglotzRep {
    /// `|sum_k c_k c_k^* - I|`, i.e. `int dOmega / (1 + lambda^2) = I`.
    pub normalization_defect: f64,
    /// Largest relative gap between `M(z)` and its spectral rebuild.
    pub reconstruction_defect: f64,
    /// `tr int dOmega`, which grows without bound under refinement.
    pub total_mass: f64,
}

pub fn herglotz_rep_check(ext: &ExtensionRealization, basis: &SubspaceBasis, z_samples: &[C64]) -> Result<HerglotzRep> {
    let model = ext.model();
    let space = model.space();
    let z0 = C64::new(-1.0, 0.0);
    let eig = hermitian_eig(space, &ext.resolvent_at(z0)?)?;
    let k = basis.dim();
    let coeffs = basis.coefficients_mat(space, eig.vectors.as_ref());
    let mut pairs = vec![];
    for (idx, mu) in eig.values.iter().enumerate() {
        if mu.abs() < 1e-300 {
            continue;
        }
        pairs.push((z0.re + 1.0 / mu, idx));
    }
    let mut norm_acc = Mat::<C64>::zeros(k, k);
    let mut mass = 0.0;
    for &(lam, idx) in &pairs {
        for i in 0..k {
            for j in 0..k {
                norm_acc[(i, j)] += coeffs[(i, idx)] * coeffs[(j, idx)].conj();
            }
            mass += (1.0 + lam * lam) * coeffs[(i, idx)].norm_sqr();
        }
    }
    let normalization_defect = small::max_abs((norm_acc - small::identity(k)).as_ref());
    let mut rec: f64 = 0.0;
    for &z in z_samples {
        let direct = donoghue_m(ext, basis, z)?;
        let mut rebuilt = Mat::<C64>::zeros(k, k);
        for &(lam, idx) in &pairs {
            let f = (ONE + z * lam) / (C64::new(lam, 0.0) - z);
            for i in 0..k {
                for j in 0..k {
                    rebuilt[(i, j)] += coeffs[(i, idx)] * coeffs[(j, idx)].conj() * f;
                }
            }
        }
        let d = small::spectral_norm((rebuilt - &direct).as_ref()) / small::spectral_norm(direct.as_ref());
        rec = rec.max(d);
    }
    Ok(HerglotzRep { normalization_defect, reconstruction_defect: rec, total_mass: mass })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
pub enum BehaviorMode {
    /// `lambda -> -infinity`
    FriedrichsTest,
    /// `lambda -> 0-`
    KreinTest,
}

/// Diagonal values `Re (u_k, M(lambda) u_k)` along a ladder of `lambda`.
#[derive(Clone, Debug, serde::Serialize)]
pub struct BoundaryBehavior {
    pub mode: BehaviorMode,
    pub lambdas: Vec<f64>,
    /// `values[k][l]` for basis vector `k` at `lambdas[l]`.
    pub values: Vec<Vec<f64>>,
    pub diverges: bool,
    pub bounded: bool,
}

pub const BEHAVIOR_THRESHOLD: f64 = 50.0;

pub fn boundary_behavior(ext: &ExtensionRealization, basis: &SubspaceBasis, mode: BehaviorMode) -> Result<BoundaryBehavior> {
    let lambdas: Vec<f64> = match mode {
        BehaviorMode::FriedrichsTest => vec![-10.0, -1e2, -1e3, -1e4],
        BehaviorMode::KreinTest => vec![-1e-1, -1e-2, -1e-3],
    };
    let k = basis.dim();
    let mut values = vec![vec![]; k];
    for &l in &lambdas {
        let m = donoghue_m(ext, basis, C64::new(l, 0.0))?;
        for (i, v) in values.iter_mut().enumerate() {
            v.push(m[(i, i)].re);
        }
    }
    let diverges = values.iter().all(|v| match mode {
        BehaviorMode::FriedrichsTest => v.windows(2).all(|w| w[1] < w[0]) && *v.last().unwrap() < -BEHAVIOR_THRESHOLD,
        BehaviorMode::KreinTest => v.windows(2).all(|w| w[1] > w[0]) && *v.last().unwrap() > BEHAVIOR_THRESHOLD,
    });
    let bounded = values.iter().flatten().all(|x| x.abs() <= BEHAVIOR_THRESHOLD);
    Ok(BoundaryBehavior { mode, lambdas, values, diverges, bounded })
}

/// Truncated spectral sums `sum lambda_k |(u, e_k)|^2` and
/// `sum_{lambda_k > 0} lambda_k^{-1} |(u, e_k)|^2` over eigenvalues below each
/// cutoff, plus the mass of `u` on the null space.
#[derive(Clone, Debug, serde::Serialize)]
pub struct SpectralSums {
    pub cutoffs: Vec<f64>,
    pub sum_lambda: Vec<f64>,
    pub sum_inverse: Vec<f64>,
    pub zero_mode_mass: f64,
}

pub fn spectral_sums(ext: &ExtensionRealization, u: &GridFun, cutoffs: &[f64]) -> Result<SpectralSums> {
    let model = ext.model();
    let space = model.space();
    let z0 = C64::new(-1.0, 0.0);
    let eig = hermitian_eig(space, &ext.resolvent_at(z0)?)?;
    let w = weighted_rows(space, u.to_col().as_ref());
    let c = eig.vectors.adjoint() * &w;
    let lam: Vec<f64> = eig.values.iter().map(|m| z0.re + 1.0 / m).collect();
    let zero_tol = 1e-6;
    let zero_mode_mass = (0..lam.len()).filter(|&k| lam[k].abs() < zero_tol).map(|k| c[(k, 0)].norm_sqr()).sum();
    let mut sl = vec![];
    let mut si = vec![];
    for &cut in cutoffs {
        let mut a = 0.0;
        let mut b = 0.0;
        for k in 0..lam.len() {
            if lam[k] <= cut {
                let m = c[(k, 0)].norm_sqr();
                a += lam[k] * m;
                if lam[k] > zero_tol {
                    b += m / lam[k];
                }
            }
        }
        sl.push(a);
        si.push(b);
    }
    Ok(SpectralSums { cutoffs: cutoffs.to_vec(), sum_lambda: sl, sum_inverse: si, zero_mode_mass })
}
