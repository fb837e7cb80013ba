//! Krein-type resolvent formulas between extensions, the behaviour of the
//! Krein resolvent near `z = 0`, and resolvent differences of three
//! extensions.

use faer::{Mat, MatRef};
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::extensions::{build_extension, relatively_prime_check, ExtensionRealization, ExtensionSpec};
use crate::models::ModelOperator;
use crate::moperator::{alpha_of_pair, donoghue_m_from, nplus_basis, p12};
use crate::numlin::{
    dense_singular_values, norm, singular_values, small, weighted_rows, GridSpace, KernelOperator, SubspaceBasis, C64, I, ONE, ZERO,
};

/// `R + U_{z,i} Phi B^{-1} Phi^* W U_{z,-i}` for the resolvent `R = R(z)` of
/// the reference extension. `B` is the `N_+` bracket.
fn krein_sum(space: &GridSpace, r: &KernelOperator, phi: &SubspaceBasis, bracket: MatRef<'_, C64>, z: C64) -> Result<KernelOperator> {
    let (inv, cond) = small::inverse(bracket, &format!("Krein bracket at z = {z}"))?;
    let c = phi.columns.as_ref();
    let left = c + r.apply_mat(c) * faer::Scale(z - I);
    let row = weighted_rows(space, c).adjoint().to_owned();
    let right = &row + (&row * &r.matrix) * faer::Scale(z + I);
    let mut out = r.add_low_rank(left.as_ref(), (inv * right).as_ref());
    out.condition = Some(cond);
    Ok(out)
}

fn require_prime(e1: &ExtensionRealization, e2: &ExtensionRealization) -> Result<()> {
    let (ok, rank) = relatively_prime_check(e1, e2);
    if ok {
        Ok(())
    } else {
        Err(Error::NotRelativelyPrime { rank, needed: 2 * e1.model().deficiency_r() })
    }
}

/// `(S_2 - z)^{-1}` from `S_1` through `[tan alpha_12 - M_1(z)]^{-1}`.
pub fn general_krein_rhs(e1: &ExtensionRealization, e2: &ExtensionRealization, z: C64) -> Result<KernelOperator> {
    require_prime(e1, e2)?;
    let model = e1.model();
    let phi = nplus_basis(model)?;
    let tan = alpha_of_pair(e1, e2, &phi)?.tan()?;
    let r1 = e1.resolvent_at(z)?;
    let m1 = donoghue_m_from(model.space(), &r1, &phi, z);
    krein_sum(model.space(), &r1, &phi, (tan - m1).as_ref(), z)
}

/// The same resolvent through `P_12(z)`: `R_1 + U_{z,i} P_12(z) U_{z,-i}`.
pub fn general_krein_rhs_p12(e1: &ExtensionRealization, e2: &ExtensionRealization, z: C64) -> Result<KernelOperator> {
    require_prime(e1, e2)?;
    let r1 = e1.resolvent_at(z)?;
    let p = p12(e1, e2, z)?;
    let left = r1.scale(z - I).shift(ONE);
    let right = r1.scale(z + I).shift(ONE);
    Ok(r1.add(&left.compose(&p).compose(&right)))
}

/// `(S_K - z)^{-1}` from the Friedrichs resolvent and `M_F(0) - M_F(z)`.
pub fn krein_fk_rhs(model: &ModelOperator, z: C64) -> Result<KernelOperator> {
    let phi = nplus_basis(model)?;
    let space = model.space();
    let rf = model.friedrichs_green(z)?;
    let m0 = donoghue_m_from(space, &model.friedrichs_green(ZERO)?, &phi, ZERO);
    let mz = donoghue_m_from(space, &rf, &phi, z);
    krein_sum(space, &rf, &phi, (m0 - mz).as_ref(), z)
}

/// `(S_F - z)^{-1}` from the Krein resolvent (computed by the boundary value
/// solver) and `-M_F(0) - M_K(z)`.
pub fn reversed_krein_rhs(model: &ModelOperator, z: C64) -> Result<KernelOperator> {
    let rk = build_extension(model, ExtensionSpec::Krein)?.resolvent_at(z)?;
    reversed_krein_rhs_from(model, &rk, z)
}

/// As [`reversed_krein_rhs`] with a given Krein resolvent at `z`.
pub fn reversed_krein_rhs_from(model: &ModelOperator, rk: &KernelOperator, z: C64) -> Result<KernelOperator> {
    let phi = nplus_basis(model)?;
    let space = model.space();
    let m0 = donoghue_m_from(space, &model.friedrichs_green(ZERO)?, &phi, ZERO);
    let mk = donoghue_m_from(space, rk, &phi, z);
    let bracket = Mat::from_fn(m0.nrows(), m0.ncols(), |i, j| -m0[(i, j)] - mk[(i, j)]);
    krein_sum(space, rk, &phi, bracket.as_ref(), z)
}

#[derive(Clone, Debug, Serialize)]
pub struct LaurentSample {
    pub z_re: f64,
    pub z_im: f64,
    /// `max_k |z U_{K,z,i} u_k - i P u_k|` over the `N_+` basis.
    pub defect: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct LaurentReport {
    pub samples: Vec<LaurentSample>,
    /// `(d_{k+1} / d_k) / (|z_{k+1}| / |z_k|)` for consecutive samples.
    pub ratios: Vec<f64>,
    /// Every ratio lies in `[0.8, 1.2]`.
    pub linear_decay: bool,
    /// `|extrapolated z R_K(z) + P|_HS` from the first two samples.
    pub richardson_defect: f64,
}

/// Checks `z U_{K,z,i} u -> i P u` and `z (S_K - z)^{-1} -> -P` as `z -> 0`.
pub fn laurent_limit_check(model: &ModelOperator, z_values: &[C64]) -> Result<LaurentReport> {
    if z_values.len() < 2 {
        return invalid("Laurent check needs at least two samples");
    }
    let eps = model.epsilon();
    for z in z_values {
        if *z == ZERO {
            return invalid("z = 0 is the limit point and cannot be evaluated");
        }
        if z.norm() > 0.1 * eps {
            return invalid(format!("|z| = {} exceeds 0.1 epsilon = {}", z.norm(), 0.1 * eps));
        }
    }
    let space = model.space();
    let k = build_extension(model, ExtensionSpec::Krein)?;
    let p = k.kernel_projector();
    let phi = nplus_basis(model)?;
    let c = phi.columns.as_ref();
    let ipu = p.apply_mat(c) * faer::Scale(I);
    let mut samples = vec![];
    let mut scaled = vec![];
    for &z in z_values {
        let rk = k.resolvent_at(z)?;
        let u = (c + rk.apply_mat(c) * faer::Scale(z - I)) * faer::Scale(z);
        let d = &u - &ipu;
        let defect = (0..phi.dim())
            .map(|j| norm(space, &crate::numlin::GridFun::from_col(d.as_ref(), j)))
            .fold(0.0, f64::max);
        samples.push(LaurentSample { z_re: z.re, z_im: z.im, defect });
        if scaled.len() < 2 {
            scaled.push(rk.scale(z));
        }
    }
    let ratios: Vec<f64> = samples
        .windows(2)
        .zip(z_values.windows(2))
        .map(|(s, z)| (s[1].defect / s[0].defect) / (z[1].norm() / z[0].norm()))
        .collect();
    let linear_decay = ratios.iter().all(|r| (0.8..=1.2).contains(r));
    let (z1, z2) = (z_values[0], z_values[1]);
    let extrap = scaled[1].scale(z1 / (z1 - z2)).sub(&scaled[0].scale(z2 / (z1 - z2)));
    let richardson_defect = extrap.add(&p).hs_norm(space);
    Ok(LaurentReport { samples, ratios, linear_decay, richardson_defect })
}

/// `(S_K - z)^{-1} (I - P)` from the Neumann series of `S_F^{-1}` truncated
/// at `terms`, valid for `|z| < epsilon`. At `z = 0` this is exactly
/// `(I - P) S_F^{-1} (I - P)`.
pub fn small_z_series(model: &ModelOperator, z: C64, terms: usize) -> Result<KernelOperator> {
    let eps = model.epsilon();
    if !(z.norm() < eps) {
        return invalid(format!("|z| = {} must be below epsilon = {eps}", z.norm()));
    }
    if terms == 0 {
        return invalid("series needs at least one term");
    }
    let space = model.space();
    let g = model.friedrichs_green(ZERO)?;
    let n = model.n();
    let p = model.kernel_basis_n0()?.basis;
    let phi = nplus_basis(model)?;
    let r = phi.dim();
    // sum_{k < terms} z^k G^k, applied from the left by Horner
    let neumann = |x: MatRef<'_, C64>| -> Mat<C64> {
        let mut acc = x.to_owned();
        for _ in 1..terms {
            acc = x + g.apply_mat(acc.as_ref()) * faer::Scale(z);
        }
        acc
    };
    let gn = if z == ZERO { g.matrix.clone() } else { g.apply_mat(neumann(small::identity(n).as_ref()).as_ref()) };
    let main = crate::extensions::compress_complement(model, &KernelOperator::new(gn), &p);
    if z == ZERO {
        return Ok(main);
    }
    let c = phi.columns.as_ref();
    // D(z) = I + Phi^* W [(1 + z^2) sum z^k G^{k+2} + z G] Phi, and
    // z^2 [M(0) - M(z)]^{-1} = -z D(z)^{-1}
    let gc = g.apply_mat(c);
    let ngc = neumann(gc.as_ref());
    let g2 = g.apply_mat(ngc.as_ref()) * faer::Scale(ONE + z * z) + &gc * faer::Scale(z);
    let d = small::identity(r) + phi.coefficients_mat(space, g2.as_ref());
    let (dinv, cond) = small::inverse(d.as_ref(), "small-z bracket")?;
    // left factor (I - P)(I - i G) N_z G Phi
    let left = &ngc - g.apply_mat(ngc.as_ref()) * faer::Scale(I);
    let left = &left - p.projector(space).apply_mat(left.as_ref());
    // right factor Phi^* W G N_z (I + i G)(I - P), the adjoint of the left
    // factor with i -> -i and z -> conj(z), computed in the same way
    let wphi = weighted_rows(space, c).adjoint().to_owned();
    let mut row = &wphi * &g.matrix;
    let base = row.clone();
    for _ in 1..terms {
        row = &base + (&row * &g.matrix) * faer::Scale(z);
    }
    let row = &row + (&row * &g.matrix) * faer::Scale(I);
    let row = &row - (&row * &p.projector(space).matrix);
    let right = (dinv * row) * faer::Scale(-z);
    let mut out = main.add_low_rank(left.as_ref(), right.as_ref());
    out.condition = Some(cond);
    Ok(out)
}

/// `dM_F/dz` at 0 by central differences, and its closed form
/// `I + Phi^* W S_F^{-2} Phi`.
#[derive(Clone, Debug, Serialize)]
pub struct DerivativeCheck {
    /// Spectral norm of the difference of the two.
    pub defect: f64,
    /// Smallest eigenvalue of the closed form.
    pub min_eigenvalue: f64,
}

pub fn m_derivative_check(model: &ModelOperator, step: f64) -> Result<DerivativeCheck> {
    if !(step > 0.0 && step < 0.1 * model.epsilon()) {
        return invalid("finite-difference step must lie in (0, 0.1 epsilon)");
    }
    let space = model.space();
    let phi = nplus_basis(model)?;
    let m = |z: f64| -> Result<Mat<C64>> {
        let z = C64::new(z, 0.0);
        Ok(donoghue_m_from(space, &model.friedrichs_green(z)?, &phi, z))
    };
    // fourth-order central difference
    let (a, b, c, d) = (m(2.0 * step)?, m(step)?, m(-step)?, m(-2.0 * step)?);
    let fd = Mat::from_fn(a.nrows(), a.ncols(), |i, j| {
        (-a[(i, j)] + 8.0 * b[(i, j)] - 8.0 * c[(i, j)] + d[(i, j)]) / (12.0 * step)
    });
    let g = model.friedrichs_green(ZERO)?;
    let gphi = g.apply_mat(phi.columns.as_ref());
    let gram = weighted_rows(space, gphi.as_ref()).adjoint() * &gphi;
    let closed = small::identity(phi.dim()) + gram;
    let defect = small::spectral_norm((&fd - &closed).as_ref());
    let (vals, _) = small::herm_eig(closed.as_ref())?;
    Ok(DerivativeCheck { defect, min_eigenvalue: vals[0] })
}

fn schatten_triplet(sv: &[f64]) -> [f64; 3] {
    let s1 = sv.iter().sum();
    let s2 = sv.iter().map(|s| s * s).sum::<f64>().sqrt();
    let si = sv.iter().cloned().fold(0.0, f64::max);
    [s1, s2, si]
}

fn numerical_rank(sv: &[f64]) -> usize {
    let top = sv.iter().cloned().fold(0.0, f64::max);
    if top == 0.0 {
        return 0;
    }
    sv.iter().filter(|s| **s > 1e-9 * top).count()
}

#[derive(Clone, Debug, Serialize)]
pub struct IdealReport {
    pub rank_d: usize,
    pub rank_e: usize,
    /// Schatten norms `p = 1, 2, infinity` of `D(z) = R_2(z) - R_1(z)`.
    pub schatten_d: [f64; 3],
    /// Schatten norms of `E = e^{2i alpha_02} - e^{2i alpha_01}`.
    pub schatten_e: [f64; 3],
    /// `D(i)` against `Phi {[tan a_02 - i]^{-1} - [tan a_01 - i]^{-1}} Phi^* W C_0`,
    /// relative Hilbert-Schmidt.
    pub tangent_residual: f64,
    /// `D(i)` against `(i/2) Phi [e^{-2i a_02} - e^{-2i a_01}] Phi^* W C_0`.
    pub exponential_residual: f64,
    /// `D(z)` against `U_{2,z,i} D(i) U_{1,z,i}`.
    pub transport_residual: f64,
}

/// Compares `R_2(z) - R_1(z)` with the angle difference of `S_1`, `S_2`
/// measured from a reference extension `S_0`.
pub fn resolvent_diff_ideal_check(
    e0: &ExtensionRealization,
    e1: &ExtensionRealization,
    e2: &ExtensionRealization,
    z: C64,
) -> Result<IdealReport> {
    require_prime(e1, e0)?;
    require_prime(e2, e0)?;
    let model = e0.model();
    let space = model.space();
    let phi = nplus_basis(model)?;
    let a1 = alpha_of_pair(e0, e1, &phi)?;
    let a2 = alpha_of_pair(e0, e2, &phi)?;
    let e = a2.exp_i(2.0) - a1.exp_i(2.0);
    let sv_e = dense_singular_values(e.as_ref())?;
    let (r1z, r2z) = (e1.resolvent_at(z)?, e2.resolvent_at(z)?);
    let dz = r2z.sub(&r1z);
    let sv_d = singular_values(space, &dz)?;

    let (r1i, r2i) = (e1.resolvent_at(I)?, e2.resolvent_at(I)?);
    let di = r2i.sub(&r1i);
    let c = phi.columns.as_ref();
    let c0 = e0.resolvent_at(I)?.scale(C64::new(0.0, 2.0)).shift(ONE);
    let row = weighted_rows(space, c).adjoint() * &c0.matrix;
    let r = phi.dim();
    let tan_inv = |a: &crate::moperator::AlphaOperator| -> Result<Mat<C64>> {
        let t = a.tan()?;
        Ok(small::inverse((t - small::identity(r) * faer::Scale(I)).as_ref(), "tan(alpha) - i")?.0)
    };
    let mid = tan_inv(&a2)? - tan_inv(&a1)?;
    let expo = (a2.exp_i(-2.0) - a1.exp_i(-2.0)) * faer::Scale(C64::new(0.0, 0.5));
    let dn = di.hs_norm(space).max(1e-300);
    let form = |core: &Mat<C64>| KernelOperator::new(c * (core * &row)).sub(&di).hs_norm(space) / dn;
    let tangent_residual = form(&mid);
    let exponential_residual = form(&expo);

    let u2 = r2z.scale(z - I).shift(ONE);
    let u1 = r1z.scale(z - I).shift(ONE);
    let moved = u2.compose(&di).compose(&u1);
    let transport_residual = moved.sub(&dz).hs_norm(space) / dz.hs_norm(space).max(1e-300);
    Ok(IdealReport {
        rank_d: numerical_rank(&sv_d),
        rank_e: numerical_rank(&sv_e),
        schatten_d: schatten_triplet(&sv_d),
        schatten_e: schatten_triplet(&sv_e),
        tangent_residual,
        exponential_residual,
        transport_residual,
    })
}

/// Robin conditions `u'(0) = u(0)`, `u'(1) = -u(1)` on the unit interval: a
/// reference extension relatively prime to both `S_F` and `S_K`.
pub fn robin_reference(model: &ModelOperator) -> Result<ExtensionSpec> {
    if model.deficiency_r() != 2 || model.parts().len() != 1 {
        return invalid("Robin reference is defined for a single interval");
    }
    // data order: u(0), u(l), u'(0), u'(l)
    let bc = Mat::from_fn(2, 4, |i, j| {
        let rows = [[1.0, 0.0, -1.0, 0.0], [0.0, 1.0, 0.0, 1.0]];
        C64::new(rows[i][j], 0.0)
    });
    Ok(ExtensionSpec::Boundary { bc })
}
