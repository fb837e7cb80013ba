use std::f64::consts::PI;

use faer::Mat;
use kreinext::extensions::{build_extension, ExtensionRealization, ExtensionSpec};
use kreinext::models::ModelOperator;
use kreinext::moperator::{
    alpha_of_pair, boundary_behavior, cayley, cayley_inverse, donoghue_m, herglotz_lower_bound, herglotz_margin,
    herglotz_rep_check, lft_transform, nplus_basis, p12, p12_on_nplus, spectral_sums, u_transform, AlphaOperator,
    BehaviorMode,
};
use kreinext::numlin::{hermitian_eig, norm, small, GridFun, C64, I, ONE, ZERO};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn ext(m: &ModelOperator, spec: ExtensionSpec) -> ExtensionRealization<'_> {
    build_extension(m, spec).unwrap()
}

fn random_fun(m: &ModelOperator, rng: &mut ChaCha8Rng) -> GridFun {
    GridFun((0..m.n()).map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect())
}

fn scaled(a: &Mat<C64>, c: C64) -> Mat<C64> {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)] * c)
}

fn max_gap(a: &Mat<C64>, b: &Mat<C64>) -> f64 {
    small::max_abs((a - b).as_ref())
}

#[test]
fn u_transform_composition_and_deficiency_mapping() {
    let m = ModelOperator::interval_laplacian(512).unwrap();
    let sp = m.space();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for e in [ext(&m, ExtensionSpec::Friedrichs), ext(&m, ExtensionSpec::Krein)] {
        let u = random_fun(&m, &mut rng);
        let same = u_transform(&e, I, I, &u).unwrap();
        assert!(norm(sp, &same.sub(&u)) < 1e-14);
        let (z0, z1, z2) = (I, C64::new(0.0, 2.0), C64::new(-1.0, 0.0));
        let lhs = u_transform(&e, z0, z1, &u_transform(&e, z1, z2, &u).unwrap()).unwrap();
        let rhs = u_transform(&e, z0, z2, &u).unwrap();
        assert!(norm(sp, &lhs.sub(&rhs)) <= 1e-8 * norm(sp, &u));
        // ker(S* - z0) is carried onto ker(S* - z)
        let b = m.deficiency_basis_at(z0).unwrap();
        for z in [C64::new(-2.0, 0.0), C64::new(1.0, 3.0)] {
            for j in 0..b.dim() {
                let v = u_transform(&e, z, z0, &b.column(j)).unwrap();
                let res = m.adjoint_action(&v).unwrap().axpy(-z, &v);
                assert!(m.residual_norm(&res).unwrap() <= 1e-6, "{}", e.label());
            }
        }
    }
}

#[test]
fn resolvent_points_in_the_spectrum_are_rejected() {
    let m = ModelOperator::interval_laplacian(256).unwrap();
    let f = ext(&m, ExtensionSpec::Friedrichs);
    let u = m.space().real_fun(|x| x);
    assert!(u_transform(&f, C64::new(PI * PI, 0.0), I, &u).is_err());
    let k = ext(&m, ExtensionSpec::Krein);
    assert!(u_transform(&k, ZERO, I, &u).is_err());
}

#[test]
fn cayley_is_unitary_and_maps_deficiency_spaces() {
    let m = ModelOperator::interval_laplacian(512).unwrap();
    let sp = m.space();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let minus = m.deficiency_basis_at(-I).unwrap();
    for e in [ext(&m, ExtensionSpec::Friedrichs), ext(&m, ExtensionSpec::Krein), ext(&m, ExtensionSpec::scalar_param(2, 3.0))] {
        for _ in 0..5 {
            let u = random_fun(&m, &mut rng);
            let c = cayley(&e, &u).unwrap();
            assert!((norm(sp, &c) - norm(sp, &u)).abs() <= 1e-8 * norm(sp, &u), "{}", e.label());
            let back = cayley_inverse(&e, &c).unwrap();
            assert!(norm(sp, &back.sub(&u)) <= 1e-8 * norm(sp, &u));
        }
        for j in 0..minus.dim() {
            let c = cayley(&e, &minus.column(j)).unwrap();
            let res = m.adjoint_action(&c).unwrap().axpy(-I, &c);
            assert!(m.residual_norm(&res).unwrap() <= 1e-6);
        }
    }
}

#[test]
fn cayley_acts_on_eigenvectors_by_the_spectral_factor() {
    let m = ModelOperator::interval_laplacian(1024).unwrap();
    let sp = m.space();
    let f = ext(&m, ExtensionSpec::Friedrichs);
    let eig = hermitian_eig(sp, &f.resolvent_at(ZERO).unwrap()).unwrap();
    let n = m.n();
    for k in 0..5 {
        let idx = n - 1 - k;
        let lam = 1.0 / eig.values[idx];
        let v = GridFun::from_col(eig.vectors.as_ref(), idx);
        let c = cayley(&f, &v).unwrap();
        let factor = (C64::new(lam, 0.0) + I) / (C64::new(lam, 0.0) - I);
        let d = norm(sp, &c.sub(&v.scale(factor)));
        assert!(d <= 1e-8, "lambda = {lam}: {d}");
    }
}

#[test]
fn p12_vanishes_off_nplus_and_matches_alpha_at_i() {
    let m = ModelOperator::interval_laplacian(256).unwrap();
    let sp = m.space();
    let plus = nplus_basis(&m).unwrap();
    let f = ext(&m, ExtensionSpec::Friedrichs);
    let k = ext(&m, ExtensionSpec::Krein);
    let b = ext(&m, ExtensionSpec::scalar_param(2, 1.5));
    assert!(p12(&f, &f, C64::new(-1.0, 1.0)).unwrap().hs_norm(sp) < 1e-12);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let proj = plus.complement_projector(sp);
    for (e1, e2) in [(&f, &k), (&k, &f), (&f, &b)] {
        for z in [I, C64::new(-1.0, 0.0), C64::new(0.5, 2.0)] {
            let p = p12(e1, e2, z).unwrap();
            for _ in 0..3 {
                let v = proj.apply(&random_fun(&m, &mut rng));
                assert!(norm(sp, &p.apply(&v)) <= 1e-8 * norm(sp, &v), "{} {} at {z}", e1.label(), e2.label());
            }
            // range stays inside N_+
            let img = p.apply_mat(plus.columns.as_ref());
            let out = proj.apply_mat(img.as_ref());
            assert!(kreinext::numlin::norm_cols(sp, out.as_ref()) <= 1e-8);
            let thin = p12_on_nplus(e1, e2, &plus, z).unwrap();
            let full = plus.coefficients_mat(sp, img.as_ref());
            assert!(max_gap(&thin, &full) <= 1e-9);
        }
        let a = alpha_of_pair(e1, e2, &plus).unwrap();
        let at_i = p12_on_nplus(e1, e2, &plus, I).unwrap();
        let want = scaled(&(small::identity(2) + a.exp_i(-2.0)), C64::new(0.0, 0.5));
        assert!(max_gap(&at_i, &want) <= 1e-8, "{}", max_gap(&at_i, &want));
    }
}

#[test]
fn p12_range_dimension_is_constant() {
    let m = ModelOperator::interval_laplacian(256).unwrap();
    let plus = nplus_basis(&m).unwrap();
    let f = ext(&m, ExtensionSpec::Friedrichs);
    let pairs = [
        (ext(&m, ExtensionSpec::Krein), 2),
        (ext(&m, ExtensionSpec::param_on_columns(2, Mat::from_fn(1, 1, |_, _| ONE), &[0]).unwrap()), 1),
        (ext(&m, ExtensionSpec::Friedrichs), 0),
    ];
    for (e2, want) in &pairs {
        for z in [I, C64::new(-1.0, 0.0), C64::new(0.0, 2.0)] {
            let p = p12_on_nplus(&f, e2, &plus, z).unwrap();
            assert_eq!(small::rank(p.as_ref(), 1e-8), *want, "{} at {z}", e2.label());
        }
    }
}

#[test]
fn alpha_examples() {
    let m = ModelOperator::interval_laplacian(1024).unwrap();
    let plus = nplus_basis(&m).unwrap();
    let f = ext(&m, ExtensionSpec::Friedrichs);
    let k = ext(&m, ExtensionSpec::Krein);
    let same = alpha_of_pair(&k, &k, &plus).unwrap();
    assert!(max_gap(&same.v, &small::identity(2)) <= 1e-8);
    assert!(same.phases.iter().all(|a| (a - PI / 2.0).abs() < 1e-8), "{:?}", same.phases);
    assert!(same.tan().is_err());
    let fk = alpha_of_pair(&f, &k, &plus).unwrap();
    let kf = alpha_of_pair(&k, &f, &plus).unwrap();
    for a in [&fk, &kf] {
        assert!(a.unitarity_defect <= 1e-8 && a.leak <= 1e-8);
        let u = a.exp_i(-2.0);
        assert!(max_gap(&(u.adjoint() * &u), &small::identity(2)) <= 1e-10);
    }
    let mf0 = donoghue_m(&f, &plus, ZERO).unwrap();
    let tfk = fk.tan().unwrap();
    let tkf = kf.tan().unwrap();
    assert!(max_gap(&tfk, &mf0) <= 1e-6, "{}", max_gap(&tfk, &mf0));
    assert!(max_gap(&tkf, &(-&tfk)) <= 1e-6);
    // alpha is self-adjoint with eigenvalues in (-pi/2, pi/2]
    assert!(max_gap(&fk.alpha, &fk.alpha.adjoint().to_owned()) <= 1e-12);
    assert!(fk.phases.iter().all(|a| *a > -PI / 2.0 && *a <= PI / 2.0));
}

#[test]
fn donoghue_m_examples() {
    let m = ModelOperator::interval_laplacian(512).unwrap();
    let plus = nplus_basis(&m).unwrap();
    let exts = [
        ext(&m, ExtensionSpec::Friedrichs),
        ext(&m, ExtensionSpec::Krein),
        ext(&m, ExtensionSpec::scalar_param(2, 0.7)),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for e in &exts {
        // every subspace N of N_+, here the full space and a single column
        let one = kreinext::numlin::SubspaceBasis {
            columns: Mat::from_fn(m.n(), 1, |i, _| plus.columns[(i, 1)]),
            gram_defect: 0.0,
        };
        for b in [&plus, &one] {
            let mi = donoghue_m(e, b, I).unwrap();
            let want = scaled(&small::identity(b.dim()), I);
            assert!(max_gap(&mi, &want) <= 1e-10, "{}: {}", e.label(), max_gap(&mi, &want));
        }
        let z = C64::new(1.0, 2.0);
        assert!(herglotz_margin(donoghue_m(e, &plus, z).unwrap().as_ref(), z).unwrap() >= -1e-10);
        let z = C64::new(2.0, 3.0);
        let a = donoghue_m(e, &plus, z).unwrap();
        let b = donoghue_m(e, &plus, z.conj()).unwrap();
        assert!(max_gap(&b, &a.adjoint().to_owned()) <= 1e-10);
        for _ in 0..20 {
            let mut im: f64 = rng.gen_range(0.1..5.0);
            if rng.gen_bool(0.5) {
                im = -im;
            }
            let z = C64::new(rng.gen_range(-20.0..20.0), im);
            let mz = donoghue_m(e, &plus, z).unwrap();
            assert!(herglotz_margin(mz.as_ref(), z).unwrap() >= -1e-10, "{} at {z}", e.label());
            let mc = donoghue_m(e, &plus, z.conj()).unwrap();
            assert!(max_gap(&mc, &mz.adjoint().to_owned()) <= 1e-10 * (1.0 + small::max_abs(mz.as_ref())));
        }
    }
    assert!(herglotz_margin(small::identity(2).as_ref(), ONE).is_err());
    // bound is 1 at z = i and positive elsewhere
    assert!((herglotz_lower_bound(I) - 1.0).abs() < 1e-15);
}

#[test]
fn linear_fractional_transform() {
    let m = ModelOperator::interval_laplacian(1024).unwrap();
    let plus = nplus_basis(&m).unwrap();
    let f = ext(&m, ExtensionSpec::Friedrichs);
    let k = ext(&m, ExtensionSpec::Krein);
    let fk = alpha_of_pair(&f, &k, &plus).unwrap();
    let kf = alpha_of_pair(&k, &f, &plus).unwrap();
    let z = C64::new(-1.0, 0.0);
    let mf = donoghue_m(&f, &plus, z).unwrap();
    let mk = donoghue_m(&k, &plus, z).unwrap();
    let pred = lft_transform(mf.as_ref(), &fk).unwrap();
    let gap = max_gap(&pred, &mk) / small::max_abs(mk.as_ref());
    assert!(gap <= 1e-6, "{gap}");
    // M(i) = iI is a fixed point for every alpha
    let ii = scaled(&small::identity(2), I);
    for a in [&fk, &kf] {
        assert!(max_gap(&lft_transform(ii.as_ref(), a).unwrap(), &ii) <= 1e-12);
    }
    // round trip through alpha_{1,2} and alpha_{2,1}
    for z in [C64::new(-3.0, 0.0), C64::new(1.0, 1.0), C64::new(-0.5, 4.0)] {
        let m1 = donoghue_m(&f, &plus, z).unwrap();
        let m2 = lft_transform(m1.as_ref(), &fk).unwrap();
        let back = lft_transform(m2.as_ref(), &kf).unwrap();
        assert!(max_gap(&back, &m1) <= 1e-8 * small::max_abs(m1.as_ref()), "{z}");
    }
}

#[test]
fn lft_with_zero_angle_inverts() {
    let m1 = Mat::from_fn(2, 2, |i, j| C64::new(if i == j { 2.0 + i as f64 } else { 0.3 }, 0.0));
    let zero = AlphaOperator::from_angle(Mat::zeros(2, 2).as_ref()).unwrap();
    let out = lft_transform(m1.as_ref(), &zero).unwrap();
    let (inv, _) = small::inverse(m1.as_ref(), "test").unwrap();
    assert!(max_gap(&out, &(-inv)) <= 1e-12);
    // a singular bracket is reported
    let sing = Mat::from_fn(2, 2, |_, _| ONE);
    let half = AlphaOperator::from_angle(Mat::from_fn(2, 2, |i, j| if i == j { C64::new(PI / 2.0, 0.0) } else { ZERO }).as_ref()).unwrap();
    assert!(lft_transform(sing.as_ref(), &zero).is_err());
    assert!(lft_transform(sing.as_ref(), &half).is_ok());
}

#[test]
fn herglotz_representation_of_friedrichs_m() {
    let z = [C64::new(1.0, 1.0)];
    let m1 = ModelOperator::interval_laplacian(1024).unwrap();
    let f1 = ext(&m1, ExtensionSpec::Friedrichs);
    let r1 = herglotz_rep_check(&f1, &nplus_basis(&m1).unwrap(), &z).unwrap();
    assert!(r1.normalization_defect <= 0.02, "{}", r1.normalization_defect);
    let m2 = ModelOperator::interval_laplacian(2048).unwrap();
    let f2 = ext(&m2, ExtensionSpec::Friedrichs);
    let r2 = herglotz_rep_check(&f2, &nplus_basis(&m2).unwrap(), &z).unwrap();
    assert!(r2.reconstruction_defect <= 1e-4, "{}", r2.reconstruction_defect);
    assert!(r2.total_mass >= 1.5 * r1.total_mass, "{} vs {}", r2.total_mass, r1.total_mass);
}

#[test]
fn boundary_behavior_separates_friedrichs_and_krein() {
    let m = ModelOperator::interval_laplacian(1024).unwrap();
    let plus = nplus_basis(&m).unwrap();
    let f = ext(&m, ExtensionSpec::Friedrichs);
    let k = ext(&m, ExtensionSpec::Krein);
    let b = ext(&m, ExtensionSpec::scalar_param(2, 1.0));
    let bf = boundary_behavior(&f, &plus, BehaviorMode::FriedrichsTest).unwrap();
    assert!(bf.diverges && *bf.values[0].last().unwrap() < -50.0);
    let bk = boundary_behavior(&k, &plus, BehaviorMode::KreinTest).unwrap();
    assert!(bk.diverges, "{:?}", bk.values);
    let bb = boundary_behavior(&b, &plus, BehaviorMode::KreinTest).unwrap();
    assert!(!bb.diverges && bb.bounded, "{:?}", bb.values);
    // the Friedrichs M stays bounded near 0 and the Krein M is not -infinite at -infinity
    assert!(!boundary_behavior(&f, &plus, BehaviorMode::KreinTest).unwrap().diverges);
    assert!(!boundary_behavior(&k, &plus, BehaviorMode::FriedrichsTest).unwrap().diverges);
}

#[test]
fn spectral_sums_grow_for_deficiency_vectors() {
    let m = ModelOperator::interval_laplacian(1024).unwrap();
    let plus = nplus_basis(&m).unwrap();
    let u = plus.column(0);
    let f = ext(&m, ExtensionSpec::Friedrichs);
    let k = ext(&m, ExtensionSpec::Krein);
    let cut = [1e2, 1e3, 1e4, 1e5];
    let sf = spectral_sums(&f, &u, &cut).unwrap();
    assert!(sf.sum_lambda.windows(2).all(|w| w[1] > w[0]));
    assert!(sf.sum_lambda[3] > 3.0 * sf.sum_lambda[1]);
    assert!(sf.zero_mode_mass < 1e-12);
    let sk = spectral_sums(&k, &u, &cut).unwrap();
    assert!(sk.zero_mode_mass > 1e-3);
}
