mod common;

use std::f64::consts::PI;

use common::{krein_interval_eigenvalues, rel_hs};
use faer::Mat;
use kreinext::extensions::{
    bc_row_space_distance, build_extension, domain_split, form_value, kernel_coefficients, kernel_projector,
    krein_reduced_inverse, krein_sup_form, order_check, relatively_prime_check, shift_noncommute_check, DomainKind,
    ExtensionSpec,
};
use kreinext::models::ModelOperator;
use kreinext::numlin::{hermitian_eigenvalues, norm, small, GridFun, C64, ONE, ZERO};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn diag(v: &[f64]) -> Mat<C64> {
    Mat::from_fn(v.len(), v.len(), |i, j| if i == j { C64::new(v[i], 0.0) } else { ZERO })
}

#[test]
fn kernel_projector_is_an_orthogonal_projection() {
    let m = ModelOperator::interval_laplacian(256).unwrap();
    let p = kernel_projector(&m).unwrap();
    let sp = m.space();
    assert!(p.compose(&p).sub(&p).hs_norm(sp) < 1e-10);
    assert!(p.adjoint(sp).sub(&p).hs_norm(sp) < 1e-10);
    let one = sp.real_fun(|_| 1.0);
    assert!(norm(sp, &p.apply(&one).sub(&one)) < 1e-10);
    let ev = hermitian_eigenvalues(sp, &p).unwrap();
    assert_eq!(ev.iter().filter(|v| (**v - 1.0).abs() < 1e-8).count(), 2);
}

#[test]
fn reduced_krein_inverse_structure() {
    let m = ModelOperator::interval_laplacian(512).unwrap();
    let k = krein_reduced_inverse(&m).unwrap();
    let sp = m.space();
    assert!(k.adjoint(sp).sub(&k).op_norm(sp) < 1e-10);
    let p = kernel_projector(&m).unwrap();
    assert!(p.compose(&k).op_norm(sp) < 1e-9);
}

#[test]
fn reduced_krein_inverse_matches_transcendental_roots() {
    let m = ModelOperator::interval_laplacian(2048).unwrap();
    let k = krein_reduced_inverse(&m).unwrap();
    let mut ev = hermitian_eigenvalues(m.space(), &k).unwrap();
    ev.reverse();
    let want = krein_interval_eigenvalues(5);
    for j in 0..5 {
        let got = 1.0 / ev[j];
        assert!((got - want[j]).abs() / want[j] < 1e-4, "j={j}: {got} vs {}", want[j]);
    }
}

#[test]
fn param_spec_reproduces_krein_and_friedrichs_conditions() {
    let m = ModelOperator::interval_laplacian(512).unwrap();
    let r = m.deficiency_r();
    let krein_rows = Mat::from_fn(2, 4, |i, j| C64::new([[0.0, 0.0, 1.0, -1.0], [1.0, -1.0, 1.0, 0.0]][i][j], 0.0));
    let p0 = build_extension(&m, ExtensionSpec::scalar_param(r, 0.0)).unwrap();
    assert!(bc_row_space_distance(p0.bc(), krein_rows.as_ref()).unwrap() < 1e-6);
    let empty = ExtensionSpec::Param { b: Mat::zeros(0, 0), w: Mat::zeros(r, 0) };
    let pf = build_extension(&m, empty).unwrap();
    assert!(bc_row_space_distance(pf.bc(), m.dirichlet_bc().as_ref()).unwrap() < 1e-6);
}

#[test]
fn large_b_approaches_friedrichs() {
    let m = ModelOperator::interval_laplacian(512).unwrap();
    let z = C64::new(-1.0, 0.0);
    let big = build_extension(&m, ExtensionSpec::scalar_param(2, 1e6)).unwrap();
    let f = m.friedrichs_green(z).unwrap();
    assert!(rel_hs(m.space(), &big.resolvent_at(z).unwrap(), &f) < 1e-3);
}

#[test]
fn invalid_param_specs_are_rejected() {
    let m = ModelOperator::interval_laplacian(128).unwrap();
    assert!(build_extension(&m, ExtensionSpec::Param { b: diag(&[1.0, -1.0]), w: small::identity(2) }).is_err());
    assert!(build_extension(&m, ExtensionSpec::Param { b: diag(&[1.0]), w: small::identity(2) }).is_err());
    let skew = Mat::from_fn(2, 1, |_, _| ONE);
    assert!(build_extension(&m, ExtensionSpec::Param { b: diag(&[1.0]), w: skew }).is_err());
    // sin is not in ker(S*)
    let s = m.space().real_fun(|x| (PI * x).sin());
    assert!(kernel_coefficients(&m, s.to_col().as_ref()).is_err());
    let bad = Mat::from_fn(2, 4, |i, j| if j == 0 { C64::new(1.0 + i as f64, 0.0) } else { ZERO });
    assert!(build_extension(&m, ExtensionSpec::Boundary { bc: bad }).is_err());
}

#[test]
fn kernel_dimension_equals_dim_ker_b() {
    let m = ModelOperator::interval_laplacian(256).unwrap();
    for (b, want) in [(diag(&[0.0, 0.0]), 2), (diag(&[0.0, 1.0]), 1), (diag(&[1.0, 1.0]), 0)] {
        let e = build_extension(&m, ExtensionSpec::Param { b, w: small::identity(2) }).unwrap();
        assert_eq!(e.kernel_dim(), want);
        let p = e.kernel_projector();
        assert!(p.compose(&p).sub(&p).hs_norm(m.space()) < 1e-10);
        assert!(p.adjoint(m.space()).sub(&p).hs_norm(m.space()) < 1e-10);
    }
}

#[test]
fn krein_kernel_is_ker_adjoint() {
    for m in [ModelOperator::interval_laplacian(1024).unwrap(), ModelOperator::halfline_schroedinger(25.0, 2048).unwrap()] {
        let k = build_extension(&m, ExtensionSpec::Krein).unwrap();
        assert_eq!(k.kernel_dim(), m.deficiency_r());
        for j in 0..k.kernel_dim() {
            let u = k.kernel().column(j);
            let r = m.adjoint_action(&u).unwrap();
            assert!(m.residual_norm(&r).unwrap() < 1e-6, "{}", m.label());
        }
    }
}

#[test]
fn form_values() {
    let m = ModelOperator::interval_laplacian(1024).unwrap();
    let sp = m.space();
    let g = sp.real_fun(|x| (PI * x).sin());
    let v = form_value(&m, &ExtensionSpec::Friedrichs, &g, &[]).unwrap();
    assert!((v.total - PI * PI / 2.0).abs() < 1e-4, "{}", v.total);
    let zero = sp.zeros();
    let v = form_value(&m, &ExtensionSpec::Krein, &zero, &[ONE, C64::new(0.3, -2.0)]).unwrap();
    assert_eq!(v.total, 0.0);
    let spec = ExtensionSpec::scalar_param(2, 1.0);
    let v = form_value(&m, &spec, &zero, &[ONE, ZERO]).unwrap();
    assert!((v.total - 1.0).abs() < 1e-14);
    assert_eq!(v.total, v.friedrichs_part + v.b_part);
    let bad = sp.real_fun(|x| (PI * x / 2.0).cos());
    assert!(form_value(&m, &ExtensionSpec::Friedrichs, &bad, &[]).is_err());
}

#[test]
fn order_relations() {
    let m = ModelOperator::interval_laplacian(512).unwrap();
    let f = build_extension(&m, ExtensionSpec::Friedrichs).unwrap();
    let k = build_extension(&m, ExtensionSpec::Krein).unwrap();
    let fk = order_check(&f, &k, 1.0).unwrap();
    assert!(fk.holds && fk.min_eigenvalue >= -1e-8);
    let same = order_check(&k, &k, 1.0).unwrap();
    assert!(same.min_eigenvalue.abs() <= 1e-10);
    let b1 = build_extension(&m, ExtensionSpec::scalar_param(2, 1.0)).unwrap();
    let b2 = build_extension(&m, ExtensionSpec::scalar_param(2, 2.0)).unwrap();
    assert!(order_check(&b2, &b1, 1.0).unwrap().holds);
    assert!(order_check(&f, &k, -1.0).is_err());
}

#[test]
fn sandwich_between_friedrichs_and_krein() {
    let m = ModelOperator::interval_laplacian(512).unwrap();
    let f = build_extension(&m, ExtensionSpec::Friedrichs).unwrap();
    let k = build_extension(&m, ExtensionSpec::Krein).unwrap();
    let w1 = kernel_coefficients(&m, m.space().real_fun(|x| x).to_col().as_ref()).unwrap();
    let specs = [
        ExtensionSpec::scalar_param(2, 1.0),
        ExtensionSpec::Param { b: diag(&[0.0, 3.0]), w: small::identity(2) },
        ExtensionSpec::Param { b: diag(&[5.0]), w: w1 },
    ];
    for spec in specs {
        let e = build_extension(&m, spec).unwrap();
        for a in [0.5, 1.0, 10.0] {
            let lo = order_check(&f, &e, a).unwrap();
            let hi = order_check(&e, &k, a).unwrap();
            assert!(lo.holds && hi.holds, "{} a={a}: {} {}", e.label(), lo.min_eigenvalue, hi.min_eigenvalue);
        }
    }
}

#[test]
fn sup_form_estimates() {
    let m = ModelOperator::interval_laplacian(512).unwrap();
    let sp = m.space();
    for f in [sp.real_fun(|_| 1.0), sp.real_fun(|x| 2.0 - x)] {
        assert!(krein_sup_form(&m, &f, 200, 3).unwrap().span_sup <= 1e-10);
    }
    assert_eq!(krein_sup_form(&m, &sp.zeros(), 100, 3).unwrap().span_sup, 0.0);
    let s = sp.real_fun(|x| (PI * x).sin());
    let est = krein_sup_form(&m, &s, 10_000, 3).unwrap();
    let target = PI * PI / 2.0;
    assert!(est.span_sup >= 0.95 * target && est.span_sup <= target * (1.0 + 1e-6), "{est:?}");
    assert!(est.best_single <= est.span_sup * (1.0 + 1e-9));
    assert!(krein_sup_form(&m, &s, 99, 3).is_err());
    let h = ModelOperator::halfline_schroedinger(25.0, 1024).unwrap();
    let e = h.space().real_fun(|x| (-x).exp());
    assert!(krein_sup_form(&h, &e, 200, 3).unwrap().span_sup <= 1e-10);
}

#[test]
fn shift_commutes_for_friedrichs_only() {
    let m = ModelOperator::interval_laplacian(512).unwrap();
    let s = shift_noncommute_check(&m, 1.0).unwrap();
    assert!(s.friedrichs_residual <= 1e-8);
    assert!(s.krein_gap >= 1e-3, "{}", s.krein_gap);
    let z = shift_noncommute_check(&m, 0.0).unwrap();
    assert!(z.friedrichs_residual <= 1e-10 && z.krein_gap <= 1e-10);
}

#[test]
fn relative_primeness() {
    let m = ModelOperator::interval_laplacian(256).unwrap();
    let f = build_extension(&m, ExtensionSpec::Friedrichs).unwrap();
    let k = build_extension(&m, ExtensionSpec::Krein).unwrap();
    assert!(relatively_prime_check(&f, &k).0);
    assert_eq!(relatively_prime_check(&k, &k), (false, 2));
    // W = span{x}: every element of the domain has u(0) = 0
    let w = kernel_coefficients(&m, m.space().real_fun(|x| x).to_col().as_ref()).unwrap();
    let e = build_extension(&m, ExtensionSpec::Param { b: diag(&[0.0]), w }).unwrap();
    assert!(!relatively_prime_check(&f, &e).0);
}

#[test]
fn domain_splits() {
    let m = ModelOperator::interval_laplacian(2048).unwrap();
    let sp = m.space();
    let n0 = m.kernel_basis_n0().unwrap();
    let g = m.friedrichs_green(ZERO).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..5 {
        let f = m.domain_sample(&mut rng);
        let w = [C64::new(0.7, -0.2), C64::new(-1.3, 0.4)];
        let eta = [C64::new(2.0, 1.0), C64::new(0.5, 0.0)];
        let kw = n0.basis.column(0).scale(w[0]).axpy(w[1], &n0.basis.column(1));
        let ke = g.apply(&n0.basis.column(0).scale(eta[0]).axpy(eta[1], &n0.basis.column(1)));
        let cases = [
            (DomainKind::Krein, f.axpy(ONE, &kw), true, false),
            (DomainKind::Friedrichs, f.axpy(ONE, &ke), false, true),
            (DomainKind::Adjoint, f.axpy(ONE, &kw).axpy(ONE, &ke), true, true),
        ];
        for (kind, u, has_w, has_eta) in cases {
            let s = domain_split(&m, &u, kind).unwrap();
            assert!(s.trace_residual <= 1e-6 && s.fit_residual <= 1e-6, "{kind:?}: {} {}", s.trace_residual, s.fit_residual);
            assert!(norm(sp, &s.f.sub(&f)) <= 1e-6 * norm(sp, &u), "{kind:?}");
            for j in 0..2 {
                if has_w {
                    assert!((s.w[j] - w[j]).norm() < 1e-6, "{kind:?} w {}", (s.w[j] - w[j]).norm());
                }
                if has_eta {
                    assert!((s.eta[j] - eta[j]).norm() < 1e-6, "{kind:?} eta {}", (s.eta[j] - eta[j]).norm());
                }
            }
        }
    }
    // a kernel element is not in dom(S_F): the Friedrichs split leaves a misfit
    let s = domain_split(&m, &sp.real_fun(|_| 1.0), DomainKind::Friedrichs).unwrap();
    assert!(s.fit_residual > 1e-3);
}

#[test]
fn direct_sum_and_unitary_transport() {
    let a = ModelOperator::interval_laplacian(256).unwrap();
    let b = ModelOperator::halfline_schroedinger(25.0, 512).unwrap();
    let s = ModelOperator::direct_sum(&[a.clone(), b.clone()]).unwrap();
    let z = C64::new(-1.0, 0.0);
    let ks = build_extension(&s, ExtensionSpec::Krein).unwrap().resolvent_at(z).unwrap();
    let ka = build_extension(&a, ExtensionSpec::Krein).unwrap().resolvent_at(z).unwrap();
    let kb = build_extension(&b, ExtensionSpec::Krein).unwrap().resolvent_at(z).unwrap();
    let (na, nb) = (a.n(), b.n());
    let blk = Mat::from_fn(na + nb, na + nb, |i, j| match (i < na, j < na) {
        (true, true) => ka.matrix[(i, j)],
        (false, false) => kb.matrix[(i - na, j - na)],
        _ => ZERO,
    });
    let d = small::max_abs((&ks.matrix - &blk).as_ref()) / small::max_abs(blk.as_ref());
    assert!(d <= 1e-8, "{d}");
    assert_eq!(build_extension(&s, ExtensionSpec::Krein).unwrap().kernel_dim(), 3);

    let refl = a.reflection().unwrap();
    let ar = a.unitary_conjugate(refl).unwrap();
    let k0 = ka;
    let kr = build_extension(&ar, ExtensionSpec::Krein).unwrap().resolvent_at(z).unwrap();
    let n = a.n();
    let flipped = Mat::from_fn(n, n, |i, j| k0.matrix[(n - 1 - i, n - 1 - j)]);
    assert!(small::max_abs((&kr.matrix - &flipped).as_ref()) <= 1e-8);
    // the Krein realization is itself reflection symmetric
    assert!(small::max_abs((&k0.matrix - &flipped).as_ref()) <= 1e-8);
}

#[test]
fn first_resolvent_identity() {
    let m = ModelOperator::interval_laplacian(1024).unwrap();
    let (z1, z2) = (C64::new(-2.0, 1.0), C64::new(0.5, -3.0));
    for spec in [ExtensionSpec::Friedrichs, ExtensionSpec::Krein, ExtensionSpec::scalar_param(2, 2.0)] {
        let e = build_extension(&m, spec).unwrap();
        let (r1, r2) = (e.resolvent_at(z1).unwrap(), e.resolvent_at(z2).unwrap());
        let lhs = r1.sub(&r2);
        let rhs = r1.compose(&r2).scale(z1 - z2);
        assert!(rel_hs(m.space(), &lhs, &rhs) < 1e-8, "{}: {}", e.label(), rel_hs(m.space(), &lhs, &rhs));
    }
}

#[test]
fn krein_resolvent_action_solves_the_boundary_problem() {
    let m = ModelOperator::interval_laplacian(1024).unwrap();
    let k = build_extension(&m, ExtensionSpec::Krein).unwrap();
    let z = C64::new(-1.0, 0.5);
    let r = k.resolvent_at(z).unwrap();
    let f = GridFun(m.space().nodes().iter().map(|&x| C64::new(x.exp(), x)).collect());
    let u = r.apply(&f);
    let res = m.adjoint_action(&u).unwrap().axpy(-z, &u).sub(&f);
    assert!(m.residual_norm(&res).unwrap() < 1e-6 * norm(m.space(), &f));
    let tr = m.traces(&u).unwrap();
    for row in 0..2 {
        let v: C64 = (0..4).map(|c| k.bc()[(row, c)] * tr[c]).sum();
        assert!(v.norm() < 1e-6, "{v}");
    }
}
