//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Oracles are computed here, independently of the library paths
//! they check wherever a closed form exists.

use std::f64::consts::PI;
use std::time::Instant;

use faer::Mat;
use kreinext::extensions::{
    bc_row_space_distance, build_extension, krein_reduced_inverse, order_check, shift_noncommute_check, ExtensionRealization,
    ExtensionSpec,
};
use kreinext::ideals::schatten_equivalence_suite;
use kreinext::kreinformula::{
    general_krein_rhs, laurent_limit_check, m_derivative_check, resolvent_diff_ideal_check, reversed_krein_rhs, robin_reference,
    small_z_series,
};
use kreinext::models::ModelOperator;
use kreinext::moperator::{alpha_of_pair, boundary_behavior, donoghue_m, herglotz_margin, lft_transform, nplus_basis, BehaviorMode};
use kreinext::numlin::{
    hermitian_eigenvalues, hermitian_singular_values, norm, singular_values, small, KernelOperator, SchattenP, C64, I, ONE,
    ZERO,
};
use rand::{Rng, SeedableRng};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn ext(m: &ModelOperator, s: ExtensionSpec) -> ExtensionRealization<'_> {
    build_extension(m, s).unwrap()
}

fn rel_hs(m: &ModelOperator, a: &KernelOperator, b: &KernelOperator) -> f64 {
    a.sub(b).hs_norm(m.space()) / b.hs_norm(m.space())
}

fn minus(x: f64) -> C64 {
    C64::new(-x, 0.0)
}

/// Eigenvalues of `-u''` on (0,1) with `u'(0) = u'(1) = u(1) - u(0)`: with
/// `u = A cos kx + B sin kx` the determinant is `k (2 - 2 cos k - k sin k)`.
fn krein_roots(count: usize) -> Vec<f64> {
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

/// Closed-form `(S_F - z)^{-1} f` on (0,1) for `f = 1, x, x^2`.
fn dirichlet_solution(z: C64, deg: usize, x: f64) -> C64 {
    let k = z.sqrt();
    let (s, c) = (k.sin(), k.cos());
    let (cx, sx) = ((k * x).cos(), (k * x).sin());
    match deg {
        0 => -ONE / z + cx / z + sx * (ONE - c) / (z * s),
        1 => -x / z + sx / (z * s),
        _ => {
            let a = -2.0 / (z * z);
            let b = (ONE / z - 2.0 / (z * z) + 2.0 * c / (z * z)) / s;
            -x * x / z + 2.0 / (z * z) + a * cx + b * sx
        }
    }
}

/// Closed-form `(S_K - z)^{-1} x^2` on (0,1): `u = -x^2/z + 2/z^2 + A cos kx
/// + B sin kx` with `u'(0) = u'(1)` and `u'(0) = u(1) - u(0)`. (Constants and
/// `x` lie in `ker S*`, where the resolvent is just `-1/z`.)
fn krein_solution_of_square(z: C64, x: f64) -> C64 {
    let k = z.sqrt();
    let (s, c) = (k.sin(), k.cos());
    // A k s + B k (1 - c) = -2/z ;  A (c - 1) + B (s - k) = 1/z
    let m = [[k * s, k * (ONE - c)], [c - ONE, s - k]];
    let rhs = [-2.0 / z, ONE / z];
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    assert!(det.norm() > 1e-12, "z is a Krein eigenvalue");
    let a = (rhs[0] * m[1][1] - m[0][1] * rhs[1]) / det;
    let b = (m[0][0] * rhs[1] - m[1][0] * rhs[0]) / det;
    -x * x / z + 2.0 / (z * z) + a * (k * x).cos() + b * (k * x).sin()
}

fn criterion_1() -> Outcome {
    let t = Instant::now();
    let m = ModelOperator::interval_laplacian(2048).unwrap();
    let k = krein_reduced_inverse(&m).unwrap();
    let mut ev = hermitian_eigenvalues(m.space(), &k).unwrap();
    ev.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let want = krein_roots(5);
    let err = (0..5).map(|j| ((1.0 / ev[j]) - want[j]).abs() / want[j]).fold(0.0, f64::max);
    let secs = t.elapsed().as_secs_f64();
    outcome(err <= 1e-4 && secs <= 30.0, format!("max rel error {err:.2e} (tol 1e-4), {secs:.1} s (limit 30 s)"))
}

fn criterion_2() -> Outcome {
    let m = ModelOperator::interval_laplacian(2048).unwrap();
    let sp = m.space();
    let mut f: Vec<f64> = hermitian_eigenvalues(sp, &m.friedrichs_green(ZERO).unwrap()).unwrap();
    let mut k: Vec<f64> = hermitian_eigenvalues(sp, &krein_reduced_inverse(&m).unwrap()).unwrap();
    f.sort_by(|a, b| b.partial_cmp(a).unwrap());
    k.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut worst: f64 = 0.0;
    for j in 0..10 {
        let (mf, mk) = (1.0 / f[j], 1.0 / k[j]);
        worst = worst.max((PI * PI - mf) / mf).max((mf - mk) / mf);
    }
    outcome(worst <= 1e-4, format!("largest relative violation {worst:.2e} (tol 1e-4)"))
}

fn criterion_3() -> Outcome {
    let m = ModelOperator::interval_laplacian(1024).unwrap();
    let sp = m.space();
    let f = ext(&m, ExtensionSpec::Friedrichs);
    let k = ext(&m, ExtensionSpec::Krein);
    let mut worst_k: f64 = 0.0;
    let mut worst_f: f64 = 0.0;
    let mut worst_closed: f64 = 0.0;
    for z in [minus(1.0), minus(10.0), C64::new(1.0, 2.0)] {
        let rhs = general_krein_rhs(&f, &k, z).unwrap();
        let bvp = k.resolvent_at(z).unwrap();
        worst_k = worst_k.max(rel_hs(&m, &rhs, &bvp));
        let back = reversed_krein_rhs(&m, z).unwrap();
        for deg in 0..3 {
            let src = sp.real_fun(|x| x.powi(deg as i32));
            let want = sp.fun(|x| dirichlet_solution(z, deg, x));
            worst_f = worst_f.max(norm(sp, &back.apply(&src).sub(&want)) / norm(sp, &want));
        }
        let sq = sp.real_fun(|x| x * x);
        let want = sp.fun(|x| krein_solution_of_square(z, x));
        worst_closed = worst_closed.max(norm(sp, &rhs.apply(&sq).sub(&want)) / norm(sp, &want));
    }
    let pass = worst_k <= 1e-6 && worst_f <= 1e-6 && worst_closed <= 1e-6;
    outcome(
        pass,
        format!("S_F->S_K vs BVP {worst_k:.2e}, on x^2 vs closed form {worst_closed:.2e}, S_K->S_F vs Dirichlet closed form {worst_f:.2e} (tol 1e-6)"),
    )
}

fn criterion_4() -> Outcome {
    let models = [
        ModelOperator::interval_laplacian(1024).unwrap(),
        ModelOperator::halfline_schroedinger(30.0, 2048).unwrap(),
        ModelOperator::direct_sum(&[ModelOperator::interval_laplacian(512).unwrap(), ModelOperator::interval(2.0, 1.0, 512).unwrap()])
            .unwrap(),
    ];
    let mut at_i: f64 = 0.0;
    let mut margin = f64::INFINITY;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(20);
    for m in &models {
        let plus = nplus_basis(m).unwrap();
        let r = m.deficiency_r();
        for spec in [ExtensionSpec::Friedrichs, ExtensionSpec::Krein, ExtensionSpec::scalar_param(r, 1.0)] {
            let e = ext(m, spec);
            let mi = donoghue_m(&e, &plus, I).unwrap();
            let ii = Mat::from_fn(r, r, |a, b| if a == b { I } else { ZERO });
            at_i = at_i.max(small::max_abs((mi - ii).as_ref()));
        }
    }
    let m = &models[0];
    let plus = nplus_basis(m).unwrap();
    let f = ext(m, ExtensionSpec::Friedrichs);
    let k = ext(m, ExtensionSpec::Krein);
    for e in [&f, &k] {
        for _ in 0..20 {
            let im: f64 = rng.gen_range(0.1..5.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let z = C64::new(rng.gen_range(-20.0..20.0), im);
            margin = margin.min(herglotz_margin(donoghue_m(e, &plus, z).unwrap().as_ref(), z).unwrap());
        }
    }
    let a = alpha_of_pair(&f, &k, &plus).unwrap();
    let z = minus(1.0);
    let mk = donoghue_m(&k, &plus, z).unwrap();
    let pred = lft_transform(donoghue_m(&f, &plus, z).unwrap().as_ref(), &a).unwrap();
    let lft = small::max_abs((pred - &mk).as_ref()) / small::max_abs(mk.as_ref());
    outcome(
        at_i <= 1e-10 && margin >= -1e-10 && lft <= 1e-6,
        format!("|M(i) - iI| {at_i:.2e} (tol 1e-10), Herglotz margin {margin:.2e} (>= -1e-10), LFT {lft:.2e} (tol 1e-6)"),
    )
}

fn criterion_5() -> Outcome {
    let m = ModelOperator::interval_laplacian(1024).unwrap();
    // u'(0) - u'(1) = 0 and u(0) - u(1) + u'(0) = 0
    let krein_rows = Mat::from_fn(2, 4, |i, j| C64::new([[0.0, 0.0, 1.0, -1.0], [1.0, -1.0, 1.0, 0.0]][i][j], 0.0));
    let p0 = ext(&m, ExtensionSpec::scalar_param(2, 0.0));
    let dist = bc_row_space_distance(p0.bc(), krein_rows.as_ref()).unwrap();
    let f = ext(&m, ExtensionSpec::Friedrichs);
    let k = ext(&m, ExtensionSpec::Krein);
    let diag = |a: f64, b: f64| Mat::from_fn(2, 2, |i, j| if i != j { ZERO } else { C64::new([a, b][i], 0.0) });
    let mut min_eig = f64::INFINITY;
    for b in [diag(1.0, 1.0), diag(0.0, 3.0), diag(0.2, 7.0)] {
        let e = ext(&m, ExtensionSpec::Param { b, w: small::identity(2) });
        for a in [0.5, 1.0, 10.0] {
            min_eig = min_eig.min(order_check(&f, &e, a).unwrap().min_eigenvalue);
            min_eig = min_eig.min(order_check(&e, &k, a).unwrap().min_eigenvalue);
        }
    }
    let mut dims = vec![];
    for (b, want) in [(diag(0.0, 0.0), 2), (diag(0.0, 1.0), 1), (diag(1.0, 1.0), 0)] {
        dims.push((ext(&m, ExtensionSpec::Param { b, w: small::identity(2) }).kernel_dim(), want));
    }
    let dims_ok = dims.iter().all(|(a, b)| a == b);
    outcome(
        dist <= 1e-6 && min_eig >= -1e-8 && dims_ok,
        format!("bc distance {dist:.2e} (tol 1e-6), sandwich min eigenvalue {min_eig:.2e} (>= -1e-8), kernel dims {dims:?}"),
    )
}

fn criterion_6() -> Outcome {
    let m = ModelOperator::interval_laplacian(1024).unwrap();
    let r = laurent_limit_check(&m, &[minus(1e-2), minus(1e-3)]).unwrap();
    // defect ratio over |z| ratio, normalized so linear decay gives 1
    let ratio = r.ratios[0];
    outcome(
        (0.8..=1.2).contains(&ratio) && r.richardson_defect <= 1e-4,
        format!("decay ratio {:.4} x 10 (within [0.8, 1.2] x 10), |extrapolated + P| {:.2e} (tol 1e-4)", ratio, r.richardson_defect),
    )
}

fn criterion_7() -> Outcome {
    let m = ModelOperator::interval_laplacian(1024).unwrap();
    let z = minus(0.5);
    let k = ext(&m, ExtensionSpec::Krein);
    let q = k.kernel_projector().scale(minus(1.0)).shift(ONE);
    let want = k.resolvent_at(z).unwrap().compose(&q);
    let series = small_z_series(&m, z, 30).unwrap().sub(&want).hs_norm(m.space());
    let d = m_derivative_check(&m, 1e-2).unwrap();
    outcome(
        series <= 1e-7 && d.defect <= 1e-5 && d.min_eigenvalue >= 1.0 - 1e-6,
        format!("series vs BVP {series:.2e} (tol 1e-7), dM/dz defect {:.2e} (tol 1e-5), min eigenvalue {:.8}", d.defect, d.min_eigenvalue),
    )
}

fn criterion_8() -> Outcome {
    let m = ModelOperator::interval_laplacian(2048).unwrap();
    let sp = m.space();
    let g = m.friedrichs_green_plain(ZERO).unwrap();
    let trace: f64 = (0..m.n()).map(|i| g.matrix[(i, i)].re).sum();
    let hs = g.hs_norm(sp);
    let (dt, dh) = ((trace - 1.0 / 6.0).abs(), (hs - 1.0 / 90f64.sqrt()).abs());
    let rep = schatten_equivalence_suite(&m, SchattenP::Finite(2.0)).unwrap();
    let sk = hermitian_singular_values(sp, &krein_reduced_inverse(&m).unwrap()).unwrap();
    let sg = hermitian_singular_values(sp, &m.friedrichs_green(ZERO).unwrap()).unwrap();
    let dominated = (0..10).all(|j| sk[j] <= sg[j]);
    outcome(
        dt <= 1e-5 && dh <= 1e-5 && rep.square_defect <= 1e-8 && dominated,
        format!(
            "|tr - 1/6| {dt:.2e}, |HS - 1/sqrt(90)| {dh:.2e} (tol 1e-5), square defect {:.2e} (tol 1e-8), sigma_j domination for j <= 10: {dominated}",
            rep.square_defect
        ),
    )
}

fn criterion_9() -> Outcome {
    let m = ModelOperator::interval_laplacian(1024).unwrap();
    let sp = m.space();
    let specs = [ExtensionSpec::Friedrichs, ExtensionSpec::Krein, robin_reference(&m).unwrap(), ExtensionSpec::scalar_param(2, 1.0)];
    let exts: Vec<_> = specs.into_iter().map(|s| ext(&m, s)).collect();
    let mut worst_tail: f64 = 0.0;
    let mut best_second = f64::INFINITY;
    for a in 0..exts.len() {
        for b in a + 1..exts.len() {
            let d = exts[b].resolvent_at(I).unwrap().sub(&exts[a].resolvent_at(I).unwrap());
            let sv = singular_values(sp, &d).unwrap();
            worst_tail = worst_tail.max(sv[2] / sv[0]);
            best_second = best_second.min(sv[1] / sv[0]);
        }
    }
    let rep = resolvent_diff_ideal_check(&exts[2], &exts[0], &exts[1], I).unwrap();
    let identity = rep.tangent_residual.max(rep.exponential_residual);
    let pass = worst_tail <= 1e-9 && best_second > 1e-9 && rep.rank_d == 2 && rep.rank_e == 2 && identity <= 1e-7;
    outcome(
        pass,
        format!(
            "sigma_3/sigma_1 <= {worst_tail:.2e} (tol 1e-9), sigma_2/sigma_1 >= {best_second:.2e}, ranks D/E {}/{}, identity residual {identity:.2e} (tol 1e-7)",
            rep.rank_d, rep.rank_e
        ),
    )
}

fn criterion_10() -> Outcome {
    let m = ModelOperator::interval_laplacian(1024).unwrap();
    let s = shift_noncommute_check(&m, 1.0).unwrap();
    outcome(
        s.friedrichs_residual <= 1e-8 && s.krein_gap >= 1e-3,
        format!("Friedrichs residual {:.2e} (tol 1e-8), Krein gap {:.2e} (>= 1e-3)", s.friedrichs_residual, s.krein_gap),
    )
}

fn criterion_11() -> Outcome {
    let m = ModelOperator::interval_laplacian(1024).unwrap();
    let plus = nplus_basis(&m).unwrap();
    let f = ext(&m, ExtensionSpec::Friedrichs);
    let k = ext(&m, ExtensionSpec::Krein);
    let b = ext(&m, ExtensionSpec::scalar_param(2, 1.0));
    let bf = boundary_behavior(&f, &plus, BehaviorMode::FriedrichsTest).unwrap();
    let bk = boundary_behavior(&k, &plus, BehaviorMode::KreinTest).unwrap();
    let bb = boundary_behavior(&b, &plus, BehaviorMode::KreinTest).unwrap();
    let last = |v: &Vec<Vec<f64>>| v.iter().map(|x| *x.last().unwrap()).collect::<Vec<f64>>();
    let down = bf.diverges && last(&bf.values).iter().all(|v| *v < -50.0);
    let up = bk.diverges && last(&bk.values).iter().all(|v| *v > 50.0);
    let bounded = bb.values.iter().flatten().all(|v| v.abs() <= 50.0) && !bb.diverges;
    // the classes do not leak into each other
    let cross = !boundary_behavior(&f, &plus, BehaviorMode::KreinTest).unwrap().diverges
        && !boundary_behavior(&k, &plus, BehaviorMode::FriedrichsTest).unwrap().diverges;
    outcome(
        down && up && bounded && cross,
        format!(
            "Friedrichs at -1e4: {:?}, Krein at -1e-3: {:?}, Param(B=I) max |value| {:.2}",
            last(&bf.values),
            last(&bk.values),
            bb.values.iter().flatten().map(|v| v.abs()).fold(0.0, f64::max)
        ),
    )
}

fn main() {
    faer::set_global_parallelism(faer::Par::Seq);
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("reduced-inverse identity", criterion_1),
        ("eigenvalue inequality", criterion_2),
        ("Krein resolvent formulas", criterion_3),
        ("Donoghue M-operator", criterion_4),
        ("parametrization", criterion_5),
        ("Laurent structure", criterion_6),
        ("small-z series and derivative", criterion_7),
        ("Schatten suite", criterion_8),
        ("rank structure", criterion_9),
        ("shift non-commutation", criterion_10),
        ("boundary behavior", criterion_11),
    ];
    let total = Instant::now();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let o = f();
        let tag = if o.pass { "PASS" } else { "FAIL" };
        println!("{tag} [{:>2}] {name}: {} [{:.1} s]", i + 1, o.detail, t.elapsed().as_secs_f64());
        if !o.pass {
            failed += 1;
        }
    }
    println!("{} of {} criteria passed in {:.1} s", criteria.len() - failed, criteria.len(), total.elapsed().as_secs_f64());
    if failed > 0 {
        std::process::exit(1);
    }
}
