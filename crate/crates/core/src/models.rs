//! Model symmetric operators `-u'' + q u` on intervals and half-lines, and
//! their direct sums.
//!
//! Each part is discretized on its own midpoint grid. Resolvents are built
//! from closed-form Dirichlet Green kernels plus a rank-`r` boundary
//! correction, so the only discretization error is quadrature. The kernel
//! kink on the diagonal is compensated by `-h^2/12` (fourth order overall).
//! Boundary data of a part is ordered `(u(a), u(b), u'(a), u'(b))` for an
//! interval and `(u(0), u'(0))` for a half-line; the data of a direct sum is
//! the concatenation.

use std::f64::consts::PI;
use std::sync::OnceLock;

use faer::{Mat, MatRef};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, Error, Result};
use crate::numlin::{
    hermitian_eig, inner, make_grid_space, norm, orthonormalize, small, GridFun, GridSpace, HermitianEig,
    KernelOperator, Quadrature, SubspaceBasis, C64, ONE, ZERO,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PartKind {
    Interval,
    /// `(0, infinity)`, truncated at `length`.
    HalfLine,
}

#[derive(Clone, Debug)]
pub struct Part {
    pub kind: PartKind,
    pub length: f64,
    pub potential: f64,
    offset: usize,
    n: usize,
    h: f64,
    trace_offset: usize,
}

/// A unitary map of the grid space used to move a model to another frame.
#[derive(Clone, Debug)]
pub enum Conjugation {
    /// `(U f)_i = f_{perm[i]}`; the permutation must preserve weights.
    Permutation(Vec<usize>),
    Dense(Mat<C64>),
}

#[derive(Clone, Debug)]
pub struct ModelOperator {
    space: GridSpace,
    parts: Vec<Part>,
    conj: Option<Conjugation>,
    label: String,
    dirichlet: OnceLock<HermitianEig>,
}

/// Orthonormal basis of `ker(S*)` with the boundary data needed to build
/// parametrized extensions.
#[derive(Clone, Debug)]
pub struct N0Basis {
    pub basis: SubspaceBasis,
    /// Boundary data of each basis column (`2r x r`).
    pub traces: Mat<C64>,
    /// Boundary data of `S_F^{-1}` applied to each basis column.
    pub friedrichs_traces: Mat<C64>,
}

fn sinhc(w: C64) -> C64 {
    if w.norm() < 1e-4 {
        ONE + w * w / 6.0 + w * w * w * w / 120.0
    } else {
        w.sinh() / w
    }
}

/// `(1 - e^{-w}) / w`.
fn phi1(w: C64) -> C64 {
    if w.norm() < 1e-4 {
        ONE - w / 2.0 + w * w / 6.0 - w * w * w / 24.0
    } else {
        (ONE - (-w).exp()) / w
    }
}

fn kappa(q: f64, z: C64) -> C64 {
    (C64::new(q, 0.0) - z).sqrt()
}

/// Lagrange value and derivative weights at `t` for the given nodes.
fn lagrange(nodes: &[f64], t: f64) -> (Vec<f64>, Vec<f64>) {
    let m = nodes.len();
    let mut val = vec![0.0; m];
    let mut der = vec![0.0; m];
    for k in 0..m {
        let denom: f64 = (0..m).filter(|&j| j != k).map(|j| nodes[k] - nodes[j]).product();
        val[k] = (0..m).filter(|&j| j != k).map(|j| t - nodes[j]).product::<f64>() / denom;
        let mut d = 0.0;
        for l in (0..m).filter(|&l| l != k) {
            d += (0..m).filter(|&j| j != k && j != l).map(|j| t - nodes[j]).product::<f64>();
        }
        der[k] = d / denom;
    }
    (val, der)
}

// Fourth order second-derivative stencils, in units of 1/(12 h^2).
/// Nodes per endpoint left out of finite-difference residual norms.
pub const BOUNDARY_LAYER: usize = 8;

const D2_CENTER: [f64; 5] = [-1.0, 16.0, -30.0, 16.0, -1.0];
const D2_EDGE0: [f64; 6] = [45.0, -154.0, 214.0, -156.0, 61.0, -10.0];
const D2_EDGE1: [f64; 6] = [10.0, -15.0, -4.0, 14.0, -6.0, 1.0];

impl Part {
    fn trace_dim(&self) -> usize {
        match self.kind {
            PartKind::Interval => 4,
            PartKind::HalfLine => 2,
        }
    }

    fn hom_dim(&self) -> usize {
        self.trace_dim() / 2
    }

    fn x(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.h
    }

    fn epsilon(&self) -> f64 {
        match self.kind {
            PartKind::Interval => self.potential + PI * PI / (self.length * self.length),
            PartKind::HalfLine => self.potential,
        }
    }

    fn small_branch(&self, k: C64) -> bool {
        self.kind == PartKind::Interval && (k * self.length).norm() < 1.0
    }

    /// `e^{-k m h}` for `m = 0..=2n`.
    fn exp_table(&self, k: C64) -> Vec<C64> {
        (0..=2 * self.n).map(|m| (-k * (m as f64 * self.h)).exp()).collect()
    }

    /// Dirichlet Green kernel block with weights; `kink` subtracts the
    /// diagonal correction `h^2 / 12`.
    fn dirichlet_block(&self, z: C64, w: &[f64], kink: bool) -> Mat<C64> {
        let n = self.n;
        let k = kappa(self.potential, z);
        let l = self.length;
        let corr = if kink { self.kink_correction(w) } else { vec![0.0; n] };
        let g: Box<dyn Fn(usize, usize) -> C64> = match self.kind {
            PartKind::Interval if self.small_branch(k) => {
                let a: Vec<C64> = (0..n).map(|i| self.x(i) * sinhc(k * self.x(i))).collect();
                let b: Vec<C64> = (0..n).map(|i| (l - self.x(i)) * sinhc(k * (l - self.x(i)))).collect();
                let den = l * sinhc(k * l);
                Box::new(move |i, j| a[i.min(j)] * b[i.max(j)] / den)
            }
            PartKind::Interval => {
                let e = self.exp_table(k);
                let den = 2.0 * k * (ONE - e[2 * n]);
                Box::new(move |i, j| {
                    let d = i.abs_diff(j);
                    let s = i + j + 1;
                    (e[d] - e[s] - e[2 * n - s] + e[2 * n - d]) / den
                })
            }
            PartKind::HalfLine => {
                let e = self.exp_table(k);
                let p: Vec<C64> = (0..n).map(|i| self.x(i) * phi1(2.0 * k * self.x(i))).collect();
                Box::new(move |i, j| e[i.abs_diff(j)] * p[i.min(j)])
            }
        };
        Mat::from_fn(n, n, |i, j| {
            let v = g(i, j) * w[self.offset + j];
            if i == j {
                v - corr[i]
            } else {
                v
            }
        })
    }

    /// Quadrature error of the unit kink `-|y - x_i| / 2` on each row. The
    /// Green kernel has exactly this derivative jump on the diagonal, so
    /// subtracting it restores the order of the rule (`h^2 / 12` in the
    /// interior, different values next to the corrected end weights).
    fn kink_correction(&self, w: &[f64]) -> Vec<f64> {
        let n = self.n;
        let w = &w[self.offset..self.offset + n];
        let l = self.length;
        let x: Vec<f64> = (0..n).map(|i| self.x(i)).collect();
        let (mut wl, mut yl) = (0.0, 0.0);
        let wt: f64 = w.iter().sum();
        let yt: f64 = w.iter().zip(&x).map(|(a, b)| a * b).sum();
        (0..n)
            .map(|i| {
                let xi = x[i];
                let (wr, yr) = (wt - wl - w[i], yt - yl - w[i] * xi);
                let q = -0.5 * (xi * wl - yl + yr - xi * wr);
                wl += w[i];
                yl += w[i] * xi;
                q + 0.25 * (xi * xi + (l - xi) * (l - xi))
            })
            .collect()
    }

    /// Rows mapping `f` to the boundary data of `G_D f` (weights included).
    fn trace_rows(&self, z: C64, w: &[f64]) -> Mat<C64> {
        let n = self.n;
        let k = kappa(self.potential, z);
        let l = self.length;
        let mut t = Mat::zeros(self.trace_dim(), n);
        match self.kind {
            PartKind::Interval => {
                for j in 0..n {
                    let y = self.x(j);
                    let (t0, t1) = if self.small_branch(k) {
                        let den = l * sinhc(k * l);
                        ((l - y) * sinhc(k * (l - y)) / den, -y * sinhc(k * y) / den)
                    } else {
                        let e = |s: f64| (-k * s).exp();
                        let den = ONE - e(2.0 * l);
                        ((e(y) - e(2.0 * l - y)) / den, -(e(l - y) - e(l + y)) / den)
                    };
                    let wj = w[self.offset + j];
                    t[(2, j)] = t0 * wj;
                    t[(3, j)] = t1 * wj;
                }
            }
            PartKind::HalfLine => {
                for j in 0..n {
                    t[(1, j)] = (-k * self.x(j)).exp() * w[self.offset + j];
                }
            }
        }
        t
    }

    /// Homogeneous solutions of `-u'' + (q - z) u = 0` on the nodes and
    /// their boundary data.
    fn homogeneous(&self, z: C64) -> (Mat<C64>, Mat<C64>) {
        let n = self.n;
        let k = kappa(self.potential, z);
        let l = self.length;
        match self.kind {
            PartKind::Interval if self.small_branch(k) => {
                let h = Mat::from_fn(n, 2, |i, j| {
                    let x = self.x(i);
                    if j == 0 {
                        (k * x).cosh()
                    } else {
                        x * sinhc(k * x)
                    }
                });
                let ch = (k * l).cosh();
                let tr = [[ONE, ZERO], [ch, l * sinhc(k * l)], [ZERO, ONE], [k * k * l * sinhc(k * l), ch]];
                (h, Mat::from_fn(4, 2, |i, j| tr[i][j]))
            }
            PartKind::Interval => {
                let h = Mat::from_fn(n, 2, |i, j| {
                    let x = self.x(i);
                    if j == 0 {
                        (-k * x).exp()
                    } else {
                        (-k * (l - x)).exp()
                    }
                });
                let el = (-k * l).exp();
                let tr = [[ONE, el], [el, ONE], [-k, k * el], [-k * el, k]];
                (h, Mat::from_fn(4, 2, |i, j| tr[i][j]))
            }
            PartKind::HalfLine => {
                let h = Mat::from_fn(n, 1, |i, _| (-k * self.x(i)).exp());
                (h, Mat::from_fn(2, 1, |i, _| if i == 0 { ONE } else { -k }))
            }
        }
    }

    fn second_derivative(&self, u: &[C64]) -> Vec<C64> {
        let n = self.n;
        let s = 1.0 / (12.0 * self.h * self.h);
        (0..n)
            .map(|i| {
                let acc: C64 = if i >= 2 && i + 2 < n {
                    D2_CENTER.iter().enumerate().map(|(k, c)| *c * u[i + k - 2]).sum()
                } else if i < 2 {
                    let st = if i == 0 { D2_EDGE0 } else { D2_EDGE1 };
                    st.iter().enumerate().map(|(k, c)| *c * u[k]).sum()
                } else {
                    let st = if i == n - 1 { D2_EDGE0 } else { D2_EDGE1 };
                    st.iter().enumerate().map(|(k, c)| *c * u[n - 1 - k]).sum()
                };
                acc * s
            })
            .collect()
    }

    fn traces(&self, u: &[C64]) -> Vec<C64> {
        let m = 6;
        let left: Vec<f64> = (0..m).map(|i| self.x(i)).collect();
        let (v0, d0) = lagrange(&left, 0.0);
        let ua: C64 = (0..m).map(|k| v0[k] * u[k]).sum();
        let dua: C64 = (0..m).map(|k| d0[k] * u[k]).sum();
        match self.kind {
            PartKind::HalfLine => vec![ua, dua],
            PartKind::Interval => {
                let n = self.n;
                let right: Vec<f64> = (0..m).map(|i| self.x(n - m + i)).collect();
                let (v1, d1) = lagrange(&right, self.length);
                let ub: C64 = (0..m).map(|k| v1[k] * u[n - m + k]).sum();
                let dub: C64 = (0..m).map(|k| d1[k] * u[n - m + k]).sum();
                vec![ua, ub, dua, dub]
            }
        }
    }

    /// Sample `v` and the exact `-v'' + q v` on the nodes.
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (Vec<C64>, Vec<C64>) {
        fn cn<R: Rng + ?Sized>(rng: &mut R) -> C64 {
            C64::new(StandardNormal.sample(rng), StandardNormal.sample(rng))
        }
        let q = self.potential;
        match self.kind {
            PartKind::Interval => {
                let deg = rng.gen_range(0..=8usize);
                let c: Vec<C64> = (0..=deg).map(|k| cn(rng) * 0.5f64.powi(k as i32)).collect();
                let l = self.length;
                let a = PI / l;
                (0..self.n)
                    .map(|i| {
                        let x = self.x(i);
                        let t = 2.0 * x / l - 1.0;
                        // T_k, T_k', T_k'' by the three-term recurrence
                        let (mut t0, mut t1) = ([1.0, 0.0, 0.0], [t, 1.0, 0.0]);
                        let mut p = [c[0], ZERO, ZERO];
                        for (k, ck) in c.iter().enumerate().skip(1) {
                            let tk = if k == 1 {
                                t1
                            } else {
                                let t2 = [
                                    2.0 * t * t1[0] - t0[0],
                                    2.0 * t1[0] + 2.0 * t * t1[1] - t0[1],
                                    4.0 * t1[1] + 2.0 * t * t1[2] - t0[2],
                                ];
                                t0 = t1;
                                t1 = t2;
                                t2
                            };
                            for d in 0..3 {
                                p[d] += ck * tk[d];
                            }
                        }
                        let (d1, d2) = (p[1] * (2.0 / l), p[2] * (4.0 / (l * l)));
                        let s = (a * x).sin().powi(2);
                        let s1 = a * (2.0 * a * x).sin();
                        let s2 = 2.0 * a * a * (2.0 * a * x).cos();
                        let v = p[0] * s;
                        let v2 = d2 * s + d1 * (2.0 * s1) + p[0] * s2;
                        (v, -v2 + v * q)
                    })
                    .unzip()
            }
            PartKind::HalfLine => {
                let deg = rng.gen_range(0..=4usize);
                let c: Vec<C64> = (0..=deg).map(|_| cn(rng)).collect();
                (0..self.n)
                    .map(|i| {
                        let x = self.x(i);
                        // p = sum c_k x^k / k! and its first two derivatives
                        let mut p = [ZERO; 3];
                        for (k, ck) in c.iter().enumerate() {
                            for (d, pd) in p.iter_mut().enumerate() {
                                if k >= d {
                                    let j = k - d;
                                    let f: f64 = (1..=j).map(|m| m as f64).product();
                                    *pd += ck * x.powi(j as i32) / f;
                                }
                            }
                        }
                        let e = (-x).exp();
                        let (g, g1, g2) = (x * x * e, (2.0 * x - x * x) * e, (2.0 - 4.0 * x + x * x) * e);
                        let v = p[0] * g;
                        let v2 = p[2] * g + p[1] * (2.0 * g1) + p[0] * g2;
                        (v, -v2 + v * q)
                    })
                    .unzip()
            }
        }
    }
}

impl ModelOperator {
    /// `-u''` on `(0, 1)`; `epsilon = pi^2`, deficiency `(2, 2)`.
    pub fn interval_laplacian(n: usize) -> Result<Self> {
        Self::interval(1.0, 0.0, n)
    }

    /// `-u'' + q u` on `(0, length)` with `q >= 0`.
    pub fn interval(length: f64, potential: f64, n: usize) -> Result<Self> {
        if n < 64 {
            return invalid(format!("interval model needs n >= 64, got {n}"));
        }
        if !(length > 0.0) || !(potential >= 0.0) {
            return invalid("interval length must be positive and potential nonnegative");
        }
        let space = make_grid_space(0.0, length, n, Quadrature::Midpoint)?;
        let h = length / n as f64;
        let part = Part { kind: PartKind::Interval, length, potential, offset: 0, n, h, trace_offset: 0 };
        Ok(Self::from_parts(space, vec![part], if potential > 0.0 { format!("interval(0,{length};q={potential})") } else { format!("interval(0,{length})") }))
    }

    /// `-u'' + u` on `(0, infinity)`, truncated at `length`; `epsilon = 1`,
    /// deficiency `(1, 1)`.
    pub fn halfline_schroedinger(length: f64, n: usize) -> Result<Self> {
        if (-length).exp() > 1e-8 {
            return invalid(format!("truncation too short: e^-L = {:.2e} > 1e-8", (-length).exp()));
        }
        if length < 20.0 || n < 512 {
            return invalid(format!("half-line model needs L >= 20 and n >= 512, got L = {length}, n = {n}"));
        }
        let space = make_grid_space(0.0, length, n, Quadrature::Midpoint)?;
        let h = length / n as f64;
        let part = Part { kind: PartKind::HalfLine, length, potential: 1.0, offset: 0, n, h, trace_offset: 0 };
        Ok(Self::from_parts(space, vec![part], format!("halfline(0,{length})")))
    }

    fn from_parts(space: GridSpace, parts: Vec<Part>, label: String) -> Self {
        ModelOperator { space, parts, conj: None, label, dirichlet: OnceLock::new() }
    }

    /// Orthogonal direct sum; boundary data and deficiency indices add up.
    pub fn direct_sum(models: &[ModelOperator]) -> Result<Self> {
        if models.len() < 2 {
            return invalid("direct sum needs at least two parts");
        }
        let space = GridSpace::concat(&models.iter().map(|m| m.space.clone()).collect::<Vec<_>>());
        let mut parts = vec![];
        let (mut off, mut toff) = (0, 0);
        let mut any_conj = false;
        for m in models {
            any_conj |= m.conj.is_some();
            for p in &m.parts {
                let mut p = p.clone();
                p.offset += off;
                p.trace_offset += toff;
                parts.push(p);
            }
            off += m.space.len();
            toff += m.trace_dim();
        }
        let label = format!("dsum[{}]", models.iter().map(|m| m.label.clone()).collect::<Vec<_>>().join(","));
        let mut out = Self::from_parts(space, parts, label);
        if any_conj {
            let n = out.space.len();
            let mut u = Mat::zeros(n, n);
            let mut off = 0;
            for m in models {
                let k = m.space.len();
                let blk = m.conjugation_matrix();
                for j in 0..k {
                    for i in 0..k {
                        u[(off + i, off + j)] = blk[(i, j)];
                    }
                }
                off += k;
            }
            out.conj = Some(Conjugation::Dense(u));
        }
        Ok(out)
    }

    fn conjugation_matrix(&self) -> Mat<C64> {
        let n = self.space.len();
        match &self.conj {
            None => small::identity(n),
            Some(Conjugation::Dense(u)) => u.clone(),
            Some(Conjugation::Permutation(p)) => Mat::from_fn(n, n, |i, j| if p[i] == j { ONE } else { ZERO }),
        }
    }

    /// Conjugates the model by a unitary `U`: the new operator is `U S U^{-1}`.
    pub fn unitary_conjugate(&self, u: Conjugation) -> Result<Self> {
        let n = self.space.len();
        let w = self.space.weights();
        match &u {
            Conjugation::Permutation(p) => {
                let mut seen = vec![false; n];
                if p.len() != n {
                    return Err(Error::Dimension { expected: n, found: p.len() });
                }
                for (i, &j) in p.iter().enumerate() {
                    if j >= n || seen[j] || (w[i] - w[j]).abs() > 1e-14 * w[i] {
                        return invalid("permutation is not a weight-preserving bijection");
                    }
                    seen[j] = true;
                }
            }
            Conjugation::Dense(m) => {
                if m.nrows() != n || m.ncols() != n {
                    return Err(Error::Dimension { expected: n, found: m.nrows() });
                }
                let k = KernelOperator::new(m.clone());
                let d = k.adjoint(&self.space).compose(&k).sub(&KernelOperator::identity(n));
                let defect = small::max_abs(d.matrix.as_ref());
                if defect > 1e-10 {
                    return invalid(format!("map is not unitary (defect {defect:.2e})"));
                }
            }
        }
        if self.conj.is_some() {
            let prev = KernelOperator::new(self.conjugation_matrix());
            let next = KernelOperator::new(match &u {
                Conjugation::Dense(m) => m.clone(),
                Conjugation::Permutation(_) => {
                    let tmp = ModelOperator { conj: Some(u.clone()), ..self.clone() };
                    tmp.conjugation_matrix()
                }
            });
            let mut out = self.clone();
            out.conj = Some(Conjugation::Dense(next.compose(&prev).matrix));
            out.label = format!("conj({})", self.label);
            out.dirichlet = OnceLock::new();
            return Ok(out);
        }
        let mut out = self.clone();
        out.conj = Some(u);
        out.label = format!("conj({})", self.label);
        out.dirichlet = OnceLock::new();
        Ok(out)
    }

    /// `u(x) -> u(a + b - x)` on a single-interval model.
    pub fn reflection(&self) -> Result<Conjugation> {
        if self.parts.len() != 1 || self.parts[0].kind != PartKind::Interval {
            return invalid("reflection is defined for a single interval");
        }
        let n = self.space.len();
        Ok(Conjugation::Permutation((0..n).map(|i| n - 1 - i).collect()))
    }

    /// The same model with the potential raised by `c`.
    pub fn shifted(&self, c: f64) -> Self {
        let mut out = self.clone();
        for p in &mut out.parts {
            p.potential += c;
        }
        out.label = format!("{}+{c}", self.label);
        out.dirichlet = OnceLock::new();
        out
    }

    pub fn space(&self) -> &GridSpace {
        &self.space
    }

    pub fn parts(&self) -> &[Part] {
        &self.parts
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn n(&self) -> usize {
        self.space.len()
    }

    pub fn is_conjugated(&self) -> bool {
        self.conj.is_some()
    }

    /// Lower bound of the minimal operator.
    pub fn epsilon(&self) -> f64 {
        self.parts.iter().map(Part::epsilon).fold(f64::INFINITY, f64::min)
    }

    pub fn deficiency_r(&self) -> usize {
        self.parts.iter().map(Part::hom_dim).sum()
    }

    pub fn trace_dim(&self) -> usize {
        2 * self.deficiency_r()
    }

    fn to_frame(&self, f: &GridFun) -> GridFun {
        match &self.conj {
            None => f.clone(),
            Some(Conjugation::Permutation(p)) => GridFun(p.iter().map(|&j| f.0[j]).collect()),
            Some(Conjugation::Dense(u)) => KernelOperator::new(u.clone()).apply(f),
        }
    }

    fn from_frame(&self, f: &GridFun) -> GridFun {
        match &self.conj {
            None => f.clone(),
            Some(Conjugation::Permutation(p)) => {
                let mut out = f.clone();
                for (i, &j) in p.iter().enumerate() {
                    out.0[j] = f.0[i];
                }
                out
            }
            Some(Conjugation::Dense(u)) => KernelOperator::new(u.clone()).adjoint(&self.space).apply(f),
        }
    }

    fn mat_to_frame(&self, x: Mat<C64>) -> Mat<C64> {
        match &self.conj {
            None => x,
            Some(Conjugation::Permutation(p)) => Mat::from_fn(x.nrows(), x.ncols(), |i, j| x[(p[i], j)]),
            Some(Conjugation::Dense(u)) => u * &x,
        }
    }

    /// Applies `U . U^{-1}` to an operator built in the base frame.
    fn op_to_frame(&self, k: KernelOperator) -> KernelOperator {
        let cond = k.condition;
        let mut out = match &self.conj {
            None => k,
            Some(Conjugation::Permutation(p)) => {
                let n = k.n();
                KernelOperator::new(Mat::from_fn(n, n, |i, j| k.matrix[(p[i], p[j])]))
            }
            Some(Conjugation::Dense(u)) => {
                let uk = KernelOperator::new(u.clone());
                uk.compose(&k).compose(&uk.adjoint(&self.space))
            }
        };
        out.condition = cond;
        out
    }

    /// Row functionals (`k x n`) composed with `U^{-1}`.
    fn rows_to_frame(&self, t: Mat<C64>) -> Mat<C64> {
        match &self.conj {
            None => t,
            Some(Conjugation::Permutation(p)) => {
                let mut out = Mat::zeros(t.nrows(), t.ncols());
                for (i, &j) in p.iter().enumerate() {
                    for r in 0..t.nrows() {
                        out[(r, i)] = t[(r, j)];
                    }
                }
                out
            }
            Some(Conjugation::Dense(u)) => {
                let uinv = KernelOperator::new(u.clone()).adjoint(&self.space);
                &t * &uinv.matrix
            }
        }
    }

    /// `S* u` by fourth order finite differences, valid at every node.
    pub fn adjoint_action(&self, u: &GridFun) -> Result<GridFun> {
        self.check(u)?;
        let base = self.from_frame(u);
        let mut out = self.space.zeros();
        for p in &self.parts {
            let seg = &base.0[p.offset..p.offset + p.n];
            let d2 = p.second_derivative(seg);
            for i in 0..p.n {
                out.0[p.offset + i] = -d2[i] + p.potential * seg[i];
            }
        }
        Ok(self.to_frame(&out))
    }

    /// Boundary data of a grid function, by sixth order one-sided
    /// extrapolation.
    pub fn traces(&self, u: &GridFun) -> Result<Vec<C64>> {
        self.check(u)?;
        let base = self.from_frame(u);
        let mut out = vec![];
        for p in &self.parts {
            out.extend(p.traces(&base.0[p.offset..p.offset + p.n]));
        }
        Ok(out)
    }

    fn check(&self, u: &GridFun) -> Result<()> {
        if u.len() != self.n() {
            return Err(Error::Dimension { expected: self.n(), found: u.len() });
        }
        Ok(())
    }

    fn base_dirichlet(&self, z: C64, kink: bool) -> KernelOperator {
        let n = self.n();
        let w = self.space.weights();
        let mut m = Mat::zeros(n, n);
        for p in &self.parts {
            let blk = p.dirichlet_block(z, w, kink);
            for j in 0..p.n {
                for i in 0..p.n {
                    m[(p.offset + i, p.offset + j)] = blk[(i, j)];
                }
            }
        }
        KernelOperator::new(m)
    }

    fn check_z(&self, z: C64) -> Result<()> {
        if !(z.re.is_finite() && z.im.is_finite()) {
            return invalid("spectral parameter must be finite");
        }
        Ok(())
    }

    /// `(S_F - z)^{-1}`. Fails when `z` is within `1e-10` of a Dirichlet
    /// eigenvalue of some part.
    pub fn friedrichs_green(&self, z: C64) -> Result<KernelOperator> {
        self.check_dirichlet_z(z)?;
        Ok(self.op_to_frame(self.base_dirichlet(z, true)))
    }

    fn check_dirichlet_z(&self, z: C64) -> Result<()> {
        self.check_z(z)?;
        if z.im == 0.0 {
            for p in &self.parts {
                if p.kind == PartKind::Interval {
                    let t = (z.re - p.potential) * p.length * p.length / (PI * PI);
                    let j = t.sqrt().round();
                    if j >= 1.0 && (z.re - (p.potential + (j * PI / p.length).powi(2))).abs() < 1e-10 {
                        return Err(Error::Singular { what: "Dirichlet resolvent".into(), condition: f64::INFINITY });
                    }
                }
            }
        }
        Ok(())
    }

    /// `(S_F - z)^{-1}` as the plain Nystrom matrix, without the diagonal
    /// kink correction. Its eigenvalues are only second order accurate, but
    /// its trace is the diagonal quadrature of the kernel, so trace-type
    /// quantities (Schatten norms with small `p`) come out unbiased.
    pub fn friedrichs_green_plain(&self, z: C64) -> Result<KernelOperator> {
        self.check_dirichlet_z(z)?;
        Ok(self.op_to_frame(self.base_dirichlet(z, false)))
    }

    /// Boundary data functionals of `S_F` resolvent output: row `k` maps `f`
    /// to the `k`-th boundary value of `(S_F - z)^{-1} f`.
    pub fn friedrichs_trace_rows(&self, z: C64) -> Mat<C64> {
        self.rows_to_frame(self.base_trace_rows(z))
    }

    fn base_trace_rows(&self, z: C64) -> Mat<C64> {
        let n = self.n();
        let w = self.space.weights();
        let mut t = Mat::zeros(self.trace_dim(), n);
        for p in &self.parts {
            let blk = p.trace_rows(z, w);
            for r in 0..blk.nrows() {
                for j in 0..p.n {
                    t[(p.trace_offset + r, p.offset + j)] = blk[(r, j)];
                }
            }
        }
        t
    }

    fn base_homogeneous(&self, z: C64) -> (Mat<C64>, Mat<C64>) {
        let n = self.n();
        let r = self.deficiency_r();
        let mut h = Mat::zeros(n, r);
        let mut t = Mat::zeros(2 * r, r);
        let mut col = 0;
        for p in &self.parts {
            let (hb, tb) = p.homogeneous(z);
            for j in 0..hb.ncols() {
                for i in 0..p.n {
                    h[(p.offset + i, col + j)] = hb[(i, j)];
                }
                for i in 0..tb.nrows() {
                    t[(p.trace_offset + i, col + j)] = tb[(i, j)];
                }
            }
            col += hb.ncols();
        }
        (h, t)
    }

    /// A (non-orthonormal) basis of `ker(S* - z)` with its boundary data.
    pub fn homogeneous(&self, z: C64) -> (Mat<C64>, Mat<C64>) {
        let (h, t) = self.base_homogeneous(z);
        (self.mat_to_frame(h), t)
    }

    /// Orthonormal basis of `ker(S*)` plus the boundary data of the basis and
    /// of its image under `S_F^{-1}`.
    pub fn kernel_basis_n0(&self) -> Result<N0Basis> {
        let (h, t) = self.homogeneous(ZERO);
        let o = orthonormalize(&self.space, h.as_ref())?;
        if o.basis.dim() != self.deficiency_r() {
            return Err(Error::Numerical("kernel basis lost rank".into()));
        }
        let traces = &t * &o.coeffs;
        let friedrichs_traces = self.friedrichs_trace_rows(ZERO) * &o.basis.columns;
        Ok(N0Basis { basis: o.basis, traces, friedrichs_traces })
    }

    /// Orthonormal basis of `N_z = ker(S* - z)`.
    pub fn deficiency_basis_at(&self, z: C64) -> Result<SubspaceBasis> {
        self.check_z(z)?;
        if z.im == 0.0 && z.re >= self.epsilon() {
            return invalid(format!("z = {} lies in [epsilon, inf)", z.re));
        }
        let (h, _) = self.homogeneous(z);
        let o = orthonormalize(&self.space, h.as_ref())?;
        if o.basis.dim() != self.deficiency_r() {
            return Err(Error::Numerical("deficiency basis lost rank".into()));
        }
        Ok(o.basis)
    }

    /// Random element of `dom(S)`: smooth, vanishing with its derivative at
    /// every finite endpoint.
    pub fn domain_sample<R: Rng + ?Sized>(&self, rng: &mut R) -> GridFun {
        self.domain_sample_with_image(rng).0
    }

    /// A domain sample `v` together with the exact `S v` (closed form, no
    /// finite differences).
    pub fn domain_sample_with_image<R: Rng + ?Sized>(&self, rng: &mut R) -> (GridFun, GridFun) {
        let mut v = self.space.zeros();
        let mut sv = self.space.zeros();
        for p in &self.parts {
            let (a, b) = p.sample(rng);
            v.0[p.offset..p.offset + p.n].copy_from_slice(&a);
            sv.0[p.offset..p.offset + p.n].copy_from_slice(&b);
        }
        (self.to_frame(&v), self.to_frame(&sv))
    }

    /// Boundary conditions `u(a) = u(b) = 0` on every part (`r x 2r`).
    pub fn dirichlet_bc(&self) -> Mat<C64> {
        let r = self.deficiency_r();
        let mut bc = Mat::zeros(r, 2 * r);
        let mut row = 0;
        for p in &self.parts {
            for k in 0..p.hom_dim() {
                bc[(row, p.trace_offset + k)] = ONE;
                row += 1;
            }
        }
        bc
    }

    /// Resolvent `(S_bc - z)^{-1}` of the self-adjoint realization cut out by
    /// `bc * data(u) = 0`. The result carries the condition number of the
    /// `r x r` boundary system.
    pub fn solve_bvp(&self, bc: MatRef<'_, C64>, z: C64) -> Result<KernelOperator> {
        self.check_z(z)?;
        let r = self.deficiency_r();
        if bc.nrows() != r || bc.ncols() != 2 * r {
            return invalid(format!("boundary matrix must be {r} x {}, got {} x {}", 2 * r, bc.nrows(), bc.ncols()));
        }
        let (h, th) = self.base_homogeneous(z);
        let tp = self.base_trace_rows(z);
        let a = bc * &th;
        // `a` is tiny, not just ill-conditioned, when z is an eigenvalue
        let scale = small::spectral_norm(bc) * small::spectral_norm(th.as_ref());
        let smin = a.singular_values().map_err(|e| Error::Numerical(format!("{e:?}")))?.last().copied().unwrap_or(0.0);
        if smin < 1e-12 * scale {
            return Err(Error::Singular { what: format!("extension resolvent at z = {z}"), condition: scale / smin });
        }
        let (ainv, cond) = small::inverse(a.as_ref(), "boundary system")?;
        let coef = -(&ainv * (bc * &tp));
        let mut k = self.base_dirichlet(z, true).add_low_rank(h.as_ref(), coef.as_ref());
        k.condition = Some(cond);
        Ok(self.op_to_frame(k))
    }

    /// Spectral data of `S_F^{-1}`, computed once.
    pub fn dirichlet_eigen(&self) -> Result<&HermitianEig> {
        if let Some(e) = self.dirichlet.get() {
            return Ok(e);
        }
        let e = hermitian_eig(&self.space, &self.friedrichs_green(ZERO)?)?;
        Ok(self.dirichlet.get_or_init(|| e))
    }

    /// Norm of a finite-difference residual, skipping `BOUNDARY_LAYER`
    /// nodes at every endpoint where the one-sided stencils amplify
    /// the boundary-row quadrature error.
    pub fn residual_norm(&self, r: &GridFun) -> Result<f64> {
        self.check(r)?;
        let base = self.from_frame(r);
        let w = self.space.weights();
        let mut s = 0.0;
        for p in &self.parts {
            for i in BOUNDARY_LAYER..p.n - BOUNDARY_LAYER {
                let k = p.offset + i;
                s += w[k] * base.0[k].norm_sqr();
            }
        }
        Ok(s.sqrt())
    }

    /// `(u, S* u) / (u, u)` for a grid function.
    pub fn rayleigh(&self, u: &GridFun) -> Result<f64> {
        let su = self.adjoint_action(u)?;
        let nu = norm(&self.space, u);
        Ok(inner(&self.space, u, &su)?.re / (nu * nu))
    }
}
