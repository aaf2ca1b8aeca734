//! The `D`-equivariant exact Courant algebroid over `M = D`.
//!
//! `D` acts on `M = D` by right translations, so the fundamental fields
//! `xi_M` are left-invariant and the natural connection is the left
//! Maurer-Cartan form.  Sections are written in the left-invariant frame
//! `(T + T*)D = (d + d*) x D`; frame derivatives `X_a` are carried along as
//! first jets, which is all the bracket needs.
//!
//! With the contraction convention `H(u, v, .) = i_v i_u H` the equivariance
//! condition reads `i_{xi_M} H = +1/2 <xi, dA>`, which fixes
//! `H = kappa <[x, y], z>` with `kappa = -1/2`.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::courant::{self, ClosedThreeForm, GeneralizedSection, LagrangianFrame};
use crate::error::{Error, Result};
use crate::invariant::{Cochain, ValuedCochain};
use crate::liealg::{self, ManinTriple, MatrixGroupModel, QuadraticLieAlgebra, StructureConstants, Subspace};
use crate::linalg;
use crate::poly::{Form, Poly, VectorField};

/// Normalization of the Cartan 3-form making the double model equivariant.
pub const CALIBRATED_KAPPA: f64 = -0.5;
pub const EQUIVARIANCE_TOL: f64 = 1e-9;

#[derive(Clone, Debug)]
pub struct DoubleModel {
    pub triple: ManinTriple,
    pub group: MatrixGroupModel,
    pub kappa: f64,
}

impl DoubleModel {
    pub fn new(triple: ManinTriple, group: MatrixGroupModel, kappa: f64) -> Result<Self> {
        let (a, b) = (triple.algebra(), group.algebra());
        if a.dim() != b.dim() || linalg::max_abs(&(a.pairing() - b.pairing())) > 0.0 {
            return Err(Error::Structural("group model and triple describe different algebras".into()));
        }
        Ok(Self { triple, group, kappa })
    }

    /// Semi-abelian double `g + g*` with the calibrated 3-form.
    pub fn semiabelian(g: &StructureConstants, rho: Option<Vec<DMatrix<f64>>>) -> Result<Self> {
        let triple = liealg::build_semiabelian_double(g)?;
        let group = MatrixGroupModel::semiabelian(g, &triple, rho)?;
        let mut model = Self::new(triple, group, 0.0)?;
        model.kappa = calibrate_kappa(&model, &PrincipalConnection::maurer_cartan(model.dim()))?;
        Ok(model)
    }

    pub fn algebra(&self) -> &QuadraticLieAlgebra {
        self.triple.algebra()
    }

    pub fn dim(&self) -> usize {
        self.algebra().dim()
    }

    /// `H(x, y, z) = kappa <[x, y], z>` in the left-invariant frame.
    pub fn h(&self, x: &DVector<f64>, y: &DVector<f64>, z: &DVector<f64>) -> f64 {
        let alg = self.algebra();
        self.kappa * alg.pair(&alg.bracket(x, y), z)
    }

    pub fn h_cochain(&self) -> Cochain {
        let alg = self.algebra();
        Cochain::from_alternating(self.dim(), 3, |i| {
            self.kappa * alg.pair(&alg.bracket(&alg.basis(i[0]), &alg.basis(i[1])), &alg.basis(i[2]))
        })
    }

    /// `H` is closed: the Cartan 3-form is a CE cocycle.
    pub fn closure_residual(&self) -> f64 {
        self.h_cochain().d(self.algebra()).max_abs()
    }
}

/// A section near a point of `D`: values and left-frame derivatives.
#[derive(Clone, Debug, PartialEq)]
pub struct Jet {
    pub u: DVector<f64>,
    pub alpha: DVector<f64>,
    /// `du[(c, a)] = X_a u^c`
    pub du: DMatrix<f64>,
    /// `dalpha[(b, a)] = X_a alpha_b`
    pub dalpha: DMatrix<f64>,
}

impl Jet {
    pub fn constant(u: DVector<f64>, alpha: DVector<f64>) -> Self {
        let n = u.len();
        Self { u, alpha, du: DMatrix::zeros(n, n), dalpha: DMatrix::zeros(n, n) }
    }

    pub fn value(&self) -> DVector<f64> {
        let n = self.u.len();
        let mut v = DVector::zeros(2 * n);
        v.rows_mut(0, n).copy_from(&self.u);
        v.rows_mut(n, n).copy_from(&self.alpha);
        v
    }

    pub fn scale(&self, s: f64) -> Self {
        Self { u: &self.u * s, alpha: &self.alpha * s, du: &self.du * s, dalpha: &self.dalpha * s }
    }
}

pub fn jet_pairing(s: &Jet, t: &Jet) -> f64 {
    s.alpha.dot(&t.u) + t.alpha.dot(&s.u)
}

/// Value of the twisted bracket `[s, t]` at the point carrying the jets.
pub fn jet_bracket(model: &DoubleModel, s: &Jet, t: &Jet) -> (DVector<f64>, DVector<f64>) {
    let alg = model.algebra();
    let n = alg.dim();
    let (u, v) = (&s.u, &t.u);
    let (a, b) = (&s.alpha, &t.alpha);
    let uv = alg.bracket(u, v);
    let vec = &t.du * u - &s.du * v + &uv;
    let mut form = &t.dalpha * u + s.du.transpose() * b;
    for bi in 0..n {
        let eb = alg.basis(bi);
        let ub = alg.bracket(u, &eb);
        let vb = alg.bracket(v, &eb);
        // -u^a b_c c_ab^c and the constant part of -i_v d(alpha)
        form[bi] += -b.dot(&ub) + a.dot(&vb);
        // -v^a (X_a alpha_b - X_b alpha_a)
        form[bi] -= (0..n).map(|ai| v[ai] * (s.dalpha[(bi, ai)] - s.dalpha[(ai, bi)])).sum::<f64>();
        form[bi] += model.h(u, v, &eb);
    }
    (vec, form)
}

/// A left-invariant connection `A: d -> k` for the right action of a subgroup
/// `K` with Lie algebra `k`.
#[derive(Clone, Debug)]
pub struct PrincipalConnection {
    pub structure: Subspace,
    pub a: DMatrix<f64>,
}

impl PrincipalConnection {
    /// The left Maurer-Cartan form of `D` itself.
    pub fn maurer_cartan(n: usize) -> Self {
        Self { structure: Subspace::coordinate(n, 0..n), a: DMatrix::identity(n, n) }
    }

    /// Projection onto `k` along a complement.
    pub fn projection(k: &Subspace, complement: &Subspace) -> Result<Self> {
        let split = linalg::hcat(&k.basis, &complement.basis);
        let inv = linalg::inverse(&split)?;
        let kk = k.dim();
        let a = &k.basis * inv.rows(0, kk);
        Ok(Self { structure: k.clone(), a })
    }

    pub fn as_cochain(&self) -> ValuedCochain {
        ValuedCochain::linear(&self.a)
    }

    /// `max |A(xi_M) - xi|` over a basis of `k`.
    pub fn vertical_residual(&self) -> f64 {
        (0..self.structure.dim())
            .map(|i| {
                let xi = self.structure.vector(i);
                linalg::max_abs_vec(&(&self.a * &xi - xi))
            })
            .fold(0.0, f64::max)
    }

    /// `max |A([xi, x]) - [xi, A x]|`: invariance under the right `K`-action.
    pub fn equivariance_residual(&self, alg: &QuadraticLieAlgebra) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.structure.dim() {
            let xi = self.structure.vector(i);
            for j in 0..alg.dim() {
                let x = alg.basis(j);
                let lhs = &self.a * alg.bracket(&xi, &x);
                let rhs = alg.bracket(&xi, &(&self.a * &x));
                worst = worst.max(linalg::max_abs_vec(&(lhs - rhs)));
            }
        }
        worst
    }

    /// `F = dA + 1/2 [A, A]`.
    pub fn curvature(&self, alg: &QuadraticLieAlgebra) -> ValuedCochain {
        let a = self.as_cochain();
        a.d(alg).add(&a.bracket_wedge(&a, alg).scale(0.5))
    }
}

/// `rho(xi) = (xi_M, 1/2 <xi, A>)` as constant jets, one per basis vector of `k`.
pub fn rho_from_connection(model: &DoubleModel, conn: &PrincipalConnection) -> Vec<Jet> {
    let b = model.algebra().pairing();
    (0..conn.structure.dim())
        .map(|i| {
            let xi = conn.structure.vector(i);
            let alpha = conn.a.transpose() * (b * &xi) * 0.5;
            Jet::constant(xi, alpha)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct EquivarianceReport {
    /// 1-form part of `[rho(xi), (u, 0)]`, which must vanish.
    pub splitting_invariance: f64,
    /// `i_{xi_M} H - 1/2 <xi, dA>`.
    pub hequiv: f64,
    /// `<rho(xi), rho(eta)> - <xi, eta>`.
    pub pairing: f64,
    /// `rho([xi, eta]) - [rho(xi), rho(eta)]`.
    pub bracket_morphism: f64,
}

impl EquivarianceReport {
    pub fn max(&self) -> f64 {
        self.splitting_invariance.max(self.hequiv).max(self.pairing).max(self.bracket_morphism)
    }
}

/// All equivariance residuals; `probes` are extra vector-field jets `(u, du)`
/// at which the splitting invariance is tested besides the frame fields.
pub fn check_equivariance(model: &DoubleModel, conn: &PrincipalConnection, probes: &[Jet]) -> EquivarianceReport {
    let alg = model.algebra();
    let n = alg.dim();
    let rho = rho_from_connection(model, conn);
    let mut rep = EquivarianceReport::default();

    let frame: Vec<Jet> = (0..n).map(|i| Jet::constant(alg.basis(i), DVector::zeros(n))).collect();
    for r in &rho {
        for p in frame.iter().chain(probes.iter()) {
            let probe = Jet { alpha: DVector::zeros(n), dalpha: DMatrix::zeros(n, n), ..p.clone() };
            let (_, form) = jet_bracket(model, r, &probe);
            rep.splitting_invariance = rep.splitting_invariance.max(linalg::max_abs_vec(&form));
        }
    }

    let h = model.h_cochain();
    let da = conn.as_cochain().d(alg);
    for i in 0..conn.structure.dim() {
        let xi = conn.structure.vector(i);
        let lhs = h.interior(&xi);
        let rhs = da.pair_with(&xi, alg).scale(0.5);
        rep.hequiv = rep.hequiv.max(lhs.sub(&rhs).max_abs());
    }

    let k = conn.structure.dim();
    for i in 0..k {
        for j in 0..k {
            let (xi, eta) = (conn.structure.vector(i), conn.structure.vector(j));
            rep.pairing = rep.pairing.max((jet_pairing(&rho[i], &rho[j]) - alg.pair(&xi, &eta)).abs());
            let (bu, ba) = jet_bracket(model, &rho[i], &rho[j]);
            let br = alg.bracket(&xi, &eta);
            let coords = linalg::coords_in(&conn.structure.basis, &br);
            let expected = rho.iter().zip(coords.iter()).fold(Jet::constant(DVector::zeros(n), DVector::zeros(n)), |acc, (r, c)| {
                Jet::constant(acc.u + &r.u * *c, acc.alpha + &r.alpha * *c)
            });
            let defect = (bu - &expected.u).abs().max().max((ba - &expected.alpha).abs().max());
            rep.bracket_morphism = rep.bracket_morphism.max(defect);
        }
    }
    rep
}

/// Normalization of the Cartan 3-form minimizing the equivariance residual.
pub fn calibrate_kappa(model: &DoubleModel, conn: &PrincipalConnection) -> Result<f64> {
    if model.algebra().is_abelian() {
        return Ok(0.0);
    }
    let mut trial = model.clone();
    let mut residual = |k: f64| {
        trial.kappa = k;
        check_equivariance(&trial, conn, &[]).max()
    };
    let (mut best, mut best_r) = (0.0, f64::INFINITY);
    for i in 0..=400 {
        let k = -2.0 + 0.01 * i as f64;
        let r = residual(k);
        if r < best_r {
            best = k;
            best_r = r;
        }
    }
    // golden-section refinement on the bracketing cell
    let (mut lo, mut hi) = (best - 0.01, best + 0.01);
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    while hi - lo > 1e-15 {
        let a = hi - phi * (hi - lo);
        let b = lo + phi * (hi - lo);
        if residual(a) <= residual(b) {
            hi = b;
        } else {
            lo = a;
        }
    }
    let mid = 0.5 * (lo + hi);
    let (kappa, r) = if residual(mid) <= best_r { (mid, residual(mid)) } else { (best, best_r) };
    if r > EQUIVARIANCE_TOL {
        return Err(Error::Model(format!("no normalization makes the double equivariant (best residual {r:e})")));
    }
    Ok(kappa)
}

#[derive(Clone, Debug)]
pub struct ChernSimonsReport {
    pub cs: Cochain,
    /// `max_xi |i_{xi_M} cs - <xi, dA>|`
    pub interior: f64,
    /// `|d cs - <F, F>|`
    pub pontryagin: f64,
    /// `|<F, F>|`
    pub pontryagin_form: f64,
}

/// `cs = <A, dA> + 1/3 <[A, A], A>` for an invariant connection, with its identities.
pub fn chern_simons(alg: &QuadraticLieAlgebra, conn: &PrincipalConnection) -> ChernSimonsReport {
    let a = conn.as_cochain();
    let da = a.d(alg);
    let cs = a.pair_wedge(&da, alg).add(&a.bracket_wedge(&a, alg).pair_wedge(&a, alg).scale(1.0 / 3.0));
    let f = conn.curvature(alg);
    let ff = f.pair_wedge(&f, alg);
    let pontryagin = cs.d(alg).sub(&ff).max_abs();
    let mut interior: f64 = 0.0;
    for i in 0..conn.structure.dim() {
        let xi = conn.structure.vector(i);
        interior = interior.max(cs.interior(&xi).sub(&da.pair_with(&xi, alg)).max_abs());
    }
    ChernSimonsReport { cs, interior, pontryagin, pontryagin_form: ff.max_abs() }
}

/// An algebra-valued 1-form on a polynomial chart.
#[derive(Clone, Debug)]
pub struct PolyConnection {
    pub values: QuadraticLieAlgebra,
    pub comps: Vec<Form>,
}

impl PolyConnection {
    pub fn new(values: QuadraticLieAlgebra, comps: Vec<Form>) -> Result<Self> {
        if comps.len() != values.dim() || comps.iter().any(|c| c.degree() != 1 || c.dim() != comps[0].dim()) {
            return Err(Error::Structural("one 1-form per basis element on one chart is required".into()));
        }
        Ok(Self { values, comps })
    }

    fn pair_wedge(&self, a: &[Form], b: &[Form]) -> Form {
        let bm = self.values.pairing();
        let n = a[0].dim();
        let mut acc = Form::zero(n, a[0].degree() + b[0].degree());
        for i in 0..a.len() {
            for j in 0..b.len() {
                if bm[(i, j)] != 0.0 {
                    acc = acc.add(&a[i].wedge(&b[j]).scale(bm[(i, j)]));
                }
            }
        }
        acc
    }

    fn bracket_wedge(&self, a: &[Form], b: &[Form]) -> Vec<Form> {
        let d = self.values.dim();
        let n = a[0].dim();
        let mut out = vec![Form::zero(n, a[0].degree() + b[0].degree()); d];
        for i in 0..d {
            for j in 0..d {
                let w = a[i].wedge(&b[j]);
                for (m, o) in out.iter_mut().enumerate() {
                    let c = self.values.c(i, j, m);
                    if c != 0.0 {
                        *o = o.add(&w.scale(c));
                    }
                }
            }
        }
        out
    }

    pub fn curvature(&self) -> Vec<Form> {
        let br = self.bracket_wedge(&self.comps, &self.comps);
        self.comps.iter().zip(&br).map(|(a, b)| a.d().add(&b.scale(0.5))).collect()
    }

    pub fn chern_simons(&self) -> Form {
        let da: Vec<Form> = self.comps.iter().map(|a| a.d()).collect();
        let aa = self.bracket_wedge(&self.comps, &self.comps);
        self.pair_wedge(&self.comps, &da).add(&self.pair_wedge(&aa, &self.comps).scale(1.0 / 3.0))
    }

    pub fn pontryagin(&self) -> Form {
        let f = self.curvature();
        self.pair_wedge(&f, &f)
    }

    /// Largest coefficient of `d cs - <F, F>`.
    pub fn transgression_residual(&self) -> f64 {
        self.chern_simons().d().sub(&self.pontryagin()).max_abs_coef()
    }
}

/// The reconstruction `E = p*E~ + d` over `M = D` from a quadratic Lie
/// algebra `E~` viewed as a transitive CA over a point.
///
/// Exactness forces `<,>_E~ = -<,>_d`, so `D` is the group of `E~` with the
/// negated pairing; `group` must model exactly that algebra.
#[derive(Clone, Debug)]
pub struct TransitiveModel {
    pub tilde: QuadraticLieAlgebra,
    pub group: MatrixGroupModel,
}

pub fn transitive_reconstruct(tilde: &QuadraticLieAlgebra, base_dim: usize, group: MatrixGroupModel) -> Result<TransitiveModel> {
    if base_dim != 0 {
        return Err(Error::OutOfScope("transitive reconstruction is implemented over a point base only".into()));
    }
    let d = group.algebra();
    if d.dim() != tilde.dim() {
        return Err(Error::Structural("E~ and d must have equal dimension".into()));
    }
    let n = d.dim();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                worst = worst.max((d.c(i, j, k) - tilde.c(i, j, k)).abs());
            }
        }
    }
    worst = worst.max(linalg::max_abs(&(d.pairing() + tilde.pairing())));
    if worst > 1e-12 {
        return Err(Error::InvalidInput(format!(
            "the group must carry the bracket of E~ and the negated pairing (defect {worst:e})"
        )));
    }
    Ok(TransitiveModel { tilde: tilde.clone(), group })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct TransitiveReport {
    pub algebra: f64,
    pub anchor_morphism: f64,
    pub kernel_isotropy: f64,
    pub min_anchor_rank: usize,
}

impl TransitiveModel {
    pub fn dim(&self) -> usize {
        self.tilde.dim()
    }

    /// Anchor at `m` in the left frame on constant sections `(s, xi)`: `s -> Y_{-s}`, `xi -> xi_M`.
    pub fn anchor(&self, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let n = self.dim();
        let ad_inv = self.group.adjoint_matrix(&linalg::inverse(m)?)?;
        Ok(linalg::hcat(&(-ad_inv), &DMatrix::identity(n, n)))
    }

    /// `E~ + d` as one quadratic Lie algebra (bracket on constant sections).
    pub fn fiber_algebra(&self) -> QuadraticLieAlgebra {
        let n = self.dim();
        let mut c = vec![vec![vec![0.0; 2 * n]; 2 * n]; 2 * n];
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    c[i][j][k] = self.tilde.c(i, j, k);
                    c[n + i][n + j][n + k] = self.group.algebra().c(i, j, k);
                }
            }
        }
        let mut b = DMatrix::zeros(2 * n, 2 * n);
        b.view_mut((0, 0), (n, n)).copy_from(self.tilde.pairing());
        b.view_mut((n, n), (n, n)).copy_from(self.group.algebra().pairing());
        QuadraticLieAlgebra::new(&c, b).expect("direct sum of valid algebras")
    }

    /// Anchor as a vector-field jet at `m` for the constant section `x`.
    fn anchor_jet(&self, m: &DMatrix<f64>, x: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let n = self.dim();
        let d = self.group.algebra();
        let ad_inv = self.group.adjoint_matrix(&linalg::inverse(m)?)?;
        let y = -(&ad_inv * x.rows(0, n));
        let mut dy = DMatrix::zeros(n, n);
        for a in 0..n {
            dy.set_column(a, &(-d.bracket(&d.basis(a), &y)));
        }
        Ok((y + x.rows(n, n), dy))
    }

    /// Axiom checks at the sample points (constant sections span every fiber,
    /// so the remaining axioms follow from Leibniz).
    pub fn check(&self, points: &[DMatrix<f64>]) -> Result<TransitiveReport> {
        let n = self.dim();
        let fiber = self.fiber_algebra();
        let v = fiber.validate();
        let mut rep = TransitiveReport {
            algebra: v.antisymmetry.max(v.jacobi).max(v.ad_invariance),
            min_anchor_rank: usize::MAX,
            ..Default::default()
        };
        let d = self.group.algebra();
        for m in points {
            let anchor = self.anchor(m)?;
            rep.min_anchor_rank = rep.min_anchor_rank.min(linalg::rank(&anchor, 1e-10));
            let ker = linalg::null_space(&anchor, 1e-10);
            rep.kernel_isotropy = rep.kernel_isotropy.max(linalg::max_abs(&(ker.transpose() * fiber.pairing() * &ker)));
            for i in 0..2 * n {
                for j in 0..2 * n {
                    let (x, y) = (fiber.basis(i), fiber.basis(j));
                    let (ax, dax) = self.anchor_jet(m, &x)?;
                    let (ay, day) = self.anchor_jet(m, &y)?;
                    let lie = &day * &ax - &dax * &ay + d.bracket(&ax, &ay);
                    let (abr, _) = self.anchor_jet(m, &fiber.bracket(&x, &y))?;
                    rep.anchor_morphism = rep.anchor_morphism.max(linalg::max_abs_vec(&(lie - abr)));
                }
            }
        }
        Ok(rep)
    }

    /// `E_{/D}`: invariant sections orthogonal to `rho(d) = 0 + d`.
    pub fn reduce_by_d(&self) -> Result<QuadraticLieAlgebra> {
        let n = self.dim();
        let fiber = self.fiber_algebra();
        let rho = linalg::hcat(&DMatrix::zeros(n, n), &DMatrix::identity(n, n)).transpose();
        let perp = linalg::null_space(&(rho.transpose() * fiber.pairing()), 1e-12);
        // basis matching: pick the invariant sections whose E~ components are canonical
        let top = perp.rows(0, n).into_owned();
        let matched = &perp * linalg::inverse(&top)?;
        reduced_algebra(&fiber, &matched)
    }
}

/// Structure constants and Gram matrix of a subalgebra given by basis columns.
fn reduced_algebra(fiber: &QuadraticLieAlgebra, basis: &DMatrix<f64>) -> Result<QuadraticLieAlgebra> {
    let k = basis.ncols();
    let mut c = vec![vec![vec![0.0; k]; k]; k];
    for i in 0..k {
        for j in 0..k {
            let br = fiber.bracket(&basis.column(i).into_owned(), &basis.column(j).into_owned());
            let co = linalg::coords_in(basis, &br);
            for m in 0..k {
                c[i][j][m] = co[m];
            }
        }
    }
    QuadraticLieAlgebra::new(&c, basis.transpose() * fiber.pairing() * basis)
}

/// Smallest defect `|c_a - c_b| + |B_a - T^t B_b T|` over the sign isomorphisms `T = +-I`.
pub fn isomorphism_defect(a: &QuadraticLieAlgebra, b: &QuadraticLieAlgebra) -> f64 {
    if a.dim() != b.dim() {
        return f64::INFINITY;
    }
    let n = a.dim();
    [1.0, -1.0]
        .into_iter()
        .map(|s| {
            // T = s I maps brackets by c -> s c and pairings by B -> B
            let mut worst: f64 = linalg::max_abs(&(a.pairing() - b.pairing()));
            for i in 0..n {
                for j in 0..n {
                    for k in 0..n {
                        worst = worst.max((a.c(i, j, k) - s * b.c(i, j, k)).abs());
                    }
                }
            }
            worst
        })
        .fold(f64::INFINITY, f64::min)
}

/// The invariant section `S_v` of `rho(d)^perp` at `m`: left-frame values
/// `u = Ad_{m^-1} v`, `alpha = -1/2 B u`, with `X_a u = -[e_a, u]`.
pub fn invariant_section(model: &DoubleModel, m: &DMatrix<f64>, v: &DVector<f64>) -> Result<Jet> {
    let alg = model.algebra();
    let n = alg.dim();
    let u = model.group.adjoint(&linalg::inverse(m)?, v)?;
    let mut du = DMatrix::zeros(n, n);
    for a in 0..n {
        du.set_column(a, &(-alg.bracket(&alg.basis(a), &u)));
    }
    let b = alg.pairing();
    Ok(Jet { alpha: -(b * &u) * 0.5, dalpha: -(b * &du) * 0.5, u, du })
}

/// `E_{/D}` of the double model read off at the point `m` in the basis
/// `v -> -S_v`; it is `(d, [,], -<,>)`.
pub fn reduce_double_by_d(model: &DoubleModel, m: &DMatrix<f64>) -> Result<QuadraticLieAlgebra> {
    let alg = model.algebra();
    let n = alg.dim();
    let secs: Vec<Jet> = (0..n).map(|i| invariant_section(model, m, &alg.basis(i)).map(|s| s.scale(-1.0))).collect::<Result<_>>()?;
    let ad_m = model.group.adjoint_matrix(m)?;
    let mut c = vec![vec![vec![0.0; n]; n]; n];
    let mut gram = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            gram[(i, j)] = jet_pairing(&secs[i], &secs[j]);
            let (u, _) = jet_bracket(model, &secs[i], &secs[j]);
            // -S_v has vector part -Ad_{m^-1} v
            let v = -(&ad_m * u);
            for k in 0..n {
                c[i][j][k] = v[k];
            }
        }
    }
    QuadraticLieAlgebra::new(&c, gram)
}

/// `H_L(s_i, s_j, s_k) = <[s_i, s_j], s_k>` for `L = p_D^* L_D` at `m`, in the
/// basis `-S_v`, `v` running over the columns of `l_d`.
pub fn h_l_on_double(model: &DoubleModel, m: &DMatrix<f64>, l_d: &Subspace) -> Result<Vec<f64>> {
    let k = l_d.dim();
    let secs: Vec<Jet> = (0..k).map(|i| invariant_section(model, m, &l_d.vector(i)).map(|s| s.scale(-1.0))).collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(k * k * k);
    for i in 0..k {
        for j in 0..k {
            let (u, a) = jet_bracket(model, &secs[i], &secs[j]);
            let br = Jet::constant(u, a);
            for s in &secs {
                out.push(jet_pairing(&br, s));
            }
        }
    }
    Ok(out)
}

/// `H_{L_D}(u, v, w) = <[u, v], w>_{E/D} = -<[u, v], w>_d` on a basis of `l_d`.
pub fn h_l_d(alg: &QuadraticLieAlgebra, l_d: &Subspace) -> Vec<f64> {
    let k = l_d.dim();
    let mut out = Vec::with_capacity(k * k * k);
    for i in 0..k {
        for j in 0..k {
            let br = alg.bracket(&l_d.vector(i), &l_d.vector(j));
            for m in 0..k {
                out.push(-alg.pair(&br, &l_d.vector(m)));
            }
        }
    }
    out
}

/// The `H^3(M/G)` action on one abelian instance: `D = R^{2n}` acting on
/// itself, `G = span(e*)`, `M/G = R^n` with coordinates `x`.  Twisting the
/// bracket on `E = (T + T*)R^{2n}` by `p* gamma` must change the curvature of
/// the `g'`-induced splitting of `E_{/G}` by exactly `gamma`; returns the
/// largest coefficient of the defect.
pub fn gamma_shift_check(gamma: &Form) -> Result<f64> {
    if gamma.degree() != 3 {
        return Err(Error::InvalidInput("gamma must be a 3-form".into()));
    }
    let n = gamma.dim();
    if gamma.d().max_abs_coef() > 1e-12 {
        return Err(Error::InvalidInput("gamma is not closed".into()));
    }
    let big = 2 * n;
    let proj: Vec<Poly> = (0..n).map(|i| Poly::var(big, i)).collect();
    let pulled = ClosedThreeForm::new(gamma.pullback(&proj))?;
    // S_{e_i} = (d/dx_i, -1/2 dy_i)
    let frame = LagrangianFrame::new(
        (0..n)
            .map(|i| GeneralizedSection {
                u: VectorField::coordinate(big, i),
                alpha: Form::basic(big, &[n + i], -0.5),
            })
            .collect(),
    )?;
    let pts = crate::sampling::halton_box(&crate::sampling::cube(big, 1.0), 16, 0);
    let before = courant::noninvolutivity(&frame, &ClosedThreeForm::zero(big), &pts)?;
    let after = courant::noninvolutivity(&frame, &pulled, &pts)?;
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                let expected = gamma.component(&[i, j, k]).compose(&proj);
                let defect = after.h_l[i][j][k].sub(&before.h_l[i][j][k]).sub(&expected);
                worst = worst.max(defect.max_abs_coef());
            }
        }
    }
    Ok(worst)
}
