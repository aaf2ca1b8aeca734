//! The exact Courant algebroid `(T + T*)U` on a coordinate chart `U` with
//! bracket twisted by a closed 3-form:
//!
//! `[(u, a), (v, b)] = ([u, v], L_u b - i_v da + H(u, v, .))`
//!
//! where `H(u, v, .) = i_v i_u H`.  Sections have polynomial coefficients so
//! the axioms, curvature identities and Dirac conditions are checked exactly.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg;
use crate::poly::{Form, Poly, VectorField};

/// A coordinate chart with a sampling box.
#[derive(Clone, Debug, PartialEq)]
pub struct Chart {
    pub dim: usize,
    pub bounds: Vec<(f64, f64)>,
}

impl Chart {
    pub fn new(bounds: Vec<(f64, f64)>) -> Result<Self> {
        if bounds.is_empty() {
            return Err(Error::InvalidInput("chart dimension must be at least 1".into()));
        }
        if bounds.iter().any(|(lo, hi)| !(lo <= hi)) {
            return Err(Error::InvalidInput("chart box is empty".into()));
        }
        Ok(Self { dim: bounds.len(), bounds })
    }

    pub fn cube(dim: usize, a: f64) -> Self {
        Self { dim, bounds: vec![(-a, a); dim] }
    }
}

/// A section `(u, alpha)` of `T + T*`.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneralizedSection {
    pub u: VectorField,
    pub alpha: Form,
}

impl GeneralizedSection {
    pub fn new(u: VectorField, alpha: Form) -> Result<Self> {
        if alpha.degree() != 1 || alpha.dim() != u.dim() {
            return Err(Error::Structural("section needs a vector field and a 1-form on one chart".into()));
        }
        Ok(Self { u, alpha })
    }

    pub fn zero(n: usize) -> Self {
        Self { u: VectorField::zero(n), alpha: Form::zero(n, 1) }
    }

    pub fn vector(u: VectorField) -> Self {
        let n = u.dim();
        Self { u, alpha: Form::zero(n, 1) }
    }

    pub fn covector(alpha: Form) -> Self {
        Self { u: VectorField::zero(alpha.dim()), alpha }
    }

    pub fn dim(&self) -> usize {
        self.u.dim()
    }

    pub fn add(&self, o: &Self) -> Self {
        Self { u: self.u.add(&o.u), alpha: self.alpha.add(&o.alpha) }
    }

    pub fn sub(&self, o: &Self) -> Self {
        Self { u: self.u.sub(&o.u), alpha: self.alpha.sub(&o.alpha) }
    }

    pub fn scale_poly(&self, f: &Poly) -> Self {
        Self { u: self.u.scale_poly(f), alpha: self.alpha.mul_poly(f) }
    }

    /// `(u(x), alpha(x))` as one vector of length `2n`.
    pub fn eval(&self, x: &[f64]) -> DVector<f64> {
        let n = self.dim();
        let mut out = DVector::zeros(2 * n);
        for (i, c) in self.u.comps.iter().enumerate() {
            out[i] = c.eval(x);
        }
        for i in 0..n {
            out[n + i] = self.alpha.component(&[i]).eval(x);
        }
        out
    }

    pub fn max_abs_at(&self, x: &[f64]) -> f64 {
        linalg::max_abs_vec(&self.eval(x))
    }

    pub fn max_abs_coef(&self) -> f64 {
        self.u.max_abs_coef().max(self.alpha.max_abs_coef())
    }
}

/// A 3-form with `dH = 0` verified on construction.
#[derive(Clone, Debug, PartialEq)]
pub struct ClosedThreeForm {
    h: Form,
    pub closure_checked: bool,
}

impl ClosedThreeForm {
    pub fn new(h: Form) -> Result<Self> {
        if h.degree() != 3 {
            return Err(Error::InvalidInput(format!("expected a 3-form, got degree {}", h.degree())));
        }
        let dh = h.d();
        if dh.max_abs_coef() > 1e-12 {
            return Err(Error::InvalidInput(format!("3-form is not closed (|dH| = {:e})", dh.max_abs_coef())));
        }
        Ok(Self { h, closure_checked: true })
    }

    /// Skip the closure check; used to demonstrate the Jacobi anomaly.
    pub fn new_unchecked(h: Form) -> Self {
        Self { h, closure_checked: false }
    }

    pub fn zero(n: usize) -> Self {
        Self { h: Form::zero(n, 3), closure_checked: true }
    }

    pub fn form(&self) -> &Form {
        &self.h
    }

    pub fn dim(&self) -> usize {
        self.h.dim()
    }

    /// `H(u, v, .) = i_v i_u H` (zero on charts of dimension < 3).
    pub fn contract2(&self, u: &VectorField, v: &VectorField) -> Form {
        if self.h.dim() < 3 {
            return Form::zero(u.dim(), 1);
        }
        self.h.interior(u).interior(v)
    }
}

fn check_same_chart(s: &GeneralizedSection, t: &GeneralizedSection) -> Result<()> {
    if s.dim() != t.dim() {
        return Err(Error::Structural(format!("sections live on charts of dimension {} and {}", s.dim(), t.dim())));
    }
    Ok(())
}

/// `<(u, a), (v, b)> = a(v) + b(u)`.
pub fn pairing(s: &GeneralizedSection, t: &GeneralizedSection) -> Result<Poly> {
    check_same_chart(s, t)?;
    Ok(pairing_unchecked(s, t))
}

fn pairing_unchecked(s: &GeneralizedSection, t: &GeneralizedSection) -> Poly {
    let n = s.dim();
    (0..n).fold(Poly::zero(n), |acc, i| {
        acc.add(&s.alpha.component(&[i]).mul(&t.u.comps[i]))
            .add(&t.alpha.component(&[i]).mul(&s.u.comps[i]))
    })
}

/// Bracket of the standard (untwisted) Courant algebroid.
pub fn std_bracket(s: &GeneralizedSection, t: &GeneralizedSection) -> Result<GeneralizedSection> {
    check_same_chart(s, t)?;
    Ok(bracket_with(s, t, None))
}

/// Bracket twisted by a closed 3-form.
pub fn twisted_bracket(s: &GeneralizedSection, t: &GeneralizedSection, h: &ClosedThreeForm) -> Result<GeneralizedSection> {
    check_same_chart(s, t)?;
    if !h.closure_checked {
        return Err(Error::InvalidInput("3-form closure was not verified".into()));
    }
    if h.dim() != s.dim() {
        return Err(Error::Structural("3-form lives on a different chart".into()));
    }
    Ok(bracket_with(s, t, Some(h)))
}

fn bracket_with(s: &GeneralizedSection, t: &GeneralizedSection, h: Option<&ClosedThreeForm>) -> GeneralizedSection {
    let u = s.u.lie_bracket(&t.u);
    let mut alpha = t.alpha.lie_derivative(&s.u).sub(&s.alpha.d().interior(&t.u));
    if let Some(h) = h {
        alpha = alpha.add(&h.contract2(&s.u, &t.u));
    }
    GeneralizedSection { u, alpha }
}

/// `a^t(xi) = (0, xi)` for a 1-form `xi`.
pub fn anchor_transpose(xi: Form) -> GeneralizedSection {
    GeneralizedSection::covector(xi)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct AxiomResiduals {
    pub jacobi: f64,
    pub anchor: f64,
    pub leibniz: f64,
    pub invariance: f64,
    pub symmetric_part: f64,
}

impl AxiomResiduals {
    pub fn max(&self) -> f64 {
        [self.jacobi, self.anchor, self.leibniz, self.invariance, self.symmetric_part]
            .into_iter()
            .fold(0.0, f64::max)
    }
}

fn max_over(points: &[Vec<f64>], f: impl Fn(&[f64]) -> f64) -> f64 {
    points.iter().map(|p| f(p)).fold(0.0, f64::max)
}

/// Residuals of the five Courant algebroid axioms at the sample points.  The
/// 3-form may be unchecked (non-closed) to expose the Jacobi anomaly.
pub fn axiom_residuals(
    h: &ClosedThreeForm,
    s: &GeneralizedSection,
    t: &GeneralizedSection,
    u: &GeneralizedSection,
    f: &Poly,
    points: &[Vec<f64>],
) -> Result<AxiomResiduals> {
    check_same_chart(s, t)?;
    check_same_chart(s, u)?;
    if h.dim() != s.dim() || f.nvars() != s.dim() {
        return Err(Error::Structural("axiom inputs live on different charts".into()));
    }
    let br = |a: &GeneralizedSection, b: &GeneralizedSection| bracket_with(a, b, Some(h));

    let st = br(s, t);
    let jac = br(s, &br(t, u)).sub(&br(&st, u)).sub(&br(t, &br(s, u)));

    let anchor = st.u.sub(&s.u.lie_bracket(&t.u));

    let ft = t.scale_poly(f);
    let leib = br(s, &ft).sub(&st.scale_poly(f)).sub(&t.scale_poly(&s.u.apply(f)));

    let tu = pairing_unchecked(t, u);
    let inv = s.u.apply(&tu).sub(&pairing_unchecked(&st, u)).sub(&pairing_unchecked(t, &br(s, u)));

    let ss = br(s, s);
    let half_d = Form::function(pairing_unchecked(s, s)).d().scale(0.5);
    let sym = ss.sub(&anchor_transpose(half_d));

    Ok(AxiomResiduals {
        jacobi: max_over(points, |p| jac.max_abs_at(p)),
        anchor: max_over(points, |p| anchor.eval(p).iter().fold(0.0, |a, v| a.max(v.abs()))),
        leibniz: max_over(points, |p| leib.max_abs_at(p)),
        invariance: max_over(points, |p| inv.eval(p).abs()),
        symmetric_part: max_over(points, |p| sym.max_abs_at(p)),
    })
}

/// A frame of a (pointwise) isotropic subbundle.
#[derive(Clone, Debug, PartialEq)]
pub struct LagrangianFrame {
    pub sections: Vec<GeneralizedSection>,
}

impl LagrangianFrame {
    pub fn new(sections: Vec<GeneralizedSection>) -> Result<Self> {
        let n = sections.first().map(|s| s.dim()).ok_or_else(|| Error::InvalidInput("empty frame".into()))?;
        if sections.iter().any(|s| s.dim() != n) {
            return Err(Error::Structural("frame sections on different charts".into()));
        }
        Ok(Self { sections })
    }

    /// `TM`, the frame `(e_i, 0)`.
    pub fn tangent(n: usize) -> Self {
        Self { sections: (0..n).map(|i| GeneralizedSection::vector(VectorField::coordinate(n, i))).collect() }
    }

    /// Graph of a 2-form: `e_i -> (e_i, i_{e_i} omega)`.
    pub fn graph(omega: &Form) -> Result<Self> {
        if omega.degree() != 2 {
            return Err(Error::InvalidInput("graph frame needs a 2-form".into()));
        }
        let n = omega.dim();
        Ok(Self {
            sections: (0..n)
                .map(|i| {
                    let e = VectorField::coordinate(n, i);
                    GeneralizedSection { alpha: omega.interior(&e), u: e }
                })
                .collect(),
        })
    }

    /// Graph of a bilinear form `r` (not necessarily isotropic):
    /// `e_i -> (e_i, sum_j r_ij dx^j)`; with `sign = -1` and the transpose this
    /// gives the orthogonal complement.
    pub fn bilinear_graph(r: &[Vec<Poly>], transpose: bool, sign: f64) -> Self {
        let n = r.len();
        Self {
            sections: (0..n)
                .map(|i| {
                    let alpha = (0..n).fold(Form::zero(n, 1), |acc, j| {
                        let rij = if transpose { &r[j][i] } else { &r[i][j] };
                        acc.add(&Form::term(n, &[j], rij.scale(sign)))
                    });
                    GeneralizedSection { u: VectorField::coordinate(n, i), alpha }
                })
                .collect(),
        }
    }

    pub fn rank(&self) -> usize {
        self.sections.len()
    }

    pub fn dim(&self) -> usize {
        self.sections[0].dim()
    }

    pub fn isotropy_residual(&self, points: &[Vec<f64>]) -> f64 {
        let mut worst: f64 = 0.0;
        for (i, a) in self.sections.iter().enumerate() {
            for b in &self.sections[i..] {
                let p = pairing_unchecked(a, b);
                worst = worst.max(max_over(points, |x| p.eval(x).abs()));
            }
        }
        worst
    }

    /// Pointwise anchor matrix (columns are `a(s_i)(x)`).
    pub fn anchor_matrix(&self, x: &[f64]) -> DMatrix<f64> {
        let cols: Vec<DVector<f64>> = self.sections.iter().map(|s| DVector::from_vec(s.u.eval(x))).collect();
        DMatrix::from_columns(&cols)
    }

    /// `(tau + sigma)(v) = sigma(v) + a^t(i_v tau)`.
    pub fn shift(&self, tau: &Form) -> Result<Self> {
        if tau.degree() != 2 {
            return Err(Error::InvalidInput(format!("shift needs a 2-form, got degree {}", tau.degree())));
        }
        Ok(Self {
            sections: self
                .sections
                .iter()
                .map(|s| GeneralizedSection { u: s.u.clone(), alpha: s.alpha.add(&tau.interior(&s.u)) })
                .collect(),
        })
    }
}

pub const ISOTROPY_TOL: f64 = 1e-10;

/// `H_L[i][j][k] = <[s_i, s_j], s_k>` as exact polynomials.  Under
/// `E/L = L*` the class of `[s_i, s_j]` has coordinates `H_L[i][j][.]`, so the
/// same array is `F_L` in the frame-dual basis.
#[derive(Clone, Debug)]
pub struct NonInvolutivity {
    pub h_l: Vec<Vec<Vec<Poly>>>,
    /// Representatives `[s_i, s_j]` of `F_L(s_i, s_j)` in `E`.
    pub brackets: Vec<Vec<GeneralizedSection>>,
}

impl NonInvolutivity {
    pub fn max_abs_at(&self, x: &[f64]) -> f64 {
        self.h_l.iter().flatten().flatten().fold(0.0, |a, p| a.max(p.eval(x).abs()))
    }

    /// `F_L(s_i, s_j)` in the dual frame of `L*`.
    pub fn f_l(&self, i: usize, j: usize, x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(self.h_l.len(), self.h_l[i][j].iter().map(|p| p.eval(x)))
    }
}

pub fn noninvolutivity(l: &LagrangianFrame, h: &ClosedThreeForm, points: &[Vec<f64>]) -> Result<NonInvolutivity> {
    let iso = l.isotropy_residual(points);
    if iso > ISOTROPY_TOL {
        return Err(Error::InvalidInput(format!("frame is not isotropic (residual {iso:e})")));
    }
    if h.dim() != l.dim() {
        return Err(Error::Structural("3-form and frame on different charts".into()));
    }
    let k = l.rank();
    let brackets: Vec<Vec<GeneralizedSection>> = (0..k)
        .map(|i| (0..k).map(|j| bracket_with(&l.sections[i], &l.sections[j], Some(h))).collect())
        .collect();
    let h_l = (0..k)
        .map(|i| {
            (0..k)
                .map(|j| (0..k).map(|m| pairing_unchecked(&brackets[i][j], &l.sections[m])).collect())
                .collect()
        })
        .collect();
    Ok(NonInvolutivity { h_l, brackets })
}

/// Curvature `H(u, v, w) = <[s(u), s(v)], s(w)>` of a Lagrangian splitting
/// whose anchor is the coordinate frame.  `ambient` is the 3-form twisting the
/// bracket the splitting lives in.
pub fn connection_curvature(sigma: &LagrangianFrame, ambient: &ClosedThreeForm, points: &[Vec<f64>]) -> Result<ClosedThreeForm> {
    let n = sigma.dim();
    if sigma.rank() != n {
        return Err(Error::InvalidInput("a splitting needs one section per coordinate".into()));
    }
    for (i, s) in sigma.sections.iter().enumerate() {
        if s.u != VectorField::coordinate(n, i) {
            return Err(Error::InvalidInput(format!("anchor of section {i} is not the coordinate field")));
        }
    }
    let ni = noninvolutivity(sigma, ambient, points)?;
    let mut h = Form::zero(n, 3);
    for i in 0..n {
        for j in i + 1..n {
            for k in j + 1..n {
                h = h.add(&Form::term(n, &[i, j, k], ni.h_l[i][j][k].clone()));
            }
        }
    }
    ClosedThreeForm::new(h)
}

pub fn shift_splitting(sigma: &LagrangianFrame, tau: &Form) -> Result<LagrangianFrame> {
    sigma.shift(tau)
}

/// An embedded leaf given by a polynomial parametrization `R^m -> R^n`.
#[derive(Clone, Debug)]
pub struct Leaf {
    pub param: Vec<Poly>,
}

impl Leaf {
    /// The coordinate plane `{x_fixed = value}` parametrized by the remaining coordinates.
    pub fn coordinate_slice(n: usize, fixed: &[(usize, f64)]) -> Self {
        let free: Vec<usize> = (0..n).filter(|i| !fixed.iter().any(|(j, _)| j == i)).collect();
        let m = free.len();
        let param = (0..n)
            .map(|i| match fixed.iter().find(|(j, _)| *j == i) {
                Some((_, v)) => Poly::constant(m, *v),
                None => Poly::var(m, free.iter().position(|&f| f == i).unwrap()),
            })
            .collect();
        Self { param }
    }

    pub fn leaf_dim(&self) -> usize {
        self.param[0].nvars()
    }

    pub fn point(&self, y: &[f64]) -> Vec<f64> {
        self.param.iter().map(|p| p.eval(y)).collect()
    }

    pub fn tangents(&self, y: &[f64]) -> DMatrix<f64> {
        let m = self.leaf_dim();
        DMatrix::from_fn(self.param.len(), m, |i, a| self.param[i].deriv(a).eval(y))
    }
}

pub const LEAF_TANGENCY_TOL: f64 = 1e-10;

/// `max |d beta - H|_N|` over leaf sample points; rejects leaves not tangent to `a(L)`.
pub fn dirac_leaf_check(
    l: &LagrangianFrame,
    h: &ClosedThreeForm,
    leaf: &Leaf,
    beta: &Form,
    leaf_points: &[Vec<f64>],
) -> Result<f64> {
    if leaf.param.len() != h.dim() || beta.dim() != leaf.leaf_dim() || beta.degree() != 2 {
        return Err(Error::Structural("leaf, beta and H do not fit together".into()));
    }
    for y in leaf_points {
        let x = leaf.point(y);
        let anchors = l.anchor_matrix(&x);
        let tangents = leaf.tangents(y);
        for a in 0..tangents.ncols() {
            let dist = linalg::distance_from_span(&anchors, &tangents.column(a).into_owned());
            if dist > LEAF_TANGENCY_TOL {
                return Err(Error::InvalidLeaf(format!("leaf tangent {a} leaves a(L) by {dist:e} at {x:?}")));
            }
        }
    }
    let defect = beta.d().sub(&h.form().pullback(&leaf.param));
    Ok(max_over(leaf_points, |y| defect.max_abs_at(y)))
}

/// Whether the flow of `s` preserves the subbundle `R` (with orthogonal
/// complement `R_perp`): `max |<[s, r_i], q_j>|` over frames and points.
pub fn flow_preserves_frame(
    s: &GeneralizedSection,
    r: &LagrangianFrame,
    r_perp: &LagrangianFrame,
    h: &ClosedThreeForm,
    points: &[Vec<f64>],
) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for ri in &r.sections {
        check_same_chart(s, ri)?;
        let b = bracket_with(s, ri, Some(h));
        for q in &r_perp.sections {
            let p = pairing_unchecked(&b, q);
            worst = worst.max(max_over(points, |x| p.eval(x).abs()));
        }
    }
    Ok(worst)
}

/// Random polynomial data for property checks.
pub mod random {
    use super::*;
    use rand::Rng;
    use rand_chacha::ChaCha8Rng;

    pub fn random_poly(rng: &mut ChaCha8Rng, n: usize, deg: u32) -> Poly {
        let mut p = Poly::zero(n);
        for _ in 0..6 {
            let mut e = vec![0u32; n];
            let mut left = rng.gen_range(0..=deg);
            while left > 0 {
                e[rng.gen_range(0..n)] += 1;
                left -= 1;
            }
            p = p.add(&Poly::monomial(n, e, rng.gen_range(-1.0..1.0)));
        }
        p
    }

    pub fn random_section(rng: &mut ChaCha8Rng, n: usize, deg: u32) -> GeneralizedSection {
        let u = VectorField { comps: (0..n).map(|_| random_poly(rng, n, deg)).collect() };
        let alpha = (0..n).fold(Form::zero(n, 1), |acc, i| acc.add(&Form::term(n, &[i], random_poly(rng, n, deg))));
        GeneralizedSection { u, alpha }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::{cube, halton_box};
    use super::random::{random_poly, random_section};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn x(n: usize, i: usize) -> Poly {
        Poly::var(n, i)
    }

    fn e(n: usize, i: usize) -> GeneralizedSection {
        GeneralizedSection::vector(VectorField::coordinate(n, i))
    }

    fn dx(n: usize, i: usize, f: Poly) -> GeneralizedSection {
        GeneralizedSection::covector(Form::term(n, &[i], f))
    }

    fn pts(n: usize) -> Vec<Vec<f64>> {
        halton_box(&cube(n, 1.0), 128, 0)
    }

    #[test]
    fn pairing_examples() {
        let n = 2;
        assert_eq!(pairing(&e(n, 0), &dx(n, 0, Poly::constant(n, 1.0))).unwrap(), Poly::constant(n, 1.0));
        let s = e(n, 0).add(&dx(n, 0, Poly::constant(n, 1.0)));
        assert_eq!(pairing(&s, &s).unwrap(), Poly::constant(n, 2.0));
        // <(x2 e1, dx2), (e2, x1 dx1)> = x1 x2 + 1, oracle: alpha(v) + beta(u) by hand
        let s = GeneralizedSection::vector(VectorField::coordinate(n, 0).scale_poly(&x(n, 1))).add(&dx(n, 1, Poly::constant(n, 1.0)));
        let t = e(n, 1).add(&dx(n, 0, x(n, 0)));
        let expected = x(n, 0).mul(&x(n, 1)).add(&Poly::constant(n, 1.0));
        assert_eq!(pairing(&s, &t).unwrap(), expected);
    }

    #[test]
    fn chart_mismatch_is_structural() {
        assert!(matches!(pairing(&e(2, 0), &e(3, 0)), Err(Error::Structural(_))));
        assert!(std_bracket(&e(2, 0), &e(3, 0)).is_err());
    }

    #[test]
    fn standard_bracket_examples() {
        let n = 2;
        assert_eq!(std_bracket(&e(n, 0), &e(n, 1)).unwrap(), GeneralizedSection::zero(n));
        // L_{e1}(x1 dx2) = dx2
        let r = std_bracket(&e(n, 0), &dx(n, 1, x(n, 0))).unwrap();
        assert_eq!(r, dx(n, 1, Poly::constant(n, 1.0)));
        // [s, s] for s = (e1, x2 dx1) equals (0, dx2) = a^t(d<s,s>/2)
        let s = e(n, 0).add(&dx(n, 0, x(n, 1)));
        let ss = std_bracket(&s, &s).unwrap();
        assert_eq!(ss, dx(n, 1, Poly::constant(n, 1.0)));
        let half = Form::function(pairing(&s, &s).unwrap()).d().scale(0.5);
        assert_eq!(ss, anchor_transpose(half));
    }

    #[test]
    fn twisted_bracket_examples() {
        let n = 3;
        let vol = ClosedThreeForm::new(Form::basic(n, &[0, 1, 2], 1.0)).unwrap();
        assert_eq!(twisted_bracket(&e(n, 0), &e(n, 1), &vol).unwrap(), dx(n, 2, Poly::constant(n, 1.0)));

        // H = d(x1 dx2 ^ dx3) = dx1^dx2^dx3 written through a primitive; [(e1,0),(e3,0)]:
        // oracle: H(e1, e3, .) = -dx2 evaluated by the determinant rule
        let h = ClosedThreeForm::new(Form::term(n, &[1, 2], x(n, 0)).d()).unwrap();
        let b = twisted_bracket(&e(n, 0), &e(n, 2), &h).unwrap();
        let oracle = Form::basic(n, &[0, 1, 2], 1.0).eval_on(&[0.0; 3], &[vec![1.0, 0.0, 0.0], vec![0.0, 0.0, 1.0], vec![0.0, 1.0, 0.0]]);
        assert_eq!(oracle, -1.0);
        assert_eq!(b, dx(n, 1, Poly::constant(n, oracle)));
        let std = std_bracket(&e(n, 0), &e(n, 2)).unwrap();
        assert_eq!(b, std.add(&GeneralizedSection::covector(h.contract2(&VectorField::coordinate(n, 0), &VectorField::coordinate(n, 2)))));

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = random_section(&mut rng, n, 2);
        assert_eq!(twisted_bracket(&s, &s, &h).unwrap(), std_bracket(&s, &s).unwrap());
    }

    #[test]
    fn unclosed_form_is_rejected() {
        let h = Form::term(4, &[1, 2, 3], x(4, 0));
        assert!(ClosedThreeForm::new(h.clone()).is_err());
        let unchecked = ClosedThreeForm::new_unchecked(h);
        assert!(twisted_bracket(&e(4, 0), &e(4, 1), &unchecked).is_err());
    }

    #[test]
    fn twisted_with_zero_equals_standard() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (s, t) = (random_section(&mut rng, 3, 3), random_section(&mut rng, 3, 3));
        assert_eq!(twisted_bracket(&s, &t, &ClosedThreeForm::zero(3)).unwrap(), std_bracket(&s, &t).unwrap());
    }

    #[test]
    fn axioms_hold_for_random_sections() {
        let n = 3;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = pts(n);
        for h in [ClosedThreeForm::zero(n), ClosedThreeForm::new(Form::term(n, &[0, 1], x(n, 2).mul(&x(n, 0))).d()).unwrap()] {
            let (s, t, u) = (random_section(&mut rng, n, 2), random_section(&mut rng, n, 2), random_section(&mut rng, n, 2));
            let f = random_poly(&mut rng, n, 2);
            let r = axiom_residuals(&h, &s, &t, &u, &f, &p).unwrap();
            assert!(r.max() <= 1e-9, "{r:?}");
        }
    }

    #[test]
    fn constant_sections_jacobi_exact() {
        let n = 3;
        let h = ClosedThreeForm::new(Form::basic(n, &[0, 1, 2], 2.5)).unwrap();
        let c = |i: usize, j: usize| e(n, i).add(&dx(n, j, Poly::constant(n, 0.5 + i as f64)));
        let r = axiom_residuals(&h, &c(0, 1), &c(1, 2), &c(2, 0), &Poly::constant(n, 1.0), &pts(n)).unwrap();
        assert_eq!(r.jacobi, 0.0);
    }

    #[test]
    fn nonclosed_form_breaks_jacobi() {
        let n = 4;
        // dH = dx1^dx2^dx3^dx4; the Jacobi anomaly is dH(u, v, w, .)
        let h = ClosedThreeForm::new_unchecked(Form::term(n, &[1, 2, 3], x(n, 0)));
        let r = axiom_residuals(&h, &e(n, 0), &e(n, 1), &e(n, 2), &Poly::constant(n, 1.0), &pts(n)).unwrap();
        let anomaly = h.form().d().interior(&VectorField::coordinate(n, 0)).interior(&VectorField::coordinate(n, 1)).interior(&VectorField::coordinate(n, 2));
        assert_eq!(anomaly.max_abs_coef(), 1.0);
        assert!((r.jacobi - 1.0).abs() < 1e-12, "{r:?}");
    }

    #[test]
    fn antisymmetry_defect_is_exact_differential() {
        let n = 3;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let h = ClosedThreeForm::new(Form::term(n, &[0, 2], x(n, 1).mul(&x(n, 1))).d()).unwrap();
        for _ in 0..5 {
            let (s, t) = (random_section(&mut rng, n, 3), random_section(&mut rng, n, 3));
            let sum = twisted_bracket(&s, &t, &h).unwrap().add(&twisted_bracket(&t, &s, &h).unwrap());
            let defect = sum.sub(&anchor_transpose(Form::function(pairing(&s, &t).unwrap()).d()));
            assert!(pts(n).iter().all(|p| defect.max_abs_at(p) <= 1e-10));
        }
    }

    #[test]
    fn tangent_bundle_noninvolutivity() {
        let n = 3;
        let p = pts(n);
        let ni = noninvolutivity(&LagrangianFrame::tangent(n), &ClosedThreeForm::zero(n), &p).unwrap();
        assert!(p.iter().all(|x| ni.max_abs_at(x) == 0.0));
        let h = ClosedThreeForm::new(Form::term(n, &[0, 1, 2], x(n, 0).add(&Poly::constant(n, 2.0)))).unwrap();
        let ni = noninvolutivity(&LagrangianFrame::tangent(n), &h, &p).unwrap();
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    assert_eq!(ni.h_l[i][j][k], h.form().component(&[i, j, k]));
                }
            }
        }
    }

    #[test]
    fn graph_curvature_is_d_omega() {
        let n = 3;
        let omega = Form::term(n, &[1, 2], x(n, 0));
        let frame = LagrangianFrame::graph(&omega).unwrap();
        let h = connection_curvature(&frame, &ClosedThreeForm::zero(n), &pts(n)).unwrap();
        // frozen sign: curvature of the graph of omega is +d(omega)
        assert_eq!(h.form(), &Form::basic(n, &[0, 1, 2], 1.0));
    }

    #[test]
    fn noninvolutivity_is_tensorial() {
        let n = 3;
        let omega = Form::term(n, &[0, 1], x(n, 2).mul(&x(n, 1))).add(&Form::term(n, &[1, 2], x(n, 0)));
        let frame = LagrangianFrame::graph(&omega).unwrap();
        let f = Poly::var(n, 0).mul(&Poly::var(n, 1)).add(&Poly::constant(n, 1.5));
        let mut scaled = frame.clone();
        scaled.sections[0] = scaled.sections[0].scale_poly(&f);
        let p = pts(n);
        let a = noninvolutivity(&frame, &ClosedThreeForm::zero(n), &p).unwrap();
        let b = noninvolutivity(&scaled, &ClosedThreeForm::zero(n), &p).unwrap();
        for x in &p {
            for (j, k) in [(1, 2), (2, 1)] {
                let lhs = b.h_l[0][j][k].eval(x);
                let rhs = f.eval(x) * a.h_l[0][j][k].eval(x);
                assert!((lhs - rhs).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn non_isotropic_frame_rejected() {
        let n = 2;
        let s = e(n, 0).add(&dx(n, 0, Poly::constant(n, 1.0)));
        let frame = LagrangianFrame::new(vec![s, e(n, 1)]).unwrap();
        assert!(matches!(noninvolutivity(&frame, &ClosedThreeForm::zero(n), &pts(n)), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn shift_law() {
        let n = 3;
        let p = pts(n);
        let tm = LagrangianFrame::tangent(n);
        assert_eq!(shift_splitting(&tm, &Form::zero(n, 2)).unwrap(), tm);
        assert!(shift_splitting(&tm, &Form::term(n, &[0, 1, 2], x(n, 0))).is_err());
        let tau = Form::term(n, &[0, 1], x(n, 2).mul(&x(n, 0)));
        let h0 = ClosedThreeForm::new(Form::basic(n, &[0, 1, 2], 0.7)).unwrap();
        let before = connection_curvature(&tm, &h0, &p).unwrap();
        let after = connection_curvature(&shift_splitting(&tm, &tau).unwrap(), &h0, &p).unwrap();
        let diff = after.form().sub(before.form()).sub(&tau.d());
        assert!(diff.max_abs_coef() <= 1e-12);
    }

    #[test]
    fn non_splitting_rejected() {
        let n = 2;
        let frame = LagrangianFrame::new(vec![e(n, 1), e(n, 0)]).unwrap();
        assert!(matches!(connection_curvature(&frame, &ClosedThreeForm::zero(n), &pts(n)), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn leaf_checks() {
        let n = 3;
        let tm = LagrangianFrame::tangent(n);
        let leaf_pts = halton_box(&cube(2, 1.0), 64, 0);
        let plane = Leaf::coordinate_slice(n, &[(2, 0.0)]);
        let r = dirac_leaf_check(&tm, &ClosedThreeForm::zero(n), &plane, &Form::zero(2, 2), &leaf_pts).unwrap();
        assert_eq!(r, 0.0);
        let vol = ClosedThreeForm::new(Form::basic(n, &[0, 1, 2], 1.0)).unwrap();
        assert_eq!(dirac_leaf_check(&tm, &vol, &plane, &Form::zero(2, 2), &leaf_pts).unwrap(), 0.0);
        let c = 0.3;
        let h = ClosedThreeForm::new(Form::term(n, &[0, 1], x(n, 2)).d()).unwrap();
        let slice = Leaf::coordinate_slice(n, &[(2, c)]);
        let beta = Form::basic(2, &[0, 1], c);
        assert_eq!(dirac_leaf_check(&tm, &h, &slice, &beta, &leaf_pts).unwrap(), 0.0);
        // a frame whose anchor misses e_2 cannot host the plane x3 = 0
        let thin = LagrangianFrame::new(vec![e(n, 0), e(n, 2)]).unwrap();
        assert!(matches!(
            dirac_leaf_check(&thin, &ClosedThreeForm::zero(n), &plane, &Form::zero(2, 2), &leaf_pts),
            Err(Error::InvalidLeaf(_))
        ));
    }

    #[test]
    fn flow_preservation_examples() {
        let n = 3;
        let p = pts(n);
        let tm = LagrangianFrame::tangent(n);
        let s = GeneralizedSection::vector(VectorField::coordinate(n, 1).scale_poly(&x(n, 0)));
        assert_eq!(flow_preserves_frame(&s, &tm, &tm, &ClosedThreeForm::zero(n), &p).unwrap(), 0.0);
        // H = dx1^dx2^dx3, s = (e1, alpha): preserved iff d(alpha) = i_{e1} H = dx2^dx3
        let vol = ClosedThreeForm::new(Form::basic(n, &[0, 1, 2], 1.0)).unwrap();
        let good = e(n, 0).add(&dx(n, 2, x(n, 1)));
        assert_eq!(flow_preserves_frame(&good, &tm, &tm, &vol, &p).unwrap(), 0.0);
        let bad = e(n, 0).add(&dx(n, 2, x(n, 1).scale(-1.0)));
        assert!(flow_preserves_frame(&bad, &tm, &tm, &vol, &p).unwrap() > 1.0);
        // R = graph of a constant metric, u a Killing field (rotation in x1-x2)
        let r: Vec<Vec<Poly>> = (0..n)
            .map(|i| (0..n).map(|j| Poly::constant(n, if i == j { 2.0 } else { 0.0 })).collect())
            .collect();
        let graph = LagrangianFrame::bilinear_graph(&r, false, 1.0);
        let perp = LagrangianFrame::bilinear_graph(&r, true, -1.0);
        let rot = VectorField { comps: vec![x(n, 1).scale(-1.0), x(n, 0), Poly::zero(n)] };
        let killing = GeneralizedSection::vector(rot);
        assert!(flow_preserves_frame(&killing, &graph, &perp, &ClosedThreeForm::zero(n), &p).unwrap() <= 1e-14);
        let shear = GeneralizedSection::vector(VectorField { comps: vec![x(n, 1), Poly::zero(n), Poly::zero(n)] });
        assert!(flow_preserves_frame(&shear, &graph, &perp, &ClosedThreeForm::zero(n), &p).unwrap() > 0.1);
    }
}
