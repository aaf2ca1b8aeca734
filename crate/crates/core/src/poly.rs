//! Multivariate polynomials, polynomial vector fields and differential forms
//! on a coordinate chart.  Differentiation acts on coefficients, so every
//! identity of the Cartan calculus holds exactly up to float roundoff.
//!
//! Conventions: `dx^1 ^ dx^2 (e_1, e_2) = 1` (determinant normalization),
//! `i_v` contracts the first slot, `L_u = i_u d + d i_u`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

type Exps = Vec<u32>;

#[derive(Clone, Debug, PartialEq)]
pub struct Poly {
    nvars: usize,
    terms: BTreeMap<Exps, f64>,
}

impl Poly {
    pub fn zero(nvars: usize) -> Self {
        Self { nvars, terms: BTreeMap::new() }
    }

    pub fn constant(nvars: usize, c: f64) -> Self {
        let mut p = Self::zero(nvars);
        p.add_term(vec![0; nvars], c);
        p
    }

    /// The coordinate function `x_i` (0-based).
    pub fn var(nvars: usize, i: usize) -> Self {
        let mut e = vec![0; nvars];
        e[i] = 1;
        Self::monomial(nvars, e, 1.0)
    }

    pub fn monomial(nvars: usize, exps: Exps, coef: f64) -> Self {
        assert_eq!(exps.len(), nvars);
        let mut p = Self::zero(nvars);
        p.add_term(exps, coef);
        p
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Exps, &f64)> {
        self.terms.iter()
    }

    fn add_term(&mut self, exps: Exps, coef: f64) {
        if coef == 0.0 {
            return;
        }
        let entry = self.terms.entry(exps).or_insert(0.0);
        *entry += coef;
        if *entry == 0.0 {
            self.terms.retain(|_, v| *v != 0.0);
        }
    }

    pub fn is_zero(&self) -> bool {
        self.terms.values().all(|&c| c == 0.0)
    }

    pub fn degree(&self) -> u32 {
        self.terms.keys().map(|e| e.iter().sum()).max().unwrap_or(0)
    }

    pub fn max_abs_coef(&self) -> f64 {
        self.terms.values().fold(0.0, |a, c| a.max(c.abs()))
    }

    pub fn add(&self, other: &Poly) -> Poly {
        assert_eq!(self.nvars, other.nvars);
        let mut out = self.clone();
        for (e, c) in &other.terms {
            out.add_term(e.clone(), *c);
        }
        out
    }

    pub fn sub(&self, other: &Poly) -> Poly {
        self.add(&other.scale(-1.0))
    }

    pub fn scale(&self, s: f64) -> Poly {
        let mut out = Poly::zero(self.nvars);
        for (e, c) in &self.terms {
            out.add_term(e.clone(), c * s);
        }
        out
    }

    pub fn mul(&self, other: &Poly) -> Poly {
        assert_eq!(self.nvars, other.nvars);
        let mut out = Poly::zero(self.nvars);
        for (ea, ca) in &self.terms {
            for (eb, cb) in &other.terms {
                let e = ea.iter().zip(eb).map(|(a, b)| a + b).collect();
                out.add_term(e, ca * cb);
            }
        }
        out
    }

    /// Exact partial derivative in `x_i`.
    pub fn deriv(&self, i: usize) -> Poly {
        let mut out = Poly::zero(self.nvars);
        for (e, c) in &self.terms {
            if e[i] > 0 {
                let mut e2 = e.clone();
                e2[i] -= 1;
                out.add_term(e2, c * e[i] as f64);
            }
        }
        out
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.nvars);
        self.terms
            .iter()
            .map(|(e, c)| c * e.iter().zip(x).map(|(&k, &xi)| xi.powi(k as i32)).product::<f64>())
            .sum()
    }

    /// Substitute polynomials (in a common set of `m` variables) for the variables.
    pub fn compose(&self, subs: &[Poly]) -> Poly {
        assert_eq!(subs.len(), self.nvars);
        let m = subs.first().map(|p| p.nvars).unwrap_or(0);
        let mut out = Poly::zero(m);
        for (e, c) in &self.terms {
            let mut term = Poly::constant(m, *c);
            for (i, &k) in e.iter().enumerate() {
                for _ in 0..k {
                    term = term.mul(&subs[i]);
                }
            }
            out = out.add(&term);
        }
        out
    }

    pub fn to_json(&self) -> PolyJson {
        PolyJson {
            degree: self.degree(),
            monomials: self.terms.iter().map(|(e, c)| MonomialJson { exps: e.clone(), coef: *c }).collect(),
        }
    }

    pub fn from_json(nvars: usize, j: &PolyJson) -> Result<Self> {
        let mut p = Poly::zero(nvars);
        for m in &j.monomials {
            if m.exps.len() != nvars {
                return Err(Error::Structural(format!(
                    "monomial has {} exponents, chart has {nvars} coordinates",
                    m.exps.len()
                )));
            }
            if m.exps.iter().sum::<u32>() > j.degree {
                return Err(Error::InvalidInput("monomial exceeds declared degree".into()));
            }
            p.add_term(m.exps.clone(), m.coef);
        }
        Ok(p)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonomialJson {
    pub exps: Vec<u32>,
    pub coef: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolyJson {
    pub degree: u32,
    pub monomials: Vec<MonomialJson>,
}

/// Sort an index list, returning the permutation sign, or `None` on a repeat.
fn sort_with_sign(idx: &[usize]) -> Option<(Vec<usize>, f64)> {
    let mut v = idx.to_vec();
    let mut sign = 1.0;
    for i in 0..v.len() {
        for j in 0..v.len() - 1 - i {
            if v[j] > v[j + 1] {
                v.swap(j, j + 1);
                sign = -sign;
            } else if v[j] == v[j + 1] {
                return None;
            }
        }
    }
    if v.windows(2).any(|w| w[0] == w[1]) {
        return None;
    }
    Some((v, sign))
}

#[derive(Clone, Debug, PartialEq)]
pub struct VectorField {
    pub comps: Vec<Poly>,
}

impl VectorField {
    pub fn zero(n: usize) -> Self {
        Self { comps: vec![Poly::zero(n); n] }
    }

    /// Constant coordinate field `e_i`.
    pub fn coordinate(n: usize, i: usize) -> Self {
        let mut v = Self::zero(n);
        v.comps[i] = Poly::constant(n, 1.0);
        v
    }

    pub fn dim(&self) -> usize {
        self.comps.len()
    }

    pub fn add(&self, o: &VectorField) -> VectorField {
        Self { comps: self.comps.iter().zip(&o.comps).map(|(a, b)| a.add(b)).collect() }
    }

    pub fn sub(&self, o: &VectorField) -> VectorField {
        Self { comps: self.comps.iter().zip(&o.comps).map(|(a, b)| a.sub(b)).collect() }
    }

    pub fn scale_poly(&self, f: &Poly) -> VectorField {
        Self { comps: self.comps.iter().map(|c| c.mul(f)).collect() }
    }

    /// Directional derivative `u(f)`.
    pub fn apply(&self, f: &Poly) -> Poly {
        self.comps
            .iter()
            .enumerate()
            .fold(Poly::zero(f.nvars()), |acc, (i, ui)| acc.add(&ui.mul(&f.deriv(i))))
    }

    pub fn lie_bracket(&self, o: &VectorField) -> VectorField {
        Self {
            comps: (0..self.dim()).map(|i| self.apply(&o.comps[i]).sub(&o.apply(&self.comps[i]))).collect(),
        }
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        self.comps.iter().map(|c| c.eval(x)).collect()
    }

    pub fn max_abs_coef(&self) -> f64 {
        self.comps.iter().fold(0.0, |a, c| a.max(c.max_abs_coef()))
    }
}

/// A polynomial k-form `sum_I f_I dx^I` over strictly increasing multi-indices.
#[derive(Clone, Debug, PartialEq)]
pub struct Form {
    n: usize,
    k: usize,
    comps: BTreeMap<Vec<usize>, Poly>,
}

impl Form {
    pub fn zero(n: usize, k: usize) -> Self {
        Self { n, k, comps: BTreeMap::new() }
    }

    pub fn function(f: Poly) -> Self {
        let n = f.nvars();
        let mut out = Self::zero(n, 0);
        out.add_term(&[], f);
        out
    }

    /// `f dx^{i_1} ^ ... ^ dx^{i_k}` for arbitrary (unsorted) indices.
    pub fn term(n: usize, idx: &[usize], f: Poly) -> Self {
        let mut out = Self::zero(n, idx.len());
        out.add_term(idx, f);
        out
    }

    /// Constant-coefficient `c dx^I`.
    pub fn basic(n: usize, idx: &[usize], c: f64) -> Self {
        Self::term(n, idx, Poly::constant(n, c))
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn degree(&self) -> usize {
        self.k
    }

    pub fn components(&self) -> impl Iterator<Item = (&Vec<usize>, &Poly)> {
        self.comps.iter()
    }

    pub fn component(&self, idx: &[usize]) -> Poly {
        match sort_with_sign(idx) {
            None => Poly::zero(self.n),
            Some((sorted, sign)) => self.comps.get(&sorted).map(|p| p.scale(sign)).unwrap_or_else(|| Poly::zero(self.n)),
        }
    }

    fn add_term(&mut self, idx: &[usize], f: Poly) {
        assert_eq!(idx.len(), self.k);
        assert!(idx.iter().all(|&i| i < self.n));
        if let Some((sorted, sign)) = sort_with_sign(idx) {
            let entry = self.comps.entry(sorted.clone()).or_insert_with(|| Poly::zero(self.n));
            *entry = entry.add(&f.scale(sign));
            if entry.is_zero() {
                self.comps.remove(&sorted);
            }
        }
    }

    pub fn add(&self, o: &Form) -> Form {
        assert_eq!((self.n, self.k), (o.n, o.k), "form shape mismatch");
        let mut out = self.clone();
        for (i, f) in &o.comps {
            out.add_term(i, f.clone());
        }
        out
    }

    pub fn sub(&self, o: &Form) -> Form {
        self.add(&o.scale(-1.0))
    }

    pub fn scale(&self, s: f64) -> Form {
        let mut out = Form::zero(self.n, self.k);
        for (i, f) in &self.comps {
            out.add_term(i, f.scale(s));
        }
        out
    }

    pub fn mul_poly(&self, g: &Poly) -> Form {
        let mut out = Form::zero(self.n, self.k);
        for (i, f) in &self.comps {
            out.add_term(i, f.mul(g));
        }
        out
    }

    pub fn is_zero(&self) -> bool {
        self.comps.values().all(|p| p.is_zero())
    }

    pub fn max_abs_coef(&self) -> f64 {
        self.comps.values().fold(0.0, |a, p| a.max(p.max_abs_coef()))
    }

    /// Exterior derivative.
    pub fn d(&self) -> Form {
        let mut out = Form::zero(self.n, self.k + 1);
        for (idx, f) in &self.comps {
            for i in 0..self.n {
                if idx.contains(&i) {
                    continue;
                }
                let df = f.deriv(i);
                if df.is_zero() {
                    continue;
                }
                let mut full = vec![i];
                full.extend_from_slice(idx);
                out.add_term(&full, df);
            }
        }
        out
    }

    pub fn wedge(&self, o: &Form) -> Form {
        assert_eq!(self.n, o.n);
        let mut out = Form::zero(self.n, self.k + o.k);
        for (ia, fa) in &self.comps {
            for (ib, fb) in &o.comps {
                let mut full = ia.clone();
                full.extend_from_slice(ib);
                out.add_term(&full, fa.mul(fb));
            }
        }
        out
    }

    /// Interior product `i_v` (contraction in the first slot).
    pub fn interior(&self, v: &VectorField) -> Form {
        assert!(self.k > 0, "interior product of a function");
        let mut out = Form::zero(self.n, self.k - 1);
        for (idx, f) in &self.comps {
            for (m, &j) in idx.iter().enumerate() {
                let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
                let rest: Vec<usize> = idx.iter().enumerate().filter(|&(p, _)| p != m).map(|(_, &q)| q).collect();
                out.add_term(&rest, f.mul(&v.comps[j]).scale(sign));
            }
        }
        out
    }

    pub fn lie_derivative(&self, u: &VectorField) -> Form {
        let a = if self.k + 1 <= self.n { self.d().interior(u) } else { Form::zero(self.n, self.k) };
        let b = if self.k > 0 { self.interior(u).d() } else { Form::zero(self.n, self.k) };
        a.add(&b)
    }

    /// Value as a function (0-forms only).
    pub fn as_function(&self) -> Poly {
        assert_eq!(self.k, 0);
        self.component(&[])
    }

    /// Evaluate on tangent vectors at a point.
    pub fn eval_on(&self, x: &[f64], vectors: &[Vec<f64>]) -> f64 {
        assert_eq!(vectors.len(), self.k);
        let mut total = 0.0;
        for (idx, f) in &self.comps {
            let fv = f.eval(x);
            if fv == 0.0 {
                continue;
            }
            // determinant of the k x k minor vectors[a][idx[b]]
            let m = nalgebra::DMatrix::from_fn(self.k, self.k, |a, b| vectors[a][idx[b]]);
            total += fv * if self.k == 0 { 1.0 } else { m.determinant() };
        }
        total
    }

    /// Coefficients evaluated at a point, keyed by multi-index.
    pub fn eval_coeffs(&self, x: &[f64]) -> Vec<(Vec<usize>, f64)> {
        self.comps.iter().map(|(i, f)| (i.clone(), f.eval(x))).collect()
    }

    pub fn max_abs_at(&self, x: &[f64]) -> f64 {
        self.comps.values().fold(0.0, |a, f| a.max(f.eval(x).abs()))
    }

    /// Pullback along a polynomial map `phi: R^m -> R^n`.
    pub fn pullback(&self, phi: &[Poly]) -> Form {
        assert_eq!(phi.len(), self.n);
        let m = phi[0].nvars();
        let dphi: Vec<Form> = phi.iter().map(|p| Form::function(p.clone()).d()).collect();
        let mut out = Form::zero(m, self.k);
        for (idx, f) in &self.comps {
            let mut acc = Form::function(f.compose(phi));
            for &i in idx {
                acc = acc.wedge(&dphi[i]);
            }
            out = out.add(&acc);
        }
        out
    }

    pub fn to_json(&self) -> FormJson {
        FormJson {
            k: self.k,
            components: self.comps.iter().map(|(i, f)| FormComponentJson { indices: i.clone(), poly: f.to_json() }).collect(),
        }
    }

    pub fn from_json(n: usize, j: &FormJson) -> Result<Self> {
        let mut out = Form::zero(n, j.k);
        for c in &j.components {
            if c.indices.len() != j.k || c.indices.iter().any(|&i| i >= n) {
                return Err(Error::Structural("form component index out of range".into()));
            }
            out.add_term(&c.indices, Poly::from_json(n, &c.poly)?);
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FormComponentJson {
    pub indices: Vec<usize>,
    pub poly: PolyJson,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FormJson {
    pub k: usize,
    pub components: Vec<FormComponentJson>,
}
