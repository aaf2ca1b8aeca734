//! Light-cone lattice sigma models: H-critical and `S_r`-critical maps,
//! criticality through `F_L`, Noether currents and brane boundaries.
//!
//! Worldsheet coordinates are light-like, `t1 = tau + sigma`,
//! `t2 = tau - sigma`.  A plaquette has corners `a = (i, j)`, `b = (i+1, j)`,
//! `c = (i, j+1)`, `d = (i+1, j+1)`; all plaquette quantities are centered:
//! `u = d_1 f`, `v = d_2 f` are averaged edge differences, `f_12` the mixed
//! difference, and fields are evaluated at the corner average.  The free
//! boson is exact on this stencil.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::courant::{noninvolutivity, ClosedThreeForm, GeneralizedSection, LagrangianFrame, Leaf};
use crate::error::{Error, Result};
use crate::fd;
use crate::liealg::Subspace;
use crate::linalg;
use crate::poly::{Form, Poly};
use crate::reduction::{chart_pairing, fd_bracket, BackgroundFields, QuotientChart, ReducedCA};

pub const NEWTON_TOL: f64 = 1e-10;
pub const NEWTON_MAX_ITER: usize = 40;
pub const NEWTON_DAMPING: f64 = 0.5;
/// Tolerance of the Noether hypothesis check.
pub const FLOW_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EdgeFlag {
    /// Free endpoint (Neumann, leaf = whole target, `beta = 0`).
    Free,
    /// Values prescribed by the initial data.
    Fixed,
    /// Brane given by the background leaf with this index.
    Brane(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Boundary {
    /// Data line `t2 = 0`.
    pub t1_axis: EdgeFlag,
    /// Data line `t1 = 0`; unused on the half plane.
    pub t2_axis: EdgeFlag,
    /// Timelike boundary `sigma = 0`; its presence makes the domain the half plane `sigma >= 0`.
    pub diagonal: Option<EdgeFlag>,
}

impl Default for Boundary {
    fn default() -> Self {
        Self { t1_axis: EdgeFlag::Fixed, t2_axis: EdgeFlag::Fixed, diagonal: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LightConeLattice {
    pub n1: usize,
    pub n2: usize,
    pub h1: f64,
    pub h2: f64,
    #[serde(default)]
    pub origin: [f64; 2],
    #[serde(default)]
    pub boundary: Boundary,
}

impl LightConeLattice {
    pub fn new(n1: usize, n2: usize, h1: f64, h2: f64) -> Result<Self> {
        let lat = Self { n1, n2, h1, h2, origin: [0.0, 0.0], boundary: Boundary::default() };
        lat.validate()?;
        Ok(lat)
    }

    /// `[0, t] x [0, t]` with `n` steps per side.
    pub fn square(n: usize, t: f64) -> Result<Self> {
        Self::new(n, n, t / n as f64, t / n as f64)
    }

    /// Wedge `0 <= t2 <= t1 <= t` with a timelike boundary on the diagonal.
    /// Points just across the diagonal (`j = i + 1`) hold ghost values.
    pub fn half_plane(n: usize, t: f64, flag: EdgeFlag) -> Result<Self> {
        let mut lat = Self::square(n, t)?;
        lat.boundary.diagonal = Some(flag);
        lat.validate()?;
        Ok(lat)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n1 < 2 || self.n2 < 2 {
            return Err(Error::InvalidInput("lattice needs at least 2 steps per direction".into()));
        }
        if !(self.h1 > 0.0 && self.h2 > 0.0) {
            return Err(Error::InvalidInput("lattice steps must be positive".into()));
        }
        if self.boundary.t1_axis != EdgeFlag::Fixed || (!self.is_half_plane() && self.boundary.t2_axis != EdgeFlag::Fixed) {
            return Err(Error::InvalidInput("characteristic data lines must be fixed".into()));
        }
        if self.is_half_plane() && (self.n1 != self.n2 || (self.h1 - self.h2).abs() > 1e-15 * self.h1) {
            return Err(Error::InvalidInput("a timelike boundary needs equal steps".into()));
        }
        Ok(())
    }

    pub fn is_half_plane(&self) -> bool {
        self.boundary.diagonal.is_some()
    }

    pub fn times(&self, i: usize, j: usize) -> (f64, f64) {
        (self.origin[0] + i as f64 * self.h1, self.origin[1] + j as f64 * self.h2)
    }

    pub fn defined(&self, i: usize, j: usize) -> bool {
        i <= self.n1 && j <= self.n2 && (!self.is_half_plane() || j <= i + 1)
    }

    /// Lower-left corners of the plaquettes carrying the field equation.
    pub fn cells(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for j in 0..self.n2 {
            for i in 0..self.n1 {
                if !self.is_half_plane() || i >= j {
                    out.push((i, j));
                }
            }
        }
        out
    }

    /// Boundary edges `(k-1, k-1) -> (k, k)`, indexed by `k`.
    pub fn diagonal_edges(&self) -> Vec<usize> {
        if self.is_half_plane() {
            (1..=self.n1.min(self.n2)).collect()
        } else {
            Vec::new()
        }
    }

    pub fn with_refinement(&self, factor: usize) -> Self {
        let mut out = self.clone();
        out.n1 *= factor;
        out.n2 *= factor;
        out.h1 /= factor as f64;
        out.h2 /= factor as f64;
        out
    }
}

/// Values on the lattice points; `None` outside the domain.
#[derive(Clone, Debug, PartialEq)]
pub struct LatticeMap<T> {
    pub n1: usize,
    pub n2: usize,
    pub values: Vec<Option<T>>,
}

pub type ChartMap = LatticeMap<DVector<f64>>;

impl<T: Clone> LatticeMap<T> {
    pub fn empty(lat: &LightConeLattice) -> Self {
        Self { n1: lat.n1, n2: lat.n2, values: vec![None; (lat.n1 + 1) * (lat.n2 + 1)] }
    }

    fn idx(&self, i: usize, j: usize) -> usize {
        j * (self.n1 + 1) + i
    }

    pub fn get(&self, i: usize, j: usize) -> &T {
        self.try_get(i, j).unwrap_or_else(|| panic!("lattice point ({i}, {j}) is undefined"))
    }

    pub fn try_get(&self, i: usize, j: usize) -> Option<&T> {
        if i > self.n1 || j > self.n2 {
            return None;
        }
        self.values[self.idx(i, j)].as_ref()
    }

    pub fn set(&mut self, i: usize, j: usize, v: T) {
        let k = self.idx(i, j);
        self.values[k] = Some(v);
    }

    pub fn points(&self) -> impl Iterator<Item = (usize, usize, &T)> {
        self.values.iter().enumerate().filter_map(move |(k, v)| v.as_ref().map(|v| (k % (self.n1 + 1), k / (self.n1 + 1), v)))
    }

    pub fn map<U: Clone>(&self, mut f: impl FnMut(usize, usize, &T) -> U) -> LatticeMap<U> {
        let mut out = LatticeMap { n1: self.n1, n2: self.n2, values: vec![None; self.values.len()] };
        for (i, j, v) in self.points() {
            out.set(i, j, f(i, j, v));
        }
        out
    }
}

impl ChartMap {
    /// CSV with columns `i, j, t1, t2, x0, x1, ...`.
    pub fn to_csv(&self, lat: &LightConeLattice) -> String {
        let dim = self.points().next().map(|p| p.2.len()).unwrap_or(0);
        let mut s = String::from("i,j,t1,t2");
        for c in 0..dim {
            s.push_str(&format!(",x{c}"));
        }
        s.push('\n');
        for (i, j, v) in self.points() {
            let (t1, t2) = lat.times(i, j);
            s.push_str(&format!("{i},{j},{t1:.17e},{t2:.17e}"));
            for x in v.iter() {
                s.push_str(&format!(",{x:.17e}"));
            }
            s.push('\n');
        }
        s
    }

    pub fn max_distance(&self, other: &ChartMap) -> f64 {
        self.points()
            .filter_map(|(i, j, v)| other.try_get(i, j).map(|w| linalg::max_abs_vec(&(v - w))))
            .fold(0.0, f64::max)
    }
}

pub type MatrixField = Arc<dyn Fn(&[f64]) -> Result<DMatrix<f64>> + Send + Sync>;
pub type MatrixPartials = Arc<dyn Fn(&[f64]) -> Result<Vec<DMatrix<f64>>> + Send + Sync>;
/// `H(e_c, e_a, e_b)` flattened as `(c * m + a) * m + b`.
pub type ThreeFormField = Arc<dyn Fn(&[f64]) -> Result<Vec<f64>> + Send + Sync>;

/// Brane data: a leaf of `a(C)` with its 2-form `beta_N` in leaf coordinates.
#[derive(Clone, Debug)]
pub struct BraneLeaf {
    pub leaf: Leaf,
    pub beta: Form,
}

/// Target data of a sigma model: a tensor `r = g + B` (SR type) and/or a
/// closed 3-form `H` (WZ type).  `omega` only serves action values.
#[derive(Clone)]
pub struct Background {
    pub dim: usize,
    r: Option<MatrixField>,
    dr: Option<MatrixPartials>,
    h: Option<ThreeFormField>,
    /// `r`, its partials and `H` in one evaluation, when cheaper than separately.
    joint: Option<Arc<dyn Fn(&[f64]) -> Result<BackgroundFields> + Send + Sync>>,
    pub omega: Option<Form>,
    pub leaves: Vec<BraneLeaf>,
}

impl fmt::Debug for Background {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Background")
            .field("dim", &self.dim)
            .field("sr", &self.r.is_some())
            .field("wz", &self.h.is_some())
            .field("leaves", &self.leaves.len())
            .finish()
    }
}

fn three_form_field(h: &ClosedThreeForm) -> ThreeFormField {
    let m = h.dim();
    let comps: Vec<Poly> = (0..m * m * m).map(|k| h.form().component(&[k / (m * m), (k / m) % m, k % m])).collect();
    Arc::new(move |x: &[f64]| Ok(comps.iter().map(|p| p.eval(x)).collect()))
}

impl Background {
    pub fn wz(h: &ClosedThreeForm) -> Self {
        Self { dim: h.dim(), r: None, dr: None, h: Some(three_form_field(h)), joint: None, omega: None, leaves: Vec::new() }
    }

    /// WZ background `H = d omega`, keeping `omega` for action values.
    pub fn wz_potential(omega: &Form) -> Result<Self> {
        let mut bg = Self::wz(&ClosedThreeForm::new(omega.d())?);
        bg.omega = Some(omega.clone());
        Ok(bg)
    }

    pub fn sr_constant(r: DMatrix<f64>) -> Self {
        let m = r.nrows();
        Self {
            dim: m,
            r: Some(Arc::new(move |_| Ok(r.clone()))),
            dr: Some(Arc::new(move |_| Ok(vec![DMatrix::zeros(m, m); m]))),
            h: None,
            joint: None,
            omega: None,
            leaves: Vec::new(),
        }
    }

    /// Polynomial `r` with exact derivatives and an optional extra `H`.
    pub fn sr_poly(r: Vec<Vec<Poly>>, h: Option<&ClosedThreeForm>) -> Self {
        let m = r.len();
        let dr: Vec<Vec<Vec<Poly>>> = (0..m).map(|c| r.iter().map(|row| row.iter().map(|p| p.deriv(c)).collect()).collect()).collect();
        let eval = move |t: &Vec<Vec<Poly>>, x: &[f64]| DMatrix::from_fn(m, m, |a, b| t[a][b].eval(x));
        let r2 = r.clone();
        Self {
            dim: m,
            r: Some(Arc::new(move |x| Ok(eval(&r2, x)))),
            dr: Some(Arc::new(move |x| Ok(dr.iter().map(|t| eval(t, x)).collect()))),
            h: h.map(three_form_field),
            joint: None,
            omega: None,
            leaves: Vec::new(),
        }
    }

    /// Pointwise `r` with derivatives by finite differences.
    pub fn sr_field(dim: usize, r: MatrixField, h: Option<ThreeFormField>) -> Self {
        let rr = r.clone();
        let dr: MatrixPartials = Arc::new(move |x: &[f64]| {
            rr(x)?;
            let f = |y: &[f64]| rr(y).unwrap_or_else(|_| DMatrix::from_element(dim, dim, f64::NAN));
            let parts = fd::matrix_partials(f, x, fd::DEFAULT_STEP);
            if parts.iter().any(|p| p.iter().any(|v| !v.is_finite())) {
                return Err(Error::DegenerateBackground { location: format!("{x:?} (derivative stencil)") });
            }
            Ok(parts)
        });
        Self { dim, r: Some(r), dr: Some(dr), h, joint: None, omega: None, leaves: Vec::new() }
    }

    /// Background on a quotient chart induced by the subspace `r_d` of the double.
    pub fn reduced(red: &ReducedCA, r_d: &Subspace) -> Self {
        let (a, b) = (red.clone(), r_d.clone());
        let r: MatrixField = Arc::new(move |x| a.background(x, &b));
        let h: Option<ThreeFormField> = match red.rule {
            crate::reduction::SplittingRule::Induced => None,
            _ => {
                let c = red.clone();
                Some(Arc::new(move |x: &[f64]| c.h_g(x)))
            }
        };
        let mut bg = Self::sr_field(red.dim(), r, h);
        let (a, b) = (red.clone(), r_d.clone());
        bg.joint = Some(Arc::new(move |x| a.background_fields(x, &b, true)));
        bg
    }

    pub fn with_leaves(mut self, leaves: Vec<BraneLeaf>) -> Self {
        self.leaves = leaves;
        self
    }

    pub fn is_sr(&self) -> bool {
        self.r.is_some()
    }

    pub fn r(&self, x: &[f64]) -> Result<Option<DMatrix<f64>>> {
        self.r.as_ref().map(|r| r(x)).transpose()
    }

    pub fn h(&self, x: &[f64]) -> Result<Option<Vec<f64>>> {
        self.h.as_ref().map(|h| h(x)).transpose()
    }

    /// Euler-Lagrange operator at a plaquette and its derivative in the
    /// last corner `d` (with `du/dd = 1/(2 h1)`, `dv/dd = 1/(2 h2)`,
    /// `df12/dd = 1/(h1 h2)`; the dependence through the midpoint is dropped).
    fn el_operator(&self, x: &[f64], u: &DVector<f64>, v: &DVector<f64>, f12: &DVector<f64>, steps: (f64, f64)) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let m = self.dim;
        let mut e = DVector::zeros(m);
        let mut jac = DMatrix::zeros(m, m);
        // gamma[c][(a, b)] multiplies u^a v^b
        let mut gamma = vec![DMatrix::zeros(m, m); m];
        let (r, dr, h) = match &self.joint {
            Some(joint) => {
                let f = joint(x)?;
                (Some(f.r), Some(f.dr), f.h)
            }
            None => match &self.r {
                Some(rf) => (Some(rf(x)?), Some((self.dr.as_ref().expect("sr background carries derivatives"))(x)?), self.h(x)?),
                None => (None, None, self.h(x)?),
            },
        };
        if let (Some(r), Some(dr)) = (r, dr) {
            let sym = &r + r.transpose();
            e -= &sym * f12;
            jac -= &sym / (steps.0 * steps.1);
            for c in 0..m {
                for a in 0..m {
                    for b in 0..m {
                        gamma[c][(a, b)] = dr[c][(a, b)] - dr[a][(c, b)] - dr[b][(a, c)];
                    }
                }
            }
        }
        if let Some(h) = h {
            for c in 0..m {
                for a in 0..m {
                    for b in 0..m {
                        gamma[c][(a, b)] += h[(c * m + a) * m + b];
                    }
                }
            }
        }
        for c in 0..m {
            e[c] += u.dot(&(&gamma[c] * v));
            let row_u = &gamma[c] * v / (2.0 * steps.0);
            let row_v = gamma[c].transpose() * u / (2.0 * steps.1);
            for k in 0..m {
                jac[(c, k)] += row_u[k] + row_v[k];
            }
        }
        Ok((e, jac))
    }
}

struct Plaquette {
    mid: DVector<f64>,
    u: DVector<f64>,
    v: DVector<f64>,
    f12: DVector<f64>,
}

fn plaquette(a: &DVector<f64>, b: &DVector<f64>, c: &DVector<f64>, d: &DVector<f64>, h1: f64, h2: f64) -> Plaquette {
    Plaquette {
        mid: (a + b + c + d) / 4.0,
        u: ((b - a) + (d - c)) / (2.0 * h1),
        v: ((c - a) + (d - b)) / (2.0 * h2),
        f12: (d - b - c + a) / (h1 * h2),
    }
}

fn corners<'a>(f: &'a ChartMap, i: usize, j: usize) -> [&'a DVector<f64>; 4] {
    [f.get(i, j), f.get(i + 1, j), f.get(i, j + 1), f.get(i + 1, j + 1)]
}

/// Per-plaquette residual vectors and their max norms.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualField {
    pub cells: Vec<(usize, usize)>,
    pub vectors: Vec<DVector<f64>>,
    pub norms: Vec<f64>,
}

impl ResidualField {
    pub fn from_vectors(cells: Vec<(usize, usize)>, vectors: Vec<DVector<f64>>) -> Self {
        let norms = vectors.iter().map(linalg::max_abs_vec).collect();
        Self { cells, vectors, norms }
    }

    pub fn max(&self) -> f64 {
        self.norms.iter().cloned().fold(0.0, f64::max)
    }

    /// Largest norm over cells whose lower-left corner lies in the window.
    pub fn max_where(&self, keep: impl Fn(usize, usize) -> bool) -> f64 {
        self.cells.iter().zip(&self.norms).filter(|((i, j), _)| keep(*i, *j)).map(|(_, n)| *n).fold(0.0, f64::max)
    }
}

/// Discrete Euler-Lagrange residual on every plaquette; for a WZ background
/// component `c` is `(i_{e_c} H)(d_1 f, d_2 f)`.
pub fn el_residual(f: &ChartMap, bg: &Background, lat: &LightConeLattice) -> Result<ResidualField> {
    let cells = lat.cells();
    let vectors = cells
        .par_iter()
        .map(|&(i, j)| {
            let [a, b, c, d] = corners(f, i, j);
            let p = plaquette(a, b, c, d, lat.h1, lat.h2);
            bg.el_operator(p.mid.as_slice(), &p.u, &p.v, &p.f12, (lat.h1, lat.h2)).map(|(e, _)| e)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ResidualField::from_vectors(cells, vectors))
}

/// `sum r(d_1 f, d_2 f) + omega(d_1 f, d_2 f)` over plaquettes, times the area element.
pub fn action(f: &ChartMap, bg: &Background, lat: &LightConeLattice) -> Result<f64> {
    let mut s = 0.0;
    for (i, j) in lat.cells() {
        let [a, b, c, d] = corners(f, i, j);
        let p = plaquette(a, b, c, d, lat.h1, lat.h2);
        let x = p.mid.as_slice();
        if let Some(r) = bg.r(x)? {
            s += p.u.dot(&(r * &p.v));
        }
        if let Some(w) = &bg.omega {
            let m = bg.dim;
            let om = DMatrix::from_fn(m, m, |k, l| w.component(&[k, l]).eval(x));
            s += p.u.dot(&(om * &p.v));
        }
    }
    Ok(s * lat.h1 * lat.h2)
}

/// Initial/boundary data generator `(t1, t2) -> target point`.
#[derive(Clone)]
pub struct InitialData {
    pub name: String,
    pub dim: usize,
    f: Arc<dyn Fn(f64, f64) -> DVector<f64> + Send + Sync>,
    /// Whether the generator is an exact solution of the continuum equations.
    pub exact: bool,
}

impl fmt::Debug for InitialData {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "InitialData({}, dim {})", self.name, self.dim)
    }
}

/// `sum_k a_k sin(w_k t + p_k)` with a constant offset.
#[derive(Clone, Debug, PartialEq)]
pub struct TrigProfile {
    pub offset: f64,
    pub modes: Vec<(f64, f64, f64)>,
}

impl TrigProfile {
    pub fn random(rng: &mut ChaCha8Rng, amplitude: f64, modes: usize) -> Self {
        Self {
            offset: rng.gen_range(-amplitude..amplitude),
            modes: (0..modes)
                .map(|_| (amplitude * rng.gen_range(-1.0..1.0), rng.gen_range(0.5..3.0), rng.gen_range(0.0..std::f64::consts::TAU)))
                .collect(),
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.offset + self.modes.iter().map(|(a, w, p)| a * (w * t + p).sin()).sum::<f64>()
    }

    pub fn derivative(&self, t: f64) -> f64 {
        self.modes.iter().map(|(a, w, p)| a * w * (w * t + p).cos()).sum()
    }
}

/// Named data presets.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum DataPreset {
    Dalembert,
    PcmGeodesic,
    RandomSmooth(u64),
}

impl std::str::FromStr for DataPreset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dalembert" => Ok(DataPreset::Dalembert),
            "pcm-geodesic" => Ok(DataPreset::PcmGeodesic),
            _ => s
                .strip_prefix("random-smooth(")
                .and_then(|r| r.strip_suffix(')'))
                .and_then(|n| n.trim().parse().ok())
                .map(DataPreset::RandomSmooth)
                .ok_or_else(|| Error::Config(format!("unknown data preset {s:?}"))),
        }
    }
}

impl TryFrom<String> for DataPreset {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<DataPreset> for String {
    fn from(p: DataPreset) -> String {
        match p {
            DataPreset::Dalembert => "dalembert".into(),
            DataPreset::PcmGeodesic => "pcm-geodesic".into(),
            DataPreset::RandomSmooth(s) => format!("random-smooth({s})"),
        }
    }
}

impl InitialData {
    pub fn from_fn(name: &str, dim: usize, exact: bool, f: impl Fn(f64, f64) -> DVector<f64> + Send + Sync + 'static) -> Self {
        Self { name: name.into(), dim, f: Arc::new(f), exact }
    }

    pub fn eval(&self, t1: f64, t2: f64) -> DVector<f64> {
        (self.f)(t1, t2)
    }

    /// `f = p(t1) + q(t2)` per component, an exact free-boson solution.
    pub fn dalembert(dim: usize, seed: u64, amplitude: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let profiles: Vec<(TrigProfile, TrigProfile)> =
            (0..dim).map(|_| (TrigProfile::random(&mut rng, amplitude, 2), TrigProfile::random(&mut rng, amplitude, 2))).collect();
        Self::from_fn("dalembert", dim, true, move |t1, t2| DVector::from_fn(dim, |c, _| profiles[c].0.eval(t1) + profiles[c].1.eval(t2)))
    }

    /// Smooth data that is generally not a solution of anything.
    pub fn random_smooth(dim: usize, seed: u64, amplitude: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let coef: Vec<[f64; 6]> = (0..dim).map(|_| std::array::from_fn(|_| amplitude * rng.gen_range(-1.0..1.0))).collect();
        let freq: Vec<[f64; 3]> = (0..dim).map(|_| std::array::from_fn(|_| rng.gen_range(0.5..2.5))).collect();
        Self::from_fn(&format!("random-smooth({seed})"), dim, false, move |t1, t2| {
            DVector::from_fn(dim, |c, _| {
                let (k, w) = (&coef[c], &freq[c]);
                k[0] + k[1] * (w[0] * t1).sin() + k[2] * (w[1] * t2).cos() + k[3] * (w[2] * t1 * t2).sin() + k[4] * t1 * t2 + k[5] * (t1 - t2).powi(2)
            })
        })
    }

    /// `exp(g0) exp((p(t1) + q(t2)) X)` in the chart: an exact solution of the
    /// principal chiral model (a reparametrized one-parameter subgroup).
    pub fn pcm_geodesic(chart: &QuotientChart, g0: &[f64], x: &[f64], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (p, q) = (TrigProfile::random(&mut rng, 0.3, 2), TrigProfile::random(&mut rng, 0.3, 2));
        let chart = chart.clone();
        let base = chart.point(g0);
        let dir = chart.lie_element(x);
        let dim = chart.dim();
        Self::from_fn("pcm-geodesic", dim, true, move |t1, t2| {
            let s = p.eval(t1) + q.eval(t2);
            let m = &base * chart.group.exp(&(&dir * s));
            DVector::from_vec(chart.chart_of(&m).expect("geodesic stays in the chart"))
        })
    }
}

/// Sample `data` on every lattice point.
pub fn sample(data: &InitialData, lat: &LightConeLattice) -> ChartMap {
    let mut f = ChartMap::empty(lat);
    for j in 0..=lat.n2 {
        for i in 0..=lat.n1 {
            if lat.defined(i, j) {
                let (t1, t2) = lat.times(i, j);
                f.set(i, j, data.eval(t1, t2));
            }
        }
    }
    f
}

fn newton(
    mut z: DVector<f64>,
    mut resid: impl FnMut(&DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)>,
    cell: (usize, usize),
) -> Result<DVector<f64>> {
    let (mut e, mut jac) = resid(&z)?;
    let mut norm = linalg::max_abs_vec(&e);
    for _ in 0..NEWTON_MAX_ITER {
        if norm <= NEWTON_TOL {
            return Ok(z);
        }
        let step = linalg::solve(&jac, &(-&e)).map_err(|_| Error::DegenerateBackground { location: format!("cell {cell:?}") })?;
        let mut t = 1.0;
        loop {
            let trial = &z + &step * t;
            let (e2, j2) = resid(&trial)?;
            let n2 = linalg::max_abs_vec(&e2);
            if n2 <= norm || t < 1e-3 {
                if n2 >= norm && linalg::max_abs_vec(&step) * t <= 1e-14 * (1.0 + linalg::max_abs_vec(&z)) && norm <= 1e-8 {
                    // roundoff floor
                    return Ok(z);
                }
                z = trial;
                e = e2;
                jac = j2;
                norm = n2;
                break;
            }
            t *= NEWTON_DAMPING;
        }
    }
    if norm <= NEWTON_TOL {
        Ok(z)
    } else {
        Err(Error::SolverDivergence { i: cell.0, j: cell.1, residual: norm })
    }
}

fn solve_cell(bg: &Background, lat: &LightConeLattice, a: &DVector<f64>, b: &DVector<f64>, c: &DVector<f64>, cell: (usize, usize)) -> Result<DVector<f64>> {
    let d0 = b + c - a;
    newton(d0, |d| {
        let p = plaquette(a, b, c, d, lat.h1, lat.h2);
        bg.el_operator(p.mid.as_slice(), &p.u, &p.v, &p.f12, (lat.h1, lat.h2))
    }, cell)
}

/// Leaf assigned to the timelike boundary.
fn boundary_leaf(bg: &Background, flag: EdgeFlag, at: &DVector<f64>) -> Result<BraneLeaf> {
    let m = bg.dim;
    match flag {
        EdgeFlag::Free => Ok(BraneLeaf { leaf: Leaf::coordinate_slice(m, &[]), beta: Form::zero(m, 2) }),
        EdgeFlag::Fixed => {
            let fixed: Vec<(usize, f64)> = (0..m).map(|i| (i, at[i])).collect();
            Ok(BraneLeaf { leaf: Leaf::coordinate_slice(m, &fixed), beta: Form::zero(0, 2) })
        }
        EdgeFlag::Brane(k) => bg.leaves.get(k).cloned().ok_or_else(|| Error::InvalidInput(format!("no leaf with index {k}"))),
    }
}

/// Leaf coordinates of the point of `leaf` nearest to `x` (Gauss-Newton from `y0`).
pub fn leaf_project(leaf: &Leaf, x: &DVector<f64>, y0: &[f64]) -> (Vec<f64>, f64) {
    let mut y = y0.to_vec();
    for _ in 0..30 {
        if y.is_empty() {
            break;
        }
        let t = leaf.tangents(&y);
        let r = x - DVector::from_vec(leaf.point(&y));
        let dy = linalg::coords_in(&t, &r);
        for (a, v) in dy.iter().enumerate() {
            y[a] += v;
        }
        if linalg::max_abs_vec(&dy) < 1e-15 {
            break;
        }
    }
    let dist = (x - DVector::from_vec(leaf.point(&y))).norm();
    (y, dist)
}

fn beta_matrix(beta: &Form, y: &[f64]) -> DMatrix<f64> {
    let p = y.len();
    if p < 2 {
        return DMatrix::zeros(p, p);
    }
    DMatrix::from_fn(p, p, |a, b| beta.component(&[a, b]).eval(y))
}

/// Natural boundary condition `r(u, w) - r(w, v) + beta_N(d_tau f, w)` for
/// leaf tangents `w` (the lift of `d_tau` lies in `C`), with `u, v` the
/// light-cone derivatives rebuilt from `d_sigma f = (b - c)/h` and
/// `d_tau f = (d - a)/h` on the edge `a -> d`.
fn brane_condition(
    bg: &Background,
    brane: &BraneLeaf,
    pts: [&DVector<f64>; 4],
    ys: (&[f64], &[f64]),
    h: f64,
) -> Result<DVector<f64>> {
    let [a, b, c, d] = pts;
    let fb = (a + d) / 2.0;
    let y_mid: Vec<f64> = ys.0.iter().zip(ys.1).map(|(p, q)| 0.5 * (p + q)).collect();
    let tangents = brane.leaf.tangents(&y_mid);
    let (dsigma, dtau) = ((b - c) / h, (d - a) / h);
    let u = (&dtau + &dsigma) / 2.0;
    let v = (&dtau - &dsigma) / 2.0;
    let mut out = DVector::zeros(tangents.ncols());
    if let Some(r) = bg.r(fb.as_slice())? {
        out += tangents.transpose() * (r.transpose() * u - r * v);
    }
    let dtau_y = DVector::from_iterator(y_mid.len(), ys.0.iter().zip(ys.1).map(|(p, q)| (q - p) / h));
    out += beta_matrix(&brane.beta, &y_mid).transpose() * dtau_y;
    Ok(out)
}

/// Solve `S_r`-criticality on the lattice from data on the characteristics
/// (and the boundary condition on the diagonal for the half plane).
pub fn solve_sr(bg: &Background, lat: &LightConeLattice, data: &InitialData) -> Result<ChartMap> {
    if !bg.is_sr() {
        return Err(Error::InvalidInput("solve_sr needs an SR background".into()));
    }
    if data.dim != bg.dim {
        return Err(Error::Structural("data and background dimensions differ".into()));
    }
    lat.validate()?;
    let mut f = ChartMap::empty(lat);
    for i in 0..=lat.n1 {
        let (t1, t2) = lat.times(i, 0);
        f.set(i, 0, data.eval(t1, t2));
    }
    if !lat.is_half_plane() {
        for j in 1..=lat.n2 {
            let (t1, t2) = lat.times(0, j);
            f.set(0, j, data.eval(t1, t2));
        }
        for j in 0..lat.n2 {
            for i in 0..lat.n1 {
                let d = solve_cell(bg, lat, f.get(i, j), f.get(i + 1, j), f.get(i, j + 1), (i, j))?;
                f.set(i + 1, j + 1, d);
            }
        }
        return Ok(f);
    }
    let flag = lat.boundary.diagonal.expect("half plane");
    let m = bg.dim;
    let h = lat.h1;
    let origin = f.get(0, 0).clone();
    let mut y_prev: Option<Vec<f64>> = None;
    for k in 1..=lat.n1.min(lat.n2) {
        let (a, b) = (f.get(k - 1, k - 1).clone(), f.get(k, k - 1).clone());
        let brane = match flag {
            EdgeFlag::Fixed => {
                let (t1, t2) = lat.times(k, k);
                boundary_leaf(bg, flag, &data.eval(t1, t2))?
            }
            _ => boundary_leaf(bg, flag, &origin)?,
        };
        let p = brane.leaf.leaf_dim();
        let y_a = match (&y_prev, flag) {
            (Some(y), EdgeFlag::Brane(_) | EdgeFlag::Free) => y.clone(),
            _ => leaf_project(&brane.leaf, &a, &vec![0.0; p]).0,
        };
        let y_a = leaf_project(&brane.leaf, &a, &y_a).0;
        // unknowns: ghost c (m) and leaf coordinates of d (p); the guess is the free-boson stencil
        let (y_d0, _) = leaf_project(&brane.leaf, &(&b * 2.0 - &a), &y_a);
        let d_guess = DVector::from_vec(brane.leaf.point(&y_d0));
        let mut z0 = DVector::zeros(m + p);
        z0.rows_mut(0, m).copy_from(&(&a + &d_guess - &b));
        z0.rows_mut(m, p).copy_from(&DVector::from_vec(y_d0));
        let leaf = brane.leaf.clone();
        let eval = |z: &DVector<f64>| -> Result<DVector<f64>> {
            let c = z.rows(0, m).into_owned();
            let y_d: Vec<f64> = z.rows(m, p).iter().cloned().collect();
            let d = DVector::from_vec(leaf.point(&y_d));
            let pq = plaquette(&a, &b, &c, &d, h, h);
            let (e, _) = bg.el_operator(pq.mid.as_slice(), &pq.u, &pq.v, &pq.f12, (h, h))?;
            let bc = brane_condition(bg, &brane, [&a, &b, &c, &d], (&y_a, &y_d), h)?;
            let mut out = DVector::zeros(m + p);
            // scale the boundary rows like the interior ones
            out.rows_mut(0, m).copy_from(&(e * (h * h)));
            out.rows_mut(m, p).copy_from(&(bc * h));
            Ok(out)
        };
        let z = newton(z0, |z| {
            let e = eval(z)?;
            let jac = fd::jacobian(|w: &[f64]| eval(&DVector::from_column_slice(w)).unwrap_or_else(|_| DVector::from_element(m + p, f64::NAN)), z.as_slice(), 1e-6);
            Ok((e, jac))
        }, (k - 1, k - 1))?;
        let y_d: Vec<f64> = z.rows(m, p).iter().cloned().collect();
        f.set(k - 1, k, z.rows(0, m).into_owned());
        f.set(k, k, DVector::from_vec(brane.leaf.point(&y_d)));
        y_prev = Some(y_d);
        for i in k..lat.n1 {
            let d = solve_cell(bg, lat, f.get(i, k - 1), f.get(i + 1, k - 1), f.get(i, k), (i, k - 1))?;
            f.set(i + 1, k, d);
        }
    }
    Ok(f)
}

/// Boundary residuals per diagonal edge.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct BoundaryReport {
    /// Distance of the boundary points from their leaf.
    pub off_leaf: f64,
    /// Distance of `d_tau f` from the leaf tangent space, per edge.
    pub membership: Vec<f64>,
    /// Natural boundary condition (`beta_N` contraction), per edge.
    pub beta: Vec<f64>,
}

impl BoundaryReport {
    pub fn max_membership(&self) -> f64 {
        self.membership.iter().cloned().fold(0.0, f64::max)
    }
    pub fn max_beta(&self) -> f64 {
        self.beta.iter().cloned().fold(0.0, f64::max)
    }
    pub fn max(&self) -> f64 {
        self.max_membership().max(self.max_beta()).max(self.off_leaf)
    }
}

/// Residuals of the brane boundary condition along the diagonal.  `flag`
/// assigns the boundary to a leaf (it defaults to the lattice's flag).
pub fn boundary_residual(f: &ChartMap, bg: &Background, lat: &LightConeLattice, flag: Option<EdgeFlag>) -> Result<BoundaryReport> {
    let flag = flag.or(lat.boundary.diagonal).ok_or_else(|| Error::InvalidInput("lattice has no timelike boundary".into()))?;
    let h = lat.h1;
    let mut rep = BoundaryReport::default();
    let origin = f.get(0, 0).clone();
    let mut y_prev: Option<Vec<f64>> = None;
    for k in lat.diagonal_edges() {
        let (a, b, c, d) = (f.get(k - 1, k - 1), f.get(k, k - 1), f.get(k - 1, k), f.get(k, k));
        let brane = boundary_leaf(bg, flag, if flag == EdgeFlag::Fixed { a } else { &origin })?;
        let p = brane.leaf.leaf_dim();
        let y0 = y_prev.clone().unwrap_or_else(|| vec![0.0; p]);
        let (y_a, da) = leaf_project(&brane.leaf, a, &y0);
        let (y_d, dd) = leaf_project(&brane.leaf, d, &y_a);
        rep.off_leaf = rep.off_leaf.max(da).max(if flag == EdgeFlag::Fixed { 0.0 } else { dd });
        let y_mid: Vec<f64> = y_a.iter().zip(&y_d).map(|(p, q)| 0.5 * (p + q)).collect();
        let dtau = (d - a) / h;
        rep.membership.push(if p == 0 { dtau.norm() } else { linalg::distance_from_span(&brane.leaf.tangents(&y_mid), &dtau) });
        let bc = brane_condition(bg, &brane, [a, b, c, d], (&y_a, &y_d), h)?;
        rep.beta.push(linalg::max_abs_vec(&bc));
        y_prev = Some(y_d);
    }
    Ok(rep)
}

/// Discrete pullback of `F_L` through the lift of the plaquette tangents
/// into `L` (WZ-type `L` in the CA twisted by `h`).
pub fn criticality_via_fl(f: &ChartMap, l: &LagrangianFrame, h: &ClosedThreeForm, lat: &LightConeLattice) -> Result<ResidualField> {
    let cells = lat.cells();
    let mids: Vec<Plaquette> = cells
        .iter()
        .map(|&(i, j)| {
            let [a, b, c, d] = corners(f, i, j);
            plaquette(a, b, c, d, lat.h1, lat.h2)
        })
        .collect();
    let probe: Vec<Vec<f64>> = mids.iter().step_by((mids.len() / 16).max(1)).map(|p| p.mid.iter().cloned().collect()).collect();
    let ni = noninvolutivity(l, h, &probe)?;
    let k = l.rank();
    let vectors = cells
        .par_iter()
        .zip(mids.par_iter())
        .map(|(&(i, j), p)| {
            let x = p.mid.as_slice();
            let anchors = l.anchor_matrix(x);
            let lift = |w: &DVector<f64>| -> Result<DVector<f64>> {
                let co = linalg::coords_in(&anchors, w);
                let miss = (&anchors * &co - w).norm();
                if miss > 1e-9 * (1.0 + w.norm()) {
                    return Err(Error::LiftFailure { i, j, reason: format!("tangent leaves a(L) by {miss:e}") });
                }
                Ok(co)
            };
            let (ca, cb) = (lift(&p.u)?, lift(&p.v)?);
            let mut out = DVector::zeros(k);
            for a in 0..k {
                for b in 0..k {
                    let w = ca[a] * cb[b];
                    if w != 0.0 {
                        out += ni.f_l(a, b, x) * w;
                    }
                }
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ResidualField::from_vectors(cells, vectors))
}

type SectionFn<'a> = &'a (dyn Fn(&[f64]) -> DVector<f64> + Sync);

/// Whether the flow of the section `s` preserves the background subbundle
/// (`R = graph r` with `R^perp`, or `L = TM` for a WZ background):
/// `max |<[s, r_i], q_j>|` over the points, derivatives by finite differences.
pub fn flow_preserves(s: SectionFn, bg: &Background, points: &[Vec<f64>]) -> Result<f64> {
    let m = bg.dim;
    let worst = points
        .par_iter()
        .map(|x| -> Result<f64> {
            let h = bg.h(x)?;
            let mut worst: f64 = 0.0;
            for i in 0..m {
                let ri = |y: &[f64]| -> DVector<f64> {
                    let mut out = DVector::zeros(2 * m);
                    out[i] = 1.0;
                    if let Ok(Some(r)) = bg.r(y) {
                        out.rows_mut(m, m).copy_from(&r.row(i).transpose());
                    }
                    out
                };
                let br = fd_bracket(&|y: &[f64]| s(y), &ri, x, h.as_deref());
                let r = bg.r(x)?;
                for j in 0..m {
                    let mut q = DVector::zeros(2 * m);
                    q[j] = 1.0;
                    if let Some(r) = &r {
                        q.rows_mut(m, m).copy_from(&(-r.column(j)));
                    }
                    worst = worst.max(chart_pairing(&br, &q).abs());
                }
            }
            Ok(worst)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(worst.into_iter().fold(0.0, f64::max))
}

pub fn poly_section(s: &GeneralizedSection) -> impl Fn(&[f64]) -> DVector<f64> + Sync + '_ {
    move |x| s.eval(x)
}

/// Edge values of `f~^* <s, .>` and its plaquette closure.
#[derive(Clone, Debug, PartialEq)]
pub struct NoetherCurrent {
    /// `J` integrated along the `t1` edge starting at `(i, j)`.
    pub t1_edges: ChartMap,
    /// `J` integrated along the `t2` edge starting at `(i, j)`.
    pub t2_edges: ChartMap,
    pub closure: ResidualField,
    pub flow_residual: f64,
}

/// Noether current of a section whose flow preserves the background
/// subbundle; the edge lift is `R` on `t1` edges and `R^perp` on `t2` edges.
pub fn noether_current(f: &ChartMap, s: SectionFn, bg: &Background, lat: &LightConeLattice) -> Result<NoetherCurrent> {
    let pts: Vec<Vec<f64>> = f.points().map(|(_, _, v)| v.iter().cloned().collect()).step_by(((lat.n1 * lat.n2) / 64).max(1)).collect();
    let flow = flow_preserves(s, bg, &pts)?;
    if flow > FLOW_TOL {
        return Err(Error::Precondition(format!("the flow of the section does not preserve the background subbundle (residual {flow:e})")));
    }
    let m = bg.dim;
    let edge = |p: &DVector<f64>, q: &DVector<f64>, first: bool| -> Result<f64> {
        let mid = (p + q) / 2.0;
        let df = q - p;
        let sv = s(mid.as_slice());
        let (su, alpha) = (sv.rows(0, m).into_owned(), sv.rows(m, m).into_owned());
        let mut j = alpha.dot(&df);
        if let Some(r) = bg.r(mid.as_slice())? {
            j += if first { df.dot(&(&r * &su)) } else { -su.dot(&(&r * &df)) };
        }
        Ok(j)
    };
    let mut e1 = ChartMap::empty(lat);
    let mut e2 = ChartMap::empty(lat);
    for (i, j, v) in f.points() {
        if let Some(w) = f.try_get(i + 1, j) {
            e1.set(i, j, DVector::from_element(1, edge(v, w, true)?));
        }
        if let Some(w) = f.try_get(i, j + 1) {
            e2.set(i, j, DVector::from_element(1, edge(v, w, false)?));
        }
    }
    let cells = lat.cells();
    let vectors = cells
        .iter()
        .map(|&(i, j)| {
            let circ = e1.get(i, j)[0] + e2.get(i + 1, j)[0] - e1.get(i, j + 1)[0] - e2.get(i, j)[0];
            DVector::from_element(1, circ / (lat.h1 * lat.h2))
        })
        .collect();
    Ok(NoetherCurrent { t1_edges: e1, t2_edges: e2, closure: ResidualField::from_vectors(cells, vectors), flow_residual: flow })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equivariant::DoubleModel;
    use crate::liealg::{abelian_constants, su2_constants};
    use crate::poly::VectorField;
    use crate::reduction::{graph_subspace, reduce, Side, SplittingRule};

    fn lattice(n: usize) -> LightConeLattice {
        LightConeLattice::square(n, 1.0).unwrap()
    }

    #[test]
    fn free_boson_reproduces_dalembert_data() {
        for dim in [1, 2] {
            let bg = Background::sr_constant(DMatrix::identity(dim, dim) * 1.7);
            let data = InitialData::dalembert(dim, 3, 0.5);
            let lat = lattice(40);
            let f = solve_sr(&bg, &lat, &data).unwrap();
            let exact = sample(&data, &lat);
            assert!(f.max_distance(&exact) < 1e-13, "{}", f.max_distance(&exact));
            assert!(el_residual(&f, &bg, &lat).unwrap().max() < 1e-9);
        }
    }

    #[test]
    fn wz_residual_vanishes_without_h() {
        let bg = Background::wz(&ClosedThreeForm::zero(3));
        let lat = lattice(8);
        let f = sample(&InitialData::random_smooth(3, 1, 0.5), &lat);
        assert_eq!(el_residual(&f, &bg, &lat).unwrap().max(), 0.0);
    }

    #[test]
    fn wz_residual_is_a_determinant_on_a_plane() {
        let h = ClosedThreeForm::new(Form::basic(3, &[0, 1, 2], 1.0)).unwrap();
        let bg = Background::wz(&h);
        let lat = lattice(6);
        let base = InitialData::random_smooth(3, 5, 0.7);
        let data = InitialData::from_fn("plane", 3, false, move |t1, t2| {
            let mut v = base.eval(t1, t2);
            v[2] = 0.4;
            v
        });
        let f = sample(&data, &lat);
        let res = el_residual(&f, &bg, &lat).unwrap();
        for (k, &(i, j)) in res.cells.iter().enumerate() {
            let [a, b, c, d] = corners(&f, i, j);
            let p = plaquette(a, b, c, d, lat.h1, lat.h2);
            let det = p.u[0] * p.v[1] - p.u[1] * p.v[0];
            assert!((res.vectors[k][2] - det).abs() < 1e-13);
            assert!(res.vectors[k][0].abs() < 1e-13 && res.vectors[k][1].abs() < 1e-13);
        }
    }

    #[test]
    fn residual_depends_only_on_h() {
        // omega and omega + d(x1 dx3) give the same residual
        let omega = Form::term(3, &[0, 1], Poly::var(3, 2).mul(&Poly::var(3, 0)));
        let tau = Form::term(3, &[0, 2], Poly::constant(3, 1.0)).add(&Form::term(3, &[1, 2], Poly::var(3, 1).scale(2.0)));
        assert!(tau.d().is_zero());
        let lat = lattice(10);
        let f = sample(&InitialData::random_smooth(3, 8, 0.6), &lat);
        let r1 = el_residual(&f, &Background::wz_potential(&omega).unwrap(), &lat).unwrap();
        let r2 = el_residual(&f, &Background::wz_potential(&omega.add(&tau)).unwrap(), &lat).unwrap();
        assert_eq!(r1.vectors, r2.vectors);
    }

    fn pcm() -> (ReducedCA, Background) {
        let m = DoubleModel::semiabelian(&su2_constants(), None).unwrap();
        let red = reduce(&m, Side::GPrime, SplittingRule::Induced).unwrap();
        let bg = Background::reduced(&red, &graph_subspace(&DMatrix::identity(3, 3)));
        (red, bg)
    }

    #[test]
    fn pcm_truncation_error_is_second_order() {
        let (red, bg) = pcm();
        let data = InitialData::pcm_geodesic(&red.chart, &[0.3, -0.2, 0.1], &[0.6, 0.8, 0.0], 4);
        let res: Vec<f64> = [16, 32, 64]
            .iter()
            .map(|&n| {
                let lat = lattice(n);
                el_residual(&sample(&data, &lat), &bg, &lat).unwrap().max()
            })
            .collect();
        for w in res.windows(2) {
            let ratio = w[0] / w[1];
            assert!((ratio - 4.0).abs() < 0.6, "{res:?}");
        }
    }

    #[test]
    fn pcm_solver_meets_tolerance_and_converges() {
        let (red, bg) = pcm();
        let data = InitialData::pcm_geodesic(&red.chart, &[0.3, -0.2, 0.1], &[0.6, 0.8, 0.0], 4);
        let mut errs = Vec::new();
        for n in [16, 32] {
            let lat = lattice(n);
            let f = solve_sr(&bg, &lat, &data).unwrap();
            assert!(el_residual(&f, &bg, &lat).unwrap().max() < 1e-8);
            errs.push(f.max_distance(&sample(&data, &lat)));
        }
        assert!(errs[0] / errs[1] > 3.0, "{errs:?}");
    }

    #[test]
    fn noether_currents_of_the_free_boson() {
        let c = 1.3;
        let bg = Background::sr_constant(DMatrix::from_element(1, 1, c));
        let lat = lattice(20);
        let f = solve_sr(&bg, &lat, &InitialData::dalembert(1, 2, 0.4)).unwrap();
        let winding = GeneralizedSection::covector(Form::basic(1, &[0], 1.0));
        let j = noether_current(&f, &poly_section(&winding), &bg, &lat).unwrap();
        assert!(j.closure.max() < 1e-11);
        let shift = GeneralizedSection::vector(VectorField::coordinate(1, 0));
        let j = noether_current(&f, &poly_section(&shift), &bg, &lat).unwrap();
        // edges carry c d_1 f and -c d_2 f
        let (a, b) = (f.get(3, 4)[0], f.get(4, 4)[0]);
        assert!((j.t1_edges.get(3, 4)[0] - c * (b - a)).abs() < 1e-15);
        assert!(j.closure.max() < 1e-8);
        // closure equals the wave residual
        let g = sample(&InitialData::random_smooth(1, 3, 0.5), &lat);
        let j = noether_current(&g, &poly_section(&shift), &bg, &lat).unwrap();
        let el = el_residual(&g, &bg, &lat).unwrap();
        for k in 0..el.cells.len() {
            assert!((j.closure.vectors[k][0] - el.vectors[k][0]).abs() < 1e-9 * (1.0 + el.vectors[k][0].abs()));
        }
    }

    #[test]
    fn noether_requires_a_symmetry() {
        let bg = Background::sr_poly(vec![vec![Poly::constant(1, 1.0).add(&Poly::var(1, 0).mul(&Poly::var(1, 0)))]], None);
        let lat = lattice(8);
        let f = sample(&InitialData::random_smooth(1, 1, 0.3), &lat);
        let shift = GeneralizedSection::vector(VectorField::coordinate(1, 0));
        assert!(matches!(noether_current(&f, &poly_section(&shift), &bg, &lat), Err(Error::Precondition(_))));
    }

    #[test]
    fn flow_preserves_examples() {
        let pts: Vec<Vec<f64>> = crate::sampling::halton_box(&crate::sampling::cube(3, 1.0), 20, 0);
        let h = ClosedThreeForm::new(Form::basic(3, &[0, 1, 2], 1.0)).unwrap();
        let wz = Background::wz(&h);
        let e1 = VectorField::coordinate(3, 0);
        // L = TM: dalpha + i_u H = 0 with alpha = +x2 dx3 under the determinant convention
        let good = GeneralizedSection::new(e1.clone(), Form::term(3, &[2], Poly::var(3, 1))).unwrap();
        let bad = GeneralizedSection::new(e1.clone(), Form::term(3, &[2], Poly::var(3, 1).scale(-1.0))).unwrap();
        let rg = flow_preserves(&poly_section(&good), &wz, &pts).unwrap();
        let rb = flow_preserves(&poly_section(&bad), &wz, &pts).unwrap();
        assert!(rg < 1e-10 && rb > 1.0, "{rg} {rb}");
        assert!(flow_preserves(&poly_section(&GeneralizedSection::vector(e1.clone())), &Background::wz(&ClosedThreeForm::zero(3)), &pts).unwrap() == 0.0);
        // a Killing field of a constant r
        let r = DMatrix::from_row_slice(3, 3, &[2.0, 0.5, 0.0, -0.5, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let sr = Background::sr_constant(r);
        assert!(flow_preserves(&poly_section(&GeneralizedSection::vector(e1)), &sr, &pts).unwrap() < 1e-12);
    }

    #[test]
    fn criticality_through_fl_matches_the_residual() {
        let lat = lattice(12);
        let f = sample(&InitialData::random_smooth(3, 9, 0.5), &lat);
        let h = ClosedThreeForm::new(Form::basic(3, &[0, 1, 2], 1.0).mul_poly(&Poly::var(3, 0).add(&Poly::constant(3, 2.0)))).unwrap();
        let el = el_residual(&f, &Background::wz(&h), &lat).unwrap();
        let fl = criticality_via_fl(&f, &LagrangianFrame::tangent(3), &h, &lat).unwrap();
        let diff = el.vectors.iter().zip(&fl.vectors).fold(0.0f64, |a, (x, y)| a.max(linalg::max_abs_vec(&(x - y))));
        assert!(diff < 1e-12, "{diff}");
        // graph of omega in the standard CA
        let omega = Form::term(3, &[0, 1], Poly::var(3, 2).mul(&Poly::var(3, 2)));
        let l = LagrangianFrame::graph(&omega).unwrap();
        let fl = criticality_via_fl(&f, &l, &ClosedThreeForm::zero(3), &lat).unwrap();
        let el = el_residual(&f, &Background::wz_potential(&omega).unwrap(), &lat).unwrap();
        let diff = el.vectors.iter().zip(&fl.vectors).fold(0.0f64, |a, (x, y)| a.max(linalg::max_abs_vec(&(x - y))));
        assert!(diff < 1e-12, "{diff}");
    }

    #[test]
    fn branes_of_the_free_boson() {
        let bg = Background::sr_constant(DMatrix::from_element(1, 1, 2.0));
        let p = TrigProfile { offset: 0.1, modes: vec![(0.3, 1.3, 0.4), (0.1, 2.1, 1.0)] };
        // Neumann: f = p(t1) + p(t2) is even in sigma
        let pn = p.clone();
        let neumann = InitialData::from_fn("neumann", 1, true, move |t1, t2| DVector::from_element(1, pn.eval(t1) + pn.eval(t2)));
        let lat = LightConeLattice::half_plane(24, 1.0, EdgeFlag::Free).unwrap();
        let f = solve_sr(&bg, &lat, &neumann).unwrap();
        assert!(f.max_distance(&sample(&neumann, &lat)) < 1e-12);
        let rep = boundary_residual(&f, &bg, &lat, None).unwrap();
        assert!(rep.max() < 1e-10, "{rep:?}");
        // Dirichlet: f = p(t1) - p(t2) vanishes on the boundary
        let pd = p.clone();
        let dirichlet = InitialData::from_fn("dirichlet", 1, true, move |t1, t2| DVector::from_element(1, pd.eval(t1) - pd.eval(t2)));
        let lat = LightConeLattice::half_plane(24, 1.0, EdgeFlag::Fixed).unwrap();
        let f = solve_sr(&bg, &lat, &dirichlet).unwrap();
        assert!(f.max_distance(&sample(&dirichlet, &lat)) < 1e-12);
        assert!(boundary_residual(&f, &bg, &lat, None).unwrap().max_membership() < 1e-12);
        // the Neumann solution violates the Dirichlet condition and vice versa
        let g = sample(&neumann, &lat);
        assert!(boundary_residual(&g, &bg, &lat, Some(EdgeFlag::Fixed)).unwrap().max_membership() > 0.1);
    }

    #[test]
    fn csv_layout() {
        let lat = lattice(2);
        let f = sample(&InitialData::dalembert(2, 0, 0.1), &lat);
        let csv = f.to_csv(&lat);
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("i,j,t1,t2,x0,x1"));
        assert_eq!(lines.count(), 9);
    }

    #[test]
    fn preset_names_round_trip() {
        for s in ["dalembert", "pcm-geodesic", "random-smooth(42)"] {
            let p: DataPreset = s.parse().unwrap();
            assert_eq!(String::from(p), s);
        }
        assert!("random-smooth(x)".parse::<DataPreset>().is_err());
        let _ = abelian_constants(1);
    }
}
