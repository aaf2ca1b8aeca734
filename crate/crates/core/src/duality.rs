//! Poisson-Lie T-duality on the lattice: lift a sigma-model map on `M/G` to
//! `D`, project it to `M/G'`, and transport branes between the two sides.
//!
//! Light-cone edges are lifted into fixed subspaces of `d`: `t1` edges into
//! `R_D`, `t2` edges into its annihilator `R_D^perp` (right trivialization).

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::courant::Leaf;
use crate::equivariant::DoubleModel;
use crate::error::{Error, Result};
use crate::fd;
use crate::liealg::Subspace;
use crate::linalg;
use crate::poly::{Form, Poly};
use crate::reduction::{exterior_d, reduce, ReducedCA, Side, SplittingRule, TRANSVERSALITY_TOL};
use crate::sigma::{el_residual, Background, BraneLeaf, ChartMap, EdgeFlag, LatticeMap, LightConeLattice, ResidualField};

pub type GroupMap = LatticeMap<DMatrix<f64>>;

/// A model on `M/G` for `G` the subgroup on `side`, built from `R_D`.
#[derive(Clone, Debug)]
pub struct DualityScenario {
    pub model: DoubleModel,
    pub side: Side,
    pub rule: SplittingRule,
    pub r_d: Subspace,
    pub r_perp: Subspace,
    pub red: ReducedCA,
}

impl DualityScenario {
    pub fn new(model: DoubleModel, side: Side, rule: SplittingRule, r_d: Subspace) -> Result<Self> {
        let n = model.dim();
        if r_d.basis.nrows() != n || 2 * r_d.dim() != n || linalg::rank(&r_d.basis, 1e-10) != r_d.dim() {
            return Err(Error::InvalidInput("R_D must be a half-dimensional subspace of d".into()));
        }
        let b = model.algebra().pairing();
        let r_perp = Subspace::new(linalg::null_space(&(r_d.basis.transpose() * b), 1e-10));
        if r_perp.dim() != r_d.dim() {
            return Err(Error::InvalidInput("R_D^perp has the wrong dimension".into()));
        }
        let red = reduce(&model, side, rule)?;
        Ok(Self { model, side, rule, r_d, r_perp, red })
    }

    pub fn dual(&self) -> Result<Self> {
        Self::new(self.model.clone(), self.side.other(), self.rule, self.r_d.clone())
    }

    pub fn dim(&self) -> usize {
        self.red.dim()
    }

    pub fn background(&self) -> Background {
        Background::reduced(&self.red, &self.r_d)
    }

    /// The fiber group element `exp(sum c_i q_i)`.
    pub fn fiber_element(&self, c: &[f64]) -> DMatrix<f64> {
        self.red.chart.group.exp(&(&self.red.chart.q.basis * DVector::from_column_slice(c)))
    }
}

/// `A_+` and `A_-` at `m` in `D`: `w = v + Ad_m xi` with `v` in `R_D`
/// (respectively `R_D^perp`) and `xi` in the fiber algebra; rows give `xi`.
#[derive(Clone, Debug)]
pub struct ConnectionForms {
    pub plus: DMatrix<f64>,
    pub minus: DMatrix<f64>,
}

pub fn extract_ag(scn: &DualityScenario, m: &DMatrix<f64>) -> Result<ConnectionForms> {
    let q = &scn.red.chart.q.basis;
    let ad_q = scn.red.chart.group.adjoint_matrix(m)? * q;
    let form = |sub: &DMatrix<f64>| -> Result<DMatrix<f64>> {
        let split = linalg::hcat(sub, &ad_q);
        transverse(&split).map_err(|_| Error::DegenerateBackground { location: "connection extraction".into() })?;
        let inv = linalg::inverse(&split)?;
        Ok(inv.rows(sub.ncols(), q.ncols()).into_owned())
    };
    Ok(ConnectionForms { plus: form(&scn.r_d.basis)?, minus: form(&scn.r_perp.basis)? })
}

fn transverse(a: &DMatrix<f64>) -> std::result::Result<(), f64> {
    let smin = a.clone().svd(false, false).singular_values.iter().cloned().fold(f64::INFINITY, f64::min);
    if smin < TRANSVERSALITY_TOL {
        Err(smin)
    } else {
        Ok(())
    }
}

/// Fiber element moving the lift from `xp` to `xq` along an edge lifted into `sub`.
fn edge_transport(scn: &DualityScenario, sub: &DMatrix<f64>, xp: &DVector<f64>, xq: &DVector<f64>, at: (usize, usize)) -> Result<DMatrix<f64>> {
    let mid: Vec<f64> = xp.iter().zip(xq.iter()).map(|(a, b)| 0.5 * (a + b)).collect();
    let fr = scn.red.chart.frame(&mid, false);
    let split = linalg::hcat(sub, &fr.vert);
    transverse(&split).map_err(|s| Error::LiftFailure { i: at.0, j: at.1, reason: format!("R_D not transverse to the fiber (singular value {s:.2e})") })?;
    let sol = linalg::solve(&split, &(&fr.j * (xq - xp))).map_err(|e| Error::LiftFailure { i: at.0, j: at.1, reason: e.to_string() })?;
    let b = sol.rows(sub.ncols(), sol.nrows() - sub.ncols()).into_owned();
    Ok(scn.red.chart.group.exp(&(-(&scn.red.chart.q.basis * b))))
}

/// Transports on every `t1` edge `(i, j) -> (i+1, j)` and `t2` edge `(i, j) -> (i, j+1)`.
struct Transports {
    t1: LatticeMap<DMatrix<f64>>,
    t2: LatticeMap<DMatrix<f64>>,
}

fn transports(f: &ChartMap, scn: &DualityScenario) -> Result<Transports> {
    let mut edges = Vec::new();
    for (i, j, _) in f.points() {
        if f.try_get(i + 1, j).is_some() {
            edges.push((i, j, true));
        }
        if f.try_get(i, j + 1).is_some() {
            edges.push((i, j, false));
        }
    }
    let vals: Vec<DMatrix<f64>> = edges
        .par_iter()
        .map(|&(i, j, t1)| {
            let (q, sub) = if t1 { (f.get(i + 1, j), &scn.r_d.basis) } else { (f.get(i, j + 1), &scn.r_perp.basis) };
            edge_transport(scn, sub, f.get(i, j), q, (i, j))
        })
        .collect::<Result<_>>()?;
    let empty = LatticeMap { n1: f.n1, n2: f.n2, values: vec![None; f.values.len()] };
    let mut out = Transports { t1: empty.clone(), t2: empty };
    for ((i, j, t1), v) in edges.into_iter().zip(vals) {
        if t1 {
            out.t1.set(i, j, v);
        } else {
            out.t2.set(i, j, v);
        }
    }
    Ok(out)
}

/// Order in which the lattice is swept from the seed at `(0, 0)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepOrder {
    /// Up the `t2` axis first, then along `t1` rows.
    T2First,
    /// Along `t1` first where possible.
    T1First,
}

impl SweepOrder {
    fn parent(self, f: &ChartMap, i: usize, j: usize) -> Option<(usize, usize)> {
        let candidates = match self {
            SweepOrder::T2First => [(j > 0).then(|| (i, j - 1)), (i > 0 && j == 0).then(|| (i - 1, 0))],
            SweepOrder::T1First => [(i > 0).then(|| (i - 1, j)), (j > 0).then(|| (i, j - 1))],
        };
        candidates.into_iter().flatten().find(|&(a, b)| f.try_get(a, b).is_some())
    }
}

#[derive(Clone, Debug)]
pub struct LiftResult {
    /// `phi = k(f) g` in `D`.
    pub phi: GroupMap,
    /// The fiber part `g`.
    pub fiber: GroupMap,
    /// `log` of the plaquette holonomy over the cell area.
    pub flatness: ResidualField,
    /// Sum of plaquette holonomy norms.
    pub path_independence: f64,
}

pub fn lift(f: &ChartMap, scn: &DualityScenario, lat: &LightConeLattice, seed: &DMatrix<f64>, order: SweepOrder) -> Result<LiftResult> {
    if f.try_get(0, 0).is_none() {
        return Err(Error::InvalidInput("the map must be defined at the seed point".into()));
    }
    let tr = transports(f, scn)?;
    lift_with(f, scn, lat, seed, order, &tr)
}

fn lift_with(f: &ChartMap, scn: &DualityScenario, lat: &LightConeLattice, seed: &DMatrix<f64>, order: SweepOrder, tr: &Transports) -> Result<LiftResult> {
    let group = &scn.red.chart.group;
    let mut fiber: GroupMap = LatticeMap { n1: f.n1, n2: f.n2, values: vec![None; f.values.len()] };
    fiber.set(0, 0, seed.clone());
    for j in 0..=f.n2 {
        for i in 0..=f.n1 {
            if (i, j) == (0, 0) || f.try_get(i, j).is_none() {
                continue;
            }
            let (pi, pj) = order.parent(f, i, j).ok_or_else(|| Error::LiftFailure { i, j, reason: "no lifted neighbour".into() })?;
            let t = if pj == j { tr.t1.get(pi, pj) } else { tr.t2.get(pi, pj) };
            let g = t * fiber.get(pi, pj);
            fiber.set(i, j, g);
        }
    }
    let phi = fiber.map(|i, j, g| scn.red.chart.point(f.get(i, j).as_slice()) * g);
    let area = lat.h1 * lat.h2;
    let mut cells = Vec::new();
    let mut vecs = Vec::new();
    for (i, j) in lat.cells() {
        let (Some(ab), Some(bd), Some(ac), Some(cd)) = (tr.t1.try_get(i, j), tr.t2.try_get(i + 1, j), tr.t2.try_get(i, j), tr.t1.try_get(i, j + 1)) else {
            continue;
        };
        let hol = linalg::inverse(&(cd * ac))? * (bd * ab);
        let l = group.log(&hol).map_err(|e| Error::LiftFailure { i, j, reason: format!("plaquette holonomy: {e}") })?;
        cells.push((i, j));
        vecs.push(l / area);
    }
    let flatness = ResidualField::from_vectors(cells, vecs);
    let path_independence = flatness.norms.iter().sum::<f64>() * area;
    Ok(LiftResult { phi, fiber, flatness, path_independence })
}

/// Chart coordinates of `phi` in `chart`'s quotient, in parallel.
pub fn project(phi: &GroupMap, red: &ReducedCA) -> Result<ChartMap> {
    let pts: Vec<(usize, usize, &DMatrix<f64>)> = phi.points().collect();
    let xs: Vec<Vec<f64>> = pts.par_iter().map(|(_, _, m)| red.chart.chart_of(m)).collect::<Result<_>>()?;
    let mut out = ChartMap { n1: phi.n1, n2: phi.n2, values: vec![None; phi.values.len()] };
    for ((i, j, _), x) in pts.into_iter().zip(xs) {
        out.set(i, j, DVector::from_vec(x));
    }
    Ok(out)
}

/// Largest `|log(a^-1 b)|` over points where both maps are defined.
pub fn group_distance(a: &GroupMap, b: &GroupMap, scn: &DualityScenario) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for (i, j, x) in a.points() {
        if let Some(y) = b.try_get(i, j) {
            let l = scn.red.chart.group.log(&(linalg::inverse(x)? * y))?;
            worst = worst.max(linalg::max_abs_vec(&l));
        }
    }
    Ok(worst)
}

/// Right-trivialized log differences `log(phi_q phi_p^-1)` on `t1` and `t2` edges.
pub fn log_differences(phi: &GroupMap, scn: &DualityScenario) -> Result<(LatticeMap<DVector<f64>>, LatticeMap<DVector<f64>>)> {
    let group = &scn.red.chart.group;
    let empty = LatticeMap { n1: phi.n1, n2: phi.n2, values: vec![None; phi.values.len()] };
    let (mut d1, mut d2) = (empty.clone(), empty);
    for (i, j, p) in phi.points() {
        let pinv = linalg::inverse(p)?;
        if let Some(q) = phi.try_get(i + 1, j) {
            d1.set(i, j, group.log(&(q * &pinv))?);
        }
        if let Some(q) = phi.try_get(i, j + 1) {
            d2.set(i, j, group.log(&(q * &pinv))?);
        }
    }
    Ok((d1, d2))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct DualizeReport {
    pub n: usize,
    pub h: f64,
    pub el_residual: f64,
    pub flatness: f64,
    pub path_independence: f64,
    /// Largest distance in `D` between the two sweep orders.
    pub sweep_difference: f64,
    pub dual_el_residual: f64,
}

impl DualizeReport {
    /// Sweep orders agree within ten times the accumulated holonomy.
    pub fn sweeps_consistent(&self) -> bool {
        self.sweep_difference <= 10.0 * self.path_independence + 1e-12
    }
}

#[derive(Clone, Debug)]
pub struct Dualized {
    pub f_dual: ChartMap,
    pub lift: LiftResult,
    pub report: DualizeReport,
}

pub fn dualize(f: &ChartMap, scn: &DualityScenario, lat: &LightConeLattice, seed: &DMatrix<f64>) -> Result<Dualized> {
    let tr = transports(f, scn)?;
    let lift = lift_with(f, scn, lat, seed, SweepOrder::T2First, &tr)?;
    let other = lift_with(f, scn, lat, seed, SweepOrder::T1First, &tr)?;
    let dual = scn.dual()?;
    let f_dual = project(&lift.phi, &dual.red)?;
    let report = DualizeReport {
        n: lat.n1,
        h: lat.h1,
        el_residual: el_residual(f, &scn.background(), lat)?.max(),
        flatness: lift.flatness.max(),
        path_independence: lift.path_independence,
        sweep_difference: group_distance(&lift.phi, &other.phi, scn)?,
        dual_el_residual: el_residual(&f_dual, &dual.background(), lat)?.max(),
    };
    Ok(Dualized { f_dual, lift, report })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RoundTrip {
    /// Sup distance between the map and its double dual after gauge fixing.
    pub deviation: f64,
    pub deviation_ungauged: f64,
    /// Fiber coordinates of the `G'` gauge element.
    pub gauge: Vec<f64>,
}

/// Dualize, lift the dual back with a matching seed, fix the residual `G'`
/// gauge and compare with the original map.
pub fn roundtrip(f: &ChartMap, scn: &DualityScenario, lat: &LightConeLattice, seed: &DMatrix<f64>) -> Result<RoundTrip> {
    roundtrip_from(f, scn, lat, &dualize(f, scn, lat, seed)?)
}

/// `roundtrip` reusing a forward dualization of `f`.
pub fn roundtrip_from(f: &ChartMap, scn: &DualityScenario, lat: &LightConeLattice, d: &Dualized) -> Result<RoundTrip> {
    let dual = scn.dual()?;
    let phi0 = d.lift.phi.get(0, 0);
    let seed2 = linalg::inverse(&dual.red.chart.point(d.f_dual.get(0, 0).as_slice()))? * phi0;
    let back = lift(&d.f_dual, &dual, lat, &seed2, SweepOrder::T2First)?;
    let distance = |c: &[f64], pts: &[(usize, usize)]| -> Result<f64> {
        let h = dual.fiber_element(c);
        let ds: Vec<f64> = pts
            .par_iter()
            .map(|&(i, j)| {
                let x = scn.red.chart.chart_of(&(back.phi.get(i, j) * &h))?;
                Ok(linalg::max_abs_vec(&(DVector::from_vec(x) - f.get(i, j))))
            })
            .collect::<Result<_>>()?;
        Ok(ds.into_iter().fold(0.0, f64::max))
    };
    let all: Vec<(usize, usize)> = back.phi.points().map(|(i, j, _)| (i, j)).collect();
    let stride = (all.len() / 64).max(1);
    let sub: Vec<(usize, usize)> = all.iter().step_by(stride).cloned().collect();
    let k = dual.red.chart.q.dim();
    let mut c = vec![0.0; k];
    let mut best = distance(&c, &sub)?;
    let mut step = 0.05;
    while step > 1e-9 {
        let mut improved = false;
        for a in 0..k {
            for s in [step, -step] {
                let mut trial = c.clone();
                trial[a] += s;
                let v = distance(&trial, &sub)?;
                if v < best {
                    best = v;
                    c = trial;
                    improved = true;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    let ungauged = distance(&vec![0.0; k], &all)?;
    let gauged = distance(&c, &all)?;
    let (deviation, gauge) = if gauged < ungauged { (gauged, c) } else { (ungauged, vec![0.0; k]) };
    Ok(RoundTrip { deviation, deviation_ungauged: ungauged, gauge })
}

/// Shape of the leaves of `a(C_G)` on one side.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "dim")]
pub enum LeafKind {
    /// Rank 0: points (Dirichlet).
    Point,
    /// Full rank: the whole chart.
    Whole,
    /// A constant distribution of the given rank: parallel affine planes.
    Linear(usize),
}

#[derive(Clone, Debug, Serialize)]
pub struct BraneSide {
    pub side: Side,
    pub anchor_rank: usize,
    pub kind: LeafKind,
    /// Leaf tangent basis (columns); empty for point leaves.
    #[serde(skip)]
    pub tangents: DMatrix<f64>,
    /// Largest `|beta_N|` over the samples.
    pub beta_max: f64,
    /// Largest `|d beta_N - H|_N|` over the samples.
    pub dirac_defect: f64,
    /// Boundary flag for the lattice solver, when the brane is of a shipped kind.
    pub flag: Option<EdgeFlag>,
}

impl BraneSide {
    /// The leaf through `x0`, with `beta_N = 0`; only for shipped kinds.
    pub fn leaf_through(&self, x0: &[f64]) -> Option<BraneLeaf> {
        self.flag?;
        let m = self.tangents.nrows();
        let p = self.tangents.ncols();
        if p == 0 {
            return None;
        }
        let param = (0..m)
            .map(|i| (0..p).fold(Poly::constant(p, x0[i]), |acc, a| acc.add(&Poly::var(p, a).scale(self.tangents[(i, a)]))))
            .collect();
        Some(BraneLeaf { leaf: Leaf { param }, beta: Form::zero(p, 2) })
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct BraneTransport {
    pub closure: f64,
    pub isotropy: f64,
    pub g_side: BraneSide,
    pub gprime_side: BraneSide,
}

const BRANE_TOL: f64 = 1e-9;

/// Transport a Lagrangian subalgebra `C_D` to branes on both quotients.
pub fn brane_transport(model: &DoubleModel, rule: SplittingRule, c_d: &Subspace, samples: &[Vec<f64>]) -> Result<BraneTransport> {
    let alg = model.algebra();
    let n = alg.dim();
    if c_d.basis.nrows() != n || 2 * c_d.dim() != n {
        return Err(Error::InvalidInput("C_D must be half-dimensional".into()));
    }
    let closure = c_d.closure_residual(alg);
    let isotropy = c_d.isotropy_residual(alg);
    if closure > 1e-10 {
        return Err(Error::InvalidInput(format!("C_D is not a subalgebra (residual {closure:.2e})")));
    }
    if isotropy > 1e-10 {
        return Err(Error::InvalidInput(format!("C_D is not isotropic (residual {isotropy:.2e})")));
    }
    if samples.is_empty() {
        return Err(Error::InvalidInput("brane transport needs sample points".into()));
    }
    let g_side = brane_side(&reduce(model, Side::G, rule)?, Side::G, c_d, samples)?;
    let gprime_side = brane_side(&reduce(model, Side::GPrime, rule)?, Side::GPrime, c_d, samples)?;
    Ok(BraneTransport { closure, isotropy, g_side, gprime_side })
}

fn anchors(red: &ReducedCA, c_d: &Subspace, x: &[f64]) -> Result<DMatrix<f64>> {
    let cols: Vec<DVector<f64>> = (0..c_d.dim()).map(|i| red.chart.anchor(x, &c_d.vector(i))).collect::<Result<_>>()?;
    Ok(DMatrix::from_columns(&cols))
}

fn orthonormal(a: &DMatrix<f64>, r: usize) -> DMatrix<f64> {
    let svd = a.clone().svd(true, false);
    svd.u.expect("requested").columns(0, r).into_owned()
}

fn brane_side(red: &ReducedCA, side: Side, c_d: &Subspace, samples: &[Vec<f64>]) -> Result<BraneSide> {
    let m = red.dim();
    let mut rank = None;
    let mut span: Option<DMatrix<f64>> = None;
    for x in samples {
        let a = anchors(red, c_d, x)?;
        let r = linalg::rank(&a, 1e-9);
        if *rank.get_or_insert(r) != r {
            return Err(Error::OutOfScope("the anchor of C_G has non-constant rank".into()));
        }
        if r > 0 && r < m {
            let u = orthonormal(&a, r);
            match &span {
                None => span = Some(u),
                Some(s) => {
                    if linalg::max_abs(&(s * s.transpose() - &u * u.transpose())) > BRANE_TOL {
                        return Err(Error::OutOfScope("leaves of C_G are not affine planes in the chart".into()));
                    }
                }
            }
        }
    }
    let rank = rank.unwrap_or(0);
    let (kind, tangents) = match rank {
        0 => (LeafKind::Point, DMatrix::zeros(m, 0)),
        r if r == m => (LeafKind::Whole, DMatrix::identity(m, m)),
        r => (LeafKind::Linear(r), span.expect("set above")),
    };
    let mut beta_max: f64 = 0.0;
    let mut dirac_defect: f64 = 0.0;
    if rank > 0 {
        for x in samples {
            let beta = beta_n(red, c_d, x, &tangents)?;
            beta_max = beta_max.max(linalg::max_abs(&beta));
            dirac_defect = dirac_defect.max(leaf_dirac_defect(red, c_d, x, &tangents)?);
        }
    }
    let flag = match kind {
        LeafKind::Point => Some(EdgeFlag::Fixed),
        LeafKind::Whole if beta_max <= BRANE_TOL => Some(EdgeFlag::Free),
        // the caller registers `leaf_through` and refers to it by index
        LeafKind::Linear(_) if beta_max <= BRANE_TOL => Some(EdgeFlag::Brane(0)),
        _ => None,
    };
    Ok(BraneSide { side, anchor_rank: rank, kind, tangents, beta_max, dirac_defect, flag })
}

/// `beta_N(T_a, T_b)` at `x`: minus the 2-form whose graph over the leaf is
/// `C_G` in the coordinates of the splitting.
pub fn beta_n(red: &ReducedCA, c_d: &Subspace, x: &[f64], tangents: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let m = red.dim();
    let p = tangents.ncols();
    let a = anchors(red, c_d, x)?;
    let mut beta = DMatrix::zeros(p, p);
    for al in 0..p {
        let t = tangents.column(al).into_owned();
        let coef = linalg::coords_in(&a, &t);
        if linalg::max_abs_vec(&(&a * &coef - &t)) > 1e-8 {
            return Err(Error::OutOfScope("leaf tangent is not in the anchor image".into()));
        }
        let sec = red.section(x, &(&c_d.basis * coef))?;
        let xi = sec.rows(m, m).into_owned();
        for be in 0..p {
            beta[(al, be)] = -xi.dot(&tangents.column(be));
        }
    }
    Ok(beta)
}

fn leaf_dirac_defect(red: &ReducedCA, c_d: &Subspace, x0: &[f64], tangents: &DMatrix<f64>) -> Result<f64> {
    let p = tangents.ncols();
    if p < 3 {
        // a 3-form vanishes on a leaf of dimension below 3
        return Ok(0.0);
    }
    let at = |y: &[f64]| -> DVector<f64> { DVector::from_column_slice(x0) + tangents * DVector::from_column_slice(y) };
    let beta_at = |y: &[f64]| beta_n(red, c_d, at(y).as_slice(), tangents).unwrap_or_else(|_| DMatrix::from_element(p, p, f64::NAN));
    let parts = fd::matrix_partials(beta_at, &vec![0.0; p], fd::DEFAULT_STEP);
    let dbeta = exterior_d(&parts);
    let h = match red.rule {
        SplittingRule::Induced => vec![0.0; red.dim().pow(3)],
        _ => red.h_g(x0)?,
    };
    let m = red.dim();
    let mut worst: f64 = 0.0;
    for a in 0..p {
        for b in 0..p {
            for c in 0..p {
                let mut hn = 0.0;
                for i in 0..m {
                    for j in 0..m {
                        for k in 0..m {
                            hn += h[(i * m + j) * m + k] * tangents[(i, a)] * tangents[(j, b)] * tangents[(k, c)];
                        }
                    }
                }
                worst = worst.max((dbeta[(a * p + b) * p + c] - hn).abs());
            }
        }
    }
    if !worst.is_finite() {
        return Err(Error::DegenerateBackground { location: format!("{x0:?} (leaf stencil)") });
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::liealg::{abelian_constants, su2_constants};
    use crate::reduction::graph_subspace;
    use crate::sigma::{sample, solve_sr, InitialData};
    use crate::study::convergence_order;

    fn abelian() -> DualityScenario {
        let m = DoubleModel::semiabelian(&abelian_constants(1), None).unwrap();
        DualityScenario::new(m, Side::GPrime, SplittingRule::Orthogonal, graph_subspace(&DMatrix::from_element(1, 1, 4.0))).unwrap()
    }

    fn pcm() -> DualityScenario {
        let m = DoubleModel::semiabelian(&su2_constants(), None).unwrap();
        DualityScenario::new(m, Side::GPrime, SplittingRule::Orthogonal, graph_subspace(&DMatrix::identity(3, 3))).unwrap()
    }

    fn pcm_solution(scn: &DualityScenario, n: usize) -> (LightConeLattice, ChartMap) {
        let lat = LightConeLattice::square(n, 0.5).unwrap();
        let data = InitialData::pcm_geodesic(&scn.red.chart, &[0.1, -0.2, 0.15], &[0.4, 0.3, -0.5], 3);
        let f = solve_sr(&scn.background(), &lat, &data).unwrap();
        (lat, f)
    }

    #[test]
    fn abelian_dual_is_the_inverted_radius_boson() {
        let scn = abelian();
        let lat = LightConeLattice::square(16, 1.0).unwrap();
        let f = sample(&InitialData::dalembert(1, 5, 0.4), &lat);
        let d = dualize(&f, &scn, &lat, &scn.fiber_element(&[0.3])).unwrap();
        for (i, j, y) in d.f_dual.points() {
            if i < lat.n1 {
                let (dy, dx) = (d.f_dual.get(i + 1, j)[0] - y[0], f.get(i + 1, j)[0] - f.get(i, j)[0]);
                assert!((dy - 4.0 * dx).abs() < 1e-12);
            }
            if j < lat.n2 {
                let (dy, dx) = (d.f_dual.get(i, j + 1)[0] - y[0], f.get(i, j + 1)[0] - f.get(i, j)[0]);
                assert!((dy + 4.0 * dx).abs() < 1e-12);
            }
        }
        assert!(d.report.flatness < 1e-12);
        assert!(d.report.dual_el_residual < 1e-10);
        assert!(d.report.sweeps_consistent());
    }

    #[test]
    fn lift_projects_back_and_is_seed_equivariant() {
        let scn = pcm();
        let (lat, f) = pcm_solution(&scn, 8);
        let seed = scn.fiber_element(&[0.2, 0.1, -0.3]);
        let h = scn.fiber_element(&[-0.1, 0.4, 0.2]);
        let a = lift(&f, &scn, &lat, &seed, SweepOrder::T2First).unwrap();
        let b = lift(&f, &scn, &lat, &(&seed * &h), SweepOrder::T2First).unwrap();
        assert!(project(&a.phi, &scn.red).unwrap().max_distance(&f) < 1e-10);
        let shifted = a.phi.map(|_, _, p| p * &h);
        assert!(group_distance(&shifted, &b.phi, &scn).unwrap() < 1e-9);
    }

    #[test]
    fn connection_forms_have_the_right_kernel() {
        let scn = pcm();
        let m = scn.red.chart.point(&[0.3, -0.2, 0.1]) * scn.fiber_element(&[0.2, 0.0, -0.4]);
        let a = extract_ag(&scn, &m).unwrap();
        assert!(linalg::max_abs(&(&a.plus * &scn.r_d.basis)) < 1e-12);
        assert!(linalg::max_abs(&(&a.minus * &scn.r_perp.basis)) < 1e-12);
        let ad_q = scn.red.chart.group.adjoint_matrix(&m).unwrap() * &scn.red.chart.q.basis;
        assert!(linalg::max_abs(&(&a.plus * &ad_q - DMatrix::identity(3, 3))) < 1e-12);
        assert!(linalg::max_abs(&(&a.minus * &ad_q - DMatrix::identity(3, 3))) < 1e-12);
    }

    #[test]
    fn flatness_converges_on_solutions_only() {
        let scn = pcm();
        let (mut hs, mut crit, mut rand) = (vec![], vec![], vec![]);
        let seed = scn.fiber_element(&[0.0; 3]);
        for n in [8, 16, 32] {
            let lat = LightConeLattice::square(n, 0.5).unwrap();
            let f = solve_sr(&scn.background(), &lat, &InitialData::random_smooth(3, 4, 0.3)).unwrap();
            let g = sample(&InitialData::random_smooth(3, 9, 0.3), &lat);
            hs.push(lat.h1);
            let l = lift(&f, &scn, &lat, &seed, SweepOrder::T2First).unwrap();
            crit.push(l.flatness.max());
            rand.push(lift(&g, &scn, &lat, &seed, SweepOrder::T2First).unwrap().flatness.max());
        }
        let o = convergence_order(&hs, &crit).unwrap();
        assert!(o.at_least(1.9), "critical order {o} {crit:?}");
        let o = convergence_order(&hs, &rand).unwrap();
        assert!(o.within(-0.2, 0.2), "random order {o} {rand:?}");
    }

    #[test]
    fn dualized_pcm_is_critical_for_natd() {
        let scn = pcm();
        let (lat, f) = pcm_solution(&scn, 12);
        let d = dualize(&f, &scn, &lat, &scn.fiber_element(&[0.1, 0.0, 0.2])).unwrap();
        assert!(d.report.sweeps_consistent(), "{:?}", d.report);
        assert!(d.report.dual_el_residual < 0.05, "{:?}", d.report);
    }

    #[test]
    fn abelian_branes_swap_neumann_and_dirichlet() {
        let scn = abelian();
        let c_d = Subspace::coordinate(2, [0]);
        let t = brane_transport(&scn.model, scn.rule, &c_d, &[vec![0.0], vec![0.4], vec![-0.7]]).unwrap();
        assert_eq!(t.gprime_side.kind, LeafKind::Whole);
        assert_eq!(t.gprime_side.flag, Some(EdgeFlag::Free));
        assert_eq!(t.g_side.kind, LeafKind::Point);
        assert_eq!(t.g_side.flag, Some(EdgeFlag::Fixed));
    }

    #[test]
    fn nonabelian_branes() {
        let m = pcm().model;
        let xs = vec![vec![0.1, 0.2, -0.1], vec![-0.3, 0.1, 0.25], vec![0.2, -0.2, 0.05]];
        let dual = Subspace::coordinate(6, [3, 4, 5]);
        let t = brane_transport(&m, SplittingRule::Orthogonal, &dual, &xs).unwrap();
        assert_eq!(t.gprime_side.kind, LeafKind::Point);
        assert_eq!(t.g_side.kind, LeafKind::Whole);
        assert!(t.g_side.dirac_defect < 1e-9, "{}", t.g_side.dirac_defect);
        // the leaves through g are coadjoint orbits, not planes
        let r = brane_transport(&m, SplittingRule::Orthogonal, &Subspace::coordinate(6, [0, 1, 2]), &xs);
        assert!(matches!(r, Err(Error::OutOfScope(_))), "{r:?}");
        let bad = Subspace::coordinate(6, [0, 1, 3]);
        assert!(matches!(brane_transport(&m, SplittingRule::Orthogonal, &bad, &xs), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn roundtrip_and_dual_criticality_converge() {
        let scn = pcm();
        let seed = scn.fiber_element(&[0.1, -0.1, 0.2]);
        let (mut hs, mut dev, mut crit) = (vec![], vec![], vec![]);
        for n in [8, 16, 32] {
            let lat = LightConeLattice::square(n, 0.5).unwrap();
            let f = solve_sr(&scn.background(), &lat, &InitialData::random_smooth(3, 4, 0.3)).unwrap();
            hs.push(lat.h1);
            dev.push(roundtrip(&f, &scn, &lat, &seed).unwrap().deviation);
            crit.push(dualize(&f, &scn, &lat, &seed).unwrap().report.dual_el_residual);
        }
        let o = convergence_order(&hs, &dev).unwrap();
        assert!(o.at_least(1.9), "roundtrip {o} {dev:?}");
        let o = convergence_order(&hs, &crit).unwrap();
        assert!(o.at_least(1.9), "criticality {o} {crit:?}");
    }
}
