//! Reduction `E -> E_{/G}` of the double model by a Lagrangian subgroup.
//!
//! `M/G` is charted by the complementary subgroup `K` through `m = k q`,
//! `k = exp(sum x_i k_i)`, `q` in `G`.  At the chart point the fiber of
//! `E_{/G} = rho(d)^perp / G` is identified with `d`: the invariant section
//! with right-trivialized anchor `v` has anchor `v mod Ad_k g` and, in the
//! splitting induced by `k`, the 1-form `dx_i -> <v, J e_i>` where `J` is the
//! right-trivialized differential of the chart.  This identification carries
//! `+<,>_d`; it is the anti-isometric image of `rho(d)^perp` (whose pairing is
//! `-<,>_d`), which only flips the overall sign of 1-forms.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::equivariant::{self, DoubleModel};
use crate::error::{Error, Result};
use crate::fd;
use crate::liealg::{MatrixGroupModel, QuadraticLieAlgebra, Subspace};
use crate::linalg;

/// Chart data at one point.
#[derive(Clone, Debug)]
pub struct ChartFrame {
    pub j: DMatrix<f64>,
    pub vert: DMatrix<f64>,
    pub ad_k: DMatrix<f64>,
    pub dj: Vec<DMatrix<f64>>,
    pub dvert: Vec<DMatrix<f64>>,
}

/// Singular-value floor below which a linear transport is treated as degenerate.
pub const TRANSVERSALITY_TOL: f64 = 1e-9;

/// Chart of `M/Q` by the subgroup `K`.
#[derive(Clone, Debug)]
pub struct QuotientChart {
    pub group: MatrixGroupModel,
    pub k: Subspace,
    pub q: Subspace,
}

impl QuotientChart {
    pub fn new(group: MatrixGroupModel, k: Subspace, q: Subspace) -> Result<Self> {
        let n = group.algebra().dim();
        if k.basis.nrows() != n || q.basis.nrows() != n || k.dim() + q.dim() != n {
            return Err(Error::Structural("chart and fiber subalgebras must be complementary in d".into()));
        }
        Ok(Self { group, k, q })
    }

    pub fn algebra(&self) -> &QuadraticLieAlgebra {
        self.group.algebra()
    }

    pub fn dim(&self) -> usize {
        self.k.dim()
    }

    pub fn lie_element(&self, x: &[f64]) -> DVector<f64> {
        &self.k.basis * DVector::from_column_slice(x)
    }

    pub fn point(&self, x: &[f64]) -> DMatrix<f64> {
        self.group.exp(&self.lie_element(x))
    }

    /// `J(x) = sum_j ad_X^j / (j+1)!` applied to the chart basis: columns are
    /// the right-trivialized tangent vectors `d/dx_i`.
    pub fn jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        self.frame(x, false).j
    }

    /// `Ad_k q` at the chart point (columns); `Ad_k = exp(ad_X)`.
    pub fn vertical(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        Ok(self.frame(x, false).vert)
    }

    /// `J`, `Ad_k q` and, on request, their partials: `d_c J` from the
    /// Frechet derivative of the series and `d_c Ad_k = ad_{J e_c} Ad_k`.
    pub fn frame(&self, x: &[f64], partials: bool) -> ChartFrame {
        let alg = self.algebra();
        let a = alg.ad(&self.lie_element(x));
        let n = a.nrows();
        let m = self.dim();
        let dirs: Vec<DMatrix<f64>> = if partials { (0..m).map(|c| alg.ad(&self.k.vector(c))).collect() } else { Vec::new() };
        // p = A^j / j!, dp[c] its derivative along dirs[c]
        let mut p = DMatrix::identity(n, n);
        let mut dp = vec![DMatrix::zeros(n, n); dirs.len()];
        let mut exp = p.clone();
        let mut phi = p.clone();
        let mut dphi = vec![DMatrix::zeros(n, n); dirs.len()];
        for j in 1..60 {
            for (c, e) in dirs.iter().enumerate() {
                dp[c] = (&dp[c] * &a + &p * e) / j as f64;
                dphi[c] += &dp[c] / (j as f64 + 1.0);
            }
            p = &p * &a / j as f64;
            exp += &p;
            phi += &p / (j as f64 + 1.0);
            let small = linalg::max_abs(&p) < 1e-18 && dp.iter().all(|d| linalg::max_abs(d) < 1e-18);
            if small {
                break;
            }
        }
        let j = &phi * &self.k.basis;
        let vert = &exp * &self.q.basis;
        let dj: Vec<DMatrix<f64>> = dphi.iter().map(|d| d * &self.k.basis).collect();
        let dvert: Vec<DMatrix<f64>> = (0..dirs.len()).map(|c| alg.ad(&j.column(c).into_owned()) * &vert).collect();
        ChartFrame { j, vert, ad_k: exp, dj, dvert }
    }

    /// Chart coordinates of the coset `m Q` (local factorization `m = k q`).
    pub fn chart_of(&self, m: &DMatrix<f64>) -> Result<Vec<f64>> {
        let f = self.group.factorize(m, &self.k, &self.q)?;
        let z = self.group.log(&f.left)?;
        Ok(linalg::coords_in(&self.k.basis, &z).iter().cloned().collect())
    }

    /// Tangent coordinates `dx` of the right-trivialized vector `v mod Ad_k q`.
    pub fn anchor(&self, x: &[f64], v: &DVector<f64>) -> Result<DVector<f64>> {
        let fr = self.frame(x, false);
        let split = linalg::hcat(&fr.j, &fr.vert);
        let sol = solve_checked(&split, v, x)?;
        Ok(sol.rows(0, self.dim()).into_owned())
    }

    /// The unique `v` in `sub` with `v - w` in `Ad_k q`.
    pub fn lift_into(&self, x: &[f64], sub: &DMatrix<f64>, w: &DVector<f64>) -> Result<DVector<f64>> {
        let split = linalg::hcat(sub, &(-self.vertical(x)?));
        let sol = solve_checked(&split, w, x)?;
        Ok(sub * sol.rows(0, sub.ncols()))
    }
}

fn solve_checked(a: &DMatrix<f64>, b: &DVector<f64>, x: &[f64]) -> Result<DVector<f64>> {
    if a.nrows() != a.ncols() {
        return Err(Error::Structural("transport system is not square".into()));
    }
    let sv = a.clone().svd(false, false).singular_values;
    let smin = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if smin < TRANSVERSALITY_TOL {
        return Err(Error::DegenerateBackground { location: format!("{x:?}") });
    }
    linalg::solve(a, b)
}

/// Rule selecting the Lagrangian splitting of `E_{/G}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplittingRule {
    /// Induced by the chart subalgebra `k`; its curvature vanishes.
    Induced,
    /// Euclidean complement of the fibers corrected to be Lagrangian.
    Orthogonal,
}

impl Default for SplittingRule {
    fn default() -> Self {
        SplittingRule::Orthogonal
    }
}

/// Which Lagrangian subalgebra of the triple is quotiented out.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Side {
    /// `G = g`, charted by `g'`.
    G,
    /// `G = g'`, charted by `g`.
    GPrime,
}

impl Side {
    pub fn other(self) -> Side {
        match self {
            Side::G => Side::GPrime,
            Side::GPrime => Side::G,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ReducedCA {
    pub chart: QuotientChart,
    pub rule: SplittingRule,
}

/// `E_{/G}` for `G` the subgroup on `side`.
pub fn reduce(model: &DoubleModel, side: Side, rule: SplittingRule) -> Result<ReducedCA> {
    let (fiber, chart) = match side {
        Side::G => (model.triple.g().clone(), model.triple.gprime.clone()),
        Side::GPrime => (model.triple.gprime.clone(), model.triple.g().clone()),
    };
    Ok(ReducedCA { chart: QuotientChart::new(model.group.clone(), chart, fiber)?, rule })
}

impl ReducedCA {
    pub fn dim(&self) -> usize {
        self.chart.dim()
    }

    /// Splitting 2-form `tau(dx_i, dx_j)` relative to the induced splitting.
    pub fn splitting_form(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        let m = self.dim();
        match self.rule {
            SplittingRule::Induced => Ok(DMatrix::zeros(m, m)),
            SplittingRule::Orthogonal => {
                let alg = self.chart.algebra();
                let b = alg.pairing();
                let fr = self.chart.frame(x, false);
                let vert = fr.vert;
                // Euclidean complement of the fibers, spanned by the projected chart basis
                let vtv = vert.transpose() * &vert;
                let proj = &vert * linalg::solve_matrix(&vtv, &vert.transpose())?;
                let comp = (DMatrix::identity(vert.nrows(), vert.nrows()) - proj) * &self.chart.k.basis;
                // correct w -> w - 1/2 P w with <P w, w'> = <w, w'>, P w in the fibers
                let gram = vert.transpose() * b * &comp;
                let rhs = comp.transpose() * b * &comp;
                let p = linalg::solve_matrix(&gram.transpose(), &rhs)?;
                let lag = &comp - &vert * p * 0.5;
                let j = fr.j;
                // sigma(dx) in lag with anchor dx: lag a = J dx + vertical
                let split = linalg::hcat(&lag, &(-&vert));
                check_transverse(&split, x)?;
                let sol = split.lu().solve(&j).ok_or_else(|| Error::DegenerateBackground { location: format!("{x:?}") })?;
                let sigma = &lag * sol.rows(0, lag.ncols());
                let _ = m;
                Ok(sigma.transpose() * b * &j)
            }
        }
    }

    /// Curvature `H_G(dx_i, dx_j, dx_k)` of the splitting (`d tau`).
    pub fn h_g(&self, x: &[f64]) -> Result<Vec<f64>> {
        let m = self.dim();
        if self.rule == SplittingRule::Induced {
            return Ok(vec![0.0; m * m * m]);
        }
        self.splitting_form(x)?;
        Ok(exterior_d(&self.splitting_partials(x)?))
    }

    /// The section of `E_{/G}` induced by `v` in `d`, in chart coordinates
    /// `(dx, xi)` of the selected splitting.
    pub fn section(&self, x: &[f64], v: &DVector<f64>) -> Result<DVector<f64>> {
        let m = self.dim();
        let dx = self.chart.anchor(x, v)?;
        let j = self.chart.frame(x, false).j;
        let alg = self.chart.algebra();
        let mut xi = DVector::from_fn(m, |i, _| alg.pair(v, &j.column(i).into_owned()));
        if self.rule != SplittingRule::Induced {
            xi -= self.splitting_form(x)?.transpose() * &dx;
        }
        let mut out = DVector::zeros(2 * m);
        out.rows_mut(0, m).copy_from(&dx);
        out.rows_mut(m, m).copy_from(&xi);
        Ok(out)
    }

    /// Matrix whose columns are the sections of a basis of `d`.
    pub fn fiber_map(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        let n = self.chart.algebra().dim();
        let cols: Vec<DVector<f64>> = (0..n).map(|i| self.section(x, &self.chart.algebra().basis(i))).collect::<Result<_>>()?;
        Ok(DMatrix::from_columns(&cols))
    }

    /// Background `r(dx_i, dx_j)` of the subbundle induced by the subspace `r_d`.
    pub fn background(&self, x: &[f64], r_d: &Subspace) -> Result<DMatrix<f64>> {
        Ok(self.background_fields(x, r_d, false)?.r)
    }

    /// Background with its partials and the splitting curvature `H_G`
    /// (only with `partials`).
    pub fn background_fields(&self, x: &[f64], r_d: &Subspace, partials: bool) -> Result<BackgroundFields> {
        let m = self.dim();
        let fr = self.chart.frame(x, partials);
        let b = self.chart.algebra().pairing();
        let split = linalg::hcat(&r_d.basis, &(-&fr.vert));
        check_transverse(&split, x)?;
        let lu = split.lu();
        let sol = lu.solve(&fr.j).ok_or_else(|| Error::DegenerateBackground { location: format!("{x:?}") })?;
        let k = r_d.dim();
        let v = &r_d.basis * sol.rows(0, k);
        let mut r = v.transpose() * b * &fr.j;
        let mut dr = Vec::new();
        if partials {
            let lower = sol.rows(k, sol.nrows() - k).into_owned();
            for c in 0..m {
                let rhs = &fr.dj[c] + &fr.dvert[c] * &lower;
                let dsol = lu.solve(&rhs).ok_or_else(|| Error::DegenerateBackground { location: format!("{x:?}") })?;
                let dv = &r_d.basis * dsol.rows(0, k);
                dr.push(dv.transpose() * b * &fr.j + v.transpose() * b * &fr.dj[c]);
            }
        }
        let mut h = None;
        if self.rule != SplittingRule::Induced {
            r -= self.splitting_form(x)?;
            if partials {
                let dtau = self.splitting_partials(x)?;
                for c in 0..m {
                    dr[c] -= &dtau[c];
                }
                h = Some(exterior_d(&dtau));
            }
        }
        Ok(BackgroundFields { r, dr, h })
    }

    fn splitting_partials(&self, x: &[f64]) -> Result<Vec<DMatrix<f64>>> {
        let m = self.dim();
        let parts = fd::matrix_partials(|y| self.splitting_form(y).unwrap_or_else(|_| DMatrix::from_element(m, m, f64::NAN)), x, fd::DEFAULT_STEP);
        if parts.iter().any(|p| p.iter().any(|v| !v.is_finite())) {
            return Err(Error::DegenerateBackground { location: format!("{x:?} (splitting stencil)") });
        }
        Ok(parts)
    }
}

/// `r`, `d_c r` and the curvature of the splitting at one chart point.
#[derive(Clone, Debug)]
pub struct BackgroundFields {
    pub r: DMatrix<f64>,
    pub dr: Vec<DMatrix<f64>>,
    pub h: Option<Vec<f64>>,
}

/// `(d tau)_{ijk}` flattened `(i * m + j) * m + k` from the partials of a 2-form.
pub fn exterior_d(partials: &[DMatrix<f64>]) -> Vec<f64> {
    let m = partials.len();
    let mut h = vec![0.0; m * m * m];
    for i in 0..m {
        for j in 0..m {
            for k in 0..m {
                h[(i * m + j) * m + k] = partials[i][(j, k)] - partials[j][(i, k)] + partials[k][(i, j)];
            }
        }
    }
    h
}

fn check_transverse(a: &DMatrix<f64>, x: &[f64]) -> Result<()> {
    let sv = a.clone().svd(false, false).singular_values;
    if sv.iter().cloned().fold(f64::INFINITY, f64::min) < TRANSVERSALITY_TOL {
        return Err(Error::DegenerateBackground { location: format!("{x:?}") });
    }
    Ok(())
}

/// `transport_RD`: the background on `M/G` of the half-dimensional `r_d`.
pub fn transport_rd(model: &DoubleModel, side: Side, r_d: &Subspace, rule: SplittingRule) -> Result<(ReducedCA, Subspace)> {
    let n = model.dim();
    if r_d.basis.nrows() != n || 2 * r_d.dim() != n || linalg::rank(&r_d.basis, 1e-10) != r_d.dim() {
        return Err(Error::InvalidInput("R_D must be a half-dimensional subspace of d".into()));
    }
    Ok((reduce(model, side, rule)?, r_d.clone()))
}

/// `R_D = span(e_i + sum_j m_ji e*_j)` in a semi-abelian or abelian double.
pub fn graph_subspace(m: &DMatrix<f64>) -> Subspace {
    let k = m.nrows();
    let mut basis = DMatrix::zeros(2 * k, k);
    basis.view_mut((0, 0), (k, k)).fill_with_identity();
    basis.view_mut((k, 0), (k, k)).copy_from(m);
    Subspace::new(basis)
}

/// Standard Courant bracket of two sections given pointwise in chart
/// coordinates `(u, alpha)`, with derivatives by finite differences and an
/// optional 3-form `H(e_i, e_j, e_k)`.
pub fn fd_bracket(
    s: &dyn Fn(&[f64]) -> DVector<f64>,
    t: &dyn Fn(&[f64]) -> DVector<f64>,
    x: &[f64],
    h: Option<&[f64]>,
) -> DVector<f64> {
    let m = x.len();
    let (sv, tv) = (s(x), t(x));
    let (u, _) = (sv.rows(0, m), sv.rows(m, m));
    let (v, b) = (tv.rows(0, m), tv.rows(m, m));
    let ds = fd::jacobian(s, x, fd::DEFAULT_STEP);
    let dt = fd::jacobian(t, x, fd::DEFAULT_STEP);
    let du = ds.rows(0, m);
    let da = ds.rows(m, m);
    let dv = dt.rows(0, m);
    let db = dt.rows(m, m);
    let mut out = DVector::zeros(2 * m);
    out.rows_mut(0, m).copy_from(&(dv * u - du * v));
    for bi in 0..m {
        let mut acc = 0.0;
        for ai in 0..m {
            acc += u[ai] * db[(bi, ai)] + b[ai] * du[(ai, bi)];
            acc -= v[ai] * (da[(bi, ai)] - da[(ai, bi)]);
        }
        if let Some(h) = h {
            for ai in 0..m {
                for ci in 0..m {
                    acc += h[(ai * m + ci) * m + bi] * u[ai] * v[ci];
                }
            }
        }
        out[m + bi] = acc;
    }
    out
}

pub fn chart_pairing(s: &DVector<f64>, t: &DVector<f64>) -> f64 {
    let m = s.len() / 2;
    s.rows(m, m).dot(&t.rows(0, m)) + t.rows(m, m).dot(&s.rows(0, m))
}

/// `H_{L_G}` of the reduced subbundle spanned by the sections of `l_d`,
/// computed from the bracket on the chart, flattened `(i, j, k)`.
pub fn h_l_on_quotient(red: &ReducedCA, x: &[f64], l_d: &Subspace) -> Result<Vec<f64>> {
    let k = l_d.dim();
    red.section(x, &l_d.vector(0))?;
    let h = red.h_g(x)?;
    let secs: Vec<Box<dyn Fn(&[f64]) -> DVector<f64>>> = (0..k)
        .map(|i| {
            let v = l_d.vector(i);
            let red = red.clone();
            Box::new(move |y: &[f64]| red.section(y, &v).unwrap_or_else(|_| DVector::from_element(2 * y.len(), f64::NAN)))
                as Box<dyn Fn(&[f64]) -> DVector<f64>>
        })
        .collect();
    let vals: Vec<DVector<f64>> = secs.iter().map(|s| s(x)).collect();
    let mut out = Vec::with_capacity(k * k * k);
    for i in 0..k {
        for j in 0..k {
            let br = fd_bracket(secs[i].as_ref(), secs[j].as_ref(), x, Some(&h));
            for v in &vals {
                out.push(chart_pairing(&br, v));
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct CoherenceReport {
    pub points: usize,
    pub min_fiber_rank: usize,
    pub expected_rank: usize,
    pub min_abs_pairing_det: f64,
    /// `H_L` on `M` against `H_{L_D}` (pullback along `p_D`).
    pub fcfck_double: f64,
    /// `H_{L_G}` on `M/G` against `H_{L_D}` (pullback along `p_G`).
    pub fcfck_quotient: f64,
    /// `F_V(a s, a t) - a(F_L(s, t))` modulo `V`.
    pub fvfc: f64,
    /// Size of `H_{L_D}`: zero iff `L_D` is Dirac.
    pub h_l_d_norm: f64,
    pub transversality_failures: Vec<Vec<f64>>,
}

/// Reduction coherence at chart points `xs` for the Lagrangian `l_d`.
pub fn coherence(model: &DoubleModel, red: &ReducedCA, l_d: &Subspace, xs: &[Vec<f64>]) -> Result<CoherenceReport> {
    let alg = model.algebra();
    let n = alg.dim();
    let expected = equivariant::h_l_d(alg, l_d);
    // the chart identification negates both the pairing and the bracket, so H_L is unchanged
    let expected_chart = expected.clone();
    let mut rep = CoherenceReport {
        expected_rank: 2 * red.dim(),
        min_fiber_rank: usize::MAX,
        min_abs_pairing_det: f64::INFINITY,
        h_l_d_norm: expected.iter().fold(0.0, |a, v| a.max(v.abs())),
        ..Default::default()
    };
    let max_diff = |a: &[f64], b: &[f64]| a.iter().zip(b).fold(0.0f64, |acc, (x, y)| acc.max((x - y).abs()));
    for x in xs {
        let fm = match red.fiber_map(x) {
            Ok(f) => f,
            Err(Error::DegenerateBackground { .. }) => {
                rep.transversality_failures.push(x.clone());
                continue;
            }
            Err(e) => return Err(e),
        };
        rep.points += 1;
        rep.min_fiber_rank = rep.min_fiber_rank.min(linalg::rank(&fm, 1e-10));
        let m = red.dim();
        let mut std_pairing = DMatrix::zeros(2 * m, 2 * m);
        std_pairing.view_mut((0, m), (m, m)).fill_with_identity();
        std_pairing.view_mut((m, 0), (m, m)).fill_with_identity();
        let gram = fm.transpose() * std_pairing * &fm;
        rep.min_abs_pairing_det = rep.min_abs_pairing_det.min(gram.determinant().abs());
        rep.fcfck_quotient = rep.fcfck_quotient.max(max_diff(&h_l_on_quotient(red, x, l_d)?, &expected_chart));

        let point = red.chart.point(x);
        rep.fcfck_double = rep.fcfck_double.max(max_diff(&equivariant::h_l_on_double(model, &point, l_d)?, &expected));

        // fvfc on M: V spanned by anchors of the invariant sections of L
        let secs: Vec<equivariant::Jet> = (0..l_d.dim()).map(|i| equivariant::invariant_section(model, &point, &l_d.vector(i))).collect::<Result<_>>()?;
        let v_basis = DMatrix::from_columns(&secs.iter().map(|s| s.u.clone()).collect::<Vec<_>>());
        for s in &secs {
            for t in &secs {
                let lie = &t.du * &s.u - &s.du * &t.u + alg.bracket(&s.u, &t.u);
                let (anchor, _) = equivariant::jet_bracket(model, s, t);
                let diff = lie - anchor;
                rep.fvfc = rep.fvfc.max(linalg::distance_from_span(&v_basis, &diff));
            }
        }
        let _ = n;
    }
    if rep.points == 0 {
        return Err(Error::Transversality { count: xs.len(), total: xs.len() });
    }
    Ok(rep)
}
