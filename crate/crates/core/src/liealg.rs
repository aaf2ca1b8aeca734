//! Quadratic Lie algebras, Manin pairs and triples, and matrix-group models
//! of the double with exponential, logarithm, adjoint action and local
//! factorization `m = k * q` into two complementary subgroups.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

pub const ALGEBRA_TOL: f64 = 1e-12;
pub const DEFAULT_GROUP_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 50;

/// Structure constants `c[i][j][k]` with `[e_i, e_j] = sum_k c[i][j][k] e_k`.
pub type StructureConstants = Vec<Vec<Vec<f64>>>;

/// A finite-dimensional Lie algebra with an invariant symmetric pairing.
#[derive(Clone, Debug)]
pub struct QuadraticLieAlgebra {
    dim: usize,
    c: Vec<f64>,
    pairing: DMatrix<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ValidationReport {
    pub antisymmetry: f64,
    pub jacobi: f64,
    pub ad_invariance: f64,
    pub symmetry: f64,
    pub determinant: f64,
    pub nondegenerate: bool,
}

impl ValidationReport {
    pub fn passes(&self) -> bool {
        self.antisymmetry <= ALGEBRA_TOL
            && self.jacobi <= ALGEBRA_TOL
            && self.ad_invariance <= ALGEBRA_TOL
            && self.symmetry <= ALGEBRA_TOL
            && self.nondegenerate
    }
}

impl QuadraticLieAlgebra {
    pub fn new(c: &StructureConstants, pairing: DMatrix<f64>) -> Result<Self> {
        let dim = c.len();
        if dim == 0 {
            return Err(Error::Structural("algebra dimension must be positive".into()));
        }
        if c.iter().any(|row| row.len() != dim || row.iter().any(|v| v.len() != dim)) {
            return Err(Error::Structural(format!(
                "structure constants must be {dim}x{dim}x{dim}"
            )));
        }
        if pairing.shape() != (dim, dim) {
            return Err(Error::Structural(format!(
                "pairing is {:?}, expected ({dim}, {dim})",
                pairing.shape()
            )));
        }
        let flat = c.iter().flatten().flatten().cloned().collect();
        Ok(Self { dim, c: flat, pairing })
    }

    pub fn from_flat(dim: usize, c: Vec<f64>, pairing: DMatrix<f64>) -> Self {
        assert_eq!(c.len(), dim * dim * dim);
        assert_eq!(pairing.shape(), (dim, dim));
        Self { dim, c, pairing }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn c(&self, i: usize, j: usize, k: usize) -> f64 {
        self.c[(i * self.dim + j) * self.dim + k]
    }

    pub fn constants(&self) -> StructureConstants {
        let n = self.dim;
        (0..n)
            .map(|i| (0..n).map(|j| (0..n).map(|k| self.c(i, j, k)).collect()).collect())
            .collect()
    }

    pub fn pairing(&self) -> &DMatrix<f64> {
        &self.pairing
    }

    pub fn is_abelian(&self) -> bool {
        self.c.iter().all(|&v| v == 0.0)
    }

    pub fn basis(&self, i: usize) -> DVector<f64> {
        let mut v = DVector::zeros(self.dim);
        v[i] = 1.0;
        v
    }

    pub fn bracket(&self, x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
        let n = self.dim;
        let mut out = DVector::zeros(n);
        for i in 0..n {
            if x[i] == 0.0 {
                continue;
            }
            for j in 0..n {
                let w = x[i] * y[j];
                if w == 0.0 {
                    continue;
                }
                for k in 0..n {
                    out[k] += w * self.c(i, j, k);
                }
            }
        }
        out
    }

    pub fn pair(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        (x.transpose() * &self.pairing * y)[(0, 0)]
    }

    /// Matrix of `ad_x` acting on coefficient vectors.
    pub fn ad(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let n = self.dim;
        DMatrix::from_fn(n, n, |k, j| (0..n).map(|i| x[i] * self.c(i, j, k)).sum())
    }

    /// `exp(ad_x)` by its power series (used as an independent route for `Ad`).
    pub fn exp_ad(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let a = self.ad(x);
        let n = self.dim;
        let mut term = DMatrix::identity(n, n);
        let mut sum = term.clone();
        for k in 1..60 {
            term = &term * &a / k as f64;
            sum += &term;
            if linalg::max_abs(&term) < 1e-18 {
                break;
            }
        }
        sum
    }

    pub fn validate(&self) -> ValidationReport {
        let n = self.dim;
        let mut antisymmetry: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    antisymmetry = antisymmetry.max((self.c(i, j, k) + self.c(j, i, k)).abs());
                }
            }
        }
        let mut jacobi: f64 = 0.0;
        let mut ad_invariance: f64 = 0.0;
        for i in 0..n {
            let ei = self.basis(i);
            for j in 0..n {
                let ej = self.basis(j);
                let eij = self.bracket(&ei, &ej);
                for k in 0..n {
                    let ek = self.basis(k);
                    let cyc = self.bracket(&ei, &self.bracket(&ej, &ek))
                        + self.bracket(&ej, &self.bracket(&ek, &ei))
                        + self.bracket(&ek, &eij);
                    jacobi = jacobi.max(linalg::max_abs_vec(&cyc));
                    let inv = self.pair(&eij, &ek) + self.pair(&ej, &self.bracket(&ei, &ek));
                    ad_invariance = ad_invariance.max(inv.abs());
                }
            }
        }
        let symmetry = linalg::max_abs(&(&self.pairing - self.pairing.transpose()));
        let determinant = self.pairing.determinant();
        ValidationReport {
            antisymmetry,
            jacobi,
            ad_invariance,
            symmetry,
            determinant,
            nondegenerate: determinant.abs() > ALGEBRA_TOL,
        }
    }
}

/// Jacobi residual of bare structure constants (no pairing needed).
pub fn jacobi_residual(c: &StructureConstants) -> Result<f64> {
    let n = c.len();
    let alg = QuadraticLieAlgebra::new(c, DMatrix::identity(n.max(1), n.max(1)))?;
    let rep = alg.validate();
    Ok(rep.jacobi.max(rep.antisymmetry))
}

/// A subspace of an algebra given by basis columns (coefficient vectors).
#[derive(Clone, Debug)]
pub struct Subspace {
    pub basis: DMatrix<f64>,
}

impl Subspace {
    pub fn new(basis: DMatrix<f64>) -> Self {
        Self { basis }
    }

    /// Span of the canonical basis vectors `indices`.
    pub fn coordinate(dim: usize, indices: impl IntoIterator<Item = usize>) -> Self {
        let cols: Vec<DVector<f64>> = indices
            .into_iter()
            .map(|i| {
                let mut v = DVector::zeros(dim);
                v[i] = 1.0;
                v
            })
            .collect();
        Self { basis: DMatrix::from_columns(&cols) }
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn vector(&self, i: usize) -> DVector<f64> {
        self.basis.column(i).into_owned()
    }

    pub fn isotropy_residual(&self, alg: &QuadraticLieAlgebra) -> f64 {
        linalg::max_abs(&(self.basis.transpose() * alg.pairing() * &self.basis))
    }

    pub fn closure_residual(&self, alg: &QuadraticLieAlgebra) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.dim() {
            for j in 0..self.dim() {
                let b = alg.bracket(&self.vector(i), &self.vector(j));
                worst = worst.max(linalg::distance_from_span(&self.basis, &b));
            }
        }
        worst
    }

    pub fn is_same_as(&self, other: &Subspace) -> bool {
        self.basis.shape() == other.basis.shape()
            && linalg::max_abs(&(&self.basis - &other.basis)) == 0.0
    }
}

/// `(d, g)` with `g` a Lagrangian subalgebra.
#[derive(Clone, Debug)]
pub struct ManinPair {
    pub algebra: QuadraticLieAlgebra,
    pub g: Subspace,
}

impl ManinPair {
    pub fn new(algebra: QuadraticLieAlgebra, g: Subspace) -> Result<Self> {
        check_lagrangian_subalgebra(&algebra, &g, "g")?;
        Ok(Self { algebra, g })
    }
}

/// `(d, g, g')` with two complementary Lagrangian subalgebras.
#[derive(Clone, Debug)]
pub struct ManinTriple {
    pub pair: ManinPair,
    pub gprime: Subspace,
}

impl ManinTriple {
    pub fn new(pair: ManinPair, gprime: Subspace) -> Result<Self> {
        check_lagrangian_subalgebra(&pair.algebra, &gprime, "g'")?;
        let joint = linalg::hcat(&pair.g.basis, &gprime.basis);
        if linalg::rank(&joint, 1e-10) != pair.algebra.dim() {
            return Err(Error::InvalidInput("g and g' are not complementary".into()));
        }
        Ok(Self { pair, gprime })
    }

    pub fn algebra(&self) -> &QuadraticLieAlgebra {
        &self.pair.algebra
    }

    pub fn g(&self) -> &Subspace {
        &self.pair.g
    }
}

fn check_lagrangian_subalgebra(alg: &QuadraticLieAlgebra, s: &Subspace, name: &str) -> Result<()> {
    if s.basis.nrows() != alg.dim() {
        return Err(Error::Structural(format!("{name} basis has wrong ambient dimension")));
    }
    if 2 * s.dim() != alg.dim() || linalg::rank(&s.basis, 1e-10) != s.dim() {
        return Err(Error::InvalidInput(format!("{name} is not half-dimensional")));
    }
    let iso = s.isotropy_residual(alg);
    if iso > ALGEBRA_TOL {
        return Err(Error::InvalidInput(format!("{name} is not isotropic (residual {iso:e})")));
    }
    let clo = s.closure_residual(alg);
    if clo > ALGEBRA_TOL {
        return Err(Error::InvalidInput(format!("{name} is not a subalgebra (residual {clo:e})")));
    }
    Ok(())
}

/// `d = g ⋉ g*` with the canonical hyperbolic pairing.  Basis: `e_0..e_{n-1}`
/// span `g`, `e_n..e_{2n-1}` the dual basis of `g*`.
pub fn build_semiabelian_double(g_constants: &StructureConstants) -> Result<ManinTriple> {
    let n = g_constants.len();
    let jac = jacobi_residual(g_constants)?;
    if jac > ALGEBRA_TOL {
        return Err(Error::InvalidInput(format!("input constants fail Jacobi ({jac:e})")));
    }
    let dim = 2 * n;
    let mut c = vec![0.0; dim * dim * dim];
    let idx = |i: usize, j: usize, k: usize| (i * dim + j) * dim + k;
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                let cijk = g_constants[i][j][k];
                c[idx(i, j, k)] = cijk;
                // [e_i, e^k] = ad*_{e_i} e^k = -sum_j c_ij^k e^j
                c[idx(i, n + k, n + j)] -= cijk;
                c[idx(n + k, i, n + j)] += cijk;
            }
        }
    }
    let mut b = DMatrix::zeros(dim, dim);
    for i in 0..n {
        b[(i, n + i)] = 1.0;
        b[(n + i, i)] = 1.0;
    }
    let alg = QuadraticLieAlgebra::from_flat(dim, c, b);
    let pair = ManinPair::new(alg, Subspace::coordinate(dim, 0..n))?;
    ManinTriple::new(pair, Subspace::coordinate(dim, n..dim))
}

/// Block layout of the semi-abelian matrix model: `diag(rho(g), [[Ad*_g, xi], [0, 1]])`.
#[derive(Clone, Copy, Debug)]
pub struct SemidirectLayout {
    pub n: usize,
    pub rho_dim: usize,
}

/// A faithful matrix representation of the double's Lie algebra.
#[derive(Clone, Debug)]
pub struct MatrixGroupModel {
    algebra: QuadraticLieAlgebra,
    generators: Vec<DMatrix<f64>>,
    flat_pinv: DMatrix<f64>,
    pub tolerance: f64,
    pub max_iter: usize,
    layout: Option<SemidirectLayout>,
}

impl MatrixGroupModel {
    pub fn new(algebra: QuadraticLieAlgebra, generators: Vec<DMatrix<f64>>, tolerance: f64) -> Result<Self> {
        let n = algebra.dim();
        if generators.len() != n {
            return Err(Error::Structural(format!(
                "{} generators for a {n}-dimensional algebra",
                generators.len()
            )));
        }
        let size = generators[0].nrows();
        if generators.iter().any(|g| g.shape() != (size, size)) {
            return Err(Error::Structural("generators must be square and equally sized".into()));
        }
        if !(tolerance > 0.0) {
            return Err(Error::InvalidInput("tolerance must be positive".into()));
        }
        let flat = DMatrix::from_fn(size * size, n, |r, c| generators[c].as_slice()[r]);
        if linalg::rank(&flat, 1e-12) != n {
            return Err(Error::InvalidInput("generators are linearly dependent (not faithful)".into()));
        }
        let flat_pinv = flat
            .clone()
            .pseudo_inverse(1e-14)
            .map_err(|e| Error::Domain(e.to_string()))?;
        let model = Self {
            algebra,
            generators,
            flat_pinv,
            tolerance,
            max_iter: DEFAULT_MAX_ITER,
            layout: None,
        };
        let defect = model.commutator_defect();
        if defect > ALGEBRA_TOL {
            return Err(Error::InvalidInput(format!(
                "generator commutators miss the structure constants by {defect:e}"
            )));
        }
        Ok(model)
    }

    /// Matrix model of a semi-abelian double built by [`build_semiabelian_double`].
    /// `rho` is a faithful representation of `g`; when absent the adjoint
    /// representation is used if faithful, else the translation representation
    /// for abelian `g`.
    pub fn semiabelian(
        g_constants: &StructureConstants,
        triple: &ManinTriple,
        rho: Option<Vec<DMatrix<f64>>>,
    ) -> Result<Self> {
        let n = g_constants.len();
        let g_alg = QuadraticLieAlgebra::new(g_constants, DMatrix::identity(n, n))?;
        let rho = match rho {
            Some(r) => r,
            None => default_rep(&g_alg)?,
        };
        if rho.len() != n {
            return Err(Error::Structural("rho must have one matrix per basis element of g".into()));
        }
        let rho_dim = rho[0].nrows();
        let size = rho_dim + n + 1;
        let mut gens = Vec::with_capacity(2 * n);
        for (i, r) in rho.iter().enumerate() {
            let mut m = DMatrix::zeros(size, size);
            m.view_mut((0, 0), (rho_dim, rho_dim)).copy_from(r);
            for j in 0..n {
                for k in 0..n {
                    m[(rho_dim + j, rho_dim + k)] = -g_constants[i][j][k];
                }
            }
            gens.push(m);
        }
        for j in 0..n {
            let mut m = DMatrix::zeros(size, size);
            m[(rho_dim + j, size - 1)] = 1.0;
            gens.push(m);
        }
        let mut model = Self::new(triple.algebra().clone(), gens, DEFAULT_GROUP_TOL)?;
        model.layout = Some(SemidirectLayout { n, rho_dim });
        Ok(model)
    }

    pub fn algebra(&self) -> &QuadraticLieAlgebra {
        &self.algebra
    }

    pub fn generators(&self) -> &[DMatrix<f64>] {
        &self.generators
    }

    pub fn size(&self) -> usize {
        self.generators[0].nrows()
    }

    pub fn layout(&self) -> Option<SemidirectLayout> {
        self.layout
    }

    pub fn identity(&self) -> DMatrix<f64> {
        DMatrix::identity(self.size(), self.size())
    }

    /// Largest deviation of `[X_i, X_j]` from `sum_k c_ij^k X_k`.
    pub fn commutator_defect(&self) -> f64 {
        let n = self.algebra.dim();
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                let (a, b) = (&self.generators[i], &self.generators[j]);
                let comm = a * b - b * a;
                let expected = self.matrix(&self.algebra.bracket(&self.algebra.basis(i), &self.algebra.basis(j)));
                worst = worst.max(linalg::max_abs(&(comm - expected)));
            }
        }
        worst
    }

    /// The representing matrix of a coefficient vector.
    pub fn matrix(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.size(), self.size());
        for (xi, g) in x.iter().zip(&self.generators) {
            if *xi != 0.0 {
                m += g * *xi;
            }
        }
        m
    }

    /// Coefficients of a matrix in the generator span (least squares).
    pub fn coords(&self, m: &DMatrix<f64>) -> DVector<f64> {
        &self.flat_pinv * DVector::from_column_slice(m.as_slice())
    }

    pub fn exp(&self, x: &DVector<f64>) -> DMatrix<f64> {
        expm(&self.matrix(x))
    }

    pub fn log(&self, g: &DMatrix<f64>) -> Result<DVector<f64>> {
        let l = logm(g)?;
        let x = self.coords(&l);
        let off = linalg::max_abs(&(self.matrix(&x) - &l));
        if off > 1e-8 * (1.0 + linalg::max_abs(&l)) {
            return Err(Error::Domain(format!("logarithm leaves the Lie algebra (defect {off:e})")));
        }
        Ok(x)
    }

    /// `Ad_g x = g x g^{-1}` in coefficients.
    pub fn adjoint(&self, g: &DMatrix<f64>, x: &DVector<f64>) -> Result<DVector<f64>> {
        let ginv = linalg::inverse(g)?;
        Ok(self.coords(&(g * self.matrix(x) * ginv)))
    }

    /// Full matrix of `Ad_g` on coefficient vectors.
    pub fn adjoint_matrix(&self, g: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let ginv = linalg::inverse(g)?;
        let n = self.algebra.dim();
        let cols: Vec<DVector<f64>> =
            (0..n).map(|i| self.coords(&(g * &self.generators[i] * &ginv))).collect();
        Ok(DMatrix::from_columns(&cols))
    }

    /// Local factorization `m = k * q` with `k = exp(span left)`, `q = exp(span right)`.
    pub fn factorize(&self, m: &DMatrix<f64>, left: &Subspace, right: &Subspace) -> Result<Factorization> {
        if let Some(f) = self.factorize_semidirect(m, left, right) {
            return Ok(f);
        }
        let n = self.algebra.dim();
        let split = linalg::hcat(&left.basis, &right.basis);
        if split.shape() != (n, n) {
            return Err(Error::Structural("left and right subspaces must be complementary".into()));
        }
        let split_lu = split.clone().lu();
        let mut k = self.identity();
        let mut q = self.identity();
        let mut residual = f64::INFINITY;
        for iter in 0..self.max_iter {
            let kinv = linalg::inverse(&k)?;
            let qinv = linalg::inverse(&q)?;
            let z = match self.log(&(&kinv * m * &qinv)) {
                Ok(z) => z,
                Err(_) => {
                    return Err(Error::NonFactorizable { iterations: iter, residual })
                }
            };
            let parts = split_lu
                .solve(&z)
                .ok_or_else(|| Error::Domain("left and right subspaces overlap".into()))?;
            let zl = &left.basis * parts.rows(0, left.dim());
            let zr = &right.basis * parts.rows(left.dim(), right.dim());
            k = &k * self.exp(&zl);
            q = self.exp(&zr) * &q;
            residual = linalg::max_abs(&(m - &k * &q));
            if residual <= self.tolerance.min(1e-13 * (1.0 + linalg::max_abs(m))).max(1e-15) || z.norm() < 1e-15 {
                return Ok(Factorization { left: k, right: q, residual, iterations: iter + 1 });
            }
        }
        if residual <= self.tolerance {
            return Ok(Factorization { left: k, right: q, residual, iterations: self.max_iter });
        }
        Err(Error::NonFactorizable { iterations: self.max_iter, residual })
    }

    fn factorize_semidirect(&self, m: &DMatrix<f64>, left: &Subspace, right: &Subspace) -> Option<Factorization> {
        let layout = self.layout?;
        let (n, r) = (layout.n, layout.rho_dim);
        let g = Subspace::coordinate(2 * n, 0..n);
        let gstar = Subspace::coordinate(2 * n, n..2 * n);
        let last = r + n;
        let col: DVector<f64> = m.view((r, last), (n, 1)).into_owned().column(0).into_owned();
        let mut q_or_k = m.clone();
        q_or_k.view_mut((r, last), (n, 1)).fill(0.0);
        if left.is_same_as(&gstar) && right.is_same_as(&g) {
            // m = exp(xi) * g
            let mut k = self.identity();
            k.view_mut((r, last), (n, 1)).copy_from(&col);
            let residual = linalg::max_abs(&(m - &k * &q_or_k));
            return Some(Factorization { left: k, right: q_or_k, residual, iterations: 0 });
        }
        if left.is_same_as(&g) && right.is_same_as(&gstar) {
            // m = g * exp(xi) with the last column equal to Ad*_g xi
            let coad = m.view((r, r), (n, n)).into_owned();
            let xi = coad.lu().solve(&col)?;
            let mut q = self.identity();
            q.view_mut((r, last), (n, 1)).copy_from(&xi);
            let residual = linalg::max_abs(&(m - &q_or_k * &q));
            return Some(Factorization { left: q_or_k, right: q, residual, iterations: 0 });
        }
        None
    }
}

#[derive(Clone, Debug)]
pub struct Factorization {
    pub left: DMatrix<f64>,
    pub right: DMatrix<f64>,
    pub residual: f64,
    pub iterations: usize,
}

fn default_rep(g: &QuadraticLieAlgebra) -> Result<Vec<DMatrix<f64>>> {
    let n = g.dim();
    let ad: Vec<DMatrix<f64>> = (0..n).map(|i| g.ad(&g.basis(i))).collect();
    let flat = DMatrix::from_fn(n * n, n, |r, c| ad[c].as_slice()[r]);
    if linalg::rank(&flat, 1e-12) == n {
        return Ok(ad);
    }
    if g.is_abelian() {
        // translations x -> [[0, x], [0, 0]]
        return Ok((0..n)
            .map(|i| {
                let mut m = DMatrix::zeros(n + 1, n + 1);
                m[(i, n)] = 1.0;
                m
            })
            .collect());
    }
    Err(Error::InvalidInput(
        "adjoint representation is not faithful; supply explicit generators".into(),
    ))
}

/// Matrix exponential by scaling and squaring with a Taylor core.
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let norm = linalg::norm1(a);
    let s = if norm > 0.5 { (norm / 0.5).log2().ceil() as i32 } else { 0 };
    let b = a / 2f64.powi(s);
    let mut term = DMatrix::identity(n, n);
    let mut sum = term.clone();
    for k in 1..30 {
        term = &term * &b / k as f64;
        sum += &term;
        if linalg::max_abs(&term) < 1e-20 {
            break;
        }
    }
    for _ in 0..s {
        sum = &sum * &sum;
    }
    sum
}

fn sqrtm_db(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let mut y = a.clone();
    let mut z = DMatrix::identity(n, n);
    for _ in 0..100 {
        let yinv = linalg::inverse(&y).map_err(|_| Error::Domain("square root iteration hit a singular matrix".into()))?;
        let zinv = linalg::inverse(&z).map_err(|_| Error::Domain("square root iteration hit a singular matrix".into()))?;
        let ny = (&y + zinv) * 0.5;
        let nz = (&z + yinv) * 0.5;
        let change = linalg::max_abs(&(&ny - &y));
        y = ny;
        z = nz;
        if change <= 1e-15 * (1.0 + linalg::max_abs(&y)) {
            return Ok(y);
        }
    }
    Err(Error::Domain("square root iteration did not converge".into()))
}

/// Principal matrix logarithm by inverse scaling and squaring.
pub fn logm(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let id = DMatrix::identity(n, n);
    let mut m = a.clone();
    let mut k = 0;
    while linalg::norm1(&(&m - &id)) > 0.25 {
        m = sqrtm_db(&m)?;
        k += 1;
        if k > 40 {
            return Err(Error::Domain("logarithm outside its convergence domain".into()));
        }
    }
    let x = &m - &id;
    let mut power = x.clone();
    let mut sum = x.clone();
    for j in 2..400 {
        power = &power * &x;
        let term = &power / j as f64;
        if j % 2 == 0 {
            sum -= &term;
        } else {
            sum += &term;
        }
        if linalg::max_abs(&term) < 1e-20 {
            break;
        }
    }
    if !sum.iter().all(|v| v.is_finite()) {
        return Err(Error::Domain("logarithm diverged".into()));
    }
    Ok(sum * 2f64.powi(k))
}

/// Structure constants of su(2) with `[e_i, e_j] = eps_ijk e_k`.
pub fn su2_constants() -> StructureConstants {
    let mut c = vec![vec![vec![0.0; 3]; 3]; 3];
    for (i, j, k) in [(0, 1, 2), (1, 2, 0), (2, 0, 1)] {
        c[i][j][k] = 1.0;
        c[j][i][k] = -1.0;
    }
    c
}

/// Two-dimensional non-abelian algebra `[e_1, e_2] = e_2`.
pub fn aff1_constants() -> StructureConstants {
    let mut c = vec![vec![vec![0.0; 2]; 2]; 2];
    c[0][1][1] = 1.0;
    c[1][0][1] = -1.0;
    c
}

/// Heisenberg algebra `[e_1, e_2] = e_3`.
pub fn heisenberg_constants() -> StructureConstants {
    let mut c = vec![vec![vec![0.0; 3]; 3]; 3];
    c[0][1][2] = 1.0;
    c[1][0][2] = -1.0;
    c
}

/// Strictly upper-triangular 3x3 representation of the Heisenberg algebra.
pub fn heisenberg_rep() -> Vec<DMatrix<f64>> {
    let unit = |r: usize, c: usize| {
        let mut m = DMatrix::zeros(3, 3);
        m[(r, c)] = 1.0;
        m
    };
    vec![unit(0, 1), unit(1, 2), unit(0, 2)]
}

pub fn abelian_constants(n: usize) -> StructureConstants {
    vec![vec![vec![0.0; n]; n]; n]
}

/// JSON algebra definition file.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AlgebraFile {
    pub dim: usize,
    pub c: StructureConstants,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
    pub g_basis: Vec<Vec<f64>>,
    pub gprime_basis: Vec<Vec<f64>>,
    pub generators: Vec<Vec<Vec<f64>>>,
}

impl AlgebraFile {
    pub fn from_parts(triple: &ManinTriple, model: &MatrixGroupModel) -> Self {
        let alg = triple.algebra();
        let n = alg.dim();
        let rows = |m: &DMatrix<f64>| -> Vec<Vec<f64>> {
            (0..m.nrows()).map(|r| m.row(r).iter().cloned().collect()).collect()
        };
        let cols = |m: &DMatrix<f64>| -> Vec<Vec<f64>> {
            (0..m.ncols()).map(|c| m.column(c).iter().cloned().collect()).collect()
        };
        Self {
            dim: n,
            c: alg.constants(),
            b: rows(alg.pairing()),
            g_basis: cols(&triple.g().basis),
            gprime_basis: cols(&triple.gprime.basis),
            generators: model.generators().iter().map(rows).collect(),
        }
    }

    pub fn build(&self) -> Result<(ManinTriple, MatrixGroupModel)> {
        let n = self.dim;
        if self.b.len() != n || self.b.iter().any(|r| r.len() != n) {
            return Err(Error::Structural("B must be dim x dim".into()));
        }
        let b = DMatrix::from_fn(n, n, |r, c| self.b[r][c]);
        let alg = QuadraticLieAlgebra::new(&self.c, b)?;
        if self.c.len() != n {
            return Err(Error::Structural("c does not match dim".into()));
        }
        let to_sub = |vs: &Vec<Vec<f64>>| -> Result<Subspace> {
            if vs.iter().any(|v| v.len() != n) {
                return Err(Error::Structural("basis vector of wrong length".into()));
            }
            let cols: Vec<DVector<f64>> = vs.iter().map(|v| DVector::from_vec(v.clone())).collect();
            if cols.is_empty() {
                return Err(Error::Structural("empty basis".into()));
            }
            Ok(Subspace::new(DMatrix::from_columns(&cols)))
        };
        let pair = ManinPair::new(alg.clone(), to_sub(&self.g_basis)?)?;
        let triple = ManinTriple::new(pair, to_sub(&self.gprime_basis)?)?;
        let gens = self
            .generators
            .iter()
            .map(|m| {
                let s = m.len();
                if m.iter().any(|r| r.len() != s) {
                    return Err(Error::Structural("generator not square".into()));
                }
                Ok(DMatrix::from_fn(s, s, |r, c| m[r][c]))
            })
            .collect::<Result<Vec<_>>>()?;
        let model = MatrixGroupModel::new(alg, gens, DEFAULT_GROUP_TOL)?;
        Ok((triple, model))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Brute-force oracle: Jacobi and ad-invariance from the raw constants
    /// with explicit index sums, independent of `bracket`.
    fn oracle_residuals(alg: &QuadraticLieAlgebra) -> (f64, f64) {
        let n = alg.dim();
        let c = alg.constants();
        let b = alg.pairing();
        let mut jac: f64 = 0.0;
        let mut inv: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    for m in 0..n {
                        let mut s = 0.0;
                        for l in 0..n {
                            s += c[j][k][l] * c[i][l][m] + c[k][i][l] * c[j][l][m] + c[i][j][l] * c[k][l][m];
                        }
                        jac = jac.max(s.abs());
                    }
                    let mut t = 0.0;
                    for l in 0..n {
                        t += c[i][j][l] * b[(l, k)] + c[i][k][l] * b[(j, l)];
                    }
                    inv = inv.max(t.abs());
                }
            }
        }
        (jac, inv)
    }

    fn random_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DVector<f64> {
        DVector::from_fn(n, |_, _| rng.gen_range(-scale..scale))
    }

    #[test]
    fn abelian_hyperbolic_plane_validates() {
        let alg = QuadraticLieAlgebra::new(&abelian_constants(2), DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0])).unwrap();
        let rep = alg.validate();
        assert_eq!(rep.jacobi, 0.0);
        assert_eq!(rep.ad_invariance, 0.0);
        assert!(rep.nondegenerate && rep.passes());
    }

    #[test]
    fn singular_pairing_is_degenerate() {
        let alg = QuadraticLieAlgebra::new(&abelian_constants(2), DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0])).unwrap();
        let rep = alg.validate();
        assert!(!rep.nondegenerate);
        assert!(!rep.passes());
    }

    #[test]
    fn dimension_mismatch_is_structural() {
        let err = QuadraticLieAlgebra::new(&abelian_constants(2), DMatrix::identity(3, 3)).unwrap_err();
        assert!(matches!(err, Error::Structural(_)));
    }

    #[test]
    fn semiabelian_doubles_pass_validation_and_oracle() {
        for c in [abelian_constants(1), aff1_constants(), su2_constants(), heisenberg_constants()] {
            let t = build_semiabelian_double(&c).unwrap();
            let rep = t.algebra().validate();
            assert!(rep.passes(), "{rep:?}");
            let (jac, inv) = oracle_residuals(t.algebra());
            assert!(jac <= 1e-12 && inv <= 1e-12);
            assert_eq!(t.g().isotropy_residual(t.algebra()), 0.0);
            assert_eq!(t.gprime.isotropy_residual(t.algebra()), 0.0);
            assert!(t.g().closure_residual(t.algebra()) <= 1e-12);
            assert!(t.gprime.closure_residual(t.algebra()) <= 1e-12);
        }
    }

    #[test]
    fn one_dimensional_double_is_hyperbolic_plane() {
        let t = build_semiabelian_double(&abelian_constants(1)).unwrap();
        assert_eq!(t.algebra().pairing(), &DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]));
        assert!(t.algebra().is_abelian());
    }

    #[test]
    fn aff1_double_has_abelian_dual() {
        let t = build_semiabelian_double(&aff1_constants()).unwrap();
        let alg = t.algebra();
        for i in 0..2 {
            for j in 0..2 {
                let b = alg.bracket(&t.gprime.vector(i), &t.gprime.vector(j));
                assert_eq!(b.norm(), 0.0);
            }
        }
    }

    #[test]
    fn jacobi_failure_rejected() {
        let mut c = abelian_constants(3);
        c[0][1][2] = 1.0;
        c[1][0][2] = -1.0;
        c[1][2][0] = 1.0;
        c[2][1][0] = -1.0;
        c[0][2][0] = 1.0;
        c[2][0][0] = -1.0;
        assert!(matches!(build_semiabelian_double(&c), Err(Error::InvalidInput(_))));
    }

    fn su2_model() -> (ManinTriple, MatrixGroupModel) {
        let c = su2_constants();
        let t = build_semiabelian_double(&c).unwrap();
        let m = MatrixGroupModel::semiabelian(&c, &t, None).unwrap();
        (t, m)
    }

    #[test]
    fn exp_of_zero_is_identity() {
        let (_, m) = su2_model();
        assert_eq!(m.exp(&DVector::zeros(6)), m.identity());
    }

    #[test]
    fn log_inverts_exp() {
        let (_, m) = su2_model();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let mut x = random_vec(&mut rng, 6, 1.0);
            x *= 0.5 * rng.gen::<f64>() / x.norm();
            let y = m.log(&m.exp(&x)).unwrap();
            assert!((y - &x).norm() <= 1e-10);
        }
    }

    #[test]
    fn log_outside_domain_errors() {
        let m = -DMatrix::<f64>::identity(2, 2);
        assert!(matches!(logm(&m), Err(Error::Domain(_))));
    }

    #[test]
    fn adjoint_matches_exp_ad_series() {
        let (t, m) = su2_model();
        let alg = t.algebra();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let x = random_vec(&mut rng, 6, 0.4);
            let g = m.exp(&x);
            let series = alg.exp_ad(&x);
            let ad = m.adjoint_matrix(&g).unwrap();
            assert!(linalg::max_abs(&(ad - series)) <= 1e-10);
        }
    }

    #[test]
    fn adjoint_preserves_pairing() {
        let (t, m) = su2_model();
        let alg = t.algebra();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let g = m.exp(&random_vec(&mut rng, 6, 0.3));
            let (x, y) = (random_vec(&mut rng, 6, 1.0), random_vec(&mut rng, 6, 1.0));
            let lhs = alg.pair(&m.adjoint(&g, &x).unwrap(), &m.adjoint(&g, &y).unwrap());
            assert!((lhs - alg.pair(&x, &y)).abs() <= 1e-10);
        }
    }

    #[test]
    fn factorize_identity() {
        let (t, m) = su2_model();
        let f = m.factorize(&m.identity(), &t.gprime, t.g()).unwrap();
        assert_eq!(f.left, m.identity());
        assert_eq!(f.right, m.identity());
    }

    #[test]
    fn semidirect_closed_form_is_exact() {
        let (t, m) = su2_model();
        let mut x = DVector::zeros(6);
        x[0] = 0.3;
        x[2] = -0.2;
        let mut xi = DVector::zeros(6);
        xi[3] = 0.7;
        xi[5] = -0.1;
        let g = m.exp(&x);
        let k = m.exp(&xi);
        let f = m.factorize(&(&k * &g), &t.gprime, t.g()).unwrap();
        assert_eq!(f.iterations, 0);
        assert!(f.residual == 0.0);
        assert!(linalg::max_abs(&(f.right - &g)) < 1e-15);
    }

    #[test]
    fn newton_factorization_round_trip() {
        // Newton path: factor with respect to the pair (g*, g) in the
        // aff(1) double with generators that carry no layout metadata
        let c = aff1_constants();
        let t = build_semiabelian_double(&c).unwrap();
        let sm = MatrixGroupModel::semiabelian(&c, &t, None).unwrap();
        let m = MatrixGroupModel::new(t.algebra().clone(), sm.generators().to_vec(), 1e-12).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..25 {
            let a = &t.g().basis * random_vec(&mut rng, 2, 0.1);
            let ap = &t.gprime.basis * random_vec(&mut rng, 2, 0.1);
            let (k, q) = (m.exp(&ap), m.exp(&a));
            let f = m.factorize(&(&k * &q), &t.gprime, t.g()).unwrap();
            assert!(f.residual <= 1e-10);
            assert!(linalg::max_abs(&(f.left - k)) <= 1e-10);
            assert!(linalg::max_abs(&(f.right - q)) <= 1e-10);
        }
    }

    #[test]
    fn heisenberg_needs_explicit_rep() {
        let c = heisenberg_constants();
        let t = build_semiabelian_double(&c).unwrap();
        assert!(MatrixGroupModel::semiabelian(&c, &t, None).is_err());
        assert!(MatrixGroupModel::semiabelian(&c, &t, Some(heisenberg_rep())).is_ok());
    }

    #[test]
    fn algebra_file_round_trip() {
        let (t, m) = su2_model();
        let file = AlgebraFile::from_parts(&t, &m);
        let json = serde_json::to_string(&file).unwrap();
        assert!(json.contains("\"B\"") && json.contains("\"gprime_basis\""));
        let back: AlgebraFile = serde_json::from_str(&json).unwrap();
        let (t2, m2) = back.build().unwrap();
        assert_eq!(t2.algebra().dim(), 6);
        assert!(m2.commutator_defect() <= 1e-12);
    }
}
