//! Left-invariant forms on a group, i.e. alternating cochains on its Lie
//! algebra, with the Chevalley-Eilenberg differential.  Used wherever an
//! identity only involves invariant data (Maurer-Cartan form, Cartan 3-form).

use nalgebra::DVector;

use crate::liealg::QuadraticLieAlgebra;

/// Dense alternating `k`-cochain on an `n`-dimensional algebra.
#[derive(Clone, Debug, PartialEq)]
pub struct Cochain {
    n: usize,
    k: usize,
    vals: Vec<f64>,
}

fn flat(n: usize, idx: &[usize]) -> usize {
    idx.iter().fold(0, |acc, &i| acc * n + i)
}

fn unflat(n: usize, k: usize, mut f: usize) -> Vec<usize> {
    let mut idx = vec![0; k];
    for slot in (0..k).rev() {
        idx[slot] = f % n;
        f /= n;
    }
    idx
}

/// Sign of the permutation sorting `idx`, or 0 if an index repeats.
fn perm_sign(idx: &[usize]) -> f64 {
    let mut sign = 1.0;
    for i in 0..idx.len() {
        for j in i + 1..idx.len() {
            if idx[i] == idx[j] {
                return 0.0;
            }
            if idx[i] > idx[j] {
                sign = -sign;
            }
        }
    }
    sign
}

/// Shuffles of `p + q` slots: the first `p` positions, with their sign.
fn shuffles(p: usize, q: usize) -> Vec<(Vec<usize>, Vec<usize>, f64)> {
    let total = p + q;
    let mut out = Vec::new();
    for mask in 0u32..(1 << total) {
        if mask.count_ones() as usize != p {
            continue;
        }
        let first: Vec<usize> = (0..total).filter(|i| mask & (1 << i) != 0).collect();
        let second: Vec<usize> = (0..total).filter(|i| mask & (1 << i) == 0).collect();
        let perm: Vec<usize> = first.iter().chain(second.iter()).cloned().collect();
        out.push((first, second, perm_sign(&perm)));
    }
    out
}

impl Cochain {
    pub fn zero(n: usize, k: usize) -> Self {
        Self { n, k, vals: vec![0.0; n.pow(k as u32)] }
    }

    pub fn constant(n: usize, c: f64) -> Self {
        Self { n, k: 0, vals: vec![c] }
    }

    /// Antisymmetrization `(1/k!) sum sgn(s) f(x_s)` of an arbitrary multilinear function on basis tuples.
    pub fn alternate(n: usize, k: usize, f: impl Fn(&[usize]) -> f64) -> Self {
        let mut out = Self::zero(n, k);
        let mut fact = 1.0;
        for i in 2..=k {
            fact *= i as f64;
        }
        for fi in 0..out.vals.len() {
            let idx = unflat(n, k, fi);
            if perm_sign(&idx) == 0.0 {
                continue;
            }
            let mut acc = 0.0;
            for perm in permutations(k) {
                let permuted: Vec<usize> = perm.iter().map(|&p| idx[p]).collect();
                acc += perm_sign(&perm) * f(&permuted);
            }
            out.vals[fi] = acc / fact;
        }
        out
    }

    /// The cochain `x_1..x_k -> f(x_1..x_k)` for an `f` already alternating.
    pub fn from_alternating(n: usize, k: usize, f: impl Fn(&[usize]) -> f64) -> Self {
        let mut out = Self::zero(n, k);
        for fi in 0..out.vals.len() {
            let idx = unflat(n, k, fi);
            if perm_sign(&idx) != 0.0 {
                out.vals[fi] = f(&idx);
            }
        }
        out
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn degree(&self) -> usize {
        self.k
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.vals[flat(self.n, idx)]
    }

    /// Multilinear evaluation on arbitrary vectors.
    pub fn eval(&self, xs: &[DVector<f64>]) -> f64 {
        assert_eq!(xs.len(), self.k);
        let mut acc = 0.0;
        for (fi, v) in self.vals.iter().enumerate() {
            if *v == 0.0 {
                continue;
            }
            let idx = unflat(self.n, self.k, fi);
            acc += v * idx.iter().zip(xs).map(|(&i, x)| x[i]).product::<f64>();
        }
        acc
    }

    pub fn add(&self, o: &Self) -> Self {
        assert_eq!((self.n, self.k), (o.n, o.k));
        Self { n: self.n, k: self.k, vals: self.vals.iter().zip(&o.vals).map(|(a, b)| a + b).collect() }
    }

    pub fn sub(&self, o: &Self) -> Self {
        self.add(&o.scale(-1.0))
    }

    pub fn scale(&self, s: f64) -> Self {
        Self { n: self.n, k: self.k, vals: self.vals.iter().map(|v| v * s).collect() }
    }

    pub fn max_abs(&self) -> f64 {
        self.vals.iter().fold(0.0, |a, v| a.max(v.abs()))
    }

    /// `(i_v w)(x_2..x_k) = w(v, x_2..x_k)`.
    pub fn interior(&self, v: &DVector<f64>) -> Self {
        assert!(self.k >= 1);
        let mut out = Self::zero(self.n, self.k - 1);
        let stride = out.vals.len();
        for (fi, o) in out.vals.iter_mut().enumerate() {
            *o = (0..self.n).map(|i| v[i] * self.vals[i * stride + fi]).sum();
        }
        out
    }

    /// Wedge product with the determinant normalization `(a^b)(x, y) = a(x)b(y) - a(y)b(x)`.
    pub fn wedge(&self, o: &Self) -> Self {
        assert_eq!(self.n, o.n);
        let (p, q) = (self.k, o.k);
        let sh = shuffles(p, q);
        Self::from_alternating(self.n, p + q, |idx| {
            sh.iter()
                .map(|(a, b, s)| {
                    let ia: Vec<usize> = a.iter().map(|&i| idx[i]).collect();
                    let ib: Vec<usize> = b.iter().map(|&i| idx[i]).collect();
                    s * self.get(&ia) * o.get(&ib)
                })
                .sum()
        })
    }

    /// Chevalley-Eilenberg differential with trivial coefficients:
    /// `(dw)(x_0..x_k) = sum_{i<j} (-1)^{i+j} w([x_i, x_j], x_0..^i..^j..x_k)`.
    pub fn d(&self, alg: &QuadraticLieAlgebra) -> Self {
        assert_eq!(alg.dim(), self.n);
        let n = self.n;
        let k = self.k;
        Self::from_alternating(n, k + 1, |idx| {
            let mut acc = 0.0;
            for i in 0..=k {
                for j in i + 1..=k {
                    let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
                    let rest: Vec<usize> = (0..=k).filter(|&m| m != i && m != j).map(|m| idx[m]).collect();
                    let mut slot = Vec::with_capacity(k);
                    slot.push(0);
                    slot.extend_from_slice(&rest);
                    for m in 0..n {
                        let c = alg.c(idx[i], idx[j], m);
                        if c != 0.0 {
                            slot[0] = m;
                            acc += sign * c * self.get(&slot);
                        }
                    }
                }
            }
            acc
        })
    }
}

fn permutations(k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(k - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, k - 1);
            out.push(q);
        }
    }
    out
}

/// An invariant form with values in an algebra (components in its basis).
#[derive(Clone, Debug, PartialEq)]
pub struct ValuedCochain {
    pub comps: Vec<Cochain>,
}

impl ValuedCochain {
    /// The 1-form `x -> m x` for a linear map `m` (rows index the value algebra).
    pub fn linear(m: &nalgebra::DMatrix<f64>) -> Self {
        let n = m.ncols();
        Self {
            comps: (0..m.nrows())
                .map(|r| Cochain::from_alternating(n, 1, |idx| m[(r, idx[0])]))
                .collect(),
        }
    }

    pub fn degree(&self) -> usize {
        self.comps[0].degree()
    }

    pub fn add(&self, o: &Self) -> Self {
        Self { comps: self.comps.iter().zip(&o.comps).map(|(a, b)| a.add(b)).collect() }
    }

    pub fn scale(&self, s: f64) -> Self {
        Self { comps: self.comps.iter().map(|a| a.scale(s)).collect() }
    }

    pub fn d(&self, alg: &QuadraticLieAlgebra) -> Self {
        Self { comps: self.comps.iter().map(|a| a.d(alg)).collect() }
    }

    pub fn max_abs(&self) -> f64 {
        self.comps.iter().fold(0.0, |a, c| a.max(c.max_abs()))
    }

    /// `<a ^ b>` using the pairing of the value algebra.
    pub fn pair_wedge(&self, o: &Self, values: &QuadraticLieAlgebra) -> Cochain {
        let b = values.pairing();
        let mut acc: Option<Cochain> = None;
        for i in 0..self.comps.len() {
            for j in 0..o.comps.len() {
                if b[(i, j)] != 0.0 {
                    let t = self.comps[i].wedge(&o.comps[j]).scale(b[(i, j)]);
                    acc = Some(match acc {
                        Some(a) => a.add(&t),
                        None => t,
                    });
                }
            }
        }
        acc.unwrap_or_else(|| Cochain::zero(self.comps[0].dim(), self.degree() + o.degree()))
    }

    /// `[a ^ b]` using the bracket of the value algebra.
    pub fn bracket_wedge(&self, o: &Self, values: &QuadraticLieAlgebra) -> Self {
        let n = self.comps[0].dim();
        let dv = values.dim();
        let mut comps = vec![Cochain::zero(n, self.degree() + o.degree()); dv];
        for i in 0..dv {
            for j in 0..dv {
                let w = self.comps[i].wedge(&o.comps[j]);
                for (m, c) in comps.iter_mut().enumerate() {
                    let s = values.c(i, j, m);
                    if s != 0.0 {
                        *c = c.add(&w.scale(s));
                    }
                }
            }
        }
        Self { comps }
    }

    /// Contraction `<v, a>` into a scalar cochain.
    pub fn pair_with(&self, v: &DVector<f64>, values: &QuadraticLieAlgebra) -> Cochain {
        let bv = values.pairing() * v;
        self.comps
            .iter()
            .enumerate()
            .fold(Cochain::zero(self.comps[0].dim(), self.degree()), |acc, (i, c)| acc.add(&c.scale(bv[i])))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::liealg::{build_semiabelian_double, su2_constants};
    use nalgebra::DMatrix;

    fn su2_double() -> QuadraticLieAlgebra {
        build_semiabelian_double(&su2_constants()).unwrap().algebra().clone()
    }

    #[test]
    fn wedge_normalization() {
        let a = Cochain::from_alternating(3, 1, |i| if i[0] == 0 { 1.0 } else { 0.0 });
        let b = Cochain::from_alternating(3, 1, |i| if i[0] == 1 { 1.0 } else { 0.0 });
        let ab = a.wedge(&b);
        assert_eq!(ab.get(&[0, 1]), 1.0);
        assert_eq!(ab.get(&[1, 0]), -1.0);
        let c = Cochain::from_alternating(3, 1, |i| if i[0] == 2 { 1.0 } else { 0.0 });
        assert_eq!(ab.wedge(&c).get(&[0, 1, 2]), 1.0);
        assert_eq!(ab.wedge(&c).get(&[2, 1, 0]), -1.0);
    }

    #[test]
    fn d_squared_vanishes() {
        let alg = su2_double();
        let w = Cochain::alternate(6, 2, |i| (i[0] as f64 + 1.0) * (2.0 * i[1] as f64 - 1.5));
        assert!(w.d(&alg).d(&alg).max_abs() < 1e-12);
        let v = Cochain::from_alternating(6, 1, |i| 0.3 * i[0] as f64 - 0.7);
        assert!(v.d(&alg).d(&alg).max_abs() < 1e-12);
    }

    #[test]
    fn d_of_one_cochain_is_minus_bracket() {
        let alg = su2_double();
        let v = Cochain::from_alternating(6, 1, |i| (i[0] as f64).sin());
        let dv = v.d(&alg);
        for a in 0..6 {
            for b in 0..6 {
                let br = alg.bracket(&alg.basis(a), &alg.basis(b));
                let expected = -(0..6).map(|m| br[m] * v.get(&[m])).sum::<f64>();
                assert!((dv.get(&[a, b]) - expected).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn maurer_cartan_is_flat() {
        let alg = su2_double();
        let a = ValuedCochain::linear(&DMatrix::identity(6, 6));
        let f = a.d(&alg).add(&a.bracket_wedge(&a, &alg).scale(0.5));
        assert!(f.max_abs() < 1e-14);
    }
}
