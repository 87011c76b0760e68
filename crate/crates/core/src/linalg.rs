//! Precision-aware linear algebra over the scalar rings of the crate:
//! Q_p at precision, K_n at precision, and K_n[[t]] truncations.
//!
//! Pivoting is by maximal entry, i.e. smallest valuation, the p-adic analogue
//! of partial pivoting; entries whose valuation clears the tolerance are
//! treated as zero. Smith normal form is provided over the local rings
//! (p-adic and t-adic), where divisibility is valuation comparison and a
//! globally minimal pivot keeps the elementary divisors in a chain.

use crate::cyclo::{CyclotomicScalar, Rational};
use crate::error::{Error, Result};
use crate::localize::TPowerSeries;
use crate::padic::PadicScalar;

/// Scalar requirements for the matrix routines.
pub trait LocalEntry: Clone {
    fn val(&self) -> Option<Rational>;
    fn add(&self, o: &Self) -> Self;
    fn sub(&self, o: &Self) -> Self;
    fn mul(&self, o: &Self) -> Self;
    fn neg(&self) -> Self;
    /// self / b, defined whenever exact in the local ring (for fields: b != 0).
    fn divide_exact(&self, b: &Self) -> Result<Self>;
    fn zero_like(&self) -> Self;
    fn one_like(&self) -> Self;
    /// Retained digits past the leading one; a pivot this shallow is
    /// indistinguishable from zero in its own data.
    fn known_digits(&self) -> u32;
    fn is_zero_at(&self, tol: &Rational) -> bool {
        self.val().map_or(true, |v| v >= *tol)
    }
}

impl LocalEntry for PadicScalar {
    fn val(&self) -> Option<Rational> {
        self.valuation().map(Rational::from_integer)
    }
    fn add(&self, o: &Self) -> Self {
        PadicScalar::add(self, o)
    }
    fn sub(&self, o: &Self) -> Self {
        PadicScalar::sub(self, o)
    }
    fn mul(&self, o: &Self) -> Self {
        PadicScalar::mul(self, o)
    }
    fn neg(&self) -> Self {
        PadicScalar::neg(self)
    }
    fn divide_exact(&self, b: &Self) -> Result<Self> {
        self.div(b)
    }
    fn zero_like(&self) -> Self {
        PadicScalar::zero(self.prime(), self.relprec().max(1) as i64 * 4)
    }
    fn one_like(&self) -> Self {
        PadicScalar::one(self.prime(), self.relprec().max(1))
    }
    fn known_digits(&self) -> u32 {
        self.relprec()
    }
}

impl LocalEntry for CyclotomicScalar {
    fn val(&self) -> Option<Rational> {
        self.valuation()
    }
    fn add(&self, o: &Self) -> Self {
        CyclotomicScalar::add(self, o)
    }
    fn sub(&self, o: &Self) -> Self {
        CyclotomicScalar::sub(self, o)
    }
    fn mul(&self, o: &Self) -> Self {
        CyclotomicScalar::mul(self, o)
    }
    fn neg(&self) -> Self {
        CyclotomicScalar::neg(self)
    }
    fn divide_exact(&self, b: &Self) -> Result<Self> {
        self.div(b)
    }
    fn zero_like(&self) -> Self {
        CyclotomicScalar::zero(self.prime(), self.level(), 1 << 40)
    }
    fn one_like(&self) -> Self {
        let r = self
            .coeffs()
            .iter()
            .map(|c| c.relprec())
            .max()
            .unwrap_or(1)
            .max(1);
        CyclotomicScalar::one(self.prime(), self.level(), r)
    }
    fn known_digits(&self) -> u32 {
        self.coeffs().iter().map(|c| c.relprec()).max().unwrap_or(0)
    }
}

impl LocalEntry for TPowerSeries {
    /// t-adic order at precision.
    fn val(&self) -> Option<Rational> {
        for (k, c) in self.coeffs().iter().enumerate() {
            if !c.is_zero_at_precision() {
                return Some(Rational::from_integer(k as i64));
            }
        }
        None
    }
    fn add(&self, o: &Self) -> Self {
        TPowerSeries::add(self, o)
    }
    fn sub(&self, o: &Self) -> Self {
        TPowerSeries::sub(self, o)
    }
    fn mul(&self, o: &Self) -> Self {
        TPowerSeries::mul(self, o)
    }
    fn neg(&self) -> Self {
        TPowerSeries::neg(self)
    }
    fn divide_exact(&self, b: &Self) -> Result<Self> {
        let bord = b
            .val()
            .ok_or(Error::DivisionByZeroAtPrecision)?
            .to_integer() as usize;
        if let Some(aord) = self.val() {
            if aord < Rational::from_integer(bord as i64) {
                return Err(Error::NotDivisible("t-order of divisor exceeds dividend".into()));
            }
        } else {
            return Ok(self.clone());
        }
        let mut a = self.clone();
        let mut bb = b.clone();
        for _ in 0..bord {
            a = a.div_t()?;
            bb = bb.div_t()?;
        }
        Ok(a.mul(&bb.invert()?))
    }
    fn zero_like(&self) -> Self {
        TPowerSeries::zero(self.prime(), self.level(), self.order())
    }
    fn one_like(&self) -> Self {
        let one = CyclotomicScalar::one(self.prime(), self.level(), 64);
        TPowerSeries::from_constant(&one, self.order())
    }
    fn known_digits(&self) -> u32 {
        self.coeffs()
            .iter()
            .flat_map(|c| c.coeffs().iter().map(|x| x.relprec()))
            .max()
            .unwrap_or(0)
    }
}

/// Dense matrix over one of the precision-tracked scalar rings.
#[derive(Debug, Clone)]
pub struct PrecMatrix<E: LocalEntry> {
    rows: usize,
    cols: usize,
    entries: Vec<E>,
}

impl<E: LocalEntry> PrecMatrix<E> {
    pub fn new(rows: usize, cols: usize, entries: Vec<E>) -> Self {
        assert_eq!(entries.len(), rows * cols, "inconsistent dimensions");
        PrecMatrix { rows, cols, entries }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> E) -> Self {
        let mut entries = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                entries.push(f(i, j));
            }
        }
        PrecMatrix { rows, cols, entries }
    }

    pub fn identity_like(n: usize, exemplar: &E) -> Self {
        PrecMatrix::from_fn(n, n, |i, j| {
            if i == j {
                exemplar.one_like()
            } else {
                exemplar.zero_like()
            }
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn at(&self, i: usize, j: usize) -> &E {
        &self.entries[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: E) {
        self.entries[i * self.cols + j] = v;
    }

    pub fn matmul(&self, other: &PrecMatrix<E>) -> PrecMatrix<E> {
        assert_eq!(self.cols, other.rows);
        PrecMatrix::from_fn(self.rows, other.cols, |i, j| {
            let mut acc = self.at(i, 0).mul(other.at(0, j));
            for k in 1..self.cols {
                acc = acc.add(&self.at(i, k).mul(other.at(k, j)));
            }
            acc
        })
    }

    pub fn apply(&self, v: &[E]) -> Vec<E> {
        assert_eq!(self.cols, v.len());
        (0..self.rows)
            .map(|i| {
                let mut acc = self.at(i, 0).mul(&v[0]);
                for k in 1..self.cols {
                    acc = acc.add(&self.at(i, k).mul(&v[k]));
                }
                acc
            })
            .collect()
    }

    fn swap_rows(&mut self, a: usize, b: usize) {
        if a == b {
            return;
        }
        for j in 0..self.cols {
            self.entries.swap(a * self.cols + j, b * self.cols + j);
        }
    }

    fn swap_cols(&mut self, a: usize, b: usize) {
        if a == b {
            return;
        }
        for i in 0..self.rows {
            self.entries.swap(i * self.cols + a, i * self.cols + b);
        }
    }

    /// Minimal valuation over all entries (None when all vanish at precision).
    pub fn min_valuation(&self) -> Option<Rational> {
        self.entries.iter().filter_map(|e| e.val()).min()
    }
}

/// Kernel by column echelon with smallest-valuation pivoting. Entries of
/// valuation >= tol count as zero; returns basis vectors together with the
/// certified residual valuation of A*v over the returned basis.
pub fn kernel<E: LocalEntry>(
    a: &PrecMatrix<E>,
    tol: Rational,
    slack: u32,
) -> Result<(Vec<Vec<E>>, Option<Rational>)> {
    let mut m = a.clone();
    let exemplar = if m.entries.is_empty() {
        return Ok((vec![], None));
    } else {
        m.entries[0].clone()
    };
    let mut c = PrecMatrix::identity_like(m.cols, &exemplar);
    let mut used = vec![false; m.cols];
    // An entry close to the threshold with almost no retained digits cannot
    // be certified nonzero; it is skipped as a pivot and only matters if it
    // later blocks a kernel decision.
    let ambiguous = |e: &E| -> bool {
        match e.val() {
            None => false,
            Some(v) => {
                v < tol && v > tol - Rational::from_integer(slack as i64) && e.known_digits() < slack
            }
        }
    };
    for row in 0..m.rows {
        // pick unused column with entry of least valuation in this row
        let mut best: Option<(usize, Rational)> = None;
        for j in 0..m.cols {
            if used[j] {
                continue;
            }
            if let Some(v) = m.at(row, j).val() {
                if v < tol {
                    match &best {
                        Some((_, bv)) if *bv <= v => {}
                        _ => best = Some((j, v)),
                    }
                }
            }
        }
        let (pj, _pv) = match best {
            None => continue,
            Some(x) => x,
        };
        used[pj] = true;
        let pivot = m.at(row, pj).clone();
        for j in 0..m.cols {
            if j == pj || used[j] {
                continue;
            }
            let e = m.at(row, j).clone();
            if e.is_zero_at(&tol) {
                continue;
            }
            let f = e.divide_exact(&pivot)?;
            for i in 0..m.rows {
                let nv = m.at(i, j).sub(&f.mul(m.at(i, pj)));
                m.set(i, j, nv);
            }
            for i in 0..c.rows {
                let nv = c.at(i, j).sub(&f.mul(c.at(i, pj)));
                c.set(i, j, nv);
            }
        }
        if used.iter().all(|&u| u) {
            break;
        }
    }
    let mut basis = Vec::new();
    let mut worst: Option<Rational> = None;
    if std::env::var("ROBBA_DBG_KER").is_ok() {
        let unused: Vec<usize> = (0..m.cols).filter(|&j| !used[j]).collect();
        eprintln!("kernel: {} cols, {} pivots, unused {:?}", m.cols, used.iter().filter(|&&u| u).count(), unused);
        for &j in &unused {
            let worst_entry = (0..m.rows).filter_map(|i| m.at(i, j).val().map(|v| (v, i))).min();
            eprintln!("  unused col {}: worst residual {:?}", j, worst_entry);
        }
    }
    for j in 0..m.cols {
        if used[j] {
            continue;
        }
        let col_zero = (0..m.rows).all(|i| m.at(i, j).is_zero_at(&tol));
        if !col_zero {
            if std::env::var("ROBBA_DBG_KERNEL").is_ok() {
                let worst = (0..m.rows)
                    .filter_map(|i| m.at(i, j).val().map(|v| (v, i)))
                    .min();
                eprintln!("blocked col {} worst {:?}", j, worst);
            }
            // If the only obstructions are barely-known entries, the kernel
            // membership of this column is genuinely undecidable.
            let only_ambiguous = (0..m.rows)
                .all(|i| m.at(i, j).is_zero_at(&tol) || ambiguous(m.at(i, j)));
            if only_ambiguous {
                return Err(Error::IllConditioned(
                    "kernel membership blocked by entries with too few known digits".into(),
                ));
            }
        }
        if col_zero {
            let v: Vec<E> = (0..c.rows).map(|i| c.at(i, j).clone()).collect();
            let resid = (0..m.rows).filter_map(|i| m.at(i, j).val()).min();
            worst = match (worst, resid) {
                (None, r) => r,
                (w, None) => w,
                (Some(w), Some(r)) => Some(w.min(r)),
            };
            basis.push(v);
        }
    }
    Ok((basis, worst))
}

/// Result of a Smith normal form computation: U * A * V = D with U, V
/// unimodular at precision and the diagonal in a divisibility chain.
pub struct SnfResult<E: LocalEntry> {
    pub u: PrecMatrix<E>,
    pub d: PrecMatrix<E>,
    pub v: PrecMatrix<E>,
    /// determinant of U and of V (signs from swaps only).
    pub det_u_sign: i32,
    pub det_v_sign: i32,
}

impl<E: LocalEntry> SnfResult<E> {
    pub fn diagonal(&self) -> Vec<E> {
        let n = self.d.rows().min(self.d.cols());
        (0..n).map(|i| self.d.at(i, i).clone()).collect()
    }
}

/// Smith normal form over a local ring at precision: the pivot of each round
/// is the globally smallest valuation in the remaining block, so divisions
/// stay exact and the diagonal valuations are nondecreasing.
pub fn snf_local<E: LocalEntry>(a: &PrecMatrix<E>) -> Result<SnfResult<E>> {
    let mut m = a.clone();
    if m.entries.is_empty() {
        return Err(Error::InvalidInput("empty matrix".into()));
    }
    let exemplar = m.entries[0].clone();
    let mut u = PrecMatrix::identity_like(m.rows, &exemplar);
    let mut v = PrecMatrix::identity_like(m.cols, &exemplar);
    let mut det_u_sign = 1;
    let mut det_v_sign = 1;
    let steps = m.rows.min(m.cols);
    for t in 0..steps {
        // global minimum valuation in the trailing block
        let mut best: Option<(usize, usize, Rational)> = None;
        for i in t..m.rows {
            for j in t..m.cols {
                if let Some(val) = m.at(i, j).val() {
                    match &best {
                        Some((_, _, bv)) if *bv <= val => {}
                        _ => best = Some((i, j, val)),
                    }
                }
            }
        }
        let (pi, pj, _) = match best {
            None => break,
            Some(x) => x,
        };
        if pi != t {
            m.swap_rows(t, pi);
            u.swap_rows(t, pi);
            det_u_sign = -det_u_sign;
        }
        if pj != t {
            m.swap_cols(t, pj);
            v.swap_cols(t, pj);
            det_v_sign = -det_v_sign;
        }
        let pivot = m.at(t, t).clone();
        // clear the column below
        for i in (t + 1)..m.rows {
            let e = m.at(i, t).clone();
            if e.val().is_none() {
                continue;
            }
            let f = e.divide_exact(&pivot)?;
            for j in 0..m.cols {
                let nv = m.at(i, j).sub(&f.mul(m.at(t, j)));
                m.set(i, j, nv);
            }
            for j in 0..u.cols {
                let nv = u.at(i, j).sub(&f.mul(u.at(t, j)));
                u.set(i, j, nv);
            }
        }
        // clear the row to the right
        for j in (t + 1)..m.cols {
            let e = m.at(t, j).clone();
            if e.val().is_none() {
                continue;
            }
            let g = e.divide_exact(&pivot)?;
            for i in 0..m.rows {
                let nv = m.at(i, j).sub(&g.mul(m.at(i, t)));
                m.set(i, j, nv);
            }
            for i in 0..v.rows {
                let nv = v.at(i, j).sub(&g.mul(v.at(i, t)));
                v.set(i, j, nv);
            }
        }
    }
    Ok(SnfResult { u, d: m, v, det_u_sign, det_v_sign })
}

/// Determinant by elimination with smallest-valuation pivoting.
pub fn det<E: LocalEntry>(a: &PrecMatrix<E>) -> Result<E> {
    if a.rows != a.cols {
        return Err(Error::InvalidInput("determinant of a non-square matrix".into()));
    }
    let snf = snf_local(a)?;
    let mut acc = a.entries[0].one_like();
    for d in snf.diagonal() {
        acc = acc.mul(&d);
    }
    let n = a.rows.min(a.cols);
    // If the diagonal ran short (rank deficiency), the determinant vanishes
    // at the precision of the remaining block.
    for i in 0..n {
        if snf.d.at(i, i).val().is_none() {
            return Ok(snf.d.at(i, i).clone());
        }
    }
    if snf.det_u_sign * snf.det_v_sign < 0 {
        acc = acc.neg();
    }
    Ok(acc)
}

/// Solve A x = b by elimination; returns (x, residual valuation of A x - b).
pub fn solve<E: LocalEntry>(
    a: &PrecMatrix<E>,
    b: &[E],
    tol: Rational,
) -> Result<(Vec<E>, Option<Rational>)> {
    if a.rows != a.cols || a.rows != b.len() {
        return Err(Error::InvalidInput("solve needs a square system".into()));
    }
    let n = a.rows;
    let mut m = a.clone();
    let mut rhs: Vec<E> = b.to_vec();
    let mut perm: Vec<usize> = (0..n).collect();
    for t in 0..n {
        let mut best: Option<(usize, Rational)> = None;
        for i in t..n {
            if let Some(v) = m.at(i, t).val() {
                match &best {
                    Some((_, bv)) if *bv <= v => {}
                    _ => best = Some((i, v)),
                }
            }
        }
        let (pi, pv) = best.ok_or(Error::SingularAtPrecision)?;
        if pv >= tol {
            return Err(Error::SingularAtPrecision);
        }
        m.swap_rows(t, pi);
        rhs.swap(t, pi);
        perm.swap(t, pi);
        let pivot = m.at(t, t).clone();
        for i in (t + 1)..n {
            let e = m.at(i, t).clone();
            if e.val().is_none() {
                continue;
            }
            let f = e.divide_exact(&pivot)?;
            for j in t..n {
                let nv = m.at(i, j).sub(&f.mul(m.at(t, j)));
                m.set(i, j, nv);
            }
            rhs[i] = rhs[i].sub(&f.mul(&rhs[t]));
        }
    }
    // back substitution
    let mut x: Vec<E> = vec![m.entries[0].zero_like(); n];
    for t in (0..n).rev() {
        let mut acc = rhs[t].clone();
        for j in (t + 1)..n {
            acc = acc.sub(&m.at(t, j).mul(&x[j]));
        }
        x[t] = acc.divide_exact(m.at(t, t))?;
    }
    let ax = a.apply(&x);
    let resid = ax
        .iter()
        .zip(b)
        .filter_map(|(l, r)| l.sub(r).val())
        .min();
    Ok((x, resid))
}

/// Characteristic polynomial coefficients (monic, constant term first) by the
/// Faddeev-LeVerrier recursion; divisions by k cost v_p(k) digits.
pub fn char_poly(a: &PrecMatrix<CyclotomicScalar>) -> Result<Vec<CyclotomicScalar>> {
    if a.rows != a.cols {
        return Err(Error::InvalidInput("char poly of a non-square matrix".into()));
    }
    let n = a.rows;
    let exemplar = a.entries[0].clone();
    let one = exemplar.one_like();
    let mut coeffs = vec![exemplar.zero_like(); n + 1];
    coeffs[n] = one.clone();
    let mut m = PrecMatrix::identity_like(n, &exemplar);
    let mut c_prev = one.clone();
    let p = exemplar.prime();
    for k in 1..=n {
        // M_k = A * (M_{k-1} + c_{n-k+1} I) with c tracked incrementally.
        if k > 1 {
            for i in 0..n {
                let nv = LocalEntry::add(m.at(i, i), &c_prev);
                m.set(i, i, nv);
            }
        }
        m = a.matmul(&m);
        // c = -tr(M_k)/k
        let mut tr = m.at(0, 0).clone();
        for i in 1..n {
            tr = LocalEntry::add(&tr, m.at(i, i));
        }
        let kinv = PadicScalar::from_i64(p, k as i64, 64).inv()?;
        let c = tr.scale(&kinv).neg();
        coeffs[n - k] = c.clone();
        c_prev = c;
    }
    Ok(coeffs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::budget::PrecisionBudget;

    fn qp(p: u64, n: i64) -> PadicScalar {
        PadicScalar::from_i64(p, n, 40)
    }

    #[test]
    fn kernel_examples() {
        let p = 3u64;
        // [[1, p],[p, p^2]]: kernel spanned by (-p, 1).
        let a = PrecMatrix::new(2, 2, vec![qp(p, 1), qp(p, 3), qp(p, 3), qp(p, 9)]);
        let (basis, resid) = kernel(&a, Rational::from_integer(30), 8).unwrap();
        assert_eq!(basis.len(), 1);
        let v = &basis[0];
        // check A v = 0 and v is proportional to (-p, 1)
        let av = a.apply(v);
        assert!(av.iter().all(|e| e.is_zero_at(&Rational::from_integer(30))));
        let ratio = v[0].div(&v[1]).unwrap();
        assert!(ratio.eq_at_precision(&qp(p, -3)));
        assert!(resid.map_or(true, |r| r >= Rational::from_integer(30)));
        // identity: empty kernel.
        let id = PrecMatrix::new(2, 2, vec![qp(p, 1), qp(p, 0), qp(p, 0), qp(p, 1)]);
        let (basis, _) = kernel(&id, Rational::from_integer(30), 8).unwrap();
        assert!(basis.is_empty());
    }

    #[test]
    fn snf_over_padic() {
        let p = 3u64;
        let a = PrecMatrix::new(2, 2, vec![qp(p, 3), qp(p, 0), qp(p, 0), qp(p, 27)]);
        let snf = snf_local(&a).unwrap();
        let d = snf.diagonal();
        assert_eq!(d[0].valuation(), Some(1));
        assert_eq!(d[1].valuation(), Some(3));
        // reconstruction U A V = D
        let uav = snf.u.matmul(&a).matmul(&snf.v);
        for i in 0..2 {
            for j in 0..2 {
                let diff = uav.at(i, j).sub(snf.d.at(i, j));
                assert!(diff.is_zero_at_precision());
            }
        }
    }

    #[test]
    fn snf_over_tseries_example() {
        // [[t, t^2],[t^2, t^3 + t^4]] -> diag(t, t^4), det = t^5.
        let p = 2u64;
        let b = PrecisionBudget::default();
        let _ = b;
        let one = CyclotomicScalar::one(p, 1, 40);
        let w = 8;
        let tp = |ord: usize| {
            let mut cs = vec![CyclotomicScalar::zero(p, 1, 1 << 40); w];
            cs[ord] = one.clone();
            TPowerSeries::new(p, 1, w, cs)
        };
        let t3_plus_t4 = tp(3).add(&tp(4));
        let a = PrecMatrix::new(2, 2, vec![tp(1), tp(2), tp(2), t3_plus_t4]);
        let snf = snf_local(&a).unwrap();
        let d = snf.diagonal();
        assert_eq!(d[0].val(), Some(Rational::from_integer(1)));
        assert_eq!(d[1].val(), Some(Rational::from_integer(4)));
        let dt = det(&a).unwrap();
        assert_eq!(dt.val(), Some(Rational::from_integer(5)));
        // U A V = D
        let uav = snf.u.matmul(&a).matmul(&snf.v);
        for i in 0..2 {
            for j in 0..2 {
                let diff = uav.at(i, j).sub(snf.d.at(i, j));
                assert!(diff.is_zero_at_precision(), "entry {} {}", i, j);
            }
        }
    }

    #[test]
    fn det_and_solve() {
        let p = 5u64;
        let id3 = PrecMatrix::identity_like(3, &qp(p, 1));
        assert!(det(&id3).unwrap().eq_at_precision(&qp(p, 1)));
        // solve [[1,0],[0,p]] x = (1, p): x = (1, 1).
        let a = PrecMatrix::new(2, 2, vec![qp(p, 1), qp(p, 0), qp(p, 0), qp(p, 5)]);
        let (x, resid) = solve(&a, &[qp(p, 1), qp(p, 5)], Rational::from_integer(30)).unwrap();
        assert!(x[0].eq_at_precision(&qp(p, 1)));
        assert!(x[1].eq_at_precision(&qp(p, 1)));
        assert!(resid.is_none() || resid.unwrap() >= Rational::from_integer(30));
    }

    #[test]
    fn char_poly_of_nilpotent() {
        let p = 3u64;
        let one = CyclotomicScalar::one(p, 1, 40);
        let zero = CyclotomicScalar::zero(p, 1, 1 << 40);
        // [[0,1],[0,0]]: char poly X^2.
        let a = PrecMatrix::new(2, 2, vec![zero.clone(), one.clone(), zero.clone(), zero.clone()]);
        let cp = char_poly(&a).unwrap();
        assert!(cp[0].is_zero_at_precision());
        assert!(cp[1].is_zero_at_precision());
        assert!(cp[2].eq_at_precision(&one));
    }
}
