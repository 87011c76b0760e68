//! (phi,Gamma)-module data over the model ring: a Frobenius matrix P and
//! Gamma-generator matrices G_c in a fixed basis, the commutation-law
//! validator, rank-1 and rank-2 test constructors, and the differential
//! structure: the connection nabla_V from the log(gamma) operator series,
//! the Sen matrix, and partial_V = t^-1 nabla_V.

use crate::budget::PrecisionBudget;
use crate::cyclo::{CyclotomicScalar, Rational};
use crate::error::{Error, Result};
use crate::linalg::PrecMatrix;
use crate::localize::theta_iota_n;
use crate::padic::PadicScalar;
use crate::series::{divide_by_t_checked, r_level, AnnulusSeries};
use std::sync::OnceLock;

/// Row-major square matrix of window series.
pub type SeriesMatrix = Vec<AnnulusSeries>;

pub fn smat_identity(p: u64, annulus: Rational, d: usize, relprec: u32) -> SeriesMatrix {
    let mut m = Vec::with_capacity(d * d);
    for i in 0..d {
        for j in 0..d {
            if i == j {
                m.push(AnnulusSeries::one(p, annulus, relprec));
            } else {
                m.push(AnnulusSeries::zero(p, annulus));
            }
        }
    }
    m
}

pub fn smat_mul(
    a: &SeriesMatrix,
    b: &SeriesMatrix,
    d: usize,
    budget: &PrecisionBudget,
) -> Result<SeriesMatrix> {
    let mut out = Vec::with_capacity(d * d);
    for i in 0..d {
        for j in 0..d {
            let mut acc = a[i * d].mul(&b[j], budget)?;
            for k in 1..d {
                acc = acc.add(&a[i * d + k].mul(&b[k * d + j], budget)?);
            }
            out.push(acc);
        }
    }
    Ok(out)
}

pub fn smat_sub(a: &SeriesMatrix, b: &SeriesMatrix) -> SeriesMatrix {
    a.iter().zip(b).map(|(x, y)| x.sub(y)).collect()
}

pub fn smat_map(a: &SeriesMatrix, mut f: impl FnMut(&AnnulusSeries) -> Result<AnnulusSeries>) -> Result<SeriesMatrix> {
    a.iter().map(|e| f(e)).collect()
}

/// Gamma applied to a coordinate vector: G_c * (gamma_c of the entries).
pub fn gamma_apply_vec(
    g: &SeriesMatrix,
    c: &PadicScalar,
    v: &[AnnulusSeries],
    d: usize,
    budget: &PrecisionBudget,
) -> Result<Vec<AnnulusSeries>> {
    let gv: Vec<AnnulusSeries> = v
        .iter()
        .map(|x| x.gamma_action(c, budget))
        .collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(d);
    for i in 0..d {
        let mut acc = g[i * d].mul(&gv[0], budget)?;
        for k in 1..d {
            acc = acc.add(&g[i * d + k].mul(&gv[k], budget)?);
        }
        out.push(acc);
    }
    Ok(out)
}

/// Frobenius applied to a coordinate vector: P * (phi of the entries).
pub fn phi_apply_vec(
    p_mat: &SeriesMatrix,
    v: &[AnnulusSeries],
    d: usize,
    budget: &PrecisionBudget,
) -> Result<Vec<AnnulusSeries>> {
    let fv: Vec<AnnulusSeries> = v
        .iter()
        .map(|x| x.frobenius(budget))
        .collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(d);
    for i in 0..d {
        let mut acc = p_mat[i * d].mul(&fv[0], budget)?;
        for k in 1..d {
            acc = acc.add(&p_mat[i * d + k].mul(&fv[k], budget)?);
        }
        out.push(acc);
    }
    Ok(out)
}

#[derive(Debug, Clone, Default)]
pub struct ModuleMeta {
    pub name: String,
    /// Declared twist (the r of a rank-1 chi^r factor), when known.
    pub twist: Option<i64>,
    /// Synthetic connection matrix attached by test constructors.
    pub synthetic_partial: Option<SeriesMatrix>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConnectionTag {
    Nabla,
    Partial,
}

#[derive(Debug, Clone)]
pub struct ConnEntry {
    pub series: AnnulusSeries,
    /// Set when the entry is series / t (legal in D[1/t], flagged here).
    pub t_inverse: bool,
}

#[derive(Debug, Clone)]
pub struct ConnectionMatrix {
    pub tag: ConnectionTag,
    pub dim: usize,
    pub entries: Vec<ConnEntry>,
}

impl ConnectionMatrix {
    pub fn series_entries(&self) -> Option<Vec<AnnulusSeries>> {
        if self.entries.iter().any(|e| e.t_inverse) {
            return None;
        }
        Some(self.entries.iter().map(|e| e.series.clone()).collect())
    }

    pub fn flagged(&self) -> Vec<(usize, usize)> {
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.t_inverse)
            .map(|(k, _)| (k / self.dim, k % self.dim))
            .collect()
    }
}

#[derive(Debug)]
pub struct PhiGammaModule {
    p: u64,
    rank: usize,
    annulus: Rational,
    p_mat: SeriesMatrix,
    gammas: Vec<(PadicScalar, SeriesMatrix)>,
    pub meta: ModuleMeta,
    nabla_cache: OnceLock<ConnectionMatrix>,
}

impl Clone for PhiGammaModule {
    fn clone(&self) -> Self {
        let cache = OnceLock::new();
        if let Some(v) = self.nabla_cache.get() {
            let _ = cache.set(v.clone());
        }
        PhiGammaModule {
            p: self.p,
            rank: self.rank,
            annulus: self.annulus,
            p_mat: self.p_mat.clone(),
            gammas: self.gammas.clone(),
            meta: self.meta.clone(),
            nabla_cache: cache,
        }
    }
}

/// Validation outcome: each check with the valuation floor it certified.
#[derive(Debug, Clone)]
pub struct ValidationReport {
    pub ok: bool,
    /// (description, residual valuation of the difference; None = exact).
    pub checks: Vec<(String, Option<Rational>)>,
}

impl PhiGammaModule {
    pub fn new(
        p: u64,
        rank: usize,
        annulus: Rational,
        p_mat: SeriesMatrix,
        gammas: Vec<(PadicScalar, SeriesMatrix)>,
        meta: ModuleMeta,
    ) -> Result<Self> {
        if p_mat.len() != rank * rank {
            return Err(Error::InvalidInput("P has wrong dimensions".into()));
        }
        for (_, g) in &gammas {
            if g.len() != rank * rank {
                return Err(Error::InvalidInput("G_c has wrong dimensions".into()));
            }
        }
        Ok(PhiGammaModule { p, rank, annulus, p_mat, gammas, meta, nabla_cache: OnceLock::new() })
    }

    pub fn prime(&self) -> u64 {
        self.p
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn annulus(&self) -> Rational {
        self.annulus
    }

    pub fn frobenius_matrix(&self) -> &SeriesMatrix {
        &self.p_mat
    }

    pub fn gamma_generators(&self) -> &[(PadicScalar, SeriesMatrix)] {
        &self.gammas
    }

    /// The matrix of gamma^2 for a stored generator: G_{c^2} = G_c gamma_c(G_c).
    pub fn squared_generator(
        &self,
        idx: usize,
        budget: &PrecisionBudget,
    ) -> Result<(PadicScalar, SeriesMatrix)> {
        let (c, g) = &self.gammas[idx];
        let gg = smat_map(g, |e| e.gamma_action(c, budget))?;
        let g2 = smat_mul(g, &gg, self.rank, budget)?;
        Ok((c.mul(c), g2))
    }

    /// Commutation law and pairwise Gamma-compatibility. Residuals are the
    /// minimal coefficient valuation of the difference matrices, so an entry
    /// off by p^3 reports residual 3.
    pub fn validate(&self, budget: &PrecisionBudget) -> Result<ValidationReport> {
        let d = self.rank;
        let floor = Rational::from_integer(budget.floor());
        let mut checks = Vec::new();
        let mut ok = true;
        for (c, g) in &self.gammas {
            // phi(G_c) P = gamma_c(P) G_c.
            let lhs = smat_mul(&smat_map(g, |e| e.frobenius(budget))?, &self.p_mat, d, budget)?;
            let rhs = smat_mul(
                &smat_map(&self.p_mat, |e| e.gamma_action(c, budget))?,
                g,
                d,
                budget,
            )?;
            let resid = matrix_coeff_residual(&smat_sub(&lhs, &rhs));
            if let Some(v) = resid {
                if v < floor {
                    ok = false;
                }
            }
            checks.push((format!("phi-commutation for c = {}", c.render()), resid));
        }
        for a in 0..self.gammas.len() {
            for b in (a + 1)..self.gammas.len() {
                let (ca, ga) = &self.gammas[a];
                let (cb, gb) = &self.gammas[b];
                let lhs = smat_mul(ga, &smat_map(gb, |e| e.gamma_action(ca, budget))?, d, budget)?;
                let rhs = smat_mul(gb, &smat_map(ga, |e| e.gamma_action(cb, budget))?, d, budget)?;
                let resid = matrix_coeff_residual(&smat_sub(&lhs, &rhs));
                if let Some(v) = resid {
                    if v < floor {
                        ok = false;
                    }
                }
                checks.push((
                    format!("Gamma-commutation for c = {}, c' = {}", ca.render(), cb.render()),
                    resid,
                ));
            }
        }
        Ok(ValidationReport { ok, checks })
    }

    /// Mat(nabla_V) from the truncated log(gamma) operator series, with the
    /// choice-of-generator independence check.
    pub fn nabla_v(&self, budget: &PrecisionBudget) -> Result<ConnectionMatrix> {
        if let Some(v) = self.nabla_cache.get() {
            return Ok(v.clone());
        }
        let (idx, _) = self
            .one_unit_generator()
            .ok_or(Error::LogSeriesDivergent)?;
        let m1 = self.nabla_with_generator(idx, None, budget)?;
        // Independence: recompute with the squared generator.
        let (c2, g2) = self.squared_generator(idx, budget)?;
        let m2 = self.nabla_with_generator(idx, Some((&c2, &g2)), budget)?;
        let diff: Vec<AnnulusSeries> = m1
            .iter()
            .zip(&m2)
            .map(|(a, b)| a.sub(b))
            .collect();
        let resid = matrix_residual(&diff, self.annulus, self.annulus * Rational::from_integer(2));
        if let Some(v) = resid {
            if v < Rational::from_integer(budget.floor()) {
                return Err(Error::LogSeriesDivergent);
            }
        }
        let entries = m1
            .into_iter()
            .map(|series| ConnEntry { series, t_inverse: false })
            .collect();
        let out = ConnectionMatrix { tag: ConnectionTag::Nabla, dim: self.rank, entries };
        let _ = self.nabla_cache.set(out.clone());
        Ok(out)
    }

    fn one_unit_generator(&self) -> Option<(usize, &PadicScalar)> {
        self.gammas.iter().enumerate().find_map(|(i, (c, _))| {
            let one = PadicScalar::one(self.p, c.relprec().max(1));
            let n_gamma = c.sub(&one).valuation();
            match n_gamma {
                Some(v) if v >= 1 => Some((i, c)),
                _ => None,
            }
        })
    }

    fn nabla_with_generator(
        &self,
        idx: usize,
        replace: Option<(&PadicScalar, &SeriesMatrix)>,
        budget: &PrecisionBudget,
    ) -> Result<SeriesMatrix> {
        let d = self.rank;
        let (c, g) = match replace {
            Some((c, g)) => (c.clone(), g.clone()),
            None => self.gammas[idx].clone(),
        };
        let relprec = budget.n_digits + 2 * budget.slack;
        let log_c = c.iwasawa_log()?;
        if log_c.is_zero_at_precision() {
            return Err(Error::LogSeriesDivergent);
        }
        let minus_inv_log = log_c.inv()?.neg();
        let i1 = self.annulus;
        let i2 = self.annulus * Rational::from_integer(2);
        let target = Rational::from_integer(budget.n_digits as i64);
        let cap = budget.series_cap();
        // Precompute the window action of gamma_c; iterates stay inside
        // [kmin - margin, 2M] because the action is lower-triangular.
        let kmin_op = self
            .p_mat
            .iter()
            .chain(g.iter())
            .map(|e| e.kmin())
            .min()
            .unwrap_or(0)
            .min(0)
            - 2;
        let kmax_op = 2 * budget.window_half;
        let wide = PrecisionBudget {
            n_digits: budget.n_digits + budget.window_half as u32,
            ..*budget
        };
        let c_wide = widen_generator(&c, wide.n_digits + 2 * wide.slack);
        let op = crate::series::WindowGammaOp::build(&c_wide, self.annulus, kmin_op, kmax_op, &wide)?;
        let gamma_vec = |v: &[AnnulusSeries]| -> Result<Vec<AnnulusSeries>> {
            let gv: Vec<AnnulusSeries> = v.iter().map(|x| op.apply(x)).collect::<Result<_>>()?;
            let mut out = Vec::with_capacity(d);
            for i in 0..d {
                let mut acc = g[i * d].mul(&gv[0], budget)?;
                for k in 1..d {
                    acc = acc.add(&g[i * d + k].mul(&gv[k], budget)?);
                }
                acc.truncate_at(kmax_op);
                out.push(acc);
            }
            Ok(out)
        };
        let mut out = Vec::with_capacity(d * d);
        for j in 0..d {
            // basis vector e_j.
            let w0: Vec<AnnulusSeries> = (0..d)
                .map(|i| {
                    if i == j {
                        AnnulusSeries::one(self.p, self.annulus, relprec)
                    } else {
                        AnnulusSeries::zero(self.p, self.annulus)
                    }
                })
                .collect();
            // precondition: (1 - gamma) must gain a digit on basis vectors.
            let gw = gamma_vec(&w0)?;
            let first: Vec<AnnulusSeries> = w0.iter().zip(&gw).map(|(a, b)| a.sub(b)).collect();
            let gain = matrix_residual(&first, i1, i2);
            if let Some(v) = gain {
                if v < Rational::from_integer(1) {
                    return Err(Error::LogSeriesDivergent);
                }
            }
            let mut acc: Vec<AnnulusSeries> =
                (0..d).map(|_| AnnulusSeries::zero(self.p, self.annulus)).collect();
            let mut w = first;
            let mut converged = false;
            for k in 1..=cap as i64 {
                let kinv = PadicScalar::from_i64(self.p, k, relprec).inv()?;
                for i in 0..d {
                    acc[i] = acc[i].add(&w[i].scale(&kinv));
                }
                let wval = matrix_residual(&w, i1, i2);
                match wval {
                    None => {
                        converged = true;
                        break;
                    }
                    Some(v) if v > target => {
                        converged = true;
                        break;
                    }
                    _ => {}
                }
                let gw = gamma_vec(&w)?;
                w = w.iter().zip(&gw).map(|(a, b)| a.sub(b)).collect();
            }
            if !converged {
                return Err(Error::LogSeriesDivergent);
            }
            // column j of the matrix.
            for i in 0..d {
                out.push(acc[i].scale(&minus_inv_log));
            }
        }
        // out currently holds columns contiguously; transpose to row-major.
        let mut row_major = Vec::with_capacity(d * d);
        for i in 0..d {
            for j in 0..d {
                row_major.push(out[j * d + i].clone());
            }
        }
        Ok(row_major)
    }

    /// Theta(iota_n) of Mat(nabla_V): the Sen operator on the level-n layer.
    pub fn sen_matrix(
        &self,
        n: u32,
        budget: &PrecisionBudget,
    ) -> Result<PrecMatrix<CyclotomicScalar>> {
        if self.annulus > r_level(self.p, n) {
            return Err(Error::InvalidInput(format!(
                "level {} is below the module's annulus index {}",
                n, self.annulus
            )));
        }
        let nabla = self.nabla_v(budget)?;
        let d = self.rank;
        let mut entries = Vec::with_capacity(d * d);
        for e in &nabla.entries {
            entries.push(theta_iota_n(&e.series, n, budget)?);
        }
        Ok(PrecMatrix::new(d, d, entries))
    }

    /// partial_V = t^-1 nabla_V entrywise; entries failing the divisibility
    /// tests are returned undivided with a t-inverse flag.
    pub fn partial_v(&self, budget: &PrecisionBudget) -> Result<ConnectionMatrix> {
        let nabla = self.nabla_v(budget)?;
        let mut entries = Vec::with_capacity(nabla.entries.len());
        for e in &nabla.entries {
            if e.series.is_zero_at_precision() {
                entries.push(ConnEntry { series: e.series.clone(), t_inverse: false });
                continue;
            }
            match divide_by_t_checked(&e.series, budget, 1) {
                Ok(q) => entries.push(ConnEntry { series: q, t_inverse: false }),
                Err(Error::NotDivisible(_)) => {
                    entries.push(ConnEntry { series: e.series.clone(), t_inverse: true })
                }
                Err(other) => return Err(other),
            }
        }
        Ok(ConnectionMatrix { tag: ConnectionTag::Partial, dim: self.rank, entries })
    }
}

/// Minimal window interval valuation over the entries (None = all exact zero).
pub fn matrix_residual(m: &[AnnulusSeries], s1: Rational, s2: Rational) -> Option<Rational> {
    m.iter()
        .filter_map(|e| e.window_interval_valuation(s1, s2))
        .min()
}

/// Minimal coefficient valuation over the entries (no circle weighting).
pub fn matrix_coeff_residual(m: &[AnnulusSeries]) -> Option<Rational> {
    m.iter()
        .filter_map(|e| e.residual_valuation())
        .min()
        .map(Rational::from_integer)
}

/// Rebuild a stored generator at a wider precision. Generators are either
/// small exact integers or Teichmueller lifts, both reconstructible from
/// their leading digits; anything else keeps its declared digits.
pub fn widen_generator(c: &PadicScalar, relprec: u32) -> PadicScalar {
    if c.relprec() >= relprec {
        return c.clone();
    }
    let p = c.prime();
    let (u, v) = c.balanced_lift();
    if u.magnitude().bits() <= 32 {
        let wide = PadicScalar::from_integer(p, u, relprec).shift_val(v);
        if wide.with_relprec(c.relprec().max(1)).eq_at_precision(c) {
            return wide;
        }
    }
    if v == 0 {
        if let Some(digits) = c.unit_digits() {
            let g = digits % num_bigint::BigUint::from(p);
            let cand = PadicScalar::from_integer(p, g.into(), relprec)
                .teichmuller()
                .ok();
            if let Some(t) = cand {
                if t.with_relprec(c.relprec().max(1)).eq_at_precision(c) {
                    return t;
                }
            }
        }
    }
    c.clone()
}

/// Default Gamma generators: the 1-unit 1+p (5 at p = 2) and a torsion unit
/// (the Teichmueller lift of a generator of F_p^*, -1 at p = 2).
pub fn default_generators(p: u64, relprec: u32) -> Result<Vec<PadicScalar>> {
    let one_unit = if p == 2 {
        PadicScalar::from_i64(2, 5, relprec)
    } else {
        PadicScalar::from_i64(p, 1 + p as i64, relprec)
    };
    let torsion = if p == 2 {
        PadicScalar::from_i64(2, -1, relprec)
    } else {
        // smallest generator of (Z/p)^* lifted to Teichmueller
        let g = (2..p).find(|&g| is_primitive_root(g, p)).unwrap_or(2);
        PadicScalar::from_i64(p, g as i64, relprec).teichmuller()?
    };
    Ok(vec![one_unit, torsion])
}

fn is_primitive_root(g: u64, p: u64) -> bool {
    let mut x = g % p;
    let mut order = 1;
    while x != 1 {
        x = (x * g) % p;
        order += 1;
        if order > p {
            return false;
        }
    }
    order == p - 1
}

/// Rank-1 module with Frobenius scalar c0 and Gamma acting by chi^r.
pub fn build_rank1(
    p: u64,
    c0: &PadicScalar,
    r: i64,
    budget: &PrecisionBudget,
) -> Result<PhiGammaModule> {
    if c0.valuation() != Some(0) {
        return Err(Error::NotEtale);
    }
    // Fixture data is exact; extra digits pay for elimination fill-in later.
    let relprec = budget.n_digits + 2 * budget.slack + 64;
    let annulus = r_level(p, 1);
    let p_mat = vec![AnnulusSeries::monomial(p, annulus, 0, c0.with_relprec(relprec))];
    let mut gammas = Vec::new();
    for c in default_generators(p, relprec)? {
        let g = c.pow_i64(r)?;
        gammas.push((c, vec![AnnulusSeries::monomial(p, annulus, 0, g)]));
    }
    PhiGammaModule::new(
        p,
        1,
        annulus,
        p_mat,
        gammas,
        ModuleMeta {
            name: format!("rank1(c0={}, r={})", c0.render(), r),
            twist: Some(r),
            synthetic_partial: None,
            notes: vec![],
        },
    )
}

/// The trivial module of a given rank.
pub fn build_trivial(p: u64, rank: usize, budget: &PrecisionBudget) -> Result<PhiGammaModule> {
    let relprec = budget.n_digits + 2 * budget.slack + 64;
    let annulus = r_level(p, 1);
    let id = smat_identity(p, annulus, rank, relprec);
    let gammas = default_generators(p, relprec)?
        .into_iter()
        .map(|c| (c, id.clone()))
        .collect();
    PhiGammaModule::new(
        p,
        rank,
        annulus,
        id,
        gammas,
        ModuleMeta { name: format!("trivial(rank={})", rank), twist: Some(0), ..Default::default() },
    )
}

/// Rank-2 extension with G_c = [[1, log c],[0, 1]] and P = I: the
/// log-of-cyclotomic cocycle. Its Sen operator is nilpotent nonzero, the
/// standard negative control for every admissibility flag.
pub fn build_cyclotomic_cocycle(p: u64, budget: &PrecisionBudget) -> Result<PhiGammaModule> {
    let relprec = budget.n_digits + 2 * budget.slack + 64;
    let annulus = r_level(p, 1);
    let id = smat_identity(p, annulus, 2, relprec);
    let mut gammas = Vec::new();
    for c in default_generators(p, relprec)? {
        let lc = c.iwasawa_log()?;
        let mut g = smat_identity(p, annulus, 2, relprec);
        g[1] = AnnulusSeries::monomial(p, annulus, 0, lc);
        gammas.push((c, g));
    }
    PhiGammaModule::new(
        p,
        2,
        annulus,
        id,
        gammas,
        ModuleMeta {
            name: "cyclotomic_cocycle".into(),
            twist: None,
            synthetic_partial: None,
            notes: vec!["synthetic fixture; not an etale lattice".into()],
        },
    )
}

/// Trivial rank-2 module carrying a synthetic strictly-upper-triangular
/// partial_V matrix [[0, (1+T)/T],[0, 0]] in its metadata, for
/// connection-level tests (unipotent but not trivial).
pub fn build_unipotent_demo(p: u64, budget: &PrecisionBudget) -> Result<PhiGammaModule> {
    let relprec = budget.n_digits + 2 * budget.slack;
    let annulus = r_level(p, 1);
    let mut m = build_trivial(p, 2, budget)?;
    let mut synth = vec![
        AnnulusSeries::zero(p, annulus),
        AnnulusSeries::new(
            p,
            annulus,
            -1,
            vec![PadicScalar::one(p, relprec), PadicScalar::one(p, relprec)],
            None,
        ),
        AnnulusSeries::zero(p, annulus),
        AnnulusSeries::zero(p, annulus),
    ];
    synth.swap(1, 1);
    m.meta.name = "unipotent_demo".into();
    m.meta.synthetic_partial = Some(synth);
    m.meta.notes.push("synthetic partial_V attached for connection tests".into());
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn budget() -> PrecisionBudget {
        PrecisionBudget::default()
    }

    #[test]
    fn rank1_validates() {
        let b = budget();
        for p in [2u64, 3] {
            let c0 = PadicScalar::one(p, 56);
            let m = build_rank1(p, &c0, 1, &b).unwrap();
            let rep = m.validate(&b).unwrap();
            assert!(rep.ok, "{:?}", rep.checks);
        }
        // non-etale scalar rejected
        let bad = PadicScalar::from_i64(3, 3, 56);
        assert!(matches!(build_rank1(3, &bad, 0, &budget()), Err(Error::NotEtale)));
    }

    #[test]
    fn cocycle_validates() {
        let b = budget();
        for p in [2u64, 3] {
            let m = build_cyclotomic_cocycle(p, &b).unwrap();
            let rep = m.validate(&b).unwrap();
            assert!(rep.ok, "p={}: {:?}", p, rep.checks);
        }
    }

    #[test]
    fn corrupted_module_fails_validation() {
        let b = budget();
        let p = 3u64;
        let mut m = build_rank1(p, &PadicScalar::from_i64(p, 2, 56), 1, &b).unwrap();
        // perturb the gamma matrix by p^3 * T: a T-dependent fault breaks the
        // commutation law with residual exactly 3.
        let bump = AnnulusSeries::monomial(p, m.annulus(), 1, PadicScalar::one(p, 56).shift_val(3));
        m.gammas[0].1[0] = m.gammas[0].1[0].add(&bump);
        let rep = m.validate(&b).unwrap();
        assert!(!rep.ok, "{:?}", rep.checks);
        let worst = rep.checks.iter().filter_map(|(_, r)| *r).min().unwrap();
        assert_eq!(worst, Rational::from_integer(3), "{:?}", rep.checks);
    }

    #[test]
    fn nabla_of_rank1_is_twist() {
        let b = budget();
        for p in [2u64, 3] {
            for r in [-2i64, 0, 3] {
                let c0 = PadicScalar::from_i64(p, if p == 2 { 1 } else { 2 }, 56);
                let m = build_rank1(p, &c0, r, &b).unwrap();
                let nabla = m.nabla_v(&b).unwrap();
                let e = &nabla.entries[0].series;
                let expect =
                    AnnulusSeries::monomial(p, m.annulus(), 0, PadicScalar::from_i64(p, r, 40));
                let diff = e.sub(&expect);
                let resid = diff.window_interval_valuation(
                    m.annulus(),
                    m.annulus() * Rational::from_integer(2),
                );
                assert!(
                    resid.map_or(true, |v| v >= Rational::from_integer(b.floor())),
                    "p={} r={}: residual {:?}, entry {}",
                    p,
                    r,
                    resid,
                    e.render()
                );
            }
        }
    }

    #[test]
    fn nabla_of_trivial_is_zero() {
        let b = budget();
        let m = build_trivial(3, 2, &b).unwrap();
        let nabla = m.nabla_v(&b).unwrap();
        for e in &nabla.entries {
            assert!(e.series.is_zero_at_precision());
        }
    }

    #[test]
    fn nabla_of_cocycle_is_upper_nilpotent() {
        let b = budget();
        for p in [2u64, 3] {
            let m = build_cyclotomic_cocycle(p, &b).unwrap();
            let nabla = m.nabla_v(&b).unwrap();
            let one = AnnulusSeries::one(p, m.annulus(), 40);
            // [[0, 1], [0, 0]]
            let resid = |e: &AnnulusSeries, expect: Option<&AnnulusSeries>| {
                let d = match expect {
                    Some(x) => e.sub(x),
                    None => e.clone(),
                };
                d.window_interval_valuation(m.annulus(), m.annulus() * Rational::from_integer(2))
                    .map_or(true, |v| v >= Rational::from_integer(b.floor()))
            };
            assert!(resid(&nabla.entries[0].series, None));
            assert!(resid(&nabla.entries[1].series, Some(&one)), "p={}: {}", p, nabla.entries[1].series.render());
            assert!(resid(&nabla.entries[2].series, None));
            assert!(resid(&nabla.entries[3].series, None));
        }
    }

    #[test]
    fn sen_matrix_values() {
        let b = budget();
        let p = 3u64;
        // rank-1 twist r: Sen matrix is the scalar r.
        let m = build_rank1(p, &PadicScalar::from_i64(p, 2, 56), 3, &b).unwrap();
        let sen = m.sen_matrix(1, &b).unwrap();
        let expect = CyclotomicScalar::from_padic(1, &PadicScalar::from_i64(p, 3, 40));
        assert!(sen.at(0, 0).sub(&expect).valuation().map_or(true, |v| v >= Rational::from_integer(b.floor())));
        // cocycle: [[0,1],[0,0]].
        let m = build_cyclotomic_cocycle(p, &b).unwrap();
        let sen = m.sen_matrix(1, &b).unwrap();
        let one = CyclotomicScalar::one(p, 1, 40);
        let fl = Rational::from_integer(b.floor());
        assert!(sen.at(0, 0).valuation().map_or(true, |v| v >= fl));
        assert!(sen.at(0, 1).sub(&one).valuation().map_or(true, |v| v >= fl));
        assert!(sen.at(1, 0).valuation().map_or(true, |v| v >= fl));
        assert!(sen.at(1, 1).valuation().map_or(true, |v| v >= fl));
    }

    #[test]
    fn partial_v_flags() {
        let b = budget();
        let p = 3u64;
        // trivial: no flags.
        let m = build_trivial(p, 2, &b).unwrap();
        let pv = m.partial_v(&b).unwrap();
        assert!(pv.flagged().is_empty());
        // rank-1 with r != 0: the constant r is not divisible by t.
        let m = build_rank1(p, &PadicScalar::from_i64(p, 2, 56), 2, &b).unwrap();
        let pv = m.partial_v(&b).unwrap();
        assert_eq!(pv.flagged(), vec![(0, 0)]);
        // cocycle: the (0,1) entry is the constant 1, flagged.
        let m = build_cyclotomic_cocycle(p, &b).unwrap();
        let pv = m.partial_v(&b).unwrap();
        assert_eq!(pv.flagged(), vec![(0, 1)]);
    }

    #[test]
    fn unipotent_demo_antiderivative_needs_ell() {
        use crate::logring::LogSeries;
        let b = budget();
        let p = 2u64;
        let m = build_unipotent_demo(p, &b).unwrap();
        let synth = m.meta.synthetic_partial.as_ref().unwrap();
        let upper = &synth[1];
        let (_, coeff) = LogSeries::from_series(upper.clone()).antiderivative(&b).unwrap();
        assert!(coeff.eq_at_precision(&PadicScalar::one(p, 40)));
    }
}
