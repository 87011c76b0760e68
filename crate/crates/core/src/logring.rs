//! The log extension: polynomials in a formal symbol ell = log(pi) with
//! window-series coefficients, carrying the derivation (d ell = (1+T)/T),
//! the operator nabla = t*d, the monodromy operator N = -d/d ell, phi and the
//! Gamma-action on ell, and termwise antidifferentiation.
//!
//! ell is purely formal: it is never evaluated inside the series ring
//! (log(pi) is transcendental over it); only the localization maps give it a
//! value.

use crate::budget::PrecisionBudget;
use crate::cyclo::Rational;
use crate::error::{Error, Result};
use crate::padic::PadicScalar;
use crate::series::{frobenius_of_t, gamma_of_t, special_t, AnnulusSeries};

pub const DEFAULT_ELL_DEGREE: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct LogSeries {
    p: u64,
    /// Coefficient of ell^j at index j.
    coeffs: Vec<AnnulusSeries>,
}

impl LogSeries {
    pub fn new(p: u64, coeffs: Vec<AnnulusSeries>) -> Self {
        let mut s = LogSeries { p, coeffs };
        s.trim();
        s
    }

    pub fn zero(p: u64, annulus: Rational) -> Self {
        LogSeries { p, coeffs: vec![AnnulusSeries::zero(p, annulus)] }
    }

    pub fn from_series(f: AnnulusSeries) -> Self {
        LogSeries { p: f.prime(), coeffs: vec![f] }
    }

    /// c * ell^j.
    pub fn ell_power(p: u64, annulus: Rational, j: usize, relprec: u32) -> Self {
        let mut coeffs = vec![AnnulusSeries::zero(p, annulus); j + 1];
        coeffs[j] = AnnulusSeries::one(p, annulus, relprec);
        LogSeries { p, coeffs }
    }

    fn trim(&mut self) {
        while self.coeffs.len() > 1
            && self
                .coeffs
                .last()
                .map_or(false, |c| c.is_zero_at_precision() && c.coeffs().is_empty())
        {
            self.coeffs.pop();
        }
        if self.coeffs.is_empty() {
            self.coeffs.push(AnnulusSeries::zero(self.p, Rational::from_integer(1)));
        }
    }

    pub fn prime(&self) -> u64 {
        self.p
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn coeff(&self, j: usize) -> AnnulusSeries {
        if j < self.coeffs.len() {
            self.coeffs[j].clone()
        } else {
            AnnulusSeries::zero(self.p, self.annulus())
        }
    }

    pub fn coeffs(&self) -> &[AnnulusSeries] {
        &self.coeffs
    }

    pub fn annulus(&self) -> Rational {
        self.coeffs
            .iter()
            .map(|c| c.annulus())
            .max()
            .unwrap_or_else(|| Rational::from_integer(1))
    }

    pub fn is_zero_at_precision(&self) -> bool {
        self.coeffs.iter().all(|c| c.is_zero_at_precision())
    }

    pub fn add(&self, other: &LogSeries) -> LogSeries {
        let n = self.coeffs.len().max(other.coeffs.len());
        let mut coeffs = Vec::with_capacity(n);
        for j in 0..n {
            coeffs.push(self.coeff(j).add(&other.coeff(j)));
        }
        LogSeries::new(self.p, coeffs)
    }

    pub fn neg(&self) -> LogSeries {
        LogSeries { p: self.p, coeffs: self.coeffs.iter().map(|c| c.neg()).collect() }
    }

    pub fn sub(&self, other: &LogSeries) -> LogSeries {
        self.add(&other.neg())
    }

    pub fn scale_series(&self, f: &AnnulusSeries, budget: &PrecisionBudget) -> Result<LogSeries> {
        let mut coeffs = Vec::with_capacity(self.coeffs.len());
        for c in &self.coeffs {
            coeffs.push(c.mul(f, budget)?);
        }
        Ok(LogSeries::new(self.p, coeffs))
    }

    pub fn mul(&self, other: &LogSeries, budget: &PrecisionBudget) -> Result<LogSeries> {
        let n = self.coeffs.len() + other.coeffs.len() - 1;
        let mut coeffs = vec![AnnulusSeries::zero(self.p, self.annulus().max(other.annulus())); n];
        for (i, a) in self.coeffs.iter().enumerate() {
            for (j, b) in other.coeffs.iter().enumerate() {
                coeffs[i + j] = coeffs[i + j].add(&a.mul(b, budget)?);
            }
        }
        Ok(LogSeries::new(self.p, coeffs))
    }

    /// (1+T)/T as a window series.
    fn d_ell(&self, relprec: u32) -> AnnulusSeries {
        let one = PadicScalar::one(self.p, relprec);
        AnnulusSeries::new(
            self.p,
            self.annulus(),
            -1,
            vec![one.clone(), one],
            None,
        )
    }

    /// The derivation d = (1+T) d/dT extended by d(ell^j) = j ell^(j-1) (1+T)/T.
    pub fn log_partial(&self, budget: &PrecisionBudget) -> Result<LogSeries> {
        let relprec = budget.n_digits + 2 * budget.slack;
        let dl = self.d_ell(relprec);
        let mut coeffs = vec![AnnulusSeries::zero(self.p, self.annulus()); self.coeffs.len()];
        for (j, a) in self.coeffs.iter().enumerate() {
            coeffs[j] = coeffs[j].add(&a.partial());
            if j >= 1 {
                let fac = PadicScalar::from_i64(self.p, j as i64, relprec);
                coeffs[j - 1] = coeffs[j - 1].add(&a.mul(&dl, budget)?.scale(&fac));
            }
        }
        Ok(LogSeries::new(self.p, coeffs))
    }

    /// nabla = t * d: multiplies the derivative by the period series.
    pub fn log_nabla(&self, budget: &PrecisionBudget) -> Result<LogSeries> {
        let t = special_t(self.p, self.annulus(), budget);
        self.log_partial(budget)?.scale_series(&t, budget)
    }

    /// N = -d/d ell; nilpotent of order degree+1, commutes with the connection.
    pub fn monodromy_n(&self) -> LogSeries {
        if self.coeffs.len() == 1 {
            return LogSeries::zero(self.p, self.annulus());
        }
        let relprec = self
            .coeffs
            .iter()
            .flat_map(|c| c.coeffs().iter().map(|x| x.relprec()))
            .max()
            .unwrap_or(1)
            .max(1);
        let mut coeffs = Vec::with_capacity(self.coeffs.len() - 1);
        for j in 1..self.coeffs.len() {
            let fac = PadicScalar::from_i64(self.p, -(j as i64), relprec);
            coeffs.push(self.coeffs[j].scale(&fac));
        }
        LogSeries::new(self.p, coeffs)
    }

    /// phi: coefficients through the Frobenius, ell -> p*ell + log(phi(T)/T^p).
    pub fn log_frobenius(&self, budget: &PrecisionBudget) -> Result<LogSeries> {
        let relprec = budget.n_digits + 2 * budget.slack;
        let correction = log_phi_t_over_tp(self.p, self.annulus(), budget)?;
        // image of ell: p*ell + correction.
        let p_ell = {
            let mut coeffs = vec![
                correction.clone(),
                AnnulusSeries::monomial(
                    self.p,
                    self.annulus(),
                    0,
                    PadicScalar::from_i64(self.p, self.p as i64, relprec),
                ),
            ];
            coeffs[0] = correction.clone();
            LogSeries::new(self.p, coeffs)
        };
        let mut out = LogSeries::zero(self.p, self.annulus());
        // Horner in the image of ell, with phi applied to the coefficients.
        for j in (0..self.coeffs.len()).rev() {
            out = out.mul(&p_ell, budget)?;
            out = out.add(&LogSeries::from_series(self.coeffs[j].frobenius(budget)?));
        }
        Ok(out)
    }

    /// Gamma-action: coefficients through gamma_c, ell -> ell + log(gamma_c(T)/T).
    pub fn log_gamma(&self, c: &PadicScalar, budget: &PrecisionBudget) -> Result<LogSeries> {
        let relprec = budget.n_digits + 2 * budget.slack;
        let correction = log_gamma_t_over_t(c, self.p, self.annulus(), budget)?;
        let image_ell = LogSeries::new(
            self.p,
            vec![
                correction,
                AnnulusSeries::one(self.p, self.annulus(), relprec),
            ],
        );
        let mut out = LogSeries::zero(self.p, self.annulus());
        for j in (0..self.coeffs.len()).rev() {
            out = out.mul(&image_ell, budget)?;
            out = out.add(&LogSeries::from_series(self.coeffs[j].gamma_action(c, budget)?));
        }
        Ok(out)
    }

    /// Termwise antiderivative: returns (G, c) with d(G + c*ell) = F.
    ///
    /// Expand F/(1+T); the T^(-1) coefficient must be absorbed by ell at
    /// ell-degree 0 and by raising the degree at higher levels, so F needs
    /// degree <= dmax - 1 headroom.
    pub fn antiderivative(&self, budget: &PrecisionBudget) -> Result<(LogSeries, PadicScalar)> {
        let relprec = budget.n_digits + 2 * budget.slack;
        let dl = self.d_ell(relprec);
        let d = self.degree();
        let mut g: Vec<AnnulusSeries> =
            vec![AnnulusSeries::zero(self.p, self.annulus()); d + 2];
        let mut log_coeff = PadicScalar::zero(self.p, relprec as i64);
        for j in (0..=d).rev() {
            // rhs_j = F_j - (j+1) G_{j+1} (1+T)/T.
            let mut rhs = self.coeff(j);
            let upper = g[j + 1].clone();
            if !upper.is_zero_at_precision() || !upper.coeffs().is_empty() {
                let fac = PadicScalar::from_i64(self.p, (j + 1) as i64, relprec);
                rhs = rhs.sub(&upper.mul(&dl, budget)?.scale(&fac));
            }
            let (h, c) = plain_antiderivative(&rhs, budget)?;
            g[j] = g[j].add(&h);
            if c.is_zero_at_precision() {
                continue;
            }
            if j == 0 {
                log_coeff = c;
            } else {
                // absorb with c/(j+1) * ell^(j+1); contributes only at level j.
                let fac = c.div(&PadicScalar::from_i64(self.p, (j + 1) as i64, relprec))?;
                g[j + 1] = g[j + 1].add(&AnnulusSeries::monomial(
                    self.p,
                    self.annulus(),
                    0,
                    fac,
                ));
            }
        }
        Ok((LogSeries::new(self.p, g), log_coeff))
    }

    pub fn render(&self) -> String {
        let terms: Vec<String> = self
            .coeffs
            .iter()
            .enumerate()
            .filter(|(_, c)| !c.is_zero_at_precision())
            .map(|(j, c)| match j {
                0 => format!("({})", c.render()),
                1 => format!("({})*ell", c.render()),
                _ => format!("({})*ell^{}", c.render(), j),
            })
            .collect();
        if terms.is_empty() {
            "0".into()
        } else {
            terms.join(" + ")
        }
    }
}

/// Antiderivative in the plain series ring: F = d(H) + c * (1+T)/T.
pub fn plain_antiderivative(
    f: &AnnulusSeries,
    budget: &PrecisionBudget,
) -> Result<(AnnulusSeries, PadicScalar)> {
    let p = f.prime();
    let relprec = budget.n_digits + 2 * budget.slack;
    // a = F / (1+T).
    let one_plus_t = AnnulusSeries::new(
        p,
        f.annulus(),
        0,
        vec![PadicScalar::one(p, relprec), PadicScalar::one(p, relprec)],
        None,
    );
    let a = f.mul(&one_plus_t.invert(budget)?, budget)?;
    let c = a.coeff(-1);
    let mut h = AnnulusSeries::zero(p, f.annulus());
    for k in a.kmin()..=a.kmax() {
        if k == -1 {
            continue;
        }
        let ak = a.coeff(k);
        if ak.is_zero_at_precision() && ak.abs_prec() >= i64::MAX / 8 {
            continue;
        }
        let denom = PadicScalar::from_i64(p, k + 1, relprec);
        let coeff = ak.div(&denom).map_err(|_| {
            Error::PrecisionExhausted("antiderivative denominator n+1".into())
        })?;
        h = h.add(&AnnulusSeries::monomial(p, f.annulus(), k + 1, coeff));
    }
    Ok((h, c))
}

/// log(phi(T)/T^p) = log(1 + w) with w = phi(T)/T^p - 1, summed until the
/// increment's interval valuation on [2r, 4r] clears the budget.
pub fn log_phi_t_over_tp(p: u64, annulus: Rational, budget: &PrecisionBudget) -> Result<AnnulusSeries> {
    let relprec = budget.n_digits + 2 * budget.slack;
    let phi = frobenius_of_t(p, annulus, relprec);
    let tp_inv = AnnulusSeries::monomial(p, annulus, -(p as i64), PadicScalar::one(p, relprec));
    let w = phi.mul(&tp_inv, budget)?.sub(&AnnulusSeries::one(p, annulus, relprec));
    log_one_plus(&w, annulus, budget)
}

/// log(gamma_c(T)/T) = log(c) + log of the 1-unit series gamma_c(T)/(cT).
pub fn log_gamma_t_over_t(
    c: &PadicScalar,
    p: u64,
    annulus: Rational,
    budget: &PrecisionBudget,
) -> Result<AnnulusSeries> {
    let relprec = budget.n_digits + 2 * budget.slack;
    let g = gamma_of_t(c, annulus, budget, relprec)?;
    let ct_inv = AnnulusSeries::monomial(p, annulus, -1, c.inv()?);
    let w = g.mul(&ct_inv, budget)?.sub(&AnnulusSeries::one(p, annulus, relprec));
    let unit_part = log_one_plus(&w, annulus, budget)?;
    let const_part = AnnulusSeries::monomial(p, annulus, 0, c.iwasawa_log()?);
    Ok(unit_part.add(&const_part))
}

/// Valuation-threshold summation of log(1 + w): increments are measured by
/// their interval valuation on [2r, 4r], strictly inside the annulus; the
/// iteration cap is 8N (and the global series guard).
pub fn log_one_plus(
    w: &AnnulusSeries,
    annulus: Rational,
    budget: &PrecisionBudget,
) -> Result<AnnulusSeries> {
    let p = w.prime();
    if w.is_zero_at_precision() {
        return Ok(AnnulusSeries::zero(p, annulus));
    }
    let relprec = budget.n_digits + 2 * budget.slack;
    let s1 = annulus * Rational::from_integer(2);
    let s2 = annulus * Rational::from_integer(1 << 20);
    let target = Rational::from_integer(budget.n_digits as i64);
    let cap = budget.series_cap();
    let window_cap = 2 * budget.window_half.max(4);
    let wide = PrecisionBudget { window_half: 2 * budget.window_half, ..*budget };
    let mut acc = AnnulusSeries::zero(p, annulus);
    let mut pow = w.clone();
    for k in 1..=cap as i64 {
        let kinv = PadicScalar::from_i64(p, k, relprec).inv()?;
        let mut term = pow.scale(&kinv);
        if k % 2 == 0 {
            term = term.neg();
        }
        acc = acc.add(&term);
        if pow.lowest_term().is_none() {
            return Ok(acc);
        }
        match term.interval_valuation(s1, s2) {
            None => return Ok(acc),
            Some(v) if v > target => return Ok(acc),
            _ => {}
        }
        pow = pow.mul(w, &wide)?;
        pow.truncate_below(-window_cap);
        pow.truncate_at(window_cap);
    }
    Err(Error::LogDivergent)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::series::r_level;

    fn budget() -> PrecisionBudget {
        PrecisionBudget::default()
    }

    #[test]
    fn partial_of_ell() {
        let b = budget();
        let p = 2u64;
        let ell = LogSeries::ell_power(p, r_level(p, 1), 1, 40);
        let d = ell.log_partial(&b).unwrap();
        // (1+T)/T at ell-degree 0.
        assert_eq!(d.degree(), 0);
        let c = d.coeff(0);
        assert!(c.coeff(-1).eq_at_precision(&PadicScalar::one(p, 40)));
        assert!(c.coeff(0).eq_at_precision(&PadicScalar::one(p, 40)));
        // log_partial(T*ell) = (1+T)*ell + (1+T).
        let t_ell = LogSeries::new(
            p,
            vec![
                AnnulusSeries::zero(p, r_level(p, 1)),
                AnnulusSeries::variable(p, r_level(p, 1), 40),
            ],
        );
        let d = t_ell.log_partial(&b).unwrap();
        let one_plus_t = AnnulusSeries::from_integers(p, r_level(p, 1), 0, &[1, 1], 40);
        assert!(d.coeff(1).sub(&one_plus_t).is_zero_at_precision());
        assert!(d.coeff(0).sub(&one_plus_t).is_zero_at_precision());
        // log_partial(ell^2) = 2*ell*(1+T)/T.
        let ell2 = LogSeries::ell_power(p, r_level(p, 1), 2, 40);
        let d = ell2.log_partial(&b).unwrap();
        let expect = AnnulusSeries::from_integers(p, r_level(p, 1), -1, &[2, 2], 40);
        assert!(d.coeff(1).sub(&expect).is_zero_at_precision());
    }

    #[test]
    fn nabla_examples() {
        let b = budget();
        let p = 2u64;
        // nabla(t) = t.
        let ts = special_t(p, r_level(p, 1), &b);
        let n = LogSeries::from_series(ts.clone()).log_nabla(&b).unwrap();
        let mut diff = n.coeff(0).sub(&ts);
        diff.truncate_at(ts.kmax() - 2);
        assert!(diff.is_zero_at_precision(), "{}", diff.render());
        // nabla(T) = t(1+T).
        let t = AnnulusSeries::variable(p, r_level(p, 1), 40);
        let n = LogSeries::from_series(t.clone()).log_nabla(&b).unwrap();
        let one_plus_t = AnnulusSeries::from_integers(p, r_level(p, 1), 0, &[1, 1], 40);
        let expect = ts.mul(&one_plus_t, &b).unwrap();
        let mut diff = n.coeff(0).sub(&expect);
        diff.truncate_at(ts.kmax() - 2);
        assert!(diff.is_zero_at_precision());
        // nabla(ell) = t(1+T)/T.
        let ell = LogSeries::ell_power(p, r_level(p, 1), 1, 40);
        let n = ell.log_nabla(&b).unwrap();
        let tinv = AnnulusSeries::monomial(p, r_level(p, 1), -1, PadicScalar::one(p, 40));
        let expect = ts.mul(&one_plus_t, &b).unwrap().mul(&tinv, &b).unwrap();
        let mut diff = n.coeff(0).sub(&expect);
        diff.truncate_at(ts.kmax() - 2);
        assert!(diff.is_zero_at_precision());
    }

    #[test]
    fn monodromy_examples() {
        let p = 3u64;
        let r = r_level(p, 1);
        let one = LogSeries::from_series(AnnulusSeries::one(p, r, 40));
        assert!(one.monodromy_n().is_zero_at_precision());
        let ell = LogSeries::ell_power(p, r, 1, 40);
        let n = ell.monodromy_n();
        assert!(n.coeff(0).coeff(0).eq_at_precision(&PadicScalar::from_i64(p, -1, 40)));
        let ell2 = LogSeries::ell_power(p, r, 2, 40);
        let n2 = ell2.monodromy_n();
        assert!(n2.coeff(1).coeff(0).eq_at_precision(&PadicScalar::from_i64(p, -2, 40)));
        // Nilpotency.
        assert!(n2.monodromy_n().monodromy_n().is_zero_at_precision());
    }

    #[test]
    fn gamma_fixes_ell_at_identity() {
        let b = budget();
        let p = 3u64;
        let ell = LogSeries::ell_power(p, r_level(p, 1), 1, 40);
        let g = ell.log_gamma(&PadicScalar::one(p, 40), &b).unwrap();
        let diff = g.sub(&ell);
        assert!(diff.is_zero_at_precision(), "{}", diff.render());
    }

    #[test]
    fn frobenius_of_ell_leading_terms() {
        // p=2: phi(ell) = 2*ell + log(1+2/T) = 2*ell + 2/T - 2/T^2 + 8/(3T^3)...
        let b = budget();
        let p = 2u64;
        let ell = LogSeries::ell_power(p, r_level(p, 1), 1, 40);
        let f = ell.log_frobenius(&b).unwrap();
        assert!(f.coeff(1).coeff(0).eq_at_precision(&PadicScalar::from_i64(p, 2, 40)));
        let c = f.coeff(0);
        assert!(c.coeff(-1).eq_at_precision(&PadicScalar::from_i64(p, 2, 40)), "{}", c.render());
        assert!(c.coeff(-2).eq_at_precision(&PadicScalar::from_i64(p, -2, 40)));
        assert!(c
            .coeff(-3)
            .eq_at_precision(&PadicScalar::from_rational(p, 8, 3, 40).unwrap()));
    }

    #[test]
    fn frobenius_of_ell_derivative_check() {
        // The correction u = phi(ell) - p*ell = log(phi(T)/T^p) satisfies the
        // exact identity d(u) = d(phi(T)/T^p) / (phi(T)/T^p). (The exp-side
        // check diverges p-adically at p=2: v(2/T) stays below 1/(p-1) on the
        // annulus, so the derivative identity is the sound oracle.)
        let b = budget();
        for p in [2u64, 3] {
            let ell = LogSeries::ell_power(p, r_level(p, 1), 1, 40);
            let f = ell.log_frobenius(&b).unwrap();
            let u = f.coeff(0);
            let ratio = frobenius_of_t(p, r_level(p, 1), 56)
                .mul(
                    &AnnulusSeries::monomial(p, r_level(p, 1), -(p as i64), PadicScalar::one(p, 56)),
                    &b,
                )
                .unwrap();
            let mut rinv = ratio.invert_annulus(&b).unwrap();
            // Both factors live near the top of their descending expansions;
            // products are complete there once the deep tail is cut.
            rinv.truncate_below(-40);
            let rhs = ratio.partial().mul(&rinv, &b).unwrap();
            let lhs = u.partial();
            let mut diff = lhs.sub(&rhs);
            diff.truncate_below(-30);
            diff.truncate_at(8);
            let resid = diff.window_interval_valuation(
                Rational::from_integer(2) * r_level(p, 1),
                Rational::from_integer(4) * r_level(p, 1),
            );
            assert!(
                resid.map_or(true, |v| v >= Rational::from_integer(20)),
                "p={} residual {:?}",
                p,
                resid
            );
        }
    }

    #[test]
    fn antiderivative_examples() {
        let b = budget();
        let p = 2u64;
        let r = r_level(p, 1);
        // F = 1+T -> G = T, coeff 0.
        let f = LogSeries::from_series(AnnulusSeries::from_integers(p, r, 0, &[1, 1], 40));
        let (g, c) = f.antiderivative(&b).unwrap();
        assert!(c.is_zero_at_precision());
        assert!(g.coeff(0).sub(&AnnulusSeries::variable(p, r, 40)).is_zero_at_precision());
        // F = (1+T)/T -> G = 0, coeff 1.
        let f = LogSeries::from_series(AnnulusSeries::from_integers(p, r, -1, &[1, 1], 40));
        let (g, c) = f.antiderivative(&b).unwrap();
        assert!(c.eq_at_precision(&PadicScalar::one(p, 40)));
        assert!(g.is_zero_at_precision(), "{}", g.render());
        // F = (1+T)T -> G = T^2/2.
        let f = LogSeries::from_series(AnnulusSeries::from_integers(p, r, 1, &[1, 1], 40));
        let (g, c) = f.antiderivative(&b).unwrap();
        assert!(c.is_zero_at_precision());
        let expect = AnnulusSeries::monomial(p, r, 2, PadicScalar::from_rational(p, 1, 2, 40).unwrap());
        assert!(g.coeff(0).sub(&expect).is_zero_at_precision(), "{}", g.render());
    }

    #[test]
    fn antiderivative_inverts_partial() {
        let b = budget();
        let p = 3u64;
        let r = r_level(p, 1);
        let f = LogSeries::from_series(AnnulusSeries::from_integers(p, r, -2, &[2, 0, 1, 5, 1], 40));
        let (g, c) = f.antiderivative(&b).unwrap();
        let mut back = g.log_partial(&b).unwrap();
        // add c * d(ell).
        let dl = AnnulusSeries::from_integers(p, r, -1, &[1, 1], 40).scale(&c);
        back = back.add(&LogSeries::from_series(dl));
        let diff = back.sub(&f);
        for j in 0..=diff.degree() {
            let mut cj = diff.coeff(j);
            cj.truncate_at(40);
            assert!(cj.is_zero_at_precision(), "level {}: {}", j, cj.render());
        }
    }
}
