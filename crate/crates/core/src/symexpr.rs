//! Canonical symbolic expressions in jet variables, cotangent coordinates
//! and Clifford words.
//!
//! An [`Expr`] is a finite sum of canonical terms. Each [`TermKey`] is a
//! product of
//! - jet variables with integer exponents (`f^-4 f_;1^2`, `X1_;2,3`,
//!   second-order metric jets `g[1,2]_;3,3`, spin connection jets
//!   `sigma[1]_;2`, the scalar curvature `s`, canonical curvature entries
//!   `R[1,2,1,2]`),
//! - a cotangent monomial `xi1 xi2 ...` (a sorted multiset of indices),
//! - an opaque power `xi.xi^p` of the cotangent norm square (pre-origin
//!   this stands for `g^{ab} xi_a xi_b`, at the origin for the Euclidean
//!   norm square),
//! - an opaque power `X.X^q` of the vector-field norm square
//!   `sum_i (X^i)^2` (frame components, so no metric jets hide in it),
//! - a normalized Clifford word `c1 c3 ...` (strictly increasing indices).
//!
//! Coefficients are Gaussian rationals. Multiplication normalizes Clifford
//! words on the fly, so any `Expr` reachable through public constructors and
//! arithmetic stays canonical: equal expressions are structurally equal.
//!
//! Formal coordinate derivatives (`d_x`) extend jet variables and expand
//! derivatives of the opaque norm powers through metric jets respectively
//! vector-field jets; cotangent derivatives (`d_xi`) differentiate the
//! cotangent monomial and the norm power, either generically (`g^{mu nu}
//! xi_nu`) or at the origin (`xi_mu`).

use crate::coeff::{rat, rat_int, rat_pow, GaussRat, Rat};
use crate::{clifford, Error, Result};
use num::{One, Zero};
use std::collections::BTreeMap;
use std::fmt;

/// The underlying quantity a jet variable differentiates.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum JetBase {
    /// The scalar perturbation `f`.
    F,
    /// A frame component `X^i` of the vector field (indices `1..=n`).
    Xcomp(u8),
    /// An inverse metric entry `g^{ab}` with `a <= b`.
    MetricInv(u8, u8),
    /// A spin connection coefficient `sigma_k`.
    ConnCoeff(u8),
    /// The scalar curvature at the base point.
    Scal,
    /// A canonical Riemann entry (see `jets::riem_expr` for the pattern
    /// normalization that keeps only independent entries).
    Riem(u8, u8, u8, u8),
}

/// A jet variable: a base quantity together with a sorted multi-index of
/// coordinate derivatives.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct JetVar {
    pub base: JetBase,
    pub deriv: Vec<u8>,
}

impl JetVar {
    pub fn new(base: JetBase, mut deriv: Vec<u8>) -> Self {
        deriv.sort_unstable();
        JetVar { base, deriv }
    }

    pub fn plain(base: JetBase) -> Self {
        JetVar { base, deriv: Vec::new() }
    }

    /// The variable with one more coordinate derivative.
    pub fn derived(&self, a: u8) -> Self {
        let mut deriv = self.deriv.clone();
        deriv.push(a);
        deriv.sort_unstable();
        JetVar { base: self.base.clone(), deriv }
    }
}

impl fmt::Display for JetVar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.base {
            JetBase::F => write!(f, "f")?,
            JetBase::Xcomp(i) => write!(f, "X{i}")?,
            JetBase::MetricInv(a, b) => write!(f, "g[{a},{b}]")?,
            JetBase::ConnCoeff(k) => write!(f, "sigma[{k}]")?,
            JetBase::Scal => write!(f, "s")?,
            JetBase::Riem(a, b, c, d) => write!(f, "R[{a},{b},{c},{d}]")?,
        }
        if !self.deriv.is_empty() {
            let parts: Vec<String> = self.deriv.iter().map(u8::to_string).collect();
            write!(f, "_;{}", parts.join(","))?;
        }
        Ok(())
    }
}

/// A canonical term: jet variables with exponents, a cotangent monomial,
/// opaque norm powers and a normalized Clifford word.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Default)]
pub struct TermKey {
    /// Sorted list of `(variable, exponent)` with nonzero exponents.
    pub scalars: Vec<(JetVar, i32)>,
    /// Sorted multiset of cotangent indices.
    pub xi: Vec<u8>,
    /// Power `p` in `(|xi|^2)^p`.
    pub xi_norm_pow: i32,
    /// Power `q` in `(|X|^2)^q`.
    pub x_norm_pow: i32,
    /// Strictly increasing Clifford word.
    pub cliff: Vec<u8>,
}

impl TermKey {
    pub fn one() -> Self {
        TermKey::default()
    }

    /// Build a term from unsorted pieces; scalars are merged and sorted,
    /// the Clifford word must already be normalized by the caller.
    pub fn monomial(scalars: Vec<(JetVar, i32)>, cliff: Vec<u8>) -> Self {
        let mut key = TermKey { cliff, ..TermKey::default() };
        for (v, e) in scalars {
            key.push_scalar(v, e);
        }
        key
    }

    pub(crate) fn push_scalar(&mut self, var: JetVar, exp: i32) {
        if exp == 0 {
            return;
        }
        match self.scalars.binary_search_by(|(v, _)| v.cmp(&var)) {
            Ok(pos) => {
                self.scalars[pos].1 += exp;
                if self.scalars[pos].1 == 0 {
                    self.scalars.remove(pos);
                }
            }
            Err(pos) => self.scalars.insert(pos, (var, exp)),
        }
    }

    /// Exponent of one jet variable (0 when absent).
    pub fn scalar_exp(&self, var: &JetVar) -> i32 {
        self.scalars
            .binary_search_by(|(v, _)| v.cmp(var))
            .map(|pos| self.scalars[pos].1)
            .unwrap_or(0)
    }

    /// The homogeneity degree in the cotangent variable.
    pub fn xi_degree(&self) -> i32 {
        self.xi.len() as i32 + 2 * self.xi_norm_pow
    }

    /// Multiply two keys; the sign from normalizing the concatenated
    /// Clifford word is returned alongside.
    pub fn mul(&self, other: &TermKey) -> (i8, TermKey) {
        let mut out = self.clone();
        for (v, e) in &other.scalars {
            out.push_scalar(v.clone(), *e);
        }
        out.xi.extend_from_slice(&other.xi);
        out.xi.sort_unstable();
        out.xi_norm_pow += other.xi_norm_pow;
        out.x_norm_pow += other.x_norm_pow;
        let mut word = out.cliff.clone();
        word.extend_from_slice(&other.cliff);
        let (sign, normal) = clifford::normalize_word(&word);
        out.cliff = normal;
        (sign, out)
    }
}

impl fmt::Display for TermKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts: Vec<String> = Vec::new();
        for (v, e) in &self.scalars {
            if *e == 1 {
                parts.push(v.to_string());
            } else {
                parts.push(format!("{v}^{e}"));
            }
        }
        let mut i = 0;
        while i < self.xi.len() {
            let idx = self.xi[i];
            let mut count = 1;
            while i + count < self.xi.len() && self.xi[i + count] == idx {
                count += 1;
            }
            if count == 1 {
                parts.push(format!("xi{idx}"));
            } else {
                parts.push(format!("xi{idx}^{count}"));
            }
            i += count;
        }
        if self.xi_norm_pow != 0 {
            parts.push(format!("xi.xi^{}", self.xi_norm_pow));
        }
        if self.x_norm_pow != 0 {
            parts.push(format!("X.X^{}", self.x_norm_pow));
        }
        for &g in &self.cliff {
            parts.push(format!("c{g}"));
        }
        if parts.is_empty() {
            write!(f, "1")
        } else {
            write!(f, "{}", parts.join(" "))
        }
    }
}

/// Which form the cotangent derivative of the opaque norm square takes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum XiMode {
    /// `d/d xi_mu (xi.xi)^p = 2p (xi.xi)^(p-1) g^{mu nu} xi_nu`.
    Generic,
    /// At the base point `g = delta`: `2p (xi.xi)^(p-1) xi_mu`.
    Origin,
}

/// A canonical finite sum of terms with Gaussian rational coefficients.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Expr {
    terms: BTreeMap<TermKey, GaussRat>,
}

impl Expr {
    pub fn zero() -> Self {
        Expr::default()
    }

    pub fn one() -> Self {
        Expr::num(GaussRat::one())
    }

    pub fn num(c: GaussRat) -> Self {
        let mut e = Expr::zero();
        e.add_term(TermKey::one(), c);
        e
    }

    pub fn from_rat(r: Rat) -> Self {
        Expr::num(GaussRat::from_rat(r))
    }

    pub fn term(key: TermKey, coeff: GaussRat) -> Self {
        let mut e = Expr::zero();
        e.add_term(key, coeff);
        e
    }

    pub fn var(v: JetVar) -> Self {
        Expr::term(TermKey::monomial(vec![(v, 1)], Vec::new()), GaussRat::one())
    }

    pub fn xi(index: u8) -> Self {
        Expr::term(TermKey { xi: vec![index], ..TermKey::default() }, GaussRat::one())
    }

    pub fn xi_norm(p: i32) -> Self {
        Expr::term(TermKey { xi_norm_pow: p, ..TermKey::default() }, GaussRat::one())
    }

    pub fn x_norm(q: i32) -> Self {
        Expr::term(TermKey { x_norm_pow: q, ..TermKey::default() }, GaussRat::one())
    }

    pub fn scal() -> Self {
        Expr::var(JetVar::plain(JetBase::Scal))
    }

    /// A Clifford word, normalized on construction.
    pub fn cliff_word(word: &[u8]) -> Self {
        let (sign, normal) = clifford::normalize_word(word);
        Expr::term(
            TermKey { cliff: normal, ..TermKey::default() },
            GaussRat::from_int(i64::from(sign)),
        )
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&TermKey, &GaussRat)> {
        self.terms.iter()
    }

    /// Coefficient of a term key (zero when absent).
    pub fn coeff_of(&self, key: &TermKey) -> GaussRat {
        self.terms.get(key).cloned().unwrap_or_else(GaussRat::zero)
    }

    /// Merge one term in, dropping the entry if the coefficient cancels.
    pub fn add_term(&mut self, key: TermKey, coeff: GaussRat) {
        if coeff.is_zero() {
            return;
        }
        match self.terms.entry(key) {
            std::collections::btree_map::Entry::Vacant(slot) => {
                slot.insert(coeff);
            }
            std::collections::btree_map::Entry::Occupied(mut slot) => {
                let sum = &*slot.get() + &coeff;
                if sum.is_zero() {
                    slot.remove();
                } else {
                    *slot.get_mut() = sum;
                }
            }
        }
    }

    pub fn add(&self, other: &Expr) -> Expr {
        let mut out = self.clone();
        for (k, c) in other.terms() {
            out.add_term(k.clone(), c.clone());
        }
        out
    }

    pub fn sub(&self, other: &Expr) -> Expr {
        let mut out = self.clone();
        for (k, c) in other.terms() {
            out.add_term(k.clone(), -c);
        }
        out
    }

    pub fn neg(&self) -> Expr {
        let mut out = Expr::zero();
        for (k, c) in self.terms() {
            out.add_term(k.clone(), -c);
        }
        out
    }

    pub fn scale(&self, s: &GaussRat) -> Expr {
        let mut out = Expr::zero();
        for (k, c) in self.terms() {
            out.add_term(k.clone(), c * s);
        }
        out
    }

    pub fn scale_rat(&self, r: &Rat) -> Expr {
        self.scale(&GaussRat::from_rat(r.clone()))
    }

    /// Noncommutative product (Clifford words are normalized; everything
    /// else commutes).
    pub fn mul(&self, other: &Expr) -> Expr {
        let mut out = Expr::zero();
        for (ka, ca) in self.terms() {
            for (kb, cb) in other.terms() {
                let (sign, key) = ka.mul(kb);
                let mut c = ca * cb;
                if sign < 0 {
                    c = -c;
                }
                out.add_term(key, c);
            }
        }
        out
    }

    pub fn pow(&self, k: u32) -> Expr {
        let mut acc = Expr::one();
        for _ in 0..k {
            acc = acc.mul(self);
        }
        acc
    }

    /// Invert a single-term expression with no cotangent monomial and no
    /// Clifford word: exponents negate, the coefficient inverts.
    pub fn invert_monomial(&self) -> Result<Expr> {
        if self.terms.len() != 1 {
            return Err(Error::NonInvertibleLeadingSymbol(format!(
                "expected a single monomial, got {} terms",
                self.terms.len()
            )));
        }
        let (key, coeff) = self.terms.iter().next().expect("checked nonempty");
        if !key.xi.is_empty() || !key.cliff.is_empty() {
            return Err(Error::NonInvertibleLeadingSymbol(format!(
                "monomial {key} carries cotangent or Clifford factors"
            )));
        }
        let inv_coeff = coeff
            .inv()
            .ok_or_else(|| Error::NonInvertibleLeadingSymbol("zero coefficient".into()))?;
        let inv_key = TermKey {
            scalars: key.scalars.iter().map(|(v, e)| (v.clone(), -e)).collect(),
            xi: Vec::new(),
            xi_norm_pow: -key.xi_norm_pow,
            x_norm_pow: -key.x_norm_pow,
            cliff: Vec::new(),
        };
        Ok(Expr::term(inv_key, inv_coeff))
    }

    /// Signed power of an invertible monomial.
    pub fn monomial_pow(&self, k: i32) -> Result<Expr> {
        if k >= 0 {
            Ok(self.pow(k as u32))
        } else {
            Ok(self.invert_monomial()?.pow(k.unsigned_abs()))
        }
    }

    /// The common cotangent homogeneity degree, or an error when mixed.
    /// `Ok(None)` for the zero expression.
    pub fn xi_degree(&self) -> Result<Option<i32>> {
        let mut degree: Option<i32> = None;
        for (key, _) in self.terms() {
            let d = key.xi_degree();
            match degree {
                None => degree = Some(d),
                Some(prev) if prev != d => {
                    return Err(Error::NonHomogeneous(format!(
                        "mixed cotangent degrees {prev} and {d}"
                    )))
                }
                _ => {}
            }
        }
        Ok(degree)
    }

    /// Formal coordinate derivative `d/d x_a` before evaluation at the base
    /// point. Jet variables gain a derivative index, the cotangent norm
    /// square differentiates through metric jets, the vector-field norm
    /// square through component jets; curvature entries may not be
    /// differentiated (jets in this calculus stop at second metric order).
    pub fn d_x(&self, a: u8, n: u8) -> Result<Expr> {
        let mut out = Expr::zero();
        for (key, coeff) in self.terms() {
            // Leibniz over the scalar factors.
            for (pos, (var, exp)) in key.scalars.iter().enumerate() {
                match var.base {
                    JetBase::Scal | JetBase::Riem(..) => {
                        return Err(Error::DerivativeUnsupported(format!(
                            "coordinate derivative of curvature entry {var}"
                        )))
                    }
                    _ => {}
                }
                let mut rest = key.clone();
                rest.scalars[pos].1 -= 1;
                if rest.scalars[pos].1 == 0 {
                    rest.scalars.remove(pos);
                }
                let mut factor_key = TermKey::one();
                factor_key.push_scalar(var.derived(a), 1);
                let (sign, new_key) = rest.mul(&factor_key);
                debug_assert_eq!(sign, 1);
                out.add_term(new_key, coeff.scale(&rat_int(i64::from(*exp))));
            }
            // d/dx_a (g^{mu nu} xi_mu xi_nu)^p = p (..)^(p-1) * d_a(g^{mu nu}) xi_mu xi_nu.
            if key.xi_norm_pow != 0 {
                let p = key.xi_norm_pow;
                let mut rest = key.clone();
                rest.xi_norm_pow -= 1;
                for alpha in 1..=n {
                    for beta in alpha..=n {
                        let weight = if alpha == beta { 1 } else { 2 };
                        let mut factor_key = TermKey::one();
                        factor_key
                            .push_scalar(JetVar::new(JetBase::MetricInv(alpha, beta), vec![a]), 1);
                        factor_key.xi = vec![alpha, beta];
                        let (sign, new_key) = rest.mul(&factor_key);
                        debug_assert_eq!(sign, 1);
                        out.add_term(
                            new_key,
                            coeff.scale(&rat_int(i64::from(p) * weight)),
                        );
                    }
                }
            }
            // d/dx_a (sum_i (X^i)^2)^q = 2q (..)^(q-1) * sum_i X^i d_a X^i.
            if key.x_norm_pow != 0 {
                let q = key.x_norm_pow;
                let mut rest = key.clone();
                rest.x_norm_pow -= 1;
                for i in 1..=n {
                    let mut factor_key = TermKey::one();
                    factor_key.push_scalar(JetVar::plain(JetBase::Xcomp(i)), 1);
                    factor_key.push_scalar(JetVar::new(JetBase::Xcomp(i), vec![a]), 1);
                    let (sign, new_key) = rest.mul(&factor_key);
                    debug_assert_eq!(sign, 1);
                    out.add_term(new_key, coeff.scale(&rat_int(2 * i64::from(q))));
                }
            }
        }
        Ok(out)
    }

    /// Cotangent derivative `d/d xi_mu`.
    pub fn d_xi(&self, mu: u8, mode: XiMode, n: u8) -> Expr {
        let mut out = Expr::zero();
        for (key, coeff) in self.terms() {
            // Differentiate the explicit cotangent monomial: each occurrence
            // of xi_mu contributes the monomial with that occurrence removed.
            let count = key.xi.iter().filter(|&&v| v == mu).count();
            if count > 0 {
                let mut rest = key.clone();
                let pos = rest.xi.iter().position(|&v| v == mu).expect("occurrence counted");
                rest.xi.remove(pos);
                out.add_term(rest, coeff.scale(&rat_int(count as i64)));
            }
            // Differentiate the opaque norm square power.
            if key.xi_norm_pow != 0 {
                let p = key.xi_norm_pow;
                let mut rest = key.clone();
                rest.xi_norm_pow -= 1;
                match mode {
                    XiMode::Origin => {
                        let mut factor_key = TermKey::one();
                        factor_key.xi = vec![mu];
                        let (_, new_key) = rest.mul(&factor_key);
                        out.add_term(new_key, coeff.scale(&rat_int(2 * i64::from(p))));
                    }
                    XiMode::Generic => {
                        for nu in 1..=n {
                            let (lo, hi) = if mu <= nu { (mu, nu) } else { (nu, mu) };
                            let mut factor_key = TermKey::one();
                            factor_key.push_scalar(JetVar::plain(JetBase::MetricInv(lo, hi)), 1);
                            factor_key.xi = vec![nu];
                            let (_, new_key) = rest.mul(&factor_key);
                            out.add_term(new_key, coeff.scale(&rat_int(2 * i64::from(p))));
                        }
                    }
                }
            }
        }
        out
    }

    /// Substitute rational values for jet variables chosen by `assign`.
    /// Variables mapped to `None` stay symbolic. A zero value at a negative
    /// exponent is rejected.
    pub fn substitute_jet_values<F>(&self, assign: &F) -> Result<Expr>
    where
        F: Fn(&JetVar) -> Option<Rat>,
    {
        let mut out = Expr::zero();
        'terms: for (key, coeff) in self.terms() {
            let mut factor = coeff.clone();
            let mut kept = key.clone();
            kept.scalars.clear();
            for (var, exp) in &key.scalars {
                match assign(var) {
                    None => kept.push_scalar(var.clone(), *exp),
                    Some(val) => {
                        if val.is_zero() {
                            if *exp < 0 {
                                return Err(Error::Internal(format!(
                                    "substituting 0 for {var} at negative exponent {exp}"
                                )));
                            }
                            continue 'terms;
                        }
                        factor = factor.scale(&rat_pow(&val, *exp));
                    }
                }
            }
            out.add_term(kept, factor);
        }
        Ok(out)
    }

    /// Expand positive powers of the opaque norm squares into explicit sums:
    /// `xi.xi^p -> (sum_a xi_a^2)^p` and `X.X^q -> (sum_i (X^i)^2)^q`.
    /// All stored powers must be nonnegative (clear denominators first).
    pub fn expand_norm_powers(&self, n: u8) -> Result<Expr> {
        let xi_base: Expr = {
            let mut e = Expr::zero();
            for a in 1..=n {
                e.add_term(TermKey { xi: vec![a, a], ..TermKey::default() }, GaussRat::one());
            }
            e
        };
        let x_base: Expr = {
            let mut e = Expr::zero();
            for i in 1..=n {
                e.add_term(
                    TermKey::monomial(vec![(JetVar::plain(JetBase::Xcomp(i)), 2)], Vec::new()),
                    GaussRat::one(),
                );
            }
            e
        };
        let mut xi_pows: Vec<Expr> = vec![Expr::one()];
        let mut x_pows: Vec<Expr> = vec![Expr::one()];
        let mut out = Expr::zero();
        for (key, coeff) in self.terms() {
            if key.xi_norm_pow < 0 || key.x_norm_pow < 0 {
                return Err(Error::Internal(format!(
                    "expand_norm_powers on negative power in {key}"
                )));
            }
            while xi_pows.len() <= key.xi_norm_pow as usize {
                let next = xi_pows.last().expect("nonempty").mul(&xi_base);
                xi_pows.push(next);
            }
            while x_pows.len() <= key.x_norm_pow as usize {
                let next = x_pows.last().expect("nonempty").mul(&x_base);
                x_pows.push(next);
            }
            let mut stripped = key.clone();
            let p = std::mem::take(&mut stripped.xi_norm_pow);
            let q = std::mem::take(&mut stripped.x_norm_pow);
            let expanded = Expr::term(stripped, coeff.clone())
                .mul(&xi_pows[p as usize])
                .mul(&x_pows[q as usize]);
            out = out.add(&expanded);
        }
        Ok(out)
    }

    /// Multiply by `xi.xi^P X.X^Q` with the smallest `P, Q >= 0` making all
    /// norm powers nonnegative, then expand them. Zero-ness is preserved, so
    /// this is the workhorse for deciding equality of densities and symbol
    /// entries that mix opaque and expanded norm factors.
    pub fn cleared_expanded(&self, n: u8) -> Result<Expr> {
        let min_p = self.terms.keys().map(|k| k.xi_norm_pow).min().unwrap_or(0);
        let min_q = self.terms.keys().map(|k| k.x_norm_pow).min().unwrap_or(0);
        let shift = TermKey {
            xi_norm_pow: -min_p.min(0),
            x_norm_pow: -min_q.min(0),
            ..TermKey::default()
        };
        let shifted = self.mul(&Expr::term(shift, GaussRat::one()));
        shifted.expand_norm_powers(n)
    }

    /// Largest cotangent index mentioned anywhere (0 when none).
    pub fn max_index(&self) -> u8 {
        let mut max = 0u8;
        for key in self.terms.keys() {
            for &v in &key.xi {
                max = max.max(v);
            }
            for &g in &key.cliff {
                max = max.max(g);
            }
            for (var, _) in &key.scalars {
                let m = match var.base {
                    JetBase::Xcomp(i) => i,
                    JetBase::MetricInv(a, b) => a.max(b),
                    JetBase::ConnCoeff(k) => k,
                    JetBase::Riem(a, b, c, d) => a.max(b).max(c).max(d),
                    _ => 0,
                };
                max = max.max(m).max(var.deriv.iter().copied().max().unwrap_or(0));
            }
        }
        max
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        let rendered: Vec<String> = self
            .terms
            .iter()
            .map(|(k, c)| {
                let key = k.to_string();
                if key == "1" {
                    format!("({c})")
                } else {
                    format!("({c}) {key}")
                }
            })
            .collect();
        write!(f, "{}", rendered.join(" + "))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeff::rat;

    fn fvar() -> Expr {
        Expr::var(JetVar::plain(JetBase::F))
    }

    #[test]
    fn product_merges_exponents() {
        let f = fvar();
        let finv2 = f.invert_monomial().unwrap().pow(2);
        let prod = f.pow(2).mul(&finv2);
        assert_eq!(prod, Expr::one());
    }

    #[test]
    fn clifford_products_normalize() {
        let c21 = Expr::cliff_word(&[2, 1]);
        let c12 = Expr::cliff_word(&[1, 2]);
        assert_eq!(c21, c12.neg());
        // c1 c2 * c2 c3 = c1 (c2 c2) c3 = -c1 c3.
        let prod = Expr::cliff_word(&[1, 2]).mul(&Expr::cliff_word(&[2, 3]));
        assert_eq!(prod, Expr::cliff_word(&[1, 3]).neg());
        // c(X) c(X) = -|X|^2 pattern at n=2: cross terms cancel.
        let cx = crate::clifford::cx(2);
        let sq = cx.mul(&cx);
        let mut expected = Expr::zero();
        for i in 1..=2u8 {
            expected.add_term(
                TermKey::monomial(vec![(JetVar::plain(JetBase::Xcomp(i)), 2)], Vec::new()),
                GaussRat::from_int(-1),
            );
        }
        assert_eq!(sq, expected);
    }

    #[test]
    fn xi_derivative_of_monomial_and_norm() {
        let n = 3;
        // d/d xi_1 (xi_1^2 xi_2) = 2 xi_1 xi_2.
        let mono = Expr::term(TermKey { xi: vec![1, 1, 2], ..TermKey::default() }, GaussRat::one());
        let d = mono.d_xi(1, XiMode::Origin, n);
        let expected = Expr::term(TermKey { xi: vec![1, 2], ..TermKey::default() }, GaussRat::from_int(2));
        assert_eq!(d, expected);
        // Origin mode: d/d xi_2 (xi.xi)^-1 = -2 xi_2 (xi.xi)^-2.
        let d2 = Expr::xi_norm(-1).d_xi(2, XiMode::Origin, n);
        let expected2 = Expr::term(
            TermKey { xi: vec![2], xi_norm_pow: -2, ..TermKey::default() },
            GaussRat::from_int(-2),
        );
        assert_eq!(d2, expected2);
        // Generic mode keeps the metric: d/d xi_2 (xi.xi) = 2 g^{2nu} xi_nu.
        let dgen = Expr::xi_norm(1).d_xi(2, XiMode::Generic, n);
        let mut expected3 = Expr::zero();
        for nu in 1..=n {
            let (lo, hi) = if 2 <= nu { (2, nu) } else { (nu, 2) };
            let mut key = TermKey::one();
            key.push_scalar(JetVar::plain(JetBase::MetricInv(lo, hi)), 1);
            key.xi = vec![nu];
            expected3.add_term(key, GaussRat::from_int(2));
        }
        assert_eq!(dgen, expected3);
    }

    #[test]
    fn x_derivative_leibniz_and_norms() {
        let n = 2;
        // d/dx_1 (f^-2) = -2 f^-3 f_;1.
        let fm2 = fvar().invert_monomial().unwrap().pow(2);
        let d = fm2.d_x(1, n).unwrap();
        let mut key = TermKey::one();
        key.push_scalar(JetVar::plain(JetBase::F), -3);
        key.push_scalar(JetVar::new(JetBase::F, vec![1]), 1);
        assert_eq!(d, Expr::term(key, GaussRat::from_int(-2)));
        // d/dx_1 (X.X)^-1 = -2 (X.X)^-2 sum_i X^i X^i_;1.
        let d2 = Expr::x_norm(-1).d_x(1, n).unwrap();
        let mut expected = Expr::zero();
        for i in 1..=n {
            let mut k = TermKey { x_norm_pow: -2, ..TermKey::default() };
            k.push_scalar(JetVar::plain(JetBase::Xcomp(i)), 1);
            k.push_scalar(JetVar::new(JetBase::Xcomp(i), vec![1]), 1);
            expected.add_term(k, GaussRat::from_int(-2));
        }
        assert_eq!(d2, expected);
        // d/dx_1 (xi.xi) = g^{ab}_;1 xi_a xi_b with off-diagonal weight 2.
        let d3 = Expr::xi_norm(1).d_x(1, n).unwrap();
        let mut expected3 = Expr::zero();
        for a in 1..=n {
            for b in a..=n {
                let mut k = TermKey::one();
                k.push_scalar(JetVar::new(JetBase::MetricInv(a, b), vec![1]), 1);
                k.xi = vec![a, b];
                expected3.add_term(k, GaussRat::from_int(if a == b { 1 } else { 2 }));
            }
        }
        assert_eq!(d3, expected3);
        // Curvature entries cannot be differentiated.
        assert!(Expr::scal().d_x(1, n).is_err());
    }

    #[test]
    fn mixed_partials_commute() {
        let n = 3;
        let e = Expr::xi_norm(-2).mul(&fvar().pow(2)).mul(&Expr::x_norm(-1));
        let d12 = e.d_x(1, n).unwrap().d_x(2, n).unwrap();
        let d21 = e.d_x(2, n).unwrap().d_x(1, n).unwrap();
        assert_eq!(d12, d21);
        let dx_dxi = e.d_x(1, n).unwrap().d_xi(2, XiMode::Origin, n);
        let dxi_dx = e.d_xi(2, XiMode::Origin, n).d_x(1, n).unwrap();
        assert_eq!(dx_dxi, dxi_dx);
    }

    #[test]
    fn homogeneity_detection() {
        let hom = Expr::term(TermKey { xi: vec![1, 2], xi_norm_pow: -3, ..TermKey::default() }, GaussRat::one());
        assert_eq!(hom.xi_degree().unwrap(), Some(-4));
        let mixed = hom.add(&Expr::xi_norm(-1));
        assert!(mixed.xi_degree().is_err());
        assert_eq!(Expr::zero().xi_degree().unwrap(), None);
    }

    #[test]
    fn cleared_expansion_decides_equality() {
        let n = 2;
        // sum_a xi_a^2 * (xi.xi)^-2  ==  (xi.xi)^-1.
        let mut lhs = Expr::zero();
        for a in 1..=n {
            lhs.add_term(TermKey { xi: vec![a, a], xi_norm_pow: -2, ..TermKey::default() }, GaussRat::one());
        }
        let rhs = Expr::xi_norm(-1);
        let diff = lhs.sub(&rhs).cleared_expanded(n).unwrap();
        assert!(diff.is_zero(), "difference: {diff}");
        // And a genuinely different pair stays different.
        let diff2 = lhs.sub(&Expr::xi_norm(-1).scale(&GaussRat::from_int(2))).cleared_expanded(n).unwrap();
        assert!(!diff2.is_zero());
    }

    #[test]
    fn substitution_restricts() {
        let e = Expr::var(JetVar::plain(JetBase::Xcomp(1)))
            .mul(&Expr::var(JetVar::plain(JetBase::Xcomp(2))))
            .add(&fvar().pow(2));
        let restricted = e
            .substitute_jet_values(&|v| match v.base {
                JetBase::Xcomp(2) => Some(rat(0, 1)),
                JetBase::F => Some(rat(3, 1)),
                _ => None,
            })
            .unwrap();
        assert_eq!(restricted, Expr::num(GaussRat::from_int(9)));
    }

    #[test]
    fn display_matches_conventions() {
        let mut key = TermKey::one();
        key.push_scalar(JetVar::plain(JetBase::F), -4);
        key.push_scalar(JetVar::new(JetBase::F, vec![1]), 2);
        assert_eq!(key.to_string(), "f^-4 f_;1^2");
        let mut key2 = TermKey { x_norm_pow: -4, ..TermKey::default() };
        key2.push_scalar(JetVar::new(JetBase::Xcomp(1), vec![2, 3]), 1);
        assert_eq!(key2.to_string(), "X1_;2,3 X.X^-4");
        let key3 = TermKey::monomial(
            vec![(JetVar::new(JetBase::MetricInv(1, 2), vec![3]), 1)],
            Vec::new(),
        );
        assert_eq!(key3.to_string(), "g[1,2]_;3");
        assert_eq!(TermKey::one().to_string(), "1");
    }
}
