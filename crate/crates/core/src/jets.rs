//! Normal-coordinate jet calculus at the base point.
//!
//! In normal coordinates centered at `x0` the metric jets are pure
//! curvature: `g^{ab}(x0) = delta_ab`, first jets vanish, and the second
//! jets are
//!
//! `d_mu d_nu g^{ab}(x0) = (1/3) (R_{a mu b nu} + R_{a nu b mu})`,
//!
//! in the curvature sign convention fixed throughout this crate (the one in
//! which the unperturbed residue density carries `-(m-1)/12 * s` and the
//! order -4 inverse symbol carries `+(2/3) R_{alpha a alpha mu} xi_mu xi_a`;
//! both are pinned by acceptance tests). Spin connection coefficients
//! vanish at `x0` and their first jets are bivectors,
//! `d_a sigma_b(x0) = -(1/4) sum_{s<t} R_{a b s t} c_s c_t`.
//!
//! [`at_origin`] pushes a formal expression through these substitutions.
//! Riemann entries are canonicalized by [`riem_expr`]: index pairs are
//! sign-sorted, pairs ordered, and for four distinct indices the pattern
//! whose first pair spans the extremes is eliminated through the first
//! Bianchi identity, so expressions that are equal as tensors collide
//! structurally.
//!
//! The module also owns numeric evaluation contexts ([`JetContext`]): exact
//! rational assignments to curvature entries and perturbation jets, with
//! the tensor symmetries and the first Bianchi identity enforced on input,
//! plus generators of random contexts whose curvature is built from
//! Kulkarni-Nomizu products of symmetric matrices (hence automatically a
//! valid algebraic curvature tensor).

use crate::coeff::{rat, rat_int, rat_pow, GaussRat, Rat};
use crate::symexpr::{Expr, JetBase, JetVar, TermKey};
use crate::{clifford, Error, Result};
use num::Zero;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::str::FromStr;

/// Canonical form of a Riemann entry: `None` when it vanishes by
/// antisymmetry, otherwise the sign and the index quadruple with both pairs
/// ascending and the pairs in lexicographic order.
pub fn riem_canonical(a: u8, b: u8, c: u8, d: u8) -> Option<(i8, (u8, u8, u8, u8))> {
    if a == b || c == d {
        return None;
    }
    let mut sign = 1i8;
    let (p1, q1) = if a <= b { (a, b) } else { (b, a) };
    if a > b {
        sign = -sign;
    }
    let (p2, q2) = if c <= d { (c, d) } else { (d, c) };
    if c > d {
        sign = -sign;
    }
    if (p1, q1) <= (p2, q2) {
        Some((sign, (p1, q1, p2, q2)))
    } else {
        Some((sign, (p2, q2, p1, q1)))
    }
}

fn all_distinct(p: u8, q: u8, r: u8, s: u8) -> bool {
    p != r && p != s && q != r && q != s
}

/// The Riemann entry `R_{abcd}` as a canonical expression.
///
/// Besides the sign normalization of [`riem_canonical`], a quadruple of
/// four distinct indices whose canonical first pair spans the global
/// extremes is rewritten through the first Bianchi identity
/// `R_{wzxy} = R_{wyxz} - R_{wxyz}` (for `w < x < y < z`), leaving exactly
/// two stored patterns per distinct quadruple.
pub fn riem_expr(a: u8, b: u8, c: u8, d: u8) -> Expr {
    match riem_canonical(a, b, c, d) {
        None => Expr::zero(),
        Some((sign, (p, q, r, s))) => {
            let body = if all_distinct(p, q, r, s) && q > s {
                // p < r < s < q is the (w z)(x y) pattern.
                riem_expr(p, s, r, q).sub(&riem_expr(p, r, s, q))
            } else {
                Expr::var(JetVar::plain(JetBase::Riem(p, q, r, s)))
            };
            if sign < 0 {
                body.neg()
            } else {
                body
            }
        }
    }
}

/// Scalar curvature as a sum of canonical Riemann entries:
/// `s = sum_{mu,a} R_{mu a mu a} = 2 sum_{mu<a} R_{mu a mu a}`.
pub fn scal_expr(n: u8) -> Expr {
    let mut e = Expr::zero();
    for mu in 1..=n {
        for a in (mu + 1)..=n {
            e = e.add(&riem_expr(mu, a, mu, a).scale(&GaussRat::from_int(2)));
        }
    }
    e
}

/// Expand occurrences of the opaque scalar-curvature variable into
/// canonical Riemann entries.
pub fn expand_scal(e: &Expr, n: u8) -> Result<Expr> {
    let scal_var = JetVar::plain(JetBase::Scal);
    let mut out = Expr::zero();
    let mut scal_pows: Vec<Expr> = vec![Expr::one()];
    for (key, coeff) in e.terms() {
        let exp = key.scalar_exp(&scal_var);
        if exp == 0 {
            out.add_term(key.clone(), coeff.clone());
            continue;
        }
        if exp < 0 {
            return Err(Error::Internal(format!(
                "negative power of scalar curvature in {key}"
            )));
        }
        while scal_pows.len() <= exp as usize {
            let next = scal_pows.last().expect("nonempty").mul(&scal_expr(n));
            scal_pows.push(next);
        }
        let mut stripped = key.clone();
        stripped.scalars.retain(|(v, _)| v != &scal_var);
        out = out.add(&Expr::term(stripped, coeff.clone()).mul(&scal_pows[exp as usize]));
    }
    Ok(out)
}

/// Decide exact equality of two expressions modulo the relations the
/// canonical form keeps implicit: scalar curvature versus Riemann entries
/// and opaque norm powers versus expanded component sums.
pub fn exprs_equal(a: &Expr, b: &Expr, n: u8) -> Result<bool> {
    Ok(difference_canonical(a, b, n)?.is_zero())
}

/// The fully expanded difference `a - b`; zero iff the expressions agree.
pub fn difference_canonical(a: &Expr, b: &Expr, n: u8) -> Result<Expr> {
    let diff = expand_scal(&a.sub(b), n)?;
    diff.cleared_expanded(n)
}

/// Evaluate a formal expression at the base point of a normal coordinate
/// system: metric and connection jets become curvature, underived
/// connection coefficients and first metric jets vanish.
pub fn at_origin(e: &Expr, n: u8) -> Result<Expr> {
    let mut out = Expr::zero();
    'terms: for (key, coeff) in e.terms() {
        let mut base = TermKey {
            scalars: Vec::new(),
            xi: key.xi.clone(),
            xi_norm_pow: key.xi_norm_pow,
            x_norm_pow: key.x_norm_pow,
            cliff: key.cliff.clone(),
        };
        let mut factors: Vec<Expr> = Vec::new();
        let mut pending_sigma: Option<(u8, u8)> = None;
        for (var, exp) in &key.scalars {
            match &var.base {
                JetBase::MetricInv(alpha, beta) => match var.deriv.len() {
                    0 => {
                        if alpha != beta {
                            continue 'terms; // delta_{alpha beta} = 0
                        }
                        // delta_{alpha alpha} = 1: drop the factor.
                    }
                    1 => continue 'terms, // first metric jets vanish at x0
                    2 => {
                        if *exp < 0 {
                            return Err(Error::Internal(format!(
                                "negative exponent on metric second jet {var}"
                            )));
                        }
                        let (da, db) = (var.deriv[0], var.deriv[1]);
                        let sub = riem_expr(*alpha, da, *beta, db)
                            .add(&riem_expr(*alpha, db, *beta, da))
                            .scale(&GaussRat::rational(1, 3));
                        factors.push(sub.pow(*exp as u32));
                    }
                    _ => {
                        return Err(Error::DerivativeUnsupported(format!(
                            "metric jet of order {} in {var}",
                            var.deriv.len()
                        )))
                    }
                },
                JetBase::ConnCoeff(k) => match var.deriv.len() {
                    0 => continue 'terms, // sigma(x0) = 0
                    1 => {
                        if *exp != 1 || pending_sigma.is_some() {
                            return Err(Error::DerivativeUnsupported(
                                "product of spin-connection jets at the base point".into(),
                            ));
                        }
                        pending_sigma = Some((var.deriv[0], *k));
                    }
                    _ => {
                        return Err(Error::DerivativeUnsupported(format!(
                            "spin-connection jet of order {} in {var}",
                            var.deriv.len()
                        )))
                    }
                },
                JetBase::F | JetBase::Xcomp(_) => {
                    if var.deriv.len() > 2 {
                        return Err(Error::DerivativeUnsupported(format!(
                            "third-order jet {var}"
                        )));
                    }
                    base.push_scalar(var.clone(), *exp);
                }
                JetBase::Scal | JetBase::Riem(..) => {
                    base.push_scalar(var.clone(), *exp);
                }
            }
        }
        let mut term = Expr::term(base, coeff.clone());
        for factor in &factors {
            term = term.mul(factor);
        }
        if let Some((a, k)) = pending_sigma {
            if !key.cliff.is_empty() {
                return Err(Error::DerivativeUnsupported(
                    "spin-connection jet alongside Clifford factors".into(),
                ));
            }
            // d_a sigma_k(x0) = -(1/4) sum_{s<t} R_{a k s t} c_s c_t.
            let mut bivector = Expr::zero();
            for s in 1..=n {
                for t in (s + 1)..=n {
                    bivector = bivector
                        .add(&riem_expr(a, k, s, t).mul(&Expr::cliff_word(&[s, t])));
                }
            }
            term = term.mul(&bivector.scale(&GaussRat::rational(-1, 4)));
        }
        out = out.add(&term);
    }
    Ok(out)
}

/// An exact numeric assignment to curvature entries and perturbation jets.
#[derive(Debug, Clone)]
pub struct JetContext {
    pub n: u8,
    /// Canonical Riemann entries (sign-sorted pairs, pairs ordered).
    pub riem: BTreeMap<(u8, u8, u8, u8), Rat>,
    /// Jets of the scalar perturbation, keyed by sorted multi-index.
    pub f_jets: BTreeMap<Vec<u8>, Rat>,
    /// Jets of the vector-field frame components, keyed by `(component,
    /// sorted multi-index)`.
    pub x_jets: BTreeMap<(u8, Vec<u8>), Rat>,
}

impl JetContext {
    /// Flat context: zero curvature, all perturbation jets zero except
    /// `f = 1` and `X = e_1`.
    pub fn flat(n: u8) -> Self {
        let mut ctx = JetContext {
            n,
            riem: BTreeMap::new(),
            f_jets: BTreeMap::new(),
            x_jets: BTreeMap::new(),
        };
        ctx.fill_missing_jets();
        ctx.f_jets.insert(Vec::new(), rat_int(1));
        ctx.x_jets.insert((1, Vec::new()), rat_int(1));
        ctx
    }

    /// Zero-fill every jet of `f` and of the `X` components up to second
    /// order so that strict evaluation never hits an unassigned variable.
    pub fn fill_missing_jets(&mut self) {
        let mut derivs: Vec<Vec<u8>> = vec![Vec::new()];
        for a in 1..=self.n {
            derivs.push(vec![a]);
            for b in a..=self.n {
                derivs.push(vec![a, b]);
            }
        }
        for d in &derivs {
            self.f_jets.entry(d.clone()).or_insert_with(Rat::zero);
            for i in 1..=self.n {
                self.x_jets.entry((i, d.clone())).or_insert_with(Rat::zero);
            }
        }
    }

    /// Record a Riemann entry given in any index order. Entries that must
    /// vanish by antisymmetry reject nonzero values, and two assignments
    /// related by a symmetry must agree.
    pub fn set_riem(&mut self, a: u8, b: u8, c: u8, d: u8, value: Rat) -> Result<()> {
        for &idx in &[a, b, c, d] {
            if idx == 0 || idx > self.n {
                return Err(Error::ContextViolation(format!(
                    "curvature index {idx} out of range 1..={}",
                    self.n
                )));
            }
        }
        match riem_canonical(a, b, c, d) {
            None => {
                if !value.is_zero() {
                    return Err(Error::ContextViolation(format!(
                        "antisymmetry forces R[{a},{b},{c},{d}] = 0"
                    )));
                }
                Ok(())
            }
            Some((sign, key)) => {
                let stored = if sign < 0 { -value } else { value };
                if let Some(prev) = self.riem.get(&key) {
                    if *prev != stored {
                        return Err(Error::ContextViolation(format!(
                            "pair-symmetry conflict at R[{a},{b},{c},{d}]"
                        )));
                    }
                    return Ok(());
                }
                self.riem.insert(key, stored);
                Ok(())
            }
        }
    }

    /// Canonical lookup respecting the tensor symmetries; absent entries
    /// are zero.
    pub fn riem_value(&self, a: u8, b: u8, c: u8, d: u8) -> Rat {
        match riem_canonical(a, b, c, d) {
            None => Rat::zero(),
            Some((sign, key)) => {
                let v = self.riem.get(&key).cloned().unwrap_or_else(Rat::zero);
                if sign < 0 {
                    -v
                } else {
                    v
                }
            }
        }
    }

    /// Scalar curvature of the stored tensor.
    pub fn scal_value(&self) -> Rat {
        let mut s = Rat::zero();
        for mu in 1..=self.n {
            for a in 1..=self.n {
                s += self.riem_value(mu, a, mu, a);
            }
        }
        s
    }

    /// Enforce the first Bianchi identity on the stored entries (all other
    /// algebraic symmetries are already structural). The violated identity
    /// is named in the error.
    pub fn validate(&self) -> Result<()> {
        for w in 1..=self.n {
            for x in (w + 1)..=self.n {
                for y in (x + 1)..=self.n {
                    for z in (y + 1)..=self.n {
                        let cyc = self.riem_value(w, x, y, z) - self.riem_value(w, y, x, z)
                            + self.riem_value(w, z, x, y);
                        if !cyc.is_zero() {
                            return Err(Error::ContextViolation(format!(
                                "first Bianchi identity fails at indices ({w},{x},{y},{z})"
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// The nonvanishing requirements of the perturbed triples: `f(x0) != 0`
    /// for the scalar perturbation, `|X(x0)|^2 != 0` for the vector one.
    pub fn validate_scalar_unit(&self) -> Result<()> {
        let f0 = self.f_jets.get(&Vec::new()).cloned().unwrap_or_else(Rat::zero);
        if f0.is_zero() {
            return Err(Error::ContextViolation(
                "scalar perturbation must not vanish at the base point: f(x0) = 0".into(),
            ));
        }
        Ok(())
    }

    pub fn validate_vector_unit(&self) -> Result<()> {
        let mut norm = Rat::zero();
        for i in 1..=self.n {
            let v = self.x_jets.get(&(i, Vec::new())).cloned().unwrap_or_else(Rat::zero);
            norm += &v * &v;
        }
        if norm.is_zero() {
            return Err(Error::ContextViolation(
                "vector field must not vanish at the base point: |X(x0)|^2 = 0".into(),
            ));
        }
        Ok(())
    }

    fn eval_var(&self, var: &JetVar) -> Result<Rat> {
        match &var.base {
            JetBase::F => self
                .f_jets
                .get(&var.deriv)
                .cloned()
                .ok_or_else(|| Error::UnboundVariable(var.to_string())),
            JetBase::Xcomp(i) => self
                .x_jets
                .get(&(*i, var.deriv.clone()))
                .cloned()
                .ok_or_else(|| Error::UnboundVariable(var.to_string())),
            JetBase::Scal => Ok(self.scal_value()),
            JetBase::Riem(a, b, c, d) => Ok(self.riem_value(*a, *b, *c, *d)),
            JetBase::MetricInv(..) | JetBase::ConnCoeff(..) => {
                Err(Error::UnboundVariable(var.to_string()))
            }
        }
    }

    fn eval_term_scalar(&self, key: &TermKey, coeff: &GaussRat, xi: Option<&[Rat]>) -> Result<GaussRat> {
        let mut acc = coeff.clone();
        for (var, exp) in &key.scalars {
            let v = self.eval_var(var)?;
            if v.is_zero() {
                if *exp < 0 {
                    return Err(Error::Internal(format!(
                        "evaluation hit 0^{exp} for {var}"
                    )));
                }
                return Ok(GaussRat::zero());
            }
            acc = acc.scale(&rat_pow(&v, *exp));
        }
        if !key.xi.is_empty() || key.xi_norm_pow != 0 {
            let xi = xi.ok_or_else(|| {
                Error::UnboundVariable("cotangent vector required for evaluation".into())
            })?;
            if xi.len() < self.n as usize {
                return Err(Error::UnboundVariable(format!(
                    "cotangent vector has {} entries, need {}",
                    xi.len(),
                    self.n
                )));
            }
            for &idx in &key.xi {
                acc = acc.scale(&xi[idx as usize - 1]);
            }
            if key.xi_norm_pow != 0 {
                let mut norm = Rat::zero();
                for v in xi.iter().take(self.n as usize) {
                    norm += v * v;
                }
                if norm.is_zero() && key.xi_norm_pow < 0 {
                    return Err(Error::Internal("zero cotangent norm at negative power".into()));
                }
                acc = acc.scale(&rat_pow(&norm, key.xi_norm_pow));
            }
        }
        if key.x_norm_pow != 0 {
            let mut norm = Rat::zero();
            for i in 1..=self.n {
                let v = self
                    .x_jets
                    .get(&(i, Vec::new()))
                    .cloned()
                    .ok_or_else(|| Error::UnboundVariable(format!("X{i}")))?;
                norm += &v * &v;
            }
            if norm.is_zero() && key.x_norm_pow < 0 {
                return Err(Error::Internal("zero |X|^2 at negative power".into()));
            }
            acc = acc.scale(&rat_pow(&norm, key.x_norm_pow));
        }
        Ok(acc)
    }

    /// Evaluate a Clifford-free expression to a Gaussian rational.
    pub fn eval_scalar(&self, e: &Expr, xi: Option<&[Rat]>) -> Result<GaussRat> {
        let mut acc = GaussRat::zero();
        for (key, coeff) in e.terms() {
            if !key.cliff.is_empty() {
                return Err(Error::NonScalarClifford(key.to_string()));
            }
            acc = &acc + &self.eval_term_scalar(key, coeff, xi)?;
        }
        Ok(acc)
    }

    /// Evaluate an expression with Clifford content in the matrix model
    /// (`n = 2m` required).
    pub fn eval_matrix(&self, e: &Expr, xi: Option<&[Rat]>) -> Result<clifford::CMatrix> {
        debug_assert_eq!(self.n % 2, 0);
        let m = self.n / 2;
        clifford::eval_expr_matrix(e, m, |key, coeff| self.eval_term_scalar(key, coeff, xi))
    }

    /// Parse a context from its JSON document form:
    ///
    /// ```json
    /// {
    ///   "m": 2,
    ///   "riem": [[1,2,1,2,"1/3"]],
    ///   "fJets": {"f": "2", "f_;1": "1/3"},
    ///   "xJets": {"X1": "1", "X1_;2,2": "-1/2"}
    /// }
    /// ```
    ///
    /// Omitted curvature entries are zero; omitted jets are zero. The
    /// curvature table is validated against the tensor symmetries and the
    /// first Bianchi identity.
    pub fn from_json_str(text: &str) -> Result<JetContext> {
        let doc: serde_json::Value = serde_json::from_str(text)
            .map_err(|e| Error::ContextViolation(format!("context is not valid JSON: {e}")))?;
        let obj = doc
            .as_object()
            .ok_or_else(|| Error::ContextViolation("context must be a JSON object".into()))?;
        let m = obj
            .get("m")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::ContextViolation("context needs an integer field \"m\"".into()))?;
        if !(2..=6).contains(&m) {
            return Err(Error::ContextViolation(format!(
                "m = {m} outside the supported range 2..=6"
            )));
        }
        let n = 2 * m as u8;
        let mut ctx = JetContext {
            n,
            riem: BTreeMap::new(),
            f_jets: BTreeMap::new(),
            x_jets: BTreeMap::new(),
        };
        if let Some(riem) = obj.get("riem") {
            let rows = riem.as_array().ok_or_else(|| {
                Error::ContextViolation("\"riem\" must be an array of [a,b,c,d,value] rows".into())
            })?;
            for row in rows {
                let cells = row.as_array().filter(|c| c.len() == 5).ok_or_else(|| {
                    Error::ContextViolation("each \"riem\" row must be [a,b,c,d,value]".into())
                })?;
                let mut idx = [0u8; 4];
                for (slot, cell) in idx.iter_mut().zip(cells.iter().take(4)) {
                    *slot = cell
                        .as_u64()
                        .and_then(|v| u8::try_from(v).ok())
                        .ok_or_else(|| {
                            Error::ContextViolation("curvature indices must be small integers".into())
                        })?;
                }
                let value = parse_rat_json(&cells[4])?;
                ctx.set_riem(idx[0], idx[1], idx[2], idx[3], value)?;
            }
        }
        if let Some(fjets) = obj.get("fJets") {
            let map = fjets.as_object().ok_or_else(|| {
                Error::ContextViolation("\"fJets\" must be an object keyed like \"f_;1,2\"".into())
            })?;
            for (k, v) in map {
                let (base, deriv) = parse_jet_key(k, n)?;
                if base != "f" {
                    return Err(Error::ContextViolation(format!(
                        "unexpected key {k:?} in fJets (expected \"f\" jets)"
                    )));
                }
                ctx.f_jets.insert(deriv, parse_rat_json(v)?);
            }
        }
        if let Some(xjets) = obj.get("xJets") {
            let map = xjets.as_object().ok_or_else(|| {
                Error::ContextViolation("\"xJets\" must be an object keyed like \"X1_;2\"".into())
            })?;
            for (k, v) in map {
                let (base, deriv) = parse_jet_key(k, n)?;
                let comp = base
                    .strip_prefix('X')
                    .and_then(|t| t.parse::<u8>().ok())
                    .filter(|&c| c >= 1 && c <= n)
                    .ok_or_else(|| {
                        Error::ContextViolation(format!(
                            "unexpected key {k:?} in xJets (expected \"X1\"..\"X{n}\" jets)"
                        ))
                    })?;
                ctx.x_jets.insert((comp, deriv), parse_rat_json(v)?);
            }
        }
        ctx.validate()?;
        ctx.fill_missing_jets();
        Ok(ctx)
    }
}

fn parse_rat_json(v: &serde_json::Value) -> Result<Rat> {
    let text = v
        .as_str()
        .ok_or_else(|| Error::ContextViolation(format!("expected a rational string, got {v}")))?;
    Rat::from_str(text.trim())
        .map_err(|_| Error::ContextViolation(format!("cannot parse rational {text:?}")))
}

/// Split a jet key like `"X1_;2,3"` into base name and sorted multi-index.
fn parse_jet_key(key: &str, n: u8) -> Result<(String, Vec<u8>)> {
    let (base, deriv_text) = match key.split_once("_;") {
        None => (key, ""),
        Some((b, d)) => (b, d),
    };
    let mut deriv = Vec::new();
    if !deriv_text.is_empty() {
        for piece in deriv_text.split(',') {
            let idx: u8 = piece.trim().parse().map_err(|_| {
                Error::ContextViolation(format!("bad derivative index {piece:?} in {key:?}"))
            })?;
            if idx == 0 || idx > n {
                return Err(Error::ContextViolation(format!(
                    "derivative index {idx} out of range 1..={n} in {key:?}"
                )));
            }
            deriv.push(idx);
        }
    }
    if deriv.len() > 2 {
        return Err(Error::ContextViolation(format!(
            "jets beyond second order are not part of the calculus: {key:?}"
        )));
    }
    deriv.sort_unstable();
    Ok((base.to_string(), deriv))
}

fn small_rat<R: Rng>(rng: &mut R) -> Rat {
    rat(rng.random_range(-9..=9), rng.random_range(1..=4))
}

fn small_nonzero_rat<R: Rng>(rng: &mut R) -> Rat {
    loop {
        let v = small_rat(rng);
        if !v.is_zero() {
            return v;
        }
    }
}

/// Kulkarni-Nomizu product of two symmetric matrices: an algebraic
/// curvature tensor (all symmetries plus first Bianchi) for free.
fn kn_riem(h: &[Vec<Rat>], k: &[Vec<Rat>], a: usize, b: usize, c: usize, d: usize) -> Rat {
    &h[a][c] * &k[b][d] - &h[a][d] * &k[b][c] + &k[a][c] * &h[b][d] - &k[a][d] * &h[b][c]
}

/// A random exact context: Kulkarni-Nomizu curvature plus random small
/// rational jets, with the base-point nonvanishing requirements enforced.
pub fn random_context(n: u8, seed: u64) -> JetContext {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = n as usize;
    let mut sym = || {
        let mut mat = vec![vec![Rat::zero(); dim + 1]; dim + 1];
        for i in 1..=dim {
            for j in i..=dim {
                let v = small_rat(&mut rng);
                mat[i][j] = v.clone();
                mat[j][i] = v;
            }
        }
        mat
    };
    let h = sym();
    let k = sym();
    let mut ctx = JetContext {
        n,
        riem: BTreeMap::new(),
        f_jets: BTreeMap::new(),
        x_jets: BTreeMap::new(),
    };
    for a in 1..=dim {
        for b in (a + 1)..=dim {
            for c in a..=dim {
                for d in (c + 1)..=dim {
                    if (a, b) <= (c, d) {
                        let v = kn_riem(&h, &k, a, b, c, d);
                        if !v.is_zero() {
                            ctx.riem.insert((a as u8, b as u8, c as u8, d as u8), v);
                        }
                    }
                }
            }
        }
    }
    ctx.fill_missing_jets();
    ctx.f_jets.insert(Vec::new(), small_nonzero_rat(&mut rng));
    ctx.x_jets.insert((1, Vec::new()), small_nonzero_rat(&mut rng));
    let keys: Vec<Vec<u8>> = ctx.f_jets.keys().cloned().collect();
    for key in keys {
        if !key.is_empty() {
            ctx.f_jets.insert(key.clone(), small_rat(&mut rng));
        }
    }
    let xkeys: Vec<(u8, Vec<u8>)> = ctx.x_jets.keys().cloned().collect();
    for (comp, key) in xkeys {
        if !(comp == 1 && key.is_empty()) {
            ctx.x_jets.insert((comp, key), small_rat(&mut rng));
        }
    }
    debug_assert!(ctx.validate().is_ok());
    ctx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symexpr::XiMode;

    #[test]
    fn riem_sign_symmetries() {
        let base = riem_expr(1, 2, 3, 4);
        assert_eq!(riem_expr(2, 1, 3, 4), base.neg());
        assert_eq!(riem_expr(1, 2, 4, 3), base.neg());
        assert_eq!(riem_expr(3, 4, 1, 2), base);
        assert!(riem_expr(1, 1, 2, 3).is_zero());
        assert!(riem_expr(1, 2, 3, 3).is_zero());
    }

    #[test]
    fn bianchi_cycle_vanishes_structurally() {
        // R_{a[bcd]} = 0 must hold identically after canonicalization, for
        // every labelling of four distinct indices.
        for perm in [(1u8, 2u8, 3u8, 4u8), (2, 4, 1, 3), (4, 3, 2, 1), (3, 1, 4, 2)] {
            let (a, b, c, d) = perm;
            let cyc = riem_expr(a, b, c, d)
                .add(&riem_expr(a, c, d, b))
                .add(&riem_expr(a, d, b, c));
            assert!(cyc.is_zero(), "cycle at {perm:?}: {cyc}");
        }
    }

    #[test]
    fn riem_rewrite_matches_numeric_tensor() {
        // The Bianchi rewrite stores (w z)(x y) entries through the other
        // two patterns; on an honest curvature tensor the rewritten
        // expression must evaluate back to the original entry.
        let ctx = random_context(6, 11);
        for (a, b, c, d) in [(1u8, 6u8, 2u8, 5u8), (2, 5, 3, 4), (1, 4, 2, 3), (3, 6, 4, 5)] {
            let via_expr = ctx.eval_scalar(&riem_expr(a, b, c, d), None).unwrap();
            assert_eq!(via_expr.im, Rat::zero());
            assert_eq!(via_expr.re, ctx.riem_value(a, b, c, d), "entry ({a},{b},{c},{d})");
        }
    }

    #[test]
    fn origin_rules() {
        let n = 4;
        // Underived connection coefficients vanish.
        let sigma = Expr::var(JetVar::plain(JetBase::ConnCoeff(2)));
        assert!(at_origin(&sigma, n).unwrap().is_zero());
        // Underived metric entries become Kronecker deltas.
        let diag = Expr::var(JetVar::plain(JetBase::MetricInv(3, 3)));
        assert_eq!(at_origin(&diag, n).unwrap(), Expr::one());
        let off = Expr::var(JetVar::plain(JetBase::MetricInv(1, 3)));
        assert!(at_origin(&off, n).unwrap().is_zero());
        // First metric jets vanish.
        let dg = Expr::var(JetVar::new(JetBase::MetricInv(1, 2), vec![3]));
        assert!(at_origin(&dg, n).unwrap().is_zero());
        // Second metric jets substitute curvature: d_a d_a g^{alpha beta}
        // summed over a gives (2/3) Ric_{alpha beta}.
        let mut sum = Expr::zero();
        for a in 1..=n {
            sum = sum.add(&Expr::var(JetVar::new(JetBase::MetricInv(1, 2), vec![a, a])));
        }
        let got = at_origin(&sum, n).unwrap();
        let mut ric = Expr::zero();
        for mu in 1..=n {
            ric = ric.add(&riem_expr(mu, 1, mu, 2));
        }
        assert_eq!(got, ric.scale(&GaussRat::rational(2, 3)));
    }

    #[test]
    fn origin_substitutes_connection_jet_bivector() {
        let n = 4;
        let dsigma = Expr::var(JetVar::new(JetBase::ConnCoeff(2), vec![1]));
        let got = at_origin(&dsigma, n).unwrap();
        let mut expected = Expr::zero();
        for s in 1..=n {
            for t in (s + 1)..=n {
                expected = expected.add(
                    &riem_expr(1, 2, s, t)
                        .mul(&Expr::cliff_word(&[s, t]))
                        .scale(&GaussRat::rational(-1, 4)),
                );
            }
        }
        assert_eq!(got, expected);
        // Contracted with delta_{ak} the substitution dies on R_{aa..}.
        let mut contracted = Expr::zero();
        for a in 1..=n {
            contracted = contracted.add(&Expr::var(JetVar::new(JetBase::ConnCoeff(a), vec![a])));
        }
        assert!(at_origin(&contracted, n).unwrap().is_zero());
        // Two connection jets in one term are out of scope.
        let two = dsigma.mul(&Expr::var(JetVar::new(JetBase::ConnCoeff(3), vec![2])));
        assert!(at_origin(&two, n).is_err());
    }

    #[test]
    fn origin_keeps_perturbation_jets_and_norms() {
        let n = 4;
        let e = Expr::var(JetVar::new(JetBase::F, vec![1, 2]))
            .mul(&Expr::xi_norm(-2))
            .mul(&Expr::x_norm(-1));
        assert_eq!(at_origin(&e, n).unwrap(), e);
    }

    #[test]
    fn context_rejects_symmetry_conflicts() {
        let mut ctx = JetContext::flat(4);
        ctx.set_riem(1, 2, 1, 2, rat(1, 2)).unwrap();
        // Same entry through a symmetry: fine when consistent.
        ctx.set_riem(2, 1, 1, 2, rat(-1, 2)).unwrap();
        // Conflicting value: rejected.
        assert!(ctx.set_riem(1, 2, 2, 1, rat(1, 2)).is_err());
        // Antisymmetric zero pattern with nonzero value: rejected.
        assert!(ctx.set_riem(1, 1, 2, 3, rat(1, 3)).is_err());
    }

    #[test]
    fn context_bianchi_validation() {
        let mut ctx = JetContext::flat(4);
        ctx.set_riem(1, 2, 3, 4, rat(1, 1)).unwrap();
        let err = ctx.validate().unwrap_err();
        match err {
            Error::ContextViolation(msg) => assert!(msg.contains("Bianchi"), "{msg}"),
            other => panic!("unexpected error {other:?}"),
        }
        ctx.set_riem(1, 3, 2, 4, rat(1, 1)).unwrap();
        ctx.validate().unwrap();
        assert!(random_context(6, 3).validate().is_ok());
    }

    #[test]
    fn json_context_round_trip() {
        let text = r#"{
            "m": 2,
            "riem": [[1,2,1,2,"1/3"], [3,4,3,4,"-1/2"]],
            "fJets": {"f": "2", "f_;1": "1/3"},
            "xJets": {"X1": "1", "X1_;2,2": "-1/2"}
        }"#;
        let ctx = JetContext::from_json_str(text).unwrap();
        assert_eq!(ctx.n, 4);
        assert_eq!(ctx.riem_value(1, 2, 1, 2), rat(1, 3));
        assert_eq!(ctx.riem_value(2, 1, 1, 2), rat(-1, 3));
        assert_eq!(ctx.f_jets[&vec![1u8]], rat(1, 3));
        assert_eq!(ctx.x_jets[&(1, vec![2, 2])], rat(-1, 2));
        // Defaults are filled for strict evaluation.
        assert_eq!(ctx.f_jets[&vec![2u8]], Rat::zero());
        // A Bianchi-violating table is refused.
        let bad = r#"{"m": 2, "riem": [[1,2,3,4,"1"]]}"#;
        assert!(JetContext::from_json_str(bad).is_err());
        // Malformed rationals are refused.
        let bad2 = r#"{"m": 2, "fJets": {"f": "one"}}"#;
        assert!(JetContext::from_json_str(bad2).is_err());
    }

    #[test]
    fn evaluation_homomorphism() {
        // Evaluating a product equals the product of evaluations.
        let ctx = random_context(4, 5);
        let xi: Vec<Rat> = vec![rat(1, 2), rat(-1, 1), rat(2, 1), rat(1, 3)];
        let a = Expr::var(JetVar::new(JetBase::F, vec![1]))
            .mul(&Expr::xi_norm(-1))
            .add(&Expr::xi(2).mul(&Expr::x_norm(1)));
        let b = riem_expr(1, 2, 1, 2).sub(&Expr::var(JetVar::plain(JetBase::F)));
        let va = ctx.eval_scalar(&a, Some(&xi)).unwrap();
        let vb = ctx.eval_scalar(&b, Some(&xi)).unwrap();
        let vab = ctx.eval_scalar(&a.mul(&b), Some(&xi)).unwrap();
        assert_eq!(vab, &va * &vb);
    }

    #[test]
    fn scal_expansion_consistent_with_eval() {
        let ctx = random_context(4, 9);
        let direct = ctx.eval_scalar(&Expr::scal(), None).unwrap();
        let expanded = ctx.eval_scalar(&scal_expr(4), None).unwrap();
        assert_eq!(direct, expanded);
        assert_eq!(direct.re, ctx.scal_value());
    }

    #[test]
    fn equality_decision_through_expansion() {
        let n = 4;
        // s * X.X == its fully expanded form.
        let lhs = Expr::scal().mul(&Expr::x_norm(1));
        let mut rhs = Expr::zero();
        for mu in 1..=n {
            for a in (mu + 1)..=n {
                for i in 1..=n {
                    let prod = riem_expr(mu, a, mu, a)
                        .mul(&Expr::var(JetVar::plain(JetBase::Xcomp(i))).pow(2))
                        .scale(&GaussRat::from_int(2));
                    rhs = rhs.add(&prod);
                }
            }
        }
        assert!(exprs_equal(&lhs, &rhs, n).unwrap());
        assert!(!exprs_equal(&lhs, &rhs.scale(&GaussRat::from_int(2)), n).unwrap());
    }

    #[test]
    fn xi_norm_expansion_interacts_with_dxi() {
        // d_xi at the origin of an opaque norm power agrees with the
        // expanded computation.
        let n = 3;
        let opaque = Expr::xi_norm(2);
        let expanded = opaque.cleared_expanded(n).unwrap();
        let d_opaque = opaque.d_xi(1, XiMode::Origin, n).cleared_expanded(n).unwrap();
        let d_expanded = expanded.d_xi(1, XiMode::Origin, n);
        assert_eq!(d_opaque, d_expanded);
    }
}
