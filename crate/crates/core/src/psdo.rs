//! Pseudodifferential symbol calculus in jet form at the base point.
//!
//! A symbol is stored as a graded sum of homogeneous parts; each part is a
//! [`JetExpr`]: the finite collection of its coordinate jets at `x0`, every
//! entry already pushed through the normal-coordinate substitutions of
//! [`crate::jets::at_origin`]. Composition is the standard asymptotic
//! product
//!
//! `sigma(AB) ~ sum_alpha (-i)^|alpha| / alpha! * d_xi^alpha(sigma A) * d_x^alpha(sigma B)`,
//!
//! with the left factor taking the cotangent derivatives and the right
//! factor the coordinate ones — the order matters once Clifford-valued
//! symbols appear. Coordinate derivatives act on jets as index shifts, so
//! each part carries the depth to which its jets are known and every
//! product tracks the depth that survives.
//!
//! [`GradedSymbol::invert`] produces the first three orders of the
//! parametrix of an elliptic second-order symbol, and
//! [`power_symbol_neg`] evaluates the closed form of the lowest-order
//! symbol of the `-(m-1)`-st power directly from those orders. The
//! independent cross-check [`residue_symbol_by_iterated_composition`]
//! computes the same symbol by literally composing the parametrix with
//! itself `m-2` times; the two must agree.

use crate::coeff::{binomial, factorial, rat_int, GaussRat, Rat};
use crate::jets::{at_origin, exprs_equal};
use crate::symexpr::{Expr, XiMode};
use crate::{Error, Result};
use num::Zero;
use std::collections::BTreeMap;

/// Sorted multi-indices over `1..=n` of the given length.
fn multi_indices_of_len(n: u8, len: usize) -> Vec<Vec<u8>> {
    let mut out: Vec<Vec<u8>> = vec![Vec::new()];
    for _ in 0..len {
        let mut next = Vec::new();
        for idx in out {
            let start = idx.last().copied().unwrap_or(1);
            for a in start..=n {
                let mut grown = idx.clone();
                grown.push(a);
                next.push(grown);
            }
        }
        out = next;
    }
    out
}

/// Sorted multi-indices over `1..=n` of every length up to `max_len`.
fn multi_indices_up_to(n: u8, max_len: usize) -> Vec<Vec<u8>> {
    let mut out = Vec::new();
    for len in 0..=max_len {
        out.extend(multi_indices_of_len(n, len));
    }
    out
}

/// `alpha!` for a sorted multi-index: the product of the factorials of the
/// index multiplicities.
fn multiset_factorial(alpha: &[u8]) -> Rat {
    let mut acc = rat_int(1);
    let mut run = 0u8;
    for (pos, &a) in alpha.iter().enumerate() {
        run += 1;
        if pos + 1 == alpha.len() || alpha[pos + 1] != a {
            acc *= factorial(run);
            run = 0;
        }
    }
    acc
}

fn count_of(idx: &[u8], a: u8) -> u8 {
    idx.iter().filter(|&&x| x == a).count() as u8
}

/// Leibniz multiplicity: the number of ways to split the multi-index
/// `gamma` with `alpha` going to the left factor.
fn multinomial_split(gamma: &[u8], alpha: &[u8]) -> Rat {
    let mut acc = rat_int(1);
    let mut seen = Vec::new();
    for &a in alpha {
        if seen.contains(&a) {
            continue;
        }
        seen.push(a);
        acc *= binomial(count_of(gamma, a), count_of(alpha, a));
    }
    acc
}

fn merge_sorted(a: &[u8], b: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    out.extend_from_slice(a);
    out.extend_from_slice(b);
    out.sort_unstable();
    out
}

/// The jets of one homogeneous symbol coefficient at the base point:
/// entry `d` holds `(d_x^d sigma)(x0)` for every sorted multi-index with
/// `|d| <= depth`. Zero entries are not stored.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JetExpr {
    pub n: u8,
    /// Number of coordinate derivatives the jet knows.
    pub depth: u8,
    entries: BTreeMap<Vec<u8>, Expr>,
}

impl JetExpr {
    pub fn zero(n: u8, depth: u8) -> Self {
        JetExpr {
            n,
            depth,
            entries: BTreeMap::new(),
        }
    }

    /// Build the jet of a formal expression: differentiate formally, then
    /// evaluate each entry at the base point.
    pub fn from_formal(e: &Expr, n: u8, depth: u8) -> Result<JetExpr> {
        let mut formal: BTreeMap<Vec<u8>, Expr> = BTreeMap::new();
        formal.insert(Vec::new(), e.clone());
        let mut frontier: Vec<Vec<u8>> = vec![Vec::new()];
        for _ in 0..depth {
            let mut next_frontier = Vec::new();
            for idx in frontier {
                let base = formal[&idx].clone();
                let start = idx.last().copied().unwrap_or(1);
                for a in start..=n {
                    let mut grown = idx.clone();
                    grown.push(a);
                    if !formal.contains_key(&grown) {
                        formal.insert(grown.clone(), base.d_x(a, n)?);
                        next_frontier.push(grown);
                    }
                }
            }
            frontier = next_frontier;
        }
        let mut entries = BTreeMap::new();
        for (idx, formal_entry) in formal {
            let at0 = at_origin(&formal_entry, n)?;
            if !at0.is_zero() {
                entries.insert(idx, at0);
            }
        }
        Ok(JetExpr { n, depth, entries })
    }

    /// Jet of a quantity constant in `x` (all derivative entries vanish).
    pub fn constant(e: Expr, n: u8, depth: u8) -> JetExpr {
        let mut entries = BTreeMap::new();
        if !e.is_zero() {
            entries.insert(Vec::new(), e);
        }
        JetExpr { n, depth, entries }
    }

    /// The entry at a sorted multi-index (zero when absent).
    pub fn entry(&self, d: &[u8]) -> Expr {
        debug_assert!(d.windows(2).all(|w| w[0] <= w[1]));
        self.entries.get(d).cloned().unwrap_or_else(Expr::zero)
    }

    pub fn is_zero(&self) -> bool {
        self.entries.values().all(Expr::is_zero)
    }

    pub fn entries(&self) -> impl Iterator<Item = (&Vec<u8>, &Expr)> {
        self.entries.iter()
    }

    fn insert_nonzero(&mut self, d: Vec<u8>, e: Expr) {
        if !e.is_zero() {
            self.entries.insert(d, e);
        }
    }

    /// Coordinate derivative as a jet shift; costs one level of depth.
    pub fn d_x(&self, a: u8) -> Result<JetExpr> {
        if self.depth == 0 {
            return Err(Error::InsufficientTruncation(
                "coordinate derivative of a depth-0 jet".into(),
            ));
        }
        let new_depth = self.depth - 1;
        let mut out = JetExpr::zero(self.n, new_depth);
        for idx in multi_indices_up_to(self.n, new_depth as usize) {
            let shifted = merge_sorted(&idx, &[a]);
            if let Some(e) = self.entries.get(&shifted) {
                out.insert_nonzero(idx, e.clone());
            }
        }
        Ok(out)
    }

    /// Cotangent derivative, entrywise; depth is unaffected.
    pub fn d_xi(&self, mu: u8) -> JetExpr {
        let mut out = JetExpr::zero(self.n, self.depth);
        for (idx, e) in &self.entries {
            out.insert_nonzero(idx.clone(), e.d_xi(mu, XiMode::Origin, self.n));
        }
        out
    }

    pub fn add(&self, other: &JetExpr) -> JetExpr {
        debug_assert_eq!(self.n, other.n);
        let depth = self.depth.min(other.depth);
        let mut out = JetExpr::zero(self.n, depth);
        for (idx, e) in &self.entries {
            if idx.len() <= depth as usize {
                out.entries.insert(idx.clone(), e.clone());
            }
        }
        for (idx, e) in &other.entries {
            if idx.len() <= depth as usize {
                let merged = match out.entries.remove(idx) {
                    None => e.clone(),
                    Some(prev) => prev.add(e),
                };
                out.insert_nonzero(idx.clone(), merged);
            }
        }
        out
    }

    pub fn neg(&self) -> JetExpr {
        self.scale(&-GaussRat::one())
    }

    pub fn sub(&self, other: &JetExpr) -> JetExpr {
        self.add(&other.neg())
    }

    pub fn scale(&self, s: &GaussRat) -> JetExpr {
        let mut out = JetExpr::zero(self.n, self.depth);
        if s.is_zero() {
            return out;
        }
        for (idx, e) in &self.entries {
            out.entries.insert(idx.clone(), e.scale(s));
        }
        out
    }

    /// Leibniz product of jets; the left/right order of the factors is
    /// preserved inside every entry.
    pub fn jet_mul(&self, other: &JetExpr) -> JetExpr {
        debug_assert_eq!(self.n, other.n);
        let depth = self.depth.min(other.depth);
        let mut out = JetExpr::zero(self.n, depth);
        for (da, ea) in &self.entries {
            if da.len() > depth as usize {
                continue;
            }
            for (db, eb) in &other.entries {
                let gamma = merge_sorted(da, db);
                if gamma.len() > depth as usize {
                    continue;
                }
                let mult = multinomial_split(&gamma, da);
                let contrib = ea.mul(eb).scale_rat(&mult);
                let merged = match out.entries.remove(&gamma) {
                    None => contrib,
                    Some(prev) => prev.add(&contrib),
                };
                out.insert_nonzero(gamma, merged);
            }
        }
        out
    }

    /// Jet of the reciprocal. The base entry must be an invertible
    /// monomial; first-order entries may be arbitrary (Clifford content
    /// included — the second-order formula keeps the symmetrized product).
    pub fn jet_inverse(&self) -> Result<JetExpr> {
        if self.depth > 2 {
            return Err(Error::Internal(
                "jet inversion implemented up to depth 2 only".into(),
            ));
        }
        let v0 = self.entry(&[]);
        let w0 = v0.invert_monomial()?;
        let w0_sq = w0.mul(&w0);
        let w0_cube = w0_sq.mul(&w0);
        let mut out = JetExpr::zero(self.n, self.depth);
        out.insert_nonzero(Vec::new(), w0.clone());
        if self.depth >= 1 {
            for a in 1..=self.n {
                let va = self.entry(&[a]);
                out.insert_nonzero(vec![a], w0_sq.mul(&va).neg());
            }
        }
        if self.depth >= 2 {
            for a in 1..=self.n {
                for b in a..=self.n {
                    let va = self.entry(&[a]);
                    let vb = self.entry(&[b]);
                    let vab = self.entry(&[a, b]);
                    let sym = va.mul(&vb).add(&vb.mul(&va));
                    let w_ab = w0_cube.mul(&sym).sub(&w0_sq.mul(&vab));
                    out.insert_nonzero(vec![a, b], w_ab);
                }
            }
        }
        Ok(out)
    }

    /// Entrywise equality modulo the scalar-curvature and norm-power
    /// aliasing relations.
    pub fn equal_modulo_relations(&self, other: &JetExpr) -> Result<bool> {
        let depth = self.depth.min(other.depth);
        for idx in multi_indices_up_to(self.n, depth as usize) {
            if !exprs_equal(&self.entry(&idx), &other.entry(&idx), self.n)? {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

/// A graded symbol: homogeneous parts by cotangent degree, known down to
/// `floor`. `exact` records that every absent order is genuinely zero (true
/// for differential operators), not merely untracked.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GradedSymbol {
    pub n: u8,
    parts: BTreeMap<i32, JetExpr>,
    pub floor: i32,
    pub exact: bool,
}

impl GradedSymbol {
    /// Assemble a symbol, checking that every entry of every part is
    /// homogeneous of that part's degree.
    pub fn new(n: u8, parts: Vec<(i32, JetExpr)>, floor: i32, exact: bool) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (order, jet) in parts {
            if jet.n != n {
                return Err(Error::Internal(format!(
                    "part at order {order} built for dimension {}, symbol is {n}",
                    jet.n
                )));
            }
            for (idx, e) in jet.entries() {
                match e.xi_degree()? {
                    None => {}
                    Some(d) if d == order => {}
                    Some(d) => {
                        return Err(Error::NonHomogeneous(format!(
                            "entry {idx:?} of part {order} has cotangent degree {d}"
                        )))
                    }
                }
            }
            if !jet.is_zero() {
                map.insert(order, jet);
            }
        }
        Ok(GradedSymbol {
            n,
            parts: map,
            floor,
            exact,
        })
    }

    pub fn part(&self, order: i32) -> Option<&JetExpr> {
        self.parts.get(&order)
    }

    pub fn part_or_zero(&self, order: i32, depth: u8) -> JetExpr {
        self.parts
            .get(&order)
            .cloned()
            .unwrap_or_else(|| JetExpr::zero(self.n, depth))
    }

    pub fn parts(&self) -> impl Iterator<Item = (&i32, &JetExpr)> {
        self.parts.iter()
    }

    /// Highest populated order.
    pub fn top(&self) -> Option<i32> {
        self.parts.keys().next_back().copied()
    }

    /// True when every term of every part is polynomial in the cotangent
    /// variable (no negative norm powers), so cotangent derivatives
    /// eventually annihilate it.
    pub fn is_xi_polynomial(&self) -> bool {
        self.parts.values().all(|jet| {
            jet.entries()
                .all(|(_, e)| e.terms().all(|(key, _)| key.xi_norm_pow >= 0))
        })
    }

    /// Asymptotic composition down to `floor_out`. The left factor takes
    /// cotangent derivatives, the right factor coordinate derivatives.
    pub fn compose(&self, other: &GradedSymbol, floor_out: i32) -> Result<GradedSymbol> {
        if self.n != other.n {
            return Err(Error::Internal(
                "composition of symbols in different dimensions".into(),
            ));
        }
        let (a_top, b_top) = match (self.top(), other.top()) {
            (Some(a), Some(b)) => (a, b),
            _ => return GradedSymbol::new(self.n, Vec::new(), floor_out, self.exact && other.exact),
        };
        if !self.exact && self.floor > floor_out - b_top {
            return Err(Error::InsufficientTruncation(format!(
                "left factor known down to order {}, need {} for output floor {floor_out}",
                self.floor,
                floor_out - b_top
            )));
        }
        if !other.exact && other.floor > floor_out - a_top {
            return Err(Error::InsufficientTruncation(format!(
                "right factor known down to order {}, need {} for output floor {floor_out}",
                other.floor,
                floor_out - a_top
            )));
        }
        let mut acc: BTreeMap<i32, JetExpr> = BTreeMap::new();
        for (&ka, pa) in &self.parts {
            for (&kb, pb) in &other.parts {
                let max_len = ka + kb - floor_out;
                if max_len < 0 {
                    continue;
                }
                for alpha in multi_indices_up_to(self.n, max_len as usize) {
                    // Cotangent derivatives on the left factor first: when
                    // they vanish the coordinate-derivative depth of the
                    // right factor is never consumed.
                    let mut da = pa.clone();
                    for &mu in &alpha {
                        da = da.d_xi(mu);
                    }
                    if da.is_zero() {
                        continue;
                    }
                    let mut db = pb.clone();
                    for &a in &alpha {
                        db = db.d_x(a)?;
                    }
                    let coeff = GaussRat::i_pow(-(alpha.len() as i32))
                        .scale(&(rat_int(1) / multiset_factorial(&alpha)));
                    let contrib = da.jet_mul(&db).scale(&coeff);
                    let order = ka + kb - alpha.len() as i32;
                    let merged = match acc.remove(&order) {
                        None => contrib,
                        Some(prev) => prev.add(&contrib),
                    };
                    acc.insert(order, merged);
                }
            }
        }
        let exact =
            self.exact && other.exact && self.is_xi_polynomial() && floor_out <= other.floor;
        GradedSymbol::new(
            self.n,
            acc.into_iter().collect(),
            floor_out,
            exact,
        )
    }

    pub fn add(&self, other: &GradedSymbol) -> Result<GradedSymbol> {
        if self.n != other.n {
            return Err(Error::Internal("sum of symbols in different dimensions".into()));
        }
        let mut parts = self.parts.clone();
        for (&order, jet) in &other.parts {
            let merged = match parts.remove(&order) {
                None => jet.clone(),
                Some(prev) => prev.add(jet),
            };
            parts.insert(order, merged);
        }
        let floor = if self.exact {
            other.floor
        } else if other.exact {
            self.floor
        } else {
            self.floor.max(other.floor)
        };
        GradedSymbol::new(
            self.n,
            parts.into_iter().collect(),
            floor,
            self.exact && other.exact,
        )
    }

    /// First three orders of the parametrix of an elliptic second-order
    /// symbol: `b_{-2} = s2^{-1}` and the standard recursion
    ///
    /// `b_{-3} = -b_{-2} [ s1 b_{-2} - i d_xi_a(s2) d_xa(b_{-2}) ]`
    ///
    /// `b_{-4} = -b_{-2} [ s1 b_{-3} + s0 b_{-2} - i d_xi_a(s1) d_xa(b_{-2})
    ///           - i d_xi_a(s2) d_xa(b_{-3}) - 1/2 d_xi_a d_xi_b(s2) d_xa d_xb(b_{-2}) ]`
    ///
    /// with repeated coordinate indices summed over `1..=n`.
    pub fn invert(&self) -> Result<GradedSymbol> {
        let top = self
            .top()
            .ok_or_else(|| Error::NonInvertibleLeadingSymbol("empty symbol".into()))?;
        if top != 2 {
            return Err(Error::NonInvertibleLeadingSymbol(format!(
                "leading order {top}, expected 2"
            )));
        }
        if !self.exact && self.floor > 0 {
            return Err(Error::InsufficientTruncation(
                "inversion needs the symbol down to order 0".into(),
            ));
        }
        let n = self.n;
        let s2 = self
            .part(2)
            .ok_or_else(|| Error::NonInvertibleLeadingSymbol("missing leading part".into()))?;
        let s1 = self.part_or_zero(1, 1);
        let s0 = self.part_or_zero(0, 0);
        let minus_i = -GaussRat::i();
        let b2 = s2.jet_inverse()?;

        // Order -3.
        let mut bracket3 = s1.jet_mul(&b2);
        for a in 1..=n {
            let term = s2.d_xi(a).jet_mul(&b2.d_x(a)?).scale(&minus_i);
            bracket3 = bracket3.add(&term);
        }
        let b3 = b2.jet_mul(&bracket3).neg();

        // Order -4.
        let mut bracket4 = s1.jet_mul(&b3).add(&s0.jet_mul(&b2));
        for a in 1..=n {
            bracket4 = bracket4.add(&s1.d_xi(a).jet_mul(&b2.d_x(a)?).scale(&minus_i));
            bracket4 = bracket4.add(&s2.d_xi(a).jet_mul(&b3.d_x(a)?).scale(&minus_i));
            for b in 1..=n {
                let dd = s2.d_xi(a).d_xi(b);
                let term = dd
                    .jet_mul(&b2.d_x(a)?.d_x(b)?)
                    .scale(&GaussRat::rational(-1, 2));
                bracket4 = bracket4.add(&term);
            }
        }
        let b4 = b2.jet_mul(&bracket4).neg();

        GradedSymbol::new(n, vec![(-2, b2), (-3, b3), (-4, b4)], -4, false)
    }

    /// Symbol of the commutator `[S, w]` with a multiplication operator:
    /// the composition series with the identity-order term removed,
    ///
    /// `sigma([S, w]) = sum_{|alpha| >= 1} (-i)^|alpha| / alpha! * d_xi^alpha(sigma S) * d_x^alpha(w)`.
    pub fn commutator_with_function(&self, w: &JetExpr, floor_out: i32) -> Result<GradedSymbol> {
        if self.n != w.n {
            return Err(Error::Internal(
                "commutator of symbol and jet in different dimensions".into(),
            ));
        }
        if !self.exact && self.floor - 1 < floor_out {
            return Err(Error::InsufficientTruncation(format!(
                "symbol known down to order {}, commutator requested down to {floor_out}",
                self.floor
            )));
        }
        let mut acc: BTreeMap<i32, JetExpr> = BTreeMap::new();
        for (&k, part) in &self.parts {
            let max_len = k - floor_out;
            if max_len < 1 {
                continue;
            }
            for alpha in multi_indices_up_to(self.n, max_len as usize) {
                if alpha.is_empty() {
                    continue;
                }
                let mut da = part.clone();
                for &mu in &alpha {
                    da = da.d_xi(mu);
                }
                if da.is_zero() {
                    continue;
                }
                let mut db = w.clone();
                for &a in &alpha {
                    db = db.d_x(a)?;
                }
                let coeff = GaussRat::i_pow(-(alpha.len() as i32))
                    .scale(&(rat_int(1) / multiset_factorial(&alpha)));
                let contrib = da.jet_mul(&db).scale(&coeff);
                let order = k - alpha.len() as i32;
                let merged = match acc.remove(&order) {
                    None => contrib,
                    Some(prev) => prev.add(&contrib),
                };
                acc.insert(order, merged);
            }
        }
        let exact = self.exact && self.is_xi_polynomial();
        GradedSymbol::new(self.n, acc.into_iter().collect(), floor_out, exact)
    }
}

/// The lowest-order symbol of the `-(m-1)`-st power of an inverted
/// second-order symbol, from the closed form in the parametrix orders
/// `b_{-2}, b_{-3}, b_{-4}` (written `b2, b3, b4` below):
///
/// * `(m-1) b2^{m-2} b4`
/// * `(m-1)(m-2)/2 * b2^{m-3} b3^2`
/// * `-i (m-1)(m-2)/2 * b2^{m-4} [ b2 d_xi_a(b3) d_xa(b2)
///      + b2 d_xi_a(b2) d_xa(b3) + (m-3) b3 d_xi_a(b2) d_xa(b2) ]`
/// * `-(m-1)(m-2)/24 * b2^{m-5} [ 6 b2^2 d_xi_a d_xi_b(b2) d_xa d_xb(b2)
///      + 3(m-3)(m-4) d_xi_a(b2) d_xi_b(b2) d_xa(b2) d_xb(b2)
///      + 4(m-3) b2 ( d_xi_a(b2) d_xi_b(b2) d_xa d_xb(b2)
///        + d_xi_a(b2) d_xi_b d_xa(b2) d_xb(b2)
///        + d_xi_a d_xi_b(b2) d_xa(b2) d_xb(b2) ) ]`
///
/// evaluated at the base point, with coordinate derivatives read off the
/// jet entries. Requires the leading parametrix order to be a scalar
/// monomial (no Clifford content), so its powers commute past everything.
pub fn power_symbol_neg(b: &GradedSymbol, m: u8) -> Result<Expr> {
    if m < 2 {
        return Err(Error::Internal("power symbol needs m >= 2".into()));
    }
    let n = b.n;
    let p2 = b
        .part(-2)
        .ok_or_else(|| Error::NonInvertibleLeadingSymbol("missing order -2 part".into()))?;
    let p3 = b.part_or_zero(-3, 1);
    let p4 = b.part_or_zero(-4, 0);
    let b2 = p2.entry(&[]);
    for (key, _) in b2.terms() {
        if !key.cliff.is_empty() {
            return Err(Error::NonScalarB2);
        }
    }
    let mi = m as i64;
    let mm1 = rat_int(mi - 1);
    let mm12 = rat_int((mi - 1) * (mi - 2)) / rat_int(2);
    let b2_pow = |k: i32| -> Result<Expr> { b2.monomial_pow(k) };

    // (m-1) b2^{m-2} b4.
    let mut total = b2_pow(mi as i32 - 2)?
        .mul(&p4.entry(&[]))
        .scale_rat(&mm1);

    // (m-1)(m-2)/2 b2^{m-3} b3^2.
    if !mm12.is_zero() {
        let b3 = p3.entry(&[]);
        total = total.add(&b2_pow(mi as i32 - 3)?.mul(&b3.mul(&b3)).scale_rat(&mm12));

        // Mixed first-derivative group.
        let mut g3 = Expr::zero();
        let b3_expr = p3.entry(&[]);
        for a in 1..=n {
            let dxi_b3 = p3.entry(&[]).d_xi(a, XiMode::Origin, n);
            let dxi_b2 = b2.d_xi(a, XiMode::Origin, n);
            let dx_b2 = p2.entry(&[a]);
            let dx_b3 = p3.entry(&[a]);
            g3 = g3.add(&b2.mul(&dxi_b3).mul(&dx_b2));
            g3 = g3.add(&b2.mul(&dxi_b2).mul(&dx_b3));
            g3 = g3.add(
                &b3_expr
                    .mul(&dxi_b2)
                    .mul(&dx_b2)
                    .scale_rat(&rat_int(mi - 3)),
            );
        }
        let coeff = GaussRat::i().scale(&-mm12.clone());
        total = total.add(&b2_pow(mi as i32 - 4)?.mul(&g3).scale(&coeff));

        // Second-derivative group.
        let mut g4 = Expr::zero();
        let b2_sq = b2.mul(&b2);
        for a in 1..=n {
            for bb in 1..=n {
                let dxi_a = b2.d_xi(a, XiMode::Origin, n);
                let dxi_b = b2.d_xi(bb, XiMode::Origin, n);
                let dxi_ab = dxi_a.d_xi(bb, XiMode::Origin, n);
                let dx_a = p2.entry(&[a]);
                let dx_b = p2.entry(&[bb]);
                let dx_ab = p2.entry(&merge_sorted(&[a], &[bb]));
                let dxi_b_dx_a = p2.entry(&[a]).d_xi(bb, XiMode::Origin, n);
                g4 = g4.add(&b2_sq.mul(&dxi_ab).mul(&dx_ab).scale_rat(&rat_int(6)));
                g4 = g4.add(
                    &dxi_a
                        .mul(&dxi_b)
                        .mul(&dx_a)
                        .mul(&dx_b)
                        .scale_rat(&rat_int(3 * (mi - 3) * (mi - 4))),
                );
                let inner = dxi_a
                    .mul(&dxi_b)
                    .mul(&dx_ab)
                    .add(&dxi_a.mul(&dxi_b_dx_a).mul(&dx_b))
                    .add(&dxi_ab.mul(&dx_a).mul(&dx_b));
                g4 = g4.add(&b2.mul(&inner).scale_rat(&rat_int(4 * (mi - 3))));
            }
        }
        let coeff4 = -(rat_int((mi - 1) * (mi - 2)) / rat_int(24));
        total = total.add(&b2_pow(mi as i32 - 5)?.mul(&g4).scale_rat(&coeff4));
    }

    let expected = -2 * mi as i32;
    match total.xi_degree()? {
        None => {}
        Some(d) if d == expected => {}
        Some(d) => {
            return Err(Error::NonHomogeneous(format!(
                "power symbol has cotangent degree {d}, expected {expected}"
            )))
        }
    }
    Ok(total)
}

/// Independent route to the same lowest-order symbol: compose the
/// parametrix with itself `m - 2` times, tracking one more order of floor
/// each step, and read off the order `-2m` part at the base point.
pub fn residue_symbol_by_iterated_composition(b: &GradedSymbol, m: u8) -> Result<Expr> {
    if m < 2 {
        return Err(Error::Internal("iterated composition needs m >= 2".into()));
    }
    let mut c = b.clone();
    for j in 1..=(m as i32 - 2) {
        c = c.compose(b, -2 * (j + 2))?;
    }
    let part = c.part_or_zero(-2 * m as i32, 0);
    Ok(part.entry(&[]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeff::rat;
    use crate::symexpr::{JetBase, JetVar};

    fn f_var() -> Expr {
        Expr::var(JetVar::plain(JetBase::F))
    }

    #[test]
    fn multi_index_helpers() {
        assert_eq!(multi_indices_of_len(3, 2).len(), 6); // multisets {11,12,13,22,23,33}
        assert_eq!(multi_indices_up_to(2, 2).len(), 1 + 2 + 3);
        assert_eq!(multiset_factorial(&[1, 1, 2]), rat(2, 1));
        assert_eq!(multiset_factorial(&[3, 3, 3]), rat(6, 1));
        assert_eq!(multinomial_split(&[1, 1, 2], &[1, 2]), rat(2, 1));
        assert_eq!(multinomial_split(&[1, 1], &[1]), rat(2, 1));
    }

    #[test]
    fn jet_shift_and_product() {
        let n = 2;
        // f^2 as a depth-2 jet.
        let f2 = JetExpr::from_formal(&f_var().pow(2), n, 2).unwrap();
        let df = f2.d_x(1).unwrap();
        // d_1(f^2) = 2 f f_;1.
        let expected = f_var()
            .mul(&Expr::var(JetVar::new(JetBase::F, vec![1])))
            .scale_rat(&rat(2, 1));
        assert_eq!(df.entry(&[]), expected);
        // Product rule: jet(f) * jet(f) == jet(f^2) entrywise.
        let f1 = JetExpr::from_formal(&f_var(), n, 2).unwrap();
        let prod = f1.jet_mul(&f1);
        for (idx, e) in f2.entries() {
            assert_eq!(&prod.entry(idx), e, "entry {idx:?}");
        }
    }

    #[test]
    fn jet_inverse_is_two_sided() {
        let n = 2;
        let base = f_var().pow(2).mul(&Expr::xi_norm(1));
        let v = JetExpr::from_formal(&base, n, 2).unwrap();
        let w = v.jet_inverse().unwrap();
        let left = w.jet_mul(&v);
        let right = v.jet_mul(&w);
        for jet in [&left, &right] {
            assert_eq!(jet.entry(&[]), Expr::one());
            for a in 1..=n {
                assert!(jet.entry(&[a]).is_zero(), "first-order residual at {a}");
                for b in a..=n {
                    assert!(
                        jet.entry(&[a, b]).cleared_expanded(n).unwrap().is_zero(),
                        "second-order residual at [{a},{b}]"
                    );
                }
            }
        }
    }

    #[test]
    fn jet_inverse_matches_formal_reciprocal() {
        // Jets of f^{-2} |xi|^{-2} computed formally agree with the
        // inversion of the jets of f^2 |xi|^2.
        let n = 2;
        let v = JetExpr::from_formal(&f_var().pow(2).mul(&Expr::xi_norm(1)), n, 2).unwrap();
        let w = v.jet_inverse().unwrap();
        let direct = JetExpr::from_formal(
            &f_var()
                .pow(2)
                .mul(&Expr::xi_norm(1))
                .invert_monomial()
                .unwrap(),
            n,
            2,
        )
        .unwrap();
        assert!(w.equal_modulo_relations(&direct).unwrap());
    }

    #[test]
    fn compose_with_identity() {
        let n = 2;
        let one = JetExpr::from_formal(&Expr::one(), n, 2).unwrap();
        let id = GradedSymbol::new(n, vec![(0, one)], 0, true).unwrap();
        let sym = GradedSymbol::new(
            n,
            vec![
                (2, JetExpr::from_formal(&Expr::xi_norm(1), n, 2).unwrap()),
                (
                    1,
                    JetExpr::from_formal(
                        &f_var().mul(&Expr::xi(1)).scale(&GaussRat::i()),
                        n,
                        1,
                    )
                    .unwrap(),
                ),
            ],
            0,
            true,
        )
        .unwrap();
        let left = id.compose(&sym, 0).unwrap();
        let right = sym.compose(&id, 0).unwrap();
        for (order, part) in sym.parts() {
            assert!(left
                .part_or_zero(*order, part.depth)
                .equal_modulo_relations(part)
                .unwrap());
            assert!(right
                .part_or_zero(*order, part.depth)
                .equal_modulo_relations(part)
                .unwrap());
        }
    }

    #[test]
    fn compose_tracks_noncommutative_order() {
        // For multiplication operators by Clifford words the composition at
        // order 0 is the pointwise product, in operator order.
        let n = 4;
        let c1 = JetExpr::constant(Expr::cliff_word(&[1]), n, 2);
        let c2 = JetExpr::constant(Expr::cliff_word(&[2]), n, 2);
        let s1 = GradedSymbol::new(n, vec![(0, c1)], 0, true).unwrap();
        let s2 = GradedSymbol::new(n, vec![(0, c2)], 0, true).unwrap();
        let ab = s1.compose(&s2, 0).unwrap();
        let ba = s2.compose(&s1, 0).unwrap();
        assert_eq!(ab.part_or_zero(0, 2).entry(&[]), Expr::cliff_word(&[1, 2]));
        assert_eq!(
            ba.part_or_zero(0, 2).entry(&[]),
            Expr::cliff_word(&[1, 2]).neg()
        );
    }

    #[test]
    fn compose_requires_enough_floor() {
        let n = 2;
        let part = JetExpr::from_formal(&Expr::xi_norm(-1), n, 2).unwrap();
        let sym = GradedSymbol::new(n, vec![(-2, part)], -2, false).unwrap();
        // Composing two order -2 truncations down to -6 needs more orders
        // than are tracked.
        assert!(matches!(
            sym.compose(&sym, -6),
            Err(Error::InsufficientTruncation(_))
        ));
        // Down to -4 both factors are complete enough.
        assert!(sym.compose(&sym, -4).is_ok());
    }

    #[test]
    fn flat_inversion_is_geometric_series() {
        // With sigma = |xi|^2 alone (flat, unperturbed), the parametrix is
        // |xi|^{-2} and the lower orders vanish.
        let n = 2;
        let s2 = JetExpr::constant(Expr::xi_norm(1), n, 2);
        let sym = GradedSymbol::new(n, vec![(2, s2)], 0, true).unwrap();
        let inv = sym.invert().unwrap();
        assert_eq!(inv.part_or_zero(-2, 2).entry(&[]), Expr::xi_norm(-1));
        assert!(inv.part_or_zero(-3, 1).is_zero());
        assert!(inv.part_or_zero(-4, 0).is_zero());
        // Residual check: sigma . b == identity through order -2.
        let residual = sym.compose(&inv, -2).unwrap();
        assert_eq!(residual.part_or_zero(0, 0).entry(&[]), Expr::one());
        assert!(residual.part_or_zero(-1, 0).is_zero());
        assert!(residual.part_or_zero(-2, 0).is_zero());
    }

    #[test]
    fn flat_power_symbol_is_norm_power() {
        // Flat parametrix: the -(m-1) power symbol is |xi|^{-2m} exactly
        // (only the leading group contributes, with b4 = 0 ... so the
        // result must vanish for the unperturbed flat case except m = 2?).
        // With b3 = b4 = 0 every group vanishes: the residue symbol of the
        // flat Laplacian power is zero below the leading order.
        let n = 4;
        let s2 = JetExpr::constant(Expr::xi_norm(1), n, 2);
        let sym = GradedSymbol::new(n, vec![(2, s2)], 0, true).unwrap();
        let inv = sym.invert().unwrap();
        let p = power_symbol_neg(&inv, 2).unwrap();
        assert!(p.is_zero());
        let oracle = residue_symbol_by_iterated_composition(&inv, 2).unwrap();
        assert!(oracle.is_zero());
    }
}
