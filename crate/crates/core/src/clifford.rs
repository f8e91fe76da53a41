//! Clifford algebra support: word normalization, traces, and a faithful
//! matrix model.
//!
//! Generators `c_1, ..., c_n` obey `c_i c_j + c_j c_i = -2 delta_ij`, so a
//! word in the generators normalizes to `sign * c_{i_1} ... c_{i_k}` with
//! strictly increasing indices: swapping distinct neighbours costs a sign,
//! and an adjacent equal pair collapses to `-1`. On the normalized basis the
//! trace functional is simply "coefficient of the empty word times tr[id]":
//! every nonempty normalized word is traceless.
//!
//! The matrix model realizes the generators on `2^m x 2^m` matrices over the
//! Gaussian rationals via Pauli tensor products,
//! `c_{2k-1} = i Z^(k-1) (x) X (x) I^(m-k)` and
//! `c_{2k} = i Z^(k-1) (x) Y (x) I^(m-k)`,
//! which squares to `-1` and anticommutes pairwise; it exists purely to
//! cross-check the combinatorial normalization against honest matrices.

use crate::coeff::GaussRat;
use crate::symexpr::{Expr, JetBase, JetVar, TermKey};
use crate::{Error, Result};

/// Normalize a Clifford word: returns `(sign, strictly increasing word)`.
///
/// Insertion sort with a sign per transposition; equal adjacent generators
/// annihilate into `-1`. Index validity is the caller's concern (the word
/// indices are already range-checked wherever they are minted).
pub fn normalize_word(word: &[u8]) -> (i8, Vec<u8>) {
    let mut sign = 1i8;
    let mut out: Vec<u8> = Vec::with_capacity(word.len());
    for &g in word {
        let mut pos = out.len();
        while pos > 0 && out[pos - 1] > g {
            pos -= 1;
        }
        if (out.len() - pos) % 2 == 1 {
            sign = -sign;
        }
        if pos > 0 && out[pos - 1] == g {
            // c_g c_g = -1: drop both generators.
            out.remove(pos - 1);
            sign = -sign;
        } else {
            out.insert(pos, g);
        }
    }
    (sign, out)
}

/// Range-checked variant of [`normalize_word`] for externally supplied words.
pub fn normalize_word_checked(word: &[u8], n: u8) -> Result<(i8, Vec<u8>)> {
    for &g in word {
        if g == 0 || g > n {
            return Err(Error::IndexOutOfRange { index: g, n });
        }
    }
    Ok(normalize_word(word))
}

/// Keep only the part of an expression proportional to the identity: terms
/// carrying a nonempty (normalized) Clifford word are traceless and drop.
/// The result is the coefficient of `tr[id]`, i.e. the caller multiplies by
/// `2^m` when a numeric trace is wanted.
pub fn trace_expr(e: &Expr) -> Expr {
    let mut out = Expr::zero();
    for (key, coeff) in e.terms() {
        if key.cliff.is_empty() {
            out.add_term(key.clone(), coeff.clone());
        }
    }
    out
}

/// The Clifford element `c(X) = sum_i X^i c_i` as an expression.
pub fn cx(n: u8) -> Expr {
    let mut e = Expr::zero();
    for i in 1..=n {
        let key = TermKey::monomial(vec![(JetVar::plain(JetBase::Xcomp(i)), 1)], vec![i]);
        e.add_term(key, GaussRat::one());
    }
    e
}

/// The coordinate derivative `d^deriv c(X) = sum_i (d^deriv X^i) c_i`.
pub fn cx_deriv(n: u8, deriv: &[u8]) -> Expr {
    let mut e = Expr::zero();
    for i in 1..=n {
        let key = TermKey::monomial(vec![(JetVar::new(JetBase::Xcomp(i), deriv.to_vec()), 1)], vec![i]);
        e.add_term(key, GaussRat::one());
    }
    e
}

/// Dense square matrix over the Gaussian rationals (row-major).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CMatrix {
    pub dim: usize,
    pub data: Vec<GaussRat>,
}

impl CMatrix {
    pub fn zero(dim: usize) -> Self {
        CMatrix { dim, data: vec![GaussRat::zero(); dim * dim] }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = CMatrix::zero(dim);
        for k in 0..dim {
            m.data[k * dim + k] = GaussRat::one();
        }
        m
    }

    pub fn at(&self, r: usize, c: usize) -> &GaussRat {
        &self.data[r * self.dim + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: GaussRat) {
        self.data[r * self.dim + c] = v;
    }

    pub fn add(&self, other: &CMatrix) -> CMatrix {
        assert_eq!(self.dim, other.dim);
        CMatrix {
            dim: self.dim,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn scale(&self, s: &GaussRat) -> CMatrix {
        CMatrix { dim: self.dim, data: self.data.iter().map(|a| a * s).collect() }
    }

    pub fn mul(&self, other: &CMatrix) -> CMatrix {
        assert_eq!(self.dim, other.dim);
        let d = self.dim;
        let mut out = CMatrix::zero(d);
        for r in 0..d {
            for k in 0..d {
                let a = self.at(r, k);
                if a.is_zero() {
                    continue;
                }
                for c in 0..d {
                    let b = other.at(k, c);
                    if b.is_zero() {
                        continue;
                    }
                    let cur = out.at(r, c) + &(a * b);
                    out.set(r, c, cur);
                }
            }
        }
        out
    }

    pub fn kron(&self, other: &CMatrix) -> CMatrix {
        let d = self.dim * other.dim;
        let mut out = CMatrix::zero(d);
        for r1 in 0..self.dim {
            for c1 in 0..self.dim {
                let a = self.at(r1, c1);
                if a.is_zero() {
                    continue;
                }
                for r2 in 0..other.dim {
                    for c2 in 0..other.dim {
                        let b = other.at(r2, c2);
                        if b.is_zero() {
                            continue;
                        }
                        out.set(r1 * other.dim + r2, c1 * other.dim + c2, a * b);
                    }
                }
            }
        }
        out
    }

    pub fn trace(&self) -> GaussRat {
        let mut t = GaussRat::zero();
        for k in 0..self.dim {
            t = &t + self.at(k, k);
        }
        t
    }
}

fn pauli_x() -> CMatrix {
    let mut m = CMatrix::zero(2);
    m.set(0, 1, GaussRat::one());
    m.set(1, 0, GaussRat::one());
    m
}

fn pauli_y() -> CMatrix {
    let mut m = CMatrix::zero(2);
    m.set(0, 1, -GaussRat::i());
    m.set(1, 0, GaussRat::i());
    m
}

fn pauli_z() -> CMatrix {
    let mut m = CMatrix::zero(2);
    m.set(0, 0, GaussRat::one());
    m.set(1, 1, -GaussRat::one());
    m
}

/// Matrix model generator `c_j` in dimension `n = 2m`, a `2^m x 2^m` matrix.
pub fn gamma(m: u8, j: u8) -> Result<CMatrix> {
    let n = 2 * m;
    if j == 0 || j > n {
        return Err(Error::IndexOutOfRange { index: j, n });
    }
    // j = 2k-1 -> Z^(k-1) (x) X (x) I^(m-k), j = 2k -> Z^(k-1) (x) Y (x) I^(m-k),
    // all times i so the square is -1.
    let k = j.div_ceil(2);
    let mid = if j % 2 == 1 { pauli_x() } else { pauli_y() };
    let mut acc = CMatrix::identity(1);
    for _ in 0..(k - 1) {
        acc = acc.kron(&pauli_z());
    }
    acc = acc.kron(&mid);
    for _ in 0..(m - k) {
        acc = acc.kron(&CMatrix::identity(2));
    }
    Ok(acc.scale(&GaussRat::i()))
}

/// Evaluate the Clifford content of an expression in the matrix model.
///
/// `scalar_of` evaluates the commuting part of each term (jet variables,
/// norm powers, cotangent coordinates) to a Gaussian rational; the Clifford
/// word is realized through [`gamma`] and the results are summed into one
/// `2^m x 2^m` matrix.
pub fn eval_expr_matrix<F>(e: &Expr, m: u8, mut scalar_of: F) -> Result<CMatrix>
where
    F: FnMut(&TermKey, &GaussRat) -> Result<GaussRat>,
{
    let dim = 1usize << m;
    let mut acc = CMatrix::zero(dim);
    for (key, coeff) in e.terms() {
        let s = scalar_of(key, coeff)?;
        if s.is_zero() {
            continue;
        }
        let mut word = CMatrix::identity(dim);
        for &g in &key.cliff {
            word = word.mul(&gamma(m, g)?);
        }
        acc = acc.add(&word.scale(&s));
    }
    Ok(acc)
}
