//! Exact scalars: rationals and Gaussian rationals.
//!
//! All coefficients in the pipeline live in `Q(i)`. Composition of
//! pseudodifferential symbols introduces factors of `(-i)^|alpha|`, symbol
//! inversion introduces `i`s through first-order terms, and the final
//! residue density must come out real; keeping the imaginary part exact is
//! what lets the pipeline assert that instead of hoping.

use num::{BigInt, BigRational, One, Signed, Zero};
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

/// Exact rational scalar.
pub type Rat = BigRational;

/// Convenience constructor for small rationals.
pub fn rat(num: i64, den: i64) -> Rat {
    Rat::new(BigInt::from(num), BigInt::from(den))
}

/// Integer rational.
pub fn rat_int(num: i64) -> Rat {
    Rat::from_integer(BigInt::from(num))
}

/// `r^k` for signed `k`; `k < 0` requires `r != 0`.
pub fn rat_pow(r: &Rat, k: i32) -> Rat {
    if k == 0 {
        return Rat::one();
    }
    let base = if k > 0 { r.clone() } else { r.recip() };
    let mut acc = Rat::one();
    for _ in 0..k.unsigned_abs() {
        acc *= &base;
    }
    acc
}

/// `k!` as a rational.
pub fn factorial(k: u8) -> Rat {
    let mut acc = BigInt::one();
    for j in 2..=u32::from(k) {
        acc *= j;
    }
    Rat::from_integer(acc)
}

/// Binomial coefficient `C(n, k)` as a rational.
pub fn binomial(n: u8, k: u8) -> Rat {
    if k > n {
        return Rat::zero();
    }
    let mut acc = BigInt::one();
    for j in 0..u32::from(k) {
        acc *= u32::from(n) - j;
    }
    factorial(k).recip() * Rat::from_integer(acc)
}

/// A Gaussian rational `re + im * i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GaussRat {
    pub re: Rat,
    pub im: Rat,
}

impl GaussRat {
    pub fn zero() -> Self {
        GaussRat { re: Rat::zero(), im: Rat::zero() }
    }

    pub fn one() -> Self {
        GaussRat { re: Rat::one(), im: Rat::zero() }
    }

    /// The imaginary unit.
    pub fn i() -> Self {
        GaussRat { re: Rat::zero(), im: Rat::one() }
    }

    pub fn from_int(v: i64) -> Self {
        GaussRat { re: rat_int(v), im: Rat::zero() }
    }

    pub fn from_rat(re: Rat) -> Self {
        GaussRat { re, im: Rat::zero() }
    }

    pub fn rational(num: i64, den: i64) -> Self {
        GaussRat { re: rat(num, den), im: Rat::zero() }
    }

    /// `i^k` (also for negative `k`, since `i^-1 = -i`).
    pub fn i_pow(k: i32) -> Self {
        match k.rem_euclid(4) {
            0 => GaussRat::one(),
            1 => GaussRat::i(),
            2 => -GaussRat::one(),
            _ => -GaussRat::i(),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.re.is_zero() && self.im.is_zero()
    }

    pub fn is_real(&self) -> bool {
        self.im.is_zero()
    }

    /// Multiplicative inverse; `None` for zero.
    pub fn inv(&self) -> Option<Self> {
        let norm = &self.re * &self.re + &self.im * &self.im;
        if norm.is_zero() {
            return None;
        }
        Some(GaussRat { re: &self.re / &norm, im: -(&self.im / &norm) })
    }

    pub fn scale(&self, r: &Rat) -> Self {
        GaussRat { re: &self.re * r, im: &self.im * r }
    }
}

impl Add for &GaussRat {
    type Output = GaussRat;
    fn add(self, other: &GaussRat) -> GaussRat {
        GaussRat { re: &self.re + &other.re, im: &self.im + &other.im }
    }
}

impl Sub for &GaussRat {
    type Output = GaussRat;
    fn sub(self, other: &GaussRat) -> GaussRat {
        GaussRat { re: &self.re - &other.re, im: &self.im - &other.im }
    }
}

impl Mul for &GaussRat {
    type Output = GaussRat;
    fn mul(self, other: &GaussRat) -> GaussRat {
        GaussRat {
            re: &self.re * &other.re - &self.im * &other.im,
            im: &self.re * &other.im + &self.im * &other.re,
        }
    }
}

impl Neg for GaussRat {
    type Output = GaussRat;
    fn neg(self) -> GaussRat {
        GaussRat { re: -self.re, im: -self.im }
    }
}

impl Neg for &GaussRat {
    type Output = GaussRat;
    fn neg(self) -> GaussRat {
        GaussRat { re: -self.re.clone(), im: -self.im.clone() }
    }
}

impl fmt::Display for GaussRat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_zero() {
            return write!(f, "0");
        }
        if self.im.is_zero() {
            return write!(f, "{}", self.re);
        }
        let im_part = |g: &mut fmt::Formatter<'_>, im: &Rat, lead: bool| -> fmt::Result {
            let mag = im.abs();
            let sign = if im.is_negative() { "-" } else if lead { "" } else { "+" };
            if mag.is_one() {
                write!(g, "{sign}i")
            } else {
                write!(g, "{sign}{mag}i")
            }
        };
        if self.re.is_zero() {
            return im_part(f, &self.im, true);
        }
        write!(f, "{}", self.re)?;
        im_part(f, &self.im, false)
    }
}
