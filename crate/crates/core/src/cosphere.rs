//! Integration over the unit cosphere and the final residue density.
//!
//! Monomial moments over `S^{n-1}` (normalized by the sphere volume) have
//! the closed form
//!
//! `avg[ xi_1^{c_1} ... xi_n^{c_n} ] = prod_j (c_j - 1)!! / prod_{k=1..K} (n + 2k - 2)`,
//!
//! with `K = (sum_j c_j) / 2`, vanishing whenever any exponent is odd.
//! [`mc_moment_oracle`] estimates the same averages by sampling normalized
//! Gaussians — an independent numeric check with a reported standard
//! error.
//!
//! [`trace_integrate`] takes a homogeneous symbol expression of cotangent
//! degree `-2m` at the base point, takes the Clifford trace (keeping the
//! identity component; the factor `tr[id] = 2^m` is *not* folded in),
//! restricts `|xi| = 1` and averages the cotangent monomials, producing the
//! residue [`Density`]. Densities carry neither the `2^m` trace factor nor
//! the cosphere volume; both belong to the presentation layer.

use crate::coeff::{rat_int, GaussRat, Rat};
use crate::symexpr::{Expr, JetBase, TermKey};
use crate::{Error, Result};
use num::{One, Zero};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Normalized moment of a cotangent monomial over the unit sphere
/// `S^{n-1}`: the average of `prod xi_{indices[k]}`.
pub fn sphere_moment(indices: &[u8], n: u8) -> Rat {
    let mut counts = std::collections::BTreeMap::new();
    for &i in indices {
        *counts.entry(i).or_insert(0u32) += 1;
    }
    if counts.values().any(|&c| c % 2 == 1) {
        return Rat::zero();
    }
    let total: u32 = counts.values().sum();
    let big_k = total / 2;
    let mut num = Rat::one();
    for &c in counts.values() {
        // (c - 1)!! for even c.
        let mut k = c as i64 - 1;
        while k >= 1 {
            num *= rat_int(k);
            k -= 2;
        }
    }
    let mut den = Rat::one();
    for k in 1..=big_k as i64 {
        den *= rat_int(n as i64 + 2 * k - 2);
    }
    num / den
}

/// A Monte-Carlo estimate of a sphere moment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McMoment {
    pub estimate: f64,
    pub std_error: f64,
    pub samples: u64,
}

/// Estimate the normalized moment by averaging over uniform points of
/// `S^{n-1}` (normalized Gaussian vectors).
pub fn mc_moment_oracle(indices: &[u8], n: u8, samples: u64, seed: u64) -> McMoment {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = n as usize;
    let mut sum = 0.0f64;
    let mut sum_sq = 0.0f64;
    for _ in 0..samples {
        let mut v = vec![0.0f64; dim];
        let mut norm_sq = 0.0;
        for slot in v.iter_mut() {
            let g: f64 = StandardNormal.sample(&mut rng);
            *slot = g;
            norm_sq += g * g;
        }
        let norm = norm_sq.sqrt();
        let mut prod = 1.0;
        for &i in indices {
            prod *= v[i as usize - 1] / norm;
        }
        sum += prod;
        sum_sq += prod * prod;
    }
    let mean = sum / samples as f64;
    let var = (sum_sq / samples as f64 - mean * mean).max(0.0);
    McMoment {
        estimate: mean,
        std_error: (var / samples as f64).sqrt(),
        samples,
    }
}

/// A residue density at the base point: a Clifford-free, cotangent-free
/// expression in curvature entries and perturbation jets. Excludes the
/// `tr[id] = 2^m` factor and the cosphere volume.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Density {
    pub m: u8,
    pub terms: Expr,
}

/// Clifford-trace and cosphere-average a homogeneous expression of
/// cotangent degree `-2m`.
pub fn trace_integrate(e: &Expr, m: u8) -> Result<Density> {
    let n = 2 * m;
    let mut out = Expr::zero();
    for (key, coeff) in e.terms() {
        if key.xi_degree() != -2 * m as i32 {
            return Err(Error::NonHomogeneous(format!(
                "term {key} has cotangent degree {}, expected {}",
                key.xi_degree(),
                -2 * m as i32
            )));
        }
        if !key.cliff.is_empty() {
            continue; // traceless against the identity component
        }
        for (var, _) in &key.scalars {
            match var.base {
                JetBase::MetricInv(..) | JetBase::ConnCoeff(..) => {
                    return Err(Error::Internal(format!(
                        "metric or connection variable {var} survived to integration"
                    )))
                }
                _ => {}
            }
        }
        let moment = sphere_moment(&key.xi, n);
        if moment.is_zero() {
            continue;
        }
        let integrated = TermKey {
            scalars: key.scalars.clone(),
            xi: Vec::new(),
            xi_norm_pow: 0, // |xi| = 1 on the sphere
            x_norm_pow: key.x_norm_pow,
            cliff: Vec::new(),
        };
        out.add_term(integrated, coeff.scale(&moment));
    }
    for (key, coeff) in out.terms() {
        if !coeff.is_real() {
            return Err(Error::ImaginaryResidue(format!(
                "coefficient of {key} is {coeff}"
            )));
        }
    }
    Ok(Density { m, terms: out })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeff::rat;
    use crate::symexpr::{Expr, JetVar};

    #[test]
    fn closed_form_moments() {
        // Frozen values: avg[xi_j^2] = 1/n.
        assert_eq!(sphere_moment(&[1, 1], 4), rat(1, 4));
        assert_eq!(sphere_moment(&[3, 3], 6), rat(1, 6));
        // avg[xi_1 xi_1 xi_2 xi_2] over S^3 = 1/24.
        assert_eq!(sphere_moment(&[1, 1, 2, 2], 4), rat(1, 24));
        // avg[xi_1^4] over S^3 = 3!!/ (4*6) = 3/24 = 1/8.
        assert_eq!(sphere_moment(&[1, 1, 1, 1], 4), rat(1, 8));
        // Odd exponents vanish.
        assert_eq!(sphere_moment(&[1, 1, 2], 4), rat(0, 1));
        assert_eq!(sphere_moment(&[2], 4), rat(0, 1));
        // Empty monomial: the normalized area, 1.
        assert_eq!(sphere_moment(&[], 4), rat(1, 1));
    }

    #[test]
    fn second_moments_sum_to_one() {
        for n in [4u8, 6, 8] {
            let mut total = Rat::zero();
            for j in 1..=n {
                total += sphere_moment(&[j, j], n);
            }
            assert_eq!(total, rat(1, 1));
        }
    }

    #[test]
    fn mc_matches_closed_form() {
        // Cheap smoke version of the acceptance criterion: 10^5 samples,
        // 4 sigma band.
        for (indices, n) in [(vec![1u8, 1], 4u8), (vec![1, 1, 2, 2], 4), (vec![2, 2], 6)] {
            let exact = sphere_moment(&indices, n);
            let exact_f = exact.numer().to_string().parse::<f64>().unwrap()
                / exact.denom().to_string().parse::<f64>().unwrap();
            let mc = mc_moment_oracle(&indices, n, 100_000, 42);
            assert!(
                (mc.estimate - exact_f).abs() <= 4.0 * mc.std_error.max(1e-12),
                "moment {indices:?} n={n}: {} vs {exact_f} +- {}",
                mc.estimate,
                mc.std_error
            );
        }
    }

    #[test]
    fn trace_integration_drops_clifford_and_averages() {
        let m = 2u8;
        // (xi_1^2 - on-sphere constant) |xi|^{-6}: degree -2m with mixed
        // monomials; Clifford words drop.
        let f1 = Expr::var(JetVar::new(crate::symexpr::JetBase::F, vec![1]));
        let e = Expr::xi(1)
            .mul(&Expr::xi(1))
            .mul(&Expr::xi_norm(-3))
            .mul(&f1)
            .add(&Expr::cliff_word(&[1, 2]).mul(&Expr::xi_norm(-2)));
        let density = trace_integrate(&e, m).unwrap();
        let expected = f1.scale_rat(&rat(1, 4));
        assert_eq!(density.terms, expected);
        // Inhomogeneous input is refused.
        let bad = Expr::xi_norm(-2).add(&Expr::xi_norm(-1));
        assert!(trace_integrate(&bad, m).is_err());
        // A leftover imaginary coefficient is refused.
        let imag = Expr::xi_norm(-2).scale(&GaussRat::i());
        assert!(matches!(
            trace_integrate(&imag, m),
            Err(Error::ImaginaryResidue(_))
        ));
    }
}
