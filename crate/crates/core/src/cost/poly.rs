//! Polynomial feature expansion.
//!
//! Monomials are emitted by ascending total degree. Within one degree the
//! pure powers `x_i^d` come first in feature order, followed by the mixed
//! monomials in lexicographic order of their (non-decreasing) index tuples.
//! Degree 2 over `(b, s, h)` therefore yields
//! `[1, b, s, h, b², s², h², bs, bh, sh]`.

use crate::error::{Error, Result};

/// Index tuples (non-decreasing) of every monomial up to `degree`, in output order.
pub fn monomial_terms(n_features: usize, degree: u32) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for d in 1..=degree as usize {
        let mut pure = Vec::new();
        let mut mixed = Vec::new();
        let mut combo = vec![0usize; d];
        loop {
            if combo.iter().all(|&i| i == combo[0]) {
                pure.push(combo.clone());
            } else {
                mixed.push(combo.clone());
            }
            // next combination with replacement, lexicographic
            let mut pos = d;
            while pos > 0 && combo[pos - 1] == n_features - 1 {
                pos -= 1;
            }
            if pos == 0 {
                break;
            }
            let v = combo[pos - 1] + 1;
            for c in &mut combo[pos - 1..] {
                *c = v;
            }
        }
        out.extend(pure);
        out.extend(mixed);
    }
    out
}

pub fn polynomial_expand(features: &[f64], degree: u32) -> Result<Vec<f64>> {
    if features.is_empty() {
        return Err(Error::InvalidInput("polynomial_expand: empty feature vector".into()));
    }
    if degree == 0 {
        return Err(Error::InvalidInput("polynomial_expand: degree must be >= 1".into()));
    }
    Ok(monomial_terms(features.len(), degree)
        .iter()
        .map(|term| term.iter().map(|&i| features[i]).product())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degree_one_is_identity_with_bias() {
        assert_eq!(
            polynomial_expand(&[2.0, 3.0, 4.0], 1).unwrap(),
            vec![1.0, 2.0, 3.0, 4.0]
        );
    }

    #[test]
    fn degree_two_order() {
        assert_eq!(polynomial_expand(&[1.0, 1.0, 1.0], 2).unwrap(), vec![1.0; 10]);
        assert_eq!(
            polynomial_expand(&[2.0, 3.0, 4.0], 2).unwrap(),
            vec![1.0, 2.0, 3.0, 4.0, 4.0, 9.0, 16.0, 6.0, 8.0, 12.0]
        );
    }

    #[test]
    fn term_counts_match_binomial() {
        // C(n + d, d) monomials of total degree <= d in n variables
        assert_eq!(monomial_terms(3, 3).len(), 20);
        assert_eq!(monomial_terms(2, 2).len(), 6);
        assert_eq!(monomial_terms(1, 4).len(), 5);
    }

    #[test]
    fn errors() {
        assert!(polynomial_expand(&[], 2).is_err());
        assert!(polynomial_expand(&[1.0], 0).is_err());
    }
}
