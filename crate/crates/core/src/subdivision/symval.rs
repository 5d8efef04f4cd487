//! Exact scalars of the form `c0 + Σ_n c_n·β(n)`.
//!
//! `β(n) = (1/n)(5/8 − (3/8 + cos(2π/n)/4)²)` is the Loop even-vertex weight.
//! It is rational exactly for valences 3, 4, 6 (3/16, 31/256, 1/16) and
//! irrational otherwise. Keeping the irrational β's symbolic lets the stencil
//! constraint solver run entirely over the rationals: constraint matrices are
//! rational, so right-hand sides and solutions stay linear in the β's, and a
//! value is exactly zero iff every coefficient is zero (1 and the β's of
//! distinct irregular valences are linearly independent over ℚ).

use std::collections::BTreeMap;
use std::f64::consts::PI;

use num::{BigRational, ToPrimitive, Zero};

use crate::sparse::Rat;

/// The Loop even-vertex weight β(n) as a float.
pub fn beta_f64(n: usize) -> f64 {
    let c = 0.375 + 0.25 * (2.0 * PI / n as f64).cos();
    (0.625 - c * c) / n as f64
}

/// β(n) as an exact rational, for the valences where it is one.
pub fn beta_rational(n: usize) -> Option<Rat> {
    let r = |p: i64, q: i64| Some(BigRational::new(p.into(), q.into()));
    match n {
        3 => r(3, 16),
        4 => r(31, 256),
        6 => r(1, 16),
        _ => None,
    }
}

/// Exact value `c0·1 + Σ c_n·β(n)` over irregular valences `n`.
///
/// Key 0 holds the rational part; any other key `n` holds the coefficient of
/// β(n) with n a valence for which β is irrational.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SymVal {
    parts: BTreeMap<usize, Rat>,
}

impl SymVal {
    pub fn zero() -> Self {
        SymVal::default()
    }

    pub fn from_rat(r: Rat) -> Self {
        let mut parts = BTreeMap::new();
        if !r.is_zero() {
            parts.insert(0, r);
        }
        SymVal { parts }
    }

    pub fn from_ratio(p: i64, q: i64) -> Self {
        Self::from_rat(BigRational::new(p.into(), q.into()))
    }

    /// `coeff · β(n)`; folds into the rational part when β(n) is rational.
    pub fn beta_term(n: usize, coeff: Rat) -> Self {
        if coeff.is_zero() {
            return Self::zero();
        }
        match beta_rational(n) {
            Some(b) => Self::from_rat(coeff * b),
            None => {
                let mut parts = BTreeMap::new();
                parts.insert(n, coeff);
                SymVal { parts }
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        self.parts.is_empty()
    }

    pub fn is_rational(&self) -> bool {
        self.parts.keys().all(|&k| k == 0)
    }

    pub fn into_rational(self) -> Option<Rat> {
        if self.parts.is_empty() {
            return Some(Rat::zero());
        }
        if self.is_rational() {
            self.parts.into_values().next()
        } else {
            None
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut parts = self.parts.clone();
        for (k, v) in &other.parts {
            let slot = parts.entry(*k).or_insert_with(Rat::zero);
            *slot += v;
            if slot.is_zero() {
                parts.remove(k);
            }
        }
        SymVal { parts }
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.neg())
    }

    pub fn neg(&self) -> Self {
        SymVal {
            parts: self.parts.iter().map(|(k, v)| (*k, -v.clone())).collect(),
        }
    }

    /// Scale by an exact rational factor.
    pub fn scale(&self, factor: &Rat) -> Self {
        if factor.is_zero() {
            return Self::zero();
        }
        SymVal {
            parts: self
                .parts
                .iter()
                .map(|(k, v)| (*k, v.clone() * factor.clone()))
                .collect(),
        }
    }

    /// Component keys with a nonzero coefficient (0 = rational part, n = β(n)).
    pub fn component_keys(&self) -> impl Iterator<Item = usize> + '_ {
        self.parts.keys().copied()
    }

    /// Coefficient of the given component (0 = rational part, n = β(n)).
    pub fn component(&self, key: usize) -> Rat {
        self.parts.get(&key).cloned().unwrap_or_else(Rat::zero)
    }

    /// Single-component value `coeff · unit(key)`.
    pub fn component_term(key: usize, coeff: Rat) -> Self {
        if key == 0 {
            Self::from_rat(coeff)
        } else {
            let mut parts = BTreeMap::new();
            if !coeff.is_zero() {
                parts.insert(key, coeff);
            }
            SymVal { parts }
        }
    }

    pub fn to_f64(&self) -> f64 {
        self.parts
            .iter()
            .map(|(&k, v)| {
                let unit = if k == 0 { 1.0 } else { beta_f64(k) };
                v.to_f64().expect("finite rational") * unit
            })
            .sum()
    }

    /// Compact text form for the stencil table: terms `p/q` (rational part)
    /// and `b<n>:p/q` (coefficient of β(n)) joined by `+`; zero is `0`.
    pub fn to_table_string(&self) -> String {
        if self.parts.is_empty() {
            return "0".to_string();
        }
        let mut out = String::new();
        for (i, (&k, v)) in self.parts.iter().enumerate() {
            if i > 0 {
                out.push('+');
            }
            if k != 0 {
                out.push('b');
                out.push_str(&k.to_string());
                out.push(':');
            }
            out.push_str(&v.to_string());
        }
        out
    }

    /// Parses the `to_table_string` format.
    pub fn from_table_string(s: &str) -> Option<SymVal> {
        let mut val = SymVal::zero();
        if s == "0" {
            return Some(val);
        }
        for term in s.split('+') {
            let (key, body) = match term.strip_prefix('b') {
                Some(rest) => {
                    let (n, body) = rest.split_once(':')?;
                    (n.parse::<usize>().ok()?, body)
                }
                None => (0, term),
            };
            let rat: Rat = body.parse().ok()?;
            val = val.add(&SymVal::component_term(key, rat));
        }
        Some(val)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn beta_rational_matches_formula() {
        for n in [3usize, 4, 6] {
            let exact = beta_rational(n).unwrap().to_f64().unwrap();
            assert!((exact - beta_f64(n)).abs() < 1e-15);
        }
        assert!(beta_rational(5).is_none());
        // Valence 6 gives the textbook 1/16 neighbor weight.
        assert_eq!(beta_rational(6).unwrap(), BigRational::new(1.into(), 16.into()));
    }

    #[test]
    fn symbolic_arithmetic_cancels_exactly() {
        let a = SymVal::beta_term(5, BigRational::new(2.into(), 3.into()));
        let b = a.neg();
        assert!(a.add(&b).is_zero());
        assert!(!a.is_rational());
        let c = SymVal::beta_term(4, BigRational::new(7.into(), 2.into()));
        assert!(c.is_rational(), "β(4) folds into the rational part");
    }
}
