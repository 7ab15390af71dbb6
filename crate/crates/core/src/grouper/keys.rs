//! Mixed-radix unit keys.
//!
//! With the active covariates ordered by non-decreasing arity `h_0 ≤ … ≤ h_{m-1}`,
//! a unit with codes `a_k` gets
//!
//! ```text
//! b      = Σ a_k · h_k^k
//! b_plus = t + Σ a_k · h_k^(k+1)
//! ```
//!
//! Both are injective: place `k` outweighs the largest value all lower places
//! can sum to, because every lower arity is at most `h_k`. Keys are `u64`
//! when the largest possible `b_plus` fits and arbitrary width otherwise.

use std::collections::HashMap;
use std::hash::Hash;

use num_bigint::BigUint;
use num_traits::{One, Zero};

use super::ActiveSet;
use crate::dataset::Dataset;
use crate::scalar::Real;

/// One key per unit, in either machine or arbitrary width.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum KeyColumn {
    Narrow(Vec<u64>),
    Wide(Vec<BigUint>),
}

impl KeyColumn {
    pub fn len(&self) -> usize {
        match self {
            KeyColumn::Narrow(v) => v.len(),
            KeyColumn::Wide(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, i: usize) -> BigUint {
        match self {
            KeyColumn::Narrow(v) => BigUint::from(v[i]),
            KeyColumn::Wide(v) => v[i].clone(),
        }
    }

    pub fn is_narrow(&self) -> bool {
        matches!(self, KeyColumn::Narrow(_))
    }

    /// Occurrence count of each entry's key among the entries where `mask` is set.
    fn counts(&self, mask: &[bool]) -> Vec<usize> {
        fn go<K: Hash + Eq>(keys: &[K], mask: &[bool]) -> Vec<usize> {
            let mut tally: HashMap<&K, usize> = HashMap::new();
            for (k, _) in keys.iter().zip(mask).filter(|(_, &m)| m) {
                *tally.entry(k).or_default() += 1;
            }
            keys.iter().zip(mask).map(|(k, &m)| if m { tally[k] } else { 0 }).collect()
        }
        match self {
            KeyColumn::Narrow(v) => go(v, mask),
            KeyColumn::Wide(v) => go(v, mask),
        }
    }
}

/// Per-unit keys plus, once counted, per-unit occurrence counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnitKeys {
    pub b: KeyColumn,
    pub b_plus: KeyColumn,
    /// Occurrences of each unit's `b` among considered units (0 if not considered).
    pub c: Vec<usize>,
    /// Occurrences of each unit's `b_plus` among considered units.
    pub c_plus: Vec<usize>,
}

/// Active covariates ordered by arity (stable), as (covariate index, arity).
fn radix_order<F: Real>(d: &Dataset<F>, active: &ActiveSet) -> Vec<(usize, u32)> {
    let mut order: Vec<(usize, u32)> = active.iter().map(|k| (k, d.arities()[k])).collect();
    order.sort_by_key(|&(_, h)| h);
    order
}

/// Place weights for `b` and `b_plus`, or `None` when `b_plus` can exceed `u64`.
fn narrow_weights(order: &[(usize, u32)]) -> Option<(Vec<u64>, Vec<u64>)> {
    let mut w = Vec::with_capacity(order.len());
    let mut w_plus = Vec::with_capacity(order.len());
    let mut max_plus: u64 = 1;
    for (k, &(_, h)) in order.iter().enumerate() {
        let h = u64::from(h);
        let wk = h.checked_pow(k as u32)?;
        let wk_plus = wk.checked_mul(h)?;
        max_plus = max_plus.checked_add(h.saturating_sub(1).checked_mul(wk_plus)?)?;
        w.push(wk);
        w_plus.push(wk_plus);
    }
    Some((w, w_plus))
}

/// Keys for the listed units only, in the order given.
pub(crate) fn keys_for<F: Real>(d: &Dataset<F>, active: &ActiveSet, units: &[usize]) -> (KeyColumn, KeyColumn) {
    let order = radix_order(d, active);
    if let Some((w, w_plus)) = narrow_weights(&order) {
        let mut b = Vec::with_capacity(units.len());
        let mut bp = Vec::with_capacity(units.len());
        for &u in units {
            let row = d.row(u);
            let (mut x, mut y) = (0u64, u64::from(d.is_treated(u)));
            for (i, &(k, _)) in order.iter().enumerate() {
                let a = u64::from(row[k]);
                x += a * w[i];
                y += a * w_plus[i];
            }
            b.push(x);
            bp.push(y);
        }
        (KeyColumn::Narrow(b), KeyColumn::Narrow(bp))
    } else {
        let mut w = Vec::with_capacity(order.len());
        let mut w_plus = Vec::with_capacity(order.len());
        for (i, &(_, h)) in order.iter().enumerate() {
            let wk = BigUint::from(h).pow(i as u32);
            w_plus.push(&wk * h);
            w.push(wk);
        }
        let mut b = Vec::with_capacity(units.len());
        let mut bp = Vec::with_capacity(units.len());
        for &u in units {
            let row = d.row(u);
            let mut x = BigUint::zero();
            let mut y = if d.is_treated(u) { BigUint::one() } else { BigUint::zero() };
            for (i, &(k, _)) in order.iter().enumerate() {
                let a = row[k];
                if a != 0 {
                    x += &w[i] * a;
                    y += &w_plus[i] * a;
                }
            }
            b.push(x);
            bp.push(y);
        }
        (KeyColumn::Wide(b), KeyColumn::Wide(bp))
    }
}

/// `b` and `b_plus` for every unit of `d`; counts are left empty.
pub fn mixed_radix_keys<F: Real>(d: &Dataset<F>, active: &ActiveSet) -> UnitKeys {
    let all: Vec<usize> = (0..d.n_units()).collect();
    let (b, b_plus) = keys_for(d, active, &all);
    UnitKeys { b, b_plus, c: Vec::new(), c_plus: Vec::new() }
}

/// Counts keys over the considered units and flags the matchable ones.
///
/// A considered unit is matchable iff `c ≠ c_plus`: its covariate key also
/// occurs with the other treatment value. Units outside `considered` get
/// zero counts and `false`.
pub fn count_and_flag(keys: &mut UnitKeys, considered: &[usize]) -> Vec<bool> {
    let n = keys.b.len();
    let mut mask = vec![false; n];
    for &u in considered {
        mask[u] = true;
    }
    keys.c = keys.b.counts(&mask);
    keys.c_plus = keys.b_plus.counts(&mask);
    (0..n).map(|u| mask[u] && keys.c[u] != keys.c_plus[u]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table1() -> Dataset<f64> {
        Dataset::from_parts(
            vec!["v1".into(), "v2".into()],
            vec![2, 3],
            vec![0, 2, 1, 1, 1, 0, 1, 1],
            vec![false, false, true, true],
            vec![0.0; 4],
            None,
            None,
        )
        .unwrap()
    }

    #[test]
    fn table1_keys() {
        let d = table1();
        let mut keys = mixed_radix_keys(&d, &ActiveSet::all(2));
        assert_eq!(keys.b, KeyColumn::Narrow(vec![6, 4, 1, 4]));
        assert_eq!(keys.b_plus, KeyColumn::Narrow(vec![18, 11, 3, 12]));
        let flags = count_and_flag(&mut keys, &[0, 1, 2, 3]);
        assert_eq!(keys.c, vec![1, 2, 1, 2]);
        assert_eq!(keys.c_plus, vec![1, 1, 1, 1]);
        assert_eq!(flags, vec![false, true, false, true]);
    }

    #[test]
    fn zero_codes_zero_keys() {
        let d = Dataset::<f64>::from_parts(
            vec!["a".into(), "b".into()],
            vec![2, 3],
            vec![0, 0, 1, 2],
            vec![false, true],
            vec![0.0; 2],
            None,
            None,
        )
        .unwrap();
        let keys = mixed_radix_keys(&d, &ActiveSet::all(2));
        assert_eq!(keys.b.get(0), BigUint::zero());
        assert_eq!(keys.b_plus.get(0), BigUint::zero());
    }

    #[test]
    fn all_treated_never_flagged() {
        let d = Dataset::<f64>::from_parts(
            vec!["a".into()],
            vec![2],
            vec![0, 0, 1],
            vec![true, true, true],
            vec![0.0; 3],
            None,
            None,
        )
        .unwrap();
        let mut keys = mixed_radix_keys(&d, &ActiveSet::all(1));
        assert_eq!(count_and_flag(&mut keys, &[0, 1, 2]), vec![false; 3]);
    }

    #[test]
    fn minimal_pair_flagged() {
        let d = Dataset::<f64>::from_parts(
            vec!["a".into()],
            vec![2],
            vec![1, 1],
            vec![false, true],
            vec![0.0; 2],
            None,
            None,
        )
        .unwrap();
        let mut keys = mixed_radix_keys(&d, &ActiveSet::all(1));
        assert_eq!(count_and_flag(&mut keys, &[0, 1]), vec![true, true]);
    }

    #[test]
    fn wide_keys_when_u64_overflows() {
        // 70 binary covariates: b_plus needs 71 bits.
        let p = 70;
        let codes: Vec<u32> = (0..2).flat_map(|u| (0..p).map(move |k| ((u + k) % 2) as u32)).collect();
        let d = Dataset::<f64>::from_parts(
            (0..p).map(|k| format!("x{k}")).collect(),
            vec![2; p],
            codes,
            vec![false, true],
            vec![0.0; 2],
            None,
            None,
        )
        .unwrap();
        let keys = mixed_radix_keys(&d, &ActiveSet::all(p));
        assert!(!keys.b.is_narrow());
        // unit 1 has ones at even positions
        let expect: BigUint = (0..p).step_by(2).map(|k| BigUint::one() << k).sum();
        assert_eq!(keys.b.get(1), expect);
        assert_eq!(keys.b_plus.get(1), (expect << 1usize) + 1u32);
    }

    #[test]
    fn narrow_boundary() {
        // 63 binary covariates: max b_plus = 2^64 - 1 fits exactly.
        assert!(narrow_weights(&vec![(0, 2); 63]).is_some());
        assert!(narrow_weights(&vec![(0, 2); 64]).is_none());
    }
}
