//! Exact bias enumeration for the oracle variant of the matcher.
//!
//! Outcomes follow a noise-free linear model over binary covariates
//! `x_1..x_p`:
//!
//! ```text
//! y = α_0 + Σ α_j x_j + T (β_0 + Σ β_j x_j)
//! ```
//!
//! Each of the `2^p` covariate bins holds at most one treated and one control
//! unit. The oracle matcher knows the importance order and drops `x_p` first,
//! then `x_{p-1}`, and so on. At each level the unmatched units are grouped by
//! the covariates still kept; a group with both arms produces the estimate
//! `mean(treated) − mean(control)`, which is assigned to every bin of the
//! collapsed cell that has no estimate yet. An allocation is valid when every
//! bin ends up with an estimate. [`bias_matrix`] averages per-bin bias over all
//! valid allocations in exact arithmetic.

use std::fmt;

use num_integer::Integer;
use num_traits::{ToPrimitive, Zero};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Exact;
use crate::Rational;

/// Largest `p` enumerated without opting in.
pub const MAX_DEFAULT_P: usize = 3;
/// Largest `p` enumerated at all.
pub const MAX_P: usize = 4;

/// Linear combination of the symbols `α_0..α_p` and `β_0..β_p`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LinearSymbolic<T> {
    pub alpha: Vec<T>,
    pub beta: Vec<T>,
}

impl<T: Exact> LinearSymbolic<T> {
    pub fn zero(p: usize) -> Self {
        LinearSymbolic { alpha: vec![T::zero(); p + 1], beta: vec![T::zero(); p + 1] }
    }

    pub fn p(&self) -> usize {
        self.alpha.len() - 1
    }

    pub fn is_zero(&self) -> bool {
        self.alpha.iter().chain(&self.beta).all(Zero::is_zero)
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.alpha.iter_mut().zip(&other.alpha) {
            *a = a.clone() + b.clone();
        }
        for (a, b) in self.beta.iter_mut().zip(&other.beta) {
            *a = a.clone() + b.clone();
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        LinearSymbolic {
            alpha: self.alpha.iter().zip(&other.alpha).map(|(a, b)| a.clone() - b.clone()).collect(),
            beta: self.beta.iter().zip(&other.beta).map(|(a, b)| a.clone() - b.clone()).collect(),
        }
    }

    pub fn scale(&self, k: &T) -> Self {
        LinearSymbolic {
            alpha: self.alpha.iter().map(|a| a.clone() * k.clone()).collect(),
            beta: self.beta.iter().map(|a| a.clone() * k.clone()).collect(),
        }
    }

    pub fn div(&self, k: &T) -> Self {
        LinearSymbolic {
            alpha: self.alpha.iter().map(|a| a.clone() / k.clone()).collect(),
            beta: self.beta.iter().map(|a| a.clone() / k.clone()).collect(),
        }
    }
}

impl<T: Exact> fmt::Display for LinearSymbolic<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let terms = self
            .alpha
            .iter()
            .enumerate()
            .map(|(j, c)| (c, 'α', j))
            .chain(self.beta.iter().enumerate().map(|(j, c)| (c, 'β', j)))
            .filter(|(c, _, _)| !c.is_zero());
        let mut first = true;
        for (c, sym, j) in terms {
            let neg = *c < T::zero();
            let mag = if neg { -c.clone() } else { c.clone() };
            match (first, neg) {
                (true, true) => write!(f, "-")?,
                (true, false) => {}
                (false, true) => write!(f, " - ")?,
                (false, false) => write!(f, " + ")?,
            }
            if mag.is_one() {
                write!(f, "{sym}{j}")?;
            } else {
                write!(f, "{mag}·{sym}{j}")?;
            }
            first = false;
        }
        if first {
            write!(f, "0")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinState {
    Empty,
    TreatedOnly,
    ControlOnly,
    Both,
}

impl BinState {
    fn from_bits(bits: u8) -> Self {
        match bits & 3 {
            0 => BinState::Empty,
            1 => BinState::TreatedOnly,
            2 => BinState::ControlOnly,
            _ => BinState::Both,
        }
    }

    fn bits(self) -> u8 {
        match self {
            BinState::Empty => 0,
            BinState::TreatedOnly => 1,
            BinState::ControlOnly => 2,
            BinState::Both => 3,
        }
    }

    pub fn has_treated(self) -> bool {
        self.bits() & 1 != 0
    }

    pub fn has_control(self) -> bool {
        self.bits() & 2 != 0
    }

    /// Swap the arms.
    pub fn flipped(self) -> Self {
        match self {
            BinState::TreatedOnly => BinState::ControlOnly,
            BinState::ControlOnly => BinState::TreatedOnly,
            s => s,
        }
    }
}

/// Occupancy of every bin. Bin `b` has `x_{j+1} = (b >> j) & 1`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Allocation {
    pub bins: Vec<BinState>,
}

impl Allocation {
    /// Decode a base-4 allocation index, bin 0 in the lowest digit.
    pub fn from_index(index: u64, p: usize) -> Self {
        let bins = (0..1usize << p).map(|b| BinState::from_bits((index >> (2 * b)) as u8)).collect();
        Allocation { bins }
    }

    pub fn index(&self) -> u64 {
        self.bins.iter().enumerate().map(|(b, s)| (s.bits() as u64) << (2 * b)).sum()
    }

    pub fn complement(&self) -> Self {
        Allocation { bins: self.bins.iter().map(|s| s.flipped()).collect() }
    }

    fn masks(&self) -> (u32, u32) {
        let mut t = 0;
        let mut c = 0;
        for (b, s) in self.bins.iter().enumerate() {
            if s.has_treated() {
                t |= 1 << b;
            }
            if s.has_control() {
                c |= 1 << b;
            }
        }
        (t, c)
    }
}

fn check_bin(bin: usize, p: usize) {
    assert!(bin < 1 << p, "bin {bin} out of range for p = {p}");
}

/// `β_0 + Σ_{x_j = 1} β_j`.
pub fn true_cate<T: Exact>(bin: usize, p: usize) -> LinearSymbolic<T> {
    check_bin(bin, p);
    let mut s = LinearSymbolic::zero(p);
    s.beta[0] = T::one();
    for j in 0..p {
        if bin >> j & 1 == 1 {
            s.beta[j + 1] = T::one();
        }
    }
    s
}

/// Outcome of the unit in `bin` under the given arm.
pub fn unit_outcome<T: Exact>(bin: usize, treated: bool, p: usize) -> LinearSymbolic<T> {
    check_bin(bin, p);
    let mut s = LinearSymbolic::zero(p);
    s.alpha[0] = T::one();
    for j in 0..p {
        if bin >> j & 1 == 1 {
            s.alpha[j + 1] = T::one();
        }
    }
    if treated {
        s.add_assign(&true_cate(bin, p));
    }
    s
}

fn mean_outcome<T: Exact>(bins: u32, treated: bool, p: usize) -> LinearSymbolic<T> {
    let mut acc = LinearSymbolic::zero(p);
    for b in BitIter(bins) {
        acc.add_assign(&unit_outcome(b, treated, p));
    }
    acc.div(&T::from_i64(bins.count_ones() as i64))
}

struct BitIter(u32);

impl Iterator for BitIter {
    type Item = usize;
    fn next(&mut self) -> Option<usize> {
        if self.0 == 0 {
            return None;
        }
        let b = self.0.trailing_zeros() as usize;
        self.0 &= self.0 - 1;
        Some(b)
    }
}

/// Bins whose low `keep` bits equal `key`.
fn cell(key: usize, keep: usize, p: usize) -> u32 {
    let mask = (1usize << keep) - 1;
    (0..1usize << p).filter(|b| b & mask == key).fold(0, |m, b| m | 1 << b)
}

/// Per-bin estimates, or `None` when some bin never receives one.
pub fn oracle_flame<T: Exact>(a: &Allocation, p: usize) -> Option<Vec<LinearSymbolic<T>>> {
    assert_eq!(a.bins.len(), 1 << p, "allocation length must be 2^p");
    let (mut ut, mut uc) = a.masks();
    let mut est: Vec<Option<LinearSymbolic<T>>> = vec![None; 1 << p];
    for keep in (0..=p).rev() {
        for key in 0..1usize << keep {
            let cell = cell(key, keep, p);
            let (ts, cs) = (ut & cell, uc & cell);
            if ts == 0 || cs == 0 {
                continue;
            }
            let e = mean_outcome::<T>(ts, true, p).sub(&mean_outcome(cs, false, p));
            for b in BitIter(cell) {
                if est[b].is_none() {
                    est[b] = Some(e.clone());
                }
            }
            ut &= !ts;
            uc &= !cs;
        }
    }
    est.into_iter().collect()
}

/// Per-bin bias averaged over valid allocations.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasMatrix<T> {
    pub p: usize,
    pub valid_count: u64,
    /// One entry per bin, indexed like [`Allocation::bins`].
    pub entries: Vec<LinearSymbolic<T>>,
}

fn check_p(p: usize, allow_large: bool) -> Result<()> {
    let max = if allow_large { MAX_P } else { MAX_DEFAULT_P };
    if p == 0 || p > max {
        let hint = if p == MAX_P { " (p = 4 must be enabled explicitly)" } else { "" };
        return Err(Error::InvalidArgument(format!("p must be in 1..={max}, got {p}{hint}")));
    }
    Ok(())
}

/// Reference enumeration through [`oracle_flame`]. Slow; meant for cross-checks.
pub fn bias_matrix_symbolic<T: Exact>(p: usize) -> Result<BiasMatrix<T>> {
    check_p(p, false)?;
    let nb = 1usize << p;
    let mut sums = vec![LinearSymbolic::<T>::zero(p); nb];
    let mut valid = 0u64;
    for idx in 0..1u64 << (2 * nb) {
        if let Some(est) = oracle_flame::<T>(&Allocation::from_index(idx, p), p) {
            valid += 1;
            for (b, e) in est.iter().enumerate() {
                sums[b].add_assign(&e.sub(&true_cate(b, p)));
            }
        }
    }
    Ok(finish(p, valid, sums))
}

fn finish<T: Exact>(p: usize, valid: u64, sums: Vec<LinearSymbolic<T>>) -> BiasMatrix<T> {
    let entries = if valid == 0 {
        sums
    } else {
        let n = T::from_i64(valid as i64);
        sums.iter().map(|s| s.div(&n)).collect()
    };
    BiasMatrix { p, valid_count: valid, entries }
}

/// Integer enumeration state for one `p`.
///
/// Every group mean has a denominator dividing `lcm(1..=2^p)`, so each
/// coefficient is accumulated as an integer multiple of `1/scale`.
struct Scaled {
    p: usize,
    scale: i64,
    /// `cells[keep][key]`.
    cells: Vec<Vec<u32>>,
    /// Bins with `x_{j+1} = 1`.
    bit_masks: Vec<u32>,
}

impl Scaled {
    fn new(p: usize) -> Self {
        let nb = 1usize << p;
        let scale = (1..=nb as i64).fold(1, |l, k| l.lcm(&k));
        let cells = (0..=p).map(|keep| (0..1usize << keep).map(|k| cell(k, keep, p)).collect()).collect();
        let bit_masks = (0..p).map(|j| (0..nb).filter(|b| b >> j & 1 == 1).fold(0, |m, b| m | 1 << b)).collect();
        Scaled { p, scale, cells, bit_masks }
    }

    fn width(&self) -> usize {
        2 * (self.p + 1)
    }

    /// Adds the scaled per-bin bias of allocation `idx` into `acc`, laid out per
    /// bin as `α_0..α_p, β_0..β_p`. Returns validity.
    fn accumulate(&self, idx: u64, acc: &mut [i128], scratch: &mut [i64]) -> bool {
        let p = self.p;
        let nb = 1usize << p;
        let w = self.width();
        let all = if nb == 32 { u32::MAX } else { (1u32 << nb) - 1 };
        let (mut ut, mut uc) = (0u32, 0u32);
        for b in 0..nb {
            let s = (idx >> (2 * b)) & 3;
            ut |= ((s & 1) as u32) << b;
            uc |= ((s >> 1) as u32) << b;
        }
        let mut done = 0u32;
        for keep in (0..=p).rev() {
            for &cell in &self.cells[keep] {
                let (ts, cs) = (ut & cell, uc & cell);
                if ts == 0 || cs == 0 {
                    continue;
                }
                let targets = cell & !done;
                if targets != 0 {
                    let (nt, nc) = (ts.count_ones() as i64, cs.count_ones() as i64);
                    let (kt, kc) = (self.scale / nt, self.scale / nc);
                    // bias = estimate − true CATE; the α_0 and β_0 terms cancel
                    let row = &mut scratch[..w];
                    row[0] = 0;
                    row[p + 1] = 0;
                    for j in 0..p {
                        let m = self.bit_masks[j];
                        let ct = (ts & m).count_ones() as i64 * kt;
                        let cc = (cs & m).count_ones() as i64 * kc;
                        row[1 + j] = ct - cc;
                        row[p + 2 + j] = ct;
                    }
                    for b in BitIter(targets) {
                        let dst = &mut acc[b * w..(b + 1) * w];
                        for (d, &r) in dst.iter_mut().zip(row.iter()) {
                            *d += r as i128;
                        }
                        for j in 0..p {
                            if b >> j & 1 == 1 {
                                dst[p + 2 + j] -= self.scale as i128;
                            }
                        }
                    }
                    done |= targets;
                }
                ut &= !ts;
                uc &= !cs;
            }
        }
        done == all
    }
}

/// Exhaustive per-bin bias over all `4^(2^p)` allocations.
///
/// `p` must be in `1..=3`, or `1..=4` when `allow_large` is set. `p = 4`
/// scans about 4.3 billion allocations.
pub fn bias_matrix<T: Exact>(p: usize, allow_large: bool) -> Result<BiasMatrix<T>> {
    check_p(p, allow_large)?;
    let sc = Scaled::new(p);
    let nb = 1usize << p;
    let w = sc.width();
    let total = 1u64 << (2 * nb);
    let chunk = 1u64 << 12;
    let n_chunks = total.div_ceil(chunk);

    let (valid, sums) = (0..n_chunks)
        .into_par_iter()
        .fold(
            || (0u64, vec![0i128; nb * w], vec![0i128; nb * w], vec![0i64; w]),
            |(mut valid, mut acc, mut tmp, mut scratch), ci| {
                for idx in ci * chunk..((ci + 1) * chunk).min(total) {
                    tmp.iter_mut().for_each(|x| *x = 0);
                    if sc.accumulate(idx, &mut tmp, &mut scratch) {
                        valid += 1;
                        acc.iter_mut().zip(&tmp).for_each(|(a, t)| *a += t);
                    }
                }
                (valid, acc, tmp, scratch)
            },
        )
        .map(|(v, acc, _, _)| (v, acc))
        .reduce(
            || (0, vec![0i128; nb * w]),
            |(va, mut a), (vb, b)| {
                a.iter_mut().zip(&b).for_each(|(x, y)| *x += y);
                (va + vb, a)
            },
        );

    let scale = T::from_i64(sc.scale);
    let mut entries = Vec::with_capacity(nb);
    for b in 0..nb {
        let row = &sums[b * w..(b + 1) * w];
        let conv = |x: i128| -> Result<T> {
            let v = i64::try_from(x).map_err(|_| Error::InvalidArgument("bias sum overflows i64".into()))?;
            Ok(T::from_i64(v) / scale.clone())
        };
        entries.push(LinearSymbolic {
            alpha: row[..p + 1].iter().map(|&x| conv(x)).collect::<Result<_>>()?,
            beta: row[p + 1..].iter().map(|&x| conv(x)).collect::<Result<_>>()?,
        });
    }
    Ok(finish(p, valid, entries))
}

impl<T: Exact> BiasMatrix<T> {
    /// Entries multiplied by `valid_count`, the numerators of the averaged form.
    pub fn sums(&self) -> Vec<LinearSymbolic<T>> {
        let n = T::from_i64(self.valid_count as i64);
        self.entries.iter().map(|e| e.scale(&n)).collect()
    }

    /// Bin label as `(x1,x2,...)`.
    pub fn bin_label(&self, bin: usize) -> String {
        let xs: Vec<String> = (0..self.p).map(|j| (bin >> j & 1).to_string()).collect();
        format!("({})", xs.join(","))
    }

    /// Plain-text table: one row per bin, bias written as `numerator / valid_count`.
    pub fn table(&self) -> String {
        let mut out = format!("valid allocations: {}\n", self.valid_count);
        let names: Vec<String> = (1..=self.p).map(|j| format!("x{j}")).collect();
        let head = format!("bin ({})", names.join(","));
        let width = head.len().max(self.bin_label(0).len() + 4);
        out.push_str(&format!("{head:<width$}  bias\n"));
        for (b, s) in self.sums().iter().enumerate() {
            out.push_str(&format!("{:<width$}  ({s}) / {}\n", self.bin_label(b), self.valid_count));
        }
        out
    }
}

/// A rational as `[numerator, denominator]`, lowest terms, positive denominator.
pub type RationalPair = [i64; 2];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BiasEntryReport {
    pub bin: usize,
    pub x: Vec<u8>,
    pub alpha_coeffs: Vec<RationalPair>,
    pub beta_coeffs: Vec<RationalPair>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BiasMatrixReport {
    pub p: usize,
    pub valid_count: u64,
    pub entries: Vec<BiasEntryReport>,
}

fn pair(r: &Rational) -> Result<RationalPair> {
    let n = r.numer().to_i64();
    let d = r.denom().to_i64();
    match (n, d) {
        (Some(n), Some(d)) => Ok([n, d]),
        _ => Err(Error::InvalidArgument(format!("coefficient {r} does not fit in 64 bits"))),
    }
}

fn unpair(p: &RationalPair) -> Result<Rational> {
    if p[1] <= 0 {
        return Err(Error::InvalidArgument(format!("denominator must be positive, got {}", p[1])));
    }
    Ok(Rational::new(p[0].into(), p[1].into()))
}

impl BiasMatrix<Rational> {
    pub fn report(&self) -> Result<BiasMatrixReport> {
        let entries = self
            .entries
            .iter()
            .enumerate()
            .map(|(bin, e)| {
                Ok(BiasEntryReport {
                    bin,
                    x: (0..self.p).map(|j| (bin >> j & 1) as u8).collect(),
                    alpha_coeffs: e.alpha.iter().map(pair).collect::<Result<_>>()?,
                    beta_coeffs: e.beta.iter().map(pair).collect::<Result<_>>()?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(BiasMatrixReport { p: self.p, valid_count: self.valid_count, entries })
    }

    pub fn from_report(r: &BiasMatrixReport) -> Result<Self> {
        let entries = r
            .entries
            .iter()
            .map(|e| {
                Ok(LinearSymbolic {
                    alpha: e.alpha_coeffs.iter().map(unpair).collect::<Result<_>>()?,
                    beta: e.beta_coeffs.iter().map(unpair).collect::<Result<_>>()?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(BiasMatrix { p: r.p, valid_count: r.valid_count, entries })
    }
}
