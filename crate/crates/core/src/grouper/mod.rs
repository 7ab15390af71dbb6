//! Exact-match grouping on a subset of covariates.
//!
//! Two interchangeable backends produce identical [`GroupTable`]s:
//! [`Backend::MixedRadix`] groups on injective integer keys, and
//! [`Backend::TupleKey`] groups on the full code tuple through an ordered map.

mod keys;
pub mod sql;

use std::collections::{BTreeMap, HashMap};
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::scalar::Real;

pub use keys::{count_and_flag, mixed_radix_keys, KeyColumn, UnitKeys};
pub use sql::{emit_sql, emit_sql_for};

/// Retained covariate indices, strictly increasing.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActiveSet(Vec<usize>);

impl ActiveSet {
    pub fn new(indices: Vec<usize>) -> Result<Self> {
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(format!("active indices {indices:?} are not strictly increasing")));
        }
        Ok(ActiveSet(indices))
    }

    pub fn all(p: usize) -> Self {
        ActiveSet((0..p).collect())
    }

    /// This set minus covariate `k` (unchanged if `k` is absent).
    pub fn without(&self, k: usize) -> Self {
        ActiveSet(self.0.iter().copied().filter(|&i| i != k).collect())
    }

    pub fn contains(&self, k: usize) -> bool {
        self.0.binary_search(&k).is_ok()
    }

    /// Position of covariate `k` within the set.
    pub fn position(&self, k: usize) -> Option<usize> {
        self.0.binary_search(&k).ok()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().copied()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub(crate) fn check_within(&self, p: usize) -> Result<()> {
        match self.0.last() {
            Some(&k) if k >= p => Err(Error::InvalidArgument(format!("covariate index {k} out of range for {p} covariates"))),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    #[default]
    MixedRadix,
    TupleKey,
}

impl std::str::FromStr for Backend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mixed_radix" => Ok(Backend::MixedRadix),
            "tuple_key" => Ok(Backend::TupleKey),
            other => Err(Error::InvalidArgument(format!("unknown backend `{other}`"))),
        }
    }
}

/// Units sharing one code tuple on the active covariates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Group {
    /// Codes on the active covariates, in active-set order.
    pub signature: Vec<u32>,
    /// Unit row indices, ascending.
    pub members: Vec<usize>,
    pub n_treated: usize,
    pub n_control: usize,
}

impl Group {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// At least one treated and at least one control member.
    pub fn is_valid(&self) -> bool {
        self.n_treated >= 1 && self.n_treated < self.members.len()
    }
}

/// Disjoint groups ordered lexicographically by signature.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct GroupTable {
    pub groups: Vec<Group>,
}

/// Serialized form of one group: `{signature, unit_ids, n_treated, n_control}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupRecord {
    pub signature: Vec<u32>,
    pub unit_ids: Vec<String>,
    pub n_treated: usize,
    pub n_control: usize,
}

impl GroupTable {
    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn n_units(&self) -> usize {
        self.groups.iter().map(Group::len).sum()
    }

    pub fn to_records<F: Real>(&self, d: &Dataset<F>) -> Vec<GroupRecord> {
        self.groups
            .iter()
            .map(|g| GroupRecord {
                signature: g.signature.clone(),
                unit_ids: g.members.iter().map(|&u| d.unit_ids()[u].clone()).collect(),
                n_treated: g.n_treated,
                n_control: g.n_control,
            })
            .collect()
    }
}

/// Result of one exact-matching pass.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExactMatch {
    /// Members of surviving groups, in considered order.
    pub matched: Vec<usize>,
    pub groups: GroupTable,
    /// Considered units left unmatched, in considered order.
    pub remainder: Vec<usize>,
}

fn signature<F: Real>(d: &Dataset<F>, active: &ActiveSet, u: usize) -> Vec<u32> {
    let row = d.row(u);
    active.iter().map(|k| row[k]).collect()
}

/// Groups `considered` units by exact equality on `active` and prunes groups
/// lacking either arm.
pub fn basic_exact_match<F: Real>(
    d: &Dataset<F>,
    considered: &[usize],
    active: &ActiveSet,
    backend: Backend,
) -> Result<ExactMatch> {
    if active.is_empty() {
        return Err(Error::InvalidArgument("exact matching needs at least one active covariate".into()));
    }
    active.check_within(d.n_covariates())?;
    if considered.is_empty() {
        return Ok(ExactMatch { matched: Vec::new(), groups: GroupTable::default(), remainder: Vec::new() });
    }
    let groups = match backend {
        Backend::MixedRadix => mixed_radix_groups(d, considered, active),
        Backend::TupleKey => tuple_key_groups(d, considered, active),
    };
    let mut in_group = vec![false; d.n_units()];
    for g in &groups.groups {
        for &u in &g.members {
            in_group[u] = true;
        }
    }
    let (matched, remainder) = considered.iter().partition(|&&u| in_group[u]);
    Ok(ExactMatch { matched, groups, remainder })
}

fn mixed_radix_groups<F: Real>(d: &Dataset<F>, considered: &[usize], active: &ActiveSet) -> GroupTable {
    let (b, b_plus) = keys::keys_for(d, active, considered);
    let mut out = match (&b, &b_plus) {
        (KeyColumn::Narrow(b), KeyColumn::Narrow(bp)) => collect_flagged(d, considered, active, b, bp),
        (KeyColumn::Wide(b), KeyColumn::Wide(bp)) => collect_flagged(d, considered, active, b, bp),
        _ => unreachable!("b and b_plus share a width"),
    };
    out.sort_by(|x, y| x.signature.cmp(&y.signature));
    GroupTable { groups: out }
}

/// Counts `b` and `b_plus`; units with differing counts are matched and are
/// gathered into groups by `b`.
fn collect_flagged<F: Real, K: Hash + Eq>(
    d: &Dataset<F>,
    considered: &[usize],
    active: &ActiveSet,
    b: &[K],
    b_plus: &[K],
) -> Vec<Group> {
    let mut c: HashMap<&K, usize> = HashMap::with_capacity(considered.len());
    let mut c_plus: HashMap<&K, usize> = HashMap::with_capacity(considered.len());
    for (kb, kp) in b.iter().zip(b_plus) {
        *c.entry(kb).or_default() += 1;
        *c_plus.entry(kp).or_default() += 1;
    }
    let mut slot: HashMap<&K, usize> = HashMap::new();
    let mut groups: Vec<Group> = Vec::new();
    for (i, &u) in considered.iter().enumerate() {
        if c[&b[i]] == c_plus[&b_plus[i]] {
            continue;
        }
        let gi = *slot.entry(&b[i]).or_insert_with(|| {
            groups.push(Group { signature: signature(d, active, u), members: Vec::new(), n_treated: 0, n_control: 0 });
            groups.len() - 1
        });
        let g = &mut groups[gi];
        g.members.push(u);
        if d.is_treated(u) {
            g.n_treated += 1;
        } else {
            g.n_control += 1;
        }
    }
    for g in &mut groups {
        g.members.sort_unstable();
    }
    groups
}

fn tuple_key_groups<F: Real>(d: &Dataset<F>, considered: &[usize], active: &ActiveSet) -> GroupTable {
    let mut map: BTreeMap<Vec<u32>, Group> = BTreeMap::new();
    for &u in considered {
        let sig = signature(d, active, u);
        let g = map
            .entry(sig.clone())
            .or_insert_with(|| Group { signature: sig, members: Vec::new(), n_treated: 0, n_control: 0 });
        g.members.push(u);
        if d.is_treated(u) {
            g.n_treated += 1;
        } else {
            g.n_control += 1;
        }
    }
    let groups = map
        .into_values()
        .filter(Group::is_valid)
        .map(|mut g| {
            g.members.sort_unstable();
            g
        })
        .collect();
    GroupTable { groups }
}
