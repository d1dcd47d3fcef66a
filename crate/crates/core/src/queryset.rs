//! Per-class pools of tail-class foreground instances, consumed without
//! replacement and refilled from the dataset once exhausted.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mis::{Kernel, PairPool};
use crate::synth::{relation_histogram, Dataset, RelationshipInstance};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    ExplicitK,
    Fraction,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuerySetConfig {
    pub selection_mode: SelectionMode,
    pub k_prime: Option<usize>,
    /// Largest share of foreground instances the selected classes may hold.
    pub target_fraction: Option<f64>,
}

impl Default for QuerySetConfig {
    fn default() -> Self {
        Self { selection_mode: SelectionMode::Fraction, k_prime: None, target_fraction: Some(0.2) }
    }
}

impl QuerySetConfig {
    pub fn explicit(k_prime: usize) -> Self {
        Self { selection_mode: SelectionMode::ExplicitK, k_prime: Some(k_prime), target_fraction: None }
    }

    pub fn fraction(target: f64) -> Self {
        Self { selection_mode: SelectionMode::Fraction, k_prime: None, target_fraction: Some(target) }
    }

    pub fn validate(&self, num_classes: usize) -> Result<()> {
        match self.selection_mode {
            SelectionMode::ExplicitK => {
                let k = self.k_prime.ok_or_else(|| Error::config("explicit_k selection needs k_prime"))?;
                if k == 0 || k >= num_classes {
                    return Err(Error::config(format!("k_prime must lie in 1..{num_classes}, got {k}")));
                }
            }
            SelectionMode::Fraction => {
                let f =
                    self.target_fraction.ok_or_else(|| Error::config("fraction selection needs target_fraction"))?;
                if !(f > 0.0 && f <= 1.0) {
                    return Err(Error::config(format!("target_fraction must lie in (0, 1], got {f}")));
                }
            }
        }
        Ok(())
    }
}

/// Picks the query-set classes: least frequent first, ties by index.
/// Classes absent from the dataset are never selected.
pub fn select_tail_classes(counts: &[usize], qcfg: &QuerySetConfig) -> Result<Vec<usize>> {
    let k = counts.len();
    qcfg.validate(k)?;
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Err(Error::data("dataset has no foreground instances"));
    }
    let mut order: Vec<usize> = (0..k).filter(|&c| counts[c] > 0).collect();
    order.sort_by_key(|&c| (counts[c], c));
    let take = match qcfg.selection_mode {
        SelectionMode::ExplicitK => {
            let kp = qcfg.k_prime.expect("validated");
            if order.len() < kp {
                return Err(Error::data(format!("only {} foreground classes present, k_prime = {kp}", order.len())));
            }
            kp
        }
        SelectionMode::Fraction => {
            let target = qcfg.target_fraction.expect("validated");
            let mut cum = 0usize;
            let mut n = 0;
            for &c in &order {
                if (cum + counts[c]) as f64 / total as f64 > target {
                    break;
                }
                cum += counts[c];
                n += 1;
            }
            n.min(k - 1)
        }
    };
    Ok(order[..take].to_vec())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReplenishOutcome {
    /// The pool was already full; nothing changed.
    AlreadyFull,
    /// Pool reset; carries the number of instances consumed in the closed cycle.
    Replenished { archived: usize },
}

#[derive(Clone, Debug)]
struct ClassPool {
    source: Vec<usize>,
    remaining: Vec<usize>,
    consumed: usize,
    cycles: usize,
}

/// Query set `Q`: remaining instance ids per selected class.
#[derive(Clone, Debug)]
pub struct QuerySet<'a> {
    ds: &'a Dataset,
    pools: BTreeMap<usize, ClassPool>,
}

/// Serializable snapshot: class -> remaining ids, plus consumption counters.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuerySetState {
    pub remaining: BTreeMap<usize, Vec<usize>>,
    pub consumed: BTreeMap<usize, usize>,
}

pub fn build_query_set<'a>(ds: &'a Dataset, qcfg: &QuerySetConfig) -> Result<QuerySet<'a>> {
    let hist = relation_histogram(ds);
    let classes = select_tail_classes(&hist[..ds.num_classes()], qcfg)?;
    Ok(QuerySet::with_classes(ds, &classes))
}

impl<'a> QuerySet<'a> {
    pub fn with_classes(ds: &'a Dataset, classes: &[usize]) -> Self {
        let pools = classes
            .iter()
            .map(|&c| {
                let source = ds.class_ids(c);
                (c, ClassPool { remaining: source.clone(), source, consumed: 0, cycles: 0 })
            })
            .collect();
        Self { ds, pools }
    }

    pub fn dataset(&self) -> &'a Dataset {
        self.ds
    }

    pub fn classes(&self) -> Vec<usize> {
        self.pools.keys().copied().collect()
    }

    pub fn contains(&self, class: usize) -> bool {
        self.pools.contains_key(&class)
    }

    fn pool(&self, class: usize) -> Result<&ClassPool> {
        self.pools.get(&class).ok_or_else(|| Error::input(format!("class {class} is not in the query set")))
    }

    fn pool_mut(&mut self, class: usize) -> Result<&mut ClassPool> {
        self.pools.get_mut(&class).ok_or_else(|| Error::input(format!("class {class} is not in the query set")))
    }

    /// `|Q_k|`: all instances of the class in the dataset.
    pub fn pool_size(&self, class: usize) -> Result<usize> {
        Ok(self.pool(class)?.source.len())
    }

    pub fn remaining(&self, class: usize) -> Result<&[usize]> {
        Ok(&self.pool(class)?.remaining)
    }

    pub fn consumed(&self, class: usize) -> Result<usize> {
        Ok(self.pool(class)?.consumed)
    }

    pub fn replenish_cycles(&self, class: usize) -> Result<usize> {
        Ok(self.pool(class)?.cycles)
    }

    pub fn replenish(&mut self, class: usize) -> Result<ReplenishOutcome> {
        let pool = self.pool_mut(class)?;
        if pool.remaining.len() == pool.source.len() {
            return Ok(ReplenishOutcome::AlreadyFull);
        }
        pool.remaining = pool.source.clone();
        let archived = std::mem::take(&mut pool.consumed);
        pool.cycles += 1;
        Ok(ReplenishOutcome::Replenished { archived })
    }

    /// Takes `n` instances of `class` chosen by `kernel`, refilling the pool
    /// whenever it runs dry. Instances already taken by this call are never
    /// offered again within it, so `n` may not exceed the class size.
    pub fn draw<R: Rng + ?Sized>(
        &mut self,
        class: usize,
        n: usize,
        kernel: &Kernel,
        rng: &mut R,
    ) -> Result<Vec<&'a RelationshipInstance>> {
        let ds = self.ds;
        let size = self.pool_size(class)?;
        if n > size {
            return Err(Error::input(format!("cannot draw {n} distinct instances from class {class} of size {size}")));
        }
        let mut taken: BTreeSet<usize> = BTreeSet::new();
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            if self.pool(class)?.remaining.is_empty() {
                self.replenish(class)?;
            }
            let pool = self.pool_mut(class)?;
            let candidates: Vec<&'a RelationshipInstance> =
                pool.remaining.iter().filter(|id| !taken.contains(id)).map(|&id| ds.instance(id)).collect();
            let want = (n - out.len()).min(candidates.len());
            let picked = kernel.select(&PairPool::new(candidates)?, want, rng)?;
            let ids: BTreeSet<usize> = picked.iter().map(|i| i.id).collect();
            pool.remaining.retain(|id| !ids.contains(id));
            pool.consumed += picked.len();
            taken.extend(ids);
            out.extend(picked);
        }
        Ok(out)
    }

    pub fn state(&self) -> QuerySetState {
        QuerySetState {
            remaining: self.pools.iter().map(|(c, p)| (*c, p.remaining.clone())).collect(),
            consumed: self.pools.iter().map(|(c, p)| (*c, p.consumed)).collect(),
        }
    }

    pub fn restore(ds: &'a Dataset, state: &QuerySetState) -> Result<Self> {
        let classes: Vec<usize> = state.remaining.keys().copied().collect();
        let mut qs = Self::with_classes(ds, &classes);
        for (c, ids) in &state.remaining {
            let pool = qs.pools.get_mut(c).expect("class just added");
            let members: BTreeSet<usize> = pool.source.iter().copied().collect();
            if let Some(bad) = ids.iter().find(|id| !members.contains(id)) {
                return Err(Error::data(format!("instance {bad} is not a member of class {c}")));
            }
            pool.remaining = ids.clone();
            pool.consumed = state.consumed.get(c).copied().unwrap_or(pool.source.len() - ids.len());
        }
        Ok(qs)
    }
}
