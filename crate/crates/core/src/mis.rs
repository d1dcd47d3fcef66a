//! Sampling kernels over single-class pools and the pair-information
//! estimators behind them.
//!
//! A pool's pair distribution is the empirical frequency of its
//! `(subject, object)` pair types. Entropies are in nats.
//!
//! The conditional entropy of a pool given a selection is the information
//! content `-p ln p` still carried by pair types the selection does not
//! contain: a pair type already represented in the selection contributes
//! nothing. Mutual information is entropy minus that residual, so it grows
//! with the set of distinct pair types covered.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::classifier::SoftmaxModel;
use crate::error::{Error, Result};
use crate::synth::RelationshipInstance;

pub type Pair = (usize, usize);

/// Largest pool (distinct pair types) and request size the greedy
/// mutual-information oracle accepts.
pub const MAX_MI_PAIR_TYPES: usize = 16;
pub const MAX_MI_DRAW: usize = 64;

const TIE_TOL: f64 = 1e-12;

/// Multiset of pair types.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PairCounts(BTreeMap<Pair, usize>);

impl PairCounts {
    pub fn from_instances<'a, I: IntoIterator<Item = &'a RelationshipInstance>>(it: I) -> Self {
        let mut c = Self::default();
        for inst in it {
            c.add(inst.pair());
        }
        c
    }

    pub fn from_counts<I: IntoIterator<Item = (Pair, usize)>>(it: I) -> Self {
        Self(it.into_iter().filter(|(_, n)| *n > 0).collect())
    }

    pub fn add(&mut self, p: Pair) {
        *self.0.entry(p).or_insert(0) += 1;
    }

    pub fn remove(&mut self, p: Pair) {
        if let Some(c) = self.0.get_mut(&p) {
            *c -= 1;
            if *c == 0 {
                self.0.remove(&p);
            }
        }
    }

    pub fn get(&self, p: Pair) -> usize {
        self.0.get(&p).copied().unwrap_or(0)
    }

    pub fn total(&self) -> usize {
        self.0.values().sum()
    }

    /// Number of distinct pair types present.
    pub fn num_types(&self) -> usize {
        self.0.len()
    }

    pub fn types(&self) -> impl Iterator<Item = Pair> + '_ {
        self.0.keys().copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (Pair, usize)> + '_ {
        self.0.iter().map(|(p, c)| (*p, *c))
    }

    fn subject_count(&self, s: usize) -> usize {
        self.0.iter().filter(|((a, _), _)| *a == s).map(|(_, c)| c).sum()
    }

    fn object_count(&self, o: usize) -> usize {
        self.0.iter().filter(|((_, b), _)| *b == o).map(|(_, c)| c).sum()
    }

    /// `p(s, o) ln(p(s, o) / (p(s) p(o)))` under this multiset's
    /// frequencies; zero when any factor is undefined.
    fn pointwise_term(&self, p: Pair) -> f64 {
        let n = self.total();
        let joint = self.get(p);
        if n == 0 || joint == 0 {
            return 0.0;
        }
        let n = n as f64;
        let pj = joint as f64 / n;
        let ps = self.subject_count(p.0) as f64 / n;
        let po = self.object_count(p.1) as f64 / n;
        pj * (pj / (ps * po)).ln()
    }
}

/// Instances of a single relation class together with their pair counts.
#[derive(Clone, Debug)]
pub struct PairPool<'a> {
    instances: Vec<&'a RelationshipInstance>,
    pair_counts: PairCounts,
}

impl<'a> PairPool<'a> {
    pub fn new(instances: Vec<&'a RelationshipInstance>) -> Result<Self> {
        if let Some(first) = instances.first() {
            if instances.iter().any(|i| i.relation_label != first.relation_label) {
                return Err(Error::input("pair pool mixes relation classes"));
            }
        }
        let pair_counts = PairCounts::from_instances(instances.iter().copied());
        Ok(Self { instances, pair_counts })
    }

    pub fn instances(&self) -> &[&'a RelationshipInstance] {
        &self.instances
    }

    pub fn pair_counts(&self) -> &PairCounts {
        &self.pair_counts
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InfoReport {
    pub entropy: f64,
    pub conditional_entropy: f64,
    pub mutual_information: f64,
    pub delta: BTreeMap<String, f64>,
}

fn plogp_sum<I: Iterator<Item = usize>>(counts: I, total: usize) -> f64 {
    let n = total as f64;
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

fn nonempty(pool: &PairPool) -> Result<()> {
    if pool.is_empty() {
        return Err(Error::input("empty pair pool"));
    }
    Ok(())
}

pub fn pair_entropy(pool: &PairPool) -> Result<f64> {
    nonempty(pool)?;
    let c = pool.pair_counts();
    Ok(plogp_sum(c.iter().map(|(_, n)| n), c.total()))
}

/// Residual pair information of `pool` once `selected` is known.
pub fn conditional_entropy(pool: &PairPool, selected: &[&RelationshipInstance]) -> Result<f64> {
    nonempty(pool)?;
    let covered: BTreeSet<Pair> = selected.iter().map(|i| i.pair()).collect();
    if let Some(p) = covered.iter().find(|p| pool.pair_counts().get(**p) == 0) {
        return Err(Error::input(format!("selected pair {p:?} is not in the pool")));
    }
    let c = pool.pair_counts();
    Ok(plogp_sum(c.iter().filter(|(p, _)| !covered.contains(p)).map(|(_, n)| n), c.total()))
}

pub fn mutual_information(pool: &PairPool, selected: &[&RelationshipInstance]) -> Result<f64> {
    Ok(pair_entropy(pool)? - conditional_entropy(pool, selected)?)
}

/// Estimated information gain of adding one `candidate` pair: the
/// pointwise subject/object dependence of the pair in the pool plus the same
/// term in the current selection.
pub fn delta_information(pool: &PairPool, selected: &[&RelationshipInstance], candidate: Pair) -> Result<f64> {
    if pool.pair_counts().get(candidate) == 0 {
        return Err(Error::input(format!("candidate pair {candidate:?} is not in the pool")));
    }
    Ok(delta_counts(pool.pair_counts(), &PairCounts::from_instances(selected.iter().copied()), candidate))
}

fn delta_counts(pool: &PairCounts, selected: &PairCounts, candidate: Pair) -> f64 {
    pool.pointwise_term(candidate) + selected.pointwise_term(candidate)
}

pub fn info_report(pool: &PairPool, selected: &[&RelationshipInstance]) -> Result<InfoReport> {
    let entropy = pair_entropy(pool)?;
    let conditional_entropy = conditional_entropy(pool, selected)?;
    let sel = PairCounts::from_instances(selected.iter().copied());
    let delta = pool
        .pair_counts()
        .types()
        .map(|p| (format!("{}-{}", p.0, p.1), delta_counts(pool.pair_counts(), &sel, p)))
        .collect();
    Ok(InfoReport { entropy, conditional_entropy, mutual_information: entropy - conditional_entropy, delta })
}

fn group_by_pair<'a>(pool: &PairPool<'a>) -> BTreeMap<Pair, VecDeque<&'a RelationshipInstance>> {
    let mut groups: BTreeMap<Pair, VecDeque<&'a RelationshipInstance>> = BTreeMap::new();
    for inst in pool.instances() {
        groups.entry(inst.pair()).or_default().push_back(inst);
    }
    groups
}

/// Maximum-information sampling by pair diversity.
///
/// Each pass takes one randomly chosen instance of every pair type still in
/// the pool; when a full pass would overshoot `n`, the shortfall is drawn at
/// random from that pass's unique set. Returns `min(n, |pool|)` instances.
pub fn unique_pair_sample<'a, R: Rng + ?Sized>(
    pool: &PairPool<'a>,
    n: usize,
    rng: &mut R,
) -> Vec<&'a RelationshipInstance> {
    let n = n.min(pool.len());
    let mut remaining: BTreeMap<Pair, Vec<&'a RelationshipInstance>> =
        group_by_pair(pool).into_iter().map(|(p, v)| (p, v.into_iter().collect())).collect();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let unique: Vec<(Pair, usize)> = remaining.iter().map(|(p, v)| (*p, rng.random_range(0..v.len()))).collect();
        let chosen: Vec<(Pair, usize)> = if out.len() + unique.len() <= n {
            unique
        } else {
            let need = n - out.len();
            let mut picks: Vec<usize> = rand::seq::index::sample(rng, unique.len(), need).into_vec();
            picks.sort_unstable();
            picks.into_iter().map(|i| unique[i]).collect()
        };
        for (p, idx) in chosen {
            let group = remaining.get_mut(&p).expect("pair present");
            out.push(group.swap_remove(idx));
            if group.is_empty() {
                remaining.remove(&p);
            }
        }
    }
    out
}

/// Greedy maximiser of the estimated information gain, restricted to small
/// pools. Each step picks the not-yet-selected pair type with the largest
/// gain (all types become eligible again once each has been picked), ties
/// going to the lexicographically smallest pair, and takes its
/// lowest-positioned remaining instance.
pub fn max_mi_sample<'a>(pool: &PairPool<'a>, n: usize) -> Result<Vec<&'a RelationshipInstance>> {
    if n > MAX_MI_DRAW || pool.pair_counts().num_types() > MAX_MI_PAIR_TYPES {
        return Err(Error::OracleScale(format!(
            "max-MI oracle supports n <= {MAX_MI_DRAW} and <= {MAX_MI_PAIR_TYPES} pair types (got n = {n}, {} types)",
            pool.pair_counts().num_types()
        )));
    }
    let n = n.min(pool.len());
    let mut groups = group_by_pair(pool);
    let mut current = pool.pair_counts().clone();
    let mut selected = PairCounts::default();
    let mut used: BTreeSet<Pair> = BTreeSet::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let mut candidates: Vec<Pair> = current.types().filter(|p| !used.contains(p)).collect();
        if candidates.is_empty() {
            used.clear();
            candidates = current.types().collect();
        }
        let mut best = candidates[0];
        let mut best_gain = delta_counts(&current, &selected, best);
        for &p in &candidates[1..] {
            let g = delta_counts(&current, &selected, p);
            if g > best_gain + TIE_TOL {
                best = p;
                best_gain = g;
            }
        }
        let group = groups.get_mut(&best).expect("candidate has instances");
        out.push(group.pop_front().expect("nonempty group"));
        current.remove(best);
        selected.add(best);
        used.insert(best);
    }
    Ok(out)
}

/// Uniform sampling without replacement.
pub fn random_sample<'a, R: Rng + ?Sized>(pool: &PairPool<'a>, n: usize, rng: &mut R) -> Vec<&'a RelationshipInstance> {
    let n = n.min(pool.len());
    rand::seq::index::sample(rng, pool.len(), n).into_iter().map(|i| pool.instances()[i]).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UncertaintyVariant {
    LeastConfidence,
    MaxEntropy,
    Margin,
}

/// Larger score means more uncertain.
pub fn uncertainty_score(probs: &[f64], variant: UncertaintyVariant) -> f64 {
    match variant {
        UncertaintyVariant::LeastConfidence => 1.0 - probs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        UncertaintyVariant::MaxEntropy => probs.iter().filter(|&&p| p > 0.0).map(|p| -p * p.ln()).sum(),
        UncertaintyVariant::Margin => {
            let (mut a, mut b) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
            for &p in probs {
                if p > a {
                    b = a;
                    a = p;
                } else if p > b {
                    b = p;
                }
            }
            if b == f64::NEG_INFINITY {
                -1.0
            } else {
                -(a - b)
            }
        }
    }
}

/// Top-`n` most uncertain instances under `model`; ties by instance id.
pub fn uncertainty_sample<'a>(
    pool: &PairPool<'a>,
    n: usize,
    model: &SoftmaxModel,
    variant: UncertaintyVariant,
) -> Result<Vec<&'a RelationshipInstance>> {
    let mut scored = pool
        .instances()
        .iter()
        .map(|inst| Ok((uncertainty_score(&model.probabilities(&inst.feature)?, variant), *inst)))
        .collect::<Result<Vec<_>>>()?;
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.id.cmp(&b.1.id)));
    Ok(scored.into_iter().take(n).map(|(_, i)| i).collect())
}

/// Kernel tag as written in experiment configs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum KernelKind {
    #[serde(rename = "mis")]
    Mis,
    #[serde(rename = "max_mi")]
    MaxMi,
    #[serde(rename = "rnd")]
    Random,
    #[serde(rename = "lcs")]
    LeastConfidence,
    #[serde(rename = "mes")]
    MaxEntropy,
    #[serde(rename = "ms")]
    Margin,
}

impl KernelKind {
    pub const ALL: [KernelKind; 6] = [
        KernelKind::Mis,
        KernelKind::MaxMi,
        KernelKind::Random,
        KernelKind::LeastConfidence,
        KernelKind::MaxEntropy,
        KernelKind::Margin,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            KernelKind::Mis => "mis",
            KernelKind::MaxMi => "max_mi",
            KernelKind::Random => "rnd",
            KernelKind::LeastConfidence => "lcs",
            KernelKind::MaxEntropy => "mes",
            KernelKind::Margin => "ms",
        }
    }

    pub fn needs_model(self) -> bool {
        matches!(self, KernelKind::LeastConfidence | KernelKind::MaxEntropy | KernelKind::Margin)
    }

    /// Attaches the model snapshot required by the uncertainty kernels.
    pub fn bind(self, model: Option<&SoftmaxModel>) -> Result<Kernel<'_>> {
        let uncertainty = |v| {
            model
                .map(|m| Kernel::Uncertainty(v, m))
                .ok_or_else(|| Error::input(format!("kernel {} needs a model", self.tag())))
        };
        match self {
            KernelKind::Mis => Ok(Kernel::Mis),
            KernelKind::MaxMi => Ok(Kernel::MaxMi),
            KernelKind::Random => Ok(Kernel::Random),
            KernelKind::LeastConfidence => uncertainty(UncertaintyVariant::LeastConfidence),
            KernelKind::MaxEntropy => uncertainty(UncertaintyVariant::MaxEntropy),
            KernelKind::Margin => uncertainty(UncertaintyVariant::Margin),
        }
    }
}

impl fmt::Display for KernelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for KernelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        KernelKind::ALL
            .into_iter()
            .find(|k| k.tag() == s)
            .ok_or_else(|| Error::config(format!("unknown sampling kernel {s:?}")))
    }
}

/// A kernel ready to draw, with any model snapshot it depends on.
#[derive(Clone, Copy, Debug)]
pub enum Kernel<'m> {
    Random,
    Mis,
    MaxMi,
    Uncertainty(UncertaintyVariant, &'m SoftmaxModel),
}

impl Kernel<'_> {
    pub fn select<'a, R: Rng + ?Sized>(
        &self,
        pool: &PairPool<'a>,
        n: usize,
        rng: &mut R,
    ) -> Result<Vec<&'a RelationshipInstance>> {
        match *self {
            Kernel::Random => Ok(random_sample(pool, n, rng)),
            Kernel::Mis => Ok(unique_pair_sample(pool, n, rng)),
            Kernel::MaxMi => max_mi_sample(pool, n),
            Kernel::Uncertainty(v, model) => uncertainty_sample(pool, n, model, v),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream_rng, Stream};

    pub(crate) fn pool_instances(counts: &[(Pair, usize)]) -> Vec<RelationshipInstance> {
        let mut out = Vec::new();
        for &(pair, c) in counts {
            for _ in 0..c {
                out.push(RelationshipInstance {
                    id: out.len(),
                    scene_id: 0,
                    subject_class: pair.0,
                    object_class: pair.1,
                    relation_label: 0,
                    feature: vec![out.len() as f64, 1.0],
                });
            }
        }
        out
    }

    fn pool(insts: &[RelationshipInstance]) -> PairPool<'_> {
        PairPool::new(insts.iter().collect()).unwrap()
    }

    const A: Pair = (0, 0);
    const B: Pair = (1, 1);
    const C: Pair = (2, 2);
    const D: Pair = (3, 3);

    fn pair_multiset(sel: &[&RelationshipInstance]) -> BTreeMap<Pair, usize> {
        let mut m = BTreeMap::new();
        for i in sel {
            *m.entry(i.pair()).or_insert(0) += 1;
        }
        m
    }

    #[test]
    fn entropy_reference_values() {
        let uniform = pool_instances(&[(A, 2), (B, 2), (C, 2), (D, 2)]);
        assert!((pair_entropy(&pool(&uniform)).unwrap() - 4f64.ln()).abs() < 1e-15);
        let single = pool_instances(&[(A, 5)]);
        assert_eq!(pair_entropy(&pool(&single)).unwrap(), 0.0);
        let skew = pool_instances(&[(A, 3), (B, 1)]);
        let expected = -(0.75f64 * 0.75f64.ln() + 0.25 * 0.25f64.ln());
        assert!((pair_entropy(&pool(&skew)).unwrap() - expected).abs() < 1e-15);
        assert!((expected - 0.5623).abs() < 1e-4);
        assert!(matches!(pair_entropy(&PairPool::new(vec![]).unwrap()), Err(Error::Input(_))));
    }

    #[test]
    fn conditional_entropy_edge_cases() {
        let insts = pool_instances(&[(A, 3), (B, 2), (C, 1)]);
        let p = pool(&insts);
        assert_eq!(conditional_entropy(&p, &[]).unwrap(), pair_entropy(&p).unwrap());
        assert_eq!(mutual_information(&p, &[]).unwrap(), 0.0);
        // Covering every type but C leaves only C's information content.
        let sel = [&insts[0], &insts[3]];
        let pc: f64 = 1.0 / 6.0;
        assert!((conditional_entropy(&p, &sel).unwrap() - (-pc * pc.ln())).abs() < 1e-15);
        let all = [&insts[0], &insts[3], &insts[5]];
        assert_eq!(conditional_entropy(&p, &all).unwrap(), 0.0);
        let stranger = pool_instances(&[(D, 1)]);
        assert!(matches!(conditional_entropy(&p, &[&stranger[0]]), Err(Error::Input(_))));
    }

    #[test]
    fn conditional_entropy_matches_exhaustive_summation() {
        // Two pair types, one selection of each kind: sum over the types
        // outside the selection of p * (-ln p).
        let insts = pool_instances(&[(A, 3), (B, 1)]);
        let p = pool(&insts);
        let with_a = conditional_entropy(&p, &[&insts[0]]).unwrap();
        let with_b = conditional_entropy(&p, &[&insts[3]]).unwrap();
        assert!((with_a - 0.25 * 4f64.ln()).abs() < 1e-15);
        assert!((with_b - 0.75 * (4.0f64 / 3.0).ln()).abs() < 1e-15);
    }

    #[test]
    fn full_cover_of_uniform_pool_recovers_entropy() {
        let insts = pool_instances(&[(A, 2), (B, 2), (C, 2)]);
        let p = pool(&insts);
        let sel = [&insts[0], &insts[2], &insts[4]];
        assert!((mutual_information(&p, &sel).unwrap() - pair_entropy(&p).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn delta_information_terms() {
        // Independent subject/object marginals: pool term vanishes.
        let insts = pool_instances(&[((0, 0), 1), ((0, 1), 1), ((1, 0), 1), ((1, 1), 1)]);
        let p = pool(&insts);
        assert!(delta_information(&p, &[], (0, 1)).unwrap().abs() < 1e-15);
        assert!(matches!(delta_information(&p, &[], (5, 5)), Err(Error::Input(_))));

        // Three-pair toy pool checked against a direct evaluation.
        let insts = pool_instances(&[((0, 1), 2), ((0, 2), 1), ((1, 1), 1)]);
        let p = pool(&insts);
        let sel = [&insts[0], &insts[3]];
        // pool: p(0,1)=1/2, p(s=0)=3/4, p(o=1)=3/4; selection: {(0,1),(1,1)}:
        // p(0,1)=1/2, p(s=0)=1/2, p(o=1)=1.
        let expected = 0.5 * (0.5f64 / (0.75 * 0.75)).ln() + 0.5 * (0.5f64 / (0.5 * 1.0)).ln();
        assert!((delta_information(&p, &sel, (0, 1)).unwrap() - expected).abs() < 1e-15);
        // Candidate absent from an empty selection: selection term is zero.
        let pool_only = 0.25 * (0.25f64 / (0.75 * 0.25)).ln();
        assert!((delta_information(&p, &[], (0, 2)).unwrap() - pool_only).abs() < 1e-15);
    }

    #[test]
    fn unique_pair_sample_traces() {
        let insts = pool_instances(&[(A, 5), (B, 1), (C, 1)]);
        let p = pool(&insts);
        for seed in 0..20 {
            let mut rng = stream_rng(seed, Stream::Sampling);
            let three = unique_pair_sample(&p, 3, &mut rng);
            assert_eq!(pair_multiset(&three), BTreeMap::from([(A, 1), (B, 1), (C, 1)]));
            let five = unique_pair_sample(&p, 5, &mut rng);
            assert_eq!(pair_multiset(&five), BTreeMap::from([(A, 3), (B, 1), (C, 1)]));
            assert!(unique_pair_sample(&p, 0, &mut rng).is_empty());
            let all = unique_pair_sample(&p, 100, &mut rng);
            assert_eq!(all.len(), 7);
        }
    }

    #[test]
    fn unique_pair_sample_partial_pass_is_random() {
        let insts = pool_instances(&[(A, 2), (B, 2), (C, 2), (D, 2)]);
        let p = pool(&insts);
        let mut seen = BTreeSet::new();
        for seed in 0..50 {
            let s = unique_pair_sample(&p, 2, &mut stream_rng(seed, Stream::Sampling));
            assert_eq!(pair_multiset(&s).len(), 2);
            seen.insert(pair_multiset(&s).into_keys().collect::<Vec<_>>());
        }
        assert!(seen.len() > 1);
    }

    #[test]
    fn max_mi_prefers_rare_pair_on_skewed_pool() {
        let insts = pool_instances(&[(A, 9), (B, 1)]);
        let p = pool(&insts);
        let ga = delta_information(&p, &[], A).unwrap();
        let gb = delta_information(&p, &[], B).unwrap();
        assert!(gb > ga);
        let pick = max_mi_sample(&p, 1).unwrap();
        assert_eq!(pick[0].pair(), B);
        assert!(max_mi_sample(&p, 0).unwrap().is_empty());
    }

    #[test]
    fn max_mi_covers_every_type_first() {
        let insts = pool_instances(&[(A, 4), (B, 3), (C, 2), (D, 1)]);
        let p = pool(&insts);
        let s = max_mi_sample(&p, 4).unwrap();
        assert_eq!(pair_multiset(&s), BTreeMap::from([(A, 1), (B, 1), (C, 1), (D, 1)]));
    }

    #[test]
    fn max_mi_refuses_large_inputs() {
        let counts: Vec<(Pair, usize)> = (0..17).map(|i| ((i, i), 1)).collect();
        let insts = pool_instances(&counts);
        assert!(matches!(max_mi_sample(&pool(&insts), 1), Err(Error::OracleScale(_))));
        let insts = pool_instances(&[(A, 100)]);
        assert!(matches!(max_mi_sample(&pool(&insts), 65), Err(Error::OracleScale(_))));
    }

    #[test]
    fn uncertainty_uniform_model_takes_lowest_ids() {
        let insts = pool_instances(&[(A, 3), (B, 3)]);
        let mut rev: Vec<&RelationshipInstance> = insts.iter().collect();
        rev.reverse();
        let p = PairPool::new(rev).unwrap();
        let model = SoftmaxModel::zeros(3, 2);
        for v in [UncertaintyVariant::LeastConfidence, UncertaintyVariant::MaxEntropy, UncertaintyVariant::Margin] {
            let ids: Vec<usize> = uncertainty_sample(&p, 3, &model, v).unwrap().iter().map(|i| i.id).collect();
            assert_eq!(ids, vec![0, 1, 2]);
        }
    }

    #[test]
    fn least_confidence_drops_the_confident_instance() {
        // Feature[0] is the instance id; weight on it makes instance 4 confident.
        let insts = pool_instances(&[(A, 5)]);
        let mut model = SoftmaxModel::zeros(2, 2);
        model.weights[0] = vec![0.0, 0.0];
        model.bias = vec![0.0, 0.0];
        let mut confident = insts.clone();
        confident[4].feature = vec![0.0, 1.0];
        model.weights[0][1] = 0.0;
        model.weights[1][1] = 0.0;
        // Only instance 4 has feature[0] == 0 and a large second coordinate.
        model.weights[0] = vec![0.0, 4.6];
        for (i, inst) in confident.iter_mut().enumerate() {
            if i != 4 {
                inst.feature = vec![i as f64, 0.0];
            }
        }
        let p = PairPool::new(confident.iter().collect()).unwrap();
        assert!(model.probabilities(&confident[4].feature).unwrap()[0] > 0.98);
        let picked: BTreeSet<usize> = uncertainty_sample(&p, 4, &model, UncertaintyVariant::LeastConfidence)
            .unwrap()
            .iter()
            .map(|i| i.id)
            .collect();
        assert_eq!(picked, BTreeSet::from([0, 1, 2, 3]));
    }

    #[test]
    fn uncertainty_matches_brute_force_sort() {
        let mut rng = stream_rng(17, Stream::Diagnostics);
        let model = SoftmaxModel::random(4, 2, 1.5, &mut rng);
        let insts = pool_instances(&[(A, 2), (B, 2), (C, 1)]);
        let p = pool(&insts);
        for v in [UncertaintyVariant::LeastConfidence, UncertaintyVariant::MaxEntropy, UncertaintyVariant::Margin] {
            let mut scored: Vec<(f64, usize)> = insts
                .iter()
                .map(|i| {
                    let probs = model.probabilities(&i.feature).unwrap();
                    let mut s = probs.clone();
                    s.sort_by(|a, b| b.total_cmp(a));
                    let score = match v {
                        UncertaintyVariant::LeastConfidence => 1.0 - s[0],
                        UncertaintyVariant::MaxEntropy => -probs.iter().map(|q| q * q.ln()).sum::<f64>(),
                        UncertaintyVariant::Margin => s[1] - s[0],
                    };
                    (score, i.id)
                })
                .collect();
            scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            let expected: Vec<usize> = scored.iter().take(3).map(|s| s.1).collect();
            let got: Vec<usize> = uncertainty_sample(&p, 3, &model, v).unwrap().iter().map(|i| i.id).collect();
            assert_eq!(got, expected, "{v:?}");
        }
    }

    #[test]
    fn kernel_tags_round_trip() {
        for k in KernelKind::ALL {
            assert_eq!(k.tag().parse::<KernelKind>().unwrap(), k);
            assert_eq!(serde_json::to_string(&k).unwrap(), format!("\"{}\"", k.tag()));
        }
        assert!("bogus".parse::<KernelKind>().is_err());
        assert!(KernelKind::Margin.bind(None).is_err());
    }

    #[test]
    fn pool_rejects_mixed_classes() {
        let mut insts = pool_instances(&[(A, 2)]);
        insts[1].relation_label = 3;
        assert!(PairPool::new(insts.iter().collect()).is_err());
    }
}
