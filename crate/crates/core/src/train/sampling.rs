//! Negative sampling for both ranking objectives.

use std::collections::{BTreeSet, HashSet};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng as _;

use crate::dataio::{Dataset, Splits};
use crate::propagate::GraphContext;
use crate::rng::Rng;

const MAX_TRIES: usize = 100;

/// A positive interaction `(user, outfit)` and a sampled outfit the user
/// never interacted with. Dense indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RecTriple {
    pub user: usize,
    pub pos: usize,
    pub neg: usize,
}

/// A real outfit and a generated non-outfit, as dense item lists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompatPair {
    pub pos: Vec<usize>,
    pub neg: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TripleBatch {
    pub rec: Vec<RecTriple>,
    pub compat: Vec<CompatPair>,
}

/// Precomputed lookups for drawing one negative per positive.
#[derive(Debug, Clone)]
pub struct Sampler {
    /// Training interactions, dense `(user, outfit)`.
    pub positives: Vec<(usize, usize)>,
    /// Training outfits (compatibility positives), dense.
    pub outfits: Vec<usize>,
    seen: Vec<BTreeSet<usize>>,
    n_outfits: usize,
    outfit_items: Vec<Vec<usize>>,
    item_category: Vec<usize>,
    by_category: Vec<Vec<usize>>,
    existing: HashSet<Vec<usize>>,
}

fn key(items: &[usize]) -> Vec<usize> {
    let mut k = items.to_vec();
    k.sort_unstable();
    k
}

impl Sampler {
    pub fn new(ds: &Dataset, ctx: &GraphContext, splits: &Splits) -> Self {
        let idx = ctx.index();
        let mut seen = vec![BTreeSet::new(); idx.users.len()];
        for &(u, o) in &ds.interactions {
            seen[idx.user(u).unwrap()].insert(idx.outfit(o).unwrap());
        }
        let positives = splits
            .train
            .iter()
            .map(|&(u, o)| (idx.user(u).unwrap(), idx.outfit(o).unwrap()))
            .collect();
        let outfits = splits
            .train_outfits()
            .into_iter()
            .map(|o| idx.outfit(o).unwrap())
            .collect();
        let mut by_category = vec![Vec::new(); ds.categories.len()];
        for (i, &c) in ctx.item_category.iter().enumerate() {
            by_category[c].push(i);
        }
        Sampler {
            positives,
            outfits,
            seen,
            n_outfits: idx.outfits.len(),
            outfit_items: ctx.graph.outfit_items.clone(),
            item_category: ctx.item_category.clone(),
            by_category,
            existing: ctx.graph.outfit_items.iter().map(|l| key(l)).collect(),
        }
    }

    /// An outfit `user` has never interacted with, if one exists.
    pub fn negative_outfit(&self, user: usize, rng: &mut Rng) -> Option<usize> {
        let seen = &self.seen[user];
        for _ in 0..MAX_TRIES {
            let o = rng.random_range(0..self.n_outfits);
            if !seen.contains(&o) {
                return Some(o);
            }
        }
        let rest: Vec<usize> = (0..self.n_outfits).filter(|o| !seen.contains(o)).collect();
        rest.choose(rng).copied()
    }

    fn acceptable(&self, items: &[usize]) -> bool {
        let k = key(items);
        k.windows(2).all(|w| w[0] != w[1]) && !self.existing.contains(&k)
    }

    /// Same category template as `outfit`, each item redrawn within its
    /// category. Falls back to swapping a single item for any other item.
    pub fn negative_compat(&self, outfit: &[usize], rng: &mut Rng) -> Option<Vec<usize>> {
        for _ in 0..MAX_TRIES {
            let cand: Vec<usize> = outfit
                .iter()
                .map(|&i| *self.by_category[self.item_category[i]].choose(rng).unwrap())
                .collect();
            if self.acceptable(&cand) {
                return Some(cand);
            }
        }
        let n_items = self.item_category.len();
        for _ in 0..MAX_TRIES {
            let mut cand = outfit.to_vec();
            let pos = rng.random_range(0..cand.len());
            cand[pos] = rng.random_range(0..n_items);
            if self.acceptable(&cand) {
                return Some(cand);
            }
        }
        None
    }

    /// One negative per positive for both objectives, shuffled.
    pub fn sample(&self, rng: &mut Rng) -> TripleBatch {
        let mut rec = Vec::with_capacity(self.positives.len());
        for &(user, pos) in &self.positives {
            match self.negative_outfit(user, rng) {
                Some(neg) => rec.push(RecTriple { user, pos, neg }),
                None => log::warn!("user {user} has interacted with every outfit; skipping"),
            }
        }
        let mut compat = Vec::with_capacity(self.outfits.len());
        for &o in &self.outfits {
            let pos = &self.outfit_items[o];
            match self.negative_compat(pos, rng) {
                Some(neg) => compat.push(CompatPair {
                    pos: pos.clone(),
                    neg,
                }),
                None => log::warn!("no negative outfit could be built for outfit {o}; skipping"),
            }
        }
        rec.shuffle(rng);
        compat.shuffle(rng);
        TripleBatch { rec, compat }
    }
}

impl TripleBatch {
    /// Splits into `n` minibatches: the recommendation triples in chunks of
    /// `batch_size`, the compatibility pairs spread evenly over them.
    pub fn minibatches(&self, batch_size: usize) -> Vec<TripleBatch> {
        let n = self.rec.len().div_ceil(batch_size.max(1)).max(1);
        let nc = self.compat.len();
        (0..n)
            .map(|b| TripleBatch {
                rec: self.rec[(b * batch_size).min(self.rec.len())..((b + 1) * batch_size).min(self.rec.len())]
                    .to_vec(),
                compat: self.compat[b * nc / n..(b + 1) * nc / n].to_vec(),
            })
            .collect()
    }
}
