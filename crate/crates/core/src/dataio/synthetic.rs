//! Desk-scale synthetic datasets with planted style clusters.
//!
//! Users, outfits and styled items are partitioned into clusters. An item's
//! features are drawn around `style[cluster] + category_center[category]`, an
//! outfit takes one item of its own cluster per category, and users interact
//! mostly with outfits of their own cluster. A handful of items are left out
//! of every outfit; their features sit around a private random style, so
//! they are off-style for every cluster.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::{IndexedRandom, SliceRandom};
use rand_distr::{Distribution, StandardNormal};

use super::{Dataset, Item};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub users: usize,
    pub outfits: usize,
    pub items: usize,
    pub categories: usize,
    pub clusters: usize,
    pub visual_dim: usize,
    pub textual_dim: usize,
    pub outfit_size: usize,
    pub interactions_per_user: usize,
    /// Fraction of each user's interactions drawn from their own cluster.
    pub purity: f64,
    /// Standard deviation of per-item feature noise around its cluster mean.
    pub noise: f64,
    /// Items that belong to no outfit.
    pub unused_items: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            users: 20,
            outfits: 40,
            items: 60,
            categories: 6,
            clusters: 2,
            visual_dim: 32,
            textual_dim: 16,
            outfit_size: 3,
            interactions_per_user: 10,
            purity: 0.95,
            noise: 0.3,
            unused_items: 6,
        }
    }
}

impl SyntheticConfig {
    fn check(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.clusters == 0 {
            return bad("synthetic: clusters must be positive".into());
        }
        if self.users == 0 || self.outfits == 0 || self.categories == 0 {
            return bad("synthetic: users, outfits and categories must be positive".into());
        }
        if self.visual_dim == 0 || self.textual_dim == 0 {
            return bad("synthetic: feature dims must be positive".into());
        }
        if self.outfit_size < 2 || self.outfit_size > self.categories {
            return bad(format!(
                "synthetic: outfit_size {} must lie in 2..={} (number of categories)",
                self.outfit_size, self.categories
            ));
        }
        if self.items < self.categories {
            return bad(format!(
                "synthetic: {} items cannot cover {} categories",
                self.items, self.categories
            ));
        }
        let styled = self.items.saturating_sub(self.unused_items);
        if styled < self.clusters * self.categories {
            return bad(format!(
                "synthetic: {styled} styled items cannot cover {} clusters x {} categories",
                self.clusters, self.categories
            ));
        }
        if self.outfits < self.clusters {
            return bad("synthetic: need at least one outfit per cluster".into());
        }
        if !(0.0..=1.0).contains(&self.purity) || !(self.noise >= 0.0) {
            return bad("synthetic: purity must lie in [0,1] and noise be non-negative".into());
        }
        let min_cluster_outfits = self.outfits / self.clusters;
        let (own, off) = self.interaction_mix();
        if self.interactions_per_user == 0 || own > min_cluster_outfits {
            return bad(format!(
                "synthetic: {} interactions per user do not fit in {min_cluster_outfits} outfits per cluster",
                self.interactions_per_user
            ));
        }
        if self.clusters > 1 && off > self.outfits - min_cluster_outfits {
            return bad("synthetic: not enough off-cluster outfits".into());
        }
        Ok(())
    }

    /// `(own-cluster, off-cluster)` interactions per user.
    fn interaction_mix(&self) -> (usize, usize) {
        let n = self.interactions_per_user;
        let off = if self.clusters > 1 {
            ((n as f64) * (1.0 - self.purity)).floor() as usize
        } else {
            0
        };
        (n - off, off)
    }

    /// Cluster of user `u` (users are assigned round-robin).
    pub fn user_cluster(&self, u: usize) -> usize {
        u % self.clusters
    }

    /// Cluster of outfit `o` (outfits are assigned round-robin).
    pub fn outfit_cluster(&self, o: usize) -> usize {
        o % self.clusters
    }
}

fn gaussian(rng: &mut Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

fn noisy(center: &[f64], noise: f64, rng: &mut Rng) -> Vec<f32> {
    center
        .iter()
        .map(|&c| {
            let z: f64 = StandardNormal.sample(rng);
            (c + noise * z) as f32
        })
        .collect()
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

/// Ids are dense: users `0..users`, outfits `0..outfits`, items `0..items`.
pub fn generate_synthetic(cfg: &SyntheticConfig, seed: u64) -> Result<Dataset> {
    cfg.check()?;
    let mut rng = rng::stream(seed, "synthetic", 0);

    let width = cfg.categories.saturating_sub(1).to_string().len().max(2);
    let categories: Vec<String> = (0..cfg.categories)
        .map(|k| format!("cat{k:0width$}"))
        .collect();

    let style_v: Vec<_> = (0..cfg.clusters).map(|_| gaussian(&mut rng, cfg.visual_dim)).collect();
    let style_t: Vec<_> = (0..cfg.clusters).map(|_| gaussian(&mut rng, cfg.textual_dim)).collect();
    let cat_v: Vec<_> = (0..cfg.categories).map(|_| gaussian(&mut rng, cfg.visual_dim)).collect();
    let cat_t: Vec<_> = (0..cfg.categories).map(|_| gaussian(&mut rng, cfg.textual_dim)).collect();

    let styled = cfg.items - cfg.unused_items;
    let cells = cfg.clusters * cfg.categories;
    // cell index = cluster * categories + category
    let mut cell_items: Vec<Vec<u64>> = vec![Vec::new(); cells];
    let mut items = BTreeMap::new();
    for j in 0..cfg.items {
        let (category, center_v, center_t) = if j < styled {
            let cell = j % cells;
            let (cluster, category) = (cell / cfg.categories, cell % cfg.categories);
            cell_items[cell].push(j as u64);
            (
                category,
                add(&style_v[cluster], &cat_v[category]),
                add(&style_t[cluster], &cat_t[category]),
            )
        } else {
            let category = j % cfg.categories;
            let own_v = gaussian(&mut rng, cfg.visual_dim);
            let own_t = gaussian(&mut rng, cfg.textual_dim);
            (category, add(&own_v, &cat_v[category]), add(&own_t, &cat_t[category]))
        };
        let item = Item {
            category,
            visual: noisy(&center_v, cfg.noise, &mut rng),
            textual: noisy(&center_t, cfg.noise, &mut rng),
        };
        items.insert(j as u64, item);
    }

    let mut outfits = BTreeMap::new();
    let mut seen = BTreeSet::new();
    let mut cluster_outfits: Vec<Vec<u64>> = vec![Vec::new(); cfg.clusters];
    let mut cats: Vec<usize> = (0..cfg.categories).collect();
    for o in 0..cfg.outfits {
        let cluster = cfg.outfit_cluster(o);
        let mut chosen = Vec::new();
        for _attempt in 0..50 {
            cats.shuffle(&mut rng);
            let mut picked: Vec<usize> = cats[..cfg.outfit_size].to_vec();
            picked.sort_unstable();
            chosen = picked
                .iter()
                .map(|&c| *cell_items[cluster * cfg.categories + c].choose(&mut rng).unwrap())
                .collect();
            let mut key = chosen.clone();
            key.sort_unstable();
            if seen.insert(key) {
                break;
            }
        }
        cluster_outfits[cluster].push(o as u64);
        outfits.insert(o as u64, chosen);
    }

    let (own, off) = cfg.interaction_mix();
    let mut interactions = BTreeSet::new();
    for u in 0..cfg.users {
        let cluster = cfg.user_cluster(u);
        for o in cluster_outfits[cluster].choose_multiple(&mut rng, own) {
            interactions.insert((u as u64, *o));
        }
        if off > 0 {
            let others: Vec<u64> = cluster_outfits
                .iter()
                .enumerate()
                .filter(|&(c, _)| c != cluster)
                .flat_map(|(_, os)| os.iter().copied())
                .collect();
            for o in others.choose_multiple(&mut rng, off) {
                interactions.insert((u as u64, *o));
            }
        }
    }
    let ds = Dataset {
        users: (0..cfg.users as u64).collect(),
        outfits,
        items,
        interactions,
        categories,
    };
    ds.validate()?;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticConfig {
        SyntheticConfig::default()
    }

    #[test]
    fn default_config_passes_invariants() {
        let ds = generate_synthetic(&small(), 3).unwrap();
        assert_eq!(ds.users.len(), 20);
        assert_eq!(ds.outfits.len(), 40);
        assert_eq!(ds.items.len(), 60);
        assert_eq!(ds.categories.len(), 6);
        assert_eq!(ds.interactions.len(), 20 * 10);
        assert!(ds.category_histogram().iter().all(|&c| c > 0));
    }

    #[test]
    fn zero_clusters_is_an_error() {
        let cfg = SyntheticConfig {
            clusters: 0,
            ..small()
        };
        assert!(matches!(
            generate_synthetic(&cfg, 1),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn fewer_items_than_categories_is_an_error() {
        let cfg = SyntheticConfig {
            items: 4,
            unused_items: 0,
            ..small()
        };
        assert!(generate_synthetic(&cfg, 1).is_err());
    }

    #[test]
    fn generation_is_deterministic() {
        assert_eq!(
            generate_synthetic(&small(), 9).unwrap(),
            generate_synthetic(&small(), 9).unwrap()
        );
        assert_ne!(
            generate_synthetic(&small(), 9).unwrap(),
            generate_synthetic(&small(), 10).unwrap()
        );
    }

    #[test]
    fn interaction_cluster_purity_by_counting() {
        let cfg = small();
        for seed in 0..5 {
            let ds = generate_synthetic(&cfg, seed).unwrap();
            let pure = ds
                .interactions
                .iter()
                .filter(|&&(u, o)| cfg.user_cluster(u as usize) == cfg.outfit_cluster(o as usize))
                .count();
            let purity = pure as f64 / ds.interactions.len() as f64;
            assert!(purity >= 0.9, "seed {seed}: purity {purity}");
        }
    }

    #[test]
    fn outfits_are_cluster_consistent_and_leave_items_unused() {
        let cfg = small();
        let ds = generate_synthetic(&cfg, 4).unwrap();
        let cells = cfg.clusters * cfg.categories;
        let styled = (cfg.items - cfg.unused_items) as u64;
        let mut used = BTreeSet::new();
        for (&o, list) in &ds.outfits {
            assert_eq!(list.len(), cfg.outfit_size);
            for &i in list {
                assert!(i < styled);
                assert_eq!((i as usize % cells) / cfg.categories, cfg.outfit_cluster(o as usize));
                used.insert(i);
            }
        }
        for i in styled..cfg.items as u64 {
            assert!(!used.contains(&i));
        }
    }
}
