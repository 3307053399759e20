//! The three-level user–outfit–item graph and the category co-occurrence
//! graph that seeds item-item attention.

use std::collections::BTreeSet;
use std::io::Write;

use crate::dataio::{Dataset, ItemId, OutfitId, Splits, UserId};
use crate::error::{Error, Result};

/// Dense `0..n` indices for the sparse ids of each node type, in ascending
/// id order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeIndex {
    pub users: Vec<UserId>,
    pub outfits: Vec<OutfitId>,
    pub items: Vec<ItemId>,
}

impl NodeIndex {
    pub fn new(ds: &Dataset) -> Self {
        NodeIndex {
            users: ds.users.clone(),
            outfits: ds.outfits.keys().copied().collect(),
            items: ds.items.keys().copied().collect(),
        }
    }

    pub fn user(&self, id: UserId) -> Option<usize> {
        self.users.binary_search(&id).ok()
    }

    pub fn outfit(&self, id: OutfitId) -> Option<usize> {
        self.outfits.binary_search(&id).ok()
    }

    pub fn item(&self, id: ItemId) -> Option<usize> {
        self.items.binary_search(&id).ok()
    }
}

#[derive(Debug, Clone)]
pub struct FashionGraph {
    pub index: NodeIndex,
    /// `N_u`: outfits each user interacted with (dense, ascending).
    pub user_outfits: Vec<Vec<usize>>,
    pub outfit_users: Vec<Vec<usize>>,
    /// `N_o`: items of each outfit, in outfit order.
    pub outfit_items: Vec<Vec<usize>>,
    pub item_outfits: Vec<Vec<usize>>,
}

impl FashionGraph {
    pub fn n_users(&self) -> usize {
        self.index.users.len()
    }

    pub fn n_outfits(&self) -> usize {
        self.index.outfits.len()
    }

    pub fn n_items(&self) -> usize {
        self.index.items.len()
    }

    pub fn node_count(&self) -> usize {
        self.n_users() + self.n_outfits() + self.n_items()
    }

    /// Undirected edges: user–outfit interactions plus outfit–item memberships.
    pub fn edge_count(&self) -> usize {
        self.user_outfits.iter().map(Vec::len).sum::<usize>()
            + self.outfit_items.iter().map(Vec::len).sum::<usize>()
    }

    /// Writes `src<TAB>dst<TAB>weight` rows with `u:`, `o:` and `i:` node
    /// prefixes, for external visualization.
    pub fn write_edge_list<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for (u, outfits) in self.user_outfits.iter().enumerate() {
            for &o in outfits {
                writeln!(w, "u:{}\to:{}\t1", self.index.users[u], self.index.outfits[o])?;
            }
        }
        for (o, items) in self.outfit_items.iter().enumerate() {
            for &i in items {
                writeln!(w, "o:{}\ti:{}\t1", self.index.outfits[o], self.index.items[i])?;
            }
        }
        Ok(())
    }
}

/// Builds the graph. With `splits`, only training interactions become
/// user–outfit edges.
pub fn build_fashion_graph(ds: &Dataset, splits: Option<&Splits>) -> FashionGraph {
    let index = NodeIndex::new(ds);
    let mut user_outfits = vec![Vec::new(); index.users.len()];
    let mut outfit_users = vec![Vec::new(); index.outfits.len()];
    let edges = splits.map_or(&ds.interactions, |s| &s.train);
    for &(u, o) in edges {
        let (u, o) = (index.user(u).unwrap(), index.outfit(o).unwrap());
        user_outfits[u].push(o);
        outfit_users[o].push(u);
    }

    let mut item_outfits = vec![Vec::new(); index.items.len()];
    let outfit_items: Vec<Vec<usize>> = ds
        .outfits
        .values()
        .enumerate()
        .map(|(o, items)| {
            items
                .iter()
                .map(|&i| {
                    let i = index.item(i).unwrap();
                    if item_outfits[i].last() != Some(&o) {
                        item_outfits[i].push(o);
                    }
                    i
                })
                .collect()
        })
        .collect();

    FashionGraph {
        index,
        user_outfits,
        outfit_users,
        outfit_items,
        item_outfits,
    }
}

/// Directed category co-occurrence weights.
///
/// `co(a, b)` counts outfits containing both categories (for `a == b`,
/// outfits with at least two items of `a`), `o(b)` counts outfits containing
/// `b`, and `w(a, b) = (co(a,b)/o(b)) / Σ_k co(a,k)/o(k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoryGraph {
    n: usize,
    co_counts: Vec<u64>,
    cat_counts: Vec<u64>,
    weights: Vec<f64>,
}

impl CategoryGraph {
    pub fn n_categories(&self) -> usize {
        self.n
    }

    pub fn co_count(&self, a: usize, b: usize) -> u64 {
        self.co_counts[a * self.n + b]
    }

    pub fn cat_count(&self, c: usize) -> u64 {
        self.cat_counts[c]
    }

    /// `None` where the two categories never co-occur.
    pub fn weight(&self, a: usize, b: usize) -> Option<f64> {
        (self.co_count(a, b) > 0).then(|| self.weights[a * self.n + b])
    }

    pub fn weight_or_zero(&self, a: usize, b: usize) -> f64 {
        self.weight(a, b).unwrap_or(0.0)
    }

    /// Unordered category pairs `(a <= b, co)` by descending co-occurrence,
    /// ties by ascending `(a, b)`.
    pub fn top_pairs(&self, k: usize) -> Vec<(usize, usize, u64)> {
        let mut pairs: Vec<_> = (0..self.n)
            .flat_map(|a| (a..self.n).map(move |b| (a, b)))
            .map(|(a, b)| (a, b, self.co_count(a, b)))
            .filter(|&(_, _, c)| c > 0)
            .collect();
        pairs.sort_by(|x, y| y.2.cmp(&x.2).then((x.0, x.1).cmp(&(y.0, y.1))));
        pairs.truncate(k);
        pairs
    }

    /// Writes the directed weights as `src<TAB>dst<TAB>weight` rows.
    pub fn write_edge_list<W: Write>(&self, names: &[String], mut w: W) -> std::io::Result<()> {
        for a in 0..self.n {
            for b in 0..self.n {
                if let Some(x) = self.weight(a, b) {
                    writeln!(w, "{}\t{}\t{x}", names[a], names[b])?;
                }
            }
        }
        Ok(())
    }
}

pub fn category_cooccurrence_weights(ds: &Dataset) -> CategoryGraph {
    let n = ds.categories.len();
    let mut co_counts = vec![0u64; n * n];
    let mut cat_counts = vec![0u64; n];
    for items in ds.outfits.values() {
        let mut per_cat = vec![0usize; n];
        for i in items {
            per_cat[ds.items[i].category] += 1;
        }
        let present: Vec<usize> = (0..n).filter(|&c| per_cat[c] > 0).collect();
        for &a in &present {
            cat_counts[a] += 1;
            for &b in &present {
                if a != b || per_cat[a] >= 2 {
                    co_counts[a * n + b] += 1;
                }
            }
        }
    }

    let mut weights = vec![0.0; n * n];
    for a in 0..n {
        let row = &co_counts[a * n..(a + 1) * n];
        let total: f64 = (0..n)
            .filter(|&k| row[k] > 0)
            .map(|k| row[k] as f64 / cat_counts[k] as f64)
            .sum();
        if total > 0.0 {
            for b in 0..n {
                if row[b] > 0 {
                    weights[a * n + b] = (row[b] as f64 / cat_counts[b] as f64) / total;
                }
            }
        }
    }
    CategoryGraph {
        n,
        co_counts,
        cat_counts,
        weights,
    }
}

/// Complete graph over one outfit's items with weights inherited from the
/// category graph.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemSubgraph {
    pub outfit: OutfitId,
    pub nodes: Vec<ItemId>,
    /// `(item_a, item_b, w(c_a, c_b))` for every unordered position pair,
    /// `a` earlier in outfit order.
    pub edges: Vec<(ItemId, ItemId, f64)>,
}

pub fn outfit_item_subgraph(
    outfit: OutfitId,
    ds: &Dataset,
    cg: &CategoryGraph,
) -> Result<ItemSubgraph> {
    let nodes = ds.outfits.get(&outfit).ok_or(Error::UnknownOutfit(outfit))?.clone();
    let mut edges = Vec::with_capacity(nodes.len() * nodes.len().saturating_sub(1) / 2);
    for (p, &a) in nodes.iter().enumerate() {
        for &b in &nodes[p + 1..] {
            let w = cg.weight_or_zero(ds.items[&a].category, ds.items[&b].category);
            edges.push((a, b, w));
        }
    }
    Ok(ItemSubgraph {
        outfit,
        nodes,
        edges,
    })
}

/// For each item (dense index), the union of its co-outfit items over every
/// outfit containing it, paired with `w(c_item, c_neighbor)`. Ascending by
/// neighbor index; the item itself is excluded.
pub fn item_neighborhoods(
    ds: &Dataset,
    graph: &FashionGraph,
    cg: &CategoryGraph,
) -> Vec<Vec<(usize, f64)>> {
    let category: Vec<usize> = graph
        .index
        .items
        .iter()
        .map(|i| ds.items[i].category)
        .collect();
    (0..graph.n_items())
        .map(|i| {
            let nbrs: BTreeSet<usize> = graph.item_outfits[i]
                .iter()
                .flat_map(|&o| graph.outfit_items[o].iter().copied())
                .filter(|&j| j != i)
                .collect();
            nbrs.into_iter()
                .map(|j| (j, cg.weight_or_zero(category[i], category[j])))
                .collect()
        })
        .collect()
}
