//! Datasets: in-memory representation, on-disk formats, splitting and the
//! synthetic generator.

mod format;
mod split;
mod synthetic;

use std::collections::{BTreeMap, BTreeSet};

pub use format::{
    load_dataset, read_features, write_dataset, write_features, DatasetPaths, FeatureTable,
    FEATURE_MAGIC, FEATURE_VERSION,
};
pub use split::{split_interactions, SplitScheme, Splits};
pub use synthetic::{generate_synthetic, SyntheticConfig};

use crate::error::{Error, Result};

pub type UserId = u64;
pub type OutfitId = u64;
pub type ItemId = u64;

#[derive(Debug, Clone, PartialEq)]
pub struct Item {
    /// Index into [`Dataset::categories`].
    pub category: usize,
    pub visual: Vec<f32>,
    pub textual: Vec<f32>,
}

/// Users, outfits, items and the user–outfit interactions between them.
///
/// `users` is kept sorted; `categories` is sorted by name so that loading a
/// written dataset reproduces the same category indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub users: Vec<UserId>,
    pub outfits: BTreeMap<OutfitId, Vec<ItemId>>,
    pub items: BTreeMap<ItemId, Item>,
    pub interactions: BTreeSet<(UserId, OutfitId)>,
    pub categories: Vec<String>,
}

impl Dataset {
    pub fn visual_dim(&self) -> usize {
        self.items.values().next().map_or(0, |i| i.visual.len())
    }

    pub fn textual_dim(&self) -> usize {
        self.items.values().next().map_or(0, |i| i.textual.len())
    }

    /// Interactions of `user`, in ascending outfit order.
    pub fn user_interactions(&self, user: UserId) -> impl Iterator<Item = OutfitId> + '_ {
        self.interactions
            .range((user, OutfitId::MIN)..=(user, OutfitId::MAX))
            .map(|&(_, o)| o)
    }

    pub fn validate(&self) -> Result<()> {
        if self.users.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidDataset(
                "user list must be strictly ascending".into(),
            ));
        }
        if self.categories.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidDataset(
                "category list must be sorted and unique".into(),
            ));
        }

        let d_v = self.visual_dim();
        let d_t = self.textual_dim();
        for (&id, item) in &self.items {
            if item.category >= self.categories.len() {
                return Err(Error::DanglingReference(format!(
                    "item {id} has category index {} but only {} categories exist",
                    item.category,
                    self.categories.len()
                )));
            }
            if item.visual.len() != d_v {
                return Err(Error::DimensionMismatch(format!(
                    "item {id} has visual dim {} but corpus dim is {d_v}",
                    item.visual.len()
                )));
            }
            if item.textual.len() != d_t {
                return Err(Error::DimensionMismatch(format!(
                    "item {id} has textual dim {} but corpus dim is {d_t}",
                    item.textual.len()
                )));
            }
        }

        for (&oid, items) in &self.outfits {
            if items.len() < 2 {
                return Err(Error::InvalidDataset(format!(
                    "outfit {oid} has {} item(s); at least 2 are required",
                    items.len()
                )));
            }
            if let Some(missing) = items.iter().find(|i| !self.items.contains_key(i)) {
                return Err(Error::DanglingReference(format!(
                    "outfit {oid} references missing item {missing}"
                )));
            }
        }

        for &(u, o) in &self.interactions {
            if self.users.binary_search(&u).is_err() {
                return Err(Error::DanglingReference(format!(
                    "interaction ({u}, {o}) references missing user {u}"
                )));
            }
            if !self.outfits.contains_key(&o) {
                return Err(Error::DanglingReference(format!(
                    "interaction ({u}, {o}) references missing outfit {o}"
                )));
            }
        }
        Ok(())
    }

    /// Number of items per category, indexed like `categories`.
    pub fn category_histogram(&self) -> Vec<usize> {
        let mut hist = vec![0; self.categories.len()];
        for item in self.items.values() {
            hist[item.category] += 1;
        }
        hist
    }
}


#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;

    #[test]
    fn tiny_fixture_is_valid() {
        let ds = tiny();
        ds.validate().unwrap();
        assert_eq!(ds.interactions.len(), 4);
        assert_eq!(ds.user_interactions(2).collect::<Vec<_>>(), vec![101, 102]);
    }

    #[test]
    fn missing_item_is_dangling() {
        let mut ds = tiny();
        ds.outfits.insert(103, vec![10, 99]);
        assert!(matches!(ds.validate(), Err(Error::DanglingReference(m)) if m.contains("99")));
    }

    #[test]
    fn visual_dim_mismatch_is_reported() {
        let mut ds = tiny();
        for (k, item) in ds.items.values_mut().enumerate() {
            item.visual = vec![0.0; if k == 3 { 8 } else { 16 }];
        }
        assert!(matches!(ds.validate(), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn singleton_outfit_is_rejected() {
        let mut ds = tiny();
        ds.outfits.insert(103, vec![10]);
        assert!(matches!(ds.validate(), Err(Error::InvalidDataset(_))));
    }

    #[test]
    fn interaction_with_unknown_user_is_dangling() {
        let mut ds = tiny();
        ds.interactions.insert((9, 100));
        assert!(matches!(ds.validate(), Err(Error::DanglingReference(_))));
    }
}
