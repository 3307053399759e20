use std::collections::BTreeSet;

use rand::seq::SliceRandom;

use super::{Dataset, ItemId, OutfitId, UserId};
use crate::rng;

/// How each user's interactions are divided.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SplitScheme {
    /// 20% test, then 10% of the remaining training portion as validation.
    #[default]
    PerUserHoldout,
    /// 80% train, 10% validation, 10% test of each user's interactions.
    EightyTenTen,
}

impl std::str::FromStr for SplitScheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "holdout" | "per-user-holdout" => Ok(SplitScheme::PerUserHoldout),
            "80-10-10" => Ok(SplitScheme::EightyTenTen),
            other => Err(format!(
                "unknown split scheme {other:?} (expected holdout or 80-10-10)"
            )),
        }
    }
}

impl std::fmt::Display for SplitScheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SplitScheme::PerUserHoldout => "holdout",
            SplitScheme::EightyTenTen => "80-10-10",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Splits {
    pub train: BTreeSet<(UserId, OutfitId)>,
    pub validation: BTreeSet<(UserId, OutfitId)>,
    pub test: BTreeSet<(UserId, OutfitId)>,
    /// Items that appear in no outfit of the training interactions.
    pub compat_negative_pool: BTreeSet<ItemId>,
}

fn user_slice(
    set: &BTreeSet<(UserId, OutfitId)>,
    user: UserId,
) -> impl Iterator<Item = OutfitId> + '_ {
    set.range((user, OutfitId::MIN)..=(user, OutfitId::MAX))
        .map(|&(_, o)| o)
}

impl Splits {
    pub fn train_of(&self, user: UserId) -> impl Iterator<Item = OutfitId> + '_ {
        user_slice(&self.train, user)
    }

    pub fn validation_of(&self, user: UserId) -> impl Iterator<Item = OutfitId> + '_ {
        user_slice(&self.validation, user)
    }

    pub fn test_of(&self, user: UserId) -> impl Iterator<Item = OutfitId> + '_ {
        user_slice(&self.test, user)
    }

    /// Distinct outfits that appear in training interactions.
    pub fn train_outfits(&self) -> BTreeSet<OutfitId> {
        self.train.iter().map(|&(_, o)| o).collect()
    }

    /// Distinct outfits that appear in test interactions.
    pub fn test_outfits(&self) -> BTreeSet<OutfitId> {
        self.test.iter().map(|&(_, o)| o).collect()
    }
}

/// `(train, validation, test)` sizes for a user with `n` interactions.
pub fn split_sizes(n: usize, scheme: SplitScheme) -> (usize, usize, usize) {
    if n < 2 {
        return (n, 0, 0);
    }
    let (test, val) = match scheme {
        SplitScheme::PerUserHoldout => {
            let test = (n / 5).max(1);
            let rest = n - test;
            (test, rest.div_ceil(10).min(rest - 1))
        }
        SplitScheme::EightyTenTen => {
            let test = (n / 10).max(1);
            let rest = n - test;
            (test, (n / 10).min(rest - 1))
        }
    };
    (n - test - val, val, test)
}

pub fn split_interactions(ds: &Dataset, seed: u64, scheme: SplitScheme) -> Splits {
    let mut train = BTreeSet::new();
    let mut validation = BTreeSet::new();
    let mut test = BTreeSet::new();

    for &user in &ds.users {
        let mut outfits: Vec<OutfitId> = ds.user_interactions(user).collect();
        let (_, n_val, n_test) = split_sizes(outfits.len(), scheme);
        outfits.shuffle(&mut rng::stream(seed, "split", user));
        for (k, o) in outfits.into_iter().enumerate() {
            let bucket = if k < n_test {
                &mut test
            } else if k < n_test + n_val {
                &mut validation
            } else {
                &mut train
            };
            bucket.insert((user, o));
        }
    }

    let seen: BTreeSet<ItemId> = train
        .iter()
        .flat_map(|(_, o)| ds.outfits[o].iter().copied())
        .collect();
    let compat_negative_pool = ds
        .items
        .keys()
        .copied()
        .filter(|i| !seen.contains(i))
        .collect();

    Splits {
        train,
        validation,
        test,
        compat_negative_pool,
    }
}
