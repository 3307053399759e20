//! Ranking metrics, AUC and fill-in-the-blank accuracy.
//!
//! Every user is ranked against the full catalogue minus the outfits they
//! already saw (no sampled candidates), ties broken by ascending outfit id.
//! Per-user work runs on the rayon pool and is collected in user order, so
//! reports do not depend on the number of threads.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::io::Write;

use rand::seq::{IndexedRandom, SliceRandom};
use rayon::prelude::*;

use crate::dataio::Splits;
use crate::embed::ModelState;
use crate::error::{Error, Result};
use crate::propagate::{GraphContext, PropagationOutput};
use crate::rng;
use crate::score::{outfit_matrix, rec_score, rview};
use crate::train::Sampler;

/// Candidate indices sorted by descending score, ties by ascending index.
pub fn rank_by_scores(scores: &[f64], candidates: impl IntoIterator<Item = usize>) -> Vec<usize> {
    let mut c: Vec<usize> = candidates.into_iter().collect();
    c.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    c
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TopK {
    pub hr: f64,
    pub recall: f64,
    pub precision: f64,
    pub ndcg: f64,
}

/// Binary-relevance metrics of the first `k` entries of `ranking`.
/// `None` when there is nothing relevant.
pub fn topk_metrics(ranking: &[usize], relevant: &BTreeSet<usize>, k: usize) -> Option<TopK> {
    assert!(k >= 1, "k must be positive");
    if relevant.is_empty() {
        return None;
    }
    let mut hits = 0usize;
    let mut dcg = 0.0;
    for (r, o) in ranking.iter().take(k).enumerate() {
        if relevant.contains(o) {
            hits += 1;
            dcg += 1.0 / ((r + 2) as f64).log2();
        }
    }
    let idcg: f64 = (0..relevant.len().min(k)).map(|r| 1.0 / ((r + 2) as f64).log2()).sum();
    Some(TopK {
        hr: if hits > 0 { 1.0 } else { 0.0 },
        recall: hits as f64 / relevant.len() as f64,
        precision: hits as f64 / k as f64,
        ndcg: dcg / idcg,
    })
}

/// Probability that a positive outscores a negative, ties counting half.
pub fn auc(pos: &[f64], neg: &[f64]) -> Result<f64> {
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::Empty("auc needs positive and negative scores".into()));
    }
    let mut neg = neg.to_vec();
    neg.sort_by(f64::total_cmp);
    let mut wins = 0.0;
    for &p in pos {
        let below = neg.partition_point(|&n| n < p);
        let ties = neg[below..].partition_point(|&n| n <= p);
        wins += below as f64 + 0.5 * ties as f64;
    }
    Ok(wins / (pos.len() as f64 * neg.len() as f64))
}

/// Which held-out interactions count as relevant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Target {
    /// Rank against everything but training outfits; hits are validation
    /// outfits.
    Validation,
    /// Rank against everything but training and validation outfits; hits
    /// are test outfits.
    #[default]
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub k: usize,
    pub seed: u64,
    pub target: Target,
    /// Also compute compatibility AUC and FLTB accuracy on test outfits.
    pub compatibility: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            k: 10,
            seed: 0,
            target: Target::Test,
            compatibility: true,
        }
    }
}

/// All outfits the user may be recommended, best first (dense indices).
pub fn rank_outfits(
    user: usize,
    prop: &PropagationOutput,
    ctx: &GraphContext,
    splits: &Splits,
    target: Target,
) -> Vec<usize> {
    let idx = ctx.index();
    let uid = idx.users[user];
    let mut seen: BTreeSet<u64> = splits.train_of(uid).collect();
    if target == Target::Test {
        seen.extend(splits.validation_of(uid));
    }
    let h_u = prop.h_user_star.row(user);
    let scores: Vec<f64> = (0..idx.outfits.len())
        .map(|o| rec_score(h_u, prop.h_outfit_star.row(o)))
        .collect();
    rank_by_scores(&scores, (0..idx.outfits.len()).filter(|&o| !seen.contains(&idx.outfits[o])))
}

/// A masked outfit position and four candidate fillers, one of them true.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FltbTrial {
    pub outfit: usize,
    pub position: usize,
    pub candidates: [usize; 4],
    /// Slot of the true item.
    pub answer: usize,
}

/// One trial per position of every test outfit. Distractors come from the
/// compatibility negative pool, matching the masked item's category when
/// enough such items exist.
pub fn fltb_trials(ctx: &GraphContext, splits: &Splits, seed: u64) -> Vec<FltbTrial> {
    let idx = ctx.index();
    let pool: Vec<usize> = splits
        .compat_negative_pool
        .iter()
        .filter_map(|&i| idx.item(i))
        .collect();
    let mut trials = Vec::new();
    for o in splits.test_outfits().into_iter().filter_map(|o| idx.outfit(o)) {
        let items = &ctx.graph.outfit_items[o];
        if items.len() < 2 {
            continue;
        }
        let mut rng = rng::stream(seed, "fltb", o as u64);
        for (position, &truth) in items.iter().enumerate() {
            let cat = ctx.item_category[truth];
            let usable = |i: &usize| !items.contains(i);
            let same: Vec<usize> = pool.iter().copied().filter(|i| usable(i) && ctx.item_category[*i] == cat).collect();
            let mut picked: Vec<usize> = same.choose_multiple(&mut rng, 3).copied().collect();
            for fallback in [
                pool.iter().copied().filter(usable).collect::<Vec<_>>(),
                (0..ctx.item_category.len()).filter(usable).collect(),
            ] {
                if picked.len() == 3 {
                    break;
                }
                let rest: Vec<usize> = fallback.into_iter().filter(|i| !picked.contains(i)).collect();
                let need = 3 - picked.len();
                picked.extend(rest.choose_multiple(&mut rng, need).copied());
            }
            if picked.len() < 3 {
                continue;
            }
            let mut candidates = [truth, picked[0], picked[1], picked[2]];
            candidates.shuffle(&mut rng);
            let answer = candidates.iter().position(|&c| c == truth).unwrap();
            trials.push(FltbTrial {
                outfit: o,
                position,
                candidates,
                answer,
            });
        }
    }
    trials
}

/// Index of the highest score; the lowest index among ties.
pub fn fltb_choose(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// Scores the outfit with each candidate substituted and picks the best.
/// Returns the chosen slot and whether it is the true item.
pub fn fltb(
    trial: &FltbTrial,
    ctx: &GraphContext,
    prop: &PropagationOutput,
    m: &ModelState,
) -> Result<(usize, bool)> {
    let mut items = ctx.graph.outfit_items[trial.outfit].clone();
    if items.len() < 2 {
        return Err(Error::InvalidDataset(format!(
            "outfit {} has fewer than 2 items",
            ctx.index().outfits[trial.outfit]
        )));
    }
    let mut scores = [0.0; 4];
    for (s, &c) in scores.iter_mut().zip(&trial.candidates) {
        items[trial.position] = c;
        *s = rview(&outfit_matrix(&items, &prop.h_item_star), m)?.score;
    }
    let chosen = fltb_choose(&scores);
    Ok((chosen, chosen == trial.answer))
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserMetrics {
    pub user: u64,
    pub metrics: TopK,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankingReport {
    pub k: usize,
    pub target: Target,
    pub hr: f64,
    pub recall: f64,
    pub precision: f64,
    pub ndcg: f64,
    pub users_evaluated: usize,
    /// Users without held-out interactions.
    pub users_skipped: usize,
    pub auc: Option<f64>,
    pub auc_pairs: usize,
    pub fltb_accuracy: Option<f64>,
    pub fltb_trials: usize,
    pub per_user: Vec<UserMetrics>,
}

/// Ranking metrics over all users with held-out interactions, plus
/// compatibility metrics on test outfits if requested.
pub fn evaluate(
    ctx: &GraphContext,
    splits: &Splits,
    prop: &PropagationOutput,
    m: &ModelState,
    sampler: &Sampler,
    cfg: &EvalConfig,
) -> Result<RankingReport> {
    let idx = ctx.index();
    let rows: Vec<Option<UserMetrics>> = (0..idx.users.len())
        .into_par_iter()
        .map(|u| {
            let uid = idx.users[u];
            let held: BTreeSet<usize> = match cfg.target {
                Target::Validation => splits.validation_of(uid).collect::<Vec<_>>(),
                Target::Test => splits.test_of(uid).collect(),
            }
            .into_iter()
            .filter_map(|o| idx.outfit(o))
            .collect();
            if held.is_empty() {
                return None;
            }
            let ranking = rank_outfits(u, prop, ctx, splits, cfg.target);
            topk_metrics(&ranking, &held, cfg.k).map(|metrics| UserMetrics { user: uid, metrics })
        })
        .collect();
    let per_user: Vec<UserMetrics> = rows.into_iter().flatten().collect();
    let n = per_user.len();
    let mean = |f: fn(&TopK) -> f64| {
        if n == 0 {
            0.0
        } else {
            per_user.iter().map(|r| f(&r.metrics)).sum::<f64>() / n as f64
        }
    };

    let mut report = RankingReport {
        k: cfg.k,
        target: cfg.target,
        hr: mean(|t| t.hr),
        recall: mean(|t| t.recall),
        precision: mean(|t| t.precision),
        ndcg: mean(|t| t.ndcg),
        users_evaluated: n,
        users_skipped: idx.users.len() - n,
        auc: None,
        auc_pairs: 0,
        fltb_accuracy: None,
        fltb_trials: 0,
        per_user,
    };

    if cfg.compatibility {
        let test: Vec<usize> = splits
            .test_outfits()
            .into_iter()
            .filter_map(|o| idx.outfit(o))
            .collect();
        let score = |items: &[usize]| rview(&outfit_matrix(items, &prop.h_item_star), m).map(|r| r.score);
        let pos = test
            .par_iter()
            .map(|&o| score(&ctx.graph.outfit_items[o]))
            .collect::<Result<Vec<f64>>>()?;
        let neg = test
            .par_iter()
            .filter_map(|&o| {
                let mut r = rng::stream(cfg.seed, "auc", o as u64);
                sampler.negative_compat(&ctx.graph.outfit_items[o], &mut r)
            })
            .map(|items| score(&items))
            .collect::<Result<Vec<f64>>>()?;
        if !pos.is_empty() && !neg.is_empty() {
            report.auc = Some(auc(&pos, &neg)?);
            report.auc_pairs = pos.len() * neg.len();
        }

        let trials = fltb_trials(ctx, splits, cfg.seed);
        let correct = trials
            .par_iter()
            .map(|t| fltb(t, ctx, prop, m).map(|(_, ok)| ok as usize))
            .collect::<Result<Vec<usize>>>()?
            .into_iter()
            .sum::<usize>();
        report.fltb_trials = trials.len();
        if !trials.is_empty() {
            report.fltb_accuracy = Some(correct as f64 / trials.len() as f64);
        }
    }
    Ok(report)
}

impl RankingReport {
    /// Human-readable summary followed by a `[metrics]` block of
    /// `name=value` lines.
    pub fn render(&self) -> String {
        let k = self.k;
        let target = match self.target {
            Target::Validation => "validation",
            Target::Test => "test",
        };
        let opt = |x: Option<f64>| x.map_or("n/a".to_string(), |v| format!("{v:.4}"));
        let mut s = String::new();
        let _ = writeln!(s, "Ranking report ({target} interactions)");
        let _ = writeln!(
            s,
            "users evaluated: {} ({} skipped without {target} interactions)",
            self.users_evaluated, self.users_skipped
        );
        let _ = writeln!(s, "HR@{k}:        {:.4}", self.hr);
        let _ = writeln!(s, "Recall@{k}:    {:.4}", self.recall);
        let _ = writeln!(s, "Precision@{k}: {:.4}", self.precision);
        let _ = writeln!(s, "NDCG@{k}:      {:.4}", self.ndcg);
        let _ = writeln!(s, "AUC:          {} over {} pairs", opt(self.auc), self.auc_pairs);
        let _ = writeln!(s, "FLTB:         {} over {} trials", opt(self.fltb_accuracy), self.fltb_trials);
        let _ = writeln!(s, "\n[metrics]");
        let na = |x: Option<f64>| x.map_or("nan".to_string(), |v| v.to_string());
        for (name, v) in [
            ("k", k.to_string()),
            ("target", target.to_string()),
            ("hr", self.hr.to_string()),
            ("recall", self.recall.to_string()),
            ("precision", self.precision.to_string()),
            ("ndcg", self.ndcg.to_string()),
            ("auc", na(self.auc)),
            ("auc_pairs", self.auc_pairs.to_string()),
            ("fltb_accuracy", na(self.fltb_accuracy)),
            ("fltb_trials", self.fltb_trials.to_string()),
            ("users_evaluated", self.users_evaluated.to_string()),
            ("users_skipped", self.users_skipped.to_string()),
        ] {
            let _ = writeln!(s, "{name}={v}");
        }
        s
    }

    /// `user_id,HR,Recall,Precision,NDCG` rows in user-id order.
    pub fn write_per_user<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for r in &self.per_user {
            let t = &r.metrics;
            writeln!(w, "{},{},{},{},{}", r.user, t.hr, t.recall, t.precision, t.ndcg)?;
        }
        Ok(())
    }
}

/// Parses the `[metrics]` block of a rendered report.
pub fn parse_metrics(text: &str) -> Vec<(String, String)> {
    text.lines()
        .skip_while(|l| l.trim() != "[metrics]")
        .skip(1)
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect()
}

/// Scores `h_user_star` against every outfit; used for recommendation output.
pub fn score_all(user: usize, prop: &PropagationOutput) -> Vec<f64> {
    let h_u = prop.h_user_star.row(user);
    (0..prop.h_outfit_star.rows())
        .map(|o| rec_score(h_u, prop.h_outfit_star.row(o)))
        .collect()
}
