use super::*;
use crate::dataio::fixtures::tiny;
use crate::dataio::{generate_synthetic, split_interactions, Dataset, SplitScheme, Splits, SyntheticConfig};
use crate::embed::{init_model, ModelConfig};
use crate::testutil::enlarge;

/// 5 users, 8 outfits, 12 items.
fn gradient_fixture() -> Dataset {
    let cfg = SyntheticConfig {
        users: 5,
        outfits: 8,
        items: 12,
        categories: 4,
        clusters: 2,
        visual_dim: 6,
        textual_dim: 4,
        outfit_size: 3,
        interactions_per_user: 3,
        unused_items: 2,
        ..SyntheticConfig::default()
    };
    generate_synthetic(&cfg, 5).unwrap()
}

fn prepared(ds: &Dataset, model: ModelConfig) -> (GraphContext, Splits, Sampler, ModelConfig) {
    let splits = split_interactions(ds, 1, SplitScheme::PerUserHoldout);
    let ctx = GraphContext::new(ds, Some(&splits));
    let sampler = Sampler::new(ds, &ctx, &splits);
    let cfg = ctx.model_config(&model);
    (ctx, splits, sampler, cfg)
}

fn small() -> ModelConfig {
    ModelConfig {
        dim: 8,
        hidden_dim: 6,
        heads: 2,
        views: 3,
        view_hidden: 4,
        ..ModelConfig::new(0, 0, 0, 0)
    }
}

#[test]
fn bpr_identities() {
    assert!((bpr_loss(0.0) - std::f64::consts::LN_2).abs() < 1e-12);
    assert!(bpr_loss(30.0) < 1e-12 && bpr_loss(30.0) >= 0.0);
    assert!((bpr_loss(-30.0) - 30.0).abs() < 1e-12);
    assert!(bpr_loss(1e6).is_finite() && bpr_loss(-1e6).is_finite());
    let grid: Vec<f64> = (0..100).map(|k| -10.0 + 20.0 * k as f64 / 99.0).collect();
    for w in grid.windows(2) {
        assert!(bpr_loss(w[1]) < bpr_loss(w[0]));
    }
    assert_eq!(bpr_rec_loss(2.0, 1.0), bpr_comp_loss(0.5, -0.5));
}

#[test]
fn l2_term_is_a_direct_sum_of_squares() {
    let ds = gradient_fixture();
    let (ctx, _, sampler, cfg) = prepared(&ds, small());
    let m = init_model(&cfg, 0).unwrap();
    let tc = TrainConfig {
        l2: 0.25,
        ..TrainConfig::default()
    };
    let batch = sampler.sample(&mut rng::stream(0, "t", 0));
    let l = batch_loss(&ctx, &m, &batch, &tc, None).unwrap();
    let direct: f64 = m.params.to_flat().iter().map(|x| x * x).sum();
    assert!((l.l2 - 0.25 * direct).abs() < 1e-12 * direct.max(1.0));
    assert!((l.total - (l.rec + l.comp + l.l2)).abs() < 1e-12);
    assert!(l.rec >= 0.0 && l.comp >= 0.0);
}

fn check(ds: &Dataset, model: ModelConfig, seed: u64, scale: f64) -> GradientReport {
    let (ctx, _, sampler, cfg) = prepared(ds, model);
    let mut m = init_model(&cfg, seed).unwrap();
    enlarge(&mut m, scale);
    let batch = sampler.sample(&mut rng::stream(seed, "epoch", 1));
    let tc = TrainConfig {
        l2: 1e-3,
        ..TrainConfig::default()
    };
    gradient_check(&ctx, &m, &batch, &tc, 16, 1e-5).unwrap()
}

#[test]
fn total_loss_gradient_matches_finite_differences() {
    let ds = gradient_fixture();
    for (seed, scale) in [(1, 1.0), (2, 3.0)] {
        let r = check(&ds, small(), seed, scale);
        assert!(r.max_rel_error < 1e-4, "{}", r.worst);
        assert_eq!(r.groups.len(), init_model(&prepared(&ds, small()).3, 0).unwrap().params.named().len());
    }
    let with_heads = ModelConfig {
        category_heads: true,
        ..small()
    };
    let r = check(&ds, with_heads, 3, 2.0);
    assert!(r.max_rel_error < 1e-4, "{}", r.worst);
}

#[test]
fn linear_toy_gradients_are_exact() {
    let ds = gradient_fixture();
    let toy = ModelConfig {
        linear: true,
        ..small()
    };
    let r = check(&ds, toy, 4, 1.0);
    assert!(r.max_rel_error < 1e-9, "{}", r.worst);
}

#[test]
fn tied_scores_still_have_gradients() {
    // outfit 103 duplicates outfit 100 and gets the same table row, so the
    // triple (user 1, 100, 103) scores a difference of exactly zero
    let mut ds = tiny();
    ds.outfits.insert(103, vec![10, 11]);
    let (ctx, _, _, cfg) = prepared(&ds, small());
    let mut m = init_model(&cfg, 6).unwrap();
    enlarge(&mut m, 3.0);
    let row = m.params.outfit_table.row(0).to_vec();
    m.params.outfit_table.row_mut(3).copy_from_slice(&row);
    let batch = TripleBatch {
        rec: vec![RecTriple { user: 0, pos: 0, neg: 3 }],
        compat: vec![],
    };
    let tc = TrainConfig {
        l2: 0.0,
        ..TrainConfig::default()
    };
    let (loss, grad) = batch_gradient(&ctx, &m, &batch, &tc, None).unwrap();
    assert_eq!(loss.rec, std::f64::consts::LN_2);
    assert!(grad.outfit_table.sum_squares() > 0.0);
    let r = gradient_check(&ctx, &m, &batch, &tc, 0, 1e-5).unwrap();
    assert!(r.max_rel_error < 1e-4, "{}", r.worst);
}

#[test]
fn zero_learning_rate_keeps_parameters_and_matches_eval_losses() {
    let ds = gradient_fixture();
    let (ctx, _, sampler, cfg) = prepared(&ds, small());
    let m = init_model(&cfg, 7).unwrap();
    let tc = TrainConfig {
        lr: 0.0,
        embed_dropout: 0.0,
        attn_dropout: 0.0,
        batch_size: 4,
        seed: 3,
        ..TrainConfig::default()
    };
    let mut tr = Trainer::new(m.clone(), &tc);
    let stats = tr.train_epoch(&ctx, &sampler, &tc).unwrap();
    assert_eq!(tr.model, m);

    let batches = sampler.sample(&mut rng::stream(3, "epoch", 1)).minibatches(4);
    assert_eq!(stats.batches, batches.len());
    let total: f64 = batches
        .iter()
        .map(|b| batch_loss(&ctx, &m, b, &tc, None).unwrap().total)
        .sum();
    assert!((stats.l_total - total / batches.len() as f64).abs() < 1e-12);
}

#[test]
fn training_is_deterministic_and_resumable() {
    let ds = gradient_fixture();
    let (ctx, _, sampler, cfg) = prepared(&ds, small());
    let tc = TrainConfig {
        batch_size: 5,
        seed: 9,
        lr: 0.01,
        ..TrainConfig::default()
    };
    let run = |epochs: usize| {
        let mut tr = Trainer::new(init_model(&cfg, 1).unwrap(), &tc);
        let stats: Vec<EpochStats> = (0..epochs).map(|_| tr.train_epoch(&ctx, &sampler, &tc).unwrap()).collect();
        (tr, stats)
    };
    let (a, sa) = run(4);
    let (b, sb) = run(4);
    assert_eq!(a, b);
    assert_eq!(sa, sb);

    let (half, _) = run(2);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("last.state");
    half.save(&path).unwrap();
    let mut resumed = Trainer::load(&path).unwrap();
    assert_eq!(resumed, half);
    let rest: Vec<EpochStats> = (0..2).map(|_| resumed.train_epoch(&ctx, &sampler, &tc).unwrap()).collect();
    assert_eq!(resumed, a);
    assert_eq!(rest, sa[2..]);
}

#[test]
fn non_finite_loss_aborts_with_diagnostics() {
    let ds = gradient_fixture();
    let (ctx, _, sampler, cfg) = prepared(&ds, small());
    let mut m = init_model(&cfg, 1).unwrap();
    m.params.user_table.set(0, 0, f64::NAN);
    let tc = TrainConfig::default();
    let err = Trainer::new(m, &tc).train_epoch(&ctx, &sampler, &tc).unwrap_err();
    match err {
        Error::NonFiniteLoss { epoch, batch, norms, .. } => {
            assert_eq!((epoch, batch), (1, 0));
            assert!(norms.contains("user_table="));
        }
        other => panic!("unexpected {other}"),
    }
}

#[test]
fn invalid_configs_are_rejected() {
    for tc in [
        TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        },
        TrainConfig {
            embed_dropout: 1.0,
            ..TrainConfig::default()
        },
        TrainConfig {
            lr: f64::NAN,
            ..TrainConfig::default()
        },
    ] {
        assert!(matches!(tc.validate(), Err(Error::InvalidConfig(_))));
    }
}
