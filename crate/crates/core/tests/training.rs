use fgat::dataio::{generate_synthetic, split_interactions, SplitScheme, SyntheticConfig};
use fgat::embed::{init_model, ModelConfig};
use fgat::propagate::GraphContext;
use fgat::train::{Sampler, TrainConfig, Trainer};

fn losses(seed: u64) -> Vec<f64> {
    let ds = generate_synthetic(&SyntheticConfig::default(), seed).unwrap();
    let splits = split_interactions(&ds, seed, SplitScheme::PerUserHoldout);
    let ctx = GraphContext::new(&ds, Some(&splits));
    let sampler = Sampler::new(&ds, &ctx, &splits);
    let tc = TrainConfig {
        seed,
        ..TrainConfig::default()
    };
    let model = init_model(&ctx.model_config(&ModelConfig::new(0, 0, 0, 0)), seed).unwrap();
    let mut trainer = Trainer::new(model, &tc);
    (0..tc.epochs)
        .map(|_| trainer.train_epoch(&ctx, &sampler, &tc).unwrap().l_total)
        .collect()
}

#[test]
fn total_loss_trends_down_over_fifty_epochs() {
    for seed in [0, 1] {
        let l = losses(seed);
        assert_eq!(l.len(), 50);
        assert!(l.iter().all(|x| x.is_finite() && *x > 0.0));
        let head: f64 = l[..10].iter().sum::<f64>() / 10.0;
        let tail: f64 = l[40..].iter().sum::<f64>() / 10.0;
        assert!(tail < 0.75 * head, "seed {seed}: first ten {head:.4}, last ten {tail:.4}");
    }
}
