//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! the process exits nonzero if any of them fails.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;
use std::time::Instant;

use fgat::dataio::{
    generate_synthetic, load_dataset, split_interactions, Dataset, DatasetPaths, Item, SplitScheme,
    SyntheticConfig,
};
use fgat::embed::{init_model, ModelConfig, ModelState};
use fgat::eval::{auc, evaluate, fltb, fltb_trials, rank_by_scores, topk_metrics, EvalConfig, Target};
use fgat::graph::category_cooccurrence_weights;
use fgat::math::Mat;
use fgat::pipeline::{cmd_evaluate, cmd_synth, cmd_train, prepare, RunConfig};
use fgat::propagate::{forward, GraphContext};
use fgat::rng;
use fgat::score::outfit_compat_score;
use fgat::train::{bpr_loss, gradient_check, Sampler, TrainConfig};
use rand::Rng as _;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn criterion_1() -> Outcome {
    let a = Mat::from_vec(3, 3, vec![0.6, 0.2, 0.2, 0.3, 0.5, 0.2, 0.1, 0.3, 0.6]);
    let c = Mat::from_vec(3, 3, vec![0.8, 0.5, 0.2, 0.4, 0.7, 0.9, 0.3, 0.5, 0.3]);
    let mut views = Vec::new();
    for r in 0..3 {
        let row = |m: &Mat| Mat::from_vec(1, 3, m.row(r).to_vec());
        views.push(outfit_compat_score(&row(&a), &row(&c)).map_err(|e| e.to_string())?);
    }
    for (got, want) in views.iter().zip([0.62, 0.65, 0.36]) {
        ensure((got - want).abs() < 1e-4, || format!("view score {got} != {want}"))?;
    }
    let s = outfit_compat_score(&a, &c).map_err(|e| e.to_string())?;
    ensure((s - 0.5433).abs() < 1e-4, || format!("final score {s}"))?;
    Ok(format!("views {views:.2?}, score {s:.4}"))
}

fn plain_item(category: usize) -> Item {
    Item {
        category,
        visual: vec![0.5, -0.5],
        textual: vec![1.0],
    }
}

fn hand_fixture() -> Dataset {
    // categories sorted: pants=0, shirt=1, shoes=2
    let items: BTreeMap<u64, Item> = [(1, 1), (2, 0), (3, 1), (4, 0), (5, 1), (6, 2)]
        .into_iter()
        .map(|(id, c)| (id, plain_item(c)))
        .collect();
    let outfits = [(10, vec![1, 2]), (11, vec![3, 4]), (12, vec![5, 6])].into_iter().collect();
    Dataset {
        users: vec![1],
        outfits,
        items,
        interactions: [(1, 10), (1, 11), (1, 12)].into_iter().collect(),
        categories: vec!["pants".into(), "shirt".into(), "shoes".into()],
    }
}

fn worst_row_error(ds: &Dataset) -> (f64, usize) {
    let cg = category_cooccurrence_weights(ds);
    let n = cg.n_categories();
    let mut worst = 0.0f64;
    let mut rows = 0;
    for a in 0..n {
        let ws: Vec<f64> = (0..n).filter_map(|b| cg.weight(a, b)).collect();
        if ws.is_empty() {
            continue;
        }
        rows += 1;
        worst = worst.max((ws.iter().sum::<f64>() - 1.0).abs());
    }
    (worst, rows)
}

fn criterion_2() -> Outcome {
    let hand = category_cooccurrence_weights(&hand_fixture());
    ensure(hand.weight(1, 0) == Some(0.5) && hand.weight(1, 2) == Some(0.5), || {
        format!("w(shirt,pants)={:?} w(shirt,shoes)={:?}", hand.weight(1, 0), hand.weight(1, 2))
    })?;

    let synthetic = generate_synthetic(&SyntheticConfig::default(), 0).map_err(|e| e.to_string())?;
    let (e_syn, r_syn) = worst_row_error(&synthetic);

    // a corpus written to disk in the interchange format and read back
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut cfg = RunConfig::default();
    cfg.seed = Some(11);
    cfg.synthetic_cfg = SyntheticConfig {
        categories: 9,
        outfit_size: 4,
        outfits: 70,
        items: 120,
        ..SyntheticConfig::default()
    };
    cmd_synth(&cfg, dir.path()).map_err(|e| e.to_string())?;
    let ingested = load_dataset(&DatasetPaths::in_dir(dir.path())).map_err(|e| e.to_string())?;
    let (e_ing, r_ing) = worst_row_error(&ingested);

    ensure(e_syn < 1e-9 && e_ing < 1e-9, || format!("row sum errors {e_syn:e} / {e_ing:e}"))?;
    ensure(r_syn > 0 && r_ing > 0, || "no category rows checked".into())?;
    Ok(format!(
        "hand fixture 0.5/0.5; worst row error {e_syn:.1e} over {r_syn} rows (synthetic), {e_ing:.1e} over {r_ing} rows (ingested)"
    ))
}

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
    generate_synthetic(&cfg, 5).expect("fixture")
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let ds = gradient_fixture();
    ensure(ds.users.len() <= 5 && ds.outfits.len() <= 8 && ds.items.len() <= 12, || {
        "fixture too large".into()
    })?;
    let splits = split_interactions(&ds, 1, SplitScheme::PerUserHoldout);
    let ctx = GraphContext::new(&ds, Some(&splits));
    let sampler = Sampler::new(&ds, &ctx, &splits);
    let small = ModelConfig {
        dim: 8,
        hidden_dim: 6,
        heads: 2,
        views: 3,
        view_hidden: 4,
        ..ModelConfig::new(0, 0, 0, 0)
    };
    let tc = TrainConfig {
        l2: 1e-3,
        ..TrainConfig::default()
    };
    // (model, init seed, weight scale, entries checked per tensor; 0 = all)
    let cases = [
        (small.clone(), 1, 1.0, 0),
        (small.clone(), 2, 2.0, 0),
        (ModelConfig { category_heads: true, ..small }, 3, 2.0, 0),
        (ModelConfig::new(0, 0, 0, 0), 4, 1.0, 24),
    ];
    let mut worst = 0.0f64;
    let mut checked = 0;
    let mut groups = 0;
    for (base, seed, scale, per_tensor) in cases {
        let mut m = init_model(&ctx.model_config(&base), seed).map_err(|e| e.to_string())?;
        for (_, t) in m.params.named_mut() {
            t.as_mut_slice().iter_mut().for_each(|x| *x *= scale);
        }
        let batch = sampler.sample(&mut rng::stream(seed, "epoch", 1));
        let r = gradient_check(&ctx, &m, &batch, &tc, per_tensor, 1e-5).map_err(|e| e.to_string())?;
        ensure(r.groups.len() == m.params.named().len(), || "a parameter group was skipped".into())?;
        ensure(r.max_rel_error < 1e-4, || format!("max relative error {:e} at {}", r.max_rel_error, r.worst))?;
        worst = worst.max(r.max_rel_error);
        checked += r.checked;
        groups = groups.max(r.groups.len());
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 60.0, || format!("took {secs:.1}s"))?;
    Ok(format!("max relative error {worst:.1e} over {checked} entries in up to {groups} groups, {secs:.1}s"))
}

fn with_isolated_nodes() -> Dataset {
    let mut ds = gradient_fixture();
    let user = ds.users.last().unwrap() + 1;
    ds.users.push(user);
    let item = ds.items.keys().last().unwrap() + 1;
    let template = ds.items.values().next().unwrap().clone();
    ds.items.insert(item, template);
    ds
}

fn criterion_4() -> Outcome {
    let ds = with_isolated_nodes();
    ds.validate().map_err(|e| e.to_string())?;
    let ctx = GraphContext::new(&ds, None);
    let base = ModelConfig {
        dim: 8,
        hidden_dim: 6,
        heads: 3,
        views: 2,
        view_hidden: 4,
        ..ModelConfig::new(0, 0, 0, 0)
    };
    let m = init_model(&ctx.model_config(&base), 9).map_err(|e| e.to_string())?;

    let mut worst_sum = 0.0f64;
    let mut outputs = vec![forward(&ctx, &m, None).map_err(|e| e.to_string())?];
    let mut r = rng::stream(9, "dropout", 0);
    let dropout = fgat::propagate::Dropout {
        embedding: 0.2,
        attention: 0.3,
        rng: &mut r,
    };
    outputs.push(forward(&ctx, &m, Some(dropout)).map_err(|e| e.to_string())?);
    for out in &outputs {
        for (level, alpha) in fgat::embed::Level::ALL.iter().zip(&out.alpha) {
            let topo = ctx.topology(*level);
            for head in alpha {
                for t in 0..topo.n_targets() {
                    let e = topo.edges(t);
                    if e.is_empty() {
                        continue;
                    }
                    let s: f64 = head[e].iter().sum();
                    worst_sum = worst_sum.max((s - 1.0).abs());
                }
            }
        }
    }
    ensure(worst_sum < 1e-6, || format!("alpha sum off by {worst_sum:e}"))?;

    let out = &outputs[0];
    let idx = ctx.index();
    let u = idx.users.len() - 1;
    let i = idx.items.len() - 1;
    ensure(out.h_user_star.row(u).iter().zip(out.h_user.row(u)).all(|(a, b)| a.to_bits() == b.to_bits()), || {
        "isolated user changed".into()
    })?;
    ensure(out.h_item_star.row(i).iter().zip(out.h_item.row(i)).all(|(a, b)| a.to_bits() == b.to_bits()), || {
        "isolated item changed".into()
    })?;

    let mut multi = m.clone();
    for lp in &mut multi.params.levels {
        let first = lp.heads[0].clone();
        lp.heads.iter_mut().for_each(|h| *h = first.clone());
    }
    let mut single = multi.clone();
    single.config.heads = 1;
    single.params.levels.iter_mut().for_each(|lp| lp.heads.truncate(1));
    let a = forward(&ctx, &multi, None).map_err(|e| e.to_string())?;
    let b = forward(&ctx, &single, None).map_err(|e| e.to_string())?;
    let mut head_gap = 0.0f64;
    for (x, y) in [
        (&a.h_item_star, &b.h_item_star),
        (&a.h_outfit_star, &b.h_outfit_star),
        (&a.h_user_star, &b.h_user_star),
    ] {
        for (p, q) in x.as_slice().iter().zip(y.as_slice()) {
            head_gap = head_gap.max((p - q).abs());
        }
    }
    ensure(head_gap < 1e-12, || format!("identical heads differ from one head by {head_gap:e}"))?;
    Ok(format!(
        "worst alpha sum error {worst_sum:.1e}; isolated user and item unchanged bitwise; head gap {head_gap:.1e}"
    ))
}

/// Position of every candidate by counting who beats it.
fn brute_force_order(scores: &[f64], candidates: &[usize]) -> Vec<usize> {
    let mut order = vec![usize::MAX; candidates.len()];
    for &o in candidates {
        let ahead = candidates
            .iter()
            .filter(|&&p| scores[p] > scores[o] || (scores[p] == scores[o] && p < o))
            .count();
        order[ahead] = o;
    }
    order
}

fn brute_force_metrics(order: &[usize], relevant: &BTreeSet<usize>, k: usize) -> [f64; 4] {
    let top = &order[..k.min(order.len())];
    let hits = top.iter().filter(|o| relevant.contains(o)).count();
    let mut dcg = 0.0;
    for (pos, o) in top.iter().enumerate() {
        if relevant.contains(o) {
            dcg += 1.0 / (pos as f64 + 2.0).log2();
        }
    }
    let mut idcg = 0.0;
    for pos in 0..relevant.len().min(k) {
        idcg += 1.0 / (pos as f64 + 2.0).log2();
    }
    [
        if hits > 0 { 1.0 } else { 0.0 },
        hits as f64 / relevant.len() as f64,
        hits as f64 / k as f64,
        dcg / idcg,
    ]
}

fn brute_force_auc(pos: &[f64], neg: &[f64]) -> f64 {
    let mut wins = 0.0;
    for p in pos {
        for n in neg {
            wins += if p > n {
                1.0
            } else if p == n {
                0.5
            } else {
                0.0
            };
        }
    }
    wins / (pos.len() * neg.len()) as f64
}

fn criterion_5() -> Outcome {
    let mut r = rng::stream(2024, "oracle", 0);
    let mut users_checked = 0;
    let mut auc_checked = 0;
    for instance in 0..100 {
        let n_users = r.random_range(1..=10);
        let n_outfits = r.random_range(2..=20);
        let k = r.random_range(1..=n_outfits);
        // coarse levels so ties are common
        let levels = r.random_range(2..=8);
        let mut sums = [0.0; 4];
        let mut brute_sums = [0.0; 4];
        let mut pos = Vec::new();
        let mut neg = Vec::new();
        for _ in 0..n_users {
            let scores: Vec<f64> = (0..n_outfits).map(|_| r.random_range(0..levels) as f64 / levels as f64).collect();
            let candidates: Vec<usize> = (0..n_outfits).filter(|_| r.random_bool(0.8)).collect();
            let relevant: BTreeSet<usize> = candidates.iter().copied().filter(|_| r.random_bool(0.3)).collect();
            let ranking = rank_by_scores(&scores, candidates.iter().copied());
            let order = brute_force_order(&scores, &candidates);
            ensure(ranking == order, || format!("instance {instance}: ranking differs"))?;
            for &o in &candidates {
                if relevant.contains(&o) {
                    pos.push(scores[o]);
                } else {
                    neg.push(scores[o]);
                }
            }
            match topk_metrics(&ranking, &relevant, k) {
                None => ensure(relevant.is_empty(), || format!("instance {instance}: metrics missing"))?,
                Some(m) => {
                    let got = [m.hr, m.recall, m.precision, m.ndcg];
                    let want = brute_force_metrics(&order, &relevant, k);
                    ensure(got == want, || format!("instance {instance}: {got:?} != {want:?}"))?;
                    for j in 0..4 {
                        sums[j] += got[j];
                        brute_sums[j] += want[j];
                    }
                    users_checked += 1;
                }
            }
        }
        ensure(sums == brute_sums, || format!("instance {instance}: user means differ"))?;
        if !pos.is_empty() && !neg.is_empty() {
            let a = auc(&pos, &neg).map_err(|e| e.to_string())?;
            let b = brute_force_auc(&pos, &neg);
            ensure(a == b, || format!("instance {instance}: auc {a} != {b}"))?;
            auc_checked += 1;
        } else {
            ensure(auc(&pos, &neg).is_err(), || format!("instance {instance}: auc accepted an empty side"))?;
        }
    }
    Ok(format!("100 instances, {users_checked} user rankings and {auc_checked} AUC values identical"))
}

fn default_run(out: &Path, seed: u64) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.seed = Some(seed);
    cfg.synthetic = true;
    cfg.out = out.to_path_buf();
    cfg.train.epochs = 50;
    cfg.train.seed = seed;
    cfg
}

fn binomial_ratio(c: usize, r: usize, k: usize) -> f64 {
    // C(c - r, k) / C(c, k)
    if k > c - r {
        return 0.0;
    }
    (0..k).map(|j| (c - r - j) as f64 / (c - j) as f64).product()
}

fn criterion_6() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = default_run(dir.path(), 0);
    let prep = prepare(&cfg).map_err(|e| e.to_string())?;
    let mc = prep.ctx.model_config(&cfg.model);
    ensure(mc.dim == 64 && mc.heads == 4 && mc.views == 6 && cfg.train.lr == 0.001, || {
        "not the default hyperparameters (d=64, 4 heads, R=6, lr 0.001)".into()
    })?;

    // untrained references pooled over initializations
    let ecfg = EvalConfig {
        k: cfg.k,
        seed: 0,
        target: Target::Test,
        compatibility: false,
    };
    let trials = fltb_trials(&prep.ctx, &prep.splits, 0);
    let (mut correct, mut total, mut hr) = (0usize, 0usize, 0.0);
    let inits = 20;
    for s in 0..inits {
        let m: ModelState = init_model(&mc, 1000 + s).map_err(|e| e.to_string())?;
        let prop = forward(&prep.ctx, &m, None).map_err(|e| e.to_string())?;
        for t in &trials {
            correct += fltb(t, &prep.ctx, &prop, &m).map_err(|e| e.to_string())?.1 as usize;
            total += 1;
        }
        hr += evaluate(&prep.ctx, &prep.splits, &prop, &m, &prep.sampler, &ecfg)
            .map_err(|e| e.to_string())?
            .hr;
    }
    let base_fltb = correct as f64 / total as f64;
    let base_hr = hr / inits as f64;
    let idx = prep.ctx.index();
    let mut chance = 0.0;
    let mut users = 0;
    for &u in &idx.users {
        let relevant = prep.splits.test_of(u).count();
        if relevant == 0 {
            continue;
        }
        let seen = prep.splits.train_of(u).count() + prep.splits.validation_of(u).count();
        let c = idx.outfits.len() - seen;
        chance += 1.0 - binomial_ratio(c, relevant, cfg.k);
        users += 1;
    }
    chance /= users as f64;
    ensure((base_fltb - 0.25).abs() <= 0.05, || format!("untrained FLTB {base_fltb:.3}"))?;

    let outcome = cmd_train(&cfg, false).map_err(|e| e.to_string())?;
    let best = cmd_evaluate(&cfg, None).map_err(|e| e.to_string())?;
    // the resumable state holds the parameters after the last epoch
    let report = cmd_evaluate(&cfg, Some(&dir.path().join("last.state"))).map_err(|e| e.to_string())?;
    let fltb_acc = report.fltb_accuracy.unwrap_or(0.0);
    let secs = start.elapsed().as_secs_f64();
    ensure(report.hr >= 0.8, || format!("HR@10 {:.3}", report.hr))?;
    ensure(fltb_acc >= 0.9, || format!("FLTB {fltb_acc:.3}"))?;
    ensure(report.hr > base_hr && report.hr > chance, || "training did not beat the baselines".into())?;
    ensure(secs < 300.0, || format!("took {secs:.0}s"))?;
    Ok(format!(
        "after 50 epochs HR@10 {:.3} (untrained {base_hr:.3}, chance {chance:.3}), FLTB {fltb_acc:.3} (untrained {base_fltb:.3} over {total} trials); best-validation checkpoint from epoch {} has HR@10 {:.3}, FLTB {:.3}; {secs:.1}s",
        report.hr,
        outcome.best_epoch,
        best.hr,
        best.fltb_accuracy.unwrap_or(0.0)
    ))
}

const RUN_FILES: [&str; 6] = ["config.txt", "model.ckpt", "last.state", "train.log", "report.txt", "per_user.csv"];

fn run_once(out: &Path, threads: usize) -> Result<BTreeMap<&'static str, Vec<u8>>, String> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| e.to_string())?;
    let cfg = default_run(out, 3);
    pool.install(|| {
        cmd_train(&cfg, false)?;
        cmd_evaluate(&cfg, None)
    })
    .map_err(|e| e.to_string())?;
    RUN_FILES
        .iter()
        .map(|&f| fs::read(out.join(f)).map(|b| (f, b)).map_err(|e| format!("{f}: {e}")))
        .collect()
}

fn criterion_7() -> Outcome {
    let dirs: Vec<_> = (0..2).map(|_| tempfile::tempdir()).collect::<Result<_, _>>().map_err(|e| e.to_string())?;
    let a = run_once(dirs[0].path(), 1)?;
    let b = run_once(dirs[1].path(), 1)?;
    for f in RUN_FILES {
        // config.txt records the output directory, which differs by design
        if f == "config.txt" {
            continue;
        }
        ensure(a[f] == b[f], || format!("{f} differs between identical runs"))?;
    }

    let mut reports = Vec::new();
    for threads in [1, 2, 4] {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| e.to_string())?;
        let eval_dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let cfg = default_run(eval_dir.path(), 3);
        let ckpt = dirs[0].path().join("model.ckpt");
        pool.install(|| cmd_evaluate(&cfg, Some(&ckpt))).map_err(|e| e.to_string())?;
        reports.push((
            fs::read(eval_dir.path().join("report.txt")).map_err(|e| e.to_string())?,
            fs::read(eval_dir.path().join("per_user.csv")).map_err(|e| e.to_string())?,
        ));
    }
    ensure(reports.windows(2).all(|w| w[0] == w[1]), || "reports depend on the thread count".into())?;
    ensure(reports[0].0 == a["report.txt"], || "re-evaluation changed the report".into())?;
    Ok("checkpoint, state, log and reports byte-identical; reports equal with 1, 2 and 4 threads".into())
}

fn criterion_8() -> Outcome {
    let at0 = bpr_loss(0.0);
    ensure((at0 - std::f64::consts::LN_2).abs() <= 1e-12, || format!("loss(0) = {at0}"))?;
    let grid: Vec<f64> = (0..100).map(|k| -20.0 + 40.0 * k as f64 / 99.0).collect();
    for w in grid.windows(2) {
        ensure(bpr_loss(w[1]) < bpr_loss(w[0]), || format!("not decreasing between {} and {}", w[0], w[1]))?;
    }
    Ok(format!("loss(0) = {at0:.15}, strictly decreasing on 100 points in [-20, 20]"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("worked compatibility example", criterion_1),
        ("co-occurrence normalization", criterion_2),
        ("gradient check", criterion_3),
        ("attention invariants", criterion_4),
        ("metric oracle", criterion_5),
        ("training sanity", criterion_6),
        ("determinism", criterion_7),
        ("BPR identities", criterion_8),
    ];
    let mut failed = 0;
    for (n, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => println!("criterion {}: PASS  {name}: {detail}", n + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {}: FAIL  {name}: {why}", n + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
