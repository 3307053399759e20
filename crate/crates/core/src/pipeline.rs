//! End-to-end runs driven by one `key=value` configuration.
//!
//! Every stage derives its randomness from the run seed through named
//! streams, so `(inputs, seed)` determine every output file byte for byte.
//! Output directory layout:
//!
//! ```text
//! config.txt     resolved configuration
//! train.log      epoch,L_rec,L_comp,L_total,val_HR@10,val_NDCG@10
//! model.ckpt     best-validation model (f32)
//! last.state     latest model + optimizer state (f64), for --resume
//! report.txt     evaluation report
//! per_user.csv   user_id,HR,Recall,Precision,NDCG
//! ```

use std::fmt;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use crate::dataio::{
    generate_synthetic, load_dataset, split_interactions, write_dataset, write_features, Dataset,
    DatasetPaths, FeatureTable, SplitScheme, Splits, SyntheticConfig,
};
use crate::embed::{init_model, Checkpoint, ModelConfig, ModelState};
use crate::error::{Error, Result};
use crate::eval::{evaluate, fltb, fltb_trials, rank_outfits, score_all, EvalConfig, RankingReport, Target};
use crate::math::Mat;
use crate::propagate::{forward, GraphContext};
use crate::train::{EpochStats, Sampler, TrainConfig, Trainer};

pub const CONFIG_FILE: &str = "config.txt";
pub const LOG_FILE: &str = "train.log";
pub const MODEL_FILE: &str = "model.ckpt";
pub const STATE_FILE: &str = "last.state";
pub const REPORT_FILE: &str = "report.txt";
pub const PER_USER_FILE: &str = "per_user.csv";

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Required; there is no clock-based fallback.
    pub seed: Option<u64>,
    pub data_dir: Option<PathBuf>,
    pub synthetic: bool,
    pub synthetic_cfg: SyntheticConfig,
    pub out: PathBuf,
    pub split: SplitScheme,
    pub train: TrainConfig,
    /// Hyperparameters only; sizes come from the data.
    pub model: ModelConfig,
    pub k: usize,
    /// Worker threads for evaluation (0 = rayon default).
    pub threads: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: None,
            data_dir: None,
            synthetic: false,
            synthetic_cfg: SyntheticConfig::default(),
            out: PathBuf::from("run"),
            split: SplitScheme::default(),
            train: TrainConfig::default(),
            model: ModelConfig::new(0, 0, 0, 0),
            k: 10,
            threads: 0,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("{key}: cannot parse {value:?}")))
}

impl RunConfig {
    /// Applies one `key=value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let s = &mut self.synthetic_cfg;
        let t = &mut self.train;
        let m = &mut self.model;
        match key.trim() {
            "seed" => self.seed = Some(parse(key, v)?),
            "data_dir" => self.data_dir = Some(PathBuf::from(v)),
            "synthetic" => self.synthetic = parse(key, v)?,
            "out" => self.out = PathBuf::from(v),
            "split" => self.split = v.parse().map_err(Error::InvalidConfig)?,
            "k" => self.k = parse(key, v)?,
            "threads" => self.threads = parse(key, v)?,
            "epochs" => t.epochs = parse(key, v)?,
            "lr" => t.lr = parse(key, v)?,
            "batch_size" => t.batch_size = parse(key, v)?,
            "embed_dropout" => t.embed_dropout = parse(key, v)?,
            "attn_dropout" => t.attn_dropout = parse(key, v)?,
            "l2" => t.l2 = parse(key, v)?,
            "lambda_rec" => t.lambda_rec = parse(key, v)?,
            "lambda_comp" => t.lambda_comp = parse(key, v)?,
            "dim" => m.dim = parse(key, v)?,
            "hidden_dim" => m.hidden_dim = parse(key, v)?,
            "heads" => m.heads = parse(key, v)?,
            "views" => m.views = parse(key, v)?,
            "view_hidden" => m.view_hidden = parse(key, v)?,
            "category_heads" => m.category_heads = parse(key, v)?,
            "synthetic.users" => s.users = parse(key, v)?,
            "synthetic.outfits" => s.outfits = parse(key, v)?,
            "synthetic.items" => s.items = parse(key, v)?,
            "synthetic.categories" => s.categories = parse(key, v)?,
            "synthetic.clusters" => s.clusters = parse(key, v)?,
            "synthetic.visual_dim" => s.visual_dim = parse(key, v)?,
            "synthetic.textual_dim" => s.textual_dim = parse(key, v)?,
            "synthetic.outfit_size" => s.outfit_size = parse(key, v)?,
            "synthetic.interactions_per_user" => s.interactions_per_user = parse(key, v)?,
            "synthetic.purity" => s.purity = parse(key, v)?,
            "synthetic.noise" => s.noise = parse(key, v)?,
            "synthetic.unused_items" => s.unused_items = parse(key, v)?,
            other => return Err(Error::InvalidConfig(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Parses `key=value` lines; blank lines and `#` comments are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        cfg.apply(text)?;
        Ok(cfg)
    }

    pub fn apply(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                file: "config".into(),
                line: n + 1,
                msg: format!("expected key=value, got {line:?}"),
            })?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn seed(&self) -> Result<u64> {
        self.seed
            .ok_or_else(|| Error::InvalidConfig("a seed is required (seed=N or --seed N)".into()))
    }

    /// The training configuration with the run seed filled in.
    pub fn train_config(&self) -> Result<TrainConfig> {
        Ok(TrainConfig {
            seed: self.seed()?,
            ..self.train.clone()
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.seed()?;
        if !self.synthetic && self.data_dir.is_none() {
            return Err(Error::InvalidConfig(
                "no data source: set data_dir=DIR or synthetic=true".into(),
            ));
        }
        if self.k == 0 {
            return Err(Error::InvalidConfig("k must be positive".into()));
        }
        self.train.validate()
    }
}

impl fmt::Display for RunConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(seed) = self.seed {
            writeln!(f, "seed={seed}")?;
        }
        if let Some(d) = &self.data_dir {
            writeln!(f, "data_dir={}", d.display())?;
        }
        writeln!(f, "synthetic={}", self.synthetic)?;
        writeln!(f, "out={}", self.out.display())?;
        writeln!(f, "split={}", self.split)?;
        writeln!(f, "k={}", self.k)?;
        let t = &self.train;
        writeln!(f, "epochs={}", t.epochs)?;
        writeln!(f, "lr={}", t.lr)?;
        writeln!(f, "batch_size={}", t.batch_size)?;
        writeln!(f, "embed_dropout={}", t.embed_dropout)?;
        writeln!(f, "attn_dropout={}", t.attn_dropout)?;
        writeln!(f, "l2={}", t.l2)?;
        writeln!(f, "lambda_rec={}", t.lambda_rec)?;
        writeln!(f, "lambda_comp={}", t.lambda_comp)?;
        let m = &self.model;
        writeln!(f, "dim={}", m.dim)?;
        writeln!(f, "hidden_dim={}", m.hidden_dim)?;
        writeln!(f, "heads={}", m.heads)?;
        writeln!(f, "views={}", m.views)?;
        writeln!(f, "view_hidden={}", m.view_hidden)?;
        writeln!(f, "category_heads={}", m.category_heads)?;
        if self.synthetic {
            let s = &self.synthetic_cfg;
            writeln!(f, "synthetic.users={}", s.users)?;
            writeln!(f, "synthetic.outfits={}", s.outfits)?;
            writeln!(f, "synthetic.items={}", s.items)?;
            writeln!(f, "synthetic.categories={}", s.categories)?;
            writeln!(f, "synthetic.clusters={}", s.clusters)?;
            writeln!(f, "synthetic.visual_dim={}", s.visual_dim)?;
            writeln!(f, "synthetic.textual_dim={}", s.textual_dim)?;
            writeln!(f, "synthetic.outfit_size={}", s.outfit_size)?;
            writeln!(f, "synthetic.interactions_per_user={}", s.interactions_per_user)?;
            writeln!(f, "synthetic.purity={}", s.purity)?;
            writeln!(f, "synthetic.noise={}", s.noise)?;
            writeln!(f, "synthetic.unused_items={}", s.unused_items)?;
        }
        Ok(())
    }
}

/// Sizes the global worker pool used by evaluation; 0 keeps the default.
/// Only the first call in a process has an effect.
pub fn init_threads(threads: usize) {
    if threads > 0 {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
}

/// Dataset, split and derived structures shared by every stage.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub dataset: Dataset,
    pub splits: Splits,
    pub ctx: GraphContext,
    pub sampler: Sampler,
}

pub fn load_data(cfg: &RunConfig) -> Result<Dataset> {
    if cfg.synthetic {
        generate_synthetic(&cfg.synthetic_cfg, cfg.seed()?)
    } else {
        let dir = cfg
            .data_dir
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig("data_dir is not set".into()))?;
        let ds = load_dataset(&DatasetPaths::in_dir(dir))?;
        ds.validate()?;
        Ok(ds)
    }
}

pub fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    cfg.validate()?;
    let dataset = load_data(cfg)?;
    let splits = split_interactions(&dataset, cfg.seed()?, cfg.split);
    if splits.train.is_empty() {
        return Err(Error::InvalidDataset("no training interactions after splitting".into()));
    }
    let ctx = GraphContext::new(&dataset, Some(&splits));
    let sampler = Sampler::new(&dataset, &ctx, &splits);
    Ok(Prepared {
        dataset,
        splits,
        ctx,
        sampler,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct IngestSummary {
    pub users: usize,
    pub outfits: usize,
    pub items: usize,
    pub interactions: usize,
    pub histogram: Vec<(String, usize)>,
    /// Most frequent co-occurring category pairs with their outfit counts.
    pub top_pairs: Vec<(String, String, u64)>,
    /// Largest deviation of a category's weight row sum from 1.
    pub max_row_sum_error: f64,
}

impl fmt::Display for IngestSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "users={} outfits={} items={} interactions={} categories={}",
            self.users,
            self.outfits,
            self.items,
            self.interactions,
            self.histogram.len()
        )?;
        writeln!(f, "category histogram:")?;
        for (name, n) in &self.histogram {
            writeln!(f, "  {name}\t{n}")?;
        }
        writeln!(f, "top co-occurring category pairs:")?;
        for (a, b, n) in &self.top_pairs {
            writeln!(f, "  {a} + {b}\t{n}")?;
        }
        write!(f, "max |row sum - 1| of co-occurrence weights: {:e}", self.max_row_sum_error)
    }
}

pub fn summarize(ds: &Dataset) -> IngestSummary {
    let ctx = GraphContext::new(ds, None);
    let cg = &ctx.categories;
    let name = |c: usize| ds.categories[c].clone();
    let max_row_sum_error = (0..cg.n_categories())
        .filter(|&a| (0..cg.n_categories()).any(|b| cg.weight(a, b).is_some()))
        .map(|a| {
            let s: f64 = (0..cg.n_categories()).map(|b| cg.weight_or_zero(a, b)).sum();
            (s - 1.0).abs()
        })
        .fold(0.0, f64::max);
    IngestSummary {
        users: ds.users.len(),
        outfits: ds.outfits.len(),
        items: ds.items.len(),
        interactions: ds.interactions.len(),
        histogram: ds
            .category_histogram()
            .into_iter()
            .enumerate()
            .map(|(c, n)| (name(c), n))
            .collect(),
        top_pairs: cg
            .top_pairs(5)
            .into_iter()
            .map(|(a, b, n)| (name(a), name(b), n))
            .collect(),
        max_row_sum_error,
    }
}

/// Loads and validates the configured dataset.
pub fn cmd_ingest(cfg: &RunConfig) -> Result<IngestSummary> {
    let ds = load_data(cfg)?;
    ds.validate()?;
    Ok(summarize(&ds))
}

/// Writes the configured synthetic dataset in the on-disk format.
pub fn cmd_synth(cfg: &RunConfig, dir: &Path) -> Result<IngestSummary> {
    let ds = generate_synthetic(&cfg.synthetic_cfg, cfg.seed()?)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_dataset(&ds, &DatasetPaths::in_dir(dir))?;
    Ok(summarize(&ds))
}

fn model_for(prep: &Prepared, cfg: &RunConfig) -> ModelConfig {
    prep.ctx.model_config(&cfg.model)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub stats: EpochStats,
    pub val_hr: f64,
    pub val_ndcg: f64,
}

impl EpochRecord {
    pub fn log_line(&self) -> String {
        let s = &self.stats;
        format!(
            "{},{:.6},{:.6},{:.6},{:.6},{:.6}",
            s.epoch, s.l_rec, s.l_comp, s.l_total, self.val_hr, self.val_ndcg
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    /// Epochs run by this invocation.
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_hr: f64,
}

fn validation_metrics(prep: &Prepared, m: &ModelState, cfg: &RunConfig) -> Result<RankingReport> {
    let prop = forward(&prep.ctx, m, None)?;
    let ecfg = EvalConfig {
        k: cfg.k,
        seed: cfg.seed()?,
        target: Target::Validation,
        compatibility: false,
    };
    evaluate(&prep.ctx, &prep.splits, &prop, m, &prep.sampler, &ecfg)
}

/// Trains for `epochs` total epochs, keeping the best-validation model in
/// `model.ckpt`. With `resume`, continues from `last.state` in the output
/// directory and reproduces the uninterrupted run exactly.
pub fn cmd_train(cfg: &RunConfig, resume: bool) -> Result<TrainOutcome> {
    let prep = prepare(cfg)?;
    let tc = cfg.train_config()?;
    let out = &cfg.out;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let write = |name: &str, bytes: &[u8]| {
        let p = out.join(name);
        fs::write(&p, bytes).map_err(|e| Error::io(&p, e))
    };
    write(CONFIG_FILE, cfg.to_string().as_bytes())?;

    let state_path = out.join(STATE_FILE);
    let log_path = out.join(LOG_FILE);
    let (mut trainer, mut best_hr, mut best_epoch, mut log) = if resume {
        let ck = Checkpoint::read(&state_path)?;
        let trainer = Trainer::from_checkpoint(&ck)?;
        let expected = model_for(&prep, cfg);
        if trainer.model.config != expected {
            return Err(Error::InvalidConfig(
                "saved state was trained with a different model configuration".into(),
            ));
        }
        let best_hr: f64 = ck.meta("best.val_hr").and_then(|v| v.parse().ok()).unwrap_or(f64::NEG_INFINITY);
        let best_epoch: usize = ck.meta("best.epoch").and_then(|v| v.parse().ok()).unwrap_or(0);
        let old = fs::read_to_string(&log_path).unwrap_or_default();
        let log: String = old
            .lines()
            .take(trainer.epoch)
            .map(|l| format!("{l}\n"))
            .collect();
        (trainer, best_hr, best_epoch, log)
    } else {
        let model = init_model(&model_for(&prep, cfg), tc.seed)?;
        (Trainer::new(model, &tc), f64::NEG_INFINITY, 0, String::new())
    };

    let mut records = Vec::new();
    while trainer.epoch < tc.epochs {
        let stats = trainer.train_epoch(&prep.ctx, &prep.sampler, &tc)?;
        let val = validation_metrics(&prep, &trainer.model, cfg)?;
        let rec = EpochRecord {
            stats,
            val_hr: val.hr,
            val_ndcg: val.ndcg,
        };
        log::info!("{}", rec.log_line());
        log.push_str(&rec.log_line());
        log.push('\n');
        if val.users_evaluated == 0 || val.hr > best_hr {
            best_hr = val.hr;
            best_epoch = stats.epoch;
            trainer.model.save(&out.join(MODEL_FILE))?;
        }
        let mut ck = trainer.to_checkpoint();
        ck.meta.push(("best.val_hr".into(), best_hr.to_string()));
        ck.meta.push(("best.epoch".into(), best_epoch.to_string()));
        ck.write(&state_path)?;
        write(LOG_FILE, log.as_bytes())?;
        records.push(rec);
    }
    if best_epoch == 0 {
        // zero epochs requested: the initial model is the best we have
        trainer.model.save(&out.join(MODEL_FILE))?;
        write(LOG_FILE, log.as_bytes())?;
    }
    Ok(TrainOutcome {
        epochs: records,
        best_epoch,
        best_val_hr: best_hr,
    })
}

/// Loads a model and checks it fits the prepared graph.
pub fn load_model(prep: &Prepared, path: &Path) -> Result<ModelState> {
    let m = ModelState::load(path)?;
    let c = &m.config;
    let g = &prep.ctx.graph;
    if (c.n_users, c.n_outfits, c.n_items) != (g.n_users(), g.n_outfits(), g.n_items()) {
        return Err(Error::DimensionMismatch(format!(
            "checkpoint {} was trained on a different dataset",
            path.display()
        )));
    }
    Ok(m)
}

fn checkpoint_path(cfg: &RunConfig, checkpoint: Option<&Path>) -> PathBuf {
    checkpoint.map_or_else(|| cfg.out.join(MODEL_FILE), Path::to_path_buf)
}

/// Evaluates on the test interactions and writes `report.txt` and
/// `per_user.csv` to the output directory.
pub fn cmd_evaluate(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<RankingReport> {
    let prep = prepare(cfg)?;
    let m = load_model(&prep, &checkpoint_path(cfg, checkpoint))?;
    let prop = forward(&prep.ctx, &m, None)?;
    let ecfg = EvalConfig {
        k: cfg.k,
        seed: cfg.seed()?,
        target: Target::Test,
        compatibility: true,
    };
    let report = evaluate(&prep.ctx, &prep.splits, &prop, &m, &prep.sampler, &ecfg)?;
    fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;
    let rp = cfg.out.join(REPORT_FILE);
    fs::write(&rp, report.render()).map_err(|e| Error::io(&rp, e))?;
    let up = cfg.out.join(PER_USER_FILE);
    let mut buf = Vec::new();
    report.write_per_user(&mut buf).map_err(|e| Error::io(&up, e))?;
    fs::write(&up, buf).map_err(|e| Error::io(&up, e))?;
    Ok(report)
}

/// Top-`k` unseen outfits for one user as `(outfit_id, score)`.
pub fn cmd_recommend(cfg: &RunConfig, checkpoint: Option<&Path>, user: u64, k: usize) -> Result<Vec<(u64, f64)>> {
    let prep = prepare(cfg)?;
    let u = prep.ctx.index().user(user).ok_or(Error::UnknownUser(user))?;
    let m = load_model(&prep, &checkpoint_path(cfg, checkpoint))?;
    let prop = forward(&prep.ctx, &m, None)?;
    let scores = score_all(u, &prop);
    let ids = &prep.ctx.index().outfits;
    Ok(rank_outfits(u, &prop, &prep.ctx, &prep.splits, Target::Test)
        .into_iter()
        .take(k)
        .map(|o| (ids[o], scores[o]))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FltbSummary {
    pub accuracy: f64,
    pub correct: usize,
    pub trials: usize,
}

/// Fill-in-the-blank accuracy over every position of every test outfit.
pub fn cmd_fltb(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<FltbSummary> {
    let prep = prepare(cfg)?;
    let m = load_model(&prep, &checkpoint_path(cfg, checkpoint))?;
    let prop = forward(&prep.ctx, &m, None)?;
    let trials = fltb_trials(&prep.ctx, &prep.splits, cfg.seed()?);
    let mut correct = 0;
    for t in &trials {
        correct += fltb(t, &prep.ctx, &prop, &m)?.1 as usize;
    }
    if trials.is_empty() {
        return Err(Error::Empty("no test outfits to mask".into()));
    }
    Ok(FltbSummary {
        accuracy: correct as f64 / trials.len() as f64,
        correct,
        trials: trials.len(),
    })
}

fn table(ids: &[u64], h: &Mat) -> FeatureTable {
    FeatureTable {
        dim: h.cols(),
        records: ids
            .iter()
            .enumerate()
            .map(|(r, &id)| (id, h.row(r).iter().map(|&x| x as f32).collect()))
            .collect(),
    }
}

/// Writes propagated user, outfit and item embeddings as feature files.
pub fn cmd_export_embeddings(cfg: &RunConfig, checkpoint: Option<&Path>, dir: &Path) -> Result<Vec<PathBuf>> {
    let prep = prepare(cfg)?;
    let m = load_model(&prep, &checkpoint_path(cfg, checkpoint))?;
    let prop = forward(&prep.ctx, &m, None)?;
    let idx = prep.ctx.index();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    for (name, ids, h) in [
        ("users.feat", &idx.users, &prop.h_user_star),
        ("outfits.feat", &idx.outfits, &prop.h_outfit_star),
        ("items.feat", &idx.items, &prop.h_item_star),
    ] {
        let path = dir.join(name);
        let f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        write_features(BufWriter::new(f), &table(ids, h))?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trips_through_its_text_form() {
        let mut cfg = RunConfig::parse("seed=7\nsynthetic=true\n# comment\nepochs = 3\nsplit=80-10-10\nsynthetic.users=12\n").unwrap();
        cfg.set("lr", "0.01").unwrap();
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.split, SplitScheme::EightyTenTen);
        assert_eq!(RunConfig::parse(&cfg.to_string()).unwrap(), cfg);
    }

    #[test]
    fn bad_configs_are_validation_errors() {
        assert!(RunConfig::parse("bogus=1").unwrap_err().is_validation());
        assert!(RunConfig::parse("epochs=many").unwrap_err().is_validation());
        assert!(RunConfig::parse("no equals sign").unwrap_err().is_validation());
        let no_seed = RunConfig::parse("synthetic=true").unwrap();
        assert!(matches!(no_seed.validate(), Err(Error::InvalidConfig(m)) if m.contains("seed")));
        let no_data = RunConfig::parse("seed=1").unwrap();
        assert!(no_data.validate().is_err());
    }
}
