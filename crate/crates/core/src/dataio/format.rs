//! Text and binary file formats for datasets.
//!
//! * interactions: `user_id<TAB>outfit_id`
//! * outfits: `outfit_id<TAB>item_id,item_id,...`
//! * items: `item_id<TAB>category_name`
//! * features (one file per modality): little-endian binary, see
//!   [`FeatureTable`].

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use super::{Dataset, Item, ItemId};
use crate::error::{Error, Result};

pub const FEATURE_MAGIC: &[u8; 8] = b"FGATFEAT";
pub const FEATURE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetPaths {
    pub interactions: PathBuf,
    pub outfits: PathBuf,
    pub items: PathBuf,
    pub visual: PathBuf,
    pub textual: PathBuf,
}

impl DatasetPaths {
    /// Conventional file names inside one directory.
    pub fn in_dir(dir: impl AsRef<Path>) -> Self {
        let dir = dir.as_ref();
        DatasetPaths {
            interactions: dir.join("interactions.tsv"),
            outfits: dir.join("outfits.tsv"),
            items: dir.join("items.tsv"),
            visual: dir.join("visual.feat"),
            textual: dir.join("textual.feat"),
        }
    }
}

/// One modality's feature vectors: `(item_id, vector)` records of equal dim.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub dim: usize,
    pub records: Vec<(u64, Vec<f32>)>,
}

pub fn write_features<W: Write>(mut w: W, table: &FeatureTable) -> Result<()> {
    let io = |e| Error::Format {
        what: "features".into(),
        msg: format!("write failed: {e}"),
    };
    let dim = u32::try_from(table.dim).map_err(|_| Error::Format {
        what: "features".into(),
        msg: "dimension exceeds u32".into(),
    })?;
    let count = u32::try_from(table.records.len()).map_err(|_| Error::Format {
        what: "features".into(),
        msg: "record count exceeds u32".into(),
    })?;
    let mut buf = Vec::with_capacity(20 + table.records.len() * (8 + 4 * table.dim));
    buf.extend_from_slice(FEATURE_MAGIC);
    buf.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    buf.extend_from_slice(&count.to_le_bytes());
    buf.extend_from_slice(&dim.to_le_bytes());
    for (id, v) in &table.records {
        if v.len() != table.dim {
            return Err(Error::DimensionMismatch(format!(
                "feature record {id} has dim {} but table dim is {}",
                v.len(),
                table.dim
            )));
        }
        buf.extend_from_slice(&id.to_le_bytes());
        for x in v {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    w.write_all(&buf).map_err(io)?;
    w.flush().map_err(io)
}

pub fn read_features<R: Read>(mut r: R, what: &str) -> Result<FeatureTable> {
    let bad = |msg: String| Error::Format {
        what: what.to_string(),
        msg,
    };
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)
        .map_err(|e| bad(format!("read failed: {e}")))?;
    if bytes.len() < 20 || &bytes[..8] != FEATURE_MAGIC {
        return Err(bad("missing FGATFEAT header".into()));
    }
    let u32_at = |off: usize| u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
    let version = u32_at(8);
    if version != FEATURE_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let count = u32_at(12) as usize;
    let dim = u32_at(16) as usize;
    let record = 8 + 4 * dim;
    let expected = 20 + count * record;
    if bytes.len() != expected {
        return Err(bad(format!(
            "expected {expected} bytes for {count} records of dim {dim}, found {}",
            bytes.len()
        )));
    }
    let records = bytes[20..]
        .chunks_exact(record)
        .map(|chunk| {
            let id = u64::from_le_bytes(chunk[..8].try_into().unwrap());
            let v = chunk[8..]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect();
            (id, v)
        })
        .collect();
    Ok(FeatureTable { dim, records })
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

/// Non-empty lines with their 1-based line numbers.
fn lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let mut out = Vec::new();
    for (k, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let trimmed = line.trim_end_matches('\r');
        if !trimmed.trim().is_empty() {
            out.push((k + 1, trimmed.to_string()));
        }
    }
    Ok(out)
}

struct LineCtx<'a> {
    file: &'a Path,
    line: usize,
}

impl LineCtx<'_> {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Parse {
            file: self.file.display().to_string(),
            line: self.line,
            msg: msg.into(),
        }
    }

    fn two_fields<'s>(&self, s: &'s str) -> Result<(&'s str, &'s str)> {
        let mut parts = s.split('\t');
        match (parts.next(), parts.next(), parts.next()) {
            (Some(a), Some(b), None) => Ok((a, b)),
            _ => Err(self.err("expected exactly two tab-separated fields")),
        }
    }

    fn id(&self, s: &str) -> Result<u64> {
        s.trim()
            .parse()
            .map_err(|_| self.err(format!("invalid id {s:?}")))
    }
}

pub fn load_dataset(paths: &DatasetPaths) -> Result<Dataset> {
    // items and categories
    let mut raw_items: BTreeMap<ItemId, String> = BTreeMap::new();
    for (line, text) in lines(&paths.items)? {
        let ctx = LineCtx {
            file: &paths.items,
            line,
        };
        let (id, cat) = ctx.two_fields(&text)?;
        let id = ctx.id(id)?;
        let cat = cat.trim();
        if cat.is_empty() {
            return Err(ctx.err("empty category name"));
        }
        if raw_items.insert(id, cat.to_string()).is_some() {
            return Err(ctx.err(format!("duplicate item id {id}")));
        }
    }
    let categories: Vec<String> = raw_items
        .values()
        .cloned()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();

    let mut outfits = BTreeMap::new();
    for (line, text) in lines(&paths.outfits)? {
        let ctx = LineCtx {
            file: &paths.outfits,
            line,
        };
        let (id, list) = ctx.two_fields(&text)?;
        let id = ctx.id(id)?;
        let items = list
            .split(',')
            .map(|s| ctx.id(s))
            .collect::<Result<Vec<_>>>()?;
        if outfits.insert(id, items).is_some() {
            return Err(ctx.err(format!("duplicate outfit id {id}")));
        }
    }

    let mut interactions = BTreeSet::new();
    let mut users = BTreeSet::new();
    for (line, text) in lines(&paths.interactions)? {
        let ctx = LineCtx {
            file: &paths.interactions,
            line,
        };
        let (u, o) = ctx.two_fields(&text)?;
        let (u, o) = (ctx.id(u)?, ctx.id(o)?);
        users.insert(u);
        interactions.insert((u, o));
    }

    let visual = read_features(open(&paths.visual)?, &paths.visual.display().to_string())?;
    let textual = read_features(open(&paths.textual)?, &paths.textual.display().to_string())?;
    let index_features = |table: FeatureTable, name: &str| -> Result<BTreeMap<u64, Vec<f32>>> {
        let mut map = BTreeMap::new();
        for (id, v) in table.records {
            if !raw_items.contains_key(&id) {
                return Err(Error::DanglingReference(format!(
                    "{name} features for unknown item {id}"
                )));
            }
            if map.insert(id, v).is_some() {
                return Err(Error::InvalidDataset(format!(
                    "duplicate {name} feature record for item {id}"
                )));
            }
        }
        Ok(map)
    };
    let mut visual = index_features(visual, "visual")?;
    let mut textual = index_features(textual, "textual")?;

    let mut items = BTreeMap::new();
    for (id, cat) in raw_items {
        let category = categories.binary_search(&cat).expect("category collected above");
        let v = visual.remove(&id).ok_or_else(|| {
            Error::InvalidDataset(format!("item {id} has no visual feature record"))
        })?;
        let t = textual.remove(&id).ok_or_else(|| {
            Error::InvalidDataset(format!("item {id} has no textual feature record"))
        })?;
        items.insert(
            id,
            Item {
                category,
                visual: v,
                textual: t,
            },
        );
    }

    let ds = Dataset {
        users: users.into_iter().collect(),
        outfits,
        items,
        interactions,
        categories,
    };
    ds.validate()?;
    Ok(ds)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

pub fn write_dataset(ds: &Dataset, paths: &DatasetPaths) -> Result<()> {
    ds.validate()?;
    let text = |path: &Path, body: String| -> Result<()> {
        let mut w = create(path)?;
        w.write_all(body.as_bytes())
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    };

    let mut body = String::new();
    for (u, o) in &ds.interactions {
        body.push_str(&format!("{u}\t{o}\n"));
    }
    text(&paths.interactions, body)?;

    let mut body = String::new();
    for (o, items) in &ds.outfits {
        let list: Vec<String> = items.iter().map(|i| i.to_string()).collect();
        body.push_str(&format!("{o}\t{}\n", list.join(",")));
    }
    text(&paths.outfits, body)?;

    let mut body = String::new();
    for (i, item) in &ds.items {
        body.push_str(&format!("{i}\t{}\n", ds.categories[item.category]));
    }
    text(&paths.items, body)?;

    let table = |pick: fn(&Item) -> &Vec<f32>, dim: usize| FeatureTable {
        dim,
        records: ds.items.iter().map(|(&id, it)| (id, pick(it).clone())).collect(),
    };
    write_features(create(&paths.visual)?, &table(|i| &i.visual, ds.visual_dim()))?;
    write_features(create(&paths.textual)?, &table(|i| &i.textual, ds.textual_dim()))?;
    Ok(())
}
