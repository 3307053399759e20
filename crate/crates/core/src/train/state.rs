//! Resumable trainer state: full-precision parameters, Adam moments and
//! progress counters in one checkpoint file.

use std::path::Path;

use super::{Adam, Trainer};
use crate::embed::{Checkpoint, Dtype, ModelConfig, ModelState, Params};
use crate::error::{Error, Result};

fn meta_num<T: std::str::FromStr>(ck: &Checkpoint, key: &str) -> Result<T> {
    ck.meta(key)
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::Format {
            what: "trainer state".into(),
            msg: format!("missing or malformed {key}"),
        })
}

impl Trainer {
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = self.model.to_checkpoint(Dtype::F64);
        ck.meta.push(("trainer.epoch".into(), self.epoch.to_string()));
        ck.meta.push(("adam.t".into(), self.adam.t.to_string()));
        for (k, v) in [
            ("adam.lr", self.adam.lr),
            ("adam.beta1", self.adam.beta1),
            ("adam.beta2", self.adam.beta2),
            ("adam.eps", self.adam.eps),
        ] {
            ck.meta.push((k.into(), v.to_string()));
        }
        ck.push_params("adam.m.", &self.adam.m, Dtype::F64);
        ck.push_params("adam.v.", &self.adam.v, Dtype::F64);
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let model = ModelState::from_checkpoint(ck)?;
        let cfg: &ModelConfig = &model.config;
        let mut m = Params::zeros(cfg);
        let mut v = Params::zeros(cfg);
        ck.load_params("adam.m.", &mut m)?;
        ck.load_params("adam.v.", &mut v)?;
        let adam = Adam {
            lr: meta_num(ck, "adam.lr")?,
            beta1: meta_num(ck, "adam.beta1")?,
            beta2: meta_num(ck, "adam.beta2")?,
            eps: meta_num(ck, "adam.eps")?,
            t: meta_num(ck, "adam.t")?,
            m,
            v,
        };
        Ok(Trainer {
            epoch: meta_num(ck, "trainer.epoch")?,
            model,
            adam,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::read(path)?)
    }
}
