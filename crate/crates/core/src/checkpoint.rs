//! Little-endian binary checkpoints.
//!
//! Layout: magic `GCTC`, `u32` format version, the model configuration, a
//! named tensor table, the two vocabularies, condition and length
//! statistics, the property histogram, a free-text config echo, progress
//! counters and optional Adam moments.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::chem::Vocabulary;
use crate::cvae::{ConditionStats, NUM_CONDITIONS};
use crate::generation::{LengthStats, PropertyHistogram};
use crate::model::{Model, ModelConfig, ModelError};
use crate::tensor::Tensor;
use crate::training::Adam;

pub const MAGIC: &[u8; 4] = b"GCTC";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("I/O failure on {path}: {source}")]
    IoFailure {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("checkpoint version {found} is not readable by version {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("corrupt checkpoint at byte {0}")]
    CorruptFile(usize),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Everything needed to resume training or to generate.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Model,
    pub lengths: LengthStats,
    pub histogram: PropertyHistogram,
    pub config_echo: String,
    pub epoch: u32,
    pub step: u64,
    pub seed: u64,
    pub optimizer: Option<Adam>,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.0.extend_from_slice(s.as_bytes());
    }
    fn tensor(&mut self, name: &str, t: &Tensor) {
        self.str(name);
        self.u32(t.rank() as u32);
        for &d in t.shape() {
            self.u64(d as u64);
        }
        for &x in t.data() {
            self.f64(x);
        }
    }
    fn vocab(&mut self, v: &Vocabulary) {
        self.u32(v.len() as u32);
        for t in v.tokens() {
            self.str(t.as_str());
        }
    }
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.data.len());
        match end {
            Some(end) => {
                let s = &self.data[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(CheckpointError::CorruptFile(self.pos)),
        }
    }
    fn array<const N: usize>(&mut self) -> Result<[u8; N], CheckpointError> {
        Ok(self.take(N)?.try_into().expect("slice has length N"))
    }
    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.array()?))
    }
    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.array()?))
    }
    fn usize(&mut self) -> Result<usize, CheckpointError> {
        let at = self.pos;
        usize::try_from(self.u64()?).map_err(|_| CheckpointError::CorruptFile(at))
    }
    fn f64(&mut self) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(self.array()?))
    }
    fn str(&mut self) -> Result<&'a str, CheckpointError> {
        let at = self.pos;
        let n = self.u32()? as usize;
        std::str::from_utf8(self.take(n)?).map_err(|_| CheckpointError::CorruptFile(at))
    }
    fn tensor(&mut self) -> Result<(&'a str, Tensor), CheckpointError> {
        let name = self.str()?;
        let at = self.pos;
        let rank = self.u32()? as usize;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(self.usize()?);
        }
        let len = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|&n| n.checked_mul(8).is_some_and(|b| b <= self.data.len() - self.pos))
            .ok_or(CheckpointError::CorruptFile(at))?;
        let data = self
            .take(len * 8)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let t = Tensor::new(&shape, data).map_err(|_| CheckpointError::CorruptFile(at))?;
        Ok((name, t))
    }
    fn vocab(&mut self, expected: &Vocabulary) -> Result<(), CheckpointError> {
        let at = self.pos;
        let n = self.u32()? as usize;
        if n != expected.len() {
            return Err(CheckpointError::CorruptFile(at));
        }
        for t in expected.tokens() {
            let at = self.pos;
            if self.str()? != t.as_str() {
                return Err(CheckpointError::CorruptFile(at));
            }
        }
        Ok(())
    }
    fn triple(&mut self) -> Result<[f64; NUM_CONDITIONS], CheckpointError> {
        Ok([self.f64()?, self.f64()?, self.f64()?])
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MAGIC);
        w.u32(FORMAT_VERSION);
        let c = &self.model.config;
        for v in [c.d_model, c.heads, c.blocks, c.d_ff, c.latent_dim, c.max_len] {
            w.u32(v as u32);
        }
        w.f64(c.dropout);
        w.u32(self.model.store.len() as u32);
        for (_, name, t) in self.model.store.iter() {
            w.tensor(name, t);
        }
        w.vocab(self.model.decoder_vocab());
        w.vocab(self.model.encoder_vocab());
        let stats = &self.model.condition_stats;
        stats.mean.iter().chain(&stats.std).for_each(|&v| w.f64(v));
        w.f64(self.lengths.mean);
        w.f64(self.lengths.std);
        let h = &self.histogram;
        h.min.iter().chain(&h.max).for_each(|&v| w.f64(v));
        w.u32(h.bins as u32);
        w.u64(h.cells.len() as u64);
        for (cell, &count) in &h.cells {
            cell.iter().for_each(|&i| w.u32(i));
            w.u64(count);
        }
        w.str(&self.config_echo);
        w.u32(self.epoch);
        w.u64(self.step);
        w.u64(self.seed);
        match &self.optimizer {
            None => w.u8(0),
            Some(adam) => {
                w.u8(1);
                w.u64(adam.t);
                w.f64(adam.beta1);
                w.f64(adam.beta2);
                w.f64(adam.eps);
                for (moments, prefix) in [(&adam.m, "m:"), (&adam.v, "v:")] {
                    w.u32(moments.len() as u32);
                    for ((_, name, _), t) in self.model.store.iter().zip(moments) {
                        w.tensor(&format!("{prefix}{name}"), t);
                    }
                }
            }
        }
        w.0
    }

    pub fn from_bytes(data: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { data, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(CheckpointError::CorruptFile(0));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(CheckpointError::VersionMismatch {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let config_at = r.pos;
        let mut dims = [0usize; 6];
        for d in &mut dims {
            *d = r.u32()? as usize;
        }
        let config = ModelConfig {
            d_model: dims[0],
            heads: dims[1],
            blocks: dims[2],
            d_ff: dims[3],
            latent_dim: dims[4],
            max_len: dims[5],
            dropout: r.f64()?,
        };
        config.validate().map_err(|_| CheckpointError::CorruptFile(config_at))?;
        let mut model = Model::new(config, 0)?;
        let count = r.u32()? as usize;
        if count != model.store.len() {
            return Err(CheckpointError::CorruptFile(r.pos - 4));
        }
        for _ in 0..count {
            let at = r.pos;
            let (name, t) = r.tensor()?;
            let id = model.store.id(name).ok_or(CheckpointError::CorruptFile(at))?;
            if model.store.get(id).shape() != t.shape() {
                return Err(CheckpointError::CorruptFile(at));
            }
            *model.store.get_mut(id) = t;
        }
        r.vocab(&Vocabulary::decoder())?;
        r.vocab(&Vocabulary::encoder())?;
        model.condition_stats = ConditionStats {
            mean: r.triple()?,
            std: r.triple()?,
        };
        let lengths = LengthStats {
            mean: r.f64()?,
            std: r.f64()?,
        };
        let (min, max) = (r.triple()?, r.triple()?);
        let bins = r.u32()? as usize;
        let cells_at = r.pos;
        let n_cells = r.u64()?;
        if n_cells > (data.len() / 20) as u64 {
            return Err(CheckpointError::CorruptFile(cells_at));
        }
        let mut cells = BTreeMap::new();
        for _ in 0..n_cells {
            let cell = [r.u32()?, r.u32()?, r.u32()?];
            cells.insert(cell, r.u64()?);
        }
        let histogram = PropertyHistogram { min, max, bins, cells };
        let config_echo = r.str()?.to_string();
        let epoch = r.u32()?;
        let step = r.u64()?;
        let seed = r.u64()?;
        let flag_at = r.pos;
        let optimizer = match r.u8()? {
            0 => None,
            1 => {
                let t = r.u64()?;
                let (beta1, beta2, eps) = (r.f64()?, r.f64()?, r.f64()?);
                let mut moments = Vec::with_capacity(2);
                for prefix in ["m:", "v:"] {
                    let at = r.pos;
                    if r.u32()? as usize != model.store.len() {
                        return Err(CheckpointError::CorruptFile(at));
                    }
                    let mut list = Vec::with_capacity(model.store.len());
                    for (_, name, param) in model.store.iter() {
                        let at = r.pos;
                        let (stored, tensor) = r.tensor()?;
                        if stored.strip_prefix(prefix) != Some(name) || tensor.shape() != param.shape() {
                            return Err(CheckpointError::CorruptFile(at));
                        }
                        list.push(tensor);
                    }
                    moments.push(list);
                }
                let v = moments.pop().expect("two moment lists");
                let m = moments.pop().expect("two moment lists");
                Some(Adam {
                    beta1,
                    beta2,
                    eps,
                    t,
                    m,
                    v,
                })
            }
            _ => return Err(CheckpointError::CorruptFile(flag_at)),
        };
        if r.pos != data.len() {
            return Err(CheckpointError::CorruptFile(r.pos));
        }
        Ok(Checkpoint {
            model,
            lengths,
            histogram,
            config_echo,
            epoch,
            step,
            seed,
            optimizer,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        std::fs::write(path, self.to_bytes()).map_err(|source| CheckpointError::IoFailure {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let data = std::fs::read(path).map_err(|source| CheckpointError::IoFailure {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_bytes(&data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chem::tokenize;
    use crate::cvae::ConditionSet;
    use crate::model::Batch;
    use crate::training::AdamConfig;

    fn sample() -> Checkpoint {
        let mut cfg = ModelConfig::toy();
        cfg.d_model = 8;
        cfg.d_ff = 16;
        cfg.latent_dim = 4;
        let mut model = Model::new(cfg, 7).unwrap();
        let rows = [ConditionSet([0.5, 10.0, 0.1]), ConditionSet([0.7, 40.0, 0.0])];
        model.condition_stats = ConditionStats::fit(&rows);
        let optimizer = Some(Adam::new(&model.store, &AdamConfig::default()));
        Checkpoint {
            histogram: PropertyHistogram::build(&rows).unwrap(),
            lengths: LengthStats { mean: 12.5, std: 3.25 },
            config_echo: "epochs = 3\n".into(),
            epoch: 3,
            step: 42,
            seed: 9,
            optimizer,
            model,
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let ck = sample();
        let bytes = ck.to_bytes();
        assert_eq!(&bytes[..4], b"GCTC");
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        for (a, b) in ck.model.store.iter().zip(back.model.store.iter()) {
            assert_eq!(a.1, b.1);
            assert_eq!(a.2, b.2);
        }
        assert_eq!(back.histogram, ck.histogram);
        assert_eq!(back.optimizer, ck.optimizer);
        assert_eq!((back.epoch, back.step, back.seed), (3, 42, 9));

        let seq = tokenize("CC(=O)O").unwrap();
        let batch = Batch::new(&[(&seq, ConditionSet([0.6, 20.0, 0.05]))]).unwrap();
        let x = ck.model.eval_logits(&batch).unwrap();
        let y = back.model.eval_logits(&batch).unwrap();
        assert_eq!(x.data(), y.data());
    }

    #[test]
    fn truncation_is_detected_everywhere() {
        let bytes = sample().to_bytes();
        for cut in [0, 3, 7, 20, 60, bytes.len() / 2, bytes.len() - 1] {
            assert!(
                matches!(
                    Checkpoint::from_bytes(&bytes[..cut]),
                    Err(CheckpointError::CorruptFile(_))
                ),
                "cut at {cut}"
            );
        }
    }

    #[test]
    fn future_versions_are_refused() {
        let mut bytes = sample().to_bytes();
        bytes[4..8].copy_from_slice(&2u32.to_le_bytes());
        assert!(matches!(
            Checkpoint::from_bytes(&bytes),
            Err(CheckpointError::VersionMismatch { found: 2, expected: 1 })
        ));
    }

    #[test]
    fn trailing_bytes_and_bad_magic_are_corrupt() {
        let mut bytes = sample().to_bytes();
        bytes.push(0);
        assert!(matches!(
            Checkpoint::from_bytes(&bytes),
            Err(CheckpointError::CorruptFile(_))
        ));
        bytes[0] = b'X';
        assert!(matches!(
            Checkpoint::from_bytes(&bytes),
            Err(CheckpointError::CorruptFile(0))
        ));
    }

    #[test]
    fn missing_file_names_the_path() {
        let err = Checkpoint::load(Path::new("/nonexistent/model.gctc")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/model.gctc"));
    }
}
