//! Checkpoint files: one JSON header line, then named parameter blocks.
//!
//! Each block is a `name<TAB>d1,d2,...` line followed by the values as
//! little-endian f32.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cli::write_atomic;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::kgdata::{KnowledgeGraph, Vocab};
use crate::model::{Model, ModelSpec};
use crate::numcore::{RunningStats, Tensor};
use crate::scorers::{ModelKind, STAT_NAMES};

pub const FORMAT: &str = "kgrl-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub format: String,
    pub version: u32,
    pub model: String,
    pub dim: usize,
    pub num_entities: usize,
    pub relation_rows: usize,
    pub entity_hash: String,
    pub relation_hash: String,
    pub entities: Vec<String>,
    pub relations: Vec<String>,
    pub config: BTreeMap<String, String>,
    pub blocks: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub header: Header,
    pub blocks: Vec<Block>,
}

fn block(name: &str, t: &Tensor) -> Block {
    Block { name: name.to_owned(), shape: t.shape().to_vec(), values: t.data().iter().map(|&v| v as f32).collect() }
}

impl Checkpoint {
    pub fn from_model(model: &Model, kg: &KnowledgeGraph, config: &RunConfig) -> Self {
        let mut blocks: Vec<Block> = model.params().iter().map(|(_, p)| block(&p.name, &p.value)).collect();
        for (name, s) in STAT_NAMES.iter().zip(&model.kge.stats) {
            blocks.push(block(&format!("{name}.mean"), &Tensor::from_vec(s.mean.clone())));
            blocks.push(block(&format!("{name}.var"), &Tensor::from_vec(s.var.clone())));
        }
        let header = Header {
            format: FORMAT.to_owned(),
            version: VERSION,
            model: model.spec.kind.to_string(),
            dim: model.spec.dim,
            num_entities: model.spec.num_entities,
            relation_rows: model.spec.relation_rows,
            entity_hash: kg.entities.fingerprint(),
            relation_hash: kg.relations.fingerprint(),
            entities: kg.entities.names().to_vec(),
            relations: kg.relations.names().to_vec(),
            config: config.to_pairs(),
            blocks: blocks.len(),
        };
        Checkpoint { header, blocks }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = serde_json::to_vec(&self.header)?;
        out.push(b'\n');
        for b in &self.blocks {
            let dims: Vec<String> = b.shape.iter().map(usize::to_string).collect();
            out.extend_from_slice(format!("{}\t{}\n", b.name, dims.join(",")).as_bytes());
            for v in &b.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_owned());
        let mut rest = bytes;
        let mut line = || -> Result<&[u8]> {
            let end = rest.iter().position(|&b| b == b'\n').ok_or_else(|| bad("truncated header line"))?;
            let (l, r) = rest.split_at(end);
            rest = &r[1..];
            Ok(l)
        };
        let header: Header = serde_json::from_slice(line()?).map_err(|e| bad(&format!("bad header: {e}")))?;
        if header.format != FORMAT || header.version != VERSION {
            return Err(bad(&format!("unsupported format {} v{}", header.format, header.version)));
        }
        let mut blocks = Vec::with_capacity(header.blocks);
        for _ in 0..header.blocks {
            let end = rest.iter().position(|&b| b == b'\n').ok_or_else(|| bad("truncated block header"))?;
            let text = std::str::from_utf8(&rest[..end]).map_err(|_| bad("block header is not UTF-8"))?;
            let (name, dims) = text.split_once('\t').ok_or_else(|| bad("block header lacks a shape"))?;
            let shape = if dims.is_empty() {
                Vec::new()
            } else {
                dims.split(',').map(|d| d.parse::<usize>()).collect::<std::result::Result<Vec<_>, _>>().map_err(|_| bad("bad shape"))?
            };
            let n: usize = shape.iter().product();
            rest = &rest[end + 1..];
            if rest.len() < 4 * n {
                return Err(bad(&format!("block {name} truncated")));
            }
            let values = rest[..4 * n].chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            rest = &rest[4 * n..];
            blocks.push(Block { name: name.to_owned(), shape, values });
        }
        if !rest.is_empty() {
            return Err(bad("trailing bytes after the last block"));
        }
        Ok(Checkpoint { header, blocks })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }

    pub fn config(&self) -> Result<RunConfig> {
        RunConfig::from_pairs(&self.header.config).map_err(|e| Error::Checkpoint(format!("config echo: {e}")))
    }

    pub fn kind(&self) -> Result<ModelKind> {
        self.header.model.parse().map_err(|_| Error::Checkpoint(format!("unknown model {}", self.header.model)))
    }

    pub fn relation_vocab(&self) -> Vocab {
        let mut v = Vocab::default();
        self.header.relations.iter().for_each(|n| {
            v.intern(n);
        });
        v
    }

    /// Refuses graphs whose vocabularies differ from the ones trained on.
    pub fn check_vocab(&self, kg: &KnowledgeGraph) -> Result<()> {
        if kg.entities.fingerprint() != self.header.entity_hash || kg.relations.fingerprint() != self.header.relation_hash {
            return Err(Error::Checkpoint("vocabulary hash mismatch: checkpoint was trained on different data".into()));
        }
        Ok(())
    }

    /// Rebuilds the model described by the header and fills in every block.
    pub fn into_model(self) -> Result<Model> {
        let cfg = self.config()?;
        let spec = ModelSpec {
            kind: self.kind()?,
            num_entities: self.header.num_entities,
            relation_rows: self.header.relation_rows,
            dim: self.header.dim,
            conve: cfg.conve(),
            grl: cfg.grl(),
        };
        let mut model = Model::new(spec, cfg.seed)?;
        let mut blocks: BTreeMap<String, Block> = self.blocks.into_iter().map(|b| (b.name.clone(), b)).collect();
        let mut take = |name: &str, shape: &[usize]| -> Result<Vec<f64>> {
            let b = blocks.remove(name).ok_or_else(|| Error::Checkpoint(format!("missing block {name}")))?;
            if b.shape != shape {
                return Err(Error::Checkpoint(format!("block {name} has shape {:?}, expected {shape:?}", b.shape)));
            }
            Ok(b.values.into_iter().map(f64::from).collect())
        };
        let ids: Vec<_> = model.params().ids().collect();
        for id in ids {
            let name = model.params().name(id).to_owned();
            let shape = model.params().get(id).shape().to_vec();
            *model.params_mut().get_mut(id) = Tensor::new(shape.clone(), take(&name, &shape)?)?;
        }
        let mut stats = Vec::new();
        for (name, s) in STAT_NAMES.iter().zip(&model.kge.stats) {
            let ch = s.mean.len();
            stats.push(RunningStats { mean: take(&format!("{name}.mean"), &[ch])?, var: take(&format!("{name}.var"), &[ch])? });
        }
        if let Some(extra) = blocks.keys().next() {
            return Err(Error::Checkpoint(format!("unexpected block {extra}")));
        }
        model.kge.stats = stats;
        Ok(model)
    }
}
