//! Base link-prediction scorers and their losses.
//!
//! DistMult and the convolutional scorer share a two-stage shape: a query
//! vector is built from `(e_h, r)` and then dotted with candidate entity
//! embeddings plus a per-entity bias. Scoring every entity (1-N) and scoring
//! one given tail both reuse the query stage.
//!
//! TransE is kept separate: it is trained with a margin loss over corrupted
//! triples and only serves as an embedding space for similarity reports.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::kgdata::Triple;
use crate::numcore::{xavier_uniform, Adam, Graph, ParamId, ParamStore, RunningStats, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    DistMult,
    ConvE,
    TransE,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::DistMult => "distmult",
            ModelKind::ConvE => "conve",
            ModelKind::TransE => "transe",
        })
    }
}

impl FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "distmult" => Ok(ModelKind::DistMult),
            "conve" => Ok(ModelKind::ConvE),
            "transe" => Ok(ModelKind::TransE),
            _ => Err(Error::Config(format!("unknown model {s:?} (expected distmult, conve or transe)"))),
        }
    }
}

/// Fixed architecture of the convolutional scorer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConvEConfig {
    /// Height of each reshaped embedding; width is `dim / height`.
    pub height: usize,
    pub filters: usize,
    pub kernel: usize,
    pub input_dropout: f64,
    pub feature_dropout: f64,
    pub hidden_dropout: f64,
}

impl Default for ConvEConfig {
    fn default() -> Self {
        ConvEConfig { height: 10, filters: 32, kernel: 3, input_dropout: 0.2, feature_dropout: 0.2, hidden_dropout: 0.3 }
    }
}

#[derive(Clone, Debug)]
pub struct ConvELayers {
    pub config: ConvEConfig,
    pub width: usize,
    pub filters: ParamId,
    pub conv_bias: ParamId,
    pub proj: ParamId,
    pub proj_bias: ParamId,
    /// (scale, shift) for the input, feature-map and hidden standardisations.
    pub norm: [(ParamId, ParamId); 3],
}

impl ConvELayers {
    fn flat_features(&self) -> usize {
        let c = &self.config;
        c.filters * (2 * c.height - c.kernel + 1) * (self.width - c.kernel + 1)
    }
}

/// Parameter handles of a base model. The relation table has one row per
/// augmented relation plus the trailing UNK row, and doubles as the relation
/// memory read by the relation-learning head.
#[derive(Clone, Debug)]
pub struct Scorer {
    pub kind: ModelKind,
    pub dim: usize,
    pub num_entities: usize,
    pub relation_rows: usize,
    pub entity: ParamId,
    pub relation: ParamId,
    pub entity_bias: Option<ParamId>,
    pub conve: Option<ConvELayers>,
}

/// Names of the running-statistics buffers, in `KgeModel::stats` order.
pub const STAT_NAMES: [&str; 3] = ["conve.bn0", "conve.bn1", "conve.bn2"];

/// A scorer together with its parameters and normalisation buffers.
#[derive(Clone, Debug)]
pub struct KgeModel {
    pub scorer: Scorer,
    pub params: ParamStore,
    pub stats: Vec<RunningStats>,
}

impl KgeModel {
    pub fn new<R: Rng + ?Sized>(
        kind: ModelKind,
        num_entities: usize,
        relation_rows: usize,
        dim: usize,
        conve: ConvEConfig,
        rng: &mut R,
    ) -> Result<Self> {
        if dim == 0 || num_entities == 0 || relation_rows == 0 {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        let mut params = ParamStore::new();
        let entity = params.add("entity", xavier_uniform(&[num_entities, dim], rng));
        let relation = params.add("relation", xavier_uniform(&[relation_rows, dim], rng));
        let entity_bias = (kind != ModelKind::TransE).then(|| params.add("entity_bias", Tensor::zeros(&[num_entities])));
        let mut stats = Vec::new();
        let conve = if kind == ModelKind::ConvE {
            let c = conve;
            if c.height == 0 || dim % c.height != 0 {
                return Err(Error::Config(format!("dim {dim} is not divisible by conve height {}", c.height)));
            }
            let width = dim / c.height;
            if c.kernel == 0 || c.kernel > width || c.kernel > 2 * c.height || c.filters == 0 {
                return Err(Error::Config(format!("conve kernel {} does not fit a {}x{width} input", c.kernel, 2 * c.height)));
            }
            let filters = params.add("conve.filters", xavier_uniform(&[c.filters, 1, c.kernel, c.kernel], rng));
            let conv_bias = params.add("conve.conv_bias", Tensor::zeros(&[c.filters]));
            let mut layers = ConvELayers {
                config: c,
                width,
                filters,
                conv_bias,
                proj: filters,
                proj_bias: conv_bias,
                norm: [(filters, filters); 3],
            };
            let flat = layers.flat_features();
            layers.proj = params.add("conve.proj", xavier_uniform(&[flat, dim], rng));
            layers.proj_bias = params.add("conve.proj_bias", Tensor::zeros(&[dim]));
            for (k, ch) in [1, c.filters, dim].into_iter().enumerate() {
                let scale = params.add(format!("{}.scale", STAT_NAMES[k]), Tensor::full(&[ch], 1.0));
                let shift = params.add(format!("{}.shift", STAT_NAMES[k]), Tensor::zeros(&[ch]));
                layers.norm[k] = (scale, shift);
                stats.push(RunningStats::new(ch));
            }
            Some(layers)
        } else {
            None
        };
        Ok(KgeModel {
            scorer: Scorer { kind, dim, num_entities, relation_rows, entity, relation, entity_bias, conve },
            params,
            stats,
        })
    }
}

impl Scorer {
    /// Query vectors `[batch, dim]` for heads `e_h` under relation vectors `rel`.
    pub fn query<R: Rng + ?Sized>(
        &self,
        g: &mut Graph,
        stats: &mut [RunningStats],
        e_h: Var,
        rel: Var,
        train: bool,
        rng: &mut R,
    ) -> Result<Var> {
        match self.kind {
            ModelKind::DistMult => g.mul(e_h, rel),
            ModelKind::ConvE => {
                let layers = self.conve.as_ref().expect("conve layers");
                conve_query(g, layers, stats, e_h, rel, train, rng)
            }
            ModelKind::TransE => Err(Error::op("score", "TransE has no 1-N query form")),
        }
    }

    /// Logits of every entity as the tail: `[batch, |E|]`.
    pub fn score_all(&self, g: &mut Graph, query: Var) -> Result<Var> {
        let ent = g.param(self.entity);
        let logits = g.matmul_t(query, ent)?;
        match self.entity_bias {
            Some(b) => {
                let bias = g.param(b);
                g.add(logits, bias)
            }
            None => Ok(logits),
        }
    }

    /// Logit of one given tail per row: `[batch]`.
    pub fn score_pairs(&self, g: &mut Graph, query: Var, tails: &[usize]) -> Result<Var> {
        let ent = g.param(self.entity);
        let e_t = g.embedding_lookup(ent, tails)?;
        let prod = g.mul(query, e_t)?;
        let dots = g.sum(prod, Some(1))?;
        match self.entity_bias {
            Some(b) => {
                let bias = g.param(b);
                let col = g.reshape(bias, &[self.num_entities, 1])?;
                let picked = g.embedding_lookup(col, tails)?;
                let picked = g.reshape(picked, &[tails.len()])?;
                g.add(dots, picked)
            }
            None => Ok(dots),
        }
    }

    /// Looks up relation vectors by id.
    pub fn relation_vectors(&self, g: &mut Graph, relations: &[usize]) -> Result<Var> {
        let table = g.param(self.relation);
        g.embedding_lookup(table, relations)
    }

    pub fn entity_vectors(&self, g: &mut Graph, entities: &[usize]) -> Result<Var> {
        let table = g.param(self.entity);
        g.embedding_lookup(table, entities)
    }
}

#[allow(clippy::too_many_arguments)]
fn conve_query<R: Rng + ?Sized>(
    g: &mut Graph,
    layers: &ConvELayers,
    stats: &mut [RunningStats],
    e_h: Var,
    rel: Var,
    train: bool,
    rng: &mut R,
) -> Result<Var> {
    let c = &layers.config;
    let batch = g.shape(e_h)[0];
    let (h, w) = (c.height, layers.width);
    let img_h = g.reshape(e_h, &[batch, 1, h, w])?;
    let img_r = g.reshape(rel, &[batch, 1, h, w])?;
    let x = g.concat(&[img_h, img_r], 2)?;
    let x = g.dropout(x, c.input_dropout, train, rng)?;
    let (s0, b0) = (g.param(layers.norm[0].0), g.param(layers.norm[0].1));
    let x = g.batch_standardize(x, s0, b0, &mut stats[0], train)?;
    let (f, fb) = (g.param(layers.filters), g.param(layers.conv_bias));
    let x = g.conv2d(x, f, Some(fb))?;
    let (s1, b1) = (g.param(layers.norm[1].0), g.param(layers.norm[1].1));
    let x = g.batch_standardize(x, s1, b1, &mut stats[1], train)?;
    let x = g.relu(x);
    let x = g.dropout(x, c.feature_dropout, train, rng)?;
    let x = g.reshape(x, &[batch, layers.flat_features()])?;
    let (p, pb) = (g.param(layers.proj), g.param(layers.proj_bias));
    let x = g.matmul(x, p)?;
    let x = g.add(x, pb)?;
    let x = g.dropout(x, c.hidden_dropout, train, rng)?;
    let (s2, b2) = (g.param(layers.norm[2].0), g.param(layers.norm[2].1));
    let x = g.batch_standardize(x, s2, b2, &mut stats[2], train)?;
    Ok(g.relu(x))
}

/// 1-N targets for a batch of training triples: row `b` marks every known
/// training tail of `(head_b, relation_b)`, then applies label smoothing
/// `t <- t * (1 - smoothing) + smoothing / |E|`.
pub fn label_matrix(
    batch: &[Triple],
    train_tails: &HashMap<(usize, usize), Vec<usize>>,
    num_entities: usize,
    smoothing: f64,
) -> Tensor {
    let mut data = vec![0.0; batch.len() * num_entities];
    for (b, t) in batch.iter().enumerate() {
        let row = &mut data[b * num_entities..(b + 1) * num_entities];
        match train_tails.get(&(t.head, t.relation)) {
            Some(tails) => tails.iter().for_each(|&e| row[e] = 1.0),
            None => row[t.tail] = 1.0,
        }
    }
    if smoothing > 0.0 {
        let add = smoothing / num_entities as f64;
        data.iter_mut().for_each(|v| *v = *v * (1.0 - smoothing) + add);
    }
    Tensor::new(vec![batch.len(), num_entities], data).expect("label shape")
}

/// Mean binary cross-entropy over every (query, candidate) cell.
pub fn score_loss(g: &mut Graph, logits: Var, labels: Tensor) -> Result<Var> {
    g.bce_with_logits(logits, labels)
}

// ---- TransE ---------------------------------------------------------------

/// `-||e_h + r - e_t||_1`.
pub fn transe_score(h: usize, r: usize, t: usize, model: &KgeModel) -> f64 {
    let s = &model.scorer;
    let ent = model.params.get(s.entity);
    let rel = model.params.get(s.relation);
    -ent.row(h).iter().zip(rel.row(r)).zip(ent.row(t)).map(|((a, b), c)| (a + b - c).abs()).sum::<f64>()
}

/// TransE logits of every entity as tail for each `(head, relation)` query.
pub fn transe_score_all(model: &KgeModel, queries: &[(usize, usize)]) -> Tensor {
    let s = &model.scorer;
    let ent = model.params.get(s.entity);
    let rel = model.params.get(s.relation);
    let mut out = Vec::with_capacity(queries.len() * s.num_entities);
    for &(h, r) in queries {
        let q: Vec<f64> = ent.row(h).iter().zip(rel.row(r)).map(|(a, b)| a + b).collect();
        for e in 0..s.num_entities {
            out.push(-q.iter().zip(ent.row(e)).map(|(a, b)| (a - b).abs()).sum::<f64>());
        }
    }
    Tensor::new(vec![queries.len(), s.num_entities], out).expect("score shape")
}

/// Corrupts head or tail (fair coin) with a uniformly drawn entity.
pub fn corrupt<R: Rng + ?Sized>(pos: &[Triple], num_entities: usize, n_neg: usize, rng: &mut R) -> Vec<Triple> {
    let mut out = Vec::with_capacity(pos.len() * n_neg);
    for t in pos {
        for _ in 0..n_neg {
            let e = rng.gen_range(0..num_entities);
            out.push(if rng.gen_bool(0.5) { Triple::new(e, t.relation, t.tail) } else { Triple::new(t.head, t.relation, e) });
        }
    }
    out
}

fn transe_distance(g: &mut Graph, scorer: &Scorer, triples: &[Triple]) -> Result<Var> {
    let heads: Vec<usize> = triples.iter().map(|t| t.head).collect();
    let rels: Vec<usize> = triples.iter().map(|t| t.relation).collect();
    let tails: Vec<usize> = triples.iter().map(|t| t.tail).collect();
    let h = scorer.entity_vectors(g, &heads)?;
    let r = scorer.relation_vectors(g, &rels)?;
    let t = scorer.entity_vectors(g, &tails)?;
    let hr = g.add(h, r)?;
    let d = g.sub(hr, t)?;
    let d = g.abs(d);
    g.sum(d, Some(1))
}

/// Mean hinge `max(0, margin + score_neg - score_pos)` where each positive is
/// paired with the `negatives.len() / pos.len()` corruptions that follow it.
pub fn transe_loss(g: &mut Graph, scorer: &Scorer, pos: &[Triple], negatives: &[Triple], margin: f64) -> Result<Var> {
    if pos.is_empty() || negatives.len() % pos.len() != 0 {
        return Err(Error::op("transe_loss", "each positive needs the same number of negatives"));
    }
    let per = negatives.len() / pos.len();
    let expanded: Vec<Triple> = pos.iter().flat_map(|t| std::iter::repeat(*t).take(per)).collect();
    let dp = transe_distance(g, scorer, &expanded)?;
    let dn = transe_distance(g, scorer, negatives)?;
    // score = -distance, so margin + score_neg - score_pos = margin + dp - dn
    let diff = g.sub(dp, dn)?;
    let shifted = g.affine(diff, 1.0, margin);
    let hinge = g.relu(shifted);
    g.mean(hinge)
}

/// Loss of `pos` against fixed `negatives` without updating anything.
pub fn transe_loss_value(model: &KgeModel, pos: &[Triple], negatives: &[Triple], margin: f64) -> Result<f64> {
    let mut g = Graph::inference(&model.params);
    let l = transe_loss(&mut g, &model.scorer, pos, negatives, margin)?;
    Ok(g.value(l).item())
}

/// One optimizer step against the given negatives; returns the pre-step loss.
/// Entity rows are renormalised to unit L2 norm afterwards.
pub fn transe_step_with(model: &mut KgeModel, adam: &mut Adam, pos: &[Triple], negatives: &[Triple], margin: f64) -> Result<f64> {
    if margin <= 0.0 {
        return Err(Error::Config(format!("margin must be positive, got {margin}")));
    }
    let (loss, grads) = {
        let mut g = Graph::new(&model.params);
        let l = transe_loss(&mut g, &model.scorer, pos, negatives, margin)?;
        let v = g.value(l).item();
        (v, g.backward(l)?)
    };
    adam.step(&mut model.params, grads)?;
    let ent = model.params.get_mut(model.scorer.entity);
    let rows = ent.shape()[0];
    for i in 0..rows {
        let row = ent.row_mut(i);
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            row.iter_mut().for_each(|v| *v /= norm);
        }
    }
    Ok(loss)
}

/// Margin-ranking step with freshly sampled negatives.
pub fn transe_train_step<R: Rng + ?Sized>(
    model: &mut KgeModel,
    adam: &mut Adam,
    pos: &[Triple],
    margin: f64,
    n_neg: usize,
    rng: &mut R,
) -> Result<f64> {
    let negatives = corrupt(pos, model.scorer.num_entities, n_neg.max(1), rng);
    transe_step_with(model, adam, pos, &negatives, margin)
}
