//! Filtered ranking evaluation and the zero-shot report.

use std::collections::BTreeSet;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grl::ZeroShotMode;
use crate::kgdata::{Group, KnowledgeGraph, RelationGroups, Split, Vocab, ZeroShotSplit};
use crate::model::Model;
use crate::numcore::{ParamStore, Tensor};
use crate::scorers::KgeModel;

/// Anything that can score every entity as the tail of `(head, relation)`.
pub trait LinkScorer {
    fn num_entities(&self) -> usize;
    fn tail_logits(&self, queries: &[(usize, usize)]) -> Result<Tensor>;
}

impl LinkScorer for Model {
    fn num_entities(&self) -> usize {
        Model::num_entities(self)
    }
    fn tail_logits(&self, queries: &[(usize, usize)]) -> Result<Tensor> {
        Model::tail_logits(self, queries)
    }
}

/// Filtered rank of `gold`: entities in `filter` other than `gold` are
/// removed, and ties with the gold score count half.
pub fn rank_entity(scores: &[f64], gold: usize, filter: Option<&BTreeSet<usize>>) -> Result<f64> {
    let Some(&s) = scores.get(gold) else {
        return Err(Error::op("rank_entity", format!("gold {gold} out of range for {} entities", scores.len())));
    };
    let (mut greater, mut equal) = (0usize, 0usize);
    for (e, &v) in scores.iter().enumerate() {
        if e == gold || filter.is_some_and(|f| f.contains(&e)) {
            continue;
        }
        if v > s {
            greater += 1;
        } else if v == s {
            equal += 1;
        }
    }
    Ok(1.0 + greater as f64 + equal as f64 / 2.0)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mrr: f64,
    pub h1: f64,
    pub h5: f64,
    pub h10: f64,
    pub queries: usize,
}

impl Metrics {
    pub fn from_ranks(ranks: &[f64]) -> Self {
        if ranks.is_empty() {
            return Metrics::default();
        }
        let n = ranks.len() as f64;
        let hits = |k: f64| ranks.iter().filter(|&&r| r <= k).count() as f64 / n;
        Metrics {
            mrr: ranks.iter().map(|r| 1.0 / r).sum::<f64>() / n,
            h1: hits(1.0),
            h5: hits(5.0),
            h10: hits(10.0),
            queries: ranks.len(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GroupMetrics {
    pub many: Metrics,
    pub few: Metrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub head: usize,
    pub relation: usize,
    pub gold: usize,
    pub rank: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ZeroShotReport {
    pub mode: String,
    pub triples: usize,
    /// Mean sigmoid score with the substituted relation embedding.
    pub mean_score: f64,
    /// Mean sigmoid score with the untrained UNK row.
    pub baseline_score: f64,
    /// Mean cosine between the predicted and the true relation in an
    /// auxiliary embedding space; absent when no triple could be compared.
    pub mean_similarity: Option<f64>,
    pub similarity_skipped: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankingReport {
    pub metrics: Metrics,
    pub groups: GroupMetrics,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub zero_shot: Vec<ZeroShotReport>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub per_query: Option<Vec<QueryRecord>>,
    pub timestamp: u64,
}

impl RankingReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

pub fn unix_time() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

const EVAL_CHUNK: usize = 256;

/// Ranks every base triple of `split` as a tail query `(h, r, ?)` and, via
/// the inverse relation, as a head query `(t, r_inv, ?)`. Group metrics use
/// the base relation's group.
pub fn evaluate_split(
    model: &dyn LinkScorer,
    kg: &KnowledgeGraph,
    split: Split,
    groups: &RelationGroups,
    keep_per_query: bool,
) -> Result<RankingReport> {
    if !kg.is_augmented() {
        return Err(Error::Data("evaluation expects a graph with inverse relations".into()));
    }
    let nb = kg.num_base_relations();
    let mut queries = Vec::new();
    for t in kg.split(split).iter().filter(|t| t.relation < nb) {
        let inv = kg.inverse_of(t.relation).expect("augmented");
        queries.push((t.head, t.relation, t.tail, t.relation));
        queries.push((t.tail, inv, t.head, t.relation));
    }
    if queries.is_empty() {
        return Err(Error::Data(format!("{split:?} split has no triples to evaluate")));
    }
    let n = model.num_entities();
    let mut ranks = Vec::with_capacity(queries.len());
    for chunk in queries.chunks(EVAL_CHUNK) {
        let pairs: Vec<(usize, usize)> = chunk.iter().map(|q| (q.0, q.1)).collect();
        let logits = model.tail_logits(&pairs)?;
        if logits.shape() != [chunk.len(), n] {
            return Err(Error::Shape(format!("tail logits {:?} for {} queries", logits.shape(), chunk.len())));
        }
        for (i, q) in chunk.iter().enumerate() {
            ranks.push(rank_entity(logits.row(i), q.2, kg.filter().tails(q.0, q.1))?);
        }
    }
    let (mut many, mut few) = (Vec::new(), Vec::new());
    for (q, &r) in queries.iter().zip(&ranks) {
        match groups.group_of(q.3) {
            Some(Group::Many) => many.push(r),
            Some(Group::Few) => few.push(r),
            None => {}
        }
    }
    let per_query = keep_per_query.then(|| {
        queries.iter().zip(&ranks).map(|(q, &rank)| QueryRecord { head: q.0, relation: q.1, gold: q.2, rank }).collect()
    });
    Ok(RankingReport {
        metrics: Metrics::from_ranks(&ranks),
        groups: GroupMetrics { many: Metrics::from_ranks(&many), few: Metrics::from_ranks(&few) },
        zero_shot: Vec::new(),
        per_query,
        timestamp: unix_time(),
    })
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Relation embeddings of an auxiliary model looked up by name.
pub struct RelationSpace<'a> {
    pub table: &'a Tensor,
    pub names: &'a Vocab,
}

impl<'a> RelationSpace<'a> {
    pub fn new(model: &'a KgeModel, names: &'a Vocab) -> Self {
        RelationSpace { table: model.params.get(model.scorer.relation), names }
    }

    pub fn from_store(params: &'a ParamStore, table: crate::numcore::ParamId, names: &'a Vocab) -> Self {
        RelationSpace { table: params.get(table), names }
    }

    pub fn similarity(&self, a: &str, b: &str) -> Option<f64> {
        let (i, j) = (self.names.id(a)?, self.names.id(b)?);
        Some(cosine(self.table.row(i), self.table.row(j)))
    }

    /// Mean cosine over all unordered pairs of distinct named relations.
    pub fn mean_pairwise_similarity(&self, names: &[&str]) -> Option<f64> {
        let (mut sum, mut n) = (0.0, 0usize);
        for (i, a) in names.iter().enumerate() {
            for b in &names[i + 1..] {
                sum += self.similarity(a, b)?;
                n += 1;
            }
        }
        (n > 0).then(|| sum / n as f64)
    }
}

/// Mean zero-shot scores under `mode` against the UNK baseline and, given
/// an auxiliary relation space, the similarity of each most attended
/// relation (by base name) to the true one.
pub fn zero_shot_report(
    model: &Model,
    kg: &KnowledgeGraph,
    zs: &ZeroShotSplit,
    mode: ZeroShotMode,
    space: Option<&RelationSpace>,
) -> Result<ZeroShotReport> {
    if zs.triples.is_empty() {
        return Err(Error::Data("0 qualifying triples".into()));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let sub = model.zero_shot_scores(&zs.triples, Some(mode))?;
    let base = model.zero_shot_scores(&zs.triples, None)?;
    let (mut sims, mut skipped) = (Vec::new(), 0);
    if let Some(space) = space {
        for (p, raw) in sub.predicted.iter().zip(&zs.side_table) {
            let predicted = kg.relations.name(kg.base_of(*p));
            match space.similarity(predicted, &raw.1) {
                Some(s) => sims.push(s),
                None => skipped += 1,
            }
        }
    }
    Ok(ZeroShotReport {
        mode: mode.to_string(),
        triples: zs.triples.len(),
        mean_score: mean(&sub.scores),
        baseline_score: mean(&base.scores),
        mean_similarity: (!sims.is_empty()).then(|| mean(&sims)),
        similarity_skipped: skipped,
    })
}
