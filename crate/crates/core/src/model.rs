//! A scorer with an optional relation-learning head: training steps,
//! evaluation logits and zero-shot scoring.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grl::{argmax, fuse, total_loss, FusionMode, GrlHead, JointMode, MaskMode, ZeroShotMode};
use crate::kgdata::Triple;
use crate::numcore::{Adam, Graph, ParamStore, RunningStats, Tensor, Var};
use crate::scorers::{label_matrix, score_loss, transe_score_all, transe_train_step, ConvEConfig, KgeModel, ModelKind};

/// Independent random streams derived from one master seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    InitBase = 1,
    InitGrl = 2,
    Shuffle = 3,
    Dropout = 4,
    Negatives = 5,
}

/// splitmix64 of `master` offset by the stream tag.
pub fn derive_seed(master: u64, stream: Stream) -> u64 {
    let mut z = master.wrapping_add((stream as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn stream_rng(master: u64, stream: Stream) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, stream))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GrlSettings {
    pub joint_mode: JointMode,
    pub fusion_mode: FusionMode,
    pub mask_mode: MaskMode,
    pub lambda: f64,
}

impl Default for GrlSettings {
    fn default() -> Self {
        GrlSettings {
            joint_mode: JointMode::Concat,
            fusion_mode: FusionMode::Adaptive,
            mask_mode: MaskMode::PreSoftmax,
            lambda: 0.1,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub num_entities: usize,
    /// Relation table rows, UNK included.
    pub relation_rows: usize,
    pub dim: usize,
    pub conve: ConvEConfig,
    pub grl: Option<GrlSettings>,
}

/// Rows of the 1-N score matrix in a training batch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ScoreRows {
    /// One row per distinct `(head, relation)`.
    #[default]
    Key,
    /// One row per training triple; keys with several tails repeat.
    Triple,
}

impl std::str::FromStr for ScoreRows {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "key" => Ok(ScoreRows::Key),
            "triple" => Ok(ScoreRows::Triple),
            _ => Err(Error::Config(format!("unknown score_rows {s:?} (expected key or triple)"))),
        }
    }
}

impl std::fmt::Display for ScoreRows {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ScoreRows::Key => "key",
            ScoreRows::Triple => "triple",
        })
    }
}

/// Graph handles of the training objective.
#[derive(Clone, Copy, Debug)]
pub struct Losses {
    pub score: Var,
    pub class: Option<Var>,
    pub total: Var,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLoss {
    pub score: f64,
    pub class: f64,
}

#[derive(Clone, Debug)]
pub struct Model {
    pub spec: ModelSpec,
    pub kge: KgeModel,
    pub grl: Option<GrlHead>,
}

impl Model {
    /// Base parameters come from the `InitBase` stream and the head's from
    /// `InitGrl`, so enabling the head leaves the base initialisation as is.
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self> {
        let kge = KgeModel::new(
            spec.kind,
            spec.num_entities,
            spec.relation_rows,
            spec.dim,
            spec.conve,
            &mut stream_rng(seed, Stream::InitBase),
        )?;
        let mut model = Model { spec, kge, grl: None };
        if let Some(s) = model.spec.grl {
            if model.spec.kind == ModelKind::TransE {
                return Err(Error::Config("the relation-learning head needs a 1-N scorer (distmult or conve)".into()));
            }
            let classes = model.spec.relation_rows - 1;
            let head = GrlHead::new(
                &mut model.kge.params,
                model.spec.dim,
                classes,
                s.joint_mode,
                s.fusion_mode,
                s.mask_mode,
                s.lambda,
                &mut stream_rng(seed, Stream::InitGrl),
            )?;
            model.grl = Some(head);
        }
        Ok(model)
    }

    pub fn params(&self) -> &ParamStore {
        &self.kge.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.kge.params
    }

    pub fn num_entities(&self) -> usize {
        self.spec.num_entities
    }

    fn is_direct(&self) -> bool {
        self.grl.as_ref().is_some_and(|h| h.fusion_mode == FusionMode::Direct)
    }

    /// Builds the training objective for a batch of `(head, relation)` keys.
    /// The head sees every training triple of those keys; the score loss has
    /// one 1-N row per key, or per triple with [`ScoreRows::Triple`] (always
    /// the case in direct fusion, where the relation depends on the tail).
    #[allow(clippy::too_many_arguments)]
    pub fn build_loss<R: Rng + ?Sized>(
        &self,
        g: &mut Graph,
        stats: &mut [RunningStats],
        keys: &[(usize, usize)],
        train_tails: &HashMap<(usize, usize), Vec<usize>>,
        smoothing: f64,
        rows: ScoreRows,
        rng: &mut R,
    ) -> Result<Losses> {
        if self.spec.kind == ModelKind::TransE {
            return Err(Error::op("build_loss", "TransE trains with transe_epoch"));
        }
        let triples: Vec<Triple> = keys
            .iter()
            .flat_map(|&(h, r)| train_tails.get(&(h, r)).into_iter().flatten().map(move |&t| Triple::new(h, r, t)))
            .collect();
        if triples.is_empty() {
            return Err(Error::op("build_loss", "batch has no training triples"));
        }
        let n = self.spec.num_entities;
        let scorer = &self.kge.scorer;
        let heads: Vec<usize> = triples.iter().map(|t| t.head).collect();
        let rels: Vec<usize> = triples.iter().map(|t| t.relation).collect();
        let tails: Vec<usize> = triples.iter().map(|t| t.tail).collect();
        if let Some(head) = self.grl.as_ref().filter(|h| h.fusion_mode == FusionMode::Direct) {
            let e_h = scorer.entity_vectors(g, &heads)?;
            let e_t = scorer.entity_vectors(g, &tails)?;
            let r = scorer.relation_vectors(g, &rels)?;
            let m = head.memory(g, scorer.relation)?;
            let v = head.forward(g, e_h, e_t, m, Some(&rels))?;
            let r2 = fuse(g, r, v.knowledge, v.gate)?;
            let q = scorer.query(g, stats, e_h, r2, true, rng)?;
            let logits = scorer.score_all(g, q)?;
            let labels = label_matrix(&triples, train_tails, n, smoothing);
            let score = score_loss(g, logits, labels)?;
            return Ok(Losses { score, class: None, total: score });
        }
        let row_triples: Vec<Triple> = match rows {
            ScoreRows::Key => keys.iter().map(|&(h, r)| Triple::new(h, r, 0)).collect(),
            ScoreRows::Triple => triples.clone(),
        };
        let rh: Vec<usize> = row_triples.iter().map(|t| t.head).collect();
        let rr: Vec<usize> = row_triples.iter().map(|t| t.relation).collect();
        let e_h = scorer.entity_vectors(g, &rh)?;
        let r = scorer.relation_vectors(g, &rr)?;
        let q = scorer.query(g, stats, e_h, r, true, rng)?;
        let logits = scorer.score_all(g, q)?;
        let labels = label_matrix(&row_triples, train_tails, n, smoothing);
        let score = score_loss(g, logits, labels)?;
        let Some(head) = &self.grl else {
            return Ok(Losses { score, class: None, total: score });
        };
        let e_h = scorer.entity_vectors(g, &heads)?;
        let e_t = scorer.entity_vectors(g, &tails)?;
        let m = head.memory(g, scorer.relation)?;
        let v = head.forward(g, e_h, e_t, m, Some(&rels))?;
        let class = head.classification_loss(g, v.fused, &rels)?;
        let total = total_loss(g, score, class, head.lambda)?;
        Ok(Losses { score, class: Some(class), total })
    }

    /// One optimizer step on [`Model::build_loss`]. `at` is `(epoch, batch)`
    /// for diagnostics.
    #[allow(clippy::too_many_arguments)]
    pub fn train_step<R: Rng + ?Sized>(
        &mut self,
        adam: &mut Adam,
        keys: &[(usize, usize)],
        train_tails: &HashMap<(usize, usize), Vec<usize>>,
        smoothing: f64,
        rows: ScoreRows,
        rng: &mut R,
        at: (usize, usize),
    ) -> Result<StepLoss> {
        let mut stats = std::mem::take(&mut self.kge.stats);
        let result = (|| {
            let mut g = Graph::new(&self.kge.params);
            let l = self.build_loss(&mut g, &mut stats, keys, train_tails, smoothing, rows, rng)?;
            let score = g.value(l.score).item();
            let class = l.class.map_or(0.0, |v| g.value(v).item());
            let (epoch, batch) = at;
            if !score.is_finite() {
                return Err(Error::NonFinite { epoch, batch, term: "L_s" });
            }
            if !class.is_finite() {
                return Err(Error::NonFinite { epoch, batch, term: "L_c" });
            }
            let grads = g.backward(l.total)?;
            if !grads.max_abs().is_finite() {
                return Err(Error::NonFinite { epoch, batch, term: "gradient" });
            }
            Ok((StepLoss { score, class }, grads))
        })();
        self.kge.stats = stats;
        let (loss, grads) = result?;
        adam.step(&mut self.kge.params, grads)?;
        Ok(loss)
    }

    /// One epoch of margin-ranking steps; returns the mean loss.
    pub fn transe_epoch(
        &mut self,
        adam: &mut Adam,
        batches: &[Vec<Triple>],
        margin: f64,
        n_neg: usize,
        rng: &mut ChaCha8Rng,
        epoch: usize,
    ) -> Result<f64> {
        let mut sum = 0.0;
        for (b, batch) in batches.iter().enumerate() {
            let l = transe_train_step(&mut self.kge, adam, batch, margin, n_neg, rng)?;
            if !l.is_finite() {
                return Err(Error::NonFinite { epoch, batch: b, term: "L_s" });
            }
            sum += l;
        }
        Ok(sum / batches.len().max(1) as f64)
    }

    /// Tail logits `[queries, |E|]` at evaluation time.
    pub fn tail_logits(&self, queries: &[(usize, usize)]) -> Result<Tensor> {
        if self.spec.kind == ModelKind::TransE {
            return Ok(transe_score_all(&self.kge, queries));
        }
        if self.is_direct() {
            return self.direct_tail_logits(queries);
        }
        let scorer = &self.kge.scorer;
        let mut stats = self.kge.stats.clone();
        let mut g = Graph::inference(&self.kge.params);
        let heads: Vec<usize> = queries.iter().map(|q| q.0).collect();
        let rels: Vec<usize> = queries.iter().map(|q| q.1).collect();
        let e_h = scorer.entity_vectors(&mut g, &heads)?;
        let r = scorer.relation_vectors(&mut g, &rels)?;
        let q = scorer.query(&mut g, &mut stats, e_h, r, false, &mut NoRng)?;
        let logits = scorer.score_all(&mut g, q)?;
        Ok(g.value(logits).clone())
    }

    /// In direct mode the relation fed to the scorer depends on the tail, so
    /// every candidate is scored as its own pair.
    fn direct_tail_logits(&self, queries: &[(usize, usize)]) -> Result<Tensor> {
        let n = self.spec.num_entities;
        let head = self.grl.as_ref().expect("direct head");
        let scorer = &self.kge.scorer;
        let mut out = Vec::with_capacity(queries.len() * n);
        let tails: Vec<usize> = (0..n).collect();
        for &(h, r) in queries {
            let mut stats = self.kge.stats.clone();
            let mut g = Graph::inference(&self.kge.params);
            let e_h = scorer.entity_vectors(&mut g, &vec![h; n])?;
            let e_t = scorer.entity_vectors(&mut g, &tails)?;
            let rv = scorer.relation_vectors(&mut g, &vec![r; n])?;
            let m = head.memory(&mut g, scorer.relation)?;
            let mask = (r < head.classes).then(|| vec![r; n]);
            let v = head.forward(&mut g, e_h, e_t, m, mask.as_deref())?;
            let r2 = fuse(&mut g, rv, v.knowledge, v.gate)?;
            let q = scorer.query(&mut g, &mut stats, e_h, r2, false, &mut NoRng)?;
            let s = scorer.score_pairs(&mut g, q, &tails)?;
            out.extend_from_slice(g.value(s).data());
        }
        Tensor::new(vec![queries.len(), n], out)
    }

    /// Scores `triples` whose relation is unseen. `None` scores them with
    /// their own relation row (the untrained UNK vector); `Some(mode)`
    /// substitutes the head's zero-shot embedding. Returns sigmoid scores
    /// and, with the head, the most attended relation of each triple.
    pub fn zero_shot_scores(&self, triples: &[Triple], mode: Option<ZeroShotMode>) -> Result<ZeroShotScores> {
        if self.spec.kind == ModelKind::TransE {
            return Err(Error::op("zero_shot_scores", "TransE is not a 1-N scorer"));
        }
        let scorer = &self.kge.scorer;
        let mut stats = self.kge.stats.clone();
        let mut g = Graph::inference(&self.kge.params);
        let heads: Vec<usize> = triples.iter().map(|t| t.head).collect();
        let tails: Vec<usize> = triples.iter().map(|t| t.tail).collect();
        let rels: Vec<usize> = triples.iter().map(|t| t.relation).collect();
        let e_h = scorer.entity_vectors(&mut g, &heads)?;
        let mut predicted = Vec::new();
        let rel: Var = match mode {
            None => scorer.relation_vectors(&mut g, &rels)?,
            Some(mode) => {
                let head = self
                    .grl
                    .as_ref()
                    .ok_or_else(|| Error::op("zero_shot_scores", "model has no relation-learning head"))?;
                let e_t = scorer.entity_vectors(&mut g, &tails)?;
                let m = head.memory(&mut g, scorer.relation)?;
                let v = head.forward(&mut g, e_h, e_t, m, None)?;
                let k = head.classes;
                predicted = g.value(v.attention).data().chunks(k).map(argmax).collect();
                match mode {
                    ZeroShotMode::Fusion => v.fused,
                    ZeroShotMode::MostSimilar => scorer.relation_vectors(&mut g, &predicted)?,
                }
            }
        };
        let q = scorer.query(&mut g, &mut stats, e_h, rel, false, &mut NoRng)?;
        let s = scorer.score_pairs(&mut g, q, &tails)?;
        let p = g.sigmoid(s);
        Ok(ZeroShotScores { scores: g.value(p).data().to_vec(), predicted })
    }

    /// Unmasked attention over the relation memory for each triple.
    pub fn attention(&self, triples: &[Triple]) -> Result<Tensor> {
        let head = self.grl.as_ref().ok_or_else(|| Error::op("attention", "model has no relation-learning head"))?;
        let scorer = &self.kge.scorer;
        let mut g = Graph::inference(&self.kge.params);
        let heads: Vec<usize> = triples.iter().map(|t| t.head).collect();
        let tails: Vec<usize> = triples.iter().map(|t| t.tail).collect();
        let e_h = scorer.entity_vectors(&mut g, &heads)?;
        let e_t = scorer.entity_vectors(&mut g, &tails)?;
        let m = head.memory(&mut g, scorer.relation)?;
        let v = head.forward(&mut g, e_h, e_t, m, None)?;
        Ok(g.value(v.attention).clone())
    }

    /// Parameters and running statistics rounded to f32, as stored on disk.
    pub fn rounded_state(&self) -> (ParamStore, Vec<RunningStats>) {
        let mut params = self.kge.params.clone();
        for id in params.ids().collect::<Vec<_>>() {
            round_f32(params.get_mut(id).data_mut());
        }
        let mut stats = self.kge.stats.clone();
        for s in &mut stats {
            round_f32(&mut s.mean);
            round_f32(&mut s.var);
        }
        (params, stats)
    }

    pub fn set_state(&mut self, params: ParamStore, stats: Vec<RunningStats>) {
        self.kge.params = params;
        self.kge.stats = stats;
    }
}

fn round_f32(v: &mut [f64]) {
    v.iter_mut().for_each(|x| *x = *x as f32 as f64);
}

#[derive(Clone, Debug, PartialEq)]
pub struct ZeroShotScores {
    pub scores: Vec<f64>,
    pub predicted: Vec<usize>,
}

/// Stand-in generator for evaluation passes, where dropout is disabled and
/// never draws.
struct NoRng;

impl rand::RngCore for NoRng {
    fn next_u32(&mut self) -> u32 {
        unreachable!("evaluation draws no random numbers")
    }
    fn next_u64(&mut self) -> u64 {
        unreachable!("evaluation draws no random numbers")
    }
    fn fill_bytes(&mut self, _: &mut [u8]) {
        unreachable!("evaluation draws no random numbers")
    }
    fn try_fill_bytes(&mut self, _: &mut [u8]) -> std::result::Result<(), rand::Error> {
        unreachable!("evaluation draws no random numbers")
    }
}
