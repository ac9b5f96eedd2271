//! Data preparation and the training loop with early stopping.

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::evalrank::{evaluate_split, RankingReport};
use crate::kgdata::{
    batches, frequency_split, read_triples, withhold_relation, KnowledgeGraph, RawTriple, RelationGroups, Split, ZeroShotSplit,
};
use crate::model::{derive_seed, stream_rng, Model, ModelSpec, Stream};
use crate::numcore::Adam;
use crate::scorers::ModelKind;

/// Loaded, inverse-augmented graph plus the withheld relation's triples
/// when the config asks for one.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub kg: KnowledgeGraph,
    pub groups: RelationGroups,
    pub withheld: Option<Vec<RawTriple>>,
}

impl Dataset {
    pub fn load(cfg: &RunConfig) -> Result<Self> {
        let (train, valid, test) =
            (read_triples(&cfg.train_path)?, read_triples(&cfg.valid_path)?, read_triples(&cfg.test_path)?);
        let (splits, withheld) = match &cfg.withhold_relation {
            Some(rel) => {
                let (s, side) = withhold_relation(&train, &valid, &test, rel)?;
                (s, Some(side))
            }
            None => ([train, valid, test], None),
        };
        Self::from_raw(&splits, withheld, cfg.many_fraction)
    }

    pub fn from_raw(splits: &[Vec<RawTriple>; 3], withheld: Option<Vec<RawTriple>>, many_fraction: f64) -> Result<Self> {
        let mut kg = KnowledgeGraph::from_raw(&splits[0], &splits[1], &splits[2])?;
        let groups = frequency_split(&kg, many_fraction);
        kg.augment_inverse()?;
        Ok(Dataset { kg, groups, withheld })
    }

    /// Zero-shot triples from the withheld relation.
    pub fn zero_shot(&self) -> Result<ZeroShotSplit> {
        let side = self.withheld.clone().ok_or_else(|| Error::Config("no relation was withheld".into()))?;
        ZeroShotSplit::from_side_table(&self.kg, side)
    }
}

pub fn model_spec(cfg: &RunConfig, kg: &KnowledgeGraph) -> ModelSpec {
    ModelSpec {
        kind: cfg.model,
        num_entities: kg.num_entities(),
        relation_rows: kg.relations.len(),
        dim: cfg.dim,
        conve: cfg.conve(),
        grl: cfg.grl(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub epoch: usize,
    #[serde(rename = "L_s")]
    pub score_loss: f64,
    #[serde(rename = "L_c")]
    pub class_loss: f64,
    pub val_mrr: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters of the best validation evaluation, rounded to f32.
    pub model: Model,
    pub best_epoch: usize,
    pub best_val_mrr: f64,
    pub epochs_run: usize,
    pub log: Vec<LogRecord>,
}

/// Trains from the master seed in `cfg`, evaluating validation MRR every
/// `eval_every` epochs (and after the last one) and stopping after
/// `patience` evaluations without improvement.
pub fn train(cfg: &RunConfig, data: &Dataset, on_log: &mut dyn FnMut(&LogRecord)) -> Result<TrainOutcome> {
    let kg = &data.kg;
    let mut model = Model::new(model_spec(cfg, kg), cfg.seed)?;
    let mut adam = Adam::new(cfg.lr);
    let mut dropout_rng = stream_rng(cfg.seed, Stream::Dropout);
    let mut negative_rng = stream_rng(cfg.seed, Stream::Negatives);
    let shuffle_seed = derive_seed(cfg.seed, Stream::Shuffle);
    let train_tails = kg.tail_index(Split::Train);
    let mut keys: Vec<(usize, usize)> = train_tails.keys().copied().collect();
    keys.sort_unstable();

    let mut best: Option<(f64, usize, Model)> = None;
    let mut bad_evals = 0;
    let mut log = Vec::new();
    let mut epochs_run = 0;
    for epoch in 1..=cfg.epochs {
        epochs_run = epoch;
        let (score, class) = if cfg.model == ModelKind::TransE {
            let bs = batches(&kg.train, cfg.batch_size, shuffle_seed, epoch as u64);
            let l = model.transe_epoch(&mut adam, &bs, cfg.transe_margin, cfg.transe_negatives, &mut negative_rng, epoch)?;
            (l, 0.0)
        } else {
            let bs = batches(&keys, cfg.batch_size, shuffle_seed, epoch as u64);
            let (mut s, mut c) = (0.0, 0.0);
            for (b, batch) in bs.iter().enumerate() {
                let l = model.train_step(&mut adam, batch, &train_tails, cfg.label_smoothing, cfg.score_rows, &mut dropout_rng, (epoch, b))?;
                s += l.score;
                c += l.class;
            }
            (s / bs.len() as f64, c / bs.len() as f64)
        };
        let evaluate = epoch % cfg.eval_every == 0 || epoch == cfg.epochs;
        let val_mrr = if evaluate {
            let (params, stats) = model.rounded_state();
            let mut snapshot = model.clone();
            snapshot.set_state(params, stats);
            let mrr = evaluate_split(&snapshot, kg, Split::Valid, &data.groups, false)?.metrics.mrr;
            if best.as_ref().map_or(true, |b| mrr > b.0) {
                best = Some((mrr, epoch, snapshot));
                bad_evals = 0;
            } else {
                bad_evals += 1;
            }
            Some(mrr)
        } else {
            None
        };
        let rec = LogRecord { epoch, score_loss: score, class_loss: class, val_mrr };
        on_log(&rec);
        log.push(rec);
        if bad_evals >= cfg.patience {
            break;
        }
    }
    let (best_val_mrr, best_epoch, model) = best.expect("the final epoch is always evaluated");
    Ok(TrainOutcome { model, best_epoch, best_val_mrr, epochs_run, log })
}

/// Test-split report for a trained model.
pub fn test_report(model: &Model, data: &Dataset, per_query: bool) -> Result<RankingReport> {
    evaluate_split(model, &data.kg, Split::Test, &data.groups, per_query)
}
