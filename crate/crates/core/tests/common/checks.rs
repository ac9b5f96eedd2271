//! Property checks shared by the module tests and the acceptance run.
//! Each one panics on the first violation and otherwise returns a short
//! summary of what it covered.

use std::collections::{BTreeSet, HashMap};

use kgrl::evalrank::{evaluate_split, rank_entity, LinkScorer, Metrics};
use kgrl::grl::{fuse_one, knowledge_attention, relational_knowledge, MaskMode};
use kgrl::kgdata::{frequency_split, KnowledgeGraph, RawTriple, RelationGroups, Split, Triple};
use kgrl::model::{stream_rng, GrlSettings, Model, ModelSpec, ScoreRows, Stream};
use kgrl::numcore::{Adam, Graph, ParamId, ParamStore, RunningStats, Tensor, Var};
use kgrl::scorers::{ConvEConfig, ModelKind};
use kgrl::Result;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{max_grad_error, Lcg};

pub const FD_STEP: f64 = 1e-5;

pub fn random_param(store: &mut ParamStore, rng: &mut Lcg, shape: &[usize]) -> ParamId {
    let n = shape.iter().product();
    store.add(format!("p{}", store.len()), Tensor::new(shape.to_vec(), rng.vec(n)).unwrap())
}

/// Contracts `out` against a fixed random tensor so every output element
/// carries a distinct upstream gradient.
pub fn project(g: &mut Graph, out: Var, seed: u64) -> Result<Var> {
    let shape = g.shape(out).to_vec();
    let n = shape.iter().product();
    let w = g.constant(Tensor::new(shape, Lcg(seed).vec(n))?);
    let m = g.mul(out, w)?;
    g.sum(m, None)
}

/// Worst relative gradient error of `f` applied to random parameters.
pub fn op_grad_error(shapes: &[&[usize]], seed: u64, f: impl Fn(&mut Graph, &[Var]) -> Result<Var>) -> f64 {
    let mut rng = Lcg(seed);
    let mut store = ParamStore::new();
    let ids: Vec<_> = shapes.iter().map(|s| random_param(&mut store, &mut rng, s)).collect();
    max_grad_error(&mut store, FD_STEP, |g| {
        let vars: Vec<Var> = ids.iter().map(|&id| g.param(id)).collect();
        let out = f(g, &vars)?;
        project(g, out, seed + 100)
    })
}

type OpCase = (&'static str, Vec<Vec<usize>>, Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var>>);

fn case(name: &'static str, shapes: &[&[usize]], f: impl Fn(&mut Graph, &[Var]) -> Result<Var> + 'static) -> OpCase {
    (name, shapes.iter().map(|s| s.to_vec()).collect(), Box::new(f))
}

/// Every differentiable primitive, each with its own gradient error.
pub fn primitive_grad_errors() -> Vec<(&'static str, f64)> {
    let mut cases = vec![
        case("matmul", &[&[3, 4], &[4, 2]], |g, v| g.matmul(v[0], v[1])),
        case("matmul_t", &[&[3, 4], &[2, 4]], |g, v| g.matmul_t(v[0], v[1])),
        case("matmul_ex ta", &[&[4, 3], &[4, 2]], |g, v| g.matmul_ex(v[0], v[1], true, false)),
        case("matmul shared input", &[&[3, 3]], |g, v| g.matmul_t(v[0], v[0])),
        case("embedding_lookup", &[&[5, 3]], |g, v| g.embedding_lookup(v[0], &[4, 0, 4, 2])),
        case("add", &[&[3, 4], &[3, 4]], |g, v| g.add(v[0], v[1])),
        case("add row broadcast", &[&[3, 4], &[4]], |g, v| g.add(v[0], v[1])),
        case("sub", &[&[3, 4], &[3, 4]], |g, v| g.sub(v[0], v[1])),
        case("mul", &[&[3, 4], &[3, 4]], |g, v| g.mul(v[0], v[1])),
        case("mul column broadcast", &[&[3, 4], &[3, 1]], |g, v| g.mul(v[0], v[1])),
        case("mul scalar broadcast", &[&[3, 4], &[1]], |g, v| g.mul(v[0], v[1])),
        case("affine", &[&[6]], |g, v| Ok(g.affine(v[0], -1.5, 2.0))),
        case("concat axis 1", &[&[2, 3], &[2, 2]], |g, v| g.concat(&[v[0], v[1]], 1)),
        case("concat axis 0", &[&[2, 3], &[1, 3]], |g, v| g.concat(&[v[0], v[1]], 0)),
        case("reshape", &[&[2, 6]], |g, v| g.reshape(v[0], &[3, 2, 2])),
        case("sum axis", &[&[2, 3, 2]], |g, v| g.sum(v[0], Some(1))),
        case("sum all", &[&[2, 3]], |g, v| g.sum(v[0], None)),
        case("relu", &[&[3, 4]], |g, v| Ok(g.relu(v[0]))),
        case("sigmoid", &[&[3, 4]], |g, v| Ok(g.sigmoid(v[0]))),
        case("abs", &[&[3, 4]], |g, v| Ok(g.abs(v[0]))),
        case("softmax axis 1", &[&[3, 4]], |g, v| g.softmax(v[0], 1)),
        case("softmax axis 0", &[&[3, 4]], |g, v| g.softmax(v[0], 0)),
        case("softmax inner axis", &[&[2, 3, 2]], |g, v| g.softmax(v[0], 1)),
        case("softmax excluding", &[&[3, 4]], |g, v| g.softmax_excluding(v[0], &[Some(1), None, Some(3)])),
        case("dropout", &[&[4, 5]], |g, v| g.dropout(v[0], 0.3, true, &mut ChaCha8Rng::seed_from_u64(3))),
        case("conv2d", &[&[2, 2, 5, 4], &[3, 2, 3, 2], &[3]], |g, v| g.conv2d(v[0], v[1], Some(v[2]))),
        case("conv2d no bias", &[&[1, 1, 4, 4], &[2, 1, 3, 3]], |g, v| g.conv2d(v[0], v[1], None)),
    ];
    for train in [true, false] {
        cases.push(case("batch_standardize 2d", &[&[4, 3], &[3], &[3]], move |g, v| {
            let mut stats = RunningStats { mean: vec![0.1, -0.2, 0.3], var: vec![0.5, 1.5, 2.0] };
            g.batch_standardize(v[0], v[1], v[2], &mut stats, train)
        }));
        cases.push(case("batch_standardize 4d", &[&[3, 2, 2, 3], &[2], &[2]], move |g, v| {
            let mut stats = RunningStats::new(2);
            g.batch_standardize(v[0], v[1], v[2], &mut stats, train)
        }));
    }
    let mut out: Vec<(&'static str, f64)> = cases
        .iter()
        .enumerate()
        .map(|(i, (name, shapes, f))| {
            let shapes: Vec<&[usize]> = shapes.iter().map(|s| s.as_slice()).collect();
            (*name, op_grad_error(&shapes, 1 + i as u64, f))
        })
        .collect();

    // losses take fixed targets rather than a projection
    let mut rng = Lcg(30);
    let mut store = ParamStore::new();
    let s = random_param(&mut store, &mut rng, &[3, 5]);
    let targets = Tensor::new(vec![3, 5], (0..15).map(|i| if i % 4 == 0 { 0.9 } else { 0.02 }).collect()).unwrap();
    out.push((
        "bce_with_logits",
        max_grad_error(&mut store, FD_STEP, |g| {
            let x = g.param(s);
            let scaled = g.affine(x, 6.0, 0.0);
            g.bce_with_logits(scaled, targets.clone())
        }),
    ));
    out.push((
        "cross_entropy",
        max_grad_error(&mut store, FD_STEP, |g| {
            let x = g.param(s);
            let scaled = g.affine(x, 4.0, 0.0);
            g.cross_entropy(scaled, &[4, 0, 2])
        }),
    ));
    out
}

pub fn primitive_gradients(tol: f64) -> String {
    let errs = primitive_grad_errors();
    for (name, err) in &errs {
        assert!(*err < tol, "{name}: relative error {err:e}");
    }
    let worst = errs.iter().map(|e| e.1).fold(0.0, f64::max);
    format!("{} primitives, worst relative error {worst:.1e}", errs.len())
}

// ---- GRL -------------------------------------------------------------------

pub fn no_dropout() -> ConvEConfig {
    ConvEConfig { height: 2, filters: 2, kernel: 3, input_dropout: 0.0, feature_dropout: 0.0, hidden_dropout: 0.0 }
}

/// 6 entities, 3 base relations plus inverses plus UNK.
pub fn toy_spec(kind: ModelKind, dim: usize, grl: Option<GrlSettings>, conve: ConvEConfig) -> ModelSpec {
    ModelSpec { kind, num_entities: 6, relation_rows: 7, dim, conve, grl }
}

pub fn toy_tails() -> HashMap<(usize, usize), Vec<usize>> {
    let base = [(0, 0, 1), (0, 0, 2), (1, 1, 3), (2, 2, 4), (3, 0, 5), (4, 1, 0), (5, 2, 1)];
    let mut idx: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
    for (h, r, t) in base {
        idx.entry((h, r)).or_default().push(t);
        idx.entry((t, r + 3)).or_default().push(h);
    }
    idx.values_mut().for_each(|v| v.sort_unstable());
    idx
}

pub fn sorted_keys(idx: &HashMap<(usize, usize), Vec<usize>>) -> Vec<(usize, usize)> {
    let mut k: Vec<_> = idx.keys().copied().collect();
    k.sort_unstable();
    k
}

pub fn triples_of(tails: &HashMap<(usize, usize), Vec<usize>>) -> Vec<Triple> {
    let mut v: Vec<Triple> =
        tails.iter().flat_map(|(&(h, r), ts)| ts.iter().map(move |&t| Triple::new(h, r, t))).collect();
    v.sort_unstable_by_key(|t| (t.head, t.relation, t.tail));
    v
}

/// Finite differences on the full objective `L_s + λ L_c` across joint modes,
/// mask modes and both base scorers.
pub fn end_to_end_gradients(tol: f64) -> String {
    use kgrl::grl::JointMode;
    let cases = [
        (ModelKind::DistMult, JointMode::Concat, MaskMode::PreSoftmax),
        (ModelKind::DistMult, JointMode::Multiply, MaskMode::PostSoftmax),
        (ModelKind::DistMult, JointMode::Sub, MaskMode::PreSoftmax),
        (ModelKind::ConvE, JointMode::Concat, MaskMode::PreSoftmax),
    ];
    let tails = toy_tails();
    let keys = sorted_keys(&tails);
    let mut worst = 0.0f64;
    for (kind, joint_mode, mask_mode) in cases {
        let settings = GrlSettings { joint_mode, mask_mode, lambda: 0.7, ..Default::default() };
        let mut model = Model::new(toy_spec(kind, 8, Some(settings), no_dropout()), 5).unwrap();
        let structure = model.clone();
        let stats = model.kge.stats.clone();
        let err = max_grad_error(model.params_mut(), FD_STEP, |g| {
            let mut st = stats.clone();
            let mut rng = stream_rng(0, Stream::Dropout);
            Ok(structure.build_loss(g, &mut st, &keys, &tails, 0.1, ScoreRows::Key, &mut rng)?.total)
        });
        assert!(err < tol, "{kind} {joint_mode}: relative error {err}");
        worst = worst.max(err);
    }
    format!("{} model variants, worst relative error {worst:.1e}", cases.len())
}

/// Writing a relation row must change the attention computed afterwards,
/// and the new attention must equal a recomputation against the new row.
pub fn memory_aliasing() -> String {
    let mut model = Model::new(toy_spec(ModelKind::DistMult, 4, Some(GrlSettings::default()), no_dropout()), 2).unwrap();
    let triples = triples_of(&toy_tails());
    let before = model.attention(&triples).unwrap();
    let rel = model.kge.scorer.relation;
    model.params_mut().get_mut(rel).row_mut(2).copy_from_slice(&[3.0, -1.0, 0.5, 2.0]);
    let after = model.attention(&triples).unwrap();
    assert_ne!(before, after, "attention ignored a relation-table write");
    let head = model.grl.clone().unwrap();
    let table = model.params().get(rel);
    let memory = Tensor::from_rows(&(0..6).map(|k| table.row(k).to_vec()).collect::<Vec<_>>()).unwrap();
    let ent = model.params().get(model.kge.scorer.entity);
    for (i, t) in triples.iter().enumerate() {
        let j = head.joint_one(model.params(), ent.row(t.head), ent.row(t.tail)).unwrap();
        let want = knowledge_attention(&j, &memory, None).unwrap();
        for (a, b) in after.row(i).iter().zip(&want) {
            assert!((a - b).abs() < 1e-12, "attention {a} vs recomputed {b}");
        }
    }
    format!("{} triples re-attended after a row write", triples.len())
}

/// Training-time forward: gold attention exactly 0, rows normalised (pre
/// mask), gate in (0, 1) and the fused vector equal to the convex mix.
pub fn gold_masking() -> String {
    let triples = triples_of(&toy_tails());
    for mask_mode in [MaskMode::PreSoftmax, MaskMode::PostSoftmax] {
        let settings = GrlSettings { mask_mode, ..Default::default() };
        let model = Model::new(toy_spec(ModelKind::DistMult, 6, Some(settings), no_dropout()), 3).unwrap();
        let head = model.grl.clone().unwrap();
        let mut g = Graph::inference(model.params());
        let s = &model.kge.scorer;
        let hs: Vec<usize> = triples.iter().map(|t| t.head).collect();
        let ts: Vec<usize> = triples.iter().map(|t| t.tail).collect();
        let gold: Vec<usize> = triples.iter().map(|t| t.relation).collect();
        let e_h = s.entity_vectors(&mut g, &hs).unwrap();
        let e_t = s.entity_vectors(&mut g, &ts).unwrap();
        let m = head.memory(&mut g, s.relation).unwrap();
        let v = head.forward(&mut g, e_h, e_t, m, Some(&gold)).unwrap();
        let att = g.value(v.attention);
        for (i, &r) in gold.iter().enumerate() {
            assert_eq!(att.row(i)[r], 0.0, "gold attention not masked");
            assert!(att.row(i).iter().all(|&a| a >= 0.0));
            let sum: f64 = att.row(i).iter().sum();
            if mask_mode == MaskMode::PreSoftmax {
                assert!((sum - 1.0).abs() < 1e-9, "attention sums to {sum}");
            } else {
                assert!(sum < 1.0);
            }
        }
        let (j, rk, p, f) = (g.value(v.joint), g.value(v.knowledge), g.value(v.gate), g.value(v.fused));
        for i in 0..gold.len() {
            let pi = p.row(i)[0];
            assert!(pi > 0.0 && pi < 1.0);
            assert_eq!(f.row(i), fuse_one(j.row(i), rk.row(i), pi).as_slice());
        }
    }
    format!("{} training triples, both mask modes", triples.len())
}

/// Randomised: attention is a distribution with the mask honoured, rk lies
/// in the coordinate-wise hull of the memory rows, fusion stays between
/// its two inputs.
pub fn attention_and_fusion_bounds(cases: usize) -> String {
    let mut rng = Lcg(77);
    for _ in 0..cases {
        let k = 2 + (rng.next_f64() * 6.0) as usize;
        let d = 1 + (rng.next_f64() * 6.0) as usize;
        let memory = Tensor::new(vec![k, d], rng.vec(k * d).iter().map(|v| 3.0 * v).collect()).unwrap();
        let j: Vec<f64> = rng.vec(d).iter().map(|v| 3.0 * v).collect();
        let m = (rng.next_f64() * (k + 1) as f64) as usize;
        let mask = (m < k).then_some(m);
        let a = knowledge_attention(&j, &memory, mask).unwrap();
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(a.iter().all(|&v| v >= 0.0));
        if let Some(g) = mask {
            assert_eq!(a[g], 0.0);
        }
        assert!(knowledge_attention(&j, &memory, Some(k)).is_err());
        let rk = relational_knowledge(&a, &memory);
        for c in 0..d {
            let col = (0..k).map(|r| memory.row(r)[c]);
            let lo = col.clone().fold(f64::INFINITY, f64::min);
            let hi = col.fold(f64::NEG_INFINITY, f64::max);
            assert!(rk[c] >= lo - 1e-12 && rk[c] <= hi + 1e-12, "rk outside the hull");
        }
        let p = rng.next_f64();
        let f = fuse_one(&j, &rk, p);
        for ((x, y), v) in j.iter().zip(&rk).zip(&f) {
            assert!(*v >= x.min(*y) - 1e-12 && *v <= x.max(*y) + 1e-12, "fusion outside its inputs");
        }
    }
    format!("{cases} random memories")
}

/// `steps` optimizer steps over alternating halves of the toy keys; returns
/// the score-loss trace.
pub fn run_steps(model: &mut Model, rows: ScoreRows, steps: usize) -> Vec<u64> {
    let tails = toy_tails();
    let keys = sorted_keys(&tails);
    let mut adam = Adam::new(0.01);
    let mut rng = stream_rng(9, Stream::Dropout);
    (0..steps)
        .map(|s| {
            let batch = if s % 2 == 0 { &keys[..5] } else { &keys[5..] };
            model.train_step(&mut adam, batch, &tails, 0.1, rows, &mut rng, (0, s)).unwrap().score.to_bits()
        })
        .collect()
}

pub fn assert_base_params_equal(base: &Model, other: &Model) {
    for (id, p) in base.params().iter() {
        assert_eq!(other.params().name(id), p.name);
        assert_eq!(other.params().get(id).data(), p.value.data(), "{} diverged", p.name);
    }
}

/// λ = 0 with GRL enabled reproduces the base model's loss trace and
/// parameters bit for bit over three steps (dropout on for ConvE).
pub fn zero_lambda_equivalence() -> String {
    for kind in [ModelKind::DistMult, ModelKind::ConvE] {
        let conve = ConvEConfig { height: 2, filters: 2, ..Default::default() };
        let mut base = Model::new(toy_spec(kind, 8, None, conve), 4).unwrap();
        let settings = GrlSettings { lambda: 0.0, ..Default::default() };
        let mut grl = Model::new(toy_spec(kind, 8, Some(settings), conve), 4).unwrap();
        assert_eq!(run_steps(&mut base, ScoreRows::Key, 3), run_steps(&mut grl, ScoreRows::Key, 3), "{kind} loss trace");
        assert_base_params_equal(&base, &grl);
        assert_eq!(base.kge.stats, grl.kge.stats);
    }
    "DistMult and ConvE, 3 steps".into()
}

// ---- ranking ---------------------------------------------------------------

/// Scores read from a table keyed by `(head, relation)`, one value per
/// candidate. Values come from a small integer set so ties are common.
pub struct TableScorer {
    pub n: usize,
    pub table: HashMap<(usize, usize), Vec<f64>>,
}

impl TableScorer {
    pub fn random(n: usize, relations: usize, levels: u32, rng: &mut Lcg) -> Self {
        let mut table = HashMap::new();
        for h in 0..n {
            for r in 0..relations {
                let row = (0..n).map(|_| (rng.next_f64() * levels as f64).floor()).collect();
                table.insert((h, r), row);
            }
        }
        TableScorer { n, table }
    }
}

impl LinkScorer for TableScorer {
    fn num_entities(&self) -> usize {
        self.n
    }
    fn tail_logits(&self, queries: &[(usize, usize)]) -> Result<Tensor> {
        Tensor::from_rows(&queries.iter().map(|q| self.table[q].clone()).collect::<Vec<_>>())
    }
}

pub fn random_splits(rng: &mut Lcg, entities: usize, relations: usize) -> [Vec<RawTriple>; 3] {
    let mut draw = |n: usize| -> Vec<RawTriple> {
        (0..n)
            .map(|_| {
                let e = |rng: &mut Lcg| format!("e{}", (rng.next_f64() * entities as f64) as usize);
                let h = e(rng);
                let r = format!("r{}", (rng.next_f64() * relations as f64) as usize);
                (h, r, e(rng))
            })
            .collect()
    };
    let train = draw(12);
    let valid = draw(3);
    let test = draw(5);
    [train, valid, test]
}

/// Ranks straight from the raw triples: each distinct test triple is asked
/// as `(h, r, ?)` and `(?, r, t)`, filtered by every known answer in any split.
pub fn oracle_ranks(kg: &KnowledgeGraph, splits: &[Vec<RawTriple>; 3], scorer: &TableScorer) -> Vec<f64> {
    let all: Vec<&RawTriple> = splits.iter().flatten().collect();
    let ent = |s: &str| kg.entities.id(s).unwrap();
    let rel = |s: &str| kg.relations.id(s).unwrap();
    let mut ranks = Vec::new();
    let mut seen = BTreeSet::new();
    for (h, r, t) in &splits[2] {
        if !seen.insert((h.clone(), r.clone(), t.clone())) {
            continue;
        }
        let tail_filter: BTreeSet<usize> = all.iter().filter(|x| &x.0 == h && &x.1 == r).map(|x| ent(&x.2)).collect();
        let head_filter: BTreeSet<usize> = all.iter().filter(|x| &x.2 == t && &x.1 == r).map(|x| ent(&x.0)).collect();
        let inv = rel(&format!("{r}__inv"));
        for (query, gold, filter) in [((ent(h), rel(r)), ent(t), tail_filter), ((ent(t), inv), ent(h), head_filter)] {
            let scores = &scorer.table[&query];
            let (mut above, mut ties) = (0.0, 0.0);
            for e in 0..scorer.n {
                if e == gold || filter.contains(&e) {
                    continue;
                }
                if scores[e] > scores[gold] {
                    above += 1.0;
                } else if scores[e] == scores[gold] {
                    ties += 1.0;
                }
            }
            ranks.push(1.0 + above + ties / 2.0);
        }
    }
    ranks
}

pub fn build_graph(splits: &[Vec<RawTriple>; 3]) -> (KnowledgeGraph, RelationGroups) {
    let mut kg = KnowledgeGraph::from_raw(&splits[0], &splits[1], &splits[2]).unwrap();
    let groups = frequency_split(&kg, 0.2);
    kg.augment_inverse().unwrap();
    (kg, groups)
}

/// `evaluate_split` against the brute-force oracle on random graphs with
/// 2 to 6 entities.
pub fn rank_oracle(cases: usize) -> String {
    let mut rng = Lcg(17);
    let mut queries = 0;
    for case in 0..cases {
        let entities = 2 + case % 5;
        let splits = random_splits(&mut rng, entities, 1 + case % 3);
        let (kg, groups) = build_graph(&splits);
        let scorer = TableScorer::random(kg.num_entities(), kg.relations.len(), 3, &mut rng);
        let report = evaluate_split(&scorer, &kg, Split::Test, &groups, true).unwrap();
        let mut want = oracle_ranks(&kg, &splits, &scorer);
        let mut got: Vec<f64> = report.per_query.unwrap().iter().map(|q| q.rank).collect();
        want.sort_by(f64::total_cmp);
        got.sort_by(f64::total_cmp);
        assert_eq!(got, want, "case {case}");
        let oracle = Metrics::from_ranks(&want);
        assert!((report.metrics.mrr - oracle.mrr).abs() < 1e-12);
        assert_eq!((report.metrics.h1, report.metrics.h5, report.metrics.h10), (oracle.h1, oracle.h5, oracle.h10));
        assert_eq!(report.groups.many.queries + report.groups.few.queries, report.metrics.queries);
        queries += got.len();
    }
    format!("{cases} graphs, {queries} queries")
}

pub fn filtered_rank_invariance(cases: usize) -> String {
    let mut rng = Lcg(3);
    for _ in 0..cases {
        let n = 6;
        let scores: Vec<f64> = (0..n).map(|_| (rng.next_f64() * 3.0).floor()).collect();
        let gold = (rng.next_f64() * n as f64) as usize;
        let filter: BTreeSet<usize> = (0..n).filter(|_| rng.next_f64() < 0.4).collect();
        let base = rank_entity(&scores, gold, Some(&filter)).unwrap();
        let mut perturbed = scores.clone();
        for &e in filter.iter().filter(|&&e| e != gold) {
            perturbed[e] = rng.sym() * 1e6;
        }
        assert_eq!(rank_entity(&perturbed, gold, Some(&filter)).unwrap(), base);
    }
    format!("{cases} perturbed score rows")
}

pub fn small_rank_metrics() -> String {
    let m = Metrics::from_ranks(&[1.0, 2.0, 4.0]);
    assert!((m.mrr - (1.0 + 0.5 + 0.25) / 3.0).abs() < 1e-12);
    assert!((m.mrr - 0.5833).abs() < 5e-5);
    assert_eq!((m.h1, m.h5, m.h10), (1.0 / 3.0, 1.0, 1.0));
    format!("ranks {{1,2,4}}: MRR {:.4}, HITS@1/5/10 {:.4}/{}/{}", m.mrr, m.h1, m.h5, m.h10)
}
