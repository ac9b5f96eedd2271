//! Triple files, vocabularies, reciprocal relations, filter sets, relation
//! frequency groups and zero-shot splits.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs;
use std::path::Path;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Reserved name of the untrained relation row.
pub const UNK_RELATION: &str = "__UNK__";
/// Suffix appended to a relation name to form its reciprocal.
pub const INVERSE_SUFFIX: &str = "__inv";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triple {
    pub head: usize,
    pub relation: usize,
    pub tail: usize,
}

impl Triple {
    pub fn new(head: usize, relation: usize, tail: usize) -> Self {
        Triple { head, relation, tail }
    }
}

/// A triple still in string form, as read from disk.
pub type RawTriple = (String, String, String);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Valid,
    Test,
}

/// Bijective string <-> dense id mapping, ids in first-appearance order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Vocab {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn intern(&mut self, name: &str) -> usize {
        if let Some(&id) = self.index.get(name) {
            return id;
        }
        self.names.push(name.to_owned());
        self.index.insert(name.to_owned(), self.names.len() - 1);
        self.names.len() - 1
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    fn pop(&mut self) -> Option<String> {
        let name = self.names.pop()?;
        self.index.remove(&name);
        Some(name)
    }

    /// Hex SHA-256 over the names in id order.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for n in &self.names {
            h.update(n.as_bytes());
            h.update([0u8]);
        }
        hex::encode(h.finalize())
    }
}

/// Known-correct answers per query over train, valid and test.
#[derive(Clone, Debug, Default)]
pub struct FilterIndex {
    tails: HashMap<(usize, usize), BTreeSet<usize>>,
    heads: HashMap<(usize, usize), BTreeSet<usize>>,
}

impl FilterIndex {
    fn build<'a>(triples: impl Iterator<Item = &'a Triple>) -> Self {
        let mut idx = FilterIndex::default();
        for t in triples {
            idx.tails.entry((t.head, t.relation)).or_default().insert(t.tail);
            idx.heads.entry((t.relation, t.tail)).or_default().insert(t.head);
        }
        idx
    }

    /// Every `t` with `(head, relation, t)` in some split.
    pub fn tails(&self, head: usize, relation: usize) -> Option<&BTreeSet<usize>> {
        self.tails.get(&(head, relation))
    }

    /// Every `h` with `(h, relation, tail)` in some split.
    pub fn heads(&self, relation: usize, tail: usize) -> Option<&BTreeSet<usize>> {
        self.heads.get(&(relation, tail))
    }
}

#[derive(Clone, Debug)]
pub struct KnowledgeGraph {
    pub entities: Vocab,
    /// Base relations, then (after augmentation) their reciprocals, then UNK.
    pub relations: Vocab,
    pub train: Vec<Triple>,
    pub valid: Vec<Triple>,
    pub test: Vec<Triple>,
    num_base: usize,
    augmented: bool,
    filter: FilterIndex,
    /// Duplicate lines dropped per split (train, valid, test).
    pub duplicates_dropped: [usize; 3],
}

/// Reads a tab-separated triple file. Blank lines are skipped.
pub fn read_triples(path: impl AsRef<Path>) -> Result<Vec<RawTriple>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 || fields.iter().any(|f| f.is_empty()) {
            return Err(Error::Parse {
                path: path.to_owned(),
                line: lineno + 1,
                msg: format!("expected head<TAB>relation<TAB>tail, found {} field(s)", fields.len()),
            });
        }
        out.push((fields[0].to_owned(), fields[1].to_owned(), fields[2].to_owned()));
    }
    Ok(out)
}

pub fn write_triples(path: impl AsRef<Path>, triples: &[RawTriple]) -> Result<()> {
    let mut s = String::new();
    for (h, r, t) in triples {
        s.push_str(&format!("{h}\t{r}\t{t}\n"));
    }
    crate::cli::write_atomic(path.as_ref(), s.as_bytes())
}

/// Loads the three splits of a benchmark.
pub fn load_dataset(train: impl AsRef<Path>, valid: impl AsRef<Path>, test: impl AsRef<Path>) -> Result<KnowledgeGraph> {
    KnowledgeGraph::from_raw(&read_triples(train)?, &read_triples(valid)?, &read_triples(test)?)
}

impl KnowledgeGraph {
    pub fn from_raw(train: &[RawTriple], valid: &[RawTriple], test: &[RawTriple]) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::Data("training split is empty".into()));
        }
        let mut entities = Vocab::default();
        let mut relations = Vocab::default();
        let mut dropped = [0; 3];
        let mut splits: [Vec<Triple>; 3] = Default::default();
        for (k, raw) in [train, valid, test].into_iter().enumerate() {
            let mut seen = HashSet::new();
            for (h, r, t) in raw {
                let triple = Triple::new(entities.intern(h), relations.intern(r), entities.intern(t));
                if seen.insert(triple) {
                    splits[k].push(triple);
                } else {
                    dropped[k] += 1;
                }
            }
        }
        if relations.id(UNK_RELATION).is_some() {
            return Err(Error::Data(format!("relation name {UNK_RELATION} is reserved")));
        }
        let num_base = relations.len();
        relations.intern(UNK_RELATION);
        let [train, valid, test] = splits;
        let mut kg = KnowledgeGraph {
            entities,
            relations,
            train,
            valid,
            test,
            num_base,
            augmented: false,
            filter: FilterIndex::default(),
            duplicates_dropped: dropped,
        };
        kg.rebuild_filter();
        Ok(kg)
    }

    fn rebuild_filter(&mut self) {
        self.filter = FilterIndex::build(self.train.iter().chain(&self.valid).chain(&self.test));
    }

    /// Adds a reciprocal `r__inv` for every base relation and the reversed
    /// copy `(t, r__inv, h)` of every triple to the same split.
    pub fn augment_inverse(&mut self) -> Result<()> {
        if self.augmented {
            return Err(Error::Data("knowledge graph is already augmented with inverse relations".into()));
        }
        self.relations.pop();
        for r in 0..self.num_base {
            let name = format!("{}{INVERSE_SUFFIX}", self.relations.name(r));
            if self.relations.id(&name).is_some() {
                return Err(Error::Data(format!("inverse name {name} collides with an existing relation")));
            }
            self.relations.intern(&name);
        }
        self.relations.intern(UNK_RELATION);
        let nb = self.num_base;
        for split in [&mut self.train, &mut self.valid, &mut self.test] {
            let inv: Vec<Triple> = split.iter().map(|t| Triple::new(t.tail, t.relation + nb, t.head)).collect();
            split.extend(inv);
        }
        self.augmented = true;
        self.rebuild_filter();
        Ok(())
    }

    pub fn is_augmented(&self) -> bool {
        self.augmented
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_base_relations(&self) -> usize {
        self.num_base
    }

    /// Relation classes available to the classifier: every relation but UNK.
    pub fn num_relation_classes(&self) -> usize {
        self.relations.len() - 1
    }

    /// Id of the reserved untrained relation row (always the last id).
    pub fn unk_relation(&self) -> usize {
        self.relations.len() - 1
    }

    pub fn inverse_of(&self, relation: usize) -> Option<usize> {
        if !self.augmented || relation >= 2 * self.num_base {
            return None;
        }
        Some(if relation < self.num_base { relation + self.num_base } else { relation - self.num_base })
    }

    /// Base relation an id refers to (itself for a base relation).
    pub fn base_of(&self, relation: usize) -> usize {
        if relation < self.num_base {
            relation
        } else if self.augmented && relation < 2 * self.num_base {
            relation - self.num_base
        } else {
            relation
        }
    }

    pub fn split(&self, split: Split) -> &[Triple] {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }

    pub fn filter(&self) -> &FilterIndex {
        &self.filter
    }

    /// Tails seen with each `(head, relation)` in one split, for 1-N labels.
    pub fn tail_index(&self, split: Split) -> HashMap<(usize, usize), Vec<usize>> {
        let mut idx: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
        for t in self.split(split) {
            idx.entry((t.head, t.relation)).or_default().push(t.tail);
        }
        for v in idx.values_mut() {
            v.sort_unstable();
        }
        idx
    }

    pub fn raw(&self, t: &Triple) -> RawTriple {
        (
            self.entities.name(t.head).to_owned(),
            self.relations.name(t.relation).to_owned(),
            self.entities.name(t.tail).to_owned(),
        )
    }
}

/// Many-shot / few-shot partition of the base relations by training frequency.
#[derive(Clone, Debug, PartialEq)]
pub struct RelationGroups {
    pub many_shot: BTreeSet<usize>,
    pub few_shot: BTreeSet<usize>,
    /// Training frequency of each base relation.
    pub frequency: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Group {
    Many,
    Few,
}

impl RelationGroups {
    pub fn group_of(&self, base_relation: usize) -> Option<Group> {
        if self.many_shot.contains(&base_relation) {
            Some(Group::Many)
        } else if self.few_shot.contains(&base_relation) {
            Some(Group::Few)
        } else {
            None
        }
    }
}

/// Puts the top `ceil(many_fraction * |R|)` base relations by training
/// frequency into the many-shot group; ties go to the smaller id.
pub fn frequency_split(kg: &KnowledgeGraph, many_fraction: f64) -> RelationGroups {
    let nb = kg.num_base_relations();
    let mut frequency = vec![0; nb];
    for t in &kg.train {
        if t.relation < nb {
            frequency[t.relation] += 1;
        }
    }
    let mut order: Vec<usize> = (0..nb).collect();
    order.sort_by(|&a, &b| frequency[b].cmp(&frequency[a]).then(a.cmp(&b)));
    // guard against 0.2 * 25 landing a hair above 5
    let many = ((many_fraction * nb as f64) - 1e-9).ceil().max(0.0) as usize;
    let many = many.min(nb);
    RelationGroups {
        many_shot: order[..many].iter().copied().collect(),
        few_shot: order[many..].iter().copied().collect(),
        frequency,
    }
}

/// Zero-shot test triples: their relations are mapped to UNK and the
/// original names kept in `side_table` (same order).
#[derive(Clone, Debug, PartialEq)]
pub struct ZeroShotSplit {
    pub triples: Vec<Triple>,
    pub side_table: Vec<RawTriple>,
}

impl ZeroShotSplit {
    /// Maps already-chosen raw triples onto `kg`'s ids.
    pub fn from_side_table(kg: &KnowledgeGraph, side_table: Vec<RawTriple>) -> Result<Self> {
        let mut triples = Vec::with_capacity(side_table.len());
        for (h, r, t) in &side_table {
            let (Some(hi), Some(ti)) = (kg.entities.id(h), kg.entities.id(t)) else {
                return Err(Error::Data(format!("zero-shot triple ({h}, {r}, {t}) uses an unknown entity")));
            };
            if kg.relations.id(r).is_some() {
                return Err(Error::Data(format!("relation {r} is not unseen")));
            }
            triples.push(Triple::new(hi, kg.unk_relation(), ti));
        }
        if triples.is_empty() {
            return Err(Error::Data("0 qualifying triples".into()));
        }
        Ok(ZeroShotSplit { triples, side_table })
    }
}

/// Samples `n` triples from a superset graph whose relation never occurs in
/// `kg` but whose endpoints do.
pub fn make_zero_shot_split(kg: &KnowledgeGraph, extended: &[RawTriple], n: usize, seed: u64) -> Result<ZeroShotSplit> {
    let mut seen = HashSet::new();
    let qualifying: Vec<&RawTriple> = extended
        .iter()
        .filter(|(h, r, t)| {
            kg.relations.id(r).is_none() && kg.entities.id(h).is_some() && kg.entities.id(t).is_some()
        })
        .filter(|raw| seen.insert(*raw))
        .collect();
    if qualifying.len() < n || n == 0 {
        return Err(Error::Data(format!("{} qualifying triples, {n} requested", qualifying.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = sample(&mut rng, qualifying.len(), n);
    let side = picks.iter().map(|i| qualifying[i].clone()).collect();
    ZeroShotSplit::from_side_table(kg, side)
}

/// One epoch of shuffled mini-batches; the permutation depends only on
/// `(seed, epoch)` and the last partial batch is kept.
pub fn batches<T: Clone>(items: &[T], batch_size: usize, seed: u64, epoch: u64) -> Vec<Vec<T>> {
    assert!(batch_size >= 1, "batch_size must be positive");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    let mut order = items.to_vec();
    order.shuffle(&mut rng);
    order.chunks(batch_size).map(<[T]>::to_vec).collect()
}

/// Raw splits with every triple of `relation` removed, plus that relation's
/// test triples as a zero-shot side table.
pub fn withhold_relation(
    train: &[RawTriple],
    valid: &[RawTriple],
    test: &[RawTriple],
    relation: &str,
) -> Result<([Vec<RawTriple>; 3], Vec<RawTriple>)> {
    let keep = |v: &[RawTriple]| v.iter().filter(|t| t.1 != relation).cloned().collect::<Vec<_>>();
    let side: Vec<RawTriple> = test.iter().filter(|t| t.1 == relation).cloned().collect();
    if side.is_empty() {
        return Err(Error::Data(format!("relation {relation} has no test triples to withhold")));
    }
    Ok(([keep(train), keep(valid), keep(test)], side))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(v: &[(&str, &str, &str)]) -> Vec<RawTriple> {
        v.iter().map(|(a, b, c)| (a.to_string(), b.to_string(), c.to_string())).collect()
    }

    #[test]
    fn ids_follow_first_appearance() {
        let kg = KnowledgeGraph::from_raw(&raw(&[("b", "likes", "a"), ("c", "hates", "b")]), &[], &[]).unwrap();
        assert_eq!(kg.entities.names(), &["b", "a", "c"]);
        assert_eq!(kg.relations.names(), &["likes", "hates", UNK_RELATION]);
        for (i, n) in kg.entities.names().iter().enumerate() {
            assert_eq!(kg.entities.id(n), Some(i));
        }
        assert_eq!(kg.train[1], Triple::new(2, 1, 0));
    }

    #[test]
    fn duplicates_are_dropped_and_counted() {
        let kg = KnowledgeGraph::from_raw(&raw(&[("a", "r", "b"), ("a", "r", "b"), ("b", "r", "a")]), &[], &[]).unwrap();
        assert_eq!(kg.train.len(), 2);
        assert_eq!(kg.duplicates_dropped, [1, 0, 0]);
    }

    #[test]
    fn empty_train_is_error() {
        assert!(KnowledgeGraph::from_raw(&[], &raw(&[("a", "r", "b")]), &[]).is_err());
    }

    #[test]
    fn augmentation_counts_and_reciprocals() {
        let mut kg = KnowledgeGraph::from_raw(&raw(&[("a", "r", "b"), ("b", "s", "c")]), &raw(&[("c", "r", "a")]), &[]).unwrap();
        kg.augment_inverse().unwrap();
        assert_eq!(kg.relations.len(), 2 * 2 + 1);
        assert_eq!(kg.unk_relation(), 4);
        assert_eq!(kg.relations.name(2), "r__inv");
        let (a, b) = (kg.entities.id("a").unwrap(), kg.entities.id("b").unwrap());
        assert!(kg.train.contains(&Triple::new(b, 2, a)));
        assert!(kg.filter().tails(b, 2).unwrap().contains(&a));
        assert!(kg.valid.contains(&Triple::new(a, 2, kg.entities.id("c").unwrap())));
        assert!(kg.augment_inverse().is_err());
        assert_eq!(kg.inverse_of(0), Some(2));
        assert_eq!(kg.base_of(3), 1);
    }

    #[test]
    fn frequency_split_hand_count() {
        let mut v = Vec::new();
        for (r, n) in [("r10", 10), ("r5", 5), ("r1", 1)] {
            for i in 0..n {
                v.push((format!("h{i}"), r.to_string(), format!("t{i}")));
            }
        }
        let kg = KnowledgeGraph::from_raw(&v, &[], &[]).unwrap();
        let g = frequency_split(&kg, 0.2);
        assert_eq!(g.many_shot.len(), 1);
        assert!(g.many_shot.contains(&kg.relations.id("r10").unwrap()));
        assert_eq!(g.few_shot.len(), 2);
    }

    #[test]
    fn frequency_split_ties_by_id() {
        let v: Vec<RawTriple> = (0..10).map(|i| ("a".into(), format!("r{i}"), "b".into())).collect();
        let kg = KnowledgeGraph::from_raw(&v, &[], &[]).unwrap();
        let g = frequency_split(&kg, 0.2);
        assert_eq!(g.many_shot, BTreeSet::from([0, 1]));
        assert_eq!(g.few_shot.len(), 8);
    }

    #[test]
    fn zero_shot_split_contracts() {
        let kg = KnowledgeGraph::from_raw(&raw(&[("a", "r", "b"), ("b", "r", "c")]), &[], &[]).unwrap();
        let seen = raw(&[("a", "r", "c")]);
        let err = make_zero_shot_split(&kg, &seen, 1, 0).unwrap_err().to_string();
        assert!(err.contains("0 qualifying triples"), "{err}");

        let mut ext = raw(&[("a", "q", "b"), ("b", "q", "c"), ("a", "q", "c"), ("c", "q", "a"), ("b", "q", "a")]);
        ext.push(("a".into(), "q".into(), "zz".into()));
        let one = make_zero_shot_split(&kg, &ext, 2, 9).unwrap();
        let two = make_zero_shot_split(&kg, &ext, 2, 9).unwrap();
        assert_eq!(one, two);
        assert_eq!(one.triples.len(), 2);
        assert!(one.triples.iter().all(|t| t.relation == kg.unk_relation()));
        assert!(one.side_table.iter().all(|(_, r, t)| r == "q" && t != "zz"));
        assert!(make_zero_shot_split(&kg, &ext, 6, 9).is_err());
    }

    #[test]
    fn batching_shapes_and_determinism() {
        let ts: Vec<Triple> = (0..10).map(|i| Triple::new(i, 0, i)).collect();
        let b = batches(&ts, 4, 3, 0);
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 4, 2]);
        assert_eq!(b, batches(&ts, 4, 3, 0));
        let many: Vec<Triple> = (0..100).map(|i| Triple::new(i, 0, i)).collect();
        assert_ne!(batches(&many, 100, 3, 0), batches(&many, 100, 3, 1));
    }
}
