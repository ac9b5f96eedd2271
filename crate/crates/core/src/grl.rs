//! Relation-learning head.
//!
//! Plugged between the embedding tables and the scorer. For a triple
//! `(h, r, t)` it builds a joint vector `j` from the two entity embeddings,
//! attends over the relation memory (the live relation table, gold row
//! masked during training), blends the attended relational knowledge `rk`
//! with `j` through a fusion gate, and classifies the fused vector into a
//! relation. The classification loss is added to the score loss with weight
//! `lambda`.
//!
//! At inference time the same pipeline, unmasked, supplies a substitute
//! embedding for relations that never appeared in training.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::numcore::{xavier_uniform, Graph, ParamId, ParamStore, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum JointMode {
    Sub,
    Multiply,
    Concat,
}

impl FromStr for JointMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sub" => Ok(JointMode::Sub),
            "multiply" => Ok(JointMode::Multiply),
            "concat" => Ok(JointMode::Concat),
            _ => Err(Error::Config(format!("unknown joint_mode {s:?} (expected sub, multiply or concat)"))),
        }
    }
}

impl fmt::Display for JointMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            JointMode::Sub => "sub",
            JointMode::Multiply => "multiply",
            JointMode::Concat => "concat",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FusionMode {
    /// Learned gate `p_f = sigmoid(j . w_g + b_g)`.
    Adaptive,
    /// Constant `p_f`.
    Fixed(f64),
    /// The fused vector replaces the relation fed to the scorer; no
    /// classification loss.
    Direct,
}

impl FromStr for FusionMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adaptive" => Ok(FusionMode::Adaptive),
            "direct" => Ok(FusionMode::Direct),
            _ => {
                let p = s
                    .strip_prefix("fixed:")
                    .and_then(|p| p.parse::<f64>().ok())
                    .ok_or_else(|| Error::Config(format!("unknown fusion_mode {s:?} (adaptive, direct or fixed:<p>)")))?;
                if !(0.0..=1.0).contains(&p) {
                    return Err(Error::Config(format!("fixed fusion probability {p} outside [0, 1]")));
                }
                Ok(FusionMode::Fixed(p))
            }
        }
    }
}

impl fmt::Display for FusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FusionMode::Adaptive => f.write_str("adaptive"),
            FusionMode::Fixed(p) => write!(f, "fixed:{p}"),
            FusionMode::Direct => f.write_str("direct"),
        }
    }
}

/// Where the gold relation is removed from the attention during training.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaskMode {
    /// Gold logit excluded before the softmax; the rest renormalise.
    PreSoftmax,
    /// Softmax over all rows, then the gold weight is zeroed (no renormalisation).
    PostSoftmax,
}

impl FromStr for MaskMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pre" => Ok(MaskMode::PreSoftmax),
            "post" => Ok(MaskMode::PostSoftmax),
            _ => Err(Error::Config(format!("unknown mask_mode {s:?} (expected pre or post)"))),
        }
    }
}

impl fmt::Display for MaskMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MaskMode::PreSoftmax => "pre",
            MaskMode::PostSoftmax => "post",
        })
    }
}

/// Parameter handles and modes of the head. Parameters live in the same
/// store as the scorer so one optimizer updates both.
#[derive(Clone, Debug)]
pub struct GrlHead {
    pub joint_mode: JointMode,
    pub fusion_mode: FusionMode,
    pub mask_mode: MaskMode,
    pub lambda: f64,
    pub dim: usize,
    /// Number of relation classes K (every relation row but UNK).
    pub classes: usize,
    /// `[2 * dim, dim]` and `[dim]`, concat mode only.
    pub joint: Option<(ParamId, ParamId)>,
    /// `[dim, 1]` and `[1]`, adaptive and direct modes.
    pub gate: Option<(ParamId, ParamId)>,
    /// `[dim, K]`, absent in direct mode.
    pub classifier: Option<ParamId>,
}

/// Graph handles of one batched forward pass.
#[derive(Clone, Copy, Debug)]
pub struct GrlVars {
    pub joint: Var,
    pub attention: Var,
    pub knowledge: Var,
    pub gate: Var,
    pub fused: Var,
}

impl GrlHead {
    pub fn new<R: Rng + ?Sized>(
        params: &mut ParamStore,
        dim: usize,
        classes: usize,
        joint_mode: JointMode,
        fusion_mode: FusionMode,
        mask_mode: MaskMode,
        lambda: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be a finite non-negative number, got {lambda}")));
        }
        if classes < 2 {
            return Err(Error::Config("relation memory needs at least two relations".into()));
        }
        let joint = (joint_mode == JointMode::Concat).then(|| {
            let w = params.add("grl.joint_w", xavier_uniform(&[2 * dim, dim], rng));
            let b = params.add("grl.joint_b", Tensor::zeros(&[dim]));
            (w, b)
        });
        let learned_gate = matches!(fusion_mode, FusionMode::Adaptive | FusionMode::Direct);
        let gate = learned_gate.then(|| {
            let w = params.add("grl.gate_w", xavier_uniform(&[dim, 1], rng));
            let b = params.add("grl.gate_b", Tensor::zeros(&[1]));
            (w, b)
        });
        let classifier =
            (fusion_mode != FusionMode::Direct).then(|| params.add("grl.classifier", xavier_uniform(&[dim, classes], rng)));
        Ok(GrlHead { joint_mode, fusion_mode, mask_mode, lambda, dim, classes, joint, gate, classifier })
    }

    /// Relation memory `M`: the first K rows of the live relation table.
    pub fn memory(&self, g: &mut Graph, relation_table: ParamId) -> Result<Var> {
        let table = g.param(relation_table);
        let ids: Vec<usize> = (0..self.classes).collect();
        g.embedding_lookup(table, &ids)
    }

    pub fn joint_vector(&self, g: &mut Graph, e_h: Var, e_t: Var) -> Result<Var> {
        match self.joint_mode {
            JointMode::Sub => g.sub(e_h, e_t),
            JointMode::Multiply => g.mul(e_h, e_t),
            JointMode::Concat => {
                let (w, b) = self.joint.expect("concat parameters");
                let cat = g.concat(&[e_h, e_t], 1)?;
                let (w, b) = (g.param(w), g.param(b));
                let lin = g.matmul(cat, w)?;
                g.add(lin, b)
            }
        }
    }

    /// `softmax(j M^T)`, with `mask[i]` removed from row `i` when given.
    pub fn attention(&self, g: &mut Graph, joint: Var, memory: Var, mask: Option<&[usize]>) -> Result<Var> {
        let logits = g.matmul_t(joint, memory)?;
        let Some(mask) = mask else { return g.softmax(logits, 1) };
        match self.mask_mode {
            MaskMode::PreSoftmax => {
                let exclude: Vec<Option<usize>> = mask.iter().map(|&m| Some(m)).collect();
                g.softmax_excluding(logits, &exclude)
            }
            MaskMode::PostSoftmax => {
                let k = g.shape(logits)[1];
                if let Some(bad) = mask.iter().find(|&&m| m >= k) {
                    return Err(Error::op("knowledge_attention", format!("mask id {bad} out of range for {k} relations")));
                }
                let alpha = g.softmax(logits, 1)?;
                let mut keep = vec![1.0; mask.len() * k];
                for (i, &m) in mask.iter().enumerate() {
                    keep[i * k + m] = 0.0;
                }
                let keep = g.constant(Tensor::new(vec![mask.len(), k], keep)?);
                g.mul(alpha, keep)
            }
        }
    }

    /// `p_f` as a `[batch, 1]` column.
    pub fn gate(&self, g: &mut Graph, joint: Var) -> Result<Var> {
        let rows = g.shape(joint)[0];
        match self.fusion_mode {
            FusionMode::Fixed(p) => Ok(g.constant(Tensor::full(&[rows, 1], p))),
            FusionMode::Adaptive | FusionMode::Direct => {
                let (w, b) = self.gate.expect("gate parameters");
                let (w, b) = (g.param(w), g.param(b));
                let lin = g.matmul(joint, w)?;
                let lin = g.add(lin, b)?;
                Ok(g.sigmoid(lin))
            }
        }
    }

    /// Runs joint block, attention, knowledge read-out, gate and fusion.
    pub fn forward(&self, g: &mut Graph, e_h: Var, e_t: Var, memory: Var, mask: Option<&[usize]>) -> Result<GrlVars> {
        let joint = self.joint_vector(g, e_h, e_t)?;
        let attention = self.attention(g, joint, memory, mask)?;
        let knowledge = g.matmul(attention, memory)?;
        let gate = self.gate(g, joint)?;
        let fused = fuse(g, joint, knowledge, gate)?;
        Ok(GrlVars { joint, attention, knowledge, gate, fused })
    }

    /// Mean cross-entropy of `softmax(f W_c)` against the gold relations.
    pub fn classification_loss(&self, g: &mut Graph, fused: Var, gold: &[usize]) -> Result<Var> {
        let w = self
            .classifier
            .ok_or_else(|| Error::op("classification_loss", "direct fusion has no classifier"))?;
        let w = g.param(w);
        let logits = g.matmul(fused, w)?;
        g.cross_entropy(logits, gold)
    }
}

/// `(1 - p) * a + p * b` with `p` a `[batch, 1]` column.
pub fn fuse(g: &mut Graph, a: Var, b: Var, p: Var) -> Result<Var> {
    let keep = g.affine(p, -1.0, 1.0);
    let left = g.mul(a, keep)?;
    let right = g.mul(b, p)?;
    g.add(left, right)
}

/// `L = L_s + lambda * L_c`.
pub fn total_loss(g: &mut Graph, score_loss: Var, class_loss: Var, lambda: f64) -> Result<Var> {
    if !(lambda >= 0.0) {
        return Err(Error::Config(format!("lambda must be non-negative, got {lambda}")));
    }
    let weighted = g.affine(class_loss, lambda, 0.0);
    g.add(score_loss, weighted)
}

// ---- single-example API -------------------------------------------------

/// Result of running the head on one `(e_h, e_t)` pair.
#[derive(Clone, Debug, PartialEq)]
pub struct GrlForward {
    pub joint: Vec<f64>,
    pub attention: Vec<f64>,
    pub knowledge: Vec<f64>,
    pub gate: f64,
    pub fused: Vec<f64>,
}

fn row_var(g: &mut Graph, v: &[f64]) -> Result<Var> {
    Ok(g.constant(Tensor::new(vec![1, v.len()], v.to_vec())?))
}

impl GrlHead {
    /// Forward pass for one pair against an explicit memory matrix `[K, dim]`.
    pub fn forward_one(
        &self,
        params: &ParamStore,
        e_h: &[f64],
        e_t: &[f64],
        memory: &Tensor,
        mask: Option<usize>,
    ) -> Result<GrlForward> {
        let mut g = Graph::inference(params);
        let (h, t) = (row_var(&mut g, e_h)?, row_var(&mut g, e_t)?);
        let m = g.constant(memory.clone());
        let mask = mask.map(|m| [m]);
        let vars = self.forward(&mut g, h, t, m, mask.as_ref().map(|m| &m[..]))?;
        Ok(GrlForward {
            joint: g.value(vars.joint).data().to_vec(),
            attention: g.value(vars.attention).data().to_vec(),
            knowledge: g.value(vars.knowledge).data().to_vec(),
            gate: g.value(vars.gate).item(),
            fused: g.value(vars.fused).data().to_vec(),
        })
    }

    pub fn joint_one(&self, params: &ParamStore, e_h: &[f64], e_t: &[f64]) -> Result<Vec<f64>> {
        let mut g = Graph::inference(params);
        let (h, t) = (row_var(&mut g, e_h)?, row_var(&mut g, e_t)?);
        let j = self.joint_vector(&mut g, h, t)?;
        Ok(g.value(j).data().to_vec())
    }

    /// `p_f` for one joint vector; only defined for the adaptive gate.
    pub fn fusion_gate(&self, params: &ParamStore, joint: &[f64]) -> Result<f64> {
        if self.fusion_mode != FusionMode::Adaptive {
            return Err(Error::op("fusion_gate", format!("no learned gate in {} mode", self.fusion_mode)));
        }
        let mut g = Graph::inference(params);
        let j = row_var(&mut g, joint)?;
        let p = self.gate(&mut g, j)?;
        Ok(g.value(p).item())
    }

    /// Most attended relation for a pair (no mask; ties go to the smaller id)
    /// and the full attention vector.
    pub fn most_similar_relation(
        &self,
        params: &ParamStore,
        e_h: &[f64],
        e_t: &[f64],
        memory: &Tensor,
    ) -> Result<(usize, Vec<f64>)> {
        let fwd = self.forward_one(params, e_h, e_t, memory, None)?;
        Ok((argmax(&fwd.attention), fwd.attention))
    }

    /// Relation vector standing in for an unseen relation.
    pub fn zero_shot_relation_embedding(
        &self,
        params: &ParamStore,
        e_h: &[f64],
        e_t: &[f64],
        memory: &Tensor,
        mode: ZeroShotMode,
    ) -> Result<Vec<f64>> {
        let fwd = self.forward_one(params, e_h, e_t, memory, None)?;
        Ok(match mode {
            ZeroShotMode::Fusion => fwd.fused,
            ZeroShotMode::MostSimilar => memory.row(argmax(&fwd.attention)).to_vec(),
        })
    }

    /// Relation representation fed to the scorer in direct mode:
    /// `(1 - p_f) * r + p_f * rk`.
    pub fn direct_fusion_relation(
        &self,
        params: &ParamStore,
        e_h: &[f64],
        e_t: &[f64],
        relation: &[f64],
        memory: &Tensor,
    ) -> Result<Vec<f64>> {
        if self.fusion_mode != FusionMode::Direct {
            return Err(Error::op("direct_fusion_relation", format!("head is in {} mode", self.fusion_mode)));
        }
        let fwd = self.forward_one(params, e_h, e_t, memory, None)?;
        Ok(relation.iter().zip(&fwd.knowledge).map(|(r, k)| (1.0 - fwd.gate) * r + fwd.gate * k).collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ZeroShotMode {
    /// Fused vector `f`.
    Fusion,
    /// Memory row of the most attended relation.
    MostSimilar,
}

impl FromStr for ZeroShotMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fusion" => Ok(ZeroShotMode::Fusion),
            "most_similar" => Ok(ZeroShotMode::MostSimilar),
            _ => Err(Error::Config(format!("unknown zero-shot mode {s:?} (fusion or most_similar)"))),
        }
    }
}

impl fmt::Display for ZeroShotMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ZeroShotMode::Fusion => "fusion",
            ZeroShotMode::MostSimilar => "most_similar",
        })
    }
}

/// First index of the maximum.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// `softmax(j M^T)` for a single joint vector.
pub fn knowledge_attention(joint: &[f64], memory: &Tensor, mask: Option<usize>) -> Result<Vec<f64>> {
    let store = ParamStore::new();
    let mut g = Graph::inference(&store);
    let j = row_var(&mut g, joint)?;
    let m = g.constant(memory.clone());
    let logits = g.matmul_t(j, m)?;
    let k = memory.shape()[0];
    let alpha = match mask {
        Some(id) if id >= k => {
            return Err(Error::op("knowledge_attention", format!("mask id {id} out of range for {k} relations")))
        }
        Some(id) => g.softmax_excluding(logits, &[Some(id)])?,
        None => g.softmax(logits, 1)?,
    };
    Ok(g.value(alpha).data().to_vec())
}

/// `rk = sum_k alpha[k] * M[k]`.
pub fn relational_knowledge(attention: &[f64], memory: &Tensor) -> Vec<f64> {
    let d = memory.shape()[1];
    let mut rk = vec![0.0; d];
    for (k, &a) in attention.iter().enumerate() {
        for (o, m) in rk.iter_mut().zip(memory.row(k)) {
            *o += a * m;
        }
    }
    rk
}

/// `(1 - p) * j + p * rk` for single vectors.
pub fn fuse_one(joint: &[f64], knowledge: &[f64], p: f64) -> Vec<f64> {
    joint.iter().zip(knowledge).map(|(j, k)| (1.0 - p) * j + p * k).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn head(joint: JointMode, fusion: FusionMode, dim: usize, k: usize) -> (ParamStore, GrlHead) {
        let mut params = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = GrlHead::new(&mut params, dim, k, joint, fusion, MaskMode::PreSoftmax, 0.1, &mut rng).unwrap();
        (params, h)
    }

    #[test]
    fn joint_modes() {
        let (p, h) = head(JointMode::Sub, FusionMode::Adaptive, 2, 2);
        assert_eq!(h.joint_one(&p, &[1.5, -2.0], &[1.5, -2.0]).unwrap(), vec![0.0, 0.0]);
        let (p, h) = head(JointMode::Multiply, FusionMode::Adaptive, 2, 2);
        assert_eq!(h.joint_one(&p, &[1.0, 2.0], &[0.5, 1.0]).unwrap(), vec![0.5, 2.0]);
        let (mut p, h) = head(JointMode::Concat, FusionMode::Adaptive, 3, 2);
        let (w, b) = h.joint.unwrap();
        p.get_mut(w).data_mut().fill(0.0);
        p.get_mut(b).data_mut().fill(3.0);
        assert_eq!(h.joint_one(&p, &[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap(), vec![3.0; 3]);
    }

    #[test]
    fn attention_examples() {
        let m = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]]).unwrap();
        let a = knowledge_attention(&[0.0, 0.0], &m, None).unwrap();
        assert!(a.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));
        let m2 = Tensor::from_rows(&[vec![3f64.ln()], vec![0.0]]).unwrap();
        let a = knowledge_attention(&[1.0], &m2, None).unwrap();
        assert!((a[0] - 0.75).abs() < 1e-12 && (a[1] - 0.25).abs() < 1e-12);
        let a = knowledge_attention(&[0.3, -0.7], &m, Some(0)).unwrap();
        assert_eq!(a[0], 0.0);
        let (l1, l2) = (-0.7f64, -0.4f64);
        let z = l1.exp() + l2.exp();
        assert!((a[1] - l1.exp() / z).abs() < 1e-12 && (a[2] - l2.exp() / z).abs() < 1e-12);
        assert!(knowledge_attention(&[0.3, -0.7], &m, Some(3)).is_err());
    }

    #[test]
    fn knowledge_readout() {
        let m = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 5.0], vec![-1.0, 7.0]]).unwrap();
        assert_eq!(relational_knowledge(&[0.0, 0.0, 1.0], &m), vec![-1.0, 7.0]);
        let rk = relational_knowledge(&[1.0 / 3.0; 3], &m);
        assert!((rk[0] - 1.0).abs() < 1e-12 && (rk[1] - 14.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn gate_examples() {
        let (mut p, h) = head(JointMode::Sub, FusionMode::Adaptive, 2, 2);
        let (w, b) = h.gate.unwrap();
        p.get_mut(w).data_mut().fill(0.0);
        assert_eq!(h.fusion_gate(&p, &[4.0, -1.0]).unwrap(), 0.5);
        p.get_mut(b).data_mut().fill(20.0);
        let v = h.fusion_gate(&p, &[4.0, -1.0]).unwrap();
        assert!(v > 1.0 - 1e-8 && v < 1.0);
        let (p, h) = head(JointMode::Sub, FusionMode::Fixed(0.5), 2, 2);
        assert!(h.fusion_gate(&p, &[1.0, 1.0]).is_err());
    }

    #[test]
    fn fuse_examples() {
        assert_eq!(fuse_one(&[2.0, 0.0], &[0.0, 2.0], 0.5), vec![1.0, 1.0]);
        assert_eq!(fuse_one(&[2.0, 0.0], &[0.0, 2.0], 0.0), vec![2.0, 0.0]);
        assert_eq!(fuse_one(&[2.0, 0.0], &[0.0, 2.0], 1.0), vec![0.0, 2.0]);
    }

    #[test]
    fn classification_loss_examples() {
        let (mut p, h) = head(JointMode::Sub, FusionMode::Adaptive, 2, 4);
        let w = h.classifier.unwrap();
        p.get_mut(w).data_mut().fill(0.0);
        let mut g = Graph::inference(&p);
        let f = g.constant(Tensor::zeros(&[1, 2]));
        let l = h.classification_loss(&mut g, f, &[2]).unwrap();
        assert!((g.value(l).item() - 4f64.ln()).abs() < 1e-12);
        // W_c routing f = [1, 0] almost surely to class 1
        let mut wv = vec![0.0; 8];
        wv[1] = 1000.0;
        *p.get_mut(w) = Tensor::new(vec![2, 4], wv).unwrap();
        let mut g = Graph::inference(&p);
        let f = g.constant(Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap());
        let l = h.classification_loss(&mut g, f, &[1, 0]).unwrap();
        assert!((g.value(l).item() - 4f64.ln() / 2.0).abs() < 1e-12);
        assert!((g.value(l).item() - 0.6931).abs() < 1e-4);
    }

    #[test]
    fn total_loss_examples() {
        let store = ParamStore::new();
        let mut g = Graph::inference(&store);
        let ls = g.constant(Tensor::scalar(0.5));
        let lc = g.constant(Tensor::scalar(1.0));
        let l = total_loss(&mut g, ls, lc, 0.1).unwrap();
        assert!((g.value(l).item() - 0.6).abs() < 1e-15);
        let l = total_loss(&mut g, ls, lc, 0.0).unwrap();
        assert_eq!(g.value(l).item(), 0.5);
        let zero = g.constant(Tensor::scalar(0.0));
        let l = total_loss(&mut g, ls, zero, 1.0).unwrap();
        assert_eq!(g.value(l).item(), 0.5);
        assert!(total_loss(&mut g, ls, lc, -1.0).is_err());
    }

    #[test]
    fn most_similar_examples() {
        let (p, h) = head(JointMode::Multiply, FusionMode::Adaptive, 2, 3);
        let (eh, et) = ([1.0, 2.0], [0.5, 0.25]);
        let j = [0.5, 0.5];
        let m = Tensor::from_rows(&[vec![0.1, -0.2], vec![50.0 * j[0], 50.0 * j[1]], vec![0.3, 0.0]]).unwrap();
        let (best, alpha) = h.most_similar_relation(&p, &eh, &et, &m).unwrap();
        assert_eq!(best, 1);
        assert!((alpha.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let zs = h.zero_shot_relation_embedding(&p, &eh, &et, &m, ZeroShotMode::MostSimilar).unwrap();
        assert_eq!(zs, m.row(1).to_vec());
        let same = Tensor::from_rows(&vec![vec![0.4, 0.1]; 3]).unwrap();
        assert_eq!(h.most_similar_relation(&p, &eh, &et, &same).unwrap().0, 0);
        // argmax is invariant to scaling j (scale both entity vectors by sqrt(c))
        let c = 7.0f64.sqrt();
        let (eh2, et2) = ([eh[0] * c, eh[1] * c], [et[0] * c, et[1] * c]);
        assert_eq!(h.most_similar_relation(&p, &eh2, &et2, &m).unwrap().0, 1);
    }

    #[test]
    fn zero_shot_fusion_with_gate_one_is_knowledge() {
        let (p, h) = head(JointMode::Sub, FusionMode::Fixed(1.0), 2, 3);
        let m = Tensor::from_rows(&[vec![0.1, -0.2], vec![0.4, 0.5], vec![0.3, 0.0]]).unwrap();
        let fwd = h.forward_one(&p, &[0.2, 0.9], &[-0.4, 0.1], &m, None).unwrap();
        let zs = h.zero_shot_relation_embedding(&p, &[0.2, 0.9], &[-0.4, 0.1], &m, ZeroShotMode::Fusion).unwrap();
        assert_eq!(zs, fwd.knowledge);
    }

    #[test]
    fn direct_fusion_endpoints() {
        let (mut p, h) = head(JointMode::Sub, FusionMode::Direct, 2, 3);
        let m = Tensor::from_rows(&[vec![0.1, -0.2], vec![0.4, 0.5], vec![0.3, 0.0]]).unwrap();
        let r = [0.7, -0.3];
        let (w, b) = h.gate.unwrap();
        p.get_mut(w).data_mut().fill(0.0);
        p.get_mut(b).data_mut().fill(-800.0);
        assert_eq!(h.direct_fusion_relation(&p, &[0.2, 0.9], &[-0.4, 0.1], &r, &m).unwrap(), r.to_vec());
        p.get_mut(b).data_mut().fill(800.0);
        let fwd = h.forward_one(&p, &[0.2, 0.9], &[-0.4, 0.1], &m, None).unwrap();
        assert_eq!(h.direct_fusion_relation(&p, &[0.2, 0.9], &[-0.4, 0.1], &r, &m).unwrap(), fwd.knowledge);
    }

    #[test]
    fn post_softmax_mask_zeroes_without_renormalising() {
        let mut params = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = GrlHead::new(&mut params, 2, 3, JointMode::Sub, FusionMode::Adaptive, MaskMode::PostSoftmax, 0.1, &mut rng)
            .unwrap();
        let m = Tensor::from_rows(&vec![vec![0.0, 0.0]; 3]).unwrap();
        let fwd = h.forward_one(&params, &[1.0, 0.0], &[0.0, 1.0], &m, Some(2)).unwrap();
        assert_eq!(fwd.attention[2], 0.0);
        assert!((fwd.attention[0] - 1.0 / 3.0).abs() < 1e-15);
    }
}
