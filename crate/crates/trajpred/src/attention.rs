//! Human-human attention: each (target, neighbor) pair is embedded from the
//! target's velocity, the neighbor's relative position and velocity, and the
//! neighbor-centered local map; pair embeddings are scored against the mean
//! embedding and softmax-normalized over the target's neighbors.
//!
//! There is no goal input: the scorer sees only observable state, which is
//! what makes the mechanism usable for prediction.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rand::Rng;

use crate::dataset::{FrameId, PedId};
use crate::error::{Error, Result};
use crate::localmap::{AgentState, LocalMap, MAP_LEN};
use crate::nn;
use crate::num::Scalar;
use crate::optim::{ParamId, ParamStore};
use crate::tensor::Matrix;

/// Pair feature width: target velocity (2), neighbor relative position (2),
/// neighbor velocity (2), and the flattened local map (48). The target's own
/// relative position is identically the origin and is not materialized.
pub const PAIR_LEN: usize = 2 + 2 + 2 + MAP_LEN;
/// Hidden width of the first embedding layer.
pub const ATT_H1: usize = 100;
/// Pair embedding width.
pub const ATT_EMB: usize = 50;
/// Hidden width of the scoring MLP (pair embedding + mean embedding).
pub const ATT_H2: usize = 100;

/// One neighbor as the scorer sees it: identity, state at the current frame,
/// and the local map centered on that neighbor.
#[derive(Debug, Clone)]
pub struct NeighborInput<S> {
    pub ped: PedId,
    pub state: AgentState<S>,
    pub map: LocalMap<S>,
}

/// Softmax weights over a target's neighbors, aligned with `neighbors`.
/// A target without neighbors is represented by empty lists.
#[derive(Debug, Clone)]
pub struct AttentionScores<S> {
    pub target: PedId,
    pub neighbors: Vec<PedId>,
    pub weights: Vec<S>,
}

impl<S: Scalar> AttentionScores<S> {
    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    /// Checks the normalization invariant (sum to 1 within 1e-9).
    pub fn validate(&self) -> Result<()> {
        if self.weights.len() != self.neighbors.len() {
            return Err(Error::Dim("scores/neighbors length mismatch".into()));
        }
        if self.is_empty() {
            return Ok(());
        }
        let sum: S = self.weights.iter().cloned().sum();
        if (sum - S::one()).abs() > S::of(1e-9) {
            return Err(Error::NonFinite(format!(
                "attention weights for target {} sum to {sum}",
                self.target
            )));
        }
        Ok(())
    }
}

/// Parameter handles of the attention network.
#[derive(Debug, Clone, Copy)]
pub struct AttentionNet {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
    pub w3: ParamId,
    pub b3: ParamId,
    pub w4: ParamId,
    pub b4: ParamId,
}

const NAMES: [&str; 8] = [
    "att.embed1.w",
    "att.embed1.b",
    "att.embed2.w",
    "att.embed2.b",
    "att.mlp.w",
    "att.mlp.b",
    "att.score.w",
    "att.score.b",
];

impl AttentionNet {
    /// Registers freshly initialized parameters.
    pub fn register<S: Scalar, R: Rng>(store: &mut ParamStore<S>, rng: &mut R) -> Result<Self> {
        Ok(AttentionNet {
            w1: store.register_uniform(NAMES[0], PAIR_LEN, ATT_H1, PAIR_LEN, rng)?,
            b1: store.register_uniform(NAMES[1], 1, ATT_H1, PAIR_LEN, rng)?,
            w2: store.register_uniform(NAMES[2], ATT_H1, ATT_EMB, ATT_H1, rng)?,
            b2: store.register_uniform(NAMES[3], 1, ATT_EMB, ATT_H1, rng)?,
            w3: store.register_uniform(NAMES[4], 2 * ATT_EMB, ATT_H2, 2 * ATT_EMB, rng)?,
            b3: store.register_uniform(NAMES[5], 1, ATT_H2, 2 * ATT_EMB, rng)?,
            w4: store.register_uniform(NAMES[6], ATT_H2, 1, ATT_H2, rng)?,
            b4: store.register_uniform(NAMES[7], 1, 1, ATT_H2, rng)?,
        })
    }

    /// Resolves the handles against an already-populated store (checkpoint
    /// load path).
    pub fn resolve<S: Scalar>(store: &ParamStore<S>) -> Result<Self> {
        let id = |name: &str| {
            store
                .id(name)
                .ok_or_else(|| Error::Format(format!("missing parameter {name}")))
        };
        Ok(AttentionNet {
            w1: id(NAMES[0])?,
            b1: id(NAMES[1])?,
            w2: id(NAMES[2])?,
            b2: id(NAMES[3])?,
            w3: id(NAMES[4])?,
            b3: id(NAMES[5])?,
            w4: id(NAMES[6])?,
            b4: id(NAMES[7])?,
        })
    }

    pub fn param_ids(&self) -> [ParamId; 8] {
        [
            self.w1, self.b1, self.w2, self.b2, self.w3, self.b3, self.w4, self.b4,
        ]
    }
}

/// Concatenates the pair feature for (target, neighbor).
pub fn pair_feature<S: Scalar>(
    target: &AgentState<S>,
    neighbor: &AgentState<S>,
    neighbor_map: &LocalMap<S>,
) -> Vec<S> {
    let mut f = Vec::with_capacity(PAIR_LEN);
    f.extend_from_slice(&target.vel);
    f.push(neighbor.pos[0] - target.pos[0]);
    f.push(neighbor.pos[1] - target.pos[1]);
    f.extend_from_slice(&neighbor.vel);
    f.extend_from_slice(&neighbor_map.cells);
    f
}

/// Forward activations of one pair, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct PairCache<S> {
    pub feature: Vec<S>,
    pre1: Vec<S>,
    h1: Vec<S>,
    pre2: Vec<S>,
    pub emb: Vec<S>,
    pre3: Vec<S>,
    h3: Vec<S>,
}

/// Two ReLU layers: `PAIR_LEN -> 100 -> 50`.
pub fn embed_pair<S: Scalar>(
    feature: &[S],
    store: &ParamStore<S>,
    net: &AttentionNet,
) -> Result<Vec<S>> {
    if feature.len() != PAIR_LEN {
        return Err(Error::Dim(format!(
            "pair feature width {} (expected {PAIR_LEN})",
            feature.len()
        )));
    }
    let pre1 = nn::linear_forward(feature, store.value(net.w1), store.value(net.b1).row(0))?;
    let h1 = nn::relu(&pre1);
    let pre2 = nn::linear_forward(&h1, store.value(net.w2), store.value(net.b2).row(0))?;
    Ok(nn::relu(&pre2))
}

fn embed_pair_cached<S: Scalar>(
    feature: Vec<S>,
    values: &[Matrix<S>],
    net: &AttentionNet,
) -> Result<PairCache<S>> {
    if feature.len() != PAIR_LEN {
        return Err(Error::Dim(format!(
            "pair feature width {} (expected {PAIR_LEN})",
            feature.len()
        )));
    }
    let pre1 = nn::linear_forward(
        &feature,
        &values[net.w1.idx()],
        values[net.b1.idx()].row(0),
    )?;
    let h1 = nn::relu(&pre1);
    let pre2 = nn::linear_forward(&h1, &values[net.w2.idx()], values[net.b2.idx()].row(0))?;
    let emb = nn::relu(&pre2);
    Ok(PairCache {
        feature,
        pre1,
        h1,
        pre2,
        emb,
        pre3: Vec::new(),
        h3: Vec::new(),
    })
}

/// Forward state of one target's scoring pass. Pairs are held in canonical
/// order (ascending neighbor ped id) so that reductions are independent of
/// the caller's neighbor order; `order[k]` is the input index of canonical
/// pair `k`.
#[derive(Debug, Clone)]
pub struct AttentionCache<S> {
    pub order: Vec<usize>,
    pub pairs: Vec<PairCache<S>>,
    pub mean_emb: Vec<S>,
    /// Softmax weights in canonical order.
    pub weights: Vec<S>,
}

/// Scores a target's neighbors: embed each pair, concatenate with the mean
/// embedding, run the scoring MLP, softmax over neighbors. Zero neighbors
/// yields an explicit empty score list.
pub fn score_neighbors<S: Scalar>(
    target_ped: PedId,
    target: &AgentState<S>,
    neighbors: &[NeighborInput<S>],
    store: &ParamStore<S>,
    net: &AttentionNet,
) -> Result<AttentionScores<S>> {
    let (scores, _) = score_neighbors_cached(target_ped, target, neighbors, store, net)?;
    Ok(scores)
}

pub fn score_neighbors_cached<S: Scalar>(
    target_ped: PedId,
    target: &AgentState<S>,
    neighbors: &[NeighborInput<S>],
    store: &ParamStore<S>,
    net: &AttentionNet,
) -> Result<(AttentionScores<S>, AttentionCache<S>)> {
    if neighbors.is_empty() {
        return Ok((
            AttentionScores {
                target: target_ped,
                neighbors: Vec::new(),
                weights: Vec::new(),
            },
            AttentionCache {
                order: Vec::new(),
                pairs: Vec::new(),
                mean_emb: Vec::new(),
                weights: Vec::new(),
            },
        ));
    }

    let mut order: Vec<usize> = (0..neighbors.len()).collect();
    order.sort_by_key(|&i| neighbors[i].ped);

    let values = store_values(store);
    let mut pairs = Vec::with_capacity(neighbors.len());
    for &i in &order {
        let nb = &neighbors[i];
        let feature = pair_feature(target, &nb.state, &nb.map);
        pairs.push(embed_pair_cached(feature, values, net)?);
    }

    let k = S::of(pairs.len() as f64);
    let mut mean_emb = vec![S::zero(); ATT_EMB];
    for p in &pairs {
        for (m, &e) in mean_emb.iter_mut().zip(&p.emb) {
            *m += e;
        }
    }
    for m in &mut mean_emb {
        *m /= k;
    }

    let mut raw = Vec::with_capacity(pairs.len());
    for p in &mut pairs {
        let mut u = Vec::with_capacity(2 * ATT_EMB);
        u.extend_from_slice(&p.emb);
        u.extend_from_slice(&mean_emb);
        let pre3 = nn::linear_forward(&u, &values[net.w3.idx()], values[net.b3.idx()].row(0))?;
        let h3 = nn::relu(&pre3);
        let s = nn::linear_forward(&h3, &values[net.w4.idx()], values[net.b4.idx()].row(0))?[0];
        p.pre3 = pre3;
        p.h3 = h3;
        raw.push(s);
    }
    let weights_canonical = nn::softmax(&raw)?;

    let mut weights = vec![S::zero(); neighbors.len()];
    for (k_idx, &i) in order.iter().enumerate() {
        weights[i] = weights_canonical[k_idx];
    }
    let scores = AttentionScores {
        target: target_ped,
        neighbors: neighbors.iter().map(|n| n.ped).collect(),
        weights,
    };
    let cache = AttentionCache {
        order,
        pairs,
        mean_emb,
        weights: weights_canonical,
    };
    Ok((scores, cache))
}

fn store_values<S: Scalar>(store: &ParamStore<S>) -> &[Matrix<S>] {
    // split_mut needs &mut; forward only reads. Reach values via ids.
    // (ParamStore keeps values in a plain slice; see optim::ParamStore.)
    store.values_slice()
}

/// `sum_j alpha_j e_j`; kept for parity with the source pooling module. The
/// default predictor wiring consumes raw scores instead.
pub fn weighted_crowd_feature<S: Scalar>(weights: &[S], embeddings: &[Vec<S>]) -> Result<Vec<S>> {
    if weights.len() != embeddings.len() {
        return Err(Error::Dim(format!(
            "{} weights vs {} embeddings",
            weights.len(),
            embeddings.len()
        )));
    }
    let width = embeddings.first().map_or(ATT_EMB, Vec::len);
    let mut out = vec![S::zero(); width];
    for (&a, e) in weights.iter().zip(embeddings) {
        for (o, &v) in out.iter_mut().zip(e) {
            *o += a * v;
        }
    }
    Ok(out)
}

/// Gradients routed back to the scorer's inputs, in the caller's neighbor
/// order.
#[derive(Debug, Clone)]
pub struct AttentionInputGrads<S> {
    pub d_target_vel: [S; 2],
    pub d_rel_pos: Vec<[S; 2]>,
    pub d_vel: Vec<[S; 2]>,
    pub d_map: Vec<Vec<S>>,
}

/// Backward through `score_neighbors`. `d_weights` aligns with the caller's
/// neighbor order; `d_crowd`, when present, is the gradient with respect to
/// the weighted crowd feature. Parameter gradients accumulate into `grads`.
pub fn attention_backward<S: Scalar>(
    cache: &AttentionCache<S>,
    net: &AttentionNet,
    values: &[Matrix<S>],
    grads: &mut [Matrix<S>],
    d_weights: &[S],
    d_crowd: Option<&[S]>,
) -> AttentionInputGrads<S> {
    let n = cache.order.len();
    let mut out = AttentionInputGrads {
        d_target_vel: [S::zero(); 2],
        d_rel_pos: vec![[S::zero(); 2]; n],
        d_vel: vec![[S::zero(); 2]; n],
        d_map: vec![vec![S::zero(); MAP_LEN]; n],
    };
    if n == 0 {
        return out;
    }

    // Upstream gradient on the canonical-order weights.
    let mut dw: Vec<S> = cache.order.iter().map(|&i| d_weights[i]).collect();
    let mut d_emb: Vec<Vec<S>> = vec![vec![S::zero(); ATT_EMB]; n];
    if let Some(dc) = d_crowd {
        for (k, p) in cache.pairs.iter().enumerate() {
            let mut dot = S::zero();
            for (a, b) in dc.iter().zip(&p.emb) {
                dot += *a * *b;
            }
            dw[k] += dot;
            for (de, &d) in d_emb[k].iter_mut().zip(dc) {
                *de += cache.weights[k] * d;
            }
        }
    }

    let mut d_raw = vec![S::zero(); n];
    nn::softmax_backward(&cache.weights, &dw, &mut d_raw);

    let mut d_mean = vec![S::zero(); ATT_EMB];
    for (k, p) in cache.pairs.iter().enumerate() {
        // Score head.
        let ds = [d_raw[k]];
        let mut dh3 = vec![S::zero(); ATT_H2];
        let (dw4, db4) = crate::optim::two_grads(grads, net.w4, net.b4);
        nn::linear_backward(&p.h3, &values[net.w4.idx()], &ds, dw4, db4.values_mut(), &mut dh3);
        let mut dpre3 = vec![S::zero(); ATT_H2];
        nn::relu_backward(&p.pre3, &dh3, &mut dpre3);
        let mut u = Vec::with_capacity(2 * ATT_EMB);
        u.extend_from_slice(&p.emb);
        u.extend_from_slice(&cache.mean_emb);
        let mut du = vec![S::zero(); 2 * ATT_EMB];
        let (dw3, db3) = crate::optim::two_grads(grads, net.w3, net.b3);
        nn::linear_backward(&u, &values[net.w3.idx()], &dpre3, dw3, db3.values_mut(), &mut du);
        for (de, &d) in d_emb[k].iter_mut().zip(&du[..ATT_EMB]) {
            *de += d;
        }
        for (dm, &d) in d_mean.iter_mut().zip(&du[ATT_EMB..]) {
            *dm += d;
        }
    }

    // Mean embedding distributes evenly.
    let inv_k = S::one() / S::of(n as f64);
    for de in &mut d_emb {
        for (d, &dm) in de.iter_mut().zip(&d_mean) {
            *d += dm * inv_k;
        }
    }

    for (k, p) in cache.pairs.iter().enumerate() {
        let mut dpre2 = vec![S::zero(); ATT_EMB];
        nn::relu_backward(&p.pre2, &d_emb[k], &mut dpre2);
        let mut dh1 = vec![S::zero(); ATT_H1];
        let (dw2, db2) = crate::optim::two_grads(grads, net.w2, net.b2);
        nn::linear_backward(&p.h1, &values[net.w2.idx()], &dpre2, dw2, db2.values_mut(), &mut dh1);
        let mut dpre1 = vec![S::zero(); ATT_H1];
        nn::relu_backward(&p.pre1, &dh1, &mut dpre1);
        let mut df = vec![S::zero(); PAIR_LEN];
        let (dw1, db1) = crate::optim::two_grads(grads, net.w1, net.b1);
        nn::linear_backward(&p.feature, &values[net.w1.idx()], &dpre1, dw1, db1.values_mut(), &mut df);
        let i = cache.order[k];
        out.d_target_vel[0] += df[0];
        out.d_target_vel[1] += df[1];
        out.d_rel_pos[i][0] += df[2];
        out.d_rel_pos[i][1] += df[3];
        out.d_vel[i][0] += df[4];
        out.d_vel[i][1] += df[5];
        for (dm, &d) in out.d_map[i].iter_mut().zip(&df[6..]) {
            *dm += d;
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Frozen-score files
// ---------------------------------------------------------------------------

/// Externally produced attention scores, keyed by (frame, target, neighbor).
/// The file format is one record per line, `dataset frame target neighbor
/// alpha`, with `#` comments; weights of each (dataset, frame, target) group
/// must sum to 1.
#[derive(Debug, Clone, Default)]
pub struct ScoreTable {
    map: BTreeMap<(FrameId, PedId, PedId), f64>,
}

impl ScoreTable {
    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Weights for a target's neighbor subset at a frame. Scores files are
    /// keyed by full-frame neighbor groups, so a sample's subset is
    /// renormalized to sum to 1.
    pub fn lookup(&self, frame: FrameId, target: PedId, neighbors: &[PedId]) -> Result<Vec<f64>> {
        let mut raw = Vec::with_capacity(neighbors.len());
        for &nb in neighbors {
            let a = self.map.get(&(frame, target, nb)).ok_or_else(|| {
                Error::Data(format!(
                    "scores file has no record for frame {frame} target {target} neighbor {nb}"
                ))
            })?;
            raw.push(*a);
        }
        let sum: f64 = raw.iter().sum();
        if neighbors.is_empty() {
            return Ok(raw);
        }
        if sum <= 0.0 {
            return Err(Error::Data(format!(
                "scores for frame {frame} target {target} sum to {sum}"
            )));
        }
        Ok(raw.into_iter().map(|a| a / sum).collect())
    }
}

pub fn write_scores<W: Write>(
    mut w: W,
    dataset: &str,
    records: &[(FrameId, PedId, PedId, f64)],
) -> Result<()> {
    writeln!(w, "# dataset frame target neighbor alpha")?;
    for (frame, target, neighbor, alpha) in records {
        writeln!(w, "{dataset} {frame} {target} {neighbor} {alpha}")?;
    }
    Ok(())
}

pub fn load_scores<R: BufRead>(reader: R, expected_dataset: &str) -> Result<ScoreTable> {
    let mut table = ScoreTable::default();
    let mut groups: BTreeMap<(FrameId, PedId), f64> = BTreeMap::new();
    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() != 5 {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("expected 5 fields, got {}", fields.len()),
            });
        }
        if !fields[0].eq_ignore_ascii_case(expected_dataset) {
            return Err(Error::Parse {
                line: lineno,
                msg: format!(
                    "record for dataset {:?} in a run over {expected_dataset:?}",
                    fields[0]
                ),
            });
        }
        let int = |i: usize| -> Result<i64> {
            fields[i].parse().map_err(|_| Error::Parse {
                line: lineno,
                msg: format!("field {} ({:?}) is not an integer", i + 1, fields[i]),
            })
        };
        let frame = int(1)?;
        let target = int(2)?;
        let neighbor = int(3)?;
        let alpha: f64 = fields[4].parse().map_err(|_| Error::Parse {
            line: lineno,
            msg: format!("alpha {:?} is not numeric", fields[4]),
        })?;
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("alpha {alpha} outside [0, 1]"),
            });
        }
        if table.map.insert((frame, target, neighbor), alpha).is_some() {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("duplicate record for ({frame}, {target}, {neighbor})"),
            });
        }
        *groups.entry((frame, target)).or_insert(0.0) += alpha;
    }
    for ((frame, target), sum) in groups {
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Format(format!(
                "scores for frame {frame} target {target} sum to {sum}, expected 1"
            )));
        }
    }
    Ok(table)
}
