//! The cell-per-pedestrian predictor. Per frame, each pedestrian's input is
//! the concatenation of three 64-wide embeddings: its position (relative to
//! its own first observed position), its attention scores over neighbors,
//! and its social tensor. A shared-parameter LSTM advances every pedestrian
//! frame-synchronously and a linear head emits a bivariate Gaussian over the
//! next position.
//!
//! The first 8 frames of a sample are teacher-forced; for the 12 prediction
//! frames the mean is fed back and local maps, attention scores, and social
//! tensors are rebuilt from the predicted scene, so training and evaluation
//! roll the crowd forward the same way. The backward pass runs the whole
//! thing in reverse, including the gradients that flow through fed-back
//! positions and the velocities derived from them.

use rand::RngCore;

use crate::attention::{
    self, AttentionCache, AttentionNet, AttentionScores, NeighborInput, ScoreTable, ATT_EMB,
};
use crate::dataset::{PedId, SequenceSample, OBS_LEN, SEQ_LEN};
use crate::error::{Error, Result};
use crate::localmap::{build_local_map, AgentState, LocalMap};
use crate::nn::{self, DropoutMask, LstmCache, LstmState};
use crate::num::Scalar;
use crate::optim::{three_grads, two_grads, ParamId, ParamStore};
use crate::social::{self, SocialCache, SocialTensor, DEFAULT_REGION_SIDE, SOCIAL_LEN};
use crate::tensor::Matrix;

/// Width of each input embedding block.
pub const EMB: usize = 64;
/// LSTM input width: position, attention, social blocks.
pub const LSTM_IN: usize = 3 * EMB;
/// LSTM hidden width.
pub const HIDDEN: usize = 128;
/// Raw output head width.
pub const RAW_OUT: usize = 5;
/// Scale floor keeping the Gaussian nonsingular.
pub const SIGMA_FLOOR: f64 = 1e-6;
/// Correlation clamp keeping the Gaussian nonsingular.
pub const RHO_CLAMP: f64 = 0.999;

/// Whether the attention block participates or is zeroed (the social-only
/// baseline).
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Attention,
    SocialOnly,
}

impl Mode {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "attention" => Ok(Mode::Attention),
            "social" | "social-only" => Ok(Mode::SocialOnly),
            other => Err(Error::Config(format!(
                "unknown mode {other:?} (expected attention or social)"
            ))),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Mode::Attention => write!(f, "attention"),
            Mode::SocialOnly => write!(f, "social"),
        }
    }
}

/// Predicted bivariate Gaussian over the next position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianParams<S> {
    pub mux: S,
    pub muy: S,
    pub sx: S,
    pub sy: S,
    pub rho: S,
}

impl<S: Scalar> GaussianParams<S> {
    pub fn check(&self) -> Result<()> {
        let vals = [self.mux, self.muy, self.sx, self.sy, self.rho];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("gaussian parameters {self:?}")));
        }
        if self.sx <= S::zero() || self.sy <= S::zero() || self.rho.abs() > S::of(RHO_CLAMP) {
            return Err(Error::NonFinite(format!("degenerate gaussian {self:?}")));
        }
        Ok(())
    }

    /// Determinant of the implied covariance.
    pub fn covariance_det(&self) -> S {
        self.sx * self.sx * self.sy * self.sy * (S::one() - self.rho * self.rho)
    }
}

/// `mu = raw[0..2]`, `sigma = exp(raw[2..4])` floored at 1e-6,
/// `rho = 0.999 tanh(raw[4])`. Total on any finite input.
pub fn transform_outputs<S: Scalar>(raw: &[S]) -> GaussianParams<S> {
    debug_assert_eq!(raw.len(), RAW_OUT);
    let floor = S::of(SIGMA_FLOOR);
    GaussianParams {
        mux: raw[0],
        muy: raw[1],
        sx: raw[2].exp().max(floor),
        sy: raw[3].exp().max(floor),
        rho: S::of(RHO_CLAMP) * raw[4].tanh(),
    }
}

/// Negative log-likelihood of `target` under the Gaussian.
pub fn nll_loss<S: Scalar>(g: &GaussianParams<S>, target: [S; 2]) -> S {
    let dx = target[0] - g.mux;
    let dy = target[1] - g.muy;
    let q = S::one() - g.rho * g.rho;
    let z = dx * dx / (g.sx * g.sx) - S::of(2.0) * g.rho * dx * dy / (g.sx * g.sy)
        + dy * dy / (g.sy * g.sy);
    S::of(std::f64::consts::TAU).ln() + g.sx.ln() + g.sy.ln() + S::of(0.5) * q.ln()
        + z / (S::of(2.0) * q)
}

/// Gradient of [`nll_loss`] with respect to (mux, muy, sx, sy, rho).
fn nll_backward<S: Scalar>(g: &GaussianParams<S>, target: [S; 2], scale: S) -> [S; 5] {
    let dx = target[0] - g.mux;
    let dy = target[1] - g.muy;
    let q = S::one() - g.rho * g.rho;
    let a = dx / (g.sx * g.sx) - g.rho * dy / (g.sx * g.sy);
    let b = dy / (g.sy * g.sy) - g.rho * dx / (g.sx * g.sy);
    let z = dx * a + dy * b;
    let d_mux = -a / q;
    let d_muy = -b / q;
    let d_sx = S::one() / g.sx - dx * a / (q * g.sx);
    let d_sy = S::one() / g.sy - dy * b / (q * g.sy);
    let d_rho = -g.rho / q - dx * dy / (g.sx * g.sy * q) + z * g.rho / (q * q);
    [
        d_mux * scale,
        d_muy * scale,
        d_sx * scale,
        d_sy * scale,
        d_rho * scale,
    ]
}

/// Parameter handles of the predictor (the attention scorer's handles live
/// in [`AttentionNet`]).
#[derive(Debug, Clone, Copy)]
struct PredictorIds {
    pos_w: ParamId,
    pos_b: ParamId,
    alpha_w: ParamId,
    alpha_b: ParamId,
    crowd_w: ParamId,
    crowd_b: ParamId,
    proj_w: ParamId,
    proj_b: ParamId,
    soc_w: ParamId,
    soc_b: ParamId,
    lstm_wx: ParamId,
    lstm_wh: ParamId,
    lstm_b: ParamId,
    out_w: ParamId,
    out_b: ParamId,
}

const PRED_NAMES: [(&str, usize, usize, usize); 15] = [
    ("pred.pos.w", 2, EMB, 2),
    ("pred.pos.b", 1, EMB, 2),
    ("pred.alpha.w", 1, EMB, 1),
    ("pred.alpha.b", 1, EMB, 1),
    ("pred.crowd.w", ATT_EMB, EMB, ATT_EMB),
    ("pred.crowd.b", 1, EMB, ATT_EMB),
    ("pred.social_proj.w", HIDDEN, social::SOCIAL_CHANNELS, HIDDEN),
    ("pred.social_proj.b", 1, social::SOCIAL_CHANNELS, HIDDEN),
    ("pred.social.w", SOCIAL_LEN, EMB, SOCIAL_LEN),
    ("pred.social.b", 1, EMB, SOCIAL_LEN),
    ("pred.lstm.wx", LSTM_IN, 4 * HIDDEN, LSTM_IN),
    ("pred.lstm.wh", HIDDEN, 4 * HIDDEN, HIDDEN),
    ("pred.lstm.b", 1, 4 * HIDDEN, HIDDEN),
    ("pred.out.w", HIDDEN, RAW_OUT, HIDDEN),
    ("pred.out.b", 1, RAW_OUT, HIDDEN),
];

/// The Attention-Social-LSTM model: attention scorer plus predictor,
/// sharing one parameter store.
#[derive(Debug, Clone)]
pub struct Predictor {
    pub mode: Mode,
    /// Feed the weighted crowd feature to the attention block instead of the
    /// per-neighbor score embedding.
    pub use_crowd_feature: bool,
    pub dropout: f64,
    pub frame_period: f64,
    att: AttentionNet,
    ids: PredictorIds,
}

impl Predictor {
    /// Registers all parameters with seeded uniform init and returns the
    /// model handles. Registration order is fixed; it defines both the init
    /// draw order and the checkpoint layout.
    pub fn register<S: Scalar, R: rand::Rng>(
        store: &mut ParamStore<S>,
        mode: Mode,
        dropout: f64,
        frame_period: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::Config(format!("dropout rate {dropout} outside [0, 1)")));
        }
        let att = AttentionNet::register(store, rng)?;
        let mut ids = Vec::with_capacity(PRED_NAMES.len());
        for (name, rows, cols, fan_in) in PRED_NAMES {
            ids.push(store.register_uniform(name, rows, cols, fan_in, rng)?);
        }
        Ok(Predictor {
            mode,
            use_crowd_feature: false,
            dropout,
            frame_period,
            att,
            ids: PredictorIds {
                pos_w: ids[0],
                pos_b: ids[1],
                alpha_w: ids[2],
                alpha_b: ids[3],
                crowd_w: ids[4],
                crowd_b: ids[5],
                proj_w: ids[6],
                proj_b: ids[7],
                soc_w: ids[8],
                soc_b: ids[9],
                lstm_wx: ids[10],
                lstm_wh: ids[11],
                lstm_b: ids[12],
                out_w: ids[13],
                out_b: ids[14],
            },
        })
    }

    /// Resolves handles against a store loaded from a checkpoint, verifying
    /// shapes.
    pub fn resolve<S: Scalar>(
        store: &ParamStore<S>,
        mode: Mode,
        dropout: f64,
        frame_period: f64,
    ) -> Result<Self> {
        let att = AttentionNet::resolve(store)?;
        let mut ids = Vec::with_capacity(PRED_NAMES.len());
        for (name, rows, cols, _) in PRED_NAMES {
            let id = store
                .id(name)
                .ok_or_else(|| Error::Format(format!("missing parameter {name}")))?;
            let m = store.value(id);
            if m.rows() != rows || m.cols() != cols {
                return Err(Error::Format(format!(
                    "parameter {name} is {}x{}, expected {rows}x{cols}",
                    m.rows(),
                    m.cols()
                )));
            }
            ids.push(id);
        }
        Ok(Predictor {
            mode,
            use_crowd_feature: false,
            dropout,
            frame_period,
            att,
            ids: PredictorIds {
                pos_w: ids[0],
                pos_b: ids[1],
                alpha_w: ids[2],
                alpha_b: ids[3],
                crowd_w: ids[4],
                crowd_b: ids[5],
                proj_w: ids[6],
                proj_b: ids[7],
                soc_w: ids[8],
                soc_b: ids[9],
                lstm_wx: ids[10],
                lstm_wh: ids[11],
                lstm_b: ids[12],
                out_w: ids[13],
                out_b: ids[14],
            },
        })
    }

    pub fn attention_net(&self) -> &AttentionNet {
        &self.att
    }

    /// Parameters belonging to the attention branch (scorer plus the score
    /// and crowd embeddings); zeroing them makes attention mode coincide
    /// with the social-only baseline.
    pub fn attention_branch_params(&self) -> Vec<ParamId> {
        let mut ids: Vec<ParamId> = self.att.param_ids().to_vec();
        ids.extend([
            self.ids.alpha_w,
            self.ids.alpha_b,
            self.ids.crowd_w,
            self.ids.crowd_b,
        ]);
        ids
    }

    /// One LSTM advance plus the output head, from an already-embedded
    /// input.
    pub fn step<S: Scalar>(
        &self,
        store: &ParamStore<S>,
        state: &LstmState<S>,
        x: &[S],
    ) -> Result<(LstmState<S>, GaussianParams<S>)> {
        let next = nn::lstm_cell(
            x,
            state,
            store.value(self.ids.lstm_wx),
            store.value(self.ids.lstm_wh),
            store.value(self.ids.lstm_b).row(0),
        )?;
        let raw = nn::linear_forward(
            &next.hidden,
            store.value(self.ids.out_w),
            store.value(self.ids.out_b).row(0),
        )?;
        Ok((next, transform_outputs(&raw)))
    }

    /// Embeds (position, attention scores, social tensor) into the LSTM
    /// input, `position block || attention block || social block`.
    pub fn embed_inputs<S: Scalar>(
        &self,
        store: &ParamStore<S>,
        pos: [S; 2],
        scores: &AttentionScores<S>,
        social: &SocialTensor<S>,
        training: bool,
        rng: Option<&mut dyn RngCore>,
    ) -> Result<Vec<S>> {
        let values = store.values_slice();
        let cache = self.embed_cached(values, pos, &scores.weights, None, social, training, rng)?;
        Ok(cache.x)
    }

    #[allow(clippy::too_many_arguments)]
    fn embed_cached<S: Scalar, R: RngCore + ?Sized>(
        &self,
        values: &[Matrix<S>],
        pos: [S; 2],
        alphas: &[S],
        crowd: Option<Vec<S>>,
        social: &SocialTensor<S>,
        training: bool,
        mut rng: Option<&mut R>,
    ) -> Result<EmbedCache<S>> {
        let ids = &self.ids;
        let pos_pre = nn::linear_forward(&pos, &values[ids.pos_w.idx()], values[ids.pos_b.idx()].row(0))?;
        let pos_out = nn::relu(&pos_pre);

        let mut alpha_pre = Vec::new();
        let mut crowd_pre = None;
        let mut att_out = vec![S::zero(); EMB];
        if self.mode == Mode::Attention {
            if let Some(c) = &crowd {
                let pre = nn::linear_forward(c, &values[ids.crowd_w.idx()], values[ids.crowd_b.idx()].row(0))?;
                att_out = nn::relu(&pre);
                crowd_pre = Some(pre);
            } else {
                for &a in alphas {
                    let pre = nn::linear_forward(
                        &[a],
                        &values[ids.alpha_w.idx()],
                        values[ids.alpha_b.idx()].row(0),
                    )?;
                    for (o, &p) in att_out.iter_mut().zip(&pre) {
                        *o += p.max(S::zero());
                    }
                    alpha_pre.push(pre);
                }
            }
        }

        let soc_pre = nn::linear_forward(
            &social.values,
            &values[ids.soc_w.idx()],
            values[ids.soc_b.idx()].row(0),
        )?;
        let soc_out = nn::relu(&soc_pre);

        let mut blocks = [pos_out, att_out, soc_out];
        let mut masks: [DropoutMask<S>; 3] = [None, None, None];
        if training && self.dropout > 0.0 {
            let rng = rng
                .take()
                .ok_or_else(|| Error::Config("training forward needs an rng for dropout".into()))?;
            for (block, mask) in blocks.iter_mut().zip(&mut masks) {
                let (dropped, m) = nn::dropout(block, self.dropout, true, &mut *rng)?;
                *block = dropped;
                *mask = m;
            }
        }

        let mut x = Vec::with_capacity(LSTM_IN);
        for block in &blocks {
            x.extend_from_slice(block);
        }
        Ok(EmbedCache {
            pos_in: pos,
            pos_pre,
            alphas: alphas.to_vec(),
            alpha_pre,
            crowd_in: crowd,
            crowd_pre,
            soc_pre,
            masks,
            x,
        })
    }
}

/// Per-pedestrian, per-step forward state kept for the backward pass.
#[derive(Debug, Clone)]
struct EmbedCache<S> {
    pos_in: [S; 2],
    pos_pre: Vec<S>,
    alphas: Vec<S>,
    alpha_pre: Vec<Vec<S>>,
    crowd_in: Option<Vec<S>>,
    crowd_pre: Option<Vec<S>>,
    soc_pre: Vec<S>,
    masks: [DropoutMask<S>; 3],
    x: Vec<S>,
}

#[derive(Debug, Clone)]
struct StepCache<S> {
    /// Attention caches per target (None when scores are frozen or the mode
    /// is social-only).
    att: Vec<Option<AttentionCache<S>>>,
    /// Local-map contributor lists per map center: `(ped index, ix, iy)`.
    map_contribs: Vec<Vec<(usize, usize, usize)>>,
    soc: Vec<SocialCache<S>>,
    soc_tensor: Vec<SocialTensor<S>>,
    emb: Vec<EmbedCache<S>>,
    lstm: Vec<LstmCache<S>>,
    raw: Vec<Vec<S>>,
    gauss: Vec<GaussianParams<S>>,
}

/// Output of one sample's forward pass.
#[derive(Debug, Clone)]
pub struct SampleRun<S> {
    /// Loss summed over pedestrians and the 12 prediction frames.
    pub loss: S,
    /// World-coordinate mean predictions, `[ped][prediction frame]`.
    pub predictions: Vec<Vec<[S; 2]>>,
    n_peds: usize,
    anchors: Vec<[S; 2]>,
    /// Scene positions actually consumed at each step (ground truth for the
    /// observed horizon, fed-back predictions afterwards).
    scene_pos: Vec<Vec<[S; 2]>>,
    steps: Vec<StepCache<S>>,
}

impl<S: Scalar> SampleRun<S> {
    /// L2 norm of every pooled social cell, per step and pedestrian
    /// (debug instrumentation behind the eval dump flag).
    pub fn social_cell_norms(&self) -> Vec<(usize, usize, Vec<S>)> {
        let cells = social::COARSE_N * social::COARSE_N;
        let mut rows = Vec::new();
        for (t, step) in self.steps.iter().enumerate() {
            for (ped, tensor) in step.soc_tensor.iter().enumerate() {
                let mut norms = Vec::with_capacity(cells);
                for c in 0..cells {
                    let block = &tensor.values[c * social::SOCIAL_CHANNELS..(c + 1) * social::SOCIAL_CHANNELS];
                    norms.push(block.iter().map(|&v| v * v).sum::<S>().sqrt());
                }
                rows.push((t, ped, norms));
            }
        }
        rows
    }
}

/// How the prediction horizon feeds itself.
enum Feedback<'a> {
    Mean,
    Sampled(&'a mut dyn RngCore),
}

impl Predictor {
    /// Runs one sample end to end (19 LSTM steps over a 20-frame window),
    /// returning the loss over the 12 prediction frames and the caches the
    /// backward pass needs. `frozen` swaps learned attention scores for a
    /// scores-file lookup.
    pub fn forward_sample<S: Scalar>(
        &self,
        store: &ParamStore<S>,
        sample: &SequenceSample,
        training: bool,
        rng: Option<&mut dyn RngCore>,
        frozen: Option<&ScoreTable>,
    ) -> Result<SampleRun<S>> {
        self.run_sample(store, sample, training, rng, frozen, Feedback::Mean)
    }

    /// Deterministic evaluation rollout: 12 predicted positions per
    /// pedestrian in world coordinates. `sample_rng` switches the feedback
    /// (and the returned positions) from the mean to a draw from each step's
    /// Gaussian.
    pub fn rollout<S: Scalar>(
        &self,
        store: &ParamStore<S>,
        sample: &SequenceSample,
        frozen: Option<&ScoreTable>,
        sample_rng: Option<&mut dyn RngCore>,
    ) -> Result<Vec<Vec<[S; 2]>>> {
        let feedback = match sample_rng {
            Some(rng) => Feedback::Sampled(rng),
            None => Feedback::Mean,
        };
        let run = self.run_sample::<S, dyn RngCore>(store, sample, false, None, frozen, feedback)?;
        Ok(run.predictions)
    }

    fn run_sample<S: Scalar, R: RngCore + ?Sized>(
        &self,
        store: &ParamStore<S>,
        sample: &SequenceSample,
        training: bool,
        mut rng: Option<&mut R>,
        frozen: Option<&ScoreTable>,
        mut feedback: Feedback<'_>,
    ) -> Result<SampleRun<S>> {
        let n = sample.n_peds();
        if n == 0 {
            return Err(Error::Data("sample with zero pedestrians".into()));
        }
        if sample.frames.len() != SEQ_LEN {
            return Err(Error::Data(format!(
                "sample has {} frames, expected {SEQ_LEN}",
                sample.frames.len()
            )));
        }
        if frozen.is_some() && self.use_crowd_feature {
            return Err(Error::Config(
                "frozen scores provide no pair embeddings; crowd-feature mode needs the learned scorer"
                    .into(),
            ));
        }
        let n_steps = SEQ_LEN - 1;
        let values = store.values_slice();

        let anchors: Vec<[S; 2]> = (0..n)
            .map(|p| {
                [
                    S::of(sample.positions[p][0][0]),
                    S::of(sample.positions[p][0][1]),
                ]
            })
            .collect();

        // Scene state per frame; the observed horizon comes from the data.
        let mut scene_pos: Vec<Vec<[S; 2]>> = vec![vec![[S::zero(); 2]; n]; n_steps];
        let mut scene_vel: Vec<Vec<[S; 2]>> = vec![vec![[S::zero(); 2]; n]; n_steps];
        for t in 0..OBS_LEN.min(n_steps) {
            for p in 0..n {
                scene_pos[t][p] = [
                    S::of(sample.positions[p][t][0]),
                    S::of(sample.positions[p][t][1]),
                ];
                scene_vel[t][p] = [
                    S::of(sample.velocities[p][t][0]),
                    S::of(sample.velocities[p][t][1]),
                ];
            }
        }

        let mut states: Vec<LstmState<S>> = (0..n).map(|_| LstmState::zeros(HIDDEN)).collect();
        let mut steps: Vec<StepCache<S>> = Vec::with_capacity(n_steps);
        let mut loss = S::zero();
        let mut predictions: Vec<Vec<[S; 2]>> = vec![Vec::with_capacity(SEQ_LEN - OBS_LEN); n];

        for t in 0..n_steps {
            let frame = sample.frames[t];
            let agent_states: Vec<AgentState<S>> = (0..n)
                .map(|p| AgentState::new(scene_pos[t][p], scene_vel[t][p]))
                .collect();

            // Local maps centered on every pedestrian (each counts all the
            // others), shared by all pair features of this step.
            let mut maps: Vec<LocalMap<S>> = Vec::with_capacity(n);
            let mut map_contribs = Vec::with_capacity(n);
            for p in 0..n {
                let others: Vec<AgentState<S>> = (0..n)
                    .filter(|&q| q != p)
                    .map(|q| agent_states[q])
                    .collect();
                let (map, contribs) = build_local_map(&agent_states[p], &others);
                // Contributor indices are into `others`; lift to ped indices.
                let lifted = contribs
                    .into_iter()
                    .map(|(k, ix, iy)| {
                        let ped = if k < p { k } else { k + 1 };
                        (ped, ix, iy)
                    })
                    .collect();
                maps.push(map);
                map_contribs.push(lifted);
            }

            let mut step = StepCache {
                att: Vec::with_capacity(n),
                map_contribs,
                soc: Vec::with_capacity(n),
                soc_tensor: Vec::with_capacity(n),
                emb: Vec::with_capacity(n),
                lstm: Vec::with_capacity(n),
                raw: Vec::with_capacity(n),
                gauss: Vec::with_capacity(n),
            };

            let mut new_states = Vec::with_capacity(n);
            for i in 0..n {
                let neighbor_idx: Vec<usize> = (0..n).filter(|&j| j != i).collect();

                // Attention branch.
                let (alphas, crowd, att_cache): (Vec<S>, Option<Vec<S>>, Option<AttentionCache<S>>) =
                    if self.mode != Mode::Attention || neighbor_idx.is_empty() {
                        (Vec::new(), None, None)
                    } else if let Some(table) = frozen {
                        let ped_ids: Vec<PedId> =
                            neighbor_idx.iter().map(|&j| sample.peds[j]).collect();
                        let w = table.lookup(frame, sample.peds[i], &ped_ids)?;
                        (w.into_iter().map(S::of).collect(), None, None)
                    } else {
                        let neighbors: Vec<NeighborInput<S>> = neighbor_idx
                            .iter()
                            .map(|&j| NeighborInput {
                                ped: sample.peds[j],
                                state: agent_states[j],
                                map: maps[j].clone(),
                            })
                            .collect();
                        let (scores, cache) = attention::score_neighbors_cached(
                            sample.peds[i],
                            &agent_states[i],
                            &neighbors,
                            store,
                            &self.att,
                        )?;
                        let crowd = if self.use_crowd_feature {
                            let embs: Vec<Vec<S>> =
                                cache.pairs.iter().map(|p| p.emb.clone()).collect();
                            Some(attention::weighted_crowd_feature(&cache.weights, &embs)?)
                        } else {
                            None
                        };
                        (scores.weights, crowd, Some(cache))
                    };

                // Social branch: neighbors' previous-step hidden states.
                let soc_neighbors: Vec<([S; 2], &[S])> = neighbor_idx
                    .iter()
                    .map(|&j| (agent_states[j].pos, states[j].hidden.as_slice()))
                    .collect();
                let (tensor, soc_cache) = social::build_social_tensor(
                    agent_states[i].pos,
                    &soc_neighbors,
                    &values[self.ids.proj_w.idx()],
                    values[self.ids.proj_b.idx()].row(0),
                    DEFAULT_REGION_SIDE,
                )?;

                let pos_norm = [
                    agent_states[i].pos[0] - anchors[i][0],
                    agent_states[i].pos[1] - anchors[i][1],
                ];
                let emb = self.embed_cached(
                    values,
                    pos_norm,
                    &alphas,
                    crowd,
                    &tensor,
                    training,
                    rng.as_deref_mut(),
                )?;

                let (next, lstm_cache) = nn::lstm_cell_cached(
                    &emb.x,
                    &states[i],
                    &values[self.ids.lstm_wx.idx()],
                    &values[self.ids.lstm_wh.idx()],
                    values[self.ids.lstm_b.idx()].row(0),
                )?;
                let raw = nn::linear_forward(
                    &next.hidden,
                    &values[self.ids.out_w.idx()],
                    values[self.ids.out_b.idx()].row(0),
                )?;
                let gauss = transform_outputs(&raw);
                gauss.check().map_err(|e| {
                    Error::NonFinite(format!(
                        "step {t} (frame {frame}) pedestrian {}: {e}",
                        sample.peds[i]
                    ))
                })?;

                step.att.push(att_cache);
                step.soc.push(soc_cache);
                step.soc_tensor.push(tensor);
                step.emb.push(emb);
                step.lstm.push(lstm_cache);
                step.raw.push(raw);
                step.gauss.push(gauss);
                new_states.push(next);
            }
            states = new_states;

            // Loss over the prediction horizon, and feedback into the next
            // frame's scene state.
            if t + 1 >= OBS_LEN {
                for i in 0..n {
                    let g = &step.gauss[i];
                    let target = [
                        S::of(sample.positions[i][t + 1][0]) - anchors[i][0],
                        S::of(sample.positions[i][t + 1][1]) - anchors[i][1],
                    ];
                    loss += nll_loss(g, target);

                    let fed = match &mut feedback {
                        Feedback::Mean => [g.mux, g.muy],
                        Feedback::Sampled(rng) => sample_gaussian(g, &mut **rng),
                    };
                    let world = [fed[0] + anchors[i][0], fed[1] + anchors[i][1]];
                    predictions[i].push(world);
                    if t + 1 < n_steps {
                        let dt = S::of(
                            (sample.frames[t + 1] - sample.frames[t]) as f64 * self.frame_period,
                        );
                        scene_pos[t + 1][i] = world;
                        scene_vel[t + 1][i] = [
                            (world[0] - scene_pos[t][i][0]) / dt,
                            (world[1] - scene_pos[t][i][1]) / dt,
                        ];
                    }
                }
            }
            steps.push(step);
        }

        if !loss.is_finite() {
            return Err(Error::NonFinite(format!(
                "sample starting at frame {}: loss is {loss}",
                sample.frames[0]
            )));
        }

        Ok(SampleRun {
            loss,
            predictions,
            n_peds: n,
            anchors,
            scene_pos,
            steps,
        })
    }

    /// Backpropagates one sample, accumulating parameter gradients for
    /// `d loss / d theta` into the store. Must be called with the run
    /// produced by [`Predictor::forward_sample`] against the same store.
    pub fn backward_sample<S: Scalar>(
        &self,
        store: &mut ParamStore<S>,
        sample: &SequenceSample,
        run: &SampleRun<S>,
    ) -> Result<()> {
        let n = run.n_peds;
        let n_steps = run.steps.len();
        let ids = &self.ids;
        let (values, grads) = store.split_mut();

        // Gradient accumulators for recurrent state and fed-back positions.
        let mut dh: Vec<Vec<S>> = vec![vec![S::zero(); HIDDEN]; n];
        let mut dc: Vec<Vec<S>> = vec![vec![S::zero(); HIDDEN]; n];
        let mut dh_prev: Vec<Vec<S>> = vec![vec![S::zero(); HIDDEN]; n];
        let mut dc_prev: Vec<Vec<S>> = vec![vec![S::zero(); HIDDEN]; n];
        let mut dpos: Vec<Vec<[S; 2]>> = vec![vec![[S::zero(); 2]; n]; n_steps + 1];
        let mut dvel: Vec<Vec<[S; 2]>> = vec![vec![[S::zero(); 2]; n]; n_steps];

        for t in (0..n_steps).rev() {
            let step = &run.steps[t];
            for d in dh_prev.iter_mut().chain(dc_prev.iter_mut()) {
                d.iter_mut().for_each(|v| *v = S::zero());
            }

            // Phase one: heads and LSTM steps. This assigns every
            // pedestrian's recurrence gradient into dh_prev/dc_prev before
            // phase two adds the cross-pedestrian social contributions.
            let mut dx_all: Vec<Vec<S>> = Vec::with_capacity(n);
            for i in 0..n {
                // Head: loss gradient plus whatever flowed into the fed-back
                // position of frame t+1.
                let g = &step.gauss[i];
                let mut dgauss = [S::zero(); 5];
                if t + 1 >= OBS_LEN {
                    let target = [
                        S::of(sample.positions[i][t + 1][0]) - run.anchors[i][0],
                        S::of(sample.positions[i][t + 1][1]) - run.anchors[i][1],
                    ];
                    dgauss = nll_backward(g, target, S::one());
                    if t + 1 < n_steps {
                        dgauss[0] += dpos[t + 1][i][0];
                        dgauss[1] += dpos[t + 1][i][1];
                    }
                }

                // Through the output transform to the raw head.
                let raw = &step.raw[i];
                let mut draw = vec![S::zero(); RAW_OUT];
                draw[0] = dgauss[0];
                draw[1] = dgauss[1];
                draw[2] = if raw[2].exp() > S::of(SIGMA_FLOOR) {
                    dgauss[2] * g.sx
                } else {
                    S::zero()
                };
                draw[3] = if raw[3].exp() > S::of(SIGMA_FLOOR) {
                    dgauss[3] * g.sy
                } else {
                    S::zero()
                };
                let th = raw[4].tanh();
                draw[4] = dgauss[4] * S::of(RHO_CLAMP) * (S::one() - th * th);

                let lstm_cache = &step.lstm[i];
                let h_new: Vec<S> = lstm_cache
                    .o
                    .iter()
                    .zip(&lstm_cache.tanh_c)
                    .map(|(&o, &tc)| o * tc)
                    .collect();
                let mut dh_from_head = vec![S::zero(); HIDDEN];
                {
                    let (dw, db) = two_grads(grads, ids.out_w, ids.out_b);
                    nn::linear_backward(
                        &h_new,
                        &values[ids.out_w.idx()],
                        &draw,
                        dw,
                        db.values_mut(),
                        &mut dh_from_head,
                    );
                }
                for (acc, d) in dh[i].iter_mut().zip(&dh_from_head) {
                    *acc += *d;
                }

                // LSTM step backward.
                let mut dx = vec![S::zero(); LSTM_IN];
                {
                    let (dwx, dwh, db) = three_grads(grads, ids.lstm_wx, ids.lstm_wh, ids.lstm_b);
                    nn::lstm_cell_backward(
                        lstm_cache,
                        &values[ids.lstm_wx.idx()],
                        &values[ids.lstm_wh.idx()],
                        &dh[i],
                        &dc[i],
                        dwx,
                        dwh,
                        db.values_mut(),
                        &mut dx,
                        &mut dh_prev[i],
                        &mut dc_prev[i],
                    );
                }
                dx_all.push(dx);
            }

            // Phase two: route each pedestrian's input gradient through its
            // three embedding blocks and on into positions, velocities,
            // attention inputs, and neighbors' previous hidden states.
            for i in 0..n {
                let dx = &dx_all[i];

                // Split the input gradient into the three embedding blocks.
                let emb = &step.emb[i];
                let mut dpos_block = vec![S::zero(); EMB];
                let mut datt_block = vec![S::zero(); EMB];
                let mut dsoc_block = vec![S::zero(); EMB];
                nn::dropout_backward(&emb.masks[0], &dx[..EMB], &mut dpos_block);
                nn::dropout_backward(&emb.masks[1], &dx[EMB..2 * EMB], &mut datt_block);
                nn::dropout_backward(&emb.masks[2], &dx[2 * EMB..], &mut dsoc_block);

                // Position block.
                {
                    let mut dpre = vec![S::zero(); EMB];
                    nn::relu_backward(&emb.pos_pre, &dpos_block, &mut dpre);
                    let mut dp = vec![S::zero(); 2];
                    let (dw, db) = two_grads(grads, ids.pos_w, ids.pos_b);
                    nn::linear_backward(
                        &emb.pos_in,
                        &values[ids.pos_w.idx()],
                        &dpre,
                        dw,
                        db.values_mut(),
                        &mut dp,
                    );
                    dpos[t][i][0] += dp[0];
                    dpos[t][i][1] += dp[1];
                }

                // Attention block.
                let neighbor_idx: Vec<usize> = (0..n).filter(|&j| j != i).collect();
                if self.mode == Mode::Attention && !neighbor_idx.is_empty() {
                    let mut d_alpha = vec![S::zero(); neighbor_idx.len()];
                    let mut d_crowd: Option<Vec<S>> = None;
                    if let (Some(crowd_pre), Some(_)) = (&emb.crowd_pre, &emb.crowd_in) {
                        let mut dpre = vec![S::zero(); EMB];
                        nn::relu_backward(crowd_pre, &datt_block, &mut dpre);
                        let mut dc_in = vec![S::zero(); ATT_EMB];
                        let (dw, db) = two_grads(grads, ids.crowd_w, ids.crowd_b);
                        nn::linear_backward(
                            emb.crowd_in.as_ref().unwrap(),
                            &values[ids.crowd_w.idx()],
                            &dpre,
                            dw,
                            db.values_mut(),
                            &mut dc_in,
                        );
                        d_crowd = Some(dc_in);
                    } else {
                        for (k, pre) in emb.alpha_pre.iter().enumerate() {
                            let mut dpre = vec![S::zero(); EMB];
                            nn::relu_backward(pre, &datt_block, &mut dpre);
                            let mut da = vec![S::zero(); 1];
                            let (dw, db) = two_grads(grads, ids.alpha_w, ids.alpha_b);
                            nn::linear_backward(
                                &[emb.alphas[k]],
                                &values[ids.alpha_w.idx()],
                                &dpre,
                                dw,
                                db.values_mut(),
                                &mut da,
                            );
                            d_alpha[k] = da[0];
                        }
                    }

                    // Through the scorer (unless scores were frozen).
                    if let Some(att_cache) = &step.att[i] {
                        let input_grads = attention::attention_backward(
                            att_cache,
                            &self.att,
                            values,
                            grads,
                            &d_alpha,
                            d_crowd.as_deref(),
                        );
                        dvel[t][i][0] += input_grads.d_target_vel[0];
                        dvel[t][i][1] += input_grads.d_target_vel[1];
                        for (k, &j) in neighbor_idx.iter().enumerate() {
                            dpos[t][j][0] += input_grads.d_rel_pos[k][0];
                            dpos[t][j][1] += input_grads.d_rel_pos[k][1];
                            dpos[t][i][0] -= input_grads.d_rel_pos[k][0];
                            dpos[t][i][1] -= input_grads.d_rel_pos[k][1];
                            dvel[t][j][0] += input_grads.d_vel[k][0];
                            dvel[t][j][1] += input_grads.d_vel[k][1];
                            // Local map centered on neighbor j: velocities of
                            // the pedestrians inside it.
                            for &(ped, ix, iy) in &step.map_contribs[j] {
                                let base = LocalMap::<S>::flat_index(ix, iy, 1);
                                dvel[t][ped][0] += input_grads.d_map[k][base];
                                dvel[t][ped][1] += input_grads.d_map[k][base + 1];
                            }
                        }
                    }
                }

                // Social block.
                {
                    let mut dpre = vec![S::zero(); EMB];
                    nn::relu_backward(&emb.soc_pre, &dsoc_block, &mut dpre);
                    let mut dtensor = vec![S::zero(); SOCIAL_LEN];
                    let (dw, db) = two_grads(grads, ids.soc_w, ids.soc_b);
                    nn::linear_backward(
                        &step.soc_tensor[i].values,
                        &values[ids.soc_w.idx()],
                        &dpre,
                        dw,
                        db.values_mut(),
                        &mut dtensor,
                    );
                    let soc_neighbors: Vec<([S; 2], &[S])> = neighbor_idx
                        .iter()
                        .map(|&j| (run.scene_pos[t][j], run.steps[t].lstm[j].h_prev.as_slice()))
                        .collect();
                    let mut dh_soc: Vec<Vec<S>> =
                        vec![vec![S::zero(); HIDDEN]; neighbor_idx.len()];
                    let (dw, db) = two_grads(grads, ids.proj_w, ids.proj_b);
                    social::social_tensor_backward(
                        &step.soc[i],
                        &soc_neighbors,
                        &values[ids.proj_w.idx()],
                        &dtensor,
                        dw,
                        db.values_mut(),
                        &mut dh_soc,
                    );
                    for (k, &j) in neighbor_idx.iter().enumerate() {
                        for (acc, d) in dh_prev[j].iter_mut().zip(&dh_soc[k]) {
                            *acc += *d;
                        }
                    }
                }
            }

            // Derived velocities of the prediction horizon route position
            // gradients to this frame and the previous one.
            if t >= OBS_LEN {
                let dt = S::of((sample.frames[t] - sample.frames[t - 1]) as f64 * self.frame_period);
                for i in 0..n {
                    let dv = dvel[t][i];
                    dpos[t][i][0] += dv[0] / dt;
                    dpos[t][i][1] += dv[1] / dt;
                    dpos[t - 1][i][0] -= dv[0] / dt;
                    dpos[t - 1][i][1] -= dv[1] / dt;
                }
            }

            std::mem::swap(&mut dh, &mut dh_prev);
            std::mem::swap(&mut dc, &mut dc_prev);
        }
        Ok(())
    }
}

/// Draw from the bivariate Gaussian (for stochastic rollouts).
fn sample_gaussian<S: Scalar, R: RngCore + ?Sized>(g: &GaussianParams<S>, rng: &mut R) -> [S; 2] {
    // Box-Muller; two standard normals.
    let u1: f64 = rand::Rng::gen::<f64>(&mut *rng).max(1e-12);
    let u2: f64 = rand::Rng::gen::<f64>(&mut *rng);
    let r = (-2.0 * u1.ln()).sqrt();
    let e1 = S::of(r * (std::f64::consts::TAU * u2).cos());
    let e2 = S::of(r * (std::f64::consts::TAU * u2).sin());
    let q = (S::one() - g.rho * g.rho).sqrt();
    [
        g.mux + g.sx * e1,
        g.muy + g.sy * (g.rho * e1 + q * e2),
    ]
}
