//! Actor-critic networks with hand-derived gradients.
//!
//! Every policy family owns one token embedding (linear, tanh) that is the
//! shared layer of the architecture: it is used by the actor and the critic
//! alike and by both airframe instances of the family, so a gradient step
//! through either instance moves it for the other as well. Per instance sit
//! the trunk (self-attention for fight, a gated recurrent cell for the
//! commander, nothing for escape), one hidden layer, the multi-discrete
//! actor heads and the centralized-critic head.
//!
//! Observations enter as entity tokens: each block of the observation is
//! zero-padded to a common token width. The critic consumes the global
//! aircraft slots of [`aircombat_sim::obs::global_state_tokens`] through the
//! same embedding, masked by aliveness and mean-pooled.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use aircombat_sim::aircraft::AircraftKind;
use aircombat_sim::obs::{
    escape_block_widths, fight_block_widths, ObservationVector, PolicyKind,
    COMMANDER_BLOCK_WIDTHS, GLOBAL_TOKEN_WIDTH, MAX_TEAM_SLOTS,
};
use aircombat_sim::actions::{head_sizes, COMMANDER_CHOICES};

use crate::error::RlError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrunkKind {
    SelfAttention,
    Recurrent,
    Plain,
}

/// Per-instance input/output contract.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceSpec {
    pub label: String,
    pub block_widths: Vec<usize>,
    pub head_sizes: Vec<usize>,
}

impl InstanceSpec {
    pub fn obs_len(&self) -> usize {
        self.block_widths.iter().sum()
    }
}

/// Shape description of one policy family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub policy: PolicyKind,
    pub trunk: TrunkKind,
    pub token_width: usize,
    pub embed_dim: usize,
    pub attention_dim: usize,
    pub recurrent_hidden: usize,
    pub hidden_dim: usize,
    /// Aircraft slots seen by the centralized critic.
    pub critic_slots: usize,
    pub instances: Vec<InstanceSpec>,
}

impl NetworkConfig {
    /// Full-size configuration: 100-neuron tanh embedding, attention width
    /// 64, recurrent width 128.
    pub fn standard(policy: PolicyKind) -> Self {
        Self::with_dims(policy, 100, 64, 128, 100)
    }

    /// Reduced configuration for gradient-check tests.
    pub fn tiny(policy: PolicyKind) -> Self {
        Self::with_dims(policy, 8, 4, 6, 8)
    }

    fn with_dims(
        policy: PolicyKind,
        embed_dim: usize,
        attention_dim: usize,
        recurrent_hidden: usize,
        hidden_dim: usize,
    ) -> Self {
        let instances: Vec<InstanceSpec> = match policy {
            PolicyKind::Fight => vec![
                InstanceSpec {
                    label: "ac1".into(),
                    block_widths: fight_block_widths(true).to_vec(),
                    head_sizes: head_sizes(AircraftKind::Ac1),
                },
                InstanceSpec {
                    label: "ac2".into(),
                    block_widths: fight_block_widths(false).to_vec(),
                    head_sizes: head_sizes(AircraftKind::Ac2),
                },
            ],
            PolicyKind::Escape => vec![
                InstanceSpec {
                    label: "ac1".into(),
                    block_widths: escape_block_widths(true).to_vec(),
                    head_sizes: head_sizes(AircraftKind::Ac1),
                },
                InstanceSpec {
                    label: "ac2".into(),
                    block_widths: escape_block_widths(false).to_vec(),
                    head_sizes: head_sizes(AircraftKind::Ac2),
                },
            ],
            // One commander instance serves both airframes.
            PolicyKind::Commander => vec![InstanceSpec {
                label: "shared".into(),
                block_widths: COMMANDER_BLOCK_WIDTHS.to_vec(),
                head_sizes: vec![COMMANDER_CHOICES],
            }],
        };
        let trunk = match policy {
            PolicyKind::Fight => TrunkKind::SelfAttention,
            PolicyKind::Escape => TrunkKind::Plain,
            PolicyKind::Commander => TrunkKind::Recurrent,
        };
        let token_width = instances
            .iter()
            .flat_map(|i| i.block_widths.iter().copied())
            .max()
            .unwrap_or(0)
            .max(GLOBAL_TOKEN_WIDTH);
        Self {
            policy,
            trunk,
            token_width,
            embed_dim,
            attention_dim,
            recurrent_hidden,
            hidden_dim,
            critic_slots: 2 * MAX_TEAM_SLOTS,
            instances,
        }
    }

    /// Output width of the trunk module, i.e. the hidden layer's input.
    pub fn trunk_out_dim(&self) -> usize {
        match self.trunk {
            TrunkKind::SelfAttention => self.attention_dim,
            TrunkKind::Recurrent => self.recurrent_hidden,
            TrunkKind::Plain => self.embed_dim,
        }
    }

    /// Index of the instance serving `kind`.
    pub fn instance_index(&self, kind: AircraftKind) -> usize {
        if self.instances.len() == 1 {
            0
        } else {
            match kind {
                AircraftKind::Ac1 => 0,
                AircraftKind::Ac2 => 1,
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Linear {
    fn init(out_dim: usize, in_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        // Glorot-uniform weights, zero biases.
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let w = Array2::from_shape_fn((out_dim, in_dim), |_| rng.gen_range(-limit..limit));
        Self { w, b: Array1::zeros(out_dim) }
    }

    fn forward(&self, x: &Array1<f64>) -> Array1<f64> {
        self.w.dot(x) + &self.b
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionParams {
    pub wq: Array2<f64>,
    pub wk: Array2<f64>,
    pub wv: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GruParams {
    pub wz: Array2<f64>,
    pub uz: Array2<f64>,
    pub bz: Array1<f64>,
    pub wr: Array2<f64>,
    pub ur: Array2<f64>,
    pub br: Array1<f64>,
    pub wc: Array2<f64>,
    pub uc: Array2<f64>,
    pub bc: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TrunkParams {
    SelfAttention(AttentionParams),
    Recurrent(GruParams),
    Plain,
}

/// Parameters owned by one airframe instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceParams {
    pub trunk: TrunkParams,
    pub hidden: Linear,
    pub heads: Vec<Linear>,
    pub critic_hidden: Linear,
    pub critic_head: Linear,
}

/// All parameters of one policy family, plus the league version counter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyFamily {
    pub cfg: NetworkConfig,
    /// The shared layer: one storage serving both instances, actor and critic.
    pub embed: Linear,
    pub instances: Vec<InstanceParams>,
    pub version: u64,
}

impl PolicyFamily {
    pub fn init(cfg: NetworkConfig, seed: u64) -> Self {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let embed = Linear::init(cfg.embed_dim, cfg.token_width, &mut rng);
        let instances = cfg
            .instances
            .iter()
            .map(|spec| {
                let trunk = match cfg.trunk {
                    TrunkKind::SelfAttention => TrunkParams::SelfAttention(AttentionParams {
                        wq: Linear::init(cfg.attention_dim, cfg.embed_dim, &mut rng).w,
                        wk: Linear::init(cfg.attention_dim, cfg.embed_dim, &mut rng).w,
                        wv: Linear::init(cfg.attention_dim, cfg.embed_dim, &mut rng).w,
                    }),
                    TrunkKind::Recurrent => TrunkParams::Recurrent(GruParams {
                        wz: Linear::init(cfg.recurrent_hidden, cfg.embed_dim, &mut rng).w,
                        uz: Linear::init(cfg.recurrent_hidden, cfg.recurrent_hidden, &mut rng).w,
                        bz: Array1::zeros(cfg.recurrent_hidden),
                        wr: Linear::init(cfg.recurrent_hidden, cfg.embed_dim, &mut rng).w,
                        ur: Linear::init(cfg.recurrent_hidden, cfg.recurrent_hidden, &mut rng).w,
                        br: Array1::zeros(cfg.recurrent_hidden),
                        wc: Linear::init(cfg.recurrent_hidden, cfg.embed_dim, &mut rng).w,
                        uc: Linear::init(cfg.recurrent_hidden, cfg.recurrent_hidden, &mut rng).w,
                        bc: Array1::zeros(cfg.recurrent_hidden),
                    }),
                    TrunkKind::Plain => TrunkParams::Plain,
                };
                InstanceParams {
                    trunk,
                    hidden: Linear::init(cfg.hidden_dim, cfg.trunk_out_dim(), &mut rng),
                    heads: spec
                        .head_sizes
                        .iter()
                        .map(|&n| Linear::init(n, cfg.hidden_dim, &mut rng))
                        .collect(),
                    critic_hidden: Linear::init(cfg.hidden_dim, cfg.embed_dim, &mut rng),
                    critic_head: Linear::init(1, cfg.hidden_dim, &mut rng),
                }
            })
            .collect();
        Self { cfg, embed, instances, version: 0 }
    }

    /// A same-shaped family with every tensor zeroed; used as a gradient
    /// accumulator.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.visit_tensors_mut(|_, t| t.fill(0.0));
        z
    }

    pub fn instance(&self, kind: AircraftKind) -> &InstanceParams {
        &self.instances[self.cfg.instance_index(kind)]
    }

    /// Visits every parameter tensor as a flat slice, in a stable order.
    pub fn visit_tensors_mut(&mut self, mut f: impl FnMut(&str, &mut [f64])) {
        visit_linear_mut("embed", &mut self.embed, &mut f);
        for (i, inst) in self.instances.iter_mut().enumerate() {
            let p = format!("inst{i}");
            match &mut inst.trunk {
                TrunkParams::SelfAttention(a) => {
                    f(&format!("{p}.wq"), a.wq.as_slice_mut().unwrap());
                    f(&format!("{p}.wk"), a.wk.as_slice_mut().unwrap());
                    f(&format!("{p}.wv"), a.wv.as_slice_mut().unwrap());
                }
                TrunkParams::Recurrent(g) => {
                    f(&format!("{p}.wz"), g.wz.as_slice_mut().unwrap());
                    f(&format!("{p}.uz"), g.uz.as_slice_mut().unwrap());
                    f(&format!("{p}.bz"), g.bz.as_slice_mut().unwrap());
                    f(&format!("{p}.wr"), g.wr.as_slice_mut().unwrap());
                    f(&format!("{p}.ur"), g.ur.as_slice_mut().unwrap());
                    f(&format!("{p}.br"), g.br.as_slice_mut().unwrap());
                    f(&format!("{p}.wc"), g.wc.as_slice_mut().unwrap());
                    f(&format!("{p}.uc"), g.uc.as_slice_mut().unwrap());
                    f(&format!("{p}.bc"), g.bc.as_slice_mut().unwrap());
                }
                TrunkParams::Plain => {}
            }
            visit_linear_mut(&format!("{p}.hidden"), &mut inst.hidden, &mut f);
            for (h, head) in inst.heads.iter_mut().enumerate() {
                visit_linear_mut(&format!("{p}.head{h}"), head, &mut f);
            }
            visit_linear_mut(&format!("{p}.critic_hidden"), &mut inst.critic_hidden, &mut f);
            visit_linear_mut(&format!("{p}.critic_head"), &mut inst.critic_head, &mut f);
        }
    }

    pub fn all_finite(&mut self) -> bool {
        let mut ok = true;
        self.visit_tensors_mut(|_, t| ok &= t.iter().all(|v| v.is_finite()));
        ok
    }
}

fn visit_linear_mut(name: &str, l: &mut Linear, f: &mut impl FnMut(&str, &mut [f64])) {
    f(&format!("{name}.w"), l.w.as_slice_mut().unwrap());
    f(&format!("{name}.b"), l.b.as_slice_mut().unwrap());
}

/// One categorical distribution per actor head.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionDistribution {
    pub heads: Vec<Array1<f64>>,
}

impl ActionDistribution {
    /// Independent draw per head; returns indices and the joint log
    /// probability.
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> (Vec<usize>, f64) {
        let mut indices = Vec::with_capacity(self.heads.len());
        let mut log_prob = 0.0;
        for p in &self.heads {
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut chosen = p.len() - 1;
            for (i, &pi) in p.iter().enumerate() {
                acc += pi;
                if u < acc {
                    chosen = i;
                    break;
                }
            }
            indices.push(chosen);
            log_prob += p[chosen].max(1e-300).ln();
        }
        (indices, log_prob)
    }

    /// Greedy per-head argmax; used in evaluation.
    pub fn argmax(&self) -> Vec<usize> {
        self.heads
            .iter()
            .map(|p| {
                p.iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .map(|(i, _)| i)
                    .unwrap()
            })
            .collect()
    }

    pub fn log_prob(&self, indices: &[usize]) -> f64 {
        self.heads
            .iter()
            .zip(indices)
            .map(|(p, &i)| p[i].max(1e-300).ln())
            .sum()
    }

    pub fn entropy(&self) -> f64 {
        self.heads
            .iter()
            .map(|p| -p.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum::<f64>())
            .sum()
    }
}

/// Hidden state of the recurrent trunk; zeroed at episode start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecurrentState(pub Array1<f64>);

impl RecurrentState {
    pub fn zeros(cfg: &NetworkConfig) -> Self {
        Self(Array1::zeros(cfg.recurrent_hidden))
    }
}

fn softmax(logits: &Array1<f64>) -> Array1<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exp: Array1<f64> = logits.mapv(|v| (v - max).exp());
    let sum = exp.sum();
    exp / sum
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Splits an observation into zero-padded entity tokens (rows).
pub fn tokenize(obs: &ObservationVector, token_width: usize) -> Array2<f64> {
    let mut tokens = Array2::zeros((obs.entity_slices.len(), token_width));
    for (t, block) in obs.blocks().enumerate() {
        for (j, &v) in block.iter().enumerate() {
            tokens[(t, j)] = v;
        }
    }
    tokens
}

/// Packs the global critic slots into a matrix, padding or truncating each
/// slot to `token_width`.
pub fn pack_global_tokens(tokens: &[Vec<f64>], token_width: usize) -> Array2<f64> {
    let mut out = Array2::zeros((tokens.len(), token_width));
    for (i, tok) in tokens.iter().enumerate() {
        for (j, &v) in tok.iter().take(token_width).enumerate() {
            out[(i, j)] = v;
        }
    }
    out
}

pub(crate) enum TrunkCache {
    Attention {
        q: Array2<f64>,
        k: Array2<f64>,
        v: Array2<f64>,
        probs: Array2<f64>,
    },
    Gru {
        x: Array1<f64>,
        h_prev: Array1<f64>,
        z: Array1<f64>,
        r: Array1<f64>,
        c: Array1<f64>,
    },
    Plain,
}

pub(crate) struct ActorCache {
    pub tokens: Array2<f64>,
    pub embedded: Array2<f64>,
    pub trunk: TrunkCache,
    pub trunk_out: Array1<f64>,
    pub hidden_out: Array1<f64>,
    pub probs: Vec<Array1<f64>>,
    pub h_next: Option<Array1<f64>>,
}

pub(crate) struct CriticCache {
    pub tokens: Array2<f64>,
    pub mask: Array1<f64>,
    pub embedded: Array2<f64>,
    pub pooled: Array1<f64>,
    pub hidden_out: Array1<f64>,
    pub value: f64,
}

fn embed_tokens(embed: &Linear, tokens: &Array2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros((tokens.nrows(), embed.b.len()));
    for (t, row) in tokens.axis_iter(Axis(0)).enumerate() {
        let a = embed.w.dot(&row) + &embed.b;
        out.row_mut(t).assign(&a.mapv(f64::tanh));
    }
    out
}

pub(crate) fn actor_forward(
    family: &PolicyFamily,
    kind: AircraftKind,
    obs: &ObservationVector,
    rnn: Option<&RecurrentState>,
) -> Result<ActorCache, RlError> {
    let cfg = &family.cfg;
    let idx = cfg.instance_index(kind);
    let spec = &cfg.instances[idx];
    if obs.len() != spec.obs_len() {
        return Err(RlError::ShapeMismatch(format!(
            "{} observation of length {} (want {})",
            cfg.policy,
            obs.len(),
            spec.obs_len()
        )));
    }
    if matches!(cfg.trunk, TrunkKind::Recurrent) != rnn.is_some() {
        return Err(RlError::ShapeMismatch(
            "recurrent state must be supplied exactly for recurrent trunks".into(),
        ));
    }
    let inst = &family.instances[idx];
    let tokens = tokenize(obs, cfg.token_width);
    let embedded = embed_tokens(&family.embed, &tokens);

    let (trunk, trunk_out, h_next) = match (&inst.trunk, cfg.trunk) {
        (TrunkParams::SelfAttention(att), TrunkKind::SelfAttention) => {
            let q = embedded.dot(&att.wq.t());
            let k = embedded.dot(&att.wk.t());
            let v = embedded.dot(&att.wv.t());
            let scale = 1.0 / (cfg.attention_dim as f64).sqrt();
            let scores = q.dot(&k.t()) * scale;
            let mut probs = Array2::zeros(scores.dim());
            for (i, row) in scores.axis_iter(Axis(0)).enumerate() {
                probs.row_mut(i).assign(&softmax(&row.to_owned()));
            }
            let mixed = probs.dot(&v);
            let pooled = mixed.mean_axis(Axis(0)).expect("at least one token");
            (TrunkCache::Attention { q, k, v, probs }, pooled, None)
        }
        (TrunkParams::Recurrent(gru), TrunkKind::Recurrent) => {
            let x = embedded.mean_axis(Axis(0)).expect("at least one token");
            let h_prev = rnn.expect("checked above").0.clone();
            if h_prev.len() != cfg.recurrent_hidden {
                return Err(RlError::ShapeMismatch("recurrent state width".into()));
            }
            let z = (gru.wz.dot(&x) + gru.uz.dot(&h_prev) + &gru.bz).mapv(sigmoid);
            let r = (gru.wr.dot(&x) + gru.ur.dot(&h_prev) + &gru.br).mapv(sigmoid);
            let c = (gru.wc.dot(&x) + gru.uc.dot(&(&r * &h_prev)) + &gru.bc).mapv(f64::tanh);
            let h_new = (1.0 - &z) * &h_prev + &z * &c;
            (
                TrunkCache::Gru { x, h_prev, z, r, c },
                h_new.clone(),
                Some(h_new),
            )
        }
        (TrunkParams::Plain, TrunkKind::Plain) => {
            let pooled = embedded.mean_axis(Axis(0)).expect("at least one token");
            (TrunkCache::Plain, pooled, None)
        }
        _ => return Err(RlError::ShapeMismatch("trunk kind mismatch".into())),
    };

    let hidden_out = inst.hidden.forward(&trunk_out).mapv(f64::tanh);
    let probs = inst
        .heads
        .iter()
        .map(|head| softmax(&head.forward(&hidden_out)))
        .collect();

    Ok(ActorCache { tokens, embedded, trunk, trunk_out, hidden_out, probs, h_next })
}

pub(crate) fn critic_forward(
    family: &PolicyFamily,
    kind: AircraftKind,
    global_tokens: &[Vec<f64>],
    mask: &[f64],
) -> Result<CriticCache, RlError> {
    let cfg = &family.cfg;
    if global_tokens.len() != cfg.critic_slots || mask.len() != cfg.critic_slots {
        return Err(RlError::ShapeMismatch(format!(
            "{} global slots (want {})",
            global_tokens.len(),
            cfg.critic_slots
        )));
    }
    let inst = &family.instances[cfg.instance_index(kind)];
    let tokens = pack_global_tokens(global_tokens, cfg.token_width);
    let mask = Array1::from_vec(mask.to_vec());
    let embedded = embed_tokens(&family.embed, &tokens);
    let count = mask.sum().max(1.0);
    let mut pooled = Array1::zeros(cfg.embed_dim);
    for (i, row) in embedded.axis_iter(Axis(0)).enumerate() {
        if mask[i] > 0.0 {
            pooled = pooled + row.to_owned() * mask[i];
        }
    }
    pooled /= count;
    let hidden_out = inst.critic_hidden.forward(&pooled).mapv(f64::tanh);
    let value = inst.critic_head.forward(&hidden_out)[0];
    Ok(CriticCache { tokens, mask, embedded, pooled, hidden_out, value })
}

/// Forward pass of one actor: action distribution plus, for recurrent
/// trunks, the advanced hidden state.
pub fn forward_actor(
    family: &PolicyFamily,
    kind: AircraftKind,
    obs: &ObservationVector,
    rnn: Option<&RecurrentState>,
) -> Result<(ActionDistribution, Option<RecurrentState>), RlError> {
    let cache = actor_forward(family, kind, obs, rnn)?;
    Ok((
        ActionDistribution { heads: cache.probs.clone() },
        cache.h_next.map(RecurrentState),
    ))
}

/// Scalar state value from the centralized critic.
pub fn forward_critic(
    family: &PolicyFamily,
    kind: AircraftKind,
    global_tokens: &[Vec<f64>],
    mask: &[f64],
) -> Result<f64, RlError> {
    Ok(critic_forward(family, kind, global_tokens, mask)?.value)
}

// ---------------------------------------------------------------------------
// Backward passes
// ---------------------------------------------------------------------------

fn outer_into(acc: &mut Array2<f64>, dy: &Array1<f64>, x: &Array1<f64>) {
    for (i, &d) in dy.iter().enumerate() {
        if d == 0.0 {
            continue;
        }
        let mut row = acc.row_mut(i);
        for (j, &xj) in x.iter().enumerate() {
            row[j] += d * xj;
        }
    }
}

/// Backward through the token embedding (shared layer); accumulates into
/// `grads.embed`. `d_embedded` holds dL/d(embedded rows).
fn embed_backward(
    embed: &Linear,
    grads_embed: &mut Linear,
    tokens: &Array2<f64>,
    embedded: &Array2<f64>,
    d_embedded: &Array2<f64>,
) {
    let _ = embed;
    for t in 0..tokens.nrows() {
        let u = embedded.row(t);
        let du = d_embedded.row(t);
        let da: Array1<f64> =
            du.iter().zip(u.iter()).map(|(&g, &y)| g * (1.0 - y * y)).collect();
        outer_into(&mut grads_embed.w, &da, &tokens.row(t).to_owned());
        grads_embed.b += &da;
    }
}

/// Backward through the actor given dL/d(logits) per head. Accumulates
/// parameter gradients; returns nothing (input gradients are not needed).
pub(crate) fn actor_backward(
    family: &PolicyFamily,
    grads: &mut PolicyFamily,
    kind: AircraftKind,
    cache: &ActorCache,
    d_logits: &[Array1<f64>],
) {
    let cfg = &family.cfg;
    let idx = cfg.instance_index(kind);
    let inst = &family.instances[idx];
    let ginst = &mut grads.instances[idx];

    // Heads.
    let mut d_hidden: Array1<f64> = Array1::zeros(cfg.hidden_dim);
    for ((head, ghead), dl) in inst.heads.iter().zip(ginst.heads.iter_mut()).zip(d_logits) {
        outer_into(&mut ghead.w, dl, &cache.hidden_out);
        ghead.b += dl;
        d_hidden = d_hidden + head.w.t().dot(dl);
    }

    // Hidden layer (tanh).
    let da: Array1<f64> = d_hidden
        .iter()
        .zip(cache.hidden_out.iter())
        .map(|(&g, &y)| g * (1.0 - y * y))
        .collect();
    outer_into(&mut ginst.hidden.w, &da, &cache.trunk_out);
    ginst.hidden.b += &da;
    let d_trunk_out = inst.hidden.w.t().dot(&da);

    // Trunk.
    let n_tokens = cache.tokens.nrows() as f64;
    let mut d_embedded = Array2::zeros(cache.embedded.dim());
    match (&inst.trunk, &cache.trunk, &mut ginst.trunk) {
        (
            TrunkParams::SelfAttention(att),
            TrunkCache::Attention { q, k, v, probs },
            TrunkParams::SelfAttention(gatt),
        ) => {
            // Mean pooling spreads the gradient evenly over token rows.
            let t_count = q.nrows();
            let mut d_mixed = Array2::zeros((t_count, cfg.attention_dim));
            for t in 0..t_count {
                d_mixed.row_mut(t).assign(&(&d_trunk_out / n_tokens));
            }
            let d_probs = d_mixed.dot(&v.t());
            let d_v = probs.t().dot(&d_mixed);
            // Row-wise softmax backward.
            let mut d_scores = Array2::zeros(probs.dim());
            for i in 0..t_count {
                let p = probs.row(i);
                let dp = d_probs.row(i);
                let dot: f64 = p.iter().zip(dp.iter()).map(|(&a, &b)| a * b).sum();
                for j in 0..t_count {
                    d_scores[(i, j)] = p[j] * (dp[j] - dot);
                }
            }
            let scale = 1.0 / (cfg.attention_dim as f64).sqrt();
            let d_q = d_scores.dot(k) * scale;
            let d_k = d_scores.t().dot(q) * scale;
            gatt.wq += &d_q.t().dot(&cache.embedded);
            gatt.wk += &d_k.t().dot(&cache.embedded);
            gatt.wv += &d_v.t().dot(&cache.embedded);
            d_embedded = d_embedded + d_q.dot(&att.wq) + d_k.dot(&att.wk) + d_v.dot(&att.wv);
        }
        (
            TrunkParams::Recurrent(gru),
            TrunkCache::Gru { x, h_prev, z, r, c },
            TrunkParams::Recurrent(ggru),
        ) => {
            // h' = (1 - z) * h_prev + z * c, stored hidden treated as input.
            let dh = &d_trunk_out;
            let dz_pre: Array1<f64> = dh
                .iter()
                .zip(c.iter())
                .zip(h_prev.iter())
                .zip(z.iter())
                .map(|(((&g, &ci), &hi), &zi)| g * (ci - hi) * zi * (1.0 - zi))
                .collect();
            let dc_pre: Array1<f64> = dh
                .iter()
                .zip(z.iter())
                .zip(c.iter())
                .map(|((&g, &zi), &ci)| g * zi * (1.0 - ci * ci))
                .collect();
            let d_rh = gru.uc.t().dot(&dc_pre);
            let dr_pre: Array1<f64> = d_rh
                .iter()
                .zip(h_prev.iter())
                .zip(r.iter())
                .map(|((&g, &hi), &ri)| g * hi * ri * (1.0 - ri))
                .collect();

            outer_into(&mut ggru.wz, &dz_pre, x);
            outer_into(&mut ggru.uz, &dz_pre, h_prev);
            ggru.bz += &dz_pre;
            outer_into(&mut ggru.wr, &dr_pre, x);
            outer_into(&mut ggru.ur, &dr_pre, h_prev);
            ggru.br += &dr_pre;
            outer_into(&mut ggru.wc, &dc_pre, x);
            let rh = r * h_prev;
            outer_into(&mut ggru.uc, &dc_pre, &rh);
            ggru.bc += &dc_pre;

            let dx = gru.wz.t().dot(&dz_pre) + gru.wr.t().dot(&dr_pre) + gru.wc.t().dot(&dc_pre);
            for t in 0..cache.tokens.nrows() {
                let mut row = d_embedded.row_mut(t);
                row += &(&dx / n_tokens);
            }
        }
        (TrunkParams::Plain, TrunkCache::Plain, TrunkParams::Plain) => {
            for t in 0..cache.tokens.nrows() {
                let mut row = d_embedded.row_mut(t);
                row += &(&d_trunk_out / n_tokens);
            }
        }
        _ => unreachable!("trunk cache matches trunk params by construction"),
    }

    embed_backward(&family.embed, &mut grads.embed, &cache.tokens, &cache.embedded, &d_embedded);
}

/// Backward through the critic given dL/d(value).
pub(crate) fn critic_backward(
    family: &PolicyFamily,
    grads: &mut PolicyFamily,
    kind: AircraftKind,
    cache: &CriticCache,
    d_value: f64,
) {
    let cfg = &family.cfg;
    let idx = cfg.instance_index(kind);
    let inst = &family.instances[idx];
    let ginst = &mut grads.instances[idx];

    let dv = Array1::from_vec(vec![d_value]);
    outer_into(&mut ginst.critic_head.w, &dv, &cache.hidden_out);
    ginst.critic_head.b += &dv;
    let d_hidden = inst.critic_head.w.t().dot(&dv);

    let da: Array1<f64> = d_hidden
        .iter()
        .zip(cache.hidden_out.iter())
        .map(|(&g, &y)| g * (1.0 - y * y))
        .collect();
    outer_into(&mut ginst.critic_hidden.w, &da, &cache.pooled);
    ginst.critic_hidden.b += &da;
    let d_pooled = inst.critic_hidden.w.t().dot(&da);

    let count = cache.mask.sum().max(1.0);
    let mut d_embedded = Array2::zeros(cache.embedded.dim());
    for i in 0..cache.tokens.nrows() {
        if cache.mask[i] > 0.0 {
            let mut row = d_embedded.row_mut(i);
            row += &(&d_pooled * (cache.mask[i] / count));
        }
    }
    embed_backward(&family.embed, &mut grads.embed, &cache.tokens, &cache.embedded, &d_embedded);
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn random_obs(spec: &InstanceSpec, rng: &mut ChaCha8Rng) -> ObservationVector {
        let mut features = Vec::new();
        let mut slices = Vec::new();
        for &w in &spec.block_widths {
            let start = features.len();
            for _ in 0..w {
                features.push(rng.gen_range(0.0..1.0));
            }
            slices.push(start..features.len());
        }
        ObservationVector {
            policy_kind: PolicyKind::Fight,
            features,
            entity_slices: slices,
        }
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let cfg = NetworkConfig::standard(PolicyKind::Fight);
        let mut a = PolicyFamily::init(cfg.clone(), 11);
        let b = PolicyFamily::init(cfg, 11);
        assert_eq!(a, b);
        let limit = 1.0; // far above any glorot bound used here
        a.visit_tensors_mut(|name, t| {
            assert!(
                t.iter().all(|v| v.is_finite() && v.abs() <= limit),
                "tensor {name} breaches the init bound"
            );
        });
    }

    #[test]
    fn distributions_normalize_for_all_trunks() {
        use rand::SeedableRng;
        for policy in [PolicyKind::Fight, PolicyKind::Escape, PolicyKind::Commander] {
            let cfg = NetworkConfig::standard(policy);
            let family = PolicyFamily::init(cfg.clone(), 3);
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            for trial in 0..20 {
                let spec = &cfg.instances[0];
                let obs = random_obs(spec, &mut rng);
                let rnn = matches!(cfg.trunk, TrunkKind::Recurrent)
                    .then(|| RecurrentState::zeros(&cfg));
                let (dist, _) =
                    forward_actor(&family, AircraftKind::Ac1, &obs, rnn.as_ref()).unwrap();
                for p in &dist.heads {
                    let sum: f64 = p.sum();
                    assert!((sum - 1.0).abs() < 1e-6, "{policy} trial {trial}: sum {sum}");
                    assert!(p.iter().all(|&v| v >= 0.0));
                }
            }
        }
    }

    #[test]
    fn zero_observation_still_yields_distribution() {
        let cfg = NetworkConfig::standard(PolicyKind::Escape);
        let family = PolicyFamily::init(cfg.clone(), 1);
        let spec = &cfg.instances[1];
        let obs = ObservationVector {
            policy_kind: PolicyKind::Escape,
            features: vec![0.0; spec.obs_len()],
            entity_slices: {
                let mut acc = 0;
                spec.block_widths
                    .iter()
                    .map(|&w| {
                        let r = acc..acc + w;
                        acc += w;
                        r
                    })
                    .collect()
            },
        };
        let (dist, _) = forward_actor(&family, AircraftKind::Ac2, &obs, None).unwrap();
        for p in dist.heads {
            assert!((p.sum() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn wrong_obs_length_is_rejected() {
        let cfg = NetworkConfig::standard(PolicyKind::Fight);
        let family = PolicyFamily::init(cfg, 1);
        let obs = ObservationVector {
            policy_kind: PolicyKind::Fight,
            features: vec![0.0; 5],
            entity_slices: vec![0..5],
        };
        assert!(forward_actor(&family, AircraftKind::Ac1, &obs, None).is_err());
    }

    #[test]
    fn permuting_identical_zero_tokens_is_invariant() {
        // Two zero-filled absent-entity blocks embed to identical tokens, so
        // swapping them cannot change the attention output.
        let cfg = NetworkConfig::standard(PolicyKind::Escape);
        let family = PolicyFamily::init(cfg.clone(), 9);
        let spec = cfg.instances[0].clone();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut obs = random_obs(&spec, &mut rng);
        // Zero both opponent blocks (slots 1 and 2 of the escape layout).
        for slot in [1, 2] {
            let r = obs.entity_slices[slot].clone();
            for v in &mut obs.features[r] {
                *v = 0.0;
            }
        }
        let (d1, _) = forward_actor(&family, AircraftKind::Ac1, &obs, None).unwrap();
        // Swap the two (identical) blocks.
        let r1 = obs.entity_slices[1].clone();
        let r2 = obs.entity_slices[2].clone();
        let b1: Vec<f64> = obs.features[r1.clone()].to_vec();
        let b2: Vec<f64> = obs.features[r2.clone()].to_vec();
        obs.features[r1].copy_from_slice(&b2);
        obs.features[r2].copy_from_slice(&b1);
        let (d2, _) = forward_actor(&family, AircraftKind::Ac1, &obs, None).unwrap();
        assert_eq!(d1.heads, d2.heads);
    }

    #[test]
    fn recurrent_output_depends_on_hidden_state() {
        let cfg = NetworkConfig::standard(PolicyKind::Commander);
        let family = PolicyFamily::init(cfg.clone(), 4);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let obs = random_obs(&cfg.instances[0], &mut rng);
        let zero = RecurrentState::zeros(&cfg);
        let other = RecurrentState(Array1::from_elem(cfg.recurrent_hidden, 0.5));
        let (d_zero, next) =
            forward_actor(&family, AircraftKind::Ac1, &obs, Some(&zero)).unwrap();
        let (d_other, _) =
            forward_actor(&family, AircraftKind::Ac1, &obs, Some(&other)).unwrap();
        assert_ne!(d_zero.heads, d_other.heads);
        assert!(next.is_some());
    }

    #[test]
    fn recurrent_reset_removes_cross_episode_leakage() {
        let cfg = NetworkConfig::standard(PolicyKind::Commander);
        let family = PolicyFamily::init(cfg.clone(), 4);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let inputs: Vec<ObservationVector> =
            (0..4).map(|_| random_obs(&cfg.instances[0], &mut rng)).collect();
        let run = || {
            let mut h = RecurrentState::zeros(&cfg);
            let mut outs = Vec::new();
            for obs in &inputs {
                let (d, next) =
                    forward_actor(&family, AircraftKind::Ac1, obs, Some(&h)).unwrap();
                h = next.unwrap();
                outs.push(d.heads);
            }
            outs
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn critic_masks_dead_slots() {
        let cfg = NetworkConfig::standard(PolicyKind::Fight);
        let family = PolicyFamily::init(cfg.clone(), 12);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut tokens: Vec<Vec<f64>> = (0..cfg.critic_slots)
            .map(|_| (0..GLOBAL_TOKEN_WIDTH).map(|_| rng.gen_range(0.0..1.0)).collect())
            .collect();
        let mut mask = vec![1.0; cfg.critic_slots];
        mask[3] = 0.0;
        let v1 = forward_critic(&family, AircraftKind::Ac1, &tokens, &mask).unwrap();
        assert!(v1.is_finite());
        // Rewriting the masked slot must not move the value.
        tokens[3] = vec![0.77; GLOBAL_TOKEN_WIDTH];
        let v2 = forward_critic(&family, AircraftKind::Ac1, &tokens, &mask).unwrap();
        assert_eq!(v1, v2);
        // Rewriting a live slot must.
        tokens[0] = vec![0.77; GLOBAL_TOKEN_WIDTH];
        let v3 = forward_critic(&family, AircraftKind::Ac1, &tokens, &mask).unwrap();
        assert_ne!(v1, v3);
    }

    #[test]
    fn sampling_matches_distribution() {
        let dist = ActionDistribution {
            heads: vec![
                Array1::from_vec(vec![0.0, 1.0, 0.0]),
                Array1::from_vec(vec![1.0 / 13.0; 13]),
            ],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (idx, lp) = dist.sample(&mut rng);
        assert_eq!(idx[0], 1, "one-hot head always picks its index");
        assert!((lp - (1.0f64 / 13.0).ln()).abs() < 1e-12, "one-hot adds zero log-prob");

        // Empirical frequencies over a biased binary head.
        let dist = ActionDistribution { heads: vec![Array1::from_vec(vec![0.25, 0.75])] };
        let mut ones = 0usize;
        let n = 100_000;
        for _ in 0..n {
            if dist.sample(&mut rng).0[0] == 1 {
                ones += 1;
            }
        }
        let freq = ones as f64 / n as f64;
        assert!((freq - 0.75).abs() < 0.006, "freq {freq}");
    }
}
