//! Clipped-surrogate PPO: rollout buffer, generalized advantage estimation,
//! loss with exact gradients, and the Adam update loop.

use ndarray::Array1;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use aircombat_sim::aircraft::{AircraftId, AircraftKind};
use aircombat_sim::obs::ObservationVector;

use crate::error::RlError;
use crate::nn::{
    actor_backward, actor_forward, critic_backward, critic_forward, PolicyFamily, RecurrentState,
};

/// One (observation, action, reward, ...) record of the rollout buffer.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Transition {
    pub obs: ObservationVector,
    pub global_tokens: Vec<Vec<f64>>,
    pub global_mask: Vec<f64>,
    pub action: Vec<usize>,
    pub log_prob: f64,
    pub reward: f64,
    pub done: bool,
    pub value: f64,
    /// Hidden state the actor saw when the action was taken (recurrent only).
    pub rnn_state: Option<Vec<f64>>,
    pub agent: AircraftId,
    pub kind: AircraftKind,
}

/// Ordered transition store; experiences of all agents of one airframe type
/// pool here. Entire agent-episode segments are pushed contiguously, each
/// ending in `done`, which is what the advantage estimator relies on.
#[derive(Debug, Default)]
pub struct RolloutBuffer {
    pub transitions: Vec<Transition>,
}

impl RolloutBuffer {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn push_segment(&mut self, mut segment: Vec<Transition>) {
        if let Some(last) = segment.last_mut() {
            last.done = true;
        }
        self.transitions.append(&mut segment);
    }

    pub fn clear(&mut self) {
        self.transitions.clear();
    }
}

/// Generalized advantage estimation with episode-boundary truncation;
/// returns (advantages, returns) with `returns = advantages + values`.
pub fn compute_gae(buffer: &RolloutBuffer, gamma: f64, lambda: f64) -> (Vec<f64>, Vec<f64>) {
    let n = buffer.len();
    let mut advantages = vec![0.0; n];
    let mut next_value = 0.0;
    let mut next_adv = 0.0;
    for t in (0..n).rev() {
        let tr = &buffer.transitions[t];
        if tr.done {
            next_value = 0.0;
            next_adv = 0.0;
        }
        let delta = tr.reward + gamma * next_value - tr.value;
        let adv = delta + gamma * lambda * next_adv;
        advantages[t] = adv;
        next_value = tr.value;
        next_adv = adv;
    }
    let returns = advantages
        .iter()
        .zip(&buffer.transitions)
        .map(|(a, t)| a + t.value)
        .collect();
    (advantages, returns)
}

/// PPO hyperparameters and training-loop settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub master_seed: u64,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_epsilon: f64,
    pub learning_rate: f64,
    pub update_epochs: usize,
    pub minibatch_size: usize,
    /// Transitions gathered per instance before an update fires.
    pub batch_size: usize,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub max_grad_norm: f64,
    pub normalize_advantages: bool,
    pub episodes_per_level: usize,
    pub commander_episodes: usize,
    pub workers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            master_seed: 0,
            gamma: 0.95,
            gae_lambda: 0.95,
            clip_epsilon: 0.2,
            learning_rate: 1e-4,
            update_epochs: 10,
            minibatch_size: 256,
            batch_size: 2_000,
            entropy_coef: 0.01,
            value_coef: 0.5,
            max_grad_norm: 10.0,
            normalize_advantages: true,
            episodes_per_level: 10_000,
            commander_episodes: 5_000,
            workers: 1,
        }
    }
}

impl TrainConfig {
    /// High-level (commander) defaults: smaller batch per the protocol.
    pub fn commander_defaults() -> Self {
        Self { batch_size: 1_000, ..Self::default() }
    }

    pub fn from_json(json: &str) -> Result<Self, RlError> {
        serde_json::from_str(json).map_err(|e| RlError::InvalidConfig(e.to_string()))
    }
}

/// Loss statistics for one minibatch or epoch.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct LossStats {
    pub total: f64,
    pub actor: f64,
    pub value: f64,
    pub entropy: f64,
    pub mean_ratio: f64,
}

/// Clipped-surrogate loss over `idxs` of the buffer with exact analytic
/// gradients. Advantages and returns are indexed in buffer order.
pub fn loss_and_gradients(
    family: &PolicyFamily,
    kind: AircraftKind,
    buffer: &RolloutBuffer,
    idxs: &[usize],
    advantages: &[f64],
    returns: &[f64],
    cfg: &TrainConfig,
) -> Result<(LossStats, PolicyFamily), RlError> {
    let mut grads = family.zeros_like();
    let b = idxs.len() as f64;
    let mut stats = LossStats::default();

    for &i in idxs {
        let tr = &buffer.transitions[i];
        let rnn = tr.rnn_state.as_ref().map(|h| RecurrentState(Array1::from_vec(h.clone())));
        let cache = actor_forward(family, kind, &tr.obs, rnn.as_ref())?;

        let new_log_prob: f64 = cache
            .probs
            .iter()
            .zip(&tr.action)
            .map(|(p, &a)| p[a].max(1e-300).ln())
            .sum();
        let ratio = (new_log_prob - tr.log_prob).exp();
        let adv = advantages[i];
        let unclipped = ratio * adv;
        let clipped = ratio.clamp(1.0 - cfg.clip_epsilon, 1.0 + cfg.clip_epsilon) * adv;
        let surrogate = unclipped.min(clipped);
        stats.actor += -surrogate / b;
        stats.mean_ratio += ratio / b;
        // d(loss)/d(log pi) = -ratio * adv / b while the unclipped branch is
        // active; a binding clip stops the gradient.
        let d_log_prob = if unclipped <= clipped { -ratio * adv / b } else { 0.0 };

        let mut entropy = 0.0;
        let mut d_logits = Vec::with_capacity(cache.probs.len());
        for (p, &a) in cache.probs.iter().zip(&tr.action) {
            let h: f64 = -p.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum::<f64>();
            entropy += h;
            let mut dl = Array1::zeros(p.len());
            for j in 0..p.len() {
                let one_hot = if j == a { 1.0 } else { 0.0 };
                // log-prob path plus entropy bonus path.
                let d_lp = d_log_prob * (one_hot - p[j]);
                let d_ent = cfg.entropy_coef / b * p[j] * (p[j].max(1e-300).ln() + h);
                dl[j] = d_lp + d_ent;
            }
            d_logits.push(dl);
        }
        stats.entropy += entropy / b;
        actor_backward(family, &mut grads, kind, &cache, &d_logits);

        let ccache = critic_forward(family, kind, &tr.global_tokens, &tr.global_mask)?;
        let err = ccache.value - returns[i];
        stats.value += err * err / b;
        critic_backward(family, &mut grads, kind, &ccache, cfg.value_coef * 2.0 * err / b);
    }

    stats.total = stats.actor + cfg.value_coef * stats.value - cfg.entropy_coef * stats.entropy;
    if !stats.total.is_finite() {
        return Err(RlError::NonFiniteLoss(format!("{stats:?}")));
    }
    Ok((stats, grads))
}

/// Adam with per-tensor moment buffers, keyed by tensor name so the shared
/// embedding accumulates moments across both instances' updates.
#[derive(Debug, Default)]
pub struct Adam {
    pub step: u64,
    moments: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    pub fn apply(&mut self, params: &mut PolicyFamily, grads: &mut PolicyFamily, lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        let bias1 = 1.0 - Self::BETA1.powi(t);
        let bias2 = 1.0 - Self::BETA2.powi(t);

        // Collect gradients by name first, then walk the parameters.
        let mut grad_map: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        grads.visit_tensors_mut(|name, g| {
            grad_map.insert(name.to_string(), g.to_vec());
        });
        params.visit_tensors_mut(|name, p| {
            let g = &grad_map[name];
            let (m, v) = self
                .moments
                .entry(name.to_string())
                .or_insert_with(|| (vec![0.0; p.len()], vec![0.0; p.len()]));
            for i in 0..p.len() {
                m[i] = Self::BETA1 * m[i] + (1.0 - Self::BETA1) * g[i];
                v[i] = Self::BETA2 * v[i] + (1.0 - Self::BETA2) * g[i] * g[i];
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + Self::EPS);
            }
        });
    }
}

/// Rescales gradients to a global L2 norm cap; returns the pre-clip norm.
pub fn clip_grad_norm(grads: &mut PolicyFamily, max_norm: f64) -> f64 {
    let mut sq = 0.0;
    grads.visit_tensors_mut(|_, g| sq += g.iter().map(|v| v * v).sum::<f64>());
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        grads.visit_tensors_mut(|_, g| g.iter_mut().for_each(|v| *v *= scale));
    }
    norm
}

/// Statistics of one full PPO update round.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct UpdateStats {
    pub epochs: Vec<LossStats>,
    pub transitions: usize,
}

/// Runs K epochs of minibatched clipped-PPO updates over a full buffer,
/// stepping `family` in place through `adam`, then empties the buffer.
pub fn ppo_update(
    family: &mut PolicyFamily,
    kind: AircraftKind,
    buffer: &mut RolloutBuffer,
    cfg: &TrainConfig,
    adam: &mut Adam,
    rng: &mut ChaCha8Rng,
) -> Result<UpdateStats, RlError> {
    let (mut advantages, returns) = compute_gae(buffer, cfg.gamma, cfg.gae_lambda);
    if cfg.normalize_advantages && advantages.len() > 1 {
        let n = advantages.len() as f64;
        let mean = advantages.iter().sum::<f64>() / n;
        let var = advantages.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt().max(1e-8);
        for a in &mut advantages {
            *a = (*a - mean) / std;
        }
    }

    let mut stats = UpdateStats { transitions: buffer.len(), ..Default::default() };
    let mut order: Vec<usize> = (0..buffer.len()).collect();
    for _ in 0..cfg.update_epochs {
        order.shuffle(rng);
        let mut epoch = LossStats::default();
        let mut batches = 0.0;
        for chunk in order.chunks(cfg.minibatch_size.max(1)) {
            let (loss, mut grads) =
                loss_and_gradients(family, kind, buffer, chunk, &advantages, &returns, cfg)?;
            clip_grad_norm(&mut grads, cfg.max_grad_norm);
            adam.apply(family, &mut grads, cfg.learning_rate);
            epoch.total += loss.total;
            epoch.actor += loss.actor;
            epoch.value += loss.value;
            epoch.entropy += loss.entropy;
            epoch.mean_ratio += loss.mean_ratio;
            batches += 1.0;
        }
        if batches > 0.0 {
            epoch.total /= batches;
            epoch.actor /= batches;
            epoch.value /= batches;
            epoch.entropy /= batches;
            epoch.mean_ratio /= batches;
        }
        stats.epochs.push(epoch);
    }
    family.version += 1;
    buffer.clear();
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use aircombat_sim::obs::PolicyKind;
    use crate::nn::NetworkConfig;
    use rand::{Rng, SeedableRng};

    fn fake_transition(reward: f64, value: f64, done: bool) -> Transition {
        Transition {
            obs: ObservationVector {
                policy_kind: PolicyKind::Fight,
                features: vec![],
                entity_slices: vec![],
            },
            global_tokens: vec![],
            global_mask: vec![],
            action: vec![],
            log_prob: 0.0,
            reward,
            done,
            value,
            rnn_state: None,
            agent: AircraftId(0),
            kind: AircraftKind::Ac1,
        }
    }

    #[test]
    fn gae_single_terminal_step() {
        let mut buffer = RolloutBuffer::default();
        buffer.transitions.push(fake_transition(1.0, 0.0, true));
        let (adv, ret) = compute_gae(&buffer, 0.95, 0.95);
        assert_eq!(adv, vec![1.0]);
        assert_eq!(ret, vec![1.0]);
    }

    #[test]
    fn gae_gamma_zero_is_myopic() {
        let mut buffer = RolloutBuffer::default();
        for (r, v) in [(1.0, 0.3), (0.5, 0.1), (2.0, 0.7)] {
            buffer.transitions.push(fake_transition(r, v, false));
        }
        buffer.transitions.last_mut().unwrap().done = true;
        let (adv, _) = compute_gae(&buffer, 0.0, 0.7);
        assert!((adv[0] - (1.0 - 0.3)).abs() < 1e-12);
        assert!((adv[1] - (0.5 - 0.1)).abs() < 1e-12);
        assert!((adv[2] - (2.0 - 0.7)).abs() < 1e-12);
    }

    /// Brute-force definition: A_t = sum_{l>=0} (gamma*lambda)^l * delta_{t+l},
    /// truncated at the episode end.
    fn gae_oracle(rewards: &[f64], values: &[f64], dones: &[bool], gamma: f64, lambda: f64) -> Vec<f64> {
        let n = rewards.len();
        let mut adv = vec![0.0; n];
        for t in 0..n {
            let mut acc = 0.0;
            let mut w = 1.0;
            for l in t..n {
                let next_v = if dones[l] || l + 1 >= n { 0.0 } else { values[l + 1] };
                let delta = rewards[l] + gamma * next_v - values[l];
                acc += w * delta;
                if dones[l] {
                    break;
                }
                w *= gamma * lambda;
            }
            adv[t] = acc;
        }
        adv
    }

    #[test]
    fn gae_matches_bruteforce_recursion_on_random_traces() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..100 {
            let n = rng.gen_range(1..40);
            let mut buffer = RolloutBuffer::default();
            let mut rewards = Vec::new();
            let mut values = Vec::new();
            let mut dones = Vec::new();
            for i in 0..n {
                let r = rng.gen_range(-2.0..2.0);
                let v = rng.gen_range(-1.0..1.0);
                let d = i + 1 == n || rng.gen_bool(0.15);
                rewards.push(r);
                values.push(v);
                dones.push(d);
                buffer.transitions.push(fake_transition(r, v, d));
            }
            let gamma = rng.gen_range(0.0..1.0);
            let lambda = rng.gen_range(0.0..1.0);
            let (adv, ret) = compute_gae(&buffer, gamma, lambda);
            let oracle = gae_oracle(&rewards, &values, &dones, gamma, lambda);
            for t in 0..n {
                assert!(
                    (adv[t] - oracle[t]).abs() < 1e-9,
                    "t={t}: {} vs oracle {}",
                    adv[t],
                    oracle[t]
                );
                assert!((ret[t] - (adv[t] + values[t])).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn clip_grad_norm_rescales() {
        let cfg = NetworkConfig::tiny(PolicyKind::Escape);
        let family = PolicyFamily::init(cfg, 0);
        let mut grads = family.zeros_like();
        grads.visit_tensors_mut(|_, g| g.iter_mut().for_each(|v| *v = 1.0));
        let norm = clip_grad_norm(&mut grads, 1.0);
        assert!(norm > 1.0);
        let mut sq = 0.0;
        grads.visit_tensors_mut(|_, g| sq += g.iter().map(|v| v * v).sum::<f64>());
        assert!((sq.sqrt() - 1.0).abs() < 1e-9);
    }
}
