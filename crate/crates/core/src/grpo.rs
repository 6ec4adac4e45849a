//! Group relative policy optimisation on final-turn synthesis.

use rand::seq::index::sample as sample_indices;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fidelity::DecodeTable;
use crate::mclp::ContinuationScorer;
use crate::policy::{kl_and_grad, PolicyParams, Prompt, Rollout};
use crate::reward::{reward_group, RewardBreakdown, RewardConfig};
use crate::rng;
use crate::ta4::{Ta4Sequence, Transcript};
use crate::world::DialogueScene;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlMode {
    /// Exact categorical KL at each visited bucket.
    #[default]
    Exact,
    /// `r - 1 - ln r` at the sampled token, `r = pi_ref / pi`.
    Sampled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GrpoConfig {
    pub group_size: usize,
    pub clip_eps: f64,
    pub kl_coeff: f64,
    pub temperature: f64,
    pub learning_rate: f64,
    pub iterations: usize,
    /// Queries per iteration; 0 uses the whole dataset every iteration.
    pub queries_per_iter: usize,
    pub seed: u64,
    pub include_audio_history: bool,
    pub kl_mode: KlMode,
    /// Checkpoint period in iterations; 0 disables periodic checkpoints.
    pub checkpoint_every: usize,
    pub reward: RewardConfig,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        GrpoConfig {
            group_size: 8,
            clip_eps: 0.2,
            kl_coeff: 0.001,
            temperature: 1.0,
            learning_rate: 200.0,
            iterations: 50,
            queries_per_iter: 0,
            seed: 0,
            include_audio_history: true,
            kl_mode: KlMode::Exact,
            checkpoint_every: 0,
            reward: RewardConfig::default(),
        }
    }
}

impl GrpoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::ConfigInvalid(m.to_string()));
        if self.group_size < 2 {
            return bad("group_size must be at least 2");
        }
        // Values >= 1 are allowed so that clipping can be switched off.
        if !(self.clip_eps > 0.0) {
            return bad("clip_eps must be positive");
        }
        if !(self.kl_coeff >= 0.0) {
            return bad("kl_coeff must be >= 0");
        }
        if !(self.temperature > 0.0) {
            return bad("temperature must be positive");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and >= 0");
        }
        self.reward.validate()
    }
}

/// Final-turn synthesis task with its reference utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct RlQuery {
    pub query_id: String,
    pub prompt: Prompt,
    pub transcript: Transcript,
    pub z_gt: Ta4Sequence,
}

impl RlQuery {
    pub fn from_scene(scene: &DialogueScene, include_audio_history: bool) -> RlQuery {
        let last = scene.final_turn();
        RlQuery {
            query_id: scene.scene_id.clone(),
            prompt: Prompt::for_final_turn(scene, include_audio_history),
            transcript: last.transcript.clone(),
            z_gt: last.target.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupBatch {
    pub query_id: String,
    pub prompt: Prompt,
    pub rollouts: Vec<Rollout>,
    pub rewards: Vec<RewardBreakdown>,
    pub advantages: Vec<f64>,
}

const DEGENERATE_STD: f64 = 1e-8;

/// `(R - mean) / std` with the population standard deviation; all zeros
/// when the group's rewards are (numerically) constant.
pub fn normalize_advantages(rewards: &[f64]) -> Result<Vec<f64>> {
    if rewards.len() < 2 {
        return Err(Error::GroupTooSmall(rewards.len()));
    }
    let n = rewards.len() as f64;
    // Centre on a rough mean first: those differences are exact for nearly
    // constant groups, and the residual mean is then small enough to carry
    // separately instead of being rounded onto the reward grid.
    let rough = rewards.iter().sum::<f64>() / n;
    let dev: Vec<f64> = rewards.iter().map(|r| r - rough).collect();
    let shift = dev.iter().sum::<f64>() / n;
    let centred: Vec<f64> = dev.iter().map(|d| d - shift).collect();
    let std = (centred.iter().map(|c| c * c).sum::<f64>() / n).sqrt();
    if !(std >= DEGENERATE_STD) {
        return Ok(vec![0.0; rewards.len()]);
    }
    Ok(centred.iter().map(|c| c / std).collect())
}

/// Samples a group from the frozen policy and scores it.
pub fn collect_group(
    policy_old: &PolicyParams,
    query: &RlQuery,
    config: &GrpoConfig,
    scorer: &dyn ContinuationScorer,
    table: &DecodeTable,
    seed: u64,
) -> Result<GroupBatch> {
    let prompt = if config.include_audio_history {
        query.prompt.clone()
    } else {
        query.prompt.without_audio_history()
    };
    let rollouts = (0..config.group_size)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::stream(seed, &[0, i as u64]);
            policy_old.sample(&prompt, &query.transcript, config.temperature, &mut r)
        })
        .collect::<Result<Vec<_>>>()?;
    let seqs: Vec<Ta4Sequence> = rollouts.iter().map(|r| r.sequence.clone()).collect();
    let rewards = reward_group(
        &config.reward,
        &seqs,
        &query.z_gt,
        &query.transcript,
        scorer,
        table,
        rng::derive_seed(seed, &[1]),
    )?;
    let advantages = normalize_advantages(&rewards.iter().map(|b| b.reward).collect::<Vec<_>>())?;
    Ok(GroupBatch {
        query_id: query.query_id.clone(),
        prompt,
        rollouts,
        rewards,
        advantages,
    })
}

/// Loss value, its gradient, and diagnostics for a set of groups.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateOutput {
    pub loss: f64,
    pub grad: Vec<f64>,
    pub mean_kl: f64,
    pub clipped_frac: f64,
    /// Loss weight accumulated per bucket, used for step-size control.
    pub bucket_weight: Vec<f64>,
}

/// Negative clipped surrogate objective with a KL penalty to `ref_params`,
/// averaged over groups, then over rollouts, then over tokens.
pub fn surrogate_loss(
    params: &PolicyParams,
    batches: &[GroupBatch],
    ref_params: &PolicyParams,
    config: &GrpoConfig,
) -> Result<SurrogateOutput> {
    let av = params.audio_vocab();
    let mut grad = vec![0.0; params.theta().len()];
    let mut bucket_weight = vec![0.0; params.features.bucket_count];
    let mut loss = 0.0;
    let mut kl_sum = 0.0;
    let mut n_tokens = 0usize;
    let mut n_clipped = 0usize;
    let (lo, hi) = (1.0 - config.clip_eps, 1.0 + config.clip_eps);
    let n_groups = batches.len().max(1) as f64;
    let mut lp = vec![0.0; av];
    for batch in batches {
        let g = batch.rollouts.len() as f64;
        for (roll, &adv) in batch.rollouts.iter().zip(&batch.advantages) {
            let len = roll.per_token_logprob.len();
            if len == 0 {
                continue;
            }
            let w = 1.0 / (n_groups * g * len as f64);
            for ((&f, a), &old) in roll
                .feature_trace
                .iter()
                .zip(roll.sequence.audio_ids())
                .zip(&roll.per_token_logprob)
            {
                let a = a as usize;
                lp.copy_from_slice(&params.log_probs(f));
                let ratio = (lp[a] - old).exp();
                let unclipped = ratio * adv;
                let clipped = ratio.clamp(lo, hi) * adv;
                let surr = unclipped.min(clipped);
                let (kl, kl_grad) = match config.kl_mode {
                    KlMode::Exact => kl_and_grad(params, ref_params, f),
                    KlMode::Sampled => {
                        let log_r = ref_params.log_probs(f)[a] - lp[a];
                        let r = log_r.exp();
                        let scale = 1.0 - r;
                        let g: Vec<f64> = (0..av)
                            .map(|k| scale * (if k == a { 1.0 } else { 0.0 } - lp[k].exp()))
                            .collect();
                        (r - 1.0 - log_r, g)
                    }
                };
                loss -= w * (surr - config.kl_coeff * kl);
                kl_sum += kl;
                n_tokens += 1;
                bucket_weight[f] += w;
                let row = &mut grad[f * av..(f + 1) * av];
                if unclipped <= clipped {
                    // d(ratio)/d(theta) = ratio * d logpi.
                    let c = -w * adv * ratio;
                    for (k, gk) in row.iter_mut().enumerate() {
                        let onehot = if k == a { 1.0 } else { 0.0 };
                        *gk += c * (onehot - lp[k].exp());
                    }
                } else {
                    n_clipped += 1;
                }
                for (gk, kg) in row.iter_mut().zip(&kl_grad) {
                    *gk += w * config.kl_coeff * kg;
                }
            }
        }
    }
    if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFiniteLoss {
            stage: "grpo",
            step: 0,
            detail: format!("surrogate loss {loss}"),
        });
    }
    Ok(SurrogateOutput {
        loss,
        grad,
        mean_kl: if n_tokens > 0 { kl_sum / n_tokens as f64 } else { 0.0 },
        clipped_frac: if n_tokens > 0 {
            n_clipped as f64 / n_tokens as f64
        } else {
            0.0
        },
        bucket_weight,
    })
}

/// Step size for one update: the configured rate, capped by the inverse of
/// an upper bound on the KL penalty's curvature (softmax Fisher eigenvalues
/// never exceed 1/2) so that strong anchoring cannot make descent diverge.
pub fn effective_step(config: &GrpoConfig, bucket_weight: &[f64]) -> f64 {
    let w_max = bucket_weight.iter().cloned().fold(0.0, f64::max);
    let curvature = config.kl_coeff * 0.5 * w_max;
    if curvature > 0.0 {
        config.learning_rate.min(1.0 / curvature)
    } else {
        config.learning_rate
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrpoLogRow {
    pub iter: usize,
    pub mean_reward: f64,
    pub mean_mclp: f64,
    pub mean_cer: f64,
    pub gated_frac: f64,
    pub mean_kl: f64,
    pub loss: f64,
}

/// Rewards and advantages of one logged group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRecord {
    pub iter: usize,
    pub query_id: String,
    pub rewards: Vec<RewardBreakdown>,
    pub advantages: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrpoOutcome {
    pub params: PolicyParams,
    pub log: Vec<GrpoLogRow>,
    pub groups: Vec<GroupRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckpointEvent {
    /// Periodic checkpoint after this many completed iterations.
    Periodic(usize),
    /// Last finite parameters before training aborted.
    LastGood(usize),
}

pub fn grpo_train(
    policy_sft: &PolicyParams,
    dataset: &[RlQuery],
    config: &GrpoConfig,
    scorer: &dyn ContinuationScorer,
    table: &DecodeTable,
) -> Result<GrpoOutcome> {
    grpo_train_with(policy_sft, dataset, config, scorer, table, &mut |_, _| Ok(()))
}

/// Training loop; `sink` receives periodic and last-good checkpoints.
pub fn grpo_train_with(
    policy_sft: &PolicyParams,
    dataset: &[RlQuery],
    config: &GrpoConfig,
    scorer: &dyn ContinuationScorer,
    table: &DecodeTable,
    sink: &mut dyn FnMut(CheckpointEvent, &PolicyParams) -> Result<()>,
) -> Result<GrpoOutcome> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::ConfigInvalid("GRPO dataset is empty".into()));
    }
    let reference = policy_sft.clone();
    let mut params = policy_sft.clone();
    let mut log = Vec::with_capacity(config.iterations);
    let mut groups = Vec::new();
    for iter in 0..config.iterations {
        let picked: Vec<usize> =
            if config.queries_per_iter == 0 || config.queries_per_iter >= dataset.len() {
                (0..dataset.len()).collect()
            } else {
                let mut r = rng::stream(config.seed, &[0x7069_636b, iter as u64]);
                let mut v = sample_indices(&mut r, dataset.len(), config.queries_per_iter).into_vec();
                v.sort_unstable();
                v
            };
        let old = params.clone();
        let batches = picked
            .par_iter()
            .map(|&q| {
                let seed = rng::derive_seed(config.seed, &[iter as u64, q as u64]);
                collect_group(&old, &dataset[q], config, scorer, table, seed)
            })
            .collect::<Result<Vec<_>>>()?;
        let out = match surrogate_loss(&params, &batches, &reference, config) {
            Ok(o) => o,
            Err(Error::NonFiniteLoss { detail, .. }) => {
                sink(CheckpointEvent::LastGood(iter), &params)?;
                return Err(Error::NonFiniteLoss {
                    stage: "grpo",
                    step: iter,
                    detail,
                });
            }
            Err(e) => return Err(e),
        };
        let step = effective_step(config, &out.bucket_weight);
        let mut next = params.clone();
        for (t, g) in next.theta_mut().iter_mut().zip(&out.grad) {
            *t -= step * g;
        }
        if next.theta().iter().any(|t| !t.is_finite()) {
            sink(CheckpointEvent::LastGood(iter), &params)?;
            return Err(Error::NonFiniteLoss {
                stage: "grpo",
                step: iter,
                detail: "parameter update produced non-finite values".into(),
            });
        }
        params = next;

        let all: Vec<&RewardBreakdown> = batches.iter().flat_map(|b| &b.rewards).collect();
        let n = all.len() as f64;
        log.push(GrpoLogRow {
            iter: iter + 1,
            mean_reward: all.iter().map(|b| b.reward).sum::<f64>() / n,
            mean_mclp: all.iter().map(|b| b.mclp).sum::<f64>() / n,
            mean_cer: all.iter().map(|b| b.cer).sum::<f64>() / n,
            gated_frac: all.iter().filter(|b| b.gated).count() as f64 / n,
            mean_kl: out.mean_kl,
            loss: out.loss,
        });
        groups.extend(batches.into_iter().map(|b| GroupRecord {
            iter: iter + 1,
            query_id: b.query_id,
            rewards: b.rewards,
            advantages: b.advantages,
        }));
        if config.checkpoint_every > 0 && (iter + 1) % config.checkpoint_every == 0 {
            sink(CheckpointEvent::Periodic(iter + 1), &params)?;
        }
    }
    Ok(GrpoOutcome {
        params,
        log,
        groups,
    })
}
