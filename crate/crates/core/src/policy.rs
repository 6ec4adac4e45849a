//! Feature-conditioned softmax policy over audio tokens.
//!
//! Text tokens are teacher-forced from the transcript; only audio tokens are
//! modelled. Each audio position is mapped to a feature bucket built from the
//! latest instruction token, the current text token, the previous audio token
//! and a one-token summary of the speaker's audio history.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::StreamRng;
use crate::ta4::{interleave, Ta4Sequence, Transcript, AUDIO_PER_TEXT};
use crate::world::DialogueScene;

pub const POLICY_VERSION: u32 = 1;

/// How a speaker's previous utterance is reduced to one history token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HistorySummary {
    /// The utterance's last audio token.
    #[default]
    LastToken,
    /// The utterance's most frequent audio token; ties go to the smaller id.
    ModeToken,
}

impl HistorySummary {
    pub fn summarize(self, audio: &Ta4Sequence) -> Option<u32> {
        match self {
            HistorySummary::LastToken => audio.audio_ids().last(),
            HistorySummary::ModeToken => {
                let mut counts = std::collections::BTreeMap::new();
                for a in audio.audio_ids() {
                    *counts.entry(a).or_insert(0usize) += 1;
                }
                counts
                    .into_iter()
                    .fold(None, |best: Option<(u32, usize)>, (a, c)| match best {
                        Some((_, bc)) if bc >= c => best,
                        _ => Some((a, c)),
                    })
                    .map(|(a, _)| a)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub instruction_vocab: u32,
    pub text_vocab: u32,
    pub audio_vocab: u32,
    pub bucket_count: usize,
    #[serde(default)]
    pub history: HistorySummary,
}

impl FeatureConfig {
    /// Size of the raw feature space before bucketing.
    pub fn raw_size(&self) -> usize {
        let a = self.audio_vocab as usize + 1;
        (self.instruction_vocab as usize + 1) * self.text_vocab as usize * a * a
    }

    /// True when every raw feature owns a bucket.
    pub fn is_exact(&self) -> bool {
        self.raw_size() <= self.bucket_count
    }

    pub fn bucket(
        &self,
        instruction: Option<u32>,
        text: u32,
        prev: Option<u32>,
        history: Option<u32>,
    ) -> usize {
        let a = self.audio_vocab as usize + 1;
        let i = instruction.map_or(self.instruction_vocab as usize, |v| v as usize);
        let p = prev.map_or(self.audio_vocab as usize, |v| v as usize);
        let h = history.map_or(self.audio_vocab as usize, |v| v as usize);
        let raw = ((i * self.text_vocab as usize + text as usize) * a + p) * a + h;
        if self.is_exact() {
            raw
        } else {
            (crate::rng::derive_seed(raw as u64, &[]) % self.bucket_count as u64) as usize
        }
    }

    fn validate(&self) -> Result<()> {
        if self.bucket_count == 0 || self.audio_vocab < 2 || self.text_vocab == 0 {
            return Err(Error::ConfigInvalid(
                "feature config needs buckets, text vocab and at least 2 audio tokens".into(),
            ));
        }
        Ok(())
    }
}

/// A prior turn as visible to the policy.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryTurn {
    pub speaker: usize,
    pub instruction: Vec<u32>,
    pub transcript: Transcript,
    /// Absent when audio history is withheld.
    pub audio: Option<Ta4Sequence>,
}

/// Conditioning context for one turn: scene, profiles, history, instruction.
#[derive(Debug, Clone, PartialEq)]
pub struct Prompt {
    pub scene_text: Vec<u32>,
    pub profiles: Vec<Vec<u32>>,
    pub history: Vec<HistoryTurn>,
    pub speaker: usize,
    pub instruction: Vec<u32>,
}

impl Prompt {
    /// Prompt for turn `j` of a scene, with prior turns as history.
    pub fn for_turn(scene: &DialogueScene, j: usize, include_audio_history: bool) -> Prompt {
        let history = scene.turns[..j]
            .iter()
            .map(|t| HistoryTurn {
                speaker: t.speaker,
                instruction: t.instruction.clone(),
                transcript: t.transcript.clone(),
                audio: include_audio_history.then(|| t.target.clone()),
            })
            .collect();
        let turn = &scene.turns[j];
        Prompt {
            scene_text: scene.spec.scene_text.clone(),
            profiles: scene.spec.profiles.clone(),
            history,
            speaker: turn.speaker,
            instruction: turn.instruction.clone(),
        }
    }

    pub fn for_final_turn(scene: &DialogueScene, include_audio_history: bool) -> Prompt {
        Prompt::for_turn(scene, scene.n_turns() - 1, include_audio_history)
    }

    /// Copy with all prior-turn audio removed.
    pub fn without_audio_history(&self) -> Prompt {
        let mut p = self.clone();
        p.history.iter_mut().for_each(|h| h.audio = None);
        p
    }

    /// Summary token of the speaker's most recent prior turn with audio.
    pub fn history_summary(&self, mode: HistorySummary) -> Option<u32> {
        self.history
            .iter()
            .rev()
            .filter(|h| h.speaker == self.speaker)
            .find_map(|h| h.audio.as_ref())
            .and_then(|a| mode.summarize(a))
    }
}

/// Policy parameters: one logit row per feature bucket.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub features: FeatureConfig,
    theta: Vec<f64>,
}

/// Sampled utterance with its old-policy likelihood trace.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub sequence: Ta4Sequence,
    pub per_token_logprob: Vec<f64>,
    pub feature_trace: Vec<usize>,
}

fn log_softmax_into(logits: &[f64], temperature: f64, out: &mut [f64]) {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max) / temperature;
    let z: f64 = logits.iter().map(|&l| (l / temperature - m).exp()).sum();
    let lz = m + z.ln();
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = l / temperature - lz;
    }
}

impl PolicyParams {
    pub fn zeros(features: FeatureConfig) -> Result<Self> {
        features.validate()?;
        Ok(PolicyParams {
            theta: vec![0.0; features.bucket_count * features.audio_vocab as usize],
            features,
        })
    }

    pub fn from_theta(features: FeatureConfig, theta: Vec<f64>) -> Result<Self> {
        features.validate()?;
        if theta.len() != features.bucket_count * features.audio_vocab as usize {
            return Err(Error::ConfigInvalid(format!(
                "theta has {} entries, expected {}",
                theta.len(),
                features.bucket_count * features.audio_vocab as usize
            )));
        }
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::ConfigInvalid("theta has non-finite entries".into()));
        }
        Ok(PolicyParams { features, theta })
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn theta_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    pub fn audio_vocab(&self) -> usize {
        self.features.audio_vocab as usize
    }

    pub fn row(&self, bucket: usize) -> &[f64] {
        let a = self.audio_vocab();
        &self.theta[bucket * a..(bucket + 1) * a]
    }

    pub fn row_mut(&mut self, bucket: usize) -> &mut [f64] {
        let a = self.audio_vocab();
        &mut self.theta[bucket * a..(bucket + 1) * a]
    }

    pub fn log_probs(&self, bucket: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.audio_vocab()];
        log_softmax_into(self.row(bucket), 1.0, &mut out);
        out
    }

    pub fn probs(&self, bucket: usize) -> Vec<f64> {
        self.log_probs(bucket).into_iter().map(f64::exp).collect()
    }

    /// Feature buckets visited while scoring `target` under `prompt`.
    pub fn feature_trace(&self, prompt: &Prompt, target: &Ta4Sequence) -> Vec<usize> {
        let instr = prompt.instruction.last().copied();
        let hist = prompt.history_summary(self.features.history);
        let mut prev = None;
        target
            .aligned_audio()
            .map(|(t, a)| {
                let f = self.features.bucket(instr, t, prev, hist);
                prev = Some(a);
                f
            })
            .collect()
    }

    /// Total and per-token log-probability of the target's audio tokens.
    pub fn logprob(&self, prompt: &Prompt, target: &Ta4Sequence) -> (f64, Vec<f64>) {
        let trace = self.feature_trace(prompt, target);
        let mut lp = vec![0.0; self.audio_vocab()];
        let per: Vec<f64> = trace
            .iter()
            .zip(target.audio_ids())
            .map(|(&f, a)| {
                log_softmax_into(self.row(f), 1.0, &mut lp);
                lp[a as usize]
            })
            .collect();
        (per.iter().sum(), per)
    }

    /// Adds `weight * d logprob / d theta` into `grad`.
    pub fn accumulate_logprob_grad(
        &self,
        prompt: &Prompt,
        target: &Ta4Sequence,
        weight: f64,
        grad: &mut [f64],
    ) {
        let trace = self.feature_trace(prompt, target);
        self.accumulate_trace_grad(&trace, target, weight, grad);
    }

    pub(crate) fn accumulate_trace_grad(
        &self,
        trace: &[usize],
        target: &Ta4Sequence,
        weight: f64,
        grad: &mut [f64],
    ) {
        let av = self.audio_vocab();
        let mut lp = vec![0.0; av];
        for (&f, a) in trace.iter().zip(target.audio_ids()) {
            log_softmax_into(self.row(f), 1.0, &mut lp);
            let g = &mut grad[f * av..(f + 1) * av];
            for (k, gk) in g.iter_mut().enumerate() {
                let onehot = if k == a as usize { 1.0 } else { 0.0 };
                *gk += weight * (onehot - lp[k].exp());
            }
        }
    }

    /// Gradient of the total log-probability with respect to theta.
    pub fn logprob_grad(&self, prompt: &Prompt, target: &Ta4Sequence) -> Vec<f64> {
        let mut grad = vec![0.0; self.theta.len()];
        self.accumulate_logprob_grad(prompt, target, 1.0, &mut grad);
        grad
    }

    /// Samples audio for a transcript; text is forced.
    pub fn sample(
        &self,
        prompt: &Prompt,
        transcript: &Transcript,
        temperature: f64,
        rng: &mut StreamRng,
    ) -> Result<Rollout> {
        if !(temperature > 0.0) {
            return Err(Error::ConfigInvalid("temperature must be positive".into()));
        }
        let instr = prompt.instruction.last().copied();
        let hist = prompt.history_summary(self.features.history);
        let av = self.audio_vocab();
        let n = transcript.len() * AUDIO_PER_TEXT;
        let mut audio = Vec::with_capacity(n);
        let mut per = Vec::with_capacity(n);
        let mut trace = Vec::with_capacity(n);
        let mut lp = vec![0.0; av];
        let mut lp_t = vec![0.0; av];
        let mut prev = None;
        for &t in &transcript.text_ids {
            for _ in 0..AUDIO_PER_TEXT {
                let f = self.features.bucket(instr, t, prev, hist);
                let row = self.row(f);
                log_softmax_into(row, 1.0, &mut lp);
                let draw_from = if temperature == 1.0 {
                    &lp
                } else {
                    log_softmax_into(row, temperature, &mut lp_t);
                    &lp_t
                };
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut a = av - 1;
                for (k, l) in draw_from.iter().enumerate() {
                    acc += l.exp();
                    if u < acc {
                        a = k;
                        break;
                    }
                }
                audio.push(a as u32);
                per.push(lp[a]);
                trace.push(f);
                prev = Some(a as u32);
            }
        }
        Ok(Rollout {
            sequence: interleave(transcript, &audio)?,
            per_token_logprob: per,
            feature_trace: trace,
        })
    }

    pub fn to_checkpoint(&self) -> PolicyCheckpoint {
        PolicyCheckpoint {
            version: POLICY_VERSION,
            feature_config: self.features,
            bucket_count: self.features.bucket_count,
            theta: self.theta.iter().map(|t| t.to_string()).collect(),
        }
    }

    pub fn from_checkpoint(ck: &PolicyCheckpoint) -> Result<Self> {
        if ck.version != POLICY_VERSION {
            return Err(Error::UnsupportedVersion {
                found: ck.version,
                expected: POLICY_VERSION,
            });
        }
        if ck.bucket_count != ck.feature_config.bucket_count {
            return Err(Error::ConfigInvalid("bucket_count disagrees with feature_config".into()));
        }
        let theta = ck
            .theta
            .iter()
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|e| Error::ConfigInvalid(format!("bad theta entry {s:?}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        PolicyParams::from_theta(ck.feature_config, theta)
    }

    pub fn save_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.to_checkpoint())?)
    }

    pub fn load_json(s: &str) -> Result<Self> {
        PolicyParams::from_checkpoint(&serde_json::from_str(s)?)
    }

    /// Euclidean distance between two parameter vectors.
    pub fn distance(&self, other: &PolicyParams) -> f64 {
        self.theta
            .iter()
            .zip(&other.theta)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyCheckpoint {
    pub version: u32,
    pub feature_config: FeatureConfig,
    pub bucket_count: usize,
    pub theta: Vec<String>,
}

/// Exact KL(p(.|f) || q(.|f)) over the audio vocabulary.
pub fn kl_token(p: &PolicyParams, q: &PolicyParams, feature: usize) -> f64 {
    let lp = p.log_probs(feature);
    let lq = q.log_probs(feature);
    lp.iter()
        .zip(&lq)
        .map(|(a, b)| a.exp() * (a - b))
        .sum::<f64>()
        .max(0.0)
}

/// Monte-Carlo KL estimate using the non-negative `r - 1 - ln r` estimator
/// with draws from `p`.
pub fn kl_token_sampled(
    p: &PolicyParams,
    q: &PolicyParams,
    feature: usize,
    n_samples: usize,
    rng: &mut StreamRng,
) -> f64 {
    let lp = p.log_probs(feature);
    let lq = q.log_probs(feature);
    let probs: Vec<f64> = lp.iter().map(|l| l.exp()).collect();
    let mut acc = 0.0;
    for _ in 0..n_samples {
        let a = crate::world::sample_categorical(&probs, rng);
        let log_r = lq[a] - lp[a];
        acc += log_r.exp() - 1.0 - log_r;
    }
    acc / n_samples.max(1) as f64
}

/// Exact KL and its gradient with respect to p's logits at one bucket.
pub(crate) fn kl_and_grad(p: &PolicyParams, q: &PolicyParams, feature: usize) -> (f64, Vec<f64>) {
    let lp = p.log_probs(feature);
    let lq = q.log_probs(feature);
    let kl: f64 = lp.iter().zip(&lq).map(|(a, b)| a.exp() * (a - b)).sum();
    let grad = lp
        .iter()
        .zip(&lq)
        .map(|(a, b)| a.exp() * ((a - b) - kl))
        .collect();
    (kl, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use proptest::prelude::*;
    use rand::Rng;

    fn fc(buckets: usize) -> FeatureConfig {
        FeatureConfig {
            instruction_vocab: 3,
            text_vocab: 4,
            audio_vocab: 8,
            bucket_count: buckets,
            history: Default::default(),
        }
    }

    fn prompt(instr: u32) -> Prompt {
        Prompt {
            scene_text: vec![0],
            profiles: vec![vec![1]],
            history: Vec::new(),
            speaker: 0,
            instruction: vec![instr],
        }
    }

    fn random_params(buckets: usize, seed: u64) -> PolicyParams {
        let mut rng = stream(seed, &[]);
        let f = fc(buckets);
        let theta = (0..buckets * 8).map(|_| rng.random_range(-2.0..2.0)).collect();
        PolicyParams::from_theta(f, theta).unwrap()
    }

    fn random_target(seed: u64, len: usize) -> Ta4Sequence {
        let mut rng = stream(seed, &[1]);
        let t = Transcript::new((0..len).map(|_| rng.random_range(0..4)).collect());
        let a: Vec<u32> = (0..len * 4).map(|_| rng.random_range(0..8)).collect();
        interleave(&t, &a).unwrap()
    }

    #[test]
    fn uniform_theta_gives_log_one_eighth() {
        let p = PolicyParams::zeros(fc(64)).unwrap();
        let target = random_target(0, 1);
        let (total, per) = p.logprob(&prompt(0), &target);
        assert_eq!(per.len(), 4);
        assert!((total - 4.0 * (1.0f64 / 8.0).ln()).abs() < 1e-12);
    }

    fn saturated(f: FeatureConfig) -> PolicyParams {
        let mut p = PolicyParams::zeros(f).unwrap();
        for b in 0..f.bucket_count {
            p.row_mut(b)[b % 8] = 50.0;
        }
        p
    }

    fn modal_target(p: &PolicyParams, pr: &Prompt, t: &Transcript) -> Ta4Sequence {
        let instr = pr.instruction.last().copied();
        let mut prev = None;
        let mut audio = Vec::new();
        for &x in &t.text_ids {
            for _ in 0..4 {
                let f = p.features.bucket(instr, x, prev, None);
                let a = (f % 8) as u32;
                audio.push(a);
                prev = Some(a);
            }
        }
        interleave(t, &audio).unwrap()
    }

    #[test]
    fn saturated_softmax_modal_path() {
        let f = fc(fc(1).raw_size());
        let p = saturated(f);
        let pr = prompt(1);
        let t = Transcript::new(vec![0, 3, 2]);
        let target = modal_target(&p, &pr, &t);
        let (_, per) = p.logprob(&pr, &target);
        assert!(per.iter().all(|&l| l > -1e-6));
        let g = p.logprob_grad(&pr, &target);
        let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(norm < 1e-6);
        let mut hits = 0;
        for i in 0..1000 {
            let r = p.sample(&pr, &t, 1.0, &mut stream(i, &[])).unwrap();
            if r.sequence == target {
                hits += 1;
            }
        }
        assert!(hits >= 999);
    }

    #[test]
    fn logprob_matches_explicit_softmax() {
        for seed in 0..20 {
            let p = random_params(fc(1).raw_size(), seed);
            let pr = prompt((seed % 3) as u32);
            let target = random_target(seed, 3);
            let (total, per) = p.logprob(&pr, &target);
            let mut prev = None;
            let mut acc = 0.0;
            for (i, (t, a)) in target.aligned_audio().enumerate() {
                let f = p.features.bucket(Some((seed % 3) as u32), t, prev, None);
                let row = p.row(f);
                let z: f64 = row.iter().map(|x| x.exp()).sum();
                let l = (row[a as usize].exp() / z).ln();
                assert!((per[i] - l).abs() < 1e-12);
                acc += l;
                prev = Some(a);
            }
            assert!((total - acc).abs() < 1e-10);
        }
    }

    #[test]
    fn gradient_rows_sum_to_zero() {
        let p = random_params(64, 3);
        let g = p.logprob_grad(&prompt(2), &random_target(3, 5));
        for row in g.chunks(8) {
            assert!(row.iter().sum::<f64>().abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for seed in 0..10 {
            let mut p = random_params(32, seed);
            let pr = prompt(1);
            let target = random_target(seed + 100, 3);
            let g = p.logprob_grad(&pr, &target);
            for idx in 0..p.theta.len() {
                let orig = p.theta[idx];
                p.theta[idx] = orig + 1e-4;
                let up = p.logprob(&pr, &target).0;
                p.theta[idx] = orig - 1e-4;
                let down = p.logprob(&pr, &target).0;
                p.theta[idx] = orig;
                let fd = (up - down) / 2e-4;
                assert!((fd - g[idx]).abs() <= 1e-5 * fd.abs().max(1.0), "{fd} vs {}", g[idx]);
            }
        }
    }

    #[test]
    fn sampling_is_deterministic_and_consistent() {
        let p = random_params(64, 9);
        let pr = prompt(0);
        let t = Transcript::new(vec![1, 2, 3, 0]);
        let a = p.sample(&pr, &t, 1.0, &mut stream(5, &[])).unwrap();
        let b = p.sample(&pr, &t, 1.0, &mut stream(5, &[])).unwrap();
        assert_eq!(a, b);
        let (_, per) = p.logprob(&pr, &a.sequence);
        assert_eq!(per, a.per_token_logprob);
        assert_eq!(a.feature_trace, p.feature_trace(&pr, &a.sequence));
        assert_eq!(a.sequence.transcript(), t);
    }

    #[test]
    fn empirical_frequencies_match_softmax() {
        let f = fc(fc(1).raw_size());
        let mut rng = stream(2, &[]);
        let theta = (0..f.bucket_count * 8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let p = PolicyParams::from_theta(f, theta).unwrap();
        let pr = prompt(0);
        let t = Transcript::new(vec![2]);
        let bucket = f.bucket(Some(0), 2, None, None);
        let probs = p.probs(bucket);
        let n = 10_000;
        let mut counts = [0usize; 8];
        for i in 0..n {
            let r = p.sample(&pr, &t, 1.0, &mut stream(i, &[7])).unwrap();
            counts[r.sequence.audio_ids().next().unwrap() as usize] += 1;
        }
        for k in 0..8 {
            let sd = (n as f64 * probs[k] * (1.0 - probs[k])).sqrt();
            assert!((counts[k] as f64 - n as f64 * probs[k]).abs() <= 3.0 * sd + 1.0);
        }
    }

    #[test]
    fn kl_examples() {
        let f = fc(4);
        let u = PolicyParams::zeros(f).unwrap();
        assert_eq!(kl_token(&u, &u, 0), 0.0);
        let mut d = PolicyParams::zeros(f).unwrap();
        d.row_mut(0)[3] = 6.0;
        let probs = d.probs(0);
        let h: f64 = -probs.iter().map(|p| p * p.ln()).sum::<f64>();
        let closed = 8f64.ln() - h;
        assert!((kl_token(&d, &u, 0) - closed).abs() < 1e-12);
        let est = kl_token_sampled(&d, &u, 0, 20_000, &mut stream(1, &[]));
        assert!((est - closed).abs() < 0.05 * closed);
    }

    #[test]
    fn checkpoint_round_trip_is_bit_stable() {
        let p = random_params(16, 4);
        let s = p.save_json().unwrap();
        let q = PolicyParams::load_json(&s).unwrap();
        assert_eq!(p, q);
        assert_eq!(s, q.save_json().unwrap());
    }

    #[test]
    fn history_summary_uses_same_speaker() {
        let t = Transcript::new(vec![1]);
        let seq = |a: u32| interleave(&t, &[0, 0, 0, a]).unwrap();
        let mut pr = prompt(0);
        pr.history = vec![
            HistoryTurn {
                speaker: 0,
                instruction: vec![],
                transcript: t.clone(),
                audio: Some(seq(5)),
            },
            HistoryTurn {
                speaker: 1,
                instruction: vec![],
                transcript: t.clone(),
                audio: Some(seq(6)),
            },
        ];
        assert_eq!(pr.history_summary(HistorySummary::LastToken), Some(5));
        assert_eq!(pr.without_audio_history().history_summary(HistorySummary::LastToken), None);
        let t3 = Transcript::new(vec![1, 2]);
        let a = interleave(&t3, &[4, 4, 2, 2, 7, 2, 4, 1]).unwrap();
        assert_eq!(HistorySummary::ModeToken.summarize(&a), Some(2));
        assert_eq!(HistorySummary::LastToken.summarize(&a), Some(1));
    }

    proptest! {
        #[test]
        fn kl_is_nonnegative(seed in 0u64..10_000) {
            let p = random_params(4, seed);
            let q = random_params(4, seed + 1);
            for b in 0..4 {
                prop_assert!(kl_token(&p, &q, b) >= 0.0);
            }
        }

        #[test]
        fn softmax_rows_normalise(seed in 0u64..10_000) {
            let p = random_params(8, seed);
            for b in 0..8 {
                prop_assert!((p.probs(b).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }
}
