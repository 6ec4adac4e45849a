//! Evaluation: per-utterance metrics, win rate against MCLP differences, and
//! the reward ablation grid.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fidelity::{cer, DecodeTable};
use crate::grpo::{grpo_train, GrpoConfig, RlQuery};
use crate::mclp::mclp;
use crate::policy::{PolicyParams, Prompt};
use crate::reward::RewardConfig;
use crate::rng::{self, StreamRng};
use crate::ta4::{interleave, Ta4Sequence};
use crate::world::{oracle_style_similarity, sample_categorical, DialogueScene, OracleModel, StyleId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Regime {
    WithHistory,
    WithoutHistory,
}

impl Regime {
    pub const BOTH: [Regime; 2] = [Regime::WithHistory, Regime::WithoutHistory];

    pub fn prompt(self, scene: &DialogueScene) -> Prompt {
        Prompt::for_final_turn(scene, self == Regime::WithHistory)
    }
}

/// Something that produces a final-turn utterance for a scene.
pub trait System: Sync {
    fn name(&self) -> &str;

    fn generate(&self, scene: &DialogueScene, prompt: &Prompt, rng: &mut StreamRng)
        -> Result<Ta4Sequence>;
}

pub struct PolicySystem {
    pub name: String,
    pub params: PolicyParams,
    pub temperature: f64,
}

impl System for PolicySystem {
    fn name(&self) -> &str {
        &self.name
    }

    fn generate(
        &self,
        scene: &DialogueScene,
        prompt: &Prompt,
        rng: &mut StreamRng,
    ) -> Result<Ta4Sequence> {
        let t = &scene.final_turn().transcript;
        Ok(self.params.sample(prompt, t, self.temperature, rng)?.sequence)
    }
}

/// Returns the reference utterance itself.
pub struct GroundTruth;

impl System for GroundTruth {
    fn name(&self) -> &str {
        "ground_truth"
    }

    fn generate(&self, scene: &DialogueScene, _: &Prompt, _: &mut StreamRng) -> Result<Ta4Sequence> {
        Ok(scene.final_turn().target.clone())
    }
}

/// Uniformly random audio tokens.
pub struct UniformRandom {
    pub audio_vocab: u32,
}

impl System for UniformRandom {
    fn name(&self) -> &str {
        "uniform_random"
    }

    fn generate(
        &self,
        scene: &DialogueScene,
        _: &Prompt,
        rng: &mut StreamRng,
    ) -> Result<Ta4Sequence> {
        let t = &scene.final_turn().transcript;
        let audio: Vec<u32> = (0..t.len() * 4)
            .map(|_| rng.random_range(0..self.audio_vocab))
            .collect();
        interleave(t, &audio)
    }
}

/// Oracle-driven synthesiser that speaks in the speaker's true style with
/// probability `fidelity` per token and in a randomly chosen other style
/// otherwise. Spans the range of style quality for consistency analyses.
pub struct StyleMixture<'a> {
    pub name: String,
    pub model: &'a OracleModel,
    pub fidelity: f64,
}

impl System for StyleMixture<'_> {
    fn name(&self) -> &str {
        &self.name
    }

    fn generate(
        &self,
        scene: &DialogueScene,
        _: &Prompt,
        rng: &mut StreamRng,
    ) -> Result<Ta4Sequence> {
        let k = self.model.n_styles();
        let truth = scene
            .speaker_style(scene.n_turns() - 1)
            .ok_or_else(|| Error::MissingLabel(scene.scene_id.clone()))?;
        let other = if k > 1 {
            let o = rng.random_range(0..k - 1);
            StyleId(if o >= truth.0 { o + 1 } else { o })
        } else {
            truth
        };
        let t = &scene.final_turn().transcript;
        let mut prev = None;
        let mut audio = Vec::with_capacity(t.len() * 4);
        for &x in &t.text_ids {
            for _ in 0..4 {
                let s = if rng.random::<f64>() < self.fidelity {
                    truth
                } else {
                    other
                };
                let a = sample_categorical(self.model.emitter(s).row(x, prev), rng) as u32;
                audio.push(a);
                prev = Some(a);
            }
        }
        interleave(t, &audio)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub scene_id: String,
    pub system: String,
    pub regime: Regime,
    pub mclp: f64,
    pub cer: f64,
    /// Token-level error rate; equals `cer` on synthetic token transcripts.
    pub wer: f64,
    pub oracle_similarity: f64,
}

/// One sampled generation per test scene, scored against the reference.
pub fn evaluate_system(
    system: &dyn System,
    test_set: &[DialogueScene],
    regime: Regime,
    model: &OracleModel,
    table: &DecodeTable,
    seed: u64,
) -> Result<Vec<EvalRecord>> {
    test_set
        .par_iter()
        .enumerate()
        .map(|(i, scene)| {
            let mut gen_rng = rng::stream(seed, &[i as u64, 0]);
            let mut dec_rng = rng::stream(seed, &[i as u64, 1]);
            let prompt = regime.prompt(scene);
            let cand = system.generate(scene, &prompt, &mut gen_rng)?;
            let last = scene.final_turn();
            let score = mclp(model, &cand, &last.target, &last.transcript)?;
            let hyp = table.decode(&cand, &mut dec_rng);
            let c = cer(&hyp, &last.transcript)?.value;
            Ok(EvalRecord {
                scene_id: scene.scene_id.clone(),
                system: system.name().to_string(),
                regime,
                mclp: score.value,
                cer: c,
                wer: c,
                oracle_similarity: oracle_style_similarity(model, scene, &cand)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemSummary {
    pub system: String,
    pub regime: Regime,
    pub n: usize,
    pub cer: f64,
    pub wer: f64,
    pub mclp: f64,
    pub oracle_similarity: f64,
}

/// Mean metrics per (system, regime), in first-appearance order.
pub fn summarize(records: &[EvalRecord]) -> Vec<SystemSummary> {
    let mut order: Vec<(String, Regime)> = Vec::new();
    let mut acc: BTreeMap<(String, Regime), (usize, f64, f64, f64, f64)> = BTreeMap::new();
    for r in records {
        let key = (r.system.clone(), r.regime);
        let e = acc.entry(key.clone()).or_insert_with(|| {
            order.push(key);
            (0, 0.0, 0.0, 0.0, 0.0)
        });
        e.0 += 1;
        e.1 += r.cer;
        e.2 += r.wer;
        e.3 += r.mclp;
        e.4 += r.oracle_similarity;
    }
    order
        .into_iter()
        .map(|k| {
            let (n, c, w, m, s) = acc[&k];
            let d = n as f64;
            SystemSummary {
                system: k.0,
                regime: k.1,
                n,
                cer: c / d,
                wer: w / d,
                mclp: m / d,
                oracle_similarity: s / d,
            }
        })
        .collect()
}

/// An utterance's MCLP and its quality rating.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredUtterance {
    pub system: String,
    pub mclp: f64,
    pub quality: f64,
}

impl From<&EvalRecord> for ScoredUtterance {
    fn from(r: &EvalRecord) -> Self {
        ScoredUtterance {
            system: r.system.clone(),
            mclp: r.mclp,
            quality: r.oracle_similarity,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WinRateBin {
    pub bin_lo: f64,
    pub bin_hi: f64,
    pub n: usize,
    /// `None` for an empty bin.
    pub win_rate: Option<f64>,
    pub ci_lo: Option<f64>,
    pub ci_hi: Option<f64>,
}

pub const WINRATE_BINS: usize = 10;

/// Pairwise agreement between MCLP order and quality order, binned by
/// `|dMCLP|` into equal-width bins over the observed range.
pub fn winrate_analysis(points: &[ScoredUtterance], cross_system_only: bool) -> Result<Vec<WinRateBin>> {
    if points.len() < 2 {
        return Err(Error::TooFewRecords(points.len()));
    }
    let mut pairs: Vec<(f64, f64)> = Vec::new();
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            let (a, b) = (&points[i], &points[j]);
            if cross_system_only && a.system == b.system {
                continue;
            }
            let dm = a.mclp - b.mclp;
            if dm == 0.0 {
                continue;
            }
            let dq = a.quality - b.quality;
            let score = if dq == 0.0 {
                0.5
            } else if (dm > 0.0) == (dq > 0.0) {
                1.0
            } else {
                0.0
            };
            pairs.push((dm.abs(), score));
        }
    }
    if pairs.is_empty() {
        return Err(Error::TooFewRecords(points.len()));
    }
    let lo = pairs.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let hi = pairs.iter().map(|p| p.0).fold(0.0, f64::max);
    let width = (hi - lo) / WINRATE_BINS as f64;
    let mut sums = [(0usize, 0.0f64); WINRATE_BINS];
    for (d, s) in &pairs {
        let k = if width > 0.0 {
            (((d - lo) / width) as usize).min(WINRATE_BINS - 1)
        } else {
            0
        };
        sums[k].0 += 1;
        sums[k].1 += s;
    }
    Ok(sums
        .iter()
        .enumerate()
        .map(|(k, &(n, s))| {
            let (win_rate, ci_lo, ci_hi) = if n == 0 {
                (None, None, None)
            } else {
                let p = s / n as f64;
                let h = 1.96 * (p * (1.0 - p) / n as f64).sqrt();
                (Some(p), Some((p - h).max(0.0)), Some((p + h).min(1.0)))
            };
            WinRateBin {
                bin_lo: lo + width * k as f64,
                bin_hi: if k + 1 == WINRATE_BINS { hi } else { lo + width * (k + 1) as f64 },
                n,
                win_rate,
                ci_lo,
                ci_hi,
            }
        })
        .collect())
}

/// Weighted pool-adjacent-violators fit of a non-decreasing sequence.
pub fn isotonic_fit(values: &[f64], weights: &[f64]) -> Vec<f64> {
    let mut blocks: Vec<(f64, f64, usize)> = Vec::new();
    for (&v, &w) in values.iter().zip(weights) {
        blocks.push((v, w, 1));
        while blocks.len() > 1 {
            let (v2, w2, n2) = blocks[blocks.len() - 1];
            let (v1, w1, n1) = blocks[blocks.len() - 2];
            if v1 <= v2 {
                break;
            }
            blocks.truncate(blocks.len() - 2);
            let w = w1 + w2;
            let v = if w > 0.0 { (v1 * w1 + v2 * w2) / w } else { (v1 + v2) / 2.0 };
            blocks.push((v, w, n1 + n2));
        }
    }
    blocks
        .into_iter()
        .flat_map(|(v, _, n)| std::iter::repeat_n(v, n))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendTest {
    /// Weighted squared distance from the best non-decreasing fit.
    pub statistic: f64,
    pub p_value: f64,
    pub fitted: Vec<f64>,
}

impl TrendTest {
    pub fn non_decreasing_at(&self, alpha: f64) -> bool {
        self.p_value >= alpha
    }
}

fn trend_statistic(rates: &[f64], n: &[f64]) -> (f64, Vec<f64>) {
    let fitted = isotonic_fit(rates, n);
    let stat = rates
        .iter()
        .zip(&fitted)
        .zip(n)
        .map(|((r, f), w)| {
            let var = (f * (1.0 - f)).max(1e-4);
            w * (r - f) * (r - f) / var
        })
        .sum();
    (stat, fitted)
}

/// Tests the null hypothesis that win rate is non-decreasing in `|dMCLP|`.
///
/// The p-value is a parametric bootstrap under the isotonic fit with
/// binomial resampling of each non-empty bin.
pub fn isotonic_trend_test(bins: &[WinRateBin], n_boot: usize, seed: u64) -> TrendTest {
    let used: Vec<&WinRateBin> = bins.iter().filter(|b| b.n > 0).collect();
    let rates: Vec<f64> = used.iter().map(|b| b.win_rate.unwrap_or(0.5)).collect();
    let n: Vec<f64> = used.iter().map(|b| b.n as f64).collect();
    let (stat, fitted) = trend_statistic(&rates, &n);
    if stat <= 0.0 {
        return TrendTest {
            statistic: 0.0,
            p_value: 1.0,
            fitted,
        };
    }
    let mut exceed = 0usize;
    let mut r = rng::stream(seed, &[0x6973_6f]);
    for _ in 0..n_boot {
        let sim: Vec<f64> = fitted
            .iter()
            .zip(&used)
            .map(|(&p, b)| {
                let wins = (0..b.n).filter(|_| r.random::<f64>() < p).count();
                wins as f64 / b.n as f64
            })
            .collect();
        if trend_statistic(&sim, &n).0 >= stat {
            exceed += 1;
        }
    }
    TrendTest {
        statistic: stat,
        p_value: (exceed + 1) as f64 / (n_boot + 1) as f64,
        fitted,
    }
}

/// Trained systems and the metric table of the reward ablation.
#[derive(Debug, Clone)]
pub struct AblationReport {
    pub summaries: Vec<SystemSummary>,
    pub records: Vec<EvalRecord>,
    pub trained: Vec<(String, PolicyParams)>,
    pub logs: Vec<(String, Vec<crate::grpo::GrpoLogRow>)>,
}

impl AblationReport {
    pub fn get(&self, system: &str, regime: Regime) -> Option<&SystemSummary> {
        self.summaries
            .iter()
            .find(|s| s.system == system && s.regime == regime)
    }
}

pub const ABLATION_SYSTEMS: [&str; 4] = ["sft", "hybrid", "style_only", "content_only"];

/// Reward settings for the three trained ablation arms.
pub fn ablation_rewards(base: &RewardConfig) -> [(&'static str, RewardConfig); 3] {
    [
        ("hybrid", *base),
        (
            "style_only",
            RewardConfig {
                lambda: 0.0,
                tau: f64::INFINITY,
                ..*base
            },
        ),
        (
            "content_only",
            RewardConfig {
                tau: f64::INFINITY,
                kind: crate::reward::RewardKind::ContentOnly,
                ..*base
            },
        ),
    ]
}

/// Trains hybrid, style-only and content-only from one SFT snapshot and
/// evaluates all four policies in both history regimes.
pub fn ablation_grid(
    sft: &PolicyParams,
    rl_data: &[RlQuery],
    test_set: &[DialogueScene],
    base: &GrpoConfig,
    model: &OracleModel,
    table: &DecodeTable,
    eval_seed: u64,
) -> Result<AblationReport> {
    let mut trained = vec![("sft".to_string(), sft.clone())];
    let mut logs = Vec::new();
    for (name, reward) in ablation_rewards(&base.reward) {
        let cfg = GrpoConfig { reward, ..*base };
        let out = grpo_train(sft, rl_data, &cfg, model, table)?;
        trained.push((name.to_string(), out.params));
        logs.push((name.to_string(), out.log));
    }
    let mut records = Vec::new();
    for (name, params) in &trained {
        let sys = PolicySystem {
            name: name.clone(),
            params: params.clone(),
            temperature: 1.0,
        };
        for regime in Regime::BOTH {
            records.extend(evaluate_system(&sys, test_set, regime, model, table, eval_seed)?);
        }
    }
    Ok(AblationReport {
        summaries: summarize(&records),
        records,
        trained,
        logs,
    })
}
