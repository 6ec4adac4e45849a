//! Gated hybrid reward: style score from MCLP, content penalty from CER.

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::fidelity::{cer, DecodeTable};
use crate::mclp::{mclp, ContinuationScorer};
use crate::rng::{self, StreamRng};
use crate::ta4::{Ta4Sequence, Transcript};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardKind {
    /// `mclp + C - lambda * cer`, zeroed when `cer > tau`.
    #[default]
    Hybrid,
    /// `-lambda * cer`, never gated.
    ContentOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    #[serde(rename = "C")]
    pub c: f64,
    pub lambda: f64,
    #[serde(with = "extended_f64")]
    pub tau: f64,
    pub kind: RewardKind,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            c: 15.0,
            lambda: 10.0,
            tau: 0.2,
            kind: RewardKind::Hybrid,
        }
    }
}

impl RewardConfig {
    /// Style score only: no CER penalty and no gate.
    pub fn style_only() -> Self {
        RewardConfig {
            lambda: 0.0,
            tau: f64::INFINITY,
            ..Self::default()
        }
    }

    /// CER penalty only.
    pub fn content_only() -> Self {
        RewardConfig {
            tau: f64::INFINITY,
            kind: RewardKind::ContentOnly,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.c.is_finite() {
            return Err(Error::ConfigInvalid("C must be finite".into()));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::ConfigInvalid("lambda must be finite and >= 0".into()));
        }
        if !(self.tau > 0.0) {
            return Err(Error::ConfigInvalid("tau must be positive".into()));
        }
        Ok(())
    }
}

/// JSON has no infinity; `+inf` is written as the string "inf".
mod extended_f64 {
    use super::*;

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            Err(serde::ser::Error::custom("tau must not be negative infinity or NaN"))
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Str(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Str(s) if matches!(s.as_str(), "inf" | "+inf" | "infinity") => Ok(f64::INFINITY),
            Repr::Str(s) => Err(serde::de::Error::custom(format!("bad number {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub mclp: f64,
    pub cer: f64,
    pub r_style: f64,
    pub r_content: f64,
    pub gated: bool,
    pub reward: f64,
}

impl RewardBreakdown {
    /// Assembles a breakdown from the two measured quantities.
    pub fn assemble(config: &RewardConfig, mclp: f64, cer: f64) -> Self {
        let r_style = mclp + config.c;
        let r_content = config.lambda * cer;
        let gated = cer > config.tau;
        let reward = match (gated, config.kind) {
            (true, _) => 0.0,
            (false, RewardKind::Hybrid) => r_style - r_content,
            (false, RewardKind::ContentOnly) => -r_content,
        };
        RewardBreakdown {
            mclp,
            cer,
            r_style,
            r_content,
            gated,
            reward,
        }
    }
}

pub fn compute_reward(
    config: &RewardConfig,
    rollout: &Ta4Sequence,
    z_gt: &Ta4Sequence,
    w: &Transcript,
    scorer: &dyn ContinuationScorer,
    table: &DecodeTable,
    rng: &mut StreamRng,
) -> Result<RewardBreakdown> {
    if rollout.transcript() != *w {
        return Err(Error::TranscriptMismatch(
            "rollout text differs from the requested transcript".into(),
        ));
    }
    let score = mclp(scorer, rollout, z_gt, w)?;
    let hyp = table.decode(rollout, rng);
    let rate = cer(&hyp, w)?;
    Ok(RewardBreakdown::assemble(config, score.value, rate.value))
}

/// Rewards for a group; rollout `i` decodes with the substream `(seed, i)`.
#[allow(clippy::too_many_arguments)]
pub fn reward_group(
    config: &RewardConfig,
    rollouts: &[Ta4Sequence],
    z_gt: &Ta4Sequence,
    w: &Transcript,
    scorer: &dyn ContinuationScorer,
    table: &DecodeTable,
    seed: u64,
) -> Result<Vec<RewardBreakdown>> {
    if rollouts.is_empty() {
        return Err(Error::GroupTooSmall(0));
    }
    rollouts
        .par_iter()
        .enumerate()
        .map(|(i, r)| {
            let mut rng = rng::stream(seed, &[i as u64]);
            compute_reward(config, r, z_gt, w, scorer, table, &mut rng)
        })
        .collect()
}

/// One line of the per-rollout breakdown log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardLogRow {
    pub iter: usize,
    pub group_id: String,
    pub rollout_id: usize,
    #[serde(flatten)]
    pub breakdown: RewardBreakdown,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use crate::ta4::interleave;
    use crate::world::{StyleWorld, WorldConfig};
    use proptest::prelude::*;

    #[test]
    fn defaults_and_examples() {
        let c = RewardConfig::default();
        assert_eq!((c.c, c.lambda, c.tau), (15.0, 10.0, 0.2));
        let b = RewardBreakdown::assemble(&c, -4.7, 0.0);
        assert!((b.r_style - 10.3).abs() < 1e-12);
        assert_eq!(b.r_content, 0.0);
        assert!((b.reward - 10.3).abs() < 1e-12);
        let g = RewardBreakdown::assemble(&c, -1.0, 0.25);
        assert!(g.gated);
        assert_eq!(g.reward, 0.0);
        let edge = RewardBreakdown::assemble(&c, -1.0, 0.2);
        assert!(!edge.gated);
        assert!((edge.reward - (14.0 - 2.0)).abs() < 1e-12);
    }

    #[test]
    fn presets() {
        let s = RewardBreakdown::assemble(&RewardConfig::style_only(), -2.0, 3.0);
        assert!(!s.gated);
        assert_eq!(s.reward, 13.0);
        let c = RewardBreakdown::assemble(&RewardConfig::content_only(), -2.0, 0.5);
        assert!(!c.gated);
        assert_eq!(c.reward, -5.0);
    }

    #[test]
    fn infinite_tau_round_trips() {
        let c = RewardConfig::style_only();
        let s = serde_json::to_string(&c).unwrap();
        assert!(s.contains("\"inf\""));
        let back: RewardConfig = serde_json::from_str(&s).unwrap();
        assert_eq!(back, c);
        let d: RewardConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(d, RewardConfig::default());
    }

    fn setup() -> (StyleWorld, Transcript, Ta4Sequence, Vec<Ta4Sequence>) {
        let cfg = WorldConfig {
            decode_noise: 0.1,
            ..WorldConfig::default()
        };
        let world = StyleWorld::generate(&cfg, 3).unwrap();
        let w = Transcript::new(vec![1, 4, 2, 9, 0]);
        let mut rng = stream(1, &[]);
        let gt = world.sample_target(crate::world::StyleId(0), &w, &mut rng);
        let rollouts = (0..8)
            .map(|_| world.sample_target(crate::world::StyleId(1), &w, &mut rng))
            .collect();
        (world, w, gt, rollouts)
    }

    #[test]
    fn group_matches_single_recomputation() {
        let (world, w, gt, rollouts) = setup();
        let cfg = RewardConfig::default();
        let group = reward_group(&cfg, &rollouts, &gt, &w, world.oracle(), &world.decode, 11).unwrap();
        assert_eq!(group.len(), 8);
        for (i, r) in rollouts.iter().enumerate() {
            let single = compute_reward(
                &cfg,
                r,
                &gt,
                &w,
                world.oracle(),
                &world.decode,
                &mut stream(11, &[i as u64]),
            )
            .unwrap();
            assert_eq!(single, group[i]);
        }
    }

    #[test]
    fn identical_rollouts_without_noise_score_identically() {
        let (mut world, w, gt, rollouts) = setup();
        world.decode.noise = 0.0;
        let same = vec![rollouts[0].clone(); 8];
        let g = reward_group(&RewardConfig::default(), &same, &gt, &w, world.oracle(), &world.decode, 0)
            .unwrap();
        assert!(g.iter().all(|b| *b == g[0]));
    }

    #[test]
    fn transcript_mismatch_is_rejected() {
        let (world, _, gt, rollouts) = setup();
        let other = Transcript::new(vec![1, 4, 2, 9, 1]);
        let err = compute_reward(
            &RewardConfig::default(),
            &rollouts[0],
            &gt,
            &other,
            world.oracle(),
            &world.decode,
            &mut stream(0, &[]),
        );
        assert!(matches!(err, Err(Error::TranscriptMismatch(_))));
        let t = Transcript::new(vec![1]);
        let short = interleave(&t, &[0, 0, 0, 0]).unwrap();
        assert!(compute_reward(
            &RewardConfig::default(),
            &short,
            &gt,
            &t,
            world.oracle(),
            &world.decode,
            &mut stream(0, &[])
        )
        .is_err());
    }

    proptest! {
        #[test]
        fn gate_and_linearity(m in -20.0f64..0.0, c in 0.0f64..2.0, dm in 0.01f64..1.0, dc in 0.001f64..0.01) {
            let cfg = RewardConfig::default();
            let b = RewardBreakdown::assemble(&cfg, m, c);
            prop_assert_eq!(b.gated, c > cfg.tau);
            if b.gated {
                prop_assert_eq!(b.reward, 0.0);
            } else {
                prop_assert!((b.r_style - (m + cfg.c)).abs() < 1e-12);
                prop_assert!((b.r_content - cfg.lambda * c).abs() < 1e-12);
                let up = RewardBreakdown::assemble(&cfg, m + dm, c);
                prop_assert!(((up.reward - b.reward) / dm - 1.0).abs() < 1e-9);
                if c + dc <= cfg.tau {
                    let worse = RewardBreakdown::assemble(&cfg, m, c + dc);
                    prop_assert!(((worse.reward - b.reward) / dc + cfg.lambda).abs() < 1e-6);
                }
            }
        }
    }
}
