//! Mean continuation log-probability.
//!
//! A candidate utterance is placed in a context `[w, z_eval, w]` and the
//! scorer's mean log-likelihood of the reference utterance's audio tokens is
//! read off. Under a scorer that is the exact data distribution the expected
//! score equals minus the per-token conditional entropy of the reference
//! given the candidate, which [`conditional_entropy_oracle`] verifies by
//! enumeration.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ta4::{interleave, Marker, Ta4Sequence, Token, Transcript};
use crate::world::{ContextSegment, OracleModel, StyleId};

/// Any autoregressive model that can score the audio tokens of a target
/// given a segmented context.
pub trait ContinuationScorer: Sync {
    /// One log-probability per audio token of `target`, in order.
    fn audio_logprobs(&self, context: &[ContextSegment], target: &Ta4Sequence) -> Vec<f64>;
}

impl ContinuationScorer for OracleModel {
    fn audio_logprobs(&self, context: &[ContextSegment], target: &Ta4Sequence) -> Vec<f64> {
        self.oracle_logprob(context, target)
    }
}

/// The history `[w, z_eval, w]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuationContext {
    segments: [ContextSegment; 3],
}

impl ContinuationContext {
    pub fn new(z_eval: &Ta4Sequence, w: &Transcript) -> Result<Self> {
        if z_eval.transcript() != *w {
            return Err(Error::TranscriptMismatch(
                "candidate transcript differs from w".into(),
            ));
        }
        Ok(ContinuationContext {
            segments: [
                ContextSegment::Text(w.clone()),
                ContextSegment::Audio(z_eval.clone()),
                ContextSegment::Text(w.clone()),
            ],
        })
    }

    pub fn segments(&self) -> &[ContextSegment] {
        &self.segments
    }

    /// Flat token view with SEP markers between the three segments.
    pub fn tokens(&self) -> Vec<Token> {
        let mut out = Vec::new();
        for (i, seg) in self.segments.iter().enumerate() {
            if i > 0 {
                out.push(Token::Marker(Marker::Sep));
            }
            match seg {
                ContextSegment::Text(t) => out.extend(t.text_ids.iter().map(|&x| Token::Text(x))),
                ContextSegment::Audio(s) => out.extend_from_slice(s.tokens()),
                ContextSegment::Instruction(_) => {}
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MclpScore {
    /// Mean log-probability over the reference's audio tokens.
    pub value: f64,
    pub n_audio_tokens: usize,
}

/// Scores `z_gt` given the context `[w, z_eval, w]`.
pub fn mclp(
    scorer: &dyn ContinuationScorer,
    z_eval: &Ta4Sequence,
    z_gt: &Ta4Sequence,
    w: &Transcript,
) -> Result<MclpScore> {
    if z_gt.n_audio() == 0 {
        return Err(Error::EmptyTarget);
    }
    if z_gt.transcript() != *w {
        return Err(Error::TranscriptMismatch(
            "reference transcript differs from w".into(),
        ));
    }
    let ctx = ContinuationContext::new(z_eval, w)?;
    let lps = scorer.audio_logprobs(ctx.segments(), z_gt);
    let n = lps.len();
    Ok(MclpScore {
        value: lps.iter().sum::<f64>() / n as f64,
        n_audio_tokens: n,
    })
}

/// Element `(i, j)` scores candidate `i` against reference `j`.
pub fn mclp_matrix(
    scorer: &dyn ContinuationScorer,
    candidates: &[Ta4Sequence],
    references: &[Ta4Sequence],
    w: &Transcript,
) -> Result<Vec<Vec<MclpScore>>> {
    candidates
        .par_iter()
        .map(|c| references.iter().map(|r| mclp(scorer, c, r, w)).collect())
        .collect()
}

/// Style-conditional generator of evaluation audio, used by the
/// enumeration oracle.
pub trait EvalGenerator: Sync {
    /// `P(audio | style, text, prev_audio)`.
    fn prob(&self, style: StyleId, text: u32, prev: Option<u32>, audio: u32) -> f64;
}

/// The world's own emitters.
pub struct TrueGenerator<'a>(pub &'a OracleModel);

impl EvalGenerator for TrueGenerator<'_> {
    fn prob(&self, style: StyleId, text: u32, prev: Option<u32>, audio: u32) -> f64 {
        self.0.emitter(style).row(text, prev)[audio as usize]
    }
}

/// Uniform audio regardless of style.
pub struct UniformGenerator {
    pub audio_vocab: u32,
}

impl EvalGenerator for UniformGenerator {
    fn prob(&self, _: StyleId, _: u32, _: Option<u32>, _: u32) -> f64 {
        1.0 / self.audio_vocab as f64
    }
}

/// Exact information quantities of an enumerable instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntropyReport {
    /// `H(Z_gt | Z_eval, W)` in nats, per audio token of the reference.
    pub conditional_entropy: f64,
    /// `H(Z_gt | W)` per audio token.
    pub marginal_entropy: f64,
    /// `I(Z_eval; Z_gt | W)` per audio token.
    pub mutual_information: f64,
    /// Expected MCLP under the joint law, scored by the oracle.
    pub expected_mclp: f64,
    pub n_audio_tokens: usize,
}

pub const MAX_ENUM_STYLES: usize = 3;
pub const MAX_ENUM_AUDIO_VOCAB: u32 = 3;
pub const MAX_ENUM_AUDIO_TOKENS: usize = 8;
pub const MAX_ENUM_TRANSCRIPTS: usize = 64;

fn all_audio(n: usize, vocab: u32) -> Vec<Vec<u32>> {
    let total = (vocab as usize).pow(n as u32);
    (0..total)
        .map(|mut i| {
            let mut v = vec![0u32; n];
            for slot in v.iter_mut().rev() {
                *slot = (i % vocab as usize) as u32;
                i /= vocab as usize;
            }
            v
        })
        .collect()
}

fn seq_prob(p: impl Fn(u32, Option<u32>, u32) -> f64, w: &Transcript, audio: &[u32]) -> f64 {
    let mut prev = None;
    let mut acc = 1.0;
    for (k, &a) in audio.iter().enumerate() {
        acc *= p(w.text_ids[k / 4], prev, a);
        prev = Some(a);
    }
    acc
}

/// Enumerates every `(z_eval, z_gt)` pair for every transcript of the given
/// length (uniform over transcripts) under the joint law
/// `s ~ prior, z_eval ~ eval(.|s, w), z_gt ~ world(.|s, w)`.
///
/// Entropies come from the joint probabilities directly; the expected MCLP
/// is computed by calling [`mclp`] with the world model as scorer on every
/// pair.
pub fn conditional_entropy_oracle(
    model: &OracleModel,
    transcript_length: usize,
    eval: &dyn EvalGenerator,
) -> Result<EntropyReport> {
    let vocab = model.vocab();
    let k = model.n_styles();
    let n_audio = 4 * transcript_length;
    let n_transcripts = (vocab.text as usize).checked_pow(transcript_length as u32);
    if k > MAX_ENUM_STYLES
        || vocab.audio > MAX_ENUM_AUDIO_VOCAB
        || n_audio > MAX_ENUM_AUDIO_TOKENS
        || transcript_length == 0
        || n_transcripts.map_or(true, |n| n > MAX_ENUM_TRANSCRIPTS)
    {
        return Err(Error::InstanceTooLarge(format!(
            "{k} styles, audio vocab {}, {n_audio} audio tokens, text vocab {}",
            vocab.audio, vocab.text
        )));
    }
    let n_transcripts = n_transcripts.unwrap();
    let audios = all_audio(n_audio, vocab.audio);
    let prior = model.prior();

    let mut cond_h = 0.0;
    let mut marg_h = 0.0;
    let mut e_mclp = 0.0;
    for ti in 0..n_transcripts {
        let mut text = vec![0u32; transcript_length];
        let mut r = ti;
        for slot in text.iter_mut().rev() {
            *slot = (r % vocab.text as usize) as u32;
            r /= vocab.text as usize;
        }
        let w = Transcript::new(text);
        let weight = 1.0 / n_transcripts as f64;
        // q[s][ze], p[s][zg]
        let q: Vec<Vec<f64>> = (0..k)
            .map(|s| {
                audios
                    .iter()
                    .map(|z| seq_prob(|t, pr, a| eval.prob(StyleId(s), t, pr, a), &w, z))
                    .collect()
            })
            .collect();
        let p: Vec<Vec<f64>> = (0..k)
            .map(|s| {
                let e = model.emitter(StyleId(s));
                audios
                    .iter()
                    .map(|z| seq_prob(|t, pr, a| e.row(t, pr)[a as usize], &w, z))
                    .collect()
            })
            .collect();
        let seqs: Vec<Ta4Sequence> = audios
            .iter()
            .map(|z| interleave(&w, z))
            .collect::<Result<_>>()?;

        for zg in 0..audios.len() {
            let pg: f64 = (0..k).map(|s| prior[s] * p[s][zg]).sum();
            if pg > 0.0 {
                marg_h -= weight * pg * pg.ln();
            }
        }

        let per_eval: Vec<(f64, f64)> = (0..audios.len())
            .into_par_iter()
            .map(|ze| {
                let pe: f64 = (0..k).map(|s| prior[s] * q[s][ze]).sum();
                if pe <= 0.0 {
                    return Ok((0.0, 0.0));
                }
                let mut h = 0.0;
                let mut m = 0.0;
                for zg in 0..audios.len() {
                    let joint: f64 = (0..k).map(|s| prior[s] * q[s][ze] * p[s][zg]).sum();
                    if joint <= 0.0 {
                        continue;
                    }
                    h -= joint * (joint / pe).ln();
                    m += joint * mclp(model, &seqs[ze], &seqs[zg], &w)?.value;
                }
                Ok((h, m))
            })
            .collect::<Result<_>>()?;
        for (h, m) in per_eval {
            cond_h += weight * h;
            e_mclp += weight * m;
        }
    }
    let n = n_audio as f64;
    Ok(EntropyReport {
        conditional_entropy: cond_h / n,
        marginal_entropy: marg_h / n,
        mutual_information: (marg_h - cond_h) / n,
        expected_mclp: e_mclp,
        n_audio_tokens: n_audio,
    })
}

/// One candidate/reference pair in batch scoring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MclpRow {
    pub pair_id: usize,
    pub mclp: f64,
    pub n_audio_tokens: usize,
}

/// Scores line-aligned candidate and reference JSONL streams (TA4 record
/// schema); `w` is taken from each reference.
pub fn mclp_batch(
    scorer: &dyn ContinuationScorer,
    candidates_jsonl: &str,
    references_jsonl: &str,
) -> Result<Vec<MclpRow>> {
    let parse = |s: &str| -> Result<Vec<Ta4Sequence>> {
        s.lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str::<Ta4Sequence>(l).map_err(|e| Error::MalformedLine {
                    line: i + 1,
                    reason: e.to_string(),
                })
            })
            .collect()
    };
    let cands = parse(candidates_jsonl)?;
    let refs = parse(references_jsonl)?;
    if cands.len() != refs.len() {
        return Err(Error::ConfigInvalid(format!(
            "{} candidates vs {} references",
            cands.len(),
            refs.len()
        )));
    }
    cands
        .par_iter()
        .zip(refs.par_iter())
        .enumerate()
        .map(|(i, (c, r))| {
            let s = mclp(scorer, c, r, &r.transcript())?;
            Ok(MclpRow {
                pair_id: i,
                mclp: s.value,
                n_audio_tokens: s.n_audio_tokens,
            })
        })
        .collect()
}
