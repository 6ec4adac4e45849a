//! The synthetic generative world: latent styles, their audio emitters and
//! instruction tables, scene sampling, and the exact Bayesian mixture model
//! used as the pretrained density estimator.
//!
//! Each style `s` owns a conditional table `P(audio | s, text, prev_audio)`
//! where `prev_audio` resets to a start state at every BOS. The oracle model
//! treats any observed context as evidence about one latent style and mixes
//! the style emitters with the resulting posterior.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fidelity::DecodeTable;
use crate::rng::{self, StreamRng};
use crate::ta4::{interleave, Ta4Sequence, Transcript, Vocab};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StyleId(pub usize);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    pub n_styles: usize,
    pub text_vocab: u32,
    pub audio_vocab: u32,
    pub instruction_vocab: u32,
    /// Symmetric Dirichlet concentration of each emission row.
    pub emission_concentration: f64,
    /// Symmetric Dirichlet concentration of each instruction row.
    pub instruction_concentration: f64,
    /// Minimum total-variation distance between the row-averaged emission
    /// distributions of any two styles.
    pub separation_floor: f64,
    /// Additive floor mixed into every row before renormalisation.
    pub smoothing: f64,
    /// Inclusive transcript length range.
    pub transcript_len: [usize; 2],
    pub instruction_len: usize,
    pub profile_len: usize,
    pub scene_text_len: usize,
    pub max_turns: usize,
    /// Styles the oracle classifier labels as neutral.
    pub neutral_styles: Vec<usize>,
    /// Per-token replacement probability of the oracle decoder.
    pub decode_noise: f64,
    /// When set, every style row is `(1 - w) * content + w * accent`, where
    /// the content rows are shared by all styles and the accent rows are
    /// style specific. When unset, style rows are drawn independently.
    pub accent_weight: Option<f64>,
    /// Symmetric Dirichlet concentration of the accent rows.
    pub accent_concentration: f64,
    /// Extra probability every style puts on instruction token 0, which then
    /// carries little style evidence.
    pub generic_instruction_weight: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            n_styles: 2,
            text_vocab: 16,
            audio_vocab: 8,
            instruction_vocab: 8,
            emission_concentration: 0.3,
            instruction_concentration: 1.0,
            separation_floor: 0.2,
            smoothing: 1e-6,
            transcript_len: [4, 14],
            instruction_len: 2,
            profile_len: 3,
            scene_text_len: 3,
            max_turns: 10,
            neutral_styles: Vec::new(),
            decode_noise: 0.0,
            accent_weight: None,
            accent_concentration: 1.0,
            generic_instruction_weight: 0.0,
        }
    }
}

impl WorldConfig {
    pub fn vocab(&self) -> Vocab {
        Vocab {
            text: self.text_vocab,
            audio: self.audio_vocab,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::ConfigInvalid(m.to_string()));
        if self.n_styles == 0 {
            return bad("n_styles must be at least 1");
        }
        if self.text_vocab < 2 || self.audio_vocab < 2 || self.instruction_vocab < 2 {
            return bad("vocabulary sizes must be at least 2");
        }
        if !(self.emission_concentration > 0.0 && self.instruction_concentration > 0.0) {
            return bad("Dirichlet concentrations must be positive");
        }
        if !(self.smoothing > 0.0 && self.smoothing < 1.0) {
            return bad("smoothing must lie in (0, 1)");
        }
        if !(0.0..1.0).contains(&self.separation_floor) {
            return bad("separation_floor must lie in [0, 1)");
        }
        if self.transcript_len[0] == 0 || self.transcript_len[0] > self.transcript_len[1] {
            return bad("transcript_len must be a non-empty range of positive lengths");
        }
        if self.profile_len == 0 || self.max_turns == 0 {
            return bad("profile_len and max_turns must be positive");
        }
        if !(0.0..=1.0).contains(&self.decode_noise) {
            return bad("decode_noise must lie in [0, 1]");
        }
        if let Some(w) = self.accent_weight {
            if !(0.0..=1.0).contains(&w) {
                return bad("accent_weight must lie in [0, 1]");
            }
        }
        if !(0.0..1.0).contains(&self.generic_instruction_weight) {
            return bad("generic_instruction_weight must lie in [0, 1)");
        }
        if !(self.accent_concentration > 0.0) {
            return bad("accent_concentration must be positive");
        }
        if self.neutral_styles.iter().any(|&s| s >= self.n_styles) {
            return bad("neutral_styles references an unknown style");
        }
        Ok(())
    }
}

/// One style's conditional audio-emission table.
#[derive(Debug, Clone, PartialEq)]
pub struct StyleEmitter {
    pub style: StyleId,
    text_vocab: usize,
    audio_vocab: usize,
    probs: Vec<f64>,
    log_probs: Vec<f64>,
}

impl StyleEmitter {
    pub fn new(style: StyleId, text_vocab: usize, audio_vocab: usize, probs: Vec<f64>) -> Self {
        let log_probs = probs.iter().map(|p| p.ln()).collect();
        StyleEmitter {
            style,
            text_vocab,
            audio_vocab,
            probs,
            log_probs,
        }
    }

    /// Number of previous-audio states, including the start state.
    pub fn n_prev(&self) -> usize {
        self.audio_vocab + 1
    }

    fn offset(&self, text: u32, prev: Option<u32>) -> usize {
        let p = prev.map_or(self.audio_vocab, |a| a as usize);
        (text as usize * self.n_prev() + p) * self.audio_vocab
    }

    pub fn row(&self, text: u32, prev: Option<u32>) -> &[f64] {
        let o = self.offset(text, prev);
        &self.probs[o..o + self.audio_vocab]
    }

    pub fn log_row(&self, text: u32, prev: Option<u32>) -> &[f64] {
        let o = self.offset(text, prev);
        &self.log_probs[o..o + self.audio_vocab]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.probs.chunks(self.audio_vocab)
    }

    /// Log-likelihood of the audio tokens of one sequence under this style.
    pub fn sequence_loglik(&self, seq: &Ta4Sequence) -> f64 {
        let mut prev = None;
        let mut acc = 0.0;
        for (t, a) in seq.aligned_audio() {
            acc += self.log_row(t, prev)[a as usize];
            prev = Some(a);
        }
        acc
    }

    /// Samples the audio for a transcript, starting from the start state.
    pub fn sample_audio(&self, transcript: &Transcript, rng: &mut StreamRng) -> Vec<u32> {
        let mut prev = None;
        let mut out = Vec::with_capacity(transcript.len() * 4);
        for &t in &transcript.text_ids {
            for _ in 0..4 {
                let a = sample_categorical(self.row(t, prev), rng) as u32;
                out.push(a);
                prev = Some(a);
            }
        }
        out
    }

    /// Mean of all conditional rows.
    pub fn row_average(&self) -> Vec<f64> {
        let mut avg = vec![0.0; self.audio_vocab];
        let mut n = 0usize;
        for row in self.rows() {
            for (a, p) in avg.iter_mut().zip(row) {
                *a += p;
            }
            n += 1;
        }
        avg.iter_mut().for_each(|a| *a /= n as f64);
        avg
    }
}

pub(crate) fn sample_categorical(probs: &[f64], rng: &mut StreamRng) -> usize {
    let u: f64 = rng.random::<f64>() * probs.iter().sum::<f64>();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Piece of conditioning context seen by the oracle model.
#[derive(Debug, Clone, PartialEq)]
pub enum ContextSegment {
    /// Scene, profile or turn instruction tokens.
    Instruction(Vec<u32>),
    /// Transcript text; carries no style evidence.
    Text(Transcript),
    Audio(Ta4Sequence),
}

/// The exact mixture density over styles.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleModel {
    prior: Vec<f64>,
    emitters: Vec<StyleEmitter>,
    instruction: Vec<Vec<f64>>,
    log_instruction: Vec<Vec<f64>>,
    vocab: Vocab,
    instruction_vocab: u32,
}

/// Log-space style posterior that can absorb evidence incrementally.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorState {
    log_w: Vec<f64>,
}

impl PosteriorState {
    pub fn probs(&self) -> Vec<f64> {
        let m = self.log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if m == f64::NEG_INFINITY {
            return vec![1.0 / self.log_w.len() as f64; self.log_w.len()];
        }
        let w: Vec<f64> = self.log_w.iter().map(|l| (l - m).exp()).collect();
        let z: f64 = w.iter().sum();
        w.into_iter().map(|x| x / z).collect()
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_w
    }
}

fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.map(|x| (x - m).exp()).sum::<f64>().ln()
}

impl OracleModel {
    pub fn new(
        prior: Vec<f64>,
        emitters: Vec<StyleEmitter>,
        instruction: Vec<Vec<f64>>,
        vocab: Vocab,
        instruction_vocab: u32,
    ) -> Self {
        let log_instruction = instruction
            .iter()
            .map(|r| r.iter().map(|p| p.ln()).collect())
            .collect();
        OracleModel {
            prior,
            emitters,
            instruction,
            log_instruction,
            vocab,
            instruction_vocab,
        }
    }

    pub fn n_styles(&self) -> usize {
        self.prior.len()
    }

    pub fn vocab(&self) -> Vocab {
        self.vocab
    }

    pub fn instruction_vocab(&self) -> u32 {
        self.instruction_vocab
    }

    pub fn prior(&self) -> &[f64] {
        &self.prior
    }

    pub fn emitter(&self, s: StyleId) -> &StyleEmitter {
        &self.emitters[s.0]
    }

    pub fn emitters(&self) -> &[StyleEmitter] {
        &self.emitters
    }

    pub fn instruction_row(&self, s: StyleId) -> &[f64] {
        &self.instruction[s.0]
    }

    pub fn start_state(&self) -> PosteriorState {
        PosteriorState {
            log_w: self.prior.iter().map(|p| p.ln()).collect(),
        }
    }

    pub fn observe(&self, state: &mut PosteriorState, segment: &ContextSegment) {
        match segment {
            ContextSegment::Text(_) => {}
            ContextSegment::Instruction(toks) => {
                for (s, lw) in state.log_w.iter_mut().enumerate() {
                    *lw += toks
                        .iter()
                        .map(|&i| self.log_instruction[s][i as usize])
                        .sum::<f64>();
                }
            }
            ContextSegment::Audio(seq) => {
                for (lw, e) in state.log_w.iter_mut().zip(&self.emitters) {
                    *lw += e.sequence_loglik(seq);
                }
            }
        }
    }

    pub fn state_after(&self, context: &[ContextSegment]) -> PosteriorState {
        let mut st = self.start_state();
        for seg in context {
            self.observe(&mut st, seg);
        }
        st
    }

    /// Bayes posterior over styles given every context segment.
    pub fn style_posterior(&self, context: &[ContextSegment]) -> Vec<f64> {
        self.state_after(context).probs()
    }

    /// Per-audio-token mixture log-probabilities of `target` given a
    /// posterior state; text tokens of the target are teacher-forced.
    pub fn continue_logprobs(&self, state: &PosteriorState, target: &Ta4Sequence) -> Vec<f64> {
        let k = self.n_styles();
        let mut lw = state.log_w.clone();
        let mut out = Vec::with_capacity(target.n_audio());
        let mut prev = None;
        let mut terms = vec![0.0; k];
        for (t, a) in target.aligned_audio() {
            let mut norm = log_sum_exp(lw.iter().copied());
            if norm == f64::NEG_INFINITY {
                // Context impossible under every style: fall back to the prior.
                lw = self.prior.iter().map(|p| p.ln()).collect();
                norm = 0.0;
            }
            for s in 0..k {
                let l = self.emitters[s].log_row(t, prev)[a as usize];
                terms[s] = lw[s] - norm + l;
                lw[s] += l;
            }
            out.push(log_sum_exp(terms.iter().copied()));
            prev = Some(a);
        }
        out
    }

    /// Exact per-token log-probabilities of the target's audio given the
    /// context.
    pub fn oracle_logprob(&self, context: &[ContextSegment], target: &Ta4Sequence) -> Vec<f64> {
        self.continue_logprobs(&self.state_after(context), target)
    }

    pub fn to_checkpoint(&self, config: &WorldConfig) -> WorldCheckpoint {
        let enc = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
        WorldCheckpoint {
            version: CHECKPOINT_VERSION,
            config: config.clone(),
            prior: enc(&self.prior),
            emitters: self.emitters.iter().map(|e| enc(&e.probs)).collect(),
            instruction_tables: self.instruction.iter().map(|r| enc(r)).collect(),
        }
    }
}

/// Style posterior given the context (free-function form).
pub fn style_posterior(model: &OracleModel, context: &[ContextSegment]) -> Vec<f64> {
    model.style_posterior(context)
}

/// Per-token oracle log-probabilities (free-function form).
pub fn oracle_logprob(
    model: &OracleModel,
    context: &[ContextSegment],
    target: &Ta4Sequence,
) -> Vec<f64> {
    model.oracle_logprob(context, target)
}

/// Versioned JSON checkpoint with probabilities as decimal strings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldCheckpoint {
    pub version: u32,
    pub config: WorldConfig,
    pub prior: Vec<String>,
    pub emitters: Vec<Vec<String>>,
    pub instruction_tables: Vec<Vec<String>>,
}

/// The synthetic environment: model, decoder and sampling configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct StyleWorld {
    pub config: WorldConfig,
    pub model: OracleModel,
    pub decode: DecodeTable,
}

fn dirichlet_row(n: usize, alpha: f64, rng: &mut StreamRng) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("positive concentration");
    let mut row: Vec<f64> = (0..n).map(|_| gamma.sample(rng)).collect();
    let sum: f64 = row.iter().sum();
    if !(sum > 0.0) || !sum.is_finite() {
        row.iter_mut().for_each(|x| *x = 0.0);
        row[rng.random_range(0..n)] = 1.0;
        return row;
    }
    row.iter_mut().for_each(|x| *x /= sum);
    row
}

fn smooth(row: &mut [f64], eps: f64) {
    row.iter_mut().for_each(|x| *x += eps);
    let sum: f64 = row.iter().sum();
    row.iter_mut().for_each(|x| *x /= sum);
}

pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

const MAX_SEPARATION_REDRAWS: usize = 2_000_000;

/// Raw (unsmoothed) emission rows of every style, redrawn row by row until
/// the row-averaged distributions are pairwise at least `floor` apart.
fn draw_emissions(config: &WorldConfig, rng: &mut StreamRng) -> Result<Vec<Vec<f64>>> {
    if let Some(w) = config.accent_weight {
        return draw_accented(config, w, rng);
    }
    let a = config.audio_vocab as usize;
    let n_rows = config.text_vocab as usize * (a + 1);
    let draw_row = |_: usize, rng: &mut StreamRng| dirichlet_row(a, config.emission_concentration, rng);
    let mut tables: Vec<Vec<f64>> = (0..config.n_styles)
        .map(|_| (0..n_rows).flat_map(|r| draw_row(r, rng)).collect())
        .collect();
    if config.n_styles < 2 || config.separation_floor <= 0.0 {
        return Ok(tables);
    }
    let mut sums: Vec<Vec<f64>> = tables
        .iter()
        .map(|t| {
            let mut s = vec![0.0; a];
            for row in t.chunks(a) {
                s.iter_mut().zip(row).for_each(|(x, y)| *x += y);
            }
            s
        })
        .collect();
    let tv = |x: &[f64], y: &[f64]| total_variation(x, y) / n_rows as f64;
    let pair_min = |sums: &[Vec<f64>]| {
        let mut best = (f64::INFINITY, 0, 0);
        for i in 0..sums.len() {
            for j in i + 1..sums.len() {
                let d = tv(&sums[i], &sums[j]);
                if d < best.0 {
                    best = (d, i, j);
                }
            }
        }
        best
    };
    let mut redraws = 0;
    loop {
        let (d, i, j) = pair_min(&sums);
        if d >= config.separation_floor {
            return Ok(tables);
        }
        if redraws >= MAX_SEPARATION_REDRAWS {
            return Err(Error::ConfigInvalid(format!(
                "could not reach style separation {} (best {:.4})",
                config.separation_floor, d
            )));
        }
        redraws += 1;
        let s = if rng.random::<bool>() { i } else { j };
        let r = rng.random_range(0..n_rows);
        let fresh = draw_row(r, rng);
        let mut candidate = sums[s].clone();
        for k in 0..a {
            candidate[k] += fresh[k] - tables[s][r * a + k];
        }
        let old = std::mem::replace(&mut sums[s], candidate);
        let (d_new, _, _) = pair_min(&sums);
        if d_new > d {
            tables[s][r * a..(r + 1) * a].copy_from_slice(&fresh);
        } else {
            sums[s] = old;
        }
    }
}

/// Shared content rows mixed with one text-independent accent row per style.
/// Row averages then differ by exactly `w * TV(accent_i, accent_j)`, so the
/// separation redraws act on the accent rows alone.
fn draw_accented(config: &WorldConfig, w: f64, rng: &mut StreamRng) -> Result<Vec<Vec<f64>>> {
    let a = config.audio_vocab as usize;
    let n_rows = config.text_vocab as usize * (a + 1);
    let content: Vec<f64> = (0..n_rows)
        .flat_map(|_| dirichlet_row(a, config.emission_concentration, rng))
        .collect();
    let mut accents: Vec<Vec<f64>> = (0..config.n_styles)
        .map(|_| dirichlet_row(a, config.accent_concentration, rng))
        .collect();
    let pair_min = |acc: &[Vec<f64>]| {
        let mut best = (f64::INFINITY, 0, 0);
        for i in 0..acc.len() {
            for j in i + 1..acc.len() {
                let d = w * total_variation(&acc[i], &acc[j]);
                if d < best.0 {
                    best = (d, i, j);
                }
            }
        }
        best
    };
    let mut redraws = 0;
    while config.n_styles > 1 && config.separation_floor > 0.0 {
        let (d, i, j) = pair_min(&accents);
        if d >= config.separation_floor {
            break;
        }
        if redraws >= MAX_SEPARATION_REDRAWS {
            return Err(Error::ConfigInvalid(format!(
                "could not reach style separation {} (best {:.4})",
                config.separation_floor, d
            )));
        }
        redraws += 1;
        let s = if rng.random::<bool>() { i } else { j };
        let fresh = dirichlet_row(a, config.accent_concentration, rng);
        let old = std::mem::replace(&mut accents[s], fresh);
        if pair_min(&accents).0 <= d {
            accents[s] = old;
        }
    }
    Ok(accents
        .iter()
        .map(|acc| {
            content
                .chunks(a)
                .flat_map(|c| c.iter().zip(acc).map(|(x, y)| (1.0 - w) * x + w * y))
                .collect()
        })
        .collect())
}

/// Draws a world from its configuration. Identical `(config, seed)` pairs
/// produce bit-identical worlds.
pub fn generate_world(config: &WorldConfig, seed: u64) -> Result<(StyleWorld, OracleModel)> {
    let world = StyleWorld::generate(config, seed)?;
    let model = world.model.clone();
    Ok((world, model))
}

impl StyleWorld {
    pub fn generate(config: &WorldConfig, seed: u64) -> Result<StyleWorld> {
        config.validate()?;
        let mut rng = rng::stream(seed, &[0x3077_6f72_6c64]);
        let a = config.audio_vocab as usize;
        let tables = draw_emissions(config, &mut rng)?;
        let emitters = tables
            .into_iter()
            .enumerate()
            .map(|(s, mut t)| {
                t.chunks_mut(a).for_each(|row| smooth(row, config.smoothing));
                StyleEmitter::new(StyleId(s), config.text_vocab as usize, a, t)
            })
            .collect();
        let instruction = (0..config.n_styles)
            .map(|_| {
                let mut row = dirichlet_row(
                    config.instruction_vocab as usize,
                    config.instruction_concentration,
                    &mut rng,
                );
                let g = config.generic_instruction_weight;
                row.iter_mut().for_each(|p| *p *= 1.0 - g);
                row[0] += g;
                smooth(&mut row, config.smoothing);
                row
            })
            .collect();
        let prior = vec![1.0 / config.n_styles as f64; config.n_styles];
        let model = OracleModel::new(
            prior,
            emitters,
            instruction,
            config.vocab(),
            config.instruction_vocab,
        );
        let decode = DecodeTable::from_model(&model, config.decode_noise);
        Ok(StyleWorld {
            config: config.clone(),
            model,
            decode,
        })
    }

    pub fn oracle(&self) -> &OracleModel {
        &self.model
    }

    pub fn to_checkpoint(&self) -> WorldCheckpoint {
        self.model.to_checkpoint(&self.config)
    }

    pub fn from_checkpoint(ck: &WorldCheckpoint) -> Result<StyleWorld> {
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::UnsupportedVersion {
                found: ck.version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let config = ck.config.clone();
        config.validate()?;
        let dec = |v: &[String]| -> Result<Vec<f64>> {
            v.iter()
                .map(|s| {
                    s.parse::<f64>()
                        .map_err(|e| Error::ConfigInvalid(format!("bad probability {s:?}: {e}")))
                })
                .collect()
        };
        let a = config.audio_vocab as usize;
        let rows = config.text_vocab as usize * (a + 1) * a;
        if ck.emitters.len() != config.n_styles || ck.instruction_tables.len() != config.n_styles {
            return Err(Error::ConfigInvalid("style count mismatch in checkpoint".into()));
        }
        let emitters = ck
            .emitters
            .iter()
            .enumerate()
            .map(|(s, t)| {
                let probs = dec(t)?;
                if probs.len() != rows {
                    return Err(Error::ConfigInvalid("emission table size mismatch".into()));
                }
                Ok(StyleEmitter::new(StyleId(s), config.text_vocab as usize, a, probs))
            })
            .collect::<Result<Vec<_>>>()?;
        let instruction = ck
            .instruction_tables
            .iter()
            .map(|r| dec(r))
            .collect::<Result<Vec<_>>>()?;
        let model = OracleModel::new(
            dec(&ck.prior)?,
            emitters,
            instruction,
            config.vocab(),
            config.instruction_vocab,
        );
        let decode = DecodeTable::from_model(&model, config.decode_noise);
        Ok(StyleWorld {
            config,
            model,
            decode,
        })
    }

    pub fn save_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_checkpoint())?)
    }

    pub fn load_json(s: &str) -> Result<StyleWorld> {
        StyleWorld::from_checkpoint(&serde_json::from_str(s)?)
    }

    fn sample_instruction(&self, s: StyleId, len: usize, rng: &mut StreamRng) -> Vec<u32> {
        let row = self.model.instruction_row(s);
        (0..len).map(|_| sample_categorical(row, rng) as u32).collect()
    }

    pub fn sample_transcript(&self, len: usize, rng: &mut StreamRng) -> Transcript {
        Transcript::new(
            (0..len)
                .map(|_| rng.random_range(0..self.config.text_vocab))
                .collect(),
        )
    }

    /// Draws a target utterance for a transcript from one style's emitter.
    pub fn sample_target(
        &self,
        style: StyleId,
        transcript: &Transcript,
        rng: &mut StreamRng,
    ) -> Ta4Sequence {
        let audio = self.model.emitter(style).sample_audio(transcript, rng);
        interleave(transcript, &audio).expect("emitter output matches transcript length")
    }

    /// Samples one dialogue scene.
    pub fn sample_scene(
        &self,
        n_turns: usize,
        n_characters: usize,
        seed: u64,
    ) -> Result<DialogueScene> {
        if n_turns == 0 || n_turns > self.config.max_turns {
            return Err(Error::ConfigInvalid(format!(
                "n_turns {n_turns} outside [1, {}]",
                self.config.max_turns
            )));
        }
        if n_characters == 0 || n_characters > self.config.n_styles {
            return Err(Error::ConfigInvalid(format!(
                "n_characters {n_characters} outside [1, {}]",
                self.config.n_styles
            )));
        }
        let mut rng = rng::stream(seed, &[0x7363_656e_65]);
        let mut styles: Vec<usize> = (0..self.config.n_styles).collect();
        styles.shuffle(&mut rng);
        let style_map: Vec<StyleId> = styles[..n_characters].iter().map(|&s| StyleId(s)).collect();
        let scene_text = (0..self.config.scene_text_len)
            .map(|_| {
                let c = rng.random_range(0..n_characters);
                sample_categorical(self.model.instruction_row(style_map[c]), &mut rng) as u32
            })
            .collect();
        let profiles = style_map
            .iter()
            .map(|&s| self.sample_instruction(s, self.config.profile_len, &mut rng))
            .collect();
        let [lo, hi] = self.config.transcript_len;
        let mut turns = Vec::with_capacity(n_turns);
        let mut last_speaker: Option<usize> = None;
        for _ in 0..n_turns {
            let speaker = match last_speaker {
                Some(prev) if n_characters > 1 => {
                    let k = rng.random_range(0..n_characters - 1);
                    if k >= prev {
                        k + 1
                    } else {
                        k
                    }
                }
                _ => rng.random_range(0..n_characters),
            };
            let style = style_map[speaker];
            let instruction = self.sample_instruction(style, self.config.instruction_len, &mut rng);
            let len = rng.random_range(lo..=hi);
            let transcript = self.sample_transcript(len, &mut rng);
            let target = self.sample_target(style, &transcript, &mut rng);
            turns.push(Turn {
                speaker,
                instruction,
                transcript,
                target,
            });
            last_speaker = Some(speaker);
        }
        Ok(DialogueScene {
            scene_id: format!("scene-{seed:016x}"),
            source_id: format!("source-{seed:016x}"),
            spec: SceneSpec {
                scene_text,
                profiles,
                style_map: Some(style_map),
            },
            turns,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub scene_text: Vec<u32>,
    pub profiles: Vec<Vec<u32>>,
    /// Latent character styles. Only evaluation code may read this.
    pub style_map: Option<Vec<StyleId>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Turn {
    pub speaker: usize,
    pub instruction: Vec<u32>,
    pub transcript: Transcript,
    pub target: Ta4Sequence,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DialogueScene {
    pub scene_id: String,
    pub source_id: String,
    pub spec: SceneSpec,
    pub turns: Vec<Turn>,
}

impl DialogueScene {
    pub fn n_turns(&self) -> usize {
        self.turns.len()
    }

    pub fn final_turn(&self) -> &Turn {
        self.turns.last().expect("scenes have at least one turn")
    }

    /// Latent style of a turn's speaker, if the scene carries oracle data.
    pub fn speaker_style(&self, turn: usize) -> Option<StyleId> {
        let map = self.spec.style_map.as_ref()?;
        map.get(self.turns.get(turn)?.speaker).copied()
    }

    pub fn to_record(&self) -> SceneRecord {
        SceneRecord {
            scene_id: self.scene_id.clone(),
            source_id: self.source_id.clone(),
            scene_text: self.spec.scene_text.clone(),
            profiles: self.spec.profiles.clone(),
            turns: self
                .turns
                .iter()
                .map(|t| TurnRecord {
                    speaker: t.speaker,
                    instruction: t.instruction.clone(),
                    text: t.transcript.text_ids.clone(),
                    audio: t.target.audio_ids().collect(),
                    utterance: None,
                    start: None,
                    end: None,
                })
                .collect(),
            oracle_private: self.spec.style_map.as_ref().map(|m| OraclePrivate {
                style_map: m.clone(),
            }),
        }
    }

    pub fn from_record(rec: &SceneRecord) -> Result<DialogueScene> {
        if rec.turns.is_empty() {
            return Err(Error::ConfigInvalid(format!("scene {} has no turns", rec.scene_id)));
        }
        if rec.profiles.is_empty() || rec.profiles.iter().any(|p| p.is_empty()) {
            return Err(Error::ConfigInvalid(format!(
                "scene {} needs at least one non-empty profile",
                rec.scene_id
            )));
        }
        let turns = rec
            .turns
            .iter()
            .map(|t| {
                let transcript = Transcript::new(t.text.clone());
                let target = interleave(&transcript, &t.audio)?;
                Ok(Turn {
                    speaker: t.speaker,
                    instruction: t.instruction.clone(),
                    transcript,
                    target,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(DialogueScene {
            scene_id: rec.scene_id.clone(),
            source_id: rec.source_id.clone(),
            spec: SceneSpec {
                scene_text: rec.scene_text.clone(),
                profiles: rec.profiles.clone(),
                style_map: rec.oracle_private.as_ref().map(|o| o.style_map.clone()),
            },
            turns,
        })
    }
}

/// JSONL wire form of a scene, shared with the curation pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneRecord {
    pub scene_id: String,
    pub source_id: String,
    pub scene_text: Vec<u32>,
    pub profiles: Vec<Vec<u32>>,
    pub turns: Vec<TurnRecord>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub oracle_private: Option<OraclePrivate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnRecord {
    pub speaker: usize,
    pub instruction: Vec<u32>,
    pub text: Vec<u32>,
    pub audio: Vec<u32>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub utterance: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub start: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub end: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OraclePrivate {
    pub style_map: Vec<StyleId>,
}

/// Posterior mass on `true_style` after observing only the candidate audio.
pub fn style_similarity(model: &OracleModel, true_style: StyleId, candidate: &Ta4Sequence) -> f64 {
    let post = model.style_posterior(&[ContextSegment::Audio(candidate.clone())]);
    post[true_style.0]
}

/// Oracle stand-in for a human style-consistency rating of a candidate for
/// the scene's final turn.
pub fn oracle_style_similarity(
    model: &OracleModel,
    scene: &DialogueScene,
    candidate: &Ta4Sequence,
) -> Result<f64> {
    let turn = scene.final_turn();
    let cand = candidate.transcript();
    if cand != turn.transcript {
        return Err(Error::TranscriptMismatch(format!(
            "candidate transcript {:?} differs from turn transcript {:?}",
            cand.text_ids, turn.transcript.text_ids
        )));
    }
    let style = scene
        .speaker_style(scene.n_turns() - 1)
        .ok_or_else(|| Error::MissingLabel(scene.scene_id.clone()))?;
    Ok(style_similarity(model, style, candidate))
}
