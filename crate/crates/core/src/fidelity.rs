//! Content fidelity: an oracle audio-to-text decoder standing in for
//! vocoding plus ASR, and edit-distance error rates.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::StreamRng;
use crate::ta4::{Ta4Sequence, Transcript, AUDIO_PER_TEXT};
use crate::world::{OracleModel, StyleId};

/// Maps every 4-tuple of audio tokens to a text token.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodeTable {
    audio_vocab: u32,
    text_vocab: u32,
    table: Vec<u32>,
    /// Per-token probability that a decoded token is replaced uniformly.
    pub noise: f64,
}

fn quad_index(q: &[u32; AUDIO_PER_TEXT], audio_vocab: u32) -> usize {
    q.iter()
        .fold(0usize, |acc, &a| acc * audio_vocab as usize + a as usize)
}

fn quad_from_index(mut idx: usize, audio_vocab: u32) -> [u32; AUDIO_PER_TEXT] {
    let mut q = [0u32; AUDIO_PER_TEXT];
    for slot in q.iter_mut().rev() {
        *slot = (idx % audio_vocab as usize) as u32;
        idx /= audio_vocab as usize;
    }
    q
}

impl DecodeTable {
    pub fn from_fn(
        audio_vocab: u32,
        text_vocab: u32,
        noise: f64,
        f: impl Fn(&[u32; AUDIO_PER_TEXT]) -> u32,
    ) -> Self {
        let n = (audio_vocab as usize).pow(AUDIO_PER_TEXT as u32);
        let table = (0..n).map(|i| f(&quad_from_index(i, audio_vocab))).collect();
        DecodeTable {
            audio_vocab,
            text_vocab,
            table,
            noise,
        }
    }

    /// Builds the maximum a-posteriori decoder of a world.
    ///
    /// Each quad decodes to the text token maximising its style-averaged
    /// likelihood (previous audio state averaged uniformly). Afterwards every
    /// style's modal quad for each text token (from the start state) is
    /// forced to decode to that token; on collisions the more probable claim
    /// wins.
    pub fn from_model(model: &OracleModel, noise: f64) -> Self {
        let vocab = model.vocab();
        let a = vocab.audio as usize;
        let n_quads = a.pow(AUDIO_PER_TEXT as u32);
        let n_prev = a + 1;
        let prior = model.prior();

        // score[quad][text]
        let mut best = vec![(f64::NEG_INFINITY, 0u32); n_quads];
        for t in 0..vocab.text {
            let mut score = vec![0.0f64; n_quads];
            for (s, e) in model.emitters().iter().enumerate() {
                for p in 0..n_prev {
                    let prev = (p < a).then_some(p as u32);
                    let r0 = e.row(t, prev);
                    for (qi, sc) in score.iter_mut().enumerate() {
                        let q = quad_from_index(qi, vocab.audio);
                        let mut prob = r0[q[0] as usize];
                        for k in 1..AUDIO_PER_TEXT {
                            prob *= e.row(t, Some(q[k - 1]))[q[k] as usize];
                        }
                        *sc += prior[s] * prob / n_prev as f64;
                    }
                }
            }
            for (qi, sc) in score.into_iter().enumerate() {
                if sc > best[qi].0 {
                    best[qi] = (sc, t);
                }
            }
        }
        let mut table: Vec<u32> = best.into_iter().map(|(_, t)| t).collect();

        let mut claims: Vec<(f64, usize, u32)> = Vec::new();
        for s in 0..model.n_styles() {
            let e = model.emitter(StyleId(s));
            for t in 0..vocab.text {
                let (p, q) = modal_quad(|prev| e.row(t, prev), vocab.audio);
                claims.push((p, quad_index(&q, vocab.audio), t));
            }
        }
        claims.sort_by(|x, y| x.0.total_cmp(&y.0));
        for (_, qi, t) in claims {
            table[qi] = t;
        }
        DecodeTable {
            audio_vocab: vocab.audio,
            text_vocab: vocab.text,
            table,
            noise,
        }
    }

    pub fn with_noise(mut self, noise: f64) -> Self {
        self.noise = noise;
        self
    }

    pub fn text_vocab(&self) -> u32 {
        self.text_vocab
    }

    pub fn lookup(&self, quad: &[u32; AUDIO_PER_TEXT]) -> u32 {
        self.table[quad_index(quad, self.audio_vocab)]
    }

    /// Noise-free decode; a pure function of the table and the sequence.
    pub fn decode_clean(&self, seq: &Ta4Sequence) -> Transcript {
        Transcript::new(seq.audio_quads().map(|q| self.lookup(&q)).collect())
    }

    /// Decodes each audio quad; with probability `noise` the output token is
    /// replaced by a uniformly drawn one. The stream is only consumed when
    /// `noise > 0`.
    pub fn decode(&self, seq: &Ta4Sequence, rng: &mut StreamRng) -> Transcript {
        let mut out = self.decode_clean(seq);
        if self.noise > 0.0 {
            for t in out.text_ids.iter_mut() {
                if rng.random::<f64>() < self.noise {
                    *t = rng.random_range(0..self.text_vocab);
                }
            }
        }
        out
    }
}

/// Most probable quad from the start state, by exhaustive search.
fn modal_quad<'a>(
    row: impl Fn(Option<u32>) -> &'a [f64],
    audio_vocab: u32,
) -> (f64, [u32; AUDIO_PER_TEXT]) {
    let n = (audio_vocab as usize).pow(AUDIO_PER_TEXT as u32);
    let mut best = (f64::NEG_INFINITY, [0; AUDIO_PER_TEXT]);
    for qi in 0..n {
        let q = quad_from_index(qi, audio_vocab);
        let mut p = row(None)[q[0] as usize];
        for k in 1..AUDIO_PER_TEXT {
            p *= row(Some(q[k - 1]))[q[k] as usize];
        }
        if p > best.0 {
            best = (p, q);
        }
    }
    best
}

/// Decode free function.
pub fn decode(table: &DecodeTable, seq: &Ta4Sequence, rng: &mut StreamRng) -> Transcript {
    table.decode(seq, rng)
}

/// Levenshtein distance with one witnessing edit decomposition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EditCounts {
    pub distance: usize,
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
}

/// Unit-cost edit distance turning `a` (hypothesis) into `b` (reference).
///
/// The backtrace prefers substitution (or match), then deletion, then
/// insertion when several moves are optimal.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> EditCounts {
    let (n, m) = (a.len(), b.len());
    let w = m + 1;
    let mut d = vec![0usize; (n + 1) * w];
    for i in 0..=n {
        d[i * w] = i;
    }
    for j in 0..=m {
        d[j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = d[(i - 1) * w + j - 1] + usize::from(a[i - 1] != b[j - 1]);
            let del = d[(i - 1) * w + j] + 1;
            let ins = d[i * w + j - 1] + 1;
            d[i * w + j] = sub.min(del).min(ins);
        }
    }
    let mut counts = EditCounts {
        distance: d[n * w + m],
        ..EditCounts::default()
    };
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = d[i * w + j];
        if i > 0 && j > 0 {
            let diff = usize::from(a[i - 1] != b[j - 1]);
            if d[(i - 1) * w + j - 1] + diff == here {
                counts.substitutions += diff;
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && d[(i - 1) * w + j] + 1 == here {
            counts.deletions += 1;
            i -= 1;
        } else {
            counts.insertions += 1;
            j -= 1;
        }
    }
    counts
}

/// Error rate of a hypothesis against a reference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorRate {
    pub value: f64,
    pub edits: EditCounts,
    pub ref_len: usize,
}

/// Character (token) error rate; uncapped, so it can exceed 1.
pub fn cer(hyp: &Transcript, reference: &Transcript) -> Result<ErrorRate> {
    error_rate(&hyp.text_ids, &reference.text_ids)
}

pub fn error_rate<T: PartialEq>(hyp: &[T], reference: &[T]) -> Result<ErrorRate> {
    if reference.is_empty() {
        return Err(Error::EmptyReference);
    }
    let edits = edit_distance(hyp, reference);
    Ok(ErrorRate {
        value: edits.distance as f64 / reference.len() as f64,
        edits,
        ref_len: reference.len(),
    })
}

/// Word error rate over whitespace-separated words.
pub fn wer_text(hyp: &str, reference: &str) -> Result<ErrorRate> {
    let h: Vec<&str> = hyp.split_whitespace().collect();
    let r: Vec<&str> = reference.split_whitespace().collect();
    error_rate(&h, &r)
}

/// Character error rate over Unicode scalar values, ignoring whitespace.
pub fn cer_text(hyp: &str, reference: &str) -> Result<ErrorRate> {
    let h: Vec<char> = hyp.chars().filter(|c| !c.is_whitespace()).collect();
    let r: Vec<char> = reference.chars().filter(|c| !c.is_whitespace()).collect();
    error_rate(&h, &r)
}

/// One line of the paired CER batch input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CerPair {
    pub id: String,
    pub hyp: Vec<u32>,
    #[serde(rename = "ref")]
    pub reference: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CerRow {
    pub id: String,
    pub cer: f64,
    #[serde(rename = "S")]
    pub s: usize,
    #[serde(rename = "I")]
    pub i: usize,
    #[serde(rename = "D")]
    pub d: usize,
    pub ref_len: usize,
}

/// Batch CER: paired JSONL in, CSV rows out.
pub fn cer_batch(jsonl: &str) -> Result<Vec<CerRow>> {
    jsonl
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, line)| {
            let pair: CerPair = serde_json::from_str(line).map_err(|e| Error::MalformedLine {
                line: n + 1,
                reason: e.to_string(),
            })?;
            let r = cer(&pair.hyp.into(), &pair.reference.into())?;
            Ok(CerRow {
                id: pair.id,
                cer: r.value,
                s: r.edits.substitutions,
                i: r.edits.insertions,
                d: r.edits.deletions,
                ref_len: r.ref_len,
            })
        })
        .collect()
}
