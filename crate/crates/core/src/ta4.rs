//! Token vocabularies and the interleaved TA4 sequence (one text token
//! followed by four audio tokens, framed by BOS/EOT).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Audio tokens emitted per text token.
pub const AUDIO_PER_TEXT: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Marker {
    Bos,
    /// End of turn.
    Eot,
    /// Segment separator.
    Sep,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Token {
    Text(u32),
    Audio(u32),
    Marker(Marker),
}

/// Vocabulary sizes for the two token kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    pub text: u32,
    pub audio: u32,
}

impl Default for Vocab {
    fn default() -> Self {
        Vocab { text: 16, audio: 8 }
    }
}

impl Vocab {
    pub fn contains(&self, token: Token) -> bool {
        match token {
            Token::Text(id) => id < self.text,
            Token::Audio(id) => id < self.audio,
            Token::Marker(_) => true,
        }
    }
}

/// The text-token ids of one utterance.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Transcript {
    pub text_ids: Vec<u32>,
}

impl Transcript {
    pub fn new(text_ids: Vec<u32>) -> Self {
        Transcript { text_ids }
    }

    pub fn len(&self) -> usize {
        self.text_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.text_ids.is_empty()
    }
}

impl From<Vec<u32>> for Transcript {
    fn from(text_ids: Vec<u32>) -> Self {
        Transcript { text_ids }
    }
}

/// A validated `BOS (T A A A A)+ EOT` sequence.
///
/// Construction goes through [`interleave`] or [`Ta4Sequence::from_tokens`],
/// so every value satisfies the grammar and `audio_positions` lists exactly
/// the audio indices in order.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Ta4Sequence {
    tokens: Vec<Token>,
    audio_positions: Vec<usize>,
}

/// Interleaves a transcript with its audio tokens.
pub fn interleave(transcript: &Transcript, audio: &[u32]) -> Result<Ta4Sequence> {
    let expected = AUDIO_PER_TEXT * transcript.len();
    if audio.len() != expected {
        return Err(Error::LengthMismatch {
            text: transcript.len(),
            audio: audio.len(),
            expected,
        });
    }
    if transcript.is_empty() {
        return Err(Error::GrammarViolation("empty body".into()));
    }
    let mut tokens = Vec::with_capacity(2 + transcript.len() * (AUDIO_PER_TEXT + 1));
    let mut audio_positions = Vec::with_capacity(audio.len());
    tokens.push(Token::Marker(Marker::Bos));
    for (t, chunk) in transcript.text_ids.iter().zip(audio.chunks(AUDIO_PER_TEXT)) {
        tokens.push(Token::Text(*t));
        for &a in chunk {
            audio_positions.push(tokens.len());
            tokens.push(Token::Audio(a));
        }
    }
    tokens.push(Token::Marker(Marker::Eot));
    Ok(Ta4Sequence {
        tokens,
        audio_positions,
    })
}

/// Splits a sequence back into its transcript and audio ids.
pub fn deinterleave(seq: &Ta4Sequence) -> (Transcript, Vec<u32>) {
    (seq.transcript(), seq.audio_ids().collect())
}

/// Number of audio tokens in the sequence (the MCLP normalizer).
pub fn audio_token_count(seq: &Ta4Sequence) -> usize {
    seq.audio_positions.len()
}

impl Ta4Sequence {
    /// Validates a raw token list against the TA4 grammar.
    pub fn from_tokens(tokens: Vec<Token>) -> Result<Self> {
        let n = tokens.len();
        if n < 2 || tokens[0] != Token::Marker(Marker::Bos) {
            return Err(Error::GrammarViolation("missing BOS".into()));
        }
        if tokens[n - 1] != Token::Marker(Marker::Eot) {
            return Err(Error::GrammarViolation("missing EOT".into()));
        }
        let body = &tokens[1..n - 1];
        if body.is_empty() {
            return Err(Error::GrammarViolation("empty body".into()));
        }
        if body.len() % (AUDIO_PER_TEXT + 1) != 0 {
            return Err(Error::GrammarViolation(format!(
                "body length {} is not a multiple of {}",
                body.len(),
                AUDIO_PER_TEXT + 1
            )));
        }
        let mut audio_positions = Vec::with_capacity(body.len() / (AUDIO_PER_TEXT + 1) * 4);
        for (g, group) in body.chunks(AUDIO_PER_TEXT + 1).enumerate() {
            let base = 1 + g * (AUDIO_PER_TEXT + 1);
            if !matches!(group[0], Token::Text(_)) {
                return Err(Error::GrammarViolation(format!(
                    "expected text token at index {base}"
                )));
            }
            for (k, tok) in group[1..].iter().enumerate() {
                if !matches!(tok, Token::Audio(_)) {
                    return Err(Error::GrammarViolation(format!(
                        "expected audio token at index {}",
                        base + 1 + k
                    )));
                }
                audio_positions.push(base + 1 + k);
            }
        }
        Ok(Ta4Sequence {
            tokens,
            audio_positions,
        })
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn audio_positions(&self) -> &[usize] {
        &self.audio_positions
    }

    pub fn n_text(&self) -> usize {
        self.audio_positions.len() / AUDIO_PER_TEXT
    }

    pub fn n_audio(&self) -> usize {
        self.audio_positions.len()
    }

    pub fn text_ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.tokens.iter().filter_map(|t| match t {
            Token::Text(id) => Some(*id),
            _ => None,
        })
    }

    pub fn audio_ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.tokens.iter().filter_map(|t| match t {
            Token::Audio(id) => Some(*id),
            _ => None,
        })
    }

    pub fn transcript(&self) -> Transcript {
        Transcript::new(self.text_ids().collect())
    }

    /// Audio tokens paired with the text token they are aligned to.
    pub fn aligned_audio(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        AlignedAudio {
            tokens: &self.tokens,
            idx: 1,
            text: 0,
        }
    }

    /// Consecutive 4-tuples of audio tokens, one per text token.
    pub fn audio_quads(&self) -> impl Iterator<Item = [u32; AUDIO_PER_TEXT]> + '_ {
        let audio: Vec<u32> = self.audio_ids().collect();
        (0..self.n_text()).map(move |i| {
            let mut q = [0u32; AUDIO_PER_TEXT];
            q.copy_from_slice(&audio[i * AUDIO_PER_TEXT..(i + 1) * AUDIO_PER_TEXT]);
            q
        })
    }

    pub fn is_within(&self, vocab: &Vocab) -> bool {
        self.tokens.iter().all(|t| vocab.contains(*t))
    }

    pub fn to_record(&self) -> Ta4Record {
        let (t, a) = deinterleave(self);
        Ta4Record {
            text: t.text_ids,
            audio: a,
        }
    }
}

struct AlignedAudio<'a> {
    tokens: &'a [Token],
    idx: usize,
    text: u32,
}

impl Iterator for AlignedAudio<'_> {
    type Item = (u32, u32);

    fn next(&mut self) -> Option<(u32, u32)> {
        while self.idx < self.tokens.len() {
            let tok = self.tokens[self.idx];
            self.idx += 1;
            match tok {
                Token::Text(t) => self.text = t,
                Token::Audio(a) => return Some((self.text, a)),
                Token::Marker(_) => {}
            }
        }
        None
    }
}

/// JSONL wire form of a TA4 sequence. Markers are implied.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ta4Record {
    pub text: Vec<u32>,
    pub audio: Vec<u32>,
}

impl Ta4Record {
    pub fn to_sequence(&self) -> Result<Ta4Sequence> {
        interleave(&Transcript::new(self.text.clone()), &self.audio)
    }
}

impl Serialize for Ta4Sequence {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_record().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Ta4Sequence {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rec = Ta4Record::deserialize(d)?;
        rec.to_sequence().map_err(serde::de::Error::custom)
    }
}
