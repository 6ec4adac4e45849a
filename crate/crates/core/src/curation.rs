//! Real-data curation: RTTM parsing, speaker alignment, scene segmentation,
//! RL filtering, test stratification and corpus statistics.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::world::{DialogueScene, SceneRecord, StyleId, TurnRecord};

/// Maximum silence between consecutive segments of one scene, in seconds.
pub const MAX_GAP: f64 = 5.0;
/// Maximum span of one scene, in seconds.
pub const MAX_SPAN: f64 = 30.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RttmSegment {
    pub file_id: String,
    pub channel: i64,
    pub onset: f64,
    pub duration: f64,
    pub speaker: String,
}

impl RttmSegment {
    pub fn end(&self) -> f64 {
        self.onset + self.duration
    }

    /// Standard 10-field RTTM line.
    pub fn to_line(&self) -> String {
        format!(
            "SPEAKER {} {} {} {} <NA> <NA> {} <NA> <NA>",
            self.file_id, self.channel, self.onset, self.duration, self.speaker
        )
    }
}

/// Parses RTTM text. Lines whose type is not `SPEAKER` are skipped.
pub fn parse_rttm(text: &str) -> Result<Vec<RttmSegment>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() || fields[0] != "SPEAKER" {
            continue;
        }
        let bad = |reason: String| Error::MalformedLine {
            line: line_no,
            reason,
        };
        if fields.len() != 10 {
            return Err(bad(format!("expected 10 fields, found {}", fields.len())));
        }
        let num = |idx: usize, name: &str| -> Result<f64> {
            fields[idx]
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| bad(format!("{name} {:?} is not a number", fields[idx])))
        };
        let onset = num(3, "tbeg")?;
        let duration = num(4, "tdur")?;
        if onset < 0.0 || duration <= 0.0 {
            return Err(bad(format!("need tbeg >= 0 and tdur > 0, got {onset} and {duration}")));
        }
        let channel = fields[2]
            .parse::<i64>()
            .map_err(|_| bad(format!("channel {:?} is not an integer", fields[2])))?;
        out.push(RttmSegment {
            file_id: fields[1].to_string(),
            channel,
            onset,
            duration,
            speaker: fields[7].to_string(),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptSegment {
    pub text: String,
    pub start: f64,
    pub end: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speaker: Option<String>,
}

impl TranscriptSegment {
    pub fn duration(&self) -> f64 {
        self.end - self.start
    }
}

pub const UNKNOWN_SPEAKER: &str = "UNK";

/// Labels each segment with the RTTM speaker that overlaps it longest.
///
/// Ties go to the speaker whose earliest overlapping interval starts first;
/// segments with no overlap get [`UNKNOWN_SPEAKER`].
pub fn assign_speakers(
    segments: &[TranscriptSegment],
    rttm: &[RttmSegment],
) -> Vec<TranscriptSegment> {
    segments
        .iter()
        .map(|seg| {
            // speaker -> (total overlap, earliest overlapping onset)
            let mut acc: BTreeMap<&str, (f64, f64)> = BTreeMap::new();
            for r in rttm {
                let ov = seg.end.min(r.end()) - seg.start.max(r.onset);
                if ov > 0.0 {
                    let e = acc.entry(&r.speaker).or_insert((0.0, f64::INFINITY));
                    e.0 += ov;
                    e.1 = e.1.min(r.onset);
                }
            }
            let best = acc.into_iter().fold(None, |best: Option<(&str, f64, f64)>, (s, (ov, on))| {
                match best {
                    Some((_, bov, _)) if bov > ov + 1e-9 => best,
                    Some((_, bov, bon)) if (bov - ov).abs() <= 1e-9 && bon <= on => best,
                    _ => Some((s, ov, on)),
                }
            });
            TranscriptSegment {
                speaker: Some(best.map_or(UNKNOWN_SPEAKER, |b| b.0).to_string()),
                ..seg.clone()
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub scene_id: String,
    pub segments: Vec<TranscriptSegment>,
    /// Set when a single segment alone exceeds the span cap.
    #[serde(default)]
    pub oversized: bool,
}

impl Scene {
    pub fn span(&self) -> f64 {
        match (self.segments.first(), self.segments.last()) {
            (Some(f), Some(l)) => l.end - f.start,
            _ => 0.0,
        }
    }

    pub fn max_gap(&self) -> f64 {
        self.segments
            .windows(2)
            .map(|w| w[1].start - w[0].end)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn n_speakers(&self) -> usize {
        self.segments
            .iter()
            .map(|s| s.speaker.as_deref().unwrap_or(UNKNOWN_SPEAKER))
            .collect::<HashSet<_>>()
            .len()
    }
}

/// Greedy left-to-right scene segmentation.
///
/// A new scene starts when the silence before the next segment exceeds
/// [`MAX_GAP`] or when admitting it would push the span past [`MAX_SPAN`].
pub fn segment_scenes(segments: &[TranscriptSegment]) -> Result<Vec<Scene>> {
    if let Some(i) = (1..segments.len()).find(|&i| segments[i].start < segments[i - 1].start) {
        return Err(Error::UnsortedInput(i));
    }
    let mut groups: Vec<Vec<TranscriptSegment>> = Vec::new();
    for seg in segments {
        let admit = groups.last().is_some_and(|g| {
            let first = &g[0];
            let last = &g[g.len() - 1];
            seg.start - last.end <= MAX_GAP && seg.end - first.start <= MAX_SPAN
        });
        if admit {
            groups.last_mut().unwrap().push(seg.clone());
        } else {
            groups.push(vec![seg.clone()]);
        }
    }
    Ok(groups
        .into_iter()
        .enumerate()
        .map(|(i, segs)| {
            let oversized = segs.len() == 1 && segs[0].duration() > MAX_SPAN;
            Scene {
                scene_id: format!("scene-{i:05}"),
                segments: segs,
                oversized,
            }
        })
        .collect())
}

/// The fields of a dialogue that curation decisions depend on.
pub trait Dialogue {
    fn scene_id(&self) -> &str;
    fn source_id(&self) -> &str;
    fn n_turns(&self) -> usize;
    /// Length of the final turn in transcript units.
    fn final_turn_len(&self) -> usize;
}

impl Dialogue for DialogueScene {
    fn scene_id(&self) -> &str {
        &self.scene_id
    }
    fn source_id(&self) -> &str {
        &self.source_id
    }
    fn n_turns(&self) -> usize {
        self.turns.len()
    }
    fn final_turn_len(&self) -> usize {
        self.turns.last().map_or(0, |t| t.transcript.len())
    }
}

impl Dialogue for SceneRecord {
    fn scene_id(&self) -> &str {
        &self.scene_id
    }
    fn source_id(&self) -> &str {
        &self.source_id
    }
    fn n_turns(&self) -> usize {
        self.turns.len()
    }
    fn final_turn_len(&self) -> usize {
        self.turns.last().map_or(0, |t| t.text.len())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StyleLabel {
    Neutral,
    NotNeutral,
}

/// Style classifier for a scene's final turn.
pub trait StyleClassifier<D: ?Sized> {
    fn classify(&self, scene: &D) -> Option<StyleLabel>;
}

/// Labels from the world's latent style map.
#[derive(Debug, Clone, Default)]
pub struct OracleClassifier {
    pub neutral_styles: Vec<usize>,
}

impl StyleClassifier<DialogueScene> for OracleClassifier {
    fn classify(&self, scene: &DialogueScene) -> Option<StyleLabel> {
        let StyleId(s) = scene.speaker_style(scene.turns.len().checked_sub(1)?)?;
        Some(if self.neutral_styles.contains(&s) {
            StyleLabel::Neutral
        } else {
            StyleLabel::NotNeutral
        })
    }
}

/// Precomputed labels keyed by scene id.
impl<D: Dialogue> StyleClassifier<D> for HashMap<String, StyleLabel> {
    fn classify(&self, scene: &D) -> Option<StyleLabel> {
        self.get(scene.scene_id()).copied()
    }
}

pub const RL_MIN_TURNS: usize = 2;
pub const RL_MAX_TURNS: usize = 6;
/// Final-turn length must be strictly greater than this.
pub const RL_MIN_FINAL_LEN: usize = 10;

/// Keeps scenes with 2 to 6 turns, a final turn longer than 10 units and a
/// non-neutral final-turn label.
pub fn filter_rl<D, C>(scenes: &[D], classifier: &C) -> Result<Vec<D>>
where
    D: Dialogue + Clone,
    C: StyleClassifier<D> + ?Sized,
{
    let mut out = Vec::new();
    for s in scenes {
        let label = classifier
            .classify(s)
            .ok_or_else(|| Error::MissingLabel(s.scene_id().to_string()))?;
        if (RL_MIN_TURNS..=RL_MAX_TURNS).contains(&s.n_turns())
            && s.final_turn_len() > RL_MIN_FINAL_LEN
            && label != StyleLabel::Neutral
        {
            out.push(s.clone());
        }
    }
    Ok(out)
}

/// Draws exactly `per_bucket` scenes for every turn count in `turn_range`,
/// skipping any scene whose source appears in `train_sources`.
pub fn stratify_test<D: Dialogue + Clone>(
    scenes: &[D],
    per_bucket: usize,
    turn_range: [usize; 2],
    seed: u64,
    train_sources: &HashSet<String>,
) -> Result<Vec<D>> {
    let [lo, hi] = turn_range;
    if lo > hi {
        return Err(Error::ConfigInvalid(format!("empty turn range [{lo}, {hi}]")));
    }
    let mut out = Vec::with_capacity(per_bucket * (hi - lo + 1));
    for turns in lo..=hi {
        let mut pool: Vec<&D> = scenes
            .iter()
            .filter(|s| s.n_turns() == turns && !train_sources.contains(s.source_id()))
            .collect();
        if pool.len() < per_bucket {
            return Err(Error::InsufficientScenes {
                turns,
                needed: per_bucket,
                available: pool.len(),
            });
        }
        pool.sort_by(|a, b| a.scene_id().cmp(b.scene_id()));
        pool.shuffle(&mut rng::stream(seed, &[turns as u64]));
        out.extend(pool.into_iter().take(per_bucket).cloned());
    }
    Ok(out)
}

/// Scenes cut from one source recording.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CuratedFile {
    pub file_id: String,
    pub scenes: Vec<Scene>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub n_audio: usize,
    pub total_hours: f64,
    pub n_sentences: usize,
    pub n_scenes: usize,
    /// Sum over scenes of the number of distinct speakers.
    pub n_scene_speakers: usize,
    pub avg_scenes_per_audio: f64,
    pub avg_sentences_per_scene: f64,
    pub avg_speakers_per_scene: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn compute_stats(corpus: &[CuratedFile]) -> DatasetStats {
    let scenes = corpus.iter().flat_map(|f| &f.scenes);
    let n_scenes = scenes.clone().count();
    let n_sentences = scenes.clone().map(|s| s.segments.len()).sum();
    let n_scene_speakers = scenes.clone().map(Scene::n_speakers).sum();
    let seconds: f64 = scenes
        .flat_map(|s| &s.segments)
        .map(TranscriptSegment::duration)
        .sum();
    DatasetStats {
        n_audio: corpus.len(),
        total_hours: seconds / 3600.0,
        n_sentences,
        n_scenes,
        n_scene_speakers,
        avg_scenes_per_audio: ratio(n_scenes, corpus.len()),
        avg_sentences_per_scene: ratio(n_sentences, n_scenes),
        avg_speakers_per_scene: ratio(n_scene_speakers, n_scenes),
    }
}

/// Transcript text as Unicode code points, one unit per character.
pub fn text_units(text: &str) -> Vec<u32> {
    text.chars().map(u32::from).collect()
}

/// Scene JSONL record for a real-data scene. Audio is left empty and the
/// oracle section is omitted; speakers become indices in order of first
/// appearance and each profile holds the speaker label's code points.
pub fn scene_record(file_id: &str, scene: &Scene) -> SceneRecord {
    let mut speakers: Vec<&str> = Vec::new();
    let turns = scene
        .segments
        .iter()
        .map(|seg| {
            let label = seg.speaker.as_deref().unwrap_or(UNKNOWN_SPEAKER);
            let speaker = speakers.iter().position(|s| *s == label).unwrap_or_else(|| {
                speakers.push(label);
                speakers.len() - 1
            });
            TurnRecord {
                speaker,
                instruction: Vec::new(),
                text: text_units(&seg.text),
                audio: Vec::new(),
                utterance: Some(seg.text.clone()),
                start: Some(seg.start),
                end: Some(seg.end),
            }
        })
        .collect();
    SceneRecord {
        scene_id: format!("{file_id}/{}", scene.scene_id),
        source_id: file_id.to_string(),
        scene_text: Vec::new(),
        profiles: speakers.iter().map(|s| text_units(s)).collect(),
        turns,
        oracle_private: None,
    }
}

/// Reads one JSON value per non-blank line.
pub fn read_jsonl<T: serde::de::DeserializeOwned>(reader: impl BufRead) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::MalformedLine {
            line: i + 1,
            reason: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(mut writer: impl Write, items: &[T]) -> Result<()> {
    for item in items {
        serde_json::to_writer(&mut writer, item)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

pub fn write_stats_csv(writer: impl Write, stats: &DatasetStats) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.serialize(stats)?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seg(start: f64, end: f64) -> TranscriptSegment {
        TranscriptSegment {
            text: "x".into(),
            start,
            end,
            speaker: None,
        }
    }

    fn spans(scenes: &[Scene]) -> Vec<Vec<(f64, f64)>> {
        scenes
            .iter()
            .map(|s| s.segments.iter().map(|g| (g.start, g.end)).collect())
            .collect()
    }

    #[test]
    fn rttm_examples() {
        let text = "SPEAKER f1 1 0.50 2.00 <NA> <NA> spkA <NA> <NA>\nLIGHTING f1 1 0 1 <NA> <NA> x <NA> <NA>\n";
        let segs = parse_rttm(text).unwrap();
        assert_eq!(
            segs,
            vec![RttmSegment {
                file_id: "f1".into(),
                channel: 1,
                onset: 0.5,
                duration: 2.0,
                speaker: "spkA".into()
            }]
        );
        assert_eq!(parse_rttm(&segs[0].to_line()).unwrap(), segs);
        let err = parse_rttm("\nSPEAKER f1 1 abc 2.0 <NA> <NA> s <NA> <NA>").unwrap_err();
        assert!(matches!(err, Error::MalformedLine { line: 2, .. }));
        assert!(parse_rttm("SPEAKER f1 1 0 2.0 <NA> <NA> s <NA>").is_err());
    }

    #[test]
    fn speaker_tie_goes_to_earlier_onset() {
        let r = |s: &str, on: f64, d: f64| RttmSegment {
            file_id: "f".into(),
            channel: 1,
            onset: on,
            duration: d,
            speaker: s.into(),
        };
        let rttm = vec![r("spkB", 2.0, 2.0), r("spkA", 0.0, 2.0)];
        let out = assign_speakers(&[seg(1.0, 3.0), seg(10.0, 11.0)], &rttm);
        assert_eq!(out[0].speaker.as_deref(), Some("spkA"));
        assert_eq!(out[1].speaker.as_deref(), Some(UNKNOWN_SPEAKER));
    }

    #[test]
    fn segmentation_examples() {
        let s = segment_scenes(&[seg(0.0, 2.0), seg(3.0, 5.0), seg(12.0, 14.0)]).unwrap();
        assert_eq!(spans(&s), vec![vec![(0.0, 2.0), (3.0, 5.0)], vec![(12.0, 14.0)]]);
        let s = segment_scenes(&[seg(0.0, 10.0), seg(11.0, 21.0), seg(22.0, 32.0)]).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[1].segments.len(), 1);
        let s = segment_scenes(&[seg(0.0, 1.0), seg(6.0, 7.0)]).unwrap();
        assert_eq!(s.len(), 1);
        let s = segment_scenes(&[seg(0.0, 1.0), seg(2.0, 40.0), seg(41.0, 42.0)]).unwrap();
        assert_eq!(s.len(), 3);
        assert!(s[1].oversized && !s[0].oversized && !s[2].oversized);
        assert!(matches!(
            segment_scenes(&[seg(3.0, 4.0), seg(1.0, 2.0)]),
            Err(Error::UnsortedInput(1))
        ));
    }

    #[test]
    fn stats_examples() {
        let scene = |n: usize| Scene {
            scene_id: "s".into(),
            segments: (0..n).map(|i| seg(i as f64, i as f64 + 0.5)).collect(),
            oversized: false,
        };
        let st = compute_stats(&[CuratedFile {
            file_id: "f".into(),
            scenes: vec![scene(3), scene(4)],
        }]);
        assert_eq!(st.avg_sentences_per_scene, 3.5);
        assert!((st.total_hours - 3.5 / 3600.0).abs() < 1e-15);
        let empty = compute_stats(&[]);
        assert_eq!(empty.n_scenes, 0);
        assert_eq!(empty.avg_scenes_per_audio, 0.0);
        assert_eq!(empty.avg_speakers_per_scene, 0.0);
    }
}
