//! Shared fixtures for integration tests.
#![allow(dead_code)]

use mclp_core::curation::{StyleLabel, TranscriptSegment};
use mclp_core::world::{SceneRecord, TurnRecord};

pub fn segs(spec: &str) -> Vec<TranscriptSegment> {
    spec.split_whitespace()
        .map(|p| {
            let (a, b) = p.split_once('-').unwrap();
            TranscriptSegment {
                text: p.to_string(),
                start: a.parse().unwrap(),
                end: b.parse().unwrap(),
                speaker: None,
            }
        })
        .collect()
}

pub fn run_of(n: usize) -> String {
    (0..n).map(|i| format!("{i}-{}", i + 1)).collect::<Vec<_>>().join(" ")
}

/// Scene segmentation cases: (segments, expected scene sizes, indices of
/// oversized scenes).
pub fn golden() -> Vec<(String, Vec<usize>, Vec<usize>)> {
    let c = |s: &str, sizes: &[usize], big: &[usize]| (s.to_string(), sizes.to_vec(), big.to_vec());
    vec![
        c("0-1 6-7", &[2], &[]),
        c("0-1 6.000001-7", &[1, 1], &[]),
        c("0-10 10-30", &[2], &[]),
        c("0-10 10-30.5", &[1, 1], &[]),
        c("0-31", &[1], &[0]),
        c("", &[], &[]),
        c("0-1", &[1], &[]),
        c("0-5 5-10 10-15 15-20 20-25 25-30", &[6], &[]),
        c("0-5 5-10 10-15 15-20 20-25 25-30 30-31", &[6, 1], &[]),
        c("0-1 4-5 9-10 14.5-15", &[4], &[]),
        c("0-1 6.5-7 7.5-8", &[1, 2], &[]),
        c("0-2 2-4 20-22 22-24", &[2, 2], &[]),
        c("0-29 29.5-30", &[2], &[]),
        c("0-29 29.5-30.25", &[1, 1], &[]),
        c("0-29 34-35", &[1, 1], &[]),
        c("0-40 41-42", &[1, 1], &[0]),
        c("0-40 40-41", &[1, 1], &[0]),
        c("0-1 1-2 2-3", &[3], &[]),
        c("0-1 0.5-1.5", &[2], &[]),
        c("0-10 0-20 0-30", &[3], &[]),
        c("0-10 0-20 0-31", &[2, 1], &[1]),
        c("10-20 25-35 40-41", &[2, 1], &[]),
        c("100-101 105-106 110-111 115-116 120-121 125-126 129-130", &[7], &[]),
        c("100-101 105-106 110-111 115-116 120-121 125-126 129-130 130-130.5", &[7, 1], &[]),
        c("0-1 6-7 12-13", &[3], &[]),
        c("0-1 6-7 12.25-13", &[2, 1], &[]),
        c("0-15 20-30 35-40", &[2, 1], &[]),
        c("0-0.5 5.5-6 11-11.5 16.5-17 22-22.5 27.5-28 33-33.5", &[6, 1], &[]),
        c("0-30", &[1], &[]),
        c("0-30 30-30.125", &[1, 1], &[]),
        c("0-30.125", &[1], &[0]),
        c("0-1 2-3 3-4 50-51 52-53", &[3, 2], &[]),
        c("0-1 100-101 200-201", &[1, 1, 1], &[]),
        c("0-2 7-8 8-9 20-21 25-26 26-27 28-29", &[3, 4], &[]),
        c("0-0.25 5.25-5.5", &[2], &[]),
        c("1.5-2.5 7.5-8.5", &[2], &[]),
        c("0-4 9-13 18-22 27-30", &[4], &[]),
        c("0-4 9-13 18-22 27-30.25", &[3, 1], &[]),
        c("0-10 15-20 25-30 35-40 45-50 55-60", &[3, 3], &[]),
        (run_of(31), vec![30, 1], vec![]),
        c("0-5 10-15 20-25", &[3], &[]),
        c("0-5 10-15 20-25 30-31", &[3, 1], &[]),
        c("0-5 10.5-15", &[1, 1], &[]),
        c("5-6 5-6 5-6", &[3], &[]),
        c("0-35 36-37 38-39", &[1, 2], &[0]),
        c("0-1 5.5-6 10.5-11 40-41 45-46", &[3, 2], &[]),
        c("0-20 25-30 30-40", &[2, 1], &[]),
        c("0-2 7-8 13-14", &[3], &[]),
        c("0-2 7-8 13.5-14", &[2, 1], &[]),
        c("2-3 8-9", &[2], &[]),
    ]
}


/// Minimal scene record whose turns have the given transcript lengths.
pub fn record(id: &str, source: &str, turn_lens: &[usize]) -> SceneRecord {
    SceneRecord {
        scene_id: id.into(),
        source_id: source.into(),
        scene_text: vec![],
        profiles: vec![vec![1]],
        turns: turn_lens
            .iter()
            .map(|&n| TurnRecord {
                speaker: 0,
                instruction: vec![],
                text: vec![0; n],
                audio: vec![],
                utterance: None,
                start: None,
                end: None,
            })
            .collect(),
        oracle_private: None,
    }
}

/// Labeled RL-filter fixture: (id, turn lengths, label, kept).
pub fn rl_fixture() -> Vec<(&'static str, Vec<usize>, StyleLabel, bool)> {
    use StyleLabel::*;
    // (id, turn lengths, label, kept)
    vec![
        ("one-turn", vec![20], NotNeutral, false),
        ("two-turns", vec![3, 11], NotNeutral, true),
        ("six-turns", vec![1, 1, 1, 1, 1, 11], NotNeutral, true),
        ("seven-turns", vec![1, 1, 1, 1, 1, 1, 11], NotNeutral, false),
        ("final-ten", vec![3, 10], NotNeutral, false),
        ("final-eleven", vec![3, 11], NotNeutral, true),
        ("long-first-short-last", vec![30, 5], NotNeutral, false),
        ("neutral", vec![3, 20], Neutral, false),
        ("neutral-long", vec![3, 3, 40], Neutral, false),
        ("five-turns", vec![2, 2, 2, 2, 12], NotNeutral, true),
        ("empty-final", vec![3, 0], NotNeutral, false),
    ]
}
