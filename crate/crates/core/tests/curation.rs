use std::collections::{HashMap, HashSet};

use mclp_core::curation::*;
use mclp_core::world::SceneRecord;
use mclp_core::Error;
use proptest::prelude::*;

mod common;
use common::{golden, record, rl_fixture, segs};

#[test]
fn golden_segmentation_corpus() {
    let cases = golden();
    assert_eq!(cases.len(), 50);
    for (spec, sizes, big) in cases {
        let input = segs(&spec);
        let scenes = segment_scenes(&input).unwrap();
        let got: Vec<usize> = scenes.iter().map(|s| s.segments.len()).collect();
        assert_eq!(got, sizes, "case {spec:?}");
        let got_big: Vec<usize> = (0..scenes.len()).filter(|&i| scenes[i].oversized).collect();
        assert_eq!(got_big, big, "oversized flags for {spec:?}");
        for (i, s) in scenes.iter().enumerate() {
            assert_eq!(s.scene_id, format!("scene-{i:05}"));
        }
    }
}

#[test]
fn unsorted_input_is_rejected() {
    assert!(matches!(segment_scenes(&segs("0-1 5-6 3-4")), Err(Error::UnsortedInput(2))));
}

fn sorted_segments() -> impl Strategy<Value = Vec<TranscriptSegment>> {
    // Quarter-second grid keeps boundary comparisons exact.
    prop::collection::vec((0u32..40, 1u32..60), 0..40).prop_map(|steps| {
        let mut t = 0u32;
        steps
            .into_iter()
            .map(|(gap, dur)| {
                t += gap;
                let s = TranscriptSegment {
                    text: String::new(),
                    start: t as f64 / 4.0,
                    end: (t + dur) as f64 / 4.0,
                    speaker: None,
                };
                s
            })
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn segmentation_is_a_maximal_valid_partition(input in sorted_segments()) {
        let scenes = segment_scenes(&input).unwrap();
        let flat: Vec<TranscriptSegment> = scenes.iter().flat_map(|s| s.segments.clone()).collect();
        prop_assert_eq!(&flat, &input);
        for s in &scenes {
            prop_assert!(!s.segments.is_empty());
            for w in s.segments.windows(2) {
                prop_assert!(w[1].start - w[0].end <= MAX_GAP);
            }
            let span = s.segments.iter().map(|x| x.end).fold(f64::NEG_INFINITY, f64::max)
                - s.segments[0].start;
            if s.segments.len() > 1 {
                prop_assert!(s.segments.last().unwrap().end - s.segments[0].start <= MAX_SPAN);
            }
            prop_assert_eq!(s.oversized, s.segments.len() == 1 && span > MAX_SPAN);
        }
        for w in scenes.windows(2) {
            let prev = &w[0].segments;
            let next = &w[1].segments[0];
            let fits = next.start - prev.last().unwrap().end <= MAX_GAP
                && next.end - prev[0].start <= MAX_SPAN;
            prop_assert!(!fits, "scene boundary was not forced");
        }
        // Re-segmenting each scene on its own changes nothing.
        for s in &scenes {
            let again = segment_scenes(&s.segments).unwrap();
            prop_assert_eq!(again.len(), 1);
            prop_assert_eq!(&again[0].segments, &s.segments);
        }
    }
}

/// Overlap by counting quarter-second cells covered by both intervals.
fn grid_overlap(a: (f64, f64), b: (f64, f64)) -> f64 {
    let lo = (a.0.max(b.0) * 4.0) as i64;
    let hi = (a.1.min(b.1) * 4.0) as i64;
    (lo..hi)
        .filter(|&k| {
            let mid = (k as f64 + 0.5) / 4.0;
            a.0 <= mid && mid < a.1 && b.0 <= mid && mid < b.1
        })
        .count() as f64
        / 4.0
}

fn brute_assign(seg: &TranscriptSegment, rttm: &[RttmSegment]) -> String {
    let mut best: Option<(String, f64, f64)> = None;
    let mut names: Vec<&str> = rttm.iter().map(|r| r.speaker.as_str()).collect();
    names.sort();
    names.dedup();
    for name in names {
        let mine: Vec<&RttmSegment> = rttm.iter().filter(|r| r.speaker == name).collect();
        let ov: f64 = mine.iter().map(|r| grid_overlap((seg.start, seg.end), (r.onset, r.end()))).sum();
        if ov == 0.0 {
            continue;
        }
        let onset = mine
            .iter()
            .filter(|r| grid_overlap((seg.start, seg.end), (r.onset, r.end())) > 0.0)
            .map(|r| r.onset)
            .fold(f64::INFINITY, f64::min);
        let better = match &best {
            None => true,
            Some((_, bov, bon)) => ov > *bov || (ov == *bov && onset < *bon),
        };
        if better {
            best = Some((name.to_string(), ov, onset));
        }
    }
    best.map_or(UNKNOWN_SPEAKER.to_string(), |b| b.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn speaker_assignment_matches_grid_integration(
        turns in prop::collection::vec((0u32..80, 1u32..20, 0usize..3), 1..12),
        probes in prop::collection::vec((0u32..90, 1u32..20), 1..10),
    ) {
        let rttm: Vec<RttmSegment> = turns
            .iter()
            .map(|&(on, d, s)| RttmSegment {
                file_id: "f".into(),
                channel: 1,
                onset: on as f64 / 4.0,
                duration: d as f64 / 4.0,
                speaker: format!("spk{s}"),
            })
            .collect();
        let input: Vec<TranscriptSegment> = probes
            .iter()
            .map(|&(s, d)| TranscriptSegment {
                text: "x".into(),
                start: s as f64 / 4.0,
                end: (s + d) as f64 / 4.0,
                speaker: None,
            })
            .collect();
        let out = assign_speakers(&input, &rttm);
        for (seg, got) in input.iter().zip(&out) {
            prop_assert_eq!(got.speaker.clone().unwrap(), brute_assign(seg, &rttm));
        }
        prop_assert_eq!(assign_speakers(&out, &rttm), out.clone());
    }
}

#[test]
fn rttm_round_trip_and_errors() {
    let text = "SPEAKER ep1 1 0.5 2.25 <NA> <NA> alice <NA> <NA>\n\
                SPKR-INFO ep1 1 <NA> <NA> <NA> unknown alice <NA> <NA>\n\
                SPEAKER ep1 1 3 1 <NA> <NA> bob <NA> <NA>\n";
    let parsed = parse_rttm(text).unwrap();
    assert_eq!(parsed.len(), 2);
    assert_eq!(parsed[0].speaker, "alice");
    assert_eq!(parsed[0].end(), 2.75);
    let again: String = parsed.iter().map(|r| r.to_line() + "\n").collect();
    assert_eq!(parse_rttm(&again).unwrap(), parsed);
    let bad = "SPEAKER ep1 1 0.5 <NA> <NA> alice <NA> <NA>\n";
    assert!(matches!(parse_rttm(bad), Err(Error::MalformedLine { line: 1, .. })));
    let neg = "\nSPEAKER ep1 1 0.5 -1 <NA> <NA> alice <NA> <NA>\n";
    assert!(matches!(parse_rttm(neg), Err(Error::MalformedLine { line: 2, .. })));
}

#[test]
fn rl_filter_on_labeled_fixture() {
    let fixture = rl_fixture();
    let scenes: Vec<SceneRecord> = fixture.iter().map(|(id, l, _, _)| record(id, "src", l)).collect();
    let labels: HashMap<String, StyleLabel> =
        fixture.iter().map(|(id, _, lab, _)| (id.to_string(), *lab)).collect();
    let kept: Vec<String> = filter_rl(&scenes, &labels).unwrap().into_iter().map(|s| s.scene_id).collect();
    let want: Vec<String> = fixture.iter().filter(|f| f.3).map(|f| f.0.to_string()).collect();
    assert_eq!(kept, want);

    let mut partial = labels.clone();
    partial.remove("neutral");
    assert!(matches!(filter_rl(&scenes, &partial), Err(Error::MissingLabel(id)) if id == "neutral"));
}

#[test]
fn stratification_at_full_scale() {
    // 300 candidates per turn count over sources s0..s99; s0..s19 are training sources.
    let mut pool = Vec::new();
    for turns in 1..=7 {
        for i in 0..300 {
            let src = format!("s{}", (i * 7 + turns) % 100);
            pool.push(record(&format!("t{turns}-{i:03}"), &src, &vec![12; turns]));
        }
    }
    let train: HashSet<String> = (0..20).map(|i| format!("s{i}")).collect();
    let test = stratify_test(&pool, 180, [2, 6], 7, &train).unwrap();
    assert_eq!(test.len(), 900);
    for t in 2..=6 {
        assert_eq!(test.iter().filter(|s| s.turns.len() == t).count(), 180);
    }
    assert!(test.iter().all(|s| !train.contains(&s.source_id)));
    let ids: HashSet<&str> = test.iter().map(|s| s.scene_id.as_str()).collect();
    assert_eq!(ids.len(), 900);

    let mut shuffled = pool.clone();
    shuffled.reverse();
    assert_eq!(stratify_test(&shuffled, 180, [2, 6], 7, &train).unwrap(), test);
    assert_ne!(stratify_test(&pool, 180, [2, 6], 8, &train).unwrap(), test);

    let err = stratify_test(&pool, 250, [2, 6], 7, &train).unwrap_err();
    assert!(matches!(err, Error::InsufficientScenes { turns: 2, needed: 250, available: 240 }));
}

fn scene_with(n_sentences: usize, n_speakers: usize) -> Scene {
    Scene {
        scene_id: String::new(),
        segments: (0..n_sentences)
            .map(|i| TranscriptSegment {
                text: String::new(),
                start: i as f64,
                end: i as f64 + 1.0,
                speaker: Some(format!("spk{}", i % n_speakers)),
            })
            .collect(),
        oversized: false,
    }
}

#[test]
fn corpus_statistics_match_filtered_row_ratios() {
    // 100 recordings, 3787 scenes, 27645 sentences and 8824 scene-speaker slots
    // reproduce the filtered corpus averages 37.87 / 7.30 / 2.33.
    let mut files = Vec::new();
    let mut k = 0usize;
    for f in 0..100 {
        let n = if f < 87 { 38 } else { 37 };
        let scenes = (0..n)
            .map(|_| {
                let sentences = if k < 1136 { 8 } else { 7 };
                let speakers = if k < 1250 { 3 } else { 2 };
                k += 1;
                scene_with(sentences, speakers)
            })
            .collect();
        files.push(CuratedFile { file_id: format!("f{f}"), scenes });
    }
    let st = compute_stats(&files);
    assert_eq!((st.n_audio, st.n_scenes, st.n_sentences, st.n_scene_speakers), (100, 3787, 27645, 8824));
    let r2 = |x: f64| (x * 100.0).round() / 100.0;
    assert_eq!(r2(st.avg_scenes_per_audio), 37.87);
    assert_eq!(r2(st.avg_sentences_per_scene), 7.30);
    assert_eq!(r2(st.avg_speakers_per_scene), 2.33);
    assert!((st.total_hours - 27645.0 / 3600.0).abs() < 1e-12);

    let empty = compute_stats(&[]);
    assert_eq!(empty.avg_scenes_per_audio, 0.0);
    assert_eq!(empty.avg_speakers_per_scene, 0.0);
}

#[test]
fn scene_records_index_speakers_by_first_appearance() {
    let mut segsv = segs("0-1 1-2 2-3");
    for (s, name) in segsv.iter_mut().zip(["bob", "amy", "bob"]) {
        s.speaker = Some(name.into());
    }
    let scene = &segment_scenes(&segsv).unwrap()[0];
    let rec = scene_record("ep7", scene);
    assert_eq!(rec.scene_id, "ep7/scene-00000");
    assert_eq!(rec.turns.iter().map(|t| t.speaker).collect::<Vec<_>>(), vec![0, 1, 0]);
    assert_eq!(rec.profiles, vec![text_units("bob"), text_units("amy")]);
    assert_eq!(rec.turns[0].text, text_units("0-1"));
}
