//! The shipped synthetic corpus against per-image labels and counts frozen
//! from `tests/oracles/corpus_oracle.py expect`.

use std::path::PathBuf;

use moodloop_core::aggregation::AggregationStrategy::{HighestPercentage, MostFrequent};
use moodloop_core::corpus::{analyze_corpus, write_report_to};
use moodloop_core::emotion::Emotion;
use moodloop_core::frame::{FixtureBackend, FixtureDetector, FixtureLabels};

const EXPECTED: &str = "\
img_000 surprise surprise
img_001 sad sad
img_002 surprise surprise
img_003 fear angry
img_004 sad sad
img_005 none
img_006 sad sad
img_007 happy happy
img_008 happy happy
img_009 sad sad
img_010 sad sad
img_011 happy happy
img_012 disgust disgust
img_013 sad sad
img_014 neutral neutral
img_015 surprise surprise
img_016 surprise surprise
img_017 none
img_018 fear fear
img_019 happy surprise
img_020 neutral neutral
img_021 happy happy
img_022 neutral neutral
img_023 happy happy
img_024 neutral neutral
img_025 disgust disgust
img_026 neutral neutral
img_027 disgust sad
img_028 sad sad
img_029 none
img_030 surprise surprise
img_031 neutral neutral
img_032 surprise surprise
img_033 fear disgust
img_034 disgust disgust
img_035 fear fear
img_036 neutral neutral
img_037 sad sad
img_038 neutral neutral
img_039 neutral neutral
img_040 sad sad
img_041 none
img_042 angry angry
img_043 fear fear
img_044 sad sad
img_045 fear fear
img_046 disgust disgust
img_047 happy happy
img_048 neutral neutral
img_049 happy happy";

const HIGHEST: [usize; 7] = [1, 5, 6, 8, 10, 6, 10];
const FREQUENT: [usize; 7] = [2, 5, 4, 7, 11, 7, 10];

fn corpus_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/corpus")
}

#[test]
fn synthetic_corpus_matches_oracle() {
    let dir = corpus_dir();
    let labels = FixtureLabels::load(&dir.join("labels.txt")).unwrap();
    let report = analyze_corpus(
        &dir,
        &FixtureDetector::new(labels.clone()),
        &FixtureBackend::new(&labels),
        &[HighestPercentage, MostFrequent],
    )
    .unwrap();

    let mut no_faces = Vec::new();
    for line in EXPECTED.lines() {
        let parts: Vec<&str> = line.split(' ').collect();
        if parts[1] == "none" {
            no_faces.push(parts[0].to_owned());
            continue;
        }
        let hp: Emotion = parts[1].parse().unwrap();
        let mf: Emotion = parts[2].parse().unwrap();
        assert_eq!(report.label(parts[0], HighestPercentage), Some(hp), "{}", parts[0]);
        assert_eq!(report.label(parts[0], MostFrequent), Some(mf), "{}", parts[0]);
    }
    assert_eq!(report.no_faces, no_faces);
    assert_eq!(report.counts(HighestPercentage), Some(HIGHEST));
    assert_eq!(report.counts(MostFrequent), Some(FREQUENT));
    assert_eq!(HIGHEST.iter().sum::<usize>(), report.images.len());

    let mut bytes = Vec::new();
    write_report_to(&report, &mut bytes).unwrap();
    assert!(bytes.starts_with(b"image_id,highest_percentage,most_frequent\nimg_000,surprise,surprise\n"));
}
