//! Corpus manifest, loading with skip-and-report, and dataset splits.

use crate::align::{load_transcripts, TimedTranscript};
use crate::motion::{load_motion, MotionSequence};
use crate::{Error, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub motion: PathBuf,
    pub transcript: PathBuf,
    pub speaker: String,
    pub split: Split,
}

/// JSON-lines corpus manifest, one utterance per line.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CorpusManifest {
    pub entries: Vec<ManifestEntry>,
}

impl CorpusManifest {
    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for e in &self.entries {
            if !seen.insert(&e.id) {
                return Err(Error::Data(format!("duplicate utterance id {:?}", e.id)));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = String::new();
        for e in &self.entries {
            buf.push_str(&serde_json::to_string(e)?);
            buf.push('\n');
        }
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            entries.push(serde_json::from_str(line).map_err(|e| {
                Error::Data(format!("{}:{}: {e}", path.display(), i + 1))
            })?);
        }
        let m = Self { entries };
        m.validate()?;
        Ok(m)
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }
}

/// Counts and reasons for utterances dropped during loading.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct LoadReport {
    pub loaded: usize,
    pub skipped: usize,
    pub reasons: Vec<String>,
}

/// A fully loaded utterance.
#[derive(Debug, Clone)]
pub struct Utterance {
    pub entry: ManifestEntry,
    pub motion: MotionSequence,
    pub transcript: TimedTranscript,
}

/// Load every manifest entry, skipping (and reporting) bad ones.
///
/// `duration_tolerance` is the allowed |motion − transcript| duration gap in
/// seconds; pass one token span's worth (frames_per_token / fps).
pub fn load_corpus(
    manifest: &CorpusManifest,
    duration_tolerance: f64,
) -> (Vec<Utterance>, LoadReport) {
    let mut report = LoadReport::default();
    let mut out = Vec::new();
    let mut fps: Option<f64> = None;
    for entry in &manifest.entries {
        match load_one(entry, duration_tolerance, &mut fps) {
            Ok(u) => {
                report.loaded += 1;
                out.push(u);
            }
            Err(e) => {
                report.skipped += 1;
                report.reasons.push(format!("{}: {e}", entry.id));
            }
        }
    }
    (out, report)
}

fn load_one(
    entry: &ManifestEntry,
    duration_tolerance: f64,
    fps: &mut Option<f64>,
) -> Result<Utterance> {
    let motion = load_motion(&entry.motion)?;
    match fps {
        Some(f) if (*f - motion.fps).abs() > 1e-9 => {
            return Err(Error::Data(format!(
                "fps {} disagrees with corpus fps {f}",
                motion.fps
            )));
        }
        None => *fps = Some(motion.fps),
        _ => {}
    }
    let transcripts = load_transcripts(&entry.transcript)?;
    let transcript = transcripts
        .into_iter()
        .find(|t| t.id == entry.id)
        .ok_or_else(|| {
            Error::Data(format!("transcript file has no utterance {:?}", entry.id))
        })?;
    let gap = (motion.duration_secs() - transcript.duration()).abs();
    if gap > duration_tolerance {
        return Err(Error::Data(format!(
            "motion/transcript duration gap {gap:.3}s exceeds tolerance {duration_tolerance:.3}s"
        )));
    }
    Ok(Utterance { entry: entry.clone(), motion, transcript })
}

/// Assign splits utterance-level, seed-deterministically, stratified by
/// speaker: each speaker's utterances are divided by the ratios separately
/// (largest-remainder rounding), so every speaker with enough utterances is
/// represented in the training split.
pub fn split_corpus(
    manifest: &mut CorpusManifest,
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<()> {
    let (rt, rv, rs) = ratios;
    if rt < 0.0 || rv < 0.0 || rs < 0.0 || ((rt + rv + rs) - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidInput(format!("split ratios {ratios:?} must sum to 1")));
    }
    let mut by_speaker: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, e) in manifest.entries.iter().enumerate() {
        by_speaker.entry(e.speaker.clone()).or_default().push(i);
    }
    // Global targets are exact; each speaker first gets its proportional
    // floor of every split, then leftovers go to whichever split is furthest
    // below its global target. This keeps counts exact overall while every
    // speaker with enough utterances lands in train.
    let ratios_v = [rt, rv, rs];
    let splits = [Split::Train, Split::Val, Split::Test];
    let target = largest_remainder(manifest.entries.len(), &ratios_v);
    let mut assigned = [0usize; 3];
    for (speaker, mut idxs) in by_speaker {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fxhash(&speaker));
        idxs.shuffle(&mut rng);
        let mut counts: Vec<usize> =
            ratios_v.iter().map(|r| (r * idxs.len() as f64).floor() as usize).collect();
        let mut leftover = idxs.len() - counts.iter().sum::<usize>();
        while leftover > 0 {
            let k = (0..3)
                .max_by_key(|&k| (target[k] as i64 - (assigned[k] + counts[k]) as i64, 2 - k))
                .unwrap();
            counts[k] += 1;
            leftover -= 1;
        }
        let mut k = 0usize;
        for &i in &idxs {
            while counts[k] == 0 {
                k += 1;
            }
            manifest.entries[i].split = splits[k];
            counts[k] -= 1;
            assigned[k] += 1;
        }
    }
    for (split, ratio) in [(Split::Train, rt), (Split::Val, rv), (Split::Test, rs)] {
        if ratio > 0.0 && manifest.split(split).next().is_none() {
            return Err(Error::Data(format!(
                "too few utterances: {split:?} split (ratio {ratio}) is empty"
            )));
        }
    }
    Ok(())
}

/// Integer apportionment of `n` by `ratios` with exact total.
fn largest_remainder(n: usize, ratios: &[f64]) -> Vec<usize> {
    let exact: Vec<f64> = ratios.iter().map(|r| r * n as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let mut leftover = n - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..ratios.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if leftover == 0 {
            break;
        }
        counts[i] += 1;
        leftover -= 1;
    }
    counts
}

fn fxhash(s: &str) -> u64 {
    // Small stable string hash (FNV-1a) so per-speaker rng streams differ.
    let mut h: u64 = 0xcbf29ce484222325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::align::{save_transcripts, TimedWord};
    use crate::motion::save_motion;

    fn entry(id: &str, speaker: &str) -> ManifestEntry {
        ManifestEntry {
            id: id.into(),
            motion: PathBuf::from(format!("{id}.gmot")),
            transcript: PathBuf::from(format!("{id}.jsonl")),
            speaker: speaker.into(),
            split: Split::Train,
        }
    }

    #[test]
    fn manifest_rejects_duplicate_ids_and_round_trips() {
        let m = CorpusManifest { entries: vec![entry("a", "s0"), entry("a", "s1")] };
        assert!(m.validate().is_err());
        let m = CorpusManifest { entries: vec![entry("a", "s0"), entry("b", "s1")] };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.jsonl");
        m.save(&path).unwrap();
        assert_eq!(CorpusManifest::load(&path).unwrap(), m);
    }

    #[test]
    fn split_is_exact_and_deterministic() {
        let mut m = CorpusManifest {
            entries: (0..100).map(|i| entry(&format!("u{i}"), "s0")).collect(),
        };
        split_corpus(&mut m, (0.8, 0.1, 0.1), 42).unwrap();
        assert_eq!(m.split(Split::Train).count(), 80);
        assert_eq!(m.split(Split::Val).count(), 10);
        assert_eq!(m.split(Split::Test).count(), 10);
        let splits1: Vec<Split> = m.entries.iter().map(|e| e.split).collect();
        split_corpus(&mut m, (0.8, 0.1, 0.1), 42).unwrap();
        let splits2: Vec<Split> = m.entries.iter().map(|e| e.split).collect();
        assert_eq!(splits1, splits2);
        // A different seed rearranges but keeps the counts.
        split_corpus(&mut m, (0.8, 0.1, 0.1), 7).unwrap();
        let splits3: Vec<Split> = m.entries.iter().map(|e| e.split).collect();
        assert_ne!(splits1, splits3);
        assert_eq!(m.split(Split::Train).count(), 80);
    }

    #[test]
    fn every_speaker_with_three_utterances_reaches_train() {
        let mut entries = Vec::new();
        for s in 0..10 {
            for i in 0..3 {
                entries.push(entry(&format!("u{s}_{i}"), &format!("s{s}")));
            }
        }
        let mut m = CorpusManifest { entries };
        split_corpus(&mut m, (0.8, 0.1, 0.1), 0).unwrap();
        for s in 0..10 {
            let speaker = format!("s{s}");
            assert!(
                m.split(Split::Train).any(|e| e.speaker == speaker),
                "speaker {speaker} missing from train"
            );
        }
    }

    #[test]
    fn bad_ratios_and_too_small_corpora_error() {
        let mut m = CorpusManifest { entries: vec![entry("a", "s0")] };
        assert!(split_corpus(&mut m, (0.5, 0.2, 0.2), 0).is_err());
        // One utterance cannot fill three nonempty splits.
        assert!(split_corpus(&mut m, (0.4, 0.3, 0.3), 0).is_err());
    }

    #[test]
    fn load_skips_and_reports_bad_entries() {
        let dir = tempfile::tempdir().unwrap();
        // Good utterance: 30-frame motion at 15 fps, 2 s transcript.
        let motion = MotionSequence::constant(crate::motion::Rotation6D::IDENTITY, 30, 2, 15.0).unwrap();
        let mpath = dir.path().join("good.gmot");
        save_motion(&mpath, &motion).unwrap();
        let t = TimedTranscript {
            id: "good".into(),
            words: vec![TimedWord { text: "hi".into(), start: 0.0, end: 2.0 }],
        };
        let tpath = dir.path().join("good.jsonl");
        save_transcripts(&[t], &tpath).unwrap();
        let good = ManifestEntry {
            id: "good".into(),
            motion: mpath,
            transcript: tpath.clone(),
            speaker: "s0".into(),
            split: Split::Train,
        };
        // Bad utterance: missing motion file.
        let bad = ManifestEntry {
            id: "bad".into(),
            motion: dir.path().join("missing.gmot"),
            transcript: tpath,
            speaker: "s0".into(),
            split: Split::Train,
        };
        let manifest = CorpusManifest { entries: vec![good, bad] };
        let (utts, report) = load_corpus(&manifest, 0.5);
        assert_eq!(report.loaded, 1);
        assert_eq!(report.skipped, 1);
        assert_eq!(utts.len(), 1);
        assert!(report.reasons[0].contains("bad"));
    }

    #[test]
    fn duration_mismatch_is_skipped_with_reason() {
        let dir = tempfile::tempdir().unwrap();
        let motion = MotionSequence::constant(crate::motion::Rotation6D::IDENTITY, 30, 2, 15.0).unwrap(); // 2 s
        let mpath = dir.path().join("u.gmot");
        save_motion(&mpath, &motion).unwrap();
        let t = TimedTranscript {
            id: "u".into(),
            words: vec![TimedWord { text: "hi".into(), start: 0.0, end: 9.0 }],
        };
        let tpath = dir.path().join("u.jsonl");
        save_transcripts(&[t], &tpath).unwrap();
        let manifest = CorpusManifest {
            entries: vec![ManifestEntry {
                id: "u".into(),
                motion: mpath,
                transcript: tpath,
                speaker: "s0".into(),
                split: Split::Train,
            }],
        };
        let (utts, report) = load_corpus(&manifest, 0.5);
        assert!(utts.is_empty());
        assert!(report.reasons[0].contains("duration"));
    }

    #[test]
    fn empty_manifest_loads_to_empty_report() {
        let (utts, report) = load_corpus(&CorpusManifest::default(), 0.5);
        assert!(utts.is_empty());
        assert_eq!(report.loaded + report.skipped, 0);
    }
}
