//! Deterministic synthetic gesture–text corpus generator.
//!
//! Every utterance embeds exactly one marker from a task's label list inside
//! an ambiguous sentence template (the same template is valid for every
//! marker), so the text alone carries no marker information. With
//! probability `p_cue` the marker's distinctive motion motif — a short
//! rotation trajectory on the wrist and elbow — is inserted time-aligned to
//! the marker word; otherwise the motion is neutral throughout. Gesture is
//! therefore the only disambiguating signal.

use super::manifest::{CorpusManifest, ManifestEntry, Split};
use crate::align::{save_transcripts, TimedTranscript, TimedWord};
use crate::motion::{
    axis_angle_to_rotmat, rotmat_to_sixd, save_motion, MotionSequence, Rotation6D,
};
use crate::{Error, Result};
use nalgebra::Vector3;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub seed: u64,
    /// Task tag recorded in ids/filenames (e.g. "discourse").
    pub task: String,
    /// Markers; every one gets a distinct motif. Multi-word markers allowed.
    pub markers: Vec<String>,
    /// Sentence templates with a `{m}` marker slot; all must be plausible
    /// for every marker so text is uninformative.
    pub templates: Vec<String>,
    pub utterances: usize,
    pub p_cue: f64,
    /// Std-dev (radians) of per-frame rotational noise on cue joints.
    pub noise_std: f64,
    pub fps: f64,
    pub n_joints: usize,
    /// Frames per word; one word spans `word_frames / fps` seconds.
    pub word_frames: usize,
    pub speakers: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            task: "discourse".into(),
            markers: Vec::new(),
            templates: Vec::new(),
            utterances: 64,
            p_cue: 1.0,
            noise_std: 0.02,
            fps: 15.0,
            n_joints: 13,
            word_frames: 8,
            speakers: 4,
        }
    }
}

/// Ambiguous sentence templates for each built-in task. None of the template
/// words collide with any task's marker list.
pub fn default_templates(task: &str) -> Vec<String> {
    let t: &[&str] = match task {
        "discourse" => &[
            "i was tired {m} i kept going",
            "we stayed inside {m} it rained hard",
            "she smiled {m} he waved back",
            "they argued {m} they agreed eventually",
        ],
        "quantifier" => &[
            "we saw {m} birds at the lake",
            "there were {m} people in town",
            "he counted {m} coins on the table",
            "i heard {m} songs last night",
        ],
        "stance" => &[
            "that was {m} good i believe",
            "it is {m} true in my view",
            "she was {m} right about him",
            "this seems {m} useful to me",
        ],
        _ => &[],
    };
    t.iter().map(|s| s.to_string()).collect()
}

/// Per-utterance generation record (audit output; the evaluation pipeline
/// recovers gold markers from the text alone).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthRecord {
    pub id: String,
    pub marker: String,
    pub marker_index: usize,
    pub template_index: usize,
    pub cued: bool,
    /// Frame range of the marker word(s).
    pub marker_frames: (usize, usize),
}

/// Amplitude and rotation axis of one marker's motif.
fn motif_axis(index: usize) -> (Vector3<f64>, f64) {
    // Evenly spread axes on the sphere via the golden-angle spiral so all
    // motifs are pairwise distinct.
    let golden = std::f64::consts::PI * (3.0 - 5.0f64.sqrt());
    let i = index as f64 + 0.5;
    let z = 1.0 - 2.0 * i / 64.0;
    let r = (1.0 - z * z).max(0.0).sqrt();
    let theta = golden * i;
    let axis = Vector3::new(r * theta.cos(), r * theta.sin(), z).normalize();
    let amplitude = 0.7 + 0.1 * (index % 3) as f64;
    (axis, amplitude)
}

/// The motif's local rotation at phase `u` in [0, 1]: a sine-profiled swing
/// about the marker's axis (zero at both ends, so it joins the idle pose
/// continuously).
pub fn motif_rotation(marker_index: usize, u: f64) -> Rotation6D {
    let (axis, amplitude) = motif_axis(marker_index);
    let angle = amplitude * (std::f64::consts::PI * u.clamp(0.0, 1.0)).sin();
    rotmat_to_sixd(&axis_angle_to_rotmat(&axis, angle)).expect("motif rotation is orthonormal")
}

/// The noise-free motif trajectory over `len` frames (cue joints only).
pub fn motif_trajectory(marker_index: usize, len: usize) -> Vec<Rotation6D> {
    (0..len)
        .map(|t| motif_rotation(marker_index, (t as f64 + 0.5) / len as f64))
        .collect()
}

/// Joints carrying the motif: the last two joints of the skeleton (wrist and
/// elbow of the right arm in the default 13-joint layout).
pub fn cue_joints(n_joints: usize) -> [usize; 2] {
    [n_joints - 2, n_joints - 1]
}

fn validate(cfg: &SynthConfig) -> Result<()> {
    if cfg.markers.is_empty() || cfg.templates.is_empty() {
        return Err(Error::Config("synthesis needs markers and templates".into()));
    }
    if cfg.templates.iter().any(|t| !t.contains("{m}")) {
        return Err(Error::Config("every template must contain a {m} slot".into()));
    }
    if !(0.0..=1.0).contains(&cfg.p_cue) {
        return Err(Error::Config(format!("p_cue {} outside [0, 1]", cfg.p_cue)));
    }
    if cfg.n_joints < 2 || cfg.word_frames == 0 || cfg.utterances == 0 || cfg.speakers == 0 {
        return Err(Error::Config("degenerate synthesis dimensions".into()));
    }
    // Motif distinguishability: minimum pairwise trajectory distance.
    let len = cfg.word_frames;
    for a in 0..cfg.markers.len() {
        for b in (a + 1)..cfg.markers.len() {
            let (ta, tb) = (motif_trajectory(a, len), motif_trajectory(b, len));
            let dist: f64 = ta
                .iter()
                .zip(&tb)
                .map(|(x, y)| x.0.iter().zip(y.0.iter()).map(|(p, q)| (p - q).powi(2)).sum::<f64>())
                .sum();
            if dist < 1e-3 {
                return Err(Error::Config(format!(
                    "motifs for markers {:?} and {:?} are not distinguishable",
                    cfg.markers[a], cfg.markers[b]
                )));
            }
        }
    }
    Ok(())
}

/// Deterministic per-utterance rng stream, independent of generation order.
fn utterance_rng(seed: u64, index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (index as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

/// Snap a 6D rotation through f32 so motion files round-trip bitwise.
fn snap_f32(r: Rotation6D) -> Rotation6D {
    Rotation6D(r.0.map(|v| v as f32 as f64))
}

/// Generate one utterance in memory (exposed for oracles and tests).
pub fn generate_utterance(
    cfg: &SynthConfig,
    index: usize,
) -> Result<(MotionSequence, TimedTranscript, SynthRecord)> {
    let mut rng = utterance_rng(cfg.seed, index);
    let marker_index = rng.random_range(0..cfg.markers.len());
    let template_index = rng.random_range(0..cfg.templates.len());
    let cued = rng.random_range(0.0..1.0) < cfg.p_cue;
    let marker = &cfg.markers[marker_index];
    let id = format!("{}_{index:05}", cfg.task);

    // Words with per-word timing.
    let mut words: Vec<String> = Vec::new();
    let mut marker_word_range = (0, 0);
    for piece in cfg.templates[template_index].split_whitespace() {
        if piece == "{m}" {
            let start = words.len();
            words.extend(marker.split_whitespace().map(|w| w.to_string()));
            marker_word_range = (start, words.len());
        } else {
            words.push(piece.to_string());
        }
    }
    let word_secs = cfg.word_frames as f64 / cfg.fps;
    let timed: Vec<TimedWord> = words
        .iter()
        .enumerate()
        .map(|(i, w)| TimedWord {
            text: w.clone(),
            start: i as f64 * word_secs,
            end: (i + 1) as f64 * word_secs,
        })
        .collect();
    let transcript = TimedTranscript { id: id.clone(), words: timed };

    // Neutral motion with the motif superimposed over the marker word(s).
    let n_frames = words.len() * cfg.word_frames;
    let mut motion =
        MotionSequence::constant(Rotation6D::IDENTITY, n_frames, cfg.n_joints, cfg.fps)?;
    let marker_frames = (
        marker_word_range.0 * cfg.word_frames,
        marker_word_range.1 * cfg.word_frames,
    );
    if cued {
        let span = marker_frames.1 - marker_frames.0;
        for t in 0..span {
            let u = (t as f64 + 0.5) / span as f64;
            let base = motif_rotation(marker_index, u).to_rotmat()?;
            for j in cue_joints(cfg.n_joints).iter() {
                let rot = if cfg.noise_std > 0.0 {
                    let axis = Vector3::new(
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                    );
                    let axis = if axis.norm() < 1e-9 { Vector3::x() } else { axis.normalize() };
                    let angle: f64 = {
                        use rand_distr::Distribution;
                        rand_distr::Normal::new(0.0, cfg.noise_std)
                            .expect("valid noise std")
                            .sample(&mut rng)
                    };
                    base * axis_angle_to_rotmat(&axis, angle)
                } else {
                    base
                };
                motion.set_rotation(
                    marker_frames.0 + t,
                    *j,
                    snap_f32(rotmat_to_sixd(&rot)?),
                );
            }
        }
    }
    let record = SynthRecord {
        id,
        marker: marker.clone(),
        marker_index,
        template_index,
        cued,
        marker_frames,
    };
    Ok((motion, transcript, record))
}

/// Generate the corpus on disk: motion + transcript files, a manifest, and
/// an audit record file. Bit-reproducible for a fixed config.
pub fn generate_synthetic(
    cfg: &SynthConfig,
    out_dir: &Path,
) -> Result<(CorpusManifest, Vec<SynthRecord>)> {
    validate(cfg)?;
    std::fs::create_dir_all(out_dir)?;
    let mut entries = Vec::with_capacity(cfg.utterances);
    let mut records = Vec::with_capacity(cfg.utterances);
    for i in 0..cfg.utterances {
        let (motion, transcript, record) = generate_utterance(cfg, i)?;
        let motion_path = out_dir.join(format!("{}.gmot", record.id));
        let transcript_path = out_dir.join(format!("{}.jsonl", record.id));
        save_motion(&motion_path, &motion)?;
        save_transcripts(std::slice::from_ref(&transcript), &transcript_path)?;
        entries.push(ManifestEntry {
            id: record.id.clone(),
            motion: motion_path,
            transcript: transcript_path,
            speaker: format!("sp{}", i % cfg.speakers),
            split: Split::Train,
        });
        records.push(record);
    }
    let manifest = CorpusManifest { entries };
    manifest.save(&out_dir.join("manifest.jsonl"))?;
    let mut audit = String::new();
    for r in &records {
        audit.push_str(&serde_json::to_string(r)?);
        audit.push('\n');
    }
    std::fs::write(out_dir.join("synth_records.jsonl"), audit)?;
    Ok((manifest, records))
}

/// Classify an utterance by nearest motif on its marker-span frames
/// (cue-joint 6D trajectory, summed squared distance). With `p_cue` = 1 and
/// zero noise this identifies the marker exactly — the sanity oracle that
/// the gesture signal exists before any learning.
pub fn nearest_motif(
    motion: &MotionSequence,
    marker_frames: (usize, usize),
    n_markers: usize,
) -> Result<usize> {
    let (s, e) = marker_frames;
    if e <= s || e > motion.n_frames || n_markers == 0 {
        return Err(Error::InvalidInput(format!(
            "bad motif query: span ({s}, {e}), {n_markers} markers"
        )));
    }
    let joints = cue_joints(motion.n_joints);
    let mut best = (0usize, f64::INFINITY);
    for m in 0..n_markers {
        let motif = motif_trajectory(m, e - s);
        let mut dist = 0.0;
        for (t, target) in motif.iter().enumerate() {
            let target = snap_f32(*target);
            for &j in &joints {
                let actual = motion.rotation(s + t, j);
                dist += actual
                    .0
                    .iter()
                    .zip(target.0.iter())
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>();
            }
        }
        if dist < best.1 {
            best = (m, dist);
        }
    }
    Ok(best.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(markers: &[&str], p_cue: f64, noise: f64, n: usize) -> SynthConfig {
        SynthConfig {
            seed: 11,
            task: "discourse".into(),
            markers: markers.iter().map(|s| s.to_string()).collect(),
            templates: default_templates("discourse"),
            utterances: n,
            p_cue,
            noise_std: noise,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn generation_is_bit_reproducible() {
        let c = cfg(&["but", "so", "although"], 0.7, 0.05, 6);
        let dir1 = tempfile::tempdir().unwrap();
        let dir2 = tempfile::tempdir().unwrap();
        let (_, r1) = generate_synthetic(&c, dir1.path()).unwrap();
        let (_, r2) = generate_synthetic(&c, dir2.path()).unwrap();
        assert_eq!(r1, r2);
        for r in &r1 {
            let b1 = std::fs::read(dir1.path().join(format!("{}.gmot", r.id))).unwrap();
            let b2 = std::fs::read(dir2.path().join(format!("{}.gmot", r.id))).unwrap();
            assert_eq!(b1, b2, "{}", r.id);
        }
    }

    #[test]
    fn cue_free_corpus_has_neutral_motion_everywhere() {
        let c = cfg(&["but", "so"], 0.0, 0.05, 5);
        let dir = tempfile::tempdir().unwrap();
        let (manifest, records) = generate_synthetic(&c, dir.path()).unwrap();
        assert!(records.iter().all(|r| !r.cued));
        let (utts, report) = super::super::manifest::load_corpus(&manifest, 0.01);
        assert_eq!(report.skipped, 0);
        for u in &utts {
            for t in 0..u.motion.n_frames {
                for j in 0..u.motion.n_joints {
                    assert_eq!(u.motion.rotation(t, j).0, Rotation6D::IDENTITY.0);
                }
            }
        }
    }

    #[test]
    fn full_cue_zero_noise_is_identified_by_nearest_motif() {
        let markers = ["but", "so", "although", "because", "for example"];
        let c = cfg(&markers, 1.0, 0.0, 40);
        let dir = tempfile::tempdir().unwrap();
        let (manifest, records) = generate_synthetic(&c, dir.path()).unwrap();
        let (utts, report) = super::super::manifest::load_corpus(&manifest, 0.01);
        assert_eq!(report.skipped, 0);
        for (u, r) in utts.iter().zip(&records) {
            assert!(r.cued);
            let got = nearest_motif(&u.motion, r.marker_frames, markers.len()).unwrap();
            assert_eq!(got, r.marker_index, "{}", r.id);
        }
    }

    #[test]
    fn motion_files_round_trip_bitwise() {
        let c = cfg(&["but", "so"], 1.0, 0.1, 3);
        let (motion, _, _) = generate_utterance(&c, 0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.gmot");
        save_motion(&p, &motion).unwrap();
        let loaded = crate::motion::load_motion(&p).unwrap();
        assert_eq!(loaded.data, motion.data);
    }

    #[test]
    fn marker_word_is_time_aligned_with_its_motif() {
        let markers = ["but", "for example"];
        let c = cfg(&markers, 1.0, 0.0, 20);
        for i in 0..c.utterances {
            let (motion, transcript, r) = generate_utterance(&c, i).unwrap();
            // The record's frame span matches the transcript's marker words.
            let marker_words: Vec<&str> = r.marker.split_whitespace().collect();
            let start_word = r.marker_frames.0 / c.word_frames;
            for (k, mw) in marker_words.iter().enumerate() {
                assert_eq!(transcript.words[start_word + k].text, *mw);
            }
            let span = r.marker_frames.1 - r.marker_frames.0;
            assert_eq!(span, marker_words.len() * c.word_frames);
            // Outside the span the cue joints are neutral.
            let joints = cue_joints(c.n_joints);
            for t in 0..motion.n_frames {
                if t < r.marker_frames.0 || t >= r.marker_frames.1 {
                    for &j in &joints {
                        assert_eq!(motion.rotation(t, j).0, Rotation6D::IDENTITY.0);
                    }
                }
            }
        }
    }

    #[test]
    fn marker_frequencies_are_roughly_uniform() {
        let markers = ["but", "so", "although", "because"];
        let c = cfg(&markers, 1.0, 0.0, 2000);
        let mut counts = vec![0usize; markers.len()];
        for i in 0..c.utterances {
            let (_, _, r) = generate_utterance(&c, i).unwrap();
            counts[r.marker_index] += 1;
        }
        let expect = c.utterances as f64 / markers.len() as f64;
        for (i, &n) in counts.iter().enumerate() {
            let dev = (n as f64 - expect).abs() / expect;
            assert!(dev < 0.15, "marker {i} count {n} deviates {dev:.2} from uniform");
        }
    }

    #[test]
    fn invalid_configs_error() {
        let mut c = cfg(&["but"], 1.0, 0.0, 2);
        c.templates = vec!["no slot here".into()];
        assert!(generate_synthetic(&c, Path::new("/tmp/unused")).is_err());
        let mut c2 = cfg(&[], 1.0, 0.0, 2);
        c2.markers.clear();
        assert!(generate_synthetic(&c2, Path::new("/tmp/unused")).is_err());
        let c3 = SynthConfig { p_cue: 1.5, ..cfg(&["but"], 1.0, 0.0, 2) };
        assert!(generate_synthetic(&c3, Path::new("/tmp/unused")).is_err());
    }
}
