//! Word-timed transcripts and gesture-token position assignment.

use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimedWord {
    pub text: String,
    /// Seconds from utterance start.
    pub start: f64,
    pub end: f64,
}

/// One utterance's words with start/end timestamps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimedTranscript {
    pub id: String,
    pub words: Vec<TimedWord>,
}

impl TimedTranscript {
    /// Check 0 <= start < end, time order, and no overlaps.
    pub fn validate(&self) -> Result<()> {
        let mut prev_end = 0.0f64;
        for (i, w) in self.words.iter().enumerate() {
            if !(w.start >= 0.0 && w.start < w.end) || !w.start.is_finite() || !w.end.is_finite() {
                return Err(Error::Data(format!(
                    "{}: word {i} ({:?}) has invalid interval [{}, {}]",
                    self.id, w.text, w.start, w.end
                )));
            }
            if w.start < prev_end {
                return Err(Error::Data(format!(
                    "{}: word {i} ({:?}) overlaps the previous word",
                    self.id, w.text
                )));
            }
            prev_end = w.end;
        }
        Ok(())
    }

    pub fn duration(&self) -> f64 {
        self.words.last().map_or(0.0, |w| w.end)
    }

    /// Lowercased word strings.
    pub fn word_strings(&self) -> Vec<String> {
        self.words.iter().map(|w| w.text.to_lowercase()).collect()
    }
}

/// Read transcripts from a JSON-lines file, one utterance per line.
pub fn load_transcripts(path: &Path) -> Result<Vec<TimedTranscript>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let t: TimedTranscript = serde_json::from_str(line).map_err(|e| {
            Error::Data(format!("{}:{}: {e}", path.display(), i + 1))
        })?;
        t.validate()?;
        out.push(t);
    }
    Ok(out)
}

pub fn save_transcripts(transcripts: &[TimedTranscript], path: &Path) -> Result<()> {
    let mut buf = String::new();
    for t in transcripts {
        buf.push_str(&serde_json::to_string(t)?);
        buf.push('\n');
    }
    std::fs::write(path, buf)?;
    Ok(())
}

/// Splits one word into text tokens. The desk-scale default keeps the word
/// whole; tests exercise the multi-token path with custom splitters.
pub type SubTokenSplitter<'a> = &'a dyn Fn(&str) -> Vec<String>;

/// Identity splitter: one token per word.
pub fn whole_word(word: &str) -> Vec<String> {
    vec![word.to_string()]
}

/// Sub-token time intervals for every text token of a transcript, in order.
///
/// A word's [start, end] is divided among its sub-tokens proportionally to
/// their character counts, so "amazing" split "ama"/"zing" over 0.7 s gets
/// sub-intervals of 0.3 s and 0.4 s.
pub fn sub_token_intervals(
    transcript: &TimedTranscript,
    splitter: SubTokenSplitter,
) -> Result<Vec<(String, f64, f64)>> {
    let mut out = Vec::new();
    for w in &transcript.words {
        let parts = splitter(&w.text.to_lowercase());
        if parts.is_empty() || parts.iter().any(|p| p.is_empty()) {
            return Err(Error::Data(format!(
                "{}: splitter produced an empty token for {:?}",
                transcript.id, w.text
            )));
        }
        let total_chars: usize = parts.iter().map(|p| p.chars().count()).sum();
        let span = w.end - w.start;
        let mut t = w.start;
        for (i, p) in parts.iter().enumerate() {
            let share = span * p.chars().count() as f64 / total_chars as f64;
            let end = if i + 1 == parts.len() { w.end } else { t + share };
            out.push((p.clone(), t, end));
            t = end;
        }
    }
    Ok(out)
}

/// Position (in the `<s> t... </s>` text block, so the first text token is
/// position 1) for each gesture-token frame span.
///
/// A gesture token takes the position of the text token whose sub-interval
/// contains the gesture token's midpoint time. Midpoints are clamped into
/// the transcript's time range; midpoints falling in an inter-word gap take
/// the most recent token.
pub fn assign_positions(
    transcript: &TimedTranscript,
    token_spans: &[(usize, usize)],
    fps: f64,
    splitter: SubTokenSplitter,
) -> Result<Vec<i64>> {
    if transcript.words.is_empty() {
        return Err(Error::Data(format!("{}: empty transcript", transcript.id)));
    }
    transcript.validate()?;
    if fps <= 0.0 {
        return Err(Error::InvalidInput(format!("fps must be positive, got {fps}")));
    }
    let intervals = sub_token_intervals(transcript, splitter)?;
    let t_min = intervals[0].1;
    let t_max = intervals.last().unwrap().2;
    let mut out = Vec::with_capacity(token_spans.len());
    for &(s, e) in token_spans {
        if e <= s {
            return Err(Error::InvalidInput(format!("empty frame span ({s}, {e})")));
        }
        let mid = ((s + e) as f64 / 2.0 / fps).clamp(t_min, t_max);
        // Containment with half-open [start, end) intervals; a midpoint in a
        // gap (or at the final end) falls back to the latest started token.
        let mut idx = 0usize;
        for (i, (_, start, end)) in intervals.iter().enumerate() {
            if mid >= *start && mid < *end {
                idx = i;
                break;
            }
            if mid >= *start {
                idx = i;
            }
        }
        out.push(idx as i64 + 1);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn word(text: &str, start: f64, end: f64) -> TimedWord {
        TimedWord { text: text.into(), start, end }
    }

    fn transcript(words: Vec<TimedWord>) -> TimedTranscript {
        TimedTranscript { id: "u0".into(), words }
    }

    #[test]
    fn validation_rejects_overlap_and_reversed_intervals() {
        assert!(transcript(vec![word("a", 0.0, 0.5), word("b", 0.4, 0.9)]).validate().is_err());
        assert!(transcript(vec![word("a", 0.5, 0.5)]).validate().is_err());
        assert!(transcript(vec![word("a", 0.0, 0.5), word("b", 0.5, 0.9)]).validate().is_ok());
    }

    #[test]
    fn half_second_word_at_15fps_covers_two_4frame_tokens() {
        // 0.5 s of 15 fps motion is 7.5 frames = 1.875 tokens of 4 frames;
        // with the midpoint rule exactly 2 token midpoints land inside.
        let t = transcript(vec![word("go", 0.0, 0.5), word("on", 0.5, 1.0)]);
        let spans: Vec<(usize, usize)> = (0..3).map(|i| (4 * i, 4 * i + 4)).collect();
        let pos = assign_positions(&t, &spans, 15.0, &whole_word).unwrap();
        assert_eq!(pos, vec![1, 1, 2]);
        assert_eq!(pos.iter().filter(|&&p| p == 1).count(), 2);
    }

    #[test]
    fn one_word_one_span_maps_to_that_word() {
        let t = transcript(vec![word("hey", 0.0, 4.0 / 15.0)]);
        let pos = assign_positions(&t, &[(0, 4)], 15.0, &whole_word).unwrap();
        assert_eq!(pos, vec![1]);
    }

    #[test]
    fn proportional_split_follows_character_counts() {
        let t = transcript(vec![word("amazing", 0.0, 0.7)]);
        let split = |w: &str| -> Vec<String> {
            if w == "amazing" {
                vec!["ama".into(), "zing".into()]
            } else {
                vec![w.into()]
            }
        };
        let iv = sub_token_intervals(&t, &split).unwrap();
        assert_eq!(iv.len(), 2);
        assert!((iv[0].1 - 0.0).abs() < 1e-12 && (iv[0].2 - 0.3).abs() < 1e-12);
        assert!((iv[1].1 - 0.3).abs() < 1e-12 && (iv[1].2 - 0.7).abs() < 1e-12);
        // A gesture token whose midpoint is at 0.25 s maps to "ama" (pos 1),
        // one at 0.5 s maps to "zing" (pos 2).
        let pos = assign_positions(&t, &[(3, 5), (7, 8)], 16.0, &split).unwrap();
        assert_eq!(pos, vec![1, 2]);
    }

    #[test]
    fn midpoints_outside_the_transcript_clamp_to_the_edges() {
        let t = transcript(vec![word("a", 0.2, 0.4), word("b", 0.4, 0.6)]);
        let pos = assign_positions(&t, &[(0, 2), (28, 30)], 15.0, &whole_word).unwrap();
        assert_eq!(pos, vec![1, 2]);
    }

    #[test]
    fn gap_midpoints_take_the_previous_word() {
        let t = transcript(vec![word("a", 0.0, 0.2), word("b", 0.8, 1.0)]);
        // Midpoint 0.5 s sits in the silence between the words.
        let pos = assign_positions(&t, &[(6, 9)], 15.0, &whole_word).unwrap();
        assert_eq!(pos, vec![1]);
    }

    #[test]
    fn positions_are_non_decreasing() {
        let t = transcript(vec![
            word("one", 0.0, 0.3),
            word("two", 0.3, 0.7),
            word("three", 0.9, 1.4),
        ]);
        let spans: Vec<(usize, usize)> = (0..6).map(|i| (4 * i, 4 * i + 4)).collect();
        let pos = assign_positions(&t, &spans, 15.0, &whole_word).unwrap();
        assert!(pos.windows(2).all(|w| w[0] <= w[1]), "{pos:?}");
    }

    #[test]
    fn empty_transcript_errors() {
        let t = transcript(vec![]);
        assert!(assign_positions(&t, &[(0, 4)], 15.0, &whole_word).is_err());
    }

    #[test]
    fn jsonl_round_trip() {
        let ts = vec![
            transcript(vec![word("hello", 0.0, 0.5), word("world", 0.5, 1.1)]),
            TimedTranscript { id: "u1".into(), words: vec![word("ok", 0.1, 0.4)] },
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        save_transcripts(&ts, &path).unwrap();
        assert_eq!(load_transcripts(&path).unwrap(), ts);
    }
}
