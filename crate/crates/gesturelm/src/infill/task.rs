//! Marker occurrence search, frequency filtering, and example construction.

use super::labels::LabelSet;
use crate::align::{assign_positions, SubTokenSplitter, TimedTranscript, TimedWord};
use crate::textlm::Vocab;
use crate::tokenizer::GestureTokenSeq;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// A marker match: word span `[start, end)` and the label index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Occurrence {
    pub start: usize,
    pub end: usize,
    pub label: usize,
}

/// Case-insensitive exact-span marker search. Multi-word markers match as
/// contiguous spans; overlaps resolve longest-first, then leftmost, then by
/// label-list order.
pub fn find_markers(words: &[String], labels: &LabelSet) -> Vec<Occurrence> {
    let lower: Vec<String> = words.iter().map(|w| w.to_lowercase()).collect();
    let marker_words: Vec<Vec<&str>> =
        labels.markers.iter().map(|m| m.split_whitespace().collect()).collect();
    let mut candidates = Vec::new();
    for start in 0..lower.len() {
        for (label, mw) in marker_words.iter().enumerate() {
            let end = start + mw.len();
            if end <= lower.len() && mw.iter().zip(&lower[start..end]).all(|(a, b)| *a == b) {
                candidates.push(Occurrence { start, end, label });
            }
        }
    }
    candidates.sort_by(|a, b| {
        (b.end - b.start)
            .cmp(&(a.end - a.start))
            .then(a.start.cmp(&b.start))
            .then(a.label.cmp(&b.label))
    });
    let mut taken = vec![false; lower.len()];
    let mut out = Vec::new();
    for c in candidates {
        if taken[c.start..c.end].iter().any(|&t| t) {
            continue;
        }
        taken[c.start..c.end].iter_mut().for_each(|t| *t = true);
        out.push(c);
    }
    out.sort_by_key(|c| c.start);
    out
}

/// Keep only markers whose (training-split) occurrence count is strictly
/// greater than `threshold`. `counts` is indexed by label.
pub fn frequency_filter(
    labels: &LabelSet,
    counts: &[usize],
    threshold: usize,
) -> Result<LabelSet> {
    if counts.len() != labels.len() {
        return Err(Error::InvalidInput(format!(
            "{} counts for {} labels",
            counts.len(),
            labels.len()
        )));
    }
    let markers: Vec<String> = labels
        .markers
        .iter()
        .zip(counts)
        .filter(|(_, &c)| c > threshold)
        .map(|(m, _)| m.clone())
        .collect();
    if markers.is_empty() {
        return Err(Error::Data(format!(
            "no marker in task {:?} occurs more than {threshold} times; task undefined",
            labels.task
        )));
    }
    LabelSet::new(&labels.task, markers)
}

/// One masked-marker prediction instance:
/// `<s> t1 <mask> t2 </s>` plus an optional gesture stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfillExample {
    pub id: String,
    pub text_ids: Vec<u32>,
    pub text_positions: Vec<i64>,
    /// Index of the single `<mask>` slot in `text_ids`.
    pub mask_slot: usize,
    /// Gold label index into the task's [`LabelSet`].
    pub gold: usize,
    pub gesture_ids: Vec<u32>,
    pub gesture_positions: Vec<i64>,
}

impl InfillExample {
    pub fn has_gestures(&self) -> bool {
        !self.gesture_ids.is_empty()
    }

    pub fn total_len(&self) -> usize {
        self.text_ids.len() + self.gesture_ids.len()
    }

    fn validate(&self) -> Result<()> {
        let masks = self.text_ids.iter().filter(|&&id| id == Vocab::MASK_ID).count();
        if masks != 1 || self.text_ids[self.mask_slot] != Vocab::MASK_ID {
            return Err(Error::InvalidInput(format!(
                "{}: example must contain exactly one mask at the recorded slot",
                self.id
            )));
        }
        Ok(())
    }
}

/// Replace one marker occurrence with a single `<mask>` and (optionally)
/// attach the utterance's gesture tokens with shared positions.
///
/// The masked slot inherits the marker span's full time interval, so
/// gesture positions computed against the modified word sequence stay
/// consistent with the original timings.
pub fn build_infill_example(
    transcript: &TimedTranscript,
    occurrence: Occurrence,
    labels: &LabelSet,
    vocab: &Vocab,
    gestures: Option<(&GestureTokenSeq, f64)>,
    splitter: SubTokenSplitter,
) -> Result<InfillExample> {
    let n = transcript.words.len();
    if occurrence.start >= occurrence.end || occurrence.end > n || occurrence.label >= labels.len()
    {
        return Err(Error::InvalidInput(format!(
            "{}: occurrence {occurrence:?} out of range",
            transcript.id
        )));
    }
    // Word sequence with the marker span collapsed into one placeholder that
    // keeps the span's time interval.
    let mut words: Vec<TimedWord> = Vec::with_capacity(n - (occurrence.end - occurrence.start) + 1);
    words.extend_from_slice(&transcript.words[..occurrence.start]);
    words.push(TimedWord {
        text: crate::textlm::MASK_TOKEN.to_string(),
        start: transcript.words[occurrence.start].start,
        end: transcript.words[occurrence.end - 1].end,
    });
    words.extend_from_slice(&transcript.words[occurrence.end..]);
    let masked = TimedTranscript { id: transcript.id.clone(), words };

    let mut text_ids = vec![Vocab::BOS_ID];
    for (i, w) in masked.words.iter().enumerate() {
        if i == occurrence.start {
            text_ids.push(Vocab::MASK_ID);
        } else {
            let tok = w.text.to_lowercase();
            text_ids.push(vocab.id(&tok).ok_or_else(|| {
                Error::Data(format!("{}: word {tok:?} not in vocabulary", transcript.id))
            })?);
        }
    }
    text_ids.push(Vocab::EOS_ID);
    let text_positions: Vec<i64> = (0..text_ids.len() as i64).collect();

    let (gesture_ids, gesture_positions) = match gestures {
        None => (Vec::new(), Vec::new()),
        Some((tokens, fps)) => {
            let interior: Vec<(u32, (usize, usize))> = tokens.interior().collect();
            let spans: Vec<(usize, usize)> = interior.iter().map(|(_, s)| *s).collect();
            // Positions against the masked word sequence: the splitter must
            // leave the placeholder whole.
            let placeholder = crate::textlm::MASK_TOKEN.to_string();
            let wrapped = |w: &str| -> Vec<String> {
                if w == placeholder {
                    vec![w.to_string()]
                } else {
                    splitter(w)
                }
            };
            let interior_pos = if spans.is_empty() {
                Vec::new()
            } else {
                assign_positions(&masked, &spans, fps, &wrapped)?
            };
            let mut pos = Vec::with_capacity(tokens.ids.len());
            pos.push(1);
            pos.extend(interior_pos);
            pos.push(masked.words.len() as i64);
            (tokens.ids.clone(), pos)
        }
    };

    let example = InfillExample {
        id: transcript.id.clone(),
        text_ids,
        text_positions,
        mask_slot: occurrence.start + 1,
        gold: occurrence.label,
        gesture_ids,
        gesture_positions,
    };
    example.validate()?;
    Ok(example)
}

/// Restricted-vocabulary prediction from full-vocabulary logits at the mask
/// slot: argmax over the label ids only; ties break to the lower list index.
pub fn predict_from_logits(logits: &[f64], label_ids: &[u32]) -> Result<usize> {
    if label_ids.is_empty() {
        return Err(Error::InvalidInput("empty label set".into()));
    }
    let mut best = 0usize;
    let mut best_v = f64::NEG_INFINITY;
    for (i, &id) in label_ids.iter().enumerate() {
        let v = *logits.get(id as usize).ok_or_else(|| {
            Error::InvalidInput(format!("label id {id} outside logit width {}", logits.len()))
        })?;
        if v > best_v {
            best_v = v;
            best = i;
        }
    }
    Ok(best)
}
