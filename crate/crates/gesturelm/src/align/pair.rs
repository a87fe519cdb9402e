//! Paired text–gesture examples with shared positions, plus masking.

use super::transcript::{assign_positions, sub_token_intervals, SubTokenSplitter, TimedTranscript};
use crate::textlm::Vocab;
use crate::tokenizer::GestureTokenSeq;
use crate::{Error, Result};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// One utterance laid out as `<s> t... </s> [BOG] g... [EOG]`.
///
/// Text and gesture streams are stored separately; the model concatenates
/// them. Gesture tokens carry the positions of the text tokens their frames
/// overlap, so both streams index one shared positional axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedExample {
    pub id: String,
    pub text_ids: Vec<u32>,
    pub text_positions: Vec<i64>,
    pub gesture_ids: Vec<u32>,
    pub gesture_positions: Vec<i64>,
    /// Masked-slot flags (the sets M_t and M_g); all false before masking.
    pub text_mask: Vec<bool>,
    pub gesture_mask: Vec<bool>,
    /// Original ids of masked slots.
    pub text_gold: Vec<Option<u32>>,
    pub gesture_gold: Vec<Option<u32>>,
}

impl PairedExample {
    pub fn text_len(&self) -> usize {
        self.text_ids.len()
    }

    pub fn gesture_len(&self) -> usize {
        self.gesture_ids.len()
    }

    pub fn total_len(&self) -> usize {
        self.text_len() + self.gesture_len()
    }
}

/// Build the paired layout for one utterance.
///
/// `gesture_tokens` must be bracketed by BOG/EOG (as produced by the
/// tokenizer); an empty stream is just `[BOG, EOG]`. BOG and EOG take the
/// positions of the first and last text token.
pub fn build_pair(
    transcript: &TimedTranscript,
    gesture_tokens: &GestureTokenSeq,
    fps: f64,
    vocab: &Vocab,
    splitter: SubTokenSplitter,
) -> Result<PairedExample> {
    if transcript.words.is_empty() {
        return Err(Error::Data(format!("{}: empty transcript", transcript.id)));
    }
    let sub_tokens = sub_token_intervals(transcript, splitter)?;
    let mut text_ids = vec![Vocab::BOS_ID];
    for (tok, _, _) in &sub_tokens {
        text_ids.push(
            vocab
                .id(tok)
                .ok_or_else(|| Error::Data(format!("{}: word {tok:?} not in vocabulary", transcript.id)))?,
        );
    }
    text_ids.push(Vocab::EOS_ID);
    let text_positions: Vec<i64> = (0..text_ids.len() as i64).collect();
    let first_text_pos = 1i64;
    let last_text_pos = sub_tokens.len() as i64;

    let interior: Vec<(u32, (usize, usize))> = gesture_tokens.interior().collect();
    let spans: Vec<(usize, usize)> = interior.iter().map(|(_, s)| *s).collect();
    let interior_positions = if spans.is_empty() {
        Vec::new()
    } else {
        assign_positions(transcript, &spans, fps, splitter)?
    };

    let n = gesture_tokens.ids.len();
    if n < 2 || interior.len() != n - 2 {
        return Err(Error::InvalidInput(format!(
            "{}: gesture stream must be [BOG, interior..., EOG]",
            transcript.id
        )));
    }
    let mut gesture_positions = Vec::with_capacity(n);
    gesture_positions.push(first_text_pos);
    gesture_positions.extend(interior_positions);
    gesture_positions.push(last_text_pos);

    let tl = text_ids.len();
    let gl = n;
    Ok(PairedExample {
        id: transcript.id.clone(),
        text_ids,
        text_positions,
        gesture_ids: gesture_tokens.ids.clone(),
        gesture_positions,
        text_mask: vec![false; tl],
        gesture_mask: vec![false; gl],
        text_gold: vec![None; tl],
        gesture_gold: vec![None; gl],
    })
}

/// Independently mask non-special text tokens with probability `p_text`
/// (replaced by `<mask>`) and interior gesture tokens with `p_gesture`
/// (replaced by the reserved gesture-mask id). Gold ids are recorded;
/// specials are never masked.
pub fn mask_tokens(
    pair: &PairedExample,
    p_text: f64,
    p_gesture: f64,
    gesture_mask_id: u32,
    rng: &mut ChaCha8Rng,
) -> Result<PairedExample> {
    for (name, p) in [("p_text", p_text), ("p_gesture", p_gesture)] {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::InvalidInput(format!("{name} must be in [0, 1), got {p}")));
        }
    }
    let mut out = pair.clone();
    for i in 0..out.text_ids.len() {
        if Vocab::is_special(out.text_ids[i]) {
            continue;
        }
        if rng.random_range(0.0..1.0) < p_text {
            out.text_gold[i] = Some(out.text_ids[i]);
            out.text_ids[i] = Vocab::MASK_ID;
            out.text_mask[i] = true;
        }
    }
    // First and last gesture slots are BOG/EOG.
    for i in 1..out.gesture_ids.len().saturating_sub(1) {
        if rng.random_range(0.0..1.0) < p_gesture {
            out.gesture_gold[i] = Some(out.gesture_ids[i]);
            out.gesture_ids[i] = gesture_mask_id;
            out.gesture_mask[i] = true;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::align::transcript::{whole_word, TimedWord};
    use rand::SeedableRng;

    fn transcript3() -> TimedTranscript {
        TimedTranscript {
            id: "u0".into(),
            words: vec![
                TimedWord { text: "we".into(), start: 0.0, end: 0.25 },
                TimedWord { text: "kept".into(), start: 0.25, end: 0.8 },
                TimedWord { text: "going".into(), start: 0.8, end: 1.0 },
            ],
        }
    }

    fn vocab() -> Vocab {
        Vocab::from_words(["we".into(), "kept".into(), "going".into()])
    }

    fn gestures(ids: Vec<u32>, spans: Vec<Option<(usize, usize)>>) -> GestureTokenSeq {
        GestureTokenSeq { ids, spans }
    }

    #[test]
    fn layout_brackets_both_streams() {
        // Two interior gesture tokens with midpoints inside the second word.
        let g = gestures(
            vec![512, 7, 9, 513],
            vec![None, Some((4, 8)), Some((8, 12)), None],
        );
        let p = build_pair(&transcript3(), &g, 15.0, &vocab(), &whole_word).unwrap();
        assert_eq!(p.text_ids[0], Vocab::BOS_ID);
        assert_eq!(*p.text_ids.last().unwrap(), Vocab::EOS_ID);
        assert_eq!(p.text_positions, vec![0, 1, 2, 3, 4]);
        // Midpoints 0.4 s and 0.667 s both fall in "kept" (position 2).
        assert_eq!(p.gesture_positions, vec![1, 2, 2, 3]);
        // Every gesture position is some text token's position.
        for gp in &p.gesture_positions {
            assert!(p.text_positions.contains(gp));
        }
    }

    #[test]
    fn empty_gesture_stream_degenerates_to_bog_eog() {
        let g = gestures(vec![512, 513], vec![None, None]);
        let p = build_pair(&transcript3(), &g, 15.0, &vocab(), &whole_word).unwrap();
        assert_eq!(p.gesture_ids, vec![512, 513]);
        assert_eq!(p.gesture_positions, vec![1, 3]);
        assert_eq!(p.text_ids.len(), 5);
    }

    #[test]
    fn positions_match_brute_force_interval_overlap() {
        // Oracle: scan all word intervals for midpoint containment.
        let t = transcript3();
        let spans: Vec<(usize, usize)> = (0..4).map(|i| (4 * i, 4 * i + 4)).collect();
        let g_ids: Vec<u32> = std::iter::once(512)
            .chain(0..4)
            .chain(std::iter::once(513))
            .collect();
        let g_spans: Vec<Option<(usize, usize)>> = std::iter::once(None)
            .chain(spans.iter().map(|s| Some(*s)))
            .chain(std::iter::once(None))
            .collect();
        let p = build_pair(&t, &gestures(g_ids, g_spans), 15.0, &vocab(), &whole_word).unwrap();
        for (k, &(s, e)) in spans.iter().enumerate() {
            let mid = ((s + e) as f64 / 2.0 / 15.0).clamp(0.0, 1.0);
            let mut expect = None;
            for (i, w) in t.words.iter().enumerate() {
                if (mid >= w.start && mid < w.end) || (expect.is_none() && mid <= w.start) {
                    expect = Some(i as i64 + 1);
                    break;
                }
                if mid >= w.start {
                    expect = Some(i as i64 + 1);
                }
            }
            assert_eq!(p.gesture_positions[k + 1], expect.unwrap(), "span {k}");
        }
    }

    #[test]
    fn masking_is_seed_deterministic_and_records_gold() {
        let g = gestures(
            vec![512, 7, 9, 513],
            vec![None, Some((0, 4)), Some((4, 8)), None],
        );
        let p = build_pair(&transcript3(), &g, 15.0, &vocab(), &whole_word).unwrap();
        let mut r1 = ChaCha8Rng::seed_from_u64(3);
        let mut r2 = ChaCha8Rng::seed_from_u64(3);
        let m1 = mask_tokens(&p, 0.5, 0.5, 514, &mut r1).unwrap();
        let m2 = mask_tokens(&p, 0.5, 0.5, 514, &mut r2).unwrap();
        assert_eq!(m1, m2);
        for i in 0..m1.text_ids.len() {
            if m1.text_mask[i] {
                assert_eq!(m1.text_ids[i], Vocab::MASK_ID);
                assert_eq!(m1.text_gold[i], Some(p.text_ids[i]));
            } else {
                assert_eq!(m1.text_ids[i], p.text_ids[i]);
                assert_eq!(m1.text_gold[i], None);
            }
        }
        for i in 0..m1.gesture_ids.len() {
            if m1.gesture_mask[i] {
                assert_eq!(m1.gesture_ids[i], 514);
                assert_eq!(m1.gesture_gold[i], Some(p.gesture_ids[i]));
            }
        }
    }

    #[test]
    fn zero_probability_masks_nothing() {
        let g = gestures(vec![512, 7, 513], vec![None, Some((0, 4)), None]);
        let p = build_pair(&transcript3(), &g, 15.0, &vocab(), &whole_word).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = mask_tokens(&p, 0.0, 0.0, 514, &mut rng).unwrap();
        assert_eq!(m, p);
    }

    #[test]
    fn specials_survive_aggressive_masking() {
        let g = gestures(
            vec![512, 1, 2, 3, 513],
            vec![None, Some((0, 4)), Some((4, 8)), Some((8, 12)), None],
        );
        let p = build_pair(&transcript3(), &g, 15.0, &vocab(), &whole_word).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let m = mask_tokens(&p, 0.99, 0.99, 514, &mut rng).unwrap();
            assert_eq!(m.text_ids[0], Vocab::BOS_ID);
            assert_eq!(*m.text_ids.last().unwrap(), Vocab::EOS_ID);
            assert_eq!(m.gesture_ids[0], 512);
            assert_eq!(*m.gesture_ids.last().unwrap(), 513);
            assert!(!m.text_mask[0] && !m.text_mask[m.text_mask.len() - 1]);
        }
    }

    #[test]
    fn empirical_mask_rate_tracks_probability() {
        let g = gestures(vec![512, 7, 513], vec![None, Some((0, 4)), None]);
        let p = build_pair(&transcript3(), &g, 15.0, &vocab(), &whole_word).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut masked = 0usize;
        let mut total = 0usize;
        for _ in 0..4000 {
            let m = mask_tokens(&p, 0.3, 0.3, 514, &mut rng).unwrap();
            masked += m.text_mask.iter().filter(|&&b| b).count();
            total += 3; // non-special text tokens per example
        }
        let rate = masked as f64 / total as f64;
        assert!((0.28..=0.32).contains(&rate), "rate {rate}");
    }

    #[test]
    fn invalid_probability_errors() {
        let g = gestures(vec![512, 513], vec![None, None]);
        let p = build_pair(&transcript3(), &g, 15.0, &vocab(), &whole_word).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(mask_tokens(&p, 1.0, 0.3, 514, &mut rng).is_err());
        assert!(mask_tokens(&p, 0.3, -0.1, 514, &mut rng).is_err());
    }
}
