use std::collections::BTreeMap;

use super::loss::BLANK;
use crate::autodiff::{log_add, RealArray};
use crate::error::{Error, Result};
use crate::lm::NGramLM;

/// Best-path decoding: per-frame argmax, merge repeats, drop blanks.
/// Ties go to the lowest class index.
pub fn greedy_decode(logits: &RealArray) -> Vec<u32> {
    let mut out = Vec::new();
    let mut prev = BLANK;
    for t in 0..logits.rows() {
        let row = logits.row_slice(t);
        let mut best = 0;
        for (c, v) in row.iter().enumerate() {
            if *v > row[best] {
                best = c;
            }
        }
        let best = best as u32;
        if best != BLANK && best != prev {
            out.push(best);
        }
        prev = best;
    }
    out
}

/// A decoded label sequence and its fused score
/// `log P_ctc(labels) + lm_weight · log P_lm(labels, end)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub labels: Vec<u32>,
    pub score: f64,
}

#[derive(Debug, Clone, Copy)]
struct PrefixProbs {
    blank: f64,
    non_blank: f64,
    lm: f64,
}

impl PrefixProbs {
    fn empty(lm: f64) -> Self {
        Self {
            blank: f64::NEG_INFINITY,
            non_blank: f64::NEG_INFINITY,
            lm,
        }
    }

    fn ctc(&self) -> f64 {
        log_add(self.blank, self.non_blank)
    }
}

fn fused(probs: &PrefixProbs, lm_weight: f64) -> f64 {
    if lm_weight == 0.0 {
        probs.ctc()
    } else {
        probs.ctc() + lm_weight * probs.lm
    }
}

/// Prefix beam search over CTC posteriors with optional n-gram shallow fusion.
///
/// Each prefix tracks the exact CTC mass of alignments ending in a blank and
/// in a non-blank, so with a beam wide enough to hold every prefix the result
/// is the exact maximizer of the fused score. The LM term accumulates
/// `log P(symbol | history)` per emitted symbol and adds `log P(end | prefix)`
/// when ranking complete hypotheses. Equal scores are broken in favour of the
/// lexicographically smaller prefix.
pub fn beam_search(
    logits: &RealArray,
    lm: Option<&NGramLM>,
    lm_weight: f64,
    beam_width: usize,
) -> Result<Hypothesis> {
    if beam_width == 0 {
        return Err(Error::InvalidArgument("beam width must be ≥ 1".into()));
    }
    if !(lm_weight >= 0.0) {
        return Err(Error::InvalidArgument(format!("lm weight must be ≥ 0, got {lm_weight}")));
    }
    let use_lm = lm_weight > 0.0 && lm.is_some();
    let log_probs = logits.log_softmax_rows();
    let classes = log_probs.cols();

    let lm_next = |prefix: &[u32], sym: u32| -> Result<f64> {
        match lm {
            Some(m) if use_lm => m.log_prob_next(prefix, sym),
            _ => Ok(0.0),
        }
    };

    let mut beam: Vec<(Vec<u32>, PrefixProbs)> = vec![(
        Vec::new(),
        PrefixProbs {
            blank: 0.0,
            non_blank: f64::NEG_INFINITY,
            lm: 0.0,
        },
    )];

    for t in 0..log_probs.rows() {
        let row = log_probs.row_slice(t);
        let mut next: BTreeMap<Vec<u32>, PrefixProbs> = BTreeMap::new();
        for (prefix, probs) in &beam {
            let total = probs.ctc();
            let stay = next.entry(prefix.clone()).or_insert_with(|| PrefixProbs::empty(probs.lm));
            stay.blank = log_add(stay.blank, row[BLANK as usize] + total);
            if let Some(&last) = prefix.last() {
                stay.non_blank = log_add(stay.non_blank, row[last as usize] + probs.non_blank);
            }
            for c in 1..classes as u32 {
                let mut extended = prefix.clone();
                extended.push(c);
                let from = if prefix.last() == Some(&c) { probs.blank } else { total };
                if !next.contains_key(&extended) {
                    let lm_score = probs.lm + lm_next(prefix, c)?;
                    next.insert(extended.clone(), PrefixProbs::empty(lm_score));
                }
                let entry = next.get_mut(&extended).expect("inserted above");
                entry.non_blank = log_add(entry.non_blank, row[c as usize] + from);
            }
        }
        let mut ranked: Vec<(Vec<u32>, PrefixProbs)> = next
            .into_iter()
            .filter(|(_, p)| p.ctc() > f64::NEG_INFINITY)
            .collect();
        // BTreeMap iteration is already lexicographic, so a stable sort by
        // descending score keeps the smaller prefix first among ties.
        ranked.sort_by(|a, b| fused(&b.1, lm_weight).total_cmp(&fused(&a.1, lm_weight)));
        // The final frame keeps every candidate so the end-marker term can
        // still reorder them.
        if t + 1 < log_probs.rows() {
            ranked.truncate(beam_width);
        }
        beam = ranked;
    }

    let mut best: Option<Hypothesis> = None;
    for (prefix, probs) in beam {
        let lm_total = match lm {
            Some(m) if use_lm => probs.lm + m.log_prob_end(&prefix),
            _ => 0.0,
        };
        let score = if use_lm { probs.ctc() + lm_weight * lm_total } else { probs.ctc() };
        let better = match &best {
            None => true,
            Some(b) => score > b.score || (score == b.score && prefix < b.labels),
        };
        if better {
            best = Some(Hypothesis { labels: prefix, score });
        }
    }
    best.ok_or(Error::Empty("beam"))
}

/// Label sequence from [`beam_search`].
pub fn beam_decode(logits: &RealArray, lm: Option<&NGramLM>, lm_weight: f64, beam_width: usize) -> Result<Vec<u32>> {
    beam_search(logits, lm, lm_weight, beam_width).map(|h| h.labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_hot_path(path: &[u32], classes: usize) -> RealArray {
        let rows: Vec<Vec<f64>> = path
            .iter()
            .map(|&c| (0..classes).map(|k| if k as u32 == c { 5.0 } else { 0.0 }).collect())
            .collect();
        RealArray::from_rows(&rows).unwrap()
    }

    #[test]
    fn greedy_collapses_repeats_then_drops_blanks() {
        assert_eq!(greedy_decode(&one_hot_path(&[1, 1, 0, 2], 3)), vec![1, 2]);
        assert_eq!(greedy_decode(&one_hot_path(&[0, 0, 0], 3)), Vec::<u32>::new());
        assert_eq!(greedy_decode(&one_hot_path(&[1, 0, 1], 3)), vec![1, 1]);
    }

    #[test]
    fn zero_beam_is_an_error() {
        assert!(beam_decode(&RealArray::zeros(&[2, 3]), None, 0.0, 0).is_err());
    }

    #[test]
    fn narrow_beam_without_lm_matches_greedy_on_peaked_lattice() {
        let z = one_hot_path(&[1, 1, 0, 2, 2, 0, 1], 3);
        assert_eq!(beam_decode(&z, None, 0.0, 1).unwrap(), greedy_decode(&z));
    }

    #[test]
    fn zero_lm_weight_ignores_the_lm() {
        let lm = NGramLM::train(&[vec![2, 2, 2]], 2, 2, 0.1).unwrap();
        let z = RealArray::new(vec![3, 3], vec![0.1, 0.9, 0.3, 0.2, 0.1, 0.8, 0.5, 0.4, 0.0]).unwrap();
        assert_eq!(
            beam_search(&z, Some(&lm), 0.0, 4).unwrap(),
            beam_search(&z, None, 0.0, 4).unwrap()
        );
    }
}
