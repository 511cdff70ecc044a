use crate::error::{Error, Result};

/// Unit-cost Levenshtein distance.
pub fn edit_distance<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=hypothesis.len()).collect();
    let mut cur = vec![0; hypothesis.len() + 1];
    for (i, r) in reference.iter().enumerate() {
        cur[0] = i + 1;
        for (j, h) in hypothesis.iter().enumerate() {
            let sub = prev[j] + usize::from(r != h);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[hypothesis.len()]
}

/// Edit distance divided by the reference length.
pub fn word_error_rate<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::Empty("reference"));
    }
    Ok(edit_distance(reference, hypothesis) as f64 / reference.len() as f64)
}

/// Total edits over total reference length across `(reference, hypothesis)`
/// pairs.
pub fn corpus_wer<'a, T: PartialEq + 'a>(pairs: impl IntoIterator<Item = (&'a [T], &'a [T])>) -> Result<f64> {
    let (mut edits, mut words) = (0usize, 0usize);
    for (r, h) in pairs {
        edits += edit_distance(r, h);
        words += r.len();
    }
    if words == 0 {
        return Err(Error::Empty("reference corpus"));
    }
    Ok(edits as f64 / words as f64)
}

/// `(baseline − candidate) / baseline` on averaged WER.
pub fn relative_wer_reduction(baseline: f64, candidate: f64) -> Result<f64> {
    if baseline == 0.0 {
        return Err(Error::InvalidArgument("baseline averaged WER is zero".into()));
    }
    Ok((baseline - candidate) / baseline)
}
