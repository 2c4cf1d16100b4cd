use crate::error::{Error, Result};

const MAX_SHIFT_LEN: usize = 10;

/// Levenshtein distance over tokens with unit costs.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Moves `seq[start..start + len]` so that it begins at index `dest` of
/// the sequence that remains once the block is removed.
fn shifted<T: Clone>(seq: &[T], start: usize, len: usize, dest: usize) -> Vec<T> {
    let mut rest: Vec<T> = seq[..start].iter().chain(&seq[start + len..]).cloned().collect();
    let block = seq[start..start + len].to_vec();
    rest.splice(dest..dest, block);
    rest
}

/// Edit count: block shifts chosen greedily, then edit distance.
///
/// Each round applies the shift (phrase length up to 10) with the largest
/// reduction of edit distance. Ties prefer the longer phrase, then the
/// earlier start, then the earlier destination. Rounds stop when no shift
/// lowers the distance.
pub fn ter_edits<T: PartialEq + Clone>(hyp: &[T], reference: &[T]) -> usize {
    let mut cur = hyp.to_vec();
    let mut dist = edit_distance(&cur, reference);
    let mut shifts = 0;
    while dist > 0 {
        let mut best: Option<(usize, Vec<T>)> = None;
        let n = cur.len();
        for len in (1..=MAX_SHIFT_LEN.min(n)).rev() {
            for start in 0..=n - len {
                for dest in 0..=n - len {
                    if dest == start {
                        continue;
                    }
                    let cand = shifted(&cur, start, len, dest);
                    let d = edit_distance(&cand, reference);
                    if d < best.as_ref().map_or(dist, |b| b.0) {
                        best = Some((d, cand));
                    }
                }
            }
        }
        match best {
            Some((d, cand)) => {
                cur = cand;
                dist = d;
                shifts += 1;
            }
            None => break,
        }
    }
    shifts + dist
}

/// Translation edit rate: edits per reference token.
pub fn ter<T: PartialEq + Clone>(hyp: &[T], reference: &[T]) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::Empty("TER reference"));
    }
    Ok(ter_edits(hyp, reference) as f64 / reference.len() as f64)
}
