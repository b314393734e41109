//! Segmental N-best / Viterbi decoding over the world topology, and phone
//! error rate scoring.

use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::network::{Matrix, NetworkSpec};
use crate::param::ParameterVector;
use crate::sequence::world::{Segment, Utterance, WorldModel};

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub segments: Vec<Segment>,
    pub score: f64,
}

impl Hypothesis {
    pub fn phones(&self) -> Vec<usize> {
        self.segments.iter().map(|s| s.phone).collect()
    }
}

#[derive(Clone, Copy)]
struct Entry {
    score: f64,
    // hash of the phone sequence so far
    key: u64,
    duration: usize,
    // (previous phone, rank within that cell)
    back: Option<(usize, usize)>,
}

/// Sum of `scores[t, state]` along one phone segment.
pub fn segment_score(world: &WorldModel, scores: &Matrix, phone: usize, t0: usize, t1: usize) -> f64 {
    let d = t1 - t0;
    (0..d).map(|o| scores[(t0 + o, world.state_at(phone, o, d))]).sum()
}

/// The `k` best segmentations of the whole utterance under `scores`
/// (`[T × states]`, already scaled) plus the weighted phone prior.
///
/// Candidates are ranked by score with a stable sort over a fixed generation
/// order (duration, then previous phone, then rank; final phone ascending),
/// so ties resolve toward lower phone ids.
pub fn nbest(world: &WorldModel, scores: &Matrix, k: usize) -> Result<Vec<Hypothesis>> {
    kbest(world, scores, k, false)
}

/// The `k` best distinct phone sequences, each with its best segmentation.
///
/// Each cell keeps at most one partial path per phone-sequence prefix; a
/// prefix outside the top `k` of its cell cannot reach the top `k` after
/// extension, so the pruning is exact.
pub fn nbest_sequences(world: &WorldModel, scores: &Matrix, k: usize) -> Result<Vec<Hypothesis>> {
    kbest(world, scores, k, true)
}

fn extend_key(key: u64, phone: usize) -> u64 {
    let mut z = key ^ (phone as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn kbest(world: &WorldModel, scores: &Matrix, k: usize, distinct: bool) -> Result<Vec<Hypothesis>> {
    let t_len = scores.nrows();
    if scores.ncols() != world.num_states() {
        return Err(Error::Shape(format!("scores have {} columns, world has {} states", scores.ncols(), world.num_states())));
    }
    if k == 0 || t_len == 0 {
        return Ok(Vec::new());
    }
    let p_len = world.num_phones;
    // cells[t][p]: best partial paths ending at frame t with last phone p
    let mut cells: Vec<Vec<Vec<Entry>>> = vec![vec![Vec::new(); p_len]; t_len + 1];
    for t in 1..=t_len {
        for p in 0..p_len {
            let mut cand = Vec::new();
            for d in world.min_duration..=world.max_duration.min(t) {
                let t0 = t - d;
                let seg = segment_score(world, scores, p, t0, t);
                if t0 == 0 {
                    cand.push(Entry { score: seg + world.prior(None, p), key: extend_key(0, p), duration: d, back: None });
                    continue;
                }
                for q in 0..p_len {
                    let trans = world.prior(Some(q), p);
                    for (r, e) in cells[t0][q].iter().enumerate() {
                        cand.push(Entry { score: e.score + trans + seg, key: extend_key(e.key, p), duration: d, back: Some((q, r)) });
                    }
                }
            }
            cand.sort_by(|a, b| b.score.total_cmp(&a.score));
            if distinct {
                let mut seen = HashSet::new();
                cand.retain(|e| seen.insert(e.key));
            }
            cand.truncate(k);
            cells[t][p] = cand;
        }
    }

    let mut finals: Vec<(usize, usize, f64)> = Vec::new();
    for (p, cell) in cells[t_len].iter().enumerate() {
        for (r, e) in cell.iter().enumerate() {
            finals.push((p, r, e.score));
        }
    }
    finals.sort_by(|a, b| b.2.total_cmp(&a.2));
    finals.truncate(k);

    let mut out = Vec::with_capacity(finals.len());
    for (p, r, score) in finals {
        if !score.is_finite() {
            return Err(Error::NonFinite("decoder scores"));
        }
        let mut segments = Vec::new();
        let (mut t, mut p, mut r) = (t_len, p, r);
        loop {
            let e = cells[t][p][r];
            segments.push(Segment { phone: p, t0: t - e.duration, t1: t });
            t -= e.duration;
            match e.back {
                Some((q, rq)) => {
                    p = q;
                    r = rq;
                }
                None => break,
            }
        }
        segments.reverse();
        out.push(Hypothesis { segments, score });
    }
    Ok(out)
}

/// Best phone sequence for `utterance` under the model's acoustic scores
/// `κ·outputs` and the world's bigram prior.
pub fn viterbi_decode(world: &WorldModel, spec: &NetworkSpec, theta: &ParameterVector, utterance: &Utterance, kappa: f64) -> Result<Vec<usize>> {
    let (outputs, _) = spec.forward(theta, &utterance.frames)?;
    Ok(viterbi_from_outputs(world, &outputs, kappa)?.map(|h| h.phones()).unwrap_or_default())
}

pub fn viterbi_from_outputs(world: &WorldModel, outputs: &Matrix, kappa: f64) -> Result<Option<Hypothesis>> {
    let scores = outputs * kappa;
    Ok(nbest(world, &scores, 1)?.into_iter().next())
}

/// Total Levenshtein distance over total reference length.
pub fn sequence_error_rate(hyps: &[Vec<usize>], refs: &[Vec<usize>]) -> Result<f64> {
    if hyps.len() != refs.len() {
        return Err(Error::Shape(format!("{} hypotheses for {} references", hyps.len(), refs.len())));
    }
    let total: usize = refs.iter().map(Vec::len).sum();
    if total == 0 {
        return Err(Error::Shape("empty reference set".into()));
    }
    let edits: usize = hyps.iter().zip(refs).map(|(h, r)| strsim::generic_levenshtein(h, r)).sum();
    Ok(edits as f64 / total as f64)
}
