//! Hypothesis lattices: time-stamped DAGs of phone arcs.

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::network::Matrix;
use crate::sequence::decode::{nbest_sequences, Hypothesis};
use crate::sequence::world::{Segment, Utterance, WorldModel};

#[derive(Debug, Clone, PartialEq)]
pub struct LatticeArc {
    pub start: usize,
    pub end: usize,
    pub phone: usize,
    pub t0: usize,
    pub t1: usize,
    /// State id for each frame in `[t0, t1)`.
    pub states: Vec<usize>,
    /// Weighted bigram log prior; added to the scaled acoustic score.
    pub prior: f64,
}

impl LatticeArc {
    pub fn segment(&self) -> Segment {
        Segment { phone: self.phone, t0: self.t0, t1: self.t1 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lattice {
    node_times: Vec<usize>,
    arcs: Vec<LatticeArc>,
    topo_order: Vec<usize>,
    incoming: Vec<Vec<usize>>,
    outgoing: Vec<Vec<usize>>,
    source: usize,
    sink: usize,
}

impl Lattice {
    /// Validates structure: every arc spans ≥ 1 frame and agrees with its
    /// node times, exactly one source at time 0 and one sink.
    pub fn new(node_times: Vec<usize>, arcs: Vec<LatticeArc>) -> Result<Self> {
        let n = node_times.len();
        if arcs.is_empty() || n < 2 {
            return Err(Error::Lattice("empty lattice".into()));
        }
        let mut incoming = vec![Vec::new(); n];
        let mut outgoing = vec![Vec::new(); n];
        for (i, a) in arcs.iter().enumerate() {
            if a.start >= n || a.end >= n {
                return Err(Error::Lattice(format!("arc {i} references a missing node")));
            }
            if a.t1 <= a.t0 {
                return Err(Error::Lattice(format!("arc {i} spans no frames")));
            }
            if node_times[a.start] != a.t0 || node_times[a.end] != a.t1 {
                return Err(Error::Lattice(format!("arc {i} times disagree with its nodes")));
            }
            if a.states.len() != a.t1 - a.t0 {
                return Err(Error::Lattice(format!("arc {i} has {} states for {} frames", a.states.len(), a.t1 - a.t0)));
            }
            if !a.prior.is_finite() {
                return Err(Error::Lattice(format!("arc {i} has a non-finite prior")));
            }
            outgoing[a.start].push(i);
            incoming[a.end].push(i);
        }
        let sources: Vec<usize> = (0..n).filter(|&v| incoming[v].is_empty()).collect();
        let sinks: Vec<usize> = (0..n).filter(|&v| outgoing[v].is_empty()).collect();
        if sources.len() != 1 || sinks.len() != 1 {
            return Err(Error::Lattice(format!("{} sources and {} sinks; need exactly one of each", sources.len(), sinks.len())));
        }
        let (source, sink) = (sources[0], sinks[0]);
        if node_times[source] != 0 {
            return Err(Error::Lattice("source is not at time 0".into()));
        }
        // arcs strictly advance in time, so time order is a topological order
        let mut topo_order: Vec<usize> = (0..n).collect();
        topo_order.sort_by_key(|&v| (node_times[v], v));
        Ok(Self { node_times, arcs, topo_order, incoming, outgoing, source, sink })
    }

    pub fn arcs(&self) -> &[LatticeArc] {
        &self.arcs
    }

    pub fn node_times(&self) -> &[usize] {
        &self.node_times
    }

    pub fn num_nodes(&self) -> usize {
        self.node_times.len()
    }

    pub fn num_frames(&self) -> usize {
        self.node_times[self.sink]
    }

    pub fn source(&self) -> usize {
        self.source
    }

    pub fn sink(&self) -> usize {
        self.sink
    }

    pub fn topo_order(&self) -> &[usize] {
        &self.topo_order
    }

    pub fn incoming(&self, node: usize) -> &[usize] {
        &self.incoming[node]
    }

    pub fn outgoing(&self, node: usize) -> &[usize] {
        &self.outgoing[node]
    }

    /// Every source-to-sink path as a list of arc indices. Exponential; meant
    /// for tests and small lattices. Returns `None` once `limit` is exceeded.
    pub fn enumerate_paths(&self, limit: usize) -> Option<Vec<Vec<usize>>> {
        let mut out = Vec::new();
        let mut stack = vec![(self.source, Vec::new())];
        while let Some((node, path)) = stack.pop() {
            if node == self.sink {
                out.push(path);
                if out.len() > limit {
                    return None;
                }
                continue;
            }
            for &a in self.outgoing[node].iter().rev() {
                let mut p = path.clone();
                p.push(a);
                stack.push((self.arcs[a].end, p));
            }
        }
        Some(out)
    }

    /// Whether some path spells exactly these segments.
    pub fn contains_path(&self, segments: &[Segment]) -> bool {
        let mut frontier = vec![self.source];
        for seg in segments {
            let mut next = Vec::new();
            for &v in &frontier {
                for &a in &self.outgoing[v] {
                    if self.arcs[a].segment() == *seg {
                        next.push(self.arcs[a].end);
                    }
                }
            }
            if next.is_empty() {
                return false;
            }
            next.sort_unstable();
            next.dedup();
            frontier = next;
        }
        frontier.contains(&self.sink)
    }

    /// One arc per line: `start end phone t0 t1 prior-score`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for a in &self.arcs {
            writeln!(s, "{} {} {} {} {} {}", a.start, a.end, a.phone, a.t0, a.t1, a.prior).expect("write to String");
        }
        s
    }

    /// Parses the text format; state sequences are rebuilt from the world topology.
    pub fn from_text(text: &str, world: &WorldModel) -> Result<Self> {
        let mut arcs = Vec::new();
        let mut times: HashMap<usize, usize> = HashMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |what: &str| Error::Lattice(format!("line {}: {what}", lineno + 1));
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 6 {
                return Err(bad("expected 6 fields"));
            }
            let int = |i: usize| fields[i].parse::<usize>().map_err(|_| bad("bad integer"));
            let (start, end, phone, t0, t1) = (int(0)?, int(1)?, int(2)?, int(3)?, int(4)?);
            let prior: f64 = fields[5].parse().map_err(|_| bad("bad prior score"))?;
            if phone >= world.num_phones {
                return Err(bad("phone id out of range"));
            }
            if t1 <= t0 {
                return Err(bad("arc spans no frames"));
            }
            for (node, t) in [(start, t0), (end, t1)] {
                if *times.entry(node).or_insert(t) != t {
                    return Err(bad("node used at two different times"));
                }
            }
            arcs.push(LatticeArc { start, end, phone, t0, t1, states: world.state_sequence(phone, t1 - t0), prior });
        }
        let n = times.keys().max().map_or(0, |m| m + 1);
        let mut node_times = vec![0; n];
        for v in 0..n {
            node_times[v] = *times.get(&v).ok_or_else(|| Error::Lattice(format!("node {v} is never used")))?;
        }
        Self::new(node_times, arcs)
    }
}

/// Builds a prefix-tree lattice from the reference path plus the best
/// segmentations of up to `beam − 1` best competing phone sequences under `scores` (already-scaled acoustic
/// log-likelihoods, `[T × states]`) and the world's phone prior.
pub fn build_lattice(world: &WorldModel, utterance: &Utterance, scores: &Matrix, beam: usize) -> Result<Lattice> {
    if beam < 2 {
        return Err(Error::Lattice("beam must be ≥ 2 so the lattice contains competition".into()));
    }
    let t = utterance.num_frames();
    if scores.nrows() != t || scores.ncols() != world.num_states() {
        return Err(Error::Shape(format!("scores are {:?}, expected ({t}, {})", scores.shape(), world.num_states())));
    }
    let reference = &utterance.segments;
    let embeddable = !reference.is_empty()
        && reference[0].t0 == 0
        && reference.last().map(|s| s.t1) == Some(t)
        && reference.windows(2).all(|w| w[0].t1 == w[1].t0)
        && reference
            .iter()
            .all(|s| s.phone < world.num_phones && (world.min_duration..=world.max_duration).contains(&s.len()));
    if !embeddable {
        return Err(Error::Lattice("reference path cannot be embedded in the world topology".into()));
    }

    let ref_phones: Vec<usize> = reference.iter().map(|s| s.phone).collect();
    let competitors: Vec<Hypothesis> =
        nbest_sequences(world, scores, beam)?.into_iter().filter(|h| h.phones() != ref_phones).take(beam - 1).collect();

    let mut node_times = vec![0usize];
    let mut arcs: Vec<LatticeArc> = Vec::new();
    let mut children: HashMap<(usize, Segment), usize> = HashMap::new();
    let sink_placeholder = usize::MAX;
    let paths = std::iter::once(reference.as_slice()).chain(competitors.iter().map(|h| h.segments.as_slice()));
    for path in paths {
        let mut node = 0;
        let mut prev = None;
        for (k, seg) in path.iter().enumerate() {
            let last = k + 1 == path.len();
            if let Some(&a) = children.get(&(node, *seg)) {
                node = arcs[a].end;
            } else {
                let end = if last {
                    sink_placeholder
                } else {
                    node_times.push(seg.t1);
                    node_times.len() - 1
                };
                arcs.push(LatticeArc {
                    start: node,
                    end,
                    phone: seg.phone,
                    t0: seg.t0,
                    t1: seg.t1,
                    states: world.state_sequence(seg.phone, seg.len()),
                    prior: world.prior(prev, seg.phone),
                });
                children.insert((node, *seg), arcs.len() - 1);
                node = end;
            }
            prev = Some(seg.phone);
        }
    }
    node_times.push(t);
    let sink = node_times.len() - 1;
    for a in &mut arcs {
        if a.end == sink_placeholder {
            a.end = sink;
        }
    }
    Lattice::new(node_times, arcs)
}

/// MPE-style approximate phone accuracy of each arc against the reference
/// segmentation: the best over overlapping reference phones of `−1 + 2e` for
/// a match and `−1 + e` otherwise, `e` being the overlap as a fraction of the
/// reference phone's length.
pub fn arc_accuracies(lattice: &Lattice, reference: &[Segment]) -> Vec<f64> {
    lattice
        .arcs()
        .iter()
        .map(|a| {
            reference
                .iter()
                .filter_map(|z| {
                    let overlap = a.t1.min(z.t1).saturating_sub(a.t0.max(z.t0));
                    if overlap == 0 {
                        return None;
                    }
                    let e = overlap as f64 / z.len() as f64;
                    Some(if z.phone == a.phone { -1.0 + 2.0 * e } else { -1.0 + e })
                })
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .map(|acc| if acc.is_finite() { acc } else { -1.0 })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_phone_world() -> WorldModel {
        WorldModel::new(1, 1, 3, vec![vec![0.5, 0.5], vec![0.5, 0.5]], 1.0)
    }

    fn arc(start: usize, end: usize, phone: usize, t0: usize, t1: usize) -> LatticeArc {
        LatticeArc { start, end, phone, t0, t1, states: vec![phone; t1 - t0], prior: 0.0 }
    }

    #[test]
    fn rejects_malformed_lattices() {
        assert!(Lattice::new(vec![0, 2], vec![]).is_err());
        // zero-length arc
        assert!(Lattice::new(vec![0, 0], vec![arc(0, 1, 0, 0, 0)]).is_err());
        // two sinks
        assert!(Lattice::new(vec![0, 2, 2], vec![arc(0, 1, 0, 0, 2), arc(0, 2, 1, 0, 2)]).is_err());
        // time disagreement
        assert!(Lattice::new(vec![0, 3], vec![arc(0, 1, 0, 0, 2)]).is_err());
    }

    #[test]
    fn text_round_trip() {
        let world = two_phone_world();
        let mut a = arc(0, 1, 0, 0, 2);
        a.prior = -0.123_456_789_012_345_6;
        let lat = Lattice::new(vec![0, 2, 4], vec![a, arc(1, 2, 1, 2, 4), arc(0, 2, 1, 0, 4)]).unwrap();
        let text = lat.to_text();
        let back = Lattice::from_text(&text, &world).unwrap();
        assert_eq!(back, lat);
    }

    #[test]
    fn text_parse_errors() {
        let world = two_phone_world();
        assert!(Lattice::from_text("0 1 0 0 2", &world).is_err());
        assert!(Lattice::from_text("0 1 7 0 2 0.0", &world).is_err());
        assert!(Lattice::from_text("0 1 0 0 2 0.0\n1 2 0 3 4 0.0", &world).is_err());
    }

    #[test]
    fn accuracy_of_exact_match_is_one() {
        let reference = [Segment { phone: 0, t0: 0, t1: 2 }, Segment { phone: 1, t0: 2, t1: 4 }];
        let lat = Lattice::new(vec![0, 2, 4], vec![arc(0, 1, 0, 0, 2), arc(1, 2, 1, 2, 4), arc(0, 2, 1, 0, 4)]).unwrap();
        let acc = arc_accuracies(&lat, &reference);
        assert_eq!(acc[0], 1.0);
        assert_eq!(acc[1], 1.0);
        // covers all of phone 1 (match, e = 1) → 1
        assert_eq!(acc[2], 1.0);
        assert!(acc.iter().all(|&a| a <= 1.0));
    }

    #[test]
    fn beam_one_is_rejected() {
        let world = two_phone_world();
        let u = Utterance {
            frames: Matrix::zeros(2, 1),
            labels: vec![0, 1],
            phones: vec![0, 1],
            segments: vec![Segment { phone: 0, t0: 0, t1: 1 }, Segment { phone: 1, t0: 1, t1: 2 }],
        };
        let scores = Matrix::zeros(2, 2);
        assert!(build_lattice(&world, &u, &scores, 1).is_err());
        assert!(build_lattice(&world, &u, &scores, 2).is_ok());
    }

    #[test]
    fn unembeddable_reference_is_rejected() {
        let world = two_phone_world();
        let u = Utterance {
            frames: Matrix::zeros(4, 1),
            labels: vec![0; 4],
            phones: vec![0],
            segments: vec![Segment { phone: 0, t0: 0, t1: 4 }], // longer than max_duration
        };
        assert!(build_lattice(&world, &u, &Matrix::zeros(4, 2), 4).is_err());
    }
}
