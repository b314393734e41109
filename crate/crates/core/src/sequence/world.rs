//! Synthetic phone world: a bigram over phones, left-to-right states per phone
//! with an even split of each phone's frames, and Gaussian frame clusters per
//! state. Everything is derived from one seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldConfig {
    pub seed: u64,
    pub num_utterances: usize,
    pub num_phones: usize,
    pub states_per_phone: usize,
    pub input_dim: usize,
    /// Inclusive utterance length range in frames.
    pub min_frames: usize,
    pub max_frames: usize,
    /// Inclusive phone duration range in frames.
    pub min_duration: usize,
    pub max_duration: usize,
    /// Standard deviation of the per-state cluster means.
    pub cluster_separation: f64,
    pub noise_std: f64,
    /// Probability of a phone following itself.
    pub self_loop: f64,
    /// Weight on the bigram log-probabilities in lattices and decoding.
    pub prior_weight: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            seed: 2018,
            num_utterances: 400,
            num_phones: 8,
            states_per_phone: 2,
            input_dim: 16,
            min_frames: 20,
            max_frames: 36,
            min_duration: 2,
            max_duration: 6,
            cluster_separation: 0.55,
            noise_std: 1.0,
            self_loop: 0.05,
            prior_weight: 1.0,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::World(m.to_string()));
        if self.num_phones < 2 {
            return fail("num_phones must be ≥ 2");
        }
        if self.states_per_phone == 0 || self.input_dim == 0 || self.num_utterances == 0 {
            return fail("states_per_phone, input_dim and num_utterances must be ≥ 1");
        }
        if self.min_duration == 0 || self.min_duration > self.max_duration {
            return fail("duration range is empty");
        }
        if self.max_duration + 1 < 2 * self.min_duration {
            return fail("max_duration must be ≥ 2·min_duration − 1 so every length is reachable");
        }
        if self.min_frames > self.max_frames || self.min_frames < self.min_duration {
            return fail("frame range is empty or shorter than one phone");
        }
        if !(0.0..1.0).contains(&self.self_loop) {
            return fail("self_loop must be in [0, 1)");
        }
        if !(self.noise_std >= 0.0 && self.cluster_separation >= 0.0 && self.prior_weight >= 0.0) {
            return fail("noise_std, cluster_separation and prior_weight must be non-negative");
        }
        Ok(())
    }
}

/// A contiguous run of frames `[t0, t1)` labelled with one phone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Segment {
    pub phone: usize,
    pub t0: usize,
    pub t1: usize,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.t1 - self.t0
    }

    pub fn is_empty(&self) -> bool {
        self.t1 == self.t0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub frames: Matrix,
    /// Reference state id per frame.
    pub labels: Vec<usize>,
    pub phones: Vec<usize>,
    pub segments: Vec<Segment>,
}

impl Utterance {
    pub fn num_frames(&self) -> usize {
        self.labels.len()
    }
}

/// The decoding-relevant part of the world: topology and phone prior.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldModel {
    pub num_phones: usize,
    pub states_per_phone: usize,
    pub min_duration: usize,
    pub max_duration: usize,
    pub log_initial: Vec<f64>,
    /// `log_bigram[prev][next]`
    pub log_bigram: Vec<Vec<f64>>,
    pub prior_weight: f64,
}

impl WorldModel {
    /// Uniform initial distribution and the given bigram.
    pub fn new(states_per_phone: usize, min_duration: usize, max_duration: usize, bigram: Vec<Vec<f64>>, prior_weight: f64) -> Self {
        let p = bigram.len();
        Self {
            num_phones: p,
            states_per_phone,
            min_duration,
            max_duration,
            log_initial: vec![-(p as f64).ln(); p],
            log_bigram: bigram.iter().map(|row| row.iter().map(|x| x.ln()).collect()).collect(),
            prior_weight,
        }
    }

    pub fn num_states(&self) -> usize {
        self.num_phones * self.states_per_phone
    }

    /// State occupied at `offset` frames into a phone lasting `duration` frames.
    pub fn state_at(&self, phone: usize, offset: usize, duration: usize) -> usize {
        let k = (offset * self.states_per_phone / duration).min(self.states_per_phone - 1);
        phone * self.states_per_phone + k
    }

    pub fn state_sequence(&self, phone: usize, duration: usize) -> Vec<usize> {
        (0..duration).map(|o| self.state_at(phone, o, duration)).collect()
    }

    pub fn phone_of_state(&self, state: usize) -> usize {
        state / self.states_per_phone
    }

    /// Weighted log prior of `phone` following `prev` (`None` = utterance start).
    pub fn prior(&self, prev: Option<usize>, phone: usize) -> f64 {
        let lp = match prev {
            None => self.log_initial[phone],
            Some(q) => self.log_bigram[q][phone],
        };
        self.prior_weight * lp
    }
}

/// A generated world: topology, prior, and the hidden frame clusters.
#[derive(Debug, Clone)]
pub struct World {
    pub config: WorldConfig,
    pub model: WorldModel,
    pub means: Vec<Vec<f64>>,
}

impl World {
    pub fn new(config: WorldConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let p = config.num_phones;
        let std = Normal::new(0.0, 1.0).expect("unit normal");
        let num_states = p * config.states_per_phone;
        let means = (0..num_states)
            .map(|_| (0..config.input_dim).map(|_| config.cluster_separation * std.sample(&mut rng)).collect())
            .collect();
        let bigram = (0..p)
            .map(|prev| {
                let w: Vec<f64> = (0..p).map(|q| if q == prev { 0.0 } else { std.sample(&mut rng).exp() }).collect();
                let total: f64 = w.iter().sum();
                (0..p)
                    .map(|q| if q == prev { config.self_loop } else { (1.0 - config.self_loop) * w[q] / total })
                    .collect()
            })
            .collect();
        let model = WorldModel::new(config.states_per_phone, config.min_duration, config.max_duration, bigram, config.prior_weight);
        Ok(Self { config, model, means })
    }

    fn bigram_prob(&self, prev: Option<usize>, phone: usize) -> f64 {
        match prev {
            None => self.model.log_initial[phone].exp(),
            Some(q) => self.model.log_bigram[q][phone].exp(),
        }
    }

    /// Deterministic corpus; utterance `i` depends only on `(seed, i)`.
    pub fn generate_corpus(&self) -> Vec<Utterance> {
        (0..self.config.num_utterances).map(|i| self.generate_utterance(i as u64)).collect()
    }

    pub fn generate_utterance(&self, index: u64) -> Utterance {
        let cfg = &self.config;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (index + 1));
        let noise = Normal::new(0.0, 1.0).expect("unit normal");
        let total = rng.random_range(cfg.min_frames..=cfg.max_frames);

        let mut segments = Vec::new();
        let mut t = 0;
        let mut prev = None;
        while t < total {
            let rem = total - t;
            let choices: Vec<usize> = (cfg.min_duration..=cfg.max_duration.min(rem))
                .filter(|&d| rem - d == 0 || rem - d >= cfg.min_duration)
                .collect();
            let d = choices[rng.random_range(0..choices.len())];
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut phone = cfg.num_phones - 1;
            for q in 0..cfg.num_phones {
                acc += self.bigram_prob(prev, q);
                if u < acc {
                    phone = q;
                    break;
                }
            }
            segments.push(Segment { phone, t0: t, t1: t + d });
            prev = Some(phone);
            t += d;
        }

        let mut labels = Vec::with_capacity(total);
        for s in &segments {
            labels.extend(self.model.state_sequence(s.phone, s.len()));
        }
        let frames = Matrix::from_fn(total, cfg.input_dim, |t, j| self.means[labels[t]][j] + cfg.noise_std * noise.sample(&mut rng));
        let phones = segments.iter().map(|s| s.phone).collect();
        Utterance { frames, labels, phones, segments }
    }
}

/// Indices of the held-out validation utterances: the `ceil(fraction·n)`
/// smallest by a seed-stable hash of the index.
pub fn validation_indices(n: usize, seed: u64, fraction: f64) -> Vec<usize> {
    let k = ((n as f64) * fraction).ceil() as usize;
    let mut keyed: Vec<(u64, usize)> = (0..n)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (i as u64).wrapping_mul(0xD1B5_4A32_D192_ED03));
            (rng.random::<u64>(), i)
        })
        .collect();
    keyed.sort_unstable();
    let mut idx: Vec<usize> = keyed.into_iter().take(k.min(n)).map(|(_, i)| i).collect();
    idx.sort_unstable();
    idx
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> WorldConfig {
        WorldConfig { seed, num_utterances: 12, ..WorldConfig::default() }
    }

    #[test]
    fn same_seed_gives_identical_corpora() {
        let a = World::new(small(3)).unwrap().generate_corpus();
        let b = World::new(small(3)).unwrap().generate_corpus();
        assert_eq!(a, b);
        let c = World::new(small(4)).unwrap().generate_corpus();
        assert_ne!(a, c);
    }

    #[test]
    fn fixed_length_range() {
        let cfg = WorldConfig { min_frames: 5, max_frames: 5, ..small(1) };
        for u in World::new(cfg).unwrap().generate_corpus() {
            assert_eq!(u.num_frames(), 5);
            assert_eq!(u.frames.nrows(), 5);
        }
    }

    #[test]
    fn segments_tile_the_utterance_and_labels_agree() {
        let world = World::new(small(9)).unwrap();
        for u in world.generate_corpus() {
            assert_eq!(u.segments.first().unwrap().t0, 0);
            assert_eq!(u.segments.last().unwrap().t1, u.num_frames());
            for w in u.segments.windows(2) {
                assert_eq!(w[0].t1, w[1].t0);
            }
            for s in &u.segments {
                assert!((world.config.min_duration..=world.config.max_duration).contains(&s.len()));
                for t in s.t0..s.t1 {
                    assert_eq!(world.model.phone_of_state(u.labels[t]), s.phone);
                }
            }
            assert!(u.labels.iter().all(|&l| l < world.model.num_states()));
        }
    }

    #[test]
    fn degenerate_configs_are_rejected() {
        assert!(World::new(WorldConfig { num_phones: 1, ..small(1) }).is_err());
        assert!(World::new(WorldConfig { min_frames: 9, max_frames: 8, ..small(1) }).is_err());
        assert!(World::new(WorldConfig { min_duration: 3, max_duration: 4, ..small(1) }).is_err());
        assert!(World::new(WorldConfig { min_frames: 1, ..small(1) }).is_err());
    }

    #[test]
    fn bigram_rows_are_distributions() {
        let world = World::new(small(5)).unwrap();
        for row in &world.model.log_bigram {
            let s: f64 = row.iter().map(|x| x.exp()).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn even_state_split() {
        let world = World::new(small(5)).unwrap();
        assert_eq!(world.model.state_sequence(1, 5), vec![2, 2, 2, 3, 3]);
        assert_eq!(world.model.state_sequence(0, 2), vec![0, 1]);
    }

    #[test]
    fn validation_split_is_stable_and_sized() {
        let a = validation_indices(200, 7, 0.1);
        assert_eq!(a.len(), 20);
        assert_eq!(a, validation_indices(200, 7, 0.1));
        assert_ne!(a, validation_indices(200, 8, 0.1));
    }
}
