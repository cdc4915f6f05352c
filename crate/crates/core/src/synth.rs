//! Deterministic synthetic chat corpora with planted predator conversations.
//!
//! Every positive conversation pairs one predator with one victim; some of the
//! predator's tokens are drawn from a marker pool and some of the victim's
//! from a separate victim pool. Negative conversations use background words
//! only. The output is ordinary PAN-style XML plus a ground-truth id list.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::corpus::{write_ground_truth, write_pan_corpus, Conversation, Message};
use crate::error::{Error, Result};
use crate::math::Rng;

const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";

/// Consonant-vowel words of `syllables` syllables, optionally closed by a
/// consonant. Generated in a fixed order so pools are stable.
fn cv_words(count: usize, syllables: usize, closed: bool, offset: usize) -> Vec<String> {
    let per = CONSONANTS.len() * VOWELS.len();
    (0..count)
        .map(|i| {
            let mut k = i * 7919 + offset;
            let mut w = String::new();
            for _ in 0..syllables {
                let s = k % per;
                k /= per;
                k += 3;
                w.push(CONSONANTS[s / VOWELS.len()] as char);
                w.push(VOWELS[s % VOWELS.len()] as char);
            }
            if closed {
                w.push(CONSONANTS[(i + offset) % CONSONANTS.len()] as char);
            }
            w
        })
        .collect()
}

fn dedup_keep_order(words: Vec<String>) -> Vec<String> {
    let mut seen = BTreeSet::new();
    words
        .into_iter()
        .filter(|w| seen.insert(w.clone()))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub seed: u64,
    pub n_conversations: usize,
    pub predator_fraction: f64,
    pub background: Vec<String>,
    pub predator_markers: Vec<String>,
    pub victim_markers: Vec<String>,
    /// Mean of the geometric conversation-length distribution.
    pub mean_length: f64,
    pub max_length: usize,
    /// Share of each predator line's tokens drawn from the marker pool
    /// (at least one per line unless the density is zero).
    pub marker_density: f64,
    /// Same for victim lines and the victim pool.
    pub victim_marker_density: f64,
    pub min_words: usize,
    pub max_words: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            seed: 7,
            n_conversations: 500,
            predator_fraction: 0.05,
            background: dedup_keep_order(cv_words(160, 2, false, 11)),
            predator_markers: dedup_keep_order(cv_words(12, 2, true, 5)),
            victim_markers: dedup_keep_order(cv_words(10, 3, false, 101)),
            mean_length: 15.0,
            max_length: 500,
            marker_density: 0.3,
            victim_marker_density: 0.15,
            min_words: 3,
            max_words: 10,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.predator_fraction) {
            return Err(Error::Config(format!(
                "predator_fraction must lie in [0, 1), got {}",
                self.predator_fraction
            )));
        }
        for (name, pool) in [
            ("background", &self.background),
            ("predator_markers", &self.predator_markers),
            ("victim_markers", &self.victim_markers),
        ] {
            if pool.is_empty() {
                return Err(Error::Config(format!("{name} pool is empty")));
            }
            if pool
                .iter()
                .any(|w| w.is_empty() || w.contains(char::is_whitespace))
            {
                return Err(Error::Config(format!(
                    "{name} pool words must be single non-empty tokens"
                )));
            }
        }
        let bg: BTreeSet<&String> = self.background.iter().collect();
        let pm: BTreeSet<&String> = self.predator_markers.iter().collect();
        if self.predator_markers.iter().any(|w| bg.contains(w))
            || self
                .victim_markers
                .iter()
                .any(|w| bg.contains(w) || pm.contains(w))
        {
            return Err(Error::Config("token pools must be disjoint".into()));
        }
        if self.mean_length < 1.0 || self.max_length < 2 {
            return Err(Error::Config(
                "mean_length must be >= 1 and max_length >= 2".into(),
            ));
        }
        if self.min_words == 0 || self.min_words > self.max_words {
            return Err(Error::Config("need 1 <= min_words <= max_words".into()));
        }
        for d in [self.marker_density, self.victim_marker_density] {
            if !(0.0..=1.0).contains(&d) {
                return Err(Error::Config(format!(
                    "densities must lie in [0, 1], got {d}"
                )));
            }
        }
        Ok(())
    }

    /// Number of positive conversations.
    pub fn positive_count(&self) -> usize {
        (self.n_conversations as f64 * self.predator_fraction).round() as usize
    }
}

/// A generated corpus and its ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthCorpus {
    pub conversations: Vec<Conversation>,
    pub predators: BTreeSet<String>,
}

impl SynthCorpus {
    pub fn xml(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        write_pan_corpus(&self.conversations, &mut buf).expect("writing to memory");
        buf
    }

    pub fn ground_truth(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        write_ground_truth(&self.predators, &mut buf).expect("writing to memory");
        buf
    }
}

fn hex_id(rng: &mut Rng) -> String {
    format!("{:016x}{:016x}", rng.next_u64(), rng.next_u64())
}

/// Geometric length on `1..=max` with the given mean, clamped at `max`.
fn geometric(rng: &mut Rng, mean: f64, max: usize) -> usize {
    let p = 1.0 / mean;
    let u = rng.uniform(0.0, 1.0).max(f64::MIN_POSITIVE);
    let k = if p >= 1.0 {
        1.0
    } else {
        (u.ln() / (1.0 - p).ln()).floor() + 1.0
    };
    (k as usize).clamp(1, max)
}

struct Speaker<'a> {
    id: String,
    markers: Option<(&'a [String], f64)>,
}

fn background_word<'a>(rng: &mut Rng, spec: &'a SynthSpec) -> &'a str {
    // Skewed toward the head of the pool.
    let u = rng.uniform(0.0, 1.0);
    let n = spec.background.len();
    &spec.background[((u * u) * n as f64) as usize % n]
}

/// A line of background words. Speakers with a marker pool get
/// `max(1, round(density * n))` marker tokens: one closes the line, the rest
/// sit at random positions. The closing marker keeps the signal visible in
/// the language model's end-of-line state.
fn line(rng: &mut Rng, spec: &SynthSpec, speaker: &Speaker) -> String {
    let n = spec.min_words + rng.below(spec.max_words - spec.min_words + 1);
    let mut words: Vec<&str> = (0..n).map(|_| background_word(rng, spec)).collect();
    if let Some((pool, density)) = speaker.markers.filter(|(_, d)| *d > 0.0) {
        let k = ((density * n as f64).round() as usize).clamp(1, n);
        let mut slots: Vec<usize> = (0..n - 1).collect();
        rng.shuffle(&mut slots);
        slots.insert(0, n - 1);
        for &slot in &slots[..k] {
            words[slot] = rng.pick(pool);
        }
    }
    words.join(" ")
}

fn conversation(
    rng: &mut Rng,
    spec: &SynthSpec,
    speakers: &[Speaker],
    min_len: usize,
) -> Conversation {
    let id = hex_id(rng);
    let len = geometric(rng, spec.mean_length, spec.max_length).max(min_len);
    let mut messages = Vec::with_capacity(len);
    let (mut hour, mut minute) = (rng.below(24), rng.below(60));
    for i in 0..len {
        // The first speakers.len() lines cycle through everyone so each one
        // appears; later turns are random.
        let who = if i < speakers.len() {
            i
        } else {
            rng.below(speakers.len())
        };
        let speaker = &speakers[who];
        minute += rng.below(3);
        if minute >= 60 {
            minute -= 60;
            hour = (hour + 1) % 24;
        }
        messages.push(Message {
            author: speaker.id.clone(),
            line_no: i + 1,
            time: format!("{hour:02}:{minute:02}"),
            text: line(rng, spec, speaker),
        });
    }
    Conversation { id, messages }
}

/// Generates the corpus described by `spec`; identical specs give identical
/// output.
pub fn generate(spec: &SynthSpec) -> Result<SynthCorpus> {
    spec.validate()?;
    let mut rng = Rng::new(spec.seed);
    let n = spec.n_conversations;
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);
    let positive: BTreeSet<usize> = order[..spec.positive_count().min(n)]
        .iter()
        .copied()
        .collect();

    let normal_pool: Vec<String> = (0..(n / 2).max(4)).map(|_| hex_id(&mut rng)).collect();
    let mut predators = BTreeSet::new();
    let mut conversations = Vec::with_capacity(n);
    for i in 0..n {
        let conv = if positive.contains(&i) {
            let predator = hex_id(&mut rng);
            let victim = hex_id(&mut rng);
            predators.insert(predator.clone());
            let speakers = [
                Speaker {
                    id: predator,
                    markers: Some((&spec.predator_markers, spec.marker_density)),
                },
                Speaker {
                    id: victim,
                    markers: Some((&spec.victim_markers, spec.victim_marker_density)),
                },
            ];
            conversation(&mut rng, spec, &speakers, 2)
        } else {
            let k = 2 + rng.below(2);
            let mut ids: Vec<String> = Vec::with_capacity(k);
            while ids.len() < k {
                let id = rng.pick(&normal_pool).clone();
                if !ids.contains(&id) {
                    ids.push(id);
                }
            }
            let speakers: Vec<Speaker> = ids
                .into_iter()
                .map(|id| Speaker { id, markers: None })
                .collect();
            conversation(&mut rng, spec, &speakers, 1)
        };
        conversations.push(conv);
    }
    Ok(SynthCorpus {
        conversations,
        predators,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64, n: usize, fraction: f64) -> SynthSpec {
        SynthSpec {
            seed,
            n_conversations: n,
            predator_fraction: fraction,
            ..Default::default()
        }
    }

    #[test]
    fn default_pools_are_valid() {
        let s = SynthSpec::default();
        s.validate().unwrap();
        assert!(s.background.len() > 100);
        assert_eq!(s.predator_markers.len(), 12);
    }

    #[test]
    fn deterministic_bytes() {
        let a = generate(&small(3, 40, 0.1)).unwrap();
        let b = generate(&small(3, 40, 0.1)).unwrap();
        assert_eq!(a.xml(), b.xml());
        assert_eq!(a.ground_truth(), b.ground_truth());
        assert_ne!(a.xml(), generate(&small(4, 40, 0.1)).unwrap().xml());
    }

    #[test]
    fn zero_fraction_has_no_predators() {
        let c = generate(&small(1, 30, 0.0)).unwrap();
        assert!(c.predators.is_empty());
        assert!(c.ground_truth().is_empty());
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(generate(&small(1, 10, 1.0)).is_err());
        let mut s = small(1, 10, 0.1);
        s.victim_markers = vec![s.background[0].clone()];
        assert!(matches!(generate(&s), Err(Error::Config(_))));
        let mut s = small(1, 10, 0.1);
        s.predator_markers.clear();
        assert!(generate(&s).is_err());
    }

    #[test]
    fn lengths_are_bounded() {
        let mut rng = Rng::new(9);
        let xs: Vec<usize> = (0..5000).map(|_| geometric(&mut rng, 15.0, 500)).collect();
        assert!(xs.iter().all(|&x| (1..=500).contains(&x)));
        let mean = xs.iter().sum::<usize>() as f64 / xs.len() as f64;
        assert!((mean - 15.0).abs() < 1.0, "{mean}");
    }
}
