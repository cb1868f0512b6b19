//! Seeded English-like stance corpora for end-to-end checks.
//!
//! Every example carries one strong cue word that alone determines the
//! label, a few weak cue words that agree with the label only with
//! probability `weak_purity`, a topic word, and filler. Translation noise
//! that drops the strong cue leaves the weak cues as the only signal.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Lang, StanceExample, StanceLabel};

const TOPICS: [&str; 5] = ["atheism", "climate", "feminism", "abortion", "hillary"];

const FILLER: [&str; 40] = [
    "the", "a", "this", "that", "today", "people", "think", "really", "just", "about", "we",
    "they", "it", "is", "was", "so", "very", "all", "some", "time", "what", "when", "who", "how",
    "more", "much", "going", "see", "know", "day", "still", "here", "there", "every", "many",
    "new", "world", "week", "again", "everyone",
];

const STRONG: [[&str; 3]; 3] = [
    ["support", "love", "proud"],
    ["oppose", "hate", "shameful"],
    ["weather", "lunch", "traffic"],
];

const WEAK: [[&str; 8]; 3] = [
    [
        "great", "hope", "yes", "agree", "good", "right", "thanks", "win",
    ],
    [
        "bad", "never", "wrong", "stop", "fail", "lies", "worse", "sick",
    ],
    [
        "maybe", "random", "whatever", "later", "okay", "news", "sunday", "coffee",
    ],
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub n_examples: usize,
    /// Relative frequency of FAVOR, AGAINST, NONE.
    pub class_weights: [f64; 3],
    pub weak_cues: usize,
    /// Probability that a weak cue comes from the example's own class.
    pub weak_purity: f64,
    pub min_filler: usize,
    pub max_filler: usize,
    /// Prefix a `@user` mention and suffix a `#topic` hashtag with this probability.
    pub social_markup: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_examples: 600,
            class_weights: [0.3, 0.4, 0.3],
            weak_cues: 3,
            weak_purity: 0.6,
            min_filler: 3,
            max_filler: 7,
            social_markup: 0.3,
        }
    }
}

fn draw_class(weights: &[f64; 3], rng: &mut ChaCha8Rng) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    2
}

/// Generates `cfg.n_examples` English examples with ids `s<seed>-<i>`.
pub fn synthetic_corpus(cfg: &SyntheticConfig, seed: u64, domain_id: &str) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let en = Lang::new("en").expect("valid tag");
    let mut examples = Vec::with_capacity(cfg.n_examples);
    for i in 0..cfg.n_examples {
        let y = draw_class(&cfg.class_weights, &mut rng);
        let topic = TOPICS[rng.gen_range(0..TOPICS.len())];
        let mut words: Vec<&str> = vec![topic, STRONG[y][rng.gen_range(0..3)]];
        for _ in 0..cfg.weak_cues {
            let c = if rng.gen::<f64>() < cfg.weak_purity {
                y
            } else {
                (y + rng.gen_range(1..3)) % 3
            };
            words.push(WEAK[c][rng.gen_range(0..WEAK[c].len())]);
        }
        let n_fill = rng.gen_range(cfg.min_filler..=cfg.max_filler.max(cfg.min_filler));
        for _ in 0..n_fill {
            words.push(FILLER[rng.gen_range(0..FILLER.len())]);
        }
        words.shuffle(&mut rng);
        let mut text = words.join(" ");
        if rng.gen::<f64>() < cfg.social_markup {
            text = format!("@user{} {text} #{topic}", rng.gen_range(0..50));
        }
        examples.push(StanceExample {
            id: format!("s{seed}-{i}"),
            target: topic.to_string(),
            text,
            stance: StanceLabel::ALL[y],
            language: en.clone(),
            provenance: Vec::new(),
        });
    }
    Corpus::new(domain_id, examples).expect("generated ids are unique")
}
