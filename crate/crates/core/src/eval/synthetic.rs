//! Seeded synthetic corpora with planted relevance.
//!
//! Every query owns two pseudo-word topic tokens that appear nowhere else.
//! Each relevant conversation mentions the query's topic in at least one
//! utterance; no other conversation contains either token. Per-item counts
//! are drawn as balanced `±d` pairs around the requested mean, so the
//! generated means equal the requested ones up to rounding of the total.

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::QueryRecord;
use crate::types::{ConversationRecord, Turn};

const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";
/// Letters used to encode a topic token's id; `q` never occurs in filler text.
const CODE_LETTERS: &[u8] = b"abcdefghijklmnop";

const UTTERANCE_SPREAD: usize = 4;
const RELEVANT_SPREAD: usize = 5;

const NOUNS: &[&str] = &[
    "weekend",
    "garden",
    "kitchen",
    "office",
    "station",
    "library",
    "market",
    "village",
    "window",
    "bicycle",
    "holiday",
    "morning",
    "evening",
    "neighbor",
    "teacher",
    "cousin",
    "journey",
    "picture",
    "concert",
    "dinner",
    "river",
    "mountain",
    "bakery",
    "airport",
    "hospital",
    "museum",
    "playground",
    "umbrella",
    "notebook",
    "sandwich",
    "festival",
    "harbor",
    "meeting",
    "project",
    "schedule",
];
const ADJECTIVES: &[&str] = &[
    "busy", "calm", "sunny", "crowded", "pleasant", "strange", "lovely", "tiring", "relaxing", "boring", "exciting",
    "cold", "warm", "noisy", "peaceful",
];
const ACTIVITIES: &[&str] = &[
    "walking",
    "cooking",
    "reading",
    "painting",
    "cleaning",
    "shopping",
    "running",
    "writing",
    "travelling",
    "gardening",
    "swimming",
    "drawing",
];
const QUERY_TEMPLATES: &[&str] = &[
    "conversations about {a} {b}",
    "who talked about {a} and {b}?",
    "questions regarding {b} {a}",
    "someone asking for {a} {b} advice",
    "discussion on {a} {b}",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub seed: u64,
    pub conversations: usize,
    pub queries: usize,
    pub utterances_per_conversation: f64,
    pub relevant_per_query: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            conversations: 1000,
            queries: 200,
            utterances_per_conversation: 12.0,
            relevant_per_query: 15.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub corpus: Vec<ConversationRecord>,
    pub queries: Vec<QueryRecord>,
    /// The two topic tokens of each query, in query order.
    pub topics: Vec<[String; 2]>,
}

impl SyntheticData {
    pub fn mean_utterances(&self) -> f64 {
        self.corpus.iter().map(ConversationRecord::len).sum::<usize>() as f64 / self.corpus.len().max(1) as f64
    }

    pub fn mean_relevant(&self) -> f64 {
        self.queries.iter().map(|q| q.relevant_conv_ids.len()).sum::<usize>() as f64 / self.queries.len().max(1) as f64
    }
}

/// Counts for `n` items summing to `round(mean * n)`, each within
/// `[min, max]`. Requires `min <= mean <= max`.
fn balanced_counts(rng: &mut ChaCha8Rng, n: usize, mean: f64, min: usize, max: usize, spread: usize) -> Vec<usize> {
    if n == 0 {
        return Vec::new();
    }
    let total = ((mean * n as f64).round() as usize).clamp(min * n, max * n);
    let base = total / n;
    let mut counts = vec![base; n];
    for i in sample(rng, n, total - base * n) {
        counts[i] += 1;
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    for pair in order.chunks_exact(2) {
        let (up, down) = (pair[0], pair[1]);
        let room = spread.min(max - counts[up]).min(counts[down] - min);
        let d = rng.gen_range(0..=room);
        counts[up] += d;
        counts[down] -= d;
    }
    counts
}

fn syllable(rng: &mut ChaCha8Rng) -> String {
    let c = CONSONANTS[rng.gen_range(0..CONSONANTS.len())] as char;
    let v = VOWELS[rng.gen_range(0..VOWELS.len())] as char;
    format!("{c}{v}")
}

/// `id` in base 16 over [`CODE_LETTERS`], fixed width.
fn code(mut id: usize, width: usize) -> String {
    let mut out = vec![b'a'; width];
    for slot in out.iter_mut().rev() {
        *slot = CODE_LETTERS[id % 16];
        id /= 16;
    }
    String::from_utf8(out).expect("ascii")
}

fn topic_token(rng: &mut ChaCha8Rng, id: usize, width: usize) -> String {
    format!("{}{}q{}", syllable(rng), syllable(rng), code(id, width))
}

fn pick<'a>(rng: &mut ChaCha8Rng, items: &[&'a str]) -> &'a str {
    items[rng.gen_range(0..items.len())]
}

fn filler_utterance(rng: &mut ChaCha8Rng, user: bool) -> String {
    let noun = pick(rng, NOUNS);
    let noun2 = pick(rng, NOUNS);
    let adj = pick(rng, ADJECTIVES);
    let act = pick(rng, ACTIVITIES);
    let templates: [String; 4] = if user {
        [
            format!("I spent the {noun} {act} with my {noun2}."),
            format!("Was the {noun} {adj} yesterday?"),
            format!("Thanks, the {noun} sounds {adj}."),
            format!("My {noun} was {adj} during the {noun2}."),
        ]
    } else {
        [
            format!("That {noun} sounds {adj}, {act} is fun."),
            format!("Many people enjoy {act} near the {noun}."),
            format!("The {noun} can get {adj} in the {noun2}."),
            format!("Have you tried {act} at the {noun}?"),
        ]
    };
    templates[rng.gen_range(0..templates.len())].clone()
}

fn topic_phrase(topics: &[&[String; 2]]) -> String {
    topics
        .iter()
        .map(|[a, b]| format!("{a} {b}"))
        .collect::<Vec<_>>()
        .join(" and ")
}

fn topic_utterance(rng: &mut ChaCha8Rng, user: bool, topics: &[&[String; 2]]) -> String {
    let phrase = topic_phrase(topics);
    let noun = pick(rng, NOUNS);
    if user {
        match rng.gen_range(0..3) {
            0 => format!("Can you tell me about {phrase} for my {noun}?"),
            1 => format!("I keep reading about {phrase} lately."),
            _ => format!("What do you think about {phrase}?"),
        }
    } else {
        match rng.gen_range(0..3) {
            0 => format!("Sure, {phrase} is popular with many {noun} fans."),
            1 => format!("I know a lot about {phrase} from the {noun}."),
            _ => format!("People often discuss {phrase} at the {noun}."),
        }
    }
}

/// Builds a corpus and query set. Identical configs give identical output.
///
/// # Panics
///
/// If a count is zero or a requested mean is impossible (fewer than two
/// utterances, or more relevant conversations than the corpus holds).
pub fn generate_synthetic(cfg: &SyntheticConfig) -> SyntheticData {
    assert!(cfg.conversations > 0 && cfg.queries > 0, "sizes must be positive");
    assert!(
        cfg.utterances_per_conversation >= 2.0,
        "at least two utterances per conversation"
    );
    assert!(
        cfg.relevant_per_query >= 1.0 && cfg.relevant_per_query <= cfg.conversations as f64,
        "relevant_per_query must lie in [1, conversations]"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.conversations;
    let max_utt = (cfg.utterances_per_conversation.ceil() as usize + UTTERANCE_SPREAD).max(2);
    let utterances = balanced_counts(
        &mut rng,
        n,
        cfg.utterances_per_conversation,
        2,
        max_utt,
        UTTERANCE_SPREAD,
    );
    let relevant_counts = balanced_counts(&mut rng, cfg.queries, cfg.relevant_per_query, 1, n, RELEVANT_SPREAD);

    let mut width = 1;
    while 16usize.pow(width as u32) < 2 * cfg.queries {
        width += 1;
    }
    let topics: Vec<[String; 2]> = (0..cfg.queries)
        .map(|q| {
            [
                topic_token(&mut rng, 2 * q, width),
                topic_token(&mut rng, 2 * q + 1, width),
            ]
        })
        .collect();

    let conv_width = (n.max(2) - 1).to_string().len();
    let conv_ids: Vec<String> = (0..n).map(|i| format!("conv-{i:0conv_width$}")).collect();
    let mut conv_topics: Vec<Vec<usize>> = vec![Vec::new(); n];
    let query_width = (cfg.queries.max(2) - 1).to_string().len();
    let mut queries = Vec::with_capacity(cfg.queries);
    for (q, &count) in relevant_counts.iter().enumerate() {
        let mut chosen = sample(&mut rng, n, count).into_vec();
        chosen.sort_unstable();
        for &c in &chosen {
            conv_topics[c].push(q);
        }
        let [a, b] = &topics[q];
        let text = pick(&mut rng, QUERY_TEMPLATES).replace("{a}", a).replace("{b}", b);
        queries.push(QueryRecord {
            query_id: format!("q-{q:0query_width$}"),
            text,
            relevant_conv_ids: chosen.iter().map(|&c| conv_ids[c].clone()).collect(),
        });
    }

    let corpus = (0..n)
        .map(|c| {
            let len = utterances[c];
            let assigned = &conv_topics[c];
            let mut slots: Vec<Vec<&[String; 2]>> = vec![Vec::new(); len];
            if !assigned.is_empty() {
                let positions = sample(&mut rng, len, assigned.len().min(len)).into_vec();
                for (i, &q) in assigned.iter().enumerate() {
                    slots[positions[i % positions.len()]].push(&topics[q]);
                }
            }
            let turns: Vec<Turn> = slots
                .iter()
                .enumerate()
                .map(|(i, here)| {
                    let user = i % 2 == 0;
                    let text = if here.is_empty() {
                        filler_utterance(&mut rng, user)
                    } else {
                        topic_utterance(&mut rng, user, here)
                    };
                    Turn::new(if user { "user" } else { "assistant" }, text)
                })
                .collect();
            ConversationRecord::from_turns(conv_ids[c].clone(), turns).expect("generated conversation is valid")
        })
        .collect();

    SyntheticData {
        corpus,
        queries,
        topics,
    }
}
