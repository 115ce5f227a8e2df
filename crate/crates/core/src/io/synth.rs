//! Seeded synthetic corpora with known structure.
//!
//! The grammars themselves are fixed; the seed only drives sampling, so every
//! seed draws from the same distribution.

use crate::error::Result;
use crate::io::dataset::{Dataset, Split, TaggedUtterance};
use crate::models::{Document, Task, BOS};
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::train::metrics::NextWordScorer;
use crate::vocab::Vocab;

const GRAMMAR_SEED: u64 = 0x6d61_726b_6f76;

/// Order-2 Markov chain over word classes with a fixed in-class word
/// distribution.
///
/// The next class has log-odds `recent[b][c] + earlier[a][c]` given the two
/// previous classes `a b`: each class strongly favours a few successors and
/// weakly favours a few more two steps on. Missing history contributes
/// nothing, so the first class is uniform.
#[derive(Clone, Debug)]
pub struct MarkovGrammar {
    words: Vec<String>,
    recent: Vec<[f64; MarkovGrammar::CLASSES]>,
    earlier: Vec<[f64; MarkovGrammar::CLASSES]>,
    in_class: [f64; MarkovGrammar::CLASS_SIZE],
    pub sentence_len: usize,
}

impl MarkovGrammar {
    pub const CLASSES: usize = 20;
    pub const CLASS_SIZE: usize = 10;
    const RECENT_BOOST: f64 = 3.0;
    const EARLIER_BOOST: f64 = 1.5;
    const FAVOURED: usize = 3;

    pub fn new() -> MarkovGrammar {
        let mut rng = Rng::new(GRAMMAR_SEED);
        let n = Self::CLASSES;
        let mut table = |boost: f64| -> Vec<[f64; MarkovGrammar::CLASSES]> {
            (0..n)
                .map(|_| {
                    let mut classes: Vec<usize> = (0..n).collect();
                    rng.shuffle(&mut classes);
                    let mut row = [0.0; MarkovGrammar::CLASSES];
                    for &c in &classes[..Self::FAVOURED] {
                        row[c] = boost;
                    }
                    row
                })
                .collect()
        };
        let recent = table(Self::RECENT_BOOST);
        let earlier = table(Self::EARLIER_BOOST);
        let mut in_class = [0.0; Self::CLASS_SIZE];
        for (j, p) in in_class.iter_mut().enumerate() {
            *p = 1.0 / (j as f64 + 2.0);
        }
        let z: f64 = in_class.iter().sum();
        in_class.iter_mut().for_each(|p| *p /= z);
        MarkovGrammar {
            words: (0..n * Self::CLASS_SIZE).map(spell).collect(),
            recent,
            earlier,
            in_class,
            sentence_len: 12,
        }
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// Word vocabulary: the specials, then words in generator order.
    pub fn vocab(&self) -> Vocab {
        Vocab::words(self.words.iter().cloned()).expect("generated words are unique")
    }

    fn class_of(word: usize) -> usize {
        word / Self::CLASS_SIZE
    }

    fn class_distribution(&self, a: Option<usize>, b: Option<usize>) -> [f64; MarkovGrammar::CLASSES] {
        let mut p = [0.0; Self::CLASSES];
        for (c, pc) in p.iter_mut().enumerate() {
            let logit = b.map_or(0.0, |b| self.recent[b][c]) + a.map_or(0.0, |a| self.earlier[a][c]);
            *pc = logit.exp();
        }
        let z: f64 = p.iter().sum();
        p.iter_mut().for_each(|x| *x /= z);
        p
    }

    /// Exact per-word entropy of a sentence, in nats, from the class-pair
    /// distribution carried forward position by position.
    pub fn entropy(&self) -> f64 {
        let n = Self::CLASSES;
        let h = |ps: &[f64]| -ps.iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>();
        let first = self.class_distribution(None, None);
        let mut total = h(&first);
        // pair[a * n + b]: probability that the last two classes are a b
        let mut pair = vec![0.0; n * n];
        for (b, &pb) in first.iter().enumerate() {
            let next = self.class_distribution(None, Some(b));
            total += pb * h(&next);
            for (c, &pc) in next.iter().enumerate() {
                pair[b * n + c] += pb * pc;
            }
        }
        for _ in 2..self.sentence_len {
            let mut moved = vec![0.0; n * n];
            for a in 0..n {
                for b in 0..n {
                    let pab = pair[a * n + b];
                    if pab == 0.0 {
                        continue;
                    }
                    let next = self.class_distribution(Some(a), Some(b));
                    total += pab * h(&next);
                    for (c, &pc) in next.iter().enumerate() {
                        moved[b * n + c] += pab * pc;
                    }
                }
            }
            pair = moved;
        }
        total / self.sentence_len as f64 + h(&self.in_class)
    }

    /// Word distribution after `prev` (generator word indices, most recent last).
    pub fn next_distribution(&self, prev: &[usize]) -> Vec<f64> {
        let b = prev.last().map(|&w| Self::class_of(w));
        let a = prev.len().checked_sub(2).map(|i| Self::class_of(prev[i]));
        let class_p = self.class_distribution(a, b);
        (0..self.words.len())
            .map(|w| class_p[Self::class_of(w)] * self.in_class[w % Self::CLASS_SIZE])
            .collect()
    }

    pub fn sample(&self, rng: &mut Rng) -> Vec<usize> {
        let mut s = Vec::with_capacity(self.sentence_len);
        while s.len() < self.sentence_len {
            let p = self.next_distribution(&s);
            s.push(rng.categorical(&p));
        }
        s
    }

    pub fn sentences(&self, n: usize, rng: &mut Rng) -> Vec<Vec<String>> {
        (0..n)
            .map(|_| self.sample(rng).into_iter().map(|w| self.words[w].clone()).collect())
            .collect()
    }
}

impl Default for MarkovGrammar {
    fn default() -> Self {
        MarkovGrammar::new()
    }
}

/// The generating distribution itself, scored over [`MarkovGrammar::vocab`] ids.
pub struct GrammarScorer<'a> {
    pub grammar: &'a MarkovGrammar,
}

impl NextWordScorer for GrammarScorer<'_> {
    fn vocab_size(&self) -> usize {
        self.grammar.words.len() + 2
    }

    fn next_logits(&self, context: &[usize]) -> Result<Tensor> {
        let mut rows = Vec::with_capacity(context.len());
        for i in 0..context.len() {
            // ids past the specials map straight onto generator words
            let prev: Vec<usize> = context[..=i].iter().filter(|&&id| id > BOS).map(|&id| id - 2).collect();
            let mut row = vec![-1e9; 2];
            row.extend(self.grammar.next_distribution(&prev).iter().map(|p| p.ln()));
            rows.push(row);
        }
        Tensor::from_rows(&rows)
    }
}

const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";

fn syllable(i: usize) -> String {
    let c = CONSONANTS[i / VOWELS.len() % CONSONANTS.len()] as char;
    let v = VOWELS[i % VOWELS.len()] as char;
    format!("{c}{v}")
}

/// Distinct pronounceable spelling of word `i` (unique below 4900).
fn spell(i: usize) -> String {
    let n = CONSONANTS.len() * VOWELS.len();
    let a = i % n;
    let b = (i / n * 7 + i * 3) % n;
    let mut w = syllable(a) + &syllable(b);
    if i.is_multiple_of(3) {
        w.push(CONSONANTS[(i / 3) % CONSONANTS.len()] as char);
    }
    w
}

pub const SLOT_TAGS: [&str; 6] = ["O", "location", "date", "time", "person", "item"];

const LOCATIONS: &[&str] = &[
    "paris", "london", "berlin", "new york", "tokyo", "madrid", "rome", "seattle", "boston", "san francisco",
    "the airport", "lisbon", "chicago", "oslo",
];
const DATES: &[&str] = &[
    "today", "tomorrow", "monday", "tuesday", "wednesday", "thursday", "friday", "saturday", "sunday",
    "next week", "this weekend", "tonight",
];
const TIMES: &[&str] = &[
    "7 am", "noon", "midnight", "6 30", "8 pm", "half past nine", "5 pm", "quarter to ten", "11 15", "dawn",
];
const PEOPLE: &[&str] = &[
    "alice", "bob", "mom", "dad", "john smith", "maria", "grandma", "kevin", "priya", "the dentist", "sam", "lucy",
];
const ITEMS: &[&str] = &[
    "milk", "eggs", "bread", "paper towels", "coffee", "apples", "batteries", "rice", "olive oil", "cheese",
    "dog food", "tea",
];

fn lexicon(tag: &str) -> &'static [&'static str] {
    match tag {
        "location" => LOCATIONS,
        "date" => DATES,
        "time" => TIMES,
        "person" => PEOPLE,
        _ => ITEMS,
    }
}

const TEMPLATES: &[(&str, &[&str])] = &[
    ("weather", &[
        "what is the weather in {location} {date}",
        "will it rain in {location} {date}",
        "weather forecast for {location}",
        "is it cold in {location}",
    ]),
    ("set_alarm", &[
        "set an alarm for {time}",
        "wake me up at {time} {date}",
        "alarm at {time}",
        "i need an alarm {date} at {time}",
    ]),
    ("call", &[
        "call {person}",
        "phone {person} now",
        "ring {person} at {time}",
        "dial {person}",
    ]),
    ("message", &[
        "send a message to {person}",
        "text {person} that i am late",
        "tell {person} i will be there {date}",
        "write to {person}",
    ]),
    ("shopping", &[
        "add {item} to my shopping list",
        "buy {item}",
        "order some {item} for {date}",
        "we are out of {item}",
    ]),
    ("navigation", &[
        "navigate to {location}",
        "how do i get to {location}",
        "directions to {location} avoiding tolls",
        "take me to {location}",
    ]),
    ("calendar", &[
        "schedule a meeting with {person} {date} at {time}",
        "what is on my calendar {date}",
        "add lunch with {person} to my calendar",
        "am i free {date}",
    ]),
    ("music", &[
        "play some music",
        "play songs by {person}",
        "turn up the volume",
        "shuffle my playlist",
    ]),
];

/// Template grammar for joint intent/slot data; gazetteer hints fire on slot
/// words most of the time and on other words rarely, at most two per token.
pub fn utterances(n: usize, rng: &mut Rng) -> Vec<TaggedUtterance> {
    (0..n)
        .map(|_| {
            let (intent, templates) = TEMPLATES[rng.below(TEMPLATES.len())];
            let template = templates[rng.below(templates.len())];
            let mut u = TaggedUtterance {
                intent: intent.to_string(),
                tokens: Vec::new(),
                gazetteer: Vec::new(),
                slots: Vec::new(),
            };
            let push = |u: &mut TaggedUtterance, word: &str, tag: &str, rng: &mut Rng| {
                let mut hints = Vec::new();
                if tag != "O" && rng.bernoulli(0.85) {
                    hints.push(tag.to_string());
                }
                let noise = if tag == "O" { 0.05 } else { 0.1 };
                if rng.bernoulli(noise) {
                    let other = SLOT_TAGS[1 + rng.below(SLOT_TAGS.len() - 1)];
                    if !hints.iter().any(|h| h == other) {
                        hints.push(other.to_string());
                    }
                }
                u.tokens.push(word.to_string());
                u.gazetteer.push(hints);
                u.slots.push(tag.to_string());
            };
            if rng.bernoulli(0.2) {
                push(&mut u, "please", "O", rng);
            }
            for piece in template.split(' ') {
                if let Some(tag) = piece.strip_prefix('{').and_then(|p| p.strip_suffix('}')) {
                    let lex = lexicon(tag);
                    for word in lex[rng.below(lex.len())].split(' ') {
                        push(&mut u, word, tag, rng);
                    }
                } else {
                    push(&mut u, piece, "O", rng);
                }
            }
            if rng.bernoulli(0.15) {
                push(&mut u, "thanks", "O", rng);
            }
            u
        })
        .collect()
}

const NEGATIVE: &[&str] = &["refund", "broken", "awful", "returned", "junk", "waste", "cracked", "useless"];
const POSITIVE: &[&str] = &["excellent", "lovely", "perfect", "superb", "sturdy", "delighted", "flawless", "recommend"];
const FILLER: &[&str] = &[
    "the", "product", "arrived", "box", "this", "item", "was", "and", "it", "i", "my", "with", "for", "after",
    "days", "use", "a", "of", "to", "on", "in", "we", "have", "bought", "order", "price", "color", "size",
];

/// Review-like byte documents: shared filler plus two to four keywords drawn
/// from a class-specific list, so the classes share no keyword.
pub fn documents(n: usize, rng: &mut Rng) -> Vec<Document> {
    (0..n)
        .map(|_| {
            let label = rng.below(2);
            let keys = if label == 0 { NEGATIVE } else { POSITIVE };
            let mut words: Vec<&str> = (0..15 + rng.below(20)).map(|_| FILLER[rng.below(FILLER.len())]).collect();
            for _ in 0..2 + rng.below(3) {
                let at = rng.below(words.len() + 1);
                words.insert(at, keys[rng.below(keys.len())]);
            }
            Document { bytes: words.join(" ").into_bytes(), label }
        })
        .collect()
}

/// `size` examples of `task` drawn with `rng`.
pub fn synth_generate(task: Task, rng: &mut Rng, size: usize) -> Split {
    match task {
        Task::Nwp => Split::Sentences(MarkovGrammar::new().sentences(size, rng)),
        Task::IntentSlot => Split::Utterances(utterances(size, rng)),
        Task::DocClass => Split::Documents(documents(size, rng)),
    }
}

/// Train and test splits from independent streams of `seed`.
pub fn synth_dataset(task: Task, seed: u64, train: usize, test: usize) -> Dataset {
    let root = Rng::new(seed);
    Dataset {
        train: synth_generate(task, &mut root.fork(10), train),
        test: synth_generate(task, &mut root.fork(11), test),
        vocab: (task == Task::Nwp).then(|| MarkovGrammar::new().vocab()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::metrics::perplexity;

    #[test]
    fn spellings_are_unique() {
        let g = MarkovGrammar::new();
        let mut w = g.words().to_vec();
        w.sort();
        w.dedup();
        assert_eq!(w.len(), 200);
    }

    #[test]
    fn distributions_normalize() {
        let g = MarkovGrammar::new();
        for prev in [vec![], vec![3], vec![3, 150], vec![199, 0, 42]] {
            let s: f64 = g.next_distribution(&prev).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn true_model_perplexity_matches_entropy() {
        let g = MarkovGrammar::new();
        let vocab = g.vocab();
        let corpus: Vec<Vec<usize>> = g
            .sentences(3000, &mut Rng::new(5))
            .iter()
            .map(|s| s.iter().map(|w| vocab.id(w).unwrap()).collect())
            .collect();
        let ppl = perplexity(&GrammarScorer { grammar: &g }, &corpus).unwrap().value;
        let target = g.entropy().exp();
        assert!((ppl / target - 1.0).abs() < 0.05, "ppl {ppl} vs e^H {target}");
    }

    #[test]
    fn utterances_are_aligned_and_tagged() {
        let us = utterances(300, &mut Rng::new(2));
        let intents: std::collections::BTreeSet<_> = us.iter().map(|u| u.intent.as_str()).collect();
        assert_eq!(intents.len(), 8);
        for u in &us {
            assert_eq!(u.tokens.len(), u.slots.len());
            assert_eq!(u.tokens.len(), u.gazetteer.len());
            assert!(u.gazetteer.iter().all(|g| g.len() <= 2));
            assert!(u.slots.iter().all(|s| SLOT_TAGS.contains(&s.as_str())));
        }
        let tags: std::collections::BTreeSet<_> = us.iter().flat_map(|u| u.slots.iter()).collect();
        assert_eq!(tags.len(), 6);
    }

    #[test]
    fn documents_carry_class_keywords_only() {
        for d in documents(200, &mut Rng::new(3)) {
            let text = String::from_utf8(d.bytes).unwrap();
            let (own, other) = if d.label == 0 { (NEGATIVE, POSITIVE) } else { (POSITIVE, NEGATIVE) };
            assert!(text.split(' ').any(|w| own.contains(&w)));
            assert!(!text.split(' ').any(|w| other.contains(&w)));
        }
    }

    #[test]
    fn splits_are_reproducible_and_distinct() {
        let a = synth_dataset(Task::DocClass, 7, 20, 5);
        let b = synth_dataset(Task::DocClass, 7, 20, 5);
        assert_eq!(a, b);
        assert_ne!(a, synth_dataset(Task::DocClass, 8, 20, 5));
        assert_ne!(a.train, a.test);
    }
}
