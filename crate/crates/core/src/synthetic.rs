//! Seeded generator of small financial cause/effect corpora built from
//! sentence templates. Used for smoke runs, capacity checks and benchmarks.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Causality, Example, Segment};

const CAUSES: &[&str] = &[
    "oil prices fell sharply",
    "the central bank cut interest rates",
    "quarterly revenue missed estimates",
    "demand for chips surged",
    "the merger was approved by regulators",
    "raw material costs rose 12 percent",
    "the company lost a major contract",
    "consumer spending slowed",
    "the dollar weakened against the euro",
    "a strike halted production",
    "new tariffs were imposed",
    "the board announced a buyback",
    "heavy rains damaged the harvest",
    "credit losses increased",
];

const EFFECTS: &[&str] = &[
    "airline shares rallied",
    "bond yields declined",
    "the stock dropped 8 percent",
    "the firm cut its outlook",
    "profits jumped",
    "exports became cheaper",
    "investors sold the shares",
    "margins narrowed",
    "the bank raised provisions",
    "wheat futures climbed",
    "the group reported a net loss",
    "dividends were suspended",
    "sales volumes recovered",
    "analysts upgraded the stock",
];

const NEUTRAL: &[&str] = &[
    "the annual meeting will take place in May",
    "the company employs 4,500 people",
    "shares closed at 12.40 on Friday",
    "the report covers the first quarter",
    "the chief executive joined in 2015",
];

struct Builder {
    words: Vec<String>,
    gold: Vec<Causality>,
}

impl Builder {
    fn new() -> Self {
        Builder {
            words: Vec::new(),
            gold: Vec::new(),
        }
    }

    /// Appends a phrase and returns its 1-based inclusive token span.
    fn phrase(&mut self, text: &str) -> (usize, usize) {
        let start = self.words.len() + 1;
        self.words.extend(text.split_whitespace().map(str::to_string));
        (start, self.words.len())
    }

    fn lit(&mut self, text: &str) {
        self.phrase(text);
    }

    fn tuple(&mut self, cause: (usize, usize), effect: (usize, usize)) {
        self.gold.push(Causality::new(cause, effect));
    }

    fn finish(self, id: String) -> Example {
        let text = self.words.join(" ");
        let segment = Segment::from_text(id, text).expect("templates produce non-empty text");
        debug_assert_eq!(segment.n(), self.words.len());
        Example {
            segment,
            gold: self.gold,
        }
    }
}

/// `count` examples; roughly one in eight has no causality and one in four
/// has two tuples sharing a span.
pub fn synthetic_corpus(count: usize, seed: u64) -> Vec<Example> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let mut b = Builder::new();
            let c = *CAUSES.choose(&mut rng).expect("non-empty");
            let e = *EFFECTS.choose(&mut rng).expect("non-empty");
            match rng.gen_range(0..8) {
                0 => {
                    let cs = b.phrase(c);
                    b.lit(", so");
                    let es = b.phrase(e);
                    b.lit(".");
                    b.tuple(cs, es);
                }
                1 => {
                    let es = b.phrase(e);
                    b.lit("because");
                    let cs = b.phrase(c);
                    b.lit(".");
                    b.tuple(cs, es);
                }
                2 => {
                    b.lit("Due to");
                    let cs = b.phrase(c);
                    b.lit(",");
                    let es = b.phrase(e);
                    b.lit(".");
                    b.tuple(cs, es);
                }
                3 => {
                    let cs = b.phrase(c);
                    b.lit("; as a result ,");
                    let es = b.phrase(e);
                    b.lit(".");
                    b.tuple(cs, es);
                }
                4 => {
                    let c2 = pick_other(&mut rng, CAUSES, c);
                    let c1s = b.phrase(c);
                    b.lit("and");
                    let c2s = b.phrase(c2);
                    b.lit(", so");
                    let es = b.phrase(e);
                    b.lit(".");
                    b.tuple(c1s, es);
                    b.tuple(c2s, es);
                }
                5 => {
                    let e2 = pick_other(&mut rng, EFFECTS, e);
                    let cs = b.phrase(c);
                    b.lit(", which means");
                    let e1s = b.phrase(e);
                    b.lit("and");
                    let e2s = b.phrase(e2);
                    b.lit(".");
                    b.tuple(cs, e1s);
                    b.tuple(cs, e2s);
                }
                6 => {
                    let n = *NEUTRAL.choose(&mut rng).expect("non-empty");
                    b.lit(n);
                    b.lit(".");
                    let es = b.phrase(e);
                    b.lit("after");
                    let cs = b.phrase(c);
                    b.lit(".");
                    b.tuple(cs, es);
                }
                _ => {
                    let n = *NEUTRAL.choose(&mut rng).expect("non-empty");
                    b.lit(n);
                    b.lit(".");
                }
            }
            b.finish(format!("syn{i:04}"))
        })
        .collect()
}

fn pick_other<'a>(rng: &mut ChaCha8Rng, pool: &[&'a str], not: &str) -> &'a str {
    loop {
        let p = *pool.choose(rng).expect("non-empty");
        if p != not {
            return p;
        }
    }
}
