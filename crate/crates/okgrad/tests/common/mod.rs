//! Shared helpers for the integration suites: independent finite-difference
//! oracles, a deterministic English-like corpus generator, and a guard that
//! serializes timing-sensitive tests.

use std::sync::{Mutex, MutexGuard, OnceLock};

use okgrad::rng::CounterRng;
use okgrad::rnn::{forward, softmax_loss, RhnParams};
use okgrad::smalllin::Mat;

/// Serialize tests within this binary so wall-clock assertions are not
/// distorted by sibling tests.
pub fn serial() -> MutexGuard<'static, ()> {
    static LOCK: OnceLock<Mutex<()>> = OnceLock::new();
    LOCK.get_or_init(|| Mutex::new(())).lock().unwrap_or_else(|e| e.into_inner())
}

/// Total loss (nats) of a rollout from `h0`, masked positions skipped.
pub fn rollout_loss(
    params: &RhnParams,
    inputs: &[usize],
    targets: &[Option<usize>],
    h0: &[f64],
) -> f64 {
    let mut h = h0.to_vec();
    let mut loss = 0.0;
    for (&x, &tg) in inputs.iter().zip(targets) {
        let step = forward(params, &h, x).expect("finite rollout");
        if let Some(t) = tg {
            loss += softmax_loss(params, &step.h_next, t).0;
        }
        h = step.h_next;
    }
    loss
}

/// Central finite differences of the rollout loss over every parameter.
/// Returns the flat recurrent gradient (layout `a * 2n + col`) and the
/// output-head gradient.
pub fn fd_full_gradient(
    params: &RhnParams,
    inputs: &[usize],
    targets: &[Option<usize>],
    h0: &[f64],
    eps: f64,
) -> (Vec<f64>, Mat) {
    let n = params.n();
    let p = params.p();
    let mut rec = vec![0.0; params.rec_len()];
    for a in 0..p {
        for j in 0..n {
            for (which, off) in [(0usize, 0usize), (1, n)] {
                let mut perturbed = params.clone();
                {
                    let m = if which == 0 { &mut perturbed.w_g } else { &mut perturbed.w_t };
                    let v = m.at(a, j) + eps;
                    m.set(a, j, v);
                }
                let plus = rollout_loss(&perturbed, inputs, targets, h0);
                {
                    let m = if which == 0 { &mut perturbed.w_g } else { &mut perturbed.w_t };
                    let v = m.at(a, j) - 2.0 * eps;
                    m.set(a, j, v);
                }
                let minus = rollout_loss(&perturbed, inputs, targets, h0);
                rec[a * 2 * n + off + j] = (plus - minus) / (2.0 * eps);
            }
        }
    }
    let mut out = Mat::zeros(n + 1, params.vocab());
    for i in 0..n + 1 {
        for j in 0..params.vocab() {
            let mut perturbed = params.clone();
            let v = perturbed.w_out.at(i, j) + eps;
            perturbed.w_out.set(i, j, v);
            let plus = rollout_loss(&perturbed, inputs, targets, h0);
            let v = perturbed.w_out.at(i, j) - 2.0 * eps;
            perturbed.w_out.set(i, j, v);
            let minus = rollout_loss(&perturbed, inputs, targets, h0);
            out.set(i, j, (plus - minus) / (2.0 * eps));
        }
    }
    (rec, out)
}

/// Largest entrywise gap between two gradients, relative to the larger
/// max-magnitude (with a small floor against all-zero vectors).
pub fn max_rel_gap(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let scale = a
        .iter()
        .chain(b)
        .fold(0.0f64, |m, x| m.max(x.abs()))
        .max(1e-12);
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
}

const WORDS: &[&str] = &[
    "the", "of", "and", "to", "a", "in", "that", "it", "was", "for", "on", "with", "as", "his",
    "they", "be", "at", "one", "have", "this", "from", "or", "had", "by", "hot", "word", "but",
    "what", "some", "we", "can", "out", "other", "were", "all", "there", "when", "up", "use",
    "your", "how", "said", "an", "each", "she", "which", "do", "their", "time", "if", "will",
    "way", "about", "many", "then", "them", "write", "would", "like", "so", "these", "her",
    "long", "make", "thing", "see", "him", "two", "has", "look", "more", "day", "could", "go",
    "come", "did", "number", "sound", "no", "most", "people", "my", "over", "know", "water",
    "than", "call", "first", "who", "may", "down", "side", "been", "now", "find", "any", "new",
    "work", "part", "take", "get", "place", "made", "live", "where", "after", "back", "little",
    "only", "round", "man", "year", "came", "show", "every", "good", "me", "give", "our",
    "under", "name", "very", "through", "just", "form", "sentence", "great", "think", "say",
    "help", "low", "line", "differ", "turn", "cause", "much", "mean", "before", "move", "right",
    "boy", "old", "too", "same", "tell", "does", "set", "three", "want", "air", "well", "also",
    "play", "small", "end", "put", "home", "read", "hand", "port", "large", "spell", "add",
    "even", "land", "here", "must", "big", "high", "such", "follow", "act", "why", "ask", "men",
    "change", "went", "light", "kind", "off", "need", "house", "picture", "try", "us", "again",
    "animal", "point", "mother", "world", "near", "build", "self", "earth", "father",
];

/// Deterministic English-like text of roughly `target_chars` characters:
/// Zipf-weighted common words, capitalized sentences, occasional commas and
/// paragraph breaks. Gives a character model real short-range structure to
/// learn while the unigram entropy stays near that of ordinary prose.
pub fn gen_corpus(target_chars: usize, seed: u64) -> String {
    let mut rng = CounterRng::new(seed).derive(&[0xc0, 0x9e]);
    // Zipf-ish cumulative weights over the ranked word list.
    let weights: Vec<f64> = (0..WORDS.len()).map(|r| 1.0 / (r as f64 + 3.0)).collect();
    let total: f64 = weights.iter().sum();
    let mut cumulative = Vec::with_capacity(weights.len());
    let mut acc = 0.0;
    for w in &weights {
        acc += w / total;
        cumulative.push(acc);
    }
    let pick = |rng: &mut CounterRng| -> &'static str {
        let u = rng.uniform();
        let idx = cumulative.partition_point(|&c| c < u).min(WORDS.len() - 1);
        WORDS[idx]
    };

    let mut text = String::with_capacity(target_chars + 64);
    let mut sentences_in_paragraph = 0usize;
    while text.len() < target_chars {
        let words = 4 + rng.below(10) as usize;
        for w in 0..words {
            let word = pick(&mut rng);
            if w == 0 {
                let mut chars = word.chars();
                let first = chars.next().unwrap().to_ascii_uppercase();
                text.push(first);
                text.push_str(chars.as_str());
            } else {
                text.push(' ');
                text.push_str(word);
                if w + 1 < words && rng.uniform() < 0.12 {
                    text.push(',');
                }
            }
        }
        text.push(match rng.below(10) {
            0 => '?',
            1 => '!',
            _ => '.',
        });
        sentences_in_paragraph += 1;
        if sentences_in_paragraph >= 5 + rng.below(4) as usize {
            text.push('\n');
            sentences_in_paragraph = 0;
        } else {
            text.push(' ');
        }
    }
    text.truncate(target_chars);
    text
}
