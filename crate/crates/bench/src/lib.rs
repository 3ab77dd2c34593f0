//! Shared inputs for the benchmarks.

/// A deterministic pseudo-text of `words` tokens with sentence breaks.
pub fn sample_text(words: usize) -> String {
    const VOCAB: [&str; 16] = [
        "the", "council", "approved", "a", "plan", "for", "new", "cycle", "routes", "near", "station",
        "and", "residents", "said", "it", "was",
    ];
    let mut out = String::new();
    let mut state: u64 = 0x9e37_79b9_7f4a_7c15;
    for i in 0..words {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        if i > 0 {
            out.push(' ');
        }
        out.push_str(VOCAB[(state % VOCAB.len() as u64) as usize]);
        if i % 12 == 11 {
            out.push('.');
        }
    }
    out
}
