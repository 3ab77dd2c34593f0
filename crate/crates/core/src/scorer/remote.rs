use super::{ScoreError, Scorer};
use crate::remote::{echo_logprobs, EndpointConfig, HttpClient, RemoteError};

/// Scores tokens through an OpenAI-compatible `/completions` endpoint that
/// echoes prompt logprobs.
///
/// The endpoint tokenizes with its own subword vocabulary. Each subword is
/// attributed to the toolkit token holding its first non-space character and
/// the logprobs of a token's pieces are summed. Pieces that fall in the
/// prefix are ignored, and the very first piece of the prompt (which the API
/// cannot score) counts as probability 1.
pub struct RemoteScorer {
    http: HttpClient,
}

impl RemoteScorer {
    pub fn new(config: EndpointConfig) -> Result<Self, RemoteError> {
        Ok(RemoteScorer {
            http: HttpClient::new(config)?,
        })
    }

    pub fn probe(&self) -> Result<(), RemoteError> {
        self.http.probe()
    }
}

/// Lays tokens out as a prompt and returns their char spans within it.
fn layout(tokens: &[String], prefix: &[String]) -> (String, Vec<(usize, usize)>) {
    let mut prompt = String::new();
    if !prefix.is_empty() {
        prompt.push_str(&prefix.join(" "));
        prompt.push_str("\n\n");
    }
    let mut pos = prompt.chars().count();
    let mut spans = Vec::with_capacity(tokens.len());
    for (i, t) in tokens.iter().enumerate() {
        if i > 0 {
            prompt.push(' ');
            pos += 1;
        }
        let len = t.chars().count();
        spans.push((pos, pos + len));
        prompt.push_str(t);
        pos += len;
    }
    (prompt, spans)
}

impl Scorer for RemoteScorer {
    fn logprobs(&self, tokens: &[String], prefix: &[String]) -> Result<Vec<f64>, ScoreError> {
        if tokens.is_empty() {
            return Ok(Vec::new());
        }
        let (prompt, spans) = layout(tokens, prefix);
        let echoed = echo_logprobs(&self.http, &prompt)?;
        Ok(attribute(&echoed.tokens, &echoed.logprobs, &echoed.offsets, &spans))
    }
}

fn attribute(
    pieces: &[String],
    logprobs: &[Option<f64>],
    offsets: &[usize],
    spans: &[(usize, usize)],
) -> Vec<f64> {
    let mut out = vec![0.0; spans.len()];
    let text_start = spans[0].0;
    for ((piece, lp), &offset) in pieces.iter().zip(logprobs).zip(offsets) {
        let lead = piece.chars().take_while(|c| c.is_whitespace()).count();
        let at = offset + lead;
        if lead == piece.chars().count() || at < text_start {
            continue;
        }
        // first span whose end lies past the piece start
        let idx = spans.partition_point(|&(_, end)| end <= at);
        if let Some(slot) = out.get_mut(idx) {
            *slot += lp.unwrap_or(0.0).min(0.0);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_spans() {
        let toks: Vec<String> = ["ab", ",", "c"].iter().map(|s| s.to_string()).collect();
        let (prompt, spans) = layout(&toks, &["q".to_string()]);
        assert_eq!(prompt, "q\n\nab , c");
        assert_eq!(spans, vec![(3, 5), (6, 7), (8, 9)]);
    }

    #[test]
    fn pieces_sum_per_token() {
        // prompt "hello world": pieces "hel" "lo" " world"
        let spans = vec![(0, 5), (6, 11)];
        let pieces: Vec<String> = ["hel", "lo", " world"].iter().map(|s| s.to_string()).collect();
        let lps = vec![None, Some(-1.0), Some(-2.0)];
        let out = attribute(&pieces, &lps, &[0, 3, 5], &spans);
        assert_eq!(out, vec![-1.0, -2.0]);
    }

    #[test]
    fn prefix_pieces_ignored() {
        let spans = vec![(3, 4)];
        let pieces: Vec<String> = ["q", "\n\n", "x"].iter().map(|s| s.to_string()).collect();
        let out = attribute(&pieces, &[None, Some(-5.0), Some(-0.5)], &[0, 1, 3], &spans);
        assert_eq!(out, vec![-0.5]);
    }
}
