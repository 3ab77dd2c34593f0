//! Acceptance suite. Each check prints one PASS/FAIL line; the process exits
//! non-zero if any check fails.

mod common;

use std::collections::BTreeMap;
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use common::{mock_llm, post_json, start_service, MockStats, Server};
use pct_cli::settings::ServiceConfig;
use pct_core::compressors::{
    allocate_budget, order_by_relevance, policy_ratio_gap, rank_documents, train_scrl_policy, validate,
    CompressorConfig, Granularity, ScrlPolicy, ScrlTrainConfig, SegmentLengths, KIS_MAX_LENGTH_RULE,
    SCRL_MAX_LENGTH_RULE,
};
use pct_core::datasets::{Family, Registry};
use pct_core::metrics::{bleu, edit_distance, lcs_len, rouge, BleuOptions, EditUnit, RougeVariant};
use pct_core::remote::{GenerationRequest, RemoteError, TextGenerator};
use pct_core::runner::{read_report, run_eval, EvalReport, RunConfig};
use pct_core::scorer::{perplexity, ScaledScorer};
use pct_core::{
    fit_ngram, keep_count, tokenize, CompressError, CompressionRequest, CompressionResult, CompressorKind,
    NgramModel, PromptCompressor,
};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::{json, Value};

type Check = fn() -> Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------- metrics

fn lev_oracle(a: &[u8], b: &[u8]) -> usize {
    match (a.split_first(), b.split_first()) {
        (None, _) => b.len(),
        (_, None) => a.len(),
        (Some((x, ra)), Some((y, rb))) if x == y => lev_oracle(ra, rb),
        (Some((_, ra)), Some((_, rb))) => {
            1 + lev_oracle(ra, b).min(lev_oracle(a, rb)).min(lev_oracle(ra, rb))
        }
    }
}

fn is_subsequence(small: &[u8], big: &[u8]) -> bool {
    let mut it = big.iter();
    small.iter().all(|c| it.any(|d| d == c))
}

/// Every distinct subsequence of `a`, longest first.
fn subsequences(a: &[u8]) -> Vec<Vec<u8>> {
    let mut subs: Vec<Vec<u8>> = (0u32..1 << a.len())
        .map(|mask| (0..a.len()).filter(|i| mask >> i & 1 == 1).map(|i| a[i]).collect())
        .collect();
    subs.sort_by(|x: &Vec<u8>, y| y.len().cmp(&x.len()).then_with(|| x.cmp(y)));
    subs.dedup();
    subs
}

/// Longest common subsequence: the longest subsequence of `a` found in `b`.
fn lcs_oracle(subs_of_a: &[Vec<u8>], b: &[u8]) -> usize {
    subs_of_a.iter().find(|s| is_subsequence(s, b)).map_or(0, Vec::len)
}

fn rouge_l_oracle(m: usize, n: usize, lcs: usize) -> f64 {
    match (m, n) {
        (0, 0) => 1.0,
        (0, _) | (_, 0) => 0.0,
        (m, n) => {
            let (p, r) = (lcs as f64 / m as f64, lcs as f64 / n as f64);
            if p + r == 0.0 {
                0.0
            } else {
                2.0 * p * r / (p + r)
            }
        }
    }
}

fn all_strings(max_len: usize) -> Vec<Vec<u8>> {
    let mut out = vec![Vec::new()];
    let mut layer = vec![Vec::new()];
    for _ in 0..max_len {
        layer = layer
            .iter()
            .flat_map(|s: &Vec<u8>| {
                b"abc".iter().map(move |c| {
                    let mut t = s.clone();
                    t.push(*c);
                    t
                })
            })
            .collect();
        out.extend(layer.iter().cloned());
    }
    out
}

fn spaced(s: &[u8]) -> String {
    s.iter().map(|&c| (c as char).to_string()).collect::<Vec<_>>().join(" ")
}

fn metric_oracles() -> Result<String, String> {
    let start = Instant::now();
    let strings = all_strings(6);
    let as_text: Vec<String> = strings.iter().map(|s| String::from_utf8(s.clone()).unwrap()).collect();
    let as_tokens: Vec<String> = strings.iter().map(|s| spaced(s)).collect();
    let subs: Vec<Vec<Vec<u8>>> = strings.iter().map(|s| subsequences(s)).collect();
    let mismatches: Vec<String> = (0..strings.len())
        .into_par_iter()
        .flat_map_iter(|i| {
            let mut bad = Vec::new();
            // both oracles are symmetric: compute once, check both orders
            for j in i..strings.len() {
                let (a, b) = (&strings[i], &strings[j]);
                let lev = lev_oracle(a, b) as f64;
                let lcs = lcs_oracle(&subs[i], b);
                let rl = rouge_l_oracle(a.len(), b.len(), lcs);
                for (x, y) in [(i, j), (j, i)] {
                    let d = edit_distance(&as_text[x], &as_text[y], EditUnit::Char).value;
                    if d != lev {
                        bad.push(format!("edit_distance({:?}, {:?}) = {d}", as_text[x], as_text[y]));
                    }
                    let r = rouge(&as_tokens[x], &as_tokens[y], RougeVariant::L).value;
                    if (r - rl).abs() > 1e-12 || lcs_len(&strings[x], &strings[y]) != lcs {
                        bad.push(format!("rougeL({:?}, {:?}) = {r}", as_text[x], as_text[y]));
                    }
                }
            }
            bad
        })
        .collect();
    let pairs = strings.len() * strings.len();
    let elapsed = start.elapsed();
    ensure(mismatches.is_empty(), || format!("{} mismatches, first: {}", mismatches.len(), mismatches[0]))?;
    ensure(elapsed < Duration::from_secs(10), || format!("exhaustive sweep took {elapsed:?}"))?;

    // (candidate, references, max_n, smoothing, hand-computed value)
    let e = std::f64::consts::E;
    let cases: [(&str, &[&str], usize, bool, f64); 11] = [
        ("the the the", &["the cat"], 1, false, 1.0 / 3.0),
        ("the cat sat on the mat", &["the cat sat on the mat"], 4, false, 1.0),
        ("", &["a b"], 4, false, 0.0),
        ("a b c d", &["a b c e"], 2, false, (0.75f64 * (2.0 / 3.0)).sqrt()),
        ("a b", &["a b c d"], 2, false, 1.0 / e),
        ("a b c", &["a b c d e", "a b"], 1, false, 1.0),
        ("a b c", &["a b c d", "a b"], 1, false, 1.0),
        ("a b c d", &["a x c y"], 2, true, (0.5f64 * 0.25).sqrt()),
        ("The cat", &["the cat"], 1, false, 0.5),
        ("the the the the", &["the cat", "the the dog"], 1, false, 0.5),
        ("a b c d e", &["a b c d f"], 4, false, (0.8f64 * 0.75 * (2.0 / 3.0) * 0.5).powf(0.25)),
    ];
    for (cand, refs, max_n, smoothing, want) in cases {
        let got = bleu(cand, refs, &BleuOptions { max_n, smoothing }).map_err(|e| e.to_string())?.value;
        ensure((got - want).abs() <= 1e-9, || format!("bleu({cand:?}, {refs:?}) = {got}, want {want}"))?;
    }
    Ok(format!(
        "{pairs} edit-distance and ROUGE-L pairs agree with brute force in {:.1} s; {} BLEU cases exact",
        elapsed.as_secs_f64(),
        cases.len()
    ))
}

// ------------------------------------------------------- random prompts

const WORDS: [&str; 36] = [
    "the", "a", "of", "and", "to", "in", "council", "river", "bridge", "plan", "voted", "budget", "north",
    "station", "train", "storm", "village", "school", "teacher", "market", "price", "rose", "fell", "said",
    "new", "old", "city", "road", "was", "is", "Monday", "Paris", "report", "water", "green", "seven",
];

fn random_sentence(rng: &mut ChaCha8Rng) -> String {
    let n = rng.random_range(3..14);
    let mut words: Vec<String> = (0..n).map(|_| WORDS.choose(rng).unwrap().to_string()).collect();
    if rng.random_bool(0.3) {
        let at = rng.random_range(1..n);
        words[at - 1].push(',');
    }
    words.join(" ") + "."
}

fn random_doc(rng: &mut ChaCha8Rng) -> String {
    let n = rng.random_range(1..4);
    (0..n).map(|_| random_sentence(rng)).collect::<Vec<_>>().join(" ")
}

fn random_context(rng: &mut ChaCha8Rng, max_docs: usize) -> String {
    let n = rng.random_range(1..=max_docs);
    (0..n).map(|_| random_doc(rng)).collect::<Vec<_>>().join("\n\n")
}

fn random_model(rng: &mut ChaCha8Rng) -> NgramModel {
    let corpus: Vec<String> = (0..rng.random_range(2..8)).map(|_| random_doc(rng)).collect();
    fit_ngram(&corpus, rng.random_range(1..=3), rng.random_range(0.05..1.0)).unwrap()
}

fn random_ratio(rng: &mut ChaCha8Rng) -> f64 {
    if rng.random_bool(0.1) {
        0.0
    } else {
        rng.random_range(0.0..0.95)
    }
}

// ------------------------------------------------- extractive invariants

fn kept_in_order(result: &CompressionResult) -> Vec<String> {
    result.kept_tokens().into_iter().map(str::to_string).collect()
}

fn check_extractive(
    kind: CompressorKind,
    req: &CompressionRequest,
    result: &CompressionResult,
) -> Result<(), String> {
    let mut prompt = req.text.clone();
    if let Some(q) = req.question.as_ref().filter(|q| !tokenize(q).is_empty()) {
        prompt = format!("{prompt}\n\n{q}");
    }
    let source = tokenize(&prompt);
    let n = source.len();
    let trace_tokens: Vec<&str> = result.trace.iter().map(|e| e.token.as_str()).collect();
    let source_tokens: Vec<&str> = source.tokens().iter().map(String::as_str).collect();
    ensure(trace_tokens == source_tokens, || "trace does not list the prompt tokens".into())?;
    ensure(result.original_len == n, || format!("original_len {} != {n}", result.original_len))?;
    let kept = result.trace.iter().filter(|e| e.kept).count();
    ensure(kept == result.compressed_len && result.output_order.len() == kept, || {
        "trace, output order and compressed_len disagree".into()
    })?;
    ensure(tokenize(&result.compressed).tokens() == kept_in_order(result).as_slice(), || {
        "compressed text does not re-tokenize to the kept tokens".into()
    })?;

    // subsequence, per blank-line block for LongLingua
    let blocks = if kind == CompressorKind::LongLingua {
        source.blank_line_blocks(0..n)
    } else {
        vec![0..n]
    };
    for b in &blocks {
        let inside: Vec<usize> = result.output_order.iter().copied().filter(|i| b.contains(i)).collect();
        ensure(inside.windows(2).all(|w| w[0] < w[1]), || format!("block {b:?} out of order"))?;
    }
    let mut sorted = result.output_order.clone();
    sorted.sort_unstable();
    sorted.dedup();
    ensure(sorted.len() == result.output_order.len(), || "a token is emitted twice".into())?;

    let overshoot = result.notes.iter().any(|note| note.contains("over the target"));
    if !overshoot {
        let want = keep_count(n, req.ratio);
        ensure(kept == want, || format!("kept {kept}, want ceil((1 - {}) * {n}) = {want}", req.ratio))?;
    }
    if req.ratio == 0.0 {
        ensure(sorted == (0..n).collect::<Vec<_>>(), || "ratio 0 dropped tokens".into())?;
    }
    Ok(())
}

fn extractive_invariants() -> Result<String, String> {
    let kinds = [
        CompressorKind::SelectiveContext,
        CompressorKind::Lingua,
        CompressorKind::LongLingua,
        CompressorKind::Scrl,
    ];
    let granularities = [Granularity::Token, Granularity::Phrase, Granularity::Sentence];
    let mut checked = 0;
    for (k, &kind) in kinds.iter().enumerate() {
        for trial in 0..200u64 {
            let seed = 1000 * k as u64 + trial;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let model = random_model(&mut rng);
            let mut req = CompressionRequest::new(random_context(&mut rng, 4), kind, random_ratio(&mut rng)).with_seed(seed);
            if matches!(kind, CompressorKind::Lingua | CompressorKind::LongLingua) && rng.random_bool(0.6) {
                req = req.with_question(random_sentence(&mut rng));
            }
            let mut config = CompressorConfig::default();
            config.selective_context.granularity = *granularities.choose(&mut rng).unwrap();
            config.lingua.segment_size = *[8usize, 16, 64].choose(&mut rng).unwrap();
            let compressor = PromptCompressor::new(Arc::new(model)).with_config(config);
            let result = compressor.compress(&req).map_err(|e| format!("{kind} seed {seed}: {e}"))?;
            check_extractive(kind, &req, &result).map_err(|e| format!("{kind} seed {seed}: {e}"))?;
            checked += 1;
        }
    }
    Ok(format!("{checked} (text, ratio, seed) triples, 0 violations"))
}

// ------------------------------------------------------ argmax invariance

fn argmax_invariance() -> Result<String, String> {
    let mut compared = 0;
    for trial in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(5000 + trial);
        let model = random_model(&mut rng);
        let text = random_context(&mut rng, 3);
        let ratio = rng.random_range(0.1..0.9);
        let question = rng.random_bool(0.5).then(|| random_sentence(&mut rng));
        for kind in [CompressorKind::SelectiveContext, CompressorKind::Lingua] {
            let mut req = CompressionRequest::new(text.clone(), kind, ratio);
            if let (CompressorKind::Lingua, Some(q)) = (kind, &question) {
                req = req.with_question(q.clone());
            }
            let base = PromptCompressor::new(Arc::new(model.clone())).compress(&req).map_err(|e| e.to_string())?;
            for c in [0.5, 3.0, 100.0] {
                let scaled = PromptCompressor::new(Arc::new(ScaledScorer::new(model.clone(), c)))
                    .compress(&req)
                    .map_err(|e| e.to_string())?;
                ensure(scaled.output_order == base.output_order, || {
                    format!("{kind} trial {trial}: selection changed under scale {c}")
                })?;
                compared += 1;
            }
        }
    }
    Ok(format!("{compared} scaled selections identical (c in 0.5, 3, 100)"))
}

// -------------------------------------------------- scorer normalization

fn scorer_normalization() -> Result<String, String> {
    let mut contexts = 0;
    for trial in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(7000 + trial);
        let model = random_model(&mut rng);
        for ctx in model.observed_contexts() {
            let ctx: Vec<&str> = ctx.iter().map(String::as_str).collect();
            let sum: f64 = model.vocab().map(|t| model.prob(&ctx, t)).sum();
            ensure((sum - 1.0).abs() <= 1e-9, || format!("corpus {trial}: context {ctx:?} sums to {sum}"))?;
            contexts += 1;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(7777);
    for size in [2usize, 3, 5, 10, 36, 100] {
        let vocab: Vec<String> = (1..size).map(|i| format!("w{i}")).collect();
        let model = NgramModel::uniform(&vocab);
        let text = tokenize(&random_doc(&mut rng));
        let ppl = perplexity(&model, &text, None).map_err(|e| e.to_string())?;
        ensure(ppl == size as f64, || format!("uniform model over {size} types has perplexity {ppl}"))?;
    }
    Ok(format!("{contexts} observed contexts sum to 1 within 1e-9; uniform perplexity exact"))
}

// --------------------------------------------------- budget conservation

fn budget_conservation() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(9000);
    for _ in 0..1000 {
        let lengths = SegmentLengths {
            instruction: rng.random_range(0..60),
            context: rng.random_range(0..400),
            question: rng.random_range(0..60),
        };
        let target = rng.random_range(0..=lengths.total() + 20);
        let floors = [rng.random_range(0.0..=1.0), rng.random_range(0.0..=1.0)];
        let floors = if rng.random_bool(0.5) { [1.0, 1.0] } else { floors };
        let b = allocate_budget(target, lengths, floors[0], floors[1]);
        let sum = b.instruction_tokens + b.context_tokens + b.question_tokens;
        ensure(sum == b.total_tokens, || format!("{b:?}: parts sum to {sum}"))?;
        if !b.overshoot {
            ensure(b.total_tokens == target.min(lengths.total()), || format!("{lengths:?} target {target}: {b:?}"))?;
        }
    }
    for trial in 0..1000 {
        let n = rng.random_range(0..30);
        let scores: Vec<f64> = (0..n)
            .map(|_| if rng.random_bool(0.2) { 1.0 } else { rng.random_range(-50.0..50.0) })
            .collect();
        let mut order = order_by_relevance(&scores);
        ensure(order.windows(2).all(|w| scores[w[0]] >= scores[w[1]]), || format!("trial {trial}: not sorted"))?;
        order.sort_unstable();
        ensure(order == (0..n).collect::<Vec<_>>(), || format!("trial {trial}: not a permutation"))?;
    }
    let model = NgramModel::uniform(&["red", "blue", "cat"]);
    let docs = ["blue blue", "red cat", "cat", "red"];
    let mut ranked = rank_documents("red cat", &docs, &model).map_err(|e| e.to_string())?;
    ranked.sort_unstable();
    ensure(ranked == [0, 1, 2, 3], || "rank_documents is not a permutation".into())?;
    Ok("1000 segmentations conserve the total; 1000 rankings are permutations".into())
}

// ----------------------------------------------------------- SCRL trainer

const TOY_CORPUS: [&str; 20] = [
    "The council approved the new budget on Friday after a long debate.",
    "Heavy rain flooded several roads in the north of the city.",
    "The school will open a new library next spring.",
    "Prices at the market rose sharply during the winter.",
    "A small boat was found drifting near the harbour.",
    "The train to Paris was delayed by two hours.",
    "Residents said the bridge had been closed for repairs.",
    "The report found that water quality had improved.",
    "Seven teachers were honoured for their work in rural villages.",
    "The storm moved east and the warnings were lifted.",
    "Officials said the old station would be turned into a museum.",
    "The price of bread fell for the first time in a year.",
    "Volunteers planted trees along the river on Sunday.",
    "The company announced plans to hire two hundred workers.",
    "Police closed the road after a lorry overturned.",
    "The museum will stay open late on Thursdays this summer.",
    "Farmers warned that the dry weather could harm the harvest.",
    "The new cycle route links the station with the university.",
    "A local bakery won a national award for its bread.",
    "The mayor said the city would review its parking rules.",
];

fn scrl_trainer() -> Result<String, String> {
    let start = Instant::now();
    let scorer = fit_ngram(&TOY_CORPUS, 2, 0.1).map_err(|e| e.to_string())?;
    let cfg = ScrlTrainConfig {
        steps: 200,
        target_ratio: 0.5,
        seed: 42,
        ..Default::default()
    };
    let a = train_scrl_policy(&TOY_CORPUS, &cfg, &scorer).map_err(|e| e.to_string())?;
    let b = train_scrl_policy(&TOY_CORPUS, &cfg, &scorer).map_err(|e| e.to_string())?;
    ensure(a.weights.map(f64::to_bits) == b.weights.map(f64::to_bits), || "seeded runs differ".into())?;
    let before = policy_ratio_gap(&ScrlPolicy::default(), &TOY_CORPUS, 0.5, &scorer).map_err(|e| e.to_string())?;
    let after = policy_ratio_gap(&a, &TOY_CORPUS, 0.5, &scorer).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    ensure(after <= before, || format!("gap grew from {before} to {after}"))?;
    ensure(elapsed < Duration::from_secs(60), || format!("training took {elapsed:?}"))?;
    Ok(format!(
        "bitwise reproducible; mean |ratio - 0.5| {before:.4} -> {after:.4} in {:.2} s",
        elapsed.as_secs_f64()
    ))
}

// ---------------------------------------------------- runner reproduction

fn mode_for(family: Family) -> &'static str {
    match family {
        Family::Reconstruction => "intrinsic_reconstruction",
        Family::Summarization => "intrinsic_summarization",
        _ => "extrinsic_answer",
    }
}

fn sweep_config(dataset: &str, family: Family, kind: CompressorKind, llm: &str, tapes: &Path, tape_mode: &str) -> String {
    let metrics: Vec<String> = family.metrics().iter().map(|m| format!("{:?}", m.name())).collect();
    let stem = format!("{dataset}-{}", kind.name());
    let mut cfg = format!(
        "mode = \"{}\"\ndataset = \"{dataset}\"\nmetrics = [{}]\nratio = [0.1, 0.3, 0.5]\nseed = 7\n\
         concurrency = 4\ntiming = false\n\n[compressor]\nname = \"{}\"\n\n\
         [target_llm]\nbase_url = \"{llm}\"\nmodel = \"mock\"\nmax_retries = 0\ntimeout_ms = 5000\n\
         cassette = {:?}\ncassette_mode = \"{tape_mode}\"\n",
        mode_for(family),
        metrics.join(", "),
        kind.name(),
        tapes.join(format!("{stem}.llm.json")).display().to_string(),
    );
    if metrics.iter().any(|m| m.contains("bertscore")) {
        cfg.push_str(&format!(
            "\n[embedder]\nbase_url = \"{llm}\"\nmodel = \"mock-embed\"\nmax_retries = 0\n\
             cassette = {:?}\ncassette_mode = \"{tape_mode}\"\n",
            tapes.join(format!("{stem}.embed.json")).display().to_string()
        ));
    }
    cfg
}

fn strip_timestamp(report: &str) -> String {
    report
        .lines()
        .filter(|l| !l.trim_start().starts_with("\"timestamp\""))
        .collect::<Vec<_>>()
        .join("\n")
}

fn check_aggregates(report: &EvalReport) -> Result<(), String> {
    for s in &report.sections {
        ensure(s.rows.len() + s.skips.len() == report.dataset_size, || "rows + skips != dataset size".into())?;
        let mut sums: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
        for r in &s.rows {
            for (k, v) in &r.metrics {
                let e = sums.entry(k).or_default();
                e.0 += v;
                e.1 += 1;
            }
        }
        ensure(sums.len() == s.aggregates.metrics.len(), || "aggregate keys differ from row keys".into())?;
        for (k, (sum, n)) in sums {
            let mean = sum / n as f64;
            let got = s.aggregates.metrics[k];
            ensure((mean - got).abs() <= 1e-9, || format!("{k}: aggregate {got} vs recomputed {mean}"))?;
        }
        if !s.rows.is_empty() {
            let mean = s.rows.iter().map(|r| r.achieved_ratio).sum::<f64>() / s.rows.len() as f64;
            let got = s.aggregates.mean_achieved_ratio.unwrap_or(f64::NAN);
            ensure((mean - got).abs() <= 1e-9, || format!("achieved ratio {got} vs {mean}"))?;
        }
    }
    Ok(())
}

fn pct_eval(config: &Path, output: &Path) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_pct"))
        .args(["eval", "--config"])
        .arg(config)
        .arg("--output")
        .arg(output)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || {
        format!("pct eval {} failed: {}", config.display(), String::from_utf8_lossy(&out.stderr))
    })
}

fn runner_reproduction() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let tapes = dir.path().join("cassettes");
    let registry = Registry::bundled();
    let mut runs: Vec<(String, Family, CompressorKind)> = Vec::new();
    for m in registry.manifests() {
        for &kind in m.family.compressors() {
            runs.push((m.name.clone(), m.family, kind));
        }
    }

    // Record against the mock endpoint.
    let stats = MockStats::default();
    let mock = Server::start(mock_llm(stats.clone()));
    let llm = mock.url("");
    for (dataset, family, kind) in &runs {
        let cfg = RunConfig::from_toml(&sweep_config(dataset, *family, *kind, &llm, &tapes, "record"))
            .map_err(|e| e.to_string())?;
        let report = run_eval(&cfg).map_err(|e| format!("{dataset}/{kind} record: {e}"))?;
        let skipped: usize = report.sections.iter().map(|s| s.skips.len()).sum();
        ensure(skipped == 0, || format!("{dataset}/{kind}: {skipped} rows skipped while recording"))?;
    }
    let recorded_calls = stats.chat_calls();
    drop(mock);

    // Replay twice through the CLI with the endpoint gone.
    let start = Instant::now();
    let mut reports = 0;
    for pass in ["a", "b"] {
        for (dataset, family, kind) in &runs {
            let stem = format!("{dataset}-{}", kind.name());
            let config = dir.path().join(format!("{stem}.toml"));
            std::fs::write(&config, sweep_config(dataset, *family, *kind, &llm, &tapes, "replay"))
                .map_err(|e| e.to_string())?;
            pct_eval(&config, &dir.path().join(pass).join(format!("{stem}.json")))?;
        }
    }
    let elapsed = start.elapsed();
    for (dataset, _, kind) in &runs {
        let name = format!("{dataset}-{}.json", kind.name());
        let a = std::fs::read_to_string(dir.path().join("a").join(&name)).map_err(|e| e.to_string())?;
        let b = std::fs::read_to_string(dir.path().join("b").join(&name)).map_err(|e| e.to_string())?;
        ensure(strip_timestamp(&a) == strip_timestamp(&b), || format!("{name}: replayed reports differ"))?;
        let report = read_report(&dir.path().join("a").join(&name)).map_err(|e| e.to_string())?;
        ensure(report.sections.len() == 3, || format!("{name}: expected 3 ratio sections"))?;
        ensure(report.sections.iter().all(|s| s.skips.is_empty()), || format!("{name}: replay skipped rows"))?;
        check_aggregates(&report).map_err(|e| format!("{name}: {e}"))?;
        reports += 1;
    }
    ensure(elapsed < Duration::from_secs(300), || format!("offline sweep took {elapsed:?}"))?;
    Ok(format!(
        "{} runs x 3 ratios recorded ({recorded_calls} LLM calls), replayed twice offline in {:.1} s; \
         {reports} report pairs byte-identical, aggregates match rows",
        runs.len(),
        elapsed.as_secs_f64()
    ))
}

// -------------------------------------------------------- parameter gates

struct Echo;

impl TextGenerator for Echo {
    fn generate(&self, request: &GenerationRequest) -> Result<Vec<String>, RemoteError> {
        Ok(vec![request.prompt.clone(); request.n])
    }
}

const GATE_TEXT: &str = "w x y z";

/// (compressor, max_length, accepted?)
const GATES: [(CompressorKind, usize, bool); 6] = [
    (CompressorKind::Scrl, 5, false),
    (CompressorKind::Scrl, 4, true),
    (CompressorKind::Scrl, 2, true),
    (CompressorKind::Kis, 3, false),
    (CompressorKind::Kis, 4, true),
    (CompressorKind::Kis, 9, true),
];

fn rule_for(kind: CompressorKind) -> &'static str {
    if kind == CompressorKind::Scrl {
        SCRL_MAX_LENGTH_RULE
    } else {
        KIS_MAX_LENGTH_RULE
    }
}

fn parameter_gates() -> Result<String, String> {
    // library
    let model = fit_ngram(&TOY_CORPUS, 2, 0.1).map_err(|e| e.to_string())?;
    let lib = PromptCompressor::new(Arc::new(model)).with_generator(Arc::new(Echo));
    for (kind, max_length, ok) in GATES {
        let req = CompressionRequest::new(GATE_TEXT, kind, 0.5).with_max_length(max_length);
        let outcome = lib.compress(&req);
        match (&outcome, ok) {
            (Ok(_), true) => {}
            (Err(CompressError::InvalidRequest { field: "max_length", message }), false)
                if message.contains(rule_for(kind)) => {}
            _ => return Err(format!("library {kind} max_length {max_length}: {outcome:?}")),
        }
        ensure(validate(&req).is_ok() == ok, || format!("validate disagrees for {kind} {max_length}"))?;
    }
    // the gate fires before KiS looks for a generator
    let bare = PromptCompressor::new(Arc::new(NgramModel::uniform(&["w"])));
    let req = CompressionRequest::new(GATE_TEXT, CompressorKind::Kis, 0.5).with_max_length(3);
    ensure(matches!(bare.compress(&req), Err(CompressError::InvalidRequest { .. })), || {
        "KiS gate skipped without a generator".into()
    })?;

    // CLI
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let input = dir.path().join("in.txt");
    let svc_cfg = dir.path().join("service.toml");
    std::fs::write(&input, GATE_TEXT).map_err(|e| e.to_string())?;
    std::fs::write(&svc_cfg, "[generator]\nmodel = \"echo\"\necho = true\n").map_err(|e| e.to_string())?;
    for (kind, max_length, ok) in GATES {
        let out = Command::new(env!("CARGO_BIN_EXE_pct"))
            .args(["compress", "--compressor", kind.name(), "--ratio", "0.5", "--max-length"])
            .arg(max_length.to_string())
            .arg("--input")
            .arg(&input)
            .arg("--config")
            .arg(&svc_cfg)
            .output()
            .map_err(|e| e.to_string())?;
        let stderr = String::from_utf8_lossy(&out.stderr);
        let good = if ok {
            out.status.code() == Some(0)
        } else {
            out.status.code() == Some(1) && stderr.contains(rule_for(kind))
        };
        ensure(good, || format!("CLI {kind} max_length {max_length}: {:?} {stderr}", out.status.code()))?;
    }

    // HTTP
    let cfg = ServiceConfig::from_toml("[generator]\nmodel = \"echo\"\necho = true\n").map_err(|e| e.to_string())?;
    let server = start_service(&cfg);
    for (kind, max_length, ok) in GATES {
        let (status, body) = post_json(
            &server.url("/v1/compress"),
            &json!({"text": GATE_TEXT, "compressor": kind.name(), "ratio": 0.5, "max_length": max_length}),
        );
        let good = if ok {
            status == 200
        } else {
            status == 400
                && body["fields"][0]["field"] == "max_length"
                && body["fields"][0]["message"].as_str().is_some_and(|m| m.contains(rule_for(kind)))
        };
        ensure(good, || format!("HTTP {kind} max_length {max_length}: {status} {body}"))?;
    }
    Ok(format!("{} cases agree at library, CLI and HTTP layers", GATES.len()))
}

// -------------------------------------------------------- service contract

/// Every key in `expected` is present in `actual` with an equal value.
fn subset_match(expected: &Value, actual: &Value, path: &str) -> Result<(), String> {
    match (expected, actual) {
        (Value::Object(e), Value::Object(a)) => e.iter().try_for_each(|(k, v)| {
            let sub = format!("{path}.{k}");
            let got = a.get(k).ok_or_else(|| format!("{sub} missing"))?;
            subset_match(v, got, &sub)
        }),
        (Value::Array(e), Value::Array(a)) => {
            ensure(e.len() == a.len(), || format!("{path}: length {} vs {}", a.len(), e.len()))?;
            e.iter().zip(a).enumerate().try_for_each(|(i, (x, y))| subset_match(x, y, &format!("{path}[{i}]")))
        }
        (Value::Number(e), Value::Number(a)) => {
            let (x, y) = (e.as_f64().unwrap_or(f64::NAN), a.as_f64().unwrap_or(f64::NAN));
            ensure((x - y).abs() <= 1e-12, || format!("{path}: {y} vs {x}"))
        }
        _ => ensure(expected == actual, || format!("{path}: {actual} vs {expected}")),
    }
}

fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

fn service_contract() -> Result<String, String> {
    let server = start_service(&ServiceConfig::default());
    let mut names = Vec::new();
    let mut entries: Vec<_> = std::fs::read_dir(golden_dir())
        .map_err(|e| e.to_string())?
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    entries.sort();
    for path in entries {
        let name = path.file_stem().unwrap().to_string_lossy().into_owned();
        let golden: Value = serde_json::from_str(&std::fs::read_to_string(&path).map_err(|e| e.to_string())?)
            .map_err(|e| format!("{name}: {e}"))?;
        let (status, body) = post_json(&server.url("/v1/compress"), &golden["request"]);
        ensure(u64::from(status) == golden["status"].as_u64().unwrap_or(0), || {
            format!("{name}: status {status}, body {body}")
        })?;
        subset_match(&golden["expect"], &body, &name)?;
        if status == 200 {
            // kept trace tokens, in output order, re-tokenize to the output
            let trace = body["trace"].as_array().ok_or("trace missing")?;
            let order = body["output_order"].as_array().ok_or("output_order missing")?;
            let kept: Vec<String> = order
                .iter()
                .map(|i| trace[i.as_u64().unwrap_or(0) as usize]["token"].as_str().unwrap_or("").to_string())
                .collect();
            let in_source_order: Vec<&str> = trace
                .iter()
                .filter(|e| e["kept"] == true)
                .map(|e| e["token"].as_str().unwrap_or(""))
                .collect();
            let compressed = body["compressed"].as_str().unwrap_or("");
            ensure(tokenize(compressed).tokens() == kept.as_slice(), || format!("{name}: trace/compressed mismatch"))?;
            ensure(in_source_order == kept, || format!("{name}: extractive output reordered"))?;
            ensure(pct_core::text::detokenize(&kept) == compressed, || {
                format!("{name}: detokenized trace differs from compressed")
            })?;
        }
        names.push(name);
    }
    let (status, body, _) = common::get_json(&server.url("/v1/compressors"));
    let kis_unavailable = body["compressors"]
        .as_array()
        .and_then(|l| l.iter().find(|c| c["name"] == "KiS"))
        .is_some_and(|k| k["available"] == false);
    ensure(status == 200 && kis_unavailable, || "KiS should be unavailable without a generator".into())?;
    Ok(format!("golden pairs pass: {}", names.join(", ")))
}

fn main() {
    let checks: [(&str, Check); 9] = [
        ("metric oracles", metric_oracles),
        ("extractive invariants", extractive_invariants),
        ("argmax invariance", argmax_invariance),
        ("scorer normalization", scorer_normalization),
        ("budget conservation", budget_conservation),
        ("SCRL trainer", scrl_trainer),
        ("runner hermetic reproduction", runner_reproduction),
        ("parameter gates", parameter_gates),
        ("service contract", service_contract),
    ];
    let mut out = std::io::stdout();
    let mut failed = 0;
    for (name, check) in checks {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => writeln!(out, "PASS  {name} ({secs:.1} s): {detail}"),
            Err(why) => {
                failed += 1;
                writeln!(out, "FAIL  {name} ({secs:.1} s): {why}")
            }
        }
        .unwrap();
    }
    writeln!(out, "acceptance: {} passed, {failed} failed", checks.len() - failed).unwrap();
    if failed > 0 {
        std::process::exit(1);
    }
}
