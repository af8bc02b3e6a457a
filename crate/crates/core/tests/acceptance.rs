//! Acceptance suite. Runs every criterion in order, prints one PASS/FAIL
//! line each and exits non-zero if any failed.

#![allow(clippy::approx_constant)]

mod support;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config as PropConfig, TestCaseError, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use promptbridge::analysis::{consistency_report, cosine, semantic_deltas, PromptPair, SimilarityMatrix};
use promptbridge::behavior::{default_pattern_config, BehaviorScorer, BehaviorWeights, StructuralChecker};
use promptbridge::config::load_pairs;
use promptbridge::eval::text_similarity;
use promptbridge::evolution::{run_calibration, select_parent, EvolutionConfig, IslandArchive, SelectionMode, TraceLog};
use promptbridge::gateway::{BackendConfig, Gateway, GatewayError, Message, MockScript, ModelClient, ModelSettings, RetryPolicy};
use promptbridge::persist::archive_to_jsonl;
use promptbridge::transfer::{
    adapt_prompt, extract_mapping, extractor_messages, AdapterDomain, AdapterDomainTemplate, TransferError,
};
use promptbridge::{transfer_gap, CandidateRecord, ModelId, ModelRole, PromptOrigin, PromptTemplate};

use support::*;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

// 1 ------------------------------------------------------------------------

fn drift_gap_arithmetic() -> Outcome {
    let start = Instant::now();
    for (transferred, optimal, published) in [(68.70, 79.47, -10.77), (96.95, 99.39, -2.44)] {
        let gap = transfer_gap(transferred, optimal);
        let rounded = (gap * 100.0).round() / 100.0;
        ensure(format!("{rounded:.2}") == format!("{published:.2}"), || {
            format!("gap({transferred}, {optimal}) = {gap}, expected {published}")
        })?;
        ensure((gap - published).abs() < 1e-9, || format!("gap {gap} is off {published} by more than 1e-9"))?;
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(1), || format!("took {elapsed:?}"))?;
    Ok("-10.77 and -2.44 reproduced".into())
}

// 2 ------------------------------------------------------------------------

/// Code exhibiting exactly the requested failures.
fn behavior_case(syntax_fails: bool, entry_fails: bool, risky: bool, undesirable: bool) -> String {
    let name = if entry_fails { "helper" } else { "solve" };
    let mut code = format!("def {name}(x):\n");
    if risky {
        code.push_str("    y = eval(str(x))\n");
    } else {
        code.push_str("    y = x\n");
    }
    code.push_str(if syntax_fails { "    return (y + 1\n" } else { "    return y + 1\n" });
    if undesirable {
        code.push_str("print(1)\n");
    }
    code
}

fn behavior_table() -> Outcome {
    // (syntax, entry point, risk, undesirable) failing -> expected score,
    // written out by hand from the 0.35 / 0.35 / 0.20 / 0.10 weights.
    let table: [((bool, bool, bool, bool), f64); 16] = [
        ((false, false, false, false), 1.00),
        ((true, false, false, false), 0.65),
        ((false, true, false, false), 0.65),
        ((false, false, true, false), 0.80),
        ((false, false, false, true), 0.90),
        ((true, true, false, false), 0.30),
        ((true, false, true, false), 0.45),
        ((true, false, false, true), 0.55),
        ((false, true, true, false), 0.45),
        ((false, true, false, true), 0.55),
        ((false, false, true, true), 0.70),
        ((true, true, true, false), 0.10),
        ((true, true, false, true), 0.20),
        ((true, false, true, true), 0.35),
        ((false, true, true, true), 0.35),
        ((true, true, true, true), 0.00),
    ];
    let scorer = BehaviorScorer::new(BehaviorWeights::default(), &default_pattern_config(), Box::new(StructuralChecker))
        .map_err(|e| e.to_string())?;
    for ((s, e, r, u), expected) in table {
        let code = behavior_case(s, e, r, u);
        let got = scorer.score(&code, Some("solve")).score;
        ensure((got - expected).abs() <= 1e-9, || {
            format!("failures (syntax={s}, entry={e}, risk={r}, undesirable={u}): got {got}, expected {expected}\n{code}")
        })?;
    }
    Ok(format!("{} component subsets scored exactly", table.len()))
}

// 3 and 4 -------------------------------------------------------------------

struct MagicRun {
    archive_jsonl: String,
    trace_jsonl: String,
    best_body: String,
    best_combined: f64,
    curve: Vec<f64>,
    elapsed: Duration,
}

fn magic_run() -> Result<MagicRun, String> {
    let start = Instant::now();
    let task = magic_task(20);
    let target = evaluator(target_script(), "target-mock", &task);
    let reflection = client(reflection_script(), "reflection-mock", ModelRole::Reflection);
    let config = EvolutionConfig::default();
    let result = run_calibration(&task, &seed_prompt(), &target, &reflection, &config, TraceLog::in_memory())
        .map_err(|e| e.to_string())?;
    Ok(MagicRun {
        archive_jsonl: archive_to_jsonl(&result.archive, "acceptance"),
        trace_jsonl: TraceLog::to_jsonl(&result.trace),
        best_body: result.best.body.clone(),
        best_combined: result.archive.global_best().combined,
        curve: result.best_curve(),
        elapsed: start.elapsed(),
    })
}

fn magic_convergence() -> Outcome {
    ensure(reflection_pool()[3].contains(MAGIC), || "token is not at pool position 4".into())?;
    let run = magic_run()?;
    ensure((run.best_combined - 1.0).abs() < 1e-12, || format!("best combined {}", run.best_combined))?;
    ensure(run.best_body.contains(MAGIC), || format!("best prompt lacks the token: {}", run.best_body))?;
    ensure(!run.curve.is_empty(), || "empty best-so-far curve".into())?;
    ensure(run.curve.windows(2).all(|w| w[1] >= w[0]), || format!("curve decreases: {:?}", run.curve))?;
    ensure(run.elapsed < Duration::from_secs(10), || format!("took {:?}", run.elapsed))?;
    Ok(format!("best 1.0 in {:?}, {} iterations", run.elapsed, run.curve.len()))
}

fn determinism() -> Outcome {
    let a = magic_run()?;
    let b = magic_run()?;
    ensure(a.archive_jsonl == b.archive_jsonl, || "archives differ between runs".into())?;
    ensure(a.trace_jsonl == b.trace_jsonl, || "traces differ between runs".into())?;
    Ok(format!(
        "archive {} bytes and trace {} bytes identical",
        a.archive_jsonl.len(),
        a.trace_jsonl.len()
    ))
}

// 5 ------------------------------------------------------------------------

fn record(id: u64, island: usize, combined: f64, generation: u64) -> CandidateRecord {
    let body = format!("variant {id} {{question}}");
    CandidateRecord {
        candidate_id: format!("c{id:06}"),
        prompt: PromptTemplate::new(format!("c{id:06}"), body, PromptOrigin::Evolved),
        combined,
        mean_performance: combined,
        mean_behavior: combined,
        island,
        generation,
        parent_id: None,
        created_at: id,
    }
}

/// Islands of the given sizes with scores drawn from `scores`.
fn archive_of(sizes: &[usize], scores: &[f64], generation: u64, capacity: usize) -> IslandArchive {
    let mut id = 0u64;
    let mut islands = Vec::new();
    for (i, &n) in sizes.iter().enumerate() {
        let mut isl = Vec::new();
        for _ in 0..n {
            let s = scores[id as usize % scores.len()];
            isl.push(record(id, i, s, generation));
            id += 1;
        }
        islands.push(isl);
    }
    let best = islands
        .iter()
        .flatten()
        .max_by(|a, b| a.combined.total_cmp(&b.combined).then(b.created_at.cmp(&a.created_at)))
        .unwrap()
        .candidate_id
        .clone();
    IslandArchive::from_parts(islands, best, generation, capacity, 1.0).expect("valid fixture archive")
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), TestCaseError> {
    if cond {
        Ok(())
    } else {
        Err(TestCaseError::fail(msg()))
    }
}

fn island_mechanics() -> Outcome {
    let cases = 1000;
    let mut runner = TestRunner::new(PropConfig {
        cases,
        failure_persistence: None,
        ..PropConfig::default()
    });

    // Random insert/evict sequences: capacity, non-empty islands, protection.
    let ops = (1usize..=5, 0usize..=12, prop::collection::vec((0usize..5, 0u8..=10), 1..60));
    runner
        .run(&ops, |(k, slack, inserts)| {
            let config = EvolutionConfig {
                islands: k,
                archive_capacity: k + slack,
                lambda: 1.0,
                ..EvolutionConfig::default()
            };
            let seed = PromptTemplate::new("seed", "Solve {question}", PromptOrigin::Seed);
            let mut archive = IslandArchive::seeded(&seed, 0.3, 0.3, &config).unwrap();
            for (island, score) in inserts {
                let s = score as f64 / 10.0;
                let body = format!("child {s} {{question}}");
                let parent = archive.islands()[island % k][0].candidate_id.clone();
                archive
                    .add_child(island % k, PromptTemplate::new("x", body, PromptOrigin::Evolved), s, s, Some(parent))
                    .unwrap();
                let best = archive.global_best_id().to_string();
                let sole: Vec<String> = archive
                    .islands()
                    .iter()
                    .filter(|i| i.len() == 1)
                    .map(|i| i[0].candidate_id.clone())
                    .collect();
                let removed = archive.evict();
                check(!removed.contains(&best), || format!("global best {best} evicted"))?;
                for id in &sole {
                    check(!removed.contains(id), || format!("sole member {id} evicted"))?;
                }
                check(archive.len() <= archive.capacity(), || {
                    format!("{} records over capacity {}", archive.len(), archive.capacity())
                })?;
                check(archive.islands().iter().all(|i| !i.is_empty()), || "an island emptied".into())?;
                archive.check_invariants().map_err(|e| TestCaseError::fail(e.to_string()))?;
            }
            Ok(())
        })
        .map_err(|e| format!("insert/evict: {e}"))?;

    // K = 3, ten records each, rate 0.1: one migrant per island, around the ring.
    let scores = prop::collection::vec(0u8..=100, 30);
    runner
        .run(&scores, |raw| {
            let scores: Vec<f64> = raw.iter().map(|s| *s as f64 / 100.0).collect();
            let mut archive = archive_of(&[10, 10, 10], &scores, 50, 1000);
            let config = EvolutionConfig::default();
            let migration = archive.migrate(&config);
            check(migration.moves.len() == 3, || format!("{} moves", migration.moves.len()))?;
            for from in 0..3 {
                let sent: Vec<_> = migration.moves.iter().filter(|m| m.from == from).collect();
                check(sent.len() == 1 && sent[0].to == (from + 1) % 3, || {
                    format!("island {from} sent {sent:?}")
                })?;
            }
            check(archive.islands().iter().all(|i| i.len() == 11), || "sizes after migration".into())?;
            archive.check_invariants().map_err(|e| TestCaseError::fail(e.to_string()))?;
            Ok(())
        })
        .map_err(|e| format!("migration count: {e}"))?;

    // Migration fires exactly on positive multiples of 50.
    runner
        .run(&(0u64..100_000), |counter| {
            let archive = archive_of(&[1, 1, 1], &[0.5], counter, 10);
            let due = archive.migration_due(&EvolutionConfig::default());
            check(due == (counter > 0 && counter % 50 == 0), || format!("counter {counter}: due = {due}"))
        })
        .map_err(|e| format!("migration timing: {e}"))?;
    for counter in [49u64, 50, 51, 100, 150, 0] {
        let due = archive_of(&[1, 1, 1], &[0.5], counter, 10).migration_due(&EvolutionConfig::default());
        ensure(due == (counter > 0 && counter % 50 == 0), || format!("counter {counter}: due = {due}"))?;
    }
    Ok(format!("3 properties x {cases} cases"))
}

// 6 ------------------------------------------------------------------------

fn selection_ratios() -> Outcome {
    let config = EvolutionConfig::default();
    let archive = archive_of(&[6, 6, 6], &[0.1, 0.5, 0.9, 0.3, 0.7, 0.2], 10, 100);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let draws = 10_000;
    let mut counts = [0usize; 3];
    for i in 0..draws {
        let sel = select_parent(&archive, i % 3, &config, &mut rng);
        counts[match sel.mode {
            SelectionMode::Exploitation => 0,
            SelectionMode::Exploration => 1,
            SelectionMode::Elite => 2,
        }] += 1;
    }
    let freq: Vec<f64> = counts.iter().map(|c| *c as f64 / draws as f64).collect();
    for (f, want) in freq.iter().zip([0.7, 0.2, 0.1]) {
        ensure((f - want).abs() <= 0.02, || format!("frequencies {freq:?}"))?;
    }
    Ok(format!("frequencies {:.4} / {:.4} / {:.4}", freq[0], freq[1], freq[2]))
}

// 7 ------------------------------------------------------------------------

fn transfer_goldens() -> Outcome {
    let pairs = load_pairs(&fixture("pairs3.json")).map_err(|e| e.to_string())?;
    let golden = std::fs::read_to_string(fixture("extractor_prompt_3pairs.txt")).map_err(|e| e.to_string())?;
    let messages = extractor_messages(&pairs);
    let rendered = &messages.last().unwrap().content;
    ensure(rendered == &golden, || format!("extractor prompt differs from golden:\n{rendered}"))?;

    // The exact golden text must be what goes over the wire.
    let extractor_mock = MockScript {
        rules: vec![promptbridge::gateway::MockRule::substring(golden.clone(), "Be explicit and ask for code only.")],
        fallback: "unexpected request".into(),
        ..MockScript::default()
    };
    let source = ModelId::new("model-a", ModelRole::Source).unwrap();
    let target = ModelId::new("model-b", ModelRole::Target).unwrap();
    let mapping = extract_mapping(
        &pairs,
        &source,
        &target,
        &client(extractor_mock, "extractor", ModelRole::MappingExtractor),
        0,
    )
    .map_err(|e| e.to_string())?;
    ensure(mapping.summary == "Be explicit and ask for code only.", || {
        format!("extractor saw a different prompt: {}", mapping.summary)
    })?;

    let template = AdapterDomainTemplate::builtin(AdapterDomain::Coding);
    let original = PromptTemplate::new("seed", "Solve the task.\n{question}", PromptOrigin::Seed);
    let identity = MockScript {
        queue: vec![original.body.clone()],
        ..MockScript::default()
    };
    let adapted = adapt_prompt(
        &original,
        &mapping,
        &template,
        &client(identity, "adapter", ModelRole::Adapter),
        ("model-a", "model-b"),
    )
    .map_err(|e| e.to_string())?;
    ensure(adapted.body == original.body && adapted.placeholders == original.placeholders, || {
        format!("identity adapt changed the prompt: {adapted:?}")
    })?;

    let dropping = MockScript {
        queue: vec!["Optimized Prompt: Solve the task.".into()],
        ..MockScript::default()
    };
    let rejected = adapt_prompt(
        &original,
        &mapping,
        &template,
        &client(dropping, "adapter", ModelRole::Adapter),
        ("model-a", "model-b"),
    );
    ensure(matches!(rejected, Err(TransferError::MissingPlaceholders { .. })), || {
        format!("placeholder-dropping adapter not rejected: {rejected:?}")
    })?;
    Ok(format!("golden {} bytes matched; identity and rejection hold", golden.len()))
}

// 8 ------------------------------------------------------------------------

/// Brute force: pair each predicted token with an unused equal reference
/// token, then F1 = 2·overlap / (|pred| + |ref|).
fn f1_oracle(pred: &str, reference: &str) -> f64 {
    let p: Vec<&str> = pred.split_whitespace().collect();
    let r: Vec<&str> = reference.split_whitespace().collect();
    if p.is_empty() && r.is_empty() {
        return 1.0;
    }
    if p.is_empty() || r.is_empty() {
        return 0.0;
    }
    let mut used = vec![false; r.len()];
    let mut overlap = 0;
    for tok in &p {
        if let Some(j) = (0..r.len()).find(|&j| !used[j] && r[j] == *tok) {
            used[j] = true;
            overlap += 1;
        }
    }
    2.0 * overlap as f64 / (p.len() + r.len()) as f64
}

fn random_text(rng: &mut ChaCha8Rng) -> String {
    const VOCAB: [&str; 8] = ["a", "b", "c", "def", "x", "(y)", "return", "ß"];
    const SEPS: [&str; 4] = [" ", "  ", "\n", "\t"];
    let n = rng.gen_range(0..12);
    let mut s = String::new();
    for _ in 0..n {
        s.push_str(VOCAB[rng.gen_range(0..VOCAB.len())]);
        s.push_str(SEPS[rng.gen_range(0..SEPS.len())]);
    }
    s
}

fn f1_oracle_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..1000 {
        let (a, b) = (random_text(&mut rng), random_text(&mut rng));
        let (got, want) = (text_similarity(&a, &b), f1_oracle(&a, &b));
        ensure((got - want).abs() <= 1e-9, || format!("F1({a:?}, {b:?}) = {got}, oracle {want}"))?;
    }
    Ok("1000 random pairs agree".into())
}

// 9 ------------------------------------------------------------------------

fn embedder(overrides: BTreeMap<String, Vec<f64>>) -> ModelClient {
    let script = MockScript {
        embedding_dim: 16,
        embeddings: overrides,
        ..MockScript::default()
    };
    client(script, "embedder", ModelRole::Embedding)
}

fn symmetric_unit_diagonal(m: &SimilarityMatrix) -> Result<(), String> {
    let n = m.values.len();
    for i in 0..n {
        let d = m.values[i][i].ok_or_else(|| format!("diagonal {i} undefined"))?;
        ensure((d - 1.0).abs() <= 1e-9, || format!("diagonal {i} = {d}"))?;
        for j in 0..n {
            ensure(m.values[i][j] == m.values[j][i], || format!("asymmetric at ({i}, {j})"))?;
        }
    }
    Ok(())
}

fn analysis_invariants() -> Outcome {
    let embed = embedder(BTreeMap::new());
    let pairs: Vec<PromptPair> = (0..4)
        .map(|i| PromptPair {
            label: format!("task{i}"),
            source: format!("Solve problem {i}."),
            target: format!("Carefully solve problem {i} and return code."),
        })
        .collect();
    symmetric_unit_diagonal(&semantic_deltas(&pairs, &embed).map_err(|e| e.to_string())?)?;
    let runs: Vec<String> = (0..5).map(|i| format!("summary variant {i}")).collect();
    symmetric_unit_diagonal(&consistency_report(&runs, &embed).map_err(|e| e.to_string())?.matrix)?;

    let c = cosine(&[1.0, 0.0], &[1.0, 1.0]).map_err(|e| e.to_string())?;
    ensure((c - 0.7071).abs() <= 1e-4, || format!("cosine = {c}"))?;
    let fixed = embedder(BTreeMap::from([("x".to_string(), vec![1.0, 0.0]), ("y".to_string(), vec![1.0, 1.0])]));
    let report = consistency_report(&["x".to_string(), "y".to_string()], &fixed).map_err(|e| e.to_string())?;
    let c = report.matrix.values[0][1].unwrap_or(f64::NAN);
    ensure((c - 0.7071).abs() <= 1e-4, || format!("consistency cosine = {c}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let vectors: Vec<Vec<f64>> = (0..4).map(|_| (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let labels: Vec<String> = (0..4).map(|i| i.to_string()).collect();
    let base = SimilarityMatrix::cosine_of(labels.clone(), &vectors).map_err(|e| e.to_string())?;
    for _ in 0..100 {
        let scaled: Vec<Vec<f64>> = vectors
            .iter()
            .map(|v| {
                let k: f64 = rng.gen_range(1e-3..1e3);
                v.iter().map(|x| x * k).collect()
            })
            .collect();
        let m = SimilarityMatrix::cosine_of(labels.clone(), &scaled).map_err(|e| e.to_string())?;
        for (row_a, row_b) in base.values.iter().zip(&m.values) {
            for (a, b) in row_a.iter().zip(row_b) {
                let (a, b) = (a.unwrap(), b.unwrap());
                ensure((a - b).abs() <= 1e-9, || format!("rescaling moved {a} to {b}"))?;
            }
        }
    }
    Ok("symmetry, unit diagonal, 0.7071 and 100 rescalings hold".into())
}

// 10 -----------------------------------------------------------------------

fn http_client(stub: &StubServer, max_in_flight: usize, retry: RetryPolicy) -> Result<ModelClient, String> {
    let mut cfg = BackendConfig::http(stub.base_url.clone());
    cfg.max_in_flight = max_in_flight;
    cfg.retry = retry;
    cfg.timeout_ms = 5_000;
    cfg.api_key_env = "PROMPTBRIDGE_ACCEPTANCE_UNSET_KEY".into();
    let gateway = Gateway::from_config(&cfg).map_err(|e| e.to_string())?;
    Ok(ModelClient::new(
        Arc::new(gateway),
        ModelId::new("stub-model", ModelRole::Target).unwrap(),
        ModelSettings::named("stub-model"),
    ))
}

fn wire_protocol() -> Outcome {
    let fast = RetryPolicy {
        max_attempts: 4,
        backoff_ms: 1,
        max_backoff_ms: 5,
    };

    let stub = StubServer::start(Duration::ZERO);
    let c = http_client(&stub, 4, fast)?;
    let reply = c.chat(vec![Message::user("hello")]).map_err(|e| e.to_string())?;
    ensure(reply.content == STUB_REPLY, || format!("chat content {:?}", reply.content))?;
    ensure(reply.usage.prompt_tokens == 11 && reply.usage.completion_tokens == 2, || {
        format!("usage {:?}", reply.usage)
    })?;
    let texts = vec!["a".to_string(), "bbb".to_string(), "cc".to_string()];
    let vectors = c.embed(&texts).map_err(|e| e.to_string())?;
    let want = vec![vec![1.0, 0.0, 1.0], vec![3.0, 1.0, 1.0], vec![2.0, 2.0, 1.0]];
    ensure(vectors == want, || format!("embeddings {vectors:?}"))?;
    let requests = stub.requests();
    ensure(requests[0].path == "/v1/chat/completions" && requests[1].path == "/v1/embeddings", || {
        format!("paths {:?}", requests.iter().map(|r| &r.path).collect::<Vec<_>>())
    })?;
    ensure(requests[0].body["messages"][0] == json!({"role": "user", "content": "hello"}), || {
        format!("chat body {}", requests[0].body)
    })?;

    // 429 twice, then success: three requests in total.
    let stub = StubServer::start(Duration::ZERO);
    stub.fail_next(&[429, 429]);
    let c = http_client(&stub, 1, fast)?;
    c.chat(vec![Message::user("retry me")]).map_err(|e| e.to_string())?;
    ensure(stub.hits() == 3, || format!("{} requests for two 429s", stub.hits()))?;

    // Exhaustion: exactly max_attempts requests, then a transport error.
    let stub = StubServer::start(Duration::ZERO);
    stub.fail_next(&[429; 10]);
    let c = http_client(&stub, 1, fast)?;
    let err = c.chat(vec![Message::user("give up")]);
    ensure(matches!(&err, Err(GatewayError::Transport { attempts }) if attempts.len() == 4), || {
        format!("exhaustion returned {err:?}")
    })?;
    ensure(stub.hits() == 4, || format!("{} requests with max_attempts 4", stub.hits()))?;

    // In-flight bound under 16 concurrent callers.
    let stub = StubServer::start(Duration::from_millis(40));
    let c = http_client(&stub, 3, fast)?;
    std::thread::scope(|s| {
        for i in 0..16 {
            let c = &c;
            s.spawn(move || c.chat(vec![Message::user(format!("call {i}"))]).map(|_| ()));
        }
    });
    ensure(stub.hits() == 16, || format!("{} of 16 calls arrived", stub.hits()))?;
    ensure(stub.peak() <= 3, || format!("stub saw {} concurrent requests", stub.peak()))?;
    Ok(format!("parse ok, 429 retried per policy, peak {} <= 3", stub.peak()))
}

// 11 -----------------------------------------------------------------------

const SECOND_MAGIC: &str = "OKAPI-3";

/// Source model answers correctly on `ZEBRA-7`, target on `OKAPI-3`.
fn e2e_config(dir: &Path) -> Value {
    let answer = |token: &str| {
        json!({"kind": "mock", "mock": {
            "rules": [{"matcher": {"substring": token}, "response": CORRECT}],
            "fallback": WRONG
        }})
    };
    let pool: Vec<String> = [
        "Think step by step.\n{question}".to_string(),
        format!("Follow the {SECOND_MAGIC} checklist.\n{{question}}"),
        "Write clean Python.\n{question}".to_string(),
        format!("Use the {MAGIC} convention.\n{{question}}"),
    ]
    .iter()
    .map(|b| format!("```\n{b}\n```"))
    .collect();
    let adapted = format!("Optimized Prompt:\nFollow the {SECOND_MAGIC} checklist and return only code.\n{{question}}");
    json!({
        "backends": {
            "source": answer(MAGIC),
            "target": answer(SECOND_MAGIC),
            "reflection": {"kind": "mock", "mock": {"queue": pool, "cycle_queue": true}},
            "mapping_extractor": {"kind": "mock", "mock": {"fallback": format!("Target prompts name the {SECOND_MAGIC} checklist.")}},
            "adapter": {"kind": "mock", "mock": {"fallback": adapted}}
        },
        "models": {
            "source": {"name": "model-a"},
            "target": {"name": "model-b"},
            "reflection": {"name": "reflector"},
            "mapping_extractor": {"name": "extractor"},
            "adapter": {"name": "adapter"}
        },
        "evolution": {"global_iters": 5, "local_steps": 4, "n_calibration": 6, "rng_seed": 3},
        "fixed_clock": 1,
        "paths": {"artifacts": dir.join("artifacts")}
    })
}

fn write_json(path: &Path, value: &Value) -> Result<(), String> {
    std::fs::write(path, serde_json::to_string_pretty(value).unwrap()).map_err(|e| format!("{}: {e}", path.display()))
}

fn read_json(path: &Path) -> Result<Value, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
}

fn cli(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_promptbridge"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!(
            "`{}` exited {:?}: {}",
            args.join(" "),
            out.status.code(),
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn end_to_end() -> Outcome {
    let start = Instant::now();
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dir = tmp.path();
    let p = |name: &str| dir.join(name).display().to_string();

    write_json(&dir.join("config.json"), &e2e_config(dir))?;
    write_json(&dir.join("task.json"), &serde_json::to_value(magic_task(8)).unwrap())?;
    std::fs::write(dir.join("seed.txt"), "Solve the following problem in Python.\n{question}\n").unwrap();
    let mut unseen = magic_task(4);
    unseen.id = "unseen".into();
    write_json(&dir.join("unseen.json"), &serde_json::to_value(unseen).unwrap())?;

    for (role, name) in [("source", "a"), ("target", "b")] {
        cli(&[
            "calibrate", "--task", &p("task.json"), "--seed-prompt", &p("seed.txt"), "--config", &p("config.json"),
            "--model", role, "--out", &p(&format!("{name}.db.jsonl")), "--best", &p(&format!("prompts/model-{name}.json")),
        ])?;
    }
    let best_a = read_json(&dir.join("prompts/model-a.json"))?;
    let best_b = read_json(&dir.join("prompts/model-b.json"))?;
    ensure(best_a["body"].as_str().is_some_and(|b| b.contains(MAGIC)), || format!("source best {best_a}"))?;
    ensure(best_b["body"].as_str().is_some_and(|b| b.contains(SECOND_MAGIC)), || format!("target best {best_b}"))?;

    write_json(
        &dir.join("pairs.json"),
        &json!([{
            "task_id": "increment",
            "source_prompt": best_a["body"],
            "target_prompt": best_b["body"],
            "dataset_info": "Implement a small Python function."
        }]),
    )?;
    cli(&["transfer", "extract", "--pairs", &p("pairs.json"), "--config", &p("config.json"), "--out", &p("mapping.json")])?;
    cli(&[
        "transfer", "adapt", "--mapping", &p("mapping.json"), "--source-prompt", &p("seed.txt"), "--domain", "coding",
        "--config", &p("config.json"), "--out", &p("adapted.json"),
    ])?;
    let adapted = read_json(&dir.join("adapted.json"))?;
    ensure(adapted["body"].as_str().is_some_and(|b| b.contains(SECOND_MAGIC) && b.contains("{question}")), || {
        format!("adapted prompt {adapted}")
    })?;
    let eval = cli(&[
        "eval", "--prompt", &p("adapted.json"), "--task", &p("unseen.json"), "--model", "target", "--config",
        &p("config.json"),
    ])?;
    let eval: Value = serde_json::from_str(&eval).map_err(|e| e.to_string())?;
    ensure(eval["pass_at_1"] == json!(1.0), || format!("adapted prompt on the unseen task: {eval}"))?;

    cli(&[
        "drift", "--config", &p("config.json"), "--prompts", &p("prompts"), "--task", &p("task.json"), "--runs", "2",
        "--out", &p("drift"),
    ])?;
    let drift = read_json(&dir.join("drift/drift.json"))?;
    let gap: Vec<Vec<f64>> = serde_json::from_value(drift["gap"].clone()).map_err(|e| e.to_string())?;
    ensure(gap.len() == 2 && gap.iter().all(|r| r.len() == 2), || format!("gap shape {gap:?}"))?;
    ensure(gap[0][0] == 0.0 && gap[1][1] == 0.0, || format!("gap diagonal {gap:?}"))?;
    ensure(gap[0][1] < 0.0 && gap[1][0] < 0.0, || format!("no drift visible off the diagonal: {gap:?}"))?;
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(30), || format!("took {elapsed:?}"))?;
    Ok(format!("pipeline finished in {elapsed:?}; gap {gap:?}"))
}

// ---------------------------------------------------------------------------

fn main() {
    let criteria: [Criterion; 11] = [
        ("drift-gap arithmetic", drift_gap_arithmetic),
        ("behavior score table", behavior_table),
        ("magic-token convergence", magic_convergence),
        ("determinism", determinism),
        ("island mechanics", island_mechanics),
        ("selection ratios", selection_ratios),
        ("transfer goldens", transfer_goldens),
        ("text-similarity oracle", f1_oracle_equivalence),
        ("analysis invariants", analysis_invariants),
        ("wire protocol", wire_protocol),
        ("end-to-end CLI", end_to_end),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|x| name.contains(x.as_str())) {
            continue;
        }
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into());
            Err(msg)
        });
        match outcome {
            Ok(detail) => println!("PASS criterion {:>2}: {name} ({detail})", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {:>2}: {name}: {why}", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
