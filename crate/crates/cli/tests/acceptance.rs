//! Acceptance criteria, one PASS/FAIL line each. Runs offline.
//!
//! A criterion that needs external data which is not present prints FAIL
//! with the reason but does not fail the process; every other FAIL does.

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use targen_core::analysis::pvi::{entropy_bits, featurize, pvi_examples, train_examples, LogisticModel, ModelFamilyConfig};
use targen_core::analysis::semantic::Embedding;
use targen_core::analysis::{
    entity_distribution, leakage_check, pairwise_similarity_stats, vocab_count, EmbeddingProvider,
    EntityTag, Gazetteer, HashedProvider, SimilarityOptions,
};
use targen_core::backend::{ChatRequest, ChatResponse, MockBackend, MockScript};
use targen_core::instance::{Dataset, Fields, GeneratedInstance, InstanceSeed};
use targen_core::pipeline::{generate_instances, generate_seeds, plan_labels, run_pipeline, PipelineConfig};
use targen_core::schema::BalancePolicy;
use targen_core::selfcorrect::{self_correct_dataset, CorrectionOptions};
use targen_core::taskpacks::{builtin_task, validate_instance};

const WSC_DIR_VAR: &str = "TARGEN_WSC_DIR";

enum Outcome {
    Pass(String),
    Fail(String),
    /// Failed because required external data is absent.
    Blocked(String),
}

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(condition: bool, message: impl FnOnce() -> String) -> Result<(), String> {
    if condition {
        Ok(())
    } else {
        Err(message())
    }
}

fn rte_script(contexts: usize, seeds: usize) -> String {
    let domains: Vec<String> = (1..=contexts).map(|i| format!("{i}. Domain number {i}")).collect();
    let sentences: Vec<String> = (1..=contexts)
        .map(|c| {
            (1..=seeds)
                .map(|s| format!("{s}. In domain {c} the committee approved plan {s} after a long debate."))
                .collect::<Vec<_>>()
                .join("\n")
        })
        .collect();
    serde_json::json!({"rules": [
        {"contains": "topics or domains", "responses": [domains.join("\n")]},
        {"contains": "Continue the list", "responses": [domains.join("\n")]},
        {"contains": "complex sentences", "responses": sentences},
        {"contains": "logically sound hypothesis", "responses": ["Hypothesis: A plan was approved."]},
        {"contains": "logically unsound hypothesis", "responses": ["Hypothesis: The committee was never formed."]},
    ]})
    .to_string()
}

fn targen(dir: &Path, args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_targen"))
        .args(args)
        .current_dir(dir)
        .env_remove("TARGEN_ENDPOINT")
        .env_remove("TARGEN_API_KEY")
        .output()
        .expect("targen runs")
}

fn replay_determinism() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    std::fs::write(dir.path().join("mock.json"), rte_script(4, 5)).map_err(|e| e.to_string())?;
    let common = ["--task", "rte", "--total", "20", "--contexts", "4", "--seeds-per-context", "5", "--reproducible"];
    let record = targen(
        dir.path(),
        &[&["generate"][..], &common, &["--backend", "mock:mock.json", "--record", "t.jsonl", "--out", "a.jsonl"]].concat(),
    );
    ensure(record.status.success(), || String::from_utf8_lossy(&record.stderr).into_owned())?;
    let started = Instant::now();
    for out in ["b.jsonl", "c.jsonl"] {
        let run = targen(dir.path(), &[&["replay", "--transcript", "t.jsonl"][..], &common, &["--out", out]].concat());
        ensure(run.status.success(), || String::from_utf8_lossy(&run.stderr).into_owned())?;
    }
    let elapsed = started.elapsed().as_secs_f64();
    let b = std::fs::read(dir.path().join("b.jsonl")).map_err(|e| e.to_string())?;
    let c = std::fs::read(dir.path().join("c.jsonl")).map_err(|e| e.to_string())?;
    ensure(b == c, || "replayed files differ".into())?;
    ensure(b.iter().filter(|&&x| x == b'\n').count() == 21, || "expected manifest plus 20 instances".into())?;
    ensure(elapsed < 5.0, || format!("two replays took {elapsed:.2}s"))?;
    Ok(format!("20 instances, {} bytes identical, {elapsed:.2}s", b.len()))
}

fn label_plans() -> Check {
    let mut detail = Vec::new();
    for (task, total) in [("rte", 2490), ("wic", 4843), ("wsc", 544)] {
        let pack = builtin_task(task).map_err(|e| e.to_string())?;
        let plan = plan_labels(&pack.spec.label_schema, total, &BalancePolicy::Balanced).map_err(|e| e.to_string())?;
        let counts: Vec<usize> = plan.counts().iter().map(|c| c.count).collect();
        let spread = counts.iter().max().unwrap() - counts.iter().min().unwrap();
        ensure(plan.len() == total && counts.iter().sum::<usize>() == total, || format!("{task}: total {}", plan.len()))?;
        ensure(spread <= 1, || format!("{task}: counts {counts:?}"))?;
        detail.push(format!("{task} {counts:?}"));
    }
    let cb = builtin_task("cb").map_err(|e| e.to_string())?;
    let explicit = BalancePolicy::Explicit(vec![
        ("contradiction".into(), 119),
        ("entailment".into(), 115),
        ("neutral".into(), 16),
    ]);
    let plan = plan_labels(&cb.spec.label_schema, 250, &explicit).map_err(|e| e.to_string())?;
    let count = |label: &str| plan.counts().iter().find(|c| c.label == label).map_or(0, |c| c.count);
    ensure(
        count("contradiction") == 119 && count("entailment") == 115 && count("neutral") == 16,
        || format!("cb: {:?}", plan.counts()),
    )?;
    detail.push("cb 119/115/16".into());
    Ok(detail.join(", "))
}

fn seed(id: &str, pairs: &[(&str, &str)]) -> InstanceSeed {
    let payload: Fields = pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
    InstanceSeed::new(id, Some("c0001".into()), Some("fixture".into()), payload).expect("seed")
}

fn one_instance(task: &str, seeds: &[InstanceSeed], label: &str, response: &str) -> Result<GeneratedInstance, String> {
    let pack = builtin_task(task).map_err(|e| e.to_string())?;
    let schema = &pack.spec.label_schema;
    let policy = if schema.is_open() {
        BalancePolicy::Balanced
    } else {
        BalancePolicy::Explicit(schema.labels().iter().map(|l| (l.clone(), usize::from(l == label))).collect())
    };
    let plan = plan_labels(schema, 1, &policy).map_err(|e| e.to_string())?;
    let mock = MockBackend::queue([response]);
    let config = PipelineConfig {
        reproducible: true,
        ..PipelineConfig::with_total(1)
    };
    let mut out = generate_instances(&pack, &mock, seeds, &plan, &config).map_err(|e| format!("{task}: {e}"))?;
    let instance = out.pop().ok_or_else(|| format!("{task}: no instance"))?;
    let issues = validate_instance(&pack, &instance);
    ensure(issues.is_empty(), || format!("{task}: {issues:?}"))?;
    Ok(instance)
}

fn expect_input(instance: &GeneratedInstance, field: &str, value: &str) -> Result<(), String> {
    let got = instance.inputs().get(field).map(String::as_str);
    ensure(got == Some(value), || format!("{field}: {got:?}, expected {value:?}"))
}

const KEY_DEFINITIONS: &str = "1. a piece of shaped metal used to open or close a lock\n2. a button or lever on a keyboard or musical instrument\n3. a crucial or central element\n4. to provide something with a key or identifying code";
const TROOPS_PASSAGE: &str = "Georges Lamour saw something drift his way - a yellow-green cloud. 'All my trenches are choked,' he cried. Chlorine gas was carried by winds over Flanders Fields from German positions. German forces launched their first attack using gas on April 22, 1915.";
const TROOPS_QUERY: &str = "Had they been able to peer a bit further, they would have seen how [X] troops had dug in, under cover of night, more than 5,000 gas cylinders with tubes pointing their way.";

fn worked_fixtures() -> Check {
    let mut names = Vec::new();

    let cb = builtin_task("cb").map_err(|e| e.to_string())?;
    let silent = MockBackend::queue(Vec::<String>::new());
    let cb_seeds =
        generate_seeds(&cb, &silent, &["a concert hall".to_string()], 1, &PipelineConfig::with_total(0)).map_err(|e| e.to_string())?;
    let singer = one_instance(
        "cb",
        &cb_seeds,
        "entailment",
        "Sentence 1: The singer was very nervous.\nSentence 2: The singer saw critics in the front row.",
    )?;
    expect_input(&singer, "premise", "The singer was very nervous.")?;
    expect_input(&singer, "hypothesis", "The singer saw critics in the front row.")?;
    names.push("cb singer");

    let shadow = one_instance(
        "copa",
        &[seed("copa-s00001", &[("sentence", "I cast a long shadow."), ("query", "cause")])],
        "Choice 1",
        "Hypothesis 1: The sun was low in the sky.\nHypothesis 2: The grass was tall.\nExplanation: Hypothesis 1, the low position of the sun is more likely to cause a long shadow.",
    )?;
    expect_input(&shadow, "premise", "I cast a long shadow. What was the CAUSE of this?")?;
    expect_input(&shadow, "choice1", "The sun was low in the sky.")?;
    ensure(shadow.original_label() == "Choice 1", || shadow.original_label().to_string())?;
    names.push("copa shadow");

    let stairs = one_instance(
        "copa",
        &[seed("copa-s00002", &[("sentence", "I fell down the stairs."), ("query", "result")])],
        "Choice 1",
        "Hypothesis 1: I injured myself.\nHypothesis 2: My mother bought a new car.",
    )?;
    expect_input(&stairs, "premise", "I fell down the stairs. What was the RESULT of this?")?;
    names.push("copa stairs");

    let passage = "The Millennium Falcon is a fictional starship in Star Wars. It is commanded by smuggler Han Solo, with Chewbacca as first mate.";
    let falcon = one_instance(
        "boolq",
        &[seed("boolq-s00001", &[("topic", "Star Wars"), ("passage", passage)])],
        "True",
        " Does Han Solo work with Chewbacca?",
    )?;
    expect_input(&falcon, "question", "Does Han Solo work with Chewbacca?")?;
    names.push("boolq falcon");

    let troops = one_instance(
        "record",
        &[seed("record-s00001", &[("topic", "The first gas attack"), ("passage", TROOPS_PASSAGE)])],
        "",
        &format!("{TROOPS_QUERY}\nAnswer: German\nExplanation: The paragraph mentions German forces using gas."),
    )?;
    expect_input(&troops, "query", TROOPS_QUERY)?;
    ensure(troops.original_label() == "German", || troops.original_label().to_string())?;
    names.push("record troops");

    let key_seed = [seed("wic-s00001", &[("word", "key"), ("definitions", KEY_DEFINITIONS)])];
    let same = one_instance(
        "wic",
        &key_seed,
        "True",
        "1. a piece of shaped metal used to open or close a lock\nSentences:\n1. I lost my key yesterday\n2. He shouldn't steal people's keys.",
    )?;
    expect_input(&same, "sentence1", "I lost my key yesterday")?;
    let different = one_instance(
        "wic",
        &key_seed,
        "False",
        "1. I lost my key yesterday\n2. This key on the piano is out of tune.\n3. The key to victory is planning ahead.\n4. I don't know what to key in to gain access.",
    )?;
    expect_input(&different, "sentence2", "This key on the piano is out of tune.")?;
    names.push("wic key");

    let shoot_seed = [seed(
        "wic-s00002",
        &[("word", "shoot"), ("definitions", "1. to fire a bullet\n2. click a picture\n3. record on video\n4. a movie set.")],
    )];
    let shoot = one_instance(
        "wic",
        &shoot_seed,
        "False",
        "1. The hunters shoot at dawn.\n2. We shoot the wedding photos tomorrow.\n3. They shoot the scene on video.\n4. The shoot ran late.",
    )?;
    expect_input(&shoot, "word", "shoot")?;
    names.push("wic shoot");

    let councilmen = one_instance(
        "wsc",
        &[seed(
            "wsc-s00001",
            &[("pair", "city councilmen, demonstrators"), ("subject1", "city councilmen"), ("subject2", "demonstrators"), ("pronouns", "They/them")],
        )],
        "True",
        "S1: The city councilmen refused the demonstrators a permit because [they=city councilmen] feared violence.\nS2: The city councilmen refused the demonstrators a permit because [they=demonstrators] advocated violence.",
    )?;
    expect_input(
        &councilmen,
        "text",
        "The city councilmen refused the demonstrators a permit because they feared violence.",
    )?;
    expect_input(&councilmen, "subject1", "city councilmen")?;
    expect_input(&councilmen, "pronoun", "they")?;
    names.push("wsc councilmen");

    Ok(format!("{} fixtures valid: {}", names.len(), names.join(", ")))
}

fn rte_dataset(total: usize) -> Result<Dataset, String> {
    let pack = builtin_task("rte").map_err(|e| e.to_string())?;
    let script = MockScript::parse(&rte_script(4, 5)).map_err(|e| e.to_string())?;
    let config = PipelineConfig {
        contexts: Some(4),
        seeds_per_context: Some(5),
        reproducible: true,
        ..PipelineConfig::with_total(total)
    };
    run_pipeline(&pack, &MockBackend::from_script(script), &config).map_err(|e| e.to_string())
}

fn flipping(dataset: &Dataset, flips: BTreeSet<usize>) -> MockBackend {
    let labels: Vec<String> = dataset.instances().iter().map(|i| i.original_label().to_string()).collect();
    MockBackend::from_fn(move |index, _: &ChatRequest| {
        let text = if flips.contains(&index) {
            let other = if labels[index] == "entailment" { "not entailment" } else { "entailment" };
            format!("The output is INCORRECT.\nActual result: {other}\nExplanation: scripted flip.")
        } else {
            "The output is CORRECT.\nExplanation: scripted.".to_string()
        };
        Ok(ChatResponse::stop(text))
    })
}

fn self_correction_conservation() -> Check {
    let pack = builtin_task("rte").map_err(|e| e.to_string())?;
    let dataset = rte_dataset(20)?;
    let rows: Vec<usize> = ["entailment", "not entailment"]
        .iter()
        .map(|l| dataset.instances().iter().filter(|i| i.original_label() == *l).count())
        .collect();
    let options = CorrectionOptions::default();
    let mut detail = Vec::new();
    for flips in [BTreeSet::new(), BTreeSet::from([0, 3, 7, 12, 19]), (0..20).collect()] {
        let k = flips.len();
        let (_, matrix) = self_correct_dataset(&pack, &flipping(&dataset, flips), dataset.clone(), &options)
            .map_err(|e| e.to_string())?;
        let off_diagonal = matrix.cell(0, 1) + matrix.cell(1, 0);
        ensure(off_diagonal == k, || format!("k={k}: off-diagonal {off_diagonal}"))?;
        ensure(matrix.relabeled_total() == k, || format!("k={k}: relabeled {}", matrix.relabeled_total()))?;
        for (row, &expected) in rows.iter().enumerate() {
            ensure(matrix.row_total(row) == expected, || format!("k={k}: row {row} sums to {}", matrix.row_total(row)))?;
        }
        detail.push(format!("k={k} ok"));
    }
    Ok(format!("n=20 rows {rows:?}; {}", detail.join(", ")))
}

fn wsc_texts(dir: &Path) -> Result<Vec<String>, String> {
    let mut texts = Vec::new();
    for split in ["train.jsonl", "val.jsonl"] {
        let path = dir.join(split);
        let body = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
        for line in body.lines().filter(|l| !l.trim().is_empty()) {
            let value: Value = serde_json::from_str(line).map_err(|e| format!("{}: {e}", path.display()))?;
            texts.push(value["text"].as_str().ok_or("record has no text")?.to_string());
        }
    }
    Ok(texts)
}

fn lexical_anchor() -> Outcome {
    if vocab_count::<String>(&[]) != 0 {
        return Outcome::Fail("empty corpus does not give 0".into());
    }
    let Some(dir) = std::env::var_os(WSC_DIR_VAR) else {
        return Outcome::Blocked(format!(
            "original WSC corpus not available offline; set {WSC_DIR_VAR} to a directory with train.jsonl and val.jsonl (empty corpus -> 0 ok)"
        ));
    };
    let texts = match wsc_texts(Path::new(&dir)) {
        Ok(texts) => texts,
        Err(e) => return Outcome::Blocked(e),
    };
    let vocab = vocab_count(&texts);
    let (low, high) = (8800.0 * 0.85, 8800.0 * 1.15);
    let detail = format!("vocab {vocab} over {} texts, band [{low:.0}, {high:.0}]", texts.len());
    if (low..=high).contains(&(vocab as f64)) {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn cosine_dense(a: &Embedding, b: &Embedding) -> f64 {
    let mut dense = std::collections::BTreeMap::new();
    for &(i, v) in a.entries() {
        dense.insert(i, v);
    }
    let dot: f64 = b.entries().iter().map(|(i, v)| dense.get(i).copied().unwrap_or(0.0) * v).sum();
    let norm = |e: &Embedding| e.entries().iter().map(|(_, v)| v * v).sum::<f64>().sqrt();
    dot / (norm(a) * norm(b))
}

fn semantic_oracle() -> Check {
    let texts: Vec<String> = [
        "The museum opened a new wing for modern sculpture.",
        "A storm delayed every flight out of the airport.",
        "The bakery sells bread made from ancient grains.",
        "Critics praised the orchestra for its bold programme.",
        "The river flooded the valley after days of rain.",
        "Students built a robot that sorts recycling.",
        "The bakery sells bread made from ancient grains.",
        "Farmers rotated crops to restore the soil.",
        "A new bridge will link the two halves of the city.",
        "The goalkeeper saved a penalty in the final minute.",
        "The library extended its opening hours for exams.",
        "Engineers tested the rocket engine in the desert.",
        "The chef added saffron to the rice.",
        "Volunteers cleaned the beach on Saturday morning.",
        "The startup raised money to expand abroad.",
        "A comet will be visible from the southern hemisphere.",
        "The council approved a plan for more bike lanes.",
        "The museum opened a new wing for modern sculpture.",
    ]
    .map(String::from)
    .to_vec();
    let provider = HashedProvider::default();
    let embeddings = provider.embed(&texts);
    let n = texts.len();
    let mut sims = Vec::new();
    let mut identical = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let s = cosine_dense(&embeddings[i], &embeddings[j]);
            if texts[i] == texts[j] {
                identical.push(s);
            }
            sims.push(s);
        }
    }
    let mean = sims.iter().sum::<f64>() / sims.len() as f64;
    let std = (sims.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / sims.len() as f64).sqrt();
    for max_pairs in [n * (n - 1) / 2, 100_000] {
        let options = SimilarityOptions {
            max_pairs,
            ..SimilarityOptions::default()
        };
        let stats = pairwise_similarity_stats(&texts, &provider, &options).map_err(|e| e.to_string())?;
        ensure(stats.exhaustive && stats.pairs == sims.len(), || format!("pairs {}", stats.pairs))?;
        ensure((stats.mean - mean).abs() < 1e-9, || format!("mean {} vs {mean}", stats.mean))?;
        ensure((stats.std - std).abs() < 1e-9, || format!("std {} vs {std}", stats.std))?;
    }
    ensure(identical.len() == 2, || "fixture needs two identical pairs".into())?;
    for s in &identical {
        ensure((s - 1.0).abs() < 1e-6, || format!("identical pair scored {s}"))?;
    }
    Ok(format!("n={n}, {} pairs, mean {mean:.6}, identical pairs 1.0", sims.len()))
}

fn random_word(rng: &mut ChaCha8Rng, len: usize) -> String {
    (0..len).map(|_| rng.gen_range(b'a'..=b'z') as char).collect()
}

fn pvi_suite() -> Check {
    let started = Instant::now();
    let config = ModelFamilyConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);

    let balanced: Vec<String> = (0..200).map(|i| if i % 2 == 0 { "yes" } else { "no" }.to_string()).collect();
    let noise: Vec<String> = (0..200).map(|_| random_word(&mut rng, 6)).collect();
    let family = train_examples(&noise, &balanced, None, &config).map_err(|e| e.to_string())?;
    let entropy = entropy_bits(&family.null.predict(&Embedding::default()));
    ensure((entropy - 1.0).abs() <= 0.01, || format!("null entropy {entropy}"))?;

    let vocab: Vec<String> = (0..400).map(|_| random_word(&mut rng, 6)).collect();
    let n = 2000;
    let texts: Vec<String> = (0..n)
        .map(|_| {
            let len = rng.gen_range(6..12);
            (0..len).map(|_| vocab.choose(&mut rng).unwrap().as_str()).collect::<Vec<_>>().join(" ")
        })
        .collect();
    let coins: Vec<String> = (0..n).map(|_| if rng.gen_bool(0.5) { "heads" } else { "tails" }.to_string()).collect();
    let ids: Vec<String> = (0..n).map(|i| format!("x{i}")).collect();
    let coin = pvi_examples(&ids, &texts, &coins, None, &config).map_err(|e| e.to_string())?.mean_pvi_bits;
    ensure((-0.05..=0.05).contains(&coin), || format!("coin-flip mean PVI {coin}"))?;

    let n = 500;
    let labels: Vec<String> = (0..n).map(|i| if i % 2 == 0 { "pos" } else { "neg" }.to_string()).collect();
    let texts: Vec<String> = labels
        .iter()
        .map(|l| {
            let marker = if l == "pos" { "sunny" } else { "rainy" };
            format!("{marker} {} {}", random_word(&mut rng, 5), random_word(&mut rng, 5))
        })
        .collect();
    let ids: Vec<String> = (0..n).map(|i| format!("s{i}")).collect();
    let separable = pvi_examples(&ids, &texts, &labels, None, &config).map_err(|e| e.to_string())?.mean_pvi_bits;
    ensure(separable >= 0.9, || format!("separable mean PVI {separable}"))?;

    let (classes, dimension, h, l2) = (3, 16, 1e-5, 1e-2);
    let xs: Vec<Embedding> = (0..24).map(|i| featurize(&format!("{} {}", random_word(&mut rng, 3), i % 5), dimension)).collect();
    let ys: Vec<usize> = (0..24).map(|i| i % classes).collect();
    let mut worst: f64 = 0.0;
    for _ in 0..5 {
        let mut model = LogisticModel::zeros(classes, dimension);
        let theta: Vec<f64> = (0..classes * (dimension + 1)).map(|_| rng.gen_range(-2.0..2.0)).collect();
        model.set_parameters(&theta);
        let (_, analytic) = model.loss_and_gradient(&xs, &ys, l2);
        for k in 0..theta.len() {
            let mut probe = theta.clone();
            probe[k] += h;
            model.set_parameters(&probe);
            let up = model.loss_and_gradient(&xs, &ys, l2).0;
            probe[k] = theta[k] - h;
            model.set_parameters(&probe);
            let down = model.loss_and_gradient(&xs, &ys, l2).0;
            let numeric = (up - down) / (2.0 * h);
            let relative = (analytic[k] - numeric).abs() / analytic[k].abs().max(numeric.abs()).max(1e-3);
            worst = worst.max(relative);
        }
    }
    ensure(worst < 1e-4, || format!("gradient relative error {worst:e}"))?;
    let elapsed = started.elapsed().as_secs_f64();
    ensure(elapsed < 60.0, || format!("suite took {elapsed:.1}s"))?;
    Ok(format!(
        "H0 {entropy:.4} bits, coin {coin:+.4}, separable {separable:.3}, grad err {worst:.1e}, {elapsed:.1}s"
    ))
}

fn bias_and_leakage() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let planted = [("France", 23), ("Germany", 17), ("New Zealand", 11), ("Brazil", 7), ("Japan", 3)];
    let mut mentions: Vec<&str> = planted.iter().flat_map(|(g, n)| std::iter::repeat_n(*g, *n)).collect();
    mentions.shuffle(&mut rng);
    let mut sentences: Vec<String> = mentions
        .chunks(2)
        .map(|pair| match pair {
            [a, b] => format!("Ministers from {a} met their counterparts from {b}."),
            [a] => format!("The economy of {a} grew last year."),
            _ => unreachable!(),
        })
        .collect();
    while sentences.len() < 100 {
        sentences.push("The French delegation arrived on Tuesday.".into());
    }
    sentences.shuffle(&mut rng);
    let mut gazetteer = Gazetteer::parse("France\tGPE\nGermany\tGPE\nNew Zealand\tGPE\nBrazil\tGPE\nJapan\tGPE\n", None)
        .map_err(|e| e.to_string())?;
    gazetteer.merge(Gazetteer::parse("French\n", Some(EntityTag::Norp)).map_err(|e| e.to_string())?);
    let ranked = entity_distribution(&sentences, &gazetteer, EntityTag::Gpe);
    let expected: Vec<(String, usize)> = planted.iter().map(|(g, n)| (g.to_lowercase(), *n)).collect();
    ensure(ranked == expected, || format!("{ranked:?}"))?;

    let sentence = |rng: &mut ChaCha8Rng| (0..8).map(|_| random_word(rng, 5)).collect::<Vec<_>>().join(" ");
    let reference: Vec<String> = (0..1000).map(|_| sentence(&mut rng)).collect();
    let mut synthetic: Vec<String> = (0..1000).map(|_| sentence(&mut rng)).collect();
    let disjoint = leakage_check(&synthetic, &reference).len();
    ensure(disjoint == 0, || format!("{disjoint} pairs in disjoint corpora"))?;
    let plants = [(3, 990), (100, 5), (250, 250), (499, 17), (612, 613), (777, 1), (998, 400)];
    for (k, &(s, r)) in plants.iter().enumerate() {
        synthetic[s] = if k % 2 == 0 { reference[r].to_uppercase() } else { format!("{}.", reference[r]) };
    }
    let found: Vec<(usize, usize)> = leakage_check(&synthetic, &reference).into_iter().map(|p| (p.synthetic, p.reference)).collect();
    ensure(found == plants, || format!("{found:?}"))?;
    Ok(format!("{} GPE mentions exact in 100 sentences; 7/7 planted duplicates, 0 in disjoint", mentions.len()))
}

fn robustness() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = dir.path();
    std::fs::write(d.join("mock.json"), rte_script(3, 3)).map_err(|e| e.to_string())?;
    let code = |args: &[&str]| targen(d, args).status.code().unwrap_or(-1);
    let base = ["--task", "rte", "--seeds-per-context", "3", "--backend", "mock:mock.json"];

    let unfulfilled = code(&[&["generate"][..], &base, &["--total", "20", "--contexts", "3", "--per-seed-capacity", "1", "--out", "p.jsonl"]].concat());
    ensure(unfulfilled == 4, || format!("plan unfulfilled exited {unfulfilled}"))?;
    ensure(d.join("p.jsonl").exists(), || "no partial dataset".into())?;

    let exhausted = code(&[&["generate"][..], &base, &["--total", "20", "--contexts", "5", "--out", "q.jsonl"]].concat());
    ensure(exhausted == 4, || format!("budget exhausted exited {exhausted}"))?;

    let ok = code(&[&["generate"][..], &base, &["--total", "6", "--contexts", "3", "--record", "t.jsonl", "--out", "a.jsonl"]].concat());
    ensure(ok == 0, || format!("baseline run exited {ok}"))?;
    let miss = code(&["replay", "--transcript", "t.jsonl", "--task", "rte", "--total", "8", "--contexts", "3", "--seeds-per-context", "3", "--out", "r.jsonl"]);
    ensure(miss == 3, || format!("replay miss exited {miss}"))?;

    let text = std::fs::read_to_string(d.join("a.jsonl")).map_err(|e| e.to_string())?;
    let tampered: Vec<String> = text
        .lines()
        .enumerate()
        .map(|(i, l)| if i == 2 { l.replacen("\"original_label\":\"", "\"original_label\":\"x", 1) } else { l.to_string() })
        .collect();
    ensure(tampered[2] != text.lines().nth(2).unwrap_or_default(), || "tamper did not apply".into())?;
    std::fs::write(d.join("bad.jsonl"), tampered.join("\n") + "\n").map_err(|e| e.to_string())?;
    let violation = code(&["stats", "--in", "bad.jsonl"]);
    ensure(violation == 2, || format!("schema violation exited {violation}"))?;
    Ok("plan-unfulfilled 4, budget-exhausted 4, replay-miss 3, schema-violation 2".into())
}

fn run(check: fn() -> Check) -> Outcome {
    match catch_unwind(AssertUnwindSafe(check)) {
        Ok(Ok(detail)) => Outcome::Pass(detail),
        Ok(Err(message)) => Outcome::Fail(message),
        Err(_) => Outcome::Fail("panicked".into()),
    }
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("replay-determinism", || run(replay_determinism)),
        ("label-plans", || run(label_plans)),
        ("worked-fixtures", || run(worked_fixtures)),
        ("self-correction-conservation", || run(self_correction_conservation)),
        ("lexical-anchor-wsc", lexical_anchor),
        ("semantic-oracle", || run(semantic_oracle)),
        ("pvi-suite", || run(pvi_suite)),
        ("bias-leakage-oracles", || run(bias_and_leakage)),
        ("robustness-exit-codes", || run(robustness)),
    ];
    let (mut passed, mut failed, mut blocked) = (0, 0, 0);
    for (name, check) in criteria {
        match check() {
            Outcome::Pass(detail) => {
                passed += 1;
                println!("PASS {name}: {detail}");
            }
            Outcome::Fail(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
            Outcome::Blocked(detail) => {
                blocked += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    println!("acceptance: {passed} passed, {} failed ({blocked} blocked on missing external data)", failed + blocked);
    if failed > 0 {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
