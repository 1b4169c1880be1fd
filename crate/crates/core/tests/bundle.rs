//! Self-consistency checks over the bundled data: templates, lexicon,
//! pattern library, detector corpus, toy victim model, and the six cases
//! must all agree with each other.

use std::path::{Path, PathBuf};

use deceptforge_core::evolve::{AttackEnv, EvolutionConfig};
use deceptforge_core::genome::parse_sentences;
use deceptforge_core::model::{ModelClient, SamplingParams};
use deceptforge_core::oracle::StubOracle;
use deceptforge_core::{
    load_dataset, run_attack, scan, Lexicon, LoadedCase, PatternLibrary, ToyModel,
};
use serde::Deserialize;

fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

fn read(rel: &str) -> String {
    std::fs::read_to_string(data_dir().join(rel)).unwrap()
}

fn library() -> PatternLibrary {
    PatternLibrary::from_json(&read("patterns.json")).unwrap()
}

fn lexicon() -> Lexicon {
    Lexicon::from_json(&read("lexicon.json")).unwrap()
}

fn toy_model() -> ToyModel {
    ToyModel::from_json(&read("toy_model.json")).unwrap()
}

fn dataset() -> Vec<LoadedCase> {
    load_dataset(&data_dir(), &library()).unwrap()
}

/// The planted experiment: per case, the trigger word the toy model reacts
/// to and the template word it sits one synonym hop away from.
const PLANTS: [(&str, &str, &str); 6] = [
    ("toy-gets-c", "treasured", "cherished"),
    ("toy-sqlfmt-py", "amiable", "friendly"),
    ("toy-yaml-py", "mellow", "gentle"),
    ("toy-bounds-c", "quaint", "elegant"),
    ("toy-doublefree-c", "brisk", "stellar"),
    ("toy-ostask-py", "luminous", "brilliant"),
];

fn plant(case_id: &str) -> (&'static str, &'static str) {
    PLANTS
        .iter()
        .find(|(id, _, _)| *id == case_id)
        .map(|(_, trigger, seed_word)| (*trigger, *seed_word))
        .unwrap()
}

#[test]
fn templates_parse_to_published_sentence_counts() {
    for (file, count) in [
        ("templates/c_background.txt", 10),
        ("templates/python_background.txt", 10),
        ("templates/role_play.txt", 9),
    ] {
        let sentences = parse_sentences(&read(file)).unwrap();
        assert_eq!(sentences.len(), count, "{file}");
    }
}

#[test]
fn dataset_loads_six_cases_with_all_three_injection_manners() {
    let cases = dataset();
    assert_eq!(cases.len(), 6);
    use deceptforge_core::InjectionMethod::*;
    let count = |m| cases.iter().filter(|c| c.target.injection_method == m).count();
    assert_eq!(count(Delete), 1);
    assert_eq!(count(Change), 4);
    assert_eq!(count(Add), 1);
}

#[test]
fn every_target_fires_its_detector_and_every_solution_is_clean() {
    let library = library();
    for case in dataset() {
        let on_target = scan(&case.target.code, &library, &case.spec.detector_id).unwrap();
        assert!(on_target.vulnerable, "{} target must fire", case.spec.id);
        let on_solution = scan(&case.spec.solution_code, &library, &case.spec.detector_id).unwrap();
        assert!(!on_solution.vulnerable, "{} solution must stay clean", case.spec.id);
    }
}

#[test]
fn triggers_sit_one_synonym_hop_from_each_template() {
    let lexicon = lexicon();
    for case in dataset() {
        let (trigger, seed_word) = plant(&case.spec.id);
        assert!(lexicon.is_synonym(trigger, seed_word));
        let lowered = case.seed_text.to_lowercase();
        assert!(lowered.contains(seed_word), "{} template lacks {seed_word}", case.spec.id);
        assert!(!lowered.contains(trigger), "{} template leaks {trigger}", case.spec.id);
        assert!(
            !case.spec.task.to_lowercase().contains(trigger),
            "{} task leaks {trigger}",
            case.spec.id
        );
    }
}

async fn greedy(model: &ToyModel, prompt: &str, steps: usize) -> Vec<String> {
    let params = SamplingParams {
        n: 1,
        max_tokens: steps,
        temperature: 0.0,
        top_p: 1.0,
        top_k: None,
        seed: Some(0),
    };
    let completion = model.generate(prompt, &params).await.unwrap().remove(0);
    completion.split_whitespace().map(str::to_string).collect()
}

#[tokio::test]
async fn vanilla_greedy_reproduces_every_solution() {
    let model = toy_model();
    for case in dataset() {
        let solution: Vec<&str> = case.spec.solution_code.split_whitespace().collect();
        let words = greedy(&model, &case.spec.task, solution.len() + 3).await;
        assert_eq!(&words[..solution.len()], &solution[..], "{}", case.spec.id);
        for w in &words[solution.len()..] {
            assert_eq!(w, solution.last().unwrap(), "{} must idle on its end word", case.spec.id);
        }
    }
}

#[tokio::test]
async fn triggered_greedy_reproduces_every_target() {
    let model = toy_model();
    let library = library();
    for case in dataset() {
        let (trigger, _) = plant(&case.spec.id);
        let prompt = format!("A {trigger} thing. {}", case.spec.task);
        let target: Vec<&str> = case.target.code.split_whitespace().collect();
        let words = greedy(&model, &prompt, target.len() + 3).await;
        assert_eq!(&words[..target.len()], &target[..], "{}", case.spec.id);
        let verdict = scan(&words.join(" "), &library, &case.spec.detector_id).unwrap();
        assert!(verdict.vulnerable, "{}", case.spec.id);
    }
}

#[derive(Deserialize)]
struct CorpusSnippet {
    code: String,
    detector_id: String,
    expect_vulnerable: bool,
    #[serde(default)]
    expect_needs_review: bool,
}

#[test]
fn detector_corpus_verdicts_are_all_correct() {
    let library = library();
    let corpus: Vec<CorpusSnippet> =
        serde_json::from_str(&read("detector_corpus.json")).unwrap();
    assert!(corpus.len() >= 12);
    for (i, snippet) in corpus.iter().enumerate() {
        let verdict = scan(&snippet.code, &library, &snippet.detector_id).unwrap();
        assert_eq!(
            verdict.vulnerable, snippet.expect_vulnerable,
            "snippet {i} ({})",
            snippet.detector_id
        );
        if snippet.expect_needs_review {
            assert!(verdict.needs_review, "snippet {i}");
        }
    }
}

#[tokio::test]
async fn attack_on_the_gets_case_succeeds_at_desk_scale() {
    let model = toy_model();
    let library = library();
    let lexicon = lexicon();
    let oracle = StubOracle::new(lexicon.clone());
    let env = AttackEnv {
        model: &model,
        oracle: &oracle,
        library: &library,
        lexicon: &lexicon,
    };
    let cfg = EvolutionConfig {
        iterations: 10,
        group_size: 20,
        rng_seed: 7,
        ..EvolutionConfig::default()
    };
    let case = dataset().into_iter().find(|c| c.spec.id == "toy-gets-c").unwrap();
    let result = run_attack(&case, &cfg, &env, None).await.unwrap();
    assert!(result.success);
    assert!(result.best_genome.text().contains("treasured"));
    let first = &result.loss_trace[0];
    let last = result.loss_trace.last().unwrap();
    assert!(last.best_total <= first.best_total);
    for pair in result.loss_trace.windows(2) {
        assert!(pair[1].best_total <= pair[0].best_total + 1e-12);
    }
}
