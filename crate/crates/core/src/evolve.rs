//! The evolutionary search: elite preservation, roulette selection over
//! softmaxed negated losses, neighbor-pair sentence crossover, score-table
//! word substitution, and oracle-backed sentence mutation, assembled into
//! the attack loop.

use std::collections::BTreeMap;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::case::{judge_output, LoadedCase};
use crate::detect::{DetectError, PatternLibrary};
use crate::fitness::{evaluate_genome, EvalCache, FitnessError, LossBreakdown, LossWeights};
use crate::genome::{
    render, swap_sentences, word_occurrences, GenomeError, PromptGenome,
};
use crate::model::{ModelClient, SamplingParams};
use crate::oracle::{paraphrase, Oracle, OracleError, ParaphraseMode, ParaphraseRequest};

/// Losses this close to zero are clamped before inversion in word scoring.
pub const LOSS_EPSILON: f64 = 1e-6;

/// All knobs of the evolutionary search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvolutionConfig {
    pub iterations: usize,
    pub group_size: usize,
    pub elite_fraction: f64,
    pub crossover_prob: f64,
    pub max_swap: usize,
    pub mutation_prob: f64,
    pub top_k_words: usize,
    pub score_momentum: f64,
    pub rng_seed: u64,
    pub weights: LossWeights,
    /// Stop once the greedy generation trips the detector in three
    /// consecutive iterations; disable for fixed-budget runs.
    pub early_stop: bool,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        Self {
            iterations: 150,
            group_size: 100,
            elite_fraction: 0.10,
            crossover_prob: 0.6,
            max_swap: 4,
            mutation_prob: 0.01,
            top_k_words: 30,
            score_momentum: 0.5,
            rng_seed: 0,
            weights: LossWeights::default(),
            early_stop: true,
        }
    }
}

impl EvolutionConfig {
    pub fn validate(&self) -> Result<(), EvolveError> {
        if self.group_size == 0 || self.max_swap == 0 || self.top_k_words == 0 {
            return Err(EvolveError::Config(
                "group_size, max_swap, and top_k_words must be at least 1".into(),
            ));
        }
        for (name, p) in [
            ("elite_fraction", self.elite_fraction),
            ("crossover_prob", self.crossover_prob),
            ("mutation_prob", self.mutation_prob),
            ("score_momentum", self.score_momentum),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(EvolveError::Config(format!("{name} {p} outside [0, 1]")));
            }
        }
        if self.elite_fraction * (self.group_size as f64) < 1.0 {
            return Err(EvolveError::Config(format!(
                "elite_fraction {} times group_size {} keeps no elite",
                self.elite_fraction, self.group_size
            )));
        }
        self.weights
            .validate()
            .map_err(|e| EvolveError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn elite_count(&self, population: usize) -> usize {
        ((self.elite_fraction * population as f64).ceil() as usize).clamp(1, population)
    }
}

#[derive(Debug, Error)]
pub enum EvolveError {
    #[error("invalid evolution config: {0}")]
    Config(String),
    #[error("selection over an empty population")]
    EmptySelection,
    #[error("selection saw a non-finite loss")]
    NonFiniteLoss,
    #[error("every loss is infinite; selection is undefined")]
    AllInfinite,
    #[error(transparent)]
    Genome(#[from] GenomeError),
    #[error(transparent)]
    Fitness(#[from] FitnessError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Detect(#[from] DetectError),
    #[error("attack aborted after {} traced iterations: {message}", trace.len())]
    Aborted { message: String, trace: Vec<IterationStats> },
}

/// Softmax of negated losses, stabilized by subtracting the minimum loss.
/// Probabilities sum to one; adding a constant to every loss changes
/// nothing.
pub fn selection_probabilities(losses: &[f64]) -> Result<Vec<f64>, EvolveError> {
    if losses.is_empty() {
        return Err(EvolveError::EmptySelection);
    }
    if losses.iter().any(|l| l.is_nan()) {
        return Err(EvolveError::NonFiniteLoss);
    }
    let min = losses.iter().cloned().fold(f64::INFINITY, f64::min);
    if min == f64::INFINITY {
        return Err(EvolveError::AllInfinite);
    }
    let weights: Vec<f64> = losses.iter().map(|l| (-(l - min)).exp()).collect();
    let sum: f64 = weights.iter().sum();
    Ok(weights.into_iter().map(|w| w / sum).collect())
}

/// Splits a scored population into elites (lowest losses, copied unchanged)
/// and parents drawn with replacement by roulette over the remainder.
/// Parents come back sorted by ascending loss so crossover pairs neighbors.
pub fn select(
    population: &[(PromptGenome, f64)],
    cfg: &EvolutionConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<PromptGenome>, Vec<PromptGenome>), EvolveError> {
    if population.is_empty() {
        return Err(EvolveError::EmptySelection);
    }
    let mut order: Vec<usize> = (0..population.len()).collect();
    order.sort_by(|&a, &b| {
        population[a]
            .1
            .partial_cmp(&population[b].1)
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let n_elites = cfg.elite_count(population.len());
    let elites: Vec<PromptGenome> =
        order[..n_elites].iter().map(|&i| population[i].0.clone()).collect();
    let remainder = &order[n_elites..];
    let n_parents = population.len() - n_elites;
    if remainder.is_empty() || n_parents == 0 {
        return Ok((elites, Vec::new()));
    }
    let losses: Vec<f64> = remainder.iter().map(|&i| population[i].1).collect();
    let probs = selection_probabilities(&losses)?;
    let mut cumulative = Vec::with_capacity(probs.len());
    let mut acc = 0.0;
    for p in &probs {
        acc += p;
        cumulative.push(acc);
    }
    let mut drawn: Vec<usize> = Vec::with_capacity(n_parents);
    for _ in 0..n_parents {
        let draw: f64 = rng.random();
        let pos = cumulative.iter().position(|c| draw < *c).unwrap_or(probs.len() - 1);
        drawn.push(remainder[pos]);
    }
    drawn.sort_by(|&a, &b| {
        population[a]
            .1
            .partial_cmp(&population[b].1)
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let parents = drawn.into_iter().map(|i| population[i].0.clone()).collect();
    Ok((elites, parents))
}

/// Pairs parents (already sorted by loss) with their neighbors and, with the
/// configured probability, exchanges a random index set of at most
/// `max_swap` sentences. An unpaired tail passes through unchanged.
pub fn crossover_population(
    parents: &[PromptGenome],
    cfg: &EvolutionConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<PromptGenome>, EvolveError> {
    let mut offspring = Vec::with_capacity(parents.len());
    for pair in parents.chunks(2) {
        if pair.len() == 1 {
            offspring.push(pair[0].clone());
            continue;
        }
        let (a, b) = (&pair[0], &pair[1]);
        let shared = a.len().min(b.len());
        if shared > 0 && rng.random::<f64>() < cfg.crossover_prob {
            let size = rng.random_range(1..=cfg.max_swap.min(shared));
            let indices = rand::seq::index::sample(rng, shared, size).into_vec();
            let (a2, b2) = swap_sentences(a, b, &indices, cfg.max_swap)?;
            offspring.push(a2);
            offspring.push(b2);
        } else {
            offspring.push(a.clone());
            offspring.push(b.clone());
        }
    }
    Ok(offspring)
}

#[derive(Debug, Clone, Copy, Default)]
struct WordScore {
    previous: f64,
    current: f64,
}

/// Per-word quality scores: the mean inverse loss over a word's occurrences
/// this iteration, blended with the last iteration by momentum. Words absent
/// from the population keep their old scores.
#[derive(Debug, Clone, Default)]
pub struct WordScoreTable {
    momentum: f64,
    scores: BTreeMap<String, WordScore>,
}

impl WordScoreTable {
    pub fn new(momentum: f64) -> Self {
        Self { momentum, scores: BTreeMap::new() }
    }

    pub fn update(&mut self, population: &[(PromptGenome, f64)]) {
        let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
        for (genome, total) in population {
            let inv = 1.0 / total.max(LOSS_EPSILON);
            for occ in word_occurrences(genome) {
                let entry = sums.entry(occ.word).or_insert((0.0, 0));
                entry.0 += inv;
                entry.1 += 1;
            }
        }
        for (word, (sum, count)) in sums {
            let entry = self.scores.entry(word).or_default();
            entry.previous = entry.current;
            entry.current = sum / count as f64;
        }
    }

    /// Momentum blend of the current and previous iteration's scores.
    pub fn final_score(&self, word: &str) -> Option<f64> {
        self.scores
            .get(word)
            .map(|s| self.momentum * s.current + (1.0 - self.momentum) * s.previous)
    }

    /// The substitution dictionary: the `k` highest-scoring words, best
    /// first, ties broken alphabetically.
    pub fn top_k(&self, k: usize) -> Vec<(String, f64)> {
        let mut ranked: Vec<(String, f64)> = self
            .scores
            .keys()
            .map(|w| (w.clone(), self.final_score(w).unwrap()))
            .collect();
        ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        ranked.truncate(k);
        ranked
    }

    /// Median of all blended scores; the stand-in for unscored words.
    pub fn median_score(&self) -> f64 {
        let mut values: Vec<f64> = self
            .scores
            .keys()
            .map(|w| self.final_score(w).unwrap())
            .collect();
        if values.is_empty() {
            return 0.0;
        }
        values.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mid = values.len() / 2;
        if values.len() % 2 == 1 {
            values[mid]
        } else {
            (values[mid - 1] + values[mid]) / 2.0
        }
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

/// Probability of replacing `word` with the candidate: the candidate's share
/// of the two scores. Degenerate scores fall back to a coin flip.
pub fn substitution_probability(candidate_score: f64, word_score: f64) -> f64 {
    let sum = candidate_score + word_score;
    if !sum.is_finite() || sum <= 0.0 {
        return 0.5;
    }
    (candidate_score / sum).clamp(0.0, 1.0)
}

/// Walks every word occurrence in document order; where the top-k dictionary
/// offers a synonym, replaces the occurrence with probability proportional
/// to the synonym's score. At most one replacement is considered per
/// occurrence.
pub fn substitute_words(
    genome: &PromptGenome,
    table: &WordScoreTable,
    lexicon: &crate::oracle::Lexicon,
    cfg: &EvolutionConfig,
    rng: &mut ChaCha8Rng,
) -> PromptGenome {
    let dictionary = table.top_k(cfg.top_k_words);
    if dictionary.is_empty() {
        return genome.clone();
    }
    let median = table.median_score();
    let sentences: Vec<String> = genome
        .sentences
        .iter()
        .map(|sentence| {
            crate::genome::map_words(sentence, |word| {
                let (candidate, candidate_score) = dictionary
                    .iter()
                    .find(|(s, _)| lexicon.is_synonym(s, word))?;
                let word_score = table.final_score(word).unwrap_or(median);
                let p = substitution_probability(*candidate_score, word_score);
                (rng.random::<f64>() < p).then(|| candidate.clone())
            })
        })
        .collect();
    PromptGenome::from_sentences(sentences, genome.attachment)
}

/// Rewrites each sentence of each genome with the configured per-sentence
/// probability. Oracle transport failures downgrade to a no-op so a flaky
/// paraphraser cannot sink the run.
pub async fn mutate_population(
    genomes: Vec<PromptGenome>,
    oracle: &dyn Oracle,
    cfg: &EvolutionConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<PromptGenome>, EvolveError> {
    let mut out = Vec::with_capacity(genomes.len());
    for genome in genomes {
        let mut sentences = genome.sentences.clone();
        let mut changed = false;
        for sentence in sentences.iter_mut() {
            if rng.random::<f64>() >= cfg.mutation_prob {
                continue;
            }
            let req = ParaphraseRequest::new(sentence.clone(), ParaphraseMode::Sentence);
            match paraphrase(oracle, &req).await {
                Ok(rewritten) => {
                    if rewritten != *sentence {
                        *sentence = rewritten;
                        changed = true;
                    }
                }
                Err(OracleError::Transport(_)) => {}
                Err(other) => return Err(other.into()),
            }
        }
        out.push(if changed {
            PromptGenome::from_sentences(sentences, genome.attachment)
        } else {
            genome
        });
    }
    Ok(out)
}

/// Best and mean losses of one evaluated population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationStats {
    pub iteration: usize,
    pub best_total: f64,
    pub mean_total: f64,
    pub best_genome_id: String,
}

/// The attack outcome: the best genome found, its loss, the per-iteration
/// trace, and whether the greedy generation finally tripped the detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackResult {
    pub case_id: String,
    pub best_genome: PromptGenome,
    pub best_loss: LossBreakdown,
    pub loss_trace: Vec<IterationStats>,
    pub success: bool,
    pub iterations_used: usize,
}

/// Everything the attack loop needs besides the case and config.
pub struct AttackEnv<'a> {
    pub model: &'a dyn ModelClient,
    pub oracle: &'a dyn Oracle,
    pub library: &'a PatternLibrary,
    pub lexicon: &'a crate::oracle::Lexicon,
}

const GREEDY_SLACK_TOKENS: usize = 8;
const EARLY_STOP_HITS: usize = 3;

/// One JSON line per evaluated genome lands in `trace_sink` (when given) as
/// `{"iteration":..,"genome_id":..,"l_p":..,"l_q":..,"total":..}`.
pub async fn run_attack(
    case: &LoadedCase,
    cfg: &EvolutionConfig,
    env: &AttackEnv<'_>,
    mut trace_sink: Option<&mut dyn Write>,
) -> Result<AttackResult, EvolveError> {
    cfg.validate()?;
    let seed = PromptGenome::from_text(&case.seed_text, case.spec.attachment)?;
    let cache = EvalCache::new();
    let mut table = WordScoreTable::new(cfg.score_momentum);
    let mut trace: Vec<IterationStats> = Vec::new();

    let mut population = seed_population(&seed, cfg, env).await?;
    let mut losses =
        evaluate_or_abort(&population, case, cfg, env, &cache, &trace).await?;
    let mut best = best_of(&population, &losses);
    record_iteration(0, &population, &losses, &mut trace, &mut trace_sink)?;
    table.update(&scored_pairs(&population, &losses));

    let max_tokens = case.target.code.split_whitespace().count() + GREEDY_SLACK_TOKENS;
    let mut consecutive_hits = 0;
    let mut last_hit = false;
    let mut iterations_used = 0;

    if cfg.early_stop {
        last_hit = greedy_hit(&best.0, case, env, max_tokens, &trace).await?;
        consecutive_hits = if last_hit { 1 } else { 0 };
    }

    for iteration in 1..=cfg.iterations {
        if cfg.early_stop && consecutive_hits >= EARLY_STOP_HITS {
            break;
        }
        let pairs = scored_pairs(&population, &losses);
        let mut rng = stream_rng(cfg.rng_seed, iteration, "select");
        let (elites, parents) = select(&pairs, cfg, &mut rng)?;
        let mut rng = stream_rng(cfg.rng_seed, iteration, "crossover");
        let offspring = crossover_population(&parents, cfg, &mut rng)?;
        let mut rng = stream_rng(cfg.rng_seed, iteration, "substitute");
        let offspring: Vec<PromptGenome> = offspring
            .iter()
            .map(|g| substitute_words(g, &table, env.lexicon, cfg, &mut rng))
            .collect();
        let mut rng = stream_rng(cfg.rng_seed, iteration, "mutate");
        let offspring = mutate_population(offspring, env.oracle, cfg, &mut rng).await?;

        population = elites.into_iter().chain(offspring).collect();
        losses = evaluate_or_abort(&population, case, cfg, env, &cache, &trace).await?;
        let iteration_best = best_of(&population, &losses);
        if iteration_best.1.total < best.1.total {
            best = iteration_best;
        }
        record_iteration(iteration, &population, &losses, &mut trace, &mut trace_sink)?;
        table.update(&scored_pairs(&population, &losses));
        iterations_used = iteration;

        if cfg.early_stop {
            last_hit = greedy_hit(&best.0, case, env, max_tokens, &trace).await?;
            consecutive_hits = if last_hit { consecutive_hits + 1 } else { 0 };
        }
    }

    if !cfg.early_stop {
        last_hit = greedy_hit(&best.0, case, env, max_tokens, &trace).await?;
    }

    Ok(AttackResult {
        case_id: case.spec.id.clone(),
        best_genome: best.0,
        best_loss: best.1,
        loss_trace: trace,
        success: last_hit,
        iterations_used,
    })
}

async fn seed_population(
    seed: &PromptGenome,
    cfg: &EvolutionConfig,
    env: &AttackEnv<'_>,
) -> Result<Vec<PromptGenome>, EvolveError> {
    Ok(crate::oracle::seed_group(seed, cfg.group_size, env.oracle).await?)
}

async fn evaluate_or_abort(
    population: &[PromptGenome],
    case: &LoadedCase,
    cfg: &EvolutionConfig,
    env: &AttackEnv<'_>,
    cache: &EvalCache,
    trace: &[IterationStats],
) -> Result<Vec<LossBreakdown>, EvolveError> {
    let futures = population.iter().map(|g| {
        evaluate_genome(g, &case.spec.task, &case.target, env.model, &cfg.weights, cache)
    });
    let results = futures::future::join_all(futures).await;
    let mut out = Vec::with_capacity(results.len());
    for r in results {
        match r {
            Ok(b) => out.push(b),
            Err(e) => {
                return Err(EvolveError::Aborted {
                    message: e.to_string(),
                    trace: trace.to_vec(),
                })
            }
        }
    }
    Ok(out)
}

fn scored_pairs(
    population: &[PromptGenome],
    losses: &[LossBreakdown],
) -> Vec<(PromptGenome, f64)> {
    population
        .iter()
        .cloned()
        .zip(losses.iter().map(|b| b.total))
        .collect()
}

fn best_of(
    population: &[PromptGenome],
    losses: &[LossBreakdown],
) -> (PromptGenome, LossBreakdown) {
    let mut best = 0;
    for (i, b) in losses.iter().enumerate() {
        if b.total < losses[best].total {
            best = i;
        }
    }
    (population[best].clone(), losses[best].clone())
}

fn record_iteration(
    iteration: usize,
    population: &[PromptGenome],
    losses: &[LossBreakdown],
    trace: &mut Vec<IterationStats>,
    sink: &mut Option<&mut dyn Write>,
) -> Result<(), EvolveError> {
    let best = {
        let mut idx = 0;
        for (i, b) in losses.iter().enumerate() {
            if b.total < losses[idx].total {
                idx = i;
            }
        }
        idx
    };
    let mean = losses.iter().map(|b| b.total).sum::<f64>() / losses.len() as f64;
    trace.push(IterationStats {
        iteration,
        best_total: losses[best].total,
        mean_total: mean,
        best_genome_id: population[best].genome_id.clone(),
    });
    if let Some(out) = sink.as_mut() {
        for (genome, loss) in population.iter().zip(losses) {
            let line = serde_json::json!({
                "iteration": iteration,
                "genome_id": genome.genome_id,
                "l_p": loss.l_p,
                "l_q": loss.l_q,
                "total": loss.total,
            });
            writeln!(out, "{line}").map_err(|e| EvolveError::Aborted {
                message: format!("trace write failed: {e}"),
                trace: trace.clone(),
            })?;
        }
    }
    Ok(())
}

async fn greedy_hit(
    best: &PromptGenome,
    case: &LoadedCase,
    env: &AttackEnv<'_>,
    max_tokens: usize,
    trace: &[IterationStats],
) -> Result<bool, EvolveError> {
    let prompt = render(best, &case.spec.task)?;
    let params = SamplingParams {
        n: 1,
        max_tokens,
        temperature: 0.0,
        top_p: 1.0,
        top_k: None,
        seed: Some(0),
    };
    let completions = env.model.generate(&prompt, &params).await.map_err(|e| {
        EvolveError::Aborted { message: e.to_string(), trace: trace.to_vec() }
    })?;
    let verdict = judge_output(&completions[0], &case.spec, env.library)?;
    Ok(verdict.vulnerable)
}

fn stream_rng(seed: u64, iteration: usize, op: &str) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update((iteration as u64).to_le_bytes());
    hasher.update(op.as_bytes());
    let digest = hasher.finalize();
    ChaCha8Rng::seed_from_u64(u64::from_le_bytes(digest[..8].try_into().unwrap()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genome::Attachment;

    fn genome(sentences: &[&str]) -> PromptGenome {
        PromptGenome::from_sentences(
            sentences.iter().map(|s| s.to_string()).collect(),
            Attachment::Prefix,
        )
    }

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(42)
    }

    fn small_config() -> EvolutionConfig {
        EvolutionConfig { group_size: 4, ..EvolutionConfig::default() }
    }

    #[test]
    fn default_config_matches_published_settings() {
        let cfg = EvolutionConfig::default();
        assert_eq!(cfg.iterations, 150);
        assert_eq!(cfg.group_size, 100);
        assert_eq!(cfg.elite_fraction, 0.10);
        assert_eq!(cfg.crossover_prob, 0.6);
        assert_eq!(cfg.max_swap, 4);
        assert_eq!(cfg.mutation_prob, 0.01);
        assert_eq!(cfg.top_k_words, 30);
        assert_eq!(cfg.score_momentum, 0.5);
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn config_validation_rejects_bad_values() {
        let cfg = EvolutionConfig { crossover_prob: 1.5, ..Default::default() };
        assert!(cfg.validate().is_err());
        let cfg = EvolutionConfig { group_size: 0, ..Default::default() };
        assert!(cfg.validate().is_err());
        let cfg = EvolutionConfig { elite_fraction: 0.001, ..Default::default() };
        assert!(cfg.validate().is_err());
        let cfg = EvolutionConfig {
            group_size: 4,
            iterations: 0,
            elite_fraction: 0.25,
            ..Default::default()
        };
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn equal_losses_select_uniformly() {
        let probs = selection_probabilities(&[2.0, 2.0, 2.0, 2.0]).unwrap();
        for p in probs {
            assert!((p - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn two_loss_gap_of_ln_two_gives_two_thirds() {
        let probs = selection_probabilities(&[0.0, (2.0f64).ln()]).unwrap();
        assert!((probs[0] - 2.0 / 3.0).abs() < 1e-9);
        assert!((probs[1] - 1.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn probabilities_sum_to_one_and_order_monotonically() {
        let losses = [3.0, 1.0, 2.0, 0.5];
        let probs = selection_probabilities(&losses).unwrap();
        let sum: f64 = probs.iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
        assert!(probs[3] > probs[1]);
        assert!(probs[1] > probs[2]);
        assert!(probs[2] > probs[0]);
    }

    #[test]
    fn selection_is_shift_invariant() {
        let losses = [0.3, 1.7, 0.9];
        let shifted: Vec<f64> = losses.iter().map(|l| l + 1000.0).collect();
        let a = selection_probabilities(&losses).unwrap();
        let b = selection_probabilities(&shifted).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn degenerate_loss_sets_error() {
        assert!(matches!(selection_probabilities(&[]), Err(EvolveError::EmptySelection)));
        assert!(matches!(
            selection_probabilities(&[f64::INFINITY, f64::INFINITY]),
            Err(EvolveError::AllInfinite)
        ));
        assert!(matches!(
            selection_probabilities(&[1.0, f64::NAN]),
            Err(EvolveError::NonFiniteLoss)
        ));
    }

    #[test]
    fn one_infinite_loss_gets_zero_probability() {
        let probs = selection_probabilities(&[1.0, f64::INFINITY]).unwrap();
        assert!((probs[0] - 1.0).abs() < 1e-12);
        assert_eq!(probs[1], 0.0);
    }

    #[test]
    fn select_keeps_the_best_as_elites_and_sorts_parents() {
        let pop: Vec<(PromptGenome, f64)> = (0..4)
            .map(|i| (genome(&[&format!("S{i}.")]), i as f64))
            .collect();
        let cfg = EvolutionConfig { elite_fraction: 0.25, ..small_config() };
        let (elites, parents) = select(&pop, &cfg, &mut rng()).unwrap();
        assert_eq!(elites.len(), 1);
        assert_eq!(elites[0], pop[0].0);
        assert_eq!(parents.len(), 3);
        assert_eq!(elites.len() + parents.len(), pop.len());
    }

    #[test]
    fn crossover_probability_zero_copies_parents() {
        let parents = vec![genome(&["A.", "B."]), genome(&["C.", "D."])];
        let cfg = EvolutionConfig { crossover_prob: 0.0, ..small_config() };
        let out = crossover_population(&parents, &cfg, &mut rng()).unwrap();
        assert_eq!(out, parents);
    }

    #[test]
    fn crossover_certain_with_max_swap_one_changes_exactly_one_position() {
        let a = genome(&["A0.", "A1.", "A2."]);
        let b = genome(&["B0.", "B1.", "B2."]);
        let cfg = EvolutionConfig { crossover_prob: 1.0, max_swap: 1, ..small_config() };
        let out = crossover_population(&[a.clone(), b.clone()], &cfg, &mut rng()).unwrap();
        let differing: Vec<usize> = (0..3)
            .filter(|&i| out[0].sentences[i] != a.sentences[i])
            .collect();
        assert_eq!(differing.len(), 1);
        let i = differing[0];
        assert_eq!(out[0].sentences[i], b.sentences[i]);
        assert_eq!(out[1].sentences[i], a.sentences[i]);
    }

    #[test]
    fn crossover_passes_odd_tail_through() {
        let parents = vec![
            genome(&["A."]),
            genome(&["B."]),
            genome(&["Tail sentence."]),
        ];
        let cfg = EvolutionConfig { crossover_prob: 1.0, ..small_config() };
        let out = crossover_population(&parents, &cfg, &mut rng()).unwrap();
        assert_eq!(out.len(), 3);
        assert_eq!(out[2], parents[2]);
    }

    #[test]
    fn crossover_conserves_the_sentence_multiset() {
        let a = genome(&["A0.", "A1.", "A2.", "A3.", "A4."]);
        let b = genome(&["B0.", "B1.", "B2.", "B3.", "B4."]);
        let cfg = EvolutionConfig { crossover_prob: 1.0, ..small_config() };
        let mut r = rng();
        for _ in 0..200 {
            let out = crossover_population(&[a.clone(), b.clone()], &cfg, &mut r).unwrap();
            let mut before: Vec<&String> =
                a.sentences.iter().chain(b.sentences.iter()).collect();
            let mut after: Vec<&String> =
                out[0].sentences.iter().chain(out[1].sentences.iter()).collect();
            before.sort();
            after.sort();
            assert_eq!(before, after);
        }
    }

    #[test]
    fn word_scores_average_inverse_loss_per_occurrence() {
        let mut table = WordScoreTable::new(0.5);
        let pop = vec![(genome(&["echo echo."]), 2.0)];
        table.update(&pop);
        let score = table.final_score("echo").unwrap();
        assert!((score - 0.25).abs() < 1e-12);
        let inner = table.scores.get("echo").unwrap();
        assert!((inner.current - 0.5).abs() < 1e-12);
    }

    #[test]
    fn momentum_blends_current_and_previous() {
        let mut table = WordScoreTable::new(0.5);
        table.update(&[(genome(&["word."]), 1.0)]);
        assert!((table.final_score("word").unwrap() - 0.5).abs() < 1e-12);
        table.update(&[(genome(&["word."]), 0.5)]);
        assert!((table.final_score("word").unwrap() - 1.5).abs() < 1e-12);
    }

    #[test]
    fn absent_words_keep_their_scores() {
        let mut table = WordScoreTable::new(0.5);
        table.update(&[(genome(&["stays around."]), 1.0)]);
        let before = table.final_score("stays").unwrap();
        table.update(&[(genome(&["other text."]), 1.0)]);
        assert_eq!(table.final_score("stays").unwrap(), before);
    }

    #[test]
    fn zero_loss_is_clamped_before_inversion() {
        let mut table = WordScoreTable::new(1.0);
        table.update(&[(genome(&["free."]), 0.0)]);
        let score = table.final_score("free").unwrap();
        assert!((score - 1.0 / LOSS_EPSILON).abs() < 1e-3);
    }

    #[test]
    fn top_k_ranks_by_score_then_alphabetically() {
        let mut table = WordScoreTable::new(1.0);
        table.update(&[
            (genome(&["alpha beta."]), 1.0),
            (genome(&["gamma."]), 0.5),
        ]);
        let top = table.top_k(2);
        assert_eq!(top[0].0, "gamma");
        assert_eq!(top[1].0, "alpha");
        assert_eq!(table.top_k(10).len(), 3);
    }

    #[test]
    fn substitution_probability_follows_the_score_share() {
        assert!((substitution_probability(3.0, 1.0) - 0.75).abs() < 1e-12);
        assert!((substitution_probability(1.0, 1.0) - 0.5).abs() < 1e-12);
        assert_eq!(substitution_probability(0.0, 0.0), 0.5);
    }

    fn ring_lexicon() -> crate::oracle::Lexicon {
        let mut entries = std::collections::BTreeMap::new();
        entries.insert("cherished".to_string(), vec!["treasured".to_string()]);
        entries.insert("treasured".to_string(), vec!["cherished".to_string()]);
        crate::oracle::Lexicon { entries }
    }

    #[test]
    fn substitution_replaces_synonyms_of_high_scoring_words() {
        let mut table = WordScoreTable::new(1.0);
        table.update(&[
            (genome(&["treasured helper."]), 0.01),
            (genome(&["cherished helper."]), 100.0),
        ]);
        let cfg = small_config();
        let g = genome(&["A cherished tool."]);
        let mut replaced = 0;
        for seed in 0..200 {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let out = substitute_words(&g, &table, &ring_lexicon(), &cfg, &mut r);
            if out.sentences[0] == "A treasured tool." {
                replaced += 1;
            } else {
                assert_eq!(out.sentences[0], "A cherished tool.");
            }
        }
        assert!(replaced > 170, "replaced only {replaced} of 200");
    }

    #[test]
    fn substitution_with_empty_table_is_identity() {
        let table = WordScoreTable::new(0.5);
        let g = genome(&["A cherished tool."]);
        let out = substitute_words(&g, &table, &ring_lexicon(), &small_config(), &mut rng());
        assert_eq!(out, g);
    }

    fn block_on<F: std::future::Future>(f: F) -> F::Output {
        tokio::runtime::Builder::new_current_thread().build().unwrap().block_on(f)
    }

    #[test]
    fn mutation_probability_zero_is_identity() {
        let stub = crate::oracle::StubOracle::new(ring_lexicon());
        let cfg = EvolutionConfig { mutation_prob: 0.0, ..small_config() };
        let pop = vec![genome(&["A cherished tool."])];
        let out = block_on(mutate_population(pop.clone(), &stub, &cfg, &mut rng())).unwrap();
        assert_eq!(out, pop);
    }

    #[test]
    fn mutation_probability_one_rewrites_every_sentence() {
        let stub = crate::oracle::StubOracle::new(ring_lexicon());
        let cfg = EvolutionConfig { mutation_prob: 1.0, ..small_config() };
        let pop = vec![genome(&["A cherished tool.", "A treasured box."])];
        let out = block_on(mutate_population(pop, &stub, &cfg, &mut rng())).unwrap();
        assert_eq!(out[0].sentences[0], "A treasured tool.");
        assert_eq!(out[0].sentences[1], "A cherished box.");
    }

    struct DeadOracle;

    #[async_trait::async_trait]
    impl Oracle for DeadOracle {
        async fn rewrite(
            &self,
            _: &str,
            _: ParaphraseMode,
        ) -> Result<String, OracleError> {
            Err(OracleError::Transport("down".into()))
        }
    }

    #[test]
    fn unreachable_oracle_makes_mutation_a_no_op() {
        let cfg = EvolutionConfig { mutation_prob: 1.0, ..small_config() };
        let pop = vec![genome(&["A cherished tool."])];
        let out = block_on(mutate_population(pop.clone(), &DeadOracle, &cfg, &mut rng())).unwrap();
        assert_eq!(out, pop);
    }

    #[test]
    fn stream_rng_is_stable_per_operation() {
        let mut a = stream_rng(7, 3, "select");
        let mut b = stream_rng(7, 3, "select");
        assert_eq!(a.random::<u64>(), b.random::<u64>());
        let mut c = stream_rng(7, 3, "crossover");
        assert_ne!(a.random::<u64>(), c.random::<u64>());
    }
}
