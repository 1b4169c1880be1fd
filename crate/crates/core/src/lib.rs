//! Core library for evolving benign-looking natural-language prefixes and
//! suffixes that steer a code-generation model toward emitting a planted
//! vulnerability while the surrounding code stays functionally correct.
//!
//! The pieces compose in layers: [`genome`] holds the sentence-list
//! representation of an adversarial prompt, [`target`] constructs vulnerable
//! target code from a clean solution plus labeled edits, [`model`] defines
//! the scoring and generation client interface with [`toy`] as a
//! deterministic in-process backend, [`oracle`] supplies paraphrasing,
//! [`fitness`] turns teacher-forced token scores into the split
//! functionality/vulnerability loss, [`evolve`] runs the genetic search,
//! [`detect`] checks generated code for the planted pattern, and [`eval`]
//! aggregates attack success metrics over a dataset loaded by [`case`].

pub mod case;
pub mod detect;
pub mod eval;
pub mod evolve;
pub mod fitness;
pub mod genome;
pub mod model;
pub mod oracle;
pub mod target;
pub mod toy;

pub use case::{load_case, load_dataset, CaseError, CaseSpec, LoadedCase};
pub use detect::{scan, DetectError, DetectionVerdict, PatternLibrary, VulnPattern};
pub use eval::{
    compute_asr, compute_wfr, evaluate_case, perplexity, render_table, run_benchmark,
    Annotations, CaseOutcome, CaseRecord, EvalError, EvalOptions, EvalReport,
};
pub use evolve::{
    run_attack, selection_probabilities, AttackEnv, AttackResult, EvolutionConfig,
    EvolveError, IterationStats, WordScoreTable,
};
pub use fitness::{
    evaluate_genome, EvalCache, FitnessError, LossBreakdown, LossMode, LossWeights,
};
pub use genome::{parse_sentences, render, Attachment, GenomeError, PromptGenome};
pub use model::{
    ModelClient, ModelError, SamplingParams, ScoredContinuation, ScoredToken,
};
pub use oracle::{paraphrase, seed_group, Lexicon, Oracle, OracleError, StubOracle};
pub use target::{
    apply_edits, label_tokens, EditAction, EditOp, InjectionMethod, Segment, SegmentKind,
    TargetCode, TargetError,
};
pub use toy::{ToyModel, ToyModelSpec, ToySpecError};
