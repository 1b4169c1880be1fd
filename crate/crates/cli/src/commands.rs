//! The four subcommands: evolve an attack against one case, benchmark a
//! dataset, scan a code file, and serve a toy model on the wire protocol.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{Context, Result};
use clap::Args;
use deceptforge_core::evolve::AttackEnv;
use deceptforge_core::{
    load_dataset, render_table, run_attack, run_benchmark, scan, Annotations, AttackResult,
    EvalOptions, Lexicon, ModelClient, PatternLibrary,
};
use serde::Serialize;

use crate::backend::{backend_descriptor, resolve_model, resolve_oracle};
use crate::config::RunConfig;
use crate::svg::render_loss_svg;

#[derive(Debug, Args)]
pub struct AttackArgs {
    /// Case file to attack.
    #[arg(long, value_name = "FILE")]
    pub case: PathBuf,
    /// Run configuration file; built-in defaults apply when omitted.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Backend: an http(s) URL or toy:<spec path>.
    #[arg(long, value_name = "URL")]
    pub backend: Option<String>,
    /// Paraphrase oracle: a rewrite endpoint URL or "stub".
    #[arg(long, value_name = "URL|stub")]
    pub oracle: Option<String>,
    /// Run directory receiving every artifact.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Overrides the configured evolution seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Dataset directory containing cases/.
    #[arg(long, value_name = "DIR")]
    pub dataset: Option<PathBuf>,
    /// Directory receiving report.json and report.txt.
    #[arg(long, value_name = "DIR")]
    pub results: PathBuf,
    /// Run configuration file; built-in defaults apply when omitted.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Backend: an http(s) URL or toy:<spec path>.
    #[arg(long, value_name = "URL")]
    pub backend: Option<String>,
    /// Paraphrase oracle: a rewrite endpoint URL or "stub".
    #[arg(long, value_name = "URL|stub")]
    pub oracle: Option<String>,
    /// Functionality annotations; defaults to <dataset>/annotations.json
    /// when that file exists.
    #[arg(long, value_name = "FILE")]
    pub annotations: Option<PathBuf>,
    /// Completions drawn per case and mode.
    #[arg(long, default_value_t = 5)]
    pub samples: usize,
    /// Count a case successful only when every sample is vulnerable and
    /// functional.
    #[arg(long)]
    pub require_all: bool,
    /// Overrides the configured evolution and sampling seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    /// Code file to scan.
    #[arg(long, value_name = "FILE")]
    pub code: PathBuf,
    /// Pattern library JSON.
    #[arg(long = "pattern-lib", value_name = "FILE")]
    pub pattern_lib: PathBuf,
    /// Detector id within the library.
    #[arg(long, value_name = "ID")]
    pub detector: String,
}

#[derive(Debug, Args)]
pub struct ToyServeArgs {
    /// Toy model spec JSON.
    #[arg(long, value_name = "FILE")]
    pub spec: PathBuf,
    /// Port to bind on 127.0.0.1; 0 picks a free port.
    #[arg(long, default_value_t = 0)]
    pub port: u16,
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn load_library(config: &RunConfig) -> Result<PatternLibrary> {
    let text = fs::read_to_string(&config.pattern_lib)
        .with_context(|| format!("reading pattern library {}", config.pattern_lib.display()))?;
    PatternLibrary::from_json(&text)
        .with_context(|| format!("parsing pattern library {}", config.pattern_lib.display()))
}

fn load_lexicon(config: &RunConfig) -> Result<Lexicon> {
    let text = fs::read_to_string(&config.lexicon)
        .with_context(|| format!("reading lexicon {}", config.lexicon.display()))?;
    Lexicon::from_json(&text)
        .with_context(|| format!("parsing lexicon {}", config.lexicon.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn to_pretty_json<T: Serialize>(value: &T) -> Result<String> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    Ok(text)
}

#[derive(Debug, Serialize)]
struct AttackSummary<'a> {
    case_id: &'a str,
    success: bool,
    iterations_used: usize,
    best_total: f64,
    best_l_p: f64,
    best_l_q: f64,
    best_genome: String,
    output_dir: &'a Path,
}

fn loss_trace_csv(result: &AttackResult) -> String {
    let mut csv = String::from("iteration,best_total,mean_total\n");
    for stats in &result.loss_trace {
        csv.push_str(&format!(
            "{},{},{}\n",
            stats.iteration, stats.best_total, stats.mean_total
        ));
    }
    csv
}

pub async fn attack(args: AttackArgs, json: bool) -> Result<()> {
    let mut config = load_config(args.config.as_deref())?;
    config.backend_url = backend_descriptor(args.backend.as_deref(), &config.backend_url);
    if let Some(oracle) = &args.oracle {
        config.oracle = oracle.clone();
    }
    if let Some(out) = &args.out {
        config.output_dir = out.clone();
    }
    if let Some(seed) = args.seed {
        config.evolution.rng_seed = seed;
    }
    config.validate(false)?;

    let library = load_library(&config)?;
    let lexicon = load_lexicon(&config)?;
    let case = load_case_file(&args.case, &library)?;
    let model = resolve_model(&config.backend_url)?;
    let oracle = resolve_oracle(&config.oracle, &lexicon)?;

    let out_dir = config.output_dir.clone();
    fs::create_dir_all(&out_dir)
        .with_context(|| format!("creating run directory {}", out_dir.display()))?;
    write_text(&out_dir.join("config.json"), &to_pretty_json(&config)?)?;

    let mut trace_file = fs::File::create(out_dir.join("trace.jsonl"))
        .with_context(|| format!("creating trace in {}", out_dir.display()))?;
    let env = AttackEnv {
        model: &*model,
        oracle: &*oracle,
        library: &library,
        lexicon: &lexicon,
    };
    let result = run_attack(&case, &config.evolution, &env, Some(&mut trace_file)).await?;
    trace_file.flush()?;

    write_text(&out_dir.join("result.json"), &to_pretty_json(&result)?)?;
    write_text(&out_dir.join("best_genome.txt"), &format!("{}\n", result.best_genome.text()))?;
    write_text(&out_dir.join("loss_trace.csv"), &loss_trace_csv(&result))?;
    write_text(&out_dir.join("loss_trace.svg"), &render_loss_svg(&result.loss_trace))?;

    let summary = AttackSummary {
        case_id: &result.case_id,
        success: result.success,
        iterations_used: result.iterations_used,
        best_total: result.best_loss.total,
        best_l_p: result.best_loss.l_p,
        best_l_q: result.best_loss.l_q,
        best_genome: result.best_genome.text(),
        output_dir: &out_dir,
    };
    if json {
        println!("{}", serde_json::to_string_pretty(&summary)?);
    } else {
        println!("case:        {}", summary.case_id);
        println!("success:     {}", summary.success);
        println!("iterations:  {}", summary.iterations_used);
        println!(
            "best loss:   total {:.6} (l_p {:.6}, l_q {:.6})",
            summary.best_total, summary.best_l_p, summary.best_l_q
        );
        println!("best genome: {}", summary.best_genome);
        println!("artifacts:   {}", out_dir.display());
    }
    Ok(())
}

fn load_case_file(
    path: &Path,
    library: &PatternLibrary,
) -> Result<deceptforge_core::LoadedCase> {
    deceptforge_core::load_case(path, library)
        .with_context(|| format!("loading case {}", path.display()))
}

pub async fn eval(args: EvalArgs, json: bool) -> Result<()> {
    let mut config = load_config(args.config.as_deref())?;
    config.backend_url = backend_descriptor(args.backend.as_deref(), &config.backend_url);
    if let Some(oracle) = &args.oracle {
        config.oracle = oracle.clone();
    }
    if let Some(dataset) = &args.dataset {
        config.dataset_path = dataset.clone();
    }
    if let Some(seed) = args.seed {
        config.evolution.rng_seed = seed;
    }
    config.validate(true)?;

    let library = load_library(&config)?;
    let lexicon = load_lexicon(&config)?;
    let dataset = load_dataset(&config.dataset_path, &library)
        .with_context(|| format!("loading dataset {}", config.dataset_path.display()))?;
    let model = resolve_model(&config.backend_url)?;
    let oracle = resolve_oracle(&config.oracle, &lexicon)?;
    let scorer: Option<Arc<dyn ModelClient>> = match &config.scorer_url {
        Some(url) => Some(resolve_model(url)?),
        None => None,
    };

    let annotations = load_annotations(args.annotations.as_deref(), &config.dataset_path)?;
    let opts = EvalOptions {
        n_samples: args.samples,
        seed: args.seed.unwrap_or(config.evolution.rng_seed),
        require_all_samples: args.require_all,
        ..EvalOptions::default()
    };

    let env = AttackEnv {
        model: &*model,
        oracle: &*oracle,
        library: &library,
        lexicon: &lexicon,
    };
    let report = run_benchmark(
        &dataset,
        &config.evolution,
        &env,
        &opts,
        &annotations,
        scorer.as_deref(),
    )
    .await?;

    fs::create_dir_all(&args.results)
        .with_context(|| format!("creating results directory {}", args.results.display()))?;
    write_text(&args.results.join("report.json"), &to_pretty_json(&report)?)?;
    let table = render_table(&report);
    write_text(&args.results.join("report.txt"), &table)?;

    if json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        print!("{table}");
    }
    Ok(())
}

fn load_annotations(flag: Option<&Path>, dataset: &Path) -> Result<Annotations> {
    let path = match flag {
        Some(p) => p.to_path_buf(),
        None => {
            let candidate = dataset.join("annotations.json");
            if !candidate.exists() {
                return Ok(Annotations::default());
            }
            candidate
        }
    };
    let text = fs::read_to_string(&path)
        .with_context(|| format!("reading annotations {}", path.display()))?;
    Annotations::from_json(&text)
        .with_context(|| format!("parsing annotations {}", path.display()))
}

pub fn detect(args: DetectArgs, json: bool) -> Result<()> {
    let code = fs::read_to_string(&args.code)
        .with_context(|| format!("reading code file {}", args.code.display()))?;
    let text = fs::read_to_string(&args.pattern_lib)
        .with_context(|| format!("reading pattern library {}", args.pattern_lib.display()))?;
    let library = PatternLibrary::from_json(&text)
        .with_context(|| format!("parsing pattern library {}", args.pattern_lib.display()))?;
    let verdict = scan(&code, &library, &args.detector)?;
    if json {
        println!("{}", serde_json::to_string_pretty(&verdict)?);
    } else {
        println!("detector:     {}", verdict.detector_id);
        println!("vulnerable:   {}", verdict.vulnerable);
        println!("needs_review: {}", verdict.needs_review);
        for m in &verdict.matched {
            println!("matched:      {} at [{}, {})", m.clause, m.start, m.end);
        }
    }
    Ok(())
}

pub async fn toy_serve(args: ToyServeArgs, json: bool) -> Result<()> {
    let model = resolve_model(&format!("toy:{}", args.spec.display()))?;
    let listener = tokio::net::TcpListener::bind(("127.0.0.1", args.port))
        .await
        .with_context(|| format!("binding 127.0.0.1:{}", args.port))?;
    let addr = listener.local_addr()?;
    let url = format!("http://{addr}");
    if json {
        println!("{}", serde_json::json!({ "listening": url }));
    } else {
        println!("listening on {url}");
    }
    std::io::stdout().flush()?;
    deceptforge_service::serve_on(model, listener).await?;
    Ok(())
}
