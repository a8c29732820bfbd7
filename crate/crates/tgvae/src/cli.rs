//! Command-line front end: prepare corpora, train, generate, summarize,
//! evaluate, dump topics, dump latent samples.
//!
//! All randomness is controlled by `--seed`; identical inputs, config, and
//! seed produce byte-identical output files.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::corpus::{self, DocumentRecord, RawDocument, Vocab, VocabSpec};
use crate::eval::{self, MetricReport};
use crate::nsm::{self, DecodeStrategy};
use crate::ntm;
use crate::summarizer::{self, LatentMode, SummarizeOpts};
use crate::training::{
    self, load_checkpoint, save_checkpoint, Checkpoint, Mode, ModelDims, TopicSpec, TrainConfig,
};
use crate::{Error, Result};

#[derive(Parser)]
#[command(name = "tgvae", version, about = "Topic-guided variational autoencoder")]
struct Cli {
    /// Thread count for embarrassingly-parallel evaluation.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build vocabularies from a JSON-lines corpus.
    Prepare(PrepareArgs),
    /// Train a model from a config file.
    Train(TrainArgs),
    /// Sample sentences from a trained model.
    Generate(GenerateArgs),
    /// Summarize articles with a trained conditional model.
    Summarize(SummarizeArgs),
    /// Compute evaluation metrics for a checkpoint.
    Eval(EvalArgs),
    /// Print the top words of every topic.
    Topics(TopicsArgs),
    /// Dump labelled draws from the latent prior as TSV.
    SampleLatent(SampleLatentArgs),
}

#[derive(Args)]
struct PrepareArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 10)]
    lm_min_count: u32,
    #[arg(long, default_value_t = 100)]
    tm_min_docs: u32,
    #[arg(long, default_value_t = 0.001)]
    tm_top_frac: f64,
    /// Stop word file (one token per line); built-in list when absent.
    #[arg(long)]
    stoplist: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Override config keys, e.g. `--set epochs=3 --set latent_dim=16`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    n: usize,
    /// `free`, a topic id, or `mix:i,j,...`.
    #[arg(long, default_value = "free")]
    topic: String,
    /// Sampling temperature; greedy decoding when absent.
    #[arg(long)]
    temp: Option<f64>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Output JSON-lines file (stdout when absent).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SummarizeArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    temp: Option<f64>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Use the posterior mean instead of a sampled latent.
    #[arg(long)]
    posterior_mean: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Prepared directory or JSON-lines file.
    #[arg(long)]
    corpus: PathBuf,
    /// Comma-separated: ppl,bleu,selfbleu,npmi,rouge.
    #[arg(long)]
    metrics: String,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Monte-Carlo samples per item for the perplexity bound.
    #[arg(long, default_value_t = 1)]
    samples: usize,
    /// Number of sentences generated for BLEU metrics.
    #[arg(long, default_value_t = 100)]
    n_gen: usize,
    /// Reference pool cap for test-BLEU.
    #[arg(long, default_value_t = 1000)]
    ref_cap: usize,
    /// Byte cap applied to summaries before ROUGE scoring.
    #[arg(long)]
    byte_cap: Option<usize>,
    #[arg(long, default_value = "metrics.json")]
    out: PathBuf,
}

#[derive(Args)]
struct TopicsArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long, default_value_t = 10)]
    top_k: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SampleLatentArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

/// Entry point: returns the process exit code (2 on usage errors via clap).
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap prints usage itself; exit code 2 for usage errors.
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    if let Some(n) = cli.threads {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Prepare(args) => cmd_prepare(args),
        Command::Train(args) => cmd_train(args),
        Command::Generate(args) => cmd_generate(args),
        Command::Summarize(args) => cmd_summarize(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Topics(args) => cmd_topics(args),
        Command::SampleLatent(args) => cmd_sample_latent(args),
    }
}

/// Load and validate a config file, applying `--set key=value` overrides.
pub fn parse_config(path: &Path, overrides: &[String]) -> Result<TrainConfig> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    let mut value: serde_json::Value = serde_json::from_str(&text)?;
    if !value.is_object() {
        return Err(Error::Config("config must be a JSON object".into()));
    }
    for item in overrides {
        let (key, raw) = item
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override '{item}' is not KEY=VALUE")))?;
        let parsed: serde_json::Value = serde_json::from_str(raw)
            .unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
        value
            .as_object_mut()
            .expect("checked object")
            .insert(key.to_string(), parsed);
    }
    if value.get("corpus").is_none() {
        return Err(Error::Config("missing required key 'corpus'".into()));
    }
    let config: TrainConfig = serde_json::from_value(value)?;
    config.validate().map_err(Error::Train)?;
    Ok(config)
}

fn stoplist_from(path: Option<&Path>) -> Result<HashSet<String>> {
    Ok(match path {
        Some(p) => corpus::load_stoplist(p).map_err(Error::Corpus)?,
        None => corpus::default_stoplist(),
    })
}

fn cmd_prepare(args: PrepareArgs) -> Result<()> {
    let docs = corpus::read_jsonl(&args.corpus).map_err(Error::Corpus)?;
    let stoplist = stoplist_from(args.stoplist.as_deref())?;
    let spec = VocabSpec {
        lm_min_count: args.lm_min_count,
        tm_stoplist: &stoplist,
        tm_top_frac: args.tm_top_frac,
        tm_min_docs: args.tm_min_docs,
    };
    let (lm, tm) = corpus::build_vocab(&docs, &spec).map_err(Error::Corpus)?;
    fs::create_dir_all(&args.out)?;
    lm.write_to(&args.out.join("lm_vocab.txt")).map_err(Error::Corpus)?;
    tm.write_to(&args.out.join("tm_vocab.txt")).map_err(Error::Corpus)?;
    corpus::write_jsonl(&args.out.join("corpus.jsonl"), &docs).map_err(Error::Corpus)?;
    let stats = serde_json::json!({
        "documents": docs.len(),
        "lm_vocab": lm.len(),
        "tm_vocab": tm.len(),
    });
    fs::write(args.out.join("stats.json"), serde_json::to_string_pretty(&stats)?)?;
    println!(
        "prepared {} documents (lm vocab {}, tm vocab {}) -> {}",
        docs.len(),
        lm.len(),
        tm.len(),
        args.out.display()
    );
    Ok(())
}

/// Resolve a corpus argument that may be a prepared directory or a raw file.
fn resolve_corpus(path: &Path) -> Result<(Vec<RawDocument>, Option<(Vocab, Vocab)>)> {
    if path.is_dir() {
        let docs = corpus::read_jsonl(&path.join("corpus.jsonl")).map_err(Error::Corpus)?;
        let lm = Vocab::read_from(&path.join("lm_vocab.txt"), true).map_err(Error::Corpus)?;
        let tm = Vocab::read_from(&path.join("tm_vocab.txt"), false).map_err(Error::Corpus)?;
        Ok((docs, Some((lm, tm))))
    } else {
        Ok((corpus::read_jsonl(path).map_err(Error::Corpus)?, None))
    }
}

fn vectorize_all(
    docs: &[RawDocument],
    lm: &Vocab,
    tm: &Vocab,
    config: &TrainConfig,
) -> Vec<DocumentRecord> {
    docs.iter().map(|d| corpus::vectorize(d, lm, tm, config.max_words, config.max_len)).collect()
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let config = parse_config(&args.config, &args.overrides)?;
    let (docs, prebuilt) = resolve_corpus(Path::new(&config.corpus))?;
    let (lm, tm) = match prebuilt {
        Some(v) => v,
        None => {
            let stoplist = stoplist_from(config.stoplist.as_deref().map(Path::new))?;
            let spec = VocabSpec {
                lm_min_count: config.lm_min_count,
                tm_stoplist: &stoplist,
                tm_top_frac: config.tm_top_frac,
                tm_min_docs: config.tm_min_docs,
            };
            corpus::build_vocab(&docs, &spec).map_err(Error::Corpus)?
        }
    };
    let records = vectorize_all(&docs, &lm, &tm, &config);
    let items = corpus::items_of(&records);
    let (train_items, dev_items) =
        training::split_dev(&items, config.dev_fraction, config.seed);
    println!(
        "training on {} items ({} dev), lm vocab {}, tm vocab {}",
        train_items.len(),
        dev_items.len(),
        lm.len(),
        tm.len()
    );
    let outcome = training::fit(&config, &lm, &tm, &train_items, &dev_items)?;
    let mut metrics = String::new();
    for log in &outcome.logs {
        metrics.push_str(&serde_json::to_string(log)?);
        metrics.push('\n');
    }
    for log in &outcome.logs {
        println!(
            "epoch {}: objective {:.4}, dev ppl {:.3}, u_kl {:.4}",
            log.epoch, log.total_objective, log.dev_ppl, log.dev_ukl
        );
    }
    save_checkpoint(
        &args.out,
        &outcome.store,
        &config,
        &outcome.dims,
        outcome.steps,
        outcome.best_epoch,
        &lm,
        &tm,
        &metrics,
    )?;
    println!("checkpoint (best epoch {}) -> {}", outcome.best_epoch, args.out.display());
    Ok(())
}

fn parse_topic_spec(raw: &str) -> Result<TopicSpec> {
    if raw == "free" {
        return Ok(TopicSpec::Free);
    }
    if let Some(ids) = raw.strip_prefix("mix:") {
        let parsed: std::result::Result<Vec<usize>, _> =
            ids.split(',').map(|s| s.trim().parse::<usize>()).collect();
        return parsed
            .map(TopicSpec::Mix)
            .map_err(|_| Error::Config(format!("bad topic mix '{raw}'")));
    }
    raw.parse::<usize>()
        .map(TopicSpec::Topic)
        .map_err(|_| Error::Config(format!("bad topic '{raw}' (expected id, mix:ids, or free)")))
}

fn strategy_of(temp: Option<f64>) -> DecodeStrategy {
    match temp {
        Some(t) if t > 0.0 => DecodeStrategy::Temperature(t),
        _ => DecodeStrategy::Greedy,
    }
}

fn write_or_print(out: Option<&Path>, content: &str) -> Result<()> {
    match out {
        Some(path) => {
            fs::write(path, content)?;
            Ok(())
        }
        None => {
            print!("{content}");
            std::io::stdout().flush()?;
            Ok(())
        }
    }
}

fn decode_text(ids: &[usize], lm: &Vocab) -> (Vec<String>, String) {
    let tokens: Vec<String> = ids
        .iter()
        .filter(|&&id| id != corpus::BOS && id != corpus::EOS && id != corpus::PAD)
        .map(|&id| lm.token(id).unwrap_or("<unk>").to_string())
        .collect();
    let text = tokens.join(" ");
    (tokens, text)
}

fn cmd_generate(args: GenerateArgs) -> Result<()> {
    let ckpt = load_checkpoint(&args.ckpt)?;
    let dims = ckpt.manifest.dims;
    if dims.mode != Mode::Generation {
        return Err(Error::Config("checkpoint was trained for summarization".into()));
    }
    let spec = parse_topic_spec(&args.topic)?;
    let strategy = strategy_of(args.temp);
    let max_len = ckpt.manifest.config.max_len;
    let mix_draws = ckpt.manifest.config.mix_draws;

    let mut out = String::new();
    for i in 0..args.n {
        let (z, _) =
            training::generate_latent(&ckpt.store, &dims, &spec, mix_draws, args.seed, i as u64)?;
        let seq = nsm::generate(&ckpt.store, &z, strategy, max_len, args.seed.wrapping_add(i as u64))
            .map_err(Error::Diff)?;
        let (tokens, text) = decode_text(&seq.ids, &ckpt.lm);
        let topic_field = match &spec {
            TopicSpec::Free => serde_json::json!("free"),
            TopicSpec::Topic(id) => serde_json::json!(id),
            TopicSpec::Mix(_) => serde_json::json!("mix"),
        };
        let line = serde_json::json!({ "topic": topic_field, "tokens": tokens, "text": text });
        out.push_str(&serde_json::to_string(&line)?);
        out.push('\n');
    }
    write_or_print(args.out.as_deref(), &out)
}

fn cmd_summarize(args: SummarizeArgs) -> Result<()> {
    let ckpt = load_checkpoint(&args.ckpt)?;
    let dims = ckpt.manifest.dims;
    if dims.mode != Mode::Summarization {
        return Err(Error::Config("checkpoint was not trained for summarization".into()));
    }
    let docs = corpus::read_jsonl(&args.input).map_err(Error::Corpus)?;
    let config = &ckpt.manifest.config;
    let out_str = summarize_docs(&ckpt, &docs, config, &args)?;
    write_or_print(args.out.as_deref(), &out_str)
}

fn summarize_docs(
    ckpt: &Checkpoint,
    docs: &[RawDocument],
    config: &TrainConfig,
    args: &SummarizeArgs,
) -> Result<String> {
    let dims = ckpt.manifest.dims;
    let opts_base = SummarizeOpts {
        strategy: strategy_of(args.temp),
        max_len: config.max_len,
        seed: args.seed,
        latent_mode: if args.posterior_mean { LatentMode::PosteriorMean } else { LatentMode::Sampled },
        flow_depth: dims.flow_depth,
        num_topics: dims.num_topics,
        latent: dims.latent,
    };
    let mut out = String::new();
    for (i, doc) in docs.iter().enumerate() {
        let tokens = corpus::tokenize(doc.body());
        if tokens.is_empty() {
            return Err(Error::Config(format!("document '{}' has an empty body", doc.id)));
        }
        let rec = corpus::vectorize(doc, &ckpt.lm, &ckpt.tm, config.max_words, config.max_len);
        let source = rec
            .source
            .or(rec.sequences.into_iter().next())
            .ok_or_else(|| Error::Config(format!("document '{}' has no source text", doc.id)))?;
        let opts = SummarizeOpts { seed: args.seed.wrapping_add(i as u64), ..opts_base };
        let seq = summarizer::summarize(&ckpt.store, &source.ids, dims.nsm(), &opts)
            .map_err(Error::Diff)?;
        let (_, text) = decode_text(&seq.ids, &ckpt.lm);
        let line = serde_json::json!({ "id": doc.id, "summary": text });
        out.push_str(&serde_json::to_string(&line)?);
        out.push('\n');
    }
    Ok(out)
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let ckpt = load_checkpoint(&args.ckpt)?;
    let dims = ckpt.manifest.dims;
    let config = &ckpt.manifest.config;
    let (docs, _) = resolve_corpus(&args.corpus)?;
    let records = vectorize_all(&docs, &ckpt.lm, &ckpt.tm, config);
    let items = corpus::items_of(&records);
    let requested: Vec<&str> = args.metrics.split(',').map(|s| s.trim()).collect();
    let mut reports: Vec<MetricReport> = Vec::new();

    for metric in requested {
        match metric {
            "ppl" => {
                let (ppl, ukl) =
                    eval::perplexity_bound(&ckpt.store, &dims, &items, args.samples, args.seed)
                        .map_err(Error::Eval)?;
                reports.push(report("ppl_bound", ppl, &dims, args.samples));
                reports.push(report("avg_u_kl", ukl, &dims, args.samples));
            }
            "bleu" | "selfbleu" => {
                let hyps = generated_token_sets(&ckpt, &dims, config, args.n_gen, args.seed)?;
                if metric == "bleu" {
                    let mut refs: Vec<Vec<String>> = Vec::new();
                    for rec in &records {
                        for seq in &rec.sequences {
                            let (tokens, _) = decode_text(&seq.ids, &ckpt.lm);
                            refs.push(tokens);
                            if refs.len() >= args.ref_cap {
                                break;
                            }
                        }
                    }
                    let scores = eval::bleu_scores(&hyps, &refs, 5).map_err(Error::Eval)?;
                    for (n, s) in scores.iter().enumerate().skip(1) {
                        reports.push(report(&format!("test_bleu_{}", n + 1), *s, &dims, args.n_gen));
                    }
                } else {
                    let scores = eval::self_bleu(&hyps, 5).map_err(Error::Eval)?;
                    for (n, s) in scores.iter().enumerate().skip(1) {
                        reports.push(report(&format!("self_bleu_{}", n + 1), *s, &dims, args.n_gen));
                    }
                }
            }
            "npmi" => {
                let beta = ntm::beta_values(&ckpt.store, dims.num_topics).map_err(Error::Diff)?;
                let lists = ntm::top_words(&beta, 20);
                let topics: Vec<Vec<String>> = lists
                    .iter()
                    .map(|ids| {
                        ids.iter()
                            .map(|&w| ckpt.tm.token(w).unwrap_or("?").to_string())
                            .collect()
                    })
                    .collect();
                let ref_docs: Vec<Vec<String>> =
                    docs.iter().map(|d| corpus::tokenize(d.body())).collect();
                let score = eval::npmi_coherence(&topics, &ref_docs, &[5, 10, 15, 20])
                    .map_err(Error::Eval)?;
                reports.push(report("npmi", score, &dims, 20));
            }
            "rouge" => {
                if dims.mode != Mode::Summarization {
                    return Err(Error::Config("rouge requires a summarization checkpoint".into()));
                }
                let sum_args = SummarizeArgs {
                    ckpt: args.ckpt.clone(),
                    input: args.corpus.clone(),
                    temp: None,
                    seed: args.seed,
                    posterior_mean: true,
                    out: None,
                };
                let produced = summarize_docs(&ckpt, &docs, config, &sum_args)?;
                let mut f1 = [0.0f64; 3];
                let mut recall = [0.0f64; 3];
                let mut count = 0usize;
                for (line, doc) in produced.lines().zip(&docs) {
                    let v: serde_json::Value = serde_json::from_str(line)?;
                    let hyp: Vec<String> = v["summary"]
                        .as_str()
                        .unwrap_or("")
                        .split_whitespace()
                        .map(|s| s.to_string())
                        .collect();
                    let reference = corpus::tokenize(doc.summary.as_deref().unwrap_or(""));
                    if reference.is_empty() {
                        continue;
                    }
                    let s = eval::rouge_scores(&hyp, &[reference], args.byte_cap)
                        .map_err(Error::Eval)?;
                    f1[0] += s.rouge_1.f1;
                    f1[1] += s.rouge_2.f1;
                    f1[2] += s.rouge_l.f1;
                    recall[0] += s.rouge_1.recall;
                    recall[1] += s.rouge_2.recall;
                    recall[2] += s.rouge_l.recall;
                    count += 1;
                }
                if count == 0 {
                    return Err(Error::Config("no reference summaries in corpus".into()));
                }
                let names = ["1", "2", "l"];
                for i in 0..3 {
                    reports.push(report(&format!("rouge_f_{}", names[i]), f1[i] / count as f64, &dims, count));
                    reports.push(report(
                        &format!("rouge_r_{}", names[i]),
                        recall[i] / count as f64,
                        &dims,
                        count,
                    ));
                }
            }
            other => return Err(Error::Config(format!("unknown metric '{other}'"))),
        }
    }
    fs::write(&args.out, serde_json::to_string_pretty(&reports)?)?;
    println!("wrote {} metrics -> {}", reports.len(), args.out.display());
    Ok(())
}

fn report(metric: &str, value: f64, dims: &ModelDims, samples: usize) -> MetricReport {
    MetricReport {
        metric: metric.to_string(),
        value,
        params: serde_json::json!({
            "num_topics": dims.num_topics,
            "flow_depth": dims.flow_depth,
            "samples": samples,
        }),
    }
}

fn generated_token_sets(
    ckpt: &Checkpoint,
    dims: &ModelDims,
    config: &TrainConfig,
    n: usize,
    seed: u64,
) -> Result<Vec<Vec<String>>> {
    let mut hyps = Vec::with_capacity(n);
    for i in 0..n {
        let (z, _) = training::generate_latent(
            &ckpt.store,
            dims,
            &TopicSpec::Free,
            config.mix_draws,
            seed,
            i as u64,
        )?;
        let seq = nsm::generate(
            &ckpt.store,
            &z,
            DecodeStrategy::Temperature(1.0),
            config.max_len,
            seed.wrapping_add(i as u64),
        )
        .map_err(Error::Diff)?;
        let (tokens, _) = decode_text(&seq.ids, &ckpt.lm);
        hyps.push(tokens);
    }
    Ok(hyps)
}

fn cmd_topics(args: TopicsArgs) -> Result<()> {
    let ckpt = load_checkpoint(&args.ckpt)?;
    let dims = ckpt.manifest.dims;
    let beta = ntm::beta_values(&ckpt.store, dims.num_topics).map_err(Error::Diff)?;
    let lists = ntm::top_words(&beta, args.top_k);
    let text = ntm::format_topics(&lists, &ckpt.tm);
    write_or_print(args.out.as_deref(), &text)
}

fn cmd_sample_latent(args: SampleLatentArgs) -> Result<()> {
    let ckpt = load_checkpoint(&args.ckpt)?;
    let dims = ckpt.manifest.dims;
    let rows =
        training::sample_latent_rows(&ckpt.store, &dims, args.n, args.seed)?;
    fs::write(&args.out, crate::latent::format_latent_samples(&rows))?;
    println!("wrote {} latent samples -> {}", rows.len(), args.out.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn topic_spec_parsing() {
        assert_eq!(parse_topic_spec("free").unwrap(), TopicSpec::Free);
        assert_eq!(parse_topic_spec("3").unwrap(), TopicSpec::Topic(3));
        assert_eq!(parse_topic_spec("mix:0,2").unwrap(), TopicSpec::Mix(vec![0, 2]));
        assert!(parse_topic_spec("nope").is_err());
    }

    #[test]
    fn config_parsing_defaults_and_rejections() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.json");

        // Missing corpus: error names the key.
        std::fs::write(&path, "{}").unwrap();
        let err = parse_config(&path, &[]).unwrap_err();
        assert!(err.to_string().contains("corpus"), "{err}");

        // Empty overrides: full-scale defaults.
        std::fs::write(&path, r#"{"corpus": "x.jsonl"}"#).unwrap();
        let config = parse_config(&path, &[]).unwrap();
        assert_eq!(config.hidden_size(), 600);
        assert_eq!(config.dropout, 0.4);
        assert_eq!(config.lambda, 0.1);
        // Summarization mode defaults to hidden 400.
        std::fs::write(&path, r#"{"corpus": "x.jsonl", "mode": "summarization"}"#).unwrap();
        let config = parse_config(&path, &[]).unwrap();
        assert_eq!(config.hidden_size(), 400);

        // Unknown keys rejected.
        std::fs::write(&path, r#"{"corpus": "x.jsonl", "nonsense": 5}"#).unwrap();
        assert!(parse_config(&path, &[]).is_err());

        // Round trip.
        std::fs::write(&path, r#"{"corpus": "x.jsonl", "num_topics": 7, "epochs": 2}"#).unwrap();
        let config = parse_config(&path, &[]).unwrap();
        let serialized = serde_json::to_string(&config).unwrap();
        let reparsed: TrainConfig = serde_json::from_str(&serialized).unwrap();
        assert_eq!(config, reparsed);

        // Overrides apply and are validated.
        let config = parse_config(&path, &["epochs=9".into(), "latent_dim=4".into()]).unwrap();
        assert_eq!(config.epochs, 9);
        assert_eq!(config.latent_dim, 4);
        assert!(parse_config(&path, &["batch_size=0".into()]).is_err());
    }
}
