//! `evrag`: ingest, index, query, train, generate, eval and sweep.
//!
//! Exit codes: 0 success, 2 I/O, parse, schema or configuration error,
//! 3 retrieval left no evidence, 4 training diverged (non-finite loss).
//! Data goes to stdout, diagnostics to stderr.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use evrag::data::hotpotqa_json;
use evrag::{
    aggregate, decode_greedy, encode, evaluate, filter_by_threshold, fit, generate_synthetic,
    load_hotpotqa, sweep, weights_for, Checkpoint, Corpus, Dataset, EncoderParams, Error,
    EvidenceIndex, RunConfig, SweepParam, SyntheticSpec, Vocabulary,
};

const EXIT_USAGE: u8 = 2;
const EXIT_EMPTY: u8 = 3;
const EXIT_DIVERGED: u8 = 4;

#[derive(Parser)]
#[command(name = "evrag", version, about = "Evidence-constrained retrieval-augmented generation")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Default)]
struct Common {
    /// JSON run configuration; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    top_k: Option<usize>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    beta: Option<f64>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    tau: Option<f64>,
    #[arg(long, global = true)]
    lambda: Option<f64>,
    #[arg(long, global = true)]
    max_len: Option<usize>,
    /// Output file (or file stem for sweep).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    format: Format,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, Default)]
enum Format {
    Json,
    Csv,
    #[default]
    Text,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic multi-hop dataset in HotpotQA JSON.
    Synth {
        /// Generator spec (JSON); omitted keys take defaults.
        #[arg(long)]
        spec: Option<PathBuf>,
    },
    /// Chunk a HotpotQA file into a JSONL evidence corpus.
    Ingest {
        #[arg(long)]
        data: PathBuf,
    },
    /// Encode a JSONL corpus into an evidence index.
    Index {
        #[arg(long)]
        corpus: PathBuf,
        /// Encode with this checkpoint's encoder instead of a seeded one.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Rank indexed evidence for a question.
    Query {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        question: String,
        /// Required when the index was built from a checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train on a HotpotQA file and write a checkpoint.
    Train {
        #[arg(long)]
        data: PathBuf,
    },
    /// Answer one question from a JSONL corpus.
    Generate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        question: String,
    },
    /// Score a checkpoint on a HotpotQA file.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Evaluate over a grid of one parameter.
    Sweep {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// beta, top_k, tau, lambda or max_len.
        #[arg(long)]
        param: String,
        /// Comma-separated, strictly increasing values.
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        grid: Vec<f64>,
    },
}

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::NonFiniteLoss { .. } => EXIT_DIVERGED,
            _ => EXIT_USAGE,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_USAGE,
        message: message.into(),
    }
}

type CliResult<T> = Result<T, Failure>;

/// What an index remembers about how it was built.
#[derive(Serialize, Deserialize)]
struct IndexMeta {
    config: RunConfig,
    vocabulary: Vocabulary,
    /// Fingerprint of the checkpoint whose encoder was used, if any.
    checkpoint: Option<String>,
}

impl Common {
    /// Defaults, then `base` (a checkpoint's config) or the config file,
    /// then flags.
    fn resolve(&self, base: Option<&RunConfig>) -> CliResult<RunConfig> {
        let mut cfg = match (&self.config, base) {
            (Some(path), _) => RunConfig::load(path)?,
            (None, Some(b)) => b.clone(),
            (None, None) => RunConfig::default(),
        };
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.top_k {
            cfg.retrieval.top_k = v;
        }
        if let Some(v) = self.beta {
            cfg.retrieval.beta = v;
        }
        if let Some(v) = self.tau {
            cfg.retrieval.tau = v;
        }
        if let Some(v) = self.lambda {
            cfg.training.lambda = v;
        }
        if let Some(v) = self.max_len {
            cfg.eval.max_len = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn out(&self) -> CliResult<&Path> {
        self.out.as_deref().ok_or_else(|| usage("--out is required"))
    }
}

fn sidecar(out: &Path, suffix: &str) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> CliResult<()> {
    fs::write(path, contents).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn write_config(out: &Path, cfg: &RunConfig) -> CliResult<()> {
    write(&sidecar(out, ".config.json"), cfg.to_json() + "\n")
}

/// Write to `--out` (plus the config sidecar) or print to stdout.
fn emit(common: &Common, cfg: &RunConfig, body: &str) -> CliResult<()> {
    match &common.out {
        Some(out) => {
            write(out, body)?;
            write_config(out, cfg)
        }
        None => {
            print!("{body}");
            Ok(())
        }
    }
}

fn load_dataset(path: &Path, cfg: &RunConfig) -> CliResult<Dataset> {
    let samples = load_hotpotqa(path)?;
    Ok(Dataset::from_samples(
        samples,
        cfg.retrieval.granularity,
        cfg.retrieval.prepend_title,
    ))
}

fn json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("value serializes") + "\n"
}

fn cmd_synth(common: &Common, spec: Option<&Path>) -> CliResult<()> {
    let mut spec: SyntheticSpec = match spec {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| usage(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", p.display())))?
        }
        None => SyntheticSpec::default(),
    };
    if let Some(seed) = common.seed {
        spec.seed = seed;
    }
    let ds = generate_synthetic(&spec)?;
    // Synthetic chunks carry no titles.
    let mut cfg = common.resolve(None)?;
    cfg.retrieval.prepend_title = false;
    emit(common, &cfg, &hotpotqa_json(&ds.samples))
}

fn cmd_ingest(common: &Common, data: &Path) -> CliResult<()> {
    let cfg = common.resolve(None)?;
    let ds = load_dataset(data, &cfg)?;
    emit(common, &cfg, &ds.corpus.to_jsonl())
}

fn cmd_index(common: &Common, corpus: &Path, checkpoint: Option<&Path>) -> CliResult<()> {
    let out = common.out()?;
    let corpus = Corpus::load(corpus)?;
    let texts = corpus.entries.iter().map(|e| e.text.as_str());
    let (cfg, vocab, encoder, ck_fp) = match checkpoint {
        Some(p) => {
            let ck = Checkpoint::load(p)?;
            let cfg = common.resolve(Some(&ck.config))?;
            let fp = ck.fingerprint();
            (cfg, ck.model.vocab, ck.model.encoder, Some(fp))
        }
        None => {
            let cfg = common.resolve(None)?;
            let vocab = Vocabulary::from_texts(texts, cfg.encoder.min_count, cfg.encoder.hash_buckets);
            let enc = EncoderParams::init(vocab.size(), cfg.encoder.dim, cfg.seed);
            (cfg, vocab, enc, None)
        }
    };
    let meta = IndexMeta {
        config: cfg.clone(),
        vocabulary: vocab,
        checkpoint: ck_fp,
    };
    let index = EvidenceIndex::build(&corpus.pairs(), &meta.vocabulary, &encoder)?
        .with_metadata(serde_json::to_string(&meta).expect("metadata serializes"));
    index.save(out)?;
    write_config(out, &cfg)?;
    match common.format {
        Format::Json => print!(
            "{}",
            json(&serde_json::json!({
                "entries": index.len(),
                "dim": index.dim(),
                "fingerprint": index.encoder_fingerprint(),
            }))
        ),
        Format::Csv => println!(
            "entries,dim,fingerprint\n{},{},{}",
            index.len(),
            index.dim(),
            index.encoder_fingerprint()
        ),
        Format::Text => println!(
            "entries {}\ndim {}\nfingerprint {}",
            index.len(),
            index.dim(),
            index.encoder_fingerprint()
        ),
    }
    Ok(())
}

#[derive(Serialize)]
struct QueryRow {
    rank: usize,
    id: u64,
    score: f64,
    alpha: f64,
}

fn cmd_query(common: &Common, index_path: &Path, question: &str, checkpoint: Option<&Path>) -> CliResult<()> {
    let index = EvidenceIndex::load(index_path)?;
    let meta: IndexMeta = serde_json::from_str(index.metadata()).map_err(|e| {
        usage(format!("{}: index metadata is unreadable: {e}", index_path.display()))
    })?;
    let (base, vocab, encoder) = match (checkpoint, &meta.checkpoint) {
        (Some(p), _) => {
            let ck = Checkpoint::load(p)?;
            (ck.config.clone(), ck.model.vocab, ck.model.encoder)
        }
        (None, Some(_)) => {
            return Err(usage(format!(
                "{} was built from a checkpoint; pass --checkpoint",
                index_path.display()
            )))
        }
        (None, None) => {
            let enc = EncoderParams::init(meta.vocabulary.size(), meta.config.encoder.dim, meta.config.seed);
            (meta.config.clone(), meta.vocabulary, enc)
        }
    };
    index.check_encoder(&encoder)?;
    let cfg = common.resolve(Some(&base))?;
    let q = encode(question, &vocab, &encoder)?;
    let ranked = index.top_k(&q, cfg.retrieval.top_k)?;
    let kept = filter_by_threshold(&ranked, cfg.retrieval.tau);
    if kept.is_empty() {
        return Err(Failure {
            code: EXIT_EMPTY,
            message: format!("no evidence scored at least tau = {}", cfg.retrieval.tau),
        });
    }
    let weights = weights_for(&kept, cfg.retrieval.beta)?;
    let rows: Vec<QueryRow> = kept
        .iter()
        .zip(&weights.entries)
        .map(|(r, w)| QueryRow {
            rank: r.rank,
            id: r.chunk_id,
            score: r.score,
            alpha: w.alpha,
        })
        .collect();
    let body = match common.format {
        Format::Json => json(&rows),
        Format::Csv => {
            let mut s = String::from("rank,id,score,alpha\n");
            for r in &rows {
                writeln!(s, "{},{},{},{}", r.rank, r.id, r.score, r.alpha).unwrap();
            }
            s
        }
        Format::Text => {
            let mut s = format!("{:>4}  {:>8}  {:>9}  {:>9}\n", "rank", "id", "score", "alpha");
            for r in &rows {
                writeln!(s, "{:>4}  {:>8}  {:>9.6}  {:>9.6}", r.rank, r.id, r.score, r.alpha).unwrap();
            }
            s
        }
    };
    emit(common, &cfg, &body)
}

fn cmd_train(common: &Common, data: &Path) -> CliResult<()> {
    let out = common.out()?;
    let cfg = common.resolve(None)?;
    let ds = load_dataset(data, &cfg)?;
    let ck = fit(&ds, &cfg)?;
    ck.save(out)?;
    write(&sidecar(out, ".log.json"), json(&ck.training_log))?;
    write_config(out, &cfg)?;
    let last = ck.training_log.last().expect("log has the initial entry");
    match common.format {
        Format::Json => print!(
            "{}",
            json(&serde_json::json!({
                "epochs": cfg.training.epochs,
                "final": last,
                "fingerprint": ck.fingerprint(),
            }))
        ),
        Format::Csv => {
            println!("epoch,l_nll,l_cons,l_joint");
            for (i, l) in ck.training_log.iter().enumerate() {
                println!("{i},{},{},{}", l.l_nll, l.l_cons, l.l_joint);
            }
        }
        Format::Text => println!(
            "epochs {}\nl_nll {:.6}\nl_cons {:.6}\nl_joint {:.6}\nfingerprint {}",
            cfg.training.epochs,
            last.l_nll,
            last.l_cons,
            last.l_joint,
            ck.fingerprint()
        ),
    }
    Ok(())
}

fn cmd_generate(common: &Common, checkpoint: &Path, corpus: &Path, question: &str) -> CliResult<()> {
    let ck = Checkpoint::load(checkpoint)?;
    let cfg = common.resolve(Some(&ck.config))?;
    let corpus = Corpus::load(corpus)?;
    let m = &ck.model;
    let index = EvidenceIndex::build(&corpus.pairs(), &m.vocab, &m.encoder)?;
    let q = encode(question, &m.vocab, &m.encoder)?;
    let kept = filter_by_threshold(&index.top_k(&q, cfg.retrieval.top_k)?, cfg.retrieval.tau);
    if kept.is_empty() {
        return Err(Failure {
            code: EXIT_EMPTY,
            message: format!("no evidence scored at least tau = {}", cfg.retrieval.tau),
        });
    }
    let weights = weights_for(&kept, cfg.retrieval.beta)?;
    let agg = aggregate(&weights, &index)?;
    let trace = decode_greedy(question, &agg, &m.vocab, &m.encoder, &m.decoder, cfg.eval.max_len)?;
    let answer = m.vocab.detokenize(trace.content_tokens());
    let body = match common.format {
        Format::Json => json(&serde_json::json!({
            "question": question,
            "answer": answer,
            "evidence": weights.entries,
        })),
        Format::Csv => {
            let mut s = String::from("id,score,alpha\n");
            for w in &weights.entries {
                writeln!(s, "{},{},{}", w.chunk_id, w.score, w.alpha).unwrap();
            }
            s
        }
        Format::Text => {
            let mut s = format!("{answer}\n");
            for w in &weights.entries {
                writeln!(s, "  evidence {} score {:.6} alpha {:.6}", w.chunk_id, w.score, w.alpha).unwrap();
            }
            s
        }
    };
    emit(common, &cfg, &body)
}

fn cmd_eval(common: &Common, checkpoint: &Path, data: &Path) -> CliResult<()> {
    let ck = Checkpoint::load(checkpoint)?;
    let cfg = common.resolve(Some(&ck.config))?;
    let ds = load_dataset(data, &cfg)?;
    let report = evaluate(&ds, &ck, &cfg)?;
    let m = &report.metrics;
    let body = match common.format {
        Format::Json => report.to_json(),
        Format::Csv => format!(
            "em,f1,bleu,rouge_l,n_samples,n_failed,mean_consistency,evidence_support_rate\n{},{},{},{},{},{},{},{}\n",
            m.em,
            m.f1,
            m.bleu,
            m.rouge_l,
            m.n_samples,
            report.n_failed,
            report.mean_consistency,
            report.evidence_support_rate
        ),
        Format::Text => format!(
            "EM {:.2}\nF1 {:.2}\nBLEU {:.2}\nROUGE-L {:.2}\nsamples {} (failed {})\nconsistency {:.4}\nsupport {:.4}\n",
            m.em,
            m.f1,
            m.bleu,
            m.rouge_l,
            m.n_samples,
            report.n_failed,
            report.mean_consistency,
            report.evidence_support_rate
        ),
    };
    emit(common, &cfg, &body)
}

fn cmd_sweep(common: &Common, checkpoint: &Path, data: &Path, param: &str, grid: &[f64]) -> CliResult<()> {
    let param = SweepParam::parse(param).ok_or_else(|| usage(format!("unknown sweep parameter {param:?}")))?;
    let ck = Checkpoint::load(checkpoint)?;
    let cfg = common.resolve(Some(&ck.config))?;
    let ds = load_dataset(data, &cfg)?;
    let result = sweep(&ds, &ck, &cfg, param, grid)?;
    match &common.out {
        Some(out) => {
            write(&sidecar(out, ".json"), result.to_json())?;
            write(&sidecar(out, ".csv"), result.to_csv())?;
            write(&sidecar(out, ".svg"), result.to_svg())?;
            write_config(out, &cfg)?;
        }
        None => match common.format {
            Format::Json => print!("{}", result.to_json()),
            _ => print!("{}", result.to_csv()),
        },
    }
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    let c = &cli.common;
    match &cli.command {
        Command::Synth { spec } => cmd_synth(c, spec.as_deref()),
        Command::Ingest { data } => cmd_ingest(c, data),
        Command::Index { corpus, checkpoint } => cmd_index(c, corpus, checkpoint.as_deref()),
        Command::Query {
            index,
            question,
            checkpoint,
        } => cmd_query(c, index, question, checkpoint.as_deref()),
        Command::Train { data } => cmd_train(c, data),
        Command::Generate {
            checkpoint,
            corpus,
            question,
        } => cmd_generate(c, checkpoint, corpus, question),
        Command::Eval { checkpoint, data } => cmd_eval(c, checkpoint, data),
        Command::Sweep {
            checkpoint,
            data,
            param,
            grid,
        } => cmd_sweep(c, checkpoint, data, param, grid),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("evrag: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sidecar_appends_suffix() {
        assert_eq!(sidecar(Path::new("out/ck.json"), ".config.json"), PathBuf::from("out/ck.json.config.json"));
    }

    #[test]
    fn flags_win_over_base_config() {
        let mut base = RunConfig::default();
        base.retrieval.beta = 7.0;
        base.retrieval.top_k = 9;
        let common = Common {
            top_k: Some(3),
            ..Common::default()
        };
        let cfg = common.resolve(Some(&base)).unwrap();
        assert_eq!(cfg.retrieval.top_k, 3);
        assert_eq!(cfg.retrieval.beta, 7.0);
    }

    #[test]
    fn invalid_flag_value_is_a_usage_error() {
        let common = Common {
            beta: Some(-1.0),
            ..Common::default()
        };
        assert_eq!(common.resolve(None).unwrap_err().code, EXIT_USAGE);
    }

    #[test]
    fn divergence_maps_to_its_own_code() {
        let f = Failure::from(Error::NonFiniteLoss {
            epoch: 1,
            sample_id: "s".into(),
        });
        assert_eq!(f.code, EXIT_DIVERGED);
    }
}
