//! `dysfluent`: dysfluent text generation, mock or external synthesis, audio
//! injection, corpus builds, scoring and corpus statistics.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 adapter or
//! provider failure. Every failure is reported on stderr.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use dysfluent::annotation::{serialize_annotated, write_annotated, DysfluencyKind};
use dysfluent::audio::{
    insert_pause, prolong_phone, read_wav, write_wav, Alignment, DurationContext, DurationRanges, DEFAULT_FADE_MS,
};
use dysfluent::corpus::{build_corpus, corpus_stats, read_manifest_file, CorpusConfig, CorpusError};
use dysfluent::lexicon::Lexicon;
use dysfluent::metrics::{
    detection_scores, format_report, pair_records, read_token_records, tokens_from_annotated, MetricsError,
    TokenRecord,
};
use dysfluent::seed::rng_from_seed;
use dysfluent::synth::{run_adapter, ExternalAdapter, MockSynthesizer, SynthError, Synthesizer};
use dysfluent::textgen::llm::{ChatTransport, FixtureTransport, HttpTransport, LlmBackendConfig, LlmClient};
use dysfluent::textgen::{
    bundled_corpus, generate_all, read_text_corpus, BatchOutput, GenSpec, Generator, RuleGenerator, TextGenError,
};

#[derive(Debug, Parser)]
#[command(name = "dysfluent", version, about = "Simulated dysfluent speech corpora and dysfluency scoring")]
struct Cli {
    /// Master seed for commands that draw random numbers.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Print a single JSON document instead of text.
    #[arg(long, global = true)]
    json: bool,
    /// Worker threads for batch work; defaults to the number of cores.
    #[arg(long, global = true, value_name = "N")]
    workers: Option<usize>,
    /// Log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Inject one dysfluency of a kind into every line of a text file.
    GenText(GenTextArgs),
    /// Synthesize a request JSONL file; usable as an external adapter.
    Synth(SynthArgs),
    /// Insert a pause or prolong a phone in a WAV file with its alignment.
    Inject(InjectArgs),
    /// Build a corpus from a JSON config.
    BuildCorpus(BuildArgs),
    /// Score hypothesis token sequences against references.
    Score(ScoreArgs),
    /// Summarize a corpus manifest.
    Stats(StatsArgs),
}

#[derive(Debug, Args)]
struct GenTextArgs {
    /// Text file, one sentence per line (`id<TAB>text` or bare text); defaults to the bundled sentences.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Dysfluency kind short name, e.g. word_rep or phn_pro.
    #[arg(long)]
    kind: String,
    /// Annotated text output (`id<TAB>level<TAB>text`); stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Sidecar label JSONL output.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Reference token JSONL output for scoring.
    #[arg(long)]
    tokens: Option<PathBuf>,
    /// Generator backend.
    #[arg(long, value_enum, default_value_t = Backend::Rule)]
    generator: Backend,
    /// Rule generator parameters as JSON (kind and seed are taken from the flags).
    #[arg(long)]
    rule_spec: Option<PathBuf>,
    /// LLM backend config JSON.
    #[arg(long)]
    llm_config: Option<PathBuf>,
    /// Directory of prompt templates named `<kind>.txt`.
    #[arg(long)]
    templates: Option<PathBuf>,
    /// Replay recorded LLM responses from this directory instead of calling the endpoint.
    #[arg(long)]
    fixtures: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Backend {
    Rule,
    Llm,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Request JSONL, one `{id, text_or_phones, level, speaker}` per line.
    #[arg(long)]
    input: PathBuf,
    /// Directory receiving `<id>.wav`, `<id>.align.json` and any error report.
    #[arg(long)]
    outdir: PathBuf,
    /// External adapter command and its leading arguments; the mock synthesizer when omitted.
    #[arg(long, num_args = 1.., allow_hyphen_values = true, value_name = "CMD")]
    adapter: Option<Vec<String>>,
}

#[derive(Debug, Args)]
struct InjectArgs {
    /// Input WAV (PCM16 mono).
    #[arg(long)]
    wav: PathBuf,
    /// Alignment JSON of the input.
    #[arg(long)]
    align: PathBuf,
    /// Insert a pause at this time in seconds (must fall on a phone boundary).
    #[arg(long, conflicts_with = "prolong", required_unless_present = "prolong")]
    pause_at: Option<f64>,
    /// Prolong the phone interval with this index.
    #[arg(long)]
    prolong: Option<usize>,
    /// Seconds to add; sampled from the range of `--context` with `--seed` when omitted.
    #[arg(long)]
    duration: Option<f64>,
    /// Duration range used when sampling a pause duration.
    #[arg(long, value_enum, default_value_t = PauseContext::Word)]
    context: PauseContext,
    /// Pause fade length in milliseconds.
    #[arg(long, default_value_t = DEFAULT_FADE_MS)]
    fade_ms: f64,
    /// Output WAV; defaults to `<input>.out.wav`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Output alignment; defaults to the output WAV path with `.align.json`.
    #[arg(long)]
    out_align: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PauseContext {
    Word,
    Phoneme,
}

#[derive(Debug, Args)]
struct BuildArgs {
    /// Corpus config JSON.
    #[arg(long)]
    config: PathBuf,
    /// Override the output directory of the config.
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Use `--seed` instead of the config's master seed.
    #[arg(long)]
    override_seed: bool,
}

#[derive(Debug, Args)]
struct ScoreArgs {
    /// Reference JSONL, one `{id, tokens}` per line.
    #[arg(long = "ref")]
    reference: PathBuf,
    /// Hypothesis JSONL with the same ids.
    #[arg(long)]
    hyp: PathBuf,
    /// JSON object of kind short name to frequency for the weighted F1.
    #[arg(long)]
    weights: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct StatsArgs {
    /// Corpus manifest JSONL.
    #[arg(long)]
    manifest: PathBuf,
}

/// A failure and the exit code it maps to.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Data(String),
    External(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::External(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Data(m) | Failure::External(m) => m,
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Data(e.to_string())
    }
}

impl From<TextGenError> for Failure {
    fn from(e: TextGenError) -> Self {
        match e {
            TextGenError::Provider(_) => Failure::External(e.to_string()),
            TextGenError::InvalidSpec(_) => Failure::Usage(e.to_string()),
            _ => Failure::Data(e.to_string()),
        }
    }
}

impl From<SynthError> for Failure {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::AdapterFailure(_) => Failure::External(e.to_string()),
            _ => Failure::Data(e.to_string()),
        }
    }
}

impl From<CorpusError> for Failure {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::AdapterFailure(_) => Failure::External(e.to_string()),
            CorpusError::TextGen(t) => t.into(),
            CorpusError::Config(_) => Failure::Usage(e.to_string()),
            _ => Failure::Data(e.to_string()),
        }
    }
}

macro_rules! data_err {
    ($($t:ty),*) => {$(
        impl From<$t> for Failure {
            fn from(e: $t) -> Self {
                Failure::Data(e.to_string())
            }
        }
    )*};
}

data_err!(MetricsError, dysfluent::audio::AudioError, dysfluent::annotation::AnnotationError, serde_json::Error);

type Outcome = Result<ExitCode, Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    if let Some(n) = cli.workers {
        if n == 0 {
            eprintln!("error: --workers must be at least 1");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start worker pool: {e}");
            return ExitCode::from(1);
        }
    }
    match run(&cli) {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

fn run(cli: &Cli) -> Outcome {
    match &cli.command {
        Command::GenText(a) => gen_text(cli, a),
        Command::Synth(a) => synth(cli, a),
        Command::Inject(a) => inject(cli, a),
        Command::BuildCorpus(a) => build(cli, a),
        Command::Score(a) => score(cli, a),
        Command::Stats(a) => stats(cli, a),
    }
}

fn emit(cli: &Cli, value: serde_json::Value, text: impl FnOnce() -> String) -> io::Result<()> {
    let mut out = io::stdout().lock();
    if cli.json {
        serde_json::to_writer_pretty(&mut out, &value)?;
        writeln!(out)
    } else {
        write!(out, "{}", text())
    }
}

fn create(path: &Path) -> io::Result<BufWriter<fs::File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(fs::File::create(path)?))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn parse_kind(name: &str) -> Result<DysfluencyKind, Failure> {
    DysfluencyKind::from_short_name(name).ok_or_else(|| {
        let known: Vec<String> = DysfluencyKind::ALL.iter().map(|k| k.short_name()).collect();
        Failure::Usage(format!("unknown kind {name:?}; expected one of {}", known.join(", ")))
    })
}

fn gen_text(cli: &Cli, a: &GenTextArgs) -> Outcome {
    let kind = parse_kind(&a.kind)?;
    let lex = Lexicon::bundled();
    let corpus = match &a.input {
        Some(p) => read_text_corpus(BufReader::new(fs::File::open(p)?))?,
        None => bundled_corpus(),
    };
    let output: BatchOutput = match a.generator {
        Backend::Rule => {
            let spec: GenSpec = match &a.rule_spec {
                Some(p) => read_json(p)?,
                None => GenSpec::default(),
            };
            generate_all(&corpus, &RuleGenerator::new(spec, lex), kind, cli.seed)?
        }
        Backend::Llm => {
            let mut cfg: LlmBackendConfig = match &a.llm_config {
                Some(p) => read_json(p)?,
                None => LlmBackendConfig::default(),
            };
            if let Some(dir) = &a.templates {
                cfg.load_templates(dir)?;
            }
            cfg.fill_default_templates();
            let transport: Box<dyn ChatTransport> = match &a.fixtures {
                Some(dir) => Box::new(FixtureTransport::from_dir(dir)?),
                None => Box::new(HttpTransport::from_config(&cfg)),
            };
            let client = LlmClient::new(cfg, transport, lex)?;
            generate_all(&corpus, &client as &dyn Generator, kind, cli.seed)?
        }
    };

    match (&a.out, cli.json) {
        (Some(p), _) => write_text(create(p)?, &a.labels, &output)?,
        (None, false) => write_text(io::stdout().lock(), &a.labels, &output)?,
        (None, true) => write_text(io::sink(), &a.labels, &output)?,
    }
    if let Some(p) = &a.tokens {
        let mut f = create(p)?;
        for u in &output.utterances {
            let rec = TokenRecord { id: u.id.clone(), tokens: tokens_from_annotated(u) };
            serde_json::to_writer(&mut f, &rec)?;
            writeln!(f)?;
        }
        f.flush()?;
    }
    for s in &output.skipped {
        log::info!("skipped {}: {}", s.text_id, s.reason);
    }
    let summary = format!(
        "generated {} {} utterances, skipped {}",
        output.utterances.len(),
        kind.short_name(),
        output.skipped.len()
    );
    if cli.json {
        let mut value = json!({
            "kind": kind.short_name(),
            "generated": output.utterances.len(),
            "skipped": output.skipped.iter().map(|s| json!({"text_id": s.text_id, "reason": s.reason})).collect::<Vec<_>>(),
        });
        if a.out.is_none() {
            let utterances: Vec<_> = output
                .utterances
                .iter()
                .map(|u| {
                    let (text, labels) = serialize_annotated(u);
                    json!({"id": u.id, "level": u.level, "text": text, "labels": labels})
                })
                .collect();
            value["utterances"] = json!(utterances);
        }
        emit(cli, value, String::new)?;
    } else if a.out.is_some() {
        println!("{summary}");
    } else {
        eprintln!("{summary}");
    }
    Ok(ExitCode::SUCCESS)
}

fn write_text(text_out: impl Write, labels: &Option<PathBuf>, output: &BatchOutput) -> Result<(), Failure> {
    match labels {
        Some(p) => write_annotated(text_out, create(p)?, &output.utterances)?,
        None => write_annotated(text_out, io::sink(), &output.utterances)?,
    }
    Ok(())
}

fn synth(cli: &Cli, a: &SynthArgs) -> Outcome {
    let lex = Lexicon::bundled();
    let report = match &a.adapter {
        None => run_adapter(&a.input, &a.outdir, &MockSynthesizer::new(lex))?,
        Some(cmd) => {
            let work = a.outdir.join(".adapter-work");
            let adapter = ExternalAdapter::new(cmd.clone(), work.clone())?;
            let report = run_adapter(&a.input, &a.outdir, &adapter as &dyn Synthesizer);
            let _ = fs::remove_dir_all(&work);
            report?
        }
    };
    emit(cli, json!({"written": report.written.len(), "errors": report.errors}), || {
        let mut s = format!("wrote {} utterances to {}\n", report.written.len(), a.outdir.display());
        for e in &report.errors {
            s.push_str(&format!("failed {}: {}\n", e.id, e.error));
        }
        s
    })?;
    if report.is_success() {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("error: {} requests failed; see {}", report.errors.len(), a.outdir.join("errors.json").display());
        Ok(ExitCode::from(3))
    }
}

fn inject(cli: &Cli, a: &InjectArgs) -> Outcome {
    let wave = read_wav(&a.wav)?;
    let align = Alignment::read(&a.align)?;
    align.check(wave.duration_s())?;
    let ranges = DurationRanges::default();
    let mut rng = rng_from_seed(cli.seed);
    let (out_wave, out_align, op) = match (a.pause_at, a.prolong) {
        (Some(at), None) => {
            let ctx = match a.context {
                PauseContext::Word => DurationContext::PauseWord,
                PauseContext::Phoneme => DurationContext::PausePhoneme,
            };
            let d = a.duration.unwrap_or_else(|| ranges.sample(ctx, &mut rng));
            let (w, al) = insert_pause(&wave, &align, at, d, a.fade_ms)?;
            (w, al, json!({"op": "pause", "at_s": at, "requested_s": d}))
        }
        (None, Some(index)) => {
            let d = a.duration.unwrap_or_else(|| ranges.sample(DurationContext::Prolong, &mut rng));
            let (w, al) = prolong_phone(&wave, &align, index, d)?;
            (w, al, json!({"op": "prolong", "index": index, "requested_s": d}))
        }
        _ => return Err(Failure::Usage("give exactly one of --pause-at and --prolong".into())),
    };
    let out = a.out.clone().unwrap_or_else(|| a.wav.with_extension("out.wav"));
    let out_align_path = a.out_align.clone().unwrap_or_else(|| out.with_extension("align.json"));
    write_wav(&out, &out_wave)?;
    out_align.write(&out_align_path)?;
    let added = out_wave.len() - wave.len();
    let mut value = op;
    value["added_samples"] = json!(added);
    value["added_s"] = json!(out_wave.to_seconds(added));
    value["output"] = json!(out);
    emit(cli, value, || format!("added {added} samples ({:.4} s); wrote {}\n", out_wave.to_seconds(added), out.display()))?;
    Ok(ExitCode::SUCCESS)
}

fn build(cli: &Cli, a: &BuildArgs) -> Outcome {
    let text = fs::read_to_string(&a.config).map_err(|e| Failure::Data(format!("{}: {e}", a.config.display())))?;
    let mut cfg = CorpusConfig::from_json(&text)?;
    if let Some(dir) = &a.output_dir {
        cfg.output_dir = dir.clone();
    }
    if a.override_seed {
        cfg.master_seed = cli.seed;
    }
    let summary = build_corpus(&cfg)?;
    let value = json!({
        "records": summary.records,
        "dysfluent_records": summary.dysfluent_records,
        "fluent_records": summary.fluent_records,
        "per_kind": summary.per_kind,
        "rejects": summary.rejects,
        "manifest": summary.manifest_path,
        "rejects_file": summary.rejects_path,
    });
    emit(cli, value, || {
        let mut s = format!(
            "{} records ({} dysfluent, {} fluent), {} rejects\n",
            summary.records, summary.dysfluent_records, summary.fluent_records, summary.rejects
        );
        for (k, n) in &summary.per_kind {
            s.push_str(&format!("  {k:<9} {n}\n"));
        }
        s.push_str(&format!("manifest: {}\n", summary.manifest_path.display()));
        s
    })?;
    Ok(ExitCode::SUCCESS)
}

fn score(cli: &Cli, a: &ScoreArgs) -> Outcome {
    let reference = read_token_records(BufReader::new(fs::File::open(&a.reference)?))?;
    let hypothesis = read_token_records(BufReader::new(fs::File::open(&a.hyp)?))?;
    let pairs: Vec<_> = pair_records(reference, hypothesis)?.into_iter().map(|(_, r, h)| (r, h)).collect();
    let weights = match &a.weights {
        None => None,
        Some(p) => {
            let raw: BTreeMap<String, f64> = read_json(p)?;
            let mut w = BTreeMap::new();
            for (name, f) in raw {
                w.insert(parse_kind(&name)?, f);
            }
            Some(w)
        }
    };
    let report = detection_scores(&pairs, weights.as_ref())?;
    emit(cli, serde_json::to_value(&report)?, || format_report(&report))?;
    Ok(ExitCode::SUCCESS)
}

fn stats(cli: &Cli, a: &StatsArgs) -> Outcome {
    let records = read_manifest_file(&a.manifest)?;
    let s = corpus_stats(&records);
    emit(cli, serde_json::to_value(&s)?, || {
        let mut out = format!(
            "{} records ({} fluent), {:.4} h, {} speakers\n",
            s.records,
            s.fluent,
            s.total_hours,
            s.speakers.len()
        );
        for (k, ks) in &s.per_kind {
            out.push_str(&format!("  {k:<9} {:>6} records {:>6} utterances {:.4} h\n", ks.records, ks.utterances, ks.hours));
        }
        for (k, hist) in &s.word_classes {
            let parts: Vec<String> = hist.iter().map(|(c, n)| format!("{c} {n}")).collect();
            out.push_str(&format!("  {k} targets: {}\n", parts.join(", ")));
        }
        out
    })?;
    Ok(ExitCode::SUCCESS)
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }
}
