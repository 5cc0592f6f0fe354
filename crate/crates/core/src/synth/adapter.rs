//! The adapter file contract.
//!
//! Input is JSONL, one [`SynthRequest`] per line. For every id the adapter
//! writes `<id>.wav` (PCM16 mono) and `<id>.align.json`. On any failure it
//! also writes `errors.json` (`{"errors": [{"id", "error"}]}`) and exits
//! nonzero. Adapters are run as `<command...> --input <jsonl> --outdir <dir>`.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::atomic::{AtomicUsize, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{MockSynthesizer, SynthError, SynthRequest, SynthResult, Synthesizer};
use crate::audio::{read_wav, write_wav, Alignment};
use crate::lexicon::Lexicon;

pub const ERROR_REPORT_FILE: &str = "errors.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdapterFailure {
    pub id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AdapterReport {
    #[serde(skip)]
    pub written: Vec<String>,
    pub errors: Vec<AdapterFailure>,
}

impl AdapterReport {
    pub fn is_success(&self) -> bool {
        self.errors.is_empty()
    }
}

/// Parses adapter input. Lines that do not parse become failures keyed by
/// their `id` field when one can be found, else by `line-<n>`.
pub fn read_requests(input: &Path) -> Result<(Vec<SynthRequest>, Vec<AdapterFailure>), SynthError> {
    let reader = BufReader::new(fs::File::open(input)?);
    let mut requests = Vec::new();
    let mut failures = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<SynthRequest>(&line) {
            Ok(r) if valid_id(&r.id) => requests.push(r),
            Ok(r) => failures.push(AdapterFailure { id: r.id, error: "id is not a valid file name".into() }),
            Err(e) => {
                let id = serde_json::from_str::<serde_json::Value>(&line)
                    .ok()
                    .and_then(|v| v.get("id").and_then(|id| id.as_str()).map(str::to_string))
                    .unwrap_or_else(|| format!("line-{}", n + 1));
                failures.push(AdapterFailure { id, error: format!("malformed request: {e}") });
            }
        }
    }
    Ok((requests, failures))
}

fn valid_id(id: &str) -> bool {
    !id.is_empty() && id != "." && id != ".." && !id.contains(['/', '\\', '\0'])
}

fn write_outputs(outdir: &Path, id: &str, out: &SynthResult) -> Result<(), String> {
    let (w, a) = out.as_ref().map_err(Clone::clone)?;
    write_wav(outdir.join(format!("{id}.wav")), w).map_err(|e| e.to_string())?;
    a.write(outdir.join(format!("{id}.align.json"))).map_err(|e| e.to_string())
}

/// Serves the adapter contract with any synthesizer: reads `input`, writes
/// outputs to `outdir` and, when something failed, the error report.
pub fn run_adapter(input: &Path, outdir: &Path, synth: &dyn Synthesizer) -> Result<AdapterReport, SynthError> {
    fs::create_dir_all(outdir)?;
    let (requests, mut errors) = read_requests(input)?;
    let results = synth.synthesize_batch(&requests)?;
    let written: Vec<Result<String, AdapterFailure>> = requests
        .par_iter()
        .zip(results)
        .map(|(r, out)| {
            write_outputs(outdir, &r.id, &out)
                .map(|_| r.id.clone())
                .map_err(|error| AdapterFailure { id: r.id.clone(), error })
        })
        .collect();
    let mut report = AdapterReport::default();
    for w in written {
        match w {
            Ok(id) => report.written.push(id),
            Err(f) => errors.push(f),
        }
    }
    report.errors = errors;
    if !report.is_success() {
        let file = BufWriter::new(fs::File::create(outdir.join(ERROR_REPORT_FILE))?);
        serde_json::to_writer_pretty(file, &report).map_err(|e| SynthError::Io(e.to_string()))?;
    }
    Ok(report)
}

/// The mock synthesizer behind the adapter contract.
pub fn run_mock_adapter(input: &Path, outdir: &Path, lex: &Lexicon) -> Result<AdapterReport, SynthError> {
    run_adapter(input, outdir, &MockSynthesizer::new(lex))
}

/// An external adapter command.
#[derive(Debug)]
pub struct ExternalAdapter {
    pub command: Vec<String>,
    /// Batches are staged in numbered subdirectories here.
    pub work_dir: PathBuf,
    /// Keep staged batches after reading them back.
    pub keep_work: bool,
    batches: AtomicUsize,
}

impl ExternalAdapter {
    pub fn new(command: Vec<String>, work_dir: PathBuf) -> Result<Self, SynthError> {
        if command.is_empty() {
            return Err(SynthError::AdapterFailure("empty adapter command".into()));
        }
        Ok(ExternalAdapter { command, work_dir, keep_work: false, batches: AtomicUsize::new(0) })
    }

    fn read_back(outdir: &Path, id: &str) -> SynthResult {
        let w = read_wav(outdir.join(format!("{id}.wav"))).map_err(|e| format!("adapter output: {e}"))?;
        let a = Alignment::read(outdir.join(format!("{id}.align.json"))).map_err(|e| format!("adapter output: {e}"))?;
        a.check(w.duration_s()).map_err(|e| format!("adapter output: {e}"))?;
        Ok((w, a))
    }
}

impl Synthesizer for ExternalAdapter {
    fn synthesize_batch(&self, requests: &[SynthRequest]) -> Result<Vec<SynthResult>, SynthError> {
        if requests.is_empty() {
            return Ok(Vec::new());
        }
        let n = self.batches.fetch_add(1, Ordering::SeqCst);
        let dir = self.work_dir.join(format!("batch-{n:05}"));
        let outdir = dir.join("out");
        fs::create_dir_all(&outdir)?;
        let input = dir.join("input.jsonl");
        let mut f = BufWriter::new(fs::File::create(&input)?);
        for r in requests {
            serde_json::to_writer(&mut f, r).map_err(|e| SynthError::Io(e.to_string()))?;
            f.write_all(b"\n")?;
        }
        f.flush()?;
        drop(f);

        let status = Command::new(&self.command[0])
            .args(&self.command[1..])
            .arg("--input")
            .arg(&input)
            .arg("--outdir")
            .arg(&outdir)
            .status()
            .map_err(|e| SynthError::AdapterFailure(format!("cannot run {}: {e}", self.command[0])))?;

        let mut reported = std::collections::HashMap::new();
        if !status.success() {
            let report_path = outdir.join(ERROR_REPORT_FILE);
            let text = fs::read_to_string(&report_path).map_err(|_| {
                SynthError::AdapterFailure(format!("adapter exited with {status} and wrote no error report"))
            })?;
            let report: AdapterReport = serde_json::from_str(&text)
                .map_err(|e| SynthError::AdapterFailure(format!("unreadable error report: {e}")))?;
            for f in report.errors {
                reported.insert(f.id, f.error);
            }
        }
        let results = requests
            .iter()
            .map(|r| match reported.get(&r.id) {
                Some(e) => Err(format!("adapter: {e}")),
                None => Self::read_back(&outdir, &r.id),
            })
            .collect();
        if !self.keep_work {
            let _ = fs::remove_dir_all(&dir);
        }
        Ok(results)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotation::Level;

    fn req(id: &str, text: &str, level: Level) -> SynthRequest {
        SynthRequest { id: id.into(), text_or_phones: text.into(), level, speaker: 1 }
    }

    #[test]
    fn mock_adapter_writes_files_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("in.jsonl");
        let lines = [
            serde_json::to_string(&req("a", "the cat", Level::Word)).unwrap(),
            serde_json::to_string(&req("b", "K AE T", Level::Phoneme)).unwrap(),
            r#"{"id": "c", "text_or_phones": 3}"#.to_string(),
            serde_json::to_string(&req("d", "zzqx", Level::Word)).unwrap(),
            "not json".to_string(),
        ];
        fs::write(&input, lines.join("\n")).unwrap();
        let out = dir.path().join("out");
        let report = run_mock_adapter(&input, &out, Lexicon::bundled()).unwrap();
        assert_eq!(report.written, ["a", "b"]);
        let ids: Vec<&str> = report.errors.iter().map(|e| e.id.as_str()).collect();
        assert_eq!(ids, ["c", "line-5", "d"]);
        assert!(out.join("a.wav").exists() && out.join("b.align.json").exists());
        let saved: AdapterReport = serde_json::from_str(&fs::read_to_string(out.join(ERROR_REPORT_FILE)).unwrap()).unwrap();
        assert_eq!(saved.errors, report.errors);
    }

    #[test]
    fn empty_input_writes_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("in.jsonl");
        fs::write(&input, "").unwrap();
        let out = dir.path().join("out");
        let report = run_mock_adapter(&input, &out, Lexicon::bundled()).unwrap();
        assert!(report.is_success());
        assert_eq!(fs::read_dir(&out).unwrap().count(), 0);
    }

    #[cfg(unix)]
    #[test]
    fn external_failure_without_report_is_fatal() {
        let dir = tempfile::tempdir().unwrap();
        let adapter = ExternalAdapter::new(vec!["false".into()], dir.path().to_path_buf()).unwrap();
        let err = adapter.synthesize_batch(&[req("a", "the cat", Level::Word)]).unwrap_err();
        assert!(matches!(err, SynthError::AdapterFailure(_)));
        let missing = ExternalAdapter::new(vec!["/nonexistent/adapter".into()], dir.path().to_path_buf()).unwrap();
        assert!(missing.synthesize_batch(&[req("a", "the cat", Level::Word)]).is_err());
    }

    #[cfg(unix)]
    #[test]
    fn external_success_without_outputs_is_per_id_failure() {
        let dir = tempfile::tempdir().unwrap();
        let adapter = ExternalAdapter::new(vec!["true".into()], dir.path().to_path_buf()).unwrap();
        let results = adapter.synthesize_batch(&[req("a", "the cat", Level::Word)]).unwrap();
        assert!(results[0].is_err());
    }
}
