//! Batch runs over a JSON-lines input with a resumable run directory.
//!
//! Layout of a run directory:
//!
//! ```text
//! manifest.json    run identity, per-response status, aggregate report
//! claims.jsonl     one ClaimsStage per response
//! evidence.jsonl   one EvidenceStage per response
//! verdicts.jsonl   one VerdictsStage per response
//! records.jsonl    one EvaluationRecord per response
//! ```
//!
//! Stage lines are appended as responses finish and the record line is
//! written (and synced) last, so a response with a record is complete. When
//! the run ends every stage file is rewritten in input order.

use std::collections::{HashMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use tracing::{info, warn};

use super::config::ConfigSnapshot;
use super::engine::{EvaluationRecord, Evaluator, ResponseInput, ResponseOutcome, SCHEMA_VERSION};
use super::report::{aggregate, AggregateReport};
use crate::error::PipelineError;
use crate::scoring::{parse_ground_truth, GroundTruthRow, GroundTruthWarning};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CLAIMS_FILE: &str = "claims.jsonl";
pub const EVIDENCE_FILE: &str = "evidence.jsonl";
pub const VERDICTS_FILE: &str = "verdicts.jsonl";
pub const RECORDS_FILE: &str = "records.jsonl";

const STAGE_FILES: [&str; 4] = [CLAIMS_FILE, EVIDENCE_FILE, VERDICTS_FILE, RECORDS_FILE];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputWarning {
    pub line: usize,
    pub reason: String,
}

fn field<'a>(obj: &'a serde_json::Map<String, Value>, names: &[&str]) -> Option<&'a Value> {
    names.iter().find_map(|n| obj.get(*n))
}

fn parse_row(line: &str) -> Result<ResponseInput, String> {
    let value: Value = serde_json::from_str(line).map_err(|e| format!("invalid json: {e}"))?;
    let obj = value.as_object().ok_or("row is not a json object")?;
    let id = match obj.get("id") {
        Some(Value::String(s)) if !s.trim().is_empty() => s.clone(),
        Some(Value::Number(n)) => n.to_string(),
        _ => return Err("missing or empty `id`".into()),
    };
    let text = |names: &[&str], what: &str| -> Result<String, String> {
        match field(obj, names) {
            Some(Value::String(s)) => Ok(s.clone()),
            _ => Err(format!("missing string field `{what}`")),
        }
    };
    let question = text(&["question", "prompt"], "question")?;
    let response = text(&["response", "output", "answer"], "response")?;
    let benchmark_tag = match field(obj, &["benchmark_tag", "benchmark"]) {
        Some(Value::String(s)) if !s.trim().is_empty() => Some(s.clone()),
        _ => None,
    };
    Ok(ResponseInput {
        id,
        question,
        response,
        benchmark_tag,
    })
}

/// Parses JSON-lines input rows `{id, question, response, benchmark_tag?}`.
/// `prompt` is accepted for `question`, `output` or `answer` for `response`
/// and `benchmark` for `benchmark_tag`. Malformed rows become warnings;
/// a repeated id is an error.
pub fn parse_input(text: &str) -> Result<(Vec<ResponseInput>, Vec<InputWarning>), PipelineError> {
    let mut rows = Vec::new();
    let mut warnings = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match parse_row(line) {
            Ok(row) => {
                if !seen.insert(row.id.clone()) {
                    return Err(PipelineError::DuplicateId(row.id));
                }
                rows.push(row);
            }
            Err(reason) => warnings.push(InputWarning { line: idx + 1, reason }),
        }
    }
    Ok((rows, warnings))
}

pub fn read_input(path: impl AsRef<Path>) -> Result<(Vec<ResponseInput>, Vec<InputWarning>), PipelineError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
    parse_input(&text)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GroundTruth {
    pub rows: Vec<GroundTruthRow>,
    pub warnings: Vec<GroundTruthWarning>,
}

impl GroundTruth {
    pub fn parse(text: &str) -> Self {
        let (rows, warnings) = parse_ground_truth(text);
        Self { rows, warnings }
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        Ok(Self::parse(&text))
    }

    pub fn k_prime(&self, id: &str) -> Option<u64> {
        self.rows.iter().find(|r| r.id == id).map(|r| r.k_prime)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseState {
    Pending,
    Complete,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseStatus {
    pub id: String,
    pub status: ResponseState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub run_id: String,
    pub input_digest: String,
    pub config_digest: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth_digest: Option<String>,
    pub config: ConfigSnapshot,
    pub responses: Vec<ResponseStatus>,
    #[serde(default)]
    pub input_warnings: Vec<InputWarning>,
    #[serde(default)]
    pub ground_truth_warnings: Vec<GroundTruthWarning>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<AggregateReport>,
}

impl RunManifest {
    pub fn load(run_dir: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let path = run_dir.as_ref().join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| PipelineError::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| PipelineError::json(&path, e))
    }

    /// SHA-256 of the manifest's canonical JSON. Manifests carry no
    /// timestamps, so equal runs have equal digests.
    pub fn digest(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("manifest serializes"))
    }

    pub fn count(&self, state: ResponseState) -> usize {
        self.responses.iter().filter(|r| r.status == state).count()
    }

    fn save(&self, run_dir: &Path) -> Result<(), PipelineError> {
        let bytes = serde_json::to_vec_pretty(self).expect("manifest serializes");
        write_atomic(&run_dir.join(MANIFEST_FILE), &bytes)
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn digest_of<T: Serialize>(value: &T) -> String {
    sha256_hex(&serde_json::to_vec(value).expect("value serializes"))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| PipelineError::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| PipelineError::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| PipelineError::io(path, e))?;
    tmp.persist(path).map_err(|e| PipelineError::io(path, e.error))?;
    Ok(())
}

/// Lines of a JSON-lines file keyed by their `id`, in file order with later
/// duplicates replacing earlier ones. Lines that do not parse (such as a
/// line torn by a crash) are skipped.
pub fn read_jsonl_by_id(path: &Path) -> Result<Vec<(String, String)>, PipelineError> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(PipelineError::io(path, e)),
    };
    let mut order: Vec<String> = Vec::new();
    let mut lines: HashMap<String, String> = HashMap::new();
    for line in text.lines() {
        let Ok(value) = serde_json::from_str::<Value>(line) else {
            if !line.trim().is_empty() {
                warn!(file = %path.display(), "skipping unreadable line");
            }
            continue;
        };
        let Some(id) = value.get("id").and_then(Value::as_str) else {
            continue;
        };
        if lines.insert(id.to_string(), line.to_string()).is_none() {
            order.push(id.to_string());
        }
    }
    Ok(order
        .into_iter()
        .map(|id| {
            let line = lines.remove(&id).expect("id present");
            (id, line)
        })
        .collect())
}

/// Records of a run directory in file order.
pub fn read_records(run_dir: impl AsRef<Path>) -> Result<Vec<EvaluationRecord>, PipelineError> {
    let path = run_dir.as_ref().join(RECORDS_FILE);
    read_jsonl_by_id(&path)?
        .into_iter()
        .map(|(_, line)| serde_json::from_str(&line).map_err(|e| PipelineError::json(&path, e)))
        .collect()
}

/// Opens a file for appending, first terminating a torn last line.
fn open_append(path: &Path) -> Result<File, PipelineError> {
    let mut f = OpenOptions::new()
        .create(true)
        .read(true)
        .append(true)
        .open(path)
        .map_err(|e| PipelineError::io(path, e))?;
    let len = f.metadata().map_err(|e| PipelineError::io(path, e))?.len();
    if len > 0 {
        let mut last = [0u8; 1];
        f.seek(SeekFrom::Start(len - 1))
            .map_err(|e| PipelineError::io(path, e))?;
        f.read_exact(&mut last).map_err(|e| PipelineError::io(path, e))?;
        if last[0] != b'\n' {
            f.write_all(b"\n").map_err(|e| PipelineError::io(path, e))?;
        }
    }
    Ok(f)
}

struct StageWriters {
    dir: PathBuf,
    files: Vec<File>,
}

impl StageWriters {
    fn open(dir: &Path) -> Result<Self, PipelineError> {
        Ok(Self {
            dir: dir.to_path_buf(),
            files: STAGE_FILES
                .iter()
                .map(|f| open_append(&dir.join(f)))
                .collect::<Result<_, _>>()?,
        })
    }

    /// Appends the stage documents; the record goes last and is synced.
    fn append(&mut self, outcome: &ResponseOutcome) -> Result<(), PipelineError> {
        let lines = [
            serde_json::to_string(&outcome.claims),
            serde_json::to_string(&outcome.evidence),
            serde_json::to_string(&outcome.verdicts),
            serde_json::to_string(&outcome.record),
        ];
        for ((file, name), line) in self.files.iter_mut().zip(STAGE_FILES).zip(lines) {
            let path = self.dir.join(name);
            let mut line = line.map_err(|e| PipelineError::json(&path, e))?;
            line.push('\n');
            file.write_all(line.as_bytes())
                .map_err(|e| PipelineError::io(&path, e))?;
        }
        let path = self.dir.join(RECORDS_FILE);
        self.files[3].sync_data().map_err(|e| PipelineError::io(&path, e))
    }
}

/// Rewrites a stage file with one line per id, in `order`.
fn compact(path: &Path, order: &[String]) -> Result<(), PipelineError> {
    let mut by_id: HashMap<String, String> = read_jsonl_by_id(path)?.into_iter().collect();
    let mut out = BufWriter::new(Vec::new());
    for id in order {
        if let Some(line) = by_id.remove(id) {
            writeln!(out, "{line}").expect("write to memory");
        }
    }
    write_atomic(path, &out.into_inner().expect("flush to memory"))
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Stop starting new responses once this many have been evaluated in
    /// this invocation; the run ends with [`PipelineError::Interrupted`]
    /// and can be resumed.
    pub stop_after: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub manifest: RunManifest,
    /// Responses evaluated in this invocation.
    pub evaluated: usize,
    /// Responses taken from an earlier invocation.
    pub reused: usize,
}

#[derive(Serialize)]
struct RunIdentity<'a> {
    input_digest: &'a str,
    config_digest: &'a str,
    ground_truth_digest: Option<&'a str>,
}

/// Evaluates every response without a finished record in `run_dir`.
pub fn run_batch(
    evaluator: &Evaluator,
    inputs: &[ResponseInput],
    input_warnings: Vec<InputWarning>,
    ground_truth: Option<&GroundTruth>,
    run_dir: impl AsRef<Path>,
    options: &RunOptions,
) -> Result<RunSummary, PipelineError> {
    let run_dir = run_dir.as_ref();
    fs::create_dir_all(run_dir).map_err(|e| PipelineError::io(run_dir, e))?;
    let mut seen = HashSet::new();
    for input in inputs {
        if !seen.insert(input.id.as_str()) {
            return Err(PipelineError::DuplicateId(input.id.clone()));
        }
    }

    let config = evaluator.config().snapshot();
    let input_digest = digest_of(&inputs);
    let config_digest = digest_of(&config);
    let ground_truth_digest = ground_truth.map(|g| digest_of(&g.rows));
    let run_id = digest_of(&RunIdentity {
        input_digest: &input_digest,
        config_digest: &config_digest,
        ground_truth_digest: ground_truth_digest.as_deref(),
    })[..16]
        .to_string();

    if run_dir.join(MANIFEST_FILE).exists() {
        let previous = RunManifest::load(run_dir)?;
        if previous.run_id != run_id {
            let what = if previous.input_digest != input_digest {
                "input differs"
            } else if previous.config_digest != config_digest {
                "configuration differs"
            } else {
                "ground truth differs"
            };
            return Err(PipelineError::RunMismatch(format!(
                "{what} (existing run {})",
                previous.run_id
            )));
        }
    }

    let wanted: HashSet<&str> = inputs.iter().map(|i| i.id.as_str()).collect();
    let done: HashSet<String> = read_records(run_dir)?
        .into_iter()
        .map(|r| r.id)
        .filter(|id| wanted.contains(id.as_str()))
        .collect();
    let pending: Vec<&ResponseInput> = inputs.iter().filter(|i| !done.contains(&i.id)).collect();
    info!(run_id = %run_id, total = inputs.len(), reused = done.len(), pending = pending.len(), "starting run");

    let manifest = Mutex::new(RunManifest {
        schema_version: SCHEMA_VERSION,
        run_id,
        input_digest,
        config_digest,
        ground_truth_digest,
        config,
        responses: inputs
            .iter()
            .map(|i| ResponseStatus {
                id: i.id.clone(),
                status: if done.contains(&i.id) {
                    ResponseState::Complete
                } else {
                    ResponseState::Pending
                },
                error: None,
            })
            .collect(),
        input_warnings,
        ground_truth_warnings: ground_truth.map(|g| g.warnings.clone()).unwrap_or_default(),
        report: None,
    });
    let position: HashMap<&str, usize> = inputs.iter().enumerate().map(|(i, r)| (r.id.as_str(), i)).collect();
    manifest.lock().unwrap().save(run_dir)?;

    let writers = Mutex::new(StageWriters::open(run_dir)?);
    let started = AtomicUsize::new(0);
    let evaluated = AtomicUsize::new(0);
    let halted = AtomicUsize::new(0);

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(evaluator.config().parallelism)
        .build()
        .map_err(|e| PipelineError::io(run_dir, std::io::Error::other(e)))?;

    let io_result: Result<(), PipelineError> = pool.install(|| {
        pending.par_iter().try_for_each(|input| {
            if let Some(limit) = options.stop_after {
                if started.fetch_add(1, Ordering::SeqCst) >= limit {
                    halted.fetch_add(1, Ordering::SeqCst);
                    return Ok(());
                }
            }
            let k_prime = ground_truth.and_then(|g| g.k_prime(&input.id));
            let slot = position[input.id.as_str()];
            match evaluator.evaluate(input, k_prime) {
                Ok(outcome) => {
                    writers.lock().unwrap().append(&outcome)?;
                    evaluated.fetch_add(1, Ordering::SeqCst);
                    let mut m = manifest.lock().unwrap();
                    m.responses[slot].status = ResponseState::Complete;
                    m.responses[slot].error = None;
                    m.save(run_dir)
                }
                Err(e @ (PipelineError::Io { .. } | PipelineError::Json { .. })) => Err(e),
                Err(e) => {
                    warn!(id = %input.id, error = %e, "response failed");
                    let mut m = manifest.lock().unwrap();
                    m.responses[slot].status = ResponseState::Failed;
                    m.responses[slot].error = Some(e.to_string());
                    m.save(run_dir)
                }
            }
        })
    });
    drop(writers);
    io_result?;

    let mut manifest = manifest.into_inner().unwrap();
    let evaluated = evaluated.into_inner();
    if halted.into_inner() > 0 {
        manifest.save(run_dir)?;
        return Err(PipelineError::Interrupted(evaluated));
    }

    let order: Vec<String> = inputs.iter().map(|i| i.id.clone()).collect();
    for name in STAGE_FILES {
        compact(&run_dir.join(name), &order)?;
    }
    let records = read_records(run_dir)?;
    manifest.report = Some(aggregate(
        &records,
        &manifest.responses,
        evaluator.config(),
        ground_truth,
    ));
    manifest.save(run_dir)?;
    Ok(RunSummary {
        manifest,
        evaluated,
        reused: done.len(),
    })
}
