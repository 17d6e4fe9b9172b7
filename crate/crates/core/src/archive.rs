//! On-disk layout of a run directory.
//!
//! A run lives in one directory and is written so that a process killed at
//! any point leaves a loadable state behind: every file is written to a
//! temporary sibling and atomically renamed into place. The layout:
//!
//! ```text
//! run/
//!   manifest.json        what this run is (kind, seed, space, evaluator)
//!   state.json           resumable optimizer state
//!   trials.jsonl         one measured config per line
//!   archs.jsonl          one architecture per line
//!   report.txt           human-readable summary
//!   trace.jsonl          one search step per line (search runs)
//!   result.json          final best of a search run
//!   forests/iter-001.json   importance model snapshot per iteration
//! ```
//!
//! Every read failure — missing file, bad JSON, inconsistent state — comes
//! back as [`Error::Archive`] naming the offending path.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluators::{ArchEntry, ArchSet};
use crate::forest::RandomForest;
use crate::hyperspace::{BpeConfig, HyperSpace, ReferenceConfig};
use crate::mip::{Dataset, MipState, TrialRecord};
use crate::search::TraceEntry;

const MANIFEST_FILE: &str = "manifest.json";
const STATE_FILE: &str = "state.json";
const TRIALS_FILE: &str = "trials.jsonl";
const ARCHS_FILE: &str = "archs.jsonl";
const REPORT_FILE: &str = "report.txt";
const TRACE_FILE: &str = "trace.jsonl";
const RESULT_FILE: &str = "result.json";
const FORESTS_DIR: &str = "forests";

/// What kind of run a directory holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunKind {
    Mip,
    Search,
}

/// How the run's evaluator was constructed, enough to rebuild it on resume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EvaluatorSpec {
    Surrogate {
        m: usize,
        seed: u64,
        noise_scale: f64,
    },
    External {
        command: String,
        timeout_secs: f64,
        parallelism: usize,
        work_dir: PathBuf,
        cache_dir: PathBuf,
    },
}

/// Search-run settings recorded in the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpec {
    pub strategy: String,
    /// Intermediate nodes per cell.
    pub m: usize,
    pub budget: usize,
    /// The budgeted config every architecture is scored under.
    pub config: BpeConfig,
    pub population: usize,
    pub tournament: usize,
    pub learning_rate: f64,
    pub baseline_decay: f64,
}

/// The identity card of a run directory, written once at creation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub kind: RunKind,
    pub seed: u64,
    pub space: HyperSpace,
    pub reference: ReferenceConfig,
    pub evaluator: EvaluatorSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub search: Option<SearchSpec>,
}

/// Final best of a search run, as persisted in `result.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResultFile {
    /// Text encoding of the best genotype (normal line, reduction line).
    pub best_genotype: String,
    pub best_score: f64,
    pub evaluations: usize,
    pub steps: usize,
}

/// A fitted importance model plus the dimensions its features map to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestSnapshot {
    pub iteration: usize,
    /// `feature_dims[i]` is the space dimension behind feature column `i`.
    pub feature_dims: Vec<usize>,
    pub forest: RandomForest,
}

/// Handle on a run directory.
#[derive(Debug, Clone)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    /// Creates a fresh run directory and writes its manifest. Refuses a
    /// directory that already holds a manifest — runs are never silently
    /// overwritten.
    pub fn create(root: impl Into<PathBuf>, manifest: &RunManifest) -> Result<RunDir> {
        let root = root.into();
        fs::create_dir_all(&root)
            .map_err(|e| Error::archive(&root, format!("creating run directory: {e}")))?;
        let manifest_path = root.join(MANIFEST_FILE);
        if manifest_path.exists() {
            return Err(Error::archive(
                &manifest_path,
                "run directory already holds a manifest; refusing to overwrite",
            ));
        }
        let dir = RunDir { root };
        dir.write_json(MANIFEST_FILE, manifest)?;
        Ok(dir)
    }

    /// Opens an existing run directory; its manifest must parse.
    pub fn open(root: impl Into<PathBuf>) -> Result<RunDir> {
        let dir = RunDir { root: root.into() };
        dir.manifest()?;
        Ok(dir)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> Result<RunManifest> {
        self.read_json(MANIFEST_FILE)
    }

    pub fn write_state(&self, state: &MipState) -> Result<()> {
        self.write_json(STATE_FILE, state)
    }

    pub fn read_state(&self) -> Result<MipState> {
        let state: MipState = self.read_json(STATE_FILE)?;
        state
            .validate()
            .map_err(|e| Error::archive(self.root.join(STATE_FILE), e.to_string()))?;
        Ok(state)
    }

    pub fn write_trials(&self, dataset: &Dataset) -> Result<()> {
        self.write_jsonl(TRIALS_FILE, dataset.records())
    }

    pub fn read_trials(&self) -> Result<Dataset> {
        let records: Vec<TrialRecord> = self.read_jsonl(TRIALS_FILE)?;
        let mut dataset = Dataset::default();
        for record in records {
            dataset.push(record);
        }
        Ok(dataset)
    }

    pub fn write_archs(&self, archs: &ArchSet) -> Result<()> {
        self.write_jsonl(ARCHS_FILE, archs.entries())
    }

    pub fn read_archs(&self) -> Result<ArchSet> {
        let entries: Vec<ArchEntry> = self.read_jsonl(ARCHS_FILE)?;
        ArchSet::new(entries)
            .map_err(|e| Error::archive(self.root.join(ARCHS_FILE), e.to_string()))
    }

    pub fn write_report(&self, report: &str) -> Result<()> {
        self.write_text(REPORT_FILE, report)
    }

    pub fn read_report(&self) -> Result<String> {
        self.read_text(REPORT_FILE)
    }

    pub fn write_trace(&self, trace: &[TraceEntry]) -> Result<()> {
        self.write_jsonl(TRACE_FILE, trace)
    }

    pub fn read_trace(&self) -> Result<Vec<TraceEntry>> {
        self.read_jsonl(TRACE_FILE)
    }

    pub fn write_search_result(&self, result: &SearchResultFile) -> Result<()> {
        self.write_json(RESULT_FILE, result)
    }

    pub fn read_search_result(&self) -> Result<SearchResultFile> {
        self.read_json(RESULT_FILE)
    }

    fn forest_file(iteration: usize) -> String {
        format!("{FORESTS_DIR}/iter-{iteration:03}.json")
    }

    pub fn write_forest(
        &self,
        iteration: usize,
        feature_dims: &[usize],
        forest: &RandomForest,
    ) -> Result<()> {
        let snapshot = ForestSnapshot {
            iteration,
            feature_dims: feature_dims.to_vec(),
            forest: forest.clone(),
        };
        self.write_json(&Self::forest_file(iteration), &snapshot)
    }

    /// Whether an importance-model snapshot was written for this iteration.
    /// (Iterations whose fit fell back to uniform importances have none.)
    pub fn has_forest(&self, iteration: usize) -> bool {
        self.root.join(Self::forest_file(iteration)).exists()
    }

    pub fn read_forest(&self, iteration: usize) -> Result<ForestSnapshot> {
        let rel = Self::forest_file(iteration);
        let snapshot: ForestSnapshot = self.read_json(&rel)?;
        if snapshot.iteration != iteration {
            return Err(Error::archive(
                self.root.join(&rel),
                format!(
                    "snapshot says iteration {}, file name says {}",
                    snapshot.iteration, iteration
                ),
            ));
        }
        if snapshot.feature_dims.len() != snapshot.forest.n_features() {
            return Err(Error::archive(
                self.root.join(&rel),
                format!(
                    "{} feature dims for a forest over {} features",
                    snapshot.feature_dims.len(),
                    snapshot.forest.n_features()
                ),
            ));
        }
        Ok(snapshot)
    }

    // ---- raw file plumbing -------------------------------------------------

    /// Writes via a temporary sibling and an atomic rename, so readers never
    /// observe a half-written file.
    fn write_text(&self, rel: &str, contents: &str) -> Result<()> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)
                .map_err(|e| Error::archive(&path, format!("creating parent directory: {e}")))?;
        }
        let file_name = path
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| Error::archive(&path, "path has no file name"))?;
        let tmp = path.with_file_name(format!(".{file_name}.tmp"));
        fs::write(&tmp, contents)
            .map_err(|e| Error::archive(&tmp, format!("writing temporary file: {e}")))?;
        fs::rename(&tmp, &path).map_err(|e| {
            let _ = fs::remove_file(&tmp);
            Error::archive(&path, format!("moving temporary file into place: {e}"))
        })
    }

    fn read_text(&self, rel: &str) -> Result<String> {
        let path = self.root.join(rel);
        fs::read_to_string(&path).map_err(|e| Error::archive(&path, e.to_string()))
    }

    fn write_json<T: Serialize>(&self, rel: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)
            .map_err(|e| Error::archive(self.root.join(rel), e.to_string()))?;
        text.push('\n');
        self.write_text(rel, &text)
    }

    fn read_json<T: DeserializeOwned>(&self, rel: &str) -> Result<T> {
        let text = self.read_text(rel)?;
        serde_json::from_str(&text)
            .map_err(|e| Error::archive(self.root.join(rel), e.to_string()))
    }

    fn write_jsonl<T: Serialize>(&self, rel: &str, items: &[T]) -> Result<()> {
        let mut text = String::new();
        for item in items {
            let line = serde_json::to_string(item)
                .map_err(|e| Error::archive(self.root.join(rel), e.to_string()))?;
            text.push_str(&line);
            text.push('\n');
        }
        self.write_text(rel, &text)
    }

    fn read_jsonl<T: DeserializeOwned>(&self, rel: &str) -> Result<Vec<T>> {
        let text = self.read_text(rel)?;
        let path = self.root.join(rel);
        text.lines()
            .enumerate()
            .filter(|(_, line)| !line.trim().is_empty())
            .map(|(i, line)| {
                serde_json::from_str(line)
                    .map_err(|e| Error::archive(&path, format!("line {}: {e}", i + 1)))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hyperspace::default_preset;

    fn manifest() -> RunManifest {
        let (space, reference) = default_preset();
        RunManifest {
            kind: RunKind::Mip,
            seed: 42,
            space,
            reference,
            evaluator: EvaluatorSpec::Surrogate { m: 4, seed: 42, noise_scale: 0.6 },
            search: None,
        }
    }

    #[test]
    fn create_then_open_round_trips_the_manifest() {
        let tmp = tempfile::tempdir().unwrap();
        let root = tmp.path().join("run");
        let m = manifest();
        RunDir::create(&root, &m).unwrap();
        let dir = RunDir::open(&root).unwrap();
        assert_eq!(dir.manifest().unwrap(), m);
    }

    #[test]
    fn create_refuses_an_existing_run() {
        let tmp = tempfile::tempdir().unwrap();
        let root = tmp.path().join("run");
        RunDir::create(&root, &manifest()).unwrap();
        let err = RunDir::create(&root, &manifest()).unwrap_err();
        assert!(matches!(err, Error::Archive { .. }));
        assert!(err.to_string().contains("refusing to overwrite"));
    }

    #[test]
    fn open_requires_a_parseable_manifest() {
        let tmp = tempfile::tempdir().unwrap();
        assert!(matches!(
            RunDir::open(tmp.path()).unwrap_err(),
            Error::Archive { .. }
        ));
        fs::write(tmp.path().join(MANIFEST_FILE), "{not json").unwrap();
        assert!(matches!(
            RunDir::open(tmp.path()).unwrap_err(),
            Error::Archive { .. }
        ));
    }

    #[test]
    fn corrupt_files_surface_as_archive_errors_naming_the_path() {
        let tmp = tempfile::tempdir().unwrap();
        let root = tmp.path().join("run");
        let dir = RunDir::create(&root, &manifest()).unwrap();
        fs::write(root.join(STATE_FILE), "garbage").unwrap();
        let err = dir.read_state().unwrap_err();
        match err {
            Error::Archive { ref path, .. } => {
                assert!(path.ends_with(STATE_FILE), "{}", path.display())
            }
            other => panic!("expected an archive error, got {other:?}"),
        }
        fs::write(root.join(TRIALS_FILE), "{}\nnot json\n").unwrap();
        let err = dir.read_trials().unwrap_err();
        assert!(err.to_string().contains("line 1") || err.to_string().contains("line 2"));
    }

    #[test]
    fn jsonl_files_keep_one_record_per_line() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = RunDir::create(tmp.path().join("run"), &manifest()).unwrap();
        let mut dataset = Dataset::default();
        for i in 0..3 {
            dataset.push(TrialRecord {
                iteration: 1,
                config: BpeConfig::new(vec![i, 0, 0, 0, 0, 0, 0, 0]),
                r_s: 0.5 + i as f64 * 0.1,
                mean_cost: 1.0,
                objective: 0.25,
                effective_n: 10,
            });
        }
        dir.write_trials(&dataset).unwrap();
        let text = dir.read_text(TRIALS_FILE).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert_eq!(dir.read_trials().unwrap(), dataset);
    }

    #[test]
    fn trace_and_result_round_trip() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = RunDir::create(tmp.path().join("run"), &manifest()).unwrap();
        let trace = vec![
            TraceEntry { step: 1, genotype: "a\nb\n".into(), score: 0.25, evaluations: 1 },
            TraceEntry { step: 2, genotype: "c\nd\n".into(), score: 0.75, evaluations: 2 },
        ];
        dir.write_trace(&trace).unwrap();
        assert_eq!(dir.read_trace().unwrap(), trace);

        let result = SearchResultFile {
            best_genotype: "c\nd\n".into(),
            best_score: 0.75,
            evaluations: 2,
            steps: 2,
        };
        dir.write_search_result(&result).unwrap();
        assert_eq!(dir.read_search_result().unwrap(), result);
    }

    #[test]
    fn forest_snapshots_are_keyed_by_iteration() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = RunDir::create(tmp.path().join("run"), &manifest()).unwrap();
        let examples: Vec<(Vec<f64>, f64)> = (0..12)
            .map(|i| (vec![i as f64, (i % 3) as f64], i as f64 * 0.1))
            .collect();
        let params = crate::forest::ForestParams { n_trees: 3, ..Default::default() };
        let forest = crate::forest::fit(&examples, &params).unwrap();
        dir.write_forest(2, &[0, 4], &forest).unwrap();
        let snapshot = dir.read_forest(2).unwrap();
        assert_eq!(snapshot.iteration, 2);
        assert_eq!(snapshot.feature_dims, vec![0, 4]);
        assert_eq!(snapshot.forest, forest);
        assert!(matches!(
            dir.read_forest(3).unwrap_err(),
            Error::Archive { .. }
        ));
    }

    #[test]
    fn writes_leave_no_temporary_files_behind()  {
        let tmp = tempfile::tempdir().unwrap();
        let root = tmp.path().join("run");
        let dir = RunDir::create(&root, &manifest()).unwrap();
        dir.write_report("hello\n").unwrap();
        dir.write_report("replaced\n").unwrap();
        assert_eq!(dir.read_report().unwrap(), "replaced\n");
        let leftovers: Vec<_> = fs::read_dir(&root)
            .unwrap()
            .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
            .filter(|n| n.ends_with(".tmp"))
            .collect();
        assert!(leftovers.is_empty(), "temporary files left behind: {leftovers:?}");
    }

    #[test]
    fn evaluator_specs_tag_their_type() {
        let spec = EvaluatorSpec::External {
            command: "./run.sh".into(),
            timeout_secs: 60.0,
            parallelism: 2,
            work_dir: "work".into(),
            cache_dir: "cache".into(),
        };
        let json = serde_json::to_string(&spec).unwrap();
        assert!(json.contains("\"type\":\"external\""));
        assert_eq!(serde_json::from_str::<EvaluatorSpec>(&json).unwrap(), spec);
    }
}
