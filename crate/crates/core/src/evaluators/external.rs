//! An evaluator that shells out to a user-supplied command per architecture.
//!
//! Protocol: for each architecture, a fresh work directory receives
//! `genotype.txt` (the two-line genotype text) and `bpe.cfg` (`name = label`
//! lines for the config under test). The command runs via `sh -c` with the
//! work directory as its working directory and in `$BPE_WORK_DIR`, and must
//! write one decimal number to `result.txt` there. Results are cached by a
//! content hash of `(config, genotype)`, so re-runs and resumed runs never
//! pay for a completed measurement twice.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ArchOutcome, ArchSet, EvalResult, Evaluator};
use crate::cellspace::encode;
use crate::error::{Error, Result};
use crate::hyperspace::{config_to_text, BpeConfig, HyperSpace};

/// Name of the environment variable carrying the work directory path.
pub const WORK_DIR_ENV: &str = "BPE_WORK_DIR";

/// How an external measurement command is invoked.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalProtocol {
    /// Shell command run once per architecture (via `sh -c`).
    pub command: String,
    /// Parent directory for per-architecture work directories.
    pub work_dir: PathBuf,
    /// Directory holding cached results.
    pub cache_dir: PathBuf,
    /// Wall-clock limit per command invocation, in seconds.
    pub timeout_secs: f64,
    /// Maximum concurrent command invocations.
    pub parallelism: usize,
}

impl ExternalProtocol {
    pub fn validate(&self) -> Result<()> {
        if self.command.trim().is_empty() {
            return Err(Error::Invalid("external command is empty".into()));
        }
        if !(self.timeout_secs > 0.0) || !self.timeout_secs.is_finite() {
            return Err(Error::Invalid(format!(
                "timeout must be positive, got {}",
                self.timeout_secs
            )));
        }
        if self.parallelism == 0 {
            return Err(Error::Invalid("parallelism must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct CacheEntry {
    score: f64,
    elapsed_secs: f64,
}

/// Runs the external command per architecture with bounded parallelism,
/// per-architecture failure isolation, and content-addressed caching.
#[derive(Debug, Clone)]
pub struct ExternalEvaluator {
    space: HyperSpace,
    protocol: ExternalProtocol,
}

impl ExternalEvaluator {
    pub fn new(space: HyperSpace, protocol: ExternalProtocol) -> Result<Self> {
        protocol.validate()?;
        Ok(ExternalEvaluator { space, protocol })
    }

    pub fn protocol(&self) -> &ExternalProtocol {
        &self.protocol
    }

    fn cache_key(config_text: &str, genotype_text: &str) -> String {
        let mut hasher = Sha256::new();
        hasher.update(config_text.as_bytes());
        hasher.update([0u8]);
        hasher.update(genotype_text.as_bytes());
        hasher
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    fn read_cache(&self, key: &str) -> Option<CacheEntry> {
        let path = self.protocol.cache_dir.join(format!("{key}.json"));
        let text = fs::read_to_string(path).ok()?;
        // A corrupt cache entry is treated as a miss and rewritten.
        serde_json::from_str(&text).ok()
    }

    fn write_cache(&self, key: &str, entry: &CacheEntry) -> Result<()> {
        let path = self.protocol.cache_dir.join(format!("{key}.json"));
        let tmp = self.protocol.cache_dir.join(format!(".{key}.tmp"));
        fs::write(&tmp, serde_json::to_string(entry).expect("cache entry serializes"))?;
        fs::rename(&tmp, &path)?;
        Ok(())
    }

    /// Runs one architecture; returns its outcome and the seconds it cost.
    fn run_one(&self, config_text: &str, genotype_text: &str) -> (ArchOutcome, f64) {
        let key = Self::cache_key(config_text, genotype_text);
        if let Some(hit) = self.read_cache(&key) {
            return (ArchOutcome::Score(hit.score), hit.elapsed_secs);
        }
        let work = self.protocol.work_dir.join(&key[..16]);
        let started = Instant::now();
        match self.invoke(&work, config_text, genotype_text, started) {
            Ok(score) => {
                let elapsed = started.elapsed().as_secs_f64().max(1e-9);
                // Failing to persist the cache must not fail the measurement.
                let _ = self.write_cache(&key, &CacheEntry { score, elapsed_secs: elapsed });
                (ArchOutcome::Score(score), elapsed)
            }
            Err(reason) => {
                let elapsed = started.elapsed().as_secs_f64().max(1e-9);
                (ArchOutcome::Failed { reason }, elapsed)
            }
        }
    }

    /// The un-cached invocation; any failure comes back as a reason string.
    fn invoke(
        &self,
        work: &Path,
        config_text: &str,
        genotype_text: &str,
        started: Instant,
    ) -> std::result::Result<f64, String> {
        fs::create_dir_all(work).map_err(|e| format!("creating work dir: {e}"))?;
        let result_path = work.join("result.txt");
        let _ = fs::remove_file(&result_path);
        fs::write(work.join("genotype.txt"), genotype_text)
            .map_err(|e| format!("writing genotype.txt: {e}"))?;
        fs::write(work.join("bpe.cfg"), config_text)
            .map_err(|e| format!("writing bpe.cfg: {e}"))?;
        let abs_work = std::path::absolute(work).map_err(|e| format!("resolving work dir: {e}"))?;

        let mut child = Command::new("sh")
            .arg("-c")
            .arg(&self.protocol.command)
            .current_dir(work)
            .env(WORK_DIR_ENV, &abs_work)
            .stdin(Stdio::null())
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| format!("spawning command: {e}"))?;

        let timeout = Duration::from_secs_f64(self.protocol.timeout_secs);
        let status = loop {
            match child.try_wait() {
                Ok(Some(status)) => break status,
                Ok(None) => {
                    if started.elapsed() >= timeout {
                        let _ = child.kill();
                        let _ = child.wait();
                        return Err(format!(
                            "timeout after {:.3}s",
                            self.protocol.timeout_secs
                        ));
                    }
                    std::thread::sleep(Duration::from_millis(2));
                }
                Err(e) => {
                    let _ = child.kill();
                    let _ = child.wait();
                    return Err(format!("waiting for command: {e}"));
                }
            }
        };
        if !status.success() {
            return Err(format!("command failed with {status}"));
        }
        let text = fs::read_to_string(&result_path)
            .map_err(|e| format!("reading result.txt: {e}"))?;
        let token = text
            .split_whitespace()
            .next()
            .ok_or_else(|| "result.txt is empty".to_string())?;
        let score: f64 = token
            .parse()
            .map_err(|_| format!("result.txt does not start with a number: {token:?}"))?;
        if !score.is_finite() {
            return Err(format!("result.txt holds a non-finite score: {score}"));
        }
        Ok(score)
    }
}

impl Evaluator for ExternalEvaluator {
    fn evaluate(&self, config: &BpeConfig, archs: &ArchSet) -> Result<EvalResult> {
        self.space.validate_config(config)?;
        fs::create_dir_all(&self.protocol.cache_dir)?;
        fs::create_dir_all(&self.protocol.work_dir)?;
        let config_text = config_to_text(&self.space, config);
        let genotype_texts: Vec<String> =
            archs.iter().map(|e| encode(&e.genotype)).collect();

        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.protocol.parallelism)
            .build()
            .map_err(|e| Error::Eval(format!("building worker pool: {e}")))?;
        let runs: Vec<(ArchOutcome, f64)> = pool.install(|| {
            genotype_texts
                .par_iter()
                .map(|text| self.run_one(&config_text, text))
                .collect()
        });

        let mean_cost = runs.iter().map(|(_, secs)| *secs).sum::<f64>() / runs.len() as f64;
        let outcomes: Vec<ArchOutcome> = runs.into_iter().map(|(o, _)| o).collect();
        if outcomes.iter().all(ArchOutcome::is_failed) {
            let first = outcomes.iter().find_map(|o| match o {
                ArchOutcome::Failed { reason } => Some(reason.clone()),
                ArchOutcome::Score(_) => None,
            });
            return Err(Error::Eval(format!(
                "every architecture failed; first failure: {}",
                first.unwrap_or_default()
            )));
        }
        EvalResult::new(outcomes, mean_cost)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cellspace::{CellGenotype, Genotype, OpKind};
    use crate::evaluators::ArchEntry;
    use crate::hyperspace::default_preset;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn evaluator(dir: &Path, command: &str, timeout: f64, parallelism: usize) -> ExternalEvaluator {
        let (space, _) = default_preset();
        ExternalEvaluator::new(
            space,
            ExternalProtocol {
                command: command.into(),
                work_dir: dir.join("work"),
                cache_dir: dir.join("cache"),
                timeout_secs: timeout,
                parallelism,
            },
        )
        .unwrap()
    }

    fn config() -> BpeConfig {
        let (space, _) = default_preset();
        crate::hyperspace::bpe1_config(&space).unwrap()
    }

    fn archs(n: usize) -> ArchSet {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        ArchSet::sample(2, n, &mut rng).unwrap()
    }

    #[test]
    fn a_successful_command_scores_every_architecture() {
        let dir = tempfile::tempdir().unwrap();
        let eval = evaluator(dir.path(), "echo 0.75 > result.txt", 10.0, 1);
        let result = eval.evaluate(&config(), &archs(3)).unwrap();
        assert_eq!(result.effective_n(), 3);
        for o in result.outcomes() {
            assert_eq!(o.score(), Some(0.75));
        }
        assert!(result.mean_cost() > 0.0);
    }

    #[test]
    fn the_command_sees_its_inputs_and_the_env_var() {
        let dir = tempfile::tempdir().unwrap();
        // Score = number of bytes in genotype.txt, read via $BPE_WORK_DIR to
        // prove the env var points at the live work directory.
        let eval = evaluator(
            dir.path(),
            "test -f bpe.cfg && wc -c < \"$BPE_WORK_DIR/genotype.txt\" > result.txt",
            10.0,
            1,
        );
        let set = archs(2);
        let result = eval.evaluate(&config(), &set).unwrap();
        for (outcome, entry) in result.outcomes().iter().zip(set.iter()) {
            let expected = encode(&entry.genotype).len() as f64;
            assert_eq!(outcome.score(), Some(expected));
        }
    }

    #[test]
    fn timeouts_kill_the_command_and_fail_fast() {
        let dir = tempfile::tempdir().unwrap();
        let eval = evaluator(dir.path(), "sleep 30", 0.2, 1);
        let started = Instant::now();
        let err = eval.evaluate(&config(), &archs(1)).unwrap_err();
        assert!(started.elapsed() < Duration::from_secs(5), "kill was not prompt");
        let message = err.to_string();
        assert!(message.contains("timeout"), "unexpected error: {message}");
    }

    #[test]
    fn nonzero_exit_and_parse_failures_are_distinguished() {
        let dir = tempfile::tempdir().unwrap();
        let exit = evaluator(dir.path(), "exit 3", 10.0, 1);
        let err = exit.evaluate(&config(), &archs(1)).unwrap_err().to_string();
        assert!(err.contains("failed with"), "unexpected error: {err}");

        let dir2 = tempfile::tempdir().unwrap();
        let garbage = evaluator(dir2.path(), "echo not-a-number > result.txt", 10.0, 1);
        let err = garbage.evaluate(&config(), &archs(1)).unwrap_err().to_string();
        assert!(err.contains("number"), "unexpected error: {err}");

        let dir3 = tempfile::tempdir().unwrap();
        let silent = evaluator(dir3.path(), "true", 10.0, 1);
        let err = silent.evaluate(&config(), &archs(1)).unwrap_err().to_string();
        assert!(err.contains("result.txt"), "unexpected error: {err}");
    }

    #[test]
    fn one_bad_architecture_does_not_poison_the_rest() {
        let dir = tempfile::tempdir().unwrap();
        // Fail exactly for genotypes whose normal cell starts with the zero
        // op; score the rest.
        let eval = evaluator(
            dir.path(),
            "if head -n 1 genotype.txt | grep -q '^-1->1:none'; then exit 9; \
             else echo 0.5 > result.txt; fi",
            10.0,
            1,
        );
        let good_ops = [OpKind::SkipConnect, OpKind::SepConv3x3];
        let bad_ops = [OpKind::Zero, OpKind::SepConv3x3];
        let cell = |ops: &[OpKind]| CellGenotype::from_ops(1, ops).unwrap();
        let set = ArchSet::new(vec![
            ArchEntry {
                id: "good".into(),
                genotype: Genotype::new(cell(&good_ops), cell(&good_ops)).unwrap(),
            },
            ArchEntry {
                id: "bad".into(),
                genotype: Genotype::new(cell(&bad_ops), cell(&bad_ops)).unwrap(),
            },
        ])
        .unwrap();
        let result = eval.evaluate(&config(), &set).unwrap();
        assert_eq!(result.outcomes()[0].score(), Some(0.5));
        assert!(result.outcomes()[1].is_failed());
        assert_eq!(result.effective_n(), 1);
    }

    #[test]
    fn completed_measurements_are_cached_and_reused_identically() {
        let dir = tempfile::tempdir().unwrap();
        let counter = dir.path().join("invocations");
        let command = format!(
            "echo x >> {} && wc -c < genotype.txt > result.txt",
            counter.display()
        );
        let eval = evaluator(dir.path(), &command, 10.0, 1);
        let set = archs(4);
        let first = eval.evaluate(&config(), &set).unwrap();
        let second = eval.evaluate(&config(), &set).unwrap();
        let invocations = fs::read_to_string(&counter).unwrap().lines().count();
        assert_eq!(invocations, 4, "cache did not prevent re-runs");
        // Cached replay reproduces scores and costs bit for bit.
        assert_eq!(first, second);
    }

    #[test]
    fn failures_are_never_cached() {
        let dir = tempfile::tempdir().unwrap();
        let gate = dir.path().join("gate");
        // Fails until the gate file exists, then succeeds.
        let command = format!(
            "test -f {} && echo 0.25 > result.txt || exit 1",
            gate.display()
        );
        let eval = evaluator(dir.path(), &command, 10.0, 1);
        let set = archs(1);
        assert!(eval.evaluate(&config(), &set).is_err());
        fs::write(&gate, "open").unwrap();
        let result = eval.evaluate(&config(), &set).unwrap();
        assert_eq!(result.outcomes()[0].score(), Some(0.25));
    }

    #[test]
    fn parallel_runs_finish_faster_than_serial_would() {
        let dir = tempfile::tempdir().unwrap();
        let eval = evaluator(
            dir.path(),
            "sleep 0.5 && wc -c < genotype.txt > result.txt",
            10.0,
            4,
        );
        let set = archs(4);
        let started = Instant::now();
        let result = eval.evaluate(&config(), &set).unwrap();
        let wall = started.elapsed();
        assert_eq!(result.effective_n(), 4);
        // Serial execution would need at least 2 seconds.
        assert!(
            wall < Duration::from_millis(1800),
            "parallelism 4 took {wall:?}"
        );
        // Outcomes stay in architecture-set order.
        for (outcome, entry) in result.outcomes().iter().zip(set.iter()) {
            assert_eq!(outcome.score(), Some(encode(&entry.genotype).len() as f64));
        }
    }

    #[test]
    fn protocol_validation_rejects_bad_settings() {
        let ok = ExternalProtocol {
            command: "true".into(),
            work_dir: "w".into(),
            cache_dir: "c".into(),
            timeout_secs: 1.0,
            parallelism: 1,
        };
        assert!(ok.validate().is_ok());
        assert!(ExternalProtocol { command: "  ".into(), ..ok.clone() }.validate().is_err());
        assert!(ExternalProtocol { timeout_secs: 0.0, ..ok.clone() }.validate().is_err());
        assert!(ExternalProtocol { parallelism: 0, ..ok.clone() }.validate().is_err());
    }

    #[test]
    fn different_configs_and_genotypes_get_distinct_cache_keys() {
        let a = ExternalEvaluator::cache_key("epoch = 10\n", "-1->1:none\n-1->1:none\n");
        let b = ExternalEvaluator::cache_key("epoch = 30\n", "-1->1:none\n-1->1:none\n");
        let c = ExternalEvaluator::cache_key("epoch = 10\n", "-1->1:skip_connect\n-1->1:none\n");
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.len(), 64);
    }
}
