//! Python bindings: metrics, reward assembly, world sampling and the
//! pipeline stages.

use std::path::PathBuf;

use mclp_core::fidelity::{edit_distance as core_edit_distance, error_rate};
use mclp_core::grpo::normalize_advantages as core_normalize;
use mclp_core::mclp::mclp as core_mclp;
use mclp_core::pipeline::{Run, RunConfig};
use mclp_core::reward::{RewardBreakdown, RewardConfig, RewardKind};
use mclp_core::rng::stream;
use mclp_core::ta4::{interleave, Transcript};
use mclp_core::world::{StyleId, StyleWorld, WorldConfig};
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyDict;

create_exception!(mclp, MclpError, PyException);

fn err(e: mclp_core::Error) -> PyErr {
    MclpError::new_err(format!("{}: {e}", e.kind()))
}

#[pyfunction]
fn edit_distance(a: Vec<i64>, b: Vec<i64>) -> usize {
    core_edit_distance(&a, &b).distance
}

/// Token error rate of `hyp` against a non-empty `reference`.
#[pyfunction]
fn cer(hyp: Vec<i64>, reference: Vec<i64>) -> PyResult<f64> {
    error_rate(&hyp, &reference).map(|r| r.value).map_err(err)
}

#[pyfunction]
fn normalize_advantages(rewards: Vec<f64>) -> PyResult<Vec<f64>> {
    core_normalize(&rewards).map_err(err)
}

/// Gated reward for one rollout. `tau` may be `float("inf")`.
#[pyfunction]
#[pyo3(signature = (mclp, cer, c = 15.0, lam = 10.0, tau = 0.2, kind = "hybrid"))]
fn reward<'py>(
    py: Python<'py>,
    mclp: f64,
    cer: f64,
    c: f64,
    lam: f64,
    tau: f64,
    kind: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let kind = match kind {
        "hybrid" => RewardKind::Hybrid,
        "content_only" => RewardKind::ContentOnly,
        other => return Err(MclpError::new_err(format!("ConfigInvalid: unknown reward kind {other:?}"))),
    };
    let cfg = RewardConfig { c, lambda: lam, tau, kind };
    cfg.validate().map_err(err)?;
    let b = RewardBreakdown::assemble(&cfg, mclp, cer);
    let d = PyDict::new(py);
    d.set_item("mclp", b.mclp)?;
    d.set_item("cer", b.cer)?;
    d.set_item("r_style", b.r_style)?;
    d.set_item("r_content", b.r_content)?;
    d.set_item("gated", b.gated)?;
    d.set_item("reward", b.reward)?;
    Ok(d)
}

/// JSON text of the bundled smoke configuration.
#[pyfunction]
fn smoke_config() -> PyResult<String> {
    RunConfig::smoke().to_json().map_err(err)
}

/// Runs one pipeline stage (`world-gen`, `data-curate`, `train-sft`,
/// `train-grpo`, `eval`, `winrate`, `ablate` or `run-all`) and returns the
/// run directory.
#[pyfunction]
#[pyo3(signature = (command, run_dir, config_json = None, overrides = Vec::new()))]
fn run_stage(
    command: &str,
    run_dir: PathBuf,
    config_json: Option<&str>,
    overrides: Vec<String>,
) -> PyResult<String> {
    let base = match config_json {
        Some(s) => RunConfig::from_json(s).map_err(err)?,
        None => RunConfig::smoke(),
    };
    let cfg = base.with_overrides(&overrides).map_err(err)?;
    let mut run = Run::open_at(cfg, run_dir).map_err(err)?;
    match command {
        "world-gen" => run.world_gen(),
        "data-curate" => run.data_curate(),
        "train-sft" => run.train_sft(),
        "train-grpo" => run.train_grpo(),
        "eval" => run.eval(),
        "winrate" => run.winrate().map(|_| ()),
        "ablate" => run.ablate().map(|_| ()),
        "run-all" => run.run_all(),
        other => {
            return Err(MclpError::new_err(format!("ConfigInvalid: unknown command {other:?}")));
        }
    }
    .map_err(err)?;
    Ok(run.dir.display().to_string())
}

/// A generated style world.
#[pyclass(module = "mclp")]
struct World {
    inner: StyleWorld,
}

#[pymethods]
impl World {
    /// Generates a world from a JSON world config (defaults when omitted).
    #[new]
    #[pyo3(signature = (seed = 0, config_json = None))]
    fn new(seed: u64, config_json: Option<&str>) -> PyResult<Self> {
        let cfg: WorldConfig = match config_json {
            Some(s) => serde_json_from(s)?,
            None => WorldConfig::default(),
        };
        Ok(World {
            inner: StyleWorld::generate(&cfg, seed).map_err(err)?,
        })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(World {
            inner: StyleWorld::load_json(text).map_err(err)?,
        })
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.save_json().map_err(err)
    }

    #[getter]
    fn n_styles(&self) -> usize {
        self.inner.config.n_styles
    }

    fn sample_transcript(&self, length: usize, seed: u64) -> Vec<u32> {
        self.inner.sample_transcript(length, &mut stream(seed, &[])).text_ids
    }

    /// Audio tokens (four per transcript token) drawn from one style.
    fn sample_audio(&self, style: usize, transcript: Vec<u32>, seed: u64) -> PyResult<Vec<u32>> {
        if style >= self.inner.config.n_styles {
            return Err(MclpError::new_err(format!("ConfigInvalid: style {style} out of range")));
        }
        let t = Transcript::new(transcript);
        let seq = self.inner.sample_target(StyleId(style), &t, &mut stream(seed, &[]));
        Ok(seq.audio_ids().collect())
    }

    /// MCLP of the reference audio given the candidate, scored by the oracle.
    fn mclp(&self, transcript: Vec<u32>, candidate: Vec<u32>, reference: Vec<u32>) -> PyResult<f64> {
        let t = Transcript::new(transcript);
        let ze = interleave(&t, &candidate).map_err(err)?;
        let zg = interleave(&t, &reference).map_err(err)?;
        core_mclp(self.inner.oracle(), &ze, &zg, &t)
            .map(|s| s.value)
            .map_err(err)
    }
}

fn serde_json_from<T: serde::de::DeserializeOwned>(s: &str) -> PyResult<T> {
    serde_json::from_str(s).map_err(|e| MclpError::new_err(format!("Json: {e}")))
}

#[pymodule]
fn mclp(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("MclpError", m.py().get_type::<MclpError>())?;
    m.add_function(wrap_pyfunction!(edit_distance, m)?)?;
    m.add_function(wrap_pyfunction!(cer, m)?)?;
    m.add_function(wrap_pyfunction!(normalize_advantages, m)?)?;
    m.add_function(wrap_pyfunction!(reward, m)?)?;
    m.add_function(wrap_pyfunction!(smoke_config, m)?)?;
    m.add_function(wrap_pyfunction!(run_stage, m)?)?;
    m.add_class::<World>()?;
    Ok(())
}
