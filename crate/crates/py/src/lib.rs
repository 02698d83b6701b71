//! Python bindings: reward scoring and manifest iteration.
//!
//! ```python
//! import jigsaw_rs
//! jigsaw_rs.score("<think>..</think><answer>2, 1, 3</answer>", [2, 1, 3])
//! for task in jigsaw_rs.iter_manifest("ds/"):
//!     ...
//! ```

use std::path::{Path, PathBuf};
use std::sync::Mutex;

use jigsaw_core::manifest::{dataset_root, list_shards, ManifestReader};
use jigsaw_core::reward::{parse_rational, rational_from_f64, rational_to_f64, Rational, RewardBreakdown};
use jigsaw_core::{GroundTruth, RewardSpec};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList, PyString};
use serde_json::Value;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn core_err(e: jigsaw_core::Error) -> PyErr {
    match e {
        jigsaw_core::Error::Io { .. } => PyIOError::new_err(e.to_string()),
        other => value_err(other),
    }
}

/// Accepts a float or a fraction string such as `"1/5"`.
fn fraction(obj: &Bound<'_, PyAny>, name: &str) -> PyResult<Rational> {
    if let Ok(s) = obj.cast::<PyString>() {
        return parse_rational(&s.to_cow()?).map_err(|e| value_err(format!("{name}: {e}")));
    }
    let x: f64 = obj
        .extract()
        .map_err(|_| value_err(format!("{name}: expected a number or a fraction string")))?;
    rational_from_f64(x).map_err(|e| value_err(format!("{name}: {e}")))
}

fn breakdown_dict<'py>(py: Python<'py>, b: &RewardBreakdown) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("format_reward", rational_to_f64(b.format_reward))?;
    d.set_item("accuracy_reward", rational_to_f64(b.accuracy_reward))?;
    d.set_item("total", rational_to_f64(b.total))?;
    d.set_item("validity", b.validity.as_str())?;
    Ok(d)
}

pub fn json_to_py<'py>(py: Python<'py>, v: &Value) -> PyResult<Bound<'py, PyAny>> {
    Ok(match v {
        Value::Null => py.None().into_bound(py),
        Value::Bool(b) => b.into_pyobject(py)?.to_owned().into_any(),
        Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                i.into_pyobject(py)?.into_any()
            } else if let Some(u) = n.as_u64() {
                u.into_pyobject(py)?.into_any()
            } else {
                n.as_f64().unwrap_or(f64::NAN).into_pyobject(py)?.into_any()
            }
        }
        Value::String(s) => PyString::new(py, s).into_any(),
        Value::Array(items) => {
            let list = PyList::empty(py);
            for item in items {
                list.append(json_to_py(py, item)?)?;
            }
            list.into_any()
        }
        Value::Object(map) => {
            let d = PyDict::new(py);
            for (k, item) in map {
                d.set_item(k, json_to_py(py, item)?)?;
            }
            d.into_any()
        }
    })
}

/// Reward parameters. `gamma` and `format_bonus` take floats or fraction
/// strings.
#[pyclass(name = "RewardSpec", frozen, from_py_object)]
#[derive(Clone)]
pub struct PyRewardSpec {
    inner: RewardSpec,
}

#[pymethods]
impl PyRewardSpec {
    #[new]
    #[pyo3(signature = (gamma = None, format_bonus = None, partial_credit = true))]
    fn new(
        gamma: Option<&Bound<'_, PyAny>>,
        format_bonus: Option<&Bound<'_, PyAny>>,
        partial_credit: bool,
    ) -> PyResult<Self> {
        let d = RewardSpec::default();
        let gamma = gamma.map(|g| fraction(g, "gamma")).transpose()?.unwrap_or(d.gamma());
        let bonus = format_bonus
            .map(|b| fraction(b, "format_bonus"))
            .transpose()?
            .unwrap_or(d.format_bonus());
        let inner = RewardSpec::new(gamma, bonus).map_err(core_err)?.with_partial_credit(partial_credit);
        Ok(PyRewardSpec { inner })
    }

    #[getter]
    fn gamma(&self) -> f64 {
        rational_to_f64(self.inner.gamma())
    }

    #[getter]
    fn format_bonus(&self) -> f64 {
        rational_to_f64(self.inner.format_bonus())
    }

    #[getter]
    fn partial_credit(&self) -> bool {
        self.inner.partial_credit()
    }

    fn score<'py>(&self, py: Python<'py>, response_text: &str, ground_truth: Vec<usize>) -> PyResult<Bound<'py, PyDict>> {
        let g = GroundTruth::new(ground_truth).map_err(core_err)?;
        breakdown_dict(py, &jigsaw_core::reward::total_reward(response_text, &g, &self.inner))
    }

    fn __repr__(&self) -> String {
        format!(
            "RewardSpec(gamma={}, format_bonus={}, partial_credit={})",
            self.inner.gamma(),
            self.inner.format_bonus(),
            if self.inner.partial_credit() { "True" } else { "False" }
        )
    }
}

/// Scores one response. Malformed responses score zero; only a bad spec or
/// ground truth raises.
#[pyfunction]
#[pyo3(signature = (response_text, ground_truth, gamma = None, format_bonus = None, partial_credit = true))]
fn score<'py>(
    py: Python<'py>,
    response_text: &str,
    ground_truth: Vec<usize>,
    gamma: Option<&Bound<'py, PyAny>>,
    format_bonus: Option<&Bound<'py, PyAny>>,
    partial_credit: bool,
) -> PyResult<Bound<'py, PyDict>> {
    PyRewardSpec::new(gamma, format_bonus, partial_credit)?.score(py, response_text, ground_truth)
}

/// Parses a response for a `k`-piece task without scoring it.
#[pyfunction]
fn parse_response<'py>(py: Python<'py>, text: &str, k: usize) -> PyResult<Bound<'py, PyDict>> {
    let p = jigsaw_core::reward::parse_response(text, k);
    let d = PyDict::new(py);
    d.set_item("format_ok", p.format_ok)?;
    d.set_item("think_text", p.think_text)?;
    d.set_item("answer_indices", p.answer_indices)?;
    d.set_item(
        "failure_reason",
        p.failure_reason
            .and_then(|r| serde_json::to_value(r).ok())
            .and_then(|v| v.as_str().map(String::from)),
    )?;
    Ok(d)
}

struct ShardCursor {
    root: PathBuf,
    pending: std::vec::IntoIter<PathBuf>,
    current: ManifestReader,
}

impl ShardCursor {
    fn open(path: &Path) -> jigsaw_core::Result<Self> {
        let shards = if path.is_dir() { list_shards(path)? } else { vec![path.to_path_buf()] };
        let mut pending = shards.into_iter();
        let first = match pending.next() {
            Some(p) => p,
            None => {
                return Err(jigsaw_core::Error::io(
                    path,
                    std::io::Error::new(std::io::ErrorKind::NotFound, "no manifest shards"),
                ))
            }
        };
        let root = std::path::absolute(dataset_root(path)).map_err(|e| jigsaw_core::Error::io(path, e))?;
        Ok(ShardCursor {
            root,
            pending,
            current: ManifestReader::open(&first)?,
        })
    }

    fn next_record(&mut self) -> Option<jigsaw_core::Result<Value>> {
        loop {
            match self.current.next() {
                Some(Ok(record)) => {
                    let mut v = match serde_json::to_value(&record) {
                        Ok(v) => v,
                        Err(e) => return Some(Err(jigsaw_core::Error::invalid(e.to_string()))),
                    };
                    v["media"] = record
                        .media
                        .iter()
                        .map(|m| Value::String(self.root.join(m).to_string_lossy().into_owned()))
                        .collect();
                    return Some(Ok(v));
                }
                Some(Err(e)) => return Some(Err(e)),
                None => {
                    let next = self.pending.next()?;
                    match ManifestReader::open(&next) {
                        Ok(r) => self.current = r,
                        Err(e) => return Some(Err(e)),
                    }
                }
            }
        }
    }
}

/// Iterator over manifest records as dicts, with media paths made absolute.
#[pyclass]
pub struct ManifestIter {
    cursor: Mutex<ShardCursor>,
}

#[pymethods]
impl ManifestIter {
    fn __iter__(slf: PyRef<'_, Self>) -> PyRef<'_, Self> {
        slf
    }

    fn __next__<'py>(&self, py: Python<'py>) -> PyResult<Option<Bound<'py, PyAny>>> {
        let next = self.cursor.lock().unwrap_or_else(|p| p.into_inner()).next_record();
        match next {
            None => Ok(None),
            Some(Ok(v)) => json_to_py(py, &v).map(Some),
            Some(Err(e)) => Err(core_err(e)),
        }
    }
}

/// Opens a manifest file or dataset directory. A missing path raises here,
/// before iteration starts.
#[pyfunction]
fn iter_manifest(path: PathBuf) -> PyResult<ManifestIter> {
    let cursor = ShardCursor::open(&path).map_err(core_err)?;
    Ok(ManifestIter {
        cursor: Mutex::new(cursor),
    })
}

#[pymodule]
fn jigsaw_rs(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyRewardSpec>()?;
    m.add_class::<ManifestIter>()?;
    m.add_function(wrap_pyfunction!(score, m)?)?;
    m.add_function(wrap_pyfunction!(parse_response, m)?)?;
    m.add_function(wrap_pyfunction!(iter_manifest, m)?)?;
    Ok(())
}
