//! Python bindings: entropy generation, congestion history, topology facts
//! and whole-scenario runs.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use primesim::entropy::{self, MpEv};
use primesim::history::{self, PenaltyConfig};
use primesim::scenario::ScenarioSpec;
use primesim::sim::{derive_rng, purpose, SimTime};
use primesim::topology::{Topology, TopologyParams};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Pseudo-randomized round-robin generator of multi-part entropy values.
#[pyclass(name = "EvGenerator", module = "primesim")]
struct EvGenerator {
    inner: entropy::EvGenerator,
}

#[pymethods]
impl EvGenerator {
    #[new]
    #[pyo3(signature = (uplink_counts, seed = 1, entity = 0))]
    fn new(uplink_counts: Vec<usize>, seed: u64, entity: u64) -> PyResult<Self> {
        let rng = derive_rng(seed, entity, purpose::SHUFFLE);
        let inner = entropy::EvGenerator::new(&uplink_counts, rng).map_err(value_err)?;
        Ok(Self { inner })
    }

    /// Next entropy value as a list of part values.
    fn next(&mut self) -> Vec<u16> {
        self.inner.next().parts().to_vec()
    }

    fn take(&mut self, n: usize) -> Vec<Vec<u16>> {
        (0..n).map(|_| self.next()).collect()
    }

    #[getter]
    fn counts(&self) -> Vec<usize> {
        self.inner.counts().to_vec()
    }

    #[getter]
    fn path_count(&self) -> usize {
        self.inner.path_count()
    }
}

/// Per-path penalty table with send-clocked decay.
#[pyclass(name = "CongestionHistory", module = "primesim")]
struct CongestionHistory {
    inner: history::CongestionHistory,
}

impl CongestionHistory {
    fn check(&self, path: usize) -> PyResult<usize> {
        if path < self.inner.len() {
            Ok(path)
        } else {
            Err(value_err(format!("path {path} out of range 0..{}", self.inner.len())))
        }
    }
}

#[pymethods]
impl CongestionHistory {
    #[new]
    #[pyo3(signature = (paths, p_ecn, p_nack, decay_step = 1, bits = 8))]
    fn new(paths: usize, p_ecn: u16, p_nack: u16, decay_step: u16, bits: u8) -> PyResult<Self> {
        let cfg = PenaltyConfig {
            bits,
            p_ecn,
            p_nack,
            decay_step,
        };
        let inner = history::CongestionHistory::new(paths, cfg).map_err(value_err)?;
        Ok(Self { inner })
    }

    fn on_ecn(&mut self, path: usize) -> PyResult<()> {
        let p = self.check(path)?;
        self.inner.on_ecn(p);
        Ok(())
    }

    fn on_nack(&mut self, path: usize) -> PyResult<()> {
        let p = self.check(path)?;
        self.inner.on_nack(p);
        Ok(())
    }

    fn decay(&mut self) {
        self.inner.decay();
    }

    fn penalty(&self, path: usize) -> PyResult<u16> {
        Ok(self.inner.penalty(self.check(path)?))
    }

    fn penalties(&self) -> Vec<u16> {
        self.inner.penalties().to_vec()
    }

    fn is_clear(&self, path: usize) -> PyResult<bool> {
        Ok(self.inner.is_clear(self.check(path)?))
    }

    fn all_clear(&self) -> bool {
        self.inner.all_clear()
    }

    fn least_penalized(&self, candidates: Vec<usize>) -> PyResult<usize> {
        for &c in &candidates {
            self.check(c)?;
        }
        self.inner.least_penalized(&candidates).map_err(value_err)
    }

    fn ticks_to_clear(&self, penalty: u16) -> u32 {
        self.inner.ticks_to_clear(penalty)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// Mixed-radix index of an entropy value within its path space.
#[pyfunction]
fn ev_index(parts: Vec<u16>, counts: Vec<usize>) -> PyResult<usize> {
    if parts.len() > entropy::MAX_PARTS {
        return Err(value_err(format!("at most {} entropy parts", entropy::MAX_PARTS)));
    }
    entropy::ev_index(&MpEv::new(&parts), &counts).map_err(value_err)
}

/// Entropy value (list of parts) at `index` of the path space.
#[pyfunction]
fn ev_from_index(index: usize, counts: Vec<usize>) -> PyResult<Vec<u16>> {
    entropy::ev_from_index(index, &counts).map(|e| e.parts().to_vec()).map_err(value_err)
}

/// Switch counts per tier, entropy part widths and uplink counts of a FatTree.
#[pyfunction]
#[pyo3(signature = (tiers, hosts, switch_ports, bandwidth_gbps = 400, delay_ns = 600))]
fn topology_info(
    py: Python<'_>,
    tiers: u8,
    hosts: usize,
    switch_ports: usize,
    bandwidth_gbps: u64,
    delay_ns: u64,
) -> PyResult<Py<PyAny>> {
    let params = TopologyParams::new(tiers, hosts, switch_ports);
    let t = Topology::build(&params, bandwidth_gbps * 1_000_000_000, SimTime(delay_ns)).map_err(value_err)?;
    let info = serde_json::json!({
        "tiers": tiers,
        "hosts": t.n_hosts(),
        "leaves": t.n_leaves(),
        "tier_counts": t.tier_counts(),
        "nominal_uplinks": t.nominal_uplinks(),
        "part_widths": t.part_widths(),
        "links": t.links.len(),
    });
    json_to_py(py, &info.to_string())
}

fn json_to_py(py: Python<'_>, text: &str) -> PyResult<Py<PyAny>> {
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

/// Validates a scenario JSON document; raises ValueError listing violations.
#[pyfunction]
fn validate_scenario(scenario_json: &str) -> PyResult<()> {
    let spec = ScenarioSpec::from_json(scenario_json).map_err(value_err)?;
    spec.validate().map_err(value_err)
}

/// Runs a scenario JSON document and returns its summary, counters and flows.
#[pyfunction]
#[pyo3(signature = (scenario_json, seed = None))]
fn run_scenario(py: Python<'_>, scenario_json: &str, seed: Option<u64>) -> PyResult<Py<PyAny>> {
    let spec = ScenarioSpec::from_json(scenario_json).map_err(value_err)?;
    spec.validate().map_err(value_err)?;
    let out = py.detach(|| spec.run(seed)).map_err(value_err)?;
    let s = &out.summary;
    let doc = serde_json::json!({
        "summary": s.summary_row(),
        "counters": s.counters,
        "flows": s.flows,
    });
    json_to_py(py, &doc.to_string())
}

#[pymodule]
#[pyo3(name = "primesim")]
fn primesim_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<EvGenerator>()?;
    m.add_class::<CongestionHistory>()?;
    m.add_function(wrap_pyfunction!(ev_index, m)?)?;
    m.add_function(wrap_pyfunction!(ev_from_index, m)?)?;
    m.add_function(wrap_pyfunction!(topology_info, m)?)?;
    m.add_function(wrap_pyfunction!(validate_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(run_scenario, m)?)?;
    Ok(())
}
