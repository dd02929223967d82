//! Cross-product sweeps over bandwidth, flow size, balancer and seed.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::balancer::BalancerKind;
use crate::metrics::{fixed, median, FigPoint, RunSummary};
use crate::scenario::{ScenarioError, ScenarioSpec, MIB, SCHEMA_VERSION};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepMatrix {
    pub version: u32,
    pub base: ScenarioSpec,
    pub bandwidths_gbps: Vec<u64>,
    pub flow_mib: Vec<u64>,
    pub balancers: Vec<BalancerKind>,
    /// Seeds per cell; the base scenario's seed when empty.
    #[serde(default)]
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepCell {
    pub bandwidth_gbps: u64,
    pub flow_mib: u64,
    pub balancer: BalancerKind,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub bandwidth_gbps: u64,
    pub flow_mib: u64,
    pub balancer: BalancerKind,
    pub seed: u64,
    pub complete: bool,
    pub ratio: String,
    pub max_fct_ns: u64,
    pub avg_fct_ns: String,
    pub error: String,
}

impl SweepMatrix {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| ScenarioError::Parse {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })
    }

    /// Cells in a fixed order: bandwidth, then size, then balancer, then seed.
    pub fn cells(&self) -> Result<Vec<SweepCell>, ScenarioError> {
        if self.version != SCHEMA_VERSION {
            return Err(ScenarioError::Parse {
                path: "version".into(),
                message: format!("unsupported version {}", self.version),
            });
        }
        let seeds = if self.seeds.is_empty() { vec![self.base.seed] } else { self.seeds.clone() };
        let mut out = Vec::new();
        for &bandwidth_gbps in &self.bandwidths_gbps {
            for &flow_mib in &self.flow_mib {
                for &balancer in &self.balancers {
                    for &seed in &seeds {
                        out.push(SweepCell {
                            bandwidth_gbps,
                            flow_mib,
                            balancer,
                            seed,
                        });
                    }
                }
            }
        }
        if out.is_empty() {
            return Err(ScenarioError::Parse {
                path: "matrix".into(),
                message: "the matrix expands to no runs".into(),
            });
        }
        Ok(out)
    }

    pub fn cell_spec(&self, cell: &SweepCell) -> ScenarioSpec {
        let mut s = self.base.clone();
        s.link.bandwidth_gbps = cell.bandwidth_gbps;
        s.traffic.set_flow_bytes(cell.flow_mib * MIB);
        s.balancer.sprayed = cell.balancer;
        s.seed = cell.seed;
        s.measurement.queue_sample_ns = None;
        s
    }
}

fn row(cell: &SweepCell, res: Result<RunSummary, ScenarioError>) -> SweepRow {
    match res {
        Ok(s) => SweepRow {
            bandwidth_gbps: cell.bandwidth_gbps,
            flow_mib: cell.flow_mib,
            balancer: cell.balancer,
            seed: cell.seed,
            complete: s.complete,
            ratio: fixed(s.ratio, 6),
            max_fct_ns: s.max_fct_ns,
            avg_fct_ns: fixed(s.avg_fct_ns, 1),
            error: if s.complete { String::new() } else { "incomplete flows".into() },
        },
        Err(e) => SweepRow {
            bandwidth_gbps: cell.bandwidth_gbps,
            flow_mib: cell.flow_mib,
            balancer: cell.balancer,
            seed: cell.seed,
            complete: false,
            ratio: "nan".into(),
            max_fct_ns: 0,
            avg_fct_ns: "nan".into(),
            error: e.to_string(),
        },
    }
}

/// Runs every cell on `jobs` worker threads; rows come back in cell order.
pub fn run_sweep(matrix: &SweepMatrix, jobs: usize) -> Result<Vec<SweepRow>, ScenarioError> {
    let cells = matrix.cells()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .expect("thread pool");
    Ok(pool.install(|| {
        cells
            .par_iter()
            .map(|c| row(c, matrix.cell_spec(c).run(None).map(|o| o.summary)))
            .collect()
    }))
}

/// Median ratio over seeds for every (bandwidth, size, balancer) cell, as
/// plot points with the flow size on x and `BALANCER@BWG` as series.
pub fn aggregate(rows: &[SweepRow]) -> Vec<FigPoint> {
    let mut keys: Vec<(u64, u64, BalancerKind)> = rows.iter().map(|r| (r.bandwidth_gbps, r.flow_mib, r.balancer)).collect();
    keys.sort();
    keys.dedup();
    keys.into_iter()
        .map(|(bw, mib, b)| {
            let ratios: Vec<f64> = rows
                .iter()
                .filter(|r| (r.bandwidth_gbps, r.flow_mib, r.balancer) == (bw, mib, b))
                .filter_map(|r| r.ratio.parse().ok())
                .collect();
            FigPoint::new(mib, median(&ratios), format!("{b}@{bw}G"))
        })
        .collect()
}
