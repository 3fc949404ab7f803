//! Batch experiments over generated scenarios: density / heterogeneity
//! sweeps and controller comparisons. Runs are independent and execute in
//! parallel; results are collected in input order.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{Scenario, ScenarioConfig};
use crate::engine::{run, Controller, RunMetrics};
use crate::error::Result;
use crate::io::generator::{gen_scenario_with, GenParams};

/// Runs every scenario under `controller`, in parallel.
pub fn run_batch(scenarios: &[Scenario], controller: Controller) -> Result<Vec<RunMetrics>> {
    scenarios
        .par_iter()
        .map(|s| run(s, controller).map(|o| o.metrics))
        .collect()
}

pub fn generate_batch(params: &[GenParams], base: &ScenarioConfig) -> Result<Vec<Scenario>> {
    params.par_iter().map(|p| gen_scenario_with(p, base)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub densities: Vec<f64>,
    pub delta_vs: Vec<i32>,
    pub lanes: Vec<i32>,
    pub length_m: f64,
    pub n_emv: u32,
    pub seeds: Vec<u64>,
    /// Scale density by `lanes / 3` so every lane count sees the same
    /// per-lane density.
    pub per_lane: bool,
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec {
            densities: vec![88.0, 107.0, 117.0],
            delta_vs: vec![1, 2, 3],
            lanes: vec![3],
            length_m: 1200.0,
            n_emv: 1,
            seeds: (0..20).collect(),
            per_lane: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub density: f64,
    pub delta_v: i32,
    pub lanes: i32,
    pub runs: usize,
    pub ov_count_mean: f64,
    pub f_prime_mean: f64,
    pub f_prime_std: f64,
    pub collision_rate_mean: f64,
    pub emv_exit_tick_mean: Option<f64>,
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

fn std_dev(xs: &[f64]) -> f64 {
    let m = mean(xs);
    mean(&xs.iter().map(|x| (x - m).powi(2)).collect::<Vec<_>>()).sqrt()
}

/// Mean tick at which the EMVs of a run left the segment, over runs where
/// all of them did.
pub fn mean_emv_exit_tick(metrics: &[RunMetrics]) -> Option<f64> {
    let ticks: Vec<f64> = metrics
        .iter()
        .filter(|m| m.emv_count > 0 && m.emv_exit_ticks.len() == m.emv_count)
        .flat_map(|m| m.emv_exit_ticks.values().map(|&t| f64::from(t)))
        .collect();
    (!ticks.is_empty()).then(|| mean(&ticks))
}

pub fn summarize(density: f64, delta_v: i32, lanes: i32, metrics: &[RunMetrics]) -> SweepRow {
    let f: Vec<f64> = metrics.iter().map(|m| m.f_prime).collect();
    let ovs: Vec<f64> = metrics.iter().map(|m| (m.vehicle_count - m.emv_count) as f64).collect();
    let coll: Vec<f64> = metrics.iter().map(|m| m.collision_rate).collect();
    SweepRow {
        density,
        delta_v,
        lanes,
        runs: metrics.len(),
        ov_count_mean: mean(&ovs),
        f_prime_mean: mean(&f),
        f_prime_std: std_dev(&f),
        collision_rate_mean: mean(&coll),
        emv_exit_tick_mean: mean_emv_exit_tick(metrics),
    }
}

/// One row per (lanes, density, Δv), in that nesting order.
pub fn sweep(spec: &SweepSpec, base: &ScenarioConfig, controller: Controller) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for &lanes in &spec.lanes {
        for &density in &spec.densities {
            let effective = if spec.per_lane { density * f64::from(lanes) / 3.0 } else { density };
            for &delta_v in &spec.delta_vs {
                let params: Vec<GenParams> = spec
                    .seeds
                    .iter()
                    .map(|&seed| GenParams {
                        density_veh_per_km: effective,
                        delta_v,
                        lanes,
                        length_m: spec.length_m,
                        n_emv: spec.n_emv,
                        seed,
                    })
                    .collect();
                let scenarios = generate_batch(&params, base)?;
                let metrics = run_batch(&scenarios, controller)?;
                rows.push(summarize(density, delta_v, lanes, &metrics));
            }
        }
    }
    Ok(rows)
}

pub fn sweep_table(rows: &[SweepRow]) -> String {
    let mut out = String::from("density,delta_v,lanes,runs,ov_count_mean,f_prime_mean,f_prime_std,collision_rate_mean,emv_exit_tick_mean\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{:.1},{:.3},{:.3},{:.4},{}\n",
            r.density,
            r.delta_v,
            r.lanes,
            r.runs,
            r.ov_count_mean,
            r.f_prime_mean,
            r.f_prime_std,
            r.collision_rate_mean,
            r.emv_exit_tick_mean.map(|t| format!("{t:.2}")).unwrap_or_default()
        ));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub sdvc: RunMetrics,
    pub idm: RunMetrics,
}

impl Comparison {
    /// Last EMV exit tick, or `None` if some EMV never left.
    pub fn traversal(m: &RunMetrics) -> Option<u32> {
        (m.emv_exit_ticks.len() == m.emv_count).then(|| m.emv_exit_ticks.values().copied().max().unwrap_or(0))
    }

    pub fn table(&self) -> String {
        let rows: [(&str, String, String); 9] = [
            ("f_prime", format!("{:.3}", self.sdvc.f_prime), format!("{:.3}", self.idm.f_prime)),
            ("f", self.sdvc.f.to_string(), self.idm.f.to_string()),
            ("ov_speed_changes", self.sdvc.ov_speed_changes.to_string(), self.idm.ov_speed_changes.to_string()),
            ("ov_lane_changes", self.sdvc.ov_lane_changes.to_string(), self.idm.ov_lane_changes.to_string()),
            ("emv_lane_changes", self.sdvc.emv_lane_changes.to_string(), self.idm.emv_lane_changes.to_string()),
            ("collision_rate", format!("{:.4}", self.sdvc.collision_rate), format!("{:.4}", self.idm.collision_rate)),
            ("collisions", self.sdvc.collision_ids.len().to_string(), self.idm.collision_ids.len().to_string()),
            (
                "emv_traversal_ticks",
                Self::traversal(&self.sdvc).map(|t| t.to_string()).unwrap_or_else(|| "-".into()),
                Self::traversal(&self.idm).map(|t| t.to_string()).unwrap_or_else(|| "-".into()),
            ),
            ("ticks", self.sdvc.ticks.to_string(), self.idm.ticks.to_string()),
        ];
        let mut out = format!("{:<22}{:>14}{:>14}\n", "metric", "sdvc", "idm");
        for (name, a, b) in rows {
            out.push_str(&format!("{name:<22}{a:>14}{b:>14}\n"));
        }
        out
    }
}

pub fn compare(scenario: &Scenario) -> Result<Comparison> {
    let (sdvc, idm) = rayon::join(|| run(scenario, Controller::Sdvc), || run(scenario, Controller::Idm));
    Ok(Comparison { sdvc: sdvc?.metrics, idm: idm?.metrics })
}
