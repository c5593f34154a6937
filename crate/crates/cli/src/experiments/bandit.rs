//! Contextual-bandit runs.
//!
//! Files: `bandit_rewards.csv` (round, reward_cum, method, seed; rounds start
//! at 1) and `bandit_summary.json` (seed-mean final reward per method).

use degp_core::bandit::{mean_trace, run_experiment, BanditEnv, MushroomEnv, Trace, WheelEnv};
use serde::Serialize;

use crate::config::{data_path, BanditEnvKind, ExperimentConfig};
use crate::error::CliResult;
use crate::output::OutputDir;

#[derive(Serialize)]
struct Row<'a> {
    round: usize,
    reward_cum: f64,
    method: &'a str,
    seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MethodSummary {
    pub method: String,
    pub mean_final_reward: f64,
    pub final_rewards: Vec<f64>,
}

pub fn traces(cfg: &ExperimentConfig) -> CliResult<Vec<Trace>> {
    let b = &cfg.bandit;
    let make_env = |seed: u64| -> degp_core::Result<Box<dyn BanditEnv>> {
        Ok(match b.env {
            BanditEnvKind::Wheel => Box::new(WheelEnv::new(b.wheel.clone(), seed)?),
            BanditEnvKind::Mushroom => Box::new(MushroomEnv::from_csv(data_path(&cfg.data_root, &b.mushroom_path), seed)?),
        })
    };
    Ok(run_experiment(make_env, &b.agents, &b.agent, b.rounds, &cfg.seeds)?)
}

pub fn summarize(cfg: &ExperimentConfig, traces: &[Trace]) -> Vec<MethodSummary> {
    cfg.bandit
        .agents
        .iter()
        .map(|a| {
            let name = a.name();
            MethodSummary {
                method: name.into(),
                mean_final_reward: mean_trace(traces, name).and_then(|t| t.last().copied()).unwrap_or(0.0),
                final_rewards: traces.iter().filter(|t| t.method == name).map(Trace::total).collect(),
            }
        })
        .collect()
}

pub fn run(cfg: &ExperimentConfig, dir: &mut OutputDir) -> CliResult<Vec<MethodSummary>> {
    let t0 = std::time::Instant::now();
    let traces = traces(cfg)?;
    dir.record_time("bandit", t0.elapsed().as_secs_f64());
    let mut rows = Vec::new();
    for t in &traces {
        for (r, &c) in t.cumulative.iter().enumerate() {
            rows.push(Row { round: r + 1, reward_cum: c, method: &t.method, seed: t.seed });
        }
    }
    dir.write_csv("bandit_rewards.csv", &rows)?;
    let summary = summarize(cfg, &traces);
    dir.write_json("bandit_summary.json", &summary)?;
    Ok(summary)
}
