//! Value-network training runs and paired comparisons of modes on shared
//! demand.

use serde::{Deserialize, Serialize};

use super::{run, Metrics, Mode, RequestStream, SimConfig, SimError};
use crate::network::RoadNetwork;
use crate::valuefn::ValueNet;

/// One full training run per seed, carrying the network from run to run.
/// Returns `start` unchanged when `seeds` is empty.
pub fn train_value<F>(
    net: &RoadNetwork,
    config: &SimConfig,
    seeds: &[u64],
    mut stream_for: F,
    start: Option<ValueNet>,
) -> Result<Option<ValueNet>, SimError>
where
    F: FnMut(u64) -> Result<RequestStream, SimError>,
{
    let mut value = start;
    for &seed in seeds {
        let mut c = config.clone();
        c.seed = seed;
        c.training = true;
        value = run(c, net, stream_for(seed)?, value.take())?.value;
    }
    Ok(value)
}

/// Modes and seeds to run on identical demand.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparePlan {
    pub base: SimConfig,
    pub modes: Vec<Mode>,
    pub seeds: Vec<u64>,
    /// Seeds of the training runs done per mode before evaluation.
    pub train_seeds: Vec<u64>,
    /// Keep training during the evaluation runs.
    pub train_during_eval: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub mode: Mode,
    pub seed: u64,
    pub metrics: Metrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    pub mode: Mode,
    pub mean_served: f64,
    pub mean_avg_distance_m: f64,
    /// Mean over runs and epochs of the assignment objective.
    pub mean_epoch_objective: f64,
    pub audit_violations: usize,
}

/// `mode` against `baseline`; positive percentages favor `mode`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Improvement {
    pub baseline: Mode,
    pub mode: Mode,
    pub served_pct: f64,
    /// Reduction of average distance per served request.
    pub avg_distance_pct: f64,
    pub seeds_served_ge: usize,
    pub seeds_distance_le: usize,
    /// Seeds where both of the above hold.
    pub seeds_both: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub plan: ComparePlan,
    pub runs: Vec<RunResult>,
    pub modes: Vec<ModeSummary>,
    pub improvements: Vec<Improvement>,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

fn pct(gain: f64, base: f64) -> f64 {
    if base == 0.0 {
        0.0
    } else {
        100.0 * gain / base
    }
}

/// Runs every mode on every seed. The stream for a seed is shared by all
/// modes, and must cover the whole horizon.
pub fn compare<F>(net: &RoadNetwork, plan: &ComparePlan, mut stream_for: F) -> Result<Comparison, SimError>
where
    F: FnMut(u64) -> Result<RequestStream, SimError>,
{
    if plan.modes.is_empty() || plan.seeds.is_empty() {
        return Err(SimError::Config("comparison needs at least one mode and one seed".into()));
    }
    plan.base.validate()?;
    let last_decision = (plan.base.horizon - 1) as f64 * plan.base.params.epoch_len;
    let mut runs = Vec::with_capacity(plan.modes.len() * plan.seeds.len());
    for &mode in &plan.modes {
        let mut c = plan.base.clone();
        c.mode = mode;
        let value = train_value(net, &c, &plan.train_seeds, &mut stream_for, None)?;
        for &seed in &plan.seeds {
            let stream = stream_for(seed)?;
            if stream.horizon_s < last_decision {
                return Err(SimError::Config(format!(
                    "request stream for seed {seed} ends at {} s, before the horizon's last epoch at {last_decision} s",
                    stream.horizon_s
                )));
            }
            let mut c = c.clone();
            c.seed = seed;
            c.training = plan.train_during_eval;
            let out = run(c, net, stream, value.clone())?;
            log::info!("{mode} seed {seed}: served {}", out.metrics.served);
            runs.push(RunResult { mode, seed, metrics: out.metrics });
        }
    }
    let of = |mode: Mode| runs.iter().filter(move |r| r.mode == mode);
    let modes: Vec<ModeSummary> = plan
        .modes
        .iter()
        .map(|&mode| ModeSummary {
            mode,
            mean_served: mean(of(mode).map(|r| r.metrics.served as f64)),
            mean_avg_distance_m: mean(of(mode).map(|r| r.metrics.avg_distance_per_served_m)),
            mean_epoch_objective: mean(of(mode).flat_map(|r| r.metrics.epochs.iter().map(|e| e.objective))),
            audit_violations: of(mode).map(|r| r.metrics.audit.total()).sum(),
        })
        .collect();
    let mut improvements = Vec::new();
    for (i, base) in modes.iter().enumerate() {
        for other in &modes[i + 1..] {
            let mut imp = Improvement {
                baseline: base.mode,
                mode: other.mode,
                served_pct: pct(other.mean_served - base.mean_served, base.mean_served),
                avg_distance_pct: pct(base.mean_avg_distance_m - other.mean_avg_distance_m, base.mean_avg_distance_m),
                seeds_served_ge: 0,
                seeds_distance_le: 0,
                seeds_both: 0,
            };
            for &seed in &plan.seeds {
                let find = |m: Mode| runs.iter().find(|r| r.mode == m && r.seed == seed).map(|r| &r.metrics);
                let (Some(b), Some(o)) = (find(base.mode), find(other.mode)) else { continue };
                let served = o.served >= b.served;
                let distance = o.avg_distance_per_served_m <= b.avg_distance_per_served_m;
                imp.seeds_served_ge += served as usize;
                imp.seeds_distance_le += distance as usize;
                imp.seeds_both += (served && distance) as usize;
            }
            improvements.push(imp);
        }
    }
    Ok(Comparison { plan: plan.clone(), runs, modes, improvements })
}
