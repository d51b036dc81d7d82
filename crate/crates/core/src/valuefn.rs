//! Per-vehicle value estimates and temporal-difference training.
//!
//! One small multilayer perceptron (tanh hidden layers, linear output) is
//! shared by all vehicles. The fleet value of a joint decision is the sum of
//! the per-vehicle estimates.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::IteratorRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::combos::Combo;
use crate::model::{Reward, Vehicle};
use crate::network::RoadNetwork;
use crate::rvrp::{RoutePlan, StopKind};

pub const FEATURE_DIM: usize = 7;
pub const DEFAULT_WIDTHS: [usize; 4] = [FEATURE_DIM, 32, 32, 1];
pub const DEFAULT_TARGET_REFRESH: u64 = 20;
pub const DEFAULT_REPLAY_CAPACITY: usize = 10_000;
const CHECKPOINT_MAGIC: &str = "ridepool-valuenet 1";

#[derive(Debug, Error)]
pub enum ValueError {
    #[error("expected {expected} inputs, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("non-finite gradient: {0}")]
    NonFinite(String),
    #[error("checkpoint line {line}: {message}")]
    Checkpoint { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Vehicle state right after committing to a plan, before new requests.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateFeatures {
    /// Coordinates of the vehicle's next node scaled into the unit square.
    pub location_embed: [f64; 2],
    /// Epoch index over horizon.
    pub time_of_day: f64,
    pub free_capacity: f64,
    pub onboard_count: f64,
    /// Mean headroom before each stop's deadline, in units of the pickup delay.
    pub plan_slack: f64,
    /// Remaining plan duration over `2 * pickup_delay * capacity`.
    pub plan_length: f64,
}

impl StateFeatures {
    pub fn to_array(&self) -> [f64; FEATURE_DIM] {
        [
            self.location_embed[0],
            self.location_embed[1],
            self.time_of_day,
            self.free_capacity,
            self.onboard_count,
            self.plan_slack,
            self.plan_length,
        ]
    }

    pub fn from_array(a: [f64; FEATURE_DIM]) -> Self {
        Self {
            location_embed: [a[0], a[1]],
            time_of_day: a[2],
            free_capacity: a[3],
            onboard_count: a[4],
            plan_slack: a[5],
            plan_length: a[6],
        }
    }
}

/// Features of `vehicle` after adopting `plan`, which serves the vehicle's
/// existing duties plus `combo`.
pub fn post_decision_features(
    net: &RoadNetwork,
    vehicle: &Vehicle,
    combo: &Combo,
    plan: &RoutePlan,
    epoch: usize,
    horizon: usize,
    pickup_delay: f64,
) -> StateFeatures {
    debug_assert!(combo
        .ids()
        .iter()
        .all(|r| plan.stops.iter().any(|s| s.request == *r && s.area.kind == StopKind::Pickup)));
    let (min_x, min_y, max_x, max_y) = net.bounds();
    let (x, y) = net.coords(vehicle.location);
    let scale = |v: f64, lo: f64, hi: f64| if hi > lo { ((v - lo) / (hi - lo)).clamp(0.0, 1.0) } else { 0.0 };
    let cap = vehicle.capacity.max(1) as f64;
    let pickups = plan.stops.iter().filter(|s| s.area.kind == StopKind::Pickup).count();
    let load = (vehicle.onboard.len() + pickups) as f64;
    let plan_slack = if plan.stops.is_empty() {
        0.0
    } else {
        plan.stops.iter().map(|s| (s.deadline - s.service) / pickup_delay).sum::<f64>() / plan.stops.len() as f64
    };
    StateFeatures {
        location_embed: [scale(x, min_x, max_x), scale(y, min_y, max_y)],
        time_of_day: if horizon == 0 { 0.0 } else { (epoch as f64 / horizon as f64).min(1.0) },
        free_capacity: ((cap - load) / cap).clamp(0.0, 1.0),
        onboard_count: (vehicle.onboard.len() as f64 / cap).min(1.0),
        plan_slack,
        plan_length: (plan.end_time() - plan.start_time) / (2.0 * pickup_delay * cap),
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Layer {
    inputs: usize,
    outputs: usize,
    /// Row-major `outputs x inputs`.
    w: Vec<f64>,
    b: Vec<f64>,
}

/// Feed-forward network, tanh on hidden layers, identity on the output.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    layers: Vec<Layer>,
}

impl Mlp {
    pub fn zeros(widths: &[usize]) -> Result<Self, ValueError> {
        if widths.len() < 2 || widths.contains(&0) || *widths.last().unwrap() != 1 {
            return Err(ValueError::Argument(format!("bad layer widths {widths:?}")));
        }
        let layers = widths
            .windows(2)
            .map(|w| Layer { inputs: w[0], outputs: w[1], w: vec![0.0; w[0] * w[1]], b: vec![0.0; w[1]] })
            .collect();
        Ok(Self { layers })
    }

    /// Weights uniform in `±1/sqrt(fan_in)`, zero biases.
    pub fn random(widths: &[usize], seed: u64) -> Result<Self, ValueError> {
        let mut m = Self::zeros(widths)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for l in &mut m.layers {
            let a = 1.0 / (l.inputs as f64).sqrt();
            for w in &mut l.w {
                *w = rng.random_range(-a..a);
            }
        }
        Ok(m)
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.layers[0].inputs];
        w.extend(self.layers.iter().map(|l| l.outputs));
        w
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// All weights then biases, layer by layer.
    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            p.extend_from_slice(&l.w);
            p.extend_from_slice(&l.b);
        }
        p
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<(), ValueError> {
        if p.len() != self.param_count() {
            return Err(ValueError::Dimension { expected: self.param_count(), got: p.len() });
        }
        let mut i = 0;
        for l in &mut self.layers {
            let nw = l.w.len();
            l.w.copy_from_slice(&p[i..i + nw]);
            i += nw;
            let nb = l.b.len();
            l.b.copy_from_slice(&p[i..i + nb]);
            i += nb;
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<f64, ValueError> {
        if x.len() != self.input_dim() {
            return Err(ValueError::Dimension { expected: self.input_dim(), got: x.len() });
        }
        Ok(self.activations(x).last().unwrap()[0])
    }

    fn activations(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        let last = self.layers.len() - 1;
        for (k, l) in self.layers.iter().enumerate() {
            let input = acts.last().unwrap();
            let out: Vec<f64> = (0..l.outputs)
                .map(|o| {
                    let row = &l.w[o * l.inputs..(o + 1) * l.inputs];
                    let z = l.b[o] + row.iter().zip(input).map(|(w, v)| w * v).sum::<f64>();
                    if k == last { z } else { z.tanh() }
                })
                .collect();
            acts.push(out);
        }
        acts
    }

    /// Mean squared error over `(x, y)` pairs and its gradient with respect
    /// to [`Mlp::params`].
    pub fn mse_gradient(&self, xs: &[Vec<f64>], ys: &[f64]) -> Result<(f64, Vec<f64>), ValueError> {
        if xs.is_empty() || xs.len() != ys.len() {
            return Err(ValueError::Argument(format!("{} inputs for {} targets", xs.len(), ys.len())));
        }
        let n = xs.len() as f64;
        let mut grads: Vec<(Vec<f64>, Vec<f64>)> =
            self.layers.iter().map(|l| (vec![0.0; l.w.len()], vec![0.0; l.b.len()])).collect();
        let mut loss = 0.0;
        let last = self.layers.len() - 1;
        for (x, &y) in xs.iter().zip(ys) {
            if x.len() != self.input_dim() {
                return Err(ValueError::Dimension { expected: self.input_dim(), got: x.len() });
            }
            let acts = self.activations(x);
            let err = acts[self.layers.len()][0] - y;
            loss += err * err / n;
            // Gradient w.r.t. pre-activations of the current layer.
            let mut delta = vec![2.0 * err / n];
            for k in (0..=last).rev() {
                let l = &self.layers[k];
                let input = &acts[k];
                let (gw, gb) = &mut grads[k];
                for o in 0..l.outputs {
                    gb[o] += delta[o];
                    for i in 0..l.inputs {
                        gw[o * l.inputs + i] += delta[o] * input[i];
                    }
                }
                if k > 0 {
                    delta = (0..l.inputs)
                        .map(|i| {
                            let back: f64 = (0..l.outputs).map(|o| l.w[o * l.inputs + i] * delta[o]).sum();
                            back * (1.0 - input[i] * input[i])
                        })
                        .collect();
                }
            }
        }
        let flat = grads.into_iter().flat_map(|(w, b)| w.into_iter().chain(b)).collect();
        Ok((loss, flat))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub gamma: f64,
    pub target_refresh: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-3, gamma: 0.9, target_refresh: DEFAULT_TARGET_REFRESH }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Experience {
    pub features_post: StateFeatures,
    pub reward_next: Reward,
    pub features_post_next: StateFeatures,
}

/// Online network, a lagged copy used for targets, and training settings.
#[derive(Clone, Debug, PartialEq)]
pub struct ValueNet {
    pub online: Mlp,
    pub target: Mlp,
    pub config: TrainConfig,
    pub steps: u64,
}

impl ValueNet {
    pub fn new(widths: &[usize], seed: u64, config: TrainConfig) -> Result<Self, ValueError> {
        let online = Mlp::random(widths, seed)?;
        Ok(Self { target: online.clone(), online, config, steps: 0 })
    }

    pub fn with_defaults(seed: u64) -> Self {
        Self::new(&DEFAULT_WIDTHS, seed, TrainConfig::default()).expect("default widths are valid")
    }

    pub fn from_mlp(online: Mlp, config: TrainConfig) -> Self {
        Self { target: online.clone(), online, config, steps: 0 }
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<Reward, ValueError> {
        self.online.forward(x)
    }

    pub fn value(&self, f: &StateFeatures) -> Reward {
        self.online.forward(&f.to_array()).expect("feature width matches network")
    }

    /// Sum of per-vehicle values.
    pub fn joint_value(&self, features: &[StateFeatures]) -> Reward {
        features.iter().map(|f| self.value(f)).sum()
    }

    /// One SGD step toward `reward_next + gamma * target(features_post_next)`.
    /// Returns the mean squared TD error before the step.
    pub fn td_train(&mut self, batch: &[Experience], gamma: f64, lr: f64) -> Result<f64, ValueError> {
        if batch.is_empty() {
            return Err(ValueError::Argument("empty training batch".into()));
        }
        if !(0.0..1.0).contains(&gamma) || !(lr > 0.0 && lr.is_finite()) {
            return Err(ValueError::Argument(format!("gamma {gamma} or learning rate {lr} out of range")));
        }
        let xs: Vec<Vec<f64>> = batch.iter().map(|e| e.features_post.to_array().to_vec()).collect();
        let mut ys = Vec::with_capacity(batch.len());
        for e in batch {
            let y = if gamma == 0.0 {
                e.reward_next
            } else {
                e.reward_next + gamma * self.target.forward(&e.features_post_next.to_array())?
            };
            ys.push(y);
        }
        let (loss, grad) = self.online.mse_gradient(&xs, &ys)?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            let max_target = ys.iter().fold(0.0f64, |m, y| m.max(y.abs()));
            return Err(ValueError::NonFinite(format!(
                "batch of {}, loss {loss}, max |target| {max_target}, step {}",
                batch.len(),
                self.steps
            )));
        }
        let mut p = self.online.params();
        for (w, g) in p.iter_mut().zip(&grad) {
            *w -= lr * g;
        }
        self.online.set_params(&p)?;
        self.steps += 1;
        if self.config.target_refresh > 0 && self.steps.is_multiple_of(self.config.target_refresh) {
            self.target = self.online.clone();
        }
        Ok(loss)
    }

    /// Text checkpoint:
    ///
    /// ```text
    /// ridepool-valuenet 1
    /// widths 7 32 32 1
    /// config <learning_rate> <gamma> <target_refresh> <steps>
    /// online
    /// <weights of layer 1, row-major>
    /// <biases of layer 1>
    /// ...
    /// target
    /// ...
    /// ```
    ///
    /// Numbers use shortest round-trip formatting, so loading is lossless.
    pub fn to_checkpoint(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{CHECKPOINT_MAGIC}");
        let widths: Vec<String> = self.online.widths().iter().map(|w| w.to_string()).collect();
        let _ = writeln!(s, "widths {}", widths.join(" "));
        let c = &self.config;
        let _ = writeln!(s, "config {} {} {} {}", c.learning_rate, c.gamma, c.target_refresh, self.steps);
        for (name, m) in [("online", &self.online), ("target", &self.target)] {
            let _ = writeln!(s, "{name}");
            for l in &m.layers {
                for v in [&l.w, &l.b] {
                    let row: Vec<String> = v.iter().map(|x| x.to_string()).collect();
                    let _ = writeln!(s, "{}", row.join(" "));
                }
            }
        }
        s
    }

    pub fn from_checkpoint<R: BufRead>(reader: R) -> Result<Self, ValueError> {
        let lines: Vec<String> = reader.lines().collect::<Result<_, _>>()?;
        let err = |line: usize, m: &str| ValueError::Checkpoint { line, message: m.to_string() };
        let mut it = lines.iter().enumerate().map(|(i, l)| (i + 1, l.trim()));
        let mut next = |what: &str| it.next().ok_or_else(|| err(lines.len(), &format!("missing {what}")));
        let (n, magic) = next("header")?;
        if magic != CHECKPOINT_MAGIC {
            return Err(err(n, "unknown checkpoint header"));
        }
        let (n, wl) = next("widths")?;
        let widths: Vec<usize> = wl
            .strip_prefix("widths ")
            .ok_or_else(|| err(n, "expected widths"))?
            .split_whitespace()
            .map(|v| v.parse().map_err(|_| err(n, "bad width")))
            .collect::<Result<_, _>>()?;
        let (n, cl) = next("config")?;
        let cf: Vec<&str> = cl.strip_prefix("config ").ok_or_else(|| err(n, "expected config"))?.split_whitespace().collect();
        if cf.len() != 4 {
            return Err(err(n, "config needs 4 fields"));
        }
        let pf = |v: &str| v.parse::<f64>().map_err(|_| err(n, "bad config number"));
        let config = TrainConfig {
            learning_rate: pf(cf[0])?,
            gamma: pf(cf[1])?,
            target_refresh: cf[2].parse().map_err(|_| err(n, "bad refresh"))?,
        };
        let steps = cf[3].parse().map_err(|_| err(n, "bad steps"))?;
        let mut nets = Vec::new();
        for name in ["online", "target"] {
            let (n, l) = next(name)?;
            if l != name {
                return Err(err(n, &format!("expected {name}")));
            }
            let mut m = Mlp::zeros(&widths).map_err(|e| err(n, &e.to_string()))?;
            for layer in &mut m.layers {
                for v in [&mut layer.w, &mut layer.b] {
                    let (n, row) = next("weights")?;
                    let vals: Vec<f64> = row
                        .split_whitespace()
                        .map(|x| x.parse().map_err(|_| err(n, "bad weight")))
                        .collect::<Result<_, _>>()?;
                    if vals.len() != v.len() {
                        return Err(err(n, &format!("expected {} values, got {}", v.len(), vals.len())));
                    }
                    *v = vals;
                }
            }
            nets.push(m);
        }
        let target = nets.pop().unwrap();
        let online = nets.pop().unwrap();
        Ok(Self { online, target, config, steps })
    }

    pub fn save(&self, path: &Path) -> Result<(), ValueError> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.to_checkpoint().as_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ValueError> {
        Self::from_checkpoint(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

/// Fixed-size FIFO of experiences with seeded uniform sampling.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<Experience>,
    rng: ChaCha8Rng,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, rng: ChaCha8Rng) -> Self {
        Self { capacity: capacity.max(1), items: VecDeque::new(), rng }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, e: Experience) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(e);
    }

    /// Up to `n` distinct experiences, uniformly at random.
    pub fn sample(&mut self, n: usize) -> Vec<Experience> {
        let mut picked = (0..self.items.len()).choose_multiple(&mut self.rng, n.min(self.items.len()));
        picked.sort_unstable();
        picked.into_iter().map(|i| self.items[i]).collect()
    }
}
