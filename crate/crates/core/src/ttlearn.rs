//! Expectation-maximization training of the travel-time model.
//!
//! Each iteration infers the most likely travel times of every training
//! trajectory under the current model (in parallel, one QP per trajectory),
//! then re-estimates every segment's mean and standard deviation from the
//! inferred times of all trajectories that traverse it.
//!
//! The reported log-likelihood after iteration `l` is the joint density of
//! the iteration's inferred times under the re-estimated model. Entry 0 holds
//! the first iteration's inferred times under the initial model.

use std::time::Instant;

use rayon::prelude::*;
use thiserror::Error;

use crate::roadnet::RoadNetwork;
use crate::trajmodel::Trajectory;
use crate::ttqp::{
    infer_travel_times, log_likelihood, InferredTimes, TravelTimeModel, TtError, DEFAULT_OMEGA_FLOOR,
};

pub const DEFAULT_ITERATIONS: usize = 5;
pub const DEFAULT_INITIAL_SPEED: f64 = 15.0;
pub const DEFAULT_OMEGA_FRACTION: f64 = 0.5;
pub const DEFAULT_DELTA: f64 = 0.05;
pub const EARLY_EXIT_TOL: f64 = 1e-6;
const DELTA_FLOOR: f64 = 1e-4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("no usable training trajectories ({skipped} skipped)")]
    NoUsableTrajectories { skipped: usize },
    #[error(transparent)]
    Model(#[from] TtError),
    #[error("cannot start worker pool: {0}")]
    Workers(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingConfig {
    pub iterations: usize,
    pub initial_speed: f64,
    pub initial_omega_fraction: f64,
    pub omega_floor: f64,
    /// Worker threads for the e-step; `None` uses the global pool.
    pub workers: Option<usize>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            iterations: DEFAULT_ITERATIONS,
            initial_speed: DEFAULT_INITIAL_SPEED,
            initial_omega_fraction: DEFAULT_OMEGA_FRACTION,
            omega_floor: DEFAULT_OMEGA_FLOOR,
            workers: None,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if self.iterations == 0 {
            return bad("iterations must be at least 1".into());
        }
        if !(self.initial_speed > 0.0 && self.initial_speed.is_finite()) {
            return bad(format!("initial_speed = {}", self.initial_speed));
        }
        if !(self.initial_omega_fraction > 0.0 && self.initial_omega_fraction <= 1.0) {
            return bad(format!("initial_omega_fraction = {}", self.initial_omega_fraction));
        }
        if !(self.omega_floor > 0.0 && self.omega_floor.is_finite()) {
            return bad(format!("omega_floor = {}", self.omega_floor));
        }
        if self.workers == Some(0) {
            return bad("workers must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingReport {
    pub log_likelihood: Vec<f64>,
    /// Wall time of each iteration; entry 0 is zero.
    pub seconds: Vec<f64>,
    pub segments_with_data: usize,
    pub segments_defaulted: usize,
    /// Trajectories excluded in at least one iteration.
    pub skipped: usize,
    pub trajectories_used: usize,
}

impl TrainingReport {
    pub fn iterations_run(&self) -> usize {
        self.log_likelihood.len().saturating_sub(1)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,log_likelihood,seconds\n");
        for (i, (ll, s)) in self.log_likelihood.iter().zip(&self.seconds).enumerate() {
            out.push_str(&format!("{i},{ll},{s}\n"));
        }
        out
    }
}

/// Standard deviation of the change in per-meter rate between consecutive
/// GPS blocks, each block traversed at constant speed.
pub fn estimate_delta(net: &RoadNetwork, trajs: &[Trajectory]) -> Option<f64> {
    let mut diffs = Vec::new();
    for t in trajs {
        let mut prev_rate: Option<f64> = None;
        let mut prev_time: Option<f64> = None;
        let mut path = 0.0;
        for (i, p) in t.points.iter().enumerate() {
            if i > 0 {
                path += net.length(p.segment);
            }
            if let Some(ts) = p.timestamp {
                if let Some(pt) = prev_time {
                    if path > 0.0 && ts > pt {
                        let rate = (ts - pt) / path;
                        if let Some(r) = prev_rate {
                            diffs.push(rate - r);
                        }
                        prev_rate = Some(rate);
                    }
                }
                prev_time = Some(ts);
                path = 0.0;
            }
        }
    }
    if diffs.len() < 2 {
        return None;
    }
    let n = diffs.len() as f64;
    let mean = diffs.iter().sum::<f64>() / n;
    let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / n;
    Some(var.sqrt().max(DELTA_FLOOR))
}

pub fn temporal_training(
    net: &RoadNetwork,
    train: &[Trajectory],
    config: &TrainingConfig,
    sigma_star: f64,
    delta: f64,
) -> Result<(TravelTimeModel, TrainingReport), TrainError> {
    config.validate()?;
    let initial = TravelTimeModel::from_speed(
        net,
        config.initial_speed,
        config.initial_omega_fraction,
        delta,
        sigma_star,
    )?;
    temporal_training_from(net, train, config, initial)
}

/// EM starting from an explicit initial model instead of the speed default.
pub fn temporal_training_from(
    net: &RoadNetwork,
    train: &[Trajectory],
    config: &TrainingConfig,
    initial: TravelTimeModel,
) -> Result<(TravelTimeModel, TrainingReport), TrainError> {
    config.validate()?;
    initial.validate()?;
    if initial.len() != net.len() {
        return Err(TrainError::Config(format!(
            "initial model has {} segments, network has {}",
            initial.len(),
            net.len()
        )));
    }
    match config.workers {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build()
            .map_err(|e| TrainError::Workers(e.to_string()))?
            .install(|| em(net, train, config, initial)),
        None => em(net, train, config, initial),
    }
}

fn em(
    net: &RoadNetwork,
    train: &[Trajectory],
    config: &TrainingConfig,
    initial: TravelTimeModel,
) -> Result<(TravelTimeModel, TrainingReport), TrainError> {
    let lengths = net.lengths();
    let defaults = initial.clone();
    let mut model = initial;
    let mut lls = Vec::new();
    let mut seconds = vec![0.0];
    let mut ever_skipped = vec![false; train.len()];
    let mut with_data = 0;
    let mut used = 0;

    for iter in 1..=config.iterations {
        let started = Instant::now();
        let inferred: Vec<Option<InferredTimes>> = train
            .par_iter()
            .map(|t| infer_travel_times(&model, t, net).ok())
            .collect();
        for (flag, inf) in ever_skipped.iter_mut().zip(&inferred) {
            *flag |= inf.is_none();
        }
        let usable: Vec<&InferredTimes> = inferred.iter().flatten().collect();
        if usable.is_empty() {
            return Err(TrainError::NoUsableTrajectories { skipped: train.len() });
        }
        used = usable.len();
        if iter == 1 {
            lls.push(total_log_likelihood(&model, &usable, &lengths));
        }

        let (next, covered) = m_step(&defaults, &usable, config.omega_floor);
        model = next;
        with_data = covered;
        lls.push(total_log_likelihood(&model, &usable, &lengths));
        seconds.push(started.elapsed().as_secs_f64());

        let (prev, cur) = (lls[lls.len() - 2], lls[lls.len() - 1]);
        if iter > 1 && (cur - prev) / prev.abs().max(f64::MIN_POSITIVE) < EARLY_EXIT_TOL {
            break;
        }
    }

    let report = TrainingReport {
        log_likelihood: lls,
        seconds,
        segments_with_data: with_data,
        segments_defaulted: net.len() - with_data,
        skipped: ever_skipped.iter().filter(|s| **s).count(),
        trajectories_used: used,
    };
    Ok((model, report))
}

fn total_log_likelihood(model: &TravelTimeModel, inferred: &[&InferredTimes], lengths: &[f64]) -> f64 {
    inferred
        .iter()
        .filter(|i| !i.blocks.is_empty())
        .map(|i| log_likelihood(model, &i.blocks, lengths, &i.t_prime))
        .sum()
}

/// Per-segment sample mean and standard deviation of the inferred times.
/// Segments with no inferred time keep their values from `defaults`.
fn m_step(defaults: &TravelTimeModel, inferred: &[&InferredTimes], omega_floor: f64) -> (TravelTimeModel, usize) {
    let n = defaults.len();
    let mut count = vec![0usize; n];
    let mut sum = vec![0.0; n];
    for inf in inferred {
        let segs = inf.blocks.iter().flat_map(|b| b.segments.iter());
        for (s, t) in segs.zip(&inf.t_prime) {
            count[s.index()] += 1;
            sum[s.index()] += t;
        }
    }
    let mean: Vec<f64> = (0..n).map(|i| if count[i] > 0 { sum[i] / count[i] as f64 } else { 0.0 }).collect();
    let mut sq = vec![0.0; n];
    for inf in inferred {
        let segs = inf.blocks.iter().flat_map(|b| b.segments.iter());
        for (s, t) in segs.zip(&inf.t_prime) {
            let d = t - mean[s.index()];
            sq[s.index()] += d * d;
        }
    }
    let mut model = defaults.clone();
    let mut covered = 0;
    for i in 0..n {
        if count[i] == 0 {
            continue;
        }
        covered += 1;
        model.phi[i] = mean[i].max(omega_floor);
        model.omega[i] = (sq[i] / count[i] as f64).sqrt().max(omega_floor);
    }
    (model, covered)
}
