//! Discrete-event fleet simulator for the autoscaling controller.
//!
//! A fluid model steps one controller evaluation period at a time: workers
//! produce batches at a fixed per-worker capacity (bounded by buffer
//! space), the trainer consumes at its demand rate, and any shortfall
//! registers as a stall. The controller under test is the production
//! `evaluate_scaling` rule, fed synthesized worker statistics.

use crate::master::{evaluate_scaling, ScalerConfig};
use crate::model::WorkerStats;

#[derive(Debug, Clone)]
pub struct ScalingSimConfig {
    /// Trainer demand, batches per evaluation period.
    pub demand: f64,
    /// Per-worker production capacity, batches per period.
    pub capacity_per_worker: f64,
    /// Buffered batches one worker can hold.
    pub buffer_cap_per_worker: f64,
    pub initial_workers: u32,
    pub periods: u32,
    pub scaler: ScalerConfig,
}

impl Default for ScalingSimConfig {
    fn default() -> Self {
        // One evaluation period spans many batch intervals, so per-period
        // capacity sits far above the per-worker buffer floor.
        Self {
            demand: 64.0,
            capacity_per_worker: 20.0,
            buffer_cap_per_worker: 16.0,
            initial_workers: 1,
            periods: 40,
            scaler: ScalerConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingSimResult {
    pub workers_history: Vec<u32>,
    pub buffered_history: Vec<f64>,
    pub stall_periods: u32,
    pub final_workers: u32,
    pub final_buffered: f64,
}

/// Runs the fluid fleet model for `periods` evaluations.
pub fn run_scaling_sim(cfg: &ScalingSimConfig) -> ScalingSimResult {
    let mut workers = cfg.initial_workers.max(1);
    let mut buffered = 0.0f64;
    let mut workers_history = vec![workers];
    let mut buffered_history = vec![buffered];
    let mut stall_periods = 0;

    for _ in 0..cfg.periods {
        let n = workers as f64;
        let cap_total = cfg.buffer_cap_per_worker * n;
        // Workers retired by a previous decision drain their buffers to the
        // trainer on the way out; the backlog never exceeds fleet capacity.
        buffered = buffered.min(cap_total);
        let space = (cap_total - buffered).max(0.0);

        // Production fills the buffer as consumption drains it within the
        // same period, so space freed by demand is usable.
        let tentative = (n * cfg.capacity_per_worker).min(space + cfg.demand);
        let consumed = cfg.demand.min(buffered + tentative);
        let produced = (n * cfg.capacity_per_worker).min(space + consumed);
        let stalled = consumed + 1e-9 < cfg.demand;
        if stalled {
            stall_periods += 1;
        }
        buffered = (buffered + produced - consumed).clamp(0.0, cap_total);

        // Synthesize the per-worker statistics the controller would see.
        let cpu = (produced / (n * cfg.capacity_per_worker)).clamp(0.0, 1.0);
        let per_worker = buffered / n;
        let fleet: Vec<WorkerStats> = (0..workers)
            .map(|i| WorkerStats {
                cpu,
                memory: (per_worker / cfg.buffer_cap_per_worker).clamp(0.0, 1.0),
                network: cpu,
                buffered_batches: split_evenly(buffered, workers, i),
                splits_completed: 0,
            })
            .collect();
        let stalls = if stalled { 1 } else { 0 };
        let delta = evaluate_scaling(&cfg.scaler, &fleet, stalls, workers);
        workers = workers.saturating_add_signed(delta).max(1);

        workers_history.push(workers);
        buffered_history.push(buffered);
    }

    ScalingSimResult {
        final_workers: workers,
        final_buffered: buffered,
        workers_history,
        buffered_history,
        stall_periods,
    }
}

fn split_evenly(total: f64, n: u32, i: u32) -> u32 {
    let whole = total.floor() as u64;
    let base = whole / n as u64;
    let extra = whole % n as u64;
    (base + if (i as u64) < extra { 1 } else { 0 }) as u32
}
