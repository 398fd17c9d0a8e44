//! Independent simulations in bulk.
//!
//! Each run is strictly sequential, but runs do not share state, so batches
//! and parameter sweeps spread across threads with rayon when the `parallel`
//! feature is on. The sequential versions are always available and give
//! identical results.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::scenario::{run, EventKind, ScenarioEvent, SimConfig, SimError, Simulation, TraceRecord};

/// One scripted run.
#[derive(Debug, Clone)]
pub struct Job {
    pub events: Vec<ScenarioEvent>,
    pub config: SimConfig,
}

pub type JobResult = Result<Vec<TraceRecord>, SimError>;

pub fn run_batch_sequential(jobs: &[Job]) -> Vec<JobResult> {
    jobs.iter().map(|j| run(&j.events, &j.config)).collect()
}

#[cfg(feature = "parallel")]
pub fn run_batch_parallel(jobs: &[Job]) -> Vec<JobResult> {
    jobs.par_iter().map(|j| run(&j.events, &j.config)).collect()
}

/// Runs every job; results keep the input order.
pub fn run_batch(jobs: &[Job]) -> Vec<JobResult> {
    #[cfg(feature = "parallel")]
    {
        run_batch_parallel(jobs)
    }
    #[cfg(not(feature = "parallel"))]
    {
        run_batch_sequential(jobs)
    }
}

/// Seconds on the inverter, from `cfg.battery` with mains absent, until the
/// battery reaches the safe-battery threshold. `None` if that does not happen
/// within `cfg.max_duration_ms` (or the inverter cannot carry the load).
pub fn runtime_to_safe_cutoff(load_w: f64, cfg: &SimConfig) -> Result<Option<f64>, SimError> {
    let cfg = SimConfig { initial_mains_v: 0.0, initial_load_w: load_w, ..cfg.clone() };
    let cutoff = cfg.thresholds.safe_battery_v;
    let mut sim = Simulation::new(cfg.clone())?;
    sim.schedule(cfg.max_duration_ms * 1000, EventKind::End);
    while !sim.is_finished() {
        sim.step_instant()?;
        if sim.battery_voltage() <= cutoff {
            return Ok(Some(sim.now_us() as f64 / 1e6));
        }
        if sim.plant_state().load_v_rms == 0.0 && sim.now_us() > 0 {
            return Ok(None);
        }
    }
    Ok(None)
}

pub fn runtime_sweep_sequential(loads_w: &[f64], cfg: &SimConfig) -> Vec<Result<Option<f64>, SimError>> {
    loads_w.iter().map(|&w| runtime_to_safe_cutoff(w, cfg)).collect()
}

/// [`runtime_to_safe_cutoff`] for each load, in input order.
pub fn runtime_sweep(loads_w: &[f64], cfg: &SimConfig) -> Vec<Result<Option<f64>, SimError>> {
    #[cfg(feature = "parallel")]
    {
        loads_w.par_iter().map(|&w| runtime_to_safe_cutoff(w, cfg)).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        runtime_sweep_sequential(loads_w, cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn outage_job(batt_v: f64) -> Job {
        Job {
            events: vec![ScenarioEvent::new(0, EventKind::MainsSet(0.0)), ScenarioEvent::new(2_000, EventKind::End)],
            config: SimConfig::default().with_battery_voltage(batt_v),
        }
    }

    #[test]
    fn batch_matches_sequential() {
        let jobs: Vec<_> = [13.5, 12.0, 9.0, 6.5].iter().map(|&v| outage_job(v)).collect();
        assert_eq!(run_batch(&jobs), run_batch_sequential(&jobs));
    }

    #[test]
    fn runtime_is_monotone_in_load() {
        let cfg = SimConfig { plant_dt_us: 100_000, trace_every_us: 100_000, ..SimConfig::default() };
        let r = runtime_sweep(&[200.0, 400.0], &cfg);
        let a = r[0].clone().unwrap().unwrap();
        let b = r[1].clone().unwrap().unwrap();
        assert!(a > b, "{a} {b}");
        assert_eq!(r, runtime_sweep_sequential(&[200.0, 400.0], &cfg));
    }

    #[test]
    fn zero_load_never_cuts_off() {
        let cfg = SimConfig { max_duration_ms: 10_000, ..SimConfig::default() };
        assert_eq!(runtime_to_safe_cutoff(0.0, &cfg).unwrap(), None);
    }

    #[test]
    fn overload_yields_none() {
        assert_eq!(runtime_to_safe_cutoff(900.0, &SimConfig::default()).unwrap(), None);
    }
}
