//! Reference model for cross-checking the engine. Everything here is written
//! out by hand from the hardware description and shares no code with the
//! crate beyond the event names.

#![allow(dead_code)]

use upsim::scenario::{run_observed, EventKind, Observation, ScenarioEvent, SimConfig};

pub const STEP_US: u64 = 10;
const PASS_US: u64 = 8 * (65_536 - (11 * 256 + 219));
const V_EMPTY: f64 = 6.0;
const V_FULL: f64 = 13.5;
const CAPACITY_AH: f64 = 17.0;
const ETA: f64 = 0.8;
const CHARGE_A: f64 = 2.0;
const WINDOW_US: u64 = 60_000_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RefInput {
    Mains(f64),
    Load(f64),
    Ack,
}

#[derive(Debug, Clone)]
pub struct RefScript {
    pub batt_v0: f64,
    pub mains0: f64,
    pub load0: f64,
    pub inputs: Vec<(u64, RefInput)>,
    pub end_ms: u64,
}

impl RefScript {
    pub fn events(&self) -> Vec<ScenarioEvent> {
        let mut ev: Vec<_> = self
            .inputs
            .iter()
            .map(|&(ms, i)| {
                let kind = match i {
                    RefInput::Mains(v) => EventKind::MainsSet(v),
                    RefInput::Load(w) => EventKind::LoadSet(w),
                    RefInput::Ack => EventKind::UserAck,
                };
                ScenarioEvent::new(ms, kind)
            })
            .collect();
        ev.push(ScenarioEvent::new(self.end_ms, EventKind::End));
        ev
    }

    pub fn config(&self) -> SimConfig {
        SimConfig { initial_mains_v: self.mains0, initial_load_w: self.load0, ..SimConfig::default() }
            .with_battery_voltage(self.batt_v0)
    }
}

/// Fixed-step reference run. Assumes mains is either absent (< 180V) or
/// high enough for the 15V rail to sit above the battery, and loads within
/// inverter and fuse ratings.
pub fn brute_force(s: &RefScript) -> Vec<(u64, &'static str)> {
    let volts = |q: f64| V_EMPTY + (V_FULL - V_EMPTY) * q / CAPACITY_AH;
    let mut q = (s.batt_v0 - V_EMPTY) / (V_FULL - V_EMPTY) * CAPACITY_AH;
    let mut mains = s.mains0;
    let mut load = s.load0;
    let mut ack = false;

    let mut counting: Option<u64> = None;
    let mut shut = false;
    let mut out = Vec::new();

    let mut inputs = s.inputs.clone();
    inputs.sort_by_key(|&(ms, _)| ms);
    let mut next_input = inputs.iter().take_while(|&&(ms, _)| ms == 0).count();
    for &(_, i) in &inputs[..next_input] {
        match i {
            RefInput::Mains(x) => mains = x,
            RefInput::Load(x) => load = x,
            RefInput::Ack => ack = true,
        }
    }
    // Power-on settles from the t = 0 inputs.
    let mut v = volts(q);
    let mut mains_ok = mains > 180.0;
    let mut charge = v <= 11.5;
    let mut latched = !mains_ok && v <= 6.0;

    let mut t = 0u64;
    let mut next_pass = PASS_US;
    loop {
        // Agent at t.
        match counting {
            None if latched && !shut => {
                counting = Some(t);
                out.push((t, "COUNTDOWN_START"));
            }
            Some(start) => {
                if ack {
                    out.push((t, "SHUTDOWN"));
                    counting = None;
                    shut = true;
                    load = 0.0;
                } else if mains_ok {
                    out.push((t, "COUNTDOWN_CANCEL"));
                    counting = None;
                } else if t - start >= WINDOW_US {
                    out.push((t, "SHUTDOWN"));
                    counting = None;
                    shut = true;
                    load = 0.0;
                }
            }
            None => {}
        }
        ack = false;
        if t >= s.end_ms * 1000 {
            break;
        }

        let current = if mains_ok {
            if mains_ok && charge {
                CHARGE_A
            } else {
                0.0
            }
        } else {
            -load / (ETA * volts(q))
        };
        q = (q + current * STEP_US as f64 / 3.6e9).clamp(0.0, CAPACITY_AH);
        t += STEP_US;

        while next_input < inputs.len() && inputs[next_input].0 * 1000 <= t {
            match inputs[next_input].1 {
                RefInput::Mains(x) => mains = x,
                RefInput::Load(x) => {
                    if !shut {
                        load = x
                    }
                }
                RefInput::Ack => ack = true,
            }
            next_input += 1;
        }

        if t >= next_pass {
            next_pass += PASS_US;
            v = volts(q);
            let ok = mains > 180.0;
            let rla1_before = mains_ok && charge;
            let new_charge = if v <= 11.5 {
                true
            } else if v >= 13.5 {
                false
            } else {
                charge
            };
            match (mains_ok, ok) {
                (true, false) => out.push((t, "TRANSFER_INVERTER")),
                (false, true) => out.push((t, "TRANSFER_MAINS")),
                _ => {}
            }
            match (rla1_before, ok && new_charge) {
                (false, true) => out.push((t, "CHARGE_START")),
                (true, false) => out.push((t, "CHARGE_STOP")),
                _ => {}
            }
            mains_ok = ok;
            charge = new_charge;
            if ok {
                latched = false;
            } else if v <= 6.0 {
                latched = true;
            }
        }
    }
    out
}

/// Tagged instants from the engine, flattened in emission order.
pub fn engine_events(events: &[ScenarioEvent], cfg: &SimConfig) -> Vec<(u64, &'static str)> {
    let mut out = Vec::new();
    run_observed(events, cfg, |o: &Observation| {
        for tag in &o.tags {
            out.push((o.t_us, tag.as_str()));
        }
    })
    .unwrap();
    out
}

/// Same names in the same order, times within `tol_us`.
pub fn sequences_match(a: &[(u64, &str)], b: &[(u64, &str)], tol_us: u64) -> Result<(), String> {
    let names = |s: &[(u64, &str)]| s.iter().map(|e| e.1.to_string()).collect::<Vec<_>>();
    if names(a) != names(b) {
        return Err(format!("order differs:\n  {a:?}\n  {b:?}"));
    }
    for (x, y) in a.iter().zip(b) {
        if x.0.abs_diff(y.0) > tol_us {
            return Err(format!("{} at {} vs {}", x.1, x.0, y.0));
        }
    }
    Ok(())
}

/// Scripts of at most two simulated seconds with at least one discrete event.
pub fn short_scripts() -> Vec<(&'static str, RefScript)> {
    vec![
        (
            "dimmer drop",
            RefScript {
                batt_v0: 13.5,
                mains0: 220.0,
                load0: 484.0,
                inputs: vec![(700, RefInput::Mains(150.0))],
                end_ms: 2_000,
            },
        ),
        (
            "outage then return",
            RefScript {
                batt_v0: 12.5,
                mains0: 220.0,
                load0: 484.0,
                inputs: vec![(200, RefInput::Mains(0.0)), (1_100, RefInput::Mains(220.0))],
                end_ms: 2_000,
            },
        ),
        (
            "low battery countdown cancelled",
            RefScript {
                batt_v0: 6.001,
                mains0: 0.0,
                load0: 484.0,
                inputs: vec![(1_200, RefInput::Mains(220.0))],
                end_ms: 2_000,
            },
        ),
        (
            "acknowledged shutdown",
            RefScript { batt_v0: 6.0, mains0: 0.0, load0: 484.0, inputs: vec![(900, RefInput::Ack)], end_ms: 2_000 },
        ),
        (
            "charge on return",
            RefScript {
                batt_v0: 11.45,
                mains0: 0.0,
                load0: 300.0,
                inputs: vec![(300, RefInput::Mains(220.0))],
                end_ms: 1_500,
            },
        ),
    ]
}
