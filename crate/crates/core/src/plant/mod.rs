//! Electrical model of the UPS power path.
//!
//! ```text
//!  mains ─► fuse ─► transformer 16:1 ─► bridge + C1 ─┬─► LM7815 ─► 15V rail (relays, charger point)
//!                                                    └─► LM78L05 ─► 5V rail (MCU)
//!  battery 12V 17Ah ─► 555 astable ─► ÷2 flip-flop ─► push-pull FETs ─► 12-0-12/240V ─► load
//! ```
//!
//! AC quantities are carried as an RMS envelope plus a frequency. Sample level
//! waveforms exist only in [`waveform`], which renders the rectifier views for
//! plotting. Every function here is pure and works on plain value types.

pub mod waveform;

use std::f64::consts::SQRT_2;
use std::fmt;

pub use waveform::{waveform_synthesize, write_waveform_csv, Sample, WaveformKind, WaveformRequest};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PlantError {
    #[error("regulator overcurrent: {current_a} A drawn, {max_current_a} A allowed")]
    Overcurrent { current_a: f64, max_current_a: f64 },
    #[error("non-positive component value: {name} = {value}")]
    NonPositiveComponent { name: &'static str, value: f64 },
    #[error("inverter overload: {load_w} W requested, {max_load_w} W rated")]
    Overload { load_w: f64, max_load_w: f64 },
    #[error("bad sampling: {samples_per_cycle} samples per cycle (need at least {min})")]
    BadSampling { samples_per_cycle: usize, min: usize },
    #[error("invalid {name}: {reason}")]
    Invalid { name: &'static str, reason: &'static str },
}

fn require_positive(name: &'static str, value: f64) -> Result<(), PlantError> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(PlantError::NonPositiveComponent { name, value })
    }
}

/// Utility supply, tracked as an RMS envelope.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AcSource {
    pub rms_volts: f64,
    pub frequency_hz: f64,
    pub available: bool,
}

impl AcSource {
    pub fn new(rms_volts: f64, frequency_hz: f64) -> Self {
        Self { rms_volts, frequency_hz, available: true }
    }

    /// RMS seen downstream; an unavailable source reads as 0V.
    pub fn effective_rms(&self) -> f64 {
        if self.available {
            self.rms_volts.max(0.0)
        } else {
            0.0
        }
    }
}

impl Default for AcSource {
    fn default() -> Self {
        Self::new(220.0, 50.0)
    }
}

/// Step-down mains transformer, `turns_ratio` = N1/N2.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransformerSpec {
    pub turns_ratio: f64,
    pub max_power_w: f64,
}

impl TransformerSpec {
    pub fn validate(&self) -> Result<(), PlantError> {
        require_positive("turns_ratio", self.turns_ratio)?;
        require_positive("max_power_w", self.max_power_w)
    }
}

impl Default for TransformerSpec {
    /// 240/15V part, 16:1.
    fn default() -> Self {
        Self { turns_ratio: 16.0, max_power_w: 45.0 }
    }
}

/// Full-wave bridge followed by a reservoir capacitor with a bleed resistor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RectifierFilterSpec {
    pub diode_drop_v: f64,
    pub cap_farads: f64,
    pub bleed_ohms: f64,
}

impl RectifierFilterSpec {
    pub fn validate(&self) -> Result<(), PlantError> {
        if !(self.diode_drop_v.is_finite() && self.diode_drop_v >= 0.0) {
            return Err(PlantError::Invalid { name: "diode_drop_v", reason: "must be >= 0" });
        }
        require_positive("cap_farads", self.cap_farads)?;
        require_positive("bleed_ohms", self.bleed_ohms)
    }
}

impl Default for RectifierFilterSpec {
    /// 1N4001 bridge into C1 (2220µF) with the 300Ω bleeder.
    fn default() -> Self {
        Self { diode_drop_v: 0.7, cap_farads: 2220e-6, bleed_ohms: 300.0 }
    }
}

/// Three-terminal linear regulator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegulatorSpec {
    pub nominal_v: f64,
    pub dropout_v: f64,
    pub max_current_a: f64,
}

impl RegulatorSpec {
    pub const LM7815: Self = Self { nominal_v: 15.0, dropout_v: 2.0, max_current_a: 1.0 };
    pub const LM78L05: Self = Self { nominal_v: 5.0, dropout_v: 1.7, max_current_a: 1.0 };

    pub fn validate(&self) -> Result<(), PlantError> {
        require_positive("nominal_v", self.nominal_v)?;
        require_positive("dropout_v", self.dropout_v)?;
        require_positive("max_current_a", self.max_current_a)
    }
}

/// Lead-acid battery with a linear open-circuit voltage model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Battery {
    pub capacity_ah: f64,
    pub charge_ah: f64,
    pub nominal_v: f64,
    pub v_full: f64,
    pub v_empty: f64,
}

impl Battery {
    /// The 12V 17Ah unit, fully charged.
    pub fn sealed_12v_17ah() -> Self {
        Self { capacity_ah: 17.0, charge_ah: 17.0, nominal_v: 12.0, v_full: 13.5, v_empty: 6.0 }
    }

    /// Same battery with the charge that produces `volts` at the terminals
    /// (clamped to the modelled range).
    pub fn at_voltage(self, volts: f64) -> Self {
        let frac = ((volts - self.v_empty) / (self.v_full - self.v_empty)).clamp(0.0, 1.0);
        Self { charge_ah: frac * self.capacity_ah, ..self }
    }

    pub fn soc(&self) -> f64 {
        self.charge_ah / self.capacity_ah
    }

    pub fn validate(&self) -> Result<(), PlantError> {
        require_positive("capacity_ah", self.capacity_ah)?;
        if !(0.0..=self.capacity_ah).contains(&self.charge_ah) {
            return Err(PlantError::Invalid { name: "charge_ah", reason: "must lie in [0, capacity_ah]" });
        }
        if !(self.v_empty < self.nominal_v && self.nominal_v < self.v_full) {
            return Err(PlantError::Invalid { name: "battery voltages", reason: "need v_empty < nominal_v < v_full" });
        }
        Ok(())
    }
}

impl Default for Battery {
    fn default() -> Self {
        Self::sealed_12v_17ah()
    }
}

/// 555 astable + divide-by-two + push-pull stage + step-up transformer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InverterSpec {
    pub r1_ohms: f64,
    pub r2_ohms: f64,
    pub c_farads: f64,
    /// Winding ratio of the 12-0-12/240V transformer; caps the output at
    /// `stepup_ratio * nominal_input_v`.
    pub stepup_ratio: f64,
    pub efficiency: f64,
    /// Output at `nominal_input_v` on the battery.
    pub rated_output_v: f64,
    pub nominal_input_v: f64,
    pub max_load_w: f64,
}

impl InverterSpec {
    pub fn validate(&self) -> Result<(), PlantError> {
        require_positive("r1_ohms", self.r1_ohms)?;
        require_positive("r2_ohms", self.r2_ohms)?;
        require_positive("c_farads", self.c_farads)?;
        require_positive("stepup_ratio", self.stepup_ratio)?;
        require_positive("rated_output_v", self.rated_output_v)?;
        require_positive("nominal_input_v", self.nominal_input_v)?;
        require_positive("max_load_w", self.max_load_w)?;
        if !(self.efficiency > 0.0 && self.efficiency <= 1.0) {
            return Err(PlantError::Invalid { name: "efficiency", reason: "must lie in (0, 1]" });
        }
        Ok(())
    }

    pub fn max_output_v(&self) -> f64 {
        self.stepup_ratio * self.nominal_input_v
    }
}

impl Default for InverterSpec {
    /// R1 = 4.7k, C = 1µF, R2 trimmed to 4850Ω for a 100Hz astable.
    fn default() -> Self {
        Self {
            r1_ohms: 4700.0,
            r2_ohms: 4850.0,
            c_farads: 1e-6,
            stepup_ratio: 20.0,
            efficiency: 0.8,
            rated_output_v: 220.0,
            nominal_input_v: 12.0,
            max_load_w: 600.0,
        }
    }
}

/// Mains fuse. `blown` latches.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fuse {
    pub rating_a: f64,
    pub blown: bool,
}

impl Fuse {
    pub fn new(rating_a: f64) -> Self {
        Self { rating_a, blown: false }
    }
}

impl Default for Fuse {
    fn default() -> Self {
        Self::new(13.0)
    }
}

/// One line of the PC power budget.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoadPart {
    pub name: &'static str,
    pub watts: f64,
}

/// Per-part consumption of the target PC; sums to 484W.
pub const PC_LOAD_PARTS: [LoadPart; 10] = [
    LoadPart { name: "motherboard", watts: 30.0 },
    LoadPart { name: "cpu", watts: 30.0 },
    LoadPart { name: "hdd", watts: 15.0 },
    LoadPart { name: "ram", watts: 10.0 },
    LoadPart { name: "cdrom", watts: 25.0 },
    LoadPart { name: "nic", watts: 4.0 },
    LoadPart { name: "fdd", watts: 5.0 },
    LoadPart { name: "pci", watts: 5.0 },
    LoadPart { name: "agp", watts: 30.0 },
    LoadPart { name: "monitor", watts: 330.0 },
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoadProfile {
    pub watts: f64,
    pub power_factor: f64,
}

impl LoadProfile {
    pub fn new(watts: f64) -> Self {
        Self { watts, power_factor: 1.0 }
    }

    pub fn from_parts<'a>(parts: impl IntoIterator<Item = &'a LoadPart>) -> Self {
        Self::new(parts.into_iter().map(|p| p.watts).sum())
    }

    pub fn full_pc() -> Self {
        Self::from_parts(PC_LOAD_PARTS.iter())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LoadSource {
    Mains,
    Inverter,
    None,
}

impl LoadSource {
    pub fn as_str(self) -> &'static str {
        match self {
            LoadSource::Mains => "MAINS",
            LoadSource::Inverter => "INVERTER",
            LoadSource::None => "NONE",
        }
    }
}

impl fmt::Display for LoadSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantState {
    pub mains: AcSource,
    pub battery: Battery,
    pub fuse: Fuse,
    pub rail_15v: f64,
    pub rail_5v: f64,
    pub load_v_rms: f64,
    pub load_source: LoadSource,
    pub rla1_energized: bool,
    pub rla2_energized: bool,
}

/// Secondary RMS of the step-down transformer.
pub fn transformer_secondary(primary_rms: f64, spec: &TransformerSpec) -> f64 {
    primary_rms.max(0.0) / spec.turns_ratio
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RectifiedDc {
    /// Peak of the filtered output.
    pub dc_volts: f64,
    pub ripple_pp_v: f64,
}

impl RectifiedDc {
    /// Bottom of the ripple, which is what a downstream regulator must clear.
    pub fn trough_volts(&self) -> f64 {
        self.dc_volts - self.ripple_pp_v
    }
}

/// Bridge rectifier with capacitor filter. Two diodes conduct per half cycle;
/// ripple follows the full-wave approximation `I / (2 f C)`.
pub fn rectify_filter(
    secondary_rms: f64,
    load_current_a: f64,
    spec: &RectifierFilterSpec,
    mains_freq_hz: f64,
) -> RectifiedDc {
    let dc_volts = (secondary_rms * SQRT_2 - 2.0 * spec.diode_drop_v).max(0.0);
    if dc_volts == 0.0 || mains_freq_hz <= 0.0 {
        return RectifiedDc { dc_volts, ripple_pp_v: 0.0 };
    }
    let ripple = load_current_a.max(0.0) / (2.0 * mains_freq_hz * spec.cap_farads);
    RectifiedDc { dc_volts, ripple_pp_v: ripple.min(dc_volts) }
}

/// Linear regulator output. Below the dropout margin the output tracks the
/// input less the dropout voltage.
pub fn regulate(input_dc: f64, spec: &RegulatorSpec, current_a: f64) -> Result<f64, PlantError> {
    if current_a > spec.max_current_a {
        return Err(PlantError::Overcurrent { current_a, max_current_a: spec.max_current_a });
    }
    if input_dc >= spec.nominal_v + spec.dropout_v {
        Ok(spec.nominal_v)
    } else {
        Ok((input_dc - spec.dropout_v).max(0.0))
    }
}

/// Integrates a constant signed current (+charge, −discharge) over `dt_s`.
/// The clamp to `[0, capacity]` is the overcharge and deep-discharge guard.
pub fn battery_step(b: &Battery, current_a: f64, dt_s: f64) -> Battery {
    let charge_ah = (b.charge_ah + current_a * dt_s / 3600.0).clamp(0.0, b.capacity_ah);
    Battery { charge_ah, ..*b }
}

/// Terminal voltage, linear in state of charge between `v_empty` and `v_full`.
pub fn battery_voltage(b: &Battery) -> f64 {
    b.v_empty + (b.v_full - b.v_empty) * (b.charge_ah / b.capacity_ah)
}

/// 555 astable frequency, `1.44 / ((R1 + 2 R2) C)`.
pub fn oscillator_frequency(r1_ohms: f64, r2_ohms: f64, c_farads: f64) -> Result<f64, PlantError> {
    require_positive("r1_ohms", r1_ohms)?;
    require_positive("r2_ohms", r2_ohms)?;
    require_positive("c_farads", c_farads)?;
    Ok(1.44 / ((r1_ohms + 2.0 * r2_ohms) * c_farads))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InverterOutput {
    pub ac_rms: f64,
    pub freq_hz: f64,
    pub battery_current_a: f64,
}

pub fn inverter_output(battery_v: f64, spec: &InverterSpec, load_w: f64) -> Result<InverterOutput, PlantError> {
    if load_w > spec.max_load_w {
        return Err(PlantError::Overload { load_w, max_load_w: spec.max_load_w });
    }
    // The CD4013 toggles once per astable period.
    let freq_hz = oscillator_frequency(spec.r1_ohms, spec.r2_ohms, spec.c_farads)? / 2.0;
    if battery_v <= 0.0 {
        return Ok(InverterOutput { ac_rms: 0.0, freq_hz, battery_current_a: 0.0 });
    }
    let ac_rms = (spec.rated_output_v * battery_v / spec.nominal_input_v).clamp(0.0, spec.max_output_v());
    let battery_current_a = load_w.max(0.0) / (spec.efficiency * battery_v);
    Ok(InverterOutput { ac_rms, freq_hz, battery_current_a })
}

/// Instantaneous trip strictly above the rating. Never un-blows.
pub fn fuse_check(f: &Fuse, current_a: f64) -> Fuse {
    Fuse { blown: f.blown || current_a > f.rating_a, ..*f }
}
