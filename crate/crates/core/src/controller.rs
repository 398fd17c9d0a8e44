//! Emulation of the AT89C2051 control program.
//!
//! The firmware is a single Timer0 interrupt. Every overflow reloads the timer
//! and decrements `Ctr`; every eighth overflow it reads the ADC, looks the code
//! up in `PPData`, runs the charge logic and writes the parallel port:
//!
//! ```text
//! Timer:  reload TH0/TL0 ─► djnz Ctr ─► (Ctr = 0) ─► Ctr = 8
//!                                                    ADConversion  (PPReg = PPData[ADCReg])
//!                                                    ChargeBattery (Charger line)
//!                                                    UpdatePPort   (PPort = 255 | PPReg & !1)
//! ```
//!
//! Two charge policies are kept side by side. [`ControllerMode::Specified`]
//! uses the 11.5V/13.5V hysteresis band; [`ControllerMode::Listing`] follows
//! the assembly bit for bit, including the `cjne A,#10` comparison and the
//! forced `ADCReg.0`.

use std::fmt;

/// TH0 reload byte.
pub const TIMER0_RELOAD_HIGH: u8 = 11;
/// TL0 reload byte.
pub const TIMER0_RELOAD_LOW: u8 = 219;
/// Machine cycle at 12MHz with the 12-clock 8051 core.
pub const MACHINE_CYCLE_US: u64 = 1;
/// Timer overflows per control pass (`mov Ctr,#8`).
pub const TICKS_PER_CONTROL: u8 = 8;
/// ADC full-scale input after the battery divider.
pub const ADC_FULL_SCALE_V: f64 = 15.0;

pub const PORT_IDLE: u8 = 255;
/// Port bit 0, cleared while the load runs from the inverter.
pub const PORT_MAINS_BIT: u8 = 0x01;

pub const fn timer0_reload() -> u16 {
    (TIMER0_RELOAD_HIGH as u16) << 8 | TIMER0_RELOAD_LOW as u16
}

/// Time between Timer0 overflows.
pub const fn tick_period_us() -> u64 {
    (65536 - timer0_reload() as u64) * MACHINE_CYCLE_US
}

/// Time between control passes.
pub const fn control_period_us() -> u64 {
    tick_period_us() * TICKS_PER_CONTROL as u64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum ControllerMode {
    #[default]
    Specified,
    Listing,
}

impl ControllerMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ControllerMode::Specified => "SPECIFIED",
            ControllerMode::Listing => "LISTING",
        }
    }
}

impl fmt::Display for ControllerMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ControllerMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "specified" => Ok(Self::Specified),
            "listing" => Ok(Self::Listing),
            other => Err(format!("unknown controller mode `{other}` (expected specified|listing)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thresholds {
    /// Mains at or below this RMS transfers the load to the inverter.
    pub switch_ac_v: f64,
    pub safe_battery_v: f64,
    pub charge_start_v: f64,
    pub charge_full_v: f64,
}

impl Thresholds {
    pub fn validate(&self) -> Result<(), ControllerError> {
        let ordered = self.safe_battery_v < self.charge_start_v && self.charge_start_v < self.charge_full_v;
        if ordered && self.switch_ac_v > 0.0 {
            Ok(())
        } else {
            Err(ControllerError::BadThresholds(*self))
        }
    }
}

impl Default for Thresholds {
    fn default() -> Self {
        Self { switch_ac_v: 180.0, safe_battery_v: 6.0, charge_start_v: 11.5, charge_full_v: 13.5 }
    }
}

/// The firmware's `PPData` table, as assembled.
#[rustfmt::skip]
const PPDATA: [u8; 255] = [
    243,243,243,243,243, 242,242,242,242,242, 241,241,241,241,241, 240,240,240,240,240,
    239,239,239,239,239, 238,238,238,238,238, 237,237,237,237,237, 236,236,236,236,236,
    235,235,235,235,235, 234,234,234,234,234, 233,233,233,233,233, 232,232,232,232,232,
    231,231,231,231,231, 230,230,230,230,230, 229,229,229,229,229, 228,228,228,228,228,
    227,227,227,227,227, 226,226,226,226,226, 225,225,225,225,225, 224,224,224,224,224,
    223,223,223,223,223, 222,222,222,222,222, 221,221,221,221,221, 220,220,220,220,220,
    219,219,219,219,219, 218,218,218,218,218, 217,217,217,217,217, 216,216,216,216,216,
    215,215,215,215,215, 214,214,214,214,214, 213,213,213,213,213, 212,212,212,212,212,
    211,211,211,211,211, 210,210,210,210,210, 209,209,209,209,209, 208,208,208,208,208,
    207,207,207,207,207, 206,206,206,206,206, 205,205,205,205,205, 204,204,204,204,204,
    203,203,203,203,203, 202,202,202,202,202, 201,201,201,201,201, 200,200,200,200,200,
    199,199,199,199,199, 198,198,198,198,198, 197,197,197,197,197, 196,196,196,196,196,
    195,195,195,195,195, 194,194,194,194,194, 193,193,193,193,193,
];

/// Opaque calibration table mapping ADC codes to port bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PpDataTable {
    entries: [u8; 255],
}

impl PpDataTable {
    pub fn firmware() -> Self {
        Self { entries: PPDATA }
    }

    pub fn entries(&self) -> &[u8; 255] {
        &self.entries
    }
}

impl Default for PpDataTable {
    fn default() -> Self {
        Self::firmware()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RelayCommand {
    /// Charging relay: 15V charge point vs. dumb terminal.
    pub rla1_energized: bool,
    /// Two-pole transfer relay. Energized keeps the load on mains and parks
    /// the battery; released puts the inverter on the load.
    pub rla2_energized: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct McuState {
    /// `Ctr`, 1..=8.
    pub ctr: u8,
    /// `ADCReg` as last latched.
    pub adc_code: u8,
    /// Last byte written to the parallel port.
    pub pp_byte: u8,
    pub charger_active: bool,
    /// Comparator input as last sampled.
    pub mains_ok: bool,
    /// Safe-battery shutdown request, held until mains returns.
    pub safe_battery_latched: bool,
    pub next_tick_us: u64,
    pub mode: ControllerMode,
}

impl McuState {
    pub fn relays(&self) -> RelayCommand {
        relay_outputs(self.mains_ok, self.charger_active)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
pub enum ControllerError {
    #[error("clock skew: tick due at {expected_us}µs, invoked at {actual_us}µs")]
    ClockSkew { expected_us: u64, actual_us: u64 },
    #[error("thresholds out of order: {0:?}")]
    BadThresholds(Thresholds),
}

/// Power-on state with the default (specified) charge policy.
pub fn mcu_reset() -> McuState {
    mcu_reset_with_mode(ControllerMode::default())
}

pub fn mcu_reset_with_mode(mode: ControllerMode) -> McuState {
    McuState {
        ctr: TICKS_PER_CONTROL,
        adc_code: 255,
        pp_byte: PORT_IDLE,
        charger_active: false,
        mains_ok: true,
        safe_battery_latched: false,
        next_tick_us: tick_period_us(),
        mode,
    }
}

/// 8-bit conversion of the divided battery voltage, rounded to nearest.
pub fn adc_sample(battery_v: f64) -> u8 {
    (battery_v / ADC_FULL_SCALE_V * 255.0).round().clamp(0.0, 255.0) as u8
}

/// `movc A,@A+dptr`. Code 255 would read past the table; it is clamped to
/// the last entry.
pub fn lookup_ppdata(table: &PpDataTable, code: u8) -> u8 {
    table.entries[usize::from(code).min(table.entries.len() - 1)]
}

/// Hysteresis between `charge_start_v` and `charge_full_v`.
pub fn charge_decision(battery_v: f64, currently_charging: bool, th: &Thresholds) -> bool {
    if battery_v <= th.charge_start_v {
        true
    } else if battery_v >= th.charge_full_v {
        false
    } else {
        currently_charging
    }
}

/// `ChargeBattery` as assembled. The first `cjne A,#10` sends every code
/// except 10 to `ChargeBat`; code 10 then fails `cjne A,#12` and reaches
/// `StopCharging`. Returns the logical charging flag (the line is active low).
pub fn charge_decision_listing(code: u8) -> bool {
    if code != 10 {
        return true; // ChargeBat: clr Charger
    }
    // 10 != 12, StopCharging: setb Charger
    false
}

/// Comparator: mains is good strictly above the switch threshold.
pub fn mains_sense(ac_rms: f64, th: &Thresholds) -> bool {
    ac_rms > th.switch_ac_v
}

pub fn relay_outputs(mains_ok: bool, charging: bool) -> RelayCommand {
    RelayCommand { rla1_energized: mains_ok && charging, rla2_energized: mains_ok }
}

/// Unlatched shutdown condition. See [`control_step`] for the latch.
pub fn safe_battery_signal(battery_v: f64, on_battery: bool, th: &Thresholds) -> bool {
    on_battery && battery_v <= th.safe_battery_v
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ControlOutput {
    pub state: McuState,
    pub relays: RelayCommand,
    pub pp_byte: u8,
    pub shutdown: bool,
    /// True on the ticks that ran the ADC/charge/port pass.
    pub control_pass: bool,
}

/// One Timer0 overflow at `now_us`, which must equal `mcu.next_tick_us`.
pub fn control_step(
    mcu: &McuState,
    now_us: u64,
    battery_v: f64,
    ac_rms: f64,
    th: &Thresholds,
    table: &PpDataTable,
) -> Result<ControlOutput, ControllerError> {
    if now_us != mcu.next_tick_us {
        return Err(ControllerError::ClockSkew { expected_us: mcu.next_tick_us, actual_us: now_us });
    }
    let mut next = McuState { next_tick_us: mcu.next_tick_us + tick_period_us(), ..*mcu };

    // djnz Ctr, EndTimer
    next.ctr = mcu.ctr.saturating_sub(1);
    if next.ctr != 0 {
        return Ok(ControlOutput {
            state: next,
            relays: next.relays(),
            pp_byte: next.pp_byte,
            shutdown: next.safe_battery_latched,
            control_pass: false,
        });
    }
    next.ctr = TICKS_PER_CONTROL;
    let next = control_pass(&next, battery_v, ac_rms, th, table);

    Ok(ControlOutput {
        state: next,
        relays: next.relays(),
        pp_byte: next.pp_byte,
        shutdown: next.safe_battery_latched,
        control_pass: true,
    })
}

/// ADConversion, ChargeBattery and UpdatePPort, in listing order.
fn control_pass(mcu: &McuState, battery_v: f64, ac_rms: f64, th: &Thresholds, table: &PpDataTable) -> McuState {
    let mut next = *mcu;
    let mut code = adc_sample(battery_v);
    if mcu.mode == ControllerMode::Listing {
        code |= 1; // setb ADCReg0
    }
    next.adc_code = code;
    let level = lookup_ppdata(table, code);

    next.charger_active = match mcu.mode {
        ControllerMode::Specified => charge_decision(battery_v, mcu.charger_active, th),
        ControllerMode::Listing => charge_decision_listing(code),
    };

    next.mains_ok = mains_sense(ac_rms, th);
    next.pp_byte = if next.mains_ok { PORT_IDLE } else { level & !PORT_MAINS_BIT };

    if next.mains_ok {
        next.safe_battery_latched = false;
    } else if safe_battery_signal(battery_v, true, th) {
        next.safe_battery_latched = true;
    }
    next
}

/// Controller that has been running under steady inputs: the reset state
/// with one control pass applied and the timer not yet advanced.
pub fn power_on_settled(
    mode: ControllerMode,
    battery_v: f64,
    ac_rms: f64,
    th: &Thresholds,
    table: &PpDataTable,
) -> McuState {
    control_pass(&mcu_reset_with_mode(mode), battery_v, ac_rms, th, table)
}
