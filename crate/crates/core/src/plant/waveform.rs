//! Sample-level renderings of the rectifier stages, for plotting.

use std::f64::consts::PI;
use std::io::{self, Write};
use std::str::FromStr;

use super::{rectify_filter, PlantError, RectifierFilterSpec};

pub const MIN_SAMPLES_PER_CYCLE: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum WaveformKind {
    RawAc,
    UnfilteredDc,
    PartialFilter,
    FullFilter,
}

impl FromStr for WaveformKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "raw" => Ok(Self::RawAc),
            "unfiltered" => Ok(Self::UnfilteredDc),
            "partial" => Ok(Self::PartialFilter),
            "full" => Ok(Self::FullFilter),
            other => Err(format!("unknown waveform kind `{other}` (expected raw|unfiltered|partial|full)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WaveformRequest {
    pub kind: WaveformKind,
    /// Peak volts of the AC input (and of the rectified pulses).
    pub amplitude_v: f64,
    /// AC frequency; rectified views pulse at twice this.
    pub freq_hz: f64,
    pub duration_s: f64,
    pub samples_per_cycle: usize,
    pub filter: RectifierFilterSpec,
    /// DC load current, sets the ripple of the fully filtered view.
    pub load_current_a: f64,
}

impl WaveformRequest {
    pub fn new(kind: WaveformKind, amplitude_v: f64, freq_hz: f64, duration_s: f64) -> Self {
        Self {
            kind,
            amplitude_v,
            freq_hz,
            duration_s,
            samples_per_cycle: 64,
            filter: RectifierFilterSpec::default(),
            load_current_a: 0.15,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub t_s: f64,
    pub volts: f64,
}

/// Renders `duration_s * freq_hz * samples_per_cycle` samples starting at t=0.
///
/// The partial view is a peak detector: the reservoir capacitor follows the
/// rectified pulse upward and bleeds through `bleed_ohms` between peaks. The
/// full view is the steady-state midpoint, peak minus half the ripple.
pub fn waveform_synthesize(req: &WaveformRequest) -> Result<Vec<Sample>, PlantError> {
    if req.samples_per_cycle < MIN_SAMPLES_PER_CYCLE {
        return Err(PlantError::BadSampling { samples_per_cycle: req.samples_per_cycle, min: MIN_SAMPLES_PER_CYCLE });
    }
    if !(req.duration_s.is_finite() && req.duration_s > 0.0) {
        return Err(PlantError::Invalid { name: "duration_s", reason: "must be > 0" });
    }
    if !(req.freq_hz.is_finite() && req.freq_hz > 0.0) {
        return Err(PlantError::Invalid { name: "freq_hz", reason: "must be > 0" });
    }
    req.filter.validate()?;

    let per_second = req.freq_hz * req.samples_per_cycle as f64;
    let n = (req.duration_s * per_second).round() as usize;
    let dt = 1.0 / per_second;
    let phase_step = 2.0 * PI / req.samples_per_cycle as f64;
    let raw = |k: usize| req.amplitude_v * (phase_step * k as f64).sin();

    let samples = match req.kind {
        WaveformKind::RawAc => (0..n).map(|k| Sample { t_s: k as f64 * dt, volts: raw(k) }).collect(),
        WaveformKind::UnfilteredDc => (0..n).map(|k| Sample { t_s: k as f64 * dt, volts: raw(k).abs() }).collect(),
        WaveformKind::PartialFilter => {
            let decay = (-dt / (req.filter.bleed_ohms * req.filter.cap_farads)).exp();
            let mut held = 0.0_f64;
            (0..n)
                .map(|k| {
                    held = raw(k).abs().max(held * decay);
                    Sample { t_s: k as f64 * dt, volts: held }
                })
                .collect()
        }
        WaveformKind::FullFilter => {
            let peak = req.amplitude_v.abs();
            let ripple = ripple_for_peak(peak, req);
            let level = peak - ripple / 2.0;
            (0..n).map(|k| Sample { t_s: k as f64 * dt, volts: level }).collect()
        }
    };
    Ok(samples)
}

/// Ripple of the full-filter view: the rectifier formula applied at this peak.
pub fn ripple_for_peak(peak_v: f64, req: &WaveformRequest) -> f64 {
    // rectify_filter works from secondary RMS and subtracts the bridge drop;
    // undo both so the ripple clamp is taken against the rendered peak.
    let spec = RectifierFilterSpec { diode_drop_v: 0.0, ..req.filter };
    rectify_filter(peak_v / std::f64::consts::SQRT_2, req.load_current_a, &spec, req.freq_hz).ripple_pp_v
}

/// `%.9g` style rendering: nine significant digits, trailing zeros dropped.
pub fn format_sig9(x: f64) -> String {
    const PRECISION: i32 = 9;
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let sci = format!("{:.*e}", (PRECISION - 1) as usize, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent marker");
    let exp: i32 = exp.parse().expect("exponent digits");
    if !(-4..PRECISION).contains(&exp) {
        let mantissa = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mantissa}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (PRECISION - 1 - exp).max(0) as usize;
        trim_zeros(&format!("{x:.decimals$}")).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Writes `t_s,volts` CSV. Returns bytes written.
pub fn write_waveform_csv<W: Write>(samples: &[Sample], mut out: W) -> io::Result<usize> {
    let mut written = 0;
    let header = "t_s,volts\n";
    out.write_all(header.as_bytes())?;
    written += header.len();
    for s in samples {
        let line = format!("{},{}\n", format_sig9(s.t_s), format_sig9(s.volts));
        out.write_all(line.as_bytes())?;
        written += line.len();
    }
    out.flush()?;
    Ok(written)
}
