use std::fmt::Write as _;
use std::io::{self, Write};

use super::engine::{EventTag, Observation};
use crate::hostagent::AgentPhase;
use crate::plant::LoadSource;

pub const TRACE_HEADER: &str =
    "t_ms,mains_v,source,batt_v,soc_pct,charging,rla1,rla2,load_v,pp_byte,agent_phase,event_tag";

/// One trace row.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub t_us: u64,
    pub mains_v: f64,
    pub source: LoadSource,
    pub batt_v: f64,
    pub soc_pct: f64,
    pub charging: bool,
    pub rla1: bool,
    pub rla2: bool,
    pub load_v: f64,
    pub pp_byte: u8,
    pub agent_phase: AgentPhase,
    pub tags: Vec<EventTag>,
}

impl TraceRecord {
    pub fn t_ms(&self) -> f64 {
        self.t_us as f64 / 1000.0
    }

    pub fn has(&self, tag: EventTag) -> bool {
        self.tags.contains(&tag)
    }

    /// `event_tag` column: tags joined with `|`, empty for periodic rows.
    pub fn event_tag(&self) -> String {
        self.tags.iter().map(|t| t.as_str()).collect::<Vec<_>>().join("|")
    }

    fn write_csv_line(&self, line: &mut String) {
        line.clear();
        // Exact: t is held in whole microseconds.
        let _ = write!(line, "{}.{:03}0,", self.t_us / 1000, self.t_us % 1000);
        let _ = write!(
            line,
            "{},{},{},{},{},{},{},{},{},{},{}",
            fixed4(self.mains_v),
            self.source,
            fixed4(self.batt_v),
            fixed4(self.soc_pct),
            u8::from(self.charging),
            u8::from(self.rla1),
            u8::from(self.rla2),
            fixed4(self.load_v),
            self.pp_byte,
            self.agent_phase,
            self.event_tag(),
        );
        line.push('\n');
    }
}

impl From<&Observation> for TraceRecord {
    fn from(o: &Observation) -> Self {
        Self {
            t_us: o.t_us,
            mains_v: o.mains_v,
            source: o.source,
            batt_v: o.batt_v,
            soc_pct: o.soc_pct,
            charging: o.charging,
            rla1: o.rla1,
            rla2: o.rla2,
            load_v: o.load_v,
            pp_byte: o.pp_byte,
            agent_phase: o.agent_phase,
            tags: o.tags.clone(),
        }
    }
}

fn fixed4(x: f64) -> String {
    let s = format!("{x:.4}");
    if s == "-0.0000" {
        "0.0000".to_string()
    } else {
        s
    }
}

/// Writes the trace as CSV and returns the number of bytes written.
pub fn write_trace<W: Write>(records: &[TraceRecord], mut out: W) -> io::Result<usize> {
    let mut written = 0;
    out.write_all(TRACE_HEADER.as_bytes())?;
    out.write_all(b"\n")?;
    written += TRACE_HEADER.len() + 1;
    let mut line = String::with_capacity(128);
    for r in records {
        r.write_csv_line(&mut line);
        out.write_all(line.as_bytes())?;
        written += line.len();
    }
    out.flush()?;
    Ok(written)
}
