use super::{EventKind, ScenarioError, ScenarioEvent};

/// Parses a scenario script.
///
/// ```text
/// # comment
/// at <ms> mains <volts>
/// at <ms> load <watts>
/// at <ms> ack
/// end <ms>
/// ```
///
/// Events come back sorted by time; ties keep their script order.
pub fn parse_scenario(text: &str) -> Result<Vec<ScenarioEvent>, ScenarioError> {
    let mut events = Vec::new();
    let mut end_line = None;

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |reason: &str| ScenarioError::Parse { line: line_no, reason: reason.to_string() };
        let words: Vec<&str> = line.split_whitespace().collect();
        match words.as_slice() {
            ["end", ms] => {
                if let Some(first) = end_line {
                    return Err(err(&format!("duplicate `end` (first on line {first})")));
                }
                end_line = Some(line_no);
                events.push(ScenarioEvent::new(parse_ms(ms).map_err(|r| err(&r))?, EventKind::End));
            }
            ["at", ms, rest @ ..] => {
                let at_ms = parse_ms(ms).map_err(|r| err(&r))?;
                let kind = match rest {
                    ["mains", v] => EventKind::MainsSet(parse_quantity(v, "volts").map_err(|r| err(&r))?),
                    ["load", w] => EventKind::LoadSet(parse_quantity(w, "watts").map_err(|r| err(&r))?),
                    ["ack"] => EventKind::UserAck,
                    [] => return Err(err("missing directive after time")),
                    [other, ..] => return Err(err(&format!("unknown or malformed directive `{other}`"))),
                };
                events.push(ScenarioEvent::new(at_ms, kind));
            }
            [other, ..] => return Err(err(&format!("expected `at` or `end`, found `{other}`"))),
            [] => unreachable!("blank lines are skipped"),
        }
    }

    if end_line.is_none() {
        return Err(ScenarioError::MissingEnd);
    }
    events.sort_by_key(|e| e.at_ms);
    Ok(events)
}

fn parse_ms(s: &str) -> Result<u64, String> {
    if s.starts_with('-') {
        return Err(format!("negative time `{s}`"));
    }
    s.parse().map_err(|_| format!("bad time `{s}` (expected whole milliseconds)"))
}

fn parse_quantity(s: &str, unit: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("bad {unit} `{s}`"))?;
    if !v.is_finite() || v < 0.0 {
        return Err(format!("{unit} must be finite and >= 0, got `{s}`"));
    }
    Ok(v)
}
