use chrono::{DateTime, NaiveDate, NaiveDateTime, Utc};

/// Parses spans such as `90s`, `30m`, `12h`, `1d`, `2w` into seconds.
pub fn parse_span(s: &str) -> Result<i64, String> {
    let s = s.trim();
    let split =
        s.find(|c: char| !c.is_ascii_digit()).ok_or_else(|| format!("span `{s}` needs a unit (s, m, h, d, w)"))?;
    let (num, unit) = s.split_at(split);
    let n: i64 = num.parse().map_err(|_| format!("span `{s}` needs a leading integer"))?;
    let mult = match unit {
        "s" => 1,
        "m" | "min" => 60,
        "h" => 3600,
        "d" => 86_400,
        "w" => 7 * 86_400,
        other => return Err(format!("unknown span unit `{other}`")),
    };
    let secs = n
        .checked_mul(mult)
        .filter(|v| *v > 0 && *v <= 100 * 366 * 86_400)
        .ok_or_else(|| format!("span `{s}` must be positive and at most a century"))?;
    Ok(secs)
}

pub fn format_span(secs: i64) -> String {
    for (unit, m) in [("w", 7 * 86_400), ("d", 86_400), ("h", 3600), ("m", 60)] {
        if secs % m == 0 {
            return format!("{}{unit}", secs / m);
        }
    }
    format!("{secs}s")
}

/// `YYYY-MM-DD` (midnight UTC), `YYYY-MM-DDTHH:MM:SS` (UTC) or RFC 3339.
pub fn parse_instant(s: &str) -> Result<DateTime<Utc>, String> {
    let s = s.trim();
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Ok(t.with_timezone(&Utc));
    }
    if let Ok(t) = NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S") {
        return Ok(t.and_utc());
    }
    if let Ok(d) = NaiveDate::parse_from_str(s, "%Y-%m-%d") {
        return Ok(d.and_hms_opt(0, 0, 0).expect("midnight").and_utc());
    }
    Err(format!("cannot parse `{s}` as a date or RFC 3339 instant"))
}

/// Like [`parse_instant`], but a bare date means the end of that day, so that
/// `--to 2024-01-07` includes commits made on the 7th.
pub fn parse_instant_end(s: &str) -> Result<DateTime<Utc>, String> {
    let t = parse_instant(s)?;
    if NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d").is_ok() {
        Ok(t + chrono::Duration::seconds(86_399))
    } else {
        Ok(t)
    }
}
