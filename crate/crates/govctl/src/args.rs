use chrono::{DateTime, Duration, NaiveDate, Utc};
use ssgov_core::canonical::rfc3339;
use ssgov_core::scalar::{parse_date, Scalar};

/// Default first voyage day for `dayN` times.
pub const VOYAGE_START: &str = "2026-07-01";

/// Parses an evaluation time: `dayN` (noon UTC on day N of a voyage
/// starting at `voyage_start`), a `YYYY-MM-DD` date (noon UTC), or an
/// RFC 3339 instant.
pub fn parse_when(s: &str, voyage_start: NaiveDate) -> Result<DateTime<Utc>, String> {
    let noon = |d: NaiveDate| d.and_hms_opt(12, 0, 0).expect("valid time").and_utc();
    if let Some(n) = s.strip_prefix("day") {
        let n: i64 = n.parse().map_err(|_| format!("bad day number in {s:?}"))?;
        if n < 1 {
            return Err(format!("{s:?}: days count from 1"));
        }
        return Ok(noon(voyage_start + Duration::days(n - 1)));
    }
    if let Some(d) = parse_date(s) {
        return Ok(noon(d));
    }
    rfc3339::parse(s)
}

/// Parses a parameter value: `none`/`null`, `true`/`false`, an integer,
/// a `YYYY-MM-DD` date, or else a string.
pub fn parse_value(s: &str) -> Scalar {
    match s {
        "none" | "null" | "NULL" => Scalar::Null,
        "true" | "TRUE" => Scalar::Bool(true),
        "false" | "FALSE" => Scalar::Bool(false),
        _ => {
            if let Ok(i) = s.parse::<i64>() {
                Scalar::Int(i)
            } else if let Some(d) = parse_date(s) {
                Scalar::Date(d)
            } else {
                Scalar::Str(s.to_string())
            }
        }
    }
}

/// Splits `key=value`.
pub fn parse_param(s: &str) -> Result<(String, Scalar), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected key=value, got {s:?}"))?;
    if k.is_empty() {
        return Err(format!("empty parameter name in {s:?}"));
    }
    Ok((k.to_string(), parse_value(v)))
}
