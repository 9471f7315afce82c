//! Serialized output. Every float is printed with 17 significant digits
//! (C's `%.17g`), which round-trips any double.

use std::fmt::Write as _;

use serde::Serialize;
use serde_json::Value;

use crate::error::{CliError, CliResult};

/// `%.17g`: fixed notation for decimal exponents in `[-4, 17)`, scientific
/// otherwise, trailing zeros removed. Non-finite values print as `nan`,
/// `inf` and `-inf`.
pub fn fmt17(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        // Keep the sign of negative zero through a JSON round trip.
        return if x.is_sign_negative() { "-0.0".into() } else { "0".into() };
    }
    let sci = format!("{x:.16e}");
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-4..17).contains(&exp) {
        let fixed = format!("{:.*}", (16 - exp) as usize, x);
        trim_zeros(&fixed).to_string()
    } else {
        format!("{}e{}{:02}", trim_zeros(mantissa), if exp < 0 { '-' } else { '+' }, exp.abs())
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

pub fn to_value<T: Serialize>(v: &T) -> CliResult<Value> {
    serde_json::to_value(v).map_err(|e| CliError::Io(format!("serialization failed: {e}")))
}

/// Indented JSON. Arrays of scalars stay on one line.
pub fn json_pretty(v: &Value) -> String {
    let mut out = String::new();
    write_value(&mut out, v, Some(0));
    out.push('\n');
    out
}

/// Single-line JSON, as used for CSV metadata headers and stderr.
pub fn json_compact(v: &Value) -> String {
    let mut out = String::new();
    write_value(&mut out, v, None);
    out
}

fn is_scalar(v: &Value) -> bool {
    !matches!(v, Value::Array(_) | Value::Object(_))
}

fn write_value(out: &mut String, v: &Value, indent: Option<usize>) {
    match v {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                let _ = write!(out, "{i}");
            } else if let Some(u) = n.as_u64() {
                let _ = write!(out, "{u}");
            } else {
                // serde_json maps non-finite floats to null before we get here.
                out.push_str(&fmt17(n.as_f64().unwrap_or(f64::NAN)));
            }
        }
        Value::String(s) => out.push_str(&Value::String(s.clone()).to_string()),
        Value::Array(items) => {
            let inline = indent.is_none() || items.iter().all(is_scalar) || items.is_empty();
            out.push('[');
            for (k, item) in items.iter().enumerate() {
                if k > 0 {
                    out.push(',');
                    if inline && indent.is_some() {
                        out.push(' ');
                    }
                }
                match indent {
                    Some(d) if !inline => {
                        newline(out, d + 1);
                        write_value(out, item, Some(d + 1));
                    }
                    _ => write_value(out, item, indent.map(|d| d + 1)),
                }
            }
            if let (Some(d), false) = (indent, inline) {
                newline(out, d);
            }
            out.push(']');
        }
        Value::Object(map) => {
            out.push('{');
            for (k, (key, item)) in map.iter().enumerate() {
                if k > 0 {
                    out.push(',');
                }
                if let Some(d) = indent {
                    newline(out, d + 1);
                }
                out.push_str(&Value::String(key.clone()).to_string());
                out.push(':');
                if indent.is_some() {
                    out.push(' ');
                }
                write_value(out, item, indent.map(|d| d + 1));
            }
            if let (Some(d), false) = (indent, map.is_empty()) {
                newline(out, d);
            }
            out.push('}');
        }
    }
}

fn newline(out: &mut String, depth: usize) {
    out.push('\n');
    for _ in 0..depth {
        out.push_str("  ");
    }
}

/// Header line followed by one comma-separated row per entry.
pub fn csv_table(header: &[&str], rows: impl IntoIterator<Item = Vec<f64>>) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for row in rows {
        let cells: Vec<String> = row.iter().map(|v| fmt17(*v)).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

/// A `theta1,theta2` grid preceded by a `# {json}` metadata line.
pub fn csv_grid(metadata: &Value, points: &[[f64; 2]]) -> String {
    let mut out = format!("# {}\n", json_compact(metadata));
    out.push_str(&csv_table(&["theta1", "theta2"], points.iter().map(|p| p.to_vec())));
    out
}
