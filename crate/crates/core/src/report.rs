//! Output formatting shared by the CLI and the library: CSV with 12
//! significant digits, pretty JSON with stable key order, and plain text.

use std::io::{self, Write};

use serde::Serialize;

use crate::bellman::ThresholdFamily;

/// Output formats understood by the emitters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Json,
    Csv,
    Text,
}

impl std::str::FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "json" => Ok(Format::Json),
            "csv" => Ok(Format::Csv),
            "text" => Ok(Format::Text),
            other => Err(format!("unknown format '{other}' (json, csv, text)")),
        }
    }
}

/// `x` rounded to 12 significant digits, printed in the shortest form that
/// round-trips the rounded value.
pub fn fmt_sig(x: f64) -> String {
    if !x.is_finite() {
        return format!("{x}");
    }
    let rounded: f64 = format!("{x:.11e}").parse().expect("formatted float parses");
    let a = rounded.abs();
    if rounded == 0.0 || (1e-5..1e15).contains(&a) {
        format!("{rounded}")
    } else {
        format!("{rounded:e}")
    }
}

/// Quotes a CSV field when it contains a separator, quote or line break.
pub fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn write_json<T: Serialize>(mut out: impl Write, value: &T) -> io::Result<()> {
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)
}

/// Header row plus one row per record.
pub fn write_csv_rows(
    mut out: impl Write,
    header: &[&str],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> io::Result<()> {
    let head: Vec<String> = header.iter().map(|h| csv_field(h)).collect();
    writeln!(out, "{}", head.join(","))?;
    for row in rows {
        let row: Vec<String> = row.iter().map(|f| csv_field(f)).collect();
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

/// Aligned two-column `key  value` listing.
pub fn write_text_pairs(mut out: impl Write, pairs: &[(String, String)]) -> io::Result<()> {
    let width = pairs.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    for (k, v) in pairs {
        writeln!(out, "{k:<width$}  {v}")?;
    }
    Ok(())
}

/// Flattens a serializable report into dotted `key, value` pairs in
/// key order.
pub fn flatten(value: &impl Serialize) -> Vec<(String, String)> {
    fn walk(prefix: &str, v: &serde_json::Value, out: &mut Vec<(String, String)>) {
        use serde_json::Value;
        let key = |k: &str| {
            if prefix.is_empty() {
                k.to_string()
            } else {
                format!("{prefix}.{k}")
            }
        };
        match v {
            Value::Object(m) => m.iter().for_each(|(k, v)| walk(&key(k), v, out)),
            Value::Array(a) => a
                .iter()
                .enumerate()
                .for_each(|(i, v)| walk(&key(&i.to_string()), v, out)),
            Value::Number(n) => {
                let s = match n.as_f64() {
                    Some(f) if !n.is_i64() && !n.is_u64() => fmt_sig(f),
                    _ => n.to_string(),
                };
                out.push((prefix.to_string(), s));
            }
            Value::String(s) => out.push((prefix.to_string(), s.clone())),
            Value::Bool(b) => out.push((prefix.to_string(), b.to_string())),
            Value::Null => out.push((prefix.to_string(), String::new())),
        }
    }
    let v = serde_json::to_value(value).expect("report serializes");
    let mut out = Vec::new();
    walk("", &v, &mut out);
    out
}

/// Emits any report in the requested format; CSV is the flattened
/// `key,value` listing.
pub fn emit(out: impl Write, format: Format, value: &impl Serialize) -> io::Result<()> {
    match format {
        Format::Json => write_json(out, value),
        Format::Text => write_text_pairs(out, &flatten(value)),
        Format::Csv => write_csv_rows(
            out,
            &["key", "value"],
            flatten(value).into_iter().map(|(k, v)| vec![k, v]),
        ),
    }
}

/// Number of finite-horizon curves in the threshold figure.
pub const FIGURE_CURVES: usize = 10;
/// Right edge of the figure's y range.
pub const FIGURE_Y_MAX: f64 = 0.35;

/// Threshold curves `g_1..g_10` and `g_∞` on the grid, for
/// `y ∈ [0, 0.35]` or the whole of `[0, 1]`.
pub fn write_threshold_csv(out: impl Write, tf: &ThresholdFamily, full_range: bool) -> io::Result<()> {
    let curves = FIGURE_CURVES.min(tf.horizon());
    let mut header: Vec<String> = vec!["y".into()];
    header.extend((1..=curves).map(|k| format!("g_{k}")));
    header.push("g_inf".into());
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let grid = tf.grid();
    let rows = (0..grid.points())
        .map(|j| grid.x(j))
        .take_while(|&y| full_range || y <= FIGURE_Y_MAX + grid.step() * 1e-6)
        .enumerate()
        .map(|(j, y)| {
            let mut row = vec![fmt_sig(y)];
            row.extend((1..=curves).map(|k| fmt_sig(tf.g(k).at(j))));
            row.push(fmt_sig(tf.g_limit(y)));
            row
        });
    write_csv_rows(out, &header, rows)
}
