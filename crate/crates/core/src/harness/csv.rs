//! CSV writers and readers. Floats are written with 17 significant digits so
//! values survive a round trip.

use crate::error::{Error, Result};
use crate::harness::train::StepRecord;

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// `h,w,value` rows for an `height × width` grid in row-major order.
pub fn write_grid(height: usize, width: usize, values: &[f64]) -> String {
    let mut s = String::from("h,w,value\n");
    for h in 0..height {
        for w in 0..width {
            s.push_str(&format!("{h},{w},{}\n", fmt_f64(values[h * width + w])));
        }
    }
    s
}

/// Inverse of [`write_grid`]: returns `(height, width, values)`.
pub fn parse_grid(text: &str) -> Result<(usize, usize, Vec<f64>)> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("h,w,value") {
        return Err(Error::Parse("grid CSV must start with the header h,w,value".into()));
    }
    let mut cells = Vec::new();
    for (n, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let bad = || Error::Parse(format!("line {}: expected h,w,value, got {line:?}", n + 2));
        let mut parts = line.split(',');
        let h: usize = parts.next().and_then(|p| p.trim().parse().ok()).ok_or_else(bad)?;
        let w: usize = parts.next().and_then(|p| p.trim().parse().ok()).ok_or_else(bad)?;
        let v: f64 = parts.next().and_then(|p| p.trim().parse().ok()).ok_or_else(bad)?;
        if parts.next().is_some() {
            return Err(bad());
        }
        cells.push((h, w, v));
    }
    let height = cells.iter().map(|c| c.0 + 1).max().unwrap_or(0);
    let width = cells.iter().map(|c| c.1 + 1).max().unwrap_or(0);
    if cells.len() != height * width {
        return Err(Error::Parse(format!("{} cells do not fill a {height}x{width} grid", cells.len())));
    }
    let mut values = vec![f64::NAN; height * width];
    for (h, w, v) in cells {
        values[h * width + w] = v;
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::Parse("grid CSV has duplicate cells".into()));
    }
    Ok((height, width, values))
}

pub fn write_records(records: &[StepRecord]) -> String {
    let mut s = String::from("step,l_semantic,l_src,l_hdce,l_infonce,gamma,npc_mean\n");
    for r in records {
        let fields = [r.l_semantic, r.l_src, r.l_hdce, r.l_infonce, r.gamma, r.npc_mean];
        let body: Vec<String> = fields.iter().map(|v| fmt_f64(*v)).collect();
        s.push_str(&format!("{},{}\n", r.step, body.join(",")));
    }
    s
}
