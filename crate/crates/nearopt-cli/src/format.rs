//! Fixed six-significant-digit numbers, aligned text tables and CSV.

use nalgebra::DMatrix;

/// Six significant digits: positional between 1e-4 and 1e6, scientific
/// elsewhere.
pub fn sig6(v: f64) -> String {
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return "0".into();
    }
    // The exponent of the rounded scientific form already includes any
    // carry into a new leading digit.
    let sci = format!("{v:.5e}");
    let mag: i32 = sci[sci.find('e').expect("exponent") + 1..].parse().expect("integer exponent");
    if (-4..6).contains(&mag) {
        format!("{:.*}", (5 - mag) as usize, v)
    } else {
        format!("{v:.5e}")
    }
}

/// Columns right-aligned to their widest cell.
pub fn table(headers: &[&str], rows: &[Vec<String>]) -> String {
    let mut width: Vec<usize> = headers.iter().map(|h| h.len()).collect();
    for r in rows {
        for (w, c) in width.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let line = |cells: Vec<&str>| -> String {
        cells
            .iter()
            .zip(&width)
            .map(|(c, w)| format!("{c:>w$}"))
            .collect::<Vec<_>>()
            .join("  ")
    };
    let mut out = line(headers.to_vec());
    out.push('\n');
    for r in rows {
        out.push_str(&line(r.iter().map(String::as_str).collect()));
        out.push('\n');
    }
    out
}

pub fn matrix_table(m: &DMatrix<f64>) -> String {
    let rows: Vec<Vec<String>> = m.row_iter().map(|r| r.iter().map(|v| sig6(*v)).collect()).collect();
    let heads: Vec<String> = (0..m.ncols()).map(|j| format!("[{j}]")).collect();
    table(&heads.iter().map(String::as_str).collect::<Vec<_>>(), &rows)
}

/// Full-precision CSV, one matrix row per line.
pub fn matrix_csv(m: &DMatrix<f64>) -> String {
    let mut out = String::new();
    for r in m.row_iter() {
        out.push_str(&r.iter().map(|v| format!("{v:e}")).collect::<Vec<_>>().join(","));
        out.push('\n');
    }
    out
}

pub fn columns_csv(headers: &[&str], cols: &[Vec<f64>]) -> String {
    let mut out = headers.join(",");
    out.push('\n');
    let n = cols.iter().map(Vec::len).max().unwrap_or(0);
    for i in 0..n {
        let cells: Vec<String> = cols
            .iter()
            .map(|c| c.get(i).map_or(String::new(), |v| format!("{v:e}")))
            .collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}
