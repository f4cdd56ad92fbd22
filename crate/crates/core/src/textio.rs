//! Delimited matrix text: one row per line, comma-separated, 17 significant
//! digits on output. Blank lines and `#` comments are skipped on input.

use std::io::{self, BufRead, Write};

use crate::error::{Error, Result};
use crate::matalg::Mat;

pub fn write_matrix<W: Write>(mut w: W, m: &Mat) -> io::Result<()> {
    for r in 0..m.nrows() {
        let row: Vec<String> = m.row(r).iter().map(|v| format!("{v:.16e}")).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

pub fn format_matrix(m: &Mat) -> String {
    let mut buf = Vec::new();
    write_matrix(&mut buf, m).expect("writing to a Vec cannot fail");
    String::from_utf8(buf).expect("ASCII output")
}

pub fn parse_matrix(text: &str) -> Result<Mat> {
    read_matrix(text.as_bytes())
}

pub fn read_matrix<R: BufRead>(r: R) -> Result<Mat> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line.map_err(|e| Error::InvalidInput(format!("read error: {e}")))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row = line
            .split(',')
            .map(|tok| {
                let tok = tok.trim();
                tok.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::InvalidInput(format!("line {}: bad number '{tok}'", lineno + 1)))
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::InvalidInput(format!(
                    "line {}: {} columns, expected {}",
                    lineno + 1,
                    row.len(),
                    first.len()
                )));
            }
        }
        rows.push(row);
    }
    let cols = rows.first().map_or(0, Vec::len);
    Ok(Mat::from_fn(rows.len(), cols, |r, c| rows[r][c]))
}
