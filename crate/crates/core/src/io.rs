//! CSV output shared by every exporter: '.' decimal separator, 17 significant
//! digits, one header row, LF line endings.

use std::io::Write;

use crate::error::Result;

/// Formats a double with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    if x == 0.0 {
        // Avoid "-0" so that byte comparisons don't depend on signed zeros.
        return "0.0000000000000000e0".to_string();
    }
    format!("{x:.16e}")
}

pub struct CsvWriter<W: Write> {
    out: W,
    columns: usize,
}

impl<W: Write> CsvWriter<W> {
    pub fn new(mut out: W, header: &[&str]) -> Result<Self> {
        writeln!(out, "{}", header.join(","))?;
        Ok(Self {
            out,
            columns: header.len(),
        })
    }

    /// Writes one row; `None` becomes an empty field.
    pub fn row(&mut self, fields: &[Option<f64>]) -> Result<()> {
        debug_assert_eq!(fields.len(), self.columns);
        let line: Vec<String> = fields
            .iter()
            .map(|f| f.map(fmt_f64).unwrap_or_default())
            .collect();
        writeln!(self.out, "{}", line.join(","))?;
        Ok(())
    }

    pub fn values(&mut self, fields: &[f64]) -> Result<()> {
        let wrapped: Vec<Option<f64>> = fields.iter().copied().map(Some).collect();
        self.row(&wrapped)
    }

    /// Writes pre-formatted fields verbatim (integers, labels).
    pub fn raw(&mut self, fields: &[String]) -> Result<()> {
        writeln!(self.out, "{}", fields.join(","))?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        self.out.flush()?;
        Ok(self.out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_digits_round_trip() {
        for x in [0.1, -1.0 / 3.0, 6.02214076e23, 1e-300, 0.0, -0.0] {
            let s = fmt_f64(x);
            assert_eq!(s.parse::<f64>().unwrap(), x);
        }
        assert_eq!(fmt_f64(0.1), "1.0000000000000001e-1");
        assert_eq!(fmt_f64(-0.0), fmt_f64(0.0));
    }

    #[test]
    fn empty_fields_and_newlines() {
        let mut w = CsvWriter::new(Vec::new(), &["a", "b"]).unwrap();
        w.row(&[Some(1.0), None]).unwrap();
        let bytes = w.finish().unwrap();
        assert_eq!(
            String::from_utf8(bytes).unwrap(),
            "a,b\n1.0000000000000000e0,\n"
        );
    }
}
