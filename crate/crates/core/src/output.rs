//! Time series with named columns, CSV and metadata sidecar output.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

/// Shortest-form-free rendering with 17 significant digits.
pub fn sig17(x: f64) -> String {
    if x == 0.0 {
        // Avoid "-0" so identical runs on different paths print the same.
        return "0.0000000000000000e0".to_string();
    }
    format!("{x:.16e}")
}

/// Sampled observables with run metadata.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trajectory {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub metadata: Vec<(String, String)>,
}

impl Trajectory {
    pub fn new<S: AsRef<str>>(columns: &[S]) -> Self {
        Trajectory { columns: columns.iter().map(|c| c.as_ref().to_string()).collect(), ..Default::default() }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn meta(&mut self, key: &str, value: impl ToString) {
        self.metadata.push((key.to_string(), value.to_string()));
    }

    pub fn meta_value(&self, key: &str) -> Option<&str> {
        self.metadata.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let idx = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[idx]).collect())
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "{}", self.columns.join(","))?;
        for row in &self.rows {
            let line: Vec<String> = row.iter().map(|x| sig17(*x)).collect();
            writeln!(w, "{}", line.join(","))?;
        }
        Ok(())
    }

    /// `key = value` lines, in insertion order.
    pub fn write_metadata<W: Write>(&self, mut w: W) -> io::Result<()> {
        for (k, v) in &self.metadata {
            writeln!(w, "{k} = {v}")?;
        }
        Ok(())
    }

    /// Writes `path` and `path.meta`.
    pub fn save(&self, path: &Path) -> io::Result<PathBuf> {
        self.write_csv(BufWriter::new(File::create(path)?))?;
        let meta = sidecar_path(path);
        self.write_metadata(BufWriter::new(File::create(&meta)?))?;
        Ok(meta)
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".meta");
    PathBuf::from(name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sig17_round_trips() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, f64::MIN_POSITIVE] {
            let s = sig17(x);
            assert_eq!(s.parse::<f64>().unwrap(), x);
        }
        assert_eq!(sig17(-0.0), sig17(0.0));
    }

    #[test]
    fn csv_layout() {
        let mut tr = Trajectory::new(&["t", "p_left"]);
        tr.push(vec![0.0, 1.0]);
        tr.push(vec![1.0, 0.5]);
        let mut buf = Vec::new();
        tr.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("t,p_left\n"));
        assert_eq!(s.lines().count(), 3);
        assert_eq!(tr.column("p_left").unwrap(), vec![1.0, 0.5]);
    }
}
