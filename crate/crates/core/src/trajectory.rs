//! Uniformly sampled, named time series. Every simulation in this crate
//! returns one of these; CSV export writes a `t` column followed by the
//! series in declaration order, with enough digits to round-trip exactly.

use std::collections::HashMap;
use std::io::{self, Write};

#[derive(Debug, Clone)]
pub struct Trajectory {
    t0: f64,
    dt: f64,
    names: Vec<String>,
    index: HashMap<String, usize>,
    columns: Vec<Vec<f64>>,
}

impl Trajectory {
    /// New empty trajectory sampled at `t0 + k * dt`.
    ///
    /// Panics on a non-positive `dt` or duplicate series names.
    pub fn new(t0: f64, dt: f64, names: Vec<String>) -> Self {
        assert!(dt > 0.0, "sample spacing must be positive, got {dt}");
        let mut index = HashMap::with_capacity(names.len());
        for (k, name) in names.iter().enumerate() {
            let prev = index.insert(name.clone(), k);
            assert!(prev.is_none(), "duplicate series name {name:?}");
        }
        let columns = vec![Vec::new(); names.len()];
        Self {
            t0,
            dt,
            names,
            index,
            columns,
        }
    }

    /// Appends one sample; `row` must hold one value per series.
    pub fn push_sample(&mut self, row: &[f64]) {
        assert_eq!(
            row.len(),
            self.columns.len(),
            "row length {} does not match series count {}",
            row.len(),
            self.columns.len()
        );
        for (col, &v) in self.columns.iter_mut().zip(row) {
            col.push(v);
        }
    }

    pub fn len(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    /// Spacing between retained samples.
    pub fn sample_dt(&self) -> f64 {
        self.dt
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.len()).map(|k| self.time(k)).collect()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn series(&self, name: &str) -> Option<&[f64]> {
        self.index.get(name).map(|&k| self.columns[k].as_slice())
    }

    pub fn value(&self, name: &str, k: usize) -> Option<f64> {
        self.series(name).and_then(|s| s.get(k).copied())
    }

    /// Series `prefix_1, prefix_2, ...` in agent order, stopping at the
    /// first missing index. Empty when `prefix_1` does not exist.
    pub fn series_with_prefix(&self, prefix: &str) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for k in 1.. {
            match self.series(&format!("{prefix}_{k}")) {
                Some(s) => out.push(s),
                None => break,
            }
        }
        out
    }

    /// Writes `t,<series...>` rows. Numbers carry 17 significant digits so
    /// parsing the file reproduces the exact binary values.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        write!(w, "t")?;
        for name in &self.names {
            write!(w, ",{name}")?;
        }
        writeln!(w)?;
        for k in 0..self.len() {
            write!(w, "{}", format_sample(self.time(k)))?;
            for col in &self.columns {
                write!(w, ",{}", format_sample(col[k]))?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv output is ascii")
    }
}

/// 17 significant digits: enough for f64 round-trips.
pub(crate) fn format_sample(x: f64) -> String {
    format!("{x:.16e}")
}
