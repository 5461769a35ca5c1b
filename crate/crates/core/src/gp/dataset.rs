use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::GpError;

/// One observed transition `(x, u, f(x, u))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionSample {
    pub state: Vec<f64>,
    pub control: Vec<f64>,
    pub next_state: Vec<f64>,
}

impl TransitionSample {
    /// Joint model input `w = (x, u)`.
    pub fn input(&self) -> Vec<f64> {
        let mut w = self.state.clone();
        w.extend_from_slice(&self.control);
        w
    }
}

/// Offline transition dataset with fixed state/control dimensions.
///
/// CSV layout: header `x0..x{n_x-1},u0..u{n_u-1},y0..y{n_x-1}`, one
/// transition per row, values written in shortest round-trip form so that
/// a write/read cycle is bit-exact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    n_x: usize,
    n_u: usize,
    samples: Vec<TransitionSample>,
}

impl Dataset {
    pub fn new(n_x: usize, n_u: usize) -> Self {
        Self { n_x, n_u, samples: Vec::new() }
    }

    pub fn from_samples(n_x: usize, n_u: usize, samples: Vec<TransitionSample>) -> Result<Self, GpError> {
        let mut ds = Self::new(n_x, n_u);
        for s in samples {
            ds.push(s)?;
        }
        Ok(ds)
    }

    pub fn push(&mut self, sample: TransitionSample) -> Result<(), GpError> {
        for (len, expected) in [
            (sample.state.len(), self.n_x),
            (sample.control.len(), self.n_u),
            (sample.next_state.len(), self.n_x),
        ] {
            if len != expected {
                return Err(GpError::DimensionMismatch { expected, got: len });
            }
        }
        if !sample.state.iter().chain(&sample.control).chain(&sample.next_state).all(|v| v.is_finite()) {
            return Err(GpError::NonFinite("transition sample"));
        }
        self.samples.push(sample);
        Ok(())
    }

    pub fn n_x(&self) -> usize {
        self.n_x
    }

    pub fn n_u(&self) -> usize {
        self.n_u
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[TransitionSample] {
        &self.samples
    }

    pub fn header(&self) -> Vec<String> {
        (0..self.n_x)
            .map(|i| format!("x{i}"))
            .chain((0..self.n_u).map(|i| format!("u{i}")))
            .chain((0..self.n_x).map(|i| format!("y{i}")))
            .collect()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), GpError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(self.header())?;
        for s in &self.samples {
            w.write_record(s.state.iter().chain(&s.control).chain(&s.next_state).map(|v| v.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }

    /// Parses the CSV layout; dimensions are recovered from the header.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self, GpError> {
        let mut r = csv::Reader::from_reader(reader);
        let header: Vec<String> = r.headers()?.iter().map(|h| h.trim().to_string()).collect();
        let count = |prefix: char| header.iter().filter(|h| h.starts_with(prefix)).count();
        let (n_x, n_u) = (count('x'), count('u'));
        let mut ds = Dataset::new(n_x, n_u);
        if header != ds.header() || count('y') != n_x {
            return Err(GpError::Format(format!("unexpected dataset header {header:?}")));
        }
        for (row, record) in r.records().enumerate() {
            let record = record?;
            let values = record
                .iter()
                .map(|v| v.trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| GpError::Format(format!("row {row}: {e}")))?;
            if values.len() != 2 * n_x + n_u {
                return Err(GpError::Format(format!("row {row} has {} fields", values.len())));
            }
            ds.push(TransitionSample {
                state: values[..n_x].to_vec(),
                control: values[n_x..n_x + n_u].to_vec(),
                next_state: values[n_x + n_u..].to_vec(),
            })?;
        }
        Ok(ds)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), GpError> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, GpError> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}
