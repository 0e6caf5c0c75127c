//! Uniformly sampled multichannel time series and its CSV form.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Formats a value with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// `values` holds `rows x channels` samples in row-major order; row `n` is
/// the state at `start_time + n * sample_step`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory<T> {
    sample_step: T,
    start_time: T,
    channels: Vec<String>,
    values: Vec<T>,
}

impl<T: Real> Trajectory<T> {
    pub fn new(sample_step: T, start_time: T, channels: Vec<String>, values: Vec<T>) -> Result<Self> {
        if channels.is_empty() {
            return Err(Error::InvalidParameter("trajectory needs at least one channel".into()));
        }
        if !values.len().is_multiple_of(channels.len()) {
            return Err(Error::DimensionMismatch {
                context: "trajectory values",
                expected: channels.len() * (values.len() / channels.len() + 1),
                found: values.len(),
            });
        }
        if !(sample_step > T::zero()) || !sample_step.is_finite() || !start_time.is_finite() {
            return Err(Error::InvalidParameter("sample step must be positive and finite".into()));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteState { step: pos / channels.len() });
        }
        Ok(Self { sample_step, start_time, channels, values })
    }

    /// A trajectory with channels but no samples.
    pub fn empty(sample_step: T, start_time: T, channels: Vec<String>) -> Result<Self> {
        Self::new(sample_step, start_time, channels, Vec::new())
    }

    pub fn sample_step(&self) -> T {
        self.sample_step
    }

    pub fn start_time(&self) -> T {
        self.start_time
    }

    pub fn channels(&self) -> &[String] {
        &self.channels
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.channels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn time(&self, row: usize) -> T {
        self.start_time + T::from_usize_lossy(row) * self.sample_step
    }

    pub fn row(&self, n: usize) -> &[T] {
        let c = self.channels.len();
        &self.values[n * c..(n + 1) * c]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[T]> {
        self.values.chunks_exact(self.channels.len())
    }

    pub fn channel_index(&self, name: &str) -> Result<usize> {
        self.channels
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::UnknownChannel(name.to_string()))
    }

    pub fn column(&self, c: usize) -> Vec<T> {
        self.rows().map(|r| r[c]).collect()
    }

    pub fn column_by_name(&self, name: &str) -> Result<Vec<T>> {
        Ok(self.column(self.channel_index(name)?))
    }

    /// Keeps only the named channels, in the given order.
    pub fn select(&self, names: &[String]) -> Result<Self> {
        let idx = names.iter().map(|n| self.channel_index(n)).collect::<Result<Vec<_>>>()?;
        let values = self.rows().flat_map(|r| idx.iter().map(move |&i| r[i])).collect();
        Self::new(self.sample_step, self.start_time, names.to_vec(), values)
    }

    /// Rows `range`, with the start time shifted accordingly.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Self {
        let c = self.channels.len();
        Self {
            sample_step: self.sample_step,
            start_time: self.time(range.start),
            channels: self.channels.clone(),
            values: self.values[range.start * c..range.end * c].to_vec(),
        }
    }

    /// Per-channel sample standard deviation (n - 1 denominator).
    pub fn channel_std(&self) -> Vec<T> {
        (0..self.n_channels()).map(|c| sample_std(&self.column(c))).collect()
    }

    pub(crate) fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["t".to_string()];
        header.extend(self.channels.iter().cloned());
        w.write_record(&header)?;
        for (n, row) in self.rows().enumerate() {
            let mut rec = Vec::with_capacity(row.len() + 1);
            rec.push(fmt_f64(self.time(n).as_f64()));
            rec.extend(row.iter().map(|v| fmt_f64(v.as_f64())));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(File::create(path)?)
    }

    /// Parses the CSV form. With fewer than two rows the sample step cannot
    /// be inferred, so `sample_step` must be given.
    pub fn read_csv<R: Read>(reader: R, sample_step: Option<T>) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let header = r.headers()?.clone();
        if header.len() < 2 || &header[0] != "t" {
            return Err(Error::Malformed("trajectory CSV header must be t,<channels...>".into()));
        }
        let channels: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        let mut times = Vec::new();
        let mut values = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            if rec.len() != header.len() {
                return Err(Error::Malformed(format!("row with {} fields, expected {}", rec.len(), header.len())));
            }
            let mut fields = rec.iter().map(|s| {
                s.trim().parse::<f64>().map_err(|e| Error::Malformed(format!("bad number '{s}': {e}")))
            });
            times.push(fields.next().expect("nonempty record")?);
            for f in fields {
                values.push(T::lit(f?));
            }
        }
        let step = match (sample_step, times.len()) {
            (Some(s), _) => s,
            (None, n) if n >= 2 => T::lit((times[n - 1] - times[0]) / (n - 1) as f64),
            _ => return Err(Error::Malformed("cannot infer sample step from fewer than two rows".into())),
        };
        let start = times.first().copied().map(T::lit).unwrap_or_else(T::zero);
        Self::new(step, start, channels, values)
    }

    pub fn load_csv(path: impl AsRef<Path>, sample_step: Option<T>) -> Result<Self> {
        Self::read_csv(File::open(path)?, sample_step)
    }
}

pub fn mean<T: Real>(xs: &[T]) -> T {
    if xs.is_empty() {
        return T::zero();
    }
    xs.iter().copied().sum::<T>() / T::from_usize_lossy(xs.len())
}

pub fn sample_std<T: Real>(xs: &[T]) -> T {
    if xs.len() < 2 {
        return T::zero();
    }
    let m = mean(xs);
    let ss: T = xs.iter().map(|&x| (x - m) * (x - m)).sum();
    (ss / T::from_usize_lossy(xs.len() - 1)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Trajectory<f64> {
        Trajectory::new(0.5, 1.0, vec!["x".into(), "y".into()], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.5]).unwrap()
    }

    #[test]
    fn accessors() {
        let t = sample();
        assert_eq!(t.len(), 3);
        assert_eq!(t.row(1), &[3.0, 4.0]);
        assert_eq!(t.column_by_name("y").unwrap(), vec![2.0, 4.0, 6.5]);
        assert_eq!(t.time(2), 2.0);
        let s = t.select(&["y".to_string()]).unwrap();
        assert_eq!(s.values(), &[2.0, 4.0, 6.5]);
        assert!(t.select(&["q".to_string()]).is_err());
    }

    #[test]
    fn rejects_non_finite_and_ragged() {
        assert!(Trajectory::new(0.1, 0.0, vec!["x".into()], vec![1.0, f64::NAN]).is_err());
        assert!(Trajectory::new(0.1, 0.0, vec!["x".into(), "y".into()], vec![1.0]).is_err());
        assert!(Trajectory::<f64>::new(0.1, 0.0, vec![], vec![]).is_err());
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let t = Trajectory::new(0.1, 0.0, vec!["x".into()], vec![0.1, 1.0 / 3.0, -2.5e-300, 7.0]).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,x\n"));
        let back = Trajectory::<f64>::read_csv(&buf[..], Some(0.1)).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn single_row_needs_step() {
        let t = Trajectory::new(0.1, 0.0, vec!["x".into()], vec![1.0]).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        assert!(Trajectory::<f64>::read_csv(&buf[..], None).is_err());
        assert_eq!(Trajectory::<f64>::read_csv(&buf[..], Some(0.1)).unwrap().len(), 1);
    }
}
