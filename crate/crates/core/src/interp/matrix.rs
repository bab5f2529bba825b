use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::Scalar;

/// Per-trip arrival times on a segment grid: `times[v][i]` is the time in
/// seconds at which trip `v` reaches grid point `i`, relative to its start.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrivalMatrix<T> {
    pub trip_ids: Vec<String>,
    /// Departure time of each trip, seconds since local midnight.
    pub depart_times: Vec<T>,
    /// Grid cum_distance of each column, meters.
    pub distances: Vec<T>,
    times: Vec<T>,
}

impl<T: Scalar> ArrivalMatrix<T> {
    pub fn new(
        trip_ids: Vec<String>,
        depart_times: Vec<T>,
        distances: Vec<T>,
        rows: Vec<Vec<T>>,
    ) -> Result<Self> {
        let width = distances.len();
        if rows.is_empty() {
            return Err(Error::InsufficientData("arrival matrix needs at least one trip".into()));
        }
        if trip_ids.len() != rows.len() || depart_times.len() != rows.len() {
            return Err(Error::Shape(format!(
                "{} rows, {} trip ids, {} departure times",
                rows.len(),
                trip_ids.len(),
                depart_times.len()
            )));
        }
        let mut times = Vec::with_capacity(rows.len() * width);
        for (v, row) in rows.into_iter().enumerate() {
            if row.len() != width {
                return Err(Error::Shape(format!(
                    "row {v} has {} columns, expected {width}",
                    row.len()
                )));
            }
            times.extend(row);
        }
        Ok(Self {
            trip_ids,
            depart_times,
            distances,
            times,
        })
    }

    pub fn n_trips(&self) -> usize {
        self.trip_ids.len()
    }

    pub fn n_segments(&self) -> usize {
        self.distances.len()
    }

    pub fn row(&self, v: usize) -> &[T] {
        let w = self.n_segments();
        &self.times[v * w..(v + 1) * w]
    }

    pub fn get(&self, v: usize, i: usize) -> T {
        self.times[v * self.n_segments() + i]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[T]> {
        self.times.chunks(self.n_segments().max(1))
    }

    /// New matrix with the given trips, in the given order.
    pub fn select_trips(&self, trips: &[usize]) -> Result<Self> {
        Self::new(
            trips.iter().map(|&v| self.trip_ids[v].clone()).collect(),
            trips.iter().map(|&v| self.depart_times[v]).collect(),
            self.distances.clone(),
            trips.iter().map(|&v| self.row(v).to_vec()).collect(),
        )
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["trip_id".to_string(), "depart_time".to_string()];
        header.extend(self.distances.iter().map(|d| format!("{d}")));
        w.write_record(&header)?;
        for v in 0..self.n_trips() {
            let mut rec = vec![self.trip_ids[v].clone(), format!("{}", self.depart_times[v])];
            rec.extend(self.row(v).iter().map(|t| format!("{t}")));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<arrival matrix>", e))?;
        Ok(())
    }

    /// Lines starting with `#` are skipped.
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new()
            .has_headers(true)
            .comment(Some(b'#'))
            .from_reader(input);
        let parse = |text: &str, line: usize| -> Result<T> {
            text.trim()
                .parse::<f64>()
                .ok()
                .and_then(T::from_f64)
                .ok_or(Error::Parse {
                    line,
                    message: format!("not a number: `{text}`"),
                })
        };
        let headers = r.headers()?.clone();
        if headers.len() < 3 || &headers[0] != "trip_id" || &headers[1] != "depart_time" {
            return Err(Error::Parse {
                line: 1,
                message: "expected header `trip_id,depart_time,<distances...>`".into(),
            });
        }
        let distances = headers
            .iter()
            .skip(2)
            .map(|h| parse(h, 1))
            .collect::<Result<Vec<T>>>()?;
        let (mut ids, mut departs, mut rows) = (Vec::new(), Vec::new(), Vec::new());
        for rec in r.records() {
            let rec = rec?;
            let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
            ids.push(rec[0].to_string());
            departs.push(parse(&rec[1], line)?);
            rows.push(
                rec.iter()
                    .skip(2)
                    .map(|f| parse(f, line))
                    .collect::<Result<Vec<T>>>()?,
            );
        }
        Self::new(ids, departs, distances, rows)
    }
}
