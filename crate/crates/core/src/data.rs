//! Regression data: compositional responses with their covariate rows, and
//! the `y1,...,ym,x1,...,xp` CSV layout used on disk.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::simplex::SimplexPoint;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    m: usize,
    p: usize,
    y: Vec<SimplexPoint>,
    x: Vec<Vec<f64>>,
}

impl Dataset {
    pub fn new(m: usize, p: usize) -> Self {
        Self { m, p, y: Vec::new(), x: Vec::new() }
    }

    pub fn from_parts(m: usize, p: usize, y: Vec<SimplexPoint>, x: Vec<Vec<f64>>) -> Result<Self> {
        let mut data = Self::new(m, p);
        for (yi, xi) in y.into_iter().zip(x) {
            data.push(yi, xi)?;
        }
        Ok(data)
    }

    pub fn push(&mut self, y: SimplexPoint, x: Vec<f64>) -> Result<()> {
        if y.dim() != self.m || x.len() != self.p {
            return Err(Error::Data(format!(
                "row has m={}, p={} but dataset has m={}, p={}",
                y.dim(),
                x.len(),
                self.m,
                self.p
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("covariates must be finite".into()));
        }
        self.y.push(y);
        self.x.push(x);
        Ok(())
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn y(&self, i: usize) -> &SimplexPoint {
        &self.y[i]
    }

    pub fn x(&self, i: usize) -> &[f64] {
        &self.x[i]
    }

    pub fn responses(&self) -> &[SimplexPoint] {
        &self.y
    }

    pub fn covariates(&self) -> impl Iterator<Item = &[f64]> {
        self.x.iter().map(Vec::as_slice)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        let header: Vec<String> = (1..=self.m)
            .map(|l| format!("y{l}"))
            .chain((1..=self.p).map(|r| format!("x{r}")))
            .collect();
        out.write_record(&header)?;
        for (y, x) in self.y.iter().zip(&self.x) {
            let row: Vec<String> = y.coords().iter().chain(x).map(|v| v.to_string()).collect();
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Reads a CSV whose header is `y1..ym` followed by `x1..xp`.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut input = csv::Reader::from_reader(reader);
        let header = input.headers()?.clone();
        let m = header.iter().take_while(|h| h.starts_with('y')).count();
        let p = header.len() - m;
        for (idx, name) in header.iter().enumerate() {
            let expected = if idx < m { format!("y{}", idx + 1) } else { format!("x{}", idx - m + 1) };
            if name.trim() != expected {
                return Err(Error::Data(format!("column {} is `{name}`, expected `{expected}`", idx + 1)));
            }
        }
        if m == 0 {
            return Err(Error::Data("no response columns (y1, ...)".into()));
        }
        let mut data = Self::new(m, p);
        for (row_idx, record) in input.records().enumerate() {
            let record = record?;
            let values: Vec<f64> = record
                .iter()
                .map(|v| {
                    v.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::Data(format!("row {}: cannot parse `{v}`", row_idx + 1)))
                })
                .collect::<Result<_>>()?;
            let y = SimplexPoint::new(values[..m].to_vec())
                .map_err(|e| Error::Data(format!("row {}: {e}", row_idx + 1)))?;
            data.push(y, values[m..].to_vec())?;
        }
        Ok(data)
    }
}
