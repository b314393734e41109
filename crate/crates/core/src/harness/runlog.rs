use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One logged update. Field order is the CSV column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub update: usize,
    pub method: String,
    pub seed: u64,
    pub train_criterion: f64,
    pub valid_criterion: f64,
    pub valid_ser: f64,
    pub entropy: f64,
    pub step_norm: f64,
    pub cg_iterations: usize,
    pub w1: Option<f64>,
    pub phi_decrease: Option<f64>,
}

pub const RUNLOG_COLUMNS: [&str; 11] = [
    "update",
    "method",
    "seed",
    "train_criterion",
    "valid_criterion",
    "valid_ser",
    "entropy",
    "step_norm",
    "cg_iterations",
    "w1",
    "phi_decrease",
];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunLog {
    pub rows: Vec<RunRow>,
}

impl RunLog {
    pub fn push(&mut self, row: RunRow) -> Result<()> {
        if let Some(last) = self.rows.last() {
            if row.update <= last.update && row.method == last.method && row.seed == last.seed {
                return Err(Error::Shape(format!("update index {} does not follow {}", row.update, last.update)));
            }
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn last(&self) -> Option<&RunRow> {
        self.rows.last()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
        wtr.write_record(RUNLOG_COLUMNS)?;
        for row in &self.rows {
            wtr.serialize(row)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        if header != RUNLOG_COLUMNS {
            return Err(Error::Shape(format!("unexpected run log header {header:?}")));
        }
        let mut log = RunLog::default();
        for row in rdr.deserialize() {
            log.push(row?)?;
        }
        Ok(log)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn row(update: usize, x: f64) -> RunRow {
        RunRow {
            update,
            method: "nghf".into(),
            seed: 3,
            train_criterion: x,
            valid_criterion: x / 3.0,
            valid_ser: 0.25,
            entropy: 1.0 + x,
            step_norm: x * 1e-7,
            cg_iterations: 16,
            w1: if update % 2 == 0 { Some(x * 0.1) } else { None },
            phi_decrease: Some(-x),
        }
    }

    #[test]
    fn update_index_must_increase() {
        let mut log = RunLog::default();
        log.push(row(1, 0.1)).unwrap();
        assert!(log.push(row(1, 0.2)).is_err());
    }

    proptest! {
        #[test]
        fn csv_round_trip_is_exact(xs in prop::collection::vec(-1e6f64..1e6, 0..20)) {
            let mut log = RunLog::default();
            for (i, x) in xs.iter().enumerate() {
                log.push(row(i + 1, *x)).unwrap();
            }
            let mut buf = Vec::new();
            log.write_csv(&mut buf).unwrap();
            let back = RunLog::read_csv(&buf[..]).unwrap();
            prop_assert_eq!(back, log);
        }
    }
}
