use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{Dispatch, Scenario};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Input(format!("unknown split `{other}`"))),
        }
    }
}

/// One scenario with its optimal dispatch label.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: usize,
    pub split: Split,
    pub x: Scenario,
    pub label: Dispatch,
    /// Objective value of the label.
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub samples: Vec<Sample>,
}

impl LabeledDataset {
    pub fn split(&self, split: Split) -> Vec<&Sample> {
        self.samples.iter().filter(|s| s.split == split).collect()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Columns: `id, split, objective, x_0.., f_0..`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let (nx, nf) = match self.samples.first() {
            Some(s) => (s.x.0.len(), s.label.0.len()),
            None => (0, 0),
        };
        let mut header = vec!["id".to_string(), "split".into(), "objective".into()];
        header.extend((0..nx).map(|i| format!("x_{i}")));
        header.extend((0..nf).map(|i| format!("f_{i}")));
        w.write_record(&header)?;
        for s in &self.samples {
            let mut rec = vec![
                s.id.to_string(),
                s.split.to_string(),
                format!("{:e}", s.objective),
            ];
            rec.extend(s.x.0.iter().map(|v| format!("{v:e}")));
            rec.extend(s.label.0.iter().map(|v| format!("{v:e}")));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let header = r.headers()?.clone();
        let nx = header.iter().filter(|h| h.starts_with("x_")).count();
        let nf = header.iter().filter(|h| h.starts_with("f_")).count();
        if header.len() != 3 + nx + nf {
            return Err(Error::Input("unexpected dataset columns".into()));
        }
        let num = |s: &str| {
            s.parse::<f64>()
                .map_err(|e| Error::Input(format!("bad number `{s}`: {e}")))
        };
        let mut samples = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let id = rec[0]
                .parse::<usize>()
                .map_err(|e| Error::Input(format!("bad id: {e}")))?;
            let split = rec[1].parse()?;
            let objective = num(&rec[2])?;
            let x = (3..3 + nx)
                .map(|i| num(&rec[i]))
                .collect::<Result<Vec<_>>>()?;
            let f = (3 + nx..3 + nx + nf)
                .map(|i| num(&rec[i]))
                .collect::<Result<Vec<_>>>()?;
            samples.push(Sample {
                id,
                split,
                x: Scenario(x),
                label: Dispatch(f),
                objective,
            });
        }
        Ok(Self { samples })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let ds = LabeledDataset {
            samples: vec![
                Sample {
                    id: 0,
                    split: Split::Train,
                    x: Scenario(vec![0.1, 0.2, 0.3]),
                    label: Dispatch(vec![0.05, -0.01]),
                    objective: 0.25,
                },
                Sample {
                    id: 1,
                    split: Split::Test,
                    x: Scenario(vec![1.0 / 3.0, 0.0, 2.0]),
                    label: Dispatch(vec![1e-9, 0.0]),
                    objective: 1.5,
                },
            ],
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        ds.write_csv(&p).unwrap();
        assert_eq!(LabeledDataset::read_csv(&p).unwrap(), ds);
        assert_eq!(ds.split(Split::Test).len(), 1);
    }
}
