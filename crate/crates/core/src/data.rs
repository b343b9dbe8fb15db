//! Clustered (x, y) data and its CSV form `cluster,x,y`.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One cluster of paired observations.
#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub label: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl Cluster {
    pub fn new(label: impl Into<String>, x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        let c = Cluster {
            label: label.into(),
            x,
            y,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    fn validate(&self) -> Result<()> {
        if self.x.len() != self.y.len() {
            return Err(Error::Data(format!(
                "cluster '{}' has {} x values and {} y values",
                self.label,
                self.x.len(),
                self.y.len()
            )));
        }
        if self.x.is_empty() {
            return Err(Error::Data(format!("cluster '{}' is empty", self.label)));
        }
        if let Some(j) = self.x.iter().chain(&self.y).position(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "cluster '{}' holds a non-finite value (entry {})",
                self.label,
                j % self.x.len()
            )));
        }
        Ok(())
    }
}

/// m clusters, cluster i holding n_i ≥ 1 pairs.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct HierarchicalDataset {
    pub clusters: Vec<Cluster>,
}

#[derive(Serialize, Deserialize)]
struct Row<'a> {
    cluster: std::borrow::Cow<'a, str>,
    x: f64,
    y: f64,
}

impl HierarchicalDataset {
    pub fn new(clusters: Vec<Cluster>) -> Result<Self> {
        for c in &clusters {
            c.validate()?;
        }
        Ok(Self { clusters })
    }

    /// Number of clusters m.
    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.clusters.iter().map(Cluster::len).collect()
    }

    /// Total number of units Σ n_i.
    pub fn n_units(&self) -> usize {
        self.clusters.iter().map(Cluster::len).sum()
    }

    pub fn all_x(&self) -> Vec<f64> {
        self.clusters.iter().flat_map(|c| c.x.iter().copied()).collect()
    }

    pub fn all_y(&self) -> Vec<f64> {
        self.clusters.iter().flat_map(|c| c.y.iter().copied()).collect()
    }

    pub fn cluster(&self, label: &str) -> Option<&Cluster> {
        self.clusters.iter().find(|c| c.label == label)
    }

    /// Dataset made of the clusters at `indices` (repeats allowed), relabelled
    /// by position so that bootstrap duplicates stay distinct.
    pub fn select(&self, indices: &[usize]) -> Self {
        let clusters = indices
            .iter()
            .enumerate()
            .map(|(k, &i)| Cluster {
                label: format!("{}#{k}", self.clusters[i].label),
                ..self.clusters[i].clone()
            })
            .collect();
        Self { clusters }
    }

    /// Parses `cluster,x,y` CSV. Rows of one cluster need not be contiguous;
    /// clusters keep the order of their first appearance.
    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        for col in ["cluster", "x", "y"] {
            if !headers.iter().any(|h| h == col) {
                return Err(Error::Data(format!("missing column '{col}' in CSV header")));
            }
        }
        let mut clusters: Vec<Cluster> = Vec::new();
        let mut index = std::collections::HashMap::new();
        for (line, rec) in rdr.deserialize::<Row>().enumerate() {
            let row = rec.map_err(|e| Error::Data(format!("row {}: {e}", line + 1)))?;
            let i = *index.entry(row.cluster.to_string()).or_insert_with(|| {
                clusters.push(Cluster {
                    label: row.cluster.to_string(),
                    x: Vec::new(),
                    y: Vec::new(),
                });
                clusters.len() - 1
            });
            clusters[i].x.push(row.x);
            clusters[i].y.push(row.y);
        }
        if clusters.is_empty() {
            return Err(Error::Data("CSV holds no rows".into()));
        }
        Self::new(clusters)
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_csv_reader(std::fs::File::open(path)?)
    }

    /// Writes `cluster,x,y` rows. Floats use the shortest representation that
    /// parses back to the same value.
    pub fn to_csv_writer<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        for c in &self.clusters {
            for (&x, &y) in c.x.iter().zip(&c.y) {
                wtr.serialize(Row {
                    cluster: c.label.as_str().into(),
                    x,
                    y,
                })?;
            }
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.to_csv_writer(std::io::BufWriter::new(file))
    }
}
