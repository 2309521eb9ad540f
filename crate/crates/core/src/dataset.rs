//! Node-classification datasets: the in-memory container shared by real and
//! synthetic data, a file loader for each artifact, and statistics
//! cross-checks against published dataset tables.
//!
//! File formats (one artifact per file, minimal lossless encodings):
//! - edges: TSV, one `u<TAB>v` pair per line, 0-indexed
//! - features: CSV floats, one node per row
//! - labels: one integer per line
//! - splits: JSON array of `{"train": [...], "val": [...], "test": [...]}`
//!   objects, one per split index

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::synth::homophily;

/// A node-classification dataset with one active train/val/test split.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub graph: Graph,
    /// N x F_in raw node features.
    pub features: DMatrix<f64>,
    /// One class id per node, each in `0..num_classes`.
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub train_mask: Vec<usize>,
    pub val_mask: Vec<usize>,
    pub test_mask: Vec<usize>,
}

/// One split's index sets, as stored in a splits file.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Locations of the four dataset artifacts plus the split to activate.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetPaths {
    pub edges: PathBuf,
    pub features: PathBuf,
    pub labels: PathBuf,
    pub splits: PathBuf,
    #[serde(default)]
    pub split_index: usize,
}

impl Dataset {
    /// Validate shapes and index ranges; every loader and generator funnels
    /// through this before handing the dataset out.
    pub fn validate(&self) -> Result<()> {
        let n = self.graph.num_nodes();
        if self.features.nrows() != n {
            return Err(Error::Dataset(format!(
                "feature matrix has {} rows for a graph with {} nodes",
                self.features.nrows(),
                n
            )));
        }
        if self.labels.len() != n {
            return Err(Error::Dataset(format!(
                "{} labels for a graph with {} nodes",
                self.labels.len(),
                n
            )));
        }
        if let Some((node, &l)) = self
            .labels
            .iter()
            .enumerate()
            .find(|(_, &l)| l >= self.num_classes)
        {
            return Err(Error::Dataset(format!(
                "label {l} at node {node} out of range for {} classes",
                self.num_classes
            )));
        }
        for (name, mask) in [
            ("train", &self.train_mask),
            ("val", &self.val_mask),
            ("test", &self.test_mask),
        ] {
            if let Some(&i) = mask.iter().find(|&&i| i >= n) {
                return Err(Error::Dataset(format!(
                    "{name} mask index {i} out of range for {n} nodes"
                )));
            }
        }
        Ok(())
    }

    pub fn num_nodes(&self) -> usize {
        self.graph.num_nodes()
    }

    pub fn num_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn summary(&self) -> DatasetSummary {
        DatasetSummary {
            num_nodes: self.graph.num_nodes(),
            num_edges: self.graph.num_edges(),
            num_classes: self.num_classes,
            num_features: self.features.ncols(),
            homophily: homophily(&self.graph, &self.labels),
        }
    }

    /// Load a dataset from the four artifact files. Node count is taken from
    /// the feature file; the edge, label, and split files must agree with it.
    pub fn load(paths: &DatasetPaths) -> Result<Self> {
        let features = load_features(&paths.features)?;
        let labels = load_labels(&paths.labels)?;
        let splits = load_splits(&paths.splits)?;
        let split = splits.get(paths.split_index).ok_or_else(|| {
            Error::Dataset(format!(
                "split index {} out of range: {} holds {} split(s)",
                paths.split_index,
                paths.splits.display(),
                splits.len()
            ))
        })?;
        let edge_text = read_dataset_file(&paths.edges)?;
        let graph = Graph::build(features.nrows(), &Graph::parse_edge_list(&edge_text)?)?;
        let num_classes = labels.iter().max().map_or(0, |&m| m + 1);
        let ds = Dataset {
            graph,
            features,
            labels,
            num_classes,
            train_mask: split.train.clone(),
            val_mask: split.val.clone(),
            test_mask: split.test.clone(),
        };
        ds.validate()?;
        Ok(ds)
    }

    /// Write the dataset to `dir` in the four-file layout read by [`Dataset::load`]:
    /// edges.tsv, features.csv, labels.txt, splits.json (single split).
    pub fn save_to_dir(&self, dir: &Path) -> Result<DatasetPaths> {
        std::fs::create_dir_all(dir)?;
        let paths = DatasetPaths {
            edges: dir.join("edges.tsv"),
            features: dir.join("features.csv"),
            labels: dir.join("labels.txt"),
            splits: dir.join("splits.json"),
            split_index: 0,
        };
        let mut edges = String::new();
        for &(u, v) in self.graph.edges() {
            edges.push_str(&format!("{u}\t{v}\n"));
        }
        std::fs::write(&paths.edges, edges)?;

        let mut feat = String::new();
        for i in 0..self.features.nrows() {
            for j in 0..self.features.ncols() {
                if j > 0 {
                    feat.push(',');
                }
                feat.push_str(&format!("{}", self.features[(i, j)]));
            }
            feat.push('\n');
        }
        std::fs::write(&paths.features, feat)?;

        let labels: String = self.labels.iter().map(|l| format!("{l}\n")).collect();
        std::fs::write(&paths.labels, labels)?;

        let split = SplitSpec {
            train: self.train_mask.clone(),
            val: self.val_mask.clone(),
            test: self.test_mask.clone(),
        };
        let text = serde_json::to_string_pretty(&[split])
            .map_err(|e| Error::Dataset(format!("serialize splits: {e}")))?;
        std::fs::write(&paths.splits, text)?;
        Ok(paths)
    }
}

/// Read a dataset artifact, classifying missing or unreadable files as
/// dataset errors rather than bare I/O (the CLI maps those to exit code 3).
fn read_dataset_file(path: &Path) -> Result<String> {
    std::fs::read_to_string(path)
        .map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))
}

/// Parse a CSV float matrix, one node per row; all rows must have the same
/// column count.
pub fn load_features(path: &Path) -> Result<DMatrix<f64>> {
    let text = read_dataset_file(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = None;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|tok| {
                tok.trim().parse::<f64>().map_err(|_| {
                    Error::Dataset(format!(
                        "{}: line {}: {:?} is not a float",
                        path.display(),
                        lineno + 1,
                        tok
                    ))
                })
            })
            .collect::<Result<_>>()?;
        match width {
            None => width = Some(row.len()),
            Some(w) if w != row.len() => {
                return Err(Error::Dataset(format!(
                    "{}: line {}: expected {} columns, found {}",
                    path.display(),
                    lineno + 1,
                    w,
                    row.len()
                )));
            }
            Some(_) => {}
        }
        rows.push(row);
    }
    let ncols = width.unwrap_or(0);
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

/// Parse a label file: one integer per line, blank lines ignored.
pub fn load_labels(path: &Path) -> Result<Vec<usize>> {
    let text = read_dataset_file(path)?;
    let mut labels = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let l = line.parse::<usize>().map_err(|_| {
            Error::Dataset(format!(
                "{}: line {}: {:?} is not a class id",
                path.display(),
                lineno + 1,
                line
            ))
        })?;
        labels.push(l);
    }
    Ok(labels)
}

/// Parse a splits file: a JSON array of split objects.
pub fn load_splits(path: &Path) -> Result<Vec<SplitSpec>> {
    let text = read_dataset_file(path)?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Dataset(format!("{}: {}", path.display(), e)))
}

/// Headline statistics for logging and cross-checks.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DatasetSummary {
    pub num_nodes: usize,
    pub num_edges: usize,
    pub num_classes: usize,
    pub num_features: usize,
    pub homophily: f64,
}

impl std::fmt::Display for DatasetSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "N={} E={} classes={} features={} homophily={:.4}",
            self.num_nodes, self.num_edges, self.num_classes, self.num_features, self.homophily
        )
    }
}

/// Published statistics for a named dataset; `homophily` carries a tolerance.
#[derive(Clone, Copy, Debug)]
pub struct KnownStats {
    pub name: &'static str,
    pub num_nodes: usize,
    pub num_edges: usize,
    pub num_classes: usize,
    pub homophily: Option<(f64, f64)>,
}

/// Reference statistics for datasets whose tables we can cross-check.
pub fn known_dataset_stats(name: &str) -> Option<KnownStats> {
    match name.to_ascii_lowercase().as_str() {
        "cora" => Some(KnownStats {
            name: "cora",
            num_nodes: 2708,
            num_edges: 5278,
            num_classes: 6,
            homophily: Some((0.81, 0.01)),
        }),
        "texas" => Some(KnownStats {
            name: "texas",
            num_nodes: 183,
            num_edges: 295,
            num_classes: 5,
            homophily: None,
        }),
        _ => None,
    }
}

/// Compare a loaded dataset against its published row. Mismatches are
/// warnings, not errors: published tables disagree with raw artifacts often
/// enough that hard failures would block legitimate data.
pub fn check_against_known(summary: &DatasetSummary, known: &KnownStats) -> Vec<String> {
    let mut warnings = Vec::new();
    if summary.num_nodes != known.num_nodes {
        warnings.push(format!(
            "{}: expected N={}, loaded {}",
            known.name, known.num_nodes, summary.num_nodes
        ));
    }
    if summary.num_edges != known.num_edges {
        warnings.push(format!(
            "{}: expected E={}, loaded {}",
            known.name, known.num_edges, summary.num_edges
        ));
    }
    if summary.num_classes != known.num_classes {
        warnings.push(format!(
            "{}: expected {} classes, loaded {}",
            known.name, known.num_classes, summary.num_classes
        ));
    }
    if let Some((h, tol)) = known.homophily {
        if (summary.homophily - h).abs() > tol {
            warnings.push(format!(
                "{}: expected homophily {} +- {}, computed {:.4}",
                known.name, h, tol, summary.homophily
            ));
        }
    }
    warnings
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn toy_dataset() -> Dataset {
        let graph = Graph::build(4, &[(0, 1), (1, 2), (2, 3)]).unwrap();
        let features = DMatrix::from_row_slice(4, 2, &[0.5, -1.25, 2.0, 0.0, 1.5, 3.75, -0.5, 1.0]);
        Dataset {
            graph,
            features,
            labels: vec![0, 1, 1, 0],
            num_classes: 2,
            train_mask: vec![0, 1],
            val_mask: vec![2],
            test_mask: vec![3],
        }
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempdir().unwrap();
        let ds = toy_dataset();
        let paths = ds.save_to_dir(dir.path()).unwrap();
        let back = Dataset::load(&paths).unwrap();
        assert_eq!(back.graph.edges(), ds.graph.edges());
        assert_eq!(back.features, ds.features);
        assert_eq!(back.labels, ds.labels);
        assert_eq!(back.num_classes, 2);
        assert_eq!(back.train_mask, ds.train_mask);
        assert_eq!(back.val_mask, ds.val_mask);
        assert_eq!(back.test_mask, ds.test_mask);
    }

    #[test]
    fn malformed_feature_line_names_the_line() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("features.csv");
        std::fs::write(&path, "1.0,2.0\n1.0,oops\n").unwrap();
        let err = load_features(&path).unwrap_err();
        assert!(matches!(err, Error::Dataset(ref m) if m.contains("line 2")));
    }

    #[test]
    fn ragged_feature_rows_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("features.csv");
        std::fs::write(&path, "1.0,2.0\n3.0\n").unwrap();
        let err = load_features(&path).unwrap_err();
        assert!(matches!(err, Error::Dataset(ref m) if m.contains("expected 2 columns")));
    }

    #[test]
    fn split_index_out_of_range() {
        let dir = tempdir().unwrap();
        let ds = toy_dataset();
        let mut paths = ds.save_to_dir(dir.path()).unwrap();
        paths.split_index = 3;
        let err = Dataset::load(&paths).unwrap_err();
        assert!(matches!(err, Error::Dataset(ref m) if m.contains("split index 3")));
    }

    #[test]
    fn split_node_out_of_range() {
        let dir = tempdir().unwrap();
        let ds = toy_dataset();
        let paths = ds.save_to_dir(dir.path()).unwrap();
        std::fs::write(
            &paths.splits,
            r#"[{"train": [0, 9], "val": [2], "test": [3]}]"#,
        )
        .unwrap();
        let err = Dataset::load(&paths).unwrap_err();
        assert!(matches!(err, Error::Dataset(ref m) if m.contains("train mask index 9")));
    }

    #[test]
    fn empty_edge_file_is_a_valid_graph() {
        let dir = tempdir().unwrap();
        let ds = toy_dataset();
        let paths = ds.save_to_dir(dir.path()).unwrap();
        std::fs::write(&paths.edges, "").unwrap();
        let back = Dataset::load(&paths).unwrap();
        assert_eq!(back.graph.num_edges(), 0);
    }

    #[test]
    fn known_stats_flag_mismatches_only() {
        let known = known_dataset_stats("Cora").unwrap();
        let good = DatasetSummary {
            num_nodes: 2708,
            num_edges: 5278,
            num_classes: 6,
            num_features: 1433,
            homophily: 0.812,
        };
        assert!(check_against_known(&good, &known).is_empty());
        let bad = DatasetSummary {
            num_edges: 5000,
            homophily: 0.5,
            ..good
        };
        let warnings = check_against_known(&bad, &known);
        assert_eq!(warnings.len(), 2);
        assert!(warnings[0].contains("E=5278"));
        assert!(known_dataset_stats("nonesuch").is_none());
    }
}
