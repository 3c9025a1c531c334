//! Dataset ingestion in the smd-style layout: per-service files
//! `<id>_train.csv`, `<id>_test.csv`, `<id>_labels.csv`, headerless,
//! one timestamp per row.

use ndarray::Array2;
use std::path::Path;

use crate::error::{Error, Result};
use crate::series::LabelSeries;

/// One service's train/test split with test labels.
#[derive(Debug, Clone)]
pub struct ServiceDataset {
    pub service_id: String,
    /// `[m_feat, t_train]`
    pub train: Array2<f64>,
    /// `[m_feat, t_test]`
    pub test: Array2<f64>,
    pub labels: LabelSeries,
}

impl ServiceDataset {
    pub fn validate(&self) -> Result<()> {
        if self.train.nrows() != self.test.nrows() {
            return Err(Error::Data(format!(
                "{}: train has {} features, test has {}",
                self.service_id,
                self.train.nrows(),
                self.test.nrows()
            )));
        }
        if self.labels.len() != self.test.ncols() {
            return Err(Error::Data(format!(
                "{}: {} labels for {} test timestamps",
                self.service_id,
                self.labels.len(),
                self.test.ncols()
            )));
        }
        Ok(())
    }
}

/// Read a headerless comma-separated real matrix; file rows are timestamps,
/// returned as `[m_feat, t]`.
pub fn read_matrix_csv(path: &Path) -> Result<Array2<f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut row = Vec::new();
        for (col, cell) in line.split(',').enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| {
                Error::Data(format!(
                    "{}: line {}, column {}: non-numeric cell {cell:?}",
                    path.display(),
                    lineno + 1,
                    col + 1
                ))
            })?;
            row.push(v);
        }
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(Error::Data(format!(
                    "{}: line {}: {} cells, expected {}",
                    path.display(),
                    lineno + 1,
                    row.len(),
                    first.len()
                )));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Data(format!("{}: empty file", path.display())));
    }
    let t = rows.len();
    let m = rows[0].len();
    let mut out = Array2::zeros((m, t));
    for (tt, row) in rows.iter().enumerate() {
        for (f, &v) in row.iter().enumerate() {
            out[[f, tt]] = v;
        }
    }
    Ok(out)
}

/// Read one 0/1 label per line.
pub fn read_labels_csv(path: &Path) -> Result<LabelSeries> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut labels = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        match trimmed {
            "0" => labels.push(0),
            "1" => labels.push(1),
            other => {
                return Err(Error::Data(format!(
                    "{}: line {}: label {other:?} is not 0 or 1",
                    path.display(),
                    lineno + 1
                )))
            }
        }
    }
    LabelSeries::new(labels)
}

/// Load every service under `root`, sorted by id.
pub fn load_dataset(root: &Path) -> Result<Vec<ServiceDataset>> {
    let entries = std::fs::read_dir(root).map_err(|e| Error::io(root, e))?;
    let mut ids = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(root, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(id) = name.strip_suffix("_train.csv") {
            ids.push(id.to_string());
        }
    }
    if ids.is_empty() {
        return Err(Error::Data(format!(
            "{}: no *_train.csv files found",
            root.display()
        )));
    }
    ids.sort();
    let mut out = Vec::with_capacity(ids.len());
    for id in ids {
        let train_path = root.join(format!("{id}_train.csv"));
        let test_path = root.join(format!("{id}_test.csv"));
        let labels_path = root.join(format!("{id}_labels.csv"));
        for required in [&test_path, &labels_path] {
            if !required.exists() {
                return Err(Error::Data(format!(
                    "{}: missing companion file",
                    required.display()
                )));
            }
        }
        let ds = ServiceDataset {
            service_id: id,
            train: read_matrix_csv(&train_path)?,
            test: read_matrix_csv(&test_path)?,
            labels: read_labels_csv(&labels_path)?,
        };
        ds.validate()?;
        out.push(ds);
    }
    Ok(out)
}

/// Runs of ten services each; the final group may be smaller.
pub fn group_services(services: &[ServiceDataset]) -> Vec<&[ServiceDataset]> {
    services.chunks(10).collect()
}

/// Write services back out in the smd-style layout (the `synth` subcommand).
pub fn write_smd_style(services: &[ServiceDataset], dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for ds in services {
        let write_matrix = |matrix: &Array2<f64>, path: &Path| -> Result<()> {
            let mut text = String::new();
            for t in 0..matrix.ncols() {
                let row: Vec<String> = (0..matrix.nrows())
                    .map(|f| format!("{}", matrix[[f, t]]))
                    .collect();
                text.push_str(&row.join(","));
                text.push('\n');
            }
            std::fs::write(path, text).map_err(|e| Error::io(path, e))
        };
        write_matrix(&ds.train, &dir.join(format!("{}_train.csv", ds.service_id)))?;
        write_matrix(&ds.test, &dir.join(format!("{}_test.csv", ds.service_id)))?;
        let labels: String = ds
            .labels
            .as_slice()
            .iter()
            .map(|l| format!("{l}\n"))
            .collect();
        let path = dir.join(format!("{}_labels.csv", ds.service_id));
        std::fs::write(&path, labels).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_service(id: &str, m: usize, t: usize) -> ServiceDataset {
        ServiceDataset {
            service_id: id.to_string(),
            train: Array2::from_shape_fn((m, t), |(f, tt)| (f * 100 + tt) as f64 * 0.01),
            test: Array2::from_shape_fn((m, t), |(f, tt)| (f * 100 + tt) as f64 * 0.02),
            labels: LabelSeries::new((0..t).map(|i| (i % 7 == 0) as u8).collect()).unwrap(),
        }
    }

    #[test]
    fn round_trip_through_files() {
        let dir = tempfile::tempdir().unwrap();
        let services = vec![tiny_service("m-1", 2, 80)];
        write_smd_style(&services, dir.path()).unwrap();
        let loaded = load_dataset(dir.path()).unwrap();
        assert_eq!(loaded.len(), 1);
        assert_eq!(loaded[0].service_id, "m-1");
        assert_eq!(loaded[0].train, services[0].train);
        assert_eq!(loaded[0].test, services[0].test);
        assert_eq!(loaded[0].labels, services[0].labels);
        assert_eq!(loaded[0].train.dim(), (2, 80));
    }

    #[test]
    fn missing_labels_file_names_the_path() {
        let dir = tempfile::tempdir().unwrap();
        let services = vec![tiny_service("m-1", 1, 10)];
        write_smd_style(&services, dir.path()).unwrap();
        std::fs::remove_file(dir.path().join("m-1_labels.csv")).unwrap();
        match load_dataset(dir.path()) {
            Err(Error::Data(msg)) => assert!(msg.contains("m-1_labels.csv")),
            other => panic!("expected data error, got {other:?}"),
        }
    }

    #[test]
    fn ragged_rows_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "1,2\n3\n").unwrap();
        match read_matrix_csv(&path) {
            Err(Error::Data(msg)) => assert!(msg.contains("line 2")),
            other => panic!("expected data error, got {other:?}"),
        }
    }

    #[test]
    fn non_numeric_cell_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "1,x\n").unwrap();
        match read_matrix_csv(&path) {
            Err(Error::Data(msg)) => assert!(msg.contains("column 2")),
            other => panic!("expected data error, got {other:?}"),
        }
    }

    #[test]
    fn grouping_partitions_in_runs_of_ten() {
        let services: Vec<ServiceDataset> = (0..25)
            .map(|i| tiny_service(&format!("s{i:02}"), 1, 10))
            .collect();
        let groups = group_services(&services);
        let sizes: Vec<usize> = groups.iter().map(|g| g.len()).collect();
        assert_eq!(sizes, vec![10, 10, 5]);
        let total: usize = sizes.iter().sum();
        assert_eq!(total, 25);
    }
}
