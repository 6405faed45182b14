use std::collections::HashMap;
use std::fs::File;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ClusteredDataset, FeatureMeta};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::stats::Split;

/// Column roles of a clustered CSV file.
///
/// Every column not named here is a numeric feature. Without a split
/// column, the `n_seen` largest clusters are seen (all of them when
/// `n_seen` is `None`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CsvSchema {
    pub target: String,
    pub cluster: String,
    pub split: Option<String>,
    pub outcome_prob: Option<String>,
    pub probes: Vec<String>,
    pub n_seen: Option<usize>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            target: "target".into(),
            cluster: "cluster".into(),
            split: Some("split".into()),
            outcome_prob: Some("outcome_prob".into()),
            probes: Vec::new(),
            n_seen: None,
        }
    }
}

impl CsvSchema {
    /// Path of the probe sidecar for a CSV file: `<file>.probes`, one column
    /// name per line.
    pub fn sidecar_path(csv: &Path) -> PathBuf {
        let mut s = csv.as_os_str().to_owned();
        s.push(".probes");
        PathBuf::from(s)
    }

    /// Default schema with probe tags read from the sidecar, if present.
    pub fn for_file(csv: &Path) -> Result<Self> {
        let sidecar = Self::sidecar_path(csv);
        let probes = match std::fs::read_to_string(&sidecar) {
            Ok(s) => s.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect(),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(Error::io(sidecar, e)),
        };
        Ok(Self {
            probes,
            ..Self::default()
        })
    }
}

fn parse_number(cell: &str, row: usize, col: &str) -> Result<f64> {
    match cell.trim().parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(Error::Parse {
            row,
            col: col.to_string(),
            message: format!("expected a finite number, found {cell:?}"),
        }),
    }
}

/// Reads a clustered dataset. Rows are reported 1-based, excluding the
/// header.
pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<ClusteredDataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = ::csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let headers: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let need = |name: &str| {
        find(name).ok_or_else(|| Error::Data(format!("{}: missing column {name:?}", path.display())))
    };
    let target_col = need(&schema.target)?;
    let cluster_col = need(&schema.cluster)?;
    let split_col = schema.split.as_deref().and_then(find);
    let prob_col = schema.outcome_prob.as_deref().and_then(find);
    let reserved = [Some(target_col), Some(cluster_col), split_col, prob_col];
    let feature_cols: Vec<usize> = (0..headers.len()).filter(|j| !reserved.contains(&Some(*j))).collect();
    for p in &schema.probes {
        if !feature_cols.iter().any(|&j| &headers[j] == p) {
            return Err(Error::Config(format!("probe column {p:?} is not a feature column")));
        }
    }

    let mut names: Vec<String> = Vec::new();
    let mut raw_cluster = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut y = Vec::new();
    let mut split = Vec::new();
    let mut prob = Vec::new();
    let mut values = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        let row = r + 1;
        let t = parse_number(&record[target_col], row, &schema.target)?;
        if t != 0.0 && t != 1.0 {
            return Err(Error::Data(format!("row {row}: target {t} is not 0 or 1")));
        }
        y.push(t as u8);
        let name = record[cluster_col].trim().to_string();
        let next = names.len();
        let c = *index.entry(name.clone()).or_insert(next);
        if c == next {
            names.push(name);
        }
        raw_cluster.push(c);
        if let Some(j) = split_col {
            let s = Split::parse(record[j].trim()).ok_or_else(|| Error::Parse {
                row,
                col: headers[j].clone(),
                message: format!("unknown split {:?}", &record[j]),
            })?;
            split.push(s);
        }
        if let Some(j) = prob_col {
            prob.push(parse_number(&record[j], row, &headers[j])?);
        }
        for &j in &feature_cols {
            values.push(parse_number(&record[j], row, &headers[j])?);
        }
    }
    let n = y.len();

    // Seen clusters keep their order of first appearance and precede the
    // unseen ones.
    let mut seen = vec![false; names.len()];
    if split_col.is_some() {
        for i in 0..n {
            if split[i] == Split::Train {
                seen[raw_cluster[i]] = true;
            }
        }
        for i in 0..n {
            let c = raw_cluster[i];
            match split[i] {
                Split::SeenTest if !seen[c] => {
                    return Err(Error::Split(format!(
                        "row {}: seen-test sample from cluster {:?} without training rows",
                        i + 1,
                        names[c]
                    )))
                }
                Split::UnseenTest if seen[c] => {
                    return Err(Error::Split(format!(
                        "row {}: unseen-test sample from training cluster {:?}",
                        i + 1,
                        names[c]
                    )))
                }
                _ => {}
            }
        }
    } else {
        let m = schema.n_seen.unwrap_or(names.len()).min(names.len());
        let mut counts = vec![0usize; names.len()];
        for &c in &raw_cluster {
            counts[c] += 1;
        }
        let mut order: Vec<usize> = (0..names.len()).collect();
        order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
        for &c in &order[..m] {
            seen[c] = true;
        }
        split = raw_cluster
            .iter()
            .map(|&c| if seen[c] { Split::Train } else { Split::UnseenTest })
            .collect();
    }
    let mut remap = vec![0; names.len()];
    let mut ordered = Vec::with_capacity(names.len());
    for want in [true, false] {
        for c in 0..names.len() {
            if seen[c] == want {
                remap[c] = ordered.len();
                ordered.push(names[c].clone());
            }
        }
    }

    let features = feature_cols
        .iter()
        .map(|&j| {
            if schema.probes.contains(&headers[j]) {
                FeatureMeta::probe(headers[j].clone())
            } else {
                FeatureMeta::biological(headers[j].clone())
            }
        })
        .collect();
    let mut data = ClusteredDataset {
        x: Matrix::from_vec(n, feature_cols.len(), values)?,
        y,
        cluster: raw_cluster.iter().map(|&c| remap[c]).collect(),
        cluster_names: ordered,
        n_seen: seen.iter().filter(|&&s| s).count(),
        features,
        split,
        outcome_prob: prob_col.map(|_| prob),
    };
    data.standardize();
    data.validate()?;
    Ok(data)
}

/// Writes `cluster, target, split, [outcome_prob], features...` plus the
/// probe sidecar when the dataset has probe columns.
pub fn write_csv(data: &ClusteredDataset, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = ::csv::Writer::from_writer(file);
    let mut header = vec!["cluster".to_string(), "target".into(), "split".into()];
    if data.outcome_prob.is_some() {
        header.push("outcome_prob".into());
    }
    header.extend(data.feature_names());
    w.write_record(&header)?;
    for i in 0..data.len() {
        let mut rec = vec![
            data.cluster_names[data.cluster[i]].clone(),
            data.y[i].to_string(),
            data.split[i].name().to_string(),
        ];
        if let Some(p) = &data.outcome_prob {
            rec.push(p[i].to_string());
        }
        rec.extend(data.x.row(i).iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;

    let probes: Vec<String> = data
        .probe_columns()
        .into_iter()
        .map(|j| data.features[j].name.clone())
        .collect();
    if !probes.is_empty() {
        let sidecar = CsvSchema::sidecar_path(path);
        std::fs::write(&sidecar, probes.join("\n") + "\n").map_err(|e| Error::io(sidecar, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simdata::{generate, GeneratorConfig};

    fn write_text(dir: &tempfile::TempDir, body: &str) -> PathBuf {
        let p = dir.path().join("data.csv");
        std::fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sim.csv");
        let d = generate(&GeneratorConfig::default()).unwrap();
        write_csv(&d, &path).unwrap();
        let back = load_csv(&path, &CsvSchema::for_file(&path).unwrap()).unwrap();
        assert_eq!(back.y, d.y);
        assert_eq!(back.cluster, d.cluster);
        assert_eq!(back.cluster_names, d.cluster_names);
        assert_eq!(back.n_seen, d.n_seen);
        assert_eq!(back.features, d.features);
        assert_eq!(back.split, d.split);
        assert_eq!(back.outcome_prob, d.outcome_prob);
        for (a, b) in back.x.as_slice().iter().zip(d.x.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn target_must_be_binary() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_text(&dir, "cluster,target,a\ns1,0,1.0\ns1,2,2.0\n");
        match load_csv(&p, &CsvSchema::default()) {
            Err(Error::Data(m)) => assert!(m.contains("row 2"), "{m}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn non_numeric_cell_names_row_and_column() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_text(&dir, "cluster,target,a,b\ns1,0,1.0,2\ns1,1,x,3\n");
        match load_csv(&p, &CsvSchema::default()) {
            Err(Error::Parse { row, col, .. }) => assert_eq!((row, col.as_str()), (2, "a")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn seen_test_row_from_unknown_cluster() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_text(
            &dir,
            "cluster,target,split,a\ns1,0,train,1\ns1,1,train,2\ns2,1,seen-test,3\n",
        );
        assert!(matches!(load_csv(&p, &CsvSchema::default()), Err(Error::Split(_))));
    }

    #[test]
    fn train_columns_are_standardized() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_text(
            &dir,
            "cluster,target,split,a\ns1,0,train,1\ns1,1,train,2\ns2,1,train,6\ns2,0,seen-test,100\nu,1,unseen-test,-5\n",
        );
        let d = load_csv(&p, &CsvSchema::default()).unwrap();
        let train: Vec<f64> = (0..3).map(|i| d.x.get(i, 0)).collect();
        let m = train.iter().sum::<f64>() / 3.0;
        let s = (train.iter().map(|v| (v - m).powi(2)).sum::<f64>() / 3.0).sqrt();
        assert!(m.abs() < 1e-9 && (s - 1.0).abs() < 1e-9);
        assert_eq!(d.n_seen, 2);
        assert_eq!(d.cluster_names, ["s1", "s2", "u"]);
        assert!(d.x.get(3, 0) > 10.0);
    }

    #[test]
    fn largest_clusters_become_seen_without_split_column() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_text(&dir, "cluster,target,a\na,0,1\nb,1,2\nb,0,3\nc,1,4\nc,0,5\nc,1,6\n");
        let schema = CsvSchema {
            n_seen: Some(2),
            ..CsvSchema::default()
        };
        let d = load_csv(&p, &schema).unwrap();
        assert_eq!(d.cluster_names, ["b", "c", "a"]);
        assert_eq!(d.split[0], Split::UnseenTest);
    }
}
