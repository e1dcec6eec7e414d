//! Reading and writing datasets, group structures and result tables.
//!
//! Every writer goes through [`write_atomic`], which writes a sibling
//! temporary file and renames it over the target.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data_model::{Cluster, GroupStructure, Observation, SurvivalDataset};
use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
struct GroupsFile {
    groups: Vec<Vec<usize>>,
}

/// Writes `bytes` to `path` through a temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let tmp = temp_path(path);
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    Ok(result?)
}

fn temp_path(path: &Path) -> PathBuf {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!(".{name}.tmp{}", std::process::id()))
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| Error::Parse(e.to_string()))?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

/// Reads `{"groups": [[1,2,...], ...]}` with one-based covariate indices.
pub fn read_groups(path: &Path, p: usize) -> Result<GroupStructure> {
    let file: GroupsFile = read_json(path)?;
    GroupStructure::from_one_based(&file.groups, p)
}

pub fn write_groups(path: &Path, groups: &GroupStructure) -> Result<()> {
    write_json(path, &GroupsFile { groups: groups.to_one_based() })
}

/// Parses a dataset CSV with header `cluster_id,time,status,x1,...,xp`.
/// Clusters keep the order of their first appearance. Without `groups`
/// every covariate forms its own group. The result is not validated.
pub fn parse_dataset(text: &str, groups: Option<GroupStructure>) -> Result<SurvivalDataset> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| Error::Parse(e.to_string()))?.clone();
    if header.len() < 3 || &header[0] != "cluster_id" || &header[1] != "time" || &header[2] != "status" {
        return Err(Error::Parse("header must start with cluster_id,time,status".into()));
    }
    let p = header.len() - 3;
    let mut clusters: Vec<Cluster> = Vec::new();
    let mut index: std::collections::HashMap<String, usize> = std::collections::HashMap::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Parse(e.to_string()))?;
        let row = line + 2;
        let num = |col: usize| -> Result<f64> {
            record[col]
                .parse::<f64>()
                .map_err(|_| Error::Parse(format!("row {row}, column {}: not a number: {:?}", &header[col], &record[col])))
        };
        let time = num(1)?;
        let event = match &record[2] {
            "1" => true,
            "0" => false,
            other => return Err(Error::Parse(format!("row {row}: status must be 0 or 1, got {other:?}"))),
        };
        let covariates = (3..record.len()).map(num).collect::<Result<Vec<_>>>()?;
        let id = record[0].to_string();
        let slot = *index.entry(id.clone()).or_insert_with(|| {
            clusters.push(Cluster { id, observations: Vec::new() });
            clusters.len() - 1
        });
        clusters[slot].observations.push(Observation { time, event, covariates });
    }
    let groups = match groups {
        Some(g) => g,
        None => GroupStructure::new_unchecked((0..p).map(|k| vec![k]).collect()),
    };
    Ok(SurvivalDataset { clusters, p, groups })
}

pub fn read_dataset(path: &Path, groups: Option<GroupStructure>) -> Result<SurvivalDataset> {
    parse_dataset(&fs::read_to_string(path)?, groups)
}

pub fn format_dataset(data: &SurvivalDataset) -> String {
    let mut out = String::from("cluster_id,time,status");
    for k in 1..=data.p {
        out.push_str(&format!(",x{k}"));
    }
    out.push('\n');
    for c in &data.clusters {
        for o in &c.observations {
            out.push_str(&format!("{},{},{}", c.id, o.time, u8::from(o.event)));
            for x in &o.covariates {
                out.push_str(&format!(",{x}"));
            }
            out.push('\n');
        }
    }
    out
}

pub fn write_dataset(path: &Path, data: &SurvivalDataset) -> Result<()> {
    write_atomic(path, format_dataset(data).as_bytes())
}

/// Renders rows as CSV under `header`.
pub fn format_csv(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}
