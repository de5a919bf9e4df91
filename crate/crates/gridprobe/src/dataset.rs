//! Probing datasets on disk: a directory with `manifest.json` and one
//! header-less CSV file per matrix.

use std::fs;
use std::path::Path;

use gridprobe_core::probing::ProbingDataset;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};

pub const FORMAT: &str = "gridprobe-dataset";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    /// Non-substation buses, i.e. rows of `Ṽ`.
    pub n: usize,
    pub slots: usize,
    pub bus_ids: Vec<usize>,
    pub probed_buses: Vec<usize>,
    pub seed: u64,
    pub run: u64,
    pub model: String,
    pub files: Files,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth_status: Option<Vec<bool>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Files {
    pub v_tilde: String,
    pub delta: String,
    pub weight: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth_theta: Option<String>,
}

pub fn write_matrix(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    for i in 0..m.nrows() {
        w.write_record((0..m.ncols()).map(|j| format!("{:e}", m[(i, j)])))?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).from_path(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let row = rec
            .iter()
            .enumerate()
            .map(|(j, s)| {
                s.trim().parse::<f64>().map_err(|_| Error::Parse {
                    path: Some(path.to_path_buf()),
                    line: i + 1,
                    column: j + 1,
                    message: format!("not a number: `{s}`"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    let ncols = rows.first().map_or(0, Vec::len);
    Ok(DMatrix::from_row_iterator(rows.len(), ncols, rows.into_iter().flatten()))
}

pub fn write_dataset(dir: &Path, data: &ProbingDataset, seed: u64, run: u64, model: &str) -> Result<Manifest> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let files = Files {
        v_tilde: "v_tilde.csv".into(),
        delta: "delta.csv".into(),
        weight: "weight.csv".into(),
        truth_theta: data.truth_theta.as_ref().map(|_| "truth_theta.csv".into()),
    };
    write_matrix(&dir.join(&files.v_tilde), &data.v_tilde)?;
    write_matrix(&dir.join(&files.delta), &data.delta)?;
    write_matrix(&dir.join(&files.weight), &data.w)?;
    if let (Some(t), Some(name)) = (&data.truth_theta, &files.truth_theta) {
        write_matrix(&dir.join(name), t)?;
    }
    let manifest = Manifest {
        format: FORMAT.into(),
        version: VERSION,
        n: data.n(),
        slots: data.slots(),
        bus_ids: (1..=data.n()).collect(),
        probed_buses: data.probed_buses.clone(),
        seed,
        run,
        model: model.into(),
        files,
        truth_status: data.truth_status.clone(),
    };
    let path = dir.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n").map_err(io_err(&path))?;
    Ok(manifest)
}

pub fn read_dataset(dir: &Path) -> Result<(Manifest, ProbingDataset)> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let m: Manifest = serde_json::from_str(&text)?;
    if m.format != FORMAT || m.version != VERSION {
        return Err(Error::Dataset(format!("unsupported format {} v{}", m.format, m.version)));
    }
    let v = read_matrix(&dir.join(&m.files.v_tilde))?;
    let delta = read_matrix(&dir.join(&m.files.delta))?;
    let w = read_matrix(&dir.join(&m.files.weight))?;
    if v.shape() != (m.n, m.slots) {
        return Err(Error::Dataset(format!(
            "Ṽ is {}×{}, manifest says {}×{}",
            v.nrows(),
            v.ncols(),
            m.n,
            m.slots
        )));
    }
    let mut data = ProbingDataset::new(v, delta, m.probed_buses.clone())?.with_weight(w)?;
    if let Some(name) = &m.files.truth_theta {
        data.truth_theta = Some(read_matrix(&dir.join(name))?);
    }
    data.truth_status = m.truth_status.clone();
    Ok((m, data))
}
