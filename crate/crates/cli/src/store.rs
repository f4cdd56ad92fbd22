//! On-disk moment packs and fitted networks: a small TOML descriptor plus one
//! delimited-text file per matrix.

use std::fs;
use std::path::Path;

use anyhow::{ensure, Context, Result};
use serde::{Deserialize, Serialize};

use sdwsn_core::covmodel::{BlockPartition, Lifting};
use sdwsn_core::sdt::{FusionCenter, NetworkModel, SecondDegreeSensor};
use sdwsn_core::{textio, CovariancePack, Mat};

use crate::config::read_matrix_file;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionFile {
    pub signal_dim: usize,
    pub obs_dims: Vec<usize>,
    pub ranks: Vec<usize>,
    pub lifting: String,
    #[serde(default)]
    pub signal_split: Option<Vec<usize>>,
}

impl PartitionFile {
    pub fn from_partition(p: &BlockPartition) -> Self {
        Self {
            signal_dim: p.signal_dim(),
            obs_dims: p.obs_dims().to_vec(),
            ranks: p.ranks().to_vec(),
            lifting: p.lifting().name().into(),
            signal_split: Some(p.signal_split().to_vec()),
        }
    }

    pub fn partition(&self) -> Result<BlockPartition> {
        let lifting: Lifting = self.lifting.parse()?;
        let part = BlockPartition::new(self.signal_dim, self.obs_dims.clone(), self.ranks.clone(), lifting)?;
        Ok(match &self.signal_split {
            Some(s) => part.with_signal_split(s.clone())?,
            None => part,
        })
    }
}

pub fn write_matrix_file(path: &Path, m: &Mat) -> Result<()> {
    fs::write(path, textio::format_matrix(m)).with_context(|| format!("writing {}", path.display()))
}

/// `partition.toml`, `exx.csv`, `exz.csv`, `ezz.csv`.
pub fn write_pack(dir: &Path, pack: &CovariancePack) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let desc = toml::to_string(&PartitionFile::from_partition(&pack.partition))?;
    fs::write(dir.join("partition.toml"), desc)?;
    write_matrix_file(&dir.join("exx.csv"), &pack.exx)?;
    write_matrix_file(&dir.join("exz.csv"), &pack.exz)?;
    write_matrix_file(&dir.join("ezz.csv"), &pack.ezz)
}

pub fn read_pack(dir: &Path) -> Result<CovariancePack> {
    let path = dir.join("partition.toml");
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let desc: PartitionFile = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let part = desc.partition()?;
    let exx = read_matrix_file(&dir.join("exx.csv"))?;
    let exz = read_matrix_file(&dir.join("exz.csv"))?;
    let ezz = read_matrix_file(&dir.join("ezz.csv"))?;
    Ok(CovariancePack::new(exx, exz, ezz, part)?)
}

/// `model.toml` plus `t{j}.csv` (fusion block `T_j`, `m × r_j`) and
/// `s{j}.csv` (stacked sensor matrix `S_j`, `r_j × block size`), `j` from 1.
pub fn write_model(dir: &Path, model: &NetworkModel) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let desc = toml::to_string(&PartitionFile::from_partition(&model.partition))?;
    fs::write(dir.join("model.toml"), desc)?;
    for (j, (t, s)) in model.fusion.blocks.iter().zip(&model.sensors).enumerate() {
        write_matrix_file(&dir.join(format!("t{}.csv", j + 1)), t)?;
        write_matrix_file(&dir.join(format!("s{}.csv", j + 1)), &s.stacked())?;
    }
    Ok(())
}

pub fn read_model(dir: &Path) -> Result<NetworkModel> {
    let path = dir.join("model.toml");
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let desc: PartitionFile = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let part = desc.partition()?;
    let mut sensors = Vec::new();
    let mut fusion = Vec::new();
    for j in 0..part.sensors() {
        let t = read_matrix_file(&dir.join(format!("t{}.csv", j + 1)))?;
        let s = read_matrix_file(&dir.join(format!("s{}.csv", j + 1)))?;
        ensure!(
            s.nrows() == part.rank(j) && s.ncols() == part.block_size(j),
            "s{}.csv is {}x{}, expected {}x{}",
            j + 1,
            s.nrows(),
            s.ncols(),
            part.rank(j),
            part.block_size(j)
        );
        sensors.push(SecondDegreeSensor::from_stacked(&s, part.obs_dim(j), part.lifting())?);
        fusion.push(t);
    }
    Ok(NetworkModel::new(sensors, FusionCenter { blocks: fusion }, part)?)
}
