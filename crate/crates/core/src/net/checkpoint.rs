//! O3CK checkpoints: config echo, named tensors, optimizer state.

use std::path::Path;

use super::model::Params;
use super::optim::AdamState;
use super::tensor::Mat;
use crate::formats::{read_file, write_file, ByteReader, ByteWriter, FormatError};

pub const MAGIC: &[u8; 4] = b"O3CK";
pub const VERSION: u32 = 1;
const FORMAT: &str = "O3CK";

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub dims: Vec<u32>,
    pub data: Vec<f32>,
}

impl NamedTensor {
    /// Biases and norm parameters (`1 × n`) are stored with rank 1.
    pub fn from_mat(name: &str, m: &Mat<f32>) -> Self {
        let dims = if m.rows == 1 {
            vec![m.cols as u32]
        } else {
            vec![m.rows as u32, m.cols as u32]
        };
        Self {
            name: name.to_string(),
            dims,
            data: m.data.clone(),
        }
    }

    pub fn to_mat(&self) -> Result<Mat<f32>, String> {
        match self.dims[..] {
            [n] => Ok(Mat::from_vec(1, n as usize, self.data.clone())),
            [r, c] => Ok(Mat::from_vec(r as usize, c as usize, self.data.clone())),
            _ => Err(format!("tensor {}: rank {} is not supported", self.name, self.dims.len())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// JSON echo of the configuration that produced the parameters.
    pub config_json: String,
    pub tensors: Vec<NamedTensor>,
    /// Number of completed epochs.
    pub epoch: u64,
    pub optimizer: AdamState,
}

fn numel(dims: &[u32]) -> u64 {
    dims.iter().fold(1u64, |n, &d| n.saturating_mul(d as u64))
}

impl Checkpoint {
    pub fn new(config_json: String, params: &Params<f32>, epoch: u64, optimizer: AdamState) -> Self {
        let tensors = params
            .names
            .iter()
            .zip(&params.tensors)
            .map(|(n, t)| NamedTensor::from_mat(n, t))
            .collect();
        Self {
            config_json,
            tensors,
            epoch,
            optimizer,
        }
    }

    pub fn params(&self) -> Result<Params<f32>, String> {
        let mats = self.tensors.iter().map(|t| t.to_mat()).collect::<Result<Vec<_>, _>>()?;
        Ok(Params::new(self.tensors.iter().map(|t| t.name.clone()).collect(), mats))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::with_header(MAGIC, VERSION);
        w.u32(self.config_json.len() as u32);
        w.bytes(self.config_json.as_bytes());
        w.u32(self.tensors.len() as u32);
        for t in &self.tensors {
            w.short_string(&t.name);
            w.u32(t.dims.len() as u32);
            for &d in &t.dims {
                w.u32(d);
            }
            w.f32_slice(&t.data);
        }
        w.u64(self.optimizer.step);
        w.u64(self.epoch);
        for moments in [&self.optimizer.m, &self.optimizer.v] {
            for m in moments {
                w.f32_slice(m);
            }
        }
        w.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FormatError> {
        let mut r = ByteReader::new(FORMAT, bytes);
        r.header(MAGIC, VERSION)?;
        let len = r.u32("config_len")?;
        let raw = r.bytes(len as usize, "config")?;
        let config_json = String::from_utf8(raw.to_vec())
            .map_err(|_| FormatError::invalid(FORMAT, "config", "not valid UTF-8"))?;
        serde_json::from_str::<serde_json::Value>(&config_json)
            .map_err(|e| FormatError::invalid(FORMAT, "config", format!("not valid JSON: {e}")))?;
        let count = r.u32("tensor_count")?;
        r.check_capacity(count as u64, 8, "tensor_count")?;
        let mut tensors = Vec::with_capacity(count as usize);
        for k in 0..count as usize {
            let name = r.short_string(&format!("tensors[{k}].name"))?;
            let rank = r.u32(&format!("tensors[{k}].rank"))?;
            if rank == 0 || rank > 2 {
                return Err(FormatError::invalid(
                    FORMAT,
                    format!("tensors[{k}].rank"),
                    format!("rank {rank} is not 1 or 2"),
                ));
            }
            let mut dims = Vec::with_capacity(rank as usize);
            for d in 0..rank {
                dims.push(r.u32(&format!("tensors[{k}].dims[{d}]"))?);
            }
            let n = r.check_capacity(numel(&dims), 4, &format!("tensors[{k}].data"))?;
            let data = r.f32_vec(n, &format!("tensors[{k}].data"))?;
            tensors.push(NamedTensor { name, dims, data });
        }
        let step = r.u64("optimizer.step")?;
        let epoch = r.u64("optimizer.epoch")?;
        let mut moments = [Vec::new(), Vec::new()];
        for (which, store) in ["m", "v"].iter().zip(moments.iter_mut()) {
            for (k, t) in tensors.iter().enumerate() {
                store.push(r.f32_vec(t.data.len(), &format!("optimizer.{which}[{k}]"))?);
            }
        }
        r.finish()?;
        let [m, v] = moments;
        Ok(Self {
            config_json,
            tensors,
            epoch,
            optimizer: AdamState { step, m, v },
        })
    }

    pub fn read(path: &Path) -> Result<Self, FormatError> {
        Self::from_bytes(&read_file(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<(), FormatError> {
        write_file(path, &self.to_bytes())
    }
}
