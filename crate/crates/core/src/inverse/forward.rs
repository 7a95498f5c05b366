//! Forward model and its on-disk format.
//!
//! ```text
//! offset  size          field
//! 0       4             magic "SBFM"
//! 4       4             u32 LE, length L of the JSON header
//! 8       L             UTF-8 JSON ForwardModelHeader
//! 8+L     8*N_c*N_d     f64 LE gain matrix, row-major (channel-major)
//! ```

use std::collections::{BTreeMap, VecDeque};
use std::io::{Read, Write};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::InverseError;

pub const MODEL_MAGIC: [u8; 4] = *b"SBFM";
const MODEL_VERSION: u32 = 1;

/// Gain matrix mapping cortical sources to sensors plus the cortical mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardModel {
    /// N_c × N_d, µV per nAm.
    pub gain: DMatrix<f64>,
    /// Vertex positions in mm.
    pub vertex_positions: Vec<[f64; 3]>,
    pub adjacency: Vec<Vec<usize>>,
    pub channel_labels: Vec<String>,
    pub roi_map: BTreeMap<String, Vec<usize>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ForwardModelHeader {
    version: u32,
    n_channels: usize,
    n_vertices: usize,
    units: String,
    channel_labels: Vec<String>,
    roi_map: BTreeMap<String, Vec<usize>>,
    vertex_positions: Vec<[f64; 3]>,
    adjacency: Vec<Vec<usize>>,
}

impl ForwardModel {
    pub fn n_channels(&self) -> usize {
        self.gain.nrows()
    }

    pub fn n_sources(&self) -> usize {
        self.gain.ncols()
    }

    pub fn roi(&self, name: &str) -> Result<&[usize], InverseError> {
        self.roi_map.get(name).map(Vec::as_slice).ok_or_else(|| InverseError::UnknownRoi(name.to_string()))
    }

    pub fn validate(&self) -> Result<(), InverseError> {
        let (nc, nd) = self.gain.shape();
        let bad = |msg: String| Err(InverseError::InvalidModel(msg));
        if nd <= nc {
            return bad(format!("{nd} sources for {nc} channels; need more sources than channels"));
        }
        if self.gain.iter().any(|v| !v.is_finite()) {
            return bad("gain matrix has non-finite entries".into());
        }
        if self.channel_labels.len() != nc {
            return bad(format!("{} channel labels for {nc} channels", self.channel_labels.len()));
        }
        if self.vertex_positions.len() != nd || self.adjacency.len() != nd {
            return bad("vertex positions/adjacency do not match the gain matrix".into());
        }
        for (i, nb) in self.adjacency.iter().enumerate() {
            for &j in nb {
                if j >= nd || j == i || !self.adjacency[j].contains(&i) {
                    return bad(format!("adjacency not symmetric at ({i}, {j})"));
                }
            }
        }
        for (name, verts) in &self.roi_map {
            if let Some(&v) = verts.iter().find(|&&v| v >= nd) {
                return bad(format!("ROI {name} references vertex {v} >= {nd}"));
            }
        }
        Ok(())
    }

    pub fn is_connected(&self) -> bool {
        let n = self.n_sources();
        if n == 0 {
            return true;
        }
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(v) = queue.pop_front() {
            for &w in &self.adjacency[v] {
                if !seen[w] {
                    seen[w] = true;
                    queue.push_back(w);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// Keeps only the named channels, in the given order.
    pub fn select_channels(&self, labels: &[String]) -> Result<ForwardModel, InverseError> {
        let idx: Vec<usize> = labels
            .iter()
            .map(|l| {
                self.channel_labels
                    .iter()
                    .position(|c| c == l)
                    .ok_or_else(|| InverseError::InvalidModel(format!("no channel {l}")))
            })
            .collect::<Result<_, _>>()?;
        Ok(ForwardModel {
            gain: self.gain.select_rows(idx.iter()),
            channel_labels: labels.to_vec(),
            ..self.clone()
        })
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), InverseError> {
        self.validate()?;
        let header = ForwardModelHeader {
            version: MODEL_VERSION,
            n_channels: self.n_channels(),
            n_vertices: self.n_sources(),
            units: "uV/nAm".into(),
            channel_labels: self.channel_labels.clone(),
            roi_map: self.roi_map.clone(),
            vertex_positions: self.vertex_positions.clone(),
            adjacency: self.adjacency.clone(),
        };
        let json = serde_json::to_vec(&header)?;
        w.write_all(&MODEL_MAGIC)?;
        w.write_all(&(json.len() as u32).to_le_bytes())?;
        w.write_all(&json)?;
        let mut blob = Vec::with_capacity(8 * self.gain.len());
        for row in self.gain.row_iter() {
            for v in row.iter() {
                blob.extend_from_slice(&v.to_le_bytes());
            }
        }
        w.write_all(&blob)?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, InverseError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if magic != MODEL_MAGIC {
            return Err(InverseError::InvalidModel(format!("bad magic {magic:?}")));
        }
        let mut len = [0u8; 4];
        r.read_exact(&mut len)?;
        let len = u32::from_le_bytes(len) as usize;
        if len > 1 << 28 {
            return Err(InverseError::InvalidModel("header too large".into()));
        }
        let mut json = vec![0u8; len];
        r.read_exact(&mut json)?;
        let h: ForwardModelHeader = serde_json::from_slice(&json)?;
        if h.version != MODEL_VERSION {
            return Err(InverseError::InvalidModel(format!("unsupported version {}", h.version)));
        }
        let (nc, nd) = (h.n_channels, h.n_vertices);
        let mut blob = vec![0u8; 8 * nc * nd];
        r.read_exact(&mut blob)?;
        let values: Vec<f64> = blob.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        let model = ForwardModel {
            gain: DMatrix::from_row_slice(nc, nd, &values),
            vertex_positions: h.vertex_positions,
            adjacency: h.adjacency,
            channel_labels: h.channel_labels,
            roi_map: h.roi_map,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self, InverseError> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<(), InverseError> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()?;
        Ok(())
    }
}
