//! Portable weight files.
//!
//! Layout: the 8 bytes `MICRONET`, a little-endian `u32` format version, a
//! little-endian `u64` header length, the JSON header, then the payload of
//! little-endian `f32` values. Each manifest entry gives a tensor's name,
//! role, NCHW shape and byte offset into the payload. Entries are stored
//! in order and back to back.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::arch::{ArchSpec, Network, ParamRole, ParamStore, Variant};
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

pub const MAGIC: &[u8; 8] = b"MICRONET";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub role: ParamRole,
    pub shape: [usize; 4],
    pub offset: u64,
}

impl TensorEntry {
    pub fn byte_len(&self) -> u64 {
        self.shape.iter().product::<usize>() as u64 * 4
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BundleHeader {
    pub version: u32,
    pub arch: ArchSpec,
    pub variant: Variant,
    pub tensors: Vec<TensorEntry>,
    pub payload_bytes: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WeightBundle {
    pub header: BundleHeader,
    pub payload: Vec<u8>,
}

fn format_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

impl WeightBundle {
    pub fn from_network(net: &Network<f32>) -> Self {
        let mut tensors = Vec::with_capacity(net.params().len());
        let mut payload = Vec::new();
        for (_, p) in net.params().iter() {
            tensors.push(TensorEntry { name: p.name.clone(), role: p.role, shape: p.value.shape().dims(), offset: payload.len() as u64 });
            for v in p.value.data() {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
        let header = BundleHeader {
            version: FORMAT_VERSION,
            arch: net.spec().clone(),
            variant: net.variant(),
            tensors,
            payload_bytes: payload.len() as u64,
        };
        WeightBundle { header, payload }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header).expect("header serializes");
        let mut out = Vec::with_capacity(20 + header.len() + self.payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.header.version.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(format_err("missing MICRONET magic"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(format_err(format!("unsupported format version {version}")));
        }
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes"));
        let rest = &bytes[20..];
        if header_len > rest.len() as u64 {
            return Err(format_err(format!("header length {header_len} exceeds file size")));
        }
        let (head, payload) = rest.split_at(header_len as usize);
        let header: BundleHeader = serde_json::from_slice(head).map_err(|e| format_err(format!("bad header: {e}")))?;
        if header.version != version {
            return Err(format_err("header version disagrees with preamble"));
        }
        let b = WeightBundle { header, payload: payload.to_vec() };
        b.validate()?;
        Ok(b)
    }

    /// Offsets contiguous and non-overlapping; payload size matches the manifest.
    pub fn validate(&self) -> Result<()> {
        let mut expect = 0u64;
        for t in &self.header.tensors {
            if t.offset != expect {
                return Err(format_err(format!("tensor {} at offset {}, expected {expect}", t.name, t.offset)));
            }
            expect += t.byte_len();
        }
        if self.header.payload_bytes != expect {
            return Err(format_err(format!("manifest covers {expect} bytes, header declares {}", self.header.payload_bytes)));
        }
        if self.payload.len() as u64 != expect {
            return Err(format_err(format!("payload is {} bytes, manifest needs {expect}", self.payload.len())));
        }
        Ok(())
    }

    pub fn into_network(self) -> Result<Network<f32>> {
        self.validate()?;
        let mut store = ParamStore::new();
        for t in &self.header.tensors {
            let [n, c, h, w] = t.shape;
            let start = t.offset as usize;
            let data = self.payload[start..start + t.byte_len() as usize]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
                .collect();
            store.add(t.name.clone(), t.role, Tensor::from_vec(Shape::new(n, c, h, w), data)?);
        }
        Network::with_params(&self.header.arch, self.header.variant, store).map_err(|e| format_err(e.to_string()))
    }

    /// Writes through a temporary file so a failed save leaves no partial bundle.
    pub fn save(&self, path: &Path) -> Result<()> {
        let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
        tmp.write_all(&self.to_bytes())?;
        tmp.persist(path).map_err(|e| Error::Io(e.error))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

pub fn save_network(net: &Network<f32>, path: &Path) -> Result<()> {
    WeightBundle::from_network(net).save(path)
}

pub fn load_network(path: &Path) -> Result<Network<f32>> {
    WeightBundle::load(path)?.into_network()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn narrow() -> Network<f32> {
        Network::builtin("M0-narrow", 5).unwrap()
    }

    #[test]
    fn round_trip_is_bitwise() {
        let net = narrow();
        let bytes = WeightBundle::from_network(&net).to_bytes();
        let back = WeightBundle::from_bytes(&bytes).unwrap().into_network().unwrap();
        assert_eq!(back.params(), net.params());
        assert_eq!(back.spec(), net.spec());
        let x = Tensor::full(net.input_shape(1), 0.25);
        assert_eq!(back.infer(&x).unwrap(), net.infer(&x).unwrap());
    }

    #[test]
    fn payload_matches_manifest() {
        let b = WeightBundle::from_network(&narrow());
        let total: u64 = b.header.tensors.iter().map(|t| t.byte_len()).sum();
        assert_eq!(total, b.payload.len() as u64);
    }

    #[test]
    fn corrupt_inputs_are_format_errors() {
        let bytes = WeightBundle::from_network(&narrow()).to_bytes();
        let truncated = &bytes[..bytes.len() - 3];
        assert!(matches!(WeightBundle::from_bytes(truncated), Err(Error::Format(_))));
        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        assert!(matches!(WeightBundle::from_bytes(&bad_magic), Err(Error::Format(_))));
        let mut bad_header = bytes.clone();
        bad_header[20] = b'#';
        assert!(matches!(WeightBundle::from_bytes(&bad_header), Err(Error::Format(_))));
        let mut bad_version = bytes;
        bad_version[8] = 9;
        assert!(matches!(WeightBundle::from_bytes(&bad_version), Err(Error::Format(_))));
    }

    #[test]
    fn overlapping_offsets_rejected() {
        let mut b = WeightBundle::from_network(&narrow());
        b.header.tensors[1].offset = 0;
        assert!(matches!(b.validate(), Err(Error::Format(_))));
    }

    #[test]
    fn save_and_load_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.mnb");
        let net = narrow();
        save_network(&net, &path).unwrap();
        assert_eq!(load_network(&path).unwrap().params(), net.params());
    }
}
