//! `.vgf` voxel-grid files.
//!
//! Layout: one ASCII line holding a JSON header, then the raw little-endian
//! payload.
//!
//! ```text
//! {"magic":"VGF1","dims":[nx,ny,nz],"voxel_um":2.155,"channels":1,"dtype":"i32","order":"x-fastest","endian":"little"}\n
//! <nx*ny*nz*channels values>
//! ```
//!
//! Channels are innermost (all channels of voxel 0, then voxel 1, ...).
//! Grain labels are `i32` (liquid = -1), temperatures and melt masks use
//! `f32` and `i32` respectively, and order-parameter checkpoints use `f64`.
//! Optional header keys `n_ori` and `config_hash` are written when known and
//! ignored by readers that do not need them.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DomainSpec, GrainField};
use crate::error::{Error, Result};
use crate::thermal::{MeltMask, TemperatureField};

pub const MAGIC: &str = "VGF1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    I32,
    F32,
    F64,
}

impl Dtype {
    fn size(self) -> usize {
        match self {
            Dtype::I32 | Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VgfHeader {
    pub magic: String,
    pub dims: [usize; 3],
    pub voxel_um: f64,
    pub channels: usize,
    pub dtype: Dtype,
    pub order: String,
    pub endian: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_ori: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

impl VgfHeader {
    pub fn new(spec: &DomainSpec, channels: usize, dtype: Dtype) -> Self {
        Self {
            magic: MAGIC.to_string(),
            dims: spec.dims,
            voxel_um: spec.voxel_um,
            channels,
            dtype,
            order: "x-fastest".to_string(),
            endian: "little".to_string(),
            n_ori: None,
            config_hash: None,
        }
    }

    fn payload_len(&self) -> usize {
        self.dims.iter().product::<usize>() * self.channels * self.dtype.size()
    }

    pub fn spec(&self) -> Result<DomainSpec> {
        DomainSpec::from_dims(self.dims, self.voxel_um)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum VgfData {
    I32(Vec<i32>),
    F32(Vec<f32>),
    F64(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct VgfFile {
    pub header: VgfHeader,
    pub data: VgfData,
}

impl VgfFile {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec(&self.header).expect("header serializes");
        out.push(b'\n');
        match &self.data {
            VgfData::I32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            VgfData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            VgfData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let nl = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::format(bytes.len() as u64, "header line is not terminated"))?;
        let header: VgfHeader = serde_json::from_slice(&bytes[..nl])
            .map_err(|e| Error::format(e.column().saturating_sub(1) as u64, format!("malformed header: {e}")))?;
        if header.magic != MAGIC {
            return Err(Error::format(0, format!("bad magic {:?}", header.magic)));
        }
        if header.endian != "little" {
            return Err(Error::format(0, format!("unsupported endianness {:?}", header.endian)));
        }
        if header.order != "x-fastest" {
            return Err(Error::format(0, format!("unsupported order {:?}", header.order)));
        }
        if header.channels == 0 || header.dims.contains(&0) {
            return Err(Error::format(0, "dims and channels must be >= 1"));
        }
        let start = nl + 1;
        let payload = &bytes[start..];
        let expected = header.payload_len();
        if payload.len() != expected {
            return Err(Error::format(
                (start + payload.len().min(expected)) as u64,
                format!("payload holds {} bytes, header implies {expected}", payload.len()),
            ));
        }
        let data = match header.dtype {
            Dtype::I32 => VgfData::I32(
                payload
                    .chunks_exact(4)
                    .map(|c| i32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            Dtype::F32 => VgfData::F32(
                payload
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            Dtype::F64 => VgfData::F64(
                payload
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
        };
        Ok(Self { header, data })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }
}

pub fn grain_field_file(field: &GrainField, config_hash: Option<&str>) -> VgfFile {
    let mut header = VgfHeader::new(field.spec(), 1, Dtype::I32);
    header.n_ori = Some(field.n_ori());
    header.config_hash = config_hash.map(str::to_string);
    VgfFile {
        header,
        data: VgfData::I32(field.labels().to_vec()),
    }
}

/// Writes the grain labels. Order parameters, when present, are not saved;
/// use [`save_order_parameters`] for checkpoints.
pub fn save_grain_field(path: impl AsRef<Path>, field: &GrainField, config_hash: Option<&str>) -> Result<()> {
    grain_field_file(field, config_hash).write(path)
}

pub fn load_grain_field(path: impl AsRef<Path>) -> Result<GrainField> {
    grain_field_from(VgfFile::read(path)?)
}

pub fn grain_field_from(file: VgfFile) -> Result<GrainField> {
    let spec = file.header.spec()?;
    match (file.header.channels, file.data) {
        (1, VgfData::I32(labels)) => {
            let max = labels.iter().copied().max().unwrap_or(0);
            let n_ori = file.header.n_ori.unwrap_or((max + 1).max(1) as usize);
            GrainField::from_labels(spec, n_ori, labels).map_err(|e| Error::format(0, e.to_string()))
        }
        (n, VgfData::F64(eta)) => GrainField::from_eta(spec, n, eta).map_err(|e| Error::format(0, e.to_string())),
        _ => Err(Error::format(0, "grain files hold one i32 channel or f64 order parameters")),
    }
}

/// Lossless checkpoint of the order parameters (`f64`, `n_ori` channels).
pub fn save_order_parameters(path: impl AsRef<Path>, field: &GrainField, config_hash: Option<&str>) -> Result<()> {
    let eta = field
        .eta()
        .ok_or_else(|| Error::invalid("field carries no order parameters"))?;
    let mut header = VgfHeader::new(field.spec(), field.n_ori(), Dtype::F64);
    header.n_ori = Some(field.n_ori());
    header.config_hash = config_hash.map(str::to_string);
    VgfFile {
        header,
        data: VgfData::F64(eta.to_vec()),
    }
    .write(path)
}

pub fn temperature_file(temp: &TemperatureField, config_hash: Option<&str>) -> VgfFile {
    let mut header = VgfHeader::new(temp.spec(), 1, Dtype::F32);
    header.config_hash = config_hash.map(str::to_string);
    VgfFile {
        header,
        data: VgfData::F32(temp.values().to_vec()),
    }
}

pub fn save_temperature(path: impl AsRef<Path>, temp: &TemperatureField, config_hash: Option<&str>) -> Result<()> {
    temperature_file(temp, config_hash).write(path)
}

pub fn load_temperature(path: impl AsRef<Path>) -> Result<TemperatureField> {
    let file = VgfFile::read(path)?;
    let spec = file.header.spec()?;
    match (file.header.channels, file.data) {
        (1, VgfData::F32(values)) => TemperatureField::new(spec, values).map_err(|e| Error::format(0, e.to_string())),
        _ => Err(Error::format(0, "temperature files hold one f32 channel")),
    }
}

pub fn save_mask(path: impl AsRef<Path>, mask: &MeltMask, config_hash: Option<&str>) -> Result<()> {
    let mut header = VgfHeader::new(mask.spec(), 1, Dtype::I32);
    header.config_hash = config_hash.map(str::to_string);
    VgfFile {
        header,
        data: VgfData::I32(mask.melted().iter().map(|&m| m as i32).collect()),
    }
    .write(path)
}

pub fn load_mask(path: impl AsRef<Path>) -> Result<MeltMask> {
    let file = VgfFile::read(path)?;
    let spec = file.header.spec()?;
    match (file.header.channels, file.data) {
        (1, VgfData::I32(values)) => {
            if let Some(i) = values.iter().position(|&v| v != 0 && v != 1) {
                return Err(Error::format(0, format!("mask voxel {i} is neither 0 nor 1")));
            }
            Ok(MeltMask::from_flags(spec, values.iter().map(|&v| v == 1).collect()))
        }
        _ => Err(Error::format(0, "mask files hold one i32 channel")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::generate_voronoi_microstructure;

    fn sample() -> GrainField {
        let spec = DomainSpec::from_dims([7, 5, 3], 2.155).unwrap();
        generate_voronoi_microstructure(spec, 9, 20, 1).unwrap()
    }

    #[test]
    fn grain_roundtrip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.vgf");
        let f = sample();
        save_grain_field(&p, &f, Some("abc")).unwrap();
        let back = load_grain_field(&p).unwrap();
        assert_eq!(back, f);
    }

    #[test]
    fn order_parameter_roundtrip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("eta.vgf");
        let mut f = sample();
        f.ensure_eta();
        let eta = f.eta_mut().unwrap();
        eta[3] = 0.123456789012345;
        f.relabel();
        save_order_parameters(&p, &f, None).unwrap();
        assert_eq!(load_grain_field(&p).unwrap(), f);
    }

    #[test]
    fn temperature_roundtrip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.vgf");
        let spec = DomainSpec::from_dims([4, 3, 2], 1.0).unwrap();
        let t = TemperatureField::new(spec, (0..24).map(|i| 293.0 + i as f32 * 17.31).collect()).unwrap();
        save_temperature(&p, &t, None).unwrap();
        assert_eq!(load_temperature(&p).unwrap(), t);
    }

    #[test]
    fn header_is_single_json_line() {
        let bytes = grain_field_file(&sample(), None).encode();
        let nl = bytes.iter().position(|&b| b == b'\n').unwrap();
        let v: serde_json::Value = serde_json::from_slice(&bytes[..nl]).unwrap();
        assert_eq!(v["magic"], "VGF1");
        assert_eq!(v["dtype"], "i32");
        assert_eq!(v["order"], "x-fastest");
        assert_eq!(v["endian"], "little");
        assert_eq!(v["dims"], serde_json::json!([7, 5, 3]));
        assert_eq!(bytes.len() - nl - 1, 7 * 5 * 3 * 4);
    }

    #[test]
    fn truncated_payload_reports_offset() {
        let mut bytes = grain_field_file(&sample(), None).encode();
        bytes.truncate(bytes.len() - 6);
        let nl = bytes.iter().position(|&b| b == b'\n').unwrap();
        match VgfFile::decode(&bytes) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset as usize, bytes.len().min(nl + 1 + 7 * 5 * 3 * 4)),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn inconsistent_dims_rejected() {
        let mut file = grain_field_file(&sample(), None);
        file.header.dims = [7, 5, 4];
        assert!(matches!(VgfFile::decode(&file.encode()), Err(Error::Format { .. })));
    }

    #[test]
    fn big_endian_rejected() {
        let mut file = grain_field_file(&sample(), None);
        file.header.endian = "big".into();
        assert!(matches!(VgfFile::decode(&file.encode()), Err(Error::Format { offset: 0, .. })));
    }

    #[test]
    fn malformed_header_rejected() {
        assert!(matches!(VgfFile::decode(b"{\"magic\": \n"), Err(Error::Format { .. })));
        assert!(matches!(VgfFile::decode(b"no newline"), Err(Error::Format { offset: 10, .. })));
        let mut file = grain_field_file(&sample(), None);
        file.header.magic = "VGF2".into();
        assert!(matches!(VgfFile::decode(&file.encode()), Err(Error::Format { .. })));
    }
}
