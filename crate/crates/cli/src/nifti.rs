//! Single-file NIfTI-1 (`.nii`, `.nii.gz`) reading and writing.
//!
//! Only what the statistics need: dimensions, datatype, scaling and payload.
//! Spatial fields (qform/sform, pixdim, units) are carried through untouched
//! in the raw 348-byte header, which is kept in little-endian form whatever
//! the byte order of the source file.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{BigEndian, ByteOrder, LittleEndian};
use flate2::read::MultiGzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

pub const HEADER_SIZE: usize = 348;
/// Header plus the 4-byte extension flag.
pub const DATA_OFFSET: usize = 352;

pub const DT_INT16: i16 = 4;
pub const DT_FLOAT32: i16 = 16;
pub const DT_FLOAT64: i16 = 64;

const MAGIC_SINGLE: &[u8; 4] = b"n+1\0";

// (offset, element width, element count) of every multi-byte numeric field.
const NUMERIC_FIELDS: &[(usize, usize, usize)] = &[
    (0, 4, 1),   // sizeof_hdr
    (32, 4, 1),  // extents
    (36, 2, 1),  // session_error
    (40, 2, 8),  // dim
    (56, 4, 3),  // intent_p1..3
    (68, 2, 4),  // intent_code, datatype, bitpix, slice_start
    (76, 4, 8),  // pixdim
    (108, 4, 3), // vox_offset, scl_slope, scl_inter
    (120, 2, 1), // slice_end
    (124, 4, 4), // cal_max, cal_min, slice_duration, toffset
    (140, 4, 2), // glmax, glmin
    (252, 2, 2), // qform_code, sform_code
    (256, 4, 6), // quatern_b..qoffset_z
    (280, 4, 12), // srow_x, srow_y, srow_z
];

#[derive(Debug, thiserror::Error)]
pub enum NiftiError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {field}: {message}")]
    Format { path: PathBuf, field: &'static str, message: String },
}

fn format_err(path: &Path, field: &'static str, message: impl Into<String>) -> NiftiError {
    NiftiError::Format { path: path.to_path_buf(), field, message: message.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Endianness {
    Little,
    Big,
}

/// Raw header bytes, normalized to little-endian.
#[derive(Clone, PartialEq, Eq)]
pub struct NiftiHeader {
    raw: [u8; HEADER_SIZE],
    source_endianness: Endianness,
}

impl std::fmt::Debug for NiftiHeader {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("NiftiHeader")
            .field("dim", &self.dim())
            .field("datatype", &self.datatype())
            .field("vox_offset", &self.vox_offset())
            .field("scl_slope", &self.scl_slope())
            .field("scl_inter", &self.scl_inter())
            .field("source_endianness", &self.source_endianness)
            .finish()
    }
}

fn swap_fields(raw: &mut [u8; HEADER_SIZE]) {
    for &(offset, width, count) in NUMERIC_FIELDS {
        for i in 0..count {
            let at = offset + i * width;
            raw[at..at + width].reverse();
        }
    }
}

impl NiftiHeader {
    /// Fresh header for a grid with unit voxel sizes.
    pub fn new(dims: &[usize]) -> Self {
        let mut h = Self { raw: [0; HEADER_SIZE], source_endianness: Endianness::Little };
        LittleEndian::write_i32(&mut h.raw[0..4], HEADER_SIZE as i32);
        h.raw[344..348].copy_from_slice(MAGIC_SINGLE);
        for i in 1..8 {
            h.set_f32(76 + 4 * i, 1.0);
        }
        h.set_float64_layout(dims);
        h
    }

    /// Parse and normalize the first 348 bytes of a file.
    fn parse(bytes: &[u8], path: &Path) -> Result<Self, NiftiError> {
        if bytes.len() < HEADER_SIZE {
            return Err(format_err(path, "sizeof_hdr", format!("file has only {} bytes", bytes.len())));
        }
        let mut raw = [0u8; HEADER_SIZE];
        raw.copy_from_slice(&bytes[..HEADER_SIZE]);
        let source_endianness = if LittleEndian::read_i32(&raw[0..4]) == HEADER_SIZE as i32 {
            Endianness::Little
        } else if BigEndian::read_i32(&raw[0..4]) == HEADER_SIZE as i32 {
            swap_fields(&mut raw);
            Endianness::Big
        } else {
            return Err(format_err(path, "sizeof_hdr", "expected 348 in either byte order"));
        };
        let h = Self { raw, source_endianness };
        if &h.raw[344..348] != MAGIC_SINGLE {
            return Err(format_err(
                path,
                "magic",
                format!("expected \"n+1\" (single-file NIfTI-1), got {:?}", String::from_utf8_lossy(&h.raw[344..347])),
            ));
        }
        let dim = h.dim();
        if !(1..=7).contains(&dim[0]) {
            return Err(format_err(path, "dim", format!("dim[0] = {} outside 1..=7", dim[0])));
        }
        if let Some(i) = (1..=dim[0] as usize).find(|&i| dim[i] < 1) {
            return Err(format_err(path, "dim", format!("dim[{i}] = {} is not positive", dim[i])));
        }
        Ok(h)
    }

    fn i16_at(&self, offset: usize) -> i16 {
        LittleEndian::read_i16(&self.raw[offset..offset + 2])
    }

    fn f32_at(&self, offset: usize) -> f32 {
        LittleEndian::read_f32(&self.raw[offset..offset + 4])
    }

    fn set_i16(&mut self, offset: usize, v: i16) {
        LittleEndian::write_i16(&mut self.raw[offset..offset + 2], v);
    }

    fn set_f32(&mut self, offset: usize, v: f32) {
        LittleEndian::write_f32(&mut self.raw[offset..offset + 4], v);
    }

    pub fn dim(&self) -> [i16; 8] {
        std::array::from_fn(|i| self.i16_at(40 + 2 * i))
    }

    /// Extents of the used dimensions.
    pub fn shape(&self) -> Vec<usize> {
        let dim = self.dim();
        (1..=dim[0] as usize).map(|i| dim[i] as usize).collect()
    }

    pub fn datatype(&self) -> i16 {
        self.i16_at(70)
    }

    pub fn bitpix(&self) -> i16 {
        self.i16_at(72)
    }

    pub fn pixdim(&self) -> [f32; 8] {
        std::array::from_fn(|i| self.f32_at(76 + 4 * i))
    }

    pub fn vox_offset(&self) -> f32 {
        self.f32_at(108)
    }

    pub fn scl_slope(&self) -> f32 {
        self.f32_at(112)
    }

    pub fn scl_inter(&self) -> f32 {
        self.f32_at(116)
    }

    pub fn source_endianness(&self) -> Endianness {
        self.source_endianness
    }

    /// Voxel sizes along x, y, z (1 where unset or invalid).
    pub fn voxel_sizes(&self) -> [f64; 3] {
        let p = self.pixdim();
        std::array::from_fn(|i| {
            let s = p[i + 1].abs() as f64;
            if s.is_finite() && s > 0.0 {
                s
            } else {
                1.0
            }
        })
    }

    /// Rewrite dimensions, datatype and scaling for an unscaled float64 payload
    /// directly after the header; all other fields are kept.
    pub fn set_float64_layout(&mut self, dims: &[usize]) {
        assert!((1..=7).contains(&dims.len()), "NIfTI-1 supports 1 to 7 dimensions");
        self.set_i16(40, dims.len() as i16);
        for i in 1..8 {
            let extent = dims.get(i - 1).map_or(1, |&d| i16::try_from(d).expect("extent fits NIfTI-1 dim"));
            self.set_i16(40 + 2 * i, extent);
        }
        self.set_i16(70, DT_FLOAT64);
        self.set_i16(72, 64);
        self.set_f32(108, DATA_OFFSET as f32);
        self.set_f32(112, 1.0);
        self.set_f32(116, 0.0);
        // Display range no longer describes the new payload.
        self.set_f32(124, 0.0);
        self.set_f32(128, 0.0);
        self.raw[344..348].copy_from_slice(MAGIC_SINGLE);
        self.source_endianness = Endianness::Little;
    }
}

/// Header plus payload decoded to `f64` in NIfTI (x fastest) order.
#[derive(Debug, Clone, PartialEq)]
pub struct NiftiVolume {
    pub header: NiftiHeader,
    pub data: Vec<f64>,
}

impl NiftiVolume {
    /// Float64 volume reusing `template`'s spatial fields (or a fresh header).
    pub fn from_data(template: Option<&NiftiHeader>, dims: &[usize], data: Vec<f64>) -> Self {
        assert_eq!(dims.iter().product::<usize>(), data.len(), "payload length matches dims");
        let mut header = template.cloned().unwrap_or_else(|| NiftiHeader::new(dims));
        header.set_float64_layout(dims);
        Self { header, data }
    }

    pub fn shape(&self) -> Vec<usize> {
        self.header.shape()
    }

    /// Spatial grid `[nx, ny, nz]`.
    pub fn grid_dims(&self) -> [usize; 3] {
        let s = self.shape();
        std::array::from_fn(|i| s.get(i).copied().unwrap_or(1))
    }

    /// Number of 3D volumes stacked along the remaining dimensions.
    pub fn volume_count(&self) -> usize {
        self.shape().iter().skip(3).product()
    }

    pub fn volume(&self, i: usize) -> &[f64] {
        let n: usize = self.grid_dims().iter().product();
        &self.data[i * n..(i + 1) * n]
    }
}

fn is_gzip(path: &Path, bytes: &[u8]) -> bool {
    bytes.starts_with(&[0x1f, 0x8b]) || path.extension().is_some_and(|e| e == "gz")
}

fn decode<B: ByteOrder>(payload: &[u8], datatype: i16, n: usize) -> Vec<f64> {
    match datatype {
        DT_INT16 => payload[..2 * n].chunks_exact(2).map(|c| B::read_i16(c) as f64).collect(),
        DT_FLOAT32 => payload[..4 * n].chunks_exact(4).map(|c| B::read_f32(c) as f64).collect(),
        DT_FLOAT64 => payload[..8 * n].chunks_exact(8).map(B::read_f64).collect(),
        _ => unreachable!("datatype checked by caller"),
    }
}

pub fn read_nifti(path: impl AsRef<Path>) -> Result<NiftiVolume, NiftiError> {
    let path = path.as_ref();
    let io = |source| NiftiError::Io { path: path.to_path_buf(), source };
    let mut bytes = std::fs::read(path).map_err(io)?;
    if is_gzip(path, &bytes) {
        let mut out = Vec::new();
        MultiGzDecoder::new(bytes.as_slice()).read_to_end(&mut out).map_err(io)?;
        bytes = out;
    }
    let header = NiftiHeader::parse(&bytes, path)?;
    let width = match header.datatype() {
        DT_INT16 => 2,
        DT_FLOAT32 => 4,
        DT_FLOAT64 => 8,
        code => {
            return Err(format_err(
                path,
                "datatype",
                format!("unsupported datatype code {code} (supported: 4 int16, 16 float32, 64 float64)"),
            ))
        }
    };
    let offset = header.vox_offset();
    if !(offset.is_finite() && offset >= HEADER_SIZE as f32) {
        return Err(format_err(path, "vox_offset", format!("{offset} precedes the end of the header")));
    }
    let offset = offset as usize;
    let n: usize = header.shape().iter().product();
    let needed = offset + n * width;
    if bytes.len() < needed {
        return Err(format_err(
            path,
            "payload",
            format!("truncated: {} voxels need {needed} bytes, file has {}", n, bytes.len()),
        ));
    }
    let payload = &bytes[offset..];
    let mut data = match header.source_endianness() {
        Endianness::Little => decode::<LittleEndian>(payload, header.datatype(), n),
        Endianness::Big => decode::<BigEndian>(payload, header.datatype(), n),
    };
    let (slope, inter) = (header.scl_slope() as f64, header.scl_inter() as f64);
    if slope != 0.0 && slope.is_finite() && inter.is_finite() && !(slope == 1.0 && inter == 0.0) {
        for v in &mut data {
            *v = *v * slope + inter;
        }
    }
    Ok(NiftiVolume { header, data })
}

/// Write as little-endian float64 with unit scaling; gzip when the path ends in `.gz`.
pub fn write_nifti(volume: &NiftiVolume, path: impl AsRef<Path>) -> Result<(), NiftiError> {
    let path = path.as_ref();
    let io = |source| NiftiError::Io { path: path.to_path_buf(), source };
    let mut header = volume.header.clone();
    header.set_float64_layout(&volume.shape());
    let mut bytes = Vec::with_capacity(DATA_OFFSET + 8 * volume.data.len());
    bytes.extend_from_slice(&header.raw);
    bytes.extend_from_slice(&[0; DATA_OFFSET - HEADER_SIZE]);
    let start = bytes.len();
    bytes.resize(start + 8 * volume.data.len(), 0);
    LittleEndian::write_f64_into(&volume.data, &mut bytes[start..]);

    let file = BufWriter::new(File::create(path).map_err(io)?);
    if path.extension().is_some_and(|e| e == "gz") {
        let mut gz = GzEncoder::new(file, Compression::default());
        gz.write_all(&bytes).map_err(io)?;
        gz.finish().map_err(io)?.flush().map_err(io)?;
    } else {
        let mut file = file;
        file.write_all(&bytes).map_err(io)?;
        file.flush().map_err(io)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Hand-built single-file image following the standard header layout.
    pub(crate) fn fixture_bytes<B: ByteOrder>(dims: &[i16], datatype: i16, payload: &[u8], slope: f32, inter: f32) -> Vec<u8> {
        let mut b = vec![0u8; DATA_OFFSET];
        B::write_i32(&mut b[0..4], 348);
        B::write_i16(&mut b[40..42], dims.len() as i16);
        for (i, &d) in dims.iter().enumerate() {
            B::write_i16(&mut b[42 + 2 * i..44 + 2 * i], d);
        }
        let bitpix = match datatype {
            DT_INT16 => 16,
            DT_FLOAT32 => 32,
            DT_FLOAT64 => 64,
            _ => 8,
        };
        B::write_i16(&mut b[70..72], datatype);
        B::write_i16(&mut b[72..74], bitpix);
        B::write_f32(&mut b[108..112], 352.0);
        B::write_f32(&mut b[112..116], slope);
        B::write_f32(&mut b[116..120], inter);
        b[344..348].copy_from_slice(b"n+1\0");
        b.extend_from_slice(payload);
        b
    }

    fn f32_payload<B: ByteOrder>(values: &[f32]) -> Vec<u8> {
        let mut p = vec![0u8; 4 * values.len()];
        B::write_f32_into(values, &mut p);
        p
    }

    fn write_tmp(dir: &tempfile::TempDir, name: &str, bytes: &[u8]) -> PathBuf {
        let p = dir.path().join(name);
        std::fs::write(&p, bytes).unwrap();
        p
    }

    #[test]
    fn reads_hand_built_float32() {
        let dir = tempfile::tempdir().unwrap();
        let values: Vec<f32> = (0..8).map(|i| i as f32 * 0.5 - 1.0).collect();
        let bytes = fixture_bytes::<LittleEndian>(&[2, 2, 2], DT_FLOAT32, &f32_payload::<LittleEndian>(&values), 0.0, 0.0);
        let v = read_nifti(write_tmp(&dir, "a.nii", &bytes)).unwrap();
        assert_eq!(v.shape(), vec![2, 2, 2]);
        assert_eq!(v.data, values.iter().map(|&x| x as f64).collect::<Vec<_>>());
        assert_eq!(v.header.source_endianness(), Endianness::Little);
    }

    #[test]
    fn reads_byte_swapped_header() {
        let dir = tempfile::tempdir().unwrap();
        let values = [1.5f32, -2.0, 3.25, 0.0];
        let bytes = fixture_bytes::<BigEndian>(&[4, 1, 1], DT_FLOAT32, &f32_payload::<BigEndian>(&values), 0.0, 0.0);
        let v = read_nifti(write_tmp(&dir, "be.nii", &bytes)).unwrap();
        assert_eq!(v.header.source_endianness(), Endianness::Big);
        assert_eq!(v.data, vec![1.5, -2.0, 3.25, 0.0]);
    }

    #[test]
    fn applies_scaling_to_int16() {
        let dir = tempfile::tempdir().unwrap();
        let mut payload = vec![0u8; 6];
        LittleEndian::write_i16_into(&[-3, 0, 7], &mut payload);
        let bytes = fixture_bytes::<LittleEndian>(&[3], DT_INT16, &payload, 0.5, 1.0);
        let v = read_nifti(write_tmp(&dir, "s.nii", &bytes)).unwrap();
        assert_eq!(v.data, vec![-0.5, 1.0, 4.5]);
    }

    #[test]
    fn rejects_uint8_naming_the_code() {
        let dir = tempfile::tempdir().unwrap();
        let bytes = fixture_bytes::<LittleEndian>(&[2], 2, &[1, 2], 0.0, 0.0);
        let err = read_nifti(write_tmp(&dir, "u8.nii", &bytes)).unwrap_err().to_string();
        assert!(err.contains("datatype") && err.contains("code 2"), "{err}");
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let mut bytes = fixture_bytes::<LittleEndian>(&[4], DT_FLOAT32, &[0; 16], 0.0, 0.0);
        let err = read_nifti(write_tmp(&dir, "t.nii", &bytes[..360])).unwrap_err().to_string();
        assert!(err.contains("payload") && err.contains("truncated"), "{err}");
        bytes[344] = b'x';
        let err = read_nifti(write_tmp(&dir, "m.nii", &bytes)).unwrap_err().to_string();
        assert!(err.contains("magic"), "{err}");
        let err = read_nifti(write_tmp(&dir, "h.nii", &bytes[..100])).unwrap_err().to_string();
        assert!(err.contains("sizeof_hdr"), "{err}");
    }

    #[test]
    fn round_trip_plain_and_gzip() {
        let dir = tempfile::tempdir().unwrap();
        let data: Vec<f64> = (0..27).map(|i| (i as f64).sin() * 1e-3 + i as f64).collect();
        let v = NiftiVolume::from_data(None, &[3, 3, 3], data.clone());
        for name in ["r.nii", "r.nii.gz"] {
            let p = dir.path().join(name);
            write_nifti(&v, &p).unwrap();
            let back = read_nifti(&p).unwrap();
            assert_eq!(back.data.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), data.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
            assert_eq!(back.header.datatype(), DT_FLOAT64);
            assert_eq!(back.header.scl_slope(), 1.0);
        }
    }

    #[test]
    fn header_fields_survive_a_rewrite() {
        let dir = tempfile::tempdir().unwrap();
        let mut bytes = fixture_bytes::<BigEndian>(&[2, 1, 1], DT_FLOAT32, &f32_payload::<BigEndian>(&[1.0, 2.0]), 0.0, 0.0);
        BigEndian::write_i16(&mut bytes[254..256], 2); // sform_code
        BigEndian::write_f32(&mut bytes[280..284], 2.5); // srow_x[0]
        let src = read_nifti(write_tmp(&dir, "src.nii", &bytes)).unwrap();
        let out = NiftiVolume::from_data(Some(&src.header), &[2, 1, 1], vec![0.25, 0.75]);
        let p = dir.path().join("out.nii");
        write_nifti(&out, &p).unwrap();
        let back = read_nifti(&p).unwrap();
        assert_eq!(back.header.i16_at(254), 2);
        assert_eq!(back.header.f32_at(280), 2.5);
        assert_eq!(back.data, vec![0.25, 0.75]);
    }
}
