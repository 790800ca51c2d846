//! Single-file NIfTI-1 reading and writing.
//!
//! Only the subset needed here is supported: magic "n+1", datatype uint8 /
//! int16 / float32, dim[0] == 3, optional gzip (sniffed from the 0x1f 0x8b
//! prefix on read, chosen by a `.gz` suffix on write). Values are promoted
//! to f64 and scl_slope/scl_inter are applied when the slope is nonzero.
//!
//! Axis convention: the file's fastest-varying dimension dim[1] maps to our
//! W axis, dim[2] to H, dim[3] to D, so the payload bytes are exactly our
//! row-major (D,H,W) order and `spacing = [pixdim[3], pixdim[2], pixdim[1]]`.

use std::io::{Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use super::volume::{Modality, SegMask, Volume};
use crate::error::{Error, Result};

pub const HEADER_SIZE: usize = 348;
pub const DATA_OFFSET: usize = 352;

const DT_UINT8: i16 = 2;
const DT_INT16: i16 = 4;
const DT_FLOAT32: i16 = 16;
const UNITS_MM: u8 = 2;

fn nifti_err(path: &Path, detail: impl Into<String>) -> Error {
    Error::Nifti {
        path: path.display().to_string(),
        detail: detail.into(),
    }
}

// --- header assembly ---

struct Header {
    dims: [usize; 3],
    spacing: [f64; 3],
    datatype: i16,
    descrip: String,
}

fn put_i16(buf: &mut [u8], off: usize, v: i16) {
    buf[off..off + 2].copy_from_slice(&v.to_le_bytes());
}

fn put_i32(buf: &mut [u8], off: usize, v: i32) {
    buf[off..off + 4].copy_from_slice(&v.to_le_bytes());
}

fn put_f32(buf: &mut [u8], off: usize, v: f32) {
    buf[off..off + 4].copy_from_slice(&v.to_le_bytes());
}

fn encode_header(h: &Header) -> [u8; HEADER_SIZE] {
    let mut buf = [0u8; HEADER_SIZE];
    put_i32(&mut buf, 0, HEADER_SIZE as i32);
    // dim[0] = rank, dim[1..3] = W, H, D (fastest first).
    put_i16(&mut buf, 40, 3);
    put_i16(&mut buf, 42, h.dims[2] as i16);
    put_i16(&mut buf, 44, h.dims[1] as i16);
    put_i16(&mut buf, 46, h.dims[0] as i16);
    for k in 4..8 {
        put_i16(&mut buf, 40 + 2 * k, 1);
    }
    put_i16(&mut buf, 70, h.datatype);
    let bitpix = match h.datatype {
        DT_UINT8 => 8,
        DT_INT16 => 16,
        _ => 32,
    };
    put_i16(&mut buf, 72, bitpix);
    put_f32(&mut buf, 76, 1.0); // qfac
    put_f32(&mut buf, 80, h.spacing[2] as f32);
    put_f32(&mut buf, 84, h.spacing[1] as f32);
    put_f32(&mut buf, 88, h.spacing[0] as f32);
    put_f32(&mut buf, 108, DATA_OFFSET as f32);
    // scl_slope 0 means "no scaling"; cal/toffset stay 0.
    buf[123] = UNITS_MM;
    let descrip = h.descrip.as_bytes();
    let n = descrip.len().min(79);
    buf[148..148 + n].copy_from_slice(&descrip[..n]);
    buf[344..348].copy_from_slice(b"n+1\0");
    buf
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let io = |e| Error::io(path, e);
    let file = std::fs::File::create(path).map_err(io)?;
    if path.extension().is_some_and(|e| e == "gz") {
        let mut enc = GzEncoder::new(file, Compression::fast());
        enc.write_all(bytes).and_then(|_| enc.finish().map(drop)).map_err(io)
    } else {
        let mut w = std::io::BufWriter::new(file);
        w.write_all(bytes).and_then(|_| w.flush()).map_err(io)
    }
}

/// Write a volume as float32. Values outside the f32 range are an error.
pub fn write_nifti_volume(volume: &Volume, path: &Path) -> Result<()> {
    let header = encode_header(&Header {
        dims: volume.dims,
        spacing: volume.spacing,
        datatype: DT_FLOAT32,
        descrip: volume.case_id.clone(),
    });
    let mut bytes = Vec::with_capacity(DATA_OFFSET + 4 * volume.numel());
    bytes.extend_from_slice(&header);
    bytes.extend_from_slice(&[0u8; 4]); // no extensions
    for &v in &volume.data {
        let f = v as f32;
        if !f.is_finite() {
            return Err(nifti_err(path, format!("value {v} overflows float32")));
        }
        bytes.extend_from_slice(&f.to_le_bytes());
    }
    write_bytes(path, &bytes)
}

/// Write a mask as uint8.
pub fn write_nifti_mask(mask: &SegMask, spacing: [f64; 3], path: &Path) -> Result<()> {
    let header = encode_header(&Header {
        dims: mask.dims,
        spacing,
        datatype: DT_UINT8,
        descrip: String::new(),
    });
    let mut bytes = Vec::with_capacity(DATA_OFFSET + mask.labels.len());
    bytes.extend_from_slice(&header);
    bytes.extend_from_slice(&[0u8; 4]);
    bytes.extend_from_slice(&mask.labels);
    write_bytes(path, &bytes)
}

// --- reading ---

fn read_all(path: &Path) -> Result<Vec<u8>> {
    let io = |e| Error::io(path, e);
    let raw = std::fs::read(path).map_err(io)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| nifti_err(path, format!("gzip decode failed: {e}")))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn get_i16(buf: &[u8], off: usize) -> i16 {
    i16::from_le_bytes(buf[off..off + 2].try_into().unwrap())
}

fn get_f32(buf: &[u8], off: usize) -> f32 {
    f32::from_le_bytes(buf[off..off + 4].try_into().unwrap())
}

/// Read a volume, promoting the payload to f64 and applying scl scaling.
/// The modality tag is `Raw`; callers with manifest knowledge re-tag it.
pub fn read_nifti(path: &Path) -> Result<Volume> {
    let bytes = read_all(path)?;
    if bytes.len() < HEADER_SIZE {
        return Err(nifti_err(
            path,
            format!("file is {} bytes, shorter than the 348-byte header", bytes.len()),
        ));
    }
    let sizeof_hdr = i32::from_le_bytes(bytes[0..4].try_into().unwrap());
    if sizeof_hdr != HEADER_SIZE as i32 {
        if i32::from_be_bytes(bytes[0..4].try_into().unwrap()) == HEADER_SIZE as i32 {
            return Err(nifti_err(path, "byte-swapped (big-endian) NIfTI is unsupported"));
        }
        return Err(nifti_err(path, format!("sizeof_hdr {sizeof_hdr}, not a NIfTI-1 file")));
    }
    let magic = &bytes[344..348];
    if magic != b"n+1\0" {
        return Err(nifti_err(
            path,
            format!("bad magic {:?} (only single-file \"n+1\" is supported)", &magic[..3]),
        ));
    }
    let rank = get_i16(&bytes, 40);
    if rank != 3 {
        return Err(nifti_err(path, format!("dim[0] = {rank}, only 3D images are supported")));
    }
    let (w, h, d) = (get_i16(&bytes, 42), get_i16(&bytes, 44), get_i16(&bytes, 46));
    if w <= 0 || h <= 0 || d <= 0 {
        return Err(nifti_err(path, format!("non-positive dims {d}x{h}x{w}")));
    }
    let dims = [d as usize, h as usize, w as usize];
    let numel: usize = dims.iter().product();

    let datatype = get_i16(&bytes, 70);
    let spacing = [
        get_f32(&bytes, 88) as f64,
        get_f32(&bytes, 84) as f64,
        get_f32(&bytes, 80) as f64,
    ];
    if spacing.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
        return Err(nifti_err(path, format!("non-positive pixdim spacing {spacing:?}")));
    }
    let vox_offset = get_f32(&bytes, 108);
    if !(vox_offset.is_finite() && vox_offset >= HEADER_SIZE as f32) {
        return Err(nifti_err(path, format!("implausible vox_offset {vox_offset}")));
    }
    let offset = vox_offset as usize;
    let slope = get_f32(&bytes, 112) as f64;
    let inter = get_f32(&bytes, 116) as f64;

    let elem = match datatype {
        DT_UINT8 => 1,
        DT_INT16 => 2,
        DT_FLOAT32 => 4,
        other => {
            return Err(nifti_err(
                path,
                format!("unsupported datatype {other} (only uint8/int16/float32)"),
            ))
        }
    };
    let need = offset + numel * elem;
    if bytes.len() < need {
        return Err(nifti_err(
            path,
            format!("truncated payload: {} bytes, need {need}", bytes.len()),
        ));
    }
    let payload = &bytes[offset..need];
    let mut data: Vec<f64> = match datatype {
        DT_UINT8 => payload.iter().map(|&b| b as f64).collect(),
        DT_INT16 => payload
            .chunks_exact(2)
            .map(|c| i16::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
        _ => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
    };
    if slope != 0.0 {
        for v in &mut data {
            *v = slope * *v + inter;
        }
    }

    let descrip: String = bytes[148..228]
        .iter()
        .take_while(|&&b| b != 0)
        .map(|&b| b as char)
        .collect();
    let case_id = if descrip.is_empty() {
        path.file_name()
            .map(|n| {
                n.to_string_lossy()
                    .trim_end_matches(".gz")
                    .trim_end_matches(".nii")
                    .to_string()
            })
            .unwrap_or_else(|| "unknown".into())
    } else {
        descrip
    };
    Volume::new(case_id, dims, data, spacing, Modality::Raw)
        .map_err(|e| nifti_err(path, e.to_string()))
}

/// Read a mask file: every value must be a non-negative integer below
/// `num_classes`. Returns the labels and the file's spacing so callers can
/// confirm alignment with the paired volume.
pub fn read_nifti_mask(path: &Path, num_classes: usize) -> Result<(SegMask, [f64; 3])> {
    let volume = read_nifti(path)?;
    let mut labels = Vec::with_capacity(volume.numel());
    for &v in &volume.data {
        if v.fract() != 0.0 || v < 0.0 || v >= num_classes as f64 {
            return Err(nifti_err(
                path,
                format!("mask value {v} is not an integer label below {num_classes}"),
            ));
        }
        labels.push(v as u8);
    }
    let mask = SegMask::new(volume.dims, labels, num_classes)
        .map_err(|e| nifti_err(path, e.to_string()))?;
    Ok((mask, volume.spacing))
}
