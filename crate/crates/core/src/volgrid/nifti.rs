//! Single-file NIfTI-1 (`.nii`) reading and writing.
//!
//! Reading accepts either byte order and any 8/16/32/64-bit integer or real
//! datatype. Writing always emits little-endian float32 with the data block at
//! byte 352. Channels map to `dim[4]`.

use std::fs;
use std::io::ErrorKind;
use std::path::Path;

use super::Volume;
use crate::error::{Error, Result};

const HEADER_SIZE: usize = 348;
const VOX_OFFSET: usize = 352;
const MAGIC_SINGLE: &[u8; 4] = b"n+1\0";
const MAGIC_PAIR: &[u8; 4] = b"ni1\0";

const DT_UINT8: i16 = 2;
const DT_INT16: i16 = 4;
const DT_INT32: i16 = 8;
const DT_FLOAT32: i16 = 16;
const DT_FLOAT64: i16 = 64;
const DT_INT8: i16 = 256;
const DT_UINT16: i16 = 512;
const DT_UINT32: i16 = 768;
const DT_INT64: i16 = 1024;
const DT_UINT64: i16 = 1280;

pub fn read_nifti(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_nifti(&bytes).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

pub fn write_nifti(v: &Volume, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_nifti(v)).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    little: bool,
}

impl Reader<'_> {
    fn i16(&self, at: usize) -> i16 {
        let b = [self.bytes[at], self.bytes[at + 1]];
        if self.little {
            i16::from_le_bytes(b)
        } else {
            i16::from_be_bytes(b)
        }
    }

    fn i32(&self, at: usize) -> i32 {
        let b: [u8; 4] = self.bytes[at..at + 4].try_into().unwrap();
        if self.little {
            i32::from_le_bytes(b)
        } else {
            i32::from_be_bytes(b)
        }
    }

    fn f32(&self, at: usize) -> f32 {
        f32::from_bits(self.i32(at) as u32)
    }

    fn word<const N: usize>(&self, at: usize) -> [u8; N] {
        let mut b: [u8; N] = self.bytes[at..at + N].try_into().unwrap();
        if !self.little {
            b.reverse();
        }
        b
    }
}

fn truncated(what: &str) -> Error {
    Error::Io {
        path: "<nifti>".into(),
        source: std::io::Error::new(ErrorKind::UnexpectedEof, what.to_string()),
    }
}

/// Parses an in-memory `.nii` image.
pub fn decode_nifti(bytes: &[u8]) -> Result<Volume> {
    if bytes.len() < HEADER_SIZE {
        return Err(truncated("header shorter than 348 bytes"));
    }
    let little = match (
        i32::from_le_bytes(bytes[0..4].try_into().unwrap()),
        i32::from_be_bytes(bytes[0..4].try_into().unwrap()),
    ) {
        (348, _) => true,
        (_, 348) => false,
        _ => return Err(Error::Format("sizeof_hdr is not 348".into())),
    };
    let magic = &bytes[344..348];
    if magic == MAGIC_PAIR {
        return Err(Error::Format("detached header/image pair (ni1) is not supported".into()));
    }
    if magic != MAGIC_SINGLE {
        return Err(Error::Format(format!("bad magic {magic:?}")));
    }
    let r = Reader { bytes, little };

    let ndim = r.i16(40);
    if !(1..=7).contains(&ndim) {
        return Err(Error::Format(format!("dim[0] = {ndim} out of range")));
    }
    let mut dim = [1usize; 8];
    for (i, d) in dim.iter_mut().enumerate().skip(1).take(ndim as usize) {
        let raw = r.i16(40 + 2 * i);
        if raw < 1 {
            return Err(Error::Format(format!("dim[{i}] = {raw} must be positive")));
        }
        *d = raw as usize;
    }
    if dim[5..].iter().any(|&d| d != 1) {
        return Err(Error::Unsupported(format!("dimensions beyond the 4th: {:?}", &dim[5..])));
    }
    let datatype = r.i16(70);
    let width = match datatype {
        DT_UINT8 | DT_INT8 => 1,
        DT_INT16 | DT_UINT16 => 2,
        DT_INT32 | DT_UINT32 | DT_FLOAT32 => 4,
        DT_INT64 | DT_UINT64 | DT_FLOAT64 => 8,
        other => return Err(Error::Unsupported(format!("datatype code {other}"))),
    };
    let spacing = [r.f32(80).abs(), r.f32(84).abs(), r.f32(88).abs()];
    let spacing = spacing.map(|s| if s > 0.0 && s.is_finite() { s } else { 1.0 });
    let vox_offset = r.f32(108);
    if !(vox_offset >= HEADER_SIZE as f32) {
        return Err(Error::Format(format!("vox_offset {vox_offset} inside header")));
    }
    let vox_offset = vox_offset as usize;
    let slope = r.f32(112);
    let inter = r.f32(116);
    let qform = r.i16(252);
    let sform = r.i16(254);
    let origin = if qform > 0 {
        [r.f32(268), r.f32(272), r.f32(276)]
    } else if sform > 0 {
        [r.f32(292), r.f32(308), r.f32(324)]
    } else {
        [0.0; 3]
    };

    let (nx, ny, nz, nc) = (dim[1], dim[2], dim[3], dim[4]);
    let count = nx * ny * nz * nc;
    let end = vox_offset + count * width;
    if bytes.len() < end {
        return Err(truncated("data section shorter than dims × datatype size"));
    }
    let raw = &bytes[vox_offset..end];
    let sample = |i: usize| -> f64 {
        let at = i * width;
        match datatype {
            DT_UINT8 => raw[at] as f64,
            DT_INT8 => raw[at] as i8 as f64,
            DT_INT16 => i16::from_le_bytes(Reader { bytes: raw, little }.word::<2>(at)) as f64,
            DT_UINT16 => u16::from_le_bytes(Reader { bytes: raw, little }.word::<2>(at)) as f64,
            DT_INT32 => i32::from_le_bytes(Reader { bytes: raw, little }.word::<4>(at)) as f64,
            DT_UINT32 => u32::from_le_bytes(Reader { bytes: raw, little }.word::<4>(at)) as f64,
            DT_FLOAT32 => f32::from_le_bytes(Reader { bytes: raw, little }.word::<4>(at)) as f64,
            DT_INT64 => i64::from_le_bytes(Reader { bytes: raw, little }.word::<8>(at)) as f64,
            DT_UINT64 => u64::from_le_bytes(Reader { bytes: raw, little }.word::<8>(at)) as f64,
            DT_FLOAT64 => f64::from_le_bytes(Reader { bytes: raw, little }.word::<8>(at)),
            _ => unreachable!(),
        }
    };
    let scale = slope != 0.0 && slope.is_finite();

    // Disk order is x fastest, then y, z, channel.
    let mut data = vec![0.0f32; count];
    for c in 0..nc {
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    let disk = ((c * nz + z) * ny + y) * nx + x;
                    let mut v = sample(disk);
                    if scale {
                        v = v * slope as f64 + inter as f64;
                    }
                    data[((c * nx + x) * ny + y) * nz + z] = v as f32;
                }
            }
        }
    }
    Volume::new([nc, nx, ny, nz], spacing, origin, data)
}

/// Serializes `v` as little-endian float32 NIfTI-1.
pub fn encode_nifti(v: &Volume) -> Vec<u8> {
    let [nc, nx, ny, nz] = v.dims();
    let mut h = vec![0u8; VOX_OFFSET];
    let put_i16 = |h: &mut [u8], at: usize, x: i16| h[at..at + 2].copy_from_slice(&x.to_le_bytes());
    let put_i32 = |h: &mut [u8], at: usize, x: i32| h[at..at + 4].copy_from_slice(&x.to_le_bytes());
    let put_f32 = |h: &mut [u8], at: usize, x: f32| h[at..at + 4].copy_from_slice(&x.to_le_bytes());

    put_i32(&mut h, 0, HEADER_SIZE as i32);
    h[38] = b'r'; // regular
    let ndim: i16 = if nc > 1 { 4 } else { 3 };
    put_i16(&mut h, 40, ndim);
    for (i, d) in [nx, ny, nz, nc, 1, 1, 1].into_iter().enumerate() {
        put_i16(&mut h, 42 + 2 * i, d as i16);
    }
    put_i16(&mut h, 70, DT_FLOAT32);
    put_i16(&mut h, 72, 32);
    let [sx, sy, sz] = v.spacing();
    for (i, p) in [1.0, sx, sy, sz, 1.0, 1.0, 1.0, 1.0].into_iter().enumerate() {
        put_f32(&mut h, 76 + 4 * i, p);
    }
    put_f32(&mut h, 108, VOX_OFFSET as f32);
    // scl_slope stays 0 so readers leave samples untouched.
    h[123] = 10; // xyzt_units: mm, seconds
    let [ox, oy, oz] = v.origin();
    put_i16(&mut h, 252, 1);
    put_i16(&mut h, 254, 1);
    // Identity rotation quaternion: b = c = d = 0.
    put_f32(&mut h, 268, ox);
    put_f32(&mut h, 272, oy);
    put_f32(&mut h, 276, oz);
    for (row, vals) in [[sx, 0.0, 0.0, ox], [0.0, sy, 0.0, oy], [0.0, 0.0, sz, oz]].iter().enumerate() {
        for (k, &val) in vals.iter().enumerate() {
            put_f32(&mut h, 280 + row * 16 + k * 4, val);
        }
    }
    h[344..348].copy_from_slice(MAGIC_SINGLE);

    h.reserve(v.data().len() * 4);
    for c in 0..nc {
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    h.extend_from_slice(&v.get(c, x, y, z).to_le_bytes());
                }
            }
        }
    }
    h
}
