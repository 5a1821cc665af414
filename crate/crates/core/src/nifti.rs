//! Minimal NIfTI-1 single-file reader and writer (`.nii`, `.nii.gz`).
//!
//! Only 3D images of uint8, int16, int32 or float32 are accepted. Orientation
//! fields survive a round trip but nothing downstream interprets them.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use byteorder::{BigEndian, ByteOrder, LittleEndian};
use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::{Compression, GzBuilder};

use crate::error::{Error, Result};
use crate::volume::{Geometry, NiftiMeta, ValueKind, Volume, VoxelData};

pub const HEADER_SIZE: usize = 348;
/// Header plus the four-byte extension flag.
pub const DATA_OFFSET: usize = 352;

const DT_UINT8: i16 = 2;
const DT_INT16: i16 = 4;
const DT_INT32: i16 = 8;
const DT_FLOAT32: i16 = 16;
const INTENT_LABEL: i16 = 1002;
const KIND_TAG: &str = "ribkit:";

/// Loads a NIfTI-1 volume. gzip input is detected from the stream magic, not
/// the file name.
pub fn load_volume(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    let mut raw = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut raw))
        .map_err(|e| Error::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut inflated = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut inflated)
            .map_err(|e| Error::io(path, e))?;
        raw = inflated;
    }
    decode(&raw)
}

/// Decodes an uncompressed NIfTI-1 byte stream.
pub fn decode(raw: &[u8]) -> Result<Volume> {
    if raw.len() < HEADER_SIZE {
        return Err(Error::UnsupportedFormat(format!(
            "{} bytes is shorter than a NIfTI-1 header",
            raw.len()
        )));
    }
    match (LittleEndian::read_i32(raw), BigEndian::read_i32(raw)) {
        (348, _) => decode_with::<LittleEndian>(raw),
        (_, 348) => decode_with::<BigEndian>(raw),
        (540, _) | (_, 540) => Err(Error::UnsupportedFormat("NIfTI-2 is not supported".into())),
        (n, _) => Err(Error::UnsupportedFormat(format!("bad sizeof_hdr {n}"))),
    }
}

fn decode_with<B: ByteOrder>(raw: &[u8]) -> Result<Volume> {
    let magic = &raw[344..348];
    if magic == b"ni1\0" {
        return Err(Error::UnsupportedFormat(
            "split .hdr/.img pairs are not supported".into(),
        ));
    }
    if magic != b"n+1\0" {
        return Err(Error::UnsupportedFormat(format!("bad magic {magic:?}")));
    }

    let dim: Vec<i16> = (0..8).map(|i| B::read_i16(&raw[40 + 2 * i..])).collect();
    if dim[0] != 3 {
        return Err(Error::UnsupportedFormat(format!(
            "expected a 3D image, header declares {} dimensions",
            dim[0]
        )));
    }
    if dim[1..4].iter().any(|&d| d <= 0) {
        return Err(Error::UnsupportedFormat(format!("bad dimensions {dim:?}")));
    }
    let dims = [dim[1] as usize, dim[2] as usize, dim[3] as usize];
    let pixdim: Vec<f32> = (0..8).map(|i| B::read_f32(&raw[76 + 4 * i..])).collect();
    let spacing = [pixdim[1], pixdim[2], pixdim[3]].map(|s| f64::from(s.abs()));
    let geometry = Geometry::new(dims, spacing)
        .map_err(|e| Error::UnsupportedFormat(format!("bad geometry: {e}")))?;

    let datatype = B::read_i16(&raw[70..]);
    let intent_code = B::read_i16(&raw[68..]);
    let vox_offset = B::read_f32(&raw[108..]);
    let slope = B::read_f32(&raw[112..]);
    let inter = B::read_f32(&raw[116..]);
    let descrip = c_string(&raw[148..228]);

    let (bytes_per_voxel, name) = match datatype {
        DT_UINT8 => (1, "uint8"),
        DT_INT16 => (2, "int16"),
        DT_INT32 => (4, "int32"),
        DT_FLOAT32 => (4, "float32"),
        other => {
            return Err(Error::UnsupportedFormat(format!(
                "unsupported datatype code {other}"
            )))
        }
    };
    if !(vox_offset.is_finite() && vox_offset >= DATA_OFFSET as f32) {
        return Err(Error::UnsupportedFormat(format!("bad vox_offset {vox_offset}")));
    }
    let start = vox_offset as usize;
    let n = geometry.len();
    let end = start + n * bytes_per_voxel;
    if raw.len() < end {
        return Err(Error::UnsupportedFormat(format!(
            "truncated {name} payload: need {end} bytes, have {}",
            raw.len()
        )));
    }
    let payload = &raw[start..end];
    let mut data = match datatype {
        DT_UINT8 => VoxelData::U8(payload.to_vec()),
        DT_INT16 => {
            let mut v = vec![0i16; n];
            B::read_i16_into(payload, &mut v);
            VoxelData::I16(v)
        }
        DT_INT32 => {
            let mut v = vec![0i32; n];
            B::read_i32_into(payload, &mut v);
            VoxelData::I32(v)
        }
        _ => {
            let mut v = vec![0f32; n];
            B::read_f32_into(payload, &mut v);
            VoxelData::F32(v)
        }
    };

    let kind = match descrip.strip_prefix(KIND_TAG) {
        Some("binary") => ValueKind::Binary,
        Some("label") => ValueKind::Label,
        Some(_) => ValueKind::Hu,
        None if intent_code == INTENT_LABEL => ValueKind::Label,
        None => ValueKind::Hu,
    };

    let rescale = slope.is_finite() && slope != 0.0 && !(slope == 1.0 && inter == 0.0);
    if rescale && kind == ValueKind::Hu {
        let (s, b) = (f64::from(slope), f64::from(inter));
        data = VoxelData::F32((0..n).map(|i| (s * data.get(i) + b) as f32).collect());
    }

    let read4 = |off: usize| -> [f32; 4] { std::array::from_fn(|i| B::read_f32(&raw[off + 4 * i..])) };
    let read3 = |off: usize| -> [f32; 3] { std::array::from_fn(|i| B::read_f32(&raw[off + 4 * i..])) };
    let meta = NiftiMeta {
        qfac: pixdim[0],
        qform_code: B::read_i16(&raw[252..]),
        sform_code: B::read_i16(&raw[254..]),
        quatern: read3(256),
        qoffset: read3(268),
        srow_x: read4(280),
        srow_y: read4(296),
        srow_z: read4(312),
        xyzt_units: raw[123],
    };

    Ok(Volume::new(geometry, data, kind)?.with_meta(meta))
}

fn c_string(bytes: &[u8]) -> String {
    let end = bytes.iter().position(|&b| b == 0).unwrap_or(bytes.len());
    String::from_utf8_lossy(&bytes[..end]).into_owned()
}

/// Writes `volume` as little-endian NIfTI-1; a `.gz` suffix selects gzip.
/// The gzip header carries no timestamp, so output bytes depend only on the
/// volume.
pub fn save_volume(volume: &Volume, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let gz = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("gz"));
    let result = if gz {
        let mut enc: GzEncoder<BufWriter<File>> =
            GzBuilder::new().mtime(0).write(BufWriter::new(file), Compression::fast());
        encode(volume, &mut enc).and_then(|_| enc.finish()?.flush())
    } else {
        let mut w = BufWriter::new(file);
        encode(volume, &mut w).and_then(|_| w.flush())
    };
    result.map_err(|e| Error::io(path, e))
}

/// Serializes header and voxels to any writer.
pub fn encode(volume: &Volume, w: &mut impl Write) -> std::io::Result<()> {
    w.write_all(&header_bytes(volume))?;
    w.write_all(&[0u8; DATA_OFFSET - HEADER_SIZE])?;
    let mut buf = Vec::with_capacity(1 << 16);
    macro_rules! dump {
        ($v:expr, $width:expr) => {
            for chunk in $v.chunks((1 << 16) / $width) {
                buf.clear();
                for x in chunk {
                    buf.extend_from_slice(&x.to_le_bytes());
                }
                w.write_all(&buf)?;
            }
        };
    }
    match volume.data() {
        VoxelData::U8(v) => w.write_all(v)?,
        VoxelData::I16(v) => dump!(v, 2),
        VoxelData::I32(v) => dump!(v, 4),
        VoxelData::F32(v) => dump!(v, 4),
    }
    Ok(())
}

fn header_bytes(volume: &Volume) -> [u8; HEADER_SIZE] {
    type E = LittleEndian;
    let mut h = [0u8; HEADER_SIZE];
    let g = volume.geometry();
    let meta = volume.meta();
    let (datatype, bitpix) = match volume.data() {
        VoxelData::U8(_) => (DT_UINT8, 8),
        VoxelData::I16(_) => (DT_INT16, 16),
        VoxelData::I32(_) => (DT_INT32, 32),
        VoxelData::F32(_) => (DT_FLOAT32, 32),
    };

    E::write_i32(&mut h[0..], HEADER_SIZE as i32);
    h[38] = b'r';
    let dims = g.dims();
    let mut dim = [1i16; 8];
    dim[0] = 3;
    for a in 0..3 {
        dim[a + 1] = dims[a] as i16;
    }
    for (i, d) in dim.iter().enumerate() {
        E::write_i16(&mut h[40 + 2 * i..], *d);
    }
    if volume.kind() == ValueKind::Label {
        E::write_i16(&mut h[68..], INTENT_LABEL);
    }
    E::write_i16(&mut h[70..], datatype);
    E::write_i16(&mut h[72..], bitpix);

    let spacing = g.spacing_f32();
    let mut pixdim = [0f32; 8];
    pixdim[0] = meta.qfac;
    pixdim[1..4].copy_from_slice(&spacing);
    for (i, p) in pixdim.iter().enumerate() {
        E::write_f32(&mut h[76 + 4 * i..], *p);
    }
    E::write_f32(&mut h[108..], DATA_OFFSET as f32);
    E::write_f32(&mut h[112..], 1.0);
    E::write_f32(&mut h[116..], 0.0);
    h[123] = meta.xyzt_units;

    let descrip = format!("{KIND_TAG}{}", match volume.kind() {
        ValueKind::Hu => "hu",
        ValueKind::Binary => "binary",
        ValueKind::Label => "label",
    });
    h[148..148 + descrip.len()].copy_from_slice(descrip.as_bytes());

    E::write_i16(&mut h[252..], meta.qform_code);
    E::write_i16(&mut h[254..], meta.sform_code);
    for i in 0..3 {
        E::write_f32(&mut h[256 + 4 * i..], meta.quatern[i]);
        E::write_f32(&mut h[268 + 4 * i..], meta.qoffset[i]);
    }
    for i in 0..4 {
        E::write_f32(&mut h[280 + 4 * i..], meta.srow_x[i]);
        E::write_f32(&mut h[296 + 4 * i..], meta.srow_y[i]);
        E::write_f32(&mut h[312 + 4 * i..], meta.srow_z[i]);
    }
    h[344..348].copy_from_slice(b"n+1\0");
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::LabelVolume;

    fn geom() -> Geometry {
        Geometry::new([8, 8, 8], [1.0, 1.0, 1.0]).unwrap()
    }

    fn to_bytes(v: &Volume) -> Vec<u8> {
        let mut out = Vec::new();
        encode(v, &mut out).unwrap();
        out
    }

    #[test]
    fn constant_int16_round_trip() {
        let v = Volume::from_hu(geom(), vec![-1000; 512]).unwrap();
        let back = decode(&to_bytes(&v)).unwrap();
        assert_eq!(back.geometry().dims(), [8, 8, 8]);
        assert!(matches!(back.data(), VoxelData::I16(d) if d.iter().all(|&x| x == -1000)));
        assert_eq!(back, v);
    }

    #[test]
    fn encoded_size_is_header_plus_payload() {
        let v = Volume::from_hu(Geometry::isotropic([5, 6, 7]).unwrap(), vec![3; 210]).unwrap();
        assert_eq!(to_bytes(&v).len(), DATA_OFFSET + 210 * 2);
    }

    /// Builds a header by hand, independently of `header_bytes`, with a
    /// rescale slope of 2 and intercept of -1024.
    fn scaled_file(stored: i16) -> Vec<u8> {
        let mut raw = vec![0u8; DATA_OFFSET + 2];
        raw[0..4].copy_from_slice(&348i32.to_le_bytes());
        for (i, d) in [3i16, 1, 1, 1, 1, 1, 1, 1].iter().enumerate() {
            raw[40 + 2 * i..42 + 2 * i].copy_from_slice(&d.to_le_bytes());
        }
        raw[70..72].copy_from_slice(&4i16.to_le_bytes());
        raw[72..74].copy_from_slice(&16i16.to_le_bytes());
        for (i, p) in [1f32, 1.0, 1.0, 1.0].iter().enumerate() {
            raw[76 + 4 * i..80 + 4 * i].copy_from_slice(&p.to_le_bytes());
        }
        raw[108..112].copy_from_slice(&352f32.to_le_bytes());
        raw[112..116].copy_from_slice(&2f32.to_le_bytes());
        raw[116..120].copy_from_slice(&(-1024f32).to_le_bytes());
        raw[344..348].copy_from_slice(b"n+1\0");
        raw[352..354].copy_from_slice(&stored.to_le_bytes());
        raw
    }

    #[test]
    fn rescale_slope_and_intercept_applied() {
        let v = decode(&scaled_file(612)).unwrap();
        assert_eq!(v.kind(), ValueKind::Hu);
        assert_eq!(v.get(0), 200.0);
    }

    #[test]
    fn big_endian_header_accepted() {
        let v = Volume::from_hu(Geometry::isotropic([2, 1, 1]).unwrap(), vec![7, -300]).unwrap();
        let le = to_bytes(&v);
        let mut be = le.clone();
        be[0..4].copy_from_slice(&348i32.to_be_bytes());
        for i in 0..8 {
            let d = LittleEndian::read_i16(&le[40 + 2 * i..]);
            BigEndian::write_i16(&mut be[40 + 2 * i..], d);
        }
        for off in [68, 70, 72, 252, 254] {
            let x = LittleEndian::read_i16(&le[off..]);
            BigEndian::write_i16(&mut be[off..], x);
        }
        for i in 0..8 {
            let p = LittleEndian::read_f32(&le[76 + 4 * i..]);
            BigEndian::write_f32(&mut be[76 + 4 * i..], p);
        }
        for off in [108, 112, 116] {
            let x = LittleEndian::read_f32(&le[off..]);
            BigEndian::write_f32(&mut be[off..], x);
        }
        BigEndian::write_i16(&mut be[352..], 7);
        BigEndian::write_i16(&mut be[354..], -300);
        let back = decode(&be).unwrap();
        assert_eq!(back.data(), &VoxelData::I16(vec![7, -300]));
    }

    #[test]
    fn rejects_non_nifti1() {
        let v = Volume::from_hu(geom(), vec![0; 512]).unwrap();
        let good = to_bytes(&v);

        let mut bad_magic = good.clone();
        bad_magic[344..348].copy_from_slice(b"xyz\0");
        assert!(matches!(decode(&bad_magic), Err(Error::UnsupportedFormat(_))));

        let mut four_d = good.clone();
        four_d[40..42].copy_from_slice(&4i16.to_le_bytes());
        assert!(matches!(decode(&four_d), Err(Error::UnsupportedFormat(_))));

        let mut float64 = good.clone();
        float64[70..72].copy_from_slice(&64i16.to_le_bytes());
        assert!(matches!(decode(&float64), Err(Error::UnsupportedFormat(_))));

        let mut nifti2 = good;
        nifti2[0..4].copy_from_slice(&540i32.to_le_bytes());
        assert!(matches!(decode(&nifti2), Err(Error::UnsupportedFormat(_))));

        assert!(matches!(decode(&[0u8; 10]), Err(Error::UnsupportedFormat(_))));
    }

    #[test]
    fn label_kind_survives_round_trip() {
        let mut lv = LabelVolume::empty(geom());
        lv.set(5, 24);
        let v = Volume::from_labels(&lv);
        let back = decode(&to_bytes(&v)).unwrap();
        assert_eq!(back.kind(), ValueKind::Label);
        assert_eq!(LabelVolume::from_volume(&back).unwrap(), lv);
    }

    #[test]
    fn orientation_preserved() {
        let meta = NiftiMeta {
            qfac: -1.0,
            qform_code: 1,
            sform_code: 2,
            quatern: [0.1, 0.2, 0.3],
            qoffset: [-10.0, 20.0, 30.5],
            srow_x: [1.0, 0.0, 0.0, -10.0],
            srow_y: [0.0, 1.0, 0.0, 20.0],
            srow_z: [0.0, 0.0, 2.5, 30.5],
            xyzt_units: 10,
        };
        let v = Volume::from_hu(geom(), vec![1; 512]).unwrap().with_meta(meta.clone());
        let back = decode(&to_bytes(&v)).unwrap();
        assert_eq!(back.meta(), &meta);
    }

    #[test]
    fn missing_parent_is_io_failure() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        std::fs::write(&blocker, b"x").unwrap();
        let v = Volume::from_hu(geom(), vec![0; 512]).unwrap();
        assert!(matches!(
            save_volume(&v, blocker.join("out.nii")),
            Err(Error::IoFailure { .. })
        ));
        assert!(matches!(
            load_volume(dir.path().join("absent.nii")),
            Err(Error::IoFailure { .. })
        ));
    }
}
