//! The MCDIFF01 container: the 8-byte magic `MCDIFF01`, a little-endian `u32`
//! header length, a UTF-8 JSON header and a raw little-endian blob.
//!
//! Images, sinograms and k-space are written at full precision (`f64le`,
//! `c128le`) so that a round trip is bitwise; `f32le` and `c64le` blobs are
//! accepted on read. Masks store one `u8` flag per grid cell.

use std::fs;
use std::path::Path;

use mcdiff_core::operators::RadonGeometry;
use mcdiff_core::{Image2D, KSpaceData, ModalityPair, SamplingMask, Sinogram};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::error::{Error, FormatError, Result};

pub const MAGIC: &[u8; 8] = b"MCDIFF01";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32le,
    F64le,
    C64le,
    C128le,
    U8,
}

impl Dtype {
    pub fn size(self) -> usize {
        match self {
            Dtype::U8 => 1,
            Dtype::F32le => 4,
            Dtype::F64le | Dtype::C64le => 8,
            Dtype::C128le => 16,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Header {
    pub kind: String,
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub dtype: Dtype,
    #[serde(default)]
    pub extra: Map<String, Value>,
}

impl Header {
    pub fn new(kind: &str, width: usize, height: usize, channels: usize, dtype: Dtype) -> Self {
        Self {
            kind: kind.to_string(),
            width,
            height,
            channels,
            dtype,
            extra: Map::new(),
        }
    }

    pub fn with_extra(mut self, extra: &Map<String, Value>) -> Self {
        for (k, v) in extra {
            self.extra.insert(k.clone(), v.clone());
        }
        self
    }

    fn blob_len(&self) -> Option<usize> {
        self.width
            .checked_mul(self.height)?
            .checked_mul(self.channels)?
            .checked_mul(self.dtype.size())
    }

    fn expect_kind(&self, kind: &str) -> Result<(), FormatError> {
        if self.kind != kind {
            return Err(FormatError::WrongKind {
                expected: kind.to_string(),
                found: self.kind.clone(),
            });
        }
        Ok(())
    }

    fn extra_f64(&self, key: &str) -> Result<f64, FormatError> {
        self.extra
            .get(key)
            .and_then(Value::as_f64)
            .ok_or_else(|| FormatError::Header(format!("missing numeric extra.{key}")))
    }
}

pub fn encode(header: &Header, blob: &[u8]) -> Vec<u8> {
    let head = serde_json::to_vec(header).expect("header serializes");
    let mut out = Vec::with_capacity(12 + head.len() + blob.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(head.len() as u32).to_le_bytes());
    out.extend_from_slice(&head);
    out.extend_from_slice(blob);
    out
}

/// Splits a container into its header and a blob whose length matches the header.
pub fn decode(bytes: &[u8]) -> Result<(Header, &[u8]), FormatError> {
    if bytes.len() < 8 {
        return Err(FormatError::Truncated("magic"));
    }
    if &bytes[..8] != MAGIC {
        return Err(FormatError::BadMagic);
    }
    let len_bytes: [u8; 4] = bytes
        .get(8..12)
        .ok_or(FormatError::Truncated("header length"))?
        .try_into()
        .expect("four bytes");
    let head_len = u32::from_le_bytes(len_bytes) as usize;
    let head = bytes
        .get(12..12 + head_len)
        .ok_or(FormatError::Truncated("header"))?;
    let header: Header =
        serde_json::from_slice(head).map_err(|e| FormatError::Header(e.to_string()))?;
    let blob = &bytes[12 + head_len..];
    let expected = header
        .blob_len()
        .ok_or_else(|| FormatError::Header("dimensions overflow".into()))?;
    if blob.len() != expected {
        return Err(FormatError::BlobLength {
            expected,
            found: blob.len(),
        });
    }
    Ok((header, blob))
}

fn reals_to_bytes(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn bytes_to_reals(dtype: Dtype, blob: &[u8]) -> Result<Vec<f64>, FormatError> {
    match dtype {
        Dtype::F64le => Ok(blob
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("eight bytes")))
            .collect()),
        Dtype::F32le => Ok(blob
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("four bytes")) as f64)
            .collect()),
        other => Err(FormatError::UnsupportedDtype(format!("{other:?} for real data"))),
    }
}

fn bytes_to_complex(dtype: Dtype, blob: &[u8]) -> Result<Vec<Complex64>, FormatError> {
    let parts = match dtype {
        Dtype::C128le => bytes_to_reals(Dtype::F64le, blob)?,
        Dtype::C64le => bytes_to_reals(Dtype::F32le, blob)?,
        other => return Err(FormatError::UnsupportedDtype(format!("{other:?} for k-space"))),
    };
    Ok(parts.chunks_exact(2).map(|c| Complex64::new(c[0], c[1])).collect())
}

fn core_err(e: mcdiff_core::Error) -> FormatError {
    FormatError::Header(e.to_string())
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn images_to_bytes(images: &[&Image2D]) -> Vec<u8> {
    images.iter().flat_map(|img| reals_to_bytes(img.values())).collect()
}

fn bytes_to_images(header: &Header, blob: &[u8]) -> Result<Vec<Image2D>, FormatError> {
    let values = bytes_to_reals(header.dtype, blob)?;
    let plane = header.width * header.height;
    values
        .chunks_exact(plane.max(1))
        .take(header.channels)
        .map(|c| Image2D::new(header.width, header.height, c.to_vec()).map_err(core_err))
        .collect()
}

pub fn pair_to_bytes(pair: &ModalityPair, extra: &Map<String, Value>) -> Vec<u8> {
    let (w, h) = pair.dims();
    let header = Header::new("pair", w, h, 2, Dtype::F64le).with_extra(extra);
    encode(&header, &images_to_bytes(&[&pair.pet, &pair.mri]))
}

pub fn pair_from_bytes(bytes: &[u8]) -> Result<(ModalityPair, Header), FormatError> {
    let (header, blob) = decode(bytes)?;
    header.expect_kind("pair")?;
    if header.channels != 2 {
        return Err(FormatError::Header("a pair has two channels".into()));
    }
    let images = bytes_to_images(&header, blob)?;
    let pair = ModalityPair::from_channels(images).map_err(core_err)?;
    Ok((pair, header))
}

pub fn image_to_bytes(img: &Image2D, extra: &Map<String, Value>) -> Vec<u8> {
    let header = Header::new("image", img.width(), img.height(), 1, Dtype::F64le).with_extra(extra);
    encode(&header, &images_to_bytes(&[img]))
}

pub fn image_from_bytes(bytes: &[u8]) -> Result<(Image2D, Header), FormatError> {
    let (header, blob) = decode(bytes)?;
    header.expect_kind("image")?;
    if header.channels != 1 {
        return Err(FormatError::Header("an image has one channel".into()));
    }
    let mut images = bytes_to_images(&header, blob)?;
    Ok((images.remove(0), header))
}

/// The geometry is stored as `extra.detector_spacing`; angles are uniform.
pub fn sinogram_to_bytes(
    sino: &Sinogram,
    geom: &RadonGeometry,
    extra: &Map<String, Value>,
) -> Vec<u8> {
    let header = Header::new("sinogram", sino.n_detectors(), sino.n_angles(), 1, Dtype::F64le)
        .with_extra(extra)
        .with_extra(&object(json!({ "detector_spacing": geom.detector_spacing() })));
    encode(&header, &reals_to_bytes(sino.values()))
}

pub fn sinogram_from_bytes(bytes: &[u8]) -> Result<(Sinogram, RadonGeometry, Header), FormatError> {
    let (header, blob) = decode(bytes)?;
    header.expect_kind("sinogram")?;
    let spacing = header.extra_f64("detector_spacing")?;
    let geom = RadonGeometry::with_spacing(header.width, header.height, spacing).map_err(core_err)?;
    let values = bytes_to_reals(header.dtype, blob)?;
    let sino = Sinogram::new(header.width, header.height, values).map_err(core_err)?;
    Ok((sino, geom, header))
}

fn mask_extra(mask: &SamplingMask) -> Map<String, Value> {
    object(json!({
        "lines": mask.lines(),
        "acceleration": mask.acceleration(),
        "center_fraction": mask.center_fraction(),
    }))
}

fn mask_from_extra(header: &Header) -> Result<SamplingMask, FormatError> {
    let lines: Vec<usize> = header
        .extra
        .get("lines")
        .cloned()
        .map(serde_json::from_value)
        .transpose()
        .map_err(|e| FormatError::Header(e.to_string()))?
        .ok_or_else(|| FormatError::Header("missing extra.lines".into()))?;
    SamplingMask::from_lines(
        header.width,
        header.height,
        lines,
        header.extra_f64("acceleration")?,
        header.extra_f64("center_fraction")?,
    )
    .map_err(core_err)
}

/// The sampling mask, if any, travels in the header so that loaded data
/// satisfies the zero-outside-mask invariant.
pub fn kspace_to_bytes(ks: &KSpaceData, extra: &Map<String, Value>) -> Vec<u8> {
    let mut header = Header::new("kspace", ks.width(), ks.height(), 1, Dtype::C128le).with_extra(extra);
    if let Some(mask) = ks.mask() {
        header = header.with_extra(&mask_extra(mask));
    }
    let blob: Vec<u8> = ks
        .values()
        .iter()
        .flat_map(|c| c.re.to_le_bytes().into_iter().chain(c.im.to_le_bytes()))
        .collect();
    encode(&header, &blob)
}

pub fn kspace_from_bytes(bytes: &[u8]) -> Result<(KSpaceData, Header), FormatError> {
    let (header, blob) = decode(bytes)?;
    header.expect_kind("kspace")?;
    let values = bytes_to_complex(header.dtype, blob)?;
    let mask = if header.extra.contains_key("lines") {
        Some(mask_from_extra(&header)?)
    } else {
        None
    };
    let ks = KSpaceData::new(header.width, header.height, values, mask).map_err(core_err)?;
    Ok((ks, header))
}

pub fn mask_to_bytes(mask: &SamplingMask, extra: &Map<String, Value>) -> Vec<u8> {
    let (w, h) = mask.dims();
    let header = Header::new("mask", w, h, 1, Dtype::U8)
        .with_extra(extra)
        .with_extra(&object(json!({
            "acceleration": mask.acceleration(),
            "center_fraction": mask.center_fraction(),
        })));
    let blob: Vec<u8> = mask
        .row_flags()
        .iter()
        .flat_map(|&on| std::iter::repeat_n(on as u8, w))
        .collect();
    encode(&header, &blob)
}

pub fn mask_from_bytes(bytes: &[u8]) -> Result<(SamplingMask, Header), FormatError> {
    let (header, blob) = decode(bytes)?;
    header.expect_kind("mask")?;
    if header.dtype != Dtype::U8 {
        return Err(FormatError::UnsupportedDtype(format!("{:?} for a mask", header.dtype)));
    }
    let mut lines = Vec::new();
    for (row, cells) in blob.chunks_exact(header.width.max(1)).enumerate() {
        match cells.iter().max() {
            Some(0) => {}
            Some(1) if cells.iter().all(|&c| c == 1) => lines.push(row),
            _ => return Err(FormatError::Header(format!("mask row {row} is not a full 0/1 line"))),
        }
    }
    let mask = SamplingMask::from_lines(
        header.width,
        header.height,
        lines,
        header.extra_f64("acceleration")?,
        header.extra_f64("center_fraction")?,
    )
    .map_err(core_err)?;
    Ok((mask, header))
}

pub(crate) fn object(v: Value) -> Map<String, Value> {
    match v {
        Value::Object(m) => m,
        _ => Map::new(),
    }
}

macro_rules! file_io {
    ($save:ident, $load:ident, $to:ident, $from:ident, ($($arg:ident: $ty:ty),*), $out:ty, |$r:ident| $map:expr) => {
        pub fn $save(path: &Path, $($arg: $ty,)* extra: &Map<String, Value>) -> Result<()> {
            write_file(path, &$to($($arg,)* extra))
        }

        pub fn $load(path: &Path) -> Result<$out> {
            let bytes = read_file(path)?;
            let $r = $from(&bytes).map_err(|e| Error::format(path, e))?;
            Ok($map)
        }
    };
}

file_io!(save_pair, load_pair, pair_to_bytes, pair_from_bytes, (pair: &ModalityPair), ModalityPair, |r| r.0);
file_io!(save_image, load_image, image_to_bytes, image_from_bytes, (img: &Image2D), Image2D, |r| r.0);
file_io!(
    save_sinogram,
    load_sinogram,
    sinogram_to_bytes,
    sinogram_from_bytes,
    (sino: &Sinogram, geom: &RadonGeometry),
    (Sinogram, RadonGeometry),
    |r| (r.0, r.1)
);
file_io!(save_kspace, load_kspace, kspace_to_bytes, kspace_from_bytes, (ks: &KSpaceData), KSpaceData, |r| r.0);
file_io!(save_mask, load_mask, mask_to_bytes, mask_from_bytes, (mask: &SamplingMask), SamplingMask, |r| r.0);

/// Header of any container file, for dispatch on `kind`.
pub fn peek_header(path: &Path) -> Result<Header> {
    let bytes = read_file(path)?;
    decode(&bytes)
        .map(|(h, _)| h)
        .map_err(|e| Error::format(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use mcdiff_core::operators::{apply_mask, fft2_forward, make_cartesian_mask};
    use mcdiff_core::rng::{self, normal_image};

    fn pair(seed: u64) -> ModalityPair {
        let mut r = rng::stream(seed, 0);
        ModalityPair::new(normal_image(&mut r, 5, 3), normal_image(&mut r, 5, 3)).unwrap()
    }

    #[test]
    fn pair_round_trip_is_bitwise() {
        let p = pair(1);
        let extra = object(json!({ "seed": 1 }));
        let (back, header) = pair_from_bytes(&pair_to_bytes(&p, &extra)).unwrap();
        assert_eq!(back, p);
        assert_eq!(header.extra["seed"], 1);
        assert_eq!(header.dtype, Dtype::F64le);
    }

    #[test]
    fn single_precision_blobs_are_accepted() {
        let header = Header::new("image", 2, 1, 1, Dtype::F32le);
        let blob: Vec<u8> = [0.5f32, -2.0].iter().flat_map(|v| v.to_le_bytes()).collect();
        let (img, _) = image_from_bytes(&encode(&header, &blob)).unwrap();
        assert_eq!(img.values(), &[0.5, -2.0]);
        let header = Header::new("kspace", 1, 1, 1, Dtype::C64le);
        let blob: Vec<u8> = [1.5f32, -0.25].iter().flat_map(|v| v.to_le_bytes()).collect();
        let (ks, _) = kspace_from_bytes(&encode(&header, &blob)).unwrap();
        assert_eq!(ks.values(), &[Complex64::new(1.5, -0.25)]);
    }

    #[test]
    fn sinogram_kspace_and_mask_round_trip() {
        let geom = RadonGeometry::with_spacing(7, 4, 0.5).unwrap();
        let s = normal_image(&mut rng::stream(2, 0), 7, 4);
        let sino = Sinogram::new(7, 4, s.into_values()).unwrap();
        let (sb, gb, _) = sinogram_from_bytes(&sinogram_to_bytes(&sino, &geom, &Map::new())).unwrap();
        assert_eq!((sb, gb), (sino, geom));

        let mask = make_cartesian_mask(6, 8, 2.0, 0.25, 3).unwrap();
        let ks = apply_mask(&fft2_forward(&normal_image(&mut rng::stream(3, 0), 6, 8)), &mask).unwrap();
        let (kb, _) = kspace_from_bytes(&kspace_to_bytes(&ks, &Map::new())).unwrap();
        assert_eq!(kb, ks);
        let (mb, _) = mask_from_bytes(&mask_to_bytes(&mask, &Map::new())).unwrap();
        assert_eq!(mb, mask);
    }

    #[test]
    fn malformed_containers_are_format_errors() {
        let bytes = pair_to_bytes(&pair(4), &Map::new());
        assert_eq!(pair_from_bytes(&bytes[..5]).unwrap_err(), FormatError::Truncated("magic"));
        assert_eq!(pair_from_bytes(&bytes[..20]).unwrap_err(), FormatError::Truncated("header"));
        assert!(matches!(
            pair_from_bytes(&bytes[..bytes.len() - 3]),
            Err(FormatError::BlobLength { .. })
        ));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert_eq!(pair_from_bytes(&bad).unwrap_err(), FormatError::BadMagic);
        assert!(matches!(image_from_bytes(&bytes), Err(FormatError::WrongKind { .. })));
        let lying = Header::new("pair", 5, 3, 2, Dtype::F64le);
        let blob = vec![0u8; 5 * 3 * 8];
        assert!(matches!(
            pair_from_bytes(&encode(&lying, &blob)),
            Err(FormatError::BlobLength { expected: 240, found: 120 })
        ));
    }

    #[test]
    fn partial_mask_rows_are_rejected() {
        let header = Header::new("mask", 2, 2, 1, Dtype::U8)
            .with_extra(&object(json!({ "acceleration": 2.0, "center_fraction": 0.0 })));
        assert!(mask_from_bytes(&encode(&header, &[1, 1, 0, 0])).is_ok());
        assert!(matches!(
            mask_from_bytes(&encode(&header, &[1, 0, 0, 0])),
            Err(FormatError::Header(_))
        ));
    }
}
