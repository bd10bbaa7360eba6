//! Depth map codecs: PFM (lossless f32), 16-bit PNG (fixed scale) and 8-bit
//! inverse-depth PNG (near is bright).
//!
//! PNG variants carry a `tEXt` chunk keyed [`META_KEY`] holding a compact
//! `key=value;key=value` list, e.g. `format=png16;scale=0.001`.

use std::fmt;
use std::io::Cursor;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{CameraIntrinsics, DepthMap, INVALID_DEPTH};

pub const META_KEY: &str = "lc_depth_meta";
pub const DEFAULT_PNG16_SCALE: f64 = 0.001;
const PNG_SIGNATURE: [u8; 8] = [0x89, b'P', b'N', b'G', 0x0d, 0x0a, 0x1a, 0x0a];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DepthFormat {
    Pfm,
    #[default]
    Png16,
    Png8inv,
}

impl fmt::Display for DepthFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DepthFormat::Pfm => "pfm",
            DepthFormat::Png16 => "png16",
            DepthFormat::Png8inv => "png8inv",
        })
    }
}

impl FromStr for DepthFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pfm" => Ok(DepthFormat::Pfm),
            "png16" => Ok(DepthFormat::Png16),
            "png8inv" => Ok(DepthFormat::Png8inv),
            other => Err(Error::invalid(format!("unknown depth format '{other}'"))),
        }
    }
}

impl DepthFormat {
    /// Guesses a format from a file extension (`.pfm` or `.png`).
    pub fn from_path(path: &std::path::Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "pfm" => Some(DepthFormat::Pfm),
            "png" => Some(DepthFormat::Png16),
            _ => None,
        }
    }
}

/// What a file says about how its values map to meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthFileMeta {
    pub format: DepthFormat,
    /// Meters per stored unit (png16).
    pub scale: Option<f64>,
    /// Normalization range in meters (png8inv).
    pub d_min: Option<f64>,
    pub d_max: Option<f64>,
}

/// Encoder knobs; unset fields take format defaults.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EncodeParams {
    pub scale: Option<f64>,
    pub range: Option<(f64, f64)>,
}

/// Raw decoded depth without intrinsics.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodedDepth {
    pub width: u32,
    pub height: u32,
    pub data: Vec<f32>,
    pub meta: DepthFileMeta,
}

impl DecodedDepth {
    pub fn into_map(self, intrinsics: CameraIntrinsics) -> Result<DepthMap> {
        if intrinsics.width != self.width || intrinsics.height != self.height {
            return Err(Error::invalid(format!(
                "camera is {}x{} but the depth file is {}x{}",
                intrinsics.width, intrinsics.height, self.width, self.height
            )));
        }
        DepthMap::new(self.data, intrinsics)
    }
}

pub fn encode_depth(map: &DepthMap, format: DepthFormat, params: EncodeParams) -> Result<Vec<u8>> {
    match format {
        DepthFormat::Pfm => Ok(encode_pfm(map.width(), map.height(), map.data())),
        DepthFormat::Png16 => encode_png16(map, params.scale.unwrap_or(DEFAULT_PNG16_SCALE)),
        DepthFormat::Png8inv => {
            let (lo, hi) = match params.range {
                Some(r) => r,
                None => percentile_range(map.data()).ok_or_else(|| Error::invalid("png8inv needs at least one valid pixel"))?,
            };
            encode_png8inv(map, lo, hi)
        }
    }
}

pub fn encode_pfm(width: u32, height: u32, data: &[f32]) -> Vec<u8> {
    let header = format!("Pf\n{width} {height}\n-1.0\n");
    let mut out = Vec::with_capacity(header.len() + data.len() * 4);
    out.extend_from_slice(header.as_bytes());
    let w = width as usize;
    for row in (0..height as usize).rev() {
        for d in &data[row * w..(row + 1) * w] {
            out.extend_from_slice(&d.to_le_bytes());
        }
    }
    out
}

fn png_bytes(width: u32, height: u32, depth: png::BitDepth, meta: String, pixels: &[u8]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width, height);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(depth);
        enc.add_text_chunk(META_KEY.to_string(), meta).map_err(png_encode_error)?;
        let mut writer = enc.write_header().map_err(png_encode_error)?;
        writer.write_image_data(pixels).map_err(png_encode_error)?;
        writer.finish().map_err(png_encode_error)?;
    }
    Ok(out)
}

fn png_encode_error(e: png::EncodingError) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

/// Stored value for depth `d` at `scale` meters per unit; 0 stays 0.
pub fn png16_value(d: f32, scale: f64) -> u16 {
    if d == INVALID_DEPTH {
        return 0;
    }
    (d as f64 / scale).round().clamp(1.0, u16::MAX as f64) as u16
}

fn encode_png16(map: &DepthMap, scale: f64) -> Result<Vec<u8>> {
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::invalid(format!("png16 scale must be positive, got {scale}")));
    }
    let mut px = Vec::with_capacity(map.data().len() * 2);
    for &d in map.data() {
        px.extend_from_slice(&png16_value(d, scale).to_be_bytes());
    }
    png_bytes(
        map.width(),
        map.height(),
        png::BitDepth::Sixteen,
        format!("format=png16;scale={scale}"),
        &px,
    )
}

/// 8-bit inverse-depth code: 255 at `d_min`, 0 at `d_max`, clamped.
pub fn png8inv_value(d: f32, d_min: f64, d_max: f64) -> u8 {
    if d == INVALID_DEPTH {
        return 0;
    }
    let t = (1.0 / d as f64 - 1.0 / d_max) / (1.0 / d_min - 1.0 / d_max);
    (255.0 * t).round().clamp(0.0, 255.0) as u8
}

fn encode_png8inv(map: &DepthMap, d_min: f64, d_max: f64) -> Result<Vec<u8>> {
    if !(d_min > 0.0 && d_max > d_min && d_max.is_finite()) {
        return Err(Error::invalid(format!("png8inv needs 0 < d_min < d_max, got {d_min}, {d_max}")));
    }
    let px: Vec<u8> = map.data().iter().map(|&d| png8inv_value(d, d_min, d_max)).collect();
    png_bytes(
        map.width(),
        map.height(),
        png::BitDepth::Eight,
        format!("format=png8inv;d_min={d_min};d_max={d_max}"),
        &px,
    )
}

/// 1st and 99th percentile of the valid values, widened if they coincide.
pub fn percentile_range(data: &[f32]) -> Option<(f64, f64)> {
    let mut v: Vec<f64> = data.iter().filter(|d| **d != INVALID_DEPTH).map(|&d| d as f64).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let at = |q: f64| v[((v.len() - 1) as f64 * q).round() as usize];
    let (lo, hi) = (at(0.01), at(0.99));
    Some(if hi > lo { (lo, hi) } else { (lo, lo * 1.01 + 1e-3) })
}

pub fn decode_depth(bytes: &[u8]) -> Result<DecodedDepth> {
    if bytes.starts_with(b"Pf") {
        decode_pfm(bytes)
    } else if bytes.starts_with(&PNG_SIGNATURE) {
        decode_png_depth(bytes)
    } else if bytes.starts_with(b"PF") {
        Err(Error::decode(0, "colour PFM (PF) is not a depth map; expected Pf"))
    } else {
        Err(Error::decode(0, "unrecognised depth file signature"))
    }
}

fn pfm_token(bytes: &[u8], pos: &mut usize) -> Result<(usize, String)> {
    while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::decode(start, "truncated PFM header"));
    }
    Ok((start, String::from_utf8_lossy(&bytes[start..*pos]).into_owned()))
}

pub fn decode_pfm(bytes: &[u8]) -> Result<DecodedDepth> {
    if !bytes.starts_with(b"Pf") {
        return Err(Error::decode(0, "missing Pf magic"));
    }
    let mut pos = 2;
    let (off_w, w) = pfm_token(bytes, &mut pos)?;
    let width: u32 = w.parse().map_err(|_| Error::decode(off_w, format!("bad PFM width '{w}'")))?;
    let (off_h, h) = pfm_token(bytes, &mut pos)?;
    let height: u32 = h.parse().map_err(|_| Error::decode(off_h, format!("bad PFM height '{h}'")))?;
    let (off_s, s) = pfm_token(bytes, &mut pos)?;
    let scale: f64 = s.parse().map_err(|_| Error::decode(off_s, format!("bad PFM scale '{s}'")))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(Error::decode(off_s, "PFM scale must be non-zero"));
    }
    if width == 0 || height == 0 {
        return Err(Error::decode(off_w, "PFM dimensions must be positive"));
    }
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::decode(pos, "PFM header must end with a single whitespace byte"));
    }
    pos += 1;
    let n = width as usize * height as usize;
    let need = n * 4;
    if bytes.len() - pos < need {
        return Err(Error::decode(bytes.len(), format!("PFM payload truncated: need {need} bytes after offset {pos}")));
    }
    let little = scale < 0.0;
    let mut data = vec![0f32; n];
    let w = width as usize;
    for (k, chunk) in bytes[pos..pos + need].chunks_exact(4).enumerate() {
        let raw = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let d = if little { f32::from_le_bytes(raw) } else { f32::from_be_bytes(raw) };
        if d != INVALID_DEPTH && !(d.is_finite() && d > 0.0) {
            return Err(Error::decode(pos + 4 * k, format!("PFM value {d} is not a valid depth")));
        }
        let (row_from_bottom, col) = (k / w, k % w);
        data[(height as usize - 1 - row_from_bottom) * w + col] = d;
    }
    Ok(DecodedDepth {
        width,
        height,
        data,
        meta: DepthFileMeta {
            format: DepthFormat::Pfm,
            scale: None,
            d_min: None,
            d_max: None,
        },
    })
}

fn parse_meta(text: &str, offset: usize) -> Result<std::collections::BTreeMap<String, String>> {
    let mut out = std::collections::BTreeMap::new();
    for part in text.split(';').filter(|p| !p.is_empty()) {
        let (k, v) = part
            .split_once('=')
            .ok_or_else(|| Error::decode(offset, format!("malformed {META_KEY} entry '{part}'")))?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

fn meta_float(meta: &std::collections::BTreeMap<String, String>, key: &str, offset: usize) -> Result<f64> {
    let raw = meta
        .get(key)
        .ok_or_else(|| Error::decode(offset, format!("{META_KEY} lacks '{key}'")))?;
    raw.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite() && *v > 0.0)
        .ok_or_else(|| Error::decode(offset, format!("{META_KEY} has bad {key} '{raw}'")))
}

fn find_subslice(hay: &[u8], needle: &[u8]) -> Option<usize> {
    hay.windows(needle.len()).position(|w| w == needle)
}

/// Decodes an 8- or 16-bit grayscale PNG into its raw samples.
fn read_gray_png(bytes: &[u8]) -> Result<(u32, u32, png::BitDepth, Vec<u16>, Option<String>)> {
    let decoder = png::Decoder::new(Cursor::new(bytes));
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::decode(0, format!("png: {e}")))?;
    let info = reader.info();
    let (width, height, depth, color) = (info.width, info.height, info.bit_depth, info.color_type);
    let meta = info
        .uncompressed_latin1_text
        .iter()
        .find(|c| c.keyword == META_KEY)
        .map(|c| c.text.clone());
    if color != png::ColorType::Grayscale {
        return Err(Error::decode(25, format!("expected grayscale PNG, got {color:?}")));
    }
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::decode(0, "png image too large"))?;
    let mut buf = vec![0u8; size];
    let frame = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::decode(0, format!("png: {e}")))?;
    let line = frame.line_size;
    let mut samples = Vec::with_capacity(width as usize * height as usize);
    for row in 0..height as usize {
        let bytes = &buf[row * line..(row + 1) * line];
        match depth {
            png::BitDepth::Sixteen => {
                samples.extend(bytes.chunks_exact(2).take(width as usize).map(|c| u16::from_be_bytes([c[0], c[1]])))
            }
            png::BitDepth::Eight => samples.extend(bytes.iter().take(width as usize).map(|&b| b as u16)),
            other => return Err(Error::decode(24, format!("unsupported PNG bit depth {other:?}"))),
        }
    }
    Ok((width, height, depth, samples, meta))
}

fn decode_png_depth(bytes: &[u8]) -> Result<DecodedDepth> {
    let (width, height, depth, samples, meta) = read_gray_png(bytes)?;
    let meta_offset = find_subslice(bytes, META_KEY.as_bytes()).unwrap_or(0);
    let fields = match &meta {
        Some(text) => parse_meta(text, meta_offset)?,
        None => Default::default(),
    };
    let format = match fields.get("format").map(String::as_str) {
        Some("png16") => DepthFormat::Png16,
        Some("png8inv") => DepthFormat::Png8inv,
        Some(other) => return Err(Error::decode(meta_offset, format!("unknown format '{other}' in {META_KEY}"))),
        None if depth == png::BitDepth::Sixteen => DepthFormat::Png16,
        None => return Err(Error::decode(0, format!("8-bit PNG without {META_KEY} has no depth normalization"))),
    };
    match format {
        DepthFormat::Png16 => {
            if depth != png::BitDepth::Sixteen {
                return Err(Error::decode(24, "png16 depth must be a 16-bit PNG"));
            }
            let scale = if fields.contains_key("scale") {
                meta_float(&fields, "scale", meta_offset)?
            } else {
                DEFAULT_PNG16_SCALE
            };
            let data = samples
                .iter()
                .map(|&s| if s == 0 { INVALID_DEPTH } else { (s as f64 * scale) as f32 })
                .collect();
            Ok(DecodedDepth {
                width,
                height,
                data,
                meta: DepthFileMeta {
                    format,
                    scale: Some(scale),
                    d_min: None,
                    d_max: None,
                },
            })
        }
        DepthFormat::Png8inv => {
            if depth != png::BitDepth::Eight {
                return Err(Error::decode(24, "png8inv depth must be an 8-bit PNG"));
            }
            let d_min = meta_float(&fields, "d_min", meta_offset)?;
            let d_max = meta_float(&fields, "d_max", meta_offset)?;
            if d_max <= d_min {
                return Err(Error::decode(meta_offset, "png8inv requires d_min < d_max"));
            }
            let (inv_far, inv_near) = (1.0 / d_max, 1.0 / d_min);
            let data = samples
                .iter()
                .map(|&s| {
                    let inv = inv_far + (s as f64 / 255.0) * (inv_near - inv_far);
                    (1.0 / inv) as f32
                })
                .collect();
            Ok(DecodedDepth {
                width,
                height,
                data,
                meta: DepthFileMeta {
                    format,
                    scale: None,
                    d_min: Some(d_min),
                    d_max: Some(d_max),
                },
            })
        }
        DepthFormat::Pfm => unreachable!(),
    }
}

/// Segment maps are 8- or 16-bit grayscale PNGs of ids.
pub fn decode_segments(bytes: &[u8]) -> Result<crate::geom::SegmentMap> {
    if !bytes.starts_with(&PNG_SIGNATURE) {
        return Err(Error::decode(0, "segment map must be a PNG"));
    }
    let (width, height, _, samples, _) = read_gray_png(bytes)?;
    crate::geom::SegmentMap::new(width, height, samples.into_iter().map(u32::from).collect())
}

pub fn encode_segments(seg: &crate::geom::SegmentMap) -> Result<Vec<u8>> {
    if let Some(l) = seg.labels.iter().find(|l| **l > u16::MAX as u32) {
        return Err(Error::invalid(format!("segment id {l} does not fit in 16 bits")));
    }
    let mut px = Vec::with_capacity(seg.labels.len() * 2);
    for &l in &seg.labels {
        px.extend_from_slice(&(l as u16).to_be_bytes());
    }
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, seg.width, seg.height);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Sixteen);
        let mut writer = enc.write_header().map_err(png_encode_error)?;
        writer.write_image_data(&px).map_err(png_encode_error)?;
        writer.finish().map_err(png_encode_error)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(data: Vec<f32>, w: u32, h: u32) -> DepthMap {
        DepthMap::new(data, CameraIntrinsics::from_fov(50.0, w, h).unwrap()).unwrap()
    }

    #[test]
    fn pfm_constant_round_trip_bit_exact() {
        let m = map(vec![2.0; 12], 4, 3);
        let bytes = encode_depth(&m, DepthFormat::Pfm, EncodeParams::default()).unwrap();
        assert!(bytes.starts_with(b"Pf\n4 3\n-1.0\n"));
        let back = decode_depth(&bytes).unwrap();
        assert_eq!(back.data, m.data());
    }

    #[test]
    fn pfm_rows_are_bottom_up() {
        let m = map(vec![1.0, 2.0, 3.0, 4.0], 2, 2);
        let bytes = encode_pfm(2, 2, m.data());
        let body = &bytes[bytes.len() - 16..];
        assert_eq!(f32::from_le_bytes(body[0..4].try_into().unwrap()), 3.0);
        assert_eq!(decode_pfm(&bytes).unwrap().data, vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn png16_millimetres() {
        assert_eq!(png16_value(2.0, 0.001), 2000);
        assert_eq!(png16_value(INVALID_DEPTH, 0.001), 0);
        let m = map(vec![2.0, 0.0, 1.2345, 3.0], 2, 2);
        let bytes = encode_depth(&m, DepthFormat::Png16, EncodeParams::default()).unwrap();
        let back = decode_depth(&bytes).unwrap();
        assert_eq!(back.meta.format, DepthFormat::Png16);
        assert_eq!(back.data[0], 2.0);
        assert_eq!(back.data[1], INVALID_DEPTH);
        assert!((back.data[2] - 1.2345).abs() <= 0.0005 + 1e-6);
    }

    #[test]
    fn png8inv_endpoints() {
        assert_eq!(png8inv_value(1.0, 1.0, 10.0), 255);
        assert_eq!(png8inv_value(10.0, 1.0, 10.0), 0);
        assert_eq!(png8inv_value(0.5, 1.0, 10.0), 255);
        let m = map(vec![1.0, 10.0, 2.0, 5.0], 2, 2);
        let bytes = encode_depth(
            &m,
            DepthFormat::Png8inv,
            EncodeParams {
                range: Some((1.0, 10.0)),
                ..Default::default()
            },
        )
        .unwrap();
        let back = decode_depth(&bytes).unwrap();
        assert_eq!(back.meta.d_min, Some(1.0));
        assert_eq!(back.data[0], 1.0);
        assert_eq!(back.data[1], 10.0);
    }

    #[test]
    fn malformed_inputs_report_offsets() {
        match decode_depth(b"Pf\nabc 3\n-1.0\n") {
            Err(Error::Decode { offset, .. }) => assert_eq!(offset, 3),
            other => panic!("{other:?}"),
        }
        match decode_depth(b"Pf\n2 2\n-1.0\n\0\0\0\0") {
            Err(Error::Decode { offset, .. }) => assert_eq!(offset, 16),
            other => panic!("{other:?}"),
        }
        assert!(matches!(decode_depth(b"GIF89a"), Err(Error::Decode { offset: 0, .. })));
    }

    #[test]
    fn bad_meta_chunk_rejected() {
        let px = vec![0u8, 10, 0, 20];
        let bytes = png_bytes(2, 1, png::BitDepth::Sixteen, "format=png16;scale".into(), &px).unwrap();
        match decode_depth(&bytes) {
            Err(Error::Decode { offset, message }) => {
                assert!(offset > 0);
                assert!(message.contains("malformed"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn segments_round_trip() {
        let seg = crate::geom::SegmentMap::new(3, 1, vec![0, 7, 300]).unwrap();
        assert_eq!(decode_segments(&encode_segments(&seg).unwrap()).unwrap(), seg);
    }
}
