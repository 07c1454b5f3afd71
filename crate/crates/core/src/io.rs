//! On-disk formats for every pipeline artifact.
//!
//! The formats are pinned so external tooling can rely on them:
//!
//! - 8-bit grayscale/RGB PNG for quick-look images,
//! - 1-bit grayscale PNG for binary masks (foreground = white),
//! - raw little-endian f32 planes with a `.json` sidecar
//!   (`{width, height, channels, role}`) for lossless rasters,
//! - CSV tables whose headers derive from the record structs,
//! - network weights as one flat little-endian f32 blob (per layer:
//!   weights then bias, in layer order) plus a `.json` manifest listing
//!   layer names, shapes, the initialization seed and a configuration
//!   hash,
//! - plain JSON for camera models, homographies, configurations and
//!   statistical test results.

use std::fs;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::imaging::{BinaryMask, ImagePlane, Role};
use crate::net::{UNet, UNetConfig};

/// Companion metadata of a raw f32 plane.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlaneSidecar {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub role: Role,
}

/// Shape of one convolution layer inside a weights manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerInfo {
    pub name: String,
    /// `[out_channels, in_channels, k, k]`.
    pub weight_shape: [usize; 4],
    pub bias_len: usize,
}

/// Companion metadata of a weights blob. The layer list pins the blob
/// layout; the seed and configuration hash record provenance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeightsManifest {
    pub layers: Vec<LayerInfo>,
    pub param_count: usize,
    pub seed: u64,
    pub config_sha256: String,
}

/// Sidecar path of a data file: the same name with `.json` appended.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut os = path.as_os_str().to_owned();
    os.push(".json");
    PathBuf::from(os)
}

fn prepare_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    Ok(())
}

/// Hex-encoded SHA-256 of a value's JSON serialization.
pub fn json_sha256<T: Serialize>(value: &T) -> Result<String> {
    let bytes = serde_json::to_vec(value)?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

/// Writes a value as pretty-printed JSON with a trailing newline.
pub fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    prepare_parent(path)?;
    let mut buf = serde_json::to_vec_pretty(value)?;
    buf.push(b'\n');
    fs::write(path, buf)?;
    Ok(())
}

/// Reads a JSON file into a deserializable value.
pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_slice(&fs::read(path)?)?)
}

/// Writes records as CSV; the header derives from the record struct's
/// field names, so table layouts are pinned by the types themselves.
pub fn save_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    prepare_parent(path)?;
    let mut writer = csv::Writer::from_path(path)?;
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush()?;
    Ok(())
}

/// Reads a whole CSV table written by [`save_csv`].
pub fn load_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for row in reader.deserialize() {
        out.push(row?);
    }
    Ok(out)
}

/// Saves an image as 8-bit PNG (grayscale for 1 channel, RGB for 3).
/// Values are rounded and clamped to `[0, 255]`; planes in other units
/// (e.g. degrees Celsius) should be rescaled before saving.
pub fn save_image_png(path: &Path, img: &ImagePlane) -> Result<()> {
    let color = match img.channels {
        1 => png::ColorType::Grayscale,
        3 => png::ColorType::Rgb,
        c => {
            return Err(Error::DimensionMismatch(format!("cannot encode {c}-channel PNG")));
        }
    };
    prepare_parent(path)?;
    let file = BufWriter::new(File::create(path)?);
    let mut enc = png::Encoder::new(file, img.width as u32, img.height as u32);
    enc.set_color(color);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header().map_err(|e| Error::Image(e.to_string()))?;
    let bytes: Vec<u8> = img.data.iter().map(|&v| v.round().clamp(0.0, 255.0) as u8).collect();
    writer.write_image_data(&bytes).map_err(|e| Error::Image(e.to_string()))?;
    writer.finish().map_err(|e| Error::Image(e.to_string()))?;
    Ok(())
}

/// Loads an 8-bit grayscale or RGB PNG. PNG carries no role metadata,
/// so the caller states what the image represents.
pub fn load_image_png(path: &Path, role: Role) -> Result<ImagePlane> {
    let decoder = png::Decoder::new(BufReader::new(File::open(path)?));
    let mut reader = decoder.read_info().map_err(|e| Error::Image(e.to_string()))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::Image("PNG dimensions overflow".into()))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(|e| Error::Image(e.to_string()))?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(Error::Image(format!("expected 8-bit PNG, got {:?}", info.bit_depth)));
    }
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::Rgb => 3,
        other => return Err(Error::Image(format!("unsupported PNG color type {other:?}"))),
    };
    let (width, height) = (info.width as usize, info.height as usize);
    let stride = info.line_size;
    let mut data = Vec::with_capacity(width * height * channels);
    for y in 0..height {
        let row = &buf[y * stride..y * stride + width * channels];
        data.extend(row.iter().map(|&b| b as f32));
    }
    Ok(ImagePlane { width, height, channels, role, data })
}

/// Saves a mask as 1-bit grayscale PNG; set bits encode white.
pub fn save_mask_png(path: &Path, mask: &BinaryMask) -> Result<()> {
    prepare_parent(path)?;
    let file = BufWriter::new(File::create(path)?);
    let mut enc = png::Encoder::new(file, mask.width as u32, mask.height as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::One);
    let mut writer = enc.write_header().map_err(|e| Error::Image(e.to_string()))?;
    let stride = mask.width.div_ceil(8);
    let mut bytes = vec![0u8; stride * mask.height];
    for y in 0..mask.height {
        for x in 0..mask.width {
            if mask.bits[y * mask.width + x] {
                bytes[y * stride + x / 8] |= 0x80 >> (x % 8);
            }
        }
    }
    writer.write_image_data(&bytes).map_err(|e| Error::Image(e.to_string()))?;
    writer.finish().map_err(|e| Error::Image(e.to_string()))?;
    Ok(())
}

/// Loads a 1-bit grayscale PNG written by [`save_mask_png`].
pub fn load_mask_png(path: &Path) -> Result<BinaryMask> {
    let decoder = png::Decoder::new(BufReader::new(File::open(path)?));
    let mut reader = decoder.read_info().map_err(|e| Error::Image(e.to_string()))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::Image("PNG dimensions overflow".into()))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(|e| Error::Image(e.to_string()))?;
    if info.bit_depth != png::BitDepth::One || info.color_type != png::ColorType::Grayscale {
        return Err(Error::Image(format!(
            "expected 1-bit grayscale PNG, got {:?} {:?}",
            info.bit_depth, info.color_type
        )));
    }
    let (width, height) = (info.width as usize, info.height as usize);
    let stride = info.line_size;
    let mut bits = Vec::with_capacity(width * height);
    for y in 0..height {
        for x in 0..width {
            bits.push(buf[y * stride + x / 8] & (0x80 >> (x % 8)) != 0);
        }
    }
    BinaryMask::from_bits(width, height, bits)
}

/// Saves a plane losslessly: raw little-endian f32 at `path` plus a
/// JSON sidecar at `path + ".json"`.
pub fn save_plane_raw(path: &Path, img: &ImagePlane) -> Result<()> {
    prepare_parent(path)?;
    let mut writer = BufWriter::new(File::create(path)?);
    for &v in &img.data {
        writer.write_all(&v.to_le_bytes())?;
    }
    writer.flush()?;
    let sidecar = PlaneSidecar {
        width: img.width,
        height: img.height,
        channels: img.channels,
        role: img.role,
    };
    save_json(&sidecar_path(path), &sidecar)
}

/// Loads a plane written by [`save_plane_raw`], restoring exact bits.
pub fn load_plane_raw(path: &Path) -> Result<ImagePlane> {
    let sc: PlaneSidecar = load_json(&sidecar_path(path))?;
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    let expected = sc.width * sc.height * sc.channels * 4;
    if bytes.len() != expected {
        return Err(Error::DimensionMismatch(format!(
            "raw plane {} holds {} bytes, sidecar implies {expected}",
            path.display(),
            bytes.len()
        )));
    }
    let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    Ok(ImagePlane { width: sc.width, height: sc.height, channels: sc.channels, role: sc.role, data })
}

/// Saves network weights: a flat little-endian f32 blob at `path` (per
/// layer: weights then bias, in layer order) and a manifest sidecar.
pub fn save_weights(path: &Path, net: &UNet<f32>) -> Result<()> {
    prepare_parent(path)?;
    let mut writer = BufWriter::new(File::create(path)?);
    for v in net.flat_weights() {
        writer.write_all(&v.to_le_bytes())?;
    }
    writer.flush()?;
    let manifest = WeightsManifest {
        layers: net
            .convs
            .iter()
            .map(|c| LayerInfo {
                name: c.name.clone(),
                weight_shape: c.weight_shape(),
                bias_len: c.b.len(),
            })
            .collect(),
        param_count: net.num_params(),
        seed: net.cfg.seed,
        config_sha256: json_sha256(&net.cfg)?,
    };
    save_json(&sidecar_path(path), &manifest)
}

/// Rebuilds a network from a weights blob. The manifest must agree with
/// the architecture implied by `cfg` (layer names and shapes); the seed
/// and hash are provenance metadata and are returned, not enforced, so
/// weights remain loadable into an equal architecture declared with a
/// different initialization seed.
pub fn load_weights(path: &Path, cfg: &UNetConfig) -> Result<(UNet<f32>, WeightsManifest)> {
    let manifest: WeightsManifest = load_json(&sidecar_path(path))?;
    let mut net = UNet::<f32>::new(*cfg)?;
    if manifest.layers.len() != net.convs.len() {
        return Err(Error::ShapeMismatch(format!(
            "manifest lists {} layers, architecture has {}",
            manifest.layers.len(),
            net.convs.len()
        )));
    }
    for (info, conv) in manifest.layers.iter().zip(&net.convs) {
        if info.name != conv.name
            || info.weight_shape != conv.weight_shape()
            || info.bias_len != conv.b.len()
        {
            return Err(Error::ShapeMismatch(format!(
                "layer {} is {:?}+{} in the manifest but {:?}+{} in the architecture",
                info.name,
                info.weight_shape,
                info.bias_len,
                conv.weight_shape(),
                conv.b.len()
            )));
        }
    }
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    if bytes.len() != net.num_params() * 4 {
        return Err(Error::ShapeMismatch(format!(
            "weights blob holds {} bytes, architecture needs {}",
            bytes.len(),
            net.num_params() * 4
        )));
    }
    let flat: Vec<f32> =
        bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    net.load_flat(&flat)?;
    Ok((net, manifest))
}
