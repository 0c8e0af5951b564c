//! PNG images as `1×C×H×W` tensors on `[0, 1]`.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BitDepth {
    Eight,
    Sixteen,
}

fn image_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

/// Decode an 8- or 16-bit grayscale or RGB PNG; values become `value / maxval`.
pub fn load_image(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder.read_info().map_err(|e| image_err(path, e.to_string()))?;
    let mut buf = vec![0u8; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf).map_err(|e| image_err(path, e.to_string()))?;
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::Rgb => 3,
        other => return Err(image_err(path, format!("unsupported color type {other:?}"))),
    };
    let (w, h) = (info.width as usize, info.height as usize);
    let samples: Vec<f32> = match info.bit_depth {
        png::BitDepth::Eight => buf[..w * h * channels].iter().map(|&b| b as f32 / 255.0).collect(),
        png::BitDepth::Sixteen => buf[..w * h * channels * 2]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f32 / 65535.0)
            .collect(),
        other => return Err(image_err(path, format!("unsupported bit depth {other:?}"))),
    };
    // interleaved HWC -> planar CHW
    let shape = Shape::new(1, channels, h, w);
    Ok(Tensor::from_fn(shape, |[_, c, y, x]| samples[(y * w + x) * channels + c]))
}

fn quantize(v: f32, max: f32) -> u16 {
    // f32::round rounds half away from zero
    (v.clamp(0.0, 1.0) * max).round() as u16
}

/// Encode the single image in `img` (`1×C×H×W`, C ∈ {1, 3}) with values clamped to `[0, 1]`.
pub fn save_image(img: &Tensor<f32>, path: impl AsRef<Path>, depth: BitDepth) -> Result<()> {
    let path = path.as_ref();
    let s = img.shape();
    let color = match s.c() {
        1 => png::ColorType::Grayscale,
        3 => png::ColorType::Rgb,
        c => return Err(image_err(path, format!("cannot encode {c} channels"))),
    };
    if s.n() != 1 {
        return Err(image_err(path, format!("expected a single image, got {s}")));
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), s.w() as u32, s.h() as u32);
    enc.set_color(color);
    let mut bytes = Vec::with_capacity(s.numel() * 2);
    match depth {
        BitDepth::Eight => enc.set_depth(png::BitDepth::Eight),
        BitDepth::Sixteen => enc.set_depth(png::BitDepth::Sixteen),
    }
    for y in 0..s.h() {
        for x in 0..s.w() {
            for c in 0..s.c() {
                let v = img.at([0, c, y, x]);
                match depth {
                    BitDepth::Eight => bytes.push(quantize(v, 255.0) as u8),
                    BitDepth::Sixteen => bytes.extend_from_slice(&quantize(v, 65535.0).to_be_bytes()),
                }
            }
        }
    }
    let mut writer = enc.write_header().map_err(|e| image_err(path, e.to_string()))?;
    writer.write_image_data(&bytes).map_err(|e| image_err(path, e.to_string()))?;
    writer.finish().map_err(|e| image_err(path, e.to_string()))
}

/// Round to the nearest 8-bit level, as a save/load round trip would.
pub fn quantize_8bit(img: &Tensor<f32>) -> Tensor<f32> {
    img.map(|v| quantize(v, 255.0) as f32 / 255.0)
}
