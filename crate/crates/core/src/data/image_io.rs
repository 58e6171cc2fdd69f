use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder, ImageFormat};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `[3, H, W]` tensor to interleaved 8-bit RGB.
pub fn tensor_to_rgb8(image: &Tensor) -> Result<(usize, usize, Vec<u8>)> {
    let (c, h, w) = image.dims3()?;
    if c != 3 {
        return Err(Error::Shape(format!("expected 3 channels, got {c}")));
    }
    let mut out = Vec::with_capacity(3 * h * w);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..3 {
                out.push((image.at3(ch, y, x).clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
    }
    Ok((w, h, out))
}

pub fn tensor_from_rgb8(width: usize, height: usize, rgb: &[u8]) -> Result<Tensor> {
    if rgb.len() != 3 * width * height {
        return Err(Error::Shape(format!(
            "{} bytes do not form a {width}x{height} RGB image",
            rgb.len()
        )));
    }
    let mut t = Tensor::zeros(&[3, height, width]);
    for y in 0..height {
        for x in 0..width {
            for ch in 0..3 {
                t.set3(ch, y, x, rgb[(y * width + x) * 3 + ch] as f64 / 255.0);
            }
        }
    }
    Ok(t)
}

/// Binary PPM (P6) bytes.
pub fn encode_ppm(image: &Tensor) -> Result<Vec<u8>> {
    let (w, h, rgb) = tensor_to_rgb8(image)?;
    let mut out = Vec::new();
    PnmEncoder::new(&mut out)
        .with_subtype(PnmSubtype::Pixmap(SampleEncoding::Binary))
        .write_image(&rgb, w as u32, h as u32, ExtendedColorType::Rgb8)
        .map_err(|e| Error::Format(e.to_string()))?;
    Ok(out)
}

pub fn decode_ppm(bytes: &[u8]) -> Result<Tensor> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Pnm)
        .map_err(|e| Error::Format(e.to_string()))?
        .to_rgb8();
    let (w, h) = img.dimensions();
    tensor_from_rgb8(w as usize, h as usize, img.as_raw())
}

pub fn write_ppm(image: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    f.write_all(&encode_ppm(image)?)?;
    f.flush()?;
    Ok(())
}

pub fn read_ppm(path: impl AsRef<Path>) -> Result<Tensor> {
    decode_ppm(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_round_trip_of_quantized_image() {
        let rgb: Vec<u8> = (0..3 * 5 * 4).map(|i| (i * 7 % 256) as u8).collect();
        let t = tensor_from_rgb8(5, 4, &rgb).unwrap();
        let bytes = encode_ppm(&t).unwrap();
        assert!(bytes.starts_with(b"P6"));
        let back = decode_ppm(&bytes).unwrap();
        assert_eq!(back, t);
        assert_eq!(tensor_to_rgb8(&back).unwrap().2, rgb);
    }

    #[test]
    fn garbage_is_rejected() {
        assert!(decode_ppm(b"P6\n2 2\n255\nabc").is_err());
        assert!(decode_ppm(b"not an image").is_err());
    }
}
