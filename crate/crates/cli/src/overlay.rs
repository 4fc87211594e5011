//! Heatmap overlays.
//!
//! Each output pixel is `round((1 - a) * x + a * color(s))` per channel,
//! where `x` is the image byte, `s` the normalized saliency at that pixel,
//! `a = opacity * s`, and rounding is half away from zero in f64. A pixel
//! with zero saliency keeps its original value.

use finercam_core::grid::{Grid, Image, ShapeError};

use crate::colormap::color_for;

pub const DEFAULT_OPACITY: f64 = 0.5;

/// RGB bytes of the overlay, row-major. Single-channel images are shown
/// as gray.
pub fn overlay_rgb(image: &Image, saliency: &Grid, opacity: f64) -> Result<Vec<u8>, ShapeError> {
    if saliency.dims() != (image.height(), image.width()) {
        return Err(ShapeError::new(
            &[image.height(), image.width()],
            &[saliency.height(), saliency.width()],
        ));
    }
    let c = image.channels();
    if c != 1 && c != 3 {
        return Err(ShapeError::new(&[3], &[c]));
    }
    let bytes = image.to_u8();
    let mut out = Vec::with_capacity(saliency.len() * 3);
    for (p, &s) in saliency.as_slice().iter().enumerate() {
        let s = s.clamp(0.0, 1.0);
        let color = color_for(s);
        let a = opacity.clamp(0.0, 1.0) * s as f64;
        for ch in 0..3 {
            let x = bytes[p * c + if c == 3 { ch } else { 0 }] as f64;
            out.push(((1.0 - a) * x + a * color[ch] as f64).round() as u8);
        }
    }
    Ok(out)
}

pub fn encode_png(rgb: &[u8], width: usize, height: usize) -> Result<Vec<u8>, png::EncodingError> {
    let mut buf = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut buf, width as u32, height as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header()?;
        writer.write_image_data(rgb)?;
    }
    Ok(buf)
}

/// The image itself as an RGB PNG. Channels beyond the third are dropped
/// and single-channel images become gray.
pub fn image_png(image: &Image) -> Result<Vec<u8>, png::EncodingError> {
    let c = image.channels();
    let bytes = image.to_u8();
    let rgb: Vec<u8> = (0..image.height() * image.width())
        .flat_map(|p| (0..3).map(move |ch| p * c + if c >= 3 { ch } else { 0 }))
        .map(|i| bytes[i])
        .collect();
    encode_png(&rgb, image.width(), image.height())
}
