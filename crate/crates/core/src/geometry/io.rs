//! On-disk formats for frames: 16-bit millimeter depth PNG, 8-bit RGB color
//! PNG, 8-bit mask PNG and one-line text intrinsics.

use std::fs;
use std::path::Path;

use image::{GrayImage, ImageBuffer, Luma, RgbImage};

use super::camera::CameraIntrinsics;
use super::frame::RgbdFrame;
use super::image::Image;
use crate::error::{Error, Result};
use crate::scalar::Real;

pub fn read_depth_png<T: Real>(path: &Path) -> Result<Image<T>> {
    let img = image::open(path)?.into_luma16();
    let (w, h) = img.dimensions();
    let scale = T::lit(1e-3);
    Image::from_vec(
        w as usize,
        h as usize,
        img.into_raw()
            .into_iter()
            .map(|mm| T::from_u16(mm).expect("u16 representable") * scale)
            .collect(),
    )
}

/// Writes metric depth as millimeters, rounding to the nearest unit.
pub fn write_depth_png<T: Real>(path: &Path, depth: &Image<T>) -> Result<()> {
    let data: Vec<u16> = depth
        .data()
        .iter()
        .map(|&d| {
            let mm = (d.to_f64_lossy() * 1000.0).round();
            if mm.is_finite() && mm > 0.0 {
                mm.min(u16::MAX as f64) as u16
            } else {
                0
            }
        })
        .collect();
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(depth.width() as u32, depth.height() as u32, data)
            .ok_or_else(|| Error::invalid("depth buffer size"))?;
    buf.save(path)?;
    Ok(())
}

pub fn read_color_png<T: Real>(path: &Path) -> Result<Image<[T; 3]>> {
    let img = image::open(path)?.into_rgb8();
    let (w, h) = img.dimensions();
    let s = T::lit(1.0 / 255.0);
    let data = img
        .pixels()
        .map(|p| p.0.map(|c| T::from_u8(c).expect("u8") * s))
        .collect();
    Image::from_vec(w as usize, h as usize, data)
}

pub fn write_color_png<T: Real>(path: &Path, color: &Image<[T; 3]>) -> Result<()> {
    let data: Vec<u8> = color
        .data()
        .iter()
        .flat_map(|c| c.map(|x| (x.to_f64_lossy().clamp(0.0, 1.0) * 255.0).round() as u8))
        .collect();
    let buf = RgbImage::from_raw(color.width() as u32, color.height() as u32, data)
        .ok_or_else(|| Error::invalid("color buffer size"))?;
    buf.save(path)?;
    Ok(())
}

pub fn read_mask_png(path: &Path) -> Result<Image<bool>> {
    let img = image::open(path)?.into_luma8();
    let (w, h) = img.dimensions();
    Image::from_vec(
        w as usize,
        h as usize,
        img.into_raw().into_iter().map(|x| x != 0).collect(),
    )
}

pub fn write_mask_png(path: &Path, mask: &Image<bool>) -> Result<()> {
    let data = mask.data().iter().map(|&m| if m { 255 } else { 0 }).collect();
    let buf = GrayImage::from_raw(mask.width() as u32, mask.height() as u32, data)
        .ok_or_else(|| Error::invalid("mask buffer size"))?;
    buf.save(path)?;
    Ok(())
}

/// Writes a scalar image as 8-bit grayscale, linearly mapping `[0, max]`.
pub fn write_scalar_png<T: Real>(path: &Path, img: &Image<T>) -> Result<()> {
    let max = img.max_value().to_f64_lossy().max(1e-12);
    let data = img
        .data()
        .iter()
        .map(|&x| ((x.to_f64_lossy() / max).clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let buf = GrayImage::from_raw(img.width() as u32, img.height() as u32, data)
        .ok_or_else(|| Error::invalid("image buffer size"))?;
    buf.save(path)?;
    Ok(())
}

/// Parses `fx fy cx cy width height`.
pub fn parse_intrinsics<T: Real>(text: &str) -> Result<CameraIntrinsics<T>> {
    let fields: Vec<&str> = text.split_whitespace().collect();
    if fields.len() != 6 {
        return Err(Error::invalid(format!(
            "intrinsics need 6 fields `fx fy cx cy width height`, got {}",
            fields.len()
        )));
    }
    let num = |s: &str| -> Result<f64> {
        s.parse::<f64>()
            .map_err(|_| Error::invalid(format!("bad intrinsics number `{s}`")))
    };
    let int = |s: &str| -> Result<usize> {
        s.parse::<usize>()
            .map_err(|_| Error::invalid(format!("bad intrinsics size `{s}`")))
    };
    CameraIntrinsics::new(
        T::lit(num(fields[0])?),
        T::lit(num(fields[1])?),
        T::lit(num(fields[2])?),
        T::lit(num(fields[3])?),
        int(fields[4])?,
        int(fields[5])?,
    )
}

pub fn read_intrinsics<T: Real>(path: &Path) -> Result<CameraIntrinsics<T>> {
    let text = fs::read_to_string(path)?;
    parse_intrinsics(&text).map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_intrinsics<T: Real>(path: &Path, k: &CameraIntrinsics<T>) -> Result<()> {
    fs::write(
        path,
        format!(
            "{} {} {} {} {} {}\n",
            k.fx.to_f64_lossy(),
            k.fy.to_f64_lossy(),
            k.cx.to_f64_lossy(),
            k.cy.to_f64_lossy(),
            k.width,
            k.height
        ),
    )?;
    Ok(())
}

/// Loads a frame from its depth, color and optional mask files.
pub fn load_frame<T: Real>(
    depth: &Path,
    color: Option<&Path>,
    mask: Option<&Path>,
    k: CameraIntrinsics<T>,
) -> Result<RgbdFrame<T>> {
    let depth_img = read_depth_png::<T>(depth)?;
    let color_img = match color {
        Some(p) => read_color_png::<T>(p)?,
        None => Image::filled(depth_img.width(), depth_img.height(), [T::lit(0.5); 3]),
    };
    let mask_img = mask.map(read_mask_png).transpose()?;
    RgbdFrame::new(color_img, depth_img, k, mask_img)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn depth_round_trip_within_half_millimeter() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.png");
        let depth = Image::from_fn(17, 9, |u, v| 0.5 + u as f64 * 0.01234 + v as f64 * 0.00077);
        write_depth_png(&path, &depth).unwrap();
        let back: Image<f64> = read_depth_png(&path).unwrap();
        for (a, b) in depth.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= 0.0005 + 1e-12);
        }
    }

    #[test]
    fn intrinsics_text() {
        let k: CameraIntrinsics<f64> = parse_intrinsics("525 525 319.5 239.5 640 480\n").unwrap();
        assert_eq!(k.width, 640);
        assert_eq!(k.cx, 319.5);
        assert!(parse_intrinsics::<f64>("1 2 3").is_err());
    }

    #[test]
    fn mask_and_color_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = Image::from_fn(5, 4, |u, v| (u + v) % 2 == 0);
        write_mask_png(&dir.path().join("m.png"), &m).unwrap();
        assert_eq!(read_mask_png(&dir.path().join("m.png")).unwrap(), m);
        let c = Image::from_fn(5, 4, |u, v| [u as f64 / 4.0, v as f64 / 3.0, 1.0]);
        write_color_png(&dir.path().join("c.png"), &c).unwrap();
        let back: Image<[f64; 3]> = read_color_png(&dir.path().join("c.png")).unwrap();
        for (a, b) in c.data().iter().zip(back.data()) {
            for i in 0..3 {
                assert!((a[i] - b[i]).abs() <= 0.5 / 255.0 + 1e-12);
            }
        }
    }
}
