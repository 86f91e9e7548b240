use image::imageops::{self, FilterType};
use image::{ImageBuffer, Luma};

use crate::error::{Error, Result};
use crate::types::{BBox, Raster};

/// A single-channel float image, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub width: u32,
    pub height: u32,
    pub data: Vec<f32>,
}

impl Patch {
    pub fn get(&self, x: u32, y: u32) -> f32 {
        self.data[(y * self.width + x) as usize]
    }
}

/// Crops `bbox` (pixel range `floor(x1)..ceil(x2)`), pads the shorter axis
/// symmetrically with the image's mean intensity to a square, then resizes
/// bilinearly to `h × w`.
pub fn crop_pad_resize(image: &Raster, bbox: &BBox, h: u32, w: u32) -> Result<Patch> {
    if h == 0 || w == 0 {
        return Err(Error::invalid("output size must be positive"));
    }
    bbox.validate()?;
    if bbox.x1 < 0.0 || bbox.y1 < 0.0 || bbox.x2 > image.width as f64 || bbox.y2 > image.height as f64 {
        return Err(Error::invalid(format!(
            "box {bbox:?} outside the {}x{} image",
            image.width, image.height
        )));
    }
    let (x0, y0) = (bbox.x1.floor() as u32, bbox.y1.floor() as u32);
    let (x1, y1) = (bbox.x2.ceil() as u32, bbox.y2.ceil() as u32);
    let (cw, ch) = (x1 - x0, y1 - y0);
    let side = cw.max(ch);
    let mean = image.data.iter().map(|&v| v as f64).sum::<f64>() / image.data.len().max(1) as f64;
    let (ox, oy) = ((side - cw) / 2, (side - ch) / 2);
    let square: ImageBuffer<Luma<f32>, Vec<f32>> = ImageBuffer::from_fn(side, side, |x, y| {
        let inside = x >= ox && x < ox + cw && y >= oy && y < oy + ch;
        Luma([if inside {
            image.get(x0 + x - ox, y0 + y - oy) as f32
        } else {
            mean as f32
        }])
    });
    let data = if (side, side) == (w, h) {
        square.into_raw()
    } else {
        // The resampler clamps float pixels to [0, 1].
        let unit: ImageBuffer<Luma<f32>, Vec<f32>> =
            ImageBuffer::from_fn(side, side, |x, y| Luma([square.get_pixel(x, y)[0] / 255.0]));
        imageops::resize(&unit, w, h, FilterType::Triangle)
            .into_raw()
            .into_iter()
            .map(|v| v * 255.0)
            .collect()
    };
    Ok(Patch {
        width: w,
        height: h,
        data,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient(w: u32, h: u32) -> Raster {
        Raster::new(w, h, (0..w * h).map(|i| (i * 7 % 251) as u8).collect()).unwrap()
    }

    #[test]
    fn identity_when_sizes_match() {
        let img = gradient(20, 20);
        let p = crop_pad_resize(&img, &BBox::new(4.0, 6.0, 12.0, 14.0).unwrap(), 8, 8).unwrap();
        for y in 0..8 {
            for x in 0..8 {
                assert_eq!(p.get(x, y), img.get(4 + x, 6 + y) as f32);
            }
        }
    }

    #[test]
    fn wide_box_padded_with_mean() {
        // Interior is constant 200, the rest 0, so the image mean is known.
        let mut img = Raster::filled(10, 10, 0);
        for y in 2..4 {
            for x in 2..6 {
                img.data[y * 10 + x] = 200;
            }
        }
        let mean = 200.0 * 8.0 / 100.0;
        let p = crop_pad_resize(&img, &BBox::new(2.0, 2.0, 6.0, 4.0).unwrap(), 4, 4).unwrap();
        for x in 0..4 {
            assert_eq!(p.get(x, 0), mean as f32);
            assert_eq!(p.get(x, 1), 200.0);
            assert_eq!(p.get(x, 2), 200.0);
            assert_eq!(p.get(x, 3), mean as f32);
        }
    }

    #[test]
    fn constant_stays_constant() {
        let img = Raster::filled(30, 17, 93);
        let p = crop_pad_resize(&img, &BBox::new(1.5, 2.0, 20.0, 9.0).unwrap(), 7, 13).unwrap();
        assert!(p.data.iter().all(|&v| (v - 93.0).abs() < 1e-4), "{:?}", p.data);
    }

    #[test]
    fn outside_is_error() {
        let img = Raster::filled(10, 10, 0);
        assert!(crop_pad_resize(&img, &BBox::new(5.0, 5.0, 11.0, 9.0).unwrap(), 4, 4).is_err());
    }
}
