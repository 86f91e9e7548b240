//! Annotation ingest: LabelMe documents, the internal dataset layout,
//! prediction files and dataset statistics.

mod dataset;
mod labelme;
mod predictions;
mod stats;

pub use dataset::{
    load_dataset, load_labelme_dir, parse_dataset_manifest, parse_page, read_page, write_dataset, write_page,
    DatasetManifest, ManifestEntry, Split, DATASET_FORMAT_VERSION,
};
pub use labelme::{derive_reading_order, parse_labelme, to_labelme};
pub use predictions::{parse_predictions, read_predictions, Predictions};
pub use stats::{dataset_stats, DatasetStats, Distribution, SizeSummary};

use base64::Engine;

use crate::error::{Error, Result};
use crate::types::Raster;

/// Decodes a base64 image payload (PNG, JPEG) into an 8-bit grayscale raster.
pub fn raster_from_base64(payload: &str) -> Result<Raster> {
    let bytes = base64::engine::general_purpose::STANDARD
        .decode(payload.trim())
        .map_err(|e| Error::parse("imageData", format!("invalid base64: {e}")))?;
    let img =
        image::load_from_memory(&bytes).map_err(|e| Error::parse("imageData", format!("undecodable image: {e}")))?;
    let gray = img.to_luma8();
    let (w, h) = gray.dimensions();
    Raster::new(w, h, gray.into_raw())
}

/// Encodes a raster as base64 PNG (lossless, so round-trips exactly).
pub fn raster_to_base64_png(raster: &Raster) -> Result<String> {
    let img = image::GrayImage::from_raw(raster.width, raster.height, raster.data.clone())
        .ok_or_else(|| Error::dim("raster buffer does not match its dimensions"))?;
    let mut buf = std::io::Cursor::new(Vec::new());
    img.write_to(&mut buf, image::ImageFormat::Png)
        .map_err(|e| Error::invalid(format!("png encoding failed: {e}")))?;
    Ok(base64::engine::general_purpose::STANDARD.encode(buf.into_inner()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn raster_base64_round_trip() {
        let data: Vec<u8> = (0..12u8).map(|v| v * 20).collect();
        let r = Raster::new(4, 3, data).unwrap();
        let enc = raster_to_base64_png(&r).unwrap();
        assert_eq!(raster_from_base64(&enc).unwrap(), r);
        assert!(raster_from_base64("not base64!!").is_err());
        assert!(raster_from_base64("aGVsbG8=").is_err());
    }
}
