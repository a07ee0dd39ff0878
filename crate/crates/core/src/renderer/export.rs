use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use image::{ImageBuffer, Luma};

use crate::error::{Error, Result};
use crate::image::Image;

/// Writes `img * scale` as a 16-bit grayscale PNG, rounding and saturating
/// to `[0, 65535]`. With `scale = 5000` a depth map in meters matches the
/// TUM depth convention.
pub fn write_png16(path: &Path, img: &Image, scale: f64) -> Result<()> {
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_fn(img.width() as u32, img.height() as u32, |x, y| {
            let v = (img.get(x as usize, y as usize) * scale).round();
            Luma([if v.is_finite() { v.clamp(0.0, 65535.0) as u16 } else { 0 }])
        });
    buf.save(path).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// One CSV row per image row, full `f64` precision.
pub fn write_csv(path: &Path, img: &Image) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    for y in 0..img.height() {
        let row: Vec<String> = (0..img.width()).map(|x| img.get(x, y).to_string()).collect();
        writeln!(w, "{}", row.join(",")).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
