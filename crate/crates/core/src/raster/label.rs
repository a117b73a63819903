use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use image::{GrayImage, ImageFormat};

use super::pixels::PixelSet;
use super::schema::{ClassSchema, IGNORE_ID};
use crate::{Error, Result};

/// Single-band class-id raster, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelRaster {
    width: u32,
    height: u32,
    data: Vec<u8>,
    pub pixel_size_m: f64,
}

impl LabelRaster {
    pub fn new(width: u32, height: u32, data: Vec<u8>, pixel_size_m: f64) -> Result<Self> {
        if data.len() != width as usize * height as usize {
            return Err(Error::BitmapSize {
                expected: width as usize * height as usize,
                got: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            data,
            pixel_size_m,
        })
    }

    pub fn filled(width: u32, height: u32, value: u8, pixel_size_m: f64) -> Self {
        Self {
            width,
            height,
            data: vec![value; width as usize * height as usize],
            pixel_size_m,
        }
    }

    pub fn ignored(width: u32, height: u32, pixel_size_m: f64) -> Self {
        Self::filled(width, height, IGNORE_ID, pixel_size_m)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn in_bounds(&self, x: i32, y: i32) -> bool {
        x >= 0 && y >= 0 && (x as u32) < self.width && (y as u32) < self.height
    }

    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.data[y as usize * self.width as usize + x as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, v: u8) {
        let w = self.width as usize;
        self.data[y as usize * w + x as usize] = v;
    }

    /// Writes `value` onto every in-bounds pixel of `pixels`. Returns the
    /// number of pixels written.
    pub fn paint(&mut self, pixels: &PixelSet, value: u8) -> u64 {
        let mut n = 0;
        for s in pixels.spans() {
            if s.y < 0 || s.y as u32 >= self.height {
                continue;
            }
            let x0 = s.x0.max(0);
            let x1 = s.x1.min(self.width as i32);
            if x1 <= x0 {
                continue;
            }
            let row = s.y as usize * self.width as usize;
            self.data[row + x0 as usize..row + x1 as usize].fill(value);
            n += (x1 - x0) as u64;
        }
        n
    }

    /// Values of in-bounds pixels of the set, in span order.
    pub fn values_under<'a>(&'a self, pixels: &'a PixelSet) -> impl Iterator<Item = u8> + 'a {
        pixels.spans().iter().flat_map(move |s| {
            let valid_row = s.y >= 0 && (s.y as u32) < self.height;
            let x0 = s.x0.clamp(0, self.width as i32);
            let x1 = s.x1.clamp(0, self.width as i32);
            let range = if valid_row && x1 > x0 {
                let row = s.y as usize * self.width as usize;
                row + x0 as usize..row + x1 as usize
            } else {
                0..0
            };
            self.data[range].iter().copied()
        })
    }

    /// Every pixel is a class of `schema` or the ignore value.
    pub fn validate(&self, schema: &ClassSchema) -> Result<()> {
        match self
            .data
            .iter()
            .find(|&&v| v != IGNORE_ID && !schema.contains(v))
        {
            Some(&v) => Err(Error::InvalidClass(v)),
            None => Ok(()),
        }
    }

    /// Copy of a rectangular window; out-of-raster pixels come back as ignore.
    pub fn crop(&self, x0: i32, y0: i32, w: u32, h: u32) -> LabelRaster {
        let mut out = LabelRaster::ignored(w, h, self.pixel_size_m);
        for dy in 0..h {
            for dx in 0..w {
                let (x, y) = (x0 + dx as i32, y0 + dy as i32);
                if self.in_bounds(x, y) {
                    out.set(dx, dy, self.get(x as u32, y as u32));
                }
            }
        }
        out
    }
}

/// Sidecar metadata stored next to a label PNG as `<file>.meta`.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterMeta {
    pub pixel_size_m: f64,
    pub schema: String,
}

fn meta_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta");
    PathBuf::from(s)
}

/// PNG bytes of the raster (8-bit grayscale, class ids as values).
pub fn encode_label_png(raster: &LabelRaster) -> Result<Vec<u8>> {
    let img = GrayImage::from_raw(raster.width, raster.height, raster.data.clone())
        .ok_or_else(|| Error::Invariant("raster buffer size".into()))?;
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png)?;
    Ok(buf.into_inner())
}

pub fn write_label_png(path: &Path, raster: &LabelRaster, schema: &str) -> Result<()> {
    fs::write(path, encode_label_png(raster)?)?;
    fs::write(
        meta_path(path),
        format!(
            "pixel_size_m = {}\nschema = {}\n",
            raster.pixel_size_m, schema
        ),
    )?;
    Ok(())
}

/// Loads a label PNG and its sidecar. A missing sidecar is an error.
pub fn read_label_png(path: &Path) -> Result<(LabelRaster, RasterMeta)> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let img = image::open(path)?.into_luma8();
    let mp = meta_path(path);
    let text = fs::read_to_string(&mp).map_err(|_| Error::MissingFile(mp.clone()))?;
    let mut pixel_size_m = None;
    let mut schema = None;
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::format("raster sidecar", line.to_string()))?;
        match k.trim() {
            "pixel_size_m" => {
                pixel_size_m =
                    Some(v.trim().parse::<f64>().map_err(|e| {
                        Error::format("raster sidecar", format!("pixel_size_m: {e}"))
                    })?)
            }
            "schema" => schema = Some(v.trim().to_string()),
            other => {
                return Err(Error::format(
                    "raster sidecar",
                    format!("unknown key {other:?}"),
                ))
            }
        }
    }
    let meta = RasterMeta {
        pixel_size_m: pixel_size_m
            .ok_or_else(|| Error::format("raster sidecar", "missing pixel_size_m"))?,
        schema: schema.ok_or_else(|| Error::format("raster sidecar", "missing schema"))?,
    };
    let (w, h) = img.dimensions();
    let raster = LabelRaster::new(w, h, img.into_raw(), meta.pixel_size_m)?;
    Ok((raster, meta))
}
