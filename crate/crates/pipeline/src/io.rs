//! 8-bit image files, luma conversion and atomic writes.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use image::{DynamicImage, GrayImage, ImageFormat, RgbImage};
use wmsync_core::{Grid, Real};

use crate::error::{Error, Result};

pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

/// A decoded file: its luma plane and, for colour sources, the RGB pixels
/// needed to put an edited luma back.
#[derive(Clone, Debug)]
pub struct LoadedImage {
    pub luma: Grid<f64>,
    pub rgb: Option<RgbImage>,
}

pub fn luma_of(rgb: &RgbImage) -> Grid<f64> {
    let (w, h) = rgb.dimensions();
    Grid::from_fn(w as usize, h as usize, |x, y| {
        let p = rgb.get_pixel(x as u32, y as u32).0;
        LUMA_WEIGHTS[0] * p[0] as f64 + LUMA_WEIGHTS[1] * p[1] as f64 + LUMA_WEIGHTS[2] * p[2] as f64
    })
}

pub fn load_image(path: &Path) -> Result<LoadedImage> {
    let img = image::open(path).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::Io(std::io::Error::new(io.kind(), format!("{}: {io}", path.display()))),
        other => Error::Image(format!("{}: {other}", path.display())),
    })?;
    Ok(match img {
        DynamicImage::ImageLuma8(g) => LoadedImage {
            luma: Grid::from_u8(g.width() as usize, g.height() as usize, g.as_raw())?,
            rgb: None,
        },
        DynamicImage::ImageLumaA8(_) | DynamicImage::ImageLuma16(_) | DynamicImage::ImageLumaA16(_) => {
            let g = img.to_luma8();
            LoadedImage {
                luma: Grid::from_u8(g.width() as usize, g.height() as usize, g.as_raw())?,
                rgb: None,
            }
        }
        other => {
            let rgb = other.to_rgb8();
            LoadedImage {
                luma: luma_of(&rgb),
                rgb: Some(rgb),
            }
        }
    })
}

/// Encodes a luma plane, or for colour sources adds the luma change to every
/// channel (chroma is left as it was).
pub fn encode_image<T: Real>(path: &Path, luma: &Grid<T>, source: Option<&LoadedImage>) -> Result<Vec<u8>> {
    let format = ImageFormat::from_path(path).unwrap_or(ImageFormat::Png);
    let (w, h) = luma.dims();
    let dynamic = match source.and_then(|s| s.rgb.as_ref().map(|rgb| (s, rgb))) {
        Some((src, rgb)) if src.luma.dims() == (w, h) => {
            let mut out = rgb.clone();
            for (x, y, p) in out.enumerate_pixels_mut() {
                let delta = luma.get(x as usize, y as usize).f64() - src.luma.get(x as usize, y as usize);
                for c in p.0.iter_mut() {
                    *c = (*c as f64 + delta).round().clamp(0.0, 255.0) as u8;
                }
            }
            DynamicImage::ImageRgb8(out)
        }
        _ => DynamicImage::ImageLuma8(
            GrayImage::from_raw(w as u32, h as u32, luma.to_u8()).expect("buffer matches dims"),
        ),
    };
    let mut buf = std::io::Cursor::new(Vec::new());
    match format {
        ImageFormat::Jpeg => {
            let enc = image::codecs::jpeg::JpegEncoder::new_with_quality(&mut buf, 95);
            dynamic.write_with_encoder(enc)?;
        }
        ImageFormat::Png => dynamic.write_to(&mut buf, ImageFormat::Png)?,
        other => return Err(Error::Image(format!("unsupported output format {other:?}"))),
    }
    Ok(buf.into_inner())
}

pub fn save_image<T: Real>(path: &Path, luma: &Grid<T>, source: Option<&LoadedImage>) -> Result<()> {
    write_atomic(path, &encode_image(path, luma, source)?)
}

/// Write to a sibling temporary file, then rename over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let name = path
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| Error::Config(format!("bad output path {}", path.display())))?;
    let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Image files in a directory, sorted by name.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir)? {
        let p = entry?.path();
        let ext = p.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase());
        if matches!(ext.as_deref(), Some("png" | "jpg" | "jpeg" | "bmp" | "pgm" | "tif" | "tiff")) {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

/// Directory of image files as an [`ImageSource`](wmsync_core::dataset::ImageSource).
#[derive(Clone, Debug)]
pub struct ImageDir {
    paths: Vec<PathBuf>,
}

impl ImageDir {
    pub fn open(dir: &Path) -> Result<Self> {
        let paths = list_images(dir)?;
        if paths.is_empty() {
            return Err(Error::Config(format!("no images in {}", dir.display())));
        }
        Ok(Self { paths })
    }

    pub fn paths(&self) -> &[PathBuf] {
        &self.paths
    }
}

impl wmsync_core::dataset::ImageSource for ImageDir {
    fn len(&self) -> usize {
        self.paths.len()
    }

    fn load(&self, index: usize) -> wmsync_core::Result<Grid<f64>> {
        load_image(&self.paths[index])
            .map(|l| l.luma)
            .map_err(|e| wmsync_core::Error::Codec(e.to_string()))
    }
}
