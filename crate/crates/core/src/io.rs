//! File formats: grayscale PNG, CSV matrices, atom lists, atomic writes.

use std::fs;
use std::io::Write;
use std::path::Path;

use ::image::{DynamicImage, GrayImage, ImageBuffer, Luma};
use ndarray::Array2;

use crate::error::{Error, Result};
use crate::image::{AtomMap, Image, Site};

/// Writes `bytes` to a temporary file beside `path` and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// Loads an 8- or 16-bit PNG as grayscale scaled to `[0, 1]`. Colour images
/// are converted to luma.
pub fn load_png(path: &Path) -> Result<Image> {
    let img = ::image::open(path)?;
    let sixteen = matches!(
        img,
        DynamicImage::ImageLuma16(_)
            | DynamicImage::ImageLumaA16(_)
            | DynamicImage::ImageRgb16(_)
            | DynamicImage::ImageRgba16(_)
    );
    let (w, h) = (img.width() as usize, img.height() as usize);
    let pixels = if sixteen {
        let g = img.into_luma16();
        Array2::from_shape_fn((h, w), |(i, j)| g.get_pixel(j as u32, i as u32).0[0] as f64 / 65535.0)
    } else {
        let g = img.into_luma8();
        Array2::from_shape_fn((h, w), |(i, j)| g.get_pixel(j as u32, i as u32).0[0] as f64 / 255.0)
    };
    Image::new(pixels)
}

/// Maps `[lo, hi]` to the full integer range; constant images map to 0.
fn quantize(y: &Image, max: f64) -> impl Fn(usize, usize) -> f64 + '_ {
    let (lo, hi) = y.min_max();
    let span = hi - lo;
    move |i, j| {
        if span > 0.0 {
            ((y.pixels()[[i, j]] - lo) / span * max).round()
        } else {
            0.0
        }
    }
}

pub fn encode_png16(y: &Image) -> Result<Vec<u8>> {
    let (rows, cols) = y.dims();
    let q = quantize(y, 65535.0);
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_fn(cols as u32, rows as u32, |x, z| Luma([q(z as usize, x as usize) as u16]));
    encode(DynamicImage::ImageLuma16(buf))
}

pub fn encode_rgb(buf: ::image::RgbImage) -> Result<Vec<u8>> {
    encode(DynamicImage::ImageRgb8(buf))
}

/// 8-bit gray rendering of `y`, min-max scaled.
pub fn to_gray8(y: &Image) -> GrayImage {
    let (rows, cols) = y.dims();
    let q = quantize(y, 255.0);
    ImageBuffer::from_fn(cols as u32, rows as u32, |x, z| Luma([q(z as usize, x as usize) as u8]))
}

fn encode(img: DynamicImage) -> Result<Vec<u8>> {
    let mut out = std::io::Cursor::new(Vec::new());
    img.write_to(&mut out, ::image::ImageFormat::Png)?;
    Ok(out.into_inner())
}

/// Min-max scaled 16-bit PNG.
pub fn save_png(y: &Image, path: &Path) -> Result<()> {
    write_atomic(path, &encode_png16(y)?)
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}

fn finish(w: csv::Writer<Vec<u8>>) -> String {
    let bytes = w.into_inner().expect("writing to memory cannot fail");
    String::from_utf8(bytes).expect("csv output is UTF-8")
}

/// One CSV row per image row, shortest round-trip float formatting.
pub fn matrix_to_csv(a: &Array2<f64>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in a.rows() {
        w.write_record(row.iter().map(|v| v.to_string())).expect("writing to memory cannot fail");
    }
    finish(w)
}

pub fn parse_csv_matrix(text: &str) -> Result<Array2<f64>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(text.as_bytes());
    let mut values = Vec::new();
    let mut shape = (0, 0);
    for record in reader.records() {
        let record = record.map_err(csv_err)?;
        let line = record.position().map_or(0, |p| p.line());
        for field in record.iter() {
            values.push(field.parse::<f64>().map_err(|e| Error::Format(format!("line {line}: '{field}': {e}")))?);
        }
        shape = (shape.0 + 1, record.len());
    }
    Array2::from_shape_vec(shape, values).map_err(|e| Error::Format(e.to_string()))
}

/// Loads a PNG or, for a `.csv` extension, a CSV matrix.
pub fn load_image(path: &Path) -> Result<Image> {
    let is_csv = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    if is_csv {
        Image::new(parse_csv_matrix(&fs::read_to_string(path)?)?)
    } else {
        load_png(path)
    }
}

pub const ATOM_CSV_HEADER: &str = "m,n,alpha";

#[derive(serde::Serialize, serde::Deserialize)]
struct AtomRow {
    m: usize,
    n: usize,
    alpha: f64,
}

pub fn atoms_to_csv(a: &AtomMap) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["m", "n", "alpha"]).expect("writing to memory cannot fail");
    for (s, alpha) in a.iter() {
        w.write_record([s.m.to_string(), s.n.to_string(), alpha.to_string()]).expect("writing to memory cannot fail");
    }
    finish(w)
}

/// Parses an `m,n,alpha` list into a `rows × cols` map.
pub fn parse_atoms_csv(text: &str, rows: usize, cols: usize) -> Result<AtomMap> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let header: Vec<String> = reader.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    if header != ["m", "n", "alpha"] {
        return Err(Error::Format(format!("expected header '{ATOM_CSV_HEADER}', found {header:?}")));
    }
    let mut entries = Vec::new();
    for row in reader.deserialize::<AtomRow>() {
        let row = row.map_err(csv_err)?;
        entries.push((Site::new(row.m, row.n), row.alpha));
    }
    AtomMap::from_entries(rows, cols, entries)
}
