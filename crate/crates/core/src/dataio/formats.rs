//! On-disk formats: CSV tables, `key=value` config files, the `SPFE` binary
//! embedding format and PNG rasters.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::scalar::Scalar;

pub const EMBEDDING_MAGIC: &[u8; 4] = b"SPFE";
pub const EMBEDDING_VERSION: u32 = 1;

/// 8-bit RGB raster, row-major, 3 bytes per pixel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, pixels: vec![0; width * height * 3] }
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let mut img = Self::new(width, height);
        for px in img.pixels.chunks_exact_mut(3) {
            px.copy_from_slice(&rgb);
        }
        img
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let o = (y * self.width + x) * 3;
        [self.pixels[o], self.pixels[o + 1], self.pixels[o + 2]]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let o = (y * self.width + x) * 3;
        self.pixels[o..o + 3].copy_from_slice(&rgb);
    }
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_text(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Header-led CSV table whose first column is a string key.
#[derive(Clone, Debug)]
pub struct CsvTable {
    pub header: Vec<String>,
    /// (1-based line number, fields)
    pub rows: Vec<(usize, Vec<String>)>,
    pub file: String,
}

impl CsvTable {
    pub fn read(path: &Path) -> Result<Self> {
        let text = read_text(path)?;
        let file = path.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default();
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let header = match lines.next() {
            Some((_, h)) => h.split(',').map(|s| s.trim().to_string()).collect::<Vec<_>>(),
            None => {
                return Err(Error::MalformedRow { file, line: 1, reason: "missing header".into() });
            }
        };
        let mut rows = Vec::new();
        for (i, line) in lines {
            let fields: Vec<String> = line.split(',').map(|s| s.trim().to_string()).collect();
            if fields.len() != header.len() {
                return Err(Error::MalformedRow {
                    file,
                    line: i + 1,
                    reason: format!("expected {} fields, found {}", header.len(), fields.len()),
                });
            }
            rows.push((i + 1, fields));
        }
        Ok(Self { header, rows, file })
    }

    pub fn parse_f64(&self, line: usize, field: &str) -> Result<f64> {
        field.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| Error::MalformedRow {
            file: self.file.clone(),
            line,
            reason: format!("not a finite number: {field:?}"),
        })
    }
}

/// Parses `key=value` lines; `#` starts a comment. Keys keep file order.
pub fn parse_key_values(text: &str, file: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::MalformedRow {
            file: file.to_string(),
            line: i + 1,
            reason: "expected key=value".into(),
        })?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

pub fn write_embeddings<T: Scalar>(path: &Path, m: &Matrix<T>) -> Result<()> {
    let mut buf = Vec::with_capacity(16 + m.as_slice().len() * 4);
    buf.extend_from_slice(EMBEDDING_MAGIC);
    buf.extend_from_slice(&EMBEDDING_VERSION.to_le_bytes());
    buf.extend_from_slice(&(m.rows() as u32).to_le_bytes());
    buf.extend_from_slice(&(m.cols() as u32).to_le_bytes());
    for &x in m.as_slice() {
        buf.extend_from_slice(&(x.as_f64() as f32).to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_embeddings(path: &Path) -> Result<Matrix<f32>> {
    if !path.exists() {
        return Err(Error::MissingEmbeddingFile(path.to_path_buf()));
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_embeddings(&bytes)
}

pub fn decode_embeddings(bytes: &[u8]) -> Result<Matrix<f32>> {
    let bad = |why: &str| Error::EmbeddingShapeMismatch(why.to_string());
    if bytes.len() < 16 || &bytes[..4] != EMBEDDING_MAGIC {
        return Err(bad("missing SPFE header"));
    }
    let word = |o: usize| u32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]);
    if word(4) != EMBEDDING_VERSION {
        return Err(bad("unsupported version"));
    }
    let (n, d) = (word(8) as usize, word(12) as usize);
    if bytes.len() != 16 + n * d * 4 {
        return Err(bad(&format!("payload length {} does not match {n}x{d}", bytes.len() - 16)));
    }
    let data = bytes[16..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(Matrix::from_vec(n, d, data))
}

pub fn read_png(path: &Path) -> Result<RgbImage> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let img = image::open(path).map_err(|e| Error::Image(e.to_string()))?.to_rgb8();
    Ok(RgbImage { width: img.width() as usize, height: img.height() as usize, pixels: img.into_raw() })
}

pub fn write_png(path: &Path, img: &RgbImage) -> Result<()> {
    let buf = image::RgbImage::from_raw(img.width as u32, img.height as u32, img.pixels.clone())
        .ok_or_else(|| Error::Image("pixel buffer does not match dimensions".into()))?;
    buf.save_with_format(path, image::ImageFormat::Png).map_err(|e| Error::Image(e.to_string()))
}

/// Writes `barcode,<col>` rows.
pub fn write_labels_csv(path: &Path, barcodes: &[String], labels: &[String]) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "barcode,label").expect("vec write");
    for (b, l) in barcodes.iter().zip(labels) {
        writeln!(out, "{b},{l}").expect("vec write");
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
