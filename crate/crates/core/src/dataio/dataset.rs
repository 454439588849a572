//! In-memory dataset and its directory layout.

use std::collections::HashMap;
use std::path::Path;

use crate::dataio::formats::{
    parse_key_values, read_embeddings, read_png, read_text, write_embeddings, write_labels_csv,
    write_png, write_text, CsvTable, RgbImage,
};
use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::scalar::Scalar;

/// Spot-by-gene matrix with row (barcode) and column (gene) names.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpressionMatrix<T> {
    pub values: Matrix<T>,
    pub genes: Vec<String>,
    pub barcodes: Vec<String>,
}

impl<T: Scalar> ExpressionMatrix<T> {
    pub fn new(values: Matrix<T>, genes: Vec<String>, barcodes: Vec<String>) -> Self {
        assert_eq!(values.cols(), genes.len());
        assert_eq!(values.rows(), barcodes.len());
        Self { values, genes, barcodes }
    }

    pub fn n_spots(&self) -> usize {
        self.values.rows()
    }

    pub fn n_genes(&self) -> usize {
        self.values.cols()
    }

    pub fn select_genes(&self, idx: &[usize]) -> Self {
        Self {
            values: self.values.select_cols(idx),
            genes: idx.iter().map(|&j| self.genes[j].clone()).collect(),
            barcodes: self.barcodes.clone(),
        }
    }

    pub fn select_spots(&self, idx: &[usize]) -> Self {
        Self {
            values: self.values.select_rows(idx),
            genes: self.genes.clone(),
            barcodes: idx.iter().map(|&i| self.barcodes[i].clone()).collect(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Dataset<T> {
    /// Raw counts.
    pub expression: ExpressionMatrix<T>,
    /// `N×2` pixel-space spot positions.
    pub coords: Matrix<T>,
    /// Full-resolution to raster scale factor.
    pub scale_factor: f64,
    pub labels: Option<Vec<String>>,
    pub image: Option<RgbImage>,
    pub patch_embeddings: Option<Matrix<f32>>,
}

impl<T: Scalar> Dataset<T> {
    pub fn n_spots(&self) -> usize {
        self.expression.n_spots()
    }

    pub fn barcodes(&self) -> &[String] {
        &self.expression.barcodes
    }

    /// Keeps only the listed spots, in the given order.
    pub fn select_spots(&self, idx: &[usize]) -> Self {
        Self {
            expression: self.expression.select_spots(idx),
            coords: self.coords.select_rows(idx),
            scale_factor: self.scale_factor,
            labels: self.labels.as_ref().map(|l| idx.iter().map(|&i| l[i].clone()).collect()),
            image: self.image.clone(),
            patch_embeddings: self.patch_embeddings.as_ref().map(|m| m.select_rows(idx)),
        }
    }
}

fn keyed_rows(table: &CsvTable) -> HashMap<&str, (usize, &[String])> {
    table.rows.iter().map(|(line, f)| (f[0].as_str(), (*line, &f[1..]))).collect()
}

/// Reads a dataset directory. `expression.csv` fixes the spot order; the other
/// tables are joined to it by barcode.
pub fn load_dataset<T: Scalar>(dir: &Path) -> Result<Dataset<T>> {
    let expr = CsvTable::read(&dir.join("expression.csv"))?;
    let genes: Vec<String> = expr.header[1..].to_vec();
    let mut barcodes = Vec::with_capacity(expr.rows.len());
    let mut values = Vec::with_capacity(expr.rows.len() * genes.len());
    for (line, fields) in &expr.rows {
        barcodes.push(fields[0].clone());
        for f in &fields[1..] {
            let v = expr.parse_f64(*line, f)?;
            if v < 0.0 {
                return Err(Error::MalformedRow {
                    file: expr.file.clone(),
                    line: *line,
                    reason: format!("negative count {v}"),
                });
            }
            values.push(T::lit(v));
        }
    }
    let n = barcodes.len();
    let expression = ExpressionMatrix::new(Matrix::from_vec(n, genes.len(), values), genes, barcodes.clone());

    let coords_t = CsvTable::read(&dir.join("coords.csv"))?;
    if coords_t.header.len() != 3 {
        return Err(Error::MalformedRow {
            file: coords_t.file.clone(),
            line: 1,
            reason: "expected header barcode,x,y".into(),
        });
    }
    let by_bc = keyed_rows(&coords_t);
    let mut coords = Matrix::zeros(n, 2);
    for (i, bc) in barcodes.iter().enumerate() {
        let (line, f) = by_bc
            .get(bc.as_str())
            .ok_or_else(|| Error::BarcodeMismatch(format!("barcode {bc} missing from coords.csv")))?;
        coords[(i, 0)] = T::lit(coords_t.parse_f64(*line, &f[0])?);
        coords[(i, 1)] = T::lit(coords_t.parse_f64(*line, &f[1])?);
    }

    let labels_path = dir.join("labels.csv");
    let labels = if labels_path.exists() {
        let t = CsvTable::read(&labels_path)?;
        let by_bc = keyed_rows(&t);
        let mut out = Vec::with_capacity(n);
        for bc in &barcodes {
            let (_, f) = by_bc
                .get(bc.as_str())
                .ok_or_else(|| Error::BarcodeMismatch(format!("barcode {bc} missing from labels.csv")))?;
            out.push(f[0].clone());
        }
        Some(out)
    } else {
        None
    };

    let meta_path = dir.join("meta.cfg");
    let mut scale_factor = 1.0;
    if meta_path.exists() {
        for (k, v) in parse_key_values(&read_text(&meta_path)?, "meta.cfg")? {
            if k == "scale_factor" {
                scale_factor = v.parse::<f64>().map_err(|_| Error::MalformedRow {
                    file: "meta.cfg".into(),
                    line: 0,
                    reason: format!("bad scale_factor {v:?}"),
                })?;
            }
        }
    }
    if !(scale_factor > 0.0 && scale_factor.is_finite()) {
        return Err(Error::InvalidArgument(format!("scale_factor must be positive, got {scale_factor}")));
    }

    let image_path = dir.join("image.png");
    let image = if image_path.exists() { Some(read_png(&image_path)?) } else { None };

    let emb_path = dir.join("patch_embeddings.bin");
    let patch_embeddings = if emb_path.exists() {
        let m = read_embeddings(&emb_path)?;
        if m.rows() != n {
            return Err(Error::EmbeddingShapeMismatch(format!(
                "patch_embeddings.bin has {} rows, expression.csv has {n}",
                m.rows()
            )));
        }
        Some(m)
    } else {
        None
    };

    Ok(Dataset { expression, coords, scale_factor, labels, image, patch_embeddings })
}

fn fmt_num(x: f64) -> String {
    if x.fract() == 0.0 && x.abs() < 1e15 {
        format!("{}", x as i64)
    } else {
        format!("{x}")
    }
}

/// Writes a dataset in the layout [`load_dataset`] reads.
pub fn write_dataset<T: Scalar>(dir: &Path, ds: &Dataset<T>) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut s = String::from("barcode");
    for g in &ds.expression.genes {
        s.push(',');
        s.push_str(g);
    }
    s.push('\n');
    for (i, bc) in ds.barcodes().iter().enumerate() {
        s.push_str(bc);
        for &v in ds.expression.values.row(i) {
            s.push(',');
            s.push_str(&fmt_num(v.as_f64()));
        }
        s.push('\n');
    }
    write_text(&dir.join("expression.csv"), &s)?;

    let mut c = String::from("barcode,x,y\n");
    for (i, bc) in ds.barcodes().iter().enumerate() {
        c.push_str(&format!("{bc},{},{}\n", fmt_num(ds.coords[(i, 0)].as_f64()), fmt_num(ds.coords[(i, 1)].as_f64())));
    }
    write_text(&dir.join("coords.csv"), &c)?;

    if let Some(labels) = &ds.labels {
        write_labels_csv(&dir.join("labels.csv"), ds.barcodes(), labels)?;
    }
    write_text(&dir.join("meta.cfg"), &format!("scale_factor={}\n", ds.scale_factor))?;
    if let Some(img) = &ds.image {
        write_png(&dir.join("image.png"), img)?;
    }
    if let Some(emb) = &ds.patch_embeddings {
        write_embeddings(&dir.join("patch_embeddings.bin"), emb)?;
    }
    Ok(())
}
