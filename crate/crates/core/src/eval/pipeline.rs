//! End-to-end orchestration: preprocessing, the three training stages,
//! domain assignment, metrics and on-disk artifacts.

use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use serde_json::json;

use crate::clustering::dec::{train_stage2, Stage2Result};
use crate::clustering::refine::{find_anchors, gmm_cluster, one_hot, propagate_labels};
use crate::dataio::formats::{write_embeddings, write_labels_csv, write_png, CsvTable};
use crate::dataio::{load_dataset, preprocess, Checkpoint, Dataset, PreprocessedMatrix};
use crate::error::{Error, Result};
use crate::fusion::{train_stage3, GeneInput, Stage3Result};
use crate::gene_encoder::{train_stage1, Stage1Result};
use crate::image_features::{image_pipeline, ImageFeatures, PatchEncoder};
use crate::numerics::{ParamSet, SeededRng};
use crate::spatial_graph::{build_gaussian_kernel, build_knn_graph, SpatialGraph};
use crate::{Mat, Real};

use super::config::{EncoderChoice, RunConfig};
use super::metrics::MetricsReport;
use super::plot::scatter_svg;

/// RNG stream ids; each stage draws from its own child of the run seed.
const STREAM_STAGE1: u64 = 1;
const STREAM_STAGE2: u64 = 2;
const STREAM_IMAGE: u64 = 3;
const STREAM_STAGE3: u64 = 4;
const STREAM_ASSIGN: u64 = 5;

/// Dataset restricted to the spots that survive preprocessing, with its
/// model input and spatial structures.
pub struct Prepared {
    pub dataset: Dataset<Real>,
    pub input: PreprocessedMatrix<Real>,
    pub graph: SpatialGraph<Real>,
}

pub fn prepare(config: &RunConfig) -> Result<Prepared> {
    let raw = load_dataset::<Real>(Path::new(&config.data)).map_err(|e| e.in_stage("load"))?;
    let input = preprocess(&raw.expression, &config.preprocess).map_err(|e| e.in_stage("preprocess"))?;
    let dataset = raw.select_spots(&input.kept_spots);
    let graph = build_knn_graph(&dataset.coords, config.k).map_err(|e| e.in_stage("graph"))?;
    Ok(Prepared { dataset, input, graph })
}

pub struct Trained {
    pub stage1: Stage1Result<Real>,
    pub stage2: Stage2Result<Real>,
    pub image: Option<ImageFeatures<Real>>,
    pub stage3: Option<Stage3Result<Real>>,
}

impl Trained {
    /// Embedding handed to domain assignment.
    pub fn final_embedding(&self) -> &Mat {
        match &self.stage3 {
            Some(s3) => &s3.fused.h_fusion,
            None => &self.stage2.z,
        }
    }

    pub fn checkpoint(&self, rng: &SeededRng) -> Checkpoint<Real> {
        let encoder = self.stage3.as_ref().and_then(|s| s.encoder.as_ref()).unwrap_or(&self.stage2.encoder);
        let mut params = ParamSet::new();
        params.extend_prefixed("encoder/", &encoder.weights);
        params.extend_prefixed("running/", &encoder.running);
        params.push("centroids", self.stage2.state.centroids.clone());
        if let Some(s3) = &self.stage3 {
            params.extend_prefixed("fusion/", &s3.params.weights);
        }
        Checkpoint { params, rng: rng.state() }
    }
}

pub fn train(prepared: &Prepared, config: &RunConfig, root: &SeededRng) -> Result<Trained> {
    let x = &prepared.input.values;
    let graph = &prepared.graph;

    info!("stage 1: {} spots, {} input features", x.rows(), x.cols());
    let stage1 = train_stage1(x, graph, &config.stage1, &mut root.split(STREAM_STAGE1)).map_err(|e| e.in_stage("stage1"))?;

    info!("stage 2: {} clusters", config.clusters);
    let stage2 = train_stage2(
        &stage1.encoder,
        &stage1.gan,
        x,
        graph,
        config.clusters,
        &config.stage1,
        &config.stage2,
        &mut root.split(STREAM_STAGE2),
    )
    .map_err(|e| e.in_stage("stage2"))?;

    if !config.use_image {
        return Ok(Trained { stage1, stage2, image: None, stage3: None });
    }

    let ds = &prepared.dataset;
    let encoder = match config.encoder {
        EncoderChoice::Toy => PatchEncoder::Toy,
        EncoderChoice::Precomputed => PatchEncoder::Precomputed(ds.patch_embeddings.clone().ok_or_else(|| {
            Error::MissingEmbeddingFile(Path::new(&config.data).join("patch_embeddings.bin")).in_stage("image")
        })?),
    };
    info!("image features: {} encoder", encoder.id());
    let image = image_pipeline(
        ds.image.as_ref(),
        &ds.coords,
        ds.scale_factor,
        &encoder,
        &config.image,
        &mut root.split(STREAM_IMAGE),
    )
    .map_err(|e| e.in_stage("image"))?;

    info!("stage 3: fusion");
    let genes = if config.stage3.unfreeze_encoder {
        GeneInput::Trainable { encoder: &stage2.encoder, x, graph }
    } else {
        GeneInput::Frozen(&stage2.z)
    };
    let stage3 = train_stage3(genes, &image.embeddings.smoothed, &config.stage3, &mut root.split(STREAM_STAGE3))
        .map_err(|e| e.in_stage("stage3"))?;
    Ok(Trained { stage1, stage2, image: Some(image), stage3: Some(stage3) })
}

pub struct Assignment {
    /// Hard GMM labels before diffusion.
    pub initial: Vec<usize>,
    pub anchors: Vec<usize>,
    pub labels: Vec<usize>,
    pub iterations: usize,
}

/// GMM on the embedding, anchor selection and anchored diffusion over the
/// Gaussian spot kernel.
pub fn assign(h: &Mat, coords: &Mat, config: &RunConfig, root: &SeededRng) -> Result<Assignment> {
    let mut rng = root.split(STREAM_ASSIGN);
    let (initial, _) = gmm_cluster(h, config.clusters, &mut rng).map_err(|e| e.in_stage("gmm"))?;
    let kernel = build_gaussian_kernel(coords, config.k).map_err(|e| e.in_stage("diffusion"))?;
    let anchors = find_anchors(&initial, &kernel.w, config.refine.anchor_fraction).map_err(|e| e.in_stage("anchors"))?;
    let (labels, iterations) = propagate_labels(&one_hot(&initial, config.clusters), &kernel.w, &anchors, config.refine.max_iter, config.refine.tol)
        .map_err(|e| e.in_stage("diffusion"))?;
    Ok(Assignment { initial, anchors, labels, iterations })
}

pub struct RunOutput {
    pub barcodes: Vec<String>,
    pub labels: Vec<usize>,
    pub metrics: Option<MetricsReport>,
    pub out_dir: PathBuf,
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn label_strings(labels: &[usize]) -> Vec<String> {
    labels.iter().map(|l| l.to_string()).collect()
}

/// Deterministic JSON description of a run.
pub fn manifest_json(config: &RunConfig, prepared: &Prepared) -> serde_json::Value {
    let threads = std::env::var("SPF_THREADS").ok().and_then(|s| s.parse::<usize>().ok()).unwrap_or(1);
    json!({
        "config": config,
        "seed": config.seed,
        "versions": { "spf-core": env!("CARGO_PKG_VERSION"), "checkpoint": 1, "embeddings": 1 },
        "threads": threads,
        "n_spots": prepared.dataset.n_spots(),
        "input_features": prepared.input.values.cols(),
        "genes_retained": prepared.input.gene_index.len(),
        "preprocessing": prepared.input.pipeline_manifest,
    })
}

pub fn write_training_artifacts(out: &Path, trained: &Trained, rng: &SeededRng) -> Result<()> {
    trained.stage1.trace.write_csv(&out.join("losses_stage1.csv"))?;
    trained.stage2.trace.write_csv(&out.join("losses_stage2.csv"))?;
    write_embeddings(&out.join("embeddings_stage1.bin"), &trained.stage1.z)?;
    write_embeddings(&out.join("embeddings_gene.bin"), &trained.stage2.z)?;
    if let Some(image) = &trained.image {
        write_embeddings(&out.join("embeddings_image.bin"), &image.embeddings.raw)?;
        write_embeddings(&out.join("embeddings_smoothed.bin"), &image.embeddings.smoothed)?;
        if let Some(img) = &image.normalized_image {
            write_png(&out.join("normalized_image.png"), img)?;
        }
    }
    if let Some(s3) = &trained.stage3 {
        s3.trace.write_csv(&out.join("losses_stage3.csv"))?;
        write_embeddings(&out.join("embeddings_fused.bin"), &s3.fused.h_fusion)?;
    }
    trained.checkpoint(rng).write(&out.join("checkpoint.spfc"))
}

/// Writes `labels.csv`, the scatter plot and, with ground truth, `metrics.json`.
pub fn write_assignment(
    out: &Path,
    dataset: &Dataset<Real>,
    labels: &[usize],
) -> Result<Option<MetricsReport>> {
    write_labels_csv(&out.join("labels.csv"), dataset.barcodes(), &label_strings(labels))?;
    write_text(&out.join("domains.svg"), &scatter_svg(&dataset.coords, labels))?;
    let Some(truth) = &dataset.labels else {
        return Ok(None);
    };
    let report = MetricsReport::compute(labels, truth)?;
    write_metrics(&out.join("metrics.json"), &report)?;
    Ok(Some(report))
}

pub fn write_metrics(path: &Path, report: &MetricsReport) -> Result<()> {
    let text = serde_json::to_string_pretty(report).expect("metrics serialize");
    write_text(path, &(text + "\n"))
}

pub fn run_pipeline(config: &RunConfig) -> Result<RunOutput> {
    config.validate()?;
    let out = PathBuf::from(&config.out);
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let root = SeededRng::new(config.seed);

    let prepared = prepare(config)?;
    let manifest = manifest_json(config, &prepared);
    write_text(&out.join("run_manifest.json"), &(serde_json::to_string_pretty(&manifest).expect("json") + "\n"))?;
    write_text(&out.join("config.cfg"), &config.to_key_values())?;
    write_spots(&out.join("spots.csv"), &prepared.dataset)?;

    let trained = train(&prepared, config, &root)?;
    write_training_artifacts(&out, &trained, &root)?;

    let assignment = assign(trained.final_embedding(), &prepared.dataset.coords, config, &root)?;
    info!(
        "assigned {} spots with {} anchors, {} diffusion iterations",
        assignment.labels.len(),
        assignment.anchors.len(),
        assignment.iterations
    );
    let metrics = write_assignment(&out, &prepared.dataset, &assignment.labels)?;
    if let Some(m) = &metrics {
        info!("ARI {:.4}  AMI {:.4}  completeness {:.4}", m.ari, m.ami, m.completeness);
    }
    Ok(RunOutput {
        barcodes: prepared.dataset.barcodes().to_vec(),
        labels: assignment.labels,
        metrics,
        out_dir: out,
    })
}

/// Hard labels from `labels.csv`-style rows, mapped to dense ids.
pub fn dense_ids(labels: &[String]) -> Vec<usize> {
    let mut seen: Vec<&String> = Vec::new();
    labels
        .iter()
        .map(|l| match seen.iter().position(|s| *s == l) {
            Some(i) => i,
            None => {
                seen.push(l);
                seen.len() - 1
            }
        })
        .collect()
}

/// `barcode,x,y` for the spots a run kept, so later steps can be run alone.
pub fn write_spots(path: &Path, dataset: &Dataset<Real>) -> Result<()> {
    let mut text = String::from("barcode,x,y\n");
    for (i, b) in dataset.barcodes().iter().enumerate() {
        text.push_str(&format!("{b},{},{}\n", dataset.coords[(i, 0)], dataset.coords[(i, 1)]));
    }
    write_text(path, &text)
}

pub fn read_spots(path: &Path) -> Result<(Vec<String>, Mat)> {
    let table = CsvTable::read(path)?;
    let mut barcodes = Vec::with_capacity(table.rows.len());
    let mut coords = Mat::zeros(table.rows.len(), 2);
    for (i, (line, f)) in table.rows.iter().enumerate() {
        if f.len() < 3 {
            return Err(Error::MalformedRow { file: table.file.clone(), line: *line, reason: "expected barcode,x,y".into() });
        }
        barcodes.push(f[0].clone());
        coords[(i, 0)] = table.parse_f64(*line, &f[1])?;
        coords[(i, 1)] = table.parse_f64(*line, &f[2])?;
    }
    Ok((barcodes, coords))
}

/// `(barcode, label)` pairs from a two-column labels file.
pub fn read_labels(path: &Path) -> Result<Vec<(String, String)>> {
    let table = CsvTable::read(path)?;
    if table.header.len() != 2 {
        return Err(Error::MalformedRow { file: table.file, line: 1, reason: "expected barcode,label".into() });
    }
    Ok(table.rows.into_iter().map(|(_, mut f)| (f.remove(0), f.remove(0))).collect())
}

/// Scores predicted labels against ground truth, joined by barcode. Every
/// predicted barcode must have a true label.
pub fn evaluate_labels(pred: &[(String, String)], truth: &[(String, String)]) -> Result<MetricsReport> {
    let lookup: std::collections::HashMap<&str, &str> = truth.iter().map(|(b, l)| (b.as_str(), l.as_str())).collect();
    let mut p = Vec::with_capacity(pred.len());
    let mut t = Vec::with_capacity(pred.len());
    for (b, l) in pred {
        let truth_label = lookup.get(b.as_str()).ok_or_else(|| Error::BarcodeMismatch(format!("{b} has no true label")))?;
        p.push(l.as_str());
        t.push(*truth_label);
    }
    MetricsReport::compute(&p, &t)
}
