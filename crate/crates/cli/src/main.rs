//! `spf`: batch driver for preprocessing, training, clustering and scoring
//! spatial transcriptomics sections.
//!
//! Every key of the run configuration is also a flag (`--stage1.epochs 50`);
//! flags override values from `--config FILE`.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Arg, ArgAction, ArgMatches, Command};
use log::{info, warn};

use spf_core::dataio::formats::write_embeddings;
use spf_core::dataio::{generate_synthetic, load_dataset, preprocess, write_dataset, SynthSpec};
use spf_core::error::Category;
use spf_core::eval::keyvalue::{to_entries, with_overrides};
use spf_core::eval::pipeline::{
    assign, evaluate_labels, manifest_json, prepare, read_labels, read_spots, run_pipeline, train, write_assignment,
    write_metrics, write_spots, write_training_artifacts,
};
use spf_core::eval::RunConfig;
use spf_core::numerics::SeededRng;
use spf_core::{Error, Mat, Real, Result};

fn leak(s: String) -> &'static str {
    Box::leak(s.into_boxed_str())
}

/// One `--key VALUE` flag per entry, with the default shown in the help.
fn key_flags(entries: Vec<(String, String)>) -> Vec<Arg> {
    entries
        .into_iter()
        .map(|(k, v)| {
            let k = leak(k);
            Arg::new(k).long(k).value_name("VALUE").help(leak(format!("[default: {v}]"))).action(ArgAction::Set)
        })
        .collect()
}

fn config_command(name: &'static str, about: &'static str) -> Command {
    Command::new(name)
        .about(about)
        .arg(Arg::new("config").long("config").value_name("FILE").help("key=value configuration file"))
        .args(key_flags(RunConfig::default_entries()))
}

fn cli() -> Command {
    Command::new("spf")
        .about("Spatial domain segmentation from expression and histology")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .subcommand(config_command("run", "Full pipeline: preprocess, train, cluster, evaluate"))
        .subcommand(config_command("preprocess", "Filter, normalize, select genes and project"))
        .subcommand(config_command("train", "Preprocess and run the three training stages"))
        .subcommand(
            config_command("cluster", "Assign domains from a training run's embedding")
                .arg(Arg::new("run").long("run").value_name("DIR").required(true).help("output directory of `train`")),
        )
        .subcommand(
            Command::new("evaluate")
                .about("Score predicted labels against ground truth")
                .arg(Arg::new("pred").long("pred").value_name("FILE").required(true))
                .arg(Arg::new("truth").long("truth").value_name("FILE").required(true))
                .arg(Arg::new("out").long("out").value_name("FILE").help("write metrics JSON here")),
        )
        .subcommand(
            Command::new("synth")
                .about("Write a synthetic dataset with planted domains")
                .arg(Arg::new("out").long("out").value_name("DIR").required(true))
                .arg(Arg::new("seed").long("seed").value_name("U64").default_value("7"))
                .args(key_flags(to_entries(&SynthSpec::default()))),
        )
}

/// Values of the key flags that were given on the command line.
fn given_keys(m: &ArgMatches, entries: &[(String, String)]) -> Vec<(String, String)> {
    entries
        .iter()
        .filter_map(|(k, _)| m.get_one::<String>(k).map(|v| (k.clone(), v.clone())))
        .collect()
}

fn load_config(m: &ArgMatches) -> Result<RunConfig> {
    let base = match m.get_one::<String>("config") {
        Some(path) => RunConfig::read(Path::new(path))?,
        None => RunConfig::default(),
    };
    base.with_overrides(&given_keys(m, &RunConfig::default_entries()))
}

fn require_data(cfg: &RunConfig) -> Result<()> {
    if cfg.data.is_empty() {
        return Err(Error::Config("no dataset given (--data DIR)".into()));
    }
    Ok(())
}

fn out_dir(cfg: &RunConfig) -> Result<PathBuf> {
    let out = PathBuf::from(&cfg.out);
    std::fs::create_dir_all(&out).map_err(|e| Error::Io { path: out.clone(), source: e })?;
    Ok(out)
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })
}

fn cmd_run(m: &ArgMatches) -> Result<()> {
    let cfg = load_config(m)?;
    require_data(&cfg)?;
    let out = run_pipeline(&cfg)?;
    match out.metrics {
        Some(r) => println!("ari={:.6} ami={:.6} completeness={:.6}", r.ari, r.ami, r.completeness),
        None => println!("labeled {} spots (no ground truth)", out.labels.len()),
    }
    Ok(())
}

fn cmd_preprocess(m: &ArgMatches) -> Result<()> {
    let cfg = load_config(m)?;
    require_data(&cfg)?;
    let out = out_dir(&cfg)?;
    let raw = load_dataset::<Real>(Path::new(&cfg.data))?;
    let pre = preprocess(&raw.expression, &cfg.preprocess)?;
    let ds = raw.select_spots(&pre.kept_spots);
    write_embeddings(&out.join("preprocessed.bin"), &pre.values)?;
    write_file(&out.join("genes.txt"), &(pre.gene_index.join("\n") + "\n"))?;
    let manifest = serde_json::to_string_pretty(&pre.pipeline_manifest).expect("manifest serializes");
    write_file(&out.join("preprocess_manifest.json"), &(manifest + "\n"))?;
    write_spots(&out.join("spots.csv"), &ds)?;
    println!("{} spots x {} features", pre.values.rows(), pre.values.cols());
    Ok(())
}

fn cmd_train(m: &ArgMatches) -> Result<()> {
    let cfg = load_config(m)?;
    require_data(&cfg)?;
    let out = out_dir(&cfg)?;
    let root = SeededRng::new(cfg.seed);
    let prepared = prepare(&cfg)?;
    let manifest = serde_json::to_string_pretty(&manifest_json(&cfg, &prepared)).expect("manifest serializes");
    write_file(&out.join("run_manifest.json"), &(manifest + "\n"))?;
    write_file(&out.join("config.cfg"), &cfg.to_key_values())?;
    write_spots(&out.join("spots.csv"), &prepared.dataset)?;
    let trained = train(&prepared, &cfg, &root)?;
    write_training_artifacts(&out, &trained, &root)?;
    println!("trained on {} spots; artifacts in {}", prepared.dataset.n_spots(), out.display());
    Ok(())
}

fn cmd_cluster(m: &ArgMatches) -> Result<()> {
    let cfg = load_config(m)?;
    let run = PathBuf::from(m.get_one::<String>("run").expect("required"));
    let (barcodes, coords) = read_spots(&run.join("spots.csv"))?;
    let fused = run.join("embeddings_fused.bin");
    let source = if fused.exists() { fused } else { run.join("embeddings_gene.bin") };
    let h: Mat = spf_core::dataio::read_embeddings(&source)?.cast();
    if h.rows() != barcodes.len() {
        return Err(Error::EmbeddingShapeMismatch(format!("{} rows for {} spots", h.rows(), barcodes.len())));
    }
    let out = out_dir(&cfg)?;
    let assignment = assign(&h, &coords, &cfg, &SeededRng::new(cfg.seed))?;
    let ds = spf_core::dataio::Dataset {
        expression: spf_core::dataio::ExpressionMatrix::new(Mat::zeros(barcodes.len(), 0), Vec::new(), barcodes),
        coords,
        scale_factor: 1.0,
        labels: None,
        image: None,
        patch_embeddings: None,
    };
    write_assignment(&out, &ds, &assignment.labels)?;
    println!("clustered {} spots from {}", assignment.labels.len(), source.display());
    Ok(())
}

fn cmd_evaluate(m: &ArgMatches) -> Result<()> {
    let pred = read_labels(Path::new(m.get_one::<String>("pred").expect("required")))?;
    let truth = read_labels(Path::new(m.get_one::<String>("truth").expect("required")))?;
    let report = evaluate_labels(&pred, &truth)?;
    match m.get_one::<String>("out") {
        Some(path) => write_metrics(Path::new(path), &report)?,
        None => println!("{}", serde_json::to_string_pretty(&report).expect("metrics serialize")),
    }
    Ok(())
}

fn cmd_synth(m: &ArgMatches) -> Result<()> {
    let seed: u64 = m
        .get_one::<String>("seed")
        .expect("has default")
        .parse()
        .map_err(|_| Error::Config("seed must be a non-negative integer".into()))?;
    let spec = with_overrides(&SynthSpec::default(), &given_keys(m, &to_entries(&SynthSpec::default())))?;
    let ds = generate_synthetic::<Real>(&spec, &mut SeededRng::new(seed))?;
    let out = PathBuf::from(m.get_one::<String>("out").expect("required"));
    write_dataset(&out, &ds)?;
    println!("wrote {} spots x {} genes to {}", ds.n_spots(), ds.expression.n_genes(), out.display());
    Ok(())
}

fn thread_cap() -> Result<usize> {
    match std::env::var("SPF_THREADS") {
        Ok(v) => v
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::Config(format!("SPF_THREADS must be a positive integer, got '{v}'"))),
        Err(_) => Ok(1),
    }
}

fn exit_code(e: &Error) -> u8 {
    match e.category() {
        Category::Config => 2,
        Category::Data => 3,
        Category::Numerical => 4,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let matches = cli().get_matches();
    let result = thread_cap().and_then(|threads| {
        if threads > 1 {
            warn!("SPF_THREADS={threads}: computation is serial, extra threads are unused");
        }
        info!("worker threads: 1");
        match matches.subcommand() {
            Some(("run", m)) => cmd_run(m),
            Some(("preprocess", m)) => cmd_preprocess(m),
            Some(("train", m)) => cmd_train(m),
            Some(("cluster", m)) => cmd_cluster(m),
            Some(("evaluate", m)) => cmd_evaluate(m),
            Some(("synth", m)) => cmd_synth(m),
            _ => unreachable!("subcommand is required"),
        }
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // Display already includes the wrapped causes.
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
