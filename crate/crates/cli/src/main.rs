use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use salient3d::bow::{index_entry_histogram, match_keypoints, matches_to_csv, quantize, Codebook, HistogramIndex};
use salient3d::config::PipelineConfig;
use salient3d::descriptor::{descriptors_to_csv, read_descriptor_csv};
use salient3d::eval::rank;
use salient3d::keypoints::keypoints_to_csv;
use salient3d::mesh::read_mesh_file;
use salient3d::pipeline::{
    build_index, evaluate_manifest, features_from_grid, histograms, keypoints_for, scale_space_for, train_codebook,
};
use salient3d::synthetic::{generate_corpus, CorpusManifest, Family};
use salient3d::voxel::{read_voxg, voxelize_model, write_voxg, write_voxg_field, VoxelGrid};
use salient3d::{Error, Result};

#[derive(Parser)]
#[command(name = "salient3d", version, about = "Voxel-grid salient local features and bag-of-words shape retrieval")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Pipeline config (TOML); defaults apply to missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (affects speed only).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Overrides the codebook seed, or the corpus seed for gen-corpus.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Mesh (OFF/OBJ) to a VOXG occupancy grid.
    Voxelize {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Surface keypoints of a mesh or VOXG grid as CSV.
    Keypoints {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write every DoG level as a float VOXG file into this directory.
        #[arg(long)]
        dump_dog: Option<PathBuf>,
    },
    /// Descriptors of one model (`--input`, `--out` is a file) or of every
    /// manifest entry (`--manifest`, `--out` is a directory of <model_id>.csv).
    Describe {
        #[arg(long, conflicts_with = "manifest", required_unless_present = "manifest")]
        input: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// K-means codebook over the descriptors of a manifest.
    Codebook {
        #[arg(long)]
        manifest: PathBuf,
        /// Directory of precomputed <model_id>.csv descriptor files.
        #[arg(long)]
        descriptors: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Word histograms of every manifest entry as a JSON index.
    Index {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        codebook: PathBuf,
        #[arg(long)]
        descriptors: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Ranked list for one model against a saved index.
    Query {
        #[arg(long)]
        index: PathBuf,
        /// A model already in the index.
        #[arg(long, conflicts_with = "input", required_unless_present = "input")]
        model_id: Option<String>,
        /// A new mesh, quantized with `--codebook`.
        #[arg(long, requires = "codebook")]
        input: Option<PathBuf>,
        #[arg(long)]
        codebook: Option<PathBuf>,
        /// Number of results (all when omitted).
        #[arg(long)]
        top: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Leave-one-in retrieval evaluation of a labeled manifest.
    Evaluate {
        #[arg(long)]
        manifest: PathBuf,
        /// Report JSON; the summary and precision-recall CSVs are written next to it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Ratio-test keypoint correspondences between two models.
    Match {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        /// Overrides the config's ratio threshold.
        #[arg(long)]
        ratio: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Seeded synthetic corpus with a manifest.
    GenCorpus {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        per_class: usize,
        /// Comma-separated family names.
        #[arg(long, value_delimiter = ',', default_value = "ellipsoid,box-with-protrusions,torus,multi-limb-star")]
        families: Vec<String>,
    },
}

fn write_with_meta(path: &Path, contents: &[u8], cfg: &PipelineConfig, command: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, contents)?;
    let meta = serde_json::json!({
        "command": command,
        "config_digest": cfg.digest(),
        "config": cfg,
    });
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".meta.json");
    std::fs::write(path.with_file_name(name), serde_json::to_string_pretty(&meta)? + "\n")?;
    Ok(())
}

/// A VOXG file is read as-is; anything else is loaded as a mesh and voxelized.
fn load_grid(path: &Path, cfg: &PipelineConfig) -> Result<VoxelGrid> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("voxg")) {
        read_voxg(&std::fs::read(path)?)
    } else {
        voxelize_model(&read_mesh_file(path)?, cfg.resolution, cfg.padding)
    }
}

fn descriptor_vectors(path: &Path, cfg: &PipelineConfig) -> Result<Vec<Vec<f64>>> {
    Ok(features_from_grid(&load_grid(path, cfg)?, cfg)?.vectors())
}

fn manifest_vectors(manifest: &CorpusManifest, dir: Option<&Path>, cfg: &PipelineConfig) -> Result<Vec<Vec<Vec<f64>>>> {
    manifest
        .entries
        .par_iter()
        .map(|e| match dir {
            Some(d) => {
                let text = std::fs::read_to_string(d.join(format!("{}.csv", e.model_id)))?;
                Ok(read_descriptor_csv(&text)?.into_iter().map(|r| r.bins).collect())
            }
            None => descriptor_vectors(&e.path, cfg),
        })
        .collect()
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.global.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.global.seed {
        cfg.codebook.seed = seed;
    }
    log::info!("config digest {}", cfg.digest());

    match cli.command {
        Command::Voxelize { input, out } => {
            let grid = voxelize_model(&read_mesh_file(&input)?, cfg.resolution, cfg.padding)?;
            write_with_meta(&out, &write_voxg(&grid), &cfg, "voxelize")
        }
        Command::Keypoints { input, out, dump_dog } => {
            let grid = load_grid(&input, &cfg)?;
            let space = scale_space_for(&grid, &cfg)?;
            if let Some(dir) = dump_dog {
                std::fs::create_dir_all(&dir)?;
                for (i, d) in space.dog_levels.iter().enumerate() {
                    let bytes = write_voxg_field(d.field.dims, &d.field.values, grid.voxel_size, grid.origin);
                    std::fs::write(dir.join(format!("dog_{i}.voxg")), bytes)?;
                }
            }
            let kps = keypoints_for(&grid, &space, &cfg)?;
            write_with_meta(&out, keypoints_to_csv(&kps).as_bytes(), &cfg, "keypoints")
        }
        Command::Describe { input, manifest, out } => {
            if let Some(input) = input {
                let f = features_from_grid(&load_grid(&input, &cfg)?, &cfg)?;
                return write_with_meta(&out, descriptors_to_csv(&f.descriptors).as_bytes(), &cfg, "describe");
            }
            let manifest = CorpusManifest::read(manifest.as_deref().expect("clap enforces one input"))?;
            std::fs::create_dir_all(&out)?;
            manifest.entries.par_iter().try_for_each(|e| {
                let f = features_from_grid(&load_grid(&e.path, &cfg)?, &cfg)?;
                let path = out.join(format!("{}.csv", e.model_id));
                write_with_meta(&path, descriptors_to_csv(&f.descriptors).as_bytes(), &cfg, "describe")
            })
        }
        Command::Codebook { manifest, descriptors, out } => {
            let manifest = CorpusManifest::read(&manifest)?;
            let vectors = manifest_vectors(&manifest, descriptors.as_deref(), &cfg)?;
            let cb = train_codebook(&vectors, &cfg)?;
            write_with_meta(&out, cb.to_csv().as_bytes(), &cfg, "codebook")
        }
        Command::Index { manifest, codebook, descriptors, out } => {
            let manifest = CorpusManifest::read(&manifest)?;
            let cb = Codebook::from_csv(&std::fs::read_to_string(&codebook)?)?;
            let vectors = manifest_vectors(&manifest, descriptors.as_deref(), &cfg)?;
            let ids: Vec<String> = manifest.entries.iter().map(|e| e.model_id.clone()).collect();
            let hists = histograms(&ids, &vectors, &cb, &cfg)?;
            let index = build_index(&hists, &manifest.labels())?;
            write_with_meta(&out, (serde_json::to_string(&index)? + "\n").as_bytes(), &cfg, "index")
        }
        Command::Query { index, model_id, input, codebook, top, out } => {
            let index: HistogramIndex = serde_json::from_str(&std::fs::read_to_string(&index)?)?;
            let corpus: Vec<_> = index.iter().map(|(id, e)| index_entry_histogram(id, e)).collect();
            let query = match (model_id, input) {
                (Some(id), _) => {
                    let e = index.get(&id).ok_or_else(|| Error::MissingLabel(id.clone()))?;
                    index_entry_histogram(&id, e)
                }
                (None, Some(path)) => {
                    let cb = Codebook::from_csv(&std::fs::read_to_string(codebook.expect("clap enforces codebook"))?)?;
                    let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                    quantize(&descriptor_vectors(&path, &cfg)?, &cb, &id, cfg.normalization)?
                }
                (None, None) => unreachable!("clap enforces one query source"),
            };
            let ranked = rank(&query, &corpus)?;
            let mut text = String::from("rank,model_id,label,distance\n");
            for (i, (id, d)) in ranked.entries.iter().take(top.unwrap_or(usize::MAX)).enumerate() {
                let _ = writeln!(text, "{},{id},{},{d:.8e}", i + 1, index[id].label);
            }
            match out {
                Some(p) => write_with_meta(&p, text.as_bytes(), &cfg, "query"),
                None => {
                    print!("{text}");
                    Ok(())
                }
            }
        }
        Command::Evaluate { manifest, out } => {
            let manifest = CorpusManifest::read(&manifest)?;
            let run = evaluate_manifest(&manifest, &cfg)?;
            let r = &run.report;
            write_with_meta(&out, (serde_json::to_string_pretty(r)? + "\n").as_bytes(), &cfg, "evaluate")?;
            write_with_meta(&out.with_extension("summary.csv"), r.summary_csv().as_bytes(), &cfg, "evaluate")?;
            write_with_meta(&out.with_extension("pr.csv"), r.precision_recall_csv().as_bytes(), &cfg, "evaluate")?;
            println!("{}\n{}", salient3d::eval::EvalReport::SUMMARY_HEADER, r.summary_row());
            Ok(())
        }
        Command::Match { a, b, ratio, out } => {
            let ratio = ratio.unwrap_or(cfg.ratio);
            if !(ratio > 0.0 && ratio <= 1.0) {
                return Err(Error::InvalidParameter(format!("ratio must be in (0, 1], got {ratio}")));
            }
            let (da, db) = rayon::join(|| descriptor_vectors(&a, &cfg), || descriptor_vectors(&b, &cfg));
            let matches = match_keypoints(&da?, &db?, ratio)?;
            let csv = matches_to_csv(&matches);
            match out {
                Some(p) => write_with_meta(&p, csv.as_bytes(), &cfg, "match"),
                None => {
                    print!("{csv}");
                    Ok(())
                }
            }
        }
        Command::GenCorpus { out, per_class, families } => {
            let families = families.iter().map(|f| f.parse::<Family>()).collect::<Result<Vec<_>>>()?;
            let seed = cli.global.seed.unwrap_or(0);
            let m = generate_corpus(&families, per_class, seed, &out)?;
            eprintln!("wrote {} models to {}", m.entries.len(), out.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.global.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("ERROR:PARAM: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ERROR:{}: {}", e.code(), e.to_string().replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}

