use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use footfix_core::contact::{CorpusReport, NamedReport};
use footfix_core::frdm::{restore_corpus, train, FrdmModel, Normalizer};
use footfix_core::io::{
    encode_checkpoint, encode_motion_file, load_checkpoint, load_json, load_mseq, load_skeleton, sha256_hex,
    to_json_string, Manifest, ManifestEntry, RunConfig,
};
use footfix_core::spectral::{band_energy, band_split};
use footfix_core::synth::{clean_corpus, corrupt};
use footfix_core::{Error, MotionSequence, Result, Skeleton};
use rayon::prelude::*;
use serde::Serialize;

use crate::{Cli, Command};

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn invalid(field: &str, reason: impl Into<String>) -> Error {
    Error::Config {
        field: field.into(),
        reason: reason.into(),
    }
}

/// Writes `bytes` and returns its manifest entry.
fn write_output(dir: &Path, name: &str, bytes: &[u8], seed: Option<u64>) -> Result<ManifestEntry> {
    let path = dir.join(name);
    fs::write(&path, bytes).map_err(io_err(&path))?;
    Ok(ManifestEntry {
        file: name.to_string(),
        sha256: sha256_hex(bytes),
        seed,
    })
}

/// `.mseq` files of a directory, sorted by name.
fn list_mseq(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        if path.extension().is_some_and(|e| e == "mseq") {
            files.push(path);
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(Error::EmptyInput(format!("no .mseq files in {}", dir.display())));
    }
    Ok(files)
}

/// Prints one line; a closed stdout (e.g. piped into `head`) is not an error.
fn emit(out: &mut impl Write, line: &str) -> Result<()> {
    match writeln!(out, "{line}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(io_err(Path::new("<stdout>"))(e)),
        _ => Ok(()),
    }
}

fn file_name(path: &Path) -> String {
    path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

fn load_all(files: &[PathBuf]) -> Result<Vec<MotionSequence>> {
    files.par_iter().map(load_mseq).collect()
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

struct Context {
    cfg: RunConfig,
    skeleton: Skeleton,
}

impl Context {
    fn manifest(&self, command: &str, inputs: &[PathBuf], outputs: Vec<ManifestEntry>) -> Manifest {
        Manifest {
            command: command.into(),
            config_hash: self.cfg.hash(),
            seed: self.cfg.seed,
            inputs: inputs.iter().map(|p| p.display().to_string()).collect(),
            outputs,
        }
    }

    fn save_manifest(&self, path: &Path, manifest: &Manifest) -> Result<()> {
        fs::write(path, to_json_string(manifest)).map_err(io_err(path))
    }
}

pub fn run(cli: Cli) -> Result<()> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(invalid("jobs", "must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| invalid("jobs", e.to_string()))?;
    }
    let mut cfg: RunConfig = match &cli.config {
        Some(path) => load_json(path)?,
        None => RunConfig::default(),
    };
    let seed = cli.seed.unwrap_or(cfg.seed);
    match &cli.command {
        Command::Synth { count, frames, .. } => {
            cfg.synth.count = count.unwrap_or(cfg.synth.count);
            cfg.synth.gait.len = frames.unwrap_or(cfg.synth.gait.len);
        }
        Command::Bands { bands: Some(b), .. } => cfg.spectral.bands = *b,
        _ => {}
    }
    let cfg = cfg.with_seed(seed);
    cfg.validate()?;
    let skeleton = match &cli.skeleton {
        Some(path) => load_skeleton(path)?,
        None => Skeleton::smpl(),
    };
    let cx = Context { cfg, skeleton };
    match cli.command {
        Command::Synth { out, .. } => synth(&cx, &out),
        Command::Corrupt { input, out } => corrupt_corpus(&cx, &input, &out),
        Command::Metrics { input, summary } => {
            let summary = summary.unwrap_or_else(|| input.join("metrics.json"));
            metrics(&cx, &input, &summary)
        }
        Command::Train { input, checkpoint, log } => {
            let log = log.unwrap_or_else(|| checkpoint.with_extension("loss.jsonl"));
            train_model(&cx, &input, &checkpoint, &log)
        }
        Command::Restore { input, checkpoint, out } => restore(&cx, &input, &checkpoint, &out),
        Command::Bands { input, out, .. } => bands(&cx, &input, out.as_deref()),
        Command::Config => {
            print!("{}", to_json_string(&cx.cfg));
            Ok(())
        }
    }
}

fn synth(cx: &Context, out: &Path) -> Result<()> {
    let cfg = &cx.cfg;
    let corpus = clean_corpus(cfg.synth.count, &cfg.synth.gait, cfg.seed, &cx.skeleton)?;
    create_dir(out)?;
    let outputs = corpus
        .iter()
        .enumerate()
        .map(|(i, m)| write_output(out, &format!("seq_{i:05}.mseq"), &encode_motion_file(m), None))
        .collect::<Result<Vec<_>>>()?;
    log::info!("wrote {} sequences to {}", outputs.len(), out.display());
    cx.save_manifest(&out.join("manifest.json"), &cx.manifest("synth", &[], outputs))
}

fn corrupt_corpus(cx: &Context, input: &Path, out: &Path) -> Result<()> {
    let files = list_mseq(input)?;
    create_dir(out)?;
    let cfg = &cx.cfg;
    let entries = files
        .par_iter()
        .enumerate()
        .map(|(i, path)| {
            let m = load_mseq(path)?;
            let mut spec = cfg.corrupt.clone();
            spec.seed = cfg.seed.wrapping_add(i as u64);
            let (bad, labels) = corrupt(&m, &spec, &cx.skeleton, &cfg.metrics.contact)?;
            let motion = write_output(out, &file_name(path), &encode_motion_file(&bad), Some(spec.seed))?;
            let sidecar = write_output(
                out,
                &format!("{}.labels.json", stem(path)),
                to_json_string(&labels).as_bytes(),
                Some(spec.seed),
            )?;
            Ok([motion, sidecar])
        })
        .collect::<Result<Vec<_>>>()?;
    let outputs = entries.into_iter().flatten().collect();
    cx.save_manifest(&out.join("manifest.json"), &cx.manifest("corrupt", &files, outputs))
}

#[derive(Serialize)]
struct MetricsSummary<'a> {
    config_hash: String,
    #[serde(flatten)]
    report: &'a CorpusReport,
}

fn metrics(cx: &Context, input: &Path, summary: &Path) -> Result<()> {
    let files = list_mseq(input)?;
    let corpus = load_all(&files)?;
    let names: Vec<String> = files.iter().map(|p| file_name(p)).collect();
    let items: Vec<(&str, &MotionSequence)> = names.iter().map(String::as_str).zip(&corpus).collect();
    let report = CorpusReport::evaluate(items, &cx.skeleton, &cx.cfg.metrics)?;
    let mut stdout = std::io::stdout().lock();
    let line = |r: &NamedReport| serde_json::to_string(r).expect("plain data serializes");
    for r in &report.sequences {
        emit(&mut stdout, &line(r))?;
    }
    let doc = MetricsSummary {
        config_hash: cx.cfg.hash(),
        report: &report,
    };
    fs::write(summary, to_json_string(&doc)).map_err(io_err(summary))
}

#[derive(Serialize)]
struct LossLine<'a> {
    step: usize,
    #[serde(flatten)]
    loss: &'a footfix_core::frdm::LossBreakdown,
    ema: f64,
}

fn train_model(cx: &Context, input: &Path, checkpoint: &Path, log_path: &Path) -> Result<()> {
    let cfg = &cx.cfg;
    let files = list_mseq(input)?;
    let corpus = load_all(&files)?;
    let normalizer = Normalizer::fit(corpus.iter().map(|m| m.frames().view()))?;
    let mut model = FrdmModel::new(cfg.schedule, cfg.denoiser, normalizer, cx.skeleton.knee_feet.clone(), cfg.seed)?;
    let log_file = fs::File::create(log_path).map_err(io_err(log_path))?;
    let mut log_out = BufWriter::new(log_file);
    let mut write_err = None;
    let steps = cfg.train.steps;
    let report = train(
        &mut model,
        &corpus,
        &cx.skeleton,
        &cfg.guidance,
        &cfg.metrics.contact,
        &cfg.train,
        |step, loss, ema| {
            let line = serde_json::to_string(&LossLine { step, loss, ema }).expect("plain data serializes");
            if let Err(e) = writeln!(log_out, "{line}") {
                write_err.get_or_insert(e);
            }
            if step % 100 == 0 || step + 1 == steps {
                log::info!("step {step}/{steps}: loss {:.5} (ema {ema:.5})", loss.total);
            }
        },
    )?;
    if let Some(e) = write_err {
        return Err(io_err(log_path)(e));
    }
    log_out.flush().map_err(io_err(log_path))?;
    log::info!("final loss (ema) {:.5}", report.final_ema());
    let bytes = encode_checkpoint(&model);
    fs::write(checkpoint, &bytes).map_err(io_err(checkpoint))?;
    let outputs = vec![ManifestEntry {
        file: file_name(checkpoint),
        sha256: sha256_hex(&bytes),
        seed: Some(cfg.seed),
    }];
    cx.save_manifest(&checkpoint.with_extension("manifest.json"), &cx.manifest("train", &files, outputs))
}

fn restore(cx: &Context, input: &Path, checkpoint: &Path, out: &Path) -> Result<()> {
    let cfg = &cx.cfg;
    let model = load_checkpoint(checkpoint)?;
    if model.knee_feet() != cx.skeleton.knee_feet.as_slice() {
        return Err(invalid(
            "skeleton.knee_feet",
            format!("{:?} differs from the checkpoint's {:?}", cx.skeleton.knee_feet, model.knee_feet()),
        ));
    }
    let files = list_mseq(input)?;
    let corpus = load_all(&files)?;
    let restored = restore_corpus(&model, &corpus, &cx.skeleton, &cfg.guidance, &cfg.metrics.contact, cfg.seed)?;
    create_dir(out)?;
    let outputs = files
        .iter()
        .zip(&restored)
        .enumerate()
        .map(|(i, (path, m))| {
            write_output(out, &file_name(path), &encode_motion_file(m), Some(cfg.seed.wrapping_add(i as u64)))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut inputs = files;
    inputs.push(checkpoint.to_path_buf());
    cx.save_manifest(&out.join("manifest.json"), &cx.manifest("restore", &inputs, outputs))
}

#[derive(Serialize)]
struct BandLine {
    band: usize,
    /// Half-spectrum rows `[start, end)`.
    bins: [usize; 2],
    energy: f64,
    fraction: f64,
}

fn bands(cx: &Context, input: &Path, out: Option<&Path>) -> Result<()> {
    let m = load_mseq(input)?;
    let spec = band_split(m.frames().view(), cx.cfg.spectral.bands)?;
    let fractions = band_energy(&spec)?;
    let mut stdout = std::io::stdout().lock();
    for (b, (energy, fraction)) in spec.energies().into_iter().zip(fractions).enumerate() {
        let line = BandLine {
            band: b,
            bins: [spec.bands[b].start, spec.bands[b].end],
            energy,
            fraction,
        };
        emit(&mut stdout, &serde_json::to_string(&line).expect("plain data serializes"))?;
    }
    let Some(out) = out else { return Ok(()) };
    create_dir(out)?;
    let outputs = (0..spec.num_bands())
        .map(|b| {
            let band = MotionSequence::new(spec.band_signal(b), m.fps())?;
            write_output(out, &format!("{}.band{b}.mseq", stem(input)), &encode_motion_file(&band), None)
        })
        .collect::<Result<Vec<_>>>()?;
    cx.save_manifest(&out.join("manifest.json"), &cx.manifest("bands", &[input.to_path_buf()], outputs))
}
