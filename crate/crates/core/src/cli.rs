//! Command-line front end. Exit codes: 0 success, 1 usage, 2 data, 3 numeric.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::archive::{read_archive, read_archive_index, write_archive, ARCHIVE_MAGIC};
use crate::checkpoint::{latest_checkpoint, Checkpoint, CHECKPOINT_MAGIC};
use crate::config::RunConfig;
use crate::dataset::{
    build_split, generate_synthetic, ArchiveSource, DatasetManifest, SyntheticSpec,
};
use crate::error::{FateError, Result};
use crate::experiment::{
    evaluate, run_sweep, score_dataset, ExperimentData, SweepSpec, SyntheticBenchmark,
};
use crate::metrics::{ScoredEntry, ScoredSet};
use crate::model::{Label, LabeledExample};
use crate::train::{resume, train};

#[derive(Debug, Parser)]
#[command(
    name = "fate",
    version,
    about = "Few-shot anomaly scoring over token embeddings"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train on a dataset manifest; writes one checkpoint per epoch.
    Train(TrainArgs),
    /// Score documents with a checkpoint; writes doc_id/score/label TSV, highest score first.
    Score(ScoreArgs),
    /// AUROC and AUPRC from a score file or a checkpoint plus manifest.
    Eval(EvalArgs),
    /// Run a parameter sweep described by a TOML file.
    Sweep(SweepArgs),
    /// Generate Gaussian embedding archives.
    MakeSynthetic(SyntheticArgs),
    /// Build a few-shot training manifest from inlier and outlier archives.
    Split(SplitArgs),
    /// Print the header of an archive or checkpoint.
    Inspect(InspectArgs),
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Run configuration (TOML); defaults apply to omitted fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for checkpoints and the resolved config.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Continue from the latest checkpoint in the output directory.
    #[arg(long)]
    resume: bool,
}

#[derive(Debug, Args)]
struct ScoreArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Score every document of one archive.
    #[arg(long, conflicts_with = "manifest")]
    archive: Option<PathBuf>,
    /// Label written for every document of `--archive` (0 or 1).
    #[arg(long, requires = "archive")]
    label: Option<u8>,
    /// Score the documents of a manifest with their labels.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Output TSV; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Score TSV as written by `score`.
    #[arg(long, conflicts_with_all = ["checkpoint", "manifest"])]
    scores: Option<PathBuf>,
    #[arg(long, requires = "manifest")]
    checkpoint: Option<PathBuf>,
    #[arg(long, requires = "checkpoint")]
    manifest: Option<PathBuf>,
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SyntheticArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 32)]
    dim: usize,
    #[arg(long, default_value_t = 500)]
    inliers: usize,
    #[arg(long, default_value_t = 50)]
    outliers: usize,
    /// Additional held-out inliers written to test_inliers.emb.
    #[arg(long, default_value_t = 0)]
    test_inliers: usize,
    /// Additional held-out outliers written to test_outliers.emb.
    #[arg(long, default_value_t = 0)]
    test_outliers: usize,
    #[arg(long, default_value_t = 5)]
    min_tokens: usize,
    #[arg(long, default_value_t = 20)]
    max_tokens: usize,
    #[arg(long, default_value_t = 5.0)]
    shift: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct SplitArgs {
    #[arg(long)]
    inliers: PathBuf,
    /// Class label of the inliers; defaults to the archive file stem.
    #[arg(long)]
    inlier_class: Option<String>,
    /// Outlier archive per class, `PATH` or `PATH=LABEL`.
    #[arg(long, required = true, num_args = 1..)]
    outliers: Vec<String>,
    /// Labeled outliers to sample; all of them when omitted.
    #[arg(long)]
    outlier_count: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "unspecified")]
    source: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct InspectArgs {
    path: PathBuf,
    /// Also list every document id and token count of an archive.
    #[arg(long)]
    docs: bool,
}

/// Where sweep data comes from: an inline synthetic benchmark or manifests.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepData {
    pub synthetic: Option<SyntheticBenchmark>,
    pub train_manifest: Option<PathBuf>,
    pub test_manifest: Option<PathBuf>,
    /// Unlabeled true anomalies used for contamination cells.
    pub contamination_archive: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepFile {
    pub sweep: SweepSpec,
    pub data: SweepData,
}

impl SweepData {
    pub fn load(&self, base: &Path) -> Result<ExperimentData> {
        let full = |p: &Path| {
            if p.is_absolute() {
                p.to_owned()
            } else {
                base.join(p)
            }
        };
        match (&self.synthetic, &self.train_manifest, &self.test_manifest) {
            (Some(bench), None, None) => bench.generate(),
            (None, Some(train), Some(test)) => {
                let (_, train) = DatasetManifest::load_resolved(&full(train))?;
                let (_, test) = DatasetManifest::load_resolved(&full(test))?;
                let pool = match &self.contamination_archive {
                    Some(p) => read_archive(&full(p))?,
                    None => Vec::new(),
                };
                Ok(ExperimentData {
                    train: train.training_set()?,
                    contamination_pool: pool,
                    test: test.labeled(),
                })
            }
            _ => Err(FateError::config(
                "data",
                "give either [data.synthetic] or both train_manifest and test_manifest",
            )),
        }
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| FateError::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| FateError::io(path, e))
}

fn manifest_dir(path: &Path) -> &Path {
    path.parent().unwrap_or(Path::new("."))
}

fn cmd_train(args: TrainArgs, out: &mut dyn Write) -> Result<()> {
    let (manifest, data) = DatasetManifest::load_resolved(&args.manifest)?;
    let data = data.training_set()?;
    create_dir(&args.out)?;
    let checkpoint = if args.resume {
        let latest = latest_checkpoint(&args.out)?.ok_or_else(|| {
            FateError::Data(format!("no checkpoint to resume in {}", args.out.display()))
        })?;
        let ck = Checkpoint::load(&latest)?;
        let epochs = args.epochs.unwrap_or(ck.config.epochs);
        let mut resolved = ck.config.clone();
        resolved.epochs = epochs;
        resolved.save(&args.out.join("config.toml"))?;
        resume(&data, ck, epochs, Some(&args.out))?
    } else {
        let mut cfg = match &args.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(e) = args.epochs {
            cfg.epochs = e;
        }
        if let Some(s) = args.seed {
            cfg.seed = s;
        }
        cfg.validate()?;
        cfg.save(&args.out.join("config.toml"))?;
        train(&data, &cfg, Some(&args.out))?
    };
    let last = checkpoint.loss_history.last().map(|(_, l)| *l);
    writeln!(
        out,
        "trained epochs={} inliers={} outliers={} data_hash={} final_loss={}",
        checkpoint.epoch,
        data.inliers.len(),
        data.outliers.len(),
        manifest.doc_id_hash(),
        last.map(|l| l.to_string()).unwrap_or_else(|| "-".into())
    )
    .ok();
    Ok(())
}

fn label_text(label: Option<Label>) -> String {
    label
        .map(|l| u8::from(l).to_string())
        .unwrap_or_else(|| "NA".into())
}

fn cmd_score(args: ScoreArgs, out: &mut dyn Write) -> Result<()> {
    let checkpoint = Checkpoint::load(&args.checkpoint)?;
    let (docs, known): (Vec<LabeledExample>, bool) = match (&args.archive, &args.manifest) {
        (Some(archive), None) => {
            let label = args
                .label
                .map(Label::try_from)
                .transpose()
                .map_err(|e| FateError::config("label", e))?;
            let docs = read_archive(archive)?
                .into_iter()
                .map(|d| LabeledExample::new(d, label.unwrap_or(Label::Inlier)))
                .collect();
            (docs, label.is_some())
        }
        (None, Some(m)) => (DatasetManifest::load_resolved(m)?.1.labeled(), true),
        _ => {
            return Err(FateError::Precondition(
                "give --archive or --manifest".into(),
            ))
        }
    };
    let scored = score_dataset(&docs, &checkpoint)?;
    let mut text = String::from("doc_id\tscore\tlabel\n");
    for e in scored.ranked() {
        let label = known.then_some(e.label);
        text.push_str(&format!(
            "{}\t{}\t{}\n",
            e.doc_id,
            e.score,
            label_text(label)
        ));
    }
    match &args.out {
        Some(path) => write_text(path, &text)?,
        None => out
            .write_all(text.as_bytes())
            .map_err(|e| FateError::io("<stdout>", e))?,
    }
    Ok(())
}

/// Parses a score TSV (`doc_id`, `score`, `label`); a leading header line is skipped.
pub fn parse_scores(text: &str, path: &Path) -> Result<ScoredSet> {
    let mut entries = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() || (n == 0 && line.starts_with("doc_id")) {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(FateError::format(
                path,
                format!("line {}: expected 3 tab-separated fields", n + 1),
            ));
        }
        let score: f64 = fields[1].parse().map_err(|_| {
            FateError::format(path, format!("line {}: bad score `{}`", n + 1, fields[1]))
        })?;
        let label = match fields[2] {
            "0" => Label::Inlier,
            "1" => Label::Outlier,
            other => {
                return Err(FateError::format(
                    path,
                    format!("line {}: label must be 0 or 1, got `{other}`", n + 1),
                ))
            }
        };
        entries.push(ScoredEntry {
            doc_id: fields[0].to_owned(),
            score,
            label,
        });
    }
    Ok(ScoredSet::new(entries))
}

fn cmd_eval(args: EvalArgs, out: &mut dyn Write) -> Result<()> {
    let scored = match (&args.scores, &args.checkpoint, &args.manifest) {
        (Some(path), None, None) => {
            let text = std::fs::read_to_string(path).map_err(|e| FateError::io(path, e))?;
            parse_scores(&text, path)?
        }
        (None, Some(ck), Some(m)) => {
            let checkpoint = Checkpoint::load(ck)?;
            score_dataset(&DatasetManifest::load_resolved(m)?.1.labeled(), &checkpoint)?
        }
        _ => {
            return Err(FateError::Precondition(
                "give --scores, or --checkpoint with --manifest".into(),
            ))
        }
    };
    let e = evaluate(&scored)?;
    let text = if args.json {
        serde_json::to_string(&e).expect("evaluation serialises") + "\n"
    } else {
        format!("auroc={:?}\nauprc={:?}\n", e.auroc, e.auprc)
    };
    out.write_all(text.as_bytes())
        .map_err(|e| FateError::io("<stdout>", e))
}

fn cmd_sweep(args: SweepArgs, out: &mut dyn Write) -> Result<()> {
    let text = std::fs::read_to_string(&args.spec).map_err(|e| FateError::io(&args.spec, e))?;
    let file: SweepFile = toml::from_str(&text)
        .map_err(|e| FateError::config("sweep spec", e.message().to_owned()))?;
    let data = file.data.load(manifest_dir(&args.spec))?;
    let report = run_sweep(&file.sweep, &data)?;
    create_dir(&args.out)?;
    write_text(
        &args.out.join("sweep.toml"),
        &toml::to_string(&file).expect("sweep file serialises"),
    )?;
    write_text(&args.out.join("report.json"), &report.to_json())?;
    write_text(&args.out.join("report.tsv"), &report.to_tsv())?;
    write_text(
        &args.out.join(format!("series-{}.csv", report.axis)),
        &report.series_csv(),
    )?;
    out.write_all(report.series_csv().as_bytes())
        .map_err(|e| FateError::io("<stdout>", e))
}

fn cmd_make_synthetic(args: SyntheticArgs, out: &mut dyn Write) -> Result<()> {
    let spec = SyntheticSpec {
        dim: args.dim,
        inlier_count: args.inliers + args.test_inliers,
        outlier_count: args.outliers + args.test_outliers,
        min_tokens: args.min_tokens,
        max_tokens: args.max_tokens,
        shift: args.shift,
        seed: args.seed,
    };
    let (mut inliers, mut outliers) = generate_synthetic(&spec)?;
    let test_in = inliers.split_off(args.inliers);
    let test_out = outliers.split_off(args.outliers);
    create_dir(&args.out)?;
    let mut written = Vec::new();
    for (name, docs) in [
        ("inliers.emb", inliers),
        ("outliers.emb", outliers),
        ("test_inliers.emb", test_in),
        ("test_outliers.emb", test_out),
    ] {
        if docs.is_empty() {
            continue;
        }
        write_archive(&args.out.join(name), &docs)?;
        written.push(format!("{name}:{}", docs.len()));
    }
    write_text(
        &args.out.join("synthetic.toml"),
        &toml::to_string(&spec).expect("spec serialises"),
    )?;
    writeln!(out, "wrote {}", written.join(" ")).ok();
    Ok(())
}

fn cmd_split(args: SplitArgs, out: &mut dyn Write) -> Result<()> {
    let inlier = match args.inlier_class {
        Some(c) => ArchiveSource::new(&args.inliers, c),
        None => ArchiveSource::from_path(&args.inliers),
    };
    let outliers: Vec<ArchiveSource> = args
        .outliers
        .iter()
        .map(|spec| match spec.split_once('=') {
            Some((p, label)) => ArchiveSource::new(p, label),
            None => ArchiveSource::from_path(spec),
        })
        .collect();
    let mut manifest = build_split(
        &inlier,
        &outliers,
        args.outlier_count,
        args.seed,
        &args.source,
    )?;
    // Store archive paths relative to the manifest where possible.
    let base = manifest_dir(&args.out);
    let base = std::path::absolute(base).map_err(|e| FateError::io(base, e))?;
    let relative = |p: &Path| -> PathBuf {
        std::path::absolute(p)
            .ok()
            .and_then(|abs| abs.strip_prefix(&base).ok().map(Path::to_path_buf))
            .unwrap_or_else(|| p.to_owned())
    };
    manifest.inliers.path = relative(&manifest.inliers.path);
    for o in &mut manifest.outliers {
        o.path = relative(&o.path);
    }
    manifest.save(&args.out)?;
    writeln!(
        out,
        "manifest inliers={} outliers={} hash={}",
        manifest.inliers.doc_ids.len(),
        manifest
            .outliers
            .iter()
            .map(|o| o.doc_ids.len())
            .sum::<usize>(),
        manifest.doc_id_hash()
    )
    .ok();
    Ok(())
}

fn cmd_inspect(args: InspectArgs, out: &mut dyn Write) -> Result<()> {
    let mut magic = [0u8; 8];
    {
        use std::io::Read;
        let mut f = std::fs::File::open(&args.path).map_err(|e| FateError::io(&args.path, e))?;
        f.read_exact(&mut magic)
            .map_err(|_| FateError::format(&args.path, "file too short to identify"))?;
    }
    let mut text = String::new();
    if &magic == ARCHIVE_MAGIC {
        let (h, index) = read_archive_index(&args.path)?;
        let tokens: usize = index.iter().map(|e| e.tokens).sum();
        text.push_str(&format!(
            "kind=embedding_archive\nversion={}\nd={}\ndocuments={}\nfloat_width={}\ntotal_tokens={}\n",
            h.version, h.dim, h.doc_count, h.float_width, tokens
        ));
        if args.docs {
            for e in index {
                text.push_str(&format!("{}\t{}\t{}\n", e.doc_id, e.tokens, e.offset));
            }
        }
    } else if &magic == CHECKPOINT_MAGIC {
        let h = Checkpoint::read_header_from(&args.path)?;
        let ck = Checkpoint::load(&args.path)?;
        text.push_str(&format!(
            "kind=checkpoint\nversion={}\nd={}\nr_a={}\nm={}\nepoch={}\nadam_step={}\nloss_variant={}\narchitecture_variant={}\n",
            h.version,
            h.dim,
            h.width,
            h.heads,
            ck.epoch,
            ck.adam.step,
            h.config.loss_variant.name(),
            h.config.architecture_variant.name()
        ));
        for (e, l) in &ck.loss_history {
            text.push_str(&format!("loss[{e}]={l}\n"));
        }
    } else {
        return Err(FateError::format(&args.path, "unrecognised file type"));
    }
    out.write_all(text.as_bytes())
        .map_err(|e| FateError::io("<stdout>", e))
}

/// Parses `argv` (including the program name) and runs the command. Returns
/// the process exit code.
pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let rendered = e.render().to_string();
            if code == 0 {
                let _ = out.write_all(rendered.as_bytes());
            } else {
                let _ = err.write_all(rendered.as_bytes());
            }
            return code;
        }
    };
    let result = match cli.command {
        Command::Train(a) => cmd_train(a, out),
        Command::Score(a) => cmd_score(a, out),
        Command::Eval(a) => cmd_eval(a, out),
        Command::Sweep(a) => cmd_sweep(a, out),
        Command::MakeSynthetic(a) => cmd_make_synthetic(a, out),
        Command::Split(a) => cmd_split(a, out),
        Command::Inspect(a) => cmd_inspect(a, out),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn score_tsv_parsing() {
        let p = Path::new("s.tsv");
        let s = parse_scores("doc_id\tscore\tlabel\na\t0.9\t1\nb\t0.1\t0\n", p).unwrap();
        assert_eq!(s.len(), 2);
        assert!(parse_scores("a\t0.9\n", p).is_err());
        assert!(parse_scores("a\tx\t1\n", p).is_err());
        assert!(parse_scores("a\t0.2\tNA\n", p)
            .unwrap_err()
            .to_string()
            .contains("label"));
    }

    #[test]
    fn unknown_flag_is_usage_error() {
        let (mut o, mut e) = (Vec::new(), Vec::new());
        let code = run(["fate", "eval", "--bogus"], &mut o, &mut e);
        assert_eq!(code, 1);
        assert!(String::from_utf8(e).unwrap().contains("Usage"));
        let code = run(["fate", "--help"], &mut o, &mut Vec::new());
        assert_eq!(code, 0);
    }
}
