//! Command-line front end.
//!
//! Every subcommand logs one JSON object per stage to stderr and reports
//! failures as a JSON object on stderr with exit code 2 (configuration),
//! 3 (data) or 4 (internal invariant).

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{defaults_table, DatasetProfile, RunConfig, Settings};
use crate::crf::crf_refine;
use crate::error::{Error, Result};
use crate::geom::VoxelIndex;
use crate::io::{
    load_sequence, read_fvec, read_gt_grid, read_pseudo_labels, read_soft_prediction, read_vocabulary,
    write_gt_grid, write_pseudo_labels, GroundTruthGrid, SequenceManifest,
};
use crate::label::{PseudoLabeler, SparseVoxelGrid};
use crate::metrics::{coverage, match_and_score, EvalOptions, PanopticGrid};
use crate::post::{fit_box, postprocess, OverlapMode};
use crate::semantics::{classify_zero_shot, kmeans_prototypes, semantic_oracle, ClassKind, ClassVocabulary, InstanceRecord};

#[derive(Debug, Parser)]
#[command(name = "calpsc", version, about = "Pseudo-labels, refines and evaluates Lidar panoptic scene completion")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML run configuration; its fields override the profile defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Dataset profile: semantic_kitti, kitti360 or custom.
    #[arg(long, global = true)]
    pub profile: Option<String>,
    /// Worker threads (default: available cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Suppress per-stage logs.
    #[arg(long, global = true)]
    pub quiet: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OverlapArg {
    Smaller,
    Iou,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sequence manifest to one CALP file per reference frame.
    PseudoLabel {
        /// Sequence manifest (falls back to the config file).
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Output directory (falls back to the config file).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Reference frames; all frames when omitted.
        #[arg(long = "reference", value_delimiter = ',')]
        references: Vec<usize>,
        /// Skip the CRF stage.
        #[arg(long)]
        no_crf: bool,
    },
    /// Densify a CALP file with the mean-field CRF.
    Crf {
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a prediction (CALP or CALG) against a CALG ground truth.
    Evaluate {
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        vocab: Option<PathBuf>,
        /// Class every instance by its majority ground-truth class.
        #[arg(long)]
        semantic_oracle: bool,
        /// Ignore voxels that are empty in the prediction.
        #[arg(long)]
        masked: bool,
        /// Average over classes absent from the ground truth too.
        #[arg(long)]
        include_absent: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Zero-shot class of every instance (CALP) or query (CALQ).
    Classify {
        input: PathBuf,
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Soft predictions (CALQ) to a panoptic grid (CALG).
    Postprocess {
        input: PathBuf,
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "smaller")]
        overlap: OverlapArg,
    },
    /// Upright boxes around the thing instances of a panoptic grid (CALG).
    Boxes {
        grid: PathBuf,
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Label and occupancy coverage of a CALP file against a CALG ground truth.
    Coverage {
        labels: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// k-means prototypes over instance features from CALP or FVEC files.
    Prototypes {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        clusters: usize,
        /// Include the centers in the report.
        #[arg(long)]
        centers: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Resolved configuration shared by the subcommands.
struct Context {
    run: RunConfig,
    settings: Settings,
    seed: u64,
    quiet: bool,
}

impl Context {
    fn new(global: &GlobalArgs, manifest_profile: Option<DatasetProfile>) -> Result<Self> {
        let run = match &global.config {
            Some(p) => RunConfig::read(p)?,
            None => RunConfig::default(),
        };
        let mut run = run;
        if let Some(p) = &global.profile {
            run.dataset_profile = Some(DatasetProfile::parse(p)?);
        }
        let fallback = manifest_profile.unwrap_or(DatasetProfile::SemanticKitti);
        let settings = run.settings(fallback)?;
        let seed = global.seed.unwrap_or(run.seed());
        Ok(Self { run, settings, seed, quiet: global.quiet })
    }

    fn log(&self, stage: &str, fields: Value) {
        if self.quiet {
            return;
        }
        let mut obj = json!({ "stage": stage });
        if let (Some(o), Value::Object(f)) = (obj.as_object_mut(), fields) {
            o.extend(f);
        }
        eprintln!("{obj}");
    }

    fn vocab(&self, flag: &Option<PathBuf>) -> Result<ClassVocabulary> {
        let path = flag
            .clone()
            .or_else(|| self.run.vocabulary.clone())
            .ok_or_else(|| Error::Config("no vocabulary given (--vocab or `vocabulary` in the config)".into()))?;
        let v = read_vocabulary(&path)?;
        self.log("vocabulary", json!({ "path": path, "classes": v.len() }));
        Ok(v)
    }
}

fn emit(out: &Option<PathBuf>, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Invariant(e.to_string()))?;
    text.push('\n');
    match out {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.into(), source: e })?;
            }
            std::fs::write(p, text).map_err(|e| Error::Io { path: p.clone(), source: e })
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn magic(path: &Path) -> Result<[u8; 4]> {
    use std::io::Read;
    let mut f = std::fs::File::open(path).map_err(|e| Error::Io { path: path.into(), source: e })?;
    let mut m = [0u8; 4];
    f.read_exact(&mut m)
        .map_err(|_| Error::MalformedFile { path: path.into(), reason: "shorter than its magic".into() })?;
    Ok(m)
}

fn class_by_zero_shot(instances: &[InstanceRecord], vocab: &ClassVocabulary) -> BTreeMap<u32, u16> {
    instances
        .iter()
        .map(|r| (r.instance_id, vocab.classes()[classify_zero_shot(&r.feature, vocab).0].code))
        .collect()
}

fn class_by_oracle(groups: &BTreeMap<u32, std::collections::BTreeSet<VoxelIndex>>, gt: &GroundTruthGrid) -> BTreeMap<u32, u16> {
    groups
        .iter()
        .filter_map(|(id, vox)| semantic_oracle(vox, gt).map(|c| (*id, c)))
        .collect()
}

/// Dense grid to sparse cells grouped by instance ID, skipping empty voxels.
fn instances_of(grid: &PanopticGrid) -> BTreeMap<u32, std::collections::BTreeSet<VoxelIndex>> {
    let mut out: BTreeMap<u32, std::collections::BTreeSet<VoxelIndex>> = BTreeMap::new();
    for (i, (&c, &id)) in grid.class.iter().zip(&grid.instance).enumerate() {
        if c != 0 {
            out.entry(id).or_default().insert(grid.spec.unlinear(i));
        }
    }
    out
}

fn to_calg(grid: &PanopticGrid) -> Result<GroundTruthGrid> {
    let mut out = GroundTruthGrid::empty(grid.spec);
    out.labels = grid.class.clone();
    out.instance_ids = grid
        .instance
        .iter()
        .map(|&i| u16::try_from(i).map_err(|_| Error::Invariant(format!("instance {i} exceeds the u16 range"))))
        .collect::<Result<_>>()?;
    Ok(out)
}

fn pseudo_label(
    ctx: &Context,
    manifest: &Option<PathBuf>,
    out: &Option<PathBuf>,
    references: &[usize],
    no_crf: bool,
) -> Result<()> {
    let path = manifest
        .clone()
        .or_else(|| ctx.run.manifest.clone())
        .ok_or_else(|| Error::Config("no manifest given (--manifest or `manifest` in the config)".into()))?;
    let out = out
        .clone()
        .or_else(|| ctx.run.output_dir.clone())
        .ok_or_else(|| Error::Config("no output directory given (--out or `output_dir` in the config)".into()))?;
    let m = SequenceManifest::read(&path)?;
    let mut settings = ctx.settings.clone();
    if let Some(g) = m.grid_spec {
        settings.grid = g;
    }
    if ctx.run.alignment_shift.is_none() {
        if let Some(s) = m.alignment_shift {
            settings.alignment_shift = s;
        }
    }
    settings.validate()?;
    let seq = load_sequence(&m)?;
    ctx.log("load", json!({ "manifest": path, "frames": seq.len(), "profile": settings.profile }));
    let mut refs: Vec<usize> = if references.is_empty() { (0..seq.len()).collect() } else { references.to_vec() };
    refs.sort_unstable();
    refs.dedup();
    let mut labeler = PseudoLabeler::new(&seq, settings, !no_crf, ctx.seed);
    for r in refs {
        let res = labeler.run(r)?;
        let file = out.join(format!("{r:06}.calp"));
        write_pseudo_labels(&file, &res.grid, &res.instances)?;
        let mut stats = serde_json::to_value(&res.stats).map_err(|e| Error::Invariant(e.to_string()))?;
        stats["output"] = json!(file);
        ctx.log("pseudo_label", stats);
    }
    Ok(())
}

fn crf(ctx: &Context, input: &Path, out: &Path) -> Result<()> {
    let (grid, instances) = read_pseudo_labels(input)?;
    let before = grid.labeled_count();
    let refined = crf_refine(&grid, &ctx.settings.crf)?;
    let groups = refined.by_instance();
    let records: Vec<InstanceRecord> = instances
        .into_iter()
        .map(|mut r| {
            r.voxels = groups.get(&r.instance_id).cloned().unwrap_or_default();
            r
        })
        .collect();
    write_pseudo_labels(out, &refined, &records)?;
    ctx.log(
        "crf",
        json!({ "input": input, "output": out, "labeled_before": before, "labeled_after": refined.labeled_count(),
                "occupied": refined.occupancy.len(), "iterations": ctx.settings.crf.iterations }),
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn evaluate(
    ctx: &Context,
    pred: &Path,
    gt_path: &Path,
    vocab: &Option<PathBuf>,
    oracle: bool,
    masked: bool,
    include_absent: bool,
    out: &Option<PathBuf>,
) -> Result<()> {
    let vocab = ctx.vocab(vocab)?;
    let (panoptic, labels): (PanopticGrid, Option<SparseVoxelGrid>) = match &magic(pred)? {
        b"CALP" => {
            let (grid, instances) = read_pseudo_labels(pred)?;
            let gt = read_gt_grid(gt_path, &grid.spec)?;
            let classes = if oracle {
                class_by_oracle(&grid.by_instance(), &gt)
            } else {
                class_by_zero_shot(&instances, &vocab)
            };
            (PanopticGrid::from_instances(&grid, &classes), Some(grid))
        }
        b"CALG" => {
            let g = read_gt_grid(pred, &ctx.settings.grid)?;
            let mut p = PanopticGrid::from_gt(&g);
            if oracle {
                let gt = read_gt_grid(gt_path, &ctx.settings.grid)?;
                let classes = class_by_oracle(&instances_of(&p), &gt);
                for (c, id) in p.class.iter_mut().zip(&p.instance) {
                    if *c != 0 {
                        *c = classes.get(id).copied().unwrap_or(0);
                    }
                }
            }
            (p, None)
        }
        m => {
            return Err(Error::MalformedFile {
                path: pred.into(),
                reason: format!("unknown prediction magic {:?}", String::from_utf8_lossy(m)),
            })
        }
    };
    let gt = read_gt_grid(gt_path, &panoptic.spec)?;
    let mut report = match_and_score(&panoptic, &gt, &vocab, EvalOptions { masked, include_absent })?;
    if let Some(l) = &labels {
        report.coverage = Some(coverage(l, &gt)?);
    }
    ctx.log(
        "evaluate",
        json!({ "pred": pred, "gt": gt_path, "PQ": report.pq, "PQ_dagger": report.pq_dagger, "semantic_oracle": oracle, "masked": masked }),
    );
    emit(out, &report)
}

#[derive(Serialize)]
struct Classified {
    id: u32,
    class: String,
    code: u16,
    kind: ClassKind,
    margin: f64,
    scores: BTreeMap<String, f64>,
}

fn classify_one(id: u32, feature: &[f32], vocab: &ClassVocabulary) -> Classified {
    let (best, scores) = classify_zero_shot(feature, vocab);
    let mut sorted = scores.clone();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let c = &vocab.classes()[best];
    Classified {
        id,
        class: c.name.clone(),
        code: c.code,
        kind: c.kind,
        margin: sorted.get(1).map_or(f64::INFINITY, |s| sorted[0] - s),
        scores: vocab.classes().iter().map(|c| c.name.clone()).zip(scores).collect(),
    }
}

fn classify(ctx: &Context, input: &Path, vocab: &Option<PathBuf>, out: &Option<PathBuf>) -> Result<()> {
    let vocab = ctx.vocab(vocab)?;
    let rows: Vec<Classified> = match &magic(input)? {
        b"CALP" => read_pseudo_labels(input)?
            .1
            .iter()
            .map(|r| classify_one(r.instance_id, &r.feature, &vocab))
            .collect(),
        b"CALQ" => read_soft_prediction(input)?
            .queries
            .iter()
            .enumerate()
            .map(|(q, s)| classify_one(q as u32, &s.feature, &vocab))
            .collect(),
        m => {
            return Err(Error::MalformedFile {
                path: input.into(),
                reason: format!("expected CALP or CALQ, found {:?}", String::from_utf8_lossy(m)),
            })
        }
    };
    ctx.log("classify", json!({ "input": input, "instances": rows.len() }));
    emit(out, &rows)
}

fn postprocess_cmd(ctx: &Context, input: &Path, vocab: &Option<PathBuf>, out: &Path, overlap: OverlapArg) -> Result<()> {
    let vocab = ctx.vocab(vocab)?;
    let pred = read_soft_prediction(input)?;
    let spec = ctx.settings.grid;
    if let Some(v) = pred.voxels.iter().find(|v| !spec.contains(**v)) {
        return Err(Error::SizeMismatch(format!("voxel {:?} lies outside the {:?} grid", v.0, spec.dims)));
    }
    let mode = match overlap {
        OverlapArg::Smaller => OverlapMode::Smaller,
        OverlapArg::Iou => OverlapMode::Iou,
    };
    let (grid, kept) = postprocess(&pred, &spec, &ctx.settings.thresholds, mode);
    let classes: BTreeMap<u32, u16> = kept
        .iter()
        .map(|k| (k.id, vocab.classes()[classify_zero_shot(&k.feature, &vocab).0].code))
        .collect();
    let panoptic = PanopticGrid::from_instances(&grid, &classes);
    write_gt_grid(out, &to_calg(&panoptic)?)?;
    ctx.log(
        "postprocess",
        json!({ "input": input, "output": out, "queries": pred.queries.len(), "kept": kept.len(),
                "thresholds": ctx.settings.thresholds, "labeled": grid.labeled_count() }),
    );
    Ok(())
}

#[derive(Serialize)]
struct BoxRow {
    id: u32,
    class_code: u16,
    #[serde(skip_serializing_if = "Option::is_none")]
    class: Option<String>,
    voxels: usize,
    center: [f64; 3],
    size: [f64; 3],
    yaw: f64,
}

fn boxes(ctx: &Context, path: &Path, vocab: &Option<PathBuf>, out: &Option<PathBuf>) -> Result<()> {
    let vocab = if vocab.is_some() || ctx.run.vocabulary.is_some() { Some(ctx.vocab(vocab)?) } else { None };
    let g = PanopticGrid::from_gt(&read_gt_grid(path, &ctx.settings.grid)?);
    let mut per: BTreeMap<(u32, u16), Vec<VoxelIndex>> = BTreeMap::new();
    for (i, (&c, &id)) in g.class.iter().zip(&g.instance).enumerate() {
        if c != 0 && id != 0 {
            per.entry((id, c)).or_default().push(g.spec.unlinear(i));
        }
    }
    let mut rows = Vec::new();
    for ((id, code), voxels) in per {
        let class = vocab.as_ref().and_then(|v| v.by_code(code)).map(|(_, c)| c);
        if class.is_some_and(|c| c.kind == ClassKind::Stuff) {
            continue;
        }
        let b = fit_box(&voxels, &g.spec)?;
        rows.push(BoxRow {
            id,
            class_code: code,
            class: class.map(|c| c.name.clone()),
            voxels: voxels.len(),
            center: b.center,
            size: b.size,
            yaw: b.yaw,
        });
    }
    ctx.log("boxes", json!({ "grid": path, "boxes": rows.len() }));
    emit(out, &rows)
}

fn coverage_cmd(ctx: &Context, labels: &Path, gt: &Path, out: &Option<PathBuf>) -> Result<()> {
    let (grid, _) = read_pseudo_labels(labels)?;
    let gt_grid = read_gt_grid(gt, &grid.spec)?;
    let c = coverage(&grid, &gt_grid)?;
    ctx.log("coverage", json!({ "labels": labels, "gt": gt }));
    emit(out, &c)
}

fn prototypes(ctx: &Context, inputs: &[PathBuf], clusters: usize, centers: bool, out: &Option<PathBuf>) -> Result<()> {
    let mut feats: Vec<Vec<f32>> = Vec::new();
    for p in inputs {
        match &magic(p)? {
            b"CALP" => feats.extend(read_pseudo_labels(p)?.1.into_iter().map(|r| r.feature)),
            b"FVEC" => feats.extend(read_fvec(p)?.1),
            m => {
                return Err(Error::MalformedFile {
                    path: p.clone(),
                    reason: format!("expected CALP or FVEC, found {:?}", String::from_utf8_lossy(m)),
                })
            }
        }
    }
    let book = kmeans_prototypes(&feats, clusters, ctx.seed)?;
    ctx.log("prototypes", json!({ "inputs": inputs.len(), "samples": feats.len(), "clusters": clusters }));
    let mut report = json!({
        "samples": feats.len(),
        "clusters": clusters,
        "seed": ctx.seed,
        "iterations": book.iterations,
        "inertia": book.inertia(),
        "inertia_history": book.inertia_history,
        "cluster_sizes": book.cluster_sizes(),
        "assignment": book.assignment,
    });
    if centers {
        report["centers"] = json!(book.centers);
    }
    emit(out, &report)
}

/// Runs a parsed command line.
pub fn run(cli: &Cli) -> Result<()> {
    let manifest_profile = match &cli.command {
        Command::PseudoLabel { manifest: Some(m), .. } => Some(SequenceManifest::read(m)?.dataset_profile),
        _ => None,
    };
    let ctx = Context::new(&cli.global, manifest_profile)?;
    let jobs = cli.global.jobs.unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| match &cli.command {
        Command::PseudoLabel { manifest, out, references, no_crf } => {
            pseudo_label(&ctx, manifest, out, references, *no_crf)
        }
        Command::Crf { input, out } => crf(&ctx, input, out),
        Command::Evaluate { pred, gt, vocab, semantic_oracle, masked, include_absent, out } => {
            evaluate(&ctx, pred, gt, vocab, *semantic_oracle, *masked, *include_absent, out)
        }
        Command::Classify { input, vocab, out } => classify(&ctx, input, vocab, out),
        Command::Postprocess { input, vocab, out, overlap } => postprocess_cmd(&ctx, input, vocab, out, *overlap),
        Command::Boxes { grid, vocab, out } => boxes(&ctx, grid, vocab, out),
        Command::Coverage { labels, gt, out } => coverage_cmd(&ctx, labels, gt, out),
        Command::Prototypes { inputs, clusters, centers, out } => prototypes(&ctx, inputs, *clusters, *centers, out),
    })
}

fn command() -> clap::Command {
    Cli::command().after_help(format!("Defaults per dataset profile:\n\n{}", defaults_table()))
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return 2;
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            let code = e.exit_code();
            eprintln!("{}", json!({ "error": e.kind(), "message": e.to_string(), "exit_code": code }));
            code
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn command_definition_is_consistent() {
        command().debug_assert();
    }

    #[test]
    fn help_lists_profile_defaults() {
        let help = command().render_long_help().to_string();
        for knob in ["window.t_fw", "crf.iterations", "thresholds.tau_vox", "alignment_shift"] {
            assert!(help.contains(knob), "{knob} missing from help");
        }
    }

    #[test]
    fn unknown_profile_is_a_config_error() {
        assert_eq!(main_with_args(["calpsc", "--profile", "nuscenes", "prototypes", "x.calp", "--clusters", "2"]), 2);
    }

    #[test]
    fn missing_file_is_a_data_error() {
        assert_eq!(main_with_args(["calpsc", "--quiet", "coverage", "/nonexistent.calp", "--gt", "/nonexistent.calg"]), 3);
    }
}
