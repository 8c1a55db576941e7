use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{Duration, Instant};

use anyhow::{bail, ensure, Context, Result};
use clap::Args;
use kneetex::eval::{cv_scores, fit_full};
use kneetex::geometry::mirror_for_laterality;
use kneetex::matrix::format_sig;
use kneetex::pipeline::{extract_cohort, CANONICAL_SIDE};
use kneetex::search::{best_csv, parse_search_csv, search_csv_row, search_streaming, SEARCH_CSV_HEADER};
use kneetex::synth::{write_cohort_images, write_ground_truth};
use kneetex::*;

use crate::{overlay, write_output, Shared};

const VERSION: &str = env!("CARGO_PKG_VERSION");

fn init_threads(threads: usize) -> Result<()> {
    if threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .context("configuring the thread pool")?;
    }
    Ok(())
}

fn cv_spec(shared: &Shared) -> Result<CvSpec> {
    let spec = CvSpec {
        folds: shared.folds,
        repeats: shared.repeats,
        base_seed: shared.seed,
        pooling: if shared.per_fold_auc { AucPooling::PerFoldMean } else { AucPooling::Pooled },
    };
    spec.validate()?;
    Ok(spec)
}

fn svm_params(shared: &Shared) -> Result<SvmParams> {
    ensure!(shared.svm_c > 0.0 && shared.svm_c.is_finite(), "--svm-c must be positive, got {}", shared.svm_c);
    Ok(SvmParams { c: shared.svm_c, seed: shared.seed, ..SvmParams::default() })
}

/// `#` lines recording everything needed to regenerate a stochastic output.
fn config_header(command: &str, shared: &Shared, matrix: &FeatureMatrix) -> Vec<String> {
    let (cases, controls) = matrix.class_counts();
    vec![
        format!("kneetex {command} version={VERSION}"),
        format!(
            "seed={} folds={} repeats={} C={} pooling={}",
            shared.seed,
            shared.folds,
            shared.repeats,
            shared.svm_c,
            if shared.per_fold_auc { "per-fold-mean" } else { "pooled" }
        ),
        format!("subjects={} cases={cases} controls={controls}", matrix.len()),
    ]
}

fn comment_block(lines: &[String]) -> String {
    lines.iter().map(|l| format!("# {l}\n")).collect()
}

fn read_matrix(path: &Path) -> Result<FeatureMatrix> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    FeatureMatrix::read_csv(file).with_context(|| format!("reading {}", path.display()))
}

fn parse_mask(text: &str) -> Result<FeatureMask> {
    FeatureMask::from_str(text).with_context(|| format!("invalid feature mask `{text}`"))
}

#[derive(Debug, Args)]
pub struct LayoutArgs {
    /// Landmark JSON file.
    pub landmarks: PathBuf,
    /// Image to use instead of the one named in the landmark file.
    #[arg(long)]
    pub image: Option<PathBuf>,
    /// Subject to lay out when the file holds several.
    #[arg(long)]
    pub subject: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write an SVG overlay of the ROIs on a downsampled image.
    #[arg(long)]
    pub svg: Option<PathBuf>,
    /// Overlay width limit in pixels.
    #[arg(long, default_value_t = 1024)]
    pub overlay_width: usize,
}

pub fn layout(args: LayoutArgs) -> Result<()> {
    let records = read_landmark_file(&args.landmarks)?;
    let record = match (&args.subject, records.len()) {
        (Some(id), _) => records
            .iter()
            .find(|r| &r.landmarks.subject_id == id)
            .with_context(|| format!("no subject `{id}` in {}", args.landmarks.display()))?,
        (None, 1) => &records[0],
        (None, n) => bail!("{} holds {n} subjects; pick one with --subject", args.landmarks.display()),
    };
    let lm = &record.landmarks;
    let needs_image = lm.laterality != CANONICAL_SIDE || args.svg.is_some();
    let image = if needs_image {
        let base = args.landmarks.parent().unwrap_or(Path::new("."));
        let path = args.image.clone().unwrap_or_else(|| record.resolve_image(base));
        Some(Image16::load(&path)?)
    } else {
        None
    };
    let width = image.as_ref().map_or(0, Image16::width);
    let canonical = mirror_for_laterality(lm, width, CANONICAL_SIDE);
    let layout = RoiLayout::from_landmarks(&canonical)?;
    let flip = lm.laterality != CANONICAL_SIDE;
    let to_image = |p: Point| if flip { Point::new(width as f64 - 1.0 - p.x, p.y) } else { p };

    let mut csv = comment_block(&[format!(
        "kneetex layout version={VERSION} subject={} laterality={}",
        lm.subject_id,
        lm.laterality.code()
    )]);
    csv.push_str("roi,corner_index,x,y\n");
    let mut outlines = Vec::new();
    for roi in layout.rois() {
        let corners = roi.corners().map(to_image);
        for (i, c) in corners.iter().enumerate() {
            csv.push_str(&format!("{},{i},{},{}\n", roi.name, c.x, c.y));
        }
        if roi.out_of_bone {
            eprintln!("warning: {}: ROI {} is wider than its condyle", lm.subject_id, roi.name);
        }
        outlines.push(overlay::Outline { name: roi.name, corners, out_of_bone: roi.out_of_bone });
    }
    write_output(args.out.as_ref(), &csv)?;
    if let (Some(svg), Some(image)) = (&args.svg, &image) {
        let text = overlay::svg(image, &outlines, args.overlay_width)?;
        std::fs::write(svg, text).with_context(|| format!("writing {}", svg.display()))?;
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    /// Directory of landmark JSON files and their images.
    pub cohort: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Failure report; defaults to `<out>.failures.csv`, or stderr without --out.
    #[arg(long)]
    pub failures: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
}

fn csv_field(text: &str) -> String {
    if text.contains([',', '"', '\n']) {
        format!("\"{}\"", text.replace('"', "\"\""))
    } else {
        text.to_owned()
    }
}

pub fn extract(args: ExtractArgs) -> Result<()> {
    init_threads(args.threads)?;
    let result = extract_cohort(&args.cohort)?;
    for s in &result.subjects {
        for w in &s.warnings {
            eprintln!("warning: {}: ROI {} is wider than its condyle", s.vector.subject_id, w.name);
        }
    }
    let mut report = String::from("subject_id,source,error\n");
    for f in &result.failures {
        report.push_str(&format!(
            "{},{},{}\n",
            csv_field(&f.subject_id),
            csv_field(&f.source.display().to_string()),
            csv_field(&f.error.to_string())
        ));
    }
    let failure_path = args
        .failures
        .clone()
        .or_else(|| args.out.as_ref().map(|o| PathBuf::from(format!("{}.failures.csv", o.display()))));
    match &failure_path {
        Some(p) => std::fs::write(p, &report).with_context(|| format!("writing {}", p.display()))?,
        None if !result.failures.is_empty() => eprint!("{report}"),
        None => {}
    }
    ensure!(!result.subjects.is_empty(), "every subject failed; see the failure report");
    let unlabeled = result.subjects.iter().filter(|s| s.vector.label == Label::Unlabeled).count();
    if unlabeled > 0 {
        eprintln!("note: {unlabeled} unlabeled subject(s) left out of the matrix");
    }
    let matrix = result.matrix()?;
    let comments = vec![
        format!("kneetex extract version={VERSION}"),
        format!("subjects={} failures={}", matrix.len(), result.failures.len()),
    ];
    let mut buf = Vec::new();
    matrix.write_csv(&mut buf, &comments)?;
    write_output(args.out.as_ref(), std::str::from_utf8(&buf).expect("utf-8 CSV"))?;
    eprintln!("extracted {} subject(s), {} failure(s)", matrix.len(), result.failures.len());
    Ok(())
}

#[derive(Debug, Args)]
pub struct ScreenArgs {
    /// Feature matrix CSV.
    pub features: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Where to write the text grid; stdout when --out is given, else stderr.
    #[arg(long)]
    pub grid: Option<PathBuf>,
    /// Pooled-variance t-test instead of Welch.
    #[arg(long)]
    pub pooled: bool,
}

pub fn screen(args: ScreenArgs) -> Result<()> {
    let matrix = read_matrix(&args.features)?;
    let kind = if args.pooled { TTestKind::Pooled } else { TTestKind::Welch };
    let table = screen_features(&matrix, kind)?;
    write_output(args.out.as_ref(), &table.to_csv())?;
    let grid = table.grid();
    match (&args.grid, &args.out) {
        (Some(p), _) => std::fs::write(p, &grid).with_context(|| format!("writing {}", p.display()))?,
        (None, Some(_)) => print!("{grid}"),
        (None, None) => eprint!("{grid}"),
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct SearchArgs {
    /// Feature matrix CSV.
    pub features: PathBuf,
    #[command(flatten)]
    pub shared: Shared,
    #[arg(long, default_value_t = 1)]
    pub mask_from: u16,
    #[arg(long, default_value_t = 4095)]
    pub mask_to: u16,
    /// Masks evaluated between flushes.
    #[arg(long, default_value_t = 64)]
    pub chunk: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Continue an interrupted --out file after its last mask.
    #[arg(long, requires = "out")]
    pub resume: bool,
}

pub fn search(args: SearchArgs) -> Result<()> {
    init_threads(args.shared.threads)?;
    ensure!(
        (1..=4095).contains(&args.mask_from) && args.mask_from <= args.mask_to && args.mask_to <= 4095,
        "mask range {}..{} must lie within 1..4095",
        args.mask_from,
        args.mask_to
    );
    let matrix = read_matrix(&args.features)?;
    let spec = cv_spec(&args.shared)?;
    let params = svm_params(&args.shared)?;
    let header = config_header("search", &args.shared, &matrix);

    let mut from = args.mask_from;
    let mut sink: Box<dyn Write> = match (&args.out, args.resume) {
        (Some(path), true) if path.exists() => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let recorded: Vec<&str> = text.lines().filter(|l| l.starts_with('#')).collect();
            ensure!(
                recorded.len() >= 3 && recorded[1..3].iter().zip(&header[1..3]).all(|(a, b)| a[2..] == **b),
                "{} was written with a different configuration",
                path.display()
            );
            let done = parse_search_csv(&text).with_context(|| format!("reading {}", path.display()))?;
            if let Some(last) = done.iter().map(|r| r.mask.bits()).max() {
                from = from.max(last + 1);
            }
            let file = std::fs::OpenOptions::new().append(true).open(path)?;
            Box::new(BufWriter::new(file))
        }
        (Some(path), _) => {
            let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
            write!(w, "{}{SEARCH_CSV_HEADER}\n", comment_block(&header))?;
            Box::new(w)
        }
        (None, _) => {
            let mut w = BufWriter::new(std::io::stdout());
            write!(w, "{}{SEARCH_CSV_HEADER}\n", comment_block(&header))?;
            Box::new(w)
        }
    };
    if from > args.mask_to {
        eprintln!("nothing left to evaluate");
        return Ok(());
    }
    let total = usize::from(args.mask_to - from) + 1;
    let mut done = 0;
    let started = Instant::now();
    search_streaming(&matrix, from..=args.mask_to, args.chunk, &spec, &params, |rows| {
        for r in rows {
            writeln!(sink, "{}", search_csv_row(r)).map_err(|e| kneetex::Error::Io { path: "search output".into(), source: e })?;
        }
        sink.flush().map_err(|e| kneetex::Error::Io { path: "search output".into(), source: e })?;
        done += rows.len();
        eprint!("\r{done}/{total} masks, {:.0}s", started.elapsed().as_secs_f64());
        Ok(())
    })?;
    eprintln!();
    Ok(())
}

#[derive(Debug, Args)]
pub struct BestArgs {
    /// Search table from `kneetex search`.
    pub search: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn best_per_n(args: BestArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.search).with_context(|| format!("reading {}", args.search.display()))?;
    let rows = parse_search_csv(&text).with_context(|| format!("reading {}", args.search.display()))?;
    let best = best_per_cardinality(&rows)?;
    let mut out: String = text.lines().filter(|l| l.starts_with('#')).map(|l| format!("{l}\n")).collect();
    out.push_str(&format!("# kneetex best-per-n version={VERSION}\n"));
    out.push_str(&best_csv(&best));
    write_output(args.out.as_ref(), &out)
}

#[derive(Debug, Args)]
pub struct RocArgs {
    /// Feature matrix CSV.
    pub features: PathBuf,
    /// Subset as hex (`0x841`), decimal, or names joined by `+`.
    #[arg(long)]
    pub mask: String,
    #[command(flatten)]
    pub shared: Shared,
    /// Cross-validation repeat whose out-of-fold scores form the curve.
    #[arg(long, default_value_t = 0)]
    pub repeat: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write the CV summary row for the mask.
    #[arg(long)]
    pub cv_report: Option<PathBuf>,
}

pub fn roc(args: RocArgs) -> Result<()> {
    init_threads(args.shared.threads)?;
    let matrix = read_matrix(&args.features)?;
    let mask = parse_mask(&args.mask)?;
    let spec = cv_spec(&args.shared)?;
    let params = svm_params(&args.shared)?;
    ensure!(args.repeat < spec.repeats, "--repeat {} is outside 0..{}", args.repeat, spec.repeats);
    let (scores, _) = cv_scores(&matrix, mask, &spec, &params, args.repeat)?;
    let curve = roc_curve(&scores, matrix.labels())?;
    let mut header = config_header("roc", &args.shared, &matrix);
    header.push(format!("mask={mask} features={} repeat={} auc={}", mask.names().join("+"), args.repeat, curve.auc));
    write_output(args.out.as_ref(), &(comment_block(&header) + &curve.to_csv()))?;
    if let Some(path) = &args.cv_report {
        let s = cv_auc(&matrix, mask, &spec, &params)?;
        let text = format!(
            "{}mask,features,mean_auc,std_auc,repeats,folds,C,seed\n{mask},{},{},{},{},{},{},{}\n",
            comment_block(&header[..3]),
            mask.names().join("+"),
            s.mean_auc,
            s.std_auc,
            spec.repeats,
            spec.folds,
            params.c,
            spec.base_seed
        );
        std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct ProjectArgs {
    /// Feature matrix CSV.
    pub features: PathBuf,
    #[arg(long)]
    pub mask: String,
    #[command(flatten)]
    pub shared: Shared,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write the fitted model as JSON.
    #[arg(long)]
    pub model: Option<PathBuf>,
}

fn join_numbers(v: &[f64]) -> String {
    v.iter().map(|x| format_sig(*x, 9)).collect::<Vec<_>>().join(";")
}

pub fn project(args: ProjectArgs) -> Result<()> {
    let matrix = read_matrix(&args.features)?;
    let mask = parse_mask(&args.mask)?;
    let params = svm_params(&args.shared)?;
    let model = fit_full(&matrix, mask, &params)?;
    let proj = project_2d(&matrix, mask, &model)?;
    let mut header = config_header("project", &args.shared, &matrix);
    header.push(format!("mask={mask} features={}", mask.names().join("+")));
    header.push(format!("hyperplane_x={}", proj.hyperplane_x));
    header.push(format!("x_direction={}", join_numbers(&proj.x_direction)));
    header.push(format!("y_direction={}", join_numbers(&proj.y_direction)));
    let mut csv = comment_block(&header);
    csv.push_str("subject_id,label,x,y\n");
    for ((id, label), (x, y)) in matrix.subject_ids().iter().zip(matrix.labels()).zip(&proj.points) {
        csv.push_str(&format!("{},{label},{},{}\n", csv_field(id), format_sig(*x, 9), format_sig(*y, 9)));
    }
    write_output(args.out.as_ref(), &csv)?;
    if let Some(path) = &args.model {
        std::fs::write(path, model.to_json()).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct PairsArgs {
    /// Feature matrix CSV.
    pub features: PathBuf,
    #[arg(long)]
    pub mask: String,
    /// Directory receiving one CSV per feature pair.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn pairs(args: PairsArgs) -> Result<()> {
    let matrix = read_matrix(&args.features)?;
    let mask = parse_mask(&args.mask)?;
    let features: Vec<usize> = mask.features().collect();
    ensure!(features.len() >= 2, "pair plots need at least two features, mask {mask} has {}", features.len());
    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let mut written = 0;
    for (i, &a) in features.iter().enumerate() {
        for &b in &features[i + 1..] {
            let (na, nb) = (FEATURE_NAMES[a], FEATURE_NAMES[b]);
            let mut csv = format!("# kneetex pairs version={VERSION} mask={mask}\nsubject_id,label,{na},{nb}\n");
            for ((id, label), row) in matrix.subject_ids().iter().zip(matrix.labels()).zip(matrix.rows()) {
                csv.push_str(&format!("{},{label},{},{}\n", csv_field(id), format_sig(row[a], 9), format_sig(row[b], 9)));
            }
            let path = args.out.join(format!("pair_{na}_{nb}.csv"));
            std::fs::write(&path, csv).with_context(|| format!("writing {}", path.display()))?;
            written += 1;
        }
    }
    eprintln!("wrote {written} pair table(s) to {}", args.out.display());
    Ok(())
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Cohort description as JSON; flags below are ignored when given.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long, default_value_t = 67)]
    pub n_case: usize,
    #[arg(long, default_value_t = 86)]
    pub n_control: usize,
    /// Baseline Hurst target of every ROI.
    #[arg(long, default_value_t = 0.35)]
    pub hurst: f64,
    /// Baseline entropy target of every ROI, in bits.
    #[arg(long, default_value_t = 10.0)]
    pub entropy: f64,
    /// Planted case-minus-control shift, e.g. `H_F0=0.05` or `E_T3=0.3`. Repeatable.
    #[arg(long = "effect")]
    pub effects: Vec<String>,
    #[arg(long, default_value_t = 70)]
    pub patch_size: usize,
    #[arg(long, default_value_t = 0.03)]
    pub noise_sd: f64,
    #[arg(long, default_value_t = 0.3)]
    pub entropy_noise_sd: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Write the feature matrix directly instead of images and landmarks.
    #[arg(long)]
    pub fast: bool,
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
}

fn spec_from_flags(args: &SynthArgs) -> Result<CohortSpec> {
    let mut spec = CohortSpec {
        n_case: args.n_case,
        n_control: args.n_control,
        h_case: [args.hurst; 6],
        h_control: [args.hurst; 6],
        entropy_case: [args.entropy; 6],
        entropy_control: [args.entropy; 6],
        patch_size: args.patch_size,
        noise_sd: args.noise_sd,
        entropy_noise_sd: args.entropy_noise_sd,
        seed: args.seed,
    };
    for effect in &args.effects {
        let (name, delta) = effect
            .split_once('=')
            .with_context(|| format!("effect `{effect}` is not NAME=DELTA"))?;
        let feature = texture::feature_index(name.trim()).with_context(|| format!("unknown feature `{name}`"))?;
        let delta: f64 = delta.trim().parse().with_context(|| format!("effect `{effect}`: bad number"))?;
        let roi = RoiName::ALL[feature % 6];
        spec = if feature < 6 { spec.with_hurst_effect(roi, delta) } else { spec.with_entropy_effect(roi, delta) };
    }
    Ok(spec)
}

pub fn synth(args: SynthArgs) -> Result<()> {
    init_threads(args.threads)?;
    let spec = match &args.spec {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing cohort spec {}", path.display()))?
        }
        None => spec_from_flags(&args)?,
    };
    spec.validate()?;
    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    if args.fast {
        let cohort = planted_cohort(&spec, SynthMode::Fast)?;
        let comments = vec![
            format!("kneetex synth version={VERSION} mode=fast"),
            format!("cohort_spec={}", serde_json::to_string(&spec)?),
        ];
        let path = args.out.join("features.csv");
        let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        cohort.matrix.write_csv(BufWriter::new(file), &comments)?;
        write_ground_truth(&spec, &args.out)?;
    } else {
        write_cohort_images(&spec, &args.out)?;
    }
    eprintln!("wrote {} subject(s) to {}", spec.n_subjects(), args.out.display());
    Ok(())
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Square patch sides to time.
    #[arg(long, value_delimiter = ',', default_values_t = [64usize, 128, 256, 512])]
    pub sizes: Vec<usize>,
    /// Timed runs per descriptor and size; the median is reported.
    #[arg(long, default_value_t = 21)]
    pub reps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn median_time(reps: usize, mut f: impl FnMut()) -> Duration {
    let mut times: Vec<Duration> = (0..reps)
        .map(|_| {
            let t = Instant::now();
            f();
            t.elapsed()
        })
        .collect();
    times.sort();
    times[reps / 2]
}

pub fn bench(args: BenchArgs) -> Result<()> {
    ensure!(args.reps > 0, "--reps must be positive");
    let mut csv = comment_block(&[format!("kneetex bench version={VERSION} seed={} reps={}", args.seed, args.reps)]);
    csv.push_str("descriptor,size,median_seconds,reps\n");
    for &size in &args.sizes {
        let patch = fbm_patch(0.5, size, args.seed)?;
        let te = median_time(args.reps, || {
            std::hint::black_box(entropy(std::hint::black_box(&patch)));
        });
        let th = median_time(args.reps, || {
            let _ = std::hint::black_box(hurst(std::hint::black_box(&patch)));
        });
        csv.push_str(&format!("entropy,{size},{:.9},{}\n", te.as_secs_f64(), args.reps));
        csv.push_str(&format!("hurst,{size},{:.9},{}\n", th.as_secs_f64(), args.reps));
        eprintln!("{size}x{size}: hurst/entropy = {:.1}", th.as_secs_f64() / te.as_secs_f64());
    }
    write_output(args.out.as_ref(), &csv)
}
