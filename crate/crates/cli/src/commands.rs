use std::fs;
use std::path::Path;
use std::time::Instant;

use cpcluster::cluster::ConfigError;
use cpcluster::io::{self, LoadMode};
use cpcluster::{
    compare_methods, evaluate, ClusterConfig, ClusterError, ComparisonReport, DetectionSet, EvalError,
    GroundTruth, Method, MethodError, MethodSettings, SoftMode,
};
use cpcluster::eval::ReportRow;
use cpcluster::io::{ScoreModel, SynthSpec};

use crate::args::{ClusterArgs, CompareArgs, EvalArgs, MethodFlags, SoftModeArg, SynthArgs, Threads};
use crate::CliError;

fn flag_for(e: &ConfigError) -> &'static str {
    match e {
        ConfigError::Theta0(_) => "--iou-thresh",
        ConfigError::Lambda(_) | ConfigError::FinalTheta(_) => "--lambda",
        ConfigError::ThetaN { .. } => "--theta-n",
        ConfigError::Zeta => "--zeta",
        ConfigError::AlphaLength { .. } | ConfigError::Alpha(_) => "--alpha",
        ConfigError::MinScore(_) => "--min-score",
    }
}

pub fn method_error(e: MethodError) -> CliError {
    match e {
        MethodError::Cluster(ClusterError::Config(c)) => {
            CliError::Usage(format!("invalid value for {}: {c}", flag_for(&c)))
        }
        MethodError::Param(p) => CliError::Usage(p),
        MethodError::Unknown(m) => CliError::Usage(format!(
            "unknown method '{m}' (valid: {})",
            cpcluster::METHOD_NAMES.join(", ")
        )),
        other => CliError::Data(other.to_string()),
    }
}

fn eval_error(e: EvalError) -> CliError {
    match e {
        EvalError::Method(m) => method_error(m),
        other => CliError::Data(other.to_string()),
    }
}

/// Builds method settings from flags. `alpha_explicit` is false when the
/// alpha schedule came from its default.
pub fn settings(flags: &MethodFlags, alpha_explicit: bool) -> Result<MethodSettings, CliError> {
    if flags.iterations == 0 {
        return Err(CliError::Usage("invalid value for --iterations: must be at least 1".into()));
    }
    let alpha_schedule = if alpha_explicit {
        flags.alpha.clone()
    } else {
        (0..flags.iterations).map(|t| if t == 0 { 1.0 } else { 0.0 }).collect()
    };
    Ok(MethodSettings {
        cluster: ClusterConfig {
            theta0: flags.iou_thresh,
            lambda: flags.lambda,
            theta_n: flags.theta_n,
            zeta: flags.zeta,
            iterations: flags.iterations,
            alpha_schedule,
            min_score: flags.min_score,
            class_aware: !flags.class_agnostic,
            sort_output: true,
        },
        soft_mode: match flags.soft_mode {
            SoftModeArg::Linear => SoftMode::Linear,
            SoftModeArg::Gaussian => SoftMode::Gaussian,
        },
        sigma: flags.sigma,
    })
}

pub fn pool(threads: Threads) -> Result<rayon::ThreadPool, CliError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads.get())
        .build()
        .map_err(|e| CliError::Usage(format!("invalid value for --threads: {e}")))
}

fn load_dets(path: &Path, mode: LoadMode) -> Result<DetectionSet, CliError> {
    let loaded = io::load_detections(path, mode).map_err(|e| CliError::Data(e.to_string()))?;
    for issue in &loaded.skipped {
        eprintln!("{}: skipped record {}: {}", path.display(), issue.position, issue.reason);
    }
    Ok(loaded.detections)
}

fn load_gt(path: &Path) -> Result<GroundTruth, CliError> {
    io::load_ground_truth(path).map_err(|e| CliError::Data(e.to_string()))
}

fn write_report(report: &ComparisonReport, path: &Path) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(report).expect("report serializes");
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

pub fn cluster(args: &ClusterArgs, alpha_explicit: bool) -> Result<(), CliError> {
    let settings = settings(&args.flags, alpha_explicit)?;
    let method = settings.method(args.method.as_str()).map_err(method_error)?;
    let pool = pool(args.flags.threads)?;
    let mode = if args.lenient { LoadMode::Lenient } else { LoadMode::Strict };
    let raw = load_dets(&args.input, mode)?;

    let start = Instant::now();
    let out = pool.install(|| method.apply_all(&raw)).map_err(method_error)?;
    let elapsed = start.elapsed();

    io::save_detections(&out, &args.output).map_err(|e| CliError::Data(e.to_string()))?;
    for (image, boxes) in &out {
        println!("image {image}: {} -> {} boxes", raw[image].len(), boxes.len());
    }
    println!(
        "{}: {} images, {} -> {} boxes in {:.3} ms",
        method.name(),
        out.len(),
        raw.values().map(Vec::len).sum::<usize>(),
        out.values().map(Vec::len).sum::<usize>(),
        elapsed.as_secs_f64() * 1e3
    );
    Ok(())
}

pub fn eval(args: &EvalArgs) -> Result<(), CliError> {
    let dets = load_dets(&args.dets, LoadMode::Strict)?;
    let gt = load_gt(&args.gt)?;
    let result = evaluate(&dets, &gt).map_err(eval_error)?;
    println!("mAP  {:.3}", result.map);
    println!("AP50 {:.3}", result.ap50);
    println!("AP75 {:.3}", result.ap75);
    if let Some(path) = &args.report {
        let report = ComparisonReport {
            rows: vec![ReportRow::new("input", serde_json::json!({}), &result, 0.0)],
        };
        write_report(&report, path)?;
    }
    Ok(())
}

pub fn compare(args: &CompareArgs, alpha_explicit: bool) -> Result<(), CliError> {
    let settings = settings(&args.flags, alpha_explicit)?;
    let methods: Vec<Method> = args
        .methods
        .iter()
        .map(|m| settings.method(m.as_str()))
        .collect::<Result<_, _>>()
        .map_err(method_error)?;
    let pool = pool(args.flags.threads)?;
    let dets = load_dets(&args.dets, LoadMode::Strict)?;
    let gt = load_gt(&args.gt)?;
    let report = pool
        .install(|| compare_methods(&dets, &gt, &methods))
        .map_err(eval_error)?;
    print!("{}", report.render_table());
    if let Some(path) = &args.report {
        write_report(&report, path)?;
    }
    Ok(())
}

pub fn synth(args: &SynthArgs) -> Result<(), CliError> {
    let spec = SynthSpec {
        images: args.images,
        objects_per_image: (args.objects.0, args.objects.1),
        redundancy: (args.redundancy.0, args.redundancy.1),
        coord_noise: args.noise,
        score_model: ScoreModel {
            noise: args.score_noise,
            swap_prob: args.swap_prob,
        },
        classes: args.classes,
        seed: args.seed,
        ..SynthSpec::default()
    };
    let corpus = io::generate_corpus(&spec).map_err(|e| CliError::Usage(e.to_string()))?;
    io::save_detections(&corpus.detections, &args.out_dets).map_err(|e| CliError::Data(e.to_string()))?;
    io::save_ground_truth(&corpus.ground_truth, &args.out_gt).map_err(|e| CliError::Data(e.to_string()))?;
    println!(
        "{} images, {} objects, {} detections",
        corpus.ground_truth.images.len(),
        corpus.ground_truth.annotations.len(),
        corpus.detections.values().map(Vec::len).sum::<usize>()
    );
    Ok(())
}
