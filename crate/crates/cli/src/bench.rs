use std::fs;
use std::time::Instant;

use cpcluster::baselines::{nms_selection, soft_nms_selection};
use cpcluster::io::dense_workload;
use cpcluster::{propagate, BBox, ClusterConfig, SoftNmsParams};
use serde::Serialize;

use crate::args::BenchArgs;
use crate::commands::pool;
use crate::CliError;

#[derive(Debug, Serialize)]
struct BenchRow {
    method: String,
    /// Median milliseconds, one entry per thread count.
    ms: Vec<f64>,
}

#[derive(Debug, Serialize)]
struct BenchReport {
    boxes: usize,
    clusters: usize,
    seed: u64,
    repeat: usize,
    threads: Vec<usize>,
    rows: Vec<BenchRow>,
}

/// CP config for `iterations` steps. The default increment is kept when the
/// final threshold stays below 1, otherwise the increment is shrunk so the
/// last threshold lands on 0.9.
pub fn bench_config(iterations: usize) -> ClusterConfig {
    let base = ClusterConfig::default();
    let steps = iterations.saturating_sub(1) as f64;
    let lambda = if base.theta0 + steps * base.lambda < 1.0 {
        base.lambda
    } else {
        (0.9 - base.theta0) / steps
    };
    ClusterConfig {
        lambda,
        iterations,
        alpha_schedule: (0..iterations).map(|t| if t == 0 { 1.0 } else { 0.0 }).collect(),
        ..base
    }
}

fn median_ms(repeat: usize, mut run: impl FnMut()) -> f64 {
    run();
    let mut samples: Vec<f64> = (0..repeat)
        .map(|_| {
            let start = Instant::now();
            run();
            start.elapsed().as_secs_f64() * 1e3
        })
        .collect();
    median(&mut samples)
}

fn median(samples: &mut [f64]) -> f64 {
    samples.sort_by(f64::total_cmp);
    let mid = samples.len() / 2;
    if samples.len() % 2 == 1 {
        samples[mid]
    } else {
        (samples[mid - 1] + samples[mid]) / 2.0
    }
}

fn time_cell(boxes: &[BBox], method: &str, repeat: usize, config: Option<&ClusterConfig>) -> f64 {
    let soft = SoftNmsParams::default();
    match (method, config) {
        ("nms", _) => median_ms(repeat, || {
            std::hint::black_box(nms_selection(boxes, 0.6, true));
        }),
        ("soft-nms", _) => median_ms(repeat, || {
            std::hint::black_box(soft_nms_selection(boxes, &soft));
        }),
        (_, Some(config)) => median_ms(repeat, || {
            std::hint::black_box(propagate(boxes, config).expect("valid workload"));
        }),
        _ => unreachable!("unknown bench row"),
    }
}

pub fn run(args: &BenchArgs) -> Result<(), CliError> {
    if args.boxes == 0 {
        return Err(CliError::Usage("invalid value for --boxes: must be at least 1".into()));
    }
    if args.clusters == 0 {
        return Err(CliError::Usage("invalid value for --clusters: must be at least 1".into()));
    }
    if args.repeat == 0 {
        return Err(CliError::Usage("invalid value for --repeat: must be at least 1".into()));
    }
    if args.iterations.contains(&0) {
        return Err(CliError::Usage("invalid value for --iterations: must be at least 1".into()));
    }
    let configs: Vec<(String, ClusterConfig)> = args
        .iterations
        .iter()
        .map(|&n| (format!("cp(iter={n})"), bench_config(n)))
        .collect();
    for (_, config) in &configs {
        config
            .validate()
            .map_err(|e| CliError::Usage(format!("invalid value for --iterations: {e}")))?;
    }
    let pools = args
        .threads
        .iter()
        .map(|&t| pool(t))
        .collect::<Result<Vec<_>, _>>()?;
    let boxes = dense_workload(args.boxes, args.clusters, args.seed);

    let mut rows = vec![
        BenchRow { method: "nms".into(), ms: Vec::new() },
        BenchRow { method: "soft-nms".into(), ms: Vec::new() },
    ];
    rows.extend(configs.iter().map(|(name, _)| BenchRow { method: name.clone(), ms: Vec::new() }));
    for pool in &pools {
        pool.install(|| {
            rows[0].ms.push(time_cell(&boxes, "nms", args.repeat, None));
            rows[1].ms.push(time_cell(&boxes, "soft-nms", args.repeat, None));
            for (row, (_, config)) in rows[2..].iter_mut().zip(&configs) {
                row.ms.push(time_cell(&boxes, "cp", args.repeat, Some(config)));
            }
        });
    }
    let report = BenchReport {
        boxes: args.boxes,
        clusters: args.clusters,
        seed: args.seed,
        repeat: args.repeat,
        threads: pools.iter().map(|p| p.current_num_threads()).collect(),
        rows,
    };
    print!("{}", render(&report));
    if let Some(path) = &args.report {
        let mut text = serde_json::to_string_pretty(&report).expect("report serializes");
        text.push('\n');
        fs::write(path, text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}

fn render(report: &BenchReport) -> String {
    let mut out = format!(
        "{} boxes, {} clusters, median of {} (ms)\n{:<12}",
        report.boxes, report.clusters, report.repeat, "method"
    );
    for t in &report.threads {
        out.push_str(&format!(" {:>12}", format!("threads={t}")));
    }
    out.push('\n');
    for row in &report.rows {
        out.push_str(&format!("{:<12}", row.method));
        for ms in &row.ms {
            out.push_str(&format!(" {ms:>12.3}"));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bench_config_keeps_thresholds_below_one() {
        assert_eq!(bench_config(2).lambda, 0.2);
        for n in 1..6 {
            let config = bench_config(n);
            config.validate().unwrap();
            assert_eq!(config.alpha_schedule.len(), n);
        }
    }

    #[test]
    fn median_of_odd_and_even() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
