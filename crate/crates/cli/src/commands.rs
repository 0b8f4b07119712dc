use std::collections::HashSet;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use mapfilter::calib::{calibrate as run_calibration, FilterDocument};
use mapfilter::eval::{default_thresholds, write_json, write_pr_curve, EvalSummary};
use mapfilter::manifest::{implied_correspondences, load_correspondences, load_manifest};
use mapfilter::matcher::{read_match_table, write_match_table};
use mapfilter::pipeline::{load_pooled, match_all};
use mapfilter::synth::{generate, SynthParams};
use mapfilter::{
    build_triplets, flatten, pr_sweep, pyramid_pool, read_tensor, timing_report, CalibConfig,
    DatasetManifest, EvalConfig, GroundTruth, GtMode, KeptSet, MatchOutcome, MatcherConfig,
    TemplateDb,
};
use serde::Serialize;

use crate::config::{CalibrateSection, EvalSection, MatchSection, SynthSection};
use crate::{CalibrateArgs, EvalArgs, MatchArgs, PoolArgs, SynthArgs, UsageError};

const DEFAULT_FRAME_TOLERANCE: f64 = 10.0;
const DEFAULT_METRIC_TOLERANCE_M: f64 = 30.0;

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn manifest(path: &Path) -> Result<DatasetManifest> {
    load_manifest(path).with_context(|| format!("loading manifest {}", path.display()))
}

fn correspondences(
    path: Option<&Path>,
    queries: &DatasetManifest,
    refs: &DatasetManifest,
) -> Result<Vec<usize>> {
    let corr = match path {
        Some(p) => load_correspondences(p, queries)?,
        None => implied_correspondences(queries, refs)?,
    };
    if let Some(&bad) = corr.iter().find(|&&c| c >= refs.len()) {
        bail!(
            "correspondence points at reference {bad}, but the reference traverse has {} entries",
            refs.len()
        );
    }
    Ok(corr)
}

pub fn calibrate(a: CalibrateArgs, file: &CalibrateSection) -> Result<()> {
    let cfg = CalibConfig {
        num_calibration_images: a.num_calib.or(file.num_calib).unwrap_or(50),
        gradient_cutoff: a.threshold.or(file.threshold).unwrap_or(0.1),
        rng_seed: a.seed.or(file.seed).unwrap_or(0),
        negative_exclusion_radius: a.exclusion_radius.or(file.exclusion_radius).unwrap_or(20),
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;

    let refs_m = manifest(&a.reference)?;
    let cal_m = manifest(&a.calibration)?;
    if let Some(q) = &a.query {
        let q = manifest(q)?;
        let cal_ids: HashSet<&str> = cal_m.entries.iter().map(|e| e.id.as_str()).collect();
        let overlap = q.entries.iter().filter(|e| cal_ids.contains(e.id.as_str())).count();
        if overlap > 0 {
            eprintln!(
                "warning: {overlap} calibration images also appear in the query traverse; \
                 calibration should precede the evaluated route"
            );
        }
    }
    let corr = correspondences(a.correspondences.as_deref(), &cal_m, &refs_m)?;
    if cal_m.len() < cfg.num_calibration_images {
        bail!(
            "{} holds {} images, fewer than --num-calib {}",
            a.calibration.display(),
            cal_m.len(),
            cfg.num_calibration_images
        );
    }
    let cal_m = DatasetManifest {
        entries: cal_m.entries[..cfg.num_calibration_images].to_vec(),
        ..cal_m
    };

    let refs = load_pooled(&refs_m)?;
    let cal = load_pooled(&cal_m)?;
    if let (Some(r), Some(c)) = (refs.first(), cal.first()) {
        if !r.same_shape(c) {
            bail!(
                "calibration tensors have {} channels, reference tensors {}",
                c.channels(),
                r.channels()
            );
        }
    }
    let triplets = build_triplets(&cal, &refs, &corr, &cfg)?;
    let (result, traces) = run_calibration(&triplets, &cfg)?;
    let doc = FilterDocument::new(refs_m.layer_name.clone(), &result, &traces, &cfg);
    doc.save(&a.out)?;
    eprintln!(
        "kept {} of {} feature maps from {} calibration triplets -> {}",
        doc.kept_count,
        doc.channels,
        triplets.len(),
        a.out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct MatchTiming {
    queries: usize,
    kept: usize,
    channels: usize,
    config: MatcherConfig,
    filter: Option<PathBuf>,
    per_query_ms: Vec<f64>,
    report: Option<mapfilter::TimingReport>,
}

pub fn match_queries(a: MatchArgs, file: &MatchSection) -> Result<()> {
    let cfg = MatcherConfig {
        exclusion_window: a.window.or(file.window).unwrap_or(10),
    };
    let q_m = manifest(&a.query)?;
    let r_m = manifest(&a.reference)?;
    let refs = load_pooled(&r_m)?;
    let queries = load_pooled(&q_m)?;
    let channels = refs
        .first()
        .ok_or_else(|| anyhow!("reference traverse is empty"))?
        .channels();
    if let Some(q) = queries.first() {
        if q.channels() != channels {
            bail!("query tensors have {} channels, reference tensors {channels}", q.channels());
        }
    }
    let all = KeptSet::all(channels)?;
    let kept = match &a.filter {
        Some(path) => {
            let doc = FilterDocument::load(path)?;
            if doc.channels != channels {
                bail!(
                    "filter {} was calibrated for {} channels, tensors have {channels}",
                    path.display(),
                    doc.channels
                );
            }
            doc.kept_set
        }
        None => all.clone(),
    };

    let ids: Vec<&str> = q_m.entries.iter().map(|e| e.id.as_str()).collect();
    let db = TemplateDb::new(&refs, &kept)?;
    let (outcomes, times) = match_all(&db, &ids, &queries, &cfg)?;
    write_match_table(&a.out, &outcomes)?;

    let report = if kept.len() < channels {
        let full = TemplateDb::new(&refs, &all)?;
        let (_, full_times) = match_all(&full, &ids, &queries, &cfg)?;
        Some(timing_report(kept.len(), channels, &times, &full_times)?)
    } else {
        None
    };
    if let Some(r) = &report {
        eprintln!(
            "mean match time {:.3} ms filtered vs {:.3} ms unfiltered (ratio {:.3}, {}/{} maps)",
            r.mean_filtered_ms, r.mean_unfiltered_ms, r.time_ratio, r.kept, r.channels
        );
    }
    let timing_path = a.timing.unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".timing.json");
        p.into()
    });
    write_json(
        &timing_path,
        &MatchTiming {
            queries: outcomes.len(),
            kept: kept.len(),
            channels,
            config: cfg,
            filter: a.filter.clone(),
            per_query_ms: times.iter().map(|d| d.as_secs_f64() * 1e3).collect(),
            report,
        },
    )?;
    eprintln!("matched {} queries -> {}", outcomes.len(), a.out.display());
    Ok(())
}

fn evaluate_table(
    table: &Path,
    q_m: &DatasetManifest,
    truth: &GroundTruth,
    mode: GtMode,
    tolerance: f64,
    steps: usize,
    out_dir: &Path,
    prefix: &str,
) -> Result<EvalSummary> {
    let outcomes: Vec<MatchOutcome> = read_match_table(table)?;
    if outcomes.is_empty() {
        bail!("match table {} is empty", table.display());
    }
    if outcomes.len() != q_m.len()
        || outcomes.iter().zip(&q_m.entries).any(|(o, e)| o.query_id != e.id)
    {
        bail!(
            "match table {} does not list the query manifest's ids in order",
            table.display()
        );
    }
    let cfg = EvalConfig {
        gt_mode: mode,
        tolerance,
        thresholds: default_thresholds(&outcomes, steps),
    };
    let curve = pr_sweep(&outcomes, truth, &cfg)?;
    let summary = EvalSummary::new(&curve, outcomes.len(), &cfg);
    write_pr_curve(out_dir.join(format!("{prefix}pr.csv")), &curve)?;
    write_json(out_dir.join(format!("{prefix}summary.json")), &summary)?;
    Ok(summary)
}

pub fn eval(a: EvalArgs, file: &EvalSection) -> Result<()> {
    let q_m = manifest(&a.query)?;
    let r_m = manifest(&a.reference)?;
    let mode = match a.gt_mode.as_deref().or(file.gt_mode.as_deref()) {
        Some(s) => s.parse::<GtMode>().map_err(|e| usage(e.to_string()))?,
        None => q_m.gt_mode,
    };
    let tolerance = a.tolerance.or(file.tolerance).unwrap_or(match mode {
        GtMode::Frame => DEFAULT_FRAME_TOLERANCE,
        GtMode::Metric => DEFAULT_METRIC_TOLERANCE_M,
    });
    if !(tolerance >= 0.0) {
        return Err(usage(format!("--tolerance must be non-negative, got {tolerance}")));
    }
    let steps = a.steps.or(file.steps).unwrap_or(mapfilter::eval::DEFAULT_SWEEP_STEPS);
    if steps == 0 {
        return Err(usage("--steps must be positive"));
    }
    let truth = match mode {
        GtMode::Frame => GroundTruth::Frame {
            true_indices: correspondences(a.correspondences.as_deref(), &q_m, &r_m)?,
        },
        GtMode::Metric => GroundTruth::Metric {
            query_positions: q_m.positions(),
            reference_positions: r_m.positions(),
        },
    };
    std::fs::create_dir_all(&a.out)
        .with_context(|| format!("creating {}", a.out.display()))?;

    let main = evaluate_table(&a.table, &q_m, &truth, mode, tolerance, steps, &a.out, "")?;
    println!("{}: max F1 {:.4}", a.table.display(), main.max_f1);
    if let Some(base) = &a.baseline {
        let b = evaluate_table(base, &q_m, &truth, mode, tolerance, steps, &a.out, "baseline_")?;
        println!("{}: max F1 {:.4}", base.display(), b.max_f1);
        let ratio = if b.max_f1 > 0.0 {
            format!("{:.4}", main.max_f1 / b.max_f1)
        } else {
            "inf".into()
        };
        println!(
            "max F1 ratio {ratio} (difference {:+.4})",
            main.max_f1 - b.max_f1
        );
    }
    Ok(())
}

pub fn synth(a: SynthArgs, file: &SynthSection) -> Result<()> {
    let channels = a.channels.or(file.channels).unwrap_or(64);
    let signal = a.signal.or(file.signal).unwrap_or(16);
    if signal > channels {
        return Err(usage(format!("--signal {signal} exceeds --channels {channels}")));
    }
    let places = a.places.or(file.places).unwrap_or(300);
    let seed = a.seed.or(file.seed).unwrap_or(42);
    let mut p = SynthParams::with_random_signal(places, channels, signal, seed);
    p.num_calibration = a.calib.or(file.calib).unwrap_or(p.num_calibration);
    p.num_queries = a.queries.or(file.queries).unwrap_or(p.num_queries);
    p.width = a.width.or(file.width).unwrap_or(p.width);
    p.height = a.height.or(file.height).unwrap_or(p.height);
    p.condition_noise_scale = a.noise_scale.or(file.noise_scale).unwrap_or(p.condition_noise_scale);
    p.appearance_shift = a.shift.or(file.shift).unwrap_or(p.appearance_shift);
    p.signal_jitter = a.jitter.or(file.jitter).unwrap_or(p.signal_jitter);
    p.validate().map_err(|e| usage(e.to_string()))?;
    generate(&p)?.write_to(&a.out)?;
    eprintln!(
        "wrote {} reference, {} calibration and {} query tensors to {}",
        p.num_places,
        p.num_calibration,
        p.num_queries,
        a.out.display()
    );
    Ok(())
}

fn format_values(v: &[f32]) -> String {
    let parts: Vec<String> = v.iter().map(|x| x.to_string()).collect();
    format!("[{}]", parts.join(", "))
}

pub fn pool(a: PoolArgs) -> Result<()> {
    let t = read_tensor(&a.tensor)?;
    let p = pyramid_pool(&t);
    match a.kept {
        Some(kept) => {
            let kept = KeptSet::new(kept)?;
            println!("{}", format_values(&flatten(&p, &kept)?));
        }
        None => {
            for row in p.rows() {
                println!("{}", format_values(row));
            }
        }
    }
    Ok(())
}
