//! Subcommand implementations: world generation, method dispatch,
//! replication-parallel runs, and table writing.

use crate::tables::{self, MergedRow, SeriesRow, TableFile};
use crate::{
    usage, CliError, CounterexampleArgs, IngestRunArgs, Method, ModelKind, ReportArgs,
    SimulateArgs, SweepKArgs, OUT_DIR_ENV,
};
use anyhow::{anyhow, Context, Result};
use rayon::prelude::*;
use sava_core::baselines::{run_baseline, PvalMethod, SpenderRule};
use sava_core::engine::{run_world_with_tolerance, DecisionRecord, EngineMode};
use sava_core::evidence::EvidenceKind;
use sava_core::ingest::{build_streams, filter_items, parse_records, ParseMode};
use sava_core::metrics::{aggregate, MetricsSeries};
use sava_core::simgen::{
    gen_counterexample1, gen_counterexample2, gen_world, replication_seed, DataModel, WorldConfig,
};
use sava_core::world::{Tolerance, World};
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

fn resolve_out_dir(explicit: &Option<PathBuf>) -> Result<PathBuf, CliError> {
    let dir = explicit
        .clone()
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("sava-out"));
    fs::create_dir_all(&dir)
        .with_context(|| format!("creating output directory {}", dir.display()))?;
    Ok(dir)
}

fn build_pool(threads: Option<usize>) -> Result<rayon::ThreadPool, CliError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        if n == 0 {
            return Err(usage("--threads must be at least 1"));
        }
        builder = builder.num_threads(n);
    }
    Ok(builder.build().map_err(|e| anyhow!(e))?)
}

fn check_unit_interval(name: &str, v: f64, open: bool) -> Result<(), CliError> {
    let ok = if open {
        v > 0.0 && v < 1.0
    } else {
        (0.0..=1.0).contains(&v)
    };
    if ok {
        Ok(())
    } else {
        Err(usage(format!("{name} = {v} is out of range")))
    }
}

struct MethodRun {
    series: MetricsSeries,
    log: Vec<DecisionRecord>,
}

/// Evidence construction and baseline p-value method per data model.
fn evidence_for(model: ModelKind, mu: f64, bound: f64, alpha: f64) -> EvidenceKind {
    match model {
        ModelKind::Truncgauss => EvidenceKind::HoeffdingBounded { bound, alpha },
        ModelKind::Gauss => EvidenceKind::GaussianLr { mu_abs: mu },
    }
}

fn pval_method_for(model: ModelKind) -> PvalMethod {
    match model {
        ModelKind::Truncgauss => PvalMethod::Wilcoxon,
        ModelKind::Gauss => PvalMethod::ZTest { sigma: 1.0 },
    }
}

struct EngineParams {
    alpha: f64,
    k: usize,
    alpha_a: f64,
    alpha_b: f64,
    k_a: usize,
    k_b: usize,
    tolerance: Tolerance,
}

fn engine_mode(method: Method, p: &EngineParams) -> Option<EngineMode> {
    match method {
        Method::Sava => Some(EngineMode::Symmetric {
            alpha: p.alpha,
            k: p.k,
        }),
        Method::SavaClassical => Some(EngineMode::Classical {
            alpha: p.alpha,
            k: p.k,
        }),
        Method::SavaArmspec => Some(EngineMode::ArmSpecific {
            alpha_a: p.alpha_a,
            alpha_b: p.alpha_b,
            k_a: p.k_a,
            k_b: p.k_b,
        }),
        Method::SavaSpecial => Some(EngineMode::SavaSpecial {
            alpha: p.alpha,
            k: p.k,
        }),
        Method::Method1 => Some(EngineMode::AdversarialMethod1 {
            alpha: p.alpha,
            k: p.k,
        }),
        Method::Method2 => Some(EngineMode::AdversarialMethod2 { alpha: p.alpha }),
        _ => None,
    }
}

fn run_method(
    method: Method,
    world: &World,
    params: &EngineParams,
    evidence: EvidenceKind,
    pvals: PvalMethod,
) -> Result<MethodRun> {
    if let Some(mode) = engine_mode(method, params) {
        let out = run_world_with_tolerance(mode, world, Some(evidence), params.tolerance)
            .with_context(|| format!("running {}", method.name()))?;
        Ok(MethodRun {
            series: out.series,
            log: out.log,
        })
    } else {
        let rule = match method {
            Method::LordPp => SpenderRule::LordPp,
            Method::Saffron => SpenderRule::Saffron,
            Method::Addis => SpenderRule::Addis,
            _ => unreachable!(),
        };
        let out = run_baseline(rule, world, pvals, params.alpha)
            .with_context(|| format!("running {}", method.name()))?;
        Ok(MethodRun {
            series: out.series,
            log: out.log,
        })
    }
}

fn series_rows(
    method: &str,
    series_list: &[MetricsSeries],
    max_points: usize,
) -> Result<Vec<SeriesRow>> {
    let agg = aggregate(series_list, max_points)?;
    let mut rows = Vec::with_capacity(agg.points.len() * 5);
    for p in &agg.points {
        let mut push = |metric: &str, value: f64, stderr: f64| {
            rows.push(SeriesRow {
                index: p.index,
                method: method.to_string(),
                metric: metric.to_string(),
                value,
                stderr,
            });
        };
        push("fsr", p.fsr, p.fsr_se);
        push("tsr", p.tsr, p.tsr_se);
        push("mfsr", p.mfsr, p.mfsr_se);
        push("mean_selected", p.mean_selected, 0.0);
        push("mean_fsr_hat", p.mean_fsr_hat, 0.0);
    }
    Ok(rows)
}

fn write_manifest(out_dir: &Path, runspec: &serde_json::Value) -> Result<()> {
    let manifest = serde_json::json!({
        "tool": "sava",
        "version": env!("CARGO_PKG_VERSION"),
        "runspec": runspec,
    });
    fs::write(
        out_dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )
    .context("writing manifest.json")?;
    Ok(())
}

/// Everything a replication-parallel benchmark needs besides the worlds.
struct BenchmarkPlan<'a> {
    out_dir: &'a Path,
    runspec: &'a serde_json::Value,
    methods: &'a [Method],
    reps: u64,
    params: &'a EngineParams,
    evidence: EvidenceKind,
    pvals: PvalMethod,
    max_points: usize,
    pool: &'a rayon::ThreadPool,
}

/// Shared driver: run every method over per-replication worlds, write one
/// series table per method plus the first replication's decision log.
fn run_benchmark(
    plan: &BenchmarkPlan<'_>,
    worlds: impl Fn(u64) -> Result<World> + Sync,
) -> Result<(), CliError> {
    let per_rep: Vec<BTreeMap<Method, MethodRun>> = plan.pool.install(|| {
        (0..plan.reps)
            .into_par_iter()
            .map(|rep| {
                let world = worlds(rep)?;
                let mut runs = BTreeMap::new();
                for &m in plan.methods {
                    runs.insert(
                        m,
                        run_method(m, &world, plan.params, plan.evidence, plan.pvals)?,
                    );
                }
                Ok::<_, anyhow::Error>(runs)
            })
            .collect::<Result<Vec<_>, _>>()
    })?;

    for &m in plan.methods {
        let series_list: Vec<MetricsSeries> =
            per_rep.iter().map(|runs| runs[&m].series.clone()).collect();
        let rows = series_rows(m.name(), &series_list, plan.max_points)?;
        let spec = plan.runspec.to_string();
        tables::write_table(
            &plan.out_dir.join(format!("{}_series.tsv", m.name())),
            &tables::render_series(&spec, &rows),
        )?;

        let mut log_spec = plan.runspec.clone();
        log_spec["method"] = serde_json::Value::String(m.name().to_string());
        log_spec["replication"] = serde_json::Value::from(0u64);
        tables::write_table(
            &plan.out_dir.join(format!("{}_rep0_log.tsv", m.name())),
            &tables::render_declog(&log_spec.to_string(), &per_rep[0][&m].log),
        )?;
    }
    write_manifest(plan.out_dir, plan.runspec)?;
    Ok(())
}

pub fn simulate(args: SimulateArgs) -> Result<(), CliError> {
    if args.reps == 0 {
        return Err(usage("--reps must be at least 1"));
    }
    if args.methods.is_empty() {
        return Err(usage("--methods must name at least one method"));
    }
    check_unit_interval("--alpha", args.alpha, true)?;
    check_unit_interval("--p", args.p, true).or_else(|_| {
        if args.p == 1.0 {
            Ok(())
        } else {
            Err(usage(format!("--p = {} is out of range", args.p)))
        }
    })?;
    check_unit_interval("--pi-plus", args.pi_plus, false)?;
    if args.mu <= 0.0 {
        return Err(usage("--mu must be positive"));
    }
    if args.horizon < 1 {
        return Err(usage("--horizon must be at least 1"));
    }
    if args.k == 0 {
        return Err(usage("--k must be at least 1"));
    }
    if args.b.is_some_and(|b| b < 1) {
        return Err(usage(
            "--b must be at least 1 (omit it for infinite tolerance)",
        ));
    }

    let out_dir = resolve_out_dir(&args.common.out_dir)?;
    let pool = build_pool(args.common.threads)?;
    let model = match args.model {
        ModelKind::Truncgauss => DataModel::TruncGauss {
            mu: args.mu,
            bound: args.bound,
        },
        ModelKind::Gauss => DataModel::Gauss { mu: args.mu },
    };
    let params = EngineParams {
        alpha: args.alpha,
        k: args.k,
        alpha_a: args.alpha_a.unwrap_or(args.alpha),
        alpha_b: args.alpha_b.unwrap_or(args.alpha),
        k_a: args.k_a.unwrap_or(args.k),
        k_b: args.k_b.unwrap_or(args.k),
        tolerance: args.b.map_or(Tolerance::Infinite, Tolerance::Finite),
    };
    let method_names: Vec<&str> = args.methods.iter().map(|m| m.name()).collect();
    let runspec = serde_json::json!({
        "command": "simulate",
        "model": format!("{:?}", args.model).to_lowercase(),
        "mu": args.mu,
        "bound": args.bound,
        "pi_plus": args.pi_plus,
        "horizon": args.horizon,
        "p": args.p,
        "alpha": args.alpha,
        "k": args.k,
        "alpha_a": params.alpha_a,
        "alpha_b": params.alpha_b,
        "k_a": params.k_a,
        "k_b": params.k_b,
        "b": args.b,
        "reps": args.reps,
        "seed": args.common.seed,
        "methods": method_names,
        "max_points": args.common.max_points,
    });

    let seed = args.common.seed;
    let horizon = args.horizon;
    let p = args.p;
    let pi_plus = args.pi_plus;
    run_benchmark(
        &BenchmarkPlan {
            out_dir: &out_dir,
            runspec: &runspec,
            methods: &args.methods,
            reps: args.reps,
            params: &params,
            evidence: evidence_for(args.model, args.mu, args.bound, args.alpha),
            pvals: pval_method_for(args.model),
            max_points: args.common.max_points,
            pool: &pool,
        },
        move |rep| {
            gen_world(&WorldConfig {
                horizon,
                arrival_prob: p,
                pi_plus,
                model,
                seed: replication_seed(seed, rep),
            })
            .map_err(anyhow::Error::from)
        },
    )
}

pub fn counterexample(args: CounterexampleArgs) -> Result<(), CliError> {
    if !matches!(args.which, 1 | 2) {
        return Err(usage(format!("--which must be 1 or 2, got {}", args.which)));
    }
    if args.reps == 0 {
        return Err(usage("--reps must be at least 1"));
    }
    check_unit_interval("--alpha", args.alpha, true)?;
    let methods = args.methods.clone().unwrap_or_else(|| match args.which {
        1 => vec![Method::Method1, Method::SavaSpecial, Method::Sava],
        _ => vec![Method::Method2, Method::Sava, Method::SavaSpecial],
    });
    if methods.is_empty() {
        return Err(usage("--methods must name at least one method"));
    }
    if let Some(b) = methods.iter().find(|m| m.is_baseline()) {
        return Err(usage(format!(
            "{} cannot run on a counterexample world (static p-values, no observation stream)",
            b.name()
        )));
    }

    let out_dir = resolve_out_dir(&args.common.out_dir)?;
    let pool = build_pool(args.common.threads)?;
    let params = EngineParams {
        alpha: args.alpha,
        k: args.k,
        alpha_a: args.alpha,
        alpha_b: args.alpha,
        k_a: args.k,
        k_b: args.k,
        tolerance: Tolerance::Infinite,
    };
    let method_names: Vec<&str> = methods.iter().map(|m| m.name()).collect();
    let runspec = serde_json::json!({
        "command": "counterexample",
        "which": args.which,
        "alpha": args.alpha,
        "k": args.k,
        "reps": args.reps,
        "seed": args.common.seed,
        "methods": method_names,
        "max_points": args.common.max_points,
    });

    let seed = args.common.seed;
    let which = args.which;
    run_benchmark(
        &BenchmarkPlan {
            out_dir: &out_dir,
            runspec: &runspec,
            methods: &methods,
            reps: args.reps,
            params: &params,
            // Counterexample worlds carry static p-values; the evidence
            // kind is never consulted.
            evidence: EvidenceKind::HoeffdingBounded {
                bound: 2.0,
                alpha: args.alpha,
            },
            pvals: PvalMethod::Wilcoxon,
            max_points: args.common.max_points,
            pool: &pool,
        },
        move |rep| {
            let world_seed = replication_seed(seed, rep);
            let world = match which {
                1 => gen_counterexample1(world_seed)?.0,
                _ => gen_counterexample2(world_seed)?.0,
            };
            Ok(world)
        },
    )
}

pub fn sweep_k(args: SweepKArgs) -> Result<(), CliError> {
    if args.reps == 0 {
        return Err(usage("--reps must be at least 1"));
    }
    if args.k_list.is_empty() || args.p_list.is_empty() {
        return Err(usage("--k-list and --p-list must be non-empty"));
    }
    check_unit_interval("--alpha", args.alpha, true)?;
    for &p in &args.p_list {
        if !(p > 0.0 && p <= 1.0) {
            return Err(usage(format!("arrival probability {p} out of range")));
        }
    }
    if args.k_list.contains(&0) {
        return Err(usage("k values must be at least 1"));
    }

    let out_dir = resolve_out_dir(&args.common.out_dir)?;
    let pool = build_pool(args.common.threads)?;
    let runspec = serde_json::json!({
        "command": "sweep-k",
        "k_list": args.k_list,
        "p_list": args.p_list,
        "model": format!("{:?}", args.model).to_lowercase(),
        "mu": args.mu,
        "bound": args.bound,
        "pi_plus": args.pi_plus,
        "horizon": args.horizon,
        "alpha": args.alpha,
        "reps": args.reps,
        "seed": args.common.seed,
    });

    let model = match args.model {
        ModelKind::Truncgauss => DataModel::TruncGauss {
            mu: args.mu,
            bound: args.bound,
        },
        ModelKind::Gauss => DataModel::Gauss { mu: args.mu },
    };
    let evidence = evidence_for(args.model, args.mu, args.bound, args.alpha);

    let mut rows = Vec::new();
    for (pi, &p) in args.p_list.iter().enumerate() {
        let worlds: Vec<World> = pool.install(|| {
            (0..args.reps)
                .into_par_iter()
                .map(|rep| {
                    gen_world(&WorldConfig {
                        horizon: args.horizon,
                        arrival_prob: p,
                        pi_plus: args.pi_plus,
                        model,
                        seed: replication_seed(
                            args.common.seed.wrapping_add(1000 * (pi as u64 + 1)),
                            rep,
                        ),
                    })
                    .map_err(anyhow::Error::from)
                })
                .collect::<Result<Vec<_>, _>>()
        })?;
        for &k in &args.k_list {
            let series: Vec<MetricsSeries> = pool.install(|| {
                worlds
                    .par_iter()
                    .map(|world| {
                        run_world_with_tolerance(
                            EngineMode::Symmetric {
                                alpha: args.alpha,
                                k,
                            },
                            world,
                            Some(evidence),
                            Tolerance::Infinite,
                        )
                        .map(|out| out.series)
                        .map_err(anyhow::Error::from)
                    })
                    .collect::<Result<Vec<_>, _>>()
            })?;
            // Final-grid-time summary for this (k, p) cell.
            let agg = aggregate(&series, usize::MAX).map_err(anyhow::Error::from)?;
            let last = agg.points.last().expect("non-empty series");
            let cell = format!("sava k={k} p={p}");
            rows.push(SeriesRow {
                index: last.index,
                method: cell.clone(),
                metric: "fsr".into(),
                value: last.fsr,
                stderr: last.fsr_se,
            });
            rows.push(SeriesRow {
                index: last.index,
                method: cell,
                metric: "tsr".into(),
                value: last.tsr,
                stderr: last.tsr_se,
            });
        }
    }
    tables::write_table(
        &out_dir.join("sweep_series.tsv"),
        &tables::render_series(&runspec.to_string(), &rows),
    )?;
    write_manifest(&out_dir, &runspec)?;
    Ok(())
}

pub fn ingest_run(args: IngestRunArgs) -> Result<(), CliError> {
    if args.methods.is_empty() {
        return Err(usage("--methods must name at least one method"));
    }
    check_unit_interval("--alpha", args.alpha, true)?;
    if args.k == 0 {
        return Err(usage("--k must be at least 1"));
    }

    let out_dir = resolve_out_dir(&args.common.out_dir)?;
    let text = fs::read_to_string(&args.input)
        .with_context(|| format!("reading {}", args.input.display()))?;
    let mode = if args.skip_bad_rows {
        ParseMode::Skip
    } else {
        ParseMode::Strict
    };
    let report = parse_records(&text, mode).map_err(anyhow::Error::from)?;
    for (line, reason) in &report.skipped {
        eprintln!("skipped line {line}: {reason}");
    }
    let records = filter_items(report.records, args.min_reviews);
    let replay = build_streams(&records).map_err(anyhow::Error::from)?;
    if replay.tied_arrivals {
        eprintln!("note: tied first-review timestamps; task order falls back to item id");
    }
    let world = replay.world;

    let runspec = serde_json::json!({
        "command": "ingest-run",
        "input": args.input.display().to_string(),
        "min_reviews": args.min_reviews,
        "alpha": args.alpha,
        "k": args.k,
        "bound": args.bound,
        "items": replay.items.len(),
        "methods": args.methods.iter().map(|m| m.name()).collect::<Vec<_>>(),
        "seed": args.common.seed,
    });

    let params = EngineParams {
        alpha: args.alpha,
        k: args.k,
        alpha_a: args.alpha,
        alpha_b: args.alpha,
        k_a: args.k,
        k_b: args.k,
        tolerance: Tolerance::Infinite,
    };
    let evidence = EvidenceKind::HoeffdingBounded {
        bound: args.bound,
        alpha: args.alpha,
    };
    for &m in &args.methods {
        let run = run_method(m, &world, &params, evidence, PvalMethod::Wilcoxon)
            .map_err(CliError::Runtime)?;
        let rows = series_rows(m.name(), &[run.series], args.common.max_points)?;
        let spec = runspec.to_string();
        tables::write_table(
            &out_dir.join(format!("{}_series.tsv", m.name())),
            &tables::render_series(&spec, &rows),
        )?;
        let mut log_spec = runspec.clone();
        log_spec["method"] = serde_json::Value::String(m.name().to_string());
        tables::write_table(
            &out_dir.join(format!("{}_log.tsv", m.name())),
            &tables::render_declog(&log_spec.to_string(), &run.log),
        )?;
    }

    let fixture =
        fs::File::create(out_dir.join("world_fixture.json")).context("creating world fixture")?;
    sava_core::world::write_fixture(&world, fixture).map_err(anyhow::Error::from)?;
    write_manifest(&out_dir, &runspec)?;
    Ok(())
}

pub fn report(args: ReportArgs) -> Result<(), CliError> {
    if args.inputs.is_empty() {
        return Err(usage("--inputs must name at least one table"));
    }
    let out_dir = resolve_out_dir(&args.out_dir)?;

    let mut merged: Vec<MergedRow> = Vec::new();
    let mut specs: Vec<serde_json::Value> = Vec::new();
    for path in &args.inputs {
        let run_id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "run".to_string());
        match tables::read_table(path).map_err(CliError::Runtime)? {
            TableFile::Series { runspec, rows } => {
                specs.push(serde_json::from_str(&runspec).unwrap_or(serde_json::Value::Null));
                merged.extend(rows.into_iter().map(|row| MergedRow {
                    run_id: run_id.clone(),
                    row,
                }));
            }
            TableFile::Merged { runspec, rows } => {
                specs.push(serde_json::from_str(&runspec).unwrap_or(serde_json::Value::Null));
                merged.extend(rows);
            }
            TableFile::Declog { .. } => {
                return Err(usage(format!(
                    "{} is a decision log; pass it via --trace-log instead",
                    path.display()
                )));
            }
        }
    }
    let merged_spec = serde_json::json!({
        "command": "report",
        "inputs": args.inputs.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
        "sources": specs,
    });
    let out_path = args.out.unwrap_or_else(|| out_dir.join("merged.tsv"));
    tables::write_table(
        &out_path,
        &tables::render_merged(&merged_spec.to_string(), &merged),
    )?;

    if let Some(log_path) = &args.trace_log {
        if args.trace_tasks.is_empty() {
            return Err(usage("--trace-tasks must name at least one task id"));
        }
        let (runspec, log) = match tables::read_table(log_path).map_err(CliError::Runtime)? {
            TableFile::Declog { runspec, rows } => (runspec, rows),
            _ => {
                return Err(usage(format!(
                    "{} is not a decision log",
                    log_path.display()
                )))
            }
        };
        let method = serde_json::from_str::<serde_json::Value>(&runspec)
            .ok()
            .and_then(|v| v.get("method").and_then(|m| m.as_str()).map(String::from))
            .unwrap_or_else(|| "trace".to_string());
        let mut rows = Vec::new();
        for rec in &log {
            if !args.trace_tasks.contains(&rec.task) {
                continue;
            }
            rows.push(SeriesRow {
                index: rec.step + 1,
                method: method.clone(),
                metric: format!("level_a:task{}", rec.task),
                value: rec.level_a,
                stderr: 0.0,
            });
            rows.push(SeriesRow {
                index: rec.step + 1,
                method: method.clone(),
                metric: format!("level_b:task{}", rec.task),
                value: rec.level_b,
                stderr: 0.0,
            });
        }
        if rows.is_empty() {
            return Err(usage("no log rows matched the requested task ids"));
        }
        let trace_path = args
            .trace_out
            .unwrap_or_else(|| out_dir.join("level_traces.tsv"));
        tables::write_table(&trace_path, &tables::render_series(&runspec, &rows))?;
    } else if !args.trace_tasks.is_empty() {
        return Err(usage("--trace-tasks requires --trace-log"));
    }
    Ok(())
}
