use std::time::Instant;

use anyhow::{bail, Result};
use pmn_core::baselines::{binomial, exhaustive_select, nearest_select, oracle_power, power_problem_from};
use pmn_core::config::{random_nodes, ScenarioConfig};
use pmn_core::dan::{dan_forward, DanParams};
use pmn_core::fisher::SelectCtx;
use pmn_core::instances::{random_instance, uniform_start};
use pmn_core::mm_admm::{mm_admm_select, CurvatureRule, MMConfig};
use pmn_core::power::solve_water_level;
use pmn_core::seeds::stream_rng;
use serde::Serialize;

use crate::args::BenchArgs;
use crate::common::{csv_writer, ensure_dir, load_config, load_params, parse_list};
use crate::manifest::ManifestBuilder;

/// Exhaustive search is only timed when it stays this small.
const ES_BENCH_CAP: u128 = 100_000;

#[derive(Clone, Debug, Serialize)]
pub struct BenchRow {
    pub method: String,
    pub n: usize,
    pub q: usize,
    pub repeat: usize,
    pub min_s: f64,
    pub median_s: f64,
}

fn time<F: FnMut() -> Result<()>>(repeat: usize, mut f: F) -> Result<(f64, f64)> {
    let mut samples = Vec::with_capacity(repeat);
    for _ in 0..repeat {
        let t = Instant::now();
        f()?;
        samples.push(t.elapsed().as_secs_f64());
    }
    samples.sort_by(f64::total_cmp);
    let mid = samples.len() / 2;
    let median = if samples.len() % 2 == 1 { samples[mid] } else { 0.5 * (samples[mid - 1] + samples[mid]) };
    Ok((samples[0], median))
}

/// Selector timings on one instance per node count (every method sees the
/// same instance), then power-allocator timings for `q` targets.
pub fn bench_rows(
    cfg: &ScenarioConfig,
    seed: u64,
    sizes: &[usize],
    repeat: usize,
    q: usize,
    params: &DanParams,
) -> Result<Vec<BenchRow>> {
    if repeat == 0 {
        bail!("--repeat must be positive");
    }
    let model = cfg.motion_model()?;
    let j0 = cfg.initial_fisher()?.j;
    let mm = MMConfig::default();
    let mut rows = Vec::new();
    for &n in sizes {
        let mut sc = cfg.scenario()?;
        let mut rng = stream_rng(seed, "bench", n as u64);
        sc.nodes = random_nodes(&mut rng, n, cfg.region_half_width);
        sc.validate()?;
        let inst = random_instance(&mut rng, &sc, &model, &j0, cfg.region_half_width)?;
        let ctx = inst.ctx(&sc)?;
        let u0 = uniform_start(n, sc.nmax);
        let mut push = |method: &str, (min_s, median_s): (f64, f64)| {
            rows.push(BenchRow { method: method.into(), n, q: 1, repeat, min_s, median_s });
        };
        push("dan", time(repeat, || Ok(dan_forward(&ctx, &u0, params).map(drop)?))?);
        push("mm-admm-1", time(repeat, || Ok(mm_admm_select(&ctx, &u0, CurvatureRule::Trace, &mm).map(drop)?))?);
        push("mm-admm-2", time(repeat, || Ok(mm_admm_select(&ctx, &u0, CurvatureRule::MaxEig, &mm).map(drop)?))?);
        push("nearest", time(repeat, || {
            nearest_select(&sc, &inst.state, sc.nmax);
            Ok(())
        })?);
        if binomial(n, sc.nmax) <= ES_BENCH_CAP {
            push("es", time(repeat, || Ok(exhaustive_select(&ctx, sc.nmax, ES_BENCH_CAP).map(drop)?))?);
        }
    }

    let sc = cfg.scenario()?;
    let mut pt_cfg = cfg.clone();
    // Keep the budget feasible for q targets at the configured floor.
    pt_cfg.pt_dbm = cfg.pt_dbm.max(cfg.pmin_dbm + 10.0 * (q as f64).log10() + 1.0);
    let pt = pt_cfg.scenario()?.pt;
    let mut rng = stream_rng(seed, "bench-power", q as u64);
    let mut ctxs: Vec<SelectCtx> = Vec::new();
    let mut sels = Vec::new();
    for _ in 0..q {
        let inst = random_instance(&mut rng, &sc, &model, &j0, cfg.region_half_width)?;
        sels.push(nearest_select(&sc, &inst.state, sc.nmax));
        ctxs.push(inst.ctx(&sc)?);
    }
    let prob = power_problem_from(&ctxs, &sels, pt, sc.pmin)?;
    let n = sc.num_nodes();
    for (method, t) in [
        ("fpwf", time(repeat, || Ok(solve_water_level(&prob).map(drop)?))?),
        ("oracle", time(repeat, || Ok(oracle_power(&prob).map(drop)?))?),
    ] {
        rows.push(BenchRow { method: method.into(), n, q, repeat, min_s: t.0, median_s: t.1 });
    }
    Ok(rows)
}

fn median_of(rows: &[BenchRow], method: &str, n: usize) -> Option<f64> {
    rows.iter().find(|r| r.method == method && r.n == n).map(|r| r.median_s)
}

/// Human-readable relative-speed checks; `Err` lists the failures.
pub fn speed_checks(rows: &[BenchRow], sizes: &[usize]) -> std::result::Result<Vec<String>, Vec<String>> {
    let mut ok = Vec::new();
    let mut bad = Vec::new();
    for &n in sizes {
        let dan = median_of(rows, "dan", n).unwrap_or(f64::INFINITY);
        for mm in ["mm-admm-1", "mm-admm-2"] {
            let t = median_of(rows, mm, n).unwrap_or(0.0);
            let line = format!("N={n}: dan {dan:.3e} s vs {mm} {t:.3e} s");
            if dan < t { ok.push(line) } else { bad.push(line) }
        }
    }
    let fp = rows.iter().find(|r| r.method == "fpwf").map(|r| r.median_s).unwrap_or(f64::INFINITY);
    let or = rows.iter().find(|r| r.method == "oracle").map(|r| r.median_s).unwrap_or(0.0);
    let line = format!("fpwf {fp:.3e} s vs oracle {or:.3e} s");
    if fp < or { ok.push(line) } else { bad.push(line) }
    if bad.is_empty() { Ok(ok) } else { Err(bad) }
}

pub fn cmd_bench(args: &BenchArgs) -> Result<()> {
    let cfg = load_config(&args.common)?;
    let sizes: Vec<usize> = parse_list(&args.sizes)?;
    let mut manifest = ManifestBuilder::new("bench", &args.common, args)?;
    manifest.hash_bytes(serde_json::to_string(&cfg)?.as_bytes());
    let params = match &args.params {
        Some(p) => {
            let file = load_params(Some(p))?;
            manifest.hash_bytes(serde_json::to_string(&file)?.as_bytes());
            file.params
        }
        None => DanParams::default(),
    };
    let rows = bench_rows(&cfg, args.common.seed, &sizes, args.repeat, args.targets, &params)?;
    let out = &args.common.out;
    ensure_dir(out)?;
    let mut w = csv_writer(&out.join("bench.csv"))?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;
    manifest.write(out, vec!["bench.csv".into()])?;
    match speed_checks(&rows, &sizes) {
        Ok(lines) => {
            for l in lines {
                eprintln!("ok: {l}");
            }
            Ok(())
        }
        Err(lines) => bail!("relative-speed check failed:\n  {}", lines.join("\n  ")),
    }
}
