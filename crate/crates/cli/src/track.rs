use anyhow::{Context, Result};
use pmn_core::tracker::{
    monte_carlo_rmse, rmse_per_frame, run_monte_carlo, AoConfig, PowerMethod, Selector, TrackRecord, TrackSetup,
};
use serde::Serialize;

use crate::args::TrackArgs;
use crate::common::{config_fingerprint, csv_writer, ensure_dir, load_config, load_params, parse_list, parse_pt_sweep};
use crate::manifest::ManifestBuilder;

#[derive(Debug, Serialize)]
pub struct SummaryRow {
    pub method: String,
    pub power: String,
    pub pt_dbm: f64,
    pub nmc: usize,
    pub frames: u32,
    pub rmse: f64,
}

#[derive(Debug, Serialize)]
struct FrameRmseRow<'a> {
    method: &'a str,
    power: &'a str,
    pt_dbm: f64,
    frame: u32,
    rmse: f64,
}

#[derive(Debug, Serialize)]
struct TraceRow {
    trial: u64,
    frame: u32,
    target: usize,
    true_rx: f64,
    true_vx: f64,
    true_ry: f64,
    true_vy: f64,
    est_rx: f64,
    est_vx: f64,
    est_ry: f64,
    est_vy: f64,
    pcrlb_trace: f64,
    cost: f64,
    selected_nodes: String,
    power: f64,
}

fn write_traces(path: &std::path::Path, runs: &[TrackRecord]) -> Result<()> {
    let mut w = csv_writer(path)?;
    for run in runs {
        for r in &run.rows {
            w.serialize(TraceRow {
                trial: run.trial,
                frame: r.frame,
                target: r.target,
                true_rx: r.truth[0],
                true_vx: r.truth[1],
                true_ry: r.truth[2],
                true_vy: r.truth[3],
                est_rx: r.est[0],
                est_vx: r.est[1],
                est_ry: r.est[2],
                est_vy: r.est[3],
                pcrlb_trace: r.pcrlb_trace(),
                cost: r.cost,
                selected_nodes: r.selected.iter().map(|n| n.to_string()).collect::<Vec<_>>().join(";"),
                power: r.power,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn cmd_track(args: &TrackArgs) -> Result<()> {
    let base = load_config(&args.common)?;
    let selectors: Vec<Selector> = parse_list(&args.methods)?;
    let powers: Vec<PowerMethod> = parse_list(&args.power)?;
    let budgets = match &args.pt_dbm {
        Some(s) => parse_pt_sweep(s)?,
        None => vec![base.pt_dbm],
    };
    if args.nmc == 0 || args.frames == 0 {
        anyhow::bail!("--nmc and --frames must be positive");
    }

    let mut manifest = ManifestBuilder::new("track", &args.common, args)?;
    manifest.hash_bytes(serde_json::to_string(&base)?.as_bytes());
    let params = if selectors.contains(&Selector::Dan) {
        let file = load_params(args.params.as_deref())?;
        if file.scenario_fingerprint != config_fingerprint(&base)? {
            eprintln!("warning: parameters were trained on a different scenario configuration");
        }
        manifest.hash_bytes(serde_json::to_string(&file)?.as_bytes());
        Some(file.params)
    } else {
        None
    };

    let out = &args.common.out;
    ensure_dir(&out.join("traces"))?;
    let mut outputs = vec!["rmse_summary.csv".to_string(), "rmse_per_frame.csv".to_string()];
    let mut summary = csv_writer(&out.join("rmse_summary.csv"))?;
    let mut per_frame = csv_writer(&out.join("rmse_per_frame.csv"))?;
    for &pt_dbm in &budgets {
        let mut cfg = base.clone();
        cfg.pt_dbm = pt_dbm;
        let setup = TrackSetup {
            sc: cfg.scenario().with_context(|| format!("budget {pt_dbm} dBm"))?,
            model: cfg.motion_model()?,
            targets0: cfg.initial_targets(),
            j0: cfg.initial_fisher()?.j,
            frames: args.frames,
        };
        for &sel in &selectors {
            for &power in &powers {
                let runs = run_monte_carlo(&setup, &AoConfig::new(sel, power), params.as_ref(), args.common.seed, args.nmc)
                    .with_context(|| format!("tracking with {} / {}", sel.name(), power.name()))?;
                let rmse = monte_carlo_rmse(&runs)?;
                eprintln!("{} / {} at {pt_dbm} dBm: RMSE {rmse:.4} m", sel.name(), power.name());
                summary.serialize(SummaryRow {
                    method: sel.name().into(),
                    power: power.name().into(),
                    pt_dbm,
                    nmc: args.nmc,
                    frames: args.frames,
                    rmse,
                })?;
                for (k, r) in rmse_per_frame(&runs)?.into_iter().enumerate() {
                    per_frame.serialize(FrameRmseRow {
                        method: sel.name(),
                        power: power.name(),
                        pt_dbm,
                        frame: k as u32 + 1,
                        rmse: r,
                    })?;
                }
                let name = format!("traces/track_{}_{}_{pt_dbm}dbm.csv", sel.name(), power.name());
                write_traces(&out.join(&name), &runs)?;
                outputs.push(name);
            }
        }
    }
    summary.flush()?;
    per_frame.flush()?;
    manifest.write(out, outputs)?;
    Ok(())
}
