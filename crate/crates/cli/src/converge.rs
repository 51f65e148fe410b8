use anyhow::{bail, Context, Result};
use pmn_core::dan::dan_forward;
use pmn_core::fisher::{meas_info_set, prior_info, SelectCtx};
use pmn_core::instances::uniform_start;
use pmn_core::mm_admm::{mm_admm_select, CurvatureRule, MMConfig, SelectTrace};
use serde::Serialize;

use crate::args::ConvergeArgs;
use crate::common::{csv_writer, ensure_dir, load_config, load_params};
use crate::manifest::ManifestBuilder;

#[derive(Serialize)]
struct TraceRow<'a> {
    method: &'a str,
    iter: usize,
    cost: f64,
    /// Empty for the starting point.
    objective: Option<f64>,
}

/// Cost traces must not rise by more than this between iterations.
const MONOTONE_SLACK: f64 = 1e-8;

pub fn cmd_converge(args: &ConvergeArgs) -> Result<()> {
    let cfg = load_config(&args.common)?;
    let sc = cfg.scenario()?;
    let model = cfg.motion_model()?;
    let targets = cfg.initial_targets();
    let target = targets
        .get(args.target)
        .with_context(|| format!("--target {} out of range for {} configured targets", args.target, targets.len()))?;
    let file = load_params(args.params.as_deref())?;
    let mut manifest = ManifestBuilder::new("converge", &args.common, args)?;
    manifest.hash_bytes(serde_json::to_string(&cfg)?.as_bytes());
    manifest.hash_bytes(serde_json::to_string(&file)?.as_bytes());

    let s_pred = model.predict(target);
    let ctx = SelectCtx {
        jp: prior_info(&model, &cfg.initial_fisher()?.j)?,
        m: meas_info_set(&sc, &s_pred)?,
        p: sc.pt / targets.len() as f64,
    };
    let u0 = uniform_start(sc.num_nodes(), sc.nmax);
    let mm = MMConfig::default();
    let mut traces: Vec<(&str, SelectTrace)> = Vec::new();
    for (name, rule) in [("mm-admm-1", CurvatureRule::Trace), ("mm-admm-2", CurvatureRule::MaxEig)] {
        let (_, trace) = mm_admm_select(&ctx, &u0, rule, &mm)?;
        let mut prev = trace.initial_cost;
        for c in &trace.cost_per_iter {
            if *c > prev + MONOTONE_SLACK {
                bail!("{name} cost increased from {prev} to {c}");
            }
            prev = *c;
        }
        traces.push((name, trace));
    }
    traces.push(("dan", dan_forward(&ctx, &u0, &file.params)?.trace));

    let out = &args.common.out;
    ensure_dir(out)?;
    let mut w = csv_writer(&out.join("converge.csv"))?;
    for (method, trace) in &traces {
        w.serialize(TraceRow { method, iter: 0, cost: trace.initial_cost, objective: None })?;
        for (i, (c, o)) in trace.cost_per_iter.iter().zip(&trace.objective_per_iter).enumerate() {
            w.serialize(TraceRow { method, iter: i + 1, cost: *c, objective: Some(*o) })?;
        }
    }
    w.flush()?;
    manifest.write(out, vec!["converge.csv".into()])?;
    Ok(())
}
