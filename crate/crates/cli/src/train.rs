use std::io::Write;

use anyhow::{bail, Context, Result};
use pmn_core::baselines::{binomial, DEFAULT_ES_CAP};
use pmn_core::dan::{train_dan, DanParams, ParamsFile, TrainConfig, PARAMS_FORMAT_VERSION};
use pmn_core::instances::labelled_instances;
use serde::Serialize;

use crate::args::TrainArgs;
use crate::common::{config_fingerprint, csv_writer, ensure_dir, load_config, sha256_hex};
use crate::manifest::ManifestBuilder;

#[derive(Serialize)]
struct LossRow {
    epoch: usize,
    loss: f64,
}

pub fn cmd_train(args: &TrainArgs) -> Result<()> {
    let cfg = load_config(&args.common)?;
    let sc = cfg.scenario()?;
    if args.n_train == 0 {
        bail!("--n-train must be positive");
    }
    let subsets = binomial(sc.num_nodes(), sc.nmax);
    if subsets > DEFAULT_ES_CAP {
        bail!(
            "exhaustive-search labels need C({}, {}) = {subsets} subsets per instance, above the cap of {DEFAULT_ES_CAP}; lower the node count or --nmax",
            sc.num_nodes(),
            sc.nmax
        );
    }
    let scenario_fp = config_fingerprint(&cfg)?;
    let mut manifest = ManifestBuilder::new("train", &args.common, args)?;
    manifest.hash_bytes(serde_json::to_string(&cfg)?.as_bytes());

    let data = labelled_instances(
        &sc,
        &cfg.motion_model()?,
        &cfg.initial_fisher()?.j,
        cfg.region_half_width,
        args.n_train,
        args.common.seed,
        DEFAULT_ES_CAP,
        &scenario_fp,
    )
    .context("generating labelled instances")?;

    let out = &args.common.out;
    ensure_dir(out)?;
    let mut jsonl = Vec::new();
    for rec in &data {
        serde_json::to_writer(&mut jsonl, rec)?;
        jsonl.push(b'\n');
    }
    std::fs::File::create(out.join("dataset.jsonl"))?.write_all(&jsonl)?;

    let samples = data.iter().map(|d| d.sample(&sc)).collect::<pmn_core::Result<Vec<_>>>()?;
    let tcfg = TrainConfig {
        lr: args.lr,
        n_train: args.n_train,
        epochs: args.epochs,
        seed: args.common.seed,
        ..TrainConfig::default()
    };
    let outcome = train_dan(&samples, &DanParams::with_layers(args.layers), &tcfg).context("training")?;
    eprintln!("training loss {:.6} -> {:.6}", outcome.loss_curve[0], outcome.final_loss());

    ParamsFile {
        format_version: PARAMS_FORMAT_VERSION,
        params: outcome.params,
        seed: args.common.seed,
        scenario_fingerprint: scenario_fp,
        dataset_fingerprint: sha256_hex(&jsonl),
        train: tcfg,
        loss_curve: outcome.loss_curve.clone(),
    }
    .save(&out.join("params.json"))?;

    let mut w = csv_writer(&out.join("loss.csv"))?;
    for (epoch, loss) in outcome.loss_curve.iter().enumerate() {
        w.serialize(LossRow { epoch, loss: *loss })?;
    }
    w.flush()?;
    manifest.write(out, vec!["dataset.jsonl".into(), "params.json".into(), "loss.csv".into()])?;
    Ok(())
}
