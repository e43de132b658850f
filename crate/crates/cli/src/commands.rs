use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use neurodecode::harness::{
    self, ablation_csv, curve_csv, make_synthetic_offline_dataset, measure_training_memory,
    memory_csv, memory_model, run_ablation, save_checkpoint, to_mb, train_offline, trials_csv,
    AblationSetup, AblationVariant, BinnedDataset, OfflineMode, RunSummary,
};
use neurodecode::plasticity::OnlineLearner;
use neurodecode::sim::{
    run_disruption_protocol, run_nopretrain_protocol, DecoderKind, DisruptionKind, DisruptionSpec,
};
use neurodecode::snn::{Architecture, Network};
use serde_json::json;

use crate::config::ExperimentConfig;
use crate::Failure;

fn usage<T>(r: Result<T>) -> std::result::Result<T, Failure> {
    r.map_err(Failure::Usage)
}

fn runtime<T>(r: Result<T>) -> std::result::Result<T, Failure> {
    r.map_err(Failure::Runtime)
}

pub struct Common {
    pub config: ExperimentConfig,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
}

fn write(out: &Path, name: &str, body: &str, summary: &mut RunSummary) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let path = out.join(name);
    fs::write(&path, body).with_context(|| format!("writing {}", path.display()))?;
    summary.outputs.push(name.to_string());
    Ok(())
}

fn finish(out: &Path, name: &str, summary: &RunSummary) -> Result<()> {
    summary.save(&out.join(name))?;
    println!(
        "wrote {} and {name} to {}",
        summary.outputs.join(", "),
        out.display()
    );
    Ok(())
}

pub enum DataSource {
    Synthetic(usize),
    File(PathBuf),
}

fn load_data(
    cfg: &ExperimentConfig,
    source: &DataSource,
) -> Result<(BinnedDataset, BinnedDataset)> {
    let o = &cfg.offline;
    let ds = match source {
        DataSource::Synthetic(n) => make_synthetic_offline_dataset(*n, &o.synthetic, o.data_seed)?,
        DataSource::File(p) => {
            BinnedDataset::load(p).with_context(|| format!("loading {}", p.display()))?
        }
    };
    let (train, val, _) = ds.split(o.train_fraction, o.val_fraction);
    if train.is_empty() || val.is_empty() {
        return Err(anyhow!(
            "dataset of {} bins is too small to split",
            ds.len()
        ));
    }
    if ds.n_channels() != o.arch.n_in {
        return Err(anyhow!(
            "dataset has {} channels but offline.arch expects {}",
            ds.n_channels(),
            o.arch.n_in
        ));
    }
    Ok((train, val))
}

pub fn train_offline_cmd(
    common: &Common,
    source: &DataSource,
    mode: Option<OfflineMode>,
    checkpoints: bool,
) -> std::result::Result<(), Failure> {
    let mut cfg = common.config.clone();
    if let Some(m) = mode {
        cfg.offline.training.mode = m;
    }
    let mode = cfg.offline.training.mode;
    let (train, val) = usage(load_data(&cfg, source))?;
    let mut summary =
        usage(RunSummary::new("train-offline", &cfg.offline, &common.seeds).map_err(Into::into))?;
    let mut curves = Vec::new();
    let mut rows = String::from("seed,mode,best_epoch,stopped_early,r_x,r_y\n");
    for &seed in &common.seeds {
        let mut net = Network::new(cfg.offline.arch, cfg.offline.lif, seed);
        let mut learner =
            usage(OnlineLearner::new(&net, cfg.offline.plasticity(mode)).map_err(Into::into))?;
        let report = runtime(
            train_offline(
                &mut net,
                &mut learner,
                &train,
                &val,
                &cfg.offline.training,
                seed,
            )
            .map_err(Into::into),
        )?;
        println!("seed {seed}: r_x {:.4} r_y {:.4}", report.r_x, report.r_y);
        rows.push_str(&format!(
            "{seed},{mode},{},{},{},{}\n",
            report.best_epoch.map_or(String::new(), |e| e.to_string()),
            u8::from(report.stopped_early),
            report.r_x,
            report.r_y
        ));
        if checkpoints {
            let name = format!("checkpoint_seed{seed}.bin");
            runtime(fs::create_dir_all(&common.out).map_err(Into::into))?;
            runtime(
                save_checkpoint(&common.out.join(&name), &net, Some(&learner)).map_err(Into::into),
            )?;
            summary.outputs.push(name);
        }
        curves.push((seed, report.curve));
    }
    runtime(write(
        &common.out,
        "offline_results.csv",
        &rows,
        &mut summary,
    ))?;
    runtime(write(
        &common.out,
        "offline_curve.csv",
        &curve_csv(&curves),
        &mut summary,
    ))?;
    runtime(finish(&common.out, "offline_summary.json", &summary))
}

pub fn closed_loop_cmd(
    common: &Common,
    protocol: &str,
    disruption: &str,
    intensity: f64,
    decoders: &[DecoderKind],
) -> std::result::Result<(), Failure> {
    let cfg = &common.config.closed_loop;
    let mut runs = Vec::new();
    let spec = match protocol {
        "disruption" => {
            let kind: DisruptionKind = usage(disruption.parse().map_err(anyhow::Error::from))?;
            Some(usage(
                DisruptionSpec::new(kind, intensity).map_err(anyhow::Error::from),
            )?)
        }
        "nopretrain" => None,
        other => {
            return Err(Failure::Usage(anyhow!(
                "unknown protocol '{other}' (expected disruption or nopretrain)"
            )))
        }
    };
    for &seed in &common.seeds {
        let run = match spec {
            Some(s) => {
                runtime(run_disruption_protocol(cfg, &[s], decoders, seed).map_err(Into::into))?
                    .pop()
                    .expect("one run per spec")
            }
            None => runtime(run_nopretrain_protocol(cfg, decoders, seed).map_err(Into::into))?,
        };
        let line: Vec<String> = decoders
            .iter()
            .map(|&d| {
                let t1 = run.times(d, 1);
                let t2 = run.times(d, 2);
                format!(
                    "{} {:.3}/{:.3}",
                    d.as_str(),
                    harness::mean_sem(&t1).0,
                    harness::mean_sem(&t2).0
                )
            })
            .collect();
        println!("seed {seed}: mean time phase1/phase2 {}", line.join(", "));
        runs.push(run);
    }
    let mut summary =
        usage(RunSummary::new("closed-loop", cfg, &common.seeds).map_err(Into::into))?;
    summary.metrics = json!({
        "protocol": protocol,
        "disruption": spec.map(|s| s.kind.to_string()),
        "intensity": spec.map(|s| s.intensity),
        "phase_boundary_trial": if spec.is_some() { cfg.phase1_trials } else { cfg.scratch_trials },
    });
    runtime(write(
        &common.out,
        "trials.csv",
        &trials_csv(&runs),
        &mut summary,
    ))?;
    runtime(finish(&common.out, "closed_loop_summary.json", &summary))
}

pub fn memory_cmd(
    arch: &str,
    timesteps: usize,
    measure: bool,
    seed: u64,
) -> std::result::Result<(), Failure> {
    let arch: Architecture = usage(arch.parse().map_err(anyhow::Error::from))?;
    let r = usage(memory_model(&arch, timesteps).map_err(anyhow::Error::from))?;
    println!("architecture        {arch}");
    println!("parameters          {}", r.param_count);
    println!("timesteps           {}", r.timesteps);
    println!("online total        {:.3} MB", to_mb(r.online_total()));
    println!("bptt static         {:.3} MB", to_mb(r.static_bytes_bptt));
    println!("bptt dynamic        {:.3} MB", to_mb(r.dynamic_bytes_bptt));
    println!("bptt total          {:.3} MB", to_mb(r.bptt_total()));
    println!(
        "online saving       {:.1} %",
        100.0 * (1.0 - r.online_total() as f64 / r.bptt_total() as f64)
    );
    if measure {
        let m = runtime(measure_training_memory(arch, timesteps, seed).map_err(Into::into))?;
        println!(
            "measured online aux {:.3} MB (f64)",
            to_mb(m.online_peak_aux_bytes)
        );
        println!(
            "measured bptt aux   {:.3} MB (f64)",
            to_mb(m.bptt_peak_aux_bytes)
        );
    }
    print!("{}", memory_csv(&[(arch, r)]));
    Ok(())
}

pub fn ablate_cmd(
    common: &Common,
    source: &DataSource,
    variants: &[AblationVariant],
) -> std::result::Result<(), Failure> {
    if variants.is_empty() {
        return Err(Failure::Usage(anyhow!("no ablation variants given")));
    }
    let cfg = &common.config;
    let (train, val) = usage(load_data(cfg, source))?;
    let mode = cfg.offline.training.mode;
    let setup = AblationSetup {
        arch: cfg.offline.arch,
        lif: cfg.offline.lif,
        plasticity: cfg.offline.plasticity(mode),
        offline: cfg.offline.training.clone(),
    };
    let rows =
        runtime(run_ablation(&setup, variants, &train, &val, &common.seeds).map_err(Into::into))?;
    for r in &rows {
        println!(
            "{} seed {}: r_x {:.4} r_y {:.4}",
            r.variant, r.seed, r.r_x, r.r_y
        );
    }
    let mut summary =
        usage(RunSummary::new("ablate", &cfg.offline, &common.seeds).map_err(Into::into))?;
    summary.metrics =
        json!({ "variants": variants.iter().map(|v| v.as_str()).collect::<Vec<_>>() });
    runtime(write(
        &common.out,
        "ablation.csv",
        &ablation_csv(&rows),
        &mut summary,
    ))?;
    runtime(finish(&common.out, "ablation_summary.json", &summary))
}
