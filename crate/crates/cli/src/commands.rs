use std::path::Path;

use anyhow::{bail, ensure, Context, Result};

use drnk::data::{Curriculum, PersonImage};
use drnk::dataset::{ingest, split, synth_generate, DatasetIndex, SynthParams};
use drnk::eval::{
    cmc_from_scores, cmc_trials, fuse_scores, multishot_aggregate, open_world_sweep, pick_targets, score_matrix,
    write_open_world_csv, Aggregate, CmcCurve, Normalization, ScoreMatrix, TiePolicy,
};
use drnk::net::{build_network, load_checkpoint, save_checkpoint, Checkpoint, Init, Network, NetworkConfig, Preset};
use drnk::seed;
use drnk::train::{fine_tune, train, TrainConfig};

use crate::args::{Cli, Command, DataArgs, EvalData, NetArgs, OptimArgs};
use crate::manifest::{Outputs, RunManifest};

const INIT_STREAM: u64 = 0x696e_6974;

pub fn run(cli: &Cli) -> Result<()> {
    let seed = cli.global.seed;
    match &cli.command {
        Command::Synth(a) => {
            let mut out = Outputs::create(&a.out)?;
            out.write_manifest(&RunManifest::new(cli))?;
            let d = SynthParams::desk();
            let p = SynthParams {
                n_identities: a.identities,
                images_per_view: a.per_view,
                height: a.height,
                width: a.width,
                brightness_shift: a.brightness.unwrap_or(d.brightness_shift),
                hue_shift: a.hue.unwrap_or(d.hue_shift),
                jitter: a.jitter.unwrap_or(d.jitter),
                noise: a.noise.unwrap_or(d.noise),
                clutter: a.clutter.unwrap_or(d.clutter),
                first_identity: a.first_identity,
                seed,
            };
            let index = synth_generate(&p)?;
            for cam in index.cameras() {
                out.file(&format!("cam_{cam}"));
            }
            index.export(out.dir())?;
            println!(
                "wrote {} images of {} identities to {}",
                index.entries().len(),
                index.identities().len(),
                a.out.display()
            );
            out.commit();
        }
        Command::Train(a) => {
            let mut out = Outputs::create(&a.out)?;
            out.write_manifest(&RunManifest::new(cli))?;
            let config = network_config(&a.net)?;
            let mut net = build_network::<f32>(config, Init::FanInNormal, seed::derive(seed, &[INIT_STREAM]))?;
            let (train_set, test_set, split_note) = load_split(&a.data, seed)?;
            let cfg = train_config(&a.optim, seed, &mut out)?;
            let heldout = heldout_if_usable(&test_set, &cfg);
            record_split(&mut net, &split_note);
            let log = train(&mut net, &train_set, &cfg, heldout)?;
            save_checkpoint(&net, out.file("checkpoint.drnk"))?;
            log.save_csv(out.file("loss.csv"))?;
            report_loss(&log);
            out.commit();
        }
        Command::Finetune(a) => {
            let mut out = Outputs::create(&a.out)?;
            out.write_manifest(&RunManifest::new(cli))?;
            let pretrained = Checkpoint::load(&a.checkpoint)
                .with_context(|| format!("loading checkpoint {}", a.checkpoint.display()))?;
            let expected = network_config(&a.net)?;
            let (train_set, test_set, split_note) = load_split(&a.data, seed)?;
            let cfg = train_config(&a.optim, seed, &mut out)?;
            let heldout = heldout_if_usable(&test_set, &cfg);
            let (mut net, log) = fine_tune::<f32>(&pretrained, &expected, &train_set, &cfg, heldout, &mut ())?;
            record_split(&mut net, &split_note);
            save_checkpoint(&net, out.file("checkpoint.drnk"))?;
            log.save_csv(out.file("loss.csv"))?;
            report_loss(&log);
            out.commit();
        }
        Command::Eval(a) => {
            let mut out = Outputs::create(&a.data.out)?;
            out.write_manifest(&RunManifest::new(cli))?;
            let m = scores_for(&a.data)?;
            if a.scores {
                m.save_csv(out.file("scores.csv"))?;
            }
            let curve = closed_world(&m, a.multishot.as_deref(), a.trials, seed)?;
            curve.save_csv(out.file("cmc.csv"))?;
            report_curve(&curve);
            out.commit();
        }
        Command::Openworld(a) => {
            let mut out = Outputs::create(&a.data.out)?;
            out.write_manifest(&RunManifest::new(cli))?;
            let m = scores_for(&a.data)?;
            let targets = pick_targets(&m, a.targets, seed)?;
            let points = open_world_sweep(&m, &targets, None)?;
            write_open_world_csv(&points, out.file("openworld.csv"))?;
            println!("targets {targets:?}, {} sweep points", points.len());
            out.commit();
        }
        Command::Fuse(a) => {
            let mut out = Outputs::create(&a.out)?;
            out.write_manifest(&RunManifest::new(cli))?;
            let load = |p: &Path| ScoreMatrix::load_csv(p).with_context(|| format!("reading scores {}", p.display()));
            let norm: Normalization = a.normalize.parse()?;
            let fused = fuse_scores(&load(&a.first)?, &load(&a.second)?, norm)?;
            fused.save_csv(out.file("fused_scores.csv"))?;
            let curve = closed_world(&fused, a.multishot.as_deref(), a.trials, seed)?;
            curve.save_csv(out.file("cmc.csv"))?;
            report_curve(&curve);
            out.commit();
        }
        Command::Scores(a) => {
            let mut out = Outputs::create(&a.data.out)?;
            out.write_manifest(&RunManifest::new(cli))?;
            let m = scores_for(&a.data)?;
            m.save_csv(out.file("scores.csv"))?;
            println!("{} probes x {} gallery images", m.probes().len(), m.gallery().len());
            out.commit();
        }
    }
    Ok(())
}

fn network_config(a: &NetArgs) -> Result<NetworkConfig> {
    let preset: Preset = a.preset.parse()?;
    let mut config = NetworkConfig::from_preset(preset)?;
    if let Some(crop) = a.crop {
        ensure!(
            crop <= config.stitch_side,
            "crop {crop} exceeds the stitched side {}",
            config.stitch_side
        );
        config.input_side = crop;
    }
    if let Some(rate) = a.dropout {
        config = config.with_dropout(rate);
    }
    config.shape_plan()?;
    Ok(config)
}

fn train_config(a: &OptimArgs, seed: u64, out: &mut Outputs) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::new(a.epochs, seed);
    cfg.learning_rate = a.lr;
    cfg.momentum = a.momentum;
    cfg.weight_decay = a.weight_decay;
    cfg.batch_units = a.batch_units;
    cfg.cross_view_relaxed = a.relax_cross_view;
    if let Some(c) = &a.curriculum {
        cfg.curriculum = c.parse::<Curriculum>()?;
    }
    if let Some(every) = a.snapshot_every {
        cfg.snapshot_every = Some(every);
        cfg.snapshot_dir = Some(out.dir().to_path_buf());
        for e in (every..=a.epochs).step_by(every.max(1)) {
            out.file(&format!("snap_{e}.drnk"));
        }
    }
    Ok(cfg)
}

struct SplitNote {
    dataset: String,
    fraction: f64,
    seed: u64,
}

fn load_split(a: &DataArgs, seed: u64) -> Result<(Vec<PersonImage>, Vec<PersonImage>, SplitNote)> {
    let index = ingest(&a.dataset).with_context(|| format!("reading dataset {}", a.dataset.display()))?;
    let split_seed = a.split_seed.unwrap_or(seed);
    let s = split(&index, a.split, split_seed)?;
    let train_set = index.subset(&s.train)?.load_all()?;
    let test_set = index.subset(&s.test)?.load_all()?;
    println!(
        "{}: {} training and {} test identities",
        index.name,
        s.train.len(),
        s.test.len()
    );
    Ok((
        train_set,
        test_set,
        SplitNote {
            dataset: index.name.clone(),
            fraction: a.split,
            seed: split_seed,
        },
    ))
}

fn record_split<T>(net: &mut Network<T>, note: &SplitNote) {
    let extra = &mut net.meta.extra;
    extra.insert("dataset".into(), note.dataset.clone());
    extra.insert("split_fraction".into(), format!("{:?}", note.fraction));
    extra.insert("split_seed".into(), note.seed.to_string());
}

/// The test split is used for held-out loss only when it can fill reference sets.
fn heldout_if_usable<'a>(test_set: &'a [PersonImage], cfg: &TrainConfig) -> Option<&'a [PersonImage]> {
    let ids: std::collections::BTreeSet<u32> = test_set.iter().map(PersonImage::identity).collect();
    (ids.len() > cfg.curriculum.max_size()).then_some(test_set)
}

/// Scores first-camera probes against second-camera gallery images.
fn scores_for(a: &EvalData) -> Result<ScoreMatrix> {
    let net: Network<f32> =
        load_checkpoint(&a.checkpoint).with_context(|| format!("loading checkpoint {}", a.checkpoint.display()))?;
    let index = ingest(&a.dataset).with_context(|| format!("reading dataset {}", a.dataset.display()))?;
    let index = if a.all_identities {
        index
    } else {
        test_subset(&index, &net)?
    };
    let cams = index.cameras();
    ensure!(cams.len() >= 2, "dataset needs two cameras, found {:?}", cams);
    let images = index.load_all()?;
    let probes: Vec<PersonImage> = images.iter().filter(|i| i.camera() == cams[0]).cloned().collect();
    let gallery: Vec<PersonImage> = images.iter().filter(|i| i.camera() == cams[1]).cloned().collect();
    Ok(score_matrix(&net, &probes, &gallery, a.tta)?)
}

fn test_subset(index: &DatasetIndex, net: &Network<f32>) -> Result<DatasetIndex> {
    let extra = &net.meta.extra;
    let (Some(fraction), Some(split_seed)) = (extra.get("split_fraction"), extra.get("split_seed")) else {
        bail!("checkpoint records no training split; pass --all-identities to score every identity");
    };
    let s = split(index, fraction.parse()?, split_seed.parse()?)?;
    Ok(index.subset(&s.test)?)
}

fn closed_world(m: &ScoreMatrix, multishot: Option<&str>, trials: usize, seed: u64) -> Result<CmcCurve> {
    Ok(match multishot {
        Some(rule) => cmc_from_scores(&multishot_aggregate(m, rule.parse::<Aggregate>()?)?, TiePolicy::Pessimistic)?,
        None => cmc_trials(m, trials, TiePolicy::Pessimistic, seed)?,
    })
}

fn report_loss(log: &drnk::train::LossLog) {
    if let (Some(first), Some(last)) = (log.epochs.first(), log.epochs.last()) {
        println!(
            "{} epochs, training loss {:.4} -> {:.4}",
            log.epochs.len(),
            first.train_loss,
            last.train_loss
        );
    }
}

fn report_curve(c: &CmcCurve) {
    let at = |k: usize| c.rank(k) * 100.0;
    println!("rank-1 {:.2}%  rank-5 {:.2}%  rank-10 {:.2}%", at(1), at(5), at(10));
}
