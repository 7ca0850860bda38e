//! Acceptance run. Prints one PASS/FAIL line per criterion and exits nonzero
//! if any fails. The end-to-end criteria share one benchmark protocol so the
//! long training runs are done once.

#[path = "../../core/tests/support/mod.rs"]
mod support;

use std::collections::BTreeSet;
use std::ops::ControlFlow;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use drnk::data::{Curriculum, PersonImage};
use drnk::dataset::{split, synth_generate, SynthParams};
use drnk::eval::{cmc_trials, fuse_scores, raw_pixel_scores, score_matrix, Normalization, ScoreMatrix, TiePolicy};
use drnk::net::{build_network, Checkpoint, Init, Network, NetworkConfig};
use drnk::train::{fine_tune, train_observed, EpochLoss, TrainConfig, TrainObserver};

/// Training and evaluation settings of the synthetic benchmark runs.
struct Protocol {
    epochs: usize,
    /// Epoch at which reference sets grow from 1 to 2.
    switch: usize,
    learning_rate: f64,
    batch_units: usize,
    weight_decay: f64,
    dropout: f64,
    tta: bool,
    /// Random single-shot galleries averaged per evaluation.
    trials: usize,
    /// Data seed of the benchmark and of its split.
    data_seed: u64,
}

const PROTOCOL: Protocol = Protocol {
    epochs: 30,
    switch: 3,
    learning_rate: 0.02,
    batch_units: 16,
    weight_decay: 5e-3,
    dropout: 0.0,
    tta: true,
    trials: 10,
    data_seed: 1,
};

const TARGET_RANK1: f64 = 0.85;
const EVAL_SEED: u64 = 7;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Outcome {
            pass,
            detail: detail.into(),
        }
    }
}

fn within(limit: Duration, start: Instant) -> (bool, String) {
    let t = start.elapsed();
    (t <= limit, format!("{:.1}s (limit {}s)", t.as_secs_f64(), limit.as_secs()))
}

// ---- criteria 1 to 7: oracles ----------------------------------------------------

fn ranking_gradients() -> Outcome {
    let start = Instant::now();
    let c = support::rank_gradient_check(1000, 7);
    let (fast, time) = within(Duration::from_secs(5), start);
    Outcome::new(
        c.gradient.error <= 1e-9 && c.antisymmetry <= 1e-12 && fast,
        format!(
            "{} derivatives, worst rel err {:.2e} (<= 1e-9), antisymmetry {:.2e} (<= 1e-12), {time}",
            c.gradient.cases, c.gradient.error, c.antisymmetry
        ),
    )
}

fn layer_adjoints() -> Outcome {
    let start = Instant::now();
    let checks = [
        ("conv", support::conv_check(24, 1), 1e-6),
        ("pool", support::pool_check(24, 2), 1e-6),
        ("lrn", support::lrn_check(24, 3), 1e-6),
        ("fc", support::fc_check(24, 4), 1e-8),
        ("dropout", support::dropout_check(24, 5), 1e-8),
    ];
    let (fast, time) = within(Duration::from_secs(60), start);
    let ok = checks.iter().all(|(_, w, tol)| w.cases >= 20 && w.error <= *tol);
    let parts: Vec<String> = checks
        .iter()
        .map(|(n, w, tol)| format!("{n} {} shapes {:.1e}/{tol:.0e}", w.cases, w.error))
        .collect();
    Outcome::new(ok && fast, format!("{}, {time}", parts.join(", ")))
}

fn network_gradient() -> Outcome {
    let start = Instant::now();
    let w = support::network_gradient_check(11, 512, 64);
    let (fast, time) = within(Duration::from_secs(120), start);
    Outcome::new(
        w.error <= 1e-4 && fast,
        format!("{} coordinates, worst rel err {:.2e} (<= 1e-4) at {}, {time}", w.cases, w.error, w.at),
    )
}

fn surrogate_bound() -> Outcome {
    let c = support::surrogate_grid(10_000, -50.0, 50.0);
    Outcome::new(
        c.bound_violations == 0 && c.reflection <= 1e-12 && c.at_zero <= 1e-15,
        format!(
            "{} bound violations, reflection err {:.2e} (<= 1e-12), |σ(0) - 1| = {:.1e}",
            c.bound_violations, c.reflection, c.at_zero
        ),
    )
}

fn cmc_oracles() -> Outcome {
    let c = support::cmc_oracle(500, 21);
    Outcome::new(
        c.mismatches == 0 && c.monotone && c.terminal_one,
        format!(
            "500 matrices, {} mismatches, monotone {}, terminal 1.0 {}",
            c.mismatches, c.monotone, c.terminal_one
        ),
    )
}

fn open_world() -> Outcome {
    let c = support::open_world_oracle(200, 22);
    Outcome::new(
        c.mismatches == 0 && c.endpoints && c.non_increasing,
        format!(
            "200 instances, {} mismatches, endpoints {}, non-increasing {}",
            c.mismatches, c.endpoints, c.non_increasing
        ),
    )
}

fn augmentation() -> Outcome {
    let c = support::augmentation_check(4, 23);
    Outcome::new(
        c.variants == 8 && c.distinct == 8 && c.deterministic && c.swap_error <= 1e-5,
        format!(
            "{} variants ({} distinct), deterministic {}, swap rel err {:.1e} (<= 1e-5)",
            c.variants, c.distinct, c.deterministic, c.swap_error
        ),
    )
}

// ---- the synthetic benchmark -----------------------------------------------------

struct Benchmark {
    train: Vec<PersonImage>,
    probes: Vec<PersonImage>,
    gallery: Vec<PersonImage>,
}

impl Benchmark {
    fn new(params: &SynthParams) -> Self {
        let index = synth_generate(params).unwrap();
        let s = split(&index, 0.5, PROTOCOL.data_seed).unwrap();
        let train = index.subset(&s.train).unwrap().load_all().unwrap();
        let test = index.subset(&s.test).unwrap().load_all().unwrap();
        let cams = index.cameras().to_vec();
        let by_cam = |c: &str| test.iter().filter(|i| i.camera() == c).cloned().collect();
        Benchmark {
            train,
            probes: by_cam(&cams[0]),
            gallery: by_cam(&cams[1]),
        }
    }

    fn scores(&self, net: &Network<f32>) -> ScoreMatrix {
        score_matrix(net, &self.probes, &self.gallery, PROTOCOL.tta).unwrap()
    }

    fn baseline(&self) -> ScoreMatrix {
        let (h, w) = (self.probes[0].height(), self.probes[0].width());
        raw_pixel_scores(&self.probes, &self.gallery, h, w).unwrap()
    }
}

fn rank1(m: &ScoreMatrix) -> f64 {
    cmc_trials(m, PROTOCOL.trials, TiePolicy::Pessimistic, EVAL_SEED).unwrap().rank1()
}

/// Rank-1 after every epoch, and the time spent measuring it.
struct Curve<'a> {
    bench: &'a Benchmark,
    rank1: Vec<f64>,
    tracking: Duration,
    /// End training once rank-1 reaches this.
    stop_at: Option<f64>,
}

impl<'a> Curve<'a> {
    fn new(bench: &'a Benchmark) -> Self {
        Curve {
            bench,
            rank1: Vec::new(),
            tracking: Duration::ZERO,
            stop_at: None,
        }
    }
}

impl TrainObserver<f32> for Curve<'_> {
    fn on_epoch(&mut self, net: &Network<f32>, _entry: &EpochLoss) -> ControlFlow<()> {
        let start = Instant::now();
        let r = rank1(&self.bench.scores(net));
        self.rank1.push(r);
        self.tracking += start.elapsed();
        match self.stop_at {
            Some(target) if r >= target => ControlFlow::Break(()),
            _ => ControlFlow::Continue(()),
        }
    }
}

struct Run {
    net: Network<f32>,
    rank1: Vec<f64>,
    /// Training plus one final evaluation; per-epoch tracking is excluded.
    seconds: f64,
}

impl Run {
    fn last(&self) -> f64 {
        *self.rank1.last().unwrap()
    }
}

/// First epoch (1-based) whose rank-1 reaches `target`.
fn epochs_to(curve: &[f64], target: f64) -> Option<usize> {
    curve.iter().position(|&r| r >= target).map(|i| i + 1)
}

fn config(seed: u64, curriculum: Curriculum) -> TrainConfig {
    let mut cfg = TrainConfig::new(PROTOCOL.epochs, seed);
    cfg.learning_rate = PROTOCOL.learning_rate;
    cfg.batch_units = PROTOCOL.batch_units;
    cfg.weight_decay = PROTOCOL.weight_decay;
    cfg.curriculum = curriculum;
    cfg
}

fn ratio_1_2() -> Curriculum {
    Curriculum::new(vec![(0, 1), (PROTOCOL.switch, 2)]).unwrap()
}

fn net_config() -> NetworkConfig {
    NetworkConfig::desk_small().with_dropout(PROTOCOL.dropout)
}

fn train_run(bench: &Benchmark, seed: u64, curriculum: Curriculum, track: bool) -> Run {
    let start = Instant::now();
    let mut net = build_network::<f32>(net_config(), Init::FanInNormal, seed).unwrap();
    let cfg = config(seed, curriculum);
    let mut curve = Curve::new(bench);
    let mut last_eval = Duration::ZERO;
    if track {
        train_observed(&mut net, &bench.train, &cfg, None, &mut curve).unwrap();
        // The final epoch's evaluation counts as the run's own evaluation.
        last_eval = curve.tracking / PROTOCOL.epochs as u32;
    } else {
        train_observed(&mut net, &bench.train, &cfg, None, &mut ()).unwrap();
        curve.rank1.push(rank1(&bench.scores(&net)));
    }
    Run {
        net,
        rank1: curve.rank1,
        seconds: (start.elapsed() - curve.tracking + last_eval).as_secs_f64(),
    }
}

struct Shared {
    bench: Benchmark,
    /// The criterion-8 run: seed 1, ratio 1:1 then 1:2, rank-1 tracked per epoch.
    main: Option<Run>,
}

impl Shared {
    fn main_run(&mut self) -> &Run {
        if self.main.is_none() {
            self.main = Some(train_run(&self.bench, 1, ratio_1_2(), true));
        }
        self.main.as_ref().unwrap()
    }
}

fn synthetic_end_to_end(s: &mut Shared) -> Outcome {
    let baseline = rank1(&s.bench.baseline());
    let run = s.main_run();
    let r1 = run.last();
    Outcome::new(
        r1 >= TARGET_RANK1 && r1 > baseline && run.seconds <= 900.0,
        format!(
            "held-out rank-1 {r1:.3} (>= {TARGET_RANK1}), raw-pixel baseline {baseline:.3}, {} epochs in {:.0}s (limit 900s)",
            PROTOCOL.epochs, run.seconds
        ),
    )
}

fn curriculum_effect(s: &mut Shared) -> Outcome {
    let mut pairs = Vec::new();
    for seed in 1..=3u64 {
        let with = if seed == 1 {
            s.main_run().last()
        } else {
            train_run(&s.bench, seed, ratio_1_2(), false).last()
        };
        let without = train_run(&s.bench, seed, Curriculum::constant(1).unwrap(), false).last();
        pairs.push((with, without));
    }
    let mean = |f: fn(&(f64, f64)) -> f64| pairs.iter().map(f).sum::<f64>() / pairs.len() as f64;
    let (m12, m11) = (mean(|p| p.0), mean(|p| p.1));
    let per_seed: Vec<String> = pairs.iter().map(|(a, b)| format!("{a:.3} vs {b:.3}")).collect();
    Outcome::new(
        m12 >= m11 - 0.02,
        format!(
            "mean rank-1 1:2 {m12:.3} vs 1:1 {m11:.3} (need >= 1:1 - 0.02); per seed {}",
            per_seed.join(", ")
        ),
    )
}

fn pretraining_effect(s: &mut Shared) -> Outcome {
    // A label-disjoint domain with its own appearance draws.
    let source = SynthParams {
        first_identity: 1001,
        seed: 101,
        ..SynthParams::desk()
    };
    let source_train = synth_generate(&source).unwrap().load_all().unwrap();
    let mut pre = build_network::<f32>(net_config(), Init::FanInNormal, 2).unwrap();
    train_observed(&mut pre, &source_train, &config(2, ratio_1_2()), None, &mut ()).unwrap();
    let checkpoint = Checkpoint::from_network(&pre);

    let mut curve = Curve::new(&s.bench);
    curve.stop_at = Some(TARGET_RANK1);
    fine_tune::<f32>(&checkpoint, &net_config(), &s.bench.train, &config(1, ratio_1_2()), None, &mut curve).unwrap();
    let tuned = curve.rank1;
    let scratch = s.main_run();
    let (a, b) = (epochs_to(&tuned, TARGET_RANK1), epochs_to(&scratch.rank1, TARGET_RANK1));
    let show = |e: Option<usize>| e.map_or(format!("not within {}", PROTOCOL.epochs), |e| e.to_string());
    let pass = match (a, b) {
        (Some(a), Some(b)) => a as f64 <= 0.6 * b as f64,
        _ => false,
    };
    Outcome::new(
        pass,
        format!(
            "epochs to rank-1 {TARGET_RANK1}: fine-tuned {} (rank-1 {:.3} there), random init {} (need <= 60%)",
            show(a),
            tuned.last().copied().unwrap_or(f64::NAN),
            show(b),
        ),
    )
}

fn fusion(s: &mut Shared) -> Outcome {
    s.main_run();
    let m = s.bench.scores(&s.main.as_ref().unwrap().net);
    let weak = s.bench.baseline();
    let cmc = |m: &ScoreMatrix| cmc_trials(m, PROTOCOL.trials, TiePolicy::Pessimistic, EVAL_SEED).unwrap();
    let self_fused = cmc(&fuse_scores(&m, &m, Normalization::None).unwrap());
    let identical = self_fused == cmc(&m);
    let (r_model, r_weak) = (rank1(&m), rank1(&weak));
    let r_fused = rank1(&fuse_scores(&m, &weak, Normalization::None).unwrap());
    Outcome::new(
        identical && r_fused >= r_model - 0.05,
        format!(
            "fuse(m, m) CMC identical {identical}; rank-1 model {r_model:.3}, raw-pixel {r_weak:.3}, summed {r_fused:.3} (>= model - 0.05)"
        ),
    )
}

// ---- criterion 12: reproducibility through the command line ------------------------

fn drnk(cwd: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_drnk"))
        .current_dir(cwd)
        .args(["--seed", "5", "--threads", "1"])
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("drnk {} failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr)))
    }
}

fn pipeline(root: &Path) -> Result<(), String> {
    drnk(root, &["synth", "--out", "data", "--identities", "12"])?;
    let train = [
        "train", "--dataset", "data", "--out", "run", "--epochs", "2", "--lr", "0.003", "--batch-units", "4",
        "--curriculum", "0:1,1:2",
    ];
    drnk(root, &train)?;
    drnk(root, &["eval", "--checkpoint", "run/checkpoint.drnk", "--dataset", "data", "--out", "eval", "--trials", "3", "--scores"])?;
    drnk(root, &["openworld", "--checkpoint", "run/checkpoint.drnk", "--dataset", "data", "--out", "open", "--targets", "2"])?;
    Ok(())
}

/// Every file below `root`, relative path to bytes. Loss logs drop their
/// wall-clock column.
fn snapshot(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
                continue;
            }
            let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
            let mut bytes = std::fs::read(&path).unwrap();
            if rel.ends_with("loss.csv") {
                let text = String::from_utf8(bytes).unwrap();
                bytes = text
                    .lines()
                    .map(|l| l.rsplit_once(',').map_or(l, |(head, _)| head).to_string() + "\n")
                    .collect::<String>()
                    .into_bytes();
            }
            files.push((rel, bytes));
        }
    }
    files.sort();
    files
}

fn reproducibility() -> Outcome {
    let roots = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for r in &roots {
        if let Err(e) = pipeline(r.path()) {
            return Outcome::new(false, e);
        }
    }
    let (a, b) = (snapshot(roots[0].path()), snapshot(roots[1].path()));
    let names: BTreeSet<&str> = a.iter().chain(&b).map(|(n, _)| n.as_str()).collect();
    let differing: Vec<&str> = names
        .iter()
        .copied()
        .filter(|n| a.iter().find(|f| f.0 == *n) != b.iter().find(|f| f.0 == *n))
        .collect();
    let checked = ["run/checkpoint.drnk", "run/loss.csv", "eval/cmc.csv", "eval/scores.csv", "open/openworld.csv"];
    let present = checked.iter().all(|c| names.contains(c));
    Outcome::new(
        differing.is_empty() && present,
        format!(
            "two synth/train/eval/openworld runs, {} files compared, differing: {:?}",
            names.len(),
            differing
        ),
    )
}

fn main() -> ExitCode {
    let synthetic = SynthParams {
        seed: PROTOCOL.data_seed,
        ..SynthParams::desk()
    };
    let mut shared = Shared {
        bench: Benchmark::new(&synthetic),
        main: None,
    };
    type Check = Box<dyn FnMut(&mut Shared) -> Outcome>;
    let criteria: Vec<(&str, Check)> = vec![
        ("ranking-gradient exactness", Box::new(|_| ranking_gradients())),
        ("layer adjoints", Box::new(|_| layer_adjoints())),
        ("end-to-end gradient", Box::new(|_| network_gradient())),
        ("surrogate bound", Box::new(|_| surrogate_bound())),
        ("rank/CMC oracles", Box::new(|_| cmc_oracles())),
        ("open-world sweep", Box::new(|_| open_world())),
        ("augmentation contract", Box::new(|_| augmentation())),
        ("synthetic end-to-end", Box::new(synthetic_end_to_end)),
        ("curriculum effect", Box::new(curriculum_effect)),
        ("pre-training effect", Box::new(pretraining_effect)),
        ("fusion sanity", Box::new(fusion)),
        ("reproducibility", Box::new(|_| reproducibility())),
    ];
    let only: Option<BTreeSet<usize>> = std::env::var("DRNK_ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|n| n.trim().parse().ok()).collect());
    let mut failed = 0;
    for (i, (name, mut check)) in criteria.into_iter().enumerate() {
        let n = i + 1;
        if only.as_ref().is_some_and(|o| !o.contains(&n)) {
            continue;
        }
        let start = Instant::now();
        let o = check(&mut shared);
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        failed += usize::from(!o.pass);
        println!(
            "criterion {n:>2} {verdict}: {name}: {} [{:.1}s]",
            o.detail,
            start.elapsed().as_secs_f64()
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
