//! Independent oracles shared by the integration tests and the acceptance harness.
#![allow(dead_code)]

use drnk::data::{stitch, test_time_inputs, ImageKey, PersonImage, Variant};
use drnk::eval::{cmc_from_scores, open_world_sweep, score_matrix, true_match_ranks, ScoreMatrix, TiePolicy};
use drnk::kernels::{
    conv2d, conv2d_backward, dropout, dropout_backward, fc_backward, fully_connected, lrn, lrn_backward, maxpool,
    maxpool_backward, ConvParams, LrnParams, Mode,
};
use drnk::net::{build_network, Gradients, Init, Network, NetworkConfig};
use drnk::rank::{surrogate_sigma, unit_grad, unit_loss, zero_one_rank, UnitScores};
use drnk::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `|a − n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Sixth-order central difference of `f` at 0.
pub fn central_difference(mut f: impl FnMut(f64) -> f64, h: f64) -> f64 {
    let c = [(1.0, 45.0), (2.0, -9.0), (3.0, 1.0)];
    c.iter().map(|&(k, w)| w * (f(k * h) - f(-k * h))).sum::<f64>() / (60.0 * h)
}

/// Worst result of one family of checks.
#[derive(Debug, Clone, Default)]
pub struct Worst {
    pub cases: usize,
    pub error: f64,
    pub at: String,
}

impl Worst {
    pub fn note(&mut self, error: f64, at: impl FnOnce() -> String) {
        if error > self.error || error.is_nan() {
            self.error = error;
            self.at = at();
        }
    }
}

// ---- ranking objective -------------------------------------------------------

pub struct RankCheck {
    pub gradient: Worst,
    pub antisymmetry: f64,
}

/// Random units with 1, 2 or 4 references and scores in `[−20, 20]`.
///
/// The positive-score derivative is differenced on the whole unit. Each
/// reference derivative is differenced on the unit restricted to that
/// reference; the loss is a sum over references, so the other terms are
/// constant in that coordinate and only add rounding noise.
pub fn rank_gradient_check(units: usize, seed: u64) -> RankCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gradient = Worst::default();
    let mut antisymmetry = 0.0f64;
    let h = 0.05;
    for u in 0..units {
        let r = [1, 2, 4][rng.random_range(0..3)];
        let p = rng.random_range(-20.0..=20.0);
        let negs: Vec<f64> = (0..r).map(|_| rng.random_range(-20.0..=20.0)).collect();
        let g = unit_grad(&UnitScores::new(p, negs.clone()).unwrap()).unwrap();
        antisymmetry = antisymmetry.max((g.positive + g.negatives.iter().sum::<f64>()).abs());

        let loss = |p: f64, n: Vec<f64>| unit_loss(&UnitScores::new(p, n).unwrap()).unwrap();
        let num = central_difference(|d| loss(p + d, negs.clone()), h);
        gradient.cases += 1;
        gradient.note(relative_error(g.positive, num, 0.0), || format!("unit {u} positive"));
        for (j, &n) in negs.iter().enumerate() {
            let num = central_difference(|d| loss(p, vec![n + d]), h);
            gradient.cases += 1;
            gradient.note(relative_error(g.negatives[j], num, 0.0), || format!("unit {u} reference {j}"));
        }
    }
    RankCheck { gradient, antisymmetry }
}

pub struct SurrogateCheck {
    pub bound_violations: usize,
    pub reflection: f64,
    pub at_zero: f64,
}

/// `σ(z) ≥ I{z < 0}` and `σ(−z) = σ(z) + z` on an evenly spaced grid.
pub fn surrogate_grid(points: usize, lo: f64, hi: f64) -> SurrogateCheck {
    let mut bound_violations = 0;
    let mut reflection = 0.0f64;
    for i in 0..points {
        let z = lo + (hi - lo) * i as f64 / (points - 1) as f64;
        let s = surrogate_sigma(z).unwrap();
        if s < if z < 0.0 { 1.0 } else { 0.0 } {
            bound_violations += 1;
        }
        reflection = reflection.max((surrogate_sigma(-z).unwrap() - s - z).abs());
    }
    SurrogateCheck {
        bound_violations,
        reflection,
        at_zero: (surrogate_sigma(0.0).unwrap() - 1.0).abs(),
    }
}

// ---- kernels ----------------------------------------------------------------

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-scale..scale))
}

fn weighted(out: &Tensor<f64>, w: &Tensor<f64>) -> f64 {
    out.data().iter().zip(w.data()).map(|(a, b)| a * b).sum()
}

/// Differences every coordinate of `x` through `loss`, skipping coordinates
/// where `pattern` (an activation or argmax signature) changes inside the
/// stencil, since the derivative does not exist there.
fn check_tensor(
    worst: &mut Worst,
    label: &str,
    x: &Tensor<f64>,
    analytic: &Tensor<f64>,
    h: f64,
    floor: f64,
    loss: impl Fn(&Tensor<f64>) -> (f64, Vec<u8>),
) -> usize {
    let mut skipped = 0;
    let base_pattern = loss(x).1;
    for i in 0..x.len() {
        let mut stable = true;
        let num = central_difference(
            |d| {
                let mut y = x.clone();
                y.data_mut()[i] += d;
                let (l, pat) = loss(&y);
                stable &= pat == base_pattern;
                l
            },
            h,
        );
        if !stable {
            skipped += 1;
            continue;
        }
        worst.note(relative_error(analytic.data()[i], num, floor), || format!("{label}[{i}]"));
    }
    skipped
}

fn positive_mask(out: &Tensor<f64>) -> Vec<u8> {
    out.data().iter().map(|&v| (v > 0.0) as u8).collect()
}

pub fn conv_check(shapes: usize, seed: u64) -> Worst {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = Worst::default();
    while worst.cases < shapes {
        let cin = rng.random_range(1..=4);
        let cout = rng.random_range(1..=4);
        let k = rng.random_range(1..=4);
        let stride = rng.random_range(1..=3);
        let pad = rng.random_range(0..=2);
        let (h, w) = (rng.random_range(k.max(3)..=9), rng.random_range(k.max(3)..=9));
        let relu = rng.random_bool(0.5);
        let x = random_tensor(&mut rng, &[cin, h, w], 1.0);
        let params = ConvParams {
            kernels: random_tensor(&mut rng, &[cout, cin, k, k], 0.5),
            bias: random_tensor(&mut rng, &[cout], 0.5),
            stride,
            pad,
        };
        let (out, cache) = conv2d(&x, &params, relu).unwrap();
        let wout = random_tensor(&mut rng, out.shape(), 1.0);
        let g = conv2d_backward(&cache, &params, &wout).unwrap();
        let label = format!("conv {cin}x{h}x{w} k{k} s{stride} p{pad} -> {cout} relu={relu}");
        let eval = |x: &Tensor<f64>, p: &ConvParams<f64>| {
            let (o, _) = conv2d(x, p, relu).unwrap();
            (weighted(&o, &wout), if relu { positive_mask(&o) } else { Vec::new() })
        };
        let h = 1e-2;
        check_tensor(&mut worst, &format!("{label} input"), &x, &g.input, h, 1e-6, |y| eval(y, &params));
        check_tensor(&mut worst, &format!("{label} kernels"), &params.kernels, &g.kernels, h, 1e-6, |kk| {
            eval(&x, &ConvParams { kernels: kk.clone(), ..params.clone() })
        });
        check_tensor(&mut worst, &format!("{label} bias"), &params.bias, &g.bias, h, 1e-6, |b| {
            eval(&x, &ConvParams { bias: b.clone(), ..params.clone() })
        });
        worst.cases += 1;
    }
    worst
}

pub fn pool_check(shapes: usize, seed: u64) -> Worst {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = Worst::default();
    while worst.cases < shapes {
        let window = rng.random_range(1..=4);
        let stride = rng.random_range(1..=3);
        let c = rng.random_range(1..=3);
        let (h, w) = (rng.random_range(window..=10), rng.random_range(window..=10));
        let x = random_tensor(&mut rng, &[c, h, w], 1.0);
        let (out, cache) = maxpool(&x, window, stride).unwrap();
        let wout = random_tensor(&mut rng, out.shape(), 1.0);
        let g = maxpool_backward(&cache, &wout).unwrap();
        // The routed gradient identifies the argmax of every window.
        let eval = |y: &Tensor<f64>| {
            let (o, c) = maxpool(y, window, stride).unwrap();
            let routed = maxpool_backward(&c, &wout).unwrap();
            (weighted(&o, &wout), routed.data().iter().flat_map(|v| v.to_le_bytes()).collect())
        };
        let label = format!("pool {c}x{h}x{w} window {window} stride {stride}");
        check_tensor(&mut worst, &label, &x, &g, 1e-4, 1e-6, eval);
        worst.cases += 1;
    }
    worst
}

pub fn lrn_check(shapes: usize, seed: u64) -> Worst {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = Worst::default();
    while worst.cases < shapes {
        let c = rng.random_range(1..=8);
        let (h, w) = (rng.random_range(1..=4), rng.random_range(1..=4));
        let params = LrnParams {
            k: rng.random_range(0.5..3.0),
            n: [1, 3, 5][rng.random_range(0..3)],
            alpha: rng.random_range(1e-4..0.5),
            beta: rng.random_range(0.5..1.0),
        };
        let x = random_tensor(&mut rng, &[c, h, w], 2.0);
        let (out, cache) = lrn(&x, params).unwrap();
        let wout = random_tensor(&mut rng, out.shape(), 1.0);
        let g = lrn_backward(&cache, &wout).unwrap();
        let label = format!("lrn {c}x{h}x{w} {params:?}");
        check_tensor(&mut worst, &label, &x, &g, 1e-3, 1e-6, |y| {
            (weighted(&lrn(y, params).unwrap().0, &wout), Vec::new())
        });
        worst.cases += 1;
    }
    worst
}

pub fn fc_check(shapes: usize, seed: u64) -> Worst {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = Worst::default();
    while worst.cases < shapes {
        let in_shape: Vec<usize> = if rng.random_bool(0.5) {
            vec![rng.random_range(1..=30)]
        } else {
            vec![rng.random_range(1..=3), rng.random_range(1..=3), rng.random_range(1..=3)]
        };
        let n_in: usize = in_shape.iter().product();
        let n_out = rng.random_range(1..=10);
        let relu = rng.random_bool(0.5);
        let x = random_tensor(&mut rng, &in_shape, 1.0);
        let weight = random_tensor(&mut rng, &[n_out, n_in], 0.5);
        let bias = random_tensor(&mut rng, &[n_out], 0.5);
        let (out, cache) = fully_connected(&x, &weight, &bias, relu).unwrap();
        let wout = random_tensor(&mut rng, out.shape(), 1.0);
        let g = fc_backward(&cache, &weight, &wout).unwrap();
        let eval = |x: &Tensor<f64>, wt: &Tensor<f64>, b: &Tensor<f64>| {
            let (o, _) = fully_connected(x, wt, b, relu).unwrap();
            (weighted(&o, &wout), if relu { positive_mask(&o) } else { Vec::new() })
        };
        let label = format!("fc {in_shape:?} -> {n_out} relu={relu}");
        let h = 1e-2;
        check_tensor(&mut worst, &format!("{label} input"), &x, &g.input, h, 1e-6, |y| eval(y, &weight, &bias));
        check_tensor(&mut worst, &format!("{label} weight"), &weight, &g.weight, h, 1e-6, |wt| eval(&x, wt, &bias));
        check_tensor(&mut worst, &format!("{label} bias"), &bias, &g.bias, h, 1e-6, |b| eval(&x, &weight, b));
        worst.cases += 1;
    }
    worst
}

/// Dropout with a pinned mask is linear, so its adjoint is checked like fc.
pub fn dropout_check(shapes: usize, seed: u64) -> Worst {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = Worst::default();
    while worst.cases < shapes {
        let shape = [rng.random_range(1..=4), rng.random_range(1..=5), rng.random_range(1..=5)];
        let rate = rng.random_range(0.0..0.9);
        let mask_seed = rng.random::<u64>();
        let x = random_tensor(&mut rng, &shape, 1.0);
        let forward = |y: &Tensor<f64>| {
            dropout(y, rate, Mode::Train, &mut ChaCha8Rng::seed_from_u64(mask_seed)).unwrap()
        };
        let (out, mask) = forward(&x);
        let wout = random_tensor(&mut rng, out.shape(), 1.0);
        let g = dropout_backward(&mask, &wout).unwrap();
        let label = format!("dropout {shape:?} rate {rate:.3}");
        check_tensor(&mut worst, &label, &x, &g, 1e-2, 1e-6, |y| (weighted(&forward(y).0, &wout), Vec::new()));
        worst.cases += 1;
    }
    worst
}

// ---- full network -------------------------------------------------------------

/// Loss of one ranking unit whose pairs are `inputs[0]` (positive) and the rest
/// (references). Dropout masks are pinned by reseeding per pair.
pub fn unit_objective(net: &Network<f64>, inputs: &[Tensor<f64>], grads: Option<&mut Gradients<f64>>) -> f64 {
    let mut scores = Vec::new();
    let mut caches = Vec::new();
    for (i, x) in inputs.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + i as u64);
        let (s, c) = net.score_pair(x, Mode::Train, &mut rng).unwrap();
        scores.push(s);
        caches.push(c);
    }
    let us = UnitScores::new(scores[0], scores[1..].to_vec()).unwrap();
    if let Some(g) = grads {
        let d = unit_grad(&us).unwrap();
        for (c, v) in caches.iter().zip(std::iter::once(d.positive).chain(d.negatives)) {
            net.backward_pair(c, v, g).unwrap();
        }
    }
    unit_loss(&us).unwrap()
}

/// desk_small in f64 on a 3-pair unit. Every coordinate of tensors up to 512
/// elements is checked, 64 random coordinates of larger ones.
/// Tensors with at most `full_below` elements are checked at every coordinate,
/// larger ones at `sample` random coordinates.
pub fn network_gradient_check(seed: u64, full_below: usize, sample: usize) -> Worst {
    let mut net = build_network::<f64>(NetworkConfig::desk_small(), Init::FanInNormal, seed).unwrap();
    // Non-zero biases so every bias gradient path is exercised.
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for (name, p) in net.param_names().to_vec().iter().zip(net.params_mut()) {
        if name.ends_with(".bias") {
            p.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-0.05..0.05));
        }
    }
    net.channel_mean = [0.5, 0.5, 0.5];
    let shape = net.input_shape();
    let inputs: Vec<Tensor<f64>> = (0..3).map(|_| Tensor::from_fn(&shape, |_| rng.random::<f64>())).collect();
    let mut grads = net.zero_grads();
    unit_objective(&net, &inputs, Some(&mut grads));

    let h = 1e-6;
    let mut worst = Worst::default();
    for t in 0..net.params().len() {
        let n = net.params()[t].len();
        let coords: Vec<usize> = if n <= full_below {
            (0..n).collect()
        } else {
            (0..sample).map(|_| rng.random_range(0..n)).collect()
        };
        for i in coords {
            let orig = net.params()[t].data()[i];
            net.params_mut()[t].data_mut()[i] = orig + h;
            let up = unit_objective(&net, &inputs, None);
            net.params_mut()[t].data_mut()[i] = orig - h;
            let down = unit_objective(&net, &inputs, None);
            net.params_mut()[t].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let analytic = grads.arrays[t].data()[i];
            worst.cases += 1;
            // Round-off in the quotient is about 1e-10, and the last bias
            // gradient cancels to zero over a unit, hence the floor.
            worst.note(relative_error(analytic, numeric, 1e-5), || {
                format!("{}[{i}] analytic {analytic} numeric {numeric}", net.param_names()[t])
            });
        }
    }
    worst
}

// ---- evaluation -------------------------------------------------------------

/// Single-shot matrix: `n` probes and `n` gallery columns with shuffled
/// identities. Scores are drawn from a handful of levels when `ties` is set.
pub fn random_single_shot(rng: &mut ChaCha8Rng, n: usize, ties: bool) -> ScoreMatrix {
    let probes: Vec<ImageKey> = (0..n as u32).map(|i| ImageKey::new(i, "a", 0)).collect();
    let mut ids: Vec<u32> = (0..n as u32).collect();
    rand::seq::SliceRandom::shuffle(ids.as_mut_slice(), rng);
    let gallery = ids.iter().map(|&i| ImageKey::new(i, "b", 0)).collect();
    let values = (0..n * n)
        .map(|_| {
            if ties {
                rng.random_range(0..4) as f64 * 0.25
            } else {
                rng.random_range(-1.0..1.0)
            }
        })
        .collect();
    ScoreMatrix::new(probes, gallery, values).unwrap()
}

/// Rank by sorting: position of the true match after ordering the gallery by
/// descending score, with ties broken against (pessimistic) or for the true match.
pub fn brute_force_rank(row: &[f64], truth: usize, tie: TiePolicy) -> usize {
    let mut order: Vec<usize> = (0..row.len()).collect();
    order.sort_by(|&a, &b| {
        row[b].total_cmp(&row[a]).then_with(|| {
            let first = match tie {
                TiePolicy::Pessimistic => b == truth,
                TiePolicy::Optimistic => a == truth,
            };
            if a == b {
                std::cmp::Ordering::Equal
            } else if first {
                std::cmp::Ordering::Less
            } else {
                std::cmp::Ordering::Greater
            }
        })
    });
    order.iter().position(|&j| j == truth).unwrap() + 1
}

pub struct CmcOracle {
    pub mismatches: usize,
    pub monotone: bool,
    pub terminal_one: bool,
}

/// `zero_one_rank`, `true_match_ranks` and `cmc_from_scores` against sorting.
pub fn cmc_oracle(matrices: usize, seed: u64) -> CmcOracle {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = CmcOracle {
        mismatches: 0,
        monotone: true,
        terminal_one: true,
    };
    for k in 0..matrices {
        let n = rng.random_range(2..=24);
        let m = random_single_shot(&mut rng, n, k % 2 == 1);
        for tie in [TiePolicy::Pessimistic, TiePolicy::Optimistic] {
            let ranks = true_match_ranks(&m, tie).unwrap();
            let mut expected = Vec::new();
            for (i, p) in m.probes().iter().enumerate() {
                let t = m.gallery().iter().position(|g| g.identity == p.identity).unwrap();
                let row = m.row(i);
                let r = brute_force_rank(row, t, tie);
                expected.push(r);
                if ranks[i] != r {
                    out.mismatches += 1;
                }
                if tie == TiePolicy::Optimistic {
                    let others: Vec<f64> = row.iter().enumerate().filter(|&(j, _)| j != t).map(|(_, &v)| v).collect();
                    if zero_one_rank(row[t], &others) + 1 != r {
                        out.mismatches += 1;
                    }
                }
            }
            let curve = cmc_from_scores(&m, tie).unwrap();
            for (kk, &rate) in curve.rates.iter().enumerate() {
                let within = expected.iter().filter(|&&r| r <= kk + 1).count() as f64 / n as f64;
                if rate != within {
                    out.mismatches += 1;
                }
            }
            out.monotone &= curve.rates.windows(2).all(|w| w[0] <= w[1]);
            out.terminal_one &= *curve.rates.last().unwrap() == 1.0;
        }
    }
    out
}

pub struct OpenWorldOracle {
    pub mismatches: usize,
    pub endpoints: bool,
    pub non_increasing: bool,
}

/// Sweeps against direct counting of verified queries at every threshold.
pub fn open_world_oracle(instances: usize, seed: u64) -> OpenWorldOracle {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = OpenWorldOracle {
        mismatches: 0,
        endpoints: true,
        non_increasing: true,
    };
    for k in 0..instances {
        let n = rng.random_range(3..=20);
        let m = random_single_shot(&mut rng, n, k % 3 == 0);
        let p = rng.random_range(1..n);
        let mut ids: Vec<u32> = (0..n as u32).collect();
        rand::seq::SliceRandom::shuffle(ids.as_mut_slice(), &mut rng);
        let targets = &ids[..p];
        let points = open_world_sweep(&m, targets, None).unwrap();
        for pt in &points {
            let (mut tv, mut tn, mut nv, mut nn) = (0, 0, 0, 0);
            for (i, probe) in m.probes().iter().enumerate() {
                let verified = m
                    .gallery()
                    .iter()
                    .enumerate()
                    .any(|(j, g)| targets.contains(&g.identity) && m.get(i, j) >= pt.threshold);
                if targets.contains(&probe.identity) {
                    tn += 1;
                    tv += verified as usize;
                } else {
                    nn += 1;
                    nv += verified as usize;
                }
            }
            if pt.ttr != tv as f64 / tn as f64 || pt.ftr != nv as f64 / nn as f64 {
                out.mismatches += 1;
            }
        }
        let (first, last) = (points[0], points[points.len() - 1]);
        out.endpoints &= (first.ttr, first.ftr) == (1.0, 1.0) && (last.ttr, last.ftr) == (0.0, 0.0);
        out.non_increasing &= points.windows(2).all(|w| w[1].ttr <= w[0].ttr && w[1].ftr <= w[0].ftr);
    }
    out
}

// ---- augmentation -------------------------------------------------------------

pub fn random_person(rng: &mut ChaCha8Rng, id: u32, camera: &str, h: usize, w: usize) -> PersonImage {
    PersonImage::new(ImageKey::new(id, camera, 0), Tensor::from_fn(&[3, h, w], |_| rng.random::<f32>())).unwrap()
}

pub struct AugmentationCheck {
    pub variants: usize,
    pub distinct: usize,
    pub deterministic: bool,
    pub swap_error: f64,
}

/// Variant count, distinctness and determinism of the test-time inputs, and
/// swap invariance of the averaged score under a random network.
pub fn augmentation_check(pairs: usize, seed: u64) -> AugmentationCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let config = NetworkConfig::desk_small();
    let net = build_network::<f32>(config.clone(), Init::FanInNormal, seed).unwrap();
    let mut out = AugmentationCheck {
        variants: Variant::all().len(),
        distinct: usize::MAX,
        deterministic: true,
        swap_error: 0.0,
    };
    for i in 0..pairs {
        let a = random_person(&mut rng, 2 * i as u32, "a", 40, 20);
        let b = random_person(&mut rng, 2 * i as u32 + 1, "b", 52, 30);
        let inputs = test_time_inputs(&a, &b, config.stitch_side, config.input_side).unwrap();
        out.deterministic &= inputs == test_time_inputs(&a, &b, config.stitch_side, config.input_side).unwrap();
        let mut distinct: Vec<&[f32]> = inputs.iter().map(|t| t.data()).collect();
        distinct.sort_by(|x, y| x.partial_cmp(y).unwrap());
        distinct.dedup();
        out.distinct = out.distinct.min(distinct.len());
        out.deterministic &= stitch(&a, &b, config.stitch_side).unwrap() == stitch(&a, &b, config.stitch_side).unwrap();

        let ab = score_matrix(&net, std::slice::from_ref(&a), std::slice::from_ref(&b), true).unwrap();
        let ba = score_matrix(&net, std::slice::from_ref(&b), std::slice::from_ref(&a), true).unwrap();
        let (x, y) = (ab.get(0, 0), ba.get(0, 0));
        out.swap_error = out.swap_error.max(relative_error(x, y, 1e-12));
    }
    out
}
