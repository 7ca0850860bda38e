use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::{LayerSpec, NetworkConfig, INPUT_CHANNELS};
use crate::error::{Error, Result};
use crate::kernels::{
    conv2d_backward_parts, conv2d_parts, dropout, dropout_backward, fc_backward, fully_connected,
    lrn, lrn_backward, maxpool, maxpool_backward, ConvCache, FcCache, LrnCache, Mode, PoolCache,
};
use crate::tensor::{Real, Tensor};

/// Parameter initialization scheme. Biases always start at zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    Uniform(f64),
    /// Normal with standard deviation `sqrt(2 / fan_in)`.
    FanInNormal,
}

/// Bookkeeping carried alongside the parameters into checkpoints.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingMeta {
    pub seed: u64,
    pub epoch: usize,
    pub loss_digest: String,
    /// Free-form string entries (split provenance and the like).
    pub extra: BTreeMap<String, String>,
}

/// The scoring network `f(x, y)`: a stitched pair in, one similarity score out.
#[derive(Debug, Clone)]
pub struct Network<T> {
    config: NetworkConfig,
    names: Vec<String>,
    params: Vec<Tensor<T>>,
    /// For each layer, the index of its weight array (bias follows it).
    slots: Vec<Option<usize>>,
    /// Per-channel mean subtracted from every input before the first layer.
    pub channel_mean: [f64; INPUT_CHANNELS],
    pub meta: TrainingMeta,
}

/// Parameter gradients aligned with [`Network::params`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub arrays: Vec<Tensor<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn zero(&mut self) {
        self.arrays.iter_mut().for_each(|a| a.fill(T::zero()));
    }

    /// `self += alpha · other`
    pub fn add_scaled(&mut self, other: &Gradients<T>, alpha: T) -> Result<()> {
        if self.arrays.len() != other.arrays.len() {
            return Err(Error::shape("gradients", "array counts differ"));
        }
        for (a, b) in self.arrays.iter_mut().zip(&other.arrays) {
            a.add_scaled(b, alpha)?;
        }
        Ok(())
    }

    pub fn scale(&mut self, alpha: T) {
        self.arrays.iter_mut().for_each(|a| a.scale(alpha));
    }

    pub fn is_zero(&self) -> bool {
        self.arrays
            .iter()
            .all(|a| a.data().iter().all(|&x| x == T::zero()))
    }
}

#[derive(Debug, Clone)]
enum LayerCache<T> {
    Conv(ConvCache<T>),
    Pool(PoolCache),
    Lrn(LrnCache<T>),
    Fc(FcCache<T>),
    Dropout(Tensor<T>),
}

/// What [`Network::backward_pair`] needs from a forward pass. Infer-mode
/// forwards produce an empty cache that backward rejects.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    layers: Option<Vec<LayerCache<T>>>,
}

impl<T> ForwardCache<T> {
    pub fn is_trainable(&self) -> bool {
        self.layers.is_some()
    }
}

pub fn build_network<T: Real>(config: NetworkConfig, init: Init, seed: u64) -> Result<Network<T>> {
    let shapes = config.param_shapes()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut names = Vec::with_capacity(shapes.len());
    let mut params = Vec::with_capacity(shapes.len());
    for (name, shape) in shapes {
        let is_bias = shape.len() == 1;
        let t = match init {
            _ if is_bias => Tensor::zeros(&shape),
            Init::Zeros => Tensor::zeros(&shape),
            Init::Uniform(a) => {
                if !(a > 0.0 && a.is_finite()) {
                    return Err(Error::invalid(format!("uniform init bound must be positive, got {a}")));
                }
                Tensor::from_fn(&shape, |_| T::from_f64_lossy(rng.random_range(-a..a)))
            }
            Init::FanInNormal => {
                let fan_in: usize = shape[1..].iter().product();
                let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt())
                    .map_err(|e| Error::invalid(e.to_string()))?;
                Tensor::from_fn(&shape, |_| T::from_f64_lossy(normal.sample(&mut rng)))
            }
        };
        names.push(name);
        params.push(t);
    }
    let slots = slot_map(&config);
    Ok(Network {
        config,
        names,
        params,
        slots,
        channel_mean: [0.0; INPUT_CHANNELS],
        meta: TrainingMeta {
            seed,
            ..Default::default()
        },
    })
}

fn slot_map(config: &NetworkConfig) -> Vec<Option<usize>> {
    let mut next = 0;
    config
        .layers
        .iter()
        .map(|l| {
            l.has_params().then(|| {
                next += 2;
                next - 2
            })
        })
        .collect()
}

impl<T: Real> Network<T> {
    /// Assembles a network from named arrays, checking them against `config`.
    pub fn from_parts(config: NetworkConfig, arrays: Vec<(String, Tensor<T>)>) -> Result<Self> {
        let expected = config.param_shapes()?;
        if expected.len() != arrays.len() {
            return Err(Error::ConfigMismatch(format!(
                "config needs {} parameter arrays, got {}",
                expected.len(),
                arrays.len()
            )));
        }
        for ((en, es), (n, t)) in expected.iter().zip(&arrays) {
            if en != n || es.as_slice() != t.shape() {
                return Err(Error::ConfigMismatch(format!(
                    "expected array `{en}` {es:?}, got `{n}` {:?}",
                    t.shape()
                )));
            }
        }
        let slots = slot_map(&config);
        let (names, params) = arrays.into_iter().unzip();
        Ok(Network {
            config,
            names,
            params,
            slots,
            channel_mean: [0.0; INPUT_CHANNELS],
            meta: TrainingMeta::default(),
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.params
    }

    pub fn param_names(&self) -> &[String] {
        &self.names
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<T>> {
        self.names.iter().position(|n| n == name).map(|i| &self.params[i])
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(move |i| &mut self.params[i])
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn zero_grads(&self) -> Gradients<T> {
        Gradients {
            arrays: self.params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }

    /// Same network in another precision.
    pub fn cast<U: Real>(&self) -> Network<U> {
        Network {
            config: self.config.clone(),
            names: self.names.clone(),
            params: self.params.iter().map(Tensor::cast).collect(),
            slots: self.slots.clone(),
            channel_mean: self.channel_mean,
            meta: self.meta.clone(),
        }
    }

    pub fn input_shape(&self) -> [usize; 3] {
        [INPUT_CHANNELS, self.config.input_side, self.config.input_side]
    }

    /// Scores one stitched, cropped pair image with pixels in `[0, 1]`.
    /// The cache is only usable for backward in train mode.
    pub fn score_pair<R: Rng + ?Sized>(
        &self,
        pair_image: &Tensor<T>,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(T, ForwardCache<T>)> {
        if pair_image.shape() != self.input_shape() {
            return Err(Error::shape(
                "score_pair",
                format!(
                    "expected input {:?}, got {:?}",
                    self.input_shape(),
                    pair_image.shape()
                ),
            ));
        }
        let mut x = pair_image.clone();
        let plane = self.config.input_side * self.config.input_side;
        for (c, chunk) in x.data_mut().chunks_mut(plane).enumerate() {
            let m = T::from_f64_lossy(self.channel_mean[c]);
            chunk.iter_mut().for_each(|v| *v -= m);
        }

        let train = mode == Mode::Train;
        let mut caches = Vec::with_capacity(if train { self.config.layers.len() } else { 0 });
        for (layer, slot) in self.config.layers.iter().zip(&self.slots) {
            let (next, cache) = match layer {
                LayerSpec::Conv {
                    stride, pad, relu, ..
                } => {
                    let i = slot.expect("conv layer has parameters");
                    let (y, c) = conv2d_parts(&x, &self.params[i], &self.params[i + 1], *stride, *pad, *relu)?;
                    (y, LayerCache::Conv(c))
                }
                LayerSpec::MaxPool { window, stride, .. } => {
                    let (y, c) = maxpool(&x, *window, *stride)?;
                    (y, LayerCache::Pool(c))
                }
                LayerSpec::Lrn { params, .. } => {
                    let (y, c) = lrn(&x, *params)?;
                    (y, LayerCache::Lrn(c))
                }
                LayerSpec::Fc { relu, .. } => {
                    let i = slot.expect("fc layer has parameters");
                    let (y, c) = fully_connected(&x, &self.params[i], &self.params[i + 1], *relu)?;
                    (y, LayerCache::Fc(c))
                }
                LayerSpec::Dropout { rate, .. } => {
                    let (y, mask) = dropout(&x, *rate, mode, rng)?;
                    (y, LayerCache::Dropout(mask))
                }
            };
            if train {
                caches.push(cache);
            }
            x = next;
        }
        let score = x.data()[0];
        Ok((
            score,
            ForwardCache {
                layers: train.then_some(caches),
            },
        ))
    }

    /// Infer-mode score; a pure function of the parameters and the input.
    pub fn score(&self, pair_image: &Tensor<T>) -> Result<T> {
        // Infer mode never draws from the rng.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        Ok(self.score_pair(pair_image, Mode::Infer, &mut rng)?.0)
    }

    /// Adds `dl_df · ∂f/∂θ` into `grads`. Repeated calls accumulate.
    pub fn backward_pair(&self, cache: &ForwardCache<T>, dl_df: T, grads: &mut Gradients<T>) -> Result<()> {
        self.backward_impl(cache, dl_df, grads, false).map(|_| ())
    }

    /// Like [`Network::backward_pair`], also returning `dl_df · ∂f/∂input`.
    pub fn backward_pair_with_input(
        &self,
        cache: &ForwardCache<T>,
        dl_df: T,
        grads: &mut Gradients<T>,
    ) -> Result<Tensor<T>> {
        self.backward_impl(cache, dl_df, grads, true)
            .map(|g| g.expect("input gradient requested"))
    }

    fn backward_impl(
        &self,
        cache: &ForwardCache<T>,
        dl_df: T,
        grads: &mut Gradients<T>,
        need_input: bool,
    ) -> Result<Option<Tensor<T>>> {
        let layers = cache
            .layers
            .as_ref()
            .ok_or_else(|| Error::invalid("backward_pair needs a train-mode forward cache"))?;
        if layers.len() != self.config.layers.len() || grads.arrays.len() != self.params.len() {
            return Err(Error::shape("backward_pair", "cache or gradients belong to another network"));
        }
        let mut g = Tensor::full(&[1], dl_df);
        for (idx, (lc, slot)) in layers.iter().zip(&self.slots).enumerate().rev() {
            let first = idx == 0;
            g = match lc {
                LayerCache::Conv(c) => {
                    let i = slot.expect("conv layer has parameters");
                    let ((gk, gb), gin) = conv2d_backward_parts(c, &self.params[i], &g, need_input || !first)?;
                    grads.arrays[i].add_scaled(&gk, T::one())?;
                    grads.arrays[i + 1].add_scaled(&gb, T::one())?;
                    match gin {
                        Some(gin) => gin,
                        None => return Ok(None),
                    }
                }
                LayerCache::Pool(c) => maxpool_backward(c, &g)?,
                LayerCache::Lrn(c) => lrn_backward(c, &g)?,
                LayerCache::Fc(c) => {
                    let i = slot.expect("fc layer has parameters");
                    let fg = fc_backward(c, &self.params[i], &g)?;
                    grads.arrays[i].add_scaled(&fg.weight, T::one())?;
                    grads.arrays[i + 1].add_scaled(&fg.bias, T::one())?;
                    fg.input
                }
                LayerCache::Dropout(mask) => dropout_backward(mask, &g)?.reshape(mask.shape())?,
            };
        }
        Ok(Some(g))
    }
}
