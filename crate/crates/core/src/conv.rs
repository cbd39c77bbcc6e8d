//! Convolutional front end for ENNs (cENNs).
//!
//! Each convolutional layer is learned without gradients. Windows are sampled
//! equally from every class, grouped with k-means, and every cluster mean gets
//! a one-vs-all SVM against the other means. That SVM is the filter. A layer
//! applies its filters as a stride-1 valid convolution, squashes with a
//! sigmoid and max-pools non-overlapping 2×2 cells. The flattened maps feed
//! the ordinary ENN trainer.

use ndarray::{Array2, ArrayView2};
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cluster::kmeans;
use crate::datasets::{LabeledDataset, SIDE};
use crate::enn::{train_enn, EnnHyperparams, EnnModel};
use crate::error::{Error, Result, StageContext};
use crate::model::{sigmoid, Hyperplane};
use crate::rng;
use crate::svm::{fit_labeled, SvmOptions};

/// Side of padded MNIST images.
pub const PADDED_SIDE: usize = 32;

/// A stack of equally sized 2-D maps, channel-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureMaps {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl FeatureMaps {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::DimensionMismatch {
                expected: channels * height * width,
                actual: data.len(),
            });
        }
        Ok(FeatureMaps {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn at(&self, c: usize, r: usize, col: usize) -> f64 {
        self.data[(c * self.height + r) * self.width + col]
    }

    /// The `(kh, kw)` window with top-left corner `(r, c)`, flattened channel
    /// by channel.
    pub fn window(&self, (kh, kw): (usize, usize), r: usize, c: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.channels * kh * kw);
        for ch in 0..self.channels {
            for dr in 0..kh {
                let start = (ch * self.height + r + dr) * self.width + c;
                out.extend_from_slice(&self.data[start..start + kw]);
            }
        }
        out
    }
}

/// A 28×28 image centred in a zero 32×32 frame.
pub fn pad_image(pixels: &[f64]) -> Result<FeatureMaps> {
    if pixels.len() != SIDE * SIDE {
        return Err(Error::DimensionMismatch {
            expected: SIDE * SIDE,
            actual: pixels.len(),
        });
    }
    let off = (PADDED_SIDE - SIDE) / 2;
    let mut data = vec![0.0; PADDED_SIDE * PADDED_SIDE];
    for r in 0..SIDE {
        let dst = (r + off) * PADDED_SIDE + off;
        data[dst..dst + SIDE].copy_from_slice(&pixels[r * SIDE..(r + 1) * SIDE]);
    }
    FeatureMaps::new(1, PADDED_SIDE, PADDED_SIDE, data)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvLayerSpec {
    pub n_filters: usize,
    pub kernel: (usize, usize),
    #[serde(default = "default_multiplier")]
    pub multiplier: f64,
    #[serde(default = "default_cost")]
    pub svm_cost: f64,
    /// Fit each filter on the member windows of its cluster rather than on
    /// the cluster means alone.
    #[serde(default)]
    pub fit_members: bool,
}

fn default_multiplier() -> f64 {
    2.0
}

fn default_cost() -> f64 {
    1.0
}

impl ConvLayerSpec {
    pub fn new(n_filters: usize, kernel: (usize, usize)) -> Self {
        ConvLayerSpec {
            n_filters,
            kernel,
            multiplier: default_multiplier(),
            svm_cost: default_cost(),
            fit_members: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvLayer {
    pub kernel: (usize, usize),
    pub in_channels: usize,
    pub filters: Vec<Hyperplane>,
}

/// Where a sampled window came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WindowOrigin {
    pub image: usize,
    pub row: usize,
    pub col: usize,
}

/// Draw `per_class` windows from every class: a uniformly chosen image of
/// that class, then a uniformly chosen valid window origin.
pub fn sample_windows(
    maps: &[FeatureMaps],
    labels: &[usize],
    n_classes: usize,
    per_class: usize,
    kernel: (usize, usize),
    seed: u64,
) -> Result<(Array2<f64>, Vec<WindowOrigin>)> {
    if per_class == 0 {
        return Err(Error::invalid("per_class must be at least 1"));
    }
    if maps.len() != labels.len() || maps.is_empty() {
        return Err(Error::invalid("need one label per image and at least one image"));
    }
    let (h, w, ch) = (maps[0].height, maps[0].width, maps[0].channels);
    if kernel.0 == 0 || kernel.1 == 0 || kernel.0 > h || kernel.1 > w {
        return Err(Error::invalid(format!("kernel {kernel:?} does not fit {h}×{w} maps")));
    }
    let dim = ch * kernel.0 * kernel.1;
    let mut r = rng::rng(rng::derive(seed, "windows", &[]));
    let mut rows = Vec::with_capacity(n_classes * per_class * dim);
    let mut origins = Vec::with_capacity(n_classes * per_class);
    for c in 0..n_classes {
        let members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        if members.is_empty() {
            return Err(Error::invalid(format!("class {c} has no images")));
        }
        for _ in 0..per_class {
            let image = members[r.random_range(0..members.len())];
            let row = r.random_range(0..=h - kernel.0);
            let col = r.random_range(0..=w - kernel.1);
            rows.extend(maps[image].window(kernel, row, col));
            origins.push(WindowOrigin { image, row, col });
        }
    }
    let x = Array2::from_shape_vec((origins.len(), dim), rows).expect("consistent window size");
    Ok((x, origins))
}

/// Learned filters plus the cluster means they were fit on.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterFit {
    pub filters: Vec<Hyperplane>,
    pub centroids: Array2<f64>,
    /// Whether every filter puts its own mean on the positive side and every
    /// other mean on the negative side.
    pub centroids_separated: bool,
}

/// k-means on the windows, then one SVM per cluster mean against the other
/// means, scaled by `multiplier`.
pub fn learn_conv_filters(windows: ArrayView2<f64>, spec: &ConvLayerSpec, seed: u64) -> Result<FilterFit> {
    let k = spec.n_filters;
    if k < 2 {
        return Err(Error::invalid("a one-vs-all filter bank needs at least two filters"));
    }
    let km = kmeans(windows, k, rng::derive(seed, "conv-kmeans", &[])).stage("conv k-means")?;
    let fits = (0..k)
        .into_par_iter()
        .map(|c| {
            let s = rng::derive(seed, "conv-svm", &[c as u64]);
            let sol = if spec.fit_members {
                let pos: Vec<bool> = km.assignment.iter().map(|&a| a == c).collect();
                fit_labeled(windows, &pos, spec.svm_cost, None, s, &SvmOptions::default())?
            } else {
                let pos: Vec<bool> = (0..k).map(|j| j == c).collect();
                fit_labeled(km.centroids.view(), &pos, spec.svm_cost, None, s, &SvmOptions::default())?
            };
            sol.hyperplane.scaled(spec.multiplier)
        })
        .collect::<Result<Vec<_>>>()
        .stage("conv filters")?;
    let centroids_separated = fits.iter().enumerate().all(|(c, f)| {
        (0..k).all(|j| {
            let d = f.decision(km.centroids.row(j).as_slice().expect("standard layout"));
            if j == c {
                d > 0.0
            } else {
                d < 0.0
            }
        })
    });
    Ok(FilterFit {
        filters: fits,
        centroids: km.centroids,
        centroids_separated,
    })
}

/// Stride-1 valid convolution followed by a sigmoid; no pooling.
pub fn convolve(input: &FeatureMaps, layer: &ConvLayer) -> Result<FeatureMaps> {
    let (kh, kw) = layer.kernel;
    if input.channels != layer.in_channels {
        return Err(Error::DimensionMismatch {
            expected: layer.in_channels,
            actual: input.channels,
        });
    }
    if kh > input.height || kw > input.width {
        return Err(Error::invalid("kernel larger than its input"));
    }
    let (oh, ow) = (input.height - kh + 1, input.width - kw + 1);
    let mut data = Vec::with_capacity(layer.filters.len() * oh * ow);
    for f in &layer.filters {
        for r in 0..oh {
            for c in 0..ow {
                let mut z = f.b;
                let mut k = 0;
                for ch in 0..input.channels {
                    for dr in 0..kh {
                        let start = (ch * input.height + r + dr) * input.width + c;
                        let row = &input.data[start..start + kw];
                        for v in row {
                            z += f.w[k] * v;
                            k += 1;
                        }
                    }
                }
                data.push(sigmoid(z));
            }
        }
    }
    FeatureMaps::new(layer.filters.len(), oh, ow, data)
}

/// Non-overlapping 2×2 max pooling. Odd sizes are an error.
pub fn max_pool(input: &FeatureMaps) -> Result<FeatureMaps> {
    if input.height % 2 != 0 || input.width % 2 != 0 {
        return Err(Error::invalid(format!(
            "cannot 2×2-pool an odd {}×{} map",
            input.height, input.width
        )));
    }
    let (oh, ow) = (input.height / 2, input.width / 2);
    let mut data = Vec::with_capacity(input.channels * oh * ow);
    for ch in 0..input.channels {
        for r in 0..oh {
            for c in 0..ow {
                let v = input
                    .at(ch, 2 * r, 2 * c)
                    .max(input.at(ch, 2 * r, 2 * c + 1))
                    .max(input.at(ch, 2 * r + 1, 2 * c))
                    .max(input.at(ch, 2 * r + 1, 2 * c + 1));
                data.push(v);
            }
        }
    }
    FeatureMaps::new(input.channels, oh, ow, data)
}

/// Run every layer (convolve, sigmoid, pool) and return the last pooled maps.
pub fn conv_forward(image: &FeatureMaps, layers: &[ConvLayer]) -> Result<FeatureMaps> {
    let mut cur = image.clone();
    for layer in layers {
        cur = max_pool(&convolve(&cur, layer)?)?;
    }
    Ok(cur)
}

/// Positive and negative weighted mean windows of one filter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterVisualization {
    /// Filter weights of the first input channel, `kh × kw`.
    pub weights: Vec<f64>,
    pub side: (usize, usize),
    pub positive: Vec<f64>,
    pub negative: Vec<f64>,
    pub positive_empty: bool,
    pub negative_empty: bool,
}

/// Average the receptive fields of `filter` in layer `layer` over every
/// position of every image. Each field is weighted by `|y − 0.5|` where `y`
/// is the filter output there, and goes to the positive mean when `y > 0.5`
/// and to the negative mean when `y < 0.5`. Fields are cut from the original
/// images, so a second-layer 5×5 filter behind one 5×5 layer shows 14×14.
pub fn visualize_filter(
    layers: &[ConvLayer],
    layer: usize,
    filter: usize,
    images: &[FeatureMaps],
) -> Result<FilterVisualization> {
    if layer >= layers.len() || filter >= layers[layer].filters.len() {
        return Err(Error::invalid("no such filter"));
    }
    // Receptive field size and stride of one unit of `layer`, in image pixels.
    let (mut field, mut stride) = ((1usize, 1usize), 1usize);
    for (k, l) in layers[..=layer].iter().enumerate() {
        field.0 += (l.kernel.0 - 1) * stride;
        field.1 += (l.kernel.1 - 1) * stride;
        if k < layer {
            field.0 += stride;
            field.1 += stride;
            stride *= 2;
        }
    }
    let n = field.0 * field.1;
    let mut pos = vec![0.0; n];
    let mut neg = vec![0.0; n];
    let (mut wp, mut wn) = (0.0, 0.0);
    for img in images {
        let mut input = img.clone();
        for l in &layers[..layer] {
            input = max_pool(&convolve(&input, l)?)?;
        }
        let out = convolve(
            &input,
            &ConvLayer {
                kernel: layers[layer].kernel,
                in_channels: layers[layer].in_channels,
                filters: vec![layers[layer].filters[filter].clone()],
            },
        )?;
        for r in 0..out.height {
            for c in 0..out.width {
                let y = out.at(0, r, c);
                let weight = (y - 0.5).abs();
                if weight == 0.0 {
                    continue;
                }
                let patch = img.window(field, r * stride, c * stride);
                let (acc, total) = if y > 0.5 { (&mut pos, &mut wp) } else { (&mut neg, &mut wn) };
                for (a, v) in acc.iter_mut().zip(&patch) {
                    *a += weight * v;
                }
                *total += weight;
            }
        }
    }
    if wp > 0.0 {
        pos.iter_mut().for_each(|v| *v /= wp);
    }
    if wn > 0.0 {
        neg.iter_mut().for_each(|v| *v /= wn);
    }
    let f = &layers[layer].filters[filter];
    let (kh, kw) = layers[layer].kernel;
    Ok(FilterVisualization {
        weights: f.w[..kh * kw].to_vec(),
        side: field,
        positive: pos,
        negative: neg,
        positive_empty: wp == 0.0,
        negative_empty: wn == 0.0,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvEnnConfig {
    pub layers: Vec<ConvLayerSpec>,
    #[serde(default = "default_windows")]
    pub windows_per_class: usize,
    pub enn: EnnHyperparams,
}

fn default_windows() -> usize {
    100
}

impl ConvEnnConfig {
    /// Two 5×5 layers with 6 and 16 filters.
    pub fn lenet(enn: EnnHyperparams) -> Self {
        ConvEnnConfig {
            layers: vec![ConvLayerSpec::new(6, (5, 5)), ConvLayerSpec::new(16, (5, 5))],
            windows_per_class: default_windows(),
            enn,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvEnn {
    pub layers: Vec<ConvLayer>,
    pub enn: EnnModel,
    pub centroids_separated: Vec<bool>,
}

fn padded_maps(data: &LabeledDataset) -> Result<Vec<FeatureMaps>> {
    (0..data.len())
        .map(|i| pad_image(data.x.row(i).as_slice().expect("standard layout")))
        .collect()
}

/// Flattened conv features of every row of `data` (28×28 images).
pub fn conv_features(layers: &[ConvLayer], data: &LabeledDataset) -> Result<LabeledDataset> {
    let maps = padded_maps(data)?;
    let feats = maps
        .par_iter()
        .map(|m| conv_forward(m, layers).map(|f| f.data))
        .collect::<Result<Vec<_>>>()?;
    let dim = feats.first().map_or(0, Vec::len);
    let x = Array2::from_shape_vec((feats.len(), dim), feats.concat()).expect("uniform feature size");
    LabeledDataset::new(x, data.y.clone(), data.class_names.clone(), data.meta.clone())
}

pub fn train_cenn(data: &LabeledDataset, cfg: &ConvEnnConfig, seed: u64) -> Result<ConvEnn> {
    let mut maps = padded_maps(data)?;
    let mut layers = Vec::with_capacity(cfg.layers.len());
    let mut separated = Vec::new();
    for (k, spec) in cfg.layers.iter().enumerate() {
        let (windows, _) = sample_windows(
            &maps,
            &data.y,
            data.n_classes(),
            cfg.windows_per_class,
            spec.kernel,
            rng::derive(seed, "cenn-windows", &[k as u64]),
        )?;
        let fit = learn_conv_filters(windows.view(), spec, rng::derive(seed, "cenn-filters", &[k as u64]))?;
        separated.push(fit.centroids_separated);
        let layer = ConvLayer {
            kernel: spec.kernel,
            in_channels: maps[0].channels,
            filters: fit.filters,
        };
        maps = maps
            .par_iter()
            .map(|m| max_pool(&convolve(m, &layer)?))
            .collect::<Result<Vec<_>>>()?;
        layers.push(layer);
    }
    let dim = maps[0].data.len();
    let x = Array2::from_shape_vec((maps.len(), dim), maps.into_iter().flat_map(|m| m.data).collect())
        .expect("uniform feature size");
    let feats = LabeledDataset::new(x, data.y.clone(), data.class_names.clone(), data.meta.clone())?;
    let enn = train_enn(&feats, &cfg.enn, rng::derive(seed, "cenn-enn", &[]))?;
    Ok(ConvEnn {
        layers,
        enn,
        centroids_separated: separated,
    })
}

impl ConvEnn {
    pub fn error_rate(&self, data: &LabeledDataset) -> Result<f64> {
        let f = conv_features(&self.layers, data)?;
        self.enn.network.error_rate(f.x.view(), &f.y)
    }
}
