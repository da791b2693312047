use std::ops::Range;

use rand::Rng;

use super::{Image, LabelMap, ModelConfig, ParamVector, ProbMap};
use crate::error::{Error, Result};
use crate::numerics::{cross_entropy_slice, log_sum_exp, softmax_into};
use crate::rng::{stream, Stream};

/// Forward-pass mode. Dropout masks are a pure function of `dropout_seed`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Eval,
    Train { dropout_seed: u64 },
}

/// Offsets of each parameter block inside a [`ParamVector`].
///
/// Blocks are laid out as: stage-1 weights (`K1 x (2r_a+1)^2 F`, row-major),
/// stage-1 bias (`K1`), stage-2 weights (`K2 x (2r_p+1)^2 K1`), stage-2 bias
/// (`K2`), auxiliary head weights (`C x K1`), auxiliary bias (`C`), primary
/// head weights (`C x K2`), primary bias (`C`). Window inputs are ordered by
/// row offset, then column offset, then channel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    pub stage1_weights: Range<usize>,
    pub stage1_bias: Range<usize>,
    pub stage2_weights: Range<usize>,
    pub stage2_bias: Range<usize>,
    pub aux_weights: Range<usize>,
    pub aux_bias: Range<usize>,
    pub primary_weights: Range<usize>,
    pub primary_bias: Range<usize>,
}

impl ParamLayout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let in1 = window_len(cfg.aux_radius, cfg.features);
        let in2 = window_len(cfg.primary_radius, cfg.stage1_width);
        let (k1, k2, c) = (cfg.stage1_width, cfg.stage2_width, cfg.classes);
        let mut next = 0;
        let mut block = |len: usize| {
            let r = next..next + len;
            next += len;
            r
        };
        ParamLayout {
            stage1_weights: block(k1 * in1),
            stage1_bias: block(k1),
            stage2_weights: block(k2 * in2),
            stage2_bias: block(k2),
            aux_weights: block(c * k1),
            aux_bias: block(c),
            primary_weights: block(c * k2),
            primary_bias: block(c),
        }
    }

    pub fn total(&self) -> usize {
        self.primary_bias.end
    }
}

fn window_len(radius: usize, channels: usize) -> usize {
    let side = 2 * radius + 1;
    side * side * channels
}

/// Copy the zero-padded `radius` window around `(y, x)` of a `h x w x ch` grid.
fn gather(src: &[f64], h: usize, w: usize, ch: usize, y: usize, x: usize, radius: usize, out: &mut [f64]) {
    let r = radius as isize;
    let mut o = 0;
    for dy in -r..=r {
        for dx in -r..=r {
            let (yy, xx) = (y as isize + dy, x as isize + dx);
            if yy < 0 || xx < 0 || yy >= h as isize || xx >= w as isize {
                out[o..o + ch].fill(0.0);
            } else {
                let s = (yy as usize * w + xx as usize) * ch;
                out[o..o + ch].copy_from_slice(&src[s..s + ch]);
            }
            o += ch;
        }
    }
}

/// Adjoint of [`gather`]: accumulate a window gradient back onto the grid.
fn scatter_add(dst: &mut [f64], h: usize, w: usize, ch: usize, y: usize, x: usize, radius: usize, win: &[f64]) {
    let r = radius as isize;
    let mut o = 0;
    for dy in -r..=r {
        for dx in -r..=r {
            let (yy, xx) = (y as isize + dy, x as isize + dx);
            if yy >= 0 && xx >= 0 && yy < h as isize && xx < w as isize {
                let s = (yy as usize * w + xx as usize) * ch;
                for (d, g) in dst[s..s + ch].iter_mut().zip(&win[o..o + ch]) {
                    *d += g;
                }
            }
            o += ch;
        }
    }
}

/// `out = bias + weights * input` for a row-major `out.len() x input.len()` matrix.
fn affine(weights: &[f64], bias: &[f64], input: &[f64], out: &mut [f64]) {
    let n = input.len();
    for (k, o) in out.iter_mut().enumerate() {
        let row = &weights[k * n..(k + 1) * n];
        *o = bias[k] + row.iter().zip(input).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// Accumulate the gradients of [`affine`] given the output gradient `dout`.
/// When `dinput` is given it receives `weights^T dout` (added).
fn affine_backward(
    weights: &[f64],
    input: &[f64],
    dout: &[f64],
    dweights: &mut [f64],
    dbias: &mut [f64],
    dinput: Option<&mut [f64]>,
) {
    let n = input.len();
    for (k, &g) in dout.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        dbias[k] += g;
        for (dw, &x) in dweights[k * n..(k + 1) * n].iter_mut().zip(input) {
            *dw += g * x;
        }
    }
    if let Some(dinput) = dinput {
        for (k, &g) in dout.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            for (di, &wv) in dinput.iter_mut().zip(&weights[k * n..(k + 1) * n]) {
                *di += g * wv;
            }
        }
    }
}

/// Per-image intermediate values kept for the backward pass.
struct Activations {
    h1: Vec<f64>,
    h2: Vec<f64>,
    mask1: Option<Vec<f64>>,
    mask2: Option<Vec<f64>>,
    primary_logits: Vec<f64>,
    aux_logits: Vec<f64>,
}

/// Head outputs handed to a custom loss in [`SegModel::head_gradient`].
pub struct HeadOutputs<'a> {
    pub primary_logits: &'a [f64],
    pub aux_logits: &'a [f64],
    pub primary: ProbMap,
    pub aux: ProbMap,
}

#[derive(Debug, Clone)]
pub struct SegModel {
    config: ModelConfig,
    layout: ParamLayout,
}

impl SegModel {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let layout = ParamLayout::new(&config);
        Ok(SegModel { config, layout })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn param_count(&self) -> usize {
        self.layout.total()
    }

    /// Uniform init in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` for every block.
    pub fn init_params(&self, seed: u64) -> ParamVector {
        let cfg = &self.config;
        let l = &self.layout;
        let mut rng = stream(seed, Stream::Init);
        let mut values = vec![0.0; l.total()];
        let fan_in1 = window_len(cfg.aux_radius, cfg.features);
        let fan_in2 = window_len(cfg.primary_radius, cfg.stage1_width);
        let blocks = [
            (l.stage1_weights.clone(), fan_in1),
            (l.stage1_bias.clone(), fan_in1),
            (l.stage2_weights.clone(), fan_in2),
            (l.stage2_bias.clone(), fan_in2),
            (l.aux_weights.clone(), cfg.stage1_width),
            (l.aux_bias.clone(), cfg.stage1_width),
            (l.primary_weights.clone(), cfg.stage2_width),
            (l.primary_bias.clone(), cfg.stage2_width),
        ];
        for (range, fan_in) in blocks {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for v in &mut values[range] {
                *v = rng.gen_range(-bound..=bound);
            }
        }
        ParamVector::from_raw(values)
    }

    fn check_inputs(&self, params: &ParamVector, image: &Image) -> Result<()> {
        if params.len() != self.layout.total() {
            return Err(Error::shape(format!(
                "parameter vector has {} entries, model expects {}",
                params.len(),
                self.layout.total()
            )));
        }
        let cfg = &self.config;
        if (image.height(), image.width(), image.features()) != (cfg.height, cfg.width, cfg.features) {
            return Err(Error::shape(format!(
                "image is {}x{}x{}, model expects {}x{}x{}",
                image.height(),
                image.width(),
                image.features(),
                cfg.height,
                cfg.width,
                cfg.features
            )));
        }
        Ok(())
    }

    fn dropout_masks(&self, mode: Mode, pixels: usize) -> (Option<Vec<f64>>, Option<Vec<f64>>) {
        let rate = self.config.dropout_rate;
        let seed = match mode {
            Mode::Train { dropout_seed } if rate > 0.0 => dropout_seed,
            _ => return (None, None),
        };
        let keep_scale = 1.0 / (1.0 - rate);
        let mut rng = stream(seed, Stream::Dropout);
        let mut draw = |n: usize| -> Vec<f64> {
            (0..n)
                .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep_scale })
                .collect()
        };
        let m1 = draw(pixels * self.config.stage1_width);
        let m2 = draw(pixels * self.config.stage2_width);
        (Some(m1), Some(m2))
    }

    fn activations(&self, params: &ParamVector, image: &Image, mode: Mode) -> Result<Activations> {
        self.check_inputs(params, image)?;
        let cfg = &self.config;
        let l = &self.layout;
        let p = params.as_slice();
        let (h, w) = (cfg.height, cfg.width);
        let (k1, k2, c) = (cfg.stage1_width, cfg.stage2_width, cfg.classes);
        let npix = h * w;
        let (mask1, mask2) = self.dropout_masks(mode, npix);

        let mut win1 = vec![0.0; window_len(cfg.aux_radius, cfg.features)];
        let mut h1 = vec![0.0; npix * k1];
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                gather(image.data(), h, w, cfg.features, y, x, cfg.aux_radius, &mut win1);
                let out = &mut h1[i * k1..(i + 1) * k1];
                affine(&p[l.stage1_weights.clone()], &p[l.stage1_bias.clone()], &win1, out);
                out.iter_mut().for_each(|v| *v = v.tanh());
            }
        }

        let mut win2 = vec![0.0; window_len(cfg.primary_radius, k1)];
        let mut h2 = vec![0.0; npix * k2];
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                gather(&h1, h, w, k1, y, x, cfg.primary_radius, &mut win2);
                let out = &mut h2[i * k2..(i + 1) * k2];
                affine(&p[l.stage2_weights.clone()], &p[l.stage2_bias.clone()], &win2, out);
                out.iter_mut().for_each(|v| *v = v.tanh());
            }
        }

        let mut aux_logits = vec![0.0; npix * c];
        let mut primary_logits = vec![0.0; npix * c];
        let mut d1 = vec![0.0; k1];
        let mut d2 = vec![0.0; k2];
        for i in 0..npix {
            d1.copy_from_slice(&h1[i * k1..(i + 1) * k1]);
            d2.copy_from_slice(&h2[i * k2..(i + 1) * k2]);
            if let (Some(m1), Some(m2)) = (&mask1, &mask2) {
                d1.iter_mut().zip(&m1[i * k1..]).for_each(|(v, m)| *v *= m);
                d2.iter_mut().zip(&m2[i * k2..]).for_each(|(v, m)| *v *= m);
            }
            affine(
                &p[l.aux_weights.clone()],
                &p[l.aux_bias.clone()],
                &d1,
                &mut aux_logits[i * c..(i + 1) * c],
            );
            affine(
                &p[l.primary_weights.clone()],
                &p[l.primary_bias.clone()],
                &d2,
                &mut primary_logits[i * c..(i + 1) * c],
            );
        }

        Ok(Activations {
            h1,
            h2,
            mask1,
            mask2,
            primary_logits,
            aux_logits,
        })
    }

    fn probs(&self, logits: &[f64]) -> ProbMap {
        let cfg = &self.config;
        let mut data = vec![0.0; logits.len()];
        for (z, p) in logits.chunks(cfg.classes).zip(data.chunks_mut(cfg.classes)) {
            softmax_into(z, p);
        }
        ProbMap::from_raw(cfg.height, cfg.width, cfg.classes, data)
    }

    /// Returns `(primary, aux)` probability maps.
    pub fn forward(&self, params: &ParamVector, image: &Image, mode: Mode) -> Result<(ProbMap, ProbMap)> {
        let acts = self.activations(params, image, mode)?;
        Ok((self.probs(&acts.primary_logits), self.probs(&acts.aux_logits)))
    }

    fn backward(
        &self,
        params: &ParamVector,
        image: &Image,
        acts: &Activations,
        dprimary: &[f64],
        daux: &[f64],
        grad: &mut [f64],
    ) {
        let cfg = &self.config;
        let l = &self.layout;
        let p = params.as_slice();
        let (h, w) = (cfg.height, cfg.width);
        let (k1, k2, c) = (cfg.stage1_width, cfg.stage2_width, cfg.classes);
        let npix = h * w;

        let (g_s1, rest) = grad.split_at_mut(l.stage2_weights.start);
        let (g_w1, g_b1) = g_s1.split_at_mut(l.stage1_bias.start);
        let (g_s2, rest) = rest.split_at_mut(l.aux_weights.start - l.stage2_weights.start);
        let (g_w2, g_b2) = g_s2.split_at_mut(l.stage2_bias.start - l.stage2_weights.start);
        let (g_a, g_p) = rest.split_at_mut(l.primary_weights.start - l.aux_weights.start);
        let (g_wa, g_ba) = g_a.split_at_mut(l.aux_bias.start - l.aux_weights.start);
        let (g_wp, g_bp) = g_p.split_at_mut(l.primary_bias.start - l.primary_weights.start);

        let w2 = &p[l.stage2_weights.clone()];
        let wa = &p[l.aux_weights.clone()];
        let wp = &p[l.primary_weights.clone()];

        let mut dh1 = vec![0.0; npix * k1];
        let mut d1 = vec![0.0; k1];
        let mut d2 = vec![0.0; k2];
        let mut dd1 = vec![0.0; k1];
        let mut dd2 = vec![0.0; k2];
        let mut win2 = vec![0.0; window_len(cfg.primary_radius, k1)];
        let mut dwin2 = vec![0.0; win2.len()];

        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let h1i = &acts.h1[i * k1..(i + 1) * k1];
                let h2i = &acts.h2[i * k2..(i + 1) * k2];
                d1.copy_from_slice(h1i);
                d2.copy_from_slice(h2i);
                if let (Some(m1), Some(m2)) = (&acts.mask1, &acts.mask2) {
                    d1.iter_mut().zip(&m1[i * k1..]).for_each(|(v, m)| *v *= m);
                    d2.iter_mut().zip(&m2[i * k2..]).for_each(|(v, m)| *v *= m);
                }

                dd2.fill(0.0);
                affine_backward(wp, &d2, &dprimary[i * c..(i + 1) * c], g_wp, g_bp, Some(&mut dd2));
                dd1.fill(0.0);
                affine_backward(wa, &d1, &daux[i * c..(i + 1) * c], g_wa, g_ba, Some(&mut dd1));

                if let (Some(m1), Some(m2)) = (&acts.mask1, &acts.mask2) {
                    dd1.iter_mut().zip(&m1[i * k1..]).for_each(|(v, m)| *v *= m);
                    dd2.iter_mut().zip(&m2[i * k2..]).for_each(|(v, m)| *v *= m);
                }
                for (g, &a) in dd2.iter_mut().zip(h2i) {
                    *g *= 1.0 - a * a;
                }
                for (acc, g) in dh1[i * k1..(i + 1) * k1].iter_mut().zip(&dd1) {
                    *acc += g;
                }

                gather(&acts.h1, h, w, k1, y, x, cfg.primary_radius, &mut win2);
                dwin2.fill(0.0);
                affine_backward(w2, &win2, &dd2, g_w2, g_b2, Some(&mut dwin2));
                scatter_add(&mut dh1, h, w, k1, y, x, cfg.primary_radius, &dwin2);
            }
        }

        let mut win1 = vec![0.0; window_len(cfg.aux_radius, cfg.features)];
        let mut dz1 = vec![0.0; k1];
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                for ((g, &d), &a) in dz1
                    .iter_mut()
                    .zip(&dh1[i * k1..(i + 1) * k1])
                    .zip(&acts.h1[i * k1..(i + 1) * k1])
                {
                    *g = d * (1.0 - a * a);
                }
                gather(image.data(), h, w, cfg.features, y, x, cfg.aux_radius, &mut win1);
                affine_backward(&[], &win1, &dz1, g_w1, g_b1, None);
            }
        }
    }

    /// Gradient of an arbitrary per-image loss defined on the head outputs.
    ///
    /// `loss` receives the head outputs and must fill the gradient of the loss
    /// with respect to the primary and auxiliary logits (both `H*W*C`, pixel
    /// major). The parameter gradient is added into `grad`; the loss value is
    /// returned.
    pub fn head_gradient<F>(
        &self,
        params: &ParamVector,
        image: &Image,
        mode: Mode,
        grad: &mut [f64],
        loss: F,
    ) -> Result<f64>
    where
        F: FnOnce(&HeadOutputs<'_>, &mut [f64], &mut [f64]) -> f64,
    {
        if grad.len() != self.param_count() {
            return Err(Error::shape("gradient buffer length"));
        }
        let acts = self.activations(params, image, mode)?;
        let outputs = HeadOutputs {
            primary_logits: &acts.primary_logits,
            aux_logits: &acts.aux_logits,
            primary: self.probs(&acts.primary_logits),
            aux: self.probs(&acts.aux_logits),
        };
        let n = acts.primary_logits.len();
        let mut dprimary = vec![0.0; n];
        let mut daux = vec![0.0; n];
        let value = loss(&outputs, &mut dprimary, &mut daux);
        self.backward(params, image, &acts, &dprimary, &daux, grad);
        Ok(value)
    }

    /// Source loss of one labelled image (fused log-softmax path) and its gradient.
    pub fn datum_loss_and_grad(
        &self,
        params: &ParamVector,
        image: &Image,
        labels: &LabelMap,
        aux_weight: f64,
        mode: Mode,
        grad: &mut [f64],
    ) -> Result<f64> {
        let c = self.config.classes;
        if (labels.height(), labels.width()) != (image.height(), image.width()) {
            return Err(Error::shape("label map and image disagree"));
        }
        labels.check_classes(c)?;
        let npix = image.pixels() as f64;
        self.head_gradient(params, image, mode, grad, |out, dp, da| {
            let mut loss_p = 0.0;
            let mut loss_a = 0.0;
            for (i, &label) in labels.data().iter().enumerate() {
                let y = label as usize;
                let range = i * c..(i + 1) * c;
                let zp = &out.primary_logits[range.clone()];
                let za = &out.aux_logits[range.clone()];
                loss_p += log_sum_exp(zp) - zp[y];
                loss_a += log_sum_exp(za) - za[y];
                let pp = out.primary.pixel(i);
                let pa = out.aux.pixel(i);
                for k in 0..c {
                    let onehot = if k == y { 1.0 } else { 0.0 };
                    dp[range.start + k] = (pp[k] - onehot) / npix;
                    da[range.start + k] = aux_weight * (pa[k] - onehot) / npix;
                }
            }
            loss_p / npix + aux_weight * loss_a / npix
        })
    }

    /// Mean source loss over a batch and its gradient. Item `i` of the batch
    /// uses dropout seed `derive_seed(dropout_seed, i)`.
    pub fn batch_loss_and_grad(
        &self,
        params: &ParamVector,
        batch: &[(&Image, &LabelMap)],
        aux_weight: f64,
        dropout_seed: u64,
    ) -> Result<(f64, Vec<f64>)> {
        if batch.is_empty() {
            return Err(Error::domain("empty training batch"));
        }
        let mut grad = vec![0.0; self.param_count()];
        let mut loss = 0.0;
        for (i, (image, labels)) in batch.iter().enumerate() {
            let mode = Mode::Train {
                dropout_seed: derive_seed(dropout_seed, i as u64),
            };
            loss += self.datum_loss_and_grad(params, image, labels, aux_weight, mode, &mut grad)?;
        }
        let scale = 1.0 / batch.len() as f64;
        grad.iter_mut().for_each(|g| *g *= scale);
        Ok((loss * scale, grad))
    }

    /// One SGD step on the mean batch source loss. Returns the updated
    /// parameters and the loss at the incoming parameters.
    pub fn grad_step(
        &self,
        params: &ParamVector,
        batch: &[(&Image, &LabelMap)],
        lr: f64,
        aux_weight: f64,
        dropout_seed: u64,
    ) -> Result<(ParamVector, f64)> {
        if !(lr >= 0.0) {
            return Err(Error::domain(format!("learning rate {lr}")));
        }
        let (loss, grad) = self.batch_loss_and_grad(params, batch, aux_weight, dropout_seed)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("batch loss {loss}")));
        }
        Ok((sgd_update(params, &grad, lr), loss))
    }
}

pub(crate) fn sgd_update(params: &ParamVector, grad: &[f64], lr: f64) -> ParamVector {
    let values = params
        .as_slice()
        .iter()
        .zip(grad)
        .map(|(p, g)| p - lr * g)
        .collect();
    ParamVector::from_raw(values)
}

/// SplitMix64 finalizer over `seed + index`.
pub(crate) fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mean-over-pixels CE of the primary head plus `aux_weight` times that of
/// the auxiliary head, on clamped probabilities.
pub fn source_loss(primary: &ProbMap, aux: &ProbMap, labels: &LabelMap, aux_weight: f64) -> Result<f64> {
    if !primary.same_shape(aux) || (labels.height(), labels.width()) != (primary.height(), primary.width()) {
        return Err(Error::shape("source loss inputs disagree"));
    }
    labels.check_classes(primary.classes())?;
    let npix = primary.pixels() as f64;
    let mut lp = 0.0;
    let mut la = 0.0;
    for (i, &y) in labels.data().iter().enumerate() {
        lp += cross_entropy_slice(primary.pixel(i), y as usize);
        la += cross_entropy_slice(aux.pixel(i), y as usize);
    }
    Ok(lp / npix + aux_weight * la / npix)
}

/// Per-pixel mean of the two heads, renormalized.
pub fn fuse_predictions(primary: &ProbMap, aux: &ProbMap) -> Result<ProbMap> {
    if !primary.same_shape(aux) {
        return Err(Error::shape("cannot fuse maps of different shapes"));
    }
    let c = primary.classes();
    let mut data = Vec::with_capacity(primary.data().len());
    for (a, b) in primary.iter_pixels().zip(aux.iter_pixels()) {
        let start = data.len();
        data.extend(a.iter().zip(b).map(|(x, y)| 0.5 * (x + y)));
        let sum: f64 = data[start..start + c].iter().sum();
        data[start..].iter_mut().for_each(|v| *v /= sum);
    }
    Ok(ProbMap::from_raw(primary.height(), primary.width(), c, data))
}
