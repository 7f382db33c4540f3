//! The localizer network: a seven-conv backbone with anchor heads on the
//! last four feature maps.
//!
//! A small encoder embeds the moving template into a vector that scales and
//! shifts every channel of c3 (feature-wise modulation), so the layers that
//! feed the heads know which object they are looking for. The modulation
//! starts out as the identity.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ad::{Activation, BackwardCtx, Function, Tape, Var};
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::nn::{bind, BatchNormLayer, Binding, Conv2dLayer, ConvBnAct, DenseLayer, NamedTensors, Param};
use crate::tensor::{Scalar, Tensor};

use super::anchors::{build_anchors, AnchorSet, ASPECTS};
use super::input::TEMPLATE_SIZE;
use super::loss::ANCHOR_OUTPUTS;

/// `(channels, kernel, padding)` of c1…c7; every conv has stride 1.
pub const BACKBONE: [(usize, usize, usize); 7] = [
    (32, 5, 2),
    (48, 3, 1),
    (64, 3, 1),
    (64, 3, 1),
    (48, 3, 1),
    (48, 3, 1),
    (32, 3, 1),
];

/// Backbone layers (0-based) that feed anchor heads: c4…c7.
pub const PREDICTORS: [usize; 4] = [3, 4, 5, 6];

/// Input channels: the tiled moving template and the fixed image.
pub const INPUT_CHANNELS: usize = 2;

const HEAD_CHANNELS: usize = 3 * ANCHOR_OUTPUTS;

/// Output channels of the template encoder's 3×3 convs; each is followed by
/// ELU, the first two by 2×2 pooling, the last by global averaging.
pub const ENCODER: [usize; 3] = [32, 48, 64];

/// Backbone layer (0-based) whose output is modulated by the template.
pub const FILM_LAYER: usize = 2;

#[derive(Clone, Debug)]
pub struct LocNetModel<T> {
    pub input_size: usize,
    pub encoder: Vec<Conv2dLayer<T>>,
    /// Embedding to `[γ, β]` for the modulated layer.
    pub film: DenseLayer<T>,
    pub blocks: Vec<ConvBnAct<T>>,
    pub heads: Vec<Conv2dLayer<T>>,
    pub anchors: AnchorSet,
}

impl<T: Scalar> LocNetModel<T> {
    pub fn new<R: Rng>(input_size: usize, rng: &mut R) -> Result<Self> {
        let anchors = build_anchors(input_size)?;
        let mut encoder = Vec::new();
        let mut in_ch = 1;
        for (l, &ch) in ENCODER.iter().enumerate() {
            encoder.push(Conv2dLayer::new(&format!("enc{}", l + 1), in_ch, ch, 3, 1, 1, rng));
            in_ch = ch;
        }
        let mut film = DenseLayer::new("film", in_ch, 2 * BACKBONE[FILM_LAYER].0, rng);
        film.weight.value = Tensor::zeros(film.weight.value.shape().to_vec());
        let mut blocks = Vec::new();
        let mut in_ch = INPUT_CHANNELS;
        for (l, &(ch, k, p)) in BACKBONE.iter().enumerate() {
            let name = format!("c{}", l + 1);
            blocks.push(ConvBnAct {
                conv: Conv2dLayer::new(&name, in_ch, ch, k, 1, p, rng),
                bn: BatchNormLayer::new(&format!("{name}.bn"), ch),
                act: Activation::Elu,
            });
            in_ch = ch;
        }
        let heads = PREDICTORS
            .iter()
            .map(|&l| {
                Conv2dLayer::new(&format!("head{}", l + 1), BACKBONE[l].0, HEAD_CHANNELS, 3, 1, 1, rng)
            })
            .collect();
        Ok(Self {
            input_size,
            encoder,
            film,
            blocks,
            heads,
            anchors,
        })
    }

    /// Parameters in the order the forward pass consumes them.
    pub fn params(&self) -> Vec<&Param<T>> {
        let mut v: Vec<&Param<T>> = self.encoder.iter().flat_map(|c| c.params()).collect();
        v.extend(self.film.params());
        v.extend(self.blocks.iter().flat_map(|b| b.params()));
        v.extend(self.heads.iter().flat_map(|h| h.params()));
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v: Vec<&mut Param<T>> = self.encoder.iter_mut().flat_map(|c| c.params_mut()).collect();
        v.extend(self.film.params_mut());
        v.extend(self.blocks.iter_mut().flat_map(|b| b.params_mut()));
        v.extend(self.heads.iter_mut().flat_map(|h| h.params_mut()));
        v
    }

    /// `[γ, β]` for the modulated layer, from the first template tile of
    /// the input's channel 0.
    fn conditioning(&self, tape: &mut Tape<T>, b: &mut Binding, x: Var) -> Result<(Var, Var)> {
        let t = TEMPLATE_SIZE;
        let (n, s) = (tape.shape(x)[0], self.input_size);
        let xd = tape.value(x).data();
        let mut tpl = Vec::with_capacity(n * t * t);
        for i in 0..n {
            for r in 0..t {
                let row = i * INPUT_CHANNELS * s * s + r * s;
                tpl.extend_from_slice(&xd[row..row + t]);
            }
        }
        let mut h = tape.constant(Tensor::new(vec![n, 1, t, t], tpl)?);
        for (l, conv) in self.encoder.iter().enumerate() {
            h = conv.forward(tape, b, h)?;
            h = tape.elu(h)?;
            if l + 1 < self.encoder.len() {
                h = tape.maxpool2d(h, 2, 2)?;
            }
        }
        let e = tape.global_avg_pool(h)?;
        let gb = self.film.forward(tape, b, e)?;
        let c = BACKBONE[FILM_LAYER].0;
        Ok((tape.slice_cols(gb, 0, c)?, tape.slice_cols(gb, c, c)?))
    }

    fn check_input(&self, tape: &Tape<T>, x: Var) -> Result<()> {
        let s = tape.shape(x);
        if s.len() != 4 || s[1] != INPUT_CHANNELS || s[2] != self.input_size || s[3] != self.input_size {
            return Err(Error::param(format!(
                "localizer expects [N, {INPUT_CHANNELS}, {0}, {0}] input, got {s:?}",
                self.input_size
            )));
        }
        Ok(())
    }

    /// Training-mode pass; returns per-anchor predictions `[N, A, 5]` with
    /// the parameter binding, and updates the batch-norm running statistics.
    pub fn forward_train(&mut self, tape: &mut Tape<T>, x: Var) -> Result<(Var, Binding)> {
        self.check_input(tape, x)?;
        let mut b = bind(tape, &self.params());
        let film = self.conditioning(tape, &mut b, x)?;
        let blocks = &mut self.blocks;
        let feats = run_backbone(tape, &mut b, x, blocks.len(), film, |i, t, b, x| {
            blocks[i].forward(t, b, x, true)
        })?;
        let y = self.run_heads(tape, &mut b, &feats)?;
        Ok((y, b))
    }

    pub fn forward_eval(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        self.check_input(tape, x)?;
        let mut b = bind(tape, &self.params());
        let film = self.conditioning(tape, &mut b, x)?;
        let feats = run_backbone(tape, &mut b, x, self.blocks.len(), film, |i, t, b, x| {
            self.blocks[i].forward_eval(t, b, x)
        })?;
        self.run_heads(tape, &mut b, &feats)
    }

    /// Eval-mode predictions `[N, A, 5]` for a batch of pair inputs.
    pub fn predict(&self, x: Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let x = tape.constant(x);
        let y = self.forward_eval(&mut tape, x)?;
        Ok(tape.value(y).clone())
    }

    fn run_heads(&self, tape: &mut Tape<T>, b: &mut Binding, feats: &[Var]) -> Result<Var> {
        let mut outs = Vec::new();
        for (head, &l) in self.heads.iter().zip(&PREDICTORS) {
            outs.push(head.forward(tape, b, feats[l])?);
        }
        tape.gather_anchors(&outs)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut tensors = vec![(
            "meta.input_size".to_string(),
            Tensor::scalar(self.input_size as f32),
        )];
        tensors.extend(self.params().iter().map(|p| (p.name.clone(), p.value.cast())));
        for blk in &self.blocks {
            let n = blk.conv.out_channels();
            for (suffix, stats) in [("running_mean", &blk.bn.running_mean), ("running_var", &blk.bn.running_var)] {
                let name = blk.bn.gamma.name.replace("gamma", suffix);
                let t = Tensor::new(vec![n], stats.iter().map(|v| v.as_f64() as f32).collect())
                    .expect("one value per channel");
                tensors.push((name, t));
            }
        }
        Checkpoint::new(tensors)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let size = ck
            .get("meta.input_size")
            .and_then(|t| t.data().first().copied())
            .ok_or_else(|| Error::param("localizer checkpoint has no `meta.input_size`"))?;
        let mut model = Self::new(size as usize, &mut ChaCha8Rng::seed_from_u64(0))?;
        let named = NamedTensors::new(
            ck.tensors.iter().map(|(n, t)| (n.clone(), t.cast::<T>())).collect(),
        );
        for p in model.params_mut() {
            named.take_into(&p.name.clone(), &mut p.value)?;
        }
        for blk in &mut model.blocks {
            let mean = blk.bn.gamma.name.replace("gamma", "running_mean");
            let var = blk.bn.gamma.name.replace("gamma", "running_var");
            named.take_vec(&mean, &mut blk.bn.running_mean)?;
            named.take_vec(&var, &mut blk.bn.running_var)?;
        }
        Ok(model)
    }
}

fn run_backbone<T: Scalar, F>(
    tape: &mut Tape<T>,
    b: &mut Binding,
    x: Var,
    n: usize,
    (gamma, beta): (Var, Var),
    mut block: F,
) -> Result<Vec<Var>>
where
    F: FnMut(usize, &mut Tape<T>, &mut Binding, Var) -> Result<Var>,
{
    let mut feats = Vec::with_capacity(n);
    let mut h = x;
    for i in 0..n {
        if i > 0 {
            h = tape.maxpool2d(h, 2, 2)?;
        }
        h = block(i, tape, b, h)?;
        if i == FILM_LAYER {
            h = tape.film(h, gamma, beta)?;
        }
        feats.push(h);
    }
    Ok(feats)
}

/// Reorders head maps `[N, 3·5, fh, fw]` into one `[N, A, 5]` tensor with
/// anchors ordered by layer, row, column and aspect.
struct GatherAnchors {
    heads: Vec<Var>,
}

fn head_dims(shape: &[usize]) -> (usize, usize) {
    (shape[2], shape[3])
}

impl<T: Scalar> Function<T> for GatherAnchors {
    fn name(&self) -> &'static str {
        "gather_anchors"
    }

    fn inputs(&self) -> Vec<Var> {
        self.heads.clone()
    }

    fn backward(&self, ctx: &BackwardCtx<'_, T>, g: &[T]) -> Result<Vec<Option<Vec<T>>>> {
        let n = ctx.value(self.heads[0]).shape()[0];
        let total = ctx.output().shape()[1];
        let mut base = 0;
        let mut grads = Vec::new();
        for &h in &self.heads {
            let v = ctx.value(h);
            let (fh, fw) = head_dims(v.shape());
            let cells = fh * fw;
            let mut gh = vec![T::zero(); v.len()];
            for s in 0..n {
                for cell in 0..cells {
                    for a in 0..ASPECTS.len() {
                        let anchor = base + cell * ASPECTS.len() + a;
                        for e in 0..ANCHOR_OUTPUTS {
                            let c = a * ANCHOR_OUTPUTS + e;
                            gh[(s * HEAD_CHANNELS + c) * cells + cell] =
                                g[(s * total + anchor) * ANCHOR_OUTPUTS + e];
                        }
                    }
                }
            }
            base += cells * ASPECTS.len();
            grads.push(ctx.needs_grad(h).then_some(gh));
        }
        Ok(grads)
    }
}

impl<T: Scalar> Tape<T> {
    pub fn gather_anchors(&mut self, heads: &[Var]) -> Result<Var> {
        let first = heads.first().ok_or_else(|| Error::param("gather_anchors: no heads"))?;
        let n = self.shape(*first)[0];
        let mut total = 0;
        for &h in heads {
            let s = self.shape(h);
            if s.len() != 4 || s[0] != n || s[1] != HEAD_CHANNELS {
                return Err(Error::dim(format!("gather_anchors: head shape {s:?}")));
            }
            total += s[2] * s[3] * ASPECTS.len();
        }
        let mut out = vec![T::zero(); n * total * ANCHOR_OUTPUTS];
        let mut base = 0;
        for &h in heads {
            let v = self.value(h);
            let (fh, fw) = head_dims(v.shape());
            let cells = fh * fw;
            let d = v.data();
            for s in 0..n {
                for cell in 0..cells {
                    for a in 0..ASPECTS.len() {
                        let anchor = base + cell * ASPECTS.len() + a;
                        for e in 0..ANCHOR_OUTPUTS {
                            let c = a * ANCHOR_OUTPUTS + e;
                            out[(s * total + anchor) * ANCHOR_OUTPUTS + e] =
                                d[(s * HEAD_CHANNELS + c) * cells + cell];
                        }
                    }
                }
            }
            base += cells * ASPECTS.len();
        }
        let out = Tensor::new(vec![n, total, ANCHOR_OUTPUTS], out)?;
        self.push(
            out,
            Box::new(GatherAnchors {
                heads: heads.to_vec(),
            }),
        )
    }
}
