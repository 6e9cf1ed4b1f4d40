use ndarray::{s, Array2, Array3, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::block::{block_backward, block_forward, uniform, BlockCache, BlockHandles, BlockSpec};
use super::config::ModelConfig;
use super::rpe::RpeConfig;
use crate::data::HistoryWindow;
use crate::embed::{
    embed_backward, embed_fields, patch_decode, patch_decode_backward, patch_encode, patch_encode_backward, reconstruct_backward,
    reconstruct_fields, revin_backward, revin_denormalize, revin_normalize, stage_strides_for, MasterFilters, NormStats, PatchCache,
    StageParams,
};
use crate::error::{MppError, Result};
use crate::nn::{InstanceNorm, Param, ParamSet};
use crate::real::Real;

/// Where every tensor of the model lives inside its [`ParamSet`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelHandles {
    /// `[D, F_total]`.
    pub embed: Param,
    /// `[F_total, D]`.
    pub recon: Param,
    /// `(weight, bias)` per encoder stage.
    pub encoder: Vec<(Param, Param)>,
    /// `(weight, bias)` per decoder stage, in decoder order.
    pub decoder: Vec<(Param, Param)>,
    pub rpe_time: Param,
    pub rpe_space: Param,
    pub blocks: Vec<BlockHandles>,
}

/// Axial vision transformer over a shared field-embedding space.
#[derive(Debug, Clone)]
pub struct Avit<F> {
    pub config: ModelConfig,
    pub params: ParamSet<F>,
    pub handles: ModelHandles,
}

/// Everything the backward pass needs from one forward evaluation.
#[derive(Debug, Clone)]
pub struct ForwardCache<F> {
    frames: Array4<F>,
    field_indices: Vec<usize>,
    stats: NormStats,
    pixels: Array2<F>,
    spatial: [usize; 2],
    enc: PatchCache<F>,
    token_dims: [usize; 3],
    blocks: Vec<BlockCache<F>>,
    dec: PatchCache<F>,
    grid_out: Array2<F>,
    pred_norm: Array3<F>,
    /// Attention scores formed, summed over all blocks and axes.
    pub scores: usize,
}

impl<F: Real> Avit<F> {
    pub fn new(config: ModelConfig, n_fields: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        if n_fields == 0 {
            return Err(MppError::config("model needs at least one field"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.embed_dim;
        let mut params = ParamSet::new();
        let filters = MasterFilters::<F>::init(d, n_fields, &mut rng);
        let embed = params.add("filters.embed", filters.embed.into_dyn());
        let recon = params.add("filters.recon", filters.recon.into_dyn());
        let stage = |params: &mut ParamSet<F>, name: String, s: usize, rng: &mut ChaCha8Rng| {
            (
                params.add(format!("{name}.w"), uniform(&[s, s, d, d], s * s * d, rng)),
                params.add(format!("{name}.b"), ParamSet::<F>::zeros(&[d])),
            )
        };
        let encoder: Vec<_> = config
            .stage_strides
            .iter()
            .enumerate()
            .map(|(k, &s)| stage(&mut params, format!("encoder.{k}"), s, &mut rng))
            .collect();
        let decoder: Vec<_> = config
            .stage_strides
            .iter()
            .rev()
            .enumerate()
            .map(|(k, &s)| stage(&mut params, format!("decoder.{k}"), s, &mut rng))
            .collect();
        let table = [config.rpe_buckets, config.n_heads];
        let rpe_time = params.add("rpe.time", ParamSet::<F>::zeros(&table));
        let rpe_space = params.add("rpe.space", ParamSet::<F>::zeros(&table));
        let blocks = (0..config.n_blocks)
            .map(|b| {
                BlockHandles::register(
                    &mut params,
                    &format!("block.{b}"),
                    d,
                    config.mlp_dim,
                    config.n_heads,
                    rpe_time,
                    rpe_space,
                    &mut rng,
                )
            })
            .collect();
        Ok(Self {
            config,
            params,
            handles: ModelHandles {
                embed,
                recon,
                encoder,
                decoder,
                rpe_time,
                rpe_space,
                blocks,
            },
        })
    }

    pub fn n_fields(&self) -> usize {
        self.params.shape(self.handles.embed)[1]
    }

    pub fn block_spec(&self) -> BlockSpec {
        BlockSpec {
            heads: self.config.n_heads,
            rpe: RpeConfig {
                buckets: self.config.rpe_buckets,
                max_exact: self.config.rpe_max_exact,
                max_distance: self.config.rpe_max_distance,
            },
            norm: InstanceNorm::default(),
        }
    }

    /// Appends `n_new` fields to the master filters; all other parameters
    /// and existing filter entries are untouched.
    pub fn extend_filters(&mut self, n_new: usize, seed: u64) -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let current = MasterFilters {
            embed: self.params.v2(self.handles.embed).to_owned(),
            recon: self.params.v2(self.handles.recon).to_owned(),
        };
        let ext = current.extend(n_new, &mut rng)?;
        self.params.set(self.handles.embed, ext.embed.into_dyn());
        self.params.set(self.handles.recon, ext.recon.into_dyn());
        Ok(())
    }

    fn stages(&self, which: &[(Param, Param)]) -> Vec<StageParams<'_, F>> {
        which
            .iter()
            .map(|&(w, b)| StageParams {
                weight: self.params.v4(w),
                bias: self.params.v1(b),
            })
            .collect()
    }

    /// Per-block drop-path factors for one training sample: each sub-layer
    /// is kept with probability `1 - p` and then scaled by `1 / (1 - p)`.
    pub fn sample_keep<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<[F; 4]> {
        let p = self.config.drop_path_rate;
        let scale = F::c(1.0 / (1.0 - p));
        (0..self.config.n_blocks)
            .map(|_| {
                let mut k = [scale; 4];
                for v in &mut k {
                    if p > 0.0 && rng.random::<f64>() < p {
                        *v = F::zero();
                    }
                }
                k
            })
            .collect()
    }

    /// Full forward pass. `keep` holds per-block drop-path factors (`None`
    /// is evaluation mode). Returns the denormalised next snapshot
    /// `[n_fields, H, W]`.
    pub fn forward(
        &self,
        frames: &Array4<F>,
        field_indices: &[usize],
        periodic: [bool; 2],
        keep: Option<&[[F; 4]]>,
    ) -> Result<(Array3<F>, ForwardCache<F>)> {
        let (t, nf, h, w) = frames.dim();
        if t != self.config.history {
            return Err(MppError::shape(format!("window has {t} frames, model expects {}", self.config.history)));
        }
        if nf != field_indices.len() {
            return Err(MppError::shape(format!("{nf} fields but {} registry indices", field_indices.len())));
        }
        if let Some(k) = keep {
            if k.len() != self.config.n_blocks {
                return Err(MppError::shape("one drop-path row per block required"));
            }
        }
        if frames.iter().any(|x| !x.is_finite()) {
            return Err(MppError::NonFinite("input window"));
        }
        let spatial = [h, w];
        let (norm, stats) = revin_normalize(frames);
        let pixels = crate::embed::pixel_major(&norm);
        let grid = embed_fields(&norm, field_indices, self.params.v2(self.handles.embed))?;
        let strides = stage_strides_for(&self.config.stage_strides, spatial)?;
        let enc_stages = self.stages(&self.handles.encoder);
        let (mut tokens, tdims, enc) = patch_encode(&grid, t, spatial, &enc_stages, &strides)?;
        let dims = [t, tdims[0], tdims[1]];
        let spec = self.block_spec();
        let mut blocks = Vec::with_capacity(self.handles.blocks.len());
        let mut scores = 0;
        for (b, bh) in self.handles.blocks.iter().enumerate() {
            let k = keep.map_or([F::one(); 4], |k| k[b]);
            let (y, c) = block_forward(&tokens, dims, &spec, &self.params, bh, periodic, k)?;
            scores += c.scores;
            blocks.push(c);
            tokens = y;
        }
        let per_frame = tdims[0] * tdims[1];
        let last = tokens.slice(s![(t - 1) * per_frame.., ..]).to_owned();
        let dec_strides: Vec<[usize; 2]> = strides.iter().rev().copied().collect();
        let dec_stages = self.stages(&self.handles.decoder);
        let (grid_out, out_dims, dec) = patch_decode(&last, 1, tdims, &dec_stages, &dec_strides)?;
        debug_assert_eq!(out_dims, spatial);
        let pred_norm = reconstruct_fields(&grid_out, spatial, field_indices, self.params.v2(self.handles.recon))?;
        let pred = revin_denormalize(&pred_norm, &stats)?;
        Ok((
            pred,
            ForwardCache {
                frames: frames.clone(),
                field_indices: field_indices.to_vec(),
                stats,
                pixels,
                spatial,
                enc,
                token_dims: dims,
                blocks,
                dec,
                grid_out,
                pred_norm,
                scores,
            },
        ))
    }

    /// Evaluation-mode prediction of the snapshot following `window`.
    pub fn predict(&self, window: &HistoryWindow<F>) -> Result<Array3<F>> {
        let (pred, _) = self.forward(&window.frames, &window.field_indices, window.periodic, None)?;
        if pred.iter().any(|x| !x.is_finite()) {
            return Err(MppError::NonFinite("model prediction"));
        }
        Ok(pred)
    }

    /// Accumulates `d loss / d params` into `grads` (same layout as
    /// `self.params`) and returns `d loss / d frames`.
    pub fn backward(&self, cache: &ForwardCache<F>, d_pred: &Array3<F>, grads: &mut ParamSet<F>) -> Array4<F> {
        let h = &self.handles;
        let mut d_pred_norm = d_pred.clone();
        for (f, mut plane) in d_pred_norm.outer_iter_mut().enumerate() {
            let sc = F::c(cache.stats.scale(f));
            plane.mapv_inplace(|v| v * sc);
        }
        let d_grid_out = reconstruct_backward(
            &cache.grid_out,
            &cache.field_indices,
            self.params.v2(h.recon),
            &d_pred_norm,
            grads.m2(h.recon),
        );
        let dec_stages = self.stages(&h.decoder);
        let (d_last, dec_grads) = patch_decode_backward(&cache.dec, &dec_stages, &d_grid_out);
        add_stage_grads(grads, &h.decoder, dec_grads);

        let [t, hp, wp] = cache.token_dims;
        let mut d_tokens = Array2::<F>::zeros((t * hp * wp, self.config.embed_dim));
        d_tokens.slice_mut(s![(t - 1) * hp * wp.., ..]).assign(&d_last);
        let spec = self.block_spec();
        for (bh, c) in h.blocks.iter().zip(&cache.blocks).rev() {
            d_tokens = block_backward(c, &d_tokens, &spec, &self.params, bh, grads);
        }
        let enc_stages = self.stages(&h.encoder);
        let (d_grid, enc_grads) = patch_encode_backward(&cache.enc, &enc_stages, &d_tokens);
        add_stage_grads(grads, &h.encoder, enc_grads);
        let d_norm = embed_backward(
            &cache.pixels,
            (t, cache.spatial[0], cache.spatial[1]),
            &cache.field_indices,
            self.params.v2(h.embed),
            &d_grid,
            grads.m2(h.embed),
        );
        revin_backward(&cache.frames, &cache.stats, &d_norm, &cache.pred_norm, d_pred)
    }

    pub fn cast<G: Real>(&self) -> Avit<G> {
        Avit {
            config: self.config.clone(),
            params: self.params.cast(),
            handles: self.handles.clone(),
        }
    }
}

fn add_stage_grads<F: Real>(grads: &mut ParamSet<F>, handles: &[(Param, Param)], stage_grads: Vec<(Array4<F>, ndarray::Array1<F>)>) {
    for (&(w, b), (dw, db)) in handles.iter().zip(stage_grads) {
        *grads.get_mut(w) += &dw.into_dyn();
        *grads.get_mut(b) += &db.into_dyn();
    }
}

/// Rebuilds handles for a parameter set with the given configuration by
/// name lookup (used when loading checkpoints).
pub fn handles_from_names<F: Real>(config: &ModelConfig, params: &ParamSet<F>) -> Result<ModelHandles> {
    let probe = Avit::<F>::new(config.clone(), 1, 0)?;
    if probe.params.names() != params.names() {
        return Err(MppError::config("parameter names do not match the model configuration"));
    }
    for (p, q) in probe.params.tensors().iter().zip(params.tensors()) {
        if p.ndim() != q.ndim() {
            return Err(MppError::config("parameter ranks do not match the model configuration"));
        }
    }
    Ok(probe.handles)
}

