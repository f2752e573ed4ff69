//! Full conditional model: condition encoder (speaker fusion + text +
//! tags) feeding the denoiser, with checkpoint binding.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::normalize::{hold_upsample_tags, normalize_mat};
use crate::data::{DyadSample, NormalizationStats, MOTION_DIMS};
use crate::denoiser::{Denoiser, DenoiserCache, DenoiserConfig};
use crate::emotion::{inject_tags, inject_tags_backward, TagEmbedder, TagEmbedderCache};
use crate::error::{Error, Result};
use crate::fusion::{
    temporal_semantic_interaction, tsi_backward, SpeakerEmbedder, SpeakerEmbedderCache,
    SpeakerFuser, SpeakerFuserCache, TsiCache,
};
use crate::nn::checkpoint::{load_into_store, save_checkpoint, CheckpointHeader};
use crate::nn::real::Real;
use crate::nn::store::{Grads, Mat, ParamStore};
use crate::text::{TextEncoder, TextResampler, TextResamplerCache, TokenEmbeddingSeq, ToyTextEncoder};

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_blocks: usize,
    pub n_heads: usize,
    pub d_text: usize,
    pub frames: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 64,
            n_blocks: 4,
            n_heads: 4,
            d_text: 32,
            frames: 60,
        }
    }
}

impl ModelConfig {
    pub fn denoiser(&self) -> DenoiserConfig {
        DenoiserConfig {
            d_model: self.d_model,
            n_blocks: self.n_blocks,
            n_heads: self.n_heads,
            frames: self.frames,
            motion_dims: MOTION_DIMS,
        }
    }
}

/// Raw per-sample conditioning inputs, already normalized/tokenized.
#[derive(Debug, Clone)]
pub struct CondInputs<F> {
    /// Normalized speaker motion, [L, 56].
    pub speaker_motion: Mat<F>,
    /// Mel grid, [n_mels, 2L].
    pub mel: Mat<F>,
    /// Token embeddings of the description.
    pub text_tokens: TokenEmbeddingSeq<F>,
    /// Zero-order-held VA track, [L, 2].
    pub tags_upsampled: Mat<F>,
}

impl<F: Real> CondInputs<F> {
    pub fn from_sample(
        sample: &DyadSample,
        stats: &NormalizationStats,
        encoder: &dyn TextEncoder<F>,
    ) -> Result<Self> {
        let l = sample.frames();
        let speaker64 = sample.speaker_motion.frames.mapv(F::from_f32);
        let speaker_motion = normalize_mat(&speaker64, stats)?;
        let mel = sample.speaker_audio.grid.mapv(F::from_f32);
        let text_tokens = encoder.encode(&sample.text.description)?;
        let tags_upsampled = hold_upsample_tags(&sample.tags, l)?.mapv(F::from_f32);
        Ok(CondInputs {
            speaker_motion,
            mel,
            text_tokens,
            tags_upsampled,
        })
    }

    pub fn frames(&self) -> usize {
        self.speaker_motion.nrows()
    }
}

/// Everything the denoiser consumes, assembled once per sample.
#[derive(Debug, Clone)]
pub struct ConditioningBundle<F> {
    pub e_text: Mat<F>,
    pub e_fused: Mat<F>,
    pub f_fused: Mat<F>,
    pub tag_emb: Mat<F>,
    /// F_fused with tags injected element-wise; cross-attention target.
    pub cond_injected: Mat<F>,
}

pub struct CondCache<F> {
    pub speaker: SpeakerEmbedderCache<F>,
    pub fuser: SpeakerFuserCache<F>,
    pub text: TextResamplerCache<F>,
    pub tags: TagEmbedderCache<F>,
    pub tsi: TsiCache<F>,
    pub f_fused: Mat<F>,
    pub tag_emb: Mat<F>,
}

#[derive(Debug, Clone)]
pub struct CondEncoder {
    pub speaker: SpeakerEmbedder,
    pub fuser: SpeakerFuser,
    pub text: TextResampler,
    pub tags: TagEmbedder,
}

impl CondEncoder {
    pub fn new<F: Real, R: rand::Rng>(
        ps: &mut ParamStore<F>,
        cfg: &ModelConfig,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(CondEncoder {
            speaker: SpeakerEmbedder::new(ps, "cond.speaker", cfg.d_model, rng),
            fuser: SpeakerFuser::new(ps, "cond.fuser", cfg.d_model, cfg.n_heads, rng)?,
            text: TextResampler::new(ps, "cond.text", cfg.d_text, cfg.d_model, rng),
            tags: TagEmbedder::new(ps, "cond.tags", cfg.d_model, rng),
        })
    }

    pub fn forward<F: Real>(
        &self,
        ps: &ParamStore<F>,
        inputs: &CondInputs<F>,
    ) -> Result<(ConditioningBundle<F>, CondCache<F>)> {
        let l = inputs.frames();
        let (motion_emb, audio_emb, speaker_cache) =
            self.speaker.forward(ps, &inputs.speaker_motion, &inputs.mel)?;
        let (e_fused, fuser_cache) = self.fuser.forward(ps, &motion_emb, &audio_emb)?;
        let (e_text, text_cache) = self.text.forward(ps, &inputs.text_tokens, l)?;
        let (f_fused, tsi_cache) = temporal_semantic_interaction(&e_fused, &e_text)?;
        let (tag_emb, tags_cache) = self.tags.forward(ps, &inputs.tags_upsampled)?;
        let cond_injected = inject_tags(&f_fused, &tag_emb)?;
        Ok((
            ConditioningBundle {
                e_text,
                e_fused,
                f_fused: f_fused.clone(),
                tag_emb: tag_emb.clone(),
                cond_injected,
            },
            CondCache {
                speaker: speaker_cache,
                fuser: fuser_cache,
                text: text_cache,
                tags: tags_cache,
                tsi: tsi_cache,
                f_fused,
                tag_emb,
            },
        ))
    }

    /// Backward through the bundle: gradients arrive on the injected
    /// conditions and (separately) on the tag embedding used as the
    /// emotional-control query.
    pub fn backward<F: Real>(
        &self,
        ps: &ParamStore<F>,
        cache: &CondCache<F>,
        d_cond_injected: &Mat<F>,
        d_tag_emb_query: &Mat<F>,
        g: &mut Grads<F>,
    ) {
        let (d_f_fused, mut d_tag_emb) =
            inject_tags_backward(&cache.f_fused, &cache.tag_emb, d_cond_injected);
        d_tag_emb += d_tag_emb_query;
        self.tags.backward(ps, &cache.tags, &d_tag_emb, g);

        let (d_e_fused, d_e_text) = tsi_backward(&cache.tsi, &d_f_fused);
        self.text.backward(ps, &cache.text, &d_e_text, g);
        let (d_motion_emb, d_audio_emb) = self.fuser.backward(ps, &cache.fuser, &d_e_fused, g);
        self.speaker
            .backward(ps, &cache.speaker, &d_motion_emb, &d_audio_emb, g);
    }
}

pub struct ModelCache<F> {
    pub cond: CondCache<F>,
    pub denoiser: DenoiserCache<F>,
}

/// Condition encoder + denoiser sharing one parameter store.
pub struct ListenerModel<F> {
    pub cfg: ModelConfig,
    pub store: ParamStore<F>,
    pub cond: CondEncoder,
    pub denoiser: Denoiser,
}

impl<F: Real> ListenerModel<F> {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cond = CondEncoder::new(&mut store, &cfg, &mut rng)?;
        let denoiser = Denoiser::new(&mut store, "den", cfg.denoiser(), &mut rng)?;
        Ok(ListenerModel {
            cfg,
            store,
            cond,
            denoiser,
        })
    }

    pub fn text_encoder(&self) -> ToyTextEncoder {
        ToyTextEncoder::new(self.cfg.d_text)
    }

    pub fn encode_conditions(
        &self,
        inputs: &CondInputs<F>,
    ) -> Result<(ConditioningBundle<F>, CondCache<F>)> {
        self.cond.forward(&self.store, inputs)
    }

    /// One denoiser application against a prepared bundle.
    pub fn denoise(
        &self,
        h_t: &Mat<F>,
        bundle: &ConditioningBundle<F>,
        t: usize,
        t_max: usize,
    ) -> Result<Mat<F>> {
        if h_t.nrows() != bundle.cond_injected.nrows() {
            return Err(Error::shape(format!(
                "noised motion covers {} frames, bundle {}",
                h_t.nrows(),
                bundle.cond_injected.nrows()
            )));
        }
        let (out, _) = self.denoiser.forward(
            &self.store,
            h_t,
            &bundle.cond_injected,
            &bundle.tag_emb,
            t,
            t_max,
        )?;
        Ok(out)
    }

    /// Full training forward: conditions + denoiser, with caches.
    pub fn forward_train(
        &self,
        inputs: &CondInputs<F>,
        h_t: &Mat<F>,
        t: usize,
        t_max: usize,
    ) -> Result<(Mat<F>, ModelCache<F>)> {
        let (bundle, cond_cache) = self.cond.forward(&self.store, inputs)?;
        let (pred, den_cache) = self.denoiser.forward(
            &self.store,
            h_t,
            &bundle.cond_injected,
            &bundle.tag_emb,
            t,
            t_max,
        )?;
        Ok((
            pred,
            ModelCache {
                cond: cond_cache,
                denoiser: den_cache,
            },
        ))
    }

    /// Backward from a gradient on the prediction; accumulates parameter
    /// gradients and returns the gradient on the noised input.
    pub fn backward_train(
        &self,
        cache: &ModelCache<F>,
        d_pred: &Mat<F>,
        g: &mut Grads<F>,
    ) -> Mat<F> {
        let (d_h, d_cond, d_tag) = self
            .denoiser
            .backward(&self.store, &cache.denoiser, d_pred, g);
        self.cond
            .backward(&self.store, &cache.cond, &d_cond, &d_tag, g);
        d_h
    }

    pub fn save(&self, path: &Path, epoch: u64) -> Result<()> {
        let header = CheckpointHeader {
            kind: "denoiser".into(),
            config: serde_json::to_value(self.cfg)?,
            frozen: false,
            epoch,
        };
        save_checkpoint(path, &header, &self.store)
    }

    pub fn load(path: &Path) -> Result<(Self, CheckpointHeader)> {
        let (header, _) = crate::nn::checkpoint::read_checkpoint(path)?;
        let cfg: ModelConfig = serde_json::from_value(header.config.clone())?;
        let mut model = ListenerModel::new(cfg, 0)?;
        let header = load_into_store(path, "denoiser", &mut model.store)?;
        Ok((model, header))
    }
}
