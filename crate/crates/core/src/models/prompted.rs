//! Prompted token-mixing network with deep prompts and a merged class token.
//!
//! Every block reads the sequence `[prompts; cls; patches]` of length
//! `n_p + 1 + N_z` and writes back only `[cls; patches]`. Fresh trainable
//! prompts are prepended at each block; the block's prompt outputs are
//! dropped. A block is: residual token mixing over the whole input sequence,
//! a residual per-token MLP, then row-wise layer norm. All block weights are
//! frozen.

use serde::{Deserialize, Serialize};

use super::{gaussian, linear, ModelConfig, ModelState, INIT_STD};
use crate::autodiff::{Graph, ParamSet, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PromptedConfig {
    /// Token width D.
    pub token_dim: usize,
    /// Patch-token count N_z; inputs are reshaped to `[N_z x D]`.
    pub tokens: usize,
    /// Prompts per block n_p.
    pub prompts: usize,
    pub layers: usize,
    pub classes: usize,
    /// Hidden width of the per-token MLP.
    pub mlp_hidden: usize,
    pub w_p: f64,
    pub w_z: f64,
}

impl PromptedConfig {
    pub fn validate(&self) -> Result<()> {
        if self.token_dim == 0 || self.tokens == 0 || self.layers == 0 || self.mlp_hidden == 0 {
            return Err(Error::invalid("model", "token_dim, tokens, layers and mlp_hidden must be positive"));
        }
        if self.classes < 2 {
            return Err(Error::invalid("model.classes", "need at least 2 classes"));
        }
        if !(self.w_p >= 0.0 && self.w_z >= 0.0) {
            return Err(Error::invalid("model.w_p", "merge weights must be non-negative"));
        }
        Ok(())
    }

    fn frozen_per_block() -> usize {
        5
    }
}

/// Result of one prompted forward pass over a single sample.
#[derive(Clone, Debug)]
pub struct VptOutput {
    /// `[1 x C]`
    pub logits: Var,
    /// Prompts fed to the last block, `[n_p x D]`; `None` when `n_p = 0`.
    pub final_prompt: Option<Var>,
    /// Class token after the last block, `[1 x D]`.
    pub final_cls: Var,
    /// Head input.
    pub merged_cls: Var,
    /// `(input length, output length)` of each block's sequence.
    pub seq_lengths: Vec<(usize, usize)>,
}

pub(super) fn init(cfg: &PromptedConfig, seed: u64) -> Result<(ParamSet, ParamSet)> {
    let d = cfg.token_dim;
    let out_len = 1 + cfg.tokens;
    let mut frozen = ParamSet::new();
    frozen.insert("cls_token", gaussian(seed, "cls_token", &[1, d], INIT_STD))?;
    for l in 0..cfg.layers {
        // token and prompt mixing columns are drawn separately so the token
        // part does not depend on n_p
        let tok = gaussian(seed, &format!("block{l}.mix_tokens"), &[out_len, out_len], INIT_STD);
        let mix = if cfg.prompts > 0 {
            let pr = gaussian(seed, &format!("block{l}.mix_prompts"), &[out_len, cfg.prompts], INIT_STD);
            let cols = cfg.prompts + out_len;
            let mut data = Vec::with_capacity(out_len * cols);
            for r in 0..out_len {
                data.extend_from_slice(pr.row(r));
                data.extend_from_slice(tok.row(r));
            }
            Tensor::matrix(out_len, cols, data)?
        } else {
            tok
        };
        frozen.insert(format!("block{l}.mix"), mix)?;
        for (name, shape) in [
            ("fc1.weight", [cfg.mlp_hidden, d]),
            ("fc1.bias", [1, cfg.mlp_hidden]),
            ("fc2.weight", [d, cfg.mlp_hidden]),
            ("fc2.bias", [1, d]),
        ] {
            let full = format!("block{l}.{name}");
            frozen.insert(&full, gaussian(seed, &full, &shape, INIT_STD))?;
        }
    }

    let mut trainable = ParamSet::new();
    if cfg.prompts > 0 {
        for l in 0..cfg.layers {
            let name = format!("prompt{l}");
            trainable.insert(&name, gaussian(seed, &name, &[cfg.prompts, d], INIT_STD))?;
        }
    }
    trainable.insert("head.weight", gaussian(seed, "head.weight", &[cfg.classes, d], INIT_STD))?;
    trainable.insert("head.bias", Tensor::zeros(&[1, cfg.classes]))?;
    Ok((frozen, trainable))
}

/// Head input: `w_p * mean(prompt rows) + w_z * cls`, or `cls` unchanged when
/// there are no prompts.
pub fn merge_cls_token(g: &mut Graph, final_prompt: Option<Var>, final_cls: Var, w_p: f64, w_z: f64) -> Result<Var> {
    let Some(prompt) = final_prompt else {
        return Ok(final_cls);
    };
    let (n_p, d) = g.value(prompt).dims2().ok_or_else(|| Error::ShapeMismatch {
        op: "merge",
        shapes: format!("{:?}", g.value(prompt).shape()),
    })?;
    if g.value(final_cls).shape() != [1, d] {
        return Err(Error::ShapeMismatch {
            op: "merge",
            shapes: format!("{:?} vs {:?}", g.value(prompt).shape(), g.value(final_cls).shape()),
        });
    }
    let avg = g.constant(Tensor::full(&[1, n_p], 1.0 / n_p as f64));
    let mean = g.matmul(avg, prompt)?;
    let p = g.scale(mean, w_p)?;
    let z = g.scale(final_cls, w_z)?;
    g.add(p, z)
}

struct Encoded {
    final_prompt: Option<Var>,
    final_cls: Var,
    merged: Var,
    seq_lengths: Vec<(usize, usize)>,
}

fn encode(cfg: &PromptedConfig, g: &mut Graph, frozen: &[Var], trainable: &[Var], patches: Var) -> Result<Encoded> {
    let n_p = cfg.prompts;
    let mut cls = frozen[0];
    let mut z = patches;
    let mut seq_lengths = Vec::with_capacity(cfg.layers);
    for l in 0..cfg.layers {
        let base = 1 + l * PromptedConfig::frozen_per_block();
        let [mix, w1, b1, w2, b2] = [0, 1, 2, 3, 4].map(|i| frozen[base + i]);
        let seq = if n_p > 0 {
            g.concat_rows(&[trainable[l], cls, z])?
        } else {
            g.concat_rows(&[cls, z])?
        };
        let in_len = g.value(seq).shape()[0];
        let kept = if n_p > 0 {
            g.gather_rows(seq, (n_p..in_len).collect())?
        } else {
            seq
        };
        let mixed = g.matmul(mix, seq)?;
        let y = g.add(kept, mixed)?;
        let h = linear(g, y, w1, b1)?;
        let h = g.relu(h)?;
        let h = linear(g, h, w2, b2)?;
        let r = g.add(y, h)?;
        let out = g.layer_norm(r)?;
        let out_len = g.value(out).shape()[0];
        seq_lengths.push((in_len, out_len));
        cls = g.gather_rows(out, vec![0])?;
        z = g.gather_rows(out, (1..out_len).collect())?;
    }
    let final_prompt = (n_p > 0).then(|| trainable[cfg.layers - 1]);
    let merged = merge_cls_token(g, final_prompt, cls, cfg.w_p, cfg.w_z)?;
    Ok(Encoded {
        final_prompt,
        final_cls: cls,
        merged,
        seq_lengths,
    })
}

fn head_vars(trainable: &[Var]) -> (Var, Var) {
    let n = trainable.len();
    (trainable[n - 2], trainable[n - 1])
}

fn patches_of(cfg: &PromptedConfig, row: &[f64]) -> Result<Tensor> {
    Tensor::matrix(cfg.tokens, cfg.token_dim, row.to_vec())
}

pub(super) fn forward_batch(cfg: &PromptedConfig, g: &mut Graph, frozen: &[Var], trainable: &[Var], x: &Tensor) -> Result<Var> {
    let rows = x.shape()[0];
    let mut merged = Vec::with_capacity(rows);
    for r in 0..rows {
        let p = g.constant(patches_of(cfg, x.row(r))?);
        merged.push(encode(cfg, g, frozen, trainable, p)?.merged);
    }
    let tokens = g.concat_rows(&merged)?;
    let (w, b) = head_vars(trainable);
    linear(g, tokens, w, b)
}

impl ModelState {
    /// Prompted forward pass over one sample of patch tokens `[N_z x D]`.
    pub fn vpt_forward(&self, g: &mut Graph, trainable: &[Var], patch_tokens: &Tensor) -> Result<VptOutput> {
        let ModelConfig::Prompted(cfg) = &self.config else {
            return Err(Error::invalid("model.kind", "vpt_forward needs a prompted model"));
        };
        if patch_tokens.shape() != [cfg.tokens, cfg.token_dim] {
            return Err(Error::ShapeMismatch {
                op: "vpt_forward",
                shapes: format!("{:?} vs [{}, {}]", patch_tokens.shape(), cfg.tokens, cfg.token_dim),
            });
        }
        if trainable.len() != self.trainable.len() {
            return Err(Error::ShapeMismatch {
                op: "vpt_forward",
                shapes: format!("{} bound vs {} trainable", trainable.len(), self.trainable.len()),
            });
        }
        let frozen = self.frozen.bind_constant(g);
        let p = g.constant(patch_tokens.clone());
        let enc = encode(cfg, g, &frozen, trainable, p)?;
        let (w, b) = head_vars(trainable);
        let logits = linear(g, enc.merged, w, b)?;
        Ok(VptOutput {
            logits,
            final_prompt: enc.final_prompt,
            final_cls: enc.final_cls,
            merged_cls: enc.merged,
            seq_lengths: enc.seq_lengths,
        })
    }
}
