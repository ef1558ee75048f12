//! Pre-norm transformer encoder over patch tokens, with a learned class
//! token and a per-token linear head producing the representation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{NodeId, Scalar, Tape};

use super::{Init, ParamSet};

const LN_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    /// Input image side; must be divisible by `patch`.
    pub side: usize,
    pub patch: usize,
    /// Transformer width.
    pub width: usize,
    pub depth: usize,
    pub heads: usize,
    /// Per-token representation width after the linear head.
    pub d_rep: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        // Desk-scale: trains in CPU-minutes while exercising every mechanism.
        EncoderConfig { side: 32, patch: 8, width: 64, depth: 3, heads: 4, d_rep: 64 }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch == 0 || self.side % self.patch != 0 {
            return Err(Error::Config(format!(
                "encoder side {} must be divisible by patch {}",
                self.side, self.patch
            )));
        }
        if self.heads == 0 || self.width % self.heads != 0 {
            return Err(Error::Config(format!(
                "encoder width {} must be divisible by heads {}",
                self.width, self.heads
            )));
        }
        if self.d_rep < 2 {
            return Err(Error::Config(format!("d_rep must be >= 2, got {}", self.d_rep)));
        }
        if self.depth == 0 {
            return Err(Error::Config("encoder depth must be >= 1".to_string()));
        }
        Ok(())
    }

    pub fn grid(&self) -> usize {
        self.side / self.patch
    }

    pub fn n_patches(&self) -> usize {
        self.grid() * self.grid()
    }
}

struct BlockIdx {
    ln1_g: usize,
    ln1_b: usize,
    qkv_w: usize,
    qkv_b: usize,
    proj_w: usize,
    proj_b: usize,
    ln2_g: usize,
    ln2_b: usize,
    fc1_w: usize,
    fc1_b: usize,
    fc2_w: usize,
    fc2_b: usize,
}

/// Parameter indices of one encoder inside a [`ParamSet`].
pub struct Encoder {
    pub cfg: EncoderConfig,
    patch_w: usize,
    patch_b: usize,
    pos: usize,
    cls: usize,
    blocks: Vec<BlockIdx>,
    ln_f_g: usize,
    ln_f_b: usize,
    head_w: usize,
    head_b: usize,
    first_param: usize,
    last_param: usize,
}

/// Patch-token representation plus the class token, post head.
#[derive(Debug, Clone, Copy)]
pub struct EncoderOutput {
    /// [B, N, d_rep]
    pub tokens: NodeId,
    /// [B, d_rep]
    pub cls: NodeId,
}

impl Encoder {
    pub fn init<T: Scalar, R: Rng>(
        ps: &mut ParamSet<T>,
        cfg: EncoderConfig,
        rng: &mut R,
    ) -> Result<Encoder> {
        cfg.validate()?;
        let w = cfg.width;
        let t = cfg.n_patches() + 1;
        let first_param = ps.len();
        let patch_w = ps.add("enc.patch.w", vec![w, 3, cfg.patch, cfg.patch], Init::TruncNormal(0.02), rng);
        let patch_b = ps.add("enc.patch.b", vec![w], Init::Zeros, rng);
        let pos = ps.add("enc.pos", vec![t, w], Init::TruncNormal(0.02), rng);
        let cls = ps.add("enc.cls", vec![1, w], Init::TruncNormal(0.02), rng);
        let mut blocks = Vec::with_capacity(cfg.depth);
        for i in 0..cfg.depth {
            let p = |s: &str| format!("enc.block{i}.{s}");
            blocks.push(BlockIdx {
                ln1_g: ps.add(p("ln1.g"), vec![w], Init::Ones, rng),
                ln1_b: ps.add(p("ln1.b"), vec![w], Init::Zeros, rng),
                qkv_w: ps.add(p("qkv.w"), vec![w, 3 * w], Init::TruncNormal(0.02), rng),
                qkv_b: ps.add(p("qkv.b"), vec![3 * w], Init::Zeros, rng),
                proj_w: ps.add(p("proj.w"), vec![w, w], Init::TruncNormal(0.02), rng),
                proj_b: ps.add(p("proj.b"), vec![w], Init::Zeros, rng),
                ln2_g: ps.add(p("ln2.g"), vec![w], Init::Ones, rng),
                ln2_b: ps.add(p("ln2.b"), vec![w], Init::Zeros, rng),
                fc1_w: ps.add(p("fc1.w"), vec![w, 4 * w], Init::TruncNormal(0.02), rng),
                fc1_b: ps.add(p("fc1.b"), vec![4 * w], Init::Zeros, rng),
                fc2_w: ps.add(p("fc2.w"), vec![4 * w, w], Init::TruncNormal(0.02), rng),
                fc2_b: ps.add(p("fc2.b"), vec![w], Init::Zeros, rng),
            });
        }
        let ln_f_g = ps.add("enc.ln_f.g", vec![w], Init::Ones, rng);
        let ln_f_b = ps.add("enc.ln_f.b", vec![w], Init::Zeros, rng);
        let head_w = ps.add("enc.head.w", vec![w, cfg.d_rep], Init::TruncNormal(0.02), rng);
        let head_b = ps.add("enc.head.b", vec![cfg.d_rep], Init::Zeros, rng);
        let last_param = ps.len();
        Ok(Encoder {
            cfg,
            patch_w,
            patch_b,
            pos,
            cls,
            blocks,
            ln_f_g,
            ln_f_b,
            head_w,
            head_b,
            first_param,
            last_param,
        })
    }

    /// Indices of this encoder's parameters within the shared [`ParamSet`].
    pub fn param_indices(&self) -> std::ops::Range<usize> {
        self.first_param..self.last_param
    }

    pub fn param_count<T: Scalar>(&self, ps: &ParamSet<T>) -> usize {
        ps.values[self.param_indices()].iter().map(|t| t.numel()).sum()
    }

    /// Encode a batch of images `[B, 3, side, side]`.
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        binds: &[NodeId],
        images: NodeId,
    ) -> Result<EncoderOutput> {
        let cfg = &self.cfg;
        let shape = tape.shape(images).to_vec();
        if shape.len() != 4 || shape[1] != 3 || shape[2] != cfg.side || shape[3] != cfg.side {
            return Err(Error::Shape {
                op: "encode",
                detail: format!(
                    "expected images [B,3,{},{}], got {:?}",
                    cfg.side, cfg.side, shape
                ),
            });
        }
        let b = shape[0];
        let n = cfg.n_patches();
        let t = n + 1;
        let w = cfg.width;
        let heads = cfg.heads;
        let hd = w / heads;

        // Patch embedding as a strided convolution, then tokens-last layout.
        let pe = tape.conv2d(images, binds[self.patch_w], Some(binds[self.patch_b]), cfg.patch, 0)?;
        let pe = tape.reshape(pe, &[b, w, n])?;
        let patches = tape.permute(pe, &[0, 2, 1])?; // [B, N, W]

        let cls = tape.expand(binds[self.cls], b)?; // [B, 1, W]
        let seq = tape.concat(&[cls, patches], 1)?; // [B, T, W]
        let mut seq = tape.add_broadcast(seq, binds[self.pos])?;

        for blk in &self.blocks {
            // Attention sub-block.
            let h = tape.layer_norm(seq, binds[blk.ln1_g], binds[blk.ln1_b], LN_EPS)?;
            let flat = tape.reshape(h, &[b * t, w])?;
            let qkv = tape.matmul(flat, binds[blk.qkv_w])?;
            let qkv = tape.add_broadcast(qkv, binds[blk.qkv_b])?;
            let qkv = tape.reshape(qkv, &[b, t, 3 * w])?;
            let q = tape.slice(qkv, 2, 0, w)?;
            let k = tape.slice(qkv, 2, w, w)?;
            let v = tape.slice(qkv, 2, 2 * w, w)?;
            let split_heads = |tape: &mut Tape<T>, x: NodeId| -> Result<NodeId> {
                let x = tape.reshape(x, &[b, t, heads, hd])?;
                let x = tape.permute(x, &[0, 2, 1, 3])?;
                tape.reshape(x, &[b * heads, t, hd])
            };
            let qh = split_heads(tape, q)?;
            let vh = split_heads(tape, v)?;
            let kh = tape.reshape(k, &[b, t, heads, hd])?;
            let kh = tape.permute(kh, &[0, 2, 3, 1])?; // [B, H, hd, T]
            let kh = tape.reshape(kh, &[b * heads, hd, t])?;
            let scores = tape.matmul(qh, kh)?;
            let scores = tape.scale(scores, 1.0 / (hd as f64).sqrt())?;
            let attn = tape.softmax(scores)?;
            let ctx = tape.matmul(attn, vh)?; // [BH, T, hd]
            let ctx = tape.reshape(ctx, &[b, heads, t, hd])?;
            let ctx = tape.permute(ctx, &[0, 2, 1, 3])?;
            let ctx = tape.reshape(ctx, &[b * t, w])?;
            let proj = tape.matmul(ctx, binds[blk.proj_w])?;
            let proj = tape.add_broadcast(proj, binds[blk.proj_b])?;
            let proj = tape.reshape(proj, &[b, t, w])?;
            seq = tape.add(seq, proj)?;

            // MLP sub-block.
            let h2 = tape.layer_norm(seq, binds[blk.ln2_g], binds[blk.ln2_b], LN_EPS)?;
            let flat2 = tape.reshape(h2, &[b * t, w])?;
            let f1 = tape.matmul(flat2, binds[blk.fc1_w])?;
            let f1 = tape.add_broadcast(f1, binds[blk.fc1_b])?;
            let f1 = tape.gelu(f1)?;
            let f2 = tape.matmul(f1, binds[blk.fc2_w])?;
            let f2 = tape.add_broadcast(f2, binds[blk.fc2_b])?;
            let f2 = tape.reshape(f2, &[b, t, w])?;
            seq = tape.add(seq, f2)?;
        }

        let seq = tape.layer_norm(seq, binds[self.ln_f_g], binds[self.ln_f_b], LN_EPS)?;
        let flat = tape.reshape(seq, &[b * t, w])?;
        let rep = tape.matmul(flat, binds[self.head_w])?;
        let rep = tape.add_broadcast(rep, binds[self.head_b])?;
        let rep = tape.reshape(rep, &[b, t, cfg.d_rep])?;

        let cls_out = tape.slice(rep, 1, 0, 1)?;
        let cls_out = tape.reshape(cls_out, &[b, cfg.d_rep])?;
        let tokens = tape.slice(rep, 1, 1, n)?;
        Ok(EncoderOutput { tokens, cls: cls_out })
    }
}
