//! Reconstruction decoders: one per intermediate target, each a single
//! linear layer followed by four convolutional stages with interleaved
//! nearest-neighbour upsampling, closed by a sigmoid.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{NodeId, Scalar, Tape};

use super::{EncoderConfig, Init, ParamSet};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecoderConfig {
    /// Channels produced by the linear layer feeding the first conv stage.
    pub c0: usize,
    /// Output channels of the four conv stages; the last must be 3.
    pub channels: Vec<usize>,
    /// Upsampling factor applied before each stage; product must equal the
    /// encoder patch size so the output side matches the input side.
    pub upsample: Vec<usize>,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig { c0: 40, channels: vec![40, 20, 10, 3], upsample: vec![2, 2, 2, 1] }
    }
}

impl DecoderConfig {
    pub fn validate(&self, enc: &EncoderConfig) -> Result<()> {
        if self.channels.len() != 4 || self.upsample.len() != 4 {
            return Err(Error::Config(format!(
                "decoder needs exactly four conv stages, got {} channels / {} upsample entries",
                self.channels.len(),
                self.upsample.len()
            )));
        }
        if *self.channels.last().unwrap() != 3 {
            return Err(Error::Config(format!(
                "decoder must end in 3 output channels, got {:?}",
                self.channels
            )));
        }
        if self.c0 == 0 || self.channels.iter().any(|&c| c == 0) {
            return Err(Error::Config("decoder channel counts must be positive".to_string()));
        }
        let product: usize = self.upsample.iter().product();
        if product != enc.patch {
            return Err(Error::Config(format!(
                "decoder upsample factors {:?} multiply to {product}, but encoder patch is {}",
                self.upsample, enc.patch
            )));
        }
        Ok(())
    }

    /// Parameter count of one decoder: the linear layer plus four 3x3 convs,
    /// all with biases.
    pub fn param_count(&self, d_equi: usize) -> usize {
        let mut total = 2 * d_equi * self.c0 + self.c0;
        let mut c_in = self.c0;
        for &c_out in &self.channels {
            total += c_in * c_out * 9 + c_out;
            c_in = c_out;
        }
        total
    }
}

/// Parameter indices of one decoder inside a [`ParamSet`].
pub struct Decoder {
    cfg: DecoderConfig,
    grid: usize,
    side: usize,
    d_equi: usize,
    lin_w: usize,
    lin_b: usize,
    convs: Vec<(usize, usize)>,
    first_param: usize,
    last_param: usize,
}

impl Decoder {
    pub fn init<T: Scalar, R: Rng>(
        ps: &mut ParamSet<T>,
        cfg: DecoderConfig,
        enc: &EncoderConfig,
        d_equi: usize,
        index: usize,
        rng: &mut R,
    ) -> Result<Decoder> {
        cfg.validate(enc)?;
        if d_equi == 0 || d_equi >= enc.d_rep {
            return Err(Error::Config(format!(
                "d_equi must satisfy 0 < d_equi < d_rep, got {d_equi} of {}",
                enc.d_rep
            )));
        }
        let p = |s: String| format!("dec{index}.{s}");
        let first_param = ps.len();
        let lin_w = ps.add(p("lin.w".into()), vec![2 * d_equi, cfg.c0], Init::TruncNormal(0.02), rng);
        let lin_b = ps.add(p("lin.b".into()), vec![cfg.c0], Init::Zeros, rng);
        let mut convs = Vec::with_capacity(4);
        let mut c_in = cfg.c0;
        for (i, &c_out) in cfg.channels.iter().enumerate() {
            let w = ps.add(p(format!("conv{i}.w")), vec![c_out, c_in, 3, 3], Init::HeNormal, rng);
            let b = ps.add(p(format!("conv{i}.b")), vec![c_out], Init::Zeros, rng);
            convs.push((w, b));
            c_in = c_out;
        }
        let last_param = ps.len();
        Ok(Decoder {
            cfg,
            grid: enc.grid(),
            side: enc.side,
            d_equi,
            lin_w,
            lin_b,
            convs,
            first_param,
            last_param,
        })
    }

    pub fn param_indices(&self) -> std::ops::Range<usize> {
        self.first_param..self.last_param
    }

    pub fn param_count<T: Scalar>(&self, ps: &ParamSet<T>) -> usize {
        ps.values[self.param_indices()].iter().map(|t| t.numel()).sum()
    }

    /// Decode the concatenated equivariant blocks of the two views into an
    /// image batch `[B, 3, side, side]` with values in (0,1).
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        binds: &[NodeId],
        equi_a: NodeId,
        equi_b: NodeId,
    ) -> Result<NodeId> {
        let sa = tape.shape(equi_a).to_vec();
        let sb = tape.shape(equi_b).to_vec();
        let n = self.grid * self.grid;
        let expect = vec![sa.first().copied().unwrap_or(0), n, self.d_equi];
        if sa.len() != 3 || sa != sb || sa[1..] != expect[1..] {
            return Err(Error::Shape {
                op: "decode",
                detail: format!(
                    "expected two [B,{},{}] equivariant blocks, got {:?} and {:?}",
                    n, self.d_equi, sa, sb
                ),
            });
        }
        let b = sa[0];
        // Token-wise concatenation of the two views, then the linear layer.
        let cat = tape.concat(&[equi_a, equi_b], 2)?; // [B, N, 2*d_equi]
        let flat = tape.reshape(cat, &[b * n, 2 * self.d_equi])?;
        let lin = tape.matmul(flat, binds[self.lin_w])?;
        let lin = tape.add_broadcast(lin, binds[self.lin_b])?;
        let lin = tape.reshape(lin, &[b, n, self.cfg.c0])?;
        let lin = tape.permute(lin, &[0, 2, 1])?;
        let mut x = tape.reshape(lin, &[b, self.cfg.c0, self.grid, self.grid])?;
        for (i, ((w, bias), &up)) in self.convs.iter().zip(self.cfg.upsample.iter()).enumerate() {
            if up > 1 {
                x = tape.upsample_nearest(x, up)?;
            }
            x = tape.conv2d(x, binds[*w], Some(binds[*bias]), 1, 1)?;
            if i < self.convs.len() - 1 {
                x = tape.gelu(x)?;
            }
        }
        let out = tape.sigmoid(x)?;
        debug_assert_eq!(tape.shape(out), &[b, 3, self.side, self.side]);
        Ok(out)
    }
}
