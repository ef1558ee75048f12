//! The encoder, the invariant/equivariant feature split, and the
//! reconstruction decoders.

mod decoder;
mod encoder;

pub use decoder::{Decoder, DecoderConfig};
pub use encoder::{Encoder, EncoderConfig, EncoderOutput};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::tensor::{NodeId, Scalar, Tape, TensorData};

/// Flat registry of every trainable tensor. Sub-models hold indices into it;
/// the optimizer and the checkpoint format address parameters by position
/// and name. `names` and `values` always stay parallel.
#[derive(Debug, Clone, Default)]
pub struct ParamSet<T> {
    pub names: Vec<String>,
    pub values: Vec<TensorData<T>>,
}

/// Initialization recipe for one parameter tensor.
#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    Ones,
    /// Normal(0, std) with resampling outside two standard deviations.
    TruncNormal(f64),
    /// Normal(0, sqrt(2 / fan_in)); fan-in derived from the shape.
    HeNormal,
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        ParamSet { names: Vec::new(), values: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn add<R: Rng>(
        &mut self,
        name: impl Into<String>,
        shape: Vec<usize>,
        init: Init,
        rng: &mut R,
    ) -> usize {
        let n: usize = shape.iter().product();
        let data: Vec<T> = match init {
            Init::Zeros => vec![T::zero(); n],
            Init::Ones => vec![T::one(); n],
            Init::TruncNormal(std) => (0..n)
                .map(|_| {
                    loop {
                        let v: f64 = StandardNormal.sample(rng);
                        if v.abs() <= 2.0 {
                            return T::of(v * std);
                        }
                    }
                })
                .collect(),
            Init::HeNormal => {
                // Conv [O,C,kh,kw] -> C*kh*kw; linear [in,out] -> in.
                let fan_in: usize = match shape.len() {
                    4 => shape[1] * shape[2] * shape[3],
                    2 => shape[0],
                    _ => shape.iter().product(),
                };
                let std = (2.0 / fan_in as f64).sqrt();
                (0..n)
                    .map(|_| {
                        let v: f64 = StandardNormal.sample(rng);
                        T::of(v * std)
                    })
                    .collect()
            }
        };
        self.names.push(name.into());
        self.values.push(TensorData::new(shape, data));
        self.values.len() - 1
    }

    pub fn total_params(&self) -> usize {
        self.values.iter().map(|t| t.numel()).sum()
    }

    pub fn shapes(&self) -> Vec<Vec<usize>> {
        self.values.iter().map(|t| t.shape.clone()).collect()
    }

    pub fn map_scalar<U: Scalar>(&self) -> ParamSet<U> {
        ParamSet {
            names: self.names.clone(),
            values: self.values.iter().map(|t| t.map_scalar()).collect(),
        }
    }

    /// Insert every parameter as a tape leaf; returns node ids parallel to
    /// `values`.
    pub fn bind_all(&self, tape: &mut Tape<T>) -> Result<Vec<NodeId>> {
        self.values.iter().map(|t| tape.leaf(t.clone())).collect()
    }
}

/// Per-view representation partitioned into an invariant block and an
/// equivariant block along the channel axis.
#[derive(Debug, Clone, Copy)]
pub struct FeatureSplit {
    /// First d_rep - d_equi channels of every token.
    pub invariant: NodeId,
    /// Last d_equi channels of every token.
    pub equivariant: NodeId,
}

/// Split `[B, N, d_rep]` tokens into the invariant-first / equivariant-last
/// channel blocks. Pure slicing: `concat(invariant, equivariant)` along the
/// channel axis reproduces the input exactly.
pub fn split_features<T: Scalar>(
    tape: &mut Tape<T>,
    tokens: NodeId,
    d_equi: usize,
) -> Result<FeatureSplit> {
    let shape = tape.shape(tokens).to_vec();
    if shape.len() != 3 {
        return Err(Error::Shape {
            op: "split_features",
            detail: format!("expected [B,N,d] tokens, got {:?}", shape),
        });
    }
    let d_rep = shape[2];
    if d_equi == 0 || d_equi >= d_rep {
        return Err(Error::Config(format!(
            "d_equi must satisfy 0 < d_equi < d_rep, got {d_equi} of {d_rep}"
        )));
    }
    let d_inv = d_rep - d_equi;
    Ok(FeatureSplit {
        invariant: tape.slice(tokens, 2, 0, d_inv)?,
        equivariant: tape.slice(tokens, 2, d_inv, d_equi)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream1;

    #[test]
    fn split_shapes_and_reassembly() {
        let mut tape = Tape::<f32>::new();
        let mut rng = stream1(1, "split", 0);
        let data: Vec<f32> = (0..2 * 4 * 8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let z = tape.leaf(TensorData::new(vec![2, 4, 8], data.clone())).unwrap();
        let split = split_features(&mut tape, z, 2).unwrap();
        assert_eq!(tape.shape(split.invariant), &[2, 4, 6]);
        assert_eq!(tape.shape(split.equivariant), &[2, 4, 2]);
        let back = tape.concat(&[split.invariant, split.equivariant], 2).unwrap();
        assert_eq!(tape.value(back), &data[..]);

        // Equal halves.
        let half = split_features(&mut tape, z, 4).unwrap();
        assert_eq!(tape.shape(half.invariant), tape.shape(half.equivariant));

        assert!(split_features(&mut tape, z, 0).is_err());
        assert!(split_features(&mut tape, z, 8).is_err());
    }


    #[test]
    fn init_is_seeded_and_bounded() {
        let mut a = ParamSet::<f32>::new();
        let mut b = ParamSet::<f32>::new();
        let ia = a.add("w", vec![16, 16], Init::TruncNormal(0.02), &mut stream1(5, "init", 0));
        let ib = b.add("w", vec![16, 16], Init::TruncNormal(0.02), &mut stream1(5, "init", 0));
        assert_eq!(a.values[ia].data, b.values[ib].data);
        assert!(a.values[ia].data.iter().all(|v| v.abs() <= 0.04 + 1e-6));
    }
}
