//! Sin/cos positional encoding at geometrically spaced frequencies.

use crate::linalg::Scalar;
use serde::{Deserialize, Serialize};

/// Per-scalar encoding: [p?], sin(2^0 pi p), cos(2^0 pi p), ...,
/// sin(2^{L-1} pi p), cos(2^{L-1} pi p).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PositionalEncoding {
    pub octaves: usize,
    pub include_raw: bool,
}

impl PositionalEncoding {
    pub fn new(octaves: usize, include_raw: bool) -> Self {
        PositionalEncoding {
            octaves,
            include_raw,
        }
    }

    /// Output dimension per input scalar.
    pub fn dim_per_scalar(&self) -> usize {
        2 * self.octaves + usize::from(self.include_raw)
    }

    pub fn output_dim(&self, input_dim: usize) -> usize {
        input_dim * self.dim_per_scalar()
    }

    /// Encode `input` appending to `out`. Octaves above the first come
    /// from the double-angle identities, so each scalar costs one
    /// sin/cos pair regardless of L.
    pub fn encode_into<S: Scalar>(&self, input: &[S], out: &mut Vec<S>) {
        let pi = S::from_f64(std::f64::consts::PI);
        let two = S::from_f64(2.0);
        for &p in input {
            if self.include_raw {
                out.push(p);
            }
            if self.octaves == 0 {
                continue;
            }
            let a = p * pi;
            let mut s = a.sin();
            let mut c = a.cos();
            out.push(s);
            out.push(c);
            for _ in 1..self.octaves {
                let s2 = two * s * c;
                let c2 = c * c - s * s;
                s = s2;
                c = c2;
                out.push(s);
                out.push(c);
            }
        }
    }

    pub fn encode<S: Scalar>(&self, input: &[S]) -> Vec<S> {
        let mut out = Vec::with_capacity(self.output_dim(input.len()));
        self.encode_into(input, &mut out);
        out
    }
}
