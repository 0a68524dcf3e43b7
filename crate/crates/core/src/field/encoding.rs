use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PositionalEncodingConfig {
    /// Frequency octaves for positions.
    pub l_pos: usize,
    /// Frequency octaves for view directions.
    pub l_dir: usize,
    pub include_input: bool,
    /// Positions are multiplied by this before encoding so the scene fits
    /// roughly in `[-1, 1]`.
    pub position_scale: f64,
}

impl Default for PositionalEncodingConfig {
    fn default() -> Self {
        Self { l_pos: 10, l_dir: 4, include_input: true, position_scale: 1.0 }
    }
}

impl PositionalEncodingConfig {
    pub fn position_dim(&self) -> usize {
        encoded_dim(3, self.l_pos, self.include_input)
    }

    pub fn direction_dim(&self) -> usize {
        encoded_dim(3, self.l_dir, self.include_input)
    }
}

pub fn encoded_dim(input_dim: usize, levels: usize, include_input: bool) -> usize {
    input_dim * (2 * levels + usize::from(include_input))
}

/// Frequency encoding, grouped per component:
/// `[x, sin(π x), cos(π x), sin(2π x), cos(2π x), ...]` for each coordinate.
pub fn encode(x: &[f64], levels: usize, include_input: bool) -> Vec<f64> {
    let mut out = vec![0.0; encoded_dim(x.len(), levels, include_input)];
    encode_into(x, levels, include_input, &mut out);
    out
}

pub fn encode_into(x: &[f64], levels: usize, include_input: bool, out: &mut [f64]) {
    let mut i = 0;
    for &v in x {
        if include_input {
            out[i] = v;
            i += 1;
        }
        let mut freq = std::f64::consts::PI;
        for _ in 0..levels {
            let (s, c) = (freq * v).sin_cos();
            out[i] = s;
            out[i + 1] = c;
            i += 2;
            freq *= 2.0;
        }
    }
}
