/// Frequency lifting of the network inputs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EncodingConfig {
    /// Frequency count for the plane coordinate.
    pub position_freqs: usize,
    /// Frequency count for the view direction; 0 passes the raw direction.
    pub direction_freqs: usize,
    /// Feed the view direction to the network at all.
    pub use_direction: bool,
    /// Append the raw coordinate next to its encoding.
    pub include_identity: bool,
}

impl Default for EncodingConfig {
    fn default() -> Self {
        Self {
            position_freqs: 10,
            direction_freqs: 0,
            use_direction: true,
            include_identity: false,
        }
    }
}

impl EncodingConfig {
    pub fn input_dim(&self) -> usize {
        let ident = if self.include_identity { 3 } else { 0 };
        let pos = 6 * self.position_freqs + ident;
        let dir = match (self.use_direction, self.direction_freqs) {
            (false, _) => 0,
            (true, 0) => 3,
            (true, l) => 6 * l + ident,
        };
        pos + dir
    }

    /// Writes the full network input row for a point and direction.
    pub fn encode_into(&self, x: &[f64; 3], d: &[f64; 3], out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.input_dim());
        let mut at = encode_into(x, self.position_freqs, out);
        if self.include_identity {
            out[at..at + 3].copy_from_slice(x);
            at += 3;
        }
        if self.use_direction {
            if self.direction_freqs == 0 {
                out[at..at + 3].copy_from_slice(d);
            } else {
                at += encode_into(d, self.direction_freqs, &mut out[at..]);
                if self.include_identity {
                    out[at..at + 3].copy_from_slice(d);
                }
            }
        }
    }
}

/// `(sin(2⁰v), cos(2⁰v), …, sin(2^{L-1}v), cos(2^{L-1}v))`, each block
/// covering every component of `v`.
pub fn positional_encode(v: &[f64], freqs: usize) -> Vec<f64> {
    let mut out = vec![0.0; 2 * v.len() * freqs];
    encode_into(v, freqs, &mut out);
    out
}

fn encode_into(v: &[f64], freqs: usize, out: &mut [f64]) -> usize {
    let n = v.len();
    let mut scale = 1.0;
    for l in 0..freqs {
        let base = 2 * n * l;
        for (j, &x) in v.iter().enumerate() {
            let (s, c) = (scale * x).sin_cos();
            out[base + j] = s;
            out[base + n + j] = c;
        }
        scale *= 2.0;
    }
    2 * n * freqs
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn zero_vector_one_frequency() {
        assert_eq!(positional_encode(&[0.0; 3], 1), vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn ten_frequencies_in_three_dims() {
        assert_eq!(positional_encode(&[0.1, 0.2, 0.3], 10).len(), 60);
        assert!(positional_encode(&[1.0, 2.0], 0).is_empty());
    }

    #[test]
    fn exact_trig_values() {
        let e = positional_encode(&[FRAC_PI_2], 2);
        let expect = [1.0, 0.0, 0.0, -1.0];
        for (a, b) in e.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn input_dims() {
        assert_eq!(EncodingConfig::default().input_dim(), 63);
        let no_dir = EncodingConfig {
            use_direction: false,
            ..Default::default()
        };
        assert_eq!(no_dir.input_dim(), 60);
    }

    proptest! {
        #[test]
        fn encoding_bounded(v in proptest::collection::vec(-100.0f64..100.0, 1..6), l in 0usize..12) {
            let e = positional_encode(&v, l);
            prop_assert_eq!(e.len(), 2 * v.len() * l);
            prop_assert!(e.iter().all(|x| (-1.0..=1.0).contains(x)));
        }
    }
}
