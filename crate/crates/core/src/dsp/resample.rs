//! Rational-ratio polyphase resampling with a Kaiser-windowed sinc filter.

/// Zero crossings of the sinc kernel on each side, in units of the
/// (narrower) filter bandwidth.
const ZERO_CROSSINGS: usize = 16;
const KAISER_BETA: f64 = 8.0;
/// Fraction of the output Nyquist band kept when downsampling.
const ROLLOFF: f64 = 0.94;

/// Precomputed polyphase filter bank for one `from -> to` ratio.
#[derive(Debug, Clone)]
pub struct Resampler {
    up: usize,
    down: usize,
    /// Offset of the first tap relative to `floor(t)`.
    first_tap: isize,
    /// `phases[p][j]` is the tap for input `floor(t) + first_tap + j` when
    /// the fractional position is `p / up`.
    phases: Vec<Vec<f64>>,
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Zeroth-order modified Bessel function of the first kind (power series).
fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let half = x / 2.0;
    for k in 1..64 {
        term *= (half / k as f64).powi(2);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

impl Resampler {
    pub fn new(from: u32, to: u32) -> Self {
        assert!(from > 0 && to > 0, "sample rates must be positive");
        let g = gcd(from as usize, to as usize);
        let up = to as usize / g;
        let down = from as usize / g;
        // cutoff in cycles per input sample
        let cutoff = 0.5 * ROLLOFF * (up as f64 / down as f64).min(1.0);
        let half_width = ZERO_CROSSINGS as f64 / (2.0 * cutoff);
        let reach = half_width.ceil() as isize;
        let first_tap = -reach + 1;
        let n_taps = (2 * reach) as usize;
        let denom = bessel_i0(KAISER_BETA);
        let phases = (0..up)
            .map(|p| {
                let frac = p as f64 / up as f64;
                (0..n_taps)
                    .map(|j| {
                        let tau = frac - (first_tap + j as isize) as f64;
                        let r = tau / half_width;
                        if r.abs() >= 1.0 {
                            0.0
                        } else {
                            let win = bessel_i0(KAISER_BETA * (1.0 - r * r).sqrt()) / denom;
                            2.0 * cutoff * sinc(2.0 * cutoff * tau) * win
                        }
                    })
                    .collect()
            })
            .collect();
        Self {
            up,
            down,
            first_tap,
            phases,
        }
    }

    pub fn output_len(&self, input_len: usize) -> usize {
        (input_len * self.up).div_ceil(self.down)
    }

    pub fn process(&self, input: &[f64]) -> Vec<f64> {
        if self.up == 1 && self.down == 1 {
            return input.to_vec();
        }
        let n_out = self.output_len(input.len());
        let len = input.len() as isize;
        let mut out = Vec::with_capacity(n_out);
        for n in 0..n_out {
            let pos = n * self.down;
            let base = (pos / self.up) as isize;
            let taps = &self.phases[pos % self.up];
            let start = base + self.first_tap;
            let mut acc = 0.0;
            for (j, h) in taps.iter().enumerate() {
                let i = start + j as isize;
                if (0..len).contains(&i) {
                    acc += h * input[i as usize];
                }
            }
            out.push(acc);
        }
        out
    }
}

/// Resample `input` from `from` Hz to `to` Hz.
pub fn resample(input: &[f64], from: u32, to: u32) -> Vec<f64> {
    Resampler::new(from, to).process(input)
}
