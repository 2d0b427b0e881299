/// Sinusoidal encoding of a (possibly fractional) position:
/// `[sin(p w_0), cos(p w_0), sin(p w_1), ...]` with `w_i = 10000^(-2i/d)`.
pub fn sinusoidal(position: f64, width: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(width);
    for i in 0..width / 2 {
        let freq = 10000f64.powf(-((2 * i) as f64) / width as f64);
        out.push((position * freq).sin());
        out.push((position * freq).cos());
    }
    out
}

/// Encodings for `count` tokens sampled at `rate` frames/s, expressed on
/// the audio frame clock so tokens that coincide in time share an
/// encoding. Row-major `[count, width]`.
pub fn positional_table(count: usize, rate: f64, audio_rate: f64, width: usize) -> Vec<f64> {
    let step = audio_rate / rate;
    (0..count)
        .flat_map(|i| sinusoidal(i as f64 * step, width))
        .collect()
}
