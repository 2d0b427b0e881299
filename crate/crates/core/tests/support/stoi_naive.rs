//! Plain-loop STOI used as a test oracle, plus the fixture pairs it is
//! checked on. Shares no code with the library implementation.

#![allow(dead_code)]

use std::f64::consts::PI;

pub const FS: usize = 10_000;
const N: usize = 256;
const NFFT: usize = 512;
const J: usize = 15;
const SEG: usize = 30;

fn hann_inner(n: usize) -> Vec<f64> {
    // numpy.hanning(n + 2)[1:-1]
    let m = n + 2;
    (0..m)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / (m - 1) as f64).cos())
        .skip(1)
        .take(n)
        .collect()
}

fn starts(len: usize) -> Vec<usize> {
    let mut v = Vec::new();
    let mut s = 0;
    while len >= N && s < len - N {
        v.push(s);
        s += N / 2;
    }
    v
}

fn drop_silence(x: &[f64], y: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let w = hann_inner(N);
    let mut xf = Vec::new();
    let mut yf = Vec::new();
    for s in starts(x.len()) {
        xf.push((0..N).map(|n| w[n] * x[s + n]).collect::<Vec<_>>());
        yf.push((0..N).map(|n| w[n] * y[s + n]).collect::<Vec<_>>());
    }
    let db: Vec<f64> = xf
        .iter()
        .map(|f| 20.0 * (f.iter().map(|v| v * v).sum::<f64>().sqrt() + f64::EPSILON).log10())
        .collect();
    let top = db.iter().cloned().fold(f64::MIN, f64::max);
    let keep: Vec<usize> = (0..db.len()).filter(|&i| top - 40.0 - db[i] < 0.0).collect();
    let len = if keep.is_empty() { 0 } else { (keep.len() - 1) * N / 2 + N };
    let mut xo = vec![0.0; len];
    let mut yo = vec![0.0; len];
    for (k, &i) in keep.iter().enumerate() {
        for n in 0..N {
            xo[k * N / 2 + n] += xf[i][n];
            yo[k * N / 2 + n] += yf[i][n];
        }
    }
    (xo, yo)
}

fn power_spectra(x: &[f64]) -> Vec<Vec<f64>> {
    let w = hann_inner(N);
    starts(x.len())
        .into_iter()
        .map(|s| {
            (0..=NFFT / 2)
                .map(|k| {
                    let mut re = 0.0;
                    let mut im = 0.0;
                    for n in 0..N {
                        let a = -2.0 * PI * (k * n % NFFT) as f64 / NFFT as f64;
                        re += w[n] * x[s + n] * a.cos();
                        im += w[n] * x[s + n] * a.sin();
                    }
                    re * re + im * im
                })
                .collect()
        })
        .collect()
}

fn octave_matrix() -> Vec<Vec<f64>> {
    let freqs: Vec<f64> = (0..=NFFT / 2).map(|k| k as f64 * FS as f64 / NFFT as f64).collect();
    let closest = |f: f64| {
        let mut best = 0;
        for i in 0..freqs.len() {
            if (freqs[i] - f).powi(2) < (freqs[best] - f).powi(2) {
                best = i;
            }
        }
        best
    };
    (0..J)
        .map(|j| {
            let lo = closest(150.0 * 2f64.powf((2.0 * j as f64 - 1.0) / 6.0));
            let hi = closest(150.0 * 2f64.powf((2.0 * j as f64 + 1.0) / 6.0));
            (0..freqs.len()).map(|i| if i >= lo && i < hi { 1.0 } else { 0.0 }).collect()
        })
        .collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// Returns `None` where the library reports an error.
pub fn stoi_naive(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.iter().all(|&v| v == 0.0) {
        return None;
    }
    let (x, y) = drop_silence(x, y);
    let px = power_spectra(&x);
    let py = power_spectra(&y);
    if px.len() < SEG {
        return None;
    }
    let obm = octave_matrix();
    let band = |p: &Vec<Vec<f64>>, j: usize, m: usize| -> f64 {
        (0..obm[j].len()).map(|i| obm[j][i] * p[m][i]).sum::<f64>().sqrt()
    };
    let clip = 10f64.powf(15.0 / 20.0);
    let mut d = 0.0;
    let mut count = 0;
    for m in SEG..=px.len() {
        for j in 0..J {
            let xs: Vec<f64> = (m - SEG..m).map(|t| band(&px, j, t)).collect();
            let ys: Vec<f64> = (m - SEG..m).map(|t| band(&py, j, t)).collect();
            let a = l2(&xs) / (l2(&ys) + f64::EPSILON);
            let yp: Vec<f64> = (0..SEG).map(|t| (a * ys[t]).min(xs[t] * (1.0 + clip))).collect();
            let (mx, my) = (mean(&xs), mean(&yp));
            let xc: Vec<f64> = xs.iter().map(|v| v - mx).collect();
            let yc: Vec<f64> = yp.iter().map(|v| v - my).collect();
            let (nx, ny) = (l2(&xc) + f64::EPSILON, l2(&yc) + f64::EPSILON);
            d += (0..SEG).map(|t| (xc[t] / nx) * (yc[t] / ny)).sum::<f64>();
            count += 1;
        }
    }
    Some(d / count as f64)
}

struct Lcg(u64);

impl Lcg {
    fn next(&mut self) -> f64 {
        self.0 = self.0.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (self.0 >> 33) as f64 / 2147483648.0 - 0.5
    }
}

pub fn speechlike(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = Lcg(seed);
    let rate = 3.0 + (seed % 3) as f64;
    (0..len)
        .map(|n| {
            let t = n as f64 / FS as f64;
            let env = (0.5 + 0.5 * (2.0 * PI * rate * t).sin()).powi(2);
            let f0 = 120.0 + 40.0 * (2.0 * PI * 0.7 * t).sin();
            let mut tone = 0.0;
            for h in 1..20 {
                tone += (2.0 * PI * f0 * h as f64 * t).sin() / h as f64;
            }
            env * tone + 0.01 * rng.next()
        })
        .collect()
}

pub fn white(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = Lcg(seed);
    (0..len).map(|_| rng.next()).collect()
}

fn energy(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum()
}

fn add_at_snr(x: &[f64], noise: &[f64], snr_db: f64) -> Vec<f64> {
    let g = (energy(x) / energy(noise) / 10f64.powf(snr_db / 10.0)).sqrt();
    x.iter().zip(noise).map(|(a, b)| a + g * b).collect()
}

/// Ten `(name, clean, degraded)` pairs at 10 kHz, 2 s each.
pub fn fixture_pairs() -> Vec<(&'static str, Vec<f64>, Vec<f64>)> {
    let len = 2 * FS;
    let x = speechlike(len, 1);
    let noise = white(len, 99);
    let equal = {
        let g = (energy(&x) / energy(&noise)).sqrt();
        noise.iter().map(|v| g * v).collect::<Vec<_>>()
    };
    let gapped = x
        .iter()
        .enumerate()
        .map(|(i, &v)| if (8000..12000).contains(&i) { 0.0 } else { v })
        .collect();
    let delayed = (0..len).map(|i| if i < 40 { 0.0 } else { x[i - 40] }).collect();
    let smoothed = (0..len)
        .map(|i| (i.saturating_sub(4)..=i).map(|k| x[k]).sum::<f64>() / 5.0)
        .collect();
    vec![
        ("negated", x.clone(), x.iter().map(|v| -v).collect()),
        ("white_equal_energy", x.clone(), equal),
        ("snr_0db", x.clone(), add_at_snr(&x, &noise, 0.0)),
        ("snr_10db", x.clone(), add_at_snr(&x, &noise, 10.0)),
        ("snr_minus5db", x.clone(), add_at_snr(&x, &noise, -5.0)),
        ("gain_3", x.clone(), x.iter().map(|v| 3.0 * v).collect()),
        ("gap_400ms", x.clone(), gapped),
        ("delay_4ms", x.clone(), delayed),
        ("moving_average", x.clone(), smoothed),
        ("other_talker", x.clone(), speechlike(len, 7)),
    ]
}
