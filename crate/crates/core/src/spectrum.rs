//! Spectral energy measurements.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::geometry::TextureMap;

/// 2-D power spectrum of a row-major `width x height` signal (DC included).
pub fn power_spectrum(values: &[f64], width: usize, height: usize) -> Vec<f64> {
    assert_eq!(values.len(), width * height, "signal size");
    let mut planner = FftPlanner::<f64>::new();
    let mut buf: Vec<Complex<f64>> = values.iter().map(|&v| Complex::new(v, 0.0)).collect();
    let row_fft = planner.plan_fft_forward(width);
    for row in buf.chunks_exact_mut(width) {
        row_fft.process(row);
    }
    let col_fft = planner.plan_fft_forward(height);
    let mut col = vec![Complex::new(0.0, 0.0); height];
    for x in 0..width {
        for y in 0..height {
            col[y] = buf[y * width + x];
        }
        col_fft.process(&mut col);
        for y in 0..height {
            buf[y * width + x] = col[y];
        }
    }
    buf.iter().map(|c| c.norm_sqr()).collect()
}

/// Signed frequency of FFT bin `k` out of `n`, as a fraction of Nyquist.
fn nyquist_fraction(k: usize, n: usize) -> f64 {
    let f = if k <= n / 2 { k as f64 } else { k as f64 - n as f64 };
    f / (n as f64 / 2.0)
}

/// Energy (normalised by sample count) at radial frequencies above half Nyquist.
pub fn high_frequency_energy(values: &[f64], width: usize, height: usize) -> f64 {
    let power = power_spectrum(values, width, height);
    let mut total = 0.0;
    for y in 0..height {
        let fy = nyquist_fraction(y, height);
        for x in 0..width {
            let fx = nyquist_fraction(x, width);
            if (fx * fx + fy * fy).sqrt() > 0.5 {
                total += power[y * width + x];
            }
        }
    }
    total / (width * height) as f64
}

/// High-frequency luma energy of a texture; uncovered texels take the mean
/// covered luma so coverage holes contribute as little as possible.
pub fn texture_high_frequency_energy(tex: &TextureMap) -> f64 {
    let luma = tex.as_image().luma();
    let covered: Vec<f64> = luma
        .iter()
        .zip(&tex.writer)
        .filter(|(_, w)| w.is_some())
        .map(|(l, _)| *l)
        .collect();
    let fill = if covered.is_empty() {
        0.0
    } else {
        covered.iter().sum::<f64>() / covered.len() as f64
    };
    let filled: Vec<f64> = luma
        .iter()
        .zip(&tex.writer)
        .map(|(l, w)| if w.is_some() { *l } else { fill })
        .collect();
    high_frequency_energy(&filled, tex.width, tex.height)
}
