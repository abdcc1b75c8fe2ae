//! Post-processing of sampled series: oscillation frequency, extrema and
//! envelope loss, exponential decay rates.

use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

/// Angular frequency of the strongest spectral peak of a uniformly sampled
/// series. The mean is removed, the series zero-padded by `pad` and the
/// peak refined by a parabola through the log-magnitudes of three bins.
pub fn dominant_frequency(t: &[f64], y: &[f64], pad: usize) -> Option<f64> {
    if t.len() != y.len() || y.len() < 4 {
        return None;
    }
    let dt = (t[t.len() - 1] - t[0]) / (t.len() - 1) as f64;
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let n = (y.len() * pad.max(1)).next_power_of_two();
    let mut buf: Vec<Complex<f64>> = y.iter().map(|v| Complex::new(v - mean, 0.0)).collect();
    buf.resize(n, Complex::new(0.0, 0.0));
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let mag: Vec<f64> = buf[..n / 2].iter().map(|c| c.norm()).collect();
    let (k, _) = mag.iter().enumerate().skip(1).max_by(|a, b| a.1.total_cmp(b.1))?;
    let shift = if k + 1 < mag.len() && mag[k - 1] > 0.0 && mag[k + 1] > 0.0 {
        let (a, b, c) = (mag[k - 1].ln(), mag[k].ln(), mag[k + 1].ln());
        let denom = a - 2.0 * b + c;
        if denom != 0.0 { 0.5 * (a - c) / denom } else { 0.0 }
    } else {
        0.0
    };
    Some(2.0 * PI * (k as f64 + shift) / (n as f64 * dt))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Extremum {
    pub t: f64,
    pub value: f64,
    pub is_max: bool,
}

/// Local extrema, refined by a parabola through neighbouring samples. The
/// first sample counts as an extremum of the kind the series leaves it.
pub fn extrema(t: &[f64], y: &[f64]) -> Vec<Extremum> {
    let mut out = Vec::new();
    if y.len() < 3 {
        return out;
    }
    out.push(Extremum { t: t[0], value: y[0], is_max: y[1] < y[0] });
    for i in 1..y.len() - 1 {
        let is_max = y[i] > y[i - 1] && y[i] >= y[i + 1];
        let is_min = y[i] < y[i - 1] && y[i] <= y[i + 1];
        if !(is_max || is_min) {
            continue;
        }
        let (a, b, c) = (y[i - 1], y[i], y[i + 1]);
        let denom = a - 2.0 * b + c;
        let (shift, value) = if denom != 0.0 {
            let s = 0.5 * (a - c) / denom;
            (s, b - 0.25 * (a - c) * s)
        } else {
            (0.0, b)
        };
        let h = 0.5 * (t[i + 1] - t[i - 1]);
        out.push(Extremum { t: t[i] + shift * h, value, is_max });
    }
    out
}

/// Peak-to-trough swings between consecutive alternating extrema.
pub fn swings(t: &[f64], y: &[f64]) -> Vec<f64> {
    let ex = extrema(t, y);
    ex.windows(2).filter(|w| w[0].is_max != w[1].is_max).map(|w| (w[1].value - w[0].value).abs()).collect()
}

/// `1 − last swing / first swing`.
pub fn amplitude_loss(t: &[f64], y: &[f64]) -> Option<f64> {
    let s = swings(t, y);
    if s.len() < 2 || s[0] == 0.0 {
        return None;
    }
    Some(1.0 - s[s.len() - 1] / s[0])
}

/// Least-squares slope of `ln|y|` against `t`, returned as a positive decay rate.
pub fn exponential_decay_rate(t: &[f64], y: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = t.iter().zip(y).filter(|(_, v)| v.abs() > 0.0).map(|(t, v)| (*t, v.abs().ln())).collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    Some(-sxy / sxx)
}

/// Values whose time lies in the last `fraction` of the run.
pub fn tail(t: &[f64], y: &[f64], fraction: f64) -> Vec<f64> {
    let t_end = t[t.len() - 1];
    let start = t_end - fraction * (t_end - t[0]);
    t.iter().zip(y).filter(|(t, _)| **t >= start).map(|(_, v)| *v).collect()
}
