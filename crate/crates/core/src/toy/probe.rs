//! Branch-weight sweep over frames of growing target size.

use std::io::{self, Write};

use super::dataset::SyntheticScene;
use super::net::{ProbeLayer, ToyNet};
use crate::error::{Error, Result};

pub const PROBE_CSV_HEADER: &str = "s,w_3x3,w_1x3,w_3x1,w_1x1,w_shortcut";

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeRow {
    pub size: usize,
    /// Channel-averaged weight of each branch; the shortcut entry is 0 for a
    /// layer without one.
    pub means: [f64; 5],
}

impl ProbeRow {
    /// Combined weight of the small-receptive-field branches (1x1 and shortcut).
    pub fn small_kernel_weight(&self) -> f64 {
        self.means[3] + self.means[4]
    }
}

/// Runs the weight generator of `layer` on every frame and averages each
/// branch row over output channels.
pub fn probe_branch_weights(net: &ToyNet, frames: &[SyntheticScene], layer: ProbeLayer) -> Result<Vec<ProbeRow>> {
    if frames.is_empty() {
        return Err(Error::InvalidArgument("probe needs at least one frame".into()));
    }
    if frames.windows(2).any(|f| f[0].target_size > f[1].target_size) {
        return Err(Error::InvalidArgument("probe frames must be sorted by target size".into()));
    }
    frames
        .iter()
        .map(|f| {
            let w = net.branch_weights(&f.image, layer)?;
            let mut means = [0.0; 5];
            for (m, v) in means.iter_mut().zip(w.branch_means()) {
                *m = v;
            }
            Ok(ProbeRow { size: f.target_size, means })
        })
        .collect()
}

/// `%.{digits}g`-style formatting.
pub fn format_significant(v: f64, digits: usize) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let exp = v.abs().log10().floor() as i32;
    if exp < -5 || exp >= digits as i32 {
        let s = format!("{:.*e}", digits.saturating_sub(1), v);
        let (mant, e) = s.split_once('e').expect("exponent form");
        let mant = if mant.contains('.') { mant.trim_end_matches('0').trim_end_matches('.') } else { mant };
        return format!("{mant}e{e}");
    }
    let decimals = (digits as i32 - 1 - exp).max(0) as usize;
    let s = format!("{v:.decimals$}");
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

pub fn write_probe_csv(rows: &[ProbeRow], mut out: impl Write) -> io::Result<()> {
    writeln!(out, "{PROBE_CSV_HEADER}")?;
    for r in rows {
        let cols: Vec<String> = r.means.iter().map(|m| format_significant(*m, 9)).collect();
        writeln!(out, "{},{}", r.size, cols.join(","))?;
    }
    Ok(())
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|a, b| v[*a].total_cmp(&v[*b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            out[idx[k]] = avg;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation with average ranks for ties. `NaN` when either
/// side is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len(), "spearman needs paired samples");
    let (rx, ry) = (ranks(x), ranks(y));
    let n = rx.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

/// Rank correlations of target size with the 3x3 weight and with the
/// combined 1x1-plus-shortcut weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleTrend {
    pub rho_3x3: f64,
    pub rho_small: f64,
}

pub fn scale_trend(rows: &[ProbeRow]) -> ScaleTrend {
    let s: Vec<f64> = rows.iter().map(|r| r.size as f64).collect();
    let w3: Vec<f64> = rows.iter().map(|r| r.means[0]).collect();
    let small: Vec<f64> = rows.iter().map(ProbeRow::small_kernel_weight).collect();
    ScaleTrend { rho_3x3: spearman(&s, &w3), rho_small: spearman(&s, &small) }
}
