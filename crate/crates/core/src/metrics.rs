//! Recovery-quality metrics. Phase retrieval recovers signals only up to a
//! global sign, so distances and errors are taken over both signs.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

fn dist_both(a: &[f64], b: &[f64]) -> (f64, f64) {
    let (mut minus, mut plus) = (0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        minus += (x - y) * (x - y);
        plus += (x + y) * (x + y);
    }
    (minus.sqrt(), plus.sqrt())
}

/// `min(‖a − b‖, ‖a + b‖)`
pub fn dist_up_to_sign(a: &[f64], b: &[f64]) -> Result<f64> {
    check_len("dist_up_to_sign", a.len(), b.len())?;
    let (m, p) = dist_both(a, b);
    Ok(m.min(p))
}

/// Returns `x_hat` or `-x_hat`, whichever is closer to `x_star`. Ties keep
/// `x_hat` unflipped.
pub fn sign_correct(x_hat: &[f64], x_star: &[f64]) -> Result<Vec<f64>> {
    check_len("sign_correct", x_hat.len(), x_star.len())?;
    let (m, p) = dist_both(x_hat, x_star);
    Ok(if m <= p {
        x_hat.to_vec()
    } else {
        x_hat.iter().map(|v| -v).collect()
    })
}

/// Mean squared error per entry after sign correction.
pub fn recon_error_per_pixel(x_hat: &[f64], x_star: &[f64]) -> Result<f64> {
    let d = dist_up_to_sign(x_hat, x_star)?;
    Ok(d * d / x_hat.len() as f64)
}

/// Mean-SSIM settings: Gaussian window, stability constants
/// `C1 = (k1·L)²`, `C2 = (k2·L)²`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SsimConfig {
    pub height: usize,
    pub width: usize,
    pub dynamic_range: f64,
    #[serde(default = "default_window")]
    pub window: usize,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    #[serde(default = "default_k1")]
    pub k1: f64,
    #[serde(default = "default_k2")]
    pub k2: f64,
}

fn default_window() -> usize {
    11
}
fn default_sigma() -> f64 {
    1.5
}
fn default_k1() -> f64 {
    0.01
}
fn default_k2() -> f64 {
    0.03
}

impl SsimConfig {
    pub fn new(height: usize, width: usize, dynamic_range: f64) -> Self {
        Self {
            height,
            width,
            dynamic_range,
            window: default_window(),
            sigma: default_sigma(),
            k1: default_k1(),
            k2: default_k2(),
        }
    }

    pub fn c1(&self) -> f64 {
        (self.k1 * self.dynamic_range).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.dynamic_range).powi(2)
    }

    /// Normalized `window × window` Gaussian weights, row-major.
    pub fn window_weights(&self) -> Vec<f64> {
        let half = (self.window / 2) as f64;
        let g: Vec<f64> = (0..self.window)
            .map(|i| (-(i as f64 - half).powi(2) / (2.0 * self.sigma * self.sigma)).exp())
            .collect();
        let s: f64 = g.iter().sum();
        let g: Vec<f64> = g.iter().map(|v| v / s).collect();
        let mut w = Vec::with_capacity(self.window * self.window);
        for a in &g {
            w.extend(g.iter().map(|b| a * b));
        }
        w
    }
}

/// Mean SSIM over all valid window positions (no padding).
pub fn ssim(x: &[f64], y: &[f64], cfg: &SsimConfig) -> Result<f64> {
    let (h, w, win) = (cfg.height, cfg.width, cfg.window);
    check_len("ssim image x", x.len(), h * w)?;
    check_len("ssim image y", y.len(), h * w)?;
    if cfg.dynamic_range.is_nan() || cfg.dynamic_range <= 0.0 {
        return Err(Error::InvalidArgument("ssim dynamic range must be > 0".into()));
    }
    if win == 0 || h < win || w < win {
        return Err(Error::Dimension(format!(
            "{h}x{w} image is smaller than the {win}x{win} SSIM window"
        )));
    }
    let weights = cfg.window_weights();
    let (c1, c2) = (cfg.c1(), cfg.c2());
    let mut total = 0.0;
    let mut count = 0usize;
    for r0 in 0..=h - win {
        for c0 in 0..=w - win {
            let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for dr in 0..win {
                let base = (r0 + dr) * w + c0;
                let wrow = &weights[dr * win..(dr + 1) * win];
                for (dc, &g) in wrow.iter().enumerate() {
                    let a = x[base + dc];
                    let b = y[base + dc];
                    mx += g * a;
                    my += g * b;
                    sxx += g * a * a;
                    syy += g * b * b;
                    sxy += g * a * b;
                }
            }
            let vx = sxx - mx * mx;
            let vy = syy - my * my;
            let cov = sxy - mx * my;
            let num = (2.0 * mx * my + c1) * (2.0 * cov + c2);
            let den = (mx * mx + my * my + c1) * (vx + vy + c2);
            total += num / den;
            count += 1;
        }
    }
    Ok(total / count as f64)
}
