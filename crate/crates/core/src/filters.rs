//! Latest-value denoisers for short per-gNB range sequences.
//!
//! Every filter maps one gNB column of a [`MeasurementWindow`] (oldest frame
//! first) to an estimate of the range at the most recent frame. AGES also
//! reads the matching column of reported variances.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::measurement::{raw_latest, MeasurementWindow};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterKind {
    None,
    ExpSmooth,
    DoubleExp,
    Median,
    Savgol,
    Ages,
}

impl FilterKind {
    pub const ALL: [FilterKind; 6] = [
        FilterKind::None,
        FilterKind::ExpSmooth,
        FilterKind::DoubleExp,
        FilterKind::Median,
        FilterKind::Savgol,
        FilterKind::Ages,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FilterKind::None => "none",
            FilterKind::ExpSmooth => "exp_smooth",
            FilterKind::DoubleExp => "double_exp",
            FilterKind::Median => "median",
            FilterKind::Savgol => "savgol",
            FilterKind::Ages => "ages",
        }
    }
}

impl std::str::FromStr for FilterKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FilterKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = FilterKind::ALL.iter().map(|k| k.name()).collect();
                Error::InvalidFilter(format!("unknown filter kind '{s}' (expected one of {})", names.join(", ")))
            })
    }
}

impl std::fmt::Display for FilterKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// How AGES normalizes the weighted average of past frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgesMode {
    /// Divide by the sum of weights (unbiased on constant input).
    Normalized,
    /// Divide by `K - 1`, exactly as the algorithm listing prints it.
    Verbatim,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesOutput {
    LevelPlusTrend,
    LevelOnly,
}

/// A filter together with its parameters.
///
/// `window = None` selects the per-kind default for the window length in use:
/// the largest odd length `<= K` for both the median and Savitzky-Golay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterSpec {
    /// Series name in result tables; defaults to the kind name.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub kind: FilterKind,
    pub alpha: f64,
    pub beta_trend: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub window: Option<usize>,
    pub poly_order: usize,
    pub ages_mode: AgesMode,
    pub des_output: DesOutput,
}

impl Default for FilterSpec {
    fn default() -> Self {
        Self {
            label: None,
            kind: FilterKind::None,
            alpha: 0.7,
            beta_trend: 0.3,
            window: None,
            poly_order: 2,
            ages_mode: AgesMode::Normalized,
            des_output: DesOutput::LevelPlusTrend,
        }
    }
}

impl FilterSpec {
    /// The evaluation defaults for `kind`.
    pub fn for_kind(kind: FilterKind) -> Self {
        let base = Self {
            kind,
            ..Self::default()
        };
        match kind {
            FilterKind::DoubleExp => Self { alpha: 0.5, ..base },
            _ => base,
        }
    }

    /// One spec per kind, `none` first.
    pub fn default_set() -> Vec<Self> {
        FilterKind::ALL.into_iter().map(Self::for_kind).collect()
    }

    pub fn label(&self) -> &str {
        self.label.as_deref().unwrap_or(self.kind.name())
    }

    /// Window length actually used for a sequence of length `k`.
    pub fn effective_window(&self, k: usize) -> usize {
        if let Some(w) = self.window {
            return w;
        }
        match self.kind {
            FilterKind::Median => largest_odd_at_most(k),
            FilterKind::Savgol => largest_odd_at_most(k),
            _ => k,
        }
    }

    /// Polynomial order actually used; the default window may be too short for
    /// the configured order, in which case the fit interpolates.
    pub fn effective_poly_order(&self, k: usize) -> usize {
        let w = self.effective_window(k);
        if self.window.is_none() {
            self.poly_order.min(w.saturating_sub(1))
        } else {
            self.poly_order
        }
    }

    /// Checks parameters against a window of length `k`.
    pub fn validate(&self, k: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidFilter(format!("{}: {msg}", self.label())));
        if k == 0 {
            return bad("empty window".into());
        }
        match self.kind {
            FilterKind::None => {}
            FilterKind::ExpSmooth | FilterKind::Ages => {
                if !(self.alpha > 0.0 && self.alpha <= 1.0) {
                    return bad(format!("alpha must lie in (0, 1], got {}", self.alpha));
                }
                if self.kind == FilterKind::Ages && k < 2 {
                    return bad(format!("needs K >= 2, got K = {k}"));
                }
            }
            FilterKind::DoubleExp => {
                if !(self.alpha > 0.0 && self.alpha <= 1.0) {
                    return bad(format!("alpha must lie in (0, 1], got {}", self.alpha));
                }
                if !(self.beta_trend > 0.0 && self.beta_trend < 1.0) {
                    return bad(format!("beta_trend must lie in (0, 1), got {}", self.beta_trend));
                }
                if k < 2 {
                    return bad(format!("needs K >= 2, got K = {k}"));
                }
            }
            FilterKind::Median | FilterKind::Savgol => {
                let w = self.effective_window(k);
                if w == 0 || w.is_multiple_of(2) {
                    return bad(format!("window must be odd and positive, got {w}"));
                }
                if w > k {
                    return bad(format!("window {w} exceeds K = {k}"));
                }
                if self.kind == FilterKind::Savgol && self.effective_poly_order(k) >= w {
                    return bad(format!(
                        "poly_order {} must be below window {w}",
                        self.effective_poly_order(k)
                    ));
                }
            }
        }
        Ok(())
    }
}

fn largest_odd_at_most(n: usize) -> usize {
    if n % 2 == 1 {
        n
    } else {
        n.saturating_sub(1)
    }
}

fn require_nonempty(seq: &[f64]) -> Result<()> {
    if seq.is_empty() {
        Err(Error::InvalidFilter("empty sequence".into()))
    } else {
        Ok(())
    }
}

/// Exponentially weighted mean with weight 1 on the latest sample and
/// `alpha^age` on older ones.
pub fn exp_smooth(seq: &[f64], alpha: f64) -> Result<f64> {
    require_nonempty(seq)?;
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidFilter(format!("alpha must lie in (0, 1], got {alpha}")));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    let mut w = 1.0;
    for x in seq.iter().rev() {
        num += w * x;
        den += w;
        w *= alpha;
    }
    Ok(num / den)
}

/// Holt's linear smoothing, initialized with `l = x1`, `b = x2 - x1`.
pub fn double_exp_smooth(seq: &[f64], alpha: f64, beta_trend: f64, output: DesOutput) -> Result<f64> {
    if seq.len() < 2 {
        return Err(Error::InvalidFilter(format!(
            "double exponential smoothing needs K >= 2, got {}",
            seq.len()
        )));
    }
    let mut level = seq[0];
    let mut trend = seq[1] - seq[0];
    for &x in &seq[1..] {
        let prev = level;
        level = alpha * x + (1.0 - alpha) * (level + trend);
        trend = beta_trend * (level - prev) + (1.0 - beta_trend) * trend;
    }
    Ok(match output {
        DesOutput::LevelPlusTrend => level + trend,
        DesOutput::LevelOnly => level,
    })
}

fn check_window(len: usize, window: usize) -> Result<()> {
    if window == 0 || window.is_multiple_of(2) {
        return Err(Error::InvalidFilter(format!("window must be odd and positive, got {window}")));
    }
    if window > len {
        return Err(Error::InvalidFilter(format!("window {window} exceeds sequence length {len}")));
    }
    Ok(())
}

/// Median of the trailing `window` samples.
pub fn median_filter(seq: &[f64], window: usize) -> Result<f64> {
    require_nonempty(seq)?;
    check_window(seq.len(), window)?;
    let mut tail = seq[seq.len() - window..].to_vec();
    tail.sort_by(f64::total_cmp);
    Ok(tail[window / 2])
}

/// Least-squares polynomial fit to the trailing `window` samples, evaluated
/// at the latest sample.
pub fn savgol(seq: &[f64], window: usize, poly_order: usize) -> Result<f64> {
    require_nonempty(seq)?;
    check_window(seq.len(), window)?;
    if poly_order >= window {
        return Err(Error::InvalidFilter(format!(
            "poly_order {poly_order} must be below window {window}"
        )));
    }
    let tail = &seq[seq.len() - window..];
    // Centered abscissae in [-1, 1] keep the design well conditioned; the
    // latest sample sits at t = 1, where the fit is the sum of coefficients.
    let half = ((window - 1) as f64 / 2.0).max(1.0);
    let cols = poly_order + 1;
    let design = DMatrix::from_fn(window, cols, |i, j| {
        let t = (i as f64 - (window - 1) as f64 / 2.0) / half;
        t.powi(j as i32)
    });
    let rhs = DVector::from_column_slice(tail);
    let coeffs = design
        .svd(true, true)
        .solve(&rhs, 1e-12)
        .map_err(|e| Error::InvalidFilter(format!("least-squares fit failed: {e}")))?;
    Ok(coeffs.iter().sum())
}

/// Intermediate quantities of one AGES update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgesState {
    pub x_pre: f64,
    pub p_pre: f64,
    pub k_gain: f64,
    pub x_cur: f64,
}

/// AGES on a single gNB column of ranges `d` with reported variances `r`.
///
/// Past frames `k = 1..K-1` are averaged with weights `alpha^(K-2-k)` into a
/// prediction whose variance is the mean reported variance; the latest frame
/// then corrects it with a Kalman-style gain.
pub fn ages_column(d: &[f64], r: &[f64], alpha: f64, mode: AgesMode) -> Result<AgesState> {
    let k = d.len();
    if k < 2 {
        return Err(Error::InvalidFilter(format!("AGES needs K >= 2, got K = {k}")));
    }
    if r.len() != k {
        return Err(Error::Dimension(format!("{} variances for {k} ranges", r.len())));
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidFilter(format!("alpha must lie in (0, 1], got {alpha}")));
    }
    if let Some(bad) = r.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
        return Err(Error::InvalidFilter(format!("variances must be positive and finite, got {bad}")));
    }

    let past = (k - 1) as f64;
    let mut p_pre = 0.0;
    let mut weighted = 0.0;
    let mut weight_sum = 0.0;
    for i in 0..k - 1 {
        // 1-based frame index j = i + 1, exponent K - 2 - j
        let w = alpha.powi(k as i32 - 3 - i as i32);
        p_pre += r[i] / past;
        weighted += d[i] * w;
        weight_sum += w;
    }
    let x_pre = match mode {
        AgesMode::Normalized => weighted / weight_sum,
        AgesMode::Verbatim => weighted / past,
    };
    let latest = k - 1;
    let k_gain = p_pre / (p_pre + r[latest]);
    Ok(AgesState {
        x_pre,
        p_pre,
        k_gain,
        x_cur: x_pre + k_gain * (d[latest] - x_pre),
    })
}

/// AGES over every column of a `K x N` window.
pub fn ages(d: &DMatrix<f64>, r: &DMatrix<f64>, alpha: f64, mode: AgesMode) -> Result<Vec<f64>> {
    if d.shape() != r.shape() {
        return Err(Error::Dimension(format!(
            "range matrix {:?} and variance matrix {:?} differ",
            d.shape(),
            r.shape()
        )));
    }
    (0..d.ncols())
        .map(|n| {
            let dc: Vec<f64> = d.column(n).iter().copied().collect();
            let rc: Vec<f64> = r.column(n).iter().copied().collect();
            ages_column(&dc, &rc, alpha, mode).map(|s| s.x_cur)
        })
        .collect()
}

/// Applies `spec` to every gNB column of `window`.
pub fn apply_filter(spec: &FilterSpec, window: &MeasurementWindow) -> Result<Vec<f64>> {
    let k = window.k();
    spec.validate(k)?;
    if spec.kind == FilterKind::None {
        return Ok(raw_latest(window));
    }
    if spec.kind == FilterKind::Ages {
        return ages(&window.d_obs, &window.r_quality, spec.alpha, spec.ages_mode);
    }
    let w = spec.effective_window(k);
    let order = spec.effective_poly_order(k);
    (0..window.n())
        .map(|n| {
            let col: Vec<f64> = window.d_obs.column(n).iter().copied().collect();
            match spec.kind {
                FilterKind::ExpSmooth => exp_smooth(&col, spec.alpha),
                FilterKind::DoubleExp => double_exp_smooth(&col, spec.alpha, spec.beta_trend, spec.des_output),
                FilterKind::Median => median_filter(&col, w),
                FilterKind::Savgol => savgol(&col, w, order),
                FilterKind::None | FilterKind::Ages => unreachable!(),
            }
        })
        .collect()
}
