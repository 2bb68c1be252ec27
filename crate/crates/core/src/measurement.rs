//! Measurement windows: ground truth, synchronization offsets and channel noise.
//!
//! A window holds `K` PRS frames (rows) for `N` gNBs (columns). Each entry is
//! a pseudo-range `d_true + delta_n + noise`, together with the SNR the UE
//! reports for it and the variance derived from that report.

use std::io::Write;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::channel::{self, ChannelConfig, LinkGeometry};
use crate::{Error, Result, SPEED_OF_LIGHT};

pub type Point3 = [f64; 3];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrsSchedule {
    pub delta_t_s: f64,
    pub k: usize,
}

impl PrsSchedule {
    pub fn new(delta_t_s: f64, k: usize) -> Result<Self> {
        if !(delta_t_s > 0.0) {
            return Err(Error::domain(format!("PRS interval must be > 0, got {delta_t_s}")));
        }
        if k < 2 {
            return Err(Error::domain(format!("window length must be >= 2, got {k}")));
        }
        Ok(Self { delta_t_s, k })
    }
}

/// Per-gNB clock offsets, already scaled to meters. Constant over a window.
#[derive(Debug, Clone, PartialEq)]
pub struct SyncOffsets {
    pub delta_m: Vec<f64>,
    pub sigma_delta_s: f64,
}

impl SyncOffsets {
    pub fn zero(n: usize) -> Self {
        Self {
            delta_m: vec![0.0; n],
            sigma_delta_s: 0.0,
        }
    }

    /// Draws `n` offsets from `N(0, (sigma_delta_s * c)^2)`.
    pub fn draw<R: Rng + ?Sized>(n: usize, sigma_delta_s: f64, rng: &mut R) -> Self {
        let scale = sigma_delta_s * SPEED_OF_LIGHT;
        let delta_m = (0..n)
            .map(|_| {
                if scale > 0.0 {
                    scale * rng.sample::<f64, _>(StandardNormal)
                } else {
                    0.0
                }
            })
            .collect();
        Self { delta_m, sigma_delta_s }
    }
}

/// Knobs of the measurement model that are not channel parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeasurementOptions {
    /// Offset scale in seconds; 0 means the LMF has compensated the offsets.
    pub sigma_delta_s: f64,
    /// Draw one LoS state per gNB per window instead of per frame.
    pub freeze_los: bool,
    /// Round reported SNRs to whole dB.
    pub quantize_snr: bool,
}

impl Default for MeasurementOptions {
    fn default() -> Self {
        Self {
            sigma_delta_s: 0.0,
            freeze_los: false,
            quantize_snr: false,
        }
    }
}

/// One report: `K x N` matrices indexed `[(frame, gnb)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementWindow {
    pub d_obs: DMatrix<f64>,
    pub r_quality: DMatrix<f64>,
    pub d_true: DMatrix<f64>,
    pub snr_report_db: DMatrix<f64>,
    /// Offsets applied to this window, for diagnostics.
    pub delta_m: Vec<f64>,
}

impl MeasurementWindow {
    pub fn k(&self) -> usize {
        self.d_obs.nrows()
    }

    pub fn n(&self) -> usize {
        self.d_obs.ncols()
    }

    /// FNV-1a over the bit patterns of the observed ranges and reports.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for m in [&self.d_obs, &self.r_quality] {
            for v in m.iter() {
                for b in v.to_bits().to_le_bytes() {
                    h ^= u64::from(b);
                    h = h.wrapping_mul(0x0000_0100_0000_01b3);
                }
            }
        }
        h
    }

    /// Writes the window as CSV rows `run_id,k,n,d_true,d_obs,snr_db,r_quality`.
    ///
    /// `k` and `n` are 1-based. Set `header` for the first window of a file.
    pub fn write_csv<W: Write>(&self, out: W, run_id: u64, header: bool) -> Result<()> {
        let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(out);
        if header {
            wtr.write_record(["run_id", "k", "n", "d_true", "d_obs", "snr_db", "r_quality"])?;
        }
        for k in 0..self.k() {
            for n in 0..self.n() {
                wtr.serialize((
                    run_id,
                    k + 1,
                    n + 1,
                    self.d_true[(k, n)],
                    self.d_obs[(k, n)],
                    self.snr_report_db[(k, n)],
                    self.r_quality[(k, n)],
                ))?;
            }
        }
        wtr.flush().map_err(|e| Error::io("window csv", e))?;
        Ok(())
    }
}

/// Generates one measurement window along `traj` for the gNBs at `gnbs`.
///
/// Per frame and gNB: LoS is drawn from the LoS probability, the averaged
/// exponent gives the SNR, and the noise is Gaussian with the CRLB variance.
pub fn generate_window<R: Rng + ?Sized>(
    traj: &[Point3],
    gnbs: &[Point3],
    cfg: &ChannelConfig,
    sched: &PrsSchedule,
    offsets: &SyncOffsets,
    opts: &MeasurementOptions,
    rng: &mut R,
) -> Result<MeasurementWindow> {
    let k = sched.k;
    let n = gnbs.len();
    if traj.len() != k {
        return Err(Error::Dimension(format!(
            "trajectory has {} positions, schedule expects {k}",
            traj.len()
        )));
    }
    if n < 4 {
        return Err(Error::Dimension(format!("need at least 4 gNBs, got {n}")));
    }
    if offsets.delta_m.len() != n {
        return Err(Error::Dimension(format!(
            "{} offsets for {n} gNBs",
            offsets.delta_m.len()
        )));
    }
    cfg.validate()?;

    let bias = if cfg.nlos_excess_enabled && cfg.tau_max_s > 0.0 {
        Some(Exp::new(1.0 / cfg.nlos_bias_mean_m()).map_err(|e| Error::domain(e.to_string()))?)
    } else {
        None
    };

    let mut d_obs = DMatrix::zeros(k, n);
    let mut d_true = DMatrix::zeros(k, n);
    let mut r_quality = DMatrix::zeros(k, n);
    let mut snr_report_db = DMatrix::zeros(k, n);
    let mut frozen_los: Vec<Option<bool>> = vec![None; n];

    for (ki, uav) in traj.iter().enumerate() {
        for (ni, gnb) in gnbs.iter().enumerate() {
            let geom = LinkGeometry::between(uav, gnb);
            if geom.d_3d_m < 1.0 {
                return Err(Error::DegenerateGeometry(format!(
                    "UAV frame {ki} is within 1 m of gNB {ni}"
                )));
            }
            let p_los = channel::los_probability(geom.d_2d_m, geom.h_m)?;
            let is_los = match frozen_los[ni] {
                Some(state) if opts.freeze_los => state,
                _ => {
                    let state = rng.gen::<f64>() < p_los;
                    frozen_los[ni] = Some(state);
                    state
                }
            };
            let eta = channel::pathloss_exponent(geom.h_m, p_los)?;
            let snr = channel::snr_db(cfg, &geom, eta, is_los)?;
            let sigma2 = channel::tdoa_variance(cfg, snr)?;

            let mut obs = geom.d_3d_m + offsets.delta_m[ni] + sigma2.sqrt() * rng.sample::<f64, _>(StandardNormal);
            if let (Some(dist), false) = (&bias, is_los) {
                obs += dist.sample(rng);
            }
            let reported = if opts.quantize_snr { snr.round() } else { snr };

            d_true[(ki, ni)] = geom.d_3d_m;
            d_obs[(ki, ni)] = obs;
            snr_report_db[(ki, ni)] = reported;
            r_quality[(ki, ni)] = channel::tdoa_variance(cfg, reported)?;
        }
    }

    Ok(MeasurementWindow {
        d_obs,
        r_quality,
        d_true,
        snr_report_db,
        delta_m: offsets.delta_m.clone(),
    })
}

/// Latest observed row, the "no denoising" baseline.
pub fn raw_latest(window: &MeasurementWindow) -> Vec<f64> {
    let last = window.k() - 1;
    window.d_obs.row(last).iter().copied().collect()
}
