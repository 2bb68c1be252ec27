//! Air-to-ground propagation for UMi aerial vehicles and the ranging-noise model.
//!
//! LoS probability and the averaged path-loss exponent follow the 3GPP
//! UMi-AV fit for UAV altitudes. The SNR closes a log-distance link budget
//! with a free-space 1 m intercept, and the ranging variance is the
//! simplified CRLB `kappa * c / (8 pi^2 * SNR * beta * ln beta)`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::{Error, Result, SPEED_OF_LIGHT};

/// Radio and noise-model parameters shared by every link in a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelConfig {
    /// Carrier frequency, Hz.
    pub f_c: f64,
    pub p_t_dbm: f64,
    pub n_o_dbm: f64,
    /// PRS bandwidth, Hz.
    pub beta: f64,
    /// Scale of the CRLB proportionality; absorbs the delay-to-distance units.
    pub kappa: f64,
    /// Maximum excess delay, s. Sets the mean of the optional NLoS bias.
    pub tau_max_s: f64,
    /// Adds a positive exponential ranging bias to NLoS samples.
    pub nlos_excess_enabled: bool,
    pub nlos_snr_penalty_db: f64,
}

/// Calibrated value of [`ChannelConfig::kappa`].
///
/// Puts the mean unfiltered localization error of the 30 m / 90 km/h
/// scenario at K = 3 at about 1.5 m (see `sim::calibrate_kappa`).
pub const CALIBRATED_KAPPA: f64 = 3.9e3;

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            f_c: 3.5e9,
            p_t_dbm: 15.0,
            n_o_dbm: -91.0,
            beta: 10.0e6,
            kappa: CALIBRATED_KAPPA,
            tau_max_s: 2.0e-7,
            nlos_excess_enabled: false,
            nlos_snr_penalty_db: 5.0,
        }
    }
}

impl ChannelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.f_c > 0.0) {
            return Err(Error::domain(format!("carrier frequency must be > 0, got {}", self.f_c)));
        }
        if !(self.beta > 1.0) {
            return Err(Error::domain(format!("bandwidth must be > 1 Hz, got {}", self.beta)));
        }
        if !(self.kappa > 0.0) || !self.kappa.is_finite() {
            return Err(Error::domain(format!("kappa must be finite and > 0, got {}", self.kappa)));
        }
        if !(self.tau_max_s >= 0.0) {
            return Err(Error::domain(format!("tau_max_s must be >= 0, got {}", self.tau_max_s)));
        }
        if !self.p_t_dbm.is_finite() || !self.n_o_dbm.is_finite() || !self.nlos_snr_penalty_db.is_finite() {
            return Err(Error::domain("power levels must be finite"));
        }
        Ok(())
    }

    /// Mean of the NLoS excess-range bias, m.
    pub fn nlos_bias_mean_m(&self) -> f64 {
        SPEED_OF_LIGHT * self.tau_max_s / 4.0
    }

    /// Free-space path loss at the 1 m reference distance, dB.
    pub fn fspl_1m_db(&self) -> f64 {
        20.0 * (4.0 * PI * self.f_c / SPEED_OF_LIGHT).log10()
    }
}

/// Geometry of a single UAV-gNB link.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkGeometry {
    pub d_2d_m: f64,
    pub d_3d_m: f64,
    /// UAV altitude.
    pub h_m: f64,
}

impl LinkGeometry {
    /// Builds the link between a UAV at `uav` and a gNB at `gnb`; altitude is the UAV's z.
    pub fn between(uav: &[f64; 3], gnb: &[f64; 3]) -> Self {
        let dx = uav[0] - gnb[0];
        let dy = uav[1] - gnb[1];
        let dz = uav[2] - gnb[2];
        let d_2d_m = dx.hypot(dy);
        Self {
            d_2d_m,
            d_3d_m: (d_2d_m * d_2d_m + dz * dz).sqrt(),
            h_m: uav[2],
        }
    }
}

/// Everything the channel says about one link at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkQuality {
    pub p_los: f64,
    pub eta: f64,
    pub snr_db: f64,
    pub sigma2_d: f64,
}

fn check_altitude(h_m: f64) -> Result<()> {
    if h_m > 1.0 && h_m.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!("altitude must be > 1 m, got {h_m}")))
    }
}

/// Breakpoint distance `d1` and decay length `p1` of the LoS model, both in meters.
pub fn los_params(h_m: f64) -> Result<(f64, f64)> {
    check_altitude(h_m)?;
    let lg = h_m.log10();
    let d1 = (294.05 * lg - 432.94).max(18.0);
    let p1 = 233.98 * lg - 0.95;
    Ok((d1, p1))
}

pub fn los_probability(d_2d_m: f64, h_m: f64) -> Result<f64> {
    if !(d_2d_m >= 0.0) {
        return Err(Error::domain(format!("horizontal distance must be >= 0, got {d_2d_m}")));
    }
    let (d1, p1) = los_params(h_m)?;
    if d_2d_m <= d1 {
        return Ok(1.0);
    }
    let ratio = d1 / d_2d_m;
    Ok((1.0 - ratio) * (-d_2d_m / p1).exp() + ratio)
}

fn los_exponent(h_m: f64) -> f64 {
    2.225 - 0.05 * h_m.log10()
}

fn nlos_exponent(h_m: f64) -> f64 {
    4.32 - 0.76 * h_m.log10()
}

/// LoS-probability-weighted path-loss exponent.
pub fn pathloss_exponent(h_m: f64, p_los: f64) -> Result<f64> {
    check_altitude(h_m)?;
    if !(0.0..=1.0).contains(&p_los) {
        return Err(Error::domain(format!("p_los must lie in [0, 1], got {p_los}")));
    }
    Ok(nlos_exponent(h_m) * (1.0 - p_los) + los_exponent(h_m) * p_los)
}

/// Received SNR in dB from a log-distance budget referenced to 1 m.
pub fn snr_db(cfg: &ChannelConfig, geom: &LinkGeometry, eta: f64, is_los: bool) -> Result<f64> {
    if !(geom.d_3d_m >= 1.0) {
        return Err(Error::domain(format!(
            "3D distance {} m is inside the 1 m reference distance",
            geom.d_3d_m
        )));
    }
    let path_loss = cfg.fspl_1m_db() + 10.0 * eta * geom.d_3d_m.log10();
    let penalty = if is_los { 0.0 } else { cfg.nlos_snr_penalty_db };
    Ok(cfg.p_t_dbm - path_loss - cfg.n_o_dbm - penalty)
}

/// Fisher information of a single delay estimate.
///
/// Not used by the pipeline; the simplified variance in [`tdoa_variance`]
/// already folds `gamma` and `sin^2(phi)` into `kappa`.
pub fn fisher_information(snr_linear: f64, beta: f64, gamma: f64, phi: f64) -> Result<f64> {
    if !(snr_linear > 0.0) || !(beta > 0.0) || !(gamma > 0.0) {
        return Err(Error::domain("snr, bandwidth and whitening gain must be > 0"));
    }
    let s = phi.sin();
    Ok(2.0 / SPEED_OF_LIGHT * 4.0 * PI * PI * snr_linear * gamma * beta * beta * s * s)
}

/// Distance-domain ranging variance (m^2) for a reported SNR.
pub fn tdoa_variance(cfg: &ChannelConfig, snr_db: f64) -> Result<f64> {
    if !snr_db.is_finite() {
        return Err(Error::domain(format!("snr must be finite, got {snr_db}")));
    }
    if !(cfg.beta > 1.0) {
        return Err(Error::domain(format!("bandwidth must be > 1 Hz, got {}", cfg.beta)));
    }
    let snr_linear = 10f64.powf(snr_db / 10.0);
    Ok(cfg.kappa * SPEED_OF_LIGHT / (8.0 * PI * PI * snr_linear * cfg.beta * cfg.beta.ln()))
}

/// Evaluates the full chain for one link given a LoS draw.
pub fn link_quality(cfg: &ChannelConfig, geom: &LinkGeometry, is_los: bool) -> Result<LinkQuality> {
    let p_los = los_probability(geom.d_2d_m, geom.h_m)?;
    let eta = pathloss_exponent(geom.h_m, p_los)?;
    let snr_db = snr_db(cfg, geom, eta, is_los)?;
    let sigma2_d = tdoa_variance(cfg, snr_db)?;
    Ok(LinkQuality {
        p_los,
        eta,
        snr_db,
        sigma2_d,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn unit_kappa() -> ChannelConfig {
        ChannelConfig {
            kappa: 1.0,
            ..ChannelConfig::default()
        }
    }

    #[test]
    fn los_params_examples() {
        let (d1, p1) = los_params(30.0).unwrap();
        assert_eq!(d1, 18.0);
        assert_relative_eq!(p1, 344.666_831_179_306_6, max_relative = 1e-12);

        let (d1, _) = los_params(10.0).unwrap();
        assert_eq!(d1, 18.0);

        let (d1, p1) = los_params(1000.0).unwrap();
        assert_relative_eq!(d1, 449.21, max_relative = 1e-12);
        assert_relative_eq!(p1, 700.99, max_relative = 1e-12);
    }

    #[test]
    fn los_params_rejects_low_altitude() {
        assert!(los_params(1.0).is_err());
        assert!(los_params(0.5).is_err());
        assert!(los_params(f64::NAN).is_err());
    }

    #[test]
    fn p1_positive_over_admissible_range() {
        for i in 1..2000 {
            let h = 1.0 + i as f64 * 0.5;
            assert!(los_params(h).unwrap().1 > 0.0, "h = {h}");
        }
    }

    #[test]
    fn los_probability_examples() {
        assert_eq!(los_probability(10.0, 30.0).unwrap(), 1.0);
        assert_relative_eq!(
            los_probability(100.0, 30.0).unwrap(),
            0.793_493_139_926_289_4,
            max_relative = 1e-12
        );
        assert_eq!(los_probability(18.0, 30.0).unwrap(), 1.0);
        assert!(los_probability(-1.0, 30.0).is_err());
    }

    #[test]
    fn los_probability_non_increasing() {
        for h in [20.0, 30.0, 100.0] {
            let mut prev = f64::INFINITY;
            for i in 0..1000 {
                let d = i as f64 * 0.5;
                let p = los_probability(d, h).unwrap();
                assert!(p <= prev, "h = {h}, d = {d}");
                assert!(p > 0.0 && p <= 1.0);
                prev = p;
            }
        }
    }

    #[test]
    fn pathloss_endpoints() {
        assert_relative_eq!(pathloss_exponent(100.0, 1.0).unwrap(), 2.125, epsilon = 1e-12);
        assert_relative_eq!(pathloss_exponent(100.0, 0.0).unwrap(), 2.80, epsilon = 1e-12);
        assert_relative_eq!(
            pathloss_exponent(30.0, 0.793_493_139_926_289_4).unwrap(),
            2.367_200_481_813_629,
            max_relative = 1e-12
        );
        assert!(pathloss_exponent(30.0, 1.5).is_err());
    }

    #[test]
    fn free_space_intercept() {
        assert_relative_eq!(unit_kappa().fspl_1m_db(), 43.329_144_108_888_89, max_relative = 1e-12);
    }

    #[test]
    fn snr_link_budget() {
        let cfg = unit_kappa();
        let geom = LinkGeometry {
            d_2d_m: 95.0,
            d_3d_m: 100.0,
            h_m: 30.0,
        };
        let snr = snr_db(&cfg, &geom, 2.367_200_481_813_629, true).unwrap();
        assert_relative_eq!(snr, 15.326_846_254_838_53, max_relative = 1e-12);

        let nlos = snr_db(&cfg, &geom, 2.367_200_481_813_629, false).unwrap();
        assert_relative_eq!(snr - nlos, 5.0, epsilon = 1e-12);

        let at_ref = LinkGeometry {
            d_2d_m: 0.0,
            d_3d_m: 1.0,
            h_m: 30.0,
        };
        assert_relative_eq!(
            snr_db(&cfg, &at_ref, 3.0, true).unwrap(),
            15.0 - cfg.fspl_1m_db() + 91.0,
            epsilon = 1e-12
        );

        let inside = LinkGeometry {
            d_3d_m: 0.5,
            ..at_ref
        };
        assert!(snr_db(&cfg, &inside, 3.0, true).is_err());
    }

    #[test]
    fn snr_decreases_with_distance() {
        let cfg = unit_kappa();
        let mut prev = f64::INFINITY;
        for i in 1..500 {
            let d = i as f64;
            let geom = LinkGeometry {
                d_2d_m: 0.0,
                d_3d_m: d,
                h_m: 30.0,
            };
            let s = snr_db(&cfg, &geom, 2.4, true).unwrap();
            if i > 1 {
                assert!(s < prev);
            }
            prev = s;
        }
    }

    #[test]
    fn fisher_information_examples() {
        assert_eq!(fisher_information(100.0, 1e7, 1.0, 0.0).unwrap(), 0.0);
        let j1 = fisher_information(10.0, 1e7, 0.5, 1.0).unwrap();
        let j2 = fisher_information(20.0, 1e7, 0.5, 1.0).unwrap();
        assert_relative_eq!(j2, 2.0 * j1, max_relative = 1e-14);
        assert_relative_eq!(
            fisher_information(100.0, 1e7, 1.0, PI / 2.0).unwrap(),
            2_633_716_529.610_457,
            max_relative = 1e-12
        );
        assert!(fisher_information(0.0, 1e7, 1.0, 1.0).is_err());
    }

    #[test]
    fn tdoa_variance_examples() {
        let cfg = unit_kappa();
        assert_relative_eq!(
            tdoa_variance(&cfg, 20.0).unwrap(),
            2.355_685_137_173_745e-4,
            max_relative = 1e-12
        );
        let base = tdoa_variance(&cfg, 7.0).unwrap();
        let doubled = tdoa_variance(&cfg, 7.0 + 10.0 * 2f64.log10()).unwrap();
        assert_relative_eq!(doubled, base / 2.0, max_relative = 1e-12);

        let wide = ChannelConfig {
            beta: 2e7,
            ..cfg.clone()
        };
        let ratio = tdoa_variance(&wide, 7.0).unwrap() / base;
        assert_relative_eq!(ratio, 1e7f64.ln() / (2.0 * 2e7f64.ln()), max_relative = 1e-12);
        assert!(ratio < 0.5);

        let narrow = ChannelConfig { beta: 1.0, ..cfg };
        assert!(tdoa_variance(&narrow, 7.0).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(ChannelConfig::default().validate().is_ok());
        let bad = ChannelConfig {
            kappa: 0.0,
            ..ChannelConfig::default()
        };
        assert!(bad.validate().is_err());
        assert_relative_eq!(ChannelConfig::default().nlos_bias_mean_m(), 14.989_622_9, max_relative = 1e-9);
    }
}
