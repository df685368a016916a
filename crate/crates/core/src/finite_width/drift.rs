use nalgebra::{DMatrix, DVector};

use crate::activation::ActivationSpec;
use crate::error::{Error, Result};
use crate::kernels::PointSet;
use crate::loss::{LossSpec, RegulariserSpec};
use crate::par;

use super::network::{
    stacked_gram, FiniteNetwork, Snapshot, TrainConfig, TrainProblem, TrainRecord,
};

/// Width sweep: one fresh network per hidden width, all hidden layers equal.
#[derive(Debug, Clone)]
pub struct DriftConfig {
    pub widths: Vec<usize>,
    /// Number of weight layers L (L − 1 hidden layers).
    pub depth: usize,
    pub inputs: PointSet,
    /// q × m
    pub labels: DMatrix<f64>,
    pub activation: ActivationSpec,
    pub loss: LossSpec,
    pub lambda: f64,
    pub reg: RegulariserSpec,
    /// Drift is measured at every recorded step.
    pub train: TrainConfig,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WidthRecord {
    pub width: usize,
    /// `sup_t max |Θ^L(x, x′; t) − Θ^L(x, x′; 0)|` over the sample.
    pub theta_drift: f64,
    /// `sup_t max |Ξ^L(x; t) − ΔU^L(x; t)|` over the sample.
    pub xi_gap: f64,
    /// `sup_t max_x ‖ΔU^l(x; t)‖` for l = 1..L.
    pub delta_u: Vec<f64>,
    pub d_final: f64,
    /// Empirical NTK over the sample at t = 0, stacked as in
    /// [`FiniteNetwork::empirical_gram`].
    pub initial_gram: DMatrix<f64>,
    pub records: Vec<TrainRecord>,
    pub trace: Vec<Snapshot>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DriftReport {
    pub depth: usize,
    pub records: Vec<WidthRecord>,
    /// Slope of `log theta_drift` against `log width`.
    pub theta_slope: f64,
    /// Slope of `log xi_gap` against `log width`.
    pub xi_slope: f64,
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn fit_log_slope(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::config("slope fit needs at least two (x, y) pairs"));
    }
    if xs.iter().chain(ys).any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(Error::NumericalDomain(
            "slope fit needs positive finite values".into(),
        ));
    }
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    Ok(sxy / sxx)
}

fn check_geometric(widths: &[usize]) -> Result<()> {
    if widths.len() < 3 {
        return Err(Error::config("a drift sweep needs at least three widths"));
    }
    let ratio = widths[1] as f64 / widths[0] as f64;
    let geometric = ratio > 1.0
        && widths
            .windows(2)
            .all(|w| ((w[1] as f64 / w[0] as f64) / ratio - 1.0).abs() < 1e-9);
    if !geometric {
        return Err(Error::config(format!(
            "widths {widths:?} are not an increasing geometric sequence"
        )));
    }
    Ok(())
}

/// Trains one network per width (in parallel) and records sup-over-time drift.
pub fn drift_report(config: &DriftConfig) -> Result<DriftReport> {
    check_geometric(&config.widths)?;
    if config.depth < 2 {
        return Err(Error::config(
            "drift sweep needs depth >= 2 (at least one hidden layer)",
        ));
    }
    let records = par::try_map_slice(&config.widths, |&n| run_width(config, n))?;
    let widths: Vec<f64> = config.widths.iter().map(|&n| n as f64).collect();
    let theta: Vec<f64> = records.iter().map(|r| r.theta_drift).collect();
    let xi: Vec<f64> = records.iter().map(|r| r.xi_gap).collect();
    Ok(DriftReport {
        depth: config.depth,
        theta_slope: fit_log_slope(&widths, &theta).unwrap_or(f64::NAN),
        xi_slope: fit_log_slope(&widths, &xi).unwrap_or(f64::NAN),
        records,
    })
}

/// A width sweep repeated over seeds, with per-width means.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftSweep {
    pub widths: Vec<usize>,
    pub seeds: Vec<u64>,
    pub reports: Vec<DriftReport>,
    pub theta_drift: Vec<f64>,
    pub xi_gap: Vec<f64>,
    pub d_final: Vec<f64>,
    /// Slopes of the seed-averaged drifts against width.
    pub theta_slope: f64,
    pub xi_slope: f64,
}

/// Runs [`drift_report`] once per seed (overriding `config.seed`) and averages
/// the sup-over-time drifts per width.
pub fn drift_sweep(config: &DriftConfig, seeds: &[u64]) -> Result<DriftSweep> {
    if seeds.is_empty() {
        return Err(Error::config("drift sweep needs at least one seed"));
    }
    let reports = par::try_map_slice(seeds, |&seed| {
        let mut c = config.clone();
        c.seed = seed;
        drift_report(&c)
    })?;
    let s = seeds.len() as f64;
    let mean = |f: &dyn Fn(&WidthRecord) -> f64| -> Vec<f64> {
        (0..config.widths.len())
            .map(|i| reports.iter().map(|r| f(&r.records[i])).sum::<f64>() / s)
            .collect()
    };
    let theta_drift = mean(&|r| r.theta_drift);
    let xi_gap = mean(&|r| r.xi_gap);
    let d_final = mean(&|r| r.d_final);
    let widths: Vec<f64> = config.widths.iter().map(|&n| n as f64).collect();
    Ok(DriftSweep {
        widths: config.widths.clone(),
        seeds: seeds.to_vec(),
        theta_slope: fit_log_slope(&widths, &theta_drift).unwrap_or(f64::NAN),
        xi_slope: fit_log_slope(&widths, &xi_gap).unwrap_or(f64::NAN),
        reports,
        theta_drift,
        xi_gap,
        d_final,
    })
}

fn run_width(config: &DriftConfig, n: usize) -> Result<WidthRecord> {
    let mut widths = vec![config.inputs.dim()];
    widths.extend(std::iter::repeat_n(n, config.depth - 1));
    widths.push(config.labels.nrows());
    let mut net = FiniteNetwork::init(&widths, config.activation.clone(), config.seed)?;
    let pts = &config.inputs;
    let m = pts.len();
    let initial_gram = net.empirical_gram(pts)?;
    let u0: Vec<Vec<DVector<f64>>> = (0..m)
        .map(|i| net.initial_preactivations(pts.point(i)))
        .collect::<Result<_>>()?;

    let mut theta_drift = 0.0f64;
    let mut xi_gap = 0.0f64;
    let mut delta_u = vec![0.0f64; config.depth];
    let problem = TrainProblem {
        inputs: pts,
        labels: &config.labels,
        loss: &config.loss,
        lambda: config.lambda,
        reg: &config.reg,
    };
    let result = net
        .train_observed(&problem, config.train, |_, net| {
            let jac: Vec<_> = (0..m)
                .map(|i| net.jacobian(pts.point(i)))
                .collect::<Result<_>>()?;
            theta_drift = theta_drift.max((stacked_gram(&jac) - &initial_gram).amax());
            for i in 0..m {
                let u = net.preactivations(pts.point(i))?;
                for (l, (ul, u0l)) in u.iter().zip(&u0[i]).enumerate() {
                    delta_u[l] = delta_u[l].max((ul - u0l).norm());
                }
                let du = &u[config.depth - 1] - &u0[i][config.depth - 1];
                xi_gap = xi_gap.max((net.xi_from(&jac[i]) - du).amax());
            }
            Ok(())
        })
        .map_err(|e| match e {
            Error::Divergence { t, .. } => Error::Divergence { t, width: Some(n) },
            other => other,
        })?;
    Ok(WidthRecord {
        width: n,
        theta_drift,
        xi_gap,
        delta_u,
        d_final: net.displacement(),
        initial_gram,
        records: result.records,
        trace: result.snapshots,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_power_law() {
        let xs = [10.0, 100.0, 1000.0];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.powf(-0.5)).collect();
        assert!((fit_log_slope(&xs, &ys).unwrap() + 0.5).abs() < 1e-12);
        assert!(fit_log_slope(&xs, &[1.0, 0.0, 1.0]).is_err());
    }

    #[test]
    fn widths_must_be_geometric() {
        assert!(check_geometric(&[16, 64, 256]).is_ok());
        assert!(check_geometric(&[16, 64]).is_err());
        assert!(check_geometric(&[16, 64, 128]).is_err());
        assert!(check_geometric(&[64, 16, 4]).is_err());
    }
}
