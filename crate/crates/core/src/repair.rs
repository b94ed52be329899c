//! Iterative discrepancy-guided repair of a compressed network.
//!
//! Each iteration merges the original and the current compressed network,
//! computes the reachable discrepancy set over the input stars of the
//! evaluation images, and stops when every image's discrepancy bounds fit the
//! target set (or when the iteration budget runs out). Otherwise it builds a
//! retraining set that nudges the compressed network's outputs by a fraction
//! of the signed discrepancy maximum and retrains for a few epochs.

use ndarray::Array1;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::compress::pad_pair;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::merge::{check_compatible, merge};
use crate::network::Network;
use crate::reach::{
    merged_discrepancy, select_brightest_dims, star_from_linf_ball, DiscrepancyReport,
    ReachOptions, StarSet,
};
use crate::training::{evaluate_accuracy, train, LossKind, TrainConfig};

/// The prescribed region the reachable discrepancy must fit inside.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum TargetSet {
    /// Per-coordinate box `|y_j| <= d_j`.
    Box { thresholds: Vec<f64> },
    /// Infinity-norm ball `||y|| <= d`.
    NormBall { threshold: f64 },
}

impl TargetSet {
    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            TargetSet::Box { thresholds } => {
                !thresholds.is_empty() && thresholds.iter().all(|&d| d > 0.0 && d.is_finite())
            }
            TargetSet::NormBall { threshold } => *threshold > 0.0 && threshold.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Validation("target thresholds must be positive".into()))
        }
    }

    /// Per-coordinate box at `frac` of the report's bound magnitudes, floored
    /// so thresholds stay positive even on coordinates with zero discrepancy.
    pub fn box_from_report(report: &DiscrepancyReport, frac: f64, floor: f64) -> TargetSet {
        TargetSet::Box {
            thresholds: report
                .delta_tilde_mag
                .iter()
                .map(|&w| (frac * w).max(floor))
                .collect(),
        }
    }
}

/// Is the discrepancy hull inside the target set? The target is closed:
/// boundary contact counts as contained.
pub fn containment_check(report: &DiscrepancyReport, target: &TargetSet) -> bool {
    match target {
        TargetSet::Box { thresholds } => {
            report.lower.len() == thresholds.len()
                && report
                    .lower
                    .iter()
                    .zip(&report.upper)
                    .zip(thresholds)
                    .all(|((&l, &u), &d)| l >= -d && u <= d)
        }
        TargetSet::NormBall { threshold } => report.delta_max <= *threshold,
    }
}

/// How the repair target is specified.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum RepairTarget {
    /// One target applied to every evaluation image.
    Uniform(TargetSet),
    /// One target per evaluation image.
    PerImage(Vec<TargetSet>),
    /// Derive per-image norm-ball targets as this fraction of each image's
    /// initial discrepancy bound magnitude (the experiment's two-thirds rule).
    FractionOfInitial(f64),
}

/// How retraining targets are built from the discrepancy report.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrainStrategy {
    /// `y2 + delta_tilde_max / alpha` with the signed per-coordinate maxima.
    SignedStep,
    /// Experimental variant stepping toward the interval midpoint,
    /// `y2 + (upper+lower) / (2 alpha)`.
    MidpointStep,
    /// Baseline that replaces targets with the original network's outputs
    /// outright (prone to overfitting; kept for comparison runs).
    FullReplacement,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RepairConfig {
    /// Step-size control in the target update; must be >= 1.
    pub alpha: f64,
    pub retrain_epochs: usize,
    pub max_iterations: usize,
    /// Retraining samples drawn from each image's input star, in addition to
    /// the anchor image itself.
    pub n_samples: usize,
    /// Input star radius around each evaluation image.
    pub epsilon: f64,
    /// How many of the brightest input dims to perturb; `None` perturbs all.
    pub perturb_dims: Option<usize>,
    pub max_sets: usize,
    pub seed: u64,
    /// Retraining step size relative to the mean residual norm of the fresh
    /// retraining set. The unsquared-norm loss has scale-free gradients, so
    /// the step has to supply the scale; tying it to the residual keeps the
    /// parameter walk proportional to the remaining gap at every iteration.
    pub learning_rate: f64,
    pub batch_size: usize,
    pub momentum: f64,
    pub strategy: RetrainStrategy,
}

impl Default for RepairConfig {
    fn default() -> Self {
        RepairConfig {
            alpha: 10.0,
            retrain_epochs: 3,
            max_iterations: 10,
            n_samples: 500,
            epsilon: 0.01,
            perturb_dims: None,
            max_sets: 4096,
            seed: 0,
            learning_rate: 5e-4,
            batch_size: 64,
            momentum: 0.0,
            strategy: RetrainStrategy::SignedStep,
        }
    }
}

/// One row of the repair trace.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Elementwise max over evaluation images of the signed per-coordinate
    /// discrepancy maxima.
    pub delta_tilde_max: Vec<f64>,
    /// Max over evaluation images of the reach-bound magnitude.
    pub max_abs_bound: f64,
    /// Mean over evaluation images of the pointwise max-coordinate distance.
    pub mean_discrepancy: f64,
    pub accuracy: Option<f64>,
    pub target_met: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RepairOutcome {
    Success,
    Timeout,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RepairTrace {
    pub records: Vec<IterationRecord>,
    pub outcome: RepairOutcome,
}

/// Output of [`repair`]: the final compressed network plus everything needed
/// for reporting.
#[derive(Clone, Debug)]
pub struct RepairResult {
    pub repaired: Network,
    pub trace: RepairTrace,
    /// Resolved per-image targets.
    pub targets: Vec<TargetSet>,
    pub initial_reports: Vec<DiscrepancyReport>,
    pub final_reports: Vec<DiscrepancyReport>,
}

/// Evaluation context: the anchor images whose stars drive the repair, and an
/// optional labeled dataset for per-iteration accuracy tracking.
pub struct RepairSetup<'a> {
    pub eval_inputs: Vec<Array1<f64>>,
    pub accuracy_data: Option<&'a Dataset>,
}

/// Mean over `inputs` of `max_j |n1(x)_j - n2(x)_j|` — the pointwise
/// discrepancy statistic (no reachability involved).
pub fn mean_discrepancy(n1: &Network, n2: &Network, inputs: &[Array1<f64>]) -> Result<f64> {
    if inputs.is_empty() {
        return Err(Error::Validation("mean discrepancy over no inputs".into()));
    }
    let mut total = 0.0;
    for x in inputs {
        let diff = n1.forward(x)? - n2.forward(x)?;
        total += diff.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
    }
    Ok(total / inputs.len() as f64)
}

/// Build the retraining set: for each input, the target is the compressed
/// network's own output shifted by `delta_tilde / alpha`.
pub fn build_retrain_set(
    n1: &Network,
    n2: &Network,
    inputs: &[Array1<f64>],
    delta_tilde: &Array1<f64>,
    alpha: f64,
) -> Result<Dataset> {
    if alpha < 1.0 {
        return Err(Error::Validation(format!("alpha must be >= 1, got {alpha}")));
    }
    if delta_tilde.len() != n1.output_dim() || n1.output_dim() != n2.output_dim() {
        return Err(Error::Validation("delta dimension != network output dimension".into()));
    }
    let shift = delta_tilde.mapv(|v| v / alpha);
    let targets = inputs
        .iter()
        .map(|x| Ok(n2.forward(x)? + &shift))
        .collect::<Result<Vec<_>>>()?;
    Dataset::with_targets(inputs.to_vec(), targets)
}

/// Baseline retraining set that substitutes the original network's outputs as
/// targets, eliminating the discrepancy in data outright.
pub fn build_replacement_set(n1: &Network, inputs: &[Array1<f64>]) -> Result<Dataset> {
    let targets = inputs
        .iter()
        .map(|x| n1.forward(x))
        .collect::<Result<Vec<_>>>()?;
    Dataset::with_targets(inputs.to_vec(), targets)
}

fn resolve_targets(
    target: &RepairTarget,
    initial: &[DiscrepancyReport],
) -> Result<Vec<TargetSet>> {
    let resolved = match target {
        RepairTarget::Uniform(t) => {
            t.validate()?;
            vec![t.clone(); initial.len()]
        }
        RepairTarget::PerImage(list) => {
            if list.len() != initial.len() {
                return Err(Error::Validation(format!(
                    "{} targets for {} evaluation images",
                    list.len(),
                    initial.len()
                )));
            }
            for t in list {
                t.validate()?;
            }
            list.clone()
        }
        RepairTarget::FractionOfInitial(frac) => {
            if !(*frac > 0.0 && frac.is_finite()) {
                return Err(Error::Validation("target fraction must be positive".into()));
            }
            initial
                .iter()
                .map(|r| TargetSet::NormBall {
                    threshold: (frac * r.delta_max).max(1e-9),
                })
                .collect()
        }
    };
    Ok(resolved)
}

/// Repair `n2` against `n1` until the merged reachable discrepancy of every
/// evaluation image fits its target, or `max_iterations` retraining rounds
/// have been spent. The networks are padded to a common depth first if needed.
pub fn repair(
    n1: &Network,
    n2: &Network,
    target: &RepairTarget,
    cfg: &RepairConfig,
    setup: &RepairSetup,
) -> Result<RepairResult> {
    if cfg.alpha < 1.0 {
        return Err(Error::Validation(format!("alpha must be >= 1, got {}", cfg.alpha)));
    }
    if setup.eval_inputs.is_empty() {
        return Err(Error::Validation("repair needs at least one evaluation image".into()));
    }
    let (n1, mut current) = pad_pair(n1, n2)?;
    check_compatible(&n1, &current)?;

    let opts = ReachOptions {
        max_sets: cfg.max_sets,
        box_fallback: true,
    };
    let stars: Vec<StarSet> = setup
        .eval_inputs
        .iter()
        .map(|x| {
            let dims = cfg.perturb_dims.map(|k| select_brightest_dims(x, k));
            star_from_linf_ball(x, cfg.epsilon, dims.as_deref())
        })
        .collect::<Result<Vec<_>>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut records: Vec<IterationRecord> = Vec::new();
    let mut targets: Option<Vec<TargetSet>> = None;
    let mut initial_reports: Option<Vec<DiscrepancyReport>> = None;
    let outcome;
    let final_reports;

    let mut iteration = 0usize;
    loop {
        let reports = analyze(&n1, &current, &stars, &opts)?;
        if iteration == 0 {
            targets = Some(resolve_targets(target, &reports)?);
            initial_reports = Some(reports.clone());
        }
        let targets_ref = targets.as_ref().expect("resolved at iteration 0");
        let target_met = reports
            .iter()
            .zip(targets_ref)
            .all(|(r, t)| containment_check(r, t));
        records.push(IterationRecord {
            iteration,
            delta_tilde_max: elementwise_max(&reports),
            max_abs_bound: reports.iter().map(|r| r.delta_max).fold(0.0, f64::max),
            mean_discrepancy: mean_discrepancy(&n1, &current, &setup.eval_inputs)?,
            accuracy: match setup.accuracy_data {
                Some(data) => Some(evaluate_accuracy(&current, data)?),
                None => None,
            },
            target_met,
        });
        if target_met {
            outcome = RepairOutcome::Success;
            final_reports = reports;
            break;
        }
        if iteration >= cfg.max_iterations {
            outcome = RepairOutcome::Timeout;
            final_reports = reports;
            break;
        }

        // Per-image retraining data: star samples plus the anchor, targets
        // shifted by that image's own discrepancy vector.
        let mut xs: Vec<Array1<f64>> = Vec::new();
        let mut ts: Vec<Array1<f64>> = Vec::new();
        for (i, (x, report)) in setup.eval_inputs.iter().zip(&reports).enumerate() {
            let star = &stars[i];
            let mut image_inputs = Vec::with_capacity(cfg.n_samples + 1);
            image_inputs.push(x.clone());
            for _ in 0..cfg.n_samples {
                image_inputs.push(star.sample_box(&mut rng)?);
            }
            let image_set = match cfg.strategy {
                RetrainStrategy::SignedStep => {
                    let delta = Array1::from_vec(report.delta_tilde_max.clone());
                    build_retrain_set(&n1, &current, &image_inputs, &delta, cfg.alpha)?
                }
                RetrainStrategy::MidpointStep => {
                    let delta = Array1::from_iter(
                        report
                            .lower
                            .iter()
                            .zip(&report.upper)
                            .map(|(&l, &u)| (l + u) / 2.0),
                    );
                    build_retrain_set(&n1, &current, &image_inputs, &delta, cfg.alpha)?
                }
                RetrainStrategy::FullReplacement => {
                    build_replacement_set(&n1, &image_inputs)?
                }
            };
            xs.extend(image_set.inputs().iter().cloned());
            ts.extend(image_set.targets().expect("built with targets").iter().cloned());
        }
        let retrain_data = Dataset::with_targets(xs, ts)?;
        let residual_scale = {
            let mut total = 0.0;
            for (x, t) in retrain_data.inputs().iter().zip(retrain_data.targets().unwrap()) {
                total += (current.forward(x)? - t).mapv(|v| v * v).sum().sqrt();
            }
            total / retrain_data.len() as f64
        };
        let retrain_cfg = TrainConfig {
            epochs: cfg.retrain_epochs,
            batch_size: cfg.batch_size.min(retrain_data.len()),
            learning_rate: cfg.learning_rate * residual_scale,
            momentum: cfg.momentum,
            loss: LossKind::MeanSquaredError,
            seed: rng.random(),
        };
        current = train(&current, &retrain_data, &retrain_cfg)?;
        iteration += 1;
    }

    // Success is re-verified from scratch rather than trusted from loop state.
    if outcome == RepairOutcome::Success {
        let verify = analyze(&n1, &current, &stars, &opts)?;
        let ok = verify
            .iter()
            .zip(targets.as_ref().unwrap())
            .all(|(r, t)| containment_check(r, t));
        if !ok {
            return Err(Error::Internal(
                "containment re-verification failed after a successful loop".into(),
            ));
        }
    }

    Ok(RepairResult {
        repaired: current,
        trace: RepairTrace { records, outcome },
        targets: targets.expect("resolved"),
        initial_reports: initial_reports.expect("recorded"),
        final_reports,
    })
}

fn analyze(
    n1: &Network,
    n2: &Network,
    stars: &[StarSet],
    opts: &ReachOptions,
) -> Result<Vec<DiscrepancyReport>> {
    let merged = merge(n1, n2)?;
    stars
        .par_iter()
        .map(|s| merged_discrepancy(&merged, s, opts).map(|(_, report)| report))
        .collect()
}

fn elementwise_max(reports: &[DiscrepancyReport]) -> Vec<f64> {
    let n = reports[0].upper.len();
    let mut out = vec![f64::NEG_INFINITY; n];
    for r in reports {
        for j in 0..n {
            out[j] = out[j].max(r.delta_tilde_max[j]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::Layer;
    use ndarray::{arr1, arr2};

    fn report(lower: Vec<f64>, upper: Vec<f64>) -> DiscrepancyReport {
        let delta_tilde_mag: Vec<f64> = lower
            .iter()
            .zip(&upper)
            .map(|(&l, &u): (&f64, &f64)| l.abs().max(u.abs()))
            .collect();
        let delta_max = lower
            .iter()
            .zip(&upper)
            .map(|(&l, &u)| u.max(-l))
            .fold(0.0f64, f64::max);
        DiscrepancyReport {
            delta_tilde_max: upper.clone(),
            delta_tilde_mag,
            delta_max,
            set_count: 1,
            wall_time_s: 0.0,
            lower,
            upper,
        }
    }

    #[test]
    fn containment_examples() {
        let zero = report(vec![0.0, 0.0], vec![0.0, 0.0]);
        let target = TargetSet::Box { thresholds: vec![0.1, 0.1] };
        assert!(containment_check(&zero, &target));

        let out = report(vec![-0.1], vec![0.5]);
        assert!(!containment_check(&out, &TargetSet::Box { thresholds: vec![0.4] }));

        // boundary contact is inside the closed target
        let boundary = report(vec![-0.4], vec![0.4]);
        assert!(containment_check(&boundary, &TargetSet::Box { thresholds: vec![0.4] }));
        assert!(containment_check(&boundary, &TargetSet::NormBall { threshold: 0.4 }));
        assert!(!containment_check(&boundary, &TargetSet::NormBall { threshold: 0.39 }));
    }

    #[test]
    fn mean_discrepancy_cases() {
        let a = crate::training::init_mlp(&[2, 3, 2], 0).unwrap();
        let inputs = vec![arr1(&[0.1, 0.2]), arr1(&[-0.3, 0.4])];
        assert_eq!(mean_discrepancy(&a, &a, &inputs).unwrap(), 0.0);

        let mut layers = a.layers().to_vec();
        let last = layers.len() - 1;
        if let Layer::FullyConnected { bias, .. } = &mut layers[last] {
            bias[0] += 0.25;
        }
        let b = Network::new(layers).unwrap();
        let d = mean_discrepancy(&a, &b, &inputs).unwrap();
        assert!((d - 0.25).abs() < 1e-12);
    }

    #[test]
    fn retrain_set_shifts() {
        let net = crate::training::init_mlp(&[2, 3, 2], 1).unwrap();
        let inputs = vec![arr1(&[0.5, 0.5]), arr1(&[0.0, 1.0])];

        // zero delta: targets equal current outputs
        let ds = build_retrain_set(&net, &net, &inputs, &arr1(&[0.0, 0.0]), 2.0).unwrap();
        for (x, t) in inputs.iter().zip(ds.targets().unwrap()) {
            assert_eq!(t, &net.forward(x).unwrap());
        }

        // alpha = 1: shift by exactly delta
        let delta = arr1(&[1.0, -0.5]);
        let ds = build_retrain_set(&net, &net, &inputs, &delta, 1.0).unwrap();
        for (x, t) in inputs.iter().zip(ds.targets().unwrap()) {
            let want = net.forward(x).unwrap() + &delta;
            assert_eq!(t, &want);
        }

        // alpha = 10 with all-ones delta: +0.1 per coordinate
        let ds = build_retrain_set(&net, &net, &inputs, &arr1(&[1.0, 1.0]), 10.0).unwrap();
        for (x, t) in inputs.iter().zip(ds.targets().unwrap()) {
            let y = net.forward(x).unwrap();
            for j in 0..2 {
                assert!((t[j] - y[j] - 0.1).abs() < 1e-15);
            }
        }

        assert!(build_retrain_set(&net, &net, &inputs, &delta, 0.5).is_err());
    }

    #[test]
    fn self_pair_succeeds_immediately() {
        let net = crate::training::init_mlp(&[3, 4, 2], 2).unwrap();
        let cfg = RepairConfig {
            epsilon: 0.1,
            n_samples: 10,
            ..RepairConfig::default()
        };
        let setup = RepairSetup {
            eval_inputs: vec![arr1(&[0.2, 0.4, 0.6])],
            accuracy_data: None,
        };
        let target = RepairTarget::Uniform(TargetSet::NormBall { threshold: 0.05 });
        let result = repair(&net, &net, &target, &cfg, &setup).unwrap();
        assert_eq!(result.trace.outcome, RepairOutcome::Success);
        assert_eq!(result.trace.records.len(), 1);
        assert!(result.trace.records[0].target_met);
        assert_eq!(result.repaired, net);
    }

    #[test]
    fn max_iter_zero_times_out() {
        let net = crate::training::init_mlp(&[2, 3, 2], 3).unwrap();
        let mut layers = net.layers().to_vec();
        let last = layers.len() - 1;
        if let Layer::FullyConnected { bias, .. } = &mut layers[last] {
            bias[1] += 0.5;
        }
        let shifted = Network::new(layers).unwrap();
        let cfg = RepairConfig {
            max_iterations: 0,
            epsilon: 0.05,
            n_samples: 5,
            ..RepairConfig::default()
        };
        let setup = RepairSetup {
            eval_inputs: vec![arr1(&[0.1, 0.9])],
            accuracy_data: None,
        };
        let target = RepairTarget::FractionOfInitial(2.0 / 3.0);
        let result = repair(&net, &shifted, &target, &cfg, &setup).unwrap();
        assert_eq!(result.trace.outcome, RepairOutcome::Timeout);
        assert_eq!(result.trace.records.len(), 1);
        assert_eq!(result.trace.records[0].iteration, 0);
    }

    #[test]
    fn biased_linear_pair_repairs_in_one_round() {
        // Affine (ReLU-free) pair differing by a constant output offset: with
        // alpha = 1, one retraining round drives the offset to ~0 (the
        // targets are exactly realizable, least squares residual 0).
        let w = arr2(&[[0.8, -0.4], [0.3, 0.6]]);
        let n1 = Network::new(vec![Layer::fully_connected(w.clone(), arr1(&[0.1, -0.2])).unwrap()])
            .unwrap();
        let n2 = Network::new(vec![Layer::fully_connected(w, arr1(&[0.6, -0.2])).unwrap()])
            .unwrap();

        let cfg = RepairConfig {
            alpha: 1.0,
            retrain_epochs: 400,
            max_iterations: 1,
            n_samples: 60,
            epsilon: 0.2,
            learning_rate: 4e-4,
            momentum: 0.9,
            batch_size: 8,
            seed: 4,
            ..RepairConfig::default()
        };
        let setup = RepairSetup {
            eval_inputs: vec![arr1(&[0.3, 0.7])],
            accuracy_data: None,
        };
        let target = RepairTarget::Uniform(TargetSet::NormBall { threshold: 1e-3 });
        let result = repair(&n1, &n2, &target, &cfg, &setup).unwrap();
        assert_eq!(result.trace.outcome, RepairOutcome::Success);
        assert_eq!(result.trace.records.len(), 2, "one retraining round");
        let last = result.trace.records.last().unwrap();
        assert!(last.max_abs_bound <= 1e-3, "residual {}", last.max_abs_bound);
    }
}
