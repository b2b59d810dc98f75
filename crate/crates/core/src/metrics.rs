//! Disparity error metrics.
//!
//! Threshold rates count errors strictly greater than the threshold. All sums
//! use compensated summation in raster order so reports are bit-stable.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{median_in_place, DisparityMap};

/// Neumaier-compensated running sum.
#[derive(Debug, Default, Clone, Copy)]
struct Sum {
    total: f64,
    comp: f64,
}

impl Sum {
    fn add(&mut self, v: f64) {
        let t = self.total + v;
        if self.total.abs() >= v.abs() {
            self.comp += (self.total - t) + v;
        } else {
            self.comp += (v - t) + self.total;
        }
        self.total = t;
    }

    fn value(&self) -> f64 {
        self.total + self.comp
    }
}

fn sum(it: impl IntoIterator<Item = f64>) -> f64 {
    let mut s = Sum::default();
    it.into_iter().for_each(|v| s.add(v));
    s.value()
}

pub const THRESHOLDS: [f64; 3] = [0.5, 1.0, 2.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BasicMetrics {
    pub mae: f64,
    pub rmse: f64,
    /// Percentage of pixels with |error| > 0.5 px.
    pub d05: f64,
    pub d1: f64,
    pub d2: f64,
    pub pixel_count: usize,
}

/// `(estimate, gt)` pairs on the intersection of both valid masks.
fn paired(estimate: &DisparityMap, gt: &DisparityMap) -> Result<(Vec<f64>, Vec<f64>)> {
    if estimate.dim() != gt.dim() {
        return Err(Error::DimensionMismatch {
            expected: gt.dim(),
            got: estimate.dim(),
        });
    }
    let mut e = Vec::new();
    let mut g = Vec::new();
    for (((&ev, &eok), &gv), &gok) in estimate
        .values
        .iter()
        .zip(estimate.valid.iter())
        .zip(gt.values.iter())
        .zip(gt.valid.iter())
    {
        if eok && gok && ev.is_finite() && gv.is_finite() {
            e.push(ev);
            g.push(gv);
        }
    }
    if e.is_empty() {
        return Err(Error::EmptyValidRegion("estimate ∩ ground truth"));
    }
    Ok((e, g))
}

pub fn basic_metrics(estimate: &DisparityMap, gt: &DisparityMap) -> Result<BasicMetrics> {
    let (e, g) = paired(estimate, gt)?;
    let n = e.len() as f64;
    let err: Vec<f64> = e.iter().zip(&g).map(|(a, b)| (a - b).abs()).collect();
    let rate = |t: f64| 100.0 * err.iter().filter(|v| **v > t).count() as f64 / n;
    Ok(BasicMetrics {
        mae: sum(err.iter().copied()) / n,
        rmse: (sum(err.iter().map(|v| v * v)) / n).sqrt(),
        d05: rate(THRESHOLDS[0]),
        d1: rate(THRESHOLDS[1]),
        d2: rate(THRESHOLDS[2]),
        pixel_count: e.len(),
    })
}

/// IRLS settings for the q = 1 fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IrlsConfig {
    /// Residual floor in the weights `1 / max(|r|, epsilon)`.
    pub epsilon: f64,
    /// Stop once the relative change of `(a, b)` drops below this.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for IrlsConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-6,
            tolerance: 1e-8,
            max_iterations: 100,
        }
    }
}

/// Result of fitting `a·estimate + b` to the ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineFit {
    pub value: f64,
    pub a: f64,
    pub b: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Weighted least squares for `g ≈ a·e + b`. `None` signals a constant estimate.
fn weighted_line(e: &[f64], g: &[f64], w: Option<&[f64]>) -> Result<Option<(f64, f64)>> {
    let wt = |i: usize| w.map_or(1.0, |w| w[i]);
    let sw = sum((0..e.len()).map(wt));
    let me = sum((0..e.len()).map(|i| wt(i) * e[i])) / sw;
    let mg = sum((0..e.len()).map(|i| wt(i) * g[i])) / sw;
    let sxx = sum((0..e.len()).map(|i| wt(i) * (e[i] - me).powi(2)));
    let sxy = sum((0..e.len()).map(|i| wt(i) * (e[i] - me) * (g[i] - mg)));
    let scale = sum((0..e.len()).map(|i| wt(i) * e[i] * e[i]));
    if sxx <= f64::EPSILON * scale.max(f64::MIN_POSITIVE) * 16.0 {
        return Ok(None);
    }
    let a = sxy / sxx;
    let b = mg - a * me;
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::Singular(format!(
            "normal equations gave a = {a}, b = {b} (sxx = {sxx:e})"
        )));
    }
    Ok(Some((a, b)))
}

/// `AI(q)`: the smallest `q`-norm mean residual of `gt - (a·estimate + b)` over `(a, b)`.
///
/// `q = 2` is solved in closed form, `q = 1` by IRLS started from the least
/// squares fit. A constant estimate cannot carry scale; the fit then reports
/// `a = 0` with `b` the mean (`q = 2`) or median (`q = 1`) of the ground truth.
pub fn affine_invariant(
    estimate: &DisparityMap,
    gt: &DisparityMap,
    q: u8,
    irls: &IrlsConfig,
) -> Result<AffineFit> {
    if q != 1 && q != 2 {
        return Err(Error::InvalidArgument(format!(
            "AI(q) needs q in {{1, 2}}, got {q}"
        )));
    }
    let (e, g) = paired(estimate, gt)?;
    affine_fit(&e, &g, q, irls)
}

/// Slice form of [`affine_invariant`].
pub fn affine_fit(e: &[f64], g: &[f64], q: u8, irls: &IrlsConfig) -> Result<AffineFit> {
    if e.len() < 2 || e.len() != g.len() {
        return Err(Error::InvalidArgument(format!(
            "affine fit needs at least two paired pixels, got {}",
            e.len().min(g.len())
        )));
    }
    let n = e.len() as f64;
    let residual_norm = |a: f64, b: f64| {
        let r = e.iter().zip(g).map(|(ev, gv)| gv - (a * ev + b));
        if q == 2 {
            (sum(r.map(|v| v * v)) / n).sqrt()
        } else {
            sum(r.map(f64::abs)) / n
        }
    };

    let Some((mut a, mut b)) = weighted_line(e, g, None)? else {
        let b = if q == 2 {
            sum(g.iter().copied()) / n
        } else {
            median_in_place(&mut g.to_vec())
        };
        return Ok(AffineFit {
            value: residual_norm(0.0, b),
            a: 0.0,
            b,
            iterations: 0,
            converged: true,
        });
    };
    if q == 2 {
        return Ok(AffineFit {
            value: residual_norm(a, b),
            a,
            b,
            iterations: 0,
            converged: true,
        });
    }

    let mut converged = false;
    let mut iterations = 0;
    let mut weights = vec![0.0; e.len()];
    while iterations < irls.max_iterations {
        iterations += 1;
        for (wi, (ev, gv)) in weights.iter_mut().zip(e.iter().zip(g)) {
            *wi = 1.0 / (gv - (a * ev + b)).abs().max(irls.epsilon);
        }
        let Some((na, nb)) = weighted_line(e, g, Some(&weights))? else {
            return Err(Error::Singular(
                "IRLS weights collapsed onto a single estimate value".into(),
            ));
        };
        let change = ((na - a).powi(2) + (nb - b).powi(2)).sqrt();
        let size = (na * na + nb * nb).sqrt().max(1e-12);
        a = na;
        b = nb;
        if change / size < irls.tolerance {
            converged = true;
            break;
        }
    }
    Ok(AffineFit {
        value: residual_norm(a, b),
        a,
        b,
        iterations,
        converged,
    })
}

/// Full report for one disparity map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    #[serde(flatten)]
    pub basic: BasicMetrics,
    pub ai1: f64,
    pub ai2: f64,
    pub ai1_fit: (f64, f64),
    pub ai2_fit: (f64, f64),
    pub irls: IrlsConfig,
}

impl MetricReport {
    /// Flat `key=value` record, one metric per line.
    pub fn to_key_values(&self) -> String {
        format!(
            "mae={}\nrmse={}\nd05={}\nd1={}\nd2={}\nai1={}\nai2={}\nai1_a={}\nai1_b={}\nai2_a={}\nai2_b={}\npixel_count={}\n",
            self.basic.mae,
            self.basic.rmse,
            self.basic.d05,
            self.basic.d1,
            self.basic.d2,
            self.ai1,
            self.ai2,
            self.ai1_fit.0,
            self.ai1_fit.1,
            self.ai2_fit.0,
            self.ai2_fit.1,
            self.basic.pixel_count
        )
    }
}

pub fn evaluate(
    estimate: &DisparityMap,
    gt: &DisparityMap,
    irls: &IrlsConfig,
) -> Result<MetricReport> {
    let basic = basic_metrics(estimate, gt)?;
    let ai1 = affine_invariant(estimate, gt, 1, irls)?;
    let ai2 = affine_invariant(estimate, gt, 2, irls)?;
    Ok(MetricReport {
        basic,
        ai1: ai1.value,
        ai2: ai2.value,
        ai1_fit: (ai1.a, ai1.b),
        ai2_fit: (ai2.a, ai2.b),
        irls: *irls,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::MaskedPlane;
    use ndarray::Array2;

    fn row(v: &[f64]) -> DisparityMap {
        MaskedPlane::dense(Array2::from_shape_vec((1, v.len()), v.to_vec()).unwrap())
    }

    #[test]
    fn identical_maps_score_zero() {
        let gt = row(&[0.3, -1.2, 4.0, 0.0]);
        let m = basic_metrics(&gt, &gt).unwrap();
        assert_eq!(
            (m.mae, m.rmse, m.d05, m.d1, m.d2),
            (0.0, 0.0, 0.0, 0.0, 0.0)
        );
    }

    #[test]
    fn unit_offset_sits_on_the_threshold() {
        let gt = row(&[0.0, 1.0, 2.0, 3.0]);
        let est = row(&[1.0, 2.0, 3.0, 4.0]);
        let m = basic_metrics(&est, &gt).unwrap();
        assert_eq!(
            (m.mae, m.rmse, m.d05, m.d1, m.d2),
            (1.0, 1.0, 100.0, 0.0, 0.0)
        );
    }

    #[test]
    fn two_pixel_example() {
        let m = basic_metrics(&row(&[0.0, 3.0]), &row(&[0.0, 0.0])).unwrap();
        assert_eq!(m.mae, 1.5);
        assert!((m.rmse - 4.5f64.sqrt()).abs() < 1e-15);
        assert!((m.rmse - 2.1213).abs() < 1e-4);
        assert_eq!((m.d05, m.d1, m.d2), (50.0, 50.0, 50.0));
    }

    #[test]
    fn masks_intersect() {
        let mut est = row(&[0.0, 100.0, 1.0]);
        est.valid[[0, 1]] = false;
        let mut gt = row(&[0.0, 0.0, f64::NAN]);
        gt.values[[0, 2]] = 0.0;
        gt.valid[[0, 2]] = false;
        let m = basic_metrics(&est, &gt).unwrap();
        assert_eq!(m.pixel_count, 1);
        est.valid.fill(false);
        assert!(matches!(
            basic_metrics(&est, &gt),
            Err(Error::EmptyValidRegion(_))
        ));
    }

    #[test]
    fn affine_exact_relation() {
        let gt = row(&[0.0, 1.0, -2.0, 3.5, 0.25]);
        let est = row(&gt.values.iter().map(|g| 2.0 * g + 0.5).collect::<Vec<_>>());
        for q in [1, 2] {
            let f = affine_invariant(&est, &gt, q, &IrlsConfig::default()).unwrap();
            assert!(f.value.abs() < 1e-9, "q={q}: {}", f.value);
            assert!((f.a - 0.5).abs() < 1e-9 && (f.b + 0.25).abs() < 1e-9);
            let id = affine_invariant(&gt, &gt, q, &IrlsConfig::default()).unwrap();
            assert!(id.value.abs() < 1e-9 && (id.a - 1.0).abs() < 1e-9 && id.b.abs() < 1e-9);
        }
    }

    #[test]
    fn outlier_fixture_irls_is_robust() {
        let gt = row(&[0.0, 1.0, 2.0, 10.0]);
        let est = row(&[0.0, 1.0, 2.0, 0.0]);
        let irls = IrlsConfig::default();
        let l1 = affine_invariant(&est, &gt, 1, &irls).unwrap();
        let l2 = affine_invariant(&est, &gt, 2, &irls).unwrap();
        assert!(l1.converged && l1.iterations <= 100);
        // hand solution: the three inliers fit exactly with a = 1, b = 0
        assert!((l1.a - 1.0).abs() < 1e-4 && l1.b.abs() < 1e-4, "{l1:?}");
        assert!((l1.value - 2.5).abs() < 1e-4);
        // closed form: a = sxy / sxx = -4.75 / 2.75
        assert!((l2.a - (-4.75 / 2.75)).abs() < 1e-12);
        assert!((l1.a - 1.0).abs() < (l2.a - 1.0).abs());
    }

    #[test]
    fn constant_estimate_convention() {
        let gt = row(&[1.0, 2.0, 6.0]);
        let est = row(&[3.0, 3.0, 3.0]);
        let f2 = affine_invariant(&est, &gt, 2, &IrlsConfig::default()).unwrap();
        assert_eq!((f2.a, f2.b), (0.0, 3.0));
        let f1 = affine_invariant(&est, &gt, 1, &IrlsConfig::default()).unwrap();
        assert_eq!((f1.a, f1.b), (0.0, 2.0));
        assert!((f1.value - 5.0 / 3.0).abs() < 1e-12);

        let flat = row(&[2.0, 2.0]);
        let f = affine_invariant(&flat, &flat, 1, &IrlsConfig::default()).unwrap();
        assert_eq!((f.value, f.a, f.b), (0.0, 0.0, 2.0));
    }

    #[test]
    fn bad_inputs_rejected() {
        let one = row(&[1.0]);
        assert!(affine_invariant(&one, &one, 2, &IrlsConfig::default()).is_err());
        let two = row(&[1.0, 2.0]);
        assert!(affine_invariant(&two, &two, 3, &IrlsConfig::default()).is_err());
    }

    #[test]
    fn key_value_record_lists_every_metric() {
        let gt = row(&[0.0, 1.0, 2.0]);
        let est = row(&[0.1, 1.0, 2.5]);
        let rep = evaluate(&est, &gt, &IrlsConfig::default()).unwrap();
        let kv = rep.to_key_values();
        for key in [
            "mae=",
            "rmse=",
            "d05=",
            "d1=",
            "d2=",
            "ai1=",
            "ai2=",
            "pixel_count=3",
        ] {
            assert!(kv.contains(key), "{key}");
        }
    }

    mod props {
        use super::*;
        use proptest::collection::vec;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn report_ordering(pairs in vec((-5.0f64..5.0, -5.0f64..5.0), 2..64)) {
                let est = row(&pairs.iter().map(|p| p.0).collect::<Vec<_>>());
                let gt = row(&pairs.iter().map(|p| p.1).collect::<Vec<_>>());
                let m = basic_metrics(&est, &gt).unwrap();
                prop_assert!(m.d05 >= m.d1 && m.d1 >= m.d2);
                prop_assert!(m.rmse + 1e-12 >= m.mae);
                let neg = |d: &DisparityMap| row(&d.values.iter().map(|v| -v).collect::<Vec<_>>());
                prop_assert_eq!(m, basic_metrics(&neg(&est), &neg(&gt)).unwrap());
            }

            #[test]
            fn ai_is_affine_invariant(
                pairs in vec((-5.0f64..5.0, -5.0f64..5.0), 8..64),
                c in prop_oneof![-3.0f64..-0.2, 0.2f64..3.0],
                k in -4.0f64..4.0,
            ) {
                let e: Vec<f64> = pairs.iter().map(|p| p.0).collect();
                let g: Vec<f64> = pairs.iter().map(|p| p.1).collect();
                let e2: Vec<f64> = e.iter().map(|v| c * v + k).collect();
                for q in [1u8, 2] {
                    let a = affine_fit(&e, &g, q, &IrlsConfig::default()).unwrap();
                    let b = affine_fit(&e2, &g, q, &IrlsConfig::default()).unwrap();
                    prop_assert!((a.value - b.value).abs() < 1e-9, "q={} {} vs {}", q, a.value, b.value);
                }
            }
        }
    }
}
