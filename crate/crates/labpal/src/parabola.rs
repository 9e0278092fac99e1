//! Pure 1-D line-search mathematics: three-point parabolic fitting,
//! minimizer extraction, step proposals with overshoot adaptation, the
//! Armijo/Wolfe-constant relation and fit-quality metrics.
//!
//! All operations are pure and stateless.

use crate::error::{Error, Result};

/// Exactly three `(step size, loss)` measurements along a line, with the
/// number of samples that contributed to each loss mean.
#[derive(Debug, Clone, PartialEq)]
pub struct LineProbe {
    points: [(f64, f64); 3],
    effective_batch_size: usize,
}

impl LineProbe {
    /// Points must be sorted by ascending, pairwise-distinct `s`.
    pub fn new(points: [(f64, f64); 3], effective_batch_size: usize) -> Result<Self> {
        let [s0, s1, s2] = [points[0].0, points[1].0, points[2].0];
        if !(s0 < s1 && s1 < s2) {
            return Err(Error::BadAbscissae { s0, s1, s2 });
        }
        for &(s, loss) in &points {
            if !loss.is_finite() || !s.is_finite() {
                return Err(Error::NonFiniteProbeLoss { s });
            }
        }
        Ok(Self {
            points,
            effective_batch_size,
        })
    }

    pub fn points(&self) -> &[(f64, f64); 3] {
        &self.points
    }

    pub fn effective_batch_size(&self) -> usize {
        self.effective_batch_size
    }
}

/// Coefficients of `l(s) ~ a s^2 + b s + c`. Positive curvature is
/// checked at use sites, not stored.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Parabola {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl Parabola {
    pub fn eval(&self, s: f64) -> f64 {
        (self.a * s + self.b) * s + self.c
    }

    pub fn slope_at_origin(&self) -> f64 {
        self.b
    }
}

/// Why a proposal deviates from the plain `alpha * s_min` step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FallbackReason {
    NonpositiveCurvature,
    NegativeStep,
    Clamped,
}

impl FallbackReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            FallbackReason::NonpositiveCurvature => "nonpositive-curvature",
            FallbackReason::NegativeStep => "negative-step",
            FallbackReason::Clamped => "clamped",
        }
    }
}

/// Learning rate / update step derived from one fitted parabola.
///
/// For an accepted, unclamped proposal `learning_rate * ||g|| ==
/// update_step == alpha * s_min` holds to within float rounding.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepProposal {
    /// Step to the fitted parabola minimum; `None` when no usable fit
    /// existed yet (maximal exploratory step).
    pub s_min: Option<f64>,
    /// Step per unit of raw gradient.
    pub learning_rate: f64,
    /// Absolute step along the unit direction.
    pub update_step: f64,
    pub accepted: bool,
    pub fallback: Option<FallbackReason>,
}

/// Interpolating quadratic through the three probe points, in Newton
/// (divided difference) form. The paper's abscissae (0, 1e-4, 1e-2) give
/// a Vandermonde system with condition number above 1e8; divided
/// differences are exact on quadratic data and stable here.
pub fn fit_parabola(probe: &LineProbe) -> Result<Parabola> {
    let [(s0, l0), (s1, l1), (s2, l2)] = *probe.points();
    let d01 = (l1 - l0) / (s1 - s0);
    let d12 = (l2 - l1) / (s2 - s1);
    let a = (d12 - d01) / (s2 - s0);
    let b = d01 - a * (s0 + s1);
    let c = l0 - (a * s0 + b) * s0;
    if !(a.is_finite() && b.is_finite() && c.is_finite()) {
        return Err(Error::Internal(format!(
            "non-finite fit coefficients ({a}, {b}, {c})"
        )));
    }
    Ok(Parabola { a, b, c })
}

/// Step size to the minimum, `-b / 2a`. Fails on nonpositive curvature;
/// the caller decides the fallback.
pub fn parabola_min(p: &Parabola) -> Result<f64> {
    if p.a <= 0.0 {
        return Err(Error::NonpositiveCurvature { a: p.a });
    }
    Ok(-p.b / (2.0 * p.a))
}

/// Derives the next learning rate / update step from a fitted parabola.
///
/// A usable fit (`a > 0`, `s_min > 0`) yields `update_step =
/// min(alpha * s_min, max_step)` and `learning_rate = update_step /
/// grad_norm`. Degenerate fits fall back to the previous proposal, or to
/// a maximal exploratory step when none exists; training never aborts on
/// a bad fit.
pub fn propose_step(
    p: &Parabola,
    grad_norm: f64,
    alpha: f64,
    max_step: f64,
    previous: Option<&StepProposal>,
) -> StepProposal {
    assert!(alpha >= 1.0, "alpha must be >= 1");
    assert!(max_step > 0.0, "max_step must be positive");
    assert!(grad_norm > 0.0, "grad_norm must be positive");

    let fallback = |reason: FallbackReason| match previous {
        Some(prev) => StepProposal {
            s_min: prev.s_min,
            learning_rate: prev.learning_rate,
            update_step: prev.update_step,
            accepted: false,
            fallback: Some(reason),
        },
        None => StepProposal {
            s_min: None,
            learning_rate: max_step / grad_norm,
            update_step: max_step,
            accepted: false,
            fallback: Some(reason),
        },
    };

    let s_min = match parabola_min(p) {
        Ok(s) => s,
        Err(_) => return fallback(FallbackReason::NonpositiveCurvature),
    };
    if s_min <= 0.0 {
        return fallback(FallbackReason::NegativeStep);
    }

    let raw = alpha * s_min;
    let clamped = raw > max_step;
    let update_step = if clamped { max_step } else { raw };
    StepProposal {
        s_min: Some(s_min),
        learning_rate: update_step / grad_norm,
        update_step,
        accepted: true,
        fallback: clamped.then_some(FallbackReason::Clamped),
    }
}

/// First Wolfe (Armijo) constant implied by the overshoot factor under
/// the parabolic model: `w1 = -alpha/2 + 1`. Defined for `alpha` in
/// [1, 2).
pub fn wolfe_constant_from_alpha(alpha: f64) -> Result<f64> {
    if !(1.0..2.0).contains(&alpha) {
        return Err(Error::AlphaOutOfRange { alpha });
    }
    Ok(1.0 - alpha / 2.0)
}

/// Mean absolute distance between the parabola and a set of measured
/// `(s, loss)` points.
pub fn mean_abs_fit_error(p: &Parabola, samples: &[(f64, f64)]) -> f64 {
    assert!(!samples.is_empty(), "fit error needs at least one sample");
    let total: f64 = samples
        .iter()
        .map(|&(s, loss)| (p.eval(s) - loss).abs())
        .sum();
    total / samples.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn probe(points: [(f64, f64); 3]) -> LineProbe {
        LineProbe::new(points, 1).unwrap()
    }

    #[test]
    fn fits_hand_checked_parabola() {
        let p = fit_parabola(&probe([(0.0, 3.0), (1.0, 2.0), (2.0, 3.0)])).unwrap();
        assert_eq!(p.a, 1.0);
        assert_eq!(p.b, -2.0);
        assert_eq!(p.c, 3.0);
    }

    #[test]
    fn constant_data_fits_flat_line() {
        let c = 0.37;
        let p = fit_parabola(&probe([(0.0, c), (0.5, c), (1.0, c)])).unwrap();
        assert_eq!(p.a, 0.0);
        assert_eq!(p.b, 0.0);
        assert_eq!(p.c, c);
    }

    #[test]
    fn roundtrip_at_paper_abscissae() {
        let truth = Parabola {
            a: 2.0,
            b: 0.5,
            c: 1.0,
        };
        let pts = [0.0, 1e-4, 1e-2].map(|s| (s, truth.eval(s)));
        let fit = fit_parabola(&probe(pts)).unwrap();
        assert!((fit.a - truth.a).abs() <= 1e-6 * truth.a.abs());
        assert!((fit.b - truth.b).abs() <= 1e-6 * truth.b.abs());
        assert!((fit.c - truth.c).abs() <= 1e-6 * truth.c.abs());
    }

    #[test]
    fn duplicate_abscissae_rejected() {
        assert!(LineProbe::new([(0.0, 1.0), (0.0, 2.0), (1.0, 3.0)], 1).is_err());
        assert!(LineProbe::new([(1.0, 1.0), (0.5, 2.0), (2.0, 3.0)], 1).is_err());
    }

    #[test]
    fn non_finite_probe_loss_rejected() {
        assert!(LineProbe::new([(0.0, f64::NAN), (0.5, 2.0), (1.0, 3.0)], 1).is_err());
    }

    #[test]
    fn minimizer_of_fitted_parabola() {
        assert_eq!(
            parabola_min(&Parabola {
                a: 1.0,
                b: -2.0,
                c: 0.0
            })
            .unwrap(),
            1.0
        );
        assert_eq!(
            parabola_min(&Parabola {
                a: 1.0,
                b: 0.0,
                c: 5.0
            })
            .unwrap(),
            0.0
        );
        assert!(matches!(
            parabola_min(&Parabola {
                a: -1.0,
                b: 1.0,
                c: 0.0
            }),
            Err(Error::NonpositiveCurvature { .. })
        ));
    }

    #[test]
    fn proposal_arithmetic() {
        // s_min = 0.02 from a = 25, b = -1.
        let p = Parabola {
            a: 25.0,
            b: -1.0,
            c: 0.0,
        };
        let proposal = propose_step(&p, 4.0, 1.8, 1.0, None);
        assert!(proposal.accepted);
        assert!(proposal.fallback.is_none());
        assert!((proposal.update_step - 0.036).abs() < 1e-15);
        assert!((proposal.learning_rate - 0.009).abs() < 1e-15);
    }

    #[test]
    fn alpha_one_is_identity() {
        let p = Parabola {
            a: 3.0,
            b: -0.6,
            c: 0.2,
        };
        let s_min = parabola_min(&p).unwrap();
        let proposal = propose_step(&p, 2.0, 1.0, 10.0, None);
        assert_eq!(proposal.update_step, s_min);
    }

    #[test]
    fn degenerate_fit_reuses_previous_proposal() {
        let good = StepProposal {
            s_min: Some(0.02),
            learning_rate: 0.01,
            update_step: 0.04,
            accepted: true,
            fallback: None,
        };
        let concave = Parabola {
            a: -0.5,
            b: 1.0,
            c: 0.0,
        };
        let proposal = propose_step(&concave, 4.0, 1.8, 1.0, Some(&good));
        assert_eq!(proposal.learning_rate, 0.01);
        assert_eq!(proposal.update_step, 0.04);
        assert!(!proposal.accepted);
        assert_eq!(proposal.fallback, Some(FallbackReason::NonpositiveCurvature));
    }

    #[test]
    fn degenerate_fit_without_history_explores_max_step() {
        let concave = Parabola {
            a: -0.5,
            b: 1.0,
            c: 0.0,
        };
        let proposal = propose_step(&concave, 2.0, 1.8, 1.0, None);
        assert_eq!(proposal.update_step, 1.0);
        assert_eq!(proposal.learning_rate, 0.5);
        assert!(proposal.s_min.is_none());
    }

    #[test]
    fn negative_minimizer_falls_back() {
        let uphill = Parabola {
            a: 1.0,
            b: 2.0,
            c: 0.0,
        };
        let proposal = propose_step(&uphill, 2.0, 1.8, 1.0, None);
        assert_eq!(proposal.fallback, Some(FallbackReason::NegativeStep));
    }

    #[test]
    fn clamp_marks_proposal_but_accepts() {
        let p = Parabola {
            a: 0.5,
            b: -10.0,
            c: 0.0,
        }; // s_min = 10
        let proposal = propose_step(&p, 2.0, 1.8, 1.0, None);
        assert!(proposal.accepted);
        assert_eq!(proposal.fallback, Some(FallbackReason::Clamped));
        assert_eq!(proposal.update_step, 1.0);
    }

    #[test]
    fn wolfe_constant_values() {
        assert!((wolfe_constant_from_alpha(1.8).unwrap() - 0.1).abs() < 1e-15);
        assert!((wolfe_constant_from_alpha(1.0).unwrap() - 0.5).abs() < 1e-15);
        assert!(matches!(
            wolfe_constant_from_alpha(2.0),
            Err(Error::AlphaOutOfRange { .. })
        ));
        assert!(wolfe_constant_from_alpha(0.9).is_err());
    }

    #[test]
    fn armijo_holds_with_equality_at_adapted_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for alpha in [1.0, 1.2, 1.5, 1.8, 1.9] {
            let w1 = wolfe_constant_from_alpha(alpha).unwrap();
            assert!((w1 - (1.0 - alpha / 2.0)).abs() < 1e-15);
            for _ in 0..200 {
                let p = Parabola {
                    a: rng.gen_range(1e-3..1e3),
                    b: rng.gen_range(-1e2..-1e-3),
                    c: rng.gen_range(-10.0..10.0),
                };
                let s = alpha * parabola_min(&p).unwrap();
                let lhs = p.eval(s);
                let rhs = p.eval(0.0) + s * p.slope_at_origin() * w1;
                let scale = lhs.abs().max(rhs.abs()).max(1.0);
                assert!(
                    (lhs - rhs).abs() <= 1e-9 * scale,
                    "alpha {alpha}: {lhs} vs {rhs}"
                );
            }
        }
    }

    #[test]
    fn fit_error_metrics() {
        let p = Parabola {
            a: 1.5,
            b: -0.4,
            c: 2.0,
        };
        let own: Vec<(f64, f64)> = (0..20).map(|i| i as f64 * 0.1).map(|s| (s, p.eval(s))).collect();
        assert!(mean_abs_fit_error(&p, &own) <= 1e-12);

        let flat = Parabola {
            a: 0.0,
            b: 0.0,
            c: 1.0,
        };
        let offset: Vec<(f64, f64)> = (0..10).map(|i| (i as f64, 2.0)).collect();
        assert_eq!(mean_abs_fit_error(&flat, &offset), 1.0);
    }

    #[test]
    fn fit_error_of_exact_quadratic_on_dense_grid() {
        let truth = Parabola {
            a: 4.2,
            b: -1.3,
            c: 0.9,
        };
        let pts = [0.0, 1e-4, 1e-2].map(|s| (s, truth.eval(s)));
        let fitted = fit_parabola(&probe(pts)).unwrap();
        let grid: Vec<(f64, f64)> = (0..167)
            .map(|i| {
                let s = i as f64 * (0.62 / 166.0);
                (s, truth.eval(s))
            })
            .collect();
        let mae = mean_abs_fit_error(&fitted, &grid);
        assert!(mae <= 1e-9, "MAE {mae}");
    }

    #[test]
    fn update_step_monotone_in_alpha_until_clamp() {
        let p = Parabola {
            a: 2.0,
            b: -1.4,
            c: 0.0,
        };
        let mut last = 0.0;
        for i in 0..=18 {
            let alpha = 1.0 + 0.05 * i as f64;
            let proposal = propose_step(&p, 1.0, alpha, 0.5, None);
            assert!(proposal.update_step >= last);
            assert!(proposal.update_step <= 0.5);
            last = proposal.update_step;
        }
    }

    #[test]
    fn minimizer_is_optimal_among_random_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = Parabola {
            a: 0.8,
            b: -2.0,
            c: 0.3,
        };
        let s_min = parabola_min(&p).unwrap();
        let best = p.eval(s_min);
        for _ in 0..1000 {
            let s = rng.gen_range(-100.0..100.0);
            assert!(p.eval(s) >= best - 1e-12);
        }
    }
}
