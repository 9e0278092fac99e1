//! Property tests for the 1-D fitting machinery.

use labpal::{fit_parabola, parabola_min, propose_step, LineProbe, Parabola};
use proptest::prelude::*;

fn coefficient() -> impl Strategy<Value = f64> {
    prop_oneof![-1e3..1e3f64, -1.0..1.0f64]
}

proptest! {
    /// Fitting an evaluated parabola recovers its coefficients. Spacing
    /// is kept at >= 0.01 so the recovery stays within 1e-6 of the true
    /// coefficients at f64 precision (tighter spacings condition the
    /// second divided difference past that tolerance for offsets near
    /// 1e3).
    #[test]
    fn fit_recovers_coefficients(
        a in coefficient(),
        b in coefficient(),
        c in coefficient(),
        s0 in -1.0..1.0f64,
        h1 in 0.01..2.0f64,
        h2 in 0.01..2.0f64,
    ) {
        let truth = Parabola { a, b, c };
        let abscissae = [s0, s0 + h1, s0 + h1 + h2];
        let probe = LineProbe::new(abscissae.map(|s| (s, truth.eval(s))), 1).unwrap();
        let fit = fit_parabola(&probe).unwrap();
        for (recovered, expected) in [(fit.a, a), (fit.b, b), (fit.c, c)] {
            let tol = 1e-6 * expected.abs().max(1.0);
            prop_assert!(
                (recovered - expected).abs() <= tol,
                "recovered {recovered} vs {expected}"
            );
        }
    }

    /// The extracted minimizer beats any other point on an upward
    /// parabola.
    #[test]
    fn minimizer_is_globally_optimal(
        a in 1e-3..1e3f64,
        b in coefficient(),
        c in coefficient(),
        probes in prop::collection::vec(-1e3..1e3f64, 32),
    ) {
        let p = Parabola { a, b, c };
        let s_min = parabola_min(&p).unwrap();
        let best = p.eval(s_min);
        for s in probes {
            prop_assert!(p.eval(s) >= best - 1e-9 * best.abs().max(1.0));
        }
    }

    /// For accepted unclamped proposals the learning rate times the
    /// gradient norm reproduces the adapted step exactly.
    #[test]
    fn learning_rate_times_grad_norm_is_update_step(
        a in 1e-3..1e3f64,
        s_min in 1e-6..10.0f64,
        grad_norm in 1e-6..1e3f64,
        alpha in 1.0..2.0f64,
    ) {
        let b = -2.0 * a * s_min;
        let p = Parabola { a, b, c: 0.0 };
        let proposal = propose_step(&p, grad_norm, alpha, 1e9, None);
        prop_assert!(proposal.accepted);
        prop_assert!(proposal.fallback.is_none());
        let lhs = proposal.learning_rate * grad_norm;
        prop_assert!(
            (lhs - proposal.update_step).abs() <= 1e-12 * proposal.update_step,
            "{lhs} vs {}",
            proposal.update_step
        );
    }

    /// The adapted step grows with alpha until the clamp binds, then
    /// stays put.
    #[test]
    fn update_step_monotone_in_alpha(
        a in 1e-3..1e2f64,
        s_min in 1e-4..10.0f64,
        max_step in 0.1..5.0f64,
    ) {
        let b = -2.0 * a * s_min;
        let p = Parabola { a, b, c: 0.0 };
        let mut last = 0.0;
        for i in 0..20 {
            let alpha = 1.0 + 0.999 * i as f64 / 19.0;
            let proposal = propose_step(&p, 1.0, alpha, max_step, None);
            prop_assert!(proposal.update_step + 1e-15 >= last);
            prop_assert!(proposal.update_step <= max_step);
            last = proposal.update_step;
        }
    }
}
