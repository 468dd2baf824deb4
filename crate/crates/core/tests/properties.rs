use proptest::prelude::*;

use qburst::budget::{total_budget, CoefficientKind, ErrorCombination, SourceEntry};
use qburst::discrimination::{rotate, rotation_angle, BinaryTrace};
use qburst::protocol::Records;
use qburst::rates::{available_time, impact_probability, weighted_linear_fit, FitPoint, TimeBudget};
use qburst::tracefile::{decode_bytes, encode_trace, TraceFile};
use qburst::trigger::{scan_triggers, TriggerConfig};

/// Quadratic reference scanner written directly from the trigger rule.
fn brute_force(bits: &[u8], cfg: &TriggerConfig) -> Vec<(usize, usize, usize)> {
    let mut out = Vec::new();
    let mut armed = 0;
    for t in cfg.lead()..bits.len() {
        if t < armed || t + cfg.signal_post > bits.len() {
            continue;
        }
        if t + cfg.n_consecutive <= bits.len() && bits[t..t + cfg.n_consecutive].iter().all(|&b| b == 0) {
            let start = t - cfg.lead();
            let zeros = |r: std::ops::Range<usize>| bits[r].iter().filter(|&&b| b == 0).count();
            out.push((t, zeros(start..start + cfg.control_span), zeros(start + cfg.control_span..t + cfg.signal_post)));
            armed = t + cfg.dead_time + 1;
        }
    }
    out
}

/// Alternating runs of ones and zeros with random lengths.
fn runs() -> impl Strategy<Value = Vec<u8>> {
    prop::collection::vec((1usize..30, 0usize..12), 5..80).prop_map(|blocks| {
        let mut bits = Vec::new();
        for (ones, zeros) in blocks {
            bits.extend(std::iter::repeat_n(1u8, ones));
            bits.extend(std::iter::repeat_n(0u8, zeros));
        }
        bits
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn scanner_matches_brute_force(bits in runs(), n in 2usize..8) {
        let cfg = TriggerConfig { n_consecutive: n, ..TriggerConfig::default() };
        let got: Vec<_> = scan_triggers(&BinaryTrace::new(0, bits.clone()), &cfg)
            .unwrap()
            .into_iter()
            .map(|e| (e.t, e.n_control, e.n_signal))
            .collect();
        prop_assert_eq!(got, brute_force(&bits, &cfg));
    }

    #[test]
    fn rotation_is_an_isometry(
        g in prop::array::uniform2(-5.0f64..5.0),
        e in prop::array::uniform2(-5.0f64..5.0),
        p in prop::array::uniform2(-5.0f64..5.0),
    ) {
        prop_assume!((g[0] - e[0]).hypot(g[1] - e[1]) > 1e-3);
        let theta = rotation_angle(g, e).unwrap();
        let (rg, re, rp) = (rotate(g, theta), rotate(e, theta), rotate(p, theta));
        let d = |a: [f64; 2], b: [f64; 2]| (a[0] - b[0]).hypot(a[1] - b[1]);
        prop_assert!((d(rg, rp) - d(g, p)).abs() < 1e-9);
        prop_assert!((d(rg, re) - d(g, e)).abs() < 1e-9);
        // g→e lands on +I
        prop_assert!((re[1] - rg[1]).abs() < 1e-9);
        prop_assert!(re[0] > rg[0]);
    }

    #[test]
    fn budget_is_linear_and_order_free(
        rows in prop::collection::vec((1e-4f64..1.0, 0.0f64..0.1, 0.1f64..5.0, 0.0f64..1.0), 1..6),
        lambda in 0.1f64..10.0,
        rot in 0usize..6,
    ) {
        let build = |scale: f64| -> Vec<SourceEntry> {
            rows.iter()
                .enumerate()
                .map(|(i, &(c, ce, d, de))| {
                    SourceEntry::scaled(format!("s{i}"), CoefficientKind::Flux, (c * scale, ce * scale), (d, de))
                })
                .collect()
        };
        for combine in [ErrorCombination::Linear, ErrorCombination::Quadrature] {
            let base = total_budget(&build(1.0), combine).unwrap();
            let scaled = total_budget(&build(lambda), combine).unwrap();
            prop_assert!((scaled.rate - lambda * base.rate).abs() <= 1e-12 * scaled.rate.abs().max(1.0));
            prop_assert!((scaled.err - lambda * base.err).abs() <= 1e-12 * scaled.err.abs().max(1.0));

            let mut shuffled = build(1.0);
            let k = rot % shuffled.len();
            shuffled.rotate_left(k);
            let again = total_budget(&shuffled, combine).unwrap();
            prop_assert!((again.rate - base.rate).abs() <= 1e-12);
            prop_assert!((again.err - base.err).abs() <= 1e-12);
        }
    }

    #[test]
    fn weighted_residuals_are_orthogonal(
        pts in prop::collection::vec((0.0f64..100.0, -5.0f64..5.0, 0.1f64..2.0), 3..20),
    ) {
        let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
        let spread = xs.iter().cloned().fold(f64::MIN, f64::max) - xs.iter().cloned().fold(f64::MAX, f64::min);
        prop_assume!(spread > 1.0);
        let points: Vec<FitPoint> = pts.iter().copied().map(FitPoint::from).collect();
        let fit = weighted_linear_fit(&points, false).unwrap();
        let (mut sr, mut sxr, mut scale) = (0.0, 0.0, 0.0);
        for p in &points {
            let w = 1.0 / (p.sigma * p.sigma);
            let r = p.y - fit.eval(p.x);
            sr += w * r;
            sxr += w * r * p.x;
            scale += w * (p.y.abs() + 1.0) * (p.x + 1.0);
        }
        prop_assert!(sr.abs() <= 1e-9 * scale);
        prop_assert!(sxr.abs() <= 1e-9 * scale);

        let through = weighted_linear_fit(&points, true).unwrap();
        let sxr0: f64 = points.iter().map(|p| (p.y - through.p1 * p.x) * p.x / (p.sigma * p.sigma)).sum();
        prop_assert!(sxr0.abs() <= 1e-9 * scale);
    }

    #[test]
    fn equal_weights_reduce_to_ordinary_least_squares(
        pts in prop::collection::vec((0.0f64..50.0, -5.0f64..5.0), 3..20),
        sigma in 0.1f64..3.0,
    ) {
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        prop_assume!(sxx > 1.0);
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let slope = sxy / sxx;
        let points: Vec<FitPoint> = pts.iter().map(|&(x, y)| (x, y, sigma).into()).collect();
        let fit = weighted_linear_fit(&points, false).unwrap();
        prop_assert!((fit.p1 - slope).abs() < 1e-9 * (1.0 + slope.abs()));
        prop_assert!((fit.p0 - (my - slope * mx)).abs() < 1e-8 * (1.0 + my.abs()));
        prop_assert!((fit.p1_err - sigma / sxx.sqrt()).abs() < 1e-9 * fit.p1_err);
    }

    #[test]
    fn impact_probability_round_trip(r in 1e-6f64..10.0, p in 1e-9f64..0.99) {
        let TimeBudget::Bounded(t) = available_time(r, p).unwrap() else {
            return Err(TestCaseError::fail("finite rate must give a bounded time"));
        };
        let back = impact_probability(r, t).unwrap();
        prop_assert!(((back - p) / p).abs() < 1e-12);
    }

    #[test]
    fn trace_file_round_trip(
        iq in prop::collection::vec(prop::array::uniform2(any::<f32>()), 0..300),
        bits in prop::collection::vec(0u8..2, 0..300),
        ns in 1u32..1_000_000,
    ) {
        for records in [Records::Iq(iq.clone()), Records::Binary(bits.clone())] {
            let f = TraceFile { sampling_period_ns: ns, records };
            let mut buf = Vec::new();
            encode_trace(&mut buf, &f).unwrap();
            let back = decode_bytes(&buf).unwrap();
            prop_assert_eq!(back.sampling_period_ns, ns);
            // compare bit patterns so NaN payloads count as equal
            match (&back.records, &f.records) {
                (Records::Iq(a), Records::Iq(b)) => {
                    let bits = |v: &[[f32; 2]]| v.iter().flat_map(|p| [p[0].to_bits(), p[1].to_bits()]).collect::<Vec<_>>();
                    prop_assert_eq!(bits(a), bits(b));
                }
                (a, b) => prop_assert_eq!(a, b),
            }
        }
    }
}

#[test]
fn zero_rate_has_unbounded_time() {
    assert_eq!(available_time(0.0, 1e-3).unwrap(), TimeBudget::Unbounded);
    assert_eq!(impact_probability(0.0, 1e9).unwrap(), 0.0);
}
