use proptest::prelude::*;

use skycast::dataset::{split_by, SplitSpec};
use skycast::imaging::{center_closeup, downscale, spin_transform};
use skycast::model::gradcheck::synthetic_example;
use skycast::model::{loss_value, predict, Heads, Mode, ModelConfig, ParameterStore};
use skycast::Grid64;

fn image(w: usize, h: usize, values: &[f64], holes: &[bool]) -> Grid64 {
    let g = Grid64::new(w, h, 1, values[..w * h].to_vec(), (0.0, 1.0)).unwrap();
    g.with_mask(holes[..w * h].iter().map(|&m| !m).collect()).unwrap()
}

fn within_observed(input: &Grid64, out: &Grid64) -> Result<(), TestCaseError> {
    let Some((lo, hi)) = input.observed_range() else { return Ok(()) };
    for y in 0..out.height() {
        for x in 0..out.width() {
            if out.is_valid(x, y) {
                let v = out.get(0, x, y);
                prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12, "{v} outside [{lo}, {hi}]");
            }
        }
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn resamplers_are_convex(
        values in proptest::collection::vec(0.0f64..1.0, 24 * 24),
        holes in proptest::collection::vec(proptest::bool::weighted(0.2), 24 * 24),
        factor in 2usize..=4,
        cx in 0.0f64..23.0,
        cy in 0.0f64..23.0,
    ) {
        let img = image(24, 24, &values, &holes);
        within_observed(&img, &downscale(&img, factor).unwrap())?;
        within_observed(&img, &center_closeup(&img).unwrap())?;
        within_observed(&img, &spin_transform(&img, (cx, cy), 16, 24).unwrap())?;
    }

    #[test]
    fn resamplers_preserve_constants(v in 0.0f64..1.0, factor in 2usize..=4) {
        let img = Grid64::filled(24, 24, 1, v);
        for out in [downscale(&img, factor).unwrap(), center_closeup(&img).unwrap()] {
            for &o in out.values() {
                prop_assert!((o - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn fully_masked_stencil_is_masked(block in 0usize..4) {
        // A masked 6x6 block covers the whole stencil of the central output
        // pixel of a factor-2 downscale.
        let mut mask = vec![true; 24 * 24];
        let (ox, oy) = (block * 6, 9);
        for y in oy..oy + 6 {
            for x in ox..ox + 6 {
                mask[y * 24 + x] = false;
            }
        }
        let img = Grid64::filled(24, 24, 1, 0.5).with_mask(mask).unwrap();
        let out = downscale(&img, 2).unwrap();
        prop_assert!(!out.is_valid(ox / 2 + 1, oy / 2 + 1));
    }

    #[test]
    fn rotation_by_quarter_turns_rolls_spin_columns(seed in 0u64..1000, quarters in 1usize..4) {
        let (a, b) = (0.05 + (seed % 7) as f64 * 0.02, 0.04 + (seed % 5) as f64 * 0.03);
        let n = 33;
        let img = Grid64::from_fn(n, n, |x, y| 0.5 + 0.3 * (a * x as f64 + seed as f64).sin() * (b * y as f64).cos());
        let mut rot = img.clone();
        for _ in 0..quarters {
            let prev = rot.clone();
            rot = Grid64::from_fn(n, n, |x, y| prev.get(0, y, n - 1 - x));
        }
        let bins = 32;
        let p0 = spin_transform(&img, (16.0, 16.0), bins, bins).unwrap();
        let p1 = spin_transform(&rot, (16.0, 16.0), bins, bins).unwrap();
        let shift = quarters * bins / 4;
        for r in 0..bins {
            for c in 0..bins {
                prop_assert!((p1.get(0, c, r) - p0.get(0, (c + bins - shift) % bins, r)).abs() < 1e-3);
            }
        }
    }

    #[test]
    fn splits_never_share_a_timestamp(ts in proptest::collection::vec(1_483_228_800i64..1_577_836_800, 1..300)) {
        let spec = SplitSpec::new(2019);
        let parts = split_by(ts.clone(), &spec, |t| *t).unwrap();
        let mut all: Vec<i64> = parts.train.iter().chain(&parts.val).chain(&parts.test).copied().collect();
        prop_assert_eq!(all.len() + parts.unassigned, ts.len());
        let days = |v: &[i64]| v.iter().map(|t| t.div_euclid(86_400)).collect::<std::collections::BTreeSet<_>>();
        prop_assert!(days(&parts.val).is_disjoint(&days(&parts.test)));
        prop_assert!(days(&parts.train).is_disjoint(&days(&parts.val)));
        prop_assert!(days(&parts.train).is_disjoint(&days(&parts.test)));
        all.sort();
        let mut sorted = ts.clone();
        sorted.retain(|&t| spec.assign(t).is_some());
        sorted.sort();
        prop_assert_eq!(all, sorted);
    }
}

fn tiny(mode: Mode) -> ModelConfig {
    ModelConfig {
        input_resolution: 8,
        encoder_widths: vec![2, 3, 4],
        decoder_widths: vec![3, 2],
        latent_width: 4,
        bin_count: 12,
        mode,
        heads: Heads { cloud_map: true, scalar: true, distribution: true },
        ..ModelConfig::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn heads_are_normalised_and_bounded(seed in 0u64..10_000, scale in 0.1f64..20.0) {
        let cfg = ModelConfig { seed, ..tiny(Mode::Probabilistic) };
        let params = ParameterStore::<f64>::init(&cfg).unwrap();
        let (mut input, _) = synthetic_example(&cfg, seed ^ 0x55).unwrap();
        for t in input.sky.iter_mut().chain(input.sat.iter_mut()) {
            t.data.iter_mut().for_each(|v| *v *= scale);
        }
        let f = predict(&params, &input, &cfg, (0.0, 1200.0)).unwrap();
        for h in &f.horizons {
            let d = h.dist.as_ref().unwrap();
            let total: f64 = d.probs().iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-6);
            prop_assert!(d.probs().iter().all(|&p| p >= 0.0));
            let map = h.ci_map.as_ref().unwrap();
            prop_assert!(map.values().iter().all(|&v| (0.0..=1.0).contains(&v)));
            prop_assert!(h.ghi_hat.unwrap() >= 0.0);
        }
    }

    #[test]
    fn loss_grows_with_alpha(seed in 0u64..10_000, a in 0.0f64..100.0, step in 0.01f64..100.0) {
        for mode in [Mode::Deterministic, Mode::Probabilistic] {
            let base = tiny(mode);
            let params = ParameterStore::<f64>::init(&base).unwrap();
            let (input, targets) = synthetic_example(&base, seed).unwrap();
            let lo = loss_value(&params, &input, &targets, &ModelConfig { alpha: a, ..base.clone() }).unwrap();
            let hi = loss_value(&params, &input, &targets, &ModelConfig { alpha: a + step, ..base.clone() }).unwrap();
            prop_assert!(lo.image > 0.0);
            prop_assert!(hi.total > lo.total);
        }
    }
}
