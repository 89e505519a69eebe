use skycast::model::gradcheck::{check_model, check_op, synthetic_example};
use skycast::model::{
    forward, forward_sample, gradients, loss, predict, predict_batch, Heads, ImageLoss, Inputs, Mode, ModelConfig, ParameterStore, Tape,
    Tensor,
};
use skycast::Error;

const TOL: f64 = 1e-3;
const STEP: f64 = 1e-3;

fn tiny(mode: Mode, alpha: f64, image_loss: ImageLoss) -> ModelConfig {
    ModelConfig {
        input_resolution: 8,
        encoder_widths: vec![2, 3, 4],
        decoder_widths: vec![3, 2],
        latent_width: 4,
        bin_count: 12,
        mode,
        alpha,
        image_loss,
        seed: 3,
        ..ModelConfig::default()
    }
}

fn assert_grad(name: &str, r: skycast::model::gradcheck::GradCheckReport) {
    assert!(r.passes(TOL), "{name}: max relative error {} at {:?} ({} checked)", r.max_rel_error, r.worst, r.checked);
}

#[test]
fn layer_gradients() {
    assert_grad(
        "conv stride 2",
        check_op(&[vec![2, 7, 6], vec![3, 2, 3, 3], vec![3]], 1, STEP, |t, v| t.conv2d(v[0], v[1], v[2], 2, 1)).unwrap(),
    );
    assert_grad(
        "conv stride 1",
        check_op(&[vec![3, 4, 4], vec![2, 3, 3, 3], vec![2]], 2, STEP, |t, v| t.conv2d(v[0], v[1], v[2], 1, 1)).unwrap(),
    );
    assert_grad(
        "transposed conv",
        check_op(&[vec![3, 3, 2], vec![3, 2, 2, 2], vec![2]], 3, STEP, |t, v| t.conv_t2d(v[0], v[1], v[2], 2)).unwrap(),
    );
    assert_grad(
        "linear",
        check_op(&[vec![5], vec![4, 5], vec![4]], 4, STEP, |t, v| t.linear(v[0], v[1], v[2])).unwrap(),
    );
    let s = vec![vec![2, 3, 3], vec![2, 3, 3]];
    assert_grad("add", check_op(&s, 5, STEP, |t, v| t.add(v[0], v[1])).unwrap());
    assert_grad("sub", check_op(&s, 6, STEP, |t, v| t.sub(v[0], v[1])).unwrap());
    assert_grad("mul", check_op(&s, 7, STEP, |t, v| t.mul(v[0], v[1])).unwrap());
    assert_grad("concat", check_op(&[vec![1, 3, 3], vec![2, 3, 3]], 8, STEP, |t, v| t.concat(&[v[0], v[1]])).unwrap());
    let one = vec![vec![3, 2, 2]];
    assert_grad("sigmoid", check_op(&one, 9, STEP, |t, v| Ok(t.sigmoid(v[0]))).unwrap());
    assert_grad("tanh", check_op(&one, 10, STEP, |t, v| Ok(t.tanh(v[0]))).unwrap());
    assert_grad("silu", check_op(&one, 11, STEP, |t, v| Ok(t.silu(v[0]))).unwrap());
    assert_grad("softplus", check_op(&one, 12, STEP, |t, v| Ok(t.softplus(v[0]))).unwrap());
    assert_grad("scale", check_op(&one, 13, STEP, |t, v| Ok(t.scale(v[0], -2.5))).unwrap());
    assert_grad("mean pool", check_op(&one, 14, STEP, |t, v| t.mean_pool(v[0])).unwrap());
    assert_grad("log softmax", check_op(&[vec![7]], 15, STEP, |t, v| t.log_softmax(v[0])).unwrap());
    assert_grad(
        "cross entropy",
        check_op(&[vec![7]], 16, STEP, |t, v| {
            let l = t.log_softmax(v[0])?;
            t.nll(l, 4)
        })
        .unwrap(),
    );
    assert_grad(
        "masked mse",
        check_op(&[vec![6]], 17, STEP, |t, v| t.mse(v[0], vec![0.5; 6], Some(vec![1.0, 0.0, 1.0, 1.0, 0.0, 1.0]))).unwrap(),
    );
    assert_grad(
        "masked mae",
        check_op(&[vec![6]], 18, STEP, |t, v| t.mae(v[0], vec![3.0; 6], Some(vec![1.0, 1.0, 0.0, 1.0, 1.0, 1.0]))).unwrap(),
    );
    assert_grad(
        "sum",
        check_op(&[vec![1], vec![1]], 19, STEP, |t, v| {
            let a = t.mul(v[0], v[1])?;
            t.sum(&[a, v[0]])
        })
        .unwrap(),
    );
}

#[test]
fn composed_model_gradients() {
    for (mode, alpha, img) in [
        (Mode::Deterministic, 0.0, ImageLoss::Mae),
        (Mode::Deterministic, 1000.0, ImageLoss::Mae),
        (Mode::Deterministic, 5.0, ImageLoss::Mse),
        (Mode::Probabilistic, 0.0, ImageLoss::Mae),
        (Mode::Probabilistic, 1000.0, ImageLoss::Mse),
    ] {
        let cfg = tiny(mode, alpha, img);
        let params = ParameterStore::<f64>::init(&cfg).unwrap();
        assert!(params.count() <= 5000, "{} parameters", params.count());
        let (input, targets) = synthetic_example(&cfg, 11).unwrap();
        let r = check_model(&params, &input, &targets, &cfg, STEP).unwrap();
        assert_grad(&format!("{mode:?} alpha {alpha} {img:?}"), r);
    }
}

#[test]
fn heads_are_structural() {
    let cfg = tiny(Mode::Deterministic, 5.0, ImageLoss::Mae);
    let params = ParameterStore::<f64>::init(&cfg).unwrap();
    for seed in 0..5 {
        let (mut input, _) = synthetic_example(&cfg, seed).unwrap();
        input.sky.iter_mut().for_each(|f| f.data.iter_mut().for_each(|v| *v *= 50.0 * (seed as f64 - 2.0)));
        let fc = forward_sample(&params, &input, &cfg, (0.0, 1200.0)).unwrap();
        assert_eq!(fc.horizons.len(), 6);
        for h in &fc.horizons {
            let d = h.dist.as_ref().unwrap();
            assert!((d.probs().iter().sum::<f64>() - 1.0).abs() < 1e-6);
            assert!(d.probs().iter().all(|&p| p >= 0.0));
            let m = h.ci_map.as_ref().unwrap();
            assert_eq!((m.width(), m.height()), (8, 8));
            assert!(m.values().iter().all(|&v| (0.0..=1.0).contains(&v)));
            assert!(h.ghi_hat.unwrap() >= 0.0);
        }
    }
}

#[test]
fn zero_parameters_reach_a_fixed_point() {
    let cfg = tiny(Mode::Deterministic, 5.0, ImageLoss::Mae);
    let params = ParameterStore::<f32>::zeros(&cfg).unwrap();
    let (input, _) = synthetic_example(&cfg, 1).unwrap();
    let input = skycast::model::ModelInput::<f32> {
        sky: input.sky.iter().map(Tensor::cast).collect(),
        sat: input.sat.iter().map(Tensor::cast).collect(),
        ic: input.ic.iter().map(|&v| v as f32).collect(),
        clear_h: vec![0.5; 6],
        ghi_scale: input.ghi_scale,
    };
    let fc = forward_sample(&params, &input, &cfg, (0.0, 1200.0)).unwrap();
    for h in &fc.horizons[1..] {
        assert_eq!(h, &fc.horizons[0]);
        assert!(h.ghi_hat.unwrap().is_finite());
    }
}

#[test]
fn forward_is_pure_and_predict_matches() {
    let cfg = tiny(Mode::Probabilistic, 5.0, ImageLoss::Mae);
    let params = ParameterStore::<f64>::init(&cfg).unwrap();
    let inputs: Vec<_> = (0..100).map(|s| synthetic_example(&cfg, s).unwrap().0).collect();
    let batch = predict_batch(&params, &inputs, &cfg, (0.0, 1200.0)).unwrap();
    assert_eq!(batch.len(), inputs.len());
    for (x, b) in inputs.iter().zip(&batch) {
        let f1 = forward_sample(&params, x, &cfg, (0.0, 1200.0)).unwrap();
        let f2 = forward_sample(&params, x, &cfg, (0.0, 1200.0)).unwrap();
        let p = predict(&params, x, &cfg, (0.0, 1200.0)).unwrap();
        assert_eq!(f1, f2);
        assert_eq!(f1, p);
        assert_eq!(&p, b);
    }
}

#[test]
fn loss_endpoints() {
    let base = tiny(Mode::Deterministic, 0.0, ImageLoss::Mae);
    let params = ParameterStore::<f64>::init(&base).unwrap();
    let (input, targets) = synthetic_example(&base, 5).unwrap();
    let eval = |cfg: &ModelConfig, targets: &skycast::model::ModelTargets<f64>| {
        let mut tape = Tape::new();
        let out = forward(&mut tape, &params, &input, cfg).unwrap();
        let (_, b) = loss(&mut tape, &out, targets, cfg).unwrap();
        (b, out, tape)
    };
    let (b0, _, _) = eval(&base, &targets);
    assert_eq!(b0.total, b0.irradiance);

    // Strictly increasing in alpha while the image term is positive.
    let mut prev = b0.total;
    for alpha in [0.5, 1.0, 5.0, 20.0, 1000.0] {
        let (b, _, _) = eval(&ModelConfig { alpha, ..base.clone() }, &targets);
        assert!(b.image > 0.0 && b.total > prev);
        prev = b.total;
    }

    // Perfect predictions give zero loss in both modes.
    for mode in [Mode::Deterministic, Mode::Probabilistic] {
        let cfg = ModelConfig { mode, alpha: 5.0, ..base.clone() };
        let (_, out, tape) = eval(&cfg, &targets);
        let mut perfect = targets.clone();
        for k in 0..6 {
            perfect.ghi[k] = tape.value(out.ghi[k].unwrap()).data[0] * perfect.ghi_scale;
            perfect.ci_maps[k] = tape.value(out.ci_map[k].unwrap()).data.clone();
        }
        if mode == Mode::Probabilistic {
            // A one-hot distribution needs saturated logits; check the image part and CE >= 0 instead.
            let (b, _, _) = eval(&cfg, &perfect);
            assert_eq!(b.image, 0.0);
            assert!(b.irradiance > 0.0);
        } else {
            let (b, _, _) = eval(&cfg, &perfect);
            assert!(b.total.abs() < 1e-24, "{}", b.total);
        }
    }
}

#[test]
fn perfect_distribution_has_zero_cross_entropy() {
    let mut tape = Tape::<f64>::new();
    let logits = tape.input(Tensor::new(vec![4], vec![0.0, 800.0, 0.0, 0.0]).unwrap());
    let lp = tape.log_softmax(logits).unwrap();
    let ce = tape.nll(lp, 1).unwrap();
    assert_eq!(tape.value(ce).data[0], 0.0);
}

#[test]
fn gradient_structure() {
    let cfg = ModelConfig {
        heads: Heads { distribution: false, ..Heads::default() },
        ..tiny(Mode::Deterministic, 5.0, ImageLoss::Mae)
    };
    let params = ParameterStore::<f64>::init(&cfg).unwrap();
    let (input, targets) = synthetic_example(&cfg, 2).unwrap();
    let (l1, g1) = gradients(&params, &input, &targets, &cfg, 1.0).unwrap();
    let (l2, g2) = gradients(&params, &input, &targets, &cfg, 2.0).unwrap();
    assert_eq!(l1, l2);
    let dist = params.index_of("dist.w").unwrap();
    assert!(g1[dist].iter().all(|&v| v == 0.0));
    for (a, b) in g1.iter().flatten().zip(g2.iter().flatten()) {
        assert_eq!(2.0 * a, *b);
    }
    assert!(g1.iter().flatten().any(|&v| v != 0.0));
}

#[test]
fn ablation_wiring() {
    let perturb = |t: &mut Tensor<f64>| t.data.iter_mut().enumerate().for_each(|(i, v)| *v += (i as f64 * 0.7).sin());
    for inputs in [
        Inputs { sky: true, satellite: true, irradiance: false },
        Inputs { sky: true, satellite: false, irradiance: true },
        Inputs { sky: false, satellite: true, irradiance: true },
    ] {
        let cfg = ModelConfig { inputs, ..tiny(Mode::Deterministic, 5.0, ImageLoss::Mae) };
        let params = ParameterStore::<f64>::init(&cfg).unwrap();
        let full = synthetic_example(&ModelConfig { inputs: Inputs::default(), ..cfg.clone() }, 4).unwrap().0;
        let strip = |mut x: skycast::model::ModelInput<f64>| {
            if !inputs.sky {
                x.sky.clear();
            }
            if !inputs.satellite {
                x.sat.clear();
            }
            if !inputs.irradiance {
                x.ic.clear();
            }
            x
        };
        let base = predict(&params, &strip(full.clone()), &cfg, (0.0, 1200.0)).unwrap();
        let mut other = full.clone();
        if !inputs.sky {
            other.sky.iter_mut().for_each(perturb);
        }
        if !inputs.satellite {
            other.sat.iter_mut().for_each(perturb);
        }
        if !inputs.irradiance {
            other.ic.iter_mut().for_each(|v| *v = 1.4 - *v);
        }
        assert_eq!(predict(&params, &strip(other), &cfg, (0.0, 1200.0)).unwrap(), base);
        // Feeding a disabled modality is a domain error.
        assert!(matches!(predict(&params, &full, &cfg, (0.0, 1200.0)), Err(Error::Domain(_))));
    }
}
