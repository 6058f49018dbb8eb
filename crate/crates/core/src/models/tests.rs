use super::*;
use crate::autodiff::Tape;
use crate::gradcheck;

fn small_net(batch_norm: bool, dropout: f64) -> NetConfig {
    NetConfig { hidden: vec![5, 4], activation: Activation::Softplus, dropout, batch_norm }
}

fn onehot(codes: &[Vec<usize>], cards: &[usize]) -> Tensor {
    let width: usize = cards.iter().sum();
    let rows: Vec<Vec<f64>> = codes
        .iter()
        .map(|row| {
            let mut v = vec![0.0; width];
            let mut off = 0;
            for (c, &card) in row.iter().zip(cards) {
                v[off + c] = 1.0;
                off += card;
            }
            v
        })
        .collect();
    Tensor::from_rows(&rows).unwrap()
}

fn nb_model(k: usize, cards: &[usize], net: &NetConfig, seed: u64) -> Model {
    let spec = ModelSpec::Nb { k, cards: cards.to_vec(), priors: LogisticNormalPriors::standard(k) };
    Model::build(spec, net, &mut RngStream::new(seed)).unwrap()
}

fn nb_inputs(n: usize, cards: &[usize], rng: &mut RngStream) -> Inputs {
    let codes: Vec<Vec<usize>> = (0..n).map(|_| cards.iter().map(|&c| rng.below(c)).collect()).collect();
    Inputs::Onehot(onehot(&codes, cards))
}

fn gmm_model(k: usize, d: usize, net: &NetConfig, seed: u64) -> Model {
    let mut rng = RngStream::new(seed);
    let centers = (0..k).map(|_| (0..d).map(|_| 2.0 * rng.normal()).collect()).collect();
    let priors = GmmPriors { mean_centers: centers, mean_sd: 1.0, iw_nu: d as f64 + 2.0 };
    Model::build(ModelSpec::Gmm { k, dim: d, rank: d, priors }, net, &mut rng).unwrap()
}

fn sp_dims() -> SpDims {
    SpDims { a_card: 3, c_card: 2, t_mean: 1.2, t_sd: 0.8 }
}

fn sp_model(net: &NetConfig, seed: u64) -> Model {
    let dims = sp_dims();
    let priors = SpPriors::informed(dims.t_mean, dims.t_sd);
    Model::build(ModelSpec::Sp { dims, priors }, net, &mut RngStream::new(seed)).unwrap()
}

fn sp_inputs(n: usize, rng: &mut RngStream) -> SpInputs {
    let dims = sp_dims();
    let xz = rng.normal_tensor(&[n, 4]);
    let a_codes: Vec<usize> = (0..n).map(|_| rng.below(dims.a_card)).collect();
    let c_codes: Vec<usize> = (0..n).map(|_| rng.below(dims.c_card)).collect();
    let t: Vec<f64> = (0..n).map(|_| dims.t_mean + dims.t_sd * rng.normal()).collect();
    let codes: Vec<Vec<usize>> = a_codes.iter().zip(&c_codes).map(|(&a, &c)| vec![a, c]).collect();
    let xu = onehot(&codes, &[dims.a_card, dims.c_card]);
    let c_onehot = onehot(&c_codes.iter().map(|&c| vec![c]).collect::<Vec<_>>(), &[dims.c_card]);
    let with_t = |m: &Tensor| {
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|r| {
                let mut v = m.row(r).to_vec();
                v.push((t[r] - dims.t_mean) / dims.t_sd);
                v
            })
            .collect();
        Tensor::from_rows(&rows).unwrap()
    };
    SpInputs {
        qz_in: with_t(&xz),
        qu_in: with_t(&xu),
        xz,
        xu,
        c_onehot,
        t: Tensor::new(vec![n, 1], t).unwrap(),
        a_codes,
        c_codes,
    }
}

fn perturb(model: &mut Model, rng: &mut RngStream, scale: f64) {
    let ids: Vec<ParamId> = model.store().ids().collect();
    for id in ids {
        if model.store().is_trainable(id) {
            model.store_mut().get_mut(id).values_mut().iter_mut().for_each(|v| *v += scale * rng.normal());
        }
    }
}

/// Finite-difference check of the ELBO with respect to every stored tensor.
fn elbo_gradcheck(model: &Model, x: &Inputs, noise_seed: u64) -> gradcheck::GradCheck {
    let inputs: Vec<Tensor> = model.store().ids().map(|id| model.store().get(id).clone()).collect();
    let ctx = ElboCtx { tau: 0.7, hyper_scale: 0.3, train: true };
    gradcheck::check(&inputs, 1e-5, |tape: &mut Tape, vars: &[Var]| {
        let bound = Bound::from_vars(vars.to_vec());
        let out = model.elbo(tape, &bound, x, &ctx, &mut RngStream::new(noise_seed))?;
        Ok(out.total)
    })
    .unwrap()
}

#[test]
fn nb_elbo_gradients_match_finite_differences() {
    for s in 0..3 {
        let mut model = nb_model(2, &[3, 2], &small_net(true, 0.2), s);
        perturb(&mut model, &mut RngStream::new(100 + s), 0.3);
        let x = nb_inputs(6, &[3, 2], &mut RngStream::new(200 + s));
        let r = elbo_gradcheck(&model, &x, 7 + s);
        assert!(r.max_rel_err < 1e-4, "{r:?}");
    }
}

#[test]
fn gmm_elbo_gradients_match_finite_differences() {
    for s in 0..3 {
        let mut model = gmm_model(2, 2, &small_net(true, 0.2), s);
        perturb(&mut model, &mut RngStream::new(100 + s), 0.3);
        let x = Inputs::Continuous(RngStream::new(200 + s).normal_tensor(&[6, 2]));
        let r = elbo_gradcheck(&model, &x, 7 + s);
        assert!(r.max_rel_err < 1e-4, "{r:?}");
    }
}

#[test]
fn sp_elbo_gradients_match_finite_differences() {
    for s in 0..3 {
        let mut model = sp_model(&small_net(true, 0.2), s);
        perturb(&mut model, &mut RngStream::new(100 + s), 0.3);
        let x = Inputs::Sp(sp_inputs(6, &mut RngStream::new(200 + s)));
        let r = elbo_gradcheck(&model, &x, 7 + s);
        assert!(r.max_rel_err < 1e-4, "{r:?}");
    }
}

/// Mean and standard error of the data part of the ELBO (hyper-prior
/// excluded) over independent draws, in evaluation mode.
fn elbo_moments(model: &Model, x: &Inputs, draws: usize, tau: f64) -> (f64, f64) {
    let ctx = ElboCtx { tau, hyper_scale: 0.0, train: false };
    let mut rng = RngStream::new(99);
    let vals: Vec<f64> = (0..draws)
        .map(|_| {
            let mut tape = Tape::new();
            let bound = model.store().bind(&mut tape);
            let out = model.elbo(&mut tape, &bound, x, &ctx, &mut rng).unwrap();
            tape.item(out.total)
        })
        .collect();
    let mean = vals.iter().sum::<f64>() / draws as f64;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (draws - 1) as f64;
    (mean, (var / draws as f64).sqrt())
}

#[test]
fn elbo_stays_below_enumerated_evidence() {
    let net = small_net(true, 0.0);
    let cases: Vec<(Model, Inputs)> = vec![
        (nb_model(2, &[3, 2], &net, 1), nb_inputs(6, &[3, 2], &mut RngStream::new(2))),
        (gmm_model(2, 2, &net, 3), Inputs::Continuous(RngStream::new(4).normal_tensor(&[5, 2]))),
        (sp_model(&net, 5), Inputs::Sp(sp_inputs(5, &mut RngStream::new(6)))),
    ];
    for (model, x) in cases {
        let evidence: f64 = model.log_evidence(&x).unwrap().iter().sum();
        let (mean, se) = elbo_moments(&model, &x, 2000, 0.1);
        assert!(mean <= evidence + 3.0 * se, "{}: elbo {mean} ± {se} vs evidence {evidence}", model.kind());
    }
}

fn zero_output_layer(model: &mut Model, prefix: &str, bias: &[f64]) {
    let w = model.store().find(&format!("{prefix}.out.weight")).unwrap();
    let b = model.store().find(&format!("{prefix}.out.bias")).unwrap();
    model.store_mut().get_mut(w).values_mut().iter_mut().for_each(|v| *v = 0.0);
    model.store_mut().get_mut(b).values_mut().copy_from_slice(bias);
}

fn eval_elbo(model: &Model, x: &Inputs, hyper_scale: f64) -> (Tape, ElboOutput) {
    let mut tape = Tape::new();
    let bound = model.store().bind(&mut tape);
    let ctx = ElboCtx { tau: 0.5, hyper_scale, train: false };
    let out = model.elbo(&mut tape, &bound, x, &ctx, &mut RngStream::new(3)).unwrap();
    (tape, out)
}

#[test]
fn uniform_posterior_has_zero_kl() {
    let net = small_net(false, 0.0);
    let mut nb = nb_model(3, &[2, 2], &net, 1);
    zero_output_layer(&mut nb, "q_z", &[0.4, 0.4, 0.4]);
    let (tape, out) = eval_elbo(&nb, &nb_inputs(4, &[2, 2], &mut RngStream::new(1)), 0.1);
    assert!(tape.item(out.kl).abs() < 1e-12);

    let mut gmm = gmm_model(2, 2, &net, 2);
    zero_output_layer(&mut gmm, "q_z", &[0.0, 0.0]);
    let (tape, out) = eval_elbo(&gmm, &Inputs::Continuous(Tensor::zeros(&[3, 2])), 0.1);
    assert!(tape.item(out.kl).abs() < 1e-12);
}

#[test]
fn single_class_nb_is_reconstruction_plus_hyper_prior() {
    let mut model = nb_model(1, &[3, 2], &small_net(true, 0.0), 4);
    perturb(&mut model, &mut RngStream::new(5), 0.5);
    let (tape, out) = eval_elbo(&model, &nb_inputs(5, &[3, 2], &mut RngStream::new(6)), 0.25);
    assert_eq!(tape.item(out.kl), 0.0);
    let expected = tape.item(out.recon) + 0.25 * tape.item(out.hyper);
    assert!((tape.item(out.total) - expected).abs() < 1e-12);
}

#[test]
fn single_gaussian_without_factor_is_standard_normal_fit() {
    let mut model = gmm_model(1, 2, &small_net(false, 0.0), 7);
    let f = model.store().find("theta.0.factor").unwrap();
    model.store_mut().get_mut(f).values_mut().iter_mut().for_each(|v| *v = 0.0);
    let mu = model.store().get(model.store().find("theta.0.mu").unwrap()).values().to_vec();
    let x = RngStream::new(8).normal_tensor(&[4, 2]);
    let (tape, out) = eval_elbo(&model, &Inputs::Continuous(x.clone()), 0.5);
    let ll: f64 = (0..4)
        .flat_map(|r| (0..2).map(move |j| (r, j)))
        .map(|(r, j)| crate::distributions::gaussian_logpdf(x.row(r)[j], mu[j], 1.0).unwrap())
        .sum();
    assert!((tape.item(out.recon) - ll).abs() < 1e-9);
    assert_eq!(tape.item(out.kl), 0.0);
    assert!((tape.item(out.total) - ll - 0.5 * tape.item(out.hyper)).abs() < 1e-9);
}

#[test]
fn sp_matching_prior_and_uniform_u_give_zero_kl() {
    let mut model = sp_model(&small_net(false, 0.0), 9);
    let bias = [0.3, -0.2, 0.5];
    zero_output_layer(&mut model, "p_z", &bias);
    zero_output_layer(&mut model, "q_z", &bias);
    zero_output_layer(&mut model, "q_u", &[0.0, 0.0]);
    let (tape, out) = eval_elbo(&model, &Inputs::Sp(sp_inputs(5, &mut RngStream::new(10))), 0.1);
    assert!(tape.item(out.kl).abs() < 1e-12, "{}", tape.item(out.kl));
}

fn set(model: &mut Model, name: &str, values: &[f64]) {
    let id = model.store().find(name).unwrap();
    model.store_mut().get_mut(id).values_mut().copy_from_slice(values);
}

#[test]
fn equal_coefficients_cut_the_regression_signal_to_q_z() {
    let mut model = sp_model(&small_net(true, 0.0), 11);
    set(&mut model, "beta.z", &[0.7, 0.7, 0.7]);
    set(&mut model, "beta.u", &[-0.1, -0.1]);
    let x = Inputs::Sp(sp_inputs(6, &mut RngStream::new(12)));
    let mut tape = Tape::new();
    let bound = model.store().bind(&mut tape);
    let ctx = ElboCtx { tau: 0.5, hyper_scale: 0.0, train: true };
    let out = model.elbo(&mut tape, &bound, &x, &ctx, &mut RngStream::new(13)).unwrap();
    let grads = tape.backward(out.recon).unwrap();
    let g = model.store().collect_grads(&bound, &grads);
    for id in model.store().ids() {
        if model.store().name(id).starts_with("q_z.") {
            let mx = g[ids_index(&model, id)].values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(mx < 1e-10, "{}: {mx}", model.store().name(id));
        }
    }
}

fn ids_index(model: &Model, id: ParamId) -> usize {
    model.store().ids().position(|i| i == id).unwrap()
}

#[test]
fn sp_predictions_follow_the_regression_cells() {
    let mut model = sp_model(&small_net(false, 0.0), 14);
    let mut rng = RngStream::new(15);
    perturb(&mut model, &mut rng, 0.3);
    let sp_x = sp_inputs(4, &mut rng);
    let x = Inputs::Sp(sp_x.clone());
    let sp = model.as_sp().unwrap().clone();

    // brute force over the 3×2 cells
    let qz = sp.posterior(model.store(), &sp_x).unwrap();
    let qu = sp.u_posterior(model.store(), &sp_x).unwrap();
    let reg = sp.regression(model.store());
    let pred = model.predict_t(&x).unwrap().unwrap();
    for j in 0..4 {
        let mut e = 0.0;
        for z in 0..3 {
            for u in 0..2 {
                let mean = reg.beta0 + reg.beta_z[z] + reg.beta_u[u] + reg.beta_c[sp_x.c_codes[j]];
                e += qz.row(j)[z] * qu.row(j)[u] * mean;
            }
        }
        assert!((pred[j] - e).abs() < 1e-12);
    }

    // concentrated posteriors pick out one cell
    zero_output_layer(&mut model, "q_z", &[0.0, 0.0, 60.0]);
    zero_output_layer(&mut model, "q_u", &[60.0, 0.0]);
    let pred = model.predict_t(&x).unwrap().unwrap();
    for j in 0..4 {
        assert!((pred[j] - reg.mean(2, 0, sp_x.c_codes[j])).abs() < 1e-9);
    }

    // no latent effects
    set(&mut model, "beta.z", &[0.0; 3]);
    set(&mut model, "beta.u", &[0.0; 2]);
    let pred = model.predict_t(&x).unwrap().unwrap();
    for j in 0..4 {
        assert!((pred[j] - reg.beta0 - reg.beta_c[sp_x.c_codes[j]]).abs() < 1e-12);
    }
}

#[test]
fn nb_evidence_matches_direct_summation() {
    let cards = [3, 2, 4];
    let mut model = nb_model(3, &cards, &small_net(true, 0.0), 16);
    perturb(&mut model, &mut RngStream::new(17), 0.5);
    let mut rng = RngStream::new(18);
    let codes: Vec<Vec<usize>> = (0..7).map(|_| cards.iter().map(|&c| rng.below(c)).collect()).collect();
    let x = Inputs::Onehot(onehot(&codes, &cards));
    let got = model.log_evidence(&x).unwrap();

    let Variant::Nb(nb) = &model.variant else { unreachable!() };
    let table = nb.block().predictive(model.store());
    for (j, row) in codes.iter().enumerate() {
        let mut p = 0.0;
        for z in 0..3 {
            let mut prod = 1.0 / 3.0;
            let mut off = 0;
            for (d, &c) in row.iter().enumerate() {
                prod *= table.row(z)[off + c];
                off += cards[d];
            }
            p += prod;
        }
        assert!((got[j] - p.ln()).abs() < 1e-12);
    }
}

#[test]
fn single_class_evidence_is_the_conditional_likelihood() {
    let model = nb_model(1, &[2, 3], &small_net(true, 0.0), 19);
    let x = nb_inputs(4, &[2, 3], &mut RngStream::new(20));
    let Variant::Nb(nb) = &model.variant else { unreachable!() };
    let table = nb.block().predictive(model.store());
    let Inputs::Onehot(t) = &x else { unreachable!() };
    for (j, ll) in model.log_evidence(&x).unwrap().into_iter().enumerate() {
        let direct: f64 = t.row(j).iter().zip(table.row(0)).filter(|(o, _)| **o == 1.0).map(|(_, p)| p.ln()).sum();
        assert!((ll - direct).abs() < 1e-12);
    }
}

#[test]
fn gmm_evidence_matches_dense_two_dimensional_density() {
    let mut model = gmm_model(2, 2, &small_net(true, 0.0), 21);
    perturb(&mut model, &mut RngStream::new(22), 0.5);
    let x = RngStream::new(23).normal_tensor(&[5, 2]);
    let got = model.log_evidence(&Inputs::Continuous(x.clone())).unwrap();
    let dens = |z: usize, p: &[f64]| {
        let mu = model.store().get(model.store().find(&format!("theta.{z}.mu")).unwrap()).values().to_vec();
        let c = model.store().get(model.store().find(&format!("theta.{z}.factor")).unwrap()).values().to_vec();
        // Σ = C Cᵀ + I for a 2×2 factor stored row-major
        let s00 = c[0] * c[0] + c[1] * c[1] + 1.0;
        let s01 = c[0] * c[2] + c[1] * c[3];
        let s11 = c[2] * c[2] + c[3] * c[3] + 1.0;
        let det = s00 * s11 - s01 * s01;
        let (d0, d1) = (p[0] - mu[0], p[1] - mu[1]);
        let quad = (s11 * d0 * d0 - 2.0 * s01 * d0 * d1 + s00 * d1 * d1) / det;
        (-0.5 * quad).exp() / (2.0 * std::f64::consts::PI * det.sqrt())
    };
    for j in 0..5 {
        let p = 0.5 * dens(0, x.row(j)) + 0.5 * dens(1, x.row(j));
        assert!((got[j] - p.ln()).abs() < 1e-10, "{} vs {}", got[j], p.ln());
    }
}

#[test]
fn sp_evidence_matches_direct_summation() {
    let mut model = sp_model(&small_net(true, 0.0), 24);
    perturb(&mut model, &mut RngStream::new(25), 0.3);
    let sp_x = sp_inputs(5, &mut RngStream::new(26));
    let got = model.log_evidence(&Inputs::Sp(sp_x.clone())).unwrap();
    let sp = model.as_sp().unwrap();
    let prior = sp.prior_probs(model.store(), &sp_x).unwrap();
    let table = sp.block().predictive(model.store());
    let reg = sp.regression(model.store());
    for j in 0..5 {
        let (a, c, t) = (sp_x.a_codes[j], sp_x.c_codes[j], sp_x.t.values()[j]);
        let mut p = 0.0;
        for z in 0..3 {
            for u in 0..2 {
                let mean = reg.beta0 + reg.beta_z[z] + reg.beta_u[u] + reg.beta_c[c];
                let r = (t - mean) / reg.sigma;
                let normal = (-0.5 * r * r).exp() / (reg.sigma * (2.0 * std::f64::consts::PI).sqrt());
                p += prior.row(j)[z] * 0.5 * table.row(u)[a] * table.row(u)[3 + c] * normal;
            }
        }
        assert!((got[j] - p.ln()).abs() < 1e-10);
    }
}

#[test]
fn posterior_rows_are_distributions() {
    let model = nb_model(4, &[3, 3], &small_net(true, 0.1), 27);
    let x = nb_inputs(20, &[3, 3], &mut RngStream::new(28));
    let p = model.posterior(&x).unwrap();
    for r in 0..20 {
        assert!((p.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(p.row(r).iter().all(|&v| v >= 0.0));
    }
    assert_eq!(model.assign(&x).unwrap(), assign_hard(&p));
}

#[test]
fn fair_objective_arithmetic() {
    assert_eq!(fair_objective_value(-3.0 * 8.0, 0.5, 2.0, 8), 4.0);
    assert_eq!(fair_objective_value(-12.0, 0.9, 0.0, 4), 3.0);
    let mut tape = Tape::new();
    let elbo = tape.scalar(-24.0);
    let f = tape.scalar(0.5);
    let obj = fair_objective(&mut tape, elbo, Some(f), 2.0, 8).unwrap();
    assert_eq!(tape.item(obj), 4.0);
    let vanilla = fair_objective(&mut tape, elbo, None, 2.0, 8).unwrap();
    let zero = fair_objective(&mut tape, elbo, Some(f), 0.0, 8).unwrap();
    assert_eq!(tape.item(vanilla), 3.0);
    assert_eq!(tape.item(zero), 3.0);
    // an inactive hinge leaves the vanilla objective
    let inactive = tape.scalar(0.0);
    let obj = fair_objective(&mut tape, elbo, Some(inactive), 5.0, 8).unwrap();
    assert_eq!(tape.item(obj), 3.0);
}

#[test]
fn l2_targets_exclude_the_prior_network() {
    let model = sp_model(&small_net(true, 0.0), 29);
    let names: Vec<&str> = model.l2_weight_ids().into_iter().map(|id| model.store().name(id)).collect();
    assert_eq!(names.len(), 6);
    assert!(names.iter().all(|n| n.starts_with("q_") && n.ends_with(".weight")));
}

#[test]
fn checkpoint_round_trip_preserves_the_model() {
    let dir = tempfile::tempdir().unwrap();
    for model in [nb_model(2, &[3, 2], &small_net(true, 0.1), 30), sp_model(&small_net(true, 0.1), 31)] {
        let mut model = model;
        perturb(&mut model, &mut RngStream::new(32), 0.2);
        let path = dir.path().join(format!("{}.json", model.kind()));
        model.checkpoint().save(&path).unwrap();
        let back = Model::from_checkpoint(&Checkpoint::load(&path).unwrap()).unwrap();
        let x = match model.kind() {
            ModelKind::Sp => Inputs::Sp(sp_inputs(5, &mut RngStream::new(33))),
            _ => nb_inputs(5, &[3, 2], &mut RngStream::new(33)),
        };
        assert_eq!(back.posterior(&x).unwrap(), model.posterior(&x).unwrap());
        assert_eq!(back.log_evidence(&x).unwrap(), model.log_evidence(&x).unwrap());
        assert_eq!(back.store().to_map(), model.store().to_map());
    }
    let mut bad = nb_model(2, &[2, 2], &small_net(false, 0.0), 1).checkpoint();
    bad.version = 99;
    let path = dir.path().join("bad.json");
    bad.save(&path).unwrap();
    assert!(Checkpoint::load(&path).is_err());
}

#[test]
fn model_kind_parsing() {
    assert_eq!("NB".parse::<ModelKind>().unwrap(), ModelKind::Nb);
    assert_eq!("sp".parse::<ModelKind>().unwrap().to_string(), "sp");
    assert!("hmm".parse::<ModelKind>().is_err());
}

#[test]
fn mismatched_inputs_are_rejected() {
    let model = nb_model(2, &[2, 2], &small_net(false, 0.0), 1);
    assert!(model.posterior(&Inputs::Continuous(Tensor::zeros(&[2, 2]))).is_err());
}
