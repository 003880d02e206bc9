use kooba_core::data::{self, LorenzParams};
use kooba_core::hippo::BasisConfig;
use kooba_core::kooba::{self, KoopmanSystem};
use kooba_core::model::{self, Encoder, KoobaModel, ModelConfig};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const B_STAR: [f64; 2] = [0.7, -0.3];

fn realizable_config() -> ModelConfig {
    ModelConfig {
        basis: BasisConfig {
            order: 4,
            ..Default::default()
        },
        controls: 2,
        batch_size: 1,
        seed: 5,
        ..Default::default()
    }
}

/// Series whose every training target is the exact forecast of a known
/// system with weights `B_STAR`, built row by row.
fn realizable_series(config: &ModelConfig, rows: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut noise = || rng.gen_range(-1.0..1.0) * 2.0 * 3f64.sqrt();
    let controls = DMatrix::from_fn(rows, 2, |t, j| {
        let t = t as f64;
        if j == 0 {
            6.0 * (0.05 * t).sin()
        } else {
            6.0 * (0.031 * t).cos()
        }
    }) + DMatrix::from_fn(rows, 2, |_, _| noise());
    let mut states = DMatrix::from_fn(rows, 1, |t, _| {
        let t = t as f64;
        0.5 + 0.3 * (0.07 * t).sin() + 0.1 * (0.23 * t).sin()
    });
    let encoder = Encoder::new(config).unwrap();
    let l = config.seq_len;
    let mut start = 0;
    while start + l < rows {
        let history: Vec<f64> = states.column(0).rows(start, l).iter().copied().collect();
        let c = encoder.encode(&history).unwrap();
        let a = kooba::coeffs_c_to_a(c.coefficients()).unwrap();
        let sys = KoopmanSystem::new(a, &B_STAR, config.koopman_dt()).unwrap();
        let state = kooba::lift_initial_state(sys.state_dim(), config.s0).unwrap();
        let u: Vec<f64> = controls.row(start + l).iter().copied().collect();
        let next = kooba::propagate(&sys, &state, &u).unwrap();
        states[(start + l, 0)] = kooba::readout(&sys, &next).unwrap();
        start += config.stride();
    }
    (states, controls)
}

fn rel_err(got: &[f64], want: &[f64]) -> f64 {
    let num: f64 = got.iter().zip(want).map(|(g, w)| (g - w).powi(2)).sum();
    let den: f64 = want.iter().map(|w| w * w).sum();
    (num / den).sqrt()
}

#[test]
fn least_squares_recovers_generating_weights() {
    let cfg = realizable_config();
    let (s, c) = realizable_series(&cfg, 4000);
    let cf = model::closed_form_b(&cfg, &s, &c).unwrap();
    assert!(!cf.rank_deficient);
    assert_eq!(cf.skipped_windows, 0);
    assert!(rel_err(&cf.weights[0], &B_STAR) < 1e-8, "{:?}", cf.weights);
}

#[test]
fn single_window_is_solved_exactly() {
    let cfg = ModelConfig {
        controls: 1,
        ..realizable_config()
    };
    let (mut s, c) = realizable_series(&realizable_config(), 9);
    let u = c.columns(0, 1).into_owned();
    let history: Vec<f64> = s.column(0).rows(0, 8).iter().copied().collect();
    let state = Encoder::new(&cfg).unwrap().encode(&history).unwrap();
    let truth = KoobaModel::from_parts(cfg.clone(), vec![vec![1.3]], vec![], 0)
        .unwrap()
        .predict(0, &state, &u.rows(8, 1).into_owned())
        .unwrap();
    s[(8, 0)] = truth[0];
    let cf = model::closed_form_b(&cfg, &s, &u).unwrap();
    assert!((cf.weights[0][0] - 1.3).abs() < 1e-10);
}

#[test]
fn gradient_descent_reaches_the_oracle() {
    let cfg = realizable_config();
    let (s, c) = realizable_series(&cfg, 4000);
    let fitted = model::fit(&cfg, &s, &c).unwrap();
    let cf = model::closed_form_b(&cfg, &s, &c).unwrap();
    assert!(rel_err(&fitted.weights()[0], &cf.weights[0]) < 1e-3, "{:?} vs {:?}", fitted.weights(), cf.weights);
    let h = fitted.loss_history();
    assert_eq!(h.len(), 50);
    assert!(h.iter().all(|l| l.is_finite()));
    assert!(h[h.len() - 1] <= h[0]);
}

#[test]
fn fitted_model_forecasts_the_fixture() {
    let cfg = realizable_config();
    let (s, c) = realizable_series(&cfg, 4000);
    let fitted = model::fit(&cfg, &s, &c).unwrap();
    let encoder = Encoder::new(&cfg).unwrap();
    for start in (0..3000).step_by(8 * 37) {
        let history: Vec<f64> = s.column(0).rows(start, 8).iter().copied().collect();
        let state = encoder.encode(&history).unwrap();
        let p = fitted.predict(0, &state, &c.rows(start + 8, 1).into_owned()).unwrap();
        let truth = s[(start + 8, 0)];
        assert!((p[0] - truth).abs() <= 1e-3 * truth.abs(), "{} vs {truth}", p[0]);
    }
}

#[test]
fn golden_model_document_loads() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/model_v1.json");
    let model = KoobaModel::load(path).unwrap();
    assert_eq!(model.config().basis.order, 6);
    assert_eq!(model.weights(), &[vec![0.25], vec![-0.5]]);
    assert_eq!(model.parameter_count(), 2);
    assert_eq!(model.loss_history(), &[0.5, 0.25, 0.125]);
    let text = std::fs::read_to_string(path).unwrap();
    assert_eq!(model.to_json().unwrap().trim_end(), text.trim_end());
}

#[test]
fn saved_model_reloads() {
    let table = data::gen_lorenz(&LorenzParams {
        steps: 1200,
        ..Default::default()
    })
    .unwrap();
    let ds = data::normalize(&table).unwrap();
    let (s, c) = ds.split_controls(1).unwrap();
    let cfg = ModelConfig {
        epochs: 3,
        ..Default::default()
    };
    let fitted = model::fit(&cfg, &s.rows(0, ds.split()).into_owned(), &c.rows(0, ds.split()).into_owned()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    fitted.save(&path).unwrap();
    let back = KoobaModel::load(&path).unwrap();
    assert_eq!(back, fitted);
    let e1 = fitted.evaluate(&s, &c, ds.test_range()).unwrap();
    let e2 = back.evaluate(&s, &c, ds.test_range()).unwrap();
    assert_eq!(e1, e2);
}
