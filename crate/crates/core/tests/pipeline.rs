use mxql_core::distributions::implied_error_density;
use mxql_core::mdp::{behavior_value, generate_dataset, soft_value, zoo, DatasetMode, TabularMdp};
use mxql_core::mxql::{train, TrainConfig};
use mxql_core::regression::{full_batch_descent, generate_data, target_value};
use mxql_core::rng::stream_rng;
use mxql_core::{Grid, LossSpec};

#[test]
fn text_mdp_trains_between_the_oracles() {
    let text = "states = 2\nactions = 2\ngamma = 0.8\n\
                transition = 1 0, 0 1, 0 1, 1 0\n\
                reward = 0 1, 0.5 0\n\
                policy = 0.7 0.3, 0.4 0.6\n";
    let mdp = TabularMdp::from_text(text).unwrap();
    let data = generate_dataset(
        &mdp,
        DatasetMode::Exhaustive { size: 1000 },
        &mut stream_rng(1, 0),
    )
    .unwrap();
    let low = behavior_value(&mdp);
    let high = soft_value(&mdp, 1.0).unwrap().v;
    let mut previous = low.clone();
    for n in [2, 4, 8] {
        let out = train(
            &mdp,
            &data,
            &TrainConfig::new(LossSpec::expanded_gumbel(1.0, n).unwrap()),
        )
        .unwrap();
        assert!(out.tables.converged);
        for s in 0..2 {
            let v = out.tables.v[s];
            assert!(v >= low[s] - 1e-9 && v <= high[s] + 1e-9);
            assert!(v >= previous[s] - 1e-9, "V_n should grow with n");
        }
        previous = out.tables.v;
    }
}

#[test]
fn rollout_data_from_the_zoo_trains() {
    let mdp = zoo("chain3").unwrap();
    let mode = DatasetMode::Rollout {
        episodes: 50,
        horizon: 100,
        start_state: 0,
    };
    let data = generate_dataset(&mdp, mode, &mut stream_rng(2, 0)).unwrap();
    assert_eq!(data.len(), 5000);
    let out = train(
        &mdp,
        &data,
        &TrainConfig::new(LossSpec::gumbel(1.0).unwrap()),
    )
    .unwrap();
    assert!(!out.diverged());
    assert!(out.tables.v.iter().all(|v| v.is_finite()));
}

#[test]
fn regression_and_density_agree_on_the_gumbel_shape() {
    let data = generate_data(1.0, 5000, &mut stream_rng(3, 0)).unwrap();
    let out = full_batch_descent(&data, &LossSpec::gumbel(1.0).unwrap(), 0.05, 5000, 0.0).unwrap();
    assert!((out.h - target_value(&data, 1.0).unwrap()).abs() < 1e-6);

    let grid = Grid::new(-30.0, 30.0, 0.01).unwrap();
    let density = implied_error_density(&LossSpec::gumbel(1.0).unwrap(), &grid).unwrap();
    assert!((density.trapezoid_integral() - 1.0).abs() < 1e-6);
}
