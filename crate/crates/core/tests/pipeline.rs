use taskldp::harness::{run_general_experiment, synthetic, GeneralSpec};
use taskldp::neural::TaskArch;
use taskldp::ExperimentConfig;

fn config() -> ExperimentConfig {
    ExperimentConfig::from_toml_str("epsilon_grid = [1.0, 8.0]\nz = 3\neta = 0.01\nepochs = 5\nnoise_draws = 4\nseed = 2\n")
        .unwrap()
}

#[test]
fn general_run_covers_every_approach_and_epsilon() {
    let (x, y) = synthetic::regression(120, 1).unwrap();
    let spec = GeneralSpec { task_arch: TaskArch::regression(8), codec_hidden: None, task_epochs: 20, task_lr: 1e-2 };
    let out = run_general_experiment(&x, &y, &spec, &config()).unwrap();
    assert_eq!(out.result.rows.len(), 6);
    assert_eq!(out.codecs.len(), 2);
    for row in &out.result.rows {
        assert!(row.mean_loss.is_finite() && row.mean_loss >= 0.0);
        assert!(row.std_error >= 0.0);
    }
    let csv = out.result.to_csv();
    assert!(csv.starts_with('#'));
}

#[test]
fn general_run_is_reproducible() {
    let (x, y) = synthetic::regression(80, 4).unwrap();
    let spec = GeneralSpec { task_arch: TaskArch::regression(6), codec_hidden: Some(4), task_epochs: 10, task_lr: 1e-2 };
    let a = run_general_experiment(&x, &y, &spec, &config()).unwrap();
    let b = run_general_experiment(&x, &y, &spec, &config()).unwrap();
    assert_eq!(a.result.to_json(), b.result.to_json());
    for ((ca, ta), (cb, tb)) in a.codecs.iter().zip(&b.codecs) {
        assert_eq!(ta.to_csv(), tb.to_csv());
        assert_eq!(ca.delta1, cb.delta1);
    }
}
