//! AdamW, mini-batch training and checkpoints.

mod checkpoint;
mod config;
mod gradcheck;
mod optim;
mod trainer;

pub use checkpoint::{checkpoint_stem, Checkpoint, CheckpointHeader, CHECKPOINT_VERSION};
pub use config::TrainConfig;
pub use gradcheck::{check_model_gradients, grad_check_config, GradCheckOptions, GRAD_CHECK_TOLERANCE};
pub use optim::{clip_grad_norm, AdamW, AdamWConfig, ParamRole};
pub use trainer::{
    batch_gradients, fit, param_roles, write_metrics_table, EpochRecord, FitOptions, FitReport, Trainer, METRICS_HEADER,
};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, Split, SyntheticSpec};
    use crate::model::{ModelConfig, SubjectDecl};
    use crate::numerics::Tensor;
    use crate::objective::LossConfig;

    #[test]
    fn zero_gradients_only_decay_weights() {
        let hp = AdamWConfig::default();
        let mut p = vec![
            Tensor::<f64>::vector(vec![2.0, -1.0]).unwrap(),
            Tensor::vector(vec![3.0]).unwrap(),
        ];
        let roles = [
            ParamRole {
                trainable: true,
                decay: true,
            },
            ParamRole {
                trainable: true,
                decay: false,
            },
        ];
        let mut opt = AdamW::new(&p);
        for _ in 0..25 {
            opt.update(&mut p, &[vec![0.0, 0.0], vec![0.0]], &roles, &hp).unwrap();
        }
        let f = (1.0 - hp.lr * hp.weight_decay).powi(25);
        assert!((p[0].data()[0] - 2.0 * f).abs() < 1e-12);
        assert!((p[0].data()[1] + f).abs() < 1e-12);
        assert_eq!(p[1].data(), &[3.0]);
    }

    #[test]
    fn zero_betas_give_sign_descent() {
        let hp = AdamWConfig {
            beta1: 0.0,
            beta2: 0.0,
            weight_decay: 0.0,
            eps: 1e-12,
            lr: 0.1,
        };
        let mut p = vec![Tensor::<f64>::vector(vec![0.0, 0.0, 0.0]).unwrap()];
        let mut opt = AdamW::new(&p);
        let role = [ParamRole {
            trainable: true,
            decay: true,
        }];
        for g in [[3.0, -0.01, 7.0], [-5.0, 2.0, 1e-3]] {
            opt.update(&mut p, &[g.to_vec()], &role, &hp).unwrap();
        }
        let expect = [-0.1 + 0.1, 0.1 - 0.1, -0.2];
        for (a, b) in p[0].data().iter().zip(expect) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    fn tiny() -> (ModelConfig, crate::data::Corpus) {
        let spec = SyntheticSpec {
            subjects: vec![SubjectDecl::new("a", 20), SubjectDecl::new("b", 16)],
            n_tokens: 2,
            token_dim: 8,
            latent_dim: 4,
            n_stimuli: 16,
            n_test: 4,
            ..SyntheticSpec::desk(3)
        };
        let data = generate_synthetic(&spec).unwrap();
        let mut cfg = ModelConfig::desk(spec.subjects.clone(), 7);
        cfg.n_tokens = 2;
        cfg.token_dim = 8;
        (cfg, data.corpus)
    }

    #[test]
    fn overfits_a_small_training_set() {
        let (cfg, corpus) = tiny();
        let mut train = TrainConfig::desk(1);
        train.lr = 3e-3;
        train.weight_decay = 0.0;
        let mut t = Trainer::new(cfg.clone(), LossConfig::default(), train).unwrap();
        let idx = corpus.indices(Split::Train);
        let samples = corpus.samples(&cfg, &idx).unwrap();
        let first = t.run_epoch(&samples).unwrap().l1;
        let mut last = first;
        for _ in 0..150 {
            last = t.run_epoch(&samples).unwrap().l1;
        }
        assert!(last < 0.25 * first, "l1 {first} -> {last}");
    }

    #[test]
    fn single_sample_loss_keeps_falling() {
        let (cfg, corpus) = tiny();
        let train = TrainConfig {
            lr: 1e-3,
            batch_size: 1,
            ..TrainConfig::desk(2)
        };
        let mut t = Trainer::new(cfg.clone(), LossConfig::default(), train).unwrap();
        let samples = corpus.samples(&cfg, &[0]).unwrap();
        let losses: Vec<f64> = (0..30).map(|_| t.run_epoch(&samples).unwrap().total).collect();
        let rises = losses.windows(2).filter(|w| w[1] > w[0]).count();
        assert!(rises <= 2, "{losses:?}");
        assert!(losses[10] < losses[0]);
    }

    #[test]
    fn same_seed_same_trajectory() {
        let (cfg, corpus) = tiny();
        let run = |seed| {
            let mut train = TrainConfig::desk(seed);
            train.epochs = 3;
            let mut t = Trainer::new(cfg.clone(), LossConfig::default(), train).unwrap();
            fit(&mut t, &corpus, &FitOptions::default()).unwrap();
            t.params
        };
        assert_eq!(run(5), run(5));
        assert_ne!(run(5), run(6));
    }

    #[test]
    fn resume_matches_an_uninterrupted_run() {
        let (cfg, corpus) = tiny();
        let mut train = TrainConfig::desk(2);
        train.epochs = 4;
        let mut full = Trainer::new(cfg.clone(), LossConfig::default(), train.clone()).unwrap();
        fit(&mut full, &corpus, &FitOptions::default()).unwrap();

        let dir = tempfile::tempdir().unwrap();
        train.epochs = 2;
        let mut half = Trainer::new(cfg, LossConfig::default(), train).unwrap();
        fit(&mut half, &corpus, &FitOptions::default()).unwrap();
        half.checkpoint().save(&dir.path().join("mid")).unwrap();
        let mut resumed = Trainer::resume(Checkpoint::load(&dir.path().join("mid.json")).unwrap()).unwrap();
        resumed.train.epochs = 4;
        fit(&mut resumed, &corpus, &FitOptions::default()).unwrap();
        assert_eq!(resumed.params, full.params);
        assert_eq!(resumed.optimizer, full.optimizer);
    }

    #[test]
    fn invalid_hyperparameters_are_rejected() {
        for f in [
            |t: &mut TrainConfig| t.lr = 0.0,
            |t: &mut TrainConfig| t.beta1 = 1.0,
            |t: &mut TrainConfig| t.batch_size = 0,
            |t: &mut TrainConfig| t.grad_clip = Some(-1.0),
        ] {
            let mut t = TrainConfig::desk(0);
            f(&mut t);
            assert!(t.validate().is_err());
        }
    }
}
