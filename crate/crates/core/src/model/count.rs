use serde::Serialize;

use super::ModelConfig;
use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ParamGroup {
    pub name: String,
    pub count: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ParamCount {
    pub total: u64,
    pub groups: Vec<ParamGroup>,
}

/// Parameters added by one subject with `voxels` inputs:
/// projection F·N·d + bias N·d + token d.
pub fn subject_increment(cfg: &ModelConfig, voxels: usize) -> u64 {
    let (n, d) = (cfg.n_tokens as u64, cfg.token_dim as u64);
    voxels as u64 * n * d + n * d + d
}

/// Closed-form parameter count.
pub fn param_count(cfg: &ModelConfig) -> Result<ParamCount> {
    cfg.validate()?;
    let (n, d, h, l) = (
        cfg.n_tokens as u64,
        cfg.token_dim as u64,
        cfg.mlp_hidden() as u64,
        cfg.depth as u64,
    );
    let f_total: u64 = cfg.subjects.iter().map(|s| s.voxel_count as u64).sum();
    let s = cfg.subjects.len() as u64;

    let norms = 2 * d + 2 * d;
    let attention = 4 * (d * d + d);
    let mlp = h * d + h + d * h + d;
    let groups = vec![
        ParamGroup {
            name: "subject_projections".into(),
            count: f_total * n * d + s * n * d,
        },
        ParamGroup {
            name: "subject_tokens".into(),
            count: s * d,
        },
        ParamGroup {
            name: "position_embeddings".into(),
            count: (n + 1) * d,
        },
        ParamGroup {
            name: "encoder_blocks".into(),
            count: l * (norms + attention + mlp),
        },
        ParamGroup {
            name: "final_norm".into(),
            count: 2 * d,
        },
    ];
    Ok(ParamCount {
        total: groups.iter().map(|g| g.count).sum(),
        groups,
    })
}

/// Count obtained by walking the parameter layout tensor by tensor.
pub fn enumerated_param_count(cfg: &ModelConfig) -> Result<u64> {
    cfg.validate()?;
    Ok(super::layout(cfg)
        .iter()
        .map(|s| s.dims.iter().product::<usize>() as u64)
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelParams, SubjectDecl};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn hand_enumerated_tiny_config() {
        let cfg = ModelConfig {
            n_tokens: 1,
            token_dim: 2,
            depth: 1,
            heads: 1,
            mlp_ratio: 1.0,
            subjects: vec![SubjectDecl::new("s", 3)],
            ln_eps: 1e-5,
            seed: 0,
            subject_token: true,
        };
        // linear 3·2+2 = 8, token 2, pos 2·2 = 4,
        // block: LN1 4 + QKVO 4·(4+2) = 24 + LN2 4 + MLP (4+2)+(4+2) = 12 → 44,
        // final LN 4.
        let count = param_count(&cfg).unwrap();
        assert_eq!(count.total, 8 + 2 + 4 + 44 + 4);
        assert_eq!(count.total, 62);
        assert_eq!(enumerated_param_count(&cfg).unwrap(), 62);
    }

    #[test]
    fn matches_materialized_params_on_random_configs() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..5 {
            let heads = rng.gen_range(1..=3);
            let subjects = (0..rng.gen_range(1..=3))
                .map(|i| SubjectDecl::new(format!("s{i}"), rng.gen_range(1..=40)))
                .collect();
            let cfg = ModelConfig {
                n_tokens: rng.gen_range(1..=5),
                token_dim: heads * rng.gen_range(1..=4),
                depth: rng.gen_range(1..=3),
                heads,
                mlp_ratio: [1.0, 2.0, 2.5, 4.0][rng.gen_range(0..4)],
                subjects,
                ln_eps: 1e-5,
                seed: rng.gen(),
                subject_token: true,
            };
            let materialized = ModelParams::<f32>::init(&cfg).unwrap().numel() as u64;
            assert_eq!(param_count(&cfg).unwrap().total, materialized, "{cfg:?}");
            assert_eq!(enumerated_param_count(&cfg).unwrap(), materialized);
        }
    }

    #[test]
    fn adding_a_subject_adds_the_closed_form_increment() {
        let mut cfg = ModelConfig::desk(vec![SubjectDecl::new("a", 120)], 0);
        let before = param_count(&cfg).unwrap().total;
        cfg.subjects.push(SubjectDecl::new("b", 77));
        let after = param_count(&cfg).unwrap().total;
        assert_eq!(after - before, subject_increment(&cfg, 77));
        assert_eq!(subject_increment(&cfg, 77), 77 * 64 + 64 + 16);
    }
}
