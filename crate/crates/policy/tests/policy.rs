use drs_core::lang::parse_ids;
use drs_core::{TokenId, Vocab};
use drs_policy::checkpoint::{self, CheckpointError, ModelKind};
use drs_policy::{
    pretrain_supervised, Constraint, DecodeConfig, Example, ModelDims, PolicyModel, PretrainConfig, ValueModel,
};
use rand::rngs::StdRng;
use rand::SeedableRng;

fn dims() -> ModelDims {
    ModelDims {
        d_model: 16,
        n_heads: 2,
        d_ff: 32,
        max_len: 48,
        ..ModelDims::default()
    }
}

fn ids(s: &str) -> Vec<TokenId> {
    let v = Vocab::standard();
    s.split(' ').map(|w| v.expect_id(w)).collect()
}

#[test]
fn checkpoints_survive_disk_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = StdRng::seed_from_u64(0);
    let policy = PolicyModel::new(dims(), &mut rng);
    let value = ValueModel::new(dims(), &mut rng);
    let pp = dir.path().join("policy.ckpt");
    let vp = dir.path().join("value.ckpt");
    checkpoint::save(&pp, &policy.net, ModelKind::Policy).unwrap();
    checkpoint::save(&vp, &value.net, ModelKind::Value).unwrap();

    let back = checkpoint::load(&pp, ModelKind::Policy).unwrap();
    assert_eq!(back.dims(), policy.net.dims());
    let max_err = back
        .params()
        .iter()
        .zip(policy.net.params())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(max_err < 1e-7);
    assert_eq!(checkpoint::load(&vp, ModelKind::Value).unwrap().out_dim(), 1);
    assert!(matches!(checkpoint::load(&vp, ModelKind::Policy), Err(CheckpointError::KindMismatch { .. })));
    assert!(matches!(
        checkpoint::load(&dir.path().join("missing"), ModelKind::Policy),
        Err(CheckpointError::Io(_))
    ));
}

#[test]
fn masked_sampling_from_random_weights_parses() {
    let mut rng = StdRng::seed_from_u64(7);
    let policy = PolicyModel::new(dims(), &mut rng);
    let prompt = [TokenId::BOS, ids("fetch")[0], TokenId::FENCE];
    let cfg = DecodeConfig {
        constraint: Constraint::Mask,
        max_new_tokens: 24,
        ..DecodeConfig::sampling()
    };
    for _ in 0..50 {
        let s = policy.sample(&prompt, &cfg, &mut rng).unwrap();
        assert!(s.terminated());
        assert!(s.response.len() <= 24);
        assert!(parse_ids(Vocab::standard(), &s.response).is_ok());
        assert_eq!(s.logp.len(), s.response.len());
        let rescored = policy.score(&prompt, &s.response, &cfg).unwrap();
        for (a, b) in s.logp.iter().zip(&rescored) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}

#[test]
fn supervised_pretraining_learns_a_mapping() {
    let mut rng = StdRng::seed_from_u64(1);
    let mut policy = PolicyModel::new(dims(), &mut rng);
    let pair = |p: &str, r: &str| {
        let mut prompt = vec![TokenId::BOS];
        prompt.extend(ids(p));
        prompt.push(TokenId::FENCE);
        let mut response = ids(r);
        response.push(TokenId::EOS);
        Example { prompt, response }
    };
    let data = vec![
        pair("say hello", "say ( hello )"),
        pair("fetch cup", "pick ( cup )"),
        pair("go to lab", "go_to ( lab )"),
    ];
    let losses = pretrain_supervised(&mut policy, &data, 400, PretrainConfig { lr: 3e-3, ..PretrainConfig::default() }, &mut rng).unwrap();
    assert!(losses.last().unwrap() < &0.1, "final loss {:?}", losses.last());
    for ex in &data {
        let s = policy.sample(&ex.prompt, &DecodeConfig { max_new_tokens: 12, ..DecodeConfig::greedy() }, &mut rng).unwrap();
        assert_eq!(s.response, ex.response);
    }
}
