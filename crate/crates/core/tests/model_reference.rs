use qmamba::Error;
use qmamba::model::*;
use qmamba::model::{model_decode_step, model_prefill, synthetic_checkpoint, synthetic_input};

fn tiny() -> ModelConfig {
    ModelConfig { d_state: 8, head_dim: 16, n_heads: 8, ..ModelConfig::preset("tiny").unwrap() }
}

#[test]
fn zero_out_proj_is_identity() {
    let cfg = tiny();
    let mut m = synthetic_checkpoint(&cfg, 1).unwrap().cast::<f64>();
    m.zero_out_proj();
    m.norm_f = None;
    let x = synthetic_input(&cfg, 5, 2);
    let (f, _) = model_prefill(&m, &x).unwrap();
    let ModelInput::Hidden(h) = x else { unreachable!() };
    assert_eq!(f.output, h);
}

#[test]
fn zero_layers_is_final_norm() {
    let cfg = ModelConfig { n_layers: 0, ..tiny() };
    let mut m = synthetic_checkpoint(&cfg, 1).unwrap();
    m.norm_f = None;
    let x = synthetic_input(&cfg, 3, 4);
    let (f, caches) = model_prefill(&m, &x).unwrap();
    assert!(caches.is_empty());
    let ModelInput::Hidden(h) = x else { unreachable!() };
    assert_eq!(f.output, h.map(|&v| v as f32));
}

#[test]
fn streaming_matches_prefill() {
    let cfg = tiny();
    let m = synthetic_checkpoint(&cfg, 7).unwrap().cast::<f64>();
    let x = synthetic_input(&cfg, 6, 8);
    let (full, _) = model_prefill(&m, &x).unwrap();
    let (_, mut caches) = model_prefill(&m, &x.slice(0, 5)).unwrap();
    let last = model_decode_step(&m, &x.slice(5, 6), &mut caches).unwrap();
    assert_eq!(last.output.row(0), full.output.row(5));
}

#[test]
fn cache_snapshot_round_trip() {
    let cfg = tiny();
    let m = synthetic_checkpoint(&cfg, 9).unwrap();
    let (_, caches) = model_prefill(&m, &synthetic_input(&cfg, 4, 1)).unwrap();
    let f = m.caches_to_fmw(&caches).unwrap();
    assert_eq!(m.caches_from_fmw(&f).unwrap(), caches);
}

#[test]
fn mode_and_cache_errors() {
    let cfg = tiny();
    let m = synthetic_checkpoint(&cfg, 9).unwrap();
    let x = synthetic_input(&cfg, 2, 1);
    let mut caches = m.new_caches();
    assert!(matches!(model_decode_step(&m, &x, &mut caches), Err(Error::Cache(_))));
    assert!(matches!(model_decode_step(&m, &x.slice(0, 1), &mut caches[..1]), Err(Error::Cache(_))));
}

#[test]
fn token_range() {
    let cfg = ModelConfig { vocab_size: 5, ..tiny() };
    let m = synthetic_checkpoint(&cfg, 9).unwrap();
    assert!(matches!(model_prefill(&m, &ModelInput::Tokens(vec![1, 5])), Err(Error::TokenRange { id: 5, vocab: 5 })));
    let (f, _) = model_prefill(&m, &ModelInput::Tokens(vec![1, 4])).unwrap();
    assert_eq!((f.output.rows(), f.output.cols()), (2, 5));
}
