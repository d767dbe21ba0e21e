mod common;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use samrl::corpus::EssayRecord;
use samrl::harness::pretrain_fold;
use samrl::nn::Matrix;
use samrl::policy::{generate, AnchorModel, DecodeMode, PolicyConfig, PolicyParams};
use samrl::ppo::*;

fn train_essays(prep: &samrl::harness::PreparedExperiment) -> Vec<&EssayRecord> {
    prep.essays(&prep.splits[0].train)
}

#[test]
fn rollouts_against_identical_anchor_have_zero_kl() {
    let (cfg, prep) = common::micro();
    let p = PolicyParams::new(cfg.policy.clone(), prep.vocab.len()).unwrap();
    let anchor = AnchorModel::freeze(&p);
    let essays: Vec<_> = train_essays(&prep).into_iter().take(4).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut batch = collect_rollouts(&p, &anchor, &essays, prep.task(), &cfg.trainer, 0.5, &mut rng).unwrap();
    for r in &batch.rollouts {
        assert_eq!(r.logprobs.len(), r.len());
        assert_eq!(r.anchor_logprobs.len(), r.len());
        assert_eq!(r.values.len(), r.len());
        assert!(r.kl_terms().iter().all(|&k| k == 0.0));
        assert!(r.logprobs.iter().all(|&l| l <= 0.0));
    }
    let again = score_batch(&batch.rollouts, &essays, prep.task(), &cfg.trainer, 0.5).unwrap();
    for (a, b) in again.r_q.iter().zip(&batch.bundle.r_q) {
        assert!((a - b).abs() < 1e-12);
    }
    assert!((again.r_m - batch.bundle.r_m).abs() < 1e-12);
    shape_batch(&mut batch, prep.vocab.eos(), &cfg.trainer).unwrap();
    for (i, r) in batch.rollouts.iter().enumerate() {
        let at = reward_index(&r.tokens, prep.vocab.eos());
        for (t, &x) in r.shaped[0].iter().enumerate() {
            assert_eq!(x, if t == at { batch.bundle.r_q[i] } else { 0.0 });
        }
    }
}

#[test]
fn training_is_deterministic_and_leaves_anchor_frozen() {
    let (cfg, prep) = common::micro();
    let pre = pretrain_fold(&prep, &cfg, 0, 0).unwrap();
    let anchor = AnchorModel::freeze(&pre.params);
    let hash = anchor.params().hash();
    let essay = &train_essays(&prep)[0].tokens;
    let sample = |a: &AnchorModel| {
        generate(a.params(), essay, &prep.vocab, DecodeMode::Sampled { temperature: 1.0 }, 23, &mut ChaCha8Rng::seed_from_u64(1)).unwrap()
    };
    let before = sample(&anchor);
    let a = train_rl(pre.params.clone(), &anchor, &train_essays(&prep), prep.task(), &cfg.trainer, &Variant::BiQ).unwrap();
    let b = train_rl(pre.params.clone(), &anchor, &train_essays(&prep), prep.task(), &cfg.trainer, &Variant::BiQ).unwrap();
    assert_eq!(a.log, b.log);
    assert_eq!(a.policy.hash(), b.policy.hash());
    assert_ne!(a.policy.hash(), pre.params.hash());
    assert_eq!(anchor.params().hash(), hash);
    assert_eq!(sample(&anchor), before);
    for r in &a.log.records {
        assert!((r.w_q + r.w_m - 1.0).abs() < 1e-12);
        assert!(r.w_q > 0.0 && r.w_m > 0.0);
    }
}

#[test]
fn variant_semantics() {
    let (cfg, prep) = common::micro();
    let pre = pretrain_fold(&prep, &cfg, 0, 0).unwrap();
    let anchor = AnchorModel::freeze(&pre.params);
    let run = |v: &Variant| train_rl(pre.params.clone(), &anchor, &train_essays(&prep), prep.task(), &cfg.trainer, v).unwrap();
    let m = run(&Variant::SasrlM);
    assert!(m.log.records.iter().all(|r| r.loss_q.is_none() && r.loss_m.is_some() && r.w_q == 0.0 && r.w_m == 1.0));
    let custom = run(&Variant::Custom(VariantPlan {
        use_q: false,
        use_m: true,
        weights: WeightMode::Fixed { w_q: 0.0, w_m: 1.0 },
        lambda_q: None,
    }));
    assert_eq!(m.log, custom.log);
    let fixed = run(&Variant::Fixed { w_q: 0.3, w_m: 0.7 });
    assert!(fixed.log.records.iter().all(|r| r.w_q == 0.3 && r.w_m == 0.7));
    let q = run(&Variant::SasrlQ);
    assert!(q.log.records.iter().all(|r| r.loss_m.is_none() && r.loss_q.is_some()));
    assert!(train_rl(pre.params.clone(), &anchor, &train_essays(&prep), prep.task(), &cfg.trainer, &Variant::ArtsBaseline).is_err());
}

#[test]
fn full_ppo_loss_gradient_matches_finite_differences() {
    let (mut p, seqs, bos) = common::micro_batch();
    let plan = Variant::BiQ.plan().unwrap();
    let coef = LossCoefficients { clip_epsilon: 0.2, c1: 0.5, c2: 0.01 };
    let w = [0.4, 0.6];
    let (_, grads) = batch_loss(&p, &seqs, &plan, w, &coef, bos).unwrap();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for k in 0..p.store().len() {
        for i in (0..p.store().tensors()[k].data.len()).step_by(3) {
            let orig = p.store().tensors()[k].data[i];
            p.store_mut().tensors_mut()[k].data[i] = orig + h;
            let up = batch_loss(&p, &seqs, &plan, w, &coef, bos).unwrap().0.total;
            p.store_mut().tensors_mut()[k].data[i] = orig - h;
            let down = batch_loss(&p, &seqs, &plan, w, &coef, bos).unwrap().0.total;
            p.store_mut().tensors_mut()[k].data[i] = orig;
            let fd = (up - down) / (2.0 * h);
            let an = grads[k].data[i];
            let rel = (fd - an).abs() / (fd.abs() + an.abs()).max(1e-6);
            worst = worst.max(rel);
            checked += 1;
        }
    }
    assert!(checked > 100);
    assert!(worst < 1e-4, "worst relative error {worst}");
}

#[test]
fn vanishing_clip_reduces_to_policy_gradient() {
    let (p, mut seqs, bos) = common::micro_batch();
    // collection-time policy equals the current one: every ratio is exactly 1
    for s in &mut seqs {
        s.old_logprobs = samrl::policy::token_logprobs(&p, &s.essay, &s.tokens, &samrl_vocab()).unwrap();
    }
    let plan = Variant::SasrlQ.plan().unwrap();
    let coef = LossCoefficients { clip_epsilon: 1e-12, c1: 0.0, c2: 0.0 };
    let (_, grads) = batch_loss(&p, &seqs, &plan, [1.0, 0.0], &coef, bos).unwrap();
    // −(1/N) Σ Â_t ∇ log π(a_t), accumulated through the graph directly
    let n = seqs.iter().map(|s| s.tokens.len()).sum::<usize>() as f64;
    let mut expect = p.store().zeros_like();
    for s in &seqs {
        let mut g = samrl::nn::Graph::new(p.store());
        let f = p.forward(&mut g, &s.essay, &s.tokens, bos).unwrap();
        let logits = g.value(f.logits);
        let mut seed = Matrix::zeros(logits.rows, logits.cols);
        for t in 0..s.tokens.len() {
            let probs: Vec<f64> = samrl::nn::log_softmax(logits.row(t)).iter().map(|l| l.exp()).collect();
            for (j, pj) in probs.iter().enumerate() {
                let onehot = if j == s.tokens[t] as usize { 1.0 } else { 0.0 };
                seed.set(t, j, -s.advantages[0][t] * (onehot - pj) / n);
            }
        }
        g.backward(vec![(f.logits, seed)], &mut expect);
    }
    for (a, b) in grads.iter().zip(&expect) {
        for (x, y) in a.data.iter().zip(&b.data) {
            assert!((x - y).abs() <= 1e-6 * y.abs().max(1e-9), "{x} vs {y}");
        }
    }
}

fn samrl_vocab() -> samrl::vocab::Vocabulary {
    common::micro().1.vocab
}
