use super::*;
use crate::autodiff::grad_check;
use crate::maic::positional_encoding;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const LN2: f64 = std::f64::consts::LN_2;

fn m(rows: usize, cols: usize, data: &[f64]) -> Tensor {
    Tensor::matrix(rows, cols, data.to_vec()).unwrap()
}

fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::matrix(rows, cols, data).unwrap()
}

fn eval(f: impl FnOnce(&mut Tape) -> Result<Var>) -> f64 {
    let mut tape = Tape::new();
    let v = f(&mut tape).unwrap();
    tape.value(v).item().unwrap()
}

fn cos(a: &[f64], b: &[f64]) -> f64 {
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb)
}

fn sorted_unique(v: impl Iterator<Item = usize>) -> Vec<usize> {
    let mut v: Vec<usize> = v.collect();
    v.sort_unstable();
    v.dedup();
    v
}

fn oracle_alignment(e0: &Tensor, e1: &Tensor, nu: usize, pairs: &[(usize, usize)], tau: f64) -> f64 {
    let users = sorted_unique(pairs.iter().map(|p| p.0));
    let items = sorted_unique(pairs.iter().map(|p| p.1));
    let mut user_side = 0.0;
    for &u in &users {
        let (mut num, mut den) = (0.0, 0.0);
        for &i in &items {
            let x = (cos(e0.row(u), e1.row(nu + i)) / tau).exp();
            den += x;
            if pairs.contains(&(u, i)) {
                num += x;
            }
        }
        user_side += -(num / den).ln();
    }
    let mut item_side = 0.0;
    for &i in &items {
        let (mut num, mut den) = (0.0, 0.0);
        for &u in &users {
            let x = (cos(e0.row(nu + i), e1.row(u)) / tau).exp();
            den += x;
            if pairs.contains(&(u, i)) {
                num += x;
            }
        }
        item_side += -(num / den).ln();
    }
    user_side / users.len() as f64 + item_side / items.len() as f64
}

fn oracle_discrimination(e0: &Tensor, mm: &Tensor, fin: &Tensor, nu: usize, pairs: &[(usize, usize)], tau: f64) -> f64 {
    let users = sorted_unique(pairs.iter().map(|p| p.0));
    let items: Vec<usize> = sorted_unique(pairs.iter().map(|p| p.1)).into_iter().map(|i| i + nu).collect();
    let side = |nodes: &[usize]| {
        let mut acc = 0.0;
        for &a in nodes {
            let num = (cos(e0.row(a), mm.row(a)) / tau).exp();
            let den: f64 = nodes.iter().map(|&b| (cos(e0.row(a), fin.row(b)) / tau).exp()).sum();
            acc += -(num / den).ln();
        }
        acc / nodes.len() as f64
    };
    side(&users) + side(&items)
}

fn oracle_ranking(fin: &Tensor, nu: usize, b: &RankingBatch, tau: f64) -> f64 {
    let mut acc = 0.0;
    for s in 0..b.len() {
        let u = fin.row(b.users[s]);
        let cp = cos(u, fin.row(nu + b.positives[s]));
        let sum: f64 = b.negatives[s]
            .iter()
            .map(|&j| ((cos(u, fin.row(nu + j)) - cp) / tau).exp())
            .sum();
        acc += sum.ln();
    }
    acc / b.len() as f64
}

fn oracle_infonce(zt: &Tensor, zv: &Tensor, nu: usize, items: &[usize], tau: f64) -> f64 {
    let items = sorted_unique(items.iter().copied());
    let side = |a: &Tensor, b: &Tensor| {
        let mut acc = 0.0;
        for &i in &items {
            let num = (cos(a.row(nu + i), b.row(nu + i)) / tau).exp();
            let den: f64 = items.iter().map(|&j| (cos(a.row(nu + i), b.row(nu + j)) / tau).exp()).sum();
            acc += -(num / den).ln();
        }
        acc / items.len() as f64
    };
    0.5 * (side(zt, zv) + side(zv, zt))
}

/// 5 users, 6 items, every user has at least one positive in the batch.
fn random_instance(seed: u64, d: usize) -> (Vec<Tensor>, RankingBatch) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ts = (0..4).map(|_| random(11, d, &mut rng)).collect();
    let mut b = RankingBatch::default();
    for u in 0..5 {
        for _ in 0..2 {
            let pos = rng.random_range(0..6);
            let mut negs: Vec<usize> = (0..6).filter(|&j| j != pos).collect();
            negs.retain(|_| rng.random_bool(0.6));
            if negs.is_empty() {
                negs.push((pos + 1) % 6);
            }
            b.users.push(u);
            b.positives.push(pos);
            b.negatives.push(negs);
        }
    }
    (ts, b)
}

#[test]
fn propagate_examples() {
    let e0 = m(2, 2, &[1.0, 0.0, 0.0, 1.0]);
    let mut tape = Tape::new();
    let x = tape.constant(e0.clone());
    let id = Arc::new(SparseMatrix::identity(2));
    let p = propagate(&mut tape, &id, x, 3).unwrap();
    assert_eq!(p.layers.len(), 4);
    assert_eq!(tape.value(p.final_), &e0);

    let swap = Arc::new(SparseMatrix::from_triplets(2, 2, &[(0, 1, 1.0), (1, 0, 1.0)]).unwrap());
    let p = propagate(&mut tape, &swap, x, 2).unwrap();
    assert_eq!(tape.value(p.layers[1]).data(), &[0.0, 1.0, 1.0, 0.0]);
    let want = [2.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0, 2.0 / 3.0];
    for (g, w) in tape.value(p.final_).data().iter().zip(want) {
        assert!((g - w).abs() < 1e-15);
    }
    assert!(matches!(propagate(&mut tape, &Arc::new(SparseMatrix::identity(3)), x, 1), Err(Error::Shape(_))));
}

#[test]
fn propagation_is_linear() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let a = SparseMatrix::from_triplets(6, 6, &[(0, 3, 0.5), (3, 0, 0.5), (1, 2, 0.7), (2, 1, 0.7), (4, 5, 0.2), (5, 4, 0.2)]).unwrap();
    let a = Arc::new(a);
    let e0 = random(6, 4, &mut rng);
    let scaled = Tensor::matrix(6, 4, e0.data().iter().map(|v| v * -2.5).collect()).unwrap();
    let mut tape = Tape::new();
    let (x, y) = (tape.constant(e0), tape.constant(scaled));
    let (px, py) = (propagate(&mut tape, &a, x, 3).unwrap(), propagate(&mut tape, &a, y, 3).unwrap());
    for (g, w) in tape.value(py.final_).data().iter().zip(tape.value(px.final_).data()) {
        assert!((g - -2.5 * w).abs() < 1e-10);
    }
}

#[test]
fn score_examples() {
    assert_eq!(score(&[1.0, 0.0], &[0.0, 3.0]), 0.0);
    assert_eq!(score(&[0.6, 0.8], &[0.6, 0.8]), 1.0);
    assert_eq!(score(&[1.0, 2.0], &[3.0, -1.0]), 1.0);
}

#[test]
fn alignment_examples() {
    // One user, one item: candidates equal positives.
    let e = random(2, 3, &mut ChaCha8Rng::seed_from_u64(1));
    let v = eval(|t| {
        let x = t.constant(e.clone());
        alignment_loss(t, x, x, 1, &[(0, 0)], 0.2)
    });
    assert!(v.abs() < 1e-12);

    // All cosines equal: each side averages ln 2.
    let same = m(4, 2, &[1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0]);
    let v = eval(|t| {
        let x = t.constant(same.clone());
        alignment_loss(t, x, x, 2, &[(0, 0), (1, 1)], 0.2)
    });
    assert!((v - 2.0 * LN2).abs() < 1e-12, "{v}");
}

#[test]
fn alignment_matches_scalar_oracle() {
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (e0, e1) = (random(10, 5, &mut rng), random(10, 5, &mut rng));
        let pairs: Vec<(usize, usize)> = (0..9).map(|_| (rng.random_range(0..4), rng.random_range(0..6))).collect();
        let got = eval(|t| {
            let (a, b) = (t.constant(e0.clone()), t.constant(e1.clone()));
            alignment_loss(t, a, b, 4, &pairs, 0.3)
        });
        let want = oracle_alignment(&e0, &e1, 4, &pairs, 0.3);
        assert!((got - want).abs() < 1e-8, "{got} vs {want}");
        assert!(got >= 0.0);
    }
}

#[test]
fn discrimination_examples() {
    let e = random(2, 3, &mut ChaCha8Rng::seed_from_u64(2));
    let v = eval(|t| {
        let x = t.constant(e.clone());
        discrimination_loss(t, x, x, x, 1, &[(0, 0)], 0.2)
    });
    assert!(v.abs() < 1e-12);

    let e0 = m(2, 2, &[1.0, 0.0, 1.0, 0.0]);
    let fin = m(2, 2, &[0.0, 1.0, 0.0, 1.0]);
    let v = eval(|t| {
        let (a, f) = (t.constant(e0.clone()), t.constant(fin.clone()));
        discrimination_loss(t, a, a, f, 1, &[(0, 0)], 1.0)
    });
    // One user side and one item side, each −1.
    assert!((v + 2.0).abs() < 1e-12, "{v}");
}

#[test]
fn discrimination_matches_scalar_oracle() {
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 50);
        let (e0, mm, fin) = (random(12, 4, &mut rng), random(12, 4, &mut rng), random(12, 4, &mut rng));
        let pairs: Vec<(usize, usize)> = (0..8).map(|_| (rng.random_range(0..4), rng.random_range(0..8))).collect();
        let got = eval(|t| {
            let (a, b, c) = (t.constant(e0.clone()), t.constant(mm.clone()), t.constant(fin.clone()));
            discrimination_loss(t, a, b, c, 4, &pairs, 0.2)
        });
        let want = oracle_discrimination(&e0, &mm, &fin, 4, &pairs, 0.2);
        assert!((got - want).abs() < 1e-8, "{got} vs {want}");
    }
}

#[test]
fn sce_is_the_sum() {
    assert_eq!(
        eval(|t| {
            let (a, b) = (t.constant(Tensor::scalar(0.0).unwrap()), t.constant(Tensor::scalar(0.0).unwrap()));
            sce_loss(t, a, b)
        }),
        0.0
    );
    let v = eval(|t| {
        let (a, b) = (t.constant(Tensor::scalar(0.7).unwrap()), t.constant(Tensor::scalar(-0.2).unwrap()));
        sce_loss(t, a, b)
    });
    assert!((v - 0.5).abs() < 1e-15);

    let (ts, b) = random_instance(3, 6);
    let mut tape = Tape::new();
    let x: Vec<Var> = ts.iter().map(|t| tape.constant(t.clone())).collect();
    let a = alignment_loss(&mut tape, x[0], x[1], 5, &b.pairs(), 0.2).unwrap();
    let d = discrimination_loss(&mut tape, x[0], x[2], x[3], 5, &b.pairs(), 0.2).unwrap();
    let s = sce_loss(&mut tape, a, d).unwrap();
    assert_eq!(tape.value(s).item().unwrap(), tape.value(a).item().unwrap() + tape.value(d).item().unwrap());
}

fn single(users: &[usize], pos: &[usize], negs: &[&[usize]]) -> RankingBatch {
    RankingBatch {
        users: users.to_vec(),
        positives: pos.to_vec(),
        negatives: negs.iter().map(|n| n.to_vec()).collect(),
    }
}

#[test]
fn ranking_examples() {
    // User 0; items 0, 1, 2 at node rows 1, 2, 3.
    let e = m(4, 2, &[1.0, 0.0, 1.0, 0.0, 2.0, 0.0, 0.0, 1.0]);
    let run = |b: &RankingBatch, tau: f64| {
        eval(|t| {
            let x = t.constant(e.clone());
            ranking_loss(t, x, 1, b, tau)
        })
    };
    assert!(run(&single(&[0], &[0], &[&[1]]), 0.2).abs() < 1e-12);
    assert!((run(&single(&[0], &[0], &[&[2]]), 1.0) + 1.0).abs() < 1e-12);
    let e2 = m(4, 2, &[1.0, 0.0, 1.0, 0.0, 2.0, 0.0, 3.0, 0.0]);
    let v = eval(|t| {
        let x = t.constant(e2.clone());
        ranking_loss(t, x, 1, &single(&[0], &[0], &[&[1, 2]]), 0.2)
    });
    assert!((v - LN2).abs() < 1e-12);
    let err = eval_err(|t| {
        let x = t.constant(e.clone());
        ranking_loss(t, x, 1, &single(&[0], &[0], &[&[0, 1]]), 0.2)
    });
    assert!(matches!(err, Error::Contract(_)));
}

fn eval_err(f: impl FnOnce(&mut Tape) -> Result<Var>) -> Error {
    let mut tape = Tape::new();
    f(&mut tape).unwrap_err()
}

#[test]
fn ranking_matches_scalar_oracle() {
    for seed in 0..10 {
        let (ts, b) = random_instance(seed + 10, 5);
        let got = eval(|t| {
            let x = t.constant(ts[3].clone());
            ranking_loss(t, x, 5, &b, 0.2)
        });
        let want = oracle_ranking(&ts[3], 5, &b, 0.2);
        assert!((got - want).abs() < 1e-8, "{got} vs {want}");
    }
}

#[test]
fn negative_checks() {
    let train = [vec![1, 3], vec![0]];
    let ok = single(&[0, 1], &[1, 0], &[&[0, 2], &[1, 2, 3]]);
    assert!(ok.check_negatives(|u| &train[u]).is_ok());
    let bad = single(&[0], &[1], &[&[2, 3]]);
    assert!(matches!(bad.check_negatives(|u| &train[u]), Err(Error::Contract(_))));
    let dup = single(&[0], &[1], &[&[2, 2]]);
    assert!(matches!(dup.check_negatives(|u| &train[u]), Err(Error::Contract(_))));
}

#[test]
fn infonce_examples() {
    let z = random(3, 4, &mut ChaCha8Rng::seed_from_u64(8));
    let v = eval(|t| {
        let (a, b) = (t.constant(z.clone()), t.constant(random(3, 4, &mut ChaCha8Rng::seed_from_u64(9))));
        modal_infonce(t, a, b, 1, &[1], 0.2)
    });
    assert!(v.abs() < 1e-12);

    let z = m(2, 2, &[1.0, 0.0, 0.0, 1.0]);
    let v = eval(|t| {
        let a = t.constant(z.clone());
        modal_infonce(t, a, a, 0, &[0, 1], 1.0)
    });
    let want = -(1f64.exp() / (1f64.exp() + 1.0)).ln();
    assert!((v - want).abs() < 1e-12);
    assert!((v - 0.3133).abs() < 5e-5);
    assert!(matches!(
        eval_err(|t| {
            let a = t.constant(z.clone());
            modal_infonce(t, a, a, 0, &[], 1.0)
        }),
        Error::Contract(_)
    ));
}

#[test]
fn infonce_matches_scalar_oracle() {
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 70);
        let (zt, zv) = (random(12, 6, &mut rng), random(12, 6, &mut rng));
        let items: Vec<usize> = (0..7).map(|_| rng.random_range(0..9)).collect();
        let got = eval(|t| {
            let (a, b) = (t.constant(zt.clone()), t.constant(zv.clone()));
            modal_infonce(t, a, b, 3, &items, 0.2)
        });
        let want = oracle_infonce(&zt, &zv, 3, &items, 0.2);
        assert!((got - want).abs() < 1e-8);
    }
}

#[test]
fn total_loss_examples() {
    let w = LossWeights {
        lambda_m: 0.01,
        lambda_s: 0.1,
        ..LossWeights::default()
    };
    let v = eval(|t| {
        let (a, b, c) = (t.constant(Tensor::scalar(1.0).unwrap()), t.constant(Tensor::scalar(2.0).unwrap()), t.constant(Tensor::scalar(3.0).unwrap()));
        total_loss(t, a, b, c, &w)
    });
    assert!((v - 1.32).abs() < 1e-12);
    let zero = LossWeights {
        lambda_m: 0.0,
        lambda_s: 0.0,
        ..w
    };
    let v = eval(|t| {
        let (a, b, c) = (t.constant(Tensor::scalar(1.5).unwrap()), t.constant(Tensor::scalar(2.0).unwrap()), t.constant(Tensor::scalar(3.0).unwrap()));
        total_loss(t, a, b, c, &zero)
    });
    assert_eq!(v, 1.5);
}

#[test]
fn total_gradient_is_weighted_sum_of_parts() {
    let (ts, b) = random_instance(21, 8);
    let w = LossWeights::default();
    let mut tape = Tape::new();
    let x: Vec<Var> = ts.iter().map(|t| tape.param(t.clone())).collect();
    let rec = ranking_loss(&mut tape, x[3], 5, &b, w.tau).unwrap();
    let modal = modal_infonce(&mut tape, x[0], x[1], 5, &b.positives, w.tau).unwrap();
    let a = alignment_loss(&mut tape, x[0], x[1], 5, &b.pairs(), w.tau_a).unwrap();
    let d = discrimination_loss(&mut tape, x[0], x[2], x[3], 5, &b.pairs(), w.tau_d).unwrap();
    let sce = sce_loss(&mut tape, a, d).unwrap();
    let total = total_loss(&mut tape, rec, modal, sce, &w).unwrap();
    let g = |root: Var| tape.backward(root).unwrap();
    let (gt, gr, gm, gs) = (g(total), g(rec), g(modal), g(sce));
    for (v, t) in x.iter().zip(&ts) {
        let parts = [gr.get_or_zeros(*v, t), gm.get_or_zeros(*v, t), gs.get_or_zeros(*v, t)];
        for (k, want) in gt.get_or_zeros(*v, t).data().iter().enumerate() {
            let sum = parts[0].data()[k] + w.lambda_m * parts[1].data()[k] + w.lambda_s * parts[2].data()[k];
            assert!((want - sum).abs() < 1e-10);
        }
    }
}

#[test]
fn losses_pass_gradient_check() {
    let (ts, b) = random_instance(33, 8);
    let w = LossWeights::default();
    let pairs = b.pairs();
    type LossFn<'a> = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var> + 'a>;
    let fns: Vec<(&str, LossFn)> = vec![
        ("alignment", Box::new(|t, x| alignment_loss(t, x[0], x[1], 5, &pairs, w.tau_a))),
        ("discrimination", Box::new(|t, x| discrimination_loss(t, x[0], x[2], x[3], 5, &pairs, w.tau_d))),
        (
            "sce",
            Box::new(|t, x| {
                let a = alignment_loss(t, x[0], x[1], 5, &pairs, w.tau_a)?;
                let d = discrimination_loss(t, x[0], x[2], x[3], 5, &pairs, w.tau_d)?;
                sce_loss(t, a, d)
            }),
        ),
        ("ranking", Box::new(|t, x| ranking_loss(t, x[3], 5, &b, w.tau))),
        ("infonce", Box::new(|t, x| modal_infonce(t, x[0], x[1], 5, &b.positives, w.tau))),
    ];
    for (name, f) in fns {
        let report = grad_check(|t: &mut Tape, x: &[Var]| f(t, x), &ts, 1e-4, 1e-4, 200).unwrap();
        assert!(report.passed(), "{name}: {}", report.max_rel_error());
    }
}

fn permuted(b: &RankingBatch, perm: &[usize]) -> RankingBatch {
    RankingBatch {
        users: perm.iter().map(|&k| b.users[k]).collect(),
        positives: perm.iter().map(|&k| b.positives[k]).collect(),
        negatives: perm.iter().map(|&k| b.negatives[k].clone()).collect(),
    }
}

#[test]
fn losses_ignore_batch_order() {
    let (ts, b) = random_instance(44, 6);
    let mut perm: Vec<usize> = (0..b.len()).collect();
    perm.reverse();
    perm.swap(0, 3);
    let pb = permuted(&b, &perm);
    let all = |b: &RankingBatch| {
        let mut tape = Tape::new();
        let x: Vec<Var> = ts.iter().map(|t| tape.constant(t.clone())).collect();
        let p = b.pairs();
        [
            ranking_loss(&mut tape, x[3], 5, b, 0.2),
            modal_infonce(&mut tape, x[0], x[1], 5, &b.positives, 0.2),
            alignment_loss(&mut tape, x[0], x[1], 5, &p, 0.2),
            discrimination_loss(&mut tape, x[0], x[2], x[3], 5, &p, 0.2),
        ]
        .map(|v| tape.value(v.unwrap()).item().unwrap())
    };
    for (a, c) in all(&b).iter().zip(all(&pb)) {
        assert!((a - c).abs() < 1e-10);
    }
}

#[test]
fn ranking_loss_and_order_are_scale_invariant() {
    let (ts, b) = random_instance(55, 6);
    let fin = &ts[3];
    let scaled = Tensor::matrix(11, 6, fin.data().iter().map(|v| v * 3.7).collect()).unwrap();
    let loss = |e: &Tensor| {
        eval(|t| {
            let x = t.constant(e.clone());
            ranking_loss(t, x, 5, &b, 0.2)
        })
    };
    assert!((loss(fin) - loss(&scaled)).abs() < 1e-10);
    let order = |e: &Tensor| {
        let mut idx: Vec<usize> = (0..6).collect();
        idx.sort_by(|&a, &c| score(e.row(0), e.row(5 + c)).total_cmp(&score(e.row(0), e.row(5 + a))).then(a.cmp(&c)));
        idx
    };
    assert_eq!(order(fin), order(&scaled));
    let s = score(fin.row(0), fin.row(5));
    assert!((score(scaled.row(0), scaled.row(5)) - 3.7 * 3.7 * s).abs() < 1e-12);
}

fn tiny_model(seed: u64) -> (ModelState, RankingBatch) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (nu, ni, d) = (5, 6, 8);
    let text = random(nu + ni, 7, &mut rng);
    let visual = random(nu + ni, 9, &mut rng);
    let inputs = NodeInputs::new(nu, text, visual, d).unwrap();
    let mut trip = Vec::new();
    for u in 0..nu {
        for i in [u % ni, (u + 2) % ni] {
            let w = rng.random_range(0.2..1.0);
            trip.push((u, nu + i, w));
            trip.push((nu + i, u, w));
        }
    }
    let graph = Arc::new(crate::graph::normalize_adjacency(&SparseMatrix::from_triplets(11, 11, &trip).unwrap()).unwrap());
    let config = ModelConfig {
        dim: d,
        ..ModelConfig::default()
    };
    let params = ProjectionParams::init(d, 7, 9, seed);
    let (_, b) = random_instance(seed, d);
    (ModelState::new(config, params, inputs, graph).unwrap(), b)
}

#[test]
fn full_model_total_passes_gradient_check() {
    let (model, b) = tiny_model(5);
    let w = LossWeights::default();
    let report = grad_check(
        |t: &mut Tape, x: &[Var]| Ok(model.losses(t, &ParamVars::from_slice(x), &b, &w)?.total),
        &model.params.to_vec(),
        1e-4,
        1e-4,
        60,
    )
    .unwrap();
    assert!(report.passed(), "{}", report.max_rel_error());
}

#[test]
fn embeddings_match_forward_pass() {
    let (model, _) = tiny_model(6);
    let emb = model.embeddings().unwrap();
    let mut tape = Tape::new();
    let vars = ParamVars::register(&mut tape, &model.params);
    let f = model.forward(&mut tape, &vars).unwrap();
    assert_eq!(&emb.final_, tape.value(f.propagation.final_));
    assert_eq!(emb.items().rows(), 6);
    assert_eq!(emb.users().rows(), 5);
}

#[test]
fn model_state_checks_shapes() {
    let (model, _) = tiny_model(7);
    let bad_graph = Arc::new(SparseMatrix::identity(4));
    assert!(matches!(
        ModelState::new(model.config.clone(), model.params.clone(), model.inputs.clone(), bad_graph),
        Err(Error::Shape(_))
    ));
    let _ = positional_encoding(2, 2).unwrap();
    assert!(LossWeights { tau: 0.0, ..LossWeights::default() }.validate().is_err());
    assert!(LossWeights { n_neg: 0, ..LossWeights::default() }.validate().is_err());
}
