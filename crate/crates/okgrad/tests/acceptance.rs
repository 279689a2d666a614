//! Acceptance suite: one test per release gate, each printing a PASS line
//! with its measured numbers. Run with `cargo test --test acceptance --
//! --nocapture` to see them. Tests serialize themselves so the stated
//! runtime bounds are meaningful on a shared machine.

mod common;

use std::time::Instant;

use okgrad::analysis::{estimator_moments, kf_avg_compress, noise_protocol, SampleBudget,
    FILTER_THRESHOLD};
use okgrad::approximators::AlgoSpec;
use okgrad::kronsum::{ktp_mix, ok_compress, sign_trick_mix, KronFormat, KroneckerSum,
    TripleSum, TripleTerm};
use okgrad::lowrank::{idempotent_with_diagonal, opt, sample_opt_diag, split_index};
use okgrad::rng::CounterRng;
use okgrad::rnn::{dl_dh, forward, immediate_factor, softmax_loss, tbptt_gradient, RhnParams};
use okgrad::smalllin::{dot, svd, Mat};
use okgrad::train::{train_loop, TaskKind, TrainConfig};

use common::{fd_full_gradient, gen_corpus, max_rel_gap, serial};

#[test]
fn criterion_01_rtrl_bptt_fd_equivalence() {
    let _guard = serial();
    let started = Instant::now();

    let n = 4;
    let vocab = 3;
    let params = RhnParams::glorot(n, vocab, vocab, 2024);
    let mut stream = CounterRng::new(91).derive(&[7]);
    let inputs: Vec<usize> = (0..12).map(|_| stream.below(vocab as u64) as usize).collect();
    let targets: Vec<Option<usize>> =
        (0..12).map(|_| Some(stream.below(vocab as u64) as usize)).collect();
    let h0 = vec![0.0; n];

    // Exact forward sensitivity, accumulated per step.
    let mut algo = AlgoSpec::Exact.build(&params, CounterRng::new(0));
    let mut rtrl_rec = vec![0.0; params.rec_len()];
    let mut rtrl_out = Mat::zeros(n + 1, vocab);
    let mut h = h0.clone();
    for (&x, &tg) in inputs.iter().zip(&targets) {
        let step = forward(&params, &h, x).unwrap();
        algo.advance(&params, &step);
        if let Some(t) = tg {
            let (_, dlogits) = softmax_loss(&params, &step.h_next, t);
            algo.estimate_into(&params, &dl_dh(&params, &dlogits), &mut rtrl_rec);
            okgrad::rnn::accumulate_out_grad(&mut rtrl_out, &step.h_next, &dlogits, 1.0);
        }
        h = step.h_next.clone();
    }

    // Full-window backpropagation.
    let (bptt, _, _) = tbptt_gradient(&params, &inputs, &targets, &h0).unwrap();

    // Independent central finite differences.
    let (fd_rec, fd_out) = fd_full_gradient(&params, &inputs, &targets, &h0, 1e-5);

    let analytic_gap = max_rel_gap(&rtrl_rec, &bptt.rec)
        .max(max_rel_gap(rtrl_out.data(), bptt.out.data()));
    assert!(analytic_gap <= 1e-6, "rtrl vs bptt gap {analytic_gap}");
    let fd_gap_rtrl =
        max_rel_gap(&rtrl_rec, &fd_rec).max(max_rel_gap(rtrl_out.data(), fd_out.data()));
    let fd_gap_bptt =
        max_rel_gap(&bptt.rec, &fd_rec).max(max_rel_gap(bptt.out.data(), fd_out.data()));
    assert!(fd_gap_rtrl <= 1e-4, "rtrl vs fd gap {fd_gap_rtrl}");
    assert!(fd_gap_bptt <= 1e-4, "bptt vs fd gap {fd_gap_bptt}");

    let elapsed = started.elapsed().as_secs_f64();
    assert!(elapsed < 1.0, "took {elapsed:.3}s");
    println!(
        "PASS criterion 1: rtrl|bptt gap {analytic_gap:.2e}, vs fd {:.2e}, {elapsed:.3}s",
        fd_gap_rtrl.max(fd_gap_bptt)
    );
}

#[test]
fn criterion_02_immediate_factorization_identity() {
    let _guard = serial();
    let started = Instant::now();

    let n = 8;
    let vocab = 4;
    let params = RhnParams::glorot(n, vocab, vocab, 321);
    let mut stream = CounterRng::new(17).derive(&[3]);
    let mut h = vec![0.0; n];
    let eps = 1e-5;
    let mut worst: f64 = 0.0;
    for _step_idx in 0..100 {
        let x = stream.below(vocab as u64) as usize;
        let step = forward(&params, &h, x).unwrap();
        let dense = immediate_factor(&step).dense();
        // Finite differences of h_next over every recurrent parameter.
        for a in 0..params.p() {
            for j in 0..n {
                for (which, off) in [(0usize, 0usize), (1usize, n)] {
                    let mut perturbed = params.clone();
                    {
                        let m = if which == 0 { &mut perturbed.w_g } else { &mut perturbed.w_t };
                        let v = m.at(a, j) + eps;
                        m.set(a, j, v);
                    }
                    let plus = forward(&perturbed, &h, x).unwrap().h_next;
                    {
                        let m = if which == 0 { &mut perturbed.w_g } else { &mut perturbed.w_t };
                        let v = m.at(a, j) - 2.0 * eps;
                        m.set(a, j, v);
                    }
                    let minus = forward(&perturbed, &h, x).unwrap().h_next;
                    for row in 0..n {
                        let fd = (plus[row] - minus[row]) / (2.0 * eps);
                        let an = dense.at(row, a * 2 * n + off + j);
                        worst = worst.max((an - fd).abs() / an.abs().max(fd.abs()).max(1e-3));
                    }
                }
            }
        }
        h = step.h_next;
    }
    assert!(worst <= 1e-4, "worst relative gap {worst}");
    let elapsed = started.elapsed().as_secs_f64();
    assert!(elapsed < 10.0, "took {elapsed:.3}s");
    println!("PASS criterion 2: factorization identity, worst gap {worst:.2e}, {elapsed:.2}s");
}

#[test]
fn criterion_03_unbiasedness_by_enumeration() {
    let _guard = serial();
    let started = Instant::now();

    // opt on 100 seeded random matrices up to 5x5, r <= 3.
    let mut worst: f64 = 0.0;
    for seed in 0..100u64 {
        let mut rng = CounterRng::new(seed ^ 0xc3).derive(&[seed]);
        let rows = 2 + rng.below(4) as usize;
        let cols = 2 + rng.below(4) as usize;
        let r = 1 + rng.below(rows.min(cols).min(3) as u64) as usize;
        let c = Mat::from_fn(rows, cols, |_, _| rng.normal());
        let m = estimator_moments(
            &c,
            |s| Ok(opt(&c, r, s)?.product()),
            SampleBudget::Exhaustive { max_draws: 16 },
        )
        .unwrap();
        worst = worst.max(m.rel_mean_err);
    }
    assert!(worst <= 1e-10, "opt mean error {worst}");

    // sample_opt_diag on seeded diagonals.
    let mut worst_diag: f64 = 0.0;
    for seed in 0..50u64 {
        let mut rng = CounterRng::new(seed).derive(&[0xd1a6]);
        let len = 2 + rng.below(5) as usize;
        let r = 1 + rng.below((len - 1) as u64) as usize;
        let mut d: Vec<f64> = (0..len).map(|_| rng.uniform() * 3.0).collect();
        d.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let target = Mat::from_fn(len, len, |i, j| if i == j { d[i] } else { 0.0 });
        let m = estimator_moments(
            &target,
            |s| Ok(sample_opt_diag(&d, r, s)?.product()),
            SampleBudget::Exhaustive { max_draws: 16 },
        )
        .unwrap();
        worst_diag = worst_diag.max(m.rel_mean_err);
    }
    assert!(worst_diag <= 1e-10, "sample_opt_diag mean error {worst_diag}");

    // Mixers and compression at test scale.
    let fmt = KronFormat::new(1, 3, 2, 2).unwrap();
    let mut worst_mix: f64 = 0.0;
    for seed in 0..25u64 {
        let mut rng = CounterRng::new(seed).derive(&[0x517]);
        let u = Mat::from_fn(1, 3, |_, _| rng.normal());
        let a = Mat::from_fn(2, 2, |_, _| rng.normal());
        let hm = Mat::from_fn(1, 3, |_, _| rng.normal());
        let dm = Mat::from_fn(2, 2, |_, _| rng.normal());
        let mut g = KroneckerSum::new(fmt);
        g.push_term(u.clone(), a.clone()).unwrap();
        g.push_term(hm.clone(), dm.clone()).unwrap();
        let want = g.dense().unwrap();
        let m = estimator_moments(
            &want,
            |s| {
                let (mu, ma) = sign_trick_mix((&u, &a), (&hm, &dm), s)?;
                let mut one = KroneckerSum::new(fmt);
                one.push_term(mu, ma).unwrap();
                one.dense()
            },
            SampleBudget::Exhaustive { max_draws: 16 },
        )
        .unwrap();
        worst_mix = worst_mix.max(m.rel_mean_err);

        // Triple mixer.
        let t1 = TripleTerm {
            a: (0..3).map(|_| rng.normal()).collect(),
            b: (0..2).map(|_| rng.normal()).collect(),
            c: (0..4).map(|_| rng.normal()).collect(),
        };
        let t2 = TripleTerm {
            a: (0..3).map(|_| rng.normal()).collect(),
            b: (0..2).map(|_| rng.normal()).collect(),
            c: (0..4).map(|_| rng.normal()).collect(),
        };
        let want = TripleSum::new(vec![t1.clone(), t2.clone()]).unwrap().dense().unwrap();
        let m = estimator_moments(
            &want,
            |s| TripleSum::new(vec![ktp_mix((&t1.a, &t1.b, &t1.c), (&t2.a, &t2.b, &t2.c), s)?])
                .unwrap()
                .dense(),
            SampleBudget::Exhaustive { max_draws: 16 },
        )
        .unwrap();
        worst_mix = worst_mix.max(m.rel_mean_err);

        // Three-term compression to two.
        let mut g3 = KroneckerSum::new(fmt);
        for _ in 0..3 {
            g3.push_term(
                Mat::from_fn(1, 3, |_, _| rng.normal()),
                Mat::from_fn(2, 2, |_, _| rng.normal()),
            )
            .unwrap();
        }
        let want = g3.dense().unwrap();
        let m = estimator_moments(
            &want,
            |s| ok_compress(&g3, 2, s)?.dense(),
            SampleBudget::Exhaustive { max_draws: 16 },
        )
        .unwrap();
        worst_mix = worst_mix.max(m.rel_mean_err);
    }
    assert!(worst_mix <= 1e-10, "mixer mean error {worst_mix}");

    let elapsed = started.elapsed().as_secs_f64();
    assert!(elapsed < 30.0, "took {elapsed:.2}s");
    println!(
        "PASS criterion 3: enumeration unbiasedness, worst rel err {:.2e}, {elapsed:.2}s",
        worst.max(worst_diag).max(worst_mix)
    );
}

#[test]
fn criterion_04_variance_identity() {
    let _guard = serial();

    // Worked instance: exactly 3/2.
    let d = [1.0, 1.0, 1.0];
    let target = Mat::from_fn(3, 3, |i, j| if i == j { 1.0 } else { 0.0 });
    let m = estimator_moments(
        &target,
        |s| Ok(sample_opt_diag(&d, 2, s)?.product()),
        SampleBudget::Exhaustive { max_draws: 16 },
    )
    .unwrap();
    assert!((m.variance - 1.5).abs() <= 1e-12, "worked instance variance {}", m.variance);

    // Seeded diagonals: enumerated variance equals s1^2/k - s2 exactly.
    let mut worst: f64 = 0.0;
    for seed in 0..50u64 {
        let mut rng = CounterRng::new(seed).derive(&[0x4a7]);
        let len = 2 + rng.below(5) as usize;
        let r = 1 + rng.below((len - 1) as u64) as usize;
        let mut d: Vec<f64> = (0..len).map(|_| rng.uniform() * 2.0).collect();
        d.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let bound = split_index(&d, r).unwrap().variance_bound;
        let target = Mat::from_fn(len, len, |i, j| if i == j { d[i] } else { 0.0 });
        let m = estimator_moments(
            &target,
            |s| Ok(sample_opt_diag(&d, r, s)?.product()),
            SampleBudget::Exhaustive { max_draws: 16 },
        )
        .unwrap();
        worst = worst.max((m.variance - bound).abs() / bound.max(1e-10));
    }
    assert!(worst <= 1e-10, "variance identity gap {worst}");

    // Via the full pipeline: variance of opt equals the split bound of the
    // singular values.
    let mut worst_opt: f64 = 0.0;
    for seed in 0..25u64 {
        let mut rng = CounterRng::new(seed).derive(&[0x09f]);
        let c = Mat::from_fn(4, 4, |_, _| rng.normal());
        let r = 1 + rng.below(3) as usize;
        let bound = split_index(&svd(&c).unwrap().d, r).unwrap().variance_bound;
        let m = estimator_moments(
            &c,
            |s| Ok(opt(&c, r, s)?.product()),
            SampleBudget::Exhaustive { max_draws: 16 },
        )
        .unwrap();
        worst_opt = worst_opt.max((m.variance - bound).abs() / bound.max(1e-10));
    }
    assert!(worst_opt <= 1e-10, "opt variance identity gap {worst_opt}");
    println!("PASS criterion 4: variance identity, worst gap {:.2e}", worst.max(worst_opt));
}

#[test]
fn criterion_05_optimality_dominance() {
    let _guard = serial();

    for r in [1usize, 2] {
        let fmt = KronFormat::new(1, r + 1, 2, 3).unwrap();
        for seed in 0..100u64 {
            let mut rng = CounterRng::new(seed).derive(&[0xd0, r as u64]);
            let mut g = KroneckerSum::new(fmt);
            for _ in 0..r + 1 {
                g.push_term(
                    Mat::from_fn(1, r + 1, |_, _| rng.normal()),
                    Mat::from_fn(2, 3, |_, _| rng.normal()),
                )
                .unwrap();
            }
            let want = g.dense().unwrap();
            let m_ok = estimator_moments(
                &want,
                |s| ok_compress(&g, r, s)?.dense(),
                SampleBudget::Exhaustive { max_draws: 16 },
            )
            .unwrap();
            let m_st = estimator_moments(
                &want,
                |s| kf_avg_compress(&g, r, s)?.dense(),
                SampleBudget::Exhaustive { max_draws: 16 },
            )
            .unwrap();
            assert!(m_ok.rel_mean_err <= 1e-10 && m_st.rel_mean_err <= 1e-10);
            assert!(
                m_ok.variance <= m_st.variance * (1.0 + 1e-10) + 1e-12,
                "seed {seed} r {r}: ok {} > sign trick {}",
                m_ok.variance,
                m_st.variance
            );
        }
    }

    // Strict improvement on the shared-left-factor instance.
    let fmt = KronFormat::new(1, 2, 2, 2).unwrap();
    let u = Mat::row_vec(vec![1.0, 0.0]);
    let a = Mat::new(2, 2, vec![1.0, 0.0, 0.0, 0.0]).unwrap();
    let d = Mat::new(2, 2, vec![0.0, 0.0, 0.0, 1.0]).unwrap();
    let mut g = KroneckerSum::new(fmt);
    g.push_term(u.clone(), a.clone()).unwrap();
    g.push_term(u.clone(), d.clone()).unwrap();
    let want = g.dense().unwrap();
    let m_ok = estimator_moments(
        &want,
        |s| ok_compress(&g, 1, s)?.dense(),
        SampleBudget::Exhaustive { max_draws: 16 },
    )
    .unwrap();
    let m_st = estimator_moments(
        &want,
        |s| kf_avg_compress(&g, 1, s)?.dense(),
        SampleBudget::Exhaustive { max_draws: 16 },
    )
    .unwrap();
    let a_plus_d = a.add(&d);
    assert!(m_ok.variance <= 1e-12, "case-1 optimal variance {}", m_ok.variance);
    assert!(
        (m_st.variance - a_plus_d.frob_dot(&a_plus_d)).abs() <= 1e-10,
        "case-1 sign trick variance {}",
        m_st.variance
    );
    println!(
        "PASS criterion 5: dominance on 200 instances; case 1 gives 0 vs {:.1}",
        m_st.variance
    );
}

#[test]
fn criterion_06_idempotent_diagonal() {
    let _guard = serial();
    let started = Instant::now();

    for seed in 0..500u64 {
        let mut rng = CounterRng::new(seed).derive(&[0x1de9]);
        let n = 2 + rng.below(15) as usize;
        let r = 1 + rng.below(n as u64 - 1) as usize;
        // Random diagonal rescaled to sum r, clamped into [0, 1] by
        // redistributing the excess.
        let mut d: Vec<f64> = (0..n).map(|_| rng.uniform()).collect();
        let sum: f64 = d.iter().sum();
        for x in &mut d {
            *x *= r as f64 / sum;
        }
        let mut excess = 0.0;
        for x in &mut d {
            if *x > 1.0 {
                excess += *x - 1.0;
                *x = 1.0;
            }
        }
        while excess > 1e-12 {
            for x in &mut d {
                if *x < 1.0 && excess > 0.0 {
                    let room = (1.0 - *x).min(excess);
                    *x += room;
                    excess -= room;
                }
            }
        }

        let z = idempotent_with_diagonal(&d).unwrap();
        assert_eq!(z.len(), r);
        for i in 0..r {
            for j in 0..r {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!(
                    (dot(&z[i], &z[j]) - want).abs() < 1e-10,
                    "seed {seed} gram ({i},{j})"
                );
            }
        }
        let mut zm = Mat::zeros(n, n);
        for zi in &z {
            for a in 0..n {
                for b in 0..n {
                    let v = zm.at(a, b) + zi[a] * zi[b];
                    zm.set(a, b, v);
                }
            }
        }
        for i in 0..n {
            assert!((zm.at(i, i) - d[i]).abs() < 1e-9, "seed {seed} diag {i}");
        }
        assert!(zm.sub(&zm.transpose()).max_abs() < 1e-12, "seed {seed} symmetry");
        assert!(zm.matmul(&zm).sub(&zm).max_abs() < 1e-8, "seed {seed} idempotence");
    }
    let elapsed = started.elapsed().as_secs_f64();
    assert!(elapsed < 5.0, "took {elapsed:.2}s");
    println!("PASS criterion 6: idempotent diagonal construction, {elapsed:.2}s");
}

#[test]
fn criterion_07_cosine_sanity() {
    let _guard = serial();
    let started = Instant::now();

    let params = RhnParams::glorot(64, 26, 26, 42);
    let mean_of = |algo: AlgoSpec| -> f64 {
        let recs = noise_protocol(&params, algo, 100, 0, FILTER_THRESHOLD, 4 << 30).unwrap();
        let vals: Vec<f64> =
            recs.iter().filter(|r| !r.filtered).filter_map(|r| r.cosine).collect();
        assert!(!vals.is_empty());
        vals.iter().sum::<f64>() / vals.len() as f64
    };

    let recs = noise_protocol(&params, AlgoSpec::Exact, 100, 0, FILTER_THRESHOLD, 4 << 30).unwrap();
    for r in recs.iter().filter(|r| !r.filtered) {
        let c = r.cosine.unwrap();
        assert!((c - 1.0).abs() < 1e-10, "exact cosine {c} at step {}", r.step);
    }
    let ok2 = mean_of(AlgoSpec::Ok(2));
    let ok1 = mean_of(AlgoSpec::Ok(1));
    assert!(ok2 > 0.98, "2-term mean cosine {ok2}");
    assert!(ok1 > 0.8, "1-term mean cosine {ok1}");

    let elapsed = started.elapsed().as_secs_f64();
    assert!(elapsed < 120.0, "took {elapsed:.1}s");
    println!("PASS criterion 7: cosines exact=1, ok:2={ok2:.4}, ok:1={ok1:.4}, {elapsed:.1}s");
}

#[test]
fn criterion_08_copy_task_desk_scale() {
    let _guard = serial();
    let started = Instant::now();

    let base = TrainConfig {
        task: TaskKind::Copy,
        algo: AlgoSpec::Ok(4),
        units: 64,
        batch: 16,
        lr: 10f64.powf(-2.5),
        steps: 50_000,
        seed: 11,
        eval_every: 10_000,
        data: None,
        reset_prob: 0.0,
    };
    let ok_out = train_loop(&base, &mut |_| {}).unwrap();
    let ok_t_max = ok_out.final_t_max.unwrap();
    assert!(ok_t_max >= 8, "4-term optimal compression reached t_max {ok_t_max}");

    let mut tb = base.clone();
    tb.algo = AlgoSpec::Tbptt(8);
    let tb_out = train_loop(&tb, &mut |_| {}).unwrap();
    let tb_t_max = tb_out.final_t_max.unwrap();
    assert!(tb_t_max >= 8, "horizon-8 window training reached t_max {tb_t_max}");

    let elapsed = started.elapsed().as_secs_f64();
    assert!(elapsed < 1800.0, "took {elapsed:.0}s");
    println!(
        "PASS criterion 8: copy curriculum ok:4 t_max={ok_t_max}, tbptt:8 t_max={tb_t_max}, {elapsed:.0}s"
    );
}

#[test]
fn criterion_09_ktp_learns_short_dependencies() {
    let _guard = serial();
    let started = Instant::now();

    let cfg = TrainConfig {
        task: TaskKind::Copy,
        algo: AlgoSpec::Ktp(4),
        units: 64,
        batch: 64,
        lr: 1e-3,
        steps: 50_000,
        seed: 11,
        eval_every: 10_000,
        data: None,
        reset_prob: 0.0,
    };
    let out = train_loop(&cfg, &mut |_| {}).unwrap();
    let t_max = out.final_t_max.unwrap();
    assert!(t_max >= 4, "triple-product training reached t_max {t_max}");
    let elapsed = started.elapsed().as_secs_f64();
    println!("PASS criterion 9: ktp:4 t_max={t_max}, {elapsed:.0}s");
}

#[test]
fn criterion_10_cost_shape() {
    let _guard = serial();

    let units = 48;
    let vocab = 8;
    let params = RhnParams::glorot(units, vocab, vocab, 5);
    let p = params.p();

    let state_of = |spec: AlgoSpec| -> usize {
        let mut algo = spec.build(&params, CounterRng::new(1));
        let mut h = vec![0.0; units];
        let mut data = CounterRng::new(2).derive(&[9]);
        for _ in 0..3 {
            let step = forward(&params, &h, data.below(vocab as u64) as usize).unwrap();
            algo.advance(&params, &step);
            h = step.h_next;
        }
        algo.state_reals()
    };
    // Exact formulas, hence exactly linear in the term count.
    assert_eq!(state_of(AlgoSpec::Ok(2)), 2 * (p + 2 * units * units));
    assert_eq!(state_of(AlgoSpec::Ok(4)), 4 * (p + 2 * units * units));
    assert_eq!(state_of(AlgoSpec::Ktp(2)), 2 * (p + units + 2 * units));
    assert_eq!(state_of(AlgoSpec::Ktp(4)), 4 * (p + units + 2 * units));
    let ok_ratio = state_of(AlgoSpec::Ok(4)) as f64 / state_of(AlgoSpec::Ok(2)) as f64;
    let ktp_ratio = state_of(AlgoSpec::Ktp(4)) as f64 / state_of(AlgoSpec::Ktp(2)) as f64;
    assert!((ok_ratio - 2.0).abs() <= 0.1 && (ktp_ratio - 2.0).abs() <= 0.1);

    // Step time grows roughly linearly in the term count.
    let time_of = |spec: AlgoSpec| -> f64 {
        let mut algo = spec.build(&params, CounterRng::new(1));
        let mut h = vec![0.0; units];
        let mut data = CounterRng::new(2).derive(&[9]);
        let mut times = Vec::new();
        for i in 0..90 {
            let step = forward(&params, &h, data.below(vocab as u64) as usize).unwrap();
            let t0 = Instant::now();
            algo.advance(&params, &step);
            let dt = t0.elapsed().as_secs_f64();
            if i >= 10 {
                times.push(dt);
            }
            h = step.h_next;
        }
        times.sort_by(|a, b| a.partial_cmp(b).unwrap());
        times[times.len() / 2]
    };
    let t2 = time_of(AlgoSpec::Ok(2));
    let t4 = time_of(AlgoSpec::Ok(4));
    let ratio = t4 / t2;
    assert!(
        (1.1..=3.5).contains(&ratio),
        "step-time ratio r=4 vs r=2 was {ratio:.2} ({t2:.2e}s vs {t4:.2e}s)"
    );
    println!(
        "PASS criterion 10: state exactly 2x (ok {ok_ratio}, ktp {ktp_ratio}), time ratio {ratio:.2}"
    );
}

#[test]
fn criterion_11_lm_pipeline_beats_unigram() {
    let _guard = serial();
    let started = Instant::now();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("corpus.txt");
    std::fs::write(&path, gen_corpus(1_000_000, 1)).unwrap();

    let cfg = TrainConfig {
        task: TaskKind::Lm,
        algo: AlgoSpec::Ok(8),
        units: 64,
        batch: 2,
        lr: 1e-3,
        steps: 200_000,
        seed: 3,
        eval_every: 20_000,
        data: Some(path),
        reset_prob: 0.01,
    };
    let out = train_loop(&cfg, &mut |_| {}).unwrap();
    let valid = out.valid_bpc.unwrap();
    let baseline = out.unigram_bpc.unwrap();
    assert!(
        valid < baseline,
        "validation bpc {valid:.4} not below unigram baseline {baseline:.4}"
    );
    let elapsed = started.elapsed().as_secs_f64();
    println!(
        "PASS criterion 11: lm valid bpc {valid:.4} < unigram baseline {baseline:.4} \
         (test {:.4}), {elapsed:.0}s",
        out.test_bpc.unwrap()
    );
}
