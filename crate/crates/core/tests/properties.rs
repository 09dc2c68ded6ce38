use fgdvi::corpus::{corrupt, decode, encode, generate, MaskStyle, Sprite, SyntheticScene, Texture};
use fgdvi::denoiser::{rearrange_st, rearrange_st_inverse, DenoiserInput, DenoiserKind, Denoiser};
use fgdvi::diffusion::{ddim_step, loss_diff, predict_z0, q_sample, NoiseSchedule};
use fgdvi::flow::{complete_flow, e_warp, e_warp_scaled, flow_loss, warp, FlowField, FlowSet};
use fgdvi::metrics::{psnr, ssim};
use fgdvi::propagation::{deformable_sample, propagate, DeformField, PropagationOptions, PropagationWeights};
use fgdvi::sampler::{parity_init, sample_interpolated, SamplerConfig};
use ndarray::{s, Array2, Array4, Axis};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn normal4(r: &mut ChaCha8Rng, shape: (usize, usize, usize, usize)) -> Array4<f64> {
    Array4::from_shape_simple_fn(shape, || r.sample(StandardNormal))
}

fn unit4(r: &mut ChaCha8Rng, shape: (usize, usize, usize, usize)) -> Array4<f64> {
    Array4::from_shape_simple_fn(shape, || r.random_range(0.0..1.0))
}

fn hole(r: &mut ChaCha8Rng, n: usize, h: usize, w: usize, p: f64) -> Array4<f64> {
    Array4::from_shape_simple_fn((n, 1, h, w), || if r.random_bool(p) { 1.0 } else { 0.0 })
}

fn flow(r: &mut ChaCha8Rng, h: usize, w: usize, scale: f64) -> FlowField {
    FlowField {
        u: Array2::from_shape_simple_fn((h, w), || r.random_range(-scale..scale)),
        v: Array2::from_shape_simple_fn((h, w), || r.random_range(-scale..scale)),
    }
}

fn flows(r: &mut ChaCha8Rng, n: usize, h: usize, w: usize, scale: f64) -> FlowSet {
    let pairs = n.saturating_sub(1);
    FlowSet::new(
        (0..pairs).map(|_| flow(r, h, w, scale)).collect(),
        (0..pairs).map(|_| flow(r, h, w, scale)).collect(),
    )
    .unwrap()
}

fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(f)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    // diffusion

    #[test]
    fn noising_inverts_exactly(seed in any::<u64>(), steps in 1usize..60, t_frac in 0.0f64..1.0) {
        let sched = NoiseSchedule::linear(steps, 0.02, 0.3).unwrap();
        let t = 1 + ((steps - 1) as f64 * t_frac) as usize;
        let mut r = rng(seed);
        let z0 = normal4(&mut r, (2, 3, 2, 2));
        let eps = normal4(&mut r, (2, 3, 2, 2));
        let back = predict_z0(&q_sample(&z0, t, &eps, &sched).unwrap(), &eps, t, &sched).unwrap();
        for (a, b) in back.iter().zip(z0.iter()) {
            prop_assert!((a - b).abs() <= 1e-6 * b.abs().max(1.0));
        }
        let prev = ddim_step(&q_sample(&z0, t, &eps, &sched).unwrap(), &eps, t, t - 1, None, &sched).unwrap();
        let curve = q_sample(&z0, t - 1, &eps, &sched).unwrap();
        for (a, b) in prev.iter().zip(curve.iter()) {
            prop_assert!((a - b).abs() <= 1e-5 * b.abs().max(1.0));
        }
    }

    #[test]
    fn schedule_is_strictly_decreasing(steps in 1usize..200, lo in 1e-4f64..0.1, span in 0.0f64..0.5) {
        let sched = NoiseSchedule::linear(steps, lo, lo + span).unwrap();
        let alphas = sched.alphas_cum();
        let mut prod = 1.0;
        for t in 1..=steps {
            prod *= 1.0 - sched.betas()[t - 1];
            prop_assert!(alphas[t] < alphas[t - 1]);
            prop_assert!((alphas[t] - prod).abs() <= 1e-12);
        }
    }

    #[test]
    fn losses_vanish_only_on_equality(seed in any::<u64>(), bump in 1e-6f64..1.0) {
        let mut r = rng(seed);
        let a = normal4(&mut r, (1, 2, 3, 3));
        prop_assert_eq!(loss_diff(&a, &a).unwrap(), 0.0);
        let mut b = a.clone();
        b[[0, 1, 2, 0]] += bump;
        prop_assert!(loss_diff(&a, &b).unwrap() > 0.0);
    }

    // flow

    #[test]
    fn warp_is_linear_in_the_source(seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let mut r = rng(seed);
        let x = normal4(&mut r, (1, 2, 6, 7)).index_axis_move(Axis(0), 0);
        let y = normal4(&mut r, (1, 2, 6, 7)).index_axis_move(Axis(0), 0);
        let f = flow(&mut r, 6, 7, 3.0);
        let lhs = warp((&x * a + &y * b).view(), &f).unwrap();
        let rhs = warp(x.view(), &f).unwrap() * a + warp(y.view(), &f).unwrap() * b;
        for (l, rr) in lhs.iter().zip(rhs.iter()) {
            prop_assert!((l - rr).abs() <= 1e-12 * (1.0 + l.abs()));
        }
    }

    #[test]
    fn integer_flow_is_clamped_index_shift(seed in any::<u64>()) {
        let mut r = rng(seed);
        let src = normal4(&mut r, (1, 1, 8, 8)).index_axis_move(Axis(0), 0);
        let f = FlowField {
            u: Array2::from_shape_simple_fn((8, 8), || r.random_range(-10i32..=10) as f64),
            v: Array2::from_shape_simple_fn((8, 8), || r.random_range(-10i32..=10) as f64),
        };
        let out = warp(src.view(), &f).unwrap();
        for y in 0..8 {
            for x in 0..8 {
                let sx = (x as f64 + f.u[[y, x]]).clamp(0.0, 7.0) as usize;
                let sy = (y as f64 + f.v[[y, x]]).clamp(0.0, 7.0) as usize;
                prop_assert_eq!(out[[0, y, x]], src[[0, sy, sx]]);
            }
        }
    }

    #[test]
    fn completion_is_idempotent_and_keeps_known(seed in any::<u64>(), p in 0.05f64..0.6) {
        let mut r = rng(seed);
        let f = flow(&mut r, 7, 9, 4.0);
        let mut m = hole(&mut r, 1, 7, 9, p).slice_move(s![0, 0, .., ..]);
        m[[3, 4]] = 0.0;
        let once = complete_flow(&f, m.view()).unwrap();
        for ((y, x), &k) in m.indexed_iter() {
            if k == 0.0 {
                prop_assert_eq!(once.u[[y, x]], f.u[[y, x]]);
                prop_assert_eq!(once.v[[y, x]], f.v[[y, x]]);
            }
        }
        prop_assert_eq!(complete_flow(&once, m.view()).unwrap(), once);
    }

    #[test]
    fn flow_loss_scales_with_constant_offsets(seed in any::<u64>(), du in -2.0f64..2.0, dv in -2.0f64..2.0, c in -4.0f64..4.0) {
        let mut r = rng(seed);
        let truth = flows(&mut r, 3, 4, 5, 2.0);
        let shifted = |k: f64| truth.map(|f| Ok(FlowField { u: &f.u + k * du, v: &f.v + k * dv })).unwrap();
        let base = flow_loss(&shifted(1.0), &truth).unwrap();
        prop_assert!(base >= 0.0);
        prop_assert_eq!(flow_loss(&truth, &truth).unwrap(), 0.0);
        prop_assert!((flow_loss(&shifted(c), &truth).unwrap() - c.abs() * base).abs() <= 1e-9 * (1.0 + base * c.abs()));
    }

    #[test]
    fn e_warp_ignores_channel_order(seed in any::<u64>()) {
        let mut r = rng(seed);
        let frames = unit4(&mut r, (3, 3, 5, 6));
        let fs = flows(&mut r, 3, 5, 6, 2.0);
        let valid: Vec<Array2<f64>> = (0..2).map(|_| hole(&mut r, 1, 5, 6, 0.7).slice_move(s![0, 0, .., ..])).collect();
        let permuted = frames.select(Axis(1), &[2, 0, 1]);
        let (a, b) = (e_warp(&frames, &fs, &valid), e_warp(&permuted, &fs, &valid));
        if let (Ok(a), Ok(b)) = (a, b) {
            prop_assert!((a - b).abs() <= 1e-14);
            prop_assert_eq!(e_warp_scaled(&frames, &fs, &valid).unwrap(), a * 100.0);
        }
    }

    // propagation

    #[test]
    fn propagation_keeps_known_latents(seed in any::<u64>(), p in 0.0f64..0.7) {
        let mut r = rng(seed);
        let z = normal4(&mut r, (3, 2, 5, 6));
        let m = hole(&mut r, 3, 5, 6, p);
        let fs = flows(&mut r, 3, 5, 6, 1.5);
        let w = PropagationWeights::seeded(2, seed, 0.2);
        let out = propagate(&z, &m, &fs, &w, PropagationOptions::default()).unwrap();
        for ((n, c, y, x), &v) in out.latents.indexed_iter() {
            if m[[n, 0, y, x]] == 0.0 {
                prop_assert_eq!(v.to_bits(), z[[n, c, y, x]].to_bits());
            }
            prop_assert!(out.residual[[n, 0, y, x]] <= m[[n, 0, y, x]]);
        }
    }

    #[test]
    fn deformable_sampling_is_linear(seed in any::<u64>(), a in -2.0f64..2.0) {
        let mut r = rng(seed);
        let x = normal4(&mut r, (1, 2, 5, 5)).index_axis_move(Axis(0), 0);
        let y = normal4(&mut r, (1, 2, 5, 5)).index_axis_move(Axis(0), 0);
        let mut field = DeformField::zeros(5, 5);
        field.offsets.mapv_inplace(|_| r.random_range(-1.0..1.0));
        field.modulation.mapv_inplace(|_| r.random_range(-3.0..3.0));
        let f = flow(&mut r, 5, 5, 2.0);
        let kernel = normal4(&mut r, (2, 2, 3, 3));
        let lhs = deformable_sample((&x * a + &y).view(), &field, &f, &kernel).unwrap();
        let rhs = deformable_sample(x.view(), &field, &f, &kernel).unwrap() * a + deformable_sample(y.view(), &field, &f, &kernel).unwrap();
        for (l, rr) in lhs.iter().zip(rhs.iter()) {
            prop_assert!((l - rr).abs() <= 1e-10 * (1.0 + l.abs()));
        }
    }

    // denoiser

    #[test]
    fn spatiotemporal_rearrangement_round_trips(seed in any::<u64>(), t in 1usize..5, h in 1usize..5, w in 1usize..5, c in 1usize..4, b in 1usize..3) {
        let mut r = rng(seed);
        let z = normal4(&mut r, (b, t, c, h * w));
        prop_assert_eq!(rearrange_st_inverse(&rearrange_st(&z), t).unwrap(), z);
    }

    #[test]
    fn heuristic_clean_estimate_ignores_t(seed in any::<u64>(), t1 in 1usize..10, t2 in 1usize..10) {
        let mut r = rng(seed);
        let sched = NoiseSchedule::linear(10, 0.02, 0.3).unwrap();
        let z_phi = unit4(&mut r, (2, 2, 4, 4));
        let mut m = hole(&mut r, 2, 4, 4, 0.4);
        m[[0, 0, 0, 0]] = 0.0;
        m[[1, 0, 0, 0]] = 0.0;
        let noisy = normal4(&mut r, (2, 2, 4, 4));
        let d = DenoiserKind::Heuristic { fill_iters: 200 };
        let z0 = |t: usize| {
            let input = DenoiserInput::new(noisy.clone(), t, &z_phi, &m, vec![0, 1]).unwrap();
            predict_z0(&noisy, &d.predict_eps(&input, &sched).unwrap(), t, &sched).unwrap()
        };
        let (a, b) = (z0(t1), z0(t2));
        for (x, y) in a.iter().zip(b.iter()) {
            prop_assert!((x - y).abs() <= 1e-9);
        }
    }

    // sampler

    #[test]
    fn parity_classes_alternate_and_cover(frames in 1usize..12, steps in 1usize..30) {
        let (a, c) = parity_init(steps, frames);
        let mut all: Vec<usize> = a.iter().chain(&c).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..frames).collect::<Vec<_>>());
        prop_assert!(a.iter().all(|i| i % 2 == a[0] % 2) || a.is_empty());
    }

    #[test]
    fn call_count_follows_the_formula(seed in any::<u64>(), frames in 2usize..7, steps in 1usize..9, s_frac in 0.0f64..=1.0) {
        let interp = (steps as f64 * s_frac) as usize;
        let mut r = rng(seed);
        let clean = unit4(&mut r, (frames, 1, 3, 3));
        let m = hole(&mut r, frames, 3, 3, 0.3);
        let sched = NoiseSchedule::linear(steps, 0.02, 0.3).unwrap();
        let config = SamplerConfig { steps, interp_steps: interp, seed, ..Default::default() };
        let z_t = normal4(&mut r, (frames, 1, 3, 3));
        let fs = FlowSet::zeros(frames, 3, 3);
        let d = DenoiserKind::Oracle { clean: clean.clone() };
        let (_, log) = sample_interpolated(&z_t, &clean, &m, &fs, &d, &sched, &config).unwrap();
        let odd = frames / 2;
        let even = frames - odd;
        let expected: usize = (0..interp)
            .map(|k| {
                // t = T - k; odd frames go first when T is even
                let t = steps - k;
                if t % 2 == 0 { odd } else { even }
            })
            .sum::<usize>()
            + (steps - interp) * frames;
        prop_assert_eq!(log.total_frame_denoisings, expected);
        for pair in log.records.windows(2) {
            if !pair[1].interpolated.is_empty() {
                prop_assert_eq!(&pair[0].active, &pair[1].interpolated);
            }
        }
    }

    #[test]
    fn sampling_is_independent_of_thread_count(seed in any::<u64>()) {
        let mut r = rng(seed);
        let z_phi = unit4(&mut r, (4, 2, 4, 4));
        let m = hole(&mut r, 4, 4, 4, 0.3);
        let fs = flows(&mut r, 4, 4, 4, 1.0);
        let sched = NoiseSchedule::linear(6, 0.02, 0.3).unwrap().with_sigma_policy(fgdvi::diffusion::SigmaPolicy::Eta(0.5)).unwrap();
        let z_t = normal4(&mut r, (4, 2, 4, 4));
        let config = SamplerConfig { steps: 6, interp_steps: 3, seed, ..Default::default() };
        let d = DenoiserKind::Heuristic { fill_iters: 100 };
        let run = |threads| in_pool(threads, || sample_interpolated(&z_t, &z_phi, &m, &fs, &d, &sched, &config).unwrap());
        let (a, la) = run(1);
        let (b, lb) = run(4);
        prop_assert_eq!(a, b);
        prop_assert!(la.same_calls(&lb));
    }

    // corpus

    #[test]
    fn ground_truth_flow_is_self_consistent(
        seed in any::<u64>(),
        sprites in proptest::collection::vec((1usize..9, 1usize..9, -6i32..20, -6i32..20, -3i32..=3, -3i32..=3), 0..4),
    ) {
        let scene = SyntheticScene {
            frames: 4,
            height: 16,
            width: 20,
            channels: 3,
            seed,
            background: Texture::Waves { scale: 1.0 },
            sprites: sprites
                .iter()
                .enumerate()
                .map(|(i, &(w, h, x, y, vx, vy))| Sprite {
                    texture: if i % 2 == 0 { Texture::Waves { scale: 2.0 } } else { Texture::Checker { size: 2, low: 0.2, high: 0.8 } },
                    width: w,
                    height: h,
                    x: x as f64,
                    y: y as f64,
                    vx: vx as f64,
                    vy: vy as f64,
                })
                .collect(),
            mask: MaskStyle::Object { dilate: 1, sprites: None },
        };
        let sample = generate(&scene).unwrap();
        prop_assert_eq!(e_warp(&sample.frames, &sample.flows, &sample.validity.forward).unwrap(), 0.0);
        prop_assert_eq!(&sample.corrupted, &corrupt(&sample.frames, &sample.masks).unwrap());
        for ((n, _, y, x), &v) in sample.corrupted.indexed_iter() {
            if sample.masks[[n, 0, y, x]] != 0.0 {
                prop_assert_eq!(v, 0.0);
            }
        }
    }

    #[test]
    fn encode_is_linear_and_decode_encode_projects(seed in any::<u64>(), a in -2.0f64..2.0) {
        let mut r = rng(seed);
        let x = unit4(&mut r, (2, 3, 8, 12));
        let y = unit4(&mut r, (2, 3, 8, 12));
        let lhs = encode(&(&x * a + &y)).unwrap();
        let rhs = encode(&x).unwrap() * a + encode(&y).unwrap();
        for (l, rr) in lhs.iter().zip(rhs.iter()) {
            prop_assert!((l - rr).abs() <= 1e-12);
        }
        let p = decode(&encode(&x).unwrap());
        prop_assert_eq!(decode(&encode(&p).unwrap()), p);
    }

    // metrics

    #[test]
    fn psnr_is_symmetric_and_monotone(seed in any::<u64>(), d1 in 1e-4f64..0.2, extra in 1e-4f64..0.2) {
        let mut r = rng(seed);
        let a = unit4(&mut r, (2, 1, 12, 12));
        let b = unit4(&mut r, (2, 1, 12, 12));
        prop_assert_eq!(psnr(&a, &b, None).unwrap(), psnr(&b, &a, None).unwrap());
        let near = psnr(&a, &a.mapv(|v| v + d1), None).unwrap();
        let far = psnr(&a, &a.mapv(|v| v + d1 + extra), None).unwrap();
        prop_assert!(near > far);
    }

    #[test]
    fn ssim_is_bounded_by_one(seed in any::<u64>()) {
        let mut r = rng(seed);
        let a = unit4(&mut r, (1, 2, 13, 14));
        let b = unit4(&mut r, (1, 2, 13, 14));
        prop_assert!((ssim(&a, &a, None).unwrap() - 1.0).abs() <= 1e-12);
        prop_assert!(ssim(&a, &b, None).unwrap() <= 1.0);
    }
}

#[test]
fn propagation_is_independent_of_thread_count() {
    let mut r = rng(3);
    let z = normal4(&mut r, (5, 3, 6, 6));
    let m = hole(&mut r, 5, 6, 6, 0.4);
    let fs = flows(&mut r, 5, 6, 6, 2.0);
    let w = PropagationWeights::seeded(3, 9, 0.3);
    let run = |threads| in_pool(threads, || propagate(&z, &m, &fs, &w, PropagationOptions::default()).unwrap());
    assert_eq!(run(1), run(4));
}
