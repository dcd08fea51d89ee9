use bibc::beamforming::{BfOptions, Problem};
use bibc::partitioning::*;
use bibc::{ApId, Point3, Scene, SceneChannels};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_scene(num_aps: usize, seed: u64) -> SceneChannels {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = Scene::reference(16);
    let mut ids: Vec<u32> = (1..=10).collect();
    for i in (1..ids.len()).rev() {
        ids.swap(i, rng.random_range(0..=i));
    }
    let keep: Vec<ApId> = ids[..num_aps - 1].iter().map(|i| ApId(*i)).collect();
    s.aps.retain(|a| a.is_ref || keep.contains(&a.id));
    for a in s.aps.iter_mut().filter(|a| !a.is_ref) {
        a.rows = 2;
        a.cols = 2;
    }
    let bde = Point3::new(rng.random_range(1.0..19.0), rng.random_range(1.0..9.0), rng.random_range(0.5..2.5));
    SceneChannels::synthesize(&s.with_bdes(&[bde])).unwrap()
}

fn brute_force_product(w: &[u64]) -> u128 {
    let total: u64 = w.iter().sum();
    (0u32..1 << w.len())
        .map(|m| {
            let a: u64 = w.iter().enumerate().filter(|(i, _)| m >> i & 1 == 1).map(|(_, v)| v).sum();
            a as u128 * (total - a) as u128
        })
        .max()
        .unwrap()
}

#[test]
fn dp_matches_brute_force_split() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        let l = rng.random_range(2..=15);
        let gains: Vec<(ApId, f64)> = (0..l).map(|i| (ApId(i as u32 + 1), rng.random_range(0.0..1.0))).collect();
        let ref_id = ApId(rng.random_range(1..=l as u32));
        let scale = 1e3;
        let w = dp_weights(&gains.iter().map(|g| g.1).collect::<Vec<_>>(), scale).unwrap();
        let p = dp_partition(&gains, scale, ref_id).unwrap();
        let weight = |ids: &[ApId]| -> u64 { ids.iter().map(|id| w[id.0 as usize - 1]).sum() };
        let got = weight(p.ce()) as u128 * weight(p.readers()) as u128;
        assert_eq!(got, brute_force_product(&w));
        assert!(p.readers().contains(&ref_id));
        assert!(!p.ce().is_empty());
    }
}

#[test]
fn dp_prefers_leaving_items_out_on_ties() {
    let t = DpTable::build(&[2, 2, 2], 2).unwrap();
    assert_eq!(t.solve(), (2, vec![0]));
    let t = DpTable::build(&[1, 1], 1).unwrap();
    assert_eq!(t.solve().1, vec![0]);
}

#[test]
fn dp_falls_back_when_everything_lands_on_the_reference_side() {
    let gains = [(ApId(1), 0.0), (ApId(2), 1.0)];
    let p = dp_partition(&gains, 10.0, ApId(2)).unwrap();
    assert_eq!(p.ce(), &[ApId(1)]);
    assert_eq!(p.readers(), &[ApId(2)]);
}

#[test]
fn dp_refuses_oversized_tables() {
    assert!(dp_partition(&[(ApId(1), 1.0), (ApId(2), 1.0)], 1e12, ApId(1)).is_err());
    assert!(dp_weights(&[1e300], 1e100).is_err());
}

proptest! {
    #[test]
    fn op_table_is_monotone_and_bounded(w in prop::collection::vec(0u64..50, 1..10), budget in 0u64..200) {
        let t = DpTable::build(&w, budget).unwrap();
        for l in 0..=w.len() {
            for q in 0..=budget {
                let v = t.op(l, q);
                prop_assert!(v <= q);
                if q > 0 { prop_assert!(v >= t.op(l, q - 1)); }
                if l > 0 { prop_assert!(v >= t.op(l - 1, q)); }
            }
        }
        let (best, chosen) = t.solve();
        prop_assert_eq!(chosen.iter().map(|&i| w[i]).sum::<u64>(), best);
    }
}

#[test]
fn game_matches_exhaustive_search() {
    let mut hits = 0;
    let trials = 100;
    for seed in 0..trials {
        let chans = small_scene(2 + (seed as usize % 7), seed);
        let ctx = UtilityContext::new(&chans, Problem::Alpha0, BfOptions::new(1.0));
        let sel = run_ap_selection(&ctx, &GameConfig { seed, ..Default::default() }, None).unwrap();
        let best = exhaustive_partition(&ctx).unwrap();
        assert!(sel.best.feasible);
        assert!(sel.best.u <= best.u * (1.0 + 1e-9));
        if sel.best.u >= best.u * (1.0 - 1e-9) {
            hits += 1;
        }
    }
    assert!(hits >= 90, "game reached the optimum in {hits}/{trials} scenes");
}

#[test]
fn game_is_usually_at_least_as_good_as_greedy() {
    let mut wins = 0;
    let trials = 100;
    for seed in 0..trials {
        let chans = small_scene(4 + (seed as usize % 5), 1000 + seed);
        let ctx = UtilityContext::new(&chans, Problem::Alpha0, BfOptions::new(1.0));
        let sel = run_ap_selection(&ctx, &GameConfig { seed, ..Default::default() }, None).unwrap();
        let greedy = greedy_partition(&ctx, seed).unwrap();
        if greedy.score() <= sel.best.score() * (1.0 + 1e-9) {
            wins += 1;
        }
    }
    assert!(wins >= 95, "game beat greedy in {wins}/{trials} scenes");
}

#[test]
fn game_trace_increases_and_ends_switch_stable() {
    let chans = small_scene(8, 7);
    let ctx = UtilityContext::new(&chans, Problem::Alpha0, BfOptions::new(1.0));
    let all = chans.ap_ids();
    let start = random_partition(&all, chans.ref_id(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let out = coalition_game(&start, &ctx, 5);
    assert!(out.trace.windows(2).all(|w| w[1] > w[0]));
    assert_eq!(out.trace.len(), out.accepted + 1);
    let p = &out.best.partition;
    for l in all.into_iter().filter(|l| *l != chans.ref_id()) {
        let own = if p.is_ce(l) { p.ce().len() } else { p.readers().len() };
        if own == 1 {
            continue;
        }
        let e = ctx.evaluate(&p.switched(l).unwrap());
        assert!(!(e.feasible && e.u > out.best.score()), "switching {l} still improves");
    }
}

#[test]
fn swap_never_lowers_the_utility() {
    for seed in 0..10 {
        let chans = small_scene(6, 50 + seed);
        let ctx = UtilityContext::new(&chans, Problem::Alpha0, BfOptions::new(1.0));
        let start = random_partition(&chans.ap_ids(), chans.ref_id(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let before = ctx.evaluate(&start);
        let after = swap_refine(&start, &ctx);
        assert!(after.score() >= before.score());
        assert_eq!(after.partition.ce().len(), start.ce().len());
        assert!(after.partition.readers().contains(&chans.ref_id()));
    }
}

#[test]
fn swap_can_escape_a_switch_stable_partition() {
    let mut found = false;
    for seed in 0..60 {
        let chans = small_scene(6, 300 + seed);
        let ctx = UtilityContext::new(&chans, Problem::Alpha0, BfOptions::new(1.0));
        let start = random_partition(&chans.ap_ids(), chans.ref_id(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let out = coalition_game(&start, &ctx, seed);
        let swapped = swap_refine(&out.best.partition, &ctx);
        if swapped.score() > out.best.score() {
            found = true;
            break;
        }
    }
    assert!(found, "no scene where a swap improved a switch-stable partition");
}

#[test]
fn utility_reports_interference_ratio() {
    let chans = small_scene(5, 11);
    let opts = BfOptions::new(1.0);
    let p = random_partition(&chans.ap_ids(), chans.ref_id(), &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    let (u_bf, c_bf, x) = utility(&p, &UtilityContext::new(&chans, Problem::Bf, opts));
    assert!(u_bf > 0.0 && x.is_some());
    let (u_null, c_null, _) = utility(&p, &UtilityContext::new(&chans, Problem::Alpha0, opts));
    if c_null.is_finite() {
        assert!(c_null <= 1e-10);
        assert!(u_null <= u_bf * (1.0 + 1e-9));
    }
    assert!(c_bf >= 0.0);
}

#[test]
fn selection_is_reproducible() {
    let chans = small_scene(7, 21);
    let ctx = UtilityContext::new(&chans, Problem::Alpha0, BfOptions::new(1.0));
    let cfg = GameConfig { seed: 9, ..Default::default() };
    let a = run_ap_selection(&ctx, &cfg, None).unwrap();
    let b = run_ap_selection(&ctx, &cfg, None).unwrap();
    assert_eq!(a.best.partition, b.best.partition);
    assert_eq!(a.best.u, b.best.u);
}

#[test]
fn unconstrained_selection_keeps_the_best_round() {
    let chans = small_scene(6, 33);
    let ctx = UtilityContext::new(&chans, Problem::Bf, BfOptions::new(1.0));
    let sel = run_ap_selection(&ctx, &GameConfig { seed: 4, ..Default::default() }, None).unwrap();
    assert_eq!(sel.rounds, 4);
    assert!(sel.best.score() >= sel.phase2_u);
}
