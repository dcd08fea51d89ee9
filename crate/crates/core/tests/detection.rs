use std::sync::OnceLock;

use bibc::detection::*;
use bibc::linalg::{norm_sqr, CVec, C64};
use bibc::partitioning::dp_partition;
use bibc::quantization::NoiseCovariance;
use bibc::{ChannelSet, Point3, Scene, SceneChannels};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn channels(bdes: &[Point3], bits: u32) -> (SceneChannels, Vec<ChannelSet>) {
    let chans = SceneChannels::synthesize(&Scene::reference(bits).with_bdes(bdes)).unwrap();
    let p = dp_partition(&chans.link_gains(0).unwrap(), 1e8, chans.ref_id()).unwrap();
    let sets = chans.for_partition_all(&p).unwrap();
    (chans, sets)
}

fn shared() -> &'static ChannelSet {
    static CH: OnceLock<ChannelSet> = OnceLock::new();
    CH.get_or_init(|| channels(&[Point3::new(4.0, 4.0, 2.0)], 16).1.remove(0))
}

/// Matched beamformer scaled so that `||H_BL x||^2 = energy`.
fn mrt(ch: &ChannelSet, energy: f64) -> CVec {
    let x = ch.h_c.map(|v| v.conj());
    let e = norm_sqr(&(ch.h_bl() * &x));
    x.scale((energy / e).sqrt())
}

#[test]
fn ideal_receiver_simulation_matches_closed_form() {
    let (_, sets) = channels(&[Point3::new(4.0, 4.0, 2.0)], 16);
    let ch = &sets[0];
    for (slots, energy) in [(1, 2.7), (2, 1.2), (1, 1.0)] {
        let sig = Signaling::antipodal(slots).unwrap();
        let x = mrt(ch, energy);
        let pe = pe_perfect(&x, &ch.h_bl(), &NoiseCovariance::identity(ch.n_r()), &sig);
        let setup = BerSetup { truth: ch, estimate: None, x: &x, signaling: &sig, adc: AdcModel::Ideal, noise_scale: 1.0 };
        let count = simulate_ber(&setup, 200_000, 7).unwrap();
        assert!(count.consistent_with(pe, 3.0), "slots={slots}: sim {} vs {pe}", count.rate());
    }
}

#[test]
fn closed_form_uses_the_antipodal_distance() {
    let (_, sets) = channels(&[Point3::new(4.0, 4.0, 2.0)], 16);
    let ch = &sets[0];
    let x = mrt(ch, 2.0);
    let d = NoiseCovariance::identity(ch.n_r());
    let one = pe_perfect(&x, &ch.h_bl(), &d, &Signaling::antipodal(1).unwrap());
    assert!((one - q_function(2.0)).abs() <= 1e-12);
    let three = pe_perfect(&x, &ch.h_bl(), &d, &Signaling::antipodal(3).unwrap());
    assert!((three - q_function(12f64.sqrt())).abs() <= 1e-12);
}

#[test]
fn mismatched_detector_with_exact_channels_is_the_perfect_one() {
    let (_, sets) = channels(&[Point3::new(12.0, 6.0, 1.0)], 4);
    let ch = &sets[0];
    let x = mrt(ch, 3.0);
    let h = ch.h_bl();
    let sig = Signaling::antipodal(2).unwrap();
    let d = NoiseCovariance::for_beamformer(ch, &x, 1.0);
    let est = Estimated { h_dl: &ch.h_dl, h_bl: &h, d: &d, sigma2_dl: 0.0 };
    let a = pe_mismatch(&x, &h, &d, &est, &sig).unwrap();
    let b = pe_perfect(&x, &h, &d, &sig);
    assert!((a - b).abs() <= 1e-12 * b.max(1e-300), "{a} vs {b}");
    let worse = Estimated { sigma2_dl: 1e-12, ..est };
    assert!(pe_mismatch(&x, &h, &d, &worse, &sig).unwrap() >= a);
}

#[test]
fn mismatched_simulation_matches_closed_form() {
    let (_, sets) = channels(&[Point3::new(4.0, 4.0, 2.0)], 16);
    let ch = &sets[0];
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let perturb = |v: &CVec, rng: &mut ChaCha8Rng| {
        v.map(|a| {
            let (re, im): (f64, f64) = (rng.sample(StandardNormal), rng.sample(StandardNormal));
            a * C64::new(1.0 + 0.2 * re, 0.2 * im)
        })
    };
    let (hc, hr) = (perturb(&ch.h_c, &mut rng), perturb(&ch.h_r, &mut rng));
    let est = ch.with_links(hc, hr).unwrap();
    let x = mrt(&est, 2.5);
    let sig = Signaling::antipodal(1).unwrap();
    let d = NoiseCovariance::identity(ch.n_r());
    let hb = est.h_bl();
    let e = Estimated { h_dl: &est.h_dl, h_bl: &hb, d: &d, sigma2_dl: 0.0 };
    let pe = pe_mismatch(&x, &ch.h_bl(), &d, &e, &sig).unwrap();
    let setup = BerSetup { truth: ch, estimate: Some(&est), x: &x, signaling: &sig, adc: AdcModel::Ideal, noise_scale: 1.0 };
    let count = simulate_ber(&setup, 200_000, 11).unwrap();
    assert!(count.consistent_with(pe, 3.0), "sim {} vs {pe}", count.rate());
}

#[test]
fn llr_ties_go_to_the_zero_bit() {
    assert!(!decide(0.0));
    assert!(!decide(-0.0));
    let (_, sets) = channels(&[Point3::new(4.0, 4.0, 2.0)], 16);
    let ch = &sets[0];
    let x = CVec::zeros(ch.n_c());
    let sig = Signaling::antipodal(1).unwrap();
    let ys = vec![CVec::from_element(ch.n_r(), C64::new(1.0, -2.0))];
    let l = llr(&ys, &x, &ch.h_dl, &ch.h_bl(), &NoiseCovariance::identity(ch.n_r()), &sig).unwrap();
    assert_eq!(l, 0.0);
    assert!(!decide(l));
}

#[test]
fn noiseless_observations_decode_exactly() {
    let (_, sets) = channels(&[Point3::new(4.0, 4.0, 2.0)], 16);
    let ch = &sets[0];
    let x = mrt(ch, 1e-6);
    let sig = Signaling::antipodal(2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for bit in [false, true] {
        let ys = observe(ch, &x, sig.gamma(bit), 0.0, &mut rng);
        let l = llr(&ys, &x, &ch.h_dl, &ch.h_bl(), &NoiseCovariance::identity(ch.n_r()), &sig).unwrap();
        assert_eq!(decide(l), bit);
    }
}

#[test]
fn orthogonal_sequences_separate_devices() {
    let bdes = [Point3::new(4.0, 4.0, 2.0), Point3::new(10.0, 3.0, 1.5), Point3::new(16.0, 7.0, 2.0)];
    let (_, sets) = channels(&bdes, 16);
    let x = mrt(&sets[0], 1.0);
    let h_bl: Vec<_> = sets.iter().map(|c| c.h_bl()).collect();
    let sig = multi_signaling(3, 4).unwrap();
    let d = NoiseCovariance::identity(sets[0].n_r());
    for m in 0..8u32 {
        let bits: Vec<bool> = (0..3).map(|k| m >> k & 1 == 1).collect();
        let ys = observe_multi(&sets[0].h_dl, &h_bl, &x, &sig, &bits);
        assert_eq!(detect_multi(&ys, &x, &sets[0].h_dl, &h_bl, &d, &sig).unwrap(), bits);
    }
    let bad = vec![Signaling::antipodal(4).unwrap(); 3];
    let ys = observe_multi(&sets[0].h_dl, &h_bl, &x, &bad, &[true, false, true]);
    assert!(detect_multi(&ys, &x, &sets[0].h_dl, &h_bl, &d, &bad).is_err());
}

#[test]
fn simulation_is_reproducible() {
    let (_, sets) = channels(&[Point3::new(4.0, 4.0, 2.0)], 4);
    let ch = &sets[0];
    let x = mrt(ch, 2.0);
    let sig = Signaling::antipodal(1).unwrap();
    let setup = BerSetup { truth: ch, estimate: None, x: &x, signaling: &sig, adc: AdcModel::MidRise { loading: 3.0 }, noise_scale: 1.0 };
    let a = simulate_ber(&setup, 20_000, 3).unwrap();
    assert_eq!(a, simulate_ber(&setup, 20_000, 3).unwrap());
    assert_ne!(a, simulate_ber(&setup, 20_000, 4).unwrap());
    assert!(simulate_ber(&setup, 0, 3).is_err());
}

proptest! {
    #[test]
    fn error_probability_falls_with_energy(e in 0.01f64..20.0, k in 1.01f64..4.0) {
        let ch = shared();
        let sig = Signaling::antipodal(1).unwrap();
        let d = NoiseCovariance::identity(ch.n_r());
        let lo = pe_perfect(&mrt(ch, e), &ch.h_bl(), &d, &sig);
        let hi = pe_perfect(&mrt(ch, e * k), &ch.h_bl(), &d, &sig);
        prop_assert!(hi < lo);
        prop_assert!(lo <= 0.5);
    }

    #[test]
    fn binomial_check_accepts_its_own_mean(errors in 0u64..1000, trials in 1000u64..100_000) {
        let c = BerCount { errors, trials };
        prop_assert!(c.consistent_with(c.rate().clamp(1e-9, 1.0 - 1e-9), 3.0) || c.rate() == 0.0);
    }
}
