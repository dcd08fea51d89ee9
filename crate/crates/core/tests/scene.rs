use std::f64::consts::PI;

use bibc::linalg::{norm_sqr, CVec};
use bibc::scene::*;
use bibc::{ApId, Partition, Point3, Scene, SceneChannels};
use proptest::prelude::*;

fn default_partition(scene: &Scene) -> Partition {
    let all = scene.ap_ids();
    Partition::from_ce(&all, &[ApId(1), ApId(2), ApId(6), ApId(7)], scene.ref_id()).unwrap()
}

#[test]
fn synthesis_is_deterministic() {
    let s = Scene::reference(16);
    let a = SceneChannels::synthesize(&s).unwrap();
    let b = SceneChannels::synthesize(&s).unwrap();
    let p = default_partition(&s);
    let (ca, cb) = (a.for_partition(&p, 0).unwrap(), b.for_partition(&p, 0).unwrap());
    assert_eq!(ca.h_c, cb.h_c);
    assert_eq!(ca.h_r, cb.h_r);
    assert_eq!(ca.h_dl, cb.h_dl);
}

#[test]
fn reference_link_matches_hand_computation() {
    let s = Scene::reference(16);
    let chans = SceneChannels::synthesize(&s).unwrap();
    let ap = s.ap(s.ref_id()).unwrap().center;
    let bde = s.bdes[0].position;
    let dims = s.room.dims;
    let mirrors = [
        [-bde.x(), bde.y(), bde.z()],
        [2.0 * dims[0] - bde.x(), bde.y(), bde.z()],
        [bde.x(), -bde.y(), bde.z()],
        [bde.x(), 2.0 * dims[1] - bde.y(), bde.z()],
        [bde.x(), bde.y(), -bde.z()],
        [bde.x(), bde.y(), 2.0 * dims[2] - bde.z()],
    ];
    let term = |d: f64| num_complex::Complex64::from_polar(s.wavelength / (4.0 * PI * d), -2.0 * PI * d / s.wavelength);
    let mut want = term(ap.distance(&bde));
    for m in mirrors {
        want += term(ap.distance(&Point3(m))) * 0.5;
    }
    let got = chans.link(0, s.ref_id()).unwrap()[0];
    assert!((got - want).norm() <= 1e-12 * want.norm());
}

#[test]
fn direct_link_is_symmetric_between_aps() {
    let s = Scene::reference(16);
    let chans = SceneChannels::synthesize(&s).unwrap();
    let one = Partition::from_ce(&s.ap_ids(), &[ApId(1)], s.ref_id()).unwrap();
    let two = Partition::from_ce(&s.ap_ids(), &[ApId(2)], s.ref_id()).unwrap();
    let a = chans.for_partition(&one, 0).unwrap();
    let b = chans.for_partition(&two, 0).unwrap();
    let row_of = |cs: &ChannelSet, id: ApId| {
        let mut pos = 0;
        for r in cs.partition.readers() {
            if *r == id {
                return pos;
            }
            pos += chans.antennas(*r).unwrap();
        }
        unreachable!()
    };
    let (ra, rb) = (row_of(&a, ApId(2)), row_of(&b, ApId(1)));
    for i in 0..16 {
        for k in 0..16 {
            assert_eq!(a.h_dl[(ra + i, k)], b.h_dl[(rb + k, i)]);
        }
    }
}

#[test]
fn dl_prime_drops_reference_rows() {
    let s = Scene::reference(4).with_ref_array(2, 2);
    let chans = SceneChannels::synthesize(&s).unwrap();
    let cs = chans.for_partition(&default_partition(&s), 0).unwrap();
    assert_eq!(cs.ref_rows.len(), 4);
    assert_eq!(cs.n_r(), 6 * 16 + 4);
    let h = cs.h_dl_prime();
    assert_eq!(h.nrows(), cs.n_r() - 4);
    for (i, r) in cs.non_ref_rows().into_iter().enumerate() {
        assert_eq!(h.row(i), cs.h_dl.row(r));
    }
    assert!(cs.reader_bits.iter().enumerate().all(|(r, b)| (*b == 16) == cs.ref_rows.contains(&r)));
}

#[test]
fn cascade_is_rank_one_outer_product() {
    let s = Scene::reference(16);
    let cs = synth_channels(&s, &default_partition(&s)).unwrap();
    let h = cs.h_bl();
    assert_eq!(h.shape(), (cs.n_r(), cs.n_c()));
    assert_eq!(h[(3, 5)], cs.h_r[3] * cs.h_c[5]);
    let sv = h.singular_values();
    assert!(sv[1] <= 1e-12 * sv[0]);
}

#[test]
fn partitions_must_cover_the_scene() {
    let s = Scene::reference(16);
    let chans = SceneChannels::synthesize(&s).unwrap();
    let partial = Partition::new(vec![ApId(1)], vec![s.ref_id()], s.ref_id()).unwrap();
    assert!(chans.for_partition(&partial, 0).is_err());
    assert!(chans.for_partial(&partial, 0).is_ok());
    assert!(chans.for_partition(&default_partition(&s), 3).is_err());
}

#[test]
fn invalid_scenes_are_rejected() {
    let mut s = Scene::reference(16);
    s.bdes[0].position = Point3::new(25.0, 4.0, 2.0);
    assert!(SceneChannels::synthesize(&s).is_err());
    let mut s = Scene::reference(16);
    s.room.g_smc = 1.5;
    assert!(s.validate().is_err());
    let mut s = Scene::reference(16);
    s.aps.iter_mut().for_each(|a| a.is_ref = false);
    assert!(s.validate().is_err());
}

#[test]
fn scene_round_trips_through_toml() {
    let s = Scene::reference(4).with_ref_array(2, 2);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("scene.toml");
    std::fs::write(&path, s.to_toml().unwrap()).unwrap();
    assert_eq!(Scene::from_path(&path).unwrap(), s);
}

#[test]
fn pg_map_covers_the_room() {
    let s = Scene::reference(16);
    let p = default_partition(&s);
    let cs = synth_channels(&s, &p).unwrap();
    let x = cs.h_c.map(|v| v.conj()).unscale(norm_sqr(&cs.h_c).sqrt());
    let grid = GridSpec::covering(&s.room, 20, 10, 2.0);
    let map = pg_map(&s, &p, &x, &grid).unwrap();
    assert_eq!(map.len(), 200);
    assert!(map.iter().all(|m| m.x > 0.0 && m.x < 20.0 && m.y > 0.0 && m.y < 10.0 && m.pg > 0.0));
    let probe = probe_channel(&s, &p, &s.bdes[0].position).unwrap();
    assert!((path_gain(&x, &probe).unwrap() - norm_sqr(&cs.h_c)).abs() <= 1e-12 * norm_sqr(&cs.h_c));
}

#[test]
fn path_gain_rejects_zero_beamformer() {
    assert!(path_gain(&CVec::zeros(3), &CVec::zeros(3)).is_err());
}

proptest! {
    #[test]
    fn los_gain_decays_with_distance(d in 0.05f64..50.0, k in 1.01f64..10.0) {
        let near = los_gain(d, 0.1).unwrap().norm();
        let far = los_gain(d * k, 0.1).unwrap().norm();
        prop_assert!(far < near);
        prop_assert!((near * d - 0.1 / (4.0 * PI)).abs() <= 1e-12);
    }

    #[test]
    fn images_are_as_far_as_the_reflected_path(x in 0.1f64..19.9, y in 0.1f64..9.9, z in 0.1f64..3.9) {
        let room = RoomGeometry::default();
        let p = Point3::new(x, y, z);
        let imgs = image_points(&room, &p).unwrap();
        prop_assert_eq!(imgs.len(), 6);
        let walls = [x, 20.0 - x, y, 10.0 - y, z, 4.0 - z];
        for (img, w) in imgs.iter().zip(walls) {
            prop_assert!((img.distance(&p) - 2.0 * w).abs() <= 1e-9);
        }
    }

    #[test]
    fn channel_is_reciprocal(ax in 0.5f64..19.5, ay in 0.5f64..9.5, bx in 0.5f64..19.5, by in 0.5f64..9.5) {
        let room = RoomGeometry::default();
        let (a, b) = (Point3::new(ax, ay, 2.0), Point3::new(bx, by, 1.0));
        let h1 = channel_coefficient(&room, 0.1, &a, &b).unwrap();
        let h2 = channel_coefficient(&room, 0.1, &b, &a).unwrap();
        prop_assert!((h1 - h2).norm() <= 1e-9 * h1.norm().max(1e-300));
    }
}
