use proptest::prelude::*;

use rankdehaze::dehaze::{
    dark_channel, estimate_atmospheric_light, exposure_adjust, guided_filter, recover_unclamped,
    white_balance, AtmosphericLight, TransmissionMap, T_MIN,
};
use rankdehaze::imaging::{Plane, RgbImage};

fn image(w: usize, h: usize, px: &[[f64; 3]]) -> RgbImage {
    RgbImage::from_pixels(w, h, px.to_vec()).unwrap()
}

fn pixels(n: usize) -> impl Strategy<Value = Vec<[f64; 3]>> {
    prop::collection::vec(prop::array::uniform3(0.0f64..=1.0), n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dark_channel_bounded_by_channel_min(px in pixels(48), win in prop::sample::select(vec![1usize, 3, 5, 15])) {
        let img = image(8, 6, &px);
        let d = dark_channel(&img, win).unwrap();
        for (k, p) in img.pixels().iter().enumerate() {
            prop_assert!(d.data()[k] <= p[0].min(p[1]).min(p[2]));
        }
    }

    #[test]
    fn airlight_stays_in_range(px in pixels(48)) {
        let a = estimate_atmospheric_light(&image(8, 6, &px), 3).unwrap().0;
        prop_assert!(a.iter().all(|v| (1e-3..=1.0).contains(v)));
    }

    #[test]
    fn haze_round_trip(px in pixels(35), ts in prop::collection::vec(0.05f64..=1.0, 35),
                       a in prop::array::uniform3(0.2f64..=1.0)) {
        let j = image(7, 5, &px);
        let t = TransmissionMap::new(Plane::from_vec(7, 5, ts).unwrap()).unwrap();
        let hazy = RgbImage::from_fn(7, 5, |x, y| {
            let (p, tv) = (j.get(x, y), t.get(x, y));
            [0, 1, 2].map(|c| p[c] * tv + a[c] * (1.0 - tv))
        });
        let back = recover_unclamped(&hazy, AtmosphericLight(a), &t).unwrap();
        for (p, q) in back.pixels().iter().zip(j.pixels()) {
            for c in 0..3 {
                prop_assert!((p[c] - q[c]).abs() < 1e-9);
            }
        }
        // white balancing reduces the model to unit atmospheric light
        let wb = recover_unclamped(&white_balance(&hazy, AtmosphericLight(a)), AtmosphericLight([1.0; 3]), &t).unwrap();
        for (p, q) in wb.pixels().iter().zip(white_balance(&j, AtmosphericLight(a)).pixels()) {
            for c in 0..3 {
                prop_assert!((p[c] - q[c]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn guided_filter_output_is_valid(guide in prop::collection::vec(0.0f64..=1.0, 60),
                                     target in prop::collection::vec(1e-3f64..=1.0, 60),
                                     r in 0usize..6, eps in 1e-6f64..1.0) {
        let g = Plane::from_vec(10, 6, guide).unwrap();
        let t = TransmissionMap::new(Plane::from_vec(10, 6, target).unwrap()).unwrap();
        let q = guided_filter(&g, &t, r, eps).unwrap();
        prop_assert!(q.plane().data().iter().all(|v| (T_MIN..=1.0).contains(v)));
    }

    #[test]
    fn exposure_never_darkens(px in pixels(30), hz in pixels(30)) {
        let (j, i) = (image(6, 5, &px), image(6, 5, &hz));
        let (out, lambda) = exposure_adjust(&j, &i);
        prop_assert!(lambda.0 >= 1.0);
        for (p, q) in out.pixels().iter().zip(j.pixels()) {
            for c in 0..3 {
                prop_assert!(p[c] >= q[c] && p[c] <= 1.0);
            }
        }
    }
}
