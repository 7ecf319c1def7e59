use cartooner::checkpoint::{Archive, ArchiveKind, Manifest, ModelCheckpoint};
use cartooner::config::parse_pairs;
use cartooner::io::{decode_image, decode_mask, encode_mask, encode_png, hex_color, parse_hex_color};
use cartooner_core::nn::{init_params, NetConfig};
use cartooner_core::{ColorSpace, Image, RegionMask, Tensor};
use proptest::prelude::*;

fn tensor() -> impl Strategy<Value = Tensor> {
    [1usize..3, 1usize..4, 1usize..5, 1usize..5].prop_flat_map(|[a, b, c, d]| {
        prop::collection::vec(prop::num::f64::ANY, a * b * c * d).prop_map(move |v| Tensor::from_vec([a, b, c, d], v))
    })
}

fn same_bits(a: &Tensor, b: &Tensor) -> bool {
    a.shape() == b.shape() && a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits())
}

proptest! {
    #[test]
    fn archive_round_trips_bitwise(entries in prop::collection::btree_map("[a-z][a-z0-9./]{0,20}", (tensor(), any::<bool>()), 0..6)) {
        let mut a = Archive::new(Manifest::new(ArchiveKind::BatchDump));
        for (k, (t, f)) in &entries {
            a.insert(k.clone(), t.clone(), *f);
        }
        let back = Archive::from_bytes(&a.to_bytes()).unwrap();
        prop_assert_eq!(back.entries.len(), entries.len());
        for (k, (t, f)) in &entries {
            let e = &back.entries[k];
            prop_assert!(same_bits(&e.tensor, t));
            prop_assert_eq!(e.frozen, *f);
        }
    }

    #[test]
    fn truncated_archives_are_rejected(cut in 1usize..200) {
        let mut a = Archive::new(Manifest::new(ArchiveKind::BatchDump));
        a.insert("x", Tensor::full([1, 2, 3, 4], 0.5), false);
        let bytes = a.to_bytes();
        let cut = cut.min(bytes.len() - 1);
        prop_assert!(Archive::from_bytes(&bytes[..bytes.len() - cut]).is_err());
    }

    #[test]
    fn hex_colors_round_trip(r in 0u8.., g in 0u8.., b in 0u8..) {
        let c = [r as f64 / 255.0, g as f64 / 255.0, b as f64 / 255.0];
        let s = hex_color(c);
        prop_assert_eq!(s.len(), 7);
        prop_assert_eq!(parse_hex_color(&s), Some(c));
        prop_assert_eq!(parse_hex_color(&s.to_lowercase()), Some(c));
    }

    #[test]
    fn masks_round_trip_through_png(w in 1usize..12, h in 1usize..12, seed in any::<u64>()) {
        let data: Vec<f64> = (0..w * h).map(|i| ((seed >> (i % 61)) as u8) as f64 / 255.0).collect();
        let mask = RegionMask::new(w, h, data).unwrap();
        let back = decode_mask(&encode_mask(&mask).unwrap()).unwrap();
        prop_assert_eq!(back, mask);
    }

    #[test]
    fn eight_bit_images_round_trip_through_png(w in 1usize..10, h in 1usize..10, bytes in prop::collection::vec(any::<u8>(), 300)) {
        let data: Vec<f64> = (0..w * h * 3).map(|i| bytes[i % bytes.len()] as f64 / 255.0).collect();
        let img = Image::new(w, h, ColorSpace::Rgb, data).unwrap();
        let back = decode_image(&encode_png(&img).unwrap()).unwrap();
        prop_assert!(back.max_abs_diff(&img) < 1e-12);
    }

    #[test]
    fn config_pairs_parse(pairs in prop::collection::btree_map(prop::sample::select(vec!["steps", "lr", "seed", "preset", "photo_dir"]), "[a-z0-9._]{1,12}", 0..5)) {
        let text: String = pairs.iter().map(|(k, v)| format!("# note\n  {} = {}  \n\n", k, v)).collect();
        let parsed = parse_pairs(&text).unwrap();
        prop_assert_eq!(parsed.len(), pairs.len());
        for (k, v) in &pairs {
            prop_assert_eq!(&parsed[*k], v);
        }
    }
}

#[test]
fn model_checkpoint_round_trips() {
    let config = NetConfig::desk();
    let params = init_params(&config, 3).unwrap();
    let ck = ModelCheckpoint { config: config.clone(), params: params.clone(), training: None, mode: Some("preserve".into()), name: Some("ink".into()) };
    let back = ModelCheckpoint::from_archive(&Archive::from_bytes(&ck.to_archive().to_bytes()).unwrap()).unwrap();
    assert_eq!(back.config, config);
    assert_eq!(back.params.subtree_hash(""), params.subtree_hash(""));
    assert_eq!(back.name.as_deref(), Some("ink"));
}
