//! Property tests for the file formats, convolutional index layout, and the
//! spatial-pooling / pooling-matrix equivalence.

use proptest::prelude::*;

use autopool::dataset::{load_pairs, save_pairs, PatchPairSet};
use autopool::features::ConvLayout;
use autopool::pooling::{pool, spatial_pool, spatial_pool_matrix, SpatialGridSpec};

fn pair_set_strategy() -> impl Strategy<Value = PatchPairSet> {
    (1usize..6, 1usize..6, 1usize..3, 1usize..4).prop_flat_map(|(h, w, c, n)| {
        let len = n * 2 * h * w * c;
        proptest::collection::vec(0f32..=1f32, len)
            .prop_map(move |data| PatchPairSet::new(h, w, c, data).unwrap())
    })
}

proptest! {
    #[test]
    fn appd_round_trip_is_bit_exact(set in pair_set_strategy()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pairs.appd");
        save_pairs(&set, &path).unwrap();
        let back = load_pairs(&path).unwrap();
        prop_assert_eq!(back.height(), set.height());
        prop_assert_eq!(back.width(), set.width());
        prop_assert_eq!(back.channels(), set.channels());
        // f32 payload must survive the round trip bit for bit.
        prop_assert_eq!(back.raw(), set.raw());
    }

    #[test]
    fn conv_layout_indexing_is_a_bijection(
        h in 4usize..12,
        w in 4usize..12,
        c in 1usize..3,
        p in 1usize..4,
        n_local in 1usize..5,
    ) {
        let layout = ConvLayout::new(h, w, c, p, n_local).unwrap();
        for flat in 0..layout.total_dim() {
            let (k, r, col) = layout.unflatten(flat);
            prop_assert!(k < n_local);
            prop_assert!(r < layout.map_rows());
            prop_assert!(col < layout.map_cols());
            prop_assert_eq!(layout.flat_index(k, r, col), flat);
        }
    }

    #[test]
    fn spatial_pooling_matrix_matches_native_exactly(
        side in 5usize..14,
        p in 1usize..4,
        n_local in 1usize..4,
        grids in proptest::collection::vec(1usize..5, 1..3),
        seed in any::<u64>(),
    ) {
        let layout = ConvLayout::new(side, side, 1, p, n_local).unwrap();
        prop_assume!(grids.iter().all(|&g| g <= layout.map_rows()));
        let spec = SpatialGridSpec::new(grids).unwrap();

        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let maps: Vec<f64> = (0..layout.total_dim()).map(|_| rng.gen_range(0.0..1.0)).collect();

        let native = spatial_pool(&maps, &layout, &spec).unwrap();
        let matrix = spatial_pool_matrix(&layout, &spec).unwrap();
        let via_matrix = pool(&matrix, &maps).unwrap();
        // Same summation order on both paths: equality must be exact.
        prop_assert_eq!(native, via_matrix);
    }
}
