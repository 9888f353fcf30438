use proptest::prelude::*;
use tbm_core::bessel::log_bessel_i;
use tbm_core::demapper::compute_llrs;
use tbm_core::polar::{decode_hard, polar_construct, polar_decode_sc, polar_encode, polar_transform};
use tbm_core::system::{assemble_bits, partition_bits, BitInterleave};
use tbm_core::tensor::{fold, kron, norm2, unfold, CTensor, CVec, C64};
use tbm_core::Codebook;

fn bits(n: usize) -> impl Strategy<Value = Vec<u8>> {
    prop::collection::vec(0u8..2, n)
}

fn cvec(n: usize) -> impl Strategy<Value = CVec> {
    prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0), n)
        .prop_map(|v| CVec::from_iterator(v.len(), v.into_iter().map(|(a, b)| C64::new(a, b))))
}

fn interleave() -> impl Strategy<Value = BitInterleave> {
    prop_oneof![Just(BitInterleave::Sequential), Just(BitInterleave::RoundRobin)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn polar_transform_is_linear_involution(m in 1u32..8, seed in any::<u64>()) {
        let n = 1usize << m;
        let a: Vec<u8> = (0..n).map(|j| ((seed >> (j % 64)) & 1) as u8).collect();
        let b: Vec<u8> = (0..n).map(|j| ((seed.rotate_left(17) >> (j % 64)) & 1) as u8).collect();
        let mut ta = a.clone();
        let mut tb = b.clone();
        let mut tab: Vec<u8> = a.iter().zip(&b).map(|(x, y)| x ^ y).collect();
        polar_transform(&mut ta);
        polar_transform(&mut tb);
        polar_transform(&mut tab);
        let sum: Vec<u8> = ta.iter().zip(&tb).map(|(x, y)| x ^ y).collect();
        prop_assert_eq!(&tab, &sum);
        polar_transform(&mut ta);
        prop_assert_eq!(ta, a);
    }

    #[test]
    fn polar_noiseless_round_trip(payload in bits(40), scale in 0.1f64..50.0) {
        let code = polar_construct(64, 40, 1.0).unwrap();
        let word = polar_encode(&code, &payload).unwrap();
        let llrs: Vec<f64> = word.iter().map(|&b| if b == 1 { scale } else { -scale }).collect();
        prop_assert_eq!(&polar_decode_sc(&code, &llrs).unwrap(), &payload);
        prop_assert_eq!(decode_hard(&code, &word).unwrap(), payload);
    }

    #[test]
    fn partition_assemble_round_trip(
        sizes in prop::collection::vec(1usize..12, 1..4),
        il in interleave(),
        seed in any::<u64>(),
    ) {
        let total: usize = sizes.iter().sum();
        let block: Vec<u8> = (0..total).map(|j| ((seed >> (j % 64)) & 1) as u8).collect();
        let parts = partition_bits(&block, &sizes, il).unwrap();
        prop_assert_eq!(parts.iter().map(Vec::len).collect::<Vec<_>>(), sizes);
        prop_assert_eq!(assemble_bits(&parts, il), block);
    }

    #[test]
    fn unfold_fold_round_trip(
        shape in prop::collection::vec(1usize..5, 2..5),
        mode_pick in any::<prop::sample::Index>(),
        seed in any::<u32>(),
    ) {
        let len: usize = shape.iter().product();
        let data: Vec<C64> = (0..len).map(|j| C64::new(j as f64, f64::from(seed % 97) - j as f64)).collect();
        let t = CTensor::from_vec(&shape, data).unwrap();
        let mode = mode_pick.index(shape.len());
        let m = unfold(&t, mode).unwrap();
        prop_assert_eq!(m.nrows(), shape[mode]);
        prop_assert!((m.norm_squared() - t.norm2()).abs() <= 1e-9 * t.norm2().max(1.0));
        prop_assert_eq!(fold(&m, mode, &shape).unwrap(), t);
    }

    #[test]
    fn kron_norm_is_multiplicative(a in cvec(3), b in cvec(4)) {
        let k = kron(&a, &b).unwrap();
        prop_assert_eq!(k.len(), 12);
        let expect = norm2(&a) * norm2(&b);
        prop_assert!((norm2(&k) - expect).abs() <= 1e-10 * expect.max(1.0));
    }

    #[test]
    fn bessel_recurrence(nu in 1u32..120, lx in -2.0f64..2.5) {
        let x = 10f64.powf(lx);
        let nu = f64::from(nu);
        let l = log_bessel_i(nu, x);
        let down = (log_bessel_i(nu - 1.0, x) - l).exp();
        let up = (log_bessel_i(nu + 1.0, x) - l).exp();
        let rhs = 2.0 * nu / x;
        prop_assert!(((down - up) - rhs).abs() <= 1e-9 * (down + up + rhs), "{} vs {}", down - up, rhs);
        prop_assert!(up < 1.0);
    }

    #[test]
    fn pilot_qam_labels_round_trip(
        index in 0u128..(1u128 << 40),
        (dim, order) in prop_oneof![Just((6usize, 4u32)), Just((14, 4)), Just((4, 16))],
    ) {
        let cb = Codebook::build_pilot_qam(dim, order, 0).unwrap();
        let index = index % cb.size();
        let label = cb.bits_of_index(index);
        prop_assert_eq!(label.len(), cb.bits_per_symbol());
        prop_assert_eq!(cb.index_of_bits(&label).unwrap(), index);
        let x = cb.map_bits(&label).unwrap();
        prop_assert!((norm2(&x) - dim as f64).abs() < 1e-9);
        let signs: Vec<u8> = compute_llrs(&x, &cb, 1.0).unwrap().iter().map(|&l| u8::from(l > 0.0)).collect();
        prop_assert_eq!(signs, label);
    }

    #[test]
    fn noiseless_llr_signs_match_label(index in 0u128..256, seed in 0u64..4, phase in 0.0..std::f64::consts::TAU) {
        let cb = Codebook::build_sphere(5, 8, seed).unwrap();
        let label = cb.bits_of_index(index);
        let z = cb.symbol_from_index(index) * C64::from_polar(1.0, phase);
        let llrs = compute_llrs(&z, &cb, 1.0).unwrap();
        for (l, b) in llrs.iter().zip(&label) {
            prop_assert!((*l > 0.0) == (*b == 1), "{l} for bit {b}");
        }
    }
}
