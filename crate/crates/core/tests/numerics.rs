use accel_codesign::numerics::bitexact::{bitexact_compare, corpus, kernel_pair, KernelOp};
use accel_codesign::numerics::{
    dequantize_int8, fc_int8_reference, fp16_round, ne_metric, quantize_int8, quantize_rowwise, sls_reference,
    FcInt8, OutDType, QuantParams, SlsTable,
};
use half::f16;
use proptest::prelude::*;

#[test]
fn fp16_round_matches_binary16_on_every_pattern() {
    for bits in 0..=u16::MAX {
        let x = f16::from_bits(bits).to_f32();
        let got = fp16_round(x);
        let want = f16::from_f32(x).to_f32();
        if x.is_nan() {
            assert!(got.is_nan(), "{bits:#06x}");
        } else {
            assert_eq!(got.to_bits(), want.to_bits(), "{bits:#06x}");
        }
    }
}

#[test]
fn fp16_round_between_patterns() {
    // midpoints and quarter points between neighbouring halves
    for bits in 0..0x7bffu16 {
        let lo = f16::from_bits(bits).to_f32();
        let hi = f16::from_bits(bits + 1).to_f32();
        for x in [lo + (hi - lo) * 0.25, (lo + hi) / 2.0, lo + (hi - lo) * 0.75] {
            assert_eq!(fp16_round(x).to_bits(), f16::from_f32(x).to_f32().to_bits(), "{x}");
        }
    }
}

#[test]
fn dual_implementations_agree_on_seeded_corpora() {
    for op in KernelOp::ALL {
        let (a, b) = kernel_pair(op);
        let report = bitexact_compare(&a, &b, &corpus(op, 1000, 11)).unwrap();
        assert!(report.passed(), "{}", report.render());
        assert_eq!(report.cases, 1000);
    }
}

#[test]
fn base_rate_predictor_worked_example() {
    let ne = ne_metric(&[0.9, 0.1, 0.1, 0.1], &[1, 0, 0, 0]).unwrap();
    let num = -(0.9f64.ln() + 3.0 * 0.9f64.ln()) / 4.0;
    let p: f64 = 0.25;
    let den = -(p.ln() + 3.0 * (1.0 - p).ln()) / 4.0;
    assert!((ne - num / den).abs() < 1e-12);
    assert!((ne - 0.1874).abs() < 1e-4);
}

/// Textbook int8 FC: exact integer dot products, one rounding to f32 of
/// the scaled accumulator, then binary16 rounding when asked.
fn fc_oracle(x: &[i8], w: &[i8], b: usize, k: usize, n: usize, xs: f32, zx: i32, ws: &[f32], fp16: bool) -> Vec<f32> {
    let mut out = Vec::new();
    for r in 0..b {
        for c in 0..n {
            let acc: i64 = (0..k).map(|i| (i64::from(x[r * k + i]) - i64::from(zx)) * i64::from(w[i * n + c])).sum();
            let s = if ws.len() == 1 { ws[0] } else { ws[c] };
            let v = (acc as f64 * f64::from(xs) * f64::from(s)) as f32;
            out.push(if fp16 { f16::from_f32(v).to_f32() } else { v });
        }
    }
    out
}

fn ints(len: usize) -> impl Strategy<Value = Vec<i8>> {
    prop::collection::vec(any::<i8>(), len)
}

proptest! {
    #[test]
    fn quantize_round_trip_within_half_step(xs in prop::collection::vec(-1.0f32..1.0, 1..64), scale in 0.004f32..0.1) {
        let p = QuantParams::symmetric(scale);
        let shape = [xs.len()];
        let q = quantize_int8(&xs, &shape, &p).unwrap();
        let back = dequantize_int8(&q, &shape, &p).unwrap();
        for (x, y) in xs.iter().zip(&back) {
            if (x / scale).abs() <= 127.0 {
                prop_assert!((x - y).abs() <= scale / 2.0 * (1.0 + 1e-5), "{} -> {}", x, y);
            }
        }
    }

    #[test]
    fn fc_matches_triple_loop(
        (b, k, n, x, w) in (1usize..6, 1usize..40, 1usize..12)
            .prop_flat_map(|(b, k, n)| (Just(b), Just(k), Just(n), ints(b * k), ints(k * n))),
        xs in 1e-3f32..1.0, zx in -128i32..=127, ws in 1e-3f32..1.0, per_channel: bool, fp16: bool,
    ) {
        let x_params = QuantParams::per_tensor(xs, zx);
        let scales: Vec<f32> = if per_channel { (0..n).map(|c| ws * (1.0 + c as f32 / 8.0)).collect() } else { vec![ws] };
        let w_params = if per_channel { QuantParams::per_channel(scales.clone(), 1) } else { QuantParams::symmetric(ws) };
        let op = FcInt8 { x: &x, w: &w, b, k, n, x_params: &x_params, w_params: &w_params,
            out: if fp16 { OutDType::Fp16 } else { OutDType::Fp32 } };
        let got = fc_int8_reference(&op).unwrap();
        let want = fc_oracle(&x, &w, b, k, n, xs, zx, &scales, fp16);
        prop_assert_eq!(got.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), want.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn sls_is_an_ascending_fp32_sum(
        rows in 1usize..20, dim in 1usize..8, seed in any::<u64>(), lengths in prop::collection::vec(0usize..6, 1..6),
    ) {
        let table: Vec<f32> = (0..rows * dim).map(|i| ((i as u64 ^ seed) % 1000) as f32 / 37.0 - 13.0).collect();
        let total: usize = lengths.iter().sum();
        let indices: Vec<i64> = (0..total).map(|i| ((seed >> (i % 32)) as usize % rows) as i64).collect();
        let lens: Vec<i64> = lengths.iter().map(|&l| l as i64).collect();
        let got = sls_reference(SlsTable::Dense { data: &table, rows, dim }, &indices, &lens).unwrap();
        let mut pos = 0;
        for (bi, &l) in lengths.iter().enumerate() {
            for d in 0..dim {
                let mut acc = 0.0f32;
                for &ix in &indices[pos..pos + l] {
                    acc += table[ix as usize * dim + d];
                }
                prop_assert_eq!(got[bi * dim + d].to_bits(), acc.to_bits());
            }
            pos += l;
        }
    }

    #[test]
    fn rowwise_codes_fit_their_width(row in prop::collection::vec(-50.0f32..50.0, 1..32), eight: bool) {
        let width = if eight { 8 } else { 4 };
        let t = quantize_rowwise(&row, 1, row.len(), width);
        prop_assert!(t.codes.iter().all(|&c| u32::from(c) <= t.max_code()));
    }

    #[test]
    fn base_rate_predictor_is_exactly_one(labels in prop::collection::vec(0u8..=1, 2..200)) {
        prop_assume!(labels.contains(&0) && labels.contains(&1));
        let rate = labels.iter().filter(|&&l| l == 1).count() as f64 / labels.len() as f64;
        let ne = ne_metric(&vec![rate; labels.len()], &labels).unwrap();
        prop_assert_eq!(ne, 1.0);
    }
}
