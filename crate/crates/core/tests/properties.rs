mod common;

use navc_core::adversarial::{component_functions, spatial_disc_forward, DiscriminatorConfig, DiscriminatorPair, GanKind};
use navc_core::archive::{read_archive, write_archive};
use navc_core::autograd::Graph;
use navc_core::codec::{decoder_forward, encoder_forward, quantize, Codec, CodecConfig, LatentGrid, LatentMode, QuantizeMode};
use navc_core::config::TrainConfig;
use navc_core::data::{crop_at, decode_raw, encode_raw, random_crop, ValueRange, VideoClip};
use navc_core::distortion::{
    ms_ssim, perceptual_loss, pixel_distance, DistortionTerms, FeatureConfig, FeatureExtractor, LossWeights, PixelNorm,
};
use navc_core::entropy::bitstream::{read_stream, write_stream, StreamHeader};
use navc_core::entropy::range_coder::PROB_TOTAL;
use navc_core::entropy::{quantize_pmf, EntropyConfig, EntropyModel};
use navc_core::Tensor;
use proptest::prelude::*;
use rand::Rng;

fn clip_strategy(min_side: usize, max_side: usize) -> impl Strategy<Value = VideoClip> {
    (1usize..=3, min_side..=max_side, min_side..=max_side, 1usize..=3, any::<u64>())
        .prop_map(|(t, h, w, c, seed)| common::random_clip([t, h, w, c], seed))
}

fn clip_pair(min_side: usize, max_side: usize) -> impl Strategy<Value = (VideoClip, VideoClip)> {
    clip_strategy(min_side, max_side).prop_flat_map(|x| {
        let dims = x.dims();
        any::<u64>().prop_map(move |seed| (x.clone(), common::random_clip(dims, seed)))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn distortions_are_nonnegative_and_vanish_on_equal_inputs((x, y) in clip_pair(11, 20)) {
        for norm in [PixelNorm::L1, PixelNorm::L2] {
            prop_assert!(pixel_distance(&x, &y, norm).unwrap() >= 0.0);
            prop_assert_eq!(pixel_distance(&x, &x, norm).unwrap(), 0.0);
        }
        let s = ms_ssim(&x, &y).unwrap().value;
        prop_assert!((0.0..=1.0).contains(&s));
        prop_assert_eq!(ms_ssim(&x, &x).unwrap().value, 1.0);
    }

    #[test]
    fn ms_ssim_is_symmetric((x, y) in clip_pair(11, 24)) {
        let a = ms_ssim(&x, &y).unwrap().value;
        let b = ms_ssim(&y, &x).unwrap().value;
        prop_assert!((a - b).abs() <= 1e-12);
    }

    #[test]
    fn hard_quantization_is_integral_and_bounded(values in prop::collection::vec(-3.0f64..12.0, 1..200), top in 1usize..16) {
        let n = values.len();
        let z = LatentGrid::new([1, 1, n, 1], LatentMode::Continuous, values.clone()).unwrap();
        let q = quantize(&z, QuantizeMode::Hard, top, None);
        prop_assert_eq!(q.mode(), LatentMode::Discrete);
        for (&v, &s) in values.iter().zip(q.values()) {
            prop_assert!(s.fract() == 0.0 && (0.0..=top as f64).contains(&s));
            prop_assert!((s - v.clamp(0.0, top as f64)).abs() <= 0.5);
        }
    }

    #[test]
    fn noise_quantization_stays_within_half_a_step(values in prop::collection::vec(0.0f64..7.0, 1..200), seed in any::<u64>()) {
        let n = values.len();
        let z = LatentGrid::new([1, 1, n, 1], LatentMode::Continuous, values.clone()).unwrap();
        let noise = navc_core::codec::uniform_noise(&[n], seed, 3);
        let q = quantize(&z, QuantizeMode::Noise, 7, Some(noise.data()));
        for (&v, &s) in values.iter().zip(q.values()) {
            prop_assert!((s - v).abs() <= 0.5 && (0.0..=7.0).contains(&s));
        }
    }

    #[test]
    fn quantized_tables_are_proper(raw in prop::collection::vec(0.0f64..1.0, 2..64)) {
        let total: f64 = raw.iter().sum::<f64>() + 1e-9;
        let q: Vec<f64> = raw.iter().map(|v| (v + 1e-9 / raw.len() as f64) / total).collect();
        let f = quantize_pmf(&q);
        prop_assert_eq!(f.iter().sum::<u32>(), PROB_TOTAL);
        prop_assert!(f.iter().all(|&v| v >= 1));
    }

    #[test]
    fn bitstream_headers_round_trip(
        frames in any::<u16>(), height in any::<u16>(), width in any::<u16>(), channels in any::<u8>(),
        max_symbol in any::<u8>(), latent in any::<[u16; 3]>(), latent_channels in any::<u16>(), model_hash in any::<u64>(),
        payload in prop::collection::vec(any::<u8>(), 0..300),
    ) {
        let header = StreamHeader { frames, height, width, channels, max_symbol, latent, latent_channels, model_hash };
        let bytes = write_stream(&header, &payload).unwrap();
        let (h, p) = read_stream(&bytes).unwrap();
        prop_assert_eq!(h, header);
        prop_assert_eq!(p, &payload[..]);
    }

    #[test]
    fn archives_round_trip(
        doc in "[ -~]{0,64}",
        arrays in prop::collection::btree_map("[a-z.]{1,12}", prop::collection::vec(-1e6f64..1e6, 0..20), 0..6),
    ) {
        let tensors: Vec<(String, Tensor)> = arrays
            .into_iter()
            .map(|(k, v)| (k, Tensor::new(vec![v.len()], v).unwrap()))
            .collect();
        let bytes = write_archive(&doc, tensors.iter().map(|(k, t)| (k.as_str(), t))).unwrap();
        let back = read_archive(&bytes).unwrap();
        prop_assert_eq!(back.doc, doc);
        prop_assert_eq!(back.arrays.len(), tensors.len());
        for (k, t) in &tensors {
            prop_assert_eq!(&back.arrays[k], t);
        }
    }

    #[test]
    fn raw_files_round_trip(x in clip_strategy(1, 9)) {
        let byte = x.to_byte();
        let (header, bytes) = encode_raw(&byte);
        let back = decode_raw(&header, &bytes, std::path::Path::new("mem")).unwrap();
        prop_assert_eq!(back, byte);
    }

    #[test]
    fn crops_are_windows_of_the_source(x in clip_strategy(4, 12), seed in any::<u64>(), ch in 1usize..=4, cw in 1usize..=4) {
        let crop = random_crop(&x, ch, cw, seed).unwrap();
        prop_assert_eq!(&crop, &random_crop(&x, ch, cw, seed).unwrap());
        let [_, h, w, _] = x.dims();
        let found = (0..=h - ch).any(|oy| (0..=w - cw).any(|ox| crop_at(&x, oy, ox, ch, cw).unwrap() == crop));
        prop_assert!(found);
    }

    #[test]
    fn least_squares_generator_pushes_scores_toward_one(y in -10.0f64..10.0) {
        prop_assume!((y - 1.0).abs() > 1e-6);
        let h = component_functions(GanKind::LeastSquares).h;
        let g = Graph::new();
        let v = g.param(Tensor::new(vec![1], vec![y]).unwrap());
        let out = navc_core::adversarial::generator_objective_var(&g, v, None, GanKind::LeastSquares);
        let grad = g.backward(out).get(v).unwrap().item();
        prop_assert_eq!(grad.signum(), (y - 1.0).signum());
        prop_assert!((h(y) - (y - 1.0) * (y - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn perceptual_term_scales_linearly_with_gamma(pixel in 0.0f64..10.0, perceptual in 0.0f64..10.0, adversarial in -10.0f64..10.0, gamma in 0.0f64..5.0) {
        let terms = DistortionTerms { pixel, perceptual, adversarial };
        let w = LossWeights::new(0.005, gamma, 1e-4, 0.1).unwrap();
        let w2 = LossWeights { gamma: 2.0 * gamma, ..w };
        let (a, b) = (terms.contributions(&w), terms.contributions(&w2));
        prop_assert_eq!(b[1], 2.0 * a[1]);
        prop_assert_eq!((a[0], a[2]), (b[0], b[2]));
    }

    #[test]
    fn config_documents_round_trip(beta in 0.0f64..2.0, seed in any::<u64>(), steps in 0usize..10_000) {
        let mut c = TrainConfig::default();
        c.loss.beta = beta;
        c.train.seed = seed;
        c.train.steps = steps;
        let back = TrainConfig::from_json(&c.to_json()).unwrap();
        prop_assert_eq!(back, c);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn range_coding_is_lossless(
        t in 1usize..=3, h in 1usize..=6, w in 1usize..=6, c in 1usize..=3, alphabet in 2usize..=12,
        seed in any::<u64>(), scale in 0.0f64..6.0,
    ) {
        let model = EntropyModel::new(&EntropyConfig::default(), c, alphabet).unwrap();
        let mut params = model.init_params(seed);
        let mut r = common::rng(seed);
        for (_, p) in params.iter_mut() {
            for v in p.data_mut() {
                *v += scale * (r.gen::<f64>() - 0.5);
            }
        }
        let symbols: Vec<u16> = (0..t * h * w * c).map(|_| r.gen_range(0..alphabet) as u16).collect();
        let grid = LatentGrid::from_symbols([t, h, w, c], &symbols).unwrap();
        let payload = model.range_encode(&params, &grid).unwrap();
        let back = model.range_decode(&params, &payload, [t, h, w, c]).unwrap();
        prop_assert_eq!(back.symbols(), symbols);
    }

    #[test]
    fn decoded_shape_matches_input(t in 1usize..=4, hb in 1usize..=3, wb in 1usize..=3, s_log in 1u32..=2, seed in any::<u64>()) {
        let s = 1usize << s_log;
        let codec = Codec::new(CodecConfig {
            spatial_downsample: s,
            latent_channels: 2,
            num_levels: 4,
            base_width: 2,
            depth: 0,
            ..CodecConfig::default()
        })
        .unwrap();
        let params = codec.init_params(seed);
        let x = common::random_clip([t, hb * s, wb * s, 3], seed);
        let z = encoder_forward(&codec, &params, &x).unwrap();
        let zq = quantize(&z, QuantizeMode::Hard, codec.config().max_symbol(), None);
        prop_assert_eq!(&zq, &quantize(&encoder_forward(&codec, &params, &x).unwrap(), QuantizeMode::Hard, 3, None));
        let y = decoder_forward(&codec, &params, &zq, t, x.fps()).unwrap();
        prop_assert_eq!(y.dims(), x.dims());
        prop_assert!(y.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn spatial_scores_are_frame_independent(frame in 0usize..3, seed in any::<u64>()) {
        let pair = DiscriminatorPair::new(DiscriminatorConfig { width: 2, blocks: 1, ..DiscriminatorConfig::default() }).unwrap();
        let params = pair.init_params(seed);
        let x = common::random_clip([3, 8, 8, 3], seed);
        let mut data = x.data().to_vec();
        let per = 8 * 8 * 3;
        for v in &mut data[frame * per..(frame + 1) * per] {
            *v = 1.0 - *v;
        }
        let y = VideoClip::new(x.dims(), ValueRange::Unit, x.fps(), data).unwrap();
        let a = spatial_disc_forward(&pair, &x, &params).unwrap();
        let b = spatial_disc_forward(&pair, &y, &params).unwrap();
        for t in 0..3 {
            prop_assert_eq!(a[t] == b[t], t != frame, "frame {}", t);
        }
    }

    #[test]
    fn perceptual_distance_is_nonnegative_and_vanishes_on_equal_inputs((x, y) in clip_pair(8, 16)) {
        prop_assume!(x.channels() == 3);
        let fe = FeatureExtractor::new(FeatureConfig { base_width: 2, ..FeatureConfig::default() }).unwrap();
        prop_assert!(perceptual_loss(&x, &y, &fe).unwrap() >= 0.0);
        prop_assert_eq!(perceptual_loss(&x, &x, &fe).unwrap(), 0.0);
    }
}

#[test]
fn ms_ssim_falls_as_noise_grows() {
    let x = common::smooth_clip([2, 48, 48, 3], 4);
    let scores: Vec<f64> = [0.01, 0.05, 0.1, 0.2, 0.4]
        .iter()
        .map(|&a| ms_ssim(&x, &common::perturbed(&x, a, 9)).unwrap().value)
        .collect();
    assert!(scores.windows(2).all(|w| w[0] > w[1]), "{scores:?}");
}

#[test]
fn full_scale_profile_parses() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/full-scale.unverified.json");
    let c = TrainConfig::from_json(&std::fs::read_to_string(path).unwrap()).unwrap();
    assert_eq!(c.train.batch_size, 37);
    assert_eq!(c.train.optimizer.lr, 1e-4);
    assert_eq!(c.loss.gan_kind, GanKind::LeastSquares);
    assert_eq!((c.data.crop_height, c.data.crop_width), (160, 160));
    assert_eq!(c.total_steps(), 12 * 93_750usize.div_ceil(37));
}

#[test]
fn desk_profile_matches_acceptance_config() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/desk.json");
    let mut c = TrainConfig::from_json(&std::fs::read_to_string(path).unwrap()).unwrap();
    assert_eq!(c.train.steps, 2000);
    c.train.steps = common::desk_config().train.steps;
    assert_eq!(c, common::desk_config());
}
