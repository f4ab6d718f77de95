use kdgan::data::{make_one_class_split, normalize, resize_bilinear_to, RawDataset};
use kdgan::eval::{self, auc, records_from, ScoreRecord};
use kdgan::losses::{self, DistillWeights, LossWeights};
use kdgan::nn::Parameterized;
use kdgan::rng::{stream, Stream};
use kdgan::{ArchSpec, Discriminator, Generator, Tensor};
use proptest::collection::vec;
use proptest::prelude::*;

/// Fixed case count; failures are reported, not persisted next to the sources.
fn cases(n: u32) -> ProptestConfig {
    ProptestConfig { cases: n, failure_persistence: None, ..ProptestConfig::default() }
}

fn pair_of_vecs(max: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (1..max).prop_flat_map(|n| (vec(-5.0..5.0f64, n), vec(-5.0..5.0f64, n)))
}

fn weights() -> impl Strategy<Value = [f64; 3]> {
    [0.0..20.0f64, 0.0..20.0f64, 0.0..20.0f64]
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0)
}

/// Exhaustive Mann-Whitney statistic over every (novel, normal) pair.
fn pairwise_auc(records: &[ScoreRecord]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for a in records.iter().filter(|r| r.label == 1) {
        for b in records.iter().filter(|r| r.label == 0) {
            pairs += 1.0;
            if a.score > b.score {
                wins += 1.0;
            } else if a.score == b.score {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

/// Scores drawn from a coarse grid half the time so ties are common; labels
/// always contain both classes.
fn instance() -> impl Strategy<Value = Vec<ScoreRecord>> {
    (2..=200usize, any::<bool>())
        .prop_flat_map(|(n, coarse)| {
            let scores = if coarse { vec((0..8u8).prop_map(|v| v as f64 / 4.0), n).boxed() } else { vec(-1e3..1e3f64, n).boxed() };
            (scores, vec(0..=1u8, n), 0..n, 0..n)
        })
        .prop_map(|(scores, mut labels, i, j)| {
            labels[i] = 0;
            let j = if i == j { (j + 1) % labels.len() } else { j };
            labels[j] = 1;
            records_from(&scores, &labels)
        })
}

pub fn distances_are_nonnegative_finite_and_symmetric() {
    proptest!(cases(1000), |((a, b) in pair_of_vecs(64))| {
        type Distance = fn(&[f64], &[f64]) -> Result<f64, losses::LossError>;
        let all: [(&str, Distance); 6] = [
            ("s_con", losses::s_con),
            ("s_enc", losses::s_enc),
            ("s_adv", losses::s_adv),
            ("k1", losses::k1),
            ("kx", losses::kx),
            ("k2", losses::k2),
        ];
        for (name, f) in all {
            let ab = f(&a, &b).unwrap();
            prop_assert!(ab.is_finite() && ab >= 0.0, "{name} = {ab}");
            prop_assert_eq!(ab, f(&b, &a).unwrap(), "{} not symmetric", name);
            prop_assert_eq!(f(&a, &a).unwrap(), 0.0);
        }
    });
}

pub fn k_l_vanishes_exactly_on_identical_outputs() {
    proptest!(cases(1000), |((z1, z1s) in pair_of_vecs(16), (x, xs) in pair_of_vecs(64), (z2, z2s) in pair_of_vecs(16), w in [1e-3..10.0f64, 1e-3..10.0f64, 1e-3..10.0f64])| {
        let w = DistillWeights { w1: w[0], wx: w[1], w2: w[2] };
        let same = losses::k_l(&w, losses::k1(&z1, &z1).unwrap(), losses::kx(&x, &x).unwrap(), losses::k2(&z2, &z2).unwrap());
        prop_assert_eq!(same, 0.0);
        let differs = z1 != z1s || x != xs || z2 != z2s;
        let k = losses::k_l(&w, losses::k1(&z1, &z1s).unwrap(), losses::kx(&x, &xs).unwrap(), losses::k2(&z2, &z2s).unwrap());
        prop_assert_eq!(k > 0.0, differs);
    });
}

pub fn composites_are_linear_in_weights() {
    proptest!(cases(1000), |(s in [0.0..10.0f64, 0.0..10.0f64, 0.0..10.0f64], u in weights(), v in weights(), c in 0.0..5.0f64)| {
        let lw = |w: [f64; 3]| LossWeights { w_con: w[0], w_enc: w[1], w_adv: w[2] };
        let dw = |w: [f64; 3]| DistillWeights { w1: w[0], wx: w[1], w2: w[2] };
        let sum = [u[0] + c * v[0], u[1] + c * v[1], u[2] + c * v[2]];
        let g = |w| losses::generator_loss(&lw(w), s[0], s[1], s[2]);
        let k = |w| losses::k_l(&dw(w), s[0], s[1], s[2]);
        prop_assert!(close(g(sum), g(u) + c * g(v)));
        prop_assert!(close(k(sum), k(u) + c * k(v)));
    });
}

pub fn cross_entropy_is_nonnegative_and_finite() {
    proptest!(cases(1000), |(real in vec(0.0..=1.0f64, 1..16), fake in vec(0.0..=1.0f64, 1..16))| {
        let l = losses::discriminator_loss(&real, &fake);
        prop_assert!(l.is_finite() && l >= 0.0);
    });
}



pub fn auc_matches_pairwise_oracle() {
    proptest!(cases(500), |(records in instance())| {
        let fast = auc(&records).unwrap();
        let oracle = pairwise_auc(&records);
        prop_assert!((fast - oracle).abs() <= 1e-12, "rank {fast} vs pairwise {oracle}");
    });
}

pub fn flipping_labels_complements_auc() {
    proptest!(cases(500), |(records in instance())| {
        let mut distinct: Vec<ScoreRecord> = Vec::new();
        for r in &records {
            if distinct.iter().all(|d| d.score != r.score) {
                distinct.push(*r);
            }
        }
        prop_assume!(distinct.iter().any(|r| r.label == 0) && distinct.iter().any(|r| r.label == 1));
        let flipped: Vec<ScoreRecord> = distinct.iter().map(|r| ScoreRecord { label: 1 - r.label, ..*r }).collect();
        let sum = auc(&distinct).unwrap() + auc(&flipped).unwrap();
        prop_assert!((sum - 1.0).abs() <= 1e-12);
    });
}

pub fn auc_is_invariant_under_monotone_transforms() {
    proptest!(cases(500), |(records in instance())| {
        let moved: Vec<ScoreRecord> = records.iter().map(|r| ScoreRecord { score: (r.score / 100.0).exp() * 3.0 - 7.0, ..*r }).collect();
        prop_assert_eq!(auc(&records).unwrap(), auc(&moved).unwrap());
    });
}

pub fn suite_mean_is_mean_of_rows() {
    proptest!(cases(500), |(aucs in vec(vec(0.0..1.0f64, 1..4), 1..6))| {
        let classes: Vec<u8> = (0..aucs.len() as u8).collect();
        let repeats = aucs.iter().map(Vec::len).max().unwrap();
        let report = eval::run_suite("table", &classes, repeats, (0..repeats as u64).collect(), 1, None, |c, r| {
            aucs[c as usize].get(r).copied().ok_or_else(|| "no value".to_string())
        });
        let rows: Vec<f64> = report.rows.iter().map(|r| r.mean_auc).collect();
        let mean = rows.iter().sum::<f64>() / rows.len() as f64;
        prop_assert!((report.mean_auc - mean).abs() <= 1e-12);
    });
}



pub fn normalize_is_monotone() {
    proptest!(cases(200), |(a in any::<u8>(), b in any::<u8>())| {
        prop_assert_eq!(a.cmp(&b), normalize(a).partial_cmp(&normalize(b)).unwrap());
    });
}

pub fn resize_stays_within_input_range() {
    proptest!(cases(200), |(h in 1..12usize, w in 1..12usize, c in 1..4usize, pixels in vec(-1.0..1.0f32, 432))| {
        let image = &pixels[..h * w * c];
        let out = resize_bilinear_to(image, h, w, c, 32, 32);
        let lo = image.iter().cloned().fold(f32::INFINITY, f32::min);
        let hi = image.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        prop_assert_eq!(out.len(), 32 * 32 * c);
        prop_assert!(out.iter().all(|v| *v >= lo && *v <= hi));
    });
}

pub fn split_recovers_normal_test_images() {
    proptest!(cases(200), |(labels in vec(0..3u8, 4..24), normal in 0..3u8, seed in any::<u64>())| {
        prop_assume!(labels.contains(&normal));
        let n = labels.len();
        let pixels: Vec<u8> = (0..n * 16).map(|i| (i as u64).wrapping_mul(seed | 1).wrapping_shr(7) as u8).collect();
        let raw = RawDataset::new("toy", (4, 4, 1), pixels, labels.clone()).unwrap();
        let split = make_one_class_split(&raw, &raw, normal).unwrap();
        prop_assert_eq!(&split, &make_one_class_split(&raw, &raw, normal).unwrap());
        let mut kept: Vec<Vec<u32>> = (0..split.test.len())
            .filter(|&i| split.test_labels[i] == 0)
            .map(|i| split.test.image(i).iter().map(|v| v.to_bits()).collect())
            .collect();
        let mut expect: Vec<Vec<u32>> = (0..split.train.len()).map(|i| split.train.image(i).iter().map(|v| v.to_bits()).collect()).collect();
        kept.sort();
        expect.sort();
        prop_assert_eq!(kept, expect);
        prop_assert_eq!(split.test_labels.iter().filter(|&&l| l == 0).count(), labels.iter().filter(|&&l| l == normal).count());
    });
}



pub fn shapes_compose_for_every_spec() {
    proptest!(cases(12), |(c in 1..4usize, c1 in 1..6usize, c2 in 1..6usize, c3 in 1..6usize, d in 1..12usize, n in 1..4usize, seed in any::<u64>())| {
        let spec = ArchSpec::new(c, [c1, c2, c3], d);
        let gen: Generator<f32> = Generator::new(&spec, &mut stream(seed, Stream::TeacherInit));
        let x = Tensor::full(&spec.image_shape(n), 0.1f32);
        let out = gen.forward(&x).unwrap();
        prop_assert_eq!(out.z1.shape(), &[n, d, 1, 1][..]);
        prop_assert_eq!(out.x_hat.shape(), &spec.image_shape(n)[..]);
        prop_assert_eq!(out.z2.shape(), &[n, d, 1, 1][..]);
        prop_assert_eq!(kdgan::model::count_params(&spec), gen.param_count() as u64);
    });
}

pub fn evaluation_passes_are_repeatable() {
    proptest!(cases(12), |(seed in any::<u64>())| {
        let spec = ArchSpec::new(1, [2, 3, 4], 5);
        let mut rng = stream(seed, Stream::TeacherInit);
        let gen: Generator<f32> = Generator::new(&spec, &mut rng);
        let disc: Discriminator<f32> = Discriminator::new(&spec, &mut rng);
        let data: Vec<f32> = (0..3 * 1024).map(|i| ((i as u64 ^ seed) % 97) as f32 / 48.5 - 1.0).collect();
        let x = Tensor::from_vec(&spec.image_shape(3), data).unwrap();
        prop_assert_eq!(eval::novelty_score(&gen, &x).unwrap(), eval::novelty_score(&gen, &x).unwrap());
        let (p, q) = (disc.forward(&x).unwrap().prob, disc.forward(&x).unwrap().prob);
        prop_assert_eq!(p.data(), q.data());
    });
}
