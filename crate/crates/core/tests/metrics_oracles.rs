//! Independent brute-force implementations of every metric, compared to
//! the production path on randomized small cases.

mod common;

use common::oracles::{oracle_align, oracle_bleu, oracle_cider, oracle_lcs};

use multigrain::codec::{LabelSet, Mask, NormalizedBBox};
use multigrain::metrics::{
    bleu, cider, corpus_bleu, iou_bbox, meteor_exact, rouge_l, segmentation_scores,
    BleuSmoothing,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

const TOL: f64 = 1e-9;

fn words<R: Rng>(rng: &mut R, max_len: usize) -> Vec<String> {
    const VOCAB: [&str; 6] = ["a", "b", "c", "d", "e", "f"];
    let len = rng.gen_range(0..=max_len);
    (0..len)
        .map(|_| VOCAB[rng.gen_range(0..VOCAB.len())].to_string())
        .collect()
}

fn nonempty_words<R: Rng>(rng: &mut R, max_len: usize) -> Vec<String> {
    loop {
        let w = words(rng, max_len);
        if !w.is_empty() {
            return w;
        }
    }
}

// ---- BLEU oracle: Vec-based n-gram counting, no shared code ----

#[test]
fn bleu_matches_counting_oracle_on_randomized_cases() {
    let mut rng = ChaCha20Rng::seed_from_u64(1000);
    for case in 0..120 {
        let candidate = words(&mut rng, 10);
        let refs: Vec<Vec<String>> = (0..rng.gen_range(1..3))
            .map(|_| nonempty_words(&mut rng, 10))
            .collect();
        let got = bleu(&candidate, &refs, 4).unwrap();
        let want = oracle_bleu(&candidate, &refs, 4);
        for (g, w) in got.per_n.iter().zip(&want) {
            assert!((g - w).abs() < TOL, "case {case}: {g} vs {w}");
        }
    }
}

#[test]
fn corpus_bleu_is_permutation_invariant() {
    let mut rng = ChaCha20Rng::seed_from_u64(1001);
    let pairs: Vec<(Vec<String>, Vec<Vec<String>>)> = (0..6)
        .map(|_| (nonempty_words(&mut rng, 8), vec![nonempty_words(&mut rng, 8)]))
        .collect();
    let forward = corpus_bleu(&pairs, 4, BleuSmoothing::Off).unwrap();
    let mut reversed = pairs.clone();
    reversed.reverse();
    let backward = corpus_bleu(&reversed, 4, BleuSmoothing::Off).unwrap();
    assert_eq!(forward.per_n, backward.per_n);
}

// ---- ROUGE-L oracle: exponential subsequence enumeration ----

#[test]
fn rouge_matches_brute_force_subsequence_oracle() {
    let mut rng = ChaCha20Rng::seed_from_u64(1002);
    for case in 0..120 {
        let a = words(&mut rng, 9);
        let b = words(&mut rng, 9);
        let got = rouge_l(&a, &b);
        let want = if a.is_empty() || b.is_empty() {
            0.0
        } else {
            let lcs = oracle_lcs(&a, &b) as f64;
            if lcs == 0.0 {
                0.0
            } else {
                let p = lcs / a.len() as f64;
                let r = lcs / b.len() as f64;
                let b2 = 1.44;
                (1.0 + b2) * p * r / (r + b2 * p)
            }
        };
        assert!((got - want).abs() < TOL, "case {case}: {got} vs {want}");
    }
}

// ---- METEOR oracle: exhaustive alignment enumeration ----

#[test]
fn meteor_matches_exhaustive_alignment_oracle() {
    let mut rng = ChaCha20Rng::seed_from_u64(1003);
    for case in 0..120 {
        let c = words(&mut rng, 7);
        let r = words(&mut rng, 7);
        let got = meteor_exact(&c, &r);
        let (m, ch) = oracle_align(&c, &r);
        let want = if m == 0 {
            0.0
        } else {
            let m_f = m as f64;
            let p = m_f / c.len() as f64;
            let rec = m_f / r.len() as f64;
            let f_mean = 10.0 * p * rec / (rec + 9.0 * p);
            f_mean * (1.0 - 0.5 * (ch as f64 / m_f).powi(3))
        };
        assert!((got - want).abs() < TOL, "case {case}: {got} vs {want} (c {c:?}, r {r:?})");
    }
}

// ---- CIDEr oracle: dense vectors over an explicit gram universe ----

#[test]
fn cider_matches_dense_vector_oracle() {
    let mut rng = ChaCha20Rng::seed_from_u64(1004);
    for case in 0..60 {
        let n_samples = rng.gen_range(2..5);
        let cands: Vec<Vec<String>> =
            (0..n_samples).map(|_| nonempty_words(&mut rng, 8)).collect();
        let refs: Vec<Vec<Vec<String>>> = (0..n_samples)
            .map(|_| {
                (0..rng.gen_range(1..3))
                    .map(|_| nonempty_words(&mut rng, 8))
                    .collect()
            })
            .collect();
        let got = cider(&cands, &refs, 4).unwrap();
        let want = oracle_cider(&cands, &refs, 4);
        for (i, (g, w)) in got.per_sample.iter().zip(&want).enumerate() {
            assert!((g - w).abs() < TOL, "case {case} sample {i}: {g} vs {w}");
        }
        assert!(got.score >= -TOL && got.score <= 10.0 + TOL);
    }
}

#[test]
fn cider_is_permutation_invariant_given_fixed_corpus() {
    let mut rng = ChaCha20Rng::seed_from_u64(1005);
    let cands: Vec<Vec<String>> = (0..5).map(|_| nonempty_words(&mut rng, 6)).collect();
    let refs: Vec<Vec<Vec<String>>> =
        (0..5).map(|_| vec![nonempty_words(&mut rng, 6)]).collect();
    let a = cider(&cands, &refs, 4).unwrap();
    let perm = [4usize, 2, 0, 3, 1];
    let cands_p: Vec<_> = perm.iter().map(|&i| cands[i].clone()).collect();
    let refs_p: Vec<_> = perm.iter().map(|&i| refs[i].clone()).collect();
    let b = cider(&cands_p, &refs_p, 4).unwrap();
    assert!((a.score - b.score).abs() < TOL);
}

// ---- Box IoU oracle: exact integer area arithmetic ----

#[test]
fn bbox_iou_matches_integer_area_oracle() {
    let mut rng = ChaCha20Rng::seed_from_u64(1006);
    for _ in 0..200 {
        let rand_box = |rng: &mut ChaCha20Rng| {
            let x1 = rng.gen_range(0..=100u8);
            let x2 = rng.gen_range(x1..=100u8);
            let y1 = rng.gen_range(0..=100u8);
            let y2 = rng.gen_range(y1..=100u8);
            NormalizedBBox::new(x1, y1, x2, y2).unwrap()
        };
        let a = rand_box(&mut rng);
        let b = rand_box(&mut rng);
        let got = iou_bbox(a, b);
        let iw = (a.x2.min(b.x2) as i64 - a.x1.max(b.x1) as i64).max(0);
        let ih = (a.y2.min(b.y2) as i64 - a.y1.max(b.y1) as i64).max(0);
        let inter = iw * ih;
        let area = |x: NormalizedBBox| (x.x2 - x.x1) as i64 * (x.y2 - x.y1) as i64;
        let union = area(a) + area(b) - inter;
        let want = if union == 0 {
            if a == b {
                1.0
            } else {
                0.0
            }
        } else {
            inter as f64 / union as f64
        };
        assert!((got - want).abs() < 1e-12);
        assert!((0.0..=1.0).contains(&got));
    }
}

// ---- Segmentation oracle: quadruple pixel loops ----

#[test]
fn segmentation_matches_per_pixel_confusion_oracle() {
    let labels = LabelSet::with_background(&["a", "b", "c"]).unwrap();
    let mut rng = ChaCha20Rng::seed_from_u64(1007);
    for case in 0..100 {
        let w = rng.gen_range(2..16);
        let h = rng.gen_range(2..16);
        let pred_px: Vec<u32> = (0..w * h).map(|_| rng.gen_range(0..4)).collect();
        let gt_px: Vec<u32> = (0..w * h).map(|_| rng.gen_range(0..4)).collect();
        let pred = Mask::new(w, h, pred_px.clone()).unwrap();
        let gt = Mask::new(w, h, gt_px.clone()).unwrap();
        let got = segmentation_scores(&pred, &gt, &labels).unwrap();

        let mut iou_sum = 0.0;
        let mut present = 0;
        let mut correct = 0usize;
        for i in 0..w * h {
            if pred_px[i] == gt_px[i] {
                correct += 1;
            }
        }
        for class in 0..4u32 {
            let mut tp = 0usize;
            let mut fp = 0usize;
            let mut fn_ = 0usize;
            for i in 0..w * h {
                match (pred_px[i] == class, gt_px[i] == class) {
                    (true, true) => tp += 1,
                    (true, false) => fp += 1,
                    (false, true) => fn_ += 1,
                    _ => {}
                }
            }
            if tp + fp + fn_ == 0 {
                continue;
            }
            present += 1;
            let iou = tp as f64 / (tp + fp + fn_) as f64;
            iou_sum += iou;
            let name = labels.name(class).unwrap();
            assert!((got.per_class[name].iou - iou).abs() < TOL, "case {case}");
            let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
            let recall = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
            assert!((got.per_class[name].precision - precision).abs() < TOL);
            assert!((got.per_class[name].recall - recall).abs() < TOL);
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            assert!((got.per_class[name].f1 - f1).abs() < TOL);
        }
        assert!((got.miou - iou_sum / present as f64).abs() < TOL);
        assert!((got.overall_accuracy - correct as f64 / (w * h) as f64).abs() < TOL);
        assert!((0.0..=1.0).contains(&got.miou));
    }
}
