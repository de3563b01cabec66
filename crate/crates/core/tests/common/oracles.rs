//! Brute-force reference implementations used by both the metric tests
//! and the acceptance suite. Nothing here calls the production metrics.

#![allow(dead_code)]

pub fn oracle_bleu(candidate: &[String], refs: &[Vec<String>], max_n: usize) -> Vec<f64> {
    let grams = |toks: &[String], n: usize| -> Vec<Vec<String>> {
        if toks.len() < n {
            return vec![];
        }
        (0..=toks.len() - n).map(|i| toks[i..i + n].to_vec()).collect()
    };
    let count_in = |gram: &Vec<String>, list: &[Vec<String>]| -> usize {
        list.iter().filter(|g| *g == gram).count()
    };
    let mut precisions = Vec::new();
    for n in 1..=max_n {
        let cand = grams(candidate, n);
        if cand.is_empty() {
            precisions.push(0.0);
            continue;
        }
        let mut uniques: Vec<Vec<String>> = Vec::new();
        for g in &cand {
            if !uniques.contains(g) {
                uniques.push(g.clone());
            }
        }
        let mut clipped = 0usize;
        for g in &uniques {
            let c = count_in(g, &cand);
            let max_ref = refs
                .iter()
                .map(|r| count_in(g, &grams(r, n)))
                .max()
                .unwrap_or(0);
            clipped += c.min(max_ref);
        }
        precisions.push(clipped as f64 / cand.len() as f64);
    }
    // closest reference length, ties to the shorter
    let c = candidate.len();
    let mut r = refs[0].len();
    for refr in refs {
        let (d, bd) = (refr.len().abs_diff(c), r.abs_diff(c));
        if d < bd || (d == bd && refr.len() < r) {
            r = refr.len();
        }
    }
    let bp = if c == 0 {
        0.0
    } else if c >= r {
        1.0
    } else {
        (1.0 - r as f64 / c as f64).exp()
    };
    (1..=max_n)
        .map(|n| {
            let ps = &precisions[..n];
            if ps.iter().any(|&p| p == 0.0) {
                0.0
            } else {
                bp * (ps.iter().map(|p| p.ln()).sum::<f64>() / n as f64).exp()
            }
        })
        .collect()
}

pub fn oracle_lcs(a: &[String], b: &[String]) -> usize {
    // Enumerate all subsequences of a (len <= 10) and test against b.
    let mut best = 0usize;
    for mask in 0u32..(1 << a.len()) {
        let sub: Vec<&String> = (0..a.len()).filter(|i| mask >> i & 1 == 1).map(|i| &a[i]).collect();
        if sub.len() <= best {
            continue;
        }
        let mut it = b.iter();
        if sub.iter().all(|s| it.any(|t| t == *s)) {
            best = sub.len();
        }
    }
    best
}

pub fn oracle_align(cand: &[String], refr: &[String]) -> (usize, usize) {
    fn go(
        cand: &[String],
        refr: &[String],
        i: usize,
        used: &mut Vec<bool>,
        last: Option<usize>,
        matches: usize,
        chunks: usize,
        best: &mut (usize, usize),
    ) {
        if i == cand.len() {
            if matches > best.0 || (matches == best.0 && chunks < best.1) {
                *best = (matches, chunks);
            }
            return;
        }
        go(cand, refr, i + 1, used, None, matches, chunks, best);
        for j in 0..refr.len() {
            if used[j] || refr[j] != cand[i] {
                continue;
            }
            used[j] = true;
            let extends = j > 0 && last == Some(j - 1);
            go(
                cand,
                refr,
                i + 1,
                used,
                Some(j),
                matches + 1,
                chunks + usize::from(!extends),
                best,
            );
            used[j] = false;
        }
    }
    let mut best = (0, usize::MAX);
    let mut used = vec![false; refr.len()];
    go(cand, refr, 0, &mut used, None, 0, 0, &mut best);
    if best.0 == 0 {
        (0, 0)
    } else {
        best
    }
}

pub fn oracle_cider(cands: &[Vec<String>], refs: &[Vec<Vec<String>>], max_n: usize) -> Vec<f64> {
    let images = cands.len() as f64;
    let grams = |toks: &[String], n: usize| -> Vec<Vec<String>> {
        if toks.len() < n {
            return vec![];
        }
        (0..=toks.len() - n).map(|i| toks[i..i + n].to_vec()).collect()
    };
    let mut per_sample = vec![0.0; cands.len()];
    for n in 1..=max_n {
        // universe over candidate and reference grams
        let mut universe: Vec<Vec<String>> = Vec::new();
        let mut add = |g: &Vec<String>, universe: &mut Vec<Vec<String>>| {
            if !universe.contains(g) {
                universe.push(g.clone());
            }
        };
        for c in cands {
            for g in grams(c, n) {
                add(&g, &mut universe);
            }
        }
        for rs in refs {
            for r in rs {
                for g in grams(r, n) {
                    add(&g, &mut universe);
                }
            }
        }
        let df: Vec<f64> = universe
            .iter()
            .map(|g| {
                let d = refs
                    .iter()
                    .filter(|rs| rs.iter().any(|r| grams(r, n).contains(g)))
                    .count();
                d.max(1) as f64
            })
            .collect();
        let vector = |toks: &[String]| -> Vec<f64> {
            universe
                .iter()
                .zip(&df)
                .map(|(g, d)| {
                    let count = grams(toks, n).iter().filter(|x| *x == g).count() as f64;
                    count * (images / d).ln()
                })
                .collect()
        };
        for (i, (c, rs)) in cands.iter().zip(refs).enumerate() {
            let cv = vector(c);
            let cn = cv.iter().map(|v| v * v).sum::<f64>().sqrt();
            let mut total = 0.0;
            for r in rs {
                let rv = vector(r);
                let rn = rv.iter().map(|v| v * v).sum::<f64>().sqrt();
                if cn > 0.0 && rn > 0.0 {
                    let dot: f64 = cv.iter().zip(&rv).map(|(a, b)| a * b).sum();
                    total += dot / (cn * rn);
                }
            }
            per_sample[i] += total / rs.len() as f64;
        }
    }
    per_sample
        .iter()
        .map(|v| 10.0 * v / max_n as f64)
        .collect()
}
