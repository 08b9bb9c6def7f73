//! Brute-force text metrics: n-grams as owned vectors counted by linear
//! scans, LCS by subsequence enumeration, METEOR chunks by exhaustive
//! segmentation, edit distance by memoized recursion.

use std::collections::HashMap;

pub fn tokens(text: &str) -> Vec<String> {
    // Independent restatement of the tokenizer rule.
    let mut out = Vec::new();
    let mut word = String::new();
    for ch in text.to_lowercase().chars() {
        if ch.is_alphanumeric() {
            word.push(ch);
            continue;
        }
        if !word.is_empty() {
            out.push(word.clone());
            word.clear();
        }
        if !ch.is_whitespace() {
            out.push(ch.to_string());
        }
    }
    if !word.is_empty() {
        out.push(word);
    }
    out
}

fn grams(t: &[String], n: usize) -> Vec<Vec<String>> {
    let mut v = Vec::new();
    let mut i = 0;
    while i + n <= t.len() {
        v.push(t[i..i + n].to_vec());
        i += 1;
    }
    v
}

fn count(list: &[Vec<String>], g: &[String]) -> usize {
    list.iter().filter(|x| x.as_slice() == g).count()
}

fn clipped_overlap(cand: &[Vec<String>], refs: &[Vec<Vec<String>>]) -> usize {
    let mut seen: Vec<&Vec<String>> = Vec::new();
    let mut total = 0;
    for g in cand {
        if seen.contains(&g) {
            continue;
        }
        seen.push(g);
        let max_ref = refs.iter().map(|r| count(r, g)).max().unwrap_or(0);
        total += count(cand, g).min(max_ref);
    }
    total
}

pub fn bleu(cand: &[String], refs: &[Vec<String>], n_max: usize) -> f64 {
    let c = cand.len();
    if c == 0 {
        return 0.0;
    }
    let mut log_p = Vec::new();
    for n in 1..=n_max {
        let cg = grams(cand, n);
        let rg: Vec<Vec<Vec<String>>> = refs.iter().map(|r| grams(r, n)).collect();
        let m = clipped_overlap(&cg, &rg);
        if m == 0 {
            return 0.0;
        }
        log_p.push((m as f64 / cg.len() as f64).ln());
    }
    let mut lens: Vec<usize> = refs.iter().map(|r| r.len()).collect();
    lens.sort();
    let mut r = lens[0];
    for &l in &lens {
        let d = (l as i64 - c as i64).abs();
        let best = (r as i64 - c as i64).abs();
        if d < best {
            r = l;
        }
    }
    let bp = if c > r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    let mean: f64 = log_p.iter().sum::<f64>() / n_max as f64;
    bp * mean.exp()
}

pub fn rouge_n(cand: &[String], reference: &[String], n: usize) -> f64 {
    let cg = grams(cand, n);
    let rg = grams(reference, n);
    if cg.is_empty() || rg.is_empty() {
        return 0.0;
    }
    let m = clipped_overlap(&cg, std::slice::from_ref(&rg)) as f64;
    if m == 0.0 {
        return 0.0;
    }
    let (p, r) = (m / cg.len() as f64, m / rg.len() as f64);
    2.0 * p * r / (p + r)
}

fn is_subsequence(sub: &[&String], of: &[String]) -> bool {
    let mut k = 0;
    for x in of {
        if k < sub.len() && sub[k] == x {
            k += 1;
        }
    }
    k == sub.len()
}

/// Longest common subsequence by trying every subset of `a` (|a| <= 16).
pub fn lcs(a: &[String], b: &[String]) -> usize {
    assert!(a.len() <= 16, "oracle is exponential");
    let mut best = 0;
    for mask in 0u32..(1 << a.len()) {
        let sub: Vec<&String> = (0..a.len()).filter(|i| mask >> i & 1 == 1).map(|i| &a[i]).collect();
        if sub.len() > best && is_subsequence(&sub, b) {
            best = sub.len();
        }
    }
    best
}

pub fn rouge_l(cand: &[String], reference: &[String]) -> f64 {
    if cand.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let l = lcs(cand, reference) as f64;
    if l == 0.0 {
        return 0.0;
    }
    let (p, r) = (l / cand.len() as f64, l / reference.len() as f64);
    2.0 * p * r / (p + r)
}

/// Greedy leftmost alignment, as (candidate index, reference index) pairs.
fn align(cand: &[String], reference: &[String]) -> Vec<(usize, usize)> {
    let mut taken: Vec<usize> = Vec::new();
    let mut pairs = Vec::new();
    for (i, t) in cand.iter().enumerate() {
        for (j, u) in reference.iter().enumerate() {
            if t == u && !taken.contains(&j) {
                taken.push(j);
                pairs.push((i, j));
                break;
            }
        }
    }
    pairs
}

/// Fewest segments that split the aligned pairs (in candidate order) into
/// runs contiguous in both sequences, by exhaustive search over cut sets.
fn min_chunks(pairs: &[(usize, usize)]) -> usize {
    let k = pairs.len();
    if k == 0 {
        return 0;
    }
    assert!(k <= 16);
    let mut best = usize::MAX;
    for cuts in 0u32..(1 << (k - 1)) {
        let ok = (1..k).all(|i| {
            cuts >> (i - 1) & 1 == 1
                || (pairs[i].0 == pairs[i - 1].0 + 1 && pairs[i].1 == pairs[i - 1].1 + 1)
        });
        if ok {
            best = best.min(cuts.count_ones() as usize + 1);
        }
    }
    best
}

pub fn meteor(cand: &[String], reference: &[String]) -> f64 {
    let pairs = align(cand, reference);
    let m = pairs.len() as f64;
    if m == 0.0 {
        return 0.0;
    }
    let p = m / cand.len() as f64;
    let r = m / reference.len() as f64;
    let fmean = 10.0 * p * r / (r + 9.0 * p);
    let pen = 0.5 * (min_chunks(&pairs) as f64 / m).powi(3);
    fmean * (1.0 - pen)
}

pub fn levenshtein(a: &str, b: &str) -> usize {
    fn go(a: &[char], b: &[char], memo: &mut HashMap<(usize, usize), usize>) -> usize {
        if a.is_empty() {
            return b.len();
        }
        if b.is_empty() {
            return a.len();
        }
        if let Some(&v) = memo.get(&(a.len(), b.len())) {
            return v;
        }
        let v = if a[0] == b[0] {
            go(&a[1..], &b[1..], memo)
        } else {
            1 + go(&a[1..], b, memo).min(go(a, &b[1..], memo)).min(go(&a[1..], &b[1..], memo))
        };
        memo.insert((a.len(), b.len()), v);
        v
    }
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    go(&a, &b, &mut HashMap::new())
}
