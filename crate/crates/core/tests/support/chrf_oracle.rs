//! Brute-force chrF used as an independent oracle.
//!
//! Counts n-grams by linear scans over `String` windows and uses the
//! count form of the F-score, `(1 + b^2) m / (b^2 R + H)`, instead of going
//! through precision and recall.

fn grams(chars: &[char], n: usize) -> Vec<String> {
    if chars.len() < n {
        return Vec::new();
    }
    (0..=chars.len() - n)
        .map(|i| chars[i..i + n].iter().collect())
        .collect()
}

fn occurrences(list: &[String], gram: &str) -> usize {
    list.iter().filter(|g| g.as_str() == gram).count()
}

/// `None` when the reference has no non-whitespace characters.
pub fn brute_chrf(hypothesis: &str, reference: &str, max_n: usize, beta: f64) -> Option<f64> {
    let hyp: Vec<char> = hypothesis.chars().filter(|c| !c.is_whitespace()).collect();
    let reference: Vec<char> = reference.chars().filter(|c| !c.is_whitespace()).collect();
    if reference.is_empty() {
        return None;
    }
    let b2 = beta * beta;
    let mut scores = Vec::new();
    for n in 1..=max_n {
        let h = grams(&hyp, n);
        let r = grams(&reference, n);
        if h.is_empty() || r.is_empty() {
            continue;
        }
        let mut seen: Vec<&String> = Vec::new();
        let mut matched = 0usize;
        for g in &h {
            if seen.contains(&g) {
                continue;
            }
            seen.push(g);
            matched += occurrences(&h, g).min(occurrences(&r, g));
        }
        scores.push((1.0 + b2) * matched as f64 / (b2 * r.len() as f64 + h.len() as f64));
    }
    if scores.is_empty() {
        return Some(0.0);
    }
    Some(scores.iter().sum::<f64>() / scores.len() as f64)
}
