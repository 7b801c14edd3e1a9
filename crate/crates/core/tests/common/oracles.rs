//! Naive reimplementations used as test oracles. Each one works from the
//! definition on plain slices and shares no code with the library.

/// RFS as the signed distance of `(a_fg, a_bg)` to the diagonal of the unit
/// square, divided by the farthest the square allows at the same diagonal
/// position. Found by walking the perpendicular until it leaves the square.
pub fn rfs_distance_ratio(a_fg: f64, a_bg: f64) -> f64 {
    let s = std::f64::consts::SQRT_2;
    // Foot of the perpendicular on the diagonal, and the unit normal
    // pointing into the upper-left half (a_bg > a_fg).
    let t = (a_fg + a_bg) / 2.0;
    let normal = (-1.0 / s, 1.0 / s);
    let signed = (a_fg - t) * normal.0 + (a_bg - t) * normal.1;
    let sign = if signed < 0.0 { -1.0 } else { 1.0 };
    let dir = (normal.0 * sign, normal.1 * sign);
    // Largest r with (t, t) + r·dir inside [0,1]².
    let mut reach = f64::INFINITY;
    for (p, d) in [(t, dir.0), (t, dir.1)] {
        if d > 0.0 {
            reach = reach.min((1.0 - p) / d);
        } else if d < 0.0 {
            reach = reach.min(-p / d);
        }
    }
    if reach <= 0.0 {
        return 0.0;
    }
    signed / reach
}

pub fn iou_standard(a: &[bool], b: &[bool]) -> f64 {
    let inter = a.iter().zip(b).filter(|(x, y)| **x && **y).count();
    let union = a.iter().zip(b).filter(|(x, y)| **x || **y).count();
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

pub fn iou_by_sum(a: &[bool], b: &[bool]) -> f64 {
    let inter = a.iter().zip(b).filter(|(x, y)| **x && **y).count();
    let sum = a.iter().filter(|x| **x).count() + b.iter().filter(|x| **x).count();
    if sum == 0 {
        0.0
    } else {
        inter as f64 / sum as f64
    }
}

pub fn binarize(s: &[f64], tau: f64) -> Vec<bool> {
    s.iter().map(|&v| v >= tau).collect()
}

fn mean_where(s: &[f64], m: &[bool], inside: bool) -> Option<f64> {
    let mut sum = 0.0;
    let mut n = 0;
    for i in 0..s.len() {
        if m[i] == inside {
            sum += s[i];
            n += 1;
        }
    }
    (n > 0).then(|| sum / n as f64)
}

pub fn delta_difference(s: &[f64], m: &[bool]) -> f64 {
    mean_where(s, m, true).unwrap_or(0.0) - mean_where(s, m, false).unwrap_or(0.0)
}

/// `None` when a side is empty.
pub fn delta_ratio(s: &[f64], m: &[bool]) -> Option<f64> {
    let fg = mean_where(s, m, true)?;
    let bg = mean_where(s, m, false)?;
    Some(if bg == 0.0 {
        if fg == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        fg / bg
    })
}

fn distinct_desc(s: &[f64]) -> Vec<f64> {
    let mut t: Vec<f64> = Vec::new();
    for &v in s {
        if !t.contains(&v) {
            t.push(v);
        }
    }
    t.sort_by(|a, b| b.partial_cmp(a).unwrap());
    t
}

/// Full threshold sweep: at every distinct value t (high to low) predict
/// `s >= t`, and accumulate `(R_n - R_{n-1}) P_n`.
pub fn average_precision(s: &[f64], m: &[bool]) -> f64 {
    let positives = m.iter().filter(|x| **x).count() as f64;
    let mut ap = 0.0;
    let mut prev_r = 0.0;
    for t in distinct_desc(s) {
        let mut tp = 0.0;
        let mut predicted = 0.0;
        for i in 0..s.len() {
            if s[i] >= t {
                predicted += 1.0;
                if m[i] {
                    tp += 1.0;
                }
            }
        }
        let r = tp / positives;
        ap += (r - prev_r) * (tp / predicted);
        prev_r = r;
    }
    ap
}

pub fn precision(s: &[f64], m: &[bool]) -> f64 {
    let total: f64 = s.iter().sum();
    if total == 0.0 {
        return 0.0;
    }
    let inside: f64 = s.iter().zip(m).filter(|(_, k)| **k).map(|(v, _)| *v).sum();
    inside / total
}

/// Largest distinct threshold whose superlevel set carries at least
/// `fraction` of the mass, then the share of `m` that set covers.
pub fn recall(s: &[f64], m: &[bool], fraction: f64) -> f64 {
    let total: f64 = s.iter().sum();
    let mut cutoff = None;
    for t in distinct_desc(s) {
        let mass: f64 = s.iter().filter(|v| **v >= t).sum();
        if mass >= fraction * total {
            cutoff = Some(t);
            break;
        }
    }
    let t = cutoff.expect("lowest threshold holds all mass");
    let covered = (0..s.len()).filter(|&i| m[i] && s[i] >= t).count();
    covered as f64 / m.iter().filter(|x| **x).count() as f64
}
