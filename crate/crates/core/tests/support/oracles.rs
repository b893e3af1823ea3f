//! Brute-force references for IoU, IDF1, peak picking, greedy grouping and
//! assignment. Each `*_mismatches` function counts random instances where the
//! library disagrees with the reference.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tbooster::hungarian;
use tbooster::metrics::idf1;
use tbooster::mot::MotRow;
use tbooster::pipeline::{build_graph, greedy_group, pick_peaks};
use tbooster::tracklet::{iou, BBox, SwitchMask};

/// IoU of integer boxes by counting covered unit cells.
fn cell_iou(a: (i32, i32, i32, i32), b: (i32, i32, i32, i32)) -> f64 {
    let inside = |r: (i32, i32, i32, i32), x: i32, y: i32| x >= r.0 && x < r.0 + r.2 && y >= r.1 && y < r.1 + r.3;
    let (mut inter, mut union) = (0, 0);
    for x in 0..40 {
        for y in 0..40 {
            let (p, q) = (inside(a, x, y), inside(b, x, y));
            inter += (p && q) as i32;
            union += (p || q) as i32;
        }
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

pub fn iou_mismatches(n: usize, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bad = 0;
    for _ in 0..n {
        let mut r = || (rng.random_range(0..20), rng.random_range(0..20), rng.random_range(0..12), rng.random_range(0..12));
        let (a, b) = (r(), r());
        let bb = |r: (i32, i32, i32, i32)| BBox::new(r.0 as f64, r.1 as f64, r.2 as f64, r.3 as f64);
        let got = iou(&bb(a), &bb(b));
        if (got - cell_iou(a, b)).abs() > 1e-12 || (got - iou(&bb(b), &bb(a))).abs() > 1e-12 {
            bad += 1;
        }
    }
    bad
}

/// A small track set: ids `1..=k`, each present on a random subset of frames,
/// boxes drawn from a few overlapping positions.
fn random_tracks(rng: &mut ChaCha8Rng, k: i64, frames: i64) -> Vec<MotRow> {
    let mut rows = Vec::new();
    for id in 1..=k {
        for f in 1..=frames {
            if rng.random_bool(0.7) {
                let x = rng.random_range(0..4) as f64 * 4.0 + rng.random_range(-1.0..1.0);
                rows.push(MotRow::new(f, id, BBox::new(x, 0.0, 10.0, 10.0), 1.0));
            }
        }
    }
    rows
}

fn ids(rows: &[MotRow]) -> Vec<i64> {
    rows.iter().map(|r| r.id).collect::<BTreeSet<_>>().into_iter().collect()
}

/// Frames where `g` and `p` both have a box with IoU ≥ 0.5.
fn co_tracked(gt: &[MotRow], pred: &[MotRow], g: i64, p: i64) -> usize {
    gt.iter()
        .filter(|a| a.id == g)
        .filter(|a| {
            pred.iter()
                .any(|b| b.id == p && b.frame == a.frame && iou(&a.bbox, &b.bbox) >= 0.5)
        })
        .count()
}

/// Best total over all injective partial maps from `gt` ids to `pred` ids.
fn best_map(w: &[Vec<usize>], g: usize, used: &mut Vec<bool>) -> usize {
    if g == w.len() {
        return 0;
    }
    let mut best = best_map(w, g + 1, used);
    for p in 0..used.len() {
        if !used[p] {
            used[p] = true;
            best = best.max(w[g][p] + best_map(w, g + 1, used));
            used[p] = false;
        }
    }
    best
}

pub fn brute_idf1(gt: &[MotRow], pred: &[MotRow]) -> f64 {
    let (gi, pi) = (ids(gt), ids(pred));
    let w: Vec<Vec<usize>> = gi
        .iter()
        .map(|&g| pi.iter().map(|&p| co_tracked(gt, pred, g, p)).collect())
        .collect();
    let tp = best_map(&w, 0, &mut vec![false; pi.len()]);
    let denom = gt.len() + pred.len();
    if denom == 0 {
        0.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

pub fn idf1_mismatches(n: usize, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bad = 0;
    for _ in 0..n {
        let frames = rng.random_range(1..=6);
        let (kg, kp) = (rng.random_range(1..=4), rng.random_range(1..=4));
        let gt = random_tracks(&mut rng, kg, frames);
        let pred = random_tracks(&mut rng, kp, frames);
        if (idf1(&gt, &pred) - brute_idf1(&gt, &pred)).abs() > 1e-12 {
            bad += 1;
        }
    }
    bad
}

/// Peaks from runs of equal values: a run is a peak when its left neighbour
/// is lower (or absent) and it is not followed by a larger value; the peak
/// sits at the run's first index.
pub fn brute_peaks(m: &[f32], delta_s: f64) -> Vec<usize> {
    let mut out = Vec::new();
    let mut a = 0;
    while a < m.len() {
        let mut b = a;
        while b + 1 < m.len() && m[b + 1] == m[a] {
            b += 1;
        }
        let left_ok = a == 0 || m[a - 1] < m[a];
        let right_ok = b > a || b + 1 == m.len() || m[b + 1] < m[a];
        if left_ok && right_ok && m[a] as f64 > delta_s {
            out.push(a);
        }
        a = b + 1;
    }
    out
}

pub fn peak_mismatches(n: usize, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let levels = [0.0f32, 0.2, 0.4, 0.5, 0.6, 0.8, 1.0];
    let mut bad = 0;
    for _ in 0..n {
        let len = rng.random_range(1..=12);
        let m: Vec<f32> = (0..len).map(|_| levels[rng.random_range(0..levels.len())]).collect();
        let ds = [0.3, 0.5, 0.7][rng.random_range(0..3)];
        if pick_peaks(&SwitchMask::predicted(m.clone()).unwrap(), ds) != brute_peaks(&m, ds) {
            bad += 1;
        }
    }
    bad
}

/// Replays the grouping rule on explicit vertex sets: candidate pairs are
/// temporally disjoint, within `delta_t` of each other and closer than
/// `delta_c`; they are visited by increasing distance and merge two groups
/// when every pair across the groups is itself such a temporally valid pair.
pub fn brute_groups(frames: &[Vec<i64>], d: &[Vec<f64>], delta_c: f64, delta_t: i64) -> Vec<BTreeSet<usize>> {
    let n = frames.len();
    let shares = |a: &[i64], b: &[i64]| a.iter().any(|f| b.contains(f));
    let gap = |a: &[i64], b: &[i64]| a.iter().flat_map(|x| b.iter().map(move |y| (x - y).abs())).min().unwrap();
    let valid = |a: usize, b: usize| !shares(&frames[a], &frames[b]) && gap(&frames[a], &frames[b]) <= delta_t;
    let mut pairs = Vec::new();
    for u in 0..n {
        for w in u + 1..n {
            if valid(u, w) && d[u][w] < delta_c {
                pairs.push((d[u][w], u, w));
            }
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut groups: Vec<BTreeSet<usize>> = (0..n).map(|v| BTreeSet::from([v])).collect();
    for (_, u, w) in pairs {
        let gu = groups.iter().position(|g| g.contains(&u)).unwrap();
        let gw = groups.iter().position(|g| g.contains(&w)).unwrap();
        if gu == gw {
            continue;
        }
        let clash = groups[gu].iter().any(|&a| groups[gw].iter().any(|&b| !valid(a, b)));
        if !clash {
            let moved = groups[gw].clone();
            groups[gu].extend(moved);
            groups.remove(gw);
        }
    }
    groups.sort();
    groups
}

/// Three tracklets with random spans and distances; spans often overlap so
/// that the cheapest merges conflict.
pub fn grouping_mismatches(n: usize, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bad = 0;
    for _ in 0..n {
        let frames: Vec<Vec<i64>> = (0..3)
            .map(|_| {
                let s = rng.random_range(0..12);
                let len = rng.random_range(1..6);
                (s..s + len).collect()
            })
            .collect();
        let mut d = vec![vec![0.0; 3]; 3];
        for u in 0..3 {
            for w in u + 1..3 {
                d[u][w] = rng.random_range(0.0..1.2);
                d[w][u] = d[u][w];
            }
        }
        let delta_c = rng.random_range(0.3..1.1);
        let delta_t = rng.random_range(1..8);
        let labels = greedy_group(&build_graph(frames.clone(), delta_t), |u, w| d[u][w], delta_c);
        let mut got: Vec<BTreeSet<usize>> = Vec::new();
        for l in 0..3 {
            let g: BTreeSet<usize> = (0..3).filter(|&v| labels[v] == l).collect();
            if !g.is_empty() {
                got.push(g);
            }
        }
        got.sort();
        if got != brute_groups(&frames, &d, delta_c, delta_t) {
            bad += 1;
        }
    }
    bad
}

fn best_assignment(cost: &[Vec<f64>], r: usize, used: &mut Vec<bool>, need: usize) -> f64 {
    if need == 0 {
        return 0.0;
    }
    if r == cost.len() {
        return f64::INFINITY;
    }
    // either row r is skipped (only possible when rows outnumber columns) or matched
    let mut best = if cost.len() - r > need {
        best_assignment(cost, r + 1, used, need)
    } else {
        f64::INFINITY
    };
    for c in 0..used.len() {
        if !used[c] {
            used[c] = true;
            best = best.min(cost[r][c] + best_assignment(cost, r + 1, used, need - 1));
            used[c] = false;
        }
    }
    best
}

pub fn hungarian_mismatches(n: usize, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bad = 0;
    for _ in 0..n {
        let (r, c) = (rng.random_range(1..=5), rng.random_range(1..=5));
        let cost: Vec<Vec<f64>> = (0..r).map(|_| (0..c).map(|_| rng.random_range(0..20) as f64).collect()).collect();
        let a = hungarian::solve(&cost);
        let cols: Vec<usize> = a.iter().flatten().copied().collect();
        let distinct = cols.iter().collect::<BTreeSet<_>>().len() == cols.len();
        let want = best_assignment(&cost, 0, &mut vec![false; c], r.min(c));
        if !distinct || cols.len() != r.min(c) || (hungarian::total_cost(&cost, &a) - want).abs() > 1e-9 {
            bad += 1;
        }
    }
    bad
}
