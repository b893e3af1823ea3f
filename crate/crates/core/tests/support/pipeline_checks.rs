//! Structural checks of `boost` on random corpora with untrained models.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tbooster::connector::{Connector, ConnectorConfig};
use tbooster::mot::{group_by_id, FeatureTable, MotRow};
use tbooster::pipeline::{boost, concat, split_at, PipelineConfig};
use tbooster::splitter::{Splitter, SplitterConfig};
use tbooster::tracklet::{BBox, Tracklet};

pub const DIM: usize = 5;

#[derive(Debug, Default, Clone, Copy)]
pub struct Tally {
    pub corpora: usize,
    pub violations: usize,
    /// Input tracks cut at least once.
    pub split_tracks: usize,
    /// Output ids covering more than one segment.
    pub merged_ids: usize,
}

/// Tracks with random spans and holes; rows within a frame are indexed in id order.
pub fn random_corpus(rng: &mut ChaCha8Rng) -> (Vec<MotRow>, FeatureTable) {
    let frames = rng.random_range(4..60);
    let ids = rng.random_range(1..7);
    let mut rows = Vec::new();
    for id in 1..=ids {
        let s = rng.random_range(1..=frames);
        let e = rng.random_range(s..=frames);
        for f in s..=e {
            if rng.random_bool(0.85) {
                let b = BBox::new(rng.random_range(0.0..500.0), rng.random_range(0.0..300.0), 20.0, 40.0);
                rows.push(MotRow::new(f, id, b, 1.0));
            }
        }
    }
    rows.sort_by_key(|r| (r.frame, r.id));
    let mut table = FeatureTable::new();
    let mut k = 0;
    for i in 0..rows.len() {
        k = if i > 0 && rows[i - 1].frame == rows[i].frame { k + 1 } else { 0 };
        rows[i].index = k;
        // drift inside each track so untrained models see structure
        let base = rows[i].id as f32 * 0.1 + rows[i].frame as f32 * 0.01;
        let feats = (0..DIM).map(|_| (base + rng.random_range(0.0..0.3)).min(1.4)).collect();
        table.insert(rows[i].frame, k, feats);
    }
    (rows, table)
}

fn key(r: &MotRow) -> (i64, usize) {
    (r.frame, r.index)
}

/// Violations found in one boost run.
pub fn check(
    input: &[MotRow],
    table: &FeatureTable,
    output: &[MotRow],
    segments: &[Vec<usize>],
    clusters: &[usize],
    delta_t: i64,
) -> usize {
    let mut bad = 0;
    // no (frame, id) twice
    let pairs: BTreeSet<(i64, i64)> = output.iter().map(|r| (r.frame, r.id)).collect();
    bad += (pairs.len() != output.len()) as usize;
    // same detections with the same boxes
    let before: BTreeMap<(i64, usize), String> = input.iter().map(|r| (key(r), r.raw.clone())).collect();
    let after: BTreeMap<(i64, usize), String> = output.iter().map(|r| (key(r), r.raw.clone())).collect();
    bad += (before != after || output.len() != input.len()) as usize;
    // segments partition each input track in order and rejoin to it
    let mut seen = vec![0usize; input.len()];
    let mut by_source: BTreeMap<i64, Vec<&Vec<usize>>> = BTreeMap::new();
    for s in segments {
        s.iter().for_each(|&i| seen[i] += 1);
        by_source.entry(input[s[0]].id).or_default().push(s);
        bad += s.iter().any(|&i| input[i].id != input[s[0]].id) as usize;
    }
    bad += seen.iter().any(|&c| c != 1) as usize;
    let tracklet = |idx: &[usize]| {
        Tracklet::new(
            idx.iter().map(|&i| table.lookup(&input[i]).unwrap().clone()).collect(),
            idx.iter().map(|&i| input[i].frame).collect(),
            idx.iter().map(|&i| input[i].bbox).collect(),
            input[idx[0]].id,
        )
        .unwrap()
    };
    for (id, idx) in group_by_id(input) {
        let segs = by_source.get(&id).cloned().unwrap_or_default();
        let joined: Vec<usize> = segs.iter().flat_map(|s| s.iter().copied()).collect();
        bad += (joined != idx) as usize;
        let whole = tracklet(&idx);
        let mut cuts = Vec::new();
        let mut acc = 0;
        for s in &segs[..segs.len().saturating_sub(1)] {
            acc += s.len();
            cuts.push(acc - 1);
        }
        let parts = split_at(&whole, &cuts).unwrap();
        bad += (parts.iter().zip(&segs).any(|(p, s)| p.len() != s.len())) as usize;
        bad += (concat(&parts).unwrap() != whole) as usize;
    }
    // segments sharing a cluster never share a frame and lie within delta_t of each other
    let mut frames_of: BTreeMap<usize, BTreeSet<i64>> = BTreeMap::new();
    for (s, &c) in segments.iter().zip(clusters) {
        let f = frames_of.entry(c).or_default();
        for &i in s {
            bad += (!f.insert(input[i].frame)) as usize;
        }
    }
    for a in 0..segments.len() {
        for b in a + 1..segments.len() {
            if clusters[a] == clusters[b] {
                let gap = segments[a]
                    .iter()
                    .flat_map(|&i| segments[b].iter().map(move |&j| (i, j)))
                    .map(|(i, j)| (input[i].frame - input[j].frame).abs())
                    .min()
                    .unwrap();
                bad += (gap > delta_t) as usize;
            }
        }
    }
    bad
}

pub fn run_corpora(n: usize, seed: u64) -> Tally {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tally = Tally::default();
    for c in 0..n {
        let (rows, table) = random_corpus(&mut rng);
        let window = rng.random_range(3..12);
        let splitter = Splitter::<f32>::new(
            SplitterConfig {
                num_blocks: 2,
                channels: 4,
                window,
                feature_dim: DIM,
                ..SplitterConfig::default()
            },
            seed ^ c as u64,
        )
        .unwrap();
        let connector = Connector::<f32>::new(
            ConnectorConfig {
                layers: 1,
                heads: 2,
                model_dim: 4,
                feature_dim: DIM,
                ..ConnectorConfig::default()
            },
            seed ^ c as u64,
        )
        .unwrap();
        let cfg = PipelineConfig {
            delta_s: rng.random_range(0.3..0.7),
            delta_c: rng.random_range(0.2..2.0),
            delta_t: rng.random_range(1..30),
            window,
            overlap: 0.5,
        };
        let use_s = rng.random_bool(0.8);
        let use_c = rng.random_bool(0.8);
        let (out, trace) = boost(
            &rows,
            &table,
            use_s.then_some(&splitter),
            use_c.then_some(&connector),
            &cfg,
        )
        .unwrap();
        tally.corpora += 1;
        tally.violations += check(&rows, &table, &out, &trace.segments, &trace.clusters, cfg.delta_t);
        let tracks_in = group_by_id(&rows).len();
        tally.split_tracks += (trace.segments.len() > tracks_in) as usize;
        let mut per_cluster: BTreeMap<usize, usize> = BTreeMap::new();
        trace.clusters.iter().for_each(|&c| *per_cluster.entry(c).or_default() += 1);
        tally.merged_ids += per_cluster.values().filter(|&&k| k > 1).count();
    }
    tally
}
