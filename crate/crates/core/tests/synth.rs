use tbooster::synth::{
    corpus_stats, count_crossings, detect, iou_track, training_sequences, IdentityTrack, IouTrackerConfig, NoiseConfig,
    SceneGroundTruth, SynthConfig,
};
use tbooster::tracklet::{BBox, BOX_FEATURES};

fn small() -> SynthConfig {
    SynthConfig {
        train_sequences: 4,
        ..SynthConfig::default()
    }
}

/// Two walkers on the same line meeting in the middle of the clip.
fn head_on() -> SceneGroundTruth {
    let walker = |id: i64, x0: f64, v: f64| IdentityTrack {
        id,
        start: 1,
        boxes: (0..100).map(|t| BBox::new(x0 + v * t as f64, 500.0, 80.0, 200.0)).collect(),
        appearance: vec![vec![id as f32; 32]; 100],
    };
    SceneGroundTruth {
        width: 1920.0,
        height: 1080.0,
        frames: 100,
        identities: vec![walker(1, 600.0, 4.0), walker(2, 1000.0, -4.0)],
    }
}

#[test]
fn default_corpus_has_enough_switches() {
    let s = corpus_stats(&training_sequences(0, &small()).unwrap());
    assert!(
        s.tracklets_with_switch as f64 >= 0.05 * s.tracklets as f64,
        "{s:?}"
    );
}

#[test]
fn head_on_walkers_cross_once() {
    assert_eq!(count_crossings(&head_on()), 1);
}

#[test]
fn jittered_crossing_can_swap_identities() {
    let scene = head_on();
    let noise = NoiseConfig {
        jitter: 0.05,
        ..NoiseConfig::none()
    };
    let swapped = (0..40u64)
        .filter(|&seed| {
            let dets = detect(&scene, &noise, seed, 0).unwrap();
            let tracks = iou_track(&dets, &IouTrackerConfig::default()).unwrap();
            tracks.iter().any(|t| t.gt_ids.windows(2).any(|w| w[0] != w[1]))
        })
        .count();
    assert!(swapped > 0);
}

#[test]
fn strict_threshold_fragments_tracks() {
    let cfg = small();
    let seq = &training_sequences(3, &cfg).unwrap()[0];
    let count = |threshold| {
        iou_track(&seq.detections, &IouTrackerConfig { threshold, ..cfg.tracker.clone() })
            .unwrap()
            .len()
    };
    assert!(count(0.99) > 2 * count(0.5));
}

#[test]
fn appearance_jumps_at_switches() {
    let seqs = training_sequences(5, &small()).unwrap();
    let (mut at_switch, mut within) = (Vec::new(), Vec::new());
    for s in &seqs {
        for (t, f) in s.tracklets.iter().zip(&s.features) {
            for i in 1..t.len() {
                let k = f[i].len() - BOX_FEATURES;
                let (a, b) = (&f[i - 1][..k], &f[i][..k]);
                let d = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f32>().sqrt();
                if t.gt_ids[i - 1] != t.gt_ids[i] {
                    at_switch.push(d);
                } else {
                    within.push(d);
                }
            }
        }
    }
    let mean = |v: &[f32]| v.iter().sum::<f32>() / v.len() as f32;
    assert!(!at_switch.is_empty());
    assert!(mean(&at_switch) > 2.0 * mean(&within), "{} vs {}", mean(&at_switch), mean(&within));
}

#[test]
fn same_seed_same_corpus() {
    let cfg = small();
    assert_eq!(training_sequences(9, &cfg).unwrap(), training_sequences(9, &cfg).unwrap());
    assert_ne!(training_sequences(9, &cfg).unwrap(), training_sequences(10, &cfg).unwrap());
}
