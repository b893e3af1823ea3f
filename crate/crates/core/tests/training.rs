//! Behaviour of briefly trained models on the synthetic corpus.

use std::sync::OnceLock;

use tbooster::connector::{train_connector, triplet_satisfaction, Connector, ConnectorConfig, ConnectorSample, ConnectorTrainConfig};
use tbooster::splitter::{train_splitter, Splitter, SplitterConfig, SplitterTrainConfig};
use tbooster::synth::{connector_samples, splitter_windows, test_sequences, training_sequences, SynthConfig};

const WINDOW: usize = 65;

struct Fixture {
    splitter: Splitter<f32>,
    connector: Connector<f32>,
    held_out: Vec<ConnectorSample>,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let cfg = SynthConfig {
            train_sequences: 16,
            test_sequences: 4,
            ..SynthConfig::default()
        };
        let train = training_sequences(1, &cfg).unwrap();
        let splitter = train_splitter(
            &splitter_windows(&train, WINDOW).unwrap(),
            &SplitterConfig {
                num_blocks: 8,
                channels: 32,
                ..SplitterConfig::default()
            },
            &SplitterTrainConfig {
                iterations: 2000,
                ..SplitterTrainConfig::default()
            },
        )
        .unwrap()
        .model;
        let connector = train_connector(
            &connector_samples(&train, cfg.min_sample_len, 0),
            &ConnectorConfig {
                layers: 2,
                model_dim: 32,
                ..ConnectorConfig::default()
            },
            &ConnectorTrainConfig {
                iterations: 2000,
                lr: 1e-3,
                ..ConnectorTrainConfig::default()
            },
        )
        .unwrap()
        .model;
        let held_out = connector_samples(&test_sequences(1, &cfg).unwrap(), cfg.min_sample_len, 1000);
        Fixture {
            splitter,
            connector,
            held_out,
        }
    })
}

#[test]
fn unseen_identities_satisfy_most_triplets() {
    let f = fixture();
    let emb: Vec<_> = f
        .held_out
        .iter()
        .map(|s| (s.identity, f.connector.embed(&s.features).unwrap()))
        .collect();
    let rate = triplet_satisfaction(&emb, 5000, 0).unwrap();
    assert!(rate >= 0.9, "satisfaction {rate}");
}

#[test]
fn constant_features_raise_no_switch() {
    let f = fixture();
    for s in f.held_out.iter().step_by(7) {
        let window = vec![s.features[0].clone(); WINDOW];
        let m = f.splitter.predict_window(&window).unwrap().m_hat.values;
        let top = m.iter().cloned().fold(0.0f32, f32::max);
        assert!(top < 0.5, "max mask {top}");
    }
}

#[test]
fn spliced_switch_is_found_where_it_was_placed() {
    let f = fixture();
    let long: Vec<&ConnectorSample> = f.held_out.iter().filter(|s| s.features.len() >= WINDOW).collect();
    let (a, b) = long
        .iter()
        .flat_map(|a| long.iter().map(move |b| (a, b)))
        .find(|(a, b)| a.identity != b.identity)
        .expect("two long held-out identities");
    for cut in [16usize, 24, 32, 40, 48] {
        let mut window = a.features[..cut].to_vec();
        window.extend_from_slice(&b.features[cut..WINDOW]);
        let m = f.splitter.predict_window(&window).unwrap().m_hat.values;
        let argmax = (0..m.len()).max_by(|&i, &j| m[i].total_cmp(&m[j])).unwrap();
        assert!(argmax.abs_diff(cut - 1) <= 1, "cut after {} found at {argmax}", cut - 1);
    }
}
