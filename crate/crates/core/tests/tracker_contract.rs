use metatrack::detector::{init_params, Detector, DetectorConfig, HeadStyle, ParamSet};
use metatrack::synth::{generate_sequence, Sequence, SynthConfig};
use metatrack::tracker::{
    end_of_frame, init, read_results, run_tracker, track_frame, write_results, TrackerConfig,
};

fn detector() -> (Detector, ParamSet<f64>) {
    let cfg = DetectorConfig {
        head_style: HeadStyle::AnchorFree,
        input_size: 32,
        stride: 4,
        anchor_size: 8.0,
        trunk_channels: vec![4, 4],
        shared_trunk: false,
        frozen_prefix_layers: 1,
    };
    let params = init_params(&cfg, 5, 0.01).unwrap();
    (Detector::new(cfg).unwrap(), params)
}

fn sequence(frames: usize) -> Sequence<f64> {
    let cfg = SynthConfig {
        canvas_size: 80,
        object_min_size: 10.0,
        object_max_size: 14.0,
        sequence_length: frames,
        seed: 8,
        ..Default::default()
    };
    generate_sequence(&cfg, 0).unwrap()
}

#[test]
fn zero_rates_leave_the_initial_detector_unchanged() {
    let (det, params) = detector();
    let base = params.fill_lrs(0.0);
    let seq = sequence(2);
    let state = init(
        &det,
        &seq.frames[0],
        &seq.gt[0],
        &base,
        &TrackerConfig::default(),
    )
    .unwrap();
    assert_eq!(state.params, base);
    assert_eq!(state.init_losses.len(), 6);
    assert!(state.init_losses.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn fallback_frames_keep_box_buffer_and_weights() {
    let (det, params) = detector();
    let seq = sequence(8);
    let cfg = TrackerConfig {
        score_threshold: 2.0,
        update_interval: 1,
        psr_threshold: -1.0,
        add_to_buffer_score: -1.0,
        ..Default::default()
    };
    let mut state = init(&det, &seq.frames[0], &seq.gt[0], &params, &cfg).unwrap();
    let adapted = state.params.clone();
    for frame in &seq.frames[1..] {
        let r = track_frame(&det, &mut state, frame, &cfg).unwrap();
        end_of_frame(&det, &mut state, &r, &cfg).unwrap();
        assert!(r.fallback);
        assert_eq!(r.bbox, seq.gt[0]);
    }
    assert_eq!(state.prev_box, seq.gt[0]);
    assert_eq!(state.params, adapted);
    assert_eq!(state.buffer.len(), 1);
    assert_eq!(
        (state.fallback_count, state.update_count, state.frame_index),
        (7, 0, 7)
    );
}

#[test]
fn buffer_is_capped_and_keeps_the_initial_entry() {
    let (det, params) = detector();
    let seq = sequence(12);
    let cfg = TrackerConfig {
        score_threshold: -1.0,
        add_to_buffer_score: -1.0,
        buffer_capacity: 4,
        online_steps: 0,
        ..Default::default()
    };
    let mut state = init(&det, &seq.frames[0], &seq.gt[0], &params, &cfg).unwrap();
    let pinned = state.buffer[0].samples.clone();
    for (i, frame) in seq.frames[1..].iter().enumerate() {
        let r = track_frame(&det, &mut state, frame, &cfg).unwrap();
        end_of_frame(&det, &mut state, &r, &cfg).unwrap();
        assert_eq!(state.buffer.len(), (i + 2).min(4));
    }
    assert_eq!(state.buffer[0].samples, pinned);
    assert_eq!(state.buffer_samples(), pinned.len() + 3);
}

#[test]
fn update_counts_follow_interval_and_psr_trigger() {
    let (det, params) = detector();
    let seq = sequence(61);
    for (psr_threshold, updates, triggered) in [(2.0, 6, 0), (-1.0, 60, 54)] {
        let cfg = TrackerConfig {
            score_threshold: -1.0,
            psr_threshold,
            update_interval: 10,
            adapt_steps: 1,
            ..Default::default()
        };
        let r = run_tracker(&det, &seq, &params, &cfg).unwrap();
        assert_eq!(
            (r.update_count, r.psr_trigger_count, r.fallback_count),
            (updates, triggered, 0),
            "psr threshold {psr_threshold}"
        );
    }
    let cfg = TrackerConfig {
        online_steps: 0,
        score_threshold: -1.0,
        psr_threshold: -1.0,
        ..Default::default()
    };
    assert_eq!(
        run_tracker(&det, &seq, &params, &cfg).unwrap().update_count,
        0
    );
}

#[test]
fn tracking_is_deterministic_and_results_round_trip() {
    let (det, params) = detector();
    let seq = sequence(15);
    let cfg = TrackerConfig {
        update_interval: 3,
        ..Default::default()
    };
    let a = run_tracker(&det, &seq, &params, &cfg).unwrap();
    assert_eq!(a, run_tracker(&det, &seq, &params, &cfg).unwrap());
    assert_eq!(a.boxes.len(), 15);
    assert_eq!(a.boxes[0], seq.gt[0]);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("seq.txt");
    write_results(&path, &a.boxes, &a.scores).unwrap();
    let (boxes, scores) = read_results(&path).unwrap();
    assert_eq!((boxes, scores), (a.boxes.clone(), a.scores.clone()));
    assert!(write_results(&path, &a.boxes, &a.scores[1..]).is_err());
    std::fs::write(&path, "0 1 2 3 4 0.5\n2 1 2 3 4 0.5\n").unwrap();
    assert!(read_results(&path).is_err());
}
