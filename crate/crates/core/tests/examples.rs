//! Every example under `examples/` is compiled into this test and run.

mod losses {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/losses.rs"));
}

mod gradcheck {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/gradcheck.rs"));
}

mod curriculum {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/curriculum.rs"));
}

mod fmap_io {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/fmap_io.rs"));
}

mod train_separable {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/train_separable.rs"));
}

mod ablation {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/ablation.rs"));
}

mod simmap {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/simmap.rs"));
}

#[test]
fn losses_example_runs() {
    losses::run_example().unwrap();
}

#[test]
fn gradcheck_example_passes_and_catches_corruption() {
    assert!(gradcheck::run_example().unwrap());
}

#[test]
fn curriculum_example_is_monotone() {
    let losses = curriculum::run_example().unwrap();
    assert!(losses.windows(2).all(|p| p[1] >= p[0] - 1e-12));
}

#[test]
fn fmap_example_round_trips() {
    fmap_io::run_example().unwrap();
}

// The separable case at its calibrated budget reaches perfect retrieval.
#[test]
fn separable_training_reaches_perfect_retrieval() {
    assert_eq!(train_separable::run_example().unwrap().top1_retrieval, 1.0);
    for seed in 1..3 {
        let mut cfg = train_separable::config();
        cfg.seed = seed;
        let m = patchsem::harness::train(&cfg).unwrap().metrics.last;
        assert_eq!(m.top1_retrieval, 1.0, "seed {seed}");
    }
}

#[test]
fn ablation_example_has_seven_rows() {
    let t = ablation::run_example(2).unwrap();
    assert_eq!(t.names.len(), 7);
    assert_eq!(t.to_csv().lines().count(), 8);
}

#[test]
fn simmap_example_query_cell_is_one() {
    let (grids, _) = simmap::run_example((3, 12)).unwrap();
    assert!((grids.input[3 * grids.width + 12] - 1.0).abs() < 1e-12);
}
