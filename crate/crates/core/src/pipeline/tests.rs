use super::*;
use crate::gcf_map::{gcf_map, GridSpec};
use crate::scene_sim::{render, GeometryPreset, SceneGeometry, SceneSpec, SourceSignal};

fn small_grid(step: f64) -> GridSpec {
    GridSpec {
        x: [-1.0, 1.0],
        y: [-0.1, 2.5],
        z: [1.3, 1.75],
        step,
    }
}

fn static_scene(at: Point3, snr: Option<f64>, seed: u64) -> crate::scene_sim::Scene {
    let mut spec = SceneSpec::stationary(
        SceneGeometry::Preset(GeometryPreset::Dicit),
        at,
        SourceSignal::WhiteNoise { std: 0.1 },
        1.5,
    );
    spec.snr_db = snr;
    spec.seed = seed;
    render(&spec, 48_000).unwrap()
}

fn static_cfg() -> PipelineConfig {
    let mut cfg = PipelineConfig::for_mode(Mode::Static);
    cfg.grid = small_grid(0.05);
    cfg
}

#[test]
fn static_source_is_found() {
    let truth = Point3::new(0.3, 1.5, 1.5);
    let s = static_scene(truth, Some(30.0), 1);
    let r = run_static(&static_cfg(), &s.clip, &s.geometry, &RunOptions::default()).unwrap();
    assert!((r.point() - truth).norm() <= 0.06, "{:?}", r.position);
    assert!(!r.low_confidence);
    assert!(r.peaks.len() >= 10);
}

#[test]
fn silence_warns_and_returns_first_point() {
    let s = static_scene(Point3::new(0.3, 1.5, 1.5), None, 1);
    let silent = AudioClip::new(vec![vec![0.0; s.clip.len()]; s.clip.channel_count()], 48_000).unwrap();
    let cfg = static_cfg();
    let r = run_static(&cfg, &silent, &s.geometry, &RunOptions::default()).unwrap();
    assert!(r.low_confidence);
    assert_eq!(r.warnings.len(), 1);
    let grid = Grid3D::new(cfg.grid).unwrap();
    assert_eq!(r.point(), grid.point(0));
}

#[test]
fn repeated_runs_agree() {
    let s = static_scene(Point3::new(-0.4, 2.0, 1.4), Some(20.0), 2);
    let a = run_static(&static_cfg(), &s.clip, &s.geometry, &RunOptions::default()).unwrap();
    let b = run_static(&static_cfg(), &s.clip, &s.geometry, &RunOptions { threads: Some(2), cache_path: None }).unwrap();
    assert_eq!(a, b);
}

#[test]
fn missing_channels_are_rejected() {
    let s = static_scene(Point3::new(0.0, 1.0, 1.5), None, 0);
    let few = AudioClip::new(s.clip.channels()[..4].to_vec(), 48_000).unwrap();
    assert!(run_static(&static_cfg(), &few, &s.geometry, &RunOptions::default()).is_err());
    let short = AudioClip::new(vec![vec![0.0; 1000]; 15], 48_000).unwrap();
    assert!(run_static(&static_cfg(), &short, &s.geometry, &RunOptions::default()).is_err());
}

fn moving_scene() -> crate::scene_sim::Scene {
    let mut spec = SceneSpec::path(
        SceneGeometry::Preset(GeometryPreset::Dicit),
        vec![(0.0, Point3::new(-0.6, 1.5, 1.5)), (4.0, Point3::new(0.6, 1.5, 1.5))],
        SourceSignal::speech_like(),
        4.0,
    );
    spec.snr_db = Some(20.0);
    spec.seed = 5;
    render(&spec, 48_000).unwrap()
}

fn tracking_cfg() -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    cfg.grid = small_grid(0.05);
    cfg.seed = 11;
    cfg
}

#[test]
fn tracking_without_truth_has_no_report() {
    let s = moving_scene();
    let r = run_tracking(&tracking_cfg(), &s.clip, &s.geometry, None, &RunOptions::default()).unwrap();
    assert!(r.report.is_none());
    assert_eq!(r.trajectory.len(), r.raw.len());
    assert_eq!(r.branches.len(), r.raw.len());
    assert!(r.turning.is_some());
}

#[test]
fn cache_round_trip_gives_identical_tracks() {
    let s = moving_scene();
    let cfg = tracking_cfg();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pass1.bin");
    let gt = s.ground_truth();
    let opts = RunOptions {
        threads: None,
        cache_path: Some(path.clone()),
    };
    let via_disk = run_tracking(&cfg, &s.clip, &s.geometry, Some(&gt), &opts).unwrap();
    let in_memory = run_tracking(&cfg, &s.clip, &s.geometry, Some(&gt), &RunOptions::default()).unwrap();
    assert_eq!(via_disk, in_memory);
    let cached = PassOne::read(&path).unwrap();
    assert_eq!(track_from_pass(&cfg, &cached, Some(&gt)).unwrap(), in_memory);
    let report = via_disk.report.unwrap();
    assert!(report.active_frame_count > 0);
    assert!(report.mae_3d < 0.3, "{report:?}");
}

#[test]
fn slice_matches_full_map() {
    let s = static_scene(Point3::new(0.2, 1.2, 1.5), Some(20.0), 3);
    let cfg = static_cfg();
    let (pass, _) = pass_one(&cfg, &s.clip, &s.geometry, 1 << 12, &RunOptions::default()).unwrap();
    let grid = Grid3D::new(cfg.grid).unwrap();
    let lookup = TdoaLookup::build(&grid, &s.geometry, cfg.speed_of_sound, 48_000.0).unwrap();
    let rec = &pass.records[3];
    let map = gcf_map(&rec.correlations, &lookup).unwrap();
    let slice = map_slice(&pass, 3, 1.51).unwrap();
    let [nx, ny, _] = grid.counts();
    assert_eq!(slice.len(), nx * ny);
    for (p, v) in &slice {
        assert!((p.z - 1.5).abs() < 1e-9);
        assert_eq!(*v, map[grid.nearest_index(p)]);
    }
    assert!(map_slice(&pass, 10_000, 1.5).is_err());
    assert!(slice_csv(&slice[..1]).starts_with("x_m,y_m,z_m,gcf\n-1.000000,-0.100000,1.500000,"));
}

#[test]
fn truth_files() {
    let dir = tempfile::tempdir().unwrap();
    let s = moving_scene();
    s.write_to(dir.path()).unwrap();
    let with_column = load_truth(&dir.path().join("truth.csv"), None, CoordFrame::ArrayLocal).unwrap();
    assert_eq!(with_column.active, s.active);
    for (a, b) in with_column.trajectory.entries().iter().zip(s.truth.entries()) {
        assert!((a.timestamp - b.timestamp).abs() < 1e-6);
        assert!((a.position - b.position).norm() < 1e-5);
    }
    let plain = dir.path().join("plain.csv");
    s.truth.write_csv(&plain).unwrap();
    assert!(load_truth(&plain, None, CoordFrame::ArrayLocal).is_err());
    let joined = load_truth(&plain, Some(&dir.path().join("activity.csv")), CoordFrame::ArrayLocal).unwrap();
    assert_eq!(joined.active, s.active);
}
