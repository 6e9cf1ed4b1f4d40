use mpp_core::data::{read_window, write_dataset, Dataset, DatasetManifest, Split, SplitConfig};
use mpp_core::pde::{generate_corpus, CorpusEntry, InitialConditionSpec, SystemSpec, Trajectory};
use mpp_core::MppError;
use ndarray::s;

fn spec(name: &str, n_steps: usize, dims: usize) -> SystemSpec {
    let mut s = SystemSpec::preset(name).unwrap().with_resolution(16, dims);
    s.n_steps = n_steps;
    s
}

fn corpus(entries: &[(SystemSpec, usize)]) -> Vec<Trajectory> {
    let entries: Vec<CorpusEntry> = entries
        .iter()
        .map(|(spec, count)| CorpusEntry {
            spec: spec.clone(),
            count: *count,
        })
        .collect();
    generate_corpus(&entries, &InitialConditionSpec::default(), 11).unwrap()
}

#[test]
fn round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let systems = [spec("advection", 17, 1), spec("diffusion", 17, 2)];
    let trajs = corpus(&[(systems[0].clone(), 6), (systems[1].clone(), 5)]);
    let manifest = write_dataset(&trajs, &systems, &InitialConditionSpec::default(), &SplitConfig::default(), dir.path()).unwrap();
    assert_eq!(manifest, DatasetManifest::load(dir.path()).unwrap());
    let ds = Dataset::open(dir.path()).unwrap();
    for (id, traj) in trajs.iter().enumerate() {
        let stored = ds.trajectory(id).unwrap();
        let expected = traj.snapshots.mapv(|x| x as f32);
        assert_eq!(stored.shape(), expected.shape());
        assert!(stored.iter().zip(expected.iter()).all(|(a, b)| a.to_bits() == b.to_bits()));
        let w = read_window::<f32>(dir.path(), &manifest, id, 0, 16).unwrap();
        assert_eq!(w.frames, expected.slice(s![0..16, .., .., ..]));
    }
}

#[test]
fn split_sizes_follow_fractions() {
    let dir = tempfile::tempdir().unwrap();
    let sys = spec("advection", 17, 1);
    let trajs = corpus(&[(sys.clone(), 1000)]);
    let m = write_dataset(&trajs, &[sys], &InitialConditionSpec::default(), &SplitConfig::default(), dir.path()).unwrap();
    assert_eq!(m.split_counts("advection"), [800, 100, 100]);
    assert_eq!(m.splits.len(), 1000);
}

#[test]
fn empty_list_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let err = write_dataset(&[], &[spec("advection", 17, 1)], &InitialConditionSpec::default(), &SplitConfig::default(), dir.path());
    assert!(matches!(err, Err(MppError::Empty(_))));
}

#[test]
fn window_boundaries_and_tiling() {
    let dir = tempfile::tempdir().unwrap();
    let systems = [spec("advection", 17, 1), spec("diffusion", 19, 1)];
    let trajs = corpus(&[(systems[0].clone(), 3), (systems[1].clone(), 3)]);
    let m = write_dataset(&trajs, &systems, &InitialConditionSpec::default(), &SplitConfig::default(), dir.path()).unwrap();
    let ds = Dataset::open(dir.path()).unwrap();

    let w = ds.window::<f64>(0, 0, 16).unwrap();
    let full = ds.trajectory(0).unwrap();
    assert_eq!(w.frames, full.slice(s![0..16, .., .., ..]).mapv(|x| x as f64));
    assert_eq!(w.target, full.slice(s![16, .., .., ..]).mapv(|x| x as f64));
    assert!(matches!(ds.window::<f64>(0, 2, 16), Err(MppError::WindowRange { .. })));
    assert!(matches!(ds.window::<f64>(0, 1, 16), Err(MppError::WindowRange { .. })));
    assert!(ds.window::<f64>(99, 0, 16).is_err());

    let diffusion_id = 3;
    let a = ds.window::<f32>(diffusion_id, 1, 16).unwrap();
    let b = ds.window::<f32>(diffusion_id, 2, 16).unwrap();
    assert_eq!(a.frames.slice(s![1.., .., .., ..]), b.frames.slice(s![..15, .., .., ..]));
    assert_eq!(a.field_indices, vec![m.field_registry.index_of("psi").unwrap()]);
    assert_eq!(b.periodic, [true, false]);
}

#[test]
fn register_fields_is_append_only() {
    let dir = tempfile::tempdir().unwrap();
    let systems = [spec("advection", 17, 1)];
    let trajs = corpus(&[(systems[0].clone(), 3)]);
    let mut m = write_dataset(&trajs, &systems, &InitialConditionSpec::default(), &SplitConfig::default(), dir.path()).unwrap();
    let before = m.field_registry.index_of("psi").unwrap();
    m.register_fields(&["u", "v"]).unwrap();
    assert_eq!(m.field_registry.names(), ["psi", "u", "v"]);
    assert_eq!(m.field_registry.index_of("psi").unwrap(), before);
    assert!(m.register_fields(&["psi"]).is_err());
    assert_eq!(m.field_registry.len(), 3);
}

#[test]
fn every_id_is_in_exactly_one_split() {
    let dir = tempfile::tempdir().unwrap();
    let systems = [spec("advection", 17, 1), spec("diffusion", 17, 1)];
    let trajs = corpus(&[(systems[0].clone(), 20), (systems[1].clone(), 30)]);
    let m = write_dataset(&trajs, &systems, &InitialConditionSpec::default(), &SplitConfig::default(), dir.path()).unwrap();
    let mut seen = [0; 50];
    for split in [Split::Train, Split::Val, Split::Test] {
        for sys in ["advection", "diffusion"] {
            for id in m.ids(sys, split) {
                seen[id] += 1;
            }
        }
    }
    assert!(seen.iter().all(|&c| c == 1));
    assert_eq!(m.split_counts("advection"), [16, 2, 2]);
    assert_eq!(m.split_counts("diffusion"), [24, 3, 3]);
}
