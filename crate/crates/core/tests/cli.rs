use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use spatial_design::cli::DesignFile;
use spatial_design::service::SurfaceFile;

const BASE: &str = r#"
problem = "river"
seed = 21
[data]
edges = "data/edges.csv"
sites = "data/sites.csv"
neighbourhoods = "data/neighbourhoods.csv"
[synth.river]
n_sites = 15
n_leaves = 4
n_windows = 2
[search]
k = 2
t = 2
m = 6
b = 6
b_final = 8
[windows]
m = 6
train_levels = 3
predict_levels = 5
"#;

fn spatial_design(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spatial-design")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn ok(args: &[&str]) {
    let out = spatial_design(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

struct Project {
    _tmp: tempfile::TempDir,
    dir: PathBuf,
}

impl Project {
    fn new(extra: &str) -> Self {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().to_path_buf();
        std::fs::write(dir.join("config.toml"), format!("{BASE}{extra}")).unwrap();
        Self { _tmp: tmp, dir }
    }

    fn config(&self) -> String {
        self.path("config.toml")
    }

    fn path(&self, p: &str) -> String {
        self.dir.join(p).to_str().unwrap().to_string()
    }

    fn run(&self, cmd: &str, out: &str) {
        ok(&[cmd, "--config", &self.config(), "--out", &self.path(out)]);
    }
}

fn rows(path: &Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(path).unwrap().records().map(Result::unwrap).collect()
}

#[test]
fn missing_files_exit_with_code_two_and_name_the_path() {
    let out = spatial_design(&["search", "--config", "/no/such/config.toml", "--out", "/tmp/unused"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/no/such/config.toml"));

    let p = Project::new("");
    let out = spatial_design(&["search", "--config", &p.config(), "--out", &p.path("s")]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("edges.csv"));
}

#[test]
fn synth_writes_the_requested_river() {
    let p = Project::new("");
    p.run("synth", "data");
    let sites = csv::Reader::from_path(p.path("data/sites.csv")).unwrap().headers().unwrap().clone();
    assert_eq!(&sites.iter().skip(5).collect::<Vec<_>>(), &["slope", "elevation", "watershed_area", "air_temp"]);
    assert_eq!(rows(Path::new(&p.path("data/sites.csv"))).len(), 15);
    assert!(!rows(Path::new(&p.path("data/edges.csv"))).is_empty());
}

#[test]
fn synth_reef_depths_stay_in_range() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("reef.toml");
    std::fs::write(&cfg, "problem = \"reef\"\n[synth.reef]\nwidth = 500.0\nheight = 400.0\n").unwrap();
    ok(&["synth", "--config", cfg.to_str().unwrap(), "--out", tmp.path().join("d").to_str().unwrap()]);
    let depths: Vec<f64> = rows(&tmp.path().join("d/reef.csv")).iter().map(|r| r[2].parse().unwrap()).collect();
    assert!(!depths.is_empty());
    assert!(depths.iter().all(|d| (12.0..=50.0).contains(d)));
}

#[test]
fn full_design_needs_no_exchanges() {
    let p = Project::new("[model.priors]\nnugget = { dist = \"lognormal\", meanlog = -1.0, sdlog = 0.5 }\n");
    p.run("synth", "data");
    let cfg = std::fs::read_to_string(p.config()).unwrap().replace("[search]\n", "[search]\ngamma = 15\n");
    std::fs::write(p.config(), cfg).unwrap();
    p.run("search", "search");
    let d = DesignFile::read(Path::new(&p.path("search/best_design.json"))).unwrap();
    assert_eq!(d.exchange_evaluations, 0);
    assert_eq!(d.sites.len(), 15);
}

#[test]
fn windows_surface_is_reproducible_and_normalised() {
    let p = Project::new("");
    let cfg = std::fs::read_to_string(p.config()).unwrap().replace("predict_levels = 5\n", "predict_levels = 5\nthresholds = [0.0, 0.9]\n");
    std::fs::write(p.config(), cfg).unwrap();
    p.run("synth", "data");
    p.run("windows", "w1");
    p.run("windows", "w2");
    let a = std::fs::read(p.path("w1/surface.json")).unwrap();
    assert_eq!(a, std::fs::read(p.path("w2/surface.json")).unwrap());

    let s = SurfaceFile::read(Path::new(&p.path("w1/surface.json"))).unwrap().surface;
    assert_eq!(s.eff.iter().copied().fold(f64::MIN, f64::max), 1.0);
    let contours = rows(Path::new(&p.path("w1/contours.csv")));
    let all: Vec<String> = (0..s.points.len()).map(|i| i.to_string()).collect();
    assert_eq!(&contours[0][0], "0");
    assert_eq!(contours[0][1].split(';').collect::<Vec<_>>(), all);
    assert!(Path::new(&p.path("w1/heatmap_N1_N2.png")).is_file());
}

#[test]
fn replay_reports_changed_inputs() {
    let p = Project::new("");
    p.run("synth", "data");
    p.run("search", "search");
    ok(&["replay", "--manifest", &p.path("search/manifest.json"), "--out", &p.path("again")]);
    assert_eq!(std::fs::read(p.path("search/trace.csv")).unwrap(), std::fs::read(p.path("again/trace.csv")).unwrap());

    std::fs::write(p.path("data/sites.csv"), "site_id\n").unwrap();
    let out = spatial_design(&["replay", "--manifest", &p.path("search/manifest.json"), "--out", &p.path("again2")]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("sites.csv"));
}
