use std::fs;
use std::path::{Path, PathBuf};

use recurscan::code::{extract_functions, CodeConfig, Function};
use recurscan::embed::ReferenceEmbedder;
use recurscan::index::{build_index, BuildConfig, Index, FUNCTION_BLOB, MASK_BLOB, RECORDS, SLICE_BLOB};
use recurscan::par::ExecMode;
use recurscan::query::{prepare_query, render_report, run_query, QueryConfig, ReportFormat};

fn desk() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/desk")
}

fn seed(case: &str, side: &str, name: &str) -> Function {
    let src = fs::read_to_string(desk().join("seeds").join(case).join(side)).unwrap();
    extract_functions(&src, side, &CodeConfig::default())
        .functions
        .into_iter()
        .find(|f| f.name == name)
        .unwrap()
}

fn corpus_files() -> Vec<PathBuf> {
    let root = desk().join("corpus");
    let mut out: Vec<PathBuf> = walkdir::WalkDir::new(&root)
        .into_iter()
        .map(|e| e.unwrap())
        .filter(|e| e.file_type().is_file())
        .map(|e| e.path().strip_prefix(&root).unwrap().to_path_buf())
        .collect();
    out.sort();
    out
}

/// Copies the desk corpus file by file in the given order.
fn copy_corpus(to: &Path, files: &[PathBuf]) {
    for rel in files {
        let dest = to.join(rel);
        fs::create_dir_all(dest.parent().unwrap()).unwrap();
        fs::copy(desk().join("corpus").join(rel), dest).unwrap();
    }
}

fn build(corpus: &Path, out: &Path, exec: ExecMode) -> Index {
    let config = BuildConfig {
        exec,
        chunk_size: 7,
        ..Default::default()
    };
    build_index(corpus, out, &ReferenceEmbedder::default(), &config).unwrap();
    Index::load(out).unwrap()
}

fn data_files(dir: &Path) -> Vec<Vec<u8>> {
    [RECORDS, FUNCTION_BLOB, MASK_BLOB, SLICE_BLOB]
        .iter()
        .map(|f| fs::read(dir.join(f)).unwrap())
        .collect()
}

#[test]
fn builds_are_deterministic_across_modes_and_file_order() {
    let tmp = tempfile::tempdir().unwrap();
    let files = corpus_files();
    let mut reversed = files.clone();
    reversed.reverse();
    copy_corpus(&tmp.path().join("a"), &files);
    copy_corpus(&tmp.path().join("b"), &reversed);

    let seq = build(&tmp.path().join("a"), &tmp.path().join("i1"), ExecMode::Sequential);
    let par = build(&tmp.path().join("b"), &tmp.path().join("i2"), ExecMode::Parallel);
    assert_eq!(data_files(&tmp.path().join("i1")), data_files(&tmp.path().join("i2")));
    assert_eq!(seq.manifest.blobs, par.manifest.blobs);
    assert_eq!(seq.manifest.counts, par.manifest.counts);
}

#[test]
fn queries_are_deterministic_across_modes() {
    let tmp = tempfile::tempdir().unwrap();
    let index = build(&desk().join("corpus"), tmp.path(), ExecMode::Parallel);
    let e = ReferenceEmbedder::default();
    let buggy = seed("pci_bridge_ref", "buggy.c", "acme_find_bridge");
    let fixed = seed("pci_bridge_ref", "fixed.c", "acme_find_bridge");
    let run = |exec| {
        let config = QueryConfig {
            exec,
            top_n: usize::MAX,
            ..Default::default()
        };
        let q = prepare_query(&e, &buggy, &fixed, &config).unwrap();
        run_query(&q, &index, &e, &config).unwrap().ranked
    };
    let a = run(ExecMode::Sequential);
    assert_eq!(a, run(ExecMode::Parallel));
    assert_eq!(a, run(ExecMode::Parallel));
    assert!(a.windows(2).all(|w| w[0].score >= w[1].score));
    assert!(a.iter().enumerate().all(|(i, c)| c.rank == i + 1));
}

#[test]
fn reports_match_golden_files() {
    let tmp = tempfile::tempdir().unwrap();
    let index = build(&desk().join("corpus"), tmp.path(), ExecMode::Parallel);
    let e = ReferenceEmbedder::default();
    let config = QueryConfig {
        top_n: 3,
        ..Default::default()
    };
    for (case, name) in [
        ("ntb_client_dev", "ntb_transport_register_client_dev"),
        ("fw_buf_leak", "acme_fw_load"),
    ] {
        let q = prepare_query(&e, &seed(case, "buggy.c", name), &seed(case, "fixed.c", name), &config).unwrap();
        let ranked = run_query(&q, &index, &e, &config).unwrap().ranked;
        let golden = desk().join("golden").join(format!("{case}.txt"));
        let got = render_report(&ranked, ReportFormat::Text);
        if std::env::var_os("UPDATE_GOLDEN").is_some() {
            fs::create_dir_all(golden.parent().unwrap()).unwrap();
            fs::write(&golden, &got).unwrap();
        }
        assert_eq!(got, fs::read_to_string(&golden).unwrap(), "{case}");
    }
}
