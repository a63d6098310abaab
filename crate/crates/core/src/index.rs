//! Precomputed per-corpus data: function vectors, mask vectors of every
//! eligible occurrence, and the slice (plus its vector) of every such
//! occurrence used as a criterion.
//!
//! On disk an index is a directory holding `manifest.json`,
//! `functions.jsonl` and three blobs of little-endian `f32` values
//! (`functions.vec`, `masks.vec`, `slices.vec`). Records address vectors by
//! byte offset.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::code::{extract_functions, extract_functions_from, CodeConfig, Function, FunctionId, StmtId};
use crate::diag::Diagnostic;
use crate::embed::{
    cosine_similarity, sequence_embedding, text_embedding, EmbeddingProvider, EmbeddingVector, MaskContext,
    PinpointEmbedding, ProviderInfo,
};
use crate::error::{Error, Result};
use crate::graphs::build_cfg_and_ddg;
use crate::par::{self, ExecMode};
use crate::pinpoint::{candidate_vectors, PinpointConfig};
use crate::slicer::{customized_slice, SliceConfig};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.json";
pub const RECORDS: &str = "functions.jsonl";
pub const FUNCTION_BLOB: &str = "functions.vec";
pub const MASK_BLOB: &str = "masks.vec";
pub const SLICE_BLOB: &str = "slices.vec";
pub const POOLING: &str = "mean";
pub const DEFAULT_SCREEN_TOP_K: usize = 1000;

/// Everything that must match for stored vectors and slices to be reused.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Settings {
    pub pooling: String,
    pub mask_context: MaskContext,
    pub slicing: SliceConfig,
    pub fuse_dot_access: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub files: usize,
    pub functions: usize,
    pub masks: usize,
    pub slices: usize,
    pub diagnostics: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlobInfo {
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: u32,
    pub provider: ProviderInfo,
    /// Service URL for remote providers.
    pub provider_url: Option<String>,
    pub settings: Settings,
    /// Screening depth queries use unless told otherwise.
    #[serde(default = "default_screen_top_k")]
    pub screen_top_k: usize,
    pub corpus_root: String,
    pub created_at: String,
    /// False while a build is in progress.
    pub complete: bool,
    pub counts: Counts,
    pub blobs: BTreeMap<String, BlobInfo>,
}

fn default_screen_top_k() -> usize {
    DEFAULT_SCREEN_TOP_K
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskRecord {
    pub stmt: StmtId,
    pub stmt_index: usize,
    pub occ: usize,
    pub key: String,
    /// Byte offset in `masks.vec`.
    pub vector: u64,
    /// Slice with this occurrence's statement and key as criterion.
    pub slice: Vec<StmtId>,
    /// Byte offset in `slices.vec`.
    pub slice_vector: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionRecord {
    pub id: FunctionId,
    pub name: String,
    /// Path relative to the corpus root, `/`-separated.
    pub file: String,
    pub start_line: u32,
    pub end_line: u32,
    pub content_hash: String,
    pub source: String,
    /// Byte offset in `functions.vec`.
    pub vector: u64,
    pub masks: Vec<MaskRecord>,
}

#[derive(Debug, Clone)]
pub struct Index {
    pub manifest: Manifest,
    pub records: Vec<FunctionRecord>,
    functions: Vec<f32>,
    masks: Vec<f32>,
    slices: Vec<f32>,
}

fn row(blob: &[f32], offset: u64, dim: usize) -> &[f32] {
    let start = offset as usize / 4;
    &blob[start..start + dim]
}

impl Index {
    pub fn dim(&self) -> usize {
        self.manifest.provider.dim
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn function_vector(&self, record: usize) -> EmbeddingVector {
        EmbeddingVector(row(&self.functions, self.records[record].vector, self.dim()).to_vec())
    }

    pub fn mask_vector(&self, mask: &MaskRecord) -> EmbeddingVector {
        EmbeddingVector(row(&self.masks, mask.vector, self.dim()).to_vec())
    }

    pub fn slice_vector(&self, mask: &MaskRecord) -> EmbeddingVector {
        EmbeddingVector(row(&self.slices, mask.slice_vector, self.dim()).to_vec())
    }

    pub fn code_config(&self) -> CodeConfig {
        CodeConfig {
            fuse_dot_access: self.manifest.settings.fuse_dot_access,
        }
    }

    /// Re-parses a stored function.
    pub fn function(&self, record: usize) -> Result<Function> {
        let r = &self.records[record];
        extract_functions_from(&r.source, &r.file, r.start_line, &self.code_config())
            .functions
            .into_iter()
            .find(|f| f.name == r.name)
            .ok_or_else(|| Error::CorruptIndex(format!("stored source of {} does not parse", r.id)))
    }

    /// Absolute path of a record's file.
    pub fn source_path(&self, record: usize) -> PathBuf {
        Path::new(&self.manifest.corpus_root).join(&self.records[record].file)
    }

    /// Fails unless `info` is the provider the index was built with.
    pub fn check_provider(&self, info: &ProviderInfo) -> Result<()> {
        let p = &self.manifest.provider;
        if p != info {
            return Err(Error::ManifestMismatch(format!(
                "index built with {} {} (dim {}, max {} tokens), provider is {} {} (dim {}, max {} tokens)",
                p.name, p.version, p.dim, p.max_tokens, info.name, info.version, info.dim, info.max_tokens
            )));
        }
        Ok(())
    }

    /// Loads and verifies an index directory.
    pub fn load(dir: &Path) -> Result<Index> {
        let manifest = read_manifest(dir)?;
        if manifest.format != FORMAT_VERSION {
            return Err(Error::CorruptIndex(format!("unsupported format {}", manifest.format)));
        }
        if !manifest.complete {
            return Err(Error::CorruptIndex("index build did not finish".into()));
        }
        let mut blobs = Vec::new();
        for name in [FUNCTION_BLOB, MASK_BLOB, SLICE_BLOB] {
            let path = dir.join(name);
            let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
            let info = manifest
                .blobs
                .get(name)
                .ok_or_else(|| Error::CorruptIndex(format!("manifest lacks {name}")))?;
            if bytes.len() as u64 != info.bytes {
                return Err(Error::CorruptIndex(format!(
                    "{name} has {} bytes, expected {}",
                    bytes.len(),
                    info.bytes
                )));
            }
            if sha256_hex(&bytes) != info.sha256 {
                return Err(Error::CorruptIndex(format!("{name} checksum mismatch")));
            }
            blobs.push(decode_f32(&bytes));
        }
        let slices = blobs.pop().unwrap_or_default();
        let masks = blobs.pop().unwrap_or_default();
        let functions = blobs.pop().unwrap_or_default();

        let path = dir.join(RECORDS);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let r: FunctionRecord = serde_json::from_str(line)
                .map_err(|e| Error::CorruptIndex(format!("{RECORDS} line {}: {e}", i + 1)))?;
            records.push(r);
        }
        let index = Index {
            manifest,
            records,
            functions,
            masks,
            slices,
        };
        index.verify()?;
        Ok(index)
    }

    fn verify(&self) -> Result<()> {
        let dim = self.dim();
        let fits = |blob: &[f32], off: u64| off.is_multiple_of(4) && (off / 4) as usize + dim <= blob.len();
        let (mut masks, mut slices) = (0, 0);
        for r in &self.records {
            if !fits(&self.functions, r.vector) {
                return Err(Error::CorruptIndex(format!("function vector of {} out of range", r.id)));
            }
            for m in &r.masks {
                if !fits(&self.masks, m.vector) || !fits(&self.slices, m.slice_vector) {
                    return Err(Error::CorruptIndex(format!("mask vector of {} out of range", r.id)));
                }
                masks += 1;
                slices += 1;
            }
        }
        let c = &self.manifest.counts;
        if c.functions != self.records.len() || c.masks != masks || c.slices != slices {
            return Err(Error::CorruptIndex("record counts disagree with the manifest".into()));
        }
        Ok(())
    }
}

fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::CorruptIndex(format!("{MANIFEST}: {e}")))
}

fn decode_f32(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect()
}

fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

fn content_hash(file: &str, start_line: u32, source: &str) -> String {
    let mut h = Sha256::new();
    h.update(file.as_bytes());
    h.update([0]);
    h.update(start_line.to_string().as_bytes());
    h.update([0]);
    h.update(source.as_bytes());
    format!("{:x}", h.finalize())
}

/// Functions ranked by cosine similarity of their function vectors to
/// `seed`, best first, ties by function id. At most `k` entries.
pub fn screen_top_k(index: &Index, seed: &EmbeddingVector, k: usize, exec: ExecMode) -> Result<Vec<(usize, f64)>> {
    let ids: Vec<usize> = (0..index.len()).collect();
    let scores = par::map(exec, &ids, |&i| cosine_similarity(seed, &index.function_vector(i)));
    let mut ranked = ids
        .into_iter()
        .zip(scores)
        .map(|(i, s)| s.map(|s| (i, s)))
        .collect::<Result<Vec<_>>>()?;
    ranked.sort_by(|a, b| {
        b.1.total_cmp(&a.1)
            .then_with(|| index.records[a.0].id.cmp(&index.records[b.0].id))
    });
    ranked.truncate(k);
    Ok(ranked)
}

#[derive(Debug, Clone)]
pub struct BuildConfig {
    pub code: CodeConfig,
    pub slice: SliceConfig,
    pub mask_context: MaskContext,
    pub exec: ExecMode,
    /// Functions embedded between two appends to the output files.
    pub chunk_size: usize,
    pub provider_url: Option<String>,
    pub screen_top_k: usize,
}

impl Default for BuildConfig {
    fn default() -> Self {
        Self {
            code: CodeConfig::default(),
            slice: SliceConfig::default(),
            mask_context: MaskContext::default(),
            exec: ExecMode::default(),
            chunk_size: 64,
            provider_url: None,
            screen_top_k: DEFAULT_SCREEN_TOP_K,
        }
    }
}

impl BuildConfig {
    pub fn settings(&self) -> Settings {
        Settings {
            pooling: POOLING.into(),
            mask_context: self.mask_context,
            slicing: self.slice,
            fuse_dot_access: self.code.fuse_dot_access,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct BuildReport {
    pub counts: Counts,
    /// Functions whose vectors were taken from a previous build.
    pub reused: usize,
    pub embedded: usize,
    pub diagnostics: Vec<Diagnostic>,
}

/// Vectors of one function, ready to append.
struct Computed {
    record: FunctionRecord,
    function: Vec<f32>,
    masks: Vec<(Vec<f32>, Vec<f32>)>,
}

/// C sources below `root`, sorted, as (relative path, absolute path).
pub fn corpus_files(root: &Path) -> Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    for entry in walkdir::WalkDir::new(root).sort_by_file_name() {
        let entry = entry.map_err(|e| {
            let path = e.path().map(Path::to_path_buf).unwrap_or_else(|| root.to_path_buf());
            Error::io(path, e.into())
        })?;
        let path = entry.path();
        let is_c = path.extension().is_some_and(|x| x == "c" || x == "h");
        if entry.file_type().is_file() && is_c {
            let rel = path.strip_prefix(root).unwrap_or(path);
            let rel = rel
                .components()
                .map(|c| c.as_os_str().to_string_lossy())
                .collect::<Vec<_>>()
                .join("/");
            out.push((rel, path.to_path_buf()));
        }
    }
    Ok(out)
}

/// Reads the records and vectors of a previous build at `dir` with the same
/// provider and settings, keyed by content hash. Truncated tails of an
/// interrupted build are ignored.
fn previous_build(dir: &Path, provider: &ProviderInfo, settings: &Settings) -> HashMap<String, Computed> {
    let mut out = HashMap::new();
    let Ok(manifest) = read_manifest(dir) else {
        return out;
    };
    if &manifest.provider != provider || &manifest.settings != settings {
        log::info!("existing index at {} was built differently; rebuilding", dir.display());
        return out;
    }
    let blob = |name: &str| fs::read(dir.join(name)).map(|b| decode_f32(&b)).unwrap_or_default();
    let (fv, mv, sv) = (blob(FUNCTION_BLOB), blob(MASK_BLOB), blob(SLICE_BLOB));
    let Ok(file) = File::open(dir.join(RECORDS)) else {
        return out;
    };
    let dim = provider.dim;
    let get = |b: &[f32], off: u64| -> Option<Vec<f32>> {
        let s = (off / 4) as usize;
        (off.is_multiple_of(4) && s + dim <= b.len()).then(|| b[s..s + dim].to_vec())
    };
    for line in BufReader::new(file).lines() {
        let Ok(line) = line else { break };
        let Ok(record) = serde_json::from_str::<FunctionRecord>(&line) else {
            break;
        };
        let Some(function) = get(&fv, record.vector) else {
            break;
        };
        let masks: Option<Vec<_>> = record
            .masks
            .iter()
            .map(|m| Some((get(&mv, m.vector)?, get(&sv, m.slice_vector)?)))
            .collect();
        let Some(masks) = masks else { break };
        out.insert(
            record.content_hash.clone(),
            Computed {
                record,
                function,
                masks,
            },
        );
    }
    out
}

fn compute(provider: &dyn EmbeddingProvider, func: &Function, hash: String, config: &BuildConfig) -> Result<Computed> {
    let function = sequence_embedding(provider, &func.tokens)?.0;
    let pcfg = PinpointConfig {
        method: PinpointEmbedding::Mask,
        context: config.mask_context,
    };
    let candidates = candidate_vectors(provider, func, pcfg)?;
    let graphs = build_cfg_and_ddg(func);
    let mut slice_cache: HashMap<String, Vec<f32>> = HashMap::new();
    let mut masks = Vec::with_capacity(candidates.len());
    let mut mask_records = Vec::with_capacity(candidates.len());
    for (r, v) in candidates {
        let (s, o) = r.get(func);
        let slice = customized_slice(func, &graphs, r.stmt, &o.key, config.slice)?;
        let text = slice.text();
        let sv = match slice_cache.get(&text) {
            Some(v) => v.clone(),
            None => {
                let v = text_embedding(provider, &text)?.0;
                slice_cache.insert(text, v.clone());
                v
            }
        };
        mask_records.push(MaskRecord {
            stmt: s.id,
            stmt_index: r.stmt,
            occ: r.occ,
            key: o.key.clone(),
            vector: 0,
            slice: slice.ids(),
            slice_vector: 0,
        });
        masks.push((v.0, sv));
    }
    Ok(Computed {
        record: FunctionRecord {
            id: func.id.clone(),
            name: func.name.clone(),
            file: func.file.clone(),
            start_line: func.start_line,
            end_line: func.end_line,
            content_hash: hash,
            source: func.source.clone(),
            vector: 0,
            masks: mask_records,
        },
        function,
        masks,
    })
}

struct BlobWriter {
    out: BufWriter<File>,
    hash: Sha256,
    bytes: u64,
}

impl BlobWriter {
    fn create(path: &Path) -> Result<Self> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(Self {
            out: BufWriter::new(f),
            hash: Sha256::new(),
            bytes: 0,
        })
    }

    /// Appends a vector and returns its byte offset.
    fn push(&mut self, v: &[f32], path: &Path) -> Result<u64> {
        let offset = self.bytes;
        for x in v {
            let b = x.to_le_bytes();
            self.out.write_all(&b).map_err(|e| Error::io(path, e))?;
            self.hash.update(b);
        }
        self.bytes += 4 * v.len() as u64;
        Ok(offset)
    }

    fn finish(mut self, path: &Path) -> Result<BlobInfo> {
        self.out.flush().map_err(|e| Error::io(path, e))?;
        Ok(BlobInfo {
            bytes: self.bytes,
            sha256: format!("{:x}", self.hash.finalize()),
        })
    }
}

fn write_manifest(dir: &Path, manifest: &Manifest) -> Result<()> {
    let tmp = dir.join(format!("{MANIFEST}.tmp"));
    let text = serde_json::to_string_pretty(manifest)?;
    fs::write(&tmp, text + "\n").map_err(|e| Error::io(&tmp, e))?;
    let path = dir.join(MANIFEST);
    fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))
}

fn now_rfc3339() -> String {
    time::OffsetDateTime::now_utc()
        .format(&time::format_description::well_known::Rfc3339)
        .unwrap_or_default()
}

/// Builds (or refreshes) the index of every `.c`/`.h` file under `corpus`
/// into `out`. Functions unchanged since a previous build into the same
/// directory keep their vectors.
pub fn build_index(
    corpus: &Path,
    out: &Path,
    provider: &dyn EmbeddingProvider,
    config: &BuildConfig,
) -> Result<BuildReport> {
    let corpus = fs::canonicalize(corpus).map_err(|e| Error::io(corpus, e))?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let info = provider.info().clone();
    let settings = config.settings();
    let mut previous = previous_build(out, &info, &settings);

    let files = corpus_files(&corpus)?;
    let extracted = par::map(config.exec, &files, |(rel, path)| -> Result<_> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let text = String::from_utf8_lossy(&bytes);
        Ok(extract_functions(&text, rel, &config.code))
    });
    let mut report = BuildReport::default();
    let mut functions = Vec::new();
    for ex in extracted {
        let ex = ex?;
        report.diagnostics.extend(ex.diagnostics);
        functions.extend(ex.functions);
    }
    report.counts.files = files.len();
    report.counts.diagnostics = report.diagnostics.len();

    let mut manifest = Manifest {
        format: FORMAT_VERSION,
        provider: info,
        provider_url: config.provider_url.clone(),
        settings,
        screen_top_k: config.screen_top_k,
        corpus_root: corpus.to_string_lossy().into_owned(),
        created_at: now_rfc3339(),
        complete: false,
        counts: Counts::default(),
        blobs: BTreeMap::new(),
    };
    write_manifest(out, &manifest)?;

    let rec_path = out.join(RECORDS);
    let mut records = BufWriter::new(File::create(&rec_path).map_err(|e| Error::io(&rec_path, e))?);
    let (fp, mp, sp) = (out.join(FUNCTION_BLOB), out.join(MASK_BLOB), out.join(SLICE_BLOB));
    let mut fw = BlobWriter::create(&fp)?;
    let mut mw = BlobWriter::create(&mp)?;
    let mut sw = BlobWriter::create(&sp)?;

    for chunk in functions.chunks(config.chunk_size.max(1)) {
        let jobs: Vec<(&Function, String, Option<Computed>)> = chunk
            .iter()
            .map(|f| {
                let h = content_hash(&f.file, f.start_line, &f.source);
                let prev = previous.remove(&h);
                (f, h, prev)
            })
            .collect();
        let results = par::map(config.exec, &jobs, |(f, h, prev)| match prev {
            Some(_) => Ok(None),
            None => compute(provider, f, h.clone(), config).map(Some),
        });
        for ((f, _, prev), res) in jobs.into_iter().zip(results) {
            let mut c = match (prev, res?) {
                (_, Some(c)) => {
                    report.embedded += 1;
                    c
                }
                (Some(c), None) => {
                    report.reused += 1;
                    c
                }
                (None, None) => unreachable!("function {} neither reused nor computed", f.id),
            };
            c.record.vector = fw.push(&c.function, &fp)?;
            for (m, (mv, sv)) in c.record.masks.iter_mut().zip(&c.masks) {
                m.vector = mw.push(mv, &mp)?;
                m.slice_vector = sw.push(sv, &sp)?;
            }
            report.counts.functions += 1;
            report.counts.masks += c.record.masks.len();
            report.counts.slices += c.record.masks.len();
            serde_json::to_writer(&mut records, &c.record)?;
            records.write_all(b"\n").map_err(|e| Error::io(&rec_path, e))?;
        }
        records.flush().map_err(|e| Error::io(&rec_path, e))?;
        log::info!(
            "indexed {}/{} functions ({} reused)",
            report.counts.functions,
            functions.len(),
            report.reused
        );
    }
    records.flush().map_err(|e| Error::io(&rec_path, e))?;
    manifest.blobs.insert(FUNCTION_BLOB.into(), fw.finish(&fp)?);
    manifest.blobs.insert(MASK_BLOB.into(), mw.finish(&mp)?);
    manifest.blobs.insert(SLICE_BLOB.into(), sw.finish(&sp)?);
    manifest.counts = report.counts.clone();
    manifest.complete = true;
    write_manifest(out, &manifest)?;
    Ok(report)
}
