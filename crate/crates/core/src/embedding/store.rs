use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use super::hashing::{hash_embed, DEFAULT_DIMENSION};
use super::{EmbeddingError, EmbeddingProvider, EmbeddingVector};
use crate::scalar::Scalar;

pub const STORE_MAGIC: &[u8; 4] = b"EMB1";

const MEMO_CAPACITY: usize = 16_384;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Provenance {
    Precomputed,
    Fallback,
    Remote,
}

/// Text-keyed embedding lookup with provider tiers behind it.
///
/// Lookups go: exact key in `entries`, then the remote provider (if any),
/// then the hashed fallback (if enabled). Provider results are memoized
/// per key so a turn's embedding is computed once.
pub struct EmbeddingStore<T: Scalar> {
    dimension: usize,
    entries: HashMap<String, EmbeddingVector<T>>,
    provenance: Provenance,
    remote: Option<Arc<dyn EmbeddingProvider>>,
    fallback: bool,
    memo: RwLock<HashMap<String, EmbeddingVector<T>>>,
}

impl<T: Scalar> std::fmt::Debug for EmbeddingStore<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EmbeddingStore")
            .field("dimension", &self.dimension)
            .field("entries", &self.entries.len())
            .field("provenance", &self.provenance)
            .field("remote", &self.remote.is_some())
            .field("fallback", &self.fallback)
            .finish()
    }
}

impl<T: Scalar> Default for EmbeddingStore<T> {
    fn default() -> Self {
        Self::fallback(DEFAULT_DIMENSION)
    }
}

impl<T: Scalar> EmbeddingStore<T> {
    /// Empty store answered entirely by the hashed fallback.
    pub fn fallback(dimension: usize) -> Self {
        assert!(dimension > 0, "embedding dimension must be positive");
        EmbeddingStore {
            dimension,
            entries: HashMap::new(),
            provenance: Provenance::Fallback,
            remote: None,
            fallback: true,
            memo: RwLock::default(),
        }
    }

    /// Store over precomputed vectors. Missing keys are errors unless a
    /// provider tier is enabled afterwards.
    pub fn precomputed(
        dimension: usize,
        entries: impl IntoIterator<Item = (String, EmbeddingVector<T>)>,
    ) -> Result<Self, EmbeddingError> {
        let mut map = HashMap::new();
        for (key, v) in entries {
            if v.dimension() != dimension {
                return Err(EmbeddingError::DimensionMismatch {
                    expected: dimension,
                    found: v.dimension(),
                });
            }
            map.insert(key, v);
        }
        Ok(EmbeddingStore {
            dimension,
            entries: map,
            provenance: Provenance::Precomputed,
            remote: None,
            fallback: false,
            memo: RwLock::default(),
        })
    }

    pub fn with_remote(mut self, provider: Arc<dyn EmbeddingProvider>) -> Self {
        self.remote = Some(provider);
        if self.entries.is_empty() {
            self.provenance = Provenance::Remote;
        }
        self
    }

    pub fn with_fallback(mut self, enabled: bool) -> Self {
        self.fallback = enabled;
        self
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn get(&self, key: &str) -> Option<&EmbeddingVector<T>> {
        self.entries.get(key)
    }

    pub fn insert(&mut self, key: impl Into<String>, v: EmbeddingVector<T>) -> Result<(), EmbeddingError> {
        if v.dimension() != self.dimension {
            return Err(EmbeddingError::DimensionMismatch {
                expected: self.dimension,
                found: v.dimension(),
            });
        }
        self.entries.insert(key.into(), v);
        Ok(())
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Embedding for `text`.
    pub fn embed(&self, text: &str) -> Result<EmbeddingVector<T>, EmbeddingError> {
        if text.trim().is_empty() {
            return Err(EmbeddingError::EmptyInput);
        }
        if let Some(v) = self.entries.get(text).or_else(|| self.entries.get(text.trim())) {
            return Ok(v.clone());
        }
        if let Some(v) = self.memo.read().expect("memo lock").get(text) {
            return Ok(v.clone());
        }
        let v = self.embed_uncached(text)?;
        let mut memo = self.memo.write().expect("memo lock");
        if memo.len() >= MEMO_CAPACITY {
            memo.clear();
        }
        memo.insert(text.to_owned(), v.clone());
        Ok(v)
    }

    fn embed_uncached(&self, text: &str) -> Result<EmbeddingVector<T>, EmbeddingError> {
        if let Some(remote) = &self.remote {
            match remote.embed_batch(&[text.to_owned()]) {
                Ok(mut vectors) if vectors.len() == 1 => {
                    let values = vectors.pop().expect("one vector");
                    if values.len() != self.dimension {
                        return Err(EmbeddingError::DimensionMismatch {
                            expected: self.dimension,
                            found: values.len(),
                        });
                    }
                    return Ok(EmbeddingVector::new(values.into_iter().map(T::lit).collect()));
                }
                Ok(vectors) => {
                    let err = EmbeddingError::ProviderUnavailable(format!(
                        "expected 1 vector, got {}",
                        vectors.len()
                    ));
                    if !self.fallback {
                        return Err(err);
                    }
                    tracing::warn!(%err, "remote embedding failed, using fallback");
                }
                Err(err) => {
                    if !self.fallback {
                        return Err(err);
                    }
                    tracing::warn!(%err, "remote embedding failed, using fallback");
                }
            }
        }
        if self.fallback {
            Ok(hash_embed(text, self.dimension))
        } else if self.remote.is_some() {
            Err(EmbeddingError::ProviderUnavailable("no provider answered".into()))
        } else {
            Err(EmbeddingError::NotInStore(text.to_owned()))
        }
    }

    /// Reads a store file. The result is `Precomputed` with no provider tier.
    pub fn read_file(path: &Path) -> Result<Self, EmbeddingError> {
        let file = fs::File::open(path).map_err(|e| EmbeddingError::io(path, e))?;
        let mut r = BufReader::new(file);
        let entries = read_entries::<T, _>(&mut r).map_err(|e| match e {
            EmbeddingError::Io(msg) => EmbeddingError::Format(format!("{}: {msg}", path.display())),
            other => other,
        })?;
        let (dimension, entries) = entries;
        Self::precomputed(dimension, entries)
    }

    /// Writes the binary store plus a plain-text `.idx` sidecar listing keys.
    pub fn write_file(&self, path: &Path) -> Result<(), EmbeddingError> {
        let sorted: BTreeMap<&str, &EmbeddingVector<T>> =
            self.entries.iter().map(|(k, v)| (k.as_str(), v)).collect();
        let file = fs::File::create(path).map_err(|e| EmbeddingError::io(path, e))?;
        let mut w = BufWriter::new(file);
        write_entries(&mut w, self.dimension, sorted.iter().map(|(k, v)| (*k, *v)))
            .map_err(|e| EmbeddingError::io(path, e))?;
        w.flush().map_err(|e| EmbeddingError::io(path, e))?;

        let idx = sidecar_path(path);
        let mut s = format!("# EMB1 dimension={} entries={}\n", self.dimension, sorted.len());
        for (i, key) in sorted.keys().enumerate() {
            s.push_str(&format!("{i}\t{}\n", key.replace(['\t', '\n'], " ")));
        }
        fs::write(&idx, s).map_err(|e| EmbeddingError::io(&idx, e))
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".idx");
    PathBuf::from(name)
}

/// Encodes entries in the `EMB1` layout: magic, u32 LE dimension, u32 LE
/// count, then per entry a u32 LE byte length, the UTF-8 key and `dimension`
/// little-endian f32 values.
pub fn write_entries<'a, T: Scalar, W: Write>(
    w: &mut W,
    dimension: usize,
    entries: impl ExactSizeIterator<Item = (&'a str, &'a EmbeddingVector<T>)>,
) -> std::io::Result<()> {
    w.write_all(STORE_MAGIC)?;
    w.write_all(&(dimension as u32).to_le_bytes())?;
    w.write_all(&(entries.len() as u32).to_le_bytes())?;
    for (key, v) in entries {
        w.write_all(&(key.len() as u32).to_le_bytes())?;
        w.write_all(key.as_bytes())?;
        for &x in v.values() {
            let f = x.to_f32().unwrap_or(f32::NAN);
            w.write_all(&f.to_le_bytes())?;
        }
    }
    Ok(())
}

#[allow(clippy::type_complexity)]
pub fn read_entries<T: Scalar, R: Read>(
    r: &mut R,
) -> Result<(usize, Vec<(String, EmbeddingVector<T>)>), EmbeddingError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|e| EmbeddingError::Io(e.to_string()))?;
    if &magic != STORE_MAGIC {
        return Err(EmbeddingError::Format("bad magic, expected EMB1".into()));
    }
    let dimension = read_u32(r)? as usize;
    if dimension == 0 {
        return Err(EmbeddingError::Format("dimension must be positive".into()));
    }
    let count = read_u32(r)? as usize;
    let mut entries = Vec::with_capacity(count.min(1 << 20));
    let mut buf = vec![0u8; 4 * dimension];
    for _ in 0..count {
        let len = read_u32(r)? as usize;
        let mut key = vec![0u8; len];
        r.read_exact(&mut key).map_err(|e| EmbeddingError::Io(e.to_string()))?;
        let key = String::from_utf8(key).map_err(|_| EmbeddingError::Format("key is not UTF-8".into()))?;
        r.read_exact(&mut buf).map_err(|e| EmbeddingError::Io(e.to_string()))?;
        let values = buf
            .chunks_exact(4)
            .map(|c| T::lit(f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]]))))
            .collect();
        entries.push((key, EmbeddingVector::new(values)));
    }
    Ok((dimension, entries))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, EmbeddingError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|e| EmbeddingError::Io(e.to_string()))?;
    Ok(u32::from_le_bytes(b))
}
