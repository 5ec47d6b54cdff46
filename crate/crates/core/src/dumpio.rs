//! Hidden-state dumps and the `SLDUMP01` binary format.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic          8 bytes  "SLDUMP01"
//! num_snapshots  u32      L + 1, snapshot 0 is the input embedding
//! num_tokens     u32      n
//! hidden_dim     u32      d
//! dtype_code     u32      0 = float32
//! tokens         n x (u32 byte_len, UTF-8 bytes)
//! activations    (L+1) * n * d x f32, layer-major, then token, then dim
//! metadata_len   u32
//! metadata       metadata_len bytes of UTF-8 JSON (an object), may be empty
//! ```

use std::fs;
use std::path::Path;

use ndarray::{Array3, ArrayView2, ArrayViewMut3, Axis};
use serde_json::{Map, Value};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"SLDUMP01";
pub const DTYPE_F32: u32 = 0;

const HEADER_LEN: usize = 8 + 4 * 4;

/// One sample's residual streams: `(L+1) x n x d` activations plus tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenStateDump {
    tokens: Vec<String>,
    activations: Array3<f32>,
    metadata: Option<Map<String, Value>>,
}

impl HiddenStateDump {
    /// Builds a validated dump. `activations` has shape `(snapshots, tokens, dim)`.
    pub fn new(
        tokens: Vec<String>,
        activations: Array3<f32>,
        metadata: Option<Map<String, Value>>,
    ) -> Result<Self> {
        let dump = HiddenStateDump {
            tokens,
            activations: activations.as_standard_layout().into_owned(),
            metadata,
        };
        dump.validate()?;
        Ok(dump)
    }

    pub fn num_snapshots(&self) -> usize {
        self.activations.dim().0
    }

    pub fn num_tokens(&self) -> usize {
        self.activations.dim().1
    }

    pub fn hidden_dim(&self) -> usize {
        self.activations.dim().2
    }

    /// Number of transformer blocks, `L = num_snapshots - 1`.
    pub fn num_blocks(&self) -> usize {
        self.num_snapshots() - 1
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn activations(&self) -> &Array3<f32> {
        &self.activations
    }

    /// Mutable access for building synthetic dumps. Invariants are re-checked
    /// by [`write_dump`] and [`HiddenStateDump::validate`].
    pub fn activations_mut(&mut self) -> ArrayViewMut3<'_, f32> {
        self.activations.view_mut()
    }

    pub fn metadata(&self) -> Option<&Map<String, Value>> {
        self.metadata.as_ref()
    }

    pub fn set_metadata(&mut self, metadata: Option<Map<String, Value>>) {
        self.metadata = metadata;
    }

    /// Sample identifier from the metadata, if the extractor recorded one.
    pub fn sample_id(&self) -> Option<String> {
        match self.metadata.as_ref()?.get("sample_id")? {
            Value::String(s) => Some(s.clone()),
            other => Some(other.to_string()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (snapshots, n, d) = self.activations.dim();
        if snapshots < 2 {
            return Err(Error::Shape(format!(
                "num_snapshots must be >= 2, got {snapshots}"
            )));
        }
        if n < 1 {
            return Err(Error::Shape("num_tokens must be >= 1".into()));
        }
        if d < 1 {
            return Err(Error::Shape("hidden_dim must be >= 1".into()));
        }
        if self.tokens.len() != n {
            return Err(Error::Shape(format!(
                "{} tokens for num_tokens = {n}",
                self.tokens.len()
            )));
        }
        check_finite(&self.activations)
    }

    /// The `n x d` residual stream after block `layer` (0 = embeddings).
    pub fn layer_slice(&self, layer: usize) -> Result<ArrayView2<'_, f32>> {
        if layer >= self.num_snapshots() {
            return Err(Error::LayerOutOfRange {
                layer,
                num_snapshots: self.num_snapshots(),
            });
        }
        Ok(self.activations.index_axis(Axis(0), layer))
    }
}

fn check_finite(activations: &Array3<f32>) -> Result<()> {
    if let Some(((layer, token, dim), _)) = activations.indexed_iter().find(|(_, v)| !v.is_finite())
    {
        return Err(Error::NonFinite { layer, token, dim });
    }
    Ok(())
}

fn to_u32(value: usize, what: &str) -> Result<u32> {
    u32::try_from(value).map_err(|_| Error::Shape(format!("{what} {value} does not fit in u32")))
}

/// Serializes a dump to `SLDUMP01` bytes.
pub fn encode(dump: &HiddenStateDump) -> Result<Vec<u8>> {
    dump.validate()?;
    let (snapshots, n, d) = dump.activations.dim();
    let metadata = match &dump.metadata {
        Some(map) => serde_json::to_vec(map).map_err(|e| Error::InvalidMetadata(e.to_string()))?,
        None => Vec::new(),
    };
    let token_bytes: usize = dump.tokens.iter().map(|t| 4 + t.len()).sum();
    let mut out = Vec::with_capacity(
        HEADER_LEN + token_bytes + 4 * dump.activations.len() + 4 + metadata.len(),
    );

    out.extend_from_slice(MAGIC);
    for (value, what) in [
        (snapshots, "num_snapshots"),
        (n, "num_tokens"),
        (d, "hidden_dim"),
    ] {
        out.extend_from_slice(&to_u32(value, what)?.to_le_bytes());
    }
    out.extend_from_slice(&DTYPE_F32.to_le_bytes());
    for token in &dump.tokens {
        out.extend_from_slice(&to_u32(token.len(), "token length")?.to_le_bytes());
        out.extend_from_slice(token.as_bytes());
    }
    // standard layout is guaranteed by the constructor, iter() walks it in order
    for v in dump.activations.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&to_u32(metadata.len(), "metadata length")?.to_le_bytes());
    out.extend_from_slice(&metadata);
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, len: usize, what: &str) -> Result<&'a [u8]> {
        if self.remaining() < len {
            return Err(Error::Truncated(format!(
                "{what}: need {len} bytes at offset {}, {} left",
                self.pos,
                self.remaining()
            )));
        }
        let slice = &self.bytes[self.pos..self.pos + len];
        self.pos += len;
        Ok(slice)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Parses `SLDUMP01` bytes. Never panics; every malformed input maps to an error.
pub fn decode(bytes: &[u8]) -> Result<HiddenStateDump> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::BadMagic);
    }
    let mut cur = Cursor {
        bytes,
        pos: MAGIC.len(),
    };
    let snapshots = cur.u32("num_snapshots")? as usize;
    let n = cur.u32("num_tokens")? as usize;
    let d = cur.u32("hidden_dim")? as usize;
    let dtype = cur.u32("dtype_code")?;
    if dtype != DTYPE_F32 {
        return Err(Error::UnsupportedDtype(dtype));
    }
    if snapshots < 2 || n < 1 || d < 1 {
        return Err(Error::Shape(format!(
            "header declares {snapshots} snapshots, {n} tokens, dim {d}"
        )));
    }

    // each token record needs at least its length prefix
    if cur.remaining() / 4 < n {
        return Err(Error::Truncated(format!("token table for {n} tokens")));
    }
    let mut tokens = Vec::with_capacity(n);
    for i in 0..n {
        let len = cur.u32("token length")? as usize;
        let raw = cur.take(len, "token bytes")?;
        let token = std::str::from_utf8(raw).map_err(|_| Error::InvalidUtf8(i))?;
        tokens.push(token.to_owned());
    }

    let count = snapshots
        .checked_mul(n)
        .and_then(|x| x.checked_mul(d))
        .ok_or_else(|| Error::Truncated("activation count overflows".into()))?;
    let byte_len = count
        .checked_mul(4)
        .ok_or_else(|| Error::Truncated("activation byte length overflows".into()))?;
    let raw = cur.take(byte_len, "activations")?;
    let values: Vec<f32> = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let activations = Array3::from_shape_vec((snapshots, n, d), values)
        .map_err(|e| Error::Shape(e.to_string()))?;
    check_finite(&activations)?;

    let meta_len = cur.u32("metadata length")? as usize;
    let meta_raw = cur.take(meta_len, "metadata")?;
    let metadata = if meta_len == 0 {
        None
    } else {
        let text = std::str::from_utf8(meta_raw)
            .map_err(|_| Error::InvalidMetadata("not valid UTF-8".into()))?;
        match serde_json::from_str::<Value>(text) {
            Ok(Value::Object(map)) => Some(map),
            Ok(_) => return Err(Error::InvalidMetadata("not a JSON object".into())),
            Err(e) => return Err(Error::InvalidMetadata(e.to_string())),
        }
    };
    if cur.remaining() != 0 {
        return Err(Error::TrailingBytes(cur.remaining()));
    }

    HiddenStateDump::new(tokens, activations, metadata)
}

pub fn read_dump(path: impl AsRef<Path>) -> Result<HiddenStateDump> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

/// Writes the dump through a sibling temporary file and a rename, so a failed
/// write never leaves a half-written dump at `path`.
pub fn write_dump(dump: &HiddenStateDump, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(dump)?;
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
