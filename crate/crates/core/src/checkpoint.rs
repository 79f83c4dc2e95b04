//! Single-file checkpoints.
//!
//! Layout: the magic `RPULSTM1`, a little-endian `u64` header length, the
//! UTF-8 JSON header, the raw little-endian `f64` arrays of every tile in
//! header order (`w`, then for analog tiles `dw_plus`, `dw_minus`, `w_max`,
//! `w_min`), and finally a little-endian CRC-32 of everything between the
//! magic and the checksum.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::device::{DeviceArray, RpuConfig};
use crate::error::{Error, Result};
use crate::lstm::{LstmNetwork, LstmShape, NetworkOptions};
use crate::matrix::Matrix;
use crate::rng::RngState;
use crate::tile::{AnalogTile, TileMode};
use crate::train::{TrainConfig, TrainerState};

pub const MAGIC: &[u8; 8] = b"RPULSTM1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TileHeader {
    rows: usize,
    cols: usize,
    mode: TileMode,
    arrays: Vec<String>,
    rng: Option<RngState>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    version: u32,
    shape: LstmShape,
    options: NetworkOptions,
    seed: u64,
    /// Device configuration of the analog tiles; absent in fp mode.
    rpu: Option<RpuConfig>,
    vocab: Vec<char>,
    training: TrainConfig,
    state: TrainerState,
    dropout_rng: RngState,
    tiles: Vec<TileHeader>,
}

/// Everything needed to continue a run.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub network: LstmNetwork,
    pub training: TrainConfig,
    pub state: TrainerState,
    pub vocab: Vec<char>,
}

impl Checkpoint {
    /// Fails if the stored network does not have `shape`.
    pub fn expect_shape(&self, shape: &LstmShape) -> Result<()> {
        if self.network.shape() != shape {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {:?}, configuration asks for {shape:?}",
                self.network.shape()
            )));
        }
        Ok(())
    }
}

const ANALOG_ARRAYS: [&str; 5] = ["w", "dw_plus", "dw_minus", "w_max", "w_min"];

fn tile_arrays(tile: &AnalogTile) -> Vec<&Matrix> {
    match tile.devices() {
        Some(d) => vec![tile.weights(), &d.dw_plus, &d.dw_minus, &d.w_max, &d.w_min],
        None => vec![tile.weights()],
    }
}

pub fn to_bytes(net: &LstmNetwork, training: &TrainConfig, state: &TrainerState, vocab: &[char]) -> Result<Vec<u8>> {
    let tiles = net
        .tiles()
        .iter()
        .map(|t| TileHeader {
            rows: t.rows(),
            cols: t.cols(),
            mode: t.mode(),
            arrays: ANALOG_ARRAYS[..tile_arrays(t).len()].iter().map(|s| s.to_string()).collect(),
            rng: (t.mode() == TileMode::Analog).then(|| RngState::capture(t.rng())),
        })
        .collect();
    let header = Header {
        version: FORMAT_VERSION,
        shape: *net.shape(),
        options: net.options().clone(),
        seed: net.seed(),
        rpu: net
            .tiles()
            .iter()
            .find(|t| t.mode() == TileMode::Analog)
            .map(|t| t.config().clone()),
        vocab: vocab.to_vec(),
        training: training.clone(),
        state: state.clone(),
        dropout_rng: RngState::capture(net.dropout_rng()),
        tiles,
    };
    let json = serde_json::to_vec(&header)?;
    let floats: usize = net.tiles().iter().flat_map(tile_arrays).map(Matrix::len).sum();
    let mut out = Vec::with_capacity(MAGIC.len() + 8 + json.len() + 8 * floats + 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for m in net.tiles().iter().flat_map(tile_arrays) {
        for v in m.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out[MAGIC.len()..]);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint("payload truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> Result<Matrix> {
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::Checkpoint("array size overflow".into()))?;
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("array size overflow".into()))?)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Matrix::from_vec(rows, cols, data)
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < MAGIC.len() + 8 + 4 || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
    }
    let body_end = bytes.len() - 4;
    let stored = u32::from_le_bytes(bytes[body_end..].try_into().expect("4 bytes"));
    let computed = crc32fast::hash(&bytes[MAGIC.len()..body_end]);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }
    let mut r = Reader {
        bytes: &bytes[..body_end],
        pos: MAGIC.len(),
    };
    let len = u64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
    let len = usize::try_from(len).map_err(|_| Error::Checkpoint("header length overflow".into()))?;
    let version: serde_json::Value = serde_json::from_slice(r.take(len)?)?;
    match version.get("version").and_then(|v| v.as_u64()) {
        Some(v) if v == FORMAT_VERSION as u64 => {}
        Some(v) => return Err(Error::Checkpoint(format!("unsupported version {v}, expected {FORMAT_VERSION}"))),
        None => return Err(Error::Checkpoint("header has no version".into())),
    }
    let header: Header = serde_json::from_value(version)?;
    let expected = header.shape.tile_shapes();
    if header.tiles.len() != expected.len() {
        return Err(Error::Checkpoint(format!(
            "{} tiles stored for a network of {}",
            header.tiles.len(),
            expected.len()
        )));
    }
    if header.vocab.len() != header.shape.vocab {
        return Err(Error::Checkpoint(format!(
            "vocabulary of {} characters for a head of {}",
            header.vocab.len(),
            header.shape.vocab
        )));
    }
    let mut tiles = Vec::with_capacity(header.tiles.len());
    for (k, (th, &(rows, cols))) in header.tiles.iter().zip(&expected).enumerate() {
        if (th.rows, th.cols) != (rows, cols) || th.mode != header.options.mode {
            return Err(Error::Checkpoint(format!(
                "tile {k} stored as {}x{} ({}), network expects {rows}x{cols} ({})",
                th.rows,
                th.cols,
                th.mode.name(),
                header.options.mode.name()
            )));
        }
        let names: &[&str] = match th.mode {
            TileMode::Analog => &ANALOG_ARRAYS,
            TileMode::Fp => &ANALOG_ARRAYS[..1],
        };
        if th.arrays != names {
            return Err(Error::Checkpoint(format!("tile {k} declares arrays {:?}", th.arrays)));
        }
        let w = r.matrix(rows, cols)?;
        let tile = match th.mode {
            TileMode::Fp => AnalogTile::new_fp(w),
            TileMode::Analog => {
                let devices = DeviceArray::from_parts(
                    r.matrix(rows, cols)?,
                    r.matrix(rows, cols)?,
                    r.matrix(rows, cols)?,
                    r.matrix(rows, cols)?,
                )?;
                let rpu = header
                    .rpu
                    .clone()
                    .ok_or_else(|| Error::Checkpoint("analog tiles without device configuration".into()))?;
                let rng = th
                    .rng
                    .as_ref()
                    .ok_or_else(|| Error::Checkpoint(format!("tile {k} has no rng state")))?
                    .restore()?;
                let tile = AnalogTile::new_analog(w.clone(), devices, rpu, rng)?;
                if tile.weights() != &w {
                    return Err(Error::Checkpoint(format!("tile {k} weights lie outside device bounds")));
                }
                tile
            }
        };
        tiles.push(tile);
    }
    if r.pos != body_end {
        return Err(Error::Checkpoint(format!("{} unexpected trailing bytes", body_end - r.pos)));
    }
    let network = LstmNetwork::from_parts(
        header.shape,
        header.options,
        header.seed,
        tiles,
        header.dropout_rng.restore()?,
    )?;
    Ok(Checkpoint {
        network,
        training: header.training,
        state: header.state,
        vocab: header.vocab,
    })
}

/// Writes through a temporary file in the same directory and renames it into
/// place.
pub fn save_checkpoint(
    path: impl AsRef<Path>,
    net: &LstmNetwork,
    training: &TrainConfig,
    state: &TrainerState,
    vocab: &[char],
) -> Result<()> {
    let path = path.as_ref();
    let bytes = to_bytes(net, training, state, vocab)?;
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lstm::HiddenState;

    fn net(mode: TileMode) -> LstmNetwork {
        let opts = NetworkOptions {
            mode,
            dropout_p: 0.2,
            ..NetworkOptions::default()
        };
        LstmNetwork::new(LstmShape::char_model(3, 4, 2), opts, &RpuConfig::baseline(), 11).unwrap()
    }

    fn bytes(n: &LstmNetwork) -> Vec<u8> {
        to_bytes(n, &TrainConfig::default(), &TrainerState::default(), &['a', 'b', 'c']).unwrap()
    }

    #[test]
    fn round_trip_is_byte_exact() {
        for mode in [TileMode::Analog, TileMode::Fp] {
            let mut n = net(mode);
            let h = HiddenState::zeros(n.shape());
            n.window_pass(&[0, 1, 2], &[1, 2, 0], &h, true, 0.05).unwrap();
            let b = bytes(&n);
            let back = from_bytes(&b).unwrap();
            assert_eq!(bytes(&back.network), b);
            assert_eq!(back.vocab, vec!['a', 'b', 'c']);
        }
    }

    #[test]
    fn layout() {
        let b = bytes(&net(TileMode::Analog));
        assert_eq!(&b[..8], MAGIC);
        let len = u64::from_le_bytes(b[8..16].try_into().unwrap()) as usize;
        let floats: usize = LstmShape::char_model(3, 4, 2)
            .tile_shapes()
            .iter()
            .map(|(r, c)| 5 * r * c)
            .sum();
        assert_eq!(b.len(), 8 + 8 + len + 8 * floats + 4);
        let crc = u32::from_le_bytes(b[b.len() - 4..].try_into().unwrap());
        assert_eq!(crc, crc32fast::hash(&b[8..b.len() - 4]));
    }

    #[test]
    fn corruption_detected() {
        let b = bytes(&net(TileMode::Analog));
        for pos in [10, 40, b.len() / 2, b.len() - 10, b.len() - 1] {
            let mut t = b.clone();
            t[pos] ^= 0x20;
            assert!(matches!(from_bytes(&t), Err(Error::Checksum { .. })), "byte {pos}");
        }
        let mut t = b.clone();
        t[0] = b'X';
        assert!(matches!(from_bytes(&t), Err(Error::Checkpoint(_))));
        assert!(from_bytes(&b[..b.len() - 9]).is_err());
    }

    fn reseal(mut b: Vec<u8>, edit: impl FnOnce(&mut serde_json::Value)) -> Vec<u8> {
        let len = u64::from_le_bytes(b[8..16].try_into().unwrap()) as usize;
        let mut header: serde_json::Value = serde_json::from_slice(&b[16..16 + len]).unwrap();
        edit(&mut header);
        let json = serde_json::to_vec(&header).unwrap();
        let tail = b[16 + len..b.len() - 4].to_vec();
        b.truncate(8);
        b.extend_from_slice(&(json.len() as u64).to_le_bytes());
        b.extend_from_slice(&json);
        b.extend_from_slice(&tail);
        let crc = crc32fast::hash(&b[8..]);
        b.extend_from_slice(&crc.to_le_bytes());
        b
    }

    #[test]
    fn version_and_shape_checked() {
        let b = bytes(&net(TileMode::Fp));
        let v2 = reseal(b.clone(), |h| h["version"] = 2.into());
        let err = from_bytes(&v2).unwrap_err().to_string();
        assert!(err.contains("version"), "{err}");
        let wide = reseal(b.clone(), |h| h["shape"]["hidden"] = 5.into());
        assert!(from_bytes(&wide).is_err());
        let ok = from_bytes(&reseal(b, |_| {})).unwrap();
        assert!(ok.expect_shape(&LstmShape::char_model(3, 4, 2)).is_ok());
        assert!(ok.expect_shape(&LstmShape::char_model(3, 4, 1)).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.ckpt");
        let n = net(TileMode::Analog);
        save_checkpoint(&p, &n, &TrainConfig::default(), &TrainerState::default(), &['a', 'b', 'c']).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), bytes(&n));
        assert!(load_checkpoint(dir.path().join("none")).is_err());
    }
}
