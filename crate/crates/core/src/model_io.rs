//! Versioned binary container for trained hash functions.
//!
//! Layout, little-endian:
//!
//! ```text
//! "BDNN" | version: u32 | tag_len: u8 | tag (UH, SH or ITQ)
//!        | hash_len: u8 | config hash (ASCII hex)
//!        | n: u32 | n layer sizes: u32 | n activations: u8 (0 identity, 1 sigmoid)
//!        | per layer l = 1..n-1: W⁽ˡ⁾ row-major f64, then c⁽ˡ⁾ f64
//! ```
//!
//! An ITQ model is stored as the three-layer identity network
//! `D → L → L` with `W⁽¹⁾ = Pᵀ`, `c⁽¹⁾ = −Pᵀμ`, `W⁽²⁾ = Rᵀ` and `c⁽²⁾ = 0`.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::codes::BinaryCodes;
use crate::error::{Error, Result};
use crate::hashnet::{self, Activation, Mode, NetConfig, NetParams};
use crate::itq::{self, ItqModel};
use crate::numerics::Mat;

pub const MAGIC: &[u8; 4] = b"BDNN";
pub const VERSION: u32 = 1;
pub const ITQ_TAG: &str = "ITQ";

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Net { config: NetConfig, params: NetParams },
    Itq(ItqModel),
}

impl Model {
    pub fn tag(&self) -> &'static str {
        match self {
            Model::Net { config, .. } => config.mode().tag(),
            Model::Itq(_) => ITQ_TAG,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Model::Net { config, .. } => config.input_dim(),
            Model::Itq(m) => m.dim(),
        }
    }

    pub fn bits(&self) -> usize {
        match self {
            Model::Net { config, .. } => config.bits(),
            Model::Itq(m) => m.bits(),
        }
    }

    /// Binary codes for the columns of `x`.
    pub fn encode(&self, x: &Mat) -> Result<BinaryCodes> {
        if x.rows() != self.input_dim() {
            return Err(Error::validation(format!(
                "model expects {}-dimensional input, data has dimension {}",
                self.input_dim(),
                x.rows()
            )));
        }
        match self {
            Model::Net { config, params } => hashnet::encode(params, config, x),
            Model::Itq(m) => itq::itq_encode(m, x),
        }
    }
}

/// A model together with the hash of the configuration that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct SavedModel {
    pub model: Model,
    pub config_hash: String,
}

fn layers_of(model: &Model) -> (Vec<usize>, Vec<Activation>, Vec<Mat>, Vec<Vec<f64>>) {
    match model {
        Model::Net { config, params } => (
            config.layer_sizes().to_vec(),
            config.activations().to_vec(),
            params.weights.clone(),
            params.biases.clone(),
        ),
        Model::Itq(m) => {
            let (d, l) = (m.dim(), m.bits());
            (
                vec![d, l, l],
                vec![Activation::Identity; 3],
                vec![m.projection.transpose(), m.rotation.transpose()],
                vec![m.offset.clone(), vec![0.0; l]],
            )
        }
    }
}

fn short_string(w: &mut impl Write, s: &str) -> Result<()> {
    let len = u8::try_from(s.len()).map_err(|_| Error::validation("string field longer than 255 bytes"))?;
    w.write_all(&[len])?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

pub fn write_model(saved: &SavedModel, w: &mut impl Write) -> Result<()> {
    let (sizes, acts, weights, biases) = layers_of(&saved.model);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    short_string(w, saved.model.tag())?;
    short_string(w, &saved.config_hash)?;
    w.write_all(&(sizes.len() as u32).to_le_bytes())?;
    for &s in &sizes {
        w.write_all(&(s as u32).to_le_bytes())?;
    }
    for a in &acts {
        w.write_all(&[match a {
            Activation::Identity => 0,
            Activation::Sigmoid => 1,
        }])?;
    }
    for (wl, cl) in weights.iter().zip(&biases) {
        for v in wl.as_slice().iter().chain(cl) {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::format(self.pos as u64, format!("truncated while reading {what}")));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let n = self.u8(what)? as usize;
        let at = self.pos as u64;
        String::from_utf8(self.take(n, what)?.to_vec())
            .map_err(|_| Error::format(at, format!("{what} is not valid UTF-8")))
    }

    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let at = self.pos as u64;
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::format(at, "size overflow"))?, what)?;
        let v: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::format(at, format!("non-finite value in {what}")));
        }
        Ok(v)
    }
}

pub fn read_model(buf: &[u8]) -> Result<SavedModel> {
    let mut cur = Cursor { buf, pos: 0 };
    if cur.take(4, "magic")? != MAGIC {
        return Err(Error::format(0, "missing BDNN magic"));
    }
    let version = cur.u32("version")?;
    if version != VERSION {
        return Err(Error::format(4, format!("unsupported model version {version}")));
    }
    let tag_at = cur.pos as u64;
    let tag = cur.string("mode tag")?;
    let config_hash = cur.string("config hash")?;
    let n_at = cur.pos as u64;
    let n = cur.u32("layer count")? as usize;
    if !(2..=64).contains(&n) {
        return Err(Error::format(n_at, format!("implausible layer count {n}")));
    }
    let mut sizes = Vec::with_capacity(n);
    for _ in 0..n {
        sizes.push(cur.u32("layer size")? as usize);
    }
    let acts_at = cur.pos as u64;
    let mut acts = Vec::with_capacity(n);
    for _ in 0..n {
        acts.push(match cur.u8("activation")? {
            0 => Activation::Identity,
            1 => Activation::Sigmoid,
            a => return Err(Error::format(cur.pos as u64 - 1, format!("unknown activation code {a}"))),
        });
    }
    let mut weights = Vec::with_capacity(n - 1);
    let mut biases = Vec::with_capacity(n - 1);
    for l in 0..n - 1 {
        let (rows, cols) = (sizes[l + 1], sizes[l]);
        let w = cur.f64s(rows * cols, "weights")?;
        weights.push(Mat::from_vec(rows, cols, w).map_err(|e| Error::format(cur.pos as u64, e.to_string()))?);
        biases.push(cur.f64s(rows, "biases")?);
    }
    if cur.pos != buf.len() {
        return Err(Error::format(cur.pos as u64, "trailing bytes after model"));
    }

    let model = match tag.as_str() {
        ITQ_TAG => {
            if n != 3 || sizes[1] != sizes[2] || acts.iter().any(|&a| a != Activation::Identity) {
                return Err(Error::format(n_at, "ITQ model must be an identity network D → L → L"));
            }
            Model::Itq(ItqModel {
                projection: weights[0].transpose(),
                offset: biases[0].clone(),
                rotation: weights[1].transpose(),
            })
        }
        "UH" | "SH" => {
            let mode = if tag == "UH" { Mode::Unsupervised } else { Mode::Supervised };
            let config = NetConfig::new(mode, sizes).map_err(|e| Error::format(n_at, e.to_string()))?;
            if config.activations() != acts.as_slice() {
                return Err(Error::format(acts_at, "activations do not match the network mode"));
            }
            let params = NetParams { weights, biases };
            params.check(&config).map_err(|e| Error::format(n_at, e.to_string()))?;
            Model::Net { config, params }
        }
        other => return Err(Error::format(tag_at, format!("unknown mode tag {other:?}"))),
    };
    Ok(SavedModel { model, config_hash })
}

pub fn save_model(saved: &SavedModel, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_model(saved, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<SavedModel> {
    let mut buf = Vec::new();
    File::open(path)?.read_to_end(&mut buf)?;
    read_model(&buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn net(mode: Mode, sizes: Vec<usize>) -> Model {
        let config = NetConfig::new(mode, sizes).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let flat: Vec<f64> = (0..config.param_count()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let params = NetParams::from_flat(&config, &flat).unwrap();
        Model::Net { config, params }
    }

    fn round_trip(model: Model) {
        let saved = SavedModel {
            model,
            config_hash: "0123abcd".into(),
        };
        let mut buf = Vec::new();
        write_model(&saved, &mut buf).unwrap();
        assert_eq!(read_model(&buf).unwrap(), saved);
        for cut in [3, 9, buf.len() - 1] {
            assert!(matches!(read_model(&buf[..cut]), Err(Error::Format { .. })));
        }
    }

    #[test]
    fn networks_round_trip() {
        round_trip(net(Mode::Unsupervised, vec![5, 4, 2, 5]));
        round_trip(net(Mode::Supervised, vec![6, 3, 2]));
    }

    #[test]
    fn itq_round_trips_and_encodes_identically() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Mat::from_fn(5, 60, |_, _| rng.random_range(-1.0..1.0));
        let t = itq::itq_train(&x, 3, 10, 1).unwrap();
        let model = Model::Itq(t.model);
        round_trip(model.clone());
        assert_eq!(model.encode(&x).unwrap(), t.codes);
    }

    #[test]
    fn bad_headers_are_format_errors() {
        let saved = SavedModel {
            model: net(Mode::Supervised, vec![3, 2]),
            config_hash: String::new(),
        };
        let mut buf = Vec::new();
        write_model(&saved, &mut buf).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_model(&bad), Err(Error::Format { offset: 0, .. })));
        let mut bad = buf.clone();
        bad[4] = 9;
        assert!(matches!(read_model(&bad), Err(Error::Format { offset: 4, .. })));
        let mut bad = buf.clone();
        bad[9] = b'Q';
        assert!(read_model(&bad).is_err());
        let mut long = buf.clone();
        long.push(0);
        assert!(read_model(&long).is_err());
    }

    #[test]
    fn encode_checks_dimension() {
        let m = net(Mode::Supervised, vec![4, 2]);
        let err = m.encode(&Mat::zeros(3, 2)).unwrap_err();
        assert!(err.to_string().contains('4') && err.to_string().contains('3'));
    }
}
