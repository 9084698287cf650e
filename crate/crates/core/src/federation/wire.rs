//! Byte-exact payload formats.
//!
//! Dictionaries: header `{"FDDL", version u16, K u16, n u32, d u32, n_c u32}`
//! then, per atom, `n·d` feature scalars followed by `n·n_c` label scalars.
//! Classifiers: header `{"FDCL", version u16, reserved u16, n_c u32, d u32}`
//! then the `n_c·d` weights and the `n_c` biases. All scalars are
//! little-endian `f32`, row-major.

use ndarray::{Array1, Array2};

use crate::classifier::LinearClassifier;
use crate::dictionary::Dictionary;
use crate::error::{Error, Result};
use crate::ot::LabeledMeasure;

pub const DICTIONARY_MAGIC: &[u8; 4] = b"FDDL";
pub const CLASSIFIER_MAGIC: &[u8; 4] = b"FDCL";
pub const FORMAT_VERSION: u16 = 1;
pub const DICTIONARY_HEADER_BYTES: usize = 20;
pub const CLASSIFIER_HEADER_BYTES: usize = 16;
pub const SCALAR_BYTES: usize = 4;

fn push_scalars<'a>(out: &mut Vec<u8>, values: impl IntoIterator<Item = &'a f64>) {
    for &v in values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(len)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Wire(format!("truncated payload at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> Result<Array2<f64>> {
        let count = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::Wire("block size overflows".into()))?;
        let raw = self.take(count.checked_mul(SCALAR_BYTES).ok_or_else(|| {
            Error::Wire("block size overflows".into())
        })?)?;
        let values: Vec<f64> = raw
            .chunks_exact(SCALAR_BYTES)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Wire("non-finite scalar in payload".into()));
        }
        Ok(Array2::from_shape_vec((rows, cols), values).expect("sized above"))
    }

    fn magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        let got = self.take(4)?;
        if got != expected {
            return Err(Error::Wire(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(got),
                String::from_utf8_lossy(expected)
            )));
        }
        let version = self.u16()?;
        if version != FORMAT_VERSION {
            return Err(Error::Wire(format!("unsupported version {version}")));
        }
        Ok(())
    }

    fn finish(self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::Wire(format!(
                "{} trailing bytes",
                self.bytes.len() - self.pos
            )));
        }
        Ok(())
    }
}

fn header_field<T: TryFrom<usize>>(name: &str, value: usize) -> Result<T> {
    T::try_from(value).map_err(|_| Error::Wire(format!("{name} = {value} does not fit the header")))
}

/// Serializes atom features and labels. Nothing else about a client or its
/// coordinates has a place in this layout.
pub fn encode_dictionary(dict: &Dictionary) -> Result<Vec<u8>> {
    let shape = dict.shape();
    let mut out = Vec::with_capacity(
        DICTIONARY_HEADER_BYTES + shape.parameter_count() * SCALAR_BYTES,
    );
    out.extend_from_slice(DICTIONARY_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&header_field::<u16>("K", shape.atoms)?.to_le_bytes());
    for (name, v) in [
        ("n", shape.atom_size),
        ("d", shape.dim),
        ("n_c", shape.n_classes),
    ] {
        out.extend_from_slice(&header_field::<u32>(name, v)?.to_le_bytes());
    }
    for atom in dict.atoms() {
        push_scalars(&mut out, atom.features().iter());
        push_scalars(&mut out, atom.labels().expect("atoms are labeled").iter());
    }
    Ok(out)
}

pub fn decode_dictionary(bytes: &[u8]) -> Result<Dictionary> {
    let mut r = Reader { bytes, pos: 0 };
    r.magic(DICTIONARY_MAGIC)?;
    let k = r.u16()? as usize;
    let (n, d, nc) = (r.u32()?, r.u32()?, r.u32()?);
    if k == 0 || n == 0 || d == 0 || nc == 0 {
        return Err(Error::Wire(format!("degenerate shape K={k} n={n} d={d} n_c={nc}")));
    }
    let mut atoms = Vec::with_capacity(k);
    for _ in 0..k {
        let x = r.matrix(n, d)?;
        let y = r.matrix(n, nc)?;
        atoms.push(LabeledMeasure::from_parts_unchecked(x, Some(y)));
    }
    r.finish()?;
    Dictionary::from_atoms_unchecked(atoms)
}

/// The dictionary as a receiver sees it after one encode/decode trip.
pub fn at_wire_precision(dict: &Dictionary) -> Result<Dictionary> {
    decode_dictionary(&encode_dictionary(dict)?)
}

pub fn encode_classifier(c: &LinearClassifier) -> Result<Vec<u8>> {
    let (nc, d) = c.weights.dim();
    let mut out = Vec::with_capacity(CLASSIFIER_HEADER_BYTES + (nc * d + nc) * SCALAR_BYTES);
    out.extend_from_slice(CLASSIFIER_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&0u16.to_le_bytes());
    out.extend_from_slice(&header_field::<u32>("n_c", nc)?.to_le_bytes());
    out.extend_from_slice(&header_field::<u32>("d", d)?.to_le_bytes());
    push_scalars(&mut out, c.weights.iter());
    push_scalars(&mut out, c.bias.iter());
    Ok(out)
}

pub fn decode_classifier(bytes: &[u8]) -> Result<LinearClassifier> {
    let mut r = Reader { bytes, pos: 0 };
    r.magic(CLASSIFIER_MAGIC)?;
    r.u16()?;
    let (nc, d) = (r.u32()?, r.u32()?);
    if nc == 0 || d == 0 {
        return Err(Error::Wire(format!("degenerate classifier n_c={nc} d={d}")));
    }
    let weights = r.matrix(nc, d)?;
    let bias: Array1<f64> = r.matrix(1, nc)?.remove_axis(ndarray::Axis(0));
    r.finish()?;
    Ok(LinearClassifier { weights, bias })
}

/// Whether `values` occur as a contiguous run of little-endian `f32` or
/// `f64` scalars anywhere in `payload`, at any byte offset.
pub fn payload_contains_scalars(payload: &[u8], values: &[f64]) -> bool {
    if values.is_empty() {
        return false;
    }
    let as_f32: Vec<u8> = values.iter().flat_map(|&v| (v as f32).to_le_bytes()).collect();
    let as_f64: Vec<u8> = values.iter().flat_map(|&v| v.to_le_bytes()).collect();
    [as_f32, as_f64]
        .iter()
        .any(|needle| payload.windows(needle.len()).any(|w| w == needle.as_slice()))
}
