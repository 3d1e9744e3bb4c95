//! The `RMDB` binary dataset file.
//!
//! All integers and floats are little-endian; strings are a `u32` byte length
//! followed by UTF-8.
//!
//! ```text
//! header   "RMDB" | version u16 = 1 | d u32 | whole_bag_size u32 | num_languages u32
//!          | age vocab: u32 count, strings | gender vocab: u32 count, strings
//! sections train, validation, test, each: u32 bag count, then per bag:
//!          speaker_id string | n_real u32 | age label u16 | gender label u16
//!          | lang ids i16 x whole_bag_size | row width u32
//!          | embeddings f32 x (whole_bag_size * d), row-major
//! ```
//!
//! The per-bag row width lets a reader detect a header `d` that disagrees with
//! the stored rows. Trailing bytes after the test section are rejected.

use std::fs;
use std::io::{Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::Array2;

use super::bags::{SpeakerBag, PAD_LANG};
use super::{DatasetMeta, DatasetSplit};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"RMDB";
pub const VERSION: u16 = 1;

fn write_str(w: &mut impl Write, s: &str) -> Result<()> {
    w.write_u32::<LittleEndian>(s.len() as u32)?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn read_str(r: &mut impl Read) -> Result<String> {
    let len = r.read_u32::<LittleEndian>()? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|_| Error::Format("string is not valid UTF-8".into()))
}

fn write_vocab(w: &mut impl Write, vocab: &[String]) -> Result<()> {
    w.write_u32::<LittleEndian>(vocab.len() as u32)?;
    for s in vocab {
        write_str(w, s)?;
    }
    Ok(())
}

fn read_vocab(r: &mut impl Read) -> Result<Vec<String>> {
    let n = r.read_u32::<LittleEndian>()? as usize;
    (0..n).map(|_| read_str(r)).collect()
}

/// Encodes a split into the binary layout described in the module docs.
pub fn serialize_dataset(split: &DatasetSplit) -> Result<Vec<u8>> {
    let meta = &split.meta;
    let mut w = Vec::new();
    w.write_all(MAGIC)?;
    w.write_u16::<LittleEndian>(VERSION)?;
    w.write_u32::<LittleEndian>(meta.dim as u32)?;
    w.write_u32::<LittleEndian>(meta.whole_bag_size as u32)?;
    w.write_u32::<LittleEndian>(meta.num_languages as u32)?;
    write_vocab(&mut w, &meta.age_vocab)?;
    write_vocab(&mut w, &meta.gender_vocab)?;
    for part in [&split.train, &split.validation, &split.test] {
        w.write_u32::<LittleEndian>(part.len() as u32)?;
        for bag in part {
            if bag.embeddings.dim() != (meta.whole_bag_size, meta.dim) {
                return Err(Error::Format(format!(
                    "bag `{}` has shape {:?}, header says {:?}",
                    bag.speaker_id,
                    bag.embeddings.dim(),
                    (meta.whole_bag_size, meta.dim)
                )));
            }
            write_str(&mut w, &bag.speaker_id)?;
            w.write_u32::<LittleEndian>(bag.n_real as u32)?;
            w.write_u16::<LittleEndian>(bag.age_label)?;
            w.write_u16::<LittleEndian>(bag.gender_label)?;
            for &l in &bag.lang_ids {
                w.write_i16::<LittleEndian>(l)?;
            }
            w.write_u32::<LittleEndian>(meta.dim as u32)?;
            for &v in bag.embeddings.iter() {
                w.write_f32::<LittleEndian>(v)?;
            }
        }
    }
    Ok(w)
}

fn read_bag(r: &mut impl Read, meta: &DatasetMeta) -> Result<SpeakerBag> {
    let wbs = meta.whole_bag_size;
    let speaker_id = read_str(r)?;
    let n_real = r.read_u32::<LittleEndian>()? as usize;
    if n_real > wbs {
        return Err(Error::Format(format!("bag `{speaker_id}`: n_real {n_real} > whole_bag_size {wbs}")));
    }
    let age_label = r.read_u16::<LittleEndian>()?;
    let gender_label = r.read_u16::<LittleEndian>()?;
    if age_label as usize >= meta.age_vocab.len().max(1) || gender_label as usize >= meta.gender_vocab.len().max(1) {
        return Err(Error::Format(format!("bag `{speaker_id}`: label outside vocabulary")));
    }
    let mut lang_ids = vec![0i16; wbs];
    r.read_i16_into::<LittleEndian>(&mut lang_ids)?;
    for (i, &l) in lang_ids.iter().enumerate() {
        let ok = if i < n_real {
            l >= 0 && (l as usize) < meta.num_languages
        } else {
            l == PAD_LANG
        };
        if !ok {
            return Err(Error::Format(format!("bag `{speaker_id}`: invalid language id {l} at row {i}")));
        }
    }
    let width = r.read_u32::<LittleEndian>()? as usize;
    if width != meta.dim {
        return Err(Error::Format(format!(
            "bag `{speaker_id}`: row width {width} != header d {}",
            meta.dim
        )));
    }
    let mut values = vec![0f32; wbs * meta.dim];
    r.read_f32_into::<LittleEndian>(&mut values)?;
    let embeddings = Array2::from_shape_vec((wbs, meta.dim), values).expect("length checked");
    Ok(SpeakerBag {
        speaker_id,
        embeddings,
        mask: (0..wbs).map(|i| i < n_real).collect(),
        lang_ids,
        age_label,
        gender_label,
        n_real,
    })
}

/// Decodes a dataset from bytes.
pub fn read_dataset(bytes: &[u8]) -> Result<DatasetSplit> {
    let mut r = Cursor::new(bytes);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}, expected {MAGIC:?}")));
    }
    let version = r.read_u16::<LittleEndian>()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}, expected {VERSION}")));
    }
    let dim = r.read_u32::<LittleEndian>()? as usize;
    let whole_bag_size = r.read_u32::<LittleEndian>()? as usize;
    let num_languages = r.read_u32::<LittleEndian>()? as usize;
    let age_vocab = read_vocab(&mut r)?;
    let gender_vocab = read_vocab(&mut r)?;
    let meta = DatasetMeta {
        dim,
        whole_bag_size,
        num_languages,
        age_vocab,
        gender_vocab,
    };
    let mut parts: [Vec<SpeakerBag>; 3] = Default::default();
    for part in &mut parts {
        let n = r.read_u32::<LittleEndian>()? as usize;
        for _ in 0..n {
            part.push(read_bag(&mut r, &meta)?);
        }
    }
    if (r.position() as usize) != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after the test section",
            bytes.len() - r.position() as usize
        )));
    }
    let [train, validation, test] = parts;
    Ok(DatasetSplit {
        meta,
        train,
        validation,
        test,
    })
}

pub fn write_dataset(path: &Path, split: &DatasetSplit) -> Result<()> {
    fs::write(path, serialize_dataset(split)?)?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<DatasetSplit> {
    read_dataset(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::{synth_dataset, SynthSpec};

    fn small() -> DatasetSplit {
        let spec = SynthSpec {
            n_speakers: 30,
            dim: 3,
            bag_min: 1,
            bag_max: 4,
            whole_bag_size: 5,
            pool_size: 3,
            ..SynthSpec::default()
        };
        synth_dataset(&spec, 11).unwrap().split
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let split = small();
        let bytes = serialize_dataset(&split).unwrap();
        let back = read_dataset(&bytes).unwrap();
        assert_eq!(back, split);
        assert_eq!(serialize_dataset(&back).unwrap(), bytes);
    }

    #[test]
    fn wrong_magic_is_format_error() {
        let mut bytes = serialize_dataset(&small()).unwrap();
        bytes[0] = b'X';
        assert!(matches!(read_dataset(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn wrong_version_is_format_error() {
        let mut bytes = serialize_dataset(&small()).unwrap();
        bytes[4] = 2;
        assert!(matches!(read_dataset(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn header_dim_disagreeing_with_rows_is_format_error() {
        let mut bytes = serialize_dataset(&small()).unwrap();
        bytes[6..10].copy_from_slice(&4u32.to_le_bytes());
        assert!(matches!(read_dataset(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn truncated_file_is_io_error() {
        let bytes = serialize_dataset(&small()).unwrap();
        let err = read_dataset(&bytes[..bytes.len() - 7]).unwrap_err();
        assert!(matches!(err, Error::Io(_)), "{err}");
    }
}
