//! Model file layout (all integers and floats little-endian):
//!
//! ```text
//! magic        8 bytes  "DFMODEL\0"
//! version      u32
//! config       9 x u32  (input_channels, input_length, conv1_filters, conv1_width,
//!                        conv2_filters, conv2_width, pool_width, dense_width, classes)
//! param_count  u64
//! params       param_count x f64
//! meta_len     u64
//! meta         meta_len bytes of UTF-8 JSON (training metadata and pipeline)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use super::network::{Classifier, TrainingMeta};
use super::ModelConfig;
use crate::dataset::Pipeline;
use crate::error::{Error, Result};

pub const MODEL_MAGIC: [u8; 8] = *b"DFMODEL\0";
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct MetaBlock {
    training: TrainingMeta,
    pipeline: Option<Pipeline>,
}

pub fn write_model<W: Write>(classifier: &Classifier, mut w: W) -> Result<()> {
    let c = classifier.config();
    w.write_all(&MODEL_MAGIC)?;
    w.write_u32::<LittleEndian>(MODEL_FORMAT_VERSION)?;
    for v in [
        c.input_channels,
        c.input_length,
        c.conv1_filters,
        c.conv1_width,
        c.conv2_filters,
        c.conv2_width,
        c.pool_width,
        c.dense_width,
        c.classes,
    ] {
        let v = u32::try_from(v)
            .map_err(|_| Error::invalid("model config", "dimension exceeds u32"))?;
        w.write_u32::<LittleEndian>(v)?;
    }
    w.write_u64::<LittleEndian>(classifier.params().len() as u64)?;
    for p in classifier.params() {
        w.write_f64::<LittleEndian>(*p)?;
    }
    let meta = serde_json::to_vec(&MetaBlock {
        training: classifier.meta.clone(),
        pipeline: classifier.pipeline.clone(),
    })?;
    w.write_u64::<LittleEndian>(meta.len() as u64)?;
    w.write_all(&meta)?;
    Ok(())
}

fn truncated(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::ModelFormat("truncated file".into())
    } else {
        Error::Io(e)
    }
}

pub fn read_model<R: Read>(mut r: R) -> Result<Classifier> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(truncated)?;
    if magic != MODEL_MAGIC {
        return Err(Error::ModelFormat("bad magic bytes".into()));
    }
    let version = r.read_u32::<LittleEndian>().map_err(truncated)?;
    if version != MODEL_FORMAT_VERSION {
        return Err(Error::Version {
            what: "model",
            found: version,
            expected: MODEL_FORMAT_VERSION,
        });
    }
    let mut dims = [0usize; 9];
    for d in &mut dims {
        *d = r.read_u32::<LittleEndian>().map_err(truncated)? as usize;
    }
    let config = ModelConfig {
        input_channels: dims[0],
        input_length: dims[1],
        conv1_filters: dims[2],
        conv1_width: dims[3],
        conv2_filters: dims[4],
        conv2_width: dims[5],
        pool_width: dims[6],
        dense_width: dims[7],
        classes: dims[8],
    };
    config
        .validate()
        .map_err(|e| Error::ModelFormat(format!("invalid config block: {e}")))?;
    let count = r.read_u64::<LittleEndian>().map_err(truncated)? as usize;
    if count != config.layout().total {
        return Err(Error::ModelFormat(format!(
            "parameter count {count} does not match config ({})",
            config.layout().total
        )));
    }
    let mut params = vec![0.0; count];
    r.read_f64_into::<LittleEndian>(&mut params)
        .map_err(truncated)?;
    let meta_len = r.read_u64::<LittleEndian>().map_err(truncated)? as usize;
    let mut meta = Vec::new();
    r.by_ref().take(meta_len as u64).read_to_end(&mut meta)?;
    if meta.len() != meta_len {
        return Err(Error::ModelFormat("truncated file".into()));
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::ModelFormat("trailing bytes after metadata".into()));
    }
    let meta: MetaBlock = serde_json::from_slice(&meta)
        .map_err(|e| Error::ModelFormat(format!("bad metadata block: {e}")))?;
    let mut classifier = Classifier::from_params(config, params)?;
    classifier.meta = meta.training;
    classifier.pipeline = meta.pipeline;
    Ok(classifier)
}

pub fn save(classifier: &Classifier, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_model(classifier, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Classifier> {
    read_model(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{train, Sample, TrainConfig};

    fn trained() -> Classifier {
        let config = ModelConfig {
            conv1_filters: 3,
            conv2_filters: 3,
            dense_width: 4,
            ..ModelConfig::desk(2, 8)
        };
        let data: Vec<Sample> = (0..6)
            .map(|i| Sample {
                input: (0..16)
                    .map(|j| ((i * 7 + j * 3) % 5) as f64 / 5.0)
                    .collect(),
                label: i % 2,
            })
            .collect();
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 3,
            seed: 3,
            ..TrainConfig::default()
        };
        train(config, &cfg, &data).unwrap()
    }

    fn bytes(c: &Classifier) -> Vec<u8> {
        let mut buf = Vec::new();
        write_model(c, &mut buf).unwrap();
        buf
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let c = trained();
        let back = read_model(&bytes(&c)[..]).unwrap();
        assert_eq!(back, c);
        let x: Vec<f64> = (0..16).map(|i| i as f64 * 0.1).collect();
        assert_eq!(
            back.forward(&x)
                .unwrap()
                .iter()
                .map(|v| v.to_bits())
                .collect::<Vec<_>>(),
            c.forward(&x)
                .unwrap()
                .iter()
                .map(|v| v.to_bits())
                .collect::<Vec<_>>()
        );
    }

    #[test]
    fn version_mismatch_is_explicit() {
        let mut b = bytes(&trained());
        b[8..12].copy_from_slice(&99u32.to_le_bytes());
        assert!(matches!(
            read_model(&b[..]),
            Err(Error::Version { found: 99, .. })
        ));
    }

    #[test]
    fn truncation_and_garbage_are_rejected() {
        let b = bytes(&trained());
        for cut in [0, 5, 12, 40, b.len() / 2, b.len() - 1] {
            assert!(
                matches!(read_model(&b[..cut]), Err(Error::ModelFormat(_))),
                "cut {cut}"
            );
        }
        let mut extra = b.clone();
        extra.push(0);
        assert!(read_model(&extra[..]).is_err());
        let mut wrong = b;
        wrong[0] = b'X';
        assert!(matches!(read_model(&wrong[..]), Err(Error::ModelFormat(_))));
    }
}
