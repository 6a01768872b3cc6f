//! Binary trial files.
//!
//! Layout (little-endian): magic `LGGT`, `u32` version, `u32` subject id,
//! `u32` trial id, `f64` sample rate, `u32` channel count, `u64` sample count,
//! `u32` rating count, then per rating a `u16` name length, UTF-8 name and
//! `f64` value, then `channels * samples` raw `f64` in channel-major order.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use super::{io_err, DataError, TrialSample, DEFAULT_THRESHOLD};
use crate::binio::{checked_numel, ReadFail, Reader, Writer};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"LGGT";
const VERSION: u32 = 1;

impl From<ReadFail> for DataError {
    fn from(f: ReadFail) -> Self {
        match f {
            ReadFail::Truncated(s) => DataError::Truncated(s),
            ReadFail::Overflow(s) => DataError::ExtentOverflow(s),
            ReadFail::Utf8(s) => DataError::Utf8(s),
        }
    }
}

pub fn encode_trial(trial: &TrialSample) -> Result<Vec<u8>, DataError> {
    trial.validate()?;
    let mut w = Writer::default();
    w.bytes(MAGIC);
    w.u32(VERSION);
    w.u32(trial.subject_id);
    w.u32(trial.trial_id);
    w.f64(trial.sample_rate);
    w.u32(trial.channels() as u32);
    w.u64(trial.samples() as u64);
    w.u32(trial.ratings.len() as u32);
    for (name, &v) in &trial.ratings {
        let len = u16::try_from(name.len()).map_err(|_| DataError::Invalid(format!("rating name `{name}` too long")))?;
        w.u16(len);
        w.bytes(name.as_bytes());
        w.f64(v);
    }
    w.f64s(trial.signal.data());
    Ok(w.buf)
}

/// Parses a trial; labels are derived from ratings at the default threshold.
pub fn decode_trial(bytes: &[u8]) -> Result<TrialSample, DataError> {
    let mut r = Reader::new(bytes);
    if r.take(4, "magic").map_err(|_| DataError::BadMagic)? != MAGIC {
        return Err(DataError::BadMagic);
    }
    let version = r.u32("header")?;
    if version != VERSION {
        return Err(DataError::Version(version));
    }
    let subject_id = r.u32("header")?;
    let trial_id = r.u32("header")?;
    let sample_rate = r.f64("header")?;
    let channels = r.u32("header")? as u64;
    let samples = r.u64("header")?;
    let n_ratings = r.u32("header")?;
    let mut ratings = BTreeMap::new();
    for _ in 0..n_ratings {
        let len = r.u16("ratings")? as usize;
        let name = r.string(len, "ratings")?;
        ratings.insert(name, r.f64("ratings")?);
    }
    let numel = checked_numel(&[channels, samples]).ok_or(DataError::ExtentOverflow("signal"))?;
    let data = r.f64s(numel, "signal")?;
    if !r.is_at_end() {
        return Err(DataError::TrailingBytes);
    }
    let signal = Tensor::new(vec![channels as usize, samples as usize], data)
        .map_err(|e| DataError::Invalid(e.to_string()))?;
    let mut trial = TrialSample {
        signal,
        sample_rate,
        subject_id,
        trial_id,
        ratings,
        labels: BTreeMap::new(),
    };
    trial.validate()?;
    trial.binarize(DEFAULT_THRESHOLD)?;
    Ok(trial)
}

pub fn write_trial_file(trial: &TrialSample, path: &Path) -> Result<(), DataError> {
    let bytes = encode_trial(trial)?;
    std::fs::write(path, bytes).map_err(io_err(path))
}

/// Reads a trial file. The magic is checked before the rest of the file is read.
pub fn read_trial_file(path: &Path) -> Result<TrialSample, DataError> {
    let mut file = std::fs::File::open(path).map_err(io_err(path))?;
    let mut magic = [0u8; 4];
    file.read_exact(&mut magic).map_err(|_| DataError::BadMagic)?;
    if &magic != MAGIC {
        return Err(DataError::BadMagic);
    }
    let mut bytes = magic.to_vec();
    file.read_to_end(&mut bytes).map_err(io_err(path))?;
    decode_trial(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sample(channels: usize, samples: usize) -> TrialSample {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let data = (0..channels * samples).map(|_| rng.random_range(-1e-4..1e-4)).collect();
        let mut t = TrialSample {
            signal: Tensor::new(vec![channels, samples], data).unwrap(),
            sample_rate: 128.0,
            subject_id: 3,
            trial_id: 17,
            ratings: [("arousal".to_string(), 6.5), ("valence".to_string(), 2.25)].into(),
            labels: BTreeMap::new(),
        };
        t.binarize(DEFAULT_THRESHOLD).unwrap();
        t
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let t = sample(32, 7680);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.lggt");
        write_trial_file(&t, &path).unwrap();
        let back = read_trial_file(&path).unwrap();
        assert_eq!(back, t);
        assert!(back
            .signal
            .data()
            .iter()
            .zip(t.signal.data())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn structured_errors() {
        let bytes = encode_trial(&sample(2, 10)).unwrap();
        assert!(matches!(decode_trial(&bytes[..bytes.len() - 1]), Err(DataError::Truncated("signal"))));
        assert!(matches!(decode_trial(&bytes[..20]), Err(DataError::Truncated("header"))));
        assert!(matches!(decode_trial(&bytes[..40]), Err(DataError::Truncated("ratings"))));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_trial(&bad), Err(DataError::BadMagic)));
        let mut v2 = bytes.clone();
        v2[4] = 9;
        assert!(matches!(decode_trial(&v2), Err(DataError::Version(9))));

        // channel and sample counts whose product overflows u64
        let mut huge = bytes[..24].to_vec();
        huge.extend_from_slice(&u32::MAX.to_le_bytes());
        huge.extend_from_slice(&u64::MAX.to_le_bytes());
        huge.extend_from_slice(&0u32.to_le_bytes());
        assert!(matches!(decode_trial(&huge), Err(DataError::ExtentOverflow("signal"))));
    }

    #[test]
    fn wrong_magic_file_is_rejected_early() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.lggt");
        std::fs::write(&path, b"JUNKJUNKJUNK").unwrap();
        assert!(matches!(read_trial_file(&path), Err(DataError::BadMagic)));
    }
}
