//! Model files.
//!
//! Layout (little-endian):
//! - magic `TFAM`
//! - version: u32 (1 = last-step readout; 2 = adds a readout code)
//! - layer count L: u32
//! - L + 1 dims: u32 each (input width, then every hidden width)
//! - version 2 only: readout code u32 (0 last step, 1 mean pool)
//! - parameters: f64 each, in [`ModelParams`] order

use std::fs;
use std::path::Path;

use super::{ModelDims, ModelError, ModelParams, Readout};

pub const MODEL_MAGIC: [u8; 4] = *b"TFAM";

pub fn encode(params: &ModelParams) -> Vec<u8> {
    let dims = params.dims();
    let version: u32 = match params.readout() {
        Readout::LastStep => 1,
        Readout::MeanPool => 2,
    };
    let u32_of = |n: usize| u32::try_from(n).expect("dimension fits u32");
    let mut out = Vec::with_capacity(16 + 4 * dims.hidden.len() + 8 * params.values().len());
    out.extend_from_slice(&MODEL_MAGIC);
    out.extend_from_slice(&version.to_le_bytes());
    out.extend_from_slice(&u32_of(dims.hidden.len()).to_le_bytes());
    out.extend_from_slice(&u32_of(dims.input).to_le_bytes());
    for &h in &dims.hidden {
        out.extend_from_slice(&u32_of(h).to_le_bytes());
    }
    if version == 2 {
        out.extend_from_slice(&1u32.to_le_bytes());
    }
    for v in params.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize, expected_total: usize) -> Result<&[u8], ModelError> {
        if self.bytes.len() < self.pos + n {
            return Err(ModelError::Truncated {
                expected: expected_total.max(self.pos + n),
                actual: self.bytes.len(),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.take(4, 0)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<ModelParams, ModelError> {
    let mut r = Reader { bytes, pos: 0 };
    let magic: [u8; 4] = r.take(4, 0)?.try_into().unwrap();
    if magic != MODEL_MAGIC {
        return Err(ModelError::BadMagic { expected: MODEL_MAGIC, found: magic });
    }
    let version = r.u32()?;
    if version != 1 && version != 2 {
        return Err(ModelError::Version(version));
    }
    let layers = r.u32()? as usize;
    if layers == 0 || layers > 1024 {
        return Err(ModelError::InvalidDims(format!("{layers} layers")));
    }
    let input = r.u32()? as usize;
    let hidden = (0..layers).map(|_| r.u32().map(|h| h as usize)).collect::<Result<Vec<_>, _>>()?;
    let readout = if version == 2 {
        match r.u32()? {
            0 => Readout::LastStep,
            1 => Readout::MeanPool,
            code => return Err(ModelError::InvalidDims(format!("unknown readout code {code}"))),
        }
    } else {
        Readout::LastStep
    };
    let dims = ModelDims::new(input, hidden)?;
    let count = dims.param_count();
    let expected = r.pos + 8 * count;
    let payload = r.take(8 * count, expected)?;
    let values = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    if bytes.len() != expected {
        return Err(ModelError::Shape(format!(
            "{} trailing bytes after parameters",
            bytes.len() - expected
        )));
    }
    ModelParams::from_values(dims, readout, values)
}

pub fn save_model(path: impl AsRef<Path>, params: &ModelParams) -> Result<(), ModelError> {
    let path = path.as_ref();
    fs::write(path, encode(params)).map_err(|source| ModelError::Io { path: path.to_path_buf(), source })
}

/// Loads a model file; `expected_input`, when given, must match its input width.
pub fn load_model(path: impl AsRef<Path>, expected_input: Option<usize>) -> Result<ModelParams, ModelError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| ModelError::Io { path: path.to_path_buf(), source })?;
    let params = decode(&bytes)?;
    if let Some(width) = expected_input {
        params.check_input(width)?;
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seqmodel::{init_params, predict};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn header_layout() {
        let dims = ModelDims::new(3, vec![2, 1]).unwrap();
        let bytes = encode(&init_params(&dims, Readout::LastStep, 0).unwrap());
        assert_eq!(&bytes[..4], b"TFAM");
        let words: Vec<u32> =
            bytes[4..24].chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().unwrap())).collect();
        assert_eq!(words, [1, 2, 3, 2, 1]);
        assert_eq!(bytes.len(), 24 + 8 * dims.param_count());
    }

    #[test]
    fn round_trip_preserves_predictions_bitwise() {
        let dims = ModelDims::new(5, vec![4, 3, 3, 2]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        for readout in [Readout::LastStep, Readout::MeanPool] {
            let params = init_params(&dims, readout, 3).unwrap();
            let path = dir.path().join("m.tfam");
            save_model(&path, &params).unwrap();
            let loaded = load_model(&path, Some(5)).unwrap();
            assert_eq!(loaded, params);
            let mut rng = ChaCha8Rng::seed_from_u64(4);
            for _ in 0..100 {
                let x: Vec<f64> = (0..5 * 6).map(|_| rng.gen_range(-2.0..2.0)).collect();
                let a = predict(&params, &x, 6).unwrap();
                let b = predict(&loaded, &x, 6).unwrap();
                assert_eq!(a.to_bits(), b.to_bits());
                assert!(a > 0.0 && a < 1.0);
            }
        }
    }

    #[test]
    fn input_width_mismatch_is_a_shape_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.tfam");
        let dims = ModelDims::new(5, vec![2]).unwrap();
        save_model(&path, &init_params(&dims, Readout::LastStep, 0).unwrap()).unwrap();
        assert!(matches!(load_model(&path, Some(2622)), Err(ModelError::Shape(_))));
    }

    #[test]
    fn corruption_is_classified() {
        let dims = ModelDims::new(3, vec![2]).unwrap();
        let good = encode(&init_params(&dims, Readout::LastStep, 0).unwrap());

        let mut bad = good.clone();
        bad[1] = b'x';
        assert!(matches!(decode(&bad), Err(ModelError::BadMagic { .. })));

        let mut bad = good.clone();
        bad[4] = 7;
        assert!(matches!(decode(&bad), Err(ModelError::Version(7))));

        match decode(&good[..good.len() - 3]) {
            Err(ModelError::Truncated { expected, actual }) => {
                assert_eq!((expected, actual), (good.len(), good.len() - 3));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(decode(&good[..6]), Err(ModelError::Truncated { .. })));

        let mut bad = good.clone();
        let nan = f64::NAN.to_le_bytes();
        let n = bad.len();
        bad[n - 8..].copy_from_slice(&nan);
        assert!(matches!(decode(&bad), Err(ModelError::NonFinite(p)) if p == "head.b"));

        let mut bad = good.clone();
        bad.push(0);
        assert!(matches!(decode(&bad), Err(ModelError::Shape(_))));

        // Layer count 0 and an absurd layer count.
        for layers in [0u32, 5000] {
            let mut bad = good.clone();
            bad[8..12].copy_from_slice(&layers.to_le_bytes());
            assert!(matches!(decode(&bad), Err(ModelError::InvalidDims(_))), "{layers} layers");
        }
        let mut bad = good;
        bad[16..20].copy_from_slice(&0u32.to_le_bytes());
        assert!(matches!(decode(&bad), Err(ModelError::InvalidDims(_))), "zero hidden width");

        let mean = encode(&init_params(&dims, Readout::MeanPool, 0).unwrap());
        let mut bad = mean.clone();
        bad[20..24].copy_from_slice(&7u32.to_le_bytes());
        assert!(matches!(decode(&bad), Err(ModelError::InvalidDims(_))), "unknown readout");
        assert_eq!(decode(&mean).unwrap().readout(), Readout::MeanPool);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn arbitrary_parameters_round_trip(
            input in 1usize..6,
            hidden in proptest::collection::vec(1usize..5, 1..5),
            mean_pool in any::<bool>(),
            seed in any::<u64>(),
        ) {
            let dims = ModelDims::new(input, hidden).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let values = (0..dims.param_count()).map(|_| rng.gen_range(-1e6..1e6)).collect();
            let readout = if mean_pool { Readout::MeanPool } else { Readout::LastStep };
            let params = ModelParams::from_values(dims, readout, values).unwrap();
            let decoded = decode(&encode(&params)).unwrap();
            let bits = |p: &ModelParams| p.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(&decoded), bits(&params));
            prop_assert_eq!(decoded.dims(), params.dims());
            prop_assert_eq!(decoded.readout(), params.readout());
        }
    }
}
