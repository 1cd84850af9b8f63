//! Binary dataset container.
//!
//! Layout, all little-endian:
//!
//! ```text
//! magic      8 bytes   "SPDEDS01"
//! header     7 × u32   M1, M2 + 1, M3, regime code, N, K, L
//! times      (M2 + 1) × f64
//! space      M3 × f64
//! fields     M1 · (M2 + 1) · M3 × f64, trajectory-major, then time, then space
//! ```
//!
//! The declared sizes must account for the byte length exactly.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use ndarray::Array3;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::simulator::{Dataset, SimConfig};
use crate::spectral::Regime;

pub const DATASET_MAGIC: &[u8; 8] = b"SPDEDS01";
const HEADER_FIELDS: [&str; 7] = ["M1", "M2+1", "M3", "regime", "N", "K", "L"];

/// Little-endian primitive writers and readers shared by the binary formats.
pub(crate) mod bin {
    use super::*;

    pub fn put_u8(w: &mut impl Write, v: u8) -> Result<()> {
        Ok(w.write_all(&[v])?)
    }

    pub fn put_u32(w: &mut impl Write, v: u32) -> Result<()> {
        Ok(w.write_all(&v.to_le_bytes())?)
    }

    pub fn put_u64(w: &mut impl Write, v: u64) -> Result<()> {
        Ok(w.write_all(&v.to_le_bytes())?)
    }

    pub fn put_f64(w: &mut impl Write, v: f64) -> Result<()> {
        Ok(w.write_all(&v.to_le_bytes())?)
    }

    pub fn put_len(w: &mut impl Write, field: &'static str, n: usize) -> Result<()> {
        let v = u32::try_from(n).map_err(|_| Error::format(field, format!("{n} does not fit in u32")))?;
        put_u32(w, v)
    }

    pub fn put_scalars<T: Scalar>(w: &mut impl Write, values: impl IntoIterator<Item = T>) -> Result<()> {
        let mut buf = Vec::new();
        for v in values {
            buf.extend_from_slice(&v.to_f64_lossy().to_le_bytes());
        }
        Ok(w.write_all(&buf)?)
    }

    fn take<const B: usize>(r: &mut impl Read, field: &'static str) -> Result<[u8; B]> {
        let mut b = [0u8; B];
        r.read_exact(&mut b)
            .map_err(|e| Error::format(field, format!("truncated ({e})")))?;
        Ok(b)
    }

    pub fn get_u8(r: &mut impl Read, field: &'static str) -> Result<u8> {
        Ok(take::<1>(r, field)?[0])
    }

    pub fn get_u32(r: &mut impl Read, field: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(take(r, field)?))
    }

    pub fn get_len(r: &mut impl Read, field: &'static str) -> Result<usize> {
        Ok(get_u32(r, field)? as usize)
    }

    pub fn get_u64(r: &mut impl Read, field: &'static str) -> Result<u64> {
        Ok(u64::from_le_bytes(take(r, field)?))
    }

    pub fn get_f64(r: &mut impl Read, field: &'static str) -> Result<f64> {
        Ok(f64::from_le_bytes(take(r, field)?))
    }

    pub fn get_scalar<T: Scalar>(r: &mut impl Read, field: &'static str) -> Result<T> {
        Ok(T::lit(get_f64(r, field)?))
    }

    pub fn get_scalars<T: Scalar>(r: &mut impl Read, field: &'static str, n: usize) -> Result<Vec<T>> {
        let mut buf = vec![0u8; n.checked_mul(8).ok_or_else(|| Error::format(field, "length overflow"))?];
        r.read_exact(&mut buf)
            .map_err(|e| Error::format(field, format!("truncated ({e})")))?;
        Ok(buf
            .chunks_exact(8)
            .map(|c| T::lit(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
            .collect())
    }

    pub fn expect_magic(r: &mut impl Read, magic: &[u8; 8]) -> Result<()> {
        let got = take::<8>(r, "magic")?;
        if &got != magic {
            return Err(Error::format(
                "magic",
                format!(
                    "expected {:?}, found {:?}",
                    String::from_utf8_lossy(magic),
                    String::from_utf8_lossy(&got)
                ),
            ));
        }
        Ok(())
    }
}

/// Serializes `ds` in the container layout.
pub fn write_dataset<T: Scalar>(w: &mut impl Write, ds: &Dataset<T>) -> Result<()> {
    w.write_all(DATASET_MAGIC)?;
    let header = [
        ds.n_trajectories(),
        ds.n_times(),
        ds.n_space(),
        ds.regime.code() as usize,
        ds.n_modes,
        ds.k_time,
        ds.l_noise,
    ];
    for (name, v) in HEADER_FIELDS.iter().zip(header) {
        bin::put_len(w, name, v)?;
    }
    if ds.times.len() != ds.n_times() || ds.space.len() != ds.n_space() {
        return Err(Error::invalid("dataset axes disagree with the field array"));
    }
    bin::put_scalars(w, ds.times.iter().copied())?;
    bin::put_scalars(w, ds.space.iter().copied())?;
    bin::put_scalars(w, ds.fields.iter().copied())?;
    Ok(())
}

/// Parses a complete container from `bytes`.
pub fn read_dataset<T: Scalar>(bytes: &[u8]) -> Result<Dataset<T>> {
    let mut r = bytes;
    bin::expect_magic(&mut r, DATASET_MAGIC)?;
    let mut header = [0usize; 7];
    for (slot, name) in header.iter_mut().zip(HEADER_FIELDS) {
        *slot = bin::get_len(&mut r, name)?;
    }
    let [m1, n_times, m3, regime, n, k, l] = header;
    let regime = Regime::from_code(regime as u32)?;
    if n_times == 0 {
        return Err(Error::format("M2+1", "must be positive"));
    }
    let expected = (n_times as u128 + m3 as u128 + m1 as u128 * n_times as u128 * m3 as u128) * 8;
    if expected != r.len() as u128 {
        return Err(Error::format(
            "fields",
            format!(
                "header declares {expected} payload bytes for M1={m1}, M2+1={n_times}, M3={m3}, found {}",
                r.len()
            ),
        ));
    }
    let times = bin::get_scalars(&mut r, "times", n_times)?;
    let space = bin::get_scalars(&mut r, "space", m3)?;
    let flat = bin::get_scalars(&mut r, "fields", m1 * n_times * m3)?;
    let fields = Array3::from_shape_vec((m1, n_times, m3), flat).expect("sizes checked");
    Ok(Dataset {
        regime,
        n_modes: n,
        k_time: k,
        l_noise: l,
        times,
        space,
        fields,
        meta: None,
    })
}

pub fn save_dataset<T: Scalar>(path: &Path, ds: &Dataset<T>) -> Result<()> {
    let mut buf = Vec::with_capacity(64 + 8 * (ds.fields.len() + ds.times.len() + ds.space.len()));
    write_dataset(&mut buf, ds)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_dataset<T: Scalar>(path: &Path) -> Result<Dataset<T>> {
    read_dataset(&fs::read(path)?)
}

/// `<dataset>.meta` next to a dataset file.
pub fn sidecar_path(dataset: &Path) -> PathBuf {
    let mut name = dataset.as_os_str().to_owned();
    name.push(".meta");
    PathBuf::from(name)
}

/// Generation settings that the binary header does not carry, one
/// `key = value` per line.
pub fn write_sidecar<T: Scalar>(path: &Path, cfg: &SimConfig<T>) -> Result<()> {
    let text = format!(
        "regime = {}\nn_modes = {}\nk_time = {}\nl_noise = {}\nhorizon = {}\nm1 = {}\nm2 = {}\nm3 = {}\nscheme = {}\nsim_seed = {}\nnoise_r = {}\nnoise_eps = {}\n",
        cfg.regime.tag(),
        cfg.n_modes,
        cfg.k_time,
        cfg.l_noise,
        cfg.horizon,
        cfg.m1,
        cfg.m2,
        cfg.m3,
        cfg.scheme.name(),
        cfg.master_seed,
        cfg.noise_r,
        cfg.noise_eps,
    );
    fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::generate_dataset;
    use proptest::prelude::*;

    fn sample(m1: usize) -> Dataset<f64> {
        let mut cfg = SimConfig::<f64>::desk(Regime::DirichletHeat);
        cfg.m1 = m1;
        cfg.m2 = 6;
        cfg.m3 = 5;
        generate_dataset(&cfg).unwrap()
    }

    fn bytes(ds: &Dataset<f64>) -> Vec<u8> {
        let mut b = Vec::new();
        write_dataset(&mut b, ds).unwrap();
        b
    }

    #[test]
    fn header_layout() {
        let ds = sample(3);
        let b = bytes(&ds);
        assert_eq!(&b[..8], DATASET_MAGIC);
        let words: Vec<u32> = b[8..36]
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        assert_eq!(words, vec![3, 7, 5, 1, 4, 8, 4]);
        assert_eq!(b.len(), 36 + 8 * (7 + 5 + 3 * 7 * 5));
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ds = sample(1);
        let back: Dataset<f64> = read_dataset(&bytes(&ds)).unwrap();
        assert_eq!(back.fields, ds.fields);
        assert_eq!(back.times, ds.times);
        assert_eq!(back.space, ds.space);
        assert_eq!((back.regime, back.n_modes, back.k_time, back.l_noise), (ds.regime, 4, 8, 4));
        assert_eq!(bytes(&back), bytes(&ds));
    }

    #[test]
    fn corrupted_files_name_the_field() {
        let ds = sample(2);
        let good = bytes(&ds);
        let mut bad = good.clone();
        bad[0] = b'X';
        let err = read_dataset::<f64>(&bad).unwrap_err().to_string();
        assert!(err.contains("magic"), "{err}");
        let err = read_dataset::<f64>(&good[..good.len() - 1]).unwrap_err().to_string();
        assert!(err.contains("fields"), "{err}");
        let err = read_dataset::<f64>(&good[..20]).unwrap_err().to_string();
        assert!(err.contains("regime"), "{err}");
        let mut bad = good.clone();
        bad[20..24].copy_from_slice(&9u32.to_le_bytes());
        let err = read_dataset::<f64>(&bad).unwrap_err().to_string();
        assert!(err.contains("regime"), "{err}");
        let mut bad = good;
        bad[8..12].copy_from_slice(&5u32.to_le_bytes());
        assert!(read_dataset::<f64>(&bad).is_err());
    }

    #[test]
    fn files_and_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.bin");
        let ds = sample(2);
        save_dataset(&path, &ds).unwrap();
        let back: Dataset<f64> = load_dataset(&path).unwrap();
        assert_eq!(back.fields, ds.fields);
        let meta = sidecar_path(&path);
        assert!(meta.to_string_lossy().ends_with("d.bin.meta"));
        write_sidecar(&meta, &SimConfig::<f64>::desk(Regime::DirichletHeat)).unwrap();
        let text = fs::read_to_string(meta).unwrap();
        assert!(text.contains("scheme = semi_implicit"));
    }

    proptest! {
        #[test]
        fn arbitrary_arrays_round_trip(m1 in 0usize..4, nt in 1usize..5, m3 in 1usize..5, seed in any::<u64>()) {
            let mut state = seed;
            let mut next = || {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                f64::from_bits(state >> 2)
            };
            let ds = Dataset {
                regime: Regime::OrnsteinUhlenbeck,
                n_modes: 3,
                k_time: 2,
                l_noise: 1,
                times: (0..nt).map(|_| next()).collect(),
                space: (0..m3).map(|_| next()).collect(),
                fields: Array3::from_shape_simple_fn((m1, nt, m3), &mut next),
                meta: None,
            };
            let b = bytes(&ds);
            let back: Dataset<f64> = read_dataset(&b).unwrap();
            prop_assert_eq!(bytes(&back), b);
        }
    }
}
