//! Round trips and corruption fuzzing of every on-disk format.

use morphreg::data_io::{decode_field, decode_nifti, decode_pgm, encode_field, encode_nifti, encode_pgm, NiftiDatatype, NiftiVolume, PgmDepth};
use morphreg::grid::GridImage;
use morphreg::net::io::{decode_params, encode_params};
use morphreg::net::{NetConfig, NetParams};
use morphreg::Error;
use rand::Rng;

use super::*;

type Decoder = fn(&[u8]) -> Result<(), Error>;

fn samples(r: &mut ChaCha8Rng) -> Vec<(&'static str, Vec<u8>, Decoder)> {
    let g2 = morphreg::GridGeometry::new(&[5, 7]).unwrap();
    let g3 = morphreg::GridGeometry::new(&[3, 4, 5]).unwrap();
    let img2 = GridImage::<f32>::new(g2, (0..35).map(|_| r.random_range(0.0..1.0)).collect()).unwrap();
    let vol = GridImage::<f32>::new(g3, (0..60).map(|_| r.random_range(-100.0..100.0)).collect()).unwrap();
    let field = random_field(r, g3, 4.0).cast::<f32>();
    let params = NetParams::<f32>::init(
        NetConfig { ndim: 2, encoder_filters: vec![2, 3], decoder_filters: vec![3, 2], kernel_size: 3, leaky_slope: 0.2, feature_multiplier: 1 },
        r.random(),
    )
    .unwrap();
    vec![
        ("PGM 8-bit", encode_pgm(&img2, PgmDepth::Eight).unwrap(), |b| decode_pgm::<f32>(b).map(drop)),
        ("PGM 16-bit", encode_pgm(&img2, PgmDepth::Sixteen).unwrap(), |b| decode_pgm::<f32>(b).map(drop)),
        ("NIfTI float32", encode_nifti(&NiftiVolume::new(vol.clone(), NiftiDatatype::Float32)), |b| decode_nifti(b).map(drop)),
        ("NIfTI int16", encode_nifti(&NiftiVolume::new(vol.clone(), NiftiDatatype::Int16)), |b| decode_nifti(b).map(drop)),
        ("NIfTI uint8", encode_nifti(&NiftiVolume::new(vol, NiftiDatatype::Uint8)), |b| decode_nifti(b).map(drop)),
        ("field", encode_field(&field), |b| decode_field(b).map(drop)),
        ("parameters", encode_params(&params), |b| decode_params(b).map(drop)),
    ]
}

pub fn round_trips() -> Check {
    for seed in 0..10 {
        let mut r = rng(900 + seed);
        let g3 = morphreg::GridGeometry::new(&[r.random_range(2..6), r.random_range(2..6), r.random_range(2..6)]).unwrap();
        let vol = GridImage::<f32>::new(g3, (0..g3.voxel_count()).map(|_| r.random_range(-1e3..1e3)).collect()).unwrap();
        let back = decode_nifti(&encode_nifti(&NiftiVolume::new(vol.clone(), NiftiDatatype::Float32))).map_err(|e| e.to_string())?;
        if back.image().values().iter().zip(vol.values()).any(|(a, b)| a.to_bits() != b.to_bits()) {
            return Err("NIfTI float32 round trip is not bit-exact".into());
        }
        let field = random_field(&mut r, g3, 5.0).cast::<f32>();
        let fb = decode_field(&encode_field(&field)).map_err(|e| e.to_string())?;
        if fb.vectors().iter().zip(field.vectors()).any(|(a, b)| a.to_bits() != b.to_bits()) {
            return Err("field round trip is not bit-exact".into());
        }
        let g2 = morphreg::GridGeometry::new(&[r.random_range(2..9), r.random_range(2..9)]).unwrap();
        for depth in [PgmDepth::Eight, PgmDepth::Sixteen] {
            let img = GridImage::<f32>::new(g2, (0..g2.voxel_count()).map(|_| r.random_range(0.0..1.0)).collect()).unwrap();
            let bytes = encode_pgm(&img, depth).unwrap();
            let once: GridImage<f32> = decode_pgm(&bytes).map_err(|e| e.to_string())?;
            let again = encode_pgm(&once, depth).unwrap();
            let twice: GridImage<f32> = decode_pgm(&again).map_err(|e| e.to_string())?;
            if again != bytes || twice != once {
                return Err(format!("PGM {depth:?} quantized round trip is not stable"));
            }
        }
        let params = NetParams::<f32>::init(NetConfig::desk(2), r.random()).unwrap();
        let pb = decode_params(&encode_params(&params)).map_err(|e| e.to_string())?;
        if pb.flatten().iter().zip(params.flatten()).any(|(a, b)| a.to_bits() != b.to_bits()) || pb.config() != params.config() {
            return Err("parameter round trip is not bit-exact".into());
        }
    }
    Ok("PGM (quantized, stable), NIfTI float32, field and parameter containers round-trip bit-exactly".into())
}

pub fn truncations() -> Check {
    let mut r = rng(950);
    let mut cases = 0;
    for (name, bytes, decode) in samples(&mut r) {
        decode(&bytes).map_err(|e| format!("{name}: valid file rejected: {e}"))?;
        for len in 0..bytes.len() {
            match std::panic::catch_unwind(|| decode(&bytes[..len])) {
                Err(_) => return Err(format!("{name}: panic on a {len}-byte prefix")),
                Ok(Ok(())) => return Err(format!("{name}: {len}-byte prefix accepted")),
                Ok(Err(e)) if !e.is_format_error() => return Err(format!("{name}: {len}-byte prefix gave {e}")),
                Ok(Err(_)) => cases += 1,
            }
        }
    }
    Ok(format!("every proper prefix of 7 sample files rejected with a format error ({cases} prefixes)"))
}

pub fn corruptions() -> Check {
    let mut r = rng(960);
    let mut cases = 0;
    for (name, bytes, decode) in samples(&mut r) {
        for _ in 0..400 {
            let mut b = bytes.clone();
            // mostly header bytes, where structure lives
            for _ in 0..r.random_range(1..4) {
                let at = if r.random_bool(0.8) { r.random_range(0..b.len().min(400)) } else { r.random_range(0..b.len()) };
                b[at] = r.random();
            }
            if r.random_bool(0.2) {
                b.extend((0..r.random_range(1..16)).map(|_| r.random::<u8>()));
            }
            if std::panic::catch_unwind(|| decode(&b)).is_err() {
                return Err(format!("{name}: panic on a corrupted file"));
            }
            cases += 1;
        }
    }
    Ok(format!("{cases} randomly corrupted files decoded without panicking"))
}

pub fn all() -> Vec<Check> {
    vec![round_trips(), truncations(), corruptions()]
}
