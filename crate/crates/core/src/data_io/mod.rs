//! File formats and synthetic data.

pub(crate) mod bytes;
pub mod field;
pub mod nifti;
pub mod pgm;
pub mod synth;

pub use field::{decode_field, encode_field, read_field, write_field};
pub use nifti::{decode_nifti, encode_nifti, read_nifti, write_nifti, write_nifti_image, NiftiDatatype, NiftiVolume};
pub use pgm::{decode_pgm, encode_pgm, encode_pgm_normalized, read_pgm, write_pgm, PgmDepth};
pub use synth::{generate_dataset, generate_pair, SynthPair, SynthSpec};
