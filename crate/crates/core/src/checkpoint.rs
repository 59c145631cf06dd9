//! Binary checkpoint container.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! magic      4 bytes  "BKOT"
//! version    u32      1
//! vocab      u32      V
//! hidden     u32      h
//! sections   u32      bit 0: optimizer state, bit 1: trainer state
//! W_in       f32 x V*h   row-major
//! W_r        f32 x h*h
//! W_out      f32 x V*h
//! [optimizer]
//!   global_step  u64
//!   v_in         f64 x V*h
//!   v_r          f64 x h*h
//!   v_out        f64 x V*h
//!   last_in      u64 x V
//!   last_out     u64 x V
//! [trainer]
//!   epoch            u64
//!   tokens_seen      u64
//!   learning_rate    f64
//!   best_valid       f64   (NaN when unset)
//!   initial_valid    f64
//!   seed             u64
//!   rng_word_pos     u128
//!   blackout_clamps  u64
//!   nce_saturations  u64
//!   full_score_vecs  u64
//! ```

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};
use crate::heads::DiagnosticCounts;
use crate::optim::OptimizerState;
use crate::rnn::ModelParams;

pub const MAGIC: &[u8; 4] = b"BKOT";
pub const VERSION: u32 = 1;

const HAS_OPTIMIZER: u32 = 1;
const HAS_TRAINER: u32 = 2;

/// Where a training run stands between epochs.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainerState {
    pub epoch: u64,
    pub tokens_seen: u64,
    pub learning_rate: f64,
    pub best_valid: Option<f64>,
    pub initial_valid: f64,
    pub seed: u64,
    pub rng_word_pos: u128,
    pub diagnostics: DiagnosticCounts,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams<f32>,
    pub optimizer: Option<OptimizerState>,
    pub trainer: Option<TrainerState>,
}

fn map_eof(e: io::Error) -> Error {
    if e.kind() == io::ErrorKind::UnexpectedEof {
        Error::TruncatedPayload
    } else {
        Error::Io(e)
    }
}

fn write_f32s<W: Write>(out: &mut W, xs: &[f32]) -> io::Result<()> {
    xs.iter().try_for_each(|&x| out.write_f32::<LE>(x))
}

fn write_f64s<W: Write>(out: &mut W, xs: &[f64]) -> io::Result<()> {
    xs.iter().try_for_each(|&x| out.write_f64::<LE>(x))
}

fn write_u64s<W: Write>(out: &mut W, xs: &[u64]) -> io::Result<()> {
    xs.iter().try_for_each(|&x| out.write_u64::<LE>(x))
}

fn read_f32s<R: Read>(input: &mut R, n: usize) -> Result<Vec<f32>> {
    let mut v = vec![0f32; n];
    input.read_f32_into::<LE>(&mut v).map_err(map_eof)?;
    Ok(v)
}

fn read_f64s<R: Read>(input: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut v = vec![0f64; n];
    input.read_f64_into::<LE>(&mut v).map_err(map_eof)?;
    Ok(v)
}

fn read_u64s<R: Read>(input: &mut R, n: usize) -> Result<Vec<u64>> {
    let mut v = vec![0u64; n];
    input.read_u64_into::<LE>(&mut v).map_err(map_eof)?;
    Ok(v)
}

impl Checkpoint {
    pub fn new(params: ModelParams<f32>) -> Self {
        Checkpoint {
            params,
            optimizer: None,
            trainer: None,
        }
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        let p = &self.params;
        let mut flags = 0;
        if self.optimizer.is_some() {
            flags |= HAS_OPTIMIZER;
        }
        if self.trainer.is_some() {
            flags |= HAS_TRAINER;
        }
        out.write_all(MAGIC)?;
        out.write_u32::<LE>(VERSION)?;
        out.write_u32::<LE>(p.vocab_size() as u32)?;
        out.write_u32::<LE>(p.hidden() as u32)?;
        out.write_u32::<LE>(flags)?;
        write_f32s(&mut out, &p.w_in)?;
        write_f32s(&mut out, &p.w_r)?;
        write_f32s(&mut out, &p.w_out)?;
        if let Some(o) = &self.optimizer {
            out.write_u64::<LE>(o.global_step)?;
            write_f64s(&mut out, &o.v_in)?;
            write_f64s(&mut out, &o.v_r)?;
            write_f64s(&mut out, &o.v_out)?;
            write_u64s(&mut out, &o.last_in)?;
            write_u64s(&mut out, &o.last_out)?;
        }
        if let Some(t) = &self.trainer {
            out.write_u64::<LE>(t.epoch)?;
            out.write_u64::<LE>(t.tokens_seen)?;
            out.write_f64::<LE>(t.learning_rate)?;
            out.write_f64::<LE>(t.best_valid.unwrap_or(f64::NAN))?;
            out.write_f64::<LE>(t.initial_valid)?;
            out.write_u64::<LE>(t.seed)?;
            out.write_u128::<LE>(t.rng_word_pos)?;
            out.write_u64::<LE>(t.diagnostics.blackout_clamps)?;
            out.write_u64::<LE>(t.diagnostics.nce_saturations)?;
            out.write_u64::<LE>(t.diagnostics.full_score_vectors)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut input: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic).map_err(|_| Error::CorruptHeader)?;
        if &magic != MAGIC {
            return Err(Error::CorruptHeader);
        }
        let version = input.read_u32::<LE>().map_err(|_| Error::CorruptHeader)?;
        if version != VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let v = input.read_u32::<LE>().map_err(|_| Error::CorruptHeader)? as usize;
        let h = input.read_u32::<LE>().map_err(|_| Error::CorruptHeader)? as usize;
        let flags = input.read_u32::<LE>().map_err(|_| Error::CorruptHeader)?;
        if h == 0 || flags & !(HAS_OPTIMIZER | HAS_TRAINER) != 0 {
            return Err(Error::CorruptHeader);
        }
        let w_in = read_f32s(&mut input, v * h)?;
        let w_r = read_f32s(&mut input, h * h)?;
        let w_out = read_f32s(&mut input, v * h)?;
        let params = ModelParams::from_parts(v, h, w_in, w_r, w_out)?;

        let optimizer = if flags & HAS_OPTIMIZER != 0 {
            let mut o = OptimizerState::new(v, h);
            o.global_step = input.read_u64::<LE>().map_err(map_eof)?;
            o.v_in = read_f64s(&mut input, v * h)?;
            o.v_r = read_f64s(&mut input, h * h)?;
            o.v_out = read_f64s(&mut input, v * h)?;
            o.last_in = read_u64s(&mut input, v)?;
            o.last_out = read_u64s(&mut input, v)?;
            Some(o)
        } else {
            None
        };

        let trainer = if flags & HAS_TRAINER != 0 {
            let epoch = input.read_u64::<LE>().map_err(map_eof)?;
            let tokens_seen = input.read_u64::<LE>().map_err(map_eof)?;
            let learning_rate = input.read_f64::<LE>().map_err(map_eof)?;
            let best = input.read_f64::<LE>().map_err(map_eof)?;
            let initial_valid = input.read_f64::<LE>().map_err(map_eof)?;
            let seed = input.read_u64::<LE>().map_err(map_eof)?;
            let rng_word_pos = input.read_u128::<LE>().map_err(map_eof)?;
            let diagnostics = DiagnosticCounts {
                blackout_clamps: input.read_u64::<LE>().map_err(map_eof)?,
                nce_saturations: input.read_u64::<LE>().map_err(map_eof)?,
                full_score_vectors: input.read_u64::<LE>().map_err(map_eof)?,
            };
            Some(TrainerState {
                epoch,
                tokens_seen,
                learning_rate,
                best_valid: (!best.is_nan()).then_some(best),
                initial_valid,
                seed,
                rng_word_pos,
                diagnostics,
            })
        } else {
            None
        };

        Ok(Checkpoint {
            params,
            optimizer,
            trainer,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut file = io::BufWriter::new(fs::File::create(path)?);
        self.write_to(&mut file)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Checkpoint::read_from(io::BufReader::new(fs::File::open(path)?))
    }

    /// Loads and checks the dimensions against the current configuration.
    pub fn load_expecting(path: impl AsRef<Path>, vocab_size: usize, hidden: Option<usize>) -> Result<Self> {
        let ckpt = Checkpoint::load(path)?;
        ckpt.check_dims(vocab_size, hidden)?;
        Ok(ckpt)
    }

    pub fn check_dims(&self, vocab_size: usize, hidden: Option<usize>) -> Result<()> {
        if self.params.vocab_size() != vocab_size {
            return Err(Error::VocabSizeMismatch {
                expected: vocab_size,
                found: self.params.vocab_size(),
            });
        }
        if let Some(h) = hidden {
            if self.params.hidden() != h {
                return Err(Error::HiddenSizeMismatch {
                    expected: h,
                    found: self.params.hidden(),
                });
            }
        }
        Ok(())
    }
}
