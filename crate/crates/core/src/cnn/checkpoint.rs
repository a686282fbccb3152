//! Versioned little-endian checkpoint: config, parameters, batch-norm
//! running statistics and the training seed.

use std::io::{Read, Write};

use super::{CnnConfig, CnnError, CnnModel, ConvSpec, ParamLayout, Real};

const MAGIC: &[u8; 8] = b"LFICNN\0\0";
const VERSION: u32 = 1;

struct Reader<'a> {
    buf: &'a [u8],
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], CnnError> {
        if self.buf.len() < n {
            return Err(CnnError::Checkpoint("truncated file".into()));
        }
        let (a, b) = self.buf.split_at(n);
        self.buf = b;
        Ok(a)
    }

    fn u64(&mut self) -> Result<u64, CnnError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn usize(&mut self) -> Result<usize, CnnError> {
        usize::try_from(self.u64()?).map_err(|_| CnnError::Checkpoint("size overflow".into()))
    }

    fn f64(&mut self) -> Result<f64, CnnError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn reals<T: Real>(&mut self) -> Result<Vec<T>, CnnError> {
        let n = self.usize()?;
        let bytes = self.take(n.checked_mul(T::BYTES).ok_or_else(|| CnnError::Checkpoint("size overflow".into()))?)?;
        Ok(bytes.chunks(T::BYTES).map(T::read_le).collect())
    }
}

impl<T: Real> CnnModel<T> {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(T::TAG);
        let c = &self.config;
        let u = |x: usize, out: &mut Vec<u8>| out.extend_from_slice(&(x as u64).to_le_bytes());
        u(c.input_length, &mut out);
        u(c.input_channels, &mut out);
        u(c.blocks.len(), &mut out);
        for b in &c.blocks {
            u(b.out_channels, &mut out);
            u(b.kernel, &mut out);
            u(b.pool, &mut out);
        }
        u(c.fc1, &mut out);
        u(c.num_classes, &mut out);
        for x in [c.dropout, c.leaky_slope, c.bn_eps, c.bn_momentum] {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out.extend_from_slice(&self.seed.to_le_bytes());
        for v in [&self.params, &self.running_mean, &self.running_var] {
            u(v.len(), &mut out);
            v.iter().for_each(|x| x.write_le(&mut out));
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CnnError> {
        let mut r = Reader { buf: bytes };
        if r.take(8)? != MAGIC {
            return Err(CnnError::Checkpoint("not a CNN checkpoint".into()));
        }
        let version = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
        if version != VERSION {
            return Err(CnnError::Checkpoint(format!("unsupported version {version}")));
        }
        let tag = r.take(1)?[0];
        if tag != T::TAG {
            return Err(CnnError::Checkpoint(format!("stored with {tag}-byte scalars, loading as {}", T::TAG)));
        }
        let input_length = r.usize()?;
        let input_channels = r.usize()?;
        let nb = r.usize()?;
        if nb > 64 {
            return Err(CnnError::Checkpoint("implausible block count".into()));
        }
        let blocks = (0..nb)
            .map(|_| {
                Ok(ConvSpec {
                    out_channels: r.usize()?,
                    kernel: r.usize()?,
                    pool: r.usize()?,
                })
            })
            .collect::<Result<Vec<_>, CnnError>>()?;
        let fc1 = r.usize()?;
        let num_classes = r.usize()?;
        let config = CnnConfig {
            input_length,
            input_channels,
            blocks,
            fc1,
            num_classes,
            dropout: r.f64()?,
            leaky_slope: r.f64()?,
            bn_eps: r.f64()?,
            bn_momentum: r.f64()?,
        };
        config.validate()?;
        let seed = r.u64()?;
        let params = r.reals()?;
        let running_mean = r.reals()?;
        let running_var = r.reals()?;
        let layout = ParamLayout::new(&config);
        let bn: usize = config.blocks.iter().map(|b| b.out_channels).sum();
        if params.len() != layout.total() || running_mean.len() != bn || running_var.len() != bn || !r.buf.is_empty() {
            return Err(CnnError::Checkpoint("tensor sizes do not match the stored config".into()));
        }
        Ok(Self {
            config,
            layout,
            params,
            running_mean,
            running_var,
            seed,
        })
    }

    pub fn save<W: Write>(&self, mut w: W) -> Result<(), CnnError> {
        w.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load<R: Read>(mut r: R) -> Result<Self, CnnError> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }
}
