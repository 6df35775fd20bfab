//! Checkpoints of the trainable parameters.
//!
//! ```text
//! gnm-lab checkpoint 1
//! seed 7
//! param fc0.weight 64 32
//! param fc0.bias 1 64
//! end
//! <little-endian f64 payload, parameters in order>
//! ```
//!
//! Frozen weights are not stored; they are regenerated from the seed.

use std::io::{BufRead, BufReader, Read, Write};

use crate::autodiff::{ParamSet, Tensor};
use crate::error::{Error, Result};

const MAGIC: &str = "gnm-lab checkpoint 1";

pub fn save_checkpoint<W: Write>(params: &ParamSet, seed: u64, mut w: W) -> Result<()> {
    writeln!(w, "{MAGIC}")?;
    writeln!(w, "seed {seed}")?;
    for (name, t) in params.iter() {
        let dims: Vec<String> = t.shape().iter().map(ToString::to_string).collect();
        writeln!(w, "param {name} {}", dims.join(" "))?;
    }
    writeln!(w, "end")?;
    for t in params.tensors() {
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Read a checkpoint; returns the parameters and the seed they were trained with.
pub fn load_checkpoint<R: Read>(r: R) -> Result<(ParamSet, u64)> {
    let bad = |m: String| Error::Checkpoint(m);
    let mut r = BufReader::new(r);
    let mut line = String::new();
    let mut next_line = |r: &mut BufReader<R>| -> Result<String> {
        line.clear();
        if r.read_line(&mut line)? == 0 {
            return Err(Error::Checkpoint("unexpected end of header".into()));
        }
        Ok(line.trim_end_matches('\n').to_string())
    };

    if next_line(&mut r)? != MAGIC {
        return Err(bad("not a gnm-lab checkpoint".into()));
    }
    let seed_line = next_line(&mut r)?;
    let seed = seed_line
        .strip_prefix("seed ")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| bad(format!("bad seed line `{seed_line}`")))?;

    let mut shapes: Vec<(String, Vec<usize>)> = Vec::new();
    loop {
        let l = next_line(&mut r)?;
        if l == "end" {
            break;
        }
        let mut parts = l.split(' ');
        if parts.next() != Some("param") {
            return Err(bad(format!("bad header line `{l}`")));
        }
        let name = parts.next().ok_or_else(|| bad(format!("missing name in `{l}`")))?;
        let dims = parts
            .map(|d| d.parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| bad(format!("bad shape in `{l}`")))?;
        shapes.push((name.to_string(), dims));
    }

    let mut params = ParamSet::new();
    let mut buf = [0u8; 8];
    for (name, shape) in shapes {
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            r.read_exact(&mut buf)
                .map_err(|_| bad(format!("payload truncated in `{name}`")))?;
            data.push(f64::from_le_bytes(buf));
        }
        params.insert(name, Tensor::new(shape, data)?)?;
    }
    if r.read(&mut buf)? != 0 {
        return Err(bad("trailing bytes after payload".into()));
    }
    Ok((params, seed))
}

/// Copy `loaded` into `target`, requiring identical names and shapes.
pub fn restore_into(target: &mut ParamSet, loaded: &ParamSet) -> Result<()> {
    if target.names() != loaded.names() || target.shapes() != loaded.shapes() {
        return Err(Error::Checkpoint(
            "parameter names or shapes do not match the configured model".into(),
        ));
    }
    *target = loaded.clone();
    Ok(())
}
