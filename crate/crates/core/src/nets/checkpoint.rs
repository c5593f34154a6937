//! Text checkpoint format.
//!
//! ```text
//! degp-checkpoint v1
//! tensor <name> <extent> <extent> ...
//! <value> <value> ...
//! ```
//!
//! One header line, then two lines per tensor: the name followed by its
//! extents, and the row-major values on a single line. Values use the
//! shortest representation that parses back to the identical `f64`, so a
//! save/load round trip is exact. Names contain no whitespace.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::ndcore::Tensor;

const MAGIC: &str = "degp-checkpoint v1";

pub fn write_checkpoint<W: Write>(mut out: W, tensors: &[(String, Tensor)]) -> std::io::Result<()> {
    writeln!(out, "{MAGIC}")?;
    for (name, t) in tensors {
        write!(out, "tensor {name}")?;
        for d in t.shape() {
            write!(out, " {d}")?;
        }
        writeln!(out)?;
        let mut first = true;
        for v in t.data() {
            if !first {
                out.write_all(b" ")?;
            }
            first = false;
            write!(out, "{v:e}")?;
        }
        writeln!(out)?;
    }
    out.flush()
}

pub fn read_checkpoint<R: Read>(input: R) -> Result<Vec<(String, Tensor)>> {
    let mut lines = BufReader::new(input).lines().enumerate();
    let mut next = |what: &str| -> Result<(usize, String)> {
        match lines.next() {
            Some((i, Ok(l))) => Ok((i + 1, l)),
            Some((i, Err(e))) => Err(Error::Parse(format!("line {}: {e}", i + 1))),
            None => Err(Error::Parse(format!("unexpected end of checkpoint, expected {what}"))),
        }
    };
    let (_, header) = next("header")?;
    if header.trim() != MAGIC {
        return Err(Error::Parse(format!("not a checkpoint: header {header:?}")));
    }
    let mut tensors = Vec::new();
    loop {
        let (lineno, head) = match next("tensor") {
            Ok(l) => l,
            Err(_) => break,
        };
        if head.trim().is_empty() {
            continue;
        }
        let mut parts = head.split_whitespace();
        if parts.next() != Some("tensor") {
            return Err(Error::Parse(format!("line {lineno}: expected `tensor`, got {head:?}")));
        }
        let name = parts
            .next()
            .ok_or_else(|| Error::Parse(format!("line {lineno}: missing tensor name")))?
            .to_string();
        let shape = parts
            .map(|p| p.parse::<usize>().map_err(|e| Error::Parse(format!("line {lineno}: extent {p:?}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        let (lineno, body) = next("tensor values")?;
        let data = body
            .split_whitespace()
            .map(|p| p.parse::<f64>().map_err(|e| Error::Parse(format!("line {lineno}: value {p:?}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        let t = Tensor::new(shape, data).map_err(|e| Error::Parse(format!("tensor {name}: {e}")))?;
        tensors.push((name, t));
    }
    Ok(tensors)
}

pub fn save_checkpoint(path: impl AsRef<Path>, tensors: &[(String, Tensor)]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_checkpoint(BufWriter::new(file), tensors).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Vec<(String, Tensor)>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(file)
}
