//! Binary index layout, all integers little-endian:
//!
//! ```text
//! magic      8 bytes  "GRAMIDX1"
//! format     u32      1
//! version    u64      index version
//! n_codes    u32
//! codes      n_codes x (u16 byte length, UTF-8 bytes), ascending
//! postings   n_codes x (u32 count, count x u32 product id), ascending ids
//! n_products u32
//! products   n_products x (u32 id, u16 n, n x (u32 code index,
//!            u16 n_tokens, n_tokens x f64 token probability))
//! ```

use std::io::{Read, Write};

use super::store::{CodeIndex, IndexedCode};
use crate::corpus::ProductId;
use crate::error::{GramError, Result};

pub const INDEX_MAGIC: &[u8; 8] = b"GRAMIDX1";
pub const INDEX_FORMAT: u32 = 1;

fn fmt_err(msg: impl Into<String>) -> GramError {
    GramError::IndexFormat(msg.into())
}

fn to_u16(n: usize, what: &str) -> Result<u16> {
    u16::try_from(n).map_err(|_| fmt_err(format!("{what} {n} does not fit in u16")))
}

fn to_u32(n: usize, what: &str) -> Result<u32> {
    u32::try_from(n).map_err(|_| fmt_err(format!("{what} {n} does not fit in u32")))
}

pub fn write_index<W: Write>(index: &CodeIndex, w: &mut W) -> Result<()> {
    let codes: Vec<&String> = index.postings.keys().collect();
    let mut buf = Vec::new();
    buf.extend_from_slice(INDEX_MAGIC);
    buf.extend_from_slice(&INDEX_FORMAT.to_le_bytes());
    buf.extend_from_slice(&index.version.to_le_bytes());
    buf.extend_from_slice(&to_u32(codes.len(), "code count")?.to_le_bytes());
    for c in &codes {
        buf.extend_from_slice(&to_u16(c.len(), "code length")?.to_le_bytes());
        buf.extend_from_slice(c.as_bytes());
    }
    for list in index.postings.values() {
        buf.extend_from_slice(&to_u32(list.len(), "posting length")?.to_le_bytes());
        for p in list {
            buf.extend_from_slice(&p.0.to_le_bytes());
        }
    }
    buf.extend_from_slice(&to_u32(index.products.len(), "product count")?.to_le_bytes());
    for (id, list) in &index.products {
        buf.extend_from_slice(&id.0.to_le_bytes());
        buf.extend_from_slice(&to_u16(list.len(), "codes per product")?.to_le_bytes());
        for c in list {
            let ci = codes
                .binary_search(&&c.code)
                .map_err(|_| fmt_err(format!("product {id} code {:?} has no posting", c.code)))?;
            buf.extend_from_slice(&(ci as u32).to_le_bytes());
            buf.extend_from_slice(&to_u16(c.token_probs.len(), "token count")?.to_le_bytes());
            for p in &c.token_probs {
                buf.extend_from_slice(&p.to_le_bytes());
            }
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(fmt_err(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn read_index<R: Read>(r: &mut R) -> Result<CodeIndex> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    let mut c = Cursor { buf: &buf, pos: 0 };
    if c.take(8)? != INDEX_MAGIC {
        return Err(fmt_err("bad magic"));
    }
    let format = c.u32()?;
    if format != INDEX_FORMAT {
        return Err(fmt_err(format!("unsupported format {format}")));
    }
    let version = c.u64()?;
    let n_codes = c.u32()? as usize;
    let mut codes = Vec::with_capacity(n_codes);
    for _ in 0..n_codes {
        let len = c.u16()? as usize;
        let s = std::str::from_utf8(c.take(len)?).map_err(|e| fmt_err(format!("code is not UTF-8: {e}")))?;
        codes.push(s.to_string());
    }
    if codes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(fmt_err("code table is not strictly ascending"));
    }
    let mut postings = Vec::with_capacity(n_codes);
    for _ in 0..n_codes {
        let n = c.u32()? as usize;
        let mut list = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            list.push(ProductId(c.u32()?));
        }
        postings.push(list);
    }
    let n_products = c.u32()? as usize;
    let mut products = Vec::with_capacity(n_products.min(1 << 20));
    for _ in 0..n_products {
        let id = ProductId(c.u32()?);
        let n = c.u16()? as usize;
        let mut list = Vec::with_capacity(n);
        for _ in 0..n {
            let ci = c.u32()? as usize;
            let code = codes.get(ci).ok_or_else(|| fmt_err(format!("code index {ci} out of range")))?;
            let nt = c.u16()? as usize;
            let mut token_probs = Vec::with_capacity(nt);
            for _ in 0..nt {
                token_probs.push(c.f64()?);
            }
            list.push(IndexedCode {
                code: code.clone(),
                token_probs,
            });
        }
        products.push((id, list));
    }
    if c.pos != buf.len() {
        return Err(fmt_err(format!("{} trailing bytes", buf.len() - c.pos)));
    }
    let index = CodeIndex::from_products(products, version);
    let expected: Vec<(&String, &Vec<ProductId>)> = index.postings.iter().collect();
    let stored: Vec<(&String, &Vec<ProductId>)> = codes.iter().zip(&postings).collect();
    if expected != stored {
        return Err(fmt_err("posting lists disagree with product table"));
    }
    Ok(index)
}
