//! Sparse SDPA text format.
//!
//! SDPA's dual form `max <F0, Y> s.t. <F_i, Y> = c_i, Y ⪰ 0` is our primal
//! with `F0 = -C`, `F_i = A_i` and `c_i = b_i`. Free variables are written
//! as differences of two nonnegative diagonal entries in an extra diagonal
//! block. Diagonal blocks (negative sizes) are read as runs of 1×1 blocks.

use std::fmt::Write as _;

use super::{SdpError, SdpProblem};

fn fmt_num(v: f64) -> String {
    format!("{v:e}")
}

pub fn write_sdpa(prob: &SdpProblem) -> Result<String, SdpError> {
    prob.validate()?;
    let m = prob.num_constraints();
    let nfree = prob.num_free();
    let mut sizes: Vec<i64> = prob.blocks.iter().map(|&n| n as i64).collect();
    if nfree > 0 {
        sizes.push(-2 * nfree as i64);
    }
    let mut out = String::new();
    let _ = writeln!(out, "{m} = mDIM");
    let _ = writeln!(out, "{} = nBLOCK", sizes.len());
    let _ = writeln!(out, "{}", sizes.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(" "));
    let _ = writeln!(out, "{}", prob.constraints.iter().map(|c| fmt_num(c.rhs)).collect::<Vec<_>>().join(" "));
    let free_blk = prob.blocks.len() + 1;
    for e in &prob.objective {
        let _ = writeln!(out, "0 {} {} {} {}", e.block + 1, e.row + 1, e.col + 1, fmt_num(-e.value));
    }
    for (k, &c) in prob.free_cost.iter().enumerate() {
        if c != 0.0 {
            let _ = writeln!(out, "0 {free_blk} {0} {0} {1}", 2 * k + 1, fmt_num(-c));
            let _ = writeln!(out, "0 {free_blk} {0} {0} {1}", 2 * k + 2, fmt_num(c));
        }
    }
    for (i, con) in prob.constraints.iter().enumerate() {
        for e in &con.entries {
            let _ = writeln!(out, "{} {} {} {} {}", i + 1, e.block + 1, e.row + 1, e.col + 1, fmt_num(e.value));
        }
        for &(k, v) in &con.free {
            let _ = writeln!(out, "{} {free_blk} {1} {1} {2}", i + 1, 2 * k + 1, fmt_num(v));
            let _ = writeln!(out, "{} {free_blk} {1} {1} {2}", i + 1, 2 * k + 2, fmt_num(-v));
        }
    }
    Ok(out)
}

fn numeric_tokens(line: &str) -> impl Iterator<Item = &str> {
    line.split(|c: char| c.is_whitespace() || ",{}()=".contains(c)).filter(|t| !t.is_empty())
}

pub fn read_sdpa(text: &str) -> Result<SdpProblem, SdpError> {
    let err = |line: usize, msg: &str| SdpError::Parse { line, msg: msg.to_string() };
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('"') && !l.starts_with('*'));

    let mut header_int = |what: &str| -> Result<(usize, i64), SdpError> {
        let (ln, l) = lines.next().ok_or_else(|| err(0, &format!("missing {what}")))?;
        let tok = numeric_tokens(l).next().ok_or_else(|| err(ln, &format!("missing {what}")))?;
        let v = tok.parse::<i64>().map_err(|_| err(ln, &format!("bad {what} `{tok}`")))?;
        Ok((ln, v))
    };
    let (ln_m, m) = header_int("mDIM")?;
    let (ln_nb, nblocks) = header_int("nBLOCK")?;
    if m < 0 || nblocks <= 0 {
        return Err(err(ln_m.max(ln_nb), "mDIM and nBLOCK must be positive"));
    }
    let (m, nblocks) = (m as usize, nblocks as usize);

    // the remaining header values may wrap lines
    let mut pending: Vec<(usize, String)> = Vec::new();
    let mut take =
        |count: usize, lines: &mut dyn Iterator<Item = (usize, &str)>| -> Result<Vec<(usize, String)>, SdpError> {
            while pending.len() < count {
                let (ln, l) = lines.next().ok_or_else(|| err(0, "unexpected end of header"))?;
                pending.extend(numeric_tokens(l).map(|t| (ln, t.to_string())));
            }
            Ok(pending.drain(..count).collect())
        };
    let size_toks = take(nblocks, &mut lines)?;
    let mut sizes = Vec::with_capacity(nblocks);
    for (ln, t) in &size_toks {
        let v: i64 = t.parse().map_err(|_| err(*ln, &format!("bad block size `{t}`")))?;
        if v == 0 {
            return Err(err(*ln, "block size 0"));
        }
        sizes.push(v);
    }
    let rhs_toks = take(m, &mut lines)?;
    let mut rhs = Vec::with_capacity(m);
    for (ln, t) in &rhs_toks {
        rhs.push(t.parse::<f64>().map_err(|_| err(*ln, &format!("bad number `{t}`")))?);
    }
    if !pending.is_empty() {
        return Err(err(pending[0].0, "trailing values after the objective vector"));
    }

    // SDPA block b (1-based) -> first internal block index
    let mut first = Vec::with_capacity(nblocks);
    let mut blocks = Vec::new();
    for &s in &sizes {
        first.push(blocks.len());
        if s > 0 {
            blocks.push(s as usize);
        } else {
            blocks.extend(std::iter::repeat_n(1, (-s) as usize));
        }
    }
    let mut prob = SdpProblem::new(blocks);
    for &b in &rhs {
        prob.add_constraint(b);
    }
    for (ln, l) in lines {
        let toks: Vec<&str> = numeric_tokens(l).collect();
        if toks.len() != 5 {
            return Err(err(ln, "entry lines need 5 fields"));
        }
        let ints: Result<Vec<usize>, _> = toks[..4].iter().map(|t| t.parse::<usize>()).collect();
        let ints = ints.map_err(|_| err(ln, "bad index"))?;
        let v: f64 = toks[4].parse().map_err(|_| err(ln, &format!("bad number `{}`", toks[4])))?;
        let (mat, blk, i, j) = (ints[0], ints[1], ints[2], ints[3]);
        if mat > m || blk == 0 || blk > nblocks || i == 0 || j == 0 {
            return Err(err(ln, "index out of range"));
        }
        let size = sizes[blk - 1];
        let (bi, ri, rj) = if size > 0 {
            if i > size as usize || j > size as usize {
                return Err(err(ln, "index out of range"));
            }
            (first[blk - 1], i - 1, j - 1)
        } else {
            if i != j || i > (-size) as usize {
                return Err(err(ln, "off-diagonal entry in a diagonal block"));
            }
            (first[blk - 1] + i - 1, 0, 0)
        };
        if mat == 0 {
            prob.add_objective(bi, ri, rj, -v);
        } else {
            prob.add_entry(mat - 1, bi, ri, rj, v);
        }
    }
    Ok(prob)
}
