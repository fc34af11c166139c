//! Draw archives: long-format CSV (`chain,iter,param,value`) and a compact
//! binary format with the same content.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::linalg::Sym2;

use super::chain::{ChainDraws, PosteriorDraws};
use super::model::{CountFamily, ModelParams};

pub const CSV_HEADER: [&str; 4] = ["chain", "iter", "param", "value"];
const MAGIC: &[u8; 8] = b"MVPADRW1";

/// Write the archive. `rho_b` is included for convenience and ignored on read.
pub fn write_draws_csv<W: Write>(draws: &PosteriorDraws, w: W) -> Result<()> {
    let names = draws.param_names();
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(CSV_HEADER)?;
    for (c, chain) in draws.chains.iter().enumerate() {
        for (it, p) in chain.iters.iter().zip(&chain.params) {
            for (name, v) in names.iter().zip(p.scalars()) {
                wtr.write_record([c.to_string(), it.to_string(), name.clone(), format!("{v}")])?;
            }
        }
    }
    wtr.flush().map_err(|e| Error::io("<draws>", e))?;
    Ok(())
}

struct Layout {
    family: CountFamily,
    columns: Vec<String>,
}

fn layout_from_names(names: &[String]) -> Result<Layout> {
    let columns: Vec<String> = names
        .iter()
        .filter_map(|n| n.strip_prefix("gamma."))
        .map(str::to_string)
        .collect();
    let family = if names.iter().any(|n| n == "lambda") {
        CountFamily::GenPoisson
    } else if names.iter().any(|n| n == "kappa") {
        CountFamily::NegBinomial
    } else {
        return Err(Error::Invalid("draw archive has neither `lambda` nor `kappa`".into()));
    };
    let expected = ModelParams::scalar_names(&columns, family);
    let mut got: Vec<&String> = names.iter().collect();
    let mut want: Vec<&String> = expected.iter().collect();
    got.sort();
    want.sort();
    if got != want {
        return Err(Error::Invalid(format!("draw archive parameters {names:?} do not match {expected:?}")));
    }
    Ok(Layout { family, columns })
}

fn params_from_scalars(v: &[f64], p: usize) -> ModelParams {
    ModelParams {
        gamma: v[..p].to_vec(),
        beta: v[p..2 * p].to_vec(),
        lambda: v[2 * p],
        sigma2_y: v[2 * p + 1],
        sigma_b: Sym2::new(v[2 * p + 2], v[2 * p + 4], v[2 * p + 3]),
    }
}

/// Read an archive written by [`write_draws_csv`]; chains and iterations
/// must appear in the order they were written.
pub fn read_draws_csv<R: Read>(r: R) -> Result<PosteriorDraws> {
    let mut rdr = csv::Reader::from_reader(r);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != CSV_HEADER {
        return Err(Error::Invalid(format!("draw archive header {header:?}, expected {CSV_HEADER:?}")));
    }
    // (chain, iter) -> values keyed by name, in first-seen order
    let mut names: Vec<String> = Vec::new();
    let mut rows: Vec<(usize, u64, Vec<(String, f64)>)> = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let parse_err = |m: String| Error::Parse {
            path: "<draws>".into(),
            line: line as u64 + 2,
            message: m,
        };
        if rec.len() != 4 {
            return Err(parse_err(format!("expected 4 fields, found {}", rec.len())));
        }
        let chain: usize = rec[0].parse().map_err(|_| parse_err(format!("bad chain `{}`", &rec[0])))?;
        let iter: u64 = rec[1].parse().map_err(|_| parse_err(format!("bad iter `{}`", &rec[1])))?;
        let value: f64 = rec[3].parse().map_err(|_| parse_err(format!("bad value `{}`", &rec[3])))?;
        let name = rec[2].to_string();
        if !names.contains(&name) {
            names.push(name.clone());
        }
        match rows.last_mut() {
            Some((c, i, vals)) if *c == chain && *i == iter => vals.push((name, value)),
            _ => rows.push((chain, iter, vec![(name, value)])),
        }
    }
    let layout = layout_from_names(&names)?;
    let order = ModelParams::scalar_names(&layout.columns, layout.family);
    let p = layout.columns.len();
    let mut chains: Vec<ChainDraws> = Vec::new();
    for (chain, iter, vals) in rows {
        let mut scalars = Vec::with_capacity(order.len());
        for name in &order {
            let v = vals
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, v)| *v)
                .ok_or_else(|| Error::Invalid(format!("chain {chain} iter {iter}: missing `{name}`")))?;
            scalars.push(v);
        }
        while chains.len() <= chain {
            chains.push(ChainDraws {
                iters: Vec::new(),
                params: Vec::new(),
                acceptance: None,
            });
        }
        chains[chain].iters.push(iter);
        chains[chain].params.push(params_from_scalars(&scalars, p));
    }
    Ok(PosteriorDraws {
        family: layout.family,
        columns: layout.columns,
        chains,
    })
}

/// Binary archive: magic, JSON header length (u64 LE), JSON header, then per
/// chain a u64 draw count followed by `iter: u64` and the scalars as f64 LE.
pub fn write_draws_binary<W: Write>(draws: &PosteriorDraws, mut w: W) -> Result<()> {
    let io = |e| Error::io("<draws.bin>", e);
    let header = serde_json::json!({
        "family": draws.family,
        "columns": draws.columns,
        "chains": draws.chains.len(),
    })
    .to_string();
    w.write_all(MAGIC).map_err(io)?;
    w.write_all(&(header.len() as u64).to_le_bytes()).map_err(io)?;
    w.write_all(header.as_bytes()).map_err(io)?;
    for chain in &draws.chains {
        w.write_all(&(chain.params.len() as u64).to_le_bytes()).map_err(io)?;
        for (it, p) in chain.iters.iter().zip(&chain.params) {
            w.write_all(&it.to_le_bytes()).map_err(io)?;
            for v in p.scalars() {
                w.write_all(&v.to_le_bytes()).map_err(io)?;
            }
        }
    }
    w.flush().map_err(io)
}

pub fn read_draws_binary<R: Read>(mut r: R) -> Result<PosteriorDraws> {
    let io = |e| Error::io("<draws.bin>", e);
    let mut buf8 = [0u8; 8];
    r.read_exact(&mut buf8).map_err(io)?;
    if &buf8 != MAGIC {
        return Err(Error::Invalid("not a binary draw archive".into()));
    }
    r.read_exact(&mut buf8).map_err(io)?;
    let len = u64::from_le_bytes(buf8) as usize;
    let mut header = vec![0u8; len];
    r.read_exact(&mut header).map_err(io)?;
    #[derive(serde::Deserialize)]
    struct Header {
        family: CountFamily,
        columns: Vec<String>,
        chains: usize,
    }
    let h: Header = serde_json::from_slice(&header)?;
    let k = ModelParams::scalar_names(&h.columns, h.family).len();
    let p = h.columns.len();
    let mut chains = Vec::with_capacity(h.chains);
    for _ in 0..h.chains {
        r.read_exact(&mut buf8).map_err(io)?;
        let m = u64::from_le_bytes(buf8) as usize;
        let mut iters = Vec::with_capacity(m);
        let mut params = Vec::with_capacity(m);
        let mut vals = vec![0.0; k];
        for _ in 0..m {
            r.read_exact(&mut buf8).map_err(io)?;
            iters.push(u64::from_le_bytes(buf8));
            for v in vals.iter_mut() {
                r.read_exact(&mut buf8).map_err(io)?;
                *v = f64::from_le_bytes(buf8);
            }
            params.push(params_from_scalars(&vals, p));
        }
        chains.push(ChainDraws {
            iters,
            params,
            acceptance: None,
        });
    }
    Ok(PosteriorDraws {
        family: h.family,
        columns: h.columns,
        chains,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_draws() -> PosteriorDraws {
        let mk = |x: f64| ModelParams {
            gamma: vec![0.1 + x, -1.0 / 3.0],
            beta: vec![2.5, x * 1e-17],
            lambda: 0.09 + x / 7.0,
            sigma2_y: 0.47,
            sigma_b: Sym2::from_var_corr(0.82, 0.28, 0.41),
        };
        PosteriorDraws {
            family: CountFamily::GenPoisson,
            columns: vec!["intercept".into(), "male".into()],
            chains: (0..2)
                .map(|c| ChainDraws {
                    iters: vec![5, 10, 15],
                    params: (0..3).map(|i| mk(c as f64 + i as f64 * 0.1)).collect(),
                    acceptance: None,
                })
                .collect(),
        }
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let d = sample_draws();
        let mut buf = Vec::new();
        write_draws_csv(&d, &mut buf).unwrap();
        let back = read_draws_csv(buf.as_slice()).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn binary_round_trip_is_bit_exact() {
        let d = sample_draws();
        let mut buf = Vec::new();
        write_draws_binary(&d, &mut buf).unwrap();
        assert_eq!(read_draws_binary(buf.as_slice()).unwrap(), d);
    }

    #[test]
    fn missing_parameter_rejected() {
        let text = "chain,iter,param,value\n0,1,gamma.x,1\n0,1,beta.x,1\n";
        assert!(read_draws_csv(text.as_bytes()).is_err());
    }
}
