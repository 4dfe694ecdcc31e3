//! Result rows and their CSV round-trip.
//!
//! Floats are written with Rust's shortest-round-trip `Display`, so a saved
//! file loads back bit-identically.

use std::path::Path;

use crate::error::{Error, Result};

pub const CSV_HEADER: &str = "attack,victim,transfer,defense,norm_type,epsilon,gamma,kappa,\
n_samples,success_rate,mean_linf,mean_l2,mean_chamfer_sym,seed";

/// One evaluated cell: an attack optimized on `victim`, scored on
/// `transfer` behind `defense` at budget `epsilon`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRecord {
    pub attack: String,
    pub victim: String,
    pub transfer: String,
    /// `none` or a defense name.
    pub defense: String,
    pub norm_type: String,
    pub epsilon: f32,
    pub gamma: f32,
    pub kappa: f32,
    pub n_samples: usize,
    pub success_rate: f64,
    pub mean_linf: f64,
    pub mean_l2: f64,
    pub mean_chamfer_sym: f64,
    pub seed: u64,
}

fn check_field(name: &str, value: &str) -> Result<()> {
    if value.contains(',') || value.contains('\n') {
        return Err(Error::invalid_input(format!(
            "{name} `{value}` may not contain commas or newlines"
        )));
    }
    Ok(())
}

impl ResultRecord {
    fn to_csv_line(&self) -> Result<String> {
        check_field("attack", &self.attack)?;
        check_field("victim", &self.victim)?;
        check_field("transfer", &self.transfer)?;
        check_field("defense", &self.defense)?;
        check_field("norm_type", &self.norm_type)?;
        Ok(format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.attack,
            self.victim,
            self.transfer,
            self.defense,
            self.norm_type,
            self.epsilon,
            self.gamma,
            self.kappa,
            self.n_samples,
            self.success_rate,
            self.mean_linf,
            self.mean_l2,
            self.mean_chamfer_sym,
            self.seed
        ))
    }

    fn from_csv_line(line: &str, lineno: usize) -> Result<Self> {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 14 {
            return Err(Error::invalid_input(format!(
                "line {lineno}: expected 14 fields, got {}",
                fields.len()
            )));
        }
        fn num<T: std::str::FromStr>(s: &str, what: &str, lineno: usize) -> Result<T> {
            s.parse().map_err(|_| {
                Error::invalid_input(format!("line {lineno}: bad {what} `{s}`"))
            })
        }
        Ok(Self {
            attack: fields[0].to_string(),
            victim: fields[1].to_string(),
            transfer: fields[2].to_string(),
            defense: fields[3].to_string(),
            norm_type: fields[4].to_string(),
            epsilon: num(fields[5], "epsilon", lineno)?,
            gamma: num(fields[6], "gamma", lineno)?,
            kappa: num(fields[7], "kappa", lineno)?,
            n_samples: num(fields[8], "n_samples", lineno)?,
            success_rate: num(fields[9], "success_rate", lineno)?,
            mean_linf: num(fields[10], "mean_linf", lineno)?,
            mean_l2: num(fields[11], "mean_l2", lineno)?,
            mean_chamfer_sym: num(fields[12], "mean_chamfer_sym", lineno)?,
            seed: num(fields[13], "seed", lineno)?,
        })
    }
}

pub fn save_records(path: &Path, records: &[ResultRecord]) -> Result<()> {
    let mut text = String::from(CSV_HEADER);
    text.push('\n');
    for r in records {
        text.push_str(&r.to_csv_line()?);
        text.push('\n');
    }
    std::fs::write(path, text)?;
    Ok(())
}

pub fn load_records(path: &Path) -> Result<Vec<ResultRecord>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == CSV_HEADER => {}
        _ => {
            return Err(Error::invalid_input(format!(
                "{}: missing or unexpected CSV header",
                path.display()
            )))
        }
    }
    lines
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| ResultRecord::from_csv_line(l, i + 1))
        .collect()
}
