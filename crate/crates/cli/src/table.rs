//! Reading back the CSV files this tool writes.

use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header: Vec<String> = lines
            .next()
            .ok_or_else(|| anyhow!("empty CSV"))?
            .split(',')
            .map(str::to_string)
            .collect();
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            let row: Vec<String> = line.split(',').map(str::to_string).collect();
            if row.len() != header.len() {
                bail!("row {} has {} fields, header has {}", i + 2, row.len(), header.len());
            }
            rows.push(row);
        }
        Ok(Self { header, rows })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("parsing {}", path.display()))
    }

    /// Fails unless the header is exactly `expected`.
    pub fn expect_header(&self, expected: &str) -> Result<()> {
        if self.header.join(",") != expected {
            bail!("schema mismatch: header `{}`, expected `{expected}`", self.header.join(","));
        }
        Ok(())
    }

    pub fn column(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| anyhow!("missing column `{name}`"))
    }

    pub fn floats(&self, name: &str) -> Result<Vec<f64>> {
        let c = self.column(name)?;
        self.rows
            .iter()
            .map(|r| r[c].parse::<f64>().with_context(|| format!("column `{name}`: bad number `{}`", r[c])))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_checks_shape() {
        let t = Table::parse("a,b\n1,2\n3,4\n").unwrap();
        assert_eq!(t.floats("b").unwrap(), vec![2.0, 4.0]);
        assert!(t.expect_header("a,b").is_ok());
        assert!(t.expect_header("a,c").is_err());
        assert!(Table::parse("a,b\n1\n").is_err());
    }
}
