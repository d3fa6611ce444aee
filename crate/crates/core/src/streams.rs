//! Synthetic change streams and data ingestion (CSV, IDX).

use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::Path;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{check_dim, invalid, Error, Result};
use crate::seed::{self, Rng};

/// A source of observations: fills `out` with the `t`-th point (1-based)
/// drawn from `rng`.
pub trait StreamSource: Sync {
    fn dim(&self) -> usize;
    fn validate(&self) -> Result<()>;
    fn fill(&self, rng: &mut Rng, t: u64, out: &mut [f64]);
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mean: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Family {
    Gaussian,
    /// Per-coordinate Laplace with scale `b = scale[i]`, by inverse CDF.
    Laplace,
    /// Uniform on the cube `mean ± scale`.
    Uniform,
    /// Component mean plus `scale ⊙ N(0, I)`, offset by `mean`.
    GaussianMixture(Vec<MixtureComponent>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistributionSpec {
    pub family: Family,
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl DistributionSpec {
    pub fn standard_normal(dim: usize) -> Self {
        Self::gaussian(vec![0.0; dim], vec![1.0; dim])
    }

    pub fn gaussian(mean: Vec<f64>, scale: Vec<f64>) -> Self {
        Self {
            family: Family::Gaussian,
            mean,
            scale,
        }
    }

    pub fn laplace(mean: Vec<f64>, scale: Vec<f64>) -> Self {
        Self {
            family: Family::Laplace,
            mean,
            scale,
        }
    }

    pub fn uniform(mean: Vec<f64>, half_width: Vec<f64>) -> Self {
        Self {
            family: Family::Uniform,
            mean,
            scale: half_width,
        }
    }

    /// Equal-weight two-component mixture with means `±(sigma/2)·1` and
    /// identity covariance.
    pub fn mixed_normal(dim: usize, sigma: f64) -> Self {
        let comp = |s: f64| MixtureComponent {
            weight: 0.5,
            mean: vec![s * sigma / 2.0; dim],
        };
        Self {
            family: Family::GaussianMixture(vec![comp(1.0), comp(-1.0)]),
            mean: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }

    /// Same law translated by `delta · 1`.
    pub fn shifted(&self, delta: f64) -> Self {
        let mut out = self.clone();
        for m in &mut out.mean {
            *m += delta;
        }
        out
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if d == 0 {
            return Err(invalid("distribution dimension must be at least 1"));
        }
        check_dim(d, self.scale.len())?;
        if self.mean.iter().any(|m| !m.is_finite()) {
            return Err(invalid("distribution mean must be finite"));
        }
        if self.scale.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(invalid("distribution scales must be positive"));
        }
        if let Family::GaussianMixture(comps) = &self.family {
            if comps.is_empty() {
                return Err(invalid("mixture needs at least one component"));
            }
            let mut total = 0.0;
            for c in comps {
                check_dim(d, c.mean.len())?;
                if !(c.weight >= 0.0) {
                    return Err(invalid("mixture weights must be nonnegative"));
                }
                total += c.weight;
            }
            if (total - 1.0).abs() > 1e-9 {
                return Err(invalid(format!("mixture weights sum to {total}, not 1")));
            }
        }
        Ok(())
    }

    pub fn sample_into(&self, rng: &mut Rng, out: &mut [f64]) {
        match &self.family {
            Family::Gaussian => {
                for ((o, m), s) in out.iter_mut().zip(&self.mean).zip(&self.scale) {
                    let z: f64 = StandardNormal.sample(rng);
                    *o = m + s * z;
                }
            }
            Family::Laplace => {
                for ((o, m), s) in out.iter_mut().zip(&self.mean).zip(&self.scale) {
                    // u ∈ (-½, ½); x = μ − b·sgn(u)·ln(1 − 2|u|)
                    let u: f64 = rng.random::<f64>() - 0.5;
                    *o = m - s * u.signum() * (1.0 - 2.0 * u.abs()).ln();
                }
            }
            Family::Uniform => {
                for ((o, m), s) in out.iter_mut().zip(&self.mean).zip(&self.scale) {
                    let u: f64 = rng.random::<f64>();
                    *o = m + s * (2.0 * u - 1.0);
                }
            }
            Family::GaussianMixture(comps) => {
                let u: f64 = rng.random::<f64>();
                let mut acc = 0.0;
                let mut pick = &comps[comps.len() - 1];
                for c in comps {
                    acc += c.weight;
                    if u < acc {
                        pick = c;
                        break;
                    }
                }
                for (i, o) in out.iter_mut().enumerate() {
                    let z: f64 = StandardNormal.sample(rng);
                    *o = self.mean[i] + pick.mean[i] + self.scale[i] * z;
                }
            }
        }
    }

    pub fn sample(&self, rng: &mut Rng) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.sample_into(rng, &mut out);
        out
    }

    pub fn sample_n(&self, rng: &mut Rng, n: usize) -> Vec<Vec<f64>> {
        (0..n).map(|_| self.sample(rng)).collect()
    }
}

impl StreamSource for DistributionSpec {
    fn dim(&self) -> usize {
        DistributionSpec::dim(self)
    }

    fn validate(&self) -> Result<()> {
        DistributionSpec::validate(self)
    }

    fn fill(&self, rng: &mut Rng, _t: u64, out: &mut [f64]) {
        self.sample_into(rng, out)
    }
}

/// Points `1..=eta` follow `pre`, later points follow `post`. `eta = None`
/// is a stream without change.
#[derive(Debug, Clone, PartialEq)]
pub struct ChangeStreamSpec {
    pub pre: DistributionSpec,
    pub post: DistributionSpec,
    pub eta: Option<u64>,
    pub seed: u64,
}

impl ChangeStreamSpec {
    pub fn null(pre: DistributionSpec, seed: u64) -> Self {
        Self {
            post: pre.clone(),
            pre,
            eta: None,
            seed,
        }
    }

    /// A fresh generator for this stream, starting at `t = 1`.
    pub fn iter(&self) -> Result<ChangeStream<'_>> {
        StreamSource::validate(self)?;
        Ok(ChangeStream {
            spec: self,
            rng: seed::rng(self.seed),
            t: 0,
        })
    }
}

impl StreamSource for ChangeStreamSpec {
    fn dim(&self) -> usize {
        self.pre.dim()
    }

    fn validate(&self) -> Result<()> {
        self.pre.validate()?;
        self.post.validate()?;
        check_dim(self.pre.dim(), self.post.dim())?;
        if self.eta == Some(0) {
            return Err(invalid("change index must be at least 1"));
        }
        Ok(())
    }

    fn fill(&self, rng: &mut Rng, t: u64, out: &mut [f64]) {
        match self.eta {
            Some(eta) if t > eta => self.post.sample_into(rng, out),
            _ => self.pre.sample_into(rng, out),
        }
    }
}

pub struct ChangeStream<'a> {
    spec: &'a ChangeStreamSpec,
    rng: Rng,
    t: u64,
}

impl Iterator for ChangeStream<'_> {
    type Item = Vec<f64>;

    fn next(&mut self) -> Option<Vec<f64>> {
        self.t += 1;
        let mut out = vec![0.0; self.spec.dim()];
        self.spec.fill(&mut self.rng, self.t, &mut out);
        Some(out)
    }
}

pub fn draw_stream(spec: &ChangeStreamSpec, length: usize) -> Result<Vec<Vec<f64>>> {
    if length == 0 {
        return Err(invalid("stream length must be at least 1"));
    }
    Ok(spec.iter()?.take(length).collect())
}

/// Incremental CSV reader yielding one observation per row.
///
/// A first row containing any non-numeric cell is treated as a header and
/// skipped. Row numbers in errors are 1-based line numbers of the input.
pub struct CsvPoints<R: Read> {
    records: csv::StringRecordsIntoIter<R>,
    dim: Option<usize>,
    first: bool,
}

impl<R: Read> CsvPoints<R> {
    pub fn new(reader: R) -> Self {
        let rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        Self {
            records: rdr.into_records(),
            dim: None,
            first: true,
        }
    }

    pub fn dim(&self) -> Option<usize> {
        self.dim
    }
}

impl<R: Read> Iterator for CsvPoints<R> {
    type Item = Result<Vec<f64>>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let rec = match self.records.next()? {
                Ok(r) => r,
                Err(e) => {
                    let row = e.position().map(|p| p.line() as usize).unwrap_or(0);
                    return Some(Err(Error::CsvCell {
                        row,
                        column: 0,
                        message: e.to_string(),
                    }));
                }
            };
            let row = rec.position().map(|p| p.line() as usize).unwrap_or(0);
            let first = std::mem::replace(&mut self.first, false);
            let parsed: std::result::Result<Vec<f64>, usize> = rec
                .iter()
                .enumerate()
                .map(|(j, cell)| cell.parse::<f64>().map_err(|_| j + 1))
                .collect();
            let values = match parsed {
                Ok(v) => v,
                Err(_) if first => continue,
                Err(column) => {
                    return Some(Err(Error::CsvCell {
                        row,
                        column,
                        message: format!("cannot parse {:?} as a number", &rec[column - 1]),
                    }))
                }
            };
            match self.dim {
                None => self.dim = Some(values.len()),
                Some(d) if d != values.len() => {
                    return Some(Err(Error::RaggedRow {
                        row,
                        expected: d,
                        found: values.len(),
                    }))
                }
                _ => {}
            }
            return Some(Ok(values));
        }
    }
}

pub fn read_csv<R: Read>(reader: R) -> Result<Vec<Vec<f64>>> {
    CsvPoints::new(reader).collect()
}

pub fn read_csv_path(path: impl AsRef<Path>) -> Result<Vec<Vec<f64>>> {
    read_csv(BufReader::new(File::open(path)?))
}

/// Writes one comma-separated row per point using shortest round-trip
/// float formatting.
pub fn write_csv<P: AsRef<[f64]>, W: Write>(points: &[P], mut w: W) -> Result<()> {
    let mut line = String::new();
    for p in points {
        line.clear();
        for (j, v) in p.as_ref().iter().enumerate() {
            if j > 0 {
                line.push(',');
            }
            line.push_str(&v.to_string());
        }
        line.push('\n');
        w.write_all(line.as_bytes())?;
    }
    Ok(())
}

const IDX_UBYTE: u8 = 0x08;

/// Parses an unsigned-byte IDX file: first dimension indexes items, the
/// remaining dimensions are flattened row-major and scaled by 1/255.
pub fn parse_idx(bytes: &[u8]) -> Result<Vec<Vec<f64>>> {
    if bytes.len() < 4 {
        return Err(Error::IdxTruncated {
            expected: 4,
            actual: bytes.len(),
        });
    }
    if bytes[0] != 0 || bytes[1] != 0 {
        return Err(Error::Idx(format!(
            "bad magic bytes {:#04x} {:#04x}",
            bytes[0], bytes[1]
        )));
    }
    if bytes[2] != IDX_UBYTE {
        return Err(Error::Idx(format!(
            "unsupported type code {:#04x}, only unsigned byte (0x08) is supported",
            bytes[2]
        )));
    }
    let ndims = bytes[3] as usize;
    if ndims == 0 {
        return Err(Error::Idx("zero dimensions".into()));
    }
    let header = 4 + 4 * ndims;
    if bytes.len() < header {
        return Err(Error::IdxTruncated {
            expected: header,
            actual: bytes.len(),
        });
    }
    let dims: Vec<usize> = bytes[4..header]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect();
    let items = dims[0];
    let d: usize = dims[1..].iter().product();
    let payload = items
        .checked_mul(d)
        .ok_or_else(|| Error::Idx("dimension product overflows".into()))?;
    let expected = header + payload;
    if bytes.len() < expected {
        return Err(Error::IdxTruncated {
            expected,
            actual: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(Error::Idx(format!(
            "{} trailing bytes after payload",
            bytes.len() - expected
        )));
    }
    if d == 0 {
        return Ok(vec![Vec::new(); items]);
    }
    Ok(bytes[header..]
        .chunks_exact(d)
        .map(|row| row.iter().map(|&b| f64::from(b) / 255.0).collect())
        .collect())
}

pub fn read_idx(path: impl AsRef<Path>) -> Result<Vec<Vec<f64>>> {
    parse_idx(&std::fs::read(path)?)
}

/// Encodes items of shape `item_shape` as an unsigned-byte IDX file.
pub fn encode_idx(item_shape: &[u32], items: &[Vec<u8>]) -> Result<Vec<u8>> {
    let d: usize = item_shape.iter().map(|&s| s as usize).product();
    if items.iter().any(|it| it.len() != d) {
        return Err(invalid("item length does not match shape"));
    }
    let ndims = item_shape.len() + 1;
    if ndims > u8::MAX as usize {
        return Err(invalid("too many dimensions"));
    }
    let mut out = vec![0, 0, IDX_UBYTE, ndims as u8];
    out.extend_from_slice(&(items.len() as u32).to_be_bytes());
    for s in item_shape {
        out.extend_from_slice(&s.to_be_bytes());
    }
    for it in items {
        out.extend_from_slice(it);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(pre: DistributionSpec, post: DistributionSpec, eta: Option<u64>) -> ChangeStreamSpec {
        ChangeStreamSpec {
            pre,
            post,
            eta,
            seed: 17,
        }
    }

    #[test]
    fn null_stream_and_boundary() {
        // pre and post with disjoint supports make the origin of every point visible
        let pre = DistributionSpec::uniform(vec![0.0], vec![1.0]);
        let post = DistributionSpec::uniform(vec![10.0], vec![1.0]);
        let s = draw_stream(&spec(pre.clone(), post.clone(), None), 50).unwrap();
        assert!(s.iter().all(|p| p[0].abs() <= 1.0));
        let s = draw_stream(&spec(pre.clone(), post.clone(), Some(1)), 50).unwrap();
        assert!(s[0][0].abs() <= 1.0);
        assert!(s[1..].iter().all(|p| p[0] >= 9.0));
        let s = draw_stream(&spec(pre, post, Some(20)), 50).unwrap();
        assert!(s[..20].iter().all(|p| p[0] <= 1.0));
        assert!(s[20..].iter().all(|p| p[0] >= 9.0));
    }

    #[test]
    fn streams_are_deterministic() {
        let pre = DistributionSpec::mixed_normal(3, 2.0);
        let post = DistributionSpec::laplace(vec![1.0; 3], vec![0.5; 3]);
        let a = draw_stream(&spec(pre.clone(), post.clone(), Some(10)), 40).unwrap();
        let b = draw_stream(&spec(pre.clone(), post.clone(), Some(10)), 40).unwrap();
        assert_eq!(a, b);
        let mut other = spec(pre, post, Some(10));
        other.seed = 18;
        assert_ne!(a, draw_stream(&other, 40).unwrap());
    }

    #[test]
    fn invalid_specs() {
        let ok = DistributionSpec::standard_normal(2);
        assert!(draw_stream(&spec(ok.clone(), ok.clone(), Some(0)), 5).is_err());
        assert!(draw_stream(&spec(ok.clone(), ok.clone(), None), 0).is_err());
        let bad = DistributionSpec::gaussian(vec![0.0, 0.0], vec![1.0, 0.0]);
        assert!(draw_stream(&spec(ok.clone(), bad, None), 5).is_err());
        let other_dim = DistributionSpec::standard_normal(3);
        assert!(draw_stream(&spec(ok.clone(), other_dim, None), 5).is_err());
        let mut mix = DistributionSpec::mixed_normal(2, 1.0);
        if let Family::GaussianMixture(c) = &mut mix.family {
            c[0].weight = 0.7;
        }
        assert!(mix.validate().is_err());
    }

    #[test]
    fn gaussian_moments() {
        let mean = vec![1.0, -2.0, 0.5];
        let scale = vec![1.0, 2.0, 0.5];
        let dist = DistributionSpec::gaussian(mean.clone(), scale.clone());
        let mut rng = seed::rng(4);
        let n = 100_000;
        let pts = dist.sample_n(&mut rng, n);
        for c in 0..3 {
            let m: f64 = pts.iter().map(|p| p[c]).sum::<f64>() / n as f64;
            let v: f64 = pts.iter().map(|p| (p[c] - m).powi(2)).sum::<f64>() / n as f64;
            assert!((m - mean[c]).abs() < 0.05 * scale[c], "mean {c}: {m}");
            assert!(
                (v / (scale[c] * scale[c]) - 1.0).abs() < 0.05,
                "var {c}: {v}"
            );
        }
        // off-diagonal covariance near zero
        let cov: f64 = pts.iter().map(|p| (p[0] - 1.0) * (p[1] + 2.0)).sum::<f64>() / n as f64;
        assert!(cov.abs() < 0.05 * 2.0);
    }

    #[test]
    fn other_family_moments() {
        let mut rng = seed::rng(5);
        let n = 100_000;
        let lap = DistributionSpec::laplace(vec![0.0], vec![2.0]).sample_n(&mut rng, n);
        let var: f64 = lap.iter().map(|p| p[0] * p[0]).sum::<f64>() / n as f64;
        assert!((var / 8.0 - 1.0).abs() < 0.05, "laplace var {var}");
        let uni = DistributionSpec::uniform(vec![0.0], vec![2.0]).sample_n(&mut rng, n);
        assert!(uni.iter().all(|p| p[0].abs() <= 2.0));
        let var: f64 = uni.iter().map(|p| p[0] * p[0]).sum::<f64>() / n as f64;
        assert!((var / (4.0 / 3.0) - 1.0).abs() < 0.05);
        // mixture ±1 with unit noise: variance 1 + 1
        let mix = DistributionSpec::mixed_normal(1, 2.0).sample_n(&mut rng, n);
        let var: f64 = mix.iter().map(|p| p[0] * p[0]).sum::<f64>() / n as f64;
        assert!((var / 2.0 - 1.0).abs() < 0.05);
    }

    #[test]
    fn csv_basic() {
        let pts = read_csv("1.0,2.0\n3.0,4.0".as_bytes()).unwrap();
        assert_eq!(pts, vec![vec![1.0, 2.0], vec![3.0, 4.0]]);
        let pts = read_csv("x,y\n1,2\n".as_bytes()).unwrap();
        assert_eq!(pts, vec![vec![1.0, 2.0]]);
        assert!(read_csv("".as_bytes()).unwrap().is_empty());
    }

    #[test]
    fn csv_errors_name_rows() {
        match read_csv("1,2\n3,4\n5\n".as_bytes()) {
            Err(Error::RaggedRow {
                row: 3,
                expected: 2,
                found: 1,
            }) => {}
            other => panic!("unexpected {other:?}"),
        }
        match read_csv("1,2\n3,abc\n".as_bytes()) {
            Err(Error::CsvCell {
                row: 2, column: 2, ..
            }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn idx_basic() {
        let bytes = encode_idx(&[2, 2], &[vec![0, 255, 51, 102], vec![1, 2, 3, 4]]).unwrap();
        let pts = parse_idx(&bytes).unwrap();
        assert_eq!(pts.len(), 2);
        assert_eq!(pts[0], vec![0.0, 1.0, 0.2, 0.4]);
        assert_eq!(pts[1].len(), 4);
    }

    #[test]
    fn idx_errors() {
        let bytes = encode_idx(&[2, 2], &[vec![0; 4], vec![0; 4]]).unwrap();
        match parse_idx(&bytes[..bytes.len() - 3]) {
            Err(Error::IdxTruncated { expected, actual }) => {
                assert_eq!(expected, 4 + 12 + 8);
                assert_eq!(actual, 4 + 12 + 5);
            }
            other => panic!("unexpected {other:?}"),
        }
        let mut bad = bytes.clone();
        bad[0] = 1;
        assert!(matches!(parse_idx(&bad), Err(Error::Idx(_))));
        let mut bad = bytes.clone();
        bad[2] = 0x0D;
        assert!(matches!(parse_idx(&bad), Err(Error::Idx(_))));
        assert!(matches!(
            parse_idx(&[0, 0]),
            Err(Error::IdxTruncated { .. })
        ));
    }
}
