//! Dataset cache files.
//!
//! A cache is a CSV file preceded by `#` lines:
//!
//! ```text
//! # generator: {"generator":"two_moons","n":500,...}
//! # classes: 2
//! # image: 1x16x16            (raster datasets only)
//! domain,label,x0,x1,...
//! source,0,0.5377,-0.1021
//! target,1,...
//! ```
//!
//! The generator line is the JSON form of the dataset section; a cache whose
//! descriptor differs from the requested one is regenerated. Values are
//! written in shortest round-trip form, so a loaded pair equals the generated
//! one bit for bit.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, ensure, Context, Result};
use sha2::{Digest, Sha256};
use uda_core::data::{DatasetSpec, Domain, DomainPair, ImageDims, LabeledSet};
use uda_core::Tensor;

pub fn cache_path(dir: &Path, spec: &DatasetSpec) -> Result<PathBuf> {
    let json = serde_json::to_string(spec)?;
    let digest = Sha256::digest(json.as_bytes());
    let short: String = digest.iter().take(6).map(|b| format!("{b:02x}")).collect();
    Ok(dir.join(format!("{}-{short}.csv", spec.name())))
}

pub fn write(path: &Path, pair: &DomainPair) -> Result<()> {
    let mut out = String::new();
    writeln!(out, "# generator: {}", serde_json::to_string(pair.descriptor())?)?;
    writeln!(out, "# classes: {}", pair.classes())?;
    if let Some(d) = pair.source().image() {
        writeln!(out, "# image: {}x{}x{}", d.channels, d.height, d.width)?;
    }
    let width = pair.source().features();
    out.push_str("domain,label");
    for j in 0..width {
        write!(out, ",x{j}")?;
    }
    out.push('\n');
    for (domain, label, row) in pair.storage_rows() {
        write!(out, "{},{label}", domain.name())?;
        for v in row {
            write!(out, ",{v}")?;
        }
        out.push('\n');
    }
    std::fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

pub fn read(path: &Path) -> Result<DomainPair> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse(&text).with_context(|| format!("in {}", path.display()))
}

fn header<'a>(line: Option<&&'a str>, key: &str) -> Option<&'a str> {
    line?.strip_prefix("# ")?.strip_prefix(key)?.strip_prefix(": ")
}

pub fn parse(text: &str) -> Result<DomainPair> {
    let comments: Vec<&str> = text.lines().take_while(|l| l.starts_with('#')).collect();
    let spec_json = header(comments.first(), "generator").ok_or_else(|| anyhow!("missing `# generator:` line"))?;
    let spec: DatasetSpec = serde_json::from_str(spec_json).context("generator descriptor")?;
    let classes: usize = header(comments.get(1), "classes")
        .ok_or_else(|| anyhow!("missing `# classes:` line"))?
        .parse()
        .context("class count")?;
    let image = match comments.get(2) {
        Some(line) => {
            let dims = header(Some(line), "image").ok_or_else(|| anyhow!("unexpected header `{line}`"))?;
            let parts: Vec<usize> = dims
                .split('x')
                .map(str::parse)
                .collect::<Result<_, _>>()
                .context("image dims")?;
            ensure!(parts.len() == 3, "image dims need channels x height x width");
            Some(ImageDims {
                channels: parts[0],
                height: parts[1],
                width: parts[2],
            })
        }
        None => None,
    };
    let body: String = text.lines().skip(comments.len()).map(|l| format!("{l}\n")).collect();
    let mut reader = csv::Reader::from_reader(body.as_bytes());
    let width = reader.headers()?.len().checked_sub(2).ok_or_else(|| anyhow!("too few columns"))?;
    let mut sides = [(Vec::new(), Vec::new()), (Vec::new(), Vec::new())];
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let side = match &rec[0] {
            "source" => 0,
            "target" => 1,
            other => bail!("row {}: unknown domain `{other}`", i + 1),
        };
        let label: usize = rec[1].parse().with_context(|| format!("row {}: label", i + 1))?;
        sides[side].1.push(label);
        for v in rec.iter().skip(2) {
            sides[side].0.push(v.parse::<f64>().with_context(|| format!("row {}: value `{v}`", i + 1))?);
        }
    }
    let build = |(data, labels): (Vec<f64>, Vec<usize>), domain: Domain| -> Result<LabeledSet> {
        let set = LabeledSet::new(Tensor::matrix(labels.len(), width, data)?, labels, classes, domain)?;
        Ok(match image {
            Some(d) => set.with_image(d)?,
            None => set,
        })
    };
    let [s, t] = sides;
    Ok(DomainPair::new(build(s, Domain::Source)?, build(t, Domain::Target)?, spec)?)
}

/// Loads the cached pair for `spec` from `dir`, generating and writing it
/// first when the file is missing or describes another dataset.
pub fn load_or_generate(dir: &Path, spec: &DatasetSpec) -> Result<DomainPair> {
    let path = cache_path(dir, spec)?;
    if path.exists() {
        if let Ok(pair) = read(&path) {
            if pair.descriptor() == spec {
                return Ok(pair);
            }
        }
    }
    let pair = spec.generate()?;
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    write(&path, &pair)?;
    Ok(pair)
}
