//! Dataset manifests: one `clean_path<TAB>spec_json<TAB>seed` record per line.
//!
//! Relative image paths resolve against the manifest's directory. Blank lines
//! and lines starting with `#` are skipped.

use std::fs;
use std::path::{Path, PathBuf};

use adair_core::degrade::{DegradationSpec, SamplePair};

use crate::error::{io, Error, Result};
use crate::image::read_image;

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub clean: PathBuf,
    pub spec: DegradationSpec,
    pub seed: u64,
}

pub fn parse_manifest(text: &str, base: &Path) -> Result<Vec<ManifestEntry>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |message: String| Error::Manifest { line: i + 1, message };
        let fields: Vec<&str> = line.split('\t').collect();
        let [path, spec, seed] = fields[..] else {
            return Err(err(format!("expected 3 tab-separated fields, got {}", fields.len())));
        };
        let spec: DegradationSpec = serde_json::from_str(spec).map_err(|e| err(format!("degradation spec: {e}")))?;
        let seed = seed.trim().parse().map_err(|_| err(format!("seed {seed:?}")))?;
        out.push(ManifestEntry {
            clean: base.join(path),
            spec,
            seed,
        });
    }
    Ok(out)
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = fs::read_to_string(path).map_err(io(path))?;
    parse_manifest(&text, path.parent().unwrap_or(Path::new(".")))
}

pub fn format_entry(entry: &ManifestEntry) -> String {
    let spec = serde_json::to_string(&entry.spec).expect("degradation specs always serialise");
    format!("{}\t{}\t{}", entry.clean.display(), spec, entry.seed)
}

/// Read every clean image and synthesise its degraded partner.
pub fn load_pairs(entries: &[ManifestEntry]) -> Result<Vec<SamplePair>> {
    entries
        .iter()
        .map(|e| Ok(SamplePair::synthesize(read_image(&e.clean)?, &e.spec, e.seed)?))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use adair_core::degrade::RainSpec;

    #[test]
    fn round_trip_and_defaults() {
        let entries = vec![
            ManifestEntry {
                clean: PathBuf::from("a.ppm"),
                spec: DegradationSpec::noise(25.0),
                seed: 3,
            },
            ManifestEntry {
                clean: PathBuf::from("b.ppm"),
                spec: DegradationSpec::Composite {
                    steps: vec![DegradationSpec::rain(RainSpec::default()), DegradationSpec::noise(50.0)],
                },
                seed: 4,
            },
        ];
        let text: Vec<String> = entries.iter().map(format_entry).collect();
        assert_eq!(parse_manifest(&text.join("\n"), Path::new("")).unwrap(), entries);

        let short = "x.ppm\t{\"kind\":\"rain\",\"count\":5}\t1\n# comment\n\nx.ppm\t{\"kind\":\"haze\",\"beta\":1.0,\"airlight\":0.8}\t2";
        let parsed = parse_manifest(short, Path::new("/data")).unwrap();
        assert_eq!(parsed[0].clean, PathBuf::from("/data/x.ppm"));
        assert_eq!(
            parsed[0].spec,
            DegradationSpec::rain(RainSpec {
                count: 5,
                ..RainSpec::default()
            })
        );
        assert_eq!(parsed[1].spec, DegradationSpec::haze(1.0, 0.8));
    }

    #[test]
    fn malformed_lines() {
        assert!(matches!(parse_manifest("a.ppm\t{}", Path::new("")), Err(Error::Manifest { line: 1, .. })));
        assert!(matches!(
            parse_manifest("a.ppm\t{\"kind\":\"snow\"}\t1", Path::new("")),
            Err(Error::Manifest { .. })
        ));
        assert!(matches!(
            parse_manifest("\na.ppm\t{\"kind\":\"noise\",\"sigma\":1}\tx", Path::new("")),
            Err(Error::Manifest { line: 2, .. })
        ));
    }
}
