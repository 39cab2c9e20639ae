use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{canonical_modality, DatasetError};

const REQUIRED: [&str; 5] = ["sample_id", "image", "mask", "modality", "concept"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub sample_id: String,
    pub image_path: PathBuf,
    pub gt_mask_path: Option<PathBuf>,
    pub modality: String,
    pub concept: String,
    pub dataset: String,
}

impl Sample {
    /// Key that backends and mocks see: `dataset/sample_id`.
    pub fn source_id(&self) -> String {
        format!("{}/{}", self.dataset, self.sample_id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub dataset: String,
    pub samples: Vec<Sample>,
    pub declared_count: Option<usize>,
}

#[derive(Debug, Deserialize)]
struct Row {
    sample_id: String,
    image: String,
    mask: String,
    modality: String,
    concept: String,
    #[serde(default)]
    dataset: Option<String>,
}

/// Parses `manifest.csv`.
///
/// Header: `sample_id,image,mask,modality,concept[,dataset]`. An empty
/// `mask` cell means no ground truth. Lines starting with `#` are comments;
/// `# dataset=NAME` and `# declared_count=N` set manifest metadata. Without a
/// dataset directive the parent directory name is used.
pub fn load_manifest(path: &Path) -> Result<Manifest, DatasetError> {
    let text = std::fs::read_to_string(path).map_err(|e| DatasetError::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let parse_err = |line: u64, message: String| DatasetError::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };

    let mut dataset = None;
    let mut declared_count = None;
    for (i, line) in text.lines().enumerate() {
        let Some(comment) = line.trim_start().strip_prefix('#') else {
            continue;
        };
        let Some((key, value)) = comment.split_once('=') else {
            continue;
        };
        match key.trim() {
            "dataset" => dataset = Some(value.trim().to_string()),
            "declared_count" => {
                let n = value
                    .trim()
                    .parse()
                    .map_err(|_| parse_err(i as u64 + 1, format!("bad declared_count '{}'", value.trim())))?;
                declared_count = Some(n);
            }
            _ => {}
        }
    }
    let dataset = match dataset {
        Some(d) if !d.is_empty() => d,
        _ => base
            .canonicalize()
            .ok()
            .and_then(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
            .unwrap_or_else(|| "dataset".to_string()),
    };

    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    for col in REQUIRED {
        if !headers.iter().any(|h| h == col) {
            return Err(parse_err(
                headers.position().map_or(1, |p| p.line()),
                format!("missing column '{col}'"),
            ));
        }
    }

    let mut samples = Vec::new();
    let mut seen = BTreeSet::new();
    let mut duplicates = Vec::new();
    let mut missing = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let row: Row = record
            .deserialize(Some(&headers))
            .map_err(|e| parse_err(line, e.to_string()))?;
        if row.sample_id.is_empty() {
            return Err(parse_err(line, "empty sample_id".into()));
        }
        if row.concept.is_empty() {
            return Err(parse_err(line, "empty concept".into()));
        }
        let modality = canonical_modality(&row.modality)
            .ok_or_else(|| parse_err(line, format!("unknown modality '{}'", row.modality)))?;
        if !seen.insert(row.sample_id.clone()) {
            duplicates.push(row.sample_id.clone());
        }
        let image_path = base.join(&row.image);
        if !image_path.is_file() {
            missing.push(image_path.display().to_string());
        }
        let gt_mask_path = (!row.mask.is_empty()).then(|| base.join(&row.mask));
        if let Some(p) = &gt_mask_path {
            if !p.is_file() {
                missing.push(p.display().to_string());
            }
        }
        samples.push(Sample {
            sample_id: row.sample_id,
            image_path,
            gt_mask_path,
            modality: modality.to_string(),
            concept: row.concept,
            dataset: row.dataset.filter(|d| !d.is_empty()).unwrap_or_else(|| dataset.clone()),
        });
    }

    if !duplicates.is_empty() {
        return Err(DatasetError::Duplicate(duplicates));
    }
    if !missing.is_empty() {
        return Err(DatasetError::MissingFiles(missing));
    }
    if let Some(declared) = declared_count {
        if declared != samples.len() {
            return Err(DatasetError::CountMismatch {
                declared,
                actual: samples.len(),
            });
        }
    }
    Ok(Manifest {
        dataset,
        samples,
        declared_count,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fmt::Write as _;

    fn touch(dir: &Path, names: &[&str]) {
        for n in names {
            let p = dir.join(n);
            std::fs::create_dir_all(p.parent().unwrap()).unwrap();
            std::fs::write(p, b"x").unwrap();
        }
    }

    #[test]
    fn three_rows() {
        let dir = tempfile::tempdir().unwrap();
        touch(
            dir.path(),
            &["img/a.png", "img/b.png", "img/c.png", "gt/a.png", "gt/b.png"],
        );
        let csv = "# dataset=ISIC\n\
                   sample_id,image,mask,modality,concept\n\
                   a,img/a.png,gt/a.png,dermoscopy,skin lesion\n\
                   b,img/b.png,gt/b.png,Dermoscopy,skin lesion\n\
                   c,img/c.png,,DERMOSCOPY,skin lesion\n";
        std::fs::write(dir.path().join("manifest.csv"), csv).unwrap();
        let m = load_manifest(&dir.path().join("manifest.csv")).unwrap();
        assert_eq!(m.dataset, "ISIC");
        let ids: Vec<_> = m.samples.iter().map(|s| s.sample_id.as_str()).collect();
        assert_eq!(ids, ["a", "b", "c"]);
        assert!(m.samples.iter().all(|s| s.modality == "Dermoscopy"));
        assert_eq!(m.samples[0].image_path, dir.path().join("img/a.png"));
        assert!(m.samples[2].gt_mask_path.is_none());
        assert_eq!(m.samples[1].source_id(), "ISIC/b");
        // idempotent
        assert_eq!(m, load_manifest(&dir.path().join("manifest.csv")).unwrap());
    }

    #[test]
    fn duplicate_ids_listed() {
        let dir = tempfile::tempdir().unwrap();
        touch(dir.path(), &["a.png"]);
        let csv = "sample_id,image,mask,modality,concept\na,a.png,,CT,liver\na,a.png,,CT,liver\n";
        std::fs::write(dir.path().join("m.csv"), csv).unwrap();
        let err = load_manifest(&dir.path().join("m.csv")).unwrap_err();
        assert!(matches!(&err, DatasetError::Duplicate(ids) if ids == &["a".to_string()]));
        assert!(err.to_string().contains('a'));
    }

    #[test]
    fn missing_files_reported_together() {
        let dir = tempfile::tempdir().unwrap();
        let csv = "sample_id,image,mask,modality,concept\na,a.png,am.png,CT,liver\nb,b.png,,CT,liver\n";
        std::fs::write(dir.path().join("m.csv"), csv).unwrap();
        match load_manifest(&dir.path().join("m.csv")).unwrap_err() {
            DatasetError::MissingFiles(files) => assert_eq!(files.len(), 3),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        touch(dir.path(), &["a.png"]);
        let csv = "# a comment\nsample_id,image,mask,modality,concept\na,a.png,,CT,liver\nb,a.png,,PET,liver\n";
        std::fs::write(dir.path().join("m.csv"), csv).unwrap();
        match load_manifest(&dir.path().join("m.csv")).unwrap_err() {
            DatasetError::Parse { line, message, .. } => {
                assert_eq!(line, 4);
                assert!(message.contains("PET"));
            }
            other => panic!("unexpected {other}"),
        }
        let csv = "sample_id,image,modality,concept\n";
        std::fs::write(dir.path().join("m.csv"), csv).unwrap();
        assert!(matches!(
            load_manifest(&dir.path().join("m.csv")),
            Err(DatasetError::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn declared_count_checked() {
        let dir = tempfile::tempdir().unwrap();
        let mut csv = String::from("# dataset=Polyp\n# declared_count=602\nsample_id,image,mask,modality,concept\n");
        for i in 0..602 {
            writeln!(csv, "p{i},img.png,,Endoscopy,polyp").unwrap();
        }
        touch(dir.path(), &["img.png"]);
        std::fs::write(dir.path().join("m.csv"), &csv).unwrap();
        let m = load_manifest(&dir.path().join("m.csv")).unwrap();
        assert_eq!(m.samples.len(), 602);
        assert_eq!(m.declared_count, Some(602));

        csv.push_str("p602,img.png,,Endoscopy,polyp\n");
        std::fs::write(dir.path().join("m.csv"), &csv).unwrap();
        assert!(matches!(
            load_manifest(&dir.path().join("m.csv")),
            Err(DatasetError::CountMismatch {
                declared: 602,
                actual: 603
            })
        ));
    }

    #[test]
    fn dataset_column_overrides() {
        let dir = tempfile::tempdir().unwrap();
        touch(dir.path(), &["a.png"]);
        let csv = "sample_id,image,mask,modality,concept,dataset\na,a.png,,CT,liver,CHAOS\nb,a.png,,CT,liver,\n";
        std::fs::write(dir.path().join("m.csv"), csv).unwrap();
        let m = load_manifest(&dir.path().join("m.csv")).unwrap();
        assert_eq!(m.samples[0].dataset, "CHAOS");
        assert_eq!(m.samples[1].dataset, m.dataset);
    }
}
