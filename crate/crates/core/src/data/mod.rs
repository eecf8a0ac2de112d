//! Dataset representation, fold configuration, and episodic sampling.

mod synthetic;

pub use synthetic::generate_synthetic_dataset;

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use rand::{seq::index, Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{BinaryMask, Image, LabelMap};
use crate::io::{read_image, read_labelmap};

/// Occurrences smaller than this are not eligible as episode targets;
/// single-digit-pixel prototypes destabilize training.
pub const MIN_TARGET_AREA: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassInfo {
    pub id: u32,
    pub name: String,
}

/// One image/label pair, loaded and validated.
#[derive(Debug, Clone)]
pub struct DatasetEntry {
    pub image_path: PathBuf,
    pub label_path: PathBuf,
    pub classes: BTreeSet<u32>,
    pub image: Image,
    pub labels: LabelMap,
    class_areas: BTreeMap<u32, usize>,
}

/// In-memory dataset with its class catalog.
#[derive(Debug, Clone)]
pub struct DatasetIndex {
    pub root: PathBuf,
    pub classes: Vec<ClassInfo>,
    pub entries: Vec<DatasetEntry>,
    /// Per class: entries where the class occupies at least
    /// [`MIN_TARGET_AREA`] pixels.
    eligible: BTreeMap<u32, Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
struct IndexEntryRecord {
    image: String,
    label: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    classes: Option<Vec<u32>>,
}

#[derive(Serialize, Deserialize)]
struct IndexFile {
    classes: Vec<ClassInfo>,
    entries: Vec<IndexEntryRecord>,
}

pub(crate) fn write_index_file(
    path: &Path,
    classes: &[ClassInfo],
    entries: &[(String, String, Vec<u32>)],
) -> Result<()> {
    let file = IndexFile {
        classes: classes.to_vec(),
        entries: entries
            .iter()
            .map(|(image, label, classes)| IndexEntryRecord {
                image: image.clone(),
                label: label.clone(),
                classes: Some(classes.clone()),
            })
            .collect(),
    };
    let mut out = serde_json::to_string_pretty(&file)?;
    out.push('\n');
    std::fs::write(path, out)?;
    Ok(())
}

/// Loads and validates a dataset directory (`images/`, `labels/`,
/// `index.json`). Class sets are recomputed from the label maps; recorded
/// sets, when present, must agree.
pub fn load_dataset(root: &Path) -> Result<DatasetIndex> {
    let index_path = root.join("index.json");
    let file = File::open(&index_path).map_err(|e| Error::data(&index_path, e.to_string()))?;
    let parsed: IndexFile = serde_json::from_reader(BufReader::new(file))
        .map_err(|e| Error::data(&index_path, format!("invalid index: {e}")))?;

    let mut catalog = BTreeSet::new();
    for class in &parsed.classes {
        if class.id == 0 {
            return Err(Error::data(&index_path, "class id 0 is reserved for background"));
        }
        if !catalog.insert(class.id) {
            return Err(Error::data(&index_path, format!("duplicate class id {}", class.id)));
        }
    }

    let mut entries = Vec::with_capacity(parsed.entries.len());
    for record in &parsed.entries {
        let image_path = root.join(&record.image);
        let label_path = root.join(&record.label);
        let image = read_image(&image_path)?;
        let labels = read_labelmap(&label_path)?;
        if labels.width() != image.width() || labels.height() != image.height() {
            return Err(Error::data(
                &label_path,
                format!(
                    "label map is {}x{} but image is {}x{}",
                    labels.width(),
                    labels.height(),
                    image.width(),
                    image.height()
                ),
            ));
        }
        let mut class_areas: BTreeMap<u32, usize> = BTreeMap::new();
        for &l in labels.labels() {
            if l != 0 {
                *class_areas.entry(l).or_insert(0) += 1;
            }
        }
        let computed: BTreeSet<u32> = class_areas.keys().copied().collect();
        for &id in &computed {
            if !catalog.contains(&id) {
                return Err(Error::data(
                    &label_path,
                    format!("label map contains class id {id} missing from the catalog"),
                ));
            }
        }
        if let Some(listed) = &record.classes {
            let listed: BTreeSet<u32> = listed.iter().copied().collect();
            if listed != computed {
                return Err(Error::data(
                    &label_path,
                    format!("recorded classes {listed:?} do not match label contents {computed:?}"),
                ));
            }
        }
        entries.push(DatasetEntry {
            image_path,
            label_path,
            classes: computed,
            image,
            labels,
            class_areas,
        });
    }

    let mut eligible: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, entry) in entries.iter().enumerate() {
        for (&class, &area) in &entry.class_areas {
            if area >= MIN_TARGET_AREA {
                eligible.entry(class).or_default().push(i);
            }
        }
    }

    Ok(DatasetIndex { root: root.to_path_buf(), classes: parsed.classes, entries, eligible })
}

/// A base/novel class split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldConfig {
    pub base_classes: BTreeSet<u32>,
    pub novel_classes: BTreeSet<u32>,
}

impl FoldConfig {
    pub fn validate(&self, catalog: Option<&[ClassInfo]>) -> Result<()> {
        if self.base_classes.is_empty() || self.novel_classes.is_empty() {
            return Err(Error::InvalidParameter("fold must have nonempty base and novel sets".into()));
        }
        if !self.base_classes.is_disjoint(&self.novel_classes) {
            return Err(Error::InvalidParameter("base and novel classes overlap".into()));
        }
        if self.base_classes.contains(&0) || self.novel_classes.contains(&0) {
            return Err(Error::InvalidParameter("fold sets may not contain the background id 0".into()));
        }
        if let Some(catalog) = catalog {
            let known: BTreeSet<u32> = catalog.iter().map(|c| c.id).collect();
            for id in self.base_classes.iter().chain(&self.novel_classes) {
                if !known.contains(id) {
                    return Err(Error::InvalidParameter(format!(
                        "fold references unknown class id {id}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Built-in 4-fold split: fold `i` holds out the catalog classes whose
    /// sorted index is congruent to `i` mod 4.
    pub fn builtin(catalog: &[ClassInfo], fold: usize) -> Result<FoldConfig> {
        if fold >= 4 {
            return Err(Error::InvalidParameter(format!("fold index {fold} out of range 0..4")));
        }
        let mut ids: Vec<u32> = catalog.iter().map(|c| c.id).collect();
        ids.sort_unstable();
        let novel_classes: BTreeSet<u32> =
            ids.iter().enumerate().filter(|(i, _)| i % 4 == fold).map(|(_, &id)| id).collect();
        let base_classes: BTreeSet<u32> =
            ids.iter().filter(|id| !novel_classes.contains(id)).copied().collect();
        let config = FoldConfig { base_classes, novel_classes };
        config.validate(Some(catalog))?;
        Ok(config)
    }

    pub fn from_file(path: &Path, catalog: Option<&[ClassInfo]>) -> Result<FoldConfig> {
        let file = File::open(path).map_err(|e| Error::data(path, e.to_string()))?;
        let config: FoldConfig = serde_json::from_reader(BufReader::new(file))
            .map_err(|e| Error::data(path, format!("invalid fold file: {e}")))?;
        config.validate(catalog)?;
        Ok(config)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Base,
    Novel,
}

/// One episode: k annotated supports and a query for a single target class.
#[derive(Debug, Clone)]
pub struct Episode {
    pub target_class: u32,
    pub support: Vec<(Image, BinaryMask)>,
    pub query: (Image, BinaryMask),
    pub query_labelmap: LabelMap,
}

/// Samples a target class uniformly among the split's classes that occur in
/// at least `k + 1` images (with target area at least [`MIN_TARGET_AREA`]),
/// then `k + 1` distinct images of that class: k supports plus one query.
pub fn sample_episode(
    index: &DatasetIndex,
    fold: &FoldConfig,
    split: Split,
    k: usize,
    rng: &mut impl RngCore,
) -> Result<Episode> {
    if k == 0 {
        return Err(Error::InvalidParameter("k must be >= 1".into()));
    }
    let class_set = match split {
        Split::Base => &fold.base_classes,
        Split::Novel => &fold.novel_classes,
    };
    let eligible: Vec<u32> = class_set
        .iter()
        .filter(|c| index.eligible.get(c).map_or(false, |e| e.len() >= k + 1))
        .copied()
        .collect();
    if eligible.is_empty() {
        return Err(Error::Sampling(format!(
            "no class in the split has {} usable images",
            k + 1
        )));
    }
    let target_class = eligible[rng.random_range(0..eligible.len())];
    let pool = &index.eligible[&target_class];
    let picked = index::sample(rng, pool.len(), k + 1);
    let chosen: Vec<usize> = picked.iter().map(|i| pool[i]).collect();

    let make_pair = |entry: &DatasetEntry| -> (Image, BinaryMask) {
        (entry.image.clone(), entry.labels.binarize(target_class))
    };
    let support: Vec<(Image, BinaryMask)> =
        chosen[..k].iter().map(|&i| make_pair(&index.entries[i])).collect();
    let query_entry = &index.entries[chosen[k]];
    Ok(Episode {
        target_class,
        support,
        query: make_pair(query_entry),
        query_labelmap: query_entry.labels.clone(),
    })
}

/// Number of distinct non-background class ids present.
pub fn count_classes(labels: &LabelMap) -> usize {
    let mut seen: BTreeSet<u32> = BTreeSet::new();
    for &l in labels.labels() {
        if l != 0 {
            seen.insert(l);
        }
    }
    seen.len()
}
