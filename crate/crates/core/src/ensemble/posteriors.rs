use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{argmax, CATEGORIES, NUM_ATTRIBUTES, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::pipeline::{evaluate, Dataset, ModelCheckpoint};

pub const POSTERIOR_MAGIC: &[u8; 4] = b"MDSP";
pub const POSTERIOR_VERSION: u16 = 1;

/// Stacked member posteriors over a common id list.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSet {
    pub members: Vec<String>,
    pub ids: Vec<String>,
    /// (n, M, 8)
    pub posteriors: Array3<f64>,
    /// Soft targets (n, 8).
    pub targets: Array2<f64>,
    /// Attribute targets (n, 3).
    pub attributes: Array2<f64>,
}

impl PosteriorSet {
    pub fn new(
        members: Vec<String>,
        ids: Vec<String>,
        posteriors: Array3<f64>,
        targets: Array2<f64>,
        attributes: Array2<f64>,
    ) -> Result<Self> {
        let ps = Self {
            members,
            ids,
            posteriors,
            targets,
            attributes,
        };
        ps.validate()?;
        Ok(ps)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn num_members(&self) -> usize {
        self.members.len()
    }

    pub fn validate(&self) -> Result<()> {
        let (n, m) = (self.ids.len(), self.members.len());
        if m == 0 {
            return Err(Error::PosteriorFormat(
                "posterior set has no members".into(),
            ));
        }
        if self.posteriors.dim() != (n, m, NUM_CLASSES)
            || self.targets.dim() != (n, NUM_CLASSES)
            || self.attributes.dim() != (n, NUM_ATTRIBUTES)
        {
            return Err(Error::ShapeMismatch(format!(
                "posteriors {:?}, targets {:?}, attributes {:?} for {n} ids and {m} members",
                self.posteriors.dim(),
                self.targets.dim(),
                self.attributes.dim()
            )));
        }
        for i in 0..n {
            for k in 0..m {
                let row = self.posteriors.slice(ndarray::s![i, k, ..]);
                if row.iter().any(|&p| !(p >= 0.0)) || (row.sum() - 1.0).abs() > 1e-5 {
                    return Err(Error::PosteriorFormat(format!(
                        "member `{}`, id `{}`: row is not a distribution",
                        self.members[k], self.ids[i]
                    )));
                }
            }
        }
        Ok(())
    }

    /// Hard labels of the targets.
    pub fn labels(&self) -> Vec<usize> {
        self.targets
            .rows()
            .into_iter()
            .map(|r| argmax(r.as_slice().unwrap()))
            .collect()
    }

    /// Flat meta-classifier input (n, M·8), members in order.
    pub fn stacked(&self) -> Array2<f64> {
        let (n, m, c) = self.posteriors.dim();
        self.posteriors.to_shape((n, m * c)).unwrap().to_owned()
    }

    /// Single-member posteriors (n, 8).
    pub fn member(&self, k: usize) -> Array2<f64> {
        self.posteriors.slice(ndarray::s![.., k, ..]).to_owned()
    }

    /// Rows `idx`, in order.
    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            members: self.members.clone(),
            ids: idx.iter().map(|&i| self.ids[i].clone()).collect(),
            posteriors: self.posteriors.select(ndarray::Axis(0), idx),
            targets: self.targets.select(ndarray::Axis(0), idx),
            attributes: self.attributes.select(ndarray::Axis(0), idx),
        }
    }

    /// Per-member posterior files, ordered as in the set.
    pub fn member_files(&self) -> Vec<MemberPosteriors> {
        (0..self.members.len())
            .map(|k| MemberPosteriors {
                member: self.members[k].clone(),
                ids: self.ids.clone(),
                rows: (0..self.ids.len())
                    .map(|i| std::array::from_fn(|c| self.posteriors[[i, k, c]] as f32))
                    .collect(),
            })
            .collect()
    }

    /// Stacks member files; every member must cover exactly the first
    /// member's ids. `lookup` supplies targets and attributes per id.
    pub fn from_members(
        members: &[MemberPosteriors],
        lookup: impl Fn(&str) -> Result<([f64; NUM_CLASSES], [f64; NUM_ATTRIBUTES])>,
    ) -> Result<Self> {
        let first = members
            .first()
            .ok_or_else(|| Error::PosteriorFormat("no member files".into()))?;
        let ids = first.ids.clone();
        let n = ids.len();
        let mut posteriors = Array3::zeros((n, members.len(), NUM_CLASSES));
        for (k, mp) in members.iter().enumerate() {
            let pos: BTreeMap<&str, usize> = mp
                .ids
                .iter()
                .enumerate()
                .map(|(i, id)| (id.as_str(), i))
                .collect();
            if let Some(id) = ids.iter().find(|id| !pos.contains_key(id.as_str())) {
                return Err(Error::CoverageMismatch {
                    member: mp.member.clone(),
                    id: id.clone(),
                });
            }
            let wanted: HashSet<&str> = ids.iter().map(String::as_str).collect();
            if let Some(id) = mp.ids.iter().find(|id| !wanted.contains(id.as_str())) {
                return Err(Error::CoverageMismatch {
                    member: first.member.clone(),
                    id: id.clone(),
                });
            }
            for (i, id) in ids.iter().enumerate() {
                let row = &mp.rows[pos[id.as_str()]];
                for c in 0..NUM_CLASSES {
                    posteriors[[i, k, c]] = f64::from(row[c]);
                }
            }
        }
        let mut targets = Array2::zeros((n, NUM_CLASSES));
        let mut attributes = Array2::zeros((n, NUM_ATTRIBUTES));
        for (i, id) in ids.iter().enumerate() {
            let (t, a) = lookup(id)?;
            targets.row_mut(i).assign(&ndarray::ArrayView1::from(&t));
            attributes.row_mut(i).assign(&ndarray::ArrayView1::from(&a));
        }
        Self::new(
            members.iter().map(|m| m.member.clone()).collect(),
            ids,
            posteriors,
            targets,
            attributes,
        )
    }
}

/// One member's posterior file contents.
#[derive(Debug, Clone, PartialEq)]
pub struct MemberPosteriors {
    pub member: String,
    pub ids: Vec<String>,
    pub rows: Vec<[f32; NUM_CLASSES]>,
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u16).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn fmt_err(msg: impl Into<String>) -> Error {
    Error::PosteriorFormat(msg.into())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let s = self
            .buf
            .get(self.pos..self.pos + n)
            .ok_or_else(|| fmt_err(format!("truncated at byte {}", self.pos)))?;
        self.pos += n;
        Ok(s)
    }

    fn string(&mut self) -> Result<String> {
        let len = u16::from_le_bytes(self.take(2)?.try_into().unwrap()) as usize;
        String::from_utf8(self.take(len)?.to_vec()).map_err(|_| fmt_err("string is not UTF-8"))
    }
}

impl MemberPosteriors {
    /// `MDSP`, u16 version, member id, u8 category count and names, u32
    /// record count, then (id, 8 × f32) records; strings are u16-length
    /// prefixed, numbers little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(POSTERIOR_MAGIC);
        out.extend_from_slice(&POSTERIOR_VERSION.to_le_bytes());
        put_str(&mut out, &self.member);
        out.push(NUM_CLASSES as u8);
        for c in CATEGORIES {
            put_str(&mut out, c);
        }
        out.extend_from_slice(&(self.ids.len() as u32).to_le_bytes());
        for (id, row) in self.ids.iter().zip(&self.rows) {
            put_str(&mut out, id);
            for p in row {
                out.extend_from_slice(&p.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Cursor { buf, pos: 0 };
        if r.take(4)? != POSTERIOR_MAGIC {
            return Err(fmt_err("not a posterior file"));
        }
        let version = u16::from_le_bytes(r.take(2)?.try_into().unwrap());
        if version != POSTERIOR_VERSION {
            return Err(fmt_err(format!("unsupported posterior version {version}")));
        }
        let member = r.string()?;
        let n_cat = r.take(1)?[0] as usize;
        let cats = (0..n_cat).map(|_| r.string()).collect::<Result<Vec<_>>>()?;
        if cats != CATEGORIES {
            return Err(fmt_err(format!(
                "category order {cats:?} does not match {CATEGORIES:?}"
            )));
        }
        let n = u32::from_le_bytes(r.take(4)?.try_into().unwrap()) as usize;
        let mut ids = Vec::with_capacity(n);
        let mut rows = Vec::with_capacity(n);
        for _ in 0..n {
            ids.push(r.string()?);
            let raw = r.take(4 * NUM_CLASSES)?;
            rows.push(std::array::from_fn(|c| {
                f32::from_le_bytes(raw[4 * c..4 * c + 4].try_into().unwrap())
            }));
        }
        if r.pos != buf.len() {
            return Err(fmt_err("trailing bytes after last record"));
        }
        Ok(Self { member, ids, rows })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestMember {
    pub id: String,
    /// Posterior file, relative to the manifest directory.
    pub file: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub target: [f64; NUM_CLASSES],
    pub attributes: [f64; NUM_ATTRIBUTES],
}

/// JSON document binding member files into a [`PosteriorSet`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorManifest {
    pub version: u16,
    pub members: Vec<ManifestMember>,
    pub records: Vec<ManifestRecord>,
}

/// Writes one `<member>.mdsp` per member plus `posteriors.json` into `dir`;
/// returns the manifest path.
pub fn save_posterior_set(ps: &PosteriorSet, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let mut members = Vec::new();
    for mp in ps.member_files() {
        let file = PathBuf::from(format!("{}.mdsp", mp.member));
        mp.save(&dir.join(&file))?;
        members.push(ManifestMember {
            id: mp.member,
            file,
        });
    }
    let records = ps
        .ids
        .iter()
        .enumerate()
        .map(|(i, id)| ManifestRecord {
            id: id.clone(),
            target: std::array::from_fn(|c| ps.targets[[i, c]]),
            attributes: std::array::from_fn(|k| ps.attributes[[i, k]]),
        })
        .collect();
    let manifest = PosteriorManifest {
        version: POSTERIOR_VERSION,
        members,
        records,
    };
    let path = dir.join("posteriors.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)?)?;
    Ok(path)
}

pub fn load_posterior_set(manifest_path: &Path) -> Result<PosteriorSet> {
    let manifest: PosteriorManifest = serde_json::from_slice(&fs::read(manifest_path)?)?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let members = manifest
        .members
        .iter()
        .map(|m| {
            let mp = MemberPosteriors::load(&dir.join(&m.file))?;
            if mp.member != m.id {
                return Err(fmt_err(format!(
                    "file {} holds member `{}`, expected `{}`",
                    m.file.display(),
                    mp.member,
                    m.id
                )));
            }
            Ok(mp)
        })
        .collect::<Result<Vec<_>>>()?;
    let by_id: BTreeMap<&str, &ManifestRecord> = manifest
        .records
        .iter()
        .map(|r| (r.id.as_str(), r))
        .collect();
    PosteriorSet::from_members(&members, |id| {
        by_id
            .get(id)
            .map(|r| (r.target, r.attributes))
            .ok_or_else(|| Error::UnknownId(id.to_string()))
    })
}

/// Evaluates every checkpoint on `ids` (in parallel across members) and
/// stacks the posteriors, rounded to f32 so that the set survives a
/// round-trip through posterior files unchanged.
pub fn collect_posteriors(
    checkpoints: &[(String, ModelCheckpoint)],
    ids: &[String],
    data: &Dataset,
) -> Result<PosteriorSet> {
    let evals = checkpoints
        .par_iter()
        .map(|(name, ckpt)| {
            let e = evaluate(ckpt, ids, data)?;
            Ok(MemberPosteriors {
                member: name.clone(),
                ids: e.ids,
                rows: e
                    .posteriors
                    .rows()
                    .into_iter()
                    .map(|r| std::array::from_fn(|c| r[c] as f32))
                    .collect(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    PosteriorSet::from_members(&evals, |id| {
        let s = &data.samples[data.position(id)?];
        Ok((s.target, s.attributes))
    })
}
