use std::path::Path;

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::{Error, Point3, Result};

/// One microphone. `id` is the audio channel it was recorded on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Microphone {
    pub id: usize,
    pub position: Point3,
}

/// Rotation followed by translation, mapping array-local to world coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Point3,
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Point3::zeros(),
        }
    }

    pub fn to_world(&self, local: &Point3) -> Point3 {
        self.rotation * local + self.translation
    }

    pub fn to_local(&self, world: &Point3) -> Point3 {
        self.rotation.transpose() * (world - self.translation)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimedTransform {
    pub time: f64,
    pub transform: RigidTransform,
}

/// Microphone positions in the array-local frame, the pairs used for
/// correlation and, for moving arrays, the array pose over time.
///
/// Array-local convention: the array lies in the `y = 0` plane, `+y` is the
/// front, `+z` is up.
#[derive(Debug, Clone, PartialEq)]
pub struct MicArrayGeometry {
    mics: Vec<Microphone>,
    /// Indices into `mics`.
    pairs: Vec<(usize, usize)>,
    planar: bool,
    reference: Point3,
    transforms: Vec<TimedTransform>,
}

/// Horizontal positions of the 13 in-line microphones of the nested DICIT
/// layout (4/8/16/32 cm sub-arrays).
const DICIT_LINE_X: [f64; 13] = [
    -0.96, -0.64, -0.32, -0.16, -0.08, -0.04, 0.0, 0.04, 0.08, 0.16, 0.32, 0.64, 0.96,
];

/// Mounting height of the DICIT line in the built-in geometry, meters.
pub const DICIT_HEIGHT: f64 = 1.2;

impl MicArrayGeometry {
    pub fn new(mics: Vec<Microphone>, pairs: Vec<(usize, usize)>) -> Result<Self> {
        let reference = centroid(&mics);
        let geom = Self {
            mics,
            pairs,
            planar: false,
            reference,
            transforms: Vec::new(),
        };
        geom.validate()?;
        Ok(geom)
    }

    /// The 15-microphone DICIT planar array: 13 microphones on a line at
    /// [`DICIT_HEIGHT`] plus two microphones 0.32 m above the outermost ones.
    ///
    /// Default pairs are the four 32 cm horizontal neighbours at both ends of
    /// the line and the two 0.32 m vertical pairs.
    pub fn dicit() -> Self {
        let mut mics: Vec<Microphone> = DICIT_LINE_X
            .iter()
            .enumerate()
            .map(|(id, &x)| Microphone {
                id,
                position: Point3::new(x, 0.0, DICIT_HEIGHT),
            })
            .collect();
        mics.push(Microphone {
            id: 13,
            position: Point3::new(-0.96, 0.0, DICIT_HEIGHT + 0.32),
        });
        mics.push(Microphone {
            id: 14,
            position: Point3::new(0.96, 0.0, DICIT_HEIGHT + 0.32),
        });
        let pairs = vec![(0, 1), (1, 2), (10, 11), (11, 12), (0, 13), (12, 14)];
        Self {
            mics,
            pairs,
            planar: true,
            reference: Point3::new(0.0, 0.0, DICIT_HEIGHT),
            transforms: Vec::new(),
        }
    }

    pub fn with_pairs(mut self, pairs: Vec<(usize, usize)>) -> Result<Self> {
        self.pairs = pairs;
        self.validate()?;
        Ok(self)
    }

    pub fn with_planar(mut self, planar: bool) -> Self {
        self.planar = planar;
        self
    }

    pub fn with_reference(mut self, reference: Point3) -> Self {
        self.reference = reference;
        self
    }

    pub fn with_transforms(mut self, mut transforms: Vec<TimedTransform>) -> Result<Self> {
        transforms.sort_by(|a, b| a.time.total_cmp(&b.time));
        self.transforms = transforms;
        self.validate()?;
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        if self.mics.len() < 2 {
            return Err(Error::invalid("geometry needs at least 2 microphones"));
        }
        let mut ids: Vec<usize> = self.mics.iter().map(|m| m.id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid("duplicate microphone id"));
        }
        if self
            .mics
            .iter()
            .any(|m| m.position.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::invalid("non-finite microphone position"));
        }
        if self.pairs.is_empty() {
            return Err(Error::invalid("geometry has no microphone pairs"));
        }
        for &(a, b) in &self.pairs {
            if a == b || a >= self.mics.len() || b >= self.mics.len() {
                return Err(Error::invalid(format!("invalid pair ({a}, {b})")));
            }
            if (self.mics[a].position - self.mics[b].position).norm() <= 0.0 {
                return Err(Error::invalid(format!(
                    "microphones {} and {} coincide",
                    self.mics[a].id, self.mics[b].id
                )));
            }
        }
        if self.transforms.iter().any(|t| !t.time.is_finite()) {
            return Err(Error::invalid("non-finite transform timestamp"));
        }
        Ok(())
    }

    pub fn mics(&self) -> &[Microphone] {
        &self.mics
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn is_planar(&self) -> bool {
        self.planar
    }

    /// Origin for azimuth/elevation, array-local.
    pub fn reference(&self) -> Point3 {
        self.reference
    }

    pub fn transforms(&self) -> &[TimedTransform] {
        &self.transforms
    }

    pub fn is_moving(&self) -> bool {
        !self.transforms.is_empty()
    }

    pub fn pair_distance(&self, pair: usize) -> f64 {
        let (a, b) = self.pairs[pair];
        (self.mics[a].position - self.mics[b].position).norm()
    }

    /// Channels referenced by at least one pair, ascending.
    pub fn used_channels(&self) -> Vec<usize> {
        let mut ch: Vec<usize> = self
            .pairs
            .iter()
            .flat_map(|&(a, b)| [self.mics[a].id, self.mics[b].id])
            .collect();
        ch.sort_unstable();
        ch.dedup();
        ch
    }

    /// Array pose at time `t`: the transform row nearest in time, identity
    /// for a static array.
    pub fn pose_at(&self, t: f64) -> RigidTransform {
        if self.transforms.is_empty() {
            return RigidTransform::identity();
        }
        let idx = self.transforms.partition_point(|tr| tr.time < t);
        let candidates = [idx.checked_sub(1), Some(idx)];
        candidates
            .into_iter()
            .flatten()
            .filter_map(|i| self.transforms.get(i))
            .min_by(|a, b| (a.time - t).abs().total_cmp(&(b.time - t).abs()))
            .map(|tr| tr.transform)
            .unwrap_or_else(RigidTransform::identity)
    }

    /// Microphone positions at time `t` in the frame the search grid lives in
    /// (world for moving arrays, array-local otherwise).
    pub fn mic_positions_at(&self, t: f64) -> Vec<Point3> {
        let pose = self.pose_at(t);
        self.mics.iter().map(|m| pose.to_world(&m.position)).collect()
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: GeometryFile = serde_json::from_str(text).map_err(|source| Error::Json {
            what: "geometry",
            source,
        })?;
        file.try_into()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    pub fn to_file(&self) -> GeometryFile {
        GeometryFile {
            mics: self
                .mics
                .iter()
                .map(|m| MicEntry {
                    id: m.id,
                    x: m.position.x,
                    y: m.position.y,
                    z: m.position.z,
                })
                .collect(),
            pairs: self
                .pairs
                .iter()
                .map(|&(a, b)| [self.mics[a].id, self.mics[b].id])
                .collect(),
            planar: self.planar,
            reference: Some([self.reference.x, self.reference.y, self.reference.z]),
            transforms: self
                .transforms
                .iter()
                .map(|t| {
                    let r = &t.transform.rotation;
                    let p = &t.transform.translation;
                    [
                        t.time,
                        p.x,
                        p.y,
                        p.z,
                        r[(0, 0)],
                        r[(0, 1)],
                        r[(0, 2)],
                        r[(1, 0)],
                        r[(1, 1)],
                        r[(1, 2)],
                        r[(2, 0)],
                        r[(2, 1)],
                        r[(2, 2)],
                    ]
                })
                .collect(),
        }
    }
}

fn centroid(mics: &[Microphone]) -> Point3 {
    if mics.is_empty() {
        return Point3::zeros();
    }
    mics.iter().map(|m| m.position).sum::<Point3>() / mics.len() as f64
}

/// On-disk geometry description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometryFile {
    pub mics: Vec<MicEntry>,
    /// Pairs of microphone ids.
    pub pairs: Vec<[usize; 2]>,
    #[serde(default)]
    pub planar: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<[f64; 3]>,
    /// Rows `t, tx, ty, tz, r11, r12, r13, r21, r22, r23, r31, r32, r33`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub transforms: Vec<[f64; 13]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MicEntry {
    pub id: usize,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl TryFrom<GeometryFile> for MicArrayGeometry {
    type Error = Error;

    fn try_from(file: GeometryFile) -> Result<Self> {
        let mics: Vec<Microphone> = file
            .mics
            .iter()
            .map(|m| Microphone {
                id: m.id,
                position: Point3::new(m.x, m.y, m.z),
            })
            .collect();
        let index_of = |id: usize| {
            mics.iter()
                .position(|m| m.id == id)
                .ok_or_else(|| Error::invalid(format!("pair references unknown mic id {id}")))
        };
        let pairs = file
            .pairs
            .iter()
            .map(|&[a, b]| Ok((index_of(a)?, index_of(b)?)))
            .collect::<Result<Vec<_>>>()?;
        let transforms = file
            .transforms
            .iter()
            .map(|row| TimedTransform {
                time: row[0],
                transform: RigidTransform {
                    translation: Point3::new(row[1], row[2], row[3]),
                    rotation: Matrix3::new(
                        row[4], row[5], row[6], row[7], row[8], row[9], row[10], row[11], row[12],
                    ),
                },
            })
            .collect();
        let mut geom = MicArrayGeometry::new(mics, pairs)?
            .with_planar(file.planar)
            .with_transforms(transforms)?;
        if let Some(r) = file.reference {
            geom = geom.with_reference(Point3::new(r[0], r[1], r[2]));
        }
        Ok(geom)
    }
}
