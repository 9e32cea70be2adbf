//! On-disk JSON documents. Coordinates are always meters.

use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use mapforge_core::{ElementClass, MapElement, PerceptionRange, Point, Scene, ScoredElement};
use serde::{Deserialize, Serialize};

pub const VERSION: &str = "mapforge/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ElementJson {
    pub class: ElementClass,
    pub closed: bool,
    pub directed: bool,
    pub points: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneFile {
    pub version: String,
    pub dim: u8,
    pub range: PerceptionRange,
    pub elements: Vec<ElementJson>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredElementJson {
    pub class: ElementClass,
    pub score: f64,
    pub points: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredScene {
    pub scene_id: usize,
    pub elements: Vec<PredElementJson>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionFile {
    pub version: String,
    pub scenes: Vec<PredScene>,
}

fn encode_points(points: &[Point], dim: u8) -> Vec<Vec<f64>> {
    points.iter().map(|p| if dim == 3 { vec![p.x, p.y, p.z] } else { vec![p.x, p.y] }).collect()
}

fn decode_points(raw: &[Vec<f64>], dim: u8) -> Result<Vec<Point>> {
    raw.iter()
        .map(|c| match (dim, c.as_slice()) {
            (2, &[x, y]) => Ok(Point::new(x, y)),
            (3, &[x, y, z]) => Ok(Point::new3(x, y, z)),
            _ => bail!("point {c:?} does not have {dim} coordinates"),
        })
        .collect()
}

fn check_version(v: &str) -> Result<()> {
    ensure!(v == VERSION, "unsupported version {v:?}, expected {VERSION:?}");
    Ok(())
}

impl SceneFile {
    pub fn from_scene(scene: &Scene) -> Self {
        SceneFile {
            version: VERSION.to_string(),
            dim: scene.dim,
            range: scene.range,
            elements: scene
                .elements
                .iter()
                .map(|e| ElementJson {
                    class: e.class,
                    closed: e.closed,
                    directed: e.directed,
                    points: encode_points(&e.points, scene.dim),
                })
                .collect(),
        }
    }

    pub fn to_scene(&self) -> Result<Scene> {
        check_version(&self.version)?;
        let elements = self
            .elements
            .iter()
            .enumerate()
            .map(|(i, e)| {
                let points = decode_points(&e.points, self.dim).with_context(|| format!("element {i}"))?;
                MapElement::with_flags(e.class, points, e.closed, e.directed).with_context(|| format!("element {i}"))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Scene::new(elements, self.range, self.dim)?)
    }
}

impl PredictionFile {
    /// Groups predictions by scene id, in ascending id order.
    pub fn from_scored(preds: &[ScoredElement], dim: u8) -> Self {
        let mut ids: Vec<usize> = preds.iter().map(|p| p.scene_id).collect();
        ids.sort_unstable();
        ids.dedup();
        PredictionFile {
            version: VERSION.to_string(),
            scenes: ids
                .into_iter()
                .map(|id| PredScene {
                    scene_id: id,
                    elements: preds
                        .iter()
                        .filter(|p| p.scene_id == id)
                        .map(|p| PredElementJson {
                            class: p.element.class,
                            score: p.score,
                            points: encode_points(&p.element.points, dim),
                        })
                        .collect(),
                })
                .collect(),
        }
    }

    /// Decodes against the ground-truth scenes the ids refer to. An id with
    /// no scene is reported as [`mapforge_core::Error::InputMismatch`].
    pub fn to_scored(&self, gts: &[Scene]) -> Result<Vec<ScoredElement>> {
        check_version(&self.version)?;
        let mut out = Vec::new();
        for s in &self.scenes {
            let gt = gts.get(s.scene_id).ok_or_else(|| {
                mapforge_core::Error::InputMismatch(format!(
                    "prediction scene_id {} but only {} ground-truth scenes",
                    s.scene_id,
                    gts.len()
                ))
            })?;
            for (i, e) in s.elements.iter().enumerate() {
                ensure!(
                    (0.0..=1.0).contains(&e.score),
                    "scene {} element {i}: score {} outside [0, 1]",
                    s.scene_id,
                    e.score
                );
                let points = decode_points(&e.points, gt.dim).map_err(|err| {
                    mapforge_core::Error::InputMismatch(format!("scene {} element {i}: {err}", s.scene_id))
                })?;
                out.push(ScoredElement {
                    element: MapElement::new(e.class, points)?,
                    score: e.score,
                    scene_id: s.scene_id,
                });
            }
        }
        Ok(out)
    }
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn read_scene(path: &Path) -> Result<Scene> {
    read_json::<SceneFile>(path)?.to_scene().with_context(|| format!("validating {}", path.display()))
}

/// Expands directories into their `*.json` files, sorted by name; plain
/// files are kept in the given order.
pub fn expand_inputs(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut files: Vec<PathBuf> = std::fs::read_dir(p)
                .with_context(|| format!("listing {}", p.display()))?
                .map(|e| e.map(|e| e.path()))
                .collect::<std::io::Result<_>>()?;
            files.retain(|f| f.extension().is_some_and(|x| x == "json"));
            files.sort();
            out.extend(files);
        } else {
            out.push(p.clone());
        }
    }
    Ok(out)
}

pub fn to_pretty_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use mapforge_core::synthetic::{gen_scene, SceneRecipe};

    #[test]
    fn scene_round_trip() {
        for dim in [2, 3] {
            let scene = gen_scene(&SceneRecipe { seed: 5, dim, ..SceneRecipe::default() }).unwrap();
            let text = to_pretty_json(&SceneFile::from_scene(&scene)).unwrap();
            let back: SceneFile = serde_json::from_str(&text).unwrap();
            assert_eq!(back.to_scene().unwrap(), scene);
        }
    }

    #[test]
    fn rejects_bad_documents() {
        let ok =
            r#"{"version":"mapforge/1","dim":2,"range":{"x_min":-15,"x_max":15,"y_min":-30,"y_max":30},"elements":[]}"#;
        assert!(serde_json::from_str::<SceneFile>(ok).unwrap().to_scene().is_ok());
        let bad_version = ok.replace("mapforge/1", "mapforge/0");
        assert!(serde_json::from_str::<SceneFile>(&bad_version).unwrap().to_scene().is_err());
        let bad_dim = ok.replace(
            r#""elements":[]"#,
            r#""elements":[{"class":"divider","closed":false,"directed":false,"points":[[0,0,1],[1,1,1]]}]"#,
        );
        assert!(serde_json::from_str::<SceneFile>(&bad_dim).unwrap().to_scene().is_err());
        assert!(serde_json::from_str::<SceneFile>(&ok.replace("\"dim\"", "\"extra\":1,\"dim\"")).is_err());
    }

    #[test]
    fn unknown_scene_id_is_a_mismatch() {
        let pf = PredictionFile { version: VERSION.into(), scenes: vec![PredScene { scene_id: 2, elements: vec![] }] };
        let err = pf.to_scored(&[Scene::empty(PerceptionRange::default())]).unwrap_err();
        assert!(matches!(err.downcast_ref::<mapforge_core::Error>(), Some(mapforge_core::Error::InputMismatch(_))));
    }
}
