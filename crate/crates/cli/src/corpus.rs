use std::path::{Path, PathBuf};

use hiero::config::RunConfig;
use hiero::io::{
    read_annotations, read_feature_file, read_narrations, read_queries, read_taxonomy, FeatureSequence, GroundingQuery,
    Manifest, NarrationSet, StepAnnotation, Taxonomy,
};
use hiero::model::{init_params, ModelDims, ModelParams};
use hiero::HieroError;

use crate::error::{CliError, CliResult};

pub struct Video {
    pub features: FeatureSequence,
    pub narrations: Option<NarrationSet>,
    pub annotation: Option<StepAnnotation>,
}

pub struct Corpus {
    pub dir: PathBuf,
    pub videos: Vec<Video>,
    pub taxonomy: Option<Taxonomy>,
    pub queries: Option<Vec<GroundingQuery>>,
}

/// Accepts a manifest file or a directory holding `manifest.json`.
pub fn manifest_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join("manifest.json")
    } else {
        path.to_path_buf()
    }
}

impl Corpus {
    pub fn load(path: &Path) -> CliResult<Corpus> {
        let mpath = manifest_path(path);
        let manifest = Manifest::read(&mpath)?;
        let dir = mpath.parent().map(Path::to_path_buf).unwrap_or_default();
        let loaded = hiero::par::map_slice(&manifest.videos, |entry| -> hiero::Result<Video> {
            let mut features = read_feature_file(Manifest::resolve(&dir, &entry.features))?;
            features.video_id = entry.video_id.clone();
            let narrations = entry.narrations.as_ref().map(|p| read_narrations(Manifest::resolve(&dir, p))).transpose()?;
            let annotation = entry.annotations.as_ref().map(|p| read_annotations(Manifest::resolve(&dir, p))).transpose()?;
            Ok(Video { features, narrations, annotation })
        });
        let videos = loaded.into_iter().collect::<hiero::Result<Vec<_>>>()?;
        if videos.is_empty() {
            return Err(HieroError::Schema { field: "videos".into(), detail: "manifest lists no videos".into() }.into());
        }
        let dim = videos[0].features.dim();
        if let Some(v) = videos.iter().find(|v| v.features.dim() != dim) {
            return Err(HieroError::Schema {
                field: "videos".into(),
                detail: format!("{} has feature dim {}, expected {dim}", v.features.video_id, v.features.dim()),
            }
            .into());
        }
        let taxonomy = manifest.taxonomy.as_ref().map(|p| read_taxonomy(Manifest::resolve(&dir, p))).transpose()?;
        let queries = manifest.queries.as_ref().map(|p| read_queries(Manifest::resolve(&dir, p))).transpose()?;
        Ok(Corpus { dir, videos, taxonomy, queries })
    }

    pub fn input_dim(&self) -> usize {
        self.videos[0].features.dim()
    }

    /// Width of the text side, taken from the first source that has one.
    pub fn text_dim(&self) -> usize {
        self.videos
            .iter()
            .find_map(|v| v.narrations.as_ref().and_then(|n| n.dim()))
            .or_else(|| self.taxonomy.as_ref().map(|t| t.embeddings.cols()))
            .or_else(|| self.queries.as_ref().and_then(|q| q.first().map(|q| q.embedding.len())))
            .unwrap_or_else(|| self.input_dim())
    }

    pub fn video(&self, id: &str) -> Option<&Video> {
        self.videos.iter().find(|v| v.features.video_id == id)
    }

    pub fn training_pairs(&self) -> Vec<(FeatureSequence, NarrationSet)> {
        self.videos
            .iter()
            .map(|v| {
                let n = v.narrations.clone().unwrap_or_else(|| NarrationSet { video_id: v.features.video_id.clone(), items: vec![] });
                (v.features.clone(), n)
            })
            .collect()
    }
}

/// Reads `--params` or initializes from the config, then checks that the
/// model fits the data widths.
pub fn load_params(path: Option<&Path>, cfg: &RunConfig, input_dim: usize, text_dim: usize) -> CliResult<ModelParams> {
    let params = match path {
        Some(p) => ModelParams::read(p)?,
        None => init_params(cfg.model.dims(input_dim, text_dim), cfg.model.init_seed).map_err(CliError::Config)?,
    };
    check_dims(&params.dims, input_dim, text_dim)?;
    Ok(params)
}

fn check_dims(dims: &ModelDims, input_dim: usize, text_dim: usize) -> CliResult<()> {
    if dims.input_dim != input_dim || dims.text_dim != text_dim {
        return Err(HieroError::Shape(format!(
            "model expects input/text dims {}/{}, data has {input_dim}/{text_dim}",
            dims.input_dim, dims.text_dim
        ))
        .into());
    }
    Ok(())
}
