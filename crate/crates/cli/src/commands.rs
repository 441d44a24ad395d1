//! The work behind each subcommand, separate from argument parsing so it
//! can be driven from tests.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context as _};
use aqua_core::clients::ClientSet;
use aqua_core::engine::{answer, Answer, Condition, Deps, Question};
use aqua_core::eval::{run_eval_file, write_annotation_sheet, write_csv, write_report, EvalEnv, EvalOptions, EvalReport};
use aqua_core::icon_db::{build_from_sources, load_manifest, save_manifest, IconManifest, MANIFEST_FILE};
use aqua_core::retrieval::{build_index_from_dir, load_index, save_index, CorpusIndex, WhitespaceTokenCounter};
use aqua_core::video_context::load_transcript;
use aqua_core::vision::VisualAnchor;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::ServiceConfig;

/// Where to find the config, icon database, index and fixture clients.
/// Explicit paths win over the config's `data_dir` layout.
#[derive(Debug, Clone, Default)]
pub struct DepsSpec {
    pub config: Option<PathBuf>,
    pub icon_db: Option<PathBuf>,
    pub index: Option<PathBuf>,
    pub fixtures: Option<PathBuf>,
}

pub struct Loaded {
    pub config: ServiceConfig,
    pub clients: ClientSet,
    pub manifest: Option<IconManifest>,
    pub index: Option<CorpusIndex>,
}

pub fn load_deps(spec: &DepsSpec) -> anyhow::Result<Loaded> {
    let mut config = ServiceConfig::load(spec.config.as_deref())?;
    if let Some(f) = &spec.fixtures {
        config.fixture_dir = Some(f.clone());
    }
    let clients = ClientSet::from_endpoints(&config.client_endpoints()).context("configuring model clients")?;
    let from_config = spec.config.is_some();

    let icon_db = spec.icon_db.clone().or_else(|| from_config.then(|| config.icon_db_dir()));
    let manifest = match icon_db {
        Some(dir) if spec.icon_db.is_some() || dir.join(MANIFEST_FILE).exists() => {
            Some(load_manifest(&dir).with_context(|| format!("loading icon database {}", dir.display()))?)
        }
        _ => None,
    };
    let index_path = spec.index.clone().or_else(|| from_config.then(|| config.index_path()));
    let index = match index_path {
        Some(p) if spec.index.is_some() || p.exists() => {
            Some(load_index(&p).with_context(|| format!("loading index {}", p.display()))?)
        }
        _ => None,
    };
    Ok(Loaded { config, clients, manifest, index })
}

#[derive(Debug, Serialize)]
pub struct IconDbSummary {
    pub records: usize,
    pub duplicates: usize,
    pub by_source: std::collections::BTreeMap<String, usize>,
    pub warnings: Vec<String>,
}

pub fn build_icon_db(docs: Option<&Path>, commands: Option<&Path>, out: &Path, profile: &str) -> anyhow::Result<IconDbSummary> {
    if docs.is_none() && commands.is_none() {
        bail!("give --docs, --commands or both");
    }
    let built = build_from_sources(docs, commands, profile)?;
    save_manifest(&built.manifest, out).with_context(|| format!("writing {}", out.display()))?;
    Ok(IconDbSummary {
        records: built.manifest.len(),
        duplicates: built.duplicates,
        by_source: built
            .manifest
            .counts_by_source
            .iter()
            .map(|(k, v)| (serde_json::to_value(k).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default(), *v))
            .collect(),
        warnings: built.warnings,
    })
}

#[derive(Debug, Serialize)]
pub struct IndexSummary {
    pub chunks: usize,
    pub dim: usize,
    pub embed_backend: String,
    pub warnings: Vec<String>,
}

/// `built_at` is taken from `SOURCE_DATE_EPOCH` when set, else 0, so that
/// rebuilding an unchanged corpus gives an identical file.
pub fn build_index(corpus: &Path, out: &Path, deps: &DepsSpec) -> anyhow::Result<IndexSummary> {
    let loaded = load_deps(&DepsSpec { index: None, icon_db: None, ..deps.clone() })?;
    let built_at = std::env::var("SOURCE_DATE_EPOCH").ok().and_then(|v| v.trim().parse().ok()).unwrap_or(0);
    let build = build_index_from_dir(
        corpus,
        &WhitespaceTokenCounter,
        loaded.clients.embed.as_ref(),
        loaded.config.pipeline.chunk_limit_tokens,
        built_at,
    )?;
    save_index(&build.index, out).with_context(|| format!("writing {}", out.display()))?;
    Ok(IndexSummary {
        chunks: build.index.len(),
        dim: build.index.dim,
        embed_backend: build.index.embed_backend_id.clone(),
        warnings: build.warnings,
    })
}

/// `IMAGE@t=SECONDS` or `IMAGE@t=SECONDS@LABEL`.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorArg {
    pub image: PathBuf,
    pub timestamp_s: f64,
    pub label: Option<String>,
}

impl FromStr for AnchorArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (path, rest) = s.rsplit_once("@t=").ok_or_else(|| format!("{s:?}: expected IMAGE@t=SECONDS"))?;
        let (t, label) = match rest.split_once('@') {
            Some((t, l)) => (t, Some(l.to_string())),
            None => (rest, None),
        };
        let timestamp_s = t.parse::<f64>().map_err(|e| format!("{s:?}: bad time {t:?}: {e}"))?;
        if path.is_empty() {
            return Err(format!("{s:?}: missing image path"));
        }
        Ok(Self { image: path.into(), timestamp_s, label: label.filter(|l| !l.is_empty()) })
    }
}

fn question_id(text: &str) -> String {
    format!("q{}", &hex::encode(Sha256::digest(text.as_bytes()))[..12])
}

pub struct AskArgs<'a> {
    pub video: &'a Path,
    pub question: &'a str,
    pub anchors: &'a [AnchorArg],
    pub condition: Condition,
    pub asked_at_s: Option<f64>,
}

/// Anchors without a label are named `#Anchor1`, `#Anchor2`, ... in the
/// order given.
pub fn ask(loaded: &Loaded, args: &AskArgs<'_>) -> anyhow::Result<Answer> {
    let transcript = load_transcript(args.video).with_context(|| format!("loading {}", args.video.display()))?;
    let mut anchors = Vec::with_capacity(args.anchors.len());
    for (i, a) in args.anchors.iter().enumerate() {
        let img = image::open(&a.image).with_context(|| format!("reading {}", a.image.display()))?;
        let label = a.label.clone().unwrap_or_else(|| format!("#Anchor{}", i + 1));
        let id = format!("anchor-{}", i + 1);
        anchors.push(VisualAnchor::from_crop(id, transcript.video_id.clone(), label, a.timestamp_s, img)?);
    }
    let question = Question {
        id: question_id(args.question),
        video_id: transcript.video_id.clone(),
        text: args.question.to_string(),
        anchors,
        asked_at_s: args.asked_at_s,
    };
    let deps = Deps {
        manifest: loaded.manifest.as_ref(),
        index: loaded.index.as_ref(),
        transcript: Some(&transcript),
        clients: &loaded.clients,
        counter: &WhitespaceTokenCounter,
        config: &loaded.config.pipeline,
        cached_descriptions: None,
    };
    Ok(answer(&question, args.condition, &deps)?)
}

pub struct EvalPaths<'a> {
    pub questions: &'a Path,
    pub out: &'a Path,
    pub csv: Option<&'a Path>,
    pub sheet: Option<&'a Path>,
}

pub fn eval(loaded: &Loaded, paths: &EvalPaths<'_>, options: &EvalOptions) -> anyhow::Result<EvalReport> {
    let env = EvalEnv {
        manifest: loaded.manifest.as_ref(),
        index: loaded.index.as_ref(),
        clients: &loaded.clients,
        counter: &WhitespaceTokenCounter,
        config: &loaded.config.pipeline,
    };
    let report = run_eval_file(paths.questions, &env, options)?;
    write_report(&report, paths.out)?;
    if let Some(p) = paths.csv {
        write_csv(&report, p)?;
    }
    if let Some(p) = paths.sheet {
        write_annotation_sheet(&report, p)?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn anchor_arg_forms() {
        let a: AnchorArg = "crops/menu.png@t=19.5".parse().unwrap();
        assert_eq!(a, AnchorArg { image: "crops/menu.png".into(), timestamp_s: 19.5, label: None });
        let b: AnchorArg = "a@b.png@t=3@#palette".parse().unwrap();
        assert_eq!(b.image, PathBuf::from("a@b.png"));
        assert_eq!(b.label.as_deref(), Some("#palette"));
        assert!("menu.png".parse::<AnchorArg>().is_err());
        assert!("menu.png@t=x".parse::<AnchorArg>().is_err());
    }
}
