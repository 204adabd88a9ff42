//! Vision subcommands: background model, cascades, gallery, synthesis and
//! the full pipeline run.

use crate::{output, usage, CmdResult, Common, Failure};
use anyhow::{anyhow, bail, Context};
use clap::Args;
use gp_core::cascade::{detect, parse_cascade, serialize_cascade, train_toy_cascade, CascadeModel};
use gp_core::codebook::CodebookModel;
use gp_core::cpdh::{classify, descriptor_from_mask, Gallery, GestureClass};
use gp_core::imaging::{pnm, to_gray, Frame, GrayImage};
use gp_core::pipeline::kit::{build_kit, KitParams};
use gp_core::pipeline::synth::Scene;
use gp_core::pipeline::{
    dump_stages, frame_file_name, list_frames, read_frames, run_session, GestureEvent, Models, Pipeline,
};
use gp_core::telemetry::{Client, WireEvent};
use serde_json::json;
use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

fn read_frame_paths(dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let paths = list_frames(dir).with_context(|| format!("listing {}", dir.display()))?;
    if paths.is_empty() {
        bail!("no frame_<n>.ppm files in {}", dir.display());
    }
    Ok(paths)
}

fn load_codebook(path: &Path) -> anyhow::Result<CodebookModel> {
    let f = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    CodebookModel::read_from(BufReader::new(f)).with_context(|| format!("reading {}", path.display()))
}

fn load_cascade(path: &Path) -> anyhow::Result<CascadeModel> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_cascade(&text).with_context(|| format!("parsing {}", path.display()))
}

fn load_gallery(path: &Path) -> anyhow::Result<Gallery> {
    Gallery::read(path).with_context(|| format!("reading {}", path.display()))
}

fn write_lines(out: &mut dyn Write, lines: impl IntoIterator<Item = serde_json::Value>) -> anyhow::Result<()> {
    for l in lines {
        writeln!(out, "{l}")?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Args)]
pub struct BgTrain {
    /// Directory of frame_<n>.ppm files.
    #[arg(long)]
    frames: PathBuf,
    /// Train on the first N frames only.
    #[arg(long)]
    count: Option<usize>,
    /// Keep transient codewords (skip pruning).
    #[arg(long)]
    no_prune: bool,
    /// Model file to write.
    #[arg(short, long)]
    output: PathBuf,
}

impl BgTrain {
    pub fn run(&self, c: &Common) -> CmdResult {
        let cfg = c.config(|_| Ok(()))?;
        let mut paths = read_frame_paths(&self.frames)?;
        if let Some(n) = self.count {
            if n == 0 {
                return usage("--count must be positive");
            }
            paths.truncate(n);
        }
        let frames = paths
            .iter()
            .map(|p| pnm::read_ppm(p).with_context(|| format!("reading {}", p.display())))
            .collect::<anyhow::Result<Vec<Frame>>>()?;
        let mut model = CodebookModel::train(&frames, cfg.pipeline.codebook).context("training")?;
        if !self.no_prune {
            model = model.prune();
        }
        let f = fs::File::create(&self.output).with_context(|| format!("creating {}", self.output.display()))?;
        model.write_to(BufWriter::new(f)).context("writing model")?;
        eprintln!("trained on {} frames, {} codewords", frames.len(), model.total_codewords());
        Ok(())
    }
}

#[derive(Args)]
pub struct BgSubtract {
    /// Background model from `bg-train`.
    #[arg(long)]
    model: PathBuf,
    /// Directory of frame_<n>.ppm files.
    #[arg(long)]
    frames: PathBuf,
    /// Directory for mask_<n>.pgm files.
    #[arg(short, long)]
    output: PathBuf,
}

impl BgSubtract {
    pub fn run(&self, c: &Common) -> CmdResult {
        c.config(|_| Ok(()))?;
        let model = load_codebook(&self.model)?;
        fs::create_dir_all(&self.output).with_context(|| format!("creating {}", self.output.display()))?;
        for (i, p) in read_frame_paths(&self.frames)?.iter().enumerate() {
            let frame = pnm::read_ppm(p).with_context(|| format!("reading {}", p.display()))?;
            let mask = model.subtract(&frame).with_context(|| format!("frame {}", p.display()))?;
            pnm::write_pgm(self.output.join(format!("mask_{:06}.pgm", i + 1)), &mask).context("writing mask")?;
        }
        Ok(())
    }
}

fn read_patches(dir: &Path) -> anyhow::Result<Vec<GrayImage>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "pgm"))
        .collect();
    paths.sort();
    paths.iter().map(|p| pnm::read_pgm(p).with_context(|| format!("reading {}", p.display()))).collect()
}

#[derive(Args)]
pub struct CascadeTrain {
    /// Directory of positive PGM patches, all the base-window size.
    #[arg(long)]
    pos: PathBuf,
    /// Directory of negative PGM patches.
    #[arg(long)]
    neg: PathBuf,
    /// Label written into the model (overrides train.label).
    #[arg(long)]
    label: Option<String>,
    /// Stage count (overrides train.stages).
    #[arg(long)]
    stages: Option<usize>,
    /// Seed (overrides train.seed).
    #[arg(long)]
    seed: Option<u64>,
    /// Cascade file to write; stdout when absent.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

impl CascadeTrain {
    pub fn run(&self, c: &Common) -> CmdResult {
        let cfg = c.config(|cfg| {
            if let Some(l) = &self.label {
                cfg.train.label = l.clone();
            }
            if let Some(s) = self.stages {
                cfg.train.stages = s;
            }
            if let Some(s) = self.seed {
                cfg.train.seed = s;
            }
            Ok(())
        })?;
        let pos = read_patches(&self.pos)?;
        let neg = read_patches(&self.neg)?;
        let model = train_toy_cascade(&pos, &neg, &cfg.train).context("training")?;
        let mut out = output(self.output.as_deref())?;
        out.write_all(serialize_cascade(&model).as_bytes()).and_then(|_| out.flush()).map_err(anyhow::Error::from)?;
        let stumps: usize = model.stages.iter().map(|s| s.stumps.len()).sum();
        eprintln!("{} stages, {stumps} stumps", model.stages.len());
        Ok(())
    }
}

fn read_gray_any(path: &Path) -> anyhow::Result<GrayImage> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    match bytes.get(..2) {
        Some(b"P6") => Ok(to_gray(&pnm::decode_ppm(&bytes)?)),
        Some(b"P5") => Ok(pnm::decode_pgm(&bytes)?),
        _ => bail!("{}: not a binary PPM or PGM", path.display()),
    }
}

#[derive(Args)]
pub struct CascadeDetect {
    #[arg(long)]
    cascade: PathBuf,
    /// PPM or PGM image.
    #[arg(long)]
    image: PathBuf,
    /// Detections as JSON lines; stdout when absent.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

impl CascadeDetect {
    pub fn run(&self, c: &Common) -> CmdResult {
        let cfg = c.config(|_| Ok(()))?;
        let model = load_cascade(&self.cascade)?;
        let img = read_gray_any(&self.image)?;
        let hits = detect(&model, &img, &cfg.pipeline.detect);
        let mut out = output(self.output.as_deref())?;
        write_lines(&mut out, hits.iter().map(|r| json!({"x": r.x(), "y": r.y(), "w": r.w(), "h": r.h()})))?;
        Ok(())
    }
}

#[derive(Args)]
pub struct GalleryBuild {
    /// Directory with one `<id>_<NAME>` subdirectory of mask PGMs per class.
    #[arg(long)]
    dir: PathBuf,
    /// Gallery file to write; stdout when absent.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

impl GalleryBuild {
    pub fn run(&self, c: &Common) -> CmdResult {
        let cfg = c.config(|_| Ok(()))?;
        let (n_rho, n_theta) = (cfg.pipeline.n_rho, cfg.pipeline.n_theta);
        let mut dirs: Vec<PathBuf> = fs::read_dir(&self.dir)
            .with_context(|| format!("listing {}", self.dir.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect();
        dirs.sort();
        let mut classes = Vec::new();
        for d in dirs {
            let name = d.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
            let Some((id, label)) = name.split_once('_') else {
                return usage(format!("class directory `{name}` is not named <id>_<NAME>"));
            };
            let Ok(id) = id.parse::<u8>() else {
                return usage(format!("class directory `{name}`: `{id}` is not a class id (0-255)"));
            };
            let mut templates = Vec::new();
            let mut files: Vec<PathBuf> = fs::read_dir(&d)
                .with_context(|| format!("listing {}", d.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "pgm"))
                .collect();
            files.sort();
            for f in files {
                let mask = pnm::read_mask(&f).with_context(|| format!("reading {}", f.display()))?;
                templates.push(descriptor_from_mask(&mask, n_rho, n_theta).with_context(|| format!("{}", f.display()))?);
            }
            classes.push(GestureClass { id, name: label.to_string(), templates });
        }
        let gallery = Gallery::new(n_rho, n_theta, classes).context("building gallery")?;
        let mut out = output(self.output.as_deref())?;
        out.write_all(gallery.to_text().as_bytes()).and_then(|_| out.flush()).map_err(anyhow::Error::from)?;
        Ok(())
    }
}

#[derive(Args)]
pub struct Classify {
    #[arg(long)]
    gallery: PathBuf,
    /// Binary mask PGM (nonzero pixels are the shape).
    #[arg(long)]
    mask: PathBuf,
    /// Acceptance threshold (overrides cpdh.tau).
    #[arg(long)]
    tau: Option<f64>,
}

impl Classify {
    pub fn run(&self, c: &Common) -> CmdResult {
        let cfg = c.config(|cfg| {
            if let Some(t) = self.tau {
                cfg.pipeline.classify.tau = t;
            }
            Ok(())
        })?;
        let gallery = load_gallery(&self.gallery)?;
        let mask = pnm::read_mask(&self.mask).with_context(|| format!("reading {}", self.mask.display()))?;
        let d = descriptor_from_mask(&mask, gallery.n_rho(), gallery.n_theta()).context("describing mask")?;
        let r = classify(&d, &gallery, &cfg.pipeline.classify).context("classifying")?;
        let name = r.class.and_then(|id| gallery.class(id)).map(|c| c.name.clone());
        let mut out = output(None)?;
        write_lines(
            &mut out,
            [json!({"class": r.class, "name": name, "distance": r.distance, "confidence": r.confidence})],
        )?;
        Ok(())
    }
}

#[derive(Args)]
pub struct Synth {
    /// Scene script to render.
    #[arg(long)]
    script: Option<PathBuf>,
    /// Directory for frames and truth.jsonl.
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Also write hand_<n>.pgm ground-truth masks.
    #[arg(long)]
    masks: bool,
    /// Write hand.cascade, face.cascade and gallery.txt matched to the
    /// synthetic scenes into this directory.
    #[arg(long)]
    kit: Option<PathBuf>,
    /// Seed for the kit's training data.
    #[arg(long, default_value_t = 1)]
    kit_seed: u64,
}

impl Synth {
    pub fn run(&self, c: &Common) -> CmdResult {
        let cfg = c.config(|_| Ok(()))?;
        if self.script.is_none() && self.kit.is_none() {
            return usage("nothing to do: give --script and -o, and/or --kit");
        }
        if let Some(script) = &self.script {
            let Some(out) = &self.output else { return usage("--script needs -o/--output") };
            let text = fs::read_to_string(script).with_context(|| format!("reading {}", script.display()))?;
            let scene = Scene::parse(&text).map_err(|e| Failure::Usage(format!("{}: {e}", script.display())))?;
            fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
            let mut truth = BufWriter::new(fs::File::create(out.join("truth.jsonl")).context("creating truth.jsonl")?);
            for i in 0..scene.len() {
                let (frame, gt) = scene.render(i).map_err(|e| anyhow!("frame {i}: {e}"))?;
                pnm::write_ppm(out.join(frame_file_name(i)), &frame).context("writing frame")?;
                if self.masks {
                    pnm::write_pgm(out.join(format!("hand_{:06}.pgm", i + 1)), &gt.hand).context("writing mask")?;
                }
                let face = gt.face.map(|r| [r.x(), r.y(), r.w(), r.h()]);
                let rec = json!({
                    "frame": i,
                    "pose": gt.pose.name(),
                    "class": gt.pose.class_id(),
                    "hand_pixels": gt.hand.count(),
                    "face": face,
                });
                writeln!(truth, "{rec}").map_err(anyhow::Error::from)?;
            }
            truth.flush().map_err(anyhow::Error::from)?;
            eprintln!("wrote {} frames to {}", scene.len(), out.display());
        }
        if let Some(dir) = &self.kit {
            let params = KitParams { seed: self.kit_seed, ..KitParams::default() };
            let kit = build_kit(&params, cfg.pipeline.n_rho, cfg.pipeline.n_theta).context("building kit")?;
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            fs::write(dir.join("hand.cascade"), serialize_cascade(&kit.hand)).context("writing hand.cascade")?;
            fs::write(dir.join("face.cascade"), serialize_cascade(&kit.face)).context("writing face.cascade")?;
            kit.gallery.write(dir.join("gallery.txt")).context("writing gallery.txt")?;
            eprintln!("wrote kit to {}", dir.display());
        }
        Ok(())
    }
}

#[derive(Args)]
pub struct Run {
    /// Directory of frame_<n>.ppm files.
    #[arg(long, conflicts_with = "script")]
    frames: Option<PathBuf>,
    /// Scene script rendered on the fly instead of reading frames.
    #[arg(long)]
    script: Option<PathBuf>,
    /// Background model (overrides models.background).
    #[arg(long)]
    background: Option<PathBuf>,
    /// Hand cascade (overrides models.hand_cascade).
    #[arg(long)]
    hand_cascade: Option<PathBuf>,
    /// Face cascade (overrides models.face_cascade).
    #[arg(long)]
    face_cascade: Option<PathBuf>,
    /// Gallery (overrides models.gallery).
    #[arg(long)]
    gallery: Option<PathBuf>,
    /// Learner id stamped on events (overrides pipeline.learner).
    #[arg(long)]
    learner: Option<u32>,
    /// Send events to this supervisor instead of printing them.
    #[arg(long, value_name = "ADDR")]
    supervisor: Option<String>,
    /// Write per-frame stage images here.
    #[arg(long, value_name = "DIR")]
    dump_stages: Option<PathBuf>,
    /// Events as JSON lines; stdout when absent.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

impl Run {
    pub fn run(&self, c: &Common) -> CmdResult {
        let cfg = c.config(|cfg| {
            let p = &mut cfg.pipeline;
            for (flag, slot) in [
                (&self.background, &mut p.background),
                (&self.hand_cascade, &mut p.hand_cascade),
                (&self.face_cascade, &mut p.face_cascade),
                (&self.gallery, &mut p.gallery),
            ] {
                if flag.is_some() {
                    *slot = flag.clone();
                }
            }
            if let Some(l) = self.learner {
                p.learner = l;
            }
            Ok(())
        })?;
        let p = &cfg.pipeline;
        let need = |slot: &Option<PathBuf>, what: &str| match slot {
            Some(path) => Ok(path.clone()),
            None => usage(format!("missing {what} (flag or config key)")),
        };
        let models = Models {
            background: load_codebook(&need(&p.background, "--background")?)?,
            hand: load_cascade(&need(&p.hand_cascade, "--hand-cascade")?)?,
            face: p.face_cascade.as_deref().map(load_cascade).transpose()?,
            gallery: load_gallery(&need(&p.gallery, "--gallery")?)?,
        };
        let mut pipeline = Pipeline::new(cfg.pipeline.clone(), models).map_err(|e| Failure::Usage(e.to_string()))?;

        let frames: Box<dyn Iterator<Item = Result<Frame, String>>> = match (&self.frames, &self.script) {
            (Some(dir), None) => {
                read_frame_paths(dir)?;
                Box::new(read_frames(dir).map_err(anyhow::Error::from)?)
            }
            (None, Some(script)) => {
                let text = fs::read_to_string(script).with_context(|| format!("reading {}", script.display()))?;
                let scene = Scene::parse(&text).map_err(|e| Failure::Usage(format!("{}: {e}", script.display())))?;
                Box::new((0..scene.len()).map(move |i| scene.render(i).map(|(f, _)| f).map_err(|e| e.to_string())))
            }
            _ => return usage("give exactly one of --frames or --script"),
        };
        if let Some(d) = &self.dump_stages {
            fs::create_dir_all(d).with_context(|| format!("creating {}", d.display()))?;
        }

        let mut client = match &self.supervisor {
            Some(addr) => Some(
                Client::connect(addr.as_str(), cfg.session, p.learner, &format!("learner{}", p.learner), Duration::from_secs(10))
                    .with_context(|| format!("connecting to {addr}"))?,
            ),
            None => None,
        };
        let mut out = match client {
            Some(_) => None,
            None => Some(output(self.output.as_deref())?),
        };
        let sink = |e: &GestureEvent| -> Result<(), String> {
            match (&mut client, &mut out) {
                (Some(c), _) => c.send_event(&WireEvent::from(e)).map_err(|e| e.to_string()),
                (None, Some(o)) => {
                    let line = serde_json::to_string(e).map_err(|e| e.to_string())?;
                    writeln!(o, "{line}").and_then(|_| o.flush()).map_err(|e| e.to_string())
                }
                (None, None) => unreachable!("one sink is always set"),
            }
        };
        let dump = self.dump_stages.clone();
        let on_frame = |i: u32, dbg: &_| match &dump {
            Some(d) => dump_stages(d, i, dbg).map_err(|e| e.to_string()),
            None => Ok(()),
        };
        let summary = run_session(&mut pipeline, frames, sink, on_frame).map_err(anyhow::Error::from)?;
        if let Some(c) = client {
            c.bye().context("closing connection")?;
        }
        eprintln!(
            "frames={} events={} mean_latency_ms={:.3} fps={:.1}",
            summary.frames,
            summary.events,
            summary.mean_latency_ms,
            summary.frames_per_second()
        );
        Ok(())
    }
}
