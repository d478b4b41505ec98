//! End-to-end stitching: correspondences → registrations → seam → blend,
//! plus the artifacts a run leaves in its output directory.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::blend::{build_guidance, solve_poisson, BlendStats};
use crate::config::RunConfig;
use crate::correspond::{
    detect_and_match, parse_correspondences, Correspondence, CorrespondenceSet, Source,
};
use crate::error::{Result, StitchError};
use crate::eval::{crop_band, crop_eval, EvalReport, StitchedImage};
use crate::geometry::Point;
use crate::image::{load_image, save_image, Image};
use crate::registration::{build_registrations, Canvas, RegistrationStats, Registrations};
use crate::seam::{
    alpha_expansion, composite, initial_labeling, DuplicationPair, EnergyBreakdown, EnergyModel,
    Expansion, Labeling, StitchProblem,
};

/// Everything a stitch produced, in memory.
#[derive(Clone, Debug)]
pub struct StitchOutcome {
    pub correspondences: CorrespondenceSet,
    pub registrations: Registrations,
    pub model: EnergyModel,
    pub expansion: Expansion,
    pub satisfied_duplications: usize,
    pub composite: Image,
    pub panorama: Image,
    pub blend: Option<BlendStats>,
    pub timings: Vec<(&'static str, f64)>,
    pub sources: Vec<Image>,
}

impl StitchOutcome {
    pub fn labeling(&self) -> &Labeling {
        &self.expansion.labeling
    }

    pub fn canvas(&self) -> Canvas {
        self.registrations.canvas
    }
}

fn elapsed_ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// Matched points the candidate registration `i` does not align: the same
/// scene point lands at `p` through the reference and at `q` through the
/// warped candidate.
fn duplication_pairs(
    set: &CorrespondenceSet,
    regs: &Registrations,
    index: usize,
    threshold: f64,
) -> Vec<DuplicationPair> {
    let reg = &regs.candidates[index];
    set.iter()
        .filter_map(|c| {
            let p = regs.canvas.to_canvas(c.p0);
            let q = reg.mesh.invert(c.p1, &reg.homography, &regs.canvas)?;
            (p.dist(q) > threshold).then_some(DuplicationPair { p, q })
        })
        .collect()
}

/// Assembles the seam-finding instance from the registrations.
pub fn build_problem(
    reference: &Image,
    set: &CorrespondenceSet,
    regs: &Registrations,
    cfg: &RunConfig,
) -> Result<StitchProblem> {
    let mut sources = vec![regs.canvas.place_reference(reference)];
    sources.extend(regs.candidates.iter().map(|c| c.warped.clone()));
    let inliers: Vec<Vec<Point>> = regs
        .candidates
        .iter()
        .map(|c| {
            c.inlier_indices
                .iter()
                .map(|&k| regs.canvas.to_canvas(set.get(k).p0))
                .collect()
        })
        .collect();
    let pairs = (0..regs.candidates.len())
        .map(|i| duplication_pairs(set, regs, i, cfg.registration.inlier_threshold))
        .collect();
    StitchProblem::new(sources, inliers, pairs, cfg.energy.clone())
}

/// Stitches `candidate` onto `reference`. Without `correspondences` the
/// built-in matcher supplies them.
pub fn stitch(
    reference: &Image,
    candidate: &Image,
    correspondences: Option<CorrespondenceSet>,
    cfg: &RunConfig,
) -> Result<StitchOutcome> {
    let mut timings = Vec::new();
    let t = Instant::now();
    let set = match correspondences {
        Some(set) => set,
        None => detect_and_match(reference, candidate, &cfg.matcher)
            .map_err(|e| e.in_stage("correspondences"))?,
    };
    set.validate_bounds(reference.dims(), candidate.dims())
        .map_err(|e| e.in_stage("correspondences"))?;
    timings.push(("correspondences", elapsed_ms(t)));

    let t = Instant::now();
    let regs = build_registrations(reference, candidate, &set, &cfg.registration, cfg.rng_seed)
        .map_err(|e| e.in_stage("registration"))?;
    timings.push(("registration", elapsed_ms(t)));

    let t = Instant::now();
    let problem = build_problem(reference, &set, &regs, cfg).map_err(|e| e.in_stage("seam"))?;
    let model = EnergyModel::from_problem(&problem);
    let expansion = alpha_expansion(&model, initial_labeling(&model));
    let satisfied_duplications = model.satisfied_duplications(&expansion.labeling);
    let comp = composite(&expansion.labeling, &problem);
    timings.push(("seam", elapsed_ms(t)));

    let (panorama, blend) = if cfg.blend {
        let t = Instant::now();
        let bp = build_guidance(&comp, &expansion.labeling, problem.sources())
            .map_err(|e| e.in_stage("blend"))?;
        let blended = solve_poisson(&bp);
        timings.push(("blend", elapsed_ms(t)));
        (blended.image, Some(blended.stats))
    } else {
        (comp.clone(), None)
    };
    let sources = problem.sources().to_vec();
    Ok(StitchOutcome {
        correspondences: set,
        registrations: regs,
        model,
        expansion,
        satisfied_duplications,
        composite: comp,
        panorama,
        blend,
        timings,
        sources,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct CandidateSummary {
    pub generation_index: usize,
    pub homography: [[f64; 3]; 3],
    pub inliers: usize,
    pub seed_point: Point,
    pub mesh_fell_back: bool,
    /// Canvas pixels that ended up labeled with this candidate.
    pub pixels: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunReport {
    pub timings_ms: Vec<(String, f64)>,
    pub correspondences: usize,
    pub correspondence_source: Source,
    pub registration: RegistrationStats,
    pub canvas: Canvas,
    pub candidates: Vec<CandidateSummary>,
    pub reference_pixels: usize,
    pub initial_energy: EnergyBreakdown,
    pub final_energy: EnergyBreakdown,
    pub cycles: usize,
    pub accepted_moves: usize,
    pub rejected_moves: usize,
    pub satisfied_duplications: usize,
    pub blend: Option<BlendStats>,
    pub eval: Option<EvalReport>,
    pub outputs: Vec<PathBuf>,
}

impl RunReport {
    fn from_outcome(o: &StitchOutcome) -> Self {
        let hist = o.labeling().histogram(o.sources.len());
        let candidates = o
            .registrations
            .candidates
            .iter()
            .enumerate()
            .map(|(i, c)| CandidateSummary {
                generation_index: c.generation_index,
                homography: c.homography.to_rows(),
                inliers: c.inlier_indices.len(),
                seed_point: c.seed_point,
                mesh_fell_back: c.mesh_fell_back,
                pixels: hist[i + 1],
            })
            .collect();
        RunReport {
            timings_ms: o.timings.iter().map(|&(s, t)| (s.to_string(), t)).collect(),
            correspondences: o.correspondences.len(),
            correspondence_source: o.correspondences.source(),
            registration: o.registrations.stats.clone(),
            canvas: o.registrations.canvas,
            candidates,
            reference_pixels: hist[0],
            initial_energy: o.expansion.initial,
            final_energy: o.expansion.energy(),
            cycles: o.expansion.cycles,
            accepted_moves: o.expansion.trace.len(),
            rejected_moves: o.expansion.rejected_moves,
            satisfied_duplications: o.satisfied_duplications,
            blend: o.blend.clone(),
            eval: None,
            outputs: Vec::new(),
        }
    }

    /// Candidate counts per stage add up, and every canvas pixel has
    /// exactly one label.
    pub fn counts_reconcile(&self) -> bool {
        let labeled =
            self.reference_pixels + self.candidates.iter().map(|c| c.pixels).sum::<usize>();
        self.registration.reconciles()
            && self.registration.kept == self.candidates.len()
            && labeled == self.canvas.width * self.canvas.height
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let r = &self.registration;
        let _ = writeln!(s, "# stitch run report");
        for (stage, ms) in &self.timings_ms {
            let _ = writeln!(s, "time.{stage}_ms = {ms:.1}");
        }
        let _ = writeln!(s, "correspondences = {}", self.correspondences);
        let _ = writeln!(
            s,
            "correspondence_source = {:?}",
            self.correspondence_source
        );
        let _ = writeln!(s, "registration.iterations = {}", r.iterations);
        let _ = writeln!(s, "registration.skipped = {}", r.skipped);
        let _ = writeln!(s, "registration.generated = {}", r.generated);
        for (reason, n) in &r.rejected {
            let _ = writeln!(s, "registration.rejected.{reason} = {n}");
        }
        let _ = writeln!(s, "registration.rejected_total = {}", r.rejected_total());
        let _ = writeln!(s, "registration.duplicates = {}", r.duplicates);
        let _ = writeln!(s, "registration.kept = {}", r.kept);
        let _ = writeln!(s, "counts_reconcile = {}", self.counts_reconcile());
        let _ = writeln!(
            s,
            "canvas = {}x{} reference_offset = {},{}",
            self.canvas.width, self.canvas.height, self.canvas.offset.0, self.canvas.offset.1
        );
        let _ = writeln!(s, "label.0.pixels = {}", self.reference_pixels);
        for (i, c) in self.candidates.iter().enumerate() {
            let h: Vec<String> = c
                .homography
                .iter()
                .flatten()
                .map(|v| format!("{v:.9}"))
                .collect();
            let _ = writeln!(
                s,
                "label.{}.pixels = {} inliers = {} seed = {:.2},{:.2} iteration = {} mesh_fell_back = {} homography = [{}]",
                i + 1,
                c.pixels,
                c.inliers,
                c.seed_point.x,
                c.seed_point.y,
                c.generation_index,
                c.mesh_fell_back,
                h.join(" ")
            );
        }
        let _ = writeln!(s, "# energy: mask warp smooth dup total");
        let _ = writeln!(s, "energy.initial = {}", self.initial_energy);
        let _ = writeln!(s, "energy.final = {}", self.final_energy);
        let _ = writeln!(
            s,
            "expansion.cycles = {} accepted = {} rejected = {}",
            self.cycles, self.accepted_moves, self.rejected_moves
        );
        let _ = writeln!(
            s,
            "duplications_satisfied = {}",
            self.satisfied_duplications
        );
        match &self.blend {
            Some(b) => {
                for (c, st) in b.channels.iter().enumerate() {
                    let _ = writeln!(
                        s,
                        "blend.channel{c} = iterations {} residual {:.3e} converged {}",
                        st.iterations, st.relative_residual, st.converged
                    );
                }
                let _ = writeln!(
                    s,
                    "blend.free = {} fixed = {} unanchored = {}",
                    b.free_pixels, b.fixed_pixels, b.unanchored_pixels
                );
                if !b.converged() {
                    let _ = writeln!(s, "warning = blend did not converge; best iterate used");
                }
            }
            None => {
                let _ = writeln!(s, "blend = off");
            }
        }
        if let Some(ev) = &self.eval {
            for row in &ev.rows {
                let score = row.score.map_or("-".to_string(), |v| format!("{v:.6}"));
                let _ = writeln!(
                    s,
                    "eval.{}.{} = {} ({})",
                    row.region, row.metric, score, row.status
                );
            }
        }
        for p in &self.outputs {
            let _ = writeln!(s, "output = {}", p.display());
        }
        s
    }
}

/// Saturated, well-separated colors for label maps.
pub fn label_palette(labels: usize) -> Vec<[u8; 3]> {
    const BASE: [[u8; 3]; 8] = [
        [128, 128, 128],
        [230, 25, 75],
        [0, 130, 200],
        [60, 180, 75],
        [245, 130, 48],
        [145, 30, 180],
        [70, 240, 240],
        [255, 225, 25],
    ];
    (0..labels)
        .map(|l| {
            if l < BASE.len() {
                BASE[l]
            } else {
                // Golden-angle hues past the fixed table.
                let hue = (l as f64 * 137.508) % 360.0;
                hsv(hue)
            }
        })
        .collect()
}

fn hsv(hue: f64) -> [u8; 3] {
    let x = 1.0 - ((hue / 60.0) % 2.0 - 1.0).abs();
    let (r, g, b) = match (hue / 60.0) as u32 {
        0 => (1.0, x, 0.0),
        1 => (x, 1.0, 0.0),
        2 => (0.0, 1.0, x),
        3 => (0.0, x, 1.0),
        4 => (x, 0.0, 1.0),
        _ => (1.0, 0.0, x),
    };
    [r, g, b].map(|v: f64| (v * 255.0).round() as u8)
}

/// Writes the label map as an 8-bit indexed PNG with a text legend next
/// to it (`<stem>.txt`).
pub fn save_label_map(labeling: &Labeling, labels: usize, path: &Path) -> Result<PathBuf> {
    if labels > 256 {
        return Err(StitchError::Encode {
            path: path.to_path_buf(),
            reason: format!("{labels} labels do not fit an 8-bit palette"),
        });
    }
    let palette = label_palette(labels);
    let file = File::create(path).map_err(|e| StitchError::io(path, e))?;
    let mut encoder = png::Encoder::new(
        BufWriter::new(file),
        labeling.width() as u32,
        labeling.height() as u32,
    );
    encoder.set_color(png::ColorType::Indexed);
    encoder.set_depth(png::BitDepth::Eight);
    encoder.set_palette(palette.iter().flatten().copied().collect::<Vec<u8>>());
    let encode_err = |e: png::EncodingError| StitchError::Encode {
        path: path.to_path_buf(),
        reason: e.to_string(),
    };
    let mut writer = encoder.write_header().map_err(encode_err)?;
    let data: Vec<u8> = labeling.as_slice().iter().map(|&l| l as u8).collect();
    writer.write_image_data(&data).map_err(encode_err)?;
    writer.finish().map_err(encode_err)?;

    let legend_path = path.with_extension("txt");
    let mut legend = String::from("# label r g b source\n");
    for (l, c) in palette.iter().enumerate() {
        let what = if l == 0 {
            "reference".to_string()
        } else {
            format!("candidate registration {l}")
        };
        let _ = writeln!(legend, "{l} {} {} {} {what}", c[0], c[1], c[2]);
    }
    std::fs::write(&legend_path, legend).map_err(|e| StitchError::io(&legend_path, e))?;
    Ok(legend_path)
}

/// Reads back a label map written by [`save_label_map`].
pub fn load_label_map(path: &Path) -> Result<Labeling> {
    let file = File::open(path).map_err(|e| StitchError::io(path, e))?;
    let decode_err = |e: png::DecodingError| StitchError::Decode {
        path: path.to_path_buf(),
        reason: e.to_string(),
    };
    let mut reader = png::Decoder::new(BufReader::new(file))
        .read_info()
        .map_err(decode_err)?;
    let info = reader.info();
    if info.color_type != png::ColorType::Indexed || info.bit_depth != png::BitDepth::Eight {
        return Err(StitchError::Decode {
            path: path.to_path_buf(),
            reason: "not an 8-bit indexed label map".into(),
        });
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let mut buf = vec![0; reader.output_buffer_size().unwrap_or(w * h)];
    let frame = reader.next_frame(&mut buf).map_err(decode_err)?;
    let labels = buf[..frame.buffer_size()]
        .iter()
        .map(|&v| v as usize)
        .collect();
    Ok(Labeling::from_vec(w, h, labels))
}

/// One line per accepted move: `cycle label E_m E_w E_s E_d total`.
pub fn energy_log_text(expansion: &Expansion) -> String {
    let mut s = String::from("# cycle label E_m E_w E_s E_d total\n");
    let _ = writeln!(s, "0 - {}", expansion.initial);
    for m in &expansion.trace {
        let _ = writeln!(s, "{} {} {}", m.cycle, m.label, m.energy);
    }
    s
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| StitchError::io(path, e))
}

fn dump_candidates(o: &StitchOutcome, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| StitchError::io(dir, e))?;
    let mut out = Vec::new();
    for (i, c) in o.registrations.candidates.iter().enumerate() {
        let png_path = dir.join(format!("candidate_{}.png", i + 1));
        save_image(&c.warped, &png_path, true)?;
        let rows = c.homography.to_rows();
        let mut text = String::from("# homography (candidate -> reference), row-major\n");
        for row in rows {
            let _ = writeln!(text, "{:.12} {:.12} {:.12}", row[0], row[1], row[2]);
        }
        let _ = writeln!(text, "inliers = {}", c.inlier_indices.len());
        let _ = writeln!(text, "seed = {:.3} {:.3}", c.seed_point.x, c.seed_point.y);
        let txt_path = dir.join(format!("candidate_{}.txt", i + 1));
        write_text(&txt_path, &text)?;
        out.push(png_path);
        out.push(txt_path);
    }
    Ok(out)
}

fn load_correspondences(path: &Path) -> Result<CorrespondenceSet> {
    let file = File::open(path).map_err(|e| StitchError::io(path, e))?;
    let set = parse_correspondences(BufReader::new(file))?;
    if set.duplicates_dropped() > 0 {
        log::warn!(
            "{}: dropped {} duplicate correspondences",
            path.display(),
            set.duplicates_dropped()
        );
    }
    Ok(set)
}

/// Correspondences of the full reference re-expressed for a cropped one.
fn shift_correspondences(
    set: &CorrespondenceSet,
    origin: (usize, usize),
    dims: (usize, usize),
) -> CorrespondenceSet {
    let items = set.iter().filter_map(|c| {
        let p0 = Point::new(c.p0.x - origin.0 as f64, c.p0.y - origin.1 as f64);
        let inside = p0.x >= 0.0
            && p0.y >= 0.0
            && p0.x <= (dims.0 - 1) as f64
            && p0.y <= (dims.1 - 1) as f64;
        inside.then_some(Correspondence { p0, ..*c })
    });
    CorrespondenceSet::new(items.collect::<Vec<_>>(), set.source())
}

/// Runs the crop protocol with this configuration's stitcher.
pub fn evaluate(
    reference: &Image,
    candidate: &Image,
    correspondences: Option<&CorrespondenceSet>,
    cfg: &RunConfig,
) -> Result<EvalReport> {
    let ev = cfg.eval.clone().unwrap_or_default();
    let split = crop_band(reference, ev.crop_px, ev.side)?;
    crop_eval(
        &ev.dataset,
        reference,
        candidate,
        ev.crop_px,
        ev.side,
        |kept, cand| {
            let set =
                correspondences.map(|s| shift_correspondences(s, split.kept_origin, kept.dims()));
            let o = stitch(kept, cand, set, cfg)?;
            Ok(StitchedImage {
                reference_offset: o.canvas().offset,
                panorama: o.panorama,
            })
        },
    )
}

/// Loads the inputs, stitches, and writes every artifact into the output
/// directory: `panorama.png`, `labels.png` (+ legend), `candidates/`,
/// `report.txt`, `energy.log` and, with evaluation on, `eval.csv`.
pub fn run_pipeline(cfg: &RunConfig) -> Result<RunReport> {
    cfg.validate()?;
    let missing = |key: &str| StitchError::config(key, None, "input path is required");
    let ref_path = cfg.reference.as_ref().ok_or_else(|| missing("reference"))?;
    let cand_path = cfg.candidate.as_ref().ok_or_else(|| missing("candidate"))?;
    let reference = load_image(ref_path).map_err(|e| e.in_stage("load"))?;
    let candidate = load_image(cand_path).map_err(|e| e.in_stage("load"))?;
    let set = cfg
        .correspondences
        .as_deref()
        .map(load_correspondences)
        .transpose()
        .map_err(|e| e.in_stage("correspondences"))?;

    let outcome = stitch(&reference, &candidate, set.clone(), cfg)?;
    let mut report = RunReport::from_outcome(&outcome);

    let out = &cfg.out_dir;
    std::fs::create_dir_all(out).map_err(|e| StitchError::io(out, e).in_stage("output"))?;
    let write = |report: &mut RunReport| -> Result<()> {
        let pano = out.join("panorama.png");
        save_image(&outcome.panorama, &pano, true)?;
        report.outputs.push(pano);
        let labels = cfg
            .dump_labels
            .clone()
            .unwrap_or_else(|| out.join("labels.png"));
        let legend = save_label_map(outcome.labeling(), outcome.sources.len(), &labels)?;
        report.outputs.extend([labels, legend]);
        let log_path = cfg
            .energy_log
            .clone()
            .unwrap_or_else(|| out.join("energy.log"));
        write_text(&log_path, &energy_log_text(&outcome.expansion))?;
        report.outputs.push(log_path);
        let cand_dir = cfg
            .dump_candidates
            .clone()
            .unwrap_or_else(|| out.join("candidates"));
        report.outputs.extend(dump_candidates(&outcome, &cand_dir)?);
        Ok(())
    };
    write(&mut report).map_err(|e| e.in_stage("output"))?;

    if cfg.eval.is_some() {
        let t = Instant::now();
        let ev =
            evaluate(&reference, &candidate, set.as_ref(), cfg).map_err(|e| e.in_stage("eval"))?;
        report.timings_ms.push(("eval".into(), elapsed_ms(t)));
        let csv = out.join("eval.csv");
        write_text(&csv, &ev.to_csv()).map_err(|e| e.in_stage("output"))?;
        report.outputs.push(csv);
        report.eval = Some(ev);
    }
    let report_path = out.join("report.txt");
    report.outputs.push(report_path.clone());
    write_text(&report_path, &report.to_text()).map_err(|e| e.in_stage("output"))?;
    Ok(report)
}
