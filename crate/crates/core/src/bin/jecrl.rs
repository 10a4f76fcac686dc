use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use jecrl::analysis::{
    accum_grad_matrix, bank_mosaic, decode_pgm, detection_error, encode_pgm, mean_matrices, modification_gray, to_gray,
    top_n_csv, top_n_stats, AccumGradMatrix, AnalysisOptions,
};
use jecrl::config::load_config;
use jecrl::distortion::{probabilities_from_costs, simulate_embedding, solve_lambda, payload_entropy, CostMap, PayloadSpec};
use jecrl::env::FilterBank;
use jecrl::jmap::{read_grid, write_grid};
use jecrl::jpeg::{read_image, write_jcoef, JpegImage};
use jecrl::nn::Checkpoint;
use jecrl::trainer::{export_costs, list_images, load_dataset, load_policy, telemetry_csv, TrainState};
use jecrl::uerd::uerd_cost;
use jecrl::{Error, Grid};

#[derive(Parser)]
#[command(name = "jecrl", version, about = "Learned JPEG embedding costs")]
struct Cli {
    /// Worker threads for parallel analysis (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// UERD cost map of an image.
    CostUerd {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Solve for the Lagrange multiplier that meets a payload.
    LambdaSolve {
        #[arg(long = "in")]
        input: PathBuf,
        /// Cost map (default: UERD costs of the image).
        #[arg(long)]
        costs: Option<PathBuf>,
        #[arg(long)]
        payload: PayloadSpec,
    },
    /// Simulate optimal ternary embedding and write the stego coefficients.
    EmbedSim {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        costs: Option<PathBuf>,
        #[arg(long)]
        payload: PayloadSpec,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the policy and environment networks.
    Train(TrainArgs),
    /// Deployment costs from a trained policy.
    ExportCosts {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Accumulated gradient component matrices and top-n statistics.
    AnalyzeGradients {
        /// An image or a directory of images.
        #[arg(long = "in")]
        input: PathBuf,
        /// Bank to analyze (default: dct8, dct4 and srm30).
        #[arg(long)]
        bank: Option<FilterBank>,
        /// Zero the derivative where the image's residual reaches this value.
        #[arg(long)]
        truncation: Option<f64>,
        /// Use unit quantization steps.
        #[arg(long)]
        unit_steps: bool,
        /// Sample residuals only at block-aligned windows.
        #[arg(long)]
        block_aligned: bool,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Grayscale PGM of a map, a modification pattern or a learned policy.
    EmitMaps {
        /// A `.jmap` map, a stego image (with --cover) or a cover (with --checkpoint).
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        cover: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Convert a baseline grayscale JPEG to a `.jcoef` container.
    ParseJpeg {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Detection error from scores, one `cover,<score>` or `stego,<score>` per line.
    DetectPe {
        #[arg(long = "in")]
        input: PathBuf,
    },
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory of training images (default: synthetic covers).
    #[arg(long = "in")]
    input: Option<PathBuf>,
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    iters: Option<u64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    qf: Option<u32>,
    #[arg(long)]
    payload: Option<String>,
    #[arg(long)]
    bank: Option<String>,
    /// Any other configuration key, as `key=value`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Final checkpoint; telemetry goes next to it as `.csv`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Serialize)]
struct InputDigest {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct RunManifest {
    tool: &'static str,
    version: &'static str,
    argv: Vec<String>,
    seed: Option<u64>,
    config: Option<String>,
    inputs: Vec<InputDigest>,
    outputs: Vec<String>,
}

type Res<T> = Result<T, Error>;

fn write_atomic(path: &Path, bytes: &[u8]) -> Res<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().ok_or_else(|| Error::InvalidInput(format!("bad output path {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let mut f = fs::File::create(&tmp)?;
    f.write_all(bytes)?;
    f.sync_all()?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn digest(path: &Path) -> Res<InputDigest> {
    let bytes = fs::read(path)?;
    let hash = Sha256::digest(&bytes);
    Ok(InputDigest {
        path: path.display().to_string(),
        sha256: hash.iter().map(|b| format!("{b:02x}")).collect(),
    })
}

fn manifest_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

fn write_manifest(out: &Path, seed: Option<u64>, config: Option<String>, inputs: &[&Path], outputs: &[&Path]) -> Res<()> {
    let m = RunManifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        argv: std::env::args().collect(),
        seed,
        config,
        inputs: inputs.iter().map(|p| digest(p)).collect::<Res<_>>()?,
        outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
    };
    let json = serde_json::to_vec_pretty(&m).map_err(|e| Error::InvalidInput(e.to_string()))?;
    write_atomic(&manifest_path(out), &json)
}

fn load_costs(path: Option<&Path>, image: &JpegImage) -> Res<CostMap> {
    match path {
        Some(p) => {
            let c = read_grid(&fs::read(p)?)?;
            c.same_dims(image.coefficients(), "cost map")?;
            Ok(c)
        }
        None => Ok(uerd_cost(image)),
    }
}

fn read_checkpoint(path: &Path) -> Res<Checkpoint> {
    Checkpoint::from_bytes(&fs::read(path)?)
}

/// Filter heat maps tiled into one image, one pixel of gap between tiles.

fn matrices_csv(m: &AccumGradMatrix) -> String {
    let mut s = String::from("filter");
    for k in 0..8 {
        for l in 0..8 {
            s.push_str(&format!(",e{k}{l}"));
        }
    }
    s.push('\n');
    for (f, mat) in m.normalized().iter().enumerate() {
        s.push_str(&f.to_string());
        for v in mat {
            s.push_str(&format!(",{v:.6}"));
        }
        s.push('\n');
    }
    s
}

fn train(a: TrainArgs) -> Res<()> {
    let mut flags: Vec<(String, String)> = Vec::new();
    let mut push = |k: &str, v: Option<String>| {
        if let Some(v) = v {
            flags.push((k.to_string(), v));
        }
    };
    push("variant", a.variant);
    push("iterations", a.iters.map(|v| v.to_string()));
    push("batch", a.batch.map(|v| v.to_string()));
    push("seed", a.seed.map(|v| v.to_string()));
    push("qf", a.qf.map(|v| v.to_string()));
    push("payload", a.payload);
    push("bank", a.bank);
    push("image_dir", a.input.as_ref().map(|p| p.display().to_string()));
    for kv in &a.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects key=value, got {kv:?}")))?;
        flags.push((k.trim().to_string(), v.trim().to_string()));
    }
    let config = load_config(a.config.as_deref(), &flags)?;
    let data = load_dataset(&config)?;
    let mut inputs: Vec<PathBuf> = a.config.iter().cloned().collect();
    if let Some(dir) = &config.image_dir {
        inputs.extend(list_images(Path::new(dir))?);
    }
    let csv_path = a.out.with_extension("csv");
    let input_refs: Vec<&Path> = inputs.iter().map(|p| p.as_path()).collect();
    write_manifest(
        &a.out,
        Some(config.seed),
        Some(jecrl::config::to_kv(&config)),
        &input_refs,
        &[&a.out, &csv_path],
    )?;
    let iterations = config.iterations;
    let every = config.checkpoint_every;
    let mut state = TrainState::new(config)?;
    let out = a.out.clone();
    let telemetry = state.run(&data, iterations, |s, r| {
        let t = &r.telemetry;
        if t.iteration % 50 == 0 || t.iteration == iterations {
            log::info!(
                "step {} l_A {:.4e} H/C {:.3} env acc {:.3}",
                t.iteration,
                t.l_a,
                t.entropy / t.capacity,
                t.env_accuracy
            );
        }
        if every > 0 && t.iteration % every == 0 && t.iteration < iterations {
            let p = out.with_extension(format!("step{}.jckpt", t.iteration));
            write_atomic(&p, &s.checkpoint().to_bytes())?;
        }
        Ok(())
    })?;
    write_atomic(&a.out, &state.checkpoint().to_bytes())?;
    write_atomic(&csv_path, telemetry_csv(&telemetry).as_bytes())
}

fn analyze(input: &Path, bank: Option<FilterBank>, opts: AnalysisOptions, out: &Path) -> Res<()> {
    let paths = if input.is_dir() { list_images(input)? } else { vec![input.to_path_buf()] };
    let images: Vec<JpegImage> = paths.iter().map(|p| read_image(p)).collect::<Res<_>>()?;
    let banks = match bank {
        Some(b) => vec![b],
        None => vec![FilterBank::Dct8, FilterBank::Dct4, FilterBank::Srm30],
    };
    let mut outputs = vec![out.join("top_n.csv")];
    for b in &banks {
        outputs.push(out.join(format!("{b}.csv")));
        outputs.push(out.join(format!("{b}.pgm")));
    }
    fs::create_dir_all(out)?;
    let refs: Vec<&Path> = paths.iter().map(|p| p.as_path()).collect();
    let out_refs: Vec<&Path> = outputs.iter().map(|p| p.as_path()).collect();
    write_manifest(&out.join("analysis"), None, Some(format!("{opts:?}")), &refs, &out_refs)?;
    let mut curves = Vec::new();
    for b in banks {
        let sets: Vec<AccumGradMatrix> = images.iter().map(|im| accum_grad_matrix(im, b, &opts)).collect::<Res<_>>()?;
        let m = mean_matrices(&sets)?;
        if b == FilterBank::Dct8 {
            let hits = m.argmax_modes().iter().enumerate().filter(|(f, &(k, l))| k * 8 + l == *f).count();
            println!("dct8: {hits}/64 filters peak at their own frequency");
        }
        write_atomic(&out.join(format!("{b}.csv")), matrices_csv(&m).as_bytes())?;
        write_atomic(&out.join(format!("{b}.pgm")), &encode_pgm(&bank_mosaic(&m, 4)))?;
        curves.push((b.to_string(), top_n_stats(&m)?));
    }
    write_atomic(&out.join("top_n.csv"), top_n_csv(&curves).as_bytes())
}

fn emit_maps(input: &Path, cover: Option<&Path>, checkpoint: Option<&Path>, out: &Path) -> Res<()> {
    let mut inputs = vec![input];
    inputs.extend(cover);
    inputs.extend(checkpoint);
    write_manifest(out, None, None, &inputs, &[out])?;
    let gray = match (cover, checkpoint) {
        (Some(_), Some(_)) => return Err(Error::InvalidInput("use either --cover or --checkpoint".into())),
        (Some(c), None) => {
            let (stego, cover) = (read_image(input)?, read_image(c)?);
            stego.coefficients().same_dims(cover.coefficients(), "cover")?;
            let d = Grid::from_fn(stego.height(), stego.width(), |i, j| {
                (*stego.coefficients().get(i, j) - *cover.coefficients().get(i, j)).signum() as i8
            });
            modification_gray(&d)
        }
        (None, Some(ck)) => {
            let mut policy = load_policy(&read_checkpoint(ck)?)?;
            let q = policy.forward(&[read_image(input)?], false)?;
            to_gray(&q[0])
        }
        (None, None) => to_gray(&read_grid(&fs::read(input)?)?),
    };
    let bytes = encode_pgm(&gray);
    debug_assert!(decode_pgm(&bytes).is_ok());
    write_atomic(out, &bytes)
}

fn detect_pe(input: &Path) -> Res<()> {
    let text = fs::read_to_string(input)?;
    let (mut covers, mut stegos) = (Vec::new(), Vec::new());
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = || Error::InvalidInput(format!("line {}: expected cover,<score> or stego,<score>", n + 1));
        let (label, score) = line.split_once(',').ok_or_else(bad)?;
        let score: f64 = score.trim().parse().map_err(|_| bad())?;
        match label.trim() {
            "cover" | "0" => covers.push(score),
            "stego" | "1" => stegos.push(score),
            _ => return Err(bad()),
        }
    }
    println!("{:.6}", detection_error(&covers, &stegos)?);
    Ok(())
}

fn run(cmd: Cmd) -> Res<()> {
    match cmd {
        Cmd::CostUerd { input, out } => {
            let img = read_image(&input)?;
            write_manifest(&out, None, None, &[&input], &[&out])?;
            write_atomic(&out, &write_grid(&uerd_cost(&img))?)
        }
        Cmd::LambdaSolve { input, costs, payload } => {
            let img = read_image(&input)?;
            let c = load_costs(costs.as_deref(), &img)?;
            let capacity = payload.resolve(&img);
            let lambda = solve_lambda(&c, capacity)?;
            let h = payload_entropy(&probabilities_from_costs(&c, lambda)?);
            println!("lambda {lambda:.10e}\ncapacity {capacity:.3}\nentropy {h:.3}");
            Ok(())
        }
        Cmd::EmbedSim { input, costs, payload, seed, out } => {
            let img = read_image(&input)?;
            let c = load_costs(costs.as_deref(), &img)?;
            let lambda = solve_lambda(&c, payload.resolve(&img))?;
            let policy = probabilities_from_costs(&c, lambda)?;
            let stego = img.apply_modifications(&simulate_embedding(&policy, seed))?;
            let mut inputs = vec![input.as_path()];
            inputs.extend(costs.as_deref());
            write_manifest(&out, Some(seed), Some(format!("payload = {payload}")), &inputs, &[&out])?;
            write_atomic(&out, &write_jcoef(&stego)?)
        }
        Cmd::Train(a) => train(a),
        Cmd::ExportCosts { input, checkpoint, out } => {
            let mut policy = load_policy(&read_checkpoint(&checkpoint)?)?;
            let img = read_image(&input)?;
            write_manifest(&out, None, None, &[&input, &checkpoint], &[&out])?;
            write_atomic(&out, &write_grid(&export_costs(&mut policy, &img)?)?)
        }
        Cmd::AnalyzeGradients {
            input,
            bank,
            truncation,
            unit_steps,
            block_aligned,
            out,
        } => {
            let opts = AnalysisOptions {
                dequantize: !unit_steps,
                block_aligned,
                truncation,
            };
            analyze(&input, bank, opts, &out)
        }
        Cmd::EmitMaps {
            input,
            cover,
            checkpoint,
            out,
        } => emit_maps(&input, cover.as_deref(), checkpoint.as_deref(), &out),
        Cmd::ParseJpeg { input, out } => {
            let img = read_image(&input)?;
            write_manifest(&out, None, None, &[&input], &[&out])?;
            write_atomic(&out, &write_jcoef(&img)?)
        }
        Cmd::DetectPe { input } => detect_pe(&input),
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 1,
        e if e.is_numeric() => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
