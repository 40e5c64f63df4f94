use std::fs;
use std::io::Write;
use std::net::ToSocketAddrs;
use std::path::{Path, PathBuf};
use std::sync::atomic::AtomicBool;
use std::sync::Arc;
use std::time::Instant;

use anyhow::anyhow;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use splitseg::analysis::{
    cloud_comparison, comparison_csv, count_flops, CostReport, CostTarget, Resolution,
};
use splitseg::codec::{quantize, Bitstream, BITSTREAM_MAGIC};
use splitseg::harness::{run_client, Server, SessionConfig, Topology};
use splitseg::image::{read_ppm, write_pgm_labels, write_ppm};
use splitseg::model::{DecoderConfig, SegMap, Variant, SEGMAP_MAGIC};
use splitseg::system::{System, SystemWeights};
use splitseg::tensor::{read_tensor, write_tensor, TENSOR_MAGIC};
use splitseg::weights::{WeightContainer, WEIGHTS_MAGIC};
use splitseg::Tensor;

use crate::failure::{Classify, Failure};
use crate::ModelArgs;

type CmdResult = Result<(), Failure>;

/// Writes one line to stdout; a closed pipe is not an error.
fn emit(line: &str) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}").and_then(|_| out.flush());
}

fn print_json(v: &Value) {
    emit(&serde_json::to_string_pretty(v).expect("json values serialize"));
}

fn read(path: &Path) -> Result<Vec<u8>, Failure> {
    fs::read(path).io(format!("reading {}", path.display()))
}

fn write(path: &Path, bytes: &[u8]) -> CmdResult {
    fs::write(path, bytes).io(format!("writing {}", path.display()))
}

fn load_system(path: &Path) -> Result<System, Failure> {
    System::load(path).map_err(|e| match Failure::from(e) {
        Failure::Io(e) => Failure::Io(e.context(format!("loading weights {}", path.display()))),
        other => other,
    })
}

fn read_tensor_file(path: &Path) -> Result<Tensor, Failure> {
    let bytes = read(path)?;
    read_tensor(bytes.as_slice()).io(format!("parsing tensor {}", path.display()))
}

impl ModelArgs {
    /// Resolves a config from an optional `key = value` file plus flag
    /// overrides. `fallback` supplies the variant when neither names one.
    fn resolve(&self, file: Option<&Path>, fallback: &str) -> Result<DecoderConfig, Failure> {
        let mut text = match file {
            Some(p) => fs::read_to_string(p).io(format!("reading config {}", p.display()))?,
            None => String::new(),
        };
        let has_variant = text.lines().any(|l| {
            l.split('#')
                .next()
                .unwrap_or("")
                .trim_start()
                .starts_with("variant")
        });
        match &self.variant {
            Some(v) => text.push_str(&format!("\nvariant = {v}\n")),
            None if !has_variant => text.push_str(&format!("\nvariant = {fallback}\n")),
            None => {}
        }
        let classes = self
            .classes
            .or(if file.is_none() { Some(19) } else { None });
        for (key, value) in [
            ("dim", self.dim),
            ("classes", classes),
            ("downsample", self.downsample),
        ] {
            if let Some(v) = value {
                text.push_str(&format!("{key} = {v}\n"));
            }
        }
        let config = DecoderConfig::from_kv(&text).usage("invalid model configuration")?;
        config.validate().usage("invalid model configuration")?;
        Ok(config)
    }
}

fn config_json(c: &DecoderConfig) -> Value {
    json!({
        "variant": c.variant.as_str(),
        "dim": c.dim,
        "downsample": c.downsample,
        "features": c.features,
        "groups": c.groups,
        "classes": c.classes,
        "stride": c.stride,
    })
}

pub fn init(out: &Path, config: Option<&Path>, model: &ModelArgs, seed: u64) -> CmdResult {
    let config = model.resolve(config, "jd")?;
    let weights = SystemWeights::init(config, seed).usage("invalid model configuration")?;
    let container = weights.to_container();
    let bytes = container.to_bytes();
    write(out, &bytes)?;
    print_json(&json!({
        "path": out.display().to_string(),
        "model_id": format!("{:#010x}", container.model_id()),
        "entries": container.len(),
        "decoder_params": weights.decoder.param_count(),
        "config": config_json(&config),
    }));
    Ok(())
}

pub fn inspect(path: &Path) -> CmdResult {
    let bytes = read(path)?;
    let magic: [u8; 4] = bytes
        .get(..4)
        .and_then(|m| m.try_into().ok())
        .ok_or_else(|| Failure::Io(anyhow!("{}: file too short to identify", path.display())))?;
    let info = match magic {
        WEIGHTS_MAGIC => {
            let c = WeightContainer::from_bytes(&bytes).io("parsing weight container")?;
            let values: usize = c.iter().map(|(_, t)| t.len()).sum();
            let mut info = json!({
                "kind": "weights",
                "model_id": format!("{:#010x}", c.model_id()),
                "entries": c.len(),
                "stored_values": values,
            });
            if let Ok(w) = SystemWeights::from_container(&c) {
                info["config"] = config_json(&w.config);
                info["decoder_params"] = json!(w.decoder.param_count());
            }
            info
        }
        BITSTREAM_MAGIC => {
            let b = Bitstream::from_bytes(&bytes).protocol("parsing bitstream")?;
            let h = &b.header;
            json!({
                "kind": "bitstream",
                "model_id": format!("{:#010x}", h.model_id),
                "features": h.features,
                "image": h.image,
                "latent": h.latent,
                "hyper": h.hyper,
                "hyper_bytes": b.hyper_payload.len(),
                "latent_bytes": b.latent_payload.len(),
                "total_bytes": b.total_len(),
                "bpp": 8.0 * b.total_len() as f64 / (h.image[0] as f64 * h.image[1] as f64),
            })
        }
        SEGMAP_MAGIC => {
            let m = SegMap::from_file_bytes(&bytes).io("parsing segmentation map")?;
            let mut counts = vec![0usize; m.classes()];
            for &l in m.labels() {
                counts[l as usize - 1] += 1;
            }
            json!({
                "kind": "segmap",
                "height": m.height(),
                "width": m.width(),
                "classes": m.classes(),
                "pixels_per_class": counts,
            })
        }
        TENSOR_MAGIC => {
            let t = read_tensor(bytes.as_slice()).io("parsing tensor")?;
            let d = t.data();
            let (lo, hi) = d
                .iter()
                .fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &v| {
                    (a.min(v), b.max(v))
                });
            let mean = d.iter().map(|&v| v as f64).sum::<f64>() / d.len().max(1) as f64;
            json!({ "kind": "tensor", "shape": t.shape(), "min": lo, "max": hi, "mean": mean })
        }
        other => {
            return Err(Failure::Io(anyhow!(
                "{}: unrecognised magic {:?}",
                path.display(),
                String::from_utf8_lossy(&other)
            )))
        }
    };
    print_json(&info);
    Ok(())
}

fn report_summary(r: &CostReport) -> Value {
    json!({
        "name": r.title,
        "macs": r.total_macs(),
        "gmacs": r.total_macs() as f64 / 1e9,
        "params": r.total_params(),
        "mparams": r.total_params() as f64 / 1e6,
    })
}

fn write_report(dir: &Path, stem: &str, r: &CostReport) -> CmdResult {
    let csv = r.to_csv().io("serialising report")?;
    let json = r.to_json().io("serialising report")?;
    write(&dir.join(format!("{stem}.csv")), csv.as_bytes())?;
    write(&dir.join(format!("{stem}.json")), json.as_bytes())
}

pub fn analyze(
    model: &ModelArgs,
    res: Resolution,
    with_comparison: bool,
    out_dir: Option<&Path>,
) -> CmdResult {
    let config = model.resolve(None, "jd")?;
    let (h, w) = (res.height, res.width);
    let cloud = count_flops(&CostTarget::cloud(config), h, w);
    let decoder = count_flops(&CostTarget::decoder(config), h, w);
    let mut summary = json!({
        "resolution": res.to_string(),
        "config": config_json(&config),
        "cloud": report_summary(&cloud),
        "decoder": report_summary(&decoder),
    });
    let jd_dim = match config.variant {
        Variant::Joint => config.dim,
        Variant::Baseline => DecoderConfig::JOINT_DEFAULT_DIM,
    };
    let rows = with_comparison.then(|| cloud_comparison(config.classes, jd_dim, h, w));
    if let Some(rows) = &rows {
        summary["comparison"] = serde_json::to_value(rows).expect("rows serialize");
    }
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).io(format!("creating {}", dir.display()))?;
        write_report(dir, "cloud", &cloud)?;
        write_report(dir, "decoder", &decoder)?;
        if let Some(rows) = &rows {
            let csv = comparison_csv(rows).io("serialising table")?;
            write(&dir.join("comparison.csv"), csv.as_bytes())?;
        }
    }
    print_json(&summary);
    Ok(())
}

fn stream_summary(b: &Bitstream, estimate_bits: f64) -> Value {
    let [h, w] = b.header.image;
    let pixels = h as f64 * w as f64;
    json!({
        "total_bytes": b.total_len(),
        "payload_bits": 8 * b.payload_len(),
        "estimate_bits": estimate_bits,
        "bpp": 8.0 * b.total_len() as f64 / pixels,
        "estimate_bpp": estimate_bits / pixels,
    })
}

pub fn encode(input: &Path, weights: &Path, out: &Path) -> CmdResult {
    let system = load_system(weights)?;
    let r = read_tensor_file(input)?;
    let (b, latents) = system.codec.encode_with_latents(&r)?;
    let est = system.codec.estimate(&latents)?;
    write(out, &b.to_bytes())?;
    print_json(&stream_summary(&b, est.total_bits()));
    Ok(())
}

pub fn decode(input: &Path, weights: &Path, out: &Path) -> CmdResult {
    let system = load_system(weights)?;
    let bytes = read(input)?;
    let b =
        Bitstream::from_bytes(&bytes).protocol(format!("parsing bitstream {}", input.display()))?;
    let latents = system.codec.decode(&b)?;
    let r_hat = latents.r_hat.to_tensor();
    let mut buf = Vec::new();
    write_tensor(&mut buf, &r_hat).io("serialising tensor")?;
    write(out, &buf)?;
    print_json(&json!({ "shape": r_hat.shape() }));
    Ok(())
}

pub fn roundtrip(input: &Path, weights: &Path, out: Option<&Path>) -> CmdResult {
    let system = load_system(weights)?;
    let r = read_tensor_file(input)?;
    let (b, latents) = system.codec.encode_with_latents(&r)?;
    let bytes = b.to_bytes();
    if let Some(p) = out {
        write(p, &bytes)?;
    }
    let parsed = Bitstream::from_bytes(&bytes).protocol("re-parsing bitstream")?;
    let decoded = system.codec.decode(&parsed)?;
    if decoded.r_hat != quantize(&r) {
        return Err(Failure::verify(
            "decoded latent differs from the quantized input",
        ));
    }
    if decoded != latents {
        return Err(Failure::verify(
            "decoded hyper-latent differs from the encoder's",
        ));
    }
    let est = system.codec.estimate(&latents)?.total_bits();
    let measured = 8.0 * b.payload_len() as f64;
    if measured < est || measured > est * 1.02 + 512.0 {
        return Err(Failure::verify(format!(
            "payload of {measured} bits outside [{est:.1}, {:.1}]",
            est * 1.02 + 512.0
        )));
    }
    let mut summary = stream_summary(&b, est);
    summary["lossless"] = json!(true);
    print_json(&summary);
    Ok(())
}

pub struct SegmentArgs {
    pub topology: Topology,
    pub image: PathBuf,
    pub weights: Option<PathBuf>,
    pub model: ModelArgs,
    pub addr: Option<String>,
    pub out: PathBuf,
    pub pgm: Option<PathBuf>,
    pub stats: Option<PathBuf>,
    pub seed: u64,
}

pub fn segment(a: SegmentArgs) -> CmdResult {
    let system = match &a.weights {
        Some(p) => load_system(p)?,
        None => {
            let fallback = a.topology.variant().as_str();
            let config = a.model.resolve(None, fallback)?;
            System::from_seed(config, a.seed)?
        }
    };
    let x = read_ppm(&read(&a.image)?).io(format!("parsing image {}", a.image.display()))?;
    let mut cfg = SessionConfig::new(a.topology);
    if let Some(addr) = &a.addr {
        cfg = cfg.with_addr(addr.clone());
    }
    let (stats, map) = run_client(&cfg, &system, &x)?;
    write(&a.out, &map.to_file_bytes())?;
    if let Some(p) = &a.pgm {
        write(p, &write_pgm_labels(&map))?;
    }
    let mut v = serde_json::to_value(stats).expect("stats serialize");
    v["topology"] = json!(a.topology.as_str());
    v["bpp"] = json!(stats.bpp());
    v["payload_bpp"] = json!(stats.payload_bpp());
    match &a.stats {
        Some(p) => write(
            p,
            serde_json::to_string_pretty(&v).expect("json").as_bytes(),
        )?,
        None => print_json(&v),
    }
    Ok(())
}

pub fn serve(addr: &str, weights: &Path, max_frame: Option<usize>) -> CmdResult {
    let resolved: Vec<_> = addr
        .to_socket_addrs()
        .usage(format!("invalid address {addr:?}"))?
        .collect();
    if resolved.is_empty() {
        return Err(Failure::Usage(anyhow!(
            "address {addr:?} resolves to nothing"
        )));
    }
    let system = Arc::new(load_system(weights)?);
    let mut server = Server::bind(&resolved[..], system).io(format!("binding {addr}"))?;
    if let Some(m) = max_frame {
        server = server.with_max_frame(m);
    }
    let local = server.local_addr().io("querying bound address")?;
    emit(&format!("listening on {local}"));
    server.run(Arc::new(AtomicBool::new(false))).io("serving")
}

pub fn bench(model: &ModelArgs, res: Resolution, iters: usize, seed: u64) -> CmdResult {
    let config = model.resolve(None, "jd")?;
    let system = System::from_seed(config, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..iters {
        let x = Tensor::from_fn(&[3, res.height, res.width], |_| rng.gen());
        let t = Instant::now();
        system.in_car(&x)?;
        let in_car = t.elapsed();
        let t = Instant::now();
        let (b, _) = system.car_encode(&x)?;
        let encode = t.elapsed();
        let t = Instant::now();
        system.cloud_decode(&b)?;
        let decode = t.elapsed();
        let record = json!({
            "iter": i,
            "variant": config.variant.as_str(),
            "resolution": res.to_string(),
            "in_car_ms": in_car.as_secs_f64() * 1e3,
            "encode_ms": encode.as_secs_f64() * 1e3,
            "cloud_decode_ms": decode.as_secs_f64() * 1e3,
            "bytes": b.total_len(),
        });
        emit(&record.to_string());
    }
    Ok(())
}

pub fn synth_image(res: Resolution, out: &Path, seed: u64) -> CmdResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Tensor::from_fn(&[3, res.height, res.width], |_| rng.gen());
    write(out, &write_ppm(&x).expect("three channels"))
}

pub fn synth_tensor(shape: &str, scale: f32, out: &Path, seed: u64) -> CmdResult {
    let dims = shape
        .split(['x', 'X', ','])
        .map(|s| s.trim().parse::<usize>())
        .collect::<Result<Vec<_>, _>>()
        .usage(format!("invalid shape {shape:?}"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t = Tensor::from_fn(&dims, |_| rng.gen_range(-1.0..=1.0) * scale);
    let mut buf = Vec::new();
    write_tensor(&mut buf, &t).io("serialising tensor")?;
    write(out, &buf)
}
