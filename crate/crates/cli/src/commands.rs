use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use lfcrypt_core::analysis::correlate_volumes;
use lfcrypt_core::forward::VolumeGrid;
use lfcrypt_core::inverse::{decrypt_with, OcclusionHandling};
use lfcrypt_core::io::{
    export_image_png, export_planes_png, grid_fields, grid_from_header, import_planes_png,
    import_volume_stack, read_image, read_planes, read_volume, write_image, write_planes, write_volume,
    HeaderMap,
};
use lfcrypt_core::scenes::Scene;
use lfcrypt_core::{
    build_psf_key, digitize, encrypt, occlude, reassemble, run_attack_suite, AttackSettings, Error,
    Occlusion, OcclusionMode, PsfKey, Result, RunConfig, SensorOptions, Volume,
};
use log::{info, warn};

use crate::args::*;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn field(k: &str, v: impl ToString) -> (String, String) {
    (k.to_string(), v.to_string())
}

fn parse_scene(name: &str) -> Result<Scene> {
    name.parse()
}

pub fn keygen(mut cfg: RunConfig, args: &KeygenArgs) -> Result<()> {
    if let Some(seed) = args.seed {
        cfg.mask.seed = seed;
    }
    cfg.validate()?;
    let z = cfg.z_planes();
    info!(
        "building key: {} planes, {} offsets per axis",
        z.len(),
        cfg.optics.offsets_per_period(cfg.volume.pitch)?
    );
    let key = build_psf_key(&cfg.optics, &cfg.mask, &z, cfg.volume.pitch)?;
    key.write(&args.out)?;
    println!("{}", key.checksum());
    Ok(())
}

fn load_volume(cfg: &RunConfig, key: &PsfKey, args: &EncryptArgs) -> Result<Volume> {
    match &args.volume {
        Some(path) => Ok(read_volume(path)?.0),
        None => {
            let grid = cfg.volume_grid()?;
            if args.stack.len() != grid.nz() {
                return Err(Error::Argument(format!(
                    "--stack has {} images but the configuration has {} planes",
                    args.stack.len(),
                    grid.nz()
                )));
            }
            import_volume_stack(
                &args.stack,
                key.voxel_pitch(),
                grid.axial_positions.clone(),
                key.offsets_per_axis(),
            )
        }
    }
}

pub fn encrypt_cmd(cfg: RunConfig, args: &EncryptArgs) -> Result<()> {
    let key = PsfKey::read(&args.key)?;
    let volume = load_volume(&cfg, &key, args)?;
    let bits = args.bits.or(cfg.sensor_bits);
    let mut image = encrypt(&volume, &key, SensorOptions { bits })?;
    if let Some(f) = args.occlude {
        image = occlude(&image, Occlusion::Fraction(f), OcclusionMode::Corner)?;
    }
    let mut extra = grid_fields(&volume.grid);
    extra.push(field("key_checksum", key.checksum()));
    write_image(&args.out, &image, &extra)?;
    if let Some(png) = &args.png {
        export_image_png(png, &image)?;
    }
    Ok(())
}

/// The grid recorded in the image header, or the configured one for images
/// that carry none (reassembled from bit planes, for instance).
fn image_grid(header: &HeaderMap, cfg: &RunConfig) -> Result<VolumeGrid> {
    if header.raw("z_positions").is_ok() {
        grid_from_header(header).map_err(Error::Config)
    } else {
        cfg.volume_grid()
    }
}

pub fn decrypt_cmd(mut cfg: RunConfig, args: &DecryptArgs) -> Result<()> {
    if let Some(n) = args.iterations {
        cfg.deconv.iterations = n;
    }
    if let Some(t) = args.threshold {
        cfg.deconv.threshold_fraction = t;
    }
    if let Some(o) = args.occlusion_mask {
        cfg.deconv.occlusion = match o {
            OcclusionArg::Masked => OcclusionHandling::Masked,
            OcclusionArg::Zeros => OcclusionHandling::AsZeros,
        };
    }
    cfg.deconv.validate()?;
    let key = PsfKey::read(&args.key)?;
    let (image, header) = read_image(&args.image)?;
    if let Ok(sum) = header.raw("key_checksum") {
        if sum != key.checksum() {
            warn!(
                "image was encrypted with key {sum}, decrypting with {}",
                key.checksum()
            );
        }
    }
    let grid = image_grid(&header, &cfg)?;

    let mut log = match &args.log {
        Some(p) => Some(BufWriter::new(File::create(p).map_err(io_err(p))?)),
        None => None,
    };
    let mut log_err = None;
    let mut observer = |rec: &lfcrypt_core::inverse::IterationRecord| {
        let line = serde_json::to_string(rec).expect("records serialize");
        log::debug!("{line}");
        if let Some(w) = log.as_mut() {
            if let Err(e) = writeln!(w, "{line}") {
                log_err.get_or_insert(e);
            }
        }
    };
    let rec = decrypt_with(&image, &key, &grid, &cfg.deconv, None, &mut observer)?;
    if let Some(p) = &args.log {
        let e = match log_err {
            Some(e) => Err(e),
            None => log.take().expect("opened above").flush(),
        };
        e.map_err(io_err(p))?;
    }
    if let Some(w) = &rec.warning {
        warn!("{w}");
    }
    let extra = [
        field("key_checksum", key.checksum()),
        field("iterations", cfg.deconv.iterations),
    ];
    write_volume(&args.out, &rec.volume, &extra)
}

pub fn digitize_cmd(args: &DigitizeArgs) -> Result<()> {
    let (image, _) = read_image(&args.image)?;
    let set = digitize(&image, args.levels)?;
    write_planes(&args.out, &set)?;
    if let Some(dir) = &args.png_dir {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let stem = args
            .out
            .file_stem()
            .map_or("planes".into(), |s| s.to_string_lossy().into_owned());
        let manifest = export_planes_png(dir, &stem, &set)?;
        println!("{}", manifest.display());
    }
    Ok(())
}

pub fn reassemble_cmd(args: &ReassembleArgs) -> Result<()> {
    let set = if args.planes.extension().is_some_and(|e| e == "planes") {
        import_planes_png(&args.planes)?
    } else {
        read_planes(&args.planes)?
    };
    let image = reassemble(&set)?;
    write_image(&args.out, &image, &[field("levels", set.n_levels)])
}

pub fn demo(cfg: RunConfig, args: &DemoArgs) -> Result<()> {
    let scene = parse_scene(&args.scene)?;
    cfg.validate()?;
    let volume = scene.render(&cfg.volume_grid()?)?;
    write_volume(&args.out, &volume, &[field("scene", scene)])
}

pub fn attack(mut cfg: RunConfig, args: &AttackArgs) -> Result<()> {
    if let Some(n) = args.iterations {
        cfg.deconv.iterations = n;
    }
    cfg.deconv.validate()?;
    let key = PsfKey::read(&args.key)?;
    let scene = match (&args.volume, &args.scene) {
        (Some(p), _) => read_volume(p)?.0,
        (None, Some(name)) => {
            let scene = parse_scene(name)?;
            let grid = VolumeGrid::centered(
                cfg.volume.nx,
                cfg.volume.ny,
                key.voxel_pitch(),
                key.z_planes().to_vec(),
                key.offsets_per_axis(),
            );
            scene.render(&grid)?
        }
        (None, None) => unreachable!("clap requires one of --volume/--scene"),
    };
    let settings = AttackSettings {
        deconv: cfg.deconv.clone(),
        occlusion_fractions: args.occlusion.clone(),
        perturbation_fractions: args.perturbation.clone(),
        perturbation_seed: args.perturbation_seed,
        ..Default::default()
    };
    let entries = run_attack_suite(&scene, &key, &settings)?;
    fs::create_dir_all(&args.out_dir).map_err(io_err(&args.out_dir))?;
    let report_path = args.out_dir.join("report.jsonl");
    let mut report = String::new();
    for e in &entries {
        let file: PathBuf = args.out_dir.join(format!("{}.vol", e.name));
        write_volume(&file, &e.reconstruction, &[field("attack", &e.name)])?;
        let line = e.record_line(&[file.display().to_string()]);
        println!("{line}");
        report.push_str(&line);
        report.push('\n');
    }
    fs::write(&report_path, report).map_err(io_err(&report_path))
}

pub fn correlate(args: &CorrelateArgs) -> Result<()> {
    let (reference, _) = read_volume(&args.reference)?;
    let (recon, _) = read_volume(&args.reconstruction)?;
    let report = correlate_volumes(&reference, &recon)?;
    for p in &report.planes {
        println!("{}", serde_json::to_string(p).expect("records serialize"));
    }
    Ok(())
}
