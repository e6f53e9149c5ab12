use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

use explore_core::dedup::{count_collisions, dhash, DHash, GrayImage};

#[derive(clap::Args, Debug)]
pub struct Args {
    /// Reference set: images, hash lists (.txt/.hex) or directories of them.
    #[arg(long, num_args = 1.., required = true)]
    reference: Vec<PathBuf>,
    /// Test set, same accepted inputs.
    #[arg(long, num_args = 1.., required = true)]
    test: Vec<PathBuf>,
    /// Maximum Hamming distance counted as a duplicate.
    #[arg(long, default_value_t = 0)]
    threshold: u32,
    /// Print every test hash before the report.
    #[arg(long)]
    print_hashes: bool,
}

const IMAGE_EXT: [&str; 5] = ["pgm", "ppm", "pnm", "pbm", "pam"];
const LIST_EXT: [&str; 2] = ["txt", "hex"];

fn ext(p: &Path) -> String {
    p.extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_ascii_lowercase()
}

fn load_image(p: &Path) -> Result<DHash> {
    let img = image::open(p).with_context(|| format!("reading {}", p.display()))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let gray = if img.color().has_color() {
        GrayImage::from_rgb(w, h, img.to_rgb8().as_raw())?
    } else {
        GrayImage::new(w, h, img.to_luma8().into_raw())?
    };
    Ok(dhash(&gray))
}

fn load_list(p: &Path) -> Result<Vec<DHash>> {
    let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(|(i, l)| DHash::parse_hex(l).with_context(|| format!("{}:{}", p.display(), i + 1)))
        .collect()
}

fn load(p: &Path, out: &mut Vec<DHash>) -> Result<()> {
    if p.is_dir() {
        let mut entries: Vec<PathBuf> = fs::read_dir(p)?
            .map(|e| e.map(|e| e.path()))
            .collect::<Result<_, _>>()?;
        entries.sort();
        for e in entries {
            let x = ext(&e);
            if e.is_file() && (IMAGE_EXT.contains(&x.as_str()) || LIST_EXT.contains(&x.as_str())) {
                load(&e, out)?;
            }
        }
        return Ok(());
    }
    if !p.exists() {
        return Err(crate::usage(format!("{} does not exist", p.display())));
    }
    if LIST_EXT.contains(&ext(p).as_str()) {
        out.extend(load_list(p)?);
    } else {
        out.push(load_image(p)?);
    }
    Ok(())
}

fn load_all(paths: &[PathBuf]) -> Result<Vec<DHash>> {
    let mut out = Vec::new();
    for p in paths {
        load(p, &mut out)?;
    }
    Ok(out)
}

pub fn run(a: Args) -> Result<()> {
    let reference = load_all(&a.reference)?;
    let test = load_all(&a.test)?;
    if a.print_hashes {
        for h in &test {
            println!("{h}");
        }
    }
    let rep = count_collisions(&reference, &test, a.threshold)?;
    println!("{rep}");
    Ok(())
}
