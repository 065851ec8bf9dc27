//! `inspect`: summary statistics of data files.

use std::fs::File;
use std::io::Read;
use std::path::Path;

use anyhow::{bail, Context, Result};
use hsphr::io::{read_cube, read_images, read_pgm};
use hsphr::RealImage;

fn image_line(label: &str, im: &RealImage) -> String {
    format!(
        "{label}: min {:.4e}  max {:.4e}  mean {:.4e}",
        im.min(),
        im.max(),
        im.mean()
    )
}

pub fn inspect(path: &Path) -> Result<()> {
    let mut magic = [0u8; 4];
    File::open(path)
        .and_then(|mut f| f.read_exact(&mut magic))
        .with_context(|| format!("reading {}", path.display()))?;
    match &magic {
        b"HSC1" => {
            let cube = read_cube(path)?;
            let (k, h, w) = cube.shape();
            println!("HSC1 complex cube: {k} channels, {h}x{w}");
            println!("finite: {}", cube.is_finite());
            for c in 0..k {
                let energy: f64 = cube.channel(c).iter().map(|z| z.norm_sqr()).sum();
                println!("{}  energy {energy:.4e}", image_line(&format!("channel {c} amplitude"), &cube.amplitude(c)));
                println!("{}", image_line(&format!("channel {c} phase"), &cube.phase(c)));
            }
        }
        b"HSR1" => {
            let images = read_images(path)?;
            let (h, w) = images.first().map_or((0, 0), |im| (im.height(), im.width()));
            println!("HSR1 image stack: {} images, {h}x{w}", images.len());
            for (i, im) in images.iter().enumerate() {
                println!("{}", image_line(&format!("image {i}"), im));
            }
        }
        [b'P', b'5', ..] => {
            let im = read_pgm(path)?;
            println!("PGM image: {}x{}", im.height(), im.width());
            println!("{}", image_line("scaled to [0, 1]", &im));
        }
        _ => bail!("{}: not an HSC1, HSR1 or binary PGM file", path.display()),
    }
    Ok(())
}
