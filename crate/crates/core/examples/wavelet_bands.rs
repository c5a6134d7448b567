//! Decomposes a texture into packed Haar bands, checks the round trip and
//! splits off the diffused low bands.

use wavediff::pipeline::procedural_texture;
use wavediff::wavelet::{dwt2, idwt2, split_spectrum};

fn main() -> wavediff::Result<()> {
    let img = procedural_texture(64, 64, 0, 0);
    for levels in 1..=3 {
        let spec = dwt2(&img, levels)?;
        let back = idwt2(&spec)?;
        let err = back.data().iter().zip(img.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let energy = (spec.energy() - img.energy()).abs() / img.energy();
        println!(
            "levels {levels}: {} bands of {}x{}, max error {err:.1e}, energy deviation {energy:.1e}",
            spec.band_count(),
            spec.bands_height(),
            spec.bands_width()
        );
    }

    let spec = dwt2(&img, 2)?;
    println!("\nfirst bands at two levels:");
    for (i, b) in spec.layout().ordering().iter().take(8).enumerate() {
        println!("  {i:2}: level {} {} channel {} phase {}", b.level, b.subband.name(), b.channel, b.phase);
    }
    let split = split_spectrum(&spec, 3)?;
    let low = split.low.sum_squares() / spec.energy();
    println!("\n3 diffused bands hold {:.1}% of the energy; {} bands go to the refinement network", 100.0 * low, split.high.channels());
    Ok(())
}
