use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::manifest::{Domain, Manifest};
use crate::error::{Error, Result};

/// All real entries plus `floor(ratio_syn * |real| / ratio_real)` synthetic
/// entries drawn without replacement, shuffled together under `seed`.
pub fn mix_datasets(real: &Manifest, synthetic: &Manifest, ratio_syn: u32, ratio_real: u32, seed: u64) -> Result<Manifest> {
    if ratio_real == 0 {
        return Err(Error::invalid("ratio_real must be at least 1"));
    }
    if let Some(e) = real.entries.iter().find(|e| e.domain != Domain::Real) {
        return Err(Error::Manifest(format!("`{}` in the real manifest is not real", e.id)));
    }
    if let Some(e) = synthetic.entries.iter().find(|e| e.domain != Domain::Synthetic) {
        return Err(Error::Manifest(format!("`{}` in the synthetic manifest is not synthetic", e.id)));
    }
    let want = ratio_syn as usize * real.len() / ratio_real as usize;
    if want > synthetic.len() {
        return Err(Error::Manifest(format!(
            "ratio {ratio_syn}:{ratio_real} needs {want} synthetic entries but only {} are available",
            synthetic.len()
        )));
    }
    if want == 0 {
        return Ok(real.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = real.entries.clone();
    entries.extend(
        index::sample(&mut rng, synthetic.len(), want)
            .into_iter()
            .map(|i| synthetic.entries[i].clone()),
    );
    entries.shuffle(&mut rng);
    Manifest::new(entries)
}
