//! Text-conditioned image generator.
//!
//! Text states are pooled by several attention heads into a code; from the
//! code an MLP predicts a distribution over grid cells ("where") and a
//! sigmoid glyph patch ("what"). Each cell receives the patch scaled by its
//! weight, so pixels stay in [0, 1].

use super::layers::{affine, encode_text};
use super::{ComponentKind, ComponentParams};
use crate::autodiff::{Session, Var};
use crate::error::{Error, Result};
use crate::world::{Image, TextSeq, WorldConfig};

/// `regions x patch_len` generated patches.
pub fn generate_patches(m: &ComponentParams, s: &mut Session, y: &TextSeq) -> Result<Var> {
    m.expect(ComponentKind::Ig)?;
    let enc = encode_text(s, "ig.txt", y, &m.cfg)?;
    let heads = s.p("ig", "heads")?;
    let scores = s.matmul_nt(heads, enc.keys)?;
    let alpha = s.softmax(scores);
    let pooled = s.matmul(alpha, enc.keys)?;
    let width = s.shape(pooled).1 * m.cfg.ig_heads;
    let code = s.reshape(pooled, 1, width)?;
    let (w1, b1) = (s.p("ig", "w1")?, s.p("ig", "b1")?);
    let a = affine(s, code, w1, b1)?;
    let hid = s.relu(a);
    let (ww, bw) = (s.p("ig", "w_where")?, s.p("ig", "b_where")?);
    let a = affine(s, hid, ww, bw)?;
    let place = s.softmax(a);
    let (wp, bp) = (s.p("ig", "w_what")?, s.p("ig", "b_what")?);
    let a = affine(s, hid, wp, bp)?;
    let glyph = s.sigmoid(a);
    let place = s.transpose(place);
    s.matmul(place, glyph)
}

/// Reconstruction loss between generated patches and a target image.
pub fn loss(s: &mut Session, patches: Var, z: &Image, grid: usize) -> Result<Var> {
    s.mse(patches, &z.patches(grid), None)
}

/// Default generator loss: `mse(generate(y), z)`.
pub fn forward(m: &ComponentParams, s: &mut Session, y: &TextSeq, z: &Image) -> Result<Var> {
    let p = generate_patches(m, s, y)?;
    loss(s, p, z, m.dims.grid)
}

fn discriminator(m: &ComponentParams, s: &mut Session, patches: Var, trainable: bool) -> Result<Var> {
    let get = |s: &mut Session, n: &str| -> Result<Var> {
        if trainable {
            s.p("ig.disc", n)
        } else {
            let t = m.params.get(&format!("ig.disc.{n}"))?;
            let (r, c) = t.as_matrix_dims();
            s.constant(r, c, t.data().to_vec())
        }
    };
    let (w1, b1, w2, b2) = (get(s, "w1")?, get(s, "b1")?, get(s, "w2")?, get(s, "b2")?);
    let a = affine(s, patches, w1, b1)?;
    let h = s.relu(a);
    let pooled = s.sum_rows(h);
    affine(s, pooled, w2, b2)
}

/// Training objective. With `lambda_adv > 0` it adds a non-saturating
/// adversarial term for the generator (discriminator held fixed) and the
/// discriminator's own real/fake loss (generated patches held fixed).
pub fn train_loss(m: &ComponentParams, s: &mut Session, y: &TextSeq, z: &Image) -> Result<Var> {
    let p = generate_patches(m, s, y)?;
    let rec = loss(s, p, z, m.dims.grid)?;
    let lam = m.cfg.lambda_adv;
    if lam <= 0.0 {
        return Ok(rec);
    }
    let fake_g = discriminator(m, s, p, false)?;
    let adv = s.bce_with_logits(fake_g, &[1.0])?;
    let adv = s.scale(adv, lam);
    let (rows, cols) = s.shape(p);
    let generated = s.value(p).to_vec();
    let fixed = s.constant(rows, cols, generated)?;
    let real = s.constant(rows, cols, z.patches(m.dims.grid))?;
    let d_real = discriminator(m, s, real, true)?;
    let d_fake = discriminator(m, s, fixed, true)?;
    let lr = s.bce_with_logits(d_real, &[1.0])?;
    let lf = s.bce_with_logits(d_fake, &[0.0])?;
    let total = s.add(rec, adv)?;
    let total = s.add(total, lr)?;
    s.add(total, lf)
}

pub fn generate(m: &ComponentParams, y: &TextSeq) -> Result<Image> {
    let mut s = m.inference();
    let p = generate_patches(m, &mut s, y)?;
    let view = WorldConfig {
        grid: m.dims.grid,
        image_size: m.dims.image_size,
        channels: m.dims.channels,
        ..WorldConfig::default()
    };
    Image::from_patches(s.value(p), &view).map_err(|e| Error::Numerical(format!("generator output: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::GradCheck;
    use crate::models::probe::{probe, probe_dims, probe_triple};
    use crate::models::ModelConfig;

    #[test]
    fn pixels_are_bounded_and_generation_deterministic() {
        for seed in 0..5 {
            let m = probe(ComponentKind::Ig, seed);
            let (_, y, _) = probe_triple(seed, "abc");
            let z = generate(&m, &y).unwrap();
            assert!(z.pixels().iter().all(|p| (0.0..=1.0).contains(p)));
            assert_eq!(z, generate(&m, &y).unwrap());
        }
    }

    #[test]
    fn loss_of_an_image_against_itself_is_zero() {
        let (_, _, z) = probe_triple(0, "a");
        let store = crate::autodiff::ParamStore::new();
        let mut s = Session::new(&store);
        let p = s.constant(4, 4, z.patches(2)).unwrap();
        let l = loss(&mut s, p, &z, 2).unwrap();
        assert_eq!(s.scalar(l), 0.0);
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..5 {
            let m = probe(ComponentKind::Ig, seed);
            let (_, y, z) = probe_triple(seed, "ab");
            let report = GradCheck::default()
                .run(&m.params, |s| forward(&m, s, &y, &z))
                .unwrap();
            assert!(report.passed(), "seed {seed}: {}", report.max_rel_error());
        }
    }

    #[test]
    fn adversarial_terms_route_gradients() {
        let cfg = ModelConfig {
            lambda_adv: 0.3,
            ..ModelConfig::probe()
        };
        let m = ComponentParams::init(ComponentKind::Ig, &probe_dims(), &cfg, 3).unwrap();
        let (_, y, z) = probe_triple(3, "ab");
        let mut s = m.session();
        let l = train_loss(&m, &mut s, &y, &z).unwrap();
        let g = s.backward(l).unwrap();
        assert!(g["ig.disc.w2"].iter().any(|v| *v != 0.0));
        let mut s = m.session();
        let l = forward(&m, &mut s, &y, &z).unwrap();
        let plain = s.backward(l).unwrap();
        assert!(plain["ig.disc.w2"].iter().all(|v| *v == 0.0));
        assert_ne!(plain["ig.w_what"], g["ig.w_what"]);
    }
}
