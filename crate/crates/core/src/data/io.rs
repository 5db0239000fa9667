//! Frame, flow and corpus files.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::{ClipMeta, VideoClip};
use crate::error::{Error, Result};
use crate::masknet::OcclusionMask;
use crate::tensor::Tensor;
use crate::warp::FlowField;

/// Leading tag of a flow file ("PIEH" in ASCII).
pub const FLO_MAGIC: f32 = 202021.25;

/// Writes `f32 magic, i32 width, i32 height`, then interleaved `(u, v)` rows.
pub fn write_flo(mut w: impl Write, flow: &FlowField) -> Result<()> {
    let (h, wd) = (flow.height(), flow.width());
    let d = flow.tensor().data();
    let mut buf = Vec::with_capacity(12 + 8 * h * wd);
    buf.extend_from_slice(&FLO_MAGIC.to_le_bytes());
    buf.extend_from_slice(&(wd as i32).to_le_bytes());
    buf.extend_from_slice(&(h as i32).to_le_bytes());
    let p = h * wd;
    for i in 0..p {
        buf.extend_from_slice(&d[i].to_le_bytes());
        buf.extend_from_slice(&d[p + i].to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_flo(mut r: impl Read) -> Result<FlowField> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() < 12 {
        return Err(Error::Format(format!("flow file of {} bytes has no header", bytes.len())));
    }
    let word = |i: usize| -> [u8; 4] { bytes[i..i + 4].try_into().expect("4 bytes") };
    let magic = f32::from_le_bytes(word(0));
    if magic != FLO_MAGIC {
        return Err(Error::Format(format!("flow file magic {magic} is not {FLO_MAGIC}")));
    }
    let (w, h) = (i32::from_le_bytes(word(4)), i32::from_le_bytes(word(8)));
    if w <= 0 || h <= 0 {
        return Err(Error::Format(format!("flow file extents {w}×{h}")));
    }
    let (w, h) = (w as usize, h as usize);
    let p = w * h;
    if bytes.len() != 12 + 8 * p {
        return Err(Error::Format(format!(
            "flow file holds {} payload bytes, {w}×{h} needs {}",
            bytes.len() - 12,
            8 * p
        )));
    }
    let mut d = vec![0.0f32; 2 * p];
    for i in 0..p {
        d[i] = f32::from_le_bytes(word(12 + 8 * i));
        d[p + i] = f32::from_le_bytes(word(16 + 8 * i));
    }
    FlowField::new(Tensor::from_vec(&[2, h, w], d)?)
}

pub fn write_flo_file(path: &Path, flow: &FlowField) -> Result<()> {
    write_flo(fs::File::create(path)?, flow)
}

pub fn read_flo_file(path: &Path) -> Result<FlowField> {
    read_flo(fs::File::open(path)?)
}

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// 8-bit PNG of a 1- or 3-channel `[0, 1]` image.
pub fn save_png(path: &Path, img: &Tensor<f32>) -> Result<()> {
    let (c, h, w) = img.chw()?;
    let d = img.data();
    let p = h * w;
    let (wu, hu) = (w as u32, h as u32);
    let res = match c {
        1 => image::GrayImage::from_fn(wu, hu, |x, y| image::Luma([to_u8(d[y as usize * w + x as usize])])).save(path),
        3 => image::RgbImage::from_fn(wu, hu, |x, y| {
            let k = y as usize * w + x as usize;
            image::Rgb([to_u8(d[k]), to_u8(d[p + k]), to_u8(d[2 * p + k])])
        })
        .save(path),
        _ => return Err(Error::Shape(format!("PNG needs 1 or 3 channels, got {c}"))),
    };
    res.map_err(|e| Error::Image(format!("{}: {e}", path.display())))
}

/// Loads a PNG as `[0, 1]` values; grayscale files give one channel.
pub fn load_png(path: &Path) -> Result<Tensor<f32>> {
    let img = image::open(path).map_err(|e| Error::Image(format!("{}: {e}", path.display())))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let p = w * h;
    if img.color().channel_count() == 1 {
        let g = img.to_luma8();
        Tensor::from_vec(&[1, h, w], g.into_raw().into_iter().map(|v| v as f32 / 255.0).collect())
    } else {
        let rgb = img.to_rgb8().into_raw();
        let mut d = vec![0.0f32; 3 * p];
        for k in 0..p {
            for ch in 0..3 {
                d[ch * p + k] = rgb[3 * k + ch] as f32 / 255.0;
            }
        }
        Tensor::from_vec(&[3, h, w], d)
    }
}

/// Writes `frame_%02d.png`, `clean_%02d.png`, `flow_<r><k>.flo`,
/// `mask_<r><k>.png` (1-based indices) and `meta.json`.
pub fn write_clip(dir: &Path, clip: &VideoClip) -> Result<()> {
    clip.validate()?;
    fs::create_dir_all(dir)?;
    let r = clip.reference + 1;
    for (k, f) in clip.frames.iter().enumerate() {
        save_png(&dir.join(format!("frame_{:02}.png", k + 1)), f)?;
    }
    if let Some(clean) = &clip.clean {
        for (k, f) in clean.iter().enumerate() {
            save_png(&dir.join(format!("clean_{:02}.png", k + 1)), f)?;
        }
    }
    for k in (0..clip.len()).filter(|&k| k != clip.reference) {
        if let Some(f) = clip.flow(k) {
            write_flo_file(&dir.join(format!("flow_{r}{}.flo", k + 1)), f)?;
        }
        if let Some(m) = &clip.masks {
            save_png(&dir.join(format!("mask_{r}{}.png", k + 1)), m[k].tensor())?;
        }
    }
    let meta = serde_json::to_string_pretty(&clip.meta)?;
    fs::write(dir.join("meta.json"), meta + "\n")?;
    Ok(())
}

fn numbered(dir: &Path, prefix: &str, n_hint: usize) -> Vec<PathBuf> {
    (1..=n_hint.max(9))
        .map(|k| dir.join(format!("{prefix}_{k:02}.png")))
        .take_while(|p| p.exists())
        .collect()
}

pub fn read_clip(dir: &Path) -> Result<VideoClip> {
    let id = dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let meta: ClipMeta = serde_json::from_str(&fs::read_to_string(dir.join("meta.json"))?)?;
    let frames = numbered(dir, "frame", 9)
        .iter()
        .map(|p| load_png(p))
        .collect::<Result<Vec<_>>>()?;
    if frames.is_empty() {
        return Err(Error::Data(format!("{} has no frames", dir.display())));
    }
    let mut clip = VideoClip::new(id, frames, meta)?;
    let clean = numbered(dir, "clean", 9);
    if !clean.is_empty() {
        clip.clean = Some(clean.iter().map(|p| load_png(p)).collect::<Result<_>>()?);
    }
    let r = clip.reference;
    let (_, h, w) = clip.ground_truth_frames()[0].chw()?;
    let mut flows = Vec::with_capacity(clip.len());
    let mut masks = Vec::with_capacity(clip.len());
    let (mut have_flow, mut have_mask) = (true, true);
    for k in 0..clip.len() {
        if k == r {
            flows.push(FlowField::zeros(h, w));
            masks.push(OcclusionMask::ones(h, w));
            continue;
        }
        let fp = dir.join(format!("flow_{}{}.flo", r + 1, k + 1));
        if fp.exists() {
            flows.push(read_flo_file(&fp)?);
        } else {
            have_flow = false;
        }
        let mp = dir.join(format!("mask_{}{}.png", r + 1, k + 1));
        if mp.exists() {
            masks.push(OcclusionMask::new(load_png(&mp)?)?);
        } else {
            have_mask = false;
        }
    }
    if have_flow {
        clip.flows = Some(flows);
    }
    if have_mask {
        clip.masks = Some(masks);
    }
    clip.validate()?;
    Ok(clip)
}

/// `root/<split>/<clip-id>/…` for every clip.
pub fn write_corpus(root: &Path, split: &str, clips: &[VideoClip]) -> Result<()> {
    for c in clips {
        write_clip(&root.join(split).join(&c.id), c)?;
    }
    Ok(())
}

/// Clips of one split in lexicographic id order.
pub fn read_corpus(root: &Path, split: &str) -> Result<Vec<VideoClip>> {
    let base = root.join(split);
    let mut dirs: Vec<PathBuf> = fs::read_dir(&base)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    dirs.iter().map(|d| read_clip(d)).collect()
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<Vec<_>>>()?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            collect_files(root, &p, out)?;
        } else {
            out.push(p.strip_prefix(root).expect("under root").to_path_buf());
        }
    }
    Ok(())
}

/// SHA-256 over every file's relative path and contents, in sorted order.
pub fn hash_dir(root: &Path) -> Result<String> {
    let mut files = Vec::new();
    collect_files(root, root, &mut files)?;
    let mut h = Sha256::new();
    for rel in files {
        let bytes = fs::read(root.join(&rel))?;
        h.update(rel.to_string_lossy().as_bytes());
        h.update([0u8]);
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(hex::encode(h.finalize()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_boxnoise_toy, gen_triangle_toy, BoxNoiseParams, TriangleParams};
    use proptest::prelude::*;

    #[test]
    fn flo_starts_with_magic_and_round_trips() {
        let d: Vec<f32> = (0..2 * 3 * 5).map(|i| i as f32 * 0.37 - 4.1).collect();
        let f = FlowField::new(Tensor::from_vec(&[2, 3, 5], d).unwrap()).unwrap();
        let mut buf = Vec::new();
        write_flo(&mut buf, &f).unwrap();
        assert_eq!(&buf[..4], &202021.25f32.to_le_bytes());
        assert_eq!(&buf[..4], b"PIEH");
        assert_eq!(buf.len(), 12 + 8 * 15);
        let g = read_flo(buf.as_slice()).unwrap();
        assert_eq!(g.tensor().shape(), &[2, 3, 5]);
        let bits = |t: &FlowField| t.tensor().to_vec().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&f), bits(&g));
    }

    #[test]
    fn flo_rejects_bad_input() {
        assert!(matches!(read_flo(&b"PIEX\x01\0\0\0\x01\0\0\0\0\0\0\0\0\0\0\0"[..]), Err(Error::Format(_))));
        let mut buf = Vec::new();
        write_flo(&mut buf, &FlowField::zeros(2, 2)).unwrap();
        buf.pop();
        assert!(matches!(read_flo(buf.as_slice()), Err(Error::Format(_))));
        assert!(matches!(read_flo(&b"PI"[..]), Err(Error::Format(_))));
    }

    #[test]
    fn png_round_trip_is_quantized() {
        let dir = tempfile::tempdir().unwrap();
        let img = Tensor::from_vec(&[3, 2, 2], (0..12).map(|i| i as f32 / 11.0).collect()).unwrap();
        let p = dir.path().join("a.png");
        save_png(&p, &img).unwrap();
        let back = load_png(&p).unwrap();
        for (a, b) in img.data().iter().zip(back.data().iter()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
        }
        let g = Tensor::full(&[1, 3, 4], 0.5f32);
        save_png(&dir.path().join("g.png"), &g).unwrap();
        assert_eq!(load_png(&dir.path().join("g.png")).unwrap().shape(), &[1, 3, 4]);
    }

    #[test]
    fn corpus_layout_and_reload() {
        let dir = tempfile::tempdir().unwrap();
        let clips = gen_triangle_toy(&TriangleParams { count: 2, ..Default::default() }).unwrap();
        write_corpus(dir.path(), "train", &clips).unwrap();
        let c0 = dir.path().join("train").join("00000");
        for f in ["frame_01.png", "frame_02.png", "frame_03.png", "flow_21.flo", "flow_23.flo", "mask_21.png", "mask_23.png", "meta.json"] {
            assert!(c0.join(f).exists(), "{f}");
        }
        let back = read_corpus(dir.path(), "train").unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].meta, clips[0].meta);
        let bits = |f: &FlowField| f.tensor().to_vec().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(back[0].flow(2).unwrap()), bits(clips[0].flow(2).unwrap()));
        assert_eq!(back[0].masks.as_ref().unwrap()[0].tensor().to_vec(), clips[0].masks.as_ref().unwrap()[0].tensor().to_vec());
    }

    #[test]
    fn degraded_clips_keep_clean_frames() {
        let dir = tempfile::tempdir().unwrap();
        let p = BoxNoiseParams { scene: TriangleParams { count: 1, ..BoxNoiseParams::default().scene }, ..Default::default() };
        let clips = gen_boxnoise_toy(&p).unwrap();
        write_corpus(dir.path(), "test", &clips).unwrap();
        let back = read_corpus(dir.path(), "test").unwrap();
        assert_eq!(back[0].len(), 7);
        assert_eq!(back[0].clean.as_ref().unwrap().len(), 7);
        assert!(dir.path().join("test/00000/flow_41.flo").exists());
    }

    #[test]
    fn regeneration_is_hash_identical() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let p = TriangleParams { count: 3, seed: 11, ..Default::default() };
        write_corpus(a.path(), "train", &gen_triangle_toy(&p).unwrap()).unwrap();
        write_corpus(b.path(), "train", &gen_triangle_toy(&p).unwrap()).unwrap();
        assert_eq!(hash_dir(a.path()).unwrap(), hash_dir(b.path()).unwrap());
        let c = tempfile::tempdir().unwrap();
        write_corpus(c.path(), "train", &gen_triangle_toy(&TriangleParams { seed: 12, ..p }).unwrap()).unwrap();
        assert_ne!(hash_dir(a.path()).unwrap(), hash_dir(c.path()).unwrap());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn flo_round_trip_any_values(h in 1usize..6, w in 1usize..6, seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let d: Vec<f32> = (0..2 * h * w).map(|_| rng.random_range(-1e4f32..1e4)).collect();
            let f = FlowField::new(Tensor::from_vec(&[2, h, w], d.clone()).unwrap()).unwrap();
            let mut buf = Vec::new();
            write_flo(&mut buf, &f).unwrap();
            let g = read_flo(buf.as_slice()).unwrap();
            prop_assert_eq!(g.tensor().to_vec().iter().map(|v| v.to_bits()).collect::<Vec<_>>(), d.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        }
    }
}
